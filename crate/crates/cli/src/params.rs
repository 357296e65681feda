//! `--family-params` parsing and schedule selection.

use std::collections::BTreeMap;
use std::str::FromStr;

use relaynet::netgraph::Network;
use relaynet::protocol::{
    direct_link_schedule, fd_schedule, kpp_d_schedule, kpp_i_schedule, layered_matching_schedule, schedule_for,
    slotted_af_schedule, Schedule,
};
use relaynet::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Auto,
    SlottedAf,
    Fd,
    Layered,
    KppI,
    KppD,
    Direct,
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "auto" => Protocol::Auto,
            "slotted-af" => Protocol::SlottedAf,
            "fd" => Protocol::Fd,
            "layered" => Protocol::Layered,
            "kpp-i" => Protocol::KppI,
            "kpp-d" => Protocol::KppD,
            "direct" => Protocol::Direct,
            other => return Err(format!("unknown protocol '{other}'")),
        })
    }
}

/// Options shared by every command that builds a schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyParams {
    pub protocol: Protocol,
    pub frame: Option<usize>,
    pub t: usize,
    pub l: usize,
    pub block_cycles: usize,
    /// Overrides the number of cycles simulated.
    pub cycles: Option<usize>,
}

impl Default for FamilyParams {
    fn default() -> Self {
        FamilyParams { protocol: Protocol::Auto, frame: None, t: 2, l: 2, block_cycles: 2, cycles: None }
    }
}

fn positive(key: &str, v: &str) -> Result<usize, String> {
    match v.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("{key} must be a positive integer, got '{v}'")),
    }
}

impl FromStr for FamilyParams {
    type Err = String;

    /// `key=value` pairs separated by commas, e.g. `protocol=slotted-af,frame=5`.
    fn from_str(s: &str) -> Result<Self, String> {
        let mut p = FamilyParams::default();
        let mut seen = BTreeMap::new();
        for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            let (k, v) = item.split_once('=').ok_or_else(|| format!("expected key=value, got '{item}'"))?;
            let (k, v) = (k.trim(), v.trim());
            if seen.insert(k.to_string(), ()).is_some() {
                return Err(format!("{k} given twice"));
            }
            match k {
                "protocol" => p.protocol = v.parse()?,
                "frame" => p.frame = Some(positive(k, v)?),
                "t" => p.t = positive(k, v)?,
                "l" => p.l = positive(k, v)?,
                "block-cycles" => p.block_cycles = positive(k, v)?,
                "cycles" => p.cycles = Some(positive(k, v)?),
                other => return Err(format!("unknown family parameter '{other}'")),
            }
        }
        Ok(p)
    }
}

pub fn build_schedule(net: &Network, p: &FamilyParams) -> Result<Schedule, Error> {
    let mut sched = match p.protocol {
        Protocol::Auto => match p.frame {
            Some(m) => slotted_af_schedule(net, m),
            None => schedule_for(net),
        },
        Protocol::SlottedAf => {
            let m = p.frame.unwrap_or(2 * net.relays().len().max(1) + 1);
            slotted_af_schedule(net, m)
        }
        Protocol::Fd => fd_schedule(net, p.t, p.l),
        Protocol::Layered => layered_matching_schedule(net, p.t),
        Protocol::KppI => kpp_i_schedule(net, p.block_cycles),
        Protocol::KppD => kpp_d_schedule(net),
        Protocol::Direct => {
            if net.has_edge(net.source(), net.sink()) {
                Ok(direct_link_schedule(net))
            } else {
                Err(Error::Unsupported("network has no direct source-sink link".into()))
            }
        }
    }?;
    if let Some(c) = p.cycles {
        sched.cycles = c;
    }
    Ok(sched)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs() {
        let p: FamilyParams = "protocol=slotted-af, frame=5".parse().unwrap();
        assert_eq!(p.protocol, Protocol::SlottedAf);
        assert_eq!(p.frame, Some(5));
        assert_eq!("".parse::<FamilyParams>().unwrap(), FamilyParams::default());
    }

    #[test]
    fn rejects_bad_input() {
        assert!("frame=0".parse::<FamilyParams>().is_err());
        assert!("colour=red".parse::<FamilyParams>().is_err());
        assert!("t=2,t=3".parse::<FamilyParams>().is_err());
        assert!("protocol".parse::<FamilyParams>().is_err());
    }
}
