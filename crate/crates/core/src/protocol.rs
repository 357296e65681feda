//! Half-duplex activation schedules.
//!
//! A [`PathColoring`] assigns slot sets `A_ij` (0-based slots of a cycle of
//! length N) to the j-th edge of the i-th backbone path, independent of any
//! concrete network. [`PathColoring::bind`] turns it into a [`Schedule`] on a
//! network whose activations are keyed by directed node pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use num::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{propagate, FadingRealization, PropagateOptions, Reception};
use crate::dmt::{q, Q};
use crate::netgraph::{
    classify, edge_disjoint_paths, forward_paths, Classification, Family, Network, PathSet, Role,
};
use crate::Error;

pub type SlotSet = BTreeSet<usize>;

/// Abstract coloring of K paths given only their lengths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathColoring {
    pub cycle_length: usize,
    /// `sets[i][j]` is the slot set of edge j on path i.
    pub sets: Vec<Vec<SlotSet>>,
    /// Extra per-relay waiting time, indexed by (path, relay position
    /// 1..n_i-1); empty when no delays were inserted.
    #[serde(default)]
    pub delays: Vec<Vec<usize>>,
}

fn single(slot: usize) -> SlotSet {
    BTreeSet::from([slot])
}

impl PathColoring {
    fn from_single(cycle_length: usize, slots: Vec<Vec<usize>>) -> Self {
        PathColoring {
            cycle_length,
            sets: slots.into_iter().map(|p| p.into_iter().map(single).collect()).collect(),
            delays: Vec::new(),
        }
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.sets.iter().map(|p| p.len()).collect()
    }

    /// Binds path i of the coloring to `paths.paths[i]` of the network.
    pub fn bind(&self, net: &Network, paths: &PathSet) -> Result<Schedule, Error> {
        if paths.len() != self.sets.len() {
            return Err(Error::ScheduleMismatch("path count differs from coloring".into()));
        }
        let mut activations: BTreeMap<(usize, usize), SlotSet> = BTreeMap::new();
        let mut added_delays = BTreeMap::new();
        for (i, p) in paths.paths.iter().enumerate() {
            if p.len() - 1 != self.sets[i].len() {
                return Err(Error::ScheduleMismatch(format!("path {} length differs", i + 1)));
            }
            for (j, w) in p.windows(2).enumerate() {
                if !net.has_edge(w[0], w[1]) {
                    return Err(Error::ScheduleMismatch(format!(
                        "missing edge {} -> {}",
                        net.id(w[0]),
                        net.id(w[1])
                    )));
                }
                activations.entry((w[0], w[1])).or_default().extend(self.sets[i][j].iter().copied());
            }
            if let Some(ds) = self.delays.get(i) {
                for (pos, &d) in ds.iter().enumerate() {
                    if d > 0 {
                        added_delays.insert(p[pos + 1], d);
                    }
                }
            }
        }
        let path_counts = self.sets.iter().map(|s| s[0].len()).collect();
        let mut sched = Schedule {
            cycle_length: self.cycle_length,
            cycles: 1,
            activations,
            path_counts,
            paths: paths.paths.clone(),
            added_delays,
            steady_state_delay: 0,
            direct_link_mode: DirectLinkMode::None,
        };
        sched.steady_state_delay = sched.natural_steady_state_delay();
        sched.cycles = default_cycles(&sched);
        Ok(sched)
    }
}

/// Enough cycles to fill the pipeline and then run as many in steady state.
fn default_cycles(s: &Schedule) -> usize {
    let n = s.cycle_length.max(1);
    2 * s.steady_state_delay.div_ceil(n).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DirectLinkMode {
    #[default]
    None,
    BufferedKppD,
}

/// Periodic activation plan on a concrete network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub cycle_length: usize,
    /// Number of cycles a simulation runs by default.
    pub cycles: usize,
    /// Directed node pair -> slots (mod cycle_length) in which it is live.
    pub activations: BTreeMap<(usize, usize), SlotSet>,
    /// Symbols each path carries per cycle.
    pub path_counts: Vec<usize>,
    /// Node sequences of the paths the schedule was built around.
    pub paths: Vec<Vec<usize>>,
    /// Per-relay delay d: a sample received in slot t may leave the relay no
    /// earlier than slot t + 1 + d.
    pub added_delays: BTreeMap<usize, usize>,
    pub steady_state_delay: usize,
    pub direct_link_mode: DirectLinkMode,
}

impl Schedule {
    /// Source-to-sink delay of each path: slots from the source's transmission
    /// to the sink's reception along the path's own activations.
    pub fn path_delays(&self) -> Vec<usize> {
        let n = self.cycle_length;
        self.paths
            .iter()
            .map(|p| {
                let mut t = match self.activations.get(&(p[0], p[1])).and_then(|s| s.first()) {
                    Some(&s) => s,
                    None => return 0,
                };
                let start = t;
                for w in p.windows(2).skip(1) {
                    let slots = match self.activations.get(&(w[0], w[1])) {
                        Some(s) => s,
                        None => return 0,
                    };
                    let d = self.added_delays.get(&w[0]).copied().unwrap_or(0);
                    let earliest = t + 1 + d;
                    t = (earliest..earliest + n).find(|x| slots.contains(&(x % n))).unwrap_or(earliest);
                }
                t - start + 1
            })
            .collect()
    }

    /// Maximum path delay rounded up to whole cycles.
    pub fn natural_steady_state_delay(&self) -> usize {
        let n = self.cycle_length.max(1);
        let d = self.path_delays().into_iter().max().unwrap_or(0);
        d.div_ceil(n) * n
    }

    pub fn rate(&self) -> Q {
        q(self.path_counts.iter().sum::<usize>() as i128, self.cycle_length as i128)
    }

    pub fn to_toml(&self, net: &Network) -> String {
        let file = ScheduleFile {
            cycle_length: self.cycle_length,
            cycles: self.cycles,
            steady_state_delay: self.steady_state_delay,
            direct_link_mode: self.direct_link_mode,
            path_counts: self.path_counts.clone(),
            paths: self
                .paths
                .iter()
                .map(|p| p.iter().map(|&v| net.id(v).to_string()).collect())
                .collect(),
            activation: self
                .activations
                .iter()
                .map(|(&(u, v), slots)| ActivationEntry {
                    tail: net.id(u).to_string(),
                    head: net.id(v).to_string(),
                    slots: slots.iter().copied().collect(),
                })
                .collect(),
            delay: self
                .added_delays
                .iter()
                .map(|(&v, &d)| DelayEntry { node: net.id(v).to_string(), slots: d })
                .collect(),
        };
        toml::to_string(&file).expect("schedule serialises")
    }

    pub fn from_toml(net: &Network, text: &str) -> Result<Schedule, Error> {
        let f: ScheduleFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let idx = |id: &str| {
            net.node_index(id).ok_or_else(|| Error::Parse(format!("unknown node {id}")))
        };
        let mut activations = BTreeMap::new();
        for a in &f.activation {
            activations.insert((idx(&a.tail)?, idx(&a.head)?), a.slots.iter().copied().collect());
        }
        let mut added_delays = BTreeMap::new();
        for d in &f.delay {
            added_delays.insert(idx(&d.node)?, d.slots);
        }
        let mut paths = Vec::new();
        for p in &f.paths {
            paths.push(p.iter().map(|id| idx(id)).collect::<Result<Vec<_>, _>>()?);
        }
        Ok(Schedule {
            cycle_length: f.cycle_length,
            cycles: f.cycles,
            activations,
            path_counts: f.path_counts,
            paths,
            added_delays,
            steady_state_delay: f.steady_state_delay,
            direct_link_mode: f.direct_link_mode,
        })
    }

    pub fn save(&self, net: &Network, path: &Path) -> Result<(), Error> {
        std::fs::write(path, self.to_toml(net)).map_err(|e| Error::Io(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    cycle_length: usize,
    cycles: usize,
    steady_state_delay: usize,
    direct_link_mode: DirectLinkMode,
    path_counts: Vec<usize>,
    paths: Vec<Vec<String>>,
    #[serde(default)]
    activation: Vec<ActivationEntry>,
    #[serde(default)]
    delay: Vec<DelayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ActivationEntry {
    tail: String,
    head: String,
    slots: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct DelayEntry {
    node: String,
    slots: usize,
}

/// Outcome of checking a coloring against the orthogonal-protocol constraints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OrthogonalReport {
    /// First-edge slot sets pairwise disjoint across paths.
    pub first_edges_disjoint: bool,
    /// Last-edge slot sets pairwise disjoint across paths.
    pub last_edges_disjoint: bool,
    /// Consecutive edges of a path never share a slot.
    pub half_duplex: bool,
    /// Every edge of a path is live equally often.
    pub equal_counts: bool,
    /// (path, relay position) pairs where a relay receives while the node two
    /// hops downstream transmits.
    pub backflow_sites: Vec<(usize, usize)>,
    pub path_counts: Vec<usize>,
    pub rate: Q,
}

impl OrthogonalReport {
    pub fn valid(&self) -> bool {
        self.first_edges_disjoint && self.last_edges_disjoint && self.half_duplex && self.equal_counts
    }

    pub fn backflow_free(&self) -> bool {
        self.backflow_sites.is_empty()
    }
}

fn pairwise_disjoint(sets: &[&SlotSet]) -> bool {
    let mut seen = BTreeSet::new();
    for s in sets {
        for &x in *s {
            if !seen.insert(x) {
                return false;
            }
        }
    }
    true
}

pub fn validate_coloring(c: &PathColoring) -> OrthogonalReport {
    let firsts: Vec<&SlotSet> = c.sets.iter().map(|p| &p[0]).collect();
    let lasts: Vec<&SlotSet> = c.sets.iter().map(|p| p.last().unwrap()).collect();
    let half_duplex = c
        .sets
        .iter()
        .all(|p| p.windows(2).all(|w| w[0].is_disjoint(&w[1])));
    let equal_counts = c.sets.iter().all(|p| p.iter().all(|s| s.len() == p[0].len()));
    let mut backflow_sites = Vec::new();
    for (i, p) in c.sets.iter().enumerate() {
        for j in 0..p.len().saturating_sub(2) {
            if !p[j].is_disjoint(&p[j + 2]) {
                // relay j+1 receives on edge j while relay j+2 sends on edge j+2
                backflow_sites.push((i, j + 1));
            }
        }
    }
    let path_counts: Vec<usize> = c.sets.iter().map(|p| p[0].len()).collect();
    let rate = q(path_counts.iter().sum::<usize>() as i128, c.cycle_length as i128);
    OrthogonalReport {
        first_edges_disjoint: pairwise_disjoint(&firsts),
        last_edges_disjoint: pairwise_disjoint(&lasts),
        half_duplex,
        equal_counts,
        backflow_sites,
        path_counts,
        rate,
    }
}

/// Reads the backbone coloring out of a bound schedule and validates it.
pub fn validate_orthogonal(net: &Network, sched: &Schedule) -> Result<OrthogonalReport, Error> {
    let class = classify(net)?;
    let backbone = class
        .backbone
        .ok_or_else(|| Error::ScheduleMismatch("network has no KPP backbone".into()))?;
    let mut used = BTreeSet::new();
    let mut sets = Vec::new();
    for p in &backbone.paths {
        let mut path_sets = Vec::new();
        for w in p.windows(2) {
            let s = sched.activations.get(&(w[0], w[1])).cloned().unwrap_or_default();
            used.insert((w[0], w[1]));
            path_sets.push(s);
        }
        sets.push(path_sets);
    }
    for (pair, slots) in &sched.activations {
        let direct = (pair.0 == net.source() && pair.1 == net.sink())
            || (pair.1 == net.source() && pair.0 == net.sink());
        if !used.contains(pair) && !direct && !slots.is_empty() {
            return Err(Error::ScheduleMismatch(format!(
                "activation {} -> {} is not on the backbone",
                net.id(pair.0),
                net.id(pair.1)
            )));
        }
    }
    Ok(validate_coloring(&PathColoring { cycle_length: sched.cycle_length, sets, delays: Vec::new() }))
}

/// Rate-1 coloring for K >= 4 paths: path i cycles through slots i, i+1, i+2
/// and uses slot i+3 on its last edge.
pub fn color_kpp_general(k: usize, lengths: &[usize]) -> Result<PathColoring, Error> {
    if k < 4 || lengths.len() != k {
        return Err(Error::Precondition("color_kpp_general needs K >= 4 lengths".into()));
    }
    if lengths.iter().any(|&n| n < 2) {
        return Err(Error::Precondition("path lengths must be at least 2".into()));
    }
    let slots = lengths
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            (0..n)
                .map(|j| if j == n - 1 { (i + 3) % k } else { (i + j % 3) % k })
                .collect()
        })
        .collect();
    Ok(PathColoring::from_single(k, slots))
}

/// Rate-1 coloring for three paths. Paths whose length is 1 mod 3 are the
/// delicate ones; with exactly two of them one back-flow is unavoidable.
pub fn color_kpp_three(lengths: &[usize]) -> Result<PathColoring, Error> {
    if lengths.len() != 3 || lengths.iter().any(|&n| n < 2) {
        return Err(Error::Precondition("color_kpp_three needs three lengths >= 2".into()));
    }
    // paths with n = 1 mod 3 first, stable otherwise
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by_key(|&i| if lengths[i] % 3 == 1 { 0 } else { 1 });
    let n: Vec<usize> = order.iter().map(|&i| lengths[i]).collect();
    let l = n.iter().filter(|&&x| x % 3 == 1).count();

    // colors 1..=3 as in the usual presentation, converted to slots at the end
    let cyc = |i: usize| ((i - 1) % 3) + 1;
    let pattern = |g: [usize; 3], len: usize| -> Vec<usize> { (0..len).map(|j| g[j % 3]).collect() };
    let mut colors: Vec<Vec<usize>> = Vec::new();
    match l {
        0 => {
            for (idx, &len) in n.iter().enumerate() {
                let i = idx + 1;
                let g = if len % 3 == 0 {
                    [i, cyc(i + 2), cyc(i + 1)]
                } else {
                    [i, cyc(i + 1), cyc(i + 2)]
                };
                colors.push(pattern(g, len));
            }
        }
        1 => {
            colors.push(pattern([1, 2, 3], n[0]));
            colors.push(pattern(if n[1].is_multiple_of(3) { [2, 1, 3] } else { [2, 3, 1] }, n[1]));
            colors.push(pattern(if n[2].is_multiple_of(3) { [3, 1, 2] } else { [3, 2, 1] }, n[2]));
        }
        3 => {
            for (idx, &len) in n.iter().enumerate() {
                let i = idx + 1;
                colors.push(pattern([i, cyc(i + 1), cyc(i + 2)], len));
            }
        }
        _ => {
            colors.push(pattern([1, 2, 3], n[0]));
            colors.push(pattern([2, 3, 1], n[1]));
            let mut p3 = pattern([3, 1, 2], n[2]);
            let last = p3.len() - 1;
            p3[last] = 3;
            if n[2] % 3 == 2 {
                p3[last - 1] = 1;
            }
            colors.push(p3);
        }
    }
    let mut slots = vec![Vec::new(); 3];
    for (pos, &orig) in order.iter().enumerate() {
        slots[orig] = colors[pos].iter().map(|c| c - 1).collect();
    }
    let coloring = PathColoring::from_single(3, slots);
    let report = validate_coloring(&coloring);
    if report.valid() {
        return Ok(coloring);
    }
    // The literal modification breaks first-edge disjointness when the third
    // path has length 2; fall back to a minimum back-flow search.
    min_backflow_three(lengths)
}

/// Rate-1, single-slot-per-edge coloring of three paths minimising back-flow,
/// by dynamic programming per path for each choice of first and last slots.
fn min_backflow_three(lengths: &[usize]) -> Result<PathColoring, Error> {
    let perms: Vec<[usize; 3]> =
        vec![[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut best: Option<(usize, Vec<Vec<usize>>)> = None;
    for first in &perms {
        for last in &perms {
            let mut total = 0;
            let mut paths = Vec::new();
            let mut ok = true;
            for i in 0..3 {
                match best_path(lengths[i], first[i], last[i]) {
                    Some((cost, seq)) => {
                        total += cost;
                        paths.push(seq);
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok && best.as_ref().map(|b| total < b.0).unwrap_or(true) {
                best = Some((total, paths));
            }
        }
    }
    let (_, slots) = best.ok_or_else(|| Error::Precondition("no rate-1 coloring of three paths".into()))?;
    Ok(PathColoring::from_single(3, slots))
}

/// Cheapest 3-slot sequence of the given length with fixed end points,
/// consecutive slots distinct, counting j / j+2 coincidences.
fn best_path(len: usize, first: usize, last: usize) -> Option<(usize, Vec<usize>)> {
    if len == 1 {
        return (first == last).then(|| (0, vec![first]));
    }
    // state (prev, cur) -> (cost, sequence)
    let mut states: BTreeMap<(usize, usize), (usize, Vec<usize>)> = BTreeMap::new();
    for c in 0..3 {
        if c != first {
            states.insert((first, c), (0, vec![first, c]));
        }
    }
    for _ in 2..len {
        let mut next: BTreeMap<(usize, usize), (usize, Vec<usize>)> = BTreeMap::new();
        for (&(a, b), (cost, seq)) in &states {
            for c in 0..3 {
                if c == b {
                    continue;
                }
                let nc = cost + usize::from(c == a);
                let entry = next.entry((b, c));
                let mut s = seq.clone();
                s.push(c);
                match entry {
                    std::collections::btree_map::Entry::Vacant(v) => {
                        v.insert((nc, s));
                    }
                    std::collections::btree_map::Entry::Occupied(mut o) => {
                        if nc < o.get().0 {
                            o.insert((nc, s));
                        }
                    }
                }
            }
        }
        states = next;
    }
    states
        .into_iter()
        .filter(|((_, b), _)| *b == last)
        .map(|(_, v)| v)
        .min_by_key(|v| v.0)
}

/// Maximum-rate orthogonal coloring of two paths. The two paths form a cycle
/// of n1 + n2 edges; with an even cycle two alternating slots give rate 1,
/// with an odd cycle two pointer sweeps over 2·n2 slots give rate
/// (2n2 - 1) / (2n2).
pub fn color_kpp_two(lengths: &[usize]) -> Result<PathColoring, Error> {
    if lengths.len() != 2 || lengths.iter().any(|&n| n < 2) {
        return Err(Error::Precondition("color_kpp_two needs two lengths >= 2".into()));
    }
    let swap = lengths[0] > lengths[1];
    let (n1, n2) = if swap { (lengths[1], lengths[0]) } else { (lengths[0], lengths[1]) };
    let total = n1 + n2;
    // d[j] for cycle edge j in 1..=total
    let mut d: Vec<SlotSet> = vec![BTreeSet::new(); total + 1];
    let n_slots;
    if total % 2 == 0 {
        n_slots = 2;
        for (j, s) in d.iter_mut().enumerate().skip(1) {
            s.insert((j - 1) % 2);
        }
    } else {
        n_slots = 2 * n2;
        let l = total as isize;
        let idx = |j: isize| -> usize {
            let r = j.rem_euclid(l);
            if r == 0 {
                total
            } else {
                r as usize
            }
        };
        let mut t = 0usize;
        for k in 1..=n2 as isize {
            let mut i = 1isize;
            while i < l - 1 {
                d[idx(i - k + 1)].insert(t);
                i += 2;
            }
            t += 1;
        }
        for k in 1..=n2 as isize {
            let mut i = 1isize;
            while i < l - 1 {
                d[idx(l - (k - 1) - i)].insert(t);
                i += 2;
            }
            t += 1;
        }
    }
    let p1: Vec<SlotSet> = (1..=n1).map(|j| d[j].clone()).collect();
    let p2: Vec<SlotSet> = (1..=n2).map(|j| d[total + 1 - j].clone()).collect();
    let sets = if swap { vec![p2, p1] } else { vec![p1, p2] };
    Ok(PathColoring { cycle_length: n_slots, sets, delays: Vec::new() })
}

/// Maximum orthogonal rate for two paths.
pub fn k2_max_rate(n1: usize, n2: usize) -> Q {
    let n2 = n1.max(n2) as i128;
    if (n1 as i128 + n2) % 2 == 0 {
        q(1, 1)
    } else {
        q(2 * n2 - 1, 2 * n2)
    }
}

/// Continuous activation on a (K, L) regular network: edge j of path i is
/// live in slot (i + j) mod K.
pub fn color_regular(k: usize, l: usize) -> Result<PathColoring, Error> {
    if k < 2 || l < 1 {
        return Err(Error::Precondition("color_regular needs K >= 2, L >= 1".into()));
    }
    let slots = (0..k).map(|i| (0..=l).map(|j| (i + j) % k).collect()).collect();
    Ok(PathColoring::from_single(k, slots))
}

/// Lexicographically smallest complete matching of left vertices to right
/// vertices, by backtracking.
pub fn lex_smallest_matching(adj: &[Vec<usize>], n_right: usize) -> Option<Vec<usize>> {
    fn rec(i: usize, adj: &[Vec<usize>], used: &mut [bool], out: &mut Vec<usize>) -> bool {
        if i == adj.len() {
            return true;
        }
        let mut opts = adj[i].clone();
        opts.sort();
        for r in opts {
            if !used[r] {
                used[r] = true;
                out.push(r);
                if rec(i + 1, adj, used, out) {
                    return true;
                }
                out.pop();
                used[r] = false;
            }
        }
        false
    }
    let mut used = vec![false; n_right];
    let mut out = Vec::new();
    rec(0, adj, &mut used, &mut out).then_some(out)
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for x in 0..used.len() {
            if !used[x] {
                used[x] = true;
                cur.push(x);
                rec(cur, used, out);
                cur.pop();
                used[x] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Almost-continuous activation: path i starts in slot i, its first relay picks
/// a slot, and every later relay forwards in the next slot (plus its delay).
/// The last-edge slots are a complete matching avoiding, for each path, the
/// one slot that would force its first relay to send while receiving.
///
/// `delays[i][p]` is the extra wait at relay p+1 of path i (relay 1's entry is
/// ignored since its timing is set by the matching).
pub fn almost_continuous_schedule(
    k: usize,
    lengths: &[usize],
    delays: Option<&[Vec<usize>]>,
) -> Result<PathColoring, Error> {
    if k < 3 || lengths.len() != k {
        return Err(Error::Precondition("almost-continuous activation needs K >= 3".into()));
    }
    if lengths.iter().any(|&n| n < 2) {
        return Err(Error::Precondition("path lengths must be at least 2".into()));
    }
    let zero: Vec<Vec<usize>> = lengths.iter().map(|&n| vec![0; n - 1]).collect();
    let delays = delays.unwrap_or(&zero);
    for (i, ds) in delays.iter().enumerate() {
        if ds.len() != lengths[i] - 1 {
            return Err(Error::Precondition("delay vector length must equal relay count".into()));
        }
        if ds.iter().skip(1).any(|&d| (d + 1) % k == 0) {
            return Err(Error::Precondition("a delay of d with d + 1 = 0 mod K breaks half duplex".into()));
        }
    }
    let shift: Vec<usize> = delays.iter().map(|ds| ds.iter().skip(1).sum()).collect();
    for start in permutations(k) {
        let adj: Vec<Vec<usize>> = (0..k)
            .map(|i| {
                let forbidden = (start[i] + lengths[i] + shift[i] + 2 * k - 2) % k;
                (0..k).filter(|&c| c != forbidden).collect()
            })
            .collect();
        if let Some(last) = lex_smallest_matching(&adj, k) {
            let mut slots = Vec::new();
            for i in 0..k {
                let n = lengths[i];
                // slot of edge 1 such that the last edge lands on last[i]
                let m = (last[i] + 2 * k * (n + shift[i] + 1) - (n - 2) - shift[i]) % k;
                let mut seq = vec![start[i], m];
                let mut cur = m;
                for p in 2..n {
                    cur = (cur + 1 + delays[i][p - 1]) % k;
                    seq.push(cur);
                }
                seq.truncate(n);
                slots.push(seq);
            }
            let mut c = PathColoring::from_single(k, slots);
            c.delays = delays.to_vec();
            for ds in &mut c.delays {
                if let Some(d0) = ds.first_mut() {
                    *d0 = 0;
                }
            }
            return Ok(c);
        }
    }
    Err(Error::NoMatching("no start-slot permutation admits a complete matching".into()))
}

/// Per-path result of the causal-interference check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CausalPathReport {
    /// No copy of the path's symbol reaches the sink before the backbone copy.
    pub condition1: bool,
    /// The backbone copy is the only contribution arriving at that time.
    pub condition2: bool,
    pub backbone_arrival: Option<usize>,
    pub earliest_arrival: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CausalReport {
    pub paths: Vec<CausalPathReport>,
}

impl CausalReport {
    pub fn passes(&self) -> bool {
        self.paths.iter().all(|p| p.condition1 && p.condition2)
    }
}

/// Timing check of interference on a KPP(I) network under a schedule.
///
/// For each backbone path, one symbol sent into that path is followed through
/// the time-expanded network with the same forwarding rule as the channel
/// model. Condition 1 asks that nothing reaches the sink before the backbone
/// copy; condition 2 asks that the backbone copy arrives alone.
pub fn check_causal_interference(net: &Network, sched: &Schedule) -> Result<CausalReport, Error> {
    let n = sched.cycle_length;
    let longest: usize = sched.path_delays().into_iter().max().unwrap_or(0)
        + sched.added_delays.values().sum::<usize>();
    let cycles = longest.div_ceil(n) + 3;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let fading = FadingRealization::rayleigh(net, &mut rng);
    let opts = PropagateOptions { cycles, reception: Reception::Broadcast, track_support: false };
    let full = propagate(net, sched, &fading, opts)?;
    let backbone = propagate(net, sched, &fading, PropagateOptions { reception: Reception::ScheduledOnly, ..opts })?;

    let mut reports = Vec::new();
    for (i, p) in sched.paths.iter().enumerate() {
        let first_slot = sched.activations.get(&(p[0], p[1])).and_then(|s| s.first()).copied();
        let Some(t0) = first_slot else {
            reports.push(CausalPathReport {
                condition1: false,
                condition2: false,
                backbone_arrival: None,
                earliest_arrival: None,
            });
            continue;
        };
        let arrival = |tm: &crate::channel::TransferModel| -> Option<(usize, usize)> {
            let col = tm.input_slots.iter().position(|&s| s == t0)?;
            (0..tm.h.nrows()).find(|&r| !tm.h[(r, col)].is_zero()).map(|r| (tm.output_slots[r], r))
        };
        let bb = arrival(&backbone);
        let first = arrival(&full);
        let g = full.reference[i];
        let (c1, c2) = match (bb, first) {
            (Some((tb, _)), Some((tf, _))) => {
                let c1 = tf >= tb;
                let col = full.input_slots.iter().position(|&s| s == t0).unwrap();
                let row = full.output_slots.iter().position(|&s| s == tb);
                let c2 = row
                    .map(|r| (full.h[(r, col)] - g).norm() <= 1e-9 * g.norm().max(1e-300))
                    .unwrap_or(false);
                (c1, c2)
            }
            _ => (false, false),
        };
        reports.push(CausalPathReport {
            condition1: c1,
            condition2: c2,
            backbone_arrival: bb.map(|x| x.0),
            earliest_arrival: first.map(|x| x.0),
        });
    }
    Ok(CausalReport { paths: reports })
}

fn require_backbone(net: &Network) -> Result<(Classification, PathSet), Error> {
    let class = classify(net)?;
    let bb = class
        .backbone
        .clone()
        .ok_or_else(|| Error::Precondition("network has no KPP backbone".into()))?;
    Ok((class, bb))
}

/// Delay search for three-path networks with interference: delays are tried in
/// order of increasing total, each relay's delay bounded by `bound` (default
/// twice the longest path).
pub fn balance_delays_kpp3(net: &Network, bound: Option<usize>) -> Result<Vec<Vec<usize>>, Error> {
    let (_, bb) = require_backbone(net)?;
    if bb.len() != 3 {
        return Err(Error::Precondition("delay balancing needs K = 3".into()));
    }
    balance_delays_on(net, &bb, bound)
}

fn balance_delays_on(net: &Network, bb: &PathSet, bound: Option<usize>) -> Result<Vec<Vec<usize>>, Error> {
    let k = bb.len();
    let lengths = bb.lengths();
    let bound = bound.unwrap_or(2 * lengths.iter().copied().max().unwrap_or(1));
    // relays whose delay is free: positions 2..n_i-1 of each path
    let slots: Vec<(usize, usize)> = lengths
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (1..n - 1).map(move |p| (i, p)))
        .collect();
    let allowed: Vec<usize> = (0..=bound).filter(|d| (d + 1) % k != 0).collect();
    let try_delays = |ds: &Vec<Vec<usize>>| -> Result<bool, Error> {
        let c = almost_continuous_schedule(k, &lengths, Some(ds))?;
        let s = c.bind(net, bb)?;
        Ok(check_causal_interference(net, &s)?.passes())
    };
    let max_total = bound * slots.len();
    let mut checks = 0usize;
    const BUDGET: usize = 20_000;
    for total in 0..=max_total {
        let mut found = None;
        let mut cur = vec![0usize; slots.len()];
        // enumerate assignments of allowed values summing to `total`
        fn rec(
            pos: usize,
            remaining: usize,
            allowed: &[usize],
            cur: &mut Vec<usize>,
            visit: &mut dyn FnMut(&[usize]) -> Result<bool, Error>,
        ) -> Result<bool, Error> {
            if pos == cur.len() {
                return if remaining == 0 { visit(cur) } else { Ok(false) };
            }
            for &d in allowed {
                if d > remaining {
                    break;
                }
                cur[pos] = d;
                if rec(pos + 1, remaining - d, allowed, cur, visit)? {
                    return Ok(true);
                }
            }
            cur[pos] = 0;
            Ok(false)
        }
        let mut visit = |assign: &[usize]| -> Result<bool, Error> {
            checks += 1;
            if checks > BUDGET {
                return Err(Error::SearchExhausted(format!("no delays found within {BUDGET} checks")));
            }
            let mut ds: Vec<Vec<usize>> = lengths.iter().map(|&n| vec![0; n - 1]).collect();
            for (&(i, p), &d) in slots.iter().zip(assign) {
                ds[i][p] = d;
            }
            if try_delays(&ds)? {
                found = Some(ds);
                return Ok(true);
            }
            Ok(false)
        };
        if rec(0, total, &allowed, &mut cur, &mut visit)? {
            return Ok(found.unwrap());
        }
        if slots.is_empty() {
            break;
        }
    }
    Err(Error::SearchExhausted(format!("no delays up to {bound} per relay give causal interference")))
}

/// Schedule for KPP(I) networks. With three paths this is the delay-balanced
/// almost-continuous schedule; with more, every 3-path subnetwork is scheduled
/// in turn for `block_cycles` cycles.
pub fn kpp_i_schedule(net: &Network, block_cycles: usize) -> Result<Schedule, Error> {
    let (_, bb) = require_backbone(net)?;
    let k = bb.len();
    if k < 3 {
        return Err(Error::Precondition("KPP(I) schedule needs K >= 3".into()));
    }
    if k == 3 {
        let ds = balance_delays_on(net, &bb, None)?;
        let c = almost_continuous_schedule(3, &bb.lengths(), Some(&ds))?;
        return c.bind(net, &bb);
    }
    let triples = kpp_i_subnetworks(k);
    let block = 3 * block_cycles.max(1);
    let mut activations: BTreeMap<(usize, usize), SlotSet> = BTreeMap::new();
    let mut added_delays: BTreeMap<usize, usize> = BTreeMap::new();
    let mut counts = vec![0usize; k];
    for (b, t) in triples.iter().enumerate() {
        let sub = PathSet { paths: t.iter().map(|&i| bb.paths[i].clone()).collect() };
        let ds = balance_delays_on(net, &sub, None)?;
        let c = almost_continuous_schedule(3, &sub.lengths(), Some(&ds))?;
        let s = c.bind(net, &sub)?;
        for (pair, slots) in &s.activations {
            let e = activations.entry(*pair).or_default();
            for c0 in 0..block_cycles.max(1) {
                for &x in slots {
                    e.insert(b * block + c0 * 3 + x);
                }
            }
        }
        for (&v, &d) in &s.added_delays {
            if let Some(&prev) = added_delays.get(&v) {
                if prev != d {
                    return Err(Error::SearchExhausted(format!(
                        "relay {} needs different delays in different subnetworks",
                        net.id(v)
                    )));
                }
            }
            added_delays.insert(v, d);
        }
        for &i in t {
            counts[i] += block_cycles.max(1);
        }
    }
    let mut sched = Schedule {
        cycle_length: block * triples.len(),
        cycles: 1,
        activations,
        path_counts: counts,
        paths: bb.paths.clone(),
        added_delays,
        steady_state_delay: 0,
        direct_link_mode: DirectLinkMode::None,
    };
    sched.steady_state_delay = sched.natural_steady_state_delay();
    sched.cycles = default_cycles(&sched);
    Ok(sched)
}

/// All 3-subsets of K paths in lexicographic order.
pub fn kpp_i_subnetworks(k: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            for c in b + 1..k {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// Back-flow-free rate-1 coloring for K >= 3 paths, when one of the
/// constructions provides it.
pub fn backflow_free_coloring(lengths: &[usize]) -> Result<PathColoring, Error> {
    let k = lengths.len();
    let c = match k {
        0..=2 => return Err(Error::Precondition("need at least three paths".into())),
        3 => color_kpp_three(lengths)?,
        _ => color_kpp_general(k, lengths)?,
    };
    let r = validate_coloring(&c);
    if !r.valid() || !r.backflow_free() || r.rate != q(1, 1) {
        return Err(Error::Precondition("backbone has no back-flow-free rate-1 coloring".into()));
    }
    Ok(c)
}

/// Orthogonal schedule for a KPP family network, dispatching on K.
pub fn kpp_coloring(lengths: &[usize]) -> Result<PathColoring, Error> {
    match lengths.len() {
        0 => Err(Error::Precondition("no paths".into())),
        1 => Ok(PathColoring::from_single(2, vec![(0..lengths[0]).map(|j| j % 2).collect()])),
        2 => color_kpp_two(lengths),
        3 => color_kpp_three(lengths),
        k => color_kpp_general(k, lengths),
    }
}

/// KPP(D): the backbone runs a back-flow-free rate-1 schedule, the source also
/// sends every symbol over the direct link, and each end relay holds its
/// samples so that every relayed copy reaches the sink exactly D slots after
/// the direct copy.
pub fn kpp_d_schedule(net: &Network) -> Result<Schedule, Error> {
    let (class, bb) = require_backbone(net)?;
    if !class.direct_link {
        return Err(Error::Precondition("network has no direct link".into()));
    }
    let k = bb.len();
    if k < 3 {
        return Err(Error::Precondition("KPP(D) schedule needs K >= 3".into()));
    }
    let coloring = backflow_free_coloring(&bb.lengths())?;
    let mut sched = coloring.bind(net, &bb)?;
    let delays = sched.path_delays();
    let d = *delays.iter().max().unwrap();
    if delays.iter().any(|&x| (d - x) % k != 0) {
        return Err(Error::Precondition(
            "backbone paths reach the sink in different phases; no common delay exists".into(),
        ));
    }
    for (p, &x) in bb.paths.iter().zip(&delays) {
        if d > x {
            let end = p[p.len() - 2];
            *sched.added_delays.entry(end).or_insert(0) += d - x;
        }
    }
    let (s, t) = (net.source(), net.sink());
    if !net.has_edge(s, t) {
        return Err(Error::Precondition("direct link must run from source to sink".into()));
    }
    sched.activations.insert((s, t), (0..k).collect());
    sched.direct_link_mode = DirectLinkMode::BufferedKppD;
    sched.steady_state_delay = d;
    sched.cycles = 2 * d.div_ceil(k).max(1) + 1;
    Ok(sched)
}

/// Which full-duplex precondition failed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FdConditions {
    pub no_intermediate_direct_path: bool,
    pub acyclic: bool,
}

pub fn fd_conditions(net: &Network, paths: &PathSet) -> FdConditions {
    let mut chord = false;
    for p in &paths.paths {
        for a in 0..p.len() {
            for b in a + 2..p.len() {
                if net.has_edge(p[a], p[b]) || net.has_edge(p[b], p[a]) {
                    chord = true;
                }
            }
        }
    }
    FdConditions { no_intermediate_direct_path: !chord, acyclic: is_acyclic(net) }
}

fn is_acyclic(net: &Network) -> bool {
    let n = net.nodes().len();
    let mut indeg = vec![0usize; n];
    for e in net.edges() {
        indeg[e.head] += 1;
    }
    let mut stack: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = stack.pop() {
        seen += 1;
        for e in net.edges() {
            if e.tail == v {
                indeg[e.head] -= 1;
                if indeg[e.head] == 0 {
                    stack.push(e.head);
                }
            }
        }
    }
    seen == n
}

/// Full-duplex round robin over the M edge-disjoint paths: path p is live on
/// all its edges for T consecutive slots, shorter paths are padded with a delay
/// at their first relay, and the whole round of M·T slots repeats L times.
pub fn fd_schedule(net: &Network, t: usize, l: usize) -> Result<Schedule, Error> {
    if !net.all_full_duplex() {
        return Err(Error::Precondition("full-duplex schedule needs full-duplex relays".into()));
    }
    let paths = edge_disjoint_paths(net)?;
    if !net.all_single_antenna() {
        return Err(Error::Unsupported("expand multi-antenna nodes first".into()));
    }
    let cond = fd_conditions(net, &paths);
    if !cond.no_intermediate_direct_path && !cond.acyclic {
        return Err(Error::Precondition(
            "condition (1) fails: an edge-disjoint path has an intermediate direct path; \
             condition (2) fails: the network has a directed cycle"
                .into(),
        ));
    }
    let lens = paths.lengths();
    let dmax = *lens.iter().max().unwrap_or(&1);
    if t <= dmax {
        return Err(Error::Precondition(format!("period T = {t} must exceed the delay {dmax}")));
    }
    let m = paths.len();
    let mut activations: BTreeMap<(usize, usize), SlotSet> = BTreeMap::new();
    let mut added_delays = BTreeMap::new();
    for (pi, p) in paths.paths.iter().enumerate() {
        for w in p.windows(2) {
            activations.entry((w[0], w[1])).or_default().extend(pi * t..(pi + 1) * t);
        }
        let pad = dmax - lens[pi];
        if pad > 0 && p.len() > 2 {
            added_delays.insert(p[1], pad);
        }
    }
    Ok(Schedule {
        cycle_length: m * t,
        cycles: l.max(1),
        activations,
        path_counts: vec![t; m],
        paths: paths.paths.clone(),
        added_delays,
        steady_state_delay: dmax,
        direct_link_mode: DirectLinkMode::None,
    })
}

/// Forward paths of a fully connected layered network with the cyclic-shift
/// matching between them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayeredMatching {
    pub paths: PathSet,
    /// Relay index per relay layer for each path.
    pub tuples: Vec<Vec<usize>>,
    pub layer_sizes: Vec<usize>,
    /// `alpha[i]` is the partner of path i.
    pub alpha: Vec<usize>,
}

impl LayeredMatching {
    pub fn is_bijection(&self) -> bool {
        let set: BTreeSet<usize> = self.alpha.iter().copied().collect();
        set.len() == self.alpha.len() && self.alpha.iter().all(|&a| a < self.alpha.len())
    }

    pub fn fixed_point_free(&self) -> bool {
        self.alpha.iter().enumerate().all(|(i, &a)| i != a)
    }

    pub fn pairs_node_disjoint(&self) -> bool {
        self.alpha.iter().enumerate().all(|(i, &a)| {
            let p = &self.paths.paths[i];
            let q = &self.paths.paths[a];
            p[1..p.len() - 1].iter().all(|v| !q[1..q.len() - 1].contains(v))
        })
    }
}

pub fn layered_matching(net: &Network) -> Result<LayeredMatching, Error> {
    let class = classify(net)?;
    let layers = class.layering.clone().ok_or(Error::NotLayered)?;
    if !class.fully_connected {
        return Err(Error::NotFullyConnected);
    }
    let fwd = forward_paths(net)?;
    let relay_layers = &layers[1..layers.len() - 1];
    let layer_sizes: Vec<usize> = relay_layers.iter().map(|l| l.len()).collect();
    let tuples: Vec<Vec<usize>> = fwd
        .paths
        .iter()
        .map(|p| {
            p[1..p.len() - 1]
                .iter()
                .enumerate()
                .map(|(j, v)| relay_layers[j].iter().position(|x| x == v).unwrap())
                .collect()
        })
        .collect();
    let alpha = tuples
        .iter()
        .map(|b| {
            let shifted: Vec<usize> = b.iter().zip(&layer_sizes).map(|(&x, &r)| (x + 1) % r).collect();
            tuples.iter().position(|t| *t == shifted).expect("shifted tuple is a path")
        })
        .collect();
    Ok(LayeredMatching { paths: fwd, tuples, layer_sizes, alpha })
}

/// For each forward path P_i, a block of 2T slots running P_i and its partner
/// alpha(P_i) as a two-path regular network; blocks follow path order.
pub fn layered_matching_schedule(net: &Network, t: usize) -> Result<Schedule, Error> {
    let m = layered_matching(net)?;
    let t = t.max(1);
    let block = 2 * t;
    let n_paths = m.paths.len();
    let l = m.layer_sizes.len();
    let mut activations: BTreeMap<(usize, usize), SlotSet> = BTreeMap::new();
    let mut counts = vec![0usize; n_paths];
    for i in 0..n_paths {
        let pair = [i, m.alpha[i]];
        for (which, &pi) in pair.iter().enumerate() {
            let p = &m.paths.paths[pi];
            for (j, w) in p.windows(2).enumerate() {
                let e = activations.entry((w[0], w[1])).or_default();
                for c in 0..t {
                    e.insert(i * block + 2 * c + (which + j) % 2);
                }
            }
            counts[pi] += t;
        }
    }
    let _ = l;
    let mut sched = Schedule {
        cycle_length: block * n_paths,
        cycles: 1,
        activations,
        path_counts: counts,
        paths: m.paths.paths.clone(),
        added_delays: BTreeMap::new(),
        steady_state_delay: 0,
        direct_link_mode: DirectLinkMode::None,
    };
    sched.steady_state_delay = sched.natural_steady_state_delay();
    sched.cycles = 2;
    Ok(sched)
}

/// Picks the family's schedule for a network: the orthogonal coloring for KPP,
/// continuous activation for regular networks, buffering for KPP(D) and the
/// matching schedule for fully connected layered networks.
pub fn schedule_for(net: &Network) -> Result<Schedule, Error> {
    let class = classify(net)?;
    match class.family {
        Family::Kpp { .. } => {
            let bb = class.backbone.unwrap();
            kpp_coloring(&bb.lengths())?.bind(net, &bb)
        }
        Family::Regular { k, l } => {
            let bb = class.backbone.unwrap();
            color_regular(k, l)?.bind(net, &bb)
        }
        Family::KppD { k } => {
            let bb = class.backbone.unwrap();
            if k < 3 && bb.lengths().iter().all(|&n| n == 2) {
                slotted_af_schedule(net, if k == 1 { 2 } else { 2 * k + 1 })
            } else {
                kpp_d_schedule(net)
            }
        }
        Family::KppI { .. } => kpp_i_schedule(net, 2),
        Family::FullyConnectedLayered => layered_matching_schedule(net, 2),
        Family::Other if net.relays().is_empty() && net.has_edge(net.source(), net.sink()) => {
            Ok(direct_link_schedule(net))
        }
        other => Err(Error::Unsupported(format!("no schedule construction for family {other}"))),
    }
}

/// Source sends to the sink in every slot of a one-slot cycle.
pub fn direct_link_schedule(net: &Network) -> Schedule {
    let (s, t) = (net.source(), net.sink());
    Schedule {
        cycle_length: 1,
        cycles: 1,
        activations: BTreeMap::from([((s, t), single(0))]),
        path_counts: vec![1],
        paths: vec![vec![s, t]],
        added_delays: BTreeMap::new(),
        steady_state_delay: 1,
        direct_link_mode: DirectLinkMode::None,
    }
}

/// Non-orthogonal amplify-and-forward over a two-hop network with a direct
/// link and isolated relays: the source sends a fresh symbol in each of the M
/// slots of a frame, relays take turns listening and repeat what they heard in
/// the following slot.
pub fn slotted_af_schedule(net: &Network, frame: usize) -> Result<Schedule, Error> {
    let s = net.source();
    let t = net.sink();
    if !net.has_edge(s, t) {
        return Err(Error::Precondition("slotted AF needs a direct link".into()));
    }
    let relays: Vec<usize> = net.relays();
    if relays.is_empty() || frame < 2 {
        return Err(Error::Precondition("need at least one relay and two slots".into()));
    }
    for &r in &relays {
        if !net.has_edge(s, r) || !net.has_edge(r, t) {
            return Err(Error::Precondition("every relay must link source and sink".into()));
        }
    }
    let nr = relays.len();
    let mut activations: BTreeMap<(usize, usize), SlotSet> = BTreeMap::new();
    activations.insert((s, t), (0..frame).collect());
    for slot in 0..frame {
        // relay listening in this slot, and the one repeating the previous slot
        if slot + 1 < frame {
            let listen = relays[slot % nr];
            activations.entry((s, listen)).or_default().insert(slot);
        }
        if slot > 0 {
            let speak = relays[(slot - 1) % nr];
            activations.entry((speak, t)).or_default().insert(slot);
        }
    }
    // with a single relay the listening and speaking roles alternate
    if nr == 1 {
        let r = relays[0];
        let listen: SlotSet = (0..frame - 1).step_by(2).collect();
        let speak: SlotSet = (1..frame).step_by(2).collect();
        activations.insert((s, r), listen);
        activations.insert((r, t), speak);
    }
    let mut paths = vec![vec![s, t]];
    paths.extend(relays.iter().map(|&r| vec![s, r, t]));
    Ok(Schedule {
        cycle_length: frame,
        cycles: 1,
        activations,
        path_counts: vec![frame],
        paths,
        added_delays: BTreeMap::new(),
        steady_state_delay: 0,
        direct_link_mode: DirectLinkMode::None,
    })
}

/// Relays that never appear in any activation.
pub fn idle_relays(net: &Network, sched: &Schedule) -> Vec<usize> {
    let active: BTreeSet<usize> = sched.activations.keys().flat_map(|&(u, v)| [u, v]).collect();
    net.relays()
        .into_iter()
        .filter(|v| !active.contains(v) && net.nodes()[*v].role == Role::Relay)
        .collect()
}
