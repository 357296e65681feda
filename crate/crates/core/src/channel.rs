//! The linear channel induced by running an amplify-and-forward schedule over
//! a network for a given fading realization.
//!
//! Every relay reception is a linear combination of source symbols and relay
//! noise samples, so the whole run is built from unit probes: one coordinate per
//! source symbol and one per relay noise sample. The sink's receptions then give
//! the transfer matrix `H` (symbol coordinates) and the noise gain matrix `G`
//! (noise coordinates), with `Σ = I + G G†`.
//!
//! Relays forward their receptions in arrival order: each transmission sends
//! the oldest sample not yet forwarded, or nothing if none is pending.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use num::complex::Complex64;
use num::Zero;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::netgraph::{Duplex, Network, Role};
use crate::protocol::Schedule;
use crate::Error;

/// One complex gain per directed edge of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct FadingRealization {
    pub gains: Vec<Complex64>,
}

/// Unit-variance circularly symmetric complex Gaussian sample.
pub fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

impl FadingRealization {
    /// Independent Rayleigh gain on every directed edge.
    pub fn rayleigh<R: Rng + ?Sized>(net: &Network, rng: &mut R) -> Self {
        FadingRealization { gains: (0..net.edges().len()).map(|_| cn01(rng)).collect() }
    }

    /// Rayleigh gains shared between the two directions of every link.
    pub fn rayleigh_reciprocal<R: Rng + ?Sized>(net: &Network, rng: &mut R) -> Self {
        let mut gains = vec![Complex64::zero(); net.edges().len()];
        let mut drawn: BTreeMap<(usize, usize), Complex64> = BTreeMap::new();
        for (k, e) in net.edges().iter().enumerate() {
            let key = (e.tail.min(e.head), e.tail.max(e.head));
            gains[k] = *drawn.entry(key).or_insert_with(|| cn01(rng));
        }
        FadingRealization { gains }
    }

    pub fn from_gains(gains: Vec<Complex64>) -> Self {
        FadingRealization { gains }
    }
}

/// What a receiving node hears in a slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reception {
    /// Superposition of every transmitting in-neighbour (interference and
    /// back-flow included).
    #[default]
    Broadcast,
    /// Only the scheduled incoming edges; interference is zeroed.
    ScheduledOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PropagateOptions {
    pub cycles: usize,
    pub reception: Reception,
    pub track_support: bool,
}

impl PropagateOptions {
    pub fn cycles(cycles: usize) -> Self {
        PropagateOptions { cycles, reception: Reception::Broadcast, track_support: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Value {
    Zero,
    Symbol(usize),
    Event(usize),
}

#[derive(Clone, Debug)]
struct Event {
    inputs: Vec<(usize, Value)>,
    noise: Option<usize>,
}

/// Slot-by-slot dataflow of a schedule, independent of the fading values.
#[derive(Clone, Debug)]
pub struct ChannelPlan {
    total_slots: usize,
    symbol_slots: Vec<usize>,
    n_noise: usize,
    events: Vec<Event>,
    sink_events: Vec<(usize, usize)>,
    paths: Vec<Vec<usize>>,
    path_edges: Vec<Vec<usize>>,
}

impl ChannelPlan {
    pub fn new(
        net: &Network,
        sched: &Schedule,
        cycles: usize,
        reception: Reception,
    ) -> Result<Self, Error> {
        let n_nodes = net.nodes().len();
        for &(u, v) in sched.activations.keys() {
            if u >= n_nodes || v >= n_nodes || !net.has_edge(u, v) {
                return Err(Error::ScheduleMismatch(format!("no edge for activation ({u}, {v})")));
            }
        }
        let n = sched.cycle_length;
        if n == 0 {
            return Err(Error::ScheduleMismatch("zero cycle length".into()));
        }
        let total_slots = n * cycles.max(1);
        let source = net.source();
        let sink = net.sink();

        // active pairs per phase
        let mut by_phase: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (&pair, slots) in &sched.activations {
            for &p in slots {
                if p >= n {
                    return Err(Error::ScheduleMismatch(format!("slot {p} outside cycle {n}")));
                }
                by_phase[p].push(pair);
            }
        }

        let mut history: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_nodes];
        // index of the oldest reception each relay has not forwarded yet
        let mut pending = vec![0usize; n_nodes];
        let mut events: Vec<Event> = Vec::new();
        let mut symbol_slots = Vec::new();
        let mut sink_events = Vec::new();
        let mut n_noise = 0;
        for t in 0..total_slots {
            let active = &by_phase[t % n];
            let tx: BTreeSet<usize> = active.iter().map(|p| p.0).collect();
            let rx: BTreeSet<usize> = active.iter().map(|p| p.1).collect();
            for &v in tx.intersection(&rx) {
                if net.nodes()[v].duplex == Duplex::Half {
                    return Err(Error::HalfDuplexViolation { node: net.id(v).to_string(), slot: t });
                }
            }
            let mut value: BTreeMap<usize, Value> = BTreeMap::new();
            for &u in &tx {
                let val = if u == source {
                    symbol_slots.push(t);
                    Value::Symbol(symbol_slots.len() - 1)
                } else if u == sink {
                    Value::Zero
                } else {
                    let delay = sched.added_delays.get(&u).copied().unwrap_or(0);
                    let latest = (t as isize) - 1 - delay as isize;
                    match history[u].get(pending[u]) {
                        Some(&(slot, id)) if (slot as isize) <= latest => {
                            pending[u] += 1;
                            Value::Event(id)
                        }
                        _ => Value::Zero,
                    }
                };
                value.insert(u, val);
            }
            let mut new_events = Vec::new();
            for &v in &rx {
                if v == source {
                    continue;
                }
                let mut inputs = Vec::new();
                for (k, e) in net.edges().iter().enumerate() {
                    if e.head != v || !tx.contains(&e.tail) {
                        continue;
                    }
                    let heard = match reception {
                        Reception::Broadcast => true,
                        Reception::ScheduledOnly => active.contains(&(e.tail, v)),
                    };
                    if heard {
                        inputs.push((k, value[&e.tail]));
                    }
                }
                let noise = if v == sink {
                    None
                } else {
                    n_noise += 1;
                    Some(n_noise - 1)
                };
                let id = events.len();
                events.push(Event { inputs, noise });
                if v == sink {
                    sink_events.push((t, id));
                } else {
                    new_events.push((v, id));
                }
            }
            for (v, id) in new_events {
                history[v].push((t, id));
            }
        }

        let mut path_edges = Vec::new();
        for p in &sched.paths {
            let mut es = Vec::new();
            for w in p.windows(2) {
                let k = net.edges_between(w[0], w[1]);
                if k.is_empty() {
                    return Err(Error::ScheduleMismatch("schedule path uses a missing edge".into()));
                }
                es.push(k[0]);
            }
            path_edges.push(es);
        }
        Ok(ChannelPlan {
            total_slots,
            symbol_slots,
            n_noise,
            events,
            sink_events,
            paths: sched.paths.clone(),
            path_edges,
        })
    }

    pub fn total_slots(&self) -> usize {
        self.total_slots
    }

    /// Runs the dataflow for one realization.
    pub fn realize(&self, fading: &FadingRealization, track_support: bool) -> TransferModel {
        let ns = self.symbol_slots.len();
        let dim = ns + self.n_noise;
        let mut vals: Vec<Vec<Complex64>> = Vec::with_capacity(self.events.len());
        let mut sups: Vec<Vec<Option<BTreeSet<usize>>>> = Vec::new();
        for ev in &self.events {
            let mut v = vec![Complex64::zero(); dim];
            let mut s: Vec<Option<BTreeSet<usize>>> =
                if track_support { vec![None; dim] } else { Vec::new() };
            for &(edge, from) in &ev.inputs {
                let g = fading.gains[edge];
                match from {
                    Value::Zero => {}
                    Value::Symbol(k) => {
                        v[k] += g;
                        if track_support {
                            s[k].get_or_insert_with(BTreeSet::new).insert(edge);
                        }
                    }
                    Value::Event(id) => {
                        for (x, y) in v.iter_mut().zip(&vals[id]) {
                            *x += g * y;
                        }
                        if track_support {
                            for (a, b) in s.iter_mut().zip(&sups[id]) {
                                if let Some(b) = b {
                                    let a = a.get_or_insert_with(BTreeSet::new);
                                    a.extend(b.iter().copied());
                                    a.insert(edge);
                                }
                            }
                        }
                    }
                }
            }
            if let Some(k) = ev.noise {
                v[ns + k] += Complex64::new(1.0, 0.0);
                if track_support {
                    s[ns + k].get_or_insert_with(BTreeSet::new);
                }
            }
            vals.push(v);
            if track_support {
                sups.push(s);
            }
        }

        // rows: sink receptions carrying any source symbol
        let mut kept: Vec<(usize, usize)> = Vec::new();
        let mut discarded = 0;
        for &(slot, id) in &self.sink_events {
            if vals[id][..ns].iter().any(|x| !x.is_zero()) {
                kept.push((slot, id));
            } else {
                discarded += 1;
            }
        }
        let first_row = kept.iter().position(|_| true);
        let mut first_hit: Vec<Option<usize>> = vec![None; ns];
        for (r, &(_, id)) in kept.iter().enumerate() {
            for k in 0..ns {
                if first_hit[k].is_none() && !vals[id][k].is_zero() {
                    first_hit[k] = Some(r);
                }
            }
        }
        let mut cols: Vec<usize> = (0..ns).filter(|&k| first_hit[k].is_some()).collect();
        cols.sort_by_key(|&k| (first_hit[k].unwrap(), k));
        let noise_cols: Vec<usize> = (0..self.n_noise)
            .filter(|&k| kept.iter().any(|&(_, id)| !vals[id][ns + k].is_zero()))
            .collect();

        let rows = kept.len();
        let h = DMatrix::from_fn(rows, cols.len(), |i, j| vals[kept[i].1][cols[j]]);
        let g = DMatrix::from_fn(rows, noise_cols.len(), |i, j| vals[kept[i].1][ns + noise_cols[j]]);
        let sigma = DMatrix::<Complex64>::identity(rows, rows) + &g * g.adjoint();
        let support = if track_support {
            Some(
                (0..rows)
                    .map(|i| {
                        cols.iter()
                            .map(|&k| sups[kept[i].1][k].clone().unwrap_or_default())
                            .collect()
                    })
                    .collect(),
            )
        } else {
            None
        };
        let reference = self
            .path_edges
            .iter()
            .map(|es| es.iter().fold(Complex64::new(1.0, 0.0), |acc, &e| acc * fading.gains[e]))
            .collect();
        let window_slots = match first_row {
            Some(_) => self.total_slots - kept[0].0,
            None => 0,
        };
        TransferModel {
            h,
            sigma,
            g,
            output_slots: kept.iter().map(|&(slot, _)| slot).collect(),
            input_slots: cols.iter().map(|&k| self.symbol_slots[k]).collect(),
            discarded_rows: discarded,
            window_slots,
            total_slots: self.total_slots,
            reference,
            path_nodes: self.paths.clone(),
            support,
        }
    }
}

/// Cycle-level linear channel `y = H x + w` with `E[w w†] = Σ`.
#[derive(Clone, Debug)]
pub struct TransferModel {
    pub h: DMatrix<Complex64>,
    pub sigma: DMatrix<Complex64>,
    /// Gains from relay noise samples to the retained sink rows.
    pub g: DMatrix<Complex64>,
    /// Slot of each row.
    pub output_slots: Vec<usize>,
    /// Injection slot of the source symbol behind each column.
    pub input_slots: Vec<usize>,
    /// Sink receptions dropped because no source symbol had reached them.
    pub discarded_rows: usize,
    /// Slots from the first retained reception to the end of the run.
    pub window_slots: usize,
    pub total_slots: usize,
    /// Product gains along the schedule's paths.
    pub reference: Vec<Complex64>,
    pub path_nodes: Vec<Vec<usize>>,
    /// Edges each entry of `H` depends on.
    pub support: Option<Vec<Vec<BTreeSet<usize>>>>,
}

/// Builds the transfer model of `cycles` schedule cycles.
pub fn propagate(
    net: &Network,
    sched: &Schedule,
    fading: &FadingRealization,
    opts: PropagateOptions,
) -> Result<TransferModel, Error> {
    if fading.gains.len() != net.edges().len() {
        return Err(Error::ScheduleMismatch("fading realization does not match network".into()));
    }
    if net.nodes().iter().any(|n| n.role == Role::Relay && n.antennas != 1) {
        return Err(Error::Unsupported("multi-antenna relays must be expanded first".into()));
    }
    let plan = ChannelPlan::new(net, sched, opts.cycles, opts.reception)?;
    Ok(plan.realize(fading, opts.track_support))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    Diagonal,
    LowerTriangular,
    BlockLowerTriangular,
    None,
}

#[derive(Clone, Debug)]
pub struct Certificate {
    pub structure: Structure,
    /// Side of the square core the structure refers to.
    pub size: usize,
    pub square: bool,
    /// Finest block partition keeping everything above the block diagonal zero.
    pub blocks: Vec<usize>,
    /// Which reference path product each diagonal entry equals, if any.
    pub diagonal_labels: Vec<Option<usize>>,
    pub backbone_diagonal: bool,
    /// Shortest period of the diagonal labels.
    pub period: Option<usize>,
}

fn zero_tol(h: &DMatrix<Complex64>) -> f64 {
    let m = h.iter().map(|x| x.norm()).fold(0.0, f64::max);
    1e-10 * m
}

pub fn structure_certificate(tm: &TransferModel) -> Certificate {
    let h = &tm.h;
    let n = h.nrows().min(h.ncols());
    let tol = zero_tol(h);
    let nz = |i: usize, j: usize| h[(i, j)].norm() > tol;

    let mut blocks = Vec::new();
    let mut reach = 0usize;
    let mut start = 0usize;
    for i in 0..n {
        let last = (0..n).rev().find(|&j| nz(i, j)).unwrap_or(0);
        reach = reach.max(last).max(i);
        if reach == i {
            blocks.push(i + 1 - start);
            start = i + 1;
        }
    }
    let lower_off = (0..n).any(|i| (0..i).any(|j| nz(i, j)));
    let structure = if n == 0 {
        Structure::Diagonal
    } else if blocks.iter().all(|&b| b == 1) {
        if lower_off {
            Structure::LowerTriangular
        } else {
            Structure::Diagonal
        }
    } else if blocks.len() > 1 {
        Structure::BlockLowerTriangular
    } else {
        Structure::None
    };

    let scale = tm.reference.iter().map(|x| x.norm()).fold(0.0, f64::max).max(tol);
    let diagonal_labels: Vec<Option<usize>> = (0..n)
        .map(|i| {
            tm.reference
                .iter()
                .position(|g| (h[(i, i)] - g).norm() <= 1e-9 * scale.max(g.norm()))
        })
        .collect();
    let backbone_diagonal = n > 0 && diagonal_labels.iter().all(|l| l.is_some());
    let period = (1..=n).find(|&p| (0..n - p).all(|i| diagonal_labels[i] == diagonal_labels[i + p]));
    Certificate {
        structure,
        size: n,
        square: h.nrows() == h.ncols(),
        blocks,
        diagonal_labels,
        backbone_diagonal,
        period,
    }
}

/// Block-diagonal part and last nonzero block sub-diagonal of a
/// block-lower-triangular transfer matrix.
#[derive(Clone, Debug)]
pub struct BlockParts {
    pub h_d: DMatrix<Complex64>,
    pub h_l: DMatrix<Complex64>,
    /// Block offset of the last sub-diagonal (0 when there is none).
    pub offset: usize,
    pub sub_entries: Vec<(usize, usize)>,
    /// No fading coefficient appears in both parts.
    pub independent: bool,
}

pub fn extract_blocks(tm: &TransferModel, block_sizes: &[usize]) -> Result<BlockParts, Error> {
    let h = &tm.h;
    let n = block_sizes.iter().sum::<usize>();
    if n != h.nrows().min(h.ncols()) || block_sizes.contains(&0) {
        return Err(Error::StructureMismatch("block sizes do not tile the matrix".into()));
    }
    let tol = zero_tol(h);
    let mut block_of = Vec::with_capacity(n);
    for (b, &s) in block_sizes.iter().enumerate() {
        block_of.extend(std::iter::repeat_n(b, s));
    }
    let mut offset = 0;
    for i in 0..n {
        for j in 0..n {
            if h[(i, j)].norm() > tol {
                if block_of[j] > block_of[i] {
                    return Err(Error::StructureMismatch(format!(
                        "entry ({i}, {j}) lies above the block diagonal"
                    )));
                }
                offset = offset.max(block_of[i] - block_of[j]);
            }
        }
    }
    let h_d = DMatrix::from_fn(n, n, |i, j| if block_of[i] == block_of[j] { h[(i, j)] } else { Complex64::zero() });
    let mut sub_entries = Vec::new();
    let h_l = DMatrix::from_fn(n, n, |i, j| {
        if offset > 0 && block_of[i] == block_of[j] + offset {
            h[(i, j)]
        } else {
            Complex64::zero()
        }
    });
    if offset > 0 {
        for i in 0..n {
            for j in 0..n {
                if block_of[i] == block_of[j] + offset && h[(i, j)].norm() > tol {
                    sub_entries.push((i, j));
                }
            }
        }
    }
    let independent = match &tm.support {
        Some(sup) => {
            let mut d_edges = BTreeSet::new();
            for i in 0..n {
                for j in 0..n {
                    if block_of[i] == block_of[j] && h[(i, j)].norm() > tol {
                        d_edges.extend(sup[i][j].iter().copied());
                    }
                }
            }
            sub_entries.iter().all(|&(i, j)| sup[i][j].is_disjoint(&d_edges))
        }
        None => false,
    };
    Ok(BlockParts { h_d, h_l, offset, sub_entries, independent })
}

/// Groups matrix entries that carry the same fading coefficient: identical
/// edge support and equal value.
pub fn group_coefficients(
    tm: &TransferModel,
    support: &[Vec<BTreeSet<usize>>],
    entries: &[(usize, usize)],
) -> Vec<Vec<(usize, usize)>> {
    let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
    for &(i, j) in entries {
        let x = tm.h[(i, j)];
        let pos = groups.iter().position(|g| {
            let (a, b) = g[0];
            let y = tm.h[(a, b)];
            support[a][b] == support[i][j] && (x - y).norm() <= 1e-9 * x.norm().max(y.norm())
        });
        match pos {
            Some(p) => groups[p].push((i, j)),
            None => groups.push(vec![(i, j)]),
        }
    }
    groups
}

/// Plain-text dump of a complex matrix, one row per line.
pub fn dump_matrix(m: &DMatrix<Complex64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:+.6e}{:+.6e}i", m[(i, j)].re, m[(i, j)].im))
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::generators as g;
    use crate::protocol::{schedule_for, slotted_af_schedule};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edge(net: &Network, a: &str, b: &str) -> usize {
        net.edges_between(net.node_index(a).unwrap(), net.node_index(b).unwrap())[0]
    }

    #[test]
    fn naf_closed_form() {
        let net = g::naf();
        let sched = slotted_af_schedule(&net, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = FadingRealization::rayleigh(&net, &mut rng);
        let tm = propagate(&net, &sched, &f, PropagateOptions::cycles(1)).unwrap();
        let g1 = f.gains[edge(&net, "s", "t")];
        let g2 = f.gains[edge(&net, "s", "r1")];
        let h2 = f.gains[edge(&net, "r1", "t")];
        assert_eq!(tm.h[(0, 0)], g1);
        assert_eq!(tm.h[(1, 1)], g1);
        assert_eq!(tm.h[(0, 1)], Complex64::zero());
        assert!((tm.h[(1, 0)] - g2 * h2).norm() < 1e-15);
        assert_eq!(tm.sigma[(0, 0)].re, 1.0);
        assert!((tm.sigma[(1, 1)].re - (1.0 + h2.norm_sqr())).abs() < 1e-15);
        assert_eq!(tm.window_slots, 2);
        let cert = structure_certificate(&tm);
        assert_eq!(cert.structure, Structure::LowerTriangular);
        let parts = extract_blocks(&tm, &[1, 1]).unwrap();
        assert!(parts.independent);
        assert_eq!(parts.sub_entries, vec![(1, 0)]);
    }

    #[test]
    fn saf_sub_diagonal_alternates_relays() {
        let net = g::saf(2);
        let sched = slotted_af_schedule(&net, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = FadingRealization::rayleigh(&net, &mut rng);
        let tm = propagate(&net, &sched, &f, PropagateOptions::cycles(1)).unwrap();
        assert_eq!(tm.h.nrows(), 5);
        let gd = f.gains[edge(&net, "s", "t")];
        let p1 = f.gains[edge(&net, "s", "r1")] * f.gains[edge(&net, "r1", "t")];
        let p2 = f.gains[edge(&net, "s", "r2")] * f.gains[edge(&net, "r2", "t")];
        for i in 0..5 {
            assert_eq!(tm.h[(i, i)], gd);
        }
        let expect = [p1, p2, p1, p2];
        for (i, e) in expect.iter().enumerate() {
            assert!((tm.h[(i + 1, i)] - e).norm() < 1e-15);
        }
        let parts = extract_blocks(&tm, &[1; 5]).unwrap();
        assert!(parts.independent);
    }

    #[test]
    fn backflow_free_kpp_has_path_gains_on_diagonal() {
        let net = g::kpp(&[2, 3, 4]);
        let sched = schedule_for(&net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = FadingRealization::rayleigh_reciprocal(&net, &mut rng);
        let tm = propagate(&net, &sched, &f, PropagateOptions::cycles(6)).unwrap();
        let cert = structure_certificate(&tm);
        assert_eq!(cert.structure, Structure::Diagonal);
        assert!(cert.backbone_diagonal);
        let sched_only = PropagateOptions { reception: Reception::ScheduledOnly, ..PropagateOptions::cycles(6) };
        let tm2 = propagate(&net, &sched, &f, sched_only).unwrap();
        assert_eq!(tm.h, tm2.h);
    }

    #[test]
    fn backflow_appears_below_diagonal() {
        let net = g::kpp(&[4, 4, 3]);
        let sched = schedule_for(&net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = FadingRealization::rayleigh_reciprocal(&net, &mut rng);
        let tm = propagate(&net, &sched, &f, PropagateOptions::cycles(6)).unwrap();
        let cert = structure_certificate(&tm);
        assert_eq!(cert.structure, Structure::LowerTriangular);
        assert!(cert.backbone_diagonal);
        assert_eq!(cert.period, Some(3));
    }

    #[test]
    fn noise_covariance_dominates_identity() {
        let net = g::kpp(&[3, 3, 3, 3]);
        let sched = schedule_for(&net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let f = FadingRealization::rayleigh_reciprocal(&net, &mut rng);
            let tm = propagate(&net, &sched, &f, PropagateOptions::cycles(3)).unwrap();
            let eig = nalgebra::SymmetricEigen::new(tm.sigma.clone());
            assert!(eig.eigenvalues.iter().all(|&l| l >= 1.0 - 1e-12));
        }
    }

    #[test]
    fn half_duplex_clash_is_an_error() {
        let net = g::kpp(&[3]);
        let mut sched = slotted_af_schedule(&g::naf(), 2).unwrap();
        let s = net.source();
        let r1 = net.node_index("p1_1").unwrap();
        let r2 = net.node_index("p1_2").unwrap();
        let t = net.sink();
        sched.activations.clear();
        sched.activations.insert((s, r1), [0].into());
        sched.activations.insert((r1, r2), [0].into());
        sched.activations.insert((r2, t), [1].into());
        sched.paths = vec![vec![s, r1, r2, t]];
        let f = FadingRealization::from_gains(vec![Complex64::new(1.0, 0.0); net.edges().len()]);
        let err = propagate(&net, &sched, &f, PropagateOptions::cycles(1)).unwrap_err();
        assert!(matches!(err, Error::HalfDuplexViolation { slot: 0, .. }));
    }

    #[test]
    fn fading_length_checked() {
        let net = g::naf();
        let sched = slotted_af_schedule(&net, 2).unwrap();
        let f = FadingRealization::from_gains(vec![]);
        assert!(propagate(&net, &sched, &f, PropagateOptions::cycles(1)).is_err());
    }
}
