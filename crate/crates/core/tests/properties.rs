use std::collections::BTreeSet;

use nalgebra::DMatrix;
use num::complex::Complex64;
use num::Zero;
use proptest::prelude::*;

use relaynet::channel::{propagate, FadingRealization, PropagateOptions};
use relaynet::dmt::{parallel, parallel_repeated, q, qi, DmtCurve, Q};
use relaynet::montecarlo::{mi_from_spectrum, gain_spectrum, Whitening};
use relaynet::netgraph::{expand_antennas, generators as g, min_cut, Duplex, NetworkBuilder, Role};
use relaynet::protocol::{k2_max_rate, schedule_for, validate_coloring, validate_orthogonal, PathColoring};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Convex, non-increasing curve built from segments sorted steepest first.
/// Rates move in tenths and diversities in integers.
fn curve_strategy() -> impl Strategy<Value = DmtCurve> {
    prop::collection::vec((1i128..4, 1i128..11), 1..4).prop_map(|mut segs| {
        segs.sort_by(|a, b| (b.0 * a.1).cmp(&(a.0 * b.1)));
        let d0: i128 = segs.iter().map(|s| s.0).sum();
        let mut pts = vec![(Q::zero(), qi(d0))];
        let (mut r, mut d) = (Q::zero(), qi(d0));
        for (dd, dr) in segs {
            r += q(dr, 10);
            d -= qi(dd);
            pts.push((r, d));
        }
        DmtCurve::from_breakpoints(pts).unwrap()
    })
}

// inf over feasible splits f1 r1 + f2 r2 = r, searched on a grid of u = f1 r1
fn grid_oracle(a: &DmtCurve, b: &DmtCurve, fa: Q, fb: Q, r: Q, step: Q) -> Option<Q> {
    let mut best: Option<Q> = None;
    let mut u = Q::zero();
    while u <= r {
        let (ra, rb) = (u / fa, (r - u) / fb);
        if ra <= a.r_max() && rb <= b.r_max() {
            let v = a.eval(ra) + b.eval(rb);
            best = Some(best.map_or(v, |x: Q| x.min(v)));
        }
        u += step;
    }
    best
}

fn logdet(h: &DMatrix<Complex64>, rho: f64) -> f64 {
    let n = h.nrows();
    let m = DMatrix::<Complex64>::identity(n, n) + h * h.adjoint() * Complex64::new(rho, 0.0);
    let l = m.cholesky().expect("positive definite").l();
    (0..n).map(|i| 2.0 * l[(i, i)].re.log2()).sum()
}

fn random_lower(n: usize, rng: &mut ChaCha8Rng, zero_below: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(n, n, |i, j| {
        if j > i || i - j > zero_below {
            Complex64::zero()
        } else {
            relaynet::channel::cn01(rng)
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parallel_matches_grid(a in curve_strategy(), b in curve_strategy(), k in 0i128..50) {
        let c = parallel(&[a.clone(), b.clone()]);
        prop_assert_eq!(c.r_max(), a.r_max() + b.r_max());
        let r = q(k, 10);
        let want = grid_oracle(&a, &b, qi(1), qi(1), r, q(1, 10)).unwrap_or(Q::zero());
        prop_assert_eq!(c.eval(r), want);
    }

    #[test]
    fn parallel_repeated_matches_grid(a in curve_strategy(), b in curve_strategy(), f in 1i128..10, k in 0i128..50) {
        let (fa, fb) = (q(f, 10), q(10 - f, 10));
        let c = parallel_repeated(&[a.clone(), b.clone()], &[fa, fb]).unwrap();
        let r = q(k, 10);
        let want = grid_oracle(&a, &b, fa, fb, r, q(1, 100)).unwrap_or(Q::zero());
        prop_assert_eq!(c.eval(r), want);
    }

    #[test]
    fn parallel_is_commutative_and_convex(a in curve_strategy(), b in curve_strategy()) {
        let ab = parallel(&[a.clone(), b.clone()]);
        prop_assert_eq!(&ab, &parallel(&[b, a]));
        let pts = ab.breakpoints();
        for w in pts.windows(3) {
            let s1 = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            let s2 = (w[2].1 - w[1].1) / (w[2].0 - w[1].0);
            prop_assert!(s1 < s2);
        }
    }

    #[test]
    fn two_path_colorings_respect_max_rate(
        n1 in 2usize..5,
        extra in 0usize..3,
        n in 2usize..7,
        seed in any::<u64>(),
    ) {
        let n2 = n1 + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::seq::index::sample;
        use rand::Rng;
        let counts = [rng.random_range(1..=n / 2), rng.random_range(1..=n / 2)];
        let sets: Vec<Vec<BTreeSet<usize>>> = [n1, n2]
            .iter()
            .zip(counts)
            .map(|(&len, c)| (0..len).map(|_| sample(&mut rng, n, c).into_iter().collect()).collect())
            .collect();
        let coloring = PathColoring { cycle_length: n, sets, delays: vec![] };
        let rep = validate_coloring(&coloring);
        if rep.valid() {
            prop_assert!(rep.rate <= k2_max_rate(n1, n2), "{:?} beats {}", rep.rate, k2_max_rate(n1, n2));
        }
    }

    #[test]
    fn kpp_schedules_validate(lengths in prop::collection::vec(2usize..7, 1..6)) {
        let net = g::kpp(&lengths);
        let sched = schedule_for(&net).unwrap();
        let rep = validate_orthogonal(&net, &sched).unwrap();
        prop_assert!(rep.valid());
        if lengths.len() >= 3 {
            prop_assert_eq!(rep.rate, qi(1));
        }
    }

    #[test]
    fn min_cut_invariant_under_relabeling(n in 3usize..12, seed in any::<u64>(), density in 0.2f64..0.8) {
        let net = random_dag(n, seed, density, false);
        let Ok(cut) = min_cut(&net) else { return Ok(()); };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        let mut perm: Vec<usize> = (0..net.nodes().len()).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        prop_assert_eq!(min_cut(&net.relabeled(&perm)).unwrap(), cut);
    }

    #[test]
    fn antenna_expansion_idempotent(n in 3usize..9, seed in any::<u64>()) {
        let net = random_dag(n, seed, 0.5, true);
        let once = expand_antennas(&net);
        let twice = expand_antennas(&once);
        prop_assert_eq!(once.nodes().len(), twice.nodes().len());
        prop_assert_eq!(min_cut(&once), min_cut(&twice));
        prop_assert_eq!(min_cut(&once), min_cut(&net));
    }

    #[test]
    fn triangular_det_dominates_diagonal(n in 1usize..7, band in 0usize..6, seed in any::<u64>(), db in 0.0f64..45.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_lower(n, &mut rng, band);
        let rho = 10f64.powf(db / 10.0);
        let diag: f64 = (0..n).map(|i| (1.0 + rho * h[(i, i)].norm_sqr()).log2()).sum();
        let full = logdet(&h, rho);
        prop_assert!(full >= diag - 1e-9 * full.abs().max(1.0));
        // Hadamard: never above the product of row energies
        let had: f64 = (0..n).map(|i| (1.0 + rho * h.row(i).iter().map(|x| x.norm_sqr()).sum::<f64>()).log2()).sum();
        prop_assert!(full <= had + 1e-9 * had.abs().max(1.0));
    }

    #[test]
    fn mutual_info_monotone_in_snr(seed in any::<u64>(), a in 0.0f64..40.0, b in 0.0f64..40.0) {
        let net = g::kpp(&[3, 3, 2]);
        let sched = schedule_for(&net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = FadingRealization::rayleigh_reciprocal(&net, &mut rng);
        let tm = propagate(&net, &sched, &f, PropagateOptions::cycles(3)).unwrap();
        let spec = gain_spectrum(&tm, Whitening::ExactSigma).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(mi_from_spectrum(&spec, 10f64.powf(lo / 10.0)) <= mi_from_spectrum(&spec, 10f64.powf(hi / 10.0)) + 1e-12);
        prop_assert!(spec.iter().all(|&x| x >= -1e-12));
    }
}

/// Random DAG on nodes ordered s, v1.., t; edges only go forward in the order.
fn random_dag(n: usize, seed: u64, density: f64, antennas: bool) -> relaynet::netgraph::Network {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = NetworkBuilder::new();
    let mut ids = Vec::new();
    for i in 0..n {
        let role = if i == 0 {
            Role::Source
        } else if i == n - 1 {
            Role::Sink
        } else {
            Role::Relay
        };
        let ant = if antennas { rng.random_range(1..=3) } else { 1 };
        ids.push(b.node_with(&format!("v{i}"), role, ant, Duplex::Half));
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(density) {
                b.edge(ids[i], ids[j]);
            }
        }
    }
    b.build().unwrap()
}
