//! Exact piecewise-linear diversity-multiplexing tradeoff curves.
//!
//! A [`DmtCurve`] is stored as a list of rational breakpoints `(r, d)` starting
//! at `r = 0` and ending on the r-axis. Between breakpoints the curve is linear
//! and it is identically zero past the last one.

use std::cmp::Ordering;
use std::fmt;

use num::rational::Ratio;
use num::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::channel::{structure_certificate, Structure, TransferModel};
use crate::netgraph::{classify, min_cut, Family, Network};
use crate::Error;

/// Exact rational used for breakpoints.
pub type Q = Ratio<i128>;

pub fn q(n: i128, d: i128) -> Q {
    Q::new(n, d)
}

pub fn qi(n: i128) -> Q {
    Q::from_integer(n)
}

/// Best rational approximation with a bounded denominator; used when a curve
/// parameter arrives as a float (CLI input, tests).
pub fn q_from_f64(x: f64) -> Q {
    Q::approximate_float(x).unwrap_or_else(|| Q::from_integer(x.round() as i128))
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmtCurve {
    points: Vec<(Q, Q)>,
}

impl fmt::Debug for DmtCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DmtCurve[")?;
        for (i, (r, d)) in self.points.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "({r}, {d})")?;
        }
        f.write_str("]")
    }
}

impl DmtCurve {
    /// The identically zero curve.
    pub fn zero() -> Self {
        DmtCurve { points: vec![(Q::zero(), Q::zero())] }
    }

    /// Builds a curve from breakpoints, rejecting anything that is not convex,
    /// non-increasing and terminating at zero.
    pub fn from_breakpoints(points: Vec<(Q, Q)>) -> Result<Self, Error> {
        if points.is_empty() {
            return Err(Error::InvalidCurve("no breakpoints".into()));
        }
        if !points[0].0.is_zero() {
            return Err(Error::InvalidCurve("first breakpoint must sit at r = 0".into()));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidCurve("breakpoints must have increasing r".into()));
            }
        }
        if points.iter().any(|p| p.1.is_negative()) {
            return Err(Error::InvalidCurve("negative diversity".into()));
        }
        if !points.last().unwrap().1.is_zero() {
            return Err(Error::InvalidCurve("curve must end on the r axis".into()));
        }
        let slopes: Vec<Q> = points
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect();
        for s in &slopes {
            if s.is_positive() {
                return Err(Error::InvalidCurve("curve must be non-increasing".into()));
            }
        }
        for w in slopes.windows(2) {
            if w[1] < w[0] {
                return Err(Error::InvalidCurve("curve must be convex".into()));
            }
        }
        Ok(DmtCurve { points }.simplified())
    }

    /// Drops collinear interior points and the trailing flat zero tail.
    fn simplified(mut self) -> Self {
        // a zero segment at the end only moves the last breakpoint
        while self.points.len() >= 2 {
            let n = self.points.len();
            if self.points[n - 2].1.is_zero() {
                self.points.pop();
            } else {
                break;
            }
        }
        let mut out: Vec<(Q, Q)> = Vec::with_capacity(self.points.len());
        for p in self.points {
            while out.len() >= 2 {
                let a = out[out.len() - 2];
                let b = out[out.len() - 1];
                let s1 = (b.1 - a.1) / (b.0 - a.0);
                let s2 = (p.1 - b.1) / (p.0 - b.0);
                if s1 == s2 {
                    out.pop();
                } else {
                    break;
                }
            }
            out.push(p);
        }
        DmtCurve { points: out }
    }

    pub fn breakpoints(&self) -> &[(Q, Q)] {
        &self.points
    }

    /// d(0)
    pub fn d_max(&self) -> Q {
        self.points[0].1
    }

    /// Smallest r at which the curve reaches zero.
    pub fn r_max(&self) -> Q {
        self.points.last().unwrap().0
    }

    pub fn eval(&self, r: Q) -> Q {
        if r.is_negative() {
            return self.d_max();
        }
        for w in self.points.windows(2) {
            let (r0, d0) = w[0];
            let (r1, d1) = w[1];
            if r <= r1 {
                return d0 + (d1 - d0) * (r - r0) / (r1 - r0);
            }
        }
        Q::zero()
    }

    pub fn eval_f64(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return to_f64(self.d_max());
        }
        for w in self.points.windows(2) {
            let (r0, d0) = (to_f64(w[0].0), to_f64(w[0].1));
            let (r1, d1) = (to_f64(w[1].0), to_f64(w[1].1));
            if r <= r1 {
                return d0 + (d1 - d0) * (r - r0) / (r1 - r0);
            }
        }
        0.0
    }

    /// Segments as (length along r, slope), in order.
    fn segments(&self) -> Vec<(Q, Q)> {
        self.points
            .windows(2)
            .map(|w| {
                let len = w[1].0 - w[0].0;
                (len, (w[1].1 - w[0].1) / len)
            })
            .collect()
    }

    fn from_segments(d0: Q, mut segs: Vec<(Q, Q)>) -> Self {
        segs.sort_by_key(|a| a.1);
        let mut pts = vec![(Q::zero(), d0)];
        let (mut r, mut d) = (Q::zero(), d0);
        for (len, slope) in segs {
            r += len;
            d += slope * len;
            pts.push((r, d));
        }
        DmtCurve { points: pts }.simplified()
    }

    /// Multiplies diversity values by `a`.
    pub fn scale_diversity(&self, a: Q) -> Self {
        assert!(!a.is_negative(), "diversity scale must be non-negative");
        if a.is_zero() {
            return DmtCurve::zero();
        }
        DmtCurve { points: self.points.iter().map(|&(r, d)| (r, d * a)).collect() }
    }

    /// Pointwise sum.
    pub fn add(&self, other: &DmtCurve) -> Self {
        let xs = merged_abscissae(self, other, false);
        let pts = xs.into_iter().map(|r| (r, self.eval(r) + other.eval(r))).collect();
        DmtCurve { points: pts }.simplified()
    }

    /// Pointwise maximum.
    pub fn max(&self, other: &DmtCurve) -> Self {
        let xs = merged_abscissae(self, other, true);
        let pts = xs
            .into_iter()
            .map(|r| (r, std::cmp::max(self.eval(r), other.eval(r))))
            .collect();
        DmtCurve { points: pts }.simplified()
    }

    /// `self(r) <= other(r)` for all r.
    pub fn dominated_by(&self, other: &DmtCurve) -> bool {
        merged_abscissae(self, other, false)
            .into_iter()
            .all(|r| self.eval(r) <= other.eval(r))
    }

    /// Breakpoint CSV with header `r,d`.
    pub fn to_breakpoint_csv(&self) -> String {
        let mut s = String::from("r,d\n");
        for (r, d) in &self.points {
            s.push_str(&format!("{},{}\n", to_f64(*r), to_f64(*d)));
        }
        s
    }

    /// Uniformly sampled CSV over `[0, r_end]`.
    pub fn to_sampled_csv(&self, r_end: f64, samples: usize) -> String {
        let mut s = String::from("r,d\n");
        let n = samples.max(2);
        for k in 0..n {
            let r = r_end * k as f64 / (n - 1) as f64;
            s.push_str(&format!("{r},{}\n", self.eval_f64(r)));
        }
        s
    }
}

pub fn to_f64(x: Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Union of breakpoint abscissae, optionally with crossing points of the two
/// curves so that a pointwise max stays piecewise linear between them.
fn merged_abscissae(a: &DmtCurve, b: &DmtCurve, crossings: bool) -> Vec<Q> {
    let mut xs: Vec<Q> = a.points.iter().chain(b.points.iter()).map(|p| p.0).collect();
    xs.sort();
    xs.dedup();
    if crossings {
        let mut extra = Vec::new();
        for w in xs.windows(2) {
            let (x0, x1) = (w[0], w[1]);
            let f0 = a.eval(x0) - b.eval(x0);
            let f1 = a.eval(x1) - b.eval(x1);
            if (f0.is_positive() && f1.is_negative()) || (f0.is_negative() && f1.is_positive()) {
                extra.push(x0 + (x1 - x0) * f0 / (f0 - f1));
            }
        }
        xs.extend(extra);
        xs.sort();
        xs.dedup();
    }
    xs
}

/// `d0 (1 - r / r0)^+`.
pub fn linear_curve(d0: Q, r0: Q) -> DmtCurve {
    assert!(!d0.is_negative(), "d0 must be non-negative");
    assert!(r0.is_positive(), "r0 must be positive");
    if d0.is_zero() {
        return DmtCurve::zero();
    }
    DmtCurve { points: vec![(Q::zero(), d0), (r0, Q::zero())] }
}

/// Infimal convolution `inf_{sum r_i = r} sum d_i(r_i)`.
///
/// For convex piecewise-linear inputs the result starts at `sum d_i(0)` and
/// consumes every input segment in order of increasing slope.
pub fn parallel(curves: &[DmtCurve]) -> DmtCurve {
    if curves.is_empty() {
        return DmtCurve::zero();
    }
    let d0 = curves.iter().map(|c| c.d_max()).fold(Q::zero(), |a, b| a + b);
    let segs = curves.iter().flat_map(|c| c.segments()).collect();
    DmtCurve::from_segments(d0, segs)
}

/// `inf_{sum f_i r_i = r} sum d_i(r_i)`, the parallel channel in which the
/// i-th distinct coefficient occupies a fraction `f_i` of the diagonal.
pub fn parallel_repeated(curves: &[DmtCurve], fractions: &[Q]) -> Result<DmtCurve, Error> {
    if curves.len() != fractions.len() {
        return Err(Error::InconsistentFractions("length mismatch".into()));
    }
    if fractions.iter().any(|f| !f.is_positive()) {
        return Err(Error::InconsistentFractions("fractions must be positive".into()));
    }
    let total = fractions.iter().fold(Q::zero(), |a, b| a + b);
    if total != Q::one() {
        return Err(Error::InconsistentFractions(format!("fractions sum to {total}, not 1")));
    }
    let scaled: Vec<DmtCurve> =
        curves.iter().zip(fractions).map(|(c, f)| rate_scale(c, f.recip())).collect();
    Ok(parallel(&scaled))
}

/// Parallel channel with `n_copies[i]` repetitions of the coefficient whose
/// scalar DMT is `curves[i]`, evaluated at the per-channel-use rate.
pub fn repeated_diagonal(curves: &[DmtCurve], n_copies: &[usize]) -> Result<DmtCurve, Error> {
    let m: usize = n_copies.iter().sum();
    if m == 0 {
        return Ok(DmtCurve::zero());
    }
    let fr: Vec<Q> = n_copies.iter().map(|&n| q(n as i128, m as i128)).collect();
    Ok(rate_scale(&parallel_repeated(curves, &fr)?, q(1, m as i128)))
}

/// `(N - r)^+ / N_max`
pub fn product_parallel(n: usize, n_max: usize) -> DmtCurve {
    assert!(n >= 1 && n_max >= 1 && n_max <= n, "need 1 <= N_max <= N");
    linear_curve(q(n as i128, n_max as i128), qi(n as i128))
}

/// Sum of the two bounds when the diagonal and sub-diagonal carry independent
/// fades, the larger of the two otherwise.
pub fn triangular_lower_bound(d_diag: &DmtCurve, d_sub: &DmtCurve, independent: bool) -> DmtCurve {
    if independent {
        d_diag.add(d_sub)
    } else {
        d_diag.max(d_sub)
    }
}

/// `d'(r) = d(factor * r)`
pub fn rate_scale(curve: &DmtCurve, factor: Q) -> DmtCurve {
    assert!(factor.is_positive(), "rate factor must be positive");
    DmtCurve { points: curve.points.iter().map(|&(r, d)| (r / factor, d)).collect() }
}

/// `(M - N r)^+`
pub fn mincut_schedule_dmt(m: usize, n_slots: usize) -> DmtCurve {
    assert!(m >= 1 && n_slots >= m, "need 1 <= M <= N_slots");
    linear_curve(qi(m as i128), q(m as i128, n_slots as i128))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyDmt {
    pub achievable: DmtCurve,
    pub cutset: DmtCurve,
    pub tight: bool,
}

/// Achievable and cut-set curves for the recognised network families.
pub fn family_dmt(net: &Network) -> Result<FamilyDmt, Error> {
    if !net.all_single_antenna() {
        return Err(Error::Unsupported("no tabulated DMT for multi-antenna networks".into()));
    }
    let class = classify(net)?;
    let m = min_cut(net)? as i128;
    let one = Q::one();
    let out = match class.family {
        Family::Kpp { k } => {
            let lens = class.backbone.as_ref().map(|b| b.lengths()).unwrap_or_default();
            let same_parity = lens.len() == 2 && lens[0] % 2 == lens[1] % 2;
            if k >= 3 || same_parity {
                let c = linear_curve(qi(k as i128), one);
                FamilyDmt { achievable: c.clone(), cutset: c, tight: true }
            } else if k == 2 {
                // odd total length: the orthogonal protocol loses a factor
                let n2 = *lens.iter().max().unwrap() as i128;
                FamilyDmt {
                    achievable: linear_curve(qi(2), q(2 * n2 - 1, 2 * n2)),
                    cutset: linear_curve(qi(2), one),
                    tight: false,
                }
            } else {
                let c = linear_curve(qi(k as i128), one);
                FamilyDmt { achievable: c.clone(), cutset: c, tight: true }
            }
        }
        Family::KppD { k } => {
            let c = linear_curve(qi(k as i128 + 1), one);
            FamilyDmt { achievable: c.clone(), cutset: c, tight: true }
        }
        Family::KppI { k } | Family::Regular { k, .. } => {
            let c = linear_curve(qi(k as i128), one);
            FamilyDmt { achievable: c.clone(), cutset: c, tight: true }
        }
        Family::FullyConnectedLayered => {
            let layers = class.layering.as_ref().expect("layered family has layers");
            let relay_layers = layers.len() - 2;
            let achievable = linear_curve(qi(m), one);
            // below four relay layers the min-cut sits at the source or the sink
            let tight = relay_layers < 4;
            FamilyDmt { achievable: achievable.clone(), cutset: achievable, tight }
        }
        other => return Err(Error::Unsupported(format!("no tabulated DMT for family {other}"))),
    };
    Ok(out)
}

/// Scalar DMT bound for a protocol whose transfer matrix is scalar
/// lower-triangular.
#[derive(Clone, Debug)]
pub struct StructuralBound {
    pub d_diag: DmtCurve,
    pub d_sub: DmtCurve,
    pub independent: bool,
    /// Lower bound on the DMT of H itself, per matrix channel use.
    pub matrix_bound: DmtCurve,
    /// The same bound per slot of the protocol.
    pub protocol_bound: DmtCurve,
}

/// Reads the DMT lower bound off the structure of a propagated channel.
///
/// Each distinct nonzero fading monomial is treated as a scalar Rayleigh-type
/// coefficient with DMT `(1 - r)^+`; coefficients are identified by the set of
/// edges they depend on together with their value.
pub fn bound_from_structure(tm: &TransferModel) -> Result<StructuralBound, Error> {
    let cert = structure_certificate(tm);
    if !matches!(cert.structure, Structure::Diagonal | Structure::LowerTriangular) {
        return Err(Error::StructureMismatch(format!(
            "need a scalar lower-triangular matrix, got {:?}",
            cert.structure
        )));
    }
    let supports = tm.support.as_ref().ok_or_else(|| {
        Error::StructureMismatch("transfer model was built without support tracking".into())
    })?;
    let blocks = vec![1usize; cert.size];
    let parts = crate::channel::extract_blocks(tm, &blocks)?;
    let unit = linear_curve(Q::one(), Q::one());

    let diag: Vec<(usize, usize)> = (0..cert.size).map(|i| (i, i)).collect();
    let diag_groups = crate::channel::group_coefficients(tm, supports, &diag);
    let sub_groups = crate::channel::group_coefficients(tm, supports, &parts.sub_entries);
    require_independent(supports, &diag_groups, "diagonal")?;
    require_independent(supports, &sub_groups, "sub-diagonal")?;

    let curve_of = |groups: &[Vec<(usize, usize)>]| -> Result<DmtCurve, Error> {
        let counts: Vec<usize> = groups.iter().map(|g| g.len()).collect();
        let curves = vec![unit.clone(); counts.len()];
        repeated_diagonal(&curves, &counts)
    };
    let d_diag = curve_of(&diag_groups)?;
    let d_sub = curve_of(&sub_groups)?;
    let matrix_bound = triangular_lower_bound(&d_diag, &d_sub, parts.independent);
    let protocol_bound = rate_scale(&matrix_bound, qi(tm.window_slots as i128));
    Ok(StructuralBound {
        d_diag,
        d_sub,
        independent: parts.independent,
        matrix_bound,
        protocol_bound,
    })
}

fn groups_independent(
    supports: &[Vec<std::collections::BTreeSet<usize>>],
    groups: &[Vec<(usize, usize)>],
) -> bool {
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            let (i, j) = groups[a][0];
            let (k, l) = groups[b][0];
            if !supports[i][j].is_disjoint(&supports[k][l]) {
                return false;
            }
        }
    }
    true
}

fn require_independent(
    supports: &[Vec<std::collections::BTreeSet<usize>>],
    groups: &[Vec<(usize, usize)>],
    what: &str,
) -> Result<(), Error> {
    if groups_independent(supports, groups) {
        Ok(())
    } else {
        Err(Error::StructureMismatch(format!("distinct {what} coefficients share fading links")))
    }
}

/// Bound over one steady-state period of a long run.
///
/// Rows are labelled by the coefficient on their diagonal entry and on their
/// last-sub-diagonal entry; the shortest period of these labels over the second
/// half of the run gives a window free of pipeline fill effects. The matrix
/// bound refers to one period of `p` rows, which spans `p / rate` slots.
pub fn steady_state_bound(tm: &TransferModel, rate: Q) -> Result<StructuralBound, Error> {
    let cert = structure_certificate(tm);
    if !matches!(cert.structure, Structure::Diagonal | Structure::LowerTriangular) {
        return Err(Error::StructureMismatch(format!(
            "need a scalar lower-triangular matrix, got {:?}",
            cert.structure
        )));
    }
    if !rate.is_positive() {
        return Err(Error::Precondition("rate must be positive".into()));
    }
    let supports = tm.support.as_ref().ok_or_else(|| {
        Error::StructureMismatch("transfer model was built without support tracking".into())
    })?;
    let n = cert.size;
    let parts = crate::channel::extract_blocks(tm, &vec![1usize; n])?;
    let diag: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
    let diag_groups = crate::channel::group_coefficients(tm, supports, &diag);
    let sub_groups = crate::channel::group_coefficients(tm, supports, &parts.sub_entries);
    let mut diag_label = vec![0usize; n];
    for (g, members) in diag_groups.iter().enumerate() {
        for &(i, _) in members {
            diag_label[i] = g;
        }
    }
    let mut sub_label: Vec<Option<usize>> = vec![None; n];
    for (g, members) in sub_groups.iter().enumerate() {
        for &(i, _) in members {
            sub_label[i] = Some(g);
        }
    }
    let period = |sig: &[(usize, Option<usize>)]| {
        let half = n / 2;
        (1..=n - half).find(|&p| n - half >= 2 * p && (half..n - p).all(|i| sig[i] == sig[i + p]))
    };
    let joint: Vec<(usize, Option<usize>)> = diag_label.iter().copied().zip(sub_label).collect();
    let diag_only: Vec<(usize, Option<usize>)> = diag_label.iter().map(|&d| (d, None)).collect();
    // Echoes that bounce between relays push the last sub-diagonal further out
    // as the run grows; then only the diagonal part is periodic.
    let (p, use_sub) = match period(&joint) {
        Some(p) => (p, true),
        None => (
            period(&diag_only).ok_or_else(|| {
                Error::StructureMismatch("run too short to show a steady-state period".into())
            })?,
            false,
        ),
    };
    require_independent(supports, &diag_groups, "diagonal")?;
    if use_sub {
        require_independent(supports, &sub_groups, "sub-diagonal")?;
    }
    let rows = n - p..n;

    let unit = linear_curve(Q::one(), Q::one());
    let counts_in = |groups: &[Vec<(usize, usize)>]| -> Vec<usize> {
        groups
            .iter()
            .map(|g| g.iter().filter(|(i, _)| rows.contains(i)).count())
            .filter(|&c| c > 0)
            .collect()
    };
    let curve = |counts: Vec<usize>| repeated_diagonal(&vec![unit.clone(); counts.len()], &counts);
    let d_diag = curve(counts_in(&diag_groups))?;
    let d_sub = if use_sub { curve(counts_in(&sub_groups))? } else { DmtCurve::zero() };
    let independent = use_sub && parts.independent;
    let matrix_bound = triangular_lower_bound(&d_diag, &d_sub, independent);
    let protocol_bound = rate_scale(&matrix_bound, qi(p as i128) / rate);
    Ok(StructuralBound { d_diag, d_sub, independent, matrix_bound, protocol_bound })
}

/// Reads the protocol bound off one fading draw of a schedule's channel.
///
/// One-cycle frames with no buffering (slotted AF, a bare link) are read as a
/// whole; everything else is run for several cycles and read in steady state.
pub fn schedule_bound(
    net: &Network,
    sched: &crate::protocol::Schedule,
    fading: &crate::channel::FadingRealization,
) -> Result<StructuralBound, Error> {
    use crate::channel::{propagate, PropagateOptions};
    use crate::protocol::DirectLinkMode;
    if sched.cycles <= 1 && sched.direct_link_mode == DirectLinkMode::None {
        let tm = propagate(net, sched, fading, PropagateOptions::cycles(1))?;
        return bound_from_structure(&tm);
    }
    let cycles = (3 * sched.cycles).max(6);
    let tm = propagate(net, sched, fading, PropagateOptions::cycles(cycles))?;
    steady_state_bound(&tm, sched.rate())
}

impl PartialOrd for DmtCurve {
    /// Curves are ordered only when one dominates the other pointwise.
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        let le = self.dominated_by(other);
        let ge = other.dominated_by(self);
        match (le, ge) {
            (true, true) => Some(Ordering::Equal),
            (true, false) => Some(Ordering::Less),
            (false, true) => Some(Ordering::Greater),
            _ => None,
        }
    }
}
