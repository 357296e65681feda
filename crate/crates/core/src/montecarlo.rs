//! Outage probability estimation over Rayleigh fading and diversity slope fits.
//!
//! Every trial draws one fading realization from its own ChaCha stream and the
//! same realization is scored at every (SNR, r) grid point, so curves at
//! different points are compared on common random numbers.

use nalgebra::{DMatrix, SymmetricEigen};
use num::complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelPlan, FadingRealization, Reception, TransferModel};
use crate::netgraph::Network;
use crate::protocol::Schedule;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Whitening {
    /// log det(I + ρ H† Σ⁻¹ H)
    #[default]
    ExactSigma,
    /// log det(I + ρ H† H)
    IdentitySigma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimPlan {
    pub snr_grid_db: Vec<f64>,
    pub rates: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub whitening: Whitening,
    /// Overrides the schedule's default cycle count.
    #[serde(default)]
    pub cycles: Option<usize>,
    #[serde(default)]
    pub reception: Reception,
    /// Fixed rate offset in bits per slot added to r·log2(ρ). Without it the
    /// r = 0 threshold is zero and outage never happens.
    #[serde(default = "default_offset")]
    pub rate_offset_bits: f64,
    /// Minimum outage count for a point to enter the slope fit.
    #[serde(default = "default_floor")]
    pub count_floor: usize,
    /// Number of highest-SNR eligible points used in the fit.
    #[serde(default = "default_fit_points")]
    pub fit_points: usize,
}

fn default_offset() -> f64 {
    1.0
}
fn default_floor() -> usize {
    25
}
fn default_fit_points() -> usize {
    4
}

impl SimPlan {
    pub fn new(snr_grid_db: Vec<f64>, rates: Vec<f64>, trials: usize, seed: u64) -> Self {
        SimPlan {
            snr_grid_db,
            rates,
            trials,
            seed,
            whitening: Whitening::ExactSigma,
            cycles: None,
            reception: Reception::Broadcast,
            rate_offset_bits: default_offset(),
            count_floor: default_floor(),
            fit_points: default_fit_points(),
        }
    }

    /// Evenly spaced grid from `lo` to `hi` inclusive.
    pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| lo + step * i as f64).collect()
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.trials == 0 {
            return Err(Error::InvalidPlan("trials must be at least 1".into()));
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPlan("SNR grid must be non-empty and strictly increasing".into()));
        }
        if self.rates.is_empty() || self.rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidPlan("rates must be a non-empty list of values >= 0".into()));
        }
        if self.fit_points < 2 {
            return Err(Error::InvalidPlan("slope fit needs at least two points".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutagePoint {
    pub snr_db: f64,
    pub r: f64,
    pub trials: usize,
    pub outages: usize,
    pub p_out: f64,
    /// Wilson 95% interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

impl OutagePoint {
    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub r: f64,
    pub slope: Option<f64>,
    /// Standard error propagated from the binomial uncertainty of the points.
    pub stderr: Option<f64>,
    /// Root mean square residual of the fit.
    pub residual: Option<f64>,
    pub points_used: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutageEstimate {
    pub points: Vec<OutagePoint>,
    pub slopes: Vec<SlopeFit>,
    pub window_slots: usize,
}

impl OutageEstimate {
    pub fn slope(&self, r: f64) -> Option<f64> {
        self.slopes.iter().find(|s| (s.r - r).abs() < 1e-12).and_then(|s| s.slope)
    }

    pub fn point(&self, snr_db: f64, r: f64) -> Option<&OutagePoint> {
        self.points
            .iter()
            .find(|p| (p.snr_db - snr_db).abs() < 1e-9 && (p.r - r).abs() < 1e-12)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rho_db", "r", "trials", "outages", "p_out", "ci"]).unwrap();
        for p in &self.points {
            w.write_record([
                format!("{}", p.snr_db),
                format!("{}", p.r),
                p.trials.to_string(),
                p.outages.to_string(),
                format!("{:.6e}", p.p_out),
                format!("{:.6e}", p.half_width()),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap()
    }
}

/// Wilson score interval at z = 1.96.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = n as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * ((p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt()) / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Eigenvalues of H†Σ⁻¹H (or H†H); the mutual information at any SNR is
/// Σ log2(1 + ρλ).
pub fn gain_spectrum(tm: &TransferModel, whitening: Whitening) -> Result<Vec<f64>, Error> {
    if tm.h.ncols() == 0 || tm.h.nrows() == 0 {
        return Ok(Vec::new());
    }
    let x = match whitening {
        Whitening::IdentitySigma => tm.h.clone(),
        Whitening::ExactSigma => {
            let chol = tm
                .sigma
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Numerical("noise covariance is not positive definite".into()))?;
            chol.l().solve_lower_triangular(&tm.h).ok_or_else(|| {
                Error::Numerical("singular noise covariance factor".into())
            })?
        }
    };
    // the smaller Gram matrix has the same nonzero spectrum
    let gram: DMatrix<Complex64> =
        if x.nrows() < x.ncols() { &x * x.adjoint() } else { x.adjoint() * &x };
    let eig = SymmetricEigen::new(gram);
    Ok(eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect())
}

/// Mutual information in bits over the observation window.
pub fn mutual_info(tm: &TransferModel, rho: f64, whitening: Whitening) -> Result<f64, Error> {
    if rho <= 0.0 {
        return Err(Error::InvalidPlan("SNR must be positive".into()));
    }
    Ok(mi_from_spectrum(&gain_spectrum(tm, whitening)?, rho))
}

pub fn mi_from_spectrum(spectrum: &[f64], rho: f64) -> f64 {
    spectrum.iter().map(|&l| (1.0 + rho * l).log2()).sum()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Outage threshold in bits for the whole window.
pub fn outage_threshold(window_slots: usize, r: f64, rho: f64, offset_bits: f64) -> f64 {
    window_slots as f64 * (r * rho.log2() + offset_bits)
}

/// Per-trial RNG: the master seed with the trial index as stream.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// How each trial's transfer model is produced.
pub trait TrialModel: Sync {
    fn window_slots(&self) -> usize;
    fn realize(&self, trial: u64, seed: u64) -> Result<Vec<TransferModel>, Error>;
}

/// Schedule run on a network, optionally under several reception modes
/// sharing the fading draw.
pub struct ScheduledModel<'a> {
    net: &'a Network,
    plans: Vec<ChannelPlan>,
    window: usize,
}

impl<'a> ScheduledModel<'a> {
    pub fn new(net: &'a Network, sched: &Schedule, cycles: usize, receptions: &[Reception]) -> Result<Self, Error> {
        if net.nodes().iter().any(|n| n.role == crate::netgraph::Role::Relay && n.antennas != 1) {
            return Err(Error::Unsupported("multi-antenna relays must be expanded first".into()));
        }
        let plans = receptions
            .iter()
            .map(|&r| ChannelPlan::new(net, sched, cycles, r))
            .collect::<Result<Vec<_>, _>>()?;
        // window from a generic realization
        let mut rng = trial_rng(0, u64::MAX);
        let probe = plans[0].realize(&FadingRealization::rayleigh_reciprocal(net, &mut rng), false);
        Ok(ScheduledModel { net, plans, window: probe.window_slots })
    }
}

impl TrialModel for ScheduledModel<'_> {
    fn window_slots(&self) -> usize {
        self.window
    }

    fn realize(&self, trial: u64, seed: u64) -> Result<Vec<TransferModel>, Error> {
        let mut rng = trial_rng(seed, trial);
        let fading = FadingRealization::rayleigh_reciprocal(self.net, &mut rng);
        Ok(self.plans.iter().map(|p| p.realize(&fading, false)).collect())
    }
}

/// Outage counts for several variants of a model on common fading draws.
/// Variant v is scored with `whitenings[v]` on transfer model `models[v]`.
fn sweep_counts(
    model: &dyn TrialModel,
    plan: &SimPlan,
    variants: &[(usize, Whitening)],
) -> Result<Vec<Vec<usize>>, Error> {
    plan.validate()?;
    let window = model.window_slots();
    let thresholds: Vec<Vec<f64>> = plan
        .snr_grid_db
        .iter()
        .map(|&db| {
            let rho = db_to_linear(db);
            plan.rates.iter().map(|&r| outage_threshold(window, r, rho, plan.rate_offset_bits)).collect()
        })
        .collect();
    let n_points = plan.snr_grid_db.len() * plan.rates.len();
    let zero = || vec![vec![0usize; n_points]; variants.len()];
    let counts = (0..plan.trials as u64)
        .into_par_iter()
        .try_fold(zero, |mut acc, trial| -> Result<Vec<Vec<usize>>, Error> {
            let tms = model.realize(trial, plan.seed)?;
            for (v, &(mi, w)) in variants.iter().enumerate() {
                let spec = gain_spectrum(&tms[mi], w)?;
                for (a, &db) in plan.snr_grid_db.iter().enumerate() {
                    let info = mi_from_spectrum(&spec, db_to_linear(db));
                    for b in 0..plan.rates.len() {
                        if info < thresholds[a][b] {
                            acc[v][a * plan.rates.len() + b] += 1;
                        }
                    }
                }
            }
            Ok(acc)
        })
        .try_reduce(zero, |mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                for (p, q) in x.iter_mut().zip(y) {
                    *p += q;
                }
            }
            Ok(a)
        })?;
    Ok(counts)
}

fn build_estimate(plan: &SimPlan, counts: &[usize], window: usize) -> OutageEstimate {
    let mut points = Vec::new();
    for (a, &db) in plan.snr_grid_db.iter().enumerate() {
        for (b, &r) in plan.rates.iter().enumerate() {
            let k = counts[a * plan.rates.len() + b];
            let (lo, hi) = wilson_interval(k, plan.trials);
            points.push(OutagePoint {
                snr_db: db,
                r,
                trials: plan.trials,
                outages: k,
                p_out: k as f64 / plan.trials as f64,
                ci_low: lo,
                ci_high: hi,
            });
        }
    }
    let slopes = plan
        .rates
        .iter()
        .map(|&r| {
            let pts: Vec<&OutagePoint> = points.iter().filter(|p| p.r == r).collect();
            fit_slope(r, &pts, plan.count_floor, plan.fit_points)
        })
        .collect();
    OutageEstimate { points, slopes, window_slots: window }
}

/// Least-squares slope of −log10 P_out against log10 ρ over the highest-SNR
/// points whose outage count reaches `floor`.
pub fn fit_slope(r: f64, points: &[&OutagePoint], floor: usize, fit_points: usize) -> SlopeFit {
    let mut eligible: Vec<&&OutagePoint> = points.iter().filter(|p| p.outages >= floor).collect();
    eligible.sort_by(|a, b| a.snr_db.partial_cmp(&b.snr_db).unwrap());
    let take = eligible.len().min(fit_points);
    let used: Vec<&&OutagePoint> = eligible[eligible.len() - take..].to_vec();
    if used.len() < 2 {
        return SlopeFit { r, slope: None, stderr: None, residual: None, points_used: Vec::new() };
    }
    let x: Vec<f64> = used.iter().map(|p| p.snr_db / 10.0).collect();
    let y: Vec<f64> = used.iter().map(|p| -p.p_out.log10()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let slope = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    // var(log10 p̂) ≈ (1 − p) / (n p ln²10)
    let var: f64 = used
        .iter()
        .zip(&x)
        .map(|(p, xi)| {
            let w = (xi - mx) / sxx;
            let vy = (1.0 - p.p_out) / (p.trials as f64 * p.p_out) / std::f64::consts::LN_10.powi(2);
            w * w * vy
        })
        .sum();
    SlopeFit {
        r,
        slope: Some(slope),
        stderr: Some(var.sqrt()),
        residual: Some((rss / n).sqrt()),
        points_used: used.iter().map(|p| p.snr_db).collect(),
    }
}

fn cycles_for(sched: &Schedule, plan: &SimPlan) -> usize {
    plan.cycles.unwrap_or(sched.cycles).max(1)
}

pub fn outage_sweep(net: &Network, sched: &Schedule, plan: &SimPlan) -> Result<OutageEstimate, Error> {
    let model = ScheduledModel::new(net, sched, cycles_for(sched, plan), &[plan.reception])?;
    outage_sweep_model(&model, plan)
}

pub fn outage_sweep_model(model: &dyn TrialModel, plan: &SimPlan) -> Result<OutageEstimate, Error> {
    let counts = sweep_counts(model, plan, &[(0, plan.whitening)])?;
    Ok(build_estimate(plan, &counts[0], model.window_slots()))
}

/// Paired comparison of two sweeps on the same fading draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub first: OutageEstimate,
    pub second: OutageEstimate,
    /// p_first / p_second per grid point (None when the second is zero).
    pub ratios: Vec<Option<f64>>,
    /// slope_first − slope_second per rate.
    pub slope_differences: Vec<Option<f64>>,
}

impl Comparison {
    fn new(first: OutageEstimate, second: OutageEstimate) -> Self {
        let ratios = first
            .points
            .iter()
            .zip(&second.points)
            .map(|(a, b)| (b.p_out > 0.0).then(|| a.p_out / b.p_out))
            .collect();
        let slope_differences = first
            .slopes
            .iter()
            .zip(&second.slopes)
            .map(|(a, b)| Some(a.slope? - b.slope?))
            .collect();
        Comparison { first, second, ratios, slope_differences }
    }

    pub fn max_abs_slope_difference(&self) -> Option<f64> {
        self.slope_differences.iter().flatten().map(|d| d.abs()).fold(None, |m, d| Some(m.map_or(d, |x: f64| x.max(d))))
    }
}

/// Exact-Σ sweep (first) against identity-Σ sweep (second).
pub fn whitening_check(net: &Network, sched: &Schedule, plan: &SimPlan) -> Result<Comparison, Error> {
    let model = ScheduledModel::new(net, sched, cycles_for(sched, plan), &[plan.reception])?;
    let counts = sweep_counts(&model, plan, &[(0, Whitening::ExactSigma), (0, Whitening::IdentitySigma)])?;
    let w = model.window_slots();
    Ok(Comparison::new(build_estimate(plan, &counts[0], w), build_estimate(plan, &counts[1], w)))
}

/// Back-flow retained (first) against back-flow zeroed (second). On a KPP
/// network the only unscheduled receptions are back-flow, so zeroing them is
/// the scheduled-only reception mode.
pub fn backflow_check(net: &Network, sched: &Schedule, plan: &SimPlan) -> Result<Comparison, Error> {
    let model = ScheduledModel::new(
        net,
        sched,
        cycles_for(sched, plan),
        &[Reception::Broadcast, Reception::ScheduledOnly],
    )?;
    let counts = sweep_counts(&model, plan, &[(0, plan.whitening), (1, plan.whitening)])?;
    let w = model.window_slots();
    Ok(Comparison::new(build_estimate(plan, &counts[0], w), build_estimate(plan, &counts[1], w)))
}
