mod params;

// stdout may be a closed pipe (`relaynet ... | head`); losing the rest of the
// summary is fine there
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use relaynet::channel::FadingRealization;
use relaynet::dmt::{family_dmt, schedule_bound, to_f64, DmtCurve, FamilyDmt};
use relaynet::montecarlo::{outage_sweep, trial_rng, OutageEstimate, SimPlan, Whitening};
use relaynet::netgraph::{classify, min_cut, Family, Network};
use relaynet::protocol::{check_causal_interference, idle_relays, validate_orthogonal, Schedule};
use relaynet::Error;

use params::{build_schedule, FamilyParams};

#[derive(Parser)]
#[command(name = "relaynet", version, about = "Amplify-and-forward relay network analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the network family, min-cut and backbone.
    Classify(NetArgs),
    /// Build the family's activation schedule and check it.
    Schedule {
        #[command(flatten)]
        net: NetArgs,
        /// Where to write the schedule (TOML).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic DMT curves: family achievable and cut-set curves plus the
    /// bound read off the scheduled channel.
    Analyze {
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        out: OutArgs,
        /// Seed of the fading draw used to read the channel structure.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Monte Carlo outage sweep.
    Simulate {
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Use a schedule file instead of building one.
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Analytic d(r) next to the simulated slope at each rate.
    Compare {
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        out: OutArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Allowed |slope - d(r)|.
        #[arg(long, default_value_t = 0.35)]
        tolerance: f64,
    },
}

#[derive(Args)]
struct NetArgs {
    /// Network description (TOML).
    #[arg(long)]
    network: PathBuf,
    /// Comma separated key=value schedule options, e.g. protocol=slotted-af,frame=5.
    #[arg(long, default_value = "")]
    family_params: String,
}

#[derive(Args)]
struct OutArgs {
    /// Machine-readable output file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format; defaults to the file extension, then csv.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    snr_min: f64,
    #[arg(long, default_value_t = 40.0, allow_negative_numbers = true)]
    snr_max: f64,
    #[arg(long, default_value_t = 5.0)]
    snr_step: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Multiplexing gains, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    rates: Vec<f64>,
    /// Number of top SNR points in the slope fit.
    #[arg(long, default_value_t = 4)]
    fit_points: usize,
    /// Skip noise whitening (identity noise covariance).
    #[arg(long)]
    identity_sigma: bool,
}

enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidPlan(_) => CliError::Usage(e.to_string()),
            Error::Numerical(_) => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn load_network(args: &NetArgs) -> CliResult<(Network, FamilyParams)> {
    let params: FamilyParams = args.family_params.parse().map_err(CliError::Usage)?;
    Ok((Network::load(&args.network)?, params))
}

fn format_for(out: &OutArgs) -> Format {
    out.format.unwrap_or_else(|| match out.out.as_ref().and_then(|p| p.extension()) {
        Some(ext) if ext == "json" => Format::Json,
        _ => Format::Csv,
    })
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    say!("wrote {}", path.display());
    Ok(())
}

fn curve_text(c: &DmtCurve) -> String {
    c.breakpoints().iter().map(|(r, d)| format!("({r}, {d})")).collect::<Vec<_>>().join(", ")
}

fn plan_from(sim: &SimArgs, params: &FamilyParams) -> CliResult<SimPlan> {
    if sim.rates.is_empty() {
        return Err(CliError::Usage("--rates must list at least one value".into()));
    }
    if sim.trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    if sim.snr_step <= 0.0 || sim.snr_step.is_nan() || sim.snr_max < sim.snr_min {
        return Err(CliError::Usage("need --snr-step > 0 and --snr-max >= --snr-min".into()));
    }
    let mut plan = SimPlan::new(SimPlan::grid(sim.snr_min, sim.snr_max, sim.snr_step), sim.rates.clone(), sim.trials, sim.seed);
    plan.fit_points = sim.fit_points;
    plan.cycles = params.cycles;
    if sim.identity_sigma {
        plan.whitening = Whitening::IdentitySigma;
    }
    plan.validate()?;
    Ok(plan)
}

fn cmd_classify(args: &NetArgs) -> CliResult<()> {
    let (net, _) = load_network(args)?;
    let class = classify(&net)?;
    let cut = min_cut(&net)?;
    match class.k() {
        Some(k) if !matches!(class.family, Family::Other) => say!("{}, K={k}, min-cut {cut}", class.family),
        _ => say!("{}, min-cut {cut}", class.family),
    }
    if let Some(bb) = &class.backbone {
        for (i, p) in bb.describe(&net).iter().enumerate() {
            say!("  path {}: {p}", i + 1);
        }
    }
    if let Some(layers) = &class.layering {
        let sizes: Vec<usize> = layers.iter().map(|l| l.len()).collect();
        say!("  layers {sizes:?}{}", if class.fully_connected { " (fully connected)" } else { "" });
    }
    if class.direct_link {
        say!("  direct source-sink link");
    }
    for &(a, b) in &class.interference_links {
        say!("  interference link {}-{}", net.id(a), net.id(b));
    }
    Ok(())
}

fn cmd_schedule(args: &NetArgs, out: Option<&Path>) -> CliResult<()> {
    let (net, params) = load_network(args)?;
    let sched = build_schedule(&net, &params)?;
    say!("cycle length {}, rate {}, {} paths", sched.cycle_length, sched.rate(), sched.paths.len());
    if let Ok(rep) = validate_orthogonal(&net, &sched) {
        let mark = |b: bool| if b { "ok" } else { "FAILED" };
        say!("  first edges disjoint: {}", mark(rep.first_edges_disjoint));
        say!("  last edges disjoint: {}", mark(rep.last_edges_disjoint));
        say!("  half duplex: {}", mark(rep.half_duplex));
        say!("  equal activation counts: {}", mark(rep.equal_counts));
        say!("  back-flow free: {}", if rep.backflow_free() { "yes" } else { "no" });
    }
    let class = classify(&net)?;
    if matches!(class.family, Family::KppI { .. }) {
        let rep = check_causal_interference(&net, &sched)?;
        say!("  causal interference: {}", if rep.passes() { "ok" } else { "FAILED" });
    }
    let idle = idle_relays(&net, &sched);
    if !idle.is_empty() {
        let names: Vec<&str> = idle.iter().map(|&v| net.id(v)).collect();
        say!("  idle relays: {}", names.join(", "));
    }
    if !sched.added_delays.is_empty() {
        for (&v, &d) in &sched.added_delays {
            say!("  relay {} waits {d} extra slot(s)", net.id(v));
        }
    }
    if let Some(path) = out {
        sched.save(&net, path)?;
        say!("wrote {}", path.display());
    }
    Ok(())
}

/// Lower bound read off the scheduled channel for one fading draw.
fn protocol_bound(net: &Network, sched: &Schedule, seed: u64) -> Result<DmtCurve, Error> {
    let mut rng = trial_rng(seed, 0);
    let f = FadingRealization::rayleigh_reciprocal(net, &mut rng);
    Ok(schedule_bound(net, sched, &f)?.protocol_bound)
}

#[derive(Serialize)]
struct CurveRow {
    curve: &'static str,
    r: f64,
    d: f64,
    r_exact: String,
    d_exact: String,
}

fn curve_rows(name: &'static str, c: &DmtCurve) -> Vec<CurveRow> {
    c.breakpoints()
        .iter()
        .map(|&(r, d)| CurveRow { curve: name, r: to_f64(r), d: to_f64(d), r_exact: r.to_string(), d_exact: d.to_string() })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, format: Format, rows: &[T], json: impl FnOnce() -> String) -> CliResult<()> {
    let text = match format {
        Format::Json => json(),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(|e| CliError::Internal(e.to_string()))?;
            }
            String::from_utf8(w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?)
                .map_err(|e| CliError::Internal(e.to_string()))?
        }
    };
    write_file(path, &text)
}

fn cmd_analyze(args: &NetArgs, out: &OutArgs, seed: u64) -> CliResult<()> {
    let (net, params) = load_network(args)?;
    let class = classify(&net)?;
    say!("{}, min-cut {}", class.family, min_cut(&net)?);
    let family: Option<FamilyDmt> = family_dmt(&net).ok();
    let bound = build_schedule(&net, &params).and_then(|s| protocol_bound(&net, &s, seed));
    if let (None, Err(e)) = (&family, &bound) {
        return Err(e.clone().into());
    }
    let mut rows = Vec::new();
    if let Some(f) = &family {
        say!("achievable: {}", curve_text(&f.achievable));
        say!("cut-set:    {}{}", curve_text(&f.cutset), if f.tight { " (tight)" } else { "" });
        rows.extend(curve_rows("achievable", &f.achievable));
        rows.extend(curve_rows("cutset", &f.cutset));
    }
    match &bound {
        Ok(b) => {
            say!("schedule bound: {}", curve_text(b));
            rows.extend(curve_rows("schedule", b));
        }
        Err(e) => say!("schedule bound unavailable: {e}"),
    }
    if let Some(path) = &out.out {
        write_rows(path, format_for(out), &rows, || {
            let mut obj = serde_json::Map::new();
            obj.insert("family".into(), class.family.to_string().into());
            for r in &rows {
                let entry = obj.entry(r.curve).or_insert_with(|| serde_json::Value::Array(vec![]));
                entry.as_array_mut().unwrap().push(serde_json::json!([r.r_exact, r.d_exact]));
            }
            serde_json::to_string_pretty(&obj).unwrap()
        })?;
    }
    Ok(())
}

fn print_estimate(est: &OutageEstimate) {
    say!("window {} slots", est.window_slots);
    for fit in &est.slopes {
        let counts: Vec<String> =
            est.points.iter().filter(|p| p.r == fit.r).map(|p| format!("{}:{}", p.snr_db, p.outages)).collect();
        match (fit.slope, fit.stderr) {
            (Some(s), Some(e)) => say!("r={}: slope {s:.3} ± {e:.3}  [{}]", fit.r, counts.join(" ")),
            (Some(s), None) => say!("r={}: slope {s:.3}  [{}]", fit.r, counts.join(" ")),
            _ => say!("r={}: too few outages for a slope  [{}]", fit.r, counts.join(" ")),
        }
    }
}

fn cmd_simulate(args: &NetArgs, out: &OutArgs, sim: &SimArgs, schedule: Option<&Path>) -> CliResult<()> {
    let (net, params) = load_network(args)?;
    let plan = plan_from(sim, &params)?;
    let sched = match schedule {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Schedule::from_toml(&net, &text)?
        }
        None => build_schedule(&net, &params)?,
    };
    let est = outage_sweep(&net, &sched, &plan)?;
    print_estimate(&est);
    if let Some(path) = &out.out {
        let text = match format_for(out) {
            Format::Csv => est.to_csv(),
            Format::Json => est.to_json(),
        };
        write_file(path, &text)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CompareRow {
    r: f64,
    analytic_d: f64,
    slope: Option<f64>,
    stderr: Option<f64>,
    difference: Option<f64>,
    tolerance: f64,
    within: bool,
}

fn cmd_compare(args: &NetArgs, out: &OutArgs, sim: &SimArgs, tolerance: f64) -> CliResult<()> {
    let (net, params) = load_network(args)?;
    let plan = plan_from(sim, &params)?;
    let sched = build_schedule(&net, &params)?;
    let curve = match family_dmt(&net) {
        Ok(f) => f.achievable,
        Err(_) => protocol_bound(&net, &sched, sim.seed)?,
    };
    let est = outage_sweep(&net, &sched, &plan)?;
    let rows: Vec<CompareRow> = est
        .slopes
        .iter()
        .map(|fit| {
            let d = curve.eval_f64(fit.r);
            let diff = fit.slope.map(|s| s - d);
            CompareRow {
                r: fit.r,
                analytic_d: d,
                slope: fit.slope,
                stderr: fit.stderr,
                difference: diff,
                tolerance,
                within: diff.is_some_and(|x| x.abs() <= tolerance),
            }
        })
        .collect();
    let mut table = format!("{:>6} {:>10} {:>10} {:>8} {:>8}\n", "r", "d(r)", "slope", "diff", "within");
    for row in &rows {
        let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(
            table,
            "{:>6} {:>10.3} {:>10} {:>8} {:>8}",
            row.r,
            row.analytic_d,
            opt(row.slope),
            opt(row.difference),
            if row.within { "yes" } else { "no" }
        );
    }
    say!("{}", table.trim_end());
    if let Some(path) = &out.out {
        write_rows(path, format_for(out), &rows, || serde_json::to_string_pretty(&rows).unwrap())?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Classify(net) => cmd_classify(net),
        Command::Schedule { net, out } => cmd_schedule(net, out.as_deref()),
        Command::Analyze { net, out, seed } => cmd_analyze(net, out, *seed),
        Command::Simulate { net, out, sim, schedule } => cmd_simulate(net, out, sim, schedule.as_deref()),
        Command::Compare { net, out, sim, tolerance } => cmd_compare(net, out, sim, *tolerance),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(CliError::Usage(m))) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Ok(Err(CliError::Data(m))) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Ok(Err(CliError::Internal(m))) => {
            eprintln!("internal error: {m}");
            ExitCode::from(4)
        }
        Err(_) => ExitCode::from(4),
    }
}
