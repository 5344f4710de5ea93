use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use hosc::datagen::Dataset;
use hosc::error::{Error, Result};
use hosc::estimate::{estimate_practical, estimate_theoretical, PracticalOptions};
use hosc::graph::PairScale;
use hosc::harness::bench::{run_benchmark, BenchConfig, BenchOptions, GridSpec, Grids};
use hosc::harness::io::{read_csv, read_labels, write_csv, write_curve, write_labels};
use hosc::harness::svg::{emit_svg_scatter, Projection};
use hosc::model::{default_rho, theory_defaults, ClusterCount, HoscParams, KRule, Kernel, PointCloud, Scale, Truth};
use hosc::outliers::{detect_o1, detect_o2, detect_quantile, o2_scales, select_eta_outliers, OutlierReport};
use hosc::spectral::{select_eta, select_sc_scale, HoscRunner, ScParams, ScRunner};

const EXIT_USAGE: u8 = 2;
const EXIT_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "hosc", version, about = "Higher-order spectral clustering of point clouds near smooth surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a named synthetic dataset as CSV.
    Generate(GenerateArgs),
    /// Cluster a CSV cloud and write one label row per point.
    Cluster(ClusterArgs),
    /// Estimate intrinsic dimension and jitter; prints JSON.
    Estimate(EstimateArgs),
    /// Flag low-degree points as outliers.
    Outliers(OutlierArgs),
    /// Run a benchmark sweep described by a JSON config.
    Bench(BenchArgs),
    /// Scatter plot of a cloud colored by labels.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Line separation (two_lines only).
    #[arg(long)]
    delta: Option<f64>,
    /// Jitter (two_lines and curves_d10 only).
    #[arg(long)]
    tau: Option<f64>,
    /// Share of uniform background points in the output.
    #[arg(long)]
    outlier_fraction: Option<f64>,
    /// Seed of the background points; defaults to `--seed`.
    #[arg(long)]
    outlier_seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Hosc,
    Sc,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Simple,
    Heat,
}

impl From<KernelArg> for Kernel {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Simple => Kernel::Simple,
            KernelArg::Heat => Kernel::Heat,
        }
    }
}

#[derive(Clone, Copy)]
enum KArg {
    Fixed(usize),
    Auto,
}

fn parse_k(s: &str) -> std::result::Result<KArg, String> {
    if s == "auto" {
        return Ok(KArg::Auto);
    }
    match s.parse::<usize>() {
        Ok(k) if k > 0 => Ok(KArg::Fixed(k)),
        _ => Err(format!("expected a positive integer or `auto`, got {s:?}")),
    }
}

fn parse_grid(s: &str) -> std::result::Result<GridSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts[..] else {
        return Err(format!("expected LO:HI:N, got {s:?}"));
    };
    let lo: f64 = lo.parse().map_err(|_| format!("bad lower end {lo:?}"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("bad upper end {hi:?}"))?;
    let n: usize = n.parse().map_err(|_| format!("bad count {n:?}"))?;
    if !(lo > 0.0 && hi >= lo && n >= 1) {
        return Err(format!("need 0 < LO ≤ HI and N ≥ 1, got {s:?}"));
    }
    Ok(GridSpec { lo, hi, n })
}

fn positive(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

/// Options shared by every command that builds an affinity graph.
#[derive(Args)]
struct GraphArgs {
    #[arg(long, value_enum, default_value = "hosc")]
    algo: Algo,
    /// Approximation dimension; estimated from the data when `--theory` is set.
    #[arg(long)]
    d: Option<usize>,
    /// Tuple size; defaults to d + 2.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 10)]
    ell: usize,
    /// Flatness scale.
    #[arg(long, value_parser = positive, conflicts_with = "eta_grid")]
    eta: Option<f64>,
    /// Logarithmic flatness grid searched for the best scale.
    #[arg(long, value_parser = parse_grid)]
    eta_grid: Option<GridSpec>,
    #[arg(long, value_enum, default_value = "heat")]
    kernel: KernelArg,
    /// Fixed pairwise scale (sc) or tuple diameter cutoff (hosc).
    #[arg(long, value_parser = positive)]
    epsilon: Option<f64>,
    /// Local scaling neighbor (sc only).
    #[arg(long, conflicts_with = "epsilon")]
    local_ell: Option<usize>,
    #[arg(long, value_parser = positive)]
    rho: Option<f64>,
    /// Take d, m, ε and η from the jitter estimator and the consistency theory.
    #[arg(long)]
    theory: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    graph: GraphArgs,
    /// Number of clusters, or `auto` for the eigengap.
    #[arg(long, value_parser = parse_k)]
    k: KArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Theoretical,
    Practical,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Defaults to max(2, log log N).
    #[arg(long, value_parser = positive)]
    rho: Option<f64>,
    #[arg(long, value_enum, default_value = "theoretical")]
    mode: Mode,
    /// Also write the pairwise correlation curve (practical mode).
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    O1,
    O2,
    Quantile,
}

#[derive(Args)]
struct OutlierArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    rule: Rule,
    /// Known outlier share (quantile rule).
    #[arg(long)]
    fraction: Option<f64>,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Record wall-clock seconds per cell (makes the report time dependent).
    #[arg(long)]
    timings: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProjectionArg {
    FirstTwo,
    Pca,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Label file from `cluster`; the cloud's own labels are used otherwise.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "first-two")]
    projection: ProjectionArg,
    #[arg(long)]
    out: PathBuf,
}

fn threads_from_env() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var("HOSC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("HOSC_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = threads_from_env() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    let outcome = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Cluster(a) => cluster(a),
        Command::Estimate(a) => estimate(a),
        Command::Outliers(a) => outliers(a),
        Command::Bench(a) => bench(a),
        Command::Plot(a) => plot(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let ds = Dataset::from_name(&a.dataset, a.delta, a.tau)?;
    let cloud = match a.outlier_fraction {
        Some(f) => ds.generate_with_outliers(a.seed, f, a.outlier_seed.unwrap_or(a.seed))?,
        None => ds.generate(a.seed)?,
    };
    write_csv(&cloud, &a.out)
}

/// Resolved higher-order parameters and the flatness scales to try.
fn hosc_setup(cloud: &PointCloud, g: &GraphArgs, k: ClusterCount) -> Result<(HoscParams, Vec<f64>)> {
    let rho = g.rho.unwrap_or_else(|| default_rho(cloud.len()));
    let mut p = HoscParams::practical(g.d.unwrap_or(1), 1, 0.01);
    p.k = k;
    p.ell = g.ell;
    p.kernel = g.kernel.into();
    p.rho = rho;
    p.seed = g.seed;
    if let Some(eps) = g.epsilon {
        p.epsilon = Scale::Finite(eps);
    }
    if g.theory {
        let est = estimate_theoretical(cloud, rho)?;
        p.d = g.d.unwrap_or(est.d_hat);
        let t = theory_defaults(cloud.len(), p.d, cloud.dim(), est.tau_hat, rho)?;
        p.m = g.m.unwrap_or(t.m);
        p.epsilon = Scale::Finite(g.epsilon.unwrap_or(t.epsilon));
        p.kernel = Kernel::Simple;
        p.eta = t.eta;
    } else {
        p.m = g.m.unwrap_or(p.d + 2);
    }
    let grid = match (g.eta, g.eta_grid) {
        (Some(eta), _) => vec![eta],
        (None, Some(spec)) => spec.values(),
        (None, None) if g.theory => vec![p.eta],
        (None, None) => Grids::default().eta.values(),
    };
    p.eta = grid[0];
    Ok((p, grid))
}

fn sc_scales(g: &GraphArgs) -> Vec<PairScale> {
    match (g.epsilon, g.local_ell) {
        (Some(eps), _) => vec![PairScale::Fixed(eps)],
        (None, Some(l)) => vec![PairScale::Local(l)],
        (None, None) => {
            let (fixed, local) = Grids::default().pair_scales();
            fixed.into_iter().chain(local).collect()
        }
    }
}

fn scale_json(s: PairScale) -> serde_json::Value {
    match s {
        PairScale::Fixed(eps) => json!({ "epsilon": eps }),
        PairScale::Local(l) => json!({ "local_ell": l }),
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let cloud = read_csv(&a.input)?;
    let k = match a.k {
        KArg::Fixed(k) => ClusterCount::Fixed(k),
        KArg::Auto => ClusterCount::Auto(KRule::Gap),
    };
    let (result, chosen) = match a.graph.algo {
        Algo::Hosc => {
            let (params, grid) = hosc_setup(&cloud, &a.graph, k)?;
            let (eta, result) = select_eta(&cloud, &params, &grid)?;
            (result, json!({ "d": params.d, "m": params.m, "eta": eta }))
        }
        Algo::Sc => {
            let mut params = ScParams::new(1);
            params.k = k;
            params.kernel = a.graph.kernel.into();
            params.seed = a.graph.seed;
            params.rho = a.graph.rho.unwrap_or_else(|| default_rho(cloud.len()));
            let (scale, result) = select_sc_scale(&cloud, &params, &sc_scales(&a.graph))?;
            (result, scale_json(scale))
        }
    };
    write_labels(&result, File::create(&a.out)?)?;
    print_json(&json!({ "k": result.k, "chosen": chosen, "eigenvalues": result.eigenvalues }))
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let cloud = read_csv(&a.input)?;
    let rho = a.rho.unwrap_or_else(|| default_rho(cloud.len()));
    let value = match a.mode {
        Mode::Theoretical => {
            if a.curve.is_some() {
                return Err(Error::InvalidParams("--curve needs --mode practical".into()));
            }
            json!({ "mode": "theoretical", "rho": rho, "estimate": estimate_theoretical(&cloud, rho)? })
        }
        Mode::Practical => {
            let est = estimate_practical(&cloud, &PracticalOptions::default())?;
            if let Some(path) = &a.curve {
                write_curve(&est.pairwise.log_scales, &est.pairwise.log_corr, File::create(path)?)?;
            }
            json!({ "mode": "practical", "estimate": est.result })
        }
    };
    match a.out {
        Some(path) => {
            let mut f = File::create(path)?;
            serde_json::to_writer_pretty(&mut f, &value)?;
            writeln!(f)?;
            Ok(())
        }
        None => print_json(&value),
    }
}

fn outliers(a: OutlierArgs) -> Result<()> {
    let cloud = read_csv(&a.input)?;
    let fraction = match (a.rule, a.fraction) {
        (Rule::Quantile, Some(f)) => f,
        (Rule::Quantile, None) => return Err(Error::InvalidParams("the quantile rule needs --fraction".into())),
        _ => 0.0,
    };
    let g = &a.graph;
    let (report, chosen) = match g.algo {
        Algo::Hosc => {
            let (mut params, grid) = hosc_setup(&cloud, g, ClusterCount::Fixed(1))?;
            let eta = match a.rule {
                Rule::Quantile if grid.len() > 1 => select_eta_outliers(&cloud, &params, &grid, fraction)?.0,
                Rule::O2 if g.eta.is_none() && g.eta_grid.is_none() && !g.theory => {
                    let (eps, eta) = o2_scales(cloud.len(), params.d, cloud.dim(), params.rho);
                    params.epsilon = Scale::Finite(g.epsilon.unwrap_or(eps));
                    eta
                }
                _ if grid.len() > 1 => {
                    return Err(Error::InvalidParams("this rule needs a single --eta".into()));
                }
                _ => grid[0],
            };
            let degrees = HoscRunner::new(&cloud, &params)?.degrees(eta);
            let report = degree_rule(a.rule, &degrees, &params, eta, fraction, &cloud)?;
            (report, json!({ "d": params.d, "m": params.m, "eta": eta }))
        }
        Algo::Sc => {
            let scales = sc_scales(g);
            let [scale] = scales[..] else {
                return Err(Error::InvalidParams("pairwise outliers need --epsilon or --local-ell".into()));
            };
            let runner = ScRunner::new(&cloud, &ScParams::new(1))?;
            let degrees = runner.degrees(scale);
            let rho = g.rho.unwrap_or_else(|| default_rho(cloud.len()));
            let report = match a.rule {
                Rule::O1 => detect_o1(&degrees, 2, rho)?,
                Rule::Quantile => detect_quantile(&degrees, 2, fraction)?,
                Rule::O2 => return Err(Error::InvalidParams("the absolute degree rule needs multiway degrees".into())),
            };
            (report, scale_json(scale))
        }
    };
    let mut w = csv::Writer::from_writer(File::create(&a.out)?);
    w.write_record(["outlier", "normalized_degree"])?;
    for (o, v) in report.mask.iter().zip(&report.normalized_degrees) {
        w.write_record([u8::from(*o).to_string(), v.to_string()])?;
    }
    w.flush()?;
    print_json(&json!({ "flagged": report.count(), "threshold": report.threshold_used, "chosen": chosen }))
}

fn degree_rule(rule: Rule, degrees: &[f64], p: &HoscParams, eta: f64, fraction: f64, cloud: &PointCloud) -> Result<OutlierReport> {
    match rule {
        Rule::O1 => detect_o1(degrees, p.m, p.rho),
        Rule::O2 => detect_o2(degrees, p.m, p.rho, cloud.len(), p.epsilon, eta, p.d, cloud.dim()),
        Rule::Quantile => detect_quantile(degrees, p.m, fraction),
    }
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = BenchConfig::from_json(&std::fs::read_to_string(&a.config)?)?;
    let report = run_benchmark(&cfg, BenchOptions { timings: a.timings })?;
    std::fs::write(&a.out, report.to_json()?)?;
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let cloud = read_csv(&a.input)?;
    let (labels, mask) = match &a.labels {
        Some(path) => read_labels(File::open(path)?)?,
        None => match cloud.truth() {
            Some(t) => (
                t.iter().map(|l| l.cluster().unwrap_or(0)).collect(),
                t.iter().map(|l| matches!(l, Truth::Outlier)).collect(),
            ),
            None => (vec![0; cloud.len()], vec![false; cloud.len()]),
        },
    };
    let projection = match a.projection {
        ProjectionArg::FirstTwo => Projection::FirstTwo,
        ProjectionArg::Pca => Projection::Pca,
    };
    emit_svg_scatter(&cloud, &labels, &mask, &a.out, projection)
}
