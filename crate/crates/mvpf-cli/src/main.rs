//! `mvpf`: simulate data, run filters, and sweep MSE against cost.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mvpf::lattice::LevelGrid;
use mvpf::ml::{run_mlpf, select_params};
use mvpf_cli::config::{fmt_f64, ConfigFile, ExperimentConfig, ModelKind, Profile};
use mvpf_cli::data::{simulate_data, write_data_csv};
use mvpf_cli::reference::{reference_count, reference_seed};
use mvpf_cli::sweep::{
    fits_from_rows, mse_sweep, parse_sweep_csv, per_time_csv, sweep_csv, CellTiming, SlopeFit,
    SweepRow,
};

#[derive(Parser)]
#[command(
    name = "mvpf",
    version,
    about = "Filtering benchmarks for partially observed mean-field SDE models"
)]
struct Cli {
    /// TOML config file applied over the profile defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in parameter profile.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    profile: Profile,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Reference cache directory. Defaults to OUT/cache.
    #[arg(long, global = true, value_name = "DIR")]
    cache_dir: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Per-field overrides; highest precedence, applied after the config file.
#[derive(Args)]
struct Overrides {
    /// Model variant.
    #[arg(long, global = true, value_enum)]
    model: Option<ModelKind>,
    #[arg(long, global = true)]
    theta: Option<f64>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Observation noise standard deviation.
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    x0: Option<f64>,
    /// Number of unit-time observation intervals.
    #[arg(long, global = true, value_name = "UNITS")]
    t: Option<usize>,
    #[arg(long, global = true)]
    data_level: Option<u32>,
    #[arg(long, global = true)]
    data_particles: Option<usize>,
    #[arg(long, global = true)]
    ref_level: Option<u32>,
    #[arg(long, global = true)]
    replications: Option<usize>,
    #[arg(long, global = true)]
    level_min: Option<u32>,
    #[arg(long, global = true)]
    level_max: Option<u32>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    const_n: Option<f64>,
    #[arg(long, global = true)]
    const_m: Option<f64>,
    #[arg(long, global = true)]
    const_l: Option<f64>,
    #[arg(long, global = true)]
    const_sl: Option<f64>,
    /// Record measured wall time in the sweep CSV (breaks byte-for-byte
    /// reproducibility of the CSV, timings are in the manifest either way).
    #[arg(long, global = true)]
    measure_wall_time: bool,
    /// Emit per-time MSE rows in addition to the final-time table.
    #[arg(long, global = true)]
    per_time_mse: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($field:ident),* $(,)?) => {
                $(if let Some(v) = self.$field {
                    cfg.$field = v;
                })*
            };
        }
        set!(
            model,
            theta,
            sigma,
            tau,
            x0,
            t,
            data_level,
            data_particles,
            ref_level,
            replications,
            level_min,
            level_max,
            seed,
            const_n,
            const_m,
            const_l,
            const_sl,
        );
        if self.measure_wall_time {
            cfg.measure_wall_time = true;
        }
        if self.per_time_mse {
            cfg.per_time_mse = true;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an observation sequence and write OUT/data.csv.
    Simulate,
    /// Run one filter against simulated data and write OUT/filter.csv.
    Filter(FilterArgs),
    /// Run the MSE-versus-cost sweep; writes OUT/results.csv and
    /// OUT/manifest.json.
    Sweep,
    /// Refit cost-versus-MSE slopes from an existing sweep CSV.
    Fit(FitArgs),
}

#[derive(Args)]
struct FilterArgs {
    /// Discretization level of a single-level filter.
    #[arg(long, conflicts_with = "ml")]
    level: Option<u32>,
    /// Filter particle count; defaults to the single-level guideline.
    #[arg(long, requires = "level")]
    n: Option<usize>,
    /// Law particle count; defaults to the filter particle count.
    #[arg(long, requires = "level")]
    m: Option<usize>,
    /// Run the multilevel estimator instead.
    #[arg(long)]
    ml: bool,
    /// Target accuracy for --ml.
    #[arg(long, requires = "ml")]
    eps: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    /// Sweep CSV produced by the sweep subcommand.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Optional JSON file for the fitted slopes.
    #[arg(long, value_name = "PATH")]
    json_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    program: &'static str,
    version: &'static str,
    profile: Profile,
    config: &'a ExperimentConfig,
    reference_level: u32,
    reference_count: usize,
    reference_seed: u64,
    rows: &'a [SweepRow],
    slopes: BTreeMap<&'static str, Option<SlopeFit>>,
    failures: &'a [String],
    cell_seconds: &'a [CellTiming],
    total_seconds: f64,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::for_profile(cli.profile);
    if let Some(path) = &cli.config {
        let file = ConfigFile::load(path)
            .with_context(|| format!("loading config {}", path.display()))?;
        file.apply(&mut cfg);
    }
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let data = simulate_data(cfg)?;
    fs::create_dir_all(&cli.out)?;
    let path = cli.out.join("data.csv");
    write_data_csv(&data, &path)?;
    println!(
        "simulated {} observations (model {}, data level {}, seed {}) -> {}",
        data.observations.len(),
        cfg.model.as_str(),
        cfg.data_level,
        cfg.seed,
        path.display()
    );
    Ok(())
}

fn cmd_filter(cli: &Cli, cfg: &ExperimentConfig, args: &FilterArgs) -> Result<()> {
    let data = simulate_data(cfg)?;
    let obs = data.obs_series()?;
    let model = cfg.build_model();
    let phi = |x: &[f64]| x[0];

    let (label, estimates, cost) = if args.ml {
        let eps = match args.eps {
            Some(e) => e,
            None => bail!("--ml needs --eps"),
        };
        let ml_cfg = select_params(eps, cfg.constants())?;
        let run = run_mlpf(&model, &obs, phi, &ml_cfg, cfg.seed)?;
        (format!("ml eps {eps} L {}", ml_cfg.big_l), run.estimates, run.cost)
    } else {
        let level = match args.level {
            Some(l) => l,
            None => bail!("pass either --level or --ml --eps"),
        };
        let n = args.n.unwrap_or_else(|| cfg.single_level_count(level));
        let m = args.m.unwrap_or(n);
        let run = mvpf::filter::run_pf_par(
            &model,
            LevelGrid::new(level),
            n,
            m,
            &obs,
            phi,
            cfg.seed,
        )?;
        (format!("sl level {level} n {n} m {m}"), run.estimates, run.cost)
    };

    fs::create_dir_all(&cli.out)?;
    let path = cli.out.join("filter.csv");
    let mut csv = String::from("t,estimate\n");
    for (k, e) in estimates.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", k + 1, fmt_f64(*e)));
    }
    fs::write(&path, csv)?;
    println!(
        "{label}: terminal estimate {}, cost {}, seed {} -> {}",
        fmt_f64(*estimates.last().expect("nonempty estimates")),
        cost,
        cfg.seed,
        path.display()
    );
    Ok(())
}

fn cmd_sweep(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    let cache_dir = cli
        .cache_dir
        .clone()
        .unwrap_or_else(|| cli.out.join("cache"));
    fs::create_dir_all(&cli.out)?;
    fs::create_dir_all(&cache_dir)?;

    let start = Instant::now();
    let result = mse_sweep(cfg, &cache_dir)?;
    let total_seconds = start.elapsed().as_secs_f64();

    let csv_path = cli.out.join("results.csv");
    fs::write(&csv_path, sweep_csv(&result.rows))?;
    if cfg.per_time_mse {
        fs::write(cli.out.join("per_time.csv"), per_time_csv(&result.per_time))?;
    }

    let mut slopes = BTreeMap::new();
    slopes.insert("SL", result.sl_fit);
    slopes.insert("ML", result.ml_fit);
    let manifest = Manifest {
        program: "mvpf",
        version: env!("CARGO_PKG_VERSION"),
        profile: cli.profile,
        config: cfg,
        reference_level: cfg.ref_level,
        reference_count: reference_count(cfg),
        reference_seed: reference_seed(cfg),
        rows: &result.rows,
        slopes,
        failures: &result.failures,
        cell_seconds: &result.timings,
        total_seconds,
    };
    let manifest_path = cli.out.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    for row in &result.rows {
        println!(
            "{} level {}: mse {:.6e} cost {:.4e} ({} replications)",
            row.estimator.as_str(),
            row.level,
            row.mse,
            row.cost,
            row.replications
        );
    }
    print_fit("SL", &result.sl_fit);
    print_fit("ML", &result.ml_fit);
    if !result.failures.is_empty() {
        eprintln!("{} replications failed; see the manifest", result.failures.len());
    }
    println!("wrote {} and {}", csv_path.display(), manifest_path.display());
    Ok(())
}

fn print_fit(label: &str, fit: &Option<SlopeFit>) {
    match fit {
        Some(f) => println!(
            "{label} slope: {:.4} (stderr {:.4}, {} points)",
            f.slope, f.stderr, f.points
        ),
        None => println!("{label} slope: not enough points"),
    }
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let rows = parse_sweep_csv(&text)?;
    let fits = fits_from_rows(&rows);
    if fits.is_empty() {
        bail!("no data rows in {}", args.input.display());
    }
    for (label, fit) in &fits {
        print_fit(label, fit);
    }
    if let Some(path) = &args.json_out {
        let map: BTreeMap<&str, &Option<SlopeFit>> =
            fits.iter().map(|(l, f)| (l.as_str(), f)).collect();
        fs::write(path, serde_json::to_string_pretty(&map)?)?;
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate => {
            let cfg = build_config(&cli)?;
            cmd_simulate(&cli, &cfg)
        }
        Command::Filter(args) => {
            let cfg = build_config(&cli)?;
            cmd_filter(&cli, &cfg, args)
        }
        Command::Sweep => {
            let cfg = build_config(&cli)?;
            cmd_sweep(&cli, &cfg)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
