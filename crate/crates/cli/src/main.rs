use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use recurrent_core::augment::AugmentConfig;
use recurrent_core::census::{export_census_csv, ingest_census_csv, validate_ac, CensusTable};
use recurrent_core::data::{export_csv, ingest_csv, CohortDataset, CovariateScheme, Decade, ExtractionWindow, Windows};
use recurrent_core::io::{baseline_rows, curve_rows, parse_key_values, write_baseline, write_curves, ResultsFile};
use recurrent_core::local::{Degree, KernelSpec};
use recurrent_core::model::{cohort_design, fit_model, FitConfig, FittedModel, ModelSpec, Target};
use recurrent_core::sim::{self, parse_analyses, CensusMode, Setting, SimConfig};
use recurrent_core::{Error, Result};

/// Marginal rates regression for doubly-censored, zero-truncated recurrent
/// event data.
#[derive(Debug, Parser)]
#[command(name = "recurrent", version, args_override_self = true)]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// File of `key = value` lines using the long flag names; flags given
    /// on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model; writes results.toml, curves.csv and baseline.csv.
    Fit(FitArgs),
    /// Fit a model and write only the cumulative baseline.
    Baseline(FitArgs),
    /// Replicate study on simulated populations.
    Simulate(SimArgs),
    /// Check census counts against a cohort's at-risk counts.
    ValidateCensus(CensusArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeArg {
    SexRegion,
    Sex,
}

impl From<SchemeArg> for CovariateScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::SexRegion => CovariateScheme::SexRegion,
            SchemeArg::Sex => CovariateScheme::Sex,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DegreeArg {
    Constant,
    Linear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TargetArg {
    Cohort,
    Population,
}

#[derive(Debug, Args)]
struct CohortArgs {
    /// Visit-level cohort CSV.
    #[arg(long, value_name = "CSV")]
    data: PathBuf,
    /// Early extraction window, LEFT:RIGHT.
    #[arg(long, default_value = "2002-04-01:2010-03-31")]
    early_window: String,
    /// Late extraction window, LEFT:RIGHT.
    #[arg(long, default_value = "2010-04-01:2017-03-31")]
    late_window: String,
    #[arg(long, value_enum, default_value = "sex-region")]
    scheme: SchemeArg,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    cohort: CohortArgs,
    /// Census CSV; needed for the population target.
    #[arg(long, value_name = "CSV")]
    census: Option<PathBuf>,
    /// Shapes of (alpha, beta, gamma), each C or V, e.g. CVV.
    #[arg(long, default_value = "CCC")]
    model: String,
    #[arg(long, value_enum, default_value = "cohort")]
    target: TargetArg,
    /// Kernel bandwidth in years.
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
    #[arg(long, value_enum, default_value = "linear")]
    degree: DegreeArg,
    #[arg(long, default_value_t = 1.0)]
    tau_left: f64,
    #[arg(long, default_value_t = 17.0)]
    tau_right: f64,
    /// Grid spacing in years; `a/b` fractions are accepted.
    #[arg(long, default_value = "1/6", value_parser = parse_number)]
    grid_step: f64,
    /// Birthdate draws per subject without a birthdate.
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Normal quantile for the pointwise bands.
    #[arg(long, default_value_t = 1.96)]
    z: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long, default_value = "s1case2")]
    setting: String,
    #[arg(long, default_value_t = 50_000)]
    n: usize,
    #[arg(long, default_value_t = 300)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma list; ranges such as B.2.1..B.2.6 are allowed.
    #[arg(long)]
    analyses: String,
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Strip birthdates from the early data pull.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    degrade_early: bool,
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
    #[arg(long, default_value_t = 1.0)]
    tau_left: f64,
    #[arg(long, default_value_t = 17.0)]
    tau_right: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Also write the pulled cohort and census tables of this replicate.
    #[arg(long, value_name = "R")]
    dump_replicate: Option<usize>,
}

#[derive(Debug, Args)]
struct CensusArgs {
    #[command(flatten)]
    cohort: CohortArgs,
    #[arg(long, value_name = "CSV")]
    census: PathBuf,
    /// Relative within-age-year range of the cohort at-risk count above
    /// which a cell is flagged.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
            let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
            a / b
        }
        None => s.trim().parse().map_err(|e| format!("{e}"))?,
    };
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("`{s}` is not a positive number"))
    }
}

/// Inserts `--key value` pairs from the config file right after the
/// subcommand so that later command-line flags override them.
fn expand_config(args: Vec<String>) -> std::result::Result<Vec<String>, String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().ok_or("--config needs a file")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    let kv = parse_key_values(&text).map_err(|e| format!("{path}: {e}"))?;
    let names = ["fit", "baseline", "simulate", "validate-census"];
    let pos = rest.iter().position(|a| names.contains(&a.as_str())).ok_or("no subcommand given")?;
    let mut out: Vec<String> = rest[..=pos].to_vec();
    for (k, v) in kv {
        out.push(format!("--{}", k.replace('_', "-")));
        out.push(v);
    }
    out.extend(rest[pos + 1..].iter().cloned());
    Ok(out)
}

fn windows(c: &CohortArgs) -> Result<Windows> {
    Windows::new([ExtractionWindow::parse(Decade::Early, &c.early_window)?, ExtractionWindow::parse(Decade::Late, &c.late_window)?])
}

fn fit_config(bandwidth: f64, degree: Degree, tau: (f64, f64), grid_step: f64) -> Result<FitConfig<f64>> {
    if tau.0.is_nan() || tau.1.is_nan() || tau.0 >= tau.1 {
        return Err(Error::Config(format!("tau-left {} must be below tau-right {}", tau.0, tau.1)));
    }
    Ok(FitConfig { kernel: KernelSpec::epanechnikov(bandwidth)?, degree, tau, grid_step, ..FitConfig::default() })
}

fn create(dir: &Path, name: &str) -> Result<fs::File> {
    fs::create_dir_all(dir)?;
    Ok(fs::File::create(dir.join(name))?)
}

fn run_fit(a: &FitArgs) -> Result<(CohortDataset, FittedModel<f64>, FitConfig<f64>)> {
    let target = match a.target {
        TargetArg::Cohort => Target::Cohort,
        TargetArg::Population => Target::GeneralPopulation,
    };
    let census: Option<CensusTable> = match (&a.census, target) {
        (Some(p), _) => Some(ingest_census_csv(p)?),
        (None, Target::GeneralPopulation) => return Err(Error::Config("--target population needs --census".into())),
        (None, Target::Cohort) => None,
    };
    let spec = ModelSpec::parse(&a.model, target)?;
    let degree = match a.degree {
        DegreeArg::Constant => Degree::Constant,
        DegreeArg::Linear => Degree::Linear,
    };
    let cfg = fit_config(a.bandwidth, degree, (a.tau_left, a.tau_right), a.grid_step)?;
    let data = ingest_csv(&a.cohort.data, windows(&a.cohort)?)?;
    let aug = AugmentConfig { k: a.k, seed: a.seed };
    let model = fit_model(spec, &data, census.as_ref(), a.cohort.scheme.into(), &aug, &cfg)?;
    Ok((data, model, cfg))
}

fn status(converged: bool) -> ExitCode {
    if converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn cmd_fit(a: &FitArgs) -> Result<ExitCode> {
    let (data, model, cfg) = run_fit(a)?;
    let results = ResultsFile::from_model(&model, data.subjects().len(), data.n_events(), a.bandwidth);
    fs::create_dir_all(&a.out_dir)?;
    fs::write(a.out_dir.join("results.toml"), results.to_toml()?)?;
    write_curves(&curve_rows(&model, &cfg.grid()?, a.z), create(&a.out_dir, "curves.csv")?)?;
    write_baseline(&baseline_rows(&model.baseline), create(&a.out_dir, "baseline.csv")?)?;
    println!("model {} ({}), {} subjects, {} events", results.model, results.target, results.subjects, results.events);
    for c in &results.constant {
        println!("  {:<12} {:>10.4}  se {:.4}  se(model) {:.4}", c.name, c.estimate, c.stderr, c.stderr_model);
    }
    if !results.varying.is_empty() {
        println!("  varying: {} (see curves.csv)", results.varying.join(", "));
    }
    println!("  loglik {:.4}  nu {:.3}  AIC {:.4}", results.loglik, results.nu, results.aic);
    if !results.converged {
        eprintln!("warning: partial convergence ({} grid ages failed)", results.failed_grid_ages);
    }
    Ok(status(results.converged))
}

fn cmd_baseline(a: &FitArgs) -> Result<ExitCode> {
    let (_, model, _) = run_fit(a)?;
    write_baseline(&baseline_rows(&model.baseline), create(&a.out_dir, "baseline.csv")?)?;
    println!("baseline rate {:.6} per time unit over [{}, {}]", model.baseline.rate_per_unit(), a.tau_left, a.tau_right);
    Ok(status(model.converged()))
}

fn cmd_simulate(a: &SimArgs) -> Result<ExitCode> {
    let setting: Setting = a.setting.parse()?;
    let ids = parse_analyses(&a.analyses)?;
    let mut cfg = SimConfig { n: a.n, reps: a.reps, seed: a.seed, k: a.k, degrade_early: a.degrade_early, ..SimConfig::new(setting) };
    cfg.fit = FitConfig { tau: (a.tau_left, a.tau_right), ..fit_config(a.bandwidth, Degree::Linear, (a.tau_left, a.tau_right), 1.0 / 6.0)? };
    let table = sim::replicate_study(&cfg, &ids)?;
    table.write_csv(create(&a.out_dir, "replicate_table.csv")?)?;
    fs::write(a.out_dir.join("replicate_table.txt"), table.to_text())?;
    print!("{}", table.to_text());
    if let Some(r) = a.dump_replicate {
        if r >= cfg.reps {
            return Err(Error::Config(format!("--dump-replicate {r} is beyond --reps {}", cfg.reps)));
        }
        let pop = sim::generate_population(&cfg, cfg.replicate_seed(r))?;
        let dir = a.out_dir.join(format!("replicate_{r}"));
        fs::create_dir_all(&dir)?;
        export_csv(&sim::pulled_cohort(&pop, &cfg)?, dir.join("cohort.csv"))?;
        export_census_csv(&sim::census_from_population(&pop, &cfg, CensusMode::Calendar)?, dir.join("census_calendar.csv"))?;
        export_census_csv(&sim::census_from_population(&pop, &cfg, CensusMode::Generation)?, dir.join("census_generation.csv"))?;
    }
    for (r, id, msg) in table.failures.iter().take(20) {
        eprintln!("replicate {r} {id}: {msg}");
    }
    Ok(status(table.failures.is_empty()))
}

fn cmd_validate_census(a: &CensusArgs) -> Result<ExitCode> {
    let census = ingest_census_csv(&a.census)?;
    let data = ingest_csv(&a.cohort.data, windows(&a.cohort)?)?;
    let scheme: CovariateScheme = a.cohort.scheme.into();
    let design = cohort_design::<f64>(&data, None, Target::Cohort, scheme, &AugmentConfig { k: a.k, seed: a.seed }, None)?;
    let report = validate_ac(&census, &design, scheme, a.threshold);
    print!("{report}");
    Ok(status(report.is_clean()))
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error: cannot start {n} worker threads");
            return ExitCode::FAILURE;
        }
    }
    let out = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::ValidateCensus(a) => cmd_validate_census(a),
    };
    out.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}
