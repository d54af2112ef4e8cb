use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use megh::data::{km_by_cluster, write_km_csv};
use megh::diagnostics::{default_grid, diagnose, lrt_random_effects, write_gradient_csv};
use megh::simulation::{run_study, simulate_times};
use megh::{
    fit, load_dataset, BaselineFamily, ClusteredDataset, ColumnMapping, EvalOptions, Execution, FitConfig, FitResult,
    HazardStructure, MeghError, ModelSpec, ReFamily, SimConfig, StudyConfig,
};
use serde::Serialize;
use serde_json::{json, Value};

mod report;

use report::{FitReport, Manifest};

#[derive(Parser, Debug)]
#[command(name = "megh", version, about = "Mixed-effects general hazard models for clustered survival data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model and write estimates, standard errors and intervals.
    Fit(FitArgs),
    /// Likelihood-ratio test of zero random-effects variance.
    TestRe(FitArgs),
    /// Gradient function of the fitted random-effects law with bootstrap bands.
    Diagnose(DiagnoseArgs),
    /// Simulate one dataset.
    Simulate(SimulateArgs),
    /// Replication study: simulate, fit every model, aggregate.
    Study(StudyArgs),
    /// Kaplan-Meier curves per cluster.
    Km(KmArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct DataArgs {
    /// CSV input with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "time")]
    time: String,
    #[arg(long, default_value = "status")]
    status: String,
    #[arg(long, default_value = "cluster")]
    cluster: String,
    /// Hazard-scale covariates.
    #[arg(long, value_delimiter = ',')]
    hazard_cols: Vec<String>,
    /// Time-scale covariates.
    #[arg(long, value_delimiter = ',')]
    time_cols: Vec<String>,
    /// Columns standardised to mean 0, sd 1.
    #[arg(long, value_delimiter = ',')]
    standardize: Vec<String>,
    /// Upper truncation, `column=limit`, applied before standardisation.
    #[arg(long, value_delimiter = ',', value_parser = parse_truncation)]
    truncate: Vec<(String, f64)>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct CommonArgs {
    /// Output directory.
    #[arg(long, default_value = "megh-out")]
    out: PathBuf,
    #[arg(long, env = "MEGH_SEED", default_value_t = 1)]
    seed: u64,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "megh1", value_parser = parse_structure)]
    model: HazardStructure,
    #[arg(long, default_value = "pgw", value_parser = parse_baseline)]
    baseline: BaselineFamily,
    #[arg(long, default_value = "normal", value_parser = parse_re)]
    re: ReFamily,
    /// Number of optimiser starts.
    #[arg(long, default_value_t = 3)]
    starts: usize,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct DiagnoseArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// Number of grid points over +-4 sd of the fitted random-effects law.
    #[arg(long, default_value_t = 101)]
    grid: usize,
    /// Parametric bootstrap replicates for the bands.
    #[arg(long, default_value_t = 200)]
    boot: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SimulateArgs {
    /// JSON simulation configuration; the leukaemia design with MEGH-I truth when absent.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct StudyArgs {
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    /// Models to fit, e.g. `gh-pgw,megh1-pgw-normal,megh2-pgw-normal`.
    #[arg(long, value_delimiter = ',', default_value = "gh-pgw,megh1-pgw-normal,megh2-pgw-normal")]
    fit_models: Vec<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
struct KmArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "megh-out")]
    out: PathBuf,
}

fn parse_structure(s: &str) -> Result<HazardStructure, String> {
    s.parse()
}

fn parse_baseline(s: &str) -> Result<BaselineFamily, String> {
    s.parse()
}

fn parse_re(s: &str) -> Result<ReFamily, String> {
    s.parse()
}

fn parse_truncation(s: &str) -> Result<(String, f64), String> {
    let (col, v) = s.split_once('=').ok_or_else(|| format!("expected column=limit, got `{s}`"))?;
    let v: f64 = v.parse().map_err(|_| format!("bad truncation limit `{v}`"))?;
    Ok((col.to_string(), v))
}

/// `gh-pgw`, `megh1-loglogistic-t`, ...
fn parse_model_label(label: &str) -> Result<ModelSpec, String> {
    let parts: Vec<&str> = label.split('-').collect();
    let structure: HazardStructure = parts.first().ok_or("empty model label")?.parse()?;
    let baseline: BaselineFamily = parts.get(1).ok_or(format!("model `{label}` lacks a baseline"))?.parse()?;
    let re = match (structure.has_random_effects(), parts.get(2)) {
        (true, Some(r)) => r.parse()?,
        (true, None) => return Err(format!("model `{label}` lacks a random-effects family")),
        (false, None) => ReFamily::Normal,
        (false, Some(_)) => return Err(format!("model `{label}` has no random effects")),
    };
    if parts.len() > 3 {
        return Err(format!("cannot parse model label `{label}`"));
    }
    Ok(ModelSpec::new(structure, baseline, re))
}

enum Failure {
    Usage(String),
    Lib(MeghError),
}

impl From<MeghError> for Failure {
    fn from(e: MeghError) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(e.into())
    }
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Usage(_) | Failure::Lib(MeghError::Contract(_)) => 2,
        Failure::Lib(MeghError::Numeric { .. }) => 4,
        Failure::Lib(_) => 3,
    }
}

fn load(args: &DataArgs) -> Result<ClusteredDataset, Failure> {
    let mut mapping = ColumnMapping::new(&args.time, &args.status, &args.cluster);
    mapping.hazard = args.hazard_cols.clone();
    mapping.time_scale = args.time_cols.clone();
    mapping.standardize = args.standardize.clone();
    mapping.truncate = args.truncate.clone();
    Ok(load_dataset(&args.data, &mapping)?)
}

fn fit_config(args: &FitArgs) -> FitConfig {
    FitConfig {
        starts: args.starts.max(1),
        seed: args.common.seed,
        eval: EvalOptions {
            execution: Execution::default(),
            ..Default::default()
        },
        ..Default::default()
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_sim_config(path: Option<&PathBuf>) -> Result<SimConfig, Failure> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(SimConfig::leukaemia(HazardStructure::MeghI, 1.0)),
    }
}

struct Run {
    outputs: Vec<PathBuf>,
    checks: Value,
}

fn cmd_fit(args: &FitArgs, out: &Path) -> Result<Run, Failure> {
    let data = load(&args.data)?;
    let m = ModelSpec::new(args.model, args.baseline, args.re);
    let f = fit(&m, &data, None, &fit_config(args))?;
    let rep = FitReport::new(&f, &data);
    let json_path = out.join("fit.json");
    write_json(&json_path, &rep)?;
    let csv_path = out.join("coefficients.csv");
    rep.write_csv(&csv_path)?;
    Ok(Run {
        outputs: vec![json_path, csv_path],
        checks: json!({ "converged": f.converged }),
    })
}

fn cmd_test_re(args: &FitArgs, out: &Path) -> Result<Run, Failure> {
    let data = load(&args.data)?;
    let m = ModelSpec::new(args.model, args.baseline, args.re);
    if !m.structure.has_random_effects() {
        return Err(Failure::Usage("test-re needs --model megh1 or megh2".into()));
    }
    let (lrt, full, reduced) = lrt_random_effects(&m, &data, &fit_config(args))?;
    let path = out.join("lrt.json");
    write_json(
        &path,
        &json!({
            "model": m.label(),
            "reduced_model": reduced.model.label(),
            "statistic": lrt.statistic,
            "case": lrt.case,
            "p_value": lrt.p_value,
            "log_lik_full": lrt.log_lik_full,
            "log_lik_reduced": lrt.log_lik_reduced,
            "aic_full": full.aic,
            "aic_reduced": reduced.aic,
            "full": FitReport::new(&full, &data),
            "reduced": FitReport::new(&reduced, &data),
        }),
    )?;
    Ok(Run {
        outputs: vec![path],
        checks: json!({ "converged": full.converged && reduced.converged }),
    })
}

fn cmd_diagnose(args: &DiagnoseArgs, out: &Path) -> Result<Run, Failure> {
    let fa = &args.fit;
    let data = load(&fa.data)?;
    let m = ModelSpec::new(fa.model, fa.baseline, fa.re);
    if !m.structure.has_random_effects() {
        return Err(Failure::Usage("diagnose needs --model megh1 or megh2".into()));
    }
    if args.boot == 0 {
        return Err(Failure::Usage("--boot must be at least 1".into()));
    }
    let cfg = fit_config(fa);
    let f: FitResult = fit(&m, &data, None, &cfg)?;
    let g = f.params.random_effects(&m)?.expect("random-effects model");
    let grid = default_grid(&g, args.grid.max(2));
    let d = diagnose(&f, &data, &grid, args.boot, fa.common.seed, &cfg, Execution::default())?;
    let fit_path = out.join("fit.json");
    write_json(&fit_path, &FitReport::new(&f, &data))?;
    let csv_path = out.join("gradient.csv");
    write_gradient_csv(&d, std::fs::File::create(&csv_path)?)?;
    Ok(Run {
        outputs: vec![fit_path, csv_path],
        checks: json!({
            "gradient_integral": d.integral,
            "gradient_integral_ok": (d.integral - 1.0).abs() < 1e-4,
            "exceeds_band": d.exceeds,
            "above_band": d.above,
            "boot_replicates": d.boot_replicates,
            "boot_failures": d.boot_failures,
            "boot_warning": d.boot_warning,
        }),
    })
}

fn cmd_simulate(args: &SimulateArgs, out: &Path) -> Result<(Run, Value), Failure> {
    let mut cfg = read_sim_config(args.truth.as_ref())?;
    cfg.seed = args.common.seed;
    let sim = simulate_times(&cfg)?;
    let data_path = out.join("data.csv");
    sim.data.write_csv_path(&data_path)?;
    let eff_path = out.join("effects.csv");
    let mut text = String::from("cluster,u\n");
    for (label, u) in sim.data.cluster_labels().iter().zip(&sim.effects) {
        text.push_str(&format!("{label},{u}\n"));
    }
    std::fs::write(&eff_path, text)?;
    Ok((
        Run {
            outputs: vec![data_path, eff_path],
            checks: json!({ "censoring_rate": sim.data.censoring_rate(), "censoring_max": sim.censoring_max }),
        },
        serde_json::to_value(&cfg)?,
    ))
}

fn cmd_study(args: &StudyArgs, out: &Path) -> Result<(Run, Value), Failure> {
    let mut sim = read_sim_config(args.truth.as_ref())?;
    sim.seed = args.common.seed;
    let models = args
        .fit_models
        .iter()
        .map(|l| parse_model_label(l))
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::Usage)?;
    let cfg = StudyConfig::new(sim, args.reps, models);
    let report = run_study(&cfg)?;
    let json_path = out.join("study.json");
    write_json(&json_path, &report)?;
    let csv_path = out.join("study.csv");
    report.write_csv(std::fs::File::create(&csv_path)?)?;
    let aic: serde_json::Map<String, Value> =
        report.summaries.iter().map(|s| (s.model.clone(), json!(s.mean_aic))).collect();
    Ok((
        Run {
            outputs: vec![json_path, csv_path],
            checks: json!({ "mean_aic": aic, "mean_censoring": report.mean_censoring }),
        },
        serde_json::to_value(&cfg)?,
    ))
}

fn cmd_km(args: &KmArgs) -> Result<Run, Failure> {
    let data = load(&args.data)?;
    let path = args.out.join("km.csv");
    write_km_csv(&km_by_cluster(&data), std::fs::File::create(&path)?)?;
    Ok(Run {
        outputs: vec![path],
        checks: json!({ "clusters": data.n_clusters() }),
    })
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let start = Instant::now();
    let (name, out, seed, jobs) = match &cli.command {
        Command::Fit(a) | Command::TestRe(a) => ("fit", &a.common.out, Some(a.common.seed), a.common.jobs),
        Command::Diagnose(a) => ("diagnose", &a.fit.common.out, Some(a.fit.common.seed), a.fit.common.jobs),
        Command::Simulate(a) => ("simulate", &a.common.out, Some(a.common.seed), a.common.jobs),
        Command::Study(a) => ("study", &a.common.out, Some(a.common.seed), a.common.jobs),
        Command::Km(a) => ("km", &a.out, None, None),
    };
    let name = if matches!(cli.command, Command::TestRe(_)) { "test-re" } else { name };
    if jobs == Some(0) {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    std::fs::create_dir_all(out)?;
    let (result, config) = megh::par::with_threads(jobs, || -> Result<(Run, Value), Failure> {
        Ok(match &cli.command {
            Command::Fit(a) => (cmd_fit(a, out)?, serde_json::to_value(a)?),
            Command::TestRe(a) => (cmd_test_re(a, out)?, serde_json::to_value(a)?),
            Command::Diagnose(a) => (cmd_diagnose(a, out)?, serde_json::to_value(a)?),
            Command::Simulate(a) => {
                let (r, truth) = cmd_simulate(a, out)?;
                (r, json!({ "args": a, "truth": truth }))
            }
            Command::Study(a) => {
                let (r, study) = cmd_study(a, out)?;
                (r, json!({ "args": a, "study": study }))
            }
            Command::Km(a) => (cmd_km(a)?, serde_json::to_value(a)?),
        })
    })?;
    let manifest = Manifest {
        command: name.into(),
        config,
        seed,
        version: env!("CARGO_PKG_VERSION").into(),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: result.outputs.iter().map(|p| p.display().to_string()).collect(),
        checks: result.checks,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    for p in &result.outputs {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = exit_code(&f);
            match &f {
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Lib(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_labels_round_trip() {
        for l in ["gh-pgw", "megh1-pgw-normal", "megh2-loglogistic-t", "megh1-pgw-tpn"] {
            let m = parse_model_label(l).unwrap();
            assert_eq!(parse_model_label(&m.label()).unwrap(), m);
        }
        assert!(parse_model_label("gh-pgw-normal").is_err());
        assert!(parse_model_label("megh1-pgw").is_err());
        assert!(parse_model_label("megh3-pgw-normal").is_err());
    }

    #[test]
    fn truncation_flag() {
        assert_eq!(parse_truncation("wbc=500").unwrap(), ("wbc".to_string(), 500.0));
        assert!(parse_truncation("wbc").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
