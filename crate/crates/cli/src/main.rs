use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ccrmst::analysis::{self, AnalysisConfig};
use ccrmst::estimator::{CiKind, Method};
use ccrmst::experiment::{self, ExperimentConfig};
use ccrmst::pipeline::MatchingConfig;
use ccrmst::propensity::AlphaConvention;
use ccrmst::report::{self, CurveSet, RunRecord};
use ccrmst::simgen::{self, ExposureRatio, SimScenario};
use ccrmst::survival::EventDefinition;

#[derive(Parser)]
#[command(name = "ccrmst", version, about = "RMST treatment effects in the treated under stratified case-cohort sampling")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation experiment and report bias, SEM, SEE and coverage.
    Simulate(SimulateArgs),
    /// Analyze a case-cohort dataset from CSV.
    Analyze(AnalyzeArgs),
    /// Recompute scenario constants (exposure intercept, hazards).
    Calibrate(CalibrateArgs),
    /// Monte Carlo true effect for a scenario.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Methods, comma separated (ps_template, ps_plain, covar_template, covar_plain).
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<Method>>,
    /// Event definition for case status: conv or gde.
    #[arg(long)]
    event_def: Option<EventDefinition>,
    /// Candidate templates per match.
    #[arg(long)]
    candidates: Option<usize>,
    /// Bootstrap draws.
    #[arg(long)]
    bootstrap: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Exposure ratio preset: 1:2, 1:3 or 1:4.
    #[arg(long)]
    ratio: Option<ExposureRatio>,
    /// Full cohort size.
    #[arg(long)]
    n: Option<usize>,
    /// Replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Unexposed subjects per template member.
    #[arg(long)]
    template_ratio: Option<f64>,
    /// Also write the first replication's cohort and case-cohort sample.
    #[arg(long)]
    export_data: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input CSV.
    data: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Template ratios to report side by side (repeatable).
    #[arg(long)]
    template_ratio: Vec<f64>,
    /// Truncation time.
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Exposure ratio; all three when omitted.
    #[arg(long)]
    ratio: Option<ExposureRatio>,
    #[arg(long, default_value_t = 0.2)]
    corr: f64,
    #[arg(long, default_value_t = 0.10)]
    event_rate: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pilot_n: usize,
    /// Cohort size of the run that fixes the time scale.
    #[arg(long, default_value_t = 40_000_000)]
    scale_n: usize,
    #[arg(long, default_value_t = 20_240_601)]
    seed: u64,
    /// Write the calibration as JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value = "1:2")]
    ratio: ExposureRatio,
    /// Scenario TOML overriding the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000_000)]
    n_mc: usize,
    #[arg(long)]
    seed: Option<u64>,
}

/// Simulation settings as read from TOML; flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateFile {
    ratio: Option<ExposureRatio>,
    n_full: Option<usize>,
    scenario: Option<SimScenario>,
    methods: Option<Vec<Method>>,
    event_definition: Option<EventDefinition>,
    replications: Option<usize>,
    bootstrap: Option<usize>,
    matching: Option<MatchingConfig>,
    refit_phi: Option<bool>,
    ci: Option<CiKind>,
    alpha_convention: Option<AlphaConvention>,
    alpha_override: Option<Vec<f64>>,
    weighted_propensity: Option<bool>,
    seed: Option<u64>,
}

fn read_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn experiment_config(args: &SimulateArgs) -> Result<ExperimentConfig> {
    let file: SimulateFile = read_toml(args.common.config.as_deref())?;
    let ratio = args.ratio.or(file.ratio).unwrap_or(ExposureRatio::OneToTwo);
    let n_full = args.n.or(file.n_full).unwrap_or(5000);
    let scenario = match file.scenario {
        Some(s) if args.ratio.is_none() && args.n.is_none() => s,
        _ => SimScenario::preset(ratio, n_full),
    };
    let methods = args.common.method.clone().or(file.methods).unwrap_or_else(|| Method::ALL.to_vec());
    let event_definition = args.common.event_def.or(file.event_definition).unwrap_or(EventDefinition::Generalized);
    let mut cfg = ExperimentConfig::new(scenario, methods, event_definition);
    cfg.replications = args.reps.or(file.replications).unwrap_or(cfg.replications);
    cfg.bootstrap = args.common.bootstrap.or(file.bootstrap).unwrap_or(cfg.bootstrap);
    cfg.matching = file.matching.unwrap_or_default();
    if let Some(r) = args.template_ratio {
        cfg.matching.template_ratio = r;
    }
    if let Some(c) = args.common.candidates {
        cfg.matching.n_candidates = c;
    }
    cfg.refit_phi = file.refit_phi.unwrap_or(cfg.refit_phi);
    cfg.ci = file.ci.unwrap_or(cfg.ci);
    cfg.alpha_convention = file.alpha_convention.unwrap_or(cfg.alpha_convention);
    cfg.alpha_override = file.alpha_override;
    cfg.weighted_propensity = file.weighted_propensity.unwrap_or(true);
    cfg.seed = args.common.seed.or(file.seed).unwrap_or(cfg.seed);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    true_effect: f64,
    metrics: &'a [experiment::MethodMetrics],
    failures: &'a [experiment::ReplicationFailure],
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = experiment_config(&args)?;
    fs::create_dir_all(&args.common.out)?;
    log::info!(
        "simulating {} replications of N={} ({}), {} bootstrap draws",
        cfg.replications,
        cfg.scenario.n_full,
        cfg.scenario.exposure_ratio.label(),
        cfg.bootstrap
    );
    let res = experiment::run_experiment(&cfg)?;
    let out = &args.common.out;
    report::write_metrics(&res.metrics, res.true_effect, create(out, "results.csv")?)?;
    report::write_replications(&res.records, create(out, "replications.csv")?)?;
    let sets: Vec<CurveSet> = res
        .records
        .iter()
        .filter_map(|r| {
            r.curves.as_ref().map(|c| CurveSet { label: r.method.label().to_string(), hazard_treated: &c.0, hazard_control: &c.1 })
        })
        .collect();
    report::write_curves(&sets, create(out, "survival_curves.csv")?)?;
    let output = SimulateOutput { true_effect: res.true_effect, metrics: &res.metrics, failures: &res.failures };
    RunRecord::new("simulate", &cfg, output).write(create(out, "results.json")?)?;
    if args.export_data {
        let (cohort, sample) = experiment::replication_data(&cfg, 0)?;
        report::write_cohort(&cohort.subjects, create(out, "cohort.csv")?)?;
        report::write_case_cohort(&sample, create(out, "case_cohort.csv")?)?;
    }
    println!("method,percent_bias,sem,see,coverage");
    for m in &res.metrics {
        let see = m.see.map_or("NA".to_string(), |s| format!("{s:.5}"));
        println!("{},{:.2},{:.5},{},{:.1}", m.method, m.percent_bias, m.sem, see, m.coverage);
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let mut cfg: AnalysisConfig = read_toml(args.common.config.as_deref())?;
    if let Some(m) = args.common.method.clone() {
        cfg.methods = m;
    }
    if let Some(d) = args.common.event_def {
        cfg.event_definition = d;
    }
    if let Some(c) = args.common.candidates {
        cfg.n_candidates = c;
    }
    if let Some(b) = args.common.bootstrap {
        cfg.bootstrap = b;
    }
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    if !args.template_ratio.is_empty() {
        cfg.template_ratios = args.template_ratio.clone();
    }
    if args.tau.is_some() {
        cfg.tau = args.tau;
    }
    cfg.validate()?;
    let ingested = analysis::load(&args.data, &cfg)?;
    let rep = analysis::analyze(&ingested, &cfg)?;
    let out = &args.common.out;
    fs::create_dir_all(out)?;
    report::write_att_table(&rep, create(out, "results.csv")?)?;
    report::write_balance(&rep.balance, create(out, "balance.csv")?)?;
    let sets: Vec<CurveSet> = rep
        .runs
        .iter()
        .map(|r| CurveSet {
            label: match r.template_ratio {
                Some(ratio) => format!("{}_{ratio}", r.method),
                None => r.method.label().to_string(),
            },
            hazard_treated: &r.result.hazard_treated,
            hazard_control: &r.result.hazard_control,
        })
        .collect();
    report::write_curves(&sets, create(out, "survival_curves.csv")?)?;
    RunRecord::new("analyze", &cfg, &rep).write(create(out, "results.json")?)?;
    println!("tau={} exposed={} unexposed={}", rep.tau, rep.n_exposed, rep.n_unexposed);
    println!("method,template_ratio,template_size,att,se,ci_low,ci_high");
    for r in &rep.runs {
        let e = &r.result.estimate;
        println!(
            "{},{},{},{:.4},{:.4},{:.4},{:.4}",
            r.method,
            r.template_ratio.map_or("NA".into(), |v| v.to_string()),
            r.template_size.map_or("NA".into(), |v| v.to_string()),
            e.att,
            e.se,
            e.ci_low,
            e.ci_high
        );
    }
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let ratios = match args.ratio {
        Some(r) => vec![r],
        None => vec![ExposureRatio::OneToTwo, ExposureRatio::OneToThree, ExposureRatio::OneToFour],
    };
    let mut out = Vec::new();
    for ratio in ratios {
        let target = SimScenario::preset(ratio, 1).true_effect;
        let c = simgen::calibrate(ratio, args.corr, args.event_rate, target, args.pilot_n, args.scale_n, args.seed)?;
        println!(
            "{}: gamma0={} baseline_hazard={} censor_hazard={} exposed={:.4} conv_rate={:.4} gde_rate={:.4}",
            ratio.label(),
            c.gamma0,
            c.baseline_hazard,
            c.censor_hazard,
            c.exposed_fraction,
            c.conventional_event_rate,
            c.generalized_event_rate
        );
        out.push(c);
    }
    if let Some(path) = args.out {
        serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &out)?;
    }
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct OracleFile {
    scenario: Option<SimScenario>,
}

fn oracle(args: OracleArgs) -> Result<()> {
    let file: OracleFile = read_toml(args.config.as_deref())?;
    let scenario = file.scenario.unwrap_or_else(|| SimScenario::preset(args.ratio, 1));
    let seed = args.seed.unwrap_or(scenario.seed);
    let res = simgen::true_att_oracle(&scenario, args.n_mc, seed)?;
    let z = scenario.true_effect.map(|t| (res.att - t) / res.mc_se);
    let out = serde_json::json!({
        "ratio": scenario.exposure_ratio.label(),
        "att": res.att,
        "mc_se": res.mc_se,
        "tau": res.tau,
        "n_mc": res.n_mc,
        "n_exposed": res.n_exposed,
        "reference": scenario.true_effect,
        "z": z,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Oracle(a) => oracle(a),
    }
}
