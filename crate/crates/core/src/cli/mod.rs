//! `netpass` command-line front end.
//!
//! Exit codes: 0 certified, 1 input error, 2 no certificate found,
//! 3 verification failure.

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::analysis::{self, closed_loop_sms};
use crate::error::{Error, Result};
use crate::model::Gain;
use crate::numerics::{matrix_from_rows, matrix_to_rows};
use crate::sim::{self, decay_fit};
use crate::synthesis::{self, build_synthesis_lmi};
use config::{EtaConfig, ScenarioConfig};
use report::{
    AnalyzeResults, CertificateKind, CertificateRecord, FitOutcome, Outcome, PassivityResult, Results, RunReport,
    SimulateResults, Status, SynthesisRecord, SynthesizeResults,
};

#[derive(Debug, Parser)]
#[command(name = "netpass", version, about = "Passivity and stability certificates for lossy networked control loops")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify stability and passivity of a given gain.
    Analyze(RunArgs),
    /// Synthesize a passivating state-feedback gain.
    Synthesize(RunArgs),
    /// Monte Carlo ensemble of the closed loop.
    Simulate(RunArgs),
    /// Summarize a report and re-verify its certificates.
    Report {
        /// Report file written by another command.
        report: PathBuf,
    },
    /// Print the JSON Schema of scenario files.
    Schema,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file (JSON; see `netpass schema`).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Report destination; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Write per-trial and ensemble CSVs next to the report.
    #[arg(long, requires = "out")]
    pub dump_traces: bool,
    /// Dissipation level, or `max` to maximize.
    #[arg(long, value_name = "VALUE|max", value_parser = EtaConfig::parse_flag)]
    pub eta: Option<EtaConfig>,
    /// Seed for both the solver and the simulation.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Relative definiteness margin.
    #[arg(long, value_name = "R")]
    pub margin: Option<f64>,
    /// Solver iteration budget.
    #[arg(long, value_name = "N")]
    pub budget: Option<usize>,
    /// Take the gain from a synthesize report instead of the config.
    #[arg(long, value_name = "PATH")]
    pub gain_from: Option<PathBuf>,
}

/// Failure that ends a command without a report.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Indeterminate(_) => 2,
            Error::VerificationFailed(_) | Error::SingularTransform(_) => 3,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

fn input_error(message: String) -> Failure {
    Failure { code: 1, message }
}

struct Loaded {
    config: ScenarioConfig,
    digest: String,
}

fn load(args: &RunArgs) -> std::result::Result<Loaded, Failure> {
    let bytes = fs::read(&args.config).map_err(|e| input_error(format!("{}: {e}", args.config.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| input_error("config is not UTF-8".into()))?;
    let mut config = ScenarioConfig::from_json(&text)
        .map_err(|e| input_error(format!("{}: {e}", args.config.display())))?;
    if let Some(eta) = args.eta {
        config.eta = Some(eta);
    }
    if let Some(seed) = args.seed {
        config.solver.seed = seed;
        config.simulation.seed = seed;
    }
    if let Some(m) = args.margin {
        config.solver.margin = m;
    }
    if let Some(b) = args.budget {
        config.solver.budget = b;
    }
    Ok(Loaded { config, digest: hex::encode(Sha256::digest(&bytes)) })
}

fn certificate<T>(
    r: Result<T>,
) -> Result<std::result::Result<T, report::Unresolved>> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(Error::Indeterminate(rep)) => Ok(Err(report::Unresolved::from(&*rep))),
        Err(e) => Err(e),
    }
}

fn analyze(cfg: &ScenarioConfig) -> Result<(Status, Results)> {
    let plant = cfg.plant()?;
    let schedule = cfg.schedule(&plant)?;
    let dist = cfg.loss()?.mode_distribution();
    let gain = cfg.gain(&plant)?;
    let opts = cfg.analysis_options()?;
    if cfg.eta.is_some() && schedule.is_full_packet() {
        crate::model::require_positive_feedthrough(&plant)?;
    }
    let sms = closed_loop_sms(&plant, &gain, &schedule, &dist)?;
    let (sprob, _) = analysis::stability_problem(&plant, &gain, &schedule, &dist)?;
    let stability = match certificate(analysis::stability_lmi(&plant, &gain, &schedule, &dist, &opts.solve))? {
        Ok(c) => Outcome::Certified(CertificateRecord::new(CertificateKind::Stability, None, &sprob, &c.lmi)),
        Err(u) => Outcome::Indeterminate(u),
    };
    let passivity = match cfg.eta {
        None => None,
        Some(_) if !schedule.is_full_packet() => Some(PassivityResult {
            eta: None,
            eta_max: None,
            outcome: Outcome::Unsupported { reason: "passivity is certified for the full-packet configuration only".into() },
        }),
        Some(EtaConfig::Value(eta)) => {
            let (prob, _) = analysis::passivity_problem(&plant, &gain, &dist, eta, &opts)?;
            Some(match certificate(analysis::passivity_lmi(&plant, &gain, &dist, eta, &opts))? {
                Ok(c) => PassivityResult {
                    eta: Some(eta),
                    eta_max: None,
                    outcome: Outcome::Certified(CertificateRecord::new(CertificateKind::Passivity, Some(eta), &prob, &c.lmi)),
                },
                Err(u) => PassivityResult { eta: Some(eta), eta_max: None, outcome: Outcome::Indeterminate(u) },
            })
        }
        Some(EtaConfig::Keyword(_)) => {
            Some(match certificate(analysis::max_dissipation(&plant, &gain, &dist, cfg.passivity.eta_tol, &opts))? {
                Ok(m) => {
                    let (prob, _) = analysis::passivity_problem(&plant, &gain, &dist, m.eta_star, &opts)?;
                    PassivityResult {
                        eta: Some(m.eta_star),
                        eta_max: Some(m.eta_max),
                        outcome: Outcome::Certified(CertificateRecord::new(
                            CertificateKind::Passivity,
                            Some(m.eta_star),
                            &prob,
                            &m.certificate.lmi,
                        )),
                    }
                }
                Err(u) => PassivityResult { eta: None, eta_max: None, outcome: Outcome::Indeterminate(u) },
            })
        }
    };
    let all_certified = stability.certificate().is_some()
        && passivity.as_ref().is_none_or(|p| matches!(p.outcome, Outcome::Certified(_) | Outcome::Unsupported { .. }));
    let status = if all_certified { Status::Certified } else { Status::Indeterminate };
    Ok((status, Results::Analyze(AnalyzeResults { gain: matrix_to_rows(gain.matrix()), sms, stability, passivity })))
}

fn synthesize(cfg: &ScenarioConfig) -> Result<(Status, Results)> {
    let plant = cfg.plant()?;
    let schedule = cfg.schedule(&plant)?;
    let loss = cfg.loss()?;
    let eta = cfg
        .eta
        .ok_or_else(|| Error::InvalidParameter("synthesis needs `eta` (a number or \"maximize\")".into()))?;
    let opts = cfg.synthesis_options()?;
    match synthesis::synthesize(&plant, &schedule, &loss, eta.spec(), &opts) {
        Ok(r) => {
            let dist = loss.mode_distribution();
            let sp = build_synthesis_lmi(&plant, &dist, r.eta, opts.analysis.output_weighting)?;
            let (pprob, _) = analysis::passivity_problem(&plant, &r.k, &dist, r.eta, &opts.analysis)?;
            let record = SynthesisRecord {
                k: matrix_to_rows(r.k.matrix()),
                eta: r.eta,
                rho: r.rho,
                synthesis: CertificateRecord::new(CertificateKind::Synthesis, Some(r.eta), &sp.problem, &r.certificate),
                passivity: CertificateRecord::new(CertificateKind::Passivity, Some(r.eta), &pprob, &r.passivity.lmi),
                verification: r.verification,
            };
            Ok((Status::Certified, Results::Synthesize(SynthesizeResults::Certified(Box::new(record)))))
        }
        Err(Error::Indeterminate(u)) => Ok((
            Status::Indeterminate,
            Results::Synthesize(SynthesizeResults::Indeterminate(report::Unresolved::from(&*u))),
        )),
        Err(Error::VerificationFailed(message)) => Ok((
            Status::VerificationFailed,
            Results::Synthesize(SynthesizeResults::VerificationFailed { message }),
        )),
        Err(e) => Err(e),
    }
}

fn gain_from_report(path: &Path) -> std::result::Result<Gain, Failure> {
    let text = fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let rep: RunReport =
        serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    match rep.results {
        Results::Synthesize(SynthesizeResults::Certified(r)) => Ok(Gain::new(matrix_from_rows(&r.k)?)?),
        Results::Analyze(r) => Ok(Gain::new(matrix_from_rows(&r.gain)?)?),
        _ => Err(input_error(format!("{}: report carries no gain", path.display()))),
    }
}

fn trace_dir(out: &Path) -> PathBuf {
    out.with_extension("traces")
}

fn simulate(cfg: &ScenarioConfig, args: &RunArgs) -> std::result::Result<(Status, Results), Failure> {
    let plant = cfg.plant()?;
    let schedule = cfg.schedule(&plant)?;
    let loss = cfg.loss()?;
    let (gain, gain_source) = match &args.gain_from {
        Some(p) => (gain_from_report(p)?, p.display().to_string()),
        None => (cfg.gain(&plant)?, "config".to_string()),
    };
    gain.check_dims(&plant)?;
    let eta = match cfg.eta {
        Some(EtaConfig::Value(v)) => v,
        _ => 0.0,
    };
    let sim_cfg = &cfg.simulation;
    let opts = cfg.ensemble_options(eta);
    let stats = sim::ensemble(&plant, &gain, &schedule, &loss, &sim_cfg.signal, sim_cfg.horizon, &opts)?;
    let dist = loss.mode_distribution();
    let rho = closed_loop_sms(&plant, &gain, &schedule, &dist)?.rho;
    let decay = match decay_fit(&stats) {
        Ok(f) => FitOutcome::Fitted(f),
        Err(Error::FitUnavailable(reason)) => FitOutcome::Unavailable { reason },
        Err(e) => return Err(e.into()),
    };
    if args.dump_traces {
        let out = args.out.as_ref().expect("clap enforces --out");
        let io = |e: std::io::Error| input_error(format!("writing traces: {e}"));
        let dir = trace_dir(out);
        fs::create_dir_all(&dir).map_err(io)?;
        let mut buf = Vec::new();
        stats.write_csv(&mut buf).map_err(io)?;
        fs::write(out.with_extension("ensemble.csv"), &buf).map_err(io)?;
        for i in 0..sim_cfg.dump_limit.min(sim_cfg.trials) {
            let seed = opts.base_seed.wrapping_add(i as u64);
            let tr = sim::simulate(&plant, &gain, &schedule, &loss, &sim_cfg.signal, sim_cfg.horizon, seed, opts.x0.as_ref())?;
            let mut buf = Vec::new();
            tr.write_csv(&mut buf).map_err(io)?;
            fs::write(dir.join(format!("trial-{i:05}.csv")), &buf).map_err(io)?;
        }
    }
    let results = SimulateResults {
        gain: matrix_to_rows(gain.matrix()),
        gain_source,
        rho,
        mode_zscore: stats.mode_frequency_zscore(&dist),
        dissipation_zscore: stats.dissipation_zscore(),
        stats,
        decay_fit: decay,
    };
    Ok((Status::Completed, Results::Simulate(results)))
}

fn write_report(report: &RunReport, out: Option<&Path>) -> std::result::Result<(), Failure> {
    let text = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    match out {
        Some(p) => fs::write(p, text).map_err(|e| input_error(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_command(name: &str, args: &RunArgs) -> std::result::Result<u8, Failure> {
    let start = Instant::now();
    let loaded = load(args)?;
    let cfg = &loaded.config;
    let (status, results) = match name {
        "analyze" => analyze(cfg)?,
        "synthesize" => synthesize(cfg)?,
        _ => simulate(cfg, args)?,
    };
    let report = RunReport {
        command: name.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_digest: loaded.digest,
        config: loaded.config,
        status,
        results,
        timing_ms: start.elapsed().as_millis() as u64,
    };
    write_report(&report, args.out.as_deref())?;
    if let Some(p) = &args.out {
        eprintln!("{name}: {status:?} -> {}", p.display());
    }
    Ok(status.exit_code())
}

fn run_report(path: &Path) -> std::result::Result<u8, Failure> {
    let text = fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let report: RunReport =
        serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    print!("{}", report::summary(&report));
    let issues = match report::reverify(&report) {
        Ok(i) => i,
        Err(e) => vec![e.to_string()],
    };
    if issues.is_empty() {
        println!("{:<14}consistent", "re-verified");
        Ok(0)
    } else {
        for i in &issues {
            println!("MISMATCH      {i}");
        }
        Ok(3)
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Analyze(a) => run_command("analyze", a),
        Command::Synthesize(a) => run_command("synthesize", a),
        Command::Simulate(a) => run_command("simulate", a),
        Command::Report { report } => run_report(report),
        Command::Schema => {
            print!("{}", config::scenario_schema());
            Ok(0)
        }
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
