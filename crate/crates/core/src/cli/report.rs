//! Run reports and their re-verification.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{Rows, ScenarioConfig};
use crate::analysis::{self, SmsReport};
use crate::error::{Error, Result};
use crate::lmi::{self, Assignment, ConstraintCheck, IndeterminateReport, LmiCertificate, LmiProblem, VarId};
use crate::model::Gain;
use crate::numerics::{matrix_from_rows, matrix_to_rows, DefinitenessMargin, SymMatrix};
use crate::sim::{DecayFit, EnsembleStats};
use crate::synthesis::{self, RoundTripReport};

/// Stored λ_max values must be reproduced to this relative accuracy.
const REVERIFY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    /// SHA-256 of the config file as read.
    pub config_digest: String,
    /// Effective config after command-line overrides.
    pub config: ScenarioConfig,
    pub status: Status,
    pub results: Results,
    pub timing_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Certified,
    Indeterminate,
    VerificationFailed,
    Completed,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Self::Certified | Self::Completed => 0,
            Self::Indeterminate => 2,
            Self::VerificationFailed => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Results {
    Analyze(AnalyzeResults),
    Synthesize(SynthesizeResults),
    Simulate(SimulateResults),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    Stability,
    Passivity,
    Synthesis,
}

/// A certificate with every decision variable at full precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub kind: CertificateKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub margin: f64,
    pub variables: BTreeMap<String, Rows>,
    pub checks: Vec<ConstraintCheck>,
}

impl CertificateRecord {
    pub fn new(kind: CertificateKind, eta: Option<f64>, problem: &LmiProblem, cert: &LmiCertificate) -> Self {
        let variables = problem
            .variables()
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.clone(), matrix_to_rows(cert.value(VarId(i)))))
            .collect();
        Self { kind, eta, margin: cert.margin().epsilon_rel(), variables, checks: cert.checks().to_vec() }
    }

    pub fn max_eig(&self) -> f64 {
        self.checks.iter().map(|c| c.max_eig).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unresolved {
    pub best_max_eig: f64,
    pub best_slack: f64,
    pub iterations: usize,
    pub restarts: usize,
}

impl From<&IndeterminateReport> for Unresolved {
    fn from(r: &IndeterminateReport) -> Self {
        Self { best_max_eig: r.best_max_eig, best_slack: r.best_slack, iterations: r.iterations, restarts: r.restarts }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Certified(CertificateRecord),
    Indeterminate(Unresolved),
    Unsupported { reason: String },
}

impl Outcome {
    pub fn certificate(&self) -> Option<&CertificateRecord> {
        match self {
            Self::Certified(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeResults {
    pub gain: Rows,
    pub sms: SmsReport,
    pub stability: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passivity: Option<PassivityResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassivityResult {
    /// Certified dissipation level (`η*` when maximizing).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Upper end of the bisection bracket when maximizing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_max: Option<f64>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesizeResults {
    Certified(Box<SynthesisRecord>),
    Indeterminate(Unresolved),
    VerificationFailed { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub k: Rows,
    pub eta: f64,
    pub rho: f64,
    pub synthesis: CertificateRecord,
    pub passivity: CertificateRecord,
    pub verification: RoundTripReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateResults {
    pub gain: Rows,
    /// `config` or the path of the report the gain was taken from.
    pub gain_source: String,
    pub rho: f64,
    pub stats: EnsembleStats,
    pub decay_fit: FitOutcome,
    pub mode_zscore: f64,
    pub dissipation_zscore: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitOutcome {
    Fitted(DecayFit),
    Unavailable { reason: String },
}

fn margin(rec: &CertificateRecord) -> Result<DefinitenessMargin> {
    DefinitenessMargin::new(rec.margin)
}

/// Assign stored variables by name and compare every stored check.
fn check_record(problem: &LmiProblem, rec: &CertificateRecord, label: &str, issues: &mut Vec<String>) -> Result<()> {
    let mut assignment = Assignment::new();
    for (i, v) in problem.variables().iter().enumerate() {
        let rows = rec
            .variables
            .get(&v.name)
            .ok_or_else(|| Error::InvalidParameter(format!("{label}: missing variable `{}`", v.name)))?;
        let m = matrix_from_rows(rows)?;
        if m.shape() != (v.rows, v.cols) {
            return Err(Error::DimensionMismatch(format!("{label}: variable `{}` has shape {:?}", v.name, m.shape())));
        }
        assignment.insert(VarId(i), m);
    }
    let fresh = lmi::verify(problem, &assignment, margin(rec)?)?;
    if fresh.checks.len() != rec.checks.len() {
        issues.push(format!("{label}: {} stored checks, {} recomputed", rec.checks.len(), fresh.checks.len()));
        return Ok(());
    }
    for (new, old) in fresh.checks.iter().zip(&rec.checks) {
        if new.name != old.name {
            issues.push(format!("{label}: check `{}` stored as `{}`", new.name, old.name));
        } else if (new.max_eig - old.max_eig).abs() > REVERIFY_TOL * (1.0 + old.max_eig.abs()) {
            issues.push(format!(
                "{label}/{}: stored λ_max {:e}, recomputed {:e}",
                new.name, old.max_eig, new.max_eig
            ));
        } else if !new.pass {
            issues.push(format!("{label}/{}: λ_max {:e} is above the margin threshold", new.name, new.max_eig));
        }
    }
    Ok(())
}

fn gain_from(rows: &Rows) -> Result<Gain> {
    Gain::new(matrix_from_rows(rows)?)
}

/// Rebuild every certificate's problem from the stored config and check it.
/// Returns the list of inconsistencies (empty when the report is sound).
pub fn reverify(report: &RunReport) -> Result<Vec<String>> {
    let cfg = &report.config;
    let plant = cfg.plant()?;
    let schedule = cfg.schedule(&plant)?;
    let dist = cfg.loss()?.mode_distribution();
    let aopts = cfg.analysis_options()?;
    let mut issues = Vec::new();
    match &report.results {
        Results::Analyze(r) => {
            let gain = gain_from(&r.gain)?;
            gain.check_dims(&plant)?;
            if let Some(rec) = r.stability.certificate() {
                let (prob, _) = analysis::stability_problem(&plant, &gain, &schedule, &dist)?;
                check_record(&prob, rec, "stability", &mut issues)?;
            }
            if let Some(rec) = r.passivity.as_ref().and_then(|p| p.outcome.certificate()) {
                let eta = rec.eta.ok_or_else(|| Error::InvalidParameter("passivity certificate without eta".into()))?;
                let (prob, _) = analysis::passivity_problem(&plant, &gain, &dist, eta, &aopts)?;
                check_record(&prob, rec, "passivity", &mut issues)?;
            }
            let sms = analysis::closed_loop_sms(&plant, &gain, &schedule, &dist)?;
            if (sms.rho - r.sms.rho).abs() > REVERIFY_TOL * (1.0 + r.sms.rho.abs()) {
                issues.push(format!("rho: stored {:e}, recomputed {:e}", r.sms.rho, sms.rho));
            }
        }
        Results::Synthesize(SynthesizeResults::Certified(r)) => {
            let sp = synthesis::build_synthesis_lmi(&plant, &dist, r.eta, aopts.output_weighting)?;
            check_record(&sp.problem, &r.synthesis, "synthesis", &mut issues)?;
            let gain = gain_from(&r.k)?;
            gain.check_dims(&plant)?;
            let (prob, _) = analysis::passivity_problem(&plant, &gain, &dist, r.eta, &aopts)?;
            check_record(&prob, &r.passivity, "passivity", &mut issues)?;
            let x = SymMatrix::new(matrix_from_rows(&r.synthesis.variables["X"])?)?;
            let y = matrix_from_rows(&r.synthesis.variables["Y"])?;
            let k = synthesis::recover_gain(&x, &y)?;
            let gap = (k.matrix() - gain.matrix()).norm();
            if gap > REVERIFY_TOL * (1.0 + gain.matrix().norm()) {
                issues.push(format!("K differs from Y X⁻¹ by {gap:e}"));
            }
            let rho = analysis::closed_loop_sms(&plant, &gain, &schedule, &dist)?.rho;
            if !(rho < 1.0) || (rho - r.rho).abs() > REVERIFY_TOL * (1.0 + r.rho) {
                issues.push(format!("rho: stored {:e}, recomputed {:e}", r.rho, rho));
            }
        }
        Results::Synthesize(_) => {}
        Results::Simulate(r) => {
            let gain = gain_from(&r.gain)?;
            let rho = analysis::closed_loop_sms(&plant, &gain, &schedule, &dist)?.rho;
            if (rho - r.rho).abs() > REVERIFY_TOL * (1.0 + r.rho) {
                issues.push(format!("rho: stored {:e}, recomputed {:e}", r.rho, rho));
            }
        }
    }
    Ok(issues)
}

fn rows_inline(rows: &Rows) -> String {
    let inner: Vec<String> = rows
        .iter()
        .map(|r| format!("[{}]", r.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ")))
        .collect();
    format!("[{}]", inner.join(", "))
}

fn outcome_line(out: &mut String, label: &str, o: &Outcome) {
    let _ = match o {
        Outcome::Certified(c) => writeln!(out, "{label:<14}certified (max λ = {:.3e}, margin {:.0e})", c.max_eig(), c.margin),
        Outcome::Indeterminate(u) => writeln!(
            out,
            "{label:<14}indeterminate (best λ_max = {:.3e} after {} iterations)",
            u.best_max_eig, u.iterations
        ),
        Outcome::Unsupported { reason } => writeln!(out, "{label:<14}not run: {reason}"),
    };
}

/// Human-readable summary.
pub fn summary(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<14}{}", "command", report.command);
    let _ = writeln!(out, "{:<14}{}", "version", report.version);
    let _ = writeln!(out, "{:<14}sha256:{}", "config", report.config_digest);
    let _ = writeln!(out, "{:<14}{:?}", "status", report.status);
    match &report.results {
        Results::Analyze(r) => {
            let _ = writeln!(out, "{:<14}{}", "gain", rows_inline(&r.gain));
            let _ = writeln!(out, "{:<14}{:.6}{}", "rho", r.sms.rho, if r.sms.borderline { " (borderline)" } else { "" });
            outcome_line(&mut out, "stability", &r.stability);
            if let Some(p) = &r.passivity {
                if let Some(eta) = p.eta {
                    let _ = writeln!(out, "{:<14}{eta:.6}", "eta");
                }
                outcome_line(&mut out, "passivity", &p.outcome);
            }
        }
        Results::Synthesize(SynthesizeResults::Certified(r)) => {
            let _ = writeln!(out, "{:<14}{}", "K", rows_inline(&r.k));
            let _ = writeln!(out, "{:<14}{:.6}", "eta", r.eta);
            let _ = writeln!(out, "{:<14}{:.6}", "rho", r.rho);
            outcome_line(&mut out, "synthesis", &Outcome::Certified(r.synthesis.clone()));
            outcome_line(&mut out, "passivity", &Outcome::Certified(r.passivity.clone()));
            let _ = writeln!(out, "{:<14}{:.3e}", "congruence", r.verification.congruence_residual);
        }
        Results::Synthesize(SynthesizeResults::Indeterminate(u)) => {
            outcome_line(&mut out, "synthesis", &Outcome::Indeterminate(u.clone()));
        }
        Results::Synthesize(SynthesizeResults::VerificationFailed { message }) => {
            let _ = writeln!(out, "{:<14}{message}", "failure");
        }
        Results::Simulate(r) => {
            let s = &r.stats;
            let _ = writeln!(out, "{:<14}{} ({})", "gain", rows_inline(&r.gain), r.gain_source);
            let _ = writeln!(out, "{:<14}{:.6}", "rho", r.rho);
            let _ = writeln!(out, "{:<14}{} x {} steps", "trials", s.trials, s.horizon);
            let _ = writeln!(out, "{:<14}{:.6e} ± {:.2e} (η = {})", "dissipation", s.dissipation_mean, s.dissipation_se, s.eta);
            let _ = writeln!(out, "{:<14}{:.4}", "converged", s.frac_converged);
            let _ = writeln!(out, "{:<14}{:.2}σ", "mode freq", r.mode_zscore);
            let _ = match &r.decay_fit {
                FitOutcome::Fitted(f) => writeln!(
                    out,
                    "{:<14}alpha = {:.4}, beta = {:.4} over k = {}..={}{}",
                    "decay fit",
                    f.alpha,
                    f.beta,
                    f.first,
                    f.last,
                    if f.steady_state { " (steady state)" } else { "" }
                ),
                FitOutcome::Unavailable { reason } => writeln!(out, "{:<14}unavailable: {reason}", "decay fit"),
            };
        }
    }
    out
}
