//! State-feedback synthesis in the transformed variables `X = P⁻¹`,
//! `Y = K X`.
//!
//! With blocks ordered `[x, w, one block per mode with α_m > 0]`:
//!
//! ```text
//! ⎡ −X                     *              *   ⎤
//! ⎢ −(C1 X + α11 D12 Y)    2ηI − D11ᵀ − D11   ⎥  ≺ 0
//! ⎣ √α_m (A X + [m = 11] B2 Y)   √α_m B1   −X ⎦
//! ```
//!
//! which is the congruence `diag(X, I, …)` of the analysis form at
//! `P = X⁻¹`. Only the full-packet configuration is supported.

use serde::{Deserialize, Serialize};

use crate::analysis::{self, AnalysisOptions, OutputWeighting, PassivityCertificate};
use crate::error::{Error, Result};
use crate::lmi::{self, AffineExpr, Assignment, LmiCertificate, LmiProblem, Term, VarId};
use crate::model::{
    closed_loop, feedthrough_sym, require_positive_feedthrough, Gain, LossModel, Mode, ModeDistribution, Plant,
    Schedule,
};
use crate::numerics::{sym_eigvals, Matrix, SymMatrix};

/// Target dissipation for synthesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EtaSpec {
    Fixed(f64),
    /// Bisect for the largest certifiable value.
    Maximize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisOptions {
    pub analysis: AnalysisOptions,
    /// Absolute tolerance of the η bisection.
    pub eta_tol: f64,
    /// Relative tolerance for the congruence check.
    pub congruence_tol: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { analysis: AnalysisOptions::default(), eta_tol: 1e-3, congruence_tol: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct SynthesisProblem {
    pub problem: LmiProblem,
    pub x: VarId,
    pub y: VarId,
    /// Block layout of the main constraint; mode blocks follow `modes`.
    pub modes: Vec<(Mode, f64)>,
}

fn output_weight(dist: &ModeDistribution, weighting: OutputWeighting) -> f64 {
    match weighting {
        OutputWeighting::ModeAveraged => dist.closed_prob(),
        OutputWeighting::Unweighted => 1.0,
    }
}

/// Synthesis LMI at a fixed `η`.
pub fn build_synthesis_lmi(
    plant: &Plant,
    dist: &ModeDistribution,
    eta: f64,
    weighting: OutputWeighting,
) -> Result<SynthesisProblem> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!("dissipation must be non-negative, got {eta}")));
    }
    require_positive_feedthrough(plant)?;
    let (n, m1) = (plant.n(), plant.m1());
    let modes: Vec<(Mode, f64)> = dist.iter().filter(|(_, p)| *p > 0.0).collect();
    let mut dims = vec![n, m1];
    dims.extend(std::iter::repeat_n(n, modes.len()));

    let mut prob = LmiProblem::new();
    let x = prob.symmetric("X", n);
    let y = prob.rectangular("Y", plant.m2(), n);
    let mut e = AffineExpr::new(dims);
    e.term(0, 0, Term::new(x).weight(-1.0));
    e.term(1, 0, Term::new(x).left(-plant.c1()));
    // Kept even at weight zero so `Y` stays part of the problem.
    e.term(1, 0, Term::new(y).left(-plant.d12()).weight(output_weight(dist, weighting)));
    e.constant(1, 1, Matrix::identity(m1, m1) * (2.0 * eta) - plant.d11().transpose() - plant.d11());
    for (i, &(mode, p)) in modes.iter().enumerate() {
        let r = 2 + i;
        let s = p.sqrt();
        e.term(r, 0, Term::new(x).left(plant.a().clone()).weight(s));
        if mode.closes_loop() {
            e.term(r, 0, Term::new(y).left(plant.b2().clone()).weight(s));
        }
        e.constant(r, 1, plant.b1() * s);
        e.term(r, r, Term::new(x).weight(-1.0));
    }
    prob.constrain("synthesis", e)?;
    prob.positive_definite(x)?;
    Ok(SynthesisProblem { problem: prob, x, y, modes })
}

/// `K = Y X⁻¹`.
pub fn recover_gain(x: &SymMatrix, y: &Matrix) -> Result<Gain> {
    if y.ncols() != x.dim() {
        return Err(Error::DimensionMismatch(format!(
            "Y has {} columns, X is {1}x{1}",
            y.ncols(),
            x.dim()
        )));
    }
    let lu = x.as_matrix().clone().lu();
    let singular = || Error::SingularTransform("X is singular".into());
    let xinv = lu.try_inverse().ok_or_else(singular)?;
    let k = y * xinv;
    let residual = (&k * x.as_matrix() - y).norm();
    if !k.iter().all(|v| v.is_finite()) || residual > 1e-8 * (1.0 + y.norm()) {
        return Err(Error::SingularTransform(format!("recovery residual {residual:e} for K = Y X⁻¹")));
    }
    Gain::new(k)
}

/// Analysis-form block matrix at numeric `P` and `K`, laid out like the
/// synthesis LMI, with `−P⁻¹` on the mode diagonal.
pub fn analysis_block_form(
    plant: &Plant,
    gain: &Gain,
    dist: &ModeDistribution,
    p: &SymMatrix,
    eta: f64,
    weighting: OutputWeighting,
) -> Result<SymMatrix> {
    let fam = closed_loop(plant, gain, 0, &Schedule::FullPacket)?;
    let pinv = p
        .as_matrix()
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularTransform("P is singular".into()))?;
    let (n, m1) = (plant.n(), plant.m1());
    let modes: Vec<(Mode, f64)> = dist.iter().filter(|(_, w)| *w > 0.0).collect();
    let mut dims = vec![n, m1];
    dims.extend(std::iter::repeat_n(n, modes.len()));
    let mut e = AffineExpr::new(dims);
    e.constant(0, 0, -p.as_matrix());
    e.constant(1, 0, -analysis::averaged_output(&fam, dist, weighting));
    e.constant(1, 1, Matrix::identity(m1, m1) * (2.0 * eta) - plant.d11().transpose() - plant.d11());
    for (i, &(mode, w)) in modes.iter().enumerate() {
        let r = 2 + i;
        e.constant(r, 0, &fam.mode(mode).a * w.sqrt());
        e.constant(r, 1, plant.b1() * w.sqrt());
        e.constant(r, r, -&pinv);
    }
    lmi::assemble(&e, &Assignment::new())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTripReport {
    /// Largest eigenvalue of the fresh passivity certificate's constraints.
    pub passivity_max_eig: Option<f64>,
    pub rho: f64,
    /// `‖Tᵀ M_analysis T − M_synthesis‖_F / (1 + ‖M_synthesis‖_F)` with `T = diag(X, I, …)`.
    pub congruence_residual: f64,
    /// Largest relative gap between sorted eigenvalues of the two sides.
    pub congruence_eig_gap: f64,
    pub synthesis_max_eig: f64,
    pub transformed_max_eig: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Re-check a synthesized gain independently of the synthesis solve:
/// fresh passivity solve, oracle stability, and the congruence identity.
pub fn round_trip_verify(
    plant: &Plant,
    dist: &ModeDistribution,
    x: &SymMatrix,
    y: &Matrix,
    gain: &Gain,
    eta: f64,
    opts: &SynthesisOptions,
) -> Result<(RoundTripReport, Option<PassivityCertificate>)> {
    let mut failures = Vec::new();
    let weighting = opts.analysis.output_weighting;

    let passivity = match analysis::passivity_lmi(plant, gain, dist, eta, &opts.analysis) {
        Ok(c) => Some(c),
        Err(Error::Indeterminate(r)) => {
            failures.push(format!("fresh passivity solve found no certificate: {r}"));
            None
        }
        Err(Error::VerificationFailed(m)) => {
            failures.push(m);
            None
        }
        Err(e) => return Err(e),
    };

    let rho = analysis::closed_loop_sms(plant, gain, &Schedule::FullPacket, dist)?.rho;
    if !(rho < 1.0) {
        failures.push(format!("closed loop is not second-moment stable: rho = {rho}"));
    }

    let sp = build_synthesis_lmi(plant, dist, eta, weighting)?;
    let assignment = Assignment::new().with(sp.x, x.as_matrix().clone()).with(sp.y, y.clone());
    let m15 = lmi::assemble(&sp.problem.constraints()[0].expr, &assignment)?;
    let p = SymMatrix::new(
        x.as_matrix()
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularTransform("X is singular".into()))?,
    )?;
    let m16 = analysis_block_form(plant, gain, dist, &p, eta, weighting)?;
    let (n, dim) = (plant.n(), m15.dim());
    // Mode blocks already carry −P⁻¹ = −X and keep the identity.
    let mut t = Matrix::identity(dim, dim);
    t.view_mut((0, 0), (n, n)).copy_from(x.as_matrix());
    let transformed = SymMatrix::new(t.transpose() * m16.as_matrix() * &t)?;
    let scale = 1.0 + m15.frobenius_norm();
    let congruence_residual = (transformed.as_matrix() - m15.as_matrix()).norm() / scale;
    let (ea, eb) = (sym_eigvals(&transformed), sym_eigvals(&m15));
    let eig_scale = 1.0 + eb.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let congruence_eig_gap = ea.iter().zip(&eb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / eig_scale;
    if congruence_residual > opts.congruence_tol || congruence_eig_gap > opts.congruence_tol {
        failures.push(format!(
            "congruence mismatch: residual {congruence_residual:e}, eigenvalue gap {congruence_eig_gap:e}"
        ));
    }
    let synthesis_max_eig = m15.max_eigval();
    let transformed_max_eig = transformed.max_eigval();
    if (synthesis_max_eig < 0.0) != (m16.max_eigval() < 0.0) {
        failures.push("definiteness verdicts of the two forms differ".into());
    }
    let report = RoundTripReport {
        passivity_max_eig: passivity.as_ref().map(|c| c.lmi.max_eig()),
        rho,
        congruence_residual,
        congruence_eig_gap,
        synthesis_max_eig,
        transformed_max_eig,
        passed: failures.is_empty(),
        failures,
    };
    Ok((report, passivity))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisResult {
    pub x: SymMatrix,
    pub y: Matrix,
    pub k: Gain,
    pub eta: f64,
    pub rho: f64,
    pub certificate: LmiCertificate,
    pub passivity: PassivityCertificate,
    pub verification: RoundTripReport,
}

fn solve_at(plant: &Plant, dist: &ModeDistribution, eta: f64, opts: &SynthesisOptions) -> Result<(SynthesisProblem, LmiCertificate)> {
    let sp = build_synthesis_lmi(plant, dist, eta, opts.analysis.output_weighting)?;
    let cert = lmi::solve(&sp.problem, &opts.analysis.solve)?;
    Ok((sp, cert))
}

/// Solve the synthesis LMI, recover `K = Y X⁻¹` and verify the closed loop.
pub fn synthesize(
    plant: &Plant,
    schedule: &Schedule,
    loss: &LossModel,
    eta: EtaSpec,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult> {
    if !schedule.is_full_packet() {
        return Err(Error::InvalidSchedule(
            "synthesis requires full-packet configuration (N = 1, whole state and input per message)".into(),
        ));
    }
    require_positive_feedthrough(plant)?;
    let dist = loss.mode_distribution();
    let (eta, (sp, cert)) = match eta {
        EtaSpec::Fixed(e) => (e, solve_at(plant, &dist, e, opts)?),
        EtaSpec::Maximize => {
            if !(opts.eta_tol > 0.0) {
                return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", opts.eta_tol)));
            }
            let hi0 = feedthrough_sym(plant).expect("checked above").min_eigval() / 2.0;
            let mut best = (0.0, solve_at(plant, &dist, 0.0, opts)?);
            let (mut lo, mut hi) = (0.0, hi0);
            while hi - lo > opts.eta_tol {
                let mid = 0.5 * (lo + hi);
                match solve_at(plant, &dist, mid, opts) {
                    Ok(found) => {
                        lo = mid;
                        best = (mid, found);
                    }
                    Err(Error::Indeterminate(_)) => hi = mid,
                    Err(e) => return Err(e),
                }
            }
            best
        }
    };
    let x = SymMatrix::new(cert.value(sp.x).clone())?;
    let y = cert.value(sp.y).clone();
    let k = recover_gain(&x, &y)?;
    let (verification, passivity) = round_trip_verify(plant, &dist, &x, &y, &k, eta, opts)?;
    match passivity {
        Some(passivity) if verification.passed => Ok(SynthesisResult {
            rho: verification.rho,
            x,
            y,
            k,
            eta,
            certificate: cert,
            passivity,
            verification,
        }),
        _ => Err(Error::VerificationFailed(format!(
            "synthesized gain failed round-trip verification: {}",
            verification.failures.join("; ")
        ))),
    }
}
