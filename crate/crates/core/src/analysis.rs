//! Second-moment stability and strict passivity of the closed loop.
//!
//! Two independent routes are offered for stability: the coupled
//! Lyapunov LMIs over an N-periodic family of matrices, and a spectral
//! radius test on the second-moment operator. Passivity with dissipation
//! `η` is certified through the block matrix
//!
//! ```text
//! Θ = [ Σ α_m Ā_mᵀ P Ā_m − P      Σ α_m Ā_mᵀ P B̄ − C̃ᵀ     ]
//!     [ Σ α_m B̄ᵀ P Ā_m − C̃        B̄ᵀ P B̄ + 2ηI − D̄ᵀ − D̄  ]  ≺ 0
//! ```
//!
//! where the mode average is exact for i.i.d. losses and
//! `ζᵀ Θ ζ = E[ΔV − 2wᵀz + 2η wᵀw | x, w]` with `ζ = (x, w)`.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{self, AffineExpr, LmiCertificate, LmiProblem, SolveOptions, Term, VarId};
use crate::model::{
    closed_loop, periodic_closed_loop, require_positive_feedthrough, ClosedLoopFamily, Gain, Mode,
    ModeDistribution, ModeSystem, Plant, Schedule,
};
use crate::numerics::{kron, spectral_radius, DefinitenessMargin, Matrix, SymMatrix};
use crate::sim::SimTrace;

/// `|rho − 1|` below this is reported as borderline.
pub const BORDERLINE_BAND: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmsReport {
    /// Per-step spectral radius of the second-moment operator.
    pub rho: f64,
    pub stable: bool,
    pub borderline: bool,
}

/// How the gain enters the output row of the passivity matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum OutputWeighting {
    /// `C̃ = Σ α_m C̄_m = C1 + α11·D12 K`, the conditional expectation.
    #[default]
    ModeAveraged,
    /// `C̃ = C1 + D12 K`, as if the loop were always closed in the output.
    Unweighted,
}

/// Which passivity inequality to pose.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PassivityForm {
    /// One mode-averaged `Θ ≺ 0`.
    #[default]
    Averaged,
    /// `Θ_m ≺ 0` separately for every mode with positive probability.
    /// Sufficient for the averaged condition and more conservative.
    PerMode,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnalysisOptions {
    pub solve: SolveOptions,
    pub output_weighting: OutputWeighting,
    pub form: PassivityForm,
}

impl AnalysisOptions {
    pub fn margin(&self) -> DefinitenessMargin {
        self.solve.margin
    }
}

/// Second-moment operator of one step: `Σ_m α_m Ā_m ⊗ Ā_m`.
pub fn second_moment_operator(family: &ClosedLoopFamily, dist: &ModeDistribution) -> Matrix {
    let n = family.dim();
    let mut op = Matrix::zeros(n * n, n * n);
    for (mode, p) in dist.iter() {
        if p > 0.0 {
            let a = &family.mode(mode).a;
            op += kron(a, a) * p;
        }
    }
    op
}

/// Spectral-radius test for second-moment stability. For a period-N family
/// the radius of the one-period operator product is taken to the power 1/N.
pub fn sms_oracle(families: &[ClosedLoopFamily], dist: &ModeDistribution) -> Result<SmsReport> {
    let first = families
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty closed-loop family list".into()))?;
    let n = first.dim();
    let mut product = Matrix::identity(n * n, n * n);
    for fam in families {
        product = second_moment_operator(fam, dist) * product;
    }
    let rho = spectral_radius(&product)?.powf(1.0 / families.len() as f64);
    Ok(SmsReport { rho, stable: rho < 1.0, borderline: (rho - 1.0).abs() < BORDERLINE_BAND })
}

/// Oracle for a plant/gain/schedule triple.
pub fn closed_loop_sms(plant: &Plant, gain: &Gain, schedule: &Schedule, dist: &ModeDistribution) -> Result<SmsReport> {
    sms_oracle(&periodic_closed_loop(plant, gain, schedule)?, dist)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityCertificate {
    /// `P_k` for `k = 0..N`.
    pub p: Vec<SymMatrix>,
    pub margin: DefinitenessMargin,
    pub lmi: LmiCertificate,
}

/// Coupled stability LMIs: for every slot `k`,
/// `Σ_m α_m Ā_{k,m}ᵀ P_{(k+1) mod N} Ā_{k,m} − P_k ≺ 0` and `P_k ≻ 0`.
pub fn stability_problem(
    plant: &Plant,
    gain: &Gain,
    schedule: &Schedule,
    dist: &ModeDistribution,
) -> Result<(LmiProblem, Vec<VarId>)> {
    let families = periodic_closed_loop(plant, gain, schedule)?;
    let n = plant.n();
    let period = families.len();
    let mut prob = LmiProblem::new();
    let ps: Vec<VarId> = (0..period).map(|k| prob.symmetric(&format!("P{k}"), n)).collect();
    for (k, fam) in families.iter().enumerate() {
        let next = ps[(k + 1) % period];
        let mut e = AffineExpr::square(n);
        for (mode, prob_m) in dist.iter() {
            if prob_m > 0.0 {
                let a = &fam.mode(mode).a;
                e.term(0, 0, Term::new(next).left(a.transpose()).right(a.clone()).weight(prob_m));
            }
        }
        e.term(0, 0, Term::new(ps[k]).weight(-1.0));
        prob.constrain(&format!("lyapunov[{k}]"), e)?;
    }
    for &p in &ps {
        prob.positive_definite(p)?;
    }
    Ok((prob, ps))
}

pub fn stability_lmi(
    plant: &Plant,
    gain: &Gain,
    schedule: &Schedule,
    dist: &ModeDistribution,
    opts: &SolveOptions,
) -> Result<StabilityCertificate> {
    let (prob, ps) = stability_problem(plant, gain, schedule, dist)?;
    let lmi = lmi::solve(&prob, opts)?;
    let p = ps
        .iter()
        .map(|&id| SymMatrix::new(lmi.value(id).clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityCertificate { p, margin: opts.margin, lmi })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PassivityCertificate {
    pub p: SymMatrix,
    pub eta: f64,
    pub margin: DefinitenessMargin,
    /// Spectral radius of the certified closed loop.
    pub rho: f64,
    pub lmi: LmiCertificate,
}

/// `C̃` for the chosen output weighting.
pub fn averaged_output(family: &ClosedLoopFamily, dist: &ModeDistribution, weighting: OutputWeighting) -> Matrix {
    match weighting {
        OutputWeighting::ModeAveraged => {
            let mut c = Matrix::zeros(family.modes[0].c.nrows(), family.dim());
            for (mode, p) in dist.iter() {
                c += &family.mode(mode).c * p;
            }
            c
        }
        OutputWeighting::Unweighted => family.mode(Mode::ALL[3]).c.clone(),
    }
}

fn theta_expr(
    p: VarId,
    rows: &[(f64, &Matrix)],
    b: &Matrix,
    c: &Matrix,
    d: &Matrix,
    eta: f64,
) -> AffineExpr {
    let n = b.nrows();
    let m1 = b.ncols();
    let mut e = AffineExpr::new(vec![n, m1]);
    for &(w, a) in rows {
        e.term(0, 0, Term::new(p).left(a.transpose()).right(a.clone()).weight(w));
        e.term(1, 0, Term::new(p).left(b.transpose()).right(a.clone()).weight(w));
    }
    e.term(0, 0, Term::new(p).weight(-1.0));
    e.constant(1, 0, -c);
    e.term(1, 1, Term::new(p).left(b.transpose()).right(b.clone()));
    e.constant(1, 1, Matrix::identity(m1, m1) * (2.0 * eta) - d.transpose() - d);
    e
}

/// Passivity LMI over `P ≻ 0` for the full-packet closed loop.
pub fn passivity_problem(
    plant: &Plant,
    gain: &Gain,
    dist: &ModeDistribution,
    eta: f64,
    opts: &AnalysisOptions,
) -> Result<(LmiProblem, VarId)> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!("dissipation must be non-negative, got {eta}")));
    }
    require_positive_feedthrough(plant)?;
    let fam = closed_loop(plant, gain, 0, &Schedule::FullPacket)?;
    let mut prob = LmiProblem::new();
    let p = prob.symmetric("P", plant.n());
    let b = plant.b1();
    let d = plant.d11();
    match opts.form {
        PassivityForm::Averaged => {
            let rows: Vec<(f64, &Matrix)> = dist
                .iter()
                .filter(|(_, w)| *w > 0.0)
                .map(|(m, w)| (w, &fam.mode(m).a))
                .collect();
            let c = averaged_output(&fam, dist, opts.output_weighting);
            prob.constrain("theta", theta_expr(p, &rows, b, &c, d, eta))?;
        }
        PassivityForm::PerMode => {
            for (mode, _) in dist.iter().filter(|(_, w)| *w > 0.0) {
                let sys = fam.mode(mode);
                let e = theta_expr(p, &[(1.0, &sys.a)], b, &sys.c, d, eta);
                prob.constrain(&format!("theta[{}{}]", u8::from(mode.theta1), u8::from(mode.theta2)), e)?;
            }
        }
    }
    prob.positive_definite(p)?;
    Ok((prob, p))
}

pub fn passivity_lmi(
    plant: &Plant,
    gain: &Gain,
    dist: &ModeDistribution,
    eta: f64,
    opts: &AnalysisOptions,
) -> Result<PassivityCertificate> {
    let (prob, p) = passivity_problem(plant, gain, dist, eta, opts)?;
    let lmi = lmi::solve(&prob, &opts.solve)?;
    let p = SymMatrix::new(lmi.value(p).clone())?;
    // The (1,1) block of Θ is the stability inequality at the same P.
    let rho = closed_loop_sms(plant, gain, &Schedule::FullPacket, dist)?.rho;
    if rho >= 1.0 {
        return Err(Error::VerificationFailed(format!(
            "passivity certificate issued for a closed loop with rho = {rho}"
        )));
    }
    Ok(PassivityCertificate { p, eta, margin: opts.margin(), rho, lmi })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DissipationMargin {
    pub eta_star: f64,
    /// Upper end of the bisection bracket, `λ_min(D11 + D11ᵀ)/2`.
    pub eta_max: f64,
    pub certificate: PassivityCertificate,
}

/// Largest certified dissipation, by bisection on `[0, λ_min(D11 + D11ᵀ)/2]`.
pub fn max_dissipation(
    plant: &Plant,
    gain: &Gain,
    dist: &ModeDistribution,
    tol: f64,
    opts: &AnalysisOptions,
) -> Result<DissipationMargin> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    require_positive_feedthrough(plant)?;
    let eta_max = crate::model::feedthrough_sym(plant)
        .expect("square feedthrough checked above")
        .min_eigval()
        / 2.0;
    let mut best = passivity_lmi(plant, gain, dist, 0.0, opts)?;
    let (mut lo, mut hi) = (0.0, eta_max);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match passivity_lmi(plant, gain, dist, mid, opts) {
            Ok(cert) => {
                lo = mid;
                best = cert;
            }
            Err(Error::Indeterminate(_)) => hi = mid,
            Err(e) => return Err(e),
        }
    }
    Ok(DissipationMargin { eta_star: lo, eta_max, certificate: best })
}

/// Per-mode `Θ_m` evaluated at a numeric `P`.
pub fn mode_theta(sys: &ModeSystem, p: &SymMatrix, eta: f64) -> Result<SymMatrix> {
    let pm = p.as_matrix();
    let (n, m1) = (sys.a.nrows(), sys.b.ncols());
    let mut out = Matrix::zeros(n + m1, n + m1);
    let t11 = sys.a.transpose() * pm * &sys.a - pm;
    let t21 = sys.b.transpose() * pm * &sys.a - &sys.c;
    let t22 = sys.b.transpose() * pm * &sys.b + Matrix::identity(m1, m1) * (2.0 * eta)
        - sys.d.transpose()
        - &sys.d;
    out.view_mut((0, 0), (n, n)).copy_from(&t11);
    out.view_mut((n, 0), (m1, n)).copy_from(&t21);
    out.view_mut((0, n), (n, m1)).copy_from(&t21.transpose());
    out.view_mut((n, n), (m1, m1)).copy_from(&t22);
    SymMatrix::new(out)
}

/// Mode-averaged `Θ` evaluated at a numeric `P`.
pub fn averaged_theta(
    family: &ClosedLoopFamily,
    dist: &ModeDistribution,
    p: &SymMatrix,
    eta: f64,
    weighting: OutputWeighting,
) -> Result<SymMatrix> {
    let mut prob = LmiProblem::new();
    let pid = prob.symmetric("P", p.dim());
    let rows: Vec<(f64, &Matrix)> = dist
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(m, w)| (w, &family.mode(m).a))
        .collect();
    let c = averaged_output(family, dist, weighting);
    let sys = &family.modes[0];
    let e = theta_expr(pid, &rows, &sys.b, &c, &sys.d, eta);
    lmi::assemble(&e, &lmi::Assignment::new().with(pid, p.as_matrix().clone()))
}

/// Largest deviation, along a recorded trajectory, between the realized
/// one-step supply balance `V(x⁺) − V(x) − 2wᵀz + 2η wᵀw` (with
/// `V(x) = xᵀPx`) and the quadratic form `ζᵀ Θ_mode ζ`.
pub fn dissipation_identity_check(
    plant: &Plant,
    gain: &Gain,
    schedule: &Schedule,
    p: &SymMatrix,
    eta: f64,
    trace: &SimTrace,
) -> Result<f64> {
    if p.dim() != plant.n() {
        return Err(Error::DimensionMismatch(format!(
            "P is {0}x{0}, plant has {1} states",
            p.dim(),
            plant.n()
        )));
    }
    let families = periodic_closed_loop(plant, gain, schedule)?;
    let pm = p.as_matrix();
    let n = plant.n();
    let mut worst = 0.0f64;
    for k in 0..trace.horizon() {
        let rec = trace.step(k);
        let x = rec.x;
        let xn = trace.state(k + 1);
        let balance = (xn.transpose() * pm * xn)[(0, 0)] - (x.transpose() * pm * x)[(0, 0)]
            - 2.0 * rec.w.dot(rec.z)
            + 2.0 * eta * rec.w.dot(rec.w);
        let theta = mode_theta(families[rec.slot].mode(rec.mode), p, eta)?;
        let mut zeta = nalgebra::DVector::zeros(n + rec.w.len());
        zeta.rows_mut(0, n).copy_from(x);
        zeta.rows_mut(n, rec.w.len()).copy_from(rec.w);
        let form = (zeta.transpose() * theta.as_matrix() * &zeta)[(0, 0)];
        worst = worst.max((balance - form).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LossModel;

    fn s(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    fn scalar_family(a_closed: f64, a_open: f64) -> ClosedLoopFamily {
        let sys = |a: f64| ModeSystem { a: s(a), b: s(1.0), c: s(0.5), d: s(1.0) };
        ClosedLoopFamily { k: 0, modes: [sys(a_open), sys(a_open), sys(a_open), sys(a_closed)] }
    }

    #[test]
    fn oracle_examples() {
        let dist = LossModel::new(0.3, 0.4).unwrap().mode_distribution();
        let r = sms_oracle(&[scalar_family(0.5, 0.5)], &dist).unwrap();
        assert!((r.rho - 0.25).abs() < 1e-14 && r.stable);

        let dist = LossModel::new(0.0, 0.2).unwrap().mode_distribution();
        let r = sms_oracle(&[scalar_family(0.5, 1.2)], &dist).unwrap();
        assert!((r.rho - (0.2 * 1.44 + 0.8 * 0.25)).abs() < 1e-14);
        assert!((r.rho - 0.488).abs() < 1e-12 && r.stable && !r.borderline);

        let r = sms_oracle(&[scalar_family(2.0, 2.0)], &dist).unwrap();
        assert!((r.rho - 4.0).abs() < 1e-12 && !r.stable);
    }

    #[test]
    fn periodic_oracle_matches_product() {
        // Two slots with scalar operators 0.5² and 1.2²: rho = sqrt(0.25·1.44).
        let dist = LossModel::lossless().mode_distribution();
        let r = sms_oracle(&[scalar_family(0.5, 0.5), scalar_family(1.2, 1.2)], &dist).unwrap();
        assert!((r.rho - (0.25f64 * 1.44).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn stability_lmi_scalar_cases() {
        let opts = SolveOptions::default();
        let lossless = LossModel::lossless().mode_distribution();
        let plant = Plant::scalar(0.5, 1.0, 1.0, 0.5, 1.0, 0.0);
        let cert = stability_lmi(&plant, &Gain::zeros(1, 1), &Schedule::FullPacket, &lossless, &opts).unwrap();
        assert!(cert.p[0].min_eigval() > 0.0);

        let plant = Plant::scalar(1.2, 1.0, 1.0, 0.5, 1.0, 0.0);
        let k = Gain::new(s(-0.7)).unwrap();
        let dist = LossModel::new(0.0, 0.2).unwrap().mode_distribution();
        stability_lmi(&plant, &k, &Schedule::FullPacket, &dist, &opts).unwrap();
        let rho = closed_loop_sms(&plant, &k, &Schedule::FullPacket, &dist).unwrap().rho;
        assert!((rho - 0.488).abs() < 1e-12);

        let plant = Plant::scalar(2.0, 1.0, 1.0, 0.5, 1.0, 0.0);
        let r = stability_lmi(&plant, &Gain::zeros(1, 1), &Schedule::FullPacket, &lossless, &opts);
        assert!(matches!(r, Err(Error::Indeterminate(_))));
    }

    #[test]
    fn periodic_stability_certificate_has_one_p_per_slot() {
        let plant = Plant::new(
            Matrix::from_row_slice(2, 2, &[0.6, 0.2, 0.0, 0.7]),
            Matrix::identity(2, 1),
            Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
            Matrix::from_element(1, 2, 0.3),
            s(1.0),
            s(0.0),
        )
        .unwrap();
        let sched = Schedule::periodic(vec![2, 1, 0], vec![0, 0, 1], 2, 1).unwrap();
        let dist = LossModel::new(0.1, 0.1).unwrap().mode_distribution();
        let k = Gain::new(Matrix::from_row_slice(1, 2, &[0.0, -0.3])).unwrap();
        let cert = stability_lmi(&plant, &k, &sched, &dist, &SolveOptions::default()).unwrap();
        assert_eq!(cert.p.len(), 3);
        assert!(closed_loop_sms(&plant, &k, &sched, &dist).unwrap().stable);
    }

    #[test]
    fn scalar_passivity_at_hand_evaluated_point() {
        // x⁺ = 0.5x + w, z = 0.5x + w, lossless: at P = 1, Θ = diag(−0.75, 2η − 1).
        // Over all P > 0 feasibility needs 2 − 2η > 4P/3 − 2/3 + 1/(3P), so η* = 2/3.
        let plant = Plant::scalar(0.5, 1.0, 0.0, 0.5, 1.0, 0.0);
        let dist = LossModel::lossless().mode_distribution();
        let fam = closed_loop(&plant, &Gain::zeros(1, 1), 0, &Schedule::FullPacket).unwrap();
        let th = averaged_theta(&fam, &dist, &SymMatrix::identity(1), 0.4, OutputWeighting::ModeAveraged).unwrap();
        let m = th.as_matrix();
        assert!((m[(0, 0)] + 0.75).abs() < 1e-15 && m[(0, 1)].abs() < 1e-15);
        assert!((m[(1, 1)] + 0.2).abs() < 1e-15);

        let opts = AnalysisOptions::default();
        let cert = passivity_lmi(&plant, &Gain::zeros(1, 1), &dist, 0.4, &opts).unwrap();
        assert!(cert.rho < 1.0);
        assert!(matches!(
            passivity_lmi(&plant, &Gain::zeros(1, 1), &dist, 0.7, &opts),
            Err(Error::Indeterminate(_))
        ));
    }

    #[test]
    fn passivity_refuses_zero_feedthrough() {
        let plant = Plant::scalar(0.5, 1.0, 0.0, 0.5, 0.0, 0.0);
        let dist = LossModel::lossless().mode_distribution();
        let r = passivity_lmi(&plant, &Gain::zeros(1, 1), &dist, 0.0, &AnalysisOptions::default());
        assert!(matches!(r, Err(Error::AssumptionViolated(_))));
    }

    #[test]
    fn max_dissipation_closed_forms() {
        let dist = LossModel::lossless().mode_distribution();
        let opts = AnalysisOptions::default();
        let plant = Plant::scalar(0.5, 1.0, 0.0, 0.5, 1.0, 0.0);
        let r = max_dissipation(&plant, &Gain::zeros(1, 1), &dist, 1e-3, &opts).unwrap();
        assert!((r.eta_star - 2.0 / 3.0).abs() < 0.01, "eta* = {}", r.eta_star);

        // z = w: Θ = diag(−P, 2η − 2)
        let memoryless = Plant::scalar(0.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let r = max_dissipation(&memoryless, &Gain::zeros(1, 1), &dist, 1e-3, &opts).unwrap();
        assert!((r.eta_star - 1.0).abs() < 2e-3);

        let two = Plant::new(
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 1),
            Matrix::zeros(2, 2),
            Matrix::identity(2, 2),
            Matrix::zeros(2, 1),
        )
        .unwrap();
        let r = max_dissipation(&two, &Gain::zeros(1, 2), &dist, 1e-3, &opts).unwrap();
        assert!((r.eta_star - 1.0).abs() < 2e-3);
    }

    #[test]
    fn per_mode_form_is_more_conservative() {
        let plant = Plant::scalar(1.2, 1.0, 1.0, 0.5, 1.0, 0.0);
        let dist = LossModel::new(0.0, 0.2).unwrap().mode_distribution();
        let k = Gain::new(s(-1.0)).unwrap();
        let averaged = AnalysisOptions::default();
        passivity_lmi(&plant, &k, &dist, 0.1, &averaged).unwrap();
        // The open-loop mode (A = 1.2) cannot satisfy its own Lyapunov block.
        let per_mode = AnalysisOptions { form: PassivityForm::PerMode, ..Default::default() };
        assert!(matches!(
            passivity_lmi(&plant, &k, &dist, 0.1, &per_mode),
            Err(Error::Indeterminate(_))
        ));
    }

    #[test]
    fn averaged_theta_is_expectation_of_mode_thetas() {
        let plant = Plant::new(
            Matrix::from_row_slice(2, 2, &[0.9, 0.3, -0.2, 0.4]),
            Matrix::from_row_slice(2, 1, &[1.0, 0.5]),
            Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
            Matrix::from_row_slice(1, 2, &[0.2, -0.1]),
            s(0.8),
            s(0.4),
        )
        .unwrap();
        let k = Gain::new(Matrix::from_row_slice(1, 2, &[-0.3, 0.2])).unwrap();
        let dist = LossModel::new(0.25, 0.1).unwrap().mode_distribution();
        let fam = closed_loop(&plant, &k, 0, &Schedule::FullPacket).unwrap();
        let p = SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let avg = averaged_theta(&fam, &dist, &p, 0.2, OutputWeighting::ModeAveraged).unwrap();
        let mut expect = Matrix::zeros(3, 3);
        for (m, w) in dist.iter() {
            expect += mode_theta(fam.mode(m), &p, 0.2).unwrap().as_matrix() * w;
        }
        assert!((avg.as_matrix() - expect).norm() < 1e-12);
    }
}
