//! Networked plant model: the generalized plant, the periodic media-access
//! schedule, Bernoulli packet loss and the four-mode closed-loop family.
//!
//! Sensor selection `S1,k` is a one-hot row over the `p2 = n` state
//! components and actuator selection `S2,k` a one-hot column over the `m2`
//! inputs. A static gain `K` (m2×n) acts through the projections
//! `S2 S2ᵀ` and `S1ᵀ S1`, which reduce to identities in the full-packet
//! configuration.


use crate::error::{Error, Result};
use crate::numerics::{
    ensure_finite, is_pos_definite, numerical_rank, DefinitenessMargin, Matrix, SymMatrix,
};

/// Generalized plant
///
/// ```text
/// x(k+1) = A x + B1 w + B2 u
/// z(k)   = C1 x + D11 w + D12 u
/// y(k)   = x
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Plant {
    a: Matrix,
    b1: Matrix,
    b2: Matrix,
    c1: Matrix,
    d11: Matrix,
    d12: Matrix,
}

impl Plant {
    pub fn new(a: Matrix, b1: Matrix, b2: Matrix, c1: Matrix, d11: Matrix, d12: Matrix) -> Result<Self> {
        let n = a.nrows();
        let (m1, m2, p1) = (b1.ncols(), b2.ncols(), c1.nrows());
        let expect = |name: &str, mat: &Matrix, r: usize, c: usize| -> Result<()> {
            if mat.shape() != (r, c) {
                return Err(Error::DimensionMismatch(format!(
                    "{name} must be {r}x{c}, got {}x{}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            ensure_finite(mat).map_err(|_| Error::InvalidMatrix(format!("{name} has non-finite entries")))
        };
        if n == 0 {
            return Err(Error::DimensionMismatch("state dimension must be positive".into()));
        }
        expect("A", &a, n, n)?;
        expect("B1", &b1, n, m1)?;
        expect("B2", &b2, n, m2)?;
        expect("C1", &c1, p1, n)?;
        expect("D11", &d11, p1, m1)?;
        expect("D12", &d12, p1, m2)?;
        Ok(Self { a, b1, b2, c1, d11, d12 })
    }

    /// Single-state, single-channel plant.
    pub fn scalar(a: f64, b1: f64, b2: f64, c1: f64, d11: f64, d12: f64) -> Self {
        let s = |v: f64| Matrix::from_element(1, 1, v);
        Self::new(s(a), s(b1), s(b2), s(c1), s(d11), s(d12)).expect("scalar plant is well formed")
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b1(&self) -> &Matrix {
        &self.b1
    }
    pub fn b2(&self) -> &Matrix {
        &self.b2
    }
    pub fn c1(&self) -> &Matrix {
        &self.c1
    }
    pub fn d11(&self) -> &Matrix {
        &self.d11
    }
    pub fn d12(&self) -> &Matrix {
        &self.d12
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Exogenous input dimension.
    pub fn m1(&self) -> usize {
        self.b1.ncols()
    }
    /// Control input dimension.
    pub fn m2(&self) -> usize {
        self.b2.ncols()
    }
    /// Controlled output dimension.
    pub fn p1(&self) -> usize {
        self.c1.nrows()
    }
    /// Number of sensors. The measurement is the full state.
    pub fn p2(&self) -> usize {
        self.n()
    }

    /// `A + B2 K`, the lossless state-feedback closed loop.
    pub fn lossless_closed_loop(&self, gain: &Gain) -> Matrix {
        &self.a + &self.b2 * gain.matrix()
    }
}

/// Periodic media-access pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// Period one: the whole state goes out as one message and the whole
    /// control vector comes back as one message, every step.
    FullPacket,
    Periodic(PeriodicSchedule),
}

/// Sensor/actuator slot assignment. Entry `0` means the slot is idle for
/// that side; `i > 0` selects sensor (or actuator) `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeriodicSchedule {
    s1: Vec<usize>,
    s2: Vec<usize>,
    sensors: usize,
    actuators: usize,
}

impl PeriodicSchedule {
    pub fn s1(&self) -> &[usize] {
        &self.s1
    }
    pub fn s2(&self) -> &[usize] {
        &self.s2
    }
    pub fn sensors(&self) -> usize {
        self.sensors
    }
    pub fn actuators(&self) -> usize {
        self.actuators
    }
}

impl Schedule {
    pub fn periodic(s1: Vec<usize>, s2: Vec<usize>, sensors: usize, actuators: usize) -> Result<Self> {
        if s1.is_empty() {
            return Err(Error::InvalidSchedule("period must be at least 1".into()));
        }
        if s1.len() != s2.len() {
            return Err(Error::InvalidSchedule(format!(
                "s1 has {} slots but s2 has {}",
                s1.len(),
                s2.len()
            )));
        }
        for (k, (&a, &b)) in s1.iter().zip(&s2).enumerate() {
            if a > sensors {
                return Err(Error::InvalidSchedule(format!(
                    "slot {k}: sensor index {a} exceeds sensor count {sensors}"
                )));
            }
            if b > actuators {
                return Err(Error::InvalidSchedule(format!(
                    "slot {k}: actuator index {b} exceeds actuator count {actuators}"
                )));
            }
            if a != 0 && b != 0 {
                return Err(Error::InvalidSchedule(format!(
                    "slot {k}: sensor {a} and actuator {b} cannot both transmit"
                )));
            }
        }
        Ok(Self::Periodic(PeriodicSchedule { s1, s2, sensors, actuators }))
    }

    pub fn period(&self) -> usize {
        match self {
            Self::FullPacket => 1,
            Self::Periodic(p) => p.s1.len(),
        }
    }

    pub fn is_full_packet(&self) -> bool {
        matches!(self, Self::FullPacket)
    }

    pub fn slot(&self, k: usize) -> usize {
        k % self.period()
    }

    /// Selector matrices `(S1,k, S2,k)` at time `k`.
    ///
    /// Periodic schedules yield a one-hot `1×p2` row and a one-hot `m2×1`
    /// column (all zero when the slot is idle for that side). The
    /// full-packet schedule yields `I_p2` and `I_m2`.
    pub fn selectors(&self, k: usize, p2: usize, m2: usize) -> Result<(Matrix, Matrix)> {
        match self {
            Self::FullPacket => Ok((Matrix::identity(p2, p2), Matrix::identity(m2, m2))),
            Self::Periodic(p) => {
                if p.sensors != p2 || p.actuators != m2 {
                    return Err(Error::DimensionMismatch(format!(
                        "schedule declared for {} sensors / {} actuators, asked for {p2} / {m2}",
                        p.sensors, p.actuators
                    )));
                }
                let slot = k % p.s1.len();
                let mut s1 = Matrix::zeros(1, p2);
                if p.s1[slot] != 0 {
                    s1[(0, p.s1[slot] - 1)] = 1.0;
                }
                let mut s2 = Matrix::zeros(m2, 1);
                if p.s2[slot] != 0 {
                    s2[(p.s2[slot] - 1, 0)] = 1.0;
                }
                Ok((s1, s2))
            }
        }
    }

    /// Projections `(S1ᵀ S1, S2 S2ᵀ)` through which the gain acts.
    pub fn projections(&self, k: usize, p2: usize, m2: usize) -> Result<(Matrix, Matrix)> {
        let (s1, s2) = self.selectors(k, p2, m2)?;
        Ok((s1.transpose() * &s1, &s2 * s2.transpose()))
    }
}

/// Free function form of [`Schedule::selectors`].
pub fn selector_matrices(schedule: &Schedule, k: usize, p2: usize, m2: usize) -> Result<(Matrix, Matrix)> {
    schedule.selectors(k, p2, m2)
}

/// Bernoulli drop probabilities: `alpha1 = Prob{θ1 = 0}` on the
/// sensor-to-controller link and `alpha2 = Prob{θ2 = 0}` on the
/// controller-to-actuator link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossModel {
    alpha1: f64,
    alpha2: f64,
}

impl LossModel {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        for (name, a) in [("alpha1", alpha1), ("alpha2", alpha2)] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidParameter(format!("{name} = {a} is outside [0, 1]")));
            }
        }
        Ok(Self { alpha1, alpha2 })
    }

    pub fn lossless() -> Self {
        Self { alpha1: 0.0, alpha2: 0.0 }
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }
    pub fn alpha2(&self) -> f64 {
        self.alpha2
    }

    pub fn mode_distribution(&self) -> ModeDistribution {
        mode_distribution(self)
    }
}

/// Arrival indicators: `true` means the message got through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Mode {
    pub theta1: bool,
    pub theta2: bool,
}

impl Mode {
    /// All four modes in the order (0,0), (0,1), (1,0), (1,1).
    pub const ALL: [Mode; 4] = [
        Mode { theta1: false, theta2: false },
        Mode { theta1: false, theta2: true },
        Mode { theta1: true, theta2: false },
        Mode { theta1: true, theta2: true },
    ];

    pub fn index(self) -> usize {
        2 * usize::from(self.theta1) + usize::from(self.theta2)
    }

    /// Whether feedback reaches the plant in this mode.
    pub fn closes_loop(self) -> bool {
        self.theta1 && self.theta2
    }
}

/// `p[i][j] = Prob{θ1 = i, θ2 = j}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeDistribution {
    p: [[f64; 2]; 2],
}

impl ModeDistribution {
    pub fn new(p: [[f64; 2]; 2]) -> Result<Self> {
        let sum: f64 = p.iter().flatten().sum();
        if p.iter().flatten().any(|&x| !(0.0..=1.0).contains(&x)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "mode probabilities must lie in [0,1] and sum to 1, got {p:?}"
            )));
        }
        Ok(Self { p })
    }

    pub fn prob(&self, mode: Mode) -> f64 {
        self.p[usize::from(mode.theta1)][usize::from(mode.theta2)]
    }

    pub fn table(&self) -> [[f64; 2]; 2] {
        self.p
    }

    /// Probability that the loop closes, `Prob{θ1 = θ2 = 1}`.
    pub fn closed_prob(&self) -> f64 {
        self.p[1][1]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Mode, f64)> + '_ {
        Mode::ALL.into_iter().map(|m| (m, self.prob(m)))
    }
}

pub fn mode_distribution(loss: &LossModel) -> ModeDistribution {
    let (a1, a2) = (loss.alpha1, loss.alpha2);
    ModeDistribution {
        p: [
            [a1 * a2, a1 * (1.0 - a2)],
            [(1.0 - a1) * a2, (1.0 - a1) * (1.0 - a2)],
        ],
    }
}

/// Static state-feedback gain `K` (m2×n), `v = K ŷ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gain(Matrix);

impl Gain {
    pub fn new(k: Matrix) -> Result<Self> {
        ensure_finite(&k)?;
        Ok(Self(k))
    }

    pub fn zeros(m2: usize, n: usize) -> Self {
        Self(Matrix::zeros(m2, n))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn check_dims(&self, plant: &Plant) -> Result<()> {
        if self.0.shape() != (plant.m2(), plant.n()) {
            return Err(Error::DimensionMismatch(format!(
                "gain must be {}x{}, got {}x{}",
                plant.m2(),
                plant.n(),
                self.0.nrows(),
                self.0.ncols()
            )));
        }
        Ok(())
    }
}

/// Matrices of one closed-loop mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
}

/// The four closed-loop modes at one time index, indexed by [`Mode::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopFamily {
    pub k: usize,
    pub modes: [ModeSystem; 4],
}

impl ClosedLoopFamily {
    pub fn mode(&self, mode: Mode) -> &ModeSystem {
        &self.modes[mode.index()]
    }

    pub fn dim(&self) -> usize {
        self.modes[0].a.nrows()
    }
}

/// Closed loop at time `k`:
/// `Ā = A + θ1θ2·B2 (S2S2ᵀ) K (S1ᵀS1)`, `C̄ = C1 + θ1θ2·D12 (S2S2ᵀ) K (S1ᵀS1)`,
/// `B̄ = B1`, `D̄ = D11`.
pub fn closed_loop(plant: &Plant, gain: &Gain, k: usize, schedule: &Schedule) -> Result<ClosedLoopFamily> {
    gain.check_dims(plant)?;
    let (sens, act) = schedule.projections(k, plant.p2(), plant.m2())?;
    let routed = &act * gain.matrix() * &sens;
    let a_fb = &plant.a + &plant.b2 * &routed;
    let c_fb = &plant.c1 + &plant.d12 * &routed;
    let build = |m: Mode| {
        let (a, c) = if m.closes_loop() {
            (a_fb.clone(), c_fb.clone())
        } else {
            (plant.a.clone(), plant.c1.clone())
        };
        ModeSystem { a, b: plant.b1.clone(), c, d: plant.d11.clone() }
    };
    Ok(ClosedLoopFamily { k, modes: Mode::ALL.map(build) })
}

/// Closed-loop families for every slot of the schedule period.
pub fn periodic_closed_loop(plant: &Plant, gain: &Gain, schedule: &Schedule) -> Result<Vec<ClosedLoopFamily>> {
    (0..schedule.period())
        .map(|k| closed_loop(plant, gain, k, schedule))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantDiagnostics {
    pub finite: bool,
    /// `D11 + D11ᵀ ≻ 0`; false when `D11` is not square.
    pub feedthrough_positive: bool,
    /// `λ_min(D11 + D11ᵀ)` when `D11` is square.
    pub feedthrough_min_eig: Option<f64>,
    pub controllability_rank: usize,
    pub controllable: bool,
}

/// Diagnostics report. Never fails; callers decide which findings matter.
pub fn validate_plant(plant: &Plant) -> PlantDiagnostics {
    let finite = [&plant.a, &plant.b1, &plant.b2, &plant.c1, &plant.d11, &plant.d12]
        .iter()
        .all(|m| m.iter().all(|x| x.is_finite()));
    let (feedthrough_positive, feedthrough_min_eig) = match feedthrough_sym(plant) {
        Some(s) => (is_pos_definite(&s, DefinitenessMargin::default()), Some(s.min_eigval())),
        None => (false, None),
    };
    let n = plant.n();
    let m2 = plant.m2();
    let mut ctrb = Matrix::zeros(n, n * m2);
    let mut blk = plant.b2.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * m2), (n, m2)).copy_from(&blk);
        blk = &plant.a * blk;
    }
    let controllability_rank = numerical_rank(&ctrb, 1e-10);
    PlantDiagnostics {
        finite,
        feedthrough_positive,
        feedthrough_min_eig,
        controllability_rank,
        controllable: controllability_rank == n,
    }
}

/// `D11 + D11ᵀ`, when `D11` is square.
pub fn feedthrough_sym(plant: &Plant) -> Option<SymMatrix> {
    if plant.p1() != plant.m1() {
        return None;
    }
    SymMatrix::new(&plant.d11 + plant.d11.transpose()).ok()
}

/// Refuse passivity work unless `D11` is square with `D11 + D11ᵀ ≻ 0`.
pub fn require_positive_feedthrough(plant: &Plant) -> Result<()> {
    if plant.p1() != plant.m1() {
        return Err(Error::AssumptionViolated(format!(
            "passivity needs dim z = dim w, got {} and {}",
            plant.p1(),
            plant.m1()
        )));
    }
    let diag = validate_plant(plant);
    if !diag.feedthrough_positive {
        return Err(Error::AssumptionViolated(format!(
            "D11 + D11ᵀ must be positive definite (λ_min = {:.3e})",
            diag.feedthrough_min_eig.unwrap_or(f64::NAN)
        )));
    }
    Ok(())
}
