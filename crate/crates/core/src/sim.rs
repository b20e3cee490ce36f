//! Monte Carlo simulation of the lossy loop
//!
//! ```text
//! ŷ = θ1·S1ᵀS1·x,   v = K ŷ,   u = θ2·S2S2ᵀ·v
//! x⁺ = A x + B1 w + B2 u,   z = C1 x + D11 w + D12 u
//! ```
//!
//! with `θ1, θ2` drawn i.i.d. each step (`Prob{θ = 0} = α`). A dropped
//! actuation message means zero input. Every trial owns a ChaCha stream
//! seeded from its trial index, so ensembles are reproducible regardless
//! of how trials are scheduled across threads.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gain, LossModel, Mode, ModeDistribution, Plant, Schedule};

/// Exogenous input `w(k)`; every component receives the same signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSignal {
    Zero,
    WhiteNoise { sigma: f64 },
    Sinusoid { amplitude: f64, period: f64 },
    Impulse { magnitude: f64, step: usize },
}

impl InputSignal {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Zero => true,
            Self::WhiteNoise { sigma } => sigma.is_finite() && sigma >= 0.0,
            Self::Sinusoid { amplitude, period } => amplitude.is_finite() && period.is_finite() && period >= 1.0,
            Self::Impulse { magnitude, .. } => magnitude.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad input signal {self:?}")))
        }
    }

    fn sample(&self, k: usize, dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match *self {
            Self::Zero => DVector::zeros(dim),
            Self::WhiteNoise { sigma } => {
                let normal = Normal::new(0.0, sigma).expect("validated sigma");
                DVector::from_fn(dim, |_, _| normal.sample(rng))
            }
            Self::Sinusoid { amplitude, period } => {
                let v = amplitude * (2.0 * std::f64::consts::PI * k as f64 / period).sin();
                DVector::from_element(dim, v)
            }
            Self::Impulse { magnitude, step } => {
                DVector::from_element(dim, if k == step { magnitude } else { 0.0 })
            }
        }
    }
}

/// One simulated trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace {
    pub seed: u64,
    x: Vec<DVector<f64>>,
    w: Vec<DVector<f64>>,
    z: Vec<DVector<f64>>,
    v: Vec<DVector<f64>>,
    modes: Vec<Mode>,
    slots: Vec<usize>,
    sum_wz: f64,
    sum_ww: f64,
}

/// Borrowed view of step `k` of a trace.
#[derive(Clone, Copy, Debug)]
pub struct StepRecord<'a> {
    pub k: usize,
    pub slot: usize,
    pub mode: Mode,
    pub x: &'a DVector<f64>,
    pub w: &'a DVector<f64>,
    pub z: &'a DVector<f64>,
    pub v: &'a DVector<f64>,
}

impl SimTrace {
    pub fn horizon(&self) -> usize {
        self.w.len()
    }

    /// `x(k)` for `k = 0..=T`.
    pub fn state(&self, k: usize) -> &DVector<f64> {
        &self.x[k]
    }

    pub fn step(&self, k: usize) -> StepRecord<'_> {
        StepRecord {
            k,
            slot: self.slots[k],
            mode: self.modes[k],
            x: &self.x[k],
            w: &self.w[k],
            z: &self.z[k],
            v: &self.v[k],
        }
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    /// `Σ_k w(k)ᵀ z(k)`.
    pub fn sum_wz(&self) -> f64 {
        self.sum_wz
    }

    /// `Σ_k w(k)ᵀ w(k)`.
    pub fn sum_ww(&self) -> f64 {
        self.sum_ww
    }

    /// Finite-horizon supply `Σ (wᵀz − η wᵀw)`.
    pub fn dissipation(&self, eta: f64) -> f64 {
        self.sum_wz - eta * self.sum_ww
    }

    /// CSV with columns `k, slot, theta1, theta2, x…, w…, z…, v…`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let names = |prefix: &'static str, n: usize| (0..n).map(move |i| format!("{prefix}{i}"));
        let mut header = vec!["k".to_string(), "slot".into(), "theta1".into(), "theta2".into()];
        header.extend(names("x", self.x[0].len()));
        if let Some(r) = (self.horizon() > 0).then(|| self.step(0)) {
            header.extend(names("w", r.w.len()));
            header.extend(names("z", r.z.len()));
            header.extend(names("v", r.v.len()));
        }
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.horizon() {
            let r = self.step(k);
            let mut row = vec![
                k.to_string(),
                r.slot.to_string(),
                u8::from(r.mode.theta1).to_string(),
                u8::from(r.mode.theta2).to_string(),
            ];
            for vec in [r.x, r.w, r.z, r.v] {
                row.extend(vec.iter().map(|x| format!("{x:e}")));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Run one trajectory of length `horizon` from `x0` (zero when `None`).
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    plant: &Plant,
    gain: &Gain,
    schedule: &Schedule,
    loss: &LossModel,
    signal: &InputSignal,
    horizon: usize,
    seed: u64,
    x0: Option<&DVector<f64>>,
) -> Result<SimTrace> {
    gain.check_dims(plant)?;
    signal.validate()?;
    let n = plant.n();
    let x0 = match x0 {
        Some(x) if x.len() != n => {
            return Err(Error::DimensionMismatch(format!(
                "initial state has {} entries, plant has {n} states",
                x.len()
            )))
        }
        Some(x) => x.clone(),
        None => DVector::zeros(n),
    };
    let period = schedule.period();
    let projections = (0..period)
        .map(|k| schedule.projections(k, plant.p2(), plant.m2()))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = SimTrace {
        seed,
        x: Vec::with_capacity(horizon + 1),
        w: Vec::with_capacity(horizon),
        z: Vec::with_capacity(horizon),
        v: Vec::with_capacity(horizon),
        modes: Vec::with_capacity(horizon),
        slots: Vec::with_capacity(horizon),
        sum_wz: 0.0,
        sum_ww: 0.0,
    };
    let mut x = x0;
    for k in 0..horizon {
        let slot = k % period;
        let theta1 = rng.random::<f64>() >= loss.alpha1();
        let theta2 = rng.random::<f64>() >= loss.alpha2();
        let w = signal.sample(k, plant.m1(), &mut rng);
        let (sens, act) = &projections[slot];
        let y_hat = if theta1 { sens * &x } else { DVector::zeros(n) };
        let v = gain.matrix() * y_hat;
        let u = if theta2 { act * &v } else { DVector::zeros(plant.m2()) };
        let z = plant.c1() * &x + plant.d11() * &w + plant.d12() * &u;
        let xn = plant.a() * &x + plant.b1() * &w + plant.b2() * &u;
        trace.sum_wz += w.dot(&z);
        trace.sum_ww += w.dot(&w);
        trace.x.push(x);
        trace.w.push(w);
        trace.z.push(z);
        trace.v.push(v);
        trace.modes.push(Mode { theta1, theta2 });
        trace.slots.push(slot);
        x = xn;
    }
    trace.x.push(x);
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleOptions {
    pub trials: usize,
    /// Trial `i` uses seed `base_seed + i`.
    pub base_seed: u64,
    /// Dissipation level used in the supply sum.
    pub eta: f64,
    pub x0: Option<DVector<f64>>,
    /// Threshold δ for counting `‖x(T)‖ < δ` as converged.
    pub converge_tol: f64,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self { trials: 1000, base_seed: 0, eta: 0.0, x0: None, converge_tol: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub trials: usize,
    pub horizon: usize,
    pub eta: f64,
    /// Mean of `‖x(k)‖²` across trials, `k = 0..=T`.
    pub mean_sq_norm: Vec<f64>,
    /// Standard error of `mean_sq_norm`.
    pub sq_norm_se: Vec<f64>,
    pub converge_tol: f64,
    /// Fraction of trials with `‖x(T)‖ < converge_tol`.
    pub frac_converged: f64,
    /// Mean of `Σ (wᵀz − η wᵀw)` across trials.
    pub dissipation_mean: f64,
    pub dissipation_se: f64,
    /// `mode_counts[i][j]`: number of steps with `(θ1, θ2) = (i, j)`.
    pub mode_counts: [[u64; 2]; 2],
}

struct TrialSummary {
    sq_norms: Vec<f64>,
    final_norm: f64,
    dissipation: f64,
    mode_counts: [[u64; 2]; 2],
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, m: usize) -> (f64, f64) {
    let mf = m as f64;
    let mean = values.clone().sum::<f64>() / mf;
    if m < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (mf - 1.0);
    (mean, (var / mf).sqrt())
}

/// Run `opts.trials` independent trajectories and aggregate them.
#[allow(clippy::too_many_arguments)]
pub fn ensemble(
    plant: &Plant,
    gain: &Gain,
    schedule: &Schedule,
    loss: &LossModel,
    signal: &InputSignal,
    horizon: usize,
    opts: &EnsembleOptions,
) -> Result<EnsembleStats> {
    if opts.trials == 0 {
        return Err(Error::InvalidParameter("ensemble needs at least one trial".into()));
    }
    let summaries = (0..opts.trials)
        .into_par_iter()
        .map(|i| {
            let seed = opts.base_seed.wrapping_add(i as u64);
            let tr = simulate(plant, gain, schedule, loss, signal, horizon, seed, opts.x0.as_ref())?;
            let mut mode_counts = [[0u64; 2]; 2];
            for m in tr.modes() {
                mode_counts[usize::from(m.theta1)][usize::from(m.theta2)] += 1;
            }
            Ok(TrialSummary {
                sq_norms: tr.x.iter().map(|x| x.norm_squared()).collect(),
                final_norm: tr.state(horizon).norm(),
                dissipation: tr.dissipation(opts.eta),
                mode_counts,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Aggregation runs in trial order so results do not depend on threading.
    let m = summaries.len();
    let (mean_sq_norm, sq_norm_se): (Vec<f64>, Vec<f64>) = (0..=horizon)
        .map(|k| mean_and_se(summaries.iter().map(|s| s.sq_norms[k]), m))
        .unzip();
    let (dissipation_mean, dissipation_se) = mean_and_se(summaries.iter().map(|s| s.dissipation), m);
    let converged = summaries.iter().filter(|s| s.final_norm < opts.converge_tol).count();
    let mut mode_counts = [[0u64; 2]; 2];
    for s in &summaries {
        for i in 0..2 {
            for j in 0..2 {
                mode_counts[i][j] += s.mode_counts[i][j];
            }
        }
    }
    Ok(EnsembleStats {
        trials: m,
        horizon,
        eta: opts.eta,
        mean_sq_norm,
        sq_norm_se,
        converge_tol: opts.converge_tol,
        frac_converged: converged as f64 / m as f64,
        dissipation_mean,
        dissipation_se,
        mode_counts,
    })
}

impl EnsembleStats {
    /// Total number of mode draws.
    pub fn draws(&self) -> u64 {
        self.mode_counts.iter().flatten().sum()
    }

    /// Largest `|count − N p| / sqrt(N p (1 − p))` over the four modes.
    /// Modes with probability 0 or 1 must match exactly, else `∞`.
    pub fn mode_frequency_zscore(&self, dist: &ModeDistribution) -> f64 {
        let n = self.draws() as f64;
        Mode::ALL
            .iter()
            .map(|&mode| {
                let p = dist.prob(mode);
                let count = self.mode_counts[usize::from(mode.theta1)][usize::from(mode.theta2)] as f64;
                let sd = (n * p * (1.0 - p)).sqrt();
                if sd == 0.0 {
                    if (count - n * p).abs() < 0.5 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    (count - n * p).abs() / sd
                }
            })
            .fold(0.0, f64::max)
    }

    /// Dissipation mean expressed in standard errors.
    pub fn dissipation_zscore(&self) -> f64 {
        if self.dissipation_se == 0.0 {
            if self.dissipation_mean > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            self.dissipation_mean / self.dissipation_se
        }
    }

    /// CSV with columns `k, mean_sq_norm, sq_norm_se`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,mean_sq_norm,sq_norm_se")?;
        for (k, (m, se)) in self.mean_sq_norm.iter().zip(&self.sq_norm_se).enumerate() {
            writeln!(out, "{k},{m:e},{se:e}")?;
        }
        Ok(())
    }
}

/// Relative standard error above which a mean-square sample is treated as
/// unreliable for decay fitting.
pub const DECAY_FIT_MAX_REL_SE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub beta: f64,
    /// Fitted per-step ratio of the mean-square norm.
    pub alpha: f64,
    /// Inclusive range of steps used by the fit.
    pub first: usize,
    pub last: usize,
    /// The mean-square norm is not decaying (fitted ratio within 1% of 1).
    pub steady_state: bool,
}

/// Exponential fit `E‖x(k)‖² ≈ β αᵏ`.
///
/// The fit uses the leading run of steps whose sample mean is positive and
/// whose relative standard error is at most [`DECAY_FIT_MAX_REL_SE`];
/// beyond that run the Monte Carlo mean of a product of random factors is
/// governed by a handful of trials. Points are weighted by inverse squared
/// relative error in log space.
pub fn decay_fit(stats: &EnsembleStats) -> Result<DecayFit> {
    let mut last = None;
    for (k, (&m, &se)) in stats.mean_sq_norm.iter().zip(&stats.sq_norm_se).enumerate() {
        if !(m > 0.0 && m.is_finite()) || se / m > DECAY_FIT_MAX_REL_SE {
            break;
        }
        last = Some(k);
    }
    let last = match last {
        Some(l) if l >= 1 => l,
        _ => {
            return Err(Error::FitUnavailable(
                "fewer than two reliable mean-square samples from the first step".into(),
            ))
        }
    };
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..=last {
        let m = stats.mean_sq_norm[k];
        let rel = stats.sq_norm_se[k] / m;
        let w = 1.0 / (rel * rel + 1e-6);
        let (x, y) = (k as f64, m.ln());
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let denom = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / sw;
    let alpha = slope.exp();
    Ok(DecayFit {
        beta: intercept.exp(),
        alpha,
        first: 0,
        last,
        steady_state: (alpha - 1.0).abs() < 0.01,
    })
}
