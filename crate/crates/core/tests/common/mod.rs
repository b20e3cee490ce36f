#![allow(dead_code)]

use netpass::model::{Gain, LossModel, Plant};
use netpass::numerics::{Matrix, SymMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn s(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let g = gaussian(rng, n, n, 1.0);
    SymMatrix::new(&g * g.transpose() + Matrix::identity(n, n) * 0.5).unwrap()
}

/// Plant with `D11 + D11ᵀ ≻ 0`, `m1 = p1`, `n` states and `m2` inputs.
pub fn random_plant(rng: &mut ChaCha8Rng, n: usize, m1: usize, m2: usize, a_scale: f64) -> Plant {
    let d = gaussian(rng, m1, m1, 0.3) + Matrix::identity(m1, m1) * 1.5;
    Plant::new(
        gaussian(rng, n, n, a_scale),
        gaussian(rng, n, m1, 0.5),
        gaussian(rng, n, m2, 1.0),
        gaussian(rng, m1, n, 0.5),
        d,
        gaussian(rng, m1, m2, 0.3),
    )
    .unwrap()
}

pub fn random_gain(rng: &mut ChaCha8Rng, m2: usize, n: usize, scale: f64) -> Gain {
    Gain::new(gaussian(rng, m2, n, scale)).unwrap()
}

pub fn random_loss(rng: &mut ChaCha8Rng, max: f64) -> LossModel {
    LossModel::new(rng.random::<f64>() * max, rng.random::<f64>() * max).unwrap()
}

/// Averaged passivity matrix of the scalar loop `x⁺ = a_m x + b w`,
/// `z = c̃ x + d w`, at numeric `P`.
pub fn scalar_theta(modes: &[(f64, f64)], b: f64, c_avg: f64, d: f64, p: f64, eta: f64) -> [[f64; 2]; 2] {
    let (mut t11, mut t21) = (-p, -c_avg);
    for &(w, a) in modes {
        t11 += w * a * a * p;
        t21 += w * b * p * a;
    }
    [[t11, t21], [t21, b * b * p + 2.0 * eta - 2.0 * d]]
}

/// Strict negative definiteness of a symmetric 2×2 matrix.
pub fn neg_def_2x2(m: [[f64; 2]; 2]) -> bool {
    m[0][0] < 0.0 && m[0][0] * m[1][1] - m[0][1] * m[1][0] > 0.0
}
