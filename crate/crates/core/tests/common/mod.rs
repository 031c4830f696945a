#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use streamsparse_core::{BatchData, Family, GlmFamily, Matrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform(-1, 1) scaled by `scale`.
pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}

/// Approximately standard normal entries from a sum of uniforms.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0
}

pub fn design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Matrix {
    Matrix::from_row_major(n, p, (0..n * p).map(|_| normal(rng)).collect()).unwrap()
}

/// Responses drawn from the model at `beta`.
pub fn responses(rng: &mut ChaCha8Rng, family: &GlmFamily, x: &Matrix, beta: &[f64]) -> Vec<f64> {
    (0..x.rows())
        .map(|i| {
            let u: f64 = x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
            match family.kind {
                Family::Gaussian => u + family.dispersion.sqrt() * normal(rng),
                Family::Logistic => {
                    let p = 1.0 / (1.0 + (-u).exp());
                    if rng.random::<f64>() < p {
                        1.0
                    } else {
                        0.0
                    }
                }
                Family::Poisson => {
                    // Knuth's multiplication method; rates here are small
                    let limit = (-u.exp()).exp();
                    let mut k = 0.0;
                    let mut prod = rng.random::<f64>();
                    while prod > limit {
                        k += 1.0;
                        prod *= rng.random::<f64>();
                    }
                    k
                }
            }
        })
        .collect()
}

pub fn sparse_truth(p: usize, s: usize, value: f64) -> Vec<f64> {
    (0..p).map(|j| if j < s { value } else { 0.0 }).collect()
}

pub fn batch(
    rng: &mut ChaCha8Rng,
    family: &GlmFamily,
    n: usize,
    beta_star: &[f64],
    index: usize,
) -> BatchData {
    let x = design(rng, n, beta_star.len());
    let y = responses(rng, family, &x, beta_star);
    BatchData::new(x, y, index).unwrap()
}

pub fn families() -> [GlmFamily; 3] {
    [GlmFamily::gaussian(1.0), GlmFamily::logistic(), GlmFamily::poisson()]
}

/// Largest componentwise relative error, with denominators floored at 1.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

pub fn to_nalgebra(m: &Matrix) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// First derivative of the cumulant, written out independently.
pub fn cumulant_first(family: &GlmFamily, u: f64) -> f64 {
    match family.kind {
        Family::Gaussian => u,
        Family::Logistic => 1.0 / (1.0 + (-u).exp()),
        Family::Poisson => u.exp(),
    }
}

pub fn cumulant_second(family: &GlmFamily, u: f64) -> f64 {
    match family.kind {
        Family::Gaussian => 1.0,
        Family::Logistic => {
            let s = 1.0 / (1.0 + (-u).exp());
            s * (1.0 - s)
        }
        Family::Poisson => u.exp(),
    }
}

fn eta(x: &[f64], beta: &[f64]) -> f64 {
    x.iter().zip(beta).map(|(a, b)| a * b).sum()
}

pub fn oracle_gradient(family: &GlmFamily, b: &BatchData, beta: &[f64]) -> Vec<f64> {
    let p = beta.len();
    let mut g = vec![0.0; p];
    for (i, y) in b.response().iter().enumerate() {
        let x = b.design().row(i);
        let r = cumulant_first(family, eta(x, beta)) - y;
        for j in 0..p {
            g[j] += x[j] * r;
        }
    }
    g
}

pub fn oracle_hessian(family: &GlmFamily, b: &BatchData, beta: &[f64]) -> Vec<Vec<f64>> {
    let p = beta.len();
    let mut h = vec![vec![0.0; p]; p];
    for i in 0..b.n() {
        let x = b.design().row(i);
        let w = cumulant_second(family, eta(x, beta));
        for j in 0..p {
            for k in 0..p {
                h[j][k] += w * x[j] * x[k];
            }
        }
    }
    h
}

pub fn matvec(h: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    h.iter().map(|row| eta(row, v)).collect()
}
