use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{AncillaryMatrix, AncillaryRepr, CovMatrix};
use crate::stieltjes::contour::{kahan_sum, ContourSpec};
use crate::C64;

use super::TestFunction;

/// `u_jᵀ B u_j` for every eigenvector of `S`.
pub fn eigen_weights(s: &CovMatrix, b: &AncillaryMatrix) -> Result<Vec<f64>> {
    if s.n != b.n {
        return Err(Error::Dimension(format!("S is {0}×{0} but B is {1}×{1}", s.n, b.n)));
    }
    let u = &s.eigen().vectors;
    let n = s.n;
    Ok(match &b.repr {
        AncillaryRepr::Diagonal(d) => (0..n).map(|j| (0..n).map(|i| d[i] * u[(i, j)] * u[(i, j)]).sum()).collect(),
        AncillaryRepr::Dense(m) => {
            let bu = m * u;
            (0..n).map(|j| u.column(j).dot(&bu.column(j))).collect()
        }
        AncillaryRepr::LowRank { weights, vectors } => {
            let p = u.transpose() * vectors;
            (0..n).map(|j| weights.iter().enumerate().map(|(l, w)| w * p[(j, l)] * p[(j, l)]).sum()).collect()
        }
    })
}

/// `tr f(S) B = Σ_j f(λ_j) u_jᵀ B u_j`.
pub fn glss(s: &CovMatrix, b: &AncillaryMatrix, f: &TestFunction) -> Result<f64> {
    let w = eigen_weights(s, b)?;
    let mut terms = Vec::with_capacity(s.n);
    for (&l, wj) in s.eigen().values.iter().zip(w) {
        terms.push(f.eval_real(l)? * wj);
    }
    Ok(pairwise(&terms))
}

fn pairwise(x: &[f64]) -> f64 {
    if x.len() <= 32 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise(a) + pairwise(b)
}

/// `⟨X, Y⟩ = Σ_ij X_ij Y_ij`.
fn frobenius(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| a * b).sum()
}

/// `Σ_k a_k tr(S^k B)` from matrix powers, without an eigendecomposition.
///
/// `tr(S^k B) = ⟨S^i, S^j B⟩` with `i + j = k` split evenly, so only powers
/// up to `⌈deg/2⌉` are formed.
pub fn glss_polynomial(s: &DMatrix<f64>, b: &AncillaryMatrix, coeffs: &[f64]) -> Result<f64> {
    let n = s.nrows();
    if s.ncols() != n || b.n != n {
        return Err(Error::Dimension(format!("S is {}×{} but B is {2}×{2}", s.nrows(), s.ncols(), b.n)));
    }
    let deg = coeffs.len().saturating_sub(1);
    let half = deg.div_ceil(2);
    let mut powers = vec![DMatrix::identity(n, n)];
    for k in 1..=half {
        let next = if k == 1 { s.clone() } else { &powers[k - 1] * s };
        powers.push(next);
    }
    let mut total = 0.0;
    for (k, &a) in coeffs.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let i = k / 2;
        let j = k - i;
        let (pi, pj) = (&powers[i], &powers[j]);
        let t = match &b.repr {
            AncillaryRepr::Diagonal(d) => {
                let mut acc = 0.0;
                for c in 0..n {
                    acc += d[c] * pi.column(c).dot(&pj.column(c));
                }
                acc
            }
            AncillaryRepr::Dense(m) => frobenius(pi, &(pj * m)),
            AncillaryRepr::LowRank { weights, vectors } => {
                let x = pi * vectors;
                let y = pj * vectors;
                weights.iter().enumerate().map(|(l, w)| w * x.column(l).dot(&y.column(l))).sum()
            }
        };
        total += a * t;
    }
    Ok(total)
}

/// Eigenvalue-to-contour clearance below which contour evaluation is refused.
const CLEARANCE: f64 = 1e-6;

/// `-(1/2πi) ∮ f(z) tr((S - zI)^{-1} B) dz`, evaluated through the spectrum of `S`.
///
/// Eigenvalues outside `gamma` contribute nothing, so the result is the sum over enclosed ones.
pub fn glss_contour(s: &CovMatrix, b: &AncillaryMatrix, f: &TestFunction, gamma: &ContourSpec) -> Result<f64> {
    f.check_contour(gamma)?;
    let values = &s.eigen().values;
    for &l in values {
        if gamma.distance_to(C64::new(l, 0.0)) < CLEARANCE {
            return Err(Error::Geometry(format!("eigenvalue {l} is within {CLEARANCE} of the contour")));
        }
    }
    let w = eigen_weights(s, b)?;
    let nodes = gamma.nodes();
    let vals: Vec<C64> = nodes
        .par_iter()
        .map(|nd| {
            let r: C64 = values.iter().zip(&w).map(|(&l, &wj)| wj / (C64::new(l, 0.0) - nd.z)).sum();
            f.eval(nd.z) * r * nd.w
        })
        .collect();
    let v = -kahan_sum(vals) / C64::new(0.0, 2.0 * std::f64::consts::PI);
    super::real_part(v, "contour GLSS")
}
