//! Projection test for the eigenspace of a spiked covariance matrix.
//!
//! The statistic compares `tr f(S)(I - Z0)` with its bulk-only prediction
//! built from the empirical companion transform; mean and variance come from
//! the spiked closed forms evaluated with the shrinkage spike estimates.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clt::{real_part, TestFunction};
use crate::error::{Error, Result};
use crate::functionals::SpikedContext;
use crate::functionals::SpikedGrid;
use crate::models::{sorted_eigen, CovMatrix, DataMatrix};
use crate::stats::{normal_quantile, two_sided_p};
use crate::stieltjes::contour::{auto_points, kahan_sum, ContourSpec, Node};
use crate::stieltjes::empirical_from_eigenvalues;
use crate::C64;

const PROJ_TOL: f64 = 1e-10;
const FP_HEIGHT: f64 = 1.0;
const FP_MARGIN: f64 = 0.5;

/// Orthogonal projection `Z0`, stored through an orthonormal basis of its range.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    basis: DMatrix<f64>,
}

impl Projection {
    pub fn from_basis(basis: DMatrix<f64>) -> Result<Self> {
        let r = basis.ncols();
        if r >= basis.nrows() {
            return Err(Error::param(format!("rank {r} must be below the dimension {}", basis.nrows())));
        }
        let dev = (basis.transpose() * &basis - DMatrix::<f64>::identity(r, r)).amax();
        if dev > PROJ_TOL {
            return Err(Error::Validation(format!("basis is not orthonormal (deviation {dev:e})")));
        }
        Ok(Projection { basis })
    }

    /// Checks symmetry, idempotence and an integer trace, then extracts the range.
    pub fn from_matrix(z0: &DMatrix<f64>) -> Result<Self> {
        if !z0.is_square() {
            return Err(Error::Dimension("projection must be square".into()));
        }
        let asym = (z0 - z0.transpose()).amax();
        let idem = (z0 * z0 - z0).amax();
        if asym > PROJ_TOL || idem > PROJ_TOL {
            return Err(Error::Validation(format!(
                "not an orthogonal projection (asymmetry {asym:e}, idempotence defect {idem:e})"
            )));
        }
        let tr = z0.trace();
        let r = tr.round();
        if (tr - r).abs() > 1e-8 {
            return Err(Error::Validation(format!("trace {tr} is not an integer")));
        }
        let (values, vectors) = sorted_eigen(z0.clone());
        let r = values.iter().filter(|&&v| v > 0.5).count();
        Self::from_basis(vectors.columns(0, r).into_owned())
    }

    /// `span{e_1, …, e_r}`.
    pub fn axis(n: usize, r: usize) -> Result<Self> {
        Self::from_basis(DMatrix::from_fn(n, r, |i, j| if i == j { 1.0 } else { 0.0 }))
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// Basis of the same range rotated to diagonalize `Vᵀ S V`, largest first.
    pub fn aligned_with(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        if self.rank() == 0 {
            return self.basis.clone();
        }
        let compressed = self.basis.transpose() * s * &self.basis;
        let (_, rot) = sorted_eigen(compressed);
        &self.basis * rot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    #[default]
    TwoSided,
    Upper,
    Lower,
}

#[derive(Debug, Clone)]
pub struct HypothesisSpec {
    pub z0: Projection,
    pub alpha: f64,
    pub f: TestFunction,
    /// Detection margin above the bulk edge for the spike estimator.
    pub delta: f64,
    pub sided: Sided,
}

impl HypothesisSpec {
    pub fn new(z0: Projection, alpha: f64, f: TestFunction, delta: f64) -> Result<Self> {
        let spec = HypothesisSpec { z0, alpha, f, delta, sided: Sided::TwoSided };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::param(format!("level must lie in (0,1), got {}", self.alpha)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::param(format!("threshold offset must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

/// `λ(d) = (1 + d)(1 + c/d)`, the outlier location of a spike `d > √c`.
pub fn spike_forward(d: f64, c: f64) -> f64 {
    (1.0 + d) * (1.0 + c / d)
}

/// Larger root of `λ = (1 + d)(1 + c/d)`; `None` below the bulk edge.
pub fn spike_inverse(lambda: f64, c: f64) -> Option<f64> {
    let b = lambda - 1.0 - c;
    let disc = b * b - 4.0 * c;
    if b <= 0.0 || disc < 0.0 {
        return None;
    }
    Some(0.5 * (b + disc.sqrt()))
}

/// Spike estimates for eigenvalues at least `(1 + √c)² + delta`; others are dropped.
pub fn shrink_estimate(sample_eigs: &[f64], c: f64, delta: f64) -> Result<Vec<f64>> {
    if !(c > 0.0 && delta > 0.0) {
        return Err(Error::param(format!("need c > 0 and delta > 0, got c={c}, delta={delta}")));
    }
    if sample_eigs.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::param("eigenvalues must be sorted in descending order"));
    }
    let thr = (1.0 + c.sqrt()).powi(2) + delta;
    let mut out = Vec::new();
    for &l in sample_eigs.iter().take_while(|&&l| l >= thr) {
        let d = spike_inverse(l, c).expect("discriminant is positive above the bulk edge");
        out.push(d);
    }
    Ok(out)
}

/// `tr f(S)(I - Z0)`. Polynomials use eigenvalues plus Krylov quadratic forms;
/// other functions use the eigenvectors.
pub fn projected_trace(s: &CovMatrix, z0: &Projection, f: &TestFunction) -> Result<f64> {
    if z0.n() != s.n {
        return Err(Error::Dimension(format!("Z0 is {0}×{0} but S is {1}×{1}", z0.n(), s.n)));
    }
    if let Some(coeffs) = f.coefficients() {
        let total: f64 = s.eigenvalues().iter().map(|&l| f.eval_real(l)).sum::<Result<f64>>()?;
        let deg = coeffs.len().saturating_sub(1);
        let half = deg.div_ceil(2);
        let mut inside = 0.0;
        for b in z0.basis().column_iter() {
            let mut krylov = vec![b.into_owned()];
            for k in 1..=half {
                let next = &s.matrix * &krylov[k - 1];
                krylov.push(next);
            }
            for (k, &a) in coeffs.iter().enumerate() {
                if a != 0.0 {
                    inside += a * krylov[k / 2].dot(&krylov[k - k / 2]);
                }
            }
        }
        return Ok(total - inside);
    }
    let eig = s.eigen();
    let p = z0.basis().transpose() * &eig.vectors;
    let mut acc = 0.0;
    for (j, &l) in eig.values.iter().enumerate() {
        let w = 1.0 - p.column(j).norm_squared();
        acc += f.eval_real(l)? * w;
    }
    Ok(acc)
}

/// `x > λ_max` with `m̲_n(x) = target` for a negative target.
fn root_right_of_spectrum(eigs: &[f64], c: f64, target: f64) -> f64 {
    let top = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mbar = |x: f64| empirical_from_eigenvalues(eigs, c, C64::new(x, 0.0)).map(|v| v.1.re).unwrap_or(f64::NEG_INFINITY);
    let mut lo = top + 1e-12 * top.abs().max(1.0);
    let mut hi = top + c.max(1.0) / target.abs() + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mbar(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Contour pair for the test: `Γ1` encloses the sample spectrum, the origin and
/// every real root of `1 + m̲_n` and `1 + (1 + d̂_i) m̲_n`; `Γ2` is a nested outer copy.
///
/// The origin is a removable point of every integrand when `c < 1` and a genuine
/// pole of the centering integrand when `c ≥ 1`, so it is always enclosed.
pub fn fp_contours(eigs: &[f64], c: f64, d_hat: &[f64]) -> Result<(ContourSpec, ContourSpec)> {
    if eigs.is_empty() {
        return Err(Error::param("empty spectrum"));
    }
    let top = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let low = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let dmax = d_hat.iter().copied().fold(0.0, f64::max);
    let mut d_plus = top.max((1.0 + c.sqrt()).powi(2));
    d_plus = d_plus.max(root_right_of_spectrum(eigs, c, -1.0 / (1.0 + dmax)));
    let x_r = 1.2 * d_plus + 0.5;
    let x_l = low.min(0.0) - FP_MARGIN;
    let points = auto_points(x_r - x_l + 2.0 * FP_MARGIN, FP_HEIGHT, FP_MARGIN);
    let g1 = ContourSpec::new(x_l, x_r, FP_HEIGHT, points)?;
    Ok((g1, g1.nested(FP_MARGIN)))
}

/// `Δ_n(f) = tr f(S)(I - Z0) - ((n - r)/2πi) ∮ f(z) / (z (1 + m̲_n(z))) dz`.
pub fn delta_stat(s: &CovMatrix, z0: &Projection, f: &TestFunction, gamma: &ContourSpec) -> Result<f64> {
    f.check_contour(gamma)?;
    let eigs = s.eigenvalues();
    for &l in eigs {
        if !gamma.encloses_real(l) {
            return Err(Error::Geometry(format!("eigenvalue {l} lies outside the contour")));
        }
    }
    let c = s.ratio();
    let nodes = gamma.nodes();
    let vals: Result<Vec<C64>> = nodes
        .par_iter()
        .map(|nd| {
            let (_, mb) = empirical_from_eigenvalues(eigs, c, nd.z)?;
            let den = nd.z * (1.0 + mb);
            if den.norm() < 1e-12 {
                return Err(Error::Geometry(format!("1 + m̲_n vanishes near the contour at {}", nd.z)));
            }
            Ok(f.eval(nd.z) / den * nd.w)
        })
        .collect();
    let integral = kahan_sum(vals?) / C64::new(0.0, 2.0 * PI);
    let rho = (s.n - z0.rank()) as f64;
    let centering = real_part(integral * rho, "projection centering")?;
    Ok(projected_trace(s, z0, f)? - centering)
}

/// Plug-in mean and variance of `Δ_n(f)` for every function in `fs`.
#[derive(Debug, Clone, PartialEq)]
pub struct FpMoments {
    pub mu_hat: Vec<f64>,
    pub rho_hat: Vec<f64>,
}

/// `μ̂ = -(1/2πi) ∮ f ℰ_n dz` and `ϱ̂ = -(1/4π²) ∮∮ f f (2𝒞¹ + (E|X|⁴ - 3) 𝒞²)`,
/// with `m̲` values supplied on both contours.
pub fn fp_moments(
    fs: &[TestFunction],
    ctx: &SpikedContext,
    gamma1: &ContourSpec,
    m1: &[C64],
    gamma2: &ContourSpec,
    m2: &[C64],
    fourth_moment: f64,
) -> Result<FpMoments> {
    if !gamma1.disjoint_from(gamma2) {
        return Err(Error::Geometry("Γ1 and Γ2 must be disjoint".into()));
    }
    for f in fs {
        f.check_contour(gamma2)?;
    }
    let mu = fourth_moment - 3.0;
    let n1: Vec<Node> = gamma1.nodes();
    let n2: Vec<Node> = gamma2.nodes();
    if m1.len() != n1.len() || m2.len() != n2.len() {
        return Err(Error::Dimension("m̲ values do not match the contour nodes".into()));
    }
    let grid = SpikedGrid::new(ctx, n1, m1, n2, m2)?;
    let dens: Vec<C64> = grid.data1.iter().map(|nd| nd.mean_density(ctx, mu)).collect();
    let mut mu_hat = Vec::with_capacity(fs.len());
    for f in fs {
        let v = kahan_sum(grid.nodes1.iter().zip(&dens).map(|(nd, e)| f.eval(nd.z) * e * nd.w));
        mu_hat.push(real_part(-v / C64::new(0.0, 2.0 * PI), "projection mean")?);
    }
    let weights: Vec<(Vec<C64>, Vec<C64>)> = fs
        .iter()
        .map(|f| {
            (
                grid.nodes1.iter().map(|nd| f.eval(nd.z) * nd.w).collect(),
                grid.nodes2.iter().map(|nd| f.eval(nd.z) * nd.w).collect(),
            )
        })
        .collect();
    let raw = grid.contract(ctx, mu, &weights)?;
    let rho_hat = raw
        .into_iter()
        .map(|v| real_part(v / (-4.0 * PI * PI), "projection variance"))
        .collect::<Result<Vec<_>>>()?;
    Ok(FpMoments { mu_hat, rho_hat })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpDiagnostics {
    pub gamma1: ContourSpec,
    pub gamma2: ContourSpec,
    /// Number of eigenvalues above the detection threshold.
    pub detected: usize,
    /// Detected spikes beyond the rank of `Z0` that were discarded.
    pub discarded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpTestReport {
    pub delta_stat: f64,
    pub mu_hat: f64,
    pub rho_hat: f64,
    pub z_score: f64,
    pub p_value: f64,
    pub reject: bool,
    pub d_hat: Vec<f64>,
    pub diagnostics: FpDiagnostics,
}

/// `(p, reject)` for a z-score.
pub fn decide(z: f64, alpha: f64, sided: Sided) -> (f64, bool) {
    let p = match sided {
        Sided::TwoSided => two_sided_p(z),
        Sided::Upper if z >= 0.0 => 0.5 * two_sided_p(z),
        Sided::Upper => 1.0 - 0.5 * two_sided_p(z),
        Sided::Lower => decide(-z, alpha, Sided::Upper).0,
    };
    (p, p < alpha)
}

/// Two-sided critical value `z_{1-α/2}`.
pub fn critical_value(alpha: f64) -> f64 {
    normal_quantile(1.0 - 0.5 * alpha)
}

/// Full test on a sample covariance. `fourth_moment` is `E|X|⁴` of the entries.
pub fn fp_test(s: &CovMatrix, spec: &HypothesisSpec, fourth_moment: f64) -> Result<FpTestReport> {
    let mut out = fp_test_many(s, spec, std::slice::from_ref(&spec.f), fourth_moment)?;
    Ok(out.remove(0))
}

/// Runs the test for every function in `fs` (ignoring `spec.f`), sharing the
/// spike estimate, the contours and the kernel grid.
pub fn fp_test_many(
    s: &CovMatrix,
    spec: &HypothesisSpec,
    fs: &[TestFunction],
    fourth_moment: f64,
) -> Result<Vec<FpTestReport>> {
    spec.validate()?;
    if spec.z0.n() != s.n {
        return Err(Error::Dimension(format!("Z0 is {0}×{0} but S is {1}×{1}", spec.z0.n(), s.n)));
    }
    let eigs = s.eigenvalues();
    let c = s.ratio();
    let r = spec.z0.rank();
    let mut d_hat = shrink_estimate(eigs, c, spec.delta)?;
    let detected = d_hat.len();
    d_hat.truncate(r);
    let (g1, g2) = fp_contours(eigs, c, &d_hat)?;
    let deltas = fs.iter().map(|f| delta_stat(s, &spec.z0, f, &g1)).collect::<Result<Vec<_>>>()?;
    let basis = spec.z0.aligned_with(&s.matrix);
    let ctx = SpikedContext::new(s.n, s.big_n, &d_hat, &basis)?;
    let mvals = |g: &ContourSpec| -> Result<Vec<C64>> {
        g.nodes().iter().map(|nd| empirical_from_eigenvalues(eigs, c, nd.z).map(|v| v.1)).collect()
    };
    let (m1, m2) = (mvals(&g1)?, mvals(&g2)?);
    let mom = fp_moments(fs, &ctx, &g1, &m1, &g2, &m2, fourth_moment)?;
    let diagnostics = FpDiagnostics { gamma1: g1, gamma2: g2, detected, discarded: detected.saturating_sub(r) };
    let mut out = Vec::with_capacity(fs.len());
    for (k, delta) in deltas.into_iter().enumerate() {
        let (mu_hat, rho_hat) = (mom.mu_hat[k], mom.rho_hat[k]);
        if !(rho_hat > 0.0) {
            return Err(Error::Variance(rho_hat));
        }
        let z_score = (delta - mu_hat) / rho_hat.sqrt();
        let (p_value, reject) = decide(z_score, spec.alpha, spec.sided);
        out.push(FpTestReport {
            delta_stat: delta,
            mu_hat,
            rho_hat,
            z_score,
            p_value,
            reject,
            d_hat: d_hat.clone(),
            diagnostics: diagnostics.clone(),
        });
    }
    Ok(out)
}

/// Plug-in `E x⁴` over all entries of a standardized data matrix.
pub fn estimate_fourth_moment(x: &DataMatrix) -> f64 {
    let m = x.x.len() as f64;
    x.x.iter().map(|v| v.powi(4)).sum::<f64>() / m
}
