//! CLT for GLSS: the centered statistic `Θ_n(f)`, its asymptotic mean and
//! covariance by contour integration, and standardization.

mod function;
mod glss;

pub use function::TestFunction;
pub use glss::{eigen_weights, glss, glss_contour, glss_polynomial};

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{mean_density, Lemma41Grid, LowRankGrid, NodeSet, SpectralContext};
use crate::models::{AncillaryMatrix, CovMatrix, PopulationModel};
use crate::stieltjes::contour::{contour_build, kahan_sum, ContourSpec};
use crate::stieltjes::MbarProvider;
use crate::C64;

/// Relative size of an imaginary residue tolerated in a real statistic.
pub const REALNESS_TOL: f64 = 1e-6;
/// `k_n / n` at or below which the low-rank regime is used by default.
pub const LOW_RANK_RATIO: f64 = 0.05;
/// Smallest eigenvalue of Ω below which a warning is recorded.
pub const MIN_EIG_WARN: f64 = 1e-6;

pub(crate) fn real_part(v: C64, what: &str) -> Result<f64> {
    if !v.re.is_finite() || !v.im.is_finite() {
        return Err(Error::NotReal { what: what.into(), re: v.re, im: v.im });
    }
    if v.im.abs() > REALNESS_TOL * (1.0 + v.re.abs()) {
        return Err(Error::NotReal { what: what.into(), re: v.re, im: v.im });
    }
    Ok(v.re)
}

fn two_pi_i() -> C64 {
    C64::new(0.0, 2.0 * PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ComparableRank,
    LowRank,
}

impl Mode {
    /// Low-rank when `k_n / n ≤ 0.05`.
    pub fn for_rank(k_n: usize, n: usize) -> Mode {
        if (k_n as f64) <= LOW_RANK_RATIO * n as f64 {
            Mode::LowRank
        } else {
            Mode::ComparableRank
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::ComparableRank => "comparable_rank",
            Mode::LowRank => "low_rank",
        })
    }
}

/// Contour around the support of `F^{c,H}` for population `model`: the
/// support lies in `[λ_min (1-√c)², λ_max (1+√c)²]` (lower edge 0 when `c ≥ 1`).
pub fn theory_contour(model: &PopulationModel, big_n: usize, v0: f64) -> Result<ContourSpec> {
    let c = model.n as f64 / big_n as f64;
    let eig = model.eigenvalues();
    let top = eig.iter().copied().fold(0.0, f64::max);
    let low = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let d_plus = top * (1.0 + c.sqrt()).powi(2);
    let d_minus = if c < 1.0 { low * (1.0 - c.sqrt()).powi(2) } else { 0.0 };
    contour_build(d_minus, d_plus, c, v0, 0)
}

/// Outer companion of `gamma`; the margin never pushes a positive left edge past 0.
pub fn companion_contour(gamma: &ContourSpec) -> ContourSpec {
    let margin = if gamma.x_l > 0.0 { (0.5 * gamma.x_l).min(0.5) } else { 0.5 };
    gamma.nested(margin)
}

/// `(1/2πi) ∮ f(z) tr((zI + z m̲(z) Σ)^{-1} B) dz`; equals `n ∫ f dF^{c_n,H_n}` when `B = I`.
pub fn centering_term(f: &TestFunction, gamma: &ContourSpec, ctx: &SpectralContext, provider: &dyn MbarProvider) -> Result<f64> {
    f.check_contour(gamma)?;
    let set = NodeSet::build(ctx, gamma, provider)?;
    centering_on(f, ctx, &set)
}

fn centering_on(f: &TestFunction, ctx: &SpectralContext, set: &NodeSet) -> Result<f64> {
    let vals = set.nodes.iter().zip(&set.caches).map(|(nd, c)| f.eval(nd.z) * ctx.centering_density(c) * nd.w);
    real_part(kahan_sum(vals) / two_pi_i(), "centering")
}

/// `Θ_n(f) = tr f(S) B - centering`.
pub fn theta(
    s: &CovMatrix,
    b: &AncillaryMatrix,
    f: &TestFunction,
    gamma: &ContourSpec,
    ctx: &SpectralContext,
    provider: &dyn MbarProvider,
) -> Result<f64> {
    Ok(glss(s, b, f)? - centering_term(f, gamma, ctx, provider)?)
}

/// Asymptotic mean `ω_n(f)` of the comparable-rank regime.
pub fn omega_mean(
    f: &TestFunction,
    gamma: &ContourSpec,
    ctx: &SpectralContext,
    provider: &dyn MbarProvider,
    upsilon: f64,
    mu: f64,
) -> Result<f64> {
    f.check_contour(gamma)?;
    let set = NodeSet::build(ctx, gamma, provider)?;
    omega_on(f, ctx, &set, upsilon, mu)
}

fn omega_on(f: &TestFunction, ctx: &SpectralContext, set: &NodeSet, upsilon: f64, mu: f64) -> Result<f64> {
    let mut vals = Vec::with_capacity(set.len());
    for (nd, c) in set.nodes.iter().zip(&set.caches) {
        vals.push(f.eval(nd.z) * mean_density(ctx, c, upsilon, mu)? * nd.w);
    }
    real_part(-kahan_sum(vals) / two_pi_i(), "asymptotic mean")
}

/// `f(z_i) w_i` over a node set.
fn weighted(f: &TestFunction, set: &NodeSet) -> DVector<C64> {
    DVector::from_iterator(set.len(), set.nodes.iter().map(|nd| f.eval(nd.z) * nd.w))
}

/// `-(1/4π²) Σ_ij a_i K_ij b_j` for each pair of weight vectors.
fn contract(kernel: &DMatrix<C64>, w1: &[DVector<C64>], w2: &[DVector<C64>]) -> Result<(DMatrix<f64>, f64)> {
    let r = w1.len();
    let mut out = DMatrix::zeros(r, r);
    let mut asym = 0.0f64;
    let kw: Vec<DVector<C64>> = w2.iter().map(|w| kernel * w).collect();
    let mut raw = DMatrix::from_element(r, r, C64::new(0.0, 0.0));
    for s in 0..r {
        for t in 0..r {
            let v: C64 = w1[s].iter().zip(kw[t].iter()).map(|(a, b)| a * b).sum();
            raw[(s, t)] = v / (-4.0 * PI * PI);
        }
    }
    for s in 0..r {
        for t in 0..r {
            let v = (raw[(s, t)] + raw[(t, s)]) * 0.5;
            asym = asym.max((raw[(s, t)] - raw[(t, s)]).norm() / (1.0 + v.norm()));
            out[(s, t)] = real_part(v, "covariance entry")?;
        }
    }
    Ok((out, asym))
}

/// Covariance matrix `Ω_n^1` for `fs` (comparable-rank regime).
pub fn covariance_matrix(
    fs: &[TestFunction],
    gamma1: &ContourSpec,
    gamma2: &ContourSpec,
    ctx: &SpectralContext,
    provider: &dyn MbarProvider,
    upsilon: f64,
    mu: f64,
) -> Result<DMatrix<f64>> {
    let model = CltModel::new(ctx.clone(), provider, *gamma1, *gamma2, upsilon, mu, Mode::ComparableRank)?;
    Ok(model.covariance(fs)?.0)
}

/// Single entry `(Ω_n^1)_{st}`.
#[allow(clippy::too_many_arguments)]
pub fn covariance_entry(
    fs: &TestFunction,
    ft: &TestFunction,
    gamma1: &ContourSpec,
    gamma2: &ContourSpec,
    ctx: &SpectralContext,
    provider: &dyn MbarProvider,
    upsilon: f64,
    mu: f64,
) -> Result<f64> {
    let m = covariance_matrix(&[fs.clone(), ft.clone()], gamma1, gamma2, ctx, provider, upsilon, mu)?;
    Ok(m[(0, 1)])
}

/// `(Ω_2)_{st}` of the low-rank regime at finite n (not yet scaled by `k_n/N`).
#[allow(clippy::too_many_arguments)]
pub fn omega2_entry(
    fs: &TestFunction,
    ft: &TestFunction,
    gamma1: &ContourSpec,
    gamma2: &ContourSpec,
    ctx: &SpectralContext,
    provider: &dyn MbarProvider,
    upsilon: f64,
    mu: f64,
) -> Result<f64> {
    let model = CltModel::new(ctx.clone(), provider, *gamma1, *gamma2, upsilon, mu, Mode::LowRank)?;
    let (m, _) = model.omega2(&[fs.clone(), ft.clone()])?;
    Ok(m[(0, 1)])
}

/// `Ω^{-1/2} (θ - ω)` through the symmetric inverse square root.
pub fn standardize(thetas: &[f64], omegas: &[f64], omega: &DMatrix<f64>) -> Result<Vec<f64>> {
    let r = thetas.len();
    if omegas.len() != r || omega.nrows() != r || omega.ncols() != r {
        return Err(Error::Dimension(format!(
            "{} statistics, {} means, {}×{} covariance",
            r,
            omegas.len(),
            omega.nrows(),
            omega.ncols()
        )));
    }
    let asym = (omega - omega.transpose()).amax();
    if asym > 1e-10 * (1.0 + omega.amax()) {
        return Err(Error::Matrix(format!("covariance is not symmetric (deviation {asym:e})")));
    }
    let eig = omega.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if !(min > 1e-10) {
        return Err(Error::Matrix(format!("covariance is not positive definite (min eigenvalue {min:e})")));
    }
    let inv_sqrt = DVector::from_iterator(r, eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()));
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    let centered = DVector::from_iterator(r, thetas.iter().zip(omegas).map(|(t, o)| t - o));
    Ok((root * centered).iter().copied().collect())
}

/// Quadrature and conditioning diagnostics attached to a report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub nodes_gamma1: usize,
    pub nodes_gamma2: usize,
    /// Largest relative asymmetry of the assembled covariance before symmetrization.
    pub asymmetry: f64,
    pub min_eigenvalue: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlssReport {
    pub theta: f64,
    pub raw_glss: f64,
    pub centering: f64,
    pub omega: f64,
    pub variance: f64,
    pub standardized: f64,
    pub mode: Mode,
    pub diagnostics: Diagnostics,
}

/// Centering, mean and covariance of one `(Σ, B, N)` configuration, with node
/// data computed once and reused for every test function.
pub struct CltModel {
    pub ctx: SpectralContext,
    pub gamma1: ContourSpec,
    pub gamma2: ContourSpec,
    pub upsilon: f64,
    pub mu: f64,
    pub mode: Mode,
    set1: NodeSet,
    set2: NodeSet,
}

/// Deterministic pieces for a list of test functions.
#[derive(Debug, Clone)]
pub struct CltMoments {
    pub centering: Vec<f64>,
    pub omega: Vec<f64>,
    /// `Ω_n^1`, or `(k_n/N) Ω_n^2` in the low-rank regime.
    pub covariance: DMatrix<f64>,
    pub diagnostics: Diagnostics,
}

impl CltModel {
    pub fn new(
        ctx: SpectralContext,
        provider: &dyn MbarProvider,
        gamma1: ContourSpec,
        gamma2: ContourSpec,
        upsilon: f64,
        mu: f64,
        mode: Mode,
    ) -> Result<Self> {
        if !gamma1.disjoint_from(&gamma2) {
            return Err(Error::Geometry("Γ1 and Γ2 must be disjoint".into()));
        }
        let set1 = NodeSet::build(&ctx, &gamma1, provider)?;
        let set2 = NodeSet::build(&ctx, &gamma2, provider)?;
        Ok(CltModel { ctx, gamma1, gamma2, upsilon, mu, mode, set1, set2 })
    }

    /// Default geometry from the population spectrum and the mode heuristic.
    pub fn for_population(
        sigma: &PopulationModel,
        b: &AncillaryMatrix,
        big_n: usize,
        provider: &dyn MbarProvider,
        upsilon: f64,
        mu: f64,
        mode: Option<Mode>,
    ) -> Result<Self> {
        let ctx = SpectralContext::new(sigma, b, big_n)?;
        let gamma1 = theory_contour(sigma, big_n, 1.0)?;
        let gamma2 = companion_contour(&gamma1);
        let mode = mode.unwrap_or_else(|| Mode::for_rank(b.rank, b.n));
        Self::new(ctx, provider, gamma1, gamma2, upsilon, mu, mode)
    }

    pub fn centering(&self, f: &TestFunction) -> Result<f64> {
        f.check_contour(&self.gamma1)?;
        centering_on(f, &self.ctx, &self.set1)
    }

    /// `ω_n(f)`; identically zero in the low-rank regime.
    pub fn omega(&self, f: &TestFunction) -> Result<f64> {
        match self.mode {
            Mode::LowRank => Ok(0.0),
            Mode::ComparableRank => {
                f.check_contour(&self.gamma1)?;
                omega_on(f, &self.ctx, &self.set1, self.upsilon, self.mu)
            }
        }
    }

    fn weights(&self, fs: &[TestFunction]) -> Result<(Vec<DVector<C64>>, Vec<DVector<C64>>)> {
        for f in fs {
            f.check_contour(&self.gamma2)?;
        }
        Ok((fs.iter().map(|f| weighted(f, &self.set1)).collect(), fs.iter().map(|f| weighted(f, &self.set2)).collect()))
    }

    /// `Ω_n^1` with the largest pre-symmetrization asymmetry.
    pub fn covariance(&self, fs: &[TestFunction]) -> Result<(DMatrix<f64>, f64)> {
        let (w1, w2) = self.weights(fs)?;
        let grid = Lemma41Grid::build(&self.ctx, &self.set1, &self.set2, self.mu != 0.0)?;
        let k = grid.kernel(&self.set1, &self.set2, self.upsilon, self.mu)?;
        contract(&k, &w1, &w2)
    }

    /// Finite-n `Ω_2` (unscaled).
    pub fn omega2(&self, fs: &[TestFunction]) -> Result<(DMatrix<f64>, f64)> {
        let (w1, w2) = self.weights(fs)?;
        let grid = LowRankGrid::build(&self.ctx, &self.set1, &self.set2)?;
        let k = grid.kernel(&self.set1, &self.set2, self.upsilon, self.mu)?;
        contract(&k, &w1, &w2)
    }

    /// Centering, mean and the covariance used for standardization.
    pub fn moments(&self, fs: &[TestFunction]) -> Result<CltMoments> {
        let centering = fs.iter().map(|f| self.centering(f)).collect::<Result<Vec<_>>>()?;
        let omega = fs.iter().map(|f| self.omega(f)).collect::<Result<Vec<_>>>()?;
        let (covariance, asymmetry) = match self.mode {
            Mode::ComparableRank => self.covariance(fs)?,
            Mode::LowRank => {
                let (m, a) = self.omega2(fs)?;
                (m * (self.ctx.k_n as f64 / self.ctx.big_n as f64), a)
            }
        };
        let min_eigenvalue = covariance.clone().symmetric_eigenvalues().min();
        let mut warnings = Vec::new();
        if min_eigenvalue < MIN_EIG_WARN {
            warnings.push(format!("smallest covariance eigenvalue {min_eigenvalue:e} is below {MIN_EIG_WARN:e}"));
        }
        let diagnostics = Diagnostics {
            nodes_gamma1: self.set1.len(),
            nodes_gamma2: self.set2.len(),
            asymmetry,
            min_eigenvalue,
            warnings,
        };
        Ok(CltMoments { centering, omega, covariance, diagnostics })
    }

    /// Full report for one sample covariance and one test function.
    pub fn report(&self, s: &CovMatrix, b: &AncillaryMatrix, f: &TestFunction) -> Result<GlssReport> {
        let mom = self.moments(std::slice::from_ref(f))?;
        let raw_glss = glss(s, b, f)?;
        let variance = mom.covariance[(0, 0)];
        if !(variance > 0.0) {
            return Err(Error::Variance(variance));
        }
        let theta = raw_glss - mom.centering[0];
        Ok(GlssReport {
            theta,
            raw_glss,
            centering: mom.centering[0],
            omega: mom.omega[0],
            variance,
            standardized: (theta - mom.omega[0]) / variance.sqrt(),
            mode: self.mode,
            diagnostics: mom.diagnostics,
        })
    }
}
