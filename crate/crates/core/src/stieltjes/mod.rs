//! Marchenko–Pastur fixed points, empirical Stieltjes transforms and the
//! contour quadrature used by every integral in the crate.

pub mod contour;

pub use contour::{
    contour_build, contour_integrate, contour_integrate_adaptive, double_contour_integrate, ContourSpec,
    Integral, Node,
};

use crate::error::{Error, Result};
use crate::models::{sample_covariance, sample_data, CovMatrix, Dist, PopulationModel};
use crate::rng::AUX_STREAM_BASE;
use crate::C64;

/// Discrete spectral distribution `H = Σ w_k δ_{t_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    atoms: Vec<(f64, f64)>,
}

impl Spectrum {
    /// Equal-weight atoms at `values`; coincident values are merged.
    pub fn from_eigenvalues(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.to_vec();
        v.sort_by(f64::total_cmp);
        let w = 1.0 / v.len() as f64;
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        for t in v {
            match atoms.last_mut() {
                Some((s, ws)) if (t - *s).abs() <= 1e-14 * t.abs().max(1.0) => *ws += w,
                _ => atoms.push((t, w)),
            }
        }
        Spectrum { atoms }
    }

    pub fn point(t: f64) -> Self {
        Spectrum { atoms: vec![(t, 1.0)] }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn max(&self) -> f64 {
        self.atoms.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.atoms.iter().map(|a| a.0).fold(f64::INFINITY, f64::min)
    }

    /// `∫ φ(t) dH(t)`.
    pub fn integrate(&self, mut phi: impl FnMut(f64) -> C64) -> C64 {
        self.atoms.iter().map(|&(t, w)| phi(t) * w).sum()
    }
}

/// Solution of the fixed-point equation at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StieltjesValue {
    pub z: C64,
    pub m: C64,
    pub m_under: C64,
    pub residual: f64,
}

const FP_TOL: f64 = 1e-12;
const MAX_DAMPED: usize = 60;
const MAX_NEWTON: usize = 60;

fn inverse_and_slope(mu: C64, c: f64, h: &Spectrum) -> Option<(C64, C64)> {
    let mut s1 = C64::new(0.0, 0.0);
    let mut s2 = C64::new(0.0, 0.0);
    for &(t, w) in h.atoms() {
        let q = C64::new(1.0, 0.0) + mu * t;
        if q.norm() < 1e-300 {
            return None;
        }
        let inv = q.inv();
        s1 += inv * (t * w);
        s2 += inv * inv * (t * t * w);
    }
    let z = -mu.inv() + s1 * c;
    let slope = (mu * mu).inv() - s2 * c;
    Some((z, slope))
}

/// `m(z)` given `m̲(z)`: `m = -(1/z) ∫ dH/(1 + t m̲)`.
fn m_from_under(z: C64, mu: C64, h: &Spectrum) -> C64 {
    -h.integrate(|t| (C64::new(1.0, 0.0) + mu * t).inv()) / z
}

fn finish(z: C64, mu: C64, c: f64, h: &Spectrum) -> StieltjesValue {
    let m = m_from_under(z, mu, h);
    let m_under = -(1.0 - c) / z + m * c;
    // defect of m = ∫ dH / (t(1 - c - c z m) - z)
    let rhs = h.integrate(|t| (t * (1.0 - c - z * m * c) - z).inv());
    StieltjesValue { z, m, m_under, residual: (m - rhs).norm() }
}

fn newton(z: C64, mut mu: C64, c: f64, h: &Spectrum) -> Option<C64> {
    for _ in 0..MAX_NEWTON {
        let (zz, slope) = inverse_and_slope(mu, c, h)?;
        let f = zz - z;
        if !f.is_finite() || slope.norm() == 0.0 {
            return None;
        }
        let step = f / slope;
        mu -= step;
        if step.norm() <= 1e-15 * mu.norm().max(1e-300) {
            return Some(mu);
        }
    }
    let (zz, _) = inverse_and_slope(mu, c, h)?;
    ((zz - z).norm() <= 1e-10 * (1.0 + z.norm())).then_some(mu)
}

fn branch_ok(z: C64, v: &StieltjesValue) -> bool {
    if !(v.m.is_finite() && v.m_under.is_finite()) {
        return false;
    }
    if z.im != 0.0 {
        v.m.im * z.im > 0.0 && v.m_under.im * z.im > 0.0
    } else {
        v.m.im == 0.0 || v.m.im.abs() < 1e-12 * v.m.re.abs()
    }
}

/// Solve the self-consistent equation for `m(z)` and `m̲(z)`.
pub fn mp_fixed_point(z: C64, c: f64, h: &Spectrum) -> Result<StieltjesValue> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::param(format!("aspect ratio must be positive, got {c}")));
    }
    if !z.is_finite() || z.norm() == 0.0 {
        return Err(Error::domain(z, "z must be finite and nonzero"));
    }
    if z.im == 0.0 {
        return fixed_point_real(z, c, h);
    }
    // damped iteration on m, started at -1/z
    let mut m = -z.inv();
    for _ in 0..MAX_DAMPED {
        let next = h.integrate(|t| (t * (1.0 - c - z * m * c) - z).inv());
        let upd = m * 0.5 + next * 0.5;
        let delta = (upd - m).norm();
        m = upd;
        if delta < 1e-6 * m.norm() {
            break;
        }
    }
    let mu0 = -(1.0 - c) / z + m * c;
    if let Some(mu) = newton(z, mu0, c, h) {
        let v = finish(z, mu, c, h);
        if branch_ok(z, &v) && v.residual <= FP_TOL {
            return Ok(v);
        }
    }
    continuation(z, c, h)
}

/// Track the Herglotz branch from far above the axis down to `z`.
fn continuation(z: C64, c: f64, h: &Spectrum) -> Result<StieltjesValue> {
    let sign = z.im.signum();
    let lift = 10.0 * (1.0 + h.max()) * (1.0 + c);
    let start = C64::new(z.re, z.im + sign * lift);
    let mut mu = {
        let mut m = -start.inv();
        for _ in 0..500 {
            let next = h.integrate(|t| (t * (1.0 - c - start * m * c) - start).inv());
            m = m * 0.5 + next * 0.5;
        }
        -(1.0 - c) / start + m * c
    };
    let steps = 200;
    let mut last = f64::INFINITY;
    for k in 1..=steps {
        // geometric approach to the target imaginary part
        let frac = k as f64 / steps as f64;
        let im = z.im + sign * lift * (1.0 - frac).powi(3);
        let zk = C64::new(z.re, im);
        match newton(zk, mu, c, h) {
            Some(next) => mu = next,
            None => return Err(Error::Solver { z, residual: last }),
        }
        last = finish(zk, mu, c, h).residual;
    }
    let v = finish(z, mu, c, h);
    if branch_ok(z, &v) && v.residual <= FP_TOL {
        Ok(v)
    } else {
        Err(Error::Solver { z, residual: v.residual })
    }
}

fn fixed_point_real(z: C64, c: f64, h: &Spectrum) -> Result<StieltjesValue> {
    let x = z.re;
    // Outside the support the equation has a real root with z'(m̲) > 0 on the
    // branch that matches the off-axis solution.
    let mut m = C64::new(-1.0 / x, 0.0);
    for _ in 0..2000 {
        let next = h.integrate(|t| (t * (1.0 - c - z * m * c) - z).inv());
        let upd = m * 0.5 + next * 0.5;
        let delta = (upd - m).norm();
        m = upd;
        if !m.is_finite() {
            break;
        }
        if delta < 1e-9 * m.norm() {
            break;
        }
    }
    let mu0 = C64::new((-(1.0 - c) / z + m * c).re, 0.0);
    let mu = newton(z, mu0, c, h).ok_or_else(|| Error::domain(z, "no real solution; z lies in the support"))?;
    let mu = C64::new(mu.re, 0.0);
    let (_, slope) = inverse_and_slope(mu, c, h).ok_or_else(|| Error::domain(z, "pole"))?;
    if !(slope.re > 0.0) {
        return Err(Error::domain(z, "real point inside the spectral support"));
    }
    // The off-axis limit must agree; probe just above the axis.
    let probe = C64::new(x, 1e-7 * (1.0 + x.abs()));
    if let Ok(p) = solve_off_axis_quiet(probe, c, h) {
        if (p.m_under - mu).norm() > 1e-4 * (1.0 + mu.norm()) {
            return Err(Error::domain(z, "real root is not on the Stieltjes branch"));
        }
    }
    let v = finish(z, mu, c, h);
    if v.residual > FP_TOL {
        return Err(Error::Solver { z, residual: v.residual });
    }
    Ok(v)
}

fn solve_off_axis_quiet(z: C64, c: f64, h: &Spectrum) -> Result<StieltjesValue> {
    continuation(z, c, h)
}

/// `z(m̲) = -1/m̲ + c ∫ t/(1 + t m̲) dH(t)`.
pub fn mp_inverse_map(m_under: C64, c: f64, h: &Spectrum) -> Result<C64> {
    if m_under.norm() == 0.0 {
        return Err(Error::domain(m_under, "m̲ = 0 is a pole of the inverse map"));
    }
    for &(t, _) in h.atoms() {
        if (C64::new(1.0, 0.0) + m_under * t).norm() < 1e-14 {
            return Err(Error::domain(m_under, format!("1 + t m̲ vanishes at atom t = {t}")));
        }
    }
    Ok(-m_under.inv() + h.integrate(|t| t / (C64::new(1.0, 0.0) + m_under * t)) * c)
}

/// `(m_n(z), m̲_n(z))` of a sample covariance.
pub fn empirical_stieltjes(s: &CovMatrix, z: C64) -> Result<(C64, C64)> {
    empirical_from_eigenvalues(s.eigenvalues(), s.ratio(), z)
}

pub fn empirical_from_eigenvalues(eigs: &[f64], c: f64, z: C64) -> Result<(C64, C64)> {
    let mut acc = C64::new(0.0, 0.0);
    for &l in eigs {
        let d = C64::new(l, 0.0) - z;
        if d.norm() < 1e-13 {
            return Err(Error::domain(z, format!("collides with eigenvalue {l}")));
        }
        acc += d.inv();
    }
    let m = acc / eigs.len() as f64;
    Ok((m, -(1.0 - c) / z + m * c))
}

/// Source of the companion transform m̲ on a contour.
pub trait MbarProvider: Sync {
    fn m_under(&self, z: C64) -> Result<C64>;
    /// Aspect ratio `n/N` the provider refers to.
    fn ratio(&self) -> f64;
}

/// m̲_n^0 from the fixed point with `(c_n, H_n)`.
#[derive(Debug, Clone)]
pub struct TheoryProvider {
    pub c: f64,
    pub spectrum: Spectrum,
}

impl TheoryProvider {
    pub fn new(c: f64, spectrum: Spectrum) -> Self {
        TheoryProvider { c, spectrum }
    }

    pub fn for_population(model: &PopulationModel, big_n: usize) -> Self {
        TheoryProvider {
            c: model.n as f64 / big_n as f64,
            spectrum: Spectrum::from_eigenvalues(model.eigenvalues()),
        }
    }

    /// Exact derivative `m̲'(z) = 1 / z'(m̲)`.
    pub fn derivative(&self, z: C64) -> Result<C64> {
        let mu = self.m_under(z)?;
        let (_, slope) = inverse_and_slope(mu, self.c, &self.spectrum)
            .ok_or_else(|| Error::domain(z, "pole in derivative"))?;
        Ok(slope.inv())
    }
}

impl MbarProvider for TheoryProvider {
    fn m_under(&self, z: C64) -> Result<C64> {
        mp_fixed_point(z, self.c, &self.spectrum).map(|v| v.m_under)
    }

    fn ratio(&self) -> f64 {
        self.c
    }
}

/// Plug-in m̲_n from the spectrum of one sample covariance.
#[derive(Debug, Clone)]
pub struct EmpiricalProvider {
    pub eigenvalues: Vec<f64>,
    pub c: f64,
}

impl EmpiricalProvider {
    pub fn new(s: &CovMatrix) -> Self {
        EmpiricalProvider { eigenvalues: s.eigenvalues().to_vec(), c: s.ratio() }
    }
}

impl MbarProvider for EmpiricalProvider {
    fn m_under(&self, z: C64) -> Result<C64> {
        empirical_from_eigenvalues(&self.eigenvalues, self.c, z).map(|v| v.1)
    }

    fn ratio(&self) -> f64 {
        self.c
    }
}

/// m̲ built from the average of `(1/n) tr (S_i - z)^{-1}` over independent draws.
#[derive(Debug, Clone)]
pub struct AveragedProvider {
    pub spectra: Vec<Vec<f64>>,
    pub c: f64,
}

impl AveragedProvider {
    /// Spectra of `samples` sample covariances drawn from `model` on reserved streams.
    pub fn simulate(model: &PopulationModel, big_n: usize, dist: Dist, samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::Parameter("averaging needs at least one sample".into()));
        }
        let mut spectra = Vec::with_capacity(samples);
        for i in 0..samples {
            let x = sample_data(model.n, big_n, dist, seed, AUX_STREAM_BASE + 1 + i as u64)?;
            spectra.push(sample_covariance(&x, model)?.eigenvalues().to_vec());
        }
        Ok(AveragedProvider { spectra, c: model.n as f64 / big_n as f64 })
    }
}

impl MbarProvider for AveragedProvider {
    fn m_under(&self, z: C64) -> Result<C64> {
        let mut acc = C64::new(0.0, 0.0);
        for eigs in &self.spectra {
            acc += empirical_from_eigenvalues(eigs, self.c, z)?.0;
        }
        let m = acc / self.spectra.len() as f64;
        Ok(-(1.0 - self.c) / z + m * self.c)
    }

    fn ratio(&self) -> f64 {
        self.c
    }
}

/// Central finite difference of m̲ with step `1e-5 (1 + |z|)`.
pub fn derivative_fd(p: &dyn MbarProvider, z: C64) -> Result<C64> {
    let h = 1e-5 * (1.0 + z.norm());
    let hp = p.m_under(z + h)?;
    let hm = p.m_under(z - h)?;
    let vp = p.m_under(z + C64::new(0.0, h))?;
    let vm = p.m_under(z - C64::new(0.0, h))?;
    // average the real-direction and imaginary-direction quotients
    let dx = (hp - hm) / (2.0 * h);
    let dy = (vp - vm) / C64::new(0.0, 2.0 * h);
    Ok((dx + dy) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_form_c1(z: C64) -> C64 {
        // root of z m^2 + z m + 1 = 0 on the Herglotz branch
        let disc = (z * z - z * 4.0).sqrt();
        let a = (-z + disc) / (z * 2.0);
        let b = (-z - disc) / (z * 2.0);
        if z.im != 0.0 {
            if a.im * z.im > 0.0 { a } else { b }
        } else if a.norm() < b.norm() {
            a
        } else {
            b
        }
    }

    #[test]
    fn golden_ratio_at_minus_one() {
        let v = mp_fixed_point(C64::new(-1.0, 0.0), 1.0, &Spectrum::point(1.0)).unwrap();
        let g = (5f64.sqrt() - 1.0) / 2.0;
        assert!((v.m.re - g).abs() < 1e-12);
        assert!((v.m_under.re - g).abs() < 1e-12);
    }

    #[test]
    fn far_field_asymptote() {
        let z = C64::new(-1e6, 0.0);
        let v = mp_fixed_point(z, 1.0, &Spectrum::point(1.0)).unwrap();
        assert!((v.m.re - 1e-6).abs() < 1e-9);
    }

    #[test]
    fn matches_closed_form_off_axis() {
        let h = Spectrum::point(1.0);
        for &(x, y) in &[(0.5, 0.1), (2.0, 1.0), (3.9, 0.01), (-0.3, 0.2), (5.0, -0.5), (1.0, -2.0)] {
            let z = C64::new(x, y);
            let v = mp_fixed_point(z, 1.0, &h).unwrap();
            let exact = closed_form_c1(z);
            assert!((v.m - exact).norm() < 1e-10, "z={z} got {} want {}", v.m, exact);
            assert!(v.m.im * z.im > 0.0 && v.m_under.im * z.im > 0.0);
            assert!((v.m_under - (-(1.0 - 1.0) / z + v.m)).norm() < 1e-10);
        }
    }

    #[test]
    fn real_point_inside_support_is_a_domain_error() {
        let r = mp_fixed_point(C64::new(2.0, 0.0), 1.0, &Spectrum::point(1.0));
        assert!(matches!(r, Err(Error::Domain { .. })));
    }

    #[test]
    fn inverse_map_examples() {
        let h = Spectrum::point(1.0);
        let z0 = C64::new(2.0, 1.0);
        let v = mp_fixed_point(z0, 0.5, &h).unwrap();
        assert!((mp_inverse_map(v.m_under, 0.5, &h).unwrap() - z0).norm() < 1e-8);
        let mu = C64::new(0.3, 0.2);
        let z = mp_inverse_map(mu, 1e-12, &h).unwrap();
        assert!((z + mu.inv()).norm() < 1e-10);
        let z = mp_inverse_map(C64::new(0.6180340, 0.0), 1.0, &h).unwrap();
        assert!((z - C64::new(-1.0, 0.0)).norm() < 1e-7);
        assert!(mp_inverse_map(C64::new(-1.0, 0.0), 1.0, &h).is_err());
    }

    #[test]
    fn empirical_examples() {
        let z = C64::new(0.0, 1.0);
        let (m, mu) = empirical_from_eigenvalues(&[3.0, 1.0], 0.5, z).unwrap();
        let want = ((C64::new(3.0, 0.0) - z).inv() + (C64::new(1.0, 0.0) - z).inv()) / 2.0;
        assert!((m - want).norm() < 1e-15);
        assert!((mu - (-0.5 / z + want * 0.5)).norm() < 1e-15);
        let (m, mu) = empirical_from_eigenvalues(&[1.0; 4], 1.0, C64::new(0.3, 0.7)).unwrap();
        assert!((m - (C64::new(1.0, 0.0) - C64::new(0.3, 0.7)).inv()).norm() < 1e-15);
        assert_eq!(m, mu);
        assert!(empirical_from_eigenvalues(&[1.0], 1.0, C64::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn derivative_agrees_with_finite_difference() {
        let p = TheoryProvider::new(0.7, Spectrum::from_eigenvalues(&[0.5, 1.0, 2.0]));
        let z = C64::new(1.3, 0.8);
        let exact = p.derivative(z).unwrap();
        let fd = derivative_fd(&p, z).unwrap();
        assert!((exact - fd).norm() < 1e-6 * exact.norm());
    }

    #[test]
    fn spectrum_merges_duplicates() {
        let s = Spectrum::from_eigenvalues(&[1.0, 2.0, 1.0, 1.0]);
        assert_eq!(s.atoms(), &[(1.0, 0.75), (2.0, 0.25)]);
    }
}
