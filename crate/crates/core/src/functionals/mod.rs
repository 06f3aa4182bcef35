//! Deterministic-equivalent functionals built from `Σ̄(z) = I + m̲(z) Σ`.
//!
//! Trace-type quantities are evaluated in Σ's eigenbasis, where `Σ̄^{-1}(z)`
//! is the diagonal `d_k = 1/(1 + m̲ λ_k)`. Diagonal-sum quantities (the tilde
//! family) are evaluated in the standard basis.

mod grid;
mod remark2;
mod spiked;

pub use grid::{cross, Lemma41Grid, LowRankGrid, NodeSet};
pub use remark2::{remark2_limits, Remark2Limits};
pub use spiked::{spiked_terms, SpikedBundle, SpikedContext, SpikedGrid, SpikedNode};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::models::{symmetrize, AncillaryMatrix, AncillaryRepr, PopulationModel};
use crate::C64;

/// Below this dimension the standard-basis diagonal sums are formed directly.
pub(crate) const DIRECT_MAX: usize = 64;
const DIAG_TOL: f64 = 1e-13;
const NEAR_TOL: f64 = 1e-9;
const POLE_TOL: f64 = 1e-14;
pub(crate) const SINGULAR_TOL: f64 = 1e-10;

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// Optional scalar shift of the ancillary matrix, `B(z) = B_0 + τ(z) I`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Shift {
    #[default]
    None,
    /// `τ(z) = -ρ / (z N (1 + m̲)^2)`.
    Kappa { rho: f64 },
}

impl Shift {
    pub fn at(self, z: C64, m: C64, big_n: usize) -> C64 {
        match self {
            Shift::None => zero(),
            Shift::Kappa { rho } => -C64::from(rho) / (z * big_n as f64 * (1.0 + m) * (1.0 + m)),
        }
    }
}

/// Standard-basis operators for the diagonal sums when Σ is not diagonal.
///
/// `w_i = Σ_k near_ik d_k² + m̲^{-1} Σ_k far_ik d_k + τ Σ_k uu_ik λ_k d_k²`, which follows from
/// `d_k d_l = (d_k - d_l) / (m̲ (λ_l - λ_k))` for well separated eigenvalues.
#[derive(Debug, Clone)]
struct BasisOps {
    uu: DMatrix<f64>,
    near: DMatrix<f64>,
    far: Option<DMatrix<f64>>,
}

/// Σ and B expressed in Σ's eigenbasis, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct SpectralContext {
    pub n: usize,
    pub big_n: usize,
    /// Rank of B.
    pub k_n: usize,
    pub shift: Shift,
    lam: Vec<f64>,
    basis: Option<DMatrix<f64>>,
    beta: Vec<f64>,
    /// `Uᵀ B U` when it is not diagonal.
    tilde: Option<DMatrix<f64>>,
    /// Entrywise square of `tilde`.
    hadamard: Option<DMatrix<f64>>,
    ops: Option<BasisOps>,
}

impl SpectralContext {
    pub fn new(sigma: &PopulationModel, b: &AncillaryMatrix, big_n: usize) -> Result<Self> {
        if sigma.n != b.n {
            return Err(Error::Dimension(format!("Σ is {0}×{0} but B is {1}×{1}", sigma.n, b.n)));
        }
        if big_n == 0 {
            return Err(Error::param("sample size N must be positive"));
        }
        let lam = sigma.eigenvalues().to_vec();
        let basis = sigma.eigenvectors().cloned();
        let (beta, tilde) = rotate(b, basis.as_ref());
        let hadamard = tilde.as_ref().map(|t| t.component_mul(t));
        let ops = basis.as_ref().map(|u| basis_ops(u, &lam, &beta, tilde.as_ref()));
        Ok(SpectralContext { n: sigma.n, big_n, k_n: b.rank, shift: Shift::None, lam, basis, beta, tilde, hadamard, ops })
    }

    pub fn with_shift(mut self, shift: Shift) -> Self {
        self.shift = shift;
        self
    }

    pub fn ratio(&self) -> f64 {
        self.n as f64 / self.big_n as f64
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.lam
    }

    /// Diagonal of `Uᵀ B U`.
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Whether B is diagonal in Σ's eigenbasis.
    pub fn commutes(&self) -> bool {
        self.tilde.is_none()
    }

    pub fn cache(&self, z: C64, m_under: C64) -> Result<ResolventCache> {
        ResolventCache::new(self, z, m_under)
    }

    /// `(1/N) tr Σ̄^{-2} Σ B`, `(1/N) tr Σ̄^{-3} Σ² B`, `g_n`, `b_n` and the integrals feeding the mean.
    pub fn node_scalars(&self, c: &ResolventCache) -> Result<NodeScalars> {
        let nn = self.big_n as f64;
        let (mut p, mut q, mut s2, mut i3) = (zero(), zero(), zero(), zero());
        for ((&l, &bk), &d) in self.lam.iter().zip(&self.beta).zip(&c.d) {
            let d2 = d * d;
            let bz = c.tau + bk;
            p += d2 * (l * bz);
            q += d2 * d * (l * l) * bz;
            s2 += d2 * (l * l);
            i3 += d2 * d * (l * l);
        }
        let m = c.m_under;
        let den = 1.0 - m * m * s2 / nn;
        if den.norm() < SINGULAR_TOL {
            return Err(Error::Singular { z: c.z, value: den.norm() });
        }
        let p = p / nn;
        Ok(NodeScalars {
            p,
            q: q / nn,
            den,
            g: p / (c.z * c.z * den),
            b: -c.z * m,
            i3: m * i3 / nn,
        })
    }

    /// `tr (zI + z m̲ Σ)^{-1} B(z)`.
    pub fn centering_density(&self, c: &ResolventCache) -> C64 {
        let mut acc = zero();
        for (&bk, &d) in self.beta.iter().zip(&c.d) {
            acc += d * (bk + c.tau);
        }
        acc / c.z
    }

    /// Standard-basis diagonals `(Σ̄^{-1}Σ)_ii`, `(Σ̄^{-2}Σ²)_ii` and
    /// `(Σ^{1/2} Σ̄^{-1} B Σ̄^{-1} Σ^{1/2})_ii`.
    pub fn diag_vectors(&self, c: &ResolventCache) -> DiagVectors {
        let n = self.n;
        let ld: Vec<C64> = self.lam.iter().zip(&c.d).map(|(&l, &d)| d * l).collect();
        let ld2: Vec<C64> = ld.iter().map(|x| x * x).collect();
        let Some(u) = &self.basis else {
            let w = (0..n).map(|i| c.d[i] * ld[i] * (self.beta[i] + c.tau)).collect();
            return DiagVectors { s1: ld, s2: ld2, w };
        };
        let ops = self.ops.as_ref().expect("basis ops exist with a basis");
        let s1 = real_matvec(&ops.uu, &ld);
        let s2 = real_matvec(&ops.uu, &ld2);
        let w = if n <= DIRECT_MAX { self.w_direct(u, c) } else { self.w_ops(c, &ld) };
        DiagVectors { s1, s2, w }
    }

    fn w_ops(&self, c: &ResolventCache, ld: &[C64]) -> Vec<C64> {
        let ops = self.ops.as_ref().expect("basis ops exist with a basis");
        let dd: Vec<C64> = c.d.iter().map(|d| d * d).collect();
        let mut w = real_matvec(&ops.near, &dd);
        if let Some(far) = &ops.far {
            let dm: Vec<C64> = c.d.iter().map(|d| d / c.m_under).collect();
            for (wi, x) in w.iter_mut().zip(real_matvec(far, &dm)) {
                *wi += x;
            }
        }
        if c.tau != zero() {
            let v: Vec<C64> = ld.iter().zip(&c.d).map(|(a, d)| a * d).collect();
            for (wi, x) in w.iter_mut().zip(real_matvec(&ops.uu, &v)) {
                *wi += x * c.tau;
            }
        }
        w
    }

    fn w_direct(&self, u: &DMatrix<f64>, c: &ResolventCache) -> Vec<C64> {
        let n = self.n;
        let a: Vec<C64> = self.lam.iter().zip(&c.d).map(|(&l, &d)| d * l.max(0.0).sqrt()).collect();
        let mut w = vec![zero(); n];
        for (i, wi) in w.iter_mut().enumerate() {
            let row: Vec<C64> = (0..n).map(|k| a[k] * u[(i, k)]).collect();
            let mut acc = zero();
            match &self.tilde {
                None => {
                    for k in 0..n {
                        acc += row[k] * row[k] * self.beta[k];
                    }
                }
                Some(t) => {
                    for k in 0..n {
                        let mut inner = zero();
                        for l in 0..n {
                            inner += row[l] * t[(k, l)];
                        }
                        acc += row[k] * inner;
                    }
                }
            }
            if c.tau != zero() {
                acc += row.iter().map(|x| x * x).sum::<C64>() * c.tau;
            }
            *wi = acc;
        }
        w
    }

    /// `tr (B(z1) E B(z2) E)` with `E = diag(d1 d2 λ)`, computed directly.
    fn squared_trace(&self, c1: &ResolventCache, c2: &ResolventCache) -> C64 {
        let e: Vec<C64> = (0..self.n).map(|k| c1.d[k] * c2.d[k] * self.lam[k]).collect();
        let mut t = zero();
        match &self.hadamard {
            None => {
                for k in 0..self.n {
                    t += e[k] * e[k] * self.beta[k] * self.beta[k];
                }
            }
            Some(h) => {
                for k in 0..self.n {
                    let mut inner = zero();
                    for l in 0..self.n {
                        inner += e[l] * h[(k, l)];
                    }
                    t += e[k] * inner;
                }
            }
        }
        if c1.tau != zero() || c2.tau != zero() {
            let (mut eb, mut ee) = (zero(), zero());
            for k in 0..self.n {
                let e2 = e[k] * e[k];
                eb += e2 * self.beta[k];
                ee += e2;
            }
            t += eb * (c1.tau + c2.tau) + ee * c1.tau * c2.tau;
        }
        t
    }

    /// Trace sums of the two-point family at one pair.
    fn raw_pair(&self, c1: &ResolventCache, c2: &ResolventCache, with_tilde: bool) -> RawSums {
        let mut r = RawSums::default();
        for k in 0..self.n {
            let (l, bk) = (self.lam[k], self.beta[k]);
            let (d1, d2) = (c1.d[k], c2.d[k]);
            let (d1s, d2s) = (d1 * d1, d2 * d2);
            let (b1, b2) = (bk + c1.tau, bk + c2.tau);
            r.v1_12 += d1 * d2s * (l * l) * b2;
            r.v1_21 += d2 * d1s * (l * l) * b1;
            r.u1_12 += d1 * d2s * (l * l * l);
            r.u1_21 += d2 * d1s * (l * l * l);
            r.v2_12 += d1s * d2s * (l * l * l) * b2;
            r.v2_21 += d1s * d2s * (l * l * l) * b1;
            r.u2 += d1s * d2s * (l * l * l * l);
            r.a += d1 * d2 * (l * l);
        }
        r.t = self.squared_trace(c1, c2);
        if with_tilde {
            let x = self.diag_vectors(c1);
            let y = self.diag_vectors(c2);
            for i in 0..self.n {
                r.s1w_12 += x.s1[i] * y.w[i];
                r.s1w_21 += y.s1[i] * x.w[i];
                r.s2w_12 += x.s2[i] * y.w[i];
                r.s2w_21 += y.s2[i] * x.w[i];
                r.s1s2_12 += x.s1[i] * y.s2[i];
                r.s1s2_21 += y.s1[i] * x.s2[i];
                r.s2s2 += x.s2[i] * y.s2[i];
                r.ww += x.w[i] * y.w[i];
                r.s1s1 += x.s1[i] * y.s1[i];
            }
        }
        r
    }

    /// `Σ̄^{-1}(z)` as an explicit complex matrix in the standard basis.
    pub fn sigma_bar_inv(&self, c: &ResolventCache) -> DMatrix<C64> {
        let n = self.n;
        match &self.basis {
            None => DMatrix::from_fn(n, n, |i, j| if i == j { c.d[i] } else { zero() }),
            Some(u) => DMatrix::from_fn(n, n, |i, j| (0..n).map(|k| c.d[k] * (u[(i, k)] * u[(j, k)])).sum()),
        }
    }
}

fn rotate(b: &AncillaryMatrix, basis: Option<&DMatrix<f64>>) -> (Vec<f64>, Option<DMatrix<f64>>) {
    let m = match (basis, &b.repr) {
        (None, AncillaryRepr::Diagonal(d)) => return (d.clone(), None),
        (None, _) => b.to_dense(),
        (Some(u), AncillaryRepr::LowRank { weights, vectors }) => {
            let p = u.transpose() * vectors;
            let mut scaled = p.clone();
            for (j, mut col) in scaled.column_iter_mut().enumerate() {
                col *= weights[j];
            }
            scaled * p.transpose()
        }
        (Some(u), AncillaryRepr::Diagonal(d)) => {
            let mut scaled = u.transpose();
            for (j, mut col) in scaled.column_iter_mut().enumerate() {
                col *= d[j];
            }
            scaled * u
        }
        (Some(u), AncillaryRepr::Dense(bm)) => u.transpose() * bm * u,
    };
    let mut m = m;
    symmetrize(&mut m);
    let beta: Vec<f64> = m.diagonal().iter().copied().collect();
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    let mut off = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                off = off.max(m[(i, j)].abs());
            }
        }
    }
    if off <= DIAG_TOL * scale {
        (beta, None)
    } else {
        (beta, Some(m))
    }
}

fn basis_ops(u: &DMatrix<f64>, lam: &[f64], beta: &[f64], tilde: Option<&DMatrix<f64>>) -> BasisOps {
    let n = lam.len();
    let uu = u.component_mul(u);
    match tilde {
        None => {
            let mut near = uu.clone();
            for (k, mut col) in near.column_iter_mut().enumerate() {
                col *= lam[k] * beta[k];
            }
            BasisOps { uu, near, far: None }
        }
        Some(t) => {
            let sq: Vec<f64> = lam.iter().map(|x| x.max(0.0).sqrt()).collect();
            let scale = lam.iter().fold(1.0f64, |a, x| a.max(x.abs()));
            let mut f_near = DMatrix::zeros(n, n);
            let mut h = DMatrix::zeros(n, n);
            for l in 0..n {
                for k in 0..n {
                    let v = t[(k, l)] * sq[k] * sq[l];
                    let gap = lam[l] - lam[k];
                    if gap.abs() <= NEAR_TOL * scale {
                        f_near[(k, l)] = v;
                    } else {
                        h[(k, l)] = v / gap;
                    }
                }
            }
            let near = u.component_mul(&(u * f_near.transpose()));
            let far = (u * h.transpose()).component_mul(u) * 2.0;
            BasisOps { uu, near, far: Some(far) }
        }
    }
}

fn real_matvec(a: &DMatrix<f64>, x: &[C64]) -> Vec<C64> {
    let (rows, cols) = a.shape();
    let mut out = vec![zero(); rows];
    for k in 0..cols {
        let xk = x[k];
        if xk == zero() {
            continue;
        }
        let col = a.column(k);
        for (o, &v) in out.iter_mut().zip(col.iter()) {
            *o += xk * v;
        }
    }
    out
}

/// The resolvent diagonal `d_k = 1/(1 + m̲ λ_k)` at one point.
#[derive(Debug, Clone)]
pub struct ResolventCache {
    pub z: C64,
    pub m_under: C64,
    /// Shift `τ(z)` of the ancillary matrix.
    pub tau: C64,
    pub d: Vec<C64>,
}

impl ResolventCache {
    pub fn new(ctx: &SpectralContext, z: C64, m_under: C64) -> Result<Self> {
        let mut d = Vec::with_capacity(ctx.n);
        for &l in &ctx.lam {
            let den = 1.0 + m_under * l;
            if den.norm() < POLE_TOL * (1.0 + m_under.norm() * l.abs()) {
                return Err(Error::domain(z, format!("1 + m̲λ vanishes for λ = {l}")));
            }
            d.push(den.inv());
        }
        Ok(ResolventCache { z, m_under, tau: ctx.shift.at(z, m_under, ctx.big_n), d })
    }
}

/// One-point scalars at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeScalars {
    pub p: C64,
    pub q: C64,
    /// `1 - c ∫ m̲² t² (1 + t m̲)^{-2} dH_n`.
    pub den: C64,
    pub g: C64,
    pub b: C64,
    /// `c ∫ m̲ t² (1 + t m̲)^{-3} dH_n`.
    pub i3: C64,
}

#[derive(Debug, Clone)]
pub struct DiagVectors {
    pub s1: Vec<C64>,
    pub s2: Vec<C64>,
    pub w: Vec<C64>,
}

/// Unnormalized sums behind a [`Lemma41Bundle`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RawSums {
    pub v1_12: C64,
    pub v1_21: C64,
    pub u1_12: C64,
    pub u1_21: C64,
    pub v2_12: C64,
    pub v2_21: C64,
    pub u2: C64,
    pub t: C64,
    pub a: C64,
    pub s1w_12: C64,
    pub s1w_21: C64,
    pub s2w_12: C64,
    pub s2w_21: C64,
    pub s1s2_12: C64,
    pub s1s2_21: C64,
    pub s2s2: C64,
    pub ww: C64,
    pub s1s1: C64,
}

/// The two-point functional family at `(z1, z2)`.
///
/// Suffix `_12` means the functional evaluated at `(z1, z2)`, `_21` at `(z2, z1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma41Bundle {
    pub z1: C64,
    pub z2: C64,
    pub m1: C64,
    pub m2: C64,
    pub p1: C64,
    pub p2: C64,
    pub q1: C64,
    pub q2: C64,
    pub v1_12: C64,
    pub v1_21: C64,
    pub v2_12: C64,
    pub v2_21: C64,
    pub v3: C64,
    pub u1_12: C64,
    pub u1_21: C64,
    pub u2: C64,
    pub tv1_12: C64,
    pub tv1_21: C64,
    pub tv2_12: C64,
    pub tv2_21: C64,
    pub tv3: C64,
    pub tu1_12: C64,
    pub tu1_21: C64,
    pub tu2: C64,
    pub a: C64,
    pub ta: C64,
    pub g1: C64,
    pub g2: C64,
    pub b1: C64,
    pub b2: C64,
    pub zeta1_12: C64,
    pub zeta1_21: C64,
}

/// Normalize raw sums into the bundle.
pub fn assemble(z: [C64; 2], m: [C64; 2], s: [&NodeScalars; 2], r: &RawSums, big_n: usize) -> Lemma41Bundle {
    let nn = big_n as f64;
    let [z1, z2] = z;
    let [m1, m2] = m;
    let n12 = z1 * z2 * z2 * nn;
    let n21 = z2 * z1 * z1 * nn;
    let nsq = z1 * z1 * z2 * z2 * nn;
    let v1_12 = r.v1_12 / n12;
    let v1_21 = r.v1_21 / n21;
    let u1_12 = r.u1_12 / n12;
    let u1_21 = r.u1_21 / n21;
    let (g1, g2, b1, b2) = (s[0].g, s[1].g, s[0].b, s[1].b);
    Lemma41Bundle {
        z1,
        z2,
        m1,
        m2,
        p1: s[0].p,
        p2: s[1].p,
        q1: s[0].q,
        q2: s[1].q,
        v1_12,
        v1_21,
        v2_12: r.v2_12 / nsq,
        v2_21: r.v2_21 / nsq,
        v3: r.t / nsq,
        u1_12,
        u1_21,
        u2: r.u2 / nsq,
        tv1_12: r.s1w_12 / n12,
        tv1_21: r.s1w_21 / n21,
        tv2_12: r.s2w_12 / nsq,
        tv2_21: r.s2w_21 / nsq,
        tv3: r.ww / nsq,
        tu1_12: r.s1s2_12 / n12,
        tu1_21: r.s1s2_21 / n21,
        tu2: r.s2s2 / nsq,
        a: m1 * m2 * r.a / nn,
        ta: m1 * m2 * r.s1s1 / nn,
        g1,
        g2,
        b1,
        b2,
        zeta1_12: v1_12 + b2 * b2 * g2 * u1_12,
        zeta1_21: v1_21 + b1 * b1 * g1 * u1_21,
    }
}

/// Every two-point functional at `(z1, z2)` given `m̲(z1)`, `m̲(z2)`.
pub fn lemma41_terms(ctx: &SpectralContext, z1: C64, z2: C64, m1: C64, m2: C64) -> Result<Lemma41Bundle> {
    let c1 = ctx.cache(z1, m1)?;
    let c2 = ctx.cache(z2, m2)?;
    let s1 = ctx.node_scalars(&c1)?;
    let s2 = ctx.node_scalars(&c2)?;
    let raw = ctx.raw_pair(&c1, &c2, true);
    Ok(assemble([z1, z2], [m1, m2], [&s1, &s2], &raw, ctx.big_n))
}

/// `(b_n(z), g_n(z))`.
pub fn scalar_helpers(ctx: &SpectralContext, z: C64, m: C64) -> Result<(C64, C64)> {
    let c = ctx.cache(z, m)?;
    let s = ctx.node_scalars(&c)?;
    Ok((s.b, s.g))
}

/// `(H_n^1, H_n^2)` of the low-rank regime.
pub fn lowrank_terms(ctx: &SpectralContext, z1: C64, z2: C64, m1: C64, m2: C64) -> Result<(C64, C64)> {
    if ctx.k_n == 0 {
        return Err(Error::param("B has rank zero"));
    }
    let c1 = ctx.cache(z1, m1)?;
    let c2 = ctx.cache(z2, m2)?;
    let k = ctx.k_n as f64;
    let t = ctx.squared_trace(&c1, &c2);
    let x = ctx.diag_vectors(&c1);
    let y = ctx.diag_vectors(&c2);
    let ww: C64 = x.w.iter().zip(&y.w).map(|(a, b)| a * b).sum();
    Ok(lowrank_from_sums(z1, z2, m1, m2, t, ww, k))
}

pub(crate) fn lowrank_from_sums(z1: C64, z2: C64, m1: C64, m2: C64, t: C64, ww: C64, k: f64) -> (C64, C64) {
    (t / k, m1 * m2 * ww / (z1 * z2 * k))
}

/// `C_n^1(z1, z2)`.
pub fn c1_kernel(b: &Lemma41Bundle) -> C64 {
    let (z1, z2, m1, m2, g1, g2) = (b.z1, b.z2, b.m1, b.m2, b.g1, b.g2);
    let dm = m2 - m1;
    let dz = z2 - z1;
    let first = b.v3
        + z2 * z2 * m2 * m2 * g2 * b.v2_21
        + z1 * z1 * m1 * m1 * g1 * b.v2_12
        + z1 * z1 * z2 * z2 * m1 * m1 * m2 * m2 * g1 * g2 * b.u2;
    let second = z1 * z2 * m1 * m2 * b.zeta1_12 * b.zeta1_21 - z1 * m1 * g1 * b.zeta1_12 - z2 * m2 * g2 * b.zeta1_21
        + g1 * g2 * b.a;
    dm * z1 * z2 / dz * first + dm * dm * z1 * z2 / (m1 * m2 * dz * dz) * second
}

/// `C_n^2(z1, z2)` without the fourth-cumulant factor.
pub fn c2_kernel(b: &Lemma41Bundle) -> C64 {
    let (z1, z2, m1, m2, g1, g2) = (b.z1, b.z2, b.m1, b.m2, b.g1, b.g2);
    let (a1, a2) = (z1 * m1, z2 * m2);
    let inner = b.tv3 + a2 * a2 * g2 * b.tv2_21 + a1 * a1 * g1 * b.tv2_12 + a1 * a1 * a2 * a2 * g1 * g2 * b.tu2
        - a1 * g1 * b.tv1_12
        - a1 * a2 * a2 * g1 * g2 * b.tu1_12
        - a2 * g2 * b.tv1_21
        - a2 * a1 * a1 * g1 * g2 * b.tu1_21
        + g1 * g2 * b.ta;
    a1 * a2 * inner
}

/// Low-rank covariance kernel `υ (m̲2 - m̲1) H1 / (z1 z2 (z2 - z1)) + μ H2`.
pub fn omega2_kernel(z1: C64, z2: C64, m1: C64, m2: C64, h: (C64, C64), upsilon: f64, mu: f64) -> C64 {
    (m2 - m1) * h.0 * upsilon / (z1 * z2 * (z2 - z1)) + h.1 * mu
}

/// Integrand of the asymptotic mean (without `f`).
pub fn mean_density(ctx: &SpectralContext, c: &ResolventCache, upsilon: f64, mu: f64) -> Result<C64> {
    let s = ctx.node_scalars(c)?;
    let (z, m) = (c.z, c.m_under);
    let mut out = (upsilon - 1.0) * m * m / (z * s.den) * (s.p * s.i3 / s.den - s.q);
    if mu != 0.0 {
        let v = ctx.diag_vectors(c);
        let nn = ctx.big_n as f64;
        let norm = z * z * z * nn;
        let tu1: C64 = v.s1.iter().zip(&v.s2).map(|(a, b)| a * b).sum::<C64>() / norm;
        let tv1: C64 = v.s1.iter().zip(&v.w).map(|(a, b)| a * b).sum::<C64>() / norm;
        out += mu * z * z * m * m * (m * s.p * tu1 / s.den - tv1);
    }
    Ok(out)
}
