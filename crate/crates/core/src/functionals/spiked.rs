//! Closed forms for `Σ = I + Σ d_i v_i v_iᵀ` with the z-dependent ancillary
//! matrix `B(z) = I - Z0 - κ(z) I`, `κ(z) = (n - r) / (z N (1 + m̲)²)`.
//!
//! Under the null the spike directions span the range of `Z0`, so every
//! functional reduces to sums over the spikes plus the diagonal of `I - Z0`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{c1_kernel, c2_kernel, zero, Lemma41Bundle, SINGULAR_TOL};
use crate::error::{Error, Result};
use crate::stieltjes::contour::Node;
use crate::C64;

/// Spike sizes plus the coordinates of the hypothesized subspace.
#[derive(Debug, Clone)]
pub struct SpikedContext {
    pub n: usize,
    pub big_n: usize,
    /// Rank of `Z0`.
    pub r: usize,
    /// Spike sizes, zero-padded to length `r`.
    pub d: Vec<f64>,
    a0: f64,
    a: Vec<f64>,
    k: DMatrix<f64>,
}

impl SpikedContext {
    /// `basis` holds an orthonormal basis of the range of `Z0` as columns.
    pub fn new(n: usize, big_n: usize, d: &[f64], basis: &DMatrix<f64>) -> Result<Self> {
        let r = basis.ncols();
        if basis.nrows() != n {
            return Err(Error::Dimension(format!("basis has {} rows, expected {n}", basis.nrows())));
        }
        if r >= n {
            return Err(Error::param("rank of Z0 must be below n"));
        }
        if d.len() > r {
            return Err(Error::param(format!("{} spikes for a rank-{r} subspace", d.len())));
        }
        if d.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::param("spike sizes must be finite and non-negative"));
        }
        let mut dd = d.to_vec();
        dd.resize(r, 0.0);
        let sq = basis.map(|x| x * x);
        let p: Vec<f64> = (0..n).map(|k| 1.0 - sq.row(k).sum()).collect();
        let a0 = p.iter().map(|x| x * x).sum();
        let a = (0..r).map(|i| (0..n).map(|k| sq[(k, i)] * p[k]).sum()).collect();
        let k = sq.transpose() * &sq;
        Ok(SpikedContext { n, big_n, r, d: dd, a0, a, k })
    }

    /// Axis-aligned subspace `span{e_1, …, e_r}`.
    pub fn axis(n: usize, big_n: usize, d: &[f64], r: usize) -> Result<Self> {
        let basis = DMatrix::from_fn(n, r, |i, j| if i == j { 1.0 } else { 0.0 });
        Self::new(n, big_n, d, &basis)
    }

    fn rho(&self) -> f64 {
        (self.n - self.r) as f64
    }

    pub fn node(&self, z: C64, m: C64) -> Result<SpikedNode> {
        SpikedNode::new(self, z, m)
    }
}

/// Per-point quantities of the spiked family.
#[derive(Debug, Clone)]
pub struct SpikedNode {
    pub z: C64,
    pub m: C64,
    pub delta: C64,
    pub kappa: C64,
    /// `1/(1 + (1 + d_i) m̲)`.
    pub h: Vec<C64>,
    pub g1: Vec<C64>,
    pub g2: Vec<C64>,
    pub g3: Vec<C64>,
    kg1: Vec<C64>,
    kg2: Vec<C64>,
    kg3: Vec<C64>,
    ga1: C64,
    ga2: C64,
    ga3: C64,
    /// `𝒫_n(z)`.
    pub p: C64,
    /// `𝒬_n(z)`.
    pub q: C64,
    /// `𝒢_n(z)`.
    pub g: C64,
}

impl SpikedNode {
    fn new(ctx: &SpikedContext, z: C64, m: C64) -> Result<Self> {
        let nn = ctx.big_n as f64;
        let rho = ctx.rho();
        let one_m = 1.0 + m;
        if one_m.norm() < 1e-14 {
            return Err(Error::domain(z, "1 + m̲ vanishes"));
        }
        let delta = one_m.inv();
        let kappa = delta * delta * rho / (z * nn);
        let mut h = Vec::with_capacity(ctx.r);
        for &d in &ctx.d {
            let den = 1.0 + m * (1.0 + d);
            if den.norm() < 1e-14 {
                return Err(Error::domain(z, format!("1 + (1 + d)m̲ vanishes for d = {d}")));
            }
            h.push(den.inv());
        }
        let g1: Vec<C64> = h.iter().zip(&ctx.d).map(|(h, d)| h * (1.0 + d)).collect();
        let g2: Vec<C64> = g1.iter().zip(&h).map(|(g, h)| g * h).collect();
        let g3: Vec<C64> = g1.iter().map(|g| g * g).collect();
        let kmul = |v: &[C64]| -> Vec<C64> {
            (0..ctx.r).map(|i| (0..ctx.r).map(|j| v[j] * ctx.k[(i, j)]).sum()).collect()
        };
        let adot = |v: &[C64]| -> C64 { v.iter().zip(&ctx.a).map(|(x, a)| x * a).sum() };
        let sum_g2: C64 = g2.iter().sum();
        let sum_g3: C64 = g3.iter().sum();
        let sum_g1h2: C64 = g3.iter().zip(&h).map(|(g, h)| g * h).sum();
        let p = (delta * delta * rho * (1.0 - kappa) - kappa * sum_g2) / nn;
        let q = (delta * delta * delta * rho * (1.0 - kappa) - kappa * sum_g1h2) / nn;
        let den = 1.0 - m * m * delta * delta * rho / nn - m * m * sum_g3 / nn;
        if den.norm() < SINGULAR_TOL {
            return Err(Error::Singular { z, value: den.norm() });
        }
        Ok(SpikedNode {
            z,
            m,
            delta,
            kappa,
            kg1: kmul(&g1),
            kg2: kmul(&g2),
            kg3: kmul(&g3),
            ga1: adot(&g1),
            ga2: adot(&g2),
            ga3: adot(&g3),
            h,
            g1,
            g2,
            g3,
            p,
            q,
            g: p / (z * z * den),
        })
    }

    /// `ℰ_n(z)`, the integrand of the asymptotic mean, for fourth cumulant `mu`.
    pub fn mean_density(&self, ctx: &SpikedContext, mu: f64) -> C64 {
        let nn = ctx.big_n as f64;
        let n = ctx.n as f64;
        let (z, m, delta) = (self.z, self.m, self.delta);
        let d0 = 1.0 - m * m * delta * delta * n / nn;
        let i0 = m * delta * delta * delta * n / nn;
        let mut e = m * m / (z * d0) * (self.p * i0 / d0 - self.q);
        if mu != 0.0 {
            let t = tilde_sums(ctx, self, self);
            let norm = z * z * z * nn;
            e += mu * z * z * m * m * (m * self.p * (t.s1s2_12 / norm) / d0 - t.s1w_12 / norm);
        }
        e
    }
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unnormalized diagonal sums `Σ_k x_k(z1) y_k(z2)` of the tilde family.
#[derive(Debug, Clone, Copy, Default)]
struct TildeSums {
    s1w_12: C64,
    s1w_21: C64,
    s2w_12: C64,
    s2w_21: C64,
    s1s2_12: C64,
    s1s2_21: C64,
    s2s2: C64,
    ww: C64,
    s1s1: C64,
}

fn tilde_sums(ctx: &SpikedContext, x: &SpikedNode, y: &SpikedNode) -> TildeSums {
    let a0 = ctx.a0;
    let (d1, d2, k1, k2) = (x.delta, y.delta, x.kappa, y.kappa);
    // Σ_k s1(x) w(y), with s1 = δ p + Σ g1 v², w = δ²(1-κ) p - κ Σ g2 v²
    let s1w = |x: &SpikedNode, y: &SpikedNode| {
        let (dx, dy, ky) = (x.delta, y.delta, y.kappa);
        dx * dy * dy * (1.0 - ky) * a0 + dy * dy * (1.0 - ky) * x.ga1 - dx * ky * y.ga2 - ky * dot(&x.g1, &y.kg2)
    };
    let s2w = |x: &SpikedNode, y: &SpikedNode| {
        let (dx, dy, ky) = (x.delta, y.delta, y.kappa);
        dx * dx * dy * dy * (1.0 - ky) * a0 + dy * dy * (1.0 - ky) * x.ga3 - dx * dx * ky * y.ga2
            - ky * dot(&x.g3, &y.kg2)
    };
    let s1s2 = |x: &SpikedNode, y: &SpikedNode| {
        let (dx, dy) = (x.delta, y.delta);
        dx * dy * dy * a0 + dy * dy * x.ga1 + dx * y.ga3 + dot(&x.g1, &y.kg3)
    };
    TildeSums {
        s1w_12: s1w(x, y),
        s1w_21: s1w(y, x),
        s2w_12: s2w(x, y),
        s2w_21: s2w(y, x),
        s1s2_12: s1s2(x, y),
        s1s2_21: s1s2(y, x),
        s2s2: d1 * d1 * d2 * d2 * a0 + d2 * d2 * x.ga3 + d1 * d1 * y.ga3 + dot(&x.g3, &y.kg3),
        ww: d1 * d1 * d2 * d2 * (1.0 - k1) * (1.0 - k2) * a0 - d1 * d1 * (1.0 - k1) * k2 * y.ga2
            - d2 * d2 * (1.0 - k2) * k1 * x.ga2
            + k1 * k2 * dot(&x.g2, &y.kg2),
        s1s1: d1 * d2 * a0 + d2 * x.ga1 + d1 * y.ga1 + dot(&x.g1, &y.kg1),
    }
}

/// The calligraphic family at `(z1, z2)`; `_21` fields are evaluated at `(z2, z1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikedBundle {
    pub z1: C64,
    pub z2: C64,
    pub m1: C64,
    pub m2: C64,
    pub c_p1: C64,
    pub c_p2: C64,
    pub c_q1: C64,
    pub c_q2: C64,
    pub c_v1_12: C64,
    pub c_v1_21: C64,
    pub c_v2_12: C64,
    pub c_v2_21: C64,
    pub c_v3: C64,
    pub c_u1_12: C64,
    pub c_u1_21: C64,
    pub c_u2: C64,
    pub ct_v1_12: C64,
    pub ct_v1_21: C64,
    pub ct_v2_12: C64,
    pub ct_v2_21: C64,
    pub ct_v3: C64,
    pub ct_u1_12: C64,
    pub ct_u1_21: C64,
    pub ct_u2: C64,
    pub ct_a: C64,
    pub c_g1: C64,
    pub c_g2: C64,
    pub c_a: C64,
    pub c_z1_12: C64,
    pub c_z1_21: C64,
}

impl SpikedBundle {
    /// Same quantities under the names of the general family, so the
    /// covariance kernels can be shared.
    pub fn as_lemma41(&self) -> Lemma41Bundle {
        Lemma41Bundle {
            z1: self.z1,
            z2: self.z2,
            m1: self.m1,
            m2: self.m2,
            p1: self.c_p1,
            p2: self.c_p2,
            q1: self.c_q1,
            q2: self.c_q2,
            v1_12: self.c_v1_12,
            v1_21: self.c_v1_21,
            v2_12: self.c_v2_12,
            v2_21: self.c_v2_21,
            v3: self.c_v3,
            u1_12: self.c_u1_12,
            u1_21: self.c_u1_21,
            u2: self.c_u2,
            tv1_12: self.ct_v1_12,
            tv1_21: self.ct_v1_21,
            tv2_12: self.ct_v2_12,
            tv2_21: self.ct_v2_21,
            tv3: self.ct_v3,
            tu1_12: self.ct_u1_12,
            tu1_21: self.ct_u1_21,
            tu2: self.ct_u2,
            a: self.c_a,
            ta: self.ct_a,
            g1: self.c_g1,
            g2: self.c_g2,
            b1: -self.z1 * self.m1,
            b2: -self.z2 * self.m2,
            zeta1_12: self.c_z1_12,
            zeta1_21: self.c_z1_21,
        }
    }
}

fn pair(ctx: &SpikedContext, x: &SpikedNode, y: &SpikedNode) -> Result<SpikedBundle> {
    let nn = ctx.big_n as f64;
    let rho = ctx.rho();
    let (z1, z2, m1, m2) = (x.z, y.z, x.m, y.m);
    let (d1, d2, k1, k2) = (x.delta, y.delta, x.kappa, y.kappa);
    let dm = m2 - m1;
    if dm.norm() < SINGULAR_TOL {
        return Err(Error::Geometry(format!("m̲ coincides at z1 = {z1}, z2 = {z2}")));
    }
    // spike sums Σ_i (1+d_i)^p h_i(z1)^a h_i(z2)^b
    let (mut s_v1_12, mut s_v1_21, mut s_v2, mut s_u1_12, mut s_u1_21, mut s_u2, mut s_v3) =
        (zero(), zero(), zero(), zero(), zero(), zero(), zero());
    for i in 0..ctx.r {
        let e = 1.0 + ctx.d[i];
        let (h1, h2) = (x.h[i], y.h[i]);
        let (h1s, h2s) = (h1 * h1, h2 * h2);
        s_v1_12 += h1 * h2s * (e * e);
        s_v1_21 += h2 * h1s * (e * e);
        s_v2 += h1s * h2s * (e * e * e);
        s_u1_12 += h1 * h2s * (e * e * e);
        s_u1_21 += h2 * h1s * (e * e * e);
        s_u2 += h1s * h2s * (e * e * e * e);
        s_v3 += h1s * h2s * (e * e);
    }
    let n12 = z1 * z2 * z2 * nn;
    let n21 = z2 * z1 * z1 * nn;
    let nsq = z1 * z1 * z2 * z2 * nn;
    let c_v1_12 = (d1 * d2 * d2 * rho * (1.0 - k2) - k2 * s_v1_12) / n12;
    let c_v1_21 = (d2 * d1 * d1 * rho * (1.0 - k1) - k1 * s_v1_21) / n21;
    let c_v2_12 = (d1 * d1 * d2 * d2 * rho * (1.0 - k2) - k2 * s_v2) / nsq;
    let c_v2_21 = (d1 * d1 * d2 * d2 * rho * (1.0 - k1) - k1 * s_v2) / nsq;
    let c_u1_12 = (s_u1_12 + d1 * d2 * d2 * rho) / n12;
    let c_u1_21 = (s_u1_21 + d2 * d1 * d1 * rho) / n21;
    let c_u2 = (s_u2 + d1 * d1 * d2 * d2 * rho) / nsq;
    let c_v3 = (d1 * d1 * d2 * d2 * rho * (1.0 - k1) * (1.0 - k2) + k1 * k2 * s_v3) / nsq;
    let t = tilde_sums(ctx, x, y);
    let (g1, g2) = (x.g, y.g);
    Ok(SpikedBundle {
        z1,
        z2,
        m1,
        m2,
        c_p1: x.p,
        c_p2: y.p,
        c_q1: x.q,
        c_q2: y.q,
        c_v1_12,
        c_v1_21,
        c_v2_12,
        c_v2_21,
        c_v3,
        c_u1_12,
        c_u1_21,
        c_u2,
        ct_v1_12: t.s1w_12 / n12,
        ct_v1_21: t.s1w_21 / n21,
        ct_v2_12: t.s2w_12 / nsq,
        ct_v2_21: t.s2w_21 / nsq,
        ct_v3: t.ww / nsq,
        ct_u1_12: t.s1s2_12 / n12,
        ct_u1_21: t.s1s2_21 / n21,
        ct_u2: t.s2s2 / nsq,
        ct_a: m1 * m2 * t.s1s1 / nn,
        c_g1: g1,
        c_g2: g2,
        c_a: 1.0 + m1 * m2 * (z1 - z2) / dm,
        c_z1_12: c_v1_12 + g2 * z2 * z2 * m2 * m2 * c_u1_12,
        c_z1_21: c_v1_21 + g1 * z1 * z1 * m1 * m1 * c_u1_21,
    })
}

/// The spiked family at `(z1, z2)` from `m̲(z1)`, `m̲(z2)`.
pub fn spiked_terms(ctx: &SpikedContext, z1: C64, z2: C64, m1: C64, m2: C64) -> Result<SpikedBundle> {
    let x = ctx.node(z1, m1)?;
    let y = ctx.node(z2, m2)?;
    pair(ctx, &x, &y)
}

/// Spiked nodes on two contours and the variance kernel over all pairs.
#[derive(Debug, Clone)]
pub struct SpikedGrid {
    pub nodes1: Vec<Node>,
    pub nodes2: Vec<Node>,
    pub data1: Vec<SpikedNode>,
    pub data2: Vec<SpikedNode>,
}

impl SpikedGrid {
    pub fn new(ctx: &SpikedContext, nodes1: Vec<Node>, m1: &[C64], nodes2: Vec<Node>, m2: &[C64]) -> Result<Self> {
        let build = |nodes: &[Node], ms: &[C64]| -> Result<Vec<SpikedNode>> {
            nodes.iter().zip(ms).map(|(nd, &m)| ctx.node(nd.z, m)).collect()
        };
        let data1 = build(&nodes1, m1)?;
        let data2 = build(&nodes2, m2)?;
        Ok(SpikedGrid { nodes1, nodes2, data1, data2 })
    }

    /// `Σ_ij w1_i f(z1_i) (2 𝒞1 + μ 𝒞2)(z1_i, z2_j) w2_j f(z2_j)` for each requested `(f_s, f_t)` weight pair.
    pub fn contract(&self, ctx: &SpikedContext, mu: f64, weights: &[(Vec<C64>, Vec<C64>)]) -> Result<Vec<C64>> {
        let rows: Result<Vec<Vec<C64>>> = (0..self.data1.len())
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![zero(); weights.len()];
                for j in 0..self.data2.len() {
                    let b = pair(ctx, &self.data1[i], &self.data2[j])?.as_lemma41();
                    let mut k = c1_kernel(&b) * 2.0;
                    if mu != 0.0 {
                        k += c2_kernel(&b) * mu;
                    }
                    for (a, (_, w2)) in acc.iter_mut().zip(weights) {
                        *a += k * w2[j];
                    }
                }
                for (a, (w1, _)) in acc.iter_mut().zip(weights) {
                    *a *= w1[i];
                }
                Ok(acc)
            })
            .collect();
        let rows = rows?;
        let mut out = vec![zero(); weights.len()];
        for row in rows {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m_identity(z: C64, c: f64) -> C64 {
        crate::stieltjes::mp_fixed_point(z, c, &crate::stieltjes::Spectrum::point(1.0)).unwrap().m_under
    }

    #[test]
    fn empty_spike_sums_give_bulk_p() {
        let (n, big_n) = (100, 200);
        let ctx = SpikedContext::axis(n, big_n, &[], 0).unwrap();
        let z = C64::new(1.5, 0.8);
        let m = m_identity(z, 0.5);
        let node = ctx.node(z, m).unwrap();
        let c = n as f64 / big_n as f64;
        let expect = c / ((1.0 + m) * (1.0 + m)) * (1.0 - c / (z * (1.0 + m) * (1.0 + m)));
        assert!((node.p - expect).norm() < 1e-14);
    }

    #[test]
    fn axis_spikes_have_no_cross_terms() {
        let ctx = SpikedContext::axis(30, 40, &[9.0, 5.0, 2.0], 3).unwrap();
        assert!(ctx.a.iter().all(|&x| x == 0.0));
        assert_eq!(ctx.a0, 27.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(ctx.k[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn a_is_symmetric() {
        let ctx = SpikedContext::axis(50, 60, &[4.0], 2).unwrap();
        let (z1, z2) = (C64::new(0.5, 1.0), C64::new(4.0, -2.0));
        let (m1, m2) = (m_identity(z1, 50.0 / 60.0), m_identity(z2, 50.0 / 60.0));
        let b12 = spiked_terms(&ctx, z1, z2, m1, m2).unwrap();
        let b21 = spiked_terms(&ctx, z2, z1, m2, m1).unwrap();
        assert!((b12.c_a - b21.c_a).norm() < 1e-13);
        assert!((b12.c_v1_21 - b21.c_v1_12).norm() < 1e-15);
        assert!((b12.ct_u2 - b21.ct_u2).norm() < 1e-15);
    }

    fn general_matches(phi: f64, d: &[f64], r: usize) {
        use crate::functionals::{lemma41_terms, mean_density, Shift, SpectralContext};
        use crate::models::{spiked_alternative, AncillaryMatrix};
        use crate::stieltjes::{MbarProvider, TheoryProvider};
        let (n, big_n) = (40, 50);
        let mut full = d.to_vec();
        full.resize(r, 0.0);
        let sigma = if full.iter().all(|&x| x > 0.0) {
            spiked_alternative(n, r, &full, phi, 0.8).unwrap()
        } else {
            let mut eig = vec![1.0; n];
            for (e, x) in eig.iter_mut().zip(&full) {
                *e += x;
            }
            let kind = crate::models::PopulationKind::Custom { eigenvalues: eig, eigenvectors: None };
            crate::models::build_population(n, kind, 0.8).unwrap()
        };
        let v = sigma.spike_directions().cloned().unwrap_or_else(|| DMatrix::from_fn(n, r, |i, j| f64::from(i == j)));
        let b = AncillaryMatrix::dense(DMatrix::identity(n, n) - &v * v.transpose()).unwrap();
        let general = SpectralContext::new(&sigma, &b, big_n)
            .unwrap()
            .with_shift(Shift::Kappa { rho: (n - r) as f64 });
        let sp = SpikedContext::new(n, big_n, d, &v).unwrap();
        let prov = TheoryProvider::for_population(&sigma, big_n);
        let (z1, z2) = (C64::new(2.0, 1.3), C64::new(-0.4, -0.9));
        let (m1, m2) = (prov.m_under(z1).unwrap(), prov.m_under(z2).unwrap());
        let g = lemma41_terms(&general, z1, z2, m1, m2).unwrap();
        let s = spiked_terms(&sp, z1, z2, m1, m2).unwrap().as_lemma41();
        let pairs = [
            (g.p1, s.p1), (g.q2, s.q2), (g.v1_12, s.v1_12), (g.v1_21, s.v1_21), (g.v2_12, s.v2_12),
            (g.v2_21, s.v2_21), (g.v3, s.v3), (g.u1_12, s.u1_12), (g.u1_21, s.u1_21), (g.u2, s.u2),
            (g.tv1_12, s.tv1_12), (g.tv1_21, s.tv1_21), (g.tv2_12, s.tv2_12), (g.tv2_21, s.tv2_21),
            (g.tv3, s.tv3), (g.tu1_12, s.tu1_12), (g.tu1_21, s.tu1_21), (g.tu2, s.tu2), (g.ta, s.ta),
            (g.a, s.a), (g.g1, s.g1), (g.g2, s.g2), (g.zeta1_12, s.zeta1_12), (g.zeta1_21, s.zeta1_21),
        ];
        for (k, (x, y)) in pairs.iter().enumerate() {
            assert!((x - y).norm() < 1e-10 * (1.0 + x.norm()), "field {k}: {x} vs {y}");
        }
        // with Σ = I the mean density coincides with the general one
        let id = SpikedContext::new(n, big_n, &[], &v).unwrap();
        let sigma_i = crate::models::build_population(n, crate::models::PopulationKind::Identity, 0.8).unwrap();
        let gi = SpectralContext::new(&sigma_i, &b, big_n).unwrap().with_shift(Shift::Kappa { rho: (n - r) as f64 });
        let m = TheoryProvider::for_population(&sigma_i, big_n).m_under(z1).unwrap();
        let want = mean_density(&gi, &gi.cache(z1, m).unwrap(), 2.0, 1.7).unwrap();
        let got = id.node(z1, m).unwrap().mean_density(&id, 1.7);
        assert!((want - got).norm() < 1e-10 * (1.0 + want.norm()), "{want} vs {got}");
    }

    #[test]
    fn agrees_with_general_family_on_axis() {
        general_matches(0.0, &[6.0, 2.5, 1.0], 3);
    }

    #[test]
    fn agrees_with_general_family_rotated() {
        general_matches(0.4, &[6.0, 2.5], 2);
    }

    #[test]
    fn zero_padding_is_a_unit_spike() {
        general_matches(0.0, &[3.0], 3);
    }
}

