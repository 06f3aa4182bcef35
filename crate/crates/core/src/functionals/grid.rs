//! All node pairs of two contours at once.
//!
//! Every two-point sum has the form `Σ_k A_k(z1) B_k(z2)`, so over a grid of
//! nodes it is one matrix product of per-node feature rows.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{assemble, c1_kernel, c2_kernel, lowrank_from_sums, omega2_kernel, zero, NodeScalars, RawSums, ResolventCache, SpectralContext};
use crate::error::{Error, Result};
use crate::stieltjes::contour::{ContourSpec, Node};
use crate::stieltjes::MbarProvider;
use crate::C64;

const COLLISION_TOL: f64 = 1e-10;

fn split(a: &DMatrix<C64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (a.map(|x| x.re), a.map(|x| x.im))
}

fn join(re: DMatrix<f64>, im: &DMatrix<f64>) -> DMatrix<C64> {
    re.zip_map(im, C64::new)
}

/// `A Bᵀ` for complex feature matrices (rows are nodes).
pub fn cross(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let (brt, bit) = (br.transpose(), bi.transpose());
    let re = &ar * &brt - &ai * &bit;
    let im = &ar * &bit + &ai * &brt;
    join(re, &im)
}

/// `A Mᵀ` with complex `A` and real `M`.
fn times_real_t(a: &DMatrix<C64>, m: &DMatrix<f64>) -> DMatrix<C64> {
    let (ar, ai) = split(a);
    let mt = m.transpose();
    join(&ar * &mt, &(&ai * &mt))
}

fn rowwise_dot(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Vec<C64> {
    (0..a.nrows()).map(|i| a.row(i).iter().zip(b.row(i).iter()).map(|(x, y)| x * y).sum()).collect()
}

/// Contour nodes with their resolvent data.
#[derive(Debug, Clone)]
pub struct NodeSet {
    pub nodes: Vec<Node>,
    pub caches: Vec<ResolventCache>,
    pub scalars: Vec<NodeScalars>,
}

impl NodeSet {
    pub fn build(ctx: &SpectralContext, gamma: &ContourSpec, provider: &dyn MbarProvider) -> Result<Self> {
        let nodes = gamma.nodes();
        let ms: Result<Vec<C64>> = nodes.par_iter().map(|nd| provider.m_under(nd.z)).collect();
        Self::from_values(ctx, nodes, ms?)
    }

    pub fn from_values(ctx: &SpectralContext, nodes: Vec<Node>, ms: Vec<C64>) -> Result<Self> {
        let caches: Result<Vec<ResolventCache>> =
            nodes.par_iter().zip(ms.par_iter()).map(|(nd, &m)| ctx.cache(nd.z, m)).collect();
        let caches = caches?;
        let scalars: Result<Vec<NodeScalars>> = caches.par_iter().map(|c| ctx.node_scalars(c)).collect();
        Ok(NodeSet { nodes, caches, scalars: scalars? })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn features(&self, n: usize, f: impl Fn(&ResolventCache, usize) -> C64) -> DMatrix<C64> {
        DMatrix::from_fn(self.len(), n, |i, k| f(&self.caches[i], k))
    }

    /// Standard-basis diagonal vectors for all nodes: `(S1, S2, W)`, each K × n.
    fn diag_matrices(&self, ctx: &SpectralContext) -> (DMatrix<C64>, DMatrix<C64>, DMatrix<C64>) {
        let n = ctx.n;
        let lam = &ctx.lam;
        let ld = self.features(n, |c, k| c.d[k] * lam[k]);
        let ld2 = ld.map(|x| x * x);
        let Some(ops) = &ctx.ops else {
            let w = self.features(n, |c, k| c.d[k] * c.d[k] * lam[k] * (ctx.beta[k] + c.tau));
            return (ld, ld2, w);
        };
        let s1 = times_real_t(&ld, &ops.uu);
        let s2 = times_real_t(&ld2, &ops.uu);
        let dd = self.features(n, |c, k| c.d[k] * c.d[k]);
        let mut w = times_real_t(&dd, &ops.near);
        if let Some(far) = &ops.far {
            let dm = self.features(n, |c, k| c.d[k] / c.m_under);
            w += times_real_t(&dm, far);
        }
        if self.caches.iter().any(|c| c.tau != zero()) {
            let v = self.features(n, |c, k| c.d[k] * c.d[k] * lam[k] * c.tau);
            w += times_real_t(&v, &ops.uu);
        }
        (s1, s2, w)
    }
}

/// `tr(B(z1) E B(z2) E)` over the grid, with `E = diag(d1 d2 λ)`.
fn squared_trace_grid(ctx: &SpectralContext, s1: &NodeSet, s2: &NodeSet) -> Result<DMatrix<C64>> {
    let n = ctx.n;
    let lam = &ctx.lam;
    let d1 = s1.features(n, |c, k| c.d[k]);
    let d2 = s2.features(n, |c, k| c.d[k]);
    let sq1 = d1.map(|x| x * x);
    let mut t = match &ctx.hadamard {
        None => {
            let right = s2.features(n, |c, k| c.d[k] * c.d[k] * (lam[k] * ctx.beta[k]).powi(2));
            cross(&sq1, &right)
        }
        Some(h) => {
            // e = (d1 - d2) / (m̲2 - m̲1) turns the double sum into three bilinear forms
            let g1 = times_real_t(&d1, h);
            let g2 = times_real_t(&d2, h);
            let a = rowwise_dot(&g1, &d1);
            let b = rowwise_dot(&g2, &d2);
            let x = cross(&d1, &g2);
            let mut t = DMatrix::from_element(s1.len(), s2.len(), zero());
            for j in 0..s2.len() {
                for i in 0..s1.len() {
                    let dm = s2.caches[j].m_under - s1.caches[i].m_under;
                    if dm.norm() < COLLISION_TOL {
                        return Err(Error::Geometry(format!(
                            "m̲ values coincide at z1 = {}, z2 = {}",
                            s1.nodes[i].z, s2.nodes[j].z
                        )));
                    }
                    t[(i, j)] = (a[i] - x[(i, j)] * 2.0 + b[j]) / (dm * dm);
                }
            }
            t
        }
    };
    let shifted = s1.caches.iter().chain(&s2.caches).any(|c| c.tau != zero());
    if shifted {
        let eb = cross(&sq1, &s2.features(n, |c, k| c.d[k] * c.d[k] * lam[k] * lam[k] * ctx.beta[k]));
        let ee = cross(&sq1, &s2.features(n, |c, k| c.d[k] * c.d[k] * lam[k] * lam[k]));
        for j in 0..s2.len() {
            for i in 0..s1.len() {
                let (t1, t2) = (s1.caches[i].tau, s2.caches[j].tau);
                t[(i, j)] += eb[(i, j)] * (t1 + t2) + ee[(i, j)] * t1 * t2;
            }
        }
    }
    Ok(t)
}

fn check_pair(a: &Node, b: &Node) -> Result<()> {
    if (a.z - b.z).norm() < COLLISION_TOL {
        return Err(Error::Geometry(format!("contour nodes collide at {}", a.z)));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct TildeMats {
    s1w_12: DMatrix<C64>,
    s1w_21: DMatrix<C64>,
    s2w_12: DMatrix<C64>,
    s2w_21: DMatrix<C64>,
    s1s2_12: DMatrix<C64>,
    s1s2_21: DMatrix<C64>,
    s2s2: DMatrix<C64>,
    ww: DMatrix<C64>,
    s1s1: DMatrix<C64>,
}

/// Two-point functional sums for every `(z1, z2) ∈ Γ1 × Γ2`.
#[derive(Debug, Clone)]
pub struct Lemma41Grid {
    big_n: usize,
    v1_12: DMatrix<C64>,
    v1_21: DMatrix<C64>,
    u1_12: DMatrix<C64>,
    u1_21: DMatrix<C64>,
    v2_12: DMatrix<C64>,
    v2_21: DMatrix<C64>,
    u2: DMatrix<C64>,
    t: DMatrix<C64>,
    a: DMatrix<C64>,
    tilde: Option<TildeMats>,
}

impl Lemma41Grid {
    /// `with_tilde = false` skips the diagonal-sum family (only needed when μ_X ≠ 0).
    pub fn build(ctx: &SpectralContext, s1: &NodeSet, s2: &NodeSet, with_tilde: bool) -> Result<Self> {
        let n = ctx.n;
        let lam = &ctx.lam;
        let beta = &ctx.beta;
        let l2 = |k: usize| lam[k] * lam[k];
        let d = |s: &NodeSet| s.features(n, |c, k| c.d[k]);
        let dsq = |s: &NodeSet| s.features(n, |c, k| c.d[k] * c.d[k]);
        let (d1, d2, q1, q2) = (d(s1), d(s2), dsq(s1), dsq(s2));

        let v1_12 = cross(&d1, &s2.features(n, |c, k| c.d[k] * c.d[k] * l2(k) * (beta[k] + c.tau)));
        let v1_21 = cross(&s1.features(n, |c, k| c.d[k] * c.d[k] * l2(k) * (beta[k] + c.tau)), &d2);
        let u1_12 = cross(&d1, &s2.features(n, |c, k| c.d[k] * c.d[k] * l2(k) * lam[k]));
        let u1_21 = cross(&s1.features(n, |c, k| c.d[k] * c.d[k] * l2(k) * lam[k]), &d2);
        let v2_12 = cross(&q1, &s2.features(n, |c, k| c.d[k] * c.d[k] * l2(k) * lam[k] * (beta[k] + c.tau)));
        let v2_21 = cross(&s1.features(n, |c, k| c.d[k] * c.d[k] * l2(k) * lam[k] * (beta[k] + c.tau)), &q2);
        let u2 = cross(&q1, &s2.features(n, |c, k| c.d[k] * c.d[k] * l2(k) * l2(k)));
        let a = cross(&d1, &s2.features(n, |c, k| c.d[k] * l2(k)));
        let t = squared_trace_grid(ctx, s1, s2)?;

        let tilde = if with_tilde {
            let (x1, x2, xw) = s1.diag_matrices(ctx);
            let (y1, y2, yw) = s2.diag_matrices(ctx);
            Some(TildeMats {
                s1w_12: cross(&x1, &yw),
                s1w_21: cross(&xw, &y1),
                s2w_12: cross(&x2, &yw),
                s2w_21: cross(&xw, &y2),
                s1s2_12: cross(&x1, &y2),
                s1s2_21: cross(&x2, &y1),
                s2s2: cross(&x2, &y2),
                ww: cross(&xw, &yw),
                s1s1: cross(&x1, &y1),
            })
        } else {
            None
        };
        Ok(Lemma41Grid { big_n: ctx.big_n, v1_12, v1_21, u1_12, u1_21, v2_12, v2_21, u2, t, a, tilde })
    }

    pub fn raw(&self, i: usize, j: usize) -> RawSums {
        let mut r = RawSums {
            v1_12: self.v1_12[(i, j)],
            v1_21: self.v1_21[(i, j)],
            u1_12: self.u1_12[(i, j)],
            u1_21: self.u1_21[(i, j)],
            v2_12: self.v2_12[(i, j)],
            v2_21: self.v2_21[(i, j)],
            u2: self.u2[(i, j)],
            t: self.t[(i, j)],
            a: self.a[(i, j)],
            ..RawSums::default()
        };
        if let Some(x) = &self.tilde {
            r.s1w_12 = x.s1w_12[(i, j)];
            r.s1w_21 = x.s1w_21[(i, j)];
            r.s2w_12 = x.s2w_12[(i, j)];
            r.s2w_21 = x.s2w_21[(i, j)];
            r.s1s2_12 = x.s1s2_12[(i, j)];
            r.s1s2_21 = x.s1s2_21[(i, j)];
            r.s2s2 = x.s2s2[(i, j)];
            r.ww = x.ww[(i, j)];
            r.s1s1 = x.s1s1[(i, j)];
        }
        r
    }

    pub fn bundle(&self, s1: &NodeSet, s2: &NodeSet, i: usize, j: usize) -> super::Lemma41Bundle {
        let (c1, c2) = (&s1.caches[i], &s2.caches[j]);
        assemble(
            [c1.z, c2.z],
            [c1.m_under, c2.m_under],
            [&s1.scalars[i], &s2.scalars[j]],
            &self.raw(i, j),
            self.big_n,
        )
    }

    /// `υ C_n^1 + μ C_n^2` at every node pair.
    pub fn kernel(&self, s1: &NodeSet, s2: &NodeSet, upsilon: f64, mu: f64) -> Result<DMatrix<C64>> {
        if mu != 0.0 && self.tilde.is_none() {
            return Err(Error::param("grid was built without the diagonal-sum family"));
        }
        let rows: Result<Vec<Vec<C64>>> = (0..s1.len())
            .into_par_iter()
            .map(|i| {
                (0..s2.len())
                    .map(|j| {
                        check_pair(&s1.nodes[i], &s2.nodes[j])?;
                        let b = self.bundle(s1, s2, i, j);
                        let mut k = c1_kernel(&b) * upsilon;
                        if mu != 0.0 {
                            k += c2_kernel(&b) * mu;
                        }
                        Ok(k)
                    })
                    .collect()
            })
            .collect();
        let rows = rows?;
        Ok(DMatrix::from_fn(s1.len(), s2.len(), |i, j| rows[i][j]))
    }
}

/// `H_n^1`, `H_n^2` for every node pair.
#[derive(Debug, Clone)]
pub struct LowRankGrid {
    k: f64,
    t: DMatrix<C64>,
    ww: DMatrix<C64>,
}

impl LowRankGrid {
    pub fn build(ctx: &SpectralContext, s1: &NodeSet, s2: &NodeSet) -> Result<Self> {
        if ctx.k_n == 0 {
            return Err(Error::param("B has rank zero"));
        }
        let t = squared_trace_grid(ctx, s1, s2)?;
        let (_, _, xw) = s1.diag_matrices(ctx);
        let (_, _, yw) = s2.diag_matrices(ctx);
        Ok(LowRankGrid { k: ctx.k_n as f64, t, ww: cross(&xw, &yw) })
    }

    pub fn terms(&self, s1: &NodeSet, s2: &NodeSet, i: usize, j: usize) -> (C64, C64) {
        let (c1, c2) = (&s1.caches[i], &s2.caches[j]);
        lowrank_from_sums(c1.z, c2.z, c1.m_under, c2.m_under, self.t[(i, j)], self.ww[(i, j)], self.k)
    }

    pub fn kernel(&self, s1: &NodeSet, s2: &NodeSet, upsilon: f64, mu: f64) -> Result<DMatrix<C64>> {
        let mut out = DMatrix::from_element(s1.len(), s2.len(), zero());
        for j in 0..s2.len() {
            for i in 0..s1.len() {
                check_pair(&s1.nodes[i], &s2.nodes[j])?;
                let (c1, c2) = (&s1.caches[i], &s2.caches[j]);
                let h = self.terms(s1, s2, i, j);
                out[(i, j)] = omega2_kernel(c1.z, c2.z, c1.m_under, c2.m_under, h, upsilon, mu);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::lemma41_terms;
    use crate::models::{build_population, AncillaryMatrix, PopulationKind};
    use crate::stieltjes::TheoryProvider;

    #[test]
    fn cross_matches_naive_product() {
        let a = DMatrix::from_fn(3, 4, |i, k| C64::new(i as f64 + 0.5, k as f64 - 1.0));
        let b = DMatrix::from_fn(2, 4, |j, k| C64::new((j * k) as f64, 0.3 * k as f64));
        let c = cross(&a, &b);
        for i in 0..3 {
            for j in 0..2 {
                let v: C64 = (0..4).map(|k| a[(i, k)] * b[(j, k)]).sum();
                assert!((c[(i, j)] - v).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_matches_pointwise_for_dense_pair() {
        let n = 80;
        let p = build_population(n, PopulationKind::Ar1 { rho: 0.5 }, 0.5).unwrap();
        let b = AncillaryMatrix::dense(crate::models::wigner(n, 3)).unwrap();
        let ctx = SpectralContext::new(&p, &b, 2 * n).unwrap();
        let prov = TheoryProvider::for_population(&p, 2 * n);
        let g1 = ContourSpec::new(-0.5, 9.0, 1.0, 64).unwrap();
        let g2 = g1.nested(0.5);
        let s1 = NodeSet::build(&ctx, &g1, &prov).unwrap();
        let s2 = NodeSet::build(&ctx, &g2, &prov).unwrap();
        let grid = Lemma41Grid::build(&ctx, &s1, &s2, true).unwrap();
        for &(i, j) in &[(0, 0), (17, 100), (200, 33), (255, 255)] {
            let gb = grid.bundle(&s1, &s2, i, j);
            let (c1, c2) = (&s1.caches[i], &s2.caches[j]);
            let pb = lemma41_terms(&ctx, c1.z, c2.z, c1.m_under, c2.m_under).unwrap();
            for (x, y) in [
                (gb.v3, pb.v3),
                (gb.tv3, pb.tv3),
                (gb.tv1_12, pb.tv1_12),
                (gb.tv2_21, pb.tv2_21),
                (gb.zeta1_21, pb.zeta1_21),
                (gb.a, pb.a),
            ] {
                assert!((x - y).norm() <= 1e-9 * y.norm().max(1e-12), "{x} vs {y}");
            }
        }
    }
}
