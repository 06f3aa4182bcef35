//! Brute-force complex dense evaluation of the two-point functional families.
#![allow(dead_code)]

use glss::functionals::{lemma41_terms, lowrank_terms, scalar_helpers, spiked_terms, Lemma41Bundle, SpectralContext, SpikedContext};
use glss::stieltjes::{mp_fixed_point, Spectrum};
use glss::models::{build_population, AncillaryMatrix, PopulationKind, PopulationModel};
use glss::C64;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type CMat = DMatrix<C64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    gaussian(rng, n, n).qr().q()
}

fn cx(m: &DMatrix<f64>) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}

pub fn tr(m: &CMat) -> C64 {
    m.diagonal().iter().sum()
}

fn diag_prod(x: &CMat, y: &CMat) -> C64 {
    x.diagonal().iter().zip(y.diagonal().iter()).map(|(a, b)| a * b).sum()
}

/// A random `(Σ, B, N)` with `n ≤ 8`; `kind` 0 is diagonal, 1 dense, 2 low-rank.
pub struct Instance {
    pub n: usize,
    pub big_n: usize,
    pub q: DMatrix<f64>,
    pub lam: Vec<f64>,
    pub b: DMatrix<f64>,
    pub b_model: AncillaryMatrix,
    pub sigma: PopulationModel,
}

pub fn instance(rng: &mut ChaCha8Rng, kind: usize) -> Instance {
    let n = rng.random_range(2..=8);
    let big_n = rng.random_range(n..=3 * n);
    let lam: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
    let diagonal_sigma = kind == 0;
    let q = if diagonal_sigma { DMatrix::identity(n, n) } else { orthogonal(rng, n) };
    let eigenvectors = if diagonal_sigma { None } else { Some(q.clone()) };
    let sigma = build_population(
        n,
        PopulationKind::Custom { eigenvalues: lam.clone(), eigenvectors },
        n as f64 / big_n as f64,
    )
    .unwrap();
    let (b, b_model) = match kind {
        0 => {
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
            (DMatrix::from_diagonal(&DVector::from_column_slice(&d)), AncillaryMatrix::diagonal(d))
        }
        1 => {
            let g = gaussian(rng, n, n);
            let m = (&g + g.transpose()) * 0.5;
            (m.clone(), AncillaryMatrix::dense(m).unwrap())
        }
        _ => {
            let k = rng.random_range(1..n);
            let v = orthogonal(rng, n).columns(0, k).into_owned();
            let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
            let bm = AncillaryMatrix::low_rank(w, v).unwrap();
            (bm.to_dense(), bm)
        }
    };
    Instance { n, big_n, q, lam, b, b_model, sigma }
}

/// A point off the real axis and an `m` value in the matching half plane.
pub fn random_point(rng: &mut ChaCha8Rng) -> (C64, C64) {
    let z = C64::new(rng.random_range(-2.0..4.0), rng.random_range(0.3..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 });
    let m = C64::new(rng.random_range(-0.8..0.8), rng.random_range(0.1..0.9) * z.im.signum());
    (z, m)
}

/// `B(z) = B0 - (ρ / (z N (1 + m)²)) I`, or the fixed `B0` when `rho` is `None`.
pub struct Dense {
    sig: CMat,
    half: CMat,
    b0: CMat,
    rho: Option<f64>,
    big_n: f64,
}

impl Dense {
    pub fn general(inst: &Instance) -> Self {
        let d = DMatrix::from_diagonal(&DVector::from_iterator(inst.n, inst.lam.iter().copied()));
        let dh = d.map(f64::sqrt);
        Dense {
            sig: cx(&(&inst.q * d * inst.q.transpose())),
            half: cx(&(&inst.q * dh * inst.q.transpose())),
            b0: cx(&inst.b),
            rho: None,
            big_n: inst.big_n as f64,
        }
    }

    /// `Σ = I + V diag(d) Vᵀ` with `B(z) = I - V Vᵀ - κ(z) I`.
    pub fn spiked(v: &DMatrix<f64>, d: &[f64], big_n: usize) -> Self {
        let n = v.nrows();
        let dv = DMatrix::from_diagonal(&DVector::from_column_slice(d));
        let sig = DMatrix::identity(n, n) + v * &dv * v.transpose();
        let half = DMatrix::identity(n, n) + v * dv.map(|x| (1.0 + x).sqrt() - 1.0) * v.transpose();
        let b0 = DMatrix::identity(n, n) - v * v.transpose();
        Dense { sig: cx(&sig), half: cx(&half), b0: cx(&b0), rho: Some((n - v.ncols()) as f64), big_n: big_n as f64 }
    }

    fn b(&self, z: C64, m: C64) -> CMat {
        match self.rho {
            None => self.b0.clone(),
            Some(rho) => {
                let n = self.b0.nrows();
                let tau = -C64::from(rho) / (z * self.big_n * (1.0 + m) * (1.0 + m));
                &self.b0 + CMat::identity(n, n) * tau
            }
        }
    }

    /// `(I + m Σ)^{-1}`.
    fn bar_inv(&self, m: C64) -> CMat {
        let n = self.sig.nrows();
        (CMat::identity(n, n) + &self.sig * m).try_inverse().unwrap()
    }

    fn p(&self, z: C64, m: C64) -> C64 {
        let r = self.bar_inv(m);
        tr(&(&r * &r * &self.sig * self.b(z, m))) / self.big_n
    }

    fn q(&self, z: C64, m: C64) -> C64 {
        let r = self.bar_inv(m);
        tr(&(&r * &r * &r * &self.sig * &self.sig * self.b(z, m))) / self.big_n
    }

    fn g(&self, z: C64, m: C64) -> C64 {
        let r = self.bar_inv(m);
        let t = tr(&(&r * &r * &self.sig * &self.sig)) / self.big_n;
        self.p(z, m) / (z * z) / (1.0 - m * m * t)
    }

    /// `Σ^{1/2} Σ̄^{-1} B(z) Σ̄^{-1} Σ^{1/2}`.
    fn w(&self, z: C64, m: C64) -> CMat {
        let r = self.bar_inv(m);
        &self.half * &r * self.b(z, m) * &r * &self.half
    }

    /// Every field of the two-point family, in the layout of [`Lemma41Bundle`].
    pub fn bundle(&self, z1: C64, m1: C64, z2: C64, m2: C64) -> Lemma41Bundle {
        let nn = self.big_n;
        let s = &self.sig;
        let (r1, r2) = (self.bar_inv(m1), self.bar_inv(m2));
        let (bz1, bz2) = (self.b(z1, m1), self.b(z2, m2));
        let s2m = s * s;
        let v1 = |za: C64, zb: C64, ra: &CMat, rb: &CMat, bb: &CMat| tr(&(rb * rb * ra * &s2m * bb)) / (za * zb * zb * nn);
        let u1 = |za: C64, zb: C64, ra: &CMat, rb: &CMat| tr(&(rb * rb * ra * &s2m * s)) / (za * zb * zb * nn);
        let sq = z1 * z1 * z2 * z2 * nn;
        let v2 = |ra: &CMat, rb: &CMat, bb: &CMat| tr(&(rb * rb * ra * ra * &s2m * s * bb)) / sq;
        let s1 = |r: &CMat| r * s;
        let s2 = |r: &CMat| r * r * &s2m;
        let (w1, w2) = (self.w(z1, m1), self.w(z2, m2));
        let tv1 = |za: C64, zb: C64, ra: &CMat, wb: &CMat| diag_prod(&s1(ra), wb) / (za * zb * zb * nn);
        let tu1 = |za: C64, zb: C64, ra: &CMat, rb: &CMat| diag_prod(&s1(ra), &s2(rb)) / (za * zb * zb * nn);
        let (g1, g2) = (self.g(z1, m1), self.g(z2, m2));
        let (b1, b2) = (-z1 * m1, -z2 * m2);
        let v1_12 = v1(z1, z2, &r1, &r2, &bz2);
        let v1_21 = v1(z2, z1, &r2, &r1, &bz1);
        let u1_12 = u1(z1, z2, &r1, &r2);
        let u1_21 = u1(z2, z1, &r2, &r1);
        Lemma41Bundle {
            z1,
            z2,
            m1,
            m2,
            p1: self.p(z1, m1),
            p2: self.p(z2, m2),
            q1: self.q(z1, m1),
            q2: self.q(z2, m2),
            v1_12,
            v1_21,
            v2_12: v2(&r1, &r2, &bz2),
            v2_21: v2(&r2, &r1, &bz1),
            v3: tr(&(&r2 * &r1 * s * &bz1 * &r1 * &r2 * s * &bz2)) / sq,
            u1_12,
            u1_21,
            u2: tr(&(&r2 * &r2 * &r1 * &r1 * &s2m * &s2m)) / sq,
            tv1_12: tv1(z1, z2, &r1, &w2),
            tv1_21: tv1(z2, z1, &r2, &w1),
            tv2_12: diag_prod(&s2(&r1), &w2) / sq,
            tv2_21: diag_prod(&s2(&r2), &w1) / sq,
            tv3: diag_prod(&w1, &w2) / sq,
            tu1_12: tu1(z1, z2, &r1, &r2),
            tu1_21: tu1(z2, z1, &r2, &r1),
            tu2: diag_prod(&s2(&r1), &s2(&r2)) / sq,
            a: m1 * m2 * tr(&(&r1 * &r2 * &s2m)) / nn,
            ta: m1 * m2 * diag_prod(&s1(&r1), &s1(&r2)) / nn,
            g1,
            g2,
            b1,
            b2,
            zeta1_12: v1_12 + b2 * b2 * g2 * u1_12,
            zeta1_21: v1_21 + b1 * b1 * g1 * u1_21,
        }
    }

    /// `(H1, H2)` of the low-rank regime; `k` is the rank of `B`.
    pub fn lowrank(&self, k: usize, z1: C64, m1: C64, z2: C64, m2: C64) -> (C64, C64) {
        let k = k as f64;
        let x = &self.b0 * self.bar_inv(m1) * &self.sig * self.bar_inv(m2);
        let h1 = tr(&(&x * &x)) / k;
        let h2 = m1 * m2 * diag_prod(&self.w(z1, m1), &self.w(z2, m2)) / (k * z1 * z2);
        (h1, h2)
    }
}

pub fn fields(b: &Lemma41Bundle) -> [(&'static str, C64); 28] {
    [
        ("P(z1)", b.p1),
        ("P(z2)", b.p2),
        ("Q(z1)", b.q1),
        ("Q(z2)", b.q2),
        ("V1_12", b.v1_12),
        ("V1_21", b.v1_21),
        ("V2_12", b.v2_12),
        ("V2_21", b.v2_21),
        ("V3", b.v3),
        ("U1_12", b.u1_12),
        ("U1_21", b.u1_21),
        ("U2", b.u2),
        ("tV1_12", b.tv1_12),
        ("tV1_21", b.tv1_21),
        ("tV2_12", b.tv2_12),
        ("tV2_21", b.tv2_21),
        ("tV3", b.tv3),
        ("tU1_12", b.tu1_12),
        ("tU1_21", b.tu1_21),
        ("tU2", b.tu2),
        ("a", b.a),
        ("ta", b.ta),
        ("g(z1)", b.g1),
        ("g(z2)", b.g2),
        ("b(z1)", b.b1),
        ("b(z2)", b.b2),
        ("zeta_12", b.zeta1_12),
        ("zeta_21", b.zeta1_21),
    ]
}

/// Largest relative deviation `|got - want| / (1 + |want|)` over all fields.
pub fn worst(got: &Lemma41Bundle, want: &Lemma41Bundle) -> (f64, &'static str) {
    fields(got)
        .iter()
        .zip(fields(want).iter())
        .map(|((name, g), (_, w))| ((g - w).norm() / (1.0 + w.norm()), *name))
        .fold((0.0, ""), |acc, x| if x.0 > acc.0 { x } else { acc })
}

pub fn rel(got: C64, want: C64) -> f64 {
    (got - want).norm() / (1.0 + want.norm())
}

/// Worst deviation of the general family, its scalar helpers and the low-rank pair.
pub fn general_trial(rng: &mut ChaCha8Rng, trial: usize) -> (f64, String) {
    let inst = instance(rng, trial % 3);
    let d = Dense::general(&inst);
    let ctx = SpectralContext::new(&inst.sigma, &inst.b_model, inst.big_n).unwrap();
    let (z1, m1) = random_point(rng);
    let (z2, m2) = random_point(rng);
    let got = lemma41_terms(&ctx, z1, z2, m1, m2).unwrap();
    let want = d.bundle(z1, m1, z2, m2);
    let (mut err, name) = worst(&got, &want);
    let mut what = format!("general {name}");
    let (hb, hg) = scalar_helpers(&ctx, z1, m1).unwrap();
    for (e, n) in [(rel(hb, want.b1), "helper b"), (rel(hg, want.g1), "helper g")] {
        if e > err {
            (err, what) = (e, n.to_string());
        }
    }
    if inst.b_model.rank > 0 {
        let (h1, h2) = lowrank_terms(&ctx, z1, z2, m1, m2).unwrap();
        let (w1, w2) = d.lowrank(inst.b_model.rank, z1, m1, z2, m2);
        for (e, n) in [(rel(h1, w1), "low-rank H1"), (rel(h2, w2), "low-rank H2")] {
            if e > err {
                (err, what) = (e, n.to_string());
            }
        }
    }
    (err, format!("trial {trial} (n={}, N={}): {what}", inst.n, inst.big_n))
}

/// Worst deviation of the spiked family on a random rotated subspace.
pub fn spiked_trial(rng: &mut ChaCha8Rng, trial: usize) -> (f64, String) {
    let n = rng.random_range(3..=8);
    let big_n = rng.random_range(n..=3 * n);
    let r = rng.random_range(1..n);
    let detected = rng.random_range(0..=r);
    let d: Vec<f64> = (0..detected).map(|_| rng.random_range(0.5..9.0)).collect();
    let mut padded = d.clone();
    padded.resize(r, 0.0);
    let v = orthogonal(rng, n).columns(0, r).into_owned();
    let ctx = SpikedContext::new(n, big_n, &d, &v).unwrap();
    let dense = Dense::spiked(&v, &padded, big_n);
    // the spiked `a` uses the fixed-point identity, so m̲ must be on shell
    let mut eig = vec![1.0; n];
    for (e, x) in eig.iter_mut().zip(&padded) {
        *e += x;
    }
    let h = Spectrum::from_eigenvalues(&eig);
    let c = n as f64 / big_n as f64;
    let (z1, _) = random_point(rng);
    let (z2, _) = random_point(rng);
    let m1 = mp_fixed_point(z1, c, &h).unwrap().m_under;
    let m2 = mp_fixed_point(z2, c, &h).unwrap().m_under;
    let got = spiked_terms(&ctx, z1, z2, m1, m2).unwrap().as_lemma41();
    let want = dense.bundle(z1, m1, z2, m2);
    let (err, name) = worst(&got, &want);
    (err, format!("trial {trial} (n={n}, N={big_n}, r={r}, spikes={detected}): spiked {name}"))
}
