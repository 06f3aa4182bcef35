//! Population covariances, ancillary matrices, data generation and sample covariances.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const ORTHO_TOL: f64 = 1e-10;

/// Descriptor for a population covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationKind {
    Identity,
    Ar1 { rho: f64 },
    /// `Σ_ii = (i/n)^power + offset`.
    DiagRamp { offset: f64, power: f64 },
    /// `I + Σ d_i v_i v_iᵀ`; `v` holds the directions as columns (n × r).
    Spiked {
        d: Vec<f64>,
        #[serde(skip)]
        v: Option<DMatrix<f64>>,
    },
    Custom {
        eigenvalues: Vec<f64>,
        #[serde(skip)]
        eigenvectors: Option<DMatrix<f64>>,
    },
}

/// Σ_n with its spectral decomposition.
///
/// `eigenvectors == None` means Σ is diagonal in the standard basis and
/// `eigenvalues[i]` is `Σ_ii`.
#[derive(Debug, Clone)]
pub struct PopulationModel {
    pub n: usize,
    pub kind: PopulationKind,
    pub c_target: f64,
    eigenvalues: Vec<f64>,
    eigenvectors: Option<DMatrix<f64>>,
    sqrt: OnceLock<DMatrix<f64>>,
}

impl PopulationModel {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> Option<&DMatrix<f64>> {
        self.eigenvectors.as_ref()
    }

    pub fn is_diagonal(&self) -> bool {
        self.eigenvectors.is_none()
    }

    pub fn is_identity(&self) -> bool {
        self.is_diagonal() && self.eigenvalues.iter().all(|&t| t == 1.0)
    }

    /// Eigenvector matrix, materializing the identity for diagonal models.
    pub fn basis(&self) -> DMatrix<f64> {
        match &self.eigenvectors {
            Some(u) => u.clone(),
            None => DMatrix::identity(self.n, self.n),
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        self.spectral_function(|t| t)
    }

    /// Σ^{1/2}, cached.
    pub fn sqrt_matrix(&self) -> &DMatrix<f64> {
        self.sqrt.get_or_init(|| self.spectral_function(f64::sqrt))
    }

    fn spectral_function(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        match &self.eigenvectors {
            None => DMatrix::from_diagonal(&DVector::from_iterator(
                self.n,
                self.eigenvalues.iter().map(|&t| f(t)),
            )),
            Some(u) => {
                let mut scaled = u.clone();
                for (j, mut col) in scaled.column_iter_mut().enumerate() {
                    col *= f(self.eigenvalues[j]);
                }
                let mut m = &scaled * u.transpose();
                symmetrize(&mut m);
                m
            }
        }
    }

    /// Multiply `x` on the left by Σ^{1/2}.
    pub fn apply_sqrt(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if self.is_identity() {
            return x.clone();
        }
        match &self.eigenvectors {
            None => {
                let mut y = x.clone();
                for (i, mut row) in y.row_iter_mut().enumerate() {
                    row *= self.eigenvalues[i].sqrt();
                }
                y
            }
            Some(_) => self.sqrt_matrix() * x,
        }
    }

    /// Spiked directions (columns) when the model is spiked.
    pub fn spike_directions(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            PopulationKind::Spiked { v, .. } => v.as_ref(),
            _ => None,
        }
    }
}

/// Build Σ_n from a descriptor.
pub fn build_population(n: usize, kind: PopulationKind, c_target: f64) -> Result<PopulationModel> {
    if n == 0 {
        return Err(Error::param("dimension n must be at least 1"));
    }
    if !(c_target > 0.0 && c_target.is_finite()) {
        return Err(Error::param(format!("aspect ratio must be positive, got {c_target}")));
    }
    let (eigenvalues, eigenvectors, kind) = match kind {
        PopulationKind::Identity => (vec![1.0; n], None, PopulationKind::Identity),
        PopulationKind::Ar1 { rho } => {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(Error::param(format!("ar1 coefficient must lie in (0,1), got {rho}")));
            }
            let m = DMatrix::from_fn(n, n, |i, j| rho.powi(i.abs_diff(j) as i32));
            let (vals, vecs) = sorted_eigen(m);
            (vals, Some(vecs), PopulationKind::Ar1 { rho })
        }
        PopulationKind::DiagRamp { offset, power } => {
            let vals: Vec<f64> =
                (1..=n).map(|i| (i as f64 / n as f64).powf(power) + offset).collect();
            if vals.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
                return Err(Error::param("diagonal ramp must have positive finite entries"));
            }
            (vals, None, PopulationKind::DiagRamp { offset, power })
        }
        PopulationKind::Spiked { d, v } => {
            let v = v.unwrap_or_else(|| axis_directions(n, d.len()));
            return spiked_from_directions(n, d, v, c_target);
        }
        PopulationKind::Custom { eigenvalues, eigenvectors } => {
            if eigenvalues.len() != n {
                return Err(Error::Dimension(format!(
                    "{} eigenvalues for dimension {n}",
                    eigenvalues.len()
                )));
            }
            if eigenvalues.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
                return Err(Error::param("custom eigenvalues must be nonnegative and finite"));
            }
            if let Some(u) = &eigenvectors {
                check_orthonormal(u, n, n)?;
            }
            (eigenvalues.clone(), eigenvectors.clone(), PopulationKind::Custom { eigenvalues, eigenvectors })
        }
    };
    Ok(PopulationModel { n, kind, c_target, eigenvalues, eigenvectors, sqrt: OnceLock::new() })
}

fn axis_directions(n: usize, r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, r, |i, j| if i == j { 1.0 } else { 0.0 })
}

fn spiked_from_directions(
    n: usize,
    d: Vec<f64>,
    v: DMatrix<f64>,
    c_target: f64,
) -> Result<PopulationModel> {
    let r = d.len();
    if r > n {
        return Err(Error::param(format!("{r} spikes exceed dimension {n}")));
    }
    if d.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::param("spikes d_i must be positive and finite"));
    }
    check_orthonormal(&v, n, r)?;
    let axis = (0..r).all(|j| {
        (0..n).all(|i| v[(i, j)] == if i == j { 1.0 } else { 0.0 })
    });
    let (eigenvalues, eigenvectors) = if axis {
        let mut vals = vec![1.0; n];
        for (i, di) in d.iter().enumerate() {
            vals[i] += di;
        }
        (vals, None)
    } else {
        // Complete v to an orthonormal basis; the complement carries eigenvalue 1.
        let basis = complete_basis(&v);
        let mut vals = vec![1.0; n];
        for (i, di) in d.iter().enumerate() {
            vals[i] += di;
        }
        (vals, Some(basis))
    };
    Ok(PopulationModel {
        n,
        kind: PopulationKind::Spiked { d, v: Some(v) },
        c_target,
        eigenvalues,
        eigenvectors,
        sqrt: OnceLock::new(),
    })
}

/// Orthonormal basis whose leading columns are `v` (assumed orthonormal).
fn complete_basis(v: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, r) = v.shape();
    let mut cols: Vec<DVector<f64>> = v.column_iter().map(|c| c.into_owned()).collect();
    for k in 0..n {
        if cols.len() == n {
            break;
        }
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        // two passes of Gram-Schmidt for stability
        for _ in 0..2 {
            for c in &cols {
                let p = c.dot(&e);
                e.axpy(-p, c, 1.0);
            }
        }
        let norm = e.norm();
        if norm > 1e-6 {
            cols.push(e / norm);
        }
    }
    debug_assert!(cols.len() == n && r <= n);
    DMatrix::from_columns(&cols)
}

fn check_orthonormal(u: &DMatrix<f64>, n: usize, k: usize) -> Result<()> {
    if u.nrows() != n || u.ncols() != k {
        return Err(Error::Dimension(format!(
            "direction matrix is {}x{}, expected {n}x{k}",
            u.nrows(),
            u.ncols()
        )));
    }
    let gram = u.transpose() * u;
    let dev = (&gram - DMatrix::<f64>::identity(k, k)).amax();
    if dev > ORTHO_TOL {
        return Err(Error::Validation(format!(
            "vectors are not orthonormal (max deviation {dev:e})"
        )));
    }
    Ok(())
}

/// Spiked alternative with the plane (e_1, e_{r+1}) rotated by `phi`.
///
/// Under `phi = 0` this is `diag(1+d_1, …, 1+d_r, 1, …, 1)`.
pub fn spiked_alternative(n: usize, r: usize, d: &[f64], phi: f64, c_target: f64) -> Result<PopulationModel> {
    if r == 0 || d.len() != r {
        return Err(Error::param(format!("need r >= 1 spikes, got r={r} with {} values", d.len())));
    }
    if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&phi) {
        return Err(Error::param(format!("angle {phi} outside [0, pi/2]")));
    }
    if n < r + 1 {
        return Err(Error::param("dimension must exceed the number of spikes"));
    }
    if phi == 0.0 {
        return build_population(n, PopulationKind::Spiked { d: d.to_vec(), v: None }, c_target);
    }
    let (s, c) = phi.sin_cos();
    let mut v = axis_directions(n, r);
    v[(0, 0)] = c;
    v[(r, 0)] = s;
    let mut basis = DMatrix::identity(n, n);
    basis[(0, 0)] = c;
    basis[(r, 0)] = s;
    basis[(0, r)] = -s;
    basis[(r, r)] = c;
    let mut eigenvalues = vec![1.0; n];
    for (i, di) in d.iter().enumerate() {
        eigenvalues[i] += di;
    }
    Ok(PopulationModel {
        n,
        kind: PopulationKind::Spiked { d: d.to_vec(), v: Some(v) },
        c_target,
        eigenvalues,
        eigenvectors: Some(basis),
        sqrt: OnceLock::new(),
    })
}

/// Representation of B_n.
#[derive(Debug, Clone)]
pub enum AncillaryRepr {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
    /// `Σ s_i b_i b_iᵀ` with unit columns `b_i`.
    LowRank { weights: Vec<f64>, vectors: DMatrix<f64> },
}

#[derive(Debug, Clone)]
pub struct AncillaryMatrix {
    pub n: usize,
    pub repr: AncillaryRepr,
    pub rank: usize,
}

/// Descriptor for B_n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AncillaryKind {
    Identity,
    /// `diag(i/n + offset)`.
    DiagRamp { offset: f64 },
    /// First `rank` diagonal entries equal to `i * scale`, the rest zero.
    DiagHead { rank: usize, scale: f64 },
    /// Same matrix as the population covariance.
    Population,
    /// Seeded GOE-type Wigner matrix with semicircle support [-2, 2].
    Wigner { seed: u64 },
    /// Sum of `b bᵀ` over the eigenvectors of the `rank` largest eigenvalues of a seeded Wigner matrix.
    WignerEigvecs { rank: usize, seed: u64 },
}

impl AncillaryMatrix {
    pub fn identity(n: usize) -> Self {
        AncillaryMatrix { n, repr: AncillaryRepr::Diagonal(vec![1.0; n]), rank: n }
    }

    pub fn diagonal(diag: Vec<f64>) -> Self {
        let rank = diag.iter().filter(|&&x| x != 0.0).count();
        AncillaryMatrix { n: diag.len(), repr: AncillaryRepr::Diagonal(diag), rank }
    }

    pub fn dense(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension("ancillary matrix must be square".into()));
        }
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * (1.0 + m.amax()) {
            return Err(Error::Validation(format!("matrix is not symmetric (deviation {asym:e})")));
        }
        let n = m.nrows();
        let vals = m.clone().symmetric_eigenvalues();
        let top = vals.amax();
        let rank = vals.iter().filter(|&&x| x.abs() > 1e-10 * top.max(1e-300)).count();
        Ok(AncillaryMatrix { n, repr: AncillaryRepr::Dense(m), rank })
    }

    pub fn low_rank(weights: Vec<f64>, vectors: DMatrix<f64>) -> Result<Self> {
        if weights.len() != vectors.ncols() {
            return Err(Error::Dimension(format!(
                "{} weights for {} vectors",
                weights.len(),
                vectors.ncols()
            )));
        }
        for (j, col) in vectors.column_iter().enumerate() {
            if (col.norm() - 1.0).abs() > 1e-10 {
                return Err(Error::Validation(format!("vector {j} is not unit norm")));
            }
        }
        let rank = weights.iter().filter(|&&s| s != 0.0).count();
        Ok(AncillaryMatrix { n: vectors.nrows(), repr: AncillaryRepr::LowRank { weights, vectors }, rank })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            AncillaryRepr::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            AncillaryRepr::Dense(m) => m.clone(),
            AncillaryRepr::LowRank { weights, vectors } => {
                let mut scaled = vectors.clone();
                for (j, mut col) in scaled.column_iter_mut().enumerate() {
                    col *= weights[j];
                }
                let mut m = &scaled * vectors.transpose();
                symmetrize(&mut m);
                m
            }
        }
    }

    pub fn trace(&self) -> f64 {
        match &self.repr {
            AncillaryRepr::Diagonal(d) => d.iter().sum(),
            AncillaryRepr::Dense(m) => m.trace(),
            AncillaryRepr::LowRank { weights, .. } => weights.iter().sum(),
        }
    }

    pub fn scaled(&self, alpha: f64) -> AncillaryMatrix {
        let repr = match &self.repr {
            AncillaryRepr::Diagonal(d) => AncillaryRepr::Diagonal(d.iter().map(|x| alpha * x).collect()),
            AncillaryRepr::Dense(m) => AncillaryRepr::Dense(m * alpha),
            AncillaryRepr::LowRank { weights, vectors } => AncillaryRepr::LowRank {
                weights: weights.iter().map(|x| alpha * x).collect(),
                vectors: vectors.clone(),
            },
        };
        AncillaryMatrix { n: self.n, repr, rank: if alpha == 0.0 { 0 } else { self.rank } }
    }
}

pub fn build_ancillary(n: usize, kind: &AncillaryKind, population: Option<&PopulationModel>) -> Result<AncillaryMatrix> {
    if n == 0 {
        return Err(Error::param("dimension n must be at least 1"));
    }
    match kind {
        AncillaryKind::Identity => Ok(AncillaryMatrix::identity(n)),
        AncillaryKind::DiagRamp { offset } => Ok(AncillaryMatrix::diagonal(
            (1..=n).map(|i| i as f64 / n as f64 + offset).collect(),
        )),
        AncillaryKind::DiagHead { rank, scale } => {
            if *rank > n {
                return Err(Error::param("rank exceeds dimension"));
            }
            let mut d = vec![0.0; n];
            for (i, x) in d.iter_mut().take(*rank).enumerate() {
                *x = (i + 1) as f64 * scale;
            }
            Ok(AncillaryMatrix::diagonal(d))
        }
        AncillaryKind::Population => {
            let p = population.ok_or_else(|| Error::param("B = Σ needs a population model"))?;
            if p.n != n {
                return Err(Error::Dimension("population dimension differs".into()));
            }
            if p.is_diagonal() {
                Ok(AncillaryMatrix::diagonal(p.eigenvalues().to_vec()))
            } else {
                AncillaryMatrix::dense(p.matrix())
            }
        }
        AncillaryKind::Wigner { seed } => AncillaryMatrix::dense(wigner(n, *seed)),
        AncillaryKind::WignerEigvecs { rank, seed } => {
            if *rank == 0 || *rank > n {
                return Err(Error::param("rank must lie in 1..=n"));
            }
            let (_, vecs) = sorted_eigen(wigner(n, *seed));
            let top = vecs.columns(0, *rank).into_owned();
            AncillaryMatrix::low_rank(vec![1.0; *rank], top)
        }
    }
}

/// Symmetric Wigner matrix: off-diagonal N(0, 1/n), diagonal N(0, 2/n).
pub fn wigner(n: usize, seed: u64) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    let scale = (1.0 / n as f64).sqrt();
    for j in 0..n {
        let mut r = rng::stream(seed, rng::AUX_STREAM_BASE, j as u64);
        for i in 0..=j {
            let x: f64 = StandardNormal.sample(&mut r);
            if i == j {
                w[(i, j)] = x * scale * std::f64::consts::SQRT_2;
            } else {
                w[(i, j)] = x * scale;
                w[(j, i)] = x * scale;
            }
        }
    }
    w
}

/// Entry distribution of the data matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dist {
    Gaussian,
    /// t(10) scaled by `sqrt(4/5)` so the variance is one.
    StudentT10,
}

impl Dist {
    pub fn fourth_moment(self) -> f64 {
        match self {
            Dist::Gaussian => 3.0,
            Dist::StudentT10 => 4.0,
        }
    }

    /// `E|X|^4 - 3` in the real case.
    pub fn mu_x(self) -> f64 {
        self.fourth_moment() - 3.0
    }

    /// `1 + |E X^2|^2`, equal to 2 for real data.
    pub fn upsilon_x(self) -> f64 {
        2.0
    }
}

#[derive(Debug, Clone)]
pub struct DataMatrix {
    pub x: DMatrix<f64>,
    pub dist: Dist,
    pub seed: u64,
}

/// Draw an n × N matrix of standardized entries. Column `j` of replication
/// `rep` always comes from the same stream.
pub fn sample_data(n: usize, big_n: usize, dist: Dist, seed: u64, rep: u64) -> Result<DataMatrix> {
    if n == 0 || big_n == 0 {
        return Err(Error::param("data dimensions must be positive"));
    }
    let mut x = DMatrix::zeros(n, big_n);
    let t10 = StudentT::new(10.0).expect("valid degrees of freedom");
    let t_scale = (4.0f64 / 5.0).sqrt();
    for (j, mut col) in x.column_iter_mut().enumerate() {
        let mut r = rng::stream(seed, rep, j as u64);
        match dist {
            Dist::Gaussian => col.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut r)),
            Dist::StudentT10 => col.iter_mut().for_each(|v| *v = t10.sample(&mut r) * t_scale),
        }
    }
    Ok(DataMatrix { x, dist, seed })
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Sample covariance `(1/N) Σ^{1/2} X Xᵀ Σ^{1/2}` with lazily cached spectra.
#[derive(Debug)]
pub struct CovMatrix {
    pub matrix: DMatrix<f64>,
    pub n: usize,
    pub big_n: usize,
    eigen: OnceLock<SortedEigen>,
    values: OnceLock<Vec<f64>>,
}

impl Clone for CovMatrix {
    fn clone(&self) -> Self {
        let c = CovMatrix::from_matrix(self.matrix.clone(), self.big_n);
        if let Some(e) = self.eigen.get() {
            let _ = c.eigen.set(e.clone());
        }
        if let Some(v) = self.values.get() {
            let _ = c.values.set(v.clone());
        }
        c
    }
}

impl CovMatrix {
    /// Wrap an already formed symmetric matrix, `big_n` being the sample size.
    pub fn from_matrix(mut matrix: DMatrix<f64>, big_n: usize) -> Self {
        symmetrize(&mut matrix);
        let n = matrix.nrows();
        CovMatrix { matrix, n, big_n, eigen: OnceLock::new(), values: OnceLock::new() }
    }

    /// Aspect ratio n/N.
    pub fn ratio(&self) -> f64 {
        self.n as f64 / self.big_n as f64
    }

    pub fn eigen(&self) -> &SortedEigen {
        self.eigen.get_or_init(|| {
            let (values, vectors) = sorted_eigen(self.matrix.clone());
            SortedEigen { values, vectors }
        })
    }

    /// Eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        if let Some(e) = self.eigen.get() {
            return &e.values;
        }
        self.values.get_or_init(|| {
            let mut v: Vec<f64> = self.matrix.clone().symmetric_eigenvalues().iter().copied().collect();
            v.sort_by(|a, b| b.total_cmp(a));
            v
        })
    }
}

pub fn sample_covariance(x: &DataMatrix, model: &PopulationModel) -> Result<CovMatrix> {
    if x.x.nrows() != model.n {
        return Err(Error::Dimension(format!(
            "data has {} rows, population dimension is {}",
            x.x.nrows(),
            model.n
        )));
    }
    let big_n = x.x.ncols();
    let y = model.apply_sqrt(&x.x);
    let s = (&y * y.transpose()) / big_n as f64;
    Ok(CovMatrix::from_matrix(s, big_n))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// Eigenpairs sorted by descending eigenvalue.
pub fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let SymmetricEigen { eigenvalues, eigenvectors } = m.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
    let values = idx.iter().map(|&i| eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eigenvectors[(r, idx[c])]);
    (values, vectors)
}

/// Read a dense matrix stored row-major as CSV. A non-numeric first row is treated as a header.
pub fn read_dense_csv(path: &Path) -> Result<DMatrix<f64>> {
    let rows = read_rows(path)?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension(format!("{} is not a square matrix", path.display())));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Read a rectangular matrix stored row-major as CSV.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let rows = read_rows(path)?;
    let cols = rows.first().map_or(0, Vec::len);
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Dimension(format!("{} is empty or ragged", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Read a low-rank ancillary matrix: each row is `weight, v_1, …, v_n`.
pub fn read_lowrank_csv(path: &Path) -> Result<AncillaryMatrix> {
    let rows = read_rows(path)?;
    let Some(first) = rows.first() else {
        return Err(Error::Validation(format!("{} holds no rows", path.display())));
    };
    let n = first.len() - 1;
    if n == 0 || rows.iter().any(|r| r.len() != n + 1) {
        return Err(Error::Dimension(format!("ragged rows in {}", path.display())));
    }
    let weights = rows.iter().map(|r| r[0]).collect();
    let vectors = DMatrix::from_fn(n, rows.len(), |i, j| rows[j][i + 1]);
    AncillaryMatrix::low_rank(weights, vectors)
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let io = |e: csv::Error| Error::Io { path: path.display().to_string(), message: e.to_string() };
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path).map_err(io)?;
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(io)?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if k == 0 => continue,
            Err(e) => {
                return Err(Error::Validation(format!("{} row {k}: {e}", path.display())));
            }
        }
    }
    Ok(rows)
}
