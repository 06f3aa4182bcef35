//! Monte Carlo harness: the eight CLT models, the projection-test scenarios
//! and single-shot evaluations, all driven by [`ExperimentConfig`].
//!
//! Replication `k` always draws its data from stream `k` of the configured seed
//! and results are folded in replication order, so nothing depends on the
//! number of worker threads.

mod config;
mod output;

pub use config::{CustomModel, ExperimentConfig, ExperimentKind, FourthMoment, ProviderChoice, ScenarioId};
pub use output::{fmt17, write_fp_reports, write_glss_reports, write_model_run, write_scenario_run, write_stieltjes_rows};

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::clt::{glss, glss_polynomial, CltModel, CltMoments, GlssReport, Mode, TestFunction};
use crate::error::{Error, Result};
use crate::fptest::{estimate_fourth_moment, fp_test_many, FpTestReport, HypothesisSpec, Projection};
use crate::models::{
    build_ancillary, build_population, read_matrix_csv, sample_covariance, sample_data, spiked_alternative,
    AncillaryKind, AncillaryMatrix, CovMatrix, DataMatrix, Dist, PopulationKind, PopulationModel,
};
use crate::stats::{binomial_se, histogram, ks_normal, moments, qq_pairs, Bin};
use crate::stieltjes::{mp_fixed_point, mp_inverse_map, AveragedProvider, MbarProvider, Spectrum, TheoryProvider};
use crate::C64;

/// Population, ancillary matrix, entry law and regime of Table-1 model `k`.
pub fn model_spec(k: u8, wigner_seed: u64) -> Result<CustomModel> {
    let ar1 = PopulationKind::Ar1 { rho: 0.5 };
    let ramp = AncillaryKind::DiagRamp { offset: 1.0 };
    let (population, ancillary, dist) = match k {
        1 => (PopulationKind::Identity, ramp, Dist::Gaussian),
        2 => (PopulationKind::Identity, ramp, Dist::StudentT10),
        3 => (ar1, AncillaryKind::Population, Dist::Gaussian),
        4 => (
            PopulationKind::DiagRamp { offset: 0.2, power: 2.0 },
            AncillaryKind::DiagRamp { offset: 0.2 },
            Dist::StudentT10,
        ),
        5 => (ar1, AncillaryKind::Wigner { seed: wigner_seed }, Dist::Gaussian),
        6 => (ar1, AncillaryKind::Wigner { seed: wigner_seed }, Dist::StudentT10),
        7 => (PopulationKind::Identity, AncillaryKind::DiagHead { rank: 5, scale: 0.5 }, Dist::Gaussian),
        8 => (ar1, AncillaryKind::WignerEigvecs { rank: 10, seed: wigner_seed }, Dist::StudentT10),
        _ => return Err(Error::Config(format!("model must be 1..=8, got {k}"))),
    };
    let mode = if k <= 6 { Mode::ComparableRank } else { Mode::LowRank };
    Ok(CustomModel { population, ancillary, dist, mode: Some(mode) })
}

/// The CLT model an experiment refers to.
pub fn clt_spec(cfg: &ExperimentConfig) -> Result<CustomModel> {
    match cfg.experiment {
        ExperimentKind::Model => model_spec(cfg.model.unwrap_or(0), cfg.wigner_seed),
        ExperimentKind::Custom => cfg.custom.clone().ok_or_else(|| Error::Config("missing [custom] table".into())),
        ExperimentKind::Scenario => Err(Error::Config("scenarios have no CLT model".into())),
    }
}

fn in_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

/// A replication that raised an error instead of producing a record.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub point: String,
    pub rep: u64,
    pub message: String,
}

/// Error out when more than `budget · total` replications failed.
pub fn check_budget(failed: usize, total: usize, budget: f64) -> Result<()> {
    if failed as f64 > budget * total as f64 {
        return Err(Error::Budget { failed, total });
    }
    Ok(())
}

/// Summary of the standardized records of one test function.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub f: TestFunction,
    pub mean_hat: f64,
    pub var_hat: f64,
    pub ks_stat: f64,
    pub ks_p: f64,
    pub histogram: Vec<Bin>,
    pub qq: Vec<(f64, f64)>,
    pub records: Vec<f64>,
}

impl EmpiricalMoments {
    pub fn from_records(f: TestFunction, records: Vec<f64>, bins: usize, range: [f64; 2]) -> Result<Self> {
        let m = moments(&records)?;
        let (ks_stat, ks_p) = ks_normal(&records)?;
        Ok(EmpiricalMoments {
            f,
            mean_hat: m.mean,
            var_hat: m.var,
            ks_stat,
            ks_p,
            histogram: histogram(&records, bins, range[0], range[1])?,
            qq: qq_pairs(&records),
            records,
        })
    }
}

/// Deterministic side of a CLT experiment.
pub struct CltSetup {
    pub sigma: PopulationModel,
    pub b: AncillaryMatrix,
    pub dist: Dist,
    pub model: CltModel,
    pub moments: CltMoments,
}

pub fn clt_setup(spec: &CustomModel, cfg: &ExperimentConfig) -> Result<CltSetup> {
    let c = cfg.n as f64 / cfg.big_n as f64;
    let sigma = build_population(cfg.n, spec.population.clone(), c)?;
    let b = build_ancillary(cfg.n, &spec.ancillary, Some(&sigma))?;
    let provider: Box<dyn MbarProvider> = match cfg.provider {
        ProviderChoice::Theory => Box::new(TheoryProvider::for_population(&sigma, cfg.big_n)),
        ProviderChoice::Averaged { samples } => {
            Box::new(AveragedProvider::simulate(&sigma, cfg.big_n, spec.dist, samples, cfg.seed)?)
        }
    };
    let model = CltModel::for_population(
        &sigma,
        &b,
        cfg.big_n,
        provider.as_ref(),
        spec.dist.upsilon_x(),
        spec.dist.mu_x(),
        spec.mode,
    )?;
    let moments = model.moments(&cfg.functions)?;
    for k in 0..cfg.functions.len() {
        let v = moments.covariance[(k, k)];
        if !(v > 0.0) {
            return Err(Error::Variance(v));
        }
    }
    Ok(CltSetup { sigma, b, dist: spec.dist, model, moments })
}

/// `tr f(S) B`, by matrix powers for polynomials.
pub fn raw_glss(s: &CovMatrix, b: &AncillaryMatrix, f: &TestFunction) -> Result<f64> {
    match f.coefficients() {
        Some(c) => glss_polynomial(&s.matrix, b, c),
        None => glss(s, b, f),
    }
}

#[derive(Debug, Clone)]
pub struct ModelRun {
    pub label: String,
    pub mode: Mode,
    pub centering: Vec<f64>,
    pub omega: Vec<f64>,
    pub variance: Vec<f64>,
    pub moments: Vec<EmpiricalMoments>,
    pub failures: Vec<Failure>,
    pub total: usize,
}

/// Monte Carlo run of Table-1 model `k`.
pub fn run_model(k: u8, cfg: &ExperimentConfig) -> Result<ModelRun> {
    let spec = model_spec(k, cfg.wigner_seed)?;
    run_clt(&format!("model_{k}"), &spec, cfg)
}

/// `M` standardized records `(Θ_n(f) - ω_n(f)) / √Ω_n(f)` for every configured `f`.
pub fn run_clt(label: &str, spec: &CustomModel, cfg: &ExperimentConfig) -> Result<ModelRun> {
    cfg.validate()?;
    let setup = clt_setup(spec, cfg)?;
    let fs = &cfg.functions;
    let outcomes: Vec<Result<Vec<f64>>> = in_pool(cfg.threads, || {
        (0..cfg.reps as u64)
            .into_par_iter()
            .map(|rep| {
                let x = sample_data(cfg.n, cfg.big_n, setup.dist, cfg.seed, rep)?;
                let s = sample_covariance(&x, &setup.sigma)?;
                fs.iter().map(|f| raw_glss(&s, &setup.b, f)).collect()
            })
            .collect()
    })?;
    let mom = &setup.moments;
    let variance: Vec<f64> = (0..fs.len()).map(|k| mom.covariance[(k, k)]).collect();
    let mut records = vec![Vec::with_capacity(cfg.reps); fs.len()];
    let mut failures = Vec::new();
    for (rep, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(raw) => {
                for (k, g) in raw.into_iter().enumerate() {
                    let theta = g - mom.centering[k];
                    records[k].push((theta - mom.omega[k]) / variance[k].sqrt());
                }
            }
            Err(e) => failures.push(Failure { point: label.to_string(), rep: rep as u64, message: e.to_string() }),
        }
    }
    if failures.len() == cfg.reps {
        return Err(Error::Budget { failed: failures.len(), total: cfg.reps });
    }
    let moments = fs
        .iter()
        .zip(records)
        .map(|(f, r)| EmpiricalMoments::from_records(f.clone(), r, cfg.hist_bins, cfg.hist_range))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelRun {
        label: label.to_string(),
        mode: setup.model.mode,
        centering: mom.centering.clone(),
        omega: mom.omega.clone(),
        variance,
        moments,
        failures,
        total: cfg.reps,
    })
}

/// One `(law, rank, angle)` cell of a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub dist: Dist,
    pub r_n: usize,
    /// Rotation angle as a fraction of π/2.
    pub phi: f64,
}

impl GridPoint {
    fn label(&self) -> String {
        format!("{}:r={}:phi={}", dist_name(self.dist), self.r_n, self.phi)
    }
}

pub fn dist_name(d: Dist) -> &'static str {
    match d {
        Dist::Gaussian => "gaussian",
        Dist::StudentT10 => "student_t10",
    }
}

/// Spike sizes under scenario `id` at rank `r`.
pub fn scenario_spikes(id: ScenarioId, cfg: &ExperimentConfig, r: usize) -> Vec<f64> {
    match id {
        ScenarioId::I => cfg.spikes.clone(),
        ScenarioId::II | ScenarioId::III => (0..r).map(|i| if i == 0 { 9.0 } else { 4.0 }).collect(),
    }
}

pub fn scenario_grid(id: ScenarioId, cfg: &ExperimentConfig) -> Vec<GridPoint> {
    let ranks = match id {
        ScenarioId::I => vec![cfg.spikes.len()],
        _ => cfg.rank_grid.clone(),
    };
    let mut out = Vec::new();
    for &dist in &cfg.dists {
        for &r_n in &ranks {
            for &phi in &cfg.phi_grid {
                out.push(GridPoint { dist, r_n, phi });
            }
        }
    }
    out
}

/// Rejection frequency of one test function at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerRow {
    pub point: GridPoint,
    /// Plotting abscissa: the rank in Scenario III, the angle fraction otherwise.
    pub grid: f64,
    pub f: TestFunction,
    pub reps: usize,
    pub rejections: usize,
    pub power: f64,
    pub mc_se: f64,
    pub mean_z: f64,
    pub var_z: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub label: String,
    pub rows: Vec<PowerRow>,
    pub failures: Vec<Failure>,
    pub total: usize,
}

/// Null and alternative data for the projection test on every grid point.
pub fn run_scenario(id: ScenarioId, cfg: &ExperimentConfig) -> Result<ScenarioRun> {
    cfg.validate()?;
    let c = cfg.n as f64 / cfg.big_n as f64;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut total = 0;
    for point in scenario_grid(id, cfg) {
        let d = scenario_spikes(id, cfg, point.r_n);
        let pop = spiked_alternative(cfg.n, point.r_n, &d, point.phi * FRAC_PI_2, c)?;
        let mut spec =
            HypothesisSpec::new(Projection::axis(cfg.n, point.r_n)?, cfg.alpha, cfg.functions[0].clone(), cfg.delta)?;
        spec.sided = cfg.sided;
        let reps = if point.phi == 0.0 { cfg.reps } else { cfg.power_reps() };
        total += reps;
        let outcomes: Vec<Result<Vec<FpTestReport>>> = in_pool(cfg.threads, || {
            (0..reps as u64)
                .into_par_iter()
                .map(|rep| {
                    let x = sample_data(cfg.n, cfg.big_n, point.dist, cfg.seed, rep)?;
                    let s = sample_covariance(&x, &pop)?;
                    fp_test_many(&s, &spec, &cfg.functions, fourth_moment(cfg, &x))
                })
                .collect()
        })?;
        let mut z = vec![Vec::with_capacity(reps); cfg.functions.len()];
        let mut rejections = vec![0usize; cfg.functions.len()];
        for (rep, out) in outcomes.into_iter().enumerate() {
            match out {
                Ok(reports) => {
                    for (k, r) in reports.iter().enumerate() {
                        z[k].push(r.z_score);
                        rejections[k] += r.reject as usize;
                    }
                }
                Err(e) => failures.push(Failure { point: point.label(), rep: rep as u64, message: e.to_string() }),
            }
        }
        for (k, f) in cfg.functions.iter().enumerate() {
            let done = z[k].len();
            let power = if done == 0 { f64::NAN } else { rejections[k] as f64 / done as f64 };
            let zm = moments(&z[k]).ok();
            rows.push(PowerRow {
                point,
                grid: if id == ScenarioId::III { point.r_n as f64 } else { point.phi },
                f: f.clone(),
                reps: done,
                rejections: rejections[k],
                power,
                mc_se: binomial_se(power, done),
                mean_z: zm.map_or(f64::NAN, |m| m.mean),
                var_z: zm.map_or(f64::NAN, |m| m.var),
            });
        }
    }
    Ok(ScenarioRun { label: format!("scenario_{id}"), rows, failures, total })
}

fn fourth_moment(cfg: &ExperimentConfig, x: &DataMatrix) -> f64 {
    match cfg.fourth_moment {
        FourthMoment::Declared => x.dist.fourth_moment(),
        FourthMoment::Plugin => estimate_fourth_moment(x),
    }
}

/// Data for single-shot commands: the configured CSV, or replication 0.
fn single_data(cfg: &ExperimentConfig, dist: Dist) -> Result<Option<DataMatrix>> {
    let Some(path) = &cfg.data_file else {
        return Ok(None);
    };
    let x = read_matrix_csv(path)?;
    Ok(Some(DataMatrix { x, dist, seed: cfg.seed }))
}

/// GLSS reports for one sample covariance of the configured model.
pub fn glss_single(cfg: &ExperimentConfig) -> Result<Vec<GlssReport>> {
    cfg.validate()?;
    let spec = clt_spec(cfg)?;
    let mut cfg = cfg.clone();
    let x = match single_data(&cfg, spec.dist)? {
        Some(x) => {
            (cfg.n, cfg.big_n) = (x.x.nrows(), x.x.ncols());
            x
        }
        None => sample_data(cfg.n, cfg.big_n, spec.dist, cfg.seed, 0)?,
    };
    let setup = clt_setup(&spec, &cfg)?;
    let s = sample_covariance(&x, &setup.sigma)?;
    cfg.functions.iter().map(|f| setup.model.report(&s, &setup.b, f)).collect()
}

/// `m`, `m̲` and the inverse-map residual at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StieltjesRow {
    pub z: C64,
    pub m: C64,
    pub m_under: C64,
    pub inverse_residual: f64,
}

/// Fixed-point solutions for the configured population at `cfg.points`.
pub fn stieltjes_table(cfg: &ExperimentConfig) -> Result<Vec<StieltjesRow>> {
    cfg.validate()?;
    let spec = clt_spec(cfg)?;
    let c = cfg.n as f64 / cfg.big_n as f64;
    let sigma = build_population(cfg.n, spec.population, c)?;
    let h = Spectrum::from_eigenvalues(sigma.eigenvalues());
    let points: Vec<C64> = if cfg.points.is_empty() {
        vec![C64::new(1.0, 1.0), C64::new(-0.5, 0.5)]
    } else {
        cfg.points.iter().map(|p| C64::new(p[0], p[1])).collect()
    };
    points
        .into_iter()
        .map(|z| {
            let v = mp_fixed_point(z, c, &h)?;
            let back = mp_inverse_map(v.m_under, c, &h)?;
            Ok(StieltjesRow { z, m: v.m, m_under: v.m_under, inverse_residual: (back - z).norm() })
        })
        .collect()
}

/// One projection test: configured data (or a fresh spiked sample) against `Z0`.
pub fn fp_single(cfg: &ExperimentConfig) -> Result<Vec<FpTestReport>> {
    cfg.validate()?;
    let dist = cfg.dists.first().copied().unwrap_or(Dist::Gaussian);
    let r = cfg.spikes.len();
    let phi = cfg.phi_grid.first().copied().unwrap_or(0.0);
    let (s, x) = match single_data(cfg, dist)? {
        Some(x) => {
            let n = x.x.nrows();
            let id = build_population(n, PopulationKind::Identity, n as f64 / x.x.ncols() as f64)?;
            (sample_covariance(&x, &id)?, x)
        }
        None => {
            let pop = spiked_alternative(cfg.n, r, &cfg.spikes, phi * FRAC_PI_2, cfg.n as f64 / cfg.big_n as f64)?;
            let x = sample_data(cfg.n, cfg.big_n, dist, cfg.seed, 0)?;
            (sample_covariance(&x, &pop)?, x)
        }
    };
    let z0 = match &cfg.z0_file {
        Some(path) => {
            let m = read_matrix_csv(path)?;
            if m.nrows() == m.ncols() && m.nrows() == s.n && !is_orthonormal_basis(&m) {
                Projection::from_matrix(&m)?
            } else {
                Projection::from_basis(m)?
            }
        }
        None => Projection::axis(s.n, r)?,
    };
    let mut spec = HypothesisSpec::new(z0, cfg.alpha, cfg.functions[0].clone(), cfg.delta)?;
    spec.sided = cfg.sided;
    fp_test_many(&s, &spec, &cfg.functions, fourth_moment(cfg, &x))
}

fn is_orthonormal_basis(m: &DMatrix<f64>) -> bool {
    let g = m.transpose() * m;
    (g - DMatrix::identity(m.ncols(), m.ncols())).amax() < 1e-10
}
