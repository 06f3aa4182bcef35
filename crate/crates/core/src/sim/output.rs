use std::fs;
use std::path::Path;

use crate::clt::GlssReport;
use crate::error::{Error, Result};
use crate::fptest::FpTestReport;

use super::{dist_name, ExperimentConfig, Failure, ModelRun, ScenarioRun, StieltjesRow};

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

struct Table {
    path: std::path::PathBuf,
    w: csv::Writer<fs::File>,
}

impl Table {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self> {
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e))?;
        w.write_record(header).map_err(|e| Error::io(&path, e))?;
        Ok(Table { path, w })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.w.write_record(fields).map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))
}

fn write_failures(failures: &[Failure], dir: &Path) -> Result<()> {
    let mut t = Table::create(dir, "failures.csv", &["point", "rep", "error"])?;
    for f in failures {
        t.row(&[f.point.clone(), f.rep.to_string(), f.message.clone()])?;
    }
    t.finish()
}

/// `summary.csv`, `hist.csv`, `qq.csv`, `failures.csv` and the resolved `config.toml`.
pub fn write_model_run(run: &ModelRun, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    prepare(dir)?;
    write_config(cfg, dir)?;
    let mut s = Table::create(dir, "summary.csv", &["experiment", "n", "N", "M", "seed", "f", "mean_hat", "var_hat", "ks_p"])?;
    let mut h = Table::create(dir, "hist.csv", &["f", "bin_left", "bin_right", "count"])?;
    let mut q = Table::create(dir, "qq.csv", &["f", "theoretical_q", "empirical_q"])?;
    for m in &run.moments {
        let f = m.f.to_string();
        s.row(&[
            run.label.clone(),
            cfg.n.to_string(),
            cfg.big_n.to_string(),
            m.records.len().to_string(),
            cfg.seed.to_string(),
            f.clone(),
            fmt17(m.mean_hat),
            fmt17(m.var_hat),
            fmt17(m.ks_p),
        ])?;
        for b in &m.histogram {
            h.row(&[f.clone(), fmt17(b.left), fmt17(b.right), b.count.to_string()])?;
        }
        for &(t, e) in &m.qq {
            q.row(&[f.clone(), fmt17(t), fmt17(e)])?;
        }
    }
    s.finish()?;
    h.finish()?;
    q.finish()?;
    write_failures(&run.failures, dir)
}

/// `power.csv`, `failures.csv` and the resolved `config.toml`.
pub fn write_scenario_run(run: &ScenarioRun, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    prepare(dir)?;
    write_config(cfg, dir)?;
    let mut p = Table::create(dir, "power.csv", &["dist", "r_n", "phi", "grid", "f", "reps", "power", "mc_se"])?;
    for r in &run.rows {
        p.row(&[
            dist_name(r.point.dist).into(),
            r.point.r_n.to_string(),
            fmt17(r.point.phi),
            fmt17(r.grid),
            r.f.to_string(),
            r.reps.to_string(),
            fmt17(r.power),
            fmt17(r.mc_se),
        ])?;
    }
    p.finish()?;
    write_failures(&run.failures, dir)
}

pub fn write_glss_reports(reports: &[GlssReport], cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    prepare(dir)?;
    write_config(cfg, dir)?;
    let mut t = Table::create(
        dir,
        "glss.csv",
        &["f", "mode", "raw_glss", "centering", "theta", "omega", "variance", "standardized"],
    )?;
    for (f, r) in cfg.functions.iter().zip(reports) {
        t.row(&[
            f.to_string(),
            r.mode.to_string(),
            fmt17(r.raw_glss),
            fmt17(r.centering),
            fmt17(r.theta),
            fmt17(r.omega),
            fmt17(r.variance),
            fmt17(r.standardized),
        ])?;
    }
    t.finish()
}

pub fn write_stieltjes_rows(rows: &[StieltjesRow], cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    prepare(dir)?;
    write_config(cfg, dir)?;
    let mut t = Table::create(
        dir,
        "stieltjes.csv",
        &["z_re", "z_im", "m_re", "m_im", "m_under_re", "m_under_im", "inverse_residual"],
    )?;
    for r in rows {
        t.row(&[
            fmt17(r.z.re),
            fmt17(r.z.im),
            fmt17(r.m.re),
            fmt17(r.m.im),
            fmt17(r.m_under.re),
            fmt17(r.m_under.im),
            fmt17(r.inverse_residual),
        ])?;
    }
    t.finish()
}

pub fn write_fp_reports(reports: &[FpTestReport], cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    prepare(dir)?;
    write_config(cfg, dir)?;
    let mut t = Table::create(
        dir,
        "fp_test.csv",
        &["f", "delta_stat", "mu_hat", "rho_hat", "z_score", "p_value", "reject", "d_hat"],
    )?;
    for (f, r) in cfg.functions.iter().zip(reports) {
        let d: Vec<String> = r.d_hat.iter().map(|v| fmt17(*v)).collect();
        t.row(&[
            f.to_string(),
            fmt17(r.delta_stat),
            fmt17(r.mu_hat),
            fmt17(r.rho_hat),
            fmt17(r.z_score),
            fmt17(r.p_value),
            r.reject.to_string(),
            d.join(" "),
        ])?;
    }
    t.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 12345.678901234567, 0.0] {
            let s = fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(fmt17(1.0), "1.0000000000000000e0");
    }
}
