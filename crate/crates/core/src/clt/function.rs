use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stieltjes::ContourSpec;
use crate::C64;

/// Analytic test function `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TestFunction {
    /// Coefficients in increasing degree: `a0 + a1 x + a2 x² + …`.
    Polynomial(Vec<f64>),
    Log,
    Exp,
}

impl TestFunction {
    pub fn monomial(k: usize) -> Self {
        let mut c = vec![0.0; k + 1];
        c[k] = 1.0;
        TestFunction::Polynomial(c)
    }

    pub fn constant(a: f64) -> Self {
        TestFunction::Polynomial(vec![a])
    }

    pub fn eval(&self, z: C64) -> C64 {
        match self {
            TestFunction::Polynomial(c) => c.iter().rev().fold(C64::new(0.0, 0.0), |acc, &a| acc * z + a),
            TestFunction::Log => z.ln(),
            TestFunction::Exp => z.exp(),
        }
    }

    pub fn eval_real(&self, x: f64) -> Result<f64> {
        match self {
            TestFunction::Log if x <= 0.0 => Err(Error::domain(C64::new(x, 0.0), "log needs a positive argument")),
            TestFunction::Log => Ok(x.ln()),
            TestFunction::Exp => Ok(x.exp()),
            TestFunction::Polynomial(c) => Ok(c.iter().rev().fold(0.0, |acc, &a| acc * x + a)),
        }
    }

    pub fn coefficients(&self) -> Option<&[f64]> {
        match self {
            TestFunction::Polynomial(c) => Some(c),
            _ => None,
        }
    }

    /// The closed region bounded by `gamma` must avoid the branch cut of log.
    pub fn check_contour(&self, gamma: &ContourSpec) -> Result<()> {
        if matches!(self, TestFunction::Log) && gamma.x_l <= 0.0 {
            return Err(Error::domain(
                C64::new(gamma.x_l, 0.0),
                "log is not analytic inside a contour reaching x <= 0",
            ));
        }
        Ok(())
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Log => write!(f, "log"),
            TestFunction::Exp => write!(f, "exp"),
            TestFunction::Polynomial(c) => {
                let nz: Vec<usize> = (0..c.len()).filter(|&k| c[k] != 0.0).collect();
                match nz.as_slice() {
                    [] => write!(f, "0"),
                    [0] => write!(f, "{}", c[0]),
                    [1] if c[1] == 1.0 => write!(f, "x"),
                    [k] if c[*k] == 1.0 => write!(f, "x^{k}"),
                    _ => {
                        let parts: Vec<String> = c.iter().map(|a| format!("{a}")).collect();
                        write!(f, "poly:{}", parts.join(","))
                    }
                }
            }
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    /// Accepts `log`, `exp`, `1`, `x`, `x^k` (or `z^k`), and `poly:a0,a1,…`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace(' ', "");
        let bad = || Error::Config(format!("unrecognized test function '{s}'"));
        match t.as_str() {
            "log" => return Ok(TestFunction::Log),
            "exp" => return Ok(TestFunction::Exp),
            "x" | "z" => return Ok(TestFunction::monomial(1)),
            _ => {}
        }
        if let Some(rest) = t.strip_prefix("poly:") {
            let c: std::result::Result<Vec<f64>, _> = rest.split(',').map(str::parse).collect();
            let c = c.map_err(|_| bad())?;
            if c.is_empty() {
                return Err(bad());
            }
            return Ok(TestFunction::Polynomial(c));
        }
        if let Some(k) = t.strip_prefix("x^").or_else(|| t.strip_prefix("z^")) {
            let k: usize = k.parse().map_err(|_| bad())?;
            return Ok(TestFunction::monomial(k));
        }
        t.parse::<f64>().map(TestFunction::constant).map_err(|_| bad())
    }
}

impl TryFrom<String> for TestFunction {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TestFunction> for String {
    fn from(f: TestFunction) -> String {
        f.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print_round_trip() {
        for s in ["x^2", "x^3", "x", "log", "exp", "1", "poly:1,0,2"] {
            let f: TestFunction = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        assert_eq!("z^2".parse::<TestFunction>().unwrap(), TestFunction::monomial(2));
        assert!("sin".parse::<TestFunction>().is_err());
    }

    #[test]
    fn horner_matches_powers() {
        let f = TestFunction::Polynomial(vec![1.0, -2.0, 0.5, 3.0]);
        let z = C64::new(0.7, -1.1);
        let want = 1.0 - 2.0 * z + 0.5 * z * z + 3.0 * z * z * z;
        assert!((f.eval(z) - want).norm() < 1e-14);
        assert_eq!(f.eval_real(2.0).unwrap(), 1.0 - 4.0 + 2.0 + 24.0);
    }

    #[test]
    fn log_domain() {
        assert!(TestFunction::Log.eval_real(0.0).is_err());
        let g = ContourSpec::new(-0.5, 5.0, 1.0, 64).unwrap();
        assert!(TestFunction::Log.check_contour(&g).is_err());
        assert!(TestFunction::monomial(2).check_contour(&g).is_ok());
    }
}
