//! Limits of the two-point family for `Σ = B = I`, written through `m̲` and `m̲'`.

use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Remark2Limits {
    /// `P(z1)`.
    pub p: C64,
    /// `g(z1)`.
    pub g: C64,
    pub u1: C64,
    pub u2: C64,
    pub v1: C64,
    pub v2: C64,
    pub v3: C64,
}

/// Limits at `(z1, z2)` from `m̲(z_i)` and `m̲'(z_i)`. The aspect ratio enters
/// only through `m̲`; `c` is used to validate the input.
pub fn remark2_limits(z1: C64, z2: C64, c: f64, m1: C64, m2: C64, dm1: C64, dm2: C64) -> Result<Remark2Limits> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::param(format!("aspect ratio must be positive, got {c}")));
    }
    let d = m1 - m2;
    if d.norm() < 1e-10 * (1.0 + m1.norm()) {
        return Err(Error::Geometry(format!("m̲ coincides at z1 = {z1}, z2 = {z2}")));
    }
    if dm1.norm() == 0.0 || dm2.norm() == 0.0 {
        return Err(Error::domain(z1, "vanishing derivative"));
    }
    let (d2, d3) = (d * d, d * d * d);
    let n12 = z1 * z2 * z2;
    let nsq = z1 * z1 * z2 * z2;
    let u1 = ((z1 - z2) / d2 - 1.0 / (dm2 * d) + 1.0 / (m2 * m2 * m1)) / n12;
    let u2 = (2.0 * (z1 - z2) / d3 - (1.0 / dm1 + 1.0 / dm2) / d2 + 1.0 / (m1 * m1 * m2 * m2)) / nsq;
    let v1 = (m1 * (z2 - z1) / d2 + m2 / (dm2 * d)) / n12;
    let v2 = ((z2 - z1) * (m1 + m2) / d3 + (m1 / dm1 + m2 / dm2) / d2) / nsq;
    let v3 = (2.0 * (z1 - z2) * m1 * m2 / d3 - (m1 * m1 / dm1 + m2 * m2 / dm2) / d2) / nsq;
    Ok(Remark2Limits {
        p: (m1 + z1 * dm1) / dm1,
        g: (m1 + z1 * dm1) / (z1 * z1 * m1 * m1),
        u1,
        u2,
        v1,
        v2,
        v3,
    })
}
