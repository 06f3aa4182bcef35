//! Rectangular contours and composite Gauss–Legendre quadrature.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::C64;

/// Nodes per Gauss–Legendre panel.
pub const PANEL_ORDER: usize = 16;
pub const MIN_TOTAL_NODES: usize = 64;
pub const DEFAULT_POINTS_PER_EDGE: usize = 128;
const ADAPTIVE_CAP: usize = 8192;

/// Closed rectangle `[x_l, x_r] × [-v_0, v_0]`, traversed counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourSpec {
    pub x_l: f64,
    pub x_r: f64,
    pub v0: f64,
    pub points_per_edge: usize,
}

/// A quadrature node: position and complex weight (the `dz` element).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub z: C64,
    pub w: C64,
}

/// Integral value plus the adaptive-convergence flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: C64,
    pub converged: bool,
    pub points_per_edge: usize,
}

fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = PANEL_ORDER;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, t);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
                let dt = p1 / dp;
                t -= dt;
                if dt.abs() < 1e-16 {
                    break;
                }
            }
            x[i] = t;
            w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
        }
        (x, w)
    })
}

impl ContourSpec {
    pub fn new(x_l: f64, x_r: f64, v0: f64, points_per_edge: usize) -> Result<Self> {
        if !(v0 > 0.0) {
            return Err(Error::param(format!("contour height must be positive, got {v0}")));
        }
        if !(x_l < x_r) {
            return Err(Error::param(format!("need x_l < x_r, got {x_l} >= {x_r}")));
        }
        if 4 * points_per_edge < MIN_TOTAL_NODES {
            return Err(Error::param(format!("at least {MIN_TOTAL_NODES} nodes required")));
        }
        Ok(ContourSpec { x_l, x_r, v0, points_per_edge })
    }

    pub fn with_points(self, points_per_edge: usize) -> Self {
        ContourSpec { points_per_edge, ..self }
    }

    /// Outer companion contour: height doubled, both sides pushed out by `margin`.
    pub fn nested(&self, margin: f64) -> Self {
        ContourSpec { x_l: self.x_l - margin, x_r: self.x_r + margin, v0: 2.0 * self.v0, ..*self }
    }

    /// Corner list, closed: the last vertex repeats the first.
    pub fn vertices(&self) -> [C64; 5] {
        let (l, r, v) = (self.x_l, self.x_r, self.v0);
        [C64::new(l, -v), C64::new(r, -v), C64::new(r, v), C64::new(l, v), C64::new(l, -v)]
    }

    pub fn panels_per_edge(&self) -> usize {
        self.points_per_edge.div_ceil(PANEL_ORDER).max(1)
    }

    /// Whether the left edge is graded geometrically toward the real axis.
    /// This happens when it crosses the axis at `0 < x_l < v0`, i.e. close to
    /// both the origin and a positive lower support edge at `2 x_l`.
    pub fn graded_left(&self) -> bool {
        self.x_l > 0.0 && self.x_l < self.v0
    }

    /// Quadrature nodes in a fixed order (bottom, right, top, left edges).
    pub fn nodes(&self) -> Vec<Node> {
        let (gx, gw) = gauss_legendre();
        let panels = self.panels_per_edge();
        let verts = self.vertices();
        let mut out = Vec::with_capacity(4 * panels * PANEL_ORDER);
        let mut push_panel = |a: C64, b: C64| {
            let (mid, half) = ((a + b) * 0.5, (b - a) * 0.5);
            for (x, w) in gx.iter().zip(gw) {
                out.push(Node { z: mid + half * *x, w: half * *w });
            }
        };
        for e in 0..3 {
            let (a, b) = (verts[e], verts[e + 1]);
            let step = (b - a) / panels as f64;
            for p in 0..panels {
                push_panel(a + step * p as f64, a + step * (p + 1) as f64);
            }
        }
        let (l, v) = (self.x_l, self.v0);
        if self.graded_left() {
            // heights v0 > ... > 4x_l > 2x_l > x_l > 0, mirrored below the axis
            let mut h = vec![0.0, l];
            while 2.0 * h[h.len() - 1] < v {
                let next = 2.0 * h[h.len() - 1];
                h.push(next);
            }
            h.push(v);
            let mut ys: Vec<f64> = h.iter().rev().copied().collect();
            ys.extend(h.iter().skip(1).map(|y| -y));
            let max_len = 2.0 * v / panels as f64;
            for w in ys.windows(2) {
                let k = ((w[0] - w[1]) / max_len).ceil().max(1.0) as usize;
                let dy = (w[1] - w[0]) / k as f64;
                for j in 0..k {
                    push_panel(C64::new(l, w[0] + dy * j as f64), C64::new(l, w[0] + dy * (j + 1) as f64));
                }
            }
        } else {
            let (a, b) = (verts[3], verts[4]);
            let step = (b - a) / panels as f64;
            for p in 0..panels {
                push_panel(a + step * p as f64, a + step * (p + 1) as f64);
            }
        }
        out
    }

    /// Whether `x` (on the real axis) lies strictly inside the rectangle.
    pub fn encloses_real(&self, x: f64) -> bool {
        x > self.x_l && x < self.x_r
    }

    /// Distance from `z` to the rectangle boundary.
    pub fn distance_to(&self, z: C64) -> f64 {
        let verts = self.vertices();
        (0..4)
            .map(|e| {
                let (a, b) = (verts[e], verts[e + 1]);
                let ab = b - a;
                let t = ((z - a) * ab.conj()).re / ab.norm_sqr();
                (a + ab * t.clamp(0.0, 1.0) - z).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn strictly_inside(&self, other: &ContourSpec) -> bool {
        other.x_l < self.x_l && other.x_r > self.x_r && other.v0 > self.v0
    }

    fn separated(&self, other: &ContourSpec) -> bool {
        self.x_r < other.x_l || other.x_r < self.x_l
    }

    pub fn disjoint_from(&self, other: &ContourSpec) -> bool {
        self.strictly_inside(other) || other.strictly_inside(self) || self.separated(other)
    }
}

/// Rectangle around `[d_minus, d_plus]` following the default margin rules:
/// `x_r = 1.2 d⁺ + 0.5`, `x_l = min(d₋, 0) - 0.5`, or `d₋/2` when `d₋ > 0` and `c < 1`.
///
/// `points_per_edge = 0` selects a resolution from the geometry (see [`auto_points`]).
pub fn contour_build(d_minus: f64, d_plus: f64, c: f64, v0: f64, points_per_edge: usize) -> Result<ContourSpec> {
    if !(d_plus > 0.0) {
        return Err(Error::param(format!("upper support edge must be positive, got {d_plus}")));
    }
    if !(v0 > 0.0) {
        return Err(Error::param(format!("contour height must be positive, got {v0}")));
    }
    let x_r = 1.2 * d_plus + 0.5;
    let (x_l, gap_l) = if d_minus > 0.0 && c < 1.0 {
        (0.5 * d_minus, 0.5 * d_minus)
    } else {
        (d_minus.min(0.0) - 0.5, 0.5)
    };
    let gap = if x_l > 0.0 && x_l < v0 { x_r - d_plus } else { gap_l.min(x_r - d_plus) };
    let points = if points_per_edge == 0 { auto_points(x_r - x_l, v0, gap) } else { points_per_edge };
    ContourSpec::new(x_l, x_r, v0, points)
}

/// Nodes per edge so that horizontal panels are no longer than `2 v0` and
/// vertical panels no longer than twice the gap to the nearest singularity.
/// With 16-point panels this keeps the per-panel error near machine precision.
pub fn auto_points(width: f64, v0: f64, gap: f64) -> usize {
    let horizontal = (width / (2.0 * v0)).ceil() as usize;
    let vertical = (v0 / gap.max(1e-3)).ceil() as usize;
    PANEL_ORDER * horizontal.max(vertical).max(4)
}

fn checked_values(nodes: &[Node], g: &(dyn Fn(C64) -> Result<C64> + Sync)) -> Result<Vec<C64>> {
    nodes
        .par_iter()
        .enumerate()
        .map(|(i, nd)| {
            let v = g(nd.z)?;
            if v.is_finite() {
                Ok(v * nd.w)
            } else {
                Err(Error::Evaluation { index: i, z: nd.z })
            }
        })
        .collect()
}

/// Compensated sum in index order.
pub fn kahan_sum(values: impl IntoIterator<Item = C64>) -> C64 {
    let mut sum = C64::new(0.0, 0.0);
    let mut comp = C64::new(0.0, 0.0);
    for v in values {
        let t = sum + v;
        for (s, c, vv, tt) in [(sum.re, &mut comp.re, v.re, t.re), (sum.im, &mut comp.im, v.im, t.im)] {
            if s.abs() >= vv.abs() {
                *c += (s - tt) + vv;
            } else {
                *c += (vv - tt) + s;
            }
        }
        sum = t;
    }
    sum + comp
}

/// `∮_Γ g(z) dz` on the fixed node set of `gamma`.
pub fn contour_integrate(g: &(dyn Fn(C64) -> Result<C64> + Sync), gamma: &ContourSpec) -> Result<C64> {
    let nodes = gamma.nodes();
    Ok(kahan_sum(checked_values(&nodes, g)?))
}

/// Doubles the node count until successive values agree to `rel_tol`.
pub fn contour_integrate_adaptive(
    g: &(dyn Fn(C64) -> Result<C64> + Sync),
    gamma: &ContourSpec,
    rel_tol: f64,
) -> Result<Integral> {
    let mut spec = *gamma;
    let mut prev = contour_integrate(g, &spec)?;
    while spec.points_per_edge < ADAPTIVE_CAP {
        spec = spec.with_points(spec.points_per_edge * 2);
        let next = contour_integrate(g, &spec)?;
        if (next - prev).norm() <= rel_tol * next.norm().max(1e-300) || (next - prev).norm() < 1e-300 {
            return Ok(Integral { value: next, converged: true, points_per_edge: spec.points_per_edge });
        }
        prev = next;
    }
    Ok(Integral { value: prev, converged: false, points_per_edge: spec.points_per_edge })
}

/// `∮_{Γ1} ∮_{Γ2} g(z1, z2) dz2 dz1` by iterated quadrature.
pub fn double_contour_integrate(
    g2: &(dyn Fn(C64, C64) -> Result<C64> + Sync),
    gamma1: &ContourSpec,
    gamma2: &ContourSpec,
) -> Result<C64> {
    if !gamma1.disjoint_from(gamma2) {
        return Err(Error::param("contours overlap; nest or separate them"));
    }
    let n1 = gamma1.nodes();
    let n2 = gamma2.nodes();
    let rows: Result<Vec<C64>> = n1
        .par_iter()
        .enumerate()
        .map(|(i, a)| {
            let mut row = Vec::with_capacity(n2.len());
            for (j, b) in n2.iter().enumerate() {
                let v = g2(a.z, b.z)?;
                if !v.is_finite() {
                    return Err(Error::Evaluation { index: i * n2.len() + j, z: a.z });
                }
                row.push(v * b.w);
            }
            Ok(kahan_sum(row) * a.w)
        })
        .collect();
    Ok(kahan_sum(rows?))
}
