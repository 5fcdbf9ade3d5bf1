//! Green functions and regular parts: closed forms on the disk and the upper
//! half-disk, a rapidly convergent series on the flat torus, and grid-based
//! columns for any Dirichlet grid.

use std::collections::HashMap;
use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Domain, Field, Grid};
use crate::Point;

const INV_2PI: f64 = 1.0 / (2.0 * PI);

/// Step of the central differences used for gradients without a closed form.
pub const FD_STEP: f64 = 1e-6;

/// Default number of Fourier modes per axis on the torus.
pub const DEFAULT_TORUS_MODES: usize = 128;

fn c(p: Point) -> Complex64 {
    Complex64::new(p[0], p[1])
}

fn v(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

/// `(1/2π) log(1/|x - y|)`.
pub fn log_kernel(x: Point, y: Point) -> f64 {
    -INV_2PI * (x[0] - y[0]).hypot(x[1] - y[1]).ln()
}

/// A Green function `G` with regular part `H = G - (1/2π) log(1/|x-y|)`.
/// Gradients are taken in the first argument.
pub trait GreenFunction: Send + Sync {
    fn method(&self) -> &'static str;

    fn contains(&self, p: Point) -> bool;

    fn green(&self, x: Point, y: Point) -> Result<f64>;

    fn regular(&self, x: Point, y: Point) -> Result<f64>;

    fn grad_green(&self, x: Point, y: Point) -> Result<[f64; 2]> {
        central_difference(|p| self.green(p, y), x)
    }

    fn grad_regular(&self, x: Point, y: Point) -> Result<[f64; 2]> {
        central_difference(|p| self.regular(p, y), x)
    }

    /// `H(x, x)`.
    fn robin(&self, x: Point) -> Result<f64> {
        self.regular(x, x)
    }

    /// Distance between two points of the domain.
    fn distance(&self, x: Point, y: Point) -> f64 {
        (x[0] - y[0]).hypot(x[1] - y[1])
    }
}

pub fn central_difference(f: impl Fn(Point) -> Result<f64>, x: Point) -> Result<[f64; 2]> {
    let e = FD_STEP;
    let gx = (f([x[0] + e, x[1]])? - f([x[0] - e, x[1]])?) / (2.0 * e);
    let gy = (f([x[0], x[1] + e])? - f([x[0], x[1] - e])?) / (2.0 * e);
    Ok([gx, gy])
}

fn distinct(x: Point, y: Point) -> Result<()> {
    if x == y {
        Err(Error::Coincident(x))
    } else {
        Ok(())
    }
}

/// The unit-disk kernel `(1/2π) log(|1 - z w̄| / |z - w|)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiskGreen;

impl DiskGreen {
    fn inside(&self, p: Point) -> Result<()> {
        if p[0] * p[0] + p[1] * p[1] < 1.0 {
            Ok(())
        } else {
            Err(Error::OutsideDomain(p))
        }
    }
}

impl GreenFunction for DiskGreen {
    fn method(&self) -> &'static str {
        "analytic-disk"
    }

    fn contains(&self, p: Point) -> bool {
        p[0] * p[0] + p[1] * p[1] < 1.0
    }

    fn green(&self, x: Point, y: Point) -> Result<f64> {
        self.inside(x)?;
        self.inside(y)?;
        distinct(x, y)?;
        let (z, w) = (c(x), c(y));
        Ok(INV_2PI * ((1.0 - z * w.conj()).norm() / (z - w).norm()).ln())
    }

    fn regular(&self, x: Point, y: Point) -> Result<f64> {
        self.inside(x)?;
        self.inside(y)?;
        let (z, w) = (c(x), c(y));
        Ok(INV_2PI * (1.0 - z * w.conj()).norm().ln())
    }

    fn grad_green(&self, x: Point, y: Point) -> Result<[f64; 2]> {
        self.inside(x)?;
        self.inside(y)?;
        distinct(x, y)?;
        let (z, w) = (c(x), c(y));
        let d = -w.conj() / (1.0 - z * w.conj()) - 1.0 / (z - w);
        Ok(v(d.conj() * INV_2PI))
    }

    fn grad_regular(&self, x: Point, y: Point) -> Result<[f64; 2]> {
        self.inside(x)?;
        self.inside(y)?;
        let (z, w) = (c(x), c(y));
        let d = -w.conj() / (1.0 - z * w.conj());
        Ok(v(d.conj() * INV_2PI))
    }
}

/// Green function of the upper half-disk `B1+ = {|z| < 1, Im z > 0}`:
/// `-(1/2π) log |(z-w)(1-zw) / ((z-w̄)(1-zw̄))|`.
pub fn green_half_disk(x: Point, y: Point) -> Result<f64> {
    for p in [x, y] {
        if !HalfDiskGreen.contains(p) {
            return Err(Error::OutsideDomain(p));
        }
    }
    distinct(x, y)?;
    let (z, w) = (c(x), c(y));
    let ratio = (z - w) * (1.0 - z * w) / ((z - w.conj()) * (1.0 - z * w.conj()));
    Ok(-INV_2PI * ratio.norm().ln())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HalfDiskGreen;

impl GreenFunction for HalfDiskGreen {
    fn method(&self) -> &'static str {
        "analytic-halfdisk"
    }

    fn contains(&self, p: Point) -> bool {
        p[1] > 0.0 && p[0] * p[0] + p[1] * p[1] < 1.0
    }

    fn green(&self, x: Point, y: Point) -> Result<f64> {
        green_half_disk(x, y)
    }

    fn regular(&self, x: Point, y: Point) -> Result<f64> {
        for p in [x, y] {
            if !self.contains(p) {
                return Err(Error::OutsideDomain(p));
            }
        }
        let (z, w) = (c(x), c(y));
        let num = 1.0 - z * w;
        let den = (z - w.conj()) * (1.0 - z * w.conj());
        Ok(-INV_2PI * (num.norm() / den.norm()).ln())
    }
}

/// Green function of the flat torus `R² / (Lx Z × Ly Z)` normalized by
/// `∫ G(x, y) dx = 0`, so that `-Δ G = δ_y - 1/|Ω|`.
///
/// Summing the Fourier series in `y` first leaves a periodic logarithm plus
/// a series in the `x` modes that converges like `e^{-π m Ly / Lx}`.
#[derive(Debug, Clone, Copy)]
pub struct TorusGreen {
    period_x: f64,
    period_y: f64,
    modes: usize,
}

impl TorusGreen {
    pub fn new(period_x: f64, period_y: f64, modes: usize) -> Result<Self> {
        Domain::FlatTorus { period_x, period_y }.validate()?;
        if modes < 32 {
            return Err(Error::InvalidArgument(format!("torus Green function needs at least 32 modes, got {modes}")));
        }
        Ok(Self {
            period_x,
            period_y,
            modes,
        })
    }

    pub fn for_domain(domain: &Domain) -> Result<Self> {
        match *domain {
            Domain::FlatTorus { period_x, period_y } => Self::new(period_x, period_y, DEFAULT_TORUS_MODES),
            _ => Err(Error::InvalidArgument("torus Green function on a non-periodic domain".into())),
        }
    }

    pub fn area(&self) -> f64 {
        self.period_x * self.period_y
    }

    fn reduce(&self, x: Point, y: Point) -> [f64; 2] {
        let mut d = [x[0] - y[0], x[1] - y[1]];
        d[0] -= self.period_x * (d[0] / self.period_x).round();
        d[1] -= self.period_y * (d[1] / self.period_y).round();
        d
    }

    /// Everything except `-(1/2π) log|1 - e^{2πi(X + i|Y|)/Lx}|`.
    fn smooth_part(&self, d: [f64; 2]) -> f64 {
        let (lx, ly) = (self.period_x, self.period_y);
        let a = d[1].abs();
        let t = a / ly;
        let mut sum = ly / (2.0 * lx) * (t * t - t + 1.0 / 6.0);
        for m in 1..=self.modes {
            let kappa = 2.0 * PI * m as f64 / lx;
            let decay = (-kappa * (ly - a)).exp();
            if decay < 1e-300 {
                break;
            }
            // 2cosh(κa)/(e^{κLy} - 1), written to avoid overflow
            let profile = (decay + (-kappa * (ly + a)).exp()) / (1.0 - (-kappa * ly).exp());
            sum += 2.0 * (kappa * d[0]).cos() * profile / (2.0 * kappa * lx);
        }
        sum
    }

    fn regular_offset(&self, d: [f64; 2]) -> f64 {
        // G = smooth - (1/2π) log|1 - q|, |1 - q| = 2 e^{-b} |sin(s + ib)|
        // and |sin(s + ib)| = (π r / Lx) · ratio.
        let lx = self.period_x;
        let a = d[1].abs();
        let (s, b) = (PI * d[0] / lx, PI * a / lx);
        let r = d[0].hypot(d[1]);
        let sn = s.sin();
        let sh = b.sinh();
        let ratio = (sn * sn + sh * sh).sqrt() / (PI * r / lx);
        let log_one_minus_q_over_r = LN_2 - b + ratio.ln() + (PI / lx).ln();
        self.smooth_part(d) - INV_2PI * log_one_minus_q_over_r
    }

    /// Closed form of `H(y, y)`; used to validate the extrapolated value.
    pub fn robin_closed_form(&self) -> f64 {
        let (lx, ly) = (self.period_x, self.period_y);
        let mut sum = ly / (12.0 * lx) - INV_2PI * (2.0 * PI / lx).ln();
        for m in 1..=self.modes {
            let kappa = 2.0 * PI * m as f64 / lx;
            let term = 2.0 / (2.0 * kappa * lx) * 2.0 / (kappa * ly).exp_m1();
            if term < 1e-300 {
                break;
            }
            sum += term;
        }
        sum
    }

    /// The literal lattice sum `Σ_{k≠0} e^{ik·(x-y)} / (|Ω| |k|²)` over modes
    /// with `|m|, |n| ≤ modes`. Slow; kept as an independent cross-check.
    pub fn green_fourier(&self, x: Point, y: Point) -> f64 {
        let d = [x[0] - y[0], x[1] - y[1]];
        let k = self.modes as i64;
        let mut sum = 0.0;
        for m in -k..=k {
            let kx = 2.0 * PI * m as f64 / self.period_x;
            for n in -k..=k {
                if m == 0 && n == 0 {
                    continue;
                }
                let ky = 2.0 * PI * n as f64 / self.period_y;
                sum += (kx * d[0] + ky * d[1]).cos() / (kx * kx + ky * ky);
            }
        }
        sum / self.area()
    }
}

impl GreenFunction for TorusGreen {
    fn method(&self) -> &'static str {
        "fourier-torus"
    }

    fn contains(&self, p: Point) -> bool {
        p[0].is_finite() && p[1].is_finite()
    }

    fn distance(&self, x: Point, y: Point) -> f64 {
        let d = self.reduce(x, y);
        d[0].hypot(d[1])
    }

    fn green(&self, x: Point, y: Point) -> Result<f64> {
        let d = self.reduce(x, y);
        if d == [0.0, 0.0] {
            return Err(Error::Coincident(x));
        }
        let lx = self.period_x;
        let (s, b) = (PI * d[0] / lx, PI * d[1].abs() / lx);
        let sn = s.sin();
        let sh = b.sinh();
        let log_one_minus_q = LN_2 - b + 0.5 * (sn * sn + sh * sh).ln();
        Ok(self.smooth_part(d) - INV_2PI * log_one_minus_q)
    }

    /// `G(x, y) - (1/2π) log(1/|x - y|)` with the minimal-image distance; the
    /// coincident value is the Richardson limit along the coordinate axes.
    fn regular(&self, x: Point, y: Point) -> Result<f64> {
        let d = self.reduce(x, y);
        if d != [0.0, 0.0] {
            return Ok(self.regular_offset(d));
        }
        let h1 = 1e-2 * self.period_x.min(self.period_y);
        let probe = |h: f64| 0.5 * (self.regular_offset([h, 0.0]) + self.regular_offset([0.0, h]));
        Ok((4.0 * probe(0.5 * h1) - probe(h1)) / 3.0)
    }
}

/// Grid Green functions `-Δ_h G = h^{-2} e_y` for a fixed set of source
/// nodes, solved once at construction.
#[derive(Debug, Clone)]
pub struct NumericGreen {
    grid: Arc<Grid>,
    columns: HashMap<usize, Vec<f64>>,
    gradients: HashMap<usize, Vec<[f64; 2]>>,
}

impl NumericGreen {
    pub fn new(grid: Arc<Grid>, sources: &[Point]) -> Result<Self> {
        if grid.domain().is_periodic() {
            return Err(Error::InvalidArgument("numeric Green functions need a Dirichlet grid".into()));
        }
        let mut columns = HashMap::new();
        let mut gradients = HashMap::new();
        let inv_h2 = 1.0 / (grid.h() * grid.h());
        for &y in sources {
            let k = grid.nearest_node(y).ok_or(Error::OutsideDomain(y))?;
            if columns.contains_key(&k) {
                continue;
            }
            let mut rhs = vec![0.0; grid.node_count()];
            rhs[k] = inv_h2;
            let column = grid.poisson_solve(&Field::new(grid.clone(), rhs)?, false)?;
            gradients.insert(k, grid.gradient(column.values()));
            columns.insert(k, column.into_values());
        }
        Ok(Self { grid, columns, gradients })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn column(&self, y: Point) -> Result<(usize, &[f64])> {
        let k = self.grid.nearest_node(y).ok_or(Error::SourceNotCached(y))?;
        self.columns
            .get(&k)
            .map(|c| (k, c.as_slice()))
            .ok_or(Error::SourceNotCached(y))
    }

    /// The cached column for source `y` as a field.
    pub fn field(&self, y: Point) -> Result<Field> {
        let (_, col) = self.column(y)?;
        Field::new(self.grid.clone(), col.to_vec())
    }

    /// `H(y, y)` from a least-squares fit of `G_h(x, y) - (1/2π) log(1/|x-y|)`
    /// on rings of nodes around `y`. The model `H + a r² + b cos4θ (h/r)²`
    /// absorbs the leading lattice anisotropy of the discrete kernel.
    pub fn robin_numeric(&self, y: Point) -> Result<f64> {
        let (k, col) = self.column(y)?;
        let [i, j] = self.grid.lattice_coords(k);
        let (i, j) = (i as i64, j as i64);
        let h = self.grid.h();
        let yk = self.grid.node(k);
        let mut rows: Vec<[f64; 4]> = Vec::new();
        let mut ring = |offsets: [(i64, i64); 4], cos4: f64| {
            let mut acc = 0.0;
            let mut dist = 0.0;
            for (di, dj) in offsets {
                match self.grid.lattice_node(i + di, j + dj) {
                    Some(q) => {
                        acc += col[q] - log_kernel(self.grid.node(q), yk);
                        dist = self.grid.domain().distance(self.grid.node(q), yk);
                    }
                    None => return,
                }
            }
            let r = dist;
            rows.push([1.0, r * r, cos4 * (h / r).powi(2), acc / 4.0]);
        };
        for s in 3..=10i64 {
            ring([(s, 0), (-s, 0), (0, s), (0, -s)], 1.0);
        }
        for s in 2..=7i64 {
            ring([(s, s), (-s, s), (s, -s), (-s, -s)], -1.0);
        }
        if rows.len() < 4 {
            return Err(Error::InvalidArgument(format!(
                "source ({}, {}) is too close to the boundary to extrapolate its regular part",
                y[0], y[1]
            )));
        }
        let a = nalgebra::DMatrix::from_fn(rows.len(), 3, |r, c| rows[r][c]);
        let b = nalgebra::DVector::from_fn(rows.len(), |r, _| rows[r][3]);
        let fit = a
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(fit[0])
    }

    /// `∇₁H(y, y)` from odd differences across the source, which cancel the
    /// even lattice anisotropy; fitted as `g + c r²` over the axis rings.
    pub fn robin_gradient_numeric(&self, y: Point) -> Result<[f64; 2]> {
        let (k, col) = self.column(y)?;
        let [i, j] = self.grid.lattice_coords(k);
        let (i, j) = (i as i64, j as i64);
        let h = self.grid.h();
        let yk = self.grid.node(k);
        let regular = |q: usize| col[q] - log_kernel(self.grid.node(q), yk);
        let mut out = [0.0; 2];
        for (axis, g) in out.iter_mut().enumerate() {
            let mut rows: Vec<[f64; 3]> = Vec::new();
            for s in 3..=10i64 {
                let (di, dj) = if axis == 0 { (s, 0) } else { (0, s) };
                let (Some(p), Some(m)) = (
                    self.grid.lattice_node(i + di, j + dj),
                    self.grid.lattice_node(i - di, j - dj),
                ) else {
                    continue;
                };
                let r = s as f64 * h;
                rows.push([1.0, r * r, (regular(p) - regular(m)) / (2.0 * r)]);
            }
            if rows.len() < 3 {
                return Err(Error::InvalidArgument(format!(
                    "source ({}, {}) is too close to the boundary to extrapolate its regular part",
                    y[0], y[1]
                )));
            }
            let a = nalgebra::DMatrix::from_fn(rows.len(), 2, |r, c| rows[r][c]);
            let b = nalgebra::DVector::from_fn(rows.len(), |r, _| rows[r][2]);
            let fit = a
                .svd(true, true)
                .solve(&b, 1e-14)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            *g = fit[0];
        }
        Ok(out)
    }

    fn at_source(&self, x: Point, k: usize) -> bool {
        self.grid.domain().distance(x, self.grid.node(k)) < 1e-12
    }
}

impl GreenFunction for NumericGreen {
    fn method(&self) -> &'static str {
        "numeric-grid"
    }

    fn contains(&self, p: Point) -> bool {
        self.grid.domain().contains(p)
    }

    fn green(&self, x: Point, y: Point) -> Result<f64> {
        let (_, col) = self.column(y)?;
        if !self.contains(x) {
            return Err(Error::OutsideDomain(x));
        }
        self.grid.interpolate(col, x).ok_or(Error::OutsideDomain(x))
    }

    fn regular(&self, x: Point, y: Point) -> Result<f64> {
        let (k, _) = self.column(y)?;
        if self.at_source(x, k) {
            return self.robin_numeric(y);
        }
        Ok(self.green(x, y)? - log_kernel(x, y))
    }

    /// Bilinear interpolation of the nodal gradient of the cached column.
    fn grad_green(&self, x: Point, y: Point) -> Result<[f64; 2]> {
        let (k, _) = self.column(y)?;
        if self.at_source(x, k) {
            return Err(Error::Coincident(x));
        }
        if !self.contains(x) {
            return Err(Error::OutsideDomain(x));
        }
        let g = &self.gradients[&k];
        let mut out = [0.0; 2];
        for (axis, o) in out.iter_mut().enumerate() {
            let comp: Vec<f64> = g.iter().map(|d| d[axis]).collect();
            *o = self.grid.interpolate(&comp, x).ok_or(Error::OutsideDomain(x))?;
        }
        Ok(out)
    }

    fn grad_regular(&self, x: Point, y: Point) -> Result<[f64; 2]> {
        let (k, _) = self.column(y)?;
        if self.at_source(x, k) {
            return self.robin_gradient_numeric(y);
        }
        let g = self.grad_green(x, y)?;
        let d = [x[0] - y[0], x[1] - y[1]];
        let r2 = d[0] * d[0] + d[1] * d[1];
        Ok([g[0] + INV_2PI * d[0] / r2, g[1] + INV_2PI * d[1] / r2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateReport {
    pub delta: f64,
    pub samples: usize,
    pub value_bound: f64,
    pub gradient_bound: f64,
    /// Largest `|G| / value_bound` observed.
    pub max_value_ratio: f64,
    /// Largest `|∇ₓG| / gradient_bound` observed.
    pub max_gradient_ratio: f64,
}

/// Collar excluded around the corners `(±1, 0)` of the half-disk.
pub const CORNER_COLLAR: f64 = 1e-3;

fn sample_half_disk(rng: &mut ChaCha8Rng, r_min: f64, r_max: f64) -> Point {
    loop {
        let p = [rng.gen_range(-r_max..r_max), rng.gen_range(0.0..r_max)];
        let r = p[0].hypot(p[1]);
        if p[1] > 0.0 && r < r_max && r >= r_min {
            return p;
        }
    }
}

/// Samples the half-disk Green function on the regions of the near-boundary
/// estimate and returns the largest observed ratios to the two bounds.
pub fn green_estimate_check(delta: f64, n_samples: usize, seed: u64) -> Result<EstimateReport> {
    if !(delta > 0.0 && delta <= 0.2) {
        return Err(Error::InvalidArgument(format!("delta = {delta} outside (0, 0.2]")));
    }
    let value_bound = INV_2PI * (2.0 * (1.0 + delta) / (1.0 - delta)).ln();
    let gradient_bound = 2.0 / (PI * (1.0 - delta).powi(2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = EstimateReport {
        delta,
        samples: n_samples,
        value_bound,
        gradient_bound,
        max_value_ratio: 0.0,
        max_gradient_ratio: 0.0,
    };
    let grad_inner = delta.sqrt() + delta;
    for _ in 0..n_samples {
        let y = sample_half_disk(&mut rng, 0.0, delta);
        let x = sample_half_disk(&mut rng, 3.0 * delta, 1.0);
        let g = green_half_disk(x, y)?.abs();
        if g > value_bound {
            return Err(Error::EstimateViolated(format!(
                "|G({x:?}, {y:?})| = {g:e} exceeds {value_bound:e}"
            )));
        }
        report.max_value_ratio = report.max_value_ratio.max(g / value_bound);

        let x = loop {
            let p = sample_half_disk(&mut rng, grad_inner, 1.0);
            let near_corner = (p[0] - 1.0).hypot(p[1]) < CORNER_COLLAR || (p[0] + 1.0).hypot(p[1]) < CORNER_COLLAR;
            // keep the difference stencil inside the half-disk
            let r = p[0].hypot(p[1]);
            if !near_corner && p[1] > FD_STEP && r < 1.0 - FD_STEP {
                break p;
            }
        };
        let grad = central_difference(|p| green_half_disk(p, y), x)?;
        let norm = grad[0].hypot(grad[1]);
        if norm > gradient_bound {
            return Err(Error::EstimateViolated(format!(
                "|∇G({x:?}, {y:?})| = {norm:e} exceeds {gradient_bound:e}"
            )));
        }
        report.max_gradient_ratio = report.max_gradient_ratio.max(norm / gradient_bound);
    }
    Ok(report)
}

/// `w2(z) = -i (z + 1)/(z - 1)`, mapping the unit disk onto the upper half-plane.
pub fn mobius_disk_to_halfplane(z: Complex64) -> Result<Complex64> {
    let den = z - 1.0;
    if den.norm() <= f64::EPSILON {
        return Err(Error::InvalidArgument("w2 has a pole at z = 1".into()));
    }
    Ok(-Complex64::i() * (z + 1.0) / den)
}

/// `scale · (w2(z) - shift)`.
pub fn mobius_chain(z: Complex64, shift: Complex64, scale: f64) -> Result<Complex64> {
    Ok(scale * (mobius_disk_to_halfplane(z)? - shift))
}
