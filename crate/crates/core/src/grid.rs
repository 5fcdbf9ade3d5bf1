//! Cartesian discretizations of the rectangle, the unit disk and the flat
//! torus, with a Shortley–Weller Laplacian at cut cells.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{bicgstab, conjugate_gradient, CsrMatrix, KrylovOptions};
use crate::Point;

/// Arms shorter than this fraction of `h` are merged into the boundary.
pub const DEGENERATE_ARM: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Rectangle { width: f64, height: f64 },
    UnitDisk,
    FlatTorus { period_x: f64, period_y: f64 },
}

// E, W, N, S
const DIRS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

impl Domain {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Domain::Rectangle { width, height } => width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite(),
            Domain::UnitDisk => true,
            Domain::FlatTorus { period_x, period_y } => {
                period_x > 0.0 && period_y > 0.0 && period_x.is_finite() && period_y.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidGrid(format!("non-positive extent in {self:?}")))
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, Domain::FlatTorus { .. })
    }

    pub fn area(&self) -> f64 {
        match *self {
            Domain::Rectangle { width, height } => width * height,
            Domain::UnitDisk => PI,
            Domain::FlatTorus { period_x, period_y } => period_x * period_y,
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            Domain::Rectangle { width, height } => width.hypot(height),
            Domain::UnitDisk => 2.0,
            Domain::FlatTorus { period_x, period_y } => 0.5 * period_x.hypot(period_y),
        }
    }

    pub fn max_extent(&self) -> f64 {
        match *self {
            Domain::Rectangle { width, height } => width.max(height),
            Domain::UnitDisk => 2.0,
            Domain::FlatTorus { period_x, period_y } => period_x.max(period_y),
        }
    }

    pub fn center(&self) -> Point {
        match *self {
            Domain::Rectangle { width, height } => [0.5 * width, 0.5 * height],
            Domain::UnitDisk => [0.0, 0.0],
            Domain::FlatTorus { period_x, period_y } => [0.5 * period_x, 0.5 * period_y],
        }
    }

    /// Open-set membership. Every point belongs to the torus.
    pub fn contains(&self, p: Point) -> bool {
        match *self {
            Domain::Rectangle { width, height } => p[0] > 0.0 && p[0] < width && p[1] > 0.0 && p[1] < height,
            Domain::UnitDisk => p[0] * p[0] + p[1] * p[1] < 1.0,
            Domain::FlatTorus { .. } => p[0].is_finite() && p[1].is_finite(),
        }
    }

    /// Euclidean distance to the boundary; `+∞` on the torus.
    pub fn boundary_distance(&self, p: Point) -> f64 {
        match *self {
            Domain::Rectangle { width, height } => p[0].min(width - p[0]).min(p[1]).min(height - p[1]).max(0.0),
            Domain::UnitDisk => (1.0 - p[0].hypot(p[1])).max(0.0),
            Domain::FlatTorus { .. } => f64::INFINITY,
        }
    }

    /// Maps a point into the fundamental cell `[0, Lx) × [0, Ly)` on the torus.
    pub fn wrap(&self, p: Point) -> Point {
        match *self {
            Domain::FlatTorus { period_x, period_y } => [p[0].rem_euclid(period_x), p[1].rem_euclid(period_y)],
            _ => p,
        }
    }

    /// `b - a`, using the minimal image on the torus.
    pub fn displacement(&self, a: Point, b: Point) -> [f64; 2] {
        let mut d = [b[0] - a[0], b[1] - a[1]];
        if let Domain::FlatTorus { period_x, period_y } = *self {
            d[0] -= period_x * (d[0] / period_x).round();
            d[1] -= period_y * (d[1] / period_y).round();
        }
        d
    }

    pub fn distance(&self, a: Point, b: Point) -> f64 {
        let d = self.displacement(a, b);
        d[0].hypot(d[1])
    }

    fn lattice_origin(&self) -> Point {
        match self {
            Domain::UnitDisk => [-1.0, -1.0],
            _ => [0.0, 0.0],
        }
    }

    /// Distance from `p` to the boundary along the axis ray `dir`.
    fn ray_to_boundary(&self, p: Point, dir: usize) -> f64 {
        let (dx, dy) = DIRS[dir];
        match *self {
            Domain::Rectangle { width, height } => match (dx, dy) {
                (1, 0) => width - p[0],
                (-1, 0) => p[0],
                (0, 1) => height - p[1],
                _ => p[1],
            },
            Domain::UnitDisk => {
                let (along, across) = if dx != 0 { (p[0] * dx as f64, p[1]) } else { (p[1] * dy as f64, p[0]) };
                let reach = (1.0 - across * across).max(0.0).sqrt();
                reach - along
            }
            Domain::FlatTorus { .. } => f64::INFINITY,
        }
    }

    /// Area of the axis-aligned box `[x0, x1] × [y0, y1]` inside the domain.
    pub fn box_overlap(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
        match *self {
            Domain::Rectangle { width, height } => {
                let wx = (x1.min(width) - x0.max(0.0)).max(0.0);
                let wy = (y1.min(height) - y0.max(0.0)).max(0.0);
                wx * wy
            }
            Domain::UnitDisk => disk_box_overlap([0.0, 0.0], 1.0, x0, x1, y0, y1),
            Domain::FlatTorus { .. } => (x1 - x0) * (y1 - y0),
        }
    }
}

/// Area of `[x0, x1] × [y0, y1] ∩ B_radius(center)`, exact.
pub fn disk_box_overlap(center: Point, radius: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    if x1 <= x0 || y1 <= y0 || radius <= 0.0 {
        return 0.0;
    }
    let s = |v: f64, c: f64| (v - c) / radius;
    let (a, b) = (s(x0, center[0]), s(x1, center[0]));
    let (c, d) = (s(y0, center[1]), s(y1, center[1]));
    let area = quadrant_area(b, d) - quadrant_area(a, d) - quadrant_area(b, c) + quadrant_area(a, c);
    (area * radius * radius).max(0.0)
}

/// Signed area of `{0 ≤ s ≤ x, 0 ≤ t ≤ y} ∩ unit disk`, extended oddly in
/// each argument so that box areas follow from inclusion–exclusion.
fn quadrant_area(x: f64, y: f64) -> f64 {
    let sign = x.signum() * y.signum();
    let x = x.abs().min(1.0);
    let y = y.abs().min(1.0);
    if x == 0.0 || y == 0.0 {
        return 0.0;
    }
    let area = if x * x + y * y <= 1.0 {
        x * y
    } else {
        let s_star = (1.0 - y * y).sqrt();
        let prim = |s: f64| 0.5 * (s * (1.0 - s * s).max(0.0).sqrt() + s.clamp(-1.0, 1.0).asin());
        y * s_star + prim(x) - prim(s_star)
    };
    sign * area
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum StencilKind {
    /// Unequal-arm second-order stencil; non-symmetric at cut cells.
    #[default]
    ShortleyWeller,
    /// Cut-cell stencil with a fixed `h` in the outer difference, which makes
    /// the assembled operator symmetric.
    Symmetric,
}

/// Neighbours and arm lengths in the order E, W, N, S. A `None` neighbour is
/// a boundary point carrying the Dirichlet value 0 at distance `arm`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub neighbors: [Option<usize>; 4],
    pub arms: [f64; 4],
}

impl Stencil {
    pub fn is_cut(&self) -> bool {
        self.neighbors.iter().any(Option::is_none)
    }
}

#[derive(Debug)]
pub struct Grid {
    domain: Domain,
    n: usize,
    h: f64,
    kind: StencilKind,
    origin: Point,
    dims: [usize; 2],
    nodes: Vec<Point>,
    lattice: Vec<[usize; 2]>,
    index: Vec<usize>,
    stencils: Vec<Stencil>,
    weights: Vec<f64>,
    laplacian: CsrMatrix,
    symmetric: bool,
}

const NO_NODE: usize = usize::MAX;

impl Grid {
    pub fn build(domain: Domain, n: usize) -> Result<Arc<Self>> {
        Self::build_with(domain, n, StencilKind::default())
    }

    pub fn build_with(domain: Domain, n: usize, kind: StencilKind) -> Result<Arc<Self>> {
        domain.validate()?;
        if n < 4 {
            return Err(Error::InvalidGrid(format!("resolution n = {n} is too small")));
        }
        let h = domain.max_extent() / n as f64;
        let origin = domain.lattice_origin();
        let dims = match domain {
            Domain::Rectangle { width, height } => [
                (width / h + 1e-9).floor() as usize + 1,
                (height / h + 1e-9).floor() as usize + 1,
            ],
            Domain::UnitDisk => [n + 1, n + 1],
            Domain::FlatTorus { period_x, period_y } => {
                let mx = (period_x / h).round();
                let my = (period_y / h).round();
                if (mx * h - period_x).abs() > 1e-9 * period_x || (my * h - period_y).abs() > 1e-9 * period_y {
                    return Err(Error::InvalidGrid(format!(
                        "torus periods ({period_x}, {period_y}) are not multiples of h = {h}"
                    )));
                }
                [mx as usize, my as usize]
            }
        };

        let position = |i: usize, j: usize| [origin[0] + i as f64 * h, origin[1] + j as f64 * h];
        let mut index = vec![NO_NODE; dims[0] * dims[1]];
        let mut nodes = Vec::new();
        let mut lattice = Vec::new();
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = position(i, j);
                let interior = domain.is_periodic()
                    || (domain.contains(p) && (0..4).all(|d| domain.ray_to_boundary(p, d) >= DEGENERATE_ARM * h));
                if interior {
                    index[j * dims[0] + i] = nodes.len();
                    nodes.push(p);
                    lattice.push([i, j]);
                }
            }
        }
        if nodes.is_empty() {
            return Err(Error::InvalidGrid("grid has no interior nodes".into()));
        }

        let lookup = |i: i64, j: i64| -> Option<usize> {
            let (i, j) = if domain.is_periodic() {
                (i.rem_euclid(dims[0] as i64), j.rem_euclid(dims[1] as i64))
            } else {
                (i, j)
            };
            if i < 0 || j < 0 || i >= dims[0] as i64 || j >= dims[1] as i64 {
                return None;
            }
            let k = index[j as usize * dims[0] + i as usize];
            (k != NO_NODE).then_some(k)
        };

        let mut stencils = Vec::with_capacity(nodes.len());
        for (k, &[i, j]) in lattice.iter().enumerate() {
            let p = nodes[k];
            let mut neighbors = [None; 4];
            let mut arms = [h; 4];
            for (d, (dx, dy)) in DIRS.iter().enumerate() {
                match lookup(i as i64 + dx, j as i64 + dy) {
                    Some(q) => neighbors[d] = Some(q),
                    None => arms[d] = domain.ray_to_boundary(p, d).min(h),
                }
            }
            stencils.push(Stencil { neighbors, arms });
        }

        let rows: Vec<Vec<(usize, f64)>> = stencils
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let mut row = Vec::with_capacity(5);
                let mut diag = 0.0;
                for axis in 0..2 {
                    let (a_plus, a_minus) = (s.arms[2 * axis], s.arms[2 * axis + 1]);
                    let (c_plus, c_minus) = match kind {
                        StencilKind::ShortleyWeller => {
                            let c = 2.0 / (a_plus + a_minus);
                            (c / a_plus, c / a_minus)
                        }
                        StencilKind::Symmetric => (1.0 / (h * a_plus), 1.0 / (h * a_minus)),
                    };
                    diag -= c_plus + c_minus;
                    if let Some(q) = s.neighbors[2 * axis] {
                        row.push((q, c_plus));
                    }
                    if let Some(q) = s.neighbors[2 * axis + 1] {
                        row.push((q, c_minus));
                    }
                }
                row.push((k, diag));
                row
            })
            .collect();
        let laplacian = CsrMatrix::from_rows(rows);
        let symmetric = domain.is_periodic() || kind == StencilKind::Symmetric || stencils.iter().all(|s| s.arms == [h; 4]);

        let weights = if domain.is_periodic() {
            vec![h * h; nodes.len()]
        } else {
            dual_cell_weights(&domain, h, origin, dims, &index, &lookup)
        };

        Ok(Arc::new(Self {
            domain,
            n,
            h,
            kind,
            origin,
            dims,
            nodes,
            lattice,
            index,
            stencils,
            weights,
            laplacian,
            symmetric,
        }))
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn stencil_kind(&self) -> StencilKind {
        self.kind
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> Point {
        self.nodes[k]
    }

    pub fn stencils(&self) -> &[Stencil] {
        &self.stencils
    }

    /// Quadrature weights (dual-cell areas clipped to the domain).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The assembled discrete Laplacian `Δ_h` (not `-Δ_h`).
    pub fn laplacian(&self) -> &CsrMatrix {
        &self.laplacian
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Two grids are interchangeable when they discretize the same domain the same way.
    pub fn same_layout(&self, other: &Grid) -> bool {
        std::ptr::eq(self, other) || (self.domain == other.domain && self.n == other.n && self.kind == other.kind)
    }

    pub fn lattice_node(&self, i: i64, j: i64) -> Option<usize> {
        let (i, j) = if self.domain.is_periodic() {
            (i.rem_euclid(self.dims[0] as i64), j.rem_euclid(self.dims[1] as i64))
        } else {
            (i, j)
        };
        if i < 0 || j < 0 || i >= self.dims[0] as i64 || j >= self.dims[1] as i64 {
            return None;
        }
        let k = self.index[j as usize * self.dims[0] + i as usize];
        (k != NO_NODE).then_some(k)
    }

    pub fn lattice_coords(&self, k: usize) -> [usize; 2] {
        self.lattice[k]
    }

    /// Nearest interior node to `p`, if the nearest lattice point is a node.
    pub fn nearest_node(&self, p: Point) -> Option<usize> {
        let p = self.domain.wrap(p);
        let i = ((p[0] - self.origin[0]) / self.h).round() as i64;
        let j = ((p[1] - self.origin[1]) / self.h).round() as i64;
        self.lattice_node(i, j)
    }

    /// Up to eight lattice neighbours of node `k`; `None` marks boundary points.
    pub fn ring(&self, k: usize) -> [Option<usize>; 8] {
        let [i, j] = self.lattice[k];
        let (i, j) = (i as i64, j as i64);
        let offsets = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        offsets.map(|(di, dj)| self.lattice_node(i + di, j + dj))
    }

    pub fn check(&self, field: &Field) -> Result<()> {
        if self.same_layout(&field.grid) && field.values.len() == self.node_count() {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn laplacian_apply(&self, u: &Field) -> Result<Field> {
        self.check(u)?;
        Ok(Field {
            grid: u.grid.clone(),
            values: self.laplacian.mul(&u.values),
        })
    }

    pub fn integrate(&self, u: &Field) -> Result<f64> {
        self.check(u)?;
        Ok(self.integrate_values(&u.values))
    }

    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Solves `-Δ_h u = f`. On the torus the right-hand side must have zero
    /// mean and the solution is returned with zero mean.
    pub fn poisson_solve(&self, f: &Field, zero_mean: bool) -> Result<Field> {
        self.check(f)?;
        let rhs = &f.values;
        let neg_lap = self.laplacian.scaled_plus_diagonal(-1.0, &vec![0.0; self.node_count()]);
        let opts = KrylovOptions::for_size(self.node_count());
        let values = if self.domain.is_periodic() {
            if !zero_mean {
                return Err(Error::InvalidArgument("poisson_solve on the torus requires zero_mean".into()));
            }
            let mean = self.integrate_values(rhs);
            let scale = self.integrate_values(&rhs.iter().map(|v| v.abs()).collect::<Vec<_>>()).max(1.0);
            if mean.abs() > 1e-10 * scale {
                return Err(Error::NonZeroMean(mean));
            }
            conjugate_gradient(&neg_lap, rhs, true, opts)?
        } else if self.symmetric {
            conjugate_gradient(&neg_lap, rhs, false, opts)?
        } else {
            bicgstab(&neg_lap, rhs, opts)?
        };
        Field::new(f.grid.clone(), values)
    }

    /// Bilinear interpolation of nodal values; boundary lattice points carry 0.
    /// Returns `None` outside the lattice bounding box.
    pub fn interpolate(&self, values: &[f64], p: Point) -> Option<f64> {
        let p = self.domain.wrap(p);
        let fx = (p[0] - self.origin[0]) / self.h;
        let fy = (p[1] - self.origin[1]) / self.h;
        let i0 = fx.floor();
        let j0 = fy.floor();
        let (tx, ty) = (fx - i0, fy - j0);
        let (i0, j0) = (i0 as i64, j0 as i64);
        if !self.domain.is_periodic()
            && (i0 < 0 || j0 < 0 || i0 + 1 >= self.dims[0] as i64 + 1 || j0 + 1 >= self.dims[1] as i64 + 1)
        {
            return None;
        }
        let value = |i: i64, j: i64| self.lattice_node(i, j).map_or(0.0, |k| values[k]);
        Some(
            (1.0 - tx) * (1.0 - ty) * value(i0, j0)
                + tx * (1.0 - ty) * value(i0 + 1, j0)
                + (1.0 - tx) * ty * value(i0, j0 + 1)
                + tx * ty * value(i0 + 1, j0 + 1),
        )
    }

    /// Nodal gradient by second-order central differences on the (possibly
    /// unequal) stencil arms, Dirichlet zero at cut arms.
    pub fn gradient(&self, values: &[f64]) -> Vec<[f64; 2]> {
        self.stencils
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let u = values[k];
                let mut g = [0.0; 2];
                for (axis, gi) in g.iter_mut().enumerate() {
                    let (ap, am) = (s.arms[2 * axis], s.arms[2 * axis + 1]);
                    let up = s.neighbors[2 * axis].map_or(0.0, |q| values[q]);
                    let um = s.neighbors[2 * axis + 1].map_or(0.0, |q| values[q]);
                    *gi = (am * am * (up - u) + ap * ap * (u - um)) / (ap * am * (ap + am));
                }
                g
            })
            .collect()
    }

    /// Node ordering that keeps the Laplacian banded. On the torus, lattice
    /// rows are interleaved from both ends so the periodic wrap in `y` stays
    /// local.
    pub fn band_ordering(&self) -> Vec<usize> {
        if !self.domain.is_periodic() {
            return (0..self.node_count()).collect();
        }
        let [mx, my] = self.dims;
        let mut rows = Vec::with_capacity(my);
        let (mut lo, mut hi) = (0usize, my);
        while lo < hi {
            rows.push(lo);
            lo += 1;
            if lo < hi {
                hi -= 1;
                rows.push(hi);
            }
        }
        rows.iter()
            .flat_map(|&j| (0..mx).map(move |i| self.index[j * mx + i]))
            .collect()
    }

    /// Interior nodes within distance `radius` of `center`, paired with the
    /// part of their quadrature weight that lies inside the ball.
    pub fn ball_weights(&self, center: Point, radius: f64) -> Vec<(usize, f64)> {
        let h = self.h;
        let reach = radius + h;
        let mut out = Vec::new();
        for (k, &p) in self.nodes.iter().enumerate() {
            let d = self.domain.displacement(center, p);
            if d[0].abs() > reach || d[1].abs() > reach {
                continue;
            }
            let local = [center[0] + d[0], center[1] + d[1]];
            let frac = disk_box_overlap(center, radius, local[0] - 0.5 * h, local[0] + 0.5 * h, local[1] - 0.5 * h, local[1] + 0.5 * h)
                / (h * h);
            if frac > 0.0 {
                out.push((k, frac * self.weights[k]));
            }
        }
        out
    }
}

/// Clipped dual-cell areas. Cell pieces owned by lattice points that are not
/// interior nodes go to adjacent interior nodes so the weights add up to
/// the domain area.
fn dual_cell_weights(
    domain: &Domain,
    h: f64,
    origin: Point,
    dims: [usize; 2],
    index: &[usize],
    lookup: &dyn Fn(i64, i64) -> Option<usize>,
) -> Vec<f64> {
    let count = index.iter().filter(|&&k| k != NO_NODE).count();
    let mut weights = vec![0.0; count];
    for j in -1..=(dims[1] as i64) {
        for i in -1..=(dims[0] as i64) {
            let x = origin[0] + i as f64 * h;
            let y = origin[1] + j as f64 * h;
            let area = domain.box_overlap(x - 0.5 * h, x + 0.5 * h, y - 0.5 * h, y + 0.5 * h);
            if area <= 0.0 {
                continue;
            }
            if let Some(k) = lookup(i, j) {
                weights[k] += area;
                continue;
            }
            let axis: Vec<usize> = DIRS.iter().filter_map(|&(dx, dy)| lookup(i + dx, j + dy)).collect();
            let targets = if !axis.is_empty() {
                axis
            } else {
                let diag: Vec<usize> = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
                    .iter()
                    .filter_map(|&(dx, dy)| lookup(i + dx, j + dy))
                    .collect();
                if !diag.is_empty() {
                    diag
                } else {
                    let mut best: Option<(i64, usize)> = None;
                    for dj in -2..=2i64 {
                        for di in -2..=2i64 {
                            if let Some(k) = lookup(i + di, j + dj) {
                                let d2 = di * di + dj * dj;
                                if best.is_none_or(|(b, _)| d2 < b) {
                                    best = Some((d2, k));
                                }
                            }
                        }
                    }
                    best.map(|(_, k)| vec![k]).unwrap_or_default()
                }
            };
            let share = area / targets.len().max(1) as f64;
            for k in targets {
                weights[k] += share;
            }
        }
    }
    weights
}

/// A real-valued grid function.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::GridMismatch);
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite field value {bad}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.node_count();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: Arc<Grid>, mut f: impl FnMut(Point) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&p| f(p)).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index of the node with the largest `|value|`.
    pub fn argmax_abs(&self) -> usize {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if v.abs() > self.values[best].abs() {
                best = k;
            }
        }
        best
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn value_at(&self, p: Point) -> Option<f64> {
        self.grid.interpolate(&self.values, p)
    }
}
