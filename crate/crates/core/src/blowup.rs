//! Blow-up diagnostics for computed solutions: peaks, local masses, the mass
//! relation, residual vanishing, boundary distance, a Pohozaev defect and the
//! Brezis–Merle inequality.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::greens::{DiskGreen, GreenFunction, NumericGreen, TorusGreen};
use crate::grid::{Domain, Field, Grid};
use crate::kirchhoff::location_residual;
use crate::measure::BetaCoefficients;
use crate::solver::{nonlinearity_field, Denominator, ProblemSpec, Variant};
use crate::Point;

/// Peak height below which a maximum is not treated as a blow-up proxy.
pub const DEFAULT_PEAK_THRESHOLD: f64 = 6.0;
pub const DEFAULT_MIN_SEPARATION: f64 = 0.1;
pub const DEFAULT_RV_RADIUS: f64 = 0.3;
/// Fraction of the distance to the nearest obstacle used as the mass ball radius.
pub const BALL_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    pub location: Point,
    pub node: usize,
    /// `+1` or `-1`, the sign of `v` at the peak.
    pub sign: i8,
    pub height: f64,
}

/// Strict local maxima of `|v|` over the eight lattice neighbours with
/// `|v| ≥ threshold`, thinned greedily so no two kept peaks are closer than
/// `min_separation`. Equal heights are ordered by node index.
pub fn detect_peaks(v: &Field, threshold: f64, min_separation: f64) -> Result<Vec<Peak>> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("peak threshold must be positive, got {threshold}")));
    }
    let grid = v.grid();
    let vals = v.values();
    let beats = |k: usize, q: usize| vals[k].abs() > vals[q].abs() || (vals[k].abs() == vals[q].abs() && k < q);
    let mut candidates: Vec<usize> = (0..grid.node_count())
        .filter(|&k| vals[k].abs() >= threshold)
        .filter(|&k| grid.ring(k).iter().all(|q| q.is_none_or(|q| q == k || beats(k, q))))
        .collect();
    candidates.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()).then(a.cmp(&b)));
    let mut kept: Vec<Peak> = Vec::new();
    for k in candidates {
        let p = grid.node(k);
        if kept.iter().all(|q| grid.domain().distance(p, q.location) >= min_separation) {
            kept.push(Peak {
                location: p,
                node: k,
                sign: if vals[k] >= 0.0 { 1 } else { -1 },
                height: vals[k].abs(),
            });
        }
    }
    Ok(kept)
}

/// A point `(s, t) = (m+, m-)` of the mass plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassPair {
    pub s: f64,
    pub t: f64,
}

fn check_ball(grid: &Grid, center: Point, radius: f64, slack: f64) -> Result<()> {
    let room = match *grid.domain() {
        Domain::FlatTorus { period_x, period_y } => 0.5 * period_x.min(period_y),
        ref d => d.boundary_distance(center) + slack,
    };
    if !(radius > 0.0) || radius > room || !grid.domain().contains(center) {
        return Err(Error::BallExitsDomain { center, radius });
    }
    Ok(())
}

/// Integrals of the positive and negative vorticity densities over
/// `B_r(center)`.
pub fn local_masses(spec: &ProblemSpec, v: &Field, center: Point, radius: f64) -> Result<MassPair> {
    let grid = spec.grid();
    check_ball(grid, center, radius, 0.5 * grid.h())?;
    let (plus, minus) = nonlinearity_field(spec, v)?;
    Ok(masses_in_ball(grid, &plus, &minus, center, radius))
}

fn masses_in_ball(grid: &Grid, plus: &Field, minus: &Field, center: Point, radius: f64) -> MassPair {
    let (mut s, mut t) = (0.0, 0.0);
    for (k, w) in grid.ball_weights(center, radius) {
        s += w * plus.values()[k];
        t += w * minus.values()[k];
    }
    MassPair { s, t }
}

/// `|(m+ - m-)² - 8π(β+ m+ + β- m-)|`.
pub fn mass_relation_residual(m: MassPair, beta: BetaCoefficients) -> f64 {
    ((m.s - m.t).powi(2) - 8.0 * PI * (beta.beta_plus * m.s + beta.beta_minus * m.t)).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    DPlus,
    DMinus,
    Both,
    Neither,
}

/// Membership in `D+ = {s - t > 4πβ+}` and `D- = {t - s > 4πβ-}`.
pub fn classify_mass_pair(m: MassPair, beta: BetaCoefficients) -> Region {
    let plus = m.s - m.t > 4.0 * PI * beta.beta_plus;
    let minus = m.t - m.s > 4.0 * PI * beta.beta_minus;
    match (plus, minus) {
        (true, true) => Region::Both,
        (true, false) => Region::DPlus,
        (false, true) => Region::DMinus,
        (false, false) => Region::Neither,
    }
}

/// Points of the curve `(s - t)² = 8π(β+ s + β- t)` in the closed quadrant,
/// for `s` on a uniform grid of `count` values in `[0, s_max]`. Each `s`
/// yields the roots `t = s + 4πβ- ± √(8π(β+ + β-)s + 16π²β-²)` that are
/// nonnegative.
pub fn sample_curve_c(beta: BetaCoefficients, s_max: f64, count: usize) -> Vec<MassPair> {
    let mut out = Vec::with_capacity(2 * count);
    for k in 0..count {
        let s = if count > 1 { s_max * k as f64 / (count - 1) as f64 } else { 0.0 };
        let centre = s + 4.0 * PI * beta.beta_minus;
        let root = (8.0 * PI * (beta.beta_plus + beta.beta_minus) * s + 16.0 * PI * PI * beta.beta_minus.powi(2)).sqrt();
        out.push(MassPair { s, t: centre + root });
        let low = centre - root;
        if low >= 0.0 {
            out.push(MassPair { s, t: low });
        }
    }
    out
}

/// Sup over nodes outside every `B_r(x0)` of `|v(x) - Σ m(x0) G(x, x0)|`,
/// where `m(x0)` is the net mass `m+ - m-` of the peak at `x0`.
pub fn residual_vanishing_error(v: &Field, peaks: &[(Point, f64)], greens: &dyn GreenFunction, radius: f64) -> Result<f64> {
    if peaks.is_empty() {
        return Err(Error::InvalidArgument("residual vanishing needs at least one peak".into()));
    }
    let grid = v.grid();
    let mut sup: f64 = 0.0;
    for (k, &x) in grid.nodes().iter().enumerate() {
        if peaks.iter().any(|&(p, _)| greens.distance(x, p) < radius) {
            continue;
        }
        let mut model = 0.0;
        for &(p, m) in peaks {
            if m != 0.0 {
                model += m * greens.green(x, p)?;
            }
        }
        sup = sup.max((v.values()[k] - model).abs());
    }
    Ok(sup)
}

/// Smallest distance from a peak to `∂Ω`; `+∞` on the torus or without peaks.
pub fn boundary_distance(peaks: &[Peak], domain: &Domain) -> f64 {
    peaks
        .iter()
        .map(|p| domain.boundary_distance(p.location))
        .fold(f64::INFINITY, f64::min)
}

/// A primitive `Φ` of the right-hand side, `Φ'(v) = f(v)`.
enum Primitive {
    /// `c · m0(v) - κ v`.
    Moment { c: f64, kappa: f64 },
    /// `Σ coeff_a e^{α_a v}`.
    Atoms(Vec<(f64, f64)>),
}

fn primitive(spec: &ProblemSpec, v: &Field) -> Result<Primitive> {
    let grid = spec.grid();
    let lambda = spec.lambda();
    match spec.variant() {
        Variant::Neri | Variant::TorusNeri => {
            let mut m0 = Vec::with_capacity(v.values().len());
            let mut m1 = Vec::with_capacity(v.values().len());
            for &t in v.values() {
                let m = spec.measure().exp_moments(t)?;
                m0.push(m.m0);
                m1.push(m.m1);
            }
            let d = grid.integrate_values(&m0);
            let kappa = if spec.variant() == Variant::TorusNeri {
                lambda * grid.integrate_values(&m1) / (d * grid.domain().area())
            } else {
                0.0
            };
            Ok(Primitive::Moment { c: lambda / d, kappa })
        }
        Variant::Ss => {
            let mut atoms = Vec::new();
            for node in spec.measure().nodes() {
                let e: Vec<f64> = v.values().iter().map(|t| (node.alpha * t).exp()).collect();
                atoms.push((lambda * node.weight / grid.integrate_values(&e), node.alpha));
            }
            Ok(Primitive::Atoms(atoms))
        }
    }
}

impl Primitive {
    fn eval(&self, spec: &ProblemSpec, t: f64) -> Result<f64> {
        match self {
            Primitive::Moment { c, kappa } => Ok(c * spec.measure().exp_moments(t)?.m0 - kappa * t),
            Primitive::Atoms(atoms) => Ok(atoms.iter().map(|(c, a)| c * (a * t).exp()).sum()),
        }
    }
}

/// Defect of the interior-ball Pohozaev identity
/// `r∮(|∇v|²/2 - (∂ₙv)²) - r∮Φ(v) + 2∫_{B_r} Φ(v) = 0` with `Φ' = f`.
pub fn pohozaev_residual(spec: &ProblemSpec, v: &Field, center: Point, radius: f64) -> Result<f64> {
    let grid = spec.grid();
    grid.check(v)?;
    check_ball(grid, center, radius, 0.0)?;
    let phi = primitive(spec, v)?;
    let grad = grid.gradient(v.values());
    let gx: Vec<f64> = grad.iter().map(|g| g[0]).collect();
    let gy: Vec<f64> = grad.iter().map(|g| g[1]).collect();
    let h = grid.h();
    let m = 256usize.max(4 * (2.0 * PI * radius / h).ceil() as usize);
    let ds = 2.0 * PI * radius / m as f64;
    let mut surface = 0.0;
    for j in 0..m {
        let theta = 2.0 * PI * (j as f64 + 0.5) / m as f64;
        let (sin, cos) = theta.sin_cos();
        let p = [center[0] + radius * cos, center[1] + radius * sin];
        let outside = || Error::BallExitsDomain { center, radius };
        let g = [grid.interpolate(&gx, p).ok_or_else(outside)?, grid.interpolate(&gy, p).ok_or_else(outside)?];
        let vp = grid.interpolate(v.values(), p).ok_or_else(outside)?;
        let dn = g[0] * cos + g[1] * sin;
        surface += ((g[0] * g[0] + g[1] * g[1]) / 2.0 - dn * dn - phi.eval(spec, vp)?) * ds;
    }
    let mut volume = 0.0;
    for (k, w) in grid.ball_weights(center, radius) {
        volume += w * phi.eval(spec, v.values()[k])?;
    }
    Ok((radius * surface + 2.0 * volume).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BrezisMerleReport {
    pub delta: f64,
    pub l1_norm: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Solves `-Δu = f` with Dirichlet data and compares
/// `∫ exp((4π - δ)|u| / ‖f‖₁)` with `(4π²/δ) diam(Ω)²`.
pub fn brezis_merle_check(grid: &Arc<Grid>, f: &Field, delta: f64) -> Result<BrezisMerleReport> {
    if grid.domain().is_periodic() {
        return Err(Error::InvalidArgument("the Brezis–Merle check needs a Dirichlet domain".into()));
    }
    if !(delta > 0.0 && delta < 4.0 * PI) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 4π), got {delta}")));
    }
    grid.check(f)?;
    let l1_norm = grid.integrate_values(&f.values().iter().map(|x| x.abs()).collect::<Vec<_>>());
    if !(l1_norm > 0.0) {
        return Err(Error::InvalidArgument("the right-hand side has zero L1 norm".into()));
    }
    let u = grid.poisson_solve(f, false)?;
    let k = (4.0 * PI - delta) / l1_norm;
    let lhs = grid.integrate_values(&u.values().iter().map(|x| (k * x.abs()).exp()).collect::<Vec<_>>());
    let rhs = 4.0 * PI * PI / delta * grid.domain().diameter().powi(2);
    Ok(BrezisMerleReport {
        delta,
        l1_norm,
        lhs,
        rhs,
        holds: lhs <= rhs,
    })
}

/// A seeded random right-hand side: a few Gaussian bumps of random sign,
/// width and centre, some of them sharply concentrated.
pub fn random_rhs(grid: &Arc<Grid>, rng: &mut ChaCha8Rng) -> Field {
    let domain = grid.domain().clone();
    let count = rng.gen_range(1..=4);
    let bumps: Vec<(Point, f64, f64)> = (0..count)
        .map(|_| {
            let c = loop {
                let p = match domain {
                    Domain::Rectangle { width, height } => [rng.gen_range(0.0..width), rng.gen_range(0.0..height)],
                    _ => [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                };
                if domain.contains(p) {
                    break p;
                }
            };
            let width = 10f64.powf(rng.gen_range(-1.7..-0.5));
            (c, rng.gen_range(0.1..10.0), width)
        })
        .collect();
    Field::from_fn(grid.clone(), |p| {
        bumps
            .iter()
            .map(|&(c, a, w)| a * (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (w * w)).exp())
            .sum()
    })
}

/// Runs `cases` random right-hand sides per grid and checks every `delta`.
pub fn brezis_merle_suite(grids: &[Arc<Grid>], cases: usize, deltas: &[f64], seed: u64) -> Result<Vec<BrezisMerleReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for grid in grids {
        for _ in 0..cases {
            let f = random_rhs(grid, &mut rng);
            for &delta in deltas {
                out.push(brezis_merle_check(grid, &f, delta)?);
            }
        }
    }
    Ok(out)
}

/// The Green evaluator used for a domain: analytic on the disk, Fourier on
/// the torus, grid columns at `sources` on rectangles.
pub fn greens_for(grid: &Arc<Grid>, sources: &[Point]) -> Result<Box<dyn GreenFunction>> {
    Ok(match *grid.domain() {
        Domain::UnitDisk => Box::new(DiskGreen),
        Domain::FlatTorus { .. } => Box::new(TorusGreen::for_domain(grid.domain())?),
        Domain::Rectangle { .. } => Box::new(NumericGreen::new(grid.clone(), sources)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisOptions {
    pub peak_threshold: f64,
    pub min_separation: f64,
    /// Mass ball radius; by default a quarter of the distance to the nearest
    /// other peak or the boundary.
    pub ball_radius: Option<f64>,
    /// Further radii at which masses are reported.
    pub extra_radii: Vec<f64>,
    pub rv_radius: f64,
    /// Radii of the Pohozaev balls around each peak; the mass ball when empty.
    pub pohozaev_radii: Vec<f64>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            peak_threshold: DEFAULT_PEAK_THRESHOLD,
            min_separation: DEFAULT_MIN_SEPARATION,
            ball_radius: None,
            extra_radii: Vec::new(),
            rv_radius: DEFAULT_RV_RADIUS,
            pohozaev_radii: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadiusMasses {
    pub radius: f64,
    pub m_plus: f64,
    pub m_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakReport {
    pub location: Point,
    pub sign: i8,
    pub height: f64,
    pub boundary_distance: f64,
    pub ball_radius: f64,
    pub m_plus: f64,
    pub m_minus: f64,
    pub beta_plus: f64,
    pub beta_minus: f64,
    pub mass_relation_residual: f64,
    /// `None` when the peak's net mass vanishes.
    pub location_residual: Option<f64>,
    pub masses_at: Vec<RadiusMasses>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PohozaevEntry {
    pub center: Point,
    pub radius: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupReport {
    pub lambda: f64,
    pub variant: &'static str,
    pub green_method: Option<&'static str>,
    pub peaks: Vec<PeakReport>,
    pub rv_radius: f64,
    /// `None` without peaks.
    pub rv_sup_error: Option<f64>,
    /// `+∞` (written as null) on the torus or without peaks.
    pub min_boundary_distance: f64,
    pub pohozaev_form: &'static str,
    pub pohozaev: Vec<PohozaevEntry>,
    pub denominator: Denominator,
}

fn obstacle_distance(domain: &Domain, peaks: &[Peak], i: usize) -> f64 {
    let wall = match *domain {
        Domain::FlatTorus { period_x, period_y } => 0.5 * period_x.min(period_y),
        ref d => d.boundary_distance(peaks[i].location),
    };
    peaks
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, q)| domain.distance(peaks[i].location, q.location))
        .fold(wall, f64::min)
}

/// Runs every diagnostic on one solution.
pub fn analyze(spec: &ProblemSpec, v: &Field, opts: &AnalysisOptions) -> Result<BlowupReport> {
    let grid = spec.grid();
    grid.check(v)?;
    let domain = grid.domain();
    let peaks = detect_peaks(v, opts.peak_threshold, opts.min_separation)?;
    let (plus, minus) = nonlinearity_field(spec, v)?;
    let extrema = spec.measure().support_extrema();
    let mut reports = Vec::with_capacity(peaks.len());
    for (i, peak) in peaks.iter().enumerate() {
        let radius = opts.ball_radius.unwrap_or(BALL_FRACTION * obstacle_distance(domain, &peaks, i));
        check_ball(grid, peak.location, radius, 0.5 * grid.h())?;
        let m = masses_in_ball(grid, &plus, &minus, peak.location, radius);
        let beta = extrema.beta_pm(peak.sign > 0, peak.sign < 0)?;
        let masses_at = opts
            .extra_radii
            .iter()
            .map(|&r| {
                check_ball(grid, peak.location, r, 0.5 * grid.h())?;
                let m = masses_in_ball(grid, &plus, &minus, peak.location, r);
                Ok(RadiusMasses {
                    radius: r,
                    m_plus: m.s,
                    m_minus: m.t,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(PeakReport {
            location: peak.location,
            sign: peak.sign,
            height: peak.height,
            boundary_distance: domain.boundary_distance(peak.location),
            ball_radius: radius,
            m_plus: m.s,
            m_minus: m.t,
            beta_plus: beta.beta_plus,
            beta_minus: beta.beta_minus,
            mass_relation_residual: mass_relation_residual(m, beta),
            location_residual: None,
            masses_at,
        });
    }

    let mut green_method = None;
    let mut rv_sup_error = None;
    if !peaks.is_empty() {
        let sources: Vec<Point> = peaks.iter().map(|p| p.location).collect();
        let greens = greens_for(grid, &sources)?;
        green_method = Some(greens.method());
        let net: Vec<(Point, f64)> = reports.iter().map(|r| (r.location, r.m_plus - r.m_minus)).collect();
        let nonzero: Vec<usize> = (0..net.len()).filter(|&i| net[i].1 != 0.0).collect();
        let subset: Vec<(Point, f64)> = nonzero.iter().map(|&i| net[i]).collect();
        for (&i, r) in nonzero.iter().zip(location_residual(&subset, greens.as_ref())?) {
            reports[i].location_residual = Some(r);
        }
        rv_sup_error = Some(residual_vanishing_error(v, &net, greens.as_ref(), opts.rv_radius)?);
    }

    let mut pohozaev = Vec::new();
    for report in &reports {
        let radii = if opts.pohozaev_radii.is_empty() {
            vec![report.ball_radius]
        } else {
            opts.pohozaev_radii.clone()
        };
        for radius in radii {
            pohozaev.push(PohozaevEntry {
                center: report.location,
                radius,
                residual: pohozaev_residual(spec, v, report.location, radius)?,
            });
        }
    }

    Ok(BlowupReport {
        lambda: spec.lambda(),
        variant: spec.variant().name(),
        green_method,
        peaks: reports,
        rv_radius: opts.rv_radius,
        rv_sup_error,
        min_boundary_distance: boundary_distance(&peaks, domain),
        pohozaev_form: "interior ball, unit coefficient",
        pohozaev,
        denominator: crate::solver::denominator(spec, v)?,
    })
}
