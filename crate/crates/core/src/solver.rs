//! Damped Newton for the mean-field equations, with λ-continuation.
//!
//! The nonlocal denominators make the Jacobian dense, but only through a
//! few outer products. Each Newton step factors the sparse part once and
//! applies the Sherman–Morrison–Woodbury identity for the rest.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Domain, Field, Grid};
use crate::linalg::{norm_inf, BandedLu, WoodburySolver};
use crate::measure::{IntensityMeasure, EXP_GUARD};
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// One denominator `∬ e^{αv} P(dα) dx` shared by all intensities.
    Neri,
    /// One denominator `∫ e^{α_i v} dx` per atom.
    Ss,
    /// The Neri right-hand side minus its mean, on a flat torus with `∫ v = 0`.
    TorusNeri,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Neri => "neri",
            Variant::Ss => "ss",
            Variant::TorusNeri => "torus-neri",
        }
    }
}

/// Everything that determines one solve.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    grid: Arc<Grid>,
    measure: IntensityMeasure,
    lambda: f64,
    variant: Variant,
}

impl ProblemSpec {
    pub fn new(domain: Domain, n: usize, measure: IntensityMeasure, lambda: f64, variant: Variant) -> Result<Self> {
        Self::on_grid(Grid::build(domain, n)?, measure, lambda, variant)
    }

    pub fn on_grid(grid: Arc<Grid>, measure: IntensityMeasure, lambda: f64, variant: Variant) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidProblem(format!("lambda = {lambda} must be finite and nonnegative")));
        }
        let periodic = grid.domain().is_periodic();
        match variant {
            Variant::TorusNeri if !periodic => {
                return Err(Error::InvalidProblem("torus-neri requires a flat torus".into()));
            }
            Variant::Neri | Variant::Ss if periodic => {
                return Err(Error::InvalidProblem(format!("{} requires a Dirichlet domain", variant.name())));
            }
            _ => {}
        }
        Ok(Self {
            grid,
            measure,
            lambda,
            variant,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::on_grid(self.grid.clone(), self.measure.clone(), lambda, self.variant)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn domain(&self) -> &Domain {
        self.grid.domain()
    }

    pub fn measure(&self) -> &IntensityMeasure {
        &self.measure
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Denominator {
    Single(f64),
    PerAtom(Vec<f64>),
}

impl Denominator {
    pub fn values(&self) -> &[f64] {
        match self {
            Denominator::Single(d) => std::slice::from_ref(d),
            Denominator::PerAtom(d) => d,
        }
    }
}

/// Pointwise data of the nonlinearity at a given `v`.
struct State {
    rhs: Vec<f64>,
    /// `∂ rhs_i / ∂ v_i` with the denominators frozen.
    diag: Vec<f64>,
    /// Outer-product part of `-∂ rhs / ∂ v`: `Σ_a u_a v_aᵀ`.
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    denominator: Denominator,
}

fn guard(alpha: f64, t: f64) -> Result<()> {
    let arg = alpha * t;
    if arg.abs() > EXP_GUARD || !arg.is_finite() {
        Err(Error::Overflow {
            argument: arg,
            limit: EXP_GUARD,
        })
    } else {
        Ok(())
    }
}

fn evaluate(spec: &ProblemSpec, v: &[f64]) -> Result<State> {
    let grid = &spec.grid;
    let w = grid.weights();
    let lambda = spec.lambda;
    let n = v.len();
    match spec.variant {
        Variant::Neri | Variant::TorusNeri => {
            let mut m0 = Vec::with_capacity(n);
            let mut m1 = Vec::with_capacity(n);
            let mut m2 = Vec::with_capacity(n);
            for &t in v {
                let m = spec.measure.exp_moments(t)?;
                m0.push(m.m0);
                m1.push(m.m1);
                m2.push(m.m2);
            }
            let d = grid.integrate_values(&m0);
            let mut rhs: Vec<f64> = m1.iter().map(|m| lambda * m / d).collect();
            let diag: Vec<f64> = m2.iter().map(|m| lambda * m / d).collect();
            let wm1: Vec<f64> = m1.iter().zip(w).map(|(m, w)| m * w).collect();
            let mut u = vec![m1.iter().map(|m| lambda * m / (d * d)).collect::<Vec<_>>()];
            let mut vv = vec![wm1.clone()];
            if spec.variant == Variant::TorusNeri {
                let area = grid.domain().area();
                let s1: f64 = wm1.iter().sum();
                let mean = lambda * s1 / (d * area);
                for r in &mut rhs {
                    *r -= mean;
                }
                // d/dv_j of the subtracted mean, as a row shared by every node
                let row: Vec<f64> = (0..n)
                    .map(|j| lambda / area * (w[j] * m2[j] / d - s1 * wm1[j] / (d * d)))
                    .collect();
                u.push(vec![1.0; n]);
                vv.push(row);
            }
            Ok(State {
                rhs,
                diag,
                u,
                v: vv,
                denominator: Denominator::Single(d),
            })
        }
        Variant::Ss => {
            let atoms = spec.measure.nodes();
            let mut rhs = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut u = Vec::with_capacity(atoms.len());
            let mut vv = Vec::with_capacity(atoms.len());
            let mut dens = Vec::with_capacity(atoms.len());
            for atom in atoms {
                let mut e = Vec::with_capacity(n);
                for &t in v {
                    guard(atom.alpha, t)?;
                    e.push((atom.alpha * t).exp());
                }
                let d = grid.integrate_values(&e);
                let c = lambda * atom.weight * atom.alpha / d;
                for i in 0..n {
                    rhs[i] += c * e[i];
                    diag[i] += c * atom.alpha * e[i];
                }
                u.push(e.iter().map(|e| c * e / d).collect());
                vv.push(e.iter().zip(w).map(|(e, w)| atom.alpha * e * w).collect());
                dens.push(d);
            }
            Ok(State {
                rhs,
                diag,
                u,
                v: vv,
                denominator: Denominator::PerAtom(dens),
            })
        }
    }
}

fn residual_values(spec: &ProblemSpec, v: &[f64]) -> Result<(Vec<f64>, State)> {
    let state = evaluate(spec, v)?;
    let lap = spec.grid.laplacian().mul(v);
    let f = lap.iter().zip(&state.rhs).map(|(l, r)| -l - r).collect();
    Ok((f, state))
}

/// `F(v) = -Δ_h v - (right-hand side)`.
pub fn residual(spec: &ProblemSpec, v: &Field) -> Result<Field> {
    spec.grid.check(v)?;
    let (f, _) = residual_values(spec, v.values())?;
    Field::new(spec.grid.clone(), f)
}

/// The Jacobian of `F` at `v` applied to `w`.
pub fn jacobian_apply(spec: &ProblemSpec, v: &Field, w: &[f64]) -> Result<Vec<f64>> {
    spec.grid.check(v)?;
    if w.len() != v.values().len() {
        return Err(Error::GridMismatch);
    }
    let state = evaluate(spec, v.values())?;
    let mut out: Vec<f64> = spec.grid.laplacian().mul(w).iter().map(|l| -l).collect();
    for i in 0..w.len() {
        out[i] -= state.diag[i] * w[i];
    }
    for (u, vv) in state.u.iter().zip(&state.v) {
        let s: f64 = vv.iter().zip(w).map(|(a, b)| a * b).sum();
        for (o, ui) in out.iter_mut().zip(u) {
            *o += ui * s;
        }
    }
    Ok(out)
}

/// Factorization of the Newton matrix at a given state.
fn newton_solver(spec: &ProblemSpec, state: &State) -> Result<WoodburySolver> {
    let grid = &spec.grid;
    let n = grid.node_count();
    let shift: Vec<f64> = state.diag.iter().map(|d| -d).collect();
    let mut u = state.u.clone();
    let mut v = state.v.clone();
    let mut sparse = grid.laplacian().scaled_plus_diagonal(-1.0, &shift);
    if spec.variant == Variant::TorusNeri {
        // Newton on F(v) + 1·(∫v)/|Ω| fixes the additive constant.
        let area = grid.domain().area();
        u.push(vec![1.0; n]);
        v.push(grid.weights().iter().map(|w| w / area).collect());
        // Pin one node so the periodic operator factors, and undo the pin in
        // the low-rank part.
        let gamma = 4.0 / (grid.h() * grid.h());
        let pin = 0;
        let mut e = vec![0.0; n];
        e[pin] = 1.0;
        let mut pin_diag = vec![0.0; n];
        pin_diag[pin] = gamma;
        sparse = sparse.scaled_plus_diagonal(1.0, &pin_diag);
        u.push(e.iter().map(|x| -gamma * x).collect());
        v.push(e);
    }
    let lu = BandedLu::factor(&sparse, Some(&grid.band_ordering()))?;
    match WoodburySolver::new(lu, u, v) {
        Err(Error::Singular(_)) => Err(Error::SingularCapacitance { lambda: spec.lambda }),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 50,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub v: Field,
    pub residual_norm: f64,
    pub newton_iters: usize,
    pub denominator: Denominator,
    pub converged: bool,
    /// `‖δ_k‖_∞` of every accepted full Newton step.
    pub increments: Vec<f64>,
}

fn project_zero_mean(grid: &Grid, v: &mut [f64]) {
    let mean = grid.integrate_values(v) / grid.domain().area();
    for x in v.iter_mut() {
        *x -= mean;
    }
}

/// Damped Newton on `F(v) = 0` from `v0`. Budget exhaustion and line-search
/// stalls return `converged = false`; overflow at `v0` and singular
/// capacitance are errors.
pub fn solve_newton(spec: &ProblemSpec, v0: &Field, opts: SolveOptions) -> Result<SolveResult> {
    spec.grid.check(v0)?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {} must be positive", opts.tol)));
    }
    let grid = &spec.grid;
    let mut v = v0.values().to_vec();
    if spec.variant == Variant::TorusNeri {
        project_zero_mean(grid, &mut v);
    }
    let (mut f, mut state) = residual_values(spec, &v)?;
    let mut norm = norm_inf(&f);
    let mut increments = Vec::new();
    let mut iters = 0;
    let mut stalled = false;
    while norm > opts.tol && iters < opts.max_iter {
        iters += 1;
        let solver = newton_solver(spec, &state)?;
        let mut rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        if spec.variant == Variant::TorusNeri {
            let mean = grid.integrate_values(&v) / grid.domain().area();
            for r in &mut rhs {
                *r -= mean;
            }
        }
        let delta = solver.solve(&rhs);
        let step_norm = norm_inf(&delta);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut trial: Vec<f64> = v.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
            if spec.variant == Variant::TorusNeri {
                project_zero_mean(grid, &mut trial);
            }
            if let Ok((ft, st)) = residual_values(spec, &trial) {
                let nt = norm_inf(&ft);
                if nt < norm {
                    accepted = Some((trial, ft, st, nt));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, ft, st, nt)) => {
                if t == 1.0 {
                    increments.push(step_norm);
                }
                v = trial;
                f = ft;
                state = st;
                norm = nt;
            }
            None => {
                stalled = true;
                break;
            }
        }
    }
    let converged = norm <= opts.tol && !stalled;
    Ok(SolveResult {
        v: Field::new(grid.clone(), v)?,
        residual_norm: norm,
        newton_iters: iters,
        denominator: state.denominator,
        converged,
        increments,
    })
}

/// The normalizing integrals at `v`: `D` for the single-denominator
/// variants, one `D_a` per atom otherwise.
pub fn denominator(spec: &ProblemSpec, v: &Field) -> Result<Denominator> {
    spec.grid.check(v)?;
    Ok(evaluate(spec, v.values())?.denominator)
}

/// The densities of the positive and negative vorticity measures:
/// `λ ∫_{I±} |α| e^{αv} P(dα) / D` pointwise.
pub fn nonlinearity_field(spec: &ProblemSpec, v: &Field) -> Result<(Field, Field)> {
    spec.grid.check(v)?;
    let grid = &spec.grid;
    let lambda = spec.lambda;
    let n = grid.node_count();
    let (mut plus, mut minus) = (vec![0.0; n], vec![0.0; n]);
    match spec.variant {
        Variant::Neri | Variant::TorusNeri => {
            let mut m0 = Vec::with_capacity(n);
            for (i, &t) in v.values().iter().enumerate() {
                m0.push(spec.measure.exp_moments(t)?.m0);
                let (p, m) = spec.measure.one_sided_moments(t);
                plus[i] = p;
                minus[i] = m;
            }
            let d = grid.integrate_values(&m0);
            for x in plus.iter_mut().chain(minus.iter_mut()) {
                *x *= lambda / d;
            }
        }
        Variant::Ss => {
            for atom in spec.measure.nodes() {
                let mut e = Vec::with_capacity(n);
                for &t in v.values() {
                    guard(atom.alpha, t)?;
                    e.push((atom.alpha * t).exp());
                }
                let d = grid.integrate_values(&e);
                let c = lambda * atom.weight * atom.alpha.abs() / d;
                let target = if atom.alpha >= 0.0 { &mut plus } else { &mut minus };
                for (x, e) in target.iter_mut().zip(&e) {
                    *x += c * e;
                }
            }
        }
    }
    Ok((Field::new(grid.clone(), plus)?, Field::new(grid.clone(), minus)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum SeedPolicy {
    Zero,
    Previous,
    /// Previous solution (zero before the first) plus
    /// `amplitude · exp(-|x - center|² / width²)`.
    PreviousPlusBump { center: Point, amplitude: f64, width: f64 },
}

impl SeedPolicy {
    /// The initial guess on `grid` given the previous solution, if any.
    pub fn initial_guess(&self, grid: &Arc<Grid>, previous: Option<&Field>) -> Field {
        let base = |g: &Arc<Grid>| previous.cloned().unwrap_or_else(|| Field::zeros(g.clone()));
        match *self {
            SeedPolicy::Zero => Field::zeros(grid.clone()),
            SeedPolicy::Previous => base(grid),
            SeedPolicy::PreviousPlusBump { center, amplitude, width } => {
                let b = base(grid);
                let values = b
                    .values()
                    .iter()
                    .zip(grid.nodes())
                    .map(|(v, p)| v + bump(grid.domain(), center, amplitude, width, *p))
                    .collect();
                Field::new(grid.clone(), values).expect("bump values are finite")
            }
        }
    }
}

/// `amplitude · exp(-|p - center|² / width²)`, with the minimal image on the torus.
pub fn bump(domain: &Domain, center: Point, amplitude: f64, width: f64, p: Point) -> f64 {
    let d = domain.distance(center, p);
    amplitude * (-(d * d) / (width * width)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub lambda: f64,
    pub max_v: f64,
    pub min_v: f64,
    pub residual: f64,
    pub newton_iters: usize,
    pub converged: bool,
    pub peak: Point,
    pub denominator: Denominator,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldCandidate {
    pub lambda: f64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ContinuationTrace {
    pub entries: Vec<TraceEntry>,
    /// Converged solutions, one per entry.
    pub solutions: Vec<Field>,
    /// Set when the ladder stopped before its last λ.
    pub stopped: Option<FoldCandidate>,
}

impl ContinuationTrace {
    pub fn completed(&self) -> bool {
        self.stopped.is_none()
    }
}

/// Solves along an ascending λ ladder, warm-starting per `seed`, and stops at
/// the first λ that does not converge.
pub fn continuation(base: &ProblemSpec, lambdas: &[f64], seed: SeedPolicy, opts: SolveOptions) -> Result<ContinuationTrace> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty lambda list".into()));
    }
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("lambda list must be strictly increasing".into()));
    }
    let mut trace = ContinuationTrace {
        entries: Vec::new(),
        solutions: Vec::new(),
        stopped: None,
    };
    for &lambda in lambdas {
        let spec = base.with_lambda(lambda)?;
        let v0 = seed.initial_guess(&spec.grid, trace.solutions.last());
        let outcome = solve_newton(&spec, &v0, opts);
        let failure = match outcome {
            Ok(result) if result.converged => {
                let peak = result.v.grid().node(result.v.argmax_abs());
                trace.entries.push(TraceEntry {
                    lambda,
                    max_v: result.v.max(),
                    min_v: result.v.min(),
                    residual: result.residual_norm,
                    newton_iters: result.newton_iters,
                    converged: true,
                    peak,
                    denominator: result.denominator,
                });
                trace.solutions.push(result.v);
                continue;
            }
            Ok(result) => Error::NotConverged {
                lambda,
                residual: result.residual_norm,
                iterations: result.newton_iters,
            },
            Err(e) => e,
        };
        if trace.entries.is_empty() {
            return Err(failure);
        }
        trace.stopped = Some(FoldCandidate {
            lambda,
            reason: failure.to_string(),
        });
        break;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn liouville_exact(mu: f64, p: Point) -> f64 {
        2.0 * ((1.0 + mu) / (1.0 + mu * (p[0] * p[0] + p[1] * p[1]))).ln()
    }

    fn liouville_lambda(mu: f64) -> f64 {
        8.0 * PI * mu / (1.0 + mu)
    }

    #[test]
    fn residual_at_zero() {
        let sinh = ProblemSpec::new(Domain::UnitDisk, 32, IntensityMeasure::sinh(), 5.0, Variant::Neri).unwrap();
        let zero = Field::zeros(sinh.grid().clone());
        assert!(residual(&sinh, &zero).unwrap().max_abs() == 0.0);
        let liou = ProblemSpec::new(Domain::UnitDisk, 32, IntensityMeasure::liouville(), 5.0, Variant::Neri).unwrap();
        let f = residual(&liou, &zero).unwrap();
        let area = liou.grid().integrate_values(&vec![1.0; liou.grid().node_count()]);
        assert!(f.values().iter().all(|x| (x + 5.0 / area).abs() < 1e-14));
    }

    #[test]
    fn invalid_specs() {
        let m = IntensityMeasure::liouville();
        assert!(ProblemSpec::new(Domain::UnitDisk, 16, m.clone(), -1.0, Variant::Neri).is_err());
        assert!(ProblemSpec::new(Domain::UnitDisk, 16, m.clone(), 1.0, Variant::TorusNeri).is_err());
        let torus = Domain::FlatTorus { period_x: 1.0, period_y: 1.0 };
        assert!(ProblemSpec::new(torus, 16, m, 1.0, Variant::Neri).is_err());
    }

    #[test]
    fn liouville_residual_of_exact_solution() {
        // regular rows are second order; cut-cell rows carry the O(h) local
        // truncation of the unequal-arm stencil
        let mut regular = Vec::new();
        let mut all = Vec::new();
        for n in [32, 64, 128] {
            let spec = ProblemSpec::new(Domain::UnitDisk, n, IntensityMeasure::liouville(), liouville_lambda(1.0), Variant::Neri).unwrap();
            let v = Field::from_fn(spec.grid().clone(), |p| liouville_exact(1.0, p));
            let f = residual(&spec, &v).unwrap();
            let reg = f
                .values()
                .iter()
                .zip(spec.grid().stencils())
                .filter(|(_, s)| !s.is_cut())
                .fold(0.0f64, |m, (x, _)| m.max(x.abs()));
            regular.push(reg / (spec.grid().h() * spec.grid().h()));
            all.push(f.max_abs() / spec.grid().h());
        }
        assert!(regular.iter().all(|c| *c < 5.0), "{regular:?}");
        assert!(all.iter().all(|c| *c < 5.0), "{all:?}");
    }

    #[test]
    fn liouville_newton_matches_family() {
        let mu = 1.0;
        let spec = ProblemSpec::new(Domain::UnitDisk, 64, IntensityMeasure::liouville(), liouville_lambda(mu), Variant::Neri).unwrap();
        let v0 = Field::from_fn(spec.grid().clone(), |p| bump(spec.domain(), [0.0, 0.0], 1.0, 0.5, p));
        let r = solve_newton(&spec, &v0, SolveOptions::default()).unwrap();
        assert!(r.converged);
        let err = r
            .v
            .values()
            .iter()
            .zip(spec.grid().nodes())
            .map(|(v, p)| (v - liouville_exact(mu, *p)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-2, "{err}");
        // ‖δ_{k+1}‖ ≤ C ‖δ_k‖^1.7 over the last three full steps, C = 1
        let inc = &r.increments;
        assert!(inc.len() >= 3, "{inc:?}");
        for w in inc[inc.len() - 3..].windows(2) {
            assert!(w[1] <= w[0].powf(1.7), "{inc:?}");
        }
    }

    #[test]
    fn trivial_solutions() {
        let spec = ProblemSpec::new(Domain::UnitDisk, 32, IntensityMeasure::liouville(), 0.0, Variant::Neri).unwrap();
        let r = solve_newton(&spec, &Field::zeros(spec.grid().clone()), SolveOptions::default()).unwrap();
        assert!(r.converged && r.v.max_abs() == 0.0 && r.newton_iters == 0);
        let spec = ProblemSpec::new(Domain::UnitDisk, 32, IntensityMeasure::sinh(), 10.0, Variant::Neri).unwrap();
        let r = solve_newton(&spec, &Field::zeros(spec.grid().clone()), SolveOptions::default()).unwrap();
        assert!(r.converged && r.v.max_abs() == 0.0 && r.newton_iters <= 1);
    }

    fn random_field(grid: &Arc<Grid>, rng: &mut rand_chacha::ChaCha8Rng, amp: f64) -> Field {
        let values = (0..grid.node_count()).map(|_| rng.gen_range(-amp..amp)).collect();
        Field::new(grid.clone(), values).unwrap()
    }

    fn specs() -> Vec<ProblemSpec> {
        let torus = Domain::FlatTorus { period_x: 1.0, period_y: 1.0 };
        let mixed = IntensityMeasure::atomic(&[(1.0, 0.3), (-0.6, 0.5), (0.2, 0.2)]).unwrap();
        vec![
            ProblemSpec::new(Domain::UnitDisk, 16, IntensityMeasure::liouville(), 7.0, Variant::Neri).unwrap(),
            ProblemSpec::new(Domain::Rectangle { width: 1.0, height: 1.0 }, 16, mixed.clone(), 9.0, Variant::Neri).unwrap(),
            ProblemSpec::new(Domain::UnitDisk, 16, mixed.clone(), 9.0, Variant::Ss).unwrap(),
            ProblemSpec::new(torus, 16, mixed, 9.0, Variant::TorusNeri).unwrap(),
        ]
    }

    #[test]
    fn jacobian_matches_directional_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for spec in specs() {
            for _ in 0..10 {
                let v = random_field(spec.grid(), &mut rng, 1.0);
                let w = random_field(spec.grid(), &mut rng, 1.0);
                let eps = 1e-6;
                let plus = Field::new(spec.grid().clone(), v.values().iter().zip(w.values()).map(|(a, b)| a + eps * b).collect()).unwrap();
                let minus = Field::new(spec.grid().clone(), v.values().iter().zip(w.values()).map(|(a, b)| a - eps * b).collect()).unwrap();
                let fd: Vec<f64> = residual(&spec, &plus)
                    .unwrap()
                    .values()
                    .iter()
                    .zip(residual(&spec, &minus).unwrap().values())
                    .map(|(a, b)| (a - b) / (2.0 * eps))
                    .collect();
                let jw = jacobian_apply(&spec, &v, w.values()).unwrap();
                let diff: Vec<f64> = fd.iter().zip(&jw).map(|(a, b)| a - b).collect();
                let rel = norm_inf(&diff) / norm_inf(&jw);
                assert!(rel <= 1e-5, "{:?}: {rel}", spec.variant());
            }
        }
    }

    #[test]
    fn woodbury_solve_inverts_jacobian() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for spec in specs() {
            let v = random_field(spec.grid(), &mut rng, 0.5);
            let state = evaluate(&spec, v.values()).unwrap();
            let solver = newton_solver(&spec, &state).unwrap();
            let b = random_field(spec.grid(), &mut rng, 1.0);
            let x = solver.solve(b.values());
            let mut jx = jacobian_apply(&spec, &v, &x).unwrap();
            if spec.variant() == Variant::TorusNeri {
                let c = spec.grid().integrate_values(&x) / spec.domain().area();
                for y in &mut jx {
                    *y += c;
                }
            }
            let diff: Vec<f64> = jx.iter().zip(b.values()).map(|(a, b)| a - b).collect();
            assert!(norm_inf(&diff) < 1e-8, "{:?}: {}", spec.variant(), norm_inf(&diff));
        }
    }

    #[test]
    fn sinh_negation_symmetry() {
        let spec = ProblemSpec::new(Domain::UnitDisk, 32, IntensityMeasure::sinh(), 30.0, Variant::Neri).unwrap();
        let g = spec.grid().clone();
        let v0 = Field::from_fn(g.clone(), |p| bump(spec.domain(), [0.1, 0.0], 4.0, 0.3, p));
        let neg = v0.map(|x| -x);
        let a = solve_newton(&spec, &v0, SolveOptions::default()).unwrap();
        let b = solve_newton(&spec, &neg, SolveOptions::default()).unwrap();
        assert!(a.converged && b.converged);
        let diff = a.v.values().iter().zip(b.v.values()).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-8, "{diff}");
    }

    #[test]
    fn torus_iterates_have_zero_mean() {
        let torus = Domain::FlatTorus { period_x: 1.0, period_y: 1.0 };
        let spec = ProblemSpec::new(torus, 24, IntensityMeasure::sinh(), 20.0, Variant::TorusNeri).unwrap();
        let zero = Field::zeros(spec.grid().clone());
        assert!(residual(&spec, &zero).unwrap().max_abs() <= 1e-12);
        let v0 = Field::from_fn(spec.grid().clone(), |p| bump(spec.domain(), [0.5, 0.5], 2.0, 0.2, p));
        let r = solve_newton(&spec, &v0, SolveOptions::default()).unwrap();
        assert!(r.converged);
        assert!(spec.grid().integrate(&r.v).unwrap().abs() <= 1e-10);
        let liou = ProblemSpec::new(torus, 24, IntensityMeasure::liouville(), 4.0, Variant::TorusNeri).unwrap();
        let r = solve_newton(&liou, &v0, SolveOptions::default()).unwrap();
        assert!(r.converged && r.v.max_abs() < 1e-8);
    }

    #[test]
    fn nonlinearity_fields() {
        let spec = ProblemSpec::new(Domain::UnitDisk, 32, IntensityMeasure::sinh(), 6.0, Variant::Neri).unwrap();
        let zero = Field::zeros(spec.grid().clone());
        let (p, m) = nonlinearity_field(&spec, &zero).unwrap();
        let d = spec.grid().integrate_values(&vec![1.0; spec.grid().node_count()]);
        assert!(p.values().iter().chain(m.values()).all(|x| (x - 6.0 / (2.0 * d)).abs() < 1e-14));

        let spec = ProblemSpec::new(Domain::UnitDisk, 32, IntensityMeasure::liouville(), 6.0, Variant::Neri).unwrap();
        let v = Field::from_fn(spec.grid().clone(), |p| liouville_exact(0.5, p));
        let (_, m) = nonlinearity_field(&spec, &v).unwrap();
        assert_eq!(m.max_abs(), 0.0);

        // total |α|-weighted mass against a direct quadrature
        let measure = IntensityMeasure::atomic(&[(0.8, 0.5), (-0.4, 0.3), (0.1, 0.2)]).unwrap();
        let spec = ProblemSpec::new(Domain::UnitDisk, 32, measure.clone(), 6.0, Variant::Neri).unwrap();
        let g = spec.grid().clone();
        let v = Field::from_fn(g.clone(), |p| 1.0 - p[0] * p[0] - 2.0 * p[1]);
        let (p, m) = nonlinearity_field(&spec, &v).unwrap();
        let total = g.integrate(&p).unwrap() + g.integrate(&m).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for (k, w) in g.weights().iter().enumerate() {
            let t = v.values()[k];
            for (a, q) in [(0.8, 0.5), (-0.4, 0.3), (0.1, 0.2)] {
                num += w * q * f64::abs(a) * (a * t).exp();
                den += w * q * (a * t).exp();
            }
        }
        assert!((total - 6.0 * num / den).abs() < 1e-12);
    }

    #[test]
    fn signed_mass_identity() {
        let measure = IntensityMeasure::atomic(&[(1.0, 0.6), (-0.5, 0.4)]).unwrap();
        let spec = ProblemSpec::new(Domain::UnitDisk, 48, measure, 15.0, Variant::Neri).unwrap();
        let v0 = Field::from_fn(spec.grid().clone(), |p| bump(spec.domain(), [0.0, 0.0], 1.0, 0.4, p));
        let r = solve_newton(&spec, &v0, SolveOptions::default()).unwrap();
        assert!(r.converged);
        let (p, m) = nonlinearity_field(&spec, &r.v).unwrap();
        let g = spec.grid();
        let signed = g.integrate(&p).unwrap() - g.integrate(&m).unwrap();
        let flux = -g.integrate(&g.laplacian_apply(&r.v).unwrap()).unwrap();
        assert!((signed - flux).abs() <= 1e-6 * signed.abs(), "{signed} vs {flux}");
    }

    #[test]
    fn continuation_liouville_ladder() {
        let base = ProblemSpec::new(Domain::UnitDisk, 48, IntensityMeasure::liouville(), 0.0, Variant::Neri).unwrap();
        let lambdas: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|&m| liouville_lambda(m)).collect();
        let t = continuation(&base, &lambdas, SeedPolicy::Previous, SolveOptions::default()).unwrap();
        assert!(t.completed());
        assert_eq!(t.solutions.len(), 3);
        assert!(t.entries.windows(2).all(|w| w[1].max_v > w[0].max_v));

        let past = continuation(&base, &[liouville_lambda(1.0), 8.0 * PI + 1.0], SeedPolicy::Previous, SolveOptions::default()).unwrap();
        assert_eq!(past.entries.len(), 1);
        assert!(past.stopped.is_some());

        assert!(continuation(&base, &[2.0, 1.0], SeedPolicy::Zero, SolveOptions::default()).is_err());
        assert!(continuation(&base, &[], SeedPolicy::Zero, SolveOptions::default()).is_err());
    }

    #[test]
    fn ss_with_single_atom_matches_neri() {
        let m = IntensityMeasure::liouville();
        let a = ProblemSpec::new(Domain::UnitDisk, 24, m.clone(), 9.0, Variant::Neri).unwrap();
        let b = ProblemSpec::new(Domain::UnitDisk, 24, m, 9.0, Variant::Ss).unwrap();
        let v = Field::from_fn(a.grid().clone(), |p| 1.0 - p[0] * p[0] - p[1] * p[1]);
        let fa = residual(&a, &v).unwrap();
        let fb = residual(&b, &Field::new(b.grid().clone(), v.values().to_vec()).unwrap()).unwrap();
        let diff = fa.values().iter().zip(fb.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn overflow_is_an_error() {
        let spec = ProblemSpec::new(Domain::UnitDisk, 16, IntensityMeasure::sinh(), 1.0, Variant::Ss).unwrap();
        let v = Field::from_fn(spec.grid().clone(), |_| 800.0);
        assert!(matches!(residual(&spec, &v), Err(Error::Overflow { .. })));
        let spec = spec.with_lambda(2.0).unwrap();
        let neri = ProblemSpec::on_grid(spec.grid().clone(), IntensityMeasure::sinh(), 1.0, Variant::Neri).unwrap();
        assert!(residual(&neri, &v).is_err());
    }
}
