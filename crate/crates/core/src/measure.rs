//! Probability measures on the intensity interval [-1, 1].
//!
//! Every measure is stored as a finite list of weighted nodes. Atomic
//! measures keep their atoms verbatim; continuous densities are replaced by a
//! Gauss–Legendre rule once, at construction, and never re-quadratured.

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest |t| accepted by [`IntensityMeasure::exp_moments`]. `exp(750)` is
/// still finite in f64 while `exp(710)` times a weight sum is not guaranteed
/// to be, so callers are expected to stay well inside.
pub const EXP_GUARD: f64 = 750.0;

const NORMALIZATION_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum MeasureKind {
    Atomic,
    /// Quadrature of a density declared on `[a, b]`.
    Quadrature { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Node {
    pub alpha: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntensityMeasure {
    nodes: Vec<Node>,
    kind: MeasureKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportExtrema {
    pub alpha_minus_star: f64,
    pub alpha_plus_star: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaCoefficients {
    pub beta_plus: f64,
    pub beta_minus: f64,
}

/// `m0 = ∫e^{αt}P(dα)`, `m1 = ∫αe^{αt}P(dα)`, `m2 = ∫α²e^{αt}P(dα)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
}

/// Built-in densities accepted by the scenario grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Density {
    Uniform,
    /// `1 - α²`
    Parabolic,
}

impl Density {
    pub fn eval(self, alpha: f64) -> f64 {
        match self {
            Density::Uniform => 1.0,
            Density::Parabolic => 1.0 - alpha * alpha,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Density::Uniform => "uniform",
            Density::Parabolic => "parabolic",
        }
    }
}

impl IntensityMeasure {
    /// Builds a finitely supported measure from `(alpha, weight)` pairs.
    /// Weights are rescaled to sum to one; equal alphas are merged.
    pub fn atomic(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidMeasure("empty atom list".into()));
        }
        for &(alpha, weight) in pairs {
            if !alpha.is_finite() || !(-1.0..=1.0).contains(&alpha) {
                return Err(Error::InvalidMeasure(format!("alpha {alpha} outside [-1, 1]")));
            }
            if !(weight.is_finite() && weight > 0.0) {
                return Err(Error::InvalidMeasure(format!("weight {weight} must be positive")));
            }
        }
        let nodes = merge_and_normalize(pairs.iter().map(|&(alpha, weight)| Node { alpha, weight }));
        Ok(Self {
            nodes,
            kind: MeasureKind::Atomic,
        })
    }

    /// `δ_{+1}`: the Liouville case.
    pub fn liouville() -> Self {
        Self::atomic(&[(1.0, 1.0)]).expect("static measure")
    }

    /// `(δ_{+1} + δ_{-1}) / 2`: the sinh-Poisson case.
    pub fn sinh() -> Self {
        Self::atomic(&[(1.0, 0.5), (-1.0, 0.5)]).expect("static measure")
    }

    /// `(δ_{α+} + δ_{α-}) / 2` built from the support extrema of another measure.
    pub fn model_case(extrema: SupportExtrema) -> Result<Self> {
        Self::atomic(&[(extrema.alpha_plus_star, 0.5), (extrema.alpha_minus_star, 0.5)])
    }

    /// Gauss–Legendre discretization of `density` on `[a, b]`, normalized.
    pub fn quadrature<F>(density: F, a: f64, b: f64, n_nodes: usize) -> Result<Self>
    where
        F: Fn(f64) -> f64,
    {
        if n_nodes < 2 {
            return Err(Error::InvalidMeasure(format!("need at least 2 nodes, got {n_nodes}")));
        }
        if !(a.is_finite() && b.is_finite() && -1.0 <= a && a < b && b <= 1.0) {
            return Err(Error::InvalidMeasure(format!("support [{a}, {b}] is not a subinterval of [-1, 1]")));
        }
        let (xs, ws) = gauss_legendre(n_nodes);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let mut raw = Vec::with_capacity(n_nodes);
        for (x, w) in xs.iter().zip(&ws) {
            let alpha = mid + half * x;
            let value = density(alpha);
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidMeasure(format!("density is {value} at alpha = {alpha}")));
            }
            if value > 0.0 {
                raw.push(Node {
                    alpha,
                    weight: w * half * value,
                });
            }
        }
        let total: f64 = raw.iter().map(|n| n.weight).sum();
        if raw.is_empty() || total <= 0.0 {
            return Err(Error::InvalidMeasure("density integrates to zero".into()));
        }
        Ok(Self {
            nodes: merge_and_normalize(raw.into_iter()),
            kind: MeasureKind::Quadrature { a, b },
        })
    }

    pub fn from_density(density: Density, a: f64, b: f64, n_nodes: usize) -> Result<Self> {
        Self::quadrature(|alpha| density.eval(alpha), a, b, n_nodes)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `min supp P` and `max supp P`. Quadrature measures report their
    /// declared interval, which contains the Gauss nodes strictly inside.
    pub fn support_extrema(&self) -> SupportExtrema {
        match self.kind {
            MeasureKind::Quadrature { a, b } => SupportExtrema {
                alpha_minus_star: a,
                alpha_plus_star: b,
            },
            MeasureKind::Atomic => SupportExtrema {
                alpha_minus_star: self.nodes[0].alpha,
                alpha_plus_star: self.nodes[self.nodes.len() - 1].alpha,
            },
        }
    }

    pub fn exp_moments(&self, t: f64) -> Result<Moments> {
        if !t.is_finite() || t.abs() > EXP_GUARD {
            return Err(Error::Overflow {
                argument: t,
                limit: EXP_GUARD,
            });
        }
        Ok(self.exp_moments_unchecked(t))
    }

    /// Moments without the guard check; callers must have validated `t`.
    pub(crate) fn exp_moments_unchecked(&self, t: f64) -> Moments {
        let mut m = Moments {
            m0: 0.0,
            m1: 0.0,
            m2: 0.0,
        };
        for node in &self.nodes {
            let e = node.weight * (node.alpha * t).exp();
            m.m0 += e;
            m.m1 += node.alpha * e;
            m.m2 += node.alpha * node.alpha * e;
        }
        m
    }

    /// `(∫_{I+} |α| e^{αt} P(dα), ∫_{I-} |α| e^{αt} P(dα))` with `I+ = [0, 1]`,
    /// `I- = [-1, 0)`.
    pub(crate) fn one_sided_moments(&self, t: f64) -> (f64, f64) {
        let mut plus = 0.0;
        let mut minus = 0.0;
        for node in &self.nodes {
            let e = node.weight * (node.alpha * t).exp();
            if node.alpha >= 0.0 {
                plus += node.alpha * e;
            } else {
                minus -= node.alpha * e;
            }
        }
        (plus, minus)
    }

    pub fn max_abs_alpha(&self) -> f64 {
        self.nodes.iter().map(|n| n.alpha.abs()).fold(0.0, f64::max)
    }
}

impl SupportExtrema {
    /// `β± = 1/|α±*|` when the corresponding one-sided blow-up flag is set.
    pub fn beta_pm(&self, blows_up_plus: bool, blows_up_minus: bool) -> Result<BetaCoefficients> {
        let beta = |flag: bool, alpha: f64, side: &'static str| -> Result<f64> {
            if !flag {
                Ok(0.0)
            } else if alpha == 0.0 {
                Err(Error::ZeroExtremalIntensity { side })
            } else {
                Ok(1.0 / alpha.abs())
            }
        };
        Ok(BetaCoefficients {
            beta_plus: beta(blows_up_plus, self.alpha_plus_star, "plus")?,
            beta_minus: beta(blows_up_minus, self.alpha_minus_star, "minus")?,
        })
    }
}

fn merge_and_normalize(nodes: impl Iterator<Item = Node>) -> Vec<Node> {
    let mut nodes: Vec<Node> = nodes.collect();
    nodes.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    let mut merged: Vec<Node> = Vec::with_capacity(nodes.len());
    for node in nodes {
        match merged.last_mut() {
            Some(last) if last.alpha == node.alpha => last.weight += node.weight,
            _ => merged.push(node),
        }
    }
    let total: f64 = merged.iter().map(|n| n.weight).sum();
    // Already-normalized input is kept bit-for-bit so rebuilding is idempotent.
    if (total - 1.0).abs() <= NORMALIZATION_TOL {
        return merged;
    }
    for node in &mut merged {
        node.weight /= total;
    }
    merged
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi's initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = -x;
        xs[n - 1 - i] = x;
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        xs[n / 2] = 0.0;
    }
    (xs, ws)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
