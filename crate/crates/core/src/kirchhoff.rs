//! Kirchhoff's point-vortex Hamiltonian, its critical configurations, and
//! the location condition for computed peaks.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::greens::GreenFunction;
use crate::Point;

/// Points closer than this count as colliding.
pub const MIN_SEPARATION: f64 = 1e-8;

/// Step of the central differences that build the Hessian.
pub const HESSIAN_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VortexConfig {
    pub points: Vec<Point>,
    pub intensities: Vec<f64>,
}

impl VortexConfig {
    pub fn new(points: Vec<Point>, intensities: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != intensities.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points with {} intensities",
                points.len(),
                intensities.len()
            )));
        }
        if let Some(bad) = points.iter().flatten().chain(&intensities).find(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite vortex datum {bad}")));
        }
        Ok(Self { points, intensities })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks that every point lies in the evaluator's domain and that no
    /// two points collide.
    pub fn validate(&self, greens: &dyn GreenFunction) -> Result<()> {
        for (i, &p) in self.points.iter().enumerate() {
            if !greens.contains(p) {
                return Err(Error::OutsideDomain(p));
            }
            for &q in &self.points[..i] {
                if greens.distance(p, q) <= MIN_SEPARATION {
                    return Err(Error::Coincident(p));
                }
            }
        }
        Ok(())
    }

    fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    fn with_flat(&self, x: &[f64]) -> Self {
        Self {
            points: x.chunks(2).map(|c| [c[0], c[1]]).collect(),
            intensities: self.intensities.clone(),
        }
    }
}

/// `H_N = Σ r_i² H(x_i, x_i) + Σ_{i≠j} r_i r_j G(x_i, x_j)`, ordered pairs.
pub fn hamiltonian(config: &VortexConfig, greens: &dyn GreenFunction) -> Result<f64> {
    config.validate(greens)?;
    let (x, r) = (&config.points, &config.intensities);
    let mut total = 0.0;
    for i in 0..x.len() {
        total += r[i] * r[i] * greens.robin(x[i])?;
        for j in 0..x.len() {
            if j != i {
                total += r[i] * r[j] * greens.green(x[i], x[j])?;
            }
        }
    }
    Ok(total)
}

/// `∂H_N/∂x_i = 2 r_i² ∇₁H(x_i, x_i) + 2 r_i Σ_{j≠i} r_j ∇₁G(x_i, x_j)`.
pub fn gradient(config: &VortexConfig, greens: &dyn GreenFunction) -> Result<Vec<[f64; 2]>> {
    config.validate(greens)?;
    let (x, r) = (&config.points, &config.intensities);
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let gh = greens.grad_regular(x[i], x[i])?;
        let mut g = [2.0 * r[i] * r[i] * gh[0], 2.0 * r[i] * r[i] * gh[1]];
        for j in 0..x.len() {
            if j != i {
                let gg = greens.grad_green(x[i], x[j])?;
                g[0] += 2.0 * r[i] * r[j] * gg[0];
                g[1] += 2.0 * r[i] * r[j] * gg[1];
            }
        }
        out.push(g);
    }
    Ok(out)
}

fn flat_gradient(config: &VortexConfig, greens: &dyn GreenFunction, x: &[f64]) -> Result<Vec<f64>> {
    Ok(gradient(&config.with_flat(x), greens)?.into_iter().flatten().collect())
}

fn hessian(config: &VortexConfig, greens: &dyn GreenFunction, x: &[f64]) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    for j in 0..n {
        probe[j] = x[j] + HESSIAN_STEP;
        let gp = flat_gradient(config, greens, &probe)?;
        probe[j] = x[j] - HESSIAN_STEP;
        let gm = flat_gradient(config, greens, &probe)?;
        probe[j] = x[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * HESSIAN_STEP);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Singular values below this fraction of `max(σ_max, 1)` flag a degenerate
/// critical configuration.
pub const DEGENERACY_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalityReport {
    pub gradient_norm: f64,
    pub gradients: Vec<[f64; 2]>,
    pub converged: bool,
    pub iterations: usize,
    /// The Hessian at the final configuration is (numerically) singular.
    pub degenerate: bool,
    pub hamiltonian: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Newton's method on `∇H_N = 0` with a finite-difference Hessian, damped on
/// the merit `‖∇H_N‖²`. Steps that leave the domain or collide points are
/// halved away; when the Newton direction cannot reduce the merit the
/// search falls back to `-∇²H_N ∇H_N`, the steepest descent of the merit.
pub fn find_critical(
    config0: &VortexConfig,
    greens: &dyn GreenFunction,
    tol: f64,
    max_iter: usize,
) -> Result<(VortexConfig, CriticalityReport)> {
    config0.validate(greens)?;
    let mut x = config0.flat();
    let mut g = flat_gradient(config0, greens, &x)?;
    let mut gn = norm(&g);
    let mut iterations = 0;
    let admissible = |y: &[f64]| config0.with_flat(y).validate(greens).is_ok();
    while gn > tol && iterations < max_iter {
        iterations += 1;
        let h = hessian(config0, greens, &x)?;
        let gv = DVector::from_column_slice(&g);
        let svd = h.clone().svd(true, true);
        let cutoff = 1e-10 * svd.singular_values.max().max(1.0);
        let newton = svd
            .solve(&gv, cutoff)
            .map(|s| -s)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let descent = -(&h * &gv);
        let mut moved = false;
        for dir in [newton, descent] {
            let mut t = 1.0;
            for _ in 0..=30 {
                let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
                if admissible(&trial) {
                    if let Ok(gt) = flat_gradient(config0, greens, &trial) {
                        let nt = norm(&gt);
                        if nt < gn {
                            x = trial;
                            g = gt;
                            gn = nt;
                            moved = true;
                            break;
                        }
                    }
                }
                t *= 0.5;
            }
            if moved {
                break;
            }
        }
        if !moved {
            break;
        }
    }
    let config = config0.with_flat(&x);
    let sv = hessian(config0, greens, &x)?.singular_values();
    let degenerate = sv.min() < DEGENERACY_RATIO * sv.max().max(1.0);
    let report = CriticalityReport {
        gradient_norm: gn,
        gradients: g.chunks(2).map(|c| [c[0], c[1]]).collect(),
        converged: gn <= tol,
        iterations,
        degenerate,
        hamiltonian: hamiltonian(&config, greens)?,
    };
    Ok((config, report))
}

/// For each peak `x0` with net mass `m = m+ - m-`, the norm of
/// `∇ₓ[H(x, x0) + Σ_{x0' ≠ x0} (m(x0')/m(x0)) G(x, x0')]` at `x = x0`.
pub fn location_residual(peaks: &[(Point, f64)], greens: &dyn GreenFunction) -> Result<Vec<f64>> {
    peaks
        .iter()
        .enumerate()
        .map(|(i, &(x0, m0))| {
            if m0 == 0.0 {
                return Err(Error::ZeroNetMass);
            }
            let mut g = greens.grad_regular(x0, x0)?;
            for (j, &(x1, m1)) in peaks.iter().enumerate() {
                if j != i {
                    let gg = greens.grad_green(x0, x1)?;
                    g[0] += m1 / m0 * gg[0];
                    g[1] += m1 / m0 * gg[1];
                }
            }
            Ok(g[0].hypot(g[1]))
        })
        .collect()
}
