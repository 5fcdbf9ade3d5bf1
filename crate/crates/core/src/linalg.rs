//! Sparse storage, Krylov solvers, a banded direct solver and the
//! Sherman–Morrison–Woodbury wrapper used by the Newton iteration.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists. Duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                debug_assert!(c < n);
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).find(|&(c, _)| c == i).map_or(0.0, |(_, v)| v))
            .collect()
    }

    /// Returns `alpha * self + diag(d)`.
    pub fn scaled_plus_diagonal(&self, alpha: f64, d: &[f64]) -> Self {
        let rows = (0..self.n)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = self.row(i).map(|(c, v)| (c, alpha * v)).collect();
                row.push((i, d[i]));
                row
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn is_structurally_symmetric_with(&self, tol: f64) -> bool {
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let vt = self.row(j).find(|&(c, _)| c == i).map_or(0.0, |(_, v)| v);
                if (v - vt).abs() > tol * v.abs().max(1.0) {
                    return false;
                }
            }
        }
        true
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy)]
pub struct KrylovOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl KrylovOptions {
    pub fn for_size(n: usize) -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: 10 * n.max(1),
        }
    }
}

fn project_mean(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// (semi-)definite matrix. With `project` set, iterates are kept in the
/// zero-mean subspace, which handles the constant null space on a periodic
/// lattice.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], project: bool, opts: KrylovOptions) -> Result<Vec<f64>> {
    let n = a.n();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    if project {
        project_mean(&mut r);
    }
    let b_norm = norm2(&r);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    if project {
        project_mean(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..opts.max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::SolverBreakdown(format!("CG curvature p·Ap = {pap:e}")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm2(&r) <= opts.rel_tol * b_norm {
            if project {
                project_mean(&mut x);
            }
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        if project {
            project_mean(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverBreakdown(format!(
        "CG did not reach relative residual {:e} in {} iterations",
        opts.rel_tol, opts.max_iter
    )))
}

/// Right Jacobi-preconditioned BiCGStab for non-symmetric matrices.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], opts: KrylovOptions) -> Result<Vec<f64>> {
    let n = a.n();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&inv_diag).map(|(v, d)| v * d).collect() };
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(x);
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut t = vec![0.0; n];
    for _ in 0..opts.max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(Error::SolverBreakdown("BiCGStab rho vanished".into()));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let p_hat = precond(&p);
        a.matvec(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            return Err(Error::SolverBreakdown("BiCGStab r̂·v vanished".into()));
        }
        alpha = rho / rv;
        let s: Vec<f64> = r.iter().zip(&v).map(|(r, v)| r - alpha * v).collect();
        if norm2(&s) <= opts.rel_tol * b_norm {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            return Ok(x);
        }
        let s_hat = precond(&s);
        a.matvec(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(Error::SolverBreakdown("BiCGStab t vanished".into()));
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) <= opts.rel_tol * b_norm {
            return Ok(x);
        }
        if omega == 0.0 {
            return Err(Error::SolverBreakdown("BiCGStab omega vanished".into()));
        }
    }
    Err(Error::SolverBreakdown(format!(
        "BiCGStab did not reach relative residual {:e} in {} iterations",
        opts.rel_tol, opts.max_iter
    )))
}

#[derive(Debug, Clone)]
struct BandRow {
    start: usize,
    vals: Vec<f64>,
}

impl BandRow {
    fn end(&self) -> usize {
        self.start + self.vals.len()
    }

    fn get(&self, c: usize) -> f64 {
        if c >= self.start && c < self.end() {
            self.vals[c - self.start]
        } else {
            0.0
        }
    }

    fn extend_to(&mut self, end: usize) {
        if end > self.end() {
            self.vals.resize(end - self.start, 0.0);
        }
    }
}

/// LU factorization with partial pivoting of a banded matrix, `P A = L U`.
///
/// The matrix is first reordered symmetrically by `ordering` (new index →
/// old index) to keep the band narrow. Row interchanges stay within the lower
/// bandwidth, so the upper band grows to at most `kl + ku`.
#[derive(Debug, Clone)]
pub struct BandedLu {
    ordering: Vec<usize>,
    rows: Vec<BandRow>,
    row_ids: Vec<usize>,
    lower_bandwidth: usize,
    upper_bandwidth: usize,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix, ordering: Option<&[usize]>) -> Result<Self> {
        let n = a.n();
        let ordering: Vec<usize> = match ordering {
            Some(o) => {
                if o.len() != n {
                    return Err(Error::InvalidArgument("ordering length mismatch".into()));
                }
                o.to_vec()
            }
            None => (0..n).collect(),
        };
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in ordering.iter().enumerate() {
            inverse[old] = new;
        }
        let mut kl = 0;
        let mut ku = 0;
        let mut rows = Vec::with_capacity(n);
        for (r, &old) in ordering.iter().enumerate() {
            let entries: Vec<(usize, f64)> = a.row(old).map(|(c, v)| (inverse[c], v)).collect();
            let lo = entries.iter().map(|e| e.0).min().unwrap_or(r).min(r);
            let hi = entries.iter().map(|e| e.0).max().unwrap_or(r).max(r);
            kl = kl.max(r - lo);
            ku = ku.max(hi - r);
            let mut row = BandRow {
                start: lo,
                vals: vec![0.0; hi - lo + 1],
            };
            for (c, v) in entries {
                row.vals[c - lo] += v;
            }
            rows.push(row);
        }
        let mut row_ids: Vec<usize> = (0..n).collect();
        let scale = rows
            .iter()
            .flat_map(|r| r.vals.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));

        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = rows[k].get(k).abs();
            for (i, row) in rows.iter().enumerate().take(last + 1).skip(k + 1) {
                let v = row.get(k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= f64::EPSILON * 1e-3 * scale || best == 0.0 {
                return Err(Error::Singular("banded LU"));
            }
            if p != k {
                rows.swap(k, p);
                row_ids.swap(k, p);
            }
            let (head, tail) = rows.split_at_mut(k + 1);
            let pivot_row = &mut head[k];
            let pivot_end = pivot_row.end();
            let pivot = pivot_row.get(k);
            let pivot_slice = &pivot_row.vals[(k + 1 - pivot_row.start)..];
            for row in tail.iter_mut().take(last - k) {
                let lik = row.get(k);
                if lik == 0.0 {
                    continue;
                }
                let l = lik / pivot;
                row.extend_to(pivot_end);
                let off = k - row.start;
                row.vals[off] = l;
                let target = &mut row.vals[(off + 1)..(off + 1 + pivot_slice.len())];
                for (t, u) in target.iter_mut().zip(pivot_slice) {
                    *t -= l * u;
                }
            }
        }
        Ok(Self {
            ordering,
            rows,
            row_ids,
            lower_bandwidth: kl,
            upper_bandwidth: ku,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.lower_bandwidth, self.upper_bandwidth)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut z: Vec<f64> = self.row_ids.iter().map(|&r| b[self.ordering[r]]).collect();
        for r in 0..n {
            let row = &self.rows[r];
            let mut acc = z[r];
            for c in row.start..r {
                acc -= row.vals[c - row.start] * z[c];
            }
            z[r] = acc;
        }
        for r in (0..n).rev() {
            let row = &self.rows[r];
            let mut acc = z[r];
            for c in (r + 1)..row.end() {
                acc -= row.vals[c - row.start] * z[c];
            }
            z[r] = acc / row.vals[r - row.start];
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.ordering.iter().enumerate() {
            x[old] = z[new];
        }
        x
    }
}

/// Solver for `(A + U Vᵀ) x = b` given a factorization of `A` and a thin
/// correction of rank `k = U.len()`.
#[derive(Debug, Clone)]
pub struct WoodburySolver {
    lu: BandedLu,
    /// Columns of `A⁻¹ U`.
    a_inv_u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    capacitance: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

/// Relative pivot threshold below which the capacitance matrix counts as singular.
pub const CAPACITANCE_RCOND: f64 = 1e-12;

impl WoodburySolver {
    pub fn new(lu: BandedLu, u: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<Self> {
        assert_eq!(u.len(), v.len());
        let k = u.len();
        let a_inv_u: Vec<Vec<f64>> = u.iter().map(|col| lu.solve(col)).collect();
        let capacitance = if k == 0 {
            None
        } else {
            let cap = DMatrix::from_fn(k, k, |i, j| {
                let delta = if i == j { 1.0 } else { 0.0 };
                delta + dot(&v[i], &a_inv_u[j])
            });
            let col = cap.clone().col_piv_qr();
            let diag = col.r().diagonal();
            let max = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            let min = diag.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
            if !(min > CAPACITANCE_RCOND * max.max(1.0)) {
                return Err(Error::Singular("Woodbury capacitance"));
            }
            Some(cap.lu())
        };
        Ok(Self {
            lu,
            a_inv_u,
            v,
            capacitance,
        })
    }

    pub fn rank(&self) -> usize {
        self.v.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = self.lu.solve(b);
        if let Some(cap) = &self.capacitance {
            let rhs = nalgebra::DVector::from_iterator(self.v.len(), self.v.iter().map(|v| dot(v, &y)));
            let coeffs = cap.solve(&rhs).expect("capacitance checked at construction");
            for (c, z) in coeffs.iter().zip(&self.a_inv_u) {
                for (yi, zi) in y.iter_mut().zip(z) {
                    *yi -= c * zi;
                }
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_banded(n: usize, kl: usize, ku: usize, seed: u64) -> CsrMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(kl);
                let hi = (i + ku).min(n - 1);
                let mut row = vec![(i, 0.01)];
                for j in lo..=hi {
                    if rng.gen_bool(0.7) {
                        row.push((j, rng.gen_range(-1.0..1.0)));
                    }
                }
                row
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    fn dense_of(a: &CsrMatrix) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(a.n(), a.n());
        for i in 0..a.n() {
            for (j, v) in a.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }

    #[test]
    fn banded_lu_matches_dense_solve() {
        for seed in 0..5 {
            let a = random_banded(60, 4, 7, seed);
            let b: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
            let lu = BandedLu::factor(&a, None).unwrap();
            let x = lu.solve(&b);
            let ax = a.mul(&x);
            let err = ax.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "seed {seed}: residual {err}");
            let dense = dense_of(&a).lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
            let diff = dense.iter().zip(&x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-8 * (1.0 + norm_inf(&x)));
        }
    }

    #[test]
    fn banded_lu_with_reordering() {
        let a = random_banded(40, 3, 3, 11);
        let ordering: Vec<usize> = (0..40).rev().collect();
        let lu = BandedLu::factor(&a, Some(&ordering)).unwrap();
        let b: Vec<f64> = (0..40).map(|i| 1.0 + i as f64).collect();
        let x = lu.solve(&b);
        let err = norm_inf(&a.mul(&x).iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>());
        assert!(err < 1e-9);
    }

    #[test]
    fn singular_detected() {
        let a = CsrMatrix::from_rows(vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)]]);
        assert!(BandedLu::factor(&a, None).is_err());
    }

    #[test]
    fn woodbury_matches_dense() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = random_banded(50, 2, 2, 3);
        let u: Vec<Vec<f64>> = (0..3).map(|_| (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let v: Vec<Vec<f64>> = (0..3).map(|_| (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut dense = dense_of(&a);
        for (uc, vc) in u.iter().zip(&v) {
            for i in 0..50 {
                for j in 0..50 {
                    dense[(i, j)] += uc[i] * vc[j];
                }
            }
        }
        let expected = dense.lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        let solver = WoodburySolver::new(BandedLu::factor(&a, None).unwrap(), u, v).unwrap();
        let x = solver.solve(&b);
        for (p, q) in x.iter().zip(expected.iter()) {
            assert!((p - q).abs() < 1e-8 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn woodbury_flags_singular_capacitance() {
        // A = I, U Vᵀ = -e0 e0ᵀ makes A + UVᵀ singular.
        let a = CsrMatrix::from_rows((0..4).map(|i| vec![(i, 1.0)]).collect());
        let u = vec![vec![-1.0, 0.0, 0.0, 0.0]];
        let v = vec![vec![1.0, 0.0, 0.0, 0.0]];
        let err = WoodburySolver::new(BandedLu::factor(&a, None).unwrap(), u, v).unwrap_err();
        assert_eq!(err, Error::Singular("Woodbury capacitance"));
    }

    fn laplacian_1d(n: usize) -> CsrMatrix {
        CsrMatrix::from_rows(
            (0..n)
                .map(|i| {
                    let mut r = vec![(i, 2.0)];
                    if i > 0 {
                        r.push((i - 1, -1.0));
                    }
                    if i + 1 < n {
                        r.push((i + 1, -1.0));
                    }
                    r
                })
                .collect(),
        )
    }

    #[test]
    fn krylov_solvers_agree() {
        let a = laplacian_1d(100);
        let b: Vec<f64> = (0..100).map(|i| ((i * i) as f64 * 0.01).cos()).collect();
        let opts = KrylovOptions::for_size(100);
        let x1 = conjugate_gradient(&a, &b, false, opts).unwrap();
        let x2 = bicgstab(&a, &b, opts).unwrap();
        let x3 = BandedLu::factor(&a, None).unwrap().solve(&b);
        for i in 0..100 {
            assert!((x1[i] - x3[i]).abs() < 1e-6 * (1.0 + x3[i].abs()));
            assert!((x2[i] - x3[i]).abs() < 1e-6 * (1.0 + x3[i].abs()));
        }
    }
}
