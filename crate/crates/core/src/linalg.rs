//! Linear algebra kernels: exact sparse elimination over rationals, dense
//! and banded LU with partial pivoting over `f64`, and a fallback
//! Gauss–Seidel iteration.

use std::collections::{BTreeMap, VecDeque};

use num_traits::{Signed, Zero};

use crate::error::{Error, Result};
use crate::rational::Rational;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Dense {
        Dense { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Dense {
        let mut m = Dense::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Dense {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut m = Dense::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            m.data[i * c..(i + 1) * c].copy_from_slice(row);
        }
        m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul(&self, other: &Dense) -> Dense {
        assert_eq!(self.cols, other.rows);
        let mut out = Dense::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn add(&self, other: &Dense) -> Dense {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Dense { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Dense) -> Dense {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Dense { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: f64) -> Dense {
        Dense { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * s).collect() }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn max_abs_diff(&self, other: &Dense) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Submatrix on the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Dense {
        let mut m = Dense::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                m[(a, b)] = self[(i, j)];
            }
        }
        m
    }
}

impl std::ops::Index<(usize, usize)> for Dense {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Dense {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Dense LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(a: &Dense) -> Option<DenseLu> {
        assert_eq!(a.rows, a.cols);
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut piv = vec![0; n];
        let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for k in 0..n {
            let mut p = k;
            for i in k + 1..n {
                if lu[i * n + k].abs() > lu[p * n + k].abs() {
                    p = i;
                }
            }
            if lu[p * n + k].abs() <= scale * 1e-15 {
                return None;
            }
            piv[k] = p;
            if p != k {
                for j in k..n {
                    lu.swap(k * n + j, p * n + j);
                }
            }
            let d = lu[k * n + k];
            for i in k + 1..n {
                let l = lu[i * n + k] / d;
                lu[i * n + k] = l;
                if l != 0.0 {
                    for j in k + 1..n {
                        lu[i * n + j] -= l * lu[k * n + j];
                    }
                }
            }
        }
        Some(DenseLu { n, lu, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            for i in k + 1..n {
                x[i] -= self.lu[i * n + k] * xk;
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..n {
                s -= self.lu[k * n + j] * x[j];
            }
            x[k] = s / self.lu[k * n + k];
        }
        x
    }

    /// Solves `xᵀ A = bᵀ`.
    pub fn solve_transposed(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for k in 0..n {
            let mut s = y[k];
            for j in 0..k {
                s -= self.lu[j * n + k] * y[j];
            }
            y[k] = s / self.lu[k * n + k];
        }
        for k in (0..n).rev() {
            let mut s = y[k];
            for i in k + 1..n {
                s -= self.lu[i * n + k] * y[i];
            }
            y[k] = s;
            y.swap(k, self.piv[k]);
        }
        y
    }
}

pub fn dense_solve(a: &Dense, b: &[f64]) -> Option<Vec<f64>> {
    let lu = DenseLu::factor(a)?;
    let mut x = lu.solve(b);
    refine(|v| a.mul_vec(v), |r| lu.solve(r), b, &mut x);
    Some(x)
}

fn refine(apply: impl Fn(&[f64]) -> Vec<f64>, solve: impl Fn(&[f64]) -> Vec<f64>, b: &[f64], x: &mut [f64]) {
    for _ in 0..2 {
        let ax = apply(x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        if norm_inf(&r) == 0.0 {
            return;
        }
        let dx = solve(&r);
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
    }
}

/// Sparse matrix in coordinate form; duplicate entries are summed.
#[derive(Clone, Debug, Default)]
pub struct Sparse {
    pub n: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl Sparse {
    pub fn new(n: usize) -> Sparse {
        Sparse { n, rows: vec![Vec::new(); n] }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        self.rows[i].push((j, v));
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum()).collect()
    }
}

/// Reverse Cuthill–McKee ordering of the symmetrized pattern.
pub fn rcm_order(a: &Sparse) -> Vec<usize> {
    let n = a.n;
    let mut adj = vec![Vec::new(); n];
    for (i, r) in a.rows.iter().enumerate() {
        for &(j, _) in r {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (adj[i].len(), i));
    for &s in &by_degree {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&w| !seen[w]).collect();
            nb.sort_by_key(|&w| (adj[w].len(), w));
            for w in nb {
                seen[w] = true;
                q.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Banded LU with partial pivoting. Row `i` stores absolute columns
/// `i - kl ..= i + kl + ku`, which is enough room for pivoting fill.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    w: usize,
    ab: Vec<f64>,
    l: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    fn at(&self, i: usize, j: usize) -> usize {
        i * self.w + (j + self.kl - i)
    }

    pub fn factor(a: &Sparse, kl: usize, ku: usize) -> Option<BandLu> {
        let n = a.n;
        let w = 2 * kl + ku + 1;
        let mut f = BandLu { n, kl, ku, w, ab: vec![0.0; n * w], l: vec![0.0; n * kl.max(1)], piv: vec![0; n] };
        let mut scale = 0.0f64;
        for (i, r) in a.rows.iter().enumerate() {
            for &(j, v) in r {
                let k = f.at(i, j);
                f.ab[k] += v;
                scale = scale.max(v.abs());
            }
        }
        let scale = scale.max(1e-300);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            for i in k + 1..=last {
                if f.ab[f.at(i, k)].abs() > f.ab[f.at(p, k)].abs() {
                    p = i;
                }
            }
            if f.ab[f.at(p, k)].abs() <= scale * 1e-15 {
                return None;
            }
            f.piv[k] = p;
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (x, y) = (f.at(k, j), f.at(p, j));
                    f.ab.swap(x, y);
                }
            }
            let d = f.ab[f.at(k, k)];
            for i in k + 1..=last {
                let ik = f.at(i, k);
                let m = f.ab[ik] / d;
                f.ab[ik] = 0.0;
                f.l[k * kl.max(1) + (i - k - 1)] = m;
                if m != 0.0 {
                    for j in k + 1..=jmax {
                        let (ij, kj) = (f.at(i, j), f.at(k, j));
                        f.ab[ij] -= m * f.ab[kj];
                    }
                }
            }
        }
        Some(f)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            for i in k + 1..=(k + self.kl).min(n - 1) {
                x[i] -= self.l[k * self.kl.max(1) + (i - k - 1)] * xk;
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + self.kl + self.ku).min(n - 1) {
                s -= self.ab[self.at(k, j)] * x[j];
            }
            x[k] = s / self.ab[self.at(k, k)];
        }
        x
    }
}

/// Solves `A x = b` for sparse `A`, picking a banded, dense, or iterative
/// method from the structure. Returns an error if `A` is (numerically)
/// singular or the iteration fails to converge.
pub fn sparse_solve(a: &Sparse, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.n;
    if n == 0 {
        return Ok(Vec::new());
    }
    let order = rcm_order(a);
    let mut pos = vec![0; n];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k;
    }
    let mut p = Sparse::new(n);
    let (mut kl, mut ku) = (0usize, 0usize);
    for (i, r) in a.rows.iter().enumerate() {
        for &(j, v) in r {
            let (pi, pj) = (pos[i], pos[j]);
            kl = kl.max(pi.saturating_sub(pj));
            ku = ku.max(pj.saturating_sub(pi));
            p.push(pi, pj, v);
        }
    }
    let pb: Vec<f64> = order.iter().map(|&v| b[v]).collect();
    let band_cost = n as f64 * (kl as f64 + 1.0) * (2.0 * kl as f64 + ku as f64 + 1.0);
    let dense_cost = (n as f64).powi(3) / 3.0;
    let px = if band_cost <= 4e9 && band_cost <= dense_cost * 2.0 {
        let lu = BandLu::factor(&p, kl, ku).ok_or_else(|| Error::Numeric("singular banded system".into()))?;
        let mut x = lu.solve(&pb);
        refine(|v| p.mul_vec(v), |r| lu.solve(r), &pb, &mut x);
        x
    } else if n <= 3000 {
        let mut d = Dense::zeros(n, n);
        for (i, r) in p.rows.iter().enumerate() {
            for &(j, v) in r {
                d[(i, j)] += v;
            }
        }
        dense_solve(&d, &pb).ok_or_else(|| Error::Numeric("singular dense system".into()))?
    } else {
        gauss_seidel(&p, &pb, 1e-14, 1_000_000)?
    };
    let mut x = vec![0.0; n];
    for (k, &v) in order.iter().enumerate() {
        x[v] = px[k];
    }
    Ok(x)
}

pub fn gauss_seidel(a: &Sparse, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.n;
    let mut x = vec![0.0; n];
    let diag: Vec<f64> = a
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().filter(|e| e.0 == i).map(|e| e.1).sum())
        .collect();
    if diag.iter().any(|&d| d == 0.0) {
        return Err(Error::Numeric("zero diagonal in iterative solve".into()));
    }
    for _ in 0..max_iter {
        let mut change = 0.0f64;
        for i in 0..n {
            let s: f64 = a.rows[i].iter().filter(|e| e.0 != i).map(|&(j, v)| v * x[j]).sum();
            let nx = (b[i] - s) / diag[i];
            change = change.max((nx - x[i]).abs());
            x[i] = nx;
        }
        if change <= tol {
            return Ok(x);
        }
    }
    Err(Error::Numeric("Gauss-Seidel did not converge".into()))
}

/// Exact solve of `A x = b` by sparse Gauss–Jordan elimination. Returns
/// `None` when `A` is singular.
pub fn rational_solve(rows: Vec<BTreeMap<usize, Rational>>, b: Vec<Rational>) -> Option<Vec<Rational>> {
    let n = rows.len();
    let mut rows: Vec<(BTreeMap<usize, Rational>, Rational)> = rows.into_iter().zip(b).collect();
    for r in rows.iter_mut() {
        r.0.retain(|_, v| !v.is_zero());
    }
    // cols[j]: rows that currently have a nonzero in column j
    let mut cols: Vec<std::collections::BTreeSet<usize>> = vec![Default::default(); n];
    for (i, r) in rows.iter().enumerate() {
        for &j in r.0.keys() {
            cols[j].insert(i);
        }
    }
    let mut pivot_row_of_col = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for k in 0..n {
        // Choose the sparsest unused row with a nonzero in column k.
        let p = cols[k].iter().copied().filter(|&i| !used[i]).min_by_key(|&i| (rows[i].0.len(), i))?;
        used[p] = true;
        pivot_row_of_col[k] = p;
        let piv = rows[p].0[&k].clone();
        let (prow, pb) = {
            let (r, b) = &mut rows[p];
            for v in r.values_mut() {
                *v /= &piv;
            }
            *b /= &piv;
            (r.clone(), b.clone())
        };
        let targets: Vec<usize> = cols[k].iter().copied().filter(|&i| i != p).collect();
        for i in targets {
            let f = rows[i].0[&k].clone();
            let (r, b) = &mut rows[i];
            for (&j, v) in &prow {
                let e = r.entry(j).or_insert_with(Rational::zero);
                let was_zero = e.is_zero();
                *e -= &f * v;
                if e.is_zero() {
                    r.remove(&j);
                    cols[j].remove(&i);
                } else if was_zero {
                    cols[j].insert(i);
                }
            }
            *b -= &f * &pb;
        }
    }
    Some((0..n).map(|k| rows[pivot_row_of_col[k]].1.clone()).collect())
}

/// Upper bound on the spectral radius of a nonnegative matrix via the
/// Collatz–Wielandt ratio at a positive vector `x`.
pub fn collatz_wielandt_bound(a: &Dense, x: &[f64]) -> Option<f64> {
    if x.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return None;
    }
    let ax = a.mul_vec(x);
    Some(ax.iter().zip(x).map(|(y, v)| y / v).fold(0.0, f64::max))
}

/// Power-iteration estimate of the spectral radius of a nonnegative matrix.
pub fn power_iteration(a: &Dense, iters: usize) -> f64 {
    let n = a.rows;
    if n == 0 {
        return 0.0;
    }
    let mut x = vec![1.0; n];
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y = a.mul_vec(&x);
        let m = norm_inf(&y);
        if m == 0.0 {
            return 0.0;
        }
        lambda = m / norm_inf(&x);
        x = y.iter().map(|v| v / m).collect();
    }
    lambda
}

pub fn is_nonnegative(x: &[Rational]) -> bool {
    x.iter().all(|v| !v.is_negative())
}
