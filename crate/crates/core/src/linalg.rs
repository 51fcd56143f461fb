//! Sparse matrices, preconditioned conjugate gradients, an envelope LU
//! factorization for the non-symmetric block system, and element-block
//! inversion.

use std::collections::VecDeque;

use nalgebra::SMatrix;

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, unique column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

/// Accumulates `(row, col, value)` entries; duplicates are summed on build.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols, "entry ({r},{c}) outside {}x{}", self.nrows, self.ncols);
        if v != 0.0 {
            self.entries.push((r, c, v));
        }
    }

    pub fn build(mut self) -> SparseMatrix {
        self.entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values }
    }
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        Self { nrows: n, ncols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut b = TripletBuilder::new(rows.len(), ncols);
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                b.add(r, c, v);
            }
        }
        b.build()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            y[r] = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    pub fn transpose(&self) -> Self {
        let mut b = TripletBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                b.add(c, r, v);
            }
        }
        b.build()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|r| self.get(r, r)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A − Aᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst = 0.0f64;
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - t.get(r, c)).abs());
            }
            let (cols, vals) = t.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(r, c)).abs());
            }
        }
        worst
    }

    /// Multiplies row `r` by `s[r]`.
    pub fn scale_rows(&mut self, s: &[f64]) {
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                self.values[k] *= s[r];
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Approximate inverse applied inside CG. Must be linear, deterministic and
/// symmetric positive definite for CG to converge.
pub trait Preconditioner {
    fn setup(&mut self, a: &SparseMatrix) -> Result<()>;
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

/// `M = I`.
#[derive(Debug, Clone, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn setup(&mut self, _: &SparseMatrix) -> Result<()> {
        Ok(())
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// Point Jacobi, `M = diag(A)`.
#[derive(Debug, Clone, Default)]
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Preconditioner for Jacobi {
    fn setup(&mut self, a: &SparseMatrix) -> Result<()> {
        self.inv_diag = a
            .diagonal()
            .iter()
            .enumerate()
            .map(|(r, &d)| if d > 0.0 { Ok(1.0 / d) } else { Err(Error::SingularPivot { row: r }) })
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((z, r), d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *z = r * d;
        }
    }
}

/// Symmetric Gauss–Seidel, `M = (D + L) D⁻¹ (D + U)`.
#[derive(Debug, Clone, Default)]
pub struct SymmetricGaussSeidel {
    a: Option<SparseMatrix>,
    diag: Vec<f64>,
}

impl Preconditioner for SymmetricGaussSeidel {
    fn setup(&mut self, a: &SparseMatrix) -> Result<()> {
        self.diag = a.diagonal();
        if let Some(r) = self.diag.iter().position(|&d| d <= 0.0) {
            return Err(Error::SingularPivot { row: r });
        }
        self.a = Some(a.clone());
        Ok(())
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let a = self.a.as_ref().expect("setup must precede apply");
        let n = a.nrows;
        // Forward: (D + L) y = r
        for i in 0..n {
            let (cols, vals) = a.row(i);
            let mut s = r[i];
            for (&c, &v) in cols.iter().zip(vals) {
                if c < i {
                    s -= v * z[c];
                }
            }
            z[i] = s / self.diag[i];
        }
        // Backward: (D + U) z = D y
        for i in (0..n).rev() {
            let (cols, vals) = a.row(i);
            let mut s = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                if c > i {
                    s += v * z[c];
                }
            }
            z[i] -= s / self.diag[i];
        }
    }
}

/// Zero fill-in incomplete Cholesky, `M = L Lᵀ` on the pattern of `A`.
#[derive(Debug, Clone, Default)]
pub struct IncompleteCholesky {
    /// Lower triangle (including diagonal) in CSR.
    l: Option<SparseMatrix>,
}

impl Preconditioner for IncompleteCholesky {
    fn setup(&mut self, a: &SparseMatrix) -> Result<()> {
        let n = a.nrows;
        let mut b = TripletBuilder::new(n, n);
        for r in 0..n {
            let (cols, vals) = a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if c <= r {
                    b.add(r, c, v);
                }
            }
        }
        let mut l = b.build();
        for i in 0..n {
            let (start, end) = (l.row_ptr[i], l.row_ptr[i + 1]);
            for k in start..end {
                let j = l.col_idx[k];
                // l_ij = (a_ij − Σ_{m<j} l_im l_jm) / l_jj
                let mut s = l.values[k];
                let (js, je) = (l.row_ptr[j], l.row_ptr[j + 1]);
                let (mut p, mut q) = (start, js);
                while p < k && q < je {
                    let (cp, cq) = (l.col_idx[p], l.col_idx[q]);
                    if cq >= j {
                        break;
                    }
                    match cp.cmp(&cq) {
                        std::cmp::Ordering::Less => p += 1,
                        std::cmp::Ordering::Greater => q += 1,
                        std::cmp::Ordering::Equal => {
                            s -= l.values[p] * l.values[q];
                            p += 1;
                            q += 1;
                        }
                    }
                }
                if j == i {
                    if s <= 0.0 {
                        return Err(Error::SingularPivot { row: i });
                    }
                    l.values[k] = s.sqrt();
                } else {
                    l.values[k] = s / l.values[je - 1];
                }
            }
        }
        self.l = Some(l);
        Ok(())
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let l = self.l.as_ref().expect("setup must precede apply");
        let n = l.nrows;
        for i in 0..n {
            let (cols, vals) = l.row(i);
            let last = cols.len() - 1;
            let mut s = r[i];
            for k in 0..last {
                s -= vals[k] * z[cols[k]];
            }
            z[i] = s / vals[last];
        }
        for i in (0..n).rev() {
            let (cols, vals) = l.row(i);
            let last = cols.len() - 1;
            z[i] /= vals[last];
            let zi = z[i];
            for k in 0..last {
                z[cols[k]] -= vals[k] * zi;
            }
        }
    }
}

/// Preconditioner selection exposed to configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreconditionerKind {
    None,
    #[default]
    Jacobi,
    Sgs,
    Ic0,
}

impl PreconditionerKind {
    pub fn build(self, a: &SparseMatrix) -> Result<Box<dyn Preconditioner>> {
        let mut p: Box<dyn Preconditioner> = match self {
            PreconditionerKind::None => Box::new(IdentityPreconditioner),
            PreconditionerKind::Jacobi => Box::<Jacobi>::default(),
            PreconditionerKind::Sgs => Box::<SymmetricGaussSeidel>::default(),
            PreconditionerKind::Ic0 => Box::<IncompleteCholesky>::default(),
        };
        p.setup(a)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual `‖b − Ax‖ / ‖b‖`.
    pub residual: f64,
}

/// Preconditioned conjugate gradients from initial guess `x0`, stopping at
/// `‖b − Ax‖ ≤ tol ‖b‖`.
pub fn cg_solve(
    a: &SparseMatrix,
    b: &[f64],
    m: &dyn Preconditioner,
    tol: f64,
    x0: Option<&[f64]>,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = a.nrows;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(CgOutcome { x: vec![0.0; n], iterations: 0, residual: 0.0 });
    }
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = a.mul(&x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut res = norm2(&r) / bnorm;
    if res <= tol {
        return Ok(CgOutcome { x, iterations: 0, residual: res });
    }
    let mut z = vec![0.0; n];
    m.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let (mut best, mut best_res) = (x.clone(), res);
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm2(&r) / bnorm;
        if res < best_res {
            best_res = res;
            best.copy_from_slice(&x);
        }
        if res <= tol {
            return Ok(CgOutcome { x, iterations: it, residual: res });
        }
        m.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::CgNotConverged { iterations: max_iter, residual: best_res, best })
}

/// Reverse Cuthill–McKee ordering of the symmetrized pattern of `a`;
/// `perm[new] = old`.
pub fn rcm_ordering(a: &SparseMatrix) -> Vec<usize> {
    let n = a.nrows;
    let at = a.transpose();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for r in 0..n {
        for m in [a, &at] {
            for &c in m.row(r).0 {
                if c != r {
                    adj[r].push(c);
                }
            }
        }
        adj[r].sort_unstable();
        adj[r].dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let bfs_levels = |start: usize, visited: &[bool]| -> (Vec<usize>, usize) {
        let mut level = vec![usize::MAX; n];
        let mut order = vec![start];
        level[start] = 0;
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for &w in &adj[v] {
                if !visited[w] && level[w] == usize::MAX {
                    level[w] = level[v] + 1;
                    order.push(w);
                }
            }
        }
        let depth = level[*order.last().unwrap()];
        (order.into_iter().filter(|&v| level[v] == depth).collect(), depth)
    };

    let mut visited = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // Pseudo-peripheral start node.
        let mut start = seed;
        let (mut last, mut depth) = bfs_levels(start, &visited);
        loop {
            let cand = *last.iter().min_by_key(|&&v| degree[v]).unwrap();
            let (l2, d2) = bfs_levels(cand, &visited);
            if d2 > depth {
                start = cand;
                last = l2;
                depth = d2;
            } else {
                break;
            }
        }
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            perm.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| degree[w]);
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    perm.reverse();
    perm
}

/// LU factors without pivoting stored in a variable-band (envelope)
/// layout under a symmetric RCM permutation. Intended for matrices whose
/// symmetric part is positive definite, for which every leading principal
/// minor is nonzero.
#[derive(Debug, Clone)]
pub struct EnvelopeLu {
    n: usize,
    perm: Vec<usize>,
    /// First column of the profile of row/column `i` (permuted numbering).
    first: Vec<usize>,
    /// `lower[off[i] + (j − first[i])] = L_ij` for `first[i] ≤ j < i`.
    lower: Vec<f64>,
    /// `upper[off[j] + (i − first[j])] = U_ij` for `first[j] ≤ i ≤ j`.
    upper: Vec<f64>,
    off: Vec<usize>,
    matrix: SparseMatrix,
}

impl EnvelopeLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        assert_eq!(a.nrows, a.ncols, "LU needs a square matrix");
        let n = a.nrows;
        let perm = rcm_ordering(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for r in 0..n {
            for &c in a.row(r).0 {
                let (i, j) = (inv[r], inv[c]);
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                first[hi] = first[hi].min(lo);
            }
        }
        let mut off = vec![0; n + 1];
        for i in 0..n {
            off[i + 1] = off[i] + (i - first[i]) + 1;
        }
        let total = off[n];
        log::debug!("envelope LU: n = {n}, profile entries = {total}");
        let mut lower = vec![0.0; total];
        let mut upper = vec![0.0; total];
        for r in 0..n {
            let (cols, vals) = a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let (i, j) = (inv[r], inv[c]);
                if j < i {
                    lower[off[i] + j - first[i]] = v;
                } else {
                    upper[off[j] + i - first[j]] = v;
                }
            }
        }

        let scale = a.max_abs();
        for k in 0..n {
            let fk = first[k];
            // Column k of U above the diagonal.
            for i in fk..k {
                let lo = fk.max(first[i]);
                let s: f64 = (lo..i)
                    .map(|m| lower[off[i] + m - first[i]] * upper[off[k] + m - fk])
                    .sum();
                upper[off[k] + i - fk] -= s;
            }
            // Row k of L.
            for j in fk..k {
                let lo = fk.max(first[j]);
                let s: f64 = (lo..j)
                    .map(|m| lower[off[k] + m - fk] * upper[off[j] + m - first[j]])
                    .sum();
                let ujj = upper[off[j] + j - first[j]];
                lower[off[k] + j - fk] = (lower[off[k] + j - fk] - s) / ujj;
            }
            let s: f64 = (fk..k).map(|m| lower[off[k] + m - fk] * upper[off[k] + m - fk]).sum();
            let d = &mut upper[off[k] + k - fk];
            *d -= s;
            if !(d.abs() > 1e-14 * scale) {
                return Err(Error::SingularPivot { row: perm[k] });
            }
        }
        Ok(Self { n, perm, first, lower, upper, off, matrix: a.clone() })
    }

    /// Number of stored profile entries in each of `L` and `U`.
    pub fn profile_len(&self) -> usize {
        self.off[self.n]
    }

    fn solve_once(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let s: f64 = (fi..i).map(|m| self.lower[self.off[i] + m - fi] * y[m]).sum();
            y[i] -= s;
        }
        for j in (0..n).rev() {
            let fj = self.first[j];
            y[j] /= self.upper[self.off[j] + j - fj];
            let yj = y[j];
            for i in fj..j {
                y[i] -= self.upper[self.off[j] + i - fj] * yj;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Solves `A x = b` with up to a few steps of iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let bnorm = norm2(b);
        let mut x = self.solve_once(b);
        if bnorm == 0.0 {
            return x;
        }
        for _ in 0..3 {
            let ax = self.matrix.mul(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            if norm2(&r) <= 1e-14 * bnorm {
                break;
            }
            let dx = self.solve_once(&r);
            for (x, d) in x.iter_mut().zip(dx) {
                *x += d;
            }
        }
        x
    }
}

/// One-shot sparse LU solve.
pub fn lu_solve(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(EnvelopeLu::factor(a)?.solve(b))
}

pub type Block8 = SMatrix<f64, 8, 8>;

/// Inverts each element block; the index of a singular block is reported.
pub fn block_diag_invert(blocks: &[Block8]) -> Result<Vec<Block8>> {
    blocks
        .iter()
        .enumerate()
        .map(|(e, m)| m.try_inverse().ok_or(Error::SingularBlock { element: e }))
        .collect()
}
