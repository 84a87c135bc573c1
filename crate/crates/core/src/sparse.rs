//! Symmetric positive-definite sparse solvers for the finite element systems.
//!
//! [`Profile`] holds the symbolic part (reverse Cuthill–McKee ordering and
//! the row envelope) and is computed once per mesh. [`SkylineMatrix`] holds
//! the numeric values for one assembly and factors in place with an
//! envelope Cholesky, whose fill stays inside the envelope.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("conjugate gradient did not converge: relative residual {residual:e} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("matrix has not been factored")]
    NotFactored,
}

/// Reverse Cuthill–McKee ordering of a graph given as adjacency lists.
/// Returns `perm` with `perm[new] = old`. Each connected component starts
/// from a pseudo-peripheral node of minimum degree.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree[i])
            .expect("unvisited node exists");
        let start = pseudo_peripheral(adjacency, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v]
                .iter()
                .copied()
                .filter(|&w| !visited[w])
                .collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adjacency: &[Vec<usize>], start: usize) -> Vec<usize> {
    let mut level = vec![usize::MAX; adjacency.len()];
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for &w in &adjacency[v] {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                queue.push_back(w);
            }
        }
    }
    level
}

fn pseudo_peripheral(adjacency: &[Vec<usize>], seed: usize) -> usize {
    let mut current = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let level = bfs_levels(adjacency, current);
        let max = level.iter().filter(|&&l| l != usize::MAX).max().copied().unwrap_or(0);
        if max <= ecc && current != seed {
            break;
        }
        ecc = max;
        let far = (0..adjacency.len())
            .filter(|&i| level[i] == max)
            .min_by_key(|&i| adjacency[i].len())
            .unwrap_or(current);
        if far == current {
            break;
        }
        current = far;
    }
    current
}

/// Symbolic envelope structure in permuted numbering.
#[derive(Debug, Clone)]
pub struct Profile {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `inv[old] = new`
    inv: Vec<usize>,
    /// First stored column of each (permuted) row.
    first: Vec<usize>,
    /// Offset of each row's first stored entry in the value array.
    offset: Vec<usize>,
    nnz: usize,
}

impl Profile {
    /// Builds the envelope for a symmetric pattern. `adjacency[i]` lists the
    /// off-diagonal neighbours of unknown `i` (original numbering). When
    /// `trailing` is non-zero the last `trailing` unknowns are kept at the
    /// end of the ordering and only the leading block is RCM-reordered.
    pub fn new(adjacency: &[Vec<usize>], trailing: usize) -> Self {
        let n = adjacency.len();
        let lead = n - trailing;
        let lead_adj: Vec<Vec<usize>> = adjacency[..lead]
            .iter()
            .map(|nb| nb.iter().copied().filter(|&j| j < lead).collect())
            .collect();
        let mut perm = reverse_cuthill_mckee(&lead_adj);
        perm.extend(lead..n);
        Self::with_permutation(adjacency, perm)
    }

    pub fn with_permutation(adjacency: &[Vec<usize>], perm: Vec<usize>) -> Self {
        let n = adjacency.len();
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (old, nbrs) in adjacency.iter().enumerate() {
            let i = inv[old];
            for &o in nbrs {
                let j = inv[o];
                if j < i {
                    first[i] = first[i].min(j);
                } else if i < j {
                    first[j] = first[j].min(i);
                }
            }
        }
        let mut offset = Vec::with_capacity(n);
        let mut nnz = 0;
        for i in 0..n {
            offset.push(nnz);
            nnz += i - first[i] + 1;
        }
        Profile {
            n,
            perm,
            inv,
            first,
            offset,
            nnz,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn stored_entries(&self) -> usize {
        self.nnz
    }

    /// Position in the value array of entry (i, j), original numbering.
    /// Panics if the entry lies outside the envelope.
    #[inline]
    pub fn slot(&self, i: usize, j: usize) -> usize {
        let (a, b) = (self.inv[i], self.inv[j]);
        let (row, col) = if a >= b { (a, b) } else { (b, a) };
        assert!(col >= self.first[row], "entry ({i}, {j}) outside envelope");
        self.offset[row] + (col - self.first[row])
    }

    pub fn zeros(&self) -> Vec<f64> {
        vec![0.0; self.nnz]
    }
}

/// A symmetric matrix stored by rows inside a [`Profile`] envelope.
#[derive(Debug, Clone)]
pub struct SkylineMatrix<'p> {
    profile: &'p Profile,
    values: Vec<f64>,
    factored: bool,
}

impl<'p> SkylineMatrix<'p> {
    pub fn from_values(profile: &'p Profile, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), profile.nnz);
        SkylineMatrix {
            profile,
            values,
            factored: false,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// In-place envelope Cholesky, `A = L Lᵀ`.
    pub fn factor(&mut self) -> Result<(), SolveError> {
        let p = self.profile;
        let v = &mut self.values;
        for i in 0..p.n {
            let fi = p.first[i];
            let oi = p.offset[i];
            for j in fi..i {
                let fj = p.first[j];
                let oj = p.offset[j];
                let k0 = fi.max(fj);
                let len = j - k0;
                let (head, tail) = v.split_at_mut(oi);
                let row_i = &tail[k0 - fi..k0 - fi + len];
                let row_j = &head[oj + (k0 - fj)..oj + (k0 - fj) + len];
                let dot = dot(row_i, row_j);
                let diag_j = head[oj + (j - fj)];
                let idx = j - fi;
                tail[idx] = (tail[idx] - dot) / diag_j;
            }
            let row = &v[oi..oi + (i - fi)];
            let sq = dot(row, row);
            let d = v[oi + (i - fi)] - sq;
            if !(d > 0.0) || !d.is_finite() {
                return Err(SolveError::NotPositiveDefinite { row: p.perm[i], pivot: d });
            }
            v[oi + (i - fi)] = d.sqrt();
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `A x = b` (original numbering) with the stored factor.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SolveError> {
        let p = self.profile;
        if !self.factored {
            return Err(SolveError::NotFactored);
        }
        if b.len() != p.n {
            return Err(SolveError::Dimension {
                expected: p.n,
                got: b.len(),
            });
        }
        let v = &self.values;
        let mut y: Vec<f64> = p.perm.iter().map(|&o| b[o]).collect();
        // forward: L y = b
        for i in 0..p.n {
            let fi = p.first[i];
            let oi = p.offset[i];
            let row = &v[oi..oi + (i - fi)];
            let s = dot(row, &y[fi..i]);
            y[i] = (y[i] - s) / v[oi + (i - fi)];
        }
        // backward: Lᵀ x = y, column sweep
        for i in (0..p.n).rev() {
            let fi = p.first[i];
            let oi = p.offset[i];
            y[i] /= v[oi + (i - fi)];
            let xi = y[i];
            if xi != 0.0 {
                let row = &v[oi..oi + (i - fi)];
                for (yk, &l) in y[fi..i].iter_mut().zip(row) {
                    *yk -= l * xi;
                }
            }
        }
        let mut x = vec![0.0; p.n];
        for (new, &old) in p.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }

    /// Matrix-vector product with the unfactored matrix.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert!(!self.factored, "matvec on a factored matrix");
        let p = self.profile;
        let xp: Vec<f64> = p.perm.iter().map(|&o| x[o]).collect();
        let mut yp = vec![0.0; p.n];
        for i in 0..p.n {
            let fi = p.first[i];
            let oi = p.offset[i];
            let row = &self.values[oi..oi + (i - fi) + 1];
            for (k, &a) in row.iter().enumerate() {
                let j = fi + k;
                yp[i] += a * xp[j];
                if j != i {
                    yp[j] += a * xp[i];
                }
            }
        }
        let mut y = vec![0.0; p.n];
        for (new, &old) in p.perm.iter().enumerate() {
            y[old] = yp[new];
        }
        y
    }

    /// Jacobi-preconditioned conjugate gradient on the unfactored matrix.
    pub fn solve_cg(&self, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<Vec<f64>, SolveError> {
        let p = self.profile;
        if b.len() != p.n {
            return Err(SolveError::Dimension {
                expected: p.n,
                got: b.len(),
            });
        }
        let diag: Vec<f64> = (0..p.n)
            .map(|old| self.values[p.slot(old, old)])
            .collect();
        let bnorm = norm(b);
        let mut x = vec![0.0; p.n];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut dir = z.clone();
        let mut rz = dot(&r, &z);
        for it in 0..max_iter {
            let ad = self.matvec(&dir);
            let alpha = rz / dot(&dir, &ad);
            for k in 0..p.n {
                x[k] += alpha * dir[k];
                r[k] -= alpha * ad[k];
            }
            let res = norm(&r) / bnorm;
            if res <= rel_tol {
                return Ok(x);
            }
            if it + 1 == max_iter {
                return Err(SolveError::NoConvergence {
                    iterations: max_iter,
                    residual: res,
                });
            }
            for k in 0..p.n {
                z[k] = r[k] / diag[k];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..p.n {
                dir[k] = z[k] + beta * dir[k];
            }
        }
        Err(SolveError::NoConvergence {
            iterations: max_iter,
            residual: f64::NAN,
        })
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize the reduction.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    type Triplets = Vec<(usize, usize, f64)>;

    // 1D Laplacian plus identity, scrambled numbering.
    fn chain_system(n: usize) -> (Vec<Vec<usize>>, Triplets) {
        let label = |i: usize| (i * 7) % n;
        let mut adj = vec![Vec::new(); n];
        let mut entries = Vec::new();
        for i in 0..n {
            entries.push((label(i), label(i), 3.0));
            if i + 1 < n {
                adj[label(i)].push(label(i + 1));
                adj[label(i + 1)].push(label(i));
                entries.push((label(i), label(i + 1), -1.0));
            }
        }
        (adj, entries)
    }

    fn dense(n: usize, entries: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; n]; n];
        for &(i, j, v) in entries {
            a[i][j] += v;
            if i != j {
                a[j][i] += v;
            }
        }
        a
    }

    #[test]
    fn rcm_recovers_small_bandwidth() {
        let n = 50;
        let (adj, _) = chain_system(n);
        let p = Profile::new(&adj, 0);
        // A path graph reorders to bandwidth 1.
        assert_eq!(p.stored_entries(), 2 * n - 1);
    }

    #[test]
    fn cholesky_matches_dense_product() {
        let n = 23;
        let (adj, entries) = chain_system(n);
        let p = Profile::new(&adj, 0);
        let mut vals = p.zeros();
        for &(i, j, v) in &entries {
            vals[p.slot(i, j)] += v;
        }
        let a = dense(n, &entries);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut m = SkylineMatrix::from_values(&p, vals.clone());
        let ab = m.matvec(&b);
        for i in 0..n {
            let expect: f64 = (0..n).map(|j| a[i][j] * b[j]).sum();
            assert!((ab[i] - expect).abs() < 1e-12);
        }
        m.factor().unwrap();
        let x = m.solve(&b).unwrap();
        for i in 0..n {
            let r: f64 = (0..n).map(|j| a[i][j] * x[j]).sum::<f64>() - b[i];
            assert!(r.abs() < 1e-12);
        }
        let cg = SkylineMatrix::from_values(&p, vals)
            .solve_cg(&b, 1e-12, 200)
            .unwrap();
        for i in 0..n {
            assert!((cg[i] - x[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn trailing_block_kept_last() {
        let mut adj = vec![vec![1], vec![0, 2], vec![1, 3], vec![2]];
        adj[0].push(3);
        adj[3].push(0);
        let p = Profile::new(&adj, 1);
        assert_eq!(*p.perm.last().unwrap(), 3);
    }

    #[test]
    fn indefinite_rejected() {
        let adj = vec![vec![1], vec![0]];
        let p = Profile::new(&adj, 0);
        let mut vals = p.zeros();
        vals[p.slot(0, 0)] = 1.0;
        vals[p.slot(1, 1)] = 1.0;
        vals[p.slot(0, 1)] = 2.0;
        let mut m = SkylineMatrix::from_values(&p, vals);
        assert!(matches!(m.factor(), Err(SolveError::NotPositiveDefinite { .. })));
    }
}
