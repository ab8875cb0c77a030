//! Sparse LU factorization of a simplex basis with product-form updates.
//!
//! The factorization is computed by right-looking Gaussian elimination with
//! Markowitz pivot selection under a threshold test. Basis changes between
//! refactorizations are appended as eta columns.

use std::collections::BTreeSet;

/// Relative threshold for accepting a pivot within its column.
const PIVOT_THRESHOLD: f64 = 0.1;
/// Entries below this magnitude are treated as structural zeros when pivoting.
const DROP_TOL: f64 = 1e-12;
/// Number of lowest-count columns examined per Markowitz search.
const SEARCH_COLS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Singular {
    /// Basis positions that received no pivot.
    pub positions: Vec<usize>,
    /// Rows that received no pivot.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Eta {
    position: usize,
    pivot: f64,
    idx: Vec<usize>,
    val: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LuFactor {
    m: usize,
    pivot_row: Vec<usize>,
    pivot_col: Vec<usize>,
    l_start: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    u_diag: Vec<f64>,
    u_start: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
    etas: Vec<Eta>,
    eta_nnz: usize,
}

impl LuFactor {
    /// Factorizes the square matrix whose `c`-th column is `columns[c]`
    /// (row index, value pairs).
    pub fn factorize(m: usize, columns: &[Vec<(usize, f64)>]) -> Result<Self, Singular> {
        debug_assert_eq!(columns.len(), m);
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (c, col) in columns.iter().enumerate() {
            for &(r, v) in col {
                if v != 0.0 {
                    rows[r].push((c, v));
                    col_rows[c].push(r);
                }
            }
        }
        let mut row_active = vec![true; m];
        let mut col_active = vec![true; m];
        let mut col_count: Vec<usize> = col_rows.iter().map(Vec::len).collect();
        let mut by_count: BTreeSet<(usize, usize)> =
            (0..m).map(|c| (col_count[c], c)).collect();

        let mut f = LuFactor {
            m,
            l_start: vec![0],
            u_start: vec![0],
            ..Default::default()
        };
        let mut work = vec![0.0; m];
        let mut mark = vec![false; m];
        let mut seen: Vec<usize> = Vec::new();

        for _ in 0..m {
            // Markowitz search over the sparsest active columns.
            let mut best: Option<(usize, usize, usize, f64)> = None; // (cost, col, row, |a|)
            for &(count, c) in by_count.iter().take(SEARCH_COLS) {
                if count == 0 {
                    continue;
                }
                let entries: Vec<(usize, f64)> = col_rows[c]
                    .iter()
                    .filter(|&&r| row_active[r])
                    .filter_map(|&r| rows[r].iter().find(|e| e.0 == c).map(|e| (r, e.1)))
                    .collect();
                let cmax = entries.iter().fold(0.0f64, |a, e| a.max(e.1.abs()));
                if cmax <= DROP_TOL {
                    continue;
                }
                for (r, v) in entries {
                    if v.abs() < PIVOT_THRESHOLD * cmax {
                        continue;
                    }
                    let cost = (rows[r].len() - 1) * (count - 1);
                    let better = match best {
                        None => true,
                        Some((bc, bcol, brow, babs)) => {
                            (cost, c, r) < (bc, bcol, brow)
                                && !(cost == bc && c == bcol && v.abs() < babs)
                        }
                    };
                    if better {
                        best = Some((cost, c, r, v.abs()));
                    }
                }
                if matches!(best, Some((0, ..))) {
                    break;
                }
            }
            let (col, prow) = match best {
                Some((_, c, r, _)) => (c, r),
                None => {
                    // Fall back to a full scan before declaring singularity.
                    let mut found = None;
                    for &(count, c) in by_count.iter() {
                        if count == 0 {
                            continue;
                        }
                        let piv = col_rows[c]
                            .iter()
                            .filter(|&&r| row_active[r])
                            .filter_map(|&r| rows[r].iter().find(|e| e.0 == c).map(|e| (r, e.1)))
                            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)));
                        if let Some((r, v)) = piv {
                            if v.abs() > DROP_TOL {
                                found = Some((c, r));
                                break;
                            }
                        }
                    }
                    match found {
                        Some(x) => x,
                        None => {
                            return Err(Singular {
                                positions: (0..m).filter(|&c| col_active[c]).collect(),
                                rows: (0..m).filter(|&r| row_active[r]).collect(),
                            })
                        }
                    }
                }
            };

            // Pivot row becomes a row of U.
            let prow_entries = std::mem::take(&mut rows[prow]);
            let mut diag = 0.0;
            for &(c, v) in &prow_entries {
                if c == col {
                    diag = v;
                } else {
                    f.u_idx.push(c);
                    f.u_val.push(v);
                }
            }
            f.u_diag.push(diag);
            f.u_start.push(f.u_idx.len());
            f.pivot_row.push(prow);
            f.pivot_col.push(col);
            row_active[prow] = false;
            col_active[col] = false;
            by_count.remove(&(col_count[col], col));
            for &(c, _) in &prow_entries {
                if c != col {
                    by_count.remove(&(col_count[c], c));
                    col_count[c] -= 1;
                    by_count.insert((col_count[c], c));
                }
            }

            // Eliminate the pivot column from the other active rows.
            let targets: Vec<usize> = col_rows[col]
                .iter()
                .copied()
                .filter(|&r| row_active[r])
                .collect();
            for &(c, v) in &prow_entries {
                if c != col {
                    work[c] = v;
                    mark[c] = true;
                }
            }
            for r in targets {
                let Some(pos) = rows[r].iter().position(|e| e.0 == col) else {
                    continue;
                };
                let a = rows[r].swap_remove(pos).1;
                if a == 0.0 {
                    continue;
                }
                let l = a / diag;
                f.l_idx.push(r);
                f.l_val.push(l);
                // Update existing entries, then add fill.
                seen.clear();
                for e in rows[r].iter_mut() {
                    if mark[e.0] {
                        e.1 -= l * work[e.0];
                        seen.push(e.0);
                    }
                }
                for &s in &seen {
                    mark[s] = false;
                }
                for &(c, v) in &prow_entries {
                    if c != col && mark[c] {
                        rows[r].push((c, -l * v));
                        col_rows[c].push(r);
                        by_count.remove(&(col_count[c], c));
                        col_count[c] += 1;
                        by_count.insert((col_count[c], c));
                    }
                }
                for &s in &seen {
                    mark[s] = true;
                }
            }
            for &(c, _) in &prow_entries {
                work[c] = 0.0;
                mark[c] = false;
            }
            f.l_start.push(f.l_idx.len());
            col_rows[col].clear();
        }
        Ok(f)
    }

    pub fn update_count(&self) -> usize {
        self.etas.len()
    }

    pub fn eta_nnz(&self) -> usize {
        self.eta_nnz
    }

    /// Solves `B x = b`. `rhs` is indexed by row and is overwritten; the
    /// solution, indexed by basis position, is written to `out`.
    pub fn ftran(&self, rhs: &mut [f64], out: &mut [f64]) {
        let m = self.m;
        for k in 0..m {
            let bp = rhs[self.pivot_row[k]];
            if bp != 0.0 {
                for t in self.l_start[k]..self.l_start[k + 1] {
                    rhs[self.l_idx[t]] -= self.l_val[t] * bp;
                }
            }
        }
        for k in (0..m).rev() {
            let mut v = rhs[self.pivot_row[k]];
            for t in self.u_start[k]..self.u_start[k + 1] {
                v -= self.u_val[t] * out[self.u_idx[t]];
            }
            out[self.pivot_col[k]] = v / self.u_diag[k];
        }
        for eta in &self.etas {
            let xr = out[eta.position] / eta.pivot;
            if xr != 0.0 {
                for (&i, &a) in eta.idx.iter().zip(&eta.val) {
                    out[i] -= a * xr;
                }
            }
            out[eta.position] = xr;
        }
    }

    /// Solves `B^T y = c`. `rhs` is indexed by basis position and is
    /// overwritten; the solution, indexed by row, is written to `out`.
    pub fn btran(&self, rhs: &mut [f64], out: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let mut v = rhs[eta.position];
            for (&i, &a) in eta.idx.iter().zip(&eta.val) {
                v -= a * rhs[i];
            }
            rhs[eta.position] = v / eta.pivot;
        }
        for k in 0..self.m {
            let z = rhs[self.pivot_col[k]] / self.u_diag[k];
            out[self.pivot_row[k]] = z;
            if z != 0.0 {
                for t in self.u_start[k]..self.u_start[k + 1] {
                    rhs[self.u_idx[t]] -= self.u_val[t] * z;
                }
            }
        }
        for k in (0..self.m).rev() {
            let mut v = out[self.pivot_row[k]];
            for t in self.l_start[k]..self.l_start[k + 1] {
                v -= self.l_val[t] * out[self.l_idx[t]];
            }
            out[self.pivot_row[k]] = v;
        }
    }

    /// Records that the column at `position` was replaced by a column whose
    /// FTRAN image under the current basis is `alpha`.
    pub fn update(&mut self, position: usize, alpha: &[f64]) {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for (i, &a) in alpha.iter().enumerate() {
            if i != position && a != 0.0 {
                idx.push(i);
                val.push(a);
            }
        }
        self.eta_nnz += idx.len();
        self.etas.push(Eta {
            position,
            pivot: alpha[position],
            idx,
            val,
        });
    }
}
