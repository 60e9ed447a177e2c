//! Dense least squares by Householder QR with column pivoting.
//!
//! Columns whose remaining norm falls below a relative tolerance are treated
//! as linearly dependent and receive a zero coefficient.

use alloc::vec;
use alloc::vec::Vec;

/// Relative column-norm threshold below which a column counts as dependent.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct LstsqSolution {
    pub coef: Vec<f64>,
    pub rank: usize,
    /// Columns given a zero coefficient (all-zero or collinear).
    pub dropped: Vec<usize>,
}

/// Row-major `n x p` design matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    pub n: usize,
    pub p: usize,
    pub data: Vec<f64>,
}

impl Design {
    pub fn with_capacity(p: usize, rows: usize) -> Self {
        Design { n: 0, p, data: Vec::with_capacity(p * rows) }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.p);
        self.data.extend_from_slice(row);
        self.n += 1;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn predict(&self, coef: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), coef)).collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize `sum_i w_i (y_i - x_i . beta)^2`. `weights = None` means ordinary
/// least squares.
pub fn weighted_lstsq(x: &Design, y: &[f64], weights: Option<&[f64]>) -> LstsqSolution {
    let (n, p) = (x.n, x.p);
    debug_assert_eq!(y.len(), n);
    // column-major working copy of sqrt(w) * X
    let sw: Vec<f64> = match weights {
        Some(w) => w.iter().map(|&v| libm::sqrt(v.max(0.0))).collect(),
        None => vec![1.0; n],
    };
    let mut cols: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..n).map(|i| x.data[i * p + j] * sw[i]).collect())
        .collect();
    let mut rhs: Vec<f64> = y.iter().zip(&sw).map(|(v, s)| v * s).collect();

    let mut perm: Vec<usize> = (0..p).collect();
    let zero: Vec<bool> = cols.iter().map(|c| c.iter().all(|v| *v == 0.0)).collect();
    // move exact-zero columns to the back so they never take part in elimination
    perm.sort_by_key(|&j| zero[j]);
    let live = zero.iter().filter(|z| !**z).count();
    let mut cols_perm: Vec<Vec<f64>> = perm.iter().map(|&j| core::mem::take(&mut cols[j])).collect();

    let col_norm2 = |c: &[f64], from: usize| c[from..].iter().map(|v| v * v).sum::<f64>();
    let max_norm = (0..live).map(|j| libm::sqrt(col_norm2(&cols_perm[j], 0))).fold(0.0, f64::max);
    let tol = RANK_TOL * max_norm;

    let mut rank = 0;
    let steps = live.min(n);
    for k in 0..steps {
        // pivot: largest remaining norm among k..live
        let mut best = k;
        let mut best_norm = -1.0;
        for j in k..live {
            let nj = col_norm2(&cols_perm[j], k);
            if nj > best_norm {
                best_norm = nj;
                best = j;
            }
        }
        if libm::sqrt(best_norm) <= tol {
            break;
        }
        cols_perm.swap(k, best);
        perm.swap(k, best);

        // Householder reflector for column k, rows k..n
        let alpha = {
            let c = &cols_perm[k];
            let norm = libm::sqrt(col_norm2(c, k));
            if c[k] > 0.0 {
                -norm
            } else {
                norm
            }
        };
        let mut v: Vec<f64> = cols_perm[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        if vnorm2 > 0.0 {
            for col in cols_perm.iter_mut().take(p).skip(k + 1) {
                let s = dot(&v, &col[k..]) * 2.0 / vnorm2;
                for (ci, vi) in col[k..].iter_mut().zip(&v) {
                    *ci -= s * vi;
                }
            }
            let s = dot(&v, &rhs[k..]) * 2.0 / vnorm2;
            for (ri, vi) in rhs[k..].iter_mut().zip(&v) {
                *ri -= s * vi;
            }
        }
        let c = &mut cols_perm[k];
        c[k] = alpha;
        for t in c[k + 1..].iter_mut() {
            *t = 0.0;
        }
        rank = k + 1;
    }

    // back substitution on the leading rank x rank block
    let mut beta_perm = vec![0.0; p];
    for i in (0..rank).rev() {
        let mut s = rhs[i];
        for j in i + 1..rank {
            s -= cols_perm[j][i] * beta_perm[j];
        }
        beta_perm[i] = s / cols_perm[i][i];
    }
    let mut coef = vec![0.0; p];
    for (k, &j) in perm.iter().enumerate() {
        coef[j] = beta_perm[k];
    }
    let mut dropped: Vec<usize> = perm[rank..].to_vec();
    dropped.sort_unstable();
    LstsqSolution { coef, rank, dropped }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(rows: &[&[f64]]) -> Design {
        let mut d = Design::with_capacity(rows[0].len(), rows.len());
        for r in rows {
            d.push_row(r);
        }
        d
    }

    #[test]
    fn exact_solution() {
        let x = design(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[2.0, -1.0]]);
        let y: Vec<f64> = (0..4).map(|i| 3.0 * x.row(i)[0] - 2.0 * x.row(i)[1]).collect();
        let s = weighted_lstsq(&x, &y, None);
        assert_eq!(s.rank, 2);
        assert!((s.coef[0] - 3.0).abs() < 1e-12 && (s.coef[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_line() {
        // y = 1 + 2x with residuals; closed form slope/intercept
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.1, 2.9, 5.2, 6.8];
        let rows: Vec<Vec<f64>> = xs.iter().map(|&v| vec![1.0, v]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = weighted_lstsq(&design(&refs), &ys, None);
        let mx = 1.5;
        let my = ys.iter().sum::<f64>() / 4.0;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        assert!((s.coef[1] - slope).abs() < 1e-12);
        assert!((s.coef[0] - (my - slope * mx)).abs() < 1e-12);
    }

    #[test]
    fn collinear_and_zero_columns_dropped() {
        let x = design(&[
            &[1.0, 2.0, 0.0, 1.0],
            &[2.0, 4.0, 0.0, 0.0],
            &[3.0, 6.0, 0.0, 1.0],
            &[1.0, 2.0, 0.0, 5.0],
        ]);
        let y = [1.0, 2.0, 3.0, 1.0];
        let s = weighted_lstsq(&x, &y, None);
        assert_eq!(s.rank, 2);
        assert!(s.dropped.contains(&2));
        assert_eq!(s.dropped.len(), 2);
        let fitted = x.predict(&s.coef);
        for (f, t) in fitted.iter().zip(&y) {
            assert!((f - t).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let x = design(&[&[1.0], &[1.0], &[1.0]]);
        let s = weighted_lstsq(&x, &[2.0, 2.0, 100.0], Some(&[1.0, 1.0, 0.0]));
        assert!((s.coef[0] - 2.0).abs() < 1e-12);
    }
}
