//! Small dense solvers: pivoted Cholesky for least squares, LU for kriging.

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }
}

/// LU factorisation with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    /// Returns `None` when a pivot falls below `1e-12` times the largest
    /// absolute entry of the input.
    pub fn factor(mut a: Matrix) -> Option<Lu> {
        let n = a.n;
        let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return None;
        }
        let tol = 1e-12 * scale;
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, a.get(i, k).abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax <= tol {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = a.get(k, k);
            for i in (k + 1)..n {
                let f = a.get(i, k) / pivot;
                a.set(i, k, f);
                if f != 0.0 {
                    for j in (k + 1)..n {
                        let v = a.get(i, j) - f * a.get(k, j);
                        a.set(i, j, v);
                    }
                }
            }
        }
        Some(Lu { lu: a, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu.get(i, j) * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu.get(i, j) * x[j];
            }
            x[i] = s / self.lu.get(i, i);
        }
        x
    }
}

/// Outcome of a symmetric positive semi-definite solve.
#[derive(Debug, Clone, PartialEq)]
pub enum SpdSolve {
    Solution(Vec<f64>),
    /// Column `dependent` is a combination of `partners` (all indices refer
    /// to the original column order).
    RankDeficient {
        dependent: usize,
        partners: Vec<usize>,
    },
}

/// Solve `A x = b` for a symmetric positive semi-definite `A` using a
/// diagonally pivoted Cholesky factorisation on the Jacobi-scaled matrix.
/// A remaining pivot below `rank_tol` times the largest scaled diagonal
/// flags rank deficiency.
pub fn solve_spd_pivoted(a: &Matrix, b: &[f64], rank_tol: f64) -> SpdSolve {
    let n = a.n;
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let v = a.get(i, i);
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    // Scaled copy, permuted in place alongside `perm`.
    let mut s = Matrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            s.set(i, j, a.get(i, j) / (d[i] * d[j]));
        }
    }
    let max_diag = (0..n).map(|i| s.get(i, i)).fold(0.0f64, f64::max);
    let tol = rank_tol * max_diag.max(f64::MIN_POSITIVE);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = Matrix::zeros(n);

    for k in 0..n {
        // Remaining diagonal of the Schur complement.
        let mut best = k;
        let mut best_val = f64::NEG_INFINITY;
        for i in k..n {
            let mut v = s.get(i, i);
            for j in 0..k {
                v -= l.get(i, j) * l.get(i, j);
            }
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        if best_val <= tol {
            let dependent = perm[k];
            let partners = collinear_partners(&s, &l, k, &perm);
            return SpdSolve::RankDeficient {
                dependent,
                partners,
            };
        }
        if best != k {
            swap_sym(&mut s, k, best);
            for j in 0..k {
                let tmp = l.get(k, j);
                l.set(k, j, l.get(best, j));
                l.set(best, j, tmp);
            }
            perm.swap(k, best);
        }
        let lkk = best_val.sqrt();
        l.set(k, k, lkk);
        for i in (k + 1)..n {
            let mut v = s.get(i, k);
            for j in 0..k {
                v -= l.get(i, j) * l.get(k, j);
            }
            l.set(i, k, v / lkk);
        }
    }

    // Solve L L^T y = P^T D^-1 b, then x = D^-1 P y.
    let rhs: Vec<f64> = perm.iter().map(|&p| b[p] / d[p]).collect();
    let mut y = rhs;
    for i in 0..n {
        let mut v = y[i];
        for j in 0..i {
            v -= l.get(i, j) * y[j];
        }
        y[i] = v / l.get(i, i);
    }
    for i in (0..n).rev() {
        let mut v = y[i];
        for j in (i + 1)..n {
            v -= l.get(j, i) * y[j];
        }
        y[i] = v / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for (k, &p) in perm.iter().enumerate() {
        x[p] = y[k] / d[p];
    }
    SpdSolve::Solution(x)
}

fn swap_sym(s: &mut Matrix, a: usize, b: usize) {
    let n = s.n;
    for j in 0..n {
        s.data.swap(a * n + j, b * n + j);
    }
    for i in 0..n {
        s.data.swap(i * n + a, i * n + b);
    }
}

/// Express the first non-pivoted column through the `k` pivoted ones and
/// report those with a non-negligible coefficient.
fn collinear_partners(s: &Matrix, l: &Matrix, k: usize, perm: &[usize]) -> Vec<usize> {
    // Solve L11 L11^T c = S12[:, k].
    let mut c: Vec<f64> = (0..k).map(|i| s.get(i, k)).collect();
    for i in 0..k {
        let mut v = c[i];
        for j in 0..i {
            v -= l.get(i, j) * c[j];
        }
        c[i] = v / l.get(i, i);
    }
    for i in (0..k).rev() {
        let mut v = c[i];
        for j in (i + 1)..k {
            v -= l.get(j, i) * c[j];
        }
        c[i] = v / l.get(i, i);
    }
    let mut partners: Vec<usize> = c
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > 1e-6)
        .map(|(i, _)| perm[i])
        .collect();
    partners.sort_unstable();
    partners
}
