//! Small dense linear algebra: 3×3 solves and tall least squares.

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

/// Largest accepted condition estimate for a 3×3 system.
pub const MAX_CONDITION: f64 = 1e8;

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn matvec(a: &Mat3, x: &Vec3) -> Vec3 {
    [0, 1, 2].map(|i| a[i][0] * x[0] + a[i][1] * x[1] + a[i][2] * x[2])
}

pub fn max_abs_diff(a: &Mat3, b: &Mat3) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn inf_norm(a: &Mat3) -> f64 {
    a.iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// LU factorization with partial pivoting, `P A = L U` packed in one matrix.
struct Lu {
    lu: Mat3,
    perm: [usize; 3],
}

impl Lu {
    fn factor(a: &Mat3) -> Option<Lu> {
        let scale = a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        if scale == 0.0 || !scale.is_finite() {
            return None;
        }
        let mut lu = *a;
        let mut perm = [0, 1, 2];
        for col in 0..3 {
            let pivot = (col..3)
                .max_by(|&i, &j| lu[i][col].abs().total_cmp(&lu[j][col].abs()))
                .unwrap();
            if lu[pivot][col].abs() <= f64::EPSILON * scale * 1e-3 {
                return None;
            }
            lu.swap(col, pivot);
            perm.swap(col, pivot);
            for row in col + 1..3 {
                let f = lu[row][col] / lu[col][col];
                lu[row][col] = f;
                for k in col + 1..3 {
                    lu[row][k] -= f * lu[col][k];
                }
            }
        }
        Some(Lu { lu, perm })
    }

    fn solve(&self, b: &Vec3) -> Vec3 {
        let mut y = [b[self.perm[0]], b[self.perm[1]], b[self.perm[2]]];
        for i in 0..3 {
            for k in 0..i {
                y[i] -= self.lu[i][k] * y[k];
            }
        }
        for i in (0..3).rev() {
            for k in i + 1..3 {
                y[i] -= self.lu[i][k] * y[k];
            }
            y[i] /= self.lu[i][i];
        }
        y
    }

    fn inverse(&self) -> Mat3 {
        let mut inv = [[0.0; 3]; 3];
        for j in 0..3 {
            let mut e = [0.0; 3];
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..3 {
                inv[i][j] = col[i];
            }
        }
        inv
    }
}

/// Infinity-norm condition number of `a` after scaling each column to unit
/// max-abs. Column scaling removes the dependence on the units of the
/// unknowns, so matrices such as `[1, T1, T1²]` are judged on their geometry.
/// Returns infinity for singular matrices.
pub fn condition_estimate(a: &Mat3) -> f64 {
    let mut scaled = *a;
    for j in 0..3 {
        let m = (0..3).map(|i| a[i][j].abs()).fold(0.0, f64::max);
        if m == 0.0 {
            return f64::INFINITY;
        }
        for row in scaled.iter_mut() {
            row[j] /= m;
        }
    }
    match Lu::factor(&scaled) {
        Some(lu) => inf_norm(&scaled) * inf_norm(&lu.inverse()),
        None => f64::INFINITY,
    }
}

fn check_conditioned(a: &Mat3, context: &str) -> Result<Lu> {
    let condition = condition_estimate(a);
    if !(condition < MAX_CONDITION) {
        return Err(Error::Conditioning {
            condition,
            context: context.to_string(),
        });
    }
    Lu::factor(a).ok_or_else(|| Error::Conditioning {
        condition: f64::INFINITY,
        context: context.to_string(),
    })
}

/// Solve `a x = b` by partial-pivot elimination after a conditioning check.
pub fn solve3(a: &Mat3, b: &Vec3, context: &str) -> Result<Vec3> {
    let lu = check_conditioned(a, context)?;
    Ok(lu.solve(b))
}

/// `a⁻¹ b` for matrices, column by column.
pub fn solve3_mat(a: &Mat3, b: &Mat3, context: &str) -> Result<Mat3> {
    let lu = check_conditioned(a, context)?;
    let mut x = [[0.0; 3]; 3];
    for j in 0..3 {
        let col = lu.solve(&[b[0][j], b[1][j], b[2][j]]);
        for i in 0..3 {
            x[i][j] = col[i];
        }
    }
    Ok(x)
}

pub fn inverse3(a: &Mat3, context: &str) -> Result<Mat3> {
    solve3_mat(a, &IDENTITY, context)
}

/// Least-squares solution of a tall system given as columns, via Householder
/// QR on unit-scaled columns.
pub fn lstsq(columns: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let n = columns.len();
    let m = y.len();
    if n == 0 || columns.iter().any(|c| c.len() != m) {
        return Err(Error::Fit("least squares: inconsistent column lengths".into()));
    }
    if m < n {
        return Err(Error::Fit(format!("least squares: {m} samples for {n} unknowns")));
    }
    let scales: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    if scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Fit("least squares: zero or non-finite column".into()));
    }
    // column-major working copy
    let mut a: Vec<Vec<f64>> = columns
        .iter()
        .zip(&scales)
        .map(|(c, s)| c.iter().map(|x| x / s).collect())
        .collect();
    let mut rhs = y.to_vec();
    let mut diag = vec![0.0; n];
    for k in 0..n {
        let norm = a[k][k..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::Fit("least squares: singular normal equations".into()));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        diag[k] = alpha;
        for col in a.iter_mut().skip(k + 1) {
            let dot: f64 = v.iter().zip(&col[k..]).map(|(p, q)| p * q).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, p) in col[k..].iter_mut().zip(&v) {
                *c -= f * p;
            }
        }
        let dot: f64 = v.iter().zip(&rhs[k..]).map(|(p, q)| p * q).sum();
        let f = 2.0 * dot / vnorm2;
        for (r, p) in rhs[k..].iter_mut().zip(&v) {
            *r -= f * p;
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in i + 1..n {
            s -= a[j][i] * x[j];
        }
        x[i] = s / diag[i];
    }
    Ok(x.iter().zip(&scales).map(|(v, s)| v / s).collect())
}
