//! Small dense solvers. Matrices are row-major `&[Vec<f64>]`.

/// Returned when the design has numerically dependent columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankDeficient;

/// Least squares `argmin ||A x - b||` by Householder QR.
///
/// Column `j` is considered dependent when `|R_jj| <= rel_tol * max_k |R_kk|`.
pub fn lstsq(a: &[Vec<f64>], b: &[f64], rel_tol: f64) -> Result<Vec<f64>, RankDeficient> {
    let rows = a.len();
    let cols = a.first().map_or(0, Vec::len);
    assert_eq!(rows, b.len());
    if rows < cols || cols == 0 {
        return Err(RankDeficient);
    }
    // Column-major working copy.
    let mut q: Vec<Vec<f64>> = (0..cols)
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect();
    let mut rhs = b.to_vec();
    let mut diag = vec![0.0; cols];

    for j in 0..cols {
        let norm = q[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag[j] = 0.0;
            continue;
        }
        let alpha = if q[j][j] > 0.0 { -norm } else { norm };
        // v = x - alpha e1, stored in place of column j below the diagonal.
        q[j][j] -= alpha;
        let vnorm2 = q[j][j..].iter().map(|v| v * v).sum::<f64>();
        diag[j] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        let (head, tail) = q.split_at_mut(j + 1);
        let v = &head[j][j..];
        for col in tail.iter_mut() {
            let dot: f64 = v.iter().zip(&col[j..]).map(|(x, y)| x * y).sum();
            let s = 2.0 * dot / vnorm2;
            col[j..].iter_mut().zip(v).for_each(|(c, x)| *c -= s * x);
        }
        let dot: f64 = v.iter().zip(&rhs[j..]).map(|(x, y)| x * y).sum();
        let s = 2.0 * dot / vnorm2;
        rhs[j..].iter_mut().zip(v).for_each(|(c, x)| *c -= s * x);
    }

    let scale = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if scale == 0.0 || diag.iter().any(|d| d.abs() <= rel_tol * scale) {
        return Err(RankDeficient);
    }
    // Back substitution on R (diag on the diagonal, q[k][j] above it for k > j).
    let mut x = vec![0.0; cols];
    for j in (0..cols).rev() {
        let mut acc = rhs[j];
        for k in j + 1..cols {
            acc -= q[k][j] * x[k];
        }
        x[j] = acc / diag[j];
    }
    Ok(x)
}

/// Solves a square system by Gaussian elimination with partial pivoting.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>, RankDeficient> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return Err(RankDeficient);
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .expect("non-empty");
        if m[pivot][col].abs() <= 1e-14 * scale {
            return Err(RankDeficient);
        }
        m.swap(col, pivot);
        x.swap(col, pivot);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            let (top, bottom) = m.split_at_mut(r);
            for (dst, src) in bottom[0][col..n].iter_mut().zip(&top[col][col..n]) {
                *dst -= f * src;
            }
            x[r] -= f * x[col];
        }
    }
    for r in (0..n).rev() {
        let mut acc = x[r];
        for c in r + 1..n {
            acc -= m[r][c] * x[c];
        }
        x[r] = acc / m[r][r];
    }
    Ok(x)
}
