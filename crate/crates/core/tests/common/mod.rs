//! Dense reference implementations used as test oracles. Nothing here
//! touches the library's linear algebra.

#![allow(dead_code)]

pub type Mat = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

pub fn transpose(a: &Mat) -> Mat {
    let (r, c) = (a.len(), a[0].len());
    let mut t = zeros(c, r);
    for i in 0..r {
        for j in 0..c {
            t[j][i] = a[i][j];
        }
    }
    t
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (r, m, c) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(r, c);
    for i in 0..r {
        for k in 0..m {
            let v = a[i][k];
            for j in 0..c {
                out[i][j] += v * b[k][j];
            }
        }
    }
    out
}

pub fn matvec(a: &Mat, v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut m: Mat = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        assert!(m[piv][col].abs() > 1e-300, "singular matrix");
        m.swap(col, piv);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for i in 0..n {
            if i != col {
                let f = m[i][col];
                if f != 0.0 {
                    for j in 0..2 * n {
                        m[i][j] -= f * m[col][j];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Autocovariances from the MA(infinity) representation.
pub fn psi_autocov(rho: &[f64], sigma: f64, max_lag: usize) -> Vec<f64> {
    let terms = 20_000;
    let mut psi = vec![0.0; terms];
    psi[0] = 1.0;
    for j in 1..terms {
        psi[j] = (1..=rho.len().min(j)).map(|i| rho[i - 1] * psi[j - i]).sum();
    }
    (0..=max_lag)
        .map(|h| sigma * sigma * (0..terms - h).map(|j| psi[j] * psi[j + h]).sum::<f64>())
        .collect()
}

/// Newey-West covariance by explicit sums over observation pairs.
pub fn naive_nw_cov(x: &Mat, e: &[f64], unit: &[usize], lag: usize, adjust: bool) -> Mat {
    let n = x.len();
    let p = x[0].len();
    let mut meat = zeros(p, p);
    for t in 0..n {
        for s in 0..n {
            let d = t.abs_diff(s);
            if unit[t] != unit[s] || d > lag {
                continue;
            }
            let w = 1.0 - d as f64 / (lag as f64 + 1.0);
            for a in 0..p {
                for b in 0..p {
                    meat[a][b] += w * e[t] * e[s] * x[t][a] * x[s][b];
                }
            }
        }
    }
    let bread = inverse(&matmul(&transpose(x), x));
    let mut cov = matmul(&matmul(&bread, &meat), &bread);
    if adjust {
        let f = n as f64 / (n - p) as f64;
        for row in cov.iter_mut() {
            for v in row.iter_mut() {
                *v *= f;
            }
        }
    }
    cov
}

/// Exact GLS for block-diagonal `Omega` (one Toeplitz block per unit).
pub fn dense_gls(x: &Mat, y: &[f64], blocks: &[usize], gamma: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut omega = zeros(n, n);
    let mut start = 0;
    for &len in blocks {
        for i in 0..len {
            for j in 0..len {
                omega[start + i][start + j] = gamma[i.abs_diff(j)];
            }
        }
        start += len;
    }
    let w = inverse(&omega);
    let xt = transpose(x);
    let xtw = matmul(&xt, &w);
    let a = matmul(&xtw, x);
    let b = matvec(&xtw, y);
    matvec(&inverse(&a), &b)
}
