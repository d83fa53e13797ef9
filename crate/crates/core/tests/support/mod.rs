//! Reference computations that share no code with the library.

#![allow(dead_code)]

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns the
/// eigenvalues in descending order and the matching eigenvectors as columns.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        let total: f64 = m.iter().flatten().map(|x| x * x).sum();
        if off <= 1e-30 * total.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let vals = order.iter().map(|&i| m[i][i]).collect();
    let vecs = order.iter().map(|&i| v.iter().map(|row| row[i]).collect()).collect();
    (vals, vecs)
}

/// Explicit feature map of `(<x, y> + 1)^2`.
pub fn quadratic_features(x: &[f64]) -> Vec<f64> {
    let s2 = 2f64.sqrt();
    let mut f = vec![1.0];
    f.extend(x.iter().map(|v| s2 * v));
    for i in 0..x.len() {
        f.push(x[i] * x[i]);
        for j in i + 1..x.len() {
            f.push(s2 * x[i] * x[j]);
        }
    }
    f
}

pub fn mean(vectors: &[Vec<f64>]) -> Vec<f64> {
    let d = vectors[0].len();
    let n = vectors.len() as f64;
    (0..d).map(|k| vectors.iter().map(|v| v[k]).sum::<f64>() / n).collect()
}

/// Scatter matrix `sum (v - mean)(v - mean)^T`.
pub fn scatter(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mu = mean(vectors);
    let d = mu.len();
    let mut s = vec![vec![0.0; d]; d];
    for v in vectors {
        for i in 0..d {
            for j in 0..d {
                s[i][j] += (v[i] - mu[i]) * (v[j] - mu[j]);
            }
        }
    }
    s
}

/// Nonzero eigenvalues of the centered kernel matrix, from the scatter of
/// explicitly mapped features.
pub fn quadratic_kernel_spectrum(vectors: &[Vec<f64>]) -> Vec<f64> {
    let feats: Vec<Vec<f64>> = vectors.iter().map(|v| quadratic_features(v)).collect();
    jacobi_eigen(&scatter(&feats)).0
}

/// `mean + U U^T (x - mean)` with `U` the top-`r` principal directions.
pub fn pca_projection(vectors: &[Vec<f64>], r: usize, x: &[f64]) -> Vec<f64> {
    let mu = mean(vectors);
    let (_, dirs) = jacobi_eigen(&scatter(vectors));
    let mut out = mu.clone();
    for u in dirs.iter().take(r) {
        let score: f64 = u.iter().zip(x).zip(&mu).map(|((u, x), m)| u * (x - m)).sum();
        for (o, u) in out.iter_mut().zip(u) {
            *o += score * u;
        }
    }
    out
}

/// Scores of `x - mean` on the top-`r` principal directions.
pub fn pca_scores(vectors: &[Vec<f64>], r: usize, x: &[f64]) -> Vec<f64> {
    let mu = mean(vectors);
    let (_, dirs) = jacobi_eigen(&scatter(vectors));
    dirs.iter().take(r).map(|u| u.iter().zip(x).zip(&mu).map(|((u, x), m)| u * (x - m)).sum()).collect()
}

/// FA from three eigenvalues.
pub fn fractional_anisotropy(l: [f64; 3]) -> f64 {
    let md = (l[0] + l[1] + l[2]) / 3.0;
    let num: f64 = l.iter().map(|v| (v - md) * (v - md)).sum();
    let den: f64 = l.iter().map(|v| v * v).sum();
    (1.5 * num / den).sqrt()
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}
