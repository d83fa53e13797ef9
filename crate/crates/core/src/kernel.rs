//! Polynomial-kernel PCA with a closed-form pre-image.
//!
//! Training signals are the columns of an `nq x N` matrix. The model keeps
//! the leading eigenpairs of the feature-space-centered Gram matrix, projects
//! new signals onto them and maps scores back to signal space by inverting
//! the kernel `k(x, y) = (<x, y> + b)^c` against every training signal and
//! solving the resulting overdetermined linear system.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::{Error, Result};

/// Eigenvalues below `max_eigenvalue * EIGEN_CUTOFF` are discarded.
pub const EIGEN_CUTOFF: f64 = 1e-12;
/// Relative singular-value cutoff of the pre-image least-squares solve.
pub const LSQ_CUTOFF: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    pub offset_b: T,
    pub degree_c: u32,
}

impl<T: Real> KernelParams<T> {
    pub fn new(offset_b: T, degree_c: u32) -> Result<Self> {
        if degree_c < 1 {
            return Err(Error::InvalidArgument("kernel degree must be >= 1".into()));
        }
        if !(offset_b >= T::zero()) || !offset_b.is_finite() {
            return Err(Error::InvalidArgument(format!("kernel offset must be >= 0, got {offset_b}")));
        }
        Ok(Self { offset_b, degree_c })
    }

    pub fn linear() -> Self {
        Self { offset_b: T::zero(), degree_c: 1 }
    }

    /// Kernel value from a precomputed inner product.
    #[inline]
    pub fn from_dot(&self, dot: T) -> T {
        (dot + self.offset_b).powi(self.degree_c as i32)
    }

    /// Inverse of the kernel's outer power: returns the inner product whose
    /// kernel value is `kappa`, and whether clamping was needed.
    #[inline]
    pub fn invert(&self, kappa: T) -> (T, bool) {
        let c = self.degree_c;
        if c == 1 {
            return (kappa - self.offset_b, false);
        }
        let inv = T::one() / T::lit(c as f64);
        if c % 2 == 1 {
            let root = kappa.fabs().powf(inv);
            let root = if kappa < T::zero() { -root } else { root };
            (root - self.offset_b, false)
        } else if kappa < T::zero() {
            (-self.offset_b, true)
        } else {
            (kappa.powf(inv) - self.offset_b, false)
        }
    }
}

impl<T: Real> Default for KernelParams<T> {
    fn default() -> Self {
        Self { offset_b: T::one(), degree_c: 2 }
    }
}

pub fn kernel_eval<T: Real>(x: &[T], y: &[T], params: &KernelParams<T>) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("kernel arguments of length {} and {}", x.len(), y.len())));
    }
    let dot = x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
    Ok(params.from_dot(dot))
}

/// Uncentered and centered Gram matrices of a training set.
#[derive(Clone, Debug)]
pub struct Gram<T: Real> {
    pub k: DMatrix<T>,
    pub kc: DMatrix<T>,
    /// Row means of `k` (equal to its column means).
    pub row_mean: DVector<T>,
    /// Mean of all entries of `k`.
    pub mean: T,
}

pub fn gram_centered<T: Real>(x: &DMatrix<T>, params: &KernelParams<T>) -> Result<Gram<T>> {
    let n = x.ncols();
    if n < 2 {
        return Err(Error::Shape(format!("need at least 2 training signals, got {n}")));
    }
    let mut k = x.transpose() * x;
    k.apply(|v| *v = params.from_dot(*v));
    // exact symmetry regardless of GEMM rounding
    for i in 0..n {
        for j in 0..i {
            let v = (k[(i, j)] + k[(j, i)]) * T::lit(0.5);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let inv_n = T::one() / T::lit(n as f64);
    let row_mean = DVector::from_fn(n, |i, _| k.row(i).sum() * inv_n);
    let mean = row_mean.sum() * inv_n;
    let kc = DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_mean[i] - row_mean[j] + mean);
    Ok(Gram { k, kc, row_mean, mean })
}

/// Eigen-decomposition of a symmetric matrix, computed in f64.
pub struct SymmetricEigen<T: Real> {
    pub eigenvalues: DVector<T>,
    /// One unit eigenvector per column.
    pub eigenvectors: DMatrix<T>,
}

pub fn symmetric_eigen<T: Real>(a: &DMatrix<T>) -> Result<SymmetricEigen<T>> {
    let n = a.nrows();
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)].as_f64());
    let eig = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::DegenerateTraining(format!("eigen-decomposition failed: {e:?}")))?;
    let (u, s) = (eig.U(), eig.S().column_vector());
    Ok(SymmetricEigen {
        eigenvalues: DVector::from_fn(n, |i, _| T::lit(s[i])),
        eigenvectors: DMatrix::from_fn(n, n, |i, j| T::lit(u[(i, j)])),
    })
}

/// Leading eigenpairs of the centered Gram matrix of `x`.
///
/// When the kernel's explicit feature space is much smaller than the training
/// set, the decomposition runs on the `D x D` feature covariance and the Gram
/// eigenvectors are recovered as `Phi_c^T v / sqrt(lambda)`; only those `D`
/// pairs are returned (the rest of the spectrum is zero). Otherwise the dense
/// `N x N` matrix is decomposed.
pub fn centered_eigen<T: Real>(x: &DMatrix<T>, params: &KernelParams<T>, gram: &Gram<T>) -> Result<SymmetricEigen<T>> {
    let n = x.ncols();
    match feature_dim(x.nrows(), params, n / 2) {
        Some(_) => primal_eigen(x, params),
        None => symmetric_eigen(&gram.kc),
    }
}

/// Dimension of the explicit polynomial feature space, if it is `<= limit`.
fn feature_dim<T: Real>(nq: usize, params: &KernelParams<T>, limit: usize) -> Option<usize> {
    // monomials of degree c in nq variables, plus the offset slot when b > 0
    let vars = nq + usize::from(params.offset_b > T::zero());
    let c = params.degree_c as usize;
    let mut d: usize = 1;
    for i in 1..=c {
        d = d.checked_mul(vars + i - 1)? / i;
        if d > limit {
            return None;
        }
    }
    Some(d)
}

/// Exponent vectors of every feature with the multinomial weight
/// `sqrt(c! / prod k_i! * b^k0)`, as `(weight, [(variable, power)])`.
fn monomials(nq: usize, degree: u32, offset: f64) -> Vec<(f64, Vec<(usize, i32)>)> {
    fn rec(var: usize, nq: usize, left: u32, cur: &mut Vec<(usize, i32)>, out: &mut Vec<Vec<(usize, i32)>>) {
        if var == nq || left == 0 {
            out.push(cur.clone());
            return;
        }
        for p in (0..=left).rev() {
            if p > 0 {
                cur.push((var, p as i32));
            }
            rec(var + 1, nq, left - p, cur, out);
            if p > 0 {
                cur.pop();
            }
        }
    }
    let mut exps = Vec::new();
    rec(0, nq, degree, &mut Vec::new(), &mut exps);
    let fact = |k: u32| (1..=k).map(f64::from).product::<f64>();
    exps.into_iter()
        .filter_map(|e| {
            let used: u32 = e.iter().map(|&(_, p)| p as u32).sum();
            let k0 = degree - used;
            if k0 > 0 && offset == 0.0 {
                return None;
            }
            let w = fact(degree) / (fact(k0) * e.iter().map(|&(_, p)| fact(p as u32)).product::<f64>()) * offset.powi(k0 as i32);
            Some((w.sqrt(), e))
        })
        .collect()
}

fn primal_eigen<T: Real>(x: &DMatrix<T>, params: &KernelParams<T>) -> Result<SymmetricEigen<T>> {
    let (nq, n) = x.shape();
    let terms = monomials(nq, params.degree_c, params.offset_b.as_f64());
    let d = terms.len();
    let mut phi = faer::Mat::<f64>::from_fn(d, n, |f, j| {
        let (w, e) = &terms[f];
        e.iter().fold(*w, |acc, &(i, p)| acc * x[(i, j)].as_f64().powi(p))
    });
    for f in 0..d {
        let mean = (0..n).map(|j| phi[(f, j)]).sum::<f64>() / n as f64;
        for j in 0..n {
            phi[(f, j)] -= mean;
        }
    }
    let cov = &phi * phi.transpose();
    let cov = faer::Mat::<f64>::from_fn(d, d, |i, j| 0.5 * (cov[(i, j)] + cov[(j, i)]));
    let eig = cov
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::DegenerateTraining(format!("eigen-decomposition failed: {e:?}")))?;
    let (v, s) = (eig.U(), eig.S().column_vector());
    let u = phi.transpose() * v;
    Ok(SymmetricEigen {
        eigenvalues: DVector::from_fn(d, |i, _| T::lit(s[i])),
        eigenvectors: DMatrix::from_fn(n, d, |j, i| {
            let scale = if s[i] > 0.0 { 1.0 / s[i].sqrt() } else { 1.0 };
            T::lit(u[(j, i)] * scale)
        }),
    })
}

/// Trained kernel-PCA state.
#[derive(Clone, Debug)]
pub struct KernelModel<T: Real> {
    training: DMatrix<T>,
    params: KernelParams<T>,
    alphas: DMatrix<T>,
    eigvals: DVector<T>,
    rank_r: usize,
    gram_row_mean: DVector<T>,
    gram_mean: T,
    input_scale: T,
    /// `K alpha_i - row_mean * sum(alpha_i)`: uncentered kernel values of each
    /// feature-space eigenvector against the training signals.
    feature_gram: DMatrix<T>,
    /// Pseudo-inverse of the transposed training matrix, `nq x N`.
    pinv: Option<DMatrix<T>>,
    training_t: DMatrix<T>,
    alphas_t: DMatrix<T>,
}

pub fn kpca_fit<T: Real>(x: &DMatrix<T>, params: KernelParams<T>, rank_r: usize) -> Result<KernelModel<T>> {
    fit_scaled(x.clone(), params, rank_r, T::one())
}

/// Fits on `x` rescaled so that the median training-signal norm is one. The
/// scale is stored in the model and applied to every projected signal.
pub fn kpca_fit_normalized<T: Real>(x: &DMatrix<T>, params: KernelParams<T>, rank_r: usize) -> Result<KernelModel<T>> {
    let mut norms: Vec<T> = x.column_iter().map(|c| c.norm()).collect();
    norms.sort_by(|a, b| a.partial_cmp(b).expect("finite norms"));
    let median = if norms.is_empty() {
        T::zero()
    } else if norms.len() % 2 == 1 {
        norms[norms.len() / 2]
    } else {
        (norms[norms.len() / 2 - 1] + norms[norms.len() / 2]) * T::lit(0.5)
    };
    if !(median > T::zero()) {
        return Err(Error::DegenerateTraining("median training norm is zero".into()));
    }
    let scale = T::one() / median;
    fit_scaled(x * scale, params, rank_r, scale)
}

fn fit_scaled<T: Real>(x: DMatrix<T>, params: KernelParams<T>, rank_r: usize, input_scale: T) -> Result<KernelModel<T>> {
    let n = x.ncols();
    if rank_r < 1 || rank_r > n {
        return Err(Error::InvalidArgument(format!("rank {rank_r} must lie in [1, {n}]")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training matrix"));
    }
    let gram = gram_centered(&x, &params)?;
    let eig = centered_eigen(&x, &params, &gram)?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });
    let lambda_max = eig.eigenvalues[order[0]];
    if !(lambda_max > T::zero()) {
        return Err(Error::DegenerateTraining("centered Gram matrix has no positive eigenvalue".into()));
    }
    let cutoff = lambda_max * T::lit(EIGEN_CUTOFF);
    let kept: Vec<usize> = order.into_iter().take(rank_r).take_while(|&i| eig.eigenvalues[i] > cutoff).collect();
    let r = kept.len();
    let eigvals = DVector::from_iterator(r, kept.iter().map(|&i| eig.eigenvalues[i]));
    let mut alphas = DMatrix::zeros(n, r);
    for (col, &i) in kept.iter().enumerate() {
        let u = eig.eigenvectors.column(i);
        // sign: largest-magnitude entry positive (first one on ties)
        let mut arg = 0;
        for j in 1..n {
            if u[j].fabs() > u[arg].fabs() {
                arg = j;
            }
        }
        let sign = if u[arg] < T::zero() { -T::one() } else { T::one() };
        let s = sign / eigvals[col].sqrt() / u.norm();
        alphas.set_column(col, &(u * s));
    }
    KernelModel::assemble(x, params, alphas, eigvals, rank_r, gram, input_scale)
}

impl<T: Real> KernelModel<T> {
    fn assemble(
        training: DMatrix<T>,
        params: KernelParams<T>,
        alphas: DMatrix<T>,
        eigvals: DVector<T>,
        rank_r: usize,
        gram: Gram<T>,
        input_scale: T,
    ) -> Result<Self> {
        let sums = alphas.row_sum();
        let feature_gram = &gram.k * &alphas - &gram.row_mean * sums;
        let xt = training.transpose();
        let alphas_t = alphas.transpose();
        let svd = SVD::new(xt.clone(), true, true);
        let smax = svd.singular_values.max();
        let pinv = if smax > T::zero() {
            Some(svd.pseudo_inverse(smax * T::lit(LSQ_CUTOFF)).map_err(|e| Error::DegenerateTraining(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            training,
            params,
            alphas,
            eigvals,
            rank_r,
            gram_row_mean: gram.row_mean,
            gram_mean: gram.mean,
            input_scale,
            feature_gram,
            pinv,
            training_t: xt,
            alphas_t,
        })
    }

    /// Rebuilds a model from stored components (derived quantities are
    /// recomputed from the training matrix).
    pub fn from_parts(
        training: DMatrix<T>,
        params: KernelParams<T>,
        alphas: DMatrix<T>,
        eigvals: DVector<T>,
        rank_r: usize,
        input_scale: T,
    ) -> Result<Self> {
        let n = training.ncols();
        if alphas.nrows() != n || alphas.ncols() != eigvals.len() {
            return Err(Error::Shape(format!(
                "alphas {}x{} inconsistent with N={n} and {} eigenvalues",
                alphas.nrows(),
                alphas.ncols(),
                eigvals.len()
            )));
        }
        let gram = gram_centered(&training, &params)?;
        Self::assemble(training, params, alphas, eigvals, rank_r, gram, input_scale)
    }

    pub fn training(&self) -> &DMatrix<T> {
        &self.training
    }
    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }
    pub fn alphas(&self) -> &DMatrix<T> {
        &self.alphas
    }
    pub fn eigvals(&self) -> &DVector<T> {
        &self.eigvals
    }
    /// Requested rank.
    pub fn rank_r(&self) -> usize {
        self.rank_r
    }
    /// Number of retained eigenpairs.
    pub fn effective_rank(&self) -> usize {
        self.eigvals.len()
    }
    /// True when fewer eigenpairs than requested cleared the cutoff.
    pub fn rank_reduced(&self) -> bool {
        self.effective_rank() < self.rank_r
    }
    pub fn gram_row_mean(&self) -> &DVector<T> {
        &self.gram_row_mean
    }
    pub fn gram_mean(&self) -> T {
        self.gram_mean
    }
    pub fn input_scale(&self) -> T {
        self.input_scale
    }
    pub fn dim(&self) -> usize {
        self.training.nrows()
    }
    pub fn n_train(&self) -> usize {
        self.training.ncols()
    }

    /// Centered kernel values between each column of `profiles` and each
    /// training signal, `N x M`.
    fn centered_test_kernel(&self, profiles: &DMatrix<T>) -> Result<DMatrix<T>> {
        if profiles.nrows() != self.dim() {
            return Err(Error::Shape(format!("signal length {} but model dimension {}", profiles.nrows(), self.dim())));
        }
        let mut kt = &self.training_t * profiles;
        let scale = self.input_scale;
        kt.apply(|v| *v = self.params.from_dot(*v * scale));
        let inv_n = T::one() / T::lit(self.n_train() as f64);
        for mut col in kt.column_iter_mut() {
            let cm = col.sum() * inv_n;
            for (v, &rm) in col.iter_mut().zip(self.gram_row_mean.iter()) {
                *v = *v - cm - rm + self.gram_mean;
            }
        }
        Ok(kt)
    }

    /// Scores of each column of `profiles` on the retained eigenvectors, `r x M`.
    pub fn project_batch(&self, profiles: &DMatrix<T>) -> Result<DMatrix<T>> {
        let kt = self.centered_test_kernel(profiles)?;
        Ok(&self.alphas_t * &kt)
    }

    pub fn project(&self, x: &[T]) -> Result<DVector<T>> {
        let m = DMatrix::from_column_slice(x.len(), 1, x);
        Ok(self.project_batch(&m)?.column(0).into_owned())
    }

    /// Pre-images of each score column, `nq x M`, plus the number of kernel
    /// values clamped to zero before the even-degree root.
    pub fn preimage_batch(&self, betas: &DMatrix<T>) -> Result<(DMatrix<T>, usize)> {
        if betas.nrows() != self.effective_rank() {
            return Err(Error::Shape(format!("{} scores but effective rank {}", betas.nrows(), self.effective_rank())));
        }
        let pinv = self
            .pinv
            .as_ref()
            .ok_or_else(|| Error::DegenerateTraining("training matrix is numerically zero".into()))?;
        let mut kappa = &self.feature_gram * betas;
        let mut clamped = 0;
        for mut col in kappa.column_iter_mut() {
            for (v, &rm) in col.iter_mut().zip(self.gram_row_mean.iter()) {
                let (s, c) = self.params.invert(*v + rm);
                clamped += c as usize;
                *v = s;
            }
        }
        let mut x = pinv * kappa;
        x /= self.input_scale;
        Ok((x, clamped))
    }

    pub fn preimage(&self, beta: &[T]) -> Result<(DVector<T>, usize)> {
        let m = DMatrix::from_column_slice(beta.len(), 1, beta);
        let (x, clamped) = self.preimage_batch(&m)?;
        Ok((x.column(0).into_owned(), clamped))
    }

    /// `preimage(project(x))` for every column.
    pub fn denoise_batch(&self, profiles: &DMatrix<T>) -> Result<(DMatrix<T>, usize)> {
        self.preimage_batch(&self.project_batch(profiles)?)
    }
}

/// Principal angles (radians, ascending) between the column spaces of `a`
/// and `b`.
pub fn principal_angles<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<Vec<T>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!("subspaces in R^{} and R^{}", a.nrows(), b.nrows())));
    }
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let sv = (qa.transpose() * qb).singular_values();
    let mut angles: Vec<T> = sv.iter().map(|&s| s.min(T::one()).max(-T::one()).acos()).collect();
    angles.sort_by(|x, y| x.partial_cmp(y).expect("finite angles"));
    Ok(angles)
}
