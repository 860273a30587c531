//! Principal component analysis on the sample covariance.
//!
//! File layout (little endian): magic `DKPC`, `d u32`, `k u32`, then `d` mean
//! values, `d` eigenvalues and the `k x d` components, all `f64`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::io::{read_exact, read_f64s, read_u32};
use crate::nn::Matrix;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"DKPC";
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel<T> {
    pub mean: Vec<T>,
    /// `k x d`, orthonormal rows in order of decreasing eigenvalue.
    pub components: Matrix<T>,
    /// Full covariance spectrum, descending and clamped at zero.
    pub eigvals: Vec<T>,
}

/// Eigenvalues and unit eigenvectors (as columns of `vecs`) of a symmetric
/// matrix by cyclic Jacobi rotations, sorted by decreasing eigenvalue.
pub fn symmetric_eigen<T: Scalar>(a: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape("eigendecomposition needs a square matrix"));
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    for _ in 0..MAX_SWEEPS {
        let off: T = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| m[(p, q)] * m[(p, q)])
            .sum();
        let diag: T = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
        if off <= T::epsilon() * T::epsilon() * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                // rotation angle zeroing (p, q)
                let theta = (m[(q, q)] - m[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let vals: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
    order.sort_by(|&i, &j| {
        vals[j]
            .partial_cmp(&vals[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sorted_vals = order.iter().map(|&i| vals[i]).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for r in 0..n {
            vecs.row_mut(r)[new] = v[(r, old)];
        }
    }
    Ok((sorted_vals, vecs))
}

/// Applies the Jacobi rotation in the (p, q) plane to `m` (both sides) and `v`.
fn rotate<T: Scalar>(m: &mut Matrix<T>, v: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    let n = m.rows();
    for k in 0..n {
        let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
        m.row_mut(k)[p] = c * mkp - s * mkq;
        m.row_mut(k)[q] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
        m.row_mut(p)[k] = c * mpk - s * mqk;
        m.row_mut(q)[k] = s * mpk + c * mqk;
    }
    for k in 0..n {
        let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
        v.row_mut(k)[p] = c * vkp - s * vkq;
        v.row_mut(k)[q] = s * vkp + c * vkq;
    }
}

/// Column means and the covariance with divisor `n - 1`.
pub fn covariance<T: Scalar>(data: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(Error::Insufficient(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    if !data.is_finite() {
        return Err(Error::NonFinite("pca input".into()));
    }
    let nt = T::from_usize_lossy(n);
    let mut mean = vec![T::zero(); d];
    for row in data.row_iter() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += *x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nt);
    let mut cov = Matrix::zeros(d, d);
    let mut centred = vec![T::zero(); d];
    for row in data.row_iter() {
        for j in 0..d {
            centred[j] = row[j] - mean[j];
        }
        for i in 0..d {
            let ci = centred[i];
            let out = cov.row_mut(i);
            for j in i..d {
                out[j] += ci * centred[j];
            }
        }
    }
    let denom = T::from_usize_lossy(n - 1);
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov.row_mut(i)[j] = v;
            cov.row_mut(j)[i] = v;
        }
    }
    Ok((mean, cov))
}

/// Fits the top-`k` principal components.
pub fn pca_fit<T: Scalar>(data: &Matrix<T>, k: usize) -> Result<PcaModel<T>> {
    let (n, d) = data.shape();
    if k == 0 || k > n.min(d) {
        return Err(Error::Invalid(format!(
            "latent dim {k} outside 1..={}",
            n.min(d)
        )));
    }
    let full = pca_fit_full(data)?;
    Ok(full.truncated(k))
}

/// Fits with the smallest `k` whose explained variance reaches `threshold`.
pub fn pca_fit_threshold<T: Scalar>(data: &Matrix<T>, threshold: T) -> Result<PcaModel<T>> {
    let full = pca_fit_full(data)?;
    let k = smallest_dim(&full.eigvals, threshold)
        .min(data.rows())
        .max(1);
    Ok(full.truncated(k))
}

/// Smallest `k` with explained variance at least `threshold`.
pub fn smallest_dim<T: Scalar>(eigvals: &[T], threshold: T) -> usize {
    let total: T = eigvals.iter().copied().sum();
    let mut acc = T::zero();
    for (i, v) in eigvals.iter().enumerate() {
        acc += *v;
        if acc >= threshold * total {
            return i + 1;
        }
    }
    eigvals.len()
}

fn pca_fit_full<T: Scalar>(data: &Matrix<T>) -> Result<PcaModel<T>> {
    let (mean, cov) = covariance(data)?;
    let (vals, vecs) = symmetric_eigen(&cov)?;
    let eigvals: Vec<T> = vals.into_iter().map(|v| v.max(T::zero())).collect();
    if eigvals.iter().all(|v| *v == T::zero()) {
        return Err(Error::Invalid("data has zero variance".into()));
    }
    let mut components = vecs.transpose();
    for r in 0..components.rows() {
        let row = components.row_mut(r);
        let lead = row.iter().fold(
            T::zero(),
            |best, &x| if x.abs() > best.abs() { x } else { best },
        );
        if lead < T::zero() {
            row.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(PcaModel {
        mean,
        components,
        eigvals,
    })
}

impl<T: Scalar> PcaModel<T> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.components.rows()
    }

    fn truncated(mut self, k: usize) -> Self {
        self.components = self.components.select_rows(&(0..k).collect::<Vec<_>>());
        self
    }

    /// `components * (obs - mean)`.
    pub fn transform(&self, obs: &[T]) -> Result<Vec<T>> {
        if obs.len() != self.dim() {
            return Err(Error::shape(format!(
                "{}-dim observation for a {}-dim model",
                obs.len(),
                self.dim()
            )));
        }
        let centred: Vec<T> = obs.iter().zip(&self.mean).map(|(o, m)| *o - *m).collect();
        Ok(self
            .components
            .row_iter()
            .map(|c| crate::nn::dot(c, &centred))
            .collect())
    }

    pub fn transform_batch(&self, obs: &Matrix<T>) -> Result<Matrix<T>> {
        let rows = obs
            .row_iter()
            .map(|r| self.transform(r))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.latent_dim()));
        }
        Matrix::from_rows(&rows)
    }

    /// `mean + components^T * latent`.
    pub fn reconstruct(&self, latent: &[T]) -> Result<Vec<T>> {
        if latent.len() != self.latent_dim() {
            return Err(Error::shape("latent size differs from the model"));
        }
        let mut out = self.mean.clone();
        for (z, c) in latent.iter().zip(self.components.row_iter()) {
            crate::nn::axpy(*z, c, &mut out);
        }
        Ok(out)
    }

    /// Fraction of the total variance carried by the top `k` components.
    pub fn explained_variance(&self, k: usize) -> Result<T> {
        if k > self.eigvals.len() {
            return Err(Error::Invalid(format!(
                "k = {k} exceeds dimension {}",
                self.eigvals.len()
            )));
        }
        let total: T = self.eigvals.iter().copied().sum();
        if total <= T::zero() {
            return Err(Error::Invalid("zero total variance".into()));
        }
        if k == self.eigvals.len() {
            return Ok(T::one());
        }
        Ok(self.eigvals[..k].iter().copied().sum::<T>() / total)
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.latent_dim() as u32).to_le_bytes())?;
        for v in self
            .mean
            .iter()
            .chain(&self.eigvals)
            .chain(self.components.as_slice())
        {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a DKPC model file".into()));
        }
        let d = read_u32(&mut r)? as usize;
        let k = read_u32(&mut r)? as usize;
        if k == 0 || k > d {
            return Err(Error::Format(format!("bad model dims d = {d}, k = {k}")));
        }
        let mean = read_f64s(&mut r, d)?;
        let eigvals = read_f64s(&mut r, d)?;
        let components = Matrix::from_vec(k, d, read_f64s(&mut r, k * d)?)?;
        Ok(Self {
            mean,
            components,
            eigvals,
        })
    }
}
