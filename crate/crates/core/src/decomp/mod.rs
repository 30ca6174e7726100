//! Truncated SVD (randomized subspace iteration) and PCA, both deterministic
//! for a fixed seed.

mod linalg;
mod sparse;

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PersError, Result};
use crate::rng;

pub use linalg::{jacobi_svd_left, orthonormalize, qr};
pub use sparse::CsrMatrix;

pub const OVERSAMPLING: usize = 10;
pub const POWER_ITERATIONS: usize = 7;

/// The matrix products randomized SVD needs. Implementations must be
/// deterministic regardless of thread count.
pub trait MatrixOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `self · rhs`
    fn matmul(&self, rhs: &Array2<f64>) -> Array2<f64>;
    /// `selfᵀ · rhs`
    fn t_matmul(&self, rhs: &Array2<f64>) -> Array2<f64>;
    fn all_finite(&self) -> bool;
}

impl MatrixOperator for Array2<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn matmul(&self, rhs: &Array2<f64>) -> Array2<f64> {
        self.dot(rhs)
    }
    fn t_matmul(&self, rhs: &Array2<f64>) -> Array2<f64> {
        self.t().dot(rhs)
    }
    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectorKind {
    Svd,
    Pca,
}

/// A fitted linear projection onto `k` orthonormal directions.
///
/// For `Svd` the spectrum holds singular values; for `Pca` it holds the
/// explained variances `σ²/(n−1)` and `mean` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub kind: ProjectorKind,
    /// k×d, rows orthonormal.
    pub components: Array2<f64>,
    pub spectrum: Vec<f64>,
    pub mean: Option<Array1<f64>>,
    /// Total variance of the training data (PCA only).
    pub total_variance: Option<f64>,
}

impl Projector {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn d(&self) -> usize {
        self.components.ncols()
    }

    pub fn explained_variance_ratio(&self) -> Option<Vec<f64>> {
        let total = self.total_variance?;
        Some(
            self.spectrum
                .iter()
                .map(|&v| if total > 0.0 { v / total } else { 0.0 })
                .collect(),
        )
    }
}

fn check_rank(n: usize, d: usize, k: usize) -> Result<()> {
    if k == 0 || k > n.min(d) {
        return Err(PersError::Dimension(format!(
            "k = {k} must lie in 1..={} for a {n}x{d} matrix",
            n.min(d)
        )));
    }
    Ok(())
}

/// Top-k right singular directions by randomized subspace iteration
/// (oversampling 10, 7 power iterations with re-orthonormalization).
pub fn truncated_svd<M: MatrixOperator + ?Sized>(matrix: &M, k: usize, seed: u64) -> Result<Projector> {
    let (n, d) = (matrix.nrows(), matrix.ncols());
    check_rank(n, d, k)?;
    if !matrix.all_finite() {
        return Err(PersError::NonFiniteInput("truncated_svd input".into()));
    }
    let (spectrum, components) = svd_core(matrix, k, seed);
    Ok(Projector {
        kind: ProjectorKind::Svd,
        components,
        spectrum,
        mean: None,
        total_variance: None,
    })
}

fn svd_core<M: MatrixOperator + ?Sized>(matrix: &M, k: usize, seed: u64) -> (Vec<f64>, Array2<f64>) {
    let (n, d) = (matrix.nrows(), matrix.ncols());
    let l = (k + OVERSAMPLING).min(n.min(d));
    let mut r = rng::rng_from(seed, &[0x5744]);
    let omega = Array2::from_shape_fn((d, l), |_| StandardNormal.sample(&mut r));

    let mut q = orthonormalize(&matrix.matmul(&omega));
    for _ in 0..POWER_ITERATIONS {
        let z = orthonormalize(&matrix.t_matmul(&q));
        q = orthonormalize(&matrix.matmul(&z));
    }
    // Bᵀ = Aᵀ Q is d×l; its left singular vectors are the right singular
    // vectors of A restricted to span(Q).
    let bt = matrix.t_matmul(&q);
    let (qb, rb) = qr(&bt);
    let (sigmas, ur) = jacobi_svd_left(&rb);
    let v = qb.dot(&ur);
    let mut components = v.t().slice(ndarray::s![0..k, ..]).to_owned();
    linalg::canonicalize_signs(&mut components);
    let spectrum = sigmas.into_iter().take(k).map(|s| s.max(0.0)).collect();
    (spectrum, components)
}

/// PCA on the column-centered matrix, via [`truncated_svd`].
pub fn pca_fit(matrix: ArrayView2<f64>, k: usize, seed: u64) -> Result<Projector> {
    let (n, d) = matrix.dim();
    if n < 2 {
        return Err(PersError::Dimension(format!("PCA needs at least 2 rows, got {n}")));
    }
    check_rank(n, d, k)?;
    if !matrix.iter().all(|v| v.is_finite()) {
        return Err(PersError::NonFiniteInput("pca_fit input".into()));
    }
    let mean = matrix.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &matrix - &mean;
    let total_variance = centered.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
    let (sigmas, components) = svd_core(&centered, k, seed);
    let spectrum = sigmas.iter().map(|s| s * s / (n - 1) as f64).collect();
    Ok(Projector {
        kind: ProjectorKind::Pca,
        components,
        spectrum,
        mean: Some(mean),
        total_variance: Some(total_variance),
    })
}

/// `(matrix − mean) · componentsᵀ`.
pub fn project(projector: &Projector, matrix: ArrayView2<f64>) -> Result<Array2<f64>> {
    if matrix.ncols() != projector.d() {
        return Err(PersError::Dimension(format!(
            "projector expects {} columns, got {}",
            projector.d(),
            matrix.ncols()
        )));
    }
    let out = match &projector.mean {
        Some(mean) => (&matrix - mean).dot(&projector.components.t()),
        None => matrix.dot(&projector.components.t()),
    };
    Ok(out)
}

/// Projection of an operator-backed matrix (no centering; SVD projectors).
pub fn project_operator<M: MatrixOperator + ?Sized>(projector: &Projector, matrix: &M) -> Result<Array2<f64>> {
    if matrix.ncols() != projector.d() {
        return Err(PersError::Dimension(format!(
            "projector expects {} columns, got {}",
            projector.d(),
            matrix.ncols()
        )));
    }
    if projector.mean.is_some() {
        return Err(PersError::Dimension("centered projectors need a dense input".into()));
    }
    Ok(matrix.matmul(&projector.components.t().to_owned()))
}

const PROJECTOR_FORMAT: &str = "pers-projector";
const PROJECTOR_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ProjectorHeader {
    format: String,
    version: u32,
    kind: ProjectorKind,
    k: usize,
    d: usize,
    has_mean: bool,
    has_total_variance: bool,
}

impl Projector {
    /// One JSON header line, then little-endian f64 payload: components
    /// (row-major k×d), spectrum (k), mean (d, if present), total variance
    /// (1, if present).
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = ProjectorHeader {
            format: PROJECTOR_FORMAT.into(),
            version: PROJECTOR_VERSION,
            kind: self.kind,
            k: self.k(),
            d: self.d(),
            has_mean: self.mean.is_some(),
            has_total_variance: self.total_variance.is_some(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let mut put = |v: f64| w.write_all(&v.to_le_bytes());
        for &v in self.components.iter() {
            put(v)?;
        }
        for &v in &self.spectrum {
            put(v)?;
        }
        if let Some(m) = &self.mean {
            for &v in m {
                put(v)?;
            }
        }
        if let Some(t) = self.total_variance {
            put(t)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Projector> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| PersError::Format(format!("projector: {e}")))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Projector> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| PersError::Format("projector: missing header".into()))?;
        let header: ProjectorHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.format != PROJECTOR_FORMAT || header.version != PROJECTOR_VERSION {
            return Err(PersError::Format(format!(
                "projector: unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let payload = &bytes[nl + 1..];
        let expected = header.k * header.d
            + header.k
            + if header.has_mean { header.d } else { 0 }
            + usize::from(header.has_total_variance);
        if payload.len() != expected * 8 {
            return Err(PersError::Format(format!(
                "projector: payload has {} bytes, expected {}",
                payload.len(),
                expected * 8
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
        let components = Array2::from_shape_vec((header.k, header.d), take(header.k * header.d))
            .map_err(|e| PersError::Format(e.to_string()))?;
        let spectrum = take(header.k);
        let mean = header.has_mean.then(|| Array1::from(take(header.d)));
        let total_variance = header.has_total_variance.then(|| take(1)[0]);
        Ok(Projector {
            kind: header.kind,
            components,
            spectrum,
            mean,
            total_variance,
        })
    }
}
