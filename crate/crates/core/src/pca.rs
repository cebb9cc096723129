//! Exact PCA over point clouds, with a Gram-matrix path for the
//! short-and-wide clouds macroscopic extraction produces.

use ndarray::{Array1, Array2, Axis};

use crate::binio::{self, Reader, Writer};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::jacobi_eigh;
use crate::rng::{stream, StreamRng};

pub const PCA_MAGIC: &[u8; 4] = b"NCAP";
pub const PCA_VERSION: u32 = 1;

/// Dimension up to which covariance/Gram matrices are eigendecomposed
/// directly; larger problems use deterministic subspace iteration.
const DENSE_EIG_LIMIT: usize = 64;
const SUBSPACE_TOL: f64 = 1e-10;
const SUBSPACE_MAX_ITERS: usize = 20_000;

/// Which covariance formulation `pca_fit_with` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcaMethod {
    /// Gram when D > N, direct otherwise.
    Auto,
    /// Work with the D x D covariance (implicitly for large D).
    Direct,
    /// Work with the N x N Gram matrix.
    Gram,
}

/// Mean, orthonormal components (rows) and per-component variances,
/// descending.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Array1<f64>,
    pub components: Array2<f64>,
    pub explained_variance: Array1<f64>,
}

impl PcaBasis {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }
    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (k, d) = self.components.dim();
        if k == 0 || d == 0 || self.mean.len() != d || self.explained_variance.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "inconsistent basis: {k} components, dim {d}, mean {}, variances {}",
                self.mean.len(),
                self.explained_variance.len()
            )));
        }
        for i in 0..k {
            for j in 0..=i {
                let dot = self.components.row(i).dot(&self.components.row(j));
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-8 {
                    return Err(Error::Numeric(format!(
                        "components {i},{j} not orthonormal (dot {dot})"
                    )));
                }
            }
        }
        for i in 0..k {
            let v = self.explained_variance[i];
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Numeric(format!("variance {i} is {v}")));
            }
            if i > 0 && v > self.explained_variance[i - 1] + 1e-12 {
                return Err(Error::Numeric("explained variance not descending".into()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.magic(PCA_MAGIC);
        w.u32(PCA_VERSION);
        w.u32(self.k() as u32);
        w.u32(self.dim() as u32);
        w.f64_slice(self.mean.iter().copied());
        w.f64_slice(self.components.iter().copied());
        w.f64_slice(self.explained_variance.iter().copied());
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(PCA_MAGIC)?;
        r.expect_version(PCA_VERSION)?;
        let k = r.u32("component count")? as usize;
        let d = r.u32("dimension")? as usize;
        if k == 0 || d == 0 {
            return Err(r.corrupt(format!("degenerate basis {k}x{d}")));
        }
        let mean = Array1::from_vec(r.f64_vec(d, "mean")?);
        let comp = Array2::from_shape_vec((k, d), r.f64_vec(k * d, "components")?)
            .expect("shape arithmetic");
        let ev = Array1::from_vec(r.f64_vec(k, "explained variance")?);
        r.finish()?;
        let basis = PcaBasis {
            mean,
            components: comp,
            explained_variance: ev,
        };
        basis.validate()?;
        Ok(basis)
    }

    pub fn save(&self, path: &str) -> Result<()> {
        binio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &str) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?, path)
    }
}

/// Largest-magnitude entry of each component made positive, so bases are
/// deterministic across runs and methods.
fn fix_signs(components: &mut Array2<f64>) {
    for mut row in components.rows_mut() {
        let mut best = 0usize;
        for (i, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = i;
            }
        }
        if row[best] < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }
}

/// Orthonormalize columns in place by modified Gram-Schmidt. Columns that
/// collapse (zero directions of the operator) fall back to the previous
/// iterate's column, then to canonical axes, so the result is always a
/// full orthonormal set.
fn orth_columns(b: &mut Array2<f64>, prev: &Array2<f64>) {
    let (d, k) = b.dim();
    let scale = b.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-300);
    for i in 0..k {
        let mut refill = 0usize;
        loop {
            for j in 0..i {
                let proj = b.column(i).dot(&b.column(j));
                let cj = b.column(j).to_owned();
                b.column_mut(i).zip_mut_with(&cj, |a, x| *a -= proj * x);
            }
            let norm = b.column(i).dot(&b.column(i)).sqrt();
            if norm > 1e-13 * scale {
                b.column_mut(i).mapv_inplace(|v| v / norm);
                break;
            }
            // Collapsed: try the previous iterate, then unit axes.
            if refill == 0 {
                let p = prev.column(i).to_owned();
                b.column_mut(i).assign(&p);
            } else {
                let axis = (refill - 1) % d;
                b.column_mut(i).fill(0.0);
                b[(axis, i)] = 1.0;
            }
            refill += 1;
            if refill > d + 1 {
                // d+1 canonical attempts cannot all fail for i < d.
                b.column_mut(i).fill(0.0);
                b[(i % d, i)] = 1.0;
                break;
            }
        }
    }
}

/// Top-k eigenpairs of a symmetric PSD operator given through its matvec,
/// by orthogonal (subspace) iteration with a Rayleigh-Ritz finish.
/// Deterministic: fixed seeded start, fixed sweep order.
fn subspace_eig(
    dim: usize,
    k: usize,
    matvec: impl Fn(&Array2<f64>) -> Array2<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let mut rng = StreamRng::new(0x9CA_F17, stream::PCA_START);
    let mut v = Array2::from_shape_fn((dim, k), |_| rng.normal_f64());
    let eye = Array2::zeros((dim, k));
    orth_columns(&mut v, &eye);

    let mut ritz = Array1::<f64>::zeros(k);
    for _ in 0..SUBSPACE_MAX_ITERS {
        let mut b = matvec(&v);
        let h = v.t().dot(&b);
        let mut new_ritz = Array1::zeros(k);
        for i in 0..k {
            new_ritz[i] = h[(i, i)];
        }
        let scale = new_ritz.iter().fold(0.0f64, |m, &x| m.max(x.abs())).max(1e-300);
        let delta = (0..k)
            .map(|i| (new_ritz[i] - ritz[i]).abs())
            .fold(0.0f64, f64::max);
        orth_columns(&mut b, &v);
        v = b;
        ritz = new_ritz;
        if delta <= SUBSPACE_TOL * scale {
            break;
        }
    }

    // Rayleigh-Ritz: diagonalise the projected operator to split any
    // rotation within the converged subspace.
    let b = matvec(&v);
    let h = v.t().dot(&b);
    let (eigs, w) = jacobi_eigh(&h)?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eigs[j].partial_cmp(&eigs[i]).expect("finite eigenvalues"));
    let values = Array1::from_iter(order.iter().map(|&i| eigs[i].max(0.0)));
    let rotated = v.dot(&Array2::from_shape_fn((k, k), |(i, j)| w[(i, order[j])]));
    Ok((values, rotated))
}

fn centred(points: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let mean = points.mean_axis(Axis(0)).expect("n >= 1");
    let mut xc = points.clone();
    for mut row in xc.rows_mut() {
        row.zip_mut_with(&mean, |a, m| *a -= m);
    }
    (mean, xc)
}

/// Top-k dense eigenpairs (descending) of a small symmetric matrix.
fn dense_top_k(m: &Array2<f64>, k: usize) -> Result<(Array1<f64>, Array2<f64>)> {
    let (eigs, vecs) = jacobi_eigh(m)?;
    let n = m.nrows();
    let values = Array1::from_iter((0..k).map(|i| eigs[n - 1 - i].max(0.0)));
    let cols = Array2::from_shape_fn((n, k), |(i, j)| vecs[(i, n - 1 - j)]);
    Ok((values, cols))
}

fn fit_direct(xc: &Array2<f64>, k: usize) -> Result<(Array1<f64>, Array2<f64>)> {
    let (n, d) = xc.dim();
    let denom = (n - 1) as f64;
    if d <= DENSE_EIG_LIMIT {
        let cov = xc.t().dot(xc) / denom;
        let (values, cols) = dense_top_k(&cov, k)?;
        return Ok((values, cols.t().to_owned()));
    }
    let (values, cols) = subspace_eig(d, k, |v| xc.t().dot(&xc.dot(v)) / denom)?;
    Ok((values, cols.t().to_owned()))
}

fn fit_gram(xc: &Array2<f64>, k: usize) -> Result<(Array1<f64>, Array2<f64>)> {
    let (n, d) = xc.dim();
    let denom = (n - 1) as f64;
    let gram = xc.dot(&xc.t()) / denom;
    let (values, u) = if n <= DENSE_EIG_LIMIT {
        dense_top_k(&gram, k)?
    } else {
        subspace_eig(n, k, |v| gram.dot(v))?
    };
    // Map Gram eigenvectors u to covariance eigenvectors Xc^T u, filling
    // null directions with orthonormalized canonical axes.
    let mut comp = Array2::zeros((k, d));
    for i in 0..k {
        let ui = u.column(i).to_owned();
        let mut vi = xc.t().dot(&ui);
        let norm = vi.dot(&vi).sqrt();
        if norm > 1e-12 * (values[0].sqrt() * denom.sqrt()).max(1e-300) {
            vi.mapv_inplace(|x| x / norm);
            comp.row_mut(i).assign(&vi);
        } else {
            // Zero-variance direction: pick any axis orthogonal to the
            // components found so far.
            'axes: for axis in 0..d {
                let mut cand = Array1::zeros(d);
                cand[axis] = 1.0;
                for j in 0..i {
                    let proj = cand.dot(&comp.row(j));
                    cand.zip_mut_with(&comp.row(j).to_owned(), |a, b| *a -= proj * b);
                }
                let nn = cand.dot(&cand).sqrt();
                if nn > 0.5 {
                    cand.mapv_inplace(|x| x / nn);
                    comp.row_mut(i).assign(&cand);
                    break 'axes;
                }
            }
        }
    }
    Ok((values, comp))
}

/// Fit PCA by the given formulation. `k <= min(N, D)` and `N >= 2`.
pub fn pca_fit_with(cloud: &PointCloud, k: usize, method: PcaMethod) -> Result<PcaBasis> {
    let points = cloud.points();
    let (n, d) = points.dim();
    if n < 2 {
        return Err(Error::Validation(format!("PCA needs at least 2 points, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::Validation(format!(
            "k must be in 1..=min(N={n}, D={d}), got {k}"
        )));
    }
    let (mean, xc) = centred(points);
    let (mut values, mut components) = match method {
        PcaMethod::Direct => fit_direct(&xc, k)?,
        PcaMethod::Gram => fit_gram(&xc, k)?,
        PcaMethod::Auto => {
            if d > n {
                fit_gram(&xc, k)?
            } else {
                fit_direct(&xc, k)?
            }
        }
    };
    values.mapv_inplace(|v| v.max(0.0));
    fix_signs(&mut components);
    let basis = PcaBasis {
        mean,
        components,
        explained_variance: values,
    };
    basis.validate()?;
    Ok(basis)
}

/// Covariance PCA; picks the Gram formulation automatically when D > N.
pub fn pca_fit(cloud: &PointCloud, k: usize) -> Result<PcaBasis> {
    pca_fit_with(cloud, k, PcaMethod::Auto)
}

/// Latent coordinates `(x - mean) . components^T`, shape `[N, k]`.
pub fn pca_project(basis: &PcaBasis, points: &Array2<f64>) -> Result<Array2<f64>> {
    if points.ncols() != basis.dim() {
        return Err(Error::ShapeMismatch(format!(
            "points have dim {}, basis expects {}",
            points.ncols(),
            basis.dim()
        )));
    }
    let (_, xc) = {
        let mut xc = points.clone();
        for mut row in xc.rows_mut() {
            row.zip_mut_with(&basis.mean, |a, m| *a -= m);
        }
        ((), xc)
    };
    Ok(xc.dot(&basis.components.t()))
}

/// Back-projection `coords . components + mean`, shape `[N, D]`.
pub fn pca_reconstruct(basis: &PcaBasis, coords: &Array2<f64>) -> Result<Array2<f64>> {
    if coords.ncols() != basis.k() {
        return Err(Error::ShapeMismatch(format!(
            "coords have dim {}, basis has k={}",
            coords.ncols(),
            basis.k()
        )));
    }
    let mut out = coords.dot(&basis.components);
    for mut row in out.rows_mut() {
        row.zip_mut_with(&basis.mean, |a, m| *a += m);
    }
    Ok(out)
}

/// Project a cloud into latent coordinates, keeping colours and provenance.
pub fn project_cloud(basis: &PcaBasis, cloud: &PointCloud) -> Result<PointCloud> {
    cloud.with_points(pca_project(basis, cloud.points())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_principal_angle;

    fn plane_cloud(n: usize, d: usize, seed: u64) -> PointCloud {
        // Points on an exact 2-D plane embedded in d dims.
        let mut rng = StreamRng::new(seed, stream::DATA);
        let u = Array1::from_shape_fn(d, |_| rng.normal_f64());
        let u = &u / u.dot(&u).sqrt();
        let mut v = Array1::from_shape_fn(d, |_| rng.normal_f64());
        let proj = v.dot(&u);
        v.zip_mut_with(&u, |a, b| *a -= proj * b);
        let v = &v / v.dot(&v).sqrt();
        let mut pts = Array2::zeros((n, d));
        for i in 0..n {
            let (a, b) = (rng.range_f64(-3.0, 3.0), rng.range_f64(-1.0, 1.0));
            for j in 0..d {
                pts[(i, j)] = 0.5 + a * u[j] + b * v[j];
            }
        }
        PointCloud::from_points(pts).unwrap()
    }

    fn gaussian_cloud(n: usize, d: usize, seed: u64, scales: Option<&[f64]>) -> PointCloud {
        let mut rng = StreamRng::new(seed, stream::DATA);
        let pts = Array2::from_shape_fn((n, d), |(_, j)| {
            rng.normal_f64() * scales.map_or(1.0, |s| s[j % s.len()])
        });
        PointCloud::from_points(pts).unwrap()
    }

    #[test]
    fn rank_two_data_reconstructs_exactly() {
        let cloud = plane_cloud(40, 10, 1);
        let basis = pca_fit(&cloud, 2).unwrap();
        let coords = pca_project(&basis, cloud.points()).unwrap();
        let back = pca_reconstruct(&basis, &coords).unwrap();
        let err = (&back - cloud.points()).iter().map(|v| v * v).sum::<f64>();
        assert!(err < 1e-16, "squared reconstruction error {err}");
        // Only two directions carry variance.
        assert!(basis.explained_variance[0] >= basis.explained_variance[1]);
        assert!(basis.explained_variance[1] > 1e-6);
    }

    #[test]
    fn projection_of_mean_is_zero_and_subspace_points_are_fixed() {
        let cloud = plane_cloud(30, 6, 2);
        let basis = pca_fit(&cloud, 2).unwrap();
        let mean = basis.mean.clone().insert_axis(Axis(0));
        let z = pca_project(&basis, &mean).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-10));
        let x = cloud.points().slice(ndarray::s![..5, ..]).to_owned();
        let rt = pca_reconstruct(&basis, &pca_project(&basis, &x).unwrap()).unwrap();
        for (a, b) in rt.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicated_points_keep_the_same_components() {
        let cloud = gaussian_cloud(25, 5, 3, Some(&[3.0, 2.0, 1.0, 0.5, 0.25]));
        let basis = pca_fit(&cloud, 3).unwrap();
        let doubled = {
            let idx: Vec<usize> = (0..25).chain(0..25).collect();
            cloud.select(&idx).unwrap()
        };
        let basis2 = pca_fit(&doubled, 3).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                assert!(
                    (basis.components[(i, j)] - basis2.components[(i, j)]).abs() < 1e-9,
                    "component ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn isotropic_gaussian_total_variance_is_near_dimension() {
        let (n, d) = (2000, 5);
        let cloud = gaussian_cloud(n, d, 4, None);
        let basis = pca_fit(&cloud, d).unwrap();
        let total: f64 = basis.explained_variance.iter().sum();
        // Var of the summed sample variances is ~ 2*d/(n-1).
        let sigma = (2.0 * d as f64 / (n - 1) as f64).sqrt();
        assert!(
            (total - d as f64).abs() < 3.0 * sigma + 0.05,
            "total variance {total}"
        );
    }

    #[test]
    fn gram_and_direct_paths_agree() {
        let cloud = gaussian_cloud(30, 100, 5, Some(&[4.0, 2.5, 1.5, 1.0, 0.6, 0.3]));
        let direct = pca_fit_with(&cloud, 2, PcaMethod::Direct).unwrap();
        let gram = pca_fit_with(&cloud, 2, PcaMethod::Gram).unwrap();
        let angle = max_principal_angle(&direct.components, &gram.components).unwrap();
        assert!(angle < 1e-6, "principal angle {angle}");
        for i in 0..2 {
            let (a, b) = (direct.explained_variance[i], gram.explained_variance[i]);
            assert!((a - b).abs() < 1e-8 * a.max(1.0), "variance {i}: {a} vs {b}");
        }
    }

    #[test]
    fn residual_error_equals_trailing_eigenvalue_mass() {
        let cloud = gaussian_cloud(60, 8, 6, Some(&[3.0, 2.0, 1.0, 0.7, 0.5, 0.3, 0.2, 0.1]));
        let k = 3;
        let basis = pca_fit(&cloud, k).unwrap();
        let full = pca_fit(&cloud, 8).unwrap();
        let coords = pca_project(&basis, cloud.points()).unwrap();
        let back = pca_reconstruct(&basis, &coords).unwrap();
        let resid: f64 = (&back - cloud.points()).iter().map(|v| v * v).sum();
        let tail: f64 = full.explained_variance.iter().skip(k).sum::<f64>() * 59.0;
        assert!(
            (resid - tail).abs() < 1e-8 * tail.max(1.0),
            "residual {resid}, eigen tail {tail}"
        );
    }

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let cloud = gaussian_cloud(50, 7, 7, Some(&[2.0, 1.0]));
        let basis = pca_fit(&cloud, 4).unwrap();
        for row in basis.components.rows() {
            let mut best = 0usize;
            for (i, v) in row.iter().enumerate() {
                if v.abs() > row[best].abs() {
                    best = i;
                }
            }
            assert!(row[best] > 0.0);
        }
    }

    #[test]
    fn zero_variance_data_yields_zero_variances_and_valid_basis() {
        let pts = Array2::from_elem((10, 4), 1.5);
        let cloud = PointCloud::from_points(pts).unwrap();
        let basis = pca_fit(&cloud, 2).unwrap();
        basis.validate().unwrap();
        assert!(basis.explained_variance.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn invalid_k_is_rejected() {
        let cloud = gaussian_cloud(5, 3, 8, None);
        assert!(pca_fit(&cloud, 0).is_err());
        assert!(pca_fit(&cloud, 4).is_err());
    }

    #[test]
    fn basis_file_round_trips_bit_exactly() {
        let cloud = gaussian_cloud(20, 6, 9, Some(&[2.0, 1.0, 0.5]));
        let basis = pca_fit(&cloud, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.pca");
        let path = path.to_str().unwrap();
        basis.save(path).unwrap();
        let back = PcaBasis::load(path).unwrap();
        assert_eq!(basis, back);
        assert_eq!(basis.to_bytes(), back.to_bytes());
    }
}
