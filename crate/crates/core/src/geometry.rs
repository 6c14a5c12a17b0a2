//! Pinhole camera model, confidence-weighted DLT triangulation and
//! unscented propagation of detection uncertainty into 3D.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Matrix3x4, Vector2, Vector3, Vector4};
use num_traits::Float;
use thiserror::Error;

/// Homogeneous scale below which a projection or dehomogenization is rejected.
pub const HOMOGENEOUS_EPS: f64 = 1e-12;

/// Relative gap under which the two smallest singular values of the DLT
/// design matrix are considered tied (ambiguous null space).
pub const SINGULAR_GAP_EPS: f64 = 1e-9;

/// Diagonal jitter added when a covariance fails to factorize.
pub const COV_JITTER: f64 = 1e-9;

/// Eigenvalue floor below which a symmetric matrix is rejected as indefinite.
pub const PSD_EIGEN_FLOOR: f64 = -1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("camera {0}: left 3x3 block of the projection matrix is rank deficient")]
    SingularCamera(u32),
    #[error("camera {0}: image size must be positive")]
    BadImageSize(u32),
    #[error("point projects onto the camera principal plane")]
    DegenerateProjection,
    #[error("triangulation needs at least two usable views, got {0}")]
    InsufficientViews(usize),
    #[error("triangulation geometry is degenerate (ambiguous null space)")]
    DegenerateGeometry,
    #[error("homogeneous solution has near-zero fourth coordinate")]
    HomogeneousDivide,
    #[error("covariance cannot be factorized even after jitter")]
    CovarianceFactorization,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Calibrated pinhole camera: world coordinates in meters map to homogeneous
/// pixels through a 3x4 projection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: u32,
    pub projection: Matrix3x4<f64>,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(
        id: u32,
        projection: Matrix3x4<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::BadImageSize(id));
        }
        let m: Matrix3<f64> = projection.fixed_view::<3, 3>(0, 0).into_owned();
        if m.determinant().abs() < 1e-30 {
            return Err(GeometryError::SingularCamera(id));
        }
        Ok(Self {
            id,
            projection,
            width,
            height,
        })
    }

    /// Optical center in world coordinates, from C = -M^-1 p4.
    pub fn center(&self) -> Vector3<f64> {
        let m: Matrix3<f64> = self.projection.fixed_view::<3, 3>(0, 0).into_owned();
        let p4: Vector3<f64> = self.projection.column(3).into_owned();
        // The constructor guarantees M is invertible.
        -(m.try_inverse().expect("camera M block invertible") * p4)
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.x < self.width as f64 && px.y >= 0.0 && px.y < self.height as f64
    }
}

/// 2D Gaussian in full-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2D {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl Gaussian2D {
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn isotropic(mean: Vector2<f64>, variance: f64) -> Self {
        Self {
            mean,
            cov: Matrix2::identity() * variance,
        }
    }
}

/// 3D Gaussian in world coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

impl Gaussian3D {
    pub fn new(mean: Vector3<f64>, cov: Matrix3<f64>) -> Self {
        Self { mean, cov }
    }
}

/// Projects a world point to pixel coordinates.
///
/// Fails with [`GeometryError::DegenerateProjection`] when the point lies on
/// the camera principal plane (homogeneous w ~ 0).
pub fn project(cam: &Camera, x: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
    let h = cam.projection * Vector4::new(x.x, x.y, x.z, 1.0);
    if h.z.abs() <= HOMOGENEOUS_EPS {
        return Err(GeometryError::DegenerateProjection);
    }
    Ok(Vector2::new(h.x / h.z, h.y / h.z))
}

/// Returns true when the point is in front of the camera and its projection
/// falls inside the image bounds.
pub fn visible(cam: &Camera, x: &Vector3<f64>) -> bool {
    let h = cam.projection * Vector4::new(x.x, x.y, x.z, 1.0);
    h.z > HOMOGENEOUS_EPS && {
        let px = Vector2::new(h.x / h.z, h.y / h.z);
        cam.contains(&px)
    }
}

/// Confidence-weighted DLT triangulation.
///
/// Builds the stacked design matrix with two rows per view
/// (`u*p3 - p1`, `v*p3 - p2`), scales each row by `c_i / ||row||` where the
/// norm is taken over the unweighted row, and solves the homogeneous system
/// via SVD, taking the right-singular vector of the smallest singular value.
///
/// Views with zero weight are skipped entirely. Multiplying all weights by a
/// common positive factor does not change the result.
pub fn triangulate_dlt(
    observations: &[(&Camera, Vector2<f64>)],
    weights: &[f64],
) -> Result<Vector3<f64>, GeometryError> {
    if observations.len() != weights.len() {
        return Err(GeometryError::DimensionMismatch {
            expected: observations.len(),
            got: weights.len(),
        });
    }
    let usable: Vec<usize> = (0..observations.len()).filter(|&i| weights[i] > 0.0).collect();
    if usable.len() < 2 {
        return Err(GeometryError::InsufficientViews(usable.len()));
    }

    let mut a = DMatrix::<f64>::zeros(2 * usable.len(), 4);
    for (slot, &i) in usable.iter().enumerate() {
        let (cam, px) = &observations[i];
        let p = &cam.projection;
        for col in 0..4 {
            a[(2 * slot, col)] = px.x * p[(2, col)] - p[(0, col)];
            a[(2 * slot + 1, col)] = px.y * p[(2, col)] - p[(1, col)];
        }
        for row in [2 * slot, 2 * slot + 1] {
            let norm = a.row(row).norm().max(1e-300);
            let scale = weights[i] / norm;
            for col in 0..4 {
                a[(row, col)] *= scale;
            }
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().ok_or(GeometryError::DegenerateGeometry)?;
    let s = &svd.singular_values;

    // Locate smallest and second-smallest singular values without assuming
    // any ordering from the decomposition.
    let mut min_idx = 0;
    for i in 1..s.len() {
        if s[i] < s[min_idx] {
            min_idx = i;
        }
    }
    let mut second = f64::INFINITY;
    let mut largest = 0.0f64;
    for i in 0..s.len() {
        largest = largest.max(s[i]);
        if i != min_idx && s[i] < second {
            second = s[i];
        }
    }
    // Rays parallel/identical: null space two-dimensional, or the two
    // smallest singular values are indistinguishable.
    if second <= SINGULAR_GAP_EPS * largest
        || (second - s[min_idx]) <= SINGULAR_GAP_EPS * second.max(f64::MIN_POSITIVE)
    {
        return Err(GeometryError::DegenerateGeometry);
    }

    let xh = v_t.row(min_idx);
    if xh[3].abs() <= HOMOGENEOUS_EPS {
        return Err(GeometryError::HomogeneousDivide);
    }
    Ok(Vector3::new(xh[0] / xh[3], xh[1] / xh[3], xh[2] / xh[3]))
}

/// Scaled unscented transform parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtParams {
    /// Sigma-point spread around the mean.
    pub alpha: f64,
    /// Prior-knowledge term for the zeroth covariance weight (2 for Gaussians).
    pub beta: f64,
    /// Secondary scaling.
    pub kappa: f64,
}

impl Default for UtParams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

/// Symmetric square root of a PSD matrix via eigendecomposition.
///
/// Eigenvalues in `[PSD_EIGEN_FLOOR, 0)` are clamped to zero, so rank
/// deficient covariances (single-pixel blobs, zero uncertainty) factorize
/// exactly instead of being inflated. A matrix that stays indefinite after
/// one round of diagonal jitter is rejected.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, GeometryError> {
    fn attempt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let eig = m.clone().symmetric_eigen();
        let mut vals = eig.eigenvalues.clone();
        for v in vals.iter_mut() {
            if *v < PSD_EIGEN_FLOOR {
                return None;
            }
            *v = v.max(0.0).sqrt();
        }
        let mut l = eig.eigenvectors;
        for (c, s) in vals.iter().enumerate() {
            l.column_mut(c).scale_mut(*s);
        }
        Some(l)
    }

    if let Some(l) = attempt(m) {
        return Ok(l);
    }
    let jittered = m + DMatrix::identity(m.nrows(), m.ncols()) * COV_JITTER;
    attempt(&jittered).ok_or(GeometryError::CovarianceFactorization)
}

/// Propagates a Gaussian through an arbitrary map with the scaled unscented
/// transform: 2n+1 sigma points, standard mean/covariance weights.
///
/// Errors from the map itself are passed through unchanged.
pub fn unscented_transform<F>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    params: &UtParams,
    mut f: F,
) -> Result<(DVector<f64>, DMatrix<f64>), GeometryError>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>, GeometryError>,
{
    let n = mean.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(GeometryError::DimensionMismatch {
            expected: n,
            got: cov.nrows(),
        });
    }
    let lambda = params.alpha * params.alpha * (n as f64 + params.kappa) - n as f64;
    let scale = n as f64 + lambda;
    let l = sqrt_psd(&(cov * scale))?;

    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(mean.clone());
    for i in 0..n {
        let col = l.column(i).into_owned();
        points.push(mean + &col);
        points.push(mean - &col);
    }

    let w_mean0 = lambda / scale;
    let w_cov0 = w_mean0 + 1.0 - params.alpha * params.alpha + params.beta;
    let w_i = 0.5 / scale;

    let mut images = Vec::with_capacity(points.len());
    for p in &points {
        images.push(f(p)?);
    }
    let m = images[0].len();

    // Mean as y0 + sum w_i (y_i - y0). Algebraically identical because the
    // mean weights sum to one, but it avoids the catastrophic cancellation of
    // the direct weighted sum when the spread parameter is small (the zeroth
    // weight is then a large negative number).
    let y0 = images[0].clone();
    let mut dev = DVector::zeros(m);
    for y in images.iter().skip(1) {
        dev += (y - &y0) * w_i;
    }
    let out_mean = y0 + dev;

    let mut out_cov = DMatrix::zeros(m, m);
    for (k, y) in images.iter().enumerate() {
        let w = if k == 0 { w_cov0 } else { w_i };
        let d = y - &out_mean;
        out_cov += (&d * d.transpose()) * w;
    }
    let out_cov = symmetrized_dyn(&out_cov);
    Ok((out_mean, out_cov))
}

fn symmetrized_dyn(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrized3(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrized2(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

/// One view's contribution to a joint triangulation.
#[derive(Debug, Clone)]
pub struct ViewObservation<'a> {
    pub camera: &'a Camera,
    pub gaussian: Gaussian2D,
    pub confidence: f64,
}

/// Triangulates one joint from multiple uncertain 2D observations.
///
/// The per-view means are stacked into one vector with a block-diagonal
/// covariance and pushed through [`triangulate_dlt`] with the unscented
/// transform. Confidences act only as DLT row weights and are held fixed
/// across sigma points.
pub fn triangulate_joint(
    observations: &[ViewObservation<'_>],
    params: &UtParams,
) -> Result<Gaussian3D, GeometryError> {
    if observations.len() < 2 {
        return Err(GeometryError::InsufficientViews(observations.len()));
    }
    let n = 2 * observations.len();
    let mut mean = DVector::zeros(n);
    let mut cov = DMatrix::zeros(n, n);
    for (i, obs) in observations.iter().enumerate() {
        mean[2 * i] = obs.gaussian.mean.x;
        mean[2 * i + 1] = obs.gaussian.mean.y;
        for r in 0..2 {
            for c in 0..2 {
                cov[(2 * i + r, 2 * i + c)] = obs.gaussian.cov[(r, c)];
            }
        }
    }
    let weights: Vec<f64> = observations.iter().map(|o| o.confidence).collect();

    let (out_mean, out_cov) = unscented_transform(&mean, &cov, params, |z| {
        let pts: Vec<(&Camera, Vector2<f64>)> = observations
            .iter()
            .enumerate()
            .map(|(i, obs)| (obs.camera, Vector2::new(z[2 * i], z[2 * i + 1])))
            .collect();
        let x = triangulate_dlt(&pts, &weights)?;
        Ok(DVector::from_column_slice(&[x.x, x.y, x.z]))
    })?;

    let mean3 = Vector3::new(out_mean[0], out_mean[1], out_mean[2]);
    let mut cov3 = Matrix3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            cov3[(r, c)] = out_cov[(r, c)];
        }
    }
    Ok(Gaussian3D::new(mean3, symmetrized3(&cov3)))
}

/// Propagates a 3D Gaussian through a camera projection, giving the
/// reprojected image-plane Gaussian.
pub fn project_gaussian(
    cam: &Camera,
    g: &Gaussian3D,
    params: &UtParams,
) -> Result<Gaussian2D, GeometryError> {
    let mean = DVector::from_column_slice(&[g.mean.x, g.mean.y, g.mean.z]);
    let mut cov = DMatrix::zeros(3, 3);
    for r in 0..3 {
        for c in 0..3 {
            cov[(r, c)] = g.cov[(r, c)];
        }
    }
    let (m, p) = unscented_transform(&mean, &cov, params, |x| {
        let px = project(cam, &Vector3::new(x[0], x[1], x[2]))?;
        Ok(DVector::from_column_slice(&[px.x, px.y]))
    })?;
    let cov2 = Matrix2::new(p[(0, 0)], p[(0, 1)], p[(1, 0)], p[(1, 1)]);
    Ok(Gaussian2D::new(
        Vector2::new(m[0], m[1]),
        symmetrized2(&cov2),
    ))
}

/// Fundamental matrix mapping points in `from` to epipolar lines in `to`:
/// `l_to = F * x_from` (homogeneous pixels on both sides).
pub fn fundamental_matrix(from: &Camera, to: &Camera) -> Matrix3<f64> {
    let c = from.center();
    let e = to.projection * Vector4::new(c.x, c.y, c.z, 1.0);
    let e_cross = Matrix3::new(0.0, -e.z, e.y, e.z, 0.0, -e.x, -e.y, e.x, 0.0);
    // Moore-Penrose pseudo-inverse of the full-row-rank 3x4 projection.
    let p = from.projection;
    let ppt = p * p.transpose();
    let pinv = p.transpose() * ppt.try_inverse().expect("P P^T invertible for rank-3 P");
    e_cross * (to.projection * pinv)
}

/// Symmetric epipolar distance between corresponding pixels: mean of the two
/// point-to-epipolar-line distances.
pub fn symmetric_epipolar_distance(
    f_ab: &Matrix3<f64>,
    a_px: &Vector2<f64>,
    b_px: &Vector2<f64>,
) -> f64 {
    let xa = Vector3::new(a_px.x, a_px.y, 1.0);
    let xb = Vector3::new(b_px.x, b_px.y, 1.0);
    let l_b = f_ab * xa;
    let l_a = f_ab.transpose() * xb;
    let d_b = (xb.dot(&l_b)).abs() / (l_b.x * l_b.x + l_b.y * l_b.y).sqrt().max(1e-300);
    let d_a = (xa.dot(&l_a)).abs() / (l_a.x * l_a.x + l_a.y * l_a.y).sqrt().max(1e-300);
    0.5 * (d_a + d_b)
}

/// Builds a camera at `center` looking at `target` with the given focal
/// length (pixels) and principal point at the image center. World z is up.
pub fn look_at_camera(
    id: u32,
    center: Vector3<f64>,
    target: Vector3<f64>,
    focal_px: f64,
    width: u32,
    height: u32,
) -> Result<Camera, GeometryError> {
    let forward = (target - center).normalize();
    let mut up = Vector3::new(0.0, 0.0, 1.0);
    if forward.cross(&up).norm() < 1e-6 {
        up = Vector3::new(0.0, 1.0, 0.0);
    }
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right).normalize();
    let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    #[rustfmt::skip]
    let k = Matrix3::new(
        focal_px, 0.0,      width as f64 / 2.0,
        0.0,      focal_px, height as f64 / 2.0,
        0.0,      0.0,      1.0,
    );
    let t = -r * center;
    let mut p = Matrix3x4::zeros();
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(&(k * r));
    p.column_mut(3).copy_from(&(k * t));
    Camera::new(id, p, width, height)
}

/// Ring of `n` cameras evenly spaced around `look_at`, all aimed at it.
pub fn camera_ring(
    n: usize,
    radius: f64,
    height: f64,
    look_at: Vector3<f64>,
    focal_px: f64,
    width: u32,
    height_px: u32,
) -> Vec<Camera> {
    (0..n)
        .map(|i| {
            let angle = 2.0 * core::f64::consts::PI * i as f64 / n as f64;
            look_at_camera(
                i as u32,
                Vector3::new(
                    look_at.x + radius * angle.cos(),
                    look_at.y + radius * angle.sin(),
                    height,
                ),
                look_at,
                focal_px,
                width,
                height_px,
            )
            .expect("ring camera is non-degenerate")
        })
        .collect()
}
