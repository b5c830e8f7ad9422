//! Ellipsoid algebra.
//!
//! An ellipsoid is stored as `E(c, K) = { x | (x - c)^T K (x - c) <= 1 }` with
//! the *forward* shape matrix `K`. Routines that naturally work with the
//! inverse shape `Q = K^-1` (Minkowski sums, linear images) say so in their
//! names and convert explicitly at the boundary.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Vector3};

use crate::error::{FrsError, Result};

/// Eigenvalues below this fraction of the largest one are rejected.
const EIGEN_FLOOR: f64 = 1e-14;

/// A set described by a center and a symmetric positive semidefinite matrix.
///
/// Implemented by [`Ellipsoid`] and by the degenerate [`Cylinder`] produced by
/// [`propagate_to_space`]; both can appear as a constraint in
/// [`fuse_intersection`].
pub trait QuadraticSet {
    fn center(&self) -> &DVector<f64>;
    fn matrix(&self) -> &DMatrix<f64>;
    fn dim(&self) -> usize {
        self.center().len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: DVector<f64>,
    shape: DMatrix<f64>,
}

/// A zero-padded ellipsoid living in a higher-dimensional space. Its matrix is
/// only positive semidefinite, so it is not an [`Ellipsoid`] on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct Cylinder {
    center: DVector<f64>,
    matrix: DMatrix<f64>,
}

impl QuadraticSet for Ellipsoid {
    fn center(&self) -> &DVector<f64> {
        &self.center
    }
    fn matrix(&self) -> &DMatrix<f64> {
        &self.shape
    }
}

impl QuadraticSet for Cylinder {
    fn center(&self) -> &DVector<f64> {
        &self.center
    }
    fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(symmetrize(m)).ok_or(FrsError::NotPositiveDefinite(what))?;
    Ok(symmetrize(&chol.inverse()))
}

fn spd_cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or(FrsError::NotPositiveDefinite(what))
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(FrsError::DimensionMismatch { expected, got });
    }
    Ok(())
}

impl Ellipsoid {
    /// Builds `E(center, shape)`. The shape is symmetrized and must have
    /// strictly positive eigenvalues.
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>) -> Result<Self> {
        let n = center.len();
        if shape.nrows() != n || shape.ncols() != n {
            return Err(FrsError::DimensionMismatch {
                expected: n,
                got: shape.nrows().max(shape.ncols()),
            });
        }
        if n == 0 {
            return Err(FrsError::InvalidParameter("empty ellipsoid".into()));
        }
        if center.iter().chain(shape.iter()).any(|v| !v.is_finite()) {
            return Err(FrsError::NotPositiveDefinite("non-finite entries"));
        }
        let shape = symmetrize(&shape);
        let eig = shape.clone().symmetric_eigenvalues();
        let max = eig.max();
        let min = eig.min();
        if !(max > 0.0) || min <= EIGEN_FLOOR * max {
            return Err(FrsError::NotPositiveDefinite("ellipsoid shape"));
        }
        Ok(Self { center, shape })
    }

    /// Builds `E(center, Q^-1)` from an inverse shape matrix `Q`.
    pub fn from_inverse_shape(center: DVector<f64>, inverse_shape: &DMatrix<f64>) -> Result<Self> {
        let shape = spd_inverse(inverse_shape, "inverse shape")?;
        Self::new(center, shape)
    }

    /// Ball of the given radius.
    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        let n = center.len();
        Self::new(center, DMatrix::identity(n, n) / (radius * radius))
    }

    /// Axis-aligned ellipsoid with the given semi-axis lengths.
    pub fn from_semi_axes(center: DVector<f64>, semi_axes: &[f64]) -> Result<Self> {
        check_dim(center.len(), semi_axes.len())?;
        let diag = DVector::from_iterator(semi_axes.len(), semi_axes.iter().map(|a| 1.0 / (a * a)));
        Self::new(center, DMatrix::from_diagonal(&diag))
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    /// `Q = K^-1`.
    pub fn inverse_shape(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.shape, "ellipsoid shape")
    }

    pub fn translated(&self, offset: &DVector<f64>) -> Result<Self> {
        check_dim(self.dim(), offset.len())?;
        Ok(Self {
            center: &self.center + offset,
            shape: self.shape.clone(),
        })
    }

    /// `(x - c)^T K (x - c)`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let r = x - &self.center;
        Ok(r.dot(&(&self.shape * &r)))
    }

    pub fn contains(&self, x: &DVector<f64>, slack: f64) -> Result<bool> {
        if slack < 0.0 {
            return Err(FrsError::InvalidParameter(format!("negative slack {slack}")));
        }
        Ok(self.quadratic_form(x)? <= 1.0 + slack)
    }

    /// `max_{x in E} direction^T x`.
    pub fn support(&self, direction: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), direction.len())?;
        if direction.iter().all(|v| *v == 0.0) {
            return Err(FrsError::ZeroDirection);
        }
        let chol = spd_cholesky(&self.shape, "ellipsoid shape")?;
        let q_dir = chol.solve(direction);
        Ok(direction.dot(&self.center) + direction.dot(&q_dir).max(0.0).sqrt())
    }

    /// Exact shadow on the kept coordinates (Schur complement of the shape).
    pub fn project(&self, kept: &[usize]) -> Result<Self> {
        let n = self.dim();
        validate_indices(kept, n)?;
        if kept.is_empty() {
            return Err(FrsError::InvalidParameter("projection onto no coordinates".into()));
        }
        let dropped: Vec<usize> = (0..n).filter(|i| !kept.contains(i)).collect();
        let m11 = self.shape.select_rows(kept).select_columns(kept);
        let center = DVector::from_iterator(kept.len(), kept.iter().map(|&i| self.center[i]));
        if dropped.is_empty() {
            return Self::new(center, m11);
        }
        let m12 = self.shape.select_rows(kept).select_columns(&dropped);
        let m22 = self.shape.select_rows(&dropped).select_columns(&dropped);
        let chol = Cholesky::new(symmetrize(&m22)).ok_or(FrsError::Singular("M22 block"))?;
        let schur = m11 - &m12 * chol.solve(&m12.transpose());
        Self::new(center, schur)
    }

    /// Image `{ T x | x in E }` under an invertible map.
    pub fn linear_map(&self, t: &DMatrix<f64>) -> Result<Self> {
        let n = self.dim();
        if t.nrows() != n || t.ncols() != n {
            return Err(FrsError::DimensionMismatch {
                expected: n,
                got: t.nrows().max(t.ncols()),
            });
        }
        let t_inv = t.clone().try_inverse().ok_or(FrsError::Singular("linear map"))?;
        let shape = t_inv.transpose() * &self.shape * &t_inv;
        Self::new(t * &self.center, shape)
    }

    /// Trace of the inverse shape matrix.
    pub fn trace_inverse(&self) -> Result<f64> {
        Ok(self.inverse_shape()?.trace())
    }

    /// `ln det(K^-1) = -ln det(K)`.
    pub fn log_det_inverse(&self) -> Result<f64> {
        let chol = spd_cholesky(&self.shape, "ellipsoid shape")?;
        let l = chol.l_dirty();
        Ok(-2.0 * (0..self.dim()).map(|i| l[(i, i)].ln()).sum::<f64>())
    }

    /// Half-widths of the axis-aligned bounding box, `sqrt(diag(K^-1))`.
    pub fn axis_extents(&self) -> Result<DVector<f64>> {
        Ok(self.inverse_shape()?.diagonal().map(|v| v.max(0.0).sqrt()))
    }
}

fn validate_indices(indices: &[usize], dim: usize) -> Result<()> {
    for (k, &i) in indices.iter().enumerate() {
        if i >= dim {
            return Err(FrsError::IndexOutOfRange { index: i, dim });
        }
        if indices[..k].contains(&i) {
            return Err(FrsError::DuplicateIndex(i));
        }
    }
    Ok(())
}

/// Minimal-trace outer approximation of a Minkowski sum of centered ellipsoids
/// given by their inverse shapes `Q_i`.
///
/// Returns `Q = sum_i Q_i / a_i` with `a_i = sqrt(tr Q_i) / sum_j sqrt(tr Q_j)`,
/// again as an inverse shape.
pub fn min_trace_sum(inverse_shapes: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = inverse_shapes
        .first()
        .ok_or_else(|| FrsError::InvalidParameter("empty Minkowski sum".into()))?;
    let n = first.nrows();
    let mut roots = Vec::with_capacity(inverse_shapes.len());
    for (index, q) in inverse_shapes.iter().enumerate() {
        if q.nrows() != n || q.ncols() != n {
            return Err(FrsError::DimensionMismatch {
                expected: n,
                got: q.nrows().max(q.ncols()),
            });
        }
        let tr = q.trace();
        if !(tr > 0.0) {
            return Err(FrsError::ZeroTrace { index });
        }
        roots.push(tr.sqrt());
    }
    let total: f64 = roots.iter().sum();
    let mut out = DMatrix::zeros(n, n);
    for (q, root) in inverse_shapes.iter().zip(&roots) {
        // Q_i / a_i = Q_i * total / sqrt(tr Q_i)
        out += q * (total / root);
    }
    Ok(symmetrize(&out))
}

/// Over-approximates `e1 ∩ e2` by a single ellipsoid using fusion weight `b`.
///
/// With `N = b K1 + (1-b) K2`, the result is `E(c, N / (1 - delta))` where
/// `c = N^-1 (b K1 c1 + (1-b) K2 c2)` and
/// `delta = b c1^T K1 c1 + (1-b) c2^T K2 c2 - c^T N c`.
pub fn fuse_intersection<S: QuadraticSet>(e1: &Ellipsoid, e2: &S, b: f64) -> Result<Ellipsoid> {
    if !(0.0..=1.0).contains(&b) {
        return Err(FrsError::InvalidParameter(format!("fusion weight {b} outside [0, 1]")));
    }
    check_dim(e1.dim(), e2.dim())?;
    if b == 1.0 {
        return Ok(e1.clone());
    }
    let k1 = e1.shape();
    let k2 = e2.matrix();
    let (c1, c2) = (e1.center(), e2.center());
    let n_mat = symmetrize(&(k1 * b + k2 * (1.0 - b)));
    let chol = Cholesky::new(n_mat.clone()).ok_or(FrsError::EmptyFusion { delta: f64::NAN })?;
    let rhs = k1 * c1 * b + k2 * c2 * (1.0 - b);
    let c = chol.solve(&rhs);
    let delta = b * c1.dot(&(k1 * c1)) + (1.0 - b) * c2.dot(&(k2 * c2)) - c.dot(&(&n_mat * &c));
    if !(delta < 1.0) {
        return Err(FrsError::EmptyFusion { delta });
    }
    Ellipsoid::new(c, n_mat / (1.0 - delta))
}

/// Embeds `e` into a `target_dim`-dimensional space on the given coordinates,
/// padding center and matrix with zeros.
pub fn propagate_to_space(e: &Ellipsoid, target_dim: usize, embedded: &[usize]) -> Result<Cylinder> {
    check_dim(e.dim(), embedded.len())?;
    validate_indices(embedded, target_dim)?;
    let mut center = DVector::zeros(target_dim);
    let mut matrix = DMatrix::zeros(target_dim, target_dim);
    for (a, &i) in embedded.iter().enumerate() {
        center[i] = e.center()[a];
        for (b, &j) in embedded.iter().enumerate() {
            matrix[(i, j)] = e.shape()[(a, b)];
        }
    }
    Ok(Cylinder { center, matrix })
}

/// Diagonal `Λ*` with `λ_i = 1 / (d_i · Σ_j d_j)`: the ellipsoid `E(0, Λ*)`
/// covering the box `|x_i| <= d_i` whose inverse has minimal trace among
/// diagonal shapes with `Σ λ_i d_i² <= 1`.
pub fn min_trace_box_ellipsoid(half_widths: &Vector3<f64>) -> Result<Matrix3<f64>> {
    if let Some((i, v)) = half_widths.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(FrsError::InvalidParameter(format!("box half-width {i} is {v}, must be positive")));
    }
    let total = half_widths.sum();
    Ok(Matrix3::from_diagonal(&half_widths.map(|d| 1.0 / (d * total))))
}
