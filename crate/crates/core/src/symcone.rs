//! Symmetric matrices of small dimension, the PSD cone, and matrix square roots.
//!
//! Everything here works on dense `D x D` matrices with `D <= 8`. The
//! eigendecomposition is a cyclic Jacobi iteration, which is accurate to a few
//! ulps at this size and needs no external linear algebra.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported matrix dimension.
pub const MAX_DIM: usize = 8;

/// Eigenvalues down to `-PSD_TOL` are accepted as round-off and clamped to zero.
pub const PSD_TOL: f64 = 1e-12;

/// `dsqrt` requires the smallest eigenvalue to exceed this margin.
pub const INTERIOR_MARGIN: f64 = 1e-10;

const STORAGE: usize = MAX_DIM * MAX_DIM;
const MAX_SWEEPS: usize = 64;

/// A real symmetric matrix, stored densely in row-major order.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    dim: usize,
    data: [f64; STORAGE],
}

impl SymMatrix {
    /// # Panics
    /// If `dim` is zero or exceeds [`MAX_DIM`].
    pub fn zeros(dim: usize) -> Self {
        assert!(
            (1..=MAX_DIM).contains(&dim),
            "matrix dimension {dim} outside 1..={MAX_DIM}"
        );
        SymMatrix {
            dim,
            data: [0.0; STORAGE],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    pub fn scalar(dim: usize, value: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = value;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m.data[i * m.dim + i] = *v;
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on the upper triangle.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m.data[i * dim + j] = v;
                m.data[j * dim + i] = v;
            }
        }
        m
    }

    /// Symmetric part `(m + m^T) / 2` of a row-major square matrix.
    pub fn symmetrize(dim: usize, full: &[f64]) -> Result<Self> {
        check_dim(dim)?;
        if full.len() != dim * dim {
            return Err(Error::Dimension(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                full.len()
            )));
        }
        Ok(Self::from_fn(dim, |i, j| {
            0.5 * (full[i * dim + j] + full[j * dim + i])
        }))
    }

    /// Parses a full row-major literal, rejecting asymmetric or non-finite input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        check_dim(dim)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("non-finite entry {v} in row {i}")));
            }
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                if rows[i][j] != rows[j][i] {
                    return Err(Error::Invalid(format!(
                        "matrix is not symmetric: entry ({i},{j}) = {} but ({j},{i}) = {}",
                        rows[i][j], rows[j][i]
                    )));
                }
            }
        }
        Ok(Self::from_fn(dim, |i, j| rows[i][j]))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Entries `(i, j)` with `i <= j`, row by row.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim * (self.dim + 1) / 2);
        for i in 0..self.dim {
            for j in i..self.dim {
                out.push(self.get(i, j));
            }
        }
        out
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets entries `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    /// Row-major view of the `dim * dim` entries.
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data[..self.dim * self.dim]
    }

    /// Entry-wise (Frobenius) inner product.
    pub fn inner(&self, other: &SymMatrix) -> Result<f64> {
        self.check_same(other)?;
        Ok(self.dot(other))
    }

    /// Frobenius inner product without the dimension check.
    #[inline]
    pub(crate) fn dot(&self, other: &SymMatrix) -> f64 {
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.as_slice().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }

    /// `self * other + other * self`, which is symmetric.
    pub fn anticommutator(&self, other: &SymMatrix) -> Result<SymMatrix> {
        self.check_same(other)?;
        let n = self.dim;
        Ok(SymMatrix::from_fn(n, |i, j| {
            let mut acc = 0.0;
            for k in 0..n {
                acc += self.get(i, k) * other.get(k, j) + other.get(i, k) * self.get(k, j);
            }
            acc
        }))
    }

    /// `self * self`.
    pub fn square(&self) -> SymMatrix {
        let n = self.dim;
        SymMatrix::from_fn(n, |i, j| (0..n).map(|k| self.get(i, k) * self.get(k, j)).sum())
    }

    /// Symmetric eigendecomposition by cyclic Jacobi rotations.
    pub fn eigh(&self) -> Result<Eigen> {
        if !self.is_finite() {
            return Err(Error::Numeric(format!(
                "eigendecomposition of non-finite matrix {self:?}"
            )));
        }
        jacobi(self)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigh()?.values[0])
    }

    pub(crate) fn check_same(&self, other: &SymMatrix) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.dim, self.dim, other.dim, other.dim
            )));
        }
        Ok(())
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::Capacity(format!(
            "matrix dimension {dim} outside 1..={MAX_DIM}"
        )));
    }
    Ok(())
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.to_rows())
    }
}

impl Add for SymMatrix {
    type Output = SymMatrix;

    fn add(mut self, rhs: SymMatrix) -> SymMatrix {
        self += rhs;
        self
    }
}

impl AddAssign for SymMatrix {
    fn add_assign(&mut self, rhs: SymMatrix) {
        debug_assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
    }
}

impl Sub for SymMatrix {
    type Output = SymMatrix;

    fn sub(mut self, rhs: SymMatrix) -> SymMatrix {
        self -= rhs;
        self
    }
}

impl SubAssign for SymMatrix {
    fn sub_assign(&mut self, rhs: SymMatrix) {
        debug_assert_eq!(self.dim, rhs.dim);
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a -= b;
        }
    }
}

impl Mul<f64> for SymMatrix {
    type Output = SymMatrix;

    fn mul(mut self, rhs: f64) -> SymMatrix {
        for a in self.data.iter_mut() {
            *a *= rhs;
        }
        self
    }
}

impl Mul<SymMatrix> for f64 {
    type Output = SymMatrix;

    fn mul(self, rhs: SymMatrix) -> SymMatrix {
        rhs * self
    }
}

impl Neg for SymMatrix {
    type Output = SymMatrix;

    fn neg(self) -> SymMatrix {
        self * -1.0
    }
}

/// Eigenvalues in ascending order with orthonormal eigenvectors.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    /// Column `k` (entries `vectors[i * dim + k]`) is the eigenvector of `values[k]`.
    pub vectors: Vec<f64>,
}

impl Eigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn vector(&self, i: usize, k: usize) -> f64 {
        self.vectors[i * self.dim() + k]
    }

    /// `V diag(f(values)) V^T`.
    pub fn reconstruct(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.dim();
        let mapped: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        SymMatrix::from_fn(n, |i, j| {
            (0..n)
                .map(|k| self.vector(i, k) * mapped[k] * self.vector(j, k))
                .sum()
        })
    }

    /// `V^T a V`, i.e. `a` expressed in the eigenbasis.
    pub fn to_eigenbasis(&self, a: &SymMatrix) -> SymMatrix {
        let n = self.dim();
        let mut av = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                av[i * n + k] = (0..n).map(|l| a.get(i, l) * self.vector(l, k)).sum();
            }
        }
        SymMatrix::from_fn(n, |p, q| (0..n).map(|i| self.vector(i, p) * av[i * n + q]).sum())
    }

    /// `V a V^T`, the inverse of [`Eigen::to_eigenbasis`].
    pub fn from_eigenbasis(&self, a: &SymMatrix) -> SymMatrix {
        let n = self.dim();
        let mut va = vec![0.0; n * n];
        for i in 0..n {
            for q in 0..n {
                va[i * n + q] = (0..n).map(|p| self.vector(i, p) * a.get(p, q)).sum();
            }
        }
        SymMatrix::from_fn(n, |i, j| (0..n).map(|q| va[i * n + q] * self.vector(j, q)).sum())
    }
}

fn jacobi(m: &SymMatrix) -> Result<Eigen> {
    let n = m.dim;
    let mut a = m.as_slice().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let mut converged = false;
    for sweep in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q].abs())
            .sum();
        if off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Once an off-diagonal entry no longer changes either diagonal
                // entry in floating point it is zeroed outright.
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                if apq == 0.0 {
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a[r * n + p];
                        let arq = a[r * n + q];
                        let new_rp = c * arp - s * arq;
                        let new_rq = s * arp + c * arq;
                        a[r * n + p] = new_rp;
                        a[p * n + r] = new_rp;
                        a[r * n + q] = new_rq;
                        a[q * n + r] = new_rq;
                    }
                }
                for r in 0..n {
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = c * vrp - s * vrq;
                    v[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps for {m:?}"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &k) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + col] = v[i * n + k];
        }
    }
    Ok(Eigen { values, vectors })
}

/// A point of the PSD cone together with its eigendecomposition.
#[derive(Clone, Debug)]
pub struct ConePoint {
    matrix: SymMatrix,
    interior_margin: f64,
    eigen: Eigen,
}

impl ConePoint {
    /// Accepts `m` if its smallest eigenvalue is at least `-PSD_TOL`; slightly
    /// negative eigenvalues are clamped to zero.
    pub fn new(m: SymMatrix) -> Result<ConePoint> {
        let eigen = m.eigh()?;
        let min = eigen.values[0];
        if min < -PSD_TOL {
            return Err(Error::Domain(format!(
                "matrix {m:?} is not positive semidefinite (smallest eigenvalue {min:e})"
            )));
        }
        if min >= 0.0 {
            return Ok(ConePoint {
                matrix: m,
                interior_margin: min,
                eigen,
            });
        }
        let mut eigen = eigen;
        for v in eigen.values.iter_mut() {
            *v = v.max(0.0);
        }
        let matrix = eigen.reconstruct(|v| v);
        Ok(ConePoint {
            matrix,
            interior_margin: eigen.values[0],
            eigen,
        })
    }

    pub fn zero(dim: usize) -> ConePoint {
        ConePoint::new(SymMatrix::zeros(dim)).expect("zero matrix is PSD")
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Smallest eigenvalue.
    pub fn interior_margin(&self) -> f64 {
        self.interior_margin
    }

    pub fn eigen(&self) -> &Eigen {
        &self.eigen
    }

    pub fn is_interior(&self) -> bool {
        self.interior_margin > INTERIOR_MARGIN
    }

    pub fn into_matrix(self) -> SymMatrix {
        self.matrix
    }
}

/// Entry-wise inner product `sum_ij a_ij b_ij`.
pub fn inner(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    a.inner(b)
}

/// Principal square root of a PSD matrix.
pub fn sqrt_psd(h: &ConePoint) -> Result<ConePoint> {
    let eigen = Eigen {
        values: h.eigen.values.iter().map(|v| v.max(0.0).sqrt()).collect(),
        vectors: h.eigen.vectors.clone(),
    };
    let matrix = eigen.reconstruct(|v| v);
    Ok(ConePoint {
        matrix,
        interior_margin: eigen.values[0],
        eigen,
    })
}

/// Directional derivative of `h -> sqrt(h)` at a positive definite `h` along `a`.
///
/// This is the unique symmetric `M` with `M sqrt(h) + sqrt(h) M = a`, solved
/// entry-wise in the eigenbasis of `h`.
pub fn dsqrt(h: &ConePoint, a: &SymMatrix) -> Result<SymMatrix> {
    h.matrix.check_same(a)?;
    if !h.is_interior() {
        return Err(Error::Domain(format!(
            "square-root derivative needs a positive definite point; smallest eigenvalue is {:e}",
            h.interior_margin
        )));
    }
    let roots: Vec<f64> = h.eigen.values.iter().map(|v| v.sqrt()).collect();
    let mut rotated = h.eigen.to_eigenbasis(a);
    let n = rotated.dim();
    for i in 0..n {
        for j in i..n {
            let v = rotated.get(i, j) / (roots[i] + roots[j]);
            rotated.set(i, j, v);
        }
    }
    Ok(h.eigen.from_eigenbasis(&rotated))
}

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped).
pub fn project_psd(s: &SymMatrix) -> Result<ConePoint> {
    let mut eigen = s.eigh()?;
    if eigen.values[0] >= 0.0 {
        return Ok(ConePoint {
            matrix: *s,
            interior_margin: eigen.values[0],
            eigen,
        });
    }
    for v in eigen.values.iter_mut() {
        *v = v.max(0.0);
    }
    let matrix = eigen.reconstruct(|v| v);
    Ok(ConePoint {
        matrix,
        interior_margin: eigen.values[0],
        eigen,
    })
}

/// Wishart-style random PSD matrix `G G^T / dim` with standard Gaussian `G`.
pub fn wishart<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> SymMatrix {
    let g: Vec<f64> = (0..dim * dim).map(|_| rng.sample(StandardNormal)).collect();
    let scale = 1.0 / dim as f64;
    SymMatrix::from_fn(dim, |i, j| {
        scale * (0..dim).map(|k| g[i * dim + k] * g[j * dim + k]).sum::<f64>()
    })
}

/// Orthogonal basis of the symmetric matrices: `E_ii` and `E_ij + E_ji` for `i < j`.
pub fn basis(dim: usize) -> Result<Vec<SymMatrix>> {
    check_dim(dim)?;
    let mut out = Vec::with_capacity(dim * (dim + 1) / 2);
    for i in 0..dim {
        for j in i..dim {
            let mut e = SymMatrix::zeros(dim);
            e.set(i, j, 1.0);
            out.push(e);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(dim: usize, rng: &mut impl Rng, floor: f64) -> SymMatrix {
        let g: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        SymMatrix::from_fn(dim, |i, j| {
            let mut acc: f64 = (0..dim).map(|k| g[i * dim + k] * g[j * dim + k]).sum();
            if i == j {
                acc += floor;
            }
            acc
        })
    }

    #[test]
    fn inner_products() {
        let i3 = SymMatrix::identity(3);
        assert_eq!(inner(&i3, &i3).unwrap(), 3.0);
        let a = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(inner(&a, &a).unwrap(), 18.0);
        assert_eq!(inner(&a, &SymMatrix::zeros(2)).unwrap(), 0.0);
        assert!(matches!(inner(&a, &i3), Err(Error::Dimension(_))));
    }

    #[test]
    fn construction_validates() {
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.5, 1.0]]).is_err());
        assert!(SymMatrix::from_rows(&vec![vec![0.0; 9]; 9]).is_err());
        assert!(SymMatrix::from_rows(&[vec![1.0, f64::NAN], vec![f64::NAN, 1.0]]).is_err());
        let m: SymMatrix = serde_json::from_str("[[1.0, 0.5], [0.5, 2.0]]").unwrap();
        assert_eq!(m.get(0, 1), 0.5);
        assert!(serde_json::from_str::<SymMatrix>("[[1.0, 0.5], [0.4, 2.0]]").is_err());
    }

    #[test]
    fn cone_point_clamps_roundoff() {
        let m = SymMatrix::diag(&[1.0, -1e-13]);
        let c = ConePoint::new(m).unwrap();
        assert_eq!(c.interior_margin(), 0.0);
        assert!(c.matrix().get(1, 1) >= 0.0);
        assert!(matches!(
            ConePoint::new(SymMatrix::diag(&[1.0, -1e-6])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sqrt_examples() {
        let id = ConePoint::new(SymMatrix::identity(3)).unwrap();
        assert_abs_diff_eq!(
            sqrt_psd(&id).unwrap().matrix().max_abs(),
            1.0,
            epsilon = 1e-15
        );
        let d = ConePoint::new(SymMatrix::diag(&[4.0, 9.0])).unwrap();
        let s = sqrt_psd(&d).unwrap();
        assert_abs_diff_eq!(s.matrix().get(0, 0), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.matrix().get(1, 1), 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.matrix().get(0, 1), 0.0, epsilon = 1e-14);

        // [[2,1],[1,2]] has eigenpairs (3, (1,1)/sqrt2) and (1, (1,-1)/sqrt2), so its
        // root is ((sqrt3 + 1)/2) I + ((sqrt3 - 1)/2) (ones - I) off the diagonal.
        let m = ConePoint::new(SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap())
            .unwrap();
        let s = sqrt_psd(&m).unwrap();
        let r3 = 3f64.sqrt();
        assert_abs_diff_eq!(s.matrix().get(0, 0), (r3 + 1.0) / 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.matrix().get(0, 1), (r3 - 1.0) / 2.0, epsilon = 1e-14);
        assert!((s.matrix().square() - *m.matrix()).max_abs() < 1e-14);
    }

    #[test]
    fn dsqrt_examples() {
        let id = ConePoint::new(SymMatrix::identity(2)).unwrap();
        let a = SymMatrix::from_rows(&[vec![0.3, -1.2], vec![-1.2, 2.0]]).unwrap();
        assert!((dsqrt(&id, &a).unwrap() - a * 0.5).max_abs() < 1e-15);

        let h = ConePoint::new(SymMatrix::diag(&[4.0, 4.0])).unwrap();
        let d = dsqrt(&h, &SymMatrix::diag(&[1.0, 0.0])).unwrap();
        assert!((d - SymMatrix::diag(&[0.25, 0.0])).max_abs() < 1e-15);

        let boundary = ConePoint::new(SymMatrix::diag(&[1.0, 0.0])).unwrap();
        assert!(matches!(dsqrt(&boundary, &a), Err(Error::Domain(_))));
    }

    #[test]
    fn dsqrt_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in 1..=4 {
            for _ in 0..10 {
                let h = random_pd(dim, &mut rng, 0.5);
                let a = SymMatrix::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
                let eps = 1e-6;
                let plus = sqrt_psd(&ConePoint::new(h + a * eps).unwrap()).unwrap();
                let minus = sqrt_psd(&ConePoint::new(h - a * eps).unwrap()).unwrap();
                let fd = (*plus.matrix() - *minus.matrix()) * (0.5 / eps);
                let exact = dsqrt(&ConePoint::new(h).unwrap(), &a).unwrap();
                let rel = (fd - exact).norm() / exact.norm();
                assert!(rel < 1e-5, "dim {dim}: relative error {rel:e}");
            }
        }
    }

    #[test]
    fn projection_examples() {
        let id = SymMatrix::identity(3);
        assert_eq!(*project_psd(&id).unwrap().matrix(), id);
        let p = project_psd(&SymMatrix::diag(&[1.0, -1.0])).unwrap();
        assert!((*p.matrix() - SymMatrix::diag(&[1.0, 0.0])).max_abs() < 1e-15);
    }

    #[test]
    fn basis_is_orthogonal() {
        assert_eq!(basis(1).unwrap(), vec![SymMatrix::identity(1)]);
        for dim in 1..=4 {
            let b = basis(dim).unwrap();
            assert_eq!(b.len(), dim * (dim + 1) / 2);
            for (i, bi) in b.iter().enumerate() {
                for (j, bj) in b.iter().enumerate() {
                    let g = inner(bi, bj).unwrap();
                    if i != j {
                        assert_eq!(g, 0.0);
                    } else {
                        assert!(g == 1.0 || g == 2.0);
                    }
                }
            }
        }
    }

    #[test]
    fn jacobi_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in 1..=MAX_DIM {
            let m = SymMatrix::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
            let e = m.eigh().unwrap();
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
            assert!((e.reconstruct(|v| v) - m).max_abs() < 1e-13);
        }
    }

    fn sym_strategy(dim: usize) -> impl Strategy<Value = SymMatrix> {
        prop::collection::vec(-3.0f64..3.0, dim * dim)
            .prop_map(move |v| SymMatrix::symmetrize(dim, &v).unwrap())
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_psd(m in (1usize..=5).prop_flat_map(sym_strategy)) {
            let p = project_psd(&m).unwrap();
            prop_assert!(p.interior_margin() >= -1e-13);
            let pp = project_psd(p.matrix()).unwrap();
            prop_assert!((*pp.matrix() - *p.matrix()).max_abs() < 1e-12);
        }

        #[test]
        fn sylvester_residual_is_tiny(seed in 0u64..10_000, dim in 1usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = ConePoint::new(random_pd(dim, &mut rng, 0.05)).unwrap();
            let a = SymMatrix::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let m = dsqrt(&h, &a).unwrap();
            let root = sqrt_psd(&h).unwrap();
            let residual = (m.anticommutator(root.matrix()).unwrap() - a).max_abs();
            prop_assert!(residual <= 1e-10, "residual {residual:e}");
        }

        #[test]
        fn inner_is_symmetric_bilinear(a in sym_strategy(3), b in sym_strategy(3), c in sym_strategy(3), s in -2.0f64..2.0) {
            let ab = inner(&a, &b).unwrap();
            prop_assert_eq!(ab, inner(&b, &a).unwrap());
            let lhs = inner(&(a * s + c), &b).unwrap();
            let rhs = s * ab + inner(&c, &b).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            if a.max_abs() > 0.0 {
                prop_assert!(inner(&a, &a).unwrap() > 0.0);
            }
        }
    }
}
