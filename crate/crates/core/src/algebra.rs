//! Matrix-tuple algebra on symmetric matrices.
//!
//! A [`ThetaTuple`] is an ordered tuple `(Θ_1, …, Θ_N)` of symmetric positive
//! definite `n × n` matrices. The two bilinear operators used throughout the crate
//! are
//!
//! * `t ∗ Θ = Σ_j t_j Θ_j` for an integer multi-index `t` ([`star_index`]), and
//! * `Θ ★ X = Σ_j Θ_j X_j` for a tuple of vectors ([`star_apply`]).
//!
//! Matrix exponentials are only ever taken of symmetric matrices and are computed
//! from a symmetric eigendecomposition, so `exp(A)` is symmetric positive definite
//! by construction. All matrix norms are spectral norms.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numfmt;

/// Relative tolerance for symmetry of input matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative tolerance on `‖Θ_jΘ_l − Θ_lΘ_j‖ / (‖Θ_j‖‖Θ_l‖)`.
pub const COMMUTE_TOL: f64 = 1e-10;

/// A real symmetric matrix. Stored exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates symmetry to relative tolerance [`SYMMETRY_TOL`] and stores the
    /// symmetric part.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_index(m, 0)
    }

    fn with_index(m: DMatrix<f64>, index: usize) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                what: "square matrix columns",
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "matrix {index} has non-finite entries"
            )));
        }
        let defect = asymmetry(&m);
        if defect > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { index, defect });
        }
        Ok(SymMatrix(symmetric_part(&m)))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(f64::INFINITY)
    }

    /// Spectral norm, `max |λ_i|`.
    pub fn norm(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.0[(i, j)] == 0.0))
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `‖M − Mᵀ‖_F / ‖M‖_F`, or the absolute defect for a zero matrix.
fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.norm();
    let defect = (m - m.transpose()).norm();
    if scale == 0.0 {
        defect
    } else {
        defect / scale
    }
}

/// Spectral norm of an arbitrary real matrix, `sqrt(λ_max(MᵀM))`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.transpose() * m;
    let gram = symmetric_part(&gram);
    let max = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(*v));
    max.max(0.0).sqrt()
}

/// Matrix exponential of a symmetric matrix, `Q diag(e^λ) Qᵀ`.
pub fn mat_exp_sym(a: &SymMatrix) -> SymMatrix {
    if a.is_diagonal() {
        let d: Vec<f64> = (0..a.dim()).map(|i| a[(i, i)].exp()).collect();
        return SymMatrix::from_diagonal(&d);
    }
    let eig = SymmetricEigen::new(a.0.clone());
    let q = &eig.eigenvectors;
    let exp_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp));
    SymMatrix(symmetric_part(&(q * exp_diag * q.transpose())))
}

/// `t ∗ Θ = Σ_j t_j Θ_j`.
pub fn star_index(t: &[i64], theta: &ThetaTuple) -> Result<SymMatrix> {
    if t.len() != theta.big_n() {
        return Err(Error::DimensionMismatch {
            what: "multi-index length (N)",
            expected: theta.big_n(),
            actual: t.len(),
        });
    }
    let mut acc = DMatrix::zeros(theta.n(), theta.n());
    for (&tj, m) in t.iter().zip(theta.mats()) {
        if tj != 0 {
            acc += m.as_matrix() * tj as f64;
        }
    }
    Ok(SymMatrix(acc))
}

/// `Σ_j coeffs_j · vecs_j`.
pub fn star_apply(coeffs: &[DMatrix<f64>], vecs: &[DVector<f64>]) -> Result<DVector<f64>> {
    if coeffs.len() != vecs.len() {
        return Err(Error::DimensionMismatch {
            what: "number of vectors",
            expected: coeffs.len(),
            actual: vecs.len(),
        });
    }
    let n = match vecs.first() {
        Some(v) => v.len(),
        None => return Ok(DVector::zeros(0)),
    };
    let mut acc = DVector::zeros(n);
    for (c, v) in coeffs.iter().zip(vecs) {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                what: "vector length",
                expected: n,
                actual: v.len(),
            });
        }
        if c.nrows() != n || c.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "coefficient matrix dimension",
                expected: n,
                actual: if c.nrows() != n { c.nrows() } else { c.ncols() },
            });
        }
        acc += c * v;
    }
    Ok(acc)
}

/// Smallest eigenvalue over a list of symmetric matrices; fails on the first
/// matrix that is not positive definite.
pub fn min_eigenvalue(mats: &[SymMatrix]) -> Result<f64> {
    let mut min = f64::INFINITY;
    for (index, m) in mats.iter().enumerate() {
        let ev = m.min_eigenvalue();
        if ev <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                index,
                min_eigenvalue: ev,
            });
        }
        min = min.min(ev);
    }
    Ok(min)
}

/// Maximum relative commutator over all pairs and whether it is below
/// [`COMMUTE_TOL`].
pub fn commutation_defect(mats: &[SymMatrix]) -> (bool, f64) {
    let norms: Vec<f64> = mats.iter().map(SymMatrix::norm).collect();
    let mut max_defect = 0.0_f64;
    for j in 0..mats.len() {
        for l in (j + 1)..mats.len() {
            let (a, b) = (mats[j].as_matrix(), mats[l].as_matrix());
            let comm = a * b - b * a;
            let scale = norms[j] * norms[l];
            let raw = spectral_norm(&comm);
            let defect = if scale > 0.0 { raw / scale } else { raw };
            max_defect = max_defect.max(defect);
        }
    }
    (max_defect <= COMMUTE_TOL, max_defect)
}

/// N-tuple of symmetric positive definite `n × n` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaTuple {
    n: usize,
    mats: Vec<SymMatrix>,
    commuting: bool,
    commute_defect: f64,
}

impl ThetaTuple {
    pub fn new(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        if mats.is_empty() {
            return Err(Error::InvalidParameter(
                "theta tuple must contain at least one matrix".into(),
            ));
        }
        let n = mats[0].nrows();
        if n == 0 {
            return Err(Error::InvalidParameter("state dimension n must be positive".into()));
        }
        let mut sym = Vec::with_capacity(mats.len());
        for (index, m) in mats.into_iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    what: "theta matrix dimension",
                    expected: n,
                    actual: if m.nrows() != n { m.nrows() } else { m.ncols() },
                });
            }
            sym.push(SymMatrix::with_index(m, index)?);
        }
        min_eigenvalue(&sym)?;
        let (commuting, commute_defect) = commutation_defect(&sym);
        Ok(ThetaTuple {
            n,
            mats: sym,
            commuting,
            commute_defect,
        })
    }

    /// Scalar case `n = 1`, `Θ = (θ_1, …, θ_N)`.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(
            values
                .iter()
                .map(|&v| DMatrix::from_element(1, 1, v))
                .collect(),
        )
    }

    /// `Θ_j = diag(d_j)`.
    pub fn diagonal(diags: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            diags
                .iter()
                .map(|d| DMatrix::from_diagonal(&DVector::from_column_slice(d)))
                .collect(),
        )
    }

    /// State dimension `n`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Parameter dimension `N`.
    pub fn big_n(&self) -> usize {
        self.mats.len()
    }

    pub fn mats(&self) -> &[SymMatrix] {
        &self.mats
    }

    pub fn is_commuting(&self) -> bool {
        self.commuting
    }

    pub fn commute_defect(&self) -> f64 {
        self.commute_defect
    }

    /// `min_j λ_min(Θ_j)`.
    pub fn min_eigenvalue(&self) -> f64 {
        // validated positive definite at construction
        min_eigenvalue(&self.mats).expect("theta validated at construction")
    }

    /// Errors unless the tuple commutes pairwise.
    pub fn require_commuting(&self) -> Result<()> {
        if self.commuting {
            Ok(())
        } else {
            Err(Error::NonCommuting {
                defect: self.commute_defect,
            })
        }
    }

    /// `exp(t ∗ Θ)`.
    pub fn exp_at(&self, t: &[i64]) -> Result<SymMatrix> {
        Ok(mat_exp_sym(&star_index(t, self)?))
    }

    /// Tuple with every matrix multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.mats
                .iter()
                .map(|m| m.as_matrix() * factor)
                .collect(),
        )
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `check_commuting`: flag and max relative defect.
pub fn check_commuting(theta: &ThetaTuple) -> (bool, f64) {
    (theta.commuting, theta.commute_defect)
}

#[derive(Serialize)]
struct ThetaJsonOut {
    n: usize,
    #[serde(rename = "N")]
    big_n: usize,
    mats: Vec<Vec<Box<serde_json::value::RawValue>>>,
}

#[derive(Deserialize)]
struct ThetaJsonIn {
    n: usize,
    #[serde(rename = "N")]
    big_n: usize,
    mats: Vec<Vec<f64>>,
}

impl Serialize for ThetaTuple {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mats = self
            .mats
            .iter()
            .map(|m| {
                let mut row_major = Vec::with_capacity(self.n * self.n);
                for i in 0..self.n {
                    for j in 0..self.n {
                        row_major.push(numfmt::raw_f64(m[(i, j)]));
                    }
                }
                row_major
            })
            .collect();
        ThetaJsonOut {
            n: self.n,
            big_n: self.big_n(),
            mats,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ThetaTuple {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = ThetaJsonIn::deserialize(deserializer)?;
        if raw.mats.len() != raw.big_n {
            return Err(D::Error::custom(format!(
                "expected N = {} matrices, got {}",
                raw.big_n,
                raw.mats.len()
            )));
        }
        let mut mats = Vec::with_capacity(raw.big_n);
        for (j, flat) in raw.mats.into_iter().enumerate() {
            if flat.len() != raw.n * raw.n {
                return Err(D::Error::custom(format!(
                    "matrix {j} has {} entries, expected n*n = {}",
                    flat.len(),
                    raw.n * raw.n
                )));
            }
            mats.push(DMatrix::from_row_slice(raw.n, raw.n, &flat));
        }
        ThetaTuple::new(mats).map_err(D::Error::custom)
    }
}
