//! Exact Gaussian simulation of fractional Brownian sheets and their mixtures
//! `G = A · B` on finite grids.
//!
//! Covariances are assembled densely and factorized by a symmetric
//! eigendecomposition with negative eigenvalues clipped to zero, so the
//! degenerate `H = 1` case samples on the right subspace. Sites whose variance
//! is exactly zero (a coordinate on a zero hyperplane) are left out of the
//! factorization and come back as exact zeros.
//!
//! Randomness comes from ChaCha8 streams keyed by `(seed, replication,
//! component)`, so a batch is reproducible regardless of thread scheduling.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::spectral_norm;
use crate::error::{Error, Result};
use crate::fields::{Clock, FieldWindow, Window};

pub const DEFAULT_GRID_CAP: usize = 4096;
/// Largest `|t_l|` accepted on the exponential clock; `e^{2·30·H}` stays far
/// from overflow and the Gram matrix keeps a usable dynamic range.
pub const EXP_CLOCK_LIMIT: i64 = 30;
const INDEFINITE_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;

/// Hurst indices `H_j^{(k)}`, one row per component `k`, one column per axis `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct HurstSpec {
    rows: Vec<Vec<f64>>,
}

impl HurstSpec {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidParameter(
                "Hurst array must have at least one component and one axis".into(),
            ));
        }
        let dim = rows[0].len();
        for (k, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "Hurst row length (N)",
                    expected: dim,
                    actual: row.len(),
                });
            }
            for (j, &h) in row.iter().enumerate() {
                check_hurst(k, j, h)?;
            }
        }
        Ok(HurstSpec { rows })
    }

    /// Same Hurst vector for all `n` components.
    pub fn uniform(n: usize, h: &[f64]) -> Result<Self> {
        HurstSpec::new(vec![h.to_vec(); n])
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn big_n(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Any index equal to one (rank-deficient covariance).
    pub fn is_degenerate(&self) -> bool {
        self.rows.iter().flatten().any(|&h| h == 1.0)
    }

    /// Every entry multiplied by `factor`, without range validation.
    pub fn scaled_unchecked(&self, factor: f64) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|h| h * factor).collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for HurstSpec {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        HurstSpec::new(rows)
    }
}

impl From<HurstSpec> for Vec<Vec<f64>> {
    fn from(h: HurstSpec) -> Self {
        h.rows
    }
}

fn check_hurst(component: usize, axis: usize, value: f64) -> Result<()> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidHurst {
            component,
            axis,
            value,
        })
    }
}

/// Real `n × n` mixing matrix, serialized as a list of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix(DMatrix<f64>);

impl MixingMatrix {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::InvalidParameter(format!(
                "mixing matrix must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("mixing matrix has non-finite entries".into()));
        }
        Ok(MixingMatrix(a))
    }

    pub fn identity(n: usize) -> Self {
        MixingMatrix(DMatrix::identity(n, n))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParameter("mixing matrix rows must all have length n".into()));
        }
        MixingMatrix::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| (0..self.n()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl Serialize for MixingMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for MixingMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        MixingMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Replications of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub seed: u64,
    pub replications: usize,
    pub fields: Vec<FieldWindow>,
}

impl SampleBatch {
    pub fn new(seed: u64, fields: Vec<FieldWindow>) -> Result<Self> {
        if let Some(first) = fields.first() {
            for f in &fields[1..] {
                if f.window() != first.window() || f.n() != first.n() || f.clock() != first.clock() {
                    return Err(Error::Misaligned(
                        "batch replications must share window, n and clock".into(),
                    ));
                }
            }
        }
        Ok(SampleBatch {
            seed,
            replications: fields.len(),
            fields,
        })
    }

    pub fn window(&self) -> Option<&Window> {
        self.fields.first().map(|f| f.window())
    }

    /// Applies `f` to every replication, keeping order.
    pub fn map(&self, f: impl Fn(&FieldWindow) -> Result<FieldWindow> + Sync + Send) -> Result<SampleBatch> {
        let fields = self.fields.par_iter().map(f).collect::<Result<Vec<_>>>()?;
        SampleBatch::new(self.seed, fields)
    }
}

/// Independent stream for one `(seed, replication, component)` triple.
pub fn substream(seed: u64, replication: u64, component: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replication.to_le_bytes());
    key[16..24].copy_from_slice(&component.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// `2^{−N} Π_j (|t_j|^{2H_j} + |s_j|^{2H_j} − |t_j − s_j|^{2H_j})`.
pub fn fbs_cov(t: &[f64], s: &[f64], h: &[f64]) -> Result<f64> {
    if t.len() != h.len() || s.len() != h.len() {
        return Err(Error::DimensionMismatch {
            what: "point dimension (N)",
            expected: h.len(),
            actual: if t.len() != h.len() { t.len() } else { s.len() },
        });
    }
    let mut prod = 1.0;
    for j in 0..h.len() {
        check_hurst(0, j, h[j])?;
        let e = 2.0 * h[j];
        prod *= t[j].abs().powf(e) + s[j].abs().powf(e) - (t[j] - s[j]).abs().powf(e);
    }
    Ok(prod * 0.5f64.powi(h.len() as i32))
}

/// Gram matrix of [`fbs_cov`] over `points`.
pub fn build_cov_matrix(points: &[Vec<f64>], h: &[f64]) -> Result<DMatrix<f64>> {
    for (j, &hj) in h.iter().enumerate() {
        check_hurst(0, j, hj)?;
    }
    let dim = h.len();
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "point dimension (N)",
                expected: dim,
                actual: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite grid point".into()));
        }
    }
    let m = points.len();
    let pow: Vec<Vec<f64>> = points
        .iter()
        .map(|p| (0..dim).map(|j| p[j].abs().powf(2.0 * h[j])).collect())
        .collect();
    let norm = 0.5f64.powi(dim as i32);
    let mut cov = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let mut prod = norm;
            for j in 0..dim {
                prod *= pow[a][j] + pow[b][j] - (points[a][j] - points[b][j]).abs().powf(2.0 * h[j]);
            }
            cov[(a, b)] = prod;
            cov[(b, a)] = prod;
        }
    }
    Ok(cov)
}

/// Square-root factor `L` with `L Lᵀ = cov` after eigenvalue clipping.
#[derive(Debug, Clone)]
pub struct CovFactor {
    dim: usize,
    /// Indices with non-zero variance; all others sample to exactly zero.
    active: Vec<usize>,
    /// `active.len() × active.len()`.
    root: DMatrix<f64>,
    rank_deficient: bool,
}

impl CovFactor {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(Error::InvalidParameter(format!(
                "covariance must be square, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let dim = cov.nrows();
        let norm = spectral_norm(cov);
        let defect = (cov - cov.transpose()).abs().max();
        if defect > SYMMETRY_TOL * norm.max(f64::MIN_POSITIVE) {
            return Err(Error::AsymmetricCovariance { defect });
        }
        let active: Vec<usize> = (0..dim).filter(|&i| cov[(i, i)] != 0.0).collect();
        let sub = DMatrix::from_fn(active.len(), active.len(), |i, j| {
            0.5 * (cov[(active[i], active[j])] + cov[(active[j], active[i])])
        });
        if active.is_empty() {
            return Ok(CovFactor {
                dim,
                active,
                root: sub,
                rank_deficient: dim > 0,
            });
        }
        let eig = SymmetricEigen::new(sub);
        let min = eig.eigenvalues.min();
        if min < -INDEFINITE_TOL * norm {
            return Err(Error::IndefiniteCovariance {
                eigenvalue: min,
                norm,
            });
        }
        let rank_deficient = eig.eigenvalues.iter().any(|&l| l <= INDEFINITE_TOL * norm);
        let sqrt = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
        );
        let mut root = eig.eigenvectors;
        for (j, mut col) in root.column_iter_mut().enumerate() {
            col *= sqrt[j];
        }
        Ok(CovFactor {
            dim,
            active,
            root,
            rank_deficient,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    /// `L z` with `z` drawn from `rng`, written into `out` (length `dim`).
    pub fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let m = self.active.len();
        let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        for (i, &idx) in self.active.iter().enumerate() {
            let mut acc = 0.0;
            for (j, zj) in z.iter().enumerate() {
                acc += self.root[(i, j)] * zj;
            }
            out[idx] = acc;
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(rng, &mut out);
        out
    }
}

/// One draw from `N(0, cov)`.
pub fn sample_gaussian_field<R: Rng>(cov: &DMatrix<f64>, rng: &mut R) -> Result<Vec<f64>> {
    Ok(CovFactor::new(cov)?.sample(rng))
}

/// Grid points of a window on the given clock.
pub fn grid_points(window: &Window, clock: Clock) -> Result<Vec<Vec<f64>>> {
    window
        .sites()
        .map(|t| match clock {
            Clock::Integer => Ok(t.0.iter().map(|&c| c as f64).collect()),
            Clock::Exponential => t
                .0
                .iter()
                .map(|&c| {
                    if c.abs() > EXP_CLOCK_LIMIT {
                        Err(Error::DynamicRange {
                            coord: c,
                            limit: EXP_CLOCK_LIMIT,
                        })
                    } else {
                        Ok((c as f64).exp())
                    }
                })
                .collect(),
        })
        .collect()
}

/// Samples `G_t = A B_t` with independent sheets `B^{(k)}`, reusing one
/// factorization per distinct Hurst row.
#[derive(Debug, Clone)]
pub struct SheetSampler {
    a: MixingMatrix,
    hurst: HurstSpec,
    window: Window,
    clock: Clock,
    /// Factor index per component.
    component_factor: Vec<usize>,
    factors: Vec<CovFactor>,
}

impl SheetSampler {
    pub fn new(a: MixingMatrix, hurst: HurstSpec, window: Window, clock: Clock) -> Result<Self> {
        SheetSampler::with_cap(a, hurst, window, clock, DEFAULT_GRID_CAP)
    }

    pub fn with_cap(
        a: MixingMatrix,
        hurst: HurstSpec,
        window: Window,
        clock: Clock,
        cap: usize,
    ) -> Result<Self> {
        if a.n() != hurst.n() {
            return Err(Error::DimensionMismatch {
                what: "mixing matrix size vs Hurst components (n)",
                expected: hurst.n(),
                actual: a.n(),
            });
        }
        if window.dim() != hurst.big_n() {
            return Err(Error::DimensionMismatch {
                what: "window dimension vs Hurst columns (N)",
                expected: hurst.big_n(),
                actual: window.dim(),
            });
        }
        if window.volume() > cap {
            return Err(Error::GridTooLarge {
                points: window.volume(),
                cap,
            });
        }
        let points = grid_points(&window, clock)?;
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut factors = Vec::new();
        let mut component_factor = Vec::with_capacity(hurst.n());
        for row in hurst.rows() {
            let key: Vec<u64> = row.iter().map(|h| h.to_bits()).collect();
            let idx = match seen.get(&key) {
                Some(&i) => i,
                None => {
                    let cov = build_cov_matrix(&points, row)?;
                    factors.push(CovFactor::new(&cov)?);
                    seen.insert(key, factors.len() - 1);
                    factors.len() - 1
                }
            };
            component_factor.push(idx);
        }
        Ok(SheetSampler {
            a,
            hurst,
            window,
            clock,
            component_factor,
            factors,
        })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn hurst(&self) -> &HurstSpec {
        &self.hurst
    }

    pub fn mixing(&self) -> &MixingMatrix {
        &self.a
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.factors.iter().any(CovFactor::is_rank_deficient)
    }

    /// Replication `rep` of the configuration under `seed`.
    pub fn sample(&self, seed: u64, rep: u64) -> Result<FieldWindow> {
        let n = self.a.n();
        let m = self.window.volume();
        let sheets: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let mut rng = substream(seed, rep, k as u64);
                self.factors[self.component_factor[k]].sample(&mut rng)
            })
            .collect();
        let a = self.a.matrix();
        let mut values = vec![0.0; m * n];
        for p in 0..m {
            for i in 0..n {
                let mut acc = 0.0;
                for (k, sheet) in sheets.iter().enumerate() {
                    acc += a[(i, k)] * sheet[p];
                }
                values[p * n + i] = acc;
            }
        }
        FieldWindow::new(self.window.clone(), n, self.clock, values)
    }

    /// Replications `0..reps`, generated in parallel and collected in order.
    pub fn sample_batch(&self, seed: u64, reps: usize) -> Result<SampleBatch> {
        let fields = (0..reps as u64)
            .into_par_iter()
            .map(|r| self.sample(seed, r))
            .collect::<Result<Vec<_>>>()?;
        SampleBatch::new(seed, fields)
    }
}

/// `Cov(G_t^{(i)}, G_s^{(j)}) = Σ_k A_{ik} A_{jk} R_{H^{(k)}}(t, s)` for the grid
/// points of sites `t`, `s` on `clock`.
pub fn mixed_sheet_cov(
    a: &MixingMatrix,
    hurst: &HurstSpec,
    clock: Clock,
    t: &crate::fields::MultiIndex,
    i: usize,
    s: &crate::fields::MultiIndex,
    j: usize,
) -> Result<f64> {
    let point = |u: &crate::fields::MultiIndex| -> Vec<f64> {
        u.0.iter()
            .map(|&c| match clock {
                Clock::Integer => c as f64,
                Clock::Exponential => (c as f64).exp(),
            })
            .collect()
    };
    let (pt, ps) = (point(t), point(s));
    let m = a.matrix();
    let mut total = 0.0;
    for k in 0..hurst.n() {
        let w = m[(i, k)] * m[(j, k)];
        if w != 0.0 {
            total += w * fbs_cov(&pt, &ps, hurst.row(k))?;
        }
    }
    Ok(total)
}

/// A single draw of `A · B` on `window`.
pub fn sample_multivariate_sheet(
    a: &MixingMatrix,
    hurst: &HurstSpec,
    window: &Window,
    clock: Clock,
    seed: u64,
    rep: u64,
) -> Result<FieldWindow> {
    SheetSampler::new(a.clone(), hurst.clone(), window.clone(), clock)?.sample(seed, rep)
}
