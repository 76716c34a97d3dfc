//! Monte-Carlo checks of distributional identities.
//!
//! Every check is a set of paired two-moment comparisons across the same
//! replications: for each site component the difference of means, and for each
//! pair of site components the difference of sample covariances. Pairing keeps
//! the correlation between the two sides inside the standard error. Mean
//! differences use `sd(d)/√R`; covariance differences use the leave-one-out
//! jackknife, which has a closed form for centred products.
//!
//! A check passes when every `|z|` is below the Bonferroni-adjusted threshold
//! `Φ⁻¹(1 − α/(2K))` with `α = 2(1 − Φ(z_max))` and `K` comparisons, so a single
//! comparison is held to `z_max` itself.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::algebra::ThetaTuple;
use crate::error::{Error, Result};
use crate::fields::{Clock, MultiIndex, Window};
use crate::gaussian::SampleBatch;

pub const DEFAULT_Z_MAX: f64 = 3.0;
/// Two replications leave a jackknife covariance undefined.
const MIN_REPLICATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Moment {
    Mean,
    Cov,
}

/// One paired comparison. `sites`/`components` index the reference side; the
/// tested side sits at `sites + shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub moment: Moment,
    pub sites: Vec<MultiIndex>,
    pub components: Vec<usize>,
    pub shift: MultiIndex,
    pub empirical: f64,
    pub reference: f64,
    pub se: f64,
    pub z: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub statistic: String,
    pub replications: usize,
    pub z_max: f64,
    /// Bonferroni-adjusted bound actually applied to `|z|`.
    pub z_threshold: f64,
    pub max_abs_z: f64,
    pub tests: usize,
    pub degenerate: usize,
    pub pass: bool,
    pub comparisons: Vec<Comparison>,
}

impl EnsembleReport {
    fn from_comparisons(statistic: &str, replications: usize, z_max: f64, comparisons: Vec<Comparison>) -> Self {
        let tests = comparisons.iter().filter(|c| !c.degenerate).count();
        let z_threshold = bonferroni_threshold(z_max, tests.max(1));
        let max_abs_z = comparisons.iter().fold(0.0f64, |m, c| m.max(c.z.abs()));
        let pass = comparisons.iter().all(|c| c.z.abs() <= z_threshold);
        EnsembleReport {
            statistic: statistic.to_string(),
            replications,
            z_max,
            z_threshold,
            max_abs_z,
            tests,
            degenerate: comparisons.len() - tests,
            pass,
            comparisons,
        }
    }

    /// CSV of the comparisons: one row per z-score.
    pub fn z_csv(&self) -> String {
        let mut out = String::from("moment,sites,components,shift,empirical,reference,se,z,degenerate\n");
        for c in &self.comparisons {
            let sites: Vec<String> = c.sites.iter().map(|s| s.to_string()).collect();
            let comps: Vec<String> = c.components.iter().map(|k| (k + 1).to_string()).collect();
            let _ = writeln!(
                out,
                "{},\"{}\",\"{}\",\"{}\",{},{},{},{},{}",
                match c.moment {
                    Moment::Mean => "mean",
                    Moment::Cov => "cov",
                },
                sites.join(";"),
                comps.join(";"),
                c.shift,
                crate::numfmt::f17(c.empirical),
                crate::numfmt::f17(c.reference),
                crate::numfmt::f17(c.se),
                crate::numfmt::f17(c.z),
                c.degenerate
            );
        }
        out
    }

    pub fn write_z_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.z_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `Φ⁻¹(1 − α/(2K))` with `α = 2(1 − Φ(z_max))`.
pub fn bonferroni_threshold(z_max: f64, k: usize) -> f64 {
    let normal = Normal::standard();
    let alpha = 2.0 * normal.sf(z_max);
    normal.inverse_cdf(1.0 - alpha / (2.0 * k.max(1) as f64))
}

/// Per-feature replication series, feature-major: `data[f][r]`.
struct Features {
    data: Vec<Vec<f64>>,
    means: Vec<f64>,
    /// `data[f][r] − means[f]`.
    centred: Vec<Vec<f64>>,
}

impl Features {
    fn new(data: Vec<Vec<f64>>) -> Self {
        let means: Vec<f64> = data.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect();
        let centred = data
            .iter()
            .zip(&means)
            .map(|(s, m)| s.iter().map(|v| v - m).collect())
            .collect();
        Features { data, means, centred }
    }

    fn cov(&self, a: usize, b: usize) -> f64 {
        let r = self.centred[a].len() as f64;
        dot(&self.centred[a], &self.centred[b]) / (r - 1.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Value series for every `(site, component)` of `sites`, optionally
/// multiplied site-wise by `transform`.
fn extract(batch: &SampleBatch, sites: &[MultiIndex], transform: Option<&DMatrix<f64>>) -> Result<Features> {
    let n = batch.fields[0].n();
    let r = batch.replications;
    let mut data = vec![vec![0.0; r]; sites.len() * n];
    for (rep, field) in batch.fields.iter().enumerate() {
        for (si, t) in sites.iter().enumerate() {
            let v = field.get(t)?;
            for k in 0..n {
                data[si * n + k][rep] = match transform {
                    Some(m) => (0..n).map(|c| m[(k, c)] * v[c]).sum(),
                    None => v[k],
                };
            }
        }
    }
    Ok(Features::new(data))
}

fn z_score(diff: f64, se: f64) -> (f64, bool) {
    if se > 0.0 {
        (diff / se, false)
    } else if diff == 0.0 {
        (0.0, true)
    } else {
        (f64::INFINITY.copysign(diff), false)
    }
}

/// Paired comparison of `target` against `reference`, feature by feature.
fn compare(
    reference: &Features,
    target: &Features,
    sites: &[MultiIndex],
    n: usize,
    shift: &MultiIndex,
) -> Vec<Comparison> {
    let r = reference.data[0].len();
    let rf = r as f64;
    let m = reference.data.len();
    let label = |f: usize| (sites[f / n].clone(), f % n);

    let mut jobs: Vec<(usize, usize, bool)> = (0..m).map(|f| (f, f, true)).collect();
    for a in 0..m {
        for b in a..m {
            jobs.push((a, b, false));
        }
    }
    jobs.par_iter()
        .map(|&(a, b, is_mean)| {
            if is_mean {
                let d: Vec<f64> = target.data[a]
                    .iter()
                    .zip(&reference.data[a])
                    .map(|(x, y)| x - y)
                    .collect();
                let mean = d.iter().sum::<f64>() / rf;
                let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (rf - 1.0);
                let se = (var / rf).sqrt();
                let (z, degenerate) = z_score(target.means[a] - reference.means[a], se);
                let (site, k) = label(a);
                Comparison {
                    moment: Moment::Mean,
                    sites: vec![site],
                    components: vec![k],
                    shift: shift.clone(),
                    empirical: target.means[a],
                    reference: reference.means[a],
                    se,
                    z,
                    degenerate,
                }
            } else {
                // leave-one-out values are affine in w_i = u_i(target) − u_i(reference)
                let w: Vec<f64> = (0..r)
                    .map(|i| {
                        target.centred[a][i] * target.centred[b][i]
                            - reference.centred[a][i] * reference.centred[b][i]
                    })
                    .collect();
                let wbar = w.iter().sum::<f64>() / rf;
                let ss = w.iter().map(|v| (v - wbar).powi(2)).sum::<f64>();
                let se = (rf / ((rf - 1.0) * (rf - 2.0).powi(2)) * ss).sqrt();
                let emp = target.cov(a, b);
                let refv = reference.cov(a, b);
                let (z, degenerate) = z_score(emp - refv, se);
                let (sa, ka) = label(a);
                let (sb, kb) = label(b);
                Comparison {
                    moment: Moment::Cov,
                    sites: vec![sa, sb],
                    components: vec![ka, kb],
                    shift: shift.clone(),
                    empirical: emp,
                    reference: refv,
                    se,
                    z,
                    degenerate,
                }
            }
        })
        .collect()
}

fn check_batch(batch: &SampleBatch) -> Result<&Window> {
    if batch.replications < MIN_REPLICATIONS {
        return Err(Error::InsufficientReplications {
            required: MIN_REPLICATIONS,
            actual: batch.replications,
        });
    }
    Ok(batch.window().expect("non-empty batch"))
}

/// Sites `t` with both `t` and `t + s` in the window.
fn shift_sites(window: &Window, s: &MultiIndex) -> Result<Vec<MultiIndex>> {
    if s.dim() != window.dim() {
        return Err(Error::DimensionMismatch {
            what: "shift dimension (N)",
            expected: window.dim(),
            actual: s.dim(),
        });
    }
    let sites: Vec<MultiIndex> = window.sites().filter(|t| window.contains(&t.add(s))).collect();
    if sites.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "shift {s} moves every site of {window} out of the window"
        )));
    }
    Ok(sites)
}

/// Single-site and pairwise moments with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub sites: Vec<MultiIndex>,
    pub components: Vec<usize>,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMoments {
    pub replications: usize,
    pub means: Vec<MomentEstimate>,
    pub covariances: Vec<MomentEstimate>,
}

impl EmpiricalMoments {
    /// Covariance estimate between `(a, k)` and `(b, l)`, in either order.
    pub fn cov(&self, a: &MultiIndex, k: usize, b: &MultiIndex, l: usize) -> Option<&MomentEstimate> {
        self.covariances.iter().find(|c| {
            (c.sites[0] == *a && c.components[0] == k && c.sites[1] == *b && c.components[1] == l)
                || (c.sites[0] == *b && c.components[0] == l && c.sites[1] == *a && c.components[1] == k)
        })
    }
}

/// Sample means and covariances over the replications, with `sd/√R` and
/// jackknife standard errors.
pub fn empirical_moments(batch: &SampleBatch, sites: &[MultiIndex]) -> Result<EmpiricalMoments> {
    let window = check_batch(batch)?;
    for t in sites {
        if !window.contains(t) {
            return Err(Error::OutOfWindow {
                site: t.clone(),
                window: window.clone(),
            });
        }
    }
    let n = batch.fields[0].n();
    let feats = extract(batch, sites, None)?;
    let r = batch.replications as f64;
    let m = feats.data.len();
    let label = |f: usize| (sites[f / n].clone(), f % n);
    let means = (0..m)
        .map(|f| {
            let var = dot(&feats.centred[f], &feats.centred[f]) / (r - 1.0);
            let (s, k) = label(f);
            MomentEstimate {
                sites: vec![s],
                components: vec![k],
                value: feats.means[f],
                se: (var / r).sqrt(),
            }
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a..m).map(move |b| (a, b))).collect();
    let covariances = pairs
        .par_iter()
        .map(|&(a, b)| {
            let u: Vec<f64> = feats.centred[a].iter().zip(&feats.centred[b]).map(|(x, y)| x * y).collect();
            let ubar = u.iter().sum::<f64>() / r;
            let ss = u.iter().map(|v| (v - ubar).powi(2)).sum::<f64>();
            let (sa, ka) = label(a);
            let (sb, kb) = label(b);
            MomentEstimate {
                sites: vec![sa, sb],
                components: vec![ka, kb],
                value: feats.cov(a, b),
                se: (r / ((r - 1.0) * (r - 2.0).powi(2)) * ss).sqrt(),
            }
        })
        .collect();
    Ok(EmpiricalMoments {
        replications: batch.replications,
        means,
        covariances,
    })
}

/// Empirical moments at `sites` against closed-form values: means against
/// zero and covariances against `reference(a, k, b, l)`.
pub fn moments_check(
    batch: &SampleBatch,
    sites: &[MultiIndex],
    reference: impl Fn(&MultiIndex, usize, &MultiIndex, usize) -> Result<f64>,
    z_max: f64,
) -> Result<EnsembleReport> {
    let moments = empirical_moments(batch, sites)?;
    let zero = MultiIndex::zeros(sites.first().map_or(0, |s| s.dim()));
    let mut comparisons = Vec::with_capacity(moments.means.len() + moments.covariances.len());
    for m in &moments.means {
        let (z, degenerate) = z_score(m.value, m.se);
        comparisons.push(Comparison {
            moment: Moment::Mean,
            sites: m.sites.clone(),
            components: m.components.clone(),
            shift: zero.clone(),
            empirical: m.value,
            reference: 0.0,
            se: m.se,
            z,
            degenerate,
        });
    }
    for c in &moments.covariances {
        let refv = reference(&c.sites[0], c.components[0], &c.sites[1], c.components[1])?;
        let (z, degenerate) = z_score(c.value - refv, c.se);
        comparisons.push(Comparison {
            moment: Moment::Cov,
            sites: c.sites.clone(),
            components: c.components.clone(),
            shift: zero.clone(),
            empirical: c.value,
            reference: refv,
            se: c.se,
            z,
            degenerate,
        });
    }
    Ok(EnsembleReport::from_comparisons(
        "moments",
        batch.replications,
        z_max,
        comparisons,
    ))
}

/// Moments at `{t + s}` against moments at `{t}` for every shift.
pub fn stationarity_check(batch: &SampleBatch, shifts: &[MultiIndex], z_max: f64) -> Result<EnsembleReport> {
    stationarity_named("stationarity", batch, shifts, z_max)
}

fn stationarity_named(name: &str, batch: &SampleBatch, shifts: &[MultiIndex], z_max: f64) -> Result<EnsembleReport> {
    let window = check_batch(batch)?.clone();
    let n = batch.fields[0].n();
    let mut all = Vec::new();
    for s in shifts {
        let base = shift_sites(&window, s)?;
        let moved: Vec<MultiIndex> = base.iter().map(|t| t.add(s)).collect();
        let reference = extract(batch, &base, None)?;
        let target = extract(batch, &moved, None)?;
        all.extend(compare(&reference, &target, &base, n, s));
    }
    Ok(EnsembleReport::from_comparisons(name, batch.replications, z_max, all))
}

/// Moments of `Y_{e^{t+s}}` against those of `exp(s ∗ Θ) Y_{e^t}`.
pub fn self_similarity_check(
    batch: &SampleBatch,
    shifts: &[MultiIndex],
    theta: &ThetaTuple,
    z_max: f64,
) -> Result<EnsembleReport> {
    let window = check_batch(batch)?.clone();
    let first = &batch.fields[0];
    first.require_clock(Clock::Exponential, "self_similarity_check")?;
    if theta.n() != first.n() || theta.big_n() != first.dim() {
        return Err(Error::InvalidParameter(format!(
            "theta has shape (n, N) = ({}, {}), batch has ({}, {})",
            theta.n(),
            theta.big_n(),
            first.n(),
            first.dim()
        )));
    }
    theta.require_commuting()?;
    let n = first.n();
    let mut all = Vec::new();
    for s in shifts {
        let base = shift_sites(&window, s)?;
        let moved: Vec<MultiIndex> = base.iter().map(|t| t.add(s)).collect();
        let e = theta.exp_at(s.as_slice())?;
        let reference = extract(batch, &base, Some(e.as_matrix()))?;
        let target = extract(batch, &moved, None)?;
        all.extend(compare(&reference, &target, &base, n, s));
    }
    Ok(EnsembleReport::from_comparisons(
        "self_similarity",
        batch.replications,
        z_max,
        all,
    ))
}

/// [`stationarity_check`] on the unit-cube increment fields.
pub fn increment_stationarity_check(
    batch: &SampleBatch,
    shifts: &[MultiIndex],
    z_max: f64,
) -> Result<EnsembleReport> {
    check_batch(batch)?;
    let inc = batch.map(|f| f.unit_increment_field())?;
    stationarity_named("increment_stationarity", &inc, shifts, z_max)
}

/// All unit vectors of dimension `dim`.
pub fn unit_shifts(dim: usize) -> Vec<MultiIndex> {
    (0..dim).map(|l| MultiIndex::unit(dim, l)).collect()
}
