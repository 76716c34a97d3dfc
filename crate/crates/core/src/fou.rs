//! Fractional Ornstein–Uhlenbeck fields.
//!
//! First kind: the stationary AR(1) solution `X = L⁻¹(M⁻¹(G))` driven by a mixed
//! sheet `G = A · B` sampled on the integer clock. Second kind: `X = L⁻¹(Y)` with
//! `Y_{e^t} = A · B_{e^t}` sampled on the exponential clock and
//! `Θ_j = diag(H_j^{(1)}, …, H_j^{(n)})`.

use serde::{Deserialize, Serialize};

use crate::algebra::{spectral_norm, ThetaTuple};
use crate::error::{Error, Result};
use crate::fields::{Clock, FieldWindow, MultiIndex, Window};
use crate::gaussian::{HurstSpec, MixingMatrix, SampleBatch, SheetSampler};
use crate::transforms::{lamperti_inv_with, m_inverse_with, tail_bound, ExpTable, TruncationPolicy};

const MIXING_COMMUTE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FouKind {
    First,
    Second,
}

impl FouKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(FouKind::First),
            "second" => Ok(FouKind::Second),
            other => Err(Error::InvalidParameter(format!(
                "unknown FOU kind {other:?}; expected first or second"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FouConfig {
    pub kind: FouKind,
    pub hurst: HurstSpec,
    pub a: MixingMatrix,
    /// Required for the first kind; must be absent for the second kind.
    pub theta: Option<ThetaTuple>,
    pub window: Window,
    pub policy: TruncationPolicy,
    pub seed: u64,
    pub replications: usize,
}

/// `Θ_j = diag(H_j^{(k)})_k`.
pub fn second_kind_theta(hurst: &HurstSpec) -> Result<ThetaTuple> {
    let diags: Vec<Vec<f64>> = (0..hurst.big_n())
        .map(|j| (0..hurst.n()).map(|k| hurst.row(k)[j]).collect())
        .collect();
    ThetaTuple::diagonal(&diags)
}

/// Checks `‖A e^{Θ_j} − e^{Θ_j} A‖ ≤ 1e-10 ‖A‖ ‖e^{Θ_j}‖` for every axis `j`;
/// by additivity of the exponent this covers every integer shift.
pub fn check_mixing_commutes(a: &MixingMatrix, theta: &ThetaTuple) -> Result<()> {
    let dim = theta.big_n();
    for axis in 0..dim {
        let e = theta.exp_at(MultiIndex::unit(dim, axis).as_slice())?;
        let e = e.as_matrix();
        let comm = a.matrix() * e - e * a.matrix();
        let scale = spectral_norm(a.matrix()) * spectral_norm(e);
        let defect = spectral_norm(&comm) / scale.max(f64::MIN_POSITIVE);
        if defect > MIXING_COMMUTE_TOL {
            return Err(Error::MixingNotCommuting { axis, defect });
        }
    }
    Ok(())
}

/// One FOU replication with the field that drove it (`G` for the first kind,
/// `Y` for the second).
#[derive(Debug, Clone, PartialEq)]
pub struct FouSample {
    pub x: FieldWindow,
    pub noise: FieldWindow,
}

#[derive(Debug, Clone)]
pub struct FouBatch {
    pub x: SampleBatch,
    pub noise: SampleBatch,
    pub theta: ThetaTuple,
    pub depth: Option<Vec<usize>>,
    pub tail_bound: Option<f64>,
}

/// Validated configuration with sampler and exponential tables built once.
#[derive(Debug, Clone)]
pub struct FouPlan {
    kind: FouKind,
    theta: ThetaTuple,
    window: Window,
    seed: u64,
    replications: usize,
    sampler: SheetSampler,
    depth: Option<Vec<usize>>,
    /// `exp(+t ∗ Θ)` over the accumulation window (first kind only).
    forward: Option<ExpTable>,
    /// `exp(−t ∗ Θ)` over the output window.
    inverse: ExpTable,
}

impl FouPlan {
    pub fn new(cfg: &FouConfig) -> Result<Self> {
        let n = cfg.hurst.n();
        if cfg.a.n() != n {
            return Err(Error::DimensionMismatch {
                what: "mixing matrix size vs Hurst components (n)",
                expected: n,
                actual: cfg.a.n(),
            });
        }
        if cfg.window.dim() != cfg.hurst.big_n() {
            return Err(Error::DimensionMismatch {
                what: "window dimension vs Hurst columns (N)",
                expected: cfg.hurst.big_n(),
                actual: cfg.window.dim(),
            });
        }
        match cfg.kind {
            FouKind::First => {
                let theta = cfg.theta.clone().ok_or_else(|| {
                    Error::InvalidParameter("first-kind FOU needs a theta tuple".into())
                })?;
                theta.require_commuting()?;
                if theta.n() != n || theta.big_n() != cfg.window.dim() {
                    return Err(Error::InvalidParameter(format!(
                        "theta has shape (n, N) = ({}, {}), Hurst array implies ({}, {})",
                        theta.n(),
                        theta.big_n(),
                        n,
                        cfg.window.dim()
                    )));
                }
                let depth = cfg.policy.resolve(&theta)?;
                let work = Window::new(
                    MultiIndex(
                        cfg.window
                            .lo
                            .0
                            .iter()
                            .zip(&depth)
                            .map(|(l, d)| l - *d as i64)
                            .collect(),
                    ),
                    cfg.window.hi.clone(),
                )?;
                let noise_window = Window::new(work.lo.offset(-1), work.hi.clone())?;
                let sampler = SheetSampler::new(
                    cfg.a.clone(),
                    cfg.hurst.clone(),
                    noise_window,
                    Clock::Integer,
                )?;
                Ok(FouPlan {
                    kind: cfg.kind,
                    forward: Some(ExpTable::new(&work, &theta, 1)?),
                    inverse: ExpTable::new(&cfg.window, &theta, -1)?,
                    theta,
                    window: cfg.window.clone(),
                    seed: cfg.seed,
                    replications: cfg.replications,
                    sampler,
                    depth: Some(depth),
                })
            }
            FouKind::Second => {
                if cfg.theta.is_some() {
                    return Err(Error::InvalidParameter(
                        "second-kind FOU derives theta as diag(H_j); an explicit theta is not accepted"
                            .into(),
                    ));
                }
                let theta = second_kind_theta(&cfg.hurst)?;
                check_mixing_commutes(&cfg.a, &theta)?;
                let sampler = SheetSampler::new(
                    cfg.a.clone(),
                    cfg.hurst.clone(),
                    cfg.window.clone(),
                    Clock::Exponential,
                )?;
                Ok(FouPlan {
                    kind: cfg.kind,
                    forward: None,
                    inverse: ExpTable::new(&cfg.window, &theta, -1)?,
                    theta,
                    window: cfg.window.clone(),
                    seed: cfg.seed,
                    replications: cfg.replications,
                    sampler,
                    depth: None,
                })
            }
        }
    }

    pub fn theta(&self) -> &ThetaTuple {
        &self.theta
    }

    pub fn depth(&self) -> Option<&[usize]> {
        self.depth.as_deref()
    }

    pub fn tail_bound(&self) -> Option<f64> {
        self.depth.as_ref().map(|d| tail_bound(&self.theta, d))
    }

    /// Window on which the driving noise is sampled.
    pub fn noise_window(&self) -> &Window {
        self.sampler.window()
    }

    pub fn sample(&self, rep: u64) -> Result<FouSample> {
        let noise = self.sampler.sample(self.seed, rep)?;
        let x = match self.kind {
            FouKind::First => {
                let forward = self.forward.as_ref().expect("first kind has a forward table");
                let depth = self.depth.as_ref().expect("first kind has a depth");
                let y = m_inverse_with(&noise, &self.theta, depth, &self.window, forward)?;
                lamperti_inv_with(&y.field, &self.inverse)?
            }
            FouKind::Second => lamperti_inv_with(&noise, &self.inverse)?,
        };
        Ok(FouSample { x, noise })
    }

    pub fn batch(&self) -> Result<FouBatch> {
        use rayon::prelude::*;
        let samples = (0..self.replications as u64)
            .into_par_iter()
            .map(|r| self.sample(r))
            .collect::<Result<Vec<_>>>()?;
        let (xs, gs): (Vec<_>, Vec<_>) = samples.into_iter().map(|s| (s.x, s.noise)).unzip();
        Ok(FouBatch {
            x: SampleBatch::new(self.seed, xs)?,
            noise: SampleBatch::new(self.seed, gs)?,
            theta: self.theta.clone(),
            depth: self.depth.clone(),
            tail_bound: self.tail_bound(),
        })
    }
}

/// Replication `rep` of a first-kind field.
pub fn fou_first_kind(cfg: &FouConfig, rep: u64) -> Result<FouSample> {
    if cfg.kind != FouKind::First {
        return Err(Error::InvalidParameter("config is not first kind".into()));
    }
    FouPlan::new(cfg)?.sample(rep)
}

/// Replication `rep` of a second-kind field.
pub fn fou_second_kind(cfg: &FouConfig, rep: u64) -> Result<FouSample> {
    if cfg.kind != FouKind::Second {
        return Err(Error::InvalidParameter("config is not second kind".into()));
    }
    FouPlan::new(cfg)?.sample(rep)
}

pub fn fou_batch(cfg: &FouConfig) -> Result<FouBatch> {
    FouPlan::new(cfg)?.batch()
}
