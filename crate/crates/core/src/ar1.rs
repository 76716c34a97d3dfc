//! The generalized AR(1) equation `X_t = Θ̂ ★ X̂_t + Δ_t G`.
//!
//! The drift is the signed combination of the `2^N − 1` lattice predecessors
//! `Σ_{i ≠ 0} (−1)^{1+|i|} exp(−i ∗ Θ) X_{t−i}`, `i ∈ {0,1}^N`. Solutions are
//! never built by iterating the recursion; they come from the transform chain
//! `L⁻¹ ∘ M⁻¹`, and noise is recovered with `M ∘ L`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::ThetaTuple;
use crate::error::{Error, Result};
use crate::fields::{parity_sign, Clock, FieldWindow, MultiIndex, Window};
use crate::transforms::{
    lamperti, lamperti_inv_with, m_forward, m_inverse_truncated, ExpTable, Truncated,
    TruncationPolicy,
};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// A commuting Θ, a noise window on the integer clock, and a truncation policy.
#[derive(Debug, Clone)]
pub struct Ar1System {
    theta: ThetaTuple,
    g: FieldWindow,
    policy: TruncationPolicy,
}

impl Ar1System {
    pub fn new(theta: ThetaTuple, g: FieldWindow, policy: TruncationPolicy) -> Result<Self> {
        theta.require_commuting()?;
        g.require_clock(Clock::Integer, "ar1 noise")?;
        if theta.n() != g.n() {
            return Err(Error::DimensionMismatch {
                what: "state dimension n (theta vs noise)",
                expected: theta.n(),
                actual: g.n(),
            });
        }
        if theta.big_n() != g.dim() {
            return Err(Error::DimensionMismatch {
                what: "parameter dimension N (theta vs noise)",
                expected: theta.big_n(),
                actual: g.dim(),
            });
        }
        policy.validate(theta.big_n())?;
        Ok(Ar1System { theta, g, policy })
    }

    pub fn theta(&self) -> &ThetaTuple {
        &self.theta
    }

    pub fn noise(&self) -> &FieldWindow {
        &self.g
    }

    pub fn policy(&self) -> &TruncationPolicy {
        &self.policy
    }

    /// Largest window on which [`stationary_solution`] can be evaluated.
    pub fn max_solution_window(&self) -> Result<Window> {
        let depth = self.policy.resolve(&self.theta)?;
        crate::transforms::m_inverse_output_window(self.g.window(), &depth)
    }
}

/// Drift coefficients `(−1)^{1+|i|} exp(−i ∗ Θ)` indexed by corner mask, row-major.
/// Entry 0 (the site itself) is unused.
struct DriftStencil {
    n: usize,
    coeffs: Vec<Vec<f64>>,
}

impl DriftStencil {
    fn new(theta: &ThetaTuple) -> Result<Self> {
        theta.require_commuting()?;
        let dim = theta.big_n();
        let n = theta.n();
        let mut coeffs = vec![Vec::new()];
        for mask in 1..(1usize << dim) {
            let neg: Vec<i64> = (0..dim).map(|l| -(((mask >> l) & 1) as i64)).collect();
            let e = theta.exp_at(&neg)?;
            let sign = -parity_sign(mask);
            let mut flat = Vec::with_capacity(n * n);
            for r in 0..n {
                for c in 0..n {
                    flat.push(sign * e[(r, c)]);
                }
            }
            coeffs.push(flat);
        }
        Ok(DriftStencil { n, coeffs })
    }

    /// Drift at linear index `p` of `x`, with `offsets[mask]` the linear distance
    /// to the corner `t − mask`.
    fn apply(&self, x: &FieldWindow, p: usize, offsets: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (mask, coeff) in self.coeffs.iter().enumerate().skip(1) {
            let v = x.at(p - offsets[mask]);
            for r in 0..self.n {
                out[r] += coeff[r * self.n..(r + 1) * self.n]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
    }
}

fn check_dims(x: &FieldWindow, theta: &ThetaTuple) -> Result<()> {
    if theta.n() != x.n() {
        return Err(Error::DimensionMismatch {
            what: "state dimension n (theta vs field)",
            expected: theta.n(),
            actual: x.n(),
        });
    }
    if theta.big_n() != x.dim() {
        return Err(Error::DimensionMismatch {
            what: "parameter dimension N (theta vs field)",
            expected: theta.big_n(),
            actual: x.dim(),
        });
    }
    Ok(())
}

/// `Θ̂ ★ X̂_t`. The cube `[t − 1, t]` must lie in the window of `x`.
pub fn ar1_drift(x: &FieldWindow, t: &MultiIndex, theta: &ThetaTuple) -> Result<Vec<f64>> {
    check_dims(x, theta)?;
    let stencil = DriftStencil::new(theta)?;
    let lower = t.offset(-1);
    let window = x.window();
    if !window.contains(t) || !window.contains(&lower) {
        let cube = Window::new(lower, t.clone())?;
        return Err(Error::InsufficientWindow {
            op: "ar1_drift",
            required: cube,
            available: window.clone(),
        });
    }
    let p = window.linear_index(t).expect("checked above");
    let mut out = vec![0.0; x.n()];
    stencil.apply(x, p, &window.corner_offsets(), &mut out);
    Ok(out)
}

/// Residual `R_t = X_t − Θ̂ ★ X̂_t − Δ_t G` on the interior of the common window.
pub fn ar1_residual(x: &FieldWindow, g: &FieldWindow, theta: &ThetaTuple) -> Result<FieldWindow> {
    x.require_clock(Clock::Integer, "ar1_residual")?;
    g.require_clock(Clock::Integer, "ar1_residual")?;
    check_dims(x, theta)?;
    check_dims(g, theta)?;
    let interior = residual_window(x.window(), g.window())?;
    let stencil = DriftStencil::new(theta)?;
    let n = x.n();
    let x_offsets = x.window().corner_offsets();
    let g_offsets = g.window().corner_offsets();
    let sites: Vec<MultiIndex> = interior.sites().collect();
    let mut values = vec![0.0; sites.len() * n];
    values
        .par_chunks_mut(n)
        .zip(sites.par_iter())
        .for_each(|(out, t)| {
            let px = x.window().linear_index(t).expect("interior inside X window");
            let pg = g.window().linear_index(t).expect("interior inside G window");
            let mut drift = vec![0.0; n];
            let mut inc = vec![0.0; n];
            stencil.apply(x, px, &x_offsets, &mut drift);
            g.unit_increment_into(pg, &g_offsets, &mut inc);
            for k in 0..n {
                out[k] = x.at(px)[k] - drift[k] - inc[k];
            }
        });
    FieldWindow::new(interior, n, Clock::Integer, values)
}

/// `[max(lo) + 1, min(hi)]` over the two windows.
fn residual_window(a: &Window, b: &Window) -> Result<Window> {
    if a.dim() != b.dim() {
        return Err(Error::Misaligned(format!("{a} and {b} differ in dimension")));
    }
    let lo: Vec<i64> = a.lo.0.iter().zip(&b.lo.0).map(|(x, y)| x.max(y) + 1).collect();
    let hi: Vec<i64> = a.hi.0.iter().zip(&b.hi.0).map(|(x, y)| *x.min(y)).collect();
    Window::new(MultiIndex(lo), MultiIndex(hi)).map_err(|_| {
        Error::Misaligned(format!(
            "windows {a} and {b} share no site with a full unit cube below it"
        ))
    })
}

/// Summary of a residual field against a relative tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `max_t ‖R_t‖ / scale`.
    pub max_residual: f64,
    pub max_abs_residual: f64,
    /// `max(max_t ‖X_t‖, max_t ‖Δ_t G‖)` over the interior, or 1 when both vanish.
    pub scale: f64,
    pub sites: usize,
    pub tolerance: f64,
    pub pass: bool,
    pub offending_sites: Vec<MultiIndex>,
}

/// Residual of `(X, G)` summarized against `tolerance` (relative).
pub fn verify_ar1(
    x: &FieldWindow,
    g: &FieldWindow,
    theta: &ThetaTuple,
    tolerance: f64,
) -> Result<ResidualReport> {
    let r = ar1_residual(x, g, theta)?;
    let interior = r.window();
    let mut scale = x.restrict(interior)?.max_norm();
    for t in interior.sites() {
        let inc = g.unit_increment(&t)?;
        scale = scale.max(inc.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    if scale == 0.0 {
        scale = 1.0;
    }
    let mut max_abs = 0.0f64;
    let mut offending = Vec::new();
    for (p, t) in interior.sites().enumerate() {
        let norm = r.at(p).iter().map(|v| v * v).sum::<f64>().sqrt();
        max_abs = max_abs.max(norm);
        if !(norm <= tolerance * scale) {
            offending.push(t);
        }
    }
    Ok(ResidualReport {
        max_residual: max_abs / scale,
        max_abs_residual: max_abs,
        scale,
        sites: interior.volume(),
        tolerance,
        pass: offending.is_empty(),
        offending_sites: offending,
    })
}

/// `X = L⁻¹(M⁻¹(G))` on `out_window`, keeping the truncation metadata.
pub fn stationary_solution_truncated(sys: &Ar1System, out_window: &Window) -> Result<Truncated> {
    let y = m_inverse_truncated(&sys.g, &sys.theta, &sys.policy, out_window)?;
    let table = ExpTable::new(out_window, &sys.theta, -1)?;
    let x = lamperti_inv_with(&y.field, &table)?;
    Ok(Truncated {
        field: x,
        depth: y.depth,
        tail_bound: y.tail_bound,
    })
}

/// The stationary solution driven by `sys.noise()` on `out_window`.
pub fn stationary_solution(sys: &Ar1System, out_window: &Window) -> Result<FieldWindow> {
    Ok(stationary_solution_truncated(sys, out_window)?.field)
}

/// `G = M(L(X))`; the window of `X` must contain the origin.
pub fn noise_from_stationary(x: &FieldWindow, theta: &ThetaTuple) -> Result<FieldWindow> {
    m_forward(&lamperti(x, theta)?, theta)
}

/// Norms `max ‖exp(m Θ_j) X_t‖` over the slices `t_j = m`, for `steps` values of
/// `m` starting at the lower window edge along `axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayProfile {
    pub axis: usize,
    pub m: Vec<i64>,
    pub norms: Vec<f64>,
}

impl DecayProfile {
    /// Strictly smaller norms towards the lower edge.
    pub fn is_monotone(&self) -> bool {
        self.norms.windows(2).all(|w| w[0] < w[1])
    }
}

pub fn decay_profile(
    x: &FieldWindow,
    theta: &ThetaTuple,
    axis: usize,
    steps: usize,
) -> Result<DecayProfile> {
    check_dims(x, theta)?;
    let window = x.window();
    if axis >= window.dim() {
        return Err(Error::InvalidParameter(format!(
            "axis {axis} out of range for a {}-dimensional window",
            window.dim()
        )));
    }
    let len = window.shape()[axis];
    if steps > len {
        return Err(Error::InvalidParameter(format!(
            "decay profile needs {steps} slices along axis {axis}, window has {len}"
        )));
    }
    let lo = window.lo.0[axis];
    let theta_j = theta.mats()[axis].as_matrix();
    let mut ms = Vec::with_capacity(steps);
    let mut norms = Vec::with_capacity(steps);
    for m in lo..lo + steps as i64 {
        let e = crate::algebra::mat_exp_sym(&crate::algebra::SymMatrix::new(theta_j * m as f64)?);
        let mut worst = 0.0f64;
        for t in window.sites().filter(|t| t.0[axis] == m) {
            let v = nalgebra::DVector::from_column_slice(x.get(&t)?);
            worst = worst.max((e.as_matrix() * v).norm());
        }
        ms.push(m);
        norms.push(worst);
    }
    Ok(DecayProfile {
        axis,
        m: ms,
        norms,
    })
}
