//! The correspondence maps between stationary, Θ-self-similar and
//! stationary-increment fields.
//!
//! * [`lamperti`] / [`lamperti_inv`]: site-wise multiplication by `exp(±t ∗ Θ)`,
//!   switching between the integer and the exponential clock.
//! * [`m_forward`]: `G_t = (−1)^{|−u|} Σ_{j_u=1}^{t_u} Σ_{j_{−u}=t_{−u}+1}^{0}
//!   exp(−j ∗ Θ) Δ_j Y` with `u = {l : t_l ≥ 0}`. It vanishes on every hyperplane
//!   `t_l = 0` and needs a window containing the origin.
//! * [`m_inverse_truncated`]: `Y_{e^t} = Σ_{j=a}^{t} exp(j ∗ Θ) Δ_j G` with the
//!   infinite lower limit replaced by `a = lo − depth`.
//!
//! Both accumulation maps are evaluated as axis-by-axis cumulative sums of the
//! weighted unit increments, which is `O(volume · N)` instead of the quadratic
//! direct sum. The multiple sums are over boxes, so the axis order does not
//! matter; tests compare against the literal formulas.

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::algebra::{mat_exp_sym, star_index, ThetaTuple};
use crate::error::{Error, Result};
use crate::fields::{Clock, FieldWindow, MultiIndex, Window};

pub const DEFAULT_EPS: f64 = 1e-8;
/// Predicted depths above this trigger a warning.
pub const DEPTH_WARN: usize = 10_000;

/// How far the `j = −∞` lower limit of the inverse accumulation is truncated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    /// Target tail tolerance.
    pub eps: f64,
    /// Explicit per-axis depth; derived from `eps` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<Vec<usize>>,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy {
            eps: DEFAULT_EPS,
            depth: None,
        }
    }
}

impl TruncationPolicy {
    pub fn from_eps(eps: f64) -> Self {
        TruncationPolicy { eps, depth: None }
    }

    pub fn with_depth(depth: Vec<usize>) -> Self {
        TruncationPolicy {
            eps: DEFAULT_EPS,
            depth: Some(depth),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "truncation eps must be positive, got {}",
                self.eps
            )));
        }
        if let Some(d) = &self.depth {
            if d.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "truncation depth length (N)",
                    expected: dim,
                    actual: d.len(),
                });
            }
        }
        Ok(())
    }

    /// Explicit depth, or the smallest depth meeting `eps`.
    pub fn resolve(&self, theta: &ThetaTuple) -> Result<Vec<usize>> {
        self.validate(theta.big_n())?;
        Ok(match &self.depth {
            Some(d) => d.clone(),
            None => depth_for_eps(theta, self.eps),
        })
    }
}

fn depth_for_eps(theta: &ThetaTuple, eps: f64) -> Vec<usize> {
    let dim = theta.big_n();
    let lambda = theta.min_eigenvalue();
    let corners = (1u64 << dim) as f64;
    // smallest M with 2^N e^{-λ M} ≤ eps; the slack absorbs rounding in ln()
    let raw = (corners / eps).ln() / lambda;
    let m = if raw <= 0.0 {
        0
    } else {
        (raw - 1e-9).ceil().max(0.0) as usize
    };
    if m > DEPTH_WARN {
        warn!(
            "truncation depth {m} per axis exceeds {DEPTH_WARN}: smallest eigenvalue {lambda:.3e} is near singular"
        );
    }
    vec![m; dim]
}

/// Smallest per-axis `M` with `2^N · exp(−λ_min M) ≤ eps`.
pub fn truncation_depth(theta: &ThetaTuple, eps: f64, window: &Window) -> Result<Vec<usize>> {
    if window.dim() != theta.big_n() {
        return Err(Error::DimensionMismatch {
            what: "window dimension (N)",
            expected: theta.big_n(),
            actual: window.dim(),
        });
    }
    TruncationPolicy::from_eps(eps).resolve(theta)
}

/// A-priori operator-norm factor of the discarded boundary terms,
/// `2^N · exp(−λ_min · min_l M_l)`.
pub fn tail_bound(theta: &ThetaTuple, depth: &[usize]) -> f64 {
    let min_depth = depth.iter().copied().min().unwrap_or(0) as f64;
    (1u64 << theta.big_n()) as f64 * (-theta.min_eigenvalue() * min_depth).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformKind {
    #[serde(rename = "L")]
    Lamperti,
    #[serde(rename = "Linv")]
    LampertiInv,
    #[serde(rename = "M")]
    MForward,
    #[serde(rename = "Minv")]
    MInverse,
}

impl TransformKind {
    pub fn tag(self) -> &'static str {
        match self {
            TransformKind::Lamperti => "L",
            TransformKind::LampertiInv => "Linv",
            TransformKind::MForward => "M",
            TransformKind::MInverse => "Minv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "L" => Ok(TransformKind::Lamperti),
            "Linv" => Ok(TransformKind::LampertiInv),
            "M" => Ok(TransformKind::MForward),
            "Minv" => Ok(TransformKind::MInverse),
            other => Err(Error::InvalidParameter(format!(
                "unknown transform {other:?}; expected one of L, Linv, M, Minv"
            ))),
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Metadata entry appended to a field sidecar for every applied transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub transform: TransformKind,
    pub theta_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_bound: Option<f64>,
    /// Sites consumed on the low side of each axis.
    #[serde(default)]
    pub margin: Vec<usize>,
}

/// Output of the truncated inverse accumulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncated {
    pub field: FieldWindow,
    pub depth: Vec<usize>,
    pub tail_bound: f64,
}

/// `exp(sign · t ∗ Θ)` for every site of a window, stored row-major.
#[derive(Debug, Clone)]
pub struct ExpTable {
    window: Window,
    n: usize,
    mats: Vec<f64>,
}

impl ExpTable {
    pub fn new(window: &Window, theta: &ThetaTuple, sign: i64) -> Result<Self> {
        let n = theta.n();
        let mut mats = Vec::with_capacity(window.volume() * n * n);
        for t in window.sites() {
            let scaled: Vec<i64> = t.0.iter().map(|c| c * sign).collect();
            let e = mat_exp_sym(&star_index(&scaled, theta)?);
            for i in 0..n {
                for j in 0..n {
                    mats.push(e[(i, j)]);
                }
            }
        }
        Ok(ExpTable {
            window: window.clone(),
            n,
            mats,
        })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    #[inline]
    fn mat(&self, p: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.mats[p * nn..(p + 1) * nn]
    }

    /// `out = E_t · x` for the site `t` of the table's window at linear index `p`.
    #[inline]
    fn apply(&self, p: usize, x: &[f64], out: &mut [f64]) {
        let m = self.mat(p);
        for (i, o) in out.iter_mut().enumerate() {
            *o = m[i * self.n..(i + 1) * self.n]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum();
        }
    }
}

fn check_theta(field: &FieldWindow, theta: &ThetaTuple) -> Result<()> {
    theta.require_commuting()?;
    if theta.n() != field.n() {
        return Err(Error::DimensionMismatch {
            what: "state dimension n (theta vs field)",
            expected: theta.n(),
            actual: field.n(),
        });
    }
    if theta.big_n() != field.dim() {
        return Err(Error::DimensionMismatch {
            what: "parameter dimension N (theta vs field)",
            expected: theta.big_n(),
            actual: field.dim(),
        });
    }
    Ok(())
}

fn multiply_sites(field: &FieldWindow, table: &ExpTable, clock: Clock) -> Result<FieldWindow> {
    if table.window() != field.window() || table.n != field.n() {
        return Err(Error::Misaligned(format!(
            "exponential table on {} vs field on {}",
            table.window(),
            field.window()
        )));
    }
    let n = field.n();
    let mut out = FieldWindow::zeros(field.window().clone(), n, clock);
    let values = out.values_mut();
    for p in 0..field.window().volume() {
        table.apply(p, field.at(p), &mut values[p * n..(p + 1) * n]);
    }
    Ok(out)
}

/// `(L_Θ X)_{e^t} = exp(t ∗ Θ) X_t`.
pub fn lamperti(x: &FieldWindow, theta: &ThetaTuple) -> Result<FieldWindow> {
    x.require_clock(Clock::Integer, "lamperti")?;
    check_theta(x, theta)?;
    let table = ExpTable::new(x.window(), theta, 1)?;
    lamperti_with(x, &table)
}

/// [`lamperti`] with a precomputed `exp(+t ∗ Θ)` table.
pub fn lamperti_with(x: &FieldWindow, table: &ExpTable) -> Result<FieldWindow> {
    x.require_clock(Clock::Integer, "lamperti")?;
    multiply_sites(x, table, Clock::Exponential)
}

/// `(L_Θ⁻¹ Y)_t = exp(−t ∗ Θ) Y_{e^t}`.
pub fn lamperti_inv(y: &FieldWindow, theta: &ThetaTuple) -> Result<FieldWindow> {
    y.require_clock(Clock::Exponential, "lamperti_inv")?;
    check_theta(y, theta)?;
    let table = ExpTable::new(y.window(), theta, -1)?;
    lamperti_inv_with(y, &table)
}

/// [`lamperti_inv`] with a precomputed `exp(−t ∗ Θ)` table.
pub fn lamperti_inv_with(y: &FieldWindow, table: &ExpTable) -> Result<FieldWindow> {
    y.require_clock(Clock::Exponential, "lamperti_inv")?;
    multiply_sites(y, table, Clock::Integer)
}

/// Weighted unit increments `E_j Δ_j F` on `[lo + 1, hi]` of `field`'s window,
/// zero on the lower faces. `table` must cover the field window.
fn weighted_increments(field: &FieldWindow, table: &ExpTable) -> Vec<f64> {
    let window = field.window();
    let n = field.n();
    let offsets = window.corner_offsets();
    let mut out = vec![0.0; window.volume() * n];
    let mut inc = vec![0.0; n];
    for (p, t) in window.sites().enumerate() {
        if t.0.iter().zip(&window.lo.0).any(|(c, l)| c == l) {
            continue;
        }
        field.unit_increment_into(p, &offsets, &mut inc);
        table.apply(p, &inc, &mut out[p * n..(p + 1) * n]);
    }
    out
}

/// Visits every line of the window along `axis`, passing the linear indices of
/// its sites in increasing coordinate order.
fn for_each_line(window: &Window, axis: usize, mut f: impl FnMut(&[usize])) {
    let shape = window.shape();
    let strides = window.strides();
    let len = shape[axis];
    let lines = window.volume() / len;
    let mut idx = vec![0usize; len];
    for line in 0..lines {
        // decompose `line` over all axes but `axis`
        let mut rem = line;
        let mut base = 0usize;
        for l in (0..shape.len()).rev() {
            if l == axis {
                continue;
            }
            base += (rem % shape[l]) * strides[l];
            rem /= shape[l];
        }
        for (c, slot) in idx.iter_mut().enumerate() {
            *slot = base + c * strides[axis];
        }
        f(&idx);
    }
}

/// Anchored cumulative sum along one axis: `g(0) = 0`, `g(c) = g(c−1) + f(c)` for
/// `c > 0`, `g(c) = g(c+1) − f(c+1)` for `c < 0`. Needs `lo ≤ 0 ≤ hi` on the axis.
fn anchored_cumsum(values: &mut [f64], n: usize, window: &Window, axis: usize) {
    let origin = (-window.lo.0[axis]) as usize;
    for_each_line(window, axis, |idx| {
        let f: Vec<f64> = idx
            .iter()
            .flat_map(|&p| values[p * n..(p + 1) * n].to_vec())
            .collect();
        let len = idx.len();
        let mut g = vec![0.0; len * n];
        for c in origin + 1..len {
            for k in 0..n {
                g[c * n + k] = g[(c - 1) * n + k] + f[c * n + k];
            }
        }
        for c in (0..origin).rev() {
            for k in 0..n {
                g[c * n + k] = g[(c + 1) * n + k] - f[(c + 1) * n + k];
            }
        }
        for (c, &p) in idx.iter().enumerate() {
            values[p * n..(p + 1) * n].copy_from_slice(&g[c * n..(c + 1) * n]);
        }
    });
}

/// Plain cumulative sum along one axis from the low end of the window.
fn cumsum(values: &mut [f64], n: usize, window: &Window, axis: usize) {
    for_each_line(window, axis, |idx| {
        for w in idx.windows(2) {
            let (prev, cur) = (w[0], w[1]);
            for k in 0..n {
                values[cur * n + k] += values[prev * n + k];
            }
        }
    });
}

/// `(M_Θ Y)_t`, computed on the whole window of `Y`, which must contain the origin.
pub fn m_forward(y: &FieldWindow, theta: &ThetaTuple) -> Result<FieldWindow> {
    y.require_clock(Clock::Exponential, "m_forward")?;
    check_theta(y, theta)?;
    let table = ExpTable::new(y.window(), theta, -1)?;
    m_forward_with(y, &table)
}

/// [`m_forward`] with a precomputed `exp(−t ∗ Θ)` table over `y`'s window.
pub fn m_forward_with(y: &FieldWindow, table: &ExpTable) -> Result<FieldWindow> {
    y.require_clock(Clock::Exponential, "m_forward")?;
    let window = y.window().clone();
    if !window.contains_origin() {
        let lo = MultiIndex(window.lo.0.iter().map(|&l| l.min(0)).collect());
        let hi = MultiIndex(window.hi.0.iter().map(|&h| h.max(0)).collect());
        return Err(Error::InsufficientWindow {
            op: "m_forward (window must contain the origin)",
            required: Window { lo, hi },
            available: window,
        });
    }
    if table.window() != &window {
        return Err(Error::Misaligned(format!(
            "exponential table on {} vs field on {}",
            table.window(),
            window
        )));
    }
    let n = y.n();
    let mut values = weighted_increments(y, table);
    for axis in 0..window.dim() {
        anchored_cumsum(&mut values, n, &window, axis);
    }
    FieldWindow::new(window, n, Clock::Integer, values)
}

/// Largest output window of the truncated inverse for an input window and depth.
pub fn m_inverse_output_window(input: &Window, depth: &[usize]) -> Result<Window> {
    let margin: Vec<usize> = depth.iter().map(|d| d + 1).collect();
    input.shrink_lower(&margin).map_err(|_| Error::InsufficientWindow {
        op: "m_inverse_truncated",
        required: Window {
            lo: MultiIndex(
                input
                    .hi
                    .0
                    .iter()
                    .zip(&margin)
                    .map(|(h, m)| h - *m as i64)
                    .collect(),
            ),
            hi: input.hi.clone(),
        },
        available: input.clone(),
    })
}

/// `(M_Θ⁻¹ G)_{e^t}` truncated at `j ≥ out.lo − depth`, on the requested output
/// window. `G` must cover `[out.lo − depth − 1, out.hi]`.
pub fn m_inverse_truncated(
    g: &FieldWindow,
    theta: &ThetaTuple,
    policy: &TruncationPolicy,
    out: &Window,
) -> Result<Truncated> {
    g.require_clock(Clock::Integer, "m_inverse_truncated")?;
    check_theta(g, theta)?;
    let depth = policy.resolve(theta)?;
    let work = Window::new(
        MultiIndex(
            out.lo
                .0
                .iter()
                .zip(&depth)
                .map(|(l, d)| l - *d as i64)
                .collect(),
        ),
        out.hi.clone(),
    )?;
    let table = ExpTable::new(&work, theta, 1)?;
    m_inverse_with(g, theta, &depth, out, &table)
}

/// Truncated inverse on the largest window computable from `g`.
pub fn m_inverse_largest(
    g: &FieldWindow,
    theta: &ThetaTuple,
    policy: &TruncationPolicy,
) -> Result<Truncated> {
    let depth = policy.resolve(theta)?;
    let out = m_inverse_output_window(g.window(), &depth)?;
    m_inverse_truncated(g, theta, &TruncationPolicy::with_depth(depth), &out)
}

/// [`m_inverse_truncated`] with a precomputed `exp(+t ∗ Θ)` table over
/// `[out.lo − depth, out.hi]`.
pub(crate) fn m_inverse_with(
    g: &FieldWindow,
    theta: &ThetaTuple,
    depth: &[usize],
    out: &Window,
    table: &ExpTable,
) -> Result<Truncated> {
    let n = g.n();
    let work = table.window().clone();
    let required = Window::new(work.lo.offset(-1), out.hi.clone())?;
    if !g.window().contains_window(&required) {
        return Err(Error::InsufficientWindow {
            op: "m_inverse_truncated",
            required,
            available: g.window().clone(),
        });
    }
    // G restricted to [a − 1, hi]; weighted increments live on [a, hi]
    let g_work = g.restrict(&required)?;
    let incs = weighted_increments(&g_work, &ExpTable::shifted(table, &required));
    let mut values = Vec::with_capacity(work.volume() * n);
    for t in work.sites() {
        let p = required.linear_index(&t).expect("work window inside required");
        values.extend_from_slice(&incs[p * n..(p + 1) * n]);
    }
    for axis in 0..work.dim() {
        cumsum(&mut values, n, &work, axis);
    }
    let y = FieldWindow::new(work, n, Clock::Exponential, values)?.restrict(out)?;
    Ok(Truncated {
        field: y,
        depth: depth.to_vec(),
        tail_bound: tail_bound(theta, depth),
    })
}

impl ExpTable {
    /// Re-indexes `table` onto a larger window whose extra sites carry zero
    /// matrices; only sites of the original window are ever applied.
    fn shifted(table: &ExpTable, window: &Window) -> ExpTable {
        let nn = table.n * table.n;
        let mut mats = vec![0.0; window.volume() * nn];
        for (p, t) in table.window.sites().enumerate() {
            let q = window.linear_index(&t).expect("table window inside target");
            mats[q * nn..(q + 1) * nn].copy_from_slice(table.mat(p));
        }
        ExpTable {
            window: window.clone(),
            n: table.n,
            mats,
        }
    }
}

/// Applies a chain of transforms left to right, returning the result and one
/// metadata record per step.
pub fn apply_chain(
    field: &FieldWindow,
    chain: &[TransformKind],
    theta: &ThetaTuple,
    policy: &TruncationPolicy,
    theta_ref: Option<&str>,
) -> Result<(FieldWindow, Vec<TransformRecord>)> {
    let mut current = field.clone();
    let mut records = Vec::with_capacity(chain.len());
    for &kind in chain {
        let dim = current.dim();
        let before = current.window().clone();
        let (next, depth, bound) = match kind {
            TransformKind::Lamperti => (lamperti(&current, theta)?, None, None),
            TransformKind::LampertiInv => (lamperti_inv(&current, theta)?, None, None),
            TransformKind::MForward => (m_forward(&current, theta)?, None, None),
            TransformKind::MInverse => {
                let tr = m_inverse_largest(&current, theta, policy)?;
                (tr.field, Some(tr.depth), Some(tr.tail_bound))
            }
        };
        let margin = (0..dim)
            .map(|l| (next.window().lo.0[l] - before.lo.0[l]) as usize)
            .collect();
        records.push(TransformRecord {
            transform: kind,
            theta_ref: theta_ref.map(str::to_string),
            depth,
            tail_bound: bound,
            margin,
        });
        current = next;
    }
    Ok((current, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, DMatrix};

    fn mi(v: &[i64]) -> MultiIndex {
        MultiIndex(v.to_vec())
    }

    fn pseudo(window: Window, n: usize, clock: Clock, seed: u64) -> FieldWindow {
        let mut state = seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(99);
        FieldWindow::from_fn(window, n, clock, |_| {
            (0..n)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
                })
                .collect()
        })
        .unwrap()
    }

    fn theta2() -> ThetaTuple {
        let (c, s) = (0.6f64, 0.8f64);
        let q = dmatrix![c, -s; s, c];
        let build = |a: f64, b: f64| &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![a, b])) * q.transpose();
        ThetaTuple::new(vec![build(0.4, 0.9), build(0.7, 0.3)]).unwrap()
    }

    /// Literal evaluation of the anchored box sum defining `M_Θ`.
    fn m_forward_direct(y: &FieldWindow, theta: &ThetaTuple, t: &MultiIndex) -> Vec<f64> {
        let n = y.n();
        let dim = t.dim();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut negatives = 0;
        for &c in &t.0 {
            if c >= 0 {
                lo.push(1);
                hi.push(c);
            } else {
                lo.push(c + 1);
                hi.push(0);
                negatives += 1;
            }
        }
        let mut out = vec![0.0; n];
        if (0..dim).any(|l| lo[l] > hi[l]) {
            return out;
        }
        let sign = if negatives % 2 == 0 { 1.0 } else { -1.0 };
        let bx = Window::new(MultiIndex(lo), MultiIndex(hi)).unwrap();
        for j in bx.sites() {
            let neg: Vec<i64> = j.0.iter().map(|c| -c).collect();
            let e = theta.exp_at(&neg).unwrap();
            let d = nalgebra::DVector::from_vec(y.unit_increment(&j).unwrap());
            let v = e.as_matrix() * d;
            for k in 0..n {
                out[k] += sign * v[k];
            }
        }
        out
    }

    #[test]
    fn lamperti_at_origin_is_identity() {
        let theta = theta2();
        let x = pseudo(Window::cube(2, -1, 1).unwrap(), 2, Clock::Integer, 1);
        let y = lamperti(&x, &theta).unwrap();
        assert_eq!(y.clock(), Clock::Exponential);
        assert_eq!(y.get(&mi(&[0, 0])).unwrap(), x.get(&mi(&[0, 0])).unwrap());
        let back = lamperti_inv(&y, &theta).unwrap();
        assert_eq!(back.get(&mi(&[0, 0])).unwrap(), x.get(&mi(&[0, 0])).unwrap());
    }

    #[test]
    fn lamperti_scalar() {
        let h = 0.7;
        let theta = ThetaTuple::scalar(&[h]).unwrap();
        let x = pseudo(Window::cube(1, -3, 3).unwrap(), 1, Clock::Integer, 2);
        let y = lamperti(&x, &theta).unwrap();
        for t in -3..=3 {
            let expect = (h * t as f64).exp() * x.get(&mi(&[t])).unwrap()[0];
            let got = y.get(&mi(&[t])).unwrap()[0];
            assert!((got - expect).abs() <= 1e-14 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn lamperti_inv_of_deterministic_exponential_is_one() {
        let h = 0.45;
        let theta = ThetaTuple::scalar(&[h]).unwrap();
        let y = FieldWindow::from_fn(Window::cube(1, -4, 4).unwrap(), 1, Clock::Exponential, |t| {
            vec![(h * t.0[0] as f64).exp()]
        })
        .unwrap();
        let x = lamperti_inv(&y, &theta).unwrap();
        for v in x.values() {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn lamperti_round_trips() {
        let theta = theta2();
        let x = pseudo(Window::cube(2, -3, 3).unwrap(), 2, Clock::Integer, 3);
        let back = lamperti_inv(&lamperti(&x, &theta).unwrap(), &theta).unwrap();
        assert!(back.relative_diff(&x).unwrap() < 1e-10);
        let y = x.clone().with_clock(Clock::Exponential);
        let back = lamperti(&lamperti_inv(&y, &theta).unwrap(), &theta).unwrap();
        assert!(back.relative_diff(&y).unwrap() < 1e-10);
    }

    #[test]
    fn transforms_reject_bad_inputs() {
        let bad = ThetaTuple::new(vec![
            dmatrix![1.0, 0.0; 0.0, 2.0],
            dmatrix![2.0, 1.0; 1.0, 2.0],
        ])
        .unwrap();
        let x = pseudo(Window::cube(2, -1, 1).unwrap(), 2, Clock::Integer, 4);
        assert!(matches!(lamperti(&x, &bad), Err(Error::NonCommuting { .. })));
        let x3 = pseudo(Window::cube(2, -1, 1).unwrap(), 3, Clock::Integer, 4);
        assert!(matches!(
            lamperti(&x3, &theta2()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            lamperti_inv(&x, &theta2()),
            Err(Error::ClockMismatch { .. })
        ));
        let y = pseudo(Window::cube(2, 1, 3).unwrap(), 2, Clock::Exponential, 4);
        assert!(matches!(
            m_forward(&y, &theta2()),
            Err(Error::InsufficientWindow { .. })
        ));
    }

    #[test]
    fn m_forward_matches_direct_sum() {
        let theta = theta2();
        let y = pseudo(
            Window::new(mi(&[-3, -2]), mi(&[2, 3])).unwrap(),
            2,
            Clock::Exponential,
            5,
        );
        let g = m_forward(&y, &theta).unwrap();
        let scale = g.max_norm();
        for t in y.window().sites() {
            let direct = m_forward_direct(&y, &theta, &t);
            let got = g.get(&t).unwrap();
            for k in 0..2 {
                assert!((got[k] - direct[k]).abs() <= 1e-12 * scale, "t = {t}");
            }
            if t.0.contains(&0) {
                assert_eq!(got, &[0.0, 0.0]);
            }
        }
    }

    #[test]
    fn m_forward_scalar_hand_expansion() {
        let h = 0.3;
        let theta = ThetaTuple::scalar(&[h]).unwrap();
        let y = pseudo(Window::cube(1, 0, 2).unwrap(), 1, Clock::Exponential, 6);
        let g = m_forward(&y, &theta).unwrap();
        let v = |t: i64| y.get(&mi(&[t])).unwrap()[0];
        let expect = (-h).exp() * (v(1) - v(0)) + (-2.0 * h).exp() * (v(2) - v(1));
        assert!((g.get(&mi(&[2])).unwrap()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn m_forward_increment_identity() {
        let theta = theta2();
        let y = pseudo(Window::cube(2, -3, 3).unwrap(), 2, Clock::Exponential, 7);
        let g = m_forward(&y, &theta).unwrap();
        let inner = Window::cube(2, -2, 3).unwrap();
        let mut scale = 0.0f64;
        let mut worst = 0.0f64;
        for t in inner.sites() {
            let neg: Vec<i64> = t.0.iter().map(|c| -c).collect();
            let e = theta.exp_at(&neg).unwrap();
            let expect = e.as_matrix() * nalgebra::DVector::from_vec(y.unit_increment(&t).unwrap());
            let got = g.unit_increment(&t).unwrap();
            scale = scale.max(expect.norm());
            for k in 0..2 {
                worst = worst.max((got[k] - expect[k]).abs());
            }
        }
        assert!(worst <= 1e-12 * scale, "{worst} vs {scale}");
    }

    #[test]
    fn m_inverse_zero_and_increments() {
        let theta = theta2();
        let zero = FieldWindow::zeros(Window::cube(2, -6, 2).unwrap(), 2, Clock::Integer);
        let policy = TruncationPolicy::with_depth(vec![3, 3]);
        let y = m_inverse_largest(&zero, &theta, &policy).unwrap();
        assert!(y.field.values().iter().all(|v| *v == 0.0));
        assert_eq!(y.field.window(), &Window::cube(2, -2, 2).unwrap());

        let g = pseudo(Window::cube(2, -6, 2).unwrap(), 2, Clock::Integer, 8);
        let y = m_inverse_largest(&g, &theta, &policy).unwrap().field;
        let inner = Window::cube(2, -1, 2).unwrap();
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for t in inner.sites() {
            let e = theta.exp_at(&t.0).unwrap();
            let expect = e.as_matrix() * nalgebra::DVector::from_vec(g.unit_increment(&t).unwrap());
            let got = y.unit_increment(&t).unwrap();
            scale = scale.max(expect.norm());
            for k in 0..2 {
                worst = worst.max((got[k] - expect[k]).abs());
            }
        }
        assert!(worst <= 1e-12 * scale);
    }

    #[test]
    fn m_inverse_matches_direct_sum() {
        let theta = theta2();
        let g = pseudo(Window::cube(2, -5, 2).unwrap(), 2, Clock::Integer, 9);
        let out = Window::cube(2, -1, 2).unwrap();
        let policy = TruncationPolicy::with_depth(vec![2, 3]);
        let y = m_inverse_truncated(&g, &theta, &policy, &out).unwrap();
        let a = mi(&[-3, -4]);
        for t in out.sites() {
            let bx = Window::new(a.clone(), t.clone()).unwrap();
            let mut direct = nalgebra::DVector::zeros(2);
            for j in bx.sites() {
                direct += theta.exp_at(&j.0).unwrap().as_matrix()
                    * nalgebra::DVector::from_vec(g.unit_increment(&j).unwrap());
            }
            let got = y.field.get(&t).unwrap();
            for k in 0..2 {
                assert!((got[k] - direct[k]).abs() <= 1e-12 * direct.norm().max(1.0));
            }
        }
    }

    #[test]
    fn m_inverse_reports_required_window() {
        let theta = theta2();
        let g = pseudo(Window::cube(2, -2, 2).unwrap(), 2, Clock::Integer, 10);
        let policy = TruncationPolicy::with_depth(vec![3, 3]);
        let out = Window::cube(2, 0, 2).unwrap();
        match m_inverse_truncated(&g, &theta, &policy, &out) {
            Err(Error::InsufficientWindow { required, .. }) => {
                assert_eq!(required, Window::new(mi(&[-4, -4]), mi(&[2, 2])).unwrap())
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn summation_order_does_not_matter() {
        // axis passes in reversed order give the same accumulation
        let theta = theta2();
        let y = pseudo(Window::cube(2, -2, 2).unwrap(), 2, Clock::Exponential, 11);
        let table = ExpTable::new(y.window(), &theta, -1).unwrap();
        let base = weighted_increments(&y, &table);
        let mut fwd = base.clone();
        let mut rev = base;
        for axis in 0..2 {
            anchored_cumsum(&mut fwd, 2, y.window(), axis);
        }
        for axis in (0..2).rev() {
            anchored_cumsum(&mut rev, 2, y.window(), axis);
        }
        let scale = fwd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in fwd.iter().zip(&rev) {
            assert!((a - b).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn truncation_depth_examples() {
        let theta = ThetaTuple::new(vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 3.0]).unwrap();
        let w = Window::cube(2, 0, 3).unwrap();
        // λ_min = 1: 2^N e^{-M} ≤ 2^N e^{-10} gives M = 10
        let eps = 4.0 * (-10.0f64).exp();
        assert_eq!(truncation_depth(&theta, eps, &w).unwrap(), vec![10, 10]);
        assert_eq!(truncation_depth(&theta, 4.0, &w).unwrap(), vec![0, 0]);
        assert_eq!(truncation_depth(&theta, 10.0, &w).unwrap(), vec![0, 0]);
        // bound is met and is tight
        let d = truncation_depth(&theta, 1e-8, &w).unwrap();
        assert!(tail_bound(&theta, &d) <= 1e-8);
        assert!(tail_bound(&theta, &[d[0] - 1, d[1] - 1]) > 1e-8);
        assert!(truncation_depth(&theta, 1e-3, &Window::cube(3, 0, 1).unwrap()).is_err());
        assert!(TruncationPolicy::from_eps(0.0).resolve(&theta).is_err());
    }

    #[test]
    fn doubling_depth_scales_tail_bound() {
        let theta = theta2();
        let lambda = theta.min_eigenvalue();
        let m = 7usize;
        let ratio = tail_bound(&theta, &[2 * m, 2 * m]) / tail_bound(&theta, &[m, m]);
        assert!((ratio - (-lambda * m as f64).exp()).abs() <= 1e-12 * ratio);
    }

    #[test]
    fn chain_records_metadata() {
        let theta = theta2();
        let x = pseudo(Window::cube(2, -4, 2).unwrap(), 2, Clock::Integer, 12);
        let policy = TruncationPolicy::with_depth(vec![2, 2]);
        let (out, recs) = apply_chain(
            &x,
            &[TransformKind::Lamperti, TransformKind::MForward, TransformKind::MInverse],
            &theta,
            &policy,
            Some("theta.json"),
        )
        .unwrap();
        assert_eq!(out.window(), &Window::cube(2, -1, 2).unwrap());
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].margin, vec![3, 3]);
        assert_eq!(recs[2].depth, Some(vec![2, 2]));
        let json = serde_json::to_string(&recs[2]).unwrap();
        assert!(json.contains("\"transform\":\"Minv\""));
        assert!(json.contains("\"theta_ref\":\"theta.json\""));
    }
}
