//! Lattice fields on finite hyperrectangular windows of `Z^N` and their
//! increment calculus.
//!
//! A [`FieldWindow`] stores an `n`-vector at every site of a [`Window`], densely and
//! in row-major order (last axis fastest). Sites outside the window are never
//! read as zero: every accessor fails with [`Error::OutOfWindow`] instead.
//!
//! Corners of the unit cube `[t − 1, t]` are enumerated by bitmasks
//! `i ∈ {0,1}^N`, bit `l` selecting `t_l − 1` on axis `l`.

mod io;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_field, write_field, FieldFiles, Sidecar};

/// A point of `Z^N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<i64>);

impl MultiIndex {
    pub fn new(coords: Vec<i64>) -> Self {
        MultiIndex(coords)
    }

    pub fn zeros(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    pub fn filled(dim: usize, value: i64) -> Self {
        MultiIndex(vec![value; dim])
    }

    /// Unit vector along `axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut v = vec![0; dim];
        v[axis] = 1;
        MultiIndex(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.0
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn offset(&self, delta: i64) -> MultiIndex {
        MultiIndex(self.0.iter().map(|a| a + delta).collect())
    }

    /// Componentwise `self ≤ other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// `t − i` for the corner bitmask `i`.
    pub fn corner(&self, mask: usize) -> MultiIndex {
        MultiIndex(
            self.0
                .iter()
                .enumerate()
                .map(|(l, &c)| c - ((mask >> l) & 1) as i64)
                .collect(),
        )
    }
}

impl From<Vec<i64>> for MultiIndex {
    fn from(v: Vec<i64>) -> Self {
        MultiIndex(v)
    }
}

impl From<&[i64]> for MultiIndex {
    fn from(v: &[i64]) -> Self {
        MultiIndex(v.to_vec())
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, c) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// `(-1)^{popcount(mask)}`.
#[inline]
pub(crate) fn parity_sign(mask: usize) -> f64 {
    if mask.count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Inclusive hyperrectangle `[lo, hi]` of `Z^N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub lo: MultiIndex,
    pub hi: MultiIndex,
}

impl Window {
    pub fn new(lo: MultiIndex, hi: MultiIndex) -> Result<Self> {
        if lo.dim() != hi.dim() {
            return Err(Error::DimensionMismatch {
                what: "window bound length",
                expected: lo.dim(),
                actual: hi.dim(),
            });
        }
        if lo.dim() == 0 {
            return Err(Error::InvalidWindow("window must have N >= 1".into()));
        }
        if !lo.le(&hi) {
            return Err(Error::InvalidWindow(format!("lo {lo} is not <= hi {hi}")));
        }
        Ok(Window { lo, hi })
    }

    /// Window `[lo, hi]` with equal bounds on every axis.
    pub fn cube(dim: usize, lo: i64, hi: i64) -> Result<Self> {
        Self::new(MultiIndex::filled(dim, lo), MultiIndex::filled(dim, hi))
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.lo
            .0
            .iter()
            .zip(&self.hi.0)
            .map(|(l, h)| (h - l + 1) as usize)
            .collect()
    }

    pub fn volume(&self) -> usize {
        self.shape().iter().product()
    }

    /// Row-major strides, last axis fastest.
    pub fn strides(&self) -> Vec<usize> {
        let shape = self.shape();
        let mut strides = vec![1usize; shape.len()];
        for l in (0..shape.len().saturating_sub(1)).rev() {
            strides[l] = strides[l + 1] * shape[l + 1];
        }
        strides
    }

    pub fn contains(&self, t: &MultiIndex) -> bool {
        t.dim() == self.dim() && self.lo.le(t) && t.le(&self.hi)
    }

    pub fn contains_window(&self, other: &Window) -> bool {
        self.contains(&other.lo) && self.contains(&other.hi)
    }

    pub fn linear_index(&self, t: &MultiIndex) -> Option<usize> {
        if !self.contains(t) {
            return None;
        }
        let strides = self.strides();
        Some(
            t.0.iter()
                .zip(&self.lo.0)
                .zip(&strides)
                .map(|((c, l), s)| (c - l) as usize * s)
                .sum(),
        )
    }

    pub fn site_at(&self, mut linear: usize) -> MultiIndex {
        let shape = self.shape();
        let mut coords = vec![0i64; shape.len()];
        for l in (0..shape.len()).rev() {
            coords[l] = self.lo.0[l] + (linear % shape[l]) as i64;
            linear /= shape[l];
        }
        MultiIndex(coords)
    }

    /// Sites in lexicographic (row-major) order.
    pub fn sites(&self) -> impl Iterator<Item = MultiIndex> + '_ {
        (0..self.volume()).map(move |p| self.site_at(p))
    }

    /// Window shrunk by `lower` on the low side of every axis.
    pub fn shrink_lower(&self, lower: &[usize]) -> Result<Window> {
        let lo = MultiIndex(
            self.lo
                .0
                .iter()
                .zip(lower)
                .map(|(l, m)| l + *m as i64)
                .collect(),
        );
        Window::new(lo, self.hi.clone())
    }

    pub fn translate(&self, s: &MultiIndex) -> Window {
        Window {
            lo: self.lo.add(s),
            hi: self.hi.add(s),
        }
    }

    pub fn contains_origin(&self) -> bool {
        self.lo.0.iter().all(|&l| l <= 0) && self.hi.0.iter().all(|&h| h >= 0)
    }

    /// Linear offsets of the unit-cube corners `t − i` relative to `t`,
    /// indexed by corner bitmask.
    pub(crate) fn corner_offsets(&self) -> Vec<usize> {
        let strides = self.strides();
        (0..1usize << self.dim())
            .map(|mask| {
                strides
                    .iter()
                    .enumerate()
                    .filter(|(l, _)| (mask >> l) & 1 == 1)
                    .map(|(_, s)| s)
                    .sum()
            })
            .collect()
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{} ..= {}]", self.lo, self.hi)
    }
}

/// Whether site `t` carries `X_t` (integer clock) or `Y_{e^t}` (exponential clock).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    Integer,
    Exponential,
}

impl Clock {
    pub fn name(self) -> &'static str {
        match self {
            Clock::Integer => "integer",
            Clock::Exponential => "exponential",
        }
    }
}

impl fmt::Display for Clock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An `n`-vector field sampled on a window.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldWindow {
    window: Window,
    n: usize,
    clock: Clock,
    values: Vec<f64>,
}

impl FieldWindow {
    pub fn new(window: Window, n: usize, clock: Clock, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("state dimension n must be positive".into()));
        }
        let expected = window.volume() * n;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "stored scalars (volume * n)",
                expected,
                actual: values.len(),
            });
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                site: window.site_at(p / n),
                value: values[p],
            });
        }
        Ok(FieldWindow {
            window,
            n,
            clock,
            values,
        })
    }

    pub fn zeros(window: Window, n: usize, clock: Clock) -> Self {
        let len = window.volume() * n;
        FieldWindow {
            window,
            n,
            clock,
            values: vec![0.0; len],
        }
    }

    /// Builds a field from a per-site closure returning `n` values.
    pub fn from_fn(
        window: Window,
        n: usize,
        clock: Clock,
        mut f: impl FnMut(&MultiIndex) -> Vec<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(window.volume() * n);
        for t in window.sites() {
            let v = f(&t);
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "site vector length",
                    expected: n,
                    actual: v.len(),
                });
            }
            values.extend(v);
        }
        Self::new(window, n, clock, values)
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn require_clock(&self, expected: Clock, op: &'static str) -> Result<()> {
        if self.clock == expected {
            Ok(())
        } else {
            Err(Error::ClockMismatch {
                op,
                expected: expected.name(),
                actual: self.clock.name(),
            })
        }
    }

    pub fn get(&self, t: &MultiIndex) -> Result<&[f64]> {
        let p = self.linear(t)?;
        Ok(&self.values[p * self.n..(p + 1) * self.n])
    }

    pub fn get_mut(&mut self, t: &MultiIndex) -> Result<&mut [f64]> {
        let p = self.linear(t)?;
        let n = self.n;
        Ok(&mut self.values[p * n..(p + 1) * n])
    }

    pub fn set(&mut self, t: &MultiIndex, v: &[f64]) -> Result<()> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "site vector length",
                expected: self.n,
                actual: v.len(),
            });
        }
        self.get_mut(t)?.copy_from_slice(v);
        Ok(())
    }

    /// Values at linear site index `p`.
    #[inline]
    pub(crate) fn at(&self, p: usize) -> &[f64] {
        &self.values[p * self.n..(p + 1) * self.n]
    }

    fn linear(&self, t: &MultiIndex) -> Result<usize> {
        self.window
            .linear_index(t)
            .ok_or_else(|| Error::OutOfWindow {
                site: t.clone(),
                window: self.window.clone(),
            })
    }

    fn require_site(&self, t: &MultiIndex) -> Result<()> {
        if t.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "multi-index length (N)",
                expected: self.dim(),
                actual: t.dim(),
            });
        }
        self.linear(t).map(|_| ())
    }

    /// Copy restricted to a sub-window.
    pub fn restrict(&self, sub: &Window) -> Result<FieldWindow> {
        if !self.window.contains_window(sub) {
            return Err(Error::InsufficientWindow {
                op: "restrict",
                required: sub.clone(),
                available: self.window.clone(),
            });
        }
        let mut values = Vec::with_capacity(sub.volume() * self.n);
        for t in sub.sites() {
            values.extend_from_slice(self.get(&t)?);
        }
        Ok(FieldWindow {
            window: sub.clone(),
            n: self.n,
            clock: self.clock,
            values,
        })
    }

    /// Largest site norm, `max_t ‖X_t‖`.
    pub fn max_norm(&self) -> f64 {
        self.values
            .chunks(self.n)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// `max_t ‖X_t − Z_t‖` over a common window.
    pub fn max_abs_diff(&self, other: &FieldWindow) -> Result<f64> {
        if self.window != other.window || self.n != other.n {
            return Err(Error::Misaligned(format!(
                "{} (n={}) vs {} (n={})",
                self.window, self.n, other.window, other.n
            )));
        }
        Ok(self
            .values
            .chunks(self.n)
            .zip(other.values.chunks(self.n))
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max))
    }

    /// `max_abs_diff / max(max_norm(self), max_norm(other))`; zero for two zero fields.
    pub fn relative_diff(&self, other: &FieldWindow) -> Result<f64> {
        let diff = self.max_abs_diff(other)?;
        let scale = self.max_norm().max(other.max_norm());
        Ok(if scale == 0.0 { diff } else { diff / scale })
    }

    fn require_cube(&self, t: &MultiIndex) -> Result<()> {
        self.require_site(t)?;
        self.require_site(&t.offset(-1))
    }

    /// `Δ_t X = Σ_{i∈{0,1}^N} (−1)^{|i|} X_{t−i}`.
    pub fn unit_increment(&self, t: &MultiIndex) -> Result<Vec<f64>> {
        self.require_cube(t)?;
        let p = self.linear(t)?;
        let offsets = self.window.corner_offsets();
        let mut out = vec![0.0; self.n];
        self.unit_increment_into(p, &offsets, &mut out);
        Ok(out)
    }

    /// Unit increment at linear index `p`, with precomputed corner offsets. The
    /// caller guarantees the cube lies in the window.
    #[inline]
    pub(crate) fn unit_increment_into(&self, p: usize, offsets: &[usize], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (mask, off) in offsets.iter().enumerate() {
            let sign = parity_sign(mask);
            for (o, v) in out.iter_mut().zip(self.at(p - off)) {
                *o += sign * v;
            }
        }
    }

    /// `Δ_{s,t} X = Σ_i (−1)^{|i|} X_{t − i(t−s)}`; `s ≤ t` is not required.
    ///
    /// Degenerate rectangles (`s_l = t_l` for some `l`) return exact zeros. Swapped
    /// coordinates are normalized first, so `Δ_{s,t} = (−1)^m Δ_{s̃,t̃}` holds
    /// bit-for-bit.
    pub fn rect_increment(&self, s: &MultiIndex, t: &MultiIndex) -> Result<Vec<f64>> {
        self.require_site(s)?;
        self.require_site(t)?;
        if s.0.iter().zip(&t.0).any(|(a, b)| a == b) {
            return Ok(vec![0.0; self.n]);
        }
        let mut lo = s.clone();
        let mut hi = t.clone();
        let mut swaps = 0usize;
        for l in 0..s.dim() {
            if lo.0[l] > hi.0[l] {
                std::mem::swap(&mut lo.0[l], &mut hi.0[l]);
                swaps += 1;
            }
        }
        let mut out = vec![0.0; self.n];
        for mask in 0..1usize << self.dim() {
            let corner = MultiIndex(
                (0..self.dim())
                    .map(|l| if (mask >> l) & 1 == 1 { lo.0[l] } else { hi.0[l] })
                    .collect(),
            );
            let sign = parity_sign(mask);
            for (o, v) in out.iter_mut().zip(self.get(&corner)?) {
                *o += sign * v;
            }
        }
        if swaps % 2 == 1 {
            out.iter_mut().for_each(|o| *o = -*o);
        }
        Ok(out)
    }

    /// `Σ_{j=s+1}^{t} Δ_j X` for `s ≤ t`; equals [`Self::rect_increment`].
    pub fn rect_from_units(&self, s: &MultiIndex, t: &MultiIndex) -> Result<Vec<f64>> {
        self.require_site(s)?;
        self.require_site(t)?;
        if !s.le(t) {
            return Err(Error::InvalidParameter(format!(
                "rect_from_units needs s <= t componentwise, got s = {s}, t = {t}"
            )));
        }
        let mut out = vec![0.0; self.n];
        if s.0.iter().zip(&t.0).any(|(a, b)| a == b) {
            return Ok(out);
        }
        let inner = Window::new(s.offset(1), t.clone())?;
        let offsets = self.window.corner_offsets();
        let mut inc = vec![0.0; self.n];
        for j in inner.sites() {
            let p = self.linear(&j)?;
            self.unit_increment_into(p, &offsets, &mut inc);
            out.iter_mut().zip(&inc).for_each(|(o, v)| *o += v);
        }
        Ok(out)
    }

    /// Previous value `X_t⁻ = X_t − Δ_t X = Σ_{i≠0} (−1)^{1+|i|} X_{t−i}`.
    pub fn previous_value(&self, t: &MultiIndex) -> Result<Vec<f64>> {
        self.require_cube(t)?;
        let mut out = vec![0.0; self.n];
        for mask in 1..1usize << self.dim() {
            let sign = -parity_sign(mask);
            for (o, v) in out.iter_mut().zip(self.get(&t.corner(mask))?) {
                *o += sign * v;
            }
        }
        Ok(out)
    }

    /// Field of unit-cube increments on `[lo + 1, hi]`, same clock.
    pub fn unit_increment_field(&self) -> Result<FieldWindow> {
        let inner = self.window.shrink_lower(&vec![1; self.dim()]).map_err(|_| {
            Error::InvalidWindow(format!(
                "window {} is too small for unit-cube increments",
                self.window
            ))
        })?;
        let offsets = self.window.corner_offsets();
        let mut values = Vec::with_capacity(inner.volume() * self.n);
        let mut inc = vec![0.0; self.n];
        for t in inner.sites() {
            let p = self.linear(&t)?;
            self.unit_increment_into(p, &offsets, &mut inc);
            values.extend_from_slice(&inc);
        }
        FieldWindow::new(inner, self.n, self.clock, values)
    }
}
