//! Scalar abstraction shared by every numeric module.
//!
//! All math in the crate is written against [`Real`] so the same code runs in
//! `f32` and `f64`. The crate root re-exports `f64` aliases, which is what the
//! CLI and the acceptance suite use.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Size of one stored value, used for cache memory accounting.
    const BYTES: usize;

    /// Converts an `f64` constant into this scalar.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("finite scalar converts to f64")
    }

    fn write_le(self, out: &mut Vec<u8>);
}

impl Real for f32 {
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Real for f64 {
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

/// Guard used inside `log(x + EPS)` for attention entropies.
pub const LOG_EPS: f64 = 1e-10;

/// Guard used in min-max normalization denominators.
pub const MINMAX_EPS: f64 = 1e-12;

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero vectors compare as 0.
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> T {
    let na = norm2(a);
    let nb = norm2(b);
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    let c = dot(a, b) / (na * nb);
    c.max(-T::one()).min(T::one())
}

/// Min-max normalization with an epsilon-guarded denominator. Returns the
/// scores and whether the input was degenerate (max == min).
pub fn min_max<T: Real>(raw: &[T]) -> (Vec<T>, bool) {
    if raw.is_empty() {
        return (Vec::new(), true);
    }
    let mut lo = raw[0];
    let mut hi = raw[0];
    for &v in raw {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    let degenerate = span <= T::c(MINMAX_EPS) * (T::one() + hi.abs());
    if degenerate {
        return (vec![T::zero(); raw.len()], true);
    }
    (raw.iter().map(|&v| (v - lo) / span).collect(), false)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn power_law_exponent(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}
