use crate::model::rng::uniform;
use crate::scalar::{dot, Real};

use super::PoragError;

/// `f(h) = W2·tanh(W1·h + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardHeadParams<T> {
    pub d: usize,
    /// Row-major `[d][d]`.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

impl<T: Real> RewardHeadParams<T> {
    pub fn zeros(d: usize) -> Self {
        Self { d, w1: vec![T::zero(); d * d], b1: vec![T::zero(); d], w2: vec![T::zero(); d], b2: T::zero() }
    }

    /// Uniform fan-in scaled weights, zero biases.
    pub fn init(d: usize, seed: u64, stream: u64) -> Self {
        let s = 3f64.sqrt() / (d as f64).sqrt();
        let w1 = (0..(d * d) as u64).map(|i| T::c(uniform(seed, stream, i) * s)).collect();
        let w2 = (0..d as u64).map(|i| T::c(uniform(seed, stream + 1, i) * s)).collect();
        Self { d, w1, b1: vec![T::zero(); d], w2, b2: T::zero() }
    }

    fn pre(&self, h: &[T]) -> Vec<T> {
        let d = self.d;
        (0..d).map(|i| dot(&self.w1[i * d..(i + 1) * d], h) + self.b1[i]).collect()
    }

    pub fn forward(&self, h: &[T]) -> Result<T, PoragError> {
        if h.len() != self.d {
            return Err(PoragError::Shape(format!("hidden length {} vs head width {}", h.len(), self.d)));
        }
        let a: Vec<T> = self.pre(h).into_iter().map(T::tanh).collect();
        Ok(dot(&self.w2, &a) + self.b2)
    }

    /// Gradient of `f(h)` with respect to every parameter.
    pub fn grad(&self, h: &[T]) -> Result<(T, HeadGrad<T>), PoragError> {
        let f = self.forward(h)?;
        let d = self.d;
        let t: Vec<T> = self.pre(h).into_iter().map(T::tanh).collect();
        let da: Vec<T> = (0..d).map(|i| self.w2[i] * (T::one() - t[i] * t[i])).collect();
        let mut w1 = vec![T::zero(); d * d];
        for i in 0..d {
            for j in 0..d {
                w1[i * d + j] = da[i] * h[j];
            }
        }
        Ok((f, HeadGrad { w1, b1: da, w2: t, b2: T::one() }))
    }

    /// Squared error `(f(h) − target)²` and its gradient.
    pub fn loss_grad(&self, h: &[T], target: T) -> Result<(T, HeadGrad<T>), PoragError> {
        let (f, mut g) = self.grad(h)?;
        let e = f - target;
        let s = e + e;
        for v in g.w1.iter_mut().chain(g.b1.iter_mut()).chain(g.w2.iter_mut()) {
            *v *= s;
        }
        g.b2 = s;
        Ok((e * e, g))
    }

    /// `θ ← θ − η·g`.
    pub fn descend(&mut self, g: &HeadGrad<T>, eta: T) {
        for (p, d) in self.w1.iter_mut().zip(&g.w1) {
            *p -= eta * *d;
        }
        for (p, d) in self.b1.iter_mut().zip(&g.b1) {
            *p -= eta * *d;
        }
        for (p, d) in self.w2.iter_mut().zip(&g.w2) {
            *p -= eta * *d;
        }
        self.b2 -= eta * g.b2;
    }

    /// `[W1, b1, W2, b2]` in one flat vector.
    pub fn flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.d * self.d + 2 * self.d + 1);
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn from_flat(d: usize, v: &[T]) -> Result<Self, PoragError> {
        if v.len() != d * d + 2 * d + 1 {
            return Err(PoragError::Shape(format!("head of width {d} needs {} values, got {}", d * d + 2 * d + 1, v.len())));
        }
        Ok(Self {
            d,
            w1: v[..d * d].to_vec(),
            b1: v[d * d..d * d + d].to_vec(),
            w2: v[d * d + d..d * d + 2 * d].to_vec(),
            b2: v[d * d + 2 * d],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }
}

impl<T: Real> HeadGrad<T> {
    pub fn flat(&self) -> Vec<T> {
        let mut v = self.w1.clone();
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }
}
