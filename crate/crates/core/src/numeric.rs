//! Dense real vectors and the comparison tolerance shared by every module.
//!
//! Coordinates are validated once, at construction. The arithmetic helpers
//! used inside iteration loops assume matching dimensions; the public
//! [`inner`], [`norm`] and [`lincomb`] functions check them.

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the ambient space `R^d`.
#[derive(Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Builds a vector, rejecting NaN and infinite coordinates.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(index) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Vector(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    /// The `i`-th standard basis vector of `R^dim`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Vector(v)
    }

    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        Vector(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn add(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|a| a * s).collect())
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + s * b)
                .collect(),
        )
    }

    /// `self + s * (other - self)`, the step used by every relaxation.
    pub fn toward(&self, s: f64, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + s * (b - a))
                .collect(),
        )
    }

    pub fn dist(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimMismatch {
                expected,
                found: self.dim(),
            })
        }
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vector::new(v)
    }
}

impl<'de> Deserialize<'de> for Vector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let coords = Vec::<f64>::deserialize(d)?;
        Vector::new(coords).map_err(serde::de::Error::custom)
    }
}

/// Convenience constructor for literals; panics on non-finite input.
#[macro_export]
macro_rules! vector {
    ($($x:expr),* $(,)?) => {
        $crate::Vector::new(vec![$($x as f64),*]).expect("finite coordinates")
    };
}

/// Inner product `<x, y>`.
pub fn inner(x: &Vector, y: &Vector) -> Result<f64> {
    y.check_dim(x.dim())?;
    Ok(x.dot(y))
}

/// Euclidean norm.
pub fn norm(x: &Vector) -> f64 {
    x.norm()
}

/// `sum_i c_i v_i`, coordinatewise.
pub fn lincomb(terms: &[(f64, &Vector)]) -> Result<Vector> {
    let (_, first) = terms.first().ok_or(Error::EmptyLincomb)?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for (c, v) in terms {
        v.check_dim(dim)?;
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += c * x;
        }
    }
    Ok(Vector(acc))
}

/// Absolute and relative comparison slack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs_eps: f64,
    pub rel_eps: f64,
}

impl Tolerance {
    pub fn new(abs_eps: f64, rel_eps: f64) -> Result<Self> {
        let ok = abs_eps >= 0.0 && rel_eps >= 0.0 && (abs_eps > 0.0 || rel_eps > 0.0);
        if !ok || !abs_eps.is_finite() || !rel_eps.is_finite() {
            return Err(Error::Config(format!(
                "tolerance needs non-negative slacks with at least one positive, got abs={abs_eps}, rel={rel_eps}"
            )));
        }
        Ok(Tolerance { abs_eps, rel_eps })
    }

    pub fn absolute(abs_eps: f64) -> Self {
        Tolerance {
            abs_eps,
            rel_eps: 0.0,
        }
    }

    /// `|a - b| <= abs_eps + rel_eps * max(|a|, |b|)`.
    pub fn close(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.abs_eps + self.rel_eps * a.abs().max(b.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs_eps: 1e-9,
            rel_eps: 1e-9,
        }
    }
}
