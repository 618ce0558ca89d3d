use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense real vector: a proposed gradient, a true gradient or a parameter
/// vector. Components are always finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<T>", into = "Vec<T>")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct GradientVector<T: Scalar> {
    components: Vec<T>,
}

impl<T: Scalar> GradientVector<T> {
    /// Builds a vector, rejecting empty input and non-finite components.
    pub fn new(components: Vec<T>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidInput("vector dimension must be at least 1".into()));
        }
        if let Some(k) = components.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "component {k} is not finite ({})",
                components[k]
            )));
        }
        Ok(Self { components })
    }

    /// Wraps components produced by arithmetic on already-valid vectors.
    /// Finiteness is re-checked by [`GradientVector::is_finite`] where it matters.
    pub(crate) fn from_raw(components: Vec<T>) -> Self {
        Self { components }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_raw(vec![T::zero(); dim])
    }

    pub fn filled(dim: usize, value: T) -> Self {
        Self::from_raw(vec![value; dim])
    }

    /// `scale * e_axis`.
    pub fn basis(dim: usize, axis: usize, scale: T) -> Self {
        let mut v = vec![T::zero(); dim];
        v[axis] = scale;
        Self::from_raw(v)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.components
    }

    pub fn into_vec(self) -> Vec<T> {
        self.components
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(|c| c.is_finite())
    }

    pub fn dot(&self, other: &Self) -> T {
        self.components
            .iter()
            .zip(&other.components)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn sq_distance(&self, other: &Self) -> T {
        sq_distance(&self.components, &other.components)
    }

    pub fn distance(&self, other: &Self) -> T {
        self.sq_distance(other).sqrt()
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        Self::from_raw(self.components.iter().map(|&c| c * s).collect())
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: T, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + s * b)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.components.iter_mut().zip(&other.components) {
            *a = *a + b;
        }
    }

    fn zip_with(&self, other: &Self, op: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        Self::from_raw(
            self.components
                .iter()
                .zip(&other.components)
                .map(|(&a, &b)| op(a, b))
                .collect(),
        )
    }

    pub(crate) fn ensure_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

/// Squared Euclidean distance, accumulated in component order.
#[inline]
pub fn sq_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let diff = x - y;
        acc + diff * diff
    })
}

impl<T: Scalar> Index<usize> for GradientVector<T> {
    type Output = T;

    fn index(&self, k: usize) -> &T {
        &self.components[k]
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for GradientVector<T> {
    type Error = Error;

    fn try_from(components: Vec<T>) -> Result<Self> {
        Self::new(components)
    }
}

impl<T: Scalar> From<GradientVector<T>> for Vec<T> {
    fn from(v: GradientVector<T>) -> Vec<T> {
        v.components
    }
}
