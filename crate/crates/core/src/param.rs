//! Flat parameter vectors shared by models, velocities and aggregates.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-length real vector holding model weights, velocities or noise.
///
/// Arithmetic is checked: operands must have equal length and results
/// must be finite, otherwise an error is returned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        let v = ParamVector(values);
        v.ensure_finite("ParamVector::from_vec")?;
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn check_dim(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        match self.0.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::non_finite(format!("{context}: coordinate {i} is {}", self.0[i]))),
        }
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a + b, "add")
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_with(other, |a, b| a - b, "sub")
    }

    pub fn scale(&self, factor: f64) -> Result<ParamVector> {
        let out = ParamVector(self.0.iter().map(|x| factor * x).collect());
        out.ensure_finite("scale")?;
        Ok(out)
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ParamVector) -> Result<()> {
        self.check_dim(x)?;
        for (s, xi) in self.0.iter_mut().zip(&x.0) {
            *s += a * xi;
        }
        self.ensure_finite("axpy")
    }

    fn zip_with(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64, op: &str) -> Result<ParamVector> {
        self.check_dim(other)?;
        let out = ParamVector(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect());
        out.ensure_finite(op)?;
        Ok(out)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_construction() {
        assert!(ParamVector::from_vec(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::from_vec(vec![f64::INFINITY]).is_err());
        assert!(ParamVector::from_vec(vec![1.0, -2.0]).is_ok());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = ParamVector::zeros(3);
        let b = ParamVector::zeros(2);
        assert!(matches!(
            a.add(&b),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn overflow_is_caught() {
        let a = ParamVector::from_vec(vec![f64::MAX]).unwrap();
        assert!(a.scale(10.0).is_err());
        let mut b = a.clone();
        assert!(b.axpy(1.0, &a).is_err());
    }

    #[test]
    fn arithmetic() {
        let a = ParamVector::from_vec(vec![3.0, 4.0]).unwrap();
        let b = ParamVector::from_vec(vec![1.0, 1.0]).unwrap();
        assert_eq!(a.norm(), 5.0);
        assert_eq!(a.sub(&b).unwrap().as_slice(), &[2.0, 3.0]);
        assert_eq!(a.dot(&b).unwrap(), 7.0);
        let mut c = b.clone();
        c.axpy(2.0, &a).unwrap();
        assert_eq!(c.as_slice(), &[7.0, 9.0]);
    }
}
