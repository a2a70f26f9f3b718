//! Row-major dense tensors of `f64` and their text serialization.
//!
//! The text format is one header line `shape: d1 d2 ...` followed by the
//! values in row-major order, written with 17 significant digits so a
//! write/read cycle is bit-exact. Rank-2 tensors put one row per line.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let n = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        t.data.fill(value);
        Self::new(t.shape, t.data)
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Stacks equally sized rows into a `[rows, cols]` tensor.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension; a rank-1 tensor is a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[0]
        }
    }

    /// Product of all trailing dimensions.
    pub fn cols(&self) -> usize {
        if self.shape.len() == 1 {
            self.shape[0]
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.cols())
    }

    /// Gathers the given rows into a new `[idx.len(), cols]` tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= self.rows() {
                return Err(Error::Invalid(format!("row {i} out of {}", self.rows())));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(vec![idx.len(), c], data)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Elementwise combination of two same-shape tensors.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.shape.clone(), data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn scale(&self, a: f64) -> Result<Self> {
        self.map(|v| a * v)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |x, y| x - y)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |x, y| x + y)
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )))
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("shape:");
        for d in &self.shape {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
        let per_line = if self.shape.len() >= 2 {
            self.cols()
        } else {
            self.data.len().max(1)
        };
        for line in self.data.chunks(per_line) {
            let mut first = true;
            for v in line {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{}", fmt_f64(*v)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing shape header".into()))?;
        let dims = header
            .trim()
            .strip_prefix("shape:")
            .ok_or_else(|| Error::Parse(format!("bad header {header:?}")))?;
        let shape = dims
            .split_whitespace()
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|e| Error::Parse(format!("dimension {d:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let data = lines
            .flat_map(str::split_whitespace)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("value {v:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, data)
    }
}

/// Formats with 17 significant digits, enough for an exact round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        Err(Error::EmptyShape)
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(DenseTensor::zeros(&[]), Err(Error::EmptyShape)));
        assert!(matches!(DenseTensor::zeros(&[3, 0]), Err(Error::EmptyShape)));
        assert!(DenseTensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(DenseTensor::new(vec![1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn rows_and_cols() {
        let t = DenseTensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!((t.rows(), t.cols()), (3, 2));
        assert_eq!(t.row(1), &[3.0, 4.0]);
        let s = t.select_rows(&[2, 0]).unwrap();
        assert_eq!(s.data(), &[5.0, 6.0, 1.0, 2.0]);
    }

    #[test]
    fn text_header_layout() {
        let t = DenseTensor::new(vec![2, 2], vec![1.0, -0.5, 0.25, 3.0]).unwrap();
        let text = t.to_text();
        assert!(text.starts_with("shape: 2 2\n"));
        assert_eq!(text.lines().count(), 3);
        assert!(DenseTensor::from_text("shape 2\n1 2").is_err());
        assert!(DenseTensor::from_text("shape: 3\n1 2").is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(
            rows in 1usize..5,
            cols in 1usize..5,
            seed in prop::collection::vec(-1e6f64..1e6, 25),
        ) {
            let data: Vec<f64> = seed.iter().cycle().take(rows * cols).map(|v| v / 7.0).collect();
            let t = DenseTensor::new(vec![rows, cols], data).unwrap();
            let back = DenseTensor::from_text(&t.to_text()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
