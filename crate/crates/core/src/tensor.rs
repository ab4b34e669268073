//! N-dimensional interval arrays.
//!
//! Storage is a flat row-major `Vec<Interval>`. Binary element-wise
//! operations broadcast with the trailing-dimension rule. The interval
//! matrix product accumulates `k = 0..p` in ascending order so results are
//! reproducible bit for bit.

use rayon::prelude::*;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::interval::{Interval, IntervalError, Monotone};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?}")]
    Length { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero dimension")]
    ZeroDim(Vec<usize>),
    #[error("shapes {0:?} and {1:?} do not broadcast")]
    Broadcast(Vec<usize>, Vec<usize>),
    #[error("matmul needs rank-2 operands with matching inner dimension, got {0:?} and {1:?}")]
    Matmul(Vec<usize>, Vec<usize>),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("expected a rank-1 tensor, got shape {0:?}")]
    NotRankOne(Vec<usize>),
    #[error("empty box list")]
    Empty,
    #[error("split counts {counts:?} invalid for a box of dimension {dim}")]
    SplitCounts { counts: Vec<usize>, dim: usize },
    #[error(transparent)]
    Interval(#[from] IntervalError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalTensor {
    shape: Vec<usize>,
    data: Vec<Interval>,
}

impl IntervalTensor {
    pub fn new(shape: Vec<usize>, data: Vec<Interval>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim(shape));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Length {
                shape,
                len: data.len(),
            });
        }
        Ok(IntervalTensor { shape, data })
    }

    /// A tensor of degenerate intervals.
    pub fn from_points(shape: Vec<usize>, values: &[f64]) -> Result<Self, TensorError> {
        let data = values
            .iter()
            .map(|&v| Interval::new(v, v))
            .collect::<Result<Vec<_>, _>>()?;
        IntervalTensor::new(shape, data)
    }

    pub fn filled(shape: Vec<usize>, value: Interval) -> Result<Self, TensorError> {
        let n = shape.iter().product();
        IntervalTensor::new(shape, vec![value; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Interval] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Interval> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> Option<Interval> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return None;
            }
            flat = flat * d + i;
        }
        Some(self.data[flat])
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, TensorError> {
        IntervalTensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(Interval) -> Interval + Sync) -> IntervalTensor {
        IntervalTensor {
            shape: self.shape.clone(),
            data: self.data.par_iter().map(|&a| f(a)).collect(),
        }
    }

    pub fn try_map(
        &self,
        f: impl Fn(Interval) -> Result<Interval, IntervalError> + Sync,
    ) -> Result<IntervalTensor, TensorError> {
        let data = self
            .data
            .par_iter()
            .map(|&a| f(a))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(IntervalTensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Element-wise binary operation with broadcasting.
    pub fn zip_with(
        &self,
        other: &IntervalTensor,
        f: impl Fn(Interval, Interval) -> Interval + Sync,
    ) -> Result<IntervalTensor, TensorError> {
        let shape = broadcast_shape(&self.shape, &other.shape)?;
        let n: usize = shape.iter().product();
        let sa = broadcast_strides(&self.shape, &shape);
        let sb = broadcast_strides(&other.shape, &shape);
        let data = (0..n)
            .into_par_iter()
            .map(|flat| {
                let (mut ia, mut ib, mut rem) = (0, 0, flat);
                for d in (0..shape.len()).rev() {
                    let coord = rem % shape[d];
                    rem /= shape[d];
                    ia += coord * sa[d];
                    ib += coord * sb[d];
                }
                f(self.data[ia], other.data[ib])
            })
            .collect();
        Ok(IntervalTensor { shape, data })
    }

    pub fn add(&self, other: &IntervalTensor) -> Result<IntervalTensor, TensorError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &IntervalTensor) -> Result<IntervalTensor, TensorError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &IntervalTensor) -> Result<IntervalTensor, TensorError> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn div(&self, other: &IntervalTensor) -> Result<IntervalTensor, TensorError> {
        self.zip_with(other, |a, b| a / b)
    }

    pub fn scale(&self, c: f64) -> IntervalTensor {
        self.map(|a| a.scale(c))
    }

    pub fn add_const(&self, c: f64) -> IntervalTensor {
        self.map(|a| a.add_const(c))
    }

    pub fn neg(&self) -> IntervalTensor {
        self.map(|a| -a)
    }

    pub fn recip(&self) -> IntervalTensor {
        self.map(Interval::recip)
    }

    pub fn powi(&self, n: u32) -> IntervalTensor {
        self.map(|a| a.powi(n))
    }

    pub fn sin(&self) -> IntervalTensor {
        self.map(Interval::sin)
    }

    pub fn cos(&self) -> IntervalTensor {
        self.map(Interval::cos)
    }

    pub fn tan(&self) -> IntervalTensor {
        self.map(Interval::tan)
    }

    pub fn monotone(&self, f: Monotone) -> Result<IntervalTensor, TensorError> {
        self.try_map(|a| f.apply(a))
    }

    /// Interval matrix product `[A][B]`, entry `(i, j)` = `Σ_k [a_ik] * [b_kj]`.
    pub fn matmul(&self, other: &IntervalTensor) -> Result<IntervalTensor, TensorError> {
        let (n, p) = match self.shape[..] {
            [n, p] => (n, p),
            _ => return Err(TensorError::Matmul(self.shape.clone(), other.shape.clone())),
        };
        let m = match other.shape[..] {
            [q, m] if q == p => m,
            _ => return Err(TensorError::Matmul(self.shape.clone(), other.shape.clone())),
        };
        let mut data = vec![Interval::ZERO; n * m];
        data.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
            for (j, out) in row.iter_mut().enumerate() {
                let mut acc = Interval::ZERO;
                for k in 0..p {
                    acc = acc + self.data[i * p + k] * other.data[k * m + j];
                }
                *out = acc;
            }
        });
        Ok(IntervalTensor {
            shape: vec![n, m],
            data,
        })
    }

    fn nested(&self, dim: usize, offset: usize) -> Value {
        if dim == self.shape.len() {
            return serde_json::to_value(self.data[offset]).expect("interval serializes");
        }
        let stride: usize = self.shape[dim + 1..].iter().product();
        Value::Array(
            (0..self.shape[dim])
                .map(|i| self.nested(dim + 1, offset + i * stride))
                .collect(),
        )
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, TensorError> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for k in 0..rank {
        let da = if k < rank - a.len() { 1 } else { a[k - (rank - a.len())] };
        let db = if k < rank - b.len() { 1 } else { b[k - (rank - b.len())] };
        out[k] = match (da, db) {
            _ if da == db => da,
            (1, d) | (d, 1) => d,
            _ => return Err(TensorError::Broadcast(a.to_vec(), b.to_vec())),
        };
    }
    Ok(out)
}

/// Row-major strides of `shape` seen through `target`; broadcast axes get 0.
fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let pad = target.len() - shape.len();
    let mut strides = vec![0; target.len()];
    let mut s = 1;
    for k in (0..shape.len()).rev() {
        strides[k + pad] = if shape[k] == 1 { 0 } else { s };
        s *= shape[k];
    }
    strides
}

/// `{"shape": [...], "data": nested [lo, hi] pairs}`.
impl Serialize for IntervalTensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            shape: &'a [usize],
            data: Value,
        }
        Repr {
            shape: &self.shape,
            data: self.nested(0, 0),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for IntervalTensor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            shape: Vec<usize>,
            data: Value,
        }
        let repr = Repr::deserialize(deserializer)?;
        let mut flat = Vec::new();
        flatten(&repr.data, &repr.shape, &mut flat).map_err(de::Error::custom)?;
        IntervalTensor::new(repr.shape, flat).map_err(de::Error::custom)
    }
}

fn flatten(v: &Value, shape: &[usize], out: &mut Vec<Interval>) -> Result<(), String> {
    match shape.split_first() {
        None => {
            let a: Interval = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
            out.push(a);
            Ok(())
        }
        Some((&d, rest)) => {
            let items = v.as_array().ok_or("expected nested array")?;
            if items.len() != d {
                return Err(format!("expected {d} entries, found {}", items.len()));
            }
            items.iter().try_for_each(|item| flatten(item, rest, out))
        }
    }
}
