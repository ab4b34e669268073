//! Axis-aligned boxes: rank-1 interval vectors `[x̲, x̄]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::interval::{Interval, IntervalError};
use crate::tensor::{IntervalTensor, TensorError};

/// Which endpoint a face box pins its coordinate to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntervalBox(Vec<Interval>);

impl IntervalBox {
    pub fn new(components: Vec<Interval>) -> Self {
        IntervalBox(components)
    }

    pub fn from_bounds(lower: &[f64], upper: &[f64]) -> Result<Self, TensorError> {
        if lower.len() != upper.len() {
            return Err(TensorError::LengthMismatch(lower.len(), upper.len()));
        }
        let comps = lower
            .iter()
            .zip(upper)
            .map(|(&l, &u)| Interval::new(l, u))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(IntervalBox(comps))
    }

    pub fn point(x: &[f64]) -> Self {
        IntervalBox(x.iter().map(|&v| Interval::point(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[Interval] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Interval> {
        self.0.iter()
    }

    pub fn get(&self, i: usize) -> Option<Interval> {
        self.0.get(i).copied()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.0.iter().map(|a| a.lo()).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.0.iter().map(|a| a.hi()).collect()
    }

    pub fn into_inner(self) -> Vec<Interval> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.is_finite())
    }

    pub fn is_point(&self) -> bool {
        self.0.iter().all(|a| a.is_point())
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.0.iter().zip(x).all(|(a, &v)| a.contains(v))
    }

    /// `self ⊆ other`, false on dimension mismatch.
    pub fn subset(&self, other: &IntervalBox) -> bool {
        self.dim() == other.dim() && self.0.iter().zip(&other.0).all(|(a, b)| a.subset(*b))
    }

    pub fn widths(&self) -> Result<Vec<f64>, IntervalError> {
        self.0.iter().map(|a| a.width()).collect()
    }

    /// Concatenation `(x, y, …)` of several boxes.
    pub fn concat(parts: &[&IntervalBox]) -> IntervalBox {
        IntervalBox(parts.iter().flat_map(|b| b.0.iter().copied()).collect())
    }

    /// The face `[x̲, x̄_{i:x̲}]` (lower) or `[x̲_{i:x̄}, x̄]` (upper).
    pub fn face(&self, i: usize, side: Side) -> Result<IntervalBox, TensorError> {
        let a = self.get(i).ok_or(TensorError::Index {
            index: i,
            len: self.dim(),
        })?;
        let pinned = match side {
            Side::Lower => a.lo(),
            Side::Upper => a.hi(),
        };
        let mut comps = self.0.clone();
        comps[i] = Interval::from_ordered(pinned, pinned);
        Ok(IntervalBox(comps))
    }

    /// Component-wise hull of a non-empty list of boxes.
    pub fn hull_all<'a>(boxes: impl IntoIterator<Item = &'a IntervalBox>) -> Result<IntervalBox, TensorError> {
        let mut it = boxes.into_iter();
        let mut acc = it.next().ok_or(TensorError::Empty)?.clone();
        for b in it {
            if b.dim() != acc.dim() {
                return Err(TensorError::LengthMismatch(acc.dim(), b.dim()));
            }
            for (x, y) in acc.0.iter_mut().zip(&b.0) {
                *x = x.hull(*y);
            }
        }
        Ok(acc)
    }

    pub fn hull(&self, other: &IntervalBox) -> Result<IntervalBox, TensorError> {
        IntervalBox::hull_all([self, other])
    }

    /// Uniform grid of `∏ counts[i]` cells tiling the box, last axis fastest.
    ///
    /// Neighbouring cells share their cut coordinate bit for bit and the
    /// outer cells keep the original endpoints, so the hull of the cells is
    /// exactly the input box.
    pub fn split_uniform(&self, counts: &[usize]) -> Result<Vec<IntervalBox>, TensorError> {
        if counts.len() != self.dim() || counts.iter().any(|&k| k == 0) || !self.is_finite() {
            return Err(TensorError::SplitCounts {
                counts: counts.to_vec(),
                dim: self.dim(),
            });
        }
        let axes: Vec<Vec<Interval>> = self
            .0
            .iter()
            .zip(counts)
            .map(|(a, &k)| {
                let cut = |j: usize| {
                    if j == 0 {
                        a.lo()
                    } else if j == k {
                        a.hi()
                    } else {
                        (a.lo() + (a.hi() - a.lo()) * (j as f64 / k as f64)).min(a.hi())
                    }
                };
                (0..k).map(|j| Interval::from_ordered(cut(j), cut(j + 1))).collect()
            })
            .collect();
        let total: usize = counts.iter().product();
        let mut cells = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut comps = vec![Interval::ZERO; self.dim()];
            for d in (0..self.dim()).rev() {
                comps[d] = axes[d][rem % counts[d]];
                rem /= counts[d];
            }
            cells.push(IntervalBox(comps));
        }
        Ok(cells)
    }
}

/// `v_{i:w}`: a copy of `v` whose `i`-th entry is taken from `w`.
pub fn replace_component(v: &[f64], i: usize, w: &[f64]) -> Result<Vec<f64>, TensorError> {
    if v.len() != w.len() {
        return Err(TensorError::LengthMismatch(v.len(), w.len()));
    }
    if i >= v.len() {
        return Err(TensorError::Index { index: i, len: v.len() });
    }
    let mut out = v.to_vec();
    out[i] = w[i];
    Ok(out)
}

impl From<IntervalBox> for IntervalTensor {
    fn from(b: IntervalBox) -> Self {
        let n = b.dim();
        IntervalTensor::new(vec![n], b.0).expect("rank-1 shape matches data")
    }
}

impl TryFrom<IntervalTensor> for IntervalBox {
    type Error = TensorError;

    fn try_from(t: IntervalTensor) -> Result<Self, Self::Error> {
        if t.rank() != 1 {
            return Err(TensorError::NotRankOne(t.shape().to_vec()));
        }
        Ok(IntervalBox(t.into_data()))
    }
}

impl fmt::Display for IntervalBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|a| a.to_string()).collect();
        write!(f, "{}", parts.join(" x "))
    }
}

/// Parses the command-line box syntax `"l1,u1;l2,u2;…"`.
impl FromStr for IntervalBox {
    type Err = IntervalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(';')
            .filter(|p| !p.trim().is_empty())
            .map(|p| format!("[{}]", p.trim()).parse::<Interval>())
            .collect::<Result<Vec<_>, _>>()
            .map(IntervalBox)
    }
}
