//! Feed-forward ReLU networks and their inclusion functions.
//!
//! Two bound methods are provided:
//!
//! - [`Network::ibp`]: interval bound propagation, the natural inclusion
//!   function of the layer composition. Monotone and valid everywhere.
//! - [`Network::crown`]: backward linear relaxation producing affine lower
//!   and upper forms `C x + d` valid on a region `[y]`, which
//!   [`AffineBounds::localized`] turns into a monotone `[y]`-localized
//!   inclusion function.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxes::IntervalBox;
use crate::interval::Interval;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("input has dimension {got}, network expects {expected}")]
    Dim { expected: usize, got: usize },
    #[error("layer {layer}: {detail}")]
    Layer { layer: usize, detail: String },
    #[error("network has no layers")]
    Empty,
    #[error("final layer must use the identity activation")]
    FinalActivation,
    #[error("box {x} is not inside the localization region {region}")]
    NotLocalized { x: IntervalBox, region: IntervalBox },
    #[error("region {0} is not a finite box")]
    UnboundedRegion(IntervalBox),
    #[error("weight file {path}: {detail}")]
    File { path: String, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "id")]
    Identity,
}

/// Dense row-major `rows × cols` real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// `self · v`, accumulating columns in ascending order.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let mut acc = 0.0;
                for (w, x) in self.row(r).iter().zip(v) {
                    acc += w * x;
                }
                acc
            })
            .collect()
    }

    /// `self · other`, ascending inner index.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for c in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.get(r, k) * other.get(k, c);
                }
                out.set(r, c, acc);
            }
        }
        out
    }
}

/// One affine layer followed by its activation: `σ(W ξ + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Self {
        Layer {
            weights,
            bias,
            activation,
        }
    }

    fn affine_point(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .mul_vec(x)
            .into_iter()
            .zip(&self.bias)
            .map(|(z, b)| z + b)
            .collect()
    }

    /// Interval image of `W [x] + b`, same accumulation order as point mode.
    fn affine_interval(&self, x: &[Interval]) -> Vec<Interval> {
        (0..self.weights.rows())
            .map(|r| {
                let mut acc = Interval::ZERO;
                for (&w, &xi) in self.weights.row(r).iter().zip(x) {
                    acc = acc + xi.scale(w);
                }
                acc.add_const(self.bias[r])
            })
            .collect()
    }
}

/// `N(x) = W⁽ᵏ⁾ ξ⁽ᵏ⁾ + b⁽ᵏ⁾` with `ξ⁽ⁱ⁾ = σ(W⁽ⁱ⁻¹⁾ ξ⁽ⁱ⁻¹⁾ + b⁽ⁱ⁻¹⁾)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NeuralError> {
        let last = layers.last().ok_or(NeuralError::Empty)?;
        if last.activation != Activation::Identity {
            return Err(NeuralError::FinalActivation);
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.rows() {
                return Err(NeuralError::Layer {
                    layer: i,
                    detail: format!("bias length {} does not match {} weight rows", l.bias.len(), l.weights.rows()),
                });
            }
            if l.weights.rows() == 0 || l.weights.cols() == 0 {
                return Err(NeuralError::Layer {
                    layer: i,
                    detail: "empty weight matrix".into(),
                });
            }
            if l.weights.data.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(NeuralError::Layer {
                    layer: i,
                    detail: "non-finite parameter".into(),
                });
            }
            if i > 0 && layers[i - 1].weights.rows() != l.weights.cols() {
                return Err(NeuralError::Layer {
                    layer: i,
                    detail: format!(
                        "expects {} inputs but layer {} has {} outputs",
                        l.weights.cols(),
                        i - 1,
                        layers[i - 1].weights.rows()
                    ),
                });
            }
        }
        Ok(Network { layers })
    }

    /// Seeded random network with the given layer widths, ReLU hidden
    /// layers and an identity output layer. Weights and biases are drawn
    /// from `U(-1/√fan_in, 1/√fan_in)` with ChaCha8.
    pub fn random(dims: &[usize], seed: u64) -> Result<Self, NeuralError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NeuralError::Empty);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = dims.len() - 1;
        let layers = (0..n_layers)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let s = 1.0 / (fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.random_range(-s..s)).collect();
                let bias = (0..fan_out).map(|_| rng.random_range(-s..s)).collect();
                let act = if i + 1 == n_layers { Activation::Identity } else { Activation::Relu };
                Layer::new(
                    Matrix {
                        rows: fan_out,
                        cols: fan_in,
                        data,
                    },
                    bias,
                    act,
                )
            })
            .collect();
        Network::new(layers)
    }

    /// The network `x ↦ b` (zero weights), for constant controllers.
    pub fn constant(n_inputs: usize, value: &[f64]) -> Result<Self, NeuralError> {
        Network::new(vec![Layer::new(
            Matrix::zeros(value.len(), n_inputs),
            value.to_vec(),
            Activation::Identity,
        )])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.rows()
    }

    /// Layer widths `[m₀, m₁, …, p]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weights.rows()))
            .collect()
    }

    fn check_dim(&self, got: usize) -> Result<(), NeuralError> {
        if got != self.input_dim() {
            return Err(NeuralError::Dim {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        self.check_dim(x.len())?;
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.affine_point(&h);
            if l.activation == Activation::Relu {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Pre-activation boxes of every layer under interval propagation.
    pub fn ibp_preactivations(&self, x: &IntervalBox) -> Result<Vec<IntervalBox>, NeuralError> {
        self.check_dim(x.dim())?;
        let mut h = x.as_slice().to_vec();
        let mut pre = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let z = l.affine_interval(&h);
            h = match l.activation {
                Activation::Relu => z.iter().map(|a| relu_interval(*a)).collect(),
                Activation::Identity => z.clone(),
            };
            pre.push(IntervalBox::new(z));
        }
        Ok(pre)
    }

    /// Interval bound propagation: natural inclusion function of `N`.
    pub fn ibp(&self, x: &IntervalBox) -> Result<IntervalBox, NeuralError> {
        let mut pre = self.ibp_preactivations(x)?;
        Ok(pre.pop().expect("network has layers"))
    }

    /// Backward linear relaxation on the region `y`.
    ///
    /// Pre-activation bounds come from [`Network::ibp_preactivations`].
    /// An unstable neuron with bounds `l < 0 < u` is relaxed above by the
    /// chord `u (z - l) / (u - l)` and below by `z` when `u > -l`, else `0`.
    pub fn crown(&self, y: &IntervalBox) -> Result<AffineBounds, NeuralError> {
        if !y.is_finite() {
            return Err(NeuralError::UnboundedRegion(y.clone()));
        }
        let pre = self.ibp_preactivations(y)?;
        let p = self.output_dim();
        let mut lam_lo = Matrix::identity(p);
        let mut lam_hi = Matrix::identity(p);
        let mut off_lo = vec![0.0; p];
        let mut off_hi = vec![0.0; p];
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            // coefficients on z_k -> coefficients on ξ_{k-1}
            for (off, lam) in [(&mut off_lo, &lam_lo), (&mut off_hi, &lam_hi)] {
                for (o, r) in off.iter_mut().zip(0..p) {
                    let mut acc = 0.0;
                    for (l, b) in lam.row(r).iter().zip(&layer.bias) {
                        acc += l * b;
                    }
                    *o += acc;
                }
            }
            lam_lo = lam_lo.matmul(&layer.weights);
            lam_hi = lam_hi.matmul(&layer.weights);
            if k == 0 || self.layers[k - 1].activation == Activation::Identity {
                continue;
            }
            // ξ_{k-1} = relu(z_{k-1})
            for (j, z) in pre[k - 1].iter().enumerate() {
                let r = ReluRelaxation::new(z.lo(), z.hi());
                for row in 0..p {
                    let lu = lam_hi.get(row, j);
                    if lu >= 0.0 {
                        off_hi[row] += lu * r.upper_intercept;
                        lam_hi.set(row, j, lu * r.upper_slope);
                    } else {
                        lam_hi.set(row, j, lu * r.lower_slope);
                    }
                    let ll = lam_lo.get(row, j);
                    if ll >= 0.0 {
                        lam_lo.set(row, j, ll * r.lower_slope);
                    } else {
                        off_lo[row] += ll * r.upper_intercept;
                        lam_lo.set(row, j, ll * r.upper_slope);
                    }
                }
            }
        }
        Ok(AffineBounds {
            c_lower: lam_lo,
            d_lower: off_lo,
            c_upper: lam_hi,
            d_upper: off_hi,
            region: y.clone(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NeuralError> {
        let path = path.as_ref();
        let file_err = |detail: String| NeuralError::File {
            path: path.display().to_string(),
            detail,
        };
        let text = fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        Network::from_json(&text).map_err(|e| match e {
            NeuralError::File { detail, .. } => file_err(detail),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, NeuralError> {
        let doc: NetworkFile = serde_json::from_str(text).map_err(|e| NeuralError::File {
            path: "<string>".into(),
            detail: e.to_string(),
        })?;
        let layers = doc
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let w = Matrix::from_rows(&l.weights).ok_or_else(|| NeuralError::Layer {
                    layer: i,
                    detail: "ragged weight matrix".into(),
                })?;
                Ok(Layer::new(w, l.bias, l.act))
            })
            .collect::<Result<Vec<_>, NeuralError>>()?;
        Network::new(layers)
    }

    pub fn to_json(&self) -> String {
        let doc = NetworkFile {
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.to_rows(),
                    bias: l.bias.clone(),
                    act: l.activation,
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("finite weights serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NeuralError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| NeuralError::File {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    #[serde(rename = "W")]
    weights: Vec<Vec<f64>>,
    #[serde(rename = "b")]
    bias: Vec<f64>,
    act: Activation,
}

fn relu_interval(a: Interval) -> Interval {
    Interval::from_ordered(a.lo().max(0.0), a.hi().max(0.0))
}

/// Linear envelopes `lower_slope·z ≤ relu(z) ≤ upper_slope·z + upper_intercept` on `[l, u]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReluRelaxation {
    pub lower_slope: f64,
    pub upper_slope: f64,
    pub upper_intercept: f64,
}

impl ReluRelaxation {
    pub fn new(l: f64, u: f64) -> Self {
        if l >= 0.0 {
            ReluRelaxation {
                lower_slope: 1.0,
                upper_slope: 1.0,
                upper_intercept: 0.0,
            }
        } else if u <= 0.0 {
            ReluRelaxation {
                lower_slope: 0.0,
                upper_slope: 0.0,
                upper_intercept: 0.0,
            }
        } else {
            let s = u / (u - l);
            ReluRelaxation {
                lower_slope: if -l >= u { 0.0 } else { 1.0 },
                upper_slope: s,
                upper_intercept: -s * l,
            }
        }
    }
}

/// `C_lower x + d_lower ≤ N(x) ≤ C_upper x + d_upper` for `x ∈ region`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineBounds {
    pub c_lower: Matrix,
    pub d_lower: Vec<f64>,
    pub c_upper: Matrix,
    pub d_upper: Vec<f64>,
    pub region: IntervalBox,
}

impl AffineBounds {
    /// Affine forms evaluated at a point.
    pub fn eval_point(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lo = self.c_lower.mul_vec(x).into_iter().zip(&self.d_lower).map(|(a, b)| a + b).collect();
        let hi = self.c_upper.mul_vec(x).into_iter().zip(&self.d_upper).map(|(a, b)| a + b).collect();
        (lo, hi)
    }

    /// `[C̲⁺x̲ + C̲⁻x̄ + d̲, C̄⁺x̄ + C̄⁻x̲ + d̄]` for `x ⊆ region`.
    pub fn localized(&self, x: &IntervalBox) -> Result<IntervalBox, NeuralError> {
        if !x.subset(&self.region) {
            return Err(NeuralError::NotLocalized {
                x: x.clone(),
                region: self.region.clone(),
            });
        }
        let (xl, xu) = (x.lower(), x.upper());
        let sign_split = |c: &Matrix, d: &[f64], pos: &[f64], neg: &[f64]| -> Vec<f64> {
            (0..c.rows())
                .map(|r| {
                    let mut acc = 0.0;
                    for (j, &w) in c.row(r).iter().enumerate() {
                        acc += if w >= 0.0 { w * pos[j] } else { w * neg[j] };
                    }
                    acc + d[r]
                })
                .collect()
        };
        let lo = sign_split(&self.c_lower, &self.d_lower, &xl, &xu);
        let hi = sign_split(&self.c_upper, &self.d_upper, &xu, &xl);
        Ok(IntervalBox::new(
            lo.into_iter()
                .zip(hi)
                .map(|(l, h)| Interval::from_ordered(l.min(h), h.max(l)))
                .collect(),
        ))
    }
}
