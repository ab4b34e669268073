//! Natural inclusion functions by composition.
//!
//! A [`Recipe`] is a function `ℝⁿ → ℝᵐ` written as a sequence of stages
//! `e_ℓ ∘ … ∘ e₁`. Each stage is an elementary interval operation or a
//! user-supplied [`Stage`]. The same tape runs in point mode (`f64`) and in
//! interval mode ([`Interval`]); in interval mode every stage is replaced
//! by its inclusion function, which yields the natural inclusion function
//! of the whole composition.

mod expr;
mod parse;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxes::IntervalBox;
use crate::interval::{Interval, IntervalError, Monotone};
use crate::tensor::TensorError;

pub use expr::Expr;
pub use parse::{parse_expr, ParseError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InclusionError {
    #[error("stage {stage} ({op}): {source}")]
    Stage {
        stage: usize,
        op: String,
        #[source]
        source: IntervalError,
    },
    #[error("input has dimension {got}, recipe expects {expected}")]
    Arity { expected: usize, got: usize },
    #[error("variable x{var} out of range for a recipe with {inputs} inputs")]
    UnknownVar { var: usize, inputs: usize },
    #[error("stage {name} takes {expected} arguments, got {got}")]
    StageArity { name: String, expected: usize, got: usize },
    #[error("constant {0} is not finite")]
    NonFiniteConstant(f64),
    #[error("point image at {0:?} is not finite")]
    NonFiniteImage(Vec<f64>),
    #[error("sampling needs at least one sample")]
    NoSamples,
    #[error("cannot sample from unbounded box {0}")]
    UnboundedSampleBox(IntervalBox),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A user-supplied scalar stage carrying its own inclusion function.
///
/// `is_monotone` is a declaration: the engine trusts it when flagging a
/// recipe monotone.
pub trait Stage: Send + Sync {
    fn name(&self) -> &str;
    fn arity(&self) -> usize;
    fn eval_point(&self, args: &[f64]) -> Result<f64, IntervalError>;
    fn eval_interval(&self, args: &[Interval]) -> Result<Interval, IntervalError>;
    fn is_monotone(&self) -> bool;
}

#[derive(Clone)]
enum Op {
    Input(usize),
    Const(f64),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    AddConst(usize, f64),
    Scale(f64, usize),
    Recip(usize),
    Powi(usize, u32),
    Sin(usize),
    Cos(usize),
    Tan(usize),
    Monotone(Monotone, usize),
    Custom(Arc<dyn Stage>, Vec<usize>),
}

impl Op {
    fn name(&self) -> String {
        match self {
            Op::Input(_) => "input".into(),
            Op::Const(_) => "const".into(),
            Op::Add(..) => "add".into(),
            Op::Sub(..) => "sub".into(),
            Op::Mul(..) => "mul".into(),
            Op::Div(..) => "div".into(),
            Op::Neg(_) => "neg".into(),
            Op::AddConst(..) => "add_const".into(),
            Op::Scale(..) => "scale".into(),
            Op::Recip(_) => "recip".into(),
            Op::Powi(..) => "powi".into(),
            Op::Sin(_) => "sin".into(),
            Op::Cos(_) => "cos".into(),
            Op::Tan(_) => "tan".into(),
            Op::Monotone(m, _) => m.name().into(),
            Op::Custom(s, _) => s.name().into(),
        }
    }
}

/// Values a tape can be evaluated over.
trait Arith: Copy + Send + Sync {
    fn constant(c: f64) -> Self;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
    fn div(self, o: Self) -> Self;
    fn neg(self) -> Self;
    fn add_const(self, c: f64) -> Self;
    fn scale(self, c: f64) -> Self;
    fn recip(self) -> Self;
    fn powi(self, n: u32) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn monotone(self, f: Monotone) -> Result<Self, IntervalError>;
    fn custom(stage: &dyn Stage, args: &[Self]) -> Result<Self, IntervalError>;
    fn inflate(self, ulps: u32) -> Self;
}

impl Arith for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn div(self, o: Self) -> Self {
        self / o
    }
    fn neg(self) -> Self {
        -self
    }
    fn add_const(self, c: f64) -> Self {
        self + c
    }
    fn scale(self, c: f64) -> Self {
        c * self
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn powi(self, n: u32) -> Self {
        f64::powi(self, n as i32)
    }
    fn sin(self) -> Self {
        crate::interval::sin(self)
    }
    fn cos(self) -> Self {
        crate::interval::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn monotone(self, f: Monotone) -> Result<Self, IntervalError> {
        if f.in_domain(self) {
            Ok(f.eval(self))
        } else {
            Err(IntervalError::PointDomain { op: f.name(), x: self })
        }
    }
    fn custom(stage: &dyn Stage, args: &[Self]) -> Result<Self, IntervalError> {
        stage.eval_point(args)
    }
    fn inflate(self, _ulps: u32) -> Self {
        self
    }
}

impl Arith for Interval {
    fn constant(c: f64) -> Self {
        Interval::point(c)
    }
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
    fn div(self, o: Self) -> Self {
        self / o
    }
    fn neg(self) -> Self {
        -self
    }
    fn add_const(self, c: f64) -> Self {
        Interval::add_const(self, c)
    }
    fn scale(self, c: f64) -> Self {
        Interval::scale(self, c)
    }
    fn recip(self) -> Self {
        Interval::recip(self)
    }
    fn powi(self, n: u32) -> Self {
        Interval::powi(self, n)
    }
    fn sin(self) -> Self {
        Interval::sin(self)
    }
    fn cos(self) -> Self {
        Interval::cos(self)
    }
    fn tan(self) -> Self {
        Interval::tan(self)
    }
    fn monotone(self, f: Monotone) -> Result<Self, IntervalError> {
        f.apply(self)
    }
    fn custom(stage: &dyn Stage, args: &[Self]) -> Result<Self, IntervalError> {
        stage.eval_interval(args)
    }
    fn inflate(self, ulps: u32) -> Self {
        Interval::inflate(self, ulps)
    }
}

/// A composed function evaluated stage by stage in point or interval mode.
#[derive(Clone)]
pub struct Recipe {
    n_inputs: usize,
    tape: Vec<Op>,
    outputs: Vec<usize>,
    inflate_ulps: u32,
}

impl Recipe {
    /// Compiles one expression per output over `n_inputs` variables.
    pub fn new(n_inputs: usize, outputs: Vec<Expr>) -> Result<Self, InclusionError> {
        let mut tape: Vec<Op> = (0..n_inputs).map(Op::Input).collect();
        let mut out_nodes = Vec::with_capacity(outputs.len());
        for e in &outputs {
            out_nodes.push(compile(e, n_inputs, &mut tape)?);
        }
        Ok(Recipe {
            n_inputs,
            tape,
            outputs: out_nodes,
            inflate_ulps: 0,
        })
    }

    /// Parses one text expression per output over the named inputs.
    pub fn parse(inputs: &[&str], outputs: &[&str]) -> Result<Self, InclusionError> {
        let exprs = outputs
            .iter()
            .map(|src| parse_expr(src, inputs))
            .collect::<Result<Vec<_>, _>>()?;
        Recipe::new(inputs.len(), exprs)
    }

    /// Widens every stage result by `ulps` units in the last place in
    /// interval mode. Off (`0`) by default.
    pub fn with_inflation(mut self, ulps: u32) -> Self {
        self.inflate_ulps = ulps;
        self
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    /// Number of stages after the input loads.
    pub fn n_stages(&self) -> usize {
        self.tape.len() - self.n_inputs
    }

    /// A composition is monotone when every stage is. Built-in stages are
    /// tight, hence monotone; custom stages report their own flag.
    pub fn is_monotone(&self) -> bool {
        self.tape.iter().all(|op| match op {
            Op::Custom(s, _) => s.is_monotone(),
            _ => true,
        })
    }

    fn run<T: Arith>(&self, x: &[T]) -> Result<Vec<T>, InclusionError> {
        if x.len() != self.n_inputs {
            return Err(InclusionError::Arity {
                expected: self.n_inputs,
                got: x.len(),
            });
        }
        let mut vals: Vec<T> = Vec::with_capacity(self.tape.len());
        for (stage, op) in self.tape.iter().enumerate() {
            let v = match op {
                Op::Input(i) => x[*i],
                Op::Const(c) => T::constant(*c),
                Op::Add(a, b) => vals[*a].add(vals[*b]),
                Op::Sub(a, b) => vals[*a].sub(vals[*b]),
                Op::Mul(a, b) => vals[*a].mul(vals[*b]),
                Op::Div(a, b) => vals[*a].div(vals[*b]),
                Op::Neg(a) => vals[*a].neg(),
                Op::AddConst(a, c) => vals[*a].add_const(*c),
                Op::Scale(c, a) => vals[*a].scale(*c),
                Op::Recip(a) => vals[*a].recip(),
                Op::Powi(a, n) => vals[*a].powi(*n),
                Op::Sin(a) => vals[*a].sin(),
                Op::Cos(a) => vals[*a].cos(),
                Op::Tan(a) => vals[*a].tan(),
                Op::Monotone(f, a) => vals[*a].monotone(*f).map_err(|e| stage_err(stage, op, e))?,
                Op::Custom(s, args) => {
                    let a: Vec<T> = args.iter().map(|&k| vals[k]).collect();
                    T::custom(s.as_ref(), &a).map_err(|e| stage_err(stage, op, e))?
                }
            };
            let v = if self.inflate_ulps > 0 && !matches!(op, Op::Input(_)) {
                v.inflate(self.inflate_ulps)
            } else {
                v
            };
            vals.push(v);
        }
        Ok(self.outputs.iter().map(|&k| vals[k]).collect())
    }

    /// `[e_ℓ] ∘ … ∘ [e₁]([x])`.
    pub fn natural_evaluate(&self, x: &IntervalBox) -> Result<IntervalBox, InclusionError> {
        self.run(x.as_slice()).map(IntervalBox::new)
    }

    pub fn point_evaluate(&self, x: &[f64]) -> Result<Vec<f64>, InclusionError> {
        self.run(x)
    }

    /// Natural inclusion on every cell of a uniform partition of `x`, plus
    /// the hull of the cell outputs. Cells are evaluated in parallel and
    /// reported in [`IntervalBox::split_uniform`] order.
    pub fn partitioned_evaluate(&self, x: &IntervalBox, counts: &[usize]) -> Result<Partitioned, InclusionError> {
        let cells = x.split_uniform(counts)?;
        let outputs = cells
            .par_iter()
            .map(|c| self.natural_evaluate(c))
            .collect::<Result<Vec<_>, _>>()?;
        let hull = IntervalBox::hull_all(&outputs)?;
        Ok(Partitioned { cells, outputs, hull })
    }

    /// Point images of `n` uniform draws from `x`.
    ///
    /// Draws use ChaCha8 seeded with `seed`; each coordinate is drawn in
    /// order with `random_range(lo..=hi)` (degenerate coordinates are
    /// copied), so the images are reproducible across runs and platforms.
    pub fn sample_images(&self, x: &IntervalBox, n: usize, seed: u64) -> Result<Vec<(Vec<f64>, Vec<f64>)>, InclusionError> {
        if !x.is_finite() {
            return Err(InclusionError::UnboundedSampleBox(x.clone()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let p = uniform_point(&mut rng, x);
                let y = self.point_evaluate(&p)?;
                Ok((p, y))
            })
            .collect()
    }

    /// Hull of sampled point images: an inner approximation of the tight
    /// inclusion `[inf f, sup f]` over `x`.
    pub fn sample_oracle(&self, x: &IntervalBox, n_samples: usize, seed: u64) -> Result<IntervalBox, InclusionError> {
        if n_samples == 0 {
            return Err(InclusionError::NoSamples);
        }
        let images = self.sample_images(x, n_samples, seed)?;
        let mut boxes = Vec::with_capacity(images.len());
        for (p, y) in &images {
            if y.iter().any(|v| !v.is_finite()) {
                return Err(InclusionError::NonFiniteImage(p.clone()));
            }
            boxes.push(IntervalBox::point(y));
        }
        Ok(IntervalBox::hull_all(&boxes)?)
    }
}

/// Draws one point uniformly from a finite box.
pub fn uniform_point<R: Rng>(rng: &mut R, x: &IntervalBox) -> Vec<f64> {
    x.iter()
        .map(|a| {
            if a.is_point() {
                a.lo()
            } else {
                rng.random_range(a.lo()..=a.hi())
            }
        })
        .collect()
}

fn stage_err(stage: usize, op: &Op, source: IntervalError) -> InclusionError {
    InclusionError::Stage {
        stage,
        op: op.name(),
        source,
    }
}

fn compile(e: &Expr, n_inputs: usize, tape: &mut Vec<Op>) -> Result<usize, InclusionError> {
    let op = match e {
        Expr::Var(i) => {
            if *i >= n_inputs {
                return Err(InclusionError::UnknownVar { var: *i, inputs: n_inputs });
            }
            return Ok(*i);
        }
        Expr::Const(c) | Expr::AddConst(_, c) | Expr::Scale(c, _) if !c.is_finite() => {
            return Err(InclusionError::NonFiniteConstant(*c));
        }
        Expr::Const(c) => Op::Const(*c),
        Expr::Add(a, b) => Op::Add(compile(a, n_inputs, tape)?, compile(b, n_inputs, tape)?),
        Expr::Sub(a, b) => Op::Sub(compile(a, n_inputs, tape)?, compile(b, n_inputs, tape)?),
        Expr::Mul(a, b) => Op::Mul(compile(a, n_inputs, tape)?, compile(b, n_inputs, tape)?),
        Expr::Div(a, b) => Op::Div(compile(a, n_inputs, tape)?, compile(b, n_inputs, tape)?),
        Expr::Neg(a) => Op::Neg(compile(a, n_inputs, tape)?),
        Expr::AddConst(a, c) => Op::AddConst(compile(a, n_inputs, tape)?, *c),
        Expr::Scale(c, a) => Op::Scale(*c, compile(a, n_inputs, tape)?),
        Expr::Recip(a) => Op::Recip(compile(a, n_inputs, tape)?),
        Expr::Powi(a, n) => Op::Powi(compile(a, n_inputs, tape)?, *n),
        Expr::Sin(a) => Op::Sin(compile(a, n_inputs, tape)?),
        Expr::Cos(a) => Op::Cos(compile(a, n_inputs, tape)?),
        Expr::Tan(a) => Op::Tan(compile(a, n_inputs, tape)?),
        Expr::Monotone(f, a) => Op::Monotone(*f, compile(a, n_inputs, tape)?),
        Expr::Custom(s, args) => {
            if args.len() != s.arity() {
                return Err(InclusionError::StageArity {
                    name: s.name().to_string(),
                    expected: s.arity(),
                    got: args.len(),
                });
            }
            let idx = args
                .iter()
                .map(|a| compile(a, n_inputs, tape))
                .collect::<Result<Vec<_>, _>>()?;
            Op::Custom(s.clone(), idx)
        }
    };
    tape.push(op);
    Ok(tape.len() - 1)
}

impl fmt::Debug for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Recipe")
            .field("n_inputs", &self.n_inputs)
            .field("n_outputs", &self.outputs.len())
            .field("n_stages", &self.n_stages())
            .field("monotone", &self.is_monotone())
            .finish()
    }
}

/// Result of [`Recipe::partitioned_evaluate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Partitioned {
    pub cells: Vec<IntervalBox>,
    pub outputs: Vec<IntervalBox>,
    pub hull: IntervalBox,
}

impl Partitioned {
    /// Is `y` inside at least one per-cell output box?
    pub fn union_contains(&self, y: &[f64]) -> bool {
        self.outputs.iter().any(|b| b.contains_point(y))
    }
}

/// Text form of a recipe: named inputs and one expression per output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeSpec {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl RecipeSpec {
    pub fn compile(&self) -> Result<Recipe, InclusionError> {
        let inputs: Vec<&str> = self.inputs.iter().map(String::as_str).collect();
        let outputs: Vec<&str> = self.outputs.iter().map(String::as_str).collect();
        Recipe::parse(&inputs, &outputs)
    }
}
