//! Interval arithmetic with tight inclusion functions, natural inclusion
//! functions by composition, and interval reachability of
//! neural-network-controlled systems via embedding dynamics.

pub mod bench;
pub mod boxes;
pub mod inclusion;
pub mod interval;
pub mod neural;
pub mod reach;
pub mod tensor;
pub mod vehicle;

pub use boxes::{replace_component, IntervalBox, Side};
pub use inclusion::{Expr, InclusionError, Partitioned, Recipe, RecipeSpec, Stage};
pub use interval::{Interval, IntervalError, Monotone};
pub use tensor::{IntervalTensor, TensorError};
