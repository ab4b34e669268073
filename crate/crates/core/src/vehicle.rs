//! Kinematic bicycle model.
//!
//! State `(p_x, p_y, φ, v)`, input `(u₁, u₂)`:
//!
//! ```text
//! ṗx = v cos(φ + β)    φ̇ = (v / ℓr) sin β
//! ṗy = v sin(φ + β)    v̇ = u₁
//! β  = arctan(ℓf / (ℓf + ℓr) · tan u₂)
//! ```

use crate::boxes::IntervalBox;
use crate::inclusion::{Expr, Recipe};
use crate::interval::{cos, sin, Interval};
use crate::reach::{OpenLoopSystem, ReachError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleModel {
    pub lf: f64,
    pub lr: f64,
}

impl Default for VehicleModel {
    fn default() -> Self {
        VehicleModel { lf: 1.0, lr: 1.0 }
    }
}

impl VehicleModel {
    pub fn new(lf: f64, lr: f64) -> Result<Self, ReachError> {
        if !(lf > 0.0 && lr > 0.0 && lf.is_finite() && lr.is_finite()) {
            return Err(ReachError::Setup(format!("wheelbase lengths must be positive, got lf={lf}, lr={lr}")));
        }
        Ok(VehicleModel { lf, lr })
    }

    fn ratio(&self) -> f64 {
        self.lf / (self.lf + self.lr)
    }

    fn slip_expr(&self, u2: Expr) -> Expr {
        (self.ratio() * u2.tan()).atan()
    }

    /// Dynamics over inputs `(px, py, phi, v, u1, u2)`.
    pub fn recipe(&self) -> Recipe {
        let v = Expr::var(3);
        let phi = Expr::var(2);
        let beta = self.slip_expr(Expr::var(5));
        let outputs = vec![
            v.clone() * (phi.clone() + beta.clone()).cos(),
            v.clone() * (phi + beta.clone()).sin(),
            (v / self.lr) * beta.sin(),
            Expr::var(4),
        ];
        Recipe::new(6, outputs).expect("vehicle recipe is well formed")
    }

    pub fn system(&self) -> OpenLoopSystem {
        OpenLoopSystem::new(4, 2, 0, self.recipe()).expect("dimensions match")
    }

    pub fn slip(&self, u2: f64) -> f64 {
        (self.ratio() * u2.tan()).atan()
    }

    /// Slip-angle interval and whether the steering interval reached a
    /// pole of `tan` (the arctangent stage then saturates at `±π/2`).
    pub fn slip_interval(&self, u2: Interval) -> (Interval, bool) {
        let t = u2.tan();
        (t.scale(self.ratio()).atan(), !t.is_finite())
    }

    pub fn rhs(&self, x: &[f64], u: &[f64]) -> [f64; 4] {
        let beta = self.slip(u[1]);
        [
            x[3] * cos(x[2] + beta),
            x[3] * sin(x[2] + beta),
            (x[3] / self.lr) * sin(beta),
            u[0],
        ]
    }

    /// Natural inclusion of the right-hand side on `(x, u)`.
    pub fn rhs_interval(&self, x: &IntervalBox, u: &IntervalBox) -> Result<IntervalBox, ReachError> {
        Ok(self.recipe().natural_evaluate(&IntervalBox::concat(&[x, u]))?)
    }
}
