//! Interval reachability through embedding systems and forward Euler.
//!
//! The state box `[x̲, x̄]` is advanced as a `2n`-dimensional point: each
//! lower rate is the `i`-th lower output of the dynamics' natural inclusion
//! evaluated on the lower face box, and mirrored for upper rates.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxes::{IntervalBox, Side};
use crate::inclusion::{uniform_point, InclusionError, Recipe};
use crate::neural::{AffineBounds, Network, NeuralError};

#[derive(Debug, Error)]
pub enum ReachError {
    #[error(transparent)]
    Inclusion(#[from] InclusionError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("invalid setup: {0}")]
    Setup(String),
    #[error("t = {t}: lower bound exceeds upper bound in coordinate {coord}")]
    Instability { t: f64, coord: usize },
    #[error("t = {t}: non-finite {side:?} rate in coordinate {coord}")]
    NonFinite { t: f64, coord: usize, side: Side },
    #[error("output {path}: {detail}")]
    Io { path: String, detail: String },
}

/// `ẋ = f(x, u, w)` with the recipe's inputs ordered `(x, u, w)`.
#[derive(Clone, Debug)]
pub struct OpenLoopSystem {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub f: Recipe,
}

impl OpenLoopSystem {
    pub fn new(n: usize, p: usize, q: usize, f: Recipe) -> Result<Self, ReachError> {
        if f.n_inputs() != n + p + q || f.n_outputs() != n {
            return Err(ReachError::Setup(format!(
                "dynamics take {} inputs and give {} outputs, expected {} and {n}",
                f.n_inputs(),
                f.n_outputs(),
                n + p + q
            )));
        }
        Ok(OpenLoopSystem { n, p, q, f })
    }

    pub fn rhs_point(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>, ReachError> {
        let z: Vec<f64> = x.iter().chain(u).chain(w).copied().collect();
        Ok(self.f.point_evaluate(&z)?)
    }

    fn check_dims(&self, x: &IntervalBox, u: &IntervalBox, w: &IntervalBox) -> Result<(), ReachError> {
        if x.dim() != self.n || u.dim() != self.p || w.dim() != self.q {
            return Err(ReachError::Setup(format!(
                "boxes of dimension ({}, {}, {}) for a system with (n, p, q) = ({}, {}, {})",
                x.dim(),
                u.dim(),
                w.dim(),
                self.n,
                self.p,
                self.q
            )));
        }
        Ok(())
    }

    /// Lower (upper) endpoint of output `i` on the `i`-th lower (upper) face.
    fn face_rate(&self, x: &IntervalBox, i: usize, side: Side, u: &IntervalBox, w: &IntervalBox) -> Result<f64, ReachError> {
        let face = x.face(i, side).expect("coordinate in range");
        let y = self.f.natural_evaluate(&IntervalBox::concat(&[&face, u, w]))?;
        let out = y.get(i).expect("n outputs");
        Ok(match side {
            Side::Lower => out.lo(),
            Side::Upper => out.hi(),
        })
    }
}

/// Lower and upper rates of the embedding system at one box.
#[derive(Clone, Debug, PartialEq)]
pub struct Rates {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Open-loop embedding function.
pub fn open_embedding_rhs(sys: &OpenLoopSystem, x: &IntervalBox, u: &IntervalBox, w: &IntervalBox) -> Result<Rates, ReachError> {
    sys.check_dims(x, u, w)?;
    let mut r = Rates {
        lower: Vec::with_capacity(sys.n),
        upper: Vec::with_capacity(sys.n),
    };
    for i in 0..sys.n {
        r.lower.push(sys.face_rate(x, i, Side::Lower, u, w)?);
        r.upper.push(sys.face_rate(x, i, Side::Upper, u, w)?);
    }
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    /// Backward linear relaxation on the box at each control instant.
    CrownLocalized,
    /// Interval bound propagation on every queried box.
    IbpGlobal,
}

/// How the controller output enters the embedding between control instants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Zero-order hold. At a control instant the rates use face-wise
    /// controller bounds; for the rest of the hold the control is the
    /// fixed interval `[N]([x](t_k))` and the open-loop embedding is used.
    #[default]
    Sampled,
    /// `u = N(x)` applied continuously. Every step evaluates the hybrid
    /// face-wise embedding with the bounds of the last control instant,
    /// falling back to interval propagation on faces outside its region.
    Continuous,
}

/// Interval signal indexed by Euler step; the last entry is held.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule(Vec<IntervalBox>);

impl Schedule {
    pub fn constant(b: IntervalBox) -> Self {
        Schedule(vec![b])
    }

    /// No signal (dimension zero).
    pub fn none() -> Self {
        Schedule(vec![IntervalBox::new(vec![])])
    }

    pub fn per_step(boxes: Vec<IntervalBox>) -> Result<Self, ReachError> {
        let dim = boxes.first().ok_or_else(|| ReachError::Setup("empty schedule".into()))?.dim();
        if boxes.iter().any(|b| b.dim() != dim || !b.is_finite()) {
            return Err(ReachError::Setup("schedule boxes must be finite with equal dimension".into()));
        }
        Ok(Schedule(boxes))
    }

    pub fn dim(&self) -> usize {
        self.0[0].dim()
    }

    pub fn at(&self, step: usize) -> &IntervalBox {
        &self.0[step.min(self.0.len() - 1)]
    }
}

/// Controller bounds valid for the current hold.
#[derive(Clone, Debug)]
pub enum ControllerBounds {
    Crown(AffineBounds),
    Ibp,
}

impl ControllerBounds {
    /// Control interval on `x` and whether the IBP fallback was needed.
    pub fn control(&self, net: &Network, x: &IntervalBox) -> Result<(IntervalBox, bool), ReachError> {
        match self {
            ControllerBounds::Ibp => Ok((net.ibp(x)?, false)),
            ControllerBounds::Crown(b) => match b.localized(x) {
                Ok(u) => Ok((u, false)),
                Err(NeuralError::NotLocalized { .. }) => Ok((net.ibp(x)?, true)),
                Err(e) => Err(e.into()),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClosedLoopSetup {
    pub system: OpenLoopSystem,
    pub controller: Network,
    pub control_period: f64,
    pub disturbance: Schedule,
    pub method: BoundMethod,
    pub feedback: FeedbackMode,
}

impl ClosedLoopSetup {
    pub fn validate(&self) -> Result<(), ReachError> {
        let s = &self.system;
        if self.controller.input_dim() != s.n || self.controller.output_dim() != s.p {
            return Err(ReachError::Setup(format!(
                "controller maps R^{} to R^{}, system needs R^{} to R^{}",
                self.controller.input_dim(),
                self.controller.output_dim(),
                s.n,
                s.p
            )));
        }
        if !(self.control_period > 0.0) {
            return Err(ReachError::Setup("control period must be positive".into()));
        }
        if self.disturbance.dim() != s.q {
            return Err(ReachError::Setup(format!(
                "disturbance has dimension {}, system expects {}",
                self.disturbance.dim(),
                s.q
            )));
        }
        Ok(())
    }

    pub fn bounds_on(&self, region: &IntervalBox) -> Result<ControllerBounds, ReachError> {
        Ok(match self.method {
            BoundMethod::CrownLocalized => ControllerBounds::Crown(self.controller.crown(region)?),
            BoundMethod::IbpGlobal => ControllerBounds::Ibp,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FallbackEvent {
    pub t: f64,
    pub coord: usize,
    pub side: Side,
}

/// Hybrid closed-loop embedding function: the control interval of each
/// face is the controller bound evaluated on that face.
pub fn closed_embedding_rhs(
    setup: &ClosedLoopSetup,
    x: &IntervalBox,
    w: &IntervalBox,
    bounds: &ControllerBounds,
) -> Result<(Rates, Vec<(usize, Side)>), ReachError> {
    let sys = &setup.system;
    let mut fallbacks = Vec::new();
    let mut rates = Rates {
        lower: vec![0.0; sys.n],
        upper: vec![0.0; sys.n],
    };
    for i in 0..sys.n {
        for side in [Side::Lower, Side::Upper] {
            let face = x.face(i, side).map_err(|e| ReachError::Setup(e.to_string()))?;
            let (u, fell_back) = bounds.control(&setup.controller, &face)?;
            if fell_back {
                fallbacks.push((i, side));
            }
            sys.check_dims(x, &u, w)?;
            let r = sys.face_rate(x, i, side, &u, w)?;
            match side {
                Side::Lower => rates.lower[i] = r,
                Side::Upper => rates.upper[i] = r,
            }
        }
    }
    Ok((rates, fallbacks))
}

/// Forward-Euler time grid `t0 + k h`, `k = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub h: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, h: f64) -> Result<Self, ReachError> {
        if !(h > 0.0) || !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
            return Err(ReachError::Setup(format!("bad time grid t0={t0}, t_end={t_end}, h={h}")));
        }
        let ratio = (t_end - t0) / h;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(ReachError::Setup(format!("horizon {} is not a multiple of h = {h}", t_end - t0)));
        }
        Ok(TimeGrid {
            t0,
            h,
            steps: steps as usize,
        })
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Number of Euler steps per control period.
    pub fn steps_per(&self, period: f64) -> Result<usize, ReachError> {
        let r = period / self.h;
        let k = r.round();
        if k < 1.0 || (r - k).abs() > 1e-9 * r {
            return Err(ReachError::Setup(format!(
                "control period {period} is not a positive multiple of h = {}",
                self.h
            )));
        }
        Ok(k as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TubeMeta {
    pub step: f64,
    pub control_instants: Vec<f64>,
    pub seed: Option<u64>,
    pub wall_clock_secs: f64,
    pub fallback_events: Vec<FallbackEvent>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReachTube {
    pub times: Vec<f64>,
    pub boxes: Vec<IntervalBox>,
    pub meta: TubeMeta,
}

#[derive(Serialize, Deserialize)]
struct TubeRecord {
    t: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ReachTube {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &IntervalBox {
        self.boxes.last().expect("tube has its initial box")
    }

    /// Coordinate selection of every box (for plotting).
    pub fn project(&self, coords: &[usize]) -> Vec<IntervalBox> {
        self.boxes
            .iter()
            .map(|b| IntervalBox::new(coords.iter().map(|&c| b.as_slice()[c]).collect()))
            .collect()
    }

    /// Whether `x` at grid index `k` lies in the tube.
    pub fn contains(&self, k: usize, x: &[f64]) -> bool {
        self.boxes[k].contains_point(x)
    }

    /// One `{t, lower, upper}` record per line.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for (t, b) in self.times.iter().zip(&self.boxes) {
            let rec = TubeRecord {
                t: *t,
                lower: b.lower(),
                upper: b.upper(),
            };
            s.push_str(&serde_json::to_string(&rec).expect("finite tube"));
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let n = self.boxes.first().map_or(0, IntervalBox::dim);
        let mut s = String::from("t");
        for side in ["lo", "hi"] {
            for i in 1..=n {
                write!(s, ",{side}_{i}").unwrap();
            }
        }
        s.push('\n');
        for (t, b) in self.times.iter().zip(&self.boxes) {
            write!(s, "{t:?}").unwrap();
            for v in b.lower().into_iter().chain(b.upper()) {
                write!(s, ",{v:?}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Reads the line-delimited form back (metadata is not stored there).
    pub fn from_jsonl(text: &str) -> Result<Self, ReachError> {
        let bad = |d: String| ReachError::Io {
            path: "<jsonl>".into(),
            detail: d,
        };
        let mut times = Vec::new();
        let mut boxes = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let rec: TubeRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            times.push(rec.t);
            boxes.push(IntervalBox::from_bounds(&rec.lower, &rec.upper).map_err(|e| bad(e.to_string()))?);
        }
        let step = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
        Ok(ReachTube {
            times,
            boxes,
            meta: TubeMeta {
                step,
                control_instants: vec![],
                seed: None,
                wall_clock_secs: 0.0,
                fallback_events: vec![],
            },
        })
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), ReachError> {
        write_file(path.as_ref(), &self.to_jsonl())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), ReachError> {
        write_file(path.as_ref(), &self.to_csv())
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), ReachError> {
    fs::write(path, text).map_err(|e| ReachError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn euler_step(x: &IntervalBox, r: &Rates, h: f64, t_next: f64) -> Result<IntervalBox, ReachError> {
    let mut out = Vec::with_capacity(x.dim());
    for (i, a) in x.iter().enumerate() {
        for (side, v) in [(Side::Lower, r.lower[i]), (Side::Upper, r.upper[i])] {
            if !v.is_finite() {
                return Err(ReachError::NonFinite {
                    t: t_next - h,
                    coord: i,
                    side,
                });
            }
        }
        let lo = a.lo() + h * r.lower[i];
        let hi = a.hi() + h * r.upper[i];
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(ReachError::Instability { t: t_next, coord: i });
        }
        out.push(crate::interval::Interval::new(lo, hi).expect("checked ordered and finite"));
    }
    Ok(IntervalBox::new(out))
}

fn check_initial(x0: &IntervalBox, n: usize) -> Result<(), ReachError> {
    if x0.dim() != n || !x0.is_finite() {
        return Err(ReachError::Setup(format!("initial box {x0} must be finite with dimension {n}")));
    }
    Ok(())
}

/// Closed-loop reach tube under zero-order-hold control.
pub fn euler_reach(setup: &ClosedLoopSetup, x0: &IntervalBox, grid: TimeGrid) -> Result<ReachTube, ReachError> {
    setup.validate()?;
    check_initial(x0, setup.system.n)?;
    let start = Instant::now();
    let spc = grid.steps_per(setup.control_period)?;
    let mut x = x0.clone();
    let mut boxes = vec![x.clone()];
    let mut instants = Vec::new();
    let mut events = Vec::new();
    let mut bounds = ControllerBounds::Ibp;
    let mut held = IntervalBox::new(vec![]);
    for k in 0..grid.steps {
        let t = grid.time(k);
        let w = setup.disturbance.at(k);
        let at_instant = k % spc == 0;
        if at_instant {
            instants.push(t);
            bounds = setup.bounds_on(&x)?;
            held = bounds.control(&setup.controller, &x)?.0;
        }
        let rates = if at_instant || setup.feedback == FeedbackMode::Continuous {
            let (r, fb) = closed_embedding_rhs(setup, &x, w, &bounds)?;
            events.extend(fb.into_iter().map(|(coord, side)| FallbackEvent { t, coord, side }));
            r
        } else {
            open_embedding_rhs(&setup.system, &x, &held, w)?
        };
        x = euler_step(&x, &rates, grid.h, grid.time(k + 1))?;
        boxes.push(x.clone());
    }
    Ok(ReachTube {
        times: grid.times(),
        boxes,
        meta: TubeMeta {
            step: grid.h,
            control_instants: instants,
            seed: None,
            wall_clock_secs: start.elapsed().as_secs_f64(),
            fallback_events: events,
        },
    })
}

/// Open-loop reach tube under interval control and disturbance schedules.
pub fn open_reach_with_global_u(
    sys: &OpenLoopSystem,
    x0: &IntervalBox,
    u: &Schedule,
    w: &Schedule,
    grid: TimeGrid,
) -> Result<ReachTube, ReachError> {
    check_initial(x0, sys.n)?;
    let start = Instant::now();
    let mut x = x0.clone();
    let mut boxes = vec![x.clone()];
    for k in 0..grid.steps {
        let rates = open_embedding_rhs(sys, &x, u.at(k), w.at(k))?;
        x = euler_step(&x, &rates, grid.h, grid.time(k + 1))?;
        boxes.push(x.clone());
    }
    Ok(ReachTube {
        times: grid.times(),
        boxes,
        meta: TubeMeta {
            step: grid.h,
            control_instants: vec![],
            seed: None,
            wall_clock_secs: start.elapsed().as_secs_f64(),
            fallback_events: vec![],
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub trajectory: usize,
    pub step: usize,
    pub coord: usize,
    pub value: f64,
}

/// Monte-Carlo containment audit.
///
/// `min_slack[i]` is the smallest distance of any sampled state to the
/// nearer tube face in coordinate `i` (negative on violation);
/// `max_slack[i]` the largest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McReport {
    pub n_traj: usize,
    pub seed: u64,
    pub violations: Vec<Violation>,
    pub min_slack: Vec<f64>,
    pub max_slack: Vec<f64>,
    pub min_speed: Option<f64>,
    #[serde(skip)]
    pub trajectories: Vec<Vec<Vec<f64>>>,
}

impl McReport {
    pub fn is_contained(&self) -> bool {
        self.violations.is_empty()
    }
}

enum Policy<'a> {
    Feedback(&'a ClosedLoopSetup),
    Open(&'a Schedule),
}

fn simulate(
    sys: &OpenLoopSystem,
    policy: &Policy<'_>,
    w: &Schedule,
    x0: &IntervalBox,
    grid: TimeGrid,
    seed: u64,
    traj: usize,
) -> Result<Vec<Vec<f64>>, ReachError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(traj as u64);
    let mut x = uniform_point(&mut rng, x0);
    let mut path = vec![x.clone()];
    let spc = match policy {
        Policy::Feedback(s) => match s.feedback {
            FeedbackMode::Sampled => grid.steps_per(s.control_period)?,
            FeedbackMode::Continuous => 1,
        },
        Policy::Open(_) => 1,
    };
    let mut u = Vec::new();
    for k in 0..grid.steps {
        if k % spc == 0 {
            u = match policy {
                Policy::Feedback(s) => s.controller.forward(&x)?,
                Policy::Open(sched) => uniform_point(&mut rng, sched.at(k)),
            };
        }
        let wk = uniform_point(&mut rng, w.at(k));
        let dx = sys.rhs_point(&x, &u, &wk)?;
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += grid.h * d;
        }
        path.push(x.clone());
    }
    Ok(path)
}

fn audit(tube: &ReachTube, paths: Vec<Vec<Vec<f64>>>, seed: u64, speed_coord: Option<usize>) -> McReport {
    let n = tube.boxes[0].dim();
    let mut violations = Vec::new();
    let mut min_slack = vec![f64::INFINITY; n];
    let mut max_slack = vec![f64::NEG_INFINITY; n];
    let mut min_speed: Option<f64> = None;
    for (j, path) in paths.iter().enumerate() {
        for (k, x) in path.iter().enumerate() {
            for (i, (&v, a)) in x.iter().zip(tube.boxes[k].iter()).enumerate() {
                let slack = (v - a.lo()).min(a.hi() - v);
                min_slack[i] = min_slack[i].min(slack);
                max_slack[i] = max_slack[i].max(slack);
                if !a.contains(v) {
                    violations.push(Violation {
                        trajectory: j,
                        step: k,
                        coord: i,
                        value: v,
                    });
                }
            }
            if let Some(c) = speed_coord {
                min_speed = Some(min_speed.map_or(x[c], |m: f64| m.min(x[c])));
            }
        }
    }
    McReport {
        n_traj: paths.len(),
        seed,
        violations,
        min_slack,
        max_slack,
        min_speed,
        trajectories: paths,
    }
}

fn check_grid(tube: &ReachTube, grid: &TimeGrid) -> Result<(), ReachError> {
    if tube.times.len() != grid.steps + 1 {
        return Err(ReachError::Setup(format!(
            "tube has {} grid times, simulation has {}",
            tube.times.len(),
            grid.steps + 1
        )));
    }
    Ok(())
}

/// Simulates `n_traj` sampled closed-loop trajectories and audits them
/// against `tube`. Trajectory `j` uses stream `j` of the seeded generator.
pub fn mc_check(
    setup: &ClosedLoopSetup,
    x0: &IntervalBox,
    grid: TimeGrid,
    n_traj: usize,
    seed: u64,
    tube: &ReachTube,
) -> Result<McReport, ReachError> {
    mc_check_monitored(setup, x0, grid, n_traj, seed, tube, None)
}

/// As [`mc_check`], additionally tracking the minimum of one coordinate.
pub fn mc_check_monitored(
    setup: &ClosedLoopSetup,
    x0: &IntervalBox,
    grid: TimeGrid,
    n_traj: usize,
    seed: u64,
    tube: &ReachTube,
    monitor: Option<usize>,
) -> Result<McReport, ReachError> {
    setup.validate()?;
    check_grid(tube, &grid)?;
    let policy = Policy::Feedback(setup);
    let paths = (0..n_traj)
        .into_par_iter()
        .map(|j| simulate(&setup.system, &policy, &setup.disturbance, x0, grid, seed, j))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(audit(tube, paths, seed, monitor))
}

/// Open-loop audit: control drawn per step from `u`, disturbance from `w`.
pub fn mc_check_open(
    sys: &OpenLoopSystem,
    x0: &IntervalBox,
    u: &Schedule,
    w: &Schedule,
    grid: TimeGrid,
    n_traj: usize,
    seed: u64,
    tube: &ReachTube,
) -> Result<McReport, ReachError> {
    check_grid(tube, &grid)?;
    let policy = Policy::Open(u);
    let paths = (0..n_traj)
        .into_par_iter()
        .map(|j| simulate(sys, &policy, w, x0, grid, seed, j))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(audit(tube, paths, seed, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::Interval;
    use crate::neural::{Activation, Layer, Matrix};

    fn sys(n: usize, p: usize, q: usize, outs: &[&str], names: &[&str]) -> OpenLoopSystem {
        OpenLoopSystem::new(n, p, q, Recipe::parse(names, outs).unwrap()).unwrap()
    }

    fn bx(lo: &[f64], hi: &[f64]) -> IntervalBox {
        IntervalBox::from_bounds(lo, hi).unwrap()
    }

    fn none() -> IntervalBox {
        IntervalBox::new(vec![])
    }

    #[test]
    fn open_rhs_examples() {
        let s = sys(1, 1, 0, &["u"], &["x", "u"]);
        let r = open_embedding_rhs(&s, &bx(&[-5.0], &[5.0]), &bx(&[-1.0], &[2.0]), &none()).unwrap();
        assert_eq!(r, Rates { lower: vec![-1.0], upper: vec![2.0] });
        let s = sys(1, 0, 0, &["x"], &["x"]);
        let r = open_embedding_rhs(&s, &bx(&[1.0], &[3.0]), &none(), &none()).unwrap();
        assert_eq!(r, Rates { lower: vec![1.0], upper: vec![3.0] });
        let bad = open_embedding_rhs(&s, &bx(&[1.0, 2.0], &[3.0, 4.0]), &none(), &none());
        assert!(matches!(bad, Err(ReachError::Setup(_))));
    }

    #[test]
    fn open_rhs_negation_matches_face_brute_force() {
        // f = (-x1, x1 - x2): brute-force min/max of f_i on face i
        let s = sys(2, 0, 0, &["-x1", "x1 - x2"], &["x1", "x2"]);
        let x = bx(&[1.0, -2.0], &[3.0, 0.5]);
        let r = open_embedding_rhs(&s, &x, &none(), &none()).unwrap();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for i in 0..2 {
            for side in [Side::Lower, Side::Upper] {
                let face = x.face(i, side).unwrap();
                let (fl, fu) = (face.lower(), face.upper());
                for a in 0..=50 {
                    for b in 0..=50 {
                        let p = [fl[0] + (fu[0] - fl[0]) * a as f64 / 50.0, fl[1] + (fu[1] - fl[1]) * b as f64 / 50.0];
                        let v = [-p[0], p[0] - p[1]][i];
                        match side {
                            Side::Lower => lo[i] = lo[i].min(v),
                            Side::Upper => hi[i] = hi[i].max(v),
                        }
                    }
                }
            }
        }
        assert_eq!(r.lower, lo.to_vec());
        assert_eq!(r.upper, hi.to_vec());
        assert_eq!(r.lower[0], -1.0);
        assert_eq!(r.upper[0], -3.0);
    }

    #[test]
    fn pole_aborts() {
        let s = sys(1, 1, 0, &["tan(u)"], &["x", "u"]);
        let u = Schedule::constant(bx(&[1.0], &[2.0]));
        let grid = TimeGrid::new(0.0, 0.1, 0.05).unwrap();
        let err = open_reach_with_global_u(&s, &bx(&[0.0], &[0.0]), &u, &Schedule::none(), grid).unwrap_err();
        assert!(matches!(err, ReachError::NonFinite { coord: 0, .. }), "{err}");
    }

    #[test]
    fn euler_examples() {
        let zero = sys(2, 0, 0, &["0", "0"], &["x1", "x2"]);
        let x0 = bx(&[1.0, -1.0], &[2.0, 1.0]);
        let grid = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
        let tube = open_reach_with_global_u(&zero, &x0, &Schedule::none(), &Schedule::none(), grid).unwrap();
        assert_eq!(tube.len(), 11);
        assert!(tube.boxes.iter().all(|b| *b == x0));

        let decay = sys(1, 0, 0, &["-x"], &["x"]);
        let grid = TimeGrid::new(0.0, 0.05, 0.05).unwrap();
        let tube = open_reach_with_global_u(&decay, &bx(&[1.0], &[2.0]), &Schedule::none(), &Schedule::none(), grid).unwrap();
        assert_eq!(tube.boxes[1], bx(&[0.95], &[1.9]));

        let lin = sys(1, 1, 0, &["u"], &["x", "u"]);
        let grid = TimeGrid::new(0.0, 1.0, 0.25).unwrap();
        let u = Schedule::constant(bx(&[-1.0], &[2.0]));
        let tube = open_reach_with_global_u(&lin, &bx(&[0.0], &[0.0]), &u, &Schedule::none(), grid).unwrap();
        for (k, b) in tube.boxes.iter().enumerate() {
            assert_eq!(*b, bx(&[-0.25 * k as f64], &[0.5 * k as f64]));
        }
    }

    #[test]
    fn instability_reports_time() {
        // lower rate 0, upper rate -x - 10 on [0,0]: upper drops below lower
        let s = sys(1, 1, 0, &["u"], &["x", "u"]);
        let u = Schedule::constant(bx(&[1.0], &[1.0]));
        let grid = TimeGrid::new(0.0, 1.0, 0.5).unwrap();
        let x0 = bx(&[0.0], &[0.0]);
        let tube = open_reach_with_global_u(&s, &x0, &u, &Schedule::none(), grid).unwrap();
        assert_eq!(tube.last(), &bx(&[1.0], &[1.0]));
        let r = euler_step(&x0, &Rates { lower: vec![0.0], upper: vec![-1.0] }, 0.5, 0.5);
        assert!(matches!(r, Err(ReachError::Instability { t, coord: 0 }) if t == 0.5));
    }

    #[test]
    fn grid_validation() {
        assert_eq!(TimeGrid::new(0.0, 1.25, 0.05).unwrap().steps, 25);
        assert!(TimeGrid::new(0.0, 1.0, 0.3).is_err());
        assert!(TimeGrid::new(1.0, 0.0, 0.1).is_err());
        let g = TimeGrid::new(0.0, 1.25, 0.05).unwrap();
        assert_eq!(g.steps_per(0.25).unwrap(), 5);
        assert!(g.steps_per(0.07).is_err());
    }

    fn const_setup(c: f64, method: BoundMethod) -> ClosedLoopSetup {
        ClosedLoopSetup {
            system: sys(1, 1, 0, &["u - x"], &["x", "u"]),
            controller: Network::constant(1, &[c]).unwrap(),
            control_period: 0.1,
            disturbance: Schedule::none(),
            method,
            feedback: FeedbackMode::Sampled,
        }
    }

    #[test]
    fn constant_controller_reduces_to_open_loop() {
        for method in [BoundMethod::CrownLocalized, BoundMethod::IbpGlobal] {
            let setup = const_setup(0.5, method);
            let x = bx(&[-1.0], &[2.0]);
            let b = setup.bounds_on(&x).unwrap();
            let (closed, fb) = closed_embedding_rhs(&setup, &x, &none(), &b).unwrap();
            let open = open_embedding_rhs(&setup.system, &x, &bx(&[0.5], &[0.5]), &none()).unwrap();
            assert_eq!(closed, open);
            assert!(fb.is_empty());
        }
    }

    #[test]
    fn identity_bounds_give_face_rates() {
        let setup = ClosedLoopSetup {
            system: sys(1, 1, 0, &["u"], &["x", "u"]),
            controller: Network::new(vec![Layer::new(Matrix::identity(1), vec![0.0], Activation::Identity)]).unwrap(),
            control_period: 0.1,
            disturbance: Schedule::none(),
            method: BoundMethod::CrownLocalized,
            feedback: FeedbackMode::Sampled,
        };
        let x = bx(&[-1.0], &[2.0]);
        let b = setup.bounds_on(&x).unwrap();
        let (r, _) = closed_embedding_rhs(&setup, &x, &none(), &b).unwrap();
        assert_eq!(r, Rates { lower: vec![-1.0], upper: vec![2.0] });
    }

    #[test]
    fn localization_fallback_is_recorded() {
        let mut setup = const_setup(0.0, BoundMethod::CrownLocalized);
        setup.controller = Network::random(&[1, 8, 1], 3).unwrap();
        setup.feedback = FeedbackMode::Continuous;
        let region = bx(&[0.0], &[1.0]);
        let b = setup.bounds_on(&region).unwrap();
        let (_, fb) = closed_embedding_rhs(&setup, &bx(&[0.5], &[1.5]), &none(), &b).unwrap();
        assert_eq!(fb, vec![(0, Side::Upper)]);
        let (u, fell) = b.control(&setup.controller, &bx(&[2.0], &[3.0])).unwrap();
        assert!(fell);
        assert_eq!(u, setup.controller.ibp(&bx(&[2.0], &[3.0])).unwrap());
    }

    #[test]
    fn closed_rhs_brackets_face_samples() {
        // 2-state toy: x1' = x2 + u, x2' = -x1 + 0.5 u + w
        let system = sys(2, 1, 1, &["x2 + u", "-x1 + 0.5*u + w"], &["x1", "x2", "u", "w"]);
        let setup = ClosedLoopSetup {
            system,
            controller: Network::random(&[2, 16, 16, 1], 11).unwrap(),
            control_period: 0.1,
            disturbance: Schedule::constant(bx(&[-0.1], &[0.1])),
            method: BoundMethod::CrownLocalized,
            feedback: FeedbackMode::Sampled,
        };
        let x = bx(&[-0.5, 0.2], &[0.1, 0.6]);
        let w = bx(&[-0.1], &[0.1]);
        let b = setup.bounds_on(&x).unwrap();
        let (r, _) = closed_embedding_rhs(&setup, &x, &w, &b).unwrap();
        for i in 0..2 {
            for side in [Side::Lower, Side::Upper] {
                let face = x.face(i, side).unwrap();
                for a in 0..=20 {
                    for wi in [-0.1, 0.0, 0.1] {
                        let mut z = face.lower();
                        let j = 1 - i;
                        z[j] = face.lower()[j] + (face.upper()[j] - face.lower()[j]) * a as f64 / 20.0;
                        let u = setup.controller.forward(&z).unwrap();
                        let d = setup.system.rhs_point(&z, &u, &[wi]).unwrap();
                        match side {
                            Side::Lower => assert!(r.lower[i] <= d[i]),
                            Side::Upper => assert!(d[i] <= r.upper[i]),
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn closed_loop_tube_contains_mc_and_degenerates() {
        let system = sys(2, 1, 1, &["x2", "-x1 - 0.5*x2 + u + w"], &["x1", "x2", "u", "w"]);
        for feedback in [FeedbackMode::Sampled, FeedbackMode::Continuous] {
            for method in [BoundMethod::CrownLocalized, BoundMethod::IbpGlobal] {
                let setup = ClosedLoopSetup {
                    system: system.clone(),
                    controller: Network::random(&[2, 16, 1], 7).unwrap(),
                    control_period: 0.2,
                    disturbance: Schedule::constant(bx(&[-0.05], &[0.05])),
                    method,
                    feedback,
                };
                let x0 = bx(&[0.9, -0.1], &[1.1, 0.1]);
                let grid = TimeGrid::new(0.0, 2.0, 0.05).unwrap();
                let tube = euler_reach(&setup, &x0, grid).unwrap();
                assert_eq!(tube.boxes[0], x0);
                assert_eq!(tube.meta.control_instants.len(), 10);
                let rep = mc_check(&setup, &x0, grid, 50, 1, &tube).unwrap();
                assert!(rep.is_contained(), "{feedback:?} {method:?}: {:?}", rep.violations.first());
                assert!(rep.min_slack.iter().all(|s| *s >= 0.0));
            }
        }
    }

    #[test]
    fn point_tube_equals_point_trajectory_bitwise() {
        let system = sys(2, 1, 0, &["x2", "-sin(x1) + u"], &["x1", "x2", "u"]);
        let setup = ClosedLoopSetup {
            system,
            controller: Network::random(&[2, 16, 1], 2).unwrap(),
            control_period: 0.2,
            disturbance: Schedule::none(),
            method: BoundMethod::IbpGlobal,
            feedback: FeedbackMode::Sampled,
        };
        let x0 = IntervalBox::point(&[0.3, -0.2]);
        let grid = TimeGrid::new(0.0, 1.0, 0.05).unwrap();
        let tube = euler_reach(&setup, &x0, grid).unwrap();
        let rep = mc_check(&setup, &x0, grid, 1, 0, &tube).unwrap();
        for (b, x) in tube.boxes.iter().zip(&rep.trajectories[0]) {
            assert_eq!(*b, IntervalBox::point(x));
        }
    }

    #[test]
    fn mc_edge_cases() {
        let setup = const_setup(0.0, BoundMethod::IbpGlobal);
        let x0 = bx(&[0.0], &[1.0]);
        let grid = TimeGrid::new(0.0, 0.5, 0.1).unwrap();
        let tube = euler_reach(&setup, &x0, grid).unwrap();
        let rep = mc_check(&setup, &x0, grid, 0, 0, &tube).unwrap();
        assert_eq!(rep.n_traj, 0);
        assert!(rep.is_contained());
        let short = TimeGrid::new(0.0, 0.2, 0.1).unwrap();
        assert!(mc_check(&setup, &x0, short, 1, 0, &tube).is_err());
    }

    #[test]
    fn tube_text_formats() {
        let tube = ReachTube {
            times: vec![0.0, 0.5],
            boxes: vec![bx(&[0.0, 1.0], &[0.5, 2.0]), bx(&[0.1, 1.0], &[0.6, 2.5])],
            meta: TubeMeta {
                step: 0.5,
                control_instants: vec![0.0],
                seed: Some(1),
                wall_clock_secs: 0.01,
                fallback_events: vec![],
            },
        };
        let j = tube.to_jsonl();
        assert_eq!(
            j,
            "{\"t\":0.0,\"lower\":[0.0,1.0],\"upper\":[0.5,2.0]}\n{\"t\":0.5,\"lower\":[0.1,1.0],\"upper\":[0.6,2.5]}\n"
        );
        let back = ReachTube::from_jsonl(&j).unwrap();
        assert_eq!(back.boxes, tube.boxes);
        assert_eq!(tube.to_csv(), "t,lo_1,lo_2,hi_1,hi_2\n0.0,0.0,1.0,0.5,2.0\n0.5,0.1,1.0,0.6,2.5\n");
        let pr = tube.project(&[1]);
        assert_eq!(pr[1], IntervalBox::new(vec![Interval::new(1.0, 2.5).unwrap()]));
    }
}
