//! Scenario configuration and the two benchmark drivers.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxes::IntervalBox;
use crate::inclusion::{InclusionError, Partitioned, Recipe};
use crate::interval::Interval;
use crate::neural::{Network, NeuralError};
use crate::reach::{
    euler_reach, mc_check_monitored, write_file, BoundMethod, ClosedLoopSetup, FeedbackMode, McReport, OpenLoopSystem,
    ReachError, ReachTube, Schedule, TimeGrid, TubeMeta,
};
use crate::vehicle::VehicleModel;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Inclusion(#[from] InclusionError),
}

impl BenchError {
    /// Whether the failure came from the verification itself (pole hit,
    /// unstable embedding) rather than from bad input.
    pub fn is_verification_abort(&self) -> bool {
        matches!(
            self,
            BenchError::Reach(ReachError::Instability { .. } | ReachError::NonFinite { .. })
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub lf: f64,
    pub lr: f64,
}

/// Custom dynamics: one expression per state over the named variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    pub state: Vec<String>,
    #[serde(default)]
    pub control: Vec<String>,
    #[serde(default)]
    pub disturbance: Vec<String>,
    pub rhs: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub tube: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub mc: Option<PathBuf>,
    pub projection: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
    pub fig1: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// `"vehicle"` or `"custom"`.
    #[serde(default = "default_system")]
    pub system: String,
    pub vehicle: Option<VehicleParams>,
    pub dynamics: Option<DynamicsSpec>,
    pub initial_box: Vec<[f64; 2]>,
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    pub h: f64,
    pub control_period: f64,
    #[serde(default)]
    pub disturbance: Vec<[f64; 2]>,
    pub network: Option<PathBuf>,
    #[serde(default = "default_dims")]
    pub net_dims: Vec<usize>,
    #[serde(default)]
    pub net_seed: u64,
    #[serde(default = "default_method")]
    pub bound_method: BoundMethod,
    #[serde(default)]
    pub feedback: FeedbackMode,
    #[serde(default)]
    pub seed: u64,
    pub partition: Option<Vec<usize>>,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub output: OutputPaths,
}

fn default_system() -> String {
    "vehicle".into()
}

fn default_dims() -> Vec<usize> {
    vec![4, 100, 100, 2]
}

fn default_method() -> BoundMethod {
    BoundMethod::CrownLocalized
}

fn default_n_traj() -> usize {
    100
}

fn default_repeats() -> usize {
    1
}

impl BenchConfig {
    /// The vehicle scenario: 26 grid times on `[0, 1.25]`, control every 0.25 s.
    pub fn vehicle_default() -> Self {
        let phi = -2.0 * std::f64::consts::PI / 3.0;
        BenchConfig {
            system: default_system(),
            vehicle: Some(VehicleParams { lf: 1.0, lr: 1.0 }),
            dynamics: None,
            initial_box: vec![[7.95, 8.05], [7.95, 8.05], [phi - 0.005, phi + 0.005], [1.995, 2.005]],
            t0: 0.0,
            t_end: 1.25,
            h: 0.05,
            control_period: 0.25,
            disturbance: vec![],
            network: None,
            net_dims: default_dims(),
            net_seed: 0,
            bound_method: default_method(),
            feedback: FeedbackMode::Sampled,
            seed: 0,
            partition: None,
            n_traj: default_n_traj(),
            repeats: default_repeats(),
            output: OutputPaths::default(),
        }
    }

    /// Parses TOML. Relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, BenchError> {
        let mut cfg: BenchConfig = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut cfg.network);
        let o = &mut cfg.output;
        for p in [&mut o.tube, &mut o.csv, &mut o.mc, &mut o.projection, &mut o.trajectories, &mut o.fig1] {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        BenchConfig::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn box_from_pairs(pairs: &[[f64; 2]], what: &str) -> Result<IntervalBox, BenchError> {
    pairs
        .iter()
        .map(|[lo, hi]| Interval::new(*lo, *hi))
        .collect::<Result<Vec<_>, _>>()
        .map(IntervalBox::new)
        .map_err(|e| BenchError::Config(format!("{what}: {e}")))
}

/// A validated closed-loop scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub setup: ClosedLoopSetup,
    pub x0: IntervalBox,
    pub grid: TimeGrid,
    pub vehicle: Option<VehicleModel>,
}

impl Scenario {
    pub fn from_config(cfg: &BenchConfig) -> Result<Self, BenchError> {
        let (system, vehicle) = match cfg.system.as_str() {
            "vehicle" => {
                let p = cfg.vehicle.unwrap_or(VehicleParams { lf: 1.0, lr: 1.0 });
                let m = VehicleModel::new(p.lf, p.lr)?;
                (m.system(), Some(m))
            }
            "custom" => {
                let d = cfg
                    .dynamics
                    .as_ref()
                    .ok_or_else(|| BenchError::Config("system = \"custom\" needs a [dynamics] table".into()))?;
                let names: Vec<&str> = d
                    .state
                    .iter()
                    .chain(&d.control)
                    .chain(&d.disturbance)
                    .map(String::as_str)
                    .collect();
                let rhs: Vec<&str> = d.rhs.iter().map(String::as_str).collect();
                let recipe = Recipe::parse(&names, &rhs).map_err(|e| BenchError::Config(e.to_string()))?;
                let sys = OpenLoopSystem::new(d.state.len(), d.control.len(), d.disturbance.len(), recipe)
                    .map_err(|e| BenchError::Config(e.to_string()))?;
                (sys, None)
            }
            other => return Err(BenchError::Config(format!("unknown system {other:?}"))),
        };
        let controller = match &cfg.network {
            Some(path) => Network::load(path)?,
            None => Network::random(&cfg.net_dims, cfg.net_seed)?,
        };
        let disturbance = if cfg.disturbance.is_empty() {
            Schedule::none()
        } else {
            Schedule::constant(box_from_pairs(&cfg.disturbance, "disturbance")?)
        };
        let setup = ClosedLoopSetup {
            system,
            controller,
            control_period: cfg.control_period,
            disturbance,
            method: cfg.bound_method,
            feedback: cfg.feedback,
        };
        setup.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        let x0 = box_from_pairs(&cfg.initial_box, "initial_box")?;
        if x0.dim() != setup.system.n {
            return Err(BenchError::Config(format!(
                "initial box has dimension {}, system state has {}",
                x0.dim(),
                setup.system.n
            )));
        }
        let grid = TimeGrid::new(cfg.t0, cfg.t_end, cfg.h).map_err(|e| BenchError::Config(e.to_string()))?;
        grid.steps_per(cfg.control_period)
            .map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(Scenario {
            setup,
            x0,
            grid,
            vehicle,
        })
    }
}

/// Tube of the initial box, or the per-time hull of the tubes of its cells.
#[derive(Clone, Debug)]
pub struct ReachOutcome {
    pub tube: ReachTube,
    pub cells: Vec<ReachTube>,
}

pub fn run_reach(sc: &Scenario, partition: Option<&[usize]>, seed: u64) -> Result<ReachOutcome, BenchError> {
    let start = Instant::now();
    let cells = match partition {
        None => vec![],
        Some(counts) => sc
            .x0
            .split_uniform(counts)
            .map_err(|e| BenchError::Config(e.to_string()))?
            .par_iter()
            .map(|c| euler_reach(&sc.setup, c, sc.grid))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let mut tube = if cells.is_empty() {
        euler_reach(&sc.setup, &sc.x0, sc.grid)?
    } else {
        let boxes = (0..cells[0].len())
            .map(|k| IntervalBox::hull_all(cells.iter().map(|c| &c.boxes[k])).expect("cells share dimension"))
            .collect();
        ReachTube {
            times: cells[0].times.clone(),
            boxes,
            meta: TubeMeta {
                step: sc.grid.h,
                control_instants: cells[0].meta.control_instants.clone(),
                seed: None,
                wall_clock_secs: 0.0,
                fallback_events: cells.iter().flat_map(|c| c.meta.fallback_events.clone()).collect(),
            },
        }
    };
    tube.meta.seed = Some(seed);
    tube.meta.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(ReachOutcome { tube, cells })
}

pub fn run_mc(sc: &Scenario, tube: &ReachTube, n_traj: usize, seed: u64) -> Result<McReport, BenchError> {
    let speed = sc.vehicle.map(|_| 3);
    Ok(mc_check_monitored(&sc.setup, &sc.x0, sc.grid, n_traj, seed, tube, speed)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RuntimeStats {
    pub repeats: usize,
    pub mean_secs: f64,
    pub std_secs: f64,
}

impl RuntimeStats {
    pub fn from_samples(t: &[f64]) -> Self {
        let n = t.len();
        let mean = t.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        RuntimeStats {
            repeats: n,
            mean_secs: mean,
            std_secs: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkResult {
    pub tube: ReachTube,
    pub mc: McReport,
    /// `(p_x, p_y)` selection of every tube box.
    pub projection: Vec<IntervalBox>,
    pub runtime: RuntimeStats,
}

impl BenchmarkResult {
    pub fn projection_jsonl(&self) -> String {
        self.tube
            .times
            .iter()
            .zip(&self.projection)
            .map(|(t, b)| format!("{}\n", serde_json::json!({ "t": t, "lower": b.lower(), "upper": b.upper() })))
            .collect()
    }

    pub fn mc_json(&self) -> String {
        serde_json::to_string_pretty(&self.mc).expect("report serializes") + "\n"
    }

    pub fn trajectories_jsonl(&self) -> String {
        self.mc
            .trajectories
            .iter()
            .map(|p| format!("{}\n", serde_json::to_string(p).expect("finite states")))
            .collect()
    }

    /// Writes every configured output (none contain timings).
    pub fn write_outputs(&self, out: &OutputPaths) -> Result<(), BenchError> {
        if let Some(p) = &out.tube {
            self.tube.write_jsonl(p)?;
        }
        if let Some(p) = &out.csv {
            self.tube.write_csv(p)?;
        }
        if let Some(p) = &out.mc {
            write_file(p, &self.mc_json())?;
        }
        if let Some(p) = &out.projection {
            write_file(p, &self.projection_jsonl())?;
        }
        if let Some(p) = &out.trajectories {
            write_file(p, &self.trajectories_jsonl())?;
        }
        Ok(())
    }
}

/// Tube, Monte-Carlo audit and timing over `cfg.repeats` tube computations.
pub fn run_vehicle_benchmark(cfg: &BenchConfig) -> Result<BenchmarkResult, BenchError> {
    let sc = Scenario::from_config(cfg)?;
    let partition = cfg.partition.as_deref();
    let mut outcome = run_reach(&sc, partition, cfg.seed)?;
    let mut times = vec![outcome.tube.meta.wall_clock_secs];
    for _ in 1..cfg.repeats {
        outcome = run_reach(&sc, partition, cfg.seed)?;
        times.push(outcome.tube.meta.wall_clock_secs);
    }
    let mc = run_mc(&sc, &outcome.tube, cfg.n_traj, cfg.seed)?;
    let coords: Vec<usize> = if sc.vehicle.is_some() { vec![0, 1] } else { (0..sc.x0.dim().min(2)).collect() };
    let projection = outcome.tube.project(&coords);
    Ok(BenchmarkResult {
        tube: outcome.tube,
        mc,
        projection,
        runtime: RuntimeStats::from_samples(&times),
    })
}

/// One decomposition of the demo map.
#[derive(Clone, Debug, Serialize)]
pub struct Fig1Decomposition {
    pub name: String,
    pub outputs: Vec<String>,
    pub single: IntervalBox,
    pub hull: IntervalBox,
    pub cells: Vec<IntervalBox>,
    pub cell_outputs: Vec<IntervalBox>,
    pub hull_within_single: bool,
    pub violations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Fig1Result {
    pub domain: IntervalBox,
    pub counts: Vec<usize>,
    pub seed: u64,
    pub samples: Vec<(Vec<f64>, Vec<f64>)>,
    pub decompositions: Vec<Fig1Decomposition>,
}

impl Fig1Result {
    pub fn total_violations(&self) -> usize {
        self.decompositions.iter().map(|d| d.violations).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("finite boxes serialize") + "\n"
    }
}

pub const FIG1_A: [&str; 2] = ["(x1 + x2)^2", "4*sin((x1 - x2)/4)"];
pub const FIG1_B: [&str; 2] = ["x1^2 + 2*x1*x2 + x2^2", "4*sin(x1/4)*cos(x2/4) - 4*cos(x1/4)*sin(x2/4)"];

/// Both decompositions on `[-1, 1]²`: single-box and partitioned natural
/// inclusions plus `n_samples` seeded sample images. A sample counts as a
/// violation when it misses the single box, the hull, or every cell box.
pub fn run_fig1_demo(counts: &[usize], n_samples: usize, seed: u64) -> Result<Fig1Result, BenchError> {
    let domain = IntervalBox::from_bounds(&[-1.0, -1.0], &[1.0, 1.0]).expect("valid box");
    let vars = ["x1", "x2"];
    let a = Recipe::parse(&vars, &FIG1_A)?;
    let samples = a.sample_images(&domain, n_samples, seed)?;
    let mut decompositions = Vec::new();
    for (name, outs) in [("A", FIG1_A), ("B", FIG1_B)] {
        let r = Recipe::parse(&vars, &outs)?;
        let single = r.natural_evaluate(&domain)?;
        let Partitioned { cells, outputs, hull } = r.partitioned_evaluate(&domain, counts)?;
        let part = Partitioned {
            cells: vec![],
            outputs,
            hull,
        };
        let mut violations = 0;
        for (p, _) in &samples {
            let y = r.point_evaluate(p)?;
            if !single.contains_point(&y) || !part.hull.contains_point(&y) || !part.union_contains(&y) {
                violations += 1;
            }
        }
        decompositions.push(Fig1Decomposition {
            name: name.into(),
            outputs: outs.iter().map(|s| s.to_string()).collect(),
            hull_within_single: part.hull.subset(&single),
            single,
            hull: part.hull,
            cells,
            cell_outputs: part.outputs,
            violations,
        });
    }
    Ok(Fig1Result {
        domain,
        counts: counts.to_vec(),
        seed,
        samples,
        decompositions,
    })
}
