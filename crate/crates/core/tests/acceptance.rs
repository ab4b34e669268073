//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ival::bench::{run_fig1_demo, run_vehicle_benchmark, BenchConfig, OutputPaths};
use ival::neural::{Activation, Layer, Matrix, Network};
use ival::reach::{open_reach_with_global_u, OpenLoopSystem, Schedule, TimeGrid};
use ival::{Expr, Interval, IntervalBox, Recipe};

type Outcome = Result<String, String>;

fn iv(lo: f64, hi: f64) -> Interval {
    Interval::new(lo, hi).unwrap()
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("worked example", c1_worked_example),
        ("elementary soundness fuzz", c2_soundness),
        ("tightness vs grid oracle", c3_tightness),
        ("natural inclusion monotonicity", c4_monotonicity),
        ("linear relaxation sandwich", c5_crown),
        ("open-loop containment", c6_open_loop),
        ("closed-loop vehicle containment", c7_vehicle),
        ("partition refinement", c8_partition),
        ("determinism", c9_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = f();
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("criterion {} ({name}): PASS [{secs:.2} s] {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL [{secs:.2} s] {msg}", i + 1)
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn c1_worked_example() -> Outcome {
    let x = IntervalBox::new(vec![iv(-1.0, 1.0)]);
    let a = Recipe::parse(&["x"], &["(x + 1)^2"]).map_err(|e| e.to_string())?;
    let b = Recipe::parse(&["x"], &["x^2 + 2*x + 1"]).map_err(|e| e.to_string())?;
    let t = Instant::now();
    let ya = a.natural_evaluate(&x).map_err(|e| e.to_string())?.as_slice()[0];
    let yb = b.natural_evaluate(&x).map_err(|e| e.to_string())?.as_slice()[0];
    let el = t.elapsed();
    let close = |v: Interval, lo: f64, hi: f64| (v.lo() - lo).abs() <= 1e-12 && (v.hi() - hi).abs() <= 1e-12;
    if !close(ya, 0.0, 4.0) || !close(yb, -1.0, 4.0) {
        return Err(format!("got {ya} and {yb}"));
    }
    if el >= Duration::from_millis(1) {
        return Err(format!("took {el:?}"));
    }
    Ok(format!("{ya} and {yb} in {el:?}"))
}

// ---------------------------------------------------------------- ops

#[derive(Clone, Copy, Debug)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Recip,
    Powi(u32),
    Scale(f64),
    AddConst(f64),
    Exp,
    Ln,
    Atan,
    Sqrt,
    Sin,
    Cos,
    Tan,
}

impl Op {
    fn binary(self) -> bool {
        matches!(self, Op::Add | Op::Sub | Op::Mul | Op::Div)
    }

    fn interval(self, a: Interval, b: Interval) -> Interval {
        match self {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
            Op::Div => a / b,
            Op::Neg => -a,
            Op::Recip => a.recip(),
            Op::Powi(n) => a.powi(n),
            Op::Scale(c) => a.scale(c),
            Op::AddConst(c) => a.add_const(c),
            Op::Exp => a.exp(),
            Op::Ln => a.ln().unwrap(),
            Op::Atan => a.atan(),
            Op::Sqrt => a.sqrt().unwrap(),
            Op::Sin => a.sin(),
            Op::Cos => a.cos(),
            Op::Tan => a.tan(),
        }
    }

    fn point(self, x: f64, y: f64) -> f64 {
        match self {
            Op::Add => x + y,
            Op::Sub => x - y,
            Op::Mul => x * y,
            Op::Div => x / y,
            Op::Neg => -x,
            Op::Recip => 1.0 / x,
            Op::Powi(n) => x.powi(n as i32),
            Op::Scale(c) => c * x,
            Op::AddConst(c) => x + c,
            Op::Exp => x.exp(),
            Op::Ln => x.ln(),
            Op::Atan => x.atan(),
            Op::Sqrt => x.sqrt(),
            Op::Sin => x.sin(),
            Op::Cos => x.cos(),
            Op::Tan => x.tan(),
        }
    }
}

fn random_op(rng: &mut ChaCha8Rng) -> Op {
    match rng.random_range(0..16) {
        0 => Op::Add,
        1 => Op::Sub,
        2 => Op::Mul,
        3 => Op::Div,
        4 => Op::Neg,
        5 => Op::Recip,
        6 => Op::Powi(rng.random_range(0..=7)),
        7 => Op::Scale(rng.random_range(-10.0..=10.0)),
        8 => Op::AddConst(rng.random_range(-10.0..=10.0)),
        9 => Op::Exp,
        10 => Op::Ln,
        11 => Op::Atan,
        12 => Op::Sqrt,
        13 => Op::Sin,
        14 => Op::Cos,
        _ => Op::Tan,
    }
}

/// Wide-range interval: magnitudes 1e-3..1e3, widths 1e-6..20, some points.
fn fuzz_interval(rng: &mut ChaCha8Rng, positive: bool) -> Interval {
    let mag = 10f64.powf(rng.random_range(-3.0..3.0));
    let c = if positive || rng.random_bool(0.5) { mag } else { -mag };
    let w = if rng.random_bool(0.05) {
        0.0
    } else {
        10f64.powf(rng.random_range(-6.0..1.3))
    };
    if positive {
        iv(c, c + w)
    } else {
        let lo = c - w * rng.random_range(0.0..=1.0);
        iv(lo, lo + w)
    }
}

fn sample_in(rng: &mut ChaCha8Rng, a: Interval, j: usize) -> f64 {
    match j {
        0 => a.lo(),
        1 => a.hi(),
        _ => rng.random_range(a.lo()..=a.hi()),
    }
}

fn c2_soundness() -> Outcome {
    let cases = 100_000usize;
    let failures: Vec<String> = (0..100u64)
        .into_par_iter()
        .flat_map_iter(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
            rng.set_stream(chunk);
            let mut bad = Vec::new();
            for _ in 0..cases / 100 {
                let op = random_op(&mut rng);
                let positive = matches!(op, Op::Ln | Op::Sqrt);
                let a = fuzz_interval(&mut rng, positive);
                let b = fuzz_interval(&mut rng, false);
                let y = op.interval(a, b);
                for j in 0..32 {
                    let x = sample_in(&mut rng, a, j);
                    let z = if op.binary() { sample_in(&mut rng, b, (j + 1) % 32) } else { 0.0 };
                    let v = op.point(x, z);
                    if !v.is_nan() && !y.contains(v) {
                        bad.push(format!("{op:?} {a} {b}: f({x:e}, {z:e}) = {v:e} not in {y}"));
                    }
                }
            }
            bad
        })
        .collect();
    if let Some(f) = failures.first() {
        return Err(format!("{} violations, first: {f}", failures.len()));
    }
    Ok(format!("{cases} cases x 32 points, 0 violations"))
}

// ---------------------------------------------------------------- tightness

fn grid(a: Interval, n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..n).map(|j| a.lo() + (a.hi() - a.lo()) * (j as f64 / (n - 1) as f64)).collect();
    g[n - 1] = a.hi();
    g
}

fn tight_interval(rng: &mut ChaCha8Rng, op: Op) -> (Interval, Interval) {
    let w = rng.random_range(0.0..=10.0);
    let general = |rng: &mut ChaCha8Rng, w: f64| {
        let lo = rng.random_range(-20.0..20.0);
        iv(lo, lo + w)
    };
    let away_from_zero = |rng: &mut ChaCha8Rng, w: f64| {
        let lo = rng.random_range(0.1..20.0);
        if rng.random_bool(0.5) {
            iv(lo, lo + w)
        } else {
            iv(-lo - w, -lo)
        }
    };
    match op {
        Op::Div => {
            let w2 = rng.random_range(0.0..=10.0);
            (general(rng, w), away_from_zero(rng, w2))
        }
        Op::Recip => (away_from_zero(rng, w), Interval::ZERO),
        Op::Ln | Op::Sqrt => {
            let lo = rng.random_range(1e-3..20.0);
            (iv(lo, lo + w), Interval::ZERO)
        }
        Op::Tan => {
            // inside one branch (kπ - π/2, kπ + π/2), clear of the poles
            let k = rng.random_range(-5..=5) as f64;
            let m = 0.05;
            let width = rng.random_range(0.0..=(PI - 2.0 * m));
            let lo = k * PI - FRAC_PI_2 + m + rng.random_range(0.0..=(PI - 2.0 * m - width));
            (iv(lo, lo + width), Interval::ZERO)
        }
        _ => {
            let w2 = rng.random_range(0.0..=10.0);
            (general(rng, w), general(rng, w2))
        }
    }
}

fn c3_tightness() -> Outcome {
    let ops = [
        Op::Add,
        Op::Sub,
        Op::Mul,
        Op::Div,
        Op::Neg,
        Op::Recip,
        Op::Powi(2),
        Op::Powi(3),
        Op::Powi(4),
        Op::Powi(5),
        Op::Scale(-2.5),
        Op::AddConst(3.0),
        Op::Exp,
        Op::Ln,
        Op::Atan,
        Op::Sqrt,
        Op::Sin,
        Op::Cos,
        Op::Tan,
    ];
    let mut worst = 0.0f64;
    let results: Vec<Result<f64, String>> = ops
        .par_iter()
        .enumerate()
        .map(|(i, &op)| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
            rng.set_stream(i as u64);
            let mut worst = 0.0f64;
            for _ in 0..1000 {
                let (a, b) = tight_interval(&mut rng, op);
                let y = op.interval(a, b);
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                if op.binary() {
                    for &x in &grid(a, 100) {
                        for &z in &grid(b, 100) {
                            let v = op.point(x, z);
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                } else {
                    for &x in &grid(a, 10_000) {
                        let v = op.point(x, 0.0);
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                if !(y.lo() <= lo && hi <= y.hi()) {
                    return Err(format!("{op:?} on {a} {b}: grid hull [{lo:e}, {hi:e}] not in {y}"));
                }
                let gap = (lo - y.lo()).max(y.hi() - hi);
                if !(gap <= 1e-3) {
                    return Err(format!("{op:?} on {a} {b}: gap {gap:e}, grid [{lo:e}, {hi:e}], computed {y}"));
                }
                worst = worst.max(gap);
            }
            Ok(worst)
        })
        .collect();
    for r in results {
        worst = worst.max(r?);
    }
    Ok(format!("{} ops x 1000 intervals, worst gap {worst:.3e}", ops.len()))
}

// ---------------------------------------------------------------- monotonicity

fn random_expr(rng: &mut ChaCha8Rng, depth: usize, n: usize) -> Expr {
    if depth == 0 || rng.random_bool(0.2) {
        return if rng.random_bool(0.8) {
            Expr::var(rng.random_range(0..n))
        } else {
            Expr::constant(rng.random_range(-3.0..3.0))
        };
    }
    let d = depth - 1;
    let sub = |rng: &mut ChaCha8Rng| random_expr(rng, d, n);
    match rng.random_range(0..17) {
        0 => sub(rng) + sub(rng),
        1 => sub(rng) - sub(rng),
        2 => sub(rng) * sub(rng),
        3 => sub(rng) / sub(rng),
        4 => -sub(rng),
        5 => sub(rng) + rng.random_range(-2.0..2.0),
        6 => rng.random_range(-2.0..2.0) * sub(rng),
        7 => sub(rng).recip(),
        8 => sub(rng).powi(rng.random_range(0..=4)),
        9 => sub(rng).sin(),
        10 => sub(rng).cos(),
        11 => sub(rng).tan(),
        12 => sub(rng).exp(),
        13 => sub(rng).atan(),
        14 => (sub(rng).powi(2) + 0.5).ln(),
        15 => (sub(rng).powi(2) + 0.1).sqrt(),
        _ => sub(rng).atan().exp(),
    }
}

fn nested_boxes(rng: &mut ChaCha8Rng, n: usize) -> (IntervalBox, IntervalBox) {
    let (mut inner, mut outer) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let lo = rng.random_range(-3.0..3.0);
        let hi = lo + rng.random_range(0.0..3.0);
        let a = rng.random_range(lo..=hi);
        let b = rng.random_range(a..=hi);
        outer.push(iv(lo, hi));
        inner.push(iv(a, b));
    }
    (IntervalBox::new(inner), IntervalBox::new(outer))
}

fn c4_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    let mut stages = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=3);
        let outs = (0..rng.random_range(1..=3)).map(|_| random_expr(&mut rng, 6, n)).collect();
        let r = Recipe::new(n, outs).map_err(|e| e.to_string())?;
        stages += r.n_stages();
        let (inner, outer) = nested_boxes(&mut rng, n);
        let yi = r.natural_evaluate(&inner).map_err(|e| format!("case {case}: {e}"))?;
        let yo = r.natural_evaluate(&outer).map_err(|e| format!("case {case}: {e}"))?;
        if !yi.subset(&yo) {
            return Err(format!("case {case} {r:?}: {inner} -> {yi} not in {outer} -> {yo}"));
        }
    }
    Ok(format!("1000 recipes ({stages} stages), nesting exact"))
}

// ---------------------------------------------------------------- linear relaxation

fn random_box(rng: &mut ChaCha8Rng, n: usize) -> IntervalBox {
    IntervalBox::new(
        (0..n)
            .map(|_| {
                let c = rng.random_range(-2.0..2.0);
                let r = 10f64.powf(rng.random_range(-3.0..0.3));
                iv(c - r, c + r)
            })
            .collect(),
    )
}

fn random_dims(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let hidden = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(1..=6)];
    dims.extend((0..hidden).map(|_| rng.random_range(1..=64)));
    dims.push(rng.random_range(1..=4));
    dims
}

fn c5_crown() -> Outcome {
    let worst: Vec<Result<f64, String>> = (0..50u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xC5);
            rng.set_stream(i);
            let dims = random_dims(&mut rng);
            let net = Network::random(&dims, 1000 + i).map_err(|e| e.to_string())?;
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..20 {
                let y = random_box(&mut rng, dims[0]);
                let b = net.crown(&y).map_err(|e| e.to_string())?;
                for _ in 0..1000 {
                    let x: Vec<f64> = y.iter().map(|a| rng.random_range(a.lo()..=a.hi())).collect();
                    let n = net.forward(&x).unwrap();
                    let (lo, hi) = b.eval_point(&x);
                    for k in 0..n.len() {
                        let v = (lo[k] - n[k]).max(n[k] - hi[k]);
                        worst = worst.max(v);
                        if v > 1e-9 {
                            return Err(format!("net {i} {dims:?}: output {k} at {x:?}: {} <= {} <= {}", lo[k], n[k], hi[k]));
                        }
                    }
                }
            }
            Ok(worst)
        })
        .collect();
    let mut w = f64::NEG_INFINITY;
    for r in worst {
        w = w.max(r?);
    }
    // purely linear networks: the two affine forms coincide
    let mut rng = ChaCha8Rng::seed_from_u64(0xC55);
    for i in 0..50 {
        let dims = random_dims(&mut rng);
        let layers = dims
            .windows(2)
            .map(|d| {
                let rows: Vec<Vec<f64>> = (0..d[1]).map(|_| (0..d[0]).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                let bias = (0..d[1]).map(|_| rng.random_range(-1.0..1.0)).collect();
                Layer::new(Matrix::from_rows(&rows).unwrap(), bias, Activation::Identity)
            })
            .collect();
        let net = Network::new(layers).map_err(|e| e.to_string())?;
        let b = net.crown(&random_box(&mut rng, dims[0])).map_err(|e| e.to_string())?;
        for r in 0..b.c_lower.rows() {
            for c in 0..b.c_lower.cols() {
                if (b.c_lower.get(r, c) - b.c_upper.get(r, c)).abs() > 1e-12 {
                    return Err(format!("linear net {i}: coefficient ({r}, {c}) differs"));
                }
            }
            if (b.d_lower[r] - b.d_upper[r]).abs() > 1e-12 {
                return Err(format!("linear net {i}: offset {r} differs"));
            }
        }
    }
    Ok(format!("50 nets x 20 boxes x 1000 samples, max excess {w:.3e}; 50 linear nets exact"))
}

// ---------------------------------------------------------------- open loop

/// Euler-order slack and the analytic envelope of ẋ = a x + u,
/// x(0) ∈ [0.5, 1], u(t) ∈ [-0.5, 0.5].
fn c6_open_loop() -> Outcome {
    let (x_lo, x_hi, u_max) = (0.5, 1.0, 0.5);
    let h = 0.01;
    let mut report = Vec::new();
    for a in [-1.0f64, 0.0, 1.0] {
        let sys = OpenLoopSystem::new(1, 1, 0, Recipe::parse(&["x", "u"], &[&format!("{a}*x + u")]).unwrap())
            .map_err(|e| e.to_string())?;
        let grid = TimeGrid::new(0.0, 1.0, h).map_err(|e| e.to_string())?;
        let u = Schedule::constant(IntervalBox::new(vec![iv(-u_max, u_max)]));
        let tube = open_reach_with_global_u(&sys, &IntervalBox::new(vec![iv(x_lo, x_hi)]), &u, &Schedule::none(), grid)
            .map_err(|e| e.to_string())?;
        let phi = |t: f64| if a == 0.0 { t } else { ((a * t).exp() - 1.0) / a };
        let env = |t: f64| ((a * t).exp() * x_lo - u_max * phi(t), (a * t).exp() * x_hi + u_max * phi(t));
        // Euler global error: h M / (2L) (e^{Lt} - 1), M ≥ sup |x''| = |a| |a x + u|
        let l = a.abs();
        let ts: Vec<f64> = (0..=1000).map(|j| j as f64 / 1000.0).collect();
        let x_max = ts.iter().map(|&t| env(t).0.abs().max(env(t).1.abs())).fold(0.0, f64::max);
        let m = l * (l * x_max + u_max);
        let (mut worst, mut worst_slack) = (f64::NEG_INFINITY, 0.0);
        for (k, &t) in tube.times.iter().enumerate() {
            let slack = if l == 0.0 { 0.0 } else { h * m / (2.0 * l) * ((l * t).exp() - 1.0) } + 1e-12;
            let (lo, hi) = env(t);
            let b = tube.boxes[k].as_slice()[0];
            let excess = (b.lo() - lo).max(hi - b.hi());
            if excess > worst {
                (worst, worst_slack) = (excess, slack);
            }
            if excess > slack {
                return Err(format!("a = {a}, t = {t}: tube {b} misses envelope [{lo}, {hi}] by {excess:e} > slack {slack:e}"));
            }
        }
        report.push(format!("a={a}: max excess {worst:.2e} (slack {worst_slack:.2e})"));
    }
    Ok(format!("101 grid times each, {}", report.join(", ")))
}

// ---------------------------------------------------------------- vehicle

fn c7_vehicle() -> Outcome {
    let t = Instant::now();
    let res = run_vehicle_benchmark(&BenchConfig::vehicle_default()).map_err(|e| e.to_string())?;
    let el = t.elapsed();
    if res.tube.len() != 26 {
        return Err(format!("{} grid times", res.tube.len()));
    }
    if res.mc.n_traj != 100 || !res.mc.is_contained() {
        return Err(format!("{} violations in {} trajectories: {:?}", res.mc.violations.len(), res.mc.n_traj, res.mc.violations.first()));
    }
    if el >= Duration::from_secs(60) {
        return Err(format!("took {el:?}"));
    }
    Ok(format!(
        "100 trajectories x 26 times, 0 violations, min slack {:?}, final box {}",
        res.mc.min_slack.iter().map(|s| format!("{s:.1e}")).collect::<Vec<_>>(),
        res.tube.last()
    ))
}

fn c8_partition() -> Outcome {
    let r = run_fig1_demo(&[32, 32], 2000, 0).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for d in &r.decompositions {
        if d.cells.len() != 1024 {
            return Err(format!("{}: {} cells", d.name, d.cells.len()));
        }
        if !d.hull_within_single {
            return Err(format!("{}: hull {} not within {}", d.name, d.hull, d.single));
        }
        if d.violations > 0 {
            return Err(format!("{}: {} samples outside an enclosure", d.name, d.violations));
        }
        parts.push(format!("{}: single {} hull {}", d.name, d.single, d.hull));
    }
    if r.samples.len() != 2000 {
        return Err(format!("{} samples", r.samples.len()));
    }
    Ok(format!("2000 samples inside all enclosures; {}", parts.join("; ")))
}

fn write_runs(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let out = OutputPaths {
        tube: Some(dir.join("tube.jsonl")),
        csv: Some(dir.join("tube.csv")),
        mc: Some(dir.join("mc.json")),
        projection: Some(dir.join("projection.jsonl")),
        trajectories: Some(dir.join("trajectories.jsonl")),
        fig1: Some(dir.join("fig1.json")),
    };
    let res = run_vehicle_benchmark(&BenchConfig::vehicle_default()).map_err(|e| e.to_string())?;
    res.write_outputs(&out).map_err(|e| e.to_string())?;
    let fig = run_fig1_demo(&[32, 32], 2000, 0).map_err(|e| e.to_string())?;
    fs::write(out.fig1.as_ref().unwrap(), fig.to_json()).map_err(|e| e.to_string())?;
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    Ok(files)
}

fn c9_determinism() -> Outcome {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = write_runs(d1.path())?;
    let b = write_runs(d2.path())?;
    if a.len() != 6 || a.len() != b.len() {
        return Err(format!("{} and {} output files", a.len(), b.len()));
    }
    for ((na, ca), (nb, cb)) in a.iter().zip(&b) {
        if na != nb || ca != cb {
            return Err(format!("{na} differs between runs"));
        }
    }
    let bytes: usize = a.iter().map(|(_, c)| c.len()).sum();
    Ok(format!("6 files ({bytes} bytes) identical across two runs"))
}
