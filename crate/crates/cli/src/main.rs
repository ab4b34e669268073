use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ival::bench::{run_fig1_demo, run_reach, run_vehicle_benchmark, BenchConfig, BenchError, Scenario};
use ival::neural::{Network, NeuralError};
use ival::reach::ReachError;
use ival::{IntervalBox, Recipe};

#[derive(Parser)]
#[command(name = "ival", version, about = "Interval inclusion functions and reachability")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Natural inclusion of expressions over a box.
    Eval {
        /// Output expression; repeat for several outputs.
        #[arg(short, long = "expr", required = true)]
        exprs: Vec<String>,
        /// Comma-separated input names in box order.
        #[arg(long, default_value = "x")]
        vars: String,
        /// Input box, e.g. "-1,1;0,2".
        #[arg(long = "box", allow_hyphen_values = true)]
        bx: String,
        /// Uniform partition counts per axis.
        #[arg(long)]
        partition: Option<String>,
    },
    /// Demonstrations.
    Demo {
        #[command(subcommand)]
        which: Demo,
    },
    /// Reach tube for a scenario config.
    Reach {
        #[arg(long)]
        config: PathBuf,
        /// Split the initial box into uniform cells, e.g. "2,2,1,1".
        #[arg(long)]
        partition: Option<String>,
    },
    /// Reach tube plus Monte-Carlo containment audit.
    Mc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Controller output bounds on a box.
    Bounds {
        #[arg(long)]
        net: PathBuf,
        #[arg(long = "box", allow_hyphen_values = true)]
        bx: String,
        #[arg(long, value_enum, default_value_t = Method::Crown)]
        method: Method,
    },
    /// Write a seeded random ReLU network.
    GenNet {
        #[arg(long, default_value = "4,100,100,2")]
        dims: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum Demo {
    /// Two decompositions of one map on [-1,1]^2, single box and partitioned.
    Fig1 {
        #[arg(long, default_value = "32,32")]
        partition: String,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Ibp,
    Crown,
}

enum Failure {
    Abort(String),
    Config(String),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        if e.is_verification_abort() {
            Failure::Abort(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<ReachError> for Failure {
    fn from(e: ReachError) -> Self {
        BenchError::from(e).into()
    }
}

impl From<NeuralError> for Failure {
    fn from(e: NeuralError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn config_err(e: impl ToString) -> Failure {
    Failure::Config(e.to_string())
}

fn parse_counts(s: &str) -> Result<Vec<usize>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| config_err(format!("bad count {t:?}: {e}"))))
        .collect()
}

fn write(path: &PathBuf, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Eval { exprs, vars, bx, partition } => {
            let names: Vec<&str> = vars.split(',').map(str::trim).collect();
            let outs: Vec<&str> = exprs.iter().map(String::as_str).collect();
            let recipe = Recipe::parse(&names, &outs).map_err(config_err)?;
            let x: IntervalBox = bx.parse().map_err(config_err)?;
            let y = match partition {
                None => recipe.natural_evaluate(&x),
                Some(p) => recipe.partitioned_evaluate(&x, &parse_counts(&p)?).map(|r| r.hull),
            }
            .map_err(config_err)?;
            for a in y.iter() {
                println!("{a}");
            }
        }
        Cmd::Demo {
            which: Demo::Fig1 { partition, samples, seed, out },
        } => {
            let r = run_fig1_demo(&parse_counts(&partition)?, samples, seed)?;
            for d in &r.decompositions {
                eprintln!("decomposition {}: single {}  partitioned hull {}", d.name, d.single, d.hull);
            }
            match out {
                Some(p) => write(&p, &r.to_json())?,
                None => print!("{}", r.to_json()),
            }
            if r.total_violations() > 0 {
                return Err(Failure::Abort(format!("{} samples outside an enclosure", r.total_violations())));
            }
        }
        Cmd::Reach { config, partition } => {
            let mut cfg = BenchConfig::load(&config)?;
            if let Some(p) = partition {
                cfg.partition = Some(parse_counts(&p)?);
            }
            let sc = Scenario::from_config(&cfg)?;
            let out = run_reach(&sc, cfg.partition.as_deref(), cfg.seed)?;
            eprintln!(
                "{} grid times in {:.3} s, {} localization fallbacks",
                out.tube.len(),
                out.tube.meta.wall_clock_secs,
                out.tube.meta.fallback_events.len()
            );
            eprintln!("final box {}", out.tube.last());
            if cfg.output.tube.is_none() && cfg.output.csv.is_none() {
                print!("{}", out.tube.to_jsonl());
            }
            if let Some(p) = &cfg.output.tube {
                out.tube.write_jsonl(p)?;
            }
            if let Some(p) = &cfg.output.csv {
                out.tube.write_csv(p)?;
            }
        }
        Cmd::Mc { config, samples } => {
            let mut cfg = BenchConfig::load(&config)?;
            if let Some(n) = samples {
                cfg.n_traj = n;
            }
            let res = run_vehicle_benchmark(&cfg)?;
            eprintln!(
                "{} trajectories, {} violations, tube runtime {:.4} ± {:.4} s over {} runs",
                res.mc.n_traj,
                res.mc.violations.len(),
                res.runtime.mean_secs,
                res.runtime.std_secs,
                res.runtime.repeats
            );
            if let Some(v) = res.mc.min_speed {
                eprintln!("minimum sampled speed {v}");
            }
            if cfg.output.mc.is_none() {
                print!("{}", res.mc_json());
            }
            res.write_outputs(&cfg.output)?;
            if !res.mc.is_contained() {
                return Err(Failure::Abort("containment violated".into()));
            }
        }
        Cmd::Bounds { net, bx, method } => {
            let net = Network::load(&net)?;
            let x: IntervalBox = bx.parse().map_err(config_err)?;
            match method {
                Method::Ibp => println!("{}", net.ibp(&x)?),
                Method::Crown => {
                    let b = net.crown(&x)?;
                    println!("lower C = {:?}", b.c_lower.to_rows());
                    println!("lower d = {:?}", b.d_lower);
                    println!("upper C = {:?}", b.c_upper.to_rows());
                    println!("upper d = {:?}", b.d_upper);
                    println!("{}", b.localized(&x)?);
                }
            }
        }
        Cmd::GenNet { dims, seed, out } => {
            let net = Network::random(&parse_counts(&dims)?, seed)?;
            net.save(&out)?;
            eprintln!("wrote {:?} network to {}", net.dims(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Abort(m)) => {
            eprintln!("verification aborted: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
