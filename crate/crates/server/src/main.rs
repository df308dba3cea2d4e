use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use riso_core::agents::{
    BoltzmannOperator, NullOperator, Operator, OperatorConfig, ScriptOperator,
};
use riso_core::session::{replay, resimulate};
use riso_core::{compute_metrics, run_episode, EpisodeLog, Mode, Scenario};
use riso_server::bench::{self, BenchConfig, ScenarioSource};
use riso_server::live::{self, ServeConfig};
use riso_server::{env_seed, load_scenario};

#[derive(Parser)]
#[command(
    name = "sim",
    version,
    about = "Tabletop grasping simulator with shared control"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve live sessions over a websocket.
    Serve(ServeArgs),
    /// Run the benchmark matrix with synthetic operators.
    Bench(BenchArgs),
    /// Check a scenario file.
    Validate {
        #[arg(long)]
        scenario: String,
    },
    /// Re-run a recorded episode and compare it with the log.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Run one headless episode and print its metrics.
    Run(RunArgs),
    /// Print a built-in scenario as JSON.
    Scenario {
        /// `canonical` or `study`.
        #[arg(long, default_value = "canonical")]
        name: String,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct Assist {
    /// `canonical`, `study`, or a scenario JSON file.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value = "shared")]
    mode: Mode,
    /// Weight of the operator command in the blend.
    #[arg(long)]
    alpha: Option<f64>,
    /// Rationality assumed by the inference.
    #[arg(long)]
    beta: Option<f64>,
    /// Overrides SIM_SEED and the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Assist {
    fn resolve(&self) -> Result<(Scenario, u64)> {
        let seed = match self.seed {
            Some(s) => s,
            None => env_seed(0)?,
        };
        let mut sc = load_scenario(&self.scenario, seed)?;
        if self.seed.is_some() || std::env::var_os("SIM_SEED").is_some() {
            sc.seed = seed;
        }
        if let Some(a) = self.alpha {
            sc.assistance.alpha = a;
        }
        if let Some(b) = self.beta {
            sc.assistance.beta = b;
        }
        sc.validate()?;
        let seed = sc.seed;
        Ok((sc, seed))
    }
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    assist: Assist,
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Advance one tick per input frame instead of on the wall clock.
    #[arg(long)]
    lockstep: bool,
    /// Directory for episode logs.
    #[arg(long)]
    log_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// `canonical`, `study` (new layout per seed), or a scenario JSON file.
    #[arg(long)]
    scenario: String,
    #[arg(long, value_delimiter = ',', default_value = "human,shared")]
    modes: Vec<Mode>,
    #[arg(long, value_delimiter = ',', default_value = "0.4")]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "5")]
    betas: Vec<f64>,
    /// Number of seeds, run as 0..N.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Explicit seeds; replaces --seeds.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Rationality of the synthetic operator.
    #[arg(long, default_value_t = 3.0)]
    agent_beta: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OperatorKind {
    Boltzmann,
    Null,
    Script,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    assist: Assist,
    #[arg(long, value_enum, default_value = "boltzmann")]
    operator: OperatorKind,
    /// JSON array of {t, aH, df, dP} entries, for `--operator script`.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, default_value_t = 3.0)]
    agent_beta: f64,
    /// Write the episode log here.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Serve(a) => serve(a),
        Cmd::Bench(a) => run_bench(a),
        Cmd::Validate { scenario } => {
            let s = Scenario::load(&scenario).with_context(|| format!("loading {scenario}"))?;
            s.validate()?;
            println!(
                "ok {} {} objects hash {}",
                s.name,
                s.objects.len(),
                s.hash()
            );
            Ok(())
        }
        Cmd::Replay { log } => run_replay(log),
        Cmd::Run(a) => run(a),
        Cmd::Scenario { name, seed } => {
            let s = load_scenario(&name, seed.unwrap_or(env_seed(0)?))?;
            println!("{}", s.to_json_pretty()?);
            Ok(())
        }
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let (scenario, seed) = a.assist.resolve()?;
    let cfg = ServeConfig {
        scenario,
        mode: a.assist.mode,
        seed,
        lockstep: a.lockstep,
        log_dir: a.log_dir,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        live::serve(listener, cfg).await
    })
}

fn run_bench(a: BenchArgs) -> Result<()> {
    let seeds = a.seed_list.unwrap_or_else(|| (0..a.seeds).collect());
    let cfg = BenchConfig {
        source: ScenarioSource::parse(&a.scenario)?,
        modes: a.modes,
        alphas: a.alphas,
        betas: a.betas,
        seeds,
        operator: OperatorConfig {
            beta: a.agent_beta,
            ..OperatorConfig::default()
        },
    };
    let results = bench::bench(&cfg);
    bench::write_results(&a.out, &results)?;
    for row in bench::aggregate(&results) {
        println!(
            "{:<6} alpha {:<4} beta {:<4} n {:>4} failed {:>3} success {:6.2} grasp_time {:7.2} grasp_distance {:6.3} input_time {:7.2}",
            row.mode.to_string(),
            row.alpha,
            row.beta,
            row.episodes,
            row.failed,
            row.success_rate,
            row.grasp_time,
            row.grasp_distance,
            row.input_time
        );
    }
    Ok(())
}

fn run_replay(path: PathBuf) -> Result<()> {
    let file = std::fs::File::open(&path).with_context(|| path.display().to_string())?;
    let log = EpisodeLog::read_ndjson(BufReader::new(file))?;
    if let Some(m) = resimulate(&log)? {
        bail!("state diverges from inputs at tick {}: {}", m.tick, m.what);
    }
    if log.end.is_some() {
        let (_, mismatch) = replay(&log)?;
        if let Some(m) = mismatch {
            bail!("replay diverges at tick {}: {}", m.tick, m.what);
        }
    }
    println!("{}", serde_json::to_string_pretty(&compute_metrics(&log)?)?);
    eprintln!("replay: {} ticks reproduced exactly", log.ticks.len());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let (scenario, seed) = a.assist.resolve()?;
    let mut op: Box<dyn Operator> = match a.operator {
        OperatorKind::Boltzmann => Box::new(BoltzmannOperator::new(
            OperatorConfig {
                beta: a.agent_beta,
                ..OperatorConfig::default()
            },
            &scenario,
            seed,
        )),
        OperatorKind::Null => Box::new(NullOperator::new(None)),
        OperatorKind::Script => {
            let path = a.script.context("--operator script needs --script")?;
            let text =
                std::fs::read_to_string(&path).with_context(|| path.display().to_string())?;
            Box::new(ScriptOperator::from_json(&text, scenario.physics.dt)?)
        }
    };
    let out = run_episode(&scenario, op.as_mut(), a.assist.mode, seed, a.log.is_some())?;
    if let (Some(path), Some(log)) = (a.log, &out.log) {
        let file = std::fs::File::create(&path).with_context(|| path.display().to_string())?;
        log.write_ndjson(std::io::BufWriter::new(file))?;
    }
    eprintln!("status: {:?} after {} ticks", out.status, out.metrics.ticks);
    println!("{}", serde_json::to_string_pretty(&out.metrics)?);
    Ok(())
}
