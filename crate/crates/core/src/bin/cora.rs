use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cora::coalition::{solve_core, CoalitionAdvantageTable, DEFAULT_LAMBDA_REG};
use cora::config::{curve_csv, parse_config, unix_now, write_output, RunManifest};
use cora::envs::{oracle_optimal_return, EnvSpec, Game};
use cora::theory::{run_suite, suite_csv, TheorySuite};
use cora::trainer::{
    bench_csv, diag_csv, evaluate, run_approx_benchmark, train, Checkpoint, CHECKPOINT_VERSION,
};
use cora::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cora",
    version,
    about = "Coalition-level credit assignment for cooperative multi-agent RL"
)]
struct Cli {
    /// Master seed; overrides the seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON config; writes curve.csv, diag.csv, checkpoint.json
    /// and manifest.json to the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Greedy evaluation of a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Sampled-coalition approximation benchmark on random tables.
    BenchApprox {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Comma-separated sample sizes; defaults to 2^(n-1)-1 and its
        /// neighbours within the proper-coalition count.
        #[arg(long, value_delimiter = ',')]
        m: Vec<usize>,
    },
    /// Solve the allocation QP for a plain-text game file.
    CoreSolve {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LAMBDA_REG, allow_negative_numbers = true)]
        lambda_reg: f64,
    },
    /// Print an environment's oracle optimum and spec digest.
    EnvInspect {
        /// JSON config whose `env` section is inspected; the default
        /// environment is used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check the policy-improvement bounds on random tabular games.
    TheoryCheck {
        #[arg(long, default_value = "npg")]
        suite: TheorySuite,
        #[arg(long, default_value_t = 50)]
        games: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    match cli.command {
        Command::Train { config } => cmd_train(&config, seed, &cli.out_dir),
        Command::Eval {
            checkpoint,
            episodes,
        } => cmd_eval(&checkpoint, episodes),
        Command::BenchApprox { n, trials, m } => {
            cmd_bench(n, trials, m, seed.unwrap_or(0), &cli.out_dir)
        }
        Command::CoreSolve { file, lambda_reg } => cmd_core_solve(&file, lambda_reg),
        Command::EnvInspect { config } => cmd_env_inspect(config.as_deref()),
        Command::TheoryCheck { suite, games } => {
            let rows = run_suite(suite, seed.unwrap_or(0), games)?;
            print!("{}", suite_csv(&rows));
            let failed = rows.iter().filter(|r| !r.check.holds).count();
            eprintln!("{} checks, {failed} failed", rows.len());
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_train(config: &Path, seed: Option<u64>, out: &Path) -> Result<ExitCode> {
    let mut cfg = parse_config(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let started = unix_now();
    let run = train(&cfg.train, &cfg.env)?;
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        env_steps: run.env_steps,
        learner: run.learner,
    };
    let mut outputs = Vec::new();
    for (name, body) in [
        ("curve.csv", curve_csv(&run.curve)),
        ("diag.csv", diag_csv(&run.diag)),
        ("checkpoint.json", ck.to_json()),
        ("config.json", cfg.to_json()),
    ] {
        write_output(out, name, &body)?;
        outputs.push(name.to_string());
    }
    let manifest = RunManifest::new(&cfg, started, unix_now(), outputs);
    write_output(
        out,
        "manifest.json",
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    if let Some(last) = run.curve.last() {
        println!(
            "steps {} eval_return {:.4} ± {:.4}",
            last.step, last.eval_return_mean, last.eval_return_ci95
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(path: &Path, episodes: usize) -> Result<ExitCode> {
    let ck = Checkpoint::from_json(&read(path)?)?;
    let game = Game::new(&ck.config.env)?;
    let (mean, ci) = evaluate(&game, &ck.learner.policies, episodes)?;
    let oracle = oracle_optimal_return(&ck.config.env)?.value;
    println!("env_steps,eval_return_mean,eval_return_ci95,oracle");
    println!("{},{mean},{ci},{oracle}", ck.env_steps);
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(n: usize, trials: usize, m: Vec<usize>, seed: u64, out: &Path) -> Result<ExitCode> {
    let grid = if m.is_empty() {
        let total = (1usize << n.min(12)) - 2;
        let half = (1usize << n.min(12).saturating_sub(1)) - 1;
        let mut g: Vec<usize> = [half / 2, half, half + half / 2, total]
            .into_iter()
            .filter(|&k| k >= 1 && k <= total)
            .collect();
        g.dedup();
        g
    } else {
        m
    };
    let rows = run_approx_benchmark(n, trials, &grid, seed)?;
    let csv = bench_csv(&rows);
    write_output(out, "bench_approx.csv", &csv)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_core_solve(path: &Path, lambda_reg: f64) -> Result<ExitCode> {
    let table = CoalitionAdvantageTable::parse(&read(path)?)?;
    let alloc = solve_core(&table, lambda_reg)?;
    println!("field,index,value");
    for (i, a) in alloc.per_agent.iter().enumerate() {
        println!("credit,{i},{a}");
    }
    println!("epsilon,,{}", alloc.epsilon);
    println!("objective,,{}", alloc.objective);
    println!(
        "status,,{}",
        serde_json::to_value(alloc.status)?
            .as_str()
            .unwrap_or("unknown")
    );
    println!("iterations,,{}", alloc.iterations);
    for &k in &alloc.active_constraints {
        if let Some((c, _)) = table.entries().get(k) {
            println!("active_constraint,{k},{}", c.mask());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_env_inspect(config: Option<&Path>) -> Result<ExitCode> {
    let env = match config {
        Some(p) => parse_config(p)?.env,
        None => EnvSpec::default(),
    };
    env.validate()?;
    let oracle = oracle_optimal_return(&env)?;
    println!("field,value");
    println!("digest,{}", env.digest());
    println!("n_agents,{}", env.n_agents());
    println!("horizon,{}", env.horizon());
    println!("oracle_return,{}", oracle.value);
    if let Some(x) = oracle.argmax {
        let parts: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        println!("oracle_argmax,\"{}\"", parts.join(";"));
    }
    Ok(ExitCode::SUCCESS)
}
