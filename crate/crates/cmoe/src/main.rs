//! Command-line front end: training, benchmarking, ablations, activation
//! export, terrain dumps, and single-episode evaluation.

use clap::{Parser, Subcommand};
use cmoe::config::RunConfig;
use cmoe::harness;
use cmoe::policy::ACTION_DIM;
use cmoe::rng;
use cmoe::sim::{Done, Env};
use cmoe::terrain::{Heightfield, TerrainClass};
use cmoe::trainer::{Model, Trainer};
use cmoe::{io_err, Result};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "cmoe", version, about = "Mixture-of-experts locomotion training stack")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy and write checkpoints plus a metrics CSV.
    Train {
        /// Config file of `key = value` lines; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override single keys, e.g. --set train.seed=3.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Resume from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Benchmark a checkpoint over a terrain list.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Comma-separated classes, e.g. flat,slope,gap.
        #[arg(long)]
        terrains: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for bench.csv and bench.json; stdout gets the CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Benchmark with one expert removed from the fusion.
    Ablate {
        #[arg(long)]
        expert: usize,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        terrains: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump per-step gate weights and expert output norms as CSV.
    ExportActivations {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Comma-separated classes, traced in order.
        #[arg(long, default_value = "hurdle,slope,stairs_down,gap")]
        terrains: String,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate one heightfield: CSV samples plus an ASCII side view.
    GenTerrain {
        #[arg(long)]
        class: String,
        #[arg(long, default_value_t = 0.5)]
        difficulty: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20.0)]
        length: f64,
        /// CSV goes here instead of stdout when given.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one deterministic episode and report the outcome.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value = "flat")]
        terrain: String,
        #[arg(long, default_value_t = 0.5)]
        difficulty: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write a per-step trajectory CSV.
        #[arg(long)]
        record: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_terrains(list: &str) -> Result<Vec<TerrainClass>> {
    list.split(',')
        .map(|s| TerrainClass::parse(s.trim()))
        .collect()
}

fn write_report(report: &harness::BenchReport, out: &Option<PathBuf>) -> Result<()> {
    print!("{}", report.to_csv());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let csv = dir.join("bench.csv");
        std::fs::write(&csv, report.to_csv()).map_err(|e| io_err(&csv, e))?;
        let json = dir.join("bench.json");
        std::fs::write(&json, report.to_json()).map_err(|e| io_err(&json, e))?;
    }
    Ok(())
}

fn ascii_side_view(hf: &Heightfield) -> String {
    const COLS: usize = 78;
    const ROWS: usize = 14;
    let mut heights = Vec::with_capacity(COLS);
    for c in 0..COLS {
        let x = hf.length * c as f64 / (COLS - 1) as f64;
        heights.push(hf.height_at(x));
    }
    let lo = heights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(0.05);
    let mut out = String::new();
    for r in (0..ROWS).rev() {
        let level = lo + span * r as f64 / (ROWS - 1) as f64;
        for &h in &heights {
            out.push(if h >= level { '#' } else { ' ' });
        }
        out.push('\n');
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config, set, out, resume } => {
            let cfg = load_config(&config, &set)?;
            let mut trainer = Trainer::new(cfg)?;
            if let Some(ckpt) = resume {
                trainer.load_checkpoint(&ckpt)?;
                println!("resumed from {} at iteration {}", ckpt.display(), trainer.iteration);
            }
            trainer.train(&out)?;
            println!(
                "trained to iteration {}; outputs in {}",
                trainer.iteration,
                out.display()
            );
            Ok(())
        }
        Cmd::Bench { checkpoint, config, set, terrains, seed, out } => {
            let cfg = load_config(&config, &set)?;
            let model = Model::load(&cfg, &checkpoint)?;
            let list = parse_terrains(&terrains)?;
            let report = harness::run_benchmark(&model, &cfg, &list, seed)?;
            write_report(&report, &out)
        }
        Cmd::Ablate { expert, checkpoint, config, set, terrains, seed, out } => {
            let cfg = load_config(&config, &set)?;
            let model = Model::load(&cfg, &checkpoint)?;
            let list = parse_terrains(&terrains)?;
            let report = harness::run_ablation(&model, &cfg, expert, &list, seed)?;
            write_report(&report, &out)
        }
        Cmd::ExportActivations { checkpoint, config, set, terrains, episodes, seed, out } => {
            let cfg = load_config(&config, &set)?;
            let model = Model::load(&cfg, &checkpoint)?;
            let list = parse_terrains(&terrains)?;
            let rows = harness::export_activations(&model, &cfg, &list, episodes, seed)?;
            let csv = harness::activations_csv(&rows, model.policy.num_experts());
            match out {
                Some(p) => {
                    std::fs::write(&p, csv).map_err(|e| io_err(&p, e))?;
                    println!("{} rows written to {}", rows.len(), p.display());
                }
                None => print!("{csv}"),
            }
            Ok(())
        }
        Cmd::GenTerrain { class, difficulty, seed, length, out } => {
            let class = TerrainClass::parse(&class)?;
            let mut rng = rng::stream(seed, rng::STREAM_HARNESS);
            let hf = Heightfield::generate(class, difficulty, length, &mut rng)?;
            let mut csv = String::from("x,height\n");
            for (i, h) in hf.heights.iter().enumerate() {
                csv.push_str(&format!("{:?},{h:?}\n", i as f64 * cmoe::terrain::SPACING));
            }
            match out {
                Some(p) => {
                    std::fs::write(&p, &csv).map_err(|e| io_err(&p, e))?;
                    println!("{} samples written to {}", hf.heights.len(), p.display());
                }
                None => print!("{csv}"),
            }
            print!("{}", ascii_side_view(&hf));
            Ok(())
        }
        Cmd::Eval { checkpoint, config, set, terrain, difficulty, seed, record } => {
            let cfg = load_config(&config, &set)?;
            let model = Model::load(&cfg, &checkpoint)?;
            let class = TerrainClass::parse(&terrain)?;
            eval_episode(&model, &cfg, class, difficulty, seed, record.as_deref())
        }
    }
}

fn eval_episode(
    model: &Model,
    cfg: &RunConfig,
    class: TerrainClass,
    difficulty: f64,
    seed: u64,
    record: Option<&Path>,
) -> Result<()> {
    let mut env_cfg = cfg.env.clone();
    env_cfg.episode_seconds = cfg.bench.duration_seconds;
    let mut terrain_rng = rng::stream(seed, rng::STREAM_HARNESS);
    let length = (env_cfg.spawn_x + cfg.bench.runway + 4.0).max(cmoe::terrain::MIN_LENGTH);
    let hf = Heightfield::generate(class, difficulty, length, &mut terrain_rng)?;
    let mut env = Env::new(env_cfg, seed, 0);
    let mut obs = env.reset(hf, (cfg.bench.command_speed, cfg.bench.command_speed))?;
    let mut trace = String::from("step,time,x,z,pitch,vx,reward,a0,a1,a2,a3\n");
    let mut steps = 0usize;
    let outcome = loop {
        let feats = model.assemble(&obs, None);
        let (mu, _, _) = model.policy.moe_action(&model.store, &feats.input);
        let mut action = [0.0; ACTION_DIM];
        action.copy_from_slice(&mu);
        let out = env.step(action)?;
        let w = env.walker();
        trace.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            steps,
            env.elapsed(),
            w.q[0],
            w.q[1],
            w.q[2],
            w.qd[0],
            out.reward.total,
            action[0],
            action[1],
            action[2],
            action[3],
        ));
        steps += 1;
        match out.done {
            Done::Running => obs = out.obs,
            done => break done,
        }
    };
    println!(
        "{class:?} d={difficulty}: {steps} steps, {:.2} m, outcome {outcome:?}",
        env.distance_traveled()
    );
    if let Some(p) = record {
        std::fs::write(p, trace).map_err(|e| io_err(p, e))?;
        println!("trajectory written to {}", p.display());
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
