use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use routesim_core::harness::metrics::{compute_metrics, summary_json};
use routesim_core::harness::{
    episodes, read_trace, replay_rows, run_ablation, run_baseline, run_burst_test, run_training, RunFiles, RunOutput,
    ScenarioConfig, Variant,
};

/// Wireless-aware expert routing simulator.
#[derive(Debug, Parser)]
#[command(name = "routesim", version)]
struct Cli {
    /// Exit nonzero when a run violates a routing-safety or consistency
    /// invariant.
    #[arg(long, global = true)]
    self_check: bool,
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario file (TOML); built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory for config snapshot, trace, metrics and checkpoints.
    #[arg(long, short)]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of training episodes.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the full router.
    Train(RunArgs),
    /// Run a baseline: random, semantic_only or network_first.
    Baseline {
        kind: Variant,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train an ablated router: no_asem, no_cesac or no_mcp.
    Ablate {
        kind: Variant,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Burst-interference response of trained checkpoints.
    BurstTest {
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// `variant=path/to/model.ckpt`, repeatable.
        #[arg(long = "checkpoint", required = true, value_parser = parse_checkpoint)]
        checkpoints: Vec<(Variant, PathBuf)>,
        #[arg(long)]
        seed: Option<u64>,
        /// Report file (JSON); printed to stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Recompute the summary metrics of a trace file.
    Metrics {
        trace: PathBuf,
        /// Trailing episodes averaged.
        #[arg(long, default_value_t = 100)]
        eval_episodes: usize,
        /// Compare against an existing metrics file.
        #[arg(long)]
        check: Option<PathBuf>,
    },
    /// Re-derive every reward in a trace from its logged weights and SNRs.
    Replay {
        trace: PathBuf,
        /// Scenario snapshot; defaults to `config.toml` beside the trace.
        #[arg(long, short)]
        config: Option<PathBuf>,
    },
}

fn parse_checkpoint(s: &str) -> Result<(Variant, PathBuf), String> {
    let (v, p) = s.split_once('=').ok_or("expected variant=path")?;
    let v: Variant = v.parse().map_err(|e| format!("{e}"))?;
    Ok((v, PathBuf::from(p)))
}

fn load_config(path: Option<&Path>, seed: Option<u64>, episodes: Option<usize>) -> Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = episodes {
        cfg.episodes = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Violations a finished run must not show.
fn run_violations(out: &RunOutput, files: &RunFiles) -> Result<Vec<String>> {
    let mut v = Vec::new();
    let s = &out.summary.safety;
    if s.masked_invocations > 0 {
        v.push(format!("{} invocations of masked-out experts", s.masked_invocations));
    }
    if s.empty_masks > 0 {
        v.push(format!("{} all-zero coarse masks", s.empty_masks));
    }
    if let Some(m) = &out.summary.metrics {
        for (name, ms) in m.named() {
            if !(0.0..=1.0).contains(&ms.mean) {
                v.push(format!("{name} mean {} outside [0, 1]", ms.mean));
            }
        }
    }
    let rows = read_trace(fs::File::open(files.trace())?)?;
    let mut again = Vec::new();
    routesim_core::harness::write_trace(&mut again, &rows)?;
    if again != fs::read(files.trace())? || rows.len() != out.rows.len() {
        v.push("trace file does not reproduce the in-memory trace".into());
    }
    let written = fs::read_to_string(files.metrics())?;
    let summary = routesim_core::harness::summarize(
        &rows,
        &out.summary.variant,
        out.summary.seed,
        out.summary.eval_episodes,
    )?;
    if summary_json(&summary)? != written {
        v.push("metrics file is not reproduced from the trace".into());
    }
    let report = replay_rows(&out.simulation.config, &rows)?;
    if !report.consistent(0.0) {
        v.push(format!(
            "replay deviation {:e} at step {:?}",
            report.max_deviation, report.worst_step
        ));
    }
    Ok(v)
}

fn finish_run(out: RunOutput, files: &RunFiles, self_check: bool) -> Result<Vec<String>> {
    let s = &out.summary;
    match (&s.r_final, &s.metrics) {
        (Some(r), Some(m)) => {
            println!(
                "{} seed {}: R_final {:.4} ± {:.4} over the last {} episodes",
                s.variant, s.seed, r.mean, r.std, s.eval_episodes
            );
            for (name, ms) in m.named() {
                println!("  {name:<22} {:.4} ± {:.4}", ms.mean, ms.std);
            }
        }
        _ => println!("{} seed {}: no episodes run", s.variant, s.seed),
    }
    println!("wrote {}", files.dir.display());
    if self_check {
        run_violations(&out, files)
    } else {
        Ok(Vec::new())
    }
}

fn run(cli: Cli) -> Result<Vec<String>> {
    match cli.command {
        Command::Train(a) => {
            let cfg = load_config(a.config.as_deref(), a.seed, a.episodes)?.with_variant(Variant::Full);
            let files = RunFiles::new(&a.out);
            let out = run_training(&cfg, Some(&files))?;
            finish_run(out, &files, cli.self_check)
        }
        Command::Baseline { kind, run } => {
            let cfg = load_config(run.config.as_deref(), run.seed, run.episodes)?;
            let files = RunFiles::new(&run.out);
            let out = run_baseline(kind, &cfg, Some(&files))?;
            finish_run(out, &files, cli.self_check)
        }
        Command::Ablate { kind, run } => {
            let cfg = load_config(run.config.as_deref(), run.seed, run.episodes)?;
            let files = RunFiles::new(&run.out);
            let out = run_ablation(kind, &cfg, Some(&files))?;
            finish_run(out, &files, cli.self_check)
        }
        Command::BurstTest {
            config,
            checkpoints,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref(), seed, None)?;
            let refs: Vec<(Variant, &Path)> = checkpoints.iter().map(|(v, p)| (*v, p.as_path())).collect();
            let report = run_burst_test(&cfg, &refs)?;
            let text = serde_json::to_string_pretty(&report)? + "\n";
            match out {
                Some(p) => {
                    fs::write(&p, &text)?;
                    for o in &report.outcomes {
                        println!(
                            "{:<14} dip {:.4}  event mean {:.4} (clean {:.4})  recovery {} steps{}",
                            o.variant,
                            o.dip_depth,
                            o.event_mean,
                            o.clean_event_mean,
                            o.recovery_steps,
                            if o.recovered { "" } else { " (not recovered)" }
                        );
                    }
                    println!("wrote {}", p.display());
                }
                None => print!("{text}"),
            }
            let mut v = Vec::new();
            if cli.self_check {
                for o in &report.outcomes {
                    if !o.dip_depth.is_finite() || !o.event_mean.is_finite() {
                        v.push(format!("{}: non-finite burst statistics", o.variant));
                    }
                }
            }
            Ok(v)
        }
        Command::Metrics {
            trace,
            eval_episodes,
            check,
        } => {
            let rows = read_trace(fs::File::open(&trace).with_context(|| format!("opening {}", trace.display()))?)?;
            let eps = episodes(&rows);
            let tail = &eps[eps.len().saturating_sub(eval_episodes)..];
            let m = compute_metrics(tail)?;
            print!("{}", serde_json::to_string_pretty(&m)? + "\n");
            let mut v = Vec::new();
            if let Some(path) = check {
                let written: routesim_core::harness::RunSummary = serde_json::from_str(&fs::read_to_string(&path)?)?;
                if written.metrics.as_ref() != Some(&m) {
                    v.push(format!("{} does not match the trace", path.display()));
                }
            }
            Ok(v)
        }
        Command::Replay { trace, config } => {
            let cfg_path = match config {
                Some(p) => p,
                None => trace.parent().unwrap_or(Path::new(".")).join("config.toml"),
            };
            let cfg = ScenarioConfig::load(&cfg_path).with_context(|| format!("loading {}", cfg_path.display()))?;
            let rows = read_trace(fs::File::open(&trace).with_context(|| format!("opening {}", trace.display()))?)?;
            let report = replay_rows(&cfg, &rows)?;
            println!("episode,steps,mean_r_final,mean_r_llm,mean_r_channel");
            for ep in episodes(&rows) {
                let n = ep.len() as f64;
                let mean = |f: fn(&routesim_core::harness::StepRecord) -> f64| ep.iter().map(f).sum::<f64>() / n;
                println!(
                    "{},{},{:.6},{:.6},{:.6}",
                    ep[0].episode,
                    ep.len(),
                    mean(|r| r.r_final),
                    mean(|r| r.r_llm),
                    mean(|r| r.r_channel)
                );
            }
            eprintln!(
                "{} rows; max reward deviation {:e}; masked invocations {}; empty masks {}",
                report.rows, report.max_deviation, report.safety.masked_invocations, report.safety.empty_masks
            );
            let mut v = Vec::new();
            if !report.consistent(0.0) {
                v.push(format!(
                    "trace is inconsistent (deviation {:e} at step {:?}, {} rows with invalid weights)",
                    report.max_deviation, report.worst_step, report.invalid_weight_rows
                ));
            }
            Ok(v)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    let self_check = cli.self_check;
    match run(cli) {
        Ok(violations) if violations.is_empty() => {
            if self_check {
                println!("self-check passed");
            }
            ExitCode::SUCCESS
        }
        Ok(violations) => {
            for v in &violations {
                eprintln!("self-check: {v}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
