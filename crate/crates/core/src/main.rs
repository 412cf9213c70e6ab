use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use swapsim::link::{LinkConfig, DEFAULT_F_GEN};
use swapsim::network::Protocol;
use swapsim::sweep::{
    parse_duration, parse_lengths, run_sweep, workers_from_env, write_event_log, write_results_csv, write_sweep_outputs,
    Experiment, LinkMode, SweepConfig, SweepRow,
};
use swapsim::trainer::{bank_configs, evaluate_greedy, train, train_policy_bank, write_trace, TrainerConfig};
use swapsim::{Constants, Error, Result};

#[derive(Parser)]
#[command(name = "swapsim", version, about = "Repeater-chain swapping simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one chain configuration for a number of trials.
    Simulate(SimulateArgs),
    /// Run an experiment grid.
    Sweep(SweepArgs),
    /// Train a link policy, or the full policy bank.
    Train(TrainArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Sequential,
    Simultaneous,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkModeArg {
    Synthetic,
    Scripted,
    Policy,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Matched,
    Offdiag,
    Bottleneck,
    Relaxed,
    Intermediate,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "both")]
    protocol: ProtocolArg,
    /// Comma-separated link lengths, km.
    #[arg(long, default_value = "10,10,10,10")]
    lengths: String,
    /// External memory coherence time, e.g. 1250us.
    #[arg(long, default_value = "1250us")]
    tc_ext: String,
    /// Internal memory coherence time; defaults to --tc-ext.
    #[arg(long)]
    tc_int: Option<String>,
    #[arg(long, value_enum, default_value = "synthetic")]
    link_mode: LinkModeArg,
    /// Weight file, or a bank directory, for --link-mode policy.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value = "5s")]
    sim_time: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Results CSV path.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Synthetic mean delivered fidelity.
    #[arg(long)]
    f_mean: Option<f64>,
    /// Synthetic mean delivery interval, in link ticks.
    #[arg(long)]
    mean_interval_ticks: Option<f64>,
    /// Synthetic fidelity jitter half-width.
    #[arg(long)]
    jitter: Option<f64>,
    /// Also write the per-event log to this path.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    capacity: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    experiment: ExperimentArg,
    /// Flat key = value file applied on top of the experiment preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the simulated time per trial.
    #[arg(long)]
    sim_time: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Link length, km.
    #[arg(long = "L", default_value_t = 10.0)]
    length_km: f64,
    /// Internal coherence time in link ticks.
    #[arg(long, default_value_t = 50.0)]
    tc_int_ratio: f64,
    #[arg(long, default_value_t = swapsim::link::DEFAULT_F0)]
    f0: f64,
    #[arg(long, default_value_t = DEFAULT_F_GEN)]
    f_gen: f64,
    #[arg(long, default_value_t = 10_000)]
    batch: usize,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight file; with --bank, the output directory.
    #[arg(long, default_value = "policy.bin")]
    out: PathBuf,
    /// Train all ten bank configurations into --out.
    #[arg(long)]
    bank: bool,
    /// Episodes for the greedy evaluation printed after training.
    #[arg(long, default_value_t = 10_000)]
    eval_episodes: usize,
}

fn link_mode(args: &SimulateArgs) -> Result<LinkMode> {
    let synthetic_flags = args.f_mean.is_some() || args.mean_interval_ticks.is_some() || args.jitter.is_some();
    match args.link_mode {
        LinkModeArg::Synthetic => {
            let LinkMode::Synthetic {
                f_mean,
                mean_interval_ticks,
                jitter,
            } = LinkMode::reference_synthetic()
            else {
                unreachable!()
            };
            Ok(LinkMode::Synthetic {
                f_mean: args.f_mean.unwrap_or(f_mean),
                mean_interval_ticks: args.mean_interval_ticks.unwrap_or(mean_interval_ticks),
                jitter: args.jitter.unwrap_or(jitter),
            })
        }
        _ if synthetic_flags => Err(Error::Config("--f-mean, --mean-interval-ticks and --jitter need --link-mode synthetic".into())),
        LinkModeArg::Scripted => Ok(LinkMode::Scripted),
        LinkModeArg::Policy => {
            let path = args
                .policy
                .clone()
                .ok_or_else(|| Error::Config("--link-mode policy needs --policy".into()))?;
            Ok(if path.is_dir() {
                LinkMode::PolicyBank { dir: path }
            } else {
                LinkMode::PolicyFile { path }
            })
        }
    }
}

fn print_rows(rows: &[SweepRow]) {
    println!(
        "{:<12} {:<14} {:>10} {:>10} {:>12} {:>10} {:>9} {:>12} {:>9}",
        "protocol", "lengths", "tc_int", "tc_ext", "u_skr bps", "±95%", "F", "dwell µs", "N"
    );
    let opt = |v: Option<f64>, scale: f64, prec: usize| v.map_or("-".to_string(), |x| format!("{:.prec$}", x * scale));
    for r in rows {
        println!(
            "{:<12} {:<14} {:>10} {:>10} {:>12.4} {:>10} {:>9} {:>12} {:>9}",
            r.protocol,
            r.lengths,
            format!("{:.6}", r.tc_int_s),
            format!("{:.6}", r.tc_ext_s),
            r.mean_uskr_bps,
            opt(r.ci95_bps, 1.0, 4),
            opt(r.pooled_f, 1.0, 5),
            opt(r.mean_dwell_s, 1e6, 2),
            r.n_deliveries_total
        );
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let consts = Constants::default();
    let tc_ext = parse_duration(&args.tc_ext)?;
    let tc_int = args.tc_int.as_deref().map(parse_duration).transpose()?;
    let mut cfg = SweepConfig::preset(Experiment::Single);
    cfg.topologies = vec![parse_lengths(&args.lengths)?];
    cfg.tc_ext = vec![tc_ext];
    cfg.tc_int = tc_int.into_iter().collect();
    cfg.protocols = match args.protocol {
        ProtocolArg::Sequential => vec![Protocol::Sequential],
        ProtocolArg::Simultaneous => vec![Protocol::Simultaneous],
        ProtocolArg::Both => Protocol::ALL.to_vec(),
    };
    cfg.link_mode = link_mode(&args)?;
    cfg.trials = args.trials;
    cfg.sim_time = parse_duration(&args.sim_time)?;
    cfg.base_seed = args.seed;
    cfg.record_events = args.events.is_some();
    if let Some(c) = args.capacity {
        cfg.capacity = c;
    }
    let result = run_sweep(&cfg, &consts, workers_from_env()?)?;
    let rows = result.rows();
    ensure_parent(&args.out)?;
    write_results_csv(&args.out, &rows)?;
    if let Some(path) = &args.events {
        ensure_parent(path)?;
        write_event_log(path, &result)?;
    }
    print_rows(&rows);
    info!("results written to {}", args.out.display());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let consts = Constants::default();
    let experiment = match args.experiment {
        ExperimentArg::Matched => Experiment::Matched,
        ExperimentArg::Offdiag => Experiment::Offdiag,
        ExperimentArg::Bottleneck => Experiment::Bottleneck,
        ExperimentArg::Relaxed => Experiment::Relaxed,
        ExperimentArg::Intermediate => Experiment::Intermediate,
    };
    let mut cfg = SweepConfig::preset(experiment);
    if let Some(path) = &args.config {
        cfg.apply_text(&fs::read_to_string(path)?)?;
        if cfg.experiment != experiment {
            return Err(Error::Config(format!(
                "config file names experiment {} but --experiment is {experiment}",
                cfg.experiment
            )));
        }
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = &args.sim_time {
        cfg.sim_time = parse_duration(s)?;
    }
    let result = run_sweep(&cfg, &consts, workers_from_env()?)?;
    write_sweep_outputs(&args.out_dir, &result, &consts)?;
    print_rows(&result.rows());
    info!("outputs written to {}", args.out_dir.display());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let consts = Constants::default();
    let tc = TrainerConfig {
        learning_rate: args.lr,
        iterations: args.iters,
        batch_size: args.batch,
        seed: args.seed,
        ..TrainerConfig::default()
    };
    if args.bank {
        if (args.f_gen - DEFAULT_F_GEN).abs() > 0.0 {
            return Err(Error::Config("--f-gen is not supported with --bank".into()));
        }
        let entries = train_policy_bank(&bank_configs(), args.f0, &consts, &tc, &args.out)?;
        for e in entries {
            let cfg = LinkConfig::with_ratio(e.length_km, e.tc_int_ratio, &consts).with_f0(args.f0);
            let net = swapsim::link::Mlp::load(&e.policy_path)?;
            let ev = evaluate_greedy(&net, &cfg, args.eval_episodes, args.seed)?;
            println!(
                "L={} km Tc_int={}τ: F={:.4} interval={:.2}τ utility={:.4} bits/tick{}",
                e.length_km,
                e.tc_int_ratio,
                ev.mean_fidelity.unwrap_or(0.0),
                ev.mean_interval_ticks.unwrap_or(f64::INFINITY),
                ev.utility_per_tick(),
                if e.converged { "" } else { " (not converged)" }
            );
        }
        return Ok(());
    }
    let cfg = LinkConfig::with_ratio(args.length_km, args.tc_int_ratio, &consts)
        .with_f0(args.f0)
        .with_f_gen(args.f_gen);
    let (net, trace) = train(&cfg, &tc)?;
    ensure_parent(&args.out)?;
    net.save(&args.out)?;
    let trace_path = args.out.with_extension("csv");
    write_trace(&trace_path, &trace)?;
    let ev = evaluate_greedy(&net, &cfg, args.eval_episodes, args.seed)?;
    println!(
        "greedy over {} episodes: {} deliveries, F={:.4}, interval={:.2}τ, utility={:.4} bits/tick",
        ev.episodes,
        ev.deliveries,
        ev.mean_fidelity.unwrap_or(0.0),
        ev.mean_interval_ticks.unwrap_or(f64::INFINITY),
        ev.utility_per_tick()
    );
    println!("weights: {}  trace: {}", args.out.display(), trace_path.display());
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Train(a) => train_cmd(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
