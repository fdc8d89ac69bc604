use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use attdet::attdet::{ArchConfig, Checkpoint};
use attdet::channel::ChannelConfig;
use attdet::harness::{
    build_detector, run_point, run_sweep, write_csv, DetectorSpec, SimConfig, TrainFile, CONFIG_SCHEMA,
};
use attdet::rng::seeded;
use attdet::training::{grad_check, initial_params, train_from, GradCheckReport};
use attdet::Error;

const GRADCHECK_THRESHOLD: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "attdet", version, about = "Attention-based MIMO detection lab")]
struct Cli {
    /// Print the configuration file schema and exit.
    #[arg(long)]
    print_schema: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a training config.
    Train { config: PathBuf },
    /// Run a BER sweep from a sweep config.
    Sweep { config: PathBuf },
    /// Measure one detector at one SNR of a sweep config's scenario.
    Eval {
        config: PathBuf,
        #[arg(long)]
        detector: String,
        #[arg(long)]
        snr: f64,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, conflicts_with = "default")]
        small: bool,
        #[arg(long)]
        default: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Describe a checkpoint file.
    Inspect { checkpoint: PathBuf },
}

enum Failure {
    Config(String),
    Runtime(Error),
    Gate(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            other => Failure::Runtime(other),
        }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match (cli.print_schema, cli.command) {
        (true, _) => {
            print!("{CONFIG_SCHEMA}");
            Ok(())
        }
        (false, Some(cmd)) => run(cmd),
        (false, None) => Err(Failure::Config("no subcommand given (see --help)".into())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error kind=config: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error kind={}: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::from(2)
        }
        Err(Failure::Gate(m)) => {
            eprintln!("error kind=gate: {m}");
            ExitCode::from(3)
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Train { config } => train(TrainFile::load(config)?),
        Command::Sweep { config } => sweep(SimConfig::load(config)?),
        Command::Eval { config, detector, snr } => eval(SimConfig::load(config)?, &detector, snr),
        Command::Gradcheck { default, seed, .. } => gradcheck(default, seed),
        Command::Inspect { checkpoint } => inspect(checkpoint),
    }
}

fn train(file: TrainFile) -> CliResult {
    let init = initial_params::<f64>(&file.train, &file.arch)?;
    eprintln!("training {} parameters on {} samples", init.len(), file.train.samples_total);
    let (_, log) = train_from(&file.train, init, |row| {
        eprintln!(
            "step {} samples {} loss {:.5} eval_ber {:.5} ({:.0}s)",
            row.step, row.samples_seen, row.loss, row.eval_ber, row.wall_seconds
        )
    })
    .map_err(Failure::from)?;
    let last = log.rows.last().map(|r| r.eval_ber);
    if let Some(ber) = last {
        println!("final_eval_ber={ber}");
    }
    match (file.max_final_ber, last) {
        (Some(max), Some(ber)) if ber > max => Err(Failure::Gate(format!("final held-out BER {ber} exceeds {max}"))),
        _ => Ok(()),
    }
}

fn sweep(cfg: SimConfig) -> CliResult {
    let points = run_sweep(&cfg)?;
    match &cfg.output {
        Some(path) => {
            for p in &points {
                eprintln!(
                    "{} {:>6} dB  ber {:.3e}  ({} errors, {:?})",
                    p.detector, p.snr_db, p.ber, p.bit_errors, p.stop
                );
            }
            eprintln!("wrote {}", path.display());
        }
        None => write_csv(&points, std::io::stdout().lock())
            .map_err(|e| Failure::Runtime(Error::Io { path: "<stdout>".into(), source: e }))?,
    }
    Ok(())
}

fn eval(cfg: SimConfig, detector: &str, snr: f64) -> CliResult {
    let spec: DetectorSpec = detector.parse()?;
    if !snr.is_finite() {
        return Err(Failure::Config(format!("--snr must be finite, got {snr}")));
    }
    let det = build_detector(&spec, &cfg)?;
    let p = run_point(&cfg, det.as_ref(), snr)?;
    write_csv(std::slice::from_ref(&p), std::io::stdout().lock())
        .map_err(|e| Failure::Runtime(Error::Io { path: "<stdout>".into(), source: e }))?;
    Ok(())
}

fn report(label: &str, r: &GradCheckReport) {
    println!(
        "{label}: max_rel_error={:.3e} checked={} of {} worst_index={} loss={:.6}",
        r.max_rel_error, r.checked, r.param_count, r.worst_index, r.loss
    );
}

fn gradcheck(default: bool, seed: u64) -> CliResult {
    let runs: Vec<(&str, ArchConfig, ChannelConfig)> = if default {
        vec![("default", ArchConfig::default(), ChannelConfig::iid(8, 2))]
    } else {
        vec![
            ("small", ArchConfig::small(), ChannelConfig::iid(2, 2)),
            ("small+smoothing", ArchConfig { score_smoothing: true, ..ArchConfig::small() }, ChannelConfig::iid(2, 2)),
        ]
    };
    let mut worst = 0.0f64;
    for (label, arch, channel) in runs {
        let r = grad_check(&arch, &channel, 1e-5, &mut seeded(seed))?;
        report(label, &r);
        worst = worst.max(r.max_rel_error);
    }
    if worst < GRADCHECK_THRESHOLD {
        Ok(())
    } else {
        Err(Failure::Gate(format!("max_rel_error {worst:.3e} is not below {GRADCHECK_THRESHOLD:e}")))
    }
}

fn inspect(path: PathBuf) -> CliResult {
    let bytes = std::fs::read(&path).map_err(|e| Failure::Runtime(Error::Io { path: path.clone(), source: e }))?;
    let ck = Checkpoint::decode(&bytes)?;
    let arch = ck.params.arch();
    println!("format_version: {}", ck.version);
    println!(
        "arch: d={} n_heads={} n_layers={} max_bits={} share_qk={} share_layer_params={} score_smoothing={} residual={}",
        arch.d, arch.n_heads, arch.n_layers, arch.max_bits, arch.share_qk, arch.share_layer_params, arch.score_smoothing,
        arch.residual
    );
    println!("n_rx: {}", ck.params.n_rx());
    println!("parameters: {}", ck.params.len());
    println!("checksum: {}", if ck.checksum_valid { "ok" } else { "MISMATCH" });
    if ck.checksum_valid {
        Ok(())
    } else {
        Err(Failure::Runtime(Error::InvalidCheckpoint("checksum mismatch".into())))
    }
}
