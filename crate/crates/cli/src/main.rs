use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rrdps_core::harness::{
    calibrate_demo, emit_report, parse_range, run_analytic, run_montecarlo, sweep, sweep_csv, Mode,
    ReportPaths, RunConfig, SessionReport,
};
use rrdps_core::Error;

#[derive(Parser, Debug)]
#[command(name = "rrdps", version, about = "Round-robin DPS QKD session simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Key rate from the closed-form channel model, or from measured inputs with --published
    Analytic {
        /// Start from the published session (103,679,400 rounds, e_bit 8.9%)
        #[arg(long)]
        published: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Full per-round simulation; needs --seed
    Montecarlo {
        #[command(flatten)]
        common: Common,
    },
    /// Phase-lock loop against simulated drift
    CalibrateDemo {
        /// Simulated seconds
        #[arg(long, default_value_t = 3600)]
        seconds: u64,
        /// Visibility a delay must hold
        #[arg(long, default_value_t = 0.96)]
        threshold: f64,
        /// Write the final calibration table here
        #[arg(long)]
        table_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Vary one config key and print a CSV table
    Sweep {
        /// Config key to vary, e.g. e-bit
        #[arg(long)]
        param: String,
        /// start:stop:count, or a comma-separated list
        #[arg(long)]
        range: String,
        /// Start from the published session
        #[arg(long)]
        published: bool,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// key = value config file, applied before flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (or file, for sweep)
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    pulses: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long)]
    total_loss_db: Option<String>,
    #[arg(long)]
    excess_loss_db: Option<String>,
    #[arg(long)]
    efficiency: Option<String>,
    #[arg(long)]
    dark_rate_cps: Option<String>,
    #[arg(long)]
    gate_fraction: Option<String>,
    /// One value for every delay, or a comma-separated table indexed by delay
    #[arg(long)]
    visibility: Option<String>,
    #[arg(long)]
    phase_offset: Option<String>,
    #[arg(long)]
    round_rate_hz: Option<String>,
    #[arg(long)]
    locking_window_ms: Option<String>,
    #[arg(long)]
    qkd_window_ms: Option<String>,
    #[arg(long)]
    settle_us: Option<String>,
    #[arg(long)]
    total_rounds: Option<String>,
    #[arg(long)]
    duration_s: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    gain: Option<String>,
    #[arg(long)]
    sifted_bits: Option<String>,
    #[arg(long)]
    e_bit: Option<String>,
    /// on/off
    #[arg(long)]
    phase_lock: Option<String>,
    #[arg(long)]
    drift_sigma: Option<String>,
    #[arg(long)]
    drift_rate: Option<String>,
    #[arg(long)]
    lock_flux: Option<String>,
    #[arg(long)]
    lock_efficiency: Option<String>,
    #[arg(long)]
    lock_steps: Option<String>,
    #[arg(long)]
    refine_step: Option<String>,
    #[arg(long)]
    refine_steps: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> [(&'static str, &Option<String>); 28] {
        [
            ("pulses", &self.pulses),
            ("mu", &self.mu),
            ("total-loss-db", &self.total_loss_db),
            ("excess-loss-db", &self.excess_loss_db),
            ("efficiency", &self.efficiency),
            ("dark-rate-cps", &self.dark_rate_cps),
            ("gate-fraction", &self.gate_fraction),
            ("visibility", &self.visibility),
            ("phase-offset", &self.phase_offset),
            ("round-rate-hz", &self.round_rate_hz),
            ("locking-window-ms", &self.locking_window_ms),
            ("qkd-window-ms", &self.qkd_window_ms),
            ("settle-us", &self.settle_us),
            ("total-rounds", &self.total_rounds),
            ("duration-s", &self.duration_s),
            ("seed", &self.seed),
            ("mode", &self.mode),
            ("gain", &self.gain),
            ("sifted-bits", &self.sifted_bits),
            ("e-bit", &self.e_bit),
            ("phase-lock", &self.phase_lock),
            ("drift-sigma", &self.drift_sigma),
            ("drift-rate", &self.drift_rate),
            ("lock-flux", &self.lock_flux),
            ("lock-efficiency", &self.lock_efficiency),
            ("lock-steps", &self.lock_steps),
            ("refine-step", &self.refine_step),
            ("refine-steps", &self.refine_steps),
        ]
    }
}

impl Common {
    fn config(&self, published: bool) -> Result<RunConfig> {
        let mut cfg = if published {
            RunConfig::published()
        } else {
            RunConfig::default()
        };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            cfg.apply_text(&text)
                .with_context(|| format!("in config {}", path.display()))?;
        }
        for (key, value) in self.overrides.pairs() {
            if let Some(v) = value {
                cfg.set(key, v).with_context(|| format!("--{key}"))?;
            }
        }
        Ok(cfg)
    }
}

fn finish(report: &SessionReport, out: Option<&Path>) -> Result<()> {
    print!("{}", report.render());
    if let Some(dir) = out {
        let paths = ReportPaths::in_dir(dir);
        emit_report(report, &paths)?;
        println!("wrote {} and {}", paths.summary.display(), paths.delay_table.display());
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analytic { published, common } => {
            let mut cfg = common.config(published)?;
            if cfg.mode == Mode::Montecarlo {
                cfg.mode = Mode::Analytic;
            }
            finish(&run_analytic(&cfg)?, common.out.as_deref())
        }
        Command::Montecarlo { common } => {
            let mut cfg = common.config(false)?;
            cfg.mode = Mode::Montecarlo;
            finish(&run_montecarlo(&cfg)?, common.out.as_deref())
        }
        Command::CalibrateDemo {
            seconds,
            threshold,
            table_out,
            common,
        } => {
            let cfg = common.config(false)?;
            let (trace, table) = calibrate_demo(&cfg, seconds, threshold)?;
            let delays = 1..trace.fraction_above.len();
            let n = delays.len();
            let passing = delays
                .clone()
                .filter(|&d| trace.fraction_above[d] >= 0.95)
                .count();
            let worst = delays
                .clone()
                .map(|d| trace.min_visibility[d])
                .fold(f64::INFINITY, f64::min);
            let mean = delays.map(|d| trace.mean_visibility[d]).sum::<f64>() / n.max(1) as f64;
            println!("simulated seconds   {}", trace.seconds);
            println!("delays              {n}");
            println!("mean visibility     {mean:.4}");
            println!("worst visibility    {worst:.4}");
            println!("delays >= {threshold} in 95% of samples: {passing}/{n}");
            if let Some(path) = table_out {
                table.save(&path)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Sweep {
            param,
            range,
            published,
            common,
        } => {
            let cfg = common.config(published)?;
            let values = parse_range(&range)?;
            let rows = sweep(&cfg, &param, &values)?;
            let csv = sweep_csv(&param, &rows);
            match &common.out {
                Some(path) => {
                    std::fs::write(path, &csv)
                        .with_context(|| format!("writing {}", path.display()))?;
                    println!("wrote {}", path.display());
                }
                None => print!("{csv}"),
            }
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::Infeasible(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
