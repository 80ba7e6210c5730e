use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use telearm::commands::{
    self, CalibrationInput, LeadOptions, LeadSource, MasterMapping, RunOptions, SimOptions, SimTarget,
};
use telearm::config::{parse_list, AppConfig, ConfigError, NodeRole};
use telearm::AppError;

#[derive(Parser)]
#[command(name = "telearm", version, about = "Teleoperation of a five-joint desk arm")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags every subcommand accepts; each overrides the config file.
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Control loop rate (Hz).
    #[arg(long)]
    tick_rate: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// DH chain file instead of the built-in table.
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Backend: sim, emulated or serial:PORT.
    #[arg(long)]
    device: Option<String>,
    /// Fixed delay injected on frames this process sends (ms).
    #[arg(long)]
    delay_ms: Option<f64>,
    #[arg(long)]
    jitter_ms: Option<f64>,
    #[arg(long)]
    drop_rate: Option<f64>,
    /// Seed of the fault schedule.
    #[arg(long)]
    seed: Option<u64>,
    /// Serve the WebSocket UI bridge on this address.
    #[arg(long)]
    ui: Option<String>,
    /// Stop after this many seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Write a JSONL tick log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Print the final summary as one JSON object.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the follower: network session, controller and robot.
    Follow {
        #[command(flatten)]
        common: Common,
        /// Connect out to a relay's follower port.
        #[arg(long, conflicts_with = "listen")]
        connect: Option<String>,
        /// Accept leaders directly on this address.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Stream targets from a script, the potentiometer master or the UI.
    Lead {
        #[command(flatten)]
        common: Common,
        /// Relay leader port (or a listening follower).
        #[arg(long)]
        connect: Option<String>,
        /// JSONL script of timed targets.
        #[arg(long, conflicts_with = "master")]
        script: Option<PathBuf>,
        /// Read the potentiometer master with this mapping.
        #[arg(long, value_enum)]
        master: Option<MasterArg>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Keep streaming this long after the last script entry (ms).
        #[arg(long, default_value_t = 1000)]
        hold_ms: u64,
        /// Fail when no follower answers within this long (s).
        #[arg(long, default_value_t = 10.0)]
        answer_timeout: f64,
    },
    /// Pair one leader with one follower and forward frames verbatim.
    Relay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        listen_leader: Option<String>,
        #[arg(long)]
        listen_follower: Option<String>,
    },
    /// Closed loop against the local robot, without a network.
    Sim {
        #[command(flatten)]
        common: Common,
        /// Joint target, comma separated (rad).
        #[arg(long, conflicts_with_all = ["target_pose", "script"])]
        target_q: Option<String>,
        /// Pose target `x,y,z` or `x,y,z,roll,pitch,yaw`.
        #[arg(long, conflicts_with = "script")]
        target_pose: Option<String>,
        #[arg(long)]
        script: Option<PathBuf>,
        /// Number of control ticks.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value_t = 1000)]
        hold_ms: u64,
        /// Pace ticks on the wall clock.
        #[arg(long)]
        realtime: bool,
    },
    /// Capture potentiometer travel and write a calibration file.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Read recorded counts (six per line) instead of a device.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Capture time when reading a device (s).
        #[arg(long, default_value_t = 15.0)]
        seconds: f64,
    },
    /// Re-run a tick log against the simulator.
    Replay {
        log: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MasterArg {
    Joints,
    Pose,
}

fn load_config(c: &Common, role: NodeRole) -> Result<AppConfig, AppError> {
    let mut cfg = match &c.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    cfg.role = role;
    if let Some(v) = c.tick_rate {
        cfg.tick_rate_hz = v;
    }
    if let Some(v) = c.alpha {
        cfg.gains.alpha = v;
    }
    if let Some(v) = c.lambda {
        cfg.gains.lambda = v;
    }
    if let Some(v) = c.eta {
        cfg.gains.eta = v;
    }
    if let Some(v) = &c.chain {
        cfg.chain = Some(v.clone());
    }
    if let Some(v) = &c.device {
        cfg.device = v.parse()?;
    }
    if let Some(v) = c.delay_ms {
        cfg.faults.fixed_delay_ms = v;
    }
    if let Some(v) = c.jitter_ms {
        cfg.faults.jitter_ms = v;
    }
    if let Some(v) = c.drop_rate {
        cfg.faults.drop_rate = v;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = &c.ui {
        cfg.endpoints.ui = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_options(c: &Common) -> Result<RunOptions, AppError> {
    let duration = c
        .duration
        .map(|s| Duration::try_from_secs_f64(s).map_err(|_| ConfigError::Invalid(format!("bad duration {s}"))))
        .transpose()?;
    Ok(RunOptions { duration, log: c.log.clone() })
}

fn print_summary<T: Serialize>(json: bool, title: &str, value: &T) {
    if json {
        println!("{}", serde_json::to_string(value).expect("summary serializes"));
        return;
    }
    println!("{title}");
    if let serde_json::Value::Object(map) = serde_json::to_value(value).expect("summary serializes") {
        for (k, v) in map {
            println!("  {k}: {v}");
        }
    }
}

fn run(cli: Cli, shutdown: Arc<AtomicBool>) -> Result<(), AppError> {
    match cli.cmd {
        Cmd::Follow { common, connect, listen } => {
            let mut cfg = load_config(&common, NodeRole::Follower)?;
            if let Some(a) = connect {
                cfg.endpoints.follower_connect = a;
                cfg.endpoints.follower_listen = None;
            }
            if let Some(a) = listen {
                cfg.endpoints.follower_listen = Some(a);
            }
            let s = commands::run_follow(&cfg, &run_options(&common)?, shutdown)?;
            print_summary(common.json, "follow finished", &s);
        }
        Cmd::Lead { common, connect, script, master, calibration, hold_ms, answer_timeout } => {
            let mut cfg = load_config(&common, NodeRole::Leader)?;
            if let Some(a) = connect {
                cfg.endpoints.leader_connect = a;
            }
            if let Some(p) = calibration {
                cfg.calibration = Some(p);
            }
            let source = match (script, master) {
                (Some(p), _) => LeadSource::Script(commands::load_script(&p)?),
                (None, Some(MasterArg::Joints)) => LeadSource::Master(MasterMapping::Joints),
                (None, Some(MasterArg::Pose)) => LeadSource::Master(MasterMapping::Pose),
                (None, None) if cfg.endpoints.ui.is_some() => LeadSource::Ui,
                (None, None) => {
                    return Err(ConfigError::Invalid("lead needs --script, --master or --ui".into()).into());
                }
            };
            let answer_timeout = Duration::try_from_secs_f64(answer_timeout)
                .map_err(|_| ConfigError::Invalid(format!("bad answer timeout {answer_timeout}")))?;
            let opts = LeadOptions {
                source,
                hold: Duration::from_millis(hold_ms),
                answer_timeout,
                duration: run_options(&common)?.duration,
            };
            let s = commands::run_lead(&cfg, &opts, shutdown)?;
            print_summary(common.json, "lead finished", &s);
        }
        Cmd::Relay { common, listen_leader, listen_follower } => {
            let mut cfg = load_config(&common, NodeRole::Relay)?;
            if let Some(a) = listen_leader {
                cfg.endpoints.relay_leader = a;
            }
            if let Some(a) = listen_follower {
                cfg.endpoints.relay_follower = a;
            }
            let s = commands::run_relay(&cfg, &run_options(&common)?, shutdown)?;
            print_summary(common.json, "relay finished", &s);
        }
        Cmd::Sim { common, target_q, target_pose, script, steps, hold_ms, realtime } => {
            let cfg = load_config(&common, NodeRole::Sim)?;
            let target = if let Some(q) = target_q {
                SimTarget::Joints(parse_list(&q)?)
            } else if let Some(p) = target_pose {
                let v = parse_list(&p)?;
                match v.len() {
                    3 => SimTarget::Pose { t: [v[0], v[1], v[2]], rpy: [0.0; 3] },
                    6 => SimTarget::Pose { t: [v[0], v[1], v[2]], rpy: [v[3], v[4], v[5]] },
                    n => return Err(ConfigError::Invalid(format!("--target-pose takes 3 or 6 values, got {n}")).into()),
                }
            } else if let Some(p) = script {
                SimTarget::Script(commands::load_script(&p)?)
            } else {
                SimTarget::Hold
            };
            let sim = SimOptions { target, steps, hold: Duration::from_millis(hold_ms), realtime };
            let s = commands::run_sim(&cfg, &sim, &run_options(&common)?, shutdown)?;
            if !common.json {
                println!("final |q - q_d| = {:.3e}", s.tracking);
            }
            print_summary(common.json, "sim finished", &s);
        }
        Cmd::Calibrate { common, samples, out, seconds } => {
            let cfg = load_config(&common, NodeRole::Leader)?;
            let input = samples.map_or(CalibrationInput::Device, CalibrationInput::Samples);
            let capture = Duration::try_from_secs_f64(seconds)
                .map_err(|_| ConfigError::Invalid(format!("bad capture time {seconds}")))?;
            let s = commands::run_calibrate(&cfg, &input, capture, &out, shutdown)?;
            print_summary(common.json, "calibration written", &s);
        }
        Cmd::Replay { log, json } => {
            let r = commands::run_replay(&log)?;
            print_summary(json, "replay", &r);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&shutdown);
    // Without a handler SIGINT still ends the process, just not cleanly.
    let _ = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst));
    match run(cli, shutdown) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("telearm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
