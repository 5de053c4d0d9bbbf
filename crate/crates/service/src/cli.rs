//! Command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use empathy_core::actions::synthesize;
use empathy_core::eval::{self, EvalOptions};
use empathy_core::led::{dump_frames, mode_for_arousal, render};
use empathy_core::prompt::{parse_response, ValidationReport};
use empathy_core::runtime::{RuntimeConfig, Session};
use empathy_core::vlm::{connect, BackendKind};
use empathy_core::{run_turn, AffectLabel, Error, ImageInput, ImageSource};

/// Exit status for a response that failed validation.
pub const EXIT_VALIDATION: u8 = 1;
/// Exit status for configuration, backend and usage errors.
pub const EXIT_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "empathy", version, about = "Empathetic emoji, motion and LED responses from images")]
pub struct Cli {
    /// TOML configuration file. Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Backend to use: mock or remote.
    #[arg(long, global = true, value_name = "KIND")]
    pub backend: Option<BackendKind>,

    /// Chat-completions URL for the remote backend.
    #[arg(long, global = true, value_name = "URL")]
    pub endpoint: Option<String>,

    /// Model name for the remote backend.
    #[arg(long, global = true)]
    pub model: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one image through the pipeline and print the validated response.
    Respond {
        image: PathBuf,
        /// Affect hint for the mock backend. Defaults to the "emotion" field
        /// of a same-stem .json file next to the image, if present.
        #[arg(long)]
        sidecar: Option<AffectLabel>,
        /// Ignore any sidecar annotation.
        #[arg(long)]
        no_sidecar: bool,
    },
    /// Evaluate a labeled image directory.
    Eval {
        dir: PathBuf,
        /// Submit images converted to BT.601 luma.
        #[arg(long)]
        grayscale: bool,
        /// Directory for report.json and records.csv. Without it the JSON
        /// report goes to stdout.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Mimicry flag threshold.
        #[arg(long, default_value_t = eval::DEFAULT_MIMICRY_THRESHOLD)]
        mimicry_threshold: f64,
    },
    /// Render LED frames and the motion trajectory for a response file.
    Simulate {
        response: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Frames per second of the LED dump.
        #[arg(long, default_value_t = 20)]
        fps: u32,
        /// Seconds of LED animation. Defaults to the motion's duration.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        strip_len: Option<usize>,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Append-only interaction log. Overrides the config file.
        #[arg(long, value_name = "FILE")]
        history: Option<PathBuf>,
        /// Require this bearer token on every request.
        #[arg(long)]
        token: Option<String>,
    },
}

/// Failure categories mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Other(e.into())
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_ERROR) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RuntimeConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RuntimeConfig::load(p)?,
        None => RuntimeConfig::default(),
    };
    if let Some(kind) = cli.backend {
        cfg.backend.kind = kind;
    }
    if let Some(url) = &cli.endpoint {
        cfg.backend.endpoint_url = Some(url.clone());
    }
    if let Some(model) = &cli.model {
        cfg.backend.model_name = Some(model.clone());
    }
    Ok(cfg)
}

fn codes(report: &ValidationReport) -> String {
    report.codes().iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ")
}

/// The "emotion" field of `<stem>.json` beside `image`, when there is one.
pub fn sidecar_for(image: &Path) -> anyhow::Result<Option<AffectLabel>> {
    let path = image.with_extension("json");
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match value.get("emotion").and_then(|v| v.as_str()) {
        Some(e) => Ok(Some(e.trim().to_lowercase().parse()?)),
        None => Ok(None),
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Respond {
            image,
            sidecar,
            no_sidecar,
        } => {
            let resources = cfg.resources()?;
            let backend = connect(&cfg.backend, resources.tables.clone())?;
            let input = ImageInput::from_file(&image, ImageSource::File)?;
            let hint = match (no_sidecar, sidecar) {
                (true, _) => None,
                (false, Some(l)) => Some(l),
                (false, None) => sidecar_for(&image)?,
            };
            let outcome = run_turn(backend.as_ref(), &resources, &input, hint, None)?;
            println!("{}", serde_json::to_string_pretty(&outcome.response).expect("serializes"));
            if outcome.fallback {
                return Err(Failure::Validation(format!(
                    "model output rejected after repair ({})",
                    codes(&outcome.report)
                )));
            }
            Ok(())
        }
        Command::Eval {
            dir,
            grayscale,
            out,
            mimicry_threshold,
        } => {
            let resources = cfg.resources()?;
            let backend = connect(&cfg.backend, resources.tables.clone())?;
            let opts = EvalOptions {
                grayscale,
                mimicry_threshold,
                max_in_flight: cfg.backend.max_in_flight,
                ..EvalOptions::default()
            };
            let result = eval::run(&dir, backend.as_ref(), &resources, &opts)?;
            match out {
                Some(out) => {
                    result.write_to(&out)?;
                    let a = &result.aggregates;
                    eprintln!(
                        "evaluated {} images ({} failed): agreement {:.3}, hue {:.3}, motion {:.3}, mimicry {:.3}; wrote {}",
                        a.evaluated,
                        a.failed,
                        a.affect_agreement,
                        a.mean_hue_alignment,
                        a.mean_motion_alignment,
                        a.mimicry_rate,
                        out.display()
                    );
                }
                None => print!("{}", result.to_json()),
            }
            Ok(())
        }
        Command::Simulate {
            response,
            out,
            fps,
            duration,
            strip_len,
        } => {
            if let Some(n) = strip_len {
                cfg.strip_len = n;
            }
            cfg.validate()?;
            let resources = cfg.resources()?;
            let text = std::fs::read_to_string(&response)
                .with_context(|| format!("reading {}", response.display()))?;
            let parsed = parse_response(&text, &resources.rules())
                .map_err(|report| Failure::Validation(codes(&report)))?;
            let action = resources.catalog.action_by_name(&parsed.motion)?;
            let arousal = resources.tables.emoji_to_va(&parsed.emoji)?.arousal();
            let mode = mode_for_arousal(arousal);
            let duration = duration.unwrap_or(action.duration_s);
            let frames = render(&parsed.palette, mode, cfg.strip_len, fps, duration)?;
            let trajectory = synthesize(action, cfg.wheelbase_m, cfg.dt_s)?;

            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            std::fs::write(out.join("leds.tsv"), dump_frames(&frames))?;
            let mut traj = String::from("t\tx\ty\ttheta\n");
            for s in &trajectory.samples {
                traj.push_str(&format!("{:.6}\t{:.9}\t{:.9}\t{:.9}\n", s.t, s.pose.x, s.pose.y, s.pose.theta));
            }
            std::fs::write(out.join("trajectory.tsv"), traj)?;
            eprintln!(
                "{} LED frames ({:?} at {} Hz) and {} trajectory samples written to {}",
                frames.len(),
                mode.kind,
                mode.rate_hz,
                trajectory.samples.len(),
                out.display()
            );
            Ok(())
        }
        Command::Serve {
            port,
            host,
            history,
            token,
        } => {
            if history.is_some() {
                cfg.history_path = history;
            }
            if token.is_some() {
                cfg.auth_token = token;
            }
            let resources = cfg.resources()?;
            let backend = connect(&cfg.backend, resources.tables.clone())?;
            let session = Arc::new(Session::new(cfg, resources, backend)?);
            let addr: std::net::SocketAddr = match format!("{host}:{port}").parse() {
                Ok(a) => a,
                Err(_) => return Err(anyhow::anyhow!("invalid listen address {host}:{port}").into()),
            };
            let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
            rt.block_on(crate::server::serve(session, addr))?;
            Ok(())
        }
    }
}
