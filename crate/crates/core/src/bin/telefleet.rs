use clap::{Args, Parser, Subcommand, ValueEnum};
use std::error::Error;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};
use telefleet::analytics::tcn::{sample_triplets, tcn_loss, Embeddings, TripletConfig};
use telefleet::analytics::{experience_quartiles, load_demonstrations, write_metrics_csv, write_series_csv, Metric};
use telefleet::fleet::{Fleet, FleetConfig, LogSink};
use telefleet::protocol::Timestamp;
use telefleet::recorder::LogReader;
use telefleet::scenario::{run_simulated, run_wall_clock, Scenario, ScriptedUser};
use telefleet::server;

type Res<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "telefleet", version, about = "Crowd teleoperation fleet: live service, load scenarios, logs and analytics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the live coordination service.
    Fleetd(FleetdArgs),
    /// Play one scripted user against a running service.
    TeleopClient {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        server: String,
        #[arg(long, default_value_t = 50.0)]
        rate_hz: f64,
    },
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    #[command(subcommand)]
    Record(RecordCmd),
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
}

#[derive(Args)]
struct FleetdArgs {
    /// Fleet config (TOML).
    #[arg(long)]
    robots: PathBuf,
    #[arg(long, default_value_t = 7070)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    #[arg(long)]
    time_limit_secs: Option<f64>,
    /// Serve this directory over HTTP on the same port.
    #[arg(long)]
    serve_ui: Option<PathBuf>,
    /// Replace every robot's command delay with this fixed value.
    #[arg(long)]
    inject_delay_ms: Option<f64>,
    #[arg(long, default_value = "logs")]
    log_dir: PathBuf,
    /// Stop after this many seconds instead of running until killed.
    #[arg(long)]
    run_secs: Option<f64>,
}

#[derive(Subcommand)]
enum ScenarioCmd {
    Run {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Simulated)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Simulated,
    #[value(name = "wall_clock", alias = "wall-clock")]
    WallClock,
}

#[derive(Subcommand)]
enum RecordCmd {
    /// Header, per-topic counts and integrity.
    Inspect { file: PathBuf },
    /// Print records in merged time order, paced by `--speed` (0 = no pacing).
    Replay {
        file: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Latest record per topic at or before `--t` nanoseconds.
    Align {
        file: PathBuf,
        #[arg(long)]
        t: u64,
        /// Topic names or ids, comma separated.
        #[arg(long, value_delimiter = ',')]
        topics: Vec<String>,
    },
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// One CSV row of skill metrics per session log.
    Metrics { logs: Vec<PathBuf> },
    /// Quartiles of a metric per experience index.
    Curve {
        #[arg(long)]
        metric: String,
        logs: Vec<PathBuf>,
    },
    /// Sample triplets and evaluate the time-contrastive loss on embeddings.
    Tcn {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Triplets of each kind.
        #[arg(long, default_value_t = 256)]
        count: usize,
        /// The demonstration failed, so it has no terminal frames.
        #[arg(long)]
        failed: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Res<ExitCode> {
    match cli.cmd {
        Cmd::Fleetd(a) => fleetd(a),
        Cmd::TeleopClient { script, server, rate_hz } => {
            let user: ScriptedUser = toml::from_str(&std::fs::read_to_string(&script)?)?;
            user.validate()?;
            let report = server::run_client(server.as_str(), &user, rate_hz)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.errors.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Scenario(ScenarioCmd::Run { file, mode, out }) => scenario(file, mode, out),
        Cmd::Record(c) => record(c),
        Cmd::Analyze(c) => analyze(c),
    }
}

fn fleetd(a: FleetdArgs) -> Res<ExitCode> {
    let mut cfg = FleetConfig::load(&a.robots)?;
    if let Some(t) = a.time_limit_secs {
        cfg.time_limit_secs = t;
    }
    if let Some(ms) = a.inject_delay_ms {
        for r in &mut cfg.robots {
            r.delay.base_ms = ms;
            r.delay.jitter_median_ms = 0.0;
        }
    }
    let fleet = Fleet::new(cfg, LogSink::Directory(a.log_dir))?;
    let srv = server::spawn(fleet, &format!("{}:{}", a.bind, a.port), a.serve_ui)?;
    eprintln!("fleetd listening on {}", srv.local_addr());
    match a.run_secs {
        Some(s) => {
            std::thread::sleep(Duration::from_secs_f64(s));
            let fleet = srv.shutdown();
            println!("{}", serde_json::to_string_pretty(fleet.stats())?);
        }
        None => srv.wait(),
    }
    Ok(ExitCode::SUCCESS)
}

fn scenario(file: PathBuf, mode: Mode, out: PathBuf) -> Res<ExitCode> {
    let mut sc = Scenario::load(&file)?;
    sc.apply_seed_env()?;
    // surface config errors before anything runs
    sc.all_users()?;
    Fleet::new(sc.fleet.clone(), LogSink::Discard)?;
    let sink = LogSink::Directory(out.join("logs"));
    let run = match mode {
        Mode::Simulated => run_simulated(&sc, sink)?,
        Mode::WallClock => run_wall_clock(&sc, sink)?.0,
    };
    run.write_outputs(&out)?;
    print!("{}", run.report.to_json());
    if run.report.violations() > 0 {
        for d in &run.audit.details {
            eprintln!("violation: {d}");
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn topic_id(log: &LogReader, key: &str) -> Res<u16> {
    log.header()
        .topics
        .iter()
        .find(|t| t.name == key || t.topic_id.to_string() == key)
        .map(|t| t.topic_id)
        .ok_or_else(|| format!("no topic `{key}` in {}", log.header().session_id).into())
}

fn record(c: RecordCmd) -> Res<ExitCode> {
    let mut out = std::io::stdout().lock();
    match c {
        RecordCmd::Inspect { file } => {
            let log = LogReader::open(&file)?;
            writeln!(out, "session {}  records {}", log.header().session_id, log.len())?;
            for t in &log.header().topics {
                let recs: Vec<_> = log.topic_records(t.topic_id).collect();
                let span = match (recs.first(), recs.last()) {
                    (Some(a), Some(b)) => format!("{:.3}..{:.3} s", a.t.as_secs_f64(), b.t.as_secs_f64()),
                    _ => "-".into(),
                };
                writeln!(
                    out,
                    "  {:>2} {:<12} {:<12} {:>7.1} Hz  {:>7} records  {}",
                    t.topic_id,
                    t.name,
                    format!("{:?}", t.msg_kind),
                    t.declared_rate_hz,
                    recs.len(),
                    span
                )?;
            }
            match log.truncation() {
                Some(tr) => writeln!(out, "truncated: {} trailing bytes after offset {}", tr.dropped_bytes, tr.valid_len)?,
                None => writeln!(out, "crc ok")?,
            }
        }
        RecordCmd::Replay { file, speed } => {
            let log = LogReader::open(&file)?;
            let names: std::collections::HashMap<u16, &str> =
                log.header().topics.iter().map(|t| (t.topic_id, t.name.as_str())).collect();
            let start = Instant::now();
            for r in log.read_merged() {
                if speed > 0.0 {
                    let due = start + Duration::from_secs_f64(r.t.as_secs_f64() / speed);
                    std::thread::sleep(due.saturating_duration_since(Instant::now()));
                }
                let name = names.get(&r.topic_id).copied().unwrap_or("?");
                write!(out, "{:.6} {name} {} {}B", r.t.as_secs_f64(), r.seq, r.payload.len())?;
                if name == "events" {
                    write!(out, " {}", String::from_utf8_lossy(&r.payload))?;
                }
                writeln!(out)?;
            }
        }
        RecordCmd::Align { file, t, topics } => {
            let log = LogReader::open(&file)?;
            let ids = topics.iter().map(|k| topic_id(&log, k)).collect::<Res<Vec<_>>>()?;
            let res = log.align(Timestamp(t), &ids)?;
            for (id, hit) in res.entries {
                match hit {
                    Some(h) => writeln!(out, "{id} seq={} t={} staleness_ns={}", h.seq, h.t.nanos(), h.staleness_ns)?,
                    None => writeln!(out, "{id} none")?,
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn analyze(c: AnalyzeCmd) -> Res<ExitCode> {
    let out = std::io::stdout().lock();
    match c {
        AnalyzeCmd::Metrics { logs } => write_metrics_csv(&load_demonstrations(&logs)?, out)?,
        AnalyzeCmd::Curve { metric, logs } => {
            let metric: Metric = metric.parse()?;
            write_series_csv(&experience_quartiles(&load_demonstrations(&logs)?, metric), out)?;
        }
        AnalyzeCmd::Tcn { embeddings, config, seed, count, failed } => {
            let cfg = match config {
                Some(p) => TripletConfig::from_toml(&std::fs::read_to_string(p)?)?,
                None => TripletConfig::default(),
            };
            let emb = Embeddings::load(&embeddings)?;
            let set = sample_triplets(emb.frames(), &cfg, count, seed)?;
            let terminal: Vec<usize> = if failed { Vec::new() } else { cfg.terminal_frames(emb.frames()).collect() };
            let loss = tcn_loss(&emb, &set.triplets, &cfg, &terminal)?;
            let report = serde_json::json!({
                "frames": emb.frames(),
                "dim": emb.dim(),
                "triplets": set.triplets.len(),
                "omitted_kinds": set.omitted,
                "loss": loss,
            });
            serde_json::to_writer_pretty(out, &report)?;
            println!();
        }
    }
    Ok(ExitCode::SUCCESS)
}
