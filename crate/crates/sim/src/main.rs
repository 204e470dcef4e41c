use std::fs;
use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand};

use rams_core::geometry::RigidTransform;
use rams_core::mesh::io::{load_mesh, load_points};
use rams_core::registration::{icp, paired_point_register, PointCloud, DEFAULT_ICP_MAX_ITERS, DEFAULT_ICP_TOL};
use rams_sim::experiment::run_calibration_experiment;
use rams_sim::report::{self, write_report_dir, ErrorRow, Format, Summary, REPORTS_JSON};
use rams_sim::scenario::{CalibrationProtocol, NoiseSpec, Scenario, ScenarioKind};
use rams_sim::workflow::{run_workflow_remote, serve, RunOptions, Transport, WorkflowRun};
use rams_sim::{run_workflow, Context};

#[derive(Parser)]
#[command(name = "rams", version, about = "Simulated robot-assisted instrument placement")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Monte Carlo virtual-to-real calibration experiment.
    Calibrate {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Tracker noise preset; "zero" turns every noise source off.
        #[arg(long, default_value = "polaris")]
        preset: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// calibration_eval scenario to start from instead of the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = ["per_trial", "batch"])]
        protocol: Option<String>,
    },
    /// Registers a point cloud to a mesh (ICP), or to paired points.
    Register {
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[arg(long)]
        points: PathBuf,
        /// Corresponding target points for paired-point registration.
        #[arg(long, conflicts_with = "mesh")]
        paired: Option<PathBuf>,
        /// Scale applied to mesh and point coordinates (0.001 for mm files).
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = DEFAULT_ICP_MAX_ITERS)]
        max_iters: usize,
        /// Write the result as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Scenario {
        #[command(subcommand)]
        command: ScenarioCmd,
    },
    /// Robot side of the networked workflow.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7450")]
        listen: SocketAddr,
        #[arg(long)]
        config: PathBuf,
        /// Exit after this many sessions.
        #[arg(long)]
        sessions: Option<usize>,
    },
    /// Recomputes summary statistics from a trials.csv.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "json")]
        format: Format,
    },
}

#[derive(Subcommand)]
enum ScenarioCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run the robot side in a separate process and talk over TCP/UDP.
        #[arg(long)]
        net: bool,
        /// Robot side already running at this address.
        #[arg(long, conflicts_with = "net")]
        connect: Option<SocketAddr>,
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Prints a default scenario as JSON.
    Template {
        #[arg(long, value_parser = ["tms", "femoroplasty", "calibration_eval"])]
        kind: String,
        /// Aim targets with scripted clicker presses.
        #[arg(long)]
        clicker: bool,
        /// Use the placement-experiment noise levels.
        #[arg(long)]
        noisy: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_summary(label: &str, s: &Summary) {
    let t = s.column("t_norm");
    let r = s.column("r_angle");
    println!(
        "{label}: {} trials ({} skipped), translation {:.3} ± {:.3} mm (max {:.3}), rotation {:.3} ± {:.3} deg (max {:.3})",
        s.count, s.skipped, t.mean, t.std, t.max, r.mean, r.std, r.max
    );
}

fn calibrate(
    trials: usize,
    preset: &str,
    seed: u64,
    out: Option<&Path>,
    config: Option<&Path>,
    protocol: Option<&str>,
) -> Result<()> {
    let mut s = match config {
        Some(p) => Scenario::load(p)?,
        None => Scenario::calibration_eval(),
    };
    if s.kind != ScenarioKind::CalibrationEval {
        bail!("calibrate needs a calibration_eval scenario");
    }
    s.trials = trials;
    s.seed = seed;
    if preset == "zero" || preset == "none" {
        s.world.tracker_noise = NoiseSpec::default();
        s.world.hmd_noise = NoiseSpec::default();
        s.world.alignment_noise = NoiseSpec::default();
    } else {
        s.world.tracker_noise = NoiseSpec::Preset(preset.to_string());
    }
    match protocol {
        Some("batch") => s.calibration.protocol = CalibrationProtocol::Batch,
        Some(_) => s.calibration.protocol = CalibrationProtocol::PerTrial,
        None => {}
    }
    let ctx = Context::new(s)?;
    let stats = run_calibration_experiment(&ctx)?;
    print_summary("calibration", &stats.summary);
    for axis in ["tx_err", "ty_err", "tz_err", "rx_err", "ry_err", "rz_err"] {
        let c = stats.summary.column(axis);
        println!("  {axis}: {:.3} ± {:.3}", c.mean, c.std);
    }
    if let Some(dir) = out {
        write_report_dir(&stats.rows, stats.skipped, dir)?;
        fs::write(dir.join("calibration.json"), serde_json::to_string_pretty(&stats)?)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn register(
    mesh: Option<&Path>,
    points: &Path,
    paired: Option<&Path>,
    scale: f64,
    max_iters: usize,
    out: Option<&Path>,
) -> Result<()> {
    let source = PointCloud::new(load_points(points, scale).with_context(|| format!("loading {}", points.display()))?)?;
    let result = match (mesh, paired) {
        (_, Some(p)) => paired_point_register(&source, &PointCloud::new(load_points(p, scale).with_context(|| format!("loading {}", p.display()))?)?)?,
        (Some(m), None) => {
            let mesh = load_mesh(m, scale).with_context(|| format!("loading {}", m.display()))?;
            // Start from centroid alignment.
            let (lo, hi) = mesh.bounds();
            let init = RigidTransform::from_translation((lo + hi) / 2.0 - source.centroid());
            icp(&source, &mesh, &init, max_iters, DEFAULT_ICP_TOL)?
        }
        (None, None) => bail!("register needs --mesh or --paired"),
    };
    let text = serde_json::to_string_pretty(&result)?;
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    eprintln!(
        "registration: rms {:.4} mm after {} iterations{}",
        result.fre_rms * 1e3,
        result.iterations,
        if result.converged { "" } else { " (not converged)" }
    );
    Ok(())
}

/// Starts `rams serve` as a child process and returns it with its address.
fn spawn_server(config: &Path) -> Result<(Child, SocketAddr)> {
    let exe = std::env::current_exe()?;
    let mut child = Command::new(exe)
        .args(["serve", "--listen", "127.0.0.1:0", "--sessions", "1", "--config"])
        .arg(config)
        .stdout(Stdio::piped())
        .spawn()
        .context("starting robot-side process")?;
    let stdout = child.stdout.take().expect("stdout is piped");
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line)?;
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .with_context(|| format!("unexpected server banner {line:?}"))?
        .parse()?;
    Ok((child, addr))
}

struct RunArgs {
    net: bool,
    connect: Option<SocketAddr>,
    parallel: bool,
    out: Option<PathBuf>,
    trials: Option<usize>,
    seed: Option<u64>,
}

fn scenario_run(config: &Path, a: RunArgs) -> Result<()> {
    let mut s = Scenario::load(config)?;
    if let Some(t) = a.trials {
        s.trials = t;
    }
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    if s.kind == ScenarioKind::CalibrationEval {
        let stats = run_calibration_experiment(&Context::new(s)?)?;
        print_summary("calibration", &stats.summary);
        if let Some(dir) = &a.out {
            write_report_dir(&stats.rows, stats.skipped, dir)?;
            fs::write(dir.join("calibration.json"), serde_json::to_string_pretty(&stats)?)?;
        }
        return Ok(());
    }
    if (a.net || a.connect.is_some()) && (a.trials.is_some() || a.seed.is_some()) {
        bail!("--trials/--seed overrides are not forwarded to a separate robot-side process; edit the config instead");
    }
    let ctx = Arc::new(Context::new(s)?);
    let run: WorkflowRun = if a.net {
        if a.parallel {
            eprintln!("note: --parallel is ignored with --net (one session per process)");
        }
        let (mut child, addr) = spawn_server(config)?;
        let run = run_workflow_remote(&ctx, addr);
        let status = child.wait()?;
        if !status.success() {
            bail!("robot-side process exited with {status}");
        }
        run?
    } else if let Some(addr) = a.connect {
        run_workflow_remote(&ctx, addr)?
    } else {
        run_workflow(
            &ctx,
            RunOptions {
                transport: Transport::InProcess,
                parallel: a.parallel,
            },
        )?
    };
    let rows: Vec<ErrorRow> = run.reports.iter().map(ErrorRow::from_report).collect();
    let summary = Summary::of(&rows)?;
    print_summary(&format!("{:?}", ctx.scenario.kind).to_lowercase(), &summary);
    let t: f64 = run.reports.iter().map(|r| r.planning_time).sum();
    println!("planning time {:.3} s total", t);
    if let Some(dir) = &a.out {
        write_report_dir(&rows, 0, dir)?;
        fs::write(dir.join(REPORTS_JSON), serde_json::to_string_pretty(&run.reports)?)?;
        fs::write(dir.join("messages.json"), serde_json::to_string(&run.logs)?)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Cmd::Calibrate {
            trials,
            preset,
            seed,
            out,
            config,
            protocol,
        } => calibrate(trials, &preset, seed, out.as_deref(), config.as_deref(), protocol.as_deref()),
        Cmd::Register {
            mesh,
            points,
            paired,
            scale,
            max_iters,
            out,
        } => register(mesh.as_deref(), &points, paired.as_deref(), scale, max_iters, out.as_deref()),
        Cmd::Scenario {
            command:
                ScenarioCmd::Run {
                    config,
                    net,
                    connect,
                    parallel,
                    out,
                    trials,
                    seed,
                },
        } => scenario_run(
            &config,
            RunArgs {
                net,
                connect,
                parallel,
                out,
                trials,
                seed,
            },
        ),
        Cmd::Scenario {
            command:
                ScenarioCmd::Template {
                    kind,
                    clicker,
                    noisy,
                    out,
                },
        } => {
            let mut s = match kind.as_str() {
                "tms" => Scenario::tms(),
                "femoroplasty" => Scenario::femoroplasty(),
                _ => Scenario::calibration_eval(),
            };
            if clicker {
                s = s.with_clicker_targets();
            }
            if noisy {
                s.world = s.world.with_placement_noise();
            }
            let text = s.to_json();
            match out {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Cmd::Serve {
            listen,
            config,
            sessions,
        } => {
            let ctx = Arc::new(Context::new(Scenario::load(&config)?)?);
            let listener = std::net::TcpListener::bind(listen)?;
            println!("listening on {}", listener.local_addr()?);
            std::io::Write::flush(&mut std::io::stdout())?;
            serve(ctx, listener, sessions)?;
            Ok(())
        }
        Cmd::Report { input, format } => {
            let (summary, path) = report::report(&input, format)?;
            print_summary("report", &summary);
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}
