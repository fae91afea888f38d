use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use polysorb::config::SimConfig;
use polysorb::diagnostics::{column_profile, nullcline};
use polysorb::error::{Error, Result};
use polysorb::output::{
    curve_lines, num, write_curve, write_profile, write_text, DirectoryObserver,
};
use polysorb::Simulation;

#[derive(Parser)]
#[command(
    name = "polysorb",
    version,
    about = "Sorption-coagulation simulator for metal-binding polymers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write snapshots, the series and the final profile.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Serial evaluation of the coagulation sweep.
        #[arg(long)]
        deterministic: bool,
        /// Snapshot every N steps instead of at the configured times.
        #[arg(long)]
        snapshot_stride: Option<usize>,
    },
    /// Print the stability bounds and the verdict for the configured step.
    Stability {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the sorption nullcline `p_center r_null` for a given ion level.
    Curve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        u: f64,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            deterministic,
            snapshot_stride,
        } => cmd_run(&config, out, deterministic, snapshot_stride),
        Command::Stability { config } => cmd_stability(&config),
        Command::Curve { config, u, out } => cmd_curve(&config, u, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn error_record(e: &Error) -> String {
    let mut record = serde_json::json!({
        "error": e.kind(),
        "exit_code": e.exit_code(),
        "message": e.to_string(),
    });
    match e {
        Error::Config { key, .. } => record["key"] = key.as_str().into(),
        Error::Numerical { step, .. } => record["step"] = (*step).into(),
        Error::Io { path, .. } => record["path"] = path.display().to_string().into(),
        Error::Cfl {
            dt,
            transport_margin,
            coag_margin,
            positivity_margin,
            dt_max_transport,
            dt_max_coag,
            dt_max_positivity,
        } => {
            record["dt"] = (*dt).into();
            record["transport_margin"] = (*transport_margin).into();
            record["coag_margin"] = (*coag_margin).into();
            record["positivity_margin"] = (*positivity_margin).into();
            record["dt_max_transport"] = finite_or_null(*dt_max_transport);
            record["dt_max_coag"] = finite_or_null(*dt_max_coag);
            record["dt_max_positivity"] = finite_or_null(*dt_max_positivity);
        }
        _ => {}
    }
    record.to_string()
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        x.into()
    } else {
        serde_json::Value::Null
    }
}

fn cmd_run(
    config: &Path,
    out: Option<PathBuf>,
    deterministic: bool,
    stride: Option<usize>,
) -> Result<()> {
    let mut cfg = SimConfig::load(config)?;
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    if let Some(s) = stride {
        cfg.output.snapshots.clear();
        cfg.output.snapshot_stride = Some(s);
    }
    cfg.output.deterministic |= deterministic;
    cfg.validate()?;

    let sim = Simulation::prepare(&cfg)?;
    sim.check_gate()?;
    let schedule = sim.schedule(None)?;
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;

    let mut observer = DirectoryObserver::create(&dir, sim.grid)?;
    let summary = sim.run(&schedule, &mut observer)?;
    observer.finish()?;

    let state = &summary.state;
    let r_null = nullcline(&sim.rates, state.u, &sim.grid)?;
    let profile = column_profile(&state.field, &sim.grid, &r_null);
    write_profile(&dir.join("profile.dat"), state.time, state.u, &profile)?;

    println!("steps = {}", sim.time.steps());
    println!("dt = {}", num(sim.time.dt()));
    println!("u_final = {}", num(state.u));
    println!("rho0 = {}", num(summary.rho0));
    println!("clamps = {}", summary.total_clamps);
    println!("max_clamped = {}", num(summary.max_clamped));
    println!("dropped = {}", num(summary.dropped));
    for p in schedule.iter().filter(|p| p.rounding() != 0.0) {
        println!(
            "snapshot at t = {} rounded to step {} (t = {})",
            num(p.requested.unwrap_or(p.time)),
            p.step,
            num(p.time)
        );
    }
    Ok(())
}

fn cmd_stability(config: &Path) -> Result<()> {
    let cfg = SimConfig::load(config)?;
    let sim = Simulation::prepare(&cfg)?;
    let r = &sim.report;
    let show = |x: f64| {
        if x.is_finite() {
            num(x)
        } else {
            "inf".to_string()
        }
    };
    println!("M_in = {}", num(r.m_in));
    println!("U_T = {}", num(r.u_bound));
    println!("U_T_exponential = {}", num(r.u_bound_exponential));
    println!("V_sup = {}", num(r.v_sup));
    println!("K_kernel = {}", num(r.k_kernel));
    println!("W = {}", num(r.outflow_speed));
    println!("dt_max_transport = {}", show(r.dt_max_transport));
    println!("dt_max_coag = {}", show(r.dt_max_coag));
    println!("dt_max_positivity = {}", show(r.dt_max_positivity));
    println!("dt_max = {}", show(r.dt_max));
    println!("dt = {}", num(r.dt));
    println!("steps = {}", sim.time.steps());
    println!("transport_margin = {}", num(r.transport_margin));
    println!("coag_margin = {}", num(r.coag_margin));
    println!("positivity_margin = {}", num(r.positivity_margin));
    let verdict = if r.admits() {
        "admissible"
    } else {
        match cfg.time.gate {
            polysorb::config::Gate::APriori => "refused",
            polysorb::config::Gate::PerStep => "exceeds a priori bound; checked per step",
        }
    };
    println!("verdict = {verdict}");
    Ok(())
}

fn cmd_curve(config: &Path, u: f64, out: Option<&Path>) -> Result<()> {
    let cfg = SimConfig::load(config)?;
    let g = cfg.grid;
    let grid = polysorb::GridSpec::new(g.p_max, g.j_max, g.i_max)?;
    let rates = Simulation::rate_model(&cfg, grid.p_max())?;
    let r_null = nullcline(&rates, u, &grid)?;
    match out {
        Some(path) => write_curve(path, &grid, u, &r_null),
        None => {
            let mut out = std::io::stdout().lock();
            for line in curve_lines(&grid, u, &r_null) {
                match writeln!(out, "{line}") {
                    Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => break,
                    r => r.map_err(|e| Error::io("<stdout>", e))?,
                }
            }
            Ok(())
        }
    }
}
