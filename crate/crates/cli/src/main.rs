//! Command-line entry point: offline certificate synthesis, closed-loop
//! scenario runs and run comparison.
//!
//! Exit codes: 0 success, 1 plant-domain failure (spin / off-track / stall),
//! 2 configuration error, 3 synthesis failure.

use clap::{Parser, Subcommand};
use racetube_core::config::{load_scenario, AppConfig};
use racetube_core::contraction::constants::synthesize_vehicle_certificate;
use racetube_core::contraction::ContractionCertificate;
use racetube_core::mpc::ControllerMode;
use racetube_core::sim;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_DOMAIN_FAILURE: u8 = 1;
const EXIT_CONFIG_ERROR: u8 = 2;
const EXIT_SYNTHESIS_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "racetube", about = "Robust tube-MPC path tracking toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search a contraction metric offline and write the certificate.
    Synthesize {
        /// Main config file (vehicle, uncertainty, envelope, synthesis, ocp).
        #[arg(long)]
        config: PathBuf,
        /// Output certificate path.
        #[arg(long, default_value = "certificate.json")]
        out: PathBuf,
        /// Override the metric polynomial degree.
        #[arg(long)]
        degree: Option<u8>,
        /// Override the sampling seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one closed-loop scenario and write the run artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Scenario file.
        #[arg(long)]
        scenario: PathBuf,
        /// Controller flavor.
        #[arg(long, value_parser = parse_mode)]
        mode: ControllerMode,
        /// Certificate file (required in robust mode).
        #[arg(long)]
        certificate: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare previously written runs (aligned by arclength).
    Compare {
        /// Run directories (as written by `run`).
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<ControllerMode, String> {
    match s {
        "nominal" => Ok(ControllerMode::Nominal),
        "robust" => Ok(ControllerMode::Robust),
        other => Err(format!("unknown mode '{other}' (nominal|robust)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Synthesize {
            config,
            out,
            degree,
            seed,
        } => cmd_synthesize(config, out, degree, seed),
        Command::Run {
            config,
            scenario,
            mode,
            certificate,
            out,
            seed,
        } => cmd_run(config, scenario, mode, certificate, out, seed),
        Command::Compare { runs, out } => cmd_compare(runs, out),
    }
}

fn cmd_synthesize(
    config: PathBuf,
    out: PathBuf,
    degree: Option<u8>,
    seed: Option<u64>,
) -> ExitCode {
    let cfg = match AppConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG_ERROR);
        }
    };
    let mut synth = cfg.synthesis.clone();
    if let Some(d) = degree {
        synth.degree = d;
    }
    if let Some(s) = seed {
        synth.seed = s;
    }
    synth.verbose = true;
    println!(
        "synthesizing metric: degree {}, {} training samples, beta in [{}, {}], seed {}",
        synth.degree, synth.train_samples, synth.beta_min, synth.beta_max, synth.seed
    );
    let started = std::time::Instant::now();
    match synthesize_vehicle_certificate(
        &cfg.vehicle,
        &cfg.uncertainty,
        &cfg.envelope,
        &cfg.octagon_pairs(),
        &synth,
    ) {
        Ok(cert) => {
            if let Err(e) = cert.save(&out) {
                eprintln!("cannot write certificate: {e}");
                return ExitCode::from(EXIT_CONFIG_ERROR);
            }
            let v = &cert.validation;
            println!("certificate written to {} ({:.1} s)", out.display(), started.elapsed().as_secs_f64());
            println!("  beta            = {:.4} 1/s", cert.beta);
            println!("  L_E             = {:.4} 1/s", cert.l_e);
            println!("  beta - L_E      = {:.4} 1/s", cert.beta_eff());
            println!("  L_G             = {:?}", cert.l_g);
            println!("  c_d             = {:.4}", cert.c_d);
            println!(
                "  c_oct           = [{}]",
                cert.c_oct
                    .iter()
                    .map(|c| format!("{c:.3}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            println!(
                "  validation      = {} holdout samples x {} vertex pairs, {} violations",
                v.holdout_samples, v.vertex_pairs, v.violations
            );
            println!(
                "  worst residual  = {:.3e}, W eigs in [{:.3}, {:.3}]",
                v.worst_eig, v.min_w_eig, v.max_w_eig
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("synthesis failure: {e}");
            ExitCode::from(EXIT_SYNTHESIS_FAILURE)
        }
    }
}

fn cmd_run(
    config: PathBuf,
    scenario: PathBuf,
    mode: ControllerMode,
    certificate: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
) -> ExitCode {
    let cfg = match AppConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG_ERROR);
        }
    };
    let mut scen = match load_scenario(&scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("scenario error: {e}");
            return ExitCode::from(EXIT_CONFIG_ERROR);
        }
    };
    if let Some(s) = seed {
        scen.seed = s;
    }
    let cert = match (mode, certificate) {
        (ControllerMode::Robust, None) => {
            eprintln!("config error: robust mode requires --certificate");
            return ExitCode::from(EXIT_CONFIG_ERROR);
        }
        (_, Some(path)) => match ContractionCertificate::load(&path) {
            Ok(c) => Some(c),
            Err(e) => {
                eprintln!("certificate error: {e}");
                return ExitCode::from(EXIT_CONFIG_ERROR);
            }
        },
        (ControllerMode::Nominal, None) => None,
    };
    let base = config.parent().unwrap_or_else(|| std::path::Path::new("."));
    let track = match cfg.track.build(base) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("track error: {e}");
            return ExitCode::from(EXIT_CONFIG_ERROR);
        }
    };
    match sim::run_closed_loop(
        track,
        cfg.vehicle.clone(),
        cfg.ocp.clone(),
        &cfg.envelope,
        scen,
        mode,
        cert,
    ) {
        Ok(record) => {
            if let Err(e) = sim::write_run(&record, &out) {
                eprintln!("cannot write run: {e}");
                return ExitCode::from(EXIT_CONFIG_ERROR);
            }
            let s = &record.summary;
            println!(
                "run '{}' [{}]: {} cycles, {:.1} s simulated, completed = {}",
                s.scenario, s.mode, s.cycles, s.sim_time, s.completed
            );
            println!(
                "  lateral violations: {} (max depth {:.3} m); octagon violations: {} (max depth {:.3} m/s^2)",
                s.lateral_violations.count,
                s.lateral_violations.max_depth,
                s.octagon_violations.count,
                s.octagon_violations.max_depth
            );
            println!(
                "  solve time: median {:.0} us, p99 {:.0} us; seed {}",
                s.solve_us_median, s.solve_us_p99, s.seed
            );
            if let Some(cause) = &s.failure {
                println!("  failure cause: {cause}");
                return ExitCode::from(EXIT_DOMAIN_FAILURE);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("run error: {e}");
            ExitCode::from(EXIT_CONFIG_ERROR)
        }
    }
}

fn cmd_compare(runs: Vec<PathBuf>, out: PathBuf) -> ExitCode {
    let mut records = Vec::new();
    for dir in &runs {
        match sim::read_run(dir) {
            Ok(r) => records.push(r),
            Err(e) => {
                eprintln!("cannot read run {}: {e}", dir.display());
                return ExitCode::from(EXIT_CONFIG_ERROR);
            }
        }
    }
    match sim::compare_runs(&records) {
        Ok(report) => {
            if let Err(e) = sim::write_comparison(&report, &out) {
                eprintln!("cannot write comparison: {e}");
                return ExitCode::from(EXIT_CONFIG_ERROR);
            }
            for (i, s) in report.summaries.iter().enumerate() {
                println!(
                    "[{}] {} ({}): completed = {}, lateral CV = {}, octagon CV = {}, med solve {:.0} us, sigma/|a_y| rank corr = {:.3}",
                    i,
                    s.scenario,
                    s.mode,
                    s.completed,
                    s.lateral_violations.count,
                    s.octagon_violations.count,
                    s.solve_us_median,
                    report.sigma_ay_correlation[i]
                );
            }
            println!("comparison written to {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("compare error: {e}");
            ExitCode::from(EXIT_CONFIG_ERROR)
        }
    }
}
