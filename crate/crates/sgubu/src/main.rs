//! Command-line harness: config-driven experiment drivers, the closed-form
//! certificate calculator, and the self-verification suite.
//!
//! Exit codes: 0 success, 2 configuration or parameter error, 3 numeric
//! failure, 4 verification suite failure.

use std::path::PathBuf;
use std::process;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sgubu::bounds::{
    contraction_factor, k_p, plug_in_term, series_prefactor, sg_ubu_bias_bound,
    spike_lower_bound, BiasBoundInputs, PlugInTerm,
};
use sgubu::harness::config::ExperimentConfig;
use sgubu::harness::verify::{run_verify, VerifyOptions};
use sgubu::harness::{blr, spike, sweep, write_outputs, RunArtifacts};
use sgubu::Result;

#[derive(Parser)]
#[command(
    name = "sgubu",
    version,
    about = "Stochastic-gradient kinetic Langevin sampling with computable Wasserstein bias bounds"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML experiment config; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed override. Outputs are a pure function of seed and config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for experiment cells; 0 means one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory override for CSV, manifest, and report files.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run kinetic cells even where h >= 1/(2 gamma). Such cells are listed
    /// under out_of_regime in the manifest and may diverge.
    #[arg(long, global = true)]
    allow_out_of_regime: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Bias-versus-stepsize sweep comparing the configured samplers.
    Sweep,
    /// Heavy-tailed spike-noise table across dimensions.
    Spike,
    /// Synthetic logistic-regression posterior accuracy grid.
    Blr,
    /// Evaluate the closed-form certificates and print them as JSON.
    Bounds(BoundsArgs),
    /// Run the self-verification suite; one PASS/FAIL line per check.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct BoundsArgs {
    /// Stepsize h.
    #[arg(long)]
    h: f64,
    /// Friction gamma; the certificates need gamma >= sqrt(8 L).
    #[arg(long)]
    gamma: f64,
    /// Strong-convexity constant m.
    #[arg(long)]
    m: f64,
    /// Smoothness constant L.
    #[arg(long)]
    l: f64,
    /// State dimension.
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Gradient-noise constant C_G.
    #[arg(long, default_value_t = 0.0)]
    c_g: f64,
    /// p-th moment bound sigma_p on the gradient noise.
    #[arg(long, default_value_t = 0.0)]
    sigma_p: f64,
    /// Wasserstein order, 1 or 2.
    #[arg(long, default_value_t = 1)]
    p: u32,
    /// Gaussian convolution term T supplied directly.
    #[arg(long, default_value_t = 0.0, conflicts_with_all = ["sigma_2p", "poincare_trace"])]
    t_conv: f64,
    /// Derive T from a 2p-th noise moment bound instead.
    #[arg(long)]
    sigma_2p: Option<f64>,
    /// Derive T from an integrated Poincare trace instead.
    #[arg(long)]
    poincare_trace: Option<f64>,
    /// Also report the n-step coupled contraction factor.
    #[arg(long, value_name = "N")]
    steps: Option<u64>,
    /// Also report the spike-shift lower bound at this separation.
    #[arg(long, value_name = "S")]
    spike_s: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Shrink Monte Carlo budgets for fast feedback; tolerances widen to
    /// match, so real defects still fail.
    #[arg(long)]
    quick: bool,
    /// Corrupt one reference value to demonstrate the suite detects it.
    #[arg(long, hide = true, value_name = "NAME")]
    inject_fault: Option<String>,
}

fn main() {
    match run() {
        Ok(code) => process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            process::exit(e.exit_code());
        }
    }
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    let mut config = ExperimentConfig::load(cli.global.config.as_deref())?;
    config.apply_overrides(
        cli.global.seed,
        cli.global.threads,
        cli.global.out,
        cli.global.allow_out_of_regime,
    );
    match cli.command {
        Command::Sweep => run_experiment(sweep::EXPERIMENT, &config, sweep::run_bias_sweep),
        Command::Spike => run_experiment(spike::EXPERIMENT, &config, spike::run_spike_table),
        Command::Blr => run_experiment(blr::EXPERIMENT, &config, blr::run_blr),
        Command::Bounds(args) => run_bounds(&args),
        Command::Verify(args) => run_verification(&config, &args),
    }
}

fn run_experiment(
    name: &str,
    config: &ExperimentConfig,
    driver: fn(&ExperimentConfig) -> Result<RunArtifacts>,
) -> Result<i32> {
    let start = Instant::now();
    let artifacts = driver(config)?;
    let (csv_path, manifest_path) =
        write_outputs(name, config, &artifacts, start.elapsed().as_secs_f64())?;
    println!("wrote {}", csv_path.display());
    println!("wrote {}", manifest_path.display());
    if !artifacts.out_of_regime.is_empty() {
        println!(
            "note: {} cell(s) ran outside the stepsize regime: {}",
            artifacts.out_of_regime.len(),
            artifacts.out_of_regime.join(", ")
        );
    }
    if !artifacts.divergences.is_empty() {
        println!("note: {} cell(s) diverged; see the manifest", artifacts.divergences.len());
    }
    Ok(0)
}

fn run_bounds(args: &BoundsArgs) -> Result<i32> {
    let t_conv = if let Some(sigma_2p) = args.sigma_2p {
        plug_in_term(&PlugInTerm::MomentBound { sigma_2p }, args.l)?
    } else if let Some(trace) = args.poincare_trace {
        plug_in_term(&PlugInTerm::AbsolutelyContinuous { integrated_poincare_trace: trace }, args.l)?
    } else {
        args.t_conv
    };
    let inputs = BiasBoundInputs {
        h: args.h,
        gamma: args.gamma,
        m: args.m,
        l: args.l,
        d: args.d,
        c_g: args.c_g,
        sigma_p: args.sigma_p,
        t_conv,
        p: args.p,
    };
    let bias = sg_ubu_bias_bound(&inputs)?;
    let one_step = contraction_factor(args.h, args.gamma, args.m, args.l, args.c_g, 1)?;
    let mut report = json!({
        "inputs": {
            "h": args.h,
            "gamma": args.gamma,
            "m": args.m,
            "l": args.l,
            "d": args.d,
            "c_g": args.c_g,
            "sigma_p": args.sigma_p,
            "p": args.p,
            "t_conv": t_conv,
        },
        "bias_bound": bias,
        "one_step_contraction": one_step,
        "k_p": k_p(f64::from(args.p))?,
        "series_prefactor": series_prefactor(f64::from(args.p))?,
    });
    if let Some(steps) = args.steps {
        report["contraction_factor"] =
            json!(contraction_factor(args.h, args.gamma, args.m, args.l, args.c_g, steps)?);
        report["steps"] = json!(steps);
    }
    if let Some(s) = args.spike_s {
        let slb = spike_lower_bound(s, args.d)?;
        report["spike_lower_bound"] = json!({
            "bound": slb.bound,
            "threshold": slb.threshold,
            "clean_regime": slb.clean_regime,
        });
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn run_verification(config: &ExperimentConfig, args: &VerifyArgs) -> Result<i32> {
    let options = VerifyOptions { quick: args.quick, fault: args.inject_fault.clone() };
    let report = run_verify(config, &options)?;
    for check in &report.checks {
        let tag = if check.passed { "PASS" } else { "FAIL" };
        println!("{tag} {} ({:.2}s): {}", check.name, check.seconds, check.details);
    }
    println!("{} passed, {} failed", report.passed, report.failed);
    std::fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join("verify_report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!("wrote {}", path.display());
    Ok(if report.all_passed() { 0 } else { 4 })
}
