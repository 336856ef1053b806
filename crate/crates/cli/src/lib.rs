//! Command-line front end: scenario orchestration, configuration, and trace
//! export. The binary logic lives in the library so integration tests can
//! drive it without spawning processes.

// `!(v > 0.0)` rejects NaN config values; `v <= 0.0` would accept them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod scenarios;

use config::RunConfig;
use fcascade_core::controller::ControlMode;
use scenarios::{Scenario, EXIT_CONFIG};
use std::path::PathBuf;

pub const HELP: &str = "\
fcascade - forwarding stabilizers for semilinear cascade systems

USAGE:
    fcascade <scenario> [OPTIONS]

SCENARIOS:
    check       validate the model structure and the non-resonance condition
    graph       solve for the invariant-graph map and report residuals
    openloop    run the uncontrolled cascade; report graph-defect drift
    simulate    closed-loop stabilization run with Lyapunov monitors
    regulate    closed-loop set-point regulation run

OPTIONS:
    --config <path>         INI config file (all keys optional; see below)
    --out <prefix>          output prefix; writes <prefix>.csv and <prefix>.json
    --seed <int>            PRNG seed override (default 42)
    --controller <full|linear>   feedback mode override
    --theta-ref <real>      beam target angle override (radians)
    --sample-period <real>  controller sample-and-hold period override
    --help                  print this message

CONFIG FILE (INI sections; defaults in parentheses):
    [model]      kind = beam | scalar | custom-linear   (beam)
    [beam]       n (32), length (1.0), lambda (1.0), theta_ref (0.0)
    [linear]     a, b, c, s = row-major matrix literals like \"-1 0; 0 -2\"
                 (required for custom-linear)
    [graph]      step (5e-3), tail_tol (1e-4), max_horizon (120),
                 decay_floor (1e-5), smoothing_steps (8)
    [controller] mode = full | linear (full), sample_period (0.05),
                 y_ref = numbers (unset; generic-model regulation target)
    [sim]        dt (1e-3), t_final (20), scheme = imex-cn | rk4 (imex-cn),
                 record_every (50)
    [init]       kind = rest | random | values (rest), v_target (1.0),
                 x0 = numbers (for kind = values), z0 (0), theta0 (0.0)
    [run]        seed (42), regulation_tol (1e-3)

OUTPUT:
    <prefix>.csv    trace: t,V,W,u_norm,defect_norm,x_norm plus beam columns
                    theta,theta_ref,w_p1..w_p5 when the model is the beam
    <prefix>.json   config echo, check verdicts, fitted rates

EXIT CODES:
    0  pass     1  check failure     2  numerical failure     3  config error
";

#[derive(Debug)]
pub struct CliArgs {
    pub scenario: Scenario,
    pub config_path: Option<PathBuf>,
    pub out_prefix: Option<PathBuf>,
    pub seed: Option<u64>,
    pub controller: Option<ControlMode>,
    pub theta_ref: Option<f64>,
    pub sample_period: Option<f64>,
}

pub enum Parsed {
    Run(Box<CliArgs>),
    Help,
}

pub fn parse_args(argv: &[String]) -> Result<Parsed, String> {
    if argv.iter().any(|a| a == "--help" || a == "-h") {
        return Ok(Parsed::Help);
    }
    let mut it = argv.iter();
    let scenario_name = it.next().ok_or("missing scenario (try --help)")?;
    let scenario = Scenario::parse(scenario_name)
        .ok_or_else(|| format!("unknown scenario `{scenario_name}` (try --help)"))?;
    let mut args = CliArgs {
        scenario,
        config_path: None,
        out_prefix: None,
        seed: None,
        controller: None,
        theta_ref: None,
        sample_period: None,
    };
    while let Some(flag) = it.next() {
        let mut value = |name: &str| -> Result<&String, String> {
            it.next().ok_or_else(|| format!("{name} requires a value"))
        };
        match flag.as_str() {
            "--config" => args.config_path = Some(PathBuf::from(value("--config")?)),
            "--out" => args.out_prefix = Some(PathBuf::from(value("--out")?)),
            "--seed" => {
                args.seed =
                    Some(value("--seed")?.parse().map_err(|_| "--seed expects an integer".to_string())?)
            }
            "--controller" => {
                args.controller = Some(match value("--controller")?.as_str() {
                    "full" => ControlMode::FullNonlinear,
                    "linear" => ControlMode::LinearM0,
                    other => return Err(format!("--controller expects full|linear, got `{other}`")),
                })
            }
            "--theta-ref" => {
                args.theta_ref = Some(
                    value("--theta-ref")?
                        .parse()
                        .map_err(|_| "--theta-ref expects a number".to_string())?,
                )
            }
            "--sample-period" => {
                args.sample_period = Some(
                    value("--sample-period")?
                        .parse()
                        .map_err(|_| "--sample-period expects a number".to_string())?,
                )
            }
            other => return Err(format!("unknown option `{other}` (try --help)")),
        }
    }
    Ok(Parsed::Run(Box::new(args)))
}

/// Load the config file (if any), apply CLI overrides, run the scenario.
pub fn run(args: &CliArgs) -> u8 {
    let text = match &args.config_path {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("fcascade: cannot read {}: {e}", path.display());
                return EXIT_CONFIG;
            }
        },
        None => String::new(),
    };
    let mut cfg: RunConfig = match config::parse_config(&text) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("fcascade: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = args.controller {
        cfg.mode = mode;
    }
    if let Some(theta_ref) = args.theta_ref {
        cfg.beam.theta_ref = theta_ref;
    }
    if let Some(p) = args.sample_period {
        if !(p > 0.0) || cfg.sim.dt > p {
            eprintln!("fcascade: --sample-period must be positive and >= sim.dt");
            return EXIT_CONFIG;
        }
        cfg.sample_period = p;
    }
    let out = args
        .out_prefix
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("fcascade_{}", args.scenario.name())));
    scenarios::run_scenario(args.scenario, &cfg, &out)
}
