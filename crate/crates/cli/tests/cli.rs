//! End-to-end scenario tests driven through the library entry point.

use fcascade_cli::config::parse_config;
use fcascade_cli::scenarios::{run_scenario, Scenario, EXIT_CHECK_FAILED, EXIT_OK};
use std::path::PathBuf;

fn temp_prefix(tag: &str) -> PathBuf {
    let mut path = std::env::temp_dir();
    path.push(format!("fcascade_test_{}_{tag}", std::process::id()));
    path
}

fn read_json(prefix: &std::path::Path) -> serde_json::Value {
    let text = std::fs::read_to_string(prefix.with_extension("json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn check_passes_on_default_beam() {
    let cfg = parse_config("[beam]\nn = 32\n").unwrap();
    let out = temp_prefix("check_beam");
    let code = run_scenario(Scenario::Check, &cfg, &out);
    assert_eq!(code, EXIT_OK);
    let json = read_json(&out);
    assert_eq!(json["results"]["all_passed"], true);
    assert!(json["results"]["non_resonance"]["sigma_min"].as_f64().unwrap() > 0.9);
}

#[test]
fn check_fails_on_symmetric_s() {
    let cfg = parse_config(
        "
[model]
kind = custom-linear
[linear]
a = -1 0; 0 -2
b = 1; 0
c = 1 0; 0 1
s = 0 1; 1 0
",
    )
    .unwrap();
    let out = temp_prefix("check_syms");
    let code = run_scenario(Scenario::Check, &cfg, &out);
    assert_eq!(code, EXIT_CHECK_FAILED);
    let json = read_json(&out);
    assert_eq!(json["results"]["all_passed"], false);
}

#[test]
fn check_passes_on_scalar() {
    let cfg = parse_config("[model]\nkind = scalar\n").unwrap();
    let out = temp_prefix("check_scalar");
    assert_eq!(run_scenario(Scenario::Check, &cfg, &out), EXIT_OK);
}

#[test]
fn openloop_scalar_defect_is_conserved() {
    let cfg = parse_config(
        "
[model]
kind = scalar
[graph]
step = 1e-3
tail_tol = 1e-8
decay_floor = 1e-8
smoothing_steps = 0
[sim]
dt = 1e-3
t_final = 10
record_every = 100
[init]
kind = values
x0 = 1.0
z0 = 0.5
",
    )
    .unwrap();
    let out = temp_prefix("openloop_scalar");
    assert_eq!(run_scenario(Scenario::OpenLoop, &cfg, &out), EXIT_OK);
    let json = read_json(&out);
    let drift = json["results"]["max_relative_defect_drift"].as_f64().unwrap();
    assert!(drift <= 1e-4, "drift = {drift}");
}

#[test]
fn regulate_scalar_reaches_reference() {
    let cfg = parse_config(
        "
[model]
kind = scalar
[controller]
y_ref = 0.2
sample_period = 0.01
[sim]
dt = 1e-3
t_final = 30
record_every = 100
[graph]
step = 1e-3
smoothing_steps = 0
",
    )
    .unwrap();
    let out = temp_prefix("regulate_scalar");
    assert_eq!(run_scenario(Scenario::Regulate, &cfg, &out), EXIT_OK);
    let json = read_json(&out);
    let err = json["results"]["output_error"].as_f64().unwrap();
    assert!(err <= 1e-3, "output error = {err}");
}

#[test]
fn graph_scenario_reports_residuals() {
    let cfg = parse_config("[model]\nkind = scalar\n[graph]\nstep = 1e-3\nsmoothing_steps = 0\n").unwrap();
    let out = temp_prefix("graph_scalar");
    assert_eq!(run_scenario(Scenario::Graph, &cfg, &out), EXIT_OK);
    let json = read_json(&out);
    let residuals = json["results"]["forwarding_residuals"].as_array().unwrap();
    assert_eq!(residuals.len(), 5);
    for entry in residuals {
        assert!(entry["residual"].as_f64().unwrap() < 1e-4);
    }
}

#[test]
fn identical_config_and_seed_replay_byte_identical() {
    let text = "
[model]
kind = scalar
[init]
kind = random
v_target = 0.5
z0 = 0.3
[sim]
dt = 1e-3
t_final = 2
record_every = 50
[graph]
step = 1e-3
smoothing_steps = 0
[controller]
sample_period = 0.01
";
    let cfg = parse_config(text).unwrap();
    let out_a = temp_prefix("replay_a");
    let out_b = temp_prefix("replay_b");
    assert_eq!(run_scenario(Scenario::Simulate, &cfg, &out_a), EXIT_OK);
    assert_eq!(run_scenario(Scenario::Simulate, &cfg, &out_b), EXIT_OK);
    let a = std::fs::read(out_a.with_extension("csv")).unwrap();
    let b = std::fs::read(out_b.with_extension("csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "replays must be byte-identical");
}

#[test]
fn csv_schema_is_frozen() {
    let cfg = parse_config(
        "
[model]
kind = beam
[beam]
n = 8
[sim]
dt = 2e-3
t_final = 0.2
record_every = 10
[controller]
sample_period = 0.02
[graph]
step = 1e-2
decay_floor = 1e-4
smoothing_steps = 8
",
    )
    .unwrap();
    let out = temp_prefix("csv_schema");
    assert_eq!(run_scenario(Scenario::Simulate, &cfg, &out), EXIT_OK);
    let text = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "t,V,W,u_norm,defect_norm,x_norm,theta,theta_ref,w_p1,w_p2,w_p3,w_p4,w_p5"
    );
    // config echo present in the sidecar
    let json = read_json(&out);
    assert_eq!(json["config"]["beam"]["n"], 8);
    assert_eq!(json["config"]["seed"], 42);
}

#[test]
fn args_parse_and_validate() {
    use fcascade_cli::{parse_args, Parsed};
    let argv: Vec<String> = ["regulate", "--theta-ref", "1.5", "--controller", "linear", "--seed", "7"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    match parse_args(&argv).unwrap() {
        Parsed::Run(args) => {
            assert_eq!(args.theta_ref, Some(1.5));
            assert_eq!(args.seed, Some(7));
        }
        Parsed::Help => panic!("expected run"),
    }
    assert!(parse_args(&["bogus".to_string()]).is_err());
    assert!(parse_args(&["check".to_string(), "--seed".to_string()]).is_err());
    assert!(matches!(parse_args(&["--help".to_string()]), Ok(Parsed::Help)));
}

#[test]
fn config_errors_surface_with_lines() {
    let e = parse_config("[sim]\ndt = oops\n").unwrap_err();
    assert_eq!(e.line, Some(2));
}
