//! Drives the compiled binary end to end: exit codes, printed reports, CSV
//! exports, and config round-trips through the filesystem.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adm_dae::harness::{bundled_robot_config, load_config, save_config};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adm-dae"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is UTF-8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is UTF-8")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

const PENDULUM: &str = r#"{
  "name": "planar pendulum",
  "coordinates": ["x", "y"],
  "velocities": ["vx", "vy"],
  "mass_matrix": [["1", "0"], ["0", "1"]],
  "force": ["0", "-1"],
  "constraints": ["x^2 + y^2 - 1"],
  "initial": { "p": [1.0, 0.0], "v": [0.0, 0.0] }
}
"#;

#[test]
fn check_accepts_the_bundled_robot() {
    let robot = data("two_link_robot.json");
    let out = run(&["check", "--config", robot.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("consistent"), "missing verdict in:\n{text}");
    assert!(
        text.contains("suggested stage length"),
        "missing hint in:\n{text}"
    );
}

#[test]
fn check_rejects_an_inconsistent_start() {
    let bad = data("robot_bad_v0.json");
    let out = run(&["check", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    // The report still prints, carrying the exact unit residual, before the
    // gate turns it into an error.
    let text = stdout(&out);
    assert!(text.contains("1.000000e0"), "missing residual in:\n{text}");
    assert!(text.contains("INCONSISTENT"), "missing verdict in:\n{text}");
    assert!(
        stderr(&out).contains("consistency"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn usage_errors_exit_with_code_2() {
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["solve"])), 2, "--config is required");
    let robot = data("two_link_robot.json");
    let robot = robot.to_str().unwrap();
    assert_eq!(code(&run(&["solve", "--config", robot, "--t-end", "0"])), 2);
    assert_eq!(
        code(&run(&["solve", "--config", robot, "--samples", "1"])),
        2
    );
    assert_eq!(code(&run(&["verify", "--config", robot, "--tol", "-1"])), 2);
}

#[test]
fn help_and_version_exit_cleanly() {
    let help = run(&["--help"]);
    assert_eq!(code(&help), 0);
    let text = stdout(&help);
    for subcommand in ["check", "solve", "verify", "demo"] {
        assert!(
            text.contains(subcommand),
            "help misses {subcommand}:\n{text}"
        );
    }
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn out_of_range_orders_are_runtime_errors() {
    let robot = data("two_link_robot.json");
    let robot = robot.to_str().unwrap();
    let low = run(&["solve", "--config", robot, "--order", "2"]);
    assert_eq!(code(&low), 1);
    assert!(
        stderr(&low).contains("expansion order"),
        "stderr: {}",
        stderr(&low)
    );
    let high = run(&["solve", "--config", robot, "--order", "57"]);
    assert_eq!(code(&high), 1);
}

#[test]
fn missing_config_is_a_runtime_error_not_usage() {
    let out = run(&["check", "--config", "/nonexistent/system.json"]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("cannot read"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn malformed_configs_report_their_origin() {
    let dir = tempfile::tempdir().unwrap();

    let schema = dir.path().join("schema.json");
    fs::write(&schema, r#"{ "name": 3 }"#).unwrap();
    let out = run(&["check", "--config", schema.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("schema.json"),
        "stderr: {}",
        stderr(&out)
    );

    // A parse error inside one expression names the offending slot.
    let broken = dir.path().join("broken.json");
    fs::write(&broken, PENDULUM.replace("x^2 + y^2 - 1", "x^2 + ")).unwrap();
    let out = run(&["check", "--config", broken.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("constraints[0]"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn solve_exports_the_sampled_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("sol.csv");
    let robot = data("two_link_robot.json");
    let out = run(&[
        "solve",
        "--config",
        robot.to_str().unwrap(),
        "--order",
        "8",
        "--t-end",
        "1.0",
        "--samples",
        "101",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("1 stage(s)"));

    let text = fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 102, "header plus one row per sample");
    assert_eq!(lines[0], "t,p1,p2,v1,v2,lambda1");
    assert_eq!(
        lines[1],
        "0.0000000000000000e0,0.0000000000000000e0,0.0000000000000000e0,\
         1.0000000000000000e0,-2.0000000000000000e0,1.0000000000000000e0"
    );

    // Every value round-trips: parsing and re-formatting reproduces the
    // file byte for byte, so no precision is lost in export.
    for line in &lines[1..] {
        for field in line.split(',') {
            let value: f64 = field.parse().expect("field parses");
            assert_eq!(format!("{value:.16e}"), field);
        }
    }

    // And the parsed values are bit-identical to an in-process solve
    // sampled on the same grid.
    let sys = adm_dae::harness::system_from_config(&bundled_robot_config()).unwrap();
    let sol = adm_dae::solver::multistage_solve(&sys, 1.0, 1.0, 8).unwrap();
    for (i, line) in lines[1..].iter().enumerate() {
        let t = if i == 100 { 1.0 } else { i as f64 / 100.0 };
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        let (p, v, lam) = sol.eval(t);
        let expected = [t, p[0], p[1], v[0], v[1], lam[0]];
        for (got, want) in fields.iter().zip(&expected) {
            assert_eq!(got.to_bits(), want.to_bits(), "row {i} differs");
        }
    }
}

#[test]
fn solve_writes_residual_reports() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("residuals.csv");
    let robot = data("two_link_robot.json");
    let out = run(&[
        "solve",
        "--config",
        robot.to_str().unwrap(),
        "--residuals",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let text = fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,g_res,gv_res,defect,err_p,err_v,err_lambda");
    assert_eq!(lines.len(), 102);

    // At t = 0 the constraint residuals coincide with the consistency
    // residuals of the initial data, which vanish for the bundled robot.
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[0], "0.0000000000000000e0");
    assert_eq!(first[1], "0.0000000000000000e0");
    assert_eq!(first[2], "0.0000000000000000e0");

    // The bundled config carries a closed-form reference, so the error
    // columns are populated and finite.
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 7);
        for field in fields {
            assert!(!field.is_empty());
            assert!(field.parse::<f64>().unwrap().is_finite());
        }
    }
}

#[test]
fn verify_gates_on_constraint_residuals() {
    let robot = data("two_link_robot.json");
    let out = run(&["verify", "--config", robot.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("within"), "missing verdict in:\n{text}");
    assert!(text.contains("(not gated)"), "defect line changed:\n{text}");

    // A swinging pendulum over a full unit interval needs restarts: one
    // stage fails the default gate, eight stages pass it.
    let dir = tempfile::tempdir().unwrap();
    let pendulum = dir.path().join("pendulum.json");
    fs::write(&pendulum, PENDULUM).unwrap();
    let pendulum = pendulum.to_str().unwrap();

    let single = run(&["verify", "--config", pendulum, "--t-end", "1.0"]);
    assert_eq!(code(&single), 1);
    assert!(
        stderr(&single).contains("constraint residuals exceed"),
        "stderr: {}",
        stderr(&single)
    );

    let staged = run(&[
        "verify", "--config", pendulum, "--t-end", "1.0", "--stage", "0.125",
    ]);
    assert_eq!(code(&staged), 0, "stderr: {}", stderr(&staged));
    assert!(stdout(&staged).contains("8 stage(s)"));
}

#[test]
fn demo_prints_the_truncated_cosine_series() {
    let out = run(&["demo"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("lambda1(t)"),
        "missing series label in:\n{text}"
    );
    assert!(
        text.contains("1 - t^2/2 + t^4/24 - t^6/720"),
        "multiplier series changed:\n{text}"
    );
    assert!(
        text.contains("closed form"),
        "missing comparison line in:\n{text}"
    );
}

#[test]
fn saved_configs_round_trip_through_solve() {
    let dir = tempfile::tempdir().unwrap();
    let resaved = dir.path().join("resaved.json");
    save_config(&bundled_robot_config(), &resaved).unwrap();
    assert_eq!(load_config(&resaved).unwrap(), bundled_robot_config());

    let from_data = dir.path().join("a.csv");
    let from_resaved = dir.path().join("b.csv");
    let robot = data("two_link_robot.json");
    let out = run(&[
        "solve",
        "--config",
        robot.to_str().unwrap(),
        "--out",
        from_data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let out = run(&[
        "solve",
        "--config",
        resaved.to_str().unwrap(),
        "--out",
        from_resaved.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read(&from_data).unwrap(),
        fs::read(&from_resaved).unwrap(),
        "round-tripped config must reproduce the trajectory byte for byte"
    );
}
