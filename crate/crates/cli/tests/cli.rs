use std::path::Path;
use std::process::Command;

use fbcap::nblock::perfect_feedback_nblock;
use fbcap::noise::NoiseModel;
use fbcap::spectral::perfect_feedback_shannon;
use serde_json::Value;

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn fbcap(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_fbcap"))
        .args(args)
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

/// Header plus rows, as (column → value) lookups.
fn csv(text: &str) -> Vec<Vec<(String, String)>> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect())
        .collect()
}

fn field(row: &[(String, String)], name: &str) -> String {
    row.iter().find(|(k, _)| k == name).unwrap().1.clone()
}

fn num(row: &[(String, String)], name: &str) -> f64 {
    field(row, name).parse().unwrap()
}

#[test]
fn nblock_white_scalar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "channel.kind = white\nchannel.variance = 1\n");
    let out = fbcap(&["nblock", "--config", &cfg, "--n", "1", "--power", "3"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let rows = csv(&out.stdout);
    assert_eq!(rows.len(), 1);
    assert!((num(&rows[0], "bound_bits") - 1.0).abs() < 1e-8);
    assert_eq!(field(&rows[0], "n"), "1");
}

#[test]
fn nblock_sigma_zero_matches_perfect_feedback() {
    let out = fbcap(&["nblock", "--n", "10", "--sigma", "0", "--alpha", "0.1", "--power", "10"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let rows = csv(&out.stdout);
    let (b, pf) = (num(&rows[0], "bound_bits"), num(&rows[0], "perfect_fb_bits"));
    assert!((b - pf).abs() <= 1e-5);
    let kw = NoiseModel::ma1(0.1).unwrap().covariance(10).unwrap();
    let direct = perfect_feedback_nblock(&kw, 10.0, &Default::default()).unwrap();
    assert!((direct.value_bits - pf).abs() < 1e-11);
}

#[test]
fn malformed_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "channel.alpah = 0.1\n");
    let out = fbcap(&["nblock", "--config", &cfg]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("channel.alpah"), "{}", out.stderr);
    assert!(out.stdout.is_empty());

    let out = fbcap(&["nblock", "--n", "65"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("channel.block_length"), "{}", out.stderr);

    let out = fbcap(&["nblock", "--sigma", "abc"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("feedback.sigma"), "{}", out.stderr);

    let out = fbcap(&["nblock", "--config", "/nonexistent/fbcap.cfg"]);
    assert_eq!(out.code, 2);
}

#[test]
fn unknown_flag_exits_2() {
    assert_eq!(fbcap(&["nblock", "--bogus"]).code, 2);
    assert_eq!(fbcap(&[]).code, 2);
    let help = fbcap(&["--help"]);
    assert_eq!(help.code, 0);
    assert!(help.stdout.contains("sweep"));
}

#[test]
fn solver_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "solver.max_iterations = 2\n");
    let out = fbcap(&["nblock", "--config", &cfg, "--n", "4"]);
    assert_eq!(out.code, 3, "{}", out.stderr);
}

#[test]
fn failed_sweep_point_leaves_empty_bound() {
    let dir = tempfile::tempdir().unwrap();
    // Zero feedback noise takes the cached perfect-feedback solve; the other
    // points hit the iteration cap.
    let cfg = write_config(dir.path(), "solver.max_iterations = 3\n");
    let out = fbcap(&["sweep", "--config", &cfg, "--n", "3", "--param", "sigma", "--values", "0.5,1"]);
    assert_eq!(out.code, 3);
    let rows = csv(&out.stdout);
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(field(row, "upper_bound_bits"), "");
        assert!(!field(row, "nonfeedback_bits").is_empty());
    }
}

#[test]
fn sweep_schema_and_order() {
    let out = fbcap(&["sweep", "--n", "4", "--param", "sigma", "--values", "0.8,0,0.3"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let header = out.stdout.lines().next().unwrap();
    assert_eq!(
        header,
        "sigma,n,P,alpha,upper_bound_bits,nonfeedback_bits,perfect_feedback_bits,power_used,solve_seconds"
    );
    let rows = csv(&out.stdout);
    let sigmas: Vec<String> = rows.iter().map(|r| field(r, "sigma")).collect();
    assert_eq!(sigmas, ["0.8", "0", "0.3"]);
    for r in &rows {
        let (nf, ub, pf) = (
            num(r, "nonfeedback_bits"),
            num(r, "upper_bound_bits"),
            num(r, "perfect_feedback_bits"),
        );
        assert!(nf <= ub + 1e-6 && ub <= pf + 1e-6);
        assert_eq!(field(r, "solve_seconds"), "");
    }
    assert!(out.stdout.ends_with('\n') && !out.stdout.contains('\r'));
}

#[test]
fn sweep_over_alpha() {
    let out = fbcap(&["sweep", "--n", "3", "--sigma", "0.3", "--param", "alpha", "--values", "0.1,0.5"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let rows = csv(&out.stdout);
    assert_eq!(field(&rows[0], "alpha"), "0.1");
    assert_eq!(field(&rows[1], "alpha"), "0.5");
    assert_eq!(field(&rows[1], "sigma"), "0.3");
}

#[test]
fn sweep_rejects_bad_lists() {
    assert_eq!(fbcap(&["sweep", "--param", "sigma", "--values", ""]).code, 2);
    assert_eq!(fbcap(&["sweep", "--param", "sigma", "--values", "-0.1"]).code, 2);
    assert_eq!(fbcap(&["sweep", "--param", "gamma", "--values", "1"]).code, 2);
    assert_eq!(fbcap(&["sweep"]).code, 2);
}

#[test]
fn sweep_timings_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "output.timings = true\n");
    let out = fbcap(&["sweep", "--config", &cfg, "--n", "3", "--param", "sigma", "--values", "0.2"]);
    assert_eq!(out.code, 0);
    assert!(num(&csv(&out.stdout)[0], "solve_seconds") >= 0.0);
}

#[test]
fn json_mirrors_csv() {
    let args = ["sweep", "--n", "3", "--param", "sigma", "--values", "0,0.4"];
    let c = fbcap(&args);
    let mut json_args = args.to_vec();
    json_args.extend(["--format", "json"]);
    let j = fbcap(&json_args);
    assert_eq!((c.code, j.code), (0, 0));
    let rows = csv(&c.stdout);
    let records: Vec<Value> = serde_json::from_str(&j.stdout).unwrap();
    assert_eq!(records.len(), rows.len());
    for (row, rec) in rows.iter().zip(&records) {
        let keys: Vec<&String> = rec.as_object().unwrap().keys().collect();
        let cols: Vec<&String> = row.iter().map(|(k, _)| k).collect();
        assert_eq!(keys, cols);
        for (k, v) in row {
            match &rec[k] {
                Value::Null => assert_eq!(v, ""),
                Value::Number(n) => assert_eq!(n.as_f64().unwrap(), v.parse::<f64>().unwrap()),
                other => panic!("{k}: {other}"),
            }
        }
    }
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let out = fbcap(&["nblock", "--n", "2", "--out", path.to_str().unwrap()]);
    assert_eq!(out.code, 0);
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("n,channel,"));
}

#[test]
fn spectral_white_pinch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "channel.kind = white\nchannel.variance = 1\n");
    let out = fbcap(&["spectral", "--config", &cfg, "--sigma", "1", "--power", "10", "--grid", "512", "--taps", "8"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let rows = csv(&out.stdout);
    assert!((num(&rows[0], "bound_bits") - 0.5 * 11f64.log2()).abs() < 1e-3);
}

#[test]
fn spectral_zero_taps_is_nonfeedback() {
    let out = fbcap(&["spectral", "--taps", "0", "--grid", "1024"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let rows = csv(&out.stdout);
    assert_eq!(field(&rows[0], "bound_bits"), field(&rows[0], "nonfeedback_shannon_bits"));
    assert_eq!(num(&rows[0], "filter_power_fraction"), 0.0);
}

#[test]
fn spectral_sandwich() {
    let out = fbcap(&["spectral", "--alpha", "0.1", "--sigma", "0.2", "--power", "10", "--taps", "8", "--grid", "512"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let rows = csv(&out.stdout);
    let v = num(&rows[0], "bound_bits");
    let nf = num(&rows[0], "nonfeedback_shannon_bits");
    let s_w = NoiseModel::ma1(0.1).unwrap().psd().unwrap();
    let pf = perfect_feedback_shannon(&s_w, 10.0, 8, 512).unwrap().value_bits;
    assert!(nf <= v + 1e-8 && v <= pf + 1e-8, "{nf} {v} {pf}");
    assert!(v > nf);
}

#[test]
fn spectral_rejects_small_grid() {
    let out = fbcap(&["spectral", "--grid", "16"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("spectral.grid"));
}

fn statuses(stdout: &str) -> Vec<(String, String)> {
    csv(stdout)
        .iter()
        .map(|r| (field(r, "check"), field(r, "status")))
        .collect()
}

#[test]
fn check_passes_and_seed_only_moves_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "solver.samples = 20000\n");
    let a = fbcap(&["check", "--config", &cfg]);
    let b = fbcap(&["check", "--config", &cfg, "--seed", "99"]);
    assert_eq!((a.code, b.code), (0, 0), "{}{}", a.stderr, b.stderr);
    assert_eq!(statuses(&a.stdout), statuses(&b.stdout));
    assert!(statuses(&a.stdout).iter().all(|(_, s)| s == "pass"));
    assert_ne!(a.stdout, b.stdout);
    assert_eq!(a.stdout, fbcap(&["check", "--config", &cfg]).stdout);
}

#[test]
fn check_detects_gradient_fault() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "solver.samples = 1000\n");
    let out = fbcap(&["check", "--config", &cfg, "--inject-gradient-fault"]);
    assert_eq!(out.code, 1);
    let st = statuses(&out.stdout);
    let grad = st.iter().find(|(n, _)| n == "barrier-gradient").unwrap();
    assert_eq!(grad.1, "FAIL");
    let ident = st.iter().find(|(n, _)| n == "identity-determinant").unwrap();
    assert_eq!(ident.1, "pass");
}

#[test]
fn run_entry_point_without_process() {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = fbcap_cli::run(["fbcap", "nblock", "--n", "1", "--sigma", "0"], &mut out, &mut err);
    assert_eq!(code, 0);
    assert!(String::from_utf8(out).unwrap().starts_with("n,channel"));
}
