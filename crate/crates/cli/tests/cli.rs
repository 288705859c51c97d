use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const CIRCLE: &str = r#"
[problem]
kappa = 1.0
direction = [1.0, 0.0, 0.0]
bc = { kind = "sound_soft" }

[geometry]
kind = "circle"
radius = 1.0
base_segments = 12

[levels]
min = 0
max = 2
reference = 3

[solver]
tol = 1e-8
"#;

const RANDOM_FIELD: &str = r#"
[field]
kind = "random"
direction = { kind = "radial" }
modes = [
  { shape = "cosine", n = 1, weight = 0.5 },
  { shape = "sine", n = 2, weight = 0.5 },
]
"#;

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn fosb(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fosb"))
        .args(args)
        .output()
        .unwrap()
}

fn run_with(dir: &Path, command: &str, config: &str, extra: &[&str]) -> std::process::Output {
    let cfg = dir.join("input.toml");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let mut args = vec![
        command,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    fosb(&args)
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(i).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn converge_reports_decreasing_errors_and_a_slope() {
    let dir = scratch("converge");
    let o = run_with(&dir, "converge", CIRCLE, &["--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.join("out/convergence.csv")).unwrap();
    let err = column(&csv, "rel_error_neumann_H-1/2");
    assert_eq!(err.len(), 3);
    assert!(err.windows(2).all(|w| w[1] < w[0]), "{err:?}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "converge");
    assert_eq!(report["threads"], 1);
    assert!(report["summary"]["slope_neumann"].as_f64().unwrap() > 1.0);
    assert_eq!(
        fs::read_to_string(dir.join("out/config.toml")).unwrap(),
        CIRCLE
    );
    let history = fs::read_to_string(dir.join("out/gmres_history.csv")).unwrap();
    assert!(history.starts_with("solve,iteration,preconditioned_residual,q_m"));
}

#[test]
fn negative_impedance_is_a_validation_error() {
    let dir = scratch("negative_eta");
    let cfg = CIRCLE.replace(
        r#"bc = { kind = "sound_soft" }"#,
        r#"bc = { kind = "impedance", eta = -1.0 }"#,
    );
    let o = run_with(&dir, "converge", &cfg, &[]);
    assert_eq!(o.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["category"], "validation");
    assert!(!dir.join("out/report.json").exists());
}

#[test]
fn malformed_and_missing_configs_use_the_config_category() {
    let dir = scratch("malformed");
    let o = run_with(&dir, "converge", "[problem\nkappa = ", &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = fosb(&[
        "converge",
        "--config",
        dir.join("absent.toml").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oversized_spectrum_is_skipped_not_fatal() {
    let dir = scratch("diagnose");
    let cfg = format!("{CIRCLE}\n[diagnose]\nspectrum_cap = 30\n");
    let o = run_with(&dir, "diagnose", &cfg, &["--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.join("out/diagnose.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].contains("0.") && rows[3].contains(",,"));
}

fn strip_timing(csv: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let keep: Vec<usize> = (0..header.len())
        .filter(|i| header[*i] != "seconds")
        .collect();
    std::iter::once(header.join(","))
        .chain(lines.map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            keep.iter().map(|i| f[*i]).collect::<Vec<_>>().join(",")
        }))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn same_seed_gives_identical_outputs() {
    let cfg = format!(
        "{}\n{RANDOM_FIELD}\n[mc]\nsamples = 6\nt = 0.05\ndirections = 16\n",
        CIRCLE.replace("reference = 3", "")
    );
    let a = scratch("determinism_a");
    let b = scratch("determinism_b");
    let oa = run_with(&a, "mc", &cfg, &["--seed", "11", "--threads", "1"]);
    let ob = run_with(&b, "mc", &cfg, &["--seed", "11", "--threads", "2"]);
    assert!(
        oa.status.success(),
        "{}",
        String::from_utf8_lossy(&oa.stderr)
    );
    assert!(
        ob.status.success(),
        "{}",
        String::from_utf8_lossy(&ob.stderr)
    );
    for name in ["far_field_moments.csv", "mc_samples.csv"] {
        let x = fs::read_to_string(a.join("out").join(name)).unwrap();
        let y = fs::read_to_string(b.join("out").join(name)).unwrap();
        assert_eq!(strip_timing(&x), strip_timing(&y), "{name}");
    }
    let c = scratch("determinism_c");
    let oc = run_with(&c, "mc", &cfg, &["--seed", "12", "--threads", "1"]);
    assert!(oc.status.success());
    let x = fs::read_to_string(a.join("out/mc_samples.csv")).unwrap();
    let z = fs::read_to_string(c.join("out/mc_samples.csv")).unwrap();
    assert_ne!(strip_timing(&x), strip_timing(&z));
}
