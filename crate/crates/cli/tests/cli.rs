use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use maxstab::diagnostics::DiagnosticReport;
use maxstab::Outcome;
use maxstab_cli::manifest::{RunManifest, StageRecord};
use tempfile::TempDir;

const BUMP: &str = r#"
seed = 3
[model]
kind = "compact_bump"
placement_radius = 4.0
shape = { kind = "triangular", half_width = 1.0, height = 1.0 }
[grid]
domain = "continuous"
radius = 4
[simulation]
n_reps = 4
"#;

const MIXTURE: &str = r#"
seed = 5
[model]
kind = "mixture"
[[model.components]]
weight = 0.4
model = { kind = "constant", c = 1.0 }
[[model.components]]
weight = 0.6
model = { kind = "compact_bump", placement_radius = 4.0, shape = { kind = "triangular", half_width = 1.0, height = 1.0 } }
[grid]
domain = "continuous"
radius = 4
[simulation]
n_reps = 3
"#;

fn maxstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxstab")).args(args).output().unwrap()
}

fn config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stage<'a>(m: &'a RunManifest, name: &str) -> &'a StageRecord {
    m.stages.iter().find(|s| s.stage == name).unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn reruns_give_identical_digests() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "bump.toml", BUMP);
    let mut runs = Vec::new();
    for (i, threads) in ["1", "2", "1"].iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let out = out.to_str().unwrap();
        ok(&maxstab(&["--threads", threads, "simulate", "--config", &cfg, "--out", out]));
        ok(&maxstab(&["--threads", threads, "decompose", "--config", &cfg, "--out", out]));
        runs.push(RunManifest::load(Path::new(out)).unwrap().unwrap());
    }
    for m in &runs[1..] {
        assert_eq!(m.config_hash, runs[0].config_hash);
        for s in ["simulate", "decompose"] {
            assert_eq!(stage(m, s).files, stage(&runs[0], s).files, "{s}");
        }
    }
    // A different seed changes the fields.
    let other = tmp.path().join("other");
    ok(&maxstab(&["simulate", "--config", &cfg, "--seed", "4", "--out", other.to_str().unwrap()]));
    let m = RunManifest::load(&other).unwrap().unwrap();
    let digest =
        |m: &RunManifest| stage(m, "simulate").files.iter().find(|f| f.path == "fields.csv").unwrap().sha256.clone();
    assert_ne!(digest(&m), digest(&runs[0]));
}

#[test]
fn resolved_config_is_echoed() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "bump.toml", BUMP);
    let out = tmp.path().join("out");
    ok(&maxstab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let echoed = fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    let mut back = maxstab_cli::RunConfig::parse(&echoed).unwrap();
    back.resolve().unwrap();
    let m = RunManifest::load(&out).unwrap().unwrap();
    assert_eq!(m.config.as_ref(), Some(&back));
    assert_eq!(m.config_hash, Some(back.digest()));
    assert!(echoed.contains("mode = \"threshold\""));
    assert_eq!(stage(&m, "simulate").flags.exact, Some(true));
}

#[test]
fn config_errors_name_the_field() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    let empty = config(tmp.path(), "empty.toml", &BUMP.replace("n_reps = 4", "n_reps = 0"));
    let o = maxstab(&["simulate", "--config", &empty, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("simulation.n_reps") && err.contains("empty run"), "{err}");

    let unseeded = config(tmp.path(), "noseed.toml", &BUMP.replace("seed = 3", ""));
    let o = maxstab(&["simulate", "--config", &unseeded, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`seed`"));

    let typo = config(tmp.path(), "typo.toml", &BUMP.replace("radius = 4", "radius = 4\nspcing = 0.5"));
    let o = maxstab(&["simulate", "--config", &typo, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("spcing"));

    let o = maxstab(&["simulate", "--config", tmp.path().join("absent.toml").to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(6));
    assert!(!Path::new(out).exists());
}

#[test]
fn report_checks_the_directory() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = maxstab(&["report", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(maxstab(&["report", tmp.path().join("nowhere").to_str().unwrap()]).status.code(), Some(6));

    let cfg = config(tmp.path(), "bump.toml", BUMP);
    let out = tmp.path().join("out");
    ok(&maxstab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let o = maxstab(&["report", out.to_str().unwrap()]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("simulate"));
    assert!(out.join("summary.txt").exists());

    fs::write(out.join("fields/rep_0001.csv"), "x,value\n0,0\n").unwrap();
    let o = maxstab(&["report", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rep_0001.csv"));

    fs::remove_file(out.join("fields/rep_0001.csv")).unwrap();
    assert_eq!(maxstab(&["report", out.to_str().unwrap()]).status.code(), Some(6));
}

#[test]
fn a_second_config_is_refused() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "bump.toml", BUMP);
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    ok(&maxstab(&["simulate", "--config", &cfg, "--out", out]));
    let o = maxstab(&["simulate", "--config", &cfg, "--seed", "99", "--out", out]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn hopf_split_of_a_mixture() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "mix.toml", MIXTURE);
    let out = tmp.path().join("out");
    ok(&maxstab(&["decompose", "--config", &cfg, "--axis", "hopf", "--out", out.to_str().unwrap()]));
    let summary = fs::read_to_string(out.join("decompose_summary.csv")).unwrap();
    let mut p1 = 0;
    let mut p2 = 0;
    for line in summary.lines().skip(1) {
        let cols: Vec<usize> = line.split(',').take(4).map(|c| c.parse().unwrap()).collect();
        p1 += cols[1];
        p2 += cols[2];
        assert_eq!(cols[3], 0, "constant and bump atoms are both conclusive");
    }
    assert!(p1 > 0 && p2 > 0, "{summary}");
    for part in ["part1", "part2", "unassigned", "decomposition", "m3_atoms"] {
        assert!(out.join(part).read_dir().unwrap().count() == 3, "{part}");
    }
    // Every field is the max of its parts.
    let rows = fs::read_to_string(out.join("parts/rep_0000.csv")).unwrap();
    for line in rows.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(v[1], v[2].max(v[3]).max(v[4]));
    }
    let o = maxstab(&["decompose", "--config", &cfg, "--axis", "sideways", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn diagnose_supports_a_bump() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "bump.toml", BUMP);
    let out = tmp.path().join("out");
    ok(&maxstab(&["diagnose", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let text = fs::read_to_string(out.join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["schema_version"], 1);
    let r: DiagnosticReport = serde_json::from_value(v).unwrap();
    for verdict in [&r.verdicts.ergodic, &r.verdicts.mixing, &r.verdicts.m3] {
        assert_eq!(verdict.outcome, Outcome::Supported, "{verdict:?}");
    }
    for f in ["min_expectation.csv", "exceedance.csv", "cesaro.csv", "theta.csv", "plot_curves.py"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn classify_reads_path_files() {
    let tmp = TempDir::new().unwrap();
    let mut body = String::from("x,value\n");
    for i in -256..=256 {
        let x = i as f64 * 0.125;
        body += &format!("{x},{}\n", (1.0 - (x - 3.0f64).abs()).max(0.0));
    }
    let input = tmp.path().join("bump.csv");
    fs::write(&input, body).unwrap();
    let out = tmp.path().join("out");
    ok(&maxstab(&["classify", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    let csv = fs::read_to_string(out.join("verdicts.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "0,dissipative,dissipative,null,,false");
    let m = RunManifest::load(&out).unwrap().unwrap();
    assert_eq!(stage(&m, "classify").inputs.len(), 1);

    fs::write(&input, "x,value\n0,1\n0.3,oops\n").unwrap();
    let o =
        maxstab(&["classify", "--input", input.to_str().unwrap(), "--out", tmp.path().join("bad").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn constant_fields_are_flat() {
    let tmp = TempDir::new().unwrap();
    let text = BUMP.replace(
        "kind = \"compact_bump\"\nplacement_radius = 4.0\nshape = { kind = \"triangular\", half_width = 1.0, height = 1.0 }",
        "kind = \"constant\"\nc = 1.0",
    );
    let cfg = config(tmp.path(), "const.toml", &text);
    let out = tmp.path().join("out");
    ok(&maxstab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let csv = fs::read_to_string(out.join("fields.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    for line in csv.lines().skip(1) {
        let vals: Vec<&str> = line.split(',').skip(1).collect();
        assert_eq!(vals.len(), 65);
        assert!(vals.iter().all(|v| *v == vals[0]), "{line}");
    }
}

#[test]
fn conflicting_flags_have_their_own_exit_code() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("p.csv");
    fs::write(&input, "x,value\n0,1\n1,0\n").unwrap();
    let out = tmp.path().join("out");
    let o = maxstab(&["classify", "--input", input.to_str().unwrap(), "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(7));
    let o = maxstab(&["simulate", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn the_whole_pipeline_is_a_function_of_the_config() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{MIXTURE}[diagnostics]\nn_paths = 200\ntheta_reps = 1000\nidentity_reps = 2000\n");
    let cfg = config(tmp.path(), "mix.toml", &text);
    let mut manifests = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("run{i}"));
        let out = out.to_str().unwrap();
        for cmd in ["simulate", "classify", "decompose", "diagnose"] {
            ok(&maxstab(&[cmd, "--config", &cfg, "--out", out]));
        }
        ok(&maxstab(&["report", out]));
        manifests.push(RunManifest::load(Path::new(out)).unwrap().unwrap());
    }
    let [a, b] = &manifests[..] else { unreachable!() };
    assert_eq!(a.stages.len(), 5);
    for (x, y) in a.stages.iter().zip(&b.stages) {
        assert_eq!(x.stage, y.stage);
        assert_eq!(x.files, y.files, "{}", x.stage);
        assert_eq!(x.flags, y.flags, "{}", x.stage);
    }
}
