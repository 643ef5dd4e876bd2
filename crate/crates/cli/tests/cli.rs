use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dduq_core::pipeline::{weighted_moments, SampleTable};
use serde_json::Value;

const TINY: &str = r#"
[problem]
preset = "two_component"

[dd]
snapshots = 30

[sampling]
n_off = 200
n_ref = 200
seed = 3

[flow]
epochs = 2
batch_size = 32

[surrogate]
max_epochs = 8
patience = 4

[output]
pdf_points = 20
thresholds = [3.0, 3.3]
"#;

fn dduq(config: &Path, stage: &str, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dduq"))
        .args([
            "--config",
            config.to_str().unwrap(),
            "--stage",
            stage,
            "--out",
            out.to_str().unwrap(),
            "--workers",
            "1",
        ])
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn setup(text: &str) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    (dir, cfg, out)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn full_run_is_reproducible_and_report_matches_tables() {
    let (_d, cfg, out) = setup(TINY);
    for stage in ["prep", "offline", "surrogate", "online", "report"] {
        ok(&dduq(&cfg, stage, &out));
    }
    let report = read_json(&out.join("report/report.json"));
    let subs = report["subdomains"].as_array().unwrap();
    assert_eq!(subs.len(), 2);
    for (i, s) in subs.iter().enumerate() {
        let t = SampleTable::load(&out.join(format!("online/table_{i}.txt"))).unwrap();
        let m = weighted_moments(&t.y, t.weights.as_ref().unwrap()).unwrap();
        assert_eq!(s["estimate"]["mean"].as_f64().unwrap().to_bits(), m.mean.to_bits());
        assert_eq!(s["estimate"]["variance"].as_f64().unwrap().to_bits(), m.variance.to_bits());
        let ess = s["ess"].as_f64().unwrap();
        assert!((1.0..=200.0 + 1e-9).contains(&ess));
        assert_eq!(s["exceedance"].as_array().unwrap().len(), 2);
        let pdf = std::fs::read_to_string(out.join(format!("report/pdf_{i}.csv"))).unwrap();
        let xs: Vec<f64> = pdf.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(xs.len(), 20);
        assert!(xs.windows(2).all(|w| w[0] < w[1]));
    }
    assert!(out.join("report/indicator.csv").exists());
    let manifest = read_json(&out.join("manifest.json"));
    for stage in ["prep", "offline", "surrogate", "online", "report"] {
        assert_eq!(manifest["stages"][stage]["seed"], 3);
    }

    // Rerunning a stage with the same configuration reproduces its artifacts.
    let before = std::fs::read(out.join("offline/table_0.txt")).unwrap();
    ok(&dduq(&cfg, "offline", &out));
    assert_eq!(before, std::fs::read(out.join("offline/table_0.txt")).unwrap());
    let before = std::fs::read(out.join("report/report.json")).unwrap();
    ok(&dduq(&cfg, "report", &out));
    assert_eq!(before, std::fs::read(out.join("report/report.json")).unwrap());
}

#[test]
fn report_before_online_names_the_missing_stage() {
    let (_d, cfg, out) = setup(TINY);
    ok(&dduq(&cfg, "prep", &out));
    let o = dduq(&cfg, "report", &out);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("`online`"), "{err}");
}

#[test]
fn changed_config_invalidates_downstream_stages() {
    let (d, cfg, out) = setup(TINY);
    ok(&dduq(&cfg, "prep", &out));
    let other = d.path().join("other.toml");
    std::fs::write(&other, TINY.replace("n_off = 200", "n_off = 100")).unwrap();
    let o = dduq(&other, "offline", &out);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("different configuration"));
}

#[test]
fn invalid_config_reports_line_numbers() {
    let (_d, cfg, out) =
        setup(&TINY.replace("n_off = 200", "n_off = 0").replace("epochs = 2", "epochs = 2\ngamma = 1.5"));
    let o = dduq(&cfg, "prep", &out);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 9"), "{err}");
    assert!(err.contains("line 15"), "{err}");
    assert!(!out.join("prep").exists());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let out = tempfile::tempdir().unwrap();
        // The prerequisite check runs only after the file parses and validates.
        let o = Command::new(env!("CARGO_BIN_EXE_dduq"))
            .args(["--config", p.to_str().unwrap(), "--stage", "report", "--out", out.path().to_str().unwrap()])
            .output()
            .unwrap();
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains("run the `prep` stage first"), "{}: {err}", p.display());
        n += 1;
    }
    assert!(n >= 3);
}
