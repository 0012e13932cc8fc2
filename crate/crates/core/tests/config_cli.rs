mod common;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;

use nanotrap::config::Scenario;
use nanotrap::dynamics::{Anchor, MotionMode};
use nanotrap::io::read_series;
use nanotrap::{Error, ErrorKind};

use common::{defaults, defaults_path, rel, repo_root};

fn defaults_text() -> String {
    std::fs::read_to_string(defaults_path())
        .unwrap()
        .replace("\"../data/rb87.toml\"", &format!("{:?}", repo_root().join("data/rb87.toml")))
        .replace("output = \"../out\"\n", "")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

/// Default parameters with a short run so the binary finishes quickly.
fn small_config(dir: &Path) -> PathBuf {
    let text = defaults_text().replace("atoms = 500", "atoms = 12").replace("duration = \"200 us\"", "duration = \"20 us\"");
    write_config(dir, &text)
}

fn nanotrap(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nanotrap")).args(args).output().unwrap()
}

#[test]
fn default_config_resolves_to_si() {
    let s = defaults();
    let t = &s.trap;
    assert!(rel(t.fiber.radius, 235e-9) < 1e-12);
    let blue = t.beams.iter().find(|b| b.label == "blue").unwrap();
    assert!(rel(blue.power, 3e-3) < 1e-12 && rel(blue.wavelength, 750e-9) < 1e-12);
    assert!(rel(blue.pol_angle, PI / 2.0) < 1e-12);
    let probe = t.beams.iter().find(|b| b.label == "probe").unwrap();
    assert!(rel(probe.power, 70e-9) < 1e-12);
    assert!(rel(probe.detuning.unwrap(), 2.0 * PI * 200e6) < 1e-12);
    assert_eq!(s.simulation.mode, MotionMode::RadialOnly);
    assert_eq!(s.simulation.distribution.anchor, Anchor::WithProbeRadius);
    assert!(rel(s.simulation.distribution.center_offset, -80e-9) < 1e-12);
    assert!(rel(s.simulation.dt, 2e-9) < 1e-12);
    assert_eq!(s.simulation.pulses.len(), 4);
    assert!(rel(s.analysis.moving_average, 400e-9) < 1e-12);
    assert_eq!(s.seed, 20160401);
}

#[test]
fn bare_numbers_and_wrong_units_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for (from, to) in [
        ("power = \"3 mW\"", "power = 3"),
        ("power = \"3 mW\"", "power = \"3 nm\""),
        ("radius = \"235 nm\"", "radius = \"235 furlong\""),
    ] {
        let p = write_config(dir.path(), &defaults_text().replace(from, to));
        let err = Scenario::<f64>::load(&p).unwrap_err();
        assert_eq!(err.kind(), ErrorKind::Validation, "{to}: {err}");
    }
}

#[test]
fn digest_tracks_content_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = Scenario::<f64>::load(&write_config(dir.path(), &defaults_text())).unwrap();
    let mut b = a.clone();
    assert_eq!(a.digest(), b.digest());
    b.set_seed(1);
    assert_ne!(a.digest(), b.digest());
    let c = Scenario::<f64>::load(&write_config(dir.path(), &defaults_text().replace("\"70 nW\"", "\"60 nW\""))).unwrap();
    assert_ne!(a.digest(), c.digest());
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let bad = write_config(dir.path(), &defaults_text().replace("power = \"3 mW\"", "power = 3"));
    assert_eq!(nanotrap(&["--config", bad.to_str().unwrap(), "--out", out, "modes"]).status.code(), Some(1));

    let thick = write_config(dir.path(), &defaults_text().replace("radius = \"235 nm\"", "radius = \"600 nm\""));
    let r = nanotrap(&["--config", thick.to_str().unwrap(), "--out", out, "modes"]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));

    let missing = dir.path().join("nope.toml");
    assert_eq!(nanotrap(&["--config", missing.to_str().unwrap(), "modes"]).status.code(), Some(3));
    assert!(matches!(Scenario::<f64>::load(&missing), Err(Error::Io { .. })));
}

#[test]
fn simulate_and_analyze_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |tag: &str| {
        let out = dir.path().join(tag);
        let args = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        let r = nanotrap(&[&args[..], &["simulate", "--binary"]].concat());
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let r = nanotrap(&[&args[..], &["analyze"]].concat());
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["signal.csv", "signal.bin", "spectrum.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    // peaks.json records its input path, which names the run directory
    let peaks = |d: &Path| std::fs::read_to_string(d.join("peaks.json")).unwrap().replace(d.to_str().unwrap(), "");
    assert_eq!(peaks(&a), peaks(&b));
    let csv = std::fs::read_to_string(a.join("signal.csv")).unwrap();
    let head: Vec<&str> = csv.lines().take(4).collect();
    assert!(head[0].starts_with("# artifact: nanotrap"));
    assert!(head[1].starts_with("# config_digest: "));
    assert_eq!(head[2], "# seed: 20160401");
    assert!(head[3].starts_with("t_s,"));

    let from_csv = read_series::<f64>(&a.join("signal.csv")).unwrap();
    let from_bin = read_series::<f64>(&a.join("signal.bin")).unwrap();
    assert_eq!(from_csv.len(), from_bin.len());
    for (x, y) in from_csv.values.iter().zip(&from_bin.values) {
        assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-300), "{x} {y}");
    }

    let other = dir.path().join("c");
    let r = nanotrap(&["--config", cfg.to_str().unwrap(), "--out", other.to_str().unwrap(), "--seed", "5", "simulate"]);
    assert!(r.status.success());
    assert_ne!(std::fs::read(a.join("signal.csv")).unwrap(), std::fs::read(other.join("signal.csv")).unwrap());
}

#[test]
fn potential_writes_both_variants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("pot");
    let r = nanotrap(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "potential"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["potential_on.csv", "potential_off.csv", "trap_report_on.json", "trap_report_off.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("trap_report_off.json")).unwrap()).unwrap();
    assert!(report.to_string().contains("nanotrap.trap-report/1"));
}
