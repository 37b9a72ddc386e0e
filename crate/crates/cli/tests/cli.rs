use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swqkd"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn calibrate_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.cfg");
    let b = dir.path().join("b.cfg");
    ok(bin().args(["calibrate", "--out"]).arg(&a).output().unwrap());
    ok(bin().args(["calibrate", "--out"]).arg(&b).output().unwrap());
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert!(text.contains("raman_coefficient = "));
}

#[test]
fn sweep_writes_csvs_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str| {
        ok(bin()
            .args(["--seed", seed, "sweep", "--scenario"])
            .arg(scenarios().join("single-mode_C-band.toml"))
            .args(["--ob", "0:3:0.5", "--mc", "--duration", "1", "--reference-clock", "--out"])
            .arg(dir.path())
            .output()
            .unwrap());
        (
            fs::read_to_string(dir.path().join("single-mode_C-band_analytic.csv")).unwrap(),
            fs::read_to_string(dir.path().join("single-mode_C-band_mc.csv")).unwrap(),
        )
    };
    let (analytic, mc) = run("4");
    let lines: Vec<&str> = analytic.lines().collect();
    assert_eq!(lines[0], "ob_db,signal_cps,noise_cps,sifted_kbps,qber,secret_fraction");
    assert_eq!(lines.len(), 1 + 7);
    let mc_lines: Vec<&str> = mc.lines().collect();
    assert_eq!(mc_lines[0], "scenario,ob_db,basis,sifted_bits,errors,qber,raw_kbps,secret_fraction");
    assert_eq!(mc_lines.len(), 1 + 7 * 2);
    assert!(mc_lines[1].starts_with("single-mode_C-band,0.0,AD,"));
    assert!(!analytic.contains('\r') && !mc.contains('\r'));
    let svg = fs::read_to_string(dir.path().join("single-mode_C-band_sweep.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));

    assert_eq!(run("4"), (analytic.clone(), mc.clone()));
    assert_ne!(run("5").1, mc);
}

#[test]
fn spectrum_csv_layout() {
    let out = ok(bin().args(["spectrum", "--tap", "γ"]).output().unwrap());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.contains('\r'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "wavelength_nm,psd_dbm_per_nm");
    assert_eq!(lines.len(), 1 + 1101);
    assert!(lines[1].starts_with("600.0,"));
}

#[test]
fn ber_table() {
    let out = ok(bin().args(["ber", "--rop", "-12:-10:1"]).output().unwrap());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("rop_dbm,ber,fec_pass"));
    assert!(text.contains("-10.0,") && text.lines().last().unwrap().ends_with("true"));
}

#[test]
fn framed_stream_from_stdin() {
    let scenario = scenarios().join("few-mode_shortwave.toml");
    let sim = ok(bin()
        .args(["simulate", "--scenario"])
        .arg(&scenario)
        .args(["--duration", "1.5", "--framed", "--out", "-"])
        .output()
        .unwrap());
    assert_eq!(&sim.stdout[..4], b"QTT1");
    let mut child = bin()
        .args(["process", "--scenario"])
        .arg(&scenario)
        .args(["--input", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&sim.stdout).unwrap();
    let out = ok(child.wait_with_output().unwrap());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sync offset 4900000 ps"), "{text}");
    assert!(text.contains("lock true"));
}

#[test]
fn stability_writes_time_series() {
    let dir = tempfile::tempdir().unwrap();
    ok(bin()
        .args(["stability", "--scenario"])
        .arg(scenarios().join("single-mode_shortwave.toml"))
        .args(["--duration", "30", "--interval", "10", "--out"])
        .arg(dir.path())
        .output()
        .unwrap());
    let text = fs::read_to_string(dir.path().join("single-mode_shortwave_stability.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 3);
    assert!(text.starts_with("t_start_s,t_end_s,ad_kbps,rl_kbps,"));
}

#[test]
fn forbidden_combination_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "layout = \"single_mode_shortwave\"\ncoexistence = true\n").unwrap();
    let out = bin().args(["sweep", "--scenario"]).arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("coexistence"));
}

#[test]
fn unknown_scenario_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    fs::write(&path, "layout = \"few_mode_shortwave\"\ncoexistance = true\n").unwrap();
    let out = bin().args(["sweep", "--scenario"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("coexistance"));
}
