//! End-to-end runs of the `trapload` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use trapload::config::{parse_source_fragment, Preset, RunConfig};
use trapload::loading_model::{read_curve_csv, write_data_csv, DataPoint};
use trapload::species::SpeciesName;

fn trapload(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trapload")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value(report: &str, key: &str) -> f64 {
    let line = report.lines().find(|l| l.starts_with(&format!("{key} = "))).unwrap();
    line.split_whitespace().nth(2).unwrap().parse().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn geometry_reports_preset_values() {
    let o = trapload(&["--preset", "microfab", "geometry"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!((value(&text, "z0") / 4.947727e-5 - 1.0).abs() < 1e-6);
    assert!((value(&text, "z_esc") / 1.020482e-4 - 1.0).abs() < 1e-6);
    assert!(value(&text, "true_depth") < value(&text, "rf_depth"));

    let pcb = stdout(&trapload(&["--preset", "pcb", "geometry"]));
    assert!((value(&pcb, "z0") - 727.46e-6).abs() < 0.01e-6);
}

#[test]
fn geometry_writes_csv() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("geometry.csv");
    let o = trapload(&["--preset", "pcb", "geometry", "--out", path(&out)]);
    assert!(o.status.success());
    let csv = fs::read_to_string(out).unwrap();
    assert!(csv.starts_with("key,value,unit\n"));
    assert!(csv.contains("\nz0,"));
}

#[test]
fn missing_config_key_is_a_usage_error_naming_it() {
    let dir = TempDir::new().unwrap();
    let cfg = RunConfig::preset(Preset::Microfab, SpeciesName::Ba138).to_toml_string().unwrap();
    let broken: String = cfg.lines().filter(|l| !l.trim_start().starts_with("a_m")).map(|l| format!("{l}\n")).collect();
    assert_ne!(broken, cfg);
    let file = dir.path().join("trap.toml");
    fs::write(&file, broken).unwrap();
    let o = trapload(&["--config", path(&file), "geometry"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("a_m"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(trapload(&["geometry"]).status.code(), Some(2));
    assert_eq!(trapload(&["--preset", "ring", "geometry"]).status.code(), Some(2));
    assert_eq!(trapload(&["--preset", "pcb", "--species", "ca40", "geometry"]).status.code(), Some(2));
    assert_eq!(trapload(&["--preset", "pcb", "sweep", "--vrf-list", ""]).status.code(), Some(2));
    assert_eq!(trapload(&["--preset", "pcb", "--grid-spacing", "-1", "geometry"]).status.code(), Some(2));
    assert_eq!(trapload(&["--preset", "pcb", "frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_input_file_is_an_io_error() {
    let o = trapload(&["--preset", "microfab", "tof", "--data", "/nonexistent/hist.csv"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn volumes_nest_and_are_written() {
    let dir = TempDir::new().unwrap();
    let o = trapload(&[
        "--preset", "microfab", "--grid-spacing", "1e-6", "volumes", "--vrf-list", "100,150", "--speed", "150",
        "--out", path(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let areas = fs::read_to_string(dir.path().join("areas.csv")).unwrap();
    let mut lines = areas.lines();
    assert_eq!(lines.next(), Some("v_rf_V,ke_eV,stage,area_m2"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 8);
    for chunk in rows.chunks(4) {
        let stages: Vec<&str> = chunk.iter().map(|r| r[2].as_str()).collect();
        assert_eq!(stages, ["bare", "ke", "ke_pi", "ke_pi_mm"]);
        let a: Vec<f64> = chunk.iter().map(|r| r[3].parse().unwrap()).collect();
        assert!(a[0] >= a[1] && a[1] >= a[2] && a[2] >= a[3] && a[3] > 0.0, "{a:?}");
    }
    for stem in ["bare_100V", "ke_pi_mm_150V"] {
        assert!(fs::read_to_string(dir.path().join(format!("{stem}.pbm"))).unwrap().starts_with("P1"));
        assert!(fs::read_to_string(dir.path().join(format!("{stem}.csv"))).unwrap().starts_with("x_m,z_m"));
    }
}

#[test]
fn sweep_with_data_recovers_the_scale() {
    let dir = TempDir::new().unwrap();
    let base = ["--preset", "microfab", "--grid-spacing", "1e-6", "sweep", "--vrf-list", "70,90,110,130,150", "--no-band"];
    let curve_path = dir.path().join("curve.csv");
    let mut args = base.to_vec();
    args.extend(["--out", path(&curve_path)]);
    let o = trapload(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_curve_csv(fs::File::open(&curve_path).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);

    let truth = 3.5e-12;
    let data: Vec<DataPoint> = rows
        .iter()
        .filter(|r| r.p_smoothed > 0.0)
        .map(|r| DataPoint { depth_ev: r.depth_ev, rate: truth * r.p_smoothed, sigma: 0.1 * truth * r.p_smoothed })
        .collect();
    assert!(data.len() >= 3);
    let data_path = dir.path().join("data.csv");
    write_data_csv(fs::File::create(&data_path).unwrap(), &data).unwrap();

    let scaled_path = dir.path().join("scaled.csv");
    let mut args = base.to_vec();
    args.extend(["--data", path(&data_path), "--out", path(&scaled_path)]);
    let o = trapload(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let scale: f64 = stderr(&o).trim().strip_prefix("scale = ").unwrap().parse().unwrap();
    assert!((scale / truth - 1.0).abs() < 1e-5, "{scale}");
    let scaled = read_curve_csv(fs::File::open(&scaled_path).unwrap()).unwrap();
    assert!(scaled.iter().all(|r| r.p_scaled.is_some()));
}

#[test]
fn sweep_band_brackets_the_raw_curve() {
    let o = trapload(&["--preset", "microfab", "--grid-spacing", "1.5e-6", "sweep", "--vrf-list", "80,120"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_curve_csv(o.stdout.as_slice()).unwrap();
    for r in rows {
        assert!(r.band_lo <= r.p_raw && r.p_raw <= r.band_hi, "{r:?}");
    }
}

#[test]
fn tof_forward_then_fit_round_trips() {
    let dir = TempDir::new().unwrap();
    let hist = dir.path().join("hist.csv");
    let o = trapload(&["--preset", "microfab", "tof", "--out", path(&hist)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(&hist).unwrap().starts_with("time_s,counts"));

    // start the fit away from the generating source
    let mut cfg = RunConfig::preset(Preset::Microfab, SpeciesName::Ba138);
    cfg.source.temperature = 600.0;
    cfg.source.v0 = 80.0;
    let cfg_path = dir.path().join("start.toml");
    fs::write(&cfg_path, cfg.to_toml_string().unwrap()).unwrap();
    let frag = dir.path().join("source.toml");
    let o = trapload(&["--config", path(&cfg_path), "tof", "--data", path(&hist), "--out", path(&frag)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let src = parse_source_fragment(&fs::read_to_string(&frag).unwrap()).unwrap();
    assert!((src.temperature / 1500.0 - 1.0).abs() < 0.01, "{src:?}");
    assert!((src.v0 / 40.0 - 1.0).abs() < 0.01, "{src:?}");
}

#[test]
fn noisy_forward_output_depends_only_on_the_seed() {
    let run = |seed: &str| stdout(&trapload(&["--preset", "microfab", "--seed", seed, "tof", "--noise", "0.05"]));
    assert_eq!(run("7"), run("7"));
    assert_ne!(run("7"), run("8"));
}

#[test]
fn reports_are_bit_stable() {
    let args = ["--preset", "microfab", "--grid-spacing", "1.5e-6", "sweep", "--vrf-list", "80,120,160"];
    let a = trapload(&args);
    let b = trapload(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout(&trapload(&["--preset", "pcb", "analytic"])), stdout(&trapload(&["--preset", "pcb", "analytic"])));
}

#[test]
fn analytic_reports_both_optima() {
    let o = trapload(&["--preset", "pcb", "analytic"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!((value(&text, "e_opt_compact") - 0.083).abs() < 0.001);
    assert!(value(&text, "e_opt_large") > 0.0);
}
