use std::fs;
use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"{
  "physical": {"rho_out": 1.0, "rho_in": 1e-4, "kappa_out": 1.0, "kappa_in": 1e-4},
  "geometry": {"uniform": {"n": 2, "length": 2.0, "gap": 10.0, "origin": 0.0}},
  "modulation": {"omega": 0.03, "entries": [{"eps": EPS, "phi": 3.141592653589793}, {"eps": EPS, "phi": 1.5707963267948966}]},
  "truncation": {"K": 4, "M": 1},
  "incident": {"direction": "left", "theta1": 1.0, "omega": 0.004}
}"#;

fn write_config(dir: &Path, eps: f64) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, CONFIG.replace("EPS", &eps.to_string())).unwrap();
    path
}

fn tmres(args: &[&str], config: &Path, out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_tmres"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(2).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn csv_output_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.4);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = tmres(&["energy", "--axis", "eps", "--grid", "0:0.6:4"], &cfg, out);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let o = tmres(&["quasifreq", "--axis", "eps", "--grid", "0:0.6:3"], &cfg, out);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["energy.csv", "quasifreq.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn every_csv_has_hash_line_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.2);
    let out = dir.path().join("out");
    for args in [&["quasifreq"][..], &["energy"], &["scatter", "--grid", "-10:40:6"], &["converge", "--k", "1,2"]] {
        let o = tmres(args, &cfg, &out);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let mut listed = Vec::new();
    for entry in fs::read_dir(&out).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if name.ends_with(".manifest.json") {
            let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
            assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
            for o in m["outputs"].as_array().unwrap() {
                listed.push(Path::new(o.as_str().unwrap()).file_name().unwrap().to_string_lossy().to_string());
            }
        } else if name.ends_with(".csv") {
            let text = fs::read_to_string(&path).unwrap();
            let mut lines = text.lines();
            assert!(lines.next().unwrap().starts_with("# config_hash="), "{name}");
            assert!(lines.next().unwrap().split(',').all(|c| !c.is_empty()), "{name}");
        }
    }
    let mut data: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .filter(|n| !n.ends_with(".manifest.json"))
        .collect();
    data.sort();
    listed.sort();
    assert_eq!(data, listed, "each data file belongs to exactly one manifest");
}

#[test]
fn static_scatter_conserves_energy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.0);
    let out = dir.path().join("out");
    let o = tmres(&["scatter", "--grid", "0:10:3"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("scatter.json")).unwrap()).unwrap();
    assert!((doc["energy"].as_f64().unwrap() - 1.0).abs() < 1e-8);
    assert_eq!(doc["regime"], "conserve");
}

#[test]
fn pole_pencil_columns_near_a_pole() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.3);
    let out = dir.path().join("out");
    let o = tmres(&["quasifreq", "--method", "detroot"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0));
    let rows = data_rows(&fs::read_to_string(out.join("quasifreq.csv")).unwrap());
    let (re, im) = rows
        .iter()
        .map(|r| (r[4].parse::<f64>().unwrap(), r[5].parse::<f64>().unwrap()))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    let omega = format!("{}{:+}i", re + 10.0 * 1e-4, im);
    let o = tmres(&["scatter", "--pole-pencil", "--omega", &omega, "--grid", "-10:40:6"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("field.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().ends_with("re_usc_pencil,im_usc_pencil,rel_diff"));
    for r in data_rows(&text) {
        assert!(r[8].parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn converge_is_k_independent_without_modulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.0);
    let out = dir.path().join("out");
    let o = tmres(&["converge", "--k", "1,2,4"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0));
    let rows = data_rows(&fs::read_to_string(out.join("converge.csv")).unwrap());
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        for c in &r[9..12] {
            assert!(c.parse::<f64>().unwrap() < 1e-10, "{r:?}");
        }
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"physical\": 1}").unwrap();
    assert_eq!(tmres(&["energy"], &bad, &out).status.code(), Some(1));
    assert_eq!(tmres(&["energy"], &dir.path().join("missing.json"), &out).status.code(), Some(1));

    let cfg = write_config(dir.path(), 0.3);
    assert_eq!(tmres(&["converge", "--k", "4,2"], &cfg, &out).status.code(), Some(1));
    assert_eq!(tmres(&["converge", "--k", "0"], &cfg, &out).status.code(), Some(1));
    assert_eq!(tmres(&["energy", "--axis", "eps"], &cfg, &out).status.code(), Some(1));
    assert_eq!(tmres(&["quasifreq", "--method", "closed"], &cfg, &out).status.code(), Some(1));
    assert_eq!(tmres(&["bogus"], &cfg, &out).status.code(), Some(1));

    let o = Command::new(env!("CARGO_BIN_EXE_tmres"))
        .args(["energy", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env("TMRES_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));

    // amplitude above one is rejected when the sweep is validated
    assert_eq!(tmres(&["energy", "--axis", "eps", "--grid", "0.5:1.5:3"], &cfg, &out).status.code(), Some(1));
}

#[test]
fn singular_solve_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 0.0);
    let out = dir.path().join("out");
    let o = tmres(&["scatter", "--omega", "0", "--grid", "0:1:2"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
