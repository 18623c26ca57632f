use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use robust_contract_cli::export::parse_table;
use robust_contract_cli::RunConfig;

const BIN: &str = env!("CARGO_BIN_EXE_robust-contract");

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .env_remove("RCONTRACT_OUT_DIR")
        .output()
        .unwrap()
}

fn table(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    parse_table(&fs::read_to_string(path).unwrap()).unwrap()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (h, rows) = table(path);
    let i = h.iter().position(|c| c == name).unwrap();
    rows.iter().map(|r| r[i]).collect()
}

fn grid(t_steps: usize, nodes: usize, y_bound: f64) -> String {
    format!(
        "[grid]\nhorizon = {h}\nt_steps = {t_steps}\nx_nodes = {nodes}\ny_nodes = {nodes}\ny_bound = {y_bound}\n\
         a_nodes = 11\nn_nodes = 3\nz_nodes = 11\ngamma_nodes = 11\ncfl_safety = 1.0\nradius_cap = 4.0\n",
        h = if t_steps == 0 { 0.0 } else { 1.0 }
    )
}

const RN_MODEL: &str = "[model]\npreset = \"risk_neutral\"\neffort_max = 2.0\nnature = [0.5, 1.0]\ntruncation = 3.0\n";

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn verify_section(artifacts: &Path, shift: f64) -> String {
    format!(
        "[sim]\npaths = 8000\ndt = 0.125\nseed = 4\ngirsanov_mode = false\nnature = \"feedback\"\n\n\
         [verify]\nartifacts = \"{}\"\nperturbations = 8\nic_amplitude = [0.4, 0.6]\nic_vols = [0.5, 1.0]\n\
         baseline_shift = {shift}\nbias_budget = 0.02\nclosure_tol = 0.02\nmartingale_tol = 0.05\ncheckpoints = 4\n",
        artifacts.display()
    )
}

#[test]
fn martingale_agent_surface_is_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        "[model]\npreset = \"martingale\"\nnature = [0.2, 0.4]\ndiscount = 0.0\ntruncation = 3.0\n\n{}\n\
         [agent]\ncontract = \"linear:1,0\"\nx0 = 0.5\nreservation = 0.0\n",
        grid(20, 41, 1.0)
    );
    let cfg = write_cfg(tmp.path(), "m.toml", &cfg);
    let out = tmp.path().join("out");
    let o = run(&["solve-agent"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = table(&out.join("agent_surface.txt"));
    for r in rows.iter().filter(|r| r[0] == 0.0) {
        assert!((r[2] - r[1]).abs() < 1e-9, "{r:?}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["artifacts"]["agent_surface.txt"].is_string());
    assert!(RunConfig::parse(manifest["config"].as_str().unwrap()).is_ok());
}

#[test]
fn missing_contract_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{RN_MODEL}\n{}\n[agent]\nx0 = 0.0\nreservation = 0.0\n", grid(8, 21, 5.0));
    let cfg = write_cfg(tmp.path(), "c.toml", &cfg);
    let o = run(&["solve-agent"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("contract"));
    let cfg = format!("{RN_MODEL}\n{}", grid(8, 21, 5.0));
    let cfg = write_cfg(tmp.path(), "d.toml", &cfg);
    let o = run(&["solve-agent"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("agent.contract"));
}

#[test]
fn quadratic_agent_surface_is_bounded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        "[model]\npreset = \"quadratic_bounded\"\neffort_max = 1.0\nnature = [0.3, 0.5]\ntruncation = 3.0\n\
         utility_bound = 2.0\nrisk_aversion = 1.0\n\n{}\n[agent]\ncontract = \"linear:1,0\"\nx0 = 0.0\nreservation = 0.0\n",
        grid(40, 41, 2.0)
    );
    let cfg = write_cfg(tmp.path(), "q.toml", &cfg);
    let out = tmp.path().join("out");
    let o = run(&["solve-agent"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(column(&out.join("agent_surface.txt"), "value").iter().all(|v| v.abs() <= 2.0 + 1e-12));
}

#[test]
fn principal_value_and_participation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{RN_MODEL}\n{}\n[principal]\nx0 = 0.5\nreservation = 0.25\n", grid(8, 21, 5.0));
    let cfg = write_cfg(tmp.path(), "p.toml", &cfg);
    let out = tmp.path().join("out");
    let o = run(&["solve-principal"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = out.join("principal_summary.txt");
    // y is on a 0.5 grid, so the smallest feasible y0 is 0.5.
    assert_eq!(column(&s, "y0_star")[0], 0.5);
    assert!((column(&s, "value")[0] - (0.5 - 0.5 + 0.5)).abs() < 1e-9);

    let cfg = format!("{RN_MODEL}\n{}\n[principal]\nx0 = 0.0\nreservation = 6.0\n", grid(8, 21, 5.0));
    let cfg = write_cfg(tmp.path(), "r.toml", &cfg);
    let o = run(&["solve-principal"], &cfg, &tmp.path().join("r"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reservation"));

    let cfg = format!("{RN_MODEL}\n{}\n[principal]\nx0 = 0.0\nreservation = 0.0\n", grid(0, 21, 5.0));
    let cfg = write_cfg(tmp.path(), "z.toml", &cfg);
    let o = run(&["solve-principal"], &cfg, &tmp.path().join("z"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = column(&tmp.path().join("z/principal_surface.txt"), "t");
    assert_eq!(t.len(), 21 * 21);
    assert!(t.iter().all(|&v| v == 0.0));
}

#[test]
fn verify_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let solve = tmp.path().join("solve");
    let cfg = format!("{RN_MODEL}\n{}\n[principal]\nx0 = 0.0\nreservation = 0.0\n", grid(8, 21, 5.0));
    let cfg = write_cfg(tmp.path(), "p.toml", &cfg);
    assert!(run(&["solve-principal"], &cfg, &solve).status.success());

    let good = write_cfg(tmp.path(), "v.toml", &format!("{RN_MODEL}\n{}\n{}", grid(8, 21, 5.0), verify_section(&solve, 0.0)));
    let o = run(&["verify"], &good, &tmp.path().join("v"));
    let report = fs::read_to_string(tmp.path().join("v/verify_report.json")).unwrap();
    assert!(o.status.success(), "{report}");
    let r: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(r["all_pass"], true);
    assert_eq!(r["checks"].as_array().unwrap().len(), 8);

    let shifted = write_cfg(tmp.path(), "s.toml", &format!("{RN_MODEL}\n{}\n{}", grid(8, 21, 5.0), verify_section(&solve, 0.5)));
    let o = run(&["verify"], &shifted, &tmp.path().join("s"));
    assert_eq!(o.status.code(), Some(4));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("s/verify_report.json")).unwrap()).unwrap();
    let ic = r["checks"].as_array().unwrap().iter().find(|c| c["name"] == "incentive_compatibility").unwrap();
    assert_eq!(ic["pass"], false);
    assert!(!ic["measured"]["flagged"].as_array().unwrap().is_empty());

    let surface = solve.join("principal_surface.txt");
    let text = fs::read_to_string(&surface).unwrap();
    fs::write(&surface, text.replacen("e0", "e1", 1)).unwrap();
    let o = run(&["verify"], &good, &tmp.path().join("t"));
    assert_eq!(o.status.code(), Some(4));
    let r = fs::read_to_string(tmp.path().join("t/verify_report.json")).unwrap();
    assert!(r.contains("principal_surface.txt"));

    fs::remove_file(&surface).unwrap();
    let o = run(&["verify"], &good, &tmp.path().join("u"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{RN_MODEL}\n{}\n[principal]\nx0 = 0.0\nreservation = 0.0\n\n\
         [sim]\npaths = 500\ndt = 0.125\nseed = 9\ngirsanov_mode = false\nnature = \"feedback\"\n",
        grid(8, 21, 5.0)
    );
    let cfg = write_cfg(tmp.path(), "s.toml", &cfg);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&["simulate"], &cfg, &a).status.success());
    assert!(run(&["simulate", "--threads", "1"], &cfg, &b).status.success());
    for f in ["principal_surface.txt", "sim_terminal.txt", "sim_series.txt", "sim_summary.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = tmp.path().join("c");
    assert!(run(&["simulate", "--seed", "10"], &cfg, &c).status.success());
    assert_ne!(fs::read(a.join("sim_terminal.txt")).unwrap(), fs::read(c.join("sim_terminal.txt")).unwrap());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(c.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 10);
}

#[test]
fn salary_sweep_tends_to_utility_supremum() {
    let tmp = tempfile::tempdir().unwrap();
    let base = format!(
        "[model]\npreset = \"risk_neutral\"\neffort_max = 1.0\nnature = [0.2, 0.3]\ntruncation = 3.0\n\n{}\n\
         [sim]\npaths = 200\ndt = 0.125\nseed = 2\ngirsanov_mode = false\nnature = \"feedback\"\n\n\
         [sweep]\naxis = \"m_salary\"\nagent_beliefs = [0.2, 0.3]\nprincipal_beliefs = [0.5, 0.6]\nutility_principal = \"cara:1.0\"\n",
        grid(8, 21, 5.0)
    );
    let cfg = write_cfg(tmp.path(), "s.toml", &format!("{base}values = [1.0, 10.0, 100.0]\n"));
    let out = tmp.path().join("out");
    assert!(run(&["sweep"], &cfg, &out).status.success());
    let est = column(&out.join("sweep_summary.txt"), "estimate");
    for (e, m) in est.iter().zip([1.0f64, 10.0, 100.0]) {
        assert!((e - (1.0 - (-m).exp())).abs() < 1e-12);
    }
    assert!(out.join("point_002/demo.txt").exists());

    let empty = write_cfg(tmp.path(), "e.toml", &format!("{base}values = []\n"));
    let o = run(&["sweep"], &empty, &tmp.path().join("e"));
    assert!(o.status.success());
    assert!(table(&tmp.path().join("e/sweep_summary.txt")).1.is_empty());

    let overlap = write_cfg(tmp.path(), "o.toml", &format!("{}values = [1.0]\n", base.replace("[0.5, 0.6]", "[0.25, 0.6]")));
    assert!(!run(&["sweep"], &overlap, &tmp.path().join("o")).status.success());
}

#[test]
fn band_sweep_is_nonincreasing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "[model]\npreset = \"martingale\"\nnature = [0.2, 0.3]\ndiscount = 0.0\ntruncation = 3.0\n\n\
               [grid]\nhorizon = 1.0\nt_steps = 100\nx_nodes = 101\ny_nodes = 3\ny_bound = 1.0\na_nodes = 3\n\
               n_nodes = 11\nz_nodes = 3\ngamma_nodes = 3\ncfl_safety = 1.0\nradius_cap = 4.0\n\n\
               [sweep]\naxis = \"nature_hi\"\nvalues = [0.3, 0.4, 0.6, 0.8]\ncontract = \"call:0.0\"\nx0 = 0.0\n";
    for (name, contract) in [("convex", "call:0.0"), ("linear", "linear:1,0")] {
        let cfg = write_cfg(tmp.path(), &format!("{name}.toml"), &cfg.replace("call:0.0", contract));
        let out = tmp.path().join(name);
        assert!(run(&["sweep"], &cfg, &out).status.success());
        let v = column(&out.join("sweep_summary.txt"), "value");
        assert_eq!(v.len(), 4);
        assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{name}: {v:?}");
    }
}

#[test]
fn output_dir_precedence_and_required_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        "output_dir = \"from_config\"\n[model]\npreset = \"martingale\"\nnature = [0.2, 0.4]\ndiscount = 0.0\ntruncation = 3.0\n\n{}\n\
         [agent]\ncontract = \"linear:1,0\"\nx0 = 0.0\nreservation = 0.0\n",
        grid(10, 21, 1.0)
    );
    let cfg = write_cfg(tmp.path(), "m.toml", &cfg);
    let env_dir = tmp.path().join("from_env");
    let o = Command::new(BIN)
        .args(["solve-agent", "--config"])
        .arg(&cfg)
        .env("RCONTRACT_OUT_DIR", &env_dir)
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(env_dir.join("manifest.json").exists());
    let o = Command::new(BIN).args(["solve-agent", "--config"]).arg(&cfg).env_remove("RCONTRACT_OUT_DIR").current_dir(tmp.path()).output().unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("from_config/manifest.json").exists());
    let o = Command::new(BIN).arg("solve-agent").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sample_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let (cfg, _) = RunConfig::load(&path).unwrap();
        cfg.model.build().unwrap();
        cfg.grid.build(cfg.model.truncation()).unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        n += 1;
    }
    assert!(n >= 4);
}
