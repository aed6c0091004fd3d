//! End-to-end runs of the `mcbf` binary.

use std::path::Path;
use std::process::{Command, Output};

use mcbf::experiment::{read_precoders, realization_channel, Table};
use mcbf::model::{all_sinr, min_weighted_sinr, reference_channel, GroupPartition, ProblemInstance};

fn mcbf(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mcbf"));
    cmd.args(args);
    for key in ["MCBF_CONFIG", "MCBF_EXPERIMENT", "MCBF_SEED", "MCBF_RANDOMIZATIONS", "MCBF_OUT", "MCBF_QUIET"] {
        cmd.env_remove(key);
    }
    cmd.envs(envs.iter().copied());
    cmd.output().expect("binary runs")
}

fn read_table(path: &Path) -> Table {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    Table { name: path.file_stem().unwrap().to_string_lossy().into(), header, rows }
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn paradigm_rates_are_recomputable_from_precoders() {
    let dir = tempfile::tempdir().unwrap();
    let out = mcbf(&["--experiment", "fig6_modulation_paradigm", "--out", dir.path().to_str().unwrap(), "--quiet"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());

    let rates = read_table(&dir.path().join("fig6_user_rate.csv"));
    let prec = read_table(&dir.path().join("fig6_precoders.csv"));
    let ch = reference_channel("paradigm_2x4").unwrap();
    for row in rates.rows.iter().filter(|r| r[1] == "rate") {
        let weights: Vec<f64> = row[0].split('/').map(|x| x.parse().unwrap()).collect();
        let inst = ProblemInstance::new(
            ch.clone(),
            GroupPartition::contiguous(4, 2).unwrap(),
            weights,
            vec![1.0, 1.0],
            vec![1.0; 4],
        )
        .unwrap();
        let w = read_precoders(&prec, &[row[0].as_str()], "pac").unwrap();
        for (i, s) in all_sinr(&w, &inst).unwrap().iter().enumerate() {
            let emitted: f64 = row[2 + i].parse().unwrap();
            assert!((emitted - (1.0 + s).log2()).abs() <= 1e-9);
        }
    }
}

#[test]
fn sweep_levels_are_recomputable_from_precoders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.cfg");
    std::fs::write(&cfg, "experiment = fig1_power_sweep\nrealizations = 2\npower_dbw = 0, 10\nn_rand = 20\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = mcbf(&["--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", "5"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let real = read_table(&out_dir.join("fig1_realizations.csv"));
    let prec = read_table(&out_dir.join("fig1_precoders.csv"));
    assert_eq!(real.rows.len(), 4);
    for row in &real.rows {
        let r: usize = row[1].parse().unwrap();
        let p_tot = 10f64.powf(row[0].parse::<f64>().unwrap() / 10.0);
        let inst =
            ProblemInstance::equal_split(realization_channel(5, r, 5, 4), GroupPartition::contiguous(4, 2).unwrap(), p_tot)
                .unwrap();
        for (scheme, col) in [("pac", "pac_t"), ("spc", "spc_t"), ("spc_rescaled", "spc_rescaled_t")] {
            let w = read_precoders(&prec, &[row[0].as_str(), row[1].as_str()], scheme).unwrap();
            let emitted: f64 = row[real.column(col).unwrap()].parse().unwrap();
            let t = min_weighted_sinr(&w, &inst).unwrap();
            assert!((emitted - t).abs() <= 1e-9 * t.max(1.0), "{scheme}: {emitted} vs {t}");
        }
    }
}

#[test]
fn config_errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "experiment = fig1_power_sweep\n# comment\nnt = many\n").unwrap();
    let out = mcbf(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let line = String::from_utf8_lossy(&out.stderr);
    let err: serde_json::Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
    assert_eq!(err["error"], "config");
    assert_eq!(err["line"], 3);
    assert_eq!(err["field"], "nt");

    let out = mcbf(&["--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));

    let out = mcbf(&["--experiment", "fig99"], &[]);
    assert!(!out.status.success());
}

#[test]
fn environment_overrides_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("a");
    let out = mcbf(
        &["--quiet"],
        &[
            ("MCBF_EXPERIMENT", "fig6_modulation_paradigm"),
            ("MCBF_SEED", "3"),
            ("MCBF_RANDOMIZATIONS", "7"),
            ("MCBF_OUT", out_dir.to_str().unwrap()),
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out_dir);
    assert_eq!(s["seed"], 3);
    assert_eq!(s["n_rand"], 7);

    let out_dir = dir.path().join("b");
    let out = mcbf(
        &["--seed", "4", "--out", out_dir.to_str().unwrap(), "--quiet"],
        &[("MCBF_EXPERIMENT", "fig6_modulation_paradigm"), ("MCBF_SEED", "3")],
    );
    assert!(out.status.success());
    assert_eq!(summary(&out_dir)["seed"], 4);
}

#[test]
fn single_antenna_instance_has_closed_form_level() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("h.csv"), "# one antenna, one user\n0.6,0.8\n").unwrap();
    let cfg = dir.path().join("solve.cfg");
    std::fs::write(
        &cfg,
        format!(
            "experiment = solve_instance\nchannel_file = {}\ngroups = 1\npac_w = 2.5\nnoise = 0.5\n",
            dir.path().join("h.csv").display()
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = mcbf(&["--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--quiet"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // t = P |h|² / σ² = 2.5 · 1 / 0.5
    let t = summary(&out_dir)["metrics"]["t"].as_f64().unwrap();
    assert!((t - 5.0).abs() <= 1e-9 * 5.0);
    let users = read_table(&out_dir.join("solution_users.csv"));
    let sinr: f64 = users.rows[0][users.column("sinr").unwrap()].parse().unwrap();
    assert!((sinr - 5.0).abs() <= 1e-9 * 5.0);
    let ant = read_table(&out_dir.join("solution_antennas.csv"));
    let util: f64 = ant.rows[0][ant.column("utilization").unwrap()].parse().unwrap();
    assert!((util - 1.0).abs() <= 1e-12);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "experiment = fig2_users_per_group\nrealizations = 2\nrho = 1,3\nn_rand = 15\n").unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = mcbf(&["--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--quiet"], &[]);
        assert!(out.status.success());
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    let mut files: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert!(files.len() >= 5);
    for f in files {
        assert_eq!(std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap(), "{f:?} differs");
    }
}
