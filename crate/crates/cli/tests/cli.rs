use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ada_cli::config::LoadedConfig;
use ada_cli::run::{cmd_run, run_variant, Context, Overrides, ResumeFrom, Variant};
use ada_cli::trace::{column_names, format_row, header_block, read_trace, Meta};
use ada_core::kernel::ChainRecord;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

const ADA: &str = env!("CARGO_BIN_EXE_ada");

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Relative paths and contents of every file under `dir`, timing excluded.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timing.txt" {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const MINIMAL: &str = "seed = 11\niterations = 100\n[problem]\nkind = \"analytic\"\n[sampler]\nkernel = \"mh\"\n";

#[test]
fn minimal_run_is_fast_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.toml", MINIMAL);
    let out = dir.path().join("out");
    let t = Instant::now();
    let st = Command::new(ADA).args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(st.success());
    assert!(t.elapsed().as_secs_f64() < 1.0, "{:?}", t.elapsed());
    for f in ["chain_0.csv", "checkpoint_0.json", "summary_0.txt", "summary.csv", "timing.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let trace = read_trace(&out.join("chain_0.csv")).unwrap();
    assert_eq!(trace.records.len(), 100);
    assert!(trace.records.iter().all(|r| r.acc2.is_none()));
    assert_eq!(trace.meta["config_hash"].len(), 64);
    for f in ["summary_0.txt", "summary.csv", "timing.txt"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert!(text.starts_with("# ada-cli ") && text.contains("config_hash="), "{f}");
    }
}

#[test]
fn same_seed_gives_identical_bytes_and_seed_flag_changes_them() {
    let dir = tempfile::tempdir().unwrap();
    let text = "seed = 4\niterations = 1500\nchains = 2\ncheckpoint_interval = 400\n[problem]\nkind = \"analytic\"\n[sampler]\nkernel = \"ada\"\nscheme = \"approx3\"\n";
    let cfg = write_config(dir.path(), "a.toml", text);
    let run = |out: &str, extra: &[&str]| {
        let st = Command::new(ADA)
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(out))
            .args(extra)
            .status()
            .unwrap();
        assert!(st.success());
        snapshot(&dir.path().join(out))
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    assert_eq!(a, b);
    let c = run("c", &["--seed", "5"]);
    assert_ne!(a, c);
}

#[test]
fn invalid_combination_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = "iterations = 10\n[problem]\nkind = \"analytic\"\n[sampler]\nkernel = \"mh\"\nscheme = \"approx5\"\n";
    let cfg = write_config(dir.path(), "bad.toml", text);
    let o = Command::new(ADA).args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:6") && err.contains("requires kernel 'ada'"), "{err}");

    let typo = write_config(dir.path(), "typo.toml", "iterations = 10\nseeed = 3\n[problem]\nkind = \"analytic\"\n");
    let o = Command::new(ADA).args(["run", "--config"]).arg(&typo).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeed"));
}

/// A run interrupted at a checkpoint and resumed produces the same files as
/// an uninterrupted run.
#[test]
fn resumed_runs_match_uninterrupted_runs_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("ada", "seed = 9\niterations = 3000\nchains = 2\ncheckpoint_interval = 700\n[problem]\nkind = \"analytic\"\n[sampler]\nkernel = \"ada\"\nscheme = \"approx5\"\n"),
        ("toy", "seed = 9\niterations = 3000\ncheckpoint_interval = 700\n[problem]\nkind = \"discrete-toy\"\n[sampler]\nkernel = \"da\"\nscheme = \"approx1\"\n"),
    ] {
        let loaded = LoadedConfig::parse(text, "mem.toml").unwrap();
        let full_dir = dir.path().join(format!("{name}_full"));
        let part_dir = dir.path().join(format!("{name}_part"));
        let ctx = Context::new(loaded.clone(), &Overrides { out: Some(full_dir.clone()), ..Default::default() }).unwrap();
        cmd_run(&ctx, None).unwrap();

        // same configuration hash, stopped early at a checkpoint boundary
        let mut short = Context::new(loaded, &Overrides { out: Some(part_dir.clone()), ..Default::default() }).unwrap();
        short.hash = ctx.hash.clone();
        short.cfg.config.iterations = toml::Spanned::new(0..0, 1400);
        let v = Variant {
            kernel: short.resolved.kernel,
            scheme: short.resolved.scheme,
            dir: part_dir.clone(),
        };
        run_variant(&short, &v, &ResumeFrom::None).unwrap();
        // leave rows past the checkpoint behind, as a crash would
        let trace = part_dir.join("chain_0.csv");
        let mut t = fs::read_to_string(&trace).unwrap();
        t += "1401,garbage\n";
        fs::write(&trace, t).unwrap();

        cmd_run(&ctx, Some(&part_dir)).unwrap();
        assert_eq!(snapshot(&full_dir), snapshot(&part_dir), "{name}");
    }
}

#[test]
fn resume_flag_continues_a_single_chain_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.toml", "seed = 2\niterations = 500\n[problem]\nkind = \"analytic\"\n[sampler]\nkernel = \"da\"\nscheme = \"approx1\"\n");
    let out = dir.path().join("o");
    let run = |extra: &[&str]| Command::new(ADA).args(["run", "--config"]).arg(&cfg).args(extra).output().unwrap();
    assert!(run(&["--out", out.to_str().unwrap()]).status.success());
    let before = snapshot(&out);
    let cp = out.join("checkpoint_0.json");
    assert!(run(&["--resume", cp.to_str().unwrap()]).status.success());
    assert_eq!(before, snapshot(&out));
    // a different seed is a different configuration
    let o = run(&["--resume", cp.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn diagnose_round_trips_and_histograms_sum_to_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.toml", "seed = 1\niterations = 800\n[problem]\nkind = \"analytic\"\n[sampler]\nkernel = \"ada\"\nscheme = \"approx1\"\n");
    let out = dir.path().join("o");
    assert!(Command::new(ADA).args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap().success());
    let tables = dir.path().join("t");
    let o = Command::new(ADA)
        .arg("diagnose")
        .arg(out.join("chain_0.csv"))
        .args(["--burn-in", "200", "--bins", "17", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&tables)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = String::from_utf8_lossy(&o.stdout);
    assert!(report.contains("800 rows, 600 after burn-in"), "{report}");
    assert!(report.contains("stage-two rate"), "{report}");
    for col in ["x_1", "x_2", "log_post"] {
        let h = read_plain_csv(&tables.join(format!("chain_0_hist_{col}.csv")));
        assert_eq!(h.len(), 17);
        assert_eq!(h.iter().map(|r| r[2] as u64).sum::<u64>(), 600);
    }
    let rm = read_plain_csv(&tables.join("chain_0_running_mean.csv"));
    assert_eq!(rm.last().unwrap()[0], 600.0);

    // rows survive a write/read cycle unchanged
    let t = read_trace(&out.join("chain_0.csv")).unwrap();
    let meta = t.meta.clone();
    let mut text = header_block(&meta) + &column_names(t.dim, t.groups).join(",") + "\n";
    for r in &t.records {
        text += &format_row(r);
    }
    assert_eq!(text, fs::read_to_string(out.join("chain_0.csv")).unwrap());
}

fn read_plain_csv(p: &Path) -> Vec<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(p).unwrap();
    r.records()
        .map(|row| row.unwrap().iter().map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

#[test]
fn diagnose_recovers_the_ar1_autocorrelation_time() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ar1.csv");
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(77);
    let rho: f64 = 0.9;
    let mut v = 0.0;
    let meta: Meta = [("source".to_string(), "ar1".to_string())].into();
    let mut text = header_block(&meta) + &column_names(1, 0).join(",") + "\n";
    for i in 1..=400_000u64 {
        v = rho * v + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
        text += &format_row(&ChainRecord {
            iteration: i,
            x: vec![v],
            log_post: -0.5 * v * v,
            log_like: 0.0,
            acc1: 1,
            acc2: None,
            attempts: 1,
            n_fine: i + 1,
            n_coarse: 0,
            sigma: vec![],
        });
    }
    fs::write(&path, text).unwrap();
    let tables = dir.path().join("t");
    let o = Command::new(ADA).arg("diagnose").arg(&path).arg("--out").arg(&tables).output().unwrap();
    assert!(o.status.success());
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(tables.join("ar1_columns.csv")).unwrap();
    let row = r.records().map(|r| r.unwrap()).find(|r| &r[0] == "x_1").unwrap();
    let tau: f64 = row[3].parse().unwrap();
    let want = (1.0 + rho) / (1.0 - rho);
    assert!((tau - want).abs() < 0.1 * want, "tau {tau}");
}

#[test]
fn degenerate_benchmark_accepts_every_promoted_proposal() {
    let dir = tempfile::tempdir().unwrap();
    let text = "seed = 6\niterations = 2000\n[problem]\nkind = \"analytic\"\n[problem.analytic]\nepsilon = 0.0\n[sampler]\nprior_aem_samples = 50\n";
    let cfg = write_config(dir.path(), "deg.toml", text);
    let out = dir.path().join("b");
    let o = Command::new(ADA).args(["benchmark", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("IACT") && table.contains("speedup"), "{table}");
    let rows = fs::read_to_string(out.join("benchmark.csv")).unwrap();
    assert!(rows.contains("# status=complete"));
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(rows.as_bytes());
    let rows: Vec<_> = r.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 5);
    for row in &rows[1..] {
        let beta: f64 = row[4].parse().unwrap();
        assert!(beta == 1.0, "{} beta {beta}", &row[0]);
    }
    for v in ["reference", "approx1", "approx2", "approx3", "approx5"] {
        assert!(out.join(v).join("chain_0.csv").exists());
    }
}

#[test]
fn discrete_toy_runs_sample_the_target() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "toy.toml", "seed = 3\niterations = 200000\nburn_in = 0\n[problem]\nkind = \"discrete-toy\"\n[sampler]\nkernel = \"da\"\nscheme = \"approx1\"\n");
    let out = dir.path().join("o");
    assert!(Command::new(ADA).args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap().success());
    let t = read_trace(&out.join("chain_0.csv")).unwrap();
    let target = [1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0];
    let z: f64 = target.iter().sum();
    for (k, p) in target.iter().enumerate() {
        let f = t.records.iter().filter(|r| r.x[0] as usize == k).count() as f64 / t.records.len() as f64;
        assert!((f - p / z).abs() < 0.01, "state {k}: {f}");
    }
    let summary = fs::read_to_string(out.join("summary_0.txt")).unwrap();
    assert!(summary.contains("fine_equals_acc1_plus_one=true"));
}

#[test]
fn verify_passes() {
    let o = Command::new(ADA).args(["verify", "--seed", "5"]).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("expected violation") && !text.contains("FAIL"), "{text}");
}
