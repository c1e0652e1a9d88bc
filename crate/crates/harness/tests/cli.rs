use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bsvrb::trace::CSV_HEADER;
use bsvrb::Trace;

fn bsvrb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsvrb"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

const QUAD: &str = r#"
algorithm = "bsvrb-v2"
seeds = [0, 1]

[problem]
kind = "quadratic"
m = 6
d_x = 3
d_y = 2

[params]
iterations = 60
eta = 0.05

[output]
eval_every = 20
wall_clock = false
"#;

#[test]
fn two_seeds_give_two_traces_and_one_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUAD);
    let out = dir.path().join("out");
    let o = bsvrb(&["run", "-c", &cfg, "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for seed in [0, 1] {
        let csv = out.join(format!("bsvrb-v2_seed{seed}.csv"));
        let text = fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        let trace = Trace::load(&csv).unwrap();
        let iters: Vec<u64> = trace.rows().iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![0, 20, 40, 60]);
        assert!(trace.rows().iter().all(|r| r.exact_grad_norm.is_some()));
        assert!(out.join(format!("bsvrb-v2_seed{seed}.json")).exists());
    }
    let summaries: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with("_summary.json"))
        .collect();
    assert_eq!(summaries.len(), 1);
    let agg: serde_json::Value = serde_json::from_str(&fs::read_to_string(summaries[0].path()).unwrap()).unwrap();
    assert_eq!(agg["runs"].as_array().unwrap().len(), 2);
    assert!(agg["median_final_exact_grad_norm"].as_f64().unwrap().is_finite());
    assert!(agg["git"].is_string());
    assert_eq!(agg["config"]["params"]["blocks_per_iter"], 6);
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUAD);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = bsvrb(&["run", "-c", &cfg, "-o", out.to_str().unwrap(), "--seeds", "3"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &Path| fs::read(d.join("bsvrb-v2_seed3.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn flag_overrides_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUAD);
    let out = dir.path().join("o");
    let o = bsvrb(&[
        "run",
        "-c",
        &cfg,
        "-o",
        out.to_str().unwrap(),
        "--seeds",
        "0",
        "--set",
        "params.eta=0.01",
        "--set",
        "params.iterations=10",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("bsvrb-v2_seed0.json")).unwrap()).unwrap();
    assert_eq!(v["config"]["params"]["eta"], 0.01);
    assert_eq!(v["summary"]["iterations"], 10);
}

#[test]
fn bad_configs_fail_with_messages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{QUAD}\nbogus = 1\n"));
    let o = bsvrb(&["run", "-c", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    let hvp_only = r#"
algorithm = "bsvrb-v1"
[problem]
kind = "hyperweight"
n = 200
d = 5
model = { m = 3, dense_hessian = false }
"#;
    let cfg = write_config(dir.path(), hvp_only);
    let o = bsvrb(&["run", "-c", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("dense lower Hessians"));
}

#[test]
fn restart_and_baseline_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUAD);
    for algo in ["re-bsvrb-v1", "re-bsvrb-v2", "baseline-ma"] {
        let out = dir.path().join(algo);
        let o = bsvrb(&[
            "run",
            "-c",
            &cfg,
            "-o",
            out.to_str().unwrap(),
            "--seeds",
            "0",
            "--set",
            &format!("algorithm={algo}"),
            "--set",
            "restart.eps_target=1e9",
            "--set",
            "restart.multipliers.max_stage_iterations=50",
        ]);
        assert!(o.status.success(), "{algo}: {}", String::from_utf8_lossy(&o.stderr));
        let trace = Trace::load(&out.join(format!("{algo}_seed0.csv"))).unwrap();
        assert!(!trace.is_empty());
    }
}

#[test]
fn hyperweight_run_reports_accuracy() {
    let text = r#"
algorithm = "bsvrb-v2"
[problem]
kind = "hyperweight"
n = 300
d = 6
model = { m = 4, flip_prob = 0.2, dense_hessian = false }
[params]
iterations = 30
[output]
eval_every = 0
exact_grad = false
upper_loss = false
"#;
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), text);
    let out = dir.path().join("hw");
    let o = bsvrb(&["run", "-c", &cfg, "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("bsvrb-v2_seed0.json")).unwrap()).unwrap();
    let acc = v["summary"]["accuracy"]["test"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(v["summary"]["dense_hessian_calls"], 0);
}

#[test]
fn verify_and_gradcheck_pass_on_the_quadratic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUAD);
    let o = bsvrb(&["verify", "-c", &cfg, "--points", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let o = bsvrb(&["gradcheck", "-c", &cfg, "--points", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn sweep_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUAD);
    let out = dir.path().join("sw");
    let o = bsvrb(&[
        "sweep-speedup",
        "-c",
        &cfg,
        "-o",
        out.to_str().unwrap(),
        "--values",
        "1,3,6",
        "--threshold",
        "1e9",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("sweep_blocks.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3 * 2);
    assert!(out.join("sweep_blocks.json").exists());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            bsvrb_harness::config::load_config(&path, &[]).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
