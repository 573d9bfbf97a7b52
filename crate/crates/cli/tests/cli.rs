use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

fn xdfsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xdfsl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn xdfsl")
}

fn ok(args: &[&str]) -> Output {
    let out = xdfsl(args);
    assert!(
        out.status.success(),
        "xdfsl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn hashes(root: &Path) -> BTreeMap<String, String> {
    fn walk(dir: &Path, root: &Path, acc: &mut BTreeMap<String, String>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, acc);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                let digest = Sha256::digest(std::fs::read(&p).unwrap());
                acc.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}

/// Small, fast settings shared by the pipeline tests.
const QUICK: &[&str] = &[
    "--set",
    "benchmark.synthetic.images_per_class_per_domain=20",
    "--set",
    "pretrain.epochs=1",
    "--set",
    "eval.n_episodes=40",
];

fn with_quick<'a>(head: &[&'a str]) -> Vec<&'a str> {
    let mut v = head.to_vec();
    v.extend_from_slice(QUICK);
    v
}

#[test]
fn gen_data_layout_determinism_and_refusal() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let a_s = a.to_str().unwrap();
    ok(&["gen-data", "--out", a_s]);
    ok(&["gen-data", "--out", b.to_str().unwrap()]);

    let mut domains: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    domains.sort();
    assert_eq!(domains, ["clipart", "painting", "real", "sketch"]);
    for d in &domains {
        assert_eq!(std::fs::read_dir(a.join(d)).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count(), 40);
    }
    let ha = hashes(&a);
    assert_eq!(ha.len(), 4 * 40 * 30);
    assert_eq!(ha, hashes(&b));

    let refused = xdfsl(&["gen-data", "--out", a_s]);
    assert_eq!(refused.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    ok(&["gen-data", "--out", a_s, "--force"]);
    assert_eq!(hashes(&a), ha);
}

#[test]
fn split_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("m.tsv");
    let out = ok(&with_quick(&["split", "--out", m.to_str().unwrap()]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("train 16, unlabelled 16, test 8"));
    let text = std::fs::read_to_string(&m).unwrap();
    assert_eq!(text.lines().filter(|l| l.ends_with("\ttest")).count(), 8);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("r");
    let o = o.to_str().unwrap();
    assert_eq!(xdfsl(&["run", "--out", o, "--set", "method.kind=fancy"]).status.code(), Some(2));
    assert_eq!(xdfsl(&["run", "--out", o, "--set", "eval.n_way=0"]).status.code(), Some(2));
    assert_eq!(xdfsl(&["run", "--out", o, "--config", "/nonexistent.toml"]).status.code(), Some(2));
}

#[test]
fn divergent_training_exits_3_with_step() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("r");
    let out = xdfsl(&with_quick(&[
        "run",
        "--out",
        o.to_str().unwrap(),
        "--set",
        "method.kind=backbone-only",
        "--set",
        "pretrain.optimizer.learning_rate=1e30",
        "--set",
        "pretrain.optimizer.max_grad_norm=1e30",
    ]));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}

#[test]
fn overrides_round_trip_through_effective_config() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    ok(&with_quick(&[
        "run",
        "--out",
        first.to_str().unwrap(),
        "--set",
        "method.kind=backbone-only",
        "--set",
        "method.seed=5",
        "--set",
        "eval.seed=11",
    ]));
    let eff = first.join("effective_config.toml");
    let text = std::fs::read_to_string(&eff).unwrap();
    assert!(text.contains("seed = 5") && text.contains("seed = 11"));
    ok(&["run", "--out", second.to_str().unwrap(), "--config", eff.to_str().unwrap()]);
    assert_eq!(std::fs::read_to_string(second.join("effective_config.toml")).unwrap(), text);
    assert_eq!(hashes(&first.join("reports")), hashes(&second.join("reports")));
    // 3 targets x 2 shot counts
    assert_eq!(hashes(&first.join("reports")).len(), 6);
    assert!(first.join("clipart/model.ckpt").is_file());

    let again = xdfsl(&["run", "--out", first.to_str().unwrap(), "--config", eff.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(2));
}

#[test]
fn report_merges_runs_into_one_table_per_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for label in ["backbone", "baseline", "ssl"] {
        let d = tmp.path().join(label);
        ok(&with_quick(&[
            "run",
            "--out",
            d.to_str().unwrap(),
            "--set",
            "method.kind=backbone-only",
            "--set",
            &format!("method.label={label}"),
        ]));
        dirs.push(d.to_str().unwrap().to_string());
    }
    let out = tmp.path().join("report");
    let mut args = vec!["report", "--out", out.to_str().unwrap()];
    args.extend(dirs.iter().map(String::as_str));
    let stdout = String::from_utf8(ok(&args).stdout).unwrap();
    assert!(stdout.contains("5-way 1-shot") && stdout.contains("5-way 5-shot"));

    let csv = std::fs::read_to_string(out.join("results_5way5shot.csv")).unwrap();
    let averages: Vec<&str> = csv.lines().filter(|l| l.contains(",average,")).collect();
    assert_eq!(averages.len(), 3);
    assert!(out.join("results_5way1shot.txt").is_file());
    let txt = std::fs::read_to_string(out.join("results_5way5shot.txt")).unwrap();
    assert_eq!(txt.lines().count(), 2 + 3);

    let single = tmp.path().join("single");
    ok(&["report", "--out", single.to_str().unwrap(), &dirs[0]]);
    let txt = std::fs::read_to_string(single.join("results_5way5shot.txt")).unwrap();
    assert_eq!(txt.lines().count(), 2 + 1);
}

#[test]
fn ssl_smoke_run_is_quick() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("ssl");
    let t = Instant::now();
    ok(&[
        "run",
        "--out",
        o.to_str().unwrap(),
        "--set",
        "method.kind=ssl",
        "--set",
        "pretrain.epochs=1",
        "--set",
        "episodic.epochs=1",
        "--set",
        "eval.n_episodes=200",
    ]);
    assert!(t.elapsed() < Duration::from_secs(300), "took {:?}", t.elapsed());
    for target in ["clipart", "painting", "sketch"] {
        assert!(o.join(target).join("phase1.ckpt").is_file());
        assert!(o.join(format!("reports/ssl__{target}__5way5shot.json")).is_file());
    }
}

#[test]
fn baseline1_label_in_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("b1");
    ok(&with_quick(&[
        "run",
        "--out",
        o.to_str().unwrap(),
        "--set",
        "method.kind=baseline",
        "--set",
        "benchmark.unlabelled_multiplier=2",
        "--set",
        "benchmark.target_domains=[\"sketch\"]",
        "--set",
        "baseline.rounds=1",
        "--set",
        "baseline.inner_iterations=2",
    ]));
    assert!(o.join("reports/baseline1__sketch__5way5shot.json").is_file());
}
