//! End-to-end commands: data generation, splitting, training runs,
//! evaluation and report merging.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{load_checkpoint, save_checkpoint, InputShape, TrainState};
use crate::config::{MethodKind, RunConfig};
use crate::contrastive::baseline_train;
use crate::datasets::{
    apply_split, build_split_manifest, generate_synthetic_benchmark, load_domain_directory, render_unlabelled_images,
    save_domain_directory, DomainDataset, LoadOptions, Role, SplitManifest, SplitProportions, SplitViews,
    UnlabelledDataset,
};
use crate::error::{Error, Result};
use crate::evaluation::{build_results_tables, dataset_features, evaluate_features, EvalReport};
use crate::metrics::JsonlSink;
use crate::protonet::episodic_train;
use crate::rotation::{pretrain, PretrainConfig};

pub const MANIFEST_FILE: &str = "split_manifest.tsv";
pub const REPORTS_DIR: &str = "reports";

/// Writes the synthetic benchmark as `<out>/<domain>/<class>/<index>.png`.
/// Refuses a non-empty `out` unless `force`.
pub fn cmd_gen_data(config: &RunConfig, out: &Path, force: bool) -> Result<BTreeMap<String, usize>> {
    if out.exists() && std::fs::read_dir(out)?.next().is_some() && !force {
        return Err(Error::validation(format!(
            "{} is not empty; pass --force to overwrite",
            out.display()
        )));
    }
    let data = generate_synthetic_benchmark(&config.benchmark.synthetic)?;
    let mut counts = BTreeMap::new();
    for (name, ds) in &data {
        let dir = out.join(name);
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        save_domain_directory(ds, out)?;
        counts.insert(name.clone(), ds.len());
    }
    Ok(counts)
}

/// Class list of the configured source domain.
pub fn source_class_names(config: &RunConfig) -> Result<Vec<String>> {
    let data = load_benchmark(config, &[config.benchmark.source_domain.clone()])?;
    Ok(data[&config.benchmark.source_domain].class_vocabulary().to_vec())
}

pub fn cmd_split(class_names: &[String], proportions: SplitProportions, seed: u64, out: &Path) -> Result<SplitManifest> {
    let m = build_split_manifest(class_names, proportions, seed)?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    m.write(out)?;
    Ok(m)
}

/// Loads `domains` from `data_root` or renders them synthetically.
pub fn load_benchmark(config: &RunConfig, domains: &[String]) -> Result<BTreeMap<String, DomainDataset>> {
    let b = &config.benchmark;
    match &b.data_root {
        Some(root) => {
            let opts = LoadOptions { resize: b.resize };
            let mut out = BTreeMap::new();
            for d in domains {
                let (ds, report) = load_domain_directory(root, d, &opts)?;
                for issue in &report.issues {
                    log::warn!("{d}: {issue:?}");
                }
                out.insert(d.clone(), ds);
            }
            Ok(out)
        }
        None => {
            let mut syn = b.synthetic.clone();
            syn.domains = domains.to_vec();
            generate_synthetic_benchmark(&syn)
        }
    }
}

pub fn resolve_manifest(config: &RunConfig, source: &DomainDataset) -> Result<SplitManifest> {
    match &config.split.manifest {
        Some(p) => SplitManifest::read(p),
        None => build_split_manifest(source.class_vocabulary(), config.split.proportions, config.split.seed),
    }
}

/// Role views for one target, with the unlabelled pool enlarged by
/// `unlabelled_multiplier`.
pub fn prepare_views(
    config: &RunConfig,
    data: &BTreeMap<String, DomainDataset>,
    manifest: &SplitManifest,
    target: &str,
) -> Result<SplitViews> {
    let mut views = apply_split(data, manifest, &config.benchmark.source_domain, target)?;
    let m = config.benchmark.unlabelled_multiplier;
    if m > 1 {
        let syn = &config.benchmark.synthetic;
        let classes: Vec<String> = manifest.classes_with(Role::Unlabelled).into_iter().collect();
        let per = syn.images_per_class_per_domain;
        let extra = render_unlabelled_images(syn, target, &classes, per, per * (m - 1))?;
        views.unlabelled.extend(extra)?;
    }
    Ok(views)
}

fn input_shape(ds: &DomainDataset) -> Result<InputShape> {
    let first = ds.examples().first().ok_or_else(|| Error::validation("empty source dataset"))?;
    let (height, width, channels) = first.image.shape();
    Ok(InputShape {
        height,
        width,
        channels,
    })
}

fn supervised_config(config: &RunConfig) -> PretrainConfig {
    PretrainConfig {
        rotation_loss_weight: 0.0,
        ..config.pretrain.clone()
    }
}

fn no_unlabelled(domain: &str) -> Result<UnlabelledDataset> {
    UnlabelledDataset::new(domain, Vec::new(), None)
}

/// Summary written to `<out>/run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub reports: Vec<EvalReport>,
}

/// Trains the configured method for every target domain and evaluates it.
///
/// `backbone-only` trains one source model shared by all targets; `ssl` and
/// `baseline` train one model per target because they read that target's
/// unlabelled images.
pub fn cmd_run(config: &RunConfig, out: &Path) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    config.write_effective(out)?;
    let data = load_benchmark(config, &config.benchmark.domains())?;
    let source = &data[&config.benchmark.source_domain];
    let manifest = resolve_manifest(config, source)?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    let input = input_shape(source)?;
    let label = config.method_label();
    let seed = config.method.seed;
    let mut summary = RunSummary {
        method: label.clone(),
        checkpoints: BTreeMap::new(),
        reports: Vec::new(),
    };

    let supervised = |sink_dir: &Path, views: &SplitViews| -> Result<TrainState> {
        let mut st = TrainState::init(config.backbone.clone(), input, seed)?;
        let mut sink = JsonlSink::new(sink_dir)?;
        let unl = no_unlabelled(views.unlabelled.domain_name())?;
        pretrain(&mut st, &views.train, &unl, &supervised_config(config), &mut sink, None)?;
        Ok(st)
    };

    let mut shared: Option<TrainState> = None;
    for target in &config.benchmark.target_domains {
        let views = prepare_views(config, &data, &manifest, target)?;
        let tdir = out.join(target);
        let state = match config.method.kind {
            MethodKind::BackboneOnly => {
                if shared.is_none() {
                    shared = Some(supervised(&out.join("source"), &views)?);
                }
                shared.clone().expect("trained above")
            }
            MethodKind::Ssl => {
                let mut st = TrainState::init(config.backbone.clone(), input, seed)?;
                let mut sink = JsonlSink::new(&tdir)?;
                pretrain(&mut st, &views.train, &views.unlabelled, &config.pretrain, &mut sink, None)?;
                save_checkpoint(&st, &tdir.join("phase1.ckpt"))?;
                episodic_train(&mut st, &views.train, &config.episodic, &mut sink)?;
                st
            }
            MethodKind::Baseline => {
                let mut st = if config.method.baseline_warm_start {
                    if shared.is_none() {
                        shared = Some(supervised(&out.join("source"), &views)?);
                    }
                    shared.clone().expect("trained above")
                } else {
                    TrainState::init(config.backbone.clone(), input, seed)?
                };
                let mut sink = JsonlSink::new(&tdir)?;
                baseline_train(&mut st, &views.train, &views.unlabelled, &config.baseline, &mut sink)?;
                st
            }
        };
        std::fs::create_dir_all(&tdir)?;
        let ckpt = tdir.join("model.ckpt");
        save_checkpoint(&state, &ckpt)?;
        summary.checkpoints.insert(target.clone(), ckpt);
        summary.reports.extend(evaluate_state(config, &label, &state, &views.test)?);
    }
    write_reports(out, &summary.reports)?;
    std::fs::write(out.join("run.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// One report per configured shot count, sharing one feature pass.
pub fn evaluate_state(config: &RunConfig, label: &str, state: &TrainState, test: &DomainDataset) -> Result<Vec<EvalReport>> {
    let features = dataset_features(state.extractor(), test)?;
    config
        .eval
        .specs()
        .iter()
        .map(|spec| evaluate_features(label, &features, test, spec, config.eval.n_episodes, config.eval.distance))
        .collect()
}

/// Evaluates a saved checkpoint on the test classes of `target`.
pub fn cmd_eval(config: &RunConfig, checkpoint: &Path, target: &str, label: Option<&str>, out: &Path) -> Result<Vec<EvalReport>> {
    let state = load_checkpoint(checkpoint)?;
    let domains = vec![config.benchmark.source_domain.clone(), target.to_string()];
    let data = load_benchmark(config, &domains)?;
    let manifest = resolve_manifest(config, &data[&config.benchmark.source_domain])?;
    let views = apply_split(&data, &manifest, &config.benchmark.source_domain, target)?;
    let label = label.map(str::to_string).unwrap_or_else(|| config.method_label());
    let reports = evaluate_state(config, &label, &state, &views.test)?;
    write_reports(out, &reports)?;
    Ok(reports)
}

fn report_file_name(r: &EvalReport) -> String {
    format!("{}__{}__{}way{}shot.json", r.method, r.domain, r.n_way, r.k_shot)
}

pub fn write_reports(out: &Path, reports: &[EvalReport]) -> Result<()> {
    let dir = out.join(REPORTS_DIR);
    std::fs::create_dir_all(&dir)?;
    for r in reports {
        std::fs::write(dir.join(report_file_name(r)), serde_json::to_string_pretty(r)?)?;
    }
    Ok(())
}

pub fn read_reports(run_dir: &Path) -> Result<Vec<EvalReport>> {
    let dir = run_dir.join(REPORTS_DIR);
    if !dir.is_dir() {
        return Err(Error::NotFound(dir));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(serde_json::from_slice(&std::fs::read(p)?)?))
        .collect()
}

/// Merges the reports of several runs into one table per episode shape and
/// writes `results_<n>way<k>shot.{txt,csv}` under `out`.
pub fn cmd_report(run_dirs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let mut reports = Vec::new();
    for d in run_dirs {
        reports.extend(read_reports(d)?);
    }
    let mut protocol: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for r in &reports {
        let p = protocol.entry((r.n_way, r.k_shot)).or_insert((r.n_query, r.n_episodes));
        if *p != (r.n_query, r.n_episodes) {
            return Err(Error::validation(format!(
                "incompatible {}-way {}-shot reports: {} queries/{} episodes vs {} queries/{} episodes",
                r.n_way, r.k_shot, p.0, p.1, r.n_query, r.n_episodes
            )));
        }
    }
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for t in build_results_tables(&reports)? {
        let stem = format!("results_{}way{}shot", t.n_way, t.k_shot);
        let txt = out.join(format!("{stem}.txt"));
        let csv = out.join(format!("{stem}.csv"));
        std::fs::write(&txt, t.to_text())?;
        std::fs::write(&csv, t.to_csv())?;
        written.push(txt);
        written.push(csv);
    }
    Ok(written)
}
