//! Mean-centroid evaluation on target-domain episodes and result tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backbone::FeatureExtractor;
use crate::datasets::{DomainDataset, Raster};
use crate::error::{Error, Result};
use crate::protonet::{classify_queries, compute_prototypes, PrototypeDistance};
use crate::sampler::{EpisodeSampler, EpisodeSpec};
use crate::tensor::Matrix;

pub const DEFAULT_EVAL_EPISODES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub domain: String,
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query: usize,
    pub n_episodes: usize,
    /// Percent.
    pub mean_accuracy: f64,
    /// `1.96 · σ / √n` in percent, σ being the population standard deviation.
    pub ci95_halfwidth: f64,
    pub seed: u64,
}

/// Mean and 95% half-width (both in percent) of per-episode accuracies in
/// `[0, 1]`. Sums run over the sorted values, so the result does not depend
/// on episode order.
pub fn summarize(accuracies: &[f64]) -> (f64, f64) {
    let n = accuracies.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mut sorted = accuracies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let var = sorted.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    (100.0 * mean, 100.0 * 1.96 * var.sqrt() / (n as f64).sqrt())
}

/// Accuracy of every episode `0..n_episodes` of the stream keyed by
/// `spec.seed`, given one feature row per dataset example.
pub fn episode_accuracies(
    features: &Matrix<f64>,
    dataset: &DomainDataset,
    spec: &EpisodeSpec,
    n_episodes: usize,
    distance: PrototypeDistance,
) -> Result<Vec<f64>> {
    if features.rows != dataset.len() {
        return Err(Error::validation("one feature row per example is required"));
    }
    let sampler = EpisodeSampler::new(dataset, *spec)?;
    (0..n_episodes as u64)
        .map(|i| {
            let task = sampler.episode(spec.seed, i);
            let s: Vec<usize> = task.support.iter().map(|it| it.example).collect();
            let q: Vec<usize> = task.query.iter().map(|it| it.example).collect();
            let protos = compute_prototypes(&features.select_rows(&s), &task.support_labels(), task.class_map.clone())?;
            let pred = classify_queries(&features.select_rows(&q), &protos, distance, Some(&task.query_labels()))?;
            Ok(pred.accuracy.unwrap_or(0.0))
        })
        .collect()
}

/// Features of every example in `dataset`, in dataset order.
pub fn dataset_features(extractor: &FeatureExtractor<f32>, dataset: &DomainDataset) -> Result<Matrix<f64>> {
    let imgs: Vec<&Raster> = (0..dataset.len()).map(|i| dataset.image(i)).collect();
    let f = extractor.extract_rasters(&imgs, 256)?;
    if !f.is_finite() {
        return Err(Error::numeric(0, "non-finite features during evaluation"));
    }
    Ok(f.cast())
}

/// Evaluates `extractor` on `n_episodes` episodes of `test_set`. Features
/// are computed once per example; the result depends only on the extractor
/// parameters and `spec.seed`.
pub fn evaluate(
    method: &str,
    extractor: &FeatureExtractor<f32>,
    test_set: &DomainDataset,
    spec: &EpisodeSpec,
    n_episodes: usize,
    distance: PrototypeDistance,
) -> Result<EvalReport> {
    EpisodeSampler::new(test_set, *spec)?;
    let features = dataset_features(extractor, test_set)?;
    evaluate_features(method, &features, test_set, spec, n_episodes, distance)
}

pub fn evaluate_features(
    method: &str,
    features: &Matrix<f64>,
    test_set: &DomainDataset,
    spec: &EpisodeSpec,
    n_episodes: usize,
    distance: PrototypeDistance,
) -> Result<EvalReport> {
    let acc = episode_accuracies(features, test_set, spec, n_episodes, distance)?;
    let (mean_accuracy, ci95_halfwidth) = summarize(&acc);
    Ok(EvalReport {
        method: method.to_string(),
        domain: test_set.domain_name().to_string(),
        n_way: spec.n_way,
        k_shot: spec.k_shot,
        n_query: spec.n_query,
        n_episodes,
        mean_accuracy,
        ci95_halfwidth,
        seed: spec.seed,
    })
}

/// Method × domain grid of mean accuracies for one episode shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub n_way: usize,
    pub k_shot: usize,
    pub methods: Vec<String>,
    pub domains: Vec<String>,
    /// `cells[m][d]`.
    pub cells: Vec<Vec<EvalReport>>,
    pub averages: Vec<f64>,
}

pub const CSV_HEADER: &str = "method,domain,n_way,k_shot,n_episodes,mean_acc,ci95";

/// Rows and columns follow first appearance in `reports`. All reports must
/// share one `(n_way, k_shot)`.
pub fn build_results_table(reports: &[EvalReport]) -> Result<ResultsTable> {
    let first = reports.first().ok_or_else(|| Error::validation("no reports to tabulate"))?;
    let (n_way, k_shot) = (first.n_way, first.k_shot);
    if let Some(r) = reports.iter().find(|r| (r.n_way, r.k_shot) != (n_way, k_shot)) {
        return Err(Error::validation(format!(
            "mixed episode shapes: {n_way}-way {k_shot}-shot and {}-way {}-shot",
            r.n_way, r.k_shot
        )));
    }
    let mut methods: Vec<String> = Vec::new();
    let mut domains: Vec<String> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
        if !domains.contains(&r.domain) {
            domains.push(r.domain.clone());
        }
    }
    let mut cells = Vec::with_capacity(methods.len());
    for m in &methods {
        let mut row = Vec::with_capacity(domains.len());
        for d in &domains {
            let hits: Vec<&EvalReport> = reports.iter().filter(|r| &r.method == m && &r.domain == d).collect();
            match hits.as_slice() {
                [one] => row.push((*one).clone()),
                [] => return Err(Error::validation(format!("missing result for method {m:?}, domain {d:?}"))),
                _ => return Err(Error::validation(format!("duplicate result for method {m:?}, domain {d:?}"))),
            }
        }
        cells.push(row);
    }
    let averages = cells
        .iter()
        .map(|row| row.iter().map(|r| r.mean_accuracy).sum::<f64>() / row.len() as f64)
        .collect();
    Ok(ResultsTable {
        n_way,
        k_shot,
        methods,
        domains,
        cells,
        averages,
    })
}

/// One table per `(n_way, k_shot)`, ordered by shape.
pub fn build_results_tables(reports: &[EvalReport]) -> Result<Vec<ResultsTable>> {
    let mut shapes: Vec<(usize, usize)> = reports.iter().map(|r| (r.n_way, r.k_shot)).collect();
    shapes.sort_unstable();
    shapes.dedup();
    shapes
        .into_iter()
        .map(|s| {
            let group: Vec<EvalReport> = reports.iter().filter(|r| (r.n_way, r.k_shot) == s).cloned().collect();
            build_results_table(&group)
        })
        .collect()
}

impl ResultsTable {
    pub fn to_text(&self) -> String {
        let w0 = self.methods.iter().map(|m| m.len()).max().unwrap_or(0).max(6);
        let widths: Vec<usize> = self.domains.iter().map(|d| d.len().max(6)).collect();
        let mut s = format!("{}-way {}-shot\n{:<w0$}", self.n_way, self.k_shot, "method");
        for (d, w) in self.domains.iter().zip(&widths) {
            let _ = write!(s, "  {d:>w$}");
        }
        s.push_str("  average\n");
        for ((m, row), avg) in self.methods.iter().zip(&self.cells).zip(&self.averages) {
            let _ = write!(s, "{m:<w0$}");
            for (r, w) in row.iter().zip(&widths) {
                let _ = write!(s, "  {:>w$.2}", r.mean_accuracy);
            }
            let _ = writeln!(s, "  {avg:>7.2}");
        }
        s
    }

    /// Per-cell rows plus one `average` row per method with an empty `ci95`.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for ((m, row), avg) in self.methods.iter().zip(&self.cells).zip(&self.averages) {
            for r in row {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{:.2},{:.2}",
                    m, r.domain, r.n_way, r.k_shot, r.n_episodes, r.mean_accuracy, r.ci95_halfwidth
                );
            }
            let n: usize = row.iter().map(|r| r.n_episodes).sum();
            let _ = writeln!(s, "{m},average,{},{},{n},{avg:.2},", self.n_way, self.k_shot);
        }
        s
    }
}
