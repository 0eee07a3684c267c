//! Classification metrics and the model comparison harness.
//!
//! AUROC uses the Mann–Whitney rank formulation:
//! P(score_pos > score_neg) + ½·P(tie).
//!
//! ```
//! use tfcam::metrics::{auroc, thresholded_metrics};
//!
//! let scores = [0.9, 0.3, 0.8, 0.1];
//! let labels = [1.0, 1.0, 0.0, 0.0];
//! assert_eq!(auroc(&scores, &labels).unwrap(), 0.75);
//!
//! let m = thresholded_metrics(&scores, &labels, 0.5);
//! assert_eq!(m.confusion.tp, 1);
//! assert_eq!(m.precision, 0.5);
//! ```

use crate::data::{split, CohortDataset, NormPolicy, Preprocessor, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{train, ModelConfig, ModelKind};

/// Rank-based AUROC with average ranks for ties.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::InvalidArgument(
            "auroc: scores and labels must be nonempty and equal length".into(),
        ));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC undefined: only one class present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));

    // average rank within each tie group (ranks are 1-based)
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ThresholdedMetrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub threshold: f64,
    pub confusion: Confusion,
}

/// Standard definitions with the degenerate-case conventions
/// precision = 0 when no positives predicted, recall = 0 when none
/// present, f1 = 0 when precision + recall = 0.
pub fn thresholded_metrics(scores: &[f64], labels: &[f64], threshold: f64) -> ThresholdedMetrics {
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let precision = if c.tp + c.fp > 0 {
        c.tp as f64 / (c.tp + c.fp) as f64
    } else {
        0.0
    };
    let recall = if c.tp + c.fn_ > 0 {
        c.tp as f64 / (c.tp + c.fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let n = scores.len();
    let accuracy = if n > 0 {
        (c.tp + c.tn) as f64 / n as f64
    } else {
        0.0
    };
    ThresholdedMetrics {
        f1,
        precision,
        recall,
        accuracy,
        threshold,
        confusion: c,
    }
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub model_kind: ModelKind,
    pub seed: u64,
    pub auroc: f64,
    pub metrics: ThresholdedMetrics,
}

#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub model_kind: ModelKind,
    pub per_seed: Vec<MetricsReport>,
    /// Arithmetic mean over seeds: auroc, f1, precision, recall, accuracy.
    pub mean: [f64; 5],
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub seeds: Vec<u64>,
}

fn mean_of(reports: &[MetricsReport]) -> [f64; 5] {
    let n = reports.len() as f64;
    let mut m = [0.0; 5];
    for r in reports {
        m[0] += r.auroc;
        m[1] += r.metrics.f1;
        m[2] += r.metrics.precision;
        m[3] += r.metrics.recall;
        m[4] += r.metrics.accuracy;
    }
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Evaluates a trained model on a (preprocessed) dataset.
pub fn evaluate_model(
    model: &crate::model::Model,
    dataset: &CohortDataset,
    threshold: f64,
) -> Result<MetricsReport> {
    let probs = model.predict(&dataset.x)?;
    let scores = probs.data();
    Ok(MetricsReport {
        model_kind: model.config.model_kind,
        seed: model.config.seed,
        auroc: auroc(scores, &dataset.y)?,
        metrics: thresholded_metrics(scores, &dataset.y, threshold),
    })
}

/// Trains every config on identical splits for every seed and reports
/// test-split metrics. Trainings for different (config, seed) pairs run
/// on separate threads.
pub fn compare_models(
    dataset: &CohortDataset,
    configs: &[ModelConfig],
    seeds: &[u64],
    split_spec: &SplitSpec,
    policies: &[NormPolicy],
) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed required".into()));
    }
    let (train_ds, _val_ds, test_ds) = split(dataset, split_spec)?;
    let pre = Preprocessor::fit(&train_ds, policies.to_vec())?;
    let train_norm = pre.apply(&train_ds);
    let test_norm = pre.apply(&test_ds);

    let mut jobs: Vec<(usize, ModelConfig)> = Vec::new();
    for (ci, cfg) in configs.iter().enumerate() {
        for &seed in seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            jobs.push((ci, c));
        }
    }

    let results: Vec<Result<(usize, MetricsReport)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(ci, cfg)| {
                let train_ref = &train_norm;
                let test_ref = &test_norm;
                scope.spawn(move || {
                    let trained = train(train_ref, &cfg)?;
                    let report = evaluate_model(&trained.model, test_ref, 0.5)?;
                    Ok((ci, report))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut per_config: Vec<Vec<MetricsReport>> = vec![Vec::new(); configs.len()];
    for r in results {
        let (ci, report) = r?;
        per_config[ci].push(report);
    }
    for reports in &mut per_config {
        reports.sort_by_key(|r| r.seed);
    }

    let rows = configs
        .iter()
        .zip(per_config)
        .map(|(cfg, per_seed)| ComparisonRow {
            model_kind: cfg.model_kind,
            mean: mean_of(&per_seed),
            per_seed,
        })
        .collect();
    Ok(ComparisonReport {
        rows,
        seeds: seeds.to_vec(),
    })
}

fn cap_mark(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

impl ComparisonReport {
    /// Column order: model,auroc,f1,precision,recall,accuracy,
    /// feature_level,temporal_level,cross_level. One row per model
    /// (seed means), preceded by per-seed rows when several seeds ran.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "model,auroc,f1,precision,recall,accuracy,feature_level,temporal_level,cross_level\n",
        );
        for row in &self.rows {
            let (f, t, c) = row.model_kind.capabilities();
            if self.seeds.len() > 1 {
                for r in &row.per_seed {
                    out.push_str(&format!(
                        "{}_seed{},{},{},{},{},{},{},{},{}\n",
                        row.model_kind.as_str(),
                        r.seed,
                        r.auroc,
                        r.metrics.f1,
                        r.metrics.precision,
                        r.metrics.recall,
                        r.metrics.accuracy,
                        cap_mark(f),
                        cap_mark(t),
                        cap_mark(c),
                    ));
                }
            }
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.model_kind.as_str(),
                row.mean[0],
                row.mean[1],
                row.mean[2],
                row.mean[3],
                row.mean[4],
                cap_mark(f),
                cap_mark(t),
                cap_mark(c),
            ));
        }
        out
    }

    pub fn to_text_table(&self) -> String {
        let header = [
            "model", "auroc", "f1", "precision", "recall", "accuracy", "feature", "temporal",
            "cross",
        ];
        let mut lines = vec![format!(
            "{:<8} {:>7} {:>7} {:>9} {:>7} {:>8} {:>8} {:>9} {:>6}",
            header[0],
            header[1],
            header[2],
            header[3],
            header[4],
            header[5],
            header[6],
            header[7],
            header[8]
        )];
        for row in &self.rows {
            let (f, t, c) = row.model_kind.capabilities();
            lines.push(format!(
                "{:<8} {:>7.4} {:>7.4} {:>9.4} {:>7.4} {:>8.4} {:>8} {:>9} {:>6}",
                row.model_kind.as_str(),
                row.mean[0],
                row.mean[1],
                row.mean[2],
                row.mean[3],
                row.mean[4],
                cap_mark(f),
                cap_mark(t),
                cap_mark(c),
            ));
        }
        lines.join("\n") + "\n"
    }
}
