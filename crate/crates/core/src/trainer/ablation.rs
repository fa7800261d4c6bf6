//! Cumulative component ablation: five configurations, each adding one
//! ingredient to the previous row, trained on shared seeds and compared on
//! final target metrics.

use serde::Serialize;

use crate::config::{AdversarialFeatures, IimtConfig};
use crate::error::Result;
use crate::tensor::Scalar;

use super::metrics::EvalReport;
use super::train;

/// The rows, in order. Each one extends the previous configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AblationRow {
    /// Supervised training on source alone (unit lambda, no other losses).
    SourceOnly,
    /// Adds the adversarial loss on raw (unmixed) features.
    Dann,
    /// Adds within-domain mixup for both domains (real lambda draws).
    IntraMixup,
    /// Adds cross-domain mixup classification; the adversarial loss moves
    /// onto the mixed batches.
    InterMixup,
    /// Adds the feature-level consistency term: the full method.
    FeatureConsistency,
}

impl AblationRow {
    pub const ALL: [AblationRow; 5] = [
        AblationRow::SourceOnly,
        AblationRow::Dann,
        AblationRow::IntraMixup,
        AblationRow::InterMixup,
        AblationRow::FeatureConsistency,
    ];

    /// Stable machine-readable key (also the CSV row id).
    pub fn key(self) -> &'static str {
        match self {
            AblationRow::SourceOnly => "source-only",
            AblationRow::Dann => "dann",
            AblationRow::IntraMixup => "add-intra-mixup",
            AblationRow::InterMixup => "add-inter-mixup",
            AblationRow::FeatureConsistency => "add-feature-consistency",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AblationRow::SourceOnly => "Source-only",
            AblationRow::Dann => "DANN",
            AblationRow::IntraMixup => "+ intra-domain mixup (Ls, Lt)",
            AblationRow::InterMixup => "+ inter-domain mixup (Lq)",
            AblationRow::FeatureConsistency => "+ feature consistency (Lz)",
        }
    }

    /// Derive this row's configuration from the full-method base config.
    pub fn apply(self, base: &IimtConfig) -> IimtConfig {
        let mut cfg = base.clone();
        // start from the bare supervised reduction and add pieces back
        cfg.weights.q = 0.0;
        cfg.weights.d = 0.0;
        cfg.weights.z = 0.0;
        cfg.weights.t_max = 0.0;
        cfg.train.force_unit_lambda = true;
        cfg.train.adversarial_features = AdversarialFeatures::Raw;

        if self >= AblationRow::Dann {
            cfg.weights.d = base.weights.d;
        }
        if self >= AblationRow::IntraMixup {
            cfg.train.force_unit_lambda = false;
            cfg.weights.t_max = base.weights.t_max;
        }
        if self >= AblationRow::InterMixup {
            cfg.weights.q = base.weights.q;
            cfg.train.adversarial_features = AdversarialFeatures::Mixed;
        }
        if self >= AblationRow::FeatureConsistency {
            cfg.weights.z = base.weights.z;
        }
        cfg
    }
}

impl PartialOrd for AblationRow {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AblationRow {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self as usize).cmp(&(*other as usize))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub target: EvalReport,
    pub source_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRowResult {
    pub key: &'static str,
    pub label: &'static str,
    pub per_seed: Vec<SeedResult>,
    pub mean_target_accuracy: f64,
    pub std_target_accuracy: f64,
    pub mean_target_weighted_f1: f64,
    pub std_target_weighted_f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationOutcome {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRowResult>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run the five-row protocol over the given seeds. For every seed, all rows
/// share the same datasets and the same model init, so row deltas isolate
/// the added component.
pub fn run_ablation<T: Scalar>(base: &IimtConfig, seeds: &[u64]) -> Result<AblationOutcome> {
    let mut rows = Vec::with_capacity(AblationRow::ALL.len());
    for row in AblationRow::ALL {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = row.apply(base);
            cfg.seed = seed;
            let (source, target) = crate::config::resolve_datasets::<T>(&cfg.dataset, seed)?;
            let run = train(&cfg, &source, &target)?;
            let target_eval = run.target_eval.ok_or_else(|| {
                crate::error::Error::Validation(
                    "ablation needs target labels for evaluation".into(),
                )
            })?;
            let source_accuracy = run.source_eval.map(|e| e.accuracy).unwrap_or(0.0);
            per_seed.push(SeedResult {
                seed,
                target: target_eval,
                source_accuracy,
            });
        }
        let accs: Vec<f64> = per_seed.iter().map(|r| r.target.accuracy).collect();
        let f1s: Vec<f64> = per_seed.iter().map(|r| r.target.weighted_f1).collect();
        let (mean_acc, std_acc) = mean_std(&accs);
        let (mean_f1, std_f1) = mean_std(&f1s);
        rows.push(AblationRowResult {
            key: row.key(),
            label: row.label(),
            per_seed,
            mean_target_accuracy: mean_acc,
            std_target_accuracy: std_acc,
            mean_target_weighted_f1: mean_f1,
            std_target_weighted_f1: std_f1,
        });
    }
    Ok(AblationOutcome {
        seeds: seeds.to_vec(),
        rows,
    })
}
