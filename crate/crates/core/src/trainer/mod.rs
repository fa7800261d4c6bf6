//! End-to-end training: per-step loss assembly under the linear w_t
//! schedule, optimization, periodic evaluation, and checkpointing.

pub mod ablation;
pub mod metrics;
pub mod report;

use std::path::Path;

use serde::Serialize;

use crate::checkpoint::{checkpoint_file_name, save_checkpoint, Checkpoint};
use crate::config::{AdversarialFeatures, IimtConfig};
use crate::data::{DomainDataset, PairSampler};
use crate::error::{Error, Result};
use crate::losses::{
    loss_d, loss_intra_source, loss_intra_target, loss_q, loss_z, mix_inter,
    sample_lambda_prime, sample_partner_permutation, unit_lambda, virtual_labels, Dominance,
};
use crate::models::ModelBundle;
use crate::optim::Optimizer;
use crate::rng::{derive_seed, stream_rng, StreamTag};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

use metrics::{evaluate, EvalReport};

/// Training aborts when any loss value leaves this range.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Linear ramp from 0 at step 0 to `w_t_max` at `ramp_steps`, clamped there.
pub fn w_t_schedule(step: u64, w_t_max: f64, ramp_steps: u64) -> Result<f64> {
    if ramp_steps == 0 {
        return Err(Error::Config("w_t ramp needs at least one step".into()));
    }
    Ok(w_t_max * (step as f64 / ramp_steps as f64).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_weighted_f1: Option<f64>,
}

/// One line of the metrics log. Losses that were inactive this run (weight
/// zero) are reported as 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub step: u64,
    pub loss_q: f64,
    pub loss_d: f64,
    pub loss_z: f64,
    pub loss_s: f64,
    pub loss_t: f64,
    pub total: f64,
    pub w_t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSummary>,
}

impl StepReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("step report serializes")
    }
}

pub struct TrainOptions<'a, T> {
    /// Where cadenced checkpoints go; no directory, no checkpoints.
    pub checkpoint_dir: Option<&'a Path>,
    /// Continue from a saved state instead of a fresh init. The checkpoint
    /// must carry the same config hash.
    pub resume: Option<Checkpoint<T>>,
    /// Called after every step, e.g. to stream the metrics log.
    pub on_report: Option<&'a mut dyn FnMut(&StepReport)>,
}

impl<'a, T> Default for TrainOptions<'a, T> {
    fn default() -> Self {
        TrainOptions {
            checkpoint_dir: None,
            resume: None,
            on_report: None,
        }
    }
}

#[derive(Debug)]
pub struct TrainRun<T> {
    pub model: ModelBundle<T>,
    pub optimizer: Optimizer<T>,
    pub config_hash: Vec<u8>,
    pub reports: Vec<StepReport>,
    pub source_eval: Option<EvalReport>,
    pub target_eval: Option<EvalReport>,
}

pub fn train<T: Scalar>(
    cfg: &IimtConfig,
    source: &DomainDataset<T>,
    target: &DomainDataset<T>,
) -> Result<TrainRun<T>> {
    train_with_options(cfg, source, target, TrainOptions::default())
}

pub fn train_with_options<T: Scalar>(
    cfg: &IimtConfig,
    source: &DomainDataset<T>,
    target: &DomainDataset<T>,
    mut opts: TrainOptions<'_, T>,
) -> Result<TrainRun<T>> {
    cfg.validate()?;
    source.validate()?;
    target.validate()?;
    if source.labels.is_none() {
        return Err(Error::Validation("source dataset must be labeled".into()));
    }
    if source.feature_dim() != target.feature_dim() {
        return Err(Error::dims(
            "source vs target features",
            source.samples.shape(),
            target.samples.shape(),
        ));
    }
    if source.class_count != target.class_count {
        return Err(Error::Validation(format!(
            "class counts differ: {} vs {}",
            source.class_count, target.class_count
        )));
    }
    cfg.augment.validate(source.feature_dim())?;

    let hash = cfg.content_hash()?;
    let spec = cfg.model_spec(source.feature_dim(), source.class_count);
    let seed = cfg.seed;

    let (mut model, mut optimizer, start_step) = match opts.resume.take() {
        Some(ckpt) => {
            if ckpt.config_hash != hash {
                return Err(Error::Config(
                    "checkpoint was produced by a different config".into(),
                ));
            }
            if ckpt.model.spec != spec {
                return Err(Error::Config(
                    "checkpoint model spec does not match config".into(),
                ));
            }
            (ckpt.model, ckpt.optimizer, ckpt.step)
        }
        None => (
            ModelBundle::init(spec, seed)?,
            Optimizer::new(cfg.optimizer.kind, cfg.optimizer.lr),
            0,
        ),
    };
    let names = model.param_names();
    let mut sampler = PairSampler::new(source, target, cfg.train.batch_size, seed)?;

    let mix = cfg.mix.params();
    let w = cfg.weights;
    let ramp = cfg.wt_ramp_steps();
    let batch_size = cfg.train.batch_size;
    let adv_mixed = cfg.train.adversarial_features == AdversarialFeatures::Mixed;
    let needs_mix = w.q > 0.0 || w.z > 0.0 || (w.d > 0.0 && adv_mixed);
    let needs_virtual = needs_mix || w.t_max > 0.0;

    let draw_lambda = |tag: StreamTag, step: u64| -> Result<Vec<T>> {
        if cfg.train.force_unit_lambda {
            Ok(unit_lambda(batch_size))
        } else {
            sample_lambda_prime(mix.alpha, &mut stream_rng(seed, tag, step), batch_size)
        }
    };

    let mut reports = Vec::new();
    for step in start_step..cfg.train.total_steps {
        let w_t = w_t_schedule(step, w.t_max, ramp)?;
        let mu = T::from_f64(mu_at(cfg, step));
        let pair = sampler.batch_at(step);

        let q_target = if needs_virtual {
            let aug_seed = derive_seed(seed, StreamTag::Augment, step);
            Some(virtual_labels(&model, &pair.target.x, &cfg.augment, &mix, aug_seed)?.q)
        } else {
            None
        };
        let lambda_inter = if needs_mix {
            Some(draw_lambda(StreamTag::LambdaInter, step)?)
        } else {
            None
        };
        let (mixed_st, mixed_ts) = if needs_mix {
            let q = q_target.as_ref().expect("virtual labels cover mixing");
            let lambda = lambda_inter.as_ref().expect("lambda drawn for mixing");
            (
                Some(mix_inter(&pair.source, &pair.target.x, q, lambda, Dominance::Source)?),
                Some(mix_inter(&pair.source, &pair.target.x, q, lambda, Dominance::Target)?),
            )
        } else {
            (None, None)
        };

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let mut terms: Vec<(&'static str, f64, Var)> = Vec::with_capacity(5);

        let mut report = StepReport {
            step,
            loss_q: 0.0,
            loss_d: 0.0,
            loss_z: 0.0,
            loss_s: 0.0,
            loss_t: 0.0,
            total: 0.0,
            w_t,
            eval: None,
        };

        if w.q > 0.0 {
            let lq = loss_q(
                &mut tape,
                &bound,
                &pair.source,
                &pair.target.x,
                q_target.as_ref().expect("q for loss_q"),
                lambda_inter.as_ref().expect("lambda for loss_q"),
            )?;
            report.loss_q = tape.scalar_value(lq)?.to_f64();
            terms.push(("loss_q", w.q, lq));
        }
        if w.d > 0.0 {
            let ld = if adv_mixed {
                let st = mixed_st.as_ref().expect("mixed batch for loss_d");
                let ts = mixed_ts.as_ref().expect("mixed batch for loss_d");
                loss_d(&mut tape, &bound, &st.x, &ts.x, mu)?
            } else {
                loss_d(&mut tape, &bound, &pair.source.x, &pair.target.x, mu)?
            };
            report.loss_d = tape.scalar_value(ld)?.to_f64();
            terms.push(("loss_d", w.d, ld));
        }
        if w.z > 0.0 {
            let st = mixed_st.as_ref().expect("mixed batch for loss_z");
            let ts = mixed_ts.as_ref().expect("mixed batch for loss_z");
            let lz = loss_z(
                &mut tape,
                &bound,
                &pair.source.x,
                &pair.target.x,
                &st.x,
                &ts.x,
                lambda_inter.as_ref().expect("lambda for loss_z"),
            )?;
            report.loss_z = tape.scalar_value(lz)?.to_f64();
            terms.push(("loss_z", w.z, lz));
        }
        if w.s > 0.0 {
            let lambda = draw_lambda(StreamTag::LambdaIntraSource, step)?;
            let partner = sample_partner_permutation(
                &mut stream_rng(seed, StreamTag::PartnerSource, step),
                batch_size,
            );
            let ls = loss_intra_source(&mut tape, &bound, &pair.source, &lambda, &partner)?;
            report.loss_s = tape.scalar_value(ls)?.to_f64();
            terms.push(("loss_s", w.s, ls));
        }
        if w.t_max > 0.0 {
            let lambda = draw_lambda(StreamTag::LambdaIntraTarget, step)?;
            let partner = sample_partner_permutation(
                &mut stream_rng(seed, StreamTag::PartnerTarget, step),
                batch_size,
            );
            let lt = loss_intra_target(
                &mut tape,
                &bound,
                &pair.target.x,
                q_target.as_ref().expect("q for loss_t"),
                &lambda,
                &partner,
            )?;
            report.loss_t = tape.scalar_value(lt)?.to_f64();
            terms.push(("loss_t", w_t, lt));
        }

        for (name, _, var) in &terms {
            let value = tape.scalar_value(*var)?.to_f64();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step,
                    what: format!("{name} is {value}"),
                });
            }
        }

        let mut total: Option<Var> = None;
        for &(_, weight, var) in &terms {
            let scaled = tape.scale(var, T::from_f64(weight));
            total = Some(match total {
                None => scaled,
                Some(acc) => tape.add(acc, scaled)?,
            });
        }
        let total = total.unwrap_or_else(|| tape.constant(Tensor::scalar(T::ZERO)));
        let total_value = tape.scalar_value(total)?.to_f64();
        if !total_value.is_finite() || total_value.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                step,
                what: format!("total loss is {total_value}"),
            });
        }
        report.total = total_value;

        tape.backward(total)?;
        let grads: Vec<Tensor<T>> = bound
            .param_vars()
            .iter()
            .map(|&v| tape.grad(v).expect("param grad").clone())
            .collect();
        drop(tape);
        let grad_refs: Vec<&Tensor<T>> = grads.iter().collect();
        optimizer.step(&mut model.params_mut(), &grad_refs, &names)?;

        let finished = step + 1 == cfg.train.total_steps;
        let eval_due =
            cfg.train.eval_every > 0 && (step + 1) % cfg.train.eval_every == 0;
        if eval_due || finished {
            report.eval = Some(eval_summary(&model, source, target)?);
        }

        if let Some(cb) = opts.on_report.as_mut() {
            cb(&report);
        }
        reports.push(report);

        if let Some(dir) = opts.checkpoint_dir {
            let due = cfg.train.checkpoint_every > 0
                && (step + 1) % cfg.train.checkpoint_every == 0;
            if due && !finished {
                let ckpt = Checkpoint {
                    step: step + 1,
                    config_hash: hash.clone(),
                    model: model.clone(),
                    optimizer: optimizer.clone(),
                };
                save_checkpoint(&dir.join(checkpoint_file_name(step + 1, &hash)), &ckpt)?;
            }
        }
    }

    let source_eval = Some(evaluate(&model, source)?);
    let target_eval = match &target.labels {
        Some(_) => Some(evaluate(&model, target)?),
        None => None,
    };

    Ok(TrainRun {
        model,
        optimizer,
        config_hash: hash,
        reports,
        source_eval,
        target_eval,
    })
}

fn mu_at(cfg: &IimtConfig, step: u64) -> f64 {
    let ramp = cfg.train.grl_mu_ramp_steps;
    if ramp == 0 {
        cfg.train.grl_mu
    } else {
        cfg.train.grl_mu * (step as f64 / ramp as f64).min(1.0)
    }
}

fn eval_summary<T: Scalar>(
    model: &ModelBundle<T>,
    source: &DomainDataset<T>,
    target: &DomainDataset<T>,
) -> Result<EvalSummary> {
    let source_accuracy = Some(evaluate(model, source)?.accuracy);
    let (target_accuracy, target_weighted_f1) = match &target.labels {
        Some(_) => {
            let r = evaluate(model, target)?;
            (Some(r.accuracy), Some(r.weighted_f1))
        }
        None => (None, None),
    };
    Ok(EvalSummary {
        source_accuracy,
        target_accuracy,
        target_weighted_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DatasetConfig;
    use crate::tape::cross_entropy;

    fn small_config(total_steps: u64) -> IimtConfig {
        IimtConfig::from_toml(&format!(
            r#"
seed = 11

[model]
hidden = [8]
embedding_dim = 4

[train]
batch_size = 8
total_steps = {total_steps}

[dataset]
kind = "two-moons"
n = 32
noise = 0.1
target_rotation_deg = 30.0
"#
        ))
        .unwrap()
    }

    fn datasets(cfg: &IimtConfig) -> (DomainDataset<f64>, DomainDataset<f64>) {
        crate::config::resolve_datasets(&cfg.dataset, cfg.seed).unwrap()
    }

    #[test]
    fn schedule_follows_the_ramp() {
        assert_eq!(w_t_schedule(0, 2.0, 10).unwrap(), 0.0);
        assert_eq!(w_t_schedule(5, 2.0, 10).unwrap(), 1.0);
        assert_eq!(w_t_schedule(10, 2.0, 10).unwrap(), 2.0);
        assert_eq!(w_t_schedule(500, 2.0, 10).unwrap(), 2.0);
        assert!(w_t_schedule(3, 1.0, 0).is_err());
    }

    #[test]
    fn schedule_is_non_decreasing_and_clamped() {
        let mut last = -1.0;
        for step in 0..100 {
            let v = w_t_schedule(step, 1.5, 37).unwrap();
            assert!(v >= last && v <= 1.5);
            last = v;
        }
    }

    #[test]
    fn zero_steps_returns_initial_parameters() {
        let cfg = small_config(0);
        let (src, tgt) = datasets(&cfg);
        let run = train(&cfg, &src, &tgt).unwrap();
        let fresh = ModelBundle::<f64>::init(
            cfg.model_spec(src.feature_dim(), src.class_count),
            cfg.seed,
        )
        .unwrap();
        assert_eq!(run.model, fresh);
        assert!(run.reports.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = small_config(6);
        let (src, tgt) = datasets(&cfg);
        let a = train(&cfg, &src, &tgt).unwrap();
        let b = train(&cfg, &src, &tgt).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.reports, b.reports);
    }

    #[test]
    fn step_totals_match_weighted_sums() {
        let mut cfg = small_config(6);
        cfg.weights.q = 0.7;
        cfg.weights.z = 1.3;
        let (src, tgt) = datasets(&cfg);
        let run = train(&cfg, &src, &tgt).unwrap();
        for r in &run.reports {
            let expected = cfg.weights.q * r.loss_q
                + cfg.weights.d * r.loss_d
                + cfg.weights.z * r.loss_z
                + cfg.weights.s * r.loss_s
                + r.w_t * r.loss_t;
            let denom = expected.abs().max(1.0);
            assert!(
                (r.total - expected).abs() / denom < 1e-5,
                "step {}: {} vs {}",
                r.step,
                r.total,
                expected
            );
        }
    }

    #[test]
    fn all_zero_weights_give_zero_loss_and_frozen_params() {
        let mut cfg = small_config(3);
        cfg.weights = crate::config::WeightsConfig {
            q: 0.0,
            d: 0.0,
            z: 0.0,
            s: 0.0,
            t_max: 0.0,
        };
        let (src, tgt) = datasets(&cfg);
        let run = train(&cfg, &src, &tgt).unwrap();
        let fresh = ModelBundle::<f64>::init(
            cfg.model_spec(src.feature_dim(), src.class_count),
            cfg.seed,
        )
        .unwrap();
        assert_eq!(run.model, fresh, "zero gradients leave params unchanged");
        assert!(run.reports.iter().all(|r| r.total == 0.0));
    }

    #[test]
    fn doubling_weights_doubles_total_and_gradients() {
        let cfg = small_config(1);
        let mut cfg2 = cfg.clone();
        cfg2.weights.q = 2.0;
        cfg2.weights.d = 2.0;
        cfg2.weights.z = 2.0;
        cfg2.weights.s = 2.0;
        cfg2.weights.t_max = 2.0;
        // sgd makes param deltas proportional to gradients
        cfg2.optimizer.kind = crate::optim::OptimizerKind::Sgd;
        let mut cfg1 = cfg;
        cfg1.optimizer.kind = crate::optim::OptimizerKind::Sgd;

        let (src, tgt) = datasets(&cfg1);
        let run1 = train(&cfg1, &src, &tgt).unwrap();
        let run2 = train(&cfg2, &src, &tgt).unwrap();
        assert!((run2.reports[0].total - 2.0 * run1.reports[0].total).abs() < 1e-9);

        let init = ModelBundle::<f64>::init(
            cfg1.model_spec(src.feature_dim(), src.class_count),
            cfg1.seed,
        )
        .unwrap();
        for ((p1, p2), p0) in run1
            .model
            .params()
            .iter()
            .zip(run2.model.params())
            .zip(init.params())
        {
            for ((a, b), z) in p1.data().iter().zip(p2.data()).zip(p0.data()) {
                let (d1, d2) = (a - z, b - z);
                assert!((d2 - 2.0 * d1).abs() < 1e-9, "{d1} vs {d2}");
            }
        }
    }

    #[test]
    fn source_only_reduction_matches_plain_supervised_training() {
        // w_q = w_d = w_z = w_t = 0 with unit lambda must produce exactly
        // the gradients of supervised cross-entropy on the source batch.
        let mut cfg = small_config(5);
        cfg.weights = crate::config::WeightsConfig {
            q: 0.0,
            d: 0.0,
            z: 0.0,
            s: 1.0,
            t_max: 0.0,
        };
        cfg.train.force_unit_lambda = true;
        let (src, tgt) = datasets(&cfg);
        let run = train(&cfg, &src, &tgt).unwrap();

        // independent supervised loop over the same batch stream
        let spec = cfg.model_spec(src.feature_dim(), src.class_count);
        let mut model = ModelBundle::<f64>::init(spec, cfg.seed).unwrap();
        let names = model.param_names();
        let mut opt = Optimizer::new(cfg.optimizer.kind, cfg.optimizer.lr);
        let mut sampler = PairSampler::new(&src, &tgt, cfg.train.batch_size, cfg.seed).unwrap();
        for step in 0..5 {
            let pair = sampler.batch_at(step);
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let x = tape.constant(pair.source.x.clone());
            let y = tape.constant(pair.source.y.clone());
            let p = bound.classify(&mut tape, x).unwrap();
            let ce = cross_entropy(&mut tape, y, p).unwrap();
            let total = tape.scale(ce, 1.0);
            tape.backward(total).unwrap();
            let grads: Vec<Tensor<f64>> = bound
                .param_vars()
                .iter()
                .map(|&v| tape.grad(v).unwrap().clone())
                .collect();
            let grad_refs: Vec<&Tensor<f64>> = grads.iter().collect();
            opt.step(&mut model.params_mut(), &grad_refs, &names).unwrap();
        }
        assert_eq!(run.model, model);
    }

    #[test]
    fn divergence_aborts_with_step() {
        let mut cfg = small_config(50);
        cfg.optimizer.lr = 1e4; // blow up quickly
        let (src, tgt) = datasets(&cfg);
        match train(&cfg, &src, &tgt) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(8);
        cfg.train.checkpoint_every = 4;
        let (src, tgt) = datasets(&cfg);

        let straight = train(&cfg, &src, &tgt).unwrap();

        let opts = TrainOptions {
            checkpoint_dir: Some(dir.path()),
            ..TrainOptions::default()
        };
        let _ = train_with_options(&cfg, &src, &tgt, opts).unwrap();
        let hash = cfg.content_hash().unwrap();
        let ckpt_path = dir.path().join(checkpoint_file_name(4, &hash));
        let ckpt = crate::checkpoint::load_checkpoint::<f64>(&ckpt_path).unwrap();
        assert_eq!(ckpt.step, 4);

        let resumed = train_with_options(
            &cfg,
            &src,
            &tgt,
            TrainOptions {
                resume: Some(ckpt),
                ..TrainOptions::default()
            },
        )
        .unwrap();
        assert_eq!(resumed.model, straight.model);
        let tail: Vec<_> = straight.reports[4..].to_vec();
        assert_eq!(resumed.reports, tail);
    }

    #[test]
    fn resume_rejects_other_configs() {
        let cfg = small_config(4);
        let (src, tgt) = datasets(&cfg);
        let run = train(&cfg, &src, &tgt).unwrap();
        let ckpt = Checkpoint {
            step: 2,
            config_hash: vec![1, 2, 3],
            model: run.model,
            optimizer: run.optimizer,
        };
        let err = train_with_options(
            &cfg,
            &src,
            &tgt,
            TrainOptions {
                resume: Some(ckpt),
                ..TrainOptions::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn dataset_config_is_exercised() {
        // guards the test fixture itself: resolve -> train end to end
        let cfg = small_config(2);
        assert!(matches!(cfg.dataset, DatasetConfig::TwoMoons { .. }));
        let (src, tgt) = datasets(&cfg);
        let run = train(&cfg, &src, &tgt).unwrap();
        assert!(run.target_eval.is_some());
        assert_eq!(run.reports.len(), 2);
        assert!(run.reports.last().unwrap().eval.is_some());
    }
}
