//! The training method's core: virtual labels for the unlabeled domain,
//! inter-domain mixup with a feature-level consistency term and an
//! adversarial term, and intra-domain mixup for both domains.
//!
//! Loss inputs that must not feed gradients back into the model — virtual
//! labels, mixed samples, mixed labels, lambda draws — are prepared at value
//! level and enter each tape as constants. Only model parameters are
//! gradient leaves.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::data::augment::{augment, AugmentationPolicy};
use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::models::{BoundModel, ModelBundle};
use crate::tape::{cross_entropy, mse, Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Clamp applied to discriminator outputs inside the adversarial loss.
pub const DISC_EPS: f64 = 1e-7;

/// Mixup / virtual-label hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixParams {
    /// Beta shape; the mixing weight is drawn from Beta(alpha, alpha).
    pub alpha: f64,
    /// Sharpening temperature in (0, 1].
    pub temperature: f64,
    /// Augmented forward passes averaged per virtual label.
    pub k_augment: usize,
}

impl Default for MixParams {
    fn default() -> Self {
        MixParams {
            alpha: 0.75,
            temperature: 0.5,
            k_augment: 2,
        }
    }
}

impl MixParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.temperature > 0.0 && self.temperature <= 1.0) {
            return Err(Error::Config(format!(
                "temperature must be in (0, 1], got {}",
                self.temperature
            )));
        }
        if self.k_augment == 0 {
            return Err(Error::Config("k_augment must be >= 1".into()));
        }
        Ok(())
    }
}

/// Draw `count` mixing weights: `lambda ~ Beta(alpha, alpha)`, then
/// `lambda' = max(lambda, 1 - lambda)`, so the first operand of a mix always
/// dominates.
pub fn sample_lambda_prime<T: Scalar>(
    alpha: f64,
    rng: &mut impl Rng,
    count: usize,
) -> Result<Vec<T>> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be > 0, got {alpha}")));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("beta({alpha}): {e}")))?;
    Ok((0..count)
        .map(|_| {
            let l: f64 = beta.sample(rng);
            T::from_f64(l.max(1.0 - l))
        })
        .collect())
}

/// All-ones lambda vector: mixes degenerate to their dominant operand.
pub fn unit_lambda<T: Scalar>(count: usize) -> Vec<T> {
    vec![T::ONE; count]
}

/// Temperature-sharpen probability rows: `q^(1/T)` renormalized. `T = 1` is
/// the identity; `T < 1` lowers entropy and never moves the argmax.
pub fn sharpen<T: Scalar>(q_bar: &Tensor<T>, temperature: f64) -> Result<Tensor<T>> {
    if !(temperature > 0.0 && temperature <= 1.0) {
        return Err(Error::Config(format!(
            "temperature must be in (0, 1], got {temperature}"
        )));
    }
    check_prob_rows("sharpen", q_bar)?;
    if temperature == 1.0 {
        return Ok(q_bar.clone());
    }
    let inv_t = 1.0 / temperature;
    let (rows, n) = (q_bar.shape()[0], q_bar.shape()[1]);
    let mut data = Vec::with_capacity(rows * n);
    for i in 0..rows {
        let powed: Vec<f64> = q_bar
            .row(i)
            .iter()
            .map(|v| v.to_f64().max(1e-12).powf(inv_t))
            .collect();
        let sum: f64 = powed.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::Numeric(format!("sharpen: row {i} sums to {sum}")));
        }
        data.extend(powed.iter().map(|p| T::from_f64(p / sum)));
    }
    Tensor::new(q_bar.shape().to_vec(), data)
}

fn check_prob_rows<T: Scalar>(what: &str, t: &Tensor<T>) -> Result<()> {
    if t.rank() != 2 {
        return Err(Error::Validation(format!(
            "{what}: expected probability rows, got shape {:?}",
            t.shape()
        )));
    }
    for i in 0..t.shape()[0] {
        let sum: f64 = t.row(i).iter().map(|v| v.to_f64()).sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(Error::Validation(format!(
                "{what}: row {i} sums to {sum}"
            )));
        }
    }
    Ok(())
}

/// Soft labels inferred for unlabeled samples. Gradient-detached: these are
/// plain values, never connected to the tape that trains the model.
#[derive(Debug, Clone)]
pub struct VirtualLabels<T> {
    pub q: Tensor<T>,
}

/// Infer virtual labels for a target batch: average the class predictions
/// over `k_augment` stochastically augmented views, then sharpen.
pub fn virtual_labels<T: Scalar>(
    model: &ModelBundle<T>,
    x_target: &Tensor<T>,
    policy: &AugmentationPolicy,
    mix: &MixParams,
    seed: u64,
) -> Result<VirtualLabels<T>> {
    mix.validate()?;
    let (batch, classes) = (x_target.shape()[0], model.spec.class_count);
    let mut acc = vec![0.0f64; batch * classes];
    for k in 0..mix.k_augment {
        let view = augment(x_target, policy, seed, k as u64)?;
        let probs = model.classify_values(&view)?;
        for (a, p) in acc.iter_mut().zip(probs.data()) {
            *a += p.to_f64();
        }
    }
    let inv_k = 1.0 / mix.k_augment as f64;
    let mean = Tensor::new(
        vec![batch, classes],
        acc.into_iter().map(|v| T::from_f64(v * inv_k)).collect(),
    )?;
    Ok(VirtualLabels {
        q: sharpen(&mean, mix.temperature)?,
    })
}

/// Which domain a mixed sample leans toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dominance {
    Source,
    Target,
}

/// Interpolated samples and soft labels with their per-sample weights.
#[derive(Debug, Clone)]
pub struct MixedBatch<T> {
    pub x: Tensor<T>,
    pub q: Tensor<T>,
    pub lambda: Vec<T>,
    pub dominance: Dominance,
}

fn check_lambda<T: Scalar>(lambda: &[T]) -> Result<()> {
    for &l in lambda {
        let l = l.to_f64();
        if !(0.5..=1.0).contains(&l) {
            return Err(Error::Validation(format!(
                "lambda' {l} outside the dominant range [0.5, 1]"
            )));
        }
    }
    Ok(())
}

/// Cross-domain mixup. Source-dominant batches weight the source sample by
/// `lambda'`; target-dominant batches weight the target sample, which is the
/// same formula with the operands switched.
pub fn mix_inter<T: Scalar>(
    source: &LabeledBatch<T>,
    target_x: &Tensor<T>,
    q_target: &Tensor<T>,
    lambda: &[T],
    dominance: Dominance,
) -> Result<MixedBatch<T>> {
    if source.x.shape()[0] != target_x.shape()[0] {
        return Err(Error::dims(
            "mix_inter batch sizes",
            source.x.shape(),
            target_x.shape(),
        ));
    }
    if lambda.len() != source.x.shape()[0] {
        return Err(Error::Validation(format!(
            "{} lambda values for batch of {}",
            lambda.len(),
            source.x.shape()[0]
        )));
    }
    check_lambda(lambda)?;
    check_prob_rows("mix_inter virtual labels", q_target)?;
    let (x, q) = match dominance {
        Dominance::Source => (
            Tensor::mix_rows(&source.x, target_x, lambda)?,
            Tensor::mix_rows(&source.y, q_target, lambda)?,
        ),
        Dominance::Target => (
            Tensor::mix_rows(target_x, &source.x, lambda)?,
            Tensor::mix_rows(q_target, &source.y, lambda)?,
        ),
    };
    Ok(MixedBatch {
        x,
        q,
        lambda: lambda.to_vec(),
        dominance,
    })
}

fn lift_mixed<T: Scalar>(tape: &mut Tape<T>, batch: &MixedBatch<T>) -> (Var, Var) {
    (
        tape.constant(batch.x.clone()),
        tape.constant(batch.q.clone()),
    )
}

/// Inter-domain mixup classification loss: cross-entropy on the
/// source-dominant mix plus, sharing the same lambda draws, a mean-squared
/// error on the target-dominant mix (squared error tolerates wrong virtual
/// labels better than a log loss).
pub fn loss_q<T: Scalar>(
    tape: &mut Tape<T>,
    model: &BoundModel<T>,
    source: &LabeledBatch<T>,
    target_x: &Tensor<T>,
    q_target: &Tensor<T>,
    lambda: &[T],
) -> Result<Var> {
    let (ce, mse_term) = loss_q_terms(tape, model, source, target_x, q_target, lambda)?;
    tape.add(ce, mse_term)
}

fn loss_q_terms<T: Scalar>(
    tape: &mut Tape<T>,
    model: &BoundModel<T>,
    source: &LabeledBatch<T>,
    target_x: &Tensor<T>,
    q_target: &Tensor<T>,
    lambda: &[T],
) -> Result<(Var, Var)> {
    let st = mix_inter(source, target_x, q_target, lambda, Dominance::Source)?;
    let ts = mix_inter(source, target_x, q_target, lambda, Dominance::Target)?;

    let (x_st, q_st) = lift_mixed(tape, &st);
    let p_st = model.classify(tape, x_st)?;
    let ce = cross_entropy(tape, q_st, p_st)?;

    let (x_ts, q_ts) = lift_mixed(tape, &ts);
    let p_ts = model.classify(tape, x_ts)?;
    let mse_term = mse(tape, q_ts, p_ts)?;
    Ok((ce, mse_term))
}

/// Feature-level consistency: the mix of embeddings should match the
/// embedding of the mixed input, in both dominance directions. Gradients
/// flow into the encoder through both branches.
pub fn loss_z<T: Scalar>(
    tape: &mut Tape<T>,
    model: &BoundModel<T>,
    source_x: &Tensor<T>,
    target_x: &Tensor<T>,
    mixed_st_x: &Tensor<T>,
    mixed_ts_x: &Tensor<T>,
    lambda: &[T],
) -> Result<Var> {
    check_lambda(lambda)?;
    let xs = tape.constant(source_x.clone());
    let xt = tape.constant(target_x.clone());
    let z_s = model.embed(tape, xs)?;
    let z_t = model.embed(tape, xt)?;

    let z_st = tape.mix_rows(z_s, z_t, lambda)?;
    let x_st = tape.constant(mixed_st_x.clone());
    let f_st = model.embed(tape, x_st)?;
    let st_term = mse(tape, z_st, f_st)?;

    let z_ts = tape.mix_rows(z_t, z_s, lambda)?;
    let x_ts = tape.constant(mixed_ts_x.clone());
    let f_ts = model.embed(tape, x_ts)?;
    let ts_term = mse(tape, z_ts, f_ts)?;

    tape.add(st_term, ts_term)
}

/// Domain adversarial loss over two sample populations: the discriminator
/// is trained to emit 1 on `x_pos` (source-dominant) and 0 on `x_neg`
/// (target-dominant); gradient reversal makes the encoder fight it.
///
/// `L_d = -(1/B) Σ [ln D(f(x_pos)) + ln(1 - D(f(x_neg)))]`, with `D` outputs
/// clamped to `[1e-7, 1 - 1e-7]` before the logs.
pub fn loss_d<T: Scalar>(
    tape: &mut Tape<T>,
    model: &BoundModel<T>,
    x_pos: &Tensor<T>,
    x_neg: &Tensor<T>,
    mu: T,
) -> Result<Var> {
    if x_pos.shape() != x_neg.shape() {
        return Err(Error::dims("loss_d batches", x_pos.shape(), x_neg.shape()));
    }
    let batch = x_pos.shape()[0];
    if batch == 0 {
        return Err(Error::Validation("loss_d: empty batch".into()));
    }

    let xp = tape.constant(x_pos.clone());
    let zp = model.embed(tape, xp)?;
    let dp = model.discriminate(tape, zp, mu)?;
    let ln_p = tape.ln_clamped(dp, DISC_EPS, 1.0 - DISC_EPS);

    let xn = tape.constant(x_neg.clone());
    let zn = model.embed(tape, xn)?;
    let dn = model.discriminate(tape, zn, mu)?;
    let ones = tape.constant(Tensor::full(vec![batch, 1], T::ONE));
    let one_minus = tape.sub(ones, dn)?;
    let ln_n = tape.ln_clamped(one_minus, DISC_EPS, 1.0 - DISC_EPS);

    let sp = tape.sum_all(ln_p);
    let sn = tape.sum_all(ln_n);
    let total = tape.add(sp, sn)?;
    Ok(tape.scale(total, T::from_f64(-1.0 / batch as f64)))
}

/// Random partner assignment for within-batch mixup. A plain shuffle:
/// self-pairs are allowed and harmlessly reduce to the supervised term.
pub fn sample_partner_permutation(rng: &mut impl Rng, len: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(rng);
    perm
}

/// Within-source mixup: cross-entropy between mixed labels and predictions
/// on mixed samples.
pub fn loss_intra_source<T: Scalar>(
    tape: &mut Tape<T>,
    model: &BoundModel<T>,
    batch: &LabeledBatch<T>,
    lambda: &[T],
    partner: &[usize],
) -> Result<Var> {
    check_lambda(lambda)?;
    let (x_mixed, y_mixed) = mix_within(&batch.x, &batch.y, lambda, partner)?;
    let xv = tape.constant(x_mixed);
    let yv = tape.constant(y_mixed);
    let p = model.classify(tape, xv)?;
    cross_entropy(tape, yv, p)
}

/// Within-target mixup: squared error between mixed virtual labels and
/// predictions on mixed samples. `q_target` stays a constant.
pub fn loss_intra_target<T: Scalar>(
    tape: &mut Tape<T>,
    model: &BoundModel<T>,
    target_x: &Tensor<T>,
    q_target: &Tensor<T>,
    lambda: &[T],
    partner: &[usize],
) -> Result<Var> {
    check_lambda(lambda)?;
    check_prob_rows("loss_intra_target labels", q_target)?;
    let (x_mixed, q_mixed) = mix_within(target_x, q_target, lambda, partner)?;
    let xv = tape.constant(x_mixed);
    let qv = tape.constant(q_mixed);
    let p = model.classify(tape, xv)?;
    mse(tape, qv, p)
}

fn mix_within<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    lambda: &[T],
    partner: &[usize],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let batch = x.shape()[0];
    if partner.len() != batch || lambda.len() != batch {
        return Err(Error::Validation(format!(
            "intra mix: batch {batch}, {} partners, {} lambdas",
            partner.len(),
            lambda.len()
        )));
    }
    let x_partner = x.gather_rows(partner);
    let y_partner = y.gather_rows(partner);
    Ok((
        Tensor::mix_rows(x, &x_partner, lambda)?,
        Tensor::mix_rows(y, &y_partner, lambda)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;
    use crate::models::ModelSpec;
    use crate::rng::{stream_rng, StreamTag};
    use crate::tensor::one_hot;

    fn tiny_model(seed: u64) -> ModelBundle<f64> {
        ModelBundle::init(
            ModelSpec {
                input_dim: 2,
                hidden: vec![6],
                embedding_dim: 4,
                class_count: 3,
                disc_hidden: 5,
            },
            seed,
        )
        .unwrap()
    }

    fn source_batch() -> LabeledBatch<f64> {
        LabeledBatch {
            x: Tensor::from_rows(&[&[0.4, -0.9], &[1.2, 0.3], &[-0.6, 0.8], &[0.1, 1.5]]).unwrap(),
            y: one_hot(&[0, 2, 1, 0], 3).unwrap(),
        }
    }

    fn target_x() -> Tensor<f64> {
        Tensor::from_rows(&[&[1.0, 0.2], &[-0.3, -0.8], &[0.7, 0.9], &[-1.1, 0.4]]).unwrap()
    }

    fn soft_labels() -> Tensor<f64> {
        Tensor::from_rows(&[
            &[0.6, 0.3, 0.1],
            &[0.2, 0.2, 0.6],
            &[0.1, 0.8, 0.1],
            &[0.3, 0.4, 0.3],
        ])
        .unwrap()
    }

    // ── lambda sampling ─────────────────────────────────────────────────

    #[test]
    fn lambda_prime_in_dominant_range() {
        let mut rng = stream_rng(1, StreamTag::LambdaInter, 0);
        for &alpha in &[0.2, 0.75, 1.0, 4.0] {
            let draws = sample_lambda_prime::<f64>(alpha, &mut rng, 5000).unwrap();
            assert!(draws.iter().all(|&l| (0.5..=1.0).contains(&l)));
        }
    }

    #[test]
    fn huge_alpha_concentrates_at_half() {
        let mut rng = stream_rng(2, StreamTag::LambdaInter, 0);
        let draws = sample_lambda_prime::<f64>(1e4, &mut rng, 2000).unwrap();
        let max = draws.iter().cloned().fold(0.0, f64::max);
        assert!(max < 0.55, "max lambda' {max}");
    }

    #[test]
    fn uniform_alpha_has_expected_mean() {
        // alpha = 1 makes lambda uniform, so E[max(lambda, 1-lambda)] = 3/4.
        let mut rng = stream_rng(3, StreamTag::LambdaInter, 0);
        let draws = sample_lambda_prime::<f64>(1.0, &mut rng, 100_000).unwrap();
        let mean: f64 = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.75).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn invalid_alpha_is_config_error() {
        let mut rng = stream_rng(4, StreamTag::LambdaInter, 0);
        assert!(matches!(
            sample_lambda_prime::<f64>(0.0, &mut rng, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            sample_lambda_prime::<f64>(-1.0, &mut rng, 1),
            Err(Error::Config(_))
        ));
    }

    // ── sharpening ──────────────────────────────────────────────────────

    #[test]
    fn sharpen_identity_at_t1() {
        let q = soft_labels();
        assert_eq!(sharpen(&q, 1.0).unwrap(), q);
    }

    #[test]
    fn sharpen_keeps_uniform_uniform() {
        let u = Tensor::from_rows(&[&[0.25; 4]]).unwrap();
        let s = sharpen(&u, 0.5).unwrap();
        for &v in s.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn sharpen_worked_example() {
        // (0.8, 0.2) at T = 0.5 -> (0.64, 0.04)/0.68
        let q = Tensor::from_rows(&[&[0.8, 0.2]]).unwrap();
        let s = sharpen(&q, 0.5).unwrap();
        assert!((s.data()[0] - 0.9412).abs() < 1e-4);
        assert!((s.data()[1] - 0.0588).abs() < 1e-4);
    }

    #[test]
    fn sharpen_preserves_argmax_and_reduces_entropy() {
        let mut rng = stream_rng(5, StreamTag::LambdaInter, 1);
        for _ in 0..1000 {
            let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let row: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let q = Tensor::from_rows(&[&row]).unwrap();
            let s = sharpen(&q, 0.5).unwrap();
            assert_eq!(q.argmax_rows(), s.argmax_rows());
            let entropy = |t: &Tensor<f64>| -> f64 {
                t.data().iter().map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }).sum()
            };
            assert!(entropy(&s) <= entropy(&q) + 1e-12);
        }
    }

    #[test]
    fn sharpen_handles_hard_rows_via_clamp() {
        let q = Tensor::from_rows(&[&[1.0, 0.0]]).unwrap();
        let s = sharpen(&q, 0.5).unwrap();
        assert!(s.all_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-9);
    }

    // ── virtual labels ──────────────────────────────────────────────────

    #[test]
    fn virtual_labels_reduce_to_plain_forward() {
        let model = tiny_model(7);
        let x = target_x();
        let mix = MixParams {
            alpha: 0.75,
            temperature: 1.0,
            k_augment: 1,
        };
        let vl = virtual_labels(&model, &x, &AugmentationPolicy::empty(), &mix, 3).unwrap();
        assert_eq!(vl.q, model.classify_values(&x).unwrap());
    }

    #[test]
    fn deterministic_views_average_to_single_pass() {
        let model = tiny_model(8);
        let x = target_x();
        let single = MixParams {
            alpha: 0.75,
            temperature: 0.5,
            k_augment: 1,
        };
        let many = MixParams {
            k_augment: 5,
            ..single
        };
        let a = virtual_labels(&model, &x, &AugmentationPolicy::empty(), &single, 3).unwrap();
        let b = virtual_labels(&model, &x, &AugmentationPolicy::empty(), &many, 3).unwrap();
        for (x, y) in a.q.data().iter().zip(b.q.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sharpened_labels_have_no_more_entropy_than_mean() {
        let model = tiny_model(9);
        let mut rng = stream_rng(10, StreamTag::DatasetGen, 7);
        let data: Vec<f64> = (0..200).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Tensor::new(vec![100, 2], data).unwrap();
        let q_bar = model.classify_values(&x).unwrap();
        let q = sharpen(&q_bar, 0.5).unwrap();
        let entropy = |row: &[f64]| -> f64 {
            row.iter().map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }).sum()
        };
        for i in 0..100 {
            assert!(entropy(q.row(i)) <= entropy(q_bar.row(i)) + 1e-12);
        }
    }

    #[test]
    fn virtual_labels_track_parameter_changes() {
        let mut model = tiny_model(11);
        let x = target_x();
        let mix = MixParams::default();
        let before = virtual_labels(&model, &x, &AugmentationPolicy::empty(), &mix, 3).unwrap();
        model.params_mut()[0].data_mut()[0] += 0.5;
        let after = virtual_labels(&model, &x, &AugmentationPolicy::empty(), &mix, 3).unwrap();
        assert_ne!(before.q, after.q);
    }

    // ── inter-domain mixing ─────────────────────────────────────────────

    #[test]
    fn unit_lambda_reduces_to_dominant_operand() {
        let src = source_batch();
        let (tx, q) = (target_x(), soft_labels());
        let lambda = unit_lambda::<f64>(4);
        let st = mix_inter(&src, &tx, &q, &lambda, Dominance::Source).unwrap();
        assert_eq!(st.x, src.x);
        assert_eq!(st.q, src.y);
        let ts = mix_inter(&src, &tx, &q, &lambda, Dominance::Target).unwrap();
        assert_eq!(ts.x, tx);
        assert_eq!(ts.q, q);
    }

    #[test]
    fn midpoint_lambda_makes_dominance_irrelevant() {
        let src = source_batch();
        let (tx, q) = (target_x(), soft_labels());
        let lambda = vec![0.5f64; 4];
        let st = mix_inter(&src, &tx, &q, &lambda, Dominance::Source).unwrap();
        let ts = mix_inter(&src, &tx, &q, &lambda, Dominance::Target).unwrap();
        assert_eq!(st.x, ts.x);
        assert_eq!(st.q, ts.q);
    }

    #[test]
    fn mixed_labels_are_probability_rows() {
        let src = source_batch();
        let (tx, q) = (target_x(), soft_labels());
        let mut rng = stream_rng(6, StreamTag::LambdaInter, 2);
        let lambda = sample_lambda_prime::<f64>(0.75, &mut rng, 4).unwrap();
        let st = mix_inter(&src, &tx, &q, &lambda, Dominance::Source).unwrap();
        for i in 0..4 {
            let sum: f64 = st.q.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn batch_size_mismatch_is_rejected() {
        let src = source_batch();
        let tx = Tensor::from_rows(&[&[0.0, 0.0]]).unwrap();
        let q = Tensor::from_rows(&[&[1.0, 0.0, 0.0]]).unwrap();
        assert!(mix_inter(&src, &tx, &q, &[1.0], Dominance::Source).is_err());
    }

    #[test]
    fn out_of_range_lambda_is_rejected() {
        let src = source_batch();
        let (tx, q) = (target_x(), soft_labels());
        let lambda = vec![0.4f64, 1.0, 1.0, 1.0];
        assert!(matches!(
            mix_inter(&src, &tx, &q, &lambda, Dominance::Source),
            Err(Error::Validation(_))
        ));
    }

    // ── loss_q ──────────────────────────────────────────────────────────

    #[test]
    fn perfectly_fit_model_zeroes_the_ce_term() {
        // Identity encoder + saturated classifier drives the source-dominant
        // cross-entropy term to exactly zero at lambda' = 1.
        let spec = ModelSpec {
            input_dim: 2,
            hidden: vec![],
            embedding_dim: 2,
            class_count: 2,
            disc_hidden: 4,
        };
        let mut model = ModelBundle::<f64>::init(spec.clone(), 1).unwrap();
        model.encoder.layers[0].weight = Tensor::identity(2);
        model.encoder.layers[0].bias = Tensor::zeros(vec![2]);
        model.classifier.layers[0].weight =
            Tensor::from_rows(&[&[60.0, 0.0], &[0.0, 60.0]]).unwrap();
        model.classifier.layers[0].bias = Tensor::zeros(vec![2]);

        let src = LabeledBatch {
            x: Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap(),
            y: one_hot(&[0, 1], 2).unwrap(),
        };
        let tx = Tensor::from_rows(&[&[0.3, 0.3], &[0.2, 0.2]]).unwrap();
        let q = Tensor::from_rows(&[&[0.5, 0.5], &[0.5, 0.5]]).unwrap();

        let mut tape = Tape::new();
        let bound = model.bind_constant(&mut tape);
        let (ce, _) =
            loss_q_terms(&mut tape, &bound, &src, &tx, &q, &unit_lambda(2)).unwrap();
        assert_eq!(tape.scalar_value(ce).unwrap(), 0.0);
    }

    #[test]
    fn uniform_model_gives_ln_c() {
        let mut model = tiny_model(13);
        for p in model.params_mut() {
            *p = Tensor::zeros(p.shape().to_vec());
        }
        let src = source_batch();
        let (tx, q) = (target_x(), soft_labels());
        let mut tape = Tape::new();
        let bound = model.bind_constant(&mut tape);
        let (ce, _) = loss_q_terms(&mut tape, &bound, &src, &tx, &q, &unit_lambda(4)).unwrap();
        assert!((tape.scalar_value(ce).unwrap() - 3.0f64.ln()).abs() < 1e-12);
    }

    fn gradcheck_model_loss(
        model: &ModelBundle<f64>,
        build: impl Fn(&mut Tape<f64>, &BoundModel<f64>) -> Result<Var>,
    ) {
        let names = model.param_names();
        let params: Vec<(String, Tensor<f64>)> = names
            .into_iter()
            .zip(model.params().into_iter().cloned())
            .collect();
        let spec = model.spec.clone();
        let report = finite_diff_check(
            &params,
            move |tape, vars| {
                let bound = ModelBundle::bound_from_vars(&spec, vars);
                build(tape, &bound)
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(
            report.passed(),
            "max relative error {}",
            report.max_rel_err
        );
    }

    #[test]
    fn loss_q_gradient_matches_finite_differences() {
        let model = tiny_model(17);
        let src = source_batch();
        let (tx, q) = (target_x(), soft_labels());
        let mut rng = stream_rng(18, StreamTag::LambdaInter, 0);
        let lambda = sample_lambda_prime::<f64>(0.75, &mut rng, 4).unwrap();
        gradcheck_model_loss(&model, move |tape, bound| {
            loss_q(tape, bound, &src, &tx, &q, &lambda)
        });
    }

    // ── loss_z ──────────────────────────────────────────────────────────

    #[test]
    fn affine_encoder_nullifies_loss_z() {
        let spec = ModelSpec {
            input_dim: 2,
            hidden: vec![],
            embedding_dim: 3,
            class_count: 2,
            disc_hidden: 4,
        };
        let model = ModelBundle::<f64>::init(spec, 23).unwrap();
        let src = source_batch();
        let tx = target_x();
        let mut rng = stream_rng(24, StreamTag::LambdaInter, 0);
        let lambda = sample_lambda_prime::<f64>(0.75, &mut rng, 4).unwrap();
        let st = Tensor::mix_rows(&src.x, &tx, &lambda).unwrap();
        let ts = Tensor::mix_rows(&tx, &src.x, &lambda).unwrap();

        let mut tape = Tape::new();
        let bound = model.bind_constant(&mut tape);
        let lz = loss_z(&mut tape, &bound, &src.x, &tx, &st, &ts, &lambda).unwrap();
        assert!(tape.scalar_value(lz).unwrap().abs() < 1e-10);
    }

    #[test]
    fn unit_lambda_nullifies_loss_z_for_any_encoder() {
        let model = tiny_model(29);
        let src = source_batch();
        let tx = target_x();
        let lambda = unit_lambda::<f64>(4);
        // lambda' = 1 makes x_st = x_s and x_ts = x_t exactly
        let st = Tensor::mix_rows(&src.x, &tx, &lambda).unwrap();
        let ts = Tensor::mix_rows(&tx, &src.x, &lambda).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind_constant(&mut tape);
        let lz = loss_z(&mut tape, &bound, &src.x, &tx, &st, &ts, &lambda).unwrap();
        assert_eq!(tape.scalar_value(lz).unwrap(), 0.0);
    }

    #[test]
    fn loss_z_gradient_matches_finite_differences() {
        let model = tiny_model(31);
        let src = source_batch();
        let tx = target_x();
        let mut rng = stream_rng(32, StreamTag::LambdaInter, 0);
        let lambda = sample_lambda_prime::<f64>(0.75, &mut rng, 4).unwrap();
        let st = Tensor::mix_rows(&src.x, &tx, &lambda).unwrap();
        let ts = Tensor::mix_rows(&tx, &src.x, &lambda).unwrap();
        gradcheck_model_loss(&model, move |tape, bound| {
            loss_z(tape, bound, &src.x, &tx, &st, &ts, &lambda)
        });
    }

    // ── loss_d ──────────────────────────────────────────────────────────

    #[test]
    fn indifferent_discriminator_gives_two_ln_two() {
        let mut model = tiny_model(37);
        for layer in &mut model.discriminator.layers {
            layer.weight = Tensor::zeros(layer.weight.shape().to_vec());
            layer.bias = Tensor::zeros(layer.bias.shape().to_vec());
        }
        let mut tape = Tape::new();
        let bound = model.bind_constant(&mut tape);
        let ld = loss_d(&mut tape, &bound, &source_batch().x, &target_x(), 1.0).unwrap();
        assert!((tape.scalar_value(ld).unwrap() - 2.0 * 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_discriminator_drives_loss_to_zero() {
        // Encoder passes input through; discriminator keys on the first
        // coordinate, which cleanly separates the two populations.
        let spec = ModelSpec {
            input_dim: 2,
            hidden: vec![],
            embedding_dim: 2,
            class_count: 2,
            disc_hidden: 2,
        };
        let mut model = ModelBundle::<f64>::init(spec, 41).unwrap();
        model.encoder.layers[0].weight = Tensor::identity(2);
        model.encoder.layers[0].bias = Tensor::zeros(vec![2]);
        model.discriminator.layers[0].weight =
            Tensor::from_rows(&[&[40.0, -40.0], &[0.0, 0.0]]).unwrap();
        model.discriminator.layers[0].bias = Tensor::zeros(vec![2]);
        model.discriminator.layers[1].weight = Tensor::from_rows(&[&[1.0], &[-1.0]]).unwrap();
        model.discriminator.layers[1].bias = Tensor::zeros(vec![1]);

        let pos = Tensor::from_rows(&[&[2.0, 0.1], &[1.5, -0.2]]).unwrap();
        let neg = Tensor::from_rows(&[&[-2.0, 0.3], &[-1.5, 0.0]]).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind_constant(&mut tape);
        let ld = loss_d(&mut tape, &bound, &pos, &neg, 1.0).unwrap();
        let v = tape.scalar_value(ld).unwrap();
        assert!(v >= 0.0 && v < 0.01, "loss {v}");
    }

    #[test]
    fn encoder_gradient_flips_with_mu_sign() {
        let model = tiny_model(43);
        let (pos, neg) = (source_batch().x, target_x());
        let encoder_grad = |mu: f64| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let ld = loss_d(&mut tape, &bound, &pos, &neg, mu).unwrap();
            tape.backward(ld).unwrap();
            tape.grad(bound.encoder.layers[0].weight).unwrap().clone()
        };
        let forward = encoder_grad(1.0);
        let reversed = encoder_grad(-1.0);
        for (a, b) in forward.data().iter().zip(reversed.data()) {
            assert!((a + b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn loss_d_gradient_matches_finite_differences() {
        // The reversal layer means encoder parameters must match -mu times
        // the true derivative; discriminator parameters match it directly.
        let model = tiny_model(47);
        let (pos, neg) = (source_batch().x, target_x());
        let mu = 1.3;
        let names = model.param_names();
        let params: Vec<(String, Tensor<f64>)> = names
            .iter()
            .cloned()
            .zip(model.params().into_iter().cloned())
            .collect();
        let spec = model.spec.clone();
        let build = move |tape: &mut Tape<f64>, vars: &[Var]| {
            let bound = ModelBundle::bound_from_vars(&spec, vars);
            loss_d(tape, &bound, &pos, &neg, mu)
        };
        let (_, analytic) = crate::gradcheck::tape_gradients(&params, &build).unwrap();
        let mut expected = crate::gradcheck::fd_gradients(&params, &build, 1e-5).unwrap();
        for (name, fd) in names.iter().zip(expected.iter_mut()) {
            if name.starts_with("encoder") {
                *fd = fd.map(|v| -mu * v);
            }
        }
        let report =
            crate::gradcheck::compare_gradients(&names, &analytic, &expected, 1e-4);
        assert!(report.passed(), "max err {}", report.max_rel_err);
    }

    // ── intra-domain losses ─────────────────────────────────────────────

    #[test]
    fn unit_lambda_reduces_source_loss_to_supervised() {
        let model = tiny_model(53);
        let src = source_batch();
        let partner = vec![3, 2, 1, 0];

        let mut tape = Tape::new();
        let bound = model.bind_constant(&mut tape);
        let ls = loss_intra_source(&mut tape, &bound, &src, &unit_lambda(4), &partner).unwrap();

        let mut plain_tape = Tape::new();
        let bound2 = model.bind_constant(&mut plain_tape);
        let xv = plain_tape.constant(src.x.clone());
        let yv = plain_tape.constant(src.y.clone());
        let p = bound2.classify(&mut plain_tape, xv).unwrap();
        let supervised = cross_entropy(&mut plain_tape, yv, p).unwrap();

        assert_eq!(
            tape.scalar_value(ls).unwrap().to_bits(),
            plain_tape.scalar_value(supervised).unwrap().to_bits()
        );
    }

    #[test]
    fn self_partners_reduce_to_supervised_for_any_lambda() {
        let model = tiny_model(59);
        let src = source_batch();
        let partner = vec![0, 1, 2, 3];
        let lambda = vec![0.5, 0.7, 0.9, 0.62];

        let mut tape = Tape::new();
        let bound = model.bind_constant(&mut tape);
        let ls = loss_intra_source(&mut tape, &bound, &src, &lambda, &partner).unwrap();

        let mut tape2 = Tape::new();
        let bound2 = model.bind_constant(&mut tape2);
        let ls_unit = loss_intra_source(&mut tape2, &bound2, &src, &unit_lambda(4), &partner)
            .unwrap();

        let (a, b) = (
            tape.scalar_value(ls).unwrap(),
            tape2.scalar_value(ls_unit).unwrap(),
        );
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn matched_uniform_predictions_zero_target_loss() {
        let mut model = tiny_model(61);
        for p in model.params_mut() {
            *p = Tensor::zeros(p.shape().to_vec());
        }
        let tx = target_x();
        let q = Tensor::full(vec![4, 3], 1.0 / 3.0);
        let mut tape = Tape::new();
        let bound = model.bind_constant(&mut tape);
        let lt = loss_intra_target(&mut tape, &bound, &tx, &q, &[0.8; 4], &[1, 0, 3, 2]).unwrap();
        assert!(tape.scalar_value(lt).unwrap().abs() < 1e-12);
    }

    #[test]
    fn intra_losses_gradients_match_finite_differences() {
        let model = tiny_model(67);
        let src = source_batch();
        let mut rng = stream_rng(68, StreamTag::LambdaIntraSource, 0);
        let lambda = sample_lambda_prime::<f64>(0.75, &mut rng, 4).unwrap();
        let partner = sample_partner_permutation(&mut rng, 4);
        {
            let (src, lambda, partner) = (src.clone(), lambda.clone(), partner.clone());
            gradcheck_model_loss(&model, move |tape, bound| {
                loss_intra_source(tape, bound, &src, &lambda, &partner)
            });
        }
        let (tx, q) = (target_x(), soft_labels());
        gradcheck_model_loss(&model, move |tape, bound| {
            loss_intra_target(tape, bound, &tx, &q, &lambda, &partner)
        });
    }

    #[test]
    fn virtual_labels_stay_detached_in_loss_gradients() {
        // Gradients of L_t must be identical whether q came from the live
        // model or was handed in as a frozen constant with the same values.
        let model = tiny_model(71);
        let tx = target_x();
        let vl = virtual_labels(
            &model,
            &tx,
            &AugmentationPolicy::empty(),
            &MixParams::default(),
            5,
        )
        .unwrap();

        let grads_with = |q: &Tensor<f64>| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let lt =
                loss_intra_target(&mut tape, &bound, &tx, q, &[0.8; 4], &[2, 3, 0, 1]).unwrap();
            tape.backward(lt).unwrap();
            bound
                .param_vars()
                .iter()
                .map(|&v| tape.grad(v).unwrap().clone())
                .collect::<Vec<_>>()
        };
        let live = grads_with(&vl.q);
        let frozen_copy = vl.q.clone();
        let frozen = grads_with(&frozen_copy);
        assert_eq!(live, frozen);
    }

    #[test]
    fn every_loss_is_finite_and_non_negative() {
        let model = tiny_model(73);
        let src = source_batch();
        let (tx, q) = (target_x(), soft_labels());
        let mut rng = stream_rng(74, StreamTag::LambdaInter, 0);
        let lambda = sample_lambda_prime::<f64>(0.75, &mut rng, 4).unwrap();
        let partner = sample_partner_permutation(&mut rng, 4);
        let st = Tensor::mix_rows(&src.x, &tx, &lambda).unwrap();
        let ts = Tensor::mix_rows(&tx, &src.x, &lambda).unwrap();

        let mut tape = Tape::new();
        let bound = model.bind_constant(&mut tape);
        let values = [
            loss_q(&mut tape, &bound, &src, &tx, &q, &lambda).unwrap(),
            loss_z(&mut tape, &bound, &src.x, &tx, &st, &ts, &lambda).unwrap(),
            loss_d(&mut tape, &bound, &st, &ts, 1.0).unwrap(),
            loss_intra_source(&mut tape, &bound, &src, &lambda, &partner).unwrap(),
            loss_intra_target(&mut tape, &bound, &tx, &q, &lambda, &partner).unwrap(),
        ];
        for v in values {
            let val = tape.scalar_value(v).unwrap();
            assert!(val.is_finite() && val >= 0.0, "loss {val}");
        }
    }
}
