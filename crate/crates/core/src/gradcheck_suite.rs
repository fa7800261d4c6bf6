//! Finite-difference verification of every training loss on a small random
//! model. Backs the `gradcheck` CLI command and the acceptance suite.
//!
//! The adversarial loss and the total contain a gradient-reversal layer, so
//! for encoder parameters the expected tape gradient is `-mu` times the true
//! derivative of that term; the suite folds this into the expected side
//! rather than weakening the tolerance.

use rand::Rng;

use crate::data::augment::AugmentationPolicy;
use crate::data::LabeledBatch;
use crate::error::Result;
use crate::gradcheck::{compare_gradients, fd_gradients, tape_gradients};
use crate::losses::{
    loss_d, loss_intra_source, loss_intra_target, loss_q, loss_z, sample_lambda_prime,
    sample_partner_permutation, virtual_labels, MixParams,
};
use crate::models::{ModelBundle, ModelSpec};
use crate::rng::{stream_rng, StreamTag};
use crate::tape::{Tape, Var};
use crate::tensor::{one_hot, Tensor};

#[derive(Debug, Clone)]
pub struct SuiteCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub passed: bool,
    /// For the negative control, failing is the expected outcome.
    pub expected_to_fail: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub tolerance: f64,
    pub checks: Vec<SuiteCheck>,
}

impl SuiteOutcome {
    /// True when every check behaved as expected (normal checks pass, the
    /// injected-bug control fails).
    pub fn all_good(&self) -> bool {
        self.checks
            .iter()
            .all(|c| c.passed != c.expected_to_fail)
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Run only the named check ("loss_q", ..., "total").
    pub scope: Option<String>,
    /// Add a check wired through a deliberately corrupted backward rule; it
    /// must fail, proving the oracle can catch bugs.
    pub inject_bug: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 7,
            step: 1e-5,
            tolerance: 1e-4,
            scope: None,
            inject_bug: false,
        }
    }
}

pub const CHECK_NAMES: [&str; 6] = ["loss_q", "loss_z", "loss_d", "loss_s", "loss_t", "total"];

struct Fixture {
    model: ModelBundle<f64>,
    names: Vec<String>,
    params: Vec<(String, Tensor<f64>)>,
    source: LabeledBatch<f64>,
    target_x: Tensor<f64>,
    q_target: Tensor<f64>,
    lambda: Vec<f64>,
    lambda_s: Vec<f64>,
    lambda_t: Vec<f64>,
    partner_s: Vec<usize>,
    partner_t: Vec<usize>,
    mixed_st: Tensor<f64>,
    mixed_ts: Tensor<f64>,
    mu: f64,
}

fn build_fixture(seed: u64) -> Result<Fixture> {
    let spec = ModelSpec {
        input_dim: 2,
        hidden: vec![6],
        embedding_dim: 4,
        class_count: 3,
        disc_hidden: 8,
    };
    let batch = 6;
    let model = ModelBundle::<f64>::init(spec, seed)?;
    let mut rng = stream_rng(seed, StreamTag::DatasetGen, 30);
    let x_data: Vec<f64> = (0..batch * 2).map(|_| rng.random_range(-1.5..1.5)).collect();
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..3)).collect();
    let source = LabeledBatch {
        x: Tensor::new(vec![batch, 2], x_data)?,
        y: one_hot(&labels, 3)?,
    };
    let t_data: Vec<f64> = (0..batch * 2).map(|_| rng.random_range(-1.5..1.5)).collect();
    let target_x = Tensor::new(vec![batch, 2], t_data)?;

    // Virtual labels are frozen here: they are constants of every loss.
    let mix = MixParams {
        alpha: 0.75,
        temperature: 0.5,
        k_augment: 2,
    };
    let q_target = virtual_labels(&model, &target_x, &AugmentationPolicy::empty(), &mix, seed)?.q;

    let lambda = sample_lambda_prime(0.75, &mut stream_rng(seed, StreamTag::LambdaInter, 0), batch)?;
    let lambda_s =
        sample_lambda_prime(0.75, &mut stream_rng(seed, StreamTag::LambdaIntraSource, 0), batch)?;
    let lambda_t =
        sample_lambda_prime(0.75, &mut stream_rng(seed, StreamTag::LambdaIntraTarget, 0), batch)?;
    let partner_s =
        sample_partner_permutation(&mut stream_rng(seed, StreamTag::PartnerSource, 0), batch);
    let partner_t =
        sample_partner_permutation(&mut stream_rng(seed, StreamTag::PartnerTarget, 0), batch);
    let mixed_st = Tensor::mix_rows(&source.x, &target_x, &lambda)?;
    let mixed_ts = Tensor::mix_rows(&target_x, &source.x, &lambda)?;

    let names = model.param_names();
    let params = names
        .iter()
        .cloned()
        .zip(model.params().into_iter().cloned())
        .collect();
    Ok(Fixture {
        model,
        names,
        params,
        source,
        target_x,
        q_target,
        lambda,
        lambda_s,
        lambda_t,
        partner_s,
        partner_t,
        mixed_st,
        mixed_ts,
        mu: 1.0,
    })
}

enum LossKind {
    Q,
    Z,
    D,
    S,
    T,
    /// Everything except the adversarial term.
    Rest,
    Total,
}

fn build_loss(fx: &Fixture, kind: &LossKind, tape: &mut Tape<f64>, vars: &[Var]) -> Result<Var> {
    let bound = ModelBundle::bound_from_vars(&fx.model.spec, vars);
    match kind {
        LossKind::Q => loss_q(
            tape,
            &bound,
            &fx.source,
            &fx.target_x,
            &fx.q_target,
            &fx.lambda,
        ),
        LossKind::Z => loss_z(
            tape,
            &bound,
            &fx.source.x,
            &fx.target_x,
            &fx.mixed_st,
            &fx.mixed_ts,
            &fx.lambda,
        ),
        LossKind::D => loss_d(tape, &bound, &fx.mixed_st, &fx.mixed_ts, fx.mu),
        LossKind::S => loss_intra_source(tape, &bound, &fx.source, &fx.lambda_s, &fx.partner_s),
        LossKind::T => loss_intra_target(
            tape,
            &bound,
            &fx.target_x,
            &fx.q_target,
            &fx.lambda_t,
            &fx.partner_t,
        ),
        LossKind::Rest => {
            let q = build_loss(fx, &LossKind::Q, tape, vars)?;
            let z = build_loss(fx, &LossKind::Z, tape, vars)?;
            let s = build_loss(fx, &LossKind::S, tape, vars)?;
            let t = build_loss(fx, &LossKind::T, tape, vars)?;
            let qz = tape.add(q, z)?;
            let st = tape.add(s, t)?;
            tape.add(qz, st)
        }
        LossKind::Total => {
            let rest = build_loss(fx, &LossKind::Rest, tape, vars)?;
            let d = build_loss(fx, &LossKind::D, tape, vars)?;
            tape.add(rest, d)
        }
    }
}

fn scale_for_reversal(fx: &Fixture, fd: &mut [Tensor<f64>], names: &[String]) {
    for (name, grad) in names.iter().zip(fd.iter_mut()) {
        if name.starts_with("encoder") {
            *grad = grad.map(|v| -fx.mu * v);
        }
    }
}

fn check_one(fx: &Fixture, name: &'static str, opts: &SuiteOptions) -> Result<SuiteCheck> {
    let kind = match name {
        "loss_q" => LossKind::Q,
        "loss_z" => LossKind::Z,
        "loss_d" => LossKind::D,
        "loss_s" => LossKind::S,
        "loss_t" => LossKind::T,
        _ => LossKind::Total,
    };

    let report = match kind {
        LossKind::D => {
            let build = |tape: &mut Tape<f64>, vars: &[Var]| build_loss(fx, &LossKind::D, tape, vars);
            let (_, analytic) = tape_gradients(&fx.params, &build)?;
            let mut expected = fd_gradients(&fx.params, &build, opts.step)?;
            scale_for_reversal(fx, &mut expected, &fx.names);
            compare_gradients(&fx.names, &analytic, &expected, opts.tolerance)
        }
        LossKind::Total => {
            let build_total =
                |tape: &mut Tape<f64>, vars: &[Var]| build_loss(fx, &LossKind::Total, tape, vars);
            let build_rest =
                |tape: &mut Tape<f64>, vars: &[Var]| build_loss(fx, &LossKind::Rest, tape, vars);
            let build_d =
                |tape: &mut Tape<f64>, vars: &[Var]| build_loss(fx, &LossKind::D, tape, vars);
            let (_, analytic) = tape_gradients(&fx.params, &build_total)?;
            let rest_fd = fd_gradients(&fx.params, &build_rest, opts.step)?;
            let mut d_fd = fd_gradients(&fx.params, &build_d, opts.step)?;
            scale_for_reversal(fx, &mut d_fd, &fx.names);
            let expected: Vec<Tensor<f64>> = rest_fd
                .into_iter()
                .zip(d_fd)
                .map(|(mut r, d)| {
                    r.add_assign(&d);
                    r
                })
                .collect();
            compare_gradients(&fx.names, &analytic, &expected, opts.tolerance)
        }
        other => {
            let build =
                move |tape: &mut Tape<f64>, vars: &[Var]| build_loss(fx, &other, tape, vars);
            let (_, analytic) = tape_gradients(&fx.params, &build)?;
            let fd = fd_gradients(&fx.params, &build, opts.step)?;
            compare_gradients(&fx.names, &analytic, &fd, opts.tolerance)
        }
    };

    Ok(SuiteCheck {
        name,
        max_rel_err: report.max_rel_err,
        passed: report.passed(),
        expected_to_fail: false,
    })
}

/// A loss routed through a backward rule that is wrong on purpose. The
/// oracle must flag it; a pass here would mean the suite cannot catch bugs.
fn check_injected_bug(fx: &Fixture, opts: &SuiteOptions) -> Result<SuiteCheck> {
    let x = fx.source.x.clone();
    let build = move |tape: &mut Tape<f64>, vars: &[Var]| {
        let xv = tape.constant(x.clone());
        let pre = tape.matmul(xv, vars[0])?;
        let act = tape.relu_broken_grad(pre)?;
        let sq = tape.mul(act, act)?;
        Ok(tape.sum_all(sq))
    };
    let first = vec![fx.params[0].clone()];
    let (_, analytic) = tape_gradients(&first, &build)?;
    let fd = fd_gradients(&first, &build, opts.step)?;
    let report = compare_gradients(
        &[fx.params[0].0.clone()],
        &analytic,
        &fd,
        opts.tolerance,
    );
    Ok(SuiteCheck {
        name: "injected-bug",
        max_rel_err: report.max_rel_err,
        passed: report.passed(),
        expected_to_fail: true,
    })
}

pub fn run_gradcheck_suite(opts: &SuiteOptions) -> Result<SuiteOutcome> {
    let fx = build_fixture(opts.seed)?;
    let mut checks = Vec::new();
    for name in CHECK_NAMES {
        if let Some(scope) = &opts.scope {
            if scope != name {
                continue;
            }
        }
        checks.push(check_one(&fx, name, opts)?);
    }
    if opts.inject_bug {
        checks.push(check_injected_bug(&fx, opts)?);
    }
    Ok(SuiteOutcome {
        tolerance: opts.tolerance,
        checks,
    })
}
