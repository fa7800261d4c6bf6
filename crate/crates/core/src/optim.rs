//! SGD and Adam parameter updates over named tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        /// Completed steps; drives bias correction.
        t: u64,
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
    },
}

impl<T: Scalar> Optimizer<T> {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(lr),
            OptimizerKind::Adam => Self::adam(lr),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::Sgd { .. } => OptimizerKind::Sgd,
            Optimizer::Adam { .. } => OptimizerKind::Adam,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } | Optimizer::Adam { lr, .. } => *lr,
        }
    }

    /// Apply one update. `params` and `grads` are parallel, in a fixed
    /// order that must not change across steps (moment buffers are
    /// positional). `names` only feeds diagnostics.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[&Tensor<T>],
        names: &[String],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "optimizer step: {} params vs {} grads",
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params[i].shape() {
                return Err(Error::dims(
                    format!("optimizer step for {}", names[i]),
                    params[i].shape(),
                    g.shape(),
                ));
            }
            if !g.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for parameter {}",
                    names[i]
                )));
            }
        }

        match self {
            Optimizer::Sgd { lr } => {
                let lr = T::from_f64(*lr);
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * *gv;
                    }
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                t,
                m,
                v,
            } => {
                if m.is_empty() {
                    *m = grads.iter().map(|g| Tensor::zeros(g.shape().to_vec())).collect();
                    *v = grads.iter().map(|g| Tensor::zeros(g.shape().to_vec())).collect();
                }
                if m.len() != grads.len() {
                    return Err(Error::Contract(format!(
                        "optimizer state for {} params, got {}",
                        m.len(),
                        grads.len()
                    )));
                }
                *t += 1;
                let bc1 = 1.0 - beta1.powi(*t as i32);
                let bc2 = 1.0 - beta2.powi(*t as i32);
                let (b1, b2) = (T::from_f64(*beta1), T::from_f64(*beta2));
                let one_m_b1 = T::from_f64(1.0 - *beta1);
                let one_m_b2 = T::from_f64(1.0 - *beta2);
                for ((p, g), (mi, vi)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(m.iter_mut().zip(v.iter_mut()))
                {
                    for k in 0..g.numel() {
                        let gv = g.data()[k];
                        let mk = b1 * mi.data()[k] + one_m_b1 * gv;
                        let vk = b2 * vi.data()[k] + one_m_b2 * gv * gv;
                        mi.data_mut()[k] = mk;
                        vi.data_mut()[k] = vk;
                        let m_hat = mk.to_f64() / bc1;
                        let v_hat = vk.to_f64() / bc2;
                        let update = *lr * m_hat / (v_hat.sqrt() + *eps);
                        p.data_mut()[k] -= T::from_f64(update);
                    }
                }
            }
        }
        Ok(())
    }

    /// Flatten optimizer state into named tensors for checkpointing.
    pub fn state_tensors(&self, param_names: &[String]) -> Vec<(String, Tensor<T>)> {
        match self {
            Optimizer::Sgd { .. } => Vec::new(),
            Optimizer::Adam { t, m, v, .. } => {
                let mut out = Vec::with_capacity(m.len() * 2 + 1);
                out.push(("opt.t".to_string(), Tensor::scalar(T::from_f64(*t as f64))));
                for (name, mi) in param_names.iter().zip(m) {
                    out.push((format!("opt.m.{name}"), mi.clone()));
                }
                for (name, vi) in param_names.iter().zip(v) {
                    out.push((format!("opt.v.{name}"), vi.clone()));
                }
                out
            }
        }
    }

    /// Rebuild optimizer state from checkpoint entries.
    pub fn restore_state(
        &mut self,
        param_names: &[String],
        entries: &[(String, Tensor<T>)],
    ) -> Result<()> {
        match self {
            Optimizer::Sgd { .. } => Ok(()),
            Optimizer::Adam { t, m, v, .. } => {
                let find = |name: &str| -> Result<&Tensor<T>> {
                    entries
                        .iter()
                        .find(|(n, _)| n == name)
                        .map(|(_, t)| t)
                        .ok_or_else(|| Error::Format(format!("checkpoint missing {name}")))
                };
                *t = find("opt.t")?.item()?.to_f64() as u64;
                let mut ms = Vec::with_capacity(param_names.len());
                let mut vs = Vec::with_capacity(param_names.len());
                for name in param_names {
                    ms.push(find(&format!("opt.m.{name}"))?.clone());
                    vs.push(find(&format!("opt.v.{name}"))?.clone());
                }
                *m = ms;
                *v = vs;
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn sgd_zero_grad_is_identity() {
        let mut p = Tensor::<f64>::from_rows(&[&[1.0, 2.0]]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(vec![1, 2]);
        Optimizer::sgd(0.1)
            .step(&mut [&mut p], &[&g], &names(1))
            .unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_applies_lr_times_grad() {
        let mut p = Tensor::<f64>::scalar(1.0);
        let g = Tensor::scalar(1.0);
        Optimizer::sgd(0.1)
            .step(&mut [&mut p], &[&g], &names(1))
            .unwrap();
        assert!((p.item().unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // With bias correction, step 1 moves by lr * g/(|g| + eps) for any g.
        for &g0 in &[1e-3, 0.5, 40.0, -7.0] {
            let mut p = Tensor::<f64>::scalar(0.0);
            let g = Tensor::scalar(g0);
            let mut opt = Optimizer::adam(3e-4);
            opt.step(&mut [&mut p], &[&g], &names(1)).unwrap();
            let moved = p.item().unwrap().abs();
            assert!(
                (moved - 3e-4).abs() < 3e-4 * 1e-4,
                "g={g0} moved {moved}"
            );
            assert_eq!(p.item().unwrap().signum(), -g0.signum());
        }
    }

    #[test]
    fn nan_gradient_is_rejected_with_name() {
        let mut p = Tensor::<f64>::scalar(0.0);
        let g = Tensor::scalar(f64::NAN);
        let err = Optimizer::adam(1e-3)
            .step(&mut [&mut p], &[&g], &["encoder.0.weight".to_string()])
            .unwrap_err();
        assert!(err.to_string().contains("encoder.0.weight"));
    }

    #[test]
    fn adam_state_round_trip() {
        let mut p = Tensor::<f64>::scalar(1.0);
        let g = Tensor::scalar(0.3);
        let mut opt = Optimizer::adam(1e-2);
        opt.step(&mut [&mut p], &[&g], &names(1)).unwrap();
        opt.step(&mut [&mut p], &[&g], &names(1)).unwrap();

        let state = opt.state_tensors(&names(1));
        let mut fresh = Optimizer::<f64>::adam(1e-2);
        fresh.restore_state(&names(1), &state).unwrap();

        let mut a = p.clone();
        let mut b = p.clone();
        opt.step(&mut [&mut a], &[&g], &names(1)).unwrap();
        fresh.step(&mut [&mut b], &[&g], &names(1)).unwrap();
        assert_eq!(a, b);
    }
}
