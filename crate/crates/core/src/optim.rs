//! Adam with bias correction, one instance per parameter group.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tensor::{ParamGroup, ParamStore, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TensorError::InvalidArgument(format!("bad Adam settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// In-place update of one parameter at step `t` (1-based).
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    moments: &mut Moments,
    t: u64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for k in 0..param.len() {
        let g = grad[k];
        let m = &mut moments.m[k];
        let v = &mut moments.v[k];
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        param[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Optimiser state for every parameter of one group, keyed by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub group: ParamGroup,
    pub config: AdamConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(group: ParamGroup, config: AdamConfig) -> Self {
        Self {
            group,
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies the accumulated gradients of this group's parameters.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), TensorError> {
        self.config.validate()?;
        self.step += 1;
        for id in store.ids_in_group(self.group) {
            let p = store.get_mut(id);
            let n = p.value.len();
            let moments = self.moments.entry(p.name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            if moments.m.len() != n || moments.v.len() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    left: vec![moments.m.len()],
                    right: vec![n],
                });
            }
            let grad = p.grad.data().to_vec();
            adam_update(p.value.data_mut(), &grad, moments, self.step, &self.config);
        }
        Ok(())
    }
}

/// Both optimisers, as saved alongside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub backbone: Adam,
    pub head: Adam,
}

impl OptimizerState {
    pub fn new(backbone: AdamConfig, head: AdamConfig) -> Self {
        Self {
            backbone: Adam::new(ParamGroup::Backbone, backbone),
            head: Adam::new(ParamGroup::Head, head),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), TensorError> {
        self.backbone.step(store)?;
        self.head.step(store)
    }
}
