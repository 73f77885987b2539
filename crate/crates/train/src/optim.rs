//! SGD with momentum and Adam, stepping a parameter store in place.
//!
//! Gradients arrive as one optional slice per store entry, indexed like the
//! store itself; `None` marks entries with no gradient this step (buffers,
//! or parameters cut off by the graph). Weight decay couples into the
//! gradient before the moment updates for both rules. Arithmetic runs in
//! f64 and lands in the f32 parameters, so update order inside a tensor
//! cannot perturb the result.

use tinyseg_core::error::{Error, Result};
use tinyseg_core::params::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd_default() -> OptimizerKind {
        OptimizerKind::Sgd { momentum: 0.9 }
    }

    pub fn adam_default() -> OptimizerKind {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            OptimizerKind::Sgd { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::config(format!(
                        "sgd momentum must be in [0, 1), got {momentum}"
                    )));
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(Error::config(format!(
                        "adam betas must be in [0, 1), got {beta1} and {beta2}"
                    )));
                }
                if !(eps > 0.0) {
                    return Err(Error::config(format!("adam eps must be positive, got {eps}")));
                }
            }
        }
        Ok(())
    }
}

pub struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f64,
    /// First moment per store entry (SGD velocity, Adam m), allocated lazily.
    moment1: Vec<Option<Vec<f64>>>,
    /// Second moment per store entry, Adam only.
    moment2: Vec<Option<Vec<f64>>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64, store: &ParamStore) -> Result<Optimizer> {
        kind.validate()?;
        if !(weight_decay >= 0.0) || !weight_decay.is_finite() {
            return Err(Error::config(format!(
                "weight decay must be non-negative and finite, got {weight_decay}"
            )));
        }
        Ok(Optimizer {
            kind,
            weight_decay,
            moment1: vec![None; store.len()],
            moment2: vec![None; store.len()],
            steps: 0,
        })
    }

    /// Applies one update. `grads[i]` belongs to store entry `i`; a `None`
    /// leaves that entry untouched and its moments undisturbed.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Vec<f32>>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::shape(format!(
                "got {} gradient slots for {} store entries",
                grads.len(),
                store.len()
            )));
        }
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::numeric(format!("learning rate {lr} is unusable")));
        }
        self.steps += 1;
        for (i, (_, entry)) in store.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            if !entry.trainable {
                return Err(Error::usage(format!(
                    "gradient supplied for non-trainable entry {}",
                    entry.name
                )));
            }
            if g.len() != entry.tensor.numel() {
                return Err(Error::shape(format!(
                    "gradient for {} has {} values, parameter has {}",
                    entry.name,
                    g.len(),
                    entry.tensor.numel()
                )));
            }
            let n = g.len();
            let m1 = self.moment1[i].get_or_insert_with(|| vec![0.0; n]);
            let data = entry.tensor.data_mut();
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    for j in 0..n {
                        let p = data[j] as f64;
                        let gj = g[j] as f64 + self.weight_decay * p;
                        m1[j] = momentum * m1[j] + gj;
                        data[j] = (p - lr * m1[j]) as f32;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m2 = self.moment2[i].get_or_insert_with(|| vec![0.0; n]);
                    let c1 = 1.0 - beta1.powi(self.steps as i32);
                    let c2 = 1.0 - beta2.powi(self.steps as i32);
                    for j in 0..n {
                        let p = data[j] as f64;
                        let gj = g[j] as f64 + self.weight_decay * p;
                        m1[j] = beta1 * m1[j] + (1.0 - beta1) * gj;
                        m2[j] = beta2 * m2[j] + (1.0 - beta2) * gj * gj;
                        let mh = m1[j] / c1;
                        let vh = m2[j] / c2;
                        data[j] = (p - lr * mh / (vh.sqrt() + eps)) as f32;
                    }
                }
            }
        }
        Ok(())
    }
}
