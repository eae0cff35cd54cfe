use super::model::ModelParams;
use crate::error::{Error, Result};

/// SGD with classical momentum. Weight decay is folded into the gradient
/// before the momentum update.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: ModelParams,
}

impl SgdState {
    pub fn new(model: &ModelParams, lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::invalid(format!("lr must be >= 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum must be in [0,1), got {momentum}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::invalid(format!("weight_decay must be >= 0, got {weight_decay}")));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            buffers: model.zeros_like(),
        })
    }

    pub fn buffers(&self) -> &ModelParams {
        &self.buffers
    }

    /// Zeroes the momentum buffers and re-shapes them after `model`.
    pub fn reset(&mut self, model: &ModelParams) {
        self.buffers = model.zeros_like();
    }
}

/// `g' = g + wd·w; buf = μ·buf + g'; w -= lr·buf`
pub fn sgd_step(model: &mut ModelParams, grads: &ModelParams, state: &mut SgdState) -> Result<()> {
    model.check_same_shape("sgd_step grads", grads)?;
    model.check_same_shape("sgd_step buffers", &state.buffers)?;
    let (lr, mu, wd) = (state.lr, state.momentum, state.weight_decay);
    for ((w, g), buf) in model
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.buffers.tensors_mut())
    {
        for ((wi, &gi), bi) in w.data_mut().iter_mut().zip(g.data()).zip(buf.data_mut()) {
            let g_eff = if wd != 0.0 { gi + wd * *wi } else { gi };
            *bi = mu * *bi + g_eff;
            *wi -= lr * *bi;
        }
    }
    Ok(())
}
