use super::matrix::DenseMatrix;
use super::model::{Layer, ModelParams};
use crate::error::{Error, Result};

/// Activations of every layer. `activations[0]` is the input batch, the last
/// entry is the logits, everything in between is post-ReLU.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub activations: Vec<DenseMatrix>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &DenseMatrix {
        self.activations.last().expect("trace holds at least the input")
    }

    pub fn into_logits(mut self) -> DenseMatrix {
        self.activations.pop().expect("trace holds at least the input")
    }
}

pub fn forward(model: &ModelParams, batch: &DenseMatrix) -> Result<ForwardTrace> {
    if batch.cols() != model.in_dim() {
        return Err(Error::shape(
            "forward",
            format!("batch with {} input columns", model.in_dim()),
            format!("{} columns", batch.cols()),
        ));
    }
    let n = model.layers().len();
    let mut activations = Vec::with_capacity(n + 1);
    activations.push(batch.clone());
    for (i, layer) in model.layers().iter().enumerate() {
        let mut z = activations[i].matmul(&layer.weight)?;
        z.add_row(&layer.bias)?;
        if i + 1 < n {
            z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        activations.push(z);
    }
    Ok(ForwardTrace { activations })
}

/// Logits only.
pub fn predict(model: &ModelParams, batch: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(forward(model, batch)?.into_logits())
}

/// Backpropagates `d_logits` (gradient of the loss w.r.t. the logits) through
/// the trace and returns parameter gradients shaped like `model`.
pub fn backward(model: &ModelParams, trace: &ForwardTrace, d_logits: &DenseMatrix) -> Result<ModelParams> {
    let logits = trace.logits();
    if d_logits.shape() != logits.shape() {
        return Err(Error::shape(
            "backward",
            format!("{}x{}", logits.rows(), logits.cols()),
            format!("{}x{}", d_logits.rows(), d_logits.cols()),
        ));
    }
    let layers = model.layers();
    let mut grads: Vec<Layer> = Vec::with_capacity(layers.len());
    let mut delta = d_logits.clone();
    for i in (0..layers.len()).rev() {
        let input = &trace.activations[i];
        let weight = input.t_matmul(&delta)?;
        let bias = delta.sum_rows();
        if i > 0 {
            let mut prev = delta.matmul_t(&layers[i].weight)?;
            // ReLU mask: the post-activation is positive exactly where the pre-activation was.
            for (d, &a) in prev.data_mut().iter_mut().zip(input.data()) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = prev;
        }
        grads.push(Layer { weight, bias });
    }
    grads.reverse();
    ModelParams::new(grads)
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy(model: &ModelParams, batch: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    if batch.rows() == 0 {
        return Err(Error::invalid("accuracy of an empty batch"));
    }
    if labels.len() != batch.rows() {
        return Err(Error::shape("accuracy", batch.rows(), format!("{} labels", labels.len())));
    }
    let logits = predict(model, batch)?;
    Ok(accuracy_from_logits(&logits, labels))
}

pub fn accuracy_from_logits(logits: &DenseMatrix, labels: &[usize]) -> f64 {
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| logits.argmax_row(r) == y)
        .count();
    correct as f64 / labels.len() as f64
}
