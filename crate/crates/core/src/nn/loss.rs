//! Softmax, cross-entropy, KL divergence and the multi-teacher distillation loss.
//!
//! The combined objective for a student `k` with frozen teachers `T` is
//!
//! ```text
//! L = CE(softmax(z_k), y) + λ · Σ_{t∈T} KL(softmax(z_t/τ) ‖ softmax(z_k/τ))
//! ```
//!
//! averaged over the batch. Cross-entropy always uses temperature 1.

use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use super::model::ModelParams;
use super::network::{backward, forward, predict};
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn temp_softmax(logits: &DenseMatrix, tau: f64) -> Result<DenseMatrix> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / tau).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

pub fn ce_loss(probs: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != probs.rows() {
        return Err(Error::shape("ce_loss", probs.rows(), format!("{} labels", labels.len())));
    }
    if probs.rows() == 0 {
        return Err(Error::invalid("ce_loss of an empty batch"));
    }
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= probs.cols() {
            return Err(Error::invalid(format!(
                "label {y} out of range for {} classes",
                probs.cols()
            )));
        }
        total -= probs.get(r, y).max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Which way the divergence between teacher and student is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// KL(teacher ‖ student), the usual distillation objective.
    #[default]
    TeacherStudent,
    /// KL(student ‖ teacher).
    StudentTeacher,
}

fn xlogx_ratio(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p.max(PROB_FLOOR).ln() - q.max(PROB_FLOOR).ln())
    }
}

/// Batch-mean KL(teacher ‖ student).
pub fn kl_loss(teacher: &DenseMatrix, student: &DenseMatrix) -> Result<f64> {
    teacher.check_same_shape("kl_loss", student)?;
    if teacher.rows() == 0 {
        return Err(Error::invalid("kl_loss of an empty batch"));
    }
    let total: f64 = teacher
        .data()
        .iter()
        .zip(student.data())
        .map(|(&t, &s)| xlogx_ratio(t, s))
        .sum();
    Ok(total / teacher.rows() as f64)
}

/// Settings for the distillation terms of [`combined_loss_backward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub lambda: f64,
    pub tau: f64,
    pub direction: KlDirection,
    /// Multiply each KL term by τ².
    pub tau_squared: bool,
}

impl DistillConfig {
    pub fn new(lambda: f64, tau: f64) -> Self {
        Self {
            lambda,
            tau,
            direction: KlDirection::TeacherStudent,
            tau_squared: false,
        }
    }
}

/// Loss and exact gradients of CE plus λ-weighted KL terms against frozen
/// teachers. With no teachers, or `λ == 0`, this is plain cross-entropy.
pub fn combined_loss_backward(
    model: &ModelParams,
    batch: &DenseMatrix,
    labels: &[usize],
    teachers: &[&ModelParams],
    cfg: &DistillConfig,
) -> Result<(f64, ModelParams)> {
    if !(cfg.lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {}", cfg.lambda)));
    }
    if !(cfg.tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {}", cfg.tau)));
    }
    for t in teachers {
        model.check_same_shape_io("combined_loss_backward teacher", t)?;
    }
    let trace = forward(model, batch)?;
    let logits = trace.logits();
    let n = batch.rows() as f64;

    let probs = temp_softmax(logits, 1.0)?;
    let mut loss = ce_loss(&probs, labels)?;
    // dCE/dz = (p - onehot) / n
    let mut d_logits = probs;
    for (r, &y) in labels.iter().enumerate() {
        let v = d_logits.get(r, y);
        d_logits.set(r, y, v - 1.0);
    }
    d_logits.scale(1.0 / n);

    if cfg.lambda != 0.0 && !teachers.is_empty() {
        let student = temp_softmax(logits, cfg.tau)?;
        let weight = if cfg.tau_squared {
            cfg.lambda * cfg.tau * cfg.tau
        } else {
            cfg.lambda
        };
        for teacher in teachers {
            let t_probs = temp_softmax(&predict(teacher, batch)?, cfg.tau)?;
            let (kl, grad) = kl_term(&t_probs, &student, cfg.tau, cfg.direction)?;
            loss += weight * kl;
            d_logits.axpy(weight / n, &grad)?;
        }
    }

    let grads = backward(model, &trace, &d_logits)?;
    Ok((loss, grads))
}

/// Batch-mean KL value and its per-row (un-averaged) gradient w.r.t. the
/// student logits.
fn kl_term(
    teacher: &DenseMatrix,
    student: &DenseMatrix,
    tau: f64,
    direction: KlDirection,
) -> Result<(f64, DenseMatrix)> {
    match direction {
        KlDirection::TeacherStudent => {
            let value = kl_loss(teacher, student)?;
            // d/dz KL(t ‖ softmax(z/τ)) = (s - t) / τ
            let mut grad = student.clone();
            grad.axpy(-1.0, teacher)?;
            grad.scale(1.0 / tau);
            Ok((value, grad))
        }
        KlDirection::StudentTeacher => {
            let value = kl_loss(student, teacher)?;
            // d/dz KL(s ‖ t) = s ⊙ (u - Σ s·u) / τ with u = log s - log t
            let mut grad = DenseMatrix::zeros(student.rows(), student.cols());
            for r in 0..student.rows() {
                let s = student.row(r);
                let t = teacher.row(r);
                let u: Vec<f64> = s
                    .iter()
                    .zip(t)
                    .map(|(&si, &ti)| si.max(PROB_FLOOR).ln() - ti.max(PROB_FLOOR).ln())
                    .collect();
                let mean_u: f64 = s.iter().zip(&u).map(|(si, ui)| si * ui).sum();
                for (g, (si, ui)) in grad.row_mut(r).iter_mut().zip(s.iter().zip(&u)) {
                    *g = si * (ui - mean_u) / tau;
                }
            }
            Ok((value, grad))
        }
    }
}

impl ModelParams {
    fn check_same_shape_io(&self, context: &'static str, other: &ModelParams) -> Result<()> {
        if self.in_dim() != other.in_dim() || self.out_dim() != other.out_dim() {
            return Err(Error::shape(
                context,
                format!("{} -> {}", self.in_dim(), self.out_dim()),
                format!("{} -> {}", other.in_dim(), other.out_dim()),
            ));
        }
        Ok(())
    }
}
