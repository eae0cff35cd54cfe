//! Scalar reference implementation of the MLP and the distillation loss,
//! written with plain loops over a flat parameter vector. It shares no code
//! with the library's matrix path.

use fedckd::nn::{combined_loss_backward, DenseMatrix, DistillConfig, KlDirection, ModelParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
const FLOOR: f64 = 1e-12;

/// Flat layout: w0 (in×out, row-major), b0, w1, b1, ...
pub fn logits(flat: &[f64], dims: &[usize], x: &[f64]) -> (Vec<f64>, f64) {
    let mut act = x.to_vec();
    let mut offset = 0;
    let mut min_abs_pre = f64::INFINITY;
    let layers = dims.len() - 1;
    for l in 0..layers {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let w = &flat[offset..offset + fan_in * fan_out];
        offset += fan_in * fan_out;
        let b = &flat[offset..offset + fan_out];
        offset += fan_out;
        let mut next = vec![0.0; fan_out];
        for j in 0..fan_out {
            let mut z = b[j];
            for i in 0..fan_in {
                z += act[i] * w[i * fan_out + j];
            }
            if l + 1 < layers {
                min_abs_pre = min_abs_pre.min(z.abs());
                z = if z > 0.0 { z } else { 0.0 };
            }
            next[j] = z;
        }
        act = next;
    }
    (act, min_abs_pre)
}

pub fn softmax(z: &[f64], tau: f64) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| ((v - m) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| if a == 0.0 { 0.0 } else { a * (a.max(FLOOR).ln() - b.max(FLOOR).ln()) })
        .sum()
}

pub struct Instance {
    pub dims: Vec<usize>,
    pub model: ModelParams,
    pub teachers: Vec<ModelParams>,
    pub batch: DenseMatrix,
    pub labels: Vec<usize>,
    pub distill: DistillConfig,
}

impl Instance {
    /// Random network with up to `max_layers` layers of at most `max_units`
    /// units, up to `max_batch` samples, 2–5 classes, τ ∈ {1, 3},
    /// λ ∈ {0, 0.5} and 0–2 teachers.
    pub fn random(rng: &mut ChaCha8Rng, max_layers: usize, max_units: usize, max_batch: usize) -> Self {
        let layers = rng.random_range(1..=max_layers);
        let mut dims = vec![rng.random_range(1..=max_units)];
        for _ in 1..layers {
            dims.push(rng.random_range(1..=max_units));
        }
        dims.push(rng.random_range(2..=5.min(max_units.max(2))));
        let model = ModelParams::init(&dims, rng).unwrap();
        let model = jitter_biases(model, rng);
        let n_teachers = rng.random_range(0..=2);
        let teachers = (0..n_teachers)
            .map(|_| ModelParams::init(&dims, rng).unwrap())
            .collect();
        let n = rng.random_range(1..=max_batch);
        let data = (0..n * dims[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let classes = *dims.last().unwrap();
        Self {
            batch: DenseMatrix::new(n, dims[0], data).unwrap(),
            labels: (0..n).map(|_| rng.random_range(0..classes)).collect(),
            distill: DistillConfig {
                lambda: if rng.random_bool(0.5) { 0.0 } else { 0.5 },
                tau: if rng.random_bool(0.5) { 1.0 } else { 3.0 },
                direction: KlDirection::TeacherStudent,
                tau_squared: false,
            },
            dims,
            model,
            teachers,
        }
    }

    pub fn teacher_refs(&self) -> Vec<&ModelParams> {
        self.teachers.iter().collect()
    }

    fn row(&self, r: usize) -> &[f64] {
        self.batch.row(r)
    }

    /// Whether the loss is non-smooth near the current parameters: a hidden
    /// pre-activation sits close to the ReLU kink, or some student
    /// probability is close to the log floor where the clamp takes over.
    pub fn non_smooth(&self) -> bool {
        let flat = self.model.flatten();
        (0..self.batch.rows()).any(|r| {
            let (z, min_pre) = logits(&flat, &self.dims, self.row(r));
            let min_p = softmax(&z, 1.0)
                .into_iter()
                .chain(softmax(&z, self.distill.tau))
                .fold(1.0, f64::min);
            min_pre < 1e-3 || min_p < 1e-9
        })
    }

    pub fn oracle_loss(&self, flat: &[f64]) -> f64 {
        let n = self.batch.rows();
        let DistillConfig {
            lambda,
            tau,
            direction,
            tau_squared,
        } = self.distill;
        let weight = if tau_squared { lambda * tau * tau } else { lambda };
        let mut total = 0.0;
        for r in 0..n {
            let (z, _) = logits(flat, &self.dims, self.row(r));
            let p = softmax(&z, 1.0);
            total -= p[self.labels[r]].max(FLOOR).ln();
            if lambda != 0.0 {
                let s = softmax(&z, tau);
                for t in &self.teachers {
                    let (zt, _) = logits(&t.flatten(), &self.dims, self.row(r));
                    let pt = softmax(&zt, tau);
                    total += weight
                        * match direction {
                            KlDirection::TeacherStudent => kl(&pt, &s),
                            KlDirection::StudentTeacher => kl(&s, &pt),
                        };
                }
            }
        }
        total / n as f64
    }

    /// Central-difference gradient of [`Self::oracle_loss`].
    pub fn numeric_gradient(&self) -> Vec<f64> {
        let base = self.model.flatten();
        (0..base.len())
            .map(|i| {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[i] += FD_EPS;
                minus[i] -= FD_EPS;
                (self.oracle_loss(&plus) - self.oracle_loss(&minus)) / (2.0 * FD_EPS)
            })
            .collect()
    }

    /// Worst per-coordinate relative error between analytic and numeric
    /// gradients; the denominator is floored at 1e-4 so vanishing
    /// coordinates are compared absolutely.
    pub fn max_relative_error(&self) -> f64 {
        let (_, grads) =
            combined_loss_backward(&self.model, &self.batch, &self.labels, &self.teacher_refs(), &self.distill)
                .unwrap();
        relative_error(&grads.flatten(), &self.numeric_gradient())
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

fn jitter_biases(mut m: ModelParams, rng: &mut ChaCha8Rng) -> ModelParams {
    for layer in m.layers_mut() {
        for b in layer.bias.data_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    m
}
