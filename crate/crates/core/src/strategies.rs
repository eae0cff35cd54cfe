//! Client-side local update rules: FedAvg, FedProx, pFedSD and FedCKD.
//!
//! All four share one mini-batch SGD loop and differ only in the loss whose
//! gradient they feed it. FedCKD distills from two frozen teachers, the
//! round's global model and the client's historical model, with a weight
//! that decays exponentially over communication rounds.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::engine::ClientState;
use crate::error::{Error, Result};
use crate::nn::{combined_loss_backward, sgd_step, DenseMatrix, DistillConfig, KlDirection, ModelParams};

/// Exponential decay of the distillation weight: `λ_t = λ₀·γ^t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub lambda0: f64,
    pub gamma: f64,
    pub enabled: bool,
}

impl AnnealSchedule {
    pub fn new(lambda0: f64, gamma: f64, enabled: bool) -> Result<Self> {
        if !(lambda0 >= 0.0) || !lambda0.is_finite() {
            return Err(Error::invalid(format!("lambda0 must be >= 0, got {lambda0}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma must be in (0,1], got {gamma}")));
        }
        Ok(Self {
            lambda0,
            gamma,
            enabled,
        })
    }
}

/// Exponentiation by squaring.
pub fn powi_by_squaring(base: f64, mut exp: u64) -> f64 {
    let mut result = 1.0;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            result *= b;
        }
        exp >>= 1;
        if exp > 0 {
            b *= b;
        }
    }
    result
}

pub fn anneal_lambda(sched: &AnnealSchedule, round_t: u64) -> f64 {
    if sched.enabled {
        sched.lambda0 * powi_by_squaring(sched.gamma, round_t)
    } else {
        sched.lambda0
    }
}

/// Local-update rule and its own hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategyKind {
    FedAvg,
    FedProx {
        mu: f64,
    },
    PFedSd {
        lambda: f64,
        tau: f64,
    },
    FedCkd {
        schedule: AnnealSchedule,
        tau: f64,
        /// Distill from the round's global model.
        global_teacher: bool,
        /// Distill from the client's previous local model.
        historical_teacher: bool,
    },
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::FedAvg => "fedavg",
            StrategyKind::FedProx { .. } => "fedprox",
            StrategyKind::PFedSd { .. } => "pfedsd",
            StrategyKind::FedCkd { .. } => "fedckd",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_tau = |tau: f64| {
            if tau > 0.0 && tau.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("tau must be positive, got {tau}")))
            }
        };
        match *self {
            StrategyKind::FedAvg => Ok(()),
            StrategyKind::FedProx { mu } if mu >= 0.0 => Ok(()),
            StrategyKind::FedProx { mu } => Err(Error::invalid(format!("mu must be >= 0, got {mu}"))),
            StrategyKind::PFedSd { lambda, tau } => {
                if !(lambda >= 0.0) {
                    return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
                }
                check_tau(tau)
            }
            StrategyKind::FedCkd { schedule, tau, .. } => {
                AnnealSchedule::new(schedule.lambda0, schedule.gamma, schedule.enabled)?;
                check_tau(tau)
            }
        }
    }

    /// Distillation weight in effect during round index `t` (0-based count of
    /// completed rounds). Zero for strategies without a distillation term.
    pub fn lambda_at(&self, t: u64) -> f64 {
        match self {
            StrategyKind::FedAvg | StrategyKind::FedProx { .. } => 0.0,
            StrategyKind::PFedSd { lambda, .. } => *lambda,
            StrategyKind::FedCkd { schedule, .. } => anneal_lambda(schedule, t),
        }
    }
}

/// Optimizer and loop settings shared by every strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub kl_direction: KlDirection,
    pub tau_squared: bool,
}

/// Mini-batch SGD over the client's train set. Each epoch reshuffles with
/// `rng`; the last short batch is kept. Returns the mean batch loss of the
/// final epoch, or `None` when no epoch ran.
fn run_epochs<F>(
    client: &mut ClientState,
    x: &DenseMatrix,
    y: &[usize],
    training: &LocalTraining,
    rng: &mut ChaCha8Rng,
    mut loss_grad: F,
) -> Result<Option<f64>>
where
    F: FnMut(&ModelParams, &DenseMatrix, &[usize]) -> Result<(f64, ModelParams)>,
{
    if y.is_empty() {
        return Err(Error::invalid(format!("client {} has no training data", client.id)));
    }
    if training.batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    client.optimizer.reset(&client.local_model);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut last = None;
    for _ in 0..training.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(training.batch_size) {
            let bx = x.select_rows(chunk);
            let by: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, grads) = loss_grad(&client.local_model, &bx, &by)?;
            sgd_step(&mut client.local_model, &grads, &mut client.optimizer)?;
            total += loss;
            batches += 1;
        }
        last = Some(total / batches as f64);
    }
    Ok(last)
}

fn train_data(client: &ClientState, ds: &Dataset) -> (DenseMatrix, Vec<usize>) {
    ds.gather(&client.train)
}

fn distill(
    client: &mut ClientState,
    ds: &Dataset,
    teachers: &[&ModelParams],
    lambda: f64,
    tau: f64,
    training: &LocalTraining,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    let (x, y) = train_data(client, ds);
    let cfg = DistillConfig {
        lambda,
        tau,
        direction: training.kl_direction,
        tau_squared: training.tau_squared,
    };
    run_epochs(client, &x, &y, training, rng, |m, bx, by| {
        combined_loss_backward(m, bx, by, teachers, &cfg)
    })
}

/// Plain cross-entropy SGD.
pub fn local_update_fedavg(
    client: &mut ClientState,
    ds: &Dataset,
    training: &LocalTraining,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    distill(client, ds, &[], 0.0, 1.0, training, rng)
}

/// Cross-entropy plus the proximal term `(μ/2)·‖w − w_g‖²`.
pub fn local_update_fedprox(
    client: &mut ClientState,
    ds: &Dataset,
    global_ref: &ModelParams,
    mu: f64,
    training: &LocalTraining,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    if !(mu >= 0.0) {
        return Err(Error::invalid(format!("mu must be >= 0, got {mu}")));
    }
    client.local_model.check_same_shape("fedprox global_ref", global_ref)?;
    let (x, y) = train_data(client, ds);
    let cfg = DistillConfig::new(0.0, 1.0);
    run_epochs(client, &x, &y, training, rng, |m, bx, by| {
        let (mut loss, mut grads) = combined_loss_backward(m, bx, by, &[], &cfg)?;
        if mu != 0.0 {
            let dist = m.distance(global_ref)?;
            loss += 0.5 * mu * dist * dist;
            grads.axpy(mu, m)?;
            grads.axpy(-mu, global_ref)?;
        }
        Ok((loss, grads))
    })
}

/// Self-distillation from the client's historical model. Without one this is
/// FedAvg.
pub fn local_update_pfedsd(
    client: &mut ClientState,
    ds: &Dataset,
    lambda: f64,
    tau: f64,
    training: &LocalTraining,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    match client.historical_model.take() {
        Some(hist) => {
            let out = distill(client, ds, &[&hist], lambda, tau, training, rng);
            client.historical_model = Some(hist);
            out
        }
        None => local_update_fedavg(client, ds, training, rng),
    }
}

/// Dual-teacher distillation from the global and historical models. A client
/// without a historical model distills from the global model alone.
#[allow(clippy::too_many_arguments)]
pub fn local_update_fedckd(
    client: &mut ClientState,
    ds: &Dataset,
    global_ref: &ModelParams,
    lambda_t: f64,
    tau: f64,
    use_global: bool,
    use_historical: bool,
    training: &LocalTraining,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    let hist = client.historical_model.take();
    let mut teachers: Vec<&ModelParams> = Vec::with_capacity(2);
    if use_global {
        teachers.push(global_ref);
    }
    if use_historical {
        if let Some(h) = hist.as_ref() {
            teachers.push(h);
        }
    }
    let out = distill(client, ds, &teachers, lambda_t, tau, training, rng);
    client.historical_model = hist;
    out
}

/// Dispatches one local update. `round_t` is the number of completed rounds.
pub fn local_update(
    kind: &StrategyKind,
    client: &mut ClientState,
    ds: &Dataset,
    global_ref: &ModelParams,
    round_t: u64,
    training: &LocalTraining,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    match *kind {
        StrategyKind::FedAvg => local_update_fedavg(client, ds, training, rng),
        StrategyKind::FedProx { mu } => local_update_fedprox(client, ds, global_ref, mu, training, rng),
        StrategyKind::PFedSd { lambda, tau } => local_update_pfedsd(client, ds, lambda, tau, training, rng),
        StrategyKind::FedCkd {
            tau,
            global_teacher,
            historical_teacher,
            ..
        } => local_update_fedckd(
            client,
            ds,
            global_ref,
            kind.lambda_at(round_t),
            tau,
            global_teacher,
            historical_teacher,
            training,
            rng,
        ),
    }
}
