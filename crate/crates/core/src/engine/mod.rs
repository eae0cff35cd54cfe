//! Round orchestration: sampling, broadcast, local updates, aggregation and
//! historical-model bookkeeping.
//!
//! Per participant and round:
//! 1. evaluate the stored (historical) model on the client's test split,
//! 2. overwrite the local model with the global model and evaluate again,
//! 3. run the strategy's local update,
//! 4. store the trained model as the new historical model.
//!
//! The server then aggregates participants in ascending id order.

pub mod aggregate;
pub mod seed;

pub use aggregate::{aggregate, aggregate_literal, aggregation_weights, participants_per_round, sample_clients};
pub use seed::{derive_seed, rng_for, Stream};

use rayon::prelude::*;

use crate::config::{DatasetKind, ExperimentConfig, PartitionKind};
use crate::data::{self, Dataset, Partition};
use crate::error::{Error, Result};
use crate::metrics::{ClientRecord, FinalEvaluation, RoundRecord};
use crate::nn::{self, ModelParams, SgdState};
use crate::strategies::{local_update, LocalTraining, StrategyKind};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub local_model: ModelParams,
    /// The model produced by this client's last local training pass.
    pub historical_model: Option<ModelParams>,
    /// Distillation weight used in the client's most recent update.
    pub lambda_current: f64,
    pub optimizer: SgdState,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClientState {
    pub fn new(id: usize, model: ModelParams, optimizer: SgdState, train: Vec<usize>, test: Vec<usize>) -> Self {
        Self {
            id,
            local_model: model,
            historical_model: None,
            lambda_current: 0.0,
            optimizer,
            train,
            test,
        }
    }

    /// Indices used for evaluation: the test split, or the train split when
    /// the test split is empty.
    pub fn eval_indices(&self) -> &[usize] {
        if self.test.is_empty() {
            &self.train
        } else {
            &self.test
        }
    }

    /// The client's personalized model: its last trained model if it has one.
    pub fn personalized_model(&self) -> &ModelParams {
        self.historical_model.as_ref().unwrap_or(&self.local_model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global_model: ModelParams,
    /// Completed rounds.
    pub round: usize,
    pub rng_seed: u64,
}

/// A fully materialized experiment: data, partition, server and clients.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub cfg: ExperimentConfig,
    pub strategy: StrategyKind,
    pub training: LocalTraining,
    pub dataset: Dataset,
    pub partition: Partition,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    /// Per-client evaluation data, gathered once.
    eval_sets: Vec<(nn::DenseMatrix, Vec<usize>)>,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match cfg.dataset {
        DatasetKind::Synth => data::synth_blobs(
            cfg.synth_classes,
            cfg.synth_per_class,
            cfg.synth_dim,
            cfg.synth_spread,
            derive_seed(cfg.master_seed, Stream::Dataset, 0, 0),
        ),
        DatasetKind::Idx => {
            let images = cfg.idx_images.as_deref().ok_or_else(|| Error::config("idx_images", "missing"))?;
            let labels = cfg.idx_labels.as_deref().ok_or_else(|| Error::config("idx_labels", "missing"))?;
            data::load_idx(images, labels)
        }
    }
}

pub fn build_partition(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Partition> {
    let seed = derive_seed(cfg.master_seed, Stream::Partition, 0, 0);
    let raw = match cfg.partition {
        PartitionKind::Dirichlet => data::dirichlet_partition(ds, cfg.n_clients, cfg.alpha, seed)?,
        PartitionKind::Pathological => {
            data::pathological_partition(ds, cfg.n_clients, cfg.classes_per_client, seed)?
        }
    };
    let split = data::split_train_test(
        &raw,
        ds,
        cfg.test_fraction,
        derive_seed(cfg.master_seed, Stream::Split, 0, 0),
    )?;
    split.validate()?;
    Ok(split)
}

impl Simulation {
    /// Validates the config, loads data and initializes every model.
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let dataset = load_dataset(cfg)?;
        Self::with_dataset(cfg, dataset)
    }

    pub fn with_dataset(cfg: &ExperimentConfig, dataset: Dataset) -> Result<Self> {
        cfg.validate()?;
        let strategy = cfg.strategy_kind();
        strategy.validate()?;
        let partition = build_partition(cfg, &dataset)?;
        let mut dims = vec![dataset.dim()];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(dataset.num_classes());
        let global = ModelParams::init(&dims, &mut rng_for(cfg.master_seed, Stream::Init, 0, 0))?;
        let clients = partition
            .clients
            .iter()
            .enumerate()
            .map(|(id, split)| {
                let opt = SgdState::new(&global, cfg.lr, cfg.momentum, cfg.weight_decay)?;
                Ok(ClientState::new(id, global.clone(), opt, split.train.clone(), split.test.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let eval_sets = clients.iter().map(|c| dataset.gather(c.eval_indices())).collect();
        Ok(Self {
            cfg: cfg.clone(),
            strategy,
            training: LocalTraining {
                epochs: cfg.epochs,
                batch_size: cfg.batch_size,
                kl_direction: cfg.kl_direction,
                tau_squared: cfg.tau_squared,
            },
            server: ServerState {
                global_model: global,
                round: 0,
                rng_seed: cfg.master_seed,
            },
            dataset,
            partition,
            clients,
            eval_sets,
        })
    }

    fn evaluate(&self, client: usize, model: &ModelParams) -> Result<f64> {
        let (x, y) = &self.eval_sets[client];
        nn::accuracy(model, x, y)
    }

    /// Runs one communication round and returns its record.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let t = self.server.round as u64;
        let round_index = t + 1;
        let participants = sample_clients(self.clients.len(), self.cfg.participation_rate, self.server.rng_seed, round_index);
        let mut selected = vec![false; self.clients.len()];
        for &p in &participants {
            selected[p] = true;
        }
        let global = &self.server.global_model;
        let strategy = &self.strategy;
        let training = &self.training;
        let dataset = &self.dataset;
        let eval_sets = &self.eval_sets;
        let master = self.server.rng_seed;

        let records = self
            .clients
            .par_iter_mut()
            .filter(|c| selected[c.id])
            .map(|client| -> Result<ClientRecord> {
                let (x, y) = &eval_sets[client.id];
                let pre_update_acc = match &client.historical_model {
                    Some(h) => Some(nn::accuracy(h, x, y)?),
                    None => None,
                };
                client.local_model = global.clone();
                let post_update_acc = nn::accuracy(&client.local_model, x, y)?;

                let lambda_t = strategy.lambda_at(t);
                let mut rng = rng_for(master, Stream::LocalTraining, round_index, client.id as u64);
                local_update(strategy, client, dataset, global, t, training, &mut rng)?;
                client.lambda_current = lambda_t;
                client.historical_model = Some(client.local_model.clone());

                let post_train_acc = nn::accuracy(&client.local_model, x, y)?;
                let (tx, ty) = dataset.gather(&client.train);
                let train_loss = nn::ce_loss(&nn::temp_softmax(&nn::predict(&client.local_model, &tx)?, 1.0)?, &ty)?;
                Ok(ClientRecord {
                    client_id: client.id,
                    pre_update_acc,
                    post_update_acc,
                    post_train_acc,
                    train_loss,
                    lambda_t,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let models: Vec<&ModelParams> = participants.iter().map(|&k| &self.clients[k].local_model).collect();
        let sizes: Vec<usize> = participants.iter().map(|&k| self.clients[k].train.len()).collect();
        let new_global = if self.cfg.literal_weights {
            let total = self.clients.iter().map(|c| c.train.len()).sum();
            aggregate_literal(&models, &sizes, total)?
        } else {
            aggregate(&models, &sizes)?
        };
        self.server.global_model = new_global;
        self.server.round += 1;
        Ok(RoundRecord::new(round_index as usize, records))
    }

    /// Evaluates every client's personalized model and the global model.
    pub fn final_evaluation(&self) -> Result<FinalEvaluation> {
        let personalized_acc = (0..self.clients.len())
            .into_par_iter()
            .map(|k| self.evaluate(k, self.clients[k].personalized_model()))
            .collect::<Result<Vec<_>>>()?;
        let global_acc = (0..self.clients.len())
            .into_par_iter()
            .map(|k| self.evaluate(k, &self.server.global_model))
            .collect::<Result<Vec<_>>>()?;
        Ok(FinalEvaluation {
            personalized_acc,
            global_acc,
            clients_without_test: self.partition.clients_without_test(),
        })
    }
}

/// Records of every round plus the final per-client evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub records: Vec<RoundRecord>,
    pub evaluation: FinalEvaluation,
}

impl ExperimentOutcome {
    /// Mean personalized accuracy across clients.
    pub fn mean_personalized_acc(&self) -> f64 {
        crate::metrics::mean_std(&self.evaluation.personalized_acc).0
    }

    pub fn mean_global_acc(&self) -> f64 {
        crate::metrics::mean_std(&self.evaluation.global_acc).0
    }

    /// Mean per-round forgetting over rounds `from..=to` (1-based), skipping
    /// rounds without a measurement.
    pub fn mean_forgetting(&self, from: usize, to: usize) -> Option<f64> {
        let xs: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.round >= from && r.round <= to)
            .filter_map(|r| r.mean_forgetting)
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

fn run_rounds(cfg: &ExperimentConfig, dataset: Option<Dataset>) -> Result<ExperimentOutcome> {
    let mut sim = match dataset {
        Some(ds) => Simulation::with_dataset(cfg, ds)?,
        None => Simulation::new(cfg)?,
    };
    let records = (0..cfg.rounds).map(|_| sim.run_round()).collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutcome {
        records,
        evaluation: sim.final_evaluation()?,
    })
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Runs `cfg.rounds` rounds and the final evaluation.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    in_pool(cfg.threads, || run_rounds(cfg, None))
}

/// Same as [`run_experiment`] on an already loaded dataset.
pub fn run_experiment_on(cfg: &ExperimentConfig, dataset: Dataset) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    in_pool(cfg.threads, || run_rounds(cfg, Some(dataset)))
}
