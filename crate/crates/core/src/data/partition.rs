//! Label-skewed client partitions.
//!
//! Two schemes are provided: a Dirichlet allocation where each class is
//! spread over clients by proportions drawn from `Dir(α)`, and a
//! pathological one where every client holds exactly `s` classes in shards
//! of uneven size.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClientSplit {
    pub fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().chain(&self.test).copied()
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-client sample indices into a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub clients: Vec<ClientSplit>,
    pub num_samples: usize,
}

impl Partition {
    fn from_assignments(assignments: Vec<Vec<usize>>, num_samples: usize) -> Self {
        Self {
            clients: assignments
                .into_iter()
                .map(|mut train| {
                    train.sort_unstable();
                    ClientSplit {
                        train,
                        test: Vec::new(),
                    }
                })
                .collect(),
            num_samples,
        }
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// Checks disjointness, bounds, exhaustiveness and non-empty train sets.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.num_samples];
        for (k, c) in self.clients.iter().enumerate() {
            if c.train.is_empty() {
                return Err(Error::invalid(format!("client {k} has an empty train set")));
            }
            for i in c.all() {
                if i >= self.num_samples {
                    return Err(Error::invalid(format!("client {k} holds out-of-range index {i}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid(format!("index {i} assigned twice")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("index {i} not assigned to any client")));
        }
        Ok(())
    }

    /// Clients whose test split came out empty.
    pub fn clients_without_test(&self) -> Vec<usize> {
        self.clients
            .iter()
            .enumerate()
            .filter(|(_, c)| c.test.is_empty())
            .map(|(k, _)| k)
            .collect()
    }

    /// Distinct labels held by a client (train and test), ascending.
    pub fn label_set(&self, ds: &Dataset, client: usize) -> Vec<usize> {
        let mut labels: Vec<usize> = self.clients[client].all().map(|i| ds.labels()[i]).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    /// Label counts per client (train and test).
    pub fn label_histogram(&self, ds: &Dataset, client: usize) -> Vec<usize> {
        let mut h = vec![0; ds.num_classes()];
        for i in self.clients[client].all() {
            h[ds.labels()[i]] += 1;
        }
        h
    }
}

/// Splits `total` into integer counts proportional to `weights`, handing the
/// leftover units to the largest fractional parts (lowest index on ties).
pub(crate) fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Draws a point from the symmetric Dirichlet on `n` categories.
fn sample_dirichlet(n: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha checked positive");
    let mut draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter_mut().for_each(|v| *v /= sum);
    } else {
        // every gamma draw underflowed (tiny alpha): the limit is a single vertex
        let vertex = rand::Rng::random_range(rng, 0..n);
        draws = vec![0.0; n];
        draws[vertex] = 1.0;
    }
    draws
}

pub fn dirichlet_partition(ds: &Dataset, n_clients: usize, alpha: f64, seed: u64) -> Result<Partition> {
    if n_clients < 2 {
        return Err(Error::invalid(format!("dirichlet partition needs >= 2 clients, got {n_clients}")));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if ds.len() < n_clients {
        return Err(Error::invalid(format!(
            "{} samples cannot cover {n_clients} clients",
            ds.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![Vec::new(); n_clients];
    for mut members in ds.indices_by_class() {
        let props = sample_dirichlet(n_clients, alpha, &mut rng);
        members.shuffle(&mut rng);
        let counts = largest_remainder(&props, members.len());
        let mut rest = members.as_slice();
        for (client, &count) in counts.iter().enumerate() {
            let (taken, tail) = rest.split_at(count);
            assignments[client].extend_from_slice(taken);
            rest = tail;
        }
    }
    // Empty clients steal one sample from the currently largest client.
    while let Some(empty) = assignments.iter().position(Vec::is_empty) {
        let donor = (0..n_clients)
            .max_by(|&a, &b| assignments[a].len().cmp(&assignments[b].len()).then(b.cmp(&a)))
            .expect("n_clients >= 2");
        let moved = assignments[donor].pop().expect("donor non-empty");
        assignments[empty].push(moved);
    }
    Ok(Partition::from_assignments(assignments, ds.len()))
}

/// Each client receives exactly `s` distinct classes. Classes are dealt
/// round-robin over a seeded class permutation; each class is then cut into
/// one shard per holder with sizes proportional to a `Dir(1)` draw.
pub fn pathological_partition(ds: &Dataset, n_clients: usize, s: usize, seed: u64) -> Result<Partition> {
    let num_classes = ds.num_classes();
    if s == 0 || s > num_classes {
        return Err(Error::invalid(format!(
            "classes per client s={s} must be in 1..={num_classes}"
        )));
    }
    if n_clients == 0 {
        return Err(Error::invalid("pathological partition needs >= 1 client"));
    }
    if n_clients * s < num_classes {
        return Err(Error::invalid(format!(
            "{n_clients} clients x {s} classes leave some of the {num_classes} classes unassigned"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut class_order: Vec<usize> = (0..num_classes).collect();
    class_order.shuffle(&mut rng);

    let mut holders = vec![Vec::new(); num_classes];
    for client in 0..n_clients {
        for j in 0..s {
            let class = class_order[(client * s + j) % num_classes];
            holders[class].push(client);
        }
    }

    let mut assignments = vec![Vec::new(); n_clients];
    for (class, mut members) in ds.indices_by_class().into_iter().enumerate() {
        let owners = &holders[class];
        if members.len() < owners.len() {
            return Err(Error::invalid(format!(
                "class {class} has {} samples for {} shards",
                members.len(),
                owners.len()
            )));
        }
        members.shuffle(&mut rng);
        // one guaranteed sample per shard, the remainder split by Dir(1)
        let props = sample_dirichlet(owners.len(), 1.0, &mut rng);
        let extra = largest_remainder(&props, members.len() - owners.len());
        let mut rest = members.as_slice();
        for (&owner, &count) in owners.iter().zip(&extra) {
            let (taken, tail) = rest.split_at(count + 1);
            assignments[owner].extend_from_slice(taken);
            rest = tail;
        }
    }
    Ok(Partition::from_assignments(assignments, ds.len()))
}

/// Stratified per-client split. Each class held by a client sends
/// `round(fraction · count)` samples to test, always keeping one for training.
pub fn split_train_test(p: &Partition, ds: &Dataset, test_fraction: f64, seed: u64) -> Result<Partition> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must be in (0,1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clients = Vec::with_capacity(p.clients.len());
    for c in &p.clients {
        let mut by_class = vec![Vec::new(); ds.num_classes()];
        let mut all: Vec<usize> = c.all().collect();
        all.sort_unstable();
        for i in all {
            by_class[ds.labels()[i]].push(i);
        }
        let mut split = ClientSplit::default();
        for mut group in by_class.into_iter().filter(|g| !g.is_empty()) {
            group.shuffle(&mut rng);
            let n_test = ((test_fraction * group.len() as f64).round() as usize).min(group.len() - 1);
            split.test.extend_from_slice(&group[..n_test]);
            split.train.extend_from_slice(&group[n_test..]);
        }
        split.train.sort_unstable();
        split.test.sort_unstable();
        clients.push(split);
    }
    Ok(Partition {
        clients,
        num_samples: p.num_samples,
    })
}
