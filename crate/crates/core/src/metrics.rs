//! Accuracy, fairness and forgetting statistics plus the CSV/JSON writers.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// One participant's measurements in one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientRecord {
    pub client_id: usize,
    /// Accuracy of the client's stored model before it is overwritten by the
    /// global model; absent on first participation.
    pub pre_update_acc: Option<f64>,
    /// Accuracy right after the global model is copied in.
    pub post_update_acc: f64,
    pub post_train_acc: f64,
    pub train_loss: f64,
    pub lambda_t: f64,
}

impl ClientRecord {
    pub fn forgetting(&self) -> Option<f64> {
        self.pre_update_acc
            .map(|pre| forgetting_delta(pre, self.post_update_acc))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    pub clients: Vec<ClientRecord>,
    /// Mean post-training accuracy over participants.
    pub mean_acc: f64,
    pub std_acc: f64,
    /// Mean forgetting over participants that had a stored model.
    pub mean_forgetting: Option<f64>,
}

impl RoundRecord {
    pub fn new(round: usize, clients: Vec<ClientRecord>) -> Self {
        let accs: Vec<f64> = clients.iter().map(|c| c.post_train_acc).collect();
        let (mean_acc, std_acc) = mean_std(&accs);
        let deltas: Vec<f64> = clients.iter().filter_map(ClientRecord::forgetting).collect();
        let mean_forgetting = (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64);
        Self {
            round,
            clients,
            mean_acc,
            std_acc,
            mean_forgetting,
        }
    }
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Positive when the client lost accuracy by adopting the global model.
pub fn forgetting_delta(pre: f64, post: f64) -> f64 {
    pre - post
}

/// Population standard deviation of per-client accuracies.
pub fn fairness_std(accs: &[f64]) -> Result<f64> {
    if accs.len() < 2 {
        return Err(Error::invalid(format!(
            "fairness needs >= 2 clients, got {}",
            accs.len()
        )));
    }
    Ok(mean_std(accs).1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyDifference {
    pub deltas: Vec<f64>,
    /// Share of clients where `a` strictly beats `b`.
    pub win_fraction: f64,
}

pub fn accuracy_difference(a: &[f64], b: &[f64]) -> Result<AccuracyDifference> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "client counts differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("no clients to compare"));
    }
    let deltas: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let wins = deltas.iter().filter(|&&d| d > 0.0).count();
    Ok(AccuracyDifference {
        win_fraction: wins as f64 / deltas.len() as f64,
        deltas,
    })
}

/// Rounds to 9 significant digits; the result prints in shortest form.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn render(x: f64) -> String {
    let v = sig9(x);
    if v == 0.0 {
        // normalize -0
        "0".to_string()
    } else {
        v.to_string()
    }
}

pub const CSV_HEADER: [&str; 7] = [
    "round",
    "client_id",
    "pre_update_acc",
    "post_update_acc",
    "post_train_acc",
    "train_loss",
    "lambda_t",
];

pub fn rounds_csv(records: &[RoundRecord]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::invalid(format!("csv encoding: {e}"));
    w.write_record(CSV_HEADER).map_err(to_err)?;
    for r in records {
        for c in &r.clients {
            w.write_record([
                r.round.to_string(),
                c.client_id.to_string(),
                c.pre_update_acc.map(render).unwrap_or_default(),
                render(c.post_update_acc),
                render(c.post_train_acc),
                render(c.train_loss),
                render(c.lambda_t),
            ])
            .map_err(to_err)?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::invalid(format!("csv encoding: {e}")))
}

/// Final per-client evaluation of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalEvaluation {
    /// Accuracy of each client's personalized (last trained) model.
    pub personalized_acc: Vec<f64>,
    /// Accuracy of the final global model on each client's test split.
    pub global_acc: Vec<f64>,
    /// Clients evaluated on their train split because their test split is empty.
    pub clients_without_test: Vec<usize>,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a Value,
    rounds_completed: usize,
    final_mean_acc: Option<f64>,
    final_std_acc: Option<f64>,
    final_global_mean_acc: Option<f64>,
    final_global_std_acc: Option<f64>,
    per_client_final_acc: Vec<f64>,
    per_client_global_acc: Vec<f64>,
    mean_forgetting_curve: Vec<Option<f64>>,
    mean_acc_curve: Vec<f64>,
    clients_without_test: &'a [usize],
}

pub fn summary_json(config: &Value, records: &[RoundRecord], eval: Option<&FinalEvaluation>) -> Result<Vec<u8>> {
    let round9 = |xs: &[f64]| xs.iter().map(|&x| sig9(x)).collect::<Vec<_>>();
    let stats = |xs: &[f64]| {
        if xs.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(xs);
            (Some(sig9(m)), Some(sig9(s)))
        }
    };
    let (personal, global, flagged): (&[f64], &[f64], &[usize]) = match eval {
        Some(e) => (&e.personalized_acc, &e.global_acc, &e.clients_without_test),
        None => (&[], &[], &[]),
    };
    let (final_mean_acc, final_std_acc) = stats(personal);
    let (final_global_mean_acc, final_global_std_acc) = stats(global);
    let summary = Summary {
        config,
        rounds_completed: records.len(),
        final_mean_acc,
        final_std_acc,
        final_global_mean_acc,
        final_global_std_acc,
        per_client_final_acc: round9(personal),
        per_client_global_acc: round9(global),
        mean_forgetting_curve: records.iter().map(|r| r.mean_forgetting.map(sig9)).collect(),
        mean_acc_curve: records.iter().map(|r| sig9(r.mean_acc)).collect(),
        clients_without_test: flagged,
    };
    let mut out = serde_json::to_vec_pretty(&summary).map_err(|e| Error::invalid(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Writes `rounds.csv` and `summary.json` into `dir`, creating it if needed.
pub fn write_outputs(
    records: &[RoundRecord],
    config: &Value,
    eval: Option<&FinalEvaluation>,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("rounds.csv"), &rounds_csv(records)?)?;
    write_file(&dir.join("summary.json"), &summary_json(config, records, eval)?)
}
