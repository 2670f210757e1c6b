use serde::{Deserialize, Serialize};

use crate::data::NUM_CLASSES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub samples: usize,
    /// Final-saccade accuracy.
    pub accuracy: f64,
    pub per_saccade: Vec<f64>,
    pub loss_aggregate: f64,
    pub loss_greedy: f64,
    pub greedy_accuracy: f64,
    /// Final-saccade predictions: `confusion[label][predicted]`.
    pub confusion: Vec<[usize; NUM_CLASSES]>,
}

/// `epoch,split,task,loss,acc1,...,accS`.
pub fn metrics_header(saccades: usize) -> String {
    let mut h = String::from("epoch,split,task,loss");
    for k in 1..=saccades {
        h.push_str(&format!(",acc{k}"));
    }
    h
}

/// One CSV line. Missing accuracies (training rows, the greedy task beyond
/// its single prediction) are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub task: String,
    pub loss: f64,
    pub accuracies: Vec<Option<f64>>,
}

impl MetricsRow {
    pub fn to_csv(&self, saccades: usize) -> String {
        let mut line = format!(
            "{},{},{},{:.6}",
            self.epoch, self.split, self.task, self.loss
        );
        for k in 0..saccades {
            line.push(',');
            if let Some(Some(a)) = self.accuracies.get(k) {
                line.push_str(&format!("{a:.6}"));
            }
        }
        line
    }

    pub fn train(epoch: usize, task: &str, loss: f64) -> Self {
        Self {
            epoch,
            split: "train".into(),
            task: task.into(),
            loss,
            accuracies: Vec::new(),
        }
    }

    /// The aggregate row (per-saccade accuracies) and the greedy row
    /// (single accuracy in the first column) of an evaluation.
    pub fn from_eval(epoch: usize, split: &str, m: &EvalMetrics) -> [Self; 2] {
        [
            Self {
                epoch,
                split: split.into(),
                task: "aggregate".into(),
                loss: m.loss_aggregate,
                accuracies: m.per_saccade.iter().copied().map(Some).collect(),
            },
            Self {
                epoch,
                split: split.into(),
                task: "greedy".into(),
                loss: m.loss_greedy,
                accuracies: vec![Some(m.greedy_accuracy)],
            },
        ]
    }
}

/// Per-epoch record of the JSON run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss_greedy: f64,
    pub train_loss_aggregate: f64,
    pub test: Option<EvalMetrics>,
    pub seconds: f64,
}
