//! Full-batch training with early stopping on validation accuracy.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelVector, SplitMask};
use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec, PreparedGraph};
use crate::ops::cross_entropy;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::Rng;
use crate::tensor::Tensor;

const DROPOUT_STREAM: u64 = 0xD20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seeds: Vec<u64>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: 300,
            patience: 10,
            lr: 0.01,
            weight_decay: 5e-4,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument("epochs and patience must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need lr > 0 and weight_decay >= 0, got lr={}, weight_decay={}",
                self.lr, self.weight_decay
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr, self.weight_decay)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub best_val_acc: f64,
    pub test_acc_at_best_val: f64,
    /// 1-based epoch of the reported snapshot: the last epoch at the best
    /// validation accuracy.
    pub best_epoch: usize,
    pub epochs_ran: usize,
    pub loss_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
}

/// One line of the per-run log.
#[derive(Serialize)]
struct EpochRecord {
    epoch: usize,
    train_loss: f64,
    val_acc: f64,
}

impl RunResult {
    /// JSON lines with fields in the order `epoch, train_loss, val_acc`.
    pub fn write_log(&self, mut out: impl Write) -> std::io::Result<()> {
        for (e, (&train_loss, &val_acc)) in self.loss_curve.iter().zip(&self.val_curve).enumerate() {
            let rec = EpochRecord {
                epoch: e + 1,
                train_loss,
                val_acc,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Fraction of nodes in `mask` whose arg-max logit equals the label.
/// Ties resolve to the lowest class id.
pub fn accuracy(logits: &Tensor, labels: &LabelVector, mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("accuracy over an empty mask".into()));
    }
    let correct = mask
        .iter()
        .filter(|&&i| argmax(logits.row(i)) == labels.get(i))
        .count();
    Ok(correct as f64 / mask.len() as f64)
}

/// Evaluation-mode accuracy of `model` on `mask`.
pub fn evaluate(model: &Model, dataset: &Dataset, mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("evaluate over an empty mask".into()));
    }
    let graph = PreparedGraph::new(&dataset.graph);
    let logits = model.forward(&graph, dataset.features()?, false, &mut Rng::new(0))?;
    accuracy(&logits, &dataset.labels, mask)
}

/// Trains `model` in place and leaves it holding the parameters from the
/// epoch with the best validation accuracy.
///
/// Each epoch: training-mode forward, cross-entropy on the train nodes,
/// backward, one Adam step, then an evaluation-mode pass scored on the
/// validation nodes. Training stops once `patience` epochs pass without a
/// strict improvement, or after `spec.epochs`.
///
/// Among epochs tied at the best validation accuracy the latest one is kept,
/// so a validation score that saturates early does not pin the reported
/// model to a barely trained state.
pub fn train(model: &mut Model, dataset: &Dataset, split: &SplitMask, spec: &TrainSpec, seed: u64) -> Result<RunResult> {
    spec.validate()?;
    split
        .validate(dataset.num_nodes())
        .map_err(|e| Error::Train(format!("invalid split: {e}")))?;
    let x = dataset.features()?;
    let graph = PreparedGraph::new(&dataset.graph);
    let adam = spec.adam();
    let mut state = AdamState::default();
    let mut rng = Rng::stream(seed, DROPOUT_STREAM);

    let mut best_val = f64::NEG_INFINITY;
    let mut best_test = 0.0;
    let mut best_epoch = 0;
    let mut last_improvement = 0;
    let mut best_params = model.snapshot();
    let mut loss_curve = Vec::new();
    let mut val_curve = Vec::new();

    for epoch in 1..=spec.epochs {
        model.zero_grad();
        let (logits, trace) = model.forward_train(&graph, x, &mut rng)?;
        let (loss, d_logits) = cross_entropy(&logits, &dataset.labels, &split.train)?;
        if !loss.is_finite() {
            return Err(Error::Train(format!("loss became {loss} at epoch {epoch}")));
        }
        model.backward(&graph, &trace, &d_logits)?;
        adam_step(&mut model.parameters_mut(), &mut state, &adam)?;

        let eval_logits = model.forward(&graph, x, false, &mut rng)?;
        let val = accuracy(&eval_logits, &dataset.labels, &split.val)?;
        loss_curve.push(loss);
        val_curve.push(val);

        if val >= best_val {
            if val > best_val {
                last_improvement = epoch;
            }
            best_val = val;
            best_epoch = epoch;
            best_test = accuracy(&eval_logits, &dataset.labels, &split.test)?;
            best_params = model.snapshot();
        }
        if epoch - last_improvement >= spec.patience {
            break;
        }
    }
    model.restore(&best_params)?;
    Ok(RunResult {
        seed,
        best_val_acc: best_val,
        test_acc_at_best_val: best_test,
        best_epoch,
        epochs_ran: loss_curve.len(),
        loss_curve,
        val_curve,
    })
}

/// Initialises a model from `spec` with `seed` and trains it.
pub fn run_seed(
    model_spec: &ModelSpec,
    dataset: &Dataset,
    split: &SplitMask,
    spec: &TrainSpec,
    seed: u64,
) -> Result<(Model, RunResult)> {
    let mut model = Model::init(model_spec.clone(), seed)?;
    let result = train(&mut model, dataset, split, spec, seed)?;
    Ok((model, result))
}

/// Mean and population standard deviation of test accuracy across runs.
pub fn aggregate(results: &[RunResult]) -> Result<(f64, f64)> {
    if results.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "aggregation needs at least 2 runs, got {}",
            results.len()
        )));
    }
    let n = results.len() as f64;
    let mean = results.iter().map(|r| r.test_acc_at_best_val).sum::<f64>() / n;
    let var = results
        .iter()
        .map(|r| (r.test_acc_at_best_val - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, split_high, SyntheticSpec};
    use crate::models::Arch;

    fn result(test: f64) -> RunResult {
        RunResult {
            seed: 0,
            best_val_acc: 0.0,
            test_acc_at_best_val: test,
            best_epoch: 1,
            epochs_ran: 1,
            loss_curve: vec![],
            val_curve: vec![],
        }
    }

    fn cliques(n: usize) -> Dataset {
        generate_synthetic(&SyntheticSpec {
            nodes: n,
            classes: 2,
            p_in: 1.0,
            p_out: 0.0,
            dim: 8,
            sep: 5.0,
            seed: 11,
        })
        .unwrap()
    }

    fn small(arch: Arch, in_dim: usize) -> ModelSpec {
        small_c(arch, in_dim, 2)
    }

    fn small_c(arch: Arch, in_dim: usize, classes: usize) -> ModelSpec {
        let mut s = ModelSpec::new(arch, in_dim, classes);
        s.hidden = 16;
        s
    }

    #[test]
    fn accuracy_cases() {
        let labels = LabelVector::new(vec![0, 1, 0, 1], 2).unwrap();
        let right = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [-1.0, 3.0]]);
        assert_eq!(accuracy(&right, &labels, &[0, 1, 2, 3]).unwrap(), 1.0);
        let wrong = right.map(|v| -v);
        assert_eq!(accuracy(&wrong, &labels, &[0, 1, 2, 3]).unwrap(), 0.0);
        // ties go to class 0, so only the class-0 half is right
        assert_eq!(accuracy(&Tensor::zeros(4, 2), &labels, &[0, 1, 2, 3]).unwrap(), 0.5);
        assert!(accuracy(&right, &labels, &[]).is_err());
    }

    #[test]
    fn aggregate_cases() {
        let (m, s) = aggregate(&[result(0.75), result(0.75), result(0.75)]).unwrap();
        assert_eq!((m, s), (0.75, 0.0));
        let (m, s) = aggregate(&[result(0.5), result(0.7)]).unwrap();
        assert!((m - 0.6).abs() < 1e-15 && (s - 0.1).abs() < 1e-15);
        let (m2, s2) = aggregate(&[result(0.7), result(0.5)]).unwrap();
        assert_eq!((m, s), (m2, s2));
        assert!(aggregate(&[result(0.5)]).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = TrainSpec::default();
        assert!(s.validate().is_ok());
        s.patience = 0;
        assert!(s.validate().is_err());
        s.patience = 1;
        s.lr = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn same_seed_same_result() {
        let ds = cliques(30);
        let split = split_high(30, (0.6, 0.2, 0.2), 1).unwrap();
        let spec = TrainSpec {
            epochs: 20,
            ..TrainSpec::default()
        };
        let (_, a) = run_seed(&small(Arch::GraphTransformer, 8), &ds, &split, &spec, 4).unwrap();
        let (_, b) = run_seed(&small(Arch::GraphTransformer, 8), &ds, &split, &spec, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn patience_one_stops_early() {
        // every label in one class except a single node: val accuracy is
        // saturated from the first epoch, so epoch 2 cannot improve
        let mut ds = cliques(20);
        ds.labels = LabelVector::new((0..20).map(|i| usize::from(i == 0)).collect(), 2).unwrap();
        ds.features = Some(Tensor::zeros(20, 8));
        let split = SplitMask::new(vec![0, 1, 2], vec![5, 6], vec![7, 8]);
        let spec = TrainSpec {
            patience: 1,
            ..TrainSpec::default()
        };
        let mut model = Model::init(small(Arch::Mlp, 8), 0).unwrap();
        let r = train(&mut model, &ds, &split, &spec, 0).unwrap();
        assert!(r.epochs_ran <= 2, "ran {}", r.epochs_ran);
    }

    #[test]
    fn early_stopping_bound_and_checkpoint() {
        let ds = generate_synthetic(&SyntheticSpec {
            nodes: 120,
            classes: 3,
            p_in: 0.15,
            p_out: 0.02,
            dim: 6,
            sep: 1.5,
            seed: 2,
        })
        .unwrap();
        let split = split_high(120, (0.6, 0.2, 0.2), 3).unwrap();
        let spec = TrainSpec::default();
        for arch in Arch::ALL {
            let (model, r) = run_seed(&small_c(arch, 6, 3), &ds, &split, &spec, 1).unwrap();
            assert!(r.epochs_ran <= r.best_epoch + spec.patience);
            // the snapshot is the last epoch at the maximum
            let max = r.val_curve.iter().copied().fold(0.0, f64::max);
            let last = r.val_curve.iter().rposition(|&v| v == max).unwrap();
            assert_eq!((r.best_epoch, r.best_val_acc), (last + 1, max));
            assert!(r.epochs_ran <= spec.epochs);
            assert!((0.0..=1.0).contains(&r.test_acc_at_best_val));
            // the restored parameters reproduce the reported accuracies
            assert_eq!(evaluate(&model, &ds, &split.val).unwrap(), r.best_val_acc);
            assert_eq!(evaluate(&model, &ds, &split.test).unwrap(), r.test_acc_at_best_val);
        }
    }

    #[test]
    fn empty_split_rejected() {
        let ds = cliques(10);
        let split = SplitMask::new(vec![0, 1], vec![], vec![3]);
        let mut model = Model::init(small(Arch::Mlp, 8), 0).unwrap();
        assert!(train(&mut model, &ds, &split, &TrainSpec::default(), 0).is_err());
    }

    #[test]
    fn log_lines_in_field_order() {
        let r = RunResult {
            loss_curve: vec![0.5, 0.25],
            val_curve: vec![0.75, 1.0],
            ..result(0.0)
        };
        let mut buf = Vec::new();
        r.write_log(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "{\"epoch\":1,\"train_loss\":0.5,\"val_acc\":0.75}\n{\"epoch\":2,\"train_loss\":0.25,\"val_acc\":1.0}\n"
        );
    }

    #[test]
    fn separable_toy_is_learned() {
        let ds = cliques(40);
        let split = split_high(40, (0.6, 0.2, 0.2), 0).unwrap();
        let (_, r) = run_seed(&ModelSpec::new(Arch::Gcn, 8, 2), &ds, &split, &TrainSpec::default(), 0).unwrap();
        assert_eq!(r.test_acc_at_best_val, 1.0);

        // no early stop, so the loss curve covers the full budget
        let long = TrainSpec {
            patience: 300,
            ..TrainSpec::default()
        };
        let target = 2f64.ln() / 10.0;
        for arch in Arch::ALL {
            let (_, r) = run_seed(&ModelSpec::new(arch, 8, 2), &ds, &split, &long, 1).unwrap();
            assert_eq!(r.epochs_ran, 300);
            let tail = &r.loss_curve[250..];
            let mean = tail.iter().sum::<f64>() / tail.len() as f64;
            assert!(mean < target, "{arch}: late loss {mean}");
        }
    }
}
