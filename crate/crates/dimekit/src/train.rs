//! Training: loss assembly on the autodiff tape, an adaptive-moment
//! optimizer with warmup + exponential decay, and evaluation metrics.

use std::time::Instant;

use crate::autodiff::{NodeId, Tensor};
use crate::error::{Error, Result};
use crate::geometry::AtomicConfiguration;
use crate::model::{
    build_batch, build_forward, ModelConfig, ModelGraph, ParameterStore, Prediction,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// (1 - w_F)|dE| + w_F mean|dF|.
    L1,
    /// Gaussian negative log-likelihood on the energy (requires the MVE
    /// head) plus w_F mean|dF|.
    Nll,
}

/// Optimizer and loss settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Steps of linear learning-rate warmup.
    pub warmup_steps: usize,
    /// Learning rate at the end of warmup.
    pub peak_lr: f64,
    /// Per-step multiplicative decay applied after warmup; must be in
    /// (0, 1] so the schedule is monotone after warmup.
    pub decay_rate: f64,
    /// Configurations per optimizer step.
    pub batch_size: usize,
    pub max_steps: usize,
    /// Force-loss weight w_F in [0, 1]; the energy term gets 1 - w_F.
    pub force_weight: f64,
    pub loss_kind: LossKind,
    pub seed: u64,
    /// Validate (and consider checkpointing) every this many steps.
    pub val_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 3000,
            peak_lr: 1e-3,
            decay_rate: 0.9999,
            batch_size: 32,
            max_steps: 10_000,
            force_weight: 0.999,
            loss_kind: LossKind::L1,
            seed: 0,
            val_interval: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Input(format!("peak_lr must be positive, got {}", self.peak_lr)));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Input(format!(
                "decay_rate must be in (0, 1], got {}",
                self.decay_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Input("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.force_weight) {
            return Err(Error::Input(format!(
                "force_weight must be in [0, 1], got {}",
                self.force_weight
            )));
        }
        if self.val_interval < 1 {
            return Err(Error::Input("val_interval must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate at a 0-based step: linear warmup to `peak_lr`, then
    /// exponential decay.
    pub fn learning_rate(&self, step: usize) -> f64 {
        let warm = if self.warmup_steps > 0 && step < self.warmup_steps {
            (step + 1) as f64 / self.warmup_steps as f64
        } else {
            1.0
        };
        let decayed = step.saturating_sub(self.warmup_steps) as f64;
        self.peak_lr * warm * self.decay_rate.powf(decayed)
    }
}

/// One evaluation target (energy, force) with its error statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMetric {
    pub name: &'static str,
    /// Mean absolute error in the target's base unit.
    pub mae: f64,
    /// Population standard deviation of the labels.
    pub label_std: f64,
}

/// Aggregate evaluation metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Mean |dE| over configurations, eV.
    pub mae_e: f64,
    /// Mean |dF| over all 3N force components, eV/Angstrom; present iff
    /// the dataset carries force labels.
    pub mae_f: Option<f64>,
    /// Mean over targets of 100 * MAE_t / std_t, percent.
    pub std_mae: f64,
    /// Mean over targets of ln(MAE_t), each target in its base unit.
    pub log_mae: f64,
    pub targets: Vec<TargetMetric>,
}

/// Scalar training loss of one prediction against one labelled
/// configuration.
pub fn loss(pred: &Prediction, label: &AtomicConfiguration, cfg: &TrainConfig) -> Result<f64> {
    let e_label = label
        .energy
        .ok_or_else(|| Error::Input("loss requires an energy label".into()))?;
    let w_f = cfg.force_weight;
    let force_term = if w_f > 0.0 {
        let f_label = label
            .forces
            .as_ref()
            .ok_or_else(|| Error::Input("force-weighted loss requires force labels".into()))?;
        let f_pred = pred
            .forces
            .as_ref()
            .ok_or_else(|| Error::Contract("prediction carries no forces".into()))?;
        if f_pred.len() != f_label.len() {
            return Err(Error::Input(format!(
                "{} predicted force rows vs {} labels",
                f_pred.len(),
                f_label.len()
            )));
        }
        let total: f64 = f_pred
            .iter()
            .zip(f_label)
            .flat_map(|(p, l)| p.iter().zip(l).map(|(a, b)| (a - b).abs()))
            .sum();
        w_f * total / (3 * f_label.len()) as f64
    } else {
        0.0
    };
    let energy_term = match cfg.loss_kind {
        LossKind::L1 => (1.0 - w_f) * (pred.energy - e_label).abs(),
        LossKind::Nll => {
            let sigma = pred
                .sigma_e
                .ok_or_else(|| Error::Contract("NLL loss requires a sigma prediction".into()))?;
            let d = e_label - pred.energy;
            sigma.ln() + d * d / (2.0 * sigma * sigma)
        }
    };
    Ok(energy_term + force_term)
}

/// A forward pass extended with the training loss of a labelled batch.
pub struct LossGraph {
    pub graph: ModelGraph,
    pub loss: NodeId,
}

/// Record the mean per-configuration loss of a batch on the tape.
///
/// The energy term averages over configurations; the force term averages
/// over each configuration's 3N components, then over configurations, so
/// every configuration carries equal weight regardless of size.
pub fn batch_loss(
    mcfg: &ModelConfig,
    store: &ParameterStore,
    tcfg: &TrainConfig,
    configs: &[AtomicConfiguration],
) -> Result<LossGraph> {
    tcfg.validate()?;
    if tcfg.loss_kind == LossKind::Nll && !mcfg.mve_head {
        return Err(Error::Contract("NLL loss requires a model with mve_head".into()));
    }
    let n_mols = configs.len();
    let mut e_labels = Vec::with_capacity(n_mols);
    for c in configs {
        e_labels
            .push(c.energy.ok_or_else(|| Error::Input("training requires energy labels".into()))?);
    }
    let w_f = tcfg.force_weight;

    let batch = build_batch(mcfg, configs)?;
    let mut graph = build_forward(mcfg, store, &batch)?;
    let tape = &mut graph.tape;
    let y_e = tape.constant(Tensor::new(n_mols, 1, e_labels));

    let inv_m = 1.0 / n_mols as f64;
    let energy_term = match tcfg.loss_kind {
        LossKind::L1 => {
            let d = tape.sub(graph.mol_energies, y_e);
            let a = tape.abs(d);
            let s = tape.sum_all(a);
            tape.scale(s, (1.0 - w_f) * inv_m)
        }
        LossKind::Nll => {
            let sigma = graph.sigmas.expect("mve head checked above");
            let log_sigma = tape.ln(sigma);
            let d = tape.sub(graph.mol_energies, y_e);
            let d2 = tape.mul(d, d);
            let s2 = tape.mul(sigma, sigma);
            let s2x2 = tape.scale(s2, 2.0);
            let q = tape.div(d2, s2x2);
            let per_mol = tape.add(log_sigma, q);
            let s = tape.sum_all(per_mol);
            tape.scale(s, inv_m)
        }
    };

    let total = if w_f > 0.0 {
        let mut f_labels = Vec::with_capacity(3 * batch.n_atoms);
        let mut weights = Vec::with_capacity(3 * batch.n_atoms);
        for (m, c) in configs.iter().enumerate() {
            let forces = c
                .forces
                .as_ref()
                .ok_or_else(|| Error::Input("force-weighted loss requires force labels".into()))?;
            let w = w_f * inv_m / (3 * c.len()) as f64;
            for f in forces {
                f_labels.extend_from_slice(f);
                weights.extend_from_slice(&[w, w, w]);
            }
            debug_assert_eq!(batch.atom_offsets[m + 1] - batch.atom_offsets[m], c.len());
        }
        let y_f = tape.constant(Tensor::new(batch.n_atoms, 3, f_labels));
        let w_t = tape.constant(Tensor::new(batch.n_atoms, 3, weights));

        // forces of the whole batch in one differentiation: molecules do
        // not interact, so -d(total E)/dx is each molecule's force field
        let f = graph.force_node()?;
        let tape = &mut graph.tape;
        let d = tape.sub(f, y_f);
        let a = tape.abs(d);
        let weighted = tape.mul(a, w_t);
        let f_term = tape.sum_all(weighted);
        graph.tape.add(energy_term, f_term)
    } else {
        energy_term
    };

    Ok(LossGraph { graph, loss: total })
}

/// Adaptive-moment optimizer state over the trainable tensors.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(store: &ParameterStore, trainable: &[usize]) -> Self {
        let sizes: Vec<usize> =
            trainable.iter().map(|&i| store.params()[i].tensor.len()).collect();
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(
        &mut self,
        store: &mut ParameterStore,
        trainable: &[usize],
        grads: &[Tensor],
        lr: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, &idx) in trainable.iter().enumerate() {
            let g = grads[k].data();
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let data = store.tensor_mut(idx).data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                // ratio before the lr product: the ratio is O(1) even when
                // the moments are enormous
                data[i] -= lr * (mhat / (vhat.sqrt() + self.eps));
            }
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mae_e: Option<f64>,
    pub val_mae_f: Option<f64>,
}

/// Training history and outcome summary.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Step whose validation metrics selected the returned parameters.
    pub best_step: usize,
    pub wall_seconds: f64,
}

impl TrainLog {
    /// CSV with header `step,lr,train_loss,val_mae_E,val_mae_F`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,train_loss,val_mae_E,val_mae_F\n");
        for r in &self.rows {
            let fmt_opt =
                |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{},{}\n",
                r.step,
                r.lr,
                r.train_loss,
                fmt_opt(r.val_mae_e),
                fmt_opt(r.val_mae_f)
            ));
        }
        out
    }
}

/// Train a model and return the best-validation parameters plus the log.
///
/// Deterministic given the seed (single-threaded). Validation runs every
/// `val_interval` steps and at the final step; the parameters with the
/// best validation mae_F (mae_E when forces are unsupervised) are
/// returned.
pub fn train(
    train_set: &[AtomicConfiguration],
    val_set: &[AtomicConfiguration],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(ParameterStore, TrainLog)> {
    use rand::prelude::*;
    let start = Instant::now();
    mcfg.validate()?;
    tcfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Input("train and validation splits must be nonempty".into()));
    }

    let mut store = ParameterStore::init(mcfg, tcfg.seed)?;
    let mut log = TrainLog::default();
    if tcfg.max_steps == 0 {
        log.wall_seconds = start.elapsed().as_secs_f64();
        return Ok((store, log));
    }

    let trainable = store.trainable_indices();
    let mut adam = Adam::new(&store, &trainable);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(tcfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    let select_on_force = tcfg.force_weight > 0.0;
    let mut best: Option<(f64, ParameterStore, usize)> = None;

    for step in 0..tcfg.max_steps {
        let mut batch_ids = Vec::with_capacity(tcfg.batch_size);
        for _ in 0..tcfg.batch_size.min(train_set.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch_ids.push(order[cursor]);
            cursor += 1;
        }
        let batch: Vec<AtomicConfiguration> =
            batch_ids.iter().map(|&i| train_set[i].clone()).collect();

        let mut lg = batch_loss(mcfg, &store, tcfg, &batch)?;
        let loss_value = lg.graph.tape.value(lg.loss).scalar_value();
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss became {loss_value} at step {step} on batch {batch_ids:?}"
            )));
        }
        let wanted: Vec<NodeId> =
            trainable.iter().map(|&i| lg.graph.param_ids[i]).collect();
        let grad_ids = lg.graph.tape.grad(lg.loss, &wanted)?;
        let grads: Vec<Tensor> =
            grad_ids.iter().map(|&g| lg.graph.tape.value(g).clone()).collect();
        drop(lg);
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite parameter gradient at step {step} on batch {batch_ids:?}"
            )));
        }

        let lr = tcfg.learning_rate(step);
        adam.step(&mut store, &trainable, &grads, lr);

        let is_val_step = (step + 1) % tcfg.val_interval == 0 || step + 1 == tcfg.max_steps;
        let mut row = LogRow {
            step: step + 1,
            lr,
            train_loss: loss_value,
            val_mae_e: None,
            val_mae_f: None,
        };
        if is_val_step {
            let metrics = evaluate(val_set, mcfg, &store)?;
            row.val_mae_e = Some(metrics.mae_e);
            row.val_mae_f = metrics.mae_f;
            let score = if select_on_force {
                metrics.mae_f.unwrap_or(metrics.mae_e)
            } else {
                metrics.mae_e
            };
            if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
                best = Some((score, store.clone(), step + 1));
            }
        }
        log.rows.push(row);
    }

    let (best_store, best_step) = match best {
        Some((_, s, step)) => (s, step),
        None => (store, tcfg.max_steps),
    };
    log.best_step = best_step;
    log.wall_seconds = start.elapsed().as_secs_f64();
    Ok((best_store, log))
}

/// Evaluation metrics over a labelled dataset.
///
/// Forces enter iff the dataset carries force labels; mixing labelled and
/// unlabelled force records is rejected.
pub fn evaluate(
    dataset: &[AtomicConfiguration],
    mcfg: &ModelConfig,
    store: &ParameterStore,
) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::Input("cannot evaluate an empty dataset".into()));
    }
    let with_forces = dataset[0].forces.is_some();
    for (i, c) in dataset.iter().enumerate() {
        if c.energy.is_none() {
            return Err(Error::Input(format!("configuration {i} has no energy label")));
        }
        if c.forces.is_some() != with_forces {
            return Err(Error::Input(
                "dataset mixes configurations with and without force labels".into(),
            ));
        }
    }

    let mut e_abs_sum = 0.0;
    let mut e_labels = Vec::with_capacity(dataset.len());
    let mut f_abs_sum = 0.0;
    let mut f_labels: Vec<f64> = Vec::new();
    const CHUNK: usize = 16;
    for chunk in dataset.chunks(CHUNK) {
        let batch = build_batch(mcfg, chunk)?;
        let mut graph = build_forward(mcfg, store, &batch)?;
        let energies = graph.energies();
        let forces = if with_forces { Some(graph.forces()?) } else { None };
        for (m, c) in chunk.iter().enumerate() {
            let y = c.energy.unwrap();
            e_abs_sum += (energies[m] - y).abs();
            e_labels.push(y);
            if let Some(forces) = &forces {
                let fl = c.forces.as_ref().unwrap();
                for (p, l) in forces[m].iter().zip(fl) {
                    for k in 0..3 {
                        f_abs_sum += (p[k] - l[k]).abs();
                        f_labels.push(l[k]);
                    }
                }
            }
        }
    }

    let mae_e = e_abs_sum / dataset.len() as f64;
    let mut targets = vec![TargetMetric {
        name: "energy",
        mae: mae_e,
        label_std: population_std(&e_labels),
    }];
    let mae_f = if with_forces {
        let mae = f_abs_sum / f_labels.len() as f64;
        targets.push(TargetMetric {
            name: "force",
            mae,
            label_std: population_std(&f_labels),
        });
        Some(mae)
    } else {
        None
    };

    // Degenerate zero values are floored so the aggregates stay finite.
    let floor = f64::MIN_POSITIVE;
    let std_mae = targets
        .iter()
        .map(|t| 100.0 * t.mae / t.label_std.max(floor))
        .sum::<f64>()
        / targets.len() as f64;
    let log_mae =
        targets.iter().map(|t| t.mae.max(floor).ln()).sum::<f64>() / targets.len() as f64;

    Ok(Metrics { mae_e, mae_f, std_mae, log_mae, targets })
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}
