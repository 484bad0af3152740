//! Uncertainty quantification: deep ensembles with spread-based sigmas, the
//! covariance identity relating the energy-variance gradient to the
//! energy-force covariance, and calibration metrics.
//!
//! The mean-variance head (see [`crate::model::mve_forward`]) predicts a
//! sigma for the energy only; because its variance is not a function of the
//! per-member energies, no force sigma can be derived from it, and force
//! sigmas are structurally absent from its predictions. Ensembles provide
//! both.

use std::time::Instant;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::geometry::AtomicConfiguration;
use crate::model::{
    self, build_batch, record_forward, ModelConfig, ParameterStore, Prediction,
};
use crate::train::{train, TrainConfig, TrainLog};

/// Default ensemble size.
pub const DEFAULT_MEMBERS: usize = 3;

/// A deep ensemble: one model configuration shared by `K >= 1` members that
/// differ only in their training seed.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub config: ModelConfig,
    pub members: Vec<ParameterStore>,
    /// Training seed of each member, parallel to `members`.
    pub seeds: Vec<u64>,
}

impl Ensemble {
    pub fn new(
        config: ModelConfig,
        members: Vec<ParameterStore>,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Input("an ensemble needs at least one member".into()));
        }
        if members.len() != seeds.len() {
            return Err(Error::Input(format!(
                "got {} members but {} seeds",
                members.len(),
                seeds.len()
            )));
        }
        for m in &members {
            m.validate_for(&config)?;
        }
        Ok(Ensemble { config, members, seeds })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Mean and unbiased sample standard deviation.
///
/// Bitwise-identical inputs short-circuit to a spread of exactly zero, so an
/// ensemble of identical members reports sigma = 0 rather than rounding
/// noise; a single value likewise has zero spread.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    debug_assert!(k > 0);
    if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    (mean, var.sqrt())
}

/// Ensemble prediction: member means with spread sigmas.
///
/// Members are evaluated concurrently when `threads > 1`, but the reduction
/// always runs in member-index order, so the result is independent of the
/// thread count.
pub fn ensemble_predict(
    ensemble: &Ensemble,
    config: &AtomicConfiguration,
    want_forces: bool,
    threads: usize,
) -> Result<Prediction> {
    if threads == 0 {
        return Err(Error::Input("threads must be at least 1".into()));
    }
    let k = ensemble.members.len();
    let mut slots: Vec<Option<Result<Prediction>>> = (0..k).map(|_| None).collect();
    if threads <= 1 || k == 1 {
        for (i, store) in ensemble.members.iter().enumerate() {
            slots[i] = Some(model::predict(&ensemble.config, store, config, want_forces));
        }
    } else {
        let workers = threads.min(k);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let cfg = &ensemble.config;
                    let members = &ensemble.members;
                    scope.spawn(move || {
                        let mut out = Vec::new();
                        let mut i = w;
                        while i < k {
                            out.push((i, model::predict(cfg, &members[i], config, want_forces)));
                            i += workers;
                        }
                        out
                    })
                })
                .collect();
            for h in handles {
                for (i, p) in h.join().expect("prediction worker panicked") {
                    slots[i] = Some(p);
                }
            }
        });
    }
    let preds: Vec<Prediction> =
        slots.into_iter().map(|s| s.expect("every member filled")).collect::<Result<_>>()?;

    let energies: Vec<f64> = preds.iter().map(|p| p.energy).collect();
    let (energy, sigma_e) = mean_std(&energies);
    let (forces, sigma_f) = if want_forces {
        let n = config.len();
        let mut mean_f = vec![[0.0f64; 3]; n];
        let mut std_f = vec![[0.0f64; 3]; n];
        let mut vals = Vec::with_capacity(k);
        for a in 0..n {
            for c in 0..3 {
                vals.clear();
                vals.extend(
                    preds
                        .iter()
                        .map(|p| p.forces.as_ref().expect("forces requested")[a][c]),
                );
                let (m, s) = mean_std(&vals);
                mean_f[a][c] = m;
                std_f[a][c] = s;
            }
        }
        (Some(mean_f), Some(std_f))
    } else {
        (None, None)
    };
    Ok(Prediction { energy, forces, sigma_e: Some(sigma_e), sigma_f })
}

/// Unbiased sample variance of scalar nodes, recorded on the tape.
pub(crate) fn variance_node(tape: &mut Tape, values: &[NodeId]) -> NodeId {
    let k = values.len();
    assert!(k >= 2, "variance needs at least two values");
    let mut total = values[0];
    for &v in &values[1..] {
        total = tape.add(total, v);
    }
    let mean = tape.scale(total, 1.0 / k as f64);
    let mut acc: Option<NodeId> = None;
    for &v in values {
        let dev = tape.sub(v, mean);
        let sq = tape.mul(dev, dev);
        acc = Some(match acc {
            Some(a) => tape.add(a, sq),
            None => sq,
        });
    }
    tape.scale(acc.expect("k >= 2"), 1.0 / (k - 1) as f64)
}

/// Result of [`cov_identity_check`].
#[derive(Debug, Clone, Copy)]
pub struct CovIdentity {
    /// Largest absolute difference between the differentiated
    /// variance-gradient and `-2 Cov(E, F)`, over all atom components.
    pub max_abs_discrepancy: f64,
    /// Largest absolute value of `-2 Cov(E, F)`, for relative residuals.
    pub max_abs_rhs: f64,
}

/// Verify `dVar(E)/dx = -2 Cov(E, F)` for an ensemble on one configuration.
///
/// The left side differentiates the unbiased variance of the member energies
/// through a tape holding every member; the right side combines the members'
/// independently computed energies and forces with the unbiased sample
/// covariance. The two agree analytically, so the returned discrepancy
/// measures only the numerics of the differentiation.
pub fn cov_identity_check(
    ensemble: &Ensemble,
    config: &AtomicConfiguration,
) -> Result<CovIdentity> {
    let k = ensemble.members.len();
    if k < 2 {
        return Err(Error::Contract(
            "the covariance identity needs at least two ensemble members".into(),
        ));
    }
    let batch = build_batch(&ensemble.config, std::slice::from_ref(config))?;
    let mut tape = Tape::new();
    let x = tape.input(batch.positions.clone());
    let mut e_nodes = Vec::with_capacity(k);
    for store in &ensemble.members {
        let parts = record_forward(&mut tape, &ensemble.config, store, &batch, x)?;
        e_nodes.push(parts.total_energy);
    }
    let var = variance_node(&mut tape, &e_nodes);
    let grad = tape.grad(var, &[x])?[0];
    let lhs = tape.value(grad);

    let preds: Vec<Prediction> = ensemble
        .members
        .iter()
        .map(|store| model::predict_forces(&ensemble.config, store, config))
        .collect::<Result<_>>()?;
    let e_mean = preds.iter().map(|p| p.energy).sum::<f64>() / k as f64;
    let n = config.len();
    let mut f_mean = vec![[0.0f64; 3]; n];
    for p in &preds {
        let f = p.forces.as_ref().expect("forces requested");
        for a in 0..n {
            for c in 0..3 {
                f_mean[a][c] += f[a][c] / k as f64;
            }
        }
    }
    let mut max_abs_discrepancy = 0.0f64;
    let mut max_abs_rhs = 0.0f64;
    for a in 0..n {
        for c in 0..3 {
            let mut cov = 0.0;
            for p in &preds {
                let f = p.forces.as_ref().expect("forces requested");
                cov += (p.energy - e_mean) * (f[a][c] - f_mean[a][c]);
            }
            cov /= (k - 1) as f64;
            let rhs = -2.0 * cov;
            max_abs_rhs = max_abs_rhs.max(rhs.abs());
            max_abs_discrepancy = max_abs_discrepancy.max((lhs.get(a, c) - rhs).abs());
        }
    }
    Ok(CovIdentity { max_abs_discrepancy, max_abs_rhs })
}

/// Outcome of [`ensemble_train`].
#[derive(Debug, Clone)]
pub struct EnsembleTrainOutcome {
    pub ensemble: Ensemble,
    /// Per-member training logs, parallel to the members.
    pub logs: Vec<TrainLog>,
    /// Wall time of the whole ensemble run, seconds.
    pub wall_seconds: f64,
}

/// Train `members` models that differ only in their seed.
///
/// Member `k` trains with seed `base + k`, so a one-member ensemble is the
/// plain training run. Runs are sequential; the wall time of the whole
/// ensemble is recorded.
pub fn ensemble_train(
    train_set: &[AtomicConfiguration],
    val_set: &[AtomicConfiguration],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    members: usize,
) -> Result<EnsembleTrainOutcome> {
    if members == 0 {
        return Err(Error::Input("an ensemble needs at least one member".into()));
    }
    let start = Instant::now();
    let mut stores = Vec::with_capacity(members);
    let mut logs = Vec::with_capacity(members);
    let mut seeds = Vec::with_capacity(members);
    for k in 0..members {
        let seed = tcfg.seed.wrapping_add(k as u64);
        let member_cfg = TrainConfig { seed, ..tcfg.clone() };
        let (store, log) = train(train_set, val_set, mcfg, &member_cfg)?;
        stores.push(store);
        logs.push(log);
        seeds.push(seed);
    }
    let ensemble = Ensemble::new(mcfg.clone(), stores, seeds)?;
    Ok(EnsembleTrainOutcome { ensemble, logs, wall_seconds: start.elapsed().as_secs_f64() })
}

/// Pearson correlation coefficient; `None` when undefined (fewer than two
/// samples, or either variable constant).
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// One per-configuration calibration sample.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationSample {
    pub sample_id: usize,
    /// Absolute energy error, eV.
    pub delta_e: f64,
    pub sigma_e: f64,
}

/// Correlations between predicted sigmas and actual errors.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    /// Pearson correlation of |energy error| with sigma_E over
    /// configurations; `None` when undefined.
    pub rho_energy: Option<f64>,
    /// Pearson correlation of |force-component error| with the matching
    /// sigma_F component, pooled over all atoms; `None` when the
    /// predictions carry no force sigmas (as for the mean-variance head)
    /// or the correlation is undefined.
    pub rho_force: Option<f64>,
    /// Pearson correlation of |force-component error| with the
    /// configuration's sigma_E; `None` when undefined.
    pub rho_force_energy: Option<f64>,
    /// Number of configurations behind `rho_energy`.
    pub n_energy: usize,
    /// Number of pooled force components behind the force correlations.
    pub n_force: usize,
    pub samples: Vec<CalibrationSample>,
}

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.17e}"),
        None => "undefined".into(),
    }
}

impl CalibrationReport {
    /// CSV with rows `metric,value,n_samples`; undefined correlations
    /// appear as the literal `undefined`.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("metric,value,n_samples\n");
        out.push_str(&format!(
            "rho_energy_sigma_energy,{},{}\n",
            fmt_metric(self.rho_energy),
            self.n_energy
        ));
        out.push_str(&format!(
            "rho_force_sigma_force,{},{}\n",
            fmt_metric(self.rho_force),
            self.n_force
        ));
        out.push_str(&format!(
            "rho_force_sigma_energy,{},{}\n",
            fmt_metric(self.rho_force_energy),
            self.n_force
        ));
        out
    }

    /// CSV with rows `sample_id,delta_E,sigma_E`.
    pub fn samples_csv(&self) -> String {
        let mut out = String::from("sample_id,delta_E,sigma_E\n");
        for s in &self.samples {
            out.push_str(&format!("{},{:.17e},{:.17e}\n", s.sample_id, s.delta_e, s.sigma_e));
        }
        out
    }
}

/// Compare per-configuration predictions against labels.
///
/// Every prediction needs a sigma_E and every label an energy. Force-based
/// metrics use whichever of the predicted forces, force sigmas, and force
/// labels are present on all samples; presence must be uniform across
/// samples.
pub fn calibrate(
    preds: &[Prediction],
    labels: &[AtomicConfiguration],
) -> Result<CalibrationReport> {
    if preds.len() != labels.len() {
        return Err(Error::Input(format!(
            "got {} predictions but {} labelled configurations",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Input("calibration needs at least one sample".into()));
    }
    let has_pred_f = preds[0].forces.is_some();
    let has_sigma_f = preds[0].sigma_f.is_some();
    let has_label_f = labels[0].forces.is_some();
    for p in preds {
        if p.forces.is_some() != has_pred_f || p.sigma_f.is_some() != has_sigma_f {
            return Err(Error::Input(
                "every prediction must carry the same fields".into(),
            ));
        }
        if p.sigma_e.is_none() {
            return Err(Error::Input("calibration needs sigma_E on every prediction".into()));
        }
    }
    for l in labels {
        if l.energy.is_none() {
            return Err(Error::Input("calibration needs an energy label on every sample".into()));
        }
        if l.forces.is_some() != has_label_f {
            return Err(Error::Input(
                "force labels must be present on all samples or none".into(),
            ));
        }
    }

    let mut de = Vec::with_capacity(preds.len());
    let mut se = Vec::with_capacity(preds.len());
    let mut samples = Vec::with_capacity(preds.len());
    let mut df_pool = Vec::new();
    let mut sf_pool = Vec::new();
    let mut se_pool = Vec::new();
    for (i, (p, l)) in preds.iter().zip(labels).enumerate() {
        let sigma_e = p.sigma_e.expect("checked above");
        let delta_e = (p.energy - l.energy.expect("checked above")).abs();
        de.push(delta_e);
        se.push(sigma_e);
        samples.push(CalibrationSample { sample_id: i, delta_e, sigma_e });
        if has_pred_f && has_label_f {
            let pf = p.forces.as_ref().expect("uniform fields");
            let lf = l.forces.as_ref().expect("uniform fields");
            if pf.len() != lf.len() {
                return Err(Error::Input(format!(
                    "sample {i}: {} predicted forces but {} labelled",
                    pf.len(),
                    lf.len()
                )));
            }
            for (a, (fp, fl)) in pf.iter().zip(lf).enumerate() {
                for c in 0..3 {
                    let delta = (fp[c] - fl[c]).abs();
                    df_pool.push(delta);
                    se_pool.push(sigma_e);
                    if has_sigma_f {
                        sf_pool.push(p.sigma_f.as_ref().expect("uniform fields")[a][c]);
                    }
                }
            }
        }
    }

    Ok(CalibrationReport {
        rho_energy: pearson(&de, &se),
        rho_force: if has_sigma_f { pearson(&df_pool, &sf_pool) } else { None },
        rho_force_energy: pearson(&df_pool, &se_pool),
        n_energy: de.len(),
        n_force: df_pool.len(),
        samples,
    })
}
