//! Named parameter tensors and their initialization.

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::{InteractionKind, ModelConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One named tensor. Non-trainable entries (the per-element reference
/// energies) ride along in checkpoints but are never touched by the
/// optimizer or the network forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Ordered collection of model parameters. Iteration order is the
/// canonical construction order, which makes optimizer traversals and
/// checkpoints deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Copy)]
enum Init {
    /// Orthogonal-like columns rescaled to variance 2 / (fan_in + fan_out).
    GlorotOrthogonal,
    /// Uniform(-sqrt 3, sqrt 3): unit variance per entry.
    UniformUnit,
    Zero,
}

struct EntrySpec {
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
    init: Init,
}

fn entry(name: String, rows: usize, cols: usize, init: Init) -> EntrySpec {
    EntrySpec { name, rows, cols, trainable: true, init }
}

/// A dense layer's weight and bias.
fn dense(specs: &mut Vec<EntrySpec>, prefix: &str, fan_in: usize, fan_out: usize) {
    specs.push(entry(format!("{prefix}.w"), fan_in, fan_out, Init::GlorotOrthogonal));
    specs.push(entry(format!("{prefix}.b"), 1, fan_out, Init::Zero));
}

/// A 2-layer basis MLP: dense hidden layer, linear output layer with
/// bias. The output bias lets tests collapse the whole MLP to a constant.
fn basis_mlp(specs: &mut Vec<EntrySpec>, prefix: &str, in_dim: usize, out_dim: usize) {
    specs.push(entry(format!("{prefix}.w1"), in_dim, out_dim, Init::GlorotOrthogonal));
    specs.push(entry(format!("{prefix}.b1"), 1, out_dim, Init::Zero));
    specs.push(entry(format!("{prefix}.w2"), out_dim, out_dim, Init::GlorotOrthogonal));
    specs.push(entry(format!("{prefix}.b2"), 1, out_dim, Init::Zero));
}

fn expected_entries(cfg: &ModelConfig) -> Vec<EntrySpec> {
    let h = cfg.hidden_dim;
    let t = cfg.triplet_dim;
    let oe = cfg.out_emb_dim;
    let nr = cfg.basis.num_radial;
    let sbf = cfg.basis.sbf_dim();
    let nb = cfg.num_bilinear;
    let mut specs = Vec::new();

    specs.push(entry("embed.element".into(), cfg.num_elements, h, Init::UniformUnit));
    specs.push(entry("embed.rbf.w".into(), nr, h, Init::GlorotOrthogonal));
    dense(&mut specs, "embed.dense", 3 * h, h);

    for b in 0..cfg.num_blocks {
        let p = format!("block{b}");
        dense(&mut specs, &format!("{p}.message"), h, h);
        match cfg.interaction_kind {
            InteractionKind::Hadamard => {
                basis_mlp(&mut specs, &format!("{p}.rbf"), nr, h);
                basis_mlp(&mut specs, &format!("{p}.sbf"), sbf, t);
                specs.push(entry(format!("{p}.down.w"), h, t, Init::GlorotOrthogonal));
                specs.push(entry(format!("{p}.up.w"), t, h, Init::GlorotOrthogonal));
            }
            InteractionKind::Bilinear => {
                dense(&mut specs, &format!("{p}.rbf_gate"), nr, h);
                dense(&mut specs, &format!("{p}.sbf_proj"), sbf, nb);
                // [nb, h, h] tensor flattened to [h, nb*h]: columns
                // [s*h, (s+1)*h) hold slice s.
                specs.push(entry(format!("{p}.bilinear.w"), h, nb * h, Init::GlorotOrthogonal));
            }
        }
        dense(&mut specs, &format!("{p}.update"), h, h);
        dense(&mut specs, &format!("{p}.res0"), h, h);
        dense(&mut specs, &format!("{p}.res1"), h, h);
    }

    for d in 0..=cfg.num_blocks {
        let p = format!("out{d}");
        basis_mlp(&mut specs, &format!("{p}.rbf"), nr, h);
        specs.push(entry(format!("{p}.up.w"), h, oe, Init::GlorotOrthogonal));
        dense(&mut specs, &format!("{p}.mlp0"), oe, oe);
        dense(&mut specs, &format!("{p}.mlp1"), oe, oe);
        // zero-initialized scalar head(s): initial energies are exactly 0
        specs.push(entry(format!("{p}.head.w"), oe, cfg.num_heads(), Init::Zero));
    }

    specs.push(EntrySpec {
        name: "ref_energies".into(),
        rows: cfg.num_elements,
        cols: 1,
        trainable: false,
        init: Init::Zero,
    });
    specs
}

impl ParameterStore {
    /// Fresh parameters for a model configuration, deterministic in the
    /// seed.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for spec in expected_entries(cfg) {
            let tensor = match spec.init {
                Init::GlorotOrthogonal => glorot_orthogonal(&mut rng, spec.rows, spec.cols),
                Init::UniformUnit => {
                    let s = 3f64.sqrt();
                    Tensor::new(
                        spec.rows,
                        spec.cols,
                        (0..spec.rows * spec.cols).map(|_| rng.gen_range(-s..s)).collect(),
                    )
                }
                Init::Zero => Tensor::zeros(spec.rows, spec.cols),
            };
            params.push(Param { name: spec.name, tensor, trainable: spec.trainable });
        }
        Ok(Self::from_params(params))
    }

    pub fn from_params(params: Vec<Param>) -> Self {
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Self { params, index }
    }

    /// Check that the entries exactly match what `cfg` requires and that
    /// every value is finite.
    pub fn validate_for(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = expected_entries(cfg);
        if expected.len() != self.params.len() {
            return Err(Error::Input(format!(
                "parameter store has {} entries, model needs {}",
                self.params.len(),
                expected.len()
            )));
        }
        for (spec, param) in expected.iter().zip(&self.params) {
            if spec.name != param.name {
                return Err(Error::Input(format!(
                    "parameter {} where {} was expected",
                    param.name, spec.name
                )));
            }
            if param.tensor.shape() != (spec.rows, spec.cols) {
                return Err(Error::Input(format!(
                    "parameter {} has shape [{}, {}], expected [{}, {}]",
                    param.name,
                    param.tensor.rows(),
                    param.tensor.cols(),
                    spec.rows,
                    spec.cols
                )));
            }
            if spec.trainable != param.trainable {
                return Err(Error::Input(format!(
                    "parameter {} trainability flag mismatch",
                    param.name
                )));
            }
            if !param.tensor.is_finite() {
                return Err(Error::Input(format!("parameter {} contains non-finite values", param.name)));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Tensor by name; the name must exist.
    pub fn get(&self, name: &str) -> &Tensor {
        let i = self.index[name];
        &self.params[i].tensor
    }

    /// Replace a tensor, keeping its shape.
    pub fn set(&mut self, name: &str, tensor: Tensor) {
        let i = self.index[name];
        assert_eq!(
            self.params[i].tensor.shape(),
            tensor.shape(),
            "shape change for parameter {name}"
        );
        self.params[i].tensor = tensor;
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.params[i].tensor
    }

    pub fn trainable_indices(&self) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| self.params[i].trainable).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; lower bound keeps ln finite
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Random matrix with orthogonalized columns (rows when the matrix is
/// wide), rescaled so the empirical entry variance is 2/(rows + cols).
fn glorot_orthogonal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let transpose = cols > rows;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    // columns of an r x c matrix with r >= c
    let mut m = vec![vec![0.0f64; r]; c];
    for k in 0..c {
        loop {
            for x in m[k].iter_mut() {
                *x = gaussian(rng);
            }
            for j in 0..k {
                let dot: f64 = m[k].iter().zip(&m[j]).map(|(a, b)| a * b).sum();
                let prev = m[j].clone();
                for (x, p) in m[k].iter_mut().zip(prev) {
                    *x -= dot * p;
                }
            }
            let norm: f64 = m[k].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for x in m[k].iter_mut() {
                    *x /= norm;
                }
                break;
            }
        }
    }
    let mut t = Tensor::zeros(rows, cols);
    for k in 0..c {
        for i in 0..r {
            if transpose {
                t.set(k, i, m[k][i]);
            } else {
                t.set(i, k, m[k][i]);
            }
        }
    }
    let n = (rows * cols) as f64;
    let mean = t.data().iter().sum::<f64>() / n;
    let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let target = 2.0 / (rows + cols) as f64;
    if var > 1e-30 {
        let s = (target / var).sqrt();
        t = t.map(|x| x * s);
    }
    t
}
