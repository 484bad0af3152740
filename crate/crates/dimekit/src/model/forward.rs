//! Batch assembly and the differentiable forward pass.
//!
//! A batch concatenates independent molecular graphs. Every per-edge and
//! per-atom operation is row-local and segment reductions accumulate in
//! ascending row order, so evaluating a batch is bitwise identical to
//! evaluating its members separately.

use std::rc::Rc;

use super::{InteractionKind, ModelConfig, ParameterStore, Prediction};
use crate::autodiff::{NodeId, Tape, Tensor};
use crate::basis::{envelope_coefficients, sh_norm, BasisTables};
use crate::error::{Error, Result};
use crate::geometry::{build_graph, AtomicConfiguration};

/// Concatenated graphs of one or more configurations.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub n_atoms: usize,
    pub n_edges: usize,
    pub n_triplets: usize,
    pub n_mols: usize,
    /// Atom index range of molecule m is atom_offsets[m]..atom_offsets[m+1].
    pub atom_offsets: Vec<usize>,
    /// [n_atoms, 3] coordinates, Angstrom.
    pub positions: Tensor,
    /// Element-table row (atomic number - 1) per atom.
    pub z_index: Rc<Vec<usize>>,
    pub edge_src: Rc<Vec<usize>>,
    pub edge_dst: Rc<Vec<usize>>,
    /// Incoming edge (k->j) per triplet.
    pub trip_in: Rc<Vec<usize>>,
    /// Outgoing edge (j->i) per triplet.
    pub trip_out: Rc<Vec<usize>>,
    pub mol_of_atom: Rc<Vec<usize>>,
    /// 1.0 for molecules with at least one edge, 0.0 for edge-free ones
    /// (whose energy is fixed to exactly zero).
    pub mol_mask: Vec<f64>,
    /// Geometry-module distances per edge, for cross-checks.
    pub edge_distances: Vec<f64>,
    /// Geometry-module angles per triplet, for cross-checks.
    pub angles: Vec<f64>,
}

/// Build the concatenated graph of a batch of configurations.
pub fn build_batch(cfg: &ModelConfig, configs: &[AtomicConfiguration]) -> Result<GraphBatch> {
    cfg.validate()?;
    if configs.is_empty() {
        return Err(Error::Input("batch must contain at least one configuration".into()));
    }
    let cutoff = cfg.basis.cutoff;
    let mut batch = GraphBatch {
        n_atoms: 0,
        n_edges: 0,
        n_triplets: 0,
        n_mols: configs.len(),
        atom_offsets: vec![0],
        positions: Tensor::zeros(0, 0),
        z_index: Rc::new(Vec::new()),
        edge_src: Rc::new(Vec::new()),
        edge_dst: Rc::new(Vec::new()),
        trip_in: Rc::new(Vec::new()),
        trip_out: Rc::new(Vec::new()),
        mol_of_atom: Rc::new(Vec::new()),
        mol_mask: Vec::new(),
        edge_distances: Vec::new(),
        angles: Vec::new(),
    };
    let mut coords = Vec::new();
    let mut z_index = Vec::new();
    let mut edge_src = Vec::new();
    let mut edge_dst = Vec::new();
    let mut trip_in = Vec::new();
    let mut trip_out = Vec::new();
    let mut mol_of_atom = Vec::new();

    for (m, config) in configs.iter().enumerate() {
        config.validate()?;
        for &z in &config.atomic_numbers {
            if z < 1 || z as usize > cfg.num_elements {
                return Err(Error::Input(format!(
                    "unknown element Z={z}; this model supports Z in 1..={}",
                    cfg.num_elements
                )));
            }
            z_index.push(z as usize - 1);
        }
        let atom_base = batch.n_atoms;
        let edge_base = batch.n_edges;
        let (edges, triplets) = build_graph(config, cutoff)?;
        for p in &config.positions {
            coords.extend_from_slice(p);
        }
        for &(src, dst) in &edges.edges {
            edge_src.push(atom_base + src);
            edge_dst.push(atom_base + dst);
        }
        for t in 0..triplets.len() {
            trip_in.push(edge_base + triplets.edge_in[t]);
            trip_out.push(edge_base + triplets.edge_out[t]);
        }
        mol_of_atom.extend(std::iter::repeat(m).take(config.len()));
        batch.mol_mask.push(if edges.is_empty() { 0.0 } else { 1.0 });
        batch.edge_distances.extend_from_slice(&edges.distances);
        batch.angles.extend_from_slice(&triplets.angles);
        batch.n_atoms += config.len();
        batch.n_edges += edges.len();
        batch.n_triplets += triplets.len();
        batch.atom_offsets.push(batch.n_atoms);
    }

    batch.positions = Tensor::new(batch.n_atoms, 3, coords);
    batch.z_index = Rc::new(z_index);
    batch.edge_src = Rc::new(edge_src);
    batch.edge_dst = Rc::new(edge_dst);
    batch.trip_in = Rc::new(trip_in);
    batch.trip_out = Rc::new(trip_out);
    batch.mol_of_atom = Rc::new(mol_of_atom);
    Ok(batch)
}

/// A recorded forward pass, ready for readout and differentiation.
pub struct ModelGraph {
    pub tape: Tape,
    /// Position input node, [n_atoms, 3].
    pub positions: NodeId,
    /// Radial features per edge.
    pub rbf: NodeId,
    /// Angular features per triplet.
    pub sbf: NodeId,
    /// Message embeddings after the embedding block and after each
    /// interaction block.
    pub messages: Vec<NodeId>,
    /// Per-atom head outputs [n_atoms, num_heads], before masking.
    pub atom_heads: NodeId,
    /// Per-atom energy contributions [n_atoms, 1], masked so atoms of
    /// edge-free molecules contribute exactly zero.
    pub atom_energy: NodeId,
    /// Per-molecule energies [n_mols, 1].
    pub mol_energies: NodeId,
    /// Sum of all molecule energies, [1, 1].
    pub total_energy: NodeId,
    /// Per-molecule sigma_E, [n_mols, 1]; present iff the MVE head is on.
    pub sigmas: Option<NodeId>,
    /// Tape ids of the parameters, aligned with the store entries.
    pub param_ids: Vec<NodeId>,
    pub batch: GraphBatch,
    force_node: Option<NodeId>,
}

struct Loaded<'a> {
    store: &'a ParameterStore,
    ids: &'a [NodeId],
}

impl Loaded<'_> {
    fn id(&self, name: &str) -> NodeId {
        let i = self
            .store
            .position(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from store"));
        self.ids[i]
    }
}

fn dense_silu(tape: &mut Tape, p: &Loaded, prefix: &str, x: NodeId) -> NodeId {
    let w = p.id(&format!("{prefix}.w"));
    let b = p.id(&format!("{prefix}.b"));
    let h = tape.matmul(x, w);
    let h = tape.add_row(h, b);
    tape.silu(h)
}

/// Two-layer basis MLP: silu hidden layer, linear output layer.
fn basis_mlp(tape: &mut Tape, p: &Loaded, prefix: &str, x: NodeId) -> NodeId {
    let w1 = p.id(&format!("{prefix}.w1"));
    let b1 = p.id(&format!("{prefix}.b1"));
    let w2 = p.id(&format!("{prefix}.w2"));
    let b2 = p.id(&format!("{prefix}.b2"));
    let h = tape.matmul(x, w1);
    let h = tape.add_row(h, b1);
    let h = tape.silu(h);
    let o = tape.matmul(h, w2);
    tape.add_row(o, b2)
}

/// Cutoff envelope of t = d/c, recorded on the tape. Callers guarantee
/// t <= 1; the polynomial evaluates to exactly 0 at t = 1.
fn envelope_on_tape(tape: &mut Tape, t: NodeId, p: u32) -> NodeId {
    let (c0, c1, c2) = envelope_coefficients(p);
    let mut tp = t;
    for _ in 1..p {
        tp = tape.mul(tp, t);
    }
    let tp1 = tape.mul(tp, t);
    let tp2 = tape.mul(tp1, t);
    let s0 = tape.scale(tp, c0);
    let s1 = tape.scale(tp1, c1);
    let s2 = tape.scale(tp2, c2);
    let s01 = tape.add(s0, s1);
    let sum = tape.add(s01, s2);
    tape.add_scalar(sum, 1.0)
}

/// Radial features of per-edge distances d, [E, num_radial].
fn rbf_on_tape(tape: &mut Tape, d: NodeId, tables: &BasisTables) -> NodeId {
    let cfg = &tables.config;
    let c = cfg.cutoff;
    let t = tape.scale(d, 1.0 / c);
    let env = envelope_on_tape(tape, t, cfg.envelope_exponent);
    let amp = (2.0 / c).sqrt();
    let mut cols = Vec::with_capacity(cfg.num_radial);
    for n in 1..=cfg.num_radial {
        let arg = tape.scale(d, n as f64 * std::f64::consts::PI / c);
        let s = tape.sin(arg);
        let frac = tape.div(s, d);
        let scaled = tape.scale(frac, amp);
        cols.push(tape.mul(scaled, env));
    }
    tape.concat_cols(&cols)
}

/// Angular features per triplet from the incoming-edge distance and the
/// cosine of the triplet angle, [T, num_spherical * num_radial].
fn sbf_on_tape(tape: &mut Tape, d_in: NodeId, cos_alpha: NodeId, tables: &BasisTables) -> NodeId {
    let cfg = &tables.config;
    let c = cfg.cutoff;
    let rows = tape.value(d_in).rows();
    let t = tape.scale(d_in, 1.0 / c);
    let env = envelope_on_tape(tape, t, cfg.envelope_exponent);

    // Legendre polynomials of cos(alpha) by the three-term recurrence,
    // shared across radial indices.
    let mut legendre = Vec::with_capacity(cfg.num_spherical);
    legendre.push(tape.constant(Tensor::full(rows, 1, 1.0)));
    if cfg.num_spherical > 1 {
        legendre.push(cos_alpha);
    }
    for l in 1..cfg.num_spherical.saturating_sub(1) {
        let prod = tape.mul(cos_alpha, legendre[l]);
        let a = tape.scale(prod, (2 * l + 1) as f64 / (l + 1) as f64);
        let b = tape.scale(legendre[l - 1], l as f64 / (l + 1) as f64);
        legendre.push(tape.sub(a, b));
    }

    let mut cols = Vec::with_capacity(cfg.sbf_dim());
    for l in 0..cfg.num_spherical {
        for n in 0..cfg.num_radial {
            let z = tables.roots[l][n];
            let arg = tape.scale(d_in, z / c);
            let j = tape.bessel_j(arg, l);
            let jp = tape.mul(j, legendre[l]);
            let jpe = tape.mul(jp, env);
            cols.push(tape.scale(jpe, tables.radial_norms[l][n] * sh_norm(l)));
        }
    }
    tape.concat_cols(&cols)
}

fn f_update(tape: &mut Tape, p: &Loaded, prefix: &str, m: NodeId, agg: NodeId) -> NodeId {
    let x = tape.add(m, agg);
    let x = dense_silu(tape, p, &format!("{prefix}.update"), x);
    let r = dense_silu(tape, p, &format!("{prefix}.res0"), x);
    let x = tape.add(x, r);
    let r = dense_silu(tape, p, &format!("{prefix}.res1"), x);
    tape.add(x, r)
}

#[allow(clippy::too_many_arguments)]
fn interaction_hadamard(
    tape: &mut Tape,
    p: &Loaded,
    block: usize,
    m: NodeId,
    rbf: NodeId,
    sbf: NodeId,
    batch: &GraphBatch,
) -> NodeId {
    let pre = format!("block{block}");
    let mtil = dense_silu(tape, p, &format!("{pre}.message"), m);
    let gate = basis_mlp(tape, p, &format!("{pre}.rbf"), rbf);
    let g = tape.mul(mtil, gate);
    let q = tape.matmul(g, p.id(&format!("{pre}.down.w")));
    let qk = tape.gather(q, batch.trip_in.clone());
    let sgate = basis_mlp(tape, p, &format!("{pre}.sbf"), sbf);
    let t = tape.mul(qk, sgate);
    let s = tape.segment_sum(t, batch.trip_out.clone(), batch.n_edges);
    let up = tape.matmul(s, p.id(&format!("{pre}.up.w")));
    f_update(tape, p, &pre, m, up)
}

#[allow(clippy::too_many_arguments)]
fn interaction_bilinear(
    tape: &mut Tape,
    p: &Loaded,
    cfg: &ModelConfig,
    block: usize,
    m: NodeId,
    rbf: NodeId,
    sbf: NodeId,
    batch: &GraphBatch,
) -> NodeId {
    let pre = format!("block{block}");
    let h = cfg.hidden_dim;
    let mtil = dense_silu(tape, p, &format!("{pre}.message"), m);
    let gw = p.id(&format!("{pre}.rbf_gate.w"));
    let gb = p.id(&format!("{pre}.rbf_gate.b"));
    let gate = tape.matmul(rbf, gw);
    let gate = tape.add_row(gate, gb);
    let g = tape.mul(mtil, gate);

    let pw = p.id(&format!("{pre}.sbf_proj.w"));
    let pb = p.id(&format!("{pre}.sbf_proj.b"));
    let proj = tape.matmul(sbf, pw);
    let proj = tape.add_row(proj, pb);

    let gk = tape.gather(g, batch.trip_in.clone());
    let w = p.id(&format!("{pre}.bilinear.w"));
    let mut acc: Option<NodeId> = None;
    for s in 0..cfg.num_bilinear {
        let ws = tape.slice_cols(w, s * h, (s + 1) * h);
        let mapped = tape.matmul(gk, ws);
        let ps = tape.slice_cols(proj, s, s + 1);
        let ps_wide = tape.repeat_cols(ps, h);
        let term = tape.mul(mapped, ps_wide);
        acc = Some(match acc {
            Some(a) => tape.add(a, term),
            None => term,
        });
    }
    let t = acc.expect("num_bilinear >= 1");
    let s_agg = tape.segment_sum(t, batch.trip_out.clone(), batch.n_edges);
    f_update(tape, p, &pre, m, s_agg)
}

fn output_block(
    tape: &mut Tape,
    p: &Loaded,
    depth: usize,
    m: NodeId,
    rbf: NodeId,
    batch: &GraphBatch,
) -> NodeId {
    let pre = format!("out{depth}");
    let gate = basis_mlp(tape, p, &format!("{pre}.rbf"), rbf);
    let gated = tape.mul(m, gate);
    let atom = tape.segment_sum(gated, batch.edge_dst.clone(), batch.n_atoms);
    let a = tape.matmul(atom, p.id(&format!("{pre}.up.w")));
    let a = dense_silu(tape, p, &format!("{pre}.mlp0"), a);
    let a = dense_silu(tape, p, &format!("{pre}.mlp1"), a);
    tape.matmul(a, p.id(&format!("{pre}.head.w")))
}

/// Nodes recorded by one forward pass on a shared tape.
pub(crate) struct ForwardParts {
    pub rbf: NodeId,
    pub sbf: NodeId,
    pub messages: Vec<NodeId>,
    pub atom_heads: NodeId,
    pub atom_energy: NodeId,
    pub mol_energies: NodeId,
    pub total_energy: NodeId,
    pub sigmas: Option<NodeId>,
    pub param_ids: Vec<NodeId>,
}

/// Record the forward pass of a batch on an existing tape, reading atom
/// positions from the node `x`. Several models can share one tape (and one
/// position input), which lets quantities combining their outputs be
/// differentiated with respect to the positions.
pub(crate) fn record_forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    store: &ParameterStore,
    batch: &GraphBatch,
    x: NodeId,
) -> Result<ForwardParts> {
    store.validate_for(cfg)?;
    let tables = BasisTables::new(&cfg.basis)?;

    let param_ids: Vec<NodeId> = store
        .params()
        .iter()
        .map(|p| {
            if p.trainable {
                tape.input(p.tensor.clone())
            } else {
                tape.constant(p.tensor.clone())
            }
        })
        .collect();
    let p = Loaded { store, ids: &param_ids };

    let xs = tape.gather(x, batch.edge_src.clone());
    let xd = tape.gather(x, batch.edge_dst.clone());
    let u = tape.sub(xd, xs);
    let u2 = tape.mul(u, u);
    let d2 = tape.sum_cols(u2);
    let d = tape.sqrt(d2);

    let rbf = rbf_on_tape(tape, d, &tables);

    // cos(angle) between the directions j->i and j->k for each triplet
    // (k->j, j->i): u(out) = x_i - x_j, u(in) = x_j - x_k, so the cosine
    // is -<u_out, u_in> / (d_out d_in). No arccos on the tape: its
    // derivative blows up at collinear geometries, the Legendre chain
    // below does not.
    let u_in = tape.gather(u, batch.trip_in.clone());
    let u_out = tape.gather(u, batch.trip_out.clone());
    let d_in = tape.gather(d, batch.trip_in.clone());
    let d_out = tape.gather(d, batch.trip_out.clone());
    let uu = tape.mul(u_out, u_in);
    let dot = tape.sum_cols(uu);
    let dd = tape.mul(d_out, d_in);
    let ratio = tape.div(dot, dd);
    let cos_alpha = tape.neg(ratio);

    let sbf = sbf_on_tape(tape, d_in, cos_alpha, &tables);

    // embedding block
    let elem = p.id("embed.element");
    let h_atom = tape.gather(elem, batch.z_index.clone());
    let h_src = tape.gather(h_atom, batch.edge_src.clone());
    let h_dst = tape.gather(h_atom, batch.edge_dst.clone());
    let rbf_proj = tape.matmul(rbf, p.id("embed.rbf.w"));
    let cat = tape.concat_cols(&[h_src, h_dst, rbf_proj]);
    let m0 = dense_silu(tape, &p, "embed.dense", cat);

    let mut messages = vec![m0];
    for b in 0..cfg.num_blocks {
        let m = *messages.last().unwrap();
        let next = match cfg.interaction_kind {
            InteractionKind::Hadamard => {
                interaction_hadamard(tape, &p, b, m, rbf, sbf, batch)
            }
            InteractionKind::Bilinear => {
                interaction_bilinear(tape, &p, cfg, b, m, rbf, sbf, batch)
            }
        };
        messages.push(next);
    }

    let mut heads: Option<NodeId> = None;
    for (depth, &m) in messages.iter().enumerate() {
        let contrib = output_block(tape, &p, depth, m, rbf, batch);
        heads = Some(match heads {
            Some(acc) => tape.add(acc, contrib),
            None => contrib,
        });
    }
    let atom_heads = heads.expect("at least the embedding depth exists");

    let atom_mask: Vec<f64> =
        batch.mol_of_atom.iter().map(|&m| batch.mol_mask[m]).collect();
    let mask = tape.constant(Tensor::new(batch.n_atoms, 1, atom_mask));
    let atom_e_raw = tape.slice_cols(atom_heads, 0, 1);
    let atom_energy = tape.mul(atom_e_raw, mask);
    let mol_energies = tape.segment_sum(atom_energy, batch.mol_of_atom.clone(), batch.n_mols);
    let total_energy = tape.sum_all(mol_energies);

    let sigmas = if cfg.mve_head {
        let col = tape.slice_cols(atom_heads, 1, 2);
        let per_mol = tape.segment_sum(col, batch.mol_of_atom.clone(), batch.n_mols);
        let sp = tape.softplus(per_mol);
        Some(tape.add_scalar(sp, 1e-6))
    } else {
        None
    };

    Ok(ForwardParts {
        rbf,
        sbf,
        messages,
        atom_heads,
        atom_energy,
        mol_energies,
        total_energy,
        sigmas,
        param_ids,
    })
}

/// Record the full forward pass of a batch on a fresh tape.
pub fn build_forward(
    cfg: &ModelConfig,
    store: &ParameterStore,
    batch: &GraphBatch,
) -> Result<ModelGraph> {
    let mut tape = Tape::new();
    let x = tape.input(batch.positions.clone());
    let parts = record_forward(&mut tape, cfg, store, batch, x)?;
    Ok(ModelGraph {
        tape,
        positions: x,
        rbf: parts.rbf,
        sbf: parts.sbf,
        messages: parts.messages,
        atom_heads: parts.atom_heads,
        atom_energy: parts.atom_energy,
        mol_energies: parts.mol_energies,
        total_energy: parts.total_energy,
        sigmas: parts.sigmas,
        param_ids: parts.param_ids,
        batch: batch.clone(),
        force_node: None,
    })
}

impl ModelGraph {
    /// Per-molecule energies, eV.
    pub fn energies(&self) -> Vec<f64> {
        self.tape.value(self.mol_energies).data().to_vec()
    }

    /// Per-molecule sigma_E values when the MVE head is enabled.
    pub fn sigma_values(&self) -> Option<Vec<f64>> {
        self.sigmas.map(|s| self.tape.value(s).data().to_vec())
    }

    /// Per-atom energy contributions (masked), eV.
    pub fn atom_contributions(&self) -> Vec<f64> {
        self.tape.value(self.atom_energy).data().to_vec()
    }

    /// Node holding -dE/dx, [n_atoms, 3]; recorded on first use.
    pub fn force_node(&mut self) -> Result<NodeId> {
        if let Some(f) = self.force_node {
            return Ok(f);
        }
        let g = self.tape.grad(self.total_energy, &[self.positions])?[0];
        let f = self.tape.neg(g);
        self.force_node = Some(f);
        Ok(f)
    }

    /// Forces per molecule, eV/Angstrom.
    pub fn forces(&mut self) -> Result<Vec<Vec<[f64; 3]>>> {
        let node = self.force_node()?;
        let t = self.tape.value(node);
        let mut out = Vec::with_capacity(self.batch.n_mols);
        for m in 0..self.batch.n_mols {
            let lo = self.batch.atom_offsets[m];
            let hi = self.batch.atom_offsets[m + 1];
            out.push((lo..hi).map(|a| [t.get(a, 0), t.get(a, 1), t.get(a, 2)]).collect());
        }
        Ok(out)
    }
}

/// Energy-only forward of a single configuration.
pub fn forward_energy(
    cfg: &ModelConfig,
    store: &ParameterStore,
    config: &AtomicConfiguration,
) -> Result<f64> {
    let batch = build_batch(cfg, std::slice::from_ref(config))?;
    let graph = build_forward(cfg, store, &batch)?;
    Ok(graph.energies()[0])
}

/// Predict energy (and optionally forces) for one configuration. The
/// sigma field is filled when the MVE head is enabled.
pub fn predict(
    cfg: &ModelConfig,
    store: &ParameterStore,
    config: &AtomicConfiguration,
    want_forces: bool,
) -> Result<Prediction> {
    let batch = build_batch(cfg, std::slice::from_ref(config))?;
    let mut graph = build_forward(cfg, store, &batch)?;
    let forces = if want_forces { Some(graph.forces()?.remove(0)) } else { None };
    Ok(Prediction {
        energy: graph.energies()[0],
        forces,
        sigma_e: graph.sigma_values().map(|v| v[0]),
        sigma_f: None,
    })
}

/// Energy and forces for one configuration.
pub fn predict_forces(
    cfg: &ModelConfig,
    store: &ParameterStore,
    config: &AtomicConfiguration,
) -> Result<Prediction> {
    predict(cfg, store, config, true)
}

/// Mean and sigma of the energy under the MVE head.
pub fn mve_forward(
    cfg: &ModelConfig,
    store: &ParameterStore,
    config: &AtomicConfiguration,
) -> Result<(f64, f64)> {
    if !cfg.mve_head {
        return Err(Error::Contract("mve_forward requires mve_head = true".into()));
    }
    let batch = build_batch(cfg, std::slice::from_ref(config))?;
    let graph = build_forward(cfg, store, &batch)?;
    Ok((graph.energies()[0], graph.sigma_values().expect("mve head on")[0]))
}
