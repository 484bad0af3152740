//! Toy pair potential and collision-trajectory generator.
//!
//! The potential is a sum over atom pairs of a Morse well plus a short-range
//! `c / r^12` wall:
//!
//! `V(r) = D_e [(1 - exp(-a (r - r_e)))^2 - 1] + c / r^12`
//!
//! Units are eV, Angstrom, amu, and fs throughout. Trajectories collide two
//! small clusters, each relaxed to a local minimum, aimed at one another with
//! a configured relative kinetic energy and impact parameter, and integrated
//! with velocity Verlet. Snapshots drawn uniformly at random over the steps
//! are labelled with the analytic energy and forces.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::elements::{mass_of, z_to_symbol};
use crate::error::{Error, Result};
use crate::geometry::{random_rotation, AtomicConfiguration};

/// 1 amu * Angstrom^2 / fs^2 expressed in eV.
pub const EV_PER_AMU_A2_FS2: f64 = 103.6427;

/// Any coordinate leaving this box aborts the trajectory as a blow-up.
const MAX_COORD: f64 = 100.0;
const MIN_CLUSTER: usize = 2;
const MAX_CLUSTER: usize = 6;
/// Cluster relaxation runs until no force component exceeds this.
const RELAX_TOL: f64 = 1e-7;

/// Morse parameters for one unordered element pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairParams {
    pub z1: u32,
    pub z2: u32,
    /// Well depth, eV.
    pub d_e: f64,
    /// Inverse width, 1/Angstrom.
    pub a: f64,
    /// Equilibrium distance, Angstrom.
    pub r_e: f64,
}

fn default_pairs() -> Vec<PairParams> {
    let p = |z1, z2, d_e, a, r_e| PairParams { z1, z2, d_e, a, r_e };
    vec![
        p(1, 1, 4.75, 1.94, 0.74),
        p(1, 6, 4.30, 1.90, 1.09),
        p(1, 8, 4.80, 2.20, 0.96),
        p(6, 6, 3.60, 2.00, 1.54),
        p(6, 8, 3.70, 2.00, 1.43),
        p(8, 8, 2.30, 2.30, 1.48),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyPotentialConfig {
    /// Morse parameters; every unordered pair over `elements` must appear.
    pub pairs: Vec<PairParams>,
    /// Short-range repulsion coefficient c, eV * Angstrom^12.
    pub repulsion_c: f64,
    /// Integrator timestep, fs.
    pub timestep_fs: f64,
    /// Initial relative kinetic energy of the two clusters, eV.
    pub relative_ke_ev: f64,
    /// Perpendicular offset between the cluster paths, Angstrom.
    pub impact_parameter: f64,
    /// Initial centre-of-mass separation along the approach axis, Angstrom.
    pub initial_separation: f64,
    pub steps_per_trajectory: usize,
    pub snapshots_per_trajectory: usize,
    /// Atomic numbers drawn uniformly when composing clusters.
    pub elements: Vec<u32>,
}

impl Default for ToyPotentialConfig {
    fn default() -> Self {
        ToyPotentialConfig {
            pairs: default_pairs(),
            repulsion_c: 1e-3,
            timestep_fs: 0.005,
            relative_ke_ev: 2.0,
            impact_parameter: 1.0,
            initial_separation: 8.0,
            steps_per_trajectory: 50_000,
            snapshots_per_trajectory: 10,
            elements: vec![1, 6, 8],
        }
    }
}

impl ToyPotentialConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Input(format!("{name} must be positive and finite, got {v}")));
            }
            Ok(())
        };
        let nonneg = |v: f64, name: &str| -> Result<()> {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Input(format!(
                    "{name} must be non-negative and finite, got {v}"
                )));
            }
            Ok(())
        };
        positive(self.timestep_fs, "timestep_fs")?;
        positive(self.initial_separation, "initial_separation")?;
        nonneg(self.relative_ke_ev, "relative_ke_ev")?;
        nonneg(self.impact_parameter, "impact_parameter")?;
        nonneg(self.repulsion_c, "repulsion_c")?;
        if self.steps_per_trajectory == 0 {
            return Err(Error::Input("steps_per_trajectory must be at least 1".into()));
        }
        if self.snapshots_per_trajectory == 0
            || self.snapshots_per_trajectory > self.steps_per_trajectory
        {
            return Err(Error::Input(
                "snapshots_per_trajectory must be in 1..=steps_per_trajectory".into(),
            ));
        }
        if self.elements.is_empty() {
            return Err(Error::Input("elements must not be empty".into()));
        }
        for &z in &self.elements {
            z_to_symbol(z)?;
        }
        for p in &self.pairs {
            z_to_symbol(p.z1)?;
            z_to_symbol(p.z2)?;
            let name = format!(
                "pair {}-{}",
                z_to_symbol(p.z1).unwrap(),
                z_to_symbol(p.z2).unwrap()
            );
            positive(p.d_e, &format!("{name} d_e"))?;
            positive(p.a, &format!("{name} a"))?;
            positive(p.r_e, &format!("{name} r_e"))?;
        }
        for (i, p) in self.pairs.iter().enumerate() {
            for q in &self.pairs[i + 1..] {
                if unordered(p.z1, p.z2) == unordered(q.z1, q.z2) {
                    return Err(Error::Input(format!(
                        "duplicate pair parameters for {}-{}",
                        z_to_symbol(p.z1).unwrap(),
                        z_to_symbol(p.z2).unwrap()
                    )));
                }
            }
        }
        for (i, &za) in self.elements.iter().enumerate() {
            for &zb in &self.elements[i..] {
                self.pair(za, zb)?;
            }
        }
        Ok(())
    }

    fn pair(&self, za: u32, zb: u32) -> Result<&PairParams> {
        let key = unordered(za, zb);
        self.pairs.iter().find(|p| unordered(p.z1, p.z2) == key).ok_or_else(|| {
            Error::Input(format!(
                "no pair parameters for {}-{}",
                z_to_symbol(key.0).unwrap_or("?"),
                z_to_symbol(key.1).unwrap_or("?")
            ))
        })
    }
}

fn unordered(a: u32, b: u32) -> (u32, u32) {
    if a <= b { (a, b) } else { (b, a) }
}

/// Analytic potential energy and forces (`-dV/dx`) for a configuration.
pub fn toy_energy_forces(
    cfg: &ToyPotentialConfig,
    zs: &[u32],
    pos: &[[f64; 3]],
) -> Result<(f64, Vec<[f64; 3]>)> {
    if zs.len() != pos.len() {
        return Err(Error::Input("atomic numbers and positions disagree in length".into()));
    }
    let n = zs.len();
    let mut energy = 0.0;
    let mut forces = vec![[0.0f64; 3]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = [
                pos[i][0] - pos[j][0],
                pos[i][1] - pos[j][1],
                pos[i][2] - pos[j][2],
            ];
            let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            let r = r2.sqrt();
            if r == 0.0 {
                return Err(Error::DegenerateGeometry(format!(
                    "atoms {i} and {j} coincide"
                )));
            }
            let p = cfg.pair(zs[i], zs[j])?;
            let ex = (-p.a * (r - p.r_e)).exp();
            let om = 1.0 - ex;
            energy += p.d_e * (om * om - 1.0) + cfg.repulsion_c / r.powi(12);
            let dv_dr = 2.0 * p.d_e * om * p.a * ex - 12.0 * cfg.repulsion_c / r.powi(13);
            let g = -dv_dr / r;
            for k in 0..3 {
                forces[i][k] += g * d[k];
                forces[j][k] -= g * d[k];
            }
        }
    }
    Ok((energy, forces))
}

/// Labelled configuration under the toy potential.
pub fn labelled_config(
    cfg: &ToyPotentialConfig,
    zs: Vec<u32>,
    pos: Vec<[f64; 3]>,
) -> Result<AtomicConfiguration> {
    let (e, f) = toy_energy_forces(cfg, &zs, &pos)?;
    AtomicConfiguration::with_labels(zs, pos, Some(e), Some(f))
}

/// Replace the labels of existing configurations with this potential's.
pub fn relabel(cfg: &ToyPotentialConfig, configs: &mut [AtomicConfiguration]) -> Result<()> {
    cfg.validate()?;
    for c in configs.iter_mut() {
        let (e, f) = toy_energy_forces(cfg, &c.atomic_numbers, &c.positions)?;
        c.energy = Some(e);
        c.forces = Some(f);
    }
    Ok(())
}

/// Molecular-dynamics state stepped with velocity Verlet.
#[derive(Debug, Clone)]
pub struct MdState {
    pub atomic_numbers: Vec<u32>,
    pub masses: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
    /// Angstrom per fs.
    pub velocities: Vec<[f64; 3]>,
    /// Forces at `positions`, eV per Angstrom.
    pub forces: Vec<[f64; 3]>,
    /// Potential energy at `positions`, eV.
    pub potential: f64,
}

impl MdState {
    pub fn new(
        cfg: &ToyPotentialConfig,
        atomic_numbers: Vec<u32>,
        positions: Vec<[f64; 3]>,
        velocities: Vec<[f64; 3]>,
    ) -> Result<Self> {
        if atomic_numbers.is_empty()
            || atomic_numbers.len() != positions.len()
            || positions.len() != velocities.len()
        {
            return Err(Error::Input(
                "state needs equal, non-zero numbers of atoms, positions, and velocities".into(),
            ));
        }
        let masses = atomic_numbers.iter().map(|&z| mass_of(z)).collect::<Result<Vec<_>>>()?;
        let (potential, forces) = toy_energy_forces(cfg, &atomic_numbers, &positions)?;
        Ok(MdState { atomic_numbers, masses, positions, velocities, forces, potential })
    }

    /// One velocity-Verlet step of `cfg.timestep_fs`.
    pub fn step(&mut self, cfg: &ToyPotentialConfig) -> Result<()> {
        let dt = cfg.timestep_fs;
        for i in 0..self.positions.len() {
            let kick = 0.5 * dt / (self.masses[i] * EV_PER_AMU_A2_FS2);
            for k in 0..3 {
                self.velocities[i][k] += kick * self.forces[i][k];
                self.positions[i][k] += dt * self.velocities[i][k];
            }
        }
        let (v, f) = toy_energy_forces(cfg, &self.atomic_numbers, &self.positions)?;
        self.potential = v;
        self.forces = f;
        for i in 0..self.positions.len() {
            let kick = 0.5 * dt / (self.masses[i] * EV_PER_AMU_A2_FS2);
            for k in 0..3 {
                self.velocities[i][k] += kick * self.forces[i][k];
            }
        }
        Ok(())
    }

    pub fn kinetic_energy(&self) -> f64 {
        let mut ke = 0.0;
        for (m, v) in self.masses.iter().zip(&self.velocities) {
            ke += 0.5 * m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        }
        ke * EV_PER_AMU_A2_FS2
    }

    pub fn total_energy(&self) -> f64 {
        self.potential + self.kinetic_energy()
    }

    /// Total momentum in amu * Angstrom / fs.
    pub fn momentum(&self) -> [f64; 3] {
        let mut p = [0.0; 3];
        for (m, v) in self.masses.iter().zip(&self.velocities) {
            for k in 0..3 {
                p[k] += m * v[k];
            }
        }
        p
    }

    fn labelled(&self) -> Result<AtomicConfiguration> {
        AtomicConfiguration::with_labels(
            self.atomic_numbers.clone(),
            self.positions.clone(),
            Some(self.potential),
            Some(self.forces.clone()),
        )
    }
}

fn random_unit_vector<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v = [
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
        ];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-6 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Adaptive gradient descent until no force component exceeds `RELAX_TOL`.
///
/// A step is kept when it lowers the energy or, once energy differences
/// drop below floating-point resolution, the squared force norm, which has
/// no cancellation floor.
fn relax(
    cfg: &ToyPotentialConfig,
    zs: &[u32],
    mut pos: Vec<[f64; 3]>,
) -> Result<Vec<[f64; 3]>> {
    let norm2 = |f: &[[f64; 3]]| -> f64 {
        f.iter().flatten().map(|&v| v * v).sum()
    };
    let (mut energy, mut forces) = toy_energy_forces(cfg, zs, &pos)?;
    let mut fnorm = norm2(&forces);
    let mut eta = 1e-3;
    for _ in 0..500_000 {
        let fmax = forces.iter().flatten().fold(0.0f64, |m, &f| m.max(f.abs()));
        if fmax < RELAX_TOL {
            return Ok(pos);
        }
        let trial: Vec<[f64; 3]> = pos
            .iter()
            .zip(&forces)
            .map(|(p, f)| [p[0] + eta * f[0], p[1] + eta * f[1], p[2] + eta * f[2]])
            .collect();
        let (e2, f2) = toy_energy_forces(cfg, zs, &trial)?;
        let n2 = norm2(&f2);
        if e2 < energy || n2 < fnorm {
            pos = trial;
            energy = e2;
            forces = f2;
            fnorm = n2;
            eta = (eta * 1.1).min(0.05);
        } else {
            eta *= 0.5;
            if eta < 1e-20 {
                break;
            }
        }
    }
    Err(Error::Numeric("cluster relaxation failed to converge".into()))
}

/// Random cluster relaxed to a local minimum, centre of mass at the origin.
fn random_cluster<R: Rng>(
    cfg: &ToyPotentialConfig,
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<[f64; 3]>)> {
    // An unlucky draw can relax toward a dissociating arrangement that never
    // reaches the force tolerance; redraw a few times before giving up.
    let mut last_err = None;
    for _ in 0..5 {
        match random_cluster_once(cfg, rng) {
            Ok(out) => return Ok(out),
            Err(e @ Error::Numeric(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap())
}

fn random_cluster_once<R: Rng>(
    cfg: &ToyPotentialConfig,
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<[f64; 3]>)> {
    let n = rng.gen_range(MIN_CLUSTER..=MAX_CLUSTER);
    let zs: Vec<u32> = (0..n).map(|_| *cfg.elements.choose(rng).unwrap()).collect();
    let mut pos: Vec<[f64; 3]> = vec![[0.0; 3]];
    while pos.len() < n {
        let mut placed = false;
        for _ in 0..1000 {
            let anchor = pos[rng.gen_range(0..pos.len())];
            let dir = random_unit_vector(rng);
            let d = rng.gen_range(1.0..1.8);
            let cand = [
                anchor[0] + d * dir[0],
                anchor[1] + d * dir[1],
                anchor[2] + d * dir[2],
            ];
            let clear = pos.iter().all(|p| {
                let dx = p[0] - cand[0];
                let dy = p[1] - cand[1];
                let dz = p[2] - cand[2];
                (dx * dx + dy * dy + dz * dz).sqrt() >= 0.8
            });
            if clear {
                pos.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Numeric("failed to place a cluster atom".into()));
        }
    }
    let mut pos = relax(cfg, &zs, pos)?;
    let masses: Vec<f64> = zs.iter().map(|&z| mass_of(z)).collect::<Result<Vec<_>>>()?;
    let mtot: f64 = masses.iter().sum();
    let mut com = [0.0; 3];
    for (m, p) in masses.iter().zip(&pos) {
        for k in 0..3 {
            com[k] += m * p[k] / mtot;
        }
    }
    for p in &mut pos {
        for k in 0..3 {
            p[k] -= com[k];
        }
    }
    Ok((zs, pos))
}

fn rotate_all(rot: &[[f64; 3]; 3], pos: &mut [[f64; 3]]) {
    for p in pos.iter_mut() {
        let q = [
            rot[0][0] * p[0] + rot[0][1] * p[1] + rot[0][2] * p[2],
            rot[1][0] * p[0] + rot[1][1] * p[1] + rot[1][2] * p[2],
            rot[2][0] * p[0] + rot[2][1] * p[1] + rot[2][2] * p[2],
        ];
        *p = q;
    }
}

/// Two relaxed clusters aimed at each other with the configured kinetic
/// energy and impact parameter; total momentum is zero.
pub fn build_collision_system<R: Rng>(
    cfg: &ToyPotentialConfig,
    rng: &mut R,
) -> Result<MdState> {
    let (za, mut pa) = random_cluster(cfg, rng)?;
    let (zb, mut pb) = random_cluster(cfg, rng)?;
    let rot_a = random_rotation(rng);
    let rot_b = random_rotation(rng);
    rotate_all(&rot_a, &mut pa);
    rotate_all(&rot_b, &mut pb);
    let mass_sum = |zs: &[u32]| -> Result<f64> {
        zs.iter().map(|&z| mass_of(z)).sum()
    };
    let ma = mass_sum(&za)?;
    let mb = mass_sum(&zb)?;
    let mu = ma * mb / (ma + mb);
    let v_rel = (2.0 * cfg.relative_ke_ev / (mu * EV_PER_AMU_A2_FS2)).sqrt();
    let va = v_rel * mb / (ma + mb);
    let vb = -v_rel * ma / (ma + mb);
    let na = za.len();
    let nb = zb.len();
    let mut zs = za;
    zs.extend(zb);
    let mut pos = pa;
    pos.extend(pb.iter().map(|p| {
        [p[0] + cfg.initial_separation, p[1] + cfg.impact_parameter, p[2]]
    }));
    let mut vel = vec![[va, 0.0, 0.0]; na];
    vel.extend(std::iter::repeat([vb, 0.0, 0.0]).take(nb));
    MdState::new(cfg, zs, pos, vel)
}

/// Integrate one trajectory; `None` means a coordinate left the
/// simulation box and the trajectory must be discarded.
fn run_trajectory<R: Rng>(
    cfg: &ToyPotentialConfig,
    rng: &mut R,
) -> Result<Option<Vec<AtomicConfiguration>>> {
    let mut state = build_collision_system(cfg, rng)?;
    let mut snap_steps = rand::seq::index::sample(
        rng,
        cfg.steps_per_trajectory,
        cfg.snapshots_per_trajectory,
    )
    .into_vec();
    snap_steps.sort_unstable();
    let mut out = Vec::with_capacity(snap_steps.len());
    let mut next = 0;
    for step in 0..cfg.steps_per_trajectory {
        if next < snap_steps.len() && snap_steps[next] == step {
            out.push(state.labelled()?);
            next += 1;
        }
        state.step(cfg)?;
        let escaped = state
            .positions
            .iter()
            .flatten()
            .any(|&c| !(c.abs() <= MAX_COORD));
        if escaped {
            return Ok(None);
        }
    }
    Ok(Some(out))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenerationLog {
    /// Trajectories kept.
    pub trajectories: usize,
    /// Trajectories discarded after leaving the simulation box.
    pub discarded: usize,
    pub snapshots: usize,
}

/// Generate trajectories grouped by trajectory, resuming the attempt
/// counter at `attempt_start` so several calls can share one seed without
/// repeating streams.
pub(crate) fn generate_grouped(
    cfg: &ToyPotentialConfig,
    seed: u64,
    n_trajectories: usize,
    attempt_start: u64,
) -> Result<(Vec<Vec<AtomicConfiguration>>, GenerationLog, u64)> {
    cfg.validate()?;
    let mut groups = Vec::with_capacity(n_trajectories);
    let mut log = GenerationLog::default();
    let mut attempt = attempt_start;
    let max_attempts = attempt_start
        .saturating_add((n_trajectories as u64).saturating_mul(50).saturating_add(100));
    while log.trajectories < n_trajectories {
        if attempt >= max_attempts {
            return Err(Error::Numeric(format!(
                "gave up after {} attempts: {} kept, {} discarded",
                attempt - attempt_start,
                log.trajectories,
                log.discarded
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        attempt += 1;
        match run_trajectory(cfg, &mut rng)? {
            Some(snaps) => {
                log.snapshots += snaps.len();
                groups.push(snaps);
                log.trajectories += 1;
            }
            None => log.discarded += 1,
        }
    }
    Ok((groups, log, attempt))
}

/// Generate labelled snapshots from `n_trajectories` collision trajectories.
///
/// Each integration attempt draws from its own stream of the master seed, in
/// attempt order, so results are reproducible and discarded attempts do not
/// perturb later ones.
pub fn generate_collisions(
    cfg: &ToyPotentialConfig,
    seed: u64,
    n_trajectories: usize,
) -> Result<(Vec<AtomicConfiguration>, GenerationLog)> {
    let (groups, log, _) = generate_grouped(cfg, seed, n_trajectories, 0)?;
    Ok((groups.into_iter().flatten().collect(), log))
}
