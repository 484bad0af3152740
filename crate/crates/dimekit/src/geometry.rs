//! Interaction graph construction: directed edges within a cutoff radius,
//! triplets of adjacent edges, interatomic distances and bond angles.
//!
//! The model operates on messages attached to directed atom pairs j->i and
//! on triplets (k->j, j->i) of adjacent pairs. This module builds those
//! index structures from raw Cartesian coordinates. Everything here is pure
//! and allocation-per-call; no state is shared between configurations.

use crate::error::{Error, Result};

/// A molecular structure: atomic numbers, Cartesian positions in Angstrom,
/// and optional energy (eV) / force (eV/Angstrom) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicConfiguration {
    pub atomic_numbers: Vec<u32>,
    pub positions: Vec<[f64; 3]>,
    pub energy: Option<f64>,
    pub forces: Option<Vec<[f64; 3]>>,
}

impl AtomicConfiguration {
    pub fn new(atomic_numbers: Vec<u32>, positions: Vec<[f64; 3]>) -> Result<Self> {
        let cfg = Self { atomic_numbers, positions, energy: None, forces: None };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_labels(
        atomic_numbers: Vec<u32>,
        positions: Vec<[f64; 3]>,
        energy: Option<f64>,
        forces: Option<Vec<[f64; 3]>>,
    ) -> Result<Self> {
        let cfg = Self { atomic_numbers, positions, energy, forces };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn len(&self) -> usize {
        self.atomic_numbers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atomic_numbers.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.atomic_numbers.is_empty() {
            return Err(Error::Input("configuration must contain at least one atom".into()));
        }
        if self.positions.len() != self.atomic_numbers.len() {
            return Err(Error::Input(format!(
                "{} positions for {} atomic numbers",
                self.positions.len(),
                self.atomic_numbers.len()
            )));
        }
        if let Some(z) = self.atomic_numbers.iter().find(|&&z| z == 0) {
            return Err(Error::Input(format!("atomic number {z} is not positive")));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::Input(format!("non-finite coordinate at atom {i}: {p:?}")));
            }
        }
        if let Some(f) = &self.forces {
            if f.len() != self.atomic_numbers.len() {
                return Err(Error::Input(format!(
                    "{} force rows for {} atoms",
                    f.len(),
                    self.atomic_numbers.len()
                )));
            }
        }
        if let Some(e) = self.energy {
            if !e.is_finite() {
                return Err(Error::Input(format!("non-finite energy label {e}")));
            }
        }
        Ok(())
    }
}

/// Uniformly distributed random rotation matrix (rows are the images of
/// the standard basis), built from a random quaternion.
pub fn random_rotation<R: rand::Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let q: [f64; 4] = loop {
        let q = [
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n2: f64 = q.iter().map(|x| x * x).sum();
        if n2 > 1e-6 && n2 <= 1.0 {
            let n = n2.sqrt();
            break [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        }
    };
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Apply a random rotation and a random translation of up to 10 Angstrom
/// per axis. Labels are dropped; the result is for invariance checks.
pub fn apply_rigid<R: rand::Rng>(
    config: &AtomicConfiguration,
    rng: &mut R,
) -> AtomicConfiguration {
    let r = random_rotation(rng);
    let t = [
        rng.gen_range(-10.0..10.0f64),
        rng.gen_range(-10.0..10.0),
        rng.gen_range(-10.0..10.0),
    ];
    let positions = config
        .positions
        .iter()
        .map(|p| {
            [
                r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
                r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
                r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
            ]
        })
        .collect();
    AtomicConfiguration {
        atomic_numbers: config.atomic_numbers.clone(),
        positions,
        energy: None,
        forces: None,
    }
}

/// Directed edges (source j, target i) with `0 < d <= cutoff`.
///
/// Edges are enumerated source-major, target-minor, which fixes a
/// deterministic edge index used throughout the model. The set is symmetric
/// as a set of ordered pairs: (j,i) is present iff (i,j) is.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    /// (source, target) atom indices per edge; the message flows source -> target.
    pub edges: Vec<(usize, usize)>,
    /// Interatomic distance per edge, Angstrom.
    pub distances: Vec<f64>,
    /// Unit vector from source toward target per edge.
    pub unit_vectors: Vec<[f64; 3]>,
    /// Cutoff used to build this set.
    pub cutoff: f64,
    n_atoms: usize,
}

impl EdgeSet {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }
}

/// Triplets of adjacent directed edges: one entry per pair
/// (incoming edge k->j, outgoing edge j->i) with k != i.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletSet {
    /// Edge index of the incoming edge k->j.
    pub edge_in: Vec<usize>,
    /// Edge index of the outgoing edge j->i.
    pub edge_out: Vec<usize>,
    /// Angle at the shared atom j between the directions j->i and j->k,
    /// radians in [0, pi]. Empty until [`compute_angles`] fills it.
    pub angles: Vec<f64>,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.edge_in.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_in.is_empty()
    }
}

/// Size counters for the message/triplet combinatorics of one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphStats {
    pub n_atoms: usize,
    pub n_edges: usize,
    pub n_triplets: usize,
}

impl GraphStats {
    /// Directed messages per atom.
    pub fn edges_per_atom(&self) -> f64 {
        self.n_edges as f64 / self.n_atoms as f64
    }

    /// Triplet representations per atom.
    pub fn triplets_per_atom(&self) -> f64 {
        self.n_triplets as f64 / self.n_atoms as f64
    }
}

/// Builds all directed edges with interatomic distance within `cutoff`.
///
/// Brute-force over all ordered pairs, O(N^2). Two atoms at identical
/// positions are rejected: a zero distance is undefined for the basis
/// functions which divide by it.
pub fn build_edges(config: &AtomicConfiguration, cutoff: f64) -> Result<EdgeSet> {
    if !(cutoff > 0.0) {
        return Err(Error::Input(format!("cutoff must be positive, got {cutoff}")));
    }
    config.validate()?;
    let n = config.len();
    let mut edges = Vec::new();
    let mut distances = Vec::new();
    let mut unit_vectors = Vec::new();
    for src in 0..n {
        for dst in 0..n {
            if src == dst {
                continue;
            }
            let a = config.positions[src];
            let b = config.positions[dst];
            let diff = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let d = (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]).sqrt();
            if d > cutoff {
                continue;
            }
            if d == 0.0 {
                return Err(Error::DegenerateGeometry(format!(
                    "atoms {src} and {dst} are at identical positions"
                )));
            }
            edges.push((src, dst));
            distances.push(d);
            unit_vectors.push([diff[0] / d, diff[1] / d, diff[2] / d]);
        }
    }
    Ok(EdgeSet { edges, distances, unit_vectors, cutoff, n_atoms: n })
}

/// Enumerates all triplets (incoming edge k->j, outgoing edge j->i) with
/// k != i, ordered by outgoing edge index then incoming edge index.
pub fn build_triplets(edges: &EdgeSet) -> TripletSet {
    // incoming[j] lists edge ids with target j, ascending (edges are already
    // enumerated in index order).
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); edges.n_atoms];
    for (e, &(_, dst)) in edges.edges.iter().enumerate() {
        incoming[dst].push(e);
    }
    let mut edge_in = Vec::new();
    let mut edge_out = Vec::new();
    for (e_out, &(j, i)) in edges.edges.iter().enumerate() {
        for &e_in in &incoming[j] {
            let (k, _) = edges.edges[e_in];
            if k == i {
                continue;
            }
            edge_in.push(e_in);
            edge_out.push(e_out);
        }
    }
    TripletSet { edge_in, edge_out, angles: Vec::new() }
}

/// Fills triplet angles: for each triplet (k->j, j->i), the angle at j
/// between the displacement vectors toward i and toward k.
///
/// The cosine is clamped to [-1, 1] before `acos` so exactly collinear
/// geometries yield 0 or pi instead of NaN.
pub fn compute_angles(
    config: &AtomicConfiguration,
    edges: &EdgeSet,
    triplets: &TripletSet,
) -> Result<TripletSet> {
    let mut out = triplets.clone();
    out.angles = Vec::with_capacity(triplets.len());
    for t in 0..triplets.len() {
        let (j, i) = edges.edges[triplets.edge_out[t]];
        let (k, _) = edges.edges[triplets.edge_in[t]];
        let pj = config.positions[j];
        let v1 = sub3(config.positions[i], pj);
        let v2 = sub3(config.positions[k], pj);
        let n1 = norm3(v1);
        let n2 = norm3(v2);
        if n1 == 0.0 || n2 == 0.0 {
            return Err(Error::DegenerateGeometry(format!(
                "zero-length bond vector in triplet ({k} -> {j} -> {i})"
            )));
        }
        let cos = (dot3(v1, v2) / (n1 * n2)).clamp(-1.0, 1.0);
        out.angles.push(cos.acos());
    }
    Ok(out)
}

/// Convenience: edges + triplets + angles in one call.
pub fn build_graph(config: &AtomicConfiguration, cutoff: f64) -> Result<(EdgeSet, TripletSet)> {
    let edges = build_edges(config, cutoff)?;
    let triplets = build_triplets(&edges);
    let triplets = compute_angles(config, &edges, &triplets)?;
    Ok((edges, triplets))
}

/// Message/triplet counts for one configuration at the given cutoff.
pub fn graph_stats(config: &AtomicConfiguration, cutoff: f64) -> Result<GraphStats> {
    let edges = build_edges(config, cutoff)?;
    let triplets = build_triplets(&edges);
    Ok(GraphStats { n_atoms: config.len(), n_edges: edges.len(), n_triplets: triplets.len() })
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn config(z: Vec<u32>, pos: Vec<[f64; 3]>) -> AtomicConfiguration {
        AtomicConfiguration::new(z, pos).unwrap()
    }

    fn random_config(rng: &mut ChaCha8Rng, n: usize, box_len: f64) -> AtomicConfiguration {
        let pos = (0..n)
            .map(|_| [rng.gen::<f64>() * box_len, rng.gen::<f64>() * box_len, rng.gen::<f64>() * box_len])
            .collect();
        config(vec![1; n], pos)
    }

    #[test]
    fn two_atoms_within_cutoff() {
        let c = config(vec![1, 1], vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let e = build_edges(&c, 5.0).unwrap();
        assert_eq!(e.edges, vec![(0, 1), (1, 0)]);
        assert_eq!(e.distances, vec![1.0, 1.0]);
        assert_eq!(e.unit_vectors[0], [1.0, 0.0, 0.0]);
        assert_eq!(e.unit_vectors[1], [-1.0, 0.0, 0.0]);
    }

    #[test]
    fn two_atoms_beyond_cutoff() {
        let c = config(vec![1, 1], vec![[0.0, 0.0, 0.0], [6.0, 0.0, 0.0]]);
        let e = build_edges(&c, 5.0).unwrap();
        assert!(e.is_empty());
    }

    #[test]
    fn coincident_atoms_rejected() {
        let c = config(vec![1, 1], vec![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]);
        let err = build_edges(&c, 5.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry(_)));
    }

    #[test]
    fn non_finite_coordinate_rejected() {
        let c = AtomicConfiguration {
            atomic_numbers: vec![1],
            positions: vec![[f64::NAN, 0.0, 0.0]],
            energy: None,
            forces: None,
        };
        assert!(matches!(build_edges(&c, 5.0), Err(Error::Input(_))));
    }

    #[test]
    fn edges_match_all_pairs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = random_config(&mut rng, 20, 8.0);
        let cutoff = 5.0;
        let e = build_edges(&c, cutoff).unwrap();
        // independent O(N^2) all-pairs filter
        let mut expected = HashSet::new();
        for j in 0..c.len() {
            for i in 0..c.len() {
                if i == j {
                    continue;
                }
                let d = norm3(sub3(c.positions[i], c.positions[j]));
                if d <= cutoff {
                    expected.insert((j, i));
                }
            }
        }
        let got: HashSet<_> = e.edges.iter().copied().collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn edge_set_symmetric_as_ordered_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = random_config(&mut rng, 15, 7.0);
        let e = build_edges(&c, 4.0).unwrap();
        let set: HashSet<_> = e.edges.iter().copied().collect();
        for &(j, i) in &e.edges {
            assert!(set.contains(&(i, j)));
        }
    }

    #[test]
    fn two_atom_molecule_has_no_triplets() {
        let c = config(vec![1, 1], vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let e = build_edges(&c, 5.0).unwrap();
        let t = build_triplets(&e);
        assert!(t.is_empty());
    }

    #[test]
    fn linear_chain_triplets() {
        // A-B-C with only A-B and B-C within cutoff
        let c = config(vec![1, 1, 1], vec![[0.0; 3], [1.4, 0.0, 0.0], [2.8, 0.0, 0.0]]);
        let e = build_edges(&c, 1.5).unwrap();
        assert_eq!(e.len(), 4);
        let t = build_triplets(&e);
        assert_eq!(t.len(), 2);
        // expected: (A->B feeding B->C) and (C->B feeding B->A)
        let as_atoms: Vec<((usize, usize), (usize, usize))> = (0..t.len())
            .map(|x| (e.edges[t.edge_in[x]], e.edges[t.edge_out[x]]))
            .collect();
        assert!(as_atoms.contains(&((0, 1), (1, 2))));
        assert!(as_atoms.contains(&((2, 1), (1, 0))));
    }

    #[test]
    fn four_atom_clique_triplet_count() {
        let c = config(
            vec![1, 1, 1, 1],
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        );
        let e = build_edges(&c, 5.0).unwrap();
        assert_eq!(e.len(), 12);
        let t = build_triplets(&e);
        assert_eq!(t.len(), 24);
    }

    // brute-force triple loop over atoms (k, j, i)
    fn triplet_oracle(c: &AtomicConfiguration, cutoff: f64) -> HashSet<(usize, usize, usize)> {
        let n = c.len();
        let within = |a: usize, b: usize| {
            let d = norm3(sub3(c.positions[a], c.positions[b]));
            d <= cutoff && d > 0.0
        };
        let mut out = HashSet::new();
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    if k != j && j != i && k != i && within(k, j) && within(j, i) {
                        out.insert((k, j, i));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn triplets_match_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.gen_range(2..12);
            let c = random_config(&mut rng, n, 6.0);
            let cutoff = 4.0;
            let e = build_edges(&c, cutoff).unwrap();
            let t = build_triplets(&e);
            let got: HashSet<_> = (0..t.len())
                .map(|x| {
                    let (k, j) = e.edges[t.edge_in[x]];
                    let (j2, i) = e.edges[t.edge_out[x]];
                    assert_eq!(j, j2);
                    (k, j, i)
                })
                .collect();
            assert_eq!(got.len(), t.len(), "duplicate triplets");
            assert_eq!(got, triplet_oracle(&c, cutoff));
        }
    }

    #[test]
    fn triplet_ordering_is_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_config(&mut rng, 10, 5.0);
        let e = build_edges(&c, 4.0).unwrap();
        let t = build_triplets(&e);
        let pairs: Vec<_> = (0..t.len()).map(|x| (t.edge_out[x], t.edge_in[x])).collect();
        let mut sorted = pairs.clone();
        sorted.sort();
        assert_eq!(pairs, sorted);
    }

    #[test]
    fn triplet_count_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let n = rng.gen_range(2..15);
            let c = random_config(&mut rng, n, 6.0);
            let e = build_edges(&c, 4.5).unwrap();
            let t = build_triplets(&e);
            let mut degree = vec![0usize; n];
            for &(_, dst) in &e.edges {
                degree[dst] += 1;
            }
            let expected: usize = e.edges.iter().map(|&(j, _)| degree[j] - 1).sum();
            assert_eq!(t.len(), expected);
        }
    }

    #[test]
    fn equilateral_triangle_angles() {
        let h = 3f64.sqrt() / 2.0;
        let c = config(vec![1, 1, 1], vec![[0.0; 3], [1.0, 0.0, 0.0], [0.5, h, 0.0]]);
        let (_, t) = build_graph(&c, 5.0).unwrap();
        assert_eq!(t.len(), 6);
        for &a in &t.angles {
            assert!((a - std::f64::consts::FRAC_PI_3).abs() < 1e-12, "angle {a}");
        }
    }

    #[test]
    fn collinear_angle_is_pi() {
        let c = config(vec![1, 1, 1], vec![[-1.0, 0.0, 0.0], [0.0; 3], [1.0, 0.0, 0.0]]);
        let (e, t) = build_graph(&c, 5.0).unwrap();
        // find triplet k=0 -> j=1 -> i=2: k and i on opposite sides of j
        let idx = (0..t.len())
            .find(|&x| e.edges[t.edge_in[x]] == (0, 1) && e.edges[t.edge_out[x]] == (1, 2))
            .unwrap();
        assert_eq!(t.angles[idx], std::f64::consts::PI);
    }

    #[test]
    fn angles_match_arccos_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let c = random_config(&mut rng, 10, 5.0);
        let (e, t) = build_graph(&c, 5.0).unwrap();
        for x in 0..t.len() {
            let (j, i) = e.edges[t.edge_out[x]];
            let (k, _) = e.edges[t.edge_in[x]];
            let v1 = sub3(c.positions[i], c.positions[j]);
            let v2 = sub3(c.positions[k], c.positions[j]);
            let expect = (dot3(v1, v2) / (norm3(v1) * norm3(v2))).clamp(-1.0, 1.0).acos();
            assert!((t.angles[x] - expect).abs() < 1e-12);
        }
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
        // Gram-Schmidt on a random matrix
        let mut a = [[0.0; 3]; 3];
        for row in a.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen::<f64>() - 0.5;
            }
        }
        let n0 = norm3(a[0]);
        let u0 = [a[0][0] / n0, a[0][1] / n0, a[0][2] / n0];
        let p = dot3(a[1], u0);
        let mut u1 = [a[1][0] - p * u0[0], a[1][1] - p * u0[1], a[1][2] - p * u0[2]];
        let n1 = norm3(u1);
        u1 = [u1[0] / n1, u1[1] / n1, u1[2] / n1];
        let u2 = [
            u0[1] * u1[2] - u0[2] * u1[1],
            u0[2] * u1[0] - u0[0] * u1[2],
            u0[0] * u1[1] - u0[1] * u1[0],
        ];
        [u0, u1, u2]
    }

    pub(crate) fn apply_rigid(
        c: &AtomicConfiguration,
        rot: &[[f64; 3]; 3],
        shift: [f64; 3],
    ) -> AtomicConfiguration {
        let pos = c
            .positions
            .iter()
            .map(|p| {
                [
                    rot[0][0] * p[0] + rot[0][1] * p[1] + rot[0][2] * p[2] + shift[0],
                    rot[1][0] * p[0] + rot[1][1] * p[1] + rot[1][2] * p[2] + shift[1],
                    rot[2][0] * p[0] + rot[2][1] * p[1] + rot[2][2] * p[2] + shift[2],
                ]
            })
            .collect();
        AtomicConfiguration {
            atomic_numbers: c.atomic_numbers.clone(),
            positions: pos,
            energy: c.energy,
            forces: None,
        }
    }

    #[test]
    fn graph_invariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let c = random_config(&mut rng, 12, 6.0);
            let rot = random_rotation(&mut rng);
            let shift = [rng.gen::<f64>() * 10.0, -3.0, rng.gen::<f64>()];
            let moved = apply_rigid(&c, &rot, shift);
            let (e1, t1) = build_graph(&c, 4.0).unwrap();
            let (e2, t2) = build_graph(&moved, 4.0).unwrap();
            assert_eq!(e1.edges, e2.edges);
            assert_eq!(t1.edge_in, t2.edge_in);
            assert_eq!(t1.edge_out, t2.edge_out);
            for (a, b) in t1.angles.iter().zip(&t2.angles) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn permutation_maps_edges_edgewise() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let n = rng.gen_range(3..12);
            let c = random_config(&mut rng, n, 6.0);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut pos = vec![[0.0; 3]; n];
            let mut z = vec![0u32; n];
            for (old, &new) in perm.iter().enumerate() {
                pos[new] = c.positions[old];
                z[new] = c.atomic_numbers[old];
            }
            let pc = config(z, pos);
            let e1 = build_edges(&c, 4.0).unwrap();
            let e2 = build_edges(&pc, 4.0).unwrap();
            let mapped: HashSet<_> = e1.edges.iter().map(|&(j, i)| (perm[j], perm[i])).collect();
            let got: HashSet<_> = e2.edges.iter().copied().collect();
            assert_eq!(mapped, got);
        }
    }

    #[test]
    fn stats_counts_match() {
        let c = config(
            vec![1, 1, 1, 1],
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        );
        let s = graph_stats(&c, 5.0).unwrap();
        assert_eq!(s.n_atoms, 4);
        assert_eq!(s.n_edges, 12);
        assert_eq!(s.n_triplets, 24);
        assert_eq!(s.edges_per_atom(), 3.0);
        assert_eq!(s.triplets_per_atom(), 6.0);
    }
}
