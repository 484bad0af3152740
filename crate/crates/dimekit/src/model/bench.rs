//! Micro-benchmark of the per-triplet interaction stage.
//!
//! The two interaction variants differ only in how a triplet combines the
//! gathered incoming-edge embedding with the angular features: an
//! elementwise product in the Hadamard variant versus a bilinear tensor
//! contraction in the original variant. This module times exactly that
//! stage — from gathered inputs to the segment-summed per-edge aggregate —
//! on synthetic data, outside the autodiff tape, so edge counts large
//! enough for stable timings fit in memory.

use std::time::Instant;

use super::{InteractionKind, ModelConfig};
use crate::autodiff::Tensor;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Timing and cost summary for one interaction variant.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub kind: InteractionKind,
    pub n_edges: usize,
    pub n_triplets: usize,
    pub repeats: usize,
    /// Best wall time of a single pass, seconds.
    pub seconds_per_pass: f64,
    pub ns_per_triplet: f64,
    /// Analytic combination cost, FLOPs per triplet.
    pub flops_per_triplet: u64,
    /// Output checksum, kept so the computation cannot be optimized away.
    pub checksum: f64,
}

/// FLOPs a single triplet spends in the combination op itself (gating MLPs
/// and projections excluded on both sides, since both variants have them):
/// elementwise product plus accumulation for Hadamard, the full bilinear
/// contraction plus accumulation for the bilinear variant.
pub fn triplet_combination_flops(kind: InteractionKind, cfg: &ModelConfig) -> u64 {
    match kind {
        InteractionKind::Hadamard => 2 * cfg.triplet_dim as u64,
        InteractionKind::Bilinear => {
            let h = cfg.hidden_dim as u64;
            let nb = cfg.num_bilinear as u64;
            nb * (2 * h * h + 2 * h)
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn gather_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(idx.len(), t.cols());
    for (r, &src) in idx.iter().enumerate() {
        out.data_mut()[r * t.cols()..(r + 1) * t.cols()]
            .copy_from_slice(&t.data()[src * t.cols()..(src + 1) * t.cols()]);
    }
    out
}

fn segment_sum_rows(t: &Tensor, idx: &[usize], n: usize) -> Tensor {
    let mut out = Tensor::zeros(n, t.cols());
    let cols = t.cols();
    for (r, &dst) in idx.iter().enumerate() {
        let src = &t.data()[r * cols..(r + 1) * cols];
        let acc = &mut out.data_mut()[dst * cols..(dst + 1) * cols];
        for (a, &v) in acc.iter_mut().zip(src) {
            *a += v;
        }
    }
    out
}

fn add_row_inplace(t: &mut Tensor, row: &Tensor) {
    let cols = t.cols();
    for r in 0..t.rows() {
        for (v, &b) in t.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(row.data()) {
            *v += b;
        }
    }
}

fn silu_inplace(t: &mut Tensor) {
    for v in t.data_mut() {
        *v /= 1.0 + (-*v).exp();
    }
}

fn mul_inplace(t: &mut Tensor, other: &Tensor) {
    for (a, &b) in t.data_mut().iter_mut().zip(other.data()) {
        *a *= b;
    }
}

/// Time the per-triplet stage of one interaction variant on synthetic
/// inputs with `n_edges` edges and `n_triplets` triplets. Runs the stage
/// `repeats` times and reports the fastest pass.
pub fn time_combination(
    kind: InteractionKind,
    cfg: &ModelConfig,
    n_edges: usize,
    n_triplets: usize,
    repeats: usize,
    seed: u64,
) -> BenchReport {
    assert!(n_edges > 0 && n_triplets > 0 && repeats > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sdim = cfg.basis.sbf_dim();
    let h = cfg.hidden_dim;
    let td = cfg.triplet_dim;
    let nb = cfg.num_bilinear;

    let sbf = random_tensor(&mut rng, n_triplets, sdim, 0.5);
    let trip_in: Vec<usize> = (0..n_triplets).map(|_| rng.gen_range(0..n_edges)).collect();
    let trip_out: Vec<usize> = (0..n_triplets).map(|_| rng.gen_range(0..n_edges)).collect();

    let mut best = f64::INFINITY;
    let mut checksum = 0.0;
    match kind {
        InteractionKind::Hadamard => {
            // inputs to the stage: downprojected gated messages per edge
            let q = random_tensor(&mut rng, n_edges, td, 0.5);
            let w1 = random_tensor(&mut rng, sdim, td, 0.2);
            let b1 = random_tensor(&mut rng, 1, td, 0.2);
            let w2 = random_tensor(&mut rng, td, td, 0.2);
            let b2 = random_tensor(&mut rng, 1, td, 0.2);
            for _ in 0..repeats {
                let start = Instant::now();
                let mut sgate = sbf.matmul(&w1);
                add_row_inplace(&mut sgate, &b1);
                silu_inplace(&mut sgate);
                let mut sgate = sgate.matmul(&w2);
                add_row_inplace(&mut sgate, &b2);
                let qk = gather_rows(&q, &trip_in);
                mul_inplace(&mut sgate, &qk);
                drop(qk);
                let s = segment_sum_rows(&sgate, &trip_out, n_edges);
                drop(sgate);
                let sum: f64 = s.data().iter().sum();
                let elapsed = start.elapsed().as_secs_f64();
                checksum = std::hint::black_box(sum);
                best = best.min(elapsed);
            }
        }
        InteractionKind::Bilinear => {
            // inputs to the stage: full-width gated messages per edge
            let g = random_tensor(&mut rng, n_edges, h, 0.5);
            let wp = random_tensor(&mut rng, sdim, nb, 0.2);
            let bp = random_tensor(&mut rng, 1, nb, 0.2);
            let w = random_tensor(&mut rng, h, nb * h, 0.1);
            for _ in 0..repeats {
                let start = Instant::now();
                let mut proj = sbf.matmul(&wp);
                add_row_inplace(&mut proj, &bp);
                let gk = gather_rows(&g, &trip_in);
                let mut acc = Tensor::zeros(n_triplets, h);
                for s in 0..nb {
                    let mut ws = Tensor::zeros(h, h);
                    for r in 0..h {
                        ws.data_mut()[r * h..(r + 1) * h]
                            .copy_from_slice(&w.data()[r * nb * h + s * h..r * nb * h + (s + 1) * h]);
                    }
                    let mapped = gk.matmul(&ws);
                    for t in 0..n_triplets {
                        let ps = proj.get(t, s);
                        let row = &mapped.data()[t * h..(t + 1) * h];
                        let out = &mut acc.data_mut()[t * h..(t + 1) * h];
                        for (a, &m) in out.iter_mut().zip(row) {
                            *a += ps * m;
                        }
                    }
                }
                drop(gk);
                let s = segment_sum_rows(&acc, &trip_out, n_edges);
                drop(acc);
                let sum: f64 = s.data().iter().sum();
                let elapsed = start.elapsed().as_secs_f64();
                checksum = std::hint::black_box(sum);
                best = best.min(elapsed);
            }
        }
    }

    BenchReport {
        kind,
        n_edges,
        n_triplets,
        repeats,
        seconds_per_pass: best,
        ns_per_triplet: best * 1e9 / n_triplets as f64,
        flops_per_triplet: triplet_combination_flops(kind, cfg),
        checksum,
    }
}
