//! Efficiency benchmark: coarse-stage attention FLOPs and wall time for
//! topic-restricted versus full-pass augmentation.

use std::time::Instant;

use crate::coarse::augmentation_flops;
use crate::config::KernelKind;

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub tokens: usize,
    pub topics: usize,
    pub covisible: usize,
    pub kernel: KernelKind,
    pub flops_restricted: u64,
    pub flops_full: u64,
    /// restricted / full.
    pub ratio: f64,
    pub wall_restricted_ms: f64,
    pub wall_full_ms: f64,
}

/// One sweep point: uniform groups of `tokens / topics` features, of which
/// `covisible` groups are augmented, against one full-token pass.
pub fn bench_point(tokens: usize, topics: usize, covisible: usize, kernel: KernelKind) -> BenchRow {
    assert!(covisible <= topics && tokens % topics == 0);
    let group = tokens / topics;
    let restricted: Vec<(usize, usize)> = (0..covisible).map(|_| (group, group)).collect();

    let t0 = Instant::now();
    let flops_restricted = augmentation_flops(64, 4, kernel, tokens, &restricted, 97);
    let wall_restricted_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let flops_full = augmentation_flops(64, 4, kernel, tokens, &[(tokens, tokens)], 97);
    let wall_full_ms = t1.elapsed().as_secs_f64() * 1e3;

    BenchRow {
        tokens,
        topics,
        covisible,
        kernel,
        flops_restricted,
        flops_full,
        ratio: flops_restricted as f64 / flops_full as f64,
        wall_restricted_ms,
        wall_full_ms,
    }
}

/// Default sweep: image sizes 128..512 (tokens = (size/8)^2) by
/// (topics, covisible) pairs. The quadratic kernel is swept only up to 1024
/// tokens; beyond that its full-pass score matrices no longer fit a small
/// machine, which is the point of the linear kernel.
pub fn default_sweep() -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for size in [128usize, 256, 512] {
        let tokens = (size / 8) * (size / 8);
        for (topics, covisible) in [(8usize, 2usize), (8, 3), (16, 4)] {
            rows.push(bench_point(tokens, topics, covisible, KernelKind::Linear));
            if tokens <= 1024 {
                rows.push(bench_point(tokens, topics, covisible, KernelKind::Dot));
            }
        }
    }
    rows
}

pub fn table_text(rows: &[BenchRow]) -> String {
    let mut out = String::from(
        "tokens\ttopics\tcovisible\tkernel\tflops_restricted\tflops_full\tratio\twall_restricted_ms\twall_full_ms\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.3}\t{:.3}\n",
            r.tokens,
            r.topics,
            r.covisible,
            r.kernel,
            r.flops_restricted,
            r.flops_full,
            r.ratio,
            r.wall_restricted_ms,
            r.wall_full_ms
        ));
    }
    out
}
