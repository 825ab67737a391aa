use log::warn;

use crate::error::{ensure, Result};
use crate::linalg::{singular_values, Matrix};

/// Singular values below this fraction of a mode's largest count as zero.
pub const RANK_THRESHOLD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct ModeSpectrum {
    pub label: usize,
    pub samples: usize,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceReport {
    /// Largest normalized cross-mode singular value; 0 for orthogonal modes.
    pub max_coherence: f64,
    pub modes: Vec<ModeSpectrum>,
    /// Labels skipped for having fewer than two samples.
    pub excluded: Vec<usize>,
}

impl SubspaceReport {
    /// Rows `mode,samples,rank,coherence,s1..sd`.
    pub fn to_csv(&self) -> String {
        let width = self.modes.iter().map(|m| m.singular_values.len()).max().unwrap_or(0);
        let mut out = String::from("mode,samples,rank,coherence");
        for k in 1..=width {
            out.push_str(&format!(",s{k}"));
        }
        out.push('\n');
        for m in &self.modes {
            out.push_str(&format!("{},{},{},{:.12e}", m.label, m.samples, m.rank, self.max_coherence));
            for k in 0..width {
                match m.singular_values.get(k) {
                    Some(s) => out.push_str(&format!(",{s:.12e}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Per-mode spectra of features `z` (one sample per row) and the largest
/// `σ_max(Z_i Z_jᵀ) / (σ_max(Z_i) σ_max(Z_j))` over mode pairs.
pub fn subspace_diagnostics(z: &Matrix, labels: &[usize]) -> Result<SubspaceReport> {
    ensure!(labels.len() == z.rows(), Contract, "{} labels for {} feature rows", labels.len(), z.rows());
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut blocks = Vec::new();
    let mut excluded = Vec::new();
    for &l in &distinct {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == l).collect();
        if idx.len() < 2 {
            warn!("mode {l} has {} sample(s); excluded from diagnostics", idx.len());
            excluded.push(l);
            continue;
        }
        blocks.push((l, z.select_rows(&idx)));
    }
    let mut modes = Vec::new();
    let mut tops = Vec::new();
    for (l, b) in &blocks {
        let sv = singular_values(b)?;
        let top = sv.first().copied().unwrap_or(0.0);
        let rank = sv.iter().filter(|&&s| s > RANK_THRESHOLD * top).count();
        tops.push(top);
        modes.push(ModeSpectrum { label: *l, samples: b.rows(), singular_values: sv, rank });
    }
    let mut max_coherence: f64 = 0.0;
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            if tops[i] == 0.0 || tops[j] == 0.0 {
                continue;
            }
            let cross = blocks[i].1.matmul_nt(&blocks[j].1)?;
            let s = singular_values(&cross)?.first().copied().unwrap_or(0.0);
            max_coherence = max_coherence.max(s / (tops[i] * tops[j]));
        }
    }
    Ok(SubspaceReport { max_coherence, modes, excluded })
}
