//! Dataset shape modeling: manifest ingestion, seeded sampling, empirical
//! shape histograms, and per-item FLOP accounting.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DataItem, ModelSpec};

/// One not-yet-validated manifest record, as parsed from an input stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub enc_batch: i64,
    pub llm_seq_len: i64,
}

/// Errors from dataset ingestion and statistics.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error("record {line}: field {field} has invalid value {value}")]
    InvalidField { line: usize, field: &'static str, value: i64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample size must be at least 1")]
    ZeroSample,
}

/// Histogram bucketing policy for shape values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[derive(Default)]
pub enum Bucketing {
    /// Buckets keyed by the largest power of two at or below the value
    /// (value 0 maps to bucket 0), matching profile-grid knot spacing.
    #[default]
    PowerOfTwo,
    /// Fixed-width buckets keyed by their lower edge.
    FixedWidth(u64),
}


impl Bucketing {
    /// Lower edge of the bucket containing `value`.
    pub fn bucket_of(&self, value: u64) -> u64 {
        match *self {
            Bucketing::PowerOfTwo => {
                if value == 0 {
                    0
                } else {
                    1u64 << (63 - value.leading_zeros())
                }
            }
            Bucketing::FixedWidth(w) => {
                let w = w.max(1);
                (value / w) * w
            }
        }
    }
}

/// Empirical shape statistics over a retained sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeDistribution {
    /// enc_batch bucket lower edge -> count.
    pub enc_batch_hist: BTreeMap<u64, u64>,
    /// llm_seq_len bucket lower edge -> count.
    pub llm_seq_hist: BTreeMap<u64, u64>,
    /// The sampled items the histograms were built from.
    pub sample: Vec<DataItem>,
    /// Arithmetic mean of raw (unbucketed) enc_batch values.
    pub mean_enc_batch: f64,
    /// Arithmetic mean of raw (unbucketed) llm_seq_len values.
    pub mean_llm_seq: f64,
}

/// FLOP load of a single item, split by throughput regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopLoad {
    /// Encoder forward FLOPs.
    pub e_flops: f64,
    /// LLM attention (sequence-quadratic) forward FLOPs.
    pub l_attn_flops: f64,
    /// LLM linear-layer (sequence-linear) forward FLOPs.
    pub l_lin_flops: f64,
}

/// Validates raw records into DataItems, preserving source order.
/// The reported line number is 1-based.
pub fn ingest_manifest(
    records: impl IntoIterator<Item = RawRecord>,
) -> Result<Vec<DataItem>, WorkloadError> {
    let mut items = Vec::new();
    for (idx, rec) in records.into_iter().enumerate() {
        let line = idx + 1;
        if rec.enc_batch < 0 || rec.enc_batch > u32::MAX as i64 {
            return Err(WorkloadError::InvalidField {
                line,
                field: "enc_batch",
                value: rec.enc_batch,
            });
        }
        if rec.llm_seq_len < 1 || rec.llm_seq_len > u32::MAX as i64 {
            return Err(WorkloadError::InvalidField {
                line,
                field: "llm_seq_len",
                value: rec.llm_seq_len,
            });
        }
        items.push(DataItem {
            id: rec.id,
            enc_batch: rec.enc_batch as u32,
            llm_seq_len: rec.llm_seq_len as u32,
        });
    }
    Ok(items)
}

/// Uniform sample of `n` items without replacement, deterministic for a
/// fixed seed; returns the full list (in order) when `n >= items.len()`.
/// Sampled items keep their source order.
pub fn sample_dataset(
    items: &[DataItem],
    n: usize,
    seed: u64,
) -> Result<Vec<DataItem>, WorkloadError> {
    if n == 0 {
        return Err(WorkloadError::ZeroSample);
    }
    if items.is_empty() {
        return Err(WorkloadError::EmptyDataset);
    }
    if n >= items.len() {
        return Ok(items.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = rand::seq::index::sample(&mut rng, items.len(), n).into_vec();
    indices.sort_unstable();
    Ok(indices.into_iter().map(|i| items[i].clone()).collect())
}

/// Builds bucketed histograms and raw-value means over a sample.
pub fn build_distribution(
    sample: &[DataItem],
    bucketing: Bucketing,
) -> Result<ShapeDistribution, WorkloadError> {
    if sample.is_empty() {
        return Err(WorkloadError::EmptyDataset);
    }
    let mut enc_batch_hist = BTreeMap::new();
    let mut llm_seq_hist = BTreeMap::new();
    let mut sum_b = 0.0;
    let mut sum_s = 0.0;
    for item in sample {
        *enc_batch_hist.entry(bucketing.bucket_of(item.enc_batch as u64)).or_insert(0u64) += 1;
        *llm_seq_hist.entry(bucketing.bucket_of(item.llm_seq_len as u64)).or_insert(0u64) += 1;
        sum_b += item.enc_batch as f64;
        sum_s += item.llm_seq_len as f64;
    }
    let n = sample.len() as f64;
    Ok(ShapeDistribution {
        enc_batch_hist,
        llm_seq_hist,
        sample: sample.to_vec(),
        mean_enc_batch: sum_b / n,
        mean_llm_seq: sum_s / n,
    })
}

/// Forward-pass FLOPs at real-valued shapes. Dense-transformer accounting:
/// 24 l h^2 FLOPs per token through the linear stack (QKVO projections plus a
/// 4x FFN), and 4 l h FLOPs per token pair through attention scores/values.
pub fn flops_at(enc_batch: f64, llm_seq_len: f64, spec: &ModelSpec) -> FlopLoad {
    let eh = spec.e_hidden as f64;
    let lh = spec.l_hidden as f64;
    let el = spec.e_layers as f64;
    let ll = spec.l_layers as f64;
    let e_tokens = enc_batch * spec.e_seq_len as f64;
    FlopLoad {
        e_flops: 24.0 * el * eh * eh * e_tokens,
        l_lin_flops: 24.0 * ll * lh * lh * llm_seq_len,
        l_attn_flops: 4.0 * ll * lh * llm_seq_len * llm_seq_len,
    }
}

/// Forward-pass FLOP load of one dataset item.
pub fn item_flops(item: &DataItem, spec: &ModelSpec) -> FlopLoad {
    flops_at(item.enc_batch as f64, item.llm_seq_len as f64, spec)
}
