//! Core value types shared by every module: cluster geometry, parallelism
//! plans, model shapes, and dataset items.

use serde::{Deserialize, Serialize};

/// Cluster geometry: total GPUs, GPUs per node, and per-GPU memory in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub n_gpus: u32,
    pub gpus_per_node: u32,
    /// Usable memory per GPU in bytes.
    pub mem_per_gpu: f64,
}

impl ClusterSpec {
    /// Builds a cluster spec, rejecting degenerate geometries.
    pub fn new(n_gpus: u32, gpus_per_node: u32, mem_per_gpu: f64) -> Result<Self, DomainError> {
        if n_gpus < 2 {
            return Err(DomainError::ClusterTooSmall { n_gpus });
        }
        if gpus_per_node == 0 || gpus_per_node > n_gpus {
            return Err(DomainError::BadNodeWidth { gpus_per_node, n_gpus });
        }
        if !mem_per_gpu.is_finite() || mem_per_gpu <= 0.0 {
            return Err(DomainError::BadMemCapacity { mem_per_gpu });
        }
        Ok(Self { n_gpus, gpus_per_node, mem_per_gpu })
    }
}

/// Heterogeneous 3D-parallelism plan: one (tp, pp, dp) triple per module plus
/// the microbatch count per pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParallelPlan {
    pub e_tp: u32,
    pub e_pp: u32,
    pub e_dp: u32,
    pub l_tp: u32,
    pub l_pp: u32,
    pub l_dp: u32,
    pub n_mb: u32,
}

impl ParallelPlan {
    /// GPUs consumed by the encoder side.
    pub fn encoder_gpus(&self) -> u64 {
        self.e_tp as u64 * self.e_pp as u64 * self.e_dp as u64
    }

    /// GPUs consumed by the LLM side.
    pub fn llm_gpus(&self) -> u64 {
        self.l_tp as u64 * self.l_pp as u64 * self.l_dp as u64
    }

    /// Total pipeline depth across both modules.
    pub fn total_stages(&self) -> u32 {
        self.e_pp + self.l_pp
    }
}

/// Static model architecture parameters for the encoder and LLM modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub e_layers: u32,
    pub l_layers: u32,
    pub e_hidden: u32,
    pub l_hidden: u32,
    /// Fixed token count each encoder instance produces.
    pub e_seq_len: u32,
}

/// One dataset item: its encoder effective batch size and packed LLM
/// sequence length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataItem {
    pub id: String,
    /// Encoder instances this item contributes (0 for text-only items).
    pub enc_batch: u32,
    /// Packed text + visual token count seen by the LLM.
    pub llm_seq_len: u32,
}

/// The specific constraint a plan violates, in check order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PlanViolation {
    #[error("all parallel degrees must be at least 1")]
    ZeroDegree,
    #[error("n_mb must be at least 1")]
    ZeroMicrobatches,
    #[error("encoder tp {e_tp} exceeds gpus_per_node {gpus_per_node}")]
    EncoderTpExceedsNode { e_tp: u32, gpus_per_node: u32 },
    #[error("llm tp {l_tp} exceeds gpus_per_node {gpus_per_node}")]
    LlmTpExceedsNode { l_tp: u32, gpus_per_node: u32 },
    #[error("plan uses {used} GPUs but the cluster has {n_gpus}")]
    GpuSumMismatch { used: u64, n_gpus: u32 },
}

/// Errors constructing domain values.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum DomainError {
    #[error("cluster must have at least 2 GPUs, got {n_gpus}")]
    ClusterTooSmall { n_gpus: u32 },
    #[error("gpus_per_node {gpus_per_node} must be in 1..={n_gpus}")]
    BadNodeWidth { gpus_per_node: u32, n_gpus: u32 },
    #[error("mem_per_gpu must be positive and finite, got {mem_per_gpu}")]
    BadMemCapacity { mem_per_gpu: f64 },
}

/// Checks every structural plan constraint against the cluster, reporting the
/// first violation found. Pure: equal inputs always yield equal verdicts.
pub fn validate_plan(plan: &ParallelPlan, cluster: &ClusterSpec) -> Result<(), PlanViolation> {
    let degrees = [plan.e_tp, plan.e_pp, plan.e_dp, plan.l_tp, plan.l_pp, plan.l_dp];
    if degrees.contains(&0) {
        return Err(PlanViolation::ZeroDegree);
    }
    if plan.n_mb == 0 {
        return Err(PlanViolation::ZeroMicrobatches);
    }
    if plan.e_tp > cluster.gpus_per_node {
        return Err(PlanViolation::EncoderTpExceedsNode {
            e_tp: plan.e_tp,
            gpus_per_node: cluster.gpus_per_node,
        });
    }
    if plan.l_tp > cluster.gpus_per_node {
        return Err(PlanViolation::LlmTpExceedsNode {
            l_tp: plan.l_tp,
            gpus_per_node: cluster.gpus_per_node,
        });
    }
    let used = plan.encoder_gpus() + plan.llm_gpus();
    if used != cluster.n_gpus as u64 {
        return Err(PlanViolation::GpuSumMismatch { used, n_gpus: cluster.n_gpus });
    }
    Ok(())
}
