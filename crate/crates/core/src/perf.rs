//! Interpolated performance and memory models: multilinear grids fitted from
//! profiled measurements, plus per-plan memory footprint formulas and a
//! synthetic profile generator for testing and experiments.

use serde::{Deserialize, Serialize};

use crate::domain::{ClusterSpec, ModelSpec, ParallelPlan};

/// Behavior of one grid axis outside its knot range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisMode {
    /// Queries beyond the knots evaluate at the nearest boundary knot.
    Clamp,
    /// Queries beyond the knots extend the boundary segment linearly.
    Extend,
}

/// Errors constructing an interpolation grid.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("grid needs at least one axis")]
    NoAxes,
    #[error("axis {axis} is empty")]
    EmptyAxis { axis: usize },
    #[error("axis {axis} is not strictly increasing at position {pos}")]
    AxisNotIncreasing { axis: usize, pos: usize },
    #[error("axis {axis} contains a non-finite coordinate")]
    NonFiniteAxis { axis: usize },
    #[error("expected {expected} values for the axis shape, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("value at flat index {index} is negative or non-finite")]
    BadValue { index: usize },
    #[error("expected {expected} axis modes, got {got}")]
    ModeCountMismatch { expected: usize, got: usize },
    #[error("grids support at most {MAX_DIMS} axes, got {got}")]
    TooManyAxes { got: usize },
}

/// Errors evaluating performance models.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerfError {
    #[error("query has {got} coordinates but the grid has {expected} axes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{grid} throughput is not positive at the query point")]
    ZeroThroughput { grid: &'static str },
    #[error("profile grid {grid}: {source}")]
    BadGrid { grid: &'static str, source: GridError },
    #[error("profile grid {grid} has {got} axes, expected {expected}")]
    GridArity { grid: &'static str, expected: usize, got: usize },
    #[error("profile grid {grid} tp axis exceeds gpus_per_node {gpus_per_node}")]
    TpAxisTooWide { grid: &'static str, gpus_per_node: u32 },
    #[error("profile grid {grid} stores a non-positive throughput value")]
    NonPositiveThroughput { grid: &'static str },
}

const MAX_DIMS: usize = 4;

/// Dense multilinear interpolation grid over strictly increasing axes.
///
/// Values are stored row-major (last axis fastest). Queries outside the hull
/// follow the per-axis [`AxisMode`]; queries at a knot return the stored
/// value exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpGrid {
    axes: Vec<Vec<f64>>,
    modes: Vec<AxisMode>,
    values: Vec<f64>,
    strides: Vec<usize>,
}

impl InterpGrid {
    /// Builds a grid that clamps on every axis.
    pub fn new(axes: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self, GridError> {
        let modes = vec![AxisMode::Clamp; axes.len()];
        Self::with_modes(axes, modes, values)
    }

    /// Builds a grid with an explicit out-of-hull mode per axis.
    pub fn with_modes(
        axes: Vec<Vec<f64>>,
        modes: Vec<AxisMode>,
        values: Vec<f64>,
    ) -> Result<Self, GridError> {
        if axes.is_empty() {
            return Err(GridError::NoAxes);
        }
        if axes.len() > MAX_DIMS {
            return Err(GridError::TooManyAxes { got: axes.len() });
        }
        if modes.len() != axes.len() {
            return Err(GridError::ModeCountMismatch { expected: axes.len(), got: modes.len() });
        }
        let mut expected = 1usize;
        for (k, axis) in axes.iter().enumerate() {
            if axis.is_empty() {
                return Err(GridError::EmptyAxis { axis: k });
            }
            if axis.iter().any(|c| !c.is_finite()) {
                return Err(GridError::NonFiniteAxis { axis: k });
            }
            for pos in 1..axis.len() {
                if axis[pos] <= axis[pos - 1] {
                    return Err(GridError::AxisNotIncreasing { axis: k, pos });
                }
            }
            expected = expected.saturating_mul(axis.len());
        }
        if values.len() != expected {
            return Err(GridError::ShapeMismatch { expected, got: values.len() });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(GridError::BadValue { index });
        }
        let mut strides = vec![1usize; axes.len()];
        for k in (0..axes.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * axes[k + 1].len();
        }
        Ok(Self { axes, modes, values, strides })
    }

    /// Number of axes.
    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    /// Axis coordinate vectors.
    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    /// Per-axis out-of-hull modes.
    pub fn modes(&self) -> &[AxisMode] {
        &self.modes
    }

    /// Row-major value tensor.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Upper bound on `interp(&[x, y])` over every possible `x` at a fixed
    /// `y`, for 2-D grids: the axis-1 blend can never exceed its maximum over
    /// the axis-0 knots, because axis-0 blending is convex. Returns infinity
    /// when no finite bound holds (non-2-D grid, an extending axis 0, or a
    /// non-positive blended column). Used by search pruning, which only needs
    /// soundness, never tightness.
    pub fn upper_envelope_2d(&self, axis1_coord: f64) -> f64 {
        if self.axes.len() != 2 || self.modes[0] == AxisMode::Extend {
            return f64::INFINITY;
        }
        let (lo, hi, t) = bracket(&self.axes[1], axis1_coord, self.modes[1]);
        let n1 = self.axes[1].len();
        let mut best = f64::NEG_INFINITY;
        for i in 0..self.axes[0].len() {
            let a = self.values[i * n1 + lo];
            let b = self.values[i * n1 + hi];
            best = best.max(a + (b - a) * t);
        }
        if best > 0.0 {
            best
        } else {
            f64::INFINITY
        }
    }

    /// Like [`Self::upper_envelope_2d`] but only over axis-0 coordinates in
    /// `[xlo, xhi]`. The interpolant is piecewise linear along axis 0 (in
    /// both axis modes), so its maximum sits at an endpoint or an interior
    /// knot.
    pub fn upper_envelope_2d_range(&self, xlo: f64, xhi: f64, axis1_coord: f64) -> f64 {
        if self.axes.len() != 2 || xlo.is_nan() || xhi.is_nan() || xlo > xhi {
            return f64::INFINITY;
        }
        let mut best = f64::NEG_INFINITY;
        for x in [xlo, xhi] {
            match self.interp(&[x, axis1_coord]) {
                Ok(v) => best = best.max(v),
                Err(_) => return f64::INFINITY,
            }
        }
        let (lo, hi, t) = bracket(&self.axes[1], axis1_coord, self.modes[1]);
        let n1 = self.axes[1].len();
        for (i, &k) in self.axes[0].iter().enumerate() {
            if k > xlo && k < xhi {
                let a = self.values[i * n1 + lo];
                let b = self.values[i * n1 + hi];
                best = best.max(a + (b - a) * t);
            }
        }
        if best > 0.0 {
            best
        } else {
            f64::INFINITY
        }
    }

    /// Multilinear interpolation at `coords`, one coordinate per axis.
    ///
    /// Out-of-hull coordinates clamp (or extend linearly, per axis mode)
    /// before interpolation; a query exactly at a knot returns the stored
    /// value with no rounding.
    pub fn interp(&self, coords: &[f64]) -> Result<f64, PerfError> {
        let d = self.axes.len();
        if coords.len() != d {
            return Err(PerfError::DimensionMismatch { expected: d, got: coords.len() });
        }
        let mut lo = [0usize; MAX_DIMS];
        let mut hi = [0usize; MAX_DIMS];
        let mut t = [0.0f64; MAX_DIMS];
        for k in 0..d {
            let (l, h, tk) = bracket(&self.axes[k], coords[k], self.modes[k]);
            lo[k] = l;
            hi[k] = h;
            t[k] = tk;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut idx = 0usize;
            for k in 0..d {
                if corner & (1 << k) != 0 {
                    weight *= t[k];
                    idx += self.strides[k] * hi[k];
                } else {
                    weight *= 1.0 - t[k];
                    idx += self.strides[k] * lo[k];
                }
            }
            if weight != 0.0 {
                acc += weight * self.values[idx];
            }
        }
        Ok(acc)
    }
}

/// Finds the bracketing knot pair and blend factor for one axis.
fn bracket(axis: &[f64], x: f64, mode: AxisMode) -> (usize, usize, f64) {
    let n = axis.len();
    if n == 1 {
        return (0, 0, 0.0);
    }
    match mode {
        AxisMode::Clamp => {
            if x <= axis[0] {
                return (0, 0, 0.0);
            }
            if x >= axis[n - 1] {
                return (n - 1, n - 1, 0.0);
            }
        }
        AxisMode::Extend => {
            if x < axis[0] {
                let t = (x - axis[0]) / (axis[1] - axis[0]);
                return (0, 1, t);
            }
            if x >= axis[n - 1] {
                if x == axis[n - 1] {
                    return (n - 1, n - 1, 0.0);
                }
                let t = (x - axis[n - 2]) / (axis[n - 1] - axis[n - 2]);
                return (n - 2, n - 1, t);
            }
        }
    }
    let hi = axis.partition_point(|&k| k <= x);
    let lo = hi - 1;
    let t = (x - axis[lo]) / (axis[hi] - axis[lo]);
    (lo, hi, t)
}

/// Fitted throughput and memory models for both modules.
///
/// Throughput grids store the aggregate throughput of one tensor-parallel
/// group (all `tp` GPUs together) in flops/sec; stage durations divide module
/// FLOPs by `group throughput * pp`. Memory grids store bytes per GPU. Axis
/// conventions: throughput grids are (shape, tp); model-state grids are
/// (layers, tp); activation grids are (layers, tp, shape). The layers axis of
/// every memory grid extends linearly beyond its knots, since weight and
/// activation state are affine in layer count; all other axes clamp.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfProfile {
    /// Encoder throughput over (enc_batch, e_tp).
    pub e_thr: InterpGrid,
    /// LLM attention throughput over (llm_seq_len, l_tp).
    pub l_attn_thr: InterpGrid,
    /// LLM linear-layer throughput over (llm_seq_len, l_tp).
    pub l_lin_thr: InterpGrid,
    /// Encoder weight/optimizer state bytes over (layers, e_tp).
    pub e_model_state: InterpGrid,
    /// LLM weight/optimizer state bytes over (layers, l_tp).
    pub l_model_state: InterpGrid,
    /// Encoder activation bytes per microbatch over (layers, e_tp, enc_batch),
    /// at the model's fixed encoder sequence length.
    pub e_act_state: InterpGrid,
    /// LLM activation bytes per microbatch over (layers, l_tp, llm_seq_len).
    pub l_act_state: InterpGrid,
}

impl PerfProfile {
    /// Checks grid arities, tp-axis bounds, and throughput positivity.
    pub fn validate(&self, gpus_per_node: u32) -> Result<(), PerfError> {
        let thr_grids: [(&'static str, &InterpGrid); 3] = [
            ("e_thr", &self.e_thr),
            ("l_attn_thr", &self.l_attn_thr),
            ("l_lin_thr", &self.l_lin_thr),
        ];
        let mem_grids: [(&'static str, &InterpGrid, usize); 4] = [
            ("e_model_state", &self.e_model_state, 2),
            ("l_model_state", &self.l_model_state, 2),
            ("e_act_state", &self.e_act_state, 3),
            ("l_act_state", &self.l_act_state, 3),
        ];
        for (name, grid) in thr_grids {
            if grid.dims() != 2 {
                return Err(PerfError::GridArity { grid: name, expected: 2, got: grid.dims() });
            }
            check_tp_axis(name, grid, 1, gpus_per_node)?;
            if grid.values().iter().any(|v| *v <= 0.0) {
                return Err(PerfError::NonPositiveThroughput { grid: name });
            }
        }
        for (name, grid, arity) in mem_grids {
            if grid.dims() != arity {
                return Err(PerfError::GridArity { grid: name, expected: arity, got: grid.dims() });
            }
            check_tp_axis(name, grid, 1, gpus_per_node)?;
        }
        Ok(())
    }
}

fn check_tp_axis(
    name: &'static str,
    grid: &InterpGrid,
    axis: usize,
    gpus_per_node: u32,
) -> Result<(), PerfError> {
    let coords = &grid.axes()[axis];
    if coords.iter().any(|&tp| tp > gpus_per_node as f64) {
        return Err(PerfError::TpAxisTooWide { grid: name, gpus_per_node });
    }
    Ok(())
}

/// Aggregate throughput of one encoder tensor-parallel group at the given
/// effective batch size; strictly positive on a valid profile.
pub fn encoder_throughput(
    profile: &PerfProfile,
    enc_batch: f64,
    e_tp: u32,
) -> Result<f64, PerfError> {
    let thr = profile.e_thr.interp(&[enc_batch, e_tp as f64])?;
    if thr <= 0.0 {
        return Err(PerfError::ZeroThroughput { grid: "e_thr" });
    }
    Ok(thr)
}

/// Duration of the LLM module for one microbatch on one tensor-parallel
/// group: attention and linear FLOPs each divided by their own throughput
/// model and summed. Divide by `l_pp` for the per-stage duration.
pub fn llm_duration(
    profile: &PerfProfile,
    attn_flops: f64,
    lin_flops: f64,
    llm_seq_len: f64,
    l_tp: u32,
) -> Result<f64, PerfError> {
    let coords = [llm_seq_len, l_tp as f64];
    let attn_thr = profile.l_attn_thr.interp(&coords)?;
    if attn_thr <= 0.0 {
        return Err(PerfError::ZeroThroughput { grid: "l_attn_thr" });
    }
    let lin_thr = profile.l_lin_thr.interp(&coords)?;
    if lin_thr <= 0.0 {
        return Err(PerfError::ZeroThroughput { grid: "l_lin_thr" });
    }
    Ok(attn_flops / attn_thr + lin_flops / lin_thr)
}

/// Ceiling division for per-stage layer counts.
pub fn stage_layers(layers: u32, pp: u32) -> u32 {
    layers.div_ceil(pp)
}

/// Per-GPU encoder memory footprint in bytes: the worst stage's model state
/// plus activations held for the whole pipeline depth. Activation stash grows
/// with the total depth `e_pp + l_pp` because encoder microbatches stay alive
/// until their backward returns through the LLM stages.
pub fn encoder_memory(
    profile: &PerfProfile,
    plan: &ParallelPlan,
    spec: &ModelSpec,
    enc_batch: f64,
) -> Result<f64, PerfError> {
    let layers = stage_layers(spec.e_layers, plan.e_pp) as f64;
    let tp = plan.e_tp as f64;
    let model = profile.e_model_state.interp(&[layers, tp])?;
    let act = profile.e_act_state.interp(&[layers, tp, enc_batch])?;
    Ok(model + (plan.e_pp + plan.l_pp) as f64 * act)
}

/// Per-GPU LLM memory footprint in bytes: worst-stage model state plus
/// `l_pp` stashed activation microbatches.
pub fn llm_memory(
    profile: &PerfProfile,
    plan: &ParallelPlan,
    spec: &ModelSpec,
    llm_seq_len: f64,
) -> Result<f64, PerfError> {
    let layers = stage_layers(spec.l_layers, plan.l_pp) as f64;
    let tp = plan.l_tp as f64;
    let model = profile.l_model_state.interp(&[layers, tp])?;
    let act = profile.l_act_state.interp(&[layers, tp, llm_seq_len])?;
    Ok(model + plan.l_pp as f64 * act)
}

/// Parameters of the analytic cost model behind [`synth_profile`].
///
/// Throughput saturates with input shape and scales sublinearly with tp
/// (each extra rank pays a communication overhead); memory is linear in
/// layers and shape and inversely proportional to tp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Per-GPU encoder peak, flops/sec.
    pub e_peak_flops: f64,
    /// Per-GPU LLM linear-layer peak, flops/sec.
    pub l_lin_peak_flops: f64,
    /// Per-GPU LLM attention peak, flops/sec.
    pub l_attn_peak_flops: f64,
    /// Fractional efficiency loss per extra tensor-parallel rank.
    pub tp_overhead: f64,
    /// Encoder batch at which throughput reaches half of peak.
    pub e_sat_batch: f64,
    /// LLM sequence length at which throughput reaches half of peak.
    pub l_sat_seq: f64,
    /// Weight + gradient + optimizer bytes per parameter.
    pub bytes_per_param: f64,
    /// Activation bytes per hidden unit per token per layer.
    pub act_bytes_per_token: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            e_peak_flops: 3.0e13,
            l_lin_peak_flops: 4.5e13,
            l_attn_peak_flops: 1.5e13,
            tp_overhead: 0.08,
            e_sat_batch: 4.0,
            l_sat_seq: 1024.0,
            bytes_per_param: 18.0,
            act_bytes_per_token: 34.0,
        }
    }
}

impl SynthParams {
    fn group_thr(&self, peak: f64, shape: f64, sat: f64, tp: f64) -> f64 {
        let eff = 1.0 / (1.0 + self.tp_overhead * (tp - 1.0));
        peak * tp * eff * (shape / (shape + sat))
    }

    fn model_state(&self, hidden: f64, layers: f64, tp: f64) -> f64 {
        // ~12 h^2 parameters per transformer layer.
        self.bytes_per_param * 12.0 * hidden * hidden * layers / tp
    }

    fn act_state(&self, hidden: f64, tokens: f64, layers: f64, tp: f64) -> f64 {
        self.act_bytes_per_token * hidden * tokens * layers / tp
    }
}

/// Tensor-parallel grid coordinates: powers of two up to `gpus_per_node`.
pub fn tp_axis(gpus_per_node: u32) -> Vec<f64> {
    let mut axis = Vec::new();
    let mut tp = 1u32;
    while tp <= gpus_per_node {
        axis.push(tp as f64);
        tp *= 2;
    }
    axis
}

fn pow2_axis(from: u64, to: u64) -> Vec<f64> {
    let mut axis = Vec::new();
    let mut v = from;
    while v <= to {
        axis.push(v as f64);
        v *= 2;
    }
    axis
}

fn fill_grid(axes: &[Vec<f64>], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let total: usize = axes.iter().map(Vec::len).product();
    let mut values = Vec::with_capacity(total);
    let mut coords = vec![0.0; axes.len()];
    let mut idx = vec![0usize; axes.len()];
    for _ in 0..total {
        for (k, &i) in idx.iter().enumerate() {
            coords[k] = axes[k][i];
        }
        values.push(f(&coords));
        for k in (0..axes.len()).rev() {
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    values
}

/// Generates a complete synthetic profile from the analytic cost model.
///
/// Grid coordinates follow the profiling convention: tp in powers of two up
/// to the node width, layer axes at two small counts (extended linearly
/// beyond), and shape axes in powers of two.
pub fn synth_profile(
    spec: &ModelSpec,
    cluster: &ClusterSpec,
    params: &SynthParams,
) -> PerfProfile {
    let tp = tp_axis(cluster.gpus_per_node);
    let layers = vec![1.0, 2.0];
    let batch_thr = pow2_axis(1, 65_536);
    let mut batch_act = vec![0.0];
    batch_act.extend_from_slice(&batch_thr);
    let seq = pow2_axis(1, 131_072);

    let e_hidden = spec.e_hidden as f64;
    let l_hidden = spec.l_hidden as f64;
    let e_seq = spec.e_seq_len as f64;

    let thr_axes = |shape_axis: &Vec<f64>| vec![shape_axis.clone(), tp.clone()];
    let mem_modes = vec![AxisMode::Extend, AxisMode::Clamp];
    let act_modes = vec![AxisMode::Extend, AxisMode::Clamp, AxisMode::Clamp];

    let e_thr_axes = thr_axes(&batch_thr);
    let e_thr_vals =
        fill_grid(&e_thr_axes, |c| params.group_thr(params.e_peak_flops, c[0], params.e_sat_batch, c[1]));
    let l_attn_axes = thr_axes(&seq);
    let l_attn_vals = fill_grid(&l_attn_axes, |c| {
        params.group_thr(params.l_attn_peak_flops, c[0], params.l_sat_seq, c[1])
    });
    let l_lin_axes = thr_axes(&seq);
    let l_lin_vals = fill_grid(&l_lin_axes, |c| {
        params.group_thr(params.l_lin_peak_flops, c[0], params.l_sat_seq, c[1])
    });

    let e_ms_axes = vec![layers.clone(), tp.clone()];
    let e_ms_vals = fill_grid(&e_ms_axes, |c| params.model_state(e_hidden, c[0], c[1]));
    let l_ms_axes = vec![layers.clone(), tp.clone()];
    let l_ms_vals = fill_grid(&l_ms_axes, |c| params.model_state(l_hidden, c[0], c[1]));

    let e_act_axes = vec![layers.clone(), tp.clone(), batch_act];
    let e_act_vals =
        fill_grid(&e_act_axes, |c| params.act_state(e_hidden, c[2] * e_seq, c[0], c[1]));
    let l_act_axes = vec![layers, tp, seq];
    let l_act_vals = fill_grid(&l_act_axes, |c| params.act_state(l_hidden, c[2], c[0], c[1]));

    PerfProfile {
        e_thr: InterpGrid::new(e_thr_axes, e_thr_vals).expect("synthetic e_thr grid"),
        l_attn_thr: InterpGrid::new(l_attn_axes, l_attn_vals).expect("synthetic l_attn grid"),
        l_lin_thr: InterpGrid::new(l_lin_axes, l_lin_vals).expect("synthetic l_lin grid"),
        e_model_state: InterpGrid::with_modes(e_ms_axes, mem_modes.clone(), e_ms_vals)
            .expect("synthetic e_model_state grid"),
        l_model_state: InterpGrid::with_modes(l_ms_axes, mem_modes, l_ms_vals)
            .expect("synthetic l_model_state grid"),
        e_act_state: InterpGrid::with_modes(e_act_axes, act_modes.clone(), e_act_vals)
            .expect("synthetic e_act_state grid"),
        l_act_state: InterpGrid::with_modes(l_act_axes, act_modes, l_act_vals)
            .expect("synthetic l_act_state grid"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1d(knots: &[(f64, f64)]) -> InterpGrid {
        let axis: Vec<f64> = knots.iter().map(|k| k.0).collect();
        let vals: Vec<f64> = knots.iter().map(|k| k.1).collect();
        InterpGrid::new(vec![axis], vals).unwrap()
    }

    #[test]
    fn linear_midpoint_in_1d() {
        let g = grid1d(&[(1.0, 10.0), (2.0, 20.0)]);
        assert_eq!(g.interp(&[1.5]).unwrap(), 15.0);
    }

    #[test]
    fn exact_at_every_knot() {
        let g = grid1d(&[(1.0, 10.0), (2.0, 20.0), (4.0, 17.0)]);
        assert_eq!(g.interp(&[1.0]).unwrap(), 10.0);
        assert_eq!(g.interp(&[2.0]).unwrap(), 20.0);
        assert_eq!(g.interp(&[4.0]).unwrap(), 17.0);
    }

    #[test]
    fn clamps_outside_hull() {
        let g = grid1d(&[(1.0, 10.0), (2.0, 20.0)]);
        assert_eq!(g.interp(&[0.0]).unwrap(), 10.0);
        assert_eq!(g.interp(&[9.0]).unwrap(), 20.0);
    }

    #[test]
    fn reproduces_bilinear_ground_truth() {
        // f(x, y) = 3x + 2y + xy sampled on a 2x2 grid is recovered exactly
        // at interior points by bilinear interpolation.
        let f = |x: f64, y: f64| 3.0 * x + 2.0 * y + x * y;
        let xs = [1.0, 3.0];
        let ys = [2.0, 6.0];
        let mut vals = Vec::new();
        for x in xs {
            for y in ys {
                vals.push(f(x, y));
            }
        }
        let g = InterpGrid::new(vec![xs.to_vec(), ys.to_vec()], vals).unwrap();
        assert_eq!(g.interp(&[2.0, 4.0]).unwrap(), f(2.0, 4.0));
        assert_eq!(g.interp(&[1.5, 5.0]).unwrap(), f(1.5, 5.0));
        assert_eq!(g.interp(&[2.5, 2.5]).unwrap(), f(2.5, 2.5));
    }

    #[test]
    fn extend_mode_is_linear_beyond_knots() {
        let axis = vec![1.0, 2.0];
        let vals = vec![10.0, 16.0];
        let g = InterpGrid::with_modes(vec![axis], vec![AxisMode::Extend], vals).unwrap();
        assert_eq!(g.interp(&[4.0]).unwrap(), 28.0); // 10 + 3 * 6
        assert_eq!(g.interp(&[2.0]).unwrap(), 16.0); // still exact at the knot
    }

    #[test]
    fn rejects_malformed_grids() {
        assert!(matches!(
            InterpGrid::new(vec![vec![2.0, 1.0]], vec![0.0, 0.0]),
            Err(GridError::AxisNotIncreasing { .. })
        ));
        assert!(matches!(
            InterpGrid::new(vec![vec![1.0, 2.0]], vec![0.0]),
            Err(GridError::ShapeMismatch { expected: 2, got: 1 })
        ));
        assert!(matches!(
            InterpGrid::new(vec![vec![1.0, 2.0]], vec![1.0, -2.0]),
            Err(GridError::BadValue { index: 1 })
        ));
    }

    #[test]
    fn envelope_bounds_every_query() {
        let axes = vec![vec![1.0, 8.0, 64.0], vec![1.0, 2.0, 4.0]];
        let vals = vec![5.0, 9.0, 14.0, 7.0, 11.0, 20.0, 6.0, 10.0, 17.0];
        let g = InterpGrid::new(axes, vals).unwrap();
        for tp in [1.0, 1.5, 2.0, 3.0, 4.0, 9.0] {
            let bound = g.upper_envelope_2d(tp);
            for x in [0.5, 1.0, 3.0, 8.0, 20.0, 64.0, 100.0] {
                let v = g.interp(&[x, tp]).unwrap();
                assert!(v <= bound, "interp {v} exceeds envelope {bound} at ({x}, {tp})");
            }
        }
        // At a tp knot the envelope is exactly the column maximum.
        assert_eq!(g.upper_envelope_2d(2.0), 11.0);
    }

    #[test]
    fn range_envelope_bounds_queries_inside_the_range() {
        let axes = vec![vec![1.0, 8.0, 64.0], vec![1.0, 2.0, 4.0]];
        let vals = vec![5.0, 9.0, 14.0, 7.0, 11.0, 20.0, 6.0, 10.0, 17.0];
        let g = InterpGrid::new(axes, vals).unwrap();
        for tp in [1.0, 1.7, 2.0, 4.0] {
            for (xlo, xhi) in [(0.2, 3.0), (2.0, 2.0), (5.0, 120.0), (70.0, 200.0)] {
                let bound = g.upper_envelope_2d_range(xlo, xhi, tp);
                assert!(bound <= g.upper_envelope_2d(tp));
                let mut x = xlo;
                while x <= xhi {
                    let v = g.interp(&[x, tp]).unwrap();
                    assert!(
                        v <= bound * (1.0 + 1e-12),
                        "interp {v} exceeds range envelope {bound} at ({x}, {tp})"
                    );
                    x += (xhi - xlo).max(0.1) / 13.0;
                }
            }
        }
        // A degenerate range at a knot pair collapses to the stored value.
        assert_eq!(g.upper_envelope_2d_range(8.0, 8.0, 2.0), 11.0);
        // Values below the first knot clamp, so the range bound matches the
        // first row even when the range sits fully outside the hull.
        assert_eq!(g.upper_envelope_2d_range(0.1, 0.2, 1.0), 5.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = grid1d(&[(1.0, 10.0), (2.0, 20.0)]);
        assert!(matches!(
            g.interp(&[1.0, 2.0]),
            Err(PerfError::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    fn tiny_spec() -> ModelSpec {
        ModelSpec { e_layers: 2, l_layers: 4, e_hidden: 64, l_hidden: 128, e_seq_len: 16 }
    }

    fn tiny_cluster() -> ClusterSpec {
        ClusterSpec::new(8, 4, 80e9).unwrap()
    }

    #[test]
    fn synth_profile_uses_power_of_two_tp_axis() {
        assert_eq!(tp_axis(8), vec![1.0, 2.0, 4.0, 8.0]);
        let p = synth_profile(&tiny_spec(), &tiny_cluster(), &SynthParams::default());
        assert_eq!(p.e_thr.axes()[1], vec![1.0, 2.0, 4.0]);
        p.validate(4).unwrap();
    }

    #[test]
    fn synth_memory_is_linear_in_layers() {
        let p = synth_profile(&tiny_spec(), &tiny_cluster(), &SynthParams::default());
        let one = p.e_model_state.interp(&[1.0, 1.0]).unwrap();
        let two = p.e_model_state.interp(&[2.0, 1.0]).unwrap();
        assert_eq!(two, 2.0 * one);
        // Linear extension keeps the same slope beyond the last knot.
        let eight = p.e_model_state.interp(&[8.0, 1.0]).unwrap();
        assert!((eight - 8.0 * one).abs() < 1e-6 * eight.abs());
    }

    #[test]
    fn synth_group_throughput_degrades_per_gpu_with_tp() {
        let p = synth_profile(&tiny_spec(), &tiny_cluster(), &SynthParams::default());
        let t1 = p.e_thr.interp(&[32.0, 1.0]).unwrap();
        let t2 = p.e_thr.interp(&[32.0, 2.0]).unwrap();
        assert!(t2 > t1, "group throughput grows with tp");
        assert!(t2 / 2.0 < t1, "per-GPU throughput shrinks with tp");
    }

    #[test]
    fn llm_duration_sums_component_quotients() {
        let p = synth_profile(&tiny_spec(), &tiny_cluster(), &SynthParams::default());
        assert_eq!(llm_duration(&p, 0.0, 0.0, 512.0, 1).unwrap(), 0.0);
        let attn = p.l_attn_thr.interp(&[512.0, 1.0]).unwrap();
        let lin = p.l_lin_thr.interp(&[512.0, 1.0]).unwrap();
        let d = llm_duration(&p, 2.0 * attn, 3.0 * lin, 512.0, 1).unwrap();
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn encoder_memory_multiplies_activations_by_total_depth() {
        let p = synth_profile(&tiny_spec(), &tiny_cluster(), &SynthParams::default());
        let spec = tiny_spec();
        let base = ParallelPlan { e_tp: 1, e_pp: 1, e_dp: 1, l_tp: 1, l_pp: 3, l_dp: 1, n_mb: 1 };
        let model = p.e_model_state.interp(&[2.0, 1.0]).unwrap();
        let act = p.e_act_state.interp(&[2.0, 1.0, 8.0]).unwrap();
        let m = encoder_memory(&p, &base, &spec, 8.0).unwrap();
        assert!((m - (model + 4.0 * act)).abs() < 1e-9 * m);

        // Raising l_pp from 1 to 2 with e_pp=1 scales the activation term by 3/2.
        let p1 = ParallelPlan { l_pp: 1, ..base };
        let p2 = ParallelPlan { l_pp: 2, ..base };
        let m1 = encoder_memory(&p, &p1, &spec, 8.0).unwrap();
        let m2 = encoder_memory(&p, &p2, &spec, 8.0).unwrap();
        assert!((m2 - model - 1.5 * (m1 - model)).abs() < 1e-9 * m2);

        // Zero batch leaves only the model-state term.
        let m0 = encoder_memory(&p, &base, &spec, 0.0).unwrap();
        assert_eq!(m0, model);
    }

    #[test]
    fn llm_memory_follows_stage_count_and_ceiling_layers() {
        let p = synth_profile(&tiny_spec(), &tiny_cluster(), &SynthParams::default());
        let spec = tiny_spec();
        // l_layers=4, l_pp=3 -> ceil(4/3)=2 layers on the worst stage.
        let plan = ParallelPlan { e_tp: 1, e_pp: 1, e_dp: 1, l_tp: 1, l_pp: 3, l_dp: 1, n_mb: 1 };
        let model = p.l_model_state.interp(&[2.0, 1.0]).unwrap();
        let act = p.l_act_state.interp(&[2.0, 1.0, 256.0]).unwrap();
        let m = llm_memory(&p, &plan, &spec, 256.0).unwrap();
        assert!((m - (model + 3.0 * act)).abs() < 1e-9 * m);
        assert_eq!(stage_layers(4, 3), 2);
        assert_eq!(stage_layers(27, 4), 7);
    }
}
