//! JSON document formats for profiles, distributions, plans, schedules and
//! traces, plus the JSONL dataset manifest. Writing then reading any
//! document reproduces the in-memory values exactly (f64 round-trip).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use pipeplan_core::{
    Assignment, AxisMode, Bucketing, DataItem, InterpGrid, ModelSpec, ParallelPlan,
    PerfProfile, PlanEvaluation, RawRecord, ShapeDistribution, SimTrace,
};

/// Reads a whole JSON document from `path`.
pub fn read_doc<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing {}", path.display()))
}

/// Writes a JSON document to `path`, pretty-printed with a trailing newline.
pub fn write_doc<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, doc)?;
    writeln!(w)?;
    Ok(())
}

/// Reads a JSONL dataset manifest: one record per non-empty line.
pub fn read_manifest(path: &Path) -> Result<Vec<RawRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        records.push(record);
    }
    Ok(records)
}

/// Writes a JSONL dataset manifest.
pub fn write_manifest(path: &Path, records: &[RawRecord]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut w, record)?;
        writeln!(w)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Profile documents
// ---------------------------------------------------------------------------

/// One interpolation axis: a name for humans, knots and an out-of-hull mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisDoc {
    pub name: String,
    pub knots: Vec<f64>,
    pub mode: AxisModeDoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisModeDoc {
    Clamp,
    Extend,
}

impl From<AxisMode> for AxisModeDoc {
    fn from(m: AxisMode) -> Self {
        match m {
            AxisMode::Clamp => AxisModeDoc::Clamp,
            AxisMode::Extend => AxisModeDoc::Extend,
        }
    }
}

impl From<AxisModeDoc> for AxisMode {
    fn from(m: AxisModeDoc) -> Self {
        match m {
            AxisModeDoc::Clamp => AxisMode::Clamp,
            AxisModeDoc::Extend => AxisMode::Extend,
        }
    }
}

/// A serialized interpolation grid: axes plus row-major values (the last
/// axis varies fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDoc {
    pub axes: Vec<AxisDoc>,
    pub values: Vec<f64>,
}

impl GridDoc {
    pub fn from_grid(grid: &InterpGrid, axis_names: &[&str]) -> Self {
        let axes = grid
            .axes()
            .iter()
            .zip(grid.modes())
            .zip(axis_names)
            .map(|((knots, &mode), &name)| AxisDoc {
                name: name.to_string(),
                knots: knots.clone(),
                mode: mode.into(),
            })
            .collect();
        GridDoc { axes, values: grid.values().to_vec() }
    }

    pub fn to_grid(&self) -> Result<InterpGrid> {
        let axes: Vec<Vec<f64>> = self.axes.iter().map(|a| a.knots.clone()).collect();
        let modes: Vec<AxisMode> = self.axes.iter().map(|a| a.mode.into()).collect();
        InterpGrid::with_modes(axes, modes, self.values.clone())
            .map_err(|e| anyhow::anyhow!("grid is malformed: {e}"))
    }
}

/// A performance profile document: the model it was measured for, the node
/// width its tp axes cover, and the seven grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileDoc {
    pub model: ModelSpec,
    pub gpus_per_node: u32,
    pub e_thr: GridDoc,
    pub l_attn_thr: GridDoc,
    pub l_lin_thr: GridDoc,
    pub e_model_state: GridDoc,
    pub l_model_state: GridDoc,
    pub e_act_state: GridDoc,
    pub l_act_state: GridDoc,
}

const THR_AXES: [&str; 2] = ["shape", "tp"];
const MODEL_AXES: [&str; 2] = ["layers", "tp"];
const ACT_AXES: [&str; 3] = ["layers", "tp", "shape"];

impl ProfileDoc {
    pub fn from_profile(profile: &PerfProfile, model: ModelSpec, gpus_per_node: u32) -> Self {
        ProfileDoc {
            model,
            gpus_per_node,
            e_thr: GridDoc::from_grid(&profile.e_thr, &THR_AXES),
            l_attn_thr: GridDoc::from_grid(&profile.l_attn_thr, &THR_AXES),
            l_lin_thr: GridDoc::from_grid(&profile.l_lin_thr, &THR_AXES),
            e_model_state: GridDoc::from_grid(&profile.e_model_state, &MODEL_AXES),
            l_model_state: GridDoc::from_grid(&profile.l_model_state, &MODEL_AXES),
            e_act_state: GridDoc::from_grid(&profile.e_act_state, &ACT_AXES),
            l_act_state: GridDoc::from_grid(&profile.l_act_state, &ACT_AXES),
        }
    }

    pub fn to_profile(&self) -> Result<PerfProfile> {
        let profile = PerfProfile {
            e_thr: self.e_thr.to_grid().context("e_thr")?,
            l_attn_thr: self.l_attn_thr.to_grid().context("l_attn_thr")?,
            l_lin_thr: self.l_lin_thr.to_grid().context("l_lin_thr")?,
            e_model_state: self.e_model_state.to_grid().context("e_model_state")?,
            l_model_state: self.l_model_state.to_grid().context("l_model_state")?,
            e_act_state: self.e_act_state.to_grid().context("e_act_state")?,
            l_act_state: self.l_act_state.to_grid().context("l_act_state")?,
        };
        profile
            .validate(self.gpus_per_node)
            .map_err(|e| anyhow::anyhow!("profile is invalid: {e}"))?;
        Ok(profile)
    }
}

// ---------------------------------------------------------------------------
// Measurement tables (fit mode)
// ---------------------------------------------------------------------------

/// What a throughput measurement counts: one GPU's rate or the whole tensor
/// group's. Per-GPU rates are multiplied by the tp coordinate at load time;
/// memory grids are always per-GPU and never converted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThroughputSemantics {
    PerGpu,
    PerGroup,
}

/// One measured grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasRow {
    /// One coordinate per axis, in axis order.
    pub coords: Vec<f64>,
    pub value: f64,
}

/// Raw measurements for one grid: axis declarations plus unordered rows
/// that must cover the full knot product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasGrid {
    pub axes: Vec<AxisDoc>,
    pub rows: Vec<MeasRow>,
}

/// A raw measurement table to fit a profile from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementsDoc {
    pub model: ModelSpec,
    pub gpus_per_node: u32,
    pub throughput_semantics: ThroughputSemantics,
    pub e_thr: MeasGrid,
    pub l_attn_thr: MeasGrid,
    pub l_lin_thr: MeasGrid,
    pub e_model_state: MeasGrid,
    pub l_model_state: MeasGrid,
    pub e_act_state: MeasGrid,
    pub l_act_state: MeasGrid,
}

/// Assembles one grid from measurement rows: the declared knots define the
/// lattice, every lattice point must be measured exactly once, and per-GPU
/// throughput converts to per-group by multiplying with the tp coordinate.
fn fit_grid(name: &str, meas: &MeasGrid, scale_by_tp_axis: Option<usize>) -> Result<GridDoc> {
    let dims = meas.axes.len();
    let shape: Vec<usize> = meas.axes.iter().map(|a| a.knots.len()).collect();
    let total: usize = shape.iter().product();
    if dims == 0 || total == 0 {
        bail!("{name}: measurement table declares an empty lattice");
    }
    let mut values = vec![f64::NAN; total];
    for row in &meas.rows {
        if row.coords.len() != dims {
            bail!("{name}: row {:?} has {} coordinates, expected {dims}", row.coords, row.coords.len());
        }
        let mut flat = 0usize;
        for (d, (&c, axis)) in row.coords.iter().zip(&meas.axes).enumerate() {
            let Some(pos) = axis.knots.iter().position(|&k| k == c) else {
                bail!("{name}: coordinate {c} on axis '{}' is not a declared knot", axis.name);
            };
            flat = flat * shape[d] + pos;
        }
        if !values[flat].is_nan() {
            bail!("{name}: duplicate measurement at {:?}", row.coords);
        }
        let scale = match scale_by_tp_axis {
            Some(tp_axis) => row.coords[tp_axis],
            None => 1.0,
        };
        values[flat] = row.value * scale;
    }
    if let Some(flat) = values.iter().position(|v| v.is_nan()) {
        // Unflatten to name the missing lattice point.
        let mut rem = flat;
        let mut coords = vec![0.0; dims];
        for d in (0..dims).rev() {
            coords[d] = meas.axes[d].knots[rem % shape[d]];
            rem /= shape[d];
        }
        bail!("{name}: missing measurement at {coords:?}");
    }
    Ok(GridDoc { axes: meas.axes.clone(), values })
}

/// Fits a complete profile document from a measurement table.
pub fn fit_profile_doc(meas: &MeasurementsDoc) -> Result<ProfileDoc> {
    let thr_scale = match meas.throughput_semantics {
        ThroughputSemantics::PerGpu => Some(1usize),
        ThroughputSemantics::PerGroup => None,
    };
    let doc = ProfileDoc {
        model: meas.model,
        gpus_per_node: meas.gpus_per_node,
        e_thr: fit_grid("e_thr", &meas.e_thr, thr_scale)?,
        l_attn_thr: fit_grid("l_attn_thr", &meas.l_attn_thr, thr_scale)?,
        l_lin_thr: fit_grid("l_lin_thr", &meas.l_lin_thr, thr_scale)?,
        e_model_state: fit_grid("e_model_state", &meas.e_model_state, None)?,
        l_model_state: fit_grid("l_model_state", &meas.l_model_state, None)?,
        e_act_state: fit_grid("e_act_state", &meas.e_act_state, None)?,
        l_act_state: fit_grid("l_act_state", &meas.l_act_state, None)?,
    };
    doc.to_profile()?;
    Ok(doc)
}

// ---------------------------------------------------------------------------
// Distribution documents
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCount {
    pub bucket: u64,
    pub count: u64,
}

/// Shape statistics document: histograms, means and the retained sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionDoc {
    pub bucketing: Bucketing,
    pub seed: u64,
    pub mean_enc_batch: f64,
    pub mean_llm_seq: f64,
    pub enc_batch_hist: Vec<BucketCount>,
    pub llm_seq_hist: Vec<BucketCount>,
    pub sample: Vec<DataItem>,
}

fn hist_to_doc(hist: &BTreeMap<u64, u64>) -> Vec<BucketCount> {
    hist.iter().map(|(&bucket, &count)| BucketCount { bucket, count }).collect()
}

impl DistributionDoc {
    pub fn from_distribution(dist: &ShapeDistribution, bucketing: Bucketing, seed: u64) -> Self {
        DistributionDoc {
            bucketing,
            seed,
            mean_enc_batch: dist.mean_enc_batch,
            mean_llm_seq: dist.mean_llm_seq,
            enc_batch_hist: hist_to_doc(&dist.enc_batch_hist),
            llm_seq_hist: hist_to_doc(&dist.llm_seq_hist),
            sample: dist.sample.clone(),
        }
    }

    pub fn to_distribution(&self) -> ShapeDistribution {
        ShapeDistribution {
            enc_batch_hist: self.enc_batch_hist.iter().map(|b| (b.bucket, b.count)).collect(),
            llm_seq_hist: self.llm_seq_hist.iter().map(|b| (b.bucket, b.count)).collect(),
            sample: self.sample.clone(),
            mean_enc_batch: self.mean_enc_batch,
            mean_llm_seq: self.mean_llm_seq,
        }
    }
}

// ---------------------------------------------------------------------------
// Plan / schedule / trace documents
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterDoc {
    pub n_gpus: u32,
    pub gpus_per_node: u32,
    pub mem_per_gpu: f64,
}

/// Output of the plan search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDoc {
    pub cluster: ClusterDoc,
    pub gbs: u64,
    pub objective_mode: String,
    pub mem_guard: String,
    pub selected: PlanEvaluation,
    /// Every feasible instance ranked by the selection order (verbose runs
    /// only); the head equals `selected`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranked: Option<Vec<PlanEvaluation>>,
}

/// One scheduled global batch: bucket membership by item id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchScheduleDoc {
    pub index: usize,
    /// Item ids per bucket; buckets partition the batch.
    pub buckets: Vec<Vec<String>>,
    pub c_max: f64,
    pub solver: String,
    pub optimality: String,
}

/// Output of the scheduler over all global batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDoc {
    pub plan: ParallelPlan,
    pub gbs: u64,
    pub batches: Vec<BatchScheduleDoc>,
}

impl BatchScheduleDoc {
    pub fn from_assignment(index: usize, assignment: &Assignment, items: &[DataItem]) -> Self {
        BatchScheduleDoc {
            index,
            buckets: assignment
                .buckets
                .iter()
                .map(|b| b.iter().map(|&i| items[i].id.clone()).collect())
                .collect(),
            c_max: assignment.c_max,
            solver: format!("{:?}", assignment.solver).to_lowercase(),
            optimality: format!("{:?}", assignment.optimality).to_lowercase(),
        }
    }
}

/// Idle/makespan digest of one simulated batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTraceDoc {
    pub index: usize,
    pub scheduled: SimTrace,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<SimTrace>,
}

/// Aggregate comparison across every simulated batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummaryDoc {
    pub scheduled_makespan_total: f64,
    pub scheduled_idle_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_makespan_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_idle_fraction: Option<f64>,
    /// scheduled idle time divided by baseline idle time, when both ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idle_ratio: Option<f64>,
}

/// Output of the simulator: per-batch traces plus the aggregate summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDoc {
    pub plan: ParallelPlan,
    pub backward_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_seed: Option<u64>,
    pub batches: Vec<BatchTraceDoc>,
    pub summary: TraceSummaryDoc,
}
