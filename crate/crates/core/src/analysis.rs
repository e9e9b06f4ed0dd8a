//! Target selection, iterations-to-target, speedup ratios, heatmaps and
//! robustness distributions over a finished [`RunSet`].
//!
//! Everything here is a pure function of the records, so reports do not depend
//! on run order or on how many threads produced them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::optim::{Method, RunRecord};
use crate::search::{make_grid, RunSet};

/// Stage endpoints are the first and last recorded samples inside the stage,
/// never across the decay.
pub const BOUNDARY_RULE: &str = "first and last recorded sample inside each stage";
pub const INTERPOLATION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    TrainLoss,
    TestAccuracy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::TrainLoss => "train_loss",
            Metric::TestAccuracy => "test_accuracy",
        }
    }

    pub fn parse(s: &str) -> Result<Metric> {
        match s {
            "train_loss" | "loss" => Ok(Metric::TrainLoss),
            "test_accuracy" | "accuracy" => Ok(Metric::TestAccuracy),
            other => Err(Error::param("metric", format!("unknown metric {other:?}"))),
        }
    }

    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Metric::TrainLoss => a < b,
            Metric::TestAccuracy => a > b,
        }
    }

    fn worst(self) -> f64 {
        match self {
            Metric::TrainLoss => f64::INFINITY,
            Metric::TestAccuracy => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub metric: Metric,
    pub value: f64,
    pub stage_index: usize,
    pub provenance: String,
}

impl Target {
    pub fn new(metric: Metric, value: f64, stage_index: usize) -> Result<Self> {
        let ok = match metric {
            Metric::TrainLoss => value >= 0.0 && value.is_finite(),
            Metric::TestAccuracy => (0.0..=1.0).contains(&value),
        };
        if !ok {
            return Err(Error::param("target", format!("{value} out of range for {}", metric.name())));
        }
        Ok(Self {
            metric,
            value,
            stage_index,
            provenance: String::new(),
        })
    }

    fn reached(&self, v: f64) -> bool {
        match self.metric {
            Metric::TrainLoss => v <= self.value,
            Metric::TestAccuracy => v >= self.value,
        }
    }
}

/// `v_start + 0.8 · (v_end − v_start)`.
pub fn interpolate_target(v_start: f64, v_end: f64) -> f64 {
    v_start + INTERPOLATION * (v_end - v_start)
}

/// Metric samples of `rec` as `(iteration, value)`, in recording order.
fn series(rec: &RunRecord, metric: Metric) -> Vec<(usize, f64)> {
    match metric {
        Metric::TrainLoss => rec
            .train_loss
            .iter()
            .enumerate()
            .map(|(k, &v)| (rec.loss_iteration(k), v))
            .collect(),
        Metric::TestAccuracy => rec
            .test_accuracy
            .iter()
            .enumerate()
            .map(|(e, &v)| (rec.epoch_end_iteration(e), v))
            .collect(),
    }
}

/// First iteration at which the metric satisfies the target.
///
/// Records stop at divergence, so a run that diverged before crossing is
/// unreached.
pub fn iterations_to_target(rec: &RunRecord, target: &Target) -> Option<usize> {
    series(rec, target.metric)
        .into_iter()
        .find(|&(_, v)| target.reached(v))
        .map(|(it, _)| it)
}

/// `k_c(m)`: the minimum over every record of `method` at `batch_size`.
pub fn min_iterations(runset: &RunSet, method: Method, batch_size: usize, target: &Target) -> Option<usize> {
    runset
        .records
        .iter()
        .filter(|r| r.method() == method && r.config.batch_size == batch_size)
        .filter_map(|r| iterations_to_target(r, target))
        .min()
}

/// Mean recorded train loss over the last epoch; `+∞` for diverged runs.
fn final_train_loss(rec: &RunRecord) -> f64 {
    if rec.diverged() || rec.train_loss.is_empty() {
        return f64::INFINITY;
    }
    let start = rec.total_epochs.saturating_sub(1) * rec.iterations_per_epoch;
    let tail: Vec<f64> = series(rec, Metric::TrainLoss)
        .into_iter()
        .filter(|&(it, _)| it >= start)
        .map(|(_, v)| v)
        .collect();
    if tail.is_empty() {
        *rec.train_loss.last().expect("non-empty")
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// The run the targets are read from: the best run of the (method, batch
/// size) whose best final train loss is worst.
pub fn select_run(runset: &RunSet) -> Result<&RunRecord> {
    if runset.records.is_empty() {
        return Err(Error::Study("cannot select targets from an empty run set".into()));
    }
    let mut best: BTreeMap<(Method, usize), (&RunRecord, f64)> = BTreeMap::new();
    for rec in &runset.records {
        let f = final_train_loss(rec);
        if !f.is_finite() {
            continue;
        }
        let key = (rec.method(), rec.config.batch_size);
        match best.get(&key) {
            Some(&(_, b)) if b <= f => {}
            _ => {
                best.insert(key, (rec, f));
            }
        }
    }
    let mut worst: Option<(&RunRecord, f64)> = None;
    for &(rec, f) in best.values() {
        if worst.is_none_or(|(_, w)| f > w) {
            worst = Some((rec, f));
        }
    }
    worst
        .map(|(r, _)| r)
        .ok_or_else(|| Error::Study("every run diverged; no targets can be selected".into()))
}

/// One train-loss target and, for classification, one test-accuracy target
/// per learning-rate stage.
pub fn select_targets(runset: &RunSet) -> Result<Vec<Target>> {
    let rec = select_run(runset)?;
    let stages = rec.config.schedule.stages(rec.total_epochs);
    let ipe = rec.iterations_per_epoch;
    let mut out = Vec::new();
    for (si, stage) in stages.iter().enumerate() {
        for metric in [Metric::TrainLoss, Metric::TestAccuracy] {
            let pts: Vec<(usize, f64)> = match metric {
                Metric::TrainLoss => series(rec, metric)
                    .into_iter()
                    .filter(|&(it, _)| it >= stage.start * ipe && it < stage.end * ipe)
                    .collect(),
                Metric::TestAccuracy => series(rec, metric)
                    .into_iter()
                    .enumerate()
                    .filter(|&(e, _)| stage.contains(&e))
                    .map(|(_, p)| p)
                    .collect(),
            };
            let (Some(&(i0, v0)), Some(&(i1, v1))) = (pts.first(), pts.last()) else {
                continue;
            };
            let mut t = Target::new(metric, interpolate_target(v0, v1), si)?;
            t.provenance = format!(
                "{} batch {} run {}; epochs {}..{}; {} {v0} at iteration {i0} to {v1} at iteration {i1}",
                rec.method().name(),
                rec.config.batch_size,
                rec.config_hash,
                stage.start,
                stage.end,
                metric.name(),
            );
            out.push(t);
        }
    }
    Ok(out)
}

/// The easiest train-loss target: the highest value.
pub fn easiest_loss_target(targets: &[Target]) -> Option<&Target> {
    targets
        .iter()
        .filter(|t| t.metric == Metric::TrainLoss)
        .max_by(|a, b| a.value.total_cmp(&b.value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub method: Method,
    pub metric: Metric,
    pub stage_index: usize,
    pub target: f64,
    pub batch_size: usize,
    pub iterations: Option<usize>,
    pub speedup: Option<f64>,
    pub ideal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub reference_batch: usize,
    pub targets: Vec<Target>,
    pub rows: Vec<SpeedupRow>,
}

/// `s = k(m₀) / k(m)`; absent if either is unreached or `k(m) = 0`.
pub fn speedup_ratio(k_ref: Option<usize>, k: Option<usize>) -> Option<f64> {
    match (k_ref, k) {
        (Some(r), Some(k)) if k > 0 => Some(r as f64 / k as f64),
        _ => None,
    }
}

pub fn speedup_report(runset: &RunSet, targets: &[Target], m0: usize) -> Result<SpeedupReport> {
    let batches = runset.batch_sizes();
    if !batches.contains(&m0) {
        return Err(Error::param("reference_batch", format!("batch size {m0} not in the study")));
    }
    let mut rows = Vec::new();
    for t in targets {
        for method in runset.methods() {
            let k_ref = min_iterations(runset, method, m0, t);
            for &m in &batches {
                let k = min_iterations(runset, method, m, t);
                rows.push(SpeedupRow {
                    method,
                    metric: t.metric,
                    stage_index: t.stage_index,
                    target: t.value,
                    batch_size: m,
                    iterations: k,
                    speedup: speedup_ratio(k_ref, k),
                    ideal: m as f64 / m0 as f64,
                });
            }
        }
    }
    Ok(SpeedupReport {
        reference_batch: m0,
        targets: targets.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "value")]
pub enum Cell {
    Value(f64),
    Diverged,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub method: Method,
    pub batch_size: usize,
    pub metric: Metric,
    pub axis1_name: String,
    pub axis1: Vec<f64>,
    pub axis2_name: String,
    pub axis2: Vec<f64>,
    /// `cells[i][j]` for `axis1[i]`, `axis2[j]`.
    pub cells: Vec<Vec<Cell>>,
}

/// Best value over the whole series of one run.
pub fn best_value(rec: &RunRecord, metric: Metric) -> Option<f64> {
    best_until(rec, metric, usize::MAX)
}

/// Best value among samples taken at iteration `< limit` (loss) or at
/// epoch ends `≤ limit` (accuracy).
fn best_until(rec: &RunRecord, metric: Metric, limit: usize) -> Option<f64> {
    series(rec, metric)
        .into_iter()
        .filter(|&(it, _)| match metric {
            Metric::TrainLoss => it < limit,
            Metric::TestAccuracy => it <= limit,
        })
        .map(|(_, v)| v)
        .reduce(|a, b| if metric.better(b, a) { b } else { a })
}

/// One table per method for `batch_size`. Replicas of a config collapse to
/// the best non-diverged value.
pub fn heatmap(runset: &RunSet, batch_size: usize, metric: Metric) -> Result<Vec<Heatmap>> {
    if !runset.batch_sizes().contains(&batch_size) {
        return Err(Error::param("batch_size", format!("{batch_size} not in the study")));
    }
    let mut out = Vec::new();
    for grid in &runset.manifest.grids {
        let configs = make_grid(grid)?;
        let axis1 = grid.axis1.values()?;
        let axis2 = grid.axis2_values()?;
        let axis2_name = match &grid.axis2 {
            Some(a) => a.name.as_str().to_string(),
            None => "momentum".to_string(),
        };
        let mut cells = vec![vec![Cell::Missing; axis2.len()]; axis1.len()];
        for (idx, cfg) in configs.iter().enumerate() {
            let cell = &mut cells[idx / axis2.len()][idx % axis2.len()];
            for rec in runset
                .records
                .iter()
                .filter(|r| r.config.optimizer == *cfg && r.config.batch_size == batch_size)
            {
                let v = if rec.diverged() { None } else { best_value(rec, metric) };
                *cell = match (*cell, v) {
                    (Cell::Value(a), Some(b)) if !metric.better(b, a) => Cell::Value(a),
                    (_, Some(b)) => Cell::Value(b),
                    (Cell::Value(a), None) => Cell::Value(a),
                    (_, None) => Cell::Diverged,
                };
            }
        }
        out.push(Heatmap {
            method: grid.optimizer,
            batch_size,
            metric,
            axis1_name: grid.axis1.name.as_str().to_string(),
            axis1,
            axis2_name,
            axis2,
            cells,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Epochs,
    Iterations,
}

impl Basis {
    pub fn name(self) -> &'static str {
        match self {
            Basis::Epochs => "epochs",
            Basis::Iterations => "iterations",
        }
    }

    pub fn parse(s: &str) -> Result<Basis> {
        match s {
            "epochs" => Ok(Basis::Epochs),
            "iterations" => Ok(Basis::Iterations),
            other => Err(Error::param("basis", format!("unknown basis {other:?}"))),
        }
    }
}

/// Five-number summary; non-finite entries serialize as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub count: usize,
}

/// Quantile `p` as the midpoint of the two order statistics around
/// `p · (n − 1)`.
fn midpoint_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    if sorted[lo] == sorted[hi] {
        sorted[lo]
    } else {
        (sorted[lo] + sorted[hi]) / 2.0
    }
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Quantiles> {
        if values.is_empty() || values.iter().any(|v| v.is_nan()) {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quantiles {
            min: v[0],
            q1: midpoint_quantile(&v, 0.25),
            median: midpoint_quantile(&v, 0.5),
            q3: midpoint_quantile(&v, 0.75),
            max: v[v.len() - 1],
            count: v.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub method: Method,
    pub batch_size: usize,
    pub metric: Metric,
    pub checkpoint: usize,
    pub summary: Quantiles,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSummary {
    pub basis: Basis,
    pub metric: Metric,
    pub checkpoints: Vec<usize>,
    pub rows: Vec<RobustnessRow>,
}

/// Best metric of `rec` within the first `checkpoint` epochs or iterations.
/// Diverged runs, and runs with no sample by then, take the worst value.
pub fn best_at_checkpoint(rec: &RunRecord, metric: Metric, basis: Basis, checkpoint: usize) -> f64 {
    if rec.diverged() {
        return metric.worst();
    }
    let limit = match basis {
        Basis::Epochs => checkpoint.saturating_mul(rec.iterations_per_epoch),
        Basis::Iterations => checkpoint,
    };
    best_until(rec, metric, limit).unwrap_or(metric.worst())
}

/// Distribution over every config of a (method, batch size) of the best value
/// reached by each checkpoint. Checkpoints past a run's end clamp to its final
/// best value.
pub fn robustness(runset: &RunSet, checkpoints: &[usize], basis: Basis, metric: Metric) -> Result<RobustnessSummary> {
    if checkpoints.is_empty() || checkpoints.contains(&0) {
        return Err(Error::param("checkpoints", "need at least one positive checkpoint"));
    }
    let mut rows = Vec::new();
    for method in runset.methods() {
        for batch in runset.batch_sizes() {
            let recs: Vec<&RunRecord> = runset
                .records
                .iter()
                .filter(|r| r.method() == method && r.config.batch_size == batch)
                .collect();
            let diverged = recs.iter().filter(|r| r.diverged()).count();
            for &c in checkpoints {
                let vals: Vec<f64> = recs.iter().map(|r| best_at_checkpoint(r, metric, basis, c)).collect();
                if let Some(summary) = Quantiles::of(&vals) {
                    rows.push(RobustnessRow {
                        method,
                        batch_size: batch,
                        metric,
                        checkpoint: c,
                        summary,
                        diverged,
                    });
                }
            }
        }
    }
    Ok(RobustnessSummary {
        basis,
        metric,
        checkpoints: checkpoints.to_vec(),
        rows,
    })
}

/// Test accuracy for classification studies, train loss otherwise.
pub fn default_metric(runset: &RunSet) -> Metric {
    if runset.records.iter().any(|r| !r.test_accuracy.is_empty()) {
        Metric::TestAccuracy
    } else {
        Metric::TrainLoss
    }
}

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct TargetsFile<'a> {
    boundary_rule: &'a str,
    interpolation: f64,
    targets: &'a [Target],
}

pub fn write_targets(dir: &Path, targets: &[Target]) -> Result<()> {
    fsutil::write_json(
        &dir.join("targets.json"),
        &TargetsFile {
            boundary_rule: BOUNDARY_RULE,
            interpolation: INTERPOLATION,
            targets,
        },
    )
}

fn write_csv_atomic(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    fsutil::write_atomic(path, &bytes)
}

/// `speedup_<metric>_<stage>.csv` per target, plus `speedup.json`.
pub fn write_speedup(dir: &Path, report: &SpeedupReport) -> Result<Vec<std::path::PathBuf>> {
    let mut paths = Vec::new();
    for t in &report.targets {
        let path = dir.join(format!("speedup_{}_{}.csv", t.metric.name(), t.stage_index));
        let rows = report
            .rows
            .iter()
            .filter(|r| r.metric == t.metric && r.stage_index == t.stage_index)
            .map(|r| {
                vec![
                    r.method.name().to_string(),
                    r.batch_size.to_string(),
                    fmt_f(r.target),
                    fmt_opt(r.iterations),
                    fmt_opt(r.speedup),
                    fmt_f(r.ideal),
                ]
            })
            .collect();
        write_csv_atomic(
            &path,
            &["method", "batch_size", "target", "iterations", "speedup", "ideal"],
            rows,
        )?;
        paths.push(path);
    }
    fsutil::write_json(&dir.join("speedup.json"), report)?;
    Ok(paths)
}

/// `heatmap_b<batch>.csv`, one row per cell of every method's table.
pub fn write_heatmap(dir: &Path, maps: &[Heatmap]) -> Result<std::path::PathBuf> {
    let batch = maps.first().map(|m| m.batch_size).unwrap_or(0);
    let path = dir.join(format!("heatmap_b{batch}.csv"));
    let mut rows = Vec::new();
    for m in maps {
        for (i, row) in m.cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                let (value, state) = match cell {
                    Cell::Value(v) => (fmt_f(*v), "ok"),
                    Cell::Diverged => (String::new(), "diverged"),
                    Cell::Missing => (String::new(), "missing"),
                };
                rows.push(vec![
                    m.method.name().to_string(),
                    m.batch_size.to_string(),
                    m.metric.name().to_string(),
                    m.axis1_name.clone(),
                    fmt_f(m.axis1[i]),
                    m.axis2_name.clone(),
                    fmt_f(m.axis2[j]),
                    value,
                    state.to_string(),
                ]);
            }
        }
    }
    write_csv_atomic(
        &path,
        &["method", "batch_size", "metric", "axis1", "axis1_value", "axis2", "axis2_value", "best", "state"],
        rows,
    )?;
    fsutil::write_json(&dir.join(format!("heatmap_b{batch}.json")), &maps)?;
    Ok(path)
}

/// `robustness_<basis>.csv` plus its JSON twin.
pub fn write_robustness(dir: &Path, summary: &RobustnessSummary) -> Result<std::path::PathBuf> {
    let path = dir.join(format!("robustness_{}.csv", summary.basis.name()));
    let rows = summary
        .rows
        .iter()
        .map(|r| {
            let q = &r.summary;
            vec![
                r.method.name().to_string(),
                r.batch_size.to_string(),
                r.metric.name().to_string(),
                summary.basis.name().to_string(),
                r.checkpoint.to_string(),
                fmt_f(q.min),
                fmt_f(q.q1),
                fmt_f(q.median),
                fmt_f(q.q3),
                fmt_f(q.max),
                q.count.to_string(),
                r.diverged.to_string(),
            ]
        })
        .collect();
    write_csv_atomic(
        &path,
        &[
            "method", "batch_size", "metric", "basis", "checkpoint", "min", "q1", "median", "q3", "max", "count",
            "diverged",
        ],
        rows,
    )?;
    fsutil::write_json(&dir.join(format!("robustness_{}.json", summary.basis.name())), summary)?;
    Ok(path)
}
