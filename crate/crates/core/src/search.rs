//! Log-space hyperparameter grids and the study runner.
//!
//! A study is a manifest (dataset, network, grids, batch sizes, budget,
//! schedule, seed) expanded into one [`RunRecord`] per configuration and batch
//! size. On disk a study is `manifest.json` plus `runs/<config-hash>.json`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{Budget, LrSchedule};
use crate::data::{gen_blobs, gen_linreg, Dataset, Task};
use crate::error::{Error, Result};
use crate::fisher::DampingKind;
use crate::fsutil;
use crate::model::{Activation, FisherMode, LossKind, Network};
pub use crate::optim::{Method, RunConfig, RunRecord, RunStatus};
use crate::optim::{
    train_run, KfacConfig, OptimizerConfig, SgdConfig, DEFAULT_CLIP_KAPPA, DEFAULT_STAT_DECAY,
    DEFAULT_WEIGHT_DECAY,
};
use crate::rng;

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisName {
    Lr,
    Damping,
    Momentum,
}

impl AxisName {
    pub fn as_str(self) -> &'static str {
        match self {
            AxisName::Lr => "lr",
            AxisName::Damping => "damping",
            AxisName::Momentum => "momentum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: AxisName,
    pub low: f64,
    pub high: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(name: AxisName, low: f64, high: f64, points: usize) -> Self {
        Self { name, low, high, points }
    }

    fn validate(&self) -> Result<()> {
        let field = format!("{} axis", self.name.as_str());
        if self.points < 2 {
            return Err(Error::param(field, "needs at least 2 points"));
        }
        if !(self.low > 0.0 && self.low < self.high && self.high.is_finite()) {
            return Err(Error::param(field, format!("need 0 < low < high, got {} and {}", self.low, self.high)));
        }
        if self.name == AxisName::Momentum && self.high >= 1.0 {
            return Err(Error::param(field, "momentum must stay below 1"));
        }
        Ok(())
    }

    /// Strictly increasing values that hit both endpoints exactly.
    ///
    /// Geometric in the value itself, except for momentum, which is geometric
    /// in `1 − momentum`.
    pub fn values(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let last = self.points - 1;
        let frac = |j: usize| j as f64 / last as f64;
        Ok((0..self.points)
            .map(|j| {
                if j == 0 {
                    self.low
                } else if j == last {
                    self.high
                } else if self.name == AxisName::Momentum {
                    let (u0, u1) = (1.0 - self.low, 1.0 - self.high);
                    1.0 - u0 * (u1 / u0).powf(frac(j))
                } else {
                    self.low * (self.high / self.low).powf(frac(j))
                }
            })
            .collect())
    }
}

/// Settings shared by every configuration of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedParams {
    pub weight_decay: f64,
    pub stat_decay: f64,
    pub clip_kappa: Option<f64>,
    pub scheme: DampingKind,
    pub fisher_mode: FisherMode,
    pub t_inv: usize,
    /// SGD momentum when the second axis is not momentum.
    pub momentum: f64,
}

impl Default for FixedParams {
    fn default() -> Self {
        Self {
            weight_decay: DEFAULT_WEIGHT_DECAY,
            stat_decay: DEFAULT_STAT_DECAY,
            clip_kappa: Some(DEFAULT_CLIP_KAPPA),
            scheme: DampingKind::Normal,
            fisher_mode: FisherMode::Sampled,
            t_inv: 1,
            momentum: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub optimizer: Method,
    pub axis1: Axis,
    /// `None` grids over the first axis only.
    pub axis2: Option<Axis>,
    #[serde(default)]
    pub spacing: Spacing,
    #[serde(default)]
    pub fixed: FixedParams,
}

impl GridSpec {
    /// The K-FAC CIFAR-10 grid: lr 1e-3 … 2.187, damping 1e-4 … 0.2187.
    pub fn kfac_cifar() -> Self {
        Self {
            optimizer: Method::Kfac,
            axis1: Axis::new(AxisName::Lr, 1e-3, 2.187, 8),
            axis2: Some(Axis::new(AxisName::Damping, 1e-4, 0.2187, 8)),
            spacing: Spacing::Geometric,
            fixed: FixedParams::default(),
        }
    }

    /// The SGD CIFAR-10 grid: lr 0.05 … 9.62, momentum 0.9 … 0.999.
    pub fn sgd_cifar() -> Self {
        Self {
            optimizer: Method::Sgd,
            axis1: Axis::new(AxisName::Lr, 0.05, 9.62, 8),
            axis2: Some(Axis::new(AxisName::Momentum, 0.9, 0.999, 8)),
            spacing: Spacing::Geometric,
            fixed: FixedParams::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.axis1.name != AxisName::Lr {
            return Err(Error::param("axis1", "first axis must be the learning rate"));
        }
        if let Some(a2) = &self.axis2 {
            let expected = match self.optimizer {
                Method::Kfac => AxisName::Damping,
                Method::Sgd => AxisName::Momentum,
            };
            if a2.name != expected {
                return Err(Error::param(
                    "axis2",
                    format!("{} grids use {} as the second axis", self.optimizer.name(), expected.as_str()),
                ));
            }
        }
        Ok(())
    }

    /// Values of the second axis, or the single fixed value when absent.
    pub fn axis2_values(&self) -> Result<Vec<f64>> {
        match &self.axis2 {
            Some(a) => a.values(),
            None if self.optimizer == Method::Sgd => Ok(vec![self.fixed.momentum]),
            None => Err(Error::param("axis2", "K-FAC grids need a damping axis")),
        }
    }
}

/// Full Cartesian product, first axis outermost.
pub fn make_grid(spec: &GridSpec) -> Result<Vec<OptimizerConfig>> {
    spec.validate()?;
    let lrs = spec.axis1.values()?;
    let second = spec.axis2_values()?;
    let f = spec.fixed;
    let mut out = Vec::with_capacity(lrs.len() * second.len());
    for &lr in &lrs {
        for &v in &second {
            let cfg = match spec.optimizer {
                Method::Sgd => OptimizerConfig::Sgd(SgdConfig {
                    lr,
                    momentum: v,
                    weight_decay: f.weight_decay,
                }),
                Method::Kfac => OptimizerConfig::Kfac(KfacConfig {
                    lr,
                    damping: v,
                    decay: f.stat_decay,
                    clip_kappa: f.clip_kappa,
                    scheme: f.scheme,
                    fisher_mode: f.fisher_mode,
                    t_inv: f.t_inv,
                    weight_decay: f.weight_decay,
                }),
            };
            cfg.validate()?;
            out.push(cfg);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs { seed: u64, n: usize, d: usize, k: usize, spread: f64 },
    Linreg { seed: u64, n: usize, d: usize, noise_sd: f64 },
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<Dataset> {
        match *self {
            DatasetSpec::Blobs { seed, n, d, k, spread } => gen_blobs(seed, n, d, k, spread),
            DatasetSpec::Linreg { seed, n, d, noise_sd } => Ok(gen_linreg(seed, n, d, noise_sd)?.dataset),
        }
    }

    fn seed(&self) -> u64 {
        match *self {
            DatasetSpec::Blobs { seed, .. } | DatasetSpec::Linreg { seed, .. } => seed,
        }
    }

    /// `(train, test)` via the deterministic 80/20 split.
    pub fn materialize(&self) -> Result<(Dataset, Dataset)> {
        Ok(self.generate()?.split(rng::derive_seed(self.seed(), "split")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl NetworkSpec {
    /// Network for `ds`: loss from the task, output width from the targets.
    pub fn build(&self, ds: &Dataset, seed: u64) -> Result<Network> {
        let mut dims = vec![ds.n_features()];
        dims.extend(&self.hidden);
        dims.push(ds.n_outputs());
        let loss = match ds.task() {
            Task::Classification => LossKind::SoftmaxCrossEntropy,
            Task::Regression => LossKind::Mse,
        };
        Network::init(&dims, self.activation, loss, seed)
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyManifest {
    pub schema: u32,
    pub study_id: String,
    pub dataset: DatasetSpec,
    pub network: NetworkSpec,
    pub grids: Vec<GridSpec>,
    pub batch_sizes: Vec<usize>,
    pub budget: Budget,
    pub schedule: LrSchedule,
    pub base_seed: u64,
    #[serde(default = "one")]
    pub replicas: usize,
    #[serde(default = "one")]
    pub record_every: usize,
}

impl StudyManifest {
    pub fn validate(&self) -> Result<()> {
        if self.schema != MANIFEST_SCHEMA {
            return Err(Error::param("schema", format!("unsupported schema {}", self.schema)));
        }
        if self.grids.is_empty() {
            return Err(Error::param("grids", "at least one grid required"));
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return Err(Error::param("batch_sizes", "need positive batch sizes"));
        }
        if self.replicas == 0 {
            return Err(Error::param("replicas", "must be at least 1"));
        }
        self.budget.validate()?;
        self.schedule.validate()?;
        for g in &self.grids {
            make_grid(g)?;
        }
        Ok(())
    }

    /// Seed of the shared initial network.
    pub fn init_seed(&self) -> u64 {
        rng::derive_seed(self.base_seed, "init")
    }

    pub fn hash(&self) -> String {
        rng::short_hash(&serde_json::to_vec(self).expect("manifest serializes"), 8)
    }

    /// Every run of the study, with hash-derived seeds, in canonical order.
    pub fn run_configs(&self) -> Result<Vec<RunConfig>> {
        self.validate()?;
        let mut out = Vec::new();
        for grid in &self.grids {
            for opt in make_grid(grid)? {
                for &batch_size in &self.batch_sizes {
                    for replica in 0..self.replicas {
                        let mut cfg = RunConfig {
                            optimizer: opt,
                            batch_size,
                            budget: self.budget,
                            schedule: self.schedule.clone(),
                            seed: 0,
                            record_every: self.record_every,
                            replica,
                        };
                        cfg.seed = rng::derive_seed(self.base_seed, &cfg.key_hash());
                        out.push(cfg);
                    }
                }
            }
        }
        out.sort_by_cached_key(RunConfig::key_hash);
        let hashes: BTreeSet<String> = out.iter().map(RunConfig::key_hash).collect();
        if hashes.len() != out.len() {
            return Err(Error::Study("duplicate run configurations in study".into()));
        }
        Ok(out)
    }
}

/// All records of one study, sorted by config hash.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSet {
    pub manifest: StudyManifest,
    pub records: Vec<RunRecord>,
}

impl RunSet {
    pub fn batch_sizes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.records.iter().map(|r| r.config.batch_size).collect();
        set.into_iter().collect()
    }

    pub fn methods(&self) -> Vec<Method> {
        let set: BTreeSet<Method> = self.records.iter().map(RunRecord::method).collect();
        set.into_iter().collect()
    }

    pub fn diverged_count(&self) -> usize {
        self.records.iter().filter(|r| r.diverged()).count()
    }

    /// Loads `manifest.json` and every run file. Missing runs are an error
    /// unless `allow_partial`.
    pub fn load(dir: &Path, allow_partial: bool) -> Result<RunSet> {
        let manifest: StudyManifest = fsutil::read_json(&dir.join("manifest.json"))
            .map_err(|e| Error::Study(format!("cannot read {}: {e}", dir.join("manifest.json").display())))?;
        let mut records = Vec::new();
        let mut missing = 0;
        for cfg in manifest.run_configs()? {
            match read_record(&run_path(dir, &cfg), &cfg) {
                Some(r) => records.push(r),
                None => missing += 1,
            }
        }
        if missing > 0 && !allow_partial {
            return Err(Error::Study(format!("{missing} runs missing from {}", dir.display())));
        }
        Ok(RunSet { manifest, records })
    }
}

pub fn run_path(dir: &Path, cfg: &RunConfig) -> PathBuf {
    dir.join("runs").join(format!("{}.json", cfg.key_hash()))
}

fn read_record(path: &Path, cfg: &RunConfig) -> Option<RunRecord> {
    let rec: RunRecord = fsutil::read_json(path).ok()?;
    (rec.config == *cfg).then_some(rec)
}

/// Runs every configuration of `manifest`.
///
/// With `dir`, the manifest is written first (or checked against the one
/// already there), finished runs are reused, and each new record is written as
/// soon as it completes. Results do not depend on `parallelism`.
pub fn run_grid(manifest: &StudyManifest, dir: Option<&Path>, parallelism: usize) -> Result<RunSet> {
    let configs = manifest.run_configs()?;
    if let Some(dir) = dir {
        let path = dir.join("manifest.json");
        if path.exists() {
            let existing: StudyManifest = fsutil::read_json(&path)?;
            if existing.hash() != manifest.hash() {
                return Err(Error::Study(format!(
                    "manifest in {} (hash {}) differs from the requested study (hash {})",
                    dir.display(),
                    existing.hash(),
                    manifest.hash()
                )));
            }
        } else {
            fsutil::write_json(&path, manifest)?;
        }
    }

    let (train, test) = manifest.dataset.materialize()?;
    let net0 = manifest.network.build(&train, manifest.init_seed())?;
    let execute = |cfg: &RunConfig| -> Result<RunRecord> {
        if let Some(dir) = dir {
            let path = run_path(dir, cfg);
            if let Some(rec) = read_record(&path, cfg) {
                return Ok(rec);
            }
            let rec = train_run(&net0, &train, &test, cfg)?;
            fsutil::write_json(&path, &rec)?;
            Ok(rec)
        } else {
            train_run(&net0, &train, &test, cfg)
        }
    };

    let records = if parallelism <= 1 {
        configs.iter().map(execute).collect::<Result<Vec<_>>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::Study(format!("thread pool: {e}")))?;
        pool.install(|| configs.par_iter().map(execute).collect::<Result<Vec<_>>>())?
    };
    Ok(RunSet {
        manifest: manifest.clone(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn kfac_lr_axis_has_ratio_three() {
        let v = Axis::new(AxisName::Lr, 1e-3, 2.187, 8).values().unwrap();
        let expected = [1e-3, 3e-3, 9e-3, 2.7e-2, 8.1e-2, 2.43e-1, 7.29e-1, 2.187];
        for (a, b) in v.iter().zip(expected) {
            assert!(rel(*a, b) < 1e-12, "{a} vs {b}");
        }
        for w in v.windows(2) {
            assert!(rel(w[1] / w[0], 3.0) < 1e-12);
        }
    }

    #[test]
    fn eight_by_eight_is_sixty_four() {
        assert_eq!(make_grid(&GridSpec::kfac_cifar()).unwrap().len(), 64);
        assert_eq!(make_grid(&GridSpec::sgd_cifar()).unwrap().len(), 64);
    }

    #[test]
    fn momentum_axis_is_geometric_in_one_minus_m() {
        let v = Axis::new(AxisName::Momentum, 0.9, 0.999, 8).values().unwrap();
        assert_eq!(v[0], 0.9);
        assert_eq!(v[7], 0.999);
        let u: Vec<f64> = v.iter().map(|m| 1.0 - m).collect();
        let ratio = (0.001f64 / 0.1).powf(1.0 / 7.0);
        for w in u.windows(2) {
            assert!(rel(w[1] / w[0], ratio) < 1e-9);
        }
        assert!(v.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sgd_endpoints_are_exact() {
        let v = Axis::new(AxisName::Lr, 0.05, 9.62, 8).values().unwrap();
        assert_eq!((v[0], v[7]), (0.05, 9.62));
    }

    #[test]
    fn invalid_axes_are_rejected() {
        assert!(Axis::new(AxisName::Lr, 1.0, 0.1, 4).values().is_err());
        assert!(Axis::new(AxisName::Lr, 0.0, 0.1, 4).values().is_err());
        assert!(Axis::new(AxisName::Lr, 0.1, 1.0, 1).values().is_err());
        assert!(Axis::new(AxisName::Momentum, 0.9, 1.0, 4).values().is_err());
        let mut g = GridSpec::kfac_cifar();
        g.axis2 = Some(Axis::new(AxisName::Momentum, 0.9, 0.99, 2));
        assert!(make_grid(&g).is_err());
    }

    pub(crate) fn tiny_manifest() -> StudyManifest {
        StudyManifest {
            schema: MANIFEST_SCHEMA,
            study_id: "tiny".into(),
            dataset: DatasetSpec::Blobs { seed: 3, n: 160, d: 3, k: 3, spread: 0.3 },
            network: NetworkSpec { hidden: vec![6], activation: Activation::Relu },
            grids: vec![
                GridSpec {
                    optimizer: Method::Sgd,
                    axis1: Axis::new(AxisName::Lr, 0.05, 0.5, 2),
                    axis2: Some(Axis::new(AxisName::Momentum, 0.5, 0.9, 2)),
                    spacing: Spacing::Geometric,
                    fixed: FixedParams::default(),
                },
            ],
            batch_sizes: vec![8, 16],
            budget: Budget::adjusted(2, 8),
            schedule: LrSchedule::scaled(&[0.5], 10.0),
            base_seed: 17,
            replicas: 1,
            record_every: 1,
        }
    }

    #[test]
    fn run_matrix_counts_and_uniqueness() {
        let m = tiny_manifest();
        let cfgs = m.run_configs().unwrap();
        assert_eq!(cfgs.len(), 8);
        let set = run_grid(&m, None, 1).unwrap();
        assert_eq!(set.records.len(), 8);
        let hashes: BTreeSet<_> = set.records.iter().map(|r| r.config_hash.clone()).collect();
        assert_eq!(hashes.len(), 8);
    }

    #[test]
    fn seeds_are_stable_under_grid_growth() {
        let small = tiny_manifest();
        let mut big = tiny_manifest();
        big.batch_sizes.push(32);
        let seeds_small: Vec<_> = small.run_configs().unwrap().into_iter().map(|c| (c.key_hash(), c.seed)).collect();
        let big_cfgs = big.run_configs().unwrap();
        for (h, s) in seeds_small {
            let c = big_cfgs.iter().find(|c| c.key_hash() == h).unwrap();
            assert_eq!(c.seed, s);
        }
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let m = tiny_manifest();
        let a = run_grid(&m, None, 1).unwrap();
        let b = run_grid(&m, None, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resume_skips_finished_runs_and_matches_fresh() {
        let m = tiny_manifest();
        let dir = tempfile::tempdir().unwrap();
        let fresh = run_grid(&m, Some(dir.path()), 1).unwrap();

        let partial_dir = tempfile::tempdir().unwrap();
        run_grid(&m, Some(partial_dir.path()), 1).unwrap();
        // simulate an interruption: drop half the run files, mark one survivor
        let cfgs = m.run_configs().unwrap();
        for cfg in cfgs.iter().take(4) {
            std::fs::remove_file(run_path(partial_dir.path(), cfg)).unwrap();
        }
        let survivor = run_path(partial_dir.path(), &cfgs[7]);
        let before = std::fs::metadata(&survivor).unwrap().modified().unwrap();
        let resumed = run_grid(&m, Some(partial_dir.path()), 2).unwrap();
        assert_eq!(resumed, fresh);
        assert_eq!(std::fs::metadata(&survivor).unwrap().modified().unwrap(), before);
        for cfg in &cfgs {
            assert_eq!(
                std::fs::read(run_path(dir.path(), cfg)).unwrap(),
                std::fs::read(run_path(partial_dir.path(), cfg)).unwrap()
            );
        }
        assert_eq!(RunSet::load(partial_dir.path(), false).unwrap(), fresh);
    }

    #[test]
    fn manifest_mismatch_is_refused() {
        let m = tiny_manifest();
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path()).unwrap();
        fsutil::write_json(&dir.path().join("manifest.json"), &m).unwrap();
        let mut other = m.clone();
        other.base_seed += 1;
        assert!(matches!(run_grid(&other, Some(dir.path()), 1), Err(Error::Study(_))));
    }

    #[test]
    fn load_reports_missing_runs() {
        let m = tiny_manifest();
        let dir = tempfile::tempdir().unwrap();
        fsutil::write_json(&dir.path().join("manifest.json"), &m).unwrap();
        assert!(RunSet::load(dir.path(), false).is_err());
        assert_eq!(RunSet::load(dir.path(), true).unwrap().records.len(), 0);
    }

    #[test]
    fn manifest_round_trips() {
        let m = tiny_manifest();
        let json = serde_json::to_string_pretty(&m).unwrap();
        let back: StudyManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
        let bad = json.replacen("\"base_seed\"", "\"bogus\": 1, \"base_seed\"", 1);
        assert!(serde_json::from_str::<StudyManifest>(&bad).is_err());
    }

    proptest::proptest! {
        #[test]
        fn axis_values_increase_and_hit_endpoints(
            low in 1e-6f64..1.0,
            factor in 1.001f64..1e4,
            points in 2usize..20,
        ) {
            let high = low * factor;
            let v = Axis::new(AxisName::Lr, low, high, points).values().unwrap();
            proptest::prop_assert!(v.windows(2).all(|w| w[0] < w[1]));
            proptest::prop_assert!(rel(v[0], low) <= 1e-12 && rel(v[points - 1], high) <= 1e-12);
        }
    }
}
