//! End-to-end stages behind the command line tool, driven by one JSON
//! configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{emit_report, emit_sweep_report, single_step_eval, verification_sweep, EvalConfig, Summary};
use crate::geometry::{roller_nearest, BearingConfig, LoadSchedule, SimParams};
use crate::gnn::GnnHyper;
use crate::graph::{DatasetManifest, SamplingPolicy, Split, GRAPH_FORMAT_VERSION};
use crate::simulator::simulate;
use crate::trainer::{
    build_split_with, history_csv, load_checkpoint, save_checkpoint, train_with_progress, trajectory_file_name, Checkpoint, HistoryEntry,
    SplitGrid, TrainConfig,
};
use crate::trajectory_io::{read_trajectory, write_trajectory};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";

/// Every tunable of the pipeline. The bearing section is a template whose
/// roller count is replaced by each grid case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub bearing: BearingConfig,
    pub schedule: LoadSchedule,
    pub sim: SimParams,
    pub grid: SplitGrid,
    pub sampling: SamplingPolicy,
    pub model: GnnHyper,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for (n, _) in self.grid.cases() {
            self.bearing_for(n).validate()?;
        }
        self.schedule.validate()?;
        self.sim.validate()?;
        self.grid.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        Ok(())
    }

    pub fn bearing_for(&self, n_rollers: usize) -> BearingConfig {
        BearingConfig {
            n_rollers,
            ..self.bearing.clone()
        }
    }

    pub fn test_bearing(&self) -> BearingConfig {
        self.bearing_for(self.grid.test_rollers)
    }

    fn test_trajectory_path(&self, dir: &Path) -> PathBuf {
        dir.join(trajectory_file_name(self.grid.test_rollers, self.grid.test_load))
    }
}

/// Provenance record written next to every stage's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: PipelineConfig,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
    pub tool_version: String,
    /// Seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(subcommand: &str, config: &PipelineConfig) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            seed: config.train.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timings: BTreeMap::new(),
        }
    }

    /// Replaces `dir/run_manifest.json` via a temporary file and a rename.
    pub fn write_atomic(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::format(&path, e))?;
        std::fs::write(&tmp, json + "\n").map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    timings.insert(name.to_string(), start.elapsed().as_secs_f64());
    Ok(out)
}

/// Simulates every grid case into `out_dir`, one JSONL file each.
pub fn run_simulate(config: &PipelineConfig, out_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    create_dir(out_dir)?;
    let mut manifest = RunManifest::new("simulate", config);
    let outputs = timed(&mut manifest.timings, "simulate", || {
        config
            .grid
            .cases()
            .par_iter()
            .map(|&(n, load)| {
                let schedule = LoadSchedule {
                    base_load: load,
                    ..config.schedule.clone()
                };
                let traj = simulate(&config.bearing_for(n), &schedule, &config.sim)?;
                let path = out_dir.join(trajectory_file_name(n, load));
                write_trajectory(&path, &traj)?;
                Ok(path)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    manifest.outputs = outputs;
    manifest.write_atomic(out_dir)?;
    Ok(manifest)
}

/// Writes `train_dataset.json` and `test_dataset.json` describing both splits.
pub fn run_build_dataset(config: &PipelineConfig, trajectories: &Path, out_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    create_dir(out_dir)?;
    let mut manifest = RunManifest::new("build-dataset", config);
    manifest.inputs.insert("trajectories".into(), trajectories.to_path_buf());
    let split = timed(&mut manifest.timings, "build_split", || {
        build_split_with(trajectories, &config.grid, &config.sampling)
    })?;
    let n_train = split.sources.len() - 1;
    for (name, ds, sources) in [
        ("train_dataset.json", &split.train, split.sources[..n_train].to_vec()),
        ("test_dataset.json", &split.test, split.sources[n_train..].to_vec()),
    ] {
        let path = out_dir.join(name);
        let m = DatasetManifest {
            format_version: GRAPH_FORMAT_VERSION,
            split: ds.split,
            sources,
            policy: config.sampling.clone(),
            stats: ds.stats.clone(),
            n_graphs: ds.graphs.len(),
        };
        let json = serde_json::to_string_pretty(&m).map_err(|e| Error::format(&path, e))?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        manifest.outputs.push(path);
    }
    debug_assert_eq!(split.test.split, Split::Test);
    manifest.write_atomic(out_dir)?;
    Ok(manifest)
}

/// Trains on the split built from `trajectories`; writes the checkpoint and
/// its history sidecar.
pub fn run_train(
    config: &PipelineConfig,
    trajectories: &Path,
    out_dir: &Path,
    progress: impl FnMut(&HistoryEntry),
) -> Result<(RunManifest, Checkpoint)> {
    config.validate()?;
    create_dir(out_dir)?;
    let mut manifest = RunManifest::new("train", config);
    manifest.inputs.insert("trajectories".into(), trajectories.to_path_buf());
    let split = timed(&mut manifest.timings, "build_split", || {
        build_split_with(trajectories, &config.grid, &config.sampling)
    })?;
    let (checkpoint, history) = timed(&mut manifest.timings, "train", || {
        train_with_progress(&split.train, &split.train_bearings, &config.model, &config.train, progress)
    })?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt_path, &checkpoint)?;
    let hist_path = out_dir.join(HISTORY_FILE);
    std::fs::write(&hist_path, history_csv(&history)).map_err(|e| Error::io(&hist_path, e))?;
    manifest.outputs = vec![ckpt_path, hist_path];
    manifest.write_atomic(out_dir)?;
    Ok((manifest, checkpoint))
}

fn marker_rollers(config: &PipelineConfig) -> (usize, usize) {
    let bearing = config.test_bearing();
    (roller_nearest(&bearing, 90.0), roller_nearest(&bearing, -90.0))
}

/// Single-step evaluation on the test trajectory plus the sweep, as one report.
pub fn run_eval(config: &PipelineConfig, checkpoint: &Path, trajectories: &Path, out_dir: &Path) -> Result<(RunManifest, Summary)> {
    config.validate()?;
    create_dir(out_dir)?;
    let mut manifest = RunManifest::new("eval", config);
    let test_path = config.test_trajectory_path(trajectories);
    manifest.inputs.insert("checkpoint".into(), checkpoint.to_path_buf());
    manifest.inputs.insert("test_trajectory".into(), test_path.clone());
    let ckpt = load_checkpoint(checkpoint)?;
    let trajectory = read_trajectory(&test_path)?;
    let rows = timed(&mut manifest.timings, "single_step_eval", || {
        single_step_eval(&ckpt, &trajectory, &config.eval.steps())
    })?;
    let sweep = timed(&mut manifest.timings, "verification_sweep", || {
        verification_sweep(&ckpt, &config.test_bearing(), config.eval.sweep_range, config.eval.sweep_points)
    })?;
    let (top, bottom) = marker_rollers(config);
    let summary = emit_report(&rows, &sweep, &config.eval, top, bottom, out_dir)?;
    manifest.outputs = list_outputs(out_dir)?;
    manifest.write_atomic(out_dir)?;
    Ok((manifest, summary))
}

/// Inner-ring displacement sweep only.
pub fn run_verify(config: &PipelineConfig, checkpoint: &Path, out_dir: &Path) -> Result<(RunManifest, Summary)> {
    config.validate()?;
    create_dir(out_dir)?;
    let mut manifest = RunManifest::new("verify", config);
    manifest.inputs.insert("checkpoint".into(), checkpoint.to_path_buf());
    let ckpt = load_checkpoint(checkpoint)?;
    let sweep = timed(&mut manifest.timings, "verification_sweep", || {
        verification_sweep(&ckpt, &config.test_bearing(), config.eval.sweep_range, config.eval.sweep_points)
    })?;
    let (top, bottom) = marker_rollers(config);
    let summary = emit_sweep_report(&sweep, &config.eval, top, bottom, out_dir)?;
    manifest.outputs = list_outputs(out_dir)?;
    manifest.write_atomic(out_dir)?;
    Ok((manifest, summary))
}

fn list_outputs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n != MANIFEST_FILE && !n.to_string_lossy().starts_with('.')))
        .collect();
    out.sort();
    Ok(out)
}

/// Subdirectories used by [`run_all`].
pub struct AllLayout {
    pub trajectories: PathBuf,
    pub dataset: PathBuf,
    pub train: PathBuf,
    pub eval: PathBuf,
    pub verify: PathBuf,
}

impl AllLayout {
    pub fn new(root: &Path) -> Self {
        Self {
            trajectories: root.join("trajectories"),
            dataset: root.join("dataset"),
            train: root.join("train"),
            eval: root.join("eval"),
            verify: root.join("verify"),
        }
    }
}

/// Every stage in order under `out_dir`.
pub fn run_all(config: &PipelineConfig, out_dir: &Path, progress: impl FnMut(&HistoryEntry)) -> Result<(RunManifest, Summary)> {
    config.validate()?;
    create_dir(out_dir)?;
    let layout = AllLayout::new(out_dir);
    let mut manifest = RunManifest::new("all", config);
    let start = Instant::now();
    run_simulate(config, &layout.trajectories)?;
    manifest.timings.insert("simulate".into(), start.elapsed().as_secs_f64());
    run_build_dataset(config, &layout.trajectories, &layout.dataset)?;
    manifest.timings.insert("build_dataset".into(), start.elapsed().as_secs_f64());
    run_train(config, &layout.trajectories, &layout.train, progress)?;
    manifest.timings.insert("train".into(), start.elapsed().as_secs_f64());
    let ckpt = layout.train.join(CHECKPOINT_FILE);
    let (_, summary) = run_eval(config, &ckpt, &layout.trajectories, &layout.eval)?;
    manifest.timings.insert("eval".into(), start.elapsed().as_secs_f64());
    run_verify(config, &ckpt, &layout.verify)?;
    manifest.timings.insert("verify".into(), start.elapsed().as_secs_f64());
    manifest.outputs = vec![layout.trajectories, layout.dataset, layout.train, layout.eval, layout.verify];
    manifest.write_atomic(out_dir)?;
    Ok((manifest, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_and_validates() {
        let config = PipelineConfig::default();
        config.validate().unwrap();
        let json = serde_json::to_string(&config).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
        assert_eq!(config.grid.cases().len(), 31);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let config: PipelineConfig = serde_json::from_str(r#"{"train": {"steps": 10}, "bearing": {"roller_length": 10.0}}"#).unwrap();
        assert_eq!(config.train.steps, 10);
        assert_eq!(config.train.batch_size, 32);
        assert_eq!(config.bearing_for(13).roller_length, 10.0);
        assert_eq!(config.bearing_for(13).n_rollers, 13);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"train": {"lr": 1.0}}"#).is_err());
    }

    #[test]
    fn manifest_write_is_atomic_and_single() {
        let dir = std::env::temp_dir().join(format!("manifest_{}", std::process::id()));
        create_dir(&dir).unwrap();
        let m = RunManifest::new("verify", &PipelineConfig::default());
        m.write_atomic(&dir).unwrap();
        m.write_atomic(&dir).unwrap();
        let names: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from(MANIFEST_FILE)]);
        let back: RunManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(back, m);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
