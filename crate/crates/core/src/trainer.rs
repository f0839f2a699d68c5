//! Train/test split assembly, the optimization loop and checkpoint files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, ModelError, Result};
use crate::geometry::BearingConfig;
use crate::gnn::{adam_step, batch_loss, gradients, AdamConfig, GnnHyper, GnnModel, LossWeights, OptState, TensorSpec};
use crate::graph::{compute_norm_stats, normalize, sample_dataset, Dataset, Graph, NormStats, SamplingPolicy, Split};
use crate::simulator::Trajectory;
use crate::trajectory_io::read_trajectory;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Graphs per gradient work unit. Batches are cut into units of this size,
/// evaluated independently and summed in order, so the result does not depend
/// on the number of threads.
const MICRO_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Final learning rate as a fraction of the initial one; the rate decays
    /// exponentially in between. `1.0` keeps it constant.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub eval_every: usize,
    /// Evaluations without held-out improvement before stopping.
    pub patience: usize,
    /// Graphs in the fixed training subset whose loss is logged.
    pub probe_size: usize,
    /// Cap on held-out graphs scored per evaluation.
    pub eval_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            lr_decay: 1.0,
            batch_size: 32,
            steps: 50_000,
            loss_weights: LossWeights::default(),
            seed: 0,
            eval_every: 500,
            patience: 20,
            probe_size: 256,
            eval_size: 512,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("train.batch_size", self.batch_size),
            ("train.steps", self.steps),
            ("train.eval_every", self.eval_every),
            ("train.patience", self.patience),
            ("train.probe_size", self.probe_size),
            ("train.eval_size", self.eval_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(ConfigError::invalid(field, "must be positive"));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ConfigError::invalid("train.learning_rate", "must be finite and non-negative"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(ConfigError::invalid("train.lr_decay", "must lie in (0, 1]"));
        }
        let w = self.loss_weights;
        if !(w.edge >= 0.0 && w.node >= 0.0 && w.edge + w.node > 0.0 && (w.edge + w.node).is_finite()) {
            return Err(ConfigError::invalid("train.loss_weights", "must be non-negative with a positive sum"));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        self.learning_rate * self.lr_decay.powf(step as f64 / self.steps as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub bearing_configs: Vec<BearingConfig>,
    pub train_config: TrainConfig,
    pub hyper: GnnHyper,
    pub norm_stats: NormStats,
    pub manifest: Vec<TensorSpec>,
    pub params: Vec<f64>,
    /// Step whose parameters were kept.
    pub best_step: usize,
    pub history: Vec<HistoryEntry>,
    /// CRC-32 over the little-endian parameter bytes.
    pub checksum: u32,
}

fn params_checksum(params: &[f64]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for p in params {
        h.update(&p.to_le_bytes());
    }
    h.finalize()
}

impl Checkpoint {
    pub fn new(
        model: &GnnModel,
        norm_stats: NormStats,
        bearing_configs: Vec<BearingConfig>,
        train_config: TrainConfig,
        best_step: usize,
        history: Vec<HistoryEntry>,
    ) -> Self {
        let params = model.flatten();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            bearing_configs,
            train_config,
            hyper: model.hyper.clone(),
            norm_stats,
            manifest: model.manifest(),
            checksum: params_checksum(&params),
            params,
            best_step,
            history,
        }
    }

    /// Checks version, manifest tiling, checksum and agreement with the
    /// layout implied by `hyper`.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut offset = 0;
        for spec in &self.manifest {
            if spec.offset != offset {
                return Err(Error::Checkpoint(format!(
                    "tensor {} starts at {} but the previous tensor ends at {offset}",
                    spec.name, spec.offset
                )));
            }
            offset += spec.len();
        }
        if offset != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "manifest covers {offset} values, parameter list has {}",
                self.params.len()
            )));
        }
        if params_checksum(&self.params) != self.checksum {
            return Err(Error::Checkpoint("parameter checksum mismatch".into()));
        }
        let expected = GnnModel::new(&self.hyper, 0)?.manifest();
        if expected != self.manifest {
            return Err(Error::Checkpoint("manifest does not match the stored hyperparameters".into()));
        }
        self.norm_stats.validate()?;
        if self.history.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(Error::Checkpoint("history steps are not increasing".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<GnnModel> {
        self.validate()?;
        let mut model = GnnModel::new(&self.hyper, 0)?;
        model.assign(&self.params)?;
        Ok(model)
    }

    /// Like [`model`](Self::model), but first requires the stored
    /// hyperparameters to equal `expected`.
    pub fn model_for(&self, expected: &GnnHyper) -> Result<GnnModel> {
        if &self.hyper != expected {
            return Err(Error::Checkpoint(format!(
                "hyperparameter mismatch: checkpoint has {:?}, expected {:?}",
                self.hyper, expected
            )));
        }
        self.model()
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string(checkpoint).map_err(|e| Error::format(path, e))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Reads and fully validates a checkpoint; nothing is returned on any failure.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let checkpoint: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    checkpoint.validate()?;
    Ok(checkpoint)
}

/// `step,train_loss,eval_loss` lines.
pub fn history_csv(history: &[HistoryEntry]) -> String {
    let mut out = String::from("step,train_loss,eval_loss\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.step, h.train_loss, h.eval_loss));
    }
    out
}

/// Roller counts and loads of the training grid, plus the single test case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitGrid {
    pub train_rollers: Vec<usize>,
    pub loads: Vec<f64>,
    pub test_rollers: usize,
    pub test_load: f64,
}

impl Default for SplitGrid {
    fn default() -> Self {
        Self {
            train_rollers: vec![13, 14, 16],
            loads: (0..10).map(|i| 5000.0 + 2000.0 * i as f64).collect(),
            test_rollers: 15,
            test_load: 13000.0,
        }
    }
}

impl SplitGrid {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.train_rollers.is_empty() || self.loads.is_empty() {
            return Err(ConfigError::invalid("grid", "needs at least one roller count and one load"));
        }
        if self.loads.iter().chain([&self.test_load]).any(|l| !(*l > 0.0 && l.fract() == 0.0)) {
            return Err(ConfigError::invalid("grid", "loads must be positive whole newtons"));
        }
        Ok(())
    }

    /// Training cases in roller-count-major order, then the test case.
    pub fn cases(&self) -> Vec<(usize, f64)> {
        let mut cases: Vec<(usize, f64)> = self
            .train_rollers
            .iter()
            .flat_map(|&n| self.loads.iter().map(move |&f| (n, f)))
            .collect();
        cases.push((self.test_rollers, self.test_load));
        cases
    }
}

pub fn trajectory_file_name(n_rollers: usize, load: f64) -> String {
    format!("traj_n{n_rollers}_f{}.jsonl", load.round() as u64)
}

/// Both splits, normalized with statistics from the training split only.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: Dataset,
    pub test: Dataset,
    pub train_bearings: Vec<BearingConfig>,
    pub test_trajectory: Trajectory,
    pub sources: Vec<PathBuf>,
}

pub fn build_split(dir: &Path) -> Result<SplitData> {
    build_split_with(dir, &SplitGrid::default(), &SamplingPolicy::default())
}

pub fn build_split_with(dir: &Path, grid: &SplitGrid, policy: &SamplingPolicy) -> Result<SplitData> {
    grid.validate()?;
    let cases = grid.cases();
    let paths: Vec<PathBuf> = cases.iter().map(|&(n, f)| dir.join(trajectory_file_name(n, f))).collect();
    let missing: Vec<(usize, u64)> = cases
        .iter()
        .zip(&paths)
        .filter(|(_, p)| !p.is_file())
        .map(|(&(n, f), _)| (n, f.round() as u64))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingTrajectories(missing));
    }
    let (train_paths, test_path) = paths.split_at(paths.len() - 1);
    // Keep only the sampled graphs of training runs; full records are large.
    let per_file: Vec<Result<(Vec<Graph>, BearingConfig, String)>> = train_paths
        .par_iter()
        .map(|p| {
            let traj = read_trajectory(p)?;
            let graphs = sample_dataset(std::slice::from_ref(&traj), policy)?;
            Ok((graphs, traj.header.config.clone(), traj.id()))
        })
        .collect();
    let mut graphs = Vec::new();
    let mut bearings: Vec<BearingConfig> = Vec::new();
    let mut provenance = Vec::new();
    for r in per_file {
        let (g, config, id) = r?;
        graphs.extend(g);
        if !bearings.contains(&config) {
            bearings.push(config);
        }
        provenance.push(id);
    }
    let stats = compute_norm_stats(&graphs)?;
    let test_trajectory = read_trajectory(&test_path[0])?;
    let test_graphs = sample_dataset(std::slice::from_ref(&test_trajectory), policy)?;
    let train = normalize(&Dataset {
        graphs,
        stats: stats.clone(),
        split: Split::Train,
        provenance,
        normalized: false,
    })?;
    let test = normalize(&Dataset {
        graphs: test_graphs,
        stats,
        split: Split::Test,
        provenance: vec![test_trajectory.id()],
        normalized: false,
    })?;
    Ok(SplitData {
        train,
        test,
        train_bearings: bearings,
        test_trajectory,
        sources: paths,
    })
}

/// Indices of graphs belonging to the last trajectory of each roller count,
/// for counts that have more than one trajectory.
fn holdout_indices(dataset: &Dataset) -> Vec<usize> {
    let mut by_count: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for g in &dataset.graphs {
        let ids = by_count.entry(g.n_rollers()).or_default();
        if ids.last() != Some(&g.meta.trajectory_id.as_str()) && !ids.contains(&g.meta.trajectory_id.as_str()) {
            ids.push(&g.meta.trajectory_id);
        }
    }
    let held: Vec<&str> = by_count.values().filter(|ids| ids.len() > 1).map(|ids| *ids.last().unwrap()).collect();
    (0..dataset.graphs.len())
        .filter(|&i| held.contains(&dataset.graphs[i].meta.trajectory_id.as_str()))
        .collect()
}

/// At most `cap` indices spread evenly over `indices`.
fn spread(indices: &[usize], cap: usize) -> Vec<usize> {
    if indices.len() <= cap {
        return indices.to_vec();
    }
    (0..cap).map(|i| indices[i * indices.len() / cap]).collect()
}

fn mean_loss(model: &GnnModel, graphs: &[&Graph], weights: LossWeights) -> Result<f64, ModelError> {
    let parts: Vec<Result<(f64, usize), ModelError>> = graphs
        .par_chunks(MICRO_BATCH)
        .map(|c| batch_loss(model, c, weights).map(|l| (l, c.len())))
        .collect();
    let mut total = 0.0;
    for p in parts {
        let (l, n) = p?;
        total += l * n as f64;
    }
    Ok(total / graphs.len() as f64)
}

fn batch_gradients(model: &GnnModel, graphs: &[&Graph], weights: LossWeights) -> Result<(f64, Vec<f64>), ModelError> {
    let parts: Vec<Result<(f64, Vec<f64>, usize), ModelError>> = graphs
        .par_chunks(MICRO_BATCH)
        .map(|c| gradients(model, c, weights).map(|(l, g)| (l, g.flatten(), c.len())))
        .collect();
    let scale = 1.0 / graphs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.param_count()];
    for p in parts {
        let (l, g, n) = p?;
        let w = n as f64 * scale;
        loss += l * w;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += w * b;
        }
    }
    Ok((loss, grad))
}

/// Fits a fresh model on a normalized training set.
///
/// The last trajectory of each roller count is held out for early stopping
/// and never used for gradient steps. If no roller count has two
/// trajectories, every graph trains and the fixed probe subset doubles as the
/// held-out set. The returned checkpoint holds the best held-out parameters.
pub fn train(
    dataset: &Dataset,
    bearings: &[BearingConfig],
    hyper: &GnnHyper,
    config: &TrainConfig,
) -> Result<(Checkpoint, Vec<HistoryEntry>)> {
    train_with_progress(dataset, bearings, hyper, config, |_| {})
}

pub fn train_with_progress(
    dataset: &Dataset,
    bearings: &[BearingConfig],
    hyper: &GnnHyper,
    config: &TrainConfig,
    mut progress: impl FnMut(&HistoryEntry),
) -> Result<(Checkpoint, Vec<HistoryEntry>)> {
    config.validate()?;
    if !dataset.normalized {
        return Err(ConfigError::invalid("dataset", "training data must be normalized").into());
    }
    if dataset.graphs.is_empty() {
        return Err(ModelError::Empty("training set").into());
    }
    let holdout = holdout_indices(dataset);
    let train_idx: Vec<usize> = (0..dataset.graphs.len()).filter(|i| !holdout.contains(i)).collect();
    let probe: Vec<&Graph> = spread(&train_idx, config.probe_size).iter().map(|&i| &dataset.graphs[i]).collect();
    let eval_set: Vec<&Graph> = if holdout.is_empty() {
        probe.clone()
    } else {
        spread(&holdout, config.eval_size).iter().map(|&i| &dataset.graphs[i]).collect()
    };

    let mut model = GnnModel::new(hyper, config.seed)?;
    let mut params = model.flatten();
    let mut opt = OptState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let batch_size = config.batch_size.min(train_idx.len());
    let mut order = train_idx.clone();
    let mut cursor = order.len();

    let snapshot = |model: &GnnModel, best_step: usize, history: &[HistoryEntry]| {
        Checkpoint::new(
            model,
            dataset.stats.clone(),
            bearings.to_vec(),
            config.clone(),
            best_step,
            history.to_vec(),
        )
    };
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut since_best = 0;

    let mut step = 0;
    loop {
        if step % config.eval_every == 0 || step == config.steps {
            let diverged = |reason: String, best: &Option<(f64, usize, Vec<f64>)>, history: &[HistoryEntry]| {
                let mut good = model.clone();
                if let Some((_, _, p)) = best {
                    good.assign(p).expect("same layout");
                }
                Error::TrainingDiverged {
                    step,
                    reason,
                    last_good: Box::new(snapshot(&good, best.as_ref().map_or(0, |b| b.1), history)),
                }
            };
            let losses = mean_loss(&model, &probe, config.loss_weights)
                .and_then(|t| mean_loss(&model, &eval_set, config.loss_weights).map(|e| (t, e)));
            let (train_loss, eval_loss) = match losses {
                Ok((t, e)) if t.is_finite() && e.is_finite() => (t, e),
                Ok(_) => return Err(diverged("non-finite loss".into(), &best, &history)),
                Err(e) => return Err(diverged(e.to_string(), &best, &history)),
            };
            let entry = HistoryEntry { step, train_loss, eval_loss };
            history.push(entry);
            progress(&entry);
            if best.as_ref().is_none_or(|b| eval_loss < b.0) {
                best = Some((eval_loss, step, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            if step == config.steps || since_best >= config.patience {
                break;
            }
        }

        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&dataset.graphs[order[cursor]]);
            cursor += 1;
        }
        match batch_gradients(&model, &batch, config.loss_weights) {
            Ok((_, grad)) => {
                adam_step(&mut params, &grad, &mut opt, config.lr_at(step), &config.adam);
                model.assign(&params)?;
            }
            Err(e) => {
                let mut good = model.clone();
                if let Some((_, _, p)) = &best {
                    good.assign(p)?;
                }
                return Err(Error::TrainingDiverged {
                    step,
                    reason: e.to_string(),
                    last_good: Box::new(snapshot(&good, best.as_ref().map_or(0, |b| b.1), &history)),
                });
            }
        }
        step += 1;
    }

    let (_, best_step, best_params) = best.expect("at least one evaluation ran");
    model.assign(&best_params)?;
    Ok((snapshot(&model, best_step, &history), history))
}
