//! Declarative experiment pipelines: a JSON config lists stages
//! (train/rollout/extract/pca/ae/sae/ph/field) with their parameters and
//! input/output paths; `run_experiment` executes them in order and writes a
//! manifest of every artifact with content hash and per-stage wall time.
//!
//! Validation guarantees the stage graph is trivially acyclic: every input
//! path must be produced by an earlier stage or already exist on disk.
//! Config problems surface as [`Error::Config`] before anything runs;
//! mid-run failures as [`Error::Stage`] naming the stage.

use std::path::Path;
use std::time::Instant;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{ae_fit_with_latent, AeArchitecture, AeTrainOptions};
use crate::binio::fnv1a64;
use crate::cloud::{extract_macroscopic, extract_microscopic, window_subsample, PointCloud};
use crate::engine::rollout;
use crate::error::{Error, Result};
use crate::events::{Event, EventKind, EventScript};
use crate::field::{field_lines, FieldOptions};
use crate::grid::{ChannelMode, GridState};
use crate::homology::{
    betti_report, default_significance, maxmin_subsample, rips_persistence, subsample_coverage,
    DistanceMatrix,
};
use crate::model::NcaModel;
use crate::pca::{pca_fit, pca_project, project_cloud, PcaBasis};
use crate::plot::{emit_diagram_svg, emit_field_svg, emit_scatter_svg};
use crate::rng::{mix, stream, StreamRng};
use crate::sae::{per_frame_mean_features, sae_fit, SaeTrainOptions};
use crate::trainer::{train, SwitchSignal, TrainConfig, TrainTarget};
use crate::trajectory::Trajectory;

pub const SCHEMA_VERSION: u32 = 1;

fn default_record_every() -> usize {
    1
}
fn default_k() -> usize {
    2
}
fn default_true() -> bool {
    true
}
fn default_micro_cap() -> usize {
    100_000
}

/// Procedural target images: enough to pose desk-scale two-attractor tasks
/// without shipping assets. RGB in [0,1]; the alpha channel (when the mode
/// has one) is 1 inside the figure and 0 outside.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case")]
pub enum PatternSpec {
    Uniform { rgb: [f64; 3] },
    Disc { rgb: [f64; 3], background: [f64; 3], radius: f64 },
}

impl PatternSpec {
    fn build(&self, h: usize, w: usize, c_vis: usize) -> Array3<f32> {
        let mut t = Array3::zeros((h, w, c_vis));
        for r in 0..h {
            for c in 0..w {
                match self {
                    PatternSpec::Uniform { rgb } => {
                        for ch in 0..3.min(c_vis) {
                            t[(r, c, ch)] = rgb[ch] as f32;
                        }
                        if c_vis > 3 {
                            t[(r, c, 3)] = 1.0;
                        }
                    }
                    PatternSpec::Disc { rgb, background, radius } => {
                        let dr = r as f64 + 0.5 - h as f64 / 2.0;
                        let dc = c as f64 + 0.5 - w as f64 / 2.0;
                        let inside = (dr * dr + dc * dc).sqrt() <= *radius;
                        let fill = if inside { rgb } else { background };
                        for ch in 0..3.min(c_vis) {
                            t[(r, c, ch)] = fill[ch] as f32;
                        }
                        if c_vis > 3 && inside {
                            t[(r, c, 3)] = 1.0;
                        }
                    }
                }
            }
        }
        t
    }
}

/// Training-time colour-switch signal (mirrors [`SwitchSignal`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSignalSpec {
    pub channel: usize,
    pub radius: f64,
    pub magnitude: f64,
    pub switch_prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainStage {
    pub out_model: String,
    #[serde(default)]
    pub out_loss: Option<String>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub hidden_width: usize,
    pub channel_mode: ChannelMode,
    pub epochs: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub pool_size: Option<usize>,
    #[serde(default)]
    pub steps_min: Option<usize>,
    #[serde(default)]
    pub steps_max: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub fire_rate: Option<f64>,
    /// One target trains a fixed-pattern model; two train a signal-switching
    /// one (which then also needs `signal`).
    pub targets: Vec<PatternSpec>,
    #[serde(default)]
    pub signal: Option<TrainSignalSpec>,
}

/// Scheduled colour-switch signals during a rollout. With `alternate` the
/// value flips sign on every firing (bouncing between the two attractors);
/// `stop_after` drops firings at or after that timestep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalScheduleSpec {
    pub every: usize,
    pub channel: usize,
    pub magnitude: f64,
    pub radius: f64,
    #[serde(default)]
    pub jitter_radius: usize,
    #[serde(default)]
    pub centre: Option<(usize, usize)>,
    #[serde(default)]
    pub alternate: bool,
    #[serde(default)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub timestep: usize,
    /// Half-open `(row0, col0, row1, col1)`.
    pub rect: (usize, usize, usize, usize),
    #[serde(default)]
    pub fill: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitSpec {
    #[default]
    Seed,
    Zero,
    Noise {
        amplitude: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutStage {
    pub model: String,
    pub out_traj: String,
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub signals: Option<SignalScheduleSpec>,
    #[serde(default)]
    pub perturbations: Vec<PerturbSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ExtractMode {
    Macro,
    Micro {
        #[serde(default = "default_true")]
        exclude_dead: bool,
        #[serde(default = "default_micro_cap")]
        max_points: usize,
    },
    Window {
        rect: (usize, usize, usize, usize),
        frames: (usize, usize),
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractStage {
    pub traj: String,
    pub out_cloud: String,
    #[serde(flatten)]
    pub mode: ExtractMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaStage {
    pub cloud: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub out_basis: Option<String>,
    #[serde(default)]
    pub out_embedding: Option<String>,
    #[serde(default)]
    pub out_svg: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AeStage {
    pub cloud: String,
    #[serde(default = "default_k")]
    pub latent: usize,
    /// Drop every activation; the optimum then coincides with PCA.
    #[serde(default)]
    pub linear: bool,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub out_embedding: Option<String>,
    #[serde(default)]
    pub out_svg: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameFeaturesSpec {
    pub traj: String,
    pub out_cloud: String,
    #[serde(default = "default_true")]
    pub exclude_dead: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaeStage {
    pub cloud: String,
    pub expansion: usize,
    pub l1_coefficient: f64,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub l1_hold_fraction: Option<f64>,
    #[serde(default)]
    pub out_model: Option<String>,
    #[serde(default)]
    pub out_stats: Option<String>,
    /// Also emit the per-frame mean-feature cloud of a trajectory.
    #[serde(default)]
    pub frame_features: Option<FrameFeaturesSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhStage {
    pub cloud: String,
    #[serde(default = "default_k")]
    pub max_dim: usize,
    /// Maxmin subsample budget; omitted = use the whole cloud.
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub max_radius: Option<f64>,
    /// Significance cutoff for the Betti report; omitted = derived from the
    /// diagram.
    #[serde(default)]
    pub threshold: Option<f64>,
    pub out_diagram: String,
    #[serde(default)]
    pub out_svg: Option<String>,
    #[serde(default)]
    pub out_report: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldStage {
    pub traj: String,
    pub basis: String,
    pub model: String,
    pub out_csv: String,
    #[serde(default)]
    pub out_svg: Option<String>,
    #[serde(default)]
    pub resolution: Option<usize>,
    #[serde(default)]
    pub k_neighbours: Option<usize>,
    #[serde(default)]
    pub nca_steps: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StageOp {
    Train(TrainStage),
    Rollout(RolloutStage),
    Extract(ExtractStage),
    Pca(PcaStage),
    Ae(AeStage),
    Sae(SaeStage),
    Ph(PhStage),
    Field(FieldStage),
}

impl StageOp {
    fn inputs(&self) -> Vec<&String> {
        match self {
            StageOp::Train(_) => vec![],
            StageOp::Rollout(s) => vec![&s.model],
            StageOp::Extract(s) => vec![&s.traj],
            StageOp::Pca(s) => vec![&s.cloud],
            StageOp::Ae(s) => vec![&s.cloud],
            StageOp::Sae(s) => {
                let mut v = vec![&s.cloud];
                if let Some(ff) = &s.frame_features {
                    v.push(&ff.traj);
                }
                v
            }
            StageOp::Ph(s) => vec![&s.cloud],
            StageOp::Field(s) => vec![&s.traj, &s.basis, &s.model],
        }
    }

    fn outputs(&self) -> Vec<&String> {
        fn opt(v: &Option<String>) -> Option<&String> {
            v.as_ref()
        }
        match self {
            StageOp::Train(s) => [Some(&s.out_model), opt(&s.out_loss)].into_iter().flatten().collect(),
            StageOp::Rollout(s) => vec![&s.out_traj],
            StageOp::Extract(s) => vec![&s.out_cloud],
            StageOp::Pca(s) => [opt(&s.out_basis), opt(&s.out_embedding), opt(&s.out_svg)]
                .into_iter()
                .flatten()
                .collect(),
            StageOp::Ae(s) => [opt(&s.out_embedding), opt(&s.out_svg)].into_iter().flatten().collect(),
            StageOp::Sae(s) => {
                let mut v: Vec<&String> =
                    [opt(&s.out_model), opt(&s.out_stats)].into_iter().flatten().collect();
                if let Some(ff) = &s.frame_features {
                    v.push(&ff.out_cloud);
                }
                v
            }
            StageOp::Ph(s) => {
                let mut v = vec![&s.out_diagram];
                v.extend([opt(&s.out_svg), opt(&s.out_report)].into_iter().flatten());
                v
            }
            StageOp::Field(s) => {
                let mut v = vec![&s.out_csv];
                v.extend(opt(&s.out_svg));
                v
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            StageOp::Train(_) => "train",
            StageOp::Rollout(_) => "rollout",
            StageOp::Extract(_) => "extract",
            StageOp::Pca(_) => "pca",
            StageOp::Ae(_) => "ae",
            StageOp::Sae(_) => "sae",
            StageOp::Ph(_) => "ph",
            StageOp::Field(_) => "field",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    #[serde(flatten)]
    pub op: StageOp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub rng_seed: u64,
    pub stages: Vec<Stage>,
}

impl ExperimentConfig {
    pub fn new(rng_seed: u64, stages: Vec<Stage>) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            rng_seed,
            stages,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("unparseable config: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &str) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Schema version, unique stage names, and the path discipline: every
    /// input is an earlier stage's output or a file already on disk, and no
    /// two stages write the same path.
    pub fn validate(&self, workdir: &str) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut produced: Vec<&String> = Vec::new();
        let mut names: Vec<&String> = Vec::new();
        for stage in &self.stages {
            if stage.name.is_empty() {
                return Err(Error::Config("stage with empty name".into()));
            }
            if names.contains(&&stage.name) {
                return Err(Error::Config(format!("duplicate stage name '{}'", stage.name)));
            }
            names.push(&stage.name);
            for input in stage.op.inputs() {
                let on_disk = Path::new(&resolve(workdir, input)).exists();
                if !produced.contains(&input) && !on_disk {
                    return Err(Error::Config(format!(
                        "stage '{}': input '{input}' is not produced by an earlier stage and does not exist",
                        stage.name
                    )));
                }
            }
            for output in stage.op.outputs() {
                if produced.contains(&output) {
                    return Err(Error::Config(format!(
                        "stage '{}': output '{output}' is already written by an earlier stage",
                        stage.name
                    )));
                }
                produced.push(output);
            }
        }
        Ok(())
    }
}

/// One artifact the pipeline wrote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub stage: String,
    pub path: String,
    pub fnv1a64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub rng_seed: u64,
    pub artifacts: Vec<ArtifactRecord>,
    pub stage_times: Vec<StageTime>,
}

impl Manifest {
    pub fn save(&self, path: &str) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn artifact(&self, path: &str) -> Option<&ArtifactRecord> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

fn resolve(workdir: &str, path: &str) -> String {
    if Path::new(path).is_absolute() || workdir.is_empty() {
        path.to_string()
    } else {
        format!("{}/{}", workdir.trim_end_matches('/'), path)
    }
}

fn build_initial(spec: &InitSpec, h: usize, w: usize, c: usize, mode: ChannelMode, seed: u64) -> Result<GridState<f32>> {
    match spec {
        InitSpec::Seed => GridState::seed(h, w, c, mode),
        InitSpec::Zero => GridState::zeros(h, w, c, mode),
        InitSpec::Noise { amplitude } => {
            let mut g = GridState::zeros(h, w, c, mode)?;
            let mut rng = StreamRng::new(seed, stream::INIT);
            let a = *amplitude;
            g.values_mut().mapv_inplace(|_| rng.range_f64(-a, a) as f32);
            Ok(g)
        }
    }
}

fn build_events(stage: &RolloutStage) -> EventScript {
    let mut events: Vec<Event> = Vec::new();
    if let Some(sig) = &stage.signals {
        let centre = sig.centre.unwrap_or((stage.height / 2, stage.width / 2));
        let mut value = sig.magnitude;
        let mut t = sig.every;
        while t < stage.steps && sig.stop_after.map_or(true, |cut| t < cut) {
            events.push(Event {
                timestep: t,
                kind: EventKind::Signal {
                    centre,
                    jitter_radius: sig.jitter_radius,
                    channel: sig.channel,
                    value,
                    radius: sig.radius,
                },
            });
            if sig.alternate {
                value = -value;
            }
            t += sig.every;
        }
    }
    for p in &stage.perturbations {
        events.push(Event {
            timestep: p.timestep,
            kind: EventKind::Perturb { rect: p.rect, fill: p.fill },
        });
    }
    events.sort_by_key(|e| e.timestep);
    EventScript { events }
}

fn run_train(stage: &TrainStage, seed: u64, workdir: &str) -> Result<()> {
    let mode = stage.channel_mode;
    let model = {
        let mut m = NcaModel::<f32>::new_seeded(stage.channels, stage.hidden_width, mode, seed)?;
        if let Some(fr) = stage.fire_rate {
            m.fire_rate = fr;
        }
        m
    };
    let initial = GridState::<f32>::seed(stage.height, stage.width, stage.channels, mode)?;
    let c_vis = mode.visible_channels();
    let target = match stage.targets.as_slice() {
        [one] => TrainTarget::Fixed(one.build(stage.height, stage.width, c_vis)),
        [a, b] => {
            let signal = stage.signal.as_ref().ok_or_else(|| {
                Error::Validation("two-target training needs a 'signal' block".into())
            })?;
            TrainTarget::Switching {
                targets: [
                    a.build(stage.height, stage.width, c_vis),
                    b.build(stage.height, stage.width, c_vis),
                ],
                signal: SwitchSignal {
                    channel: signal.channel,
                    radius: signal.radius,
                    magnitude: signal.magnitude,
                    switch_prob: signal.switch_prob,
                },
            }
        }
        other => {
            return Err(Error::Validation(format!(
                "need 1 or 2 targets, got {}",
                other.len()
            )))
        }
    };
    let mut config = TrainConfig::for_epochs(stage.epochs);
    config.rng_seed = seed;
    if let Some(b) = stage.batch_size {
        config.batch_size = b;
    }
    if let Some(p) = stage.pool_size {
        config.pool_size = p;
    }
    if let Some(s) = stage.steps_min {
        config.steps_min = s;
    }
    if let Some(s) = stage.steps_max {
        config.steps_max = s;
    }
    if let Some(lr) = stage.learning_rate {
        config.learning_rate = lr;
    }
    let (trained, log) = train(&model, &initial, &target, &config)?;
    trained.save(&resolve(workdir, &stage.out_model))?;
    if let Some(out) = &stage.out_loss {
        log.save_csv(&resolve(workdir, out))?;
    }
    Ok(())
}

fn run_rollout(stage: &RolloutStage, seed: u64, workdir: &str) -> Result<()> {
    let model = NcaModel::<f32>::load(&resolve(workdir, &stage.model))?;
    let initial = build_initial(
        &stage.init,
        stage.height,
        stage.width,
        model.channels(),
        model.channel_mode,
        seed,
    )?;
    let events = build_events(stage);
    let traj = rollout(&model, &initial, stage.steps, &events, seed, stage.record_every)?;
    traj.save(&resolve(workdir, &stage.out_traj))
}

fn run_extract(stage: &ExtractStage, seed: u64, workdir: &str) -> Result<()> {
    let traj = Trajectory::load(&resolve(workdir, &stage.traj))?;
    let cloud = match &stage.mode {
        ExtractMode::Macro => extract_macroscopic(&traj)?,
        ExtractMode::Micro { exclude_dead, max_points } => {
            extract_microscopic(&traj, *exclude_dead, *max_points, seed)?
        }
        ExtractMode::Window { rect, frames } => window_subsample(&traj, *rect, *frames)?,
    };
    cloud.save_csv(&resolve(workdir, &stage.out_cloud))
}

fn run_pca(stage: &PcaStage, workdir: &str) -> Result<()> {
    let cloud = PointCloud::load_csv(&resolve(workdir, &stage.cloud))?;
    let basis = pca_fit(&cloud, stage.k)?;
    if let Some(out) = &stage.out_basis {
        basis.save(&resolve(workdir, out))?;
    }
    if stage.out_embedding.is_some() || stage.out_svg.is_some() {
        let embedded = project_cloud(&basis, &cloud)?;
        if let Some(out) = &stage.out_embedding {
            embedded.save_csv(&resolve(workdir, out))?;
        }
        if let Some(out) = &stage.out_svg {
            emit_scatter_svg(&embedded, &resolve(workdir, out))?;
        }
    }
    Ok(())
}

fn run_ae(stage: &AeStage, seed: u64, workdir: &str) -> Result<()> {
    let cloud = PointCloud::load_csv(&resolve(workdir, &stage.cloud))?;
    let arch = AeArchitecture::Mlp {
        hidden: stage.hidden.clone(),
        linear: stage.linear,
    };
    let mut opts = AeTrainOptions {
        rng_seed: seed,
        ..AeTrainOptions::default()
    };
    if let Some(e) = stage.epochs {
        opts.epochs = e;
    }
    if let Some(b) = stage.batch_size {
        opts.batch_size = b;
    }
    if let Some(lr) = stage.learning_rate {
        opts.learning_rate = lr;
    }
    let (model, _log) = ae_fit_with_latent(cloud.points(), &arch, stage.latent, &opts)?;
    if stage.out_embedding.is_some() || stage.out_svg.is_some() {
        let codes = model.encode(cloud.points())?;
        let embedded = cloud.with_points(codes)?;
        if let Some(out) = &stage.out_embedding {
            embedded.save_csv(&resolve(workdir, out))?;
        }
        if let Some(out) = &stage.out_svg {
            emit_scatter_svg(&embedded, &resolve(workdir, out))?;
        }
    }
    Ok(())
}

fn run_sae(stage: &SaeStage, seed: u64, workdir: &str) -> Result<()> {
    let cloud = PointCloud::load_csv(&resolve(workdir, &stage.cloud))?;
    let mut opts = SaeTrainOptions {
        rng_seed: seed,
        ..SaeTrainOptions::default()
    };
    if let Some(e) = stage.epochs {
        opts.epochs = e;
    }
    if let Some(b) = stage.batch_size {
        opts.batch_size = b;
    }
    if let Some(lr) = stage.learning_rate {
        opts.learning_rate = lr;
    }
    if let Some(h) = stage.l1_hold_fraction {
        opts.l1_hold_fraction = h;
    }
    let (model, stats) = sae_fit(cloud.points(), stage.expansion, stage.l1_coefficient, &opts)?;
    if let Some(out) = &stage.out_model {
        model.save(&resolve(workdir, out))?;
    }
    if let Some(out) = &stage.out_stats {
        let json = serde_json::json!({
            "reconstruction_mse": stats.reconstruction_mse,
            "mean_active_features": stats.mean_active_features,
            "dead_feature_fraction": stats.dead_feature_fraction,
            "activation_threshold": stats.activation_threshold,
        });
        let path = resolve(workdir, out);
        std::fs::write(&path, serde_json::to_string_pretty(&json)?).map_err(|e| Error::io(path, e))?;
    }
    if let Some(ff) = &stage.frame_features {
        let traj = Trajectory::load(&resolve(workdir, &ff.traj))?;
        let features = per_frame_mean_features(&model, &traj, ff.exclude_dead)?;
        features.save_csv(&resolve(workdir, &ff.out_cloud))?;
    }
    Ok(())
}

fn run_ph(stage: &PhStage, seed: u64, workdir: &str) -> Result<()> {
    let cloud = PointCloud::load_csv(&resolve(workdir, &stage.cloud))?;
    let total = cloud.len();
    let (cloud, coverage) = match stage.budget {
        Some(budget) if budget < total => {
            let idx = maxmin_subsample(cloud.points(), budget, seed);
            (cloud.select(&idx)?, subsample_coverage(total, budget))
        }
        _ => (cloud, 1.0),
    };
    let dist = DistanceMatrix::from_points(cloud.points())?;
    let max_radius = stage.max_radius.unwrap_or_else(|| dist.enclosing_radius());
    let diagram = rips_persistence(&dist, stage.max_dim, max_radius)?;
    diagram.save_csv(&resolve(workdir, &stage.out_diagram))?;
    if let Some(out) = &stage.out_svg {
        emit_diagram_svg(&diagram, &resolve(workdir, out))?;
    }
    if let Some(out) = &stage.out_report {
        let threshold = stage.threshold.unwrap_or_else(|| default_significance(&diagram));
        let report = betti_report(&diagram, threshold);
        let json = serde_json::json!({
            "betti": report,
            "points_used": cloud.len(),
            "subsample_coverage": coverage,
            "max_radius": max_radius,
        });
        let path = resolve(workdir, out);
        std::fs::write(&path, serde_json::to_string_pretty(&json)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn run_field(stage: &FieldStage, seed: u64, workdir: &str) -> Result<()> {
    let traj = Trajectory::load(&resolve(workdir, &stage.traj))?;
    let basis = PcaBasis::load(&resolve(workdir, &stage.basis))?;
    let model = NcaModel::<f32>::load(&resolve(workdir, &stage.model))?;
    let cloud = extract_macroscopic(&traj)?;
    let mut opts = FieldOptions {
        rng_seed: seed,
        ..FieldOptions::default()
    };
    if let Some(r) = stage.resolution {
        opts.resolution = r;
    }
    if let Some(k) = stage.k_neighbours {
        opts.k_neighbours = k;
    }
    if let Some(s) = stage.nca_steps {
        opts.nca_steps = s;
    }
    let meta = traj.meta();
    let field = field_lines(&cloud, &basis, &model, meta.height, meta.width, &opts)?;
    field.save_csv(&resolve(workdir, &stage.out_csv))?;
    if let Some(out) = &stage.out_svg {
        let embedded = cloud.with_points(pca_project(&basis, cloud.points())?)?;
        emit_field_svg(&field, &embedded, &resolve(workdir, out))?;
    }
    Ok(())
}

fn run_stage(stage: &Stage, seed: u64, workdir: &str) -> Result<()> {
    match &stage.op {
        StageOp::Train(s) => run_train(s, seed, workdir),
        StageOp::Rollout(s) => run_rollout(s, seed, workdir),
        StageOp::Extract(s) => run_extract(s, seed, workdir),
        StageOp::Pca(s) => run_pca(s, workdir),
        StageOp::Ae(s) => run_ae(s, seed, workdir),
        StageOp::Sae(s) => run_sae(s, seed, workdir),
        StageOp::Ph(s) => run_ph(s, seed, workdir),
        StageOp::Field(s) => run_field(s, seed, workdir),
    }
}

/// Execute every stage in order inside `workdir`, then write
/// `manifest.json` there. Each stage gets a seed derived from the global
/// one and its position, so inserting a stage does not silently reseed the
/// ones before it.
pub fn run_experiment(config: &ExperimentConfig, workdir: &str) -> Result<Manifest> {
    config.validate(workdir)?;
    if !workdir.is_empty() {
        std::fs::create_dir_all(workdir).map_err(|e| Error::io(workdir, e))?;
    }
    let mut manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        rng_seed: config.rng_seed,
        ..Manifest::default()
    };
    for (i, stage) in config.stages.iter().enumerate() {
        let seed = mix(&[config.rng_seed, stream::STAGE, i as u64]);
        let t0 = Instant::now();
        run_stage(stage, seed, workdir).map_err(|e| Error::Stage {
            stage: stage.name.clone(),
            source: Box::new(e),
        })?;
        manifest.stage_times.push(StageTime {
            stage: stage.name.clone(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        for output in stage.op.outputs() {
            let full = resolve(workdir, output);
            let bytes = std::fs::read(&full).map_err(|e| Error::io(&*full, e))?;
            manifest.artifacts.push(ArtifactRecord {
                stage: stage.name.clone(),
                path: output.clone(),
                fnv1a64: format!("{:016x}", fnv1a64(&bytes)),
            });
        }
    }
    manifest.save(&resolve(workdir, "manifest.json"))?;
    Ok(manifest)
}
