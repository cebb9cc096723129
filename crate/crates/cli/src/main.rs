//! nca-scope: train neural cellular automata, roll them out with scripted
//! events, and reconstruct their behavioural manifolds (PCA, autoencoders,
//! persistent homology, latent vector fields).
//!
//! Exit codes: 0 ok, 1 operational/stage failure, 2 config error.
//! `NCA_SCOPE_THREADS` caps the worker thread count.

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array3;

use nca_scope_core::autoencoder::{ae_fit_with_latent, AeArchitecture, AeTrainOptions};
use nca_scope_core::cloud::{extract_macroscopic, extract_microscopic, window_subsample, PointCloud};
use nca_scope_core::engine::rollout;
use nca_scope_core::events::EventScript;
use nca_scope_core::field::{field_lines, FieldOptions};
use nca_scope_core::grid::{ChannelMode, GridState};
use nca_scope_core::homology::{
    betti_report, default_significance, maxmin_subsample, rips_persistence, subsample_coverage,
    DistanceMatrix,
};
use nca_scope_core::model::NcaModel;
use nca_scope_core::pca::{pca_fit, pca_project, project_cloud, PcaBasis};
use nca_scope_core::pipeline::{run_experiment, ExperimentConfig};
use nca_scope_core::plot::{emit_diagram_svg, emit_field_svg, emit_scatter_svg};
use nca_scope_core::sae::{per_frame_mean_features, sae_fit, SaeTrainOptions};
use nca_scope_core::trainer::{train_with, SwitchSignal, TrainConfig, TrainTarget};
use nca_scope_core::trajectory::Trajectory;
use nca_scope_core::Error;

#[derive(Parser)]
#[command(name = "nca-scope", version, about = "NCA training and behavioural-manifold analysis")]
struct Cli {
    /// Global RNG seed; every stochastic step derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an NCA against one target image (or two, switching on a signal).
    Train(TrainArgs),
    /// Roll a trained model forward, applying a scripted event file.
    Rollout(RolloutArgs),
    /// Extract a point cloud from a trajectory.
    Extract(ExtractArgs),
    /// Fit a PCA basis to a cloud and optionally project it.
    Pca(PcaArgs),
    /// Fit a dense autoencoder and emit its latent embedding.
    Ae(AeArgs),
    /// Fit a sparse autoencoder; optionally emit per-frame mean features.
    Sae(SaeArgs),
    /// Vietoris-Rips persistent homology of a cloud.
    Ph(PhArgs),
    /// Latent vector field of a model over a recorded trajectory.
    Field(FieldArgs),
    /// Run a declarative experiment config and write its manifest.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    RgbaAlive,
    RgbPlain,
}

impl From<ModeArg> for ChannelMode {
    fn from(m: ModeArg) -> ChannelMode {
        match m {
            ModeArg::RgbaAlive => ChannelMode::RgbaAlive,
            ModeArg::RgbPlain => ChannelMode::RgbPlain,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Target image (PNG); pass twice for a signal-switching model.
    #[arg(long, required = true, num_args = 1)]
    target: Vec<String>,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 96)]
    hidden: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::RgbaAlive)]
    mode: ModeArg,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    pool: Option<usize>,
    #[arg(long)]
    steps_min: Option<usize>,
    #[arg(long)]
    steps_max: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    fire_rate: Option<f64>,
    /// Hidden channel carrying the colour-switch signal (two-target runs).
    #[arg(long)]
    signal_channel: Option<usize>,
    #[arg(long, default_value_t = 3.0)]
    signal_radius: f64,
    #[arg(long, default_value_t = 1.0)]
    signal_magnitude: f64,
    #[arg(long, default_value_t = 0.5)]
    switch_prob: f64,
    /// Save `<out>.epochK.ncam` checkpoints every K epochs (0 = off).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    #[arg(long)]
    out: String,
    #[arg(long)]
    loss_log: Option<String>,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    /// Event script JSON (signals/perturbations with timesteps).
    #[arg(long)]
    events: Option<String>,
    /// Start from uniform noise of this amplitude instead of the centre seed.
    #[arg(long)]
    noise_init: Option<f64>,
    #[arg(long)]
    out: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtractModeArg {
    Macro,
    Micro,
    Window,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    traj: String,
    #[arg(long, value_enum, default_value_t = ExtractModeArg::Macro)]
    mode: ExtractModeArg,
    /// Micro mode: keep cells whose alpha is below the alive threshold too.
    #[arg(long)]
    include_dead: bool,
    /// Micro mode: uniform random cap on the number of cell points.
    #[arg(long, default_value_t = 100_000)]
    max_points: usize,
    /// Window mode: half-open cell rectangle `r0,c0,r1,c1`.
    #[arg(long, value_delimiter = ',')]
    rect: Option<Vec<usize>>,
    /// Window mode: half-open recorded-frame range `t0,t1`.
    #[arg(long, value_delimiter = ',')]
    frames: Option<Vec<usize>>,
    #[arg(long)]
    out: String,
}

#[derive(Args)]
struct PcaArgs {
    #[arg(long = "in")]
    input: String,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long)]
    out: Option<String>,
    /// Write the latent coordinates of the input cloud as CSV.
    #[arg(long)]
    coords: Option<String>,
    #[arg(long)]
    svg: Option<String>,
}

#[derive(Args)]
struct AeArgs {
    #[arg(long)]
    cloud: String,
    #[arg(long, default_value_t = 2)]
    latent: usize,
    /// Drop all activations (the optimum then matches PCA).
    #[arg(long)]
    linear: bool,
    /// Encoder hidden widths, e.g. `64,32`.
    #[arg(long, value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    coords: Option<String>,
    #[arg(long)]
    svg: Option<String>,
}

#[derive(Args)]
struct SaeArgs {
    #[arg(long)]
    cloud: String,
    /// Dictionary size as a multiple of the input dimension.
    #[arg(long, default_value_t = 8)]
    expansion: usize,
    #[arg(long, default_value_t = 1e-3)]
    l1: f64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    out: Option<String>,
    /// Reconstruction/sparsity statistics as JSON.
    #[arg(long)]
    stats: Option<String>,
    /// Trajectory whose per-frame mean feature cloud to emit.
    #[arg(long)]
    frame_traj: Option<String>,
    #[arg(long)]
    frame_features: Option<String>,
}

#[derive(Args)]
struct PhArgs {
    #[arg(long)]
    cloud: String,
    #[arg(long, default_value_t = 2)]
    maxdim: usize,
    /// Maxmin subsample budget before building the filtration.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    max_radius: Option<f64>,
    /// Significance cutoff for the Betti report (default from the diagram).
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: String,
    #[arg(long)]
    svg: Option<String>,
    /// Betti report JSON (counts of significant classes).
    #[arg(long)]
    report: Option<String>,
}

#[derive(Args)]
struct FieldArgs {
    #[arg(long)]
    traj: String,
    #[arg(long)]
    basis: String,
    #[arg(long)]
    model: String,
    /// Rendered field SVG.
    #[arg(long)]
    out: Option<String>,
    /// Field CSV `x,y,dx,dy,valid`.
    #[arg(long)]
    csv: String,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    k_neighbours: Option<usize>,
    #[arg(long)]
    nca_steps: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: String,
    /// Directory artifacts are written into (created if missing).
    #[arg(long, default_value = ".")]
    workdir: String,
}

/// PNG -> `[h, w, c_vis]` target in [0,1]. RgbaAlive keeps the alpha
/// channel; RgbPlain drops it.
fn load_target(path: &str, mode: ChannelMode) -> Result<Array3<f32>, Error> {
    let img = image::open(path)
        .map_err(|e| Error::Validation(format!("cannot read target {path}: {e}")))?
        .to_rgba8();
    let (w, h) = img.dimensions();
    let c_vis = mode.visible_channels();
    let mut t = Array3::zeros((h as usize, w as usize, c_vis));
    for (x, y, px) in img.enumerate_pixels() {
        for ch in 0..c_vis {
            t[(y as usize, x as usize, ch)] = px.0[ch] as f32 / 255.0;
        }
    }
    Ok(t)
}

fn checkpoint_path(out: &str, epoch: usize) -> String {
    match out.strip_suffix(".ncam") {
        Some(stem) => format!("{stem}.epoch{epoch}.ncam"),
        None => format!("{out}.epoch{epoch}"),
    }
}

fn cmd_train(args: &TrainArgs, seed: u64) -> Result<(), Error> {
    let mode: ChannelMode = args.mode.into();
    if args.target.is_empty() || args.target.len() > 2 {
        return Err(Error::Validation(format!(
            "expected 1 or 2 --target images, got {}",
            args.target.len()
        )));
    }
    let targets: Vec<Array3<f32>> = args
        .target
        .iter()
        .map(|p| load_target(p, mode))
        .collect::<Result<_, _>>()?;
    let (h, w) = (targets[0].dim().0, targets[0].dim().1);
    let target = if targets.len() == 1 {
        TrainTarget::Fixed(targets[0].clone())
    } else {
        if targets[1].dim() != targets[0].dim() {
            return Err(Error::ShapeMismatch("the two target images differ in size".into()));
        }
        let channel = args.signal_channel.ok_or_else(|| {
            Error::Validation("two-target training needs --signal-channel".into())
        })?;
        TrainTarget::Switching {
            targets: [targets[0].clone(), targets[1].clone()],
            signal: SwitchSignal {
                channel,
                radius: args.signal_radius,
                magnitude: args.signal_magnitude,
                switch_prob: args.switch_prob,
            },
        }
    };

    let mut model = NcaModel::<f32>::new_seeded(args.channels, args.hidden, mode, seed)?;
    if let Some(fr) = args.fire_rate {
        model.fire_rate = fr;
    }
    let initial = GridState::<f32>::seed(h, w, args.channels, mode)?;
    let mut config = TrainConfig::for_epochs(args.epochs);
    config.rng_seed = seed;
    if let Some(b) = args.batch {
        config.batch_size = b;
    }
    if let Some(p) = args.pool {
        config.pool_size = p;
    }
    if let Some(s) = args.steps_min {
        config.steps_min = s;
    }
    if let Some(s) = args.steps_max {
        config.steps_max = s;
    }
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }

    let every = args.checkpoint_every;
    let out = args.out.clone();
    let (trained, log) = train_with(&model, &initial, &target, &config, |epoch, _loss, m| {
        if every > 0 && (epoch + 1) % every == 0 {
            m.save(&checkpoint_path(&out, epoch + 1))?;
        }
        Ok(())
    })?;
    trained.save(&args.out)?;
    println!("wrote {}", args.out);
    if let Some(path) = &args.loss_log {
        log.save_csv(path)?;
        println!("wrote {path}");
    }
    Ok(())
}

fn cmd_rollout(args: &RolloutArgs, seed: u64) -> Result<(), Error> {
    let model = NcaModel::<f32>::load(&args.model)?;
    let initial = match args.noise_init {
        None => GridState::<f32>::seed(args.height, args.width, model.channels(), model.channel_mode)?,
        Some(a) => {
            let mut g = GridState::<f32>::zeros(args.height, args.width, model.channels(), model.channel_mode)?;
            let mut rng = nca_scope_core::rng::StreamRng::new(seed, nca_scope_core::rng::stream::INIT);
            g.values_mut().mapv_inplace(|_| rng.range_f64(-a, a) as f32);
            g
        }
    };
    let events = match &args.events {
        Some(path) => EventScript::load(path)?,
        None => EventScript::empty(),
    };
    let traj = rollout(&model, &initial, args.steps, &events, seed, args.record_every)?;
    traj.save(&args.out)?;
    println!("wrote {} ({} frames)", args.out, traj.len());
    Ok(())
}

fn cmd_extract(args: &ExtractArgs, seed: u64) -> Result<(), Error> {
    let traj = Trajectory::load(&args.traj)?;
    let cloud = match args.mode {
        ExtractModeArg::Macro => extract_macroscopic(&traj)?,
        ExtractModeArg::Micro => extract_microscopic(&traj, !args.include_dead, args.max_points, seed)?,
        ExtractModeArg::Window => {
            let rect = match args.rect.as_deref() {
                Some([r0, c0, r1, c1]) => (*r0, *c0, *r1, *c1),
                _ => return Err(Error::Validation("window mode needs --rect r0,c0,r1,c1".into())),
            };
            let frames = match args.frames.as_deref() {
                Some([t0, t1]) => (*t0, *t1),
                _ => return Err(Error::Validation("window mode needs --frames t0,t1".into())),
            };
            window_subsample(&traj, rect, frames)?
        }
    };
    cloud.save_csv(&args.out)?;
    println!("wrote {} ({} points of dim {})", args.out, cloud.len(), cloud.dim());
    Ok(())
}

fn cmd_pca(args: &PcaArgs) -> Result<(), Error> {
    let cloud = PointCloud::load_csv(&args.input)?;
    let basis = pca_fit(&cloud, args.k)?;
    if let Some(path) = &args.out {
        basis.save(path)?;
        println!("wrote {path}");
    }
    if args.coords.is_some() || args.svg.is_some() {
        let embedded = project_cloud(&basis, &cloud)?;
        if let Some(path) = &args.coords {
            embedded.save_csv(path)?;
            println!("wrote {path}");
        }
        if let Some(path) = &args.svg {
            emit_scatter_svg(&embedded, path)?;
            println!("wrote {path}");
        }
    }
    let var: Vec<String> = basis.explained_variance.iter().map(|v| format!("{v:.4}")).collect();
    println!("explained variance: [{}]", var.join(", "));
    Ok(())
}

fn cmd_ae(args: &AeArgs, seed: u64) -> Result<(), Error> {
    let cloud = PointCloud::load_csv(&args.cloud)?;
    let arch = AeArchitecture::Mlp {
        hidden: args.hidden.clone(),
        linear: args.linear,
    };
    let mut opts = AeTrainOptions {
        rng_seed: seed,
        ..AeTrainOptions::default()
    };
    if let Some(e) = args.epochs {
        opts.epochs = e;
    }
    if let Some(b) = args.batch {
        opts.batch_size = b;
    }
    if let Some(lr) = args.lr {
        opts.learning_rate = lr;
    }
    let (model, log) = ae_fit_with_latent(cloud.points(), &arch, args.latent, &opts)?;
    println!("final loss {:.6}", log.losses().last().copied().unwrap_or(f64::NAN));
    if args.coords.is_some() || args.svg.is_some() {
        let embedded = cloud.with_points(model.encode(cloud.points())?)?;
        if let Some(path) = &args.coords {
            embedded.save_csv(path)?;
            println!("wrote {path}");
        }
        if let Some(path) = &args.svg {
            emit_scatter_svg(&embedded, path)?;
            println!("wrote {path}");
        }
    }
    Ok(())
}

fn cmd_sae(args: &SaeArgs, seed: u64) -> Result<(), Error> {
    let cloud = PointCloud::load_csv(&args.cloud)?;
    let mut opts = SaeTrainOptions {
        rng_seed: seed,
        ..SaeTrainOptions::default()
    };
    if let Some(e) = args.epochs {
        opts.epochs = e;
    }
    if let Some(b) = args.batch {
        opts.batch_size = b;
    }
    if let Some(lr) = args.lr {
        opts.learning_rate = lr;
    }
    let (model, stats) = sae_fit(cloud.points(), args.expansion, args.l1, &opts)?;
    println!(
        "mse {:.6}, mean active {:.2}, dead fraction {:.3}",
        stats.reconstruction_mse, stats.mean_active_features, stats.dead_feature_fraction
    );
    if let Some(path) = &args.out {
        model.save(path)?;
        println!("wrote {path}");
    }
    if let Some(path) = &args.stats {
        let json = serde_json::json!({
            "reconstruction_mse": stats.reconstruction_mse,
            "mean_active_features": stats.mean_active_features,
            "dead_feature_fraction": stats.dead_feature_fraction,
            "activation_threshold": stats.activation_threshold,
        });
        std::fs::write(path, serde_json::to_string_pretty(&json)?).map_err(|e| Error::Validation(format!("cannot write {path}: {e}")))?;
        println!("wrote {path}");
    }
    match (&args.frame_traj, &args.frame_features) {
        (Some(traj_path), Some(out)) => {
            let traj = Trajectory::load(traj_path)?;
            let features = per_frame_mean_features(&model, &traj, true)?;
            features.save_csv(out)?;
            println!("wrote {out}");
        }
        (None, None) => {}
        _ => {
            return Err(Error::Validation(
                "--frame-traj and --frame-features must be given together".into(),
            ))
        }
    }
    Ok(())
}

fn cmd_ph(args: &PhArgs, seed: u64) -> Result<(), Error> {
    let cloud = PointCloud::load_csv(&args.cloud)?;
    let total = cloud.len();
    let (cloud, coverage) = match args.budget {
        Some(budget) if budget < total => {
            let idx = maxmin_subsample(cloud.points(), budget, seed);
            (cloud.select(&idx)?, subsample_coverage(total, budget))
        }
        _ => (cloud, 1.0),
    };
    let dist = DistanceMatrix::from_points(cloud.points())?;
    let max_radius = args.max_radius.unwrap_or_else(|| dist.enclosing_radius());
    let diagram = rips_persistence(&dist, args.maxdim, max_radius)?;
    diagram.save_csv(&args.out)?;
    println!("wrote {} ({} intervals)", args.out, diagram.intervals().len());
    if let Some(path) = &args.svg {
        emit_diagram_svg(&diagram, path)?;
        println!("wrote {path}");
    }
    let threshold = args.threshold.unwrap_or_else(|| default_significance(&diagram));
    let report = betti_report(&diagram, threshold);
    println!(
        "betti (significant at {threshold:.4}): b0={} b1={} b2={}, coverage {:.3}%",
        report.h0,
        report.h1,
        report.h2,
        coverage * 100.0
    );
    if let Some(path) = &args.report {
        let json = serde_json::json!({
            "betti": report,
            "points_used": cloud.len(),
            "subsample_coverage": coverage,
            "max_radius": max_radius,
        });
        std::fs::write(path, serde_json::to_string_pretty(&json)?).map_err(|e| Error::Validation(format!("cannot write {path}: {e}")))?;
        println!("wrote {path}");
    }
    Ok(())
}

fn cmd_field(args: &FieldArgs, seed: u64) -> Result<(), Error> {
    let traj = Trajectory::load(&args.traj)?;
    let basis = PcaBasis::load(&args.basis)?;
    let model = NcaModel::<f32>::load(&args.model)?;
    let cloud = extract_macroscopic(&traj)?;
    let mut opts = FieldOptions {
        rng_seed: seed,
        ..FieldOptions::default()
    };
    if let Some(r) = args.resolution {
        opts.resolution = r;
    }
    if let Some(k) = args.k_neighbours {
        opts.k_neighbours = k;
    }
    if let Some(s) = args.nca_steps {
        opts.nca_steps = s;
    }
    let meta = traj.meta();
    let field = field_lines(&cloud, &basis, &model, meta.height, meta.width, &opts)?;
    field.save_csv(&args.csv)?;
    let valid = field.valid().iter().filter(|v| **v).count();
    println!("wrote {} ({valid}/{} grid points valid)", args.csv, field.len());
    if let Some(path) = &args.out {
        let embedded = cloud.with_points(pca_project(&basis, cloud.points())?)?;
        emit_field_svg(&field, &embedded, path)?;
        println!("wrote {path}");
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let config = ExperimentConfig::load(&args.config)?;
    let manifest = run_experiment(&config, &args.workdir)?;
    for a in &manifest.artifacts {
        println!("[{}] {} {}", a.stage, a.fnv1a64, a.path);
    }
    let total: f64 = manifest.stage_times.iter().map(|t| t.seconds).sum();
    println!(
        "{} stages, {} artifacts, {total:.2}s; manifest in {}",
        manifest.stage_times.len(),
        manifest.artifacts.len(),
        args.workdir
    );
    Ok(())
}

fn init_threads() {
    if let Ok(n) = std::env::var("NCA_SCOPE_THREADS") {
        if let Ok(n) = n.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, cli.seed),
        Command::Rollout(a) => cmd_rollout(a, cli.seed),
        Command::Extract(a) => cmd_extract(a, cli.seed),
        Command::Pca(a) => cmd_pca(a),
        Command::Ae(a) => cmd_ae(a, cli.seed),
        Command::Sae(a) => cmd_sae(a, cli.seed),
        Command::Ph(a) => cmd_ph(a, cli.seed),
        Command::Field(a) => cmd_field(a, cli.seed),
        Command::Run(a) => cmd_run(a),
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut cause = std::error::Error::source(&e);
            while let Some(c) = cause {
                eprintln!("  caused by: {c}");
                cause = c.source();
            }
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
