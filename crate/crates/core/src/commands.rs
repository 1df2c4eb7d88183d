//! The pipeline's entry points, one function per command-line subcommand.
//! Each takes plain arguments and returns a summary; printing is left to
//! the caller.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::bench::{bench_render, orbit_sequence, time_tiled_vs_brute, BenchReport};
use crate::error::{Error, Result};
use crate::io::{
    load_checkpoint, load_dataset, load_manifest, read_mask, read_query_embedding, save_checkpoint,
    save_rgb, write_mask, Checkpoint,
};
use crate::raster::{Camera, Orbit, RenderOptions};
use crate::scene::{init_from_pointcloud, init_random, Aabb, GaussianSet};
use crate::semantics::{
    miou, render_segmentation_mask, select_by_click, select_by_embedding, SelectionResult,
};
use crate::service::{selection_token, serve, AppState, ServiceConfig};
use crate::synth::{write_dataset, SynthConfig, SynthSummary, SyntheticScene};
use crate::train::{
    gradcheck, scene_extent, GradcheckProblem, GradcheckReport, Precision, StepRecord, TrainConfig,
    Trainer,
};
use crate::viz::{render_view, Channels};

pub fn cmd_synth(out_dir: &Path, preset: &str, seed: u64) -> Result<SynthSummary> {
    let cfg = SynthConfig::preset(preset, seed)?;
    write_dataset(&SyntheticScene::generate(&cfg), out_dir)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub iters: usize,
    pub warmup: usize,
    /// Must match the dataset's feature maps when given.
    pub feature_dim: Option<usize>,
    pub lambda_f: f64,
    pub seed: u64,
    pub precision: Precision,
    pub snapshot_every: Option<usize>,
    pub mlp_depth: usize,
    pub mlp_width: usize,
    /// Gaussians drawn uniformly in `[-1, 1]³` when the dataset has no
    /// point cloud.
    pub init_points: usize,
    /// Iteration at which the time jitter reaches zero; half of `iters` when unset.
    pub ast_anneal_end: Option<usize>,
}

impl Default for TrainArgs {
    fn default() -> Self {
        Self {
            data: PathBuf::from("manifest.json"),
            out: PathBuf::from("out"),
            iters: 40_000,
            warmup: 3_000,
            feature_dim: None,
            lambda_f: 1.0,
            seed: 0,
            precision: Precision::F64,
            snapshot_every: None,
            mlp_depth: 8,
            mlp_width: 256,
            init_points: 10_000,
            ast_anneal_end: None,
        }
    }
}

impl TrainArgs {
    /// Training configuration; the time-jitter anneal ends halfway through
    /// unless `ast_anneal_end` says otherwise.
    pub fn config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::new(self.iters, self.warmup);
        cfg.feature_loss_weight = self.lambda_f;
        cfg.seed = self.seed;
        cfg.precision = self.precision;
        cfg.snapshot_interval = self.snapshot_every;
        cfg.mlp_depth = self.mlp_depth;
        cfg.mlp_width = self.mlp_width;
        cfg.ast.anneal_end_iteration = self.ast_anneal_end.unwrap_or(self.iters / 2).max(1);
        cfg
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.dgdc";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    pub final_loss: f64,
    pub num_gaussians: usize,
}

/// Initial Gaussians: from the point cloud if there is one, else uniform.
pub fn initial_gaussians(
    pointcloud: Option<&crate::io::PointCloud>,
    feature_dim: usize,
    init_points: usize,
    seed: u64,
) -> Result<GaussianSet> {
    match pointcloud {
        Some(pc) => init_from_pointcloud(&pc.points, &pc.colors, feature_dim, seed),
        None => init_random(
            init_points,
            Aabb::new([-1.0; 3], [1.0; 3]),
            feature_dim,
            seed,
        ),
    }
}

pub fn cmd_train(args: &TrainArgs, mut on_step: impl FnMut(&StepRecord)) -> Result<TrainOutcome> {
    let ds = load_dataset(&args.data)?;
    let c = match (ds.feature_dim(), args.feature_dim) {
        (Some(d), Some(a)) if d != a => {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: a,
            })
        }
        (Some(d), _) => d,
        (None, Some(a)) => a,
        (None, None) => {
            return Err(Error::InvalidArgument(
                "dataset has no feature maps; pass --feature-dim".into(),
            ))
        }
    };
    let config = args.config();
    let gaussians = initial_gaussians(ds.pointcloud.as_ref(), c, args.init_points, args.seed)?;
    let cams: Vec<Camera> = ds.frames.iter().map(|f| f.camera.clone()).collect();
    let mut trainer = Trainer::new(gaussians, config, scene_extent(&cams))?;
    fs::create_dir_all(&args.out)?;
    let snapshot = args.snapshot_every.filter(|n| *n > 0);
    let out = args.out.clone();
    trainer.run(&ds.frames, |t, rec| {
        on_step(rec);
        if let Some(n) = snapshot {
            if t.iteration % n == 0 {
                save_checkpoint(
                    out.join(format!("snapshot_{:06}.dgdc", t.iteration)),
                    &t.checkpoint(),
                )?;
            }
        }
        Ok(())
    })?;
    let checkpoint = args.out.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &trainer.checkpoint())?;
    let report = args.out.join(REPORT_FILE);
    let text =
        serde_json::to_string_pretty(&trainer.report).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(&report, text)?;
    Ok(TrainOutcome {
        checkpoint,
        report,
        final_loss: trainer.report.steps.last().map_or(f64::NAN, |s| s.loss),
        num_gaussians: trainer.gaussians.len(),
    })
}

/// Where to look from.
#[derive(Debug, Clone, PartialEq)]
pub enum ViewSpec {
    /// A camera of the dataset manifest.
    CameraIndex(usize),
    /// An orbit pose with its own image size.
    Pose {
        orbit: Orbit,
        width: usize,
        height: usize,
    },
}

impl ViewSpec {
    /// The camera, and the frame time for dataset cameras.
    pub fn resolve(&self, data: Option<&Path>) -> Result<(Camera, Option<f64>)> {
        match self {
            Self::Pose {
                orbit,
                width,
                height,
            } => Ok((Camera::orbit(orbit, *width, *height)?, None)),
            Self::CameraIndex(k) => {
                let path = data
                    .ok_or_else(|| Error::InvalidArgument("--camera-index needs --data".into()))?;
                let manifest = load_manifest(path)?;
                let n = manifest.frames.len();
                let rec = manifest.frames.get(*k).ok_or_else(|| {
                    Error::InvalidArgument(format!("camera index {k} out of range ({n} frames)"))
                })?;
                Ok((rec.camera()?, Some(rec.time)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderArgs {
    pub ckpt: PathBuf,
    pub data: Option<PathBuf>,
    pub view: ViewSpec,
    /// Defaults to the dataset frame's time, else 0.
    pub time: Option<f64>,
    pub out: PathBuf,
    pub channels: Channels,
}

pub fn cmd_render(args: &RenderArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let (cam, frame_time) = args.view.resolve(args.data.as_deref())?;
    let t = args.time.or(frame_time).unwrap_or(0.0);
    let img = render_view(
        &ckpt.gaussians,
        &ckpt.field,
        &cam,
        t,
        args.channels,
        &RenderOptions::default(),
    )?;
    save_rgb(&args.out, &img)
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuerySpec {
    /// A `DGDQ` file.
    Embedding(PathBuf),
    Click {
        x: usize,
        y: usize,
        view: ViewSpec,
        /// Defaults to the dataset frame's time, else 0.
        time: Option<f64>,
    },
}

/// Runs the query against a loaded checkpoint.
pub fn run_query(
    ckpt: &Checkpoint,
    query: &QuerySpec,
    theta: f64,
    data: Option<&Path>,
) -> Result<SelectionResult> {
    match query {
        QuerySpec::Embedding(path) => {
            let q = read_query_embedding(path)?;
            select_by_embedding(&ckpt.gaussians, &q, theta)
        }
        QuerySpec::Click { x, y, view, time } => {
            let (cam, ft) = view.resolve(data)?;
            let t = time.or(ft).unwrap_or(0.0);
            select_by_click(&ckpt.gaussians, &ckpt.field, &cam, t, (*x, *y), theta)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentArgs {
    pub ckpt: PathBuf,
    pub data: Option<PathBuf>,
    pub query: QuerySpec,
    pub theta: f64,
    /// View for the masks; defaults to the click's view.
    pub mask_view: Option<ViewSpec>,
    pub times: Vec<f64>,
    pub out_masks: PathBuf,
    pub mask_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentOutcome {
    pub selection: SelectionResult,
    pub selection_token: String,
    pub masks: Vec<(f64, PathBuf)>,
}

pub fn cmd_segment(args: &SegmentArgs) -> Result<SegmentOutcome> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let selection = run_query(&ckpt, &args.query, args.theta, args.data.as_deref())?;
    let view = match (&args.mask_view, &args.query) {
        (Some(v), _) => v.clone(),
        (None, QuerySpec::Click { view, .. }) => view.clone(),
        (None, QuerySpec::Embedding(_)) => {
            return Err(Error::InvalidArgument(
                "an embedding query needs a mask view (--camera-index or --pose)".into(),
            ))
        }
    };
    let (cam, _) = view.resolve(args.data.as_deref())?;
    fs::create_dir_all(&args.out_masks)?;
    let mut masks = Vec::with_capacity(args.times.len());
    for (k, &t) in args.times.iter().enumerate() {
        let mask = render_segmentation_mask(
            &ckpt.gaussians,
            &ckpt.field,
            &selection.gaussian_ids,
            &cam,
            t,
            args.mask_alpha,
        )?;
        let path = args.out_masks.join(format!("mask_{k:03}.png"));
        write_mask(&path, &mask)?;
        masks.push((t, path));
    }
    let outcome = SegmentOutcome {
        selection_token: selection_token(&selection.gaussian_ids),
        selection,
        masks,
    };
    let text = serde_json::to_string_pretty(&outcome).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(args.out_masks.join("selection.json"), text)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalArgs {
    pub ckpt: PathBuf,
    /// Manifest whose frames are evaluated.
    pub data: PathBuf,
    /// Directory of ground-truth masks named `<prefix><frame:03>.png`.
    pub masks: PathBuf,
    pub prefix: String,
    pub query: QuerySpec,
    pub theta: f64,
    pub mask_alpha: f64,
    pub scene: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiouTable {
    pub scene: String,
    pub per_frame: Vec<f64>,
    pub miou: f64,
}

impl MiouTable {
    pub fn to_table(&self) -> String {
        format!(
            "| Method | {} |\n|---|---|\n| ours | {:.3} |\n",
            self.scene, self.miou
        )
    }
}

/// Selects once, renders the selection at every frame's camera and time,
/// and compares with the ground-truth masks.
pub fn cmd_eval_miou(args: &EvalArgs) -> Result<MiouTable> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let manifest = load_manifest(&args.data)?;
    let selection = run_query(&ckpt, &args.query, args.theta, Some(&args.data))?;
    let mut pred = Vec::with_capacity(manifest.frames.len());
    let mut gt = Vec::with_capacity(manifest.frames.len());
    for (k, rec) in manifest.frames.iter().enumerate() {
        let cam = rec.camera()?;
        pred.push(render_segmentation_mask(
            &ckpt.gaussians,
            &ckpt.field,
            &selection.gaussian_ids,
            &cam,
            rec.time,
            args.mask_alpha,
        )?);
        gt.push(read_mask(
            args.masks.join(format!("{}{k:03}.png", args.prefix)),
        )?);
    }
    let per_frame = pred
        .iter()
        .zip(&gt)
        .map(|(p, g)| p.iou(g))
        .collect::<Result<Vec<_>>>()?;
    Ok(MiouTable {
        scene: args.scene.clone(),
        miou: miou(&pred, &gt)?,
        per_frame,
    })
}

/// Static and deformed (`t = 0.5`) checks at the requested size.
pub fn cmd_gradcheck(
    size: &str,
    precision: Precision,
) -> Result<Vec<(&'static str, GradcheckReport)>> {
    if precision != Precision::F64 {
        return Err(Error::InvalidArgument(
            "gradcheck requires --precision f64".into(),
        ));
    }
    let make = |deformed| match size {
        "tiny" => Ok(GradcheckProblem::tiny(deformed)),
        "small" => Ok(GradcheckProblem::small(deformed)),
        other => Err(Error::InvalidArgument(format!(
            "unknown size '{other}' (expected tiny or small)"
        ))),
    };
    Ok(vec![
        ("static", gradcheck(&make(false)?, 1e-5)),
        ("deformed", gradcheck(&make(true)?, 1e-5)),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchArgs {
    pub ckpt: PathBuf,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub radius: f64,
    /// Also time one brute-force render for comparison.
    pub compare_brute_force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchOutcome {
    pub report: BenchReport,
    /// `(tiled seconds, brute-force seconds)` for one frame.
    pub tiled_vs_brute: Option<(f64, f64)>,
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchOutcome> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let views = orbit_sequence(args.frames, args.radius, args.width, args.height)?;
    let options = RenderOptions::default();
    let report = bench_render(&ckpt.gaussians, &ckpt.field, &views, &options)?;
    let tiled_vs_brute = match (args.compare_brute_force, views.first()) {
        (true, Some((cam, t))) => {
            let scene = crate::deformation::apply_deformation(&ckpt.gaussians, &ckpt.field, *t)?;
            Some(time_tiled_vs_brute(&scene, cam, &options))
        }
        _ => None,
    };
    Ok(BenchOutcome {
        report,
        tiled_vs_brute,
    })
}

/// Loads the checkpoint (and dataset cameras, if given) and serves until
/// the process is stopped.
pub fn cmd_serve(
    ckpt: &Path,
    data: Option<&Path>,
    port: u16,
    workers: Option<usize>,
) -> Result<()> {
    let checkpoint = load_checkpoint(ckpt)?;
    let cameras = match data {
        Some(p) => load_manifest(p)?.cameras()?,
        None => Vec::new(),
    };
    let mut config = ServiceConfig::default();
    if let Some(w) = workers {
        config.workers = w.max(1);
    }
    let state = Arc::new(AppState::new(checkpoint, cameras, config));
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(serve(state, addr))?;
    Ok(())
}
