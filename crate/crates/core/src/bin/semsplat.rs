use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use semsplat::commands::{
    cmd_bench, cmd_eval_miou, cmd_gradcheck, cmd_render, cmd_segment, cmd_serve, cmd_synth,
    cmd_train, BenchArgs, EvalArgs, QuerySpec, RenderArgs, SegmentArgs, TrainArgs, ViewSpec,
};
use semsplat::raster::Orbit;
use semsplat::semantics::{DEFAULT_MASK_ALPHA, DEFAULT_THETA};
use semsplat::train::Precision;
use semsplat::viz::Channels;
use semsplat::{Error, Result};

#[derive(Parser)]
#[command(
    name = "semsplat",
    version,
    about = "Dynamic semantic Gaussian splatting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F64,
    F32,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F64 => Precision::F64,
            PrecisionArg::F32 => Precision::F32,
        }
    }
}

#[derive(clap::Args)]
struct ViewArgs {
    /// Camera of the dataset manifest given by --data.
    #[arg(long, conflicts_with = "pose")]
    camera_index: Option<usize>,
    /// Orbit pose "azimuth,elevation,radius[,fov]" in degrees.
    #[arg(long)]
    pose: Option<String>,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
}

impl ViewArgs {
    fn spec(&self) -> Result<Option<ViewSpec>> {
        if let Some(k) = self.camera_index {
            return Ok(Some(ViewSpec::CameraIndex(k)));
        }
        let Some(pose) = &self.pose else {
            return Ok(None);
        };
        let v = parse_list(pose)?;
        if !(3..=4).contains(&v.len()) {
            return Err(Error::InvalidArgument(format!(
                "--pose needs 3 or 4 numbers, got '{pose}'"
            )));
        }
        let orbit = Orbit {
            azimuth_deg: v[0],
            elevation_deg: v[1],
            radius: v[2],
            target: [0.0; 3],
            fov_y_deg: v.get(3).copied().unwrap_or(45.0),
        };
        Ok(Some(ViewSpec::Pose {
            orbit,
            width: self.width,
            height: self.height,
        }))
    }

    fn require(&self) -> Result<ViewSpec> {
        self.spec()?.ok_or_else(|| {
            Error::InvalidArgument("a view is required (--camera-index or --pose)".into())
        })
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("'{p}' is not a number")))
        })
        .collect()
}

#[derive(clap::Args)]
struct QueryArgs {
    /// Query embedding file (DGDQ).
    #[arg(long, conflicts_with = "click")]
    query_embedding: Option<PathBuf>,
    /// Pixel to click, in the view given by --camera-index or --pose.
    #[arg(long, num_args = 2, value_names = ["X", "Y"])]
    click: Option<Vec<usize>>,
    /// Time of the click; defaults to the dataset frame's time.
    #[arg(long)]
    time: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    theta: f64,
}

impl QueryArgs {
    fn spec(&self, view: Option<ViewSpec>) -> Result<QuerySpec> {
        match (&self.query_embedding, &self.click) {
            (Some(p), _) => Ok(QuerySpec::Embedding(p.clone())),
            (None, Some(xy)) => Ok(QuerySpec::Click {
                x: xy[0],
                y: xy[1],
                view: view.ok_or_else(|| {
                    Error::InvalidArgument("--click needs --camera-index or --pose".into())
                })?,
                time: self.time,
            }),
            (None, None) => Err(Error::InvalidArgument(
                "pass --query-embedding or --click".into(),
            )),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Synth {
        out_dir: PathBuf,
        #[arg(long, default_value = "two-blob")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a dataset manifest.
    Train {
        data: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 40_000)]
        iters: usize,
        #[arg(long, default_value_t = 3_000)]
        warmup: usize,
        #[arg(long)]
        feature_dim: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        lambda_f: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "f64")]
        precision: PrecisionArg,
        #[arg(long)]
        snapshot_every: Option<usize>,
        #[arg(long, default_value_t = 8)]
        mlp_depth: usize,
        #[arg(long, default_value_t = 256)]
        mlp_width: usize,
        #[arg(long, default_value_t = 10_000)]
        init_points: usize,
        /// Iteration at which the time jitter reaches zero (default: iters / 2).
        #[arg(long)]
        ast_anneal_end: Option<usize>,
        /// Print the loss every this many iterations (0 = never).
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Render a view of a checkpoint to PNG.
    Render {
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        view: ViewArgs,
        #[arg(long)]
        time: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "color")]
        channels: Channels,
    },
    /// Select Gaussians and write masks over time.
    Segment {
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        query: QueryArgs,
        #[command(flatten)]
        view: ViewArgs,
        #[arg(long)]
        out_masks: PathBuf,
        /// Comma-separated times for the masks.
        #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
        times: String,
        #[arg(long, default_value_t = DEFAULT_MASK_ALPHA)]
        mask_alpha: f64,
    },
    /// Mean IoU against ground-truth masks.
    EvalMiou {
        ckpt: PathBuf,
        /// Manifest whose frames are evaluated.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        /// File name prefix of the ground-truth masks.
        #[arg(long, default_value = "a_")]
        prefix: String,
        #[command(flatten)]
        query: QueryArgs,
        #[command(flatten)]
        view: ViewArgs,
        #[arg(long, default_value_t = DEFAULT_MASK_ALPHA)]
        mask_alpha: f64,
        #[arg(long, default_value = "scene")]
        scene: String,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long, default_value = "tiny")]
        size: String,
        #[arg(long, value_enum, default_value = "f64")]
        precision: PrecisionArg,
    },
    /// Time rendering along an orbit.
    Bench {
        ckpt: PathBuf,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 512)]
        height: usize,
        #[arg(long, default_value_t = 3.0)]
        radius: f64,
        #[arg(long)]
        compare_brute_force: bool,
    },
    /// Serve the viewer API.
    Serve {
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            out_dir,
            preset,
            seed,
        } => {
            let s = cmd_synth(&out_dir, &preset, seed)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&s).map_err(|e| Error::Parse(e.to_string()))?
            );
        }
        Command::Train {
            data,
            out,
            iters,
            warmup,
            feature_dim,
            lambda_f,
            seed,
            precision,
            snapshot_every,
            mlp_depth,
            mlp_width,
            init_points,
            ast_anneal_end,
            log_every,
        } => {
            let args = TrainArgs {
                data,
                out,
                iters,
                warmup,
                feature_dim,
                lambda_f,
                seed,
                precision: precision.into(),
                snapshot_every,
                mlp_depth,
                mlp_width,
                init_points,
                ast_anneal_end,
            };
            let done = cmd_train(&args, |r| {
                if log_every > 0 && r.iteration % log_every == 0 {
                    println!(
                        "iter {:>6}  loss {:.5}  color {:.5}  feature {:.5}  gaussians {}",
                        r.iteration, r.loss, r.color_loss, r.feature_loss, r.num_gaussians
                    );
                }
            })?;
            println!(
                "wrote {} and {} ({} Gaussians, final loss {:.5})",
                done.checkpoint.display(),
                done.report.display(),
                done.num_gaussians,
                done.final_loss
            );
        }
        Command::Render {
            ckpt,
            data,
            view,
            time,
            out,
            channels,
        } => {
            cmd_render(&RenderArgs {
                ckpt,
                data,
                view: view.require()?,
                time,
                out: out.clone(),
                channels,
            })?;
            println!("wrote {}", out.display());
        }
        Command::Segment {
            ckpt,
            data,
            query,
            view,
            out_masks,
            times,
            mask_alpha,
        } => {
            let spec = view.spec()?;
            let done = cmd_segment(&SegmentArgs {
                ckpt,
                data,
                query: query.spec(spec.clone())?,
                theta: query.theta,
                mask_view: spec,
                times: parse_list(&times)?,
                out_masks,
                mask_alpha,
            })?;
            println!(
                "selected {} Gaussians (token {})",
                done.selection.gaussian_ids.len(),
                done.selection_token
            );
            for (t, p) in &done.masks {
                println!("t={t:.3}  {}", p.display());
            }
        }
        Command::EvalMiou {
            ckpt,
            data,
            masks,
            prefix,
            query,
            view,
            mask_alpha,
            scene,
        } => {
            let table = cmd_eval_miou(&EvalArgs {
                ckpt,
                data,
                masks,
                prefix,
                query: query.spec(view.spec()?)?,
                theta: query.theta,
                mask_alpha,
                scene,
            })?;
            print!("{}", table.to_table());
        }
        Command::Gradcheck { size, precision } => {
            let reports = cmd_gradcheck(&size, precision.into())?;
            let mut ok = true;
            for (name, r) in &reports {
                println!("== {name} ==\n{}", r.to_text());
                ok &= r.passed();
            }
            if !ok {
                return Err(Error::InvalidArgument("gradient check failed".into()));
            }
        }
        Command::Bench {
            ckpt,
            frames,
            width,
            height,
            radius,
            compare_brute_force,
        } => {
            let b = cmd_bench(&BenchArgs {
                ckpt,
                frames,
                width,
                height,
                radius,
                compare_brute_force,
            })?;
            print!("{}", b.report.to_table());
            if let Some((tiled, brute)) = b.tiled_vs_brute {
                println!(
                    "tiled {:.1} ms, brute force {:.1} ms, speedup {:.1}x",
                    tiled * 1e3,
                    brute * 1e3,
                    brute / tiled
                );
            }
        }
        Command::Serve {
            ckpt,
            data,
            port,
            workers,
        } => {
            println!("listening on http://127.0.0.1:{port}");
            cmd_serve(&ckpt, data.as_deref(), port, workers)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("DGD_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
