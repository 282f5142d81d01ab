//! `textprop` — propagate replaced scene text through video frames.
//!
//! Subcommands: `synth` (generate a synthetic clip with ground truth),
//! `select-ref` (score frames and pick the reference), `fit-blur` (fit
//! differential blur parameters for a window), `metrics` (compare frame
//! directories), and `propagate` (full pipeline).
//!
//! Exit codes: 0 success, 1 invalid input, 2 processing failure (the frame
//! index appears in the message).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use textprop_core::blur::fit_blur_params;
use textprop_core::error::Error;
use textprop_core::geometry::RoiQuad;
use textprop_core::imgcore::{read_png, write_png};
use textprop_core::metrics::{jitter, mse, psnr, ssim, BoxTrajectory};
use textprop_core::pipeline::{
    build_recipes, choose_reference, ingest, load_recipes, propagate, save_recipes, score_frames,
    PipelineConfig,
};
use textprop_core::refselect::{select_reference, FrameQuality};
use textprop_core::synth::{generate_clip, save_bundle, ScenarioSpec};

#[derive(Parser)]
#[command(name = "textprop", version, about = "Video scene-text propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic annotated clip with ground-truth trajectories.
    Synth(SynthArgs),
    /// Score frames and print the selected reference.
    SelectRef(SelectRefArgs),
    /// Fit differential blur parameters for a reference/window pair.
    FitBlur(FitBlurArgs),
    /// Compare prediction and ground-truth frame directories.
    Metrics(MetricsArgs),
    /// Propagate a replacement ROI through an annotated clip.
    Propagate(PropagateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario description (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for frames, manifest, and ground truth.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SelectRefArgs {
    /// Annotation manifest (JSON).
    #[arg(long)]
    annotations: PathBuf,
    /// Directory holding the frames named in the manifest.
    #[arg(long)]
    frames: PathBuf,
    /// Optional TOML config overriding pipeline defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FitBlurArgs {
    /// Reference ROI image.
    #[arg(long)]
    reference: PathBuf,
    /// Window ROI images, in temporal order.
    #[arg(long, num_args = 1.., required = true)]
    window: Vec<PathBuf>,
    /// Optional TOML config overriding pipeline defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Directory of predicted frames.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth frames (matched by file name).
    #[arg(long)]
    truth: PathBuf,
    /// Optional predicted box trajectory (lines: index x0 y0 ... x3 y3).
    #[arg(long)]
    pred_traj: Option<PathBuf>,
    /// Optional ground-truth box trajectory.
    #[arg(long)]
    truth_traj: Option<PathBuf>,
    /// Optional TOML config overriding pipeline defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PropagateArgs {
    /// Directory holding the input frames.
    #[arg(long)]
    frames: PathBuf,
    /// Annotation manifest (JSON).
    #[arg(long)]
    annotations: PathBuf,
    /// Replaced-text reference ROI at the canonical size.
    #[arg(long)]
    replacement_roi: PathBuf,
    /// Reference frame index (overrides automatic selection).
    #[arg(long)]
    ref_frame: Option<usize>,
    /// Optional TOML config overriding pipeline defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for propagated frames and the recipe sidecar.
    #[arg(long)]
    out: PathBuf,
    /// Reuse a previously saved recipe sidecar instead of rebuilding.
    #[arg(long)]
    recipes: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::SelectRef(args) => run_select_ref(args),
        Command::FitBlur(args) => run_fit_blur(args),
        Command::Metrics(args) => run_metrics(args),
        Command::Propagate(args) => run_propagate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            match err {
                Error::Frame { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig, Error> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn run_synth(args: SynthArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.spec).map_err(|e| Error::Io {
        path: args.spec.display().to_string(),
        source: e,
    })?;
    let spec: ScenarioSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let bundle = generate_clip(&spec)?;
    save_bundle(&bundle, &spec, &args.out_dir)?;
    println!(
        "wrote {} source/target frame pairs, manifest.json, ground_truth.json to {}",
        bundle.frames.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn run_select_ref(args: SelectRefArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config)?;
    let clip = ingest(&args.annotations, &args.frames)?;
    let measurements = score_frames(&clip, &cfg)?;
    println!("# index\tconfidence\tsharpness\ts1\ts2\tcomposite");
    for m in &measurements {
        let q = FrameQuality::from_measurement(m, cfg.alpha1, cfg.alpha2);
        println!(
            "{}\t{:.6}\t{:.6e}\t{:.6}\t{:.6}\t{:.6}",
            q.frame_index, q.ocr_confidence, q.sharpness, q.s1, q.s2, q.composite
        );
    }
    let selected = select_reference(
        &measurements,
        cfg.alpha1,
        cfg.alpha2,
        cfg.conf_floor,
        cfg.top_k,
    )?;
    println!("selected\t{selected}");
    Ok(())
}

fn run_fit_blur(args: FitBlurArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config)?;
    let reference = read_png(&args.reference)?;
    let window = args
        .window
        .iter()
        .map(read_png)
        .collect::<Result<Vec<_>, _>>()?;
    let result = fit_blur_params(&reference, &window, &cfg.fit_config())?;
    for p in &result.params {
        println!(
            "{:.6} {:.6} {:.6} {:.6}",
            p.sigma_x, p.sigma_y, p.rho, p.weight
        );
    }
    println!("objective {:.9e}", result.objective);
    println!("converged {}", result.converged);
    Ok(())
}

fn png_names(dir: &Path) -> Result<Vec<String>, Error> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.display().to_string(),
            source: e,
        })?
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| entry.file_name().into_string().ok())
        .filter(|name| name.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

fn read_trajectory(path: &Path) -> Result<BoxTrajectory, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut traj = BoxTrajectory::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: line_no + 1,
                message: format!("bad number in trajectory: {e}"),
            })?;
        if fields.len() != 9 {
            return Err(Error::Parse {
                line: line_no + 1,
                message: format!("expected 9 fields (index + 4 vertices), got {}", fields.len()),
            });
        }
        let quad = RoiQuad {
            vertices: [
                (fields[1], fields[2]),
                (fields[3], fields[4]),
                (fields[5], fields[6]),
                (fields[7], fields[8]),
            ],
        };
        traj.push(fields[0] as usize, quad).map_err(|e| Error::Parse {
            line: line_no + 1,
            message: e.to_string(),
        })?;
    }
    Ok(traj)
}

fn run_metrics(args: MetricsArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config)?;
    let pred_names = png_names(&args.pred)?;
    let truth_names = png_names(&args.truth)?;
    let common: Vec<&String> = pred_names
        .iter()
        .filter(|n| truth_names.contains(n))
        .collect();
    if common.is_empty() {
        return Err(Error::InvalidArgument(
            "no common PNG file names between the two directories".into(),
        ));
    }
    println!("# file\tmse\tpsnr\tssim");
    let mut mse_sum = 0.0;
    let mut ssim_sum = 0.0;
    for name in &common {
        let a = read_png(args.pred.join(name))?;
        let b = read_png(args.truth.join(name))?;
        let m = mse(&a, &b)?;
        let p = psnr(&a, &b)?;
        let s = ssim(&a, &b)?;
        println!("{name}\t{m:.8}\t{p:.4}\t{s:.6}");
        mse_sum += m;
        ssim_sum += s;
    }
    let n = common.len() as f64;
    let mean_mse = mse_sum / n;
    println!("aggregate\tmse\t{mean_mse:.8}");
    let agg_psnr = if mean_mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mean_mse).log10()
    };
    println!("aggregate\tpsnr\t{agg_psnr:.4}");
    println!("aggregate\tssim\t{:.6}", ssim_sum / n);
    if let Some(path) = &args.pred_traj {
        let traj = read_trajectory(path)?;
        println!(
            "jitter\tpred\t{:.6}",
            jitter(&traj, cfg.jitter_lowpass_window)?
        );
    }
    if let Some(path) = &args.truth_traj {
        let traj = read_trajectory(path)?;
        println!(
            "jitter\ttruth\t{:.6}",
            jitter(&traj, cfg.jitter_lowpass_window)?
        );
    }
    Ok(())
}

fn run_propagate(args: PropagateArgs) -> Result<(), Error> {
    let cfg = load_config(&args.config)?;
    let clip = ingest(&args.annotations, &args.frames)?;
    let replacement = read_png(&args.replacement_roi)?;

    let ref_index = match args.ref_frame {
        Some(idx) => idx,
        None => choose_reference(&clip, &cfg)?,
    };
    println!("reference\t{ref_index}");

    let (recipes, build_secs) = match &args.recipes {
        Some(path) => (load_recipes(path)?, 0.0),
        None => {
            let start = Instant::now();
            let recipes = build_recipes(&clip, ref_index, &cfg)?;
            (recipes, start.elapsed().as_secs_f64())
        }
    };

    let start = Instant::now();
    let outputs = propagate(&clip, &recipes, &replacement, &cfg)?;
    let prop_secs = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.display().to_string(),
        source: e,
    })?;
    for (frame, output) in clip.frames.iter().zip(&outputs) {
        write_png(output, args.out.join(&frame.annotation.file))?;
    }
    if args.recipes.is_none() {
        save_recipes(&recipes, args.out.join("recipes.json"))?;
    }

    let frames = outputs.len() as f64;
    println!("frames\t{}", outputs.len());
    println!("recipe_build_secs\t{build_secs:.3}");
    println!("propagate_secs\t{prop_secs:.3}");
    println!(
        "frames_per_second\t{:.3}",
        if prop_secs > 0.0 { frames / prop_secs } else { f64::INFINITY }
    );
    println!(
        "amortized_secs_per_frame\t{:.6}",
        (build_secs + prop_secs) / frames
    );
    Ok(())
}
