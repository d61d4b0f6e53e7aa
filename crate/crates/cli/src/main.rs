use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use factgs::bench::{self, BenchConfig, PatternKind, PatternSpec, SceneGenConfig};
use factgs::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use factgs::compositor::{render, TextureSampling};
use factgs::diff::{grad_check, GRADCHECK_ABS_FLOOR};
use factgs::io::{
    load_cameras, load_scene_file, load_views, serialize_scene, write_camera_file, write_image,
    CameraEntry, CameraFile, ImageFormat,
};
use factgs::loss::{psnr, ssim_index, SSIM_WINDOW};
use factgs::metrics::{
    jacobian_density_map, target_density, write_map_csv, FrequencyReport, DEFAULT_HISTOGRAM_BINS,
};
use factgs::train::{
    stage1_train, stage2_train, train_stage_with_checkpoints, TrainConfig, TrainMode,
};
use factgs::Scene;

#[derive(Parser)]
#[command(
    name = "factgs",
    version,
    about = "Textured Gaussian splatting with learned texture warps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Checkerboard,
    Stripes,
    FrequencySweep,
    FlatPlusEdge,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fact,
    Uniform,
    NoTexture,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fact => TrainMode::Fact,
            ModeArg::Uniform => TrainMode::Uniform,
            ModeArg::NoTexture => TrainMode::NoTexture,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Ppm,
    Png,
}

impl From<FormatArg> for ImageFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Ppm => ImageFormat::Ppm,
            FormatArg::Png => ImageFormat::Png,
        }
    }
}

impl FormatArg {
    fn ext(self) -> &'static str {
        match self {
            FormatArg::Ppm => "ppm",
            FormatArg::Png => "png",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write an analytic pattern, a scene, cameras and reference images.
    Synth {
        #[arg(long, value_enum)]
        pattern: PatternArg,
        /// Pattern resolution in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        views: usize,
        /// Nonzero seeds jitter the initial primitive centers.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        primitives: usize,
        #[arg(long, default_value_t = 4)]
        tau: usize,
        /// Rendered view size; defaults to the pattern size.
        #[arg(long)]
        image_size: Option<usize>,
        /// Checkerboard cell, stripe period or edge column.
        #[arg(long)]
        param: Option<f64>,
    },
    /// Run stage 1, stage 2 or both.
    Train {
        #[arg(long, required_unless_present = "resume")]
        scene: Option<PathBuf>,
        /// Start from a checkpoint instead of a scene file.
        #[arg(long, conflicts_with = "scene")]
        resume: Option<PathBuf>,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        /// Iterations per stage.
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 0.2)]
        eta: f64,
        #[arg(long, default_value_t = 2.5e-3)]
        lr_tex: f64,
        #[arg(long, default_value_t = 1e-3)]
        lr_def: f64,
        #[arg(long, default_value_t = 1.0)]
        mask_weight: f64,
        #[arg(long, default_value_t = 0.0)]
        fold_reg: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "fact")]
        mode: ModeArg,
        #[arg(long)]
        checkpoint_out: PathBuf,
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        /// Fixed-order gradient reduction; bit-reproducible across thread counts.
        #[arg(long)]
        deterministic: bool,
        /// Write the per-iteration loss trajectory as CSV.
        #[arg(long)]
        loss_log: Option<PathBuf>,
        /// Also write the trained scene as a scene document.
        #[arg(long)]
        scene_out: Option<PathBuf>,
    },
    /// Render every camera of a camera file.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        srgb: bool,
        #[arg(long, value_enum, default_value = "ppm")]
        format: FormatArg,
    },
    /// PSNR and SSIM against the reference images of a camera file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Texture frequency statistics, Jacobian maps and target densities.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Reference views for target-density maps.
        #[arg(long)]
        cameras: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
        bins: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha_exp: f64,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        h: f64,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, value_enum, default_value = "fact")]
        mode: ModeArg,
        /// L1 weight; defaults to the training value, or to 1 (pure L1)
        /// when a view is smaller than the SSIM window.
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Train several texture modes from one stage-1 result and report.
    Compare {
        /// JSON bench configuration; omitted fields take defaults.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Where comparison images go; defaults to the report's directory.
        #[arg(long)]
        images_dir: Option<PathBuf>,
    },
}

enum Failure {
    Data(String),
    Check(String),
}

impl From<factgs::Error> for Failure {
    fn from(e: factgs::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<factgs::checkpoint::CheckpointError> for Failure {
    fn from(e: factgs::checkpoint::CheckpointError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<factgs::io::ParseError> for Failure {
    fn from(e: factgs::io::ParseError) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Synth {
            pattern,
            size,
            out_dir,
            views,
            seed,
            primitives,
            tau,
            image_size,
            param,
        } => synth(
            pattern, size, &out_dir, views, seed, primitives, tau, image_size, param,
        ),
        Command::Train {
            scene,
            resume,
            cameras,
            stage,
            iters,
            lambda,
            eta,
            lr_tex,
            lr_def,
            mask_weight,
            fold_reg,
            seed,
            mode,
            checkpoint_out,
            checkpoint_every,
            deterministic,
            loss_log,
            scene_out,
        } => {
            let cfg = TrainConfig {
                stage1_iters: iters,
                stage2_iters: iters,
                lambda,
                eta,
                lr_texture: lr_tex,
                lr_deformation: lr_def,
                mask_weight,
                fold_reg_weight: fold_reg,
                seed,
                mode: mode.into(),
                checkpoint_every,
                deterministic,
                ..TrainConfig::default()
            };
            let initial = match (scene, resume) {
                (Some(path), _) => load_scene_file(&path)?,
                (None, Some(path)) => load_checkpoint(&path)?.scene,
                (None, None) => unreachable!("clap requires one of --scene/--resume"),
            };
            train(
                initial,
                &cameras,
                stage,
                &cfg,
                &checkpoint_out,
                loss_log.as_deref(),
                scene_out.as_deref(),
            )
        }
        Command::Render {
            checkpoint,
            cameras,
            out_dir,
            srgb,
            format,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            fs::create_dir_all(&out_dir)?;
            for (k, cam) in load_cameras(&cameras)?.iter().enumerate() {
                let out = render(&ckpt.scene, cam, &ckpt.settings)?;
                let path = out_dir.join(format!("render_{k}.{}", format.ext()));
                write_image(&out.image, &path, format.into(), srgb)?;
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            cameras,
            report,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let views = load_views(&cameras)?;
            let mut csv = String::from("view,psnr_db,ssim\n");
            for (k, v) in views.iter().enumerate() {
                let out = render(&ckpt.scene, &v.camera, &ckpt.settings)?;
                let p = psnr(&out.image, &v.image)?;
                let s = ssim_index(&out.image, &v.image)?;
                csv.push_str(&format!("{k},{p},{s}\n"));
                println!("view {k}: psnr {p:.4} dB, ssim {s:.5}");
            }
            fs::write(&report, csv)?;
            Ok(())
        }
        Command::Analyze {
            checkpoint,
            out_dir,
            cameras,
            resolution,
            bins,
            alpha_exp,
            epsilon,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            analyze(
                &ckpt,
                &out_dir,
                cameras.as_deref(),
                resolution,
                bins,
                alpha_exp,
                epsilon,
            )
        }
        Command::Gradcheck {
            scene,
            cameras,
            h,
            tol,
            lambda,
            mode,
            eta,
        } => {
            let scene = load_scene_file(&scene)?;
            let views = load_views(&cameras)?;
            let small = views
                .iter()
                .any(|v| v.camera.width < SSIM_WINDOW || v.camera.height < SSIM_WINDOW);
            let default_eta = if small {
                1.0
            } else {
                TrainConfig::default().eta
            };
            let cfg = TrainConfig {
                lambda,
                mode: mode.into(),
                eta: eta.unwrap_or(default_eta),
                ..TrainConfig::default()
            };
            let report = grad_check(
                &scene,
                &views,
                &cfg.loss_config(),
                &cfg.render_settings(),
                h,
                tol,
            )?;
            println!("block,entries,max_rel_error,worst_index,analytic,numeric,status");
            for b in &report.blocks {
                println!(
                    "{},{},{:.3e},{},{:.6e},{:.6e},{}",
                    b.block.name(),
                    b.entries,
                    b.max_rel_error,
                    b.worst_index.map_or("-".to_string(), |i| i.to_string()),
                    b.analytic,
                    b.numeric,
                    if b.passed { "ok" } else { "FAIL" }
                );
            }
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Check(format!(
                    "relative error above {tol} (abs floor {GRADCHECK_ABS_FLOOR})"
                )))
            }
        }
        Command::Compare {
            config,
            report,
            images_dir,
        } => {
            let cfg: BenchConfig = serde_json::from_slice(&fs::read(&config)?)
                .map_err(|e| Failure::Data(format!("{}: {e}", config.display())))?;
            let result = bench::run_comparison(&cfg)?;
            if let Some(parent) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            result.write_csv(BufWriter::new(File::create(&report)?))?;
            let dir = images_dir
                .unwrap_or_else(|| report.parent().unwrap_or(Path::new(".")).to_path_buf());
            result.write_images(&dir)?;
            for r in result.rows() {
                println!(
                    "{:<10} tau {:>2}  params {:>6}  psnr {:.3} dB  ssim {:.4}  freq {:.4}  train psnr {:.3} dB",
                    r.mode.name(),
                    r.tau,
                    r.texel_params,
                    r.psnr_db,
                    r.ssim,
                    r.mean_freq,
                    r.train_psnr_db
                );
            }
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn synth(
    pattern: PatternArg,
    size: usize,
    out_dir: &Path,
    views: usize,
    seed: u64,
    primitives: usize,
    tau: usize,
    image_size: Option<usize>,
    param: Option<f64>,
) -> CliResult {
    let kind = match pattern {
        PatternArg::Checkerboard => PatternKind::Checkerboard {
            cell: param.map_or(size / 8, |p| p as usize).max(1),
        },
        PatternArg::Stripes => PatternKind::Stripes {
            period: param.unwrap_or(8.0),
        },
        PatternArg::FrequencySweep => PatternKind::FrequencySweep {
            max_period: param.unwrap_or(size as f64 / 2.0),
            min_period: 2.0,
        },
        PatternArg::FlatPlusEdge => PatternKind::FlatPlusEdge {
            edge: param.map_or(size / 2, |p| p as usize),
        },
    };
    let spec = PatternSpec { kind, size };
    let image = bench::gen_pattern(&spec)?;
    let gen = SceneGenConfig {
        n_primitives: primitives,
        views,
        image_size: image_size.unwrap_or(size),
        tau,
        ..SceneGenConfig::default()
    };
    let (mut scene, views) = bench::gen_scene(&image, &gen)?;
    bench::jitter_centers(&mut scene, seed);
    fs::create_dir_all(out_dir)?;
    write_image(
        &image,
        &out_dir.join("pattern.ppm"),
        ImageFormat::Ppm,
        false,
    )?;
    fs::write(out_dir.join("scene.json"), serialize_scene(&scene))?;
    let mut entries = Vec::new();
    for (k, v) in views.iter().enumerate() {
        let name = format!("ref_{k}.ppm");
        write_image(&v.image, &out_dir.join(&name), ImageFormat::Ppm, false)?;
        entries.push(CameraEntry::from_camera(&v.camera, name));
    }
    write_camera_file(
        &out_dir.join("cameras.json"),
        &CameraFile { views: entries },
    )?;
    Ok(())
}

fn train(
    scene: Scene,
    cameras: &Path,
    stage: StageArg,
    cfg: &TrainConfig,
    out: &Path,
    loss_log: Option<&Path>,
    scene_out: Option<&Path>,
) -> CliResult {
    let views = load_views(cameras)?;
    let mut losses = Vec::new();
    let mut scene = scene;
    let mut last = None;
    if stage != StageArg::Two {
        let o = if cfg.checkpoint_every > 0 {
            train_stage_with_checkpoints(scene, &views, cfg, false, out)?
        } else {
            stage1_train(scene, &views, cfg)?
        };
        losses.extend(o.losses.iter().map(|&l| (1, l)));
        scene = o.scene.clone();
        last = Some(o);
    }
    if stage != StageArg::One {
        let o = if cfg.checkpoint_every > 0 {
            train_stage_with_checkpoints(scene, &views, cfg, true, out)?
        } else {
            stage2_train(scene, &views, cfg)?
        };
        losses.extend(o.losses.iter().map(|&l| (2, l)));
        last = Some(o);
    }
    let o = last.expect("at least one stage runs");
    save_checkpoint(out, &Checkpoint::new(&o.scene, &o.state, &o.settings))?;
    if let Some(path) = scene_out {
        fs::write(path, serialize_scene(&o.scene))?;
    }
    if let Some(path) = loss_log {
        let mut csv = String::from("stage,iteration,loss\n");
        let mut it = [0usize; 3];
        for (s, l) in losses {
            csv.push_str(&format!("{s},{},{l}\n", it[s]));
            it[s] += 1;
        }
        fs::write(path, csv)?;
    }
    if let (Some(first), Some(final_loss)) = (o.losses.first(), o.losses.last()) {
        println!(
            "loss {first:.6} -> {final_loss:.6} over {} iterations",
            o.losses.len()
        );
    }
    Ok(())
}

fn analyze(
    ckpt: &Checkpoint,
    out_dir: &Path,
    cameras: Option<&Path>,
    resolution: usize,
    bins: usize,
    alpha_exp: f64,
    epsilon: f64,
) -> CliResult {
    fs::create_dir_all(out_dir)?;
    let scene = &ckpt.scene;
    let freq = FrequencyReport::new(&scene.textures, bins);
    freq.write_csv(BufWriter::new(File::create(
        out_dir.join("texture_freq.csv"),
    )?))?;
    freq.histogram.write_csv(BufWriter::new(File::create(
        out_dir.join("freq_histogram.csv"),
    )?))?;
    println!(
        "texture frequency: mean {:.5}, median {:.5}",
        freq.mean, freq.median
    );

    let lambda = match ckpt.settings.sampling {
        TextureSampling::Warped => ckpt.settings.lambda,
        TextureSampling::Uniform => 0.0,
    };
    let mut summary = String::from("primitive,min_det,max_det,mean_det\n");
    for (i, d) in scene.deformations.iter().enumerate() {
        let map = jacobian_density_map(d, lambda, resolution);
        write_map_csv(
            &map,
            BufWriter::new(File::create(out_dir.join(format!("jacobian_{i}.csv")))?),
        )?;
        let min = map.data.iter().copied().fold(f64::INFINITY, f64::min);
        let max = map.data.iter().copied().fold(0.0, f64::max);
        let mean = map.data.iter().sum::<f64>() / map.data.len() as f64;
        summary.push_str(&format!("{i},{min},{max},{mean}\n"));
    }
    fs::write(out_dir.join("jacobian_summary.csv"), summary)?;

    if let Some(cameras) = cameras {
        for (k, v) in load_views(cameras)?.iter().enumerate() {
            let rho = target_density(&v.image, alpha_exp, epsilon);
            write_map_csv(
                &rho,
                BufWriter::new(File::create(
                    out_dir.join(format!("target_density_{k}.csv")),
                )?),
            )?;
            let max = rho.data.iter().copied().fold(0.0, f64::max);
            let mut shown = rho.clone();
            if max > 0.0 {
                shown.data.iter_mut().for_each(|x| *x /= max);
            }
            write_image(
                &shown,
                &out_dir.join(format!("target_density_{k}.ppm")),
                ImageFormat::Ppm,
                false,
            )?;
        }
    }
    Ok(())
}
