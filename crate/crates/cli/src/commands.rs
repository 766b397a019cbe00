//! Subcommand implementations. Each returns a value for tests and callers;
//! printing is left to the binary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use wpod_core::config::AppConfig;
use wpod_core::dataset::annotations::{format_quad_line, parse_annotations};
use wpod_core::dataset::pnm::{read_image, write_image};
use wpod_core::dataset::synth::synth_scene;
use wpod_core::dataset::{letterbox, make_batch, Sample, SynthConfig};
use wpod_core::edge::edge_maps;
use wpod_core::loss::rectify_plate;
use wpod_core::nn::{GradCheckOptions, GradCheckReport, ParamStore};
use wpod_core::train::{detect, grid_spec, network_grad_check, LogRecord, Trainer};
use wpod_core::{AdamConfig, Detection, Model, NetworkConfig, Quad, Tensor};

use crate::draw::{draw_quad, RED};
use crate::error::CliError;
use crate::eval::{evaluate_model, EvalReport};

/// First scene seed of the default synthetic evaluation set, far from the
/// training seeds.
pub const EVAL_SEED_OFFSET: u64 = 1_000_000;
pub const CROP_WIDTH: usize = 128;
pub const CROP_HEIGHT: usize = 64;
pub const GRADCHECK_SIZE: usize = 32;
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Annotation file; image paths are relative to its directory.
    Annotations(PathBuf),
    /// `count` generated scenes with seeds `first_seed..first_seed + count`.
    Synthetic { count: usize, first_seed: u64 },
}

/// Loaded samples and the number of unreadable images.
pub struct LoadedData {
    pub samples: Vec<Sample>,
    pub skipped: Vec<String>,
}

pub fn load_data(source: &DataSource, synth: &SynthConfig, skip_missing: bool) -> Result<LoadedData, CliError> {
    match source {
        DataSource::Synthetic { count, first_seed } => {
            synth.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let samples = (0..*count as u64)
                .map(|i| synth_scene(synth, first_seed + i))
                .collect();
            Ok(LoadedData {
                samples,
                skipped: Vec::new(),
            })
        }
        DataSource::Annotations(path) => {
            let records = parse_annotations(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
            let dir = path.parent().unwrap_or(Path::new("."));
            let mut samples = Vec::with_capacity(records.len());
            let mut skipped = Vec::new();
            for r in records {
                let image_path = resolve(dir, &r.image_path);
                match read_image(&image_path) {
                    Ok(image) => samples.push(Sample::new(image, r.quads, r.image_path)),
                    Err(_) if skip_missing => skipped.push(r.image_path),
                    Err(e) => return Err(CliError::io(format!("reading {}", image_path.display()), e)),
                }
            }
            Ok(LoadedData { samples, skipped })
        }
    }
}

fn resolve(dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    ensure_parent(path)?;
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(format!("creating {}", path.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn save_image(path: &Path, image: &Tensor) -> Result<(), CliError> {
    ensure_parent(path)?;
    write_image(path, image).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub config: AppConfig,
    pub data: DataSource,
    pub out: PathBuf,
    /// Overrides `config.train.iterations`.
    pub iterations: Option<usize>,
    pub seed: u64,
    /// Loss log path; defaults to the checkpoint path with `.log.csv`.
    pub log: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub adam: AdamConfig,
    pub log: Vec<LogRecord>,
    pub log_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

pub fn default_log_path(out: &Path) -> PathBuf {
    out.with_extension("log.csv")
}

fn intermediate_checkpoint(out: &Path, iter: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("ckpt");
    out.with_file_name(format!("{stem}.iter{iter}.{ext}"))
}

/// Trains from a fresh model initialized with `seed`. The loss log is
/// written as it goes; checkpoints every `checkpoint_every` iterations and at
/// the end.
pub fn cmd_train(args: &TrainArgs, mut progress: impl FnMut(&LogRecord)) -> Result<TrainOutcome, CliError> {
    let cfg = &args.config;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data = load_data(&args.data, &cfg.synth, false)?;
    if data.samples.is_empty() {
        return Err(CliError::Usage("no training samples".into()));
    }
    let iterations = args.iterations.unwrap_or(cfg.train.iterations);
    let model = Model::build(&cfg.network, args.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut trainer = Trainer::new(
        model,
        cfg.adam.clone(),
        &data.samples,
        cfg.train.clone(),
        cfg.augment.clone(),
        args.seed.wrapping_add(1),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;

    let log_path = args.log.clone().unwrap_or_else(|| default_log_path(&args.out));
    let mut log_file = create(&log_path)?;
    let log_err = |e: std::io::Error| CliError::io(format!("writing {}", log_path.display()), e);
    writeln!(log_file, "{}", LogRecord::CSV_HEADER).map_err(log_err)?;

    let every = cfg.train.checkpoint_every;
    let mut checkpoints = Vec::new();
    let mut failure: Option<CliError> = None;
    let log = trainer
        .run(iterations, |rec, t| {
            let done = rec.iter + 1;
            let mut step = || -> Result<(), CliError> {
                writeln!(log_file, "{}", rec.to_csv()).map_err(log_err)?;
                if every > 0 && done % every == 0 && done < iterations {
                    let path = intermediate_checkpoint(&args.out, done);
                    t.model
                        .save_checkpoint(&path, Some(&t.adam))
                        .map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
                    checkpoints.push(path);
                }
                Ok(())
            };
            progress(rec);
            step().map_err(|e| {
                let msg = e.to_string();
                failure = Some(e);
                wpod_core::TrainError::Callback(msg)
            })
        })
        .map_err(|e| failure.take().unwrap_or_else(|| CliError::Validation(e.to_string())))?;
    log_file.flush().map_err(log_err)?;

    let Trainer { model, adam, .. } = trainer;
    model
        .save_checkpoint(&args.out, Some(&adam))
        .map_err(|e| CliError::io(format!("writing {}", args.out.display()), e))?;
    checkpoints.push(args.out.clone());
    Ok(TrainOutcome {
        model,
        adam,
        log,
        log_path,
        checkpoints,
    })
}

// ---------------------------------------------------------------- eval

pub fn load_model(path: &Path) -> Result<Model, CliError> {
    Model::load_checkpoint(path)
        .map(|(m, _)| m)
        .map_err(|e| CliError::io(format!("loading {}", path.display()), e))
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoints: Vec<PathBuf>,
    pub data: DataSource,
    pub synth: SynthConfig,
    /// Overrides the checkpoint's detection threshold.
    pub threshold: Option<f64>,
    pub nms_threshold: Option<f64>,
    /// Per-image CSV output; with several checkpoints the model label is
    /// inserted before the extension.
    pub csv: Option<PathBuf>,
}

pub struct EvalOutcome {
    /// `(label, report)` per checkpoint, in argument order.
    pub reports: Vec<(String, EvalReport)>,
}

pub fn model_label(model: &Model, path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    format!("{} ({stem})", model.config().variant)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalOutcome, CliError> {
    if args.checkpoints.is_empty() {
        return Err(CliError::Usage("at least one checkpoint is required".into()));
    }
    let data = load_data(&args.data, &args.synth, true)?;
    let mut reports = Vec::with_capacity(args.checkpoints.len());
    for path in &args.checkpoints {
        let model = load_model(path)?;
        let c = model.config();
        let report = evaluate_model(
            &model,
            &data.samples,
            args.threshold.unwrap_or(c.detection_threshold),
            args.nms_threshold.unwrap_or(c.nms_threshold),
            data.skipped.len(),
        )?;
        let label = model_label(&model, path);
        if let Some(csv) = &args.csv {
            let target = if args.checkpoints.len() == 1 {
                csv.clone()
            } else {
                let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("eval");
                let model_stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
                csv.with_file_name(format!("{stem}.{model_stem}.csv"))
            };
            write_text(&target, &report.to_csv())?;
        }
        reports.push((label, report));
    }
    Ok(EvalOutcome { reports })
}

// ---------------------------------------------------------------- detect

#[derive(Debug, Clone)]
pub struct DetectArgs {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    pub out_dir: PathBuf,
    pub threshold: Option<f64>,
}

pub struct DetectOutcome {
    /// Detections in source image coordinates.
    pub detections: Vec<Detection>,
    pub files: Vec<PathBuf>,
}

/// Detections on one image, mapped back to its own coordinates.
pub fn detect_image(model: &Model, image: &Tensor, threshold: f64) -> Result<Vec<Detection>, CliError> {
    let c = model.config();
    let sample = Sample::new(image.clone(), Vec::new(), "");
    let (boxed, lb) = letterbox(&sample, c.input_height, c.input_width);
    let batch = boxed
        .image
        .reshape(&[1, c.input_height, c.input_width, 3])
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let dets = detect(model, &batch, threshold, c.nms_threshold).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(dets
        .into_iter()
        .flatten()
        .map(|d| Detection {
            quad: lb.quad_to_source(&d.quad),
            ..d
        })
        .collect())
}

pub fn cmd_detect(args: &DetectArgs) -> Result<DetectOutcome, CliError> {
    let model = load_model(&args.checkpoint)?;
    let image = read_image(&args.image).map_err(|e| CliError::io(format!("reading {}", args.image.display()), e))?;
    let threshold = args.threshold.unwrap_or(model.config().detection_threshold);
    let detections = detect_image(&model, &image, threshold)?;

    let name = args
        .image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    let image_ref = args.image.to_string_lossy().into_owned();
    let mut files = Vec::new();

    let mut lines = String::new();
    for d in &detections {
        let q = Quad::from_unordered(d.quad.corners).unwrap_or(d.quad);
        lines.push_str(&format_quad_line(&image_ref, &q));
        lines.push('\n');
    }
    let quads_path = args.out_dir.join(format!("{name}.quads.txt"));
    write_text(&quads_path, &lines)?;
    files.push(quads_path);

    let mut overlay = image.clone();
    for d in &detections {
        draw_quad(&mut overlay, &d.quad, RED);
    }
    let overlay_path = args.out_dir.join(format!("{name}.overlay.ppm"));
    save_image(&overlay_path, &overlay)?;
    files.push(overlay_path);

    for (k, d) in detections.iter().enumerate() {
        let q = Quad::from_unordered(d.quad.corners).unwrap_or(d.quad);
        let crop = rectify_plate(&image, &q, CROP_WIDTH, CROP_HEIGHT).map_err(|e| CliError::Validation(e.to_string()))?;
        let path = args.out_dir.join(format!("{name}.plate{k}.ppm"));
        save_image(&path, &crop)?;
        files.push(path);
    }
    Ok(DetectOutcome { detections, files })
}

// ---------------------------------------------------------------- gradcheck

#[derive(Debug, Clone)]
pub struct GradCheckArgs {
    pub config: AppConfig,
    pub seed: u64,
    pub samples_per_param: usize,
    pub perturbation: f64,
    /// Test hook: scale every analytic gradient by this factor.
    pub corrupt_gradients: Option<f64>,
}

impl Default for GradCheckArgs {
    fn default() -> Self {
        Self {
            config: AppConfig::default(),
            seed: 0,
            samples_per_param: 8,
            perturbation: 1e-5,
            corrupt_gradients: None,
        }
    }
}

pub struct GradCheckOutcome {
    pub report: GradCheckReport,
    pub max_trainable_error: f64,
    pub max_frozen_error: f64,
    pub passed: bool,
}

impl GradCheckOutcome {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<32} {:>9} {:>8} {:>8} {:>12}\n",
            "parameter", "kind", "checked", "skipped", "max rel err"
        );
        for p in &self.report.per_param {
            s.push_str(&format!(
                "{:<32} {:>9} {:>8} {:>8} {:>12.3e}\n",
                p.name,
                if p.trainable { "trainable" } else { "frozen" },
                p.checked,
                p.skipped_kinks,
                p.max_rel_error
            ));
        }
        s
    }
}

/// Builds a 32x32 model from the network config and checks the full loss of
/// a two-scene synthetic batch against central differences. Frozen edge
/// kernels are checked too, as inputs.
pub fn cmd_gradcheck(args: &GradCheckArgs) -> Result<GradCheckOutcome, CliError> {
    let net = NetworkConfig {
        input_height: GRADCHECK_SIZE,
        input_width: GRADCHECK_SIZE,
        ..args.config.network.clone()
    };
    let model = Model::build(&net, args.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let synth = SynthConfig {
        image_height: GRADCHECK_SIZE,
        image_width: GRADCHECK_SIZE,
        min_plates: 1,
        max_plates: 1,
        plate_width: [16.0, 24.0],
        plate_aspect: [2.0, 2.0],
        ..SynthConfig::default()
    };
    let samples: Vec<Sample> = (0..2).map(|i| synth_scene(&synth, args.seed + i)).collect();
    let batch = make_batch(&samples, 2, GRADCHECK_SIZE, GRADCHECK_SIZE, grid_spec(&model))
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let opts = GradCheckOptions {
        perturbation: args.perturbation,
        samples_per_param: args.samples_per_param,
        include_frozen: true,
        seed: args.seed,
    };
    let corrupt = args.corrupt_gradients;
    let report = network_grad_check(&model, &batch, &opts, |s: &mut ParamStore| {
        if let Some(f) = corrupt {
            for p in s.iter_mut() {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= f);
            }
        }
    })
    .map_err(|e| CliError::Validation(e.to_string()))?;
    let max_of = |trainable: bool| {
        report
            .per_param
            .iter()
            .filter(|p| p.trainable == trainable)
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    };
    let max_trainable_error = max_of(true);
    let max_frozen_error = max_of(false);
    let every_trainable_checked = report.per_param.iter().filter(|p| p.trainable).all(|p| p.checked > 0);
    Ok(GradCheckOutcome {
        passed: max_trainable_error < GRADCHECK_TOLERANCE
            && max_frozen_error < GRADCHECK_TOLERANCE
            && every_trainable_checked,
        report,
        max_trainable_error,
        max_frozen_error,
    })
}

// ---------------------------------------------------------------- edges

pub const EDGE_MAP_NAMES: [&str; 3] = ["sobel_x", "sobel_y", "sobel_xy"];

pub struct EdgesOutcome {
    /// Raw `H x W x 3` responses (x, y, magnitude).
    pub raw: Tensor,
    pub files: Vec<PathBuf>,
}

/// Min-max normalizes one channel of an `H x W x C` tensor to `[0, 1]`; a
/// constant channel maps to zero.
pub fn normalize_channel(t: &Tensor, c: usize) -> Tensor {
    let (h, w, ch) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let vals: Vec<f64> = t.data().iter().skip(c).step_by(ch).copied().collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let out = vals
        .iter()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect();
    Tensor::new(&[h, w, 1], out).expect("sized above")
}

pub fn cmd_edges(image_path: &Path, out_dir: &Path, presmooth: bool, dump_raw: bool) -> Result<EdgesOutcome, CliError> {
    let image = read_image(image_path).map_err(|e| CliError::io(format!("reading {}", image_path.display()), e))?;
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let batch = image.reshape(&[1, h, w, 3]).expect("same length");
    let raw = edge_maps(&batch, presmooth)
        .map_err(|e| CliError::Validation(e.to_string()))?
        .reshape(&[h, w, 3])
        .expect("same length");
    let name = image_path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let mut files = Vec::new();
    for (c, map) in EDGE_MAP_NAMES.iter().enumerate() {
        let path = out_dir.join(format!("{name}.{map}.pgm"));
        save_image(&path, &normalize_channel(&raw, c))?;
        files.push(path);
        if dump_raw {
            let mut text = String::new();
            for y in 0..h {
                let row: Vec<String> = (0..w).map(|x| raw.data()[(y * w + x) * 3 + c].to_string()).collect();
                text.push_str(&row.join(" "));
                text.push('\n');
            }
            let path = out_dir.join(format!("{name}.{map}.txt"));
            write_text(&path, &text)?;
            files.push(path);
        }
    }
    Ok(EdgesOutcome { raw, files })
}

// ---------------------------------------------------------------- synth

/// Writes `count` scenes as `scene<seed>.ppm` plus `annotations.txt`.
pub fn cmd_synth(synth: &SynthConfig, count: usize, first_seed: u64, out_dir: &Path) -> Result<PathBuf, CliError> {
    synth.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut lines = String::from("# synthetic scenes: <image> x1 y1 x2 y2 x3 y3 x4 y4\n");
    for i in 0..count as u64 {
        let seed = first_seed + i;
        let s = synth_scene(synth, seed);
        let file = format!("scene{seed}.ppm");
        save_image(&out_dir.join(&file), &s.image)?;
        for q in &s.quads {
            lines.push_str(&format_quad_line(&file, q));
            lines.push('\n');
        }
    }
    let ann = out_dir.join("annotations.txt");
    write_text(&ann, &lines)?;
    Ok(ann)
}
