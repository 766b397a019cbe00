use std::fs;
use std::path::Path;

use wpod_cli::commands::{
    cmd_detect, cmd_edges, cmd_eval, cmd_gradcheck, cmd_synth, cmd_train, load_model, DetectArgs, EvalArgs,
    GradCheckArgs, TrainArgs,
};
use wpod_cli::{CliError, DataSource};
use wpod_core::config::AppConfig;
use wpod_core::dataset::{parse_annotation_text, write_image, SynthConfig};
use wpod_core::net::{Model, NetworkConfig};
use wpod_core::{Quad, Tensor};

fn tiny_config() -> AppConfig {
    let mut cfg = AppConfig::default();
    cfg.network = NetworkConfig {
        input_height: 32,
        input_width: 32,
        base_channels: 4,
        blocks_per_stage: 1,
        ..NetworkConfig::default()
    };
    cfg.synth = SynthConfig {
        image_height: 32,
        image_width: 32,
        min_plates: 1,
        max_plates: 1,
        plate_width: [16.0, 24.0],
        plate_aspect: [2.0, 2.0],
        clutter: 0,
        ..SynthConfig::default()
    };
    cfg.train.batch_size = 2;
    cfg.train.checkpoint_every = 2;
    cfg
}

fn train_args(dir: &Path, iterations: usize, seed: u64) -> TrainArgs {
    TrainArgs {
        config: tiny_config(),
        data: DataSource::Synthetic { count: 4, first_seed: 0 },
        out: dir.join("m.ckpt"),
        iterations: Some(iterations),
        seed,
        log: None,
    }
}

#[test]
fn training_is_reproducible_bit_for_bit() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = cmd_train(&train_args(a.path(), 5, 9), |_| {}).unwrap();
    let rb = cmd_train(&train_args(b.path(), 5, 9), |_| {}).unwrap();
    assert_eq!(ra.log, rb.log);
    assert_eq!(fs::read(&ra.log_path).unwrap(), fs::read(&rb.log_path).unwrap());
    assert_eq!(ra.checkpoints.len(), 3);
    for (x, y) in ra.checkpoints.iter().zip(&rb.checkpoints) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
    let log = fs::read_to_string(&ra.log_path).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert!(log.starts_with("iter,location_loss,confidence_loss,total_loss\n"));
}

#[test]
fn zero_iterations_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let args = train_args(dir.path(), 0, 4);
    let out = cmd_train(&args, |_| {}).unwrap();
    assert!(out.log.is_empty());
    let fresh = Model::build(&args.config.network, 4).unwrap();
    let loaded = load_model(&args.out).unwrap();
    for (p, q) in fresh.params().iter().zip(loaded.params().iter()) {
        assert_eq!(p.value, q.value, "{}", p.name);
    }
}

#[test]
fn eval_on_written_scenes_reports_every_quad() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let ann = cmd_synth(&cfg.synth, 3, 100, dir.path()).unwrap();
    let trained = cmd_train(&train_args(dir.path(), 1, 0), |_| {}).unwrap();
    let csv = dir.path().join("eval.csv");
    let out = cmd_eval(&EvalArgs {
        checkpoints: vec![trained.checkpoints.last().unwrap().clone()],
        data: DataSource::Annotations(ann),
        synth: cfg.synth.clone(),
        threshold: Some(0.0),
        nms_threshold: None,
        csv: Some(csv.clone()),
    })
    .unwrap();
    let report = &out.reports[0].1;
    assert_eq!((report.gt_count, report.skipped), (3, 0));
    assert!((0.0..=1.0).contains(&report.mean_qiou));
    let rows = fs::read_to_string(csv).unwrap();
    let mean: f64 = rows
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap())
        .sum::<f64>()
        / 3.0;
    assert!((mean - report.mean_qiou).abs() < 1e-12);
}

#[test]
fn eval_skips_missing_images() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("a.txt");
    fs::write(&ann, "missing.ppm 1 1 9 1 9 5 1 5\n").unwrap();
    let ckpt = dir.path().join("m.ckpt");
    Model::build(&tiny_config().network, 0).unwrap().save_checkpoint(&ckpt, None).unwrap();
    let out = cmd_eval(&EvalArgs {
        checkpoints: vec![ckpt],
        data: DataSource::Annotations(ann),
        synth: SynthConfig::default(),
        threshold: None,
        nms_threshold: None,
        csv: None,
    })
    .unwrap();
    assert_eq!(out.reports[0].1.skipped, 1);
    assert_eq!(out.reports[0].1.gt_count, 0);
}

#[test]
fn detect_writes_parseable_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    Model::build(&tiny_config().network, 0).unwrap().save_checkpoint(&ckpt, None).unwrap();
    let image = dir.path().join("img.ppm");
    let ramp: Vec<f64> = (0..48 * 40 * 3).map(|i| (i % 255) as f64 / 255.0).collect();
    write_image(&image, &Tensor::new(&[40, 48, 3], ramp).unwrap()).unwrap();
    let out = cmd_detect(&DetectArgs {
        checkpoint: ckpt,
        image,
        out_dir: dir.path().join("out"),
        threshold: Some(0.0),
    })
    .unwrap();
    assert_eq!(out.files.len(), 2 + out.detections.len());
    let quads = fs::read_to_string(&out.files[0]).unwrap();
    let parsed = parse_annotation_text(&quads).unwrap();
    let n: usize = parsed.iter().map(|r| r.quads.len()).sum();
    assert_eq!(n, out.detections.len());
    for f in &out.files[1..] {
        wpod_core::dataset::read_image(f).unwrap();
    }
}

#[test]
fn detect_on_blank_image_finds_nothing_at_high_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    Model::build(&tiny_config().network, 0).unwrap().save_checkpoint(&ckpt, None).unwrap();
    let image = dir.path().join("blank.ppm");
    write_image(&image, &Tensor::full(&[32, 32, 3], 0.5)).unwrap();
    let out = cmd_detect(&DetectArgs {
        checkpoint: ckpt,
        image,
        out_dir: dir.path().to_path_buf(),
        threshold: Some(0.999),
    })
    .unwrap();
    assert!(out.detections.is_empty());
    assert_eq!(fs::read_to_string(&out.files[0]).unwrap(), "");
}

#[test]
fn detect_unreadable_image_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    Model::build(&tiny_config().network, 0).unwrap().save_checkpoint(&ckpt, None).unwrap();
    let image = dir.path().join("bad.ppm");
    fs::write(&image, b"not an image").unwrap();
    let err = cmd_detect(&DetectArgs {
        checkpoint: ckpt,
        image,
        out_dir: dir.path().to_path_buf(),
        threshold: None,
    })
    .err()
    .unwrap();
    assert!(matches!(err, CliError::Io { .. }));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let args = GradCheckArgs {
        config: tiny_config(),
        samples_per_param: 3,
        ..GradCheckArgs::default()
    };
    let ok = cmd_gradcheck(&args).unwrap();
    assert!(ok.passed, "{}", ok.table());
    assert!(ok.report.per_param.iter().any(|p| !p.trainable));
    let bad = cmd_gradcheck(&GradCheckArgs {
        corrupt_gradients: Some(1.05),
        ..args
    })
    .unwrap();
    assert!(!bad.passed);
    assert!(bad.max_trainable_error > 1e-2);
}

#[test]
fn edges_of_constant_and_step_images() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.ppm");
    write_image(&flat, &Tensor::full(&[16, 16, 3], 0.3)).unwrap();
    let out = cmd_edges(&flat, dir.path(), false, true).unwrap();
    for px in out.raw.data().chunks(3) {
        assert!(px[0].abs() < 1e-12 && px[1].abs() < 1e-12);
        // Magnitude carries the stabilizing epsilon under the root.
        assert!(px[2] <= 1.0001e-6);
    }
    assert_eq!(out.files.len(), 6);

    let step = dir.path().join("step.ppm");
    let data: Vec<f64> = (0..16 * 16)
        .flat_map(|i| {
            let v = if i % 16 < 8 { 0.0 } else { 1.0 };
            [v; 3]
        })
        .collect();
    write_image(&step, &Tensor::new(&[16, 16, 3], data).unwrap()).unwrap();
    let out = cmd_edges(&step, dir.path(), false, false).unwrap();
    let at = |y: usize, x: usize, c: usize| out.raw.data()[(y * 16 + x) * 3 + c];
    for y in 0..16 {
        for x in 0..16 {
            assert!(at(y, x, 1).abs() < 1e-9);
            if x == 7 || x == 8 {
                assert!(at(y, x, 0) > 1.0);
            } else {
                assert!(at(y, x, 0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn synth_output_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config().synth;
    let ann = cmd_synth(&cfg, 2, 5, &dir.path().join("new/sub")).unwrap();
    assert!(dir.path().join("new/sub/scene6.ppm").exists());
    let text = fs::read_to_string(ann).unwrap();
    let records = parse_annotation_text(&text).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].image_path, "scene5.ppm");
    let expected = wpod_core::dataset::synth_scene(&cfg, 5).quads;
    let parsed: &[Quad] = &records[0].quads;
    assert_eq!(parsed, &expected[..]);
}
