use wpod_core::dataset::{
    make_batch, parse_annotations, read_image, synth_scene, write_annotations, write_image, AnnotatedImage, Sample,
    SynthConfig,
};
use wpod_core::loss::{decode_detections, fit_cell_values, total_loss, GridSpec};
use wpod_core::net::{Model, NetworkConfig, Variant};
use wpod_core::{qiou, AdamConfig, FeatureGrid, Tensor};

const SPEC: GridSpec = GridSpec {
    stride: 16.0,
    alpha: 7.75,
};

fn small_synth() -> SynthConfig {
    SynthConfig {
        image_height: 64,
        image_width: 64,
        min_plates: 1,
        max_plates: 1,
        plate_width: [26.0, 45.0],
        plate_aspect: [2.0, 3.0],
        ..SynthConfig::default()
    }
}

#[test]
fn scenes_survive_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = Vec::new();
    let mut scenes = Vec::new();
    for seed in 0..3 {
        let s = synth_scene(&small_synth(), seed);
        let path = dir.path().join(format!("s{seed}.ppm"));
        write_image(&path, &s.image).unwrap();
        records.push(AnnotatedImage {
            image_path: path.to_string_lossy().into_owned(),
            quads: s.quads.clone(),
        });
        scenes.push(s);
    }
    let ann = dir.path().join("ann.txt");
    write_annotations(&ann, &records).unwrap();
    let parsed = parse_annotations(&ann).unwrap();
    assert_eq!(parsed, records);
    for (rec, s) in parsed.iter().zip(&scenes) {
        let img = read_image(&rec.image_path).unwrap();
        assert!(img.max_abs_diff(&s.image) <= 1.0 / 510.0 + 1e-12);
    }
}

#[test]
fn ideal_grid_decodes_to_ground_truth() {
    let s = synth_scene(&small_synth(), 7);
    let batch = make_batch(&[s.clone()], 1, 64, 64, SPEC).unwrap();
    let target = &batch.targets[0];
    let mut grid = FeatureGrid::zeros(1, 4, 4);
    for m in 0..4 {
        for n in 0..4 {
            let mut v = [-10.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
            if target.cell(m, n).is_object() {
                let q = batch.quads[0][0];
                let c = fit_cell_values(&q, m, n, SPEC).unwrap();
                v = [10.0, -10.0, c[0], c[1], c[2], c[3], c[4], c[5]];
            }
            grid.set_cell(0, m, n, v);
        }
    }
    let eval = total_loss(&grid, &batch.targets).unwrap();
    assert!(eval.breakdown.location < 1e-18, "{:?}", eval.breakdown);
    let dets = decode_detections(&grid, 0, 0.5, 0.1, SPEC);
    assert_eq!(dets.len(), 1);
    assert!(qiou(&dets[0].quad, &s.quads[0]) > 1.0 - 1e-9);
}

#[test]
fn grid_shape_follows_input_size() {
    for (h, w) in [(64, 64), (48, 80), (32, 112)] {
        for variant in [Variant::Baseline, Variant::EdgeAugmented] {
            let cfg = NetworkConfig {
                variant,
                input_height: h,
                input_width: w,
                base_channels: 4,
                blocks_per_stage: 1,
                ..NetworkConfig::default()
            };
            let model = Model::build(&cfg, 3).unwrap();
            let grid = model.forward(&Tensor::full(&[2, h, w, 3], 0.3)).unwrap();
            assert_eq!((grid.batch(), grid.size()), (2, (h / 16, w / 16)));
        }
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = NetworkConfig {
        input_height: 32,
        input_width: 32,
        base_channels: 4,
        blocks_per_stage: 1,
        ..NetworkConfig::default()
    };
    let model = Model::build(&cfg, 11).unwrap();
    let adam = AdamConfig::default();
    model.save_checkpoint(&path, Some(&adam)).unwrap();
    let (loaded, loaded_adam) = Model::load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config(), model.config());
    assert_eq!(loaded_adam.as_ref(), Some(&adam));
    let x = Tensor::full(&[1, 32, 32, 3], 0.4);
    assert_eq!(loaded.forward(&x).unwrap(), model.forward(&x).unwrap());

    let baseline = NetworkConfig {
        variant: Variant::Baseline,
        ..cfg
    };
    assert!(Model::load_checkpoint_as(&path, &baseline).is_err());
}

#[test]
fn batch_rejects_grayscale_sample() {
    let s = Sample::new(Tensor::zeros(&[32, 32, 1]), vec![], "g");
    assert!(make_batch(&[s], 1, 32, 32, SPEC).is_err());
}
