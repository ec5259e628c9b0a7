use proptest::prelude::*;
use sonobench_core::data::BackboneScale;
use sonobench_core::data::{
    load_image, load_manifest, load_mask, save_image_u8, save_manifest, save_mask, BinaryMask,
    DatasetManifest, FrameRecord, Image, Pathology,
};
use sonobench_core::model::{
    load_checkpoint, predict_prob, save_checkpoint, train_decoder, BackboneConfig, Encoder,
    LossWeights, TrainSample, Trainer,
};
use tempfile::tempdir;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gray_images_survive_a_disk_round_trip(
        (h, w) in (1usize..20, 1usize..20),
        seed: u64,
    ) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let bytes: Vec<u8> = (0..h * w)
            .map(|i| (seed.wrapping_mul(2654435761).wrapping_add(i as u64 * 97) % 256) as u8)
            .collect();
        save_image_u8(&path, h, w, &bytes).unwrap();
        let img: Image<f64> = load_image(&path).unwrap();
        let expect = Image::<f64>::from_gray_u8(h, w, &bytes).unwrap();
        prop_assert_eq!(img, expect);
    }

    #[test]
    fn masks_survive_a_disk_round_trip((h, w) in (1usize..20, 1usize..20), seed: u64) {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mask.pgm");
        let mask = BinaryMask::from_fn(h, w, |y, x| {
            (seed ^ (y as u64) << 8 ^ x as u64).count_ones().is_multiple_of(2)
        });
        save_mask(&path, &mask).unwrap();
        prop_assert_eq!(load_mask(&path).unwrap(), mask);
    }
}

fn sample_records(dir: &std::path::Path) -> Vec<FrameRecord> {
    let mut records = Vec::new();
    for (pid, pathology, frames, annotated) in [
        ("alpha", Pathology::Benign, 3, true),
        ("beta", Pathology::Malignant, 2, false),
        ("gamma", Pathology::Benign, 1, true),
    ] {
        for f in 0..frames {
            let image_path = dir.join(format!("{pid}_{f}.pgm"));
            save_image_u8(&image_path, 2, 2, &[0, 60, 120, 240]).unwrap();
            let mask_path = if annotated {
                let p = dir.join(format!("{pid}_{f}_mask.pgm"));
                save_mask(&p, &BinaryMask::from_fn(2, 2, |y, x| y == x)).unwrap();
                Some(p)
            } else {
                None
            };
            records.push(FrameRecord {
                patient_id: pid.into(),
                frame_id: format!("f{f}"),
                image_path,
                mask_path,
                pathology,
            });
        }
    }
    records
}

#[test]
fn manifests_round_trip_through_tsv() {
    let dir = tempdir().unwrap();
    let manifest = DatasetManifest::from_records(sample_records(dir.path())).unwrap();
    let path = dir.path().join("data.tsv");
    save_manifest(&path, &manifest).unwrap();
    let back = load_manifest(&path).unwrap();
    assert_eq!(back.records(), manifest.records());
    assert_eq!(back.patients(), manifest.patients());
    assert_eq!(back.num_annotated(), manifest.num_annotated());
}

#[test]
fn manifests_load_from_json_too() {
    let dir = tempdir().unwrap();
    let records = sample_records(dir.path());
    let path = dir.path().join("data.json");
    std::fs::write(&path, serde_json::to_string_pretty(&records).unwrap()).unwrap();
    let manifest = load_manifest(&path).unwrap();
    assert_eq!(manifest.records().len(), records.len());
    assert_eq!(manifest.patients(), vec!["alpha", "beta", "gamma"]);
}

#[test]
fn relative_manifest_paths_resolve_against_its_directory() {
    let dir = tempdir().unwrap();
    let sub = dir.path().join("data");
    std::fs::create_dir_all(&sub).unwrap();
    save_image_u8(&sub.join("x.pgm"), 1, 1, &[7]).unwrap();
    std::fs::write(sub.join("list.tsv"), "p1\tf1\tx.pgm\t-\tbenign\n").unwrap();
    let manifest = load_manifest(&sub.join("list.tsv")).unwrap();
    assert!(
        manifest.records()[0].image_path.is_absolute()
            || manifest.records()[0].image_path.starts_with(&sub)
    );
    let img: Image<f64> = load_image(&manifest.records()[0].image_path).unwrap();
    assert_eq!(img.height(), 1);
}

#[test]
fn a_checkpointed_model_predicts_identically_after_reload() {
    let cfg = BackboneConfig::for_scale(BackboneScale::Toy);
    let encoder: Encoder<f64> = Encoder::new(cfg, 16, 16, 5).unwrap();
    let disk = |cx: f64| {
        let mask = BinaryMask::from_fn(16, 16, |y, x| {
            let (dy, dx) = (y as f64 - 8.0, x as f64 - cx);
            dy * dy + dx * dx <= 12.0
        });
        let data: Vec<f64> =
            (0..3 * 256).map(|i| 0.5 * f64::from(mask.get((i / 16) % 16, i % 16)) - 0.2).collect();
        TrainSample { image: Image::new(3, 16, 16, data).unwrap(), mask }
    };
    let train: Vec<_> = (4..9).map(|c| disk(c as f64)).collect();
    let val = vec![disk(7.5)];
    let trainer = Trainer {
        seed: 3,
        epochs: 2,
        batch_size: 2,
        learning_rate: 1e-3,
        weight_decay: 1e-3,
        loss: LossWeights::default(),
        threshold: 0.5,
    };
    let model = train_decoder(&encoder, &trainer, &train, &val).unwrap();

    let dir = tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    save_checkpoint(&path, BackboneScale::Toy, 5, (16, 16), &model.decoder).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.encoder_seed, 5);
    assert_eq!(ck.resolution, (16, 16));
    let reloaded = ck.decoder_state().unwrap();

    let encoder2: Encoder<f64> = Encoder::new(cfg, 16, 16, ck.encoder_seed).unwrap();
    let feats = encoder2.picked(&val[0].image).unwrap();
    let before = predict_prob(&model.decoder, &feats, (16, 16)).unwrap();
    let after = predict_prob(&reloaded, &feats, (16, 16)).unwrap();
    let bits = |p: &[f64]| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(before.probs()), bits(after.probs()));
}

#[test]
fn unreadable_manifest_rows_are_reported_with_line_numbers() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("broken.tsv");
    std::fs::write(&path, "p1\tf1\ta.pgm\t-\tbenign\np2\tf1\tmissing-fields\n").unwrap();
    let err = load_manifest(&path).unwrap_err();
    assert!(err.to_string().contains('2'), "error should cite the line: {err}");
}
