//! Split-level evaluation contracts: count-based aggregation equals the
//! concatenated-batch oracle, order invariance, perfect-prediction reports,
//! and the empty-split error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rascore::{save_manifest, write_mask, write_raster, DatasetManifest, LabelMask, ManifestEntry, MultibandRaster, RasterData, Split};
use tensorcore::Tensor;
use wetseg::eval::{evaluate, EvalConfig, ReconAccumulator, SegAccumulator};
use wetseg::losses::ReconLossParams;
use wetseg::nnmodels::{Autoencoder, AutoencoderSpec, ModelCheckpoint, UNet, UNetSpec};
use wetseg::synth::synth_scheme;
use wetseg::WetsegError;

fn random_patch(size: u32, bands: usize, seed: u64) -> MultibandRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = bands * (size * size) as usize;
    MultibandRaster::new(
        size,
        size,
        (0..bands).map(|i| format!("B{}", i + 2)).collect(),
        RasterData::F32((0..n).map(|_| rng.gen_range(0.02f32..1.0)).collect()),
        0.0,
        "R".into(),
        "2024-01-01".into(),
        10.0,
    )
    .unwrap()
}

fn random_mask(size: u32, classes: u8, seed: u64) -> LabelMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LabelMask::new(
        size,
        size,
        synth_scheme(),
        (0..size * size).map(|_| rng.gen_range(0..classes)).collect(),
        10.0,
    )
    .unwrap()
}

/// Write a two-entry test manifest with patches and masks; returns
/// (manifest path, entries).
fn seg_dataset(dir: &std::path::Path, masks: [&LabelMask; 2]) -> std::path::PathBuf {
    let mut manifest = DatasetManifest::new(synth_scheme());
    for (i, mask) in masks.iter().enumerate() {
        let patch = random_patch(16, 3, 700 + i as u64);
        write_raster(&patch, dir.join(format!("p{i}.ras"))).unwrap();
        write_mask(mask, dir.join(format!("m{i}.ras"))).unwrap();
        manifest.entries.push(ManifestEntry {
            patch_path: format!("p{i}.ras"),
            label_path: Some(format!("m{i}.ras")),
            region: "R".into(),
            split: Split::Test,
            acquired_at: String::new(),
            gsd_m: 10.0,
            cloud_cover: None,
        });
    }
    let path = dir.join("manifest.json");
    save_manifest(&manifest, &path).unwrap();
    path
}

fn small_unet_ckpt(seed: u64) -> ModelCheckpoint {
    let spec = UNetSpec {
        in_channels: 3,
        num_classes: 3,
        base_channels: 4,
        depth: 2,
        bridge_channels: 8,
        dropout_p: 0.0,
    };
    ModelCheckpoint::from_unet(&UNet::build(spec, seed).unwrap(), Default::default())
}

#[test]
fn two_image_split_equals_concatenated_batch_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let masks = [random_mask(16, 3, 1), random_mask(16, 3, 2)];
    let manifest_path = seg_dataset(dir.path(), [&masks[0], &masks[1]]);
    let manifest = rascore::load_manifest(&manifest_path).unwrap();
    let ckpt = small_unet_ckpt(5);

    let report = evaluate(
        &ckpt,
        &manifest,
        dir.path(),
        Split::Test,
        &EvalConfig::default(),
    )
    .unwrap();
    let seg = report.segmentation.unwrap();

    // oracle: one batched forward over the concatenated pair
    let model = wetseg::nnmodels::unet_from_checkpoint(&ckpt).unwrap();
    let a = wetseg::train::load_patch_tensor(&dir.path().join("p0.ras")).unwrap();
    let b = wetseg::train::load_patch_tensor(&dir.path().join("p1.ras")).unwrap();
    let mut batch = Vec::new();
    batch.extend_from_slice(a.data());
    batch.extend_from_slice(b.data());
    let batch = Tensor::new([2, 3, 16, 16], batch).unwrap();
    let probs = model.probabilities(&batch).unwrap();
    let mut truth = masks[0].values.clone();
    truth.extend_from_slice(&masks[1].values);
    let mut acc = SegAccumulator::new(3);
    acc.add_image(&probs, &truth).unwrap();
    let oracle = acc.report(&synth_scheme());

    assert_eq!(seg.confusion, oracle.confusion);
    assert!((seg.overall_accuracy - oracle.overall_accuracy).abs() < 1e-12);
    assert!((seg.macro_dice - oracle.macro_dice).abs() < 1e-12);
    assert!((seg.macro_iou - oracle.macro_iou).abs() < 1e-12);
    assert!((seg.dice_loss - oracle.dice_loss).abs() < 1e-9);
}

#[test]
fn aggregation_is_image_order_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let masks = [random_mask(16, 3, 3), random_mask(16, 3, 4)];
    let manifest_path = seg_dataset(dir.path(), [&masks[0], &masks[1]]);
    let mut manifest = rascore::load_manifest(&manifest_path).unwrap();
    let ckpt = small_unet_ckpt(6);
    let forward = evaluate(&ckpt, &manifest, dir.path(), Split::Test, &EvalConfig::default())
        .unwrap()
        .segmentation
        .unwrap();
    manifest.entries.reverse();
    let reversed = evaluate(&ckpt, &manifest, dir.path(), Split::Test, &EvalConfig::default())
        .unwrap()
        .segmentation
        .unwrap();
    assert_eq!(forward.confusion, reversed.confusion);
    assert!((forward.dice_loss - reversed.dice_loss).abs() < 1e-12);
    assert!((forward.overall_accuracy - reversed.overall_accuracy).abs() < 1e-12);
}

#[test]
fn perfect_predictions_report_all_ones() {
    // a zero-weight U-Net emits uniform logits; the argmax tie-break picks
    // class 0, so all-zero masks are predicted perfectly
    let dir = tempfile::tempdir().unwrap();
    let zero_mask = LabelMask::new(16, 16, synth_scheme(), vec![0; 256], 10.0).unwrap();
    let manifest_path = seg_dataset(dir.path(), [&zero_mask, &zero_mask.clone()]);
    let manifest = rascore::load_manifest(&manifest_path).unwrap();
    let spec = UNetSpec {
        in_channels: 3,
        num_classes: 3,
        base_channels: 4,
        depth: 2,
        bridge_channels: 8,
        dropout_p: 0.0,
    };
    let mut model = UNet::build(spec, 7).unwrap();
    let names: Vec<String> = model.params.names().map(str::to_owned).collect();
    for name in names {
        let shape = model.params.value(&name).unwrap().shape();
        model.params.set_value(&name, Tensor::zeros(shape)).unwrap();
    }
    let ckpt = ModelCheckpoint::from_unet(&model, Default::default());
    let report =
        evaluate(&ckpt, &manifest, dir.path(), Split::Test, &EvalConfig::default()).unwrap();
    let seg = report.segmentation.unwrap();
    assert_eq!(seg.overall_accuracy, 1.0);
    assert_eq!(seg.macro_dice, 1.0);
    assert_eq!(seg.macro_iou, 1.0);
    assert_eq!(seg.macro_precision, 1.0);
    assert_eq!(seg.macro_recall, 1.0);
}

#[test]
fn empty_split_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mask = random_mask(16, 3, 8);
    let manifest_path = seg_dataset(dir.path(), [&mask, &mask.clone()]);
    let manifest = rascore::load_manifest(&manifest_path).unwrap();
    let ckpt = small_unet_ckpt(9);
    // entries are all in the test split: val is empty
    match evaluate(&ckpt, &manifest, dir.path(), Split::Val, &EvalConfig::default()) {
        Err(WetsegError::EmptySplit(Split::Val)) => {}
        other => panic!("expected empty split error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn recon_accumulator_matches_batched_addition() {
    let params = ReconLossParams::default();
    let a_pred = {
        let ae = Autoencoder::build(
            AutoencoderSpec {
                in_channels: 2,
                base_channels: 4,
                depth: 2,
                bridge_channels: 8,
                dropout_p: 0.0,
            },
            11,
        )
        .unwrap();
        move |t: &Tensor| ae.reconstruct(t).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let make = |rng: &mut ChaCha8Rng| {
        Tensor::new(
            [1, 2, 16, 16],
            (0..512).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
        )
        .unwrap()
    };
    let x1 = make(&mut rng);
    let x2 = make(&mut rng);
    let (y1, y2) = (a_pred(&x1), a_pred(&x2));

    let mut per_image = ReconAccumulator::default();
    per_image.add_pair(&y1, &x1, 0.05, &params).unwrap();
    per_image.add_pair(&y2, &x2, 0.05, &params).unwrap();
    let report_a = per_image.report(0.05, &Default::default()).unwrap();

    // concatenated batch
    let mut bx = Vec::new();
    bx.extend_from_slice(x1.data());
    bx.extend_from_slice(x2.data());
    let mut by = Vec::new();
    by.extend_from_slice(y1.data());
    by.extend_from_slice(y2.data());
    let bx = Tensor::new([2, 2, 16, 16], bx).unwrap();
    let by = Tensor::new([2, 2, 16, 16], by).unwrap();
    let mut batched = ReconAccumulator::default();
    batched.add_pair(&by, &bx, 0.05, &params).unwrap();
    let report_b = batched.report(0.05, &Default::default()).unwrap();

    assert_eq!(report_a.accuracy, report_b.accuracy);
    assert!((report_a.ssim - report_b.ssim).abs() < 1e-9);
    assert!((report_a.huber_loss - report_b.huber_loss).abs() < 1e-9);
    assert!((report_a.edge_loss - report_b.edge_loss).abs() < 1e-9);
    assert!((report_a.mixed_loss - report_b.mixed_loss).abs() < 1e-9);
    match (report_a.psnr_db, report_b.psnr_db) {
        (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9),
        (a, b) => panic!("psnr mismatch: {a:?} vs {b:?}"),
    }
}
