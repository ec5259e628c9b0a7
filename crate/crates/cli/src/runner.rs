use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sonobench_core::analysis::{
    alc, log_slope_fit, retention_table, EfficiencyRecord, RetentionRow,
};
use sonobench_core::data::{
    load_image, load_manifest, resize_mask_nearest, save_mask, DatasetManifest, ExperimentConfig,
};
use sonobench_core::metrics::{aggregate, evaluate_frame, FrameMetrics, MetricSummary};
use sonobench_core::model::{
    cache_features, load_checkpoint, predict_prob, save_checkpoint, train_decoder, BackboneConfig,
    Encoder, LearningCurve, LossWeights, TrainSample, Trainer,
};
use sonobench_core::split::{starve, stratified_split, Split};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// One run's scores, in the shape the analysis verbs consume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub param_count: u64,
    pub resolution: usize,
    pub fraction: f64,
    pub metrics: MetricSummary<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alc_val_dice: Option<f64>,
}

impl RunRecord {
    pub fn to_efficiency(&self) -> EfficiencyRecord<f64> {
        EfficiencyRecord {
            method: self.method.clone(),
            param_count: self.param_count,
            resolution: self.resolution,
            fraction: self.fraction,
            metrics: self.metrics,
        }
    }
}

/// Body of `summary.json`. Deliberately timestamp-free so identical runs
/// produce identical bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub hash: String,
    pub method: String,
    pub scale: String,
    pub resolution: usize,
    pub fraction: f64,
    pub encoder_params: u64,
    pub decoder_params: u64,
    pub train_patients: usize,
    pub train_frames: usize,
    pub val_frames: usize,
    pub test_frames: usize,
    pub alc_val_dice: f64,
    pub test: MetricSummary<f64>,
}

pub struct RunOutput {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub record: RunRecord,
    pub curve: LearningCurve,
    pub test_patients: Vec<String>,
    pub wall_secs: f64,
}

/// Run identity: experiment hyperparameters, the training fraction, and the
/// manifest bytes. Anything else (output paths, wall time) stays out so the
/// same work lands in the same directory.
pub fn config_hash(exp: &ExperimentConfig, fraction: f64, manifest_bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    let header =
        serde_json::to_vec(&serde_json::json!({ "experiment": exp, "fraction": fraction }))
            .expect("experiment config serializes");
    hasher.update(&header);
    hasher.update(manifest_bytes);
    let digest = hasher.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn method_label(exp: &ExperimentConfig) -> String {
    format!("frozen-dpt-{}", exp.scale)
}

struct EvalFrame {
    patient: String,
    frame: String,
    sample: TrainSample<f64>,
}

/// Load the annotated frames of the given patients, resized and normalized
/// for the backbone.
fn load_frames(
    manifest: &DatasetManifest,
    patients: &[String],
    resolution: usize,
) -> Result<Vec<EvalFrame>> {
    let sub = manifest.subset(patients).map_err(|e| anyhow::anyhow!("subsetting manifest: {e}"))?;
    let mut frames = Vec::new();
    for rec in sub.records() {
        let Some(mask_path) = &rec.mask_path else {
            continue;
        };
        let image = load_image::<f64>(&rec.image_path)
            .with_context(|| format!("loading {}", rec.image_path.display()))?
            .resize_bilinear(resolution, resolution)
            .map_err(|e| anyhow::anyhow!("resizing {}: {e}", rec.image_path.display()))?
            .normalize()
            .to_pseudo_rgb()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let mask = resize_mask_nearest(
            &sonobench_core::data::load_mask(mask_path)
                .with_context(|| format!("loading {}", mask_path.display()))?,
            resolution,
            resolution,
        )
        .map_err(|e| anyhow::anyhow!("resizing mask {}: {e}", mask_path.display()))?;
        frames.push(EvalFrame {
            patient: rec.patient_id.clone(),
            frame: rec.frame_id.clone(),
            sample: TrainSample { image, mask },
        });
    }
    ensure!(!frames.is_empty(), "no annotated frames among patients {patients:?}");
    Ok(frames)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn curve_csv(curve: &LearningCurve) -> String {
    let mut out = String::from("epoch,train_loss,val_dice,val_iou\n");
    for row in curve {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_dice, row.val_iou
        ));
    }
    out
}

fn metrics_csv(rows: &[(String, String, FrameMetrics<f64>)]) -> String {
    let mut out = String::from("patient,frame,dice,iou,sensitivity,hd95,msd\n");
    for (patient, frame, m) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            patient,
            frame,
            m.dice,
            m.iou,
            fmt_opt(m.sensitivity),
            fmt_opt(m.hd95),
            fmt_opt(m.msd)
        ));
    }
    out
}

#[derive(Serialize)]
struct RunConfigFile<'a> {
    schema_version: u32,
    fraction: f64,
    experiment: &'a ExperimentConfig,
}

/// Train on one training fraction and score the held-out test split.
/// Everything lands under `<out_root>/<hash>/`; rerunning with the same
/// config and manifest reproduces every artifact byte for byte.
pub fn run_experiment(
    exp: &ExperimentConfig,
    manifest_path: &Path,
    out_root: &Path,
    fraction: f64,
) -> Result<RunOutput> {
    let started = Instant::now();
    exp.validate().map_err(|e| anyhow::anyhow!("bad experiment config: {e}"))?;
    let manifest_bytes = std::fs::read(manifest_path)
        .with_context(|| format!("cannot read manifest {}", manifest_path.display()))?;
    let manifest = load_manifest(manifest_path)
        .map_err(|e| anyhow::anyhow!("cannot parse manifest {}: {e}", manifest_path.display()))?;

    let hash = config_hash(exp, fraction, &manifest_bytes);
    let dir = out_root.join(&hash);
    std::fs::create_dir_all(dir.join("masks"))?;

    let split = stratified_split(&manifest, exp.ratios, exp.seed)
        .map_err(|e| anyhow::anyhow!("splitting: {e}"))?;
    let train_patients: Vec<String> = if fraction == 1.0 {
        split.train.clone()
    } else {
        let ladder = starve(&split.train, &exp.fractions, exp.seed)
            .map_err(|e| anyhow::anyhow!("starvation ladder: {e}"))?;
        ladder
            .subset_for(fraction)
            .with_context(|| format!("fraction {fraction} is not in the configured ladder"))?
            .to_vec()
    };

    let train_frames = load_frames(&manifest, &train_patients, exp.resolution)?;
    let val_frames = load_frames(&manifest, &split.val, exp.resolution)?;
    let test_frames = load_frames(&manifest, &split.test, exp.resolution)?;

    let backbone = BackboneConfig::for_scale(exp.scale);
    let encoder = Encoder::new(backbone, exp.resolution, exp.resolution, exp.seed)
        .map_err(|e| anyhow::anyhow!("building encoder: {e}"))?;
    let trainer = Trainer {
        seed: exp.seed,
        epochs: exp.epochs,
        batch_size: exp.batch_size,
        learning_rate: exp.learning_rate,
        weight_decay: exp.weight_decay,
        loss: LossWeights::new(exp.lambda_bce, exp.lambda_dice, 1.0)
            .map_err(|e| anyhow::anyhow!("loss weights: {e}"))?,
        threshold: exp.threshold,
    };
    let train_samples: Vec<TrainSample<f64>> =
        train_frames.iter().map(|f| f.sample.clone()).collect();
    let val_samples: Vec<TrainSample<f64>> = val_frames.iter().map(|f| f.sample.clone()).collect();
    let model = train_decoder(&encoder, &trainer, &train_samples, &val_samples)
        .map_err(|e| anyhow::anyhow!("training: {e}"))?;

    let test_features =
        cache_features(&encoder, &test_frames.iter().map(|f| f.sample.clone()).collect::<Vec<_>>())
            .map_err(|e| anyhow::anyhow!("encoding test frames: {e}"))?;
    let mut per_frame = Vec::with_capacity(test_frames.len());
    for (frame, feats) in test_frames.iter().zip(&test_features) {
        let prob = predict_prob(&model.decoder, feats, (exp.resolution, exp.resolution))
            .map_err(|e| anyhow::anyhow!("predicting: {e}"))?;
        let pred = prob.threshold(exp.threshold);
        save_mask(&dir.join(format!("masks/{}_{}.pgm", frame.patient, frame.frame)), &pred)?;
        let m = evaluate_frame(&prob, &frame.sample.mask, exp.threshold)
            .map_err(|e| anyhow::anyhow!("scoring: {e}"))?;
        per_frame.push((frame.patient.clone(), frame.frame.clone(), m));
    }
    let summary_metrics = aggregate(&per_frame.iter().map(|(_, _, m)| *m).collect::<Vec<_>>())
        .map_err(|e| anyhow::anyhow!("aggregating: {e}"))?;

    let dice_curve: Vec<f64> = model.curve.iter().map(|r| r.val_dice).collect();
    let alc_val_dice = alc(&dice_curve).map_err(|e| anyhow::anyhow!("learning-curve area: {e}"))?;

    let summary = RunSummary {
        hash: hash.clone(),
        method: method_label(exp),
        scale: exp.scale.to_string(),
        resolution: exp.resolution,
        fraction,
        encoder_params: encoder.param_count(),
        decoder_params: model.decoder.param_count(),
        train_patients: train_patients.len(),
        train_frames: train_frames.len(),
        val_frames: val_frames.len(),
        test_frames: test_frames.len(),
        alc_val_dice,
        test: summary_metrics,
    };
    let record = RunRecord {
        method: summary.method.clone(),
        param_count: summary.encoder_params + summary.decoder_params,
        resolution: exp.resolution,
        fraction,
        metrics: summary_metrics,
        alc_val_dice: Some(alc_val_dice),
    };

    let cfg_file =
        RunConfigFile { schema_version: crate::cfgfile::SCHEMA_VERSION, fraction, experiment: exp };
    std::fs::write(dir.join("config.toml"), toml::to_string_pretty(&cfg_file)?)?;
    std::fs::write(
        dir.join("split.json"),
        pretty_json(&SplitFile { split: &split, train_used: &train_patients })?,
    )?;
    std::fs::write(dir.join("curve.csv"), curve_csv(&model.curve))?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&per_frame))?;
    std::fs::write(dir.join("summary.json"), pretty_json(&summary)?)?;
    save_checkpoint(
        &dir.join("checkpoint.bin"),
        exp.scale,
        exp.seed,
        (exp.resolution, exp.resolution),
        &model.decoder,
    )
    .map_err(|e| anyhow::anyhow!("saving checkpoint: {e}"))?;
    let wall_secs = started.elapsed().as_secs_f64();
    std::fs::write(dir.join("timing.log"), format!("wall_secs={wall_secs:.3}\n"))?;

    Ok(RunOutput {
        dir,
        summary,
        record,
        curve: model.curve,
        test_patients: split.test.clone(),
        wall_secs,
    })
}

#[derive(Serialize)]
struct SplitFile<'a> {
    split: &'a Split,
    train_used: &'a [String],
}

fn pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub struct GridOutput {
    pub runs: Vec<RunOutput>,
    pub records_path: PathBuf,
    pub retention_rows: Vec<RetentionRow<f64>>,
}

/// One run per configured fraction against a frozen test split, then the
/// retention table over the results.
pub fn starvation_grid(
    exp: &ExperimentConfig,
    manifest_path: &Path,
    out_root: &Path,
) -> Result<GridOutput> {
    let mut fractions = exp.fractions.clone();
    fractions.sort_by(|a, b| b.partial_cmp(a).expect("finite fractions"));
    let mut runs: Vec<RunOutput> = Vec::new();
    for &fraction in &fractions {
        let run = run_experiment(exp, manifest_path, out_root, fraction)?;
        if let Some(first) = runs.first() {
            ensure!(
                first.test_patients == run.test_patients,
                "test split drifted between fractions {} and {}",
                first.record.fraction,
                fraction
            );
        }
        runs.push(run);
    }
    let records: Vec<RunRecord> = runs.iter().map(|r| r.record.clone()).collect();
    let records_path = out_root.join("records.json");
    std::fs::write(&records_path, pretty_json(&records)?)?;

    let eff: Vec<EfficiencyRecord<f64>> = records.iter().map(|r| r.to_efficiency()).collect();
    let rows = retention_table(&eff).map_err(|e| anyhow::anyhow!("retention table: {e}"))?;
    std::fs::write(out_root.join("retention.csv"), retention_csv(&rows))?;
    std::fs::write(out_root.join("retention.json"), pretty_json(&rows)?)?;
    Ok(GridOutput { runs, records_path, retention_rows: rows })
}

pub fn retention_csv(rows: &[RetentionRow<f64>]) -> String {
    let mut out = String::from("method,resolution,dice,iou,sensitivity,hd95,msd\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method,
            r.resolution,
            fmt_opt(r.dice),
            fmt_opt(r.iou),
            fmt_opt(r.sensitivity),
            fmt_opt(r.hd95),
            fmt_opt(r.msd)
        ));
    }
    out
}

/// Full-data Dice against parameter count, one fit per resolution.
/// Resolutions with fewer than two distinct capacities are skipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRow {
    pub resolution: usize,
    pub points: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn scaling_fits(records: &[RunRecord]) -> Result<Vec<FitRow>> {
    use std::collections::BTreeMap;
    let mut by_res: BTreeMap<usize, Vec<(u64, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.fraction == 1.0) {
        by_res.entry(r.resolution).or_default().push((r.param_count, r.metrics.dice));
    }
    let mut fits = Vec::new();
    for (resolution, mut points) in by_res {
        points.sort_by_key(|&(p, _)| p);
        let distinct = points.windows(2).filter(|w| w[0].0 != w[1].0).count() + 1;
        if points.len() < 2 || distinct < 2 {
            continue;
        }
        let fit = log_slope_fit(&points).map_err(|e| anyhow::anyhow!("capacity fit: {e}"))?;
        fits.push(FitRow {
            resolution,
            points: points.len(),
            slope: fit.slope,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
        });
    }
    ensure!(!fits.is_empty(), "no resolution has two runs with distinct parameter counts");
    Ok(fits)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub scale: String,
    pub resolution: usize,
    pub test_frames: usize,
    pub test: MetricSummary<f64>,
}

/// Score a saved checkpoint on the test split implied by the experiment's
/// seed and ratios. The encoder is rebuilt from the recipe stored in the
/// checkpoint, so the file alone pins the model.
pub fn evaluate_checkpoint(
    exp: &ExperimentConfig,
    manifest_path: &Path,
    checkpoint_path: &Path,
    out_dir: &Path,
) -> Result<EvalSummary> {
    let ck = load_checkpoint(checkpoint_path)
        .map_err(|e| anyhow::anyhow!("loading checkpoint {}: {e}", checkpoint_path.display()))?;
    let decoder = ck.decoder_state().map_err(|e| anyhow::anyhow!("decoder state: {e}"))?;
    let (res_h, res_w) = ck.resolution;
    ensure!(res_h == res_w, "non-square checkpoint resolution {res_h}x{res_w}");
    let encoder = Encoder::new(BackboneConfig::for_scale(ck.scale), res_h, res_w, ck.encoder_seed)
        .map_err(|e| anyhow::anyhow!("building encoder: {e}"))?;

    let manifest = load_manifest(manifest_path)
        .map_err(|e| anyhow::anyhow!("cannot parse manifest {}: {e}", manifest_path.display()))?;
    let split = stratified_split(&manifest, exp.ratios, exp.seed)
        .map_err(|e| anyhow::anyhow!("splitting: {e}"))?;
    let frames = load_frames(&manifest, &split.test, res_h)?;
    let features =
        cache_features(&encoder, &frames.iter().map(|f| f.sample.clone()).collect::<Vec<_>>())
            .map_err(|e| anyhow::anyhow!("encoding: {e}"))?;
    let mut per_frame = Vec::new();
    for (frame, feats) in frames.iter().zip(&features) {
        let prob = predict_prob(&decoder, feats, (res_h, res_w))
            .map_err(|e| anyhow::anyhow!("predicting: {e}"))?;
        let m = evaluate_frame(&prob, &frame.sample.mask, exp.threshold)
            .map_err(|e| anyhow::anyhow!("scoring: {e}"))?;
        per_frame.push((frame.patient.clone(), frame.frame.clone(), m));
    }
    let test = aggregate(&per_frame.iter().map(|(_, _, m)| *m).collect::<Vec<_>>())
        .map_err(|e| anyhow::anyhow!("aggregating: {e}"))?;
    std::fs::create_dir_all(out_dir)?;
    let summary = EvalSummary {
        scale: ck.scale.to_string(),
        resolution: res_h,
        test_frames: per_frame.len(),
        test,
    };
    std::fs::write(out_dir.join("eval_summary.json"), pretty_json(&summary)?)?;
    std::fs::write(out_dir.join("eval_metrics.csv"), metrics_csv(&per_frame))?;
    Ok(summary)
}
