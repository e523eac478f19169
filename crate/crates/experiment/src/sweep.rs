//! The resolution sweep: one model per training resolution, evaluated on
//! the test split natively and, for coarse models, after KNN transfer of its
//! predictions onto the finer evaluation meshes.
//!
//! Output layout under `out_dir`:
//! `<train_res>/{model.mrck, history.json, pred_native.json,
//! pred_to_<eval>.json, report.csv}` plus `split.json`, `report.csv`,
//! `per_class_dsc.csv` and `records.json` at the top.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use meshres_core::decimate::{decimate, DecimationConfig};
use meshres_core::features::{featurize, LabeledFeatures};
use meshres_core::metrics::{compute_metrics, ConfusionMatrix, MetricsReport};
use meshres_core::upsample::{knn_transfer, TransferConfig};
use meshres_core::mesh::crop_base;
use meshres_core::{ClassId, LabeledMesh};
use meshres_model::{
    load_checkpoint, measure_inference, predict, save_checkpoint, train, EpochRecord, ModelParams,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::ingest::Scan;
use crate::report::{emit_report, ReportFormat};
use crate::split::{augment_partition, split, Split};
use crate::ExperimentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTimings {
    /// `None` when the model was loaded from an existing checkpoint.
    pub train_seconds: Option<f64>,
    /// Mean forward time on the first test surface, plus the mean transfer
    /// time per surface for upsampled rows.
    pub inference_ms: f64,
    pub inference_cells: usize,
    pub transfer_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub train_res: usize,
    pub eval_res: Option<usize>,
    pub report: MetricsReport,
    pub checkpoint: Option<PathBuf>,
    pub timings: RunTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub train_res: usize,
    pub eval_res: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub split: Split,
    pub records: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

/// Stored predictions of one run, enough to recompute its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub train_res: usize,
    pub eval_res: Option<usize>,
    pub surfaces: Vec<SurfacePrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePrediction {
    pub id: String,
    pub gt: Vec<ClassId>,
    pub pred: Vec<ClassId>,
}

impl PredictionFile {
    pub fn metrics(&self) -> Result<MetricsReport, ExperimentError> {
        let mut cm = ConfusionMatrix::default();
        for s in &self.surfaces {
            cm.add(&ConfusionMatrix::from_classes(&s.gt, &s.pred)?);
        }
        Ok(compute_metrics(&cm))
    }
}

pub fn decimate_all(
    surfaces: &[LabeledMesh],
    target: usize,
    preserve_boundary: bool,
) -> Result<Vec<LabeledMesh>, ExperimentError> {
    let config = DecimationConfig {
        target_faces: target,
        preserve_boundary,
    };
    surfaces
        .par_iter()
        .map(|s| {
            if s.face_count() < target {
                warn!("surface has {} faces, below the {target} target", s.face_count());
            }
            Ok(decimate(s, &config)?)
        })
        .collect()
}

pub fn featurize_all(meshes: &[&LabeledMesh], normalize: bool) -> Result<Vec<LabeledFeatures>, ExperimentError> {
    meshes.par_iter().map(|m| Ok(featurize(m, normalize)?)).collect()
}

/// Augments the train and validation partitions of `surfaces` (already at the
/// training resolution), featurizes them and trains a model.
pub fn train_model(
    surfaces: &[LabeledMesh],
    split: &Split,
    config: &ExperimentConfig,
) -> Result<(ModelParams, Vec<EpochRecord>), ExperimentError> {
    let augment = config.augment_config();
    let train_set = augment_partition(surfaces, &split.train, &augment);
    let val_set = augment_partition(surfaces, &split.val, &augment);
    let train_refs: Vec<&LabeledMesh> = train_set.iter().map(|e| &e.mesh).collect();
    let val_refs: Vec<&LabeledMesh> = val_set.iter().map(|e| &e.mesh).collect();
    let train_features = featurize_all(&train_refs, config.normalize)?;
    let val_features = featurize_all(&val_refs, config.normalize)?;
    info!(
        "training on {} surfaces ({} validation)",
        train_features.len(),
        val_features.len()
    );
    let out = train(&train_features, &val_features, &config.model, &config.train_config())?;
    Ok((out.params, out.history))
}

pub fn predict_all(
    params: &ModelParams,
    meshes: &[&LabeledMesh],
    normalize: bool,
) -> Result<Vec<Vec<ClassId>>, ExperimentError> {
    meshes
        .par_iter()
        .map(|m| {
            let f = featurize(m, normalize)?;
            Ok(predict(params, &f.features.rows)?.labels)
        })
        .collect()
}

/// Transfers each low-resolution prediction onto the matching
/// high-resolution mesh.
pub fn upsample_all(
    low: &[&LabeledMesh],
    predictions: &[Vec<ClassId>],
    high: &[&LabeledMesh],
    transfer: &TransferConfig,
) -> Result<Vec<Vec<ClassId>>, ExperimentError> {
    low.par_iter()
        .zip(predictions)
        .zip(high)
        .map(|((lo, pred), hi)| {
            Ok(knn_transfer(
                &lo.mesh.barycenters(),
                pred,
                &hi.mesh.barycenters(),
                transfer,
            )?)
        })
        .collect()
}

fn prediction_file(
    train_res: usize,
    eval_res: Option<usize>,
    ids: &[String],
    gt: &[&LabeledMesh],
    pred: Vec<Vec<ClassId>>,
) -> PredictionFile {
    PredictionFile {
        train_res,
        eval_res,
        surfaces: ids
            .iter()
            .zip(gt)
            .zip(pred)
            .map(|((id, g), p)| SurfacePrediction {
                id: id.clone(),
                gt: g.labels.clone(),
                pred: p,
            })
            .collect(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    std::fs::write(path, serde_json::to_string(value)?)?;
    Ok(())
}

struct Unit<'a> {
    config: &'a ExperimentConfig,
    split: &'a Split,
    ids: Vec<String>,
    levels: &'a BTreeMap<usize, Result<Vec<LabeledMesh>, String>>,
    out_dir: Option<&'a Path>,
}

impl Unit<'_> {
    fn level(&self, res: usize) -> Result<&[LabeledMesh], ExperimentError> {
        match &self.levels[&res] {
            Ok(v) => Ok(v),
            Err(e) => Err(ExperimentError::Config(format!("decimation to {res} failed: {e}"))),
        }
    }

    fn test_meshes(&self, res: usize) -> Result<Vec<&LabeledMesh>, ExperimentError> {
        let level = self.level(res)?;
        Ok(self.split.test.iter().map(|&i| &level[i]).collect())
    }

    fn run(&self, train_res: usize, records: &mut Vec<RunRecord>, failures: &mut Vec<RunFailure>) -> Result<(), ExperimentError> {
        let config = self.config;
        let dir = self.out_dir.map(|d| d.join(train_res.to_string()));
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }
        let ckpt = dir.as_ref().map(|d| d.join("model.mrck"));
        let existing = ckpt.as_ref().filter(|p| p.exists());
        let (params, train_seconds) = match existing.map(|p| load_checkpoint(p)) {
            Some(Ok(p)) if p.config == config.model => {
                info!("{train_res}: resuming from {}", ckpt.as_ref().unwrap().display());
                (p, None)
            }
            other => {
                if let Some(Err(e)) = other {
                    warn!("{train_res}: ignoring unreadable checkpoint: {e}");
                }
                let start = Instant::now();
                let (params, history) = train_model(self.level(train_res)?, self.split, config)?;
                let secs = start.elapsed().as_secs_f64();
                if let (Some(d), Some(path)) = (&dir, &ckpt) {
                    write_json(&d.join("history.json"), &history)?;
                    let tmp = path.with_extension("mrck.tmp");
                    save_checkpoint(&tmp, &params)?;
                    std::fs::rename(&tmp, path)?;
                }
                (params, Some(secs))
            }
        };

        let test = self.test_meshes(train_res)?;
        let first = featurize(test[0], config.normalize)?;
        let timing = measure_inference(&params, &first.features.rows, config.timing_repeats)?;
        let native = predict_all(&params, &test, config.normalize)?;
        let file = prediction_file(train_res, None, &self.ids, &test, native.clone());
        let mut report = file.metrics()?;
        report.inference_ms = Some(timing.mean_ms);
        if let Some(d) = &dir {
            write_json(&d.join("pred_native.json"), &file)?;
        }
        let mut unit_records = vec![RunRecord {
            train_res,
            eval_res: None,
            report,
            checkpoint: ckpt.clone(),
            timings: RunTimings {
                train_seconds,
                inference_ms: timing.mean_ms,
                inference_cells: timing.cells,
                transfer_ms: None,
            },
        }];

        let transfer = TransferConfig {
            k: config.knn_k,
            tie_break: config.tie_break,
        };
        for (_, eval_res) in config.upsample_pairs().into_iter().filter(|(r, _)| *r == train_res) {
            let attempt = || -> Result<RunRecord, ExperimentError> {
                let high = self.test_meshes(eval_res)?;
                let start = Instant::now();
                let up = upsample_all(&test, &native, &high, &transfer)?;
                let transfer_ms = start.elapsed().as_secs_f64() * 1e3 / test.len() as f64;
                let file = prediction_file(train_res, Some(eval_res), &self.ids, &high, up);
                let mut report = file.metrics()?;
                report.inference_ms = Some(timing.mean_ms + transfer_ms);
                if let Some(d) = &dir {
                    write_json(&d.join(format!("pred_to_{eval_res}.json")), &file)?;
                }
                Ok(RunRecord {
                    train_res,
                    eval_res: Some(eval_res),
                    report,
                    checkpoint: ckpt.clone(),
                    timings: RunTimings {
                        train_seconds,
                        inference_ms: timing.mean_ms + transfer_ms,
                        inference_cells: timing.cells,
                        transfer_ms: Some(transfer_ms),
                    },
                })
            };
            match attempt() {
                Ok(r) => unit_records.push(r),
                Err(e) => {
                    warn!("{train_res} -> {eval_res}: {e}");
                    failures.push(RunFailure {
                        train_res,
                        eval_res: Some(eval_res),
                        message: e.to_string(),
                    });
                }
            }
        }
        if let Some(d) = &dir {
            std::fs::write(d.join("report.csv"), emit_report(&unit_records, ReportFormat::Csv))?;
        }
        records.extend(unit_records);
        Ok(())
    }
}

/// Runs the whole sweep. Each training resolution is an independent unit:
/// a failure is recorded and the sweep moves on. With `out_dir`, units
/// whose checkpoint already exists are evaluated without retraining.
pub fn run_sweep(
    scans: &[Scan],
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<SweepOutcome, ExperimentError> {
    config.validate()?;
    let split = split(scans.len(), config.test_fraction, config.val_fraction_of_train, config.seed)?;
    info!(
        "split: {} train, {} val, {} test",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    if let Some(d) = out_dir {
        std::fs::create_dir_all(d)?;
        write_json(&d.join("split.json"), &split)?;
    }
    let originals: Vec<LabeledMesh> = match config.crop_keep_fraction {
        Some(keep) => scans
            .par_iter()
            .map(|s| crop_base(&s.mesh, keep))
            .collect::<Result<_, _>>()?,
        None => scans.iter().map(|s| s.mesh.clone()).collect(),
    };
    let mut needed: Vec<usize> = config.resolutions.clone();
    needed.extend(&config.eval_resolutions);
    needed.sort_unstable();
    needed.dedup();
    let levels: BTreeMap<usize, Result<Vec<LabeledMesh>, String>> = needed
        .iter()
        .map(|&res| {
            info!("decimating {} surfaces to {res} faces", originals.len());
            (
                res,
                decimate_all(&originals, res, config.preserve_boundary).map_err(|e| e.to_string()),
            )
        })
        .collect();
    let unit = Unit {
        config,
        split: &split,
        ids: split.test.iter().map(|&i| scans[i].id.clone()).collect(),
        levels: &levels,
        out_dir,
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &res in &config.resolutions {
        if let Err(e) = unit.run(res, &mut records, &mut failures) {
            warn!("{res}: {e}");
            failures.push(RunFailure {
                train_res: res,
                eval_res: None,
                message: e.to_string(),
            });
        }
    }
    if let Some(d) = out_dir {
        let (aggregate, per_class) = crate::report::tables(&records);
        std::fs::write(d.join("report.csv"), aggregate.to_csv())?;
        std::fs::write(d.join("per_class_dsc.csv"), per_class.to_csv())?;
        std::fs::write(d.join("records.json"), serde_json::to_string_pretty(&records)?)?;
    }
    Ok(SweepOutcome {
        split,
        records,
        failures,
    })
}
