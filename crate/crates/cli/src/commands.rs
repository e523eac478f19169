use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use log::info;
use meshres_core::augment::{augment_surface, stream_rng, AugmentConfig};
use meshres_core::decimate::{decimate, DecimationConfig};
use meshres_core::features::{featurize, load_mrft, save_mrft, LabeledFeatures};
use meshres_core::mesh::io::{load_mesh_auto, save_obj};
use meshres_core::mesh::LabelSidecar;
use meshres_core::metrics::{compute_metrics, ConfusionMatrix, ReportRow};
use meshres_core::upsample::{knn_transfer, TieBreak, TransferConfig};
use meshres_core::{ClassId, LabeledMesh};
use meshres_experiment::report::{render, ReportFormat};
use meshres_experiment::{ingest_dataset, run_sweep, synth_jaw, write_dataset, ExperimentConfig, Scan, SynthJawSpec};
use meshres_model::{load_checkpoint, predict, save_checkpoint, train, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "meshres", version, about = "Multi-resolution tooth segmentation on triangle meshes")]
pub struct Cli {
    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    /// Log debug detail.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate synthetic labeled jaws (`<id>.obj` + `<id>.json`).
    Synth {
        #[arg(long, default_value_t = 40)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 16_000)]
        cells: usize,
        #[arg(long, default_value_t = 14)]
        teeth: usize,
        #[arg(long, default_value_t = 0.03)]
        noise: f64,
    },
    /// Quadric edge-collapse decimation to a target face count.
    Decimate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        target: usize,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the carried face labels.
        #[arg(long)]
        out_labels: Option<PathBuf>,
        #[arg(long)]
        no_preserve_boundary: bool,
    },
    /// Per-cell 24-d feature matrix in MRFT format.
    Featurize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Keep raw coordinates instead of centering and scaling.
        #[arg(long)]
        no_normalize: bool,
    },
    /// Random scale/rotate/translate copies of a labeled mesh.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 4)]
        copies: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model on a directory of MRFT feature files.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Validation feature directory; the final epoch is kept without it.
        #[arg(long)]
        val: Option<PathBuf>,
        /// JSON document with optional `model` and `train` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the per-epoch loss history here.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Per-cell labels and class probabilities for a feature file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transfer predicted labels from a coarse mesh to a finer one.
    Upsample {
        #[arg(long)]
        low: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        high: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, value_enum, default_value_t = TieBreakArg::Nearest)]
        tie_break: TieBreakArg,
    },
    /// DSC / SEN / PPV / OA of predicted against reference face labels.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Full resolution sweep over a dataset directory.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum TieBreakArg {
    Nearest,
    SmallestClass,
}

pub enum Failure {
    /// Missing or malformed input.
    Data(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

trait DataContext<T> {
    fn data(self, what: &Path) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> DataContext<T> for Result<T, E> {
    fn data(self, what: &Path) -> Outcome<T> {
        self.map_err(|e| Failure::Data(e.into().context(format!("reading {}", what.display()))))
    }
}

fn require(path: &Path) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Data(anyhow!("{} does not exist", path.display())))
    }
}

fn read_labeled(mesh: &Path, labels: Option<&Path>) -> Outcome<(LabeledMesh, bool)> {
    require(mesh)?;
    let m = load_mesh_auto(mesh).data(mesh)?;
    match labels {
        Some(l) => {
            require(l)?;
            let sidecar = LabelSidecar::read(l).data(l)?;
            Ok((sidecar.attach(m).data(l)?, true))
        }
        None => {
            let n = m.face_count();
            Ok((LabeledMesh::new(m, vec![ClassId::BACKGROUND; n]).data(mesh)?, false))
        }
    }
}

fn read_face_labels(path: &Path) -> Outcome<Vec<ClassId>> {
    require(path)?;
    LabelSidecar::read(path).and_then(|s| s.face_classes()).data(path)
}

fn create_parent(path: &Path) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

/// Prediction document: a face-mode label sidecar plus class probabilities.
#[derive(Serialize, Deserialize)]
struct PredictionDoc {
    mode: String,
    labels: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probabilities: Option<Vec<Vec<f64>>>,
}

#[derive(Default, Deserialize)]
#[serde(default)]
struct TrainFile {
    model: ModelConfig,
    train: TrainConfig,
}

fn load_feature_dir(dir: &Path) -> Outcome<Vec<LabeledFeatures>> {
    require(dir)?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .data(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "mrft"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::Data(anyhow!("no .mrft files in {}", dir.display())));
    }
    paths.iter().map(|p| load_mrft(p).data(p)).collect()
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Synth {
            count,
            seed,
            out_dir,
            cells,
            teeth,
            noise,
        } => {
            let spec = SynthJawSpec {
                teeth,
                cells,
                noise,
                seed,
                ..Default::default()
            };
            spec.validate().map_err(|e| Failure::Data(anyhow!(e)))?;
            let scans = (0..count)
                .map(|i| Ok(Scan {
                    id: format!("jaw_{i:03}"),
                    mesh: synth_jaw(&spec, i)?,
                }))
                .collect::<anyhow::Result<Vec<_>>>()?;
            write_dataset(&out_dir, &scans)?;
            info!("wrote {count} jaws to {}", out_dir.display());
        }
        Command::Decimate {
            input,
            labels,
            target,
            out,
            out_labels,
            no_preserve_boundary,
        } => {
            let (mesh, _) = read_labeled(&input, labels.as_deref())?;
            let config = DecimationConfig {
                target_faces: target,
                preserve_boundary: !no_preserve_boundary,
            };
            let result = decimate(&mesh, &config)?;
            info!("{} -> {} faces", mesh.face_count(), result.face_count());
            create_parent(&out)?;
            save_obj(&result.mesh, &out)?;
            if let Some(path) = out_labels {
                create_parent(&path)?;
                LabelSidecar::from_classes(&result.labels).write(&path)?;
            }
        }
        Command::Featurize {
            input,
            labels,
            out,
            no_normalize,
        } => {
            let (mesh, _) = read_labeled(&input, labels.as_deref())?;
            let features = featurize(&mesh, !no_normalize).data(&input)?;
            create_parent(&out)?;
            save_mrft(&out, &features)?;
            info!("{} cells -> {}", features.len(), out.display());
        }
        Command::Augment {
            input,
            labels,
            copies,
            seed,
            out_dir,
        } => {
            let (mesh, _) = read_labeled(&input, Some(&labels))?;
            let config = AugmentConfig {
                copies,
                seed,
                ..Default::default()
            };
            let stem = input.file_stem().map_or("surface".into(), |s| s.to_string_lossy().into_owned());
            std::fs::create_dir_all(&out_dir)?;
            let mut samples = Vec::new();
            for c in 0..copies {
                let (copy, sample) = augment_surface(&mesh, &config, &mut stream_rng(seed, 0, c));
                save_obj(&copy.mesh, &out_dir.join(format!("{stem}_aug{c}.obj")))?;
                LabelSidecar::from_classes(&copy.labels).write(&out_dir.join(format!("{stem}_aug{c}.json")))?;
                samples.push(sample);
            }
            std::fs::write(out_dir.join(format!("{stem}_transforms.json")), serde_json::to_string_pretty(&samples)?)?;
        }
        Command::Train {
            data,
            val,
            config,
            out,
            epochs,
            seed,
            history,
        } => {
            let mut file = match &config {
                Some(path) => {
                    require(path)?;
                    let text = std::fs::read_to_string(path).data(path)?;
                    serde_json::from_str::<TrainFile>(&text).data(path)?
                }
                None => TrainFile::default(),
            };
            if let Some(e) = epochs {
                file.train.epochs = e;
            }
            if let Some(s) = seed {
                file.train.seed = s;
            }
            let train_set = load_feature_dir(&data)?;
            let val_set = match &val {
                Some(v) => load_feature_dir(v)?,
                None => Vec::new(),
            };
            let output = train(&train_set, &val_set, &file.model, &file.train)?;
            create_parent(&out)?;
            save_checkpoint(&out, &output.params)?;
            if let Some(h) = history {
                create_parent(&h)?;
                std::fs::write(&h, serde_json::to_string_pretty(&output.history)?)?;
            }
            info!("saved model from epoch {} to {}", output.best_epoch, out.display());
        }
        Command::Predict { model, input, out } => {
            require(&model)?;
            require(&input)?;
            let params = load_checkpoint(&model).data(&model)?;
            let features = load_mrft(&input).data(&input)?;
            let p = predict(&params, &features.features.rows).map_err(|e| Failure::Data(e.into()))?;
            let doc = PredictionDoc {
                mode: "face".into(),
                labels: p.labels.iter().map(|&c| i64::from(c)).collect(),
                probabilities: Some(p.probabilities.rows().into_iter().map(|r| r.to_vec()).collect()),
            };
            create_parent(&out)?;
            std::fs::write(&out, serde_json::to_string(&doc)?)?;
        }
        Command::Upsample {
            low,
            pred,
            high,
            out,
            k,
            tie_break,
        } => {
            require(&low)?;
            require(&high)?;
            let low_mesh = load_mesh_auto(&low).data(&low)?;
            let high_mesh = load_mesh_auto(&high).data(&high)?;
            let labels = read_face_labels(&pred)?;
            let config = TransferConfig {
                k,
                tie_break: match tie_break {
                    TieBreakArg::Nearest => TieBreak::Nearest,
                    TieBreakArg::SmallestClass => TieBreak::SmallestClass,
                },
            };
            let up = knn_transfer(&low_mesh.barycenters(), &labels, &high_mesh.barycenters(), &config)
                .map_err(|e| Failure::Data(e.into()))?;
            create_parent(&out)?;
            LabelSidecar::from_classes(&up).write(&out)?;
        }
        Command::Evaluate { gt, pred, out, format } => {
            let format: ReportFormat = format.parse().map_err(|e: String| Failure::Data(anyhow!(e)))?;
            let truth = read_face_labels(&gt)?;
            let predicted = read_face_labels(&pred)?;
            let cm = ConfusionMatrix::from_classes(&truth, &predicted).map_err(|e| Failure::Data(e.into()))?;
            let row = ReportRow {
                train_res: truth.len(),
                eval_res: None,
                report: compute_metrics(&cm),
            };
            let (aggregate, per_class) = meshres_core::metrics::report_rows(&[row]);
            let text = render(&aggregate, &per_class, format);
            match out {
                Some(path) => {
                    create_parent(&path)?;
                    std::fs::write(&path, text)?;
                }
                None => print!("{text}"),
            }
        }
        Command::Sweep {
            config,
            data_dir,
            out_dir,
            seed,
        } => {
            let mut cfg = match &config {
                Some(path) => {
                    require(path)?;
                    ExperimentConfig::load(path).data(path)?
                }
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            require(&data_dir)?;
            let dataset = ingest_dataset(&data_dir).data(&data_dir)?;
            let outcome = run_sweep(&dataset.scans, &cfg, Some(&out_dir))?;
            for f in &outcome.failures {
                log::error!("run {} / {:?} failed: {}", f.train_res, f.eval_res, f.message);
            }
            if outcome.records.is_empty() {
                return Err(Failure::Runtime(anyhow!("every run of the sweep failed")));
            }
            info!("{} report rows written to {}", outcome.records.len(), out_dir.display());
        }
    }
    Ok(())
}
