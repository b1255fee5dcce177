use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssr_core::evaluator::DistanceMetric;
use ssr_core::io::{
    distance_rows, load_checkpoint, load_features, load_features_csv, load_interactions, save_checkpoint,
    save_features, save_id_map, save_interactions, write_csv, write_json, LoadedInteractions,
};
use ssr_core::objective::composite_gradient_check;
use ssr_core::pipeline::{self, EvalSplit};
use ssr_core::autodiff::GradCheckConfig;
use ssr_core::spectral::Modality;
use ssr_core::synth::{synth_generate, SyntheticSpec};
use ssr_core::trainer::{Dataset, EpochRecord, TrainConfig, TrainingData};
use ssr_core::SsrError;

use crate::{
    DataArgs, DecomposeArgs, DiagnoseArgs, DistanceChoice, EvaluateArgs, Failure, GradcheckArgs, SplitChoice,
    SynthArgs, TrainArgs,
};

const RUN_MANIFEST: &str = "run.json";

/// Data files a model was trained on, recorded next to its checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    interactions: PathBuf,
    img_features: Option<PathBuf>,
    txt_features: Option<PathBuf>,
    csv: bool,
}

impl RunManifest {
    fn from_args(data: &DataArgs) -> Result<Self, Failure> {
        let interactions = data
            .interactions
            .as_deref()
            .ok_or_else(|| Failure::Usage("--interactions is required".into()))?;
        let abs = |p: &Path| fs::canonicalize(p).map_err(|e| Failure::Engine(SsrError::io(p, e)));
        Ok(RunManifest {
            interactions: abs(interactions)?,
            img_features: data.img_features.as_deref().map(abs).transpose()?,
            txt_features: data.txt_features.as_deref().map(abs).transpose()?,
            csv: data.csv,
        })
    }

    /// Explicit flags win; otherwise the manifest beside the checkpoint.
    fn resolve(data: &DataArgs, checkpoint: &Path) -> Result<Self, Failure> {
        if data.interactions.is_some() {
            return Self::from_args(data);
        }
        let dir = checkpoint.parent().unwrap_or(Path::new("."));
        let path = dir.join(RUN_MANIFEST);
        if !path.exists() {
            return Err(Failure::Usage(format!(
                "--interactions is required (no {} next to the checkpoint)",
                RUN_MANIFEST
            )));
        }
        let text = fs::read_to_string(&path).map_err(|e| SsrError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            Failure::Engine(SsrError::Format { path: path.display().to_string(), offset: 0, reason: e.to_string() })
        })
    }

    fn load(&self) -> Result<(Dataset, LoadedInteractions), Failure> {
        let log = load_interactions(&self.interactions)?;
        let read = |p: &Path| if self.csv { load_features_csv(p) } else { load_features(p) };
        let mut content = Vec::new();
        for (m, p) in [(Modality::Img, &self.img_features), (Modality::Txt, &self.txt_features)] {
            if let Some(p) = p {
                content.push((m, read(p)?));
            }
        }
        let n_items = content.iter().map(|(_, x)| x.nrows()).fold(log.n_items, usize::max);
        let dataset = Dataset { n_users: log.n_users, n_items, interactions: log.table.clone(), content };
        Ok((dataset, log))
    }
}

fn read_config(path: Option<&Path>) -> Result<TrainConfig, Failure> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| SsrError::io(p, e))?;
            Ok(TrainConfig::from_toml_str(&text)?)
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Engine(SsrError::io(dir, e)))
}

/// Training log line. Wall time goes to stderr only so the files are
/// reproducible.
#[derive(Serialize)]
struct LogLine {
    epoch: usize,
    bce: f64,
    sbm: f64,
    scr: f64,
    total: f64,
    val_recall_at_20: f64,
}

impl From<&EpochRecord> for LogLine {
    fn from(r: &EpochRecord) -> Self {
        LogLine { epoch: r.epoch, bce: r.bce, sbm: r.sbm, scr: r.scr, total: r.total, val_recall_at_20: r.val_recall_at_20 }
    }
}

pub fn train(args: &TrainArgs) -> Result<(), Failure> {
    let cfg = read_config(args.config.as_deref())?;
    let manifest = RunManifest::from_args(&args.data)?;
    let (dataset, log) = manifest.load()?;
    create_dir(&args.out)?;

    let quiet = args.quiet;
    let run = pipeline::train_and_evaluate(&dataset, &cfg, |r| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  loss {:.5} (bce {:.5} sbm {:.5} scr {:.5})  val R@20 {:.4}  {} ms",
                r.epoch, r.total, r.bce, r.sbm, r.scr, r.val_recall_at_20, r.wall_ms
            );
        }
    })?;

    save_checkpoint(&args.out.join("checkpoint.ssrc"), &run.checkpoint)?;
    let mut lines = String::new();
    for r in &run.outcome.history {
        lines.push_str(&serde_json::to_string(&LogLine::from(r)).expect("log line serializes"));
        lines.push('\n');
    }
    let log_path = args.out.join("train_log.jsonl");
    fs::write(&log_path, lines).map_err(|e| SsrError::io(&log_path, e))?;
    write_json(&args.out.join("metrics.json"), &run.report)?;
    write_json(&args.out.join(RUN_MANIFEST), &manifest)?;
    if let Some(ids) = &log.user_ids {
        save_id_map(&args.out.join("user_ids.txt"), ids)?;
    }
    if let Some(ids) = &log.item_ids {
        save_id_map(&args.out.join("item_ids.txt"), ids)?;
    }
    if !quiet {
        eprintln!(
            "best epoch {} of {}; test R@10 {:.4} NDCG@10 {:.4}",
            run.report.best_epoch,
            run.report.epochs_run,
            run.report.test.recall_at(10),
            run.report.test.ndcg_at(10),
        );
    }
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), Failure> {
    if args.k.is_empty() || args.k.contains(&0) {
        return Err(Failure::Usage("--k takes positive cutoffs".into()));
    }
    let manifest = RunManifest::resolve(&args.data, &args.checkpoint)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let (dataset, _) = manifest.load()?;
    let (data, inputs) = pipeline::restore(&dataset, &ckpt)?;
    let split = match args.split {
        SplitChoice::Val => EvalSplit::Val,
        SplitChoice::Test => EvalSplit::Test,
    };
    let metrics = pipeline::score_split(&data, &inputs, &ckpt, split, args.cold_start, &args.k)?;
    if let Some(out) = &args.out {
        write_json(out, &metrics)?;
    }
    let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    println!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct EigenRow {
    index: usize,
    eigenvalue: f64,
}

pub fn decompose(args: &DecomposeArgs) -> Result<(), Failure> {
    let cfg = read_config(args.config.as_deref())?;
    if !cfg.spectral {
        return Err(Failure::Usage("decompose needs a config with spectral = true".into()));
    }
    let manifest = RunManifest::from_args(&args.data)?;
    let (dataset, _) = manifest.load()?;
    create_dir(&args.out)?;
    let data = TrainingData::build(&dataset, &cfg)?;
    let spectrum = data.spectrum.as_ref().expect("spectral config builds a spectrum");
    let rows: Vec<EigenRow> =
        spectrum.eigenvalues.iter().enumerate().map(|(index, &eigenvalue)| EigenRow { index, eigenvalue }).collect();
    write_csv(&args.out.join("eigenvalues.csv"), &rows)?;
    let partitions = pipeline::initial_partitions(&data, &cfg)?;
    write_csv(&args.out.join("band_energy.csv"), &ssr_core::spectral::band_report(spectrum, &partitions))?;
    Ok(())
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<(), Failure> {
    let manifest = RunManifest::resolve(&args.data, &args.checkpoint)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let (dataset, _) = manifest.load()?;
    create_dir(&args.out)?;
    let (data, inputs) = pipeline::restore(&dataset, &ckpt)?;
    let metric = match args.distance {
        DistanceChoice::Euclidean => DistanceMetric::Euclidean,
        DistanceChoice::Cosine => DistanceMetric::Cosine,
    };
    let diag = pipeline::diagnose(&data, &inputs, &ckpt, metric)?;
    write_csv(&args.out.join("band_energy.csv"), &diag.band_energy)?;
    write_csv(&args.out.join("gate_weights.csv"), &diag.gates)?;
    write_csv(&args.out.join("center_distances.csv"), &distance_rows(&diag.distances))?;
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<(), Failure> {
    if !(args.eps > 0.0 && args.tol > 0.0) || args.coords == 0 {
        return Err(Failure::Usage("--eps, --tol and --coords must be positive".into()));
    }
    let cfg = GradCheckConfig { eps: args.eps, tol: args.tol, coords_per_tensor: args.coords, seed: args.seed };
    let report = composite_gradient_check(args.seed, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("gradient check failed at tolerance {}", args.tol)))
    }
}

pub fn synth(args: &SynthArgs) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        n_users: args.users,
        n_items: args.items,
        n_blocks: args.blocks,
        interactions_per_user: args.interactions_per_user,
        modality_noise: args.noise,
        cold_fraction: args.cold_fraction,
        seed: args.seed,
        img_dim: args.img_dim,
        txt_dim: args.txt_dim,
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    create_dir(&args.out)?;
    let data = synth_generate(&spec)?;
    save_interactions(&args.out.join("interactions.tsv"), &data.interactions)?;
    save_features(&args.out.join("img.ssrf"), &data.img)?;
    save_features(&args.out.join("txt.ssrf"), &data.txt)?;

    let path = args.out.join("blocks.tsv");
    let mut out = Vec::new();
    let io = |e| Failure::Engine(SsrError::io(&path, e));
    writeln!(out, "kind\tindex\tblock\tcold").map_err(io)?;
    for (u, b) in data.user_blocks.iter().enumerate() {
        let cold = data.cold_users.contains(&u) as u8;
        writeln!(out, "user\t{u}\t{b}\t{cold}").map_err(io)?;
    }
    for (i, b) in data.item_blocks.iter().enumerate() {
        writeln!(out, "item\t{i}\t{b}\t0").map_err(io)?;
    }
    fs::write(&path, out).map_err(io)?;
    Ok(())
}
