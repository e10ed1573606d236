use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use serde::{Deserialize, Serialize};
use sumo::dataset::{read_json, segment_counts, write_json, Dataset, SegmentEntry, SplitFile, TRUTH};
use sumo::dsp::{Preprocessor, TARGET_FS};
use sumo::metrics::EventSet;
use sumo::model::{ArchConfig, Checkpoint};
use sumo::train::{
    make_folds, rasterize, train_resume, EpochRecord, FoldAssignment, StopReason, TrainConfig, TrainExample, TrainState,
    ValExample,
};
use sumo::{Error, Result};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Split file; training uses its train subjects only.
    #[arg(long)]
    split: PathBuf,
    /// Network shape (JSON); defaults to the 3-level network.
    #[arg(long)]
    arch_config: Option<PathBuf>,
    /// Optimizer and early-stopping settings (JSON).
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Annotation set used as labels.
    #[arg(long, default_value = TRUTH)]
    reference: String,
    /// Train only these folds (comma separated); all by default.
    #[arg(long, value_delimiter = ',')]
    folds_to_run: Vec<usize>,
    /// Continue folds from their latest checkpoints in the output directory.
    #[arg(long)]
    resume: bool,
}

/// Everything a run was started with, written once and checked on resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RunConfig {
    arch: ArchConfig,
    train: TrainConfig,
    preprocess: Preprocessor,
    reference: String,
    folds: FoldAssignment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FoldSummary {
    fold: usize,
    epochs: usize,
    best_epoch: usize,
    best_val_f1_bar: Option<f64>,
    stop: StopReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Summary {
    folds: Vec<FoldSummary>,
    /// Fold whose best parameters were copied to `model.ckpt`.
    selected_fold: Option<usize>,
}

fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold-{fold}"))
}

fn save_state(dir: &Path, s: &TrainState) -> Result<()> {
    let (last, best) = s.to_checkpoints();
    last.save(dir.join("last.ckpt"))?;
    best.save(dir.join("best.ckpt"))?;
    write_json(dir.join("history.json"), &s.history)?;
    let mut w = csv::Writer::from_path(dir.join("history.csv")).map_err(|e| Error::Format(e.to_string()))?;
    for r in &s.history {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn load_state(dir: &Path) -> Result<TrainState> {
    let history: Vec<EpochRecord> = read_json(dir.join("history.json"))?;
    TrainState::from_checkpoints(Checkpoint::load(dir.join("last.ckpt"))?, Checkpoint::load(dir.join("best.ckpt"))?, history)
}

fn examples(
    ds: &Dataset,
    segs: &[&SegmentEntry],
    inputs: &[Vec<f32>],
    labels: &EventSet,
) -> Result<(Vec<TrainExample>, Vec<ValExample>)> {
    let mut train = Vec::with_capacity(segs.len());
    let mut val = Vec::with_capacity(segs.len());
    for (seg, x) in segs.iter().zip(inputs) {
        let events = labels.get(&seg.segment_id).cloned().unwrap_or_default();
        let mask = rasterize(&events, TARGET_FS, x.len())
            .map_err(|e| Error::Validation(format!("{} in {}: {e}", seg.segment_id, ds.root.display())))?;
        train.push(TrainExample { signal: x.clone(), mask });
        val.push(ValExample { signal: x.clone(), events });
    }
    Ok((train, val))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let split: SplitFile = read_json(&a.split)?;
    split.validate_against(&ds)?;
    let arch: ArchConfig = match &a.arch_config {
        Some(p) => read_json(p)?,
        None => ArchConfig::default(),
    };
    arch.validate()?;
    let cfg: TrainConfig = match &a.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.validate()?;
    let labels = ds.read_annotations(&a.reference)?;

    let counts = segment_counts(&ds);
    let pool: Vec<(String, usize)> = split.train.iter().map(|s| (s.clone(), counts.get(s).copied().unwrap_or(0))).collect();
    let folds = make_folds(&pool, cfg.folds, cfg.seed)?;
    let run = RunConfig { arch, train: cfg, preprocess: Preprocessor::default(), reference: a.reference.clone(), folds };
    let to_run: Vec<usize> = if a.folds_to_run.is_empty() { (0..run.train.folds).collect() } else { a.folds_to_run.clone() };
    if let Some(f) = to_run.iter().find(|&&f| f >= run.train.folds) {
        return Err(Error::Config(format!("fold {f} does not exist; there are {}", run.train.folds)));
    }

    fs::create_dir_all(&a.out_dir)?;
    let config_path = a.out_dir.join("config.json");
    if a.resume && config_path.exists() {
        let prev: RunConfig = read_json(&config_path)?;
        if prev != run {
            return Err(Error::Config(format!("{} was written by a different configuration", config_path.display())));
        }
    }
    write_json(&config_path, &run)?;

    let train_subjects: BTreeSet<String> = split.train.iter().cloned().collect();
    let segs = ds.segments_of(&train_subjects);
    let started = Instant::now();
    let inputs = ds.model_inputs(&segs, &run.preprocess)?;
    log::info!("preprocessed {} training segments in {:.1} s", segs.len(), started.elapsed().as_secs_f64());
    let (all_train, all_val) = examples(&ds, &segs, &inputs, &labels)?;
    drop(inputs);

    let mut summaries = Vec::new();
    let mut diverged = None;
    for &fold in &to_run {
        let in_val = |seg: &SegmentEntry| run.folds.fold_of.get(&seg.subject_id) == Some(&fold);
        let tr: Vec<TrainExample> =
            segs.iter().zip(&all_train).filter(|(s, _)| !in_val(s)).map(|(_, e)| e.clone()).collect();
        let va: Vec<ValExample> = segs.iter().zip(&all_val).filter(|(s, _)| in_val(s)).map(|(_, e)| e.clone()).collect();
        let dir = fold_dir(&a.out_dir, fold);
        fs::create_dir_all(&dir)?;
        let state = if a.resume && dir.join("last.ckpt").exists() {
            let s = load_state(&dir)?;
            if s.model.arch != run.arch {
                return Err(Error::Config(format!("fold {fold} checkpoint has a different architecture")));
            }
            log::info!("fold {fold}: resuming after epoch {}", s.model.meta.epoch);
            s
        } else {
            // each fold starts from its own initialization
            TrainState::new(&run.arch, run.train.seed.wrapping_add(fold as u64))?
        };
        log::info!("fold {fold}: {} training / {} validation segments", tr.len(), va.len());
        let t0 = Instant::now();
        let outcome = train_resume(state, &tr, &va, &run.train, &mut |s| save_state(&dir, s))?;
        save_state(&dir, &outcome.state)?;
        let meta = &outcome.state.model.meta;
        let summary = FoldSummary {
            fold,
            epochs: meta.epoch,
            best_epoch: meta.best_epoch,
            best_val_f1_bar: meta.best_val_f1_bar,
            stop: outcome.stop.clone(),
        };
        println!(
            "fold {fold}: best validation F1-bar {} at epoch {} of {} ({:.0} s)",
            summary.best_val_f1_bar.map_or("n/a".into(), |v| format!("{v:.4}")),
            summary.best_epoch,
            summary.epochs,
            t0.elapsed().as_secs_f64()
        );
        if let StopReason::Diverged { epoch, detail } = &outcome.stop {
            diverged = Some(format!("fold {fold} diverged in epoch {epoch}: {detail}"));
        }
        summaries.push(summary);
        if diverged.is_some() {
            break;
        }
    }

    let selected = summaries
        .iter()
        .filter(|s| s.best_val_f1_bar.is_some())
        .max_by(|x, y| x.best_val_f1_bar.partial_cmp(&y.best_val_f1_bar).expect("finite").then(y.fold.cmp(&x.fold)))
        .map(|s| s.fold);
    if let Some(f) = selected {
        fs::copy(fold_dir(&a.out_dir, f).join("best.ckpt"), a.out_dir.join("model.ckpt"))?;
    }
    write_json(a.out_dir.join("summary.json"), &Summary { folds: summaries, selected_fold: selected })?;
    if let Some(msg) = diverged {
        return Err(Error::Numerical(msg));
    }
    Ok(())
}
