use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use sumo::dataset::{read_json, write_json, Dataset, SplitFile, TRUTH};
use sumo::dsp::{Preprocessor, TARGET_FS};
use sumo::metrics::{default_grid, evaluate, match_events, prf, EvalInput, EventSet, SegmentInfo};
use sumo::model::{ArchConfig, Checkpoint};
use sumo::postproc::{detect, ExtractOptions};
use sumo::train::{select_median_split, SplitConstraints};
use sumo::{Error, Result, SpindleEvent};

use crate::data::clip;
use crate::{Part, SubsetArgs};

/// Overlap threshold at which candidate test sets are scored.
const SCORING_THRESHOLD: f64 = 0.2;

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Annotation set whose agreement with the reference scores each candidate.
    #[arg(long)]
    scorer: String,
    #[arg(long, default_value = TRUTH)]
    reference: String,
    #[arg(long, default_value_t = 25)]
    candidates: usize,
    #[arg(long, default_value_t = 18)]
    subjects_per_cohort: usize,
    #[arg(long, default_value_t = 54)]
    segments_per_cohort: usize,
    #[arg(long, default_value_t = 10_000)]
    max_attempts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to split.json inside the dataset.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Subjects selected by an optional split file, or all of them.
fn subjects(ds: &Dataset, subset: &SubsetArgs) -> Result<BTreeSet<String>> {
    let Some(path) = &subset.split else {
        return Ok(ds.manifest.subjects.iter().map(|s| s.subject_id.clone()).collect());
    };
    let split: SplitFile = read_json(path)?;
    split.validate_against(ds)?;
    Ok(match subset.part {
        Part::Train => split.train,
        Part::Test => split.test,
    }
    .into_iter()
    .collect())
}

/// `set` restricted to the given segments.
fn restrict(set: &EventSet, keep: &BTreeSet<&str>) -> EventSet {
    set.iter().filter(|(id, _)| keep.contains(id.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect()
}

/// Pooled F1 at [`SCORING_THRESHOLD`] over all segments of `test`.
fn candidate_f1(ds: &Dataset, reference: &EventSet, scorer: &EventSet, test: &[String]) -> Result<f64> {
    let empty = Vec::new();
    let held: BTreeSet<String> = test.iter().cloned().collect();
    let mut counts = sumo::metrics::Counts::default();
    for seg in ds.segments_of(&held) {
        let r = reference.get(&seg.segment_id).unwrap_or(&empty);
        let d = scorer.get(&seg.segment_id).unwrap_or(&empty);
        counts += match_events(r, d, SCORING_THRESHOLD)?.counts;
    }
    Ok(prf(counts).f1)
}

pub fn split(a: SplitArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let reference = ds.read_annotations(&a.reference)?;
    let scorer = ds.read_annotations(&a.scorer)?;
    let c = SplitConstraints {
        subjects_per_cohort: a.subjects_per_cohort,
        segments_per_cohort: a.segments_per_cohort,
        candidates: a.candidates,
        max_attempts: a.max_attempts,
    };
    let sel = select_median_split(&ds.pool(), &c, |_, test| candidate_f1(&ds, &reference, &scorer, test), a.seed)?;
    println!("{:>9} {:>8}", "candidate", "F1@0.2");
    for cand in &sel.candidates {
        println!("{:>9} {:>8.4}{}", cand.index, cand.score, if cand.index == sel.selected { "  <- median" } else { "" });
    }
    let out = a.out.unwrap_or_else(|| ds.root.join("split.json"));
    let file = SplitFile { train: sel.train, test: sel.test, selected: Some(sel.selected), candidates: sel.candidates };
    write_json(&out, &file)?;
    println!("{} train / {} test subjects written to {}", file.train.len(), file.test.len(), out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Name of the annotation set to write.
    #[arg(long)]
    out: String,
    /// Refuse checkpoints whose architecture differs from this one (JSON).
    #[arg(long)]
    arch_config: Option<PathBuf>,
    /// Drop detections shorter than this many seconds.
    #[arg(long)]
    min_duration: Option<f64>,
    #[command(flatten)]
    subset: SubsetArgs,
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let model = Checkpoint::load(&a.model)?.model;
    if let Some(p) = &a.arch_config {
        let want: ArchConfig = read_json(p)?;
        if want != model.arch {
            return Err(Error::Config(format!(
                "checkpoint architecture {:?} differs from {}",
                model.arch,
                p.display()
            )));
        }
    }
    let opts = ExtractOptions { min_duration_s: a.min_duration };
    let keep = subjects(&ds, &a.subset)?;
    let segs = ds.segments_of(&keep);
    let pre = Preprocessor::default();
    let detected: Vec<Vec<SpindleEvent>> = segs
        .par_iter()
        .map(|s| {
            let x = ds.model_input(s, &pre)?;
            Ok(clip(detect(&model, &x, TARGET_FS, &opts)?, s.duration_s))
        })
        .collect::<Result<_>>()?;
    let set: EventSet = segs.iter().map(|s| s.segment_id.clone()).zip(detected).collect();
    ds.write_annotations(&a.out, &set)?;
    let n: usize = set.values().map(Vec::len).sum();
    println!("{n} events in {} segments written to set {}", segs.len(), a.out);
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    reference: String,
    /// Annotation sets to score; give two to compare their correlations.
    #[arg(long, required = true)]
    detected: Vec<String>,
    /// Add per-subject density and duration statistics and correlations.
    #[arg(long)]
    by_subject: bool,
    /// Report path; CSV tables are written next to it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    subset: SubsetArgs,
}

#[derive(Serialize)]
struct CurveCsv<'a> {
    detector: &'a str,
    threshold: f64,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    precision: f64,
    recall: f64,
    f1: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    w.flush()?;
    Ok(())
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    out.with_file_name(format!("{stem}_{suffix}.csv"))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ds = Dataset::open(&a.dataset)?;
    let keep = subjects(&ds, &a.subset)?;
    let infos: Vec<SegmentInfo> = ds.segment_infos().into_iter().filter(|s| keep.contains(&s.subject_id)).collect();
    let ids: BTreeSet<&str> = infos.iter().map(|s| s.segment_id.as_str()).collect();
    let reference = restrict(&ds.read_annotations(&a.reference)?, &ids);
    let detected: Vec<EventSet> =
        a.detected.iter().map(|n| Ok(restrict(&ds.read_annotations(n)?, &ids))).collect::<Result<_>>()?;
    let input = EvalInput {
        segments: &infos,
        reference: (&a.reference, &reference),
        detected: a.detected.iter().map(String::as_str).zip(&detected).collect(),
        grid: default_grid(),
        by_subject: a.by_subject,
    };
    let report = evaluate(&input)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_json(&a.out, &report)?;
    let rows = report.threshold_rows();
    write_csv(
        &sibling(&a.out, "curve"),
        rows.iter().map(|(d, r)| CurveCsv {
            detector: d,
            threshold: r.threshold,
            tp: r.tp,
            fp: r.fp,
            fn_: r.fn_,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
        }),
    )?;
    if a.by_subject {
        write_csv(&sibling(&a.out, "subjects"), report.subject_rows())?;
        write_csv(&sibling(&a.out, "correlations"), report.correlation_rows())?;
    }

    println!("{} segments, reference {}", report.segment_count, report.reference);
    for d in &report.detectors {
        let f1 = d.f1_at(SCORING_THRESHOLD).unwrap_or(f64::NAN);
        println!("{:<20} F1@0.2 {f1:.4}  F1-bar {:.4}", d.name, d.f1_bar);
        for c in d.correlations.iter().filter(|c| c.group == "all") {
            match &c.result {
                Some(r) => println!("    {:<9} r2 {:.3}  slope {:.3}  n {}", c.quantity, r.r2, r.slope, r.n),
                None => println!("    {:<9} {}", c.quantity, c.note.as_deref().unwrap_or("undefined")),
            }
        }
    }
    for c in report.comparisons.iter().filter(|c| c.group == "all") {
        if let Some(f) = &c.result {
            println!("{} vs {} ({}): z {:.3}  p {:.4}", c.first, c.second, c.quantity, f.z_stat, f.p_two_sided);
        }
    }
    Ok(())
}
