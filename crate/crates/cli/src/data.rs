use std::path::PathBuf;

use clap::Args;
use sumo::dataset::{read_json, synthesize, write_json, Dataset, SynthLayout};
use sumo::dsp::{Preprocessor, TARGET_FS};
use sumo::metrics::EventSet;
use sumo::synth::SynthConfig;
use sumo::{Error, Result, SpindleEvent};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Generator configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    n_subjects: usize,
    #[arg(long, default_value_t = 3)]
    segments_per_subject: usize,
    /// Subjects that get ten segments instead, split across cohorts.
    #[arg(long, default_value_t = 0)]
    ten_segment_subjects: usize,
    #[arg(long, default_value_t = 0.5)]
    older_fraction: f64,
    /// Overrides the seed in the configuration file.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let layout = SynthLayout {
        n_subjects: a.n_subjects,
        segments_per_subject: a.segments_per_subject,
        ten_segment_subjects: a.ten_segment_subjects,
        older_fraction: a.older_fraction,
    };
    cfg.validate()?;
    let ds = synthesize(&a.out, &cfg, &layout)?;
    write_json(a.out.join("synth_config.json"), &cfg)?;
    let events: usize = ds.read_annotations(sumo::dataset::TRUTH)?.values().map(Vec::len).sum();
    println!(
        "wrote {} subjects, {} segments, {events} truth events to {}",
        ds.manifest.subjects.len(),
        ds.manifest.segments.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Filter settings (JSON); defaults to a 10th-order 0.3-30 Hz band-pass.
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    let pre: Preprocessor = match &a.config {
        Some(p) => read_json(p)?,
        None => Preprocessor::default(),
    };
    if pre.target_fs != TARGET_FS {
        return Err(Error::Config(format!("the network runs at {TARGET_FS} Hz, got target_fs {}", pre.target_fs)));
    }
    let src = Dataset::open(&a.dataset)?;
    if a.out.join(sumo::dataset::MANIFEST).exists() {
        return Err(Error::Config(format!("{} already holds a dataset", a.out.display())));
    }
    let segs: Vec<_> = src.manifest.segments.iter().collect();
    let inputs = src.model_inputs(&segs, &pre)?;
    let mut out = Dataset::create(&a.out)?;
    for s in &src.manifest.subjects {
        out.add_subject(&s.subject_id, s.cohort)?;
    }
    for (seg, x) in segs.iter().zip(&inputs) {
        out.add_segment(&seg.segment_id, &seg.subject_id, TARGET_FS, x, true)?;
    }
    out.save_manifest()?;
    // resampling can shorten a segment by a fraction of a sample
    for name in src.annotation_names()? {
        let set = src.read_annotations(&name)?;
        let clipped: EventSet = set
            .into_iter()
            .map(|(id, evs)| {
                let dur = out.segment(&id).expect("same segments").duration_s;
                (id, clip(evs, dur))
            })
            .collect();
        out.write_annotations(&name, &clipped)?;
    }
    println!("preprocessed {} segments into {}", inputs.len(), a.out.display());
    Ok(())
}

/// Trims events to `[0, duration_s]`, dropping any that vanish.
pub fn clip(events: Vec<SpindleEvent>, duration_s: f64) -> Vec<SpindleEvent> {
    events
        .into_iter()
        .filter_map(|e| {
            let end = e.end_s().min(duration_s);
            (end > e.onset_s).then_some(SpindleEvent { onset_s: e.onset_s, duration_s: end - e.onset_s })
        })
        .collect()
}
