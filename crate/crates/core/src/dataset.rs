//! On-disk dataset: a JSON manifest, one raw little-endian f32 file per
//! segment, and named annotation sets.
//!
//! ```text
//! root/manifest.json
//! root/signals/<segment_id>.f32
//! root/annotations/<name>.json   [{segment_id, onset_s, duration_s}, ...]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{Cohort, Preprocessor, RawSegment, TARGET_FS};
use crate::error::{Error, Result};
use crate::metrics::{validate_events, EventSet, SegmentInfo, SpindleEvent};
use crate::synth::{gen_segment_at_rate, jitter_annotations, SynthConfig};
use crate::train::PoolSubject;

pub const MANIFEST: &str = "manifest.json";
pub const SIGNAL_DIR: &str = "signals";
pub const ANNOTATION_DIR: &str = "annotations";
/// Annotation set written by the synthetic generator.
pub const TRUTH: &str = "truth";
/// Rater-noise version of the truth, written when jitter is configured.
pub const JITTERED: &str = "jittered";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub cohort: Cohort,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentEntry {
    pub segment_id: String,
    pub subject_id: String,
    /// Relative to the dataset root.
    pub file: String,
    pub duration_s: f64,
    pub fs: f64,
    /// Already band-passed, at 100 Hz and z-scored.
    #[serde(default)]
    pub preprocessed: bool,
}

impl SegmentEntry {
    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub subjects: Vec<SubjectEntry>,
    pub segments: Vec<SegmentEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct RecordOut<'a> {
    segment_id: &'a str,
    onset_s: f64,
    duration_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub segment_id: String,
    pub onset_s: f64,
    pub duration_s: f64,
}

/// Rounds to the microsecond so written annotation sets are stable.
pub fn round_us(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn valid_name(name: &str) -> Result<()> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) || name.starts_with('.') {
        return Err(Error::Validation(format!("invalid name {name:?}: use letters, digits, '_', '-' and '.'")));
    }
    Ok(())
}

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    /// Starts an empty dataset, creating the directory layout.
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join(SIGNAL_DIR))?;
        fs::create_dir_all(root.join(ANNOTATION_DIR))?;
        Ok(Self { root, manifest: Manifest::default() })
    }

    /// Opens and fully validates a dataset.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest: Manifest = read_json(root.join(MANIFEST))?;
        let ds = Self { root, manifest };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut subjects = BTreeSet::new();
        for s in &self.manifest.subjects {
            valid_name(&s.subject_id)?;
            if !subjects.insert(s.subject_id.as_str()) {
                return Err(Error::Validation(format!("subject {} listed twice", s.subject_id)));
            }
        }
        let mut seen = BTreeSet::new();
        for seg in &self.manifest.segments {
            valid_name(&seg.segment_id)?;
            if !seen.insert(seg.segment_id.as_str()) {
                return Err(Error::Validation(format!("segment {} listed twice", seg.segment_id)));
            }
            if !subjects.contains(seg.subject_id.as_str()) {
                return Err(Error::Validation(format!("segment {} names unknown subject {}", seg.segment_id, seg.subject_id)));
            }
            if !(seg.fs > 0.0 && seg.duration_s > 0.0 && seg.fs.is_finite() && seg.duration_s.is_finite()) {
                return Err(Error::Validation(format!("segment {} needs positive fs and duration", seg.segment_id)));
            }
            let path = self.root.join(&seg.file);
            let meta = fs::metadata(&path)
                .map_err(|e| Error::Validation(format!("segment {}: {}: {e}", seg.segment_id, path.display())))?;
            let want = seg.sample_count() as u64 * 4;
            if meta.len() != want {
                return Err(Error::Validation(format!(
                    "segment {}: file holds {} bytes, duration x fs implies {want}",
                    seg.segment_id,
                    meta.len()
                )));
            }
        }
        Ok(())
    }

    pub fn save_manifest(&self) -> Result<()> {
        write_json(self.root.join(MANIFEST), &self.manifest)
    }

    pub fn add_subject(&mut self, subject_id: &str, cohort: Cohort) -> Result<()> {
        valid_name(subject_id)?;
        if self.subject(subject_id).is_some() {
            return Err(Error::Validation(format!("subject {subject_id} already exists")));
        }
        self.manifest.subjects.push(SubjectEntry { subject_id: subject_id.to_string(), cohort });
        Ok(())
    }

    /// Writes the signal file and appends the manifest entry.
    pub fn add_segment(&mut self, segment_id: &str, subject_id: &str, fs: f64, samples: &[f32], preprocessed: bool) -> Result<()> {
        valid_name(segment_id)?;
        if self.subject(subject_id).is_none() {
            return Err(Error::Validation(format!("unknown subject {subject_id}")));
        }
        if self.segment(segment_id).is_some() {
            return Err(Error::Validation(format!("segment {segment_id} already exists")));
        }
        let file = format!("{SIGNAL_DIR}/{segment_id}.f32");
        write_f32(self.root.join(&file), samples)?;
        self.manifest.segments.push(SegmentEntry {
            segment_id: segment_id.to_string(),
            subject_id: subject_id.to_string(),
            file,
            duration_s: samples.len() as f64 / fs,
            fs,
            preprocessed,
        });
        Ok(())
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectEntry> {
        self.manifest.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn segment(&self, id: &str) -> Option<&SegmentEntry> {
        self.manifest.segments.iter().find(|s| s.segment_id == id)
    }

    pub fn cohort_of(&self, seg: &SegmentEntry) -> Cohort {
        self.subject(&seg.subject_id).map(|s| s.cohort).expect("validated manifest")
    }

    pub fn read_signal(&self, seg: &SegmentEntry) -> Result<Vec<f32>> {
        let v = read_f32(self.root.join(&seg.file))?;
        if v.len() != seg.sample_count() {
            return Err(Error::Validation(format!("segment {}: {} samples, expected {}", seg.segment_id, v.len(), seg.sample_count())));
        }
        Ok(v)
    }

    pub fn raw_segment(&self, seg: &SegmentEntry) -> Result<RawSegment> {
        Ok(RawSegment {
            samples: self.read_signal(seg)?,
            sample_rate_hz: seg.fs,
            subject_id: seg.subject_id.clone(),
            cohort: self.cohort_of(seg),
            segment_id: seg.segment_id.clone(),
        })
    }

    /// Network input for a segment: stored samples when already
    /// preprocessed, otherwise the output of `pre`.
    pub fn model_input(&self, seg: &SegmentEntry, pre: &Preprocessor) -> Result<Vec<f32>> {
        if seg.preprocessed {
            if (seg.fs - TARGET_FS).abs() > 1e-9 {
                return Err(Error::Validation(format!("segment {} is marked preprocessed but sampled at {} Hz", seg.segment_id, seg.fs)));
            }
            return self.read_signal(seg);
        }
        let p = pre.run(&self.raw_segment(seg)?)?;
        if p.degenerate {
            log::warn!("segment {} is constant; using zeros", seg.segment_id);
        }
        Ok(p.segment.samples)
    }

    /// Model inputs for `segs`, computed in parallel, in order.
    pub fn model_inputs(&self, segs: &[&SegmentEntry], pre: &Preprocessor) -> Result<Vec<Vec<f32>>> {
        segs.par_iter().map(|s| self.model_input(s, pre)).collect()
    }

    pub fn annotation_path(&self, name: &str) -> PathBuf {
        self.root.join(ANNOTATION_DIR).join(format!("{name}.json"))
    }

    pub fn has_annotations(&self, name: &str) -> bool {
        self.annotation_path(name).is_file()
    }

    pub fn annotation_names(&self) -> Result<Vec<String>> {
        let dir = self.root.join(ANNOTATION_DIR);
        if !dir.is_dir() {
            return Ok(vec![]);
        }
        let mut names: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".json")).map(String::from))
            .collect();
        names.sort();
        Ok(names)
    }

    /// Reads an annotation set, validating every record against the manifest.
    pub fn read_annotations(&self, name: &str) -> Result<EventSet> {
        valid_name(name)?;
        let path = self.annotation_path(name);
        if !path.is_file() {
            return Err(Error::Validation(format!("annotation set {name} not found in {}", self.root.display())));
        }
        let records: Vec<AnnotationRecord> = read_json(&path)?;
        let mut set = EventSet::new();
        for r in records {
            if self.segment(&r.segment_id).is_none() {
                return Err(Error::Validation(format!("annotation set {name} refers to unknown segment {}", r.segment_id)));
            }
            let ev = SpindleEvent::new(r.onset_s, r.duration_s)?;
            set.entry(r.segment_id).or_default().push(ev);
        }
        for (id, evs) in set.iter_mut() {
            evs.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
            let dur = self.segment(id).expect("checked").duration_s;
            validate_events(evs, Some(dur)).map_err(|e| Error::Validation(format!("{name}/{id}: {e}")))?;
        }
        Ok(set)
    }

    /// Writes an annotation set sorted by segment then onset, with times
    /// rounded to the microsecond.
    pub fn write_annotations(&self, name: &str, set: &EventSet) -> Result<()> {
        valid_name(name)?;
        let mut records = Vec::new();
        for seg in &self.manifest.segments {
            if let Some(evs) = set.get(&seg.segment_id) {
                for e in evs {
                    records.push(RecordOut { segment_id: &seg.segment_id, onset_s: round_us(e.onset_s), duration_s: round_us(e.duration_s) });
                }
            }
        }
        for id in set.keys() {
            if self.segment(id).is_none() {
                return Err(Error::Validation(format!("annotation set {name} refers to unknown segment {id}")));
            }
        }
        records.sort_by(|a, b| a.segment_id.cmp(b.segment_id).then(a.onset_s.total_cmp(&b.onset_s)));
        fs::create_dir_all(self.root.join(ANNOTATION_DIR))?;
        write_json(self.annotation_path(name), &records)
    }

    pub fn segment_infos(&self) -> Vec<SegmentInfo> {
        self.manifest
            .segments
            .iter()
            .map(|s| SegmentInfo {
                segment_id: s.segment_id.clone(),
                subject_id: s.subject_id.clone(),
                cohort: self.cohort_of(s),
                duration_s: s.duration_s,
            })
            .collect()
    }

    /// Segments belonging to any of `subjects`, in manifest order.
    pub fn segments_of(&self, subjects: &BTreeSet<String>) -> Vec<&SegmentEntry> {
        self.manifest.segments.iter().filter(|s| subjects.contains(&s.subject_id)).collect()
    }

    pub fn pool(&self) -> Vec<PoolSubject> {
        self.manifest
            .subjects
            .iter()
            .map(|s| PoolSubject {
                subject_id: s.subject_id.clone(),
                cohort: s.cohort,
                segments: self.manifest.segments.iter().filter(|g| g.subject_id == s.subject_id).count(),
            })
            .collect()
    }
}

pub fn write_f32(path: impl AsRef<Path>, samples: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = samples.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f32(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("{}: length {} is not a multiple of 4", path.display(), bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Shape of a synthetic cohort study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthLayout {
    pub n_subjects: usize,
    pub segments_per_subject: usize,
    /// Subjects recorded with ten segments instead, split across cohorts.
    pub ten_segment_subjects: usize,
    pub older_fraction: f64,
}

impl Default for SynthLayout {
    fn default() -> Self {
        Self { n_subjects: 30, segments_per_subject: 3, ten_segment_subjects: 0, older_fraction: 0.5 }
    }
}

/// Generates a synthetic dataset with a `truth` annotation set, plus a
/// `jittered` one when rater noise is configured.
///
/// Subject `i` is `sub-<i>`; the first `round(n * (1 - older_fraction))`
/// are younger. Ten-segment subjects are the leading subjects of each
/// cohort, split as evenly as possible. Each subject draws its spindle
/// rate once; every segment has its own seed derived from `cfg.seed`.
pub fn synthesize(root: impl AsRef<Path>, cfg: &SynthConfig, layout: &SynthLayout) -> Result<Dataset> {
    cfg.validate()?;
    if layout.n_subjects == 0 || layout.segments_per_subject == 0 {
        return Err(Error::Config("need at least one subject and one segment per subject".into()));
    }
    if layout.ten_segment_subjects > layout.n_subjects || !(0.0..=1.0).contains(&layout.older_fraction) {
        return Err(Error::Config("ten_segment_subjects must not exceed n_subjects; older_fraction in [0, 1]".into()));
    }
    let n = layout.n_subjects;
    let n_younger = (n as f64 * (1.0 - layout.older_fraction)).round() as usize;
    let n_older = n - n_younger;
    let mut ten_y = layout.ten_segment_subjects.div_ceil(2).min(n_younger);
    let mut ten_o = (layout.ten_segment_subjects - ten_y).min(n_older);
    ten_y = (layout.ten_segment_subjects - ten_o).min(n_younger);
    ten_o = layout.ten_segment_subjects - ten_y;

    struct Plan {
        subject: String,
        cohort: Cohort,
        rate: f64,
        seeds: Vec<u64>,
    }
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = &cfg.spindle;
    let plans: Vec<Plan> = (0..n)
        .map(|i| {
            let (cohort, k) = if i < n_younger { (Cohort::Younger, i) } else { (Cohort::Older, i - n_younger) };
            let ten = if cohort == Cohort::Younger { k < ten_y } else { k < ten_o };
            let count = if ten { 10 } else { layout.segments_per_subject };
            let rate = if s.rate_spread_per_min > 0.0 {
                master.random_range(s.rate_per_min - s.rate_spread_per_min..=s.rate_per_min + s.rate_spread_per_min)
            } else {
                s.rate_per_min
            };
            let seeds = (0..count).map(|_| master.next_u64()).collect();
            Plan { subject: format!("sub-{i:03}"), cohort, rate, seeds }
        })
        .collect();

    let jobs: Vec<(usize, usize)> = plans.iter().enumerate().flat_map(|(i, p)| (0..p.seeds.len()).map(move |j| (i, j))).collect();
    let segments: Vec<_> = jobs
        .par_iter()
        .map(|&(i, j)| gen_segment_at_rate(cfg, plans[i].rate, plans[i].seeds[j]))
        .collect::<Result<_>>()?;

    let mut ds = Dataset::create(root)?;
    for p in &plans {
        ds.add_subject(&p.subject, p.cohort)?;
    }
    let mut truth = EventSet::new();
    let mut jittered = EventSet::new();
    let with_jitter = cfg.jitter != Default::default();
    for (&(i, j), seg) in jobs.iter().zip(&segments) {
        let id = format!("{}_seg-{j:02}", plans[i].subject);
        ds.add_segment(&id, &plans[i].subject, seg.fs, &seg.samples, false)?;
        if with_jitter {
            let seed = plans[i].seeds[j] ^ 0x9e37_79b9_7f4a_7c15;
            let dur = seg.samples.len() as f64 / seg.fs;
            jittered.insert(id.clone(), jitter_annotations(&seg.truth, &cfg.jitter, dur, seed)?);
        }
        truth.insert(id, seg.truth.clone());
    }
    ds.save_manifest()?;
    ds.write_annotations(TRUTH, &truth)?;
    if with_jitter {
        ds.write_annotations(JITTERED, &jittered)?;
    }
    Ok(ds)
}

/// Subject sets of a train/test split on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub train: Vec<String>,
    pub test: Vec<String>,
    #[serde(default)]
    pub selected: Option<usize>,
    #[serde(default)]
    pub candidates: Vec<crate::train::Candidate>,
}

impl SplitFile {
    pub fn validate_against(&self, ds: &Dataset) -> Result<()> {
        let train: BTreeSet<&String> = self.train.iter().collect();
        for id in self.train.iter().chain(&self.test) {
            if ds.subject(id).is_none() {
                return Err(Error::Validation(format!("split names unknown subject {id}")));
            }
        }
        if let Some(id) = self.test.iter().find(|t| train.contains(t)) {
            return Err(Error::Validation(format!("subject {id} is in both train and test")));
        }
        Ok(())
    }
}

/// Counts of segments per subject, in manifest subject order.
pub fn segment_counts(ds: &Dataset) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for s in &ds.manifest.segments {
        *m.entry(s.subject_id.clone()).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("sumo-ds-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn synth_round_trip() {
        let dir = tmp("rt");
        let cfg = SynthConfig { segment_s: 30.0, ..Default::default() };
        let layout = SynthLayout { n_subjects: 4, segments_per_subject: 2, ten_segment_subjects: 1, older_fraction: 0.5 };
        let ds = synthesize(&dir, &cfg, &layout).unwrap();
        assert_eq!(ds.manifest.segments.len(), 10 + 3 * 2);
        let ds = Dataset::open(&dir).unwrap();
        let truth = ds.read_annotations(TRUTH).unwrap();
        ds.write_annotations("copy", &truth).unwrap();
        assert_eq!(ds.read_annotations("copy").unwrap(), truth);
        assert_eq!(fs::read(ds.annotation_path("copy")).unwrap(), fs::read(ds.annotation_path(TRUTH)).unwrap());
        assert_eq!(ds.pool().iter().filter(|p| p.segments == 10).count(), 1);
        assert!(ds.read_annotations("missing").is_err());

        let again = tmp("rt2");
        synthesize(&again, &cfg, &layout).unwrap();
        for f in [MANIFEST, "annotations/truth.json", "signals/sub-000_seg-00.f32"] {
            assert_eq!(fs::read(dir.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
        }
        let _ = fs::remove_dir_all(&dir);
        let _ = fs::remove_dir_all(&again);
    }

    #[test]
    fn truncated_signal_fails_validation() {
        let dir = tmp("trunc");
        let cfg = SynthConfig { segment_s: 10.0, ..Default::default() };
        let layout = SynthLayout { n_subjects: 1, segments_per_subject: 1, ..Default::default() };
        let ds = synthesize(&dir, &cfg, &layout).unwrap();
        let f = dir.join(&ds.manifest.segments[0].file);
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(Dataset::open(&dir), Err(Error::Validation(_))));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn annotation_references_checked() {
        let dir = tmp("ann");
        let cfg = SynthConfig { segment_s: 10.0, ..Default::default() };
        let ds = synthesize(&dir, &cfg, &SynthLayout { n_subjects: 1, segments_per_subject: 1, ..Default::default() }).unwrap();
        fs::write(ds.annotation_path("bad"), r#"[{"segment_id": "nope", "onset_s": 1.0, "duration_s": 1.0}]"#).unwrap();
        assert!(ds.read_annotations("bad").is_err());
        fs::write(ds.annotation_path("long"), r#"[{"segment_id": "sub-000_seg-00", "onset_s": 9.5, "duration_s": 1.0}]"#).unwrap();
        assert!(ds.read_annotations("long").is_err());
        assert!(ds.read_annotations("../x").is_err());
        let _ = fs::remove_dir_all(&dir);
    }
}
