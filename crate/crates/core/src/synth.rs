//! Ground-truth-labelled synthetic corpora: probability matrices, GPS fixes,
//! a class vocabulary and an ontology in the published schema.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, TimeZone, Utc};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::config::{PathsConfig, PipelineConfig};
use crate::error::{Error, Result};
use crate::events::{EventProbMatrix, EventVocabulary, SegmentRecord, VocabEntry, N_CLASSES, SEGMENT_SECONDS};
use crate::geogrid::{hex_centroid, hex_index, GpsFix, HexCoord, DEFAULT_EDGE};
use crate::io;
use crate::ontology::OntologyRecord;

pub const CATEGORIES: usize = 7;
pub const GROUP_SIZE: usize = 8;
/// Leaf groups in the synthetic ontology; the last one is partial.
pub const GROUPS: usize = N_CLASSES.div_ceil(GROUP_SIZE);

// Stream offsets so matrices, fixes and dropout never share draws.
const FIX_STREAM: u64 = 1 << 32;
const DROPOUT_STREAM: u64 = 2 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneProfile {
    pub name: String,
    pub active_class_pool: Vec<usize>,
    pub events_per_second_mean: f64,
    pub base_noise_level: f64,
    pub cell: HexCoord,
}

impl SceneProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(format!("profile `{}`: {m}", self.name)));
        if self.active_class_pool.is_empty() {
            return bad("empty class pool".into());
        }
        if let Some(c) = self.active_class_pool.iter().find(|&&c| c >= N_CLASSES) {
            return bad(format!("class {c} outside 0..{N_CLASSES}"));
        }
        let mut pool = self.active_class_pool.clone();
        pool.sort_unstable();
        pool.dedup();
        if pool.len() != self.active_class_pool.len() {
            return bad("duplicate classes in pool".into());
        }
        if !(self.events_per_second_mean > 0.0 && self.events_per_second_mean < 20.0) {
            return bad(format!("events_per_second_mean {} outside (0, 20)", self.events_per_second_mean));
        }
        if !(0.0..1.0).contains(&self.base_noise_level) {
            return bad(format!("base_noise_level {} outside [0, 1)", self.base_noise_level));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    pub segments_per_scene: usize,
    pub users: usize,
    pub seed: u64,
    pub edge: f64,
    /// Silence between consecutive segments of a user, in seconds.
    pub gap_seconds: i64,
    /// Probability of dropping each GPS fix.
    pub gps_dropout: f64,
    pub start: DateTime<Utc>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            segments_per_scene: 60,
            users: 1,
            seed: 0,
            edge: DEFAULT_EDGE,
            gap_seconds: 240,
            gps_dropout: 0.0,
            start: Utc.with_ymd_and_hms(2021, 3, 1, 8, 0, 0).unwrap(),
        }
    }
}

/// Three scenes with disjoint 8-class pools drawn from different top-level
/// categories, in neighbouring cells near `(43.263, -2.935)`.
pub fn default_profiles(edge: f64) -> Vec<SceneProfile> {
    let base = hex_index(43.263, -2.935, edge).expect("valid coordinates");
    ["home", "street", "office"]
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let group = k * 22;
            SceneProfile {
                name: name.to_string(),
                active_class_pool: (group * GROUP_SIZE..(group + 1) * GROUP_SIZE).collect(),
                events_per_second_mean: 5.0,
                base_noise_level: 0.3,
                cell: HexCoord::new(base.q + 3 * k as i64, base.r + k as i64),
            }
        })
        .collect()
}

pub fn load_profiles(path: &Path) -> Result<Vec<SceneProfile>> {
    serde_json::from_reader(io::open(path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn synthetic_vocabulary() -> EventVocabulary {
    let entries = (0..N_CLASSES)
        .map(|i| VocabEntry {
            index: i,
            class_id: format!("/t/syn{i:04}"),
            display_name: format!("Synthetic class {i}"),
        })
        .collect();
    EventVocabulary::new(entries).expect("synthetic vocabulary is valid")
}

/// Categories own groups round-robin by block; groups own up to 8 leaves.
pub fn synthetic_ontology(vocab: &EventVocabulary) -> Vec<OntologyRecord> {
    let group_id = |g: usize| format!("/t/syngroup{g:02}");
    let mut records: Vec<OntologyRecord> = (0..CATEGORIES)
        .map(|c| OntologyRecord {
            id: format!("/t/syncategory{c}"),
            name: format!("Category {c}"),
            child_ids: (0..GROUPS).filter(|g| g * CATEGORIES / GROUPS == c).map(group_id).collect(),
        })
        .collect();
    records.extend((0..GROUPS).map(|g| OntologyRecord {
        id: group_id(g),
        name: format!("Group {g}"),
        child_ids: vocab.entries()[g * GROUP_SIZE..((g + 1) * GROUP_SIZE).min(N_CLASSES)]
            .iter()
            .map(|e| e.class_id.clone())
            .collect(),
    }));
    records.extend(vocab.entries().iter().map(|e| OntologyRecord {
        id: e.class_id.clone(),
        name: e.display_name.clone(),
        child_ids: Vec::new(),
    }));
    records
}

#[derive(Debug, Clone)]
pub struct SyntheticSegment {
    pub record: SegmentRecord,
    pub scene: usize,
    pub matrix: EventProbMatrix,
    /// Entries drawn from the planted high-probability distribution.
    pub planted: Array2<bool>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub profiles: Vec<SceneProfile>,
    pub segments: Vec<SyntheticSegment>,
    pub fixes: Vec<GpsFix>,
    pub vocabulary: EventVocabulary,
    pub ontology: Vec<OntologyRecord>,
    pub options: SynthOptions,
}

fn quantize(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn segment_matrix(profile: &SceneProfile, rng: &mut ChaCha8Rng) -> (Array2<f64>, Array2<bool>) {
    let poisson = Poisson::new(profile.events_per_second_mean).expect("validated mean");
    let pool = &profile.active_class_pool;
    let mut values = Array2::zeros((SEGMENT_SECONDS, N_CLASSES));
    let mut planted = Array2::from_elem((SEGMENT_SECONDS, N_CLASSES), false);
    for s in 0..SEGMENT_SECONDS {
        for c in 0..N_CLASSES {
            values[[s, c]] = quantize(rng.random::<f64>() * profile.base_noise_level);
        }
        let k = (poisson.sample(rng) as usize).min(pool.len());
        for i in sample(rng, pool.len(), k) {
            values[[s, pool[i]]] = quantize(rng.random_range(0.9..=1.0));
            planted[[s, pool[i]]] = true;
        }
    }
    (values, planted)
}

/// Segments of each user interleave the scenes in time (scene `k` of round
/// `i` is segment `i·K + k`); one GPS fix sits at each segment midpoint with
/// at most `edge/20` jitter per axis.
pub fn generate_corpus(profiles: &[SceneProfile], opts: &SynthOptions) -> Result<SyntheticCorpus> {
    if profiles.len() < 2 {
        return Err(Error::Input(format!("need at least 2 scene profiles, got {}", profiles.len())));
    }
    if opts.segments_per_scene < 10 {
        return Err(Error::Input(format!(
            "segments_per_scene must be at least 10, got {}",
            opts.segments_per_scene
        )));
    }
    if opts.users == 0 || !(opts.edge > 0.0) || !(0.0..1.0).contains(&opts.gps_dropout) || opts.gap_seconds < 0 {
        return Err(Error::Input("invalid synthesis options".into()));
    }
    profiles.iter().try_for_each(SceneProfile::validate)?;

    let k = profiles.len();
    let per_user = k * opts.segments_per_scene;
    let stride = Duration::seconds(SEGMENT_SECONDS as i64 + opts.gap_seconds);
    let mut segments = Vec::with_capacity(per_user * opts.users);
    let mut fixes = Vec::new();
    let mut dropout = ChaCha8Rng::seed_from_u64(opts.seed);
    dropout.set_stream(DROPOUT_STREAM);

    for u in 0..opts.users {
        let user_id = format!("user{u:02}");
        for idx in 0..per_user {
            let global = (u * per_user + idx) as u64;
            let scene = idx % k;
            let profile = &profiles[scene];
            let segment_id = format!("{user_id}_seg{idx:04}");
            let start = opts.start + stride * idx as i32;

            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(global);
            let (values, planted) = segment_matrix(profile, &mut rng);

            let mut fix_rng = ChaCha8Rng::seed_from_u64(opts.seed);
            fix_rng.set_stream(FIX_STREAM + global);
            let (lat, lon) = hex_centroid(profile.cell, opts.edge);
            let j = opts.edge / 20.0;
            let fix = GpsFix {
                user_id: user_id.clone(),
                timestamp: start + Duration::seconds(SEGMENT_SECONDS as i64 / 2),
                lat: lat + fix_rng.random_range(-j..j),
                lon: lon + fix_rng.random_range(-j..j),
                situational_label: Some(profile.name.clone()),
            };
            if !(opts.gps_dropout > 0.0 && dropout.random::<f64>() < opts.gps_dropout) {
                fixes.push(fix);
            }

            segments.push(SyntheticSegment {
                record: SegmentRecord {
                    segment_id: segment_id.clone(),
                    user_id: user_id.clone(),
                    start,
                    matrix_path: PathBuf::from("matrices").join(format!("{segment_id}.csv")),
                },
                scene,
                matrix: EventProbMatrix::new(segment_id, values)?,
                planted,
            });
        }
    }
    let vocabulary = synthetic_vocabulary();
    let ontology = synthetic_ontology(&vocabulary);
    Ok(SyntheticCorpus {
        profiles: profiles.to_vec(),
        segments,
        fixes,
        vocabulary,
        ontology,
        options: opts.clone(),
    })
}

impl SyntheticCorpus {
    /// Writes every input of a pipeline run plus `ground_truth.csv` and a
    /// ready-to-run `pipeline.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for s in &self.segments {
            s.matrix.write_csv(&dir.join(&s.record.matrix_path))?;
        }
        let records: Vec<&SegmentRecord> = self.segments.iter().map(|s| &s.record).collect();
        io::write_jsonl(&dir.join("manifest.jsonl"), &records)?;
        io::write_jsonl(&dir.join("fixes.jsonl"), &self.fixes)?;
        self.vocabulary.write_csv(&dir.join("vocab.csv"))?;
        {
            use std::io::Write;
            let path = dir.join("ontology.json");
            let mut w = io::create(&path)?;
            serde_json::to_writer_pretty(&mut w, &self.ontology)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        {
            let path = dir.join("profiles.json");
            let mut w = io::create(&path)?;
            serde_json::to_writer_pretty(&mut w, &self.profiles)?;
            std::io::Write::flush(&mut w).map_err(|e| Error::io(&path, e))?;
        }
        let mut w = io::csv_writer(&dir.join("ground_truth.csv"))?;
        w.write_record(["segment_id", "user_id", "scene", "q", "r"])?;
        for s in &self.segments {
            let cell = self.profiles[s.scene].cell;
            w.write_record([
                s.record.segment_id.clone(),
                s.record.user_id.clone(),
                self.profiles[s.scene].name.clone(),
                cell.q.to_string(),
                cell.r.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(dir.join("ground_truth.csv"), e))?;

        let mut cfg = PipelineConfig {
            paths: PathsConfig {
                manifest: Some("manifest.jsonl".into()),
                fixes: Some("fixes.jsonl".into()),
                ontology: Some("ontology.json".into()),
                vocab: Some("vocab.csv".into()),
                output_dir: "out".into(),
            },
            seed: self.options.seed,
            ..Default::default()
        };
        cfg.grid.edge = self.options.edge;
        let path = dir.join("pipeline.json");
        cfg.save(&path)?;
        Ok(path)
    }
}
