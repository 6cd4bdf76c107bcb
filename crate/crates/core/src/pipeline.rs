//! Stage functions and the end-to-end per-user run:
//! grid → binarize → tfidf → node2vec → embed → train → analyze.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use chrono::{DateTime, Utc};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    label_distance_matrix, latent_viz_transform, tsne, within_between, write_tsne_csv, TsneConfig, TsneResult,
    TsneRow,
};
use crate::config::{GridConfig, Node2VecConfig, PipelineConfig};
use crate::embed::{build_segment_embedding, write_vectors_csv, SegmentEmbedding};
use crate::error::{Error, Result};
use crate::events::{
    binarize, compute_threshold, load_manifest, load_prob_matrix, BinaryEventMatrix, EventVocabulary, SegmentRecord,
    SEGMENT_SECONDS,
};
use crate::geogrid::{assign_pseudo_labels, load_fixes, rank_cells, write_labels_csv, CellRanking, GpsFix, PseudoLabeledSegment};
use crate::io;
use crate::ontology::{class_matrix, generate_walks, load_ontology, train_skipgram, write_embeddings_csv, NodeEmbeddings, OntologyGraph};
use crate::tfidf::{self, document_frequency, tfidf_vector, TfidfVector};
use crate::vae::{fit_and_train, EpochRecord, TrainOutcome, VaeConfig, VaeModel};

pub const MANIFEST_FORMAT: &str = "scene-latent-run/1";

/// One user's segments (sorted by start) and GPS fixes.
#[derive(Debug, Clone)]
pub struct UserInputs {
    pub user_id: String,
    pub segments: Vec<SegmentRecord>,
    pub fixes: Vec<GpsFix>,
}

/// Splits segments and fixes by user, in sorted user order.
pub fn group_by_user(segments: Vec<SegmentRecord>, fixes: Vec<GpsFix>) -> Vec<UserInputs> {
    let mut users: BTreeMap<String, UserInputs> = BTreeMap::new();
    let entry = |users: &mut BTreeMap<String, UserInputs>, id: &str| {
        users.entry(id.to_string()).or_insert_with(|| UserInputs {
            user_id: id.to_string(),
            segments: Vec::new(),
            fixes: Vec::new(),
        });
    };
    for s in segments {
        entry(&mut users, &s.user_id);
        users.get_mut(&s.user_id).unwrap().segments.push(s);
    }
    for f in fixes {
        if let Some(u) = users.get_mut(&f.user_id) {
            u.fixes.push(f);
        }
    }
    for u in users.values_mut() {
        u.segments.sort_by(|a, b| a.start.cmp(&b.start).then_with(|| a.segment_id.cmp(&b.segment_id)));
    }
    users.into_values().collect()
}

pub fn stage_grid(fixes: &[GpsFix], segments: &[SegmentRecord], grid: &GridConfig) -> Result<(CellRanking, Vec<PseudoLabeledSegment>)> {
    let ranking = rank_cells(fixes, grid.edge, grid.top_k, grid.max_gap)?;
    let labels = assign_pseudo_labels(segments, fixes, &ranking, grid.edge, grid.tolerance)?;
    Ok((ranking, labels))
}

/// Loads a user's matrices, pools them for the threshold and binarizes.
pub fn stage_binarize(segments: &[SegmentRecord], percentile: f64) -> Result<(f64, Vec<BinaryEventMatrix>)> {
    let matrices = segments
        .iter()
        .map(|s| {
            let m = load_prob_matrix(&s.matrix_path)?;
            if m.segment_id != s.segment_id {
                return Err(Error::Input(format!(
                    "matrix file {} does not match segment `{}`",
                    s.matrix_path.display(),
                    s.segment_id
                )));
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let threshold = compute_threshold(&matrices, percentile)?;
    let binary = matrices.iter().map(|m| binarize(m, threshold)).collect();
    Ok((threshold, binary))
}

pub fn stage_tfidf(binary: &[BinaryEventMatrix]) -> Result<Vec<TfidfVector>> {
    let stats = document_frequency(binary)?;
    Ok(binary.iter().map(|b| tfidf_vector(b, &stats)).collect())
}

/// Walks, skip-gram training and the class matrix (`5 × 521`).
pub fn stage_node2vec(
    graph: &OntologyGraph,
    vocab: &EventVocabulary,
    cfg: &Node2VecConfig,
    seed: u64,
) -> Result<(NodeEmbeddings, Array2<f64>)> {
    let corpus = generate_walks(graph, &cfg.walk_params(), seed)?;
    let report = train_skipgram(&corpus, &cfg.skipgram_params(), seed)?;
    let classes = class_matrix(&report.embeddings, graph, vocab)?;
    Ok((report.embeddings, classes))
}

pub fn stage_embed(
    tfidf: &[TfidfVector],
    classes: &Array2<f64>,
    binary: &[BinaryEventMatrix],
) -> Result<Vec<SegmentEmbedding>> {
    tfidf
        .iter()
        .zip(binary)
        .map(|(t, b)| build_segment_embedding(t, classes, b))
        .collect()
}

pub fn stage_train(embeddings: &[SegmentEmbedding], cfg: &VaeConfig) -> Result<TrainOutcome> {
    let raw: Vec<Vec<f64>> = embeddings.iter().map(|e| e.flat()).collect();
    fit_and_train(&raw, cfg)
}

/// `epoch,lr,train_reconstruction,train_kl,train_total,test_reconstruction,test_kl,test_total`.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = io::csv_writer(path)?;
    w.write_record([
        "epoch",
        "lr",
        "train_reconstruction",
        "train_kl",
        "train_total",
        "test_reconstruction",
        "test_kl",
        "test_total",
    ])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            io::fmt_f64(r.lr),
            io::fmt_f64(r.train.reconstruction),
            io::fmt_f64(r.train.kl),
            io::fmt_f64(r.train.total),
            io::fmt_f64(r.test.reconstruction),
            io::fmt_f64(r.test.kl),
            io::fmt_f64(r.test.total),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Posterior means for each `(segment_id, raw embedding)` row.
pub fn encode_all(model: &VaeModel, rows: &[(String, Vec<f64>)]) -> Result<Vec<(String, Vec<f64>)>> {
    rows.iter()
        .map(|(id, v)| Ok((id.clone(), model.encode_raw(v)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Raw,
    Latent,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Raw => "raw",
            Space::Latent => "latent",
        }
    }
}

/// Distance summaries of one representation space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceSummary {
    pub space: Space,
    pub contrast_ratio: Option<f64>,
    pub mean_within: Option<f64>,
    pub mean_between: Option<f64>,
    /// Labelled segments left out because their vector has zero norm.
    pub excluded_zero_norm: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tsne: Option<TsneMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneMeta {
    pub seed: u64,
    pub perplexity_used: f64,
    pub learning_rate_used: f64,
    pub kl_trace: Vec<(usize, f64)>,
    pub note: String,
}

impl From<&TsneResult> for TsneMeta {
    fn from(r: &TsneResult) -> Self {
        TsneMeta {
            seed: r.seed,
            perplexity_used: r.perplexity_used,
            learning_rate_used: r.learning_rate_used,
            kl_trace: r.kl_trace.clone(),
            note: "random initialisation; projections from other seeds differ".into(),
        }
    }
}

/// Writes `distance_<space>.csv` and, when `tsne` is set, `tsne_<space>.csv`
/// plus `tsne_<space>.json` into `dir`. Latent vectors are passed through
/// tanh before projection. Returns the summary and the files written.
pub fn analyze_space(
    dir: &Path,
    space: Space,
    vectors: &[(String, Vec<f64>)],
    labels: &[PseudoLabeledSegment],
    tsne_cfg: Option<&TsneConfig>,
) -> Result<(SpaceSummary, Vec<PathBuf>)> {
    let norm_zero = |v: &[f64]| v.iter().all(|&x| x == 0.0);
    let by_id: BTreeMap<String, Vec<f64>> = vectors.iter().cloned().collect();
    let mut excluded = Vec::new();
    let mut ranks: BTreeMap<String, usize> = BTreeMap::new();
    for l in labels {
        let Some(rank) = l.cell_rank else { continue };
        match by_id.get(&l.segment_id) {
            Some(v) if norm_zero(v) => excluded.push(l.segment_id.clone()),
            _ => {
                ranks.insert(l.segment_id.clone(), rank);
            }
        }
    }
    let matrix = label_distance_matrix(&by_id, &ranks)?;
    let pairs = within_between(&by_id, &ranks)?;
    let mut written = Vec::new();
    let path = dir.join(format!("distance_{}.csv", space.name()));
    matrix.write_csv(&path)?;
    written.push(path);

    let mut tsne_meta = None;
    if let Some(cfg) = tsne_cfg {
        let n = vectors.len();
        let d = vectors.first().map_or(0, |v| v.1.len());
        let mut points = Array2::zeros((n, d));
        for (mut row, (_, v)) in points.rows_mut().into_iter().zip(vectors) {
            let v = match space {
                Space::Latent => latent_viz_transform(v),
                Space::Raw => v.clone(),
            };
            row.iter_mut().zip(v).for_each(|(r, x)| *r = x);
        }
        let result = tsne(&points, cfg)?;
        let label_of: BTreeMap<&str, &PseudoLabeledSegment> =
            labels.iter().map(|l| (l.segment_id.as_str(), l)).collect();
        let rows: Vec<TsneRow> = vectors
            .iter()
            .zip(result.embedding.rows())
            .map(|((id, _), xy)| {
                let l = label_of.get(id.as_str());
                TsneRow {
                    segment_id: id.clone(),
                    x: xy[0],
                    y: xy[1],
                    pseudo_label: l.and_then(|l| l.cell_rank),
                    situational_label: l.and_then(|l| l.situational_label.clone()),
                }
            })
            .collect();
        let csv = dir.join(format!("tsne_{}.csv", space.name()));
        write_tsne_csv(&csv, &rows)?;
        let meta = TsneMeta::from(&result);
        let json = dir.join(format!("tsne_{}.json", space.name()));
        write_json(&json, &meta)?;
        written.push(csv);
        written.push(json);
        tsne_meta = Some(meta);
    }
    Ok((
        SpaceSummary {
            space,
            contrast_ratio: matrix.contrast_ratio(),
            mean_within: pairs.within,
            mean_between: pairs.between,
            excluded_zero_norm: excluded,
            tsne: tsne_meta,
        },
        written,
    ))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    use std::io::Write;
    let mut w = io::create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    /// Completed, but the run it belongs to did not finish.
    Stale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
    pub seconds: f64,
    pub status: StageStatus,
    /// Paths relative to the output directory.
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSummary {
    pub user_id: String,
    pub segments: usize,
    pub labeled_segments: usize,
    pub threshold: f64,
    /// Active entries per second, averaged over the user's segments.
    pub events_per_second: f64,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    pub spaces: Vec<SpaceSummary>,
}

impl UserSummary {
    pub fn space(&self, s: Space) -> Option<&SpaceSummary> {
        self.spaces.iter().find(|x| x.space == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub started: DateTime<Utc>,
    pub complete: bool,
    pub vocabulary_hash: String,
    pub ontology_nodes: usize,
    pub ontology_edges: usize,
    pub stages: Vec<StageRecord>,
    pub users: Vec<UserSummary>,
    /// Every output path (relative) with the configuration hash that produced it.
    pub outputs: BTreeMap<PathBuf, String>,
    pub config: PipelineConfig,
}

/// Runs a named stage, timing it and tagging any error with the stage name.
struct Recorder<'a> {
    out: &'a Path,
    user: Option<String>,
    records: Vec<StageRecord>,
}

impl Recorder<'_> {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<(T, Vec<PathBuf>)>) -> Result<T> {
        let t0 = Instant::now();
        let result = f();
        let seconds = t0.elapsed().as_secs_f64();
        let rel = |p: PathBuf| p.strip_prefix(self.out).map(Path::to_path_buf).unwrap_or(p);
        match result {
            Ok((v, outputs)) => {
                self.records.push(StageRecord {
                    stage: stage.into(),
                    user_id: self.user.clone(),
                    seconds,
                    status: StageStatus::Ok,
                    outputs: outputs.into_iter().map(rel).collect(),
                    error: None,
                });
                Ok(v)
            }
            Err(e) => {
                self.records.push(StageRecord {
                    stage: stage.into(),
                    user_id: self.user.clone(),
                    seconds,
                    status: StageStatus::Failed,
                    outputs: Vec::new(),
                    error: Some(e.to_string()),
                });
                let name = match &self.user {
                    Some(u) => format!("{stage} ({u})"),
                    None => stage.to_string(),
                };
                Err(e.in_stage(&name))
            }
        }
    }
}

fn run_user(
    cfg: &PipelineConfig,
    out: &Path,
    user: &UserInputs,
    classes: &Array2<f64>,
    vocab_hash: &str,
    config_hash: &str,
) -> (Vec<StageRecord>, Result<UserSummary>) {
    let mut rec = Recorder {
        out,
        user: Some(user.user_id.clone()),
        records: Vec::new(),
    };
    let result = user_stages(cfg, out, user, classes, vocab_hash, config_hash, &mut rec);
    (rec.records, result)
}

fn user_stages(
    cfg: &PipelineConfig,
    out: &Path,
    user: &UserInputs,
    classes: &Array2<f64>,
    vocab_hash: &str,
    config_hash: &str,
    rec: &mut Recorder,
) -> Result<UserSummary> {
    let dir = out.join(&user.user_id);
    let segs = &user.segments;

    let labels = rec.run("grid", || {
        let (ranking, labels) = stage_grid(&user.fixes, segs, &cfg.grid)?;
        let cells = dir.join("cells.csv");
        let lab = dir.join("labels.csv");
        ranking.write_csv(&cells, cfg.grid.edge)?;
        write_labels_csv(&lab, &labels)?;
        Ok((labels, vec![cells, lab]))
    })?;

    let (threshold, binary) = rec.run("binarize", || {
        let (t, binary) = stage_binarize(segs, cfg.events.percentile)?;
        let path = dir.join("threshold.json");
        write_json(&path, &serde_json::json!({ "percentile": cfg.events.percentile, "threshold": t }))?;
        Ok(((t, binary), vec![path]))
    })?;

    let tfidf_vecs = rec.run("tfidf", || {
        let v = stage_tfidf(&binary)?;
        let path = dir.join("tfidf.csv");
        tfidf::write_csv(&path, &v)?;
        Ok((v, vec![path]))
    })?;

    let embeddings = rec.run("embed", || {
        let e = stage_embed(&tfidf_vecs, classes, &binary)?;
        let path = dir.join("embeddings.csv");
        crate::embed::write_embeddings_csv(&path, &e)?;
        Ok((e, vec![path]))
    })?;

    let outcome = rec.run("train", || {
        let mut o = stage_train(&embeddings, &cfg.vae_config())?;
        o.model.vocabulary_hash = Some(vocab_hash.to_string());
        o.model.config_hash = Some(config_hash.to_string());
        let model = dir.join("model.json");
        let hist = dir.join("training.csv");
        o.model.save(&model)?;
        write_history_csv(&hist, &o.history)?;
        Ok((o, vec![model, hist]))
    })?;

    let spaces = rec.run("analyze", || {
        let raw: Vec<(String, Vec<f64>)> = embeddings.iter().map(|e| (e.segment_id.clone(), e.flat())).collect();
        let latent = encode_all(&outcome.model, &raw)?;
        let latent_path = dir.join("latent.csv");
        write_vectors_csv(&latent_path, "z", &latent)?;
        let mut written = vec![latent_path];
        let tcfg = cfg.tsne_config();
        let (raw_summary, w) = analyze_space(&dir, Space::Raw, &raw, &labels, cfg.analysis.tsne_raw.then_some(&tcfg))?;
        written.extend(w);
        let (lat_summary, w) = analyze_space(&dir, Space::Latent, &latent, &labels, cfg.analysis.tsne.then_some(&tcfg))?;
        written.extend(w);
        Ok((vec![raw_summary, lat_summary], written))
    })?;

    let active: usize = binary.iter().map(|b| b.count_active()).sum();
    Ok(UserSummary {
        user_id: user.user_id.clone(),
        segments: segs.len(),
        labeled_segments: labels.iter().filter(|l| l.cell_rank.is_some()).count(),
        threshold,
        events_per_second: active as f64 / (segs.len() * SEGMENT_SECONDS) as f64,
        epochs_trained: outcome.model.epochs_trained,
        best_epoch: outcome.best_epoch,
        spaces,
    })
}

/// Validates the configuration, then executes every stage for every user.
/// The run manifest is written to `<output>/run_manifest.json` whether or
/// not the run succeeds; on failure completed stages are marked stale.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let out = cfg.output_dir();
    let config_hash = cfg.hash();
    let started = Utc::now();
    let mut top = Recorder {
        out: &out,
        user: None,
        records: Vec::new(),
    };

    let loaded = top.run("load", || {
        let vocab = EventVocabulary::load(&cfg.input("vocab")?)?;
        let graph = load_ontology(&cfg.input("ontology")?)?;
        let segments = load_manifest(&cfg.input("manifest")?)?;
        let fixes = load_fixes(&cfg.input("fixes")?)?;
        Ok(((vocab, graph, group_by_user(segments, fixes)), Vec::new()))
    });
    let (vocab, graph, users) = match loaded {
        Ok(v) => v,
        Err(e) => return Err(finish(cfg, &out, &config_hash, started, top.records, Vec::new(), None, Some(e))),
    };
    let vocab_hash = vocab.hash();
    let counts = Some((vocab_hash.clone(), graph.node_count(), graph.edge_count()));

    let classes = top.run("node2vec", || {
        let (emb, classes) = stage_node2vec(&graph, &vocab, &cfg.node2vec, cfg.seed)?;
        let path = out.join("node2vec").join("embeddings.csv");
        write_embeddings_csv(&path, &emb)?;
        Ok((classes, vec![path]))
    });
    let classes = match classes {
        Ok(c) => c,
        Err(e) => return Err(finish(cfg, &out, &config_hash, started, top.records, Vec::new(), counts, Some(e))),
    };

    let results = run_users(cfg, &out, &users, &classes, &vocab_hash, &config_hash);
    let mut records = top.records;
    let mut summaries = Vec::new();
    let mut first_error = None;
    for (r, res) in results {
        records.extend(r);
        match res {
            Ok(s) => summaries.push(s),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        Some(e) => Err(finish(cfg, &out, &config_hash, started, records, summaries, counts, Some(e))),
        None => {
            let m = build_manifest(cfg, &config_hash, started, records, summaries, counts, true);
            write_json(&out.join("run_manifest.json"), &m)?;
            Ok(m)
        }
    }
}

type UserResult = (Vec<StageRecord>, Result<UserSummary>);

fn run_users(
    cfg: &PipelineConfig,
    out: &Path,
    users: &[UserInputs],
    classes: &Array2<f64>,
    vocab_hash: &str,
    config_hash: &str,
) -> Vec<UserResult> {
    let workers = cfg.parallel_users.max(1).min(users.len().max(1));
    if workers == 1 {
        return users
            .iter()
            .map(|u| run_user(cfg, out, u, classes, vocab_hash, config_hash))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<UserResult>>> = Mutex::new((0..users.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= users.len() {
                    break;
                }
                let r = run_user(cfg, out, &users[i], classes, vocab_hash, config_hash);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every user processed"))
        .collect()
}

fn build_manifest(
    cfg: &PipelineConfig,
    config_hash: &str,
    started: DateTime<Utc>,
    records: Vec<StageRecord>,
    users: Vec<UserSummary>,
    counts: Option<(String, usize, usize)>,
    complete: bool,
) -> RunManifest {
    let (vocabulary_hash, ontology_nodes, ontology_edges) = counts.unwrap_or_default();
    let outputs = records
        .iter()
        .flat_map(|r| r.outputs.iter().cloned())
        .map(|p| (p, config_hash.to_string()))
        .collect();
    RunManifest {
        format: MANIFEST_FORMAT.into(),
        config_hash: config_hash.into(),
        seed: cfg.seed,
        started,
        complete,
        vocabulary_hash,
        ontology_nodes,
        ontology_edges,
        stages: records,
        users,
        outputs,
        config: cfg.clone(),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    cfg: &PipelineConfig,
    out: &Path,
    config_hash: &str,
    started: DateTime<Utc>,
    mut records: Vec<StageRecord>,
    users: Vec<UserSummary>,
    counts: Option<(String, usize, usize)>,
    error: Option<Error>,
) -> Error {
    for r in &mut records {
        if r.status == StageStatus::Ok {
            r.status = StageStatus::Stale;
        }
    }
    let m = build_manifest(cfg, config_hash, started, records, users, counts, false);
    let err = error.unwrap_or_else(|| Error::Validation("run failed".into()));
    match write_json(&out.join("run_manifest.json"), &m) {
        Ok(()) => err,
        Err(write_err) => Error::Stage {
            stage: "manifest".into(),
            source: Box::new(Error::Input(format!("{err}; additionally failed to write manifest: {write_err}"))),
        },
    }
}

/// Reads `labels.csv` and `embeddings.csv`-style inputs for the analyze
/// subcommand.
pub fn labels_by_segment(labels: &[PseudoLabeledSegment]) -> BTreeMap<String, PseudoLabeledSegment> {
    labels.iter().map(|l| (l.segment_id.clone(), l.clone())).collect()
}
