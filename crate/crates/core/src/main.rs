use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use scene_latent::config::PipelineConfig;
use scene_latent::embed::{read_embeddings_csv, read_vectors_csv, write_embeddings_csv, write_vectors_csv};
use scene_latent::events::{load_manifest, EventVocabulary};
use scene_latent::geogrid::{load_fixes, read_labels_csv, write_labels_csv};
use scene_latent::ontology::{load_ontology, read_class_matrix_csv, write_embeddings_csv as write_node_csv};
use scene_latent::pipeline::{
    analyze_space, encode_all, group_by_user, run_pipeline, stage_binarize, stage_embed, stage_grid,
    stage_node2vec, stage_tfidf, stage_train, write_history_csv, Space, UserInputs,
};
use scene_latent::synth::{default_profiles, generate_corpus, load_profiles, SynthOptions};
use scene_latent::tfidf;
use scene_latent::vae::VaeModel;
use scene_latent::{Error, Result};

/// Latent acoustic-scene representations from event probabilities and GPS fixes.
#[derive(Parser)]
#[command(name = "scene-latent", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline configuration (JSON). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Users processed concurrently by `run`.
    #[arg(long, global = true)]
    parallel_users: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Rank each user's hex cells by dwell time; with a manifest, label segments.
    Grid {
        #[arg(long)]
        fixes: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        edge: Option<f64>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        max_gap: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Threshold each user's probability matrices at a pooled percentile.
    Binarize {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        percentile: Option<f64>,
    },
    /// TF-IDF vectors per user (binarizes the manifest's matrices first).
    Tfidf {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        percentile: Option<f64>,
    },
    /// Node2Vec embeddings of the ontology graph.
    Node2vec {
        #[arg(long)]
        ontology: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Masked 6×521 segment embeddings per user.
    Embed {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// `node_id,e0,...` file written by `node2vec`.
        #[arg(long)]
        node2vec: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        percentile: Option<f64>,
    },
    /// Train one user's VAE on an embeddings file.
    Train {
        #[arg(long)]
        user: String,
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Posterior means for every segment of an embeddings file.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Destination CSV; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Label-pair cosine distances (and optionally t-SNE) in one space.
    Analyze {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Needed for the latent space.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SpaceArg::Latent)]
        space: SpaceArg,
        #[arg(long)]
        tsne: bool,
    },
    /// Write a synthetic corpus with ground truth and a ready-to-run configuration.
    Synth {
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        segments: usize,
        #[arg(long, default_value_t = 1)]
        users: usize,
        #[arg(long, default_value_t = 0.0)]
        gps_dropout: f64,
    },
    /// Full pipeline: grid → binarize → tfidf → node2vec → embed → train → analyze.
    Run,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    Raw,
    Latent,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            let mut c = PipelineConfig::default();
            c.set_base_dir(&std::env::current_dir().map_err(|e| Error::Input(e.to_string()))?);
            c
        }
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.paths.output_dir = absolute(o)?;
    }
    if let Some(n) = g.parallel_users {
        cfg.parallel_users = n;
    }
    Ok(cfg)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        return Ok(p.to_path_buf());
    }
    let cwd = std::env::current_dir().map_err(|e| Error::Input(e.to_string()))?;
    Ok(cwd.join(p))
}

/// Flag value if given (relative to the working directory), else the
/// configuration's path for `key`.
fn input(cfg: &PipelineConfig, flag: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let p = match flag {
        Some(p) => absolute(p)?,
        None => cfg.input(key)?,
    };
    if !p.exists() {
        return Err(Error::Validation(format!("{key} `{}` does not exist", p.display())));
    }
    Ok(p)
}

fn users_from(cfg: &PipelineConfig, manifest: &Option<PathBuf>, fixes: Option<&Path>) -> Result<Vec<UserInputs>> {
    let segments = load_manifest(&input(cfg, manifest, "manifest")?)?;
    let fixes = match fixes {
        Some(f) => load_fixes(f)?,
        None => Vec::new(),
    };
    Ok(group_by_user(segments, fixes))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    let out = cfg.output_dir();
    match cli.command {
        Command::Grid {
            fixes,
            manifest,
            edge,
            top_k,
            max_gap,
            tolerance,
        } => {
            let g = &mut cfg.grid;
            g.edge = edge.unwrap_or(g.edge);
            g.top_k = top_k.unwrap_or(g.top_k);
            g.max_gap = max_gap.unwrap_or(g.max_gap);
            g.tolerance = tolerance.unwrap_or(g.tolerance);
            let fixes_path = input(&cfg, &fixes, "fixes")?;
            let all_fixes = load_fixes(&fixes_path)?;
            let mut by_user: BTreeMap<String, Vec<_>> = BTreeMap::new();
            for f in all_fixes {
                by_user.entry(f.user_id.clone()).or_default().push(f);
            }
            let segments = match manifest.as_ref().or(cfg.paths.manifest.as_ref()) {
                Some(_) => Some(users_from(&cfg, &manifest, None)?),
                None => None,
            };
            for (user, fixes) in &by_user {
                let segs = segments
                    .as_ref()
                    .and_then(|s| s.iter().find(|u| &u.user_id == user))
                    .map(|u| u.segments.clone())
                    .unwrap_or_default();
                let (ranking, labels) = stage_grid(fixes, &segs, &cfg.grid)?;
                ranking.write_csv(&out.join(user).join("cells.csv"), cfg.grid.edge)?;
                if segments.is_some() {
                    write_labels_csv(&out.join(user).join("labels.csv"), &labels)?;
                }
                eprintln!("{user}: {} ranked cells", ranking.len());
            }
        }
        Command::Binarize { manifest, percentile } => {
            let p = percentile.unwrap_or(cfg.events.percentile);
            for u in users_from(&cfg, &manifest, None)? {
                let (threshold, binary) = stage_binarize(&u.segments, p)?;
                for b in &binary {
                    b.write_csv(&out.join(&u.user_id).join("binary").join(format!("{}.csv", b.segment_id)))?;
                }
                let active: usize = binary.iter().map(|b| b.count_active()).sum();
                print_json(&serde_json::json!({
                    "user_id": u.user_id,
                    "percentile": p,
                    "threshold": threshold,
                    "active_fraction": active as f64 / (binary.len() * 60 * 521) as f64,
                }));
            }
        }
        Command::Tfidf { manifest, percentile } => {
            let p = percentile.unwrap_or(cfg.events.percentile);
            for u in users_from(&cfg, &manifest, None)? {
                let (_, binary) = stage_binarize(&u.segments, p)?;
                let v = stage_tfidf(&binary)?;
                tfidf::write_csv(&out.join(&u.user_id).join("tfidf.csv"), &v)?;
            }
        }
        Command::Node2vec { ontology, vocab } => {
            let graph = load_ontology(&input(&cfg, &ontology, "ontology")?)?;
            let vocab = EventVocabulary::load(&input(&cfg, &vocab, "vocab")?)?;
            let (emb, _) = stage_node2vec(&graph, &vocab, &cfg.node2vec, cfg.seed)?;
            let path = out.join("node2vec").join("embeddings.csv");
            write_node_csv(&path, &emb)?;
            eprintln!(
                "{} nodes, {} edges → {}",
                graph.node_count(),
                graph.edge_count(),
                path.display()
            );
        }
        Command::Embed {
            manifest,
            node2vec,
            vocab,
            percentile,
        } => {
            let vocab = EventVocabulary::load(&input(&cfg, &vocab, "vocab")?)?;
            let classes = read_class_matrix_csv(&absolute(&node2vec)?, &vocab)?;
            let p = percentile.unwrap_or(cfg.events.percentile);
            for u in users_from(&cfg, &manifest, None)? {
                let (_, binary) = stage_binarize(&u.segments, p)?;
                let t = stage_tfidf(&binary)?;
                let e = stage_embed(&t, &classes, &binary)?;
                write_embeddings_csv(&out.join(&u.user_id).join("embeddings.csv"), &e)?;
            }
        }
        Command::Train { user, embeddings } => {
            let emb = read_embeddings_csv(&absolute(&embeddings)?)?;
            let mut o = stage_train(&emb, &cfg.vae_config())?;
            o.model.config_hash = Some(cfg.hash());
            let dir = out.join(&user);
            o.model.save(&dir.join("model.json"))?;
            write_history_csv(&dir.join("training.csv"), &o.history)?;
            print_json(&serde_json::json!({
                "user_id": user,
                "epochs_trained": o.model.epochs_trained,
                "best_epoch": o.best_epoch,
                "stopped_early": o.stopped_early,
            }));
        }
        Command::Encode {
            model,
            embeddings,
            output,
        } => {
            let model = VaeModel::load(&absolute(&model)?)?;
            let rows = read_vectors_csv(&absolute(&embeddings)?)?;
            let latent = encode_all(&model, &rows)?;
            match output {
                Some(p) => write_vectors_csv(&absolute(&p)?, "z", &latent)?,
                None => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    let header =
                        std::iter::once("segment_id".to_string()).chain((0..model.latent_dim()).map(|i| format!("z{i}")));
                    w.write_record(header)?;
                    for (id, z) in &latent {
                        w.write_record(std::iter::once(id.clone()).chain(z.iter().map(|v| v.to_string())))?;
                    }
                    w.flush().map_err(|e| Error::Input(e.to_string()))?;
                }
            }
        }
        Command::Analyze {
            embeddings,
            labels,
            model,
            space,
            tsne,
        } => {
            let rows = read_vectors_csv(&absolute(&embeddings)?)?;
            let labels = read_labels_csv(&absolute(&labels)?)?;
            let (space, vectors) = match space {
                SpaceArg::Raw => (Space::Raw, rows),
                SpaceArg::Latent => {
                    let m = model
                        .ok_or_else(|| Error::Validation("--model is required for the latent space".into()))?;
                    (Space::Latent, encode_all(&VaeModel::load(&absolute(&m)?)?, &rows)?)
                }
            };
            let tcfg = cfg.tsne_config();
            let (summary, _) = analyze_space(&out, space, &vectors, &labels, tsne.then_some(&tcfg))?;
            print_json(&serde_json::to_value(&summary)?);
        }
        Command::Synth {
            profiles,
            segments,
            users,
            gps_dropout,
        } => {
            let opts = SynthOptions {
                segments_per_scene: segments,
                users,
                seed: cfg.seed,
                edge: cfg.grid.edge,
                gps_dropout,
                ..Default::default()
            };
            let profiles = match profiles {
                Some(p) => load_profiles(&absolute(&p)?)?,
                None => default_profiles(opts.edge),
            };
            let corpus = generate_corpus(&profiles, &opts)?;
            let config = corpus.write(&out)?;
            eprintln!("{} segments → {}", corpus.segments.len(), config.display());
        }
        Command::Run => {
            let m = run_pipeline(&cfg)?;
            for u in &m.users {
                let ratio = |s| match u.space(s).and_then(|x| x.contrast_ratio) {
                    Some(r) => format!("{r:.3}"),
                    None => "n/a".to_string(),
                };
                eprintln!(
                    "{}: {} segments, best epoch {}, contrast raw {} latent {}",
                    u.user_id,
                    u.segments,
                    u.best_epoch,
                    ratio(Space::Raw),
                    ratio(Space::Latent)
                );
            }
            eprintln!("manifest → {}", cfg.output_dir().join("run_manifest.json").display());
        }
    }
    Ok(())
}
