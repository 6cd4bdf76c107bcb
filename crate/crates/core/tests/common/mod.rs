use std::path::{Path, PathBuf};

use scene_latent::config::PipelineConfig;
use scene_latent::synth::{default_profiles, generate_corpus, SynthOptions};

/// Writes a small synthetic corpus and a configuration trimmed so a full run
/// takes a few seconds. Returns the configuration path.
pub fn small_corpus(dir: &Path, users: usize, seed: u64) -> PathBuf {
    let opts = SynthOptions {
        segments_per_scene: 10,
        users,
        seed,
        ..Default::default()
    };
    let corpus = generate_corpus(&default_profiles(opts.edge), &opts).unwrap();
    let path = corpus.write(dir).unwrap();
    let mut cfg = PipelineConfig::load(&path).unwrap();
    cfg.node2vec.walks_per_node = 2;
    cfg.node2vec.epochs = 1;
    cfg.vae.max_epochs = 3;
    cfg.tsne.iterations = 300;
    cfg.save(&path).unwrap();
    path
}
