//! Generate a small synthetic dataset and run every stage on it: cluster,
//! train, detect, orient and evaluate. Takes well under a minute in release.
//!
//! cargo run --release --example end_to_end -- [out_dir]

use subcat::pipeline::{run_all, run_synth, summary_line, RunConfig};

fn main() -> subcat::error::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let root = std::env::args().nth(1).unwrap_or_else(|| "end_to_end_out".into());
    let sets = [
        format!("train_dir={root}/data/train"),
        format!("test_dir={root}/data/test"),
        format!("out_dir={root}/out"),
        "synth_train.n_images=80".into(),
        "synth_test.n_images=30".into(),
        "resolutions=1".into(),
        "cluster.b=4".into(),
        "train.tree_schedule=[32,128]".into(),
        "train.mining_rounds=1".into(),
        "orientation.bins=8".into(),
    ];
    let cfg = RunConfig::default().with_overrides(&sets)?;
    run_synth(&cfg)?;
    let summary = run_all(&cfg)?;
    println!("{}", summary_line(&summary));
    println!("outputs under {}", cfg.out_dir.display());
    Ok(())
}
