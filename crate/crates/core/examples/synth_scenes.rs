//! Render a handful of synthetic scenes in KITTI layout.
//!
//! cargo run --example synth_scenes -- /tmp/synth 12

use std::path::PathBuf;

use subcat::synth::{write_split, SynthSpec};

fn main() -> subcat::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synth_out".into()));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(12);
    let spec = SynthSpec {
        n_images: n,
        seed: 7,
        ..SynthSpec::default()
    };
    write_split(&spec, &out)?;
    println!("wrote {n} scenes to {}", out.display());
    Ok(())
}
