//! Score a KITTI result directory against a label directory at the three
//! standard difficulties.
//!
//! cargo run --release --example evaluate -- data/test/label_2 out/results/data
//!
//! Without arguments it scores jittered copies of synthetic labels.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subcat::evaluation::{evaluate_dirs, EvalSettings, Interpolation};
use subcat::pipeline::summary_line;
use subcat::synth::{write_split, SynthSpec};

fn main() -> subcat::error::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (gt, det) = if args.len() == 2 {
        (PathBuf::from(&args[0]), PathBuf::from(&args[1]))
    } else {
        let root = std::env::temp_dir().join("subcat_evaluate_demo");
        let spec = SynthSpec { n_images: 20, seed: 5, ..SynthSpec::default() };
        write_split(&spec, &root)?;
        let det = root.join("dets");
        std::fs::create_dir_all(&det).map_err(|e| subcat::error::Error::io(&det, e))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..spec.n_images {
            let text = std::fs::read_to_string(root.join(format!("label_2/{i:06}.txt"))).map_err(|e| subcat::error::Error::io(&root, e))?;
            let mut out = String::new();
            for line in text.lines() {
                let mut f: Vec<String> = line.split_whitespace().map(String::from).collect();
                for v in &mut f[4..8] {
                    *v = format!("{:.2}", v.parse::<f64>().unwrap() + rng.gen_range(-6.0..6.0));
                }
                f.push(format!("{:.3}", rng.gen_range(0.0..1.0)));
                out.push_str(&f.join(" "));
                out.push('\n');
            }
            std::fs::write(det.join(format!("{i:06}.txt")), out).map_err(|e| subcat::error::Error::io(&det, e))?;
        }
        (root.join("label_2"), det)
    };
    let s = evaluate_dirs(&gt, &det, "Car", &EvalSettings::standard(), Interpolation::Points41)?;
    println!("{}", summary_line(&s));
    for r in &s.results {
        println!("{:>9}: {} objects, {} detections, miss rate at 0.1 FPPI {:.3}", r.settings.name, r.n_gt, r.n_detections, r.miss_rate_at_0_1_fppi);
    }
    Ok(())
}
