//! Run a trained model bundle over one image and print the kept boxes.
//!
//! cargo run --release --example detect_image -- out/models image.png

use subcat::boosting::ModelBundle;
use subcat::detector::detect_ensemble;
use subcat::image::Image;
use subcat::pipeline::{ensemble_spec, RunConfig};

fn main() -> subcat::error::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() != 2 {
        eprintln!("usage: detect_image <models dir> <image>");
        std::process::exit(2);
    }
    let bundle = ModelBundle::load(args[0].as_ref())?;
    let spec = ensemble_spec(&bundle, &RunConfig::default())?;
    let img = Image::load(args[1].as_ref())?;
    let out = detect_ensemble(&img, &spec)?;
    println!("{} models, {} detections", bundle.models.len(), out.detections.len());
    for d in out.detections.iter().take(20) {
        let b = d.bbox;
        println!("  {:7.1} {:7.1} {:7.1} {:7.1}  score {:.3}  model {}", b.x1, b.y1, b.x2, b.y2, d.score, d.model_id);
    }
    Ok(())
}
