//! Channel features for one image: per-channel energy, descriptor size and
//! the pyramid layout used for detection.
//!
//! cargo run --release --example channel_features -- [image.png]

use subcat::channels::{build_pyramid, estimate_lambdas, ChannelStack, CellWindow, PyramidConfig, CELL, N_CHANNELS};
use subcat::image::Image;
use subcat::synth::{render_scene, SynthSpec};

const NAMES: [&str; N_CHANNELS] = ["L", "U", "V", "|grad|", "o0", "o1", "o2", "o3", "o4", "o5"];

fn main() -> subcat::error::Result<()> {
    let img = match std::env::args().nth(1) {
        Some(p) => Image::load(p.as_ref())?,
        None => render_scene(&SynthSpec::default(), 0)?.0,
    };
    println!("image {}x{}", img.width, img.height);

    let stack = ChannelStack::from_image(&img);
    let n = stack.width * stack.height;
    println!("{}x{} cells of {CELL}x{CELL} pixels", stack.width, stack.height);
    for (c, name) in NAMES.iter().enumerate() {
        let mean = stack.plane(c).iter().sum::<f32>() / n as f32;
        println!("  {name:>6}  mean {mean:.4}");
    }
    let win = CellWindow { x: 0, y: 0, w: 8.min(stack.width), h: 8.min(stack.height) };
    println!("a {}x{} pixel window gives {} features", win.w * CELL, win.h * CELL, stack.extract_window(win)?.len());

    let pyr = build_pyramid(&img, &PyramidConfig::default())?;
    println!("pyramid: {} levels, scales {:.3} .. {:.3}", pyr.levels.len(), pyr.scales[0], pyr.scales.last().unwrap());
    let scenes: Vec<Image> = (0..8).map(|i| render_scene(&SynthSpec::default(), i).map(|s| s.0)).collect::<Result<_, _>>()?;
    let lambdas = estimate_lambdas(&scenes, 8);
    println!("power-law exponents fitted on 8 scenes: {:?}", lambdas.map(|l| (l * 1000.0).round() / 1000.0));
    Ok(())
}
