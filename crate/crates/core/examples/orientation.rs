//! Angle estimation from detector score vectors: eight view-tuned
//! detectors feed a multiclass classifier over angle bins and a regressor
//! on the angle itself.
//!
//! cargo run --release --example orientation

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subcat::annotations::wrap_angle;
use subcat::linear_models::SvmParams;
use subcat::orientation::{bin_centers, train_orientation, OrientationKind};

fn samples(seed: u64, n: usize) -> Vec<(Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = bin_centers(8);
    (0..n)
        .map(|_| {
            let a: f64 = rng.gen_range(-PI..PI);
            (centers.iter().map(|c| (a - c).cos().max(0.0) + rng.gen_range(0.0..0.1)).collect(), a)
        })
        .collect()
}

fn main() -> subcat::error::Result<()> {
    let train = samples(1, 500);
    let test = samples(2, 200);
    let p = SvmParams::default();
    for (name, kind, bins) in [("classifier", OrientationKind::MulticlassSvm, 16), ("regressor", OrientationKind::Svr, 0)] {
        let m = train_orientation(&train, 8, kind, bins, &p)?;
        let errs: Vec<f64> = test.iter().map(|(v, a)| wrap_angle(m.estimate(v).unwrap() - a).abs()).collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let sim = test.iter().zip(&errs).map(|(_, e)| 0.5 * (1.0 + e.cos())).sum::<f64>() / errs.len() as f64;
        println!("{name:>10}: mean angle error {:.1} deg, orientation similarity {sim:.3}", mean.to_degrees());
    }
    Ok(())
}
