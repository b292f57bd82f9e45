//! Real AdaBoost with depth-2 trees on a noisy two-class problem and on
//! XOR, which no single threshold can separate.
//!
//! cargo run --release --example boosting

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subcat::boosting::{adaboost, cascade_thresholds};

fn rows(v: &[Vec<f32>]) -> Vec<&[f32]> {
    v.iter().map(|r| r.as_slice()).collect()
}

fn main() -> subcat::error::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sample = |shift: f32| -> Vec<f32> { (0..10).map(|_| rng.gen_range(-1.0f32..1.0) + shift).collect() };
    let pos: Vec<Vec<f32>> = (0..300).map(|_| sample(0.25)).collect();
    let neg: Vec<Vec<f32>> = (0..600).map(|_| sample(-0.1)).collect();

    let (trees, trace) = adaboost(&rows(&pos), &rows(&neg), 64)?;
    for (i, (l, e)) in trace.losses.iter().zip(&trace.errors).enumerate().filter(|(i, _)| i % 8 == 0) {
        println!("round {i:>2}: loss {l:.4}, weighted error {e:.3}");
    }
    let score = |r: &[f32]| trees.iter().map(|t| t.eval(r)).sum::<f64>();
    let errs = pos.iter().filter(|r| score(r) <= 0.0).count() + neg.iter().filter(|r| score(r) > 0.0).count();
    println!("training errors after {} trees: {errs}/900", trees.len());
    let thr = cascade_thresholds(&trees, &rows(&pos), 1.0, -40.0);
    println!("cascade floors: first {:.2}, last {:.2}", thr[0], thr.last().unwrap());

    let xor: Vec<Vec<f32>> = (0..200).map(|_| vec![rng.gen_range(-1.0f32..1.0), rng.gen_range(-1.0f32..1.0)]).collect();
    let (p, n): (Vec<Vec<f32>>, Vec<Vec<f32>>) = xor.into_iter().partition(|r| (r[0] > 0.0) != (r[1] > 0.0));
    let (trees, trace) = adaboost(&rows(&p), &rows(&n), 4)?;
    println!("XOR: first tree error {:.3}, {} trees", trace.errors[0], trees.len());
    Ok(())
}
