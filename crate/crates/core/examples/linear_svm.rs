//! The three linear learners on small synthetic problems: a binary hinge
//! SVM, an epsilon-insensitive regressor and a Crammer-Singer classifier.
//!
//! cargo run --release --example linear_svm

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subcat::linear_models::{train_binary_svm_traced, train_multiclass_cs, train_svr_l2, SvmParams};

fn main() -> subcat::error::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = SvmParams::default();

    let x: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let y: Vec<f64> = x.iter().map(|r| if r[0] + 0.5 * r[1] > 0.1 { 1.0 } else { -1.0 }).collect();
    let (svm, trace) = train_binary_svm_traced(&x, &y, &params)?;
    let acc = x.iter().zip(&y).filter(|(r, t)| svm.decision(r).unwrap() * **t > 0.0).count();
    println!("binary: w {:?} b {:.3}, {} epochs, gap {:.2e}, training accuracy {acc}/200",
        svm.weights.iter().map(|w| (w * 100.0).round() / 100.0).collect::<Vec<_>>(),
        svm.bias,
        trace.primal.len(),
        trace.primal.last().unwrap() - trace.dual.last().unwrap());

    let t: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - r[1] + 0.3 + rng.gen_range(-0.05..0.05)).collect();
    let svr = train_svr_l2(&x, &t, &params)?;
    let mae = x.iter().zip(&t).map(|(r, v)| (svr.decision(r).unwrap() - v).abs()).sum::<f64>() / 200.0;
    println!("regression: w {:?} b {:.3}, mean abs error {mae:.3}", svr.weights.iter().map(|w| (w * 100.0).round() / 100.0).collect::<Vec<_>>(), svr.bias);

    let labels: Vec<usize> = x.iter().map(|r| if r[0] > 0.3 { 0 } else if r[1] > 0.0 { 1 } else { 2 }).collect();
    let (mc, _) = train_multiclass_cs(&x, &labels, &[0, 1, 2], &params)?;
    let right = x.iter().zip(&labels).filter(|(r, l)| mc.predict(r).unwrap() == **l).count();
    println!("multiclass: training accuracy {right}/200");
    Ok(())
}
