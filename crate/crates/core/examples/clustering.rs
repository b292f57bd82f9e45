//! Three Gaussian blobs clustered with k-means and spectral clustering,
//! scored against the generating labels.
//!
//! cargo run --release --example clustering

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subcat::clustering::{adjusted_rand_index, kmeans, spectral_cluster, FeatureMatrix, FeatureSource, SpectralConfig};

fn main() -> subcat::error::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let centers = [[0.0, 0.0], [5.0, 1.0], [1.0, 6.0]];
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (c, m) in centers.iter().enumerate() {
        for _ in 0..60 {
            rows.push(vec![m[0] + rng.gen_range(-1.5..1.5), m[1] + rng.gen_range(-1.5..1.5)]);
            truth.push(c);
        }
    }
    let x = FeatureMatrix::new(rows, FeatureSource::Geometric)?;

    let km = kmeans(&x, 3, 0, 100)?;
    println!("k-means: {} iterations, objective {:.2} -> {:.2}, ARI {:.3}",
        km.objective_trace.len(),
        km.objective_trace[0],
        km.objective_trace.last().unwrap(),
        adjusted_rand_index(&km.assignments, &truth));

    let cfg = SpectralConfig::median_heuristic(&x, 3)?;
    let sp = spectral_cluster(&x, &cfg, 0)?;
    println!("spectral (sigma {:.2}): sizes {:?}, ARI {:.3}", cfg.sigma, sp.sizes(), adjusted_rand_index(&sp.assignments, &truth));
    Ok(())
}
