//! Inspect expert routing: compute per-image mean routing vectors, per-type
//! centroids, pairwise centroid cosines, and the silhouette score of the
//! routing space clustered by degradation type.
//!
//! Run with: cargo run --release --example analyze_routing

use m2restore::data::{make_sample, DegType, DegradeParams};
use m2restore::dder::Mode;
use m2restore::metrics::silhouette;
use m2restore::model::{Model, ModelConfig};
use m2restore::prompt::{OraclePrior, PriorProvider};
use m2restore::train::batch_tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> m2restore::Result<()> {
    let cfg = ModelConfig::tiny();
    let n = cfg.n_experts;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::<f32>::new(&mut rng, cfg.clone())?;
    let prior = OraclePrior::new(cfg.f_p, 7);
    let params = DegradeParams::default();

    let types = [DegType::Rain, DegType::Snow, DegType::Haze];
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (ti, &ty) in types.iter().enumerate() {
        for i in 0..6u64 {
            let sample = make_sample(900 + 17 * ti as u64 + i, ty, &params, 32, 32)?;
            let x = batch_tensor::<f32>(&[&sample.degraded])?;
            let pr = prior.prior(&sample.degraded, Some(sample.label))?;
            let mut fwd = ChaCha8Rng::seed_from_u64(0);
            let (_, routing) = model.forward(&x, &[pr], Mode::Infer, &mut fwd)?;

            // Mean routing weight per expert, averaged over pixels and levels.
            let mut v = vec![0.0f64; n];
            for state in &routing {
                let se = state.se.data();
                let rows = se.len() / n;
                for r in 0..rows {
                    for e in 0..n {
                        v[e] += se[r * n + e] as f64 / (rows * routing.len()) as f64;
                    }
                }
            }
            vectors.push(v);
            labels.push(sample.label);
        }
    }

    // Per-type centroids and their pairwise cosines.
    let mut centroids = Vec::new();
    for (ti, &ty) in types.iter().enumerate() {
        let members: Vec<&Vec<f64>> = vectors
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == ty.label())
            .map(|(v, _)| v)
            .collect();
        let mut c = vec![0.0; n];
        for v in &members {
            for e in 0..n {
                c[e] += v[e] / members.len() as f64;
            }
        }
        println!("{ty:>6} centroid: {:?}", c.iter().map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>());
        centroids.push((ti, c));
    }
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            let (a, b) = (&centroids[i].1, &centroids[j].1);
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            println!("cosine({}, {}) = {:.4}", types[i], types[j], dot / (na * nb));
        }
    }

    println!("silhouette: {:.4}", silhouette(&vectors, &labels)?);
    println!("(an untrained model routes mostly on the prior; training sharpens the separation)");
    Ok(())
}
