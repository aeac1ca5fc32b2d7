//! Cluster count vectors (think: word counts per document) with the
//! multinomial family under a Dirichlet prior. The stream drifts gradually:
//! each cluster's probability vector interpolates toward a resampled target,
//! so the "topics" reshape themselves over time.
//!
//! ```bash
//! cargo run --release --example multinomial_topics
//! ```

use nalgebra::DVector;
use scstream::datagen::{gen_multinomial_stream, DriftSpec};
use scstream::engine::{EngineConfig, ModelState};
use scstream::family::PriorHyperparams;
use scstream::metrics;
use scstream::sampler::Posterior;

fn main() -> scstream::Result<()> {
    let vocab = 30usize;
    let prior = PriorHyperparams::Dirichlet {
        d: DVector::from_element(vocab, 0.5),
    };
    let mut config = EngineConfig::new(prior, 1.0, 0.5, 1e-8, 17);
    config.t_iterations = 3;
    let mut model = ModelState::new(config)?;

    // 4 topics over a 30-symbol vocabulary, 40 counts per document,
    // interpolating to fresh topics every 15 batches
    let stream =
        gen_multinomial_stream(4, vocab, 40, 24_000, 800, DriftSpec::gradual(1.0, 15), 23)?;

    println!("batch   K   ARI     purity");
    for (i, batch) in stream.enumerate() {
        let predicted = model.predict_labels(&batch)?;
        let result = model.update_with_batch(&batch)?;
        if let Some(pred) = &predicted {
            let s = metrics::score(batch.truth.as_ref().unwrap(), pred)?;
            if i % 3 == 0 {
                println!("{i:>5} {:>3}  {:.4}  {:.4}", result.k, s.ari, s.purity);
            }
        }
    }

    // peek at the learned topics: top symbols of each cluster posterior
    println!("\nper-cluster top symbols (posterior Dirichlet means):");
    for k in 0..model.k() {
        if let Posterior::Dirichlet(p) = model.cluster_posterior(k)? {
            let mut idx: Vec<usize> = (0..vocab).collect();
            idx.sort_by(|&a, &b| p.d[b].total_cmp(&p.d[a]));
            let top: Vec<String> = idx[..5]
                .iter()
                .map(|&j| format!("{j}:{:.2}", p.d[j] / p.total))
                .collect();
            println!("  cluster {k}: {}", top.join("  "));
        }
    }
    Ok(())
}
