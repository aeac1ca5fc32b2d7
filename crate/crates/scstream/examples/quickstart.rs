//! Minimal end-to-end run: generate a synthetic Gaussian stream, feed it
//! batch by batch in the predict-then-update protocol, and print per-batch
//! cluster counts and agreement with the generating labels.
//!
//! ```bash
//! cargo run --release --example quickstart
//! ```

use nalgebra::{dvector, DMatrix};
use scstream::datagen::{gen_gaussian_stream, DriftSpec};
use scstream::engine::{EngineConfig, ModelState};
use scstream::family::PriorHyperparams;
use scstream::metrics;

fn main() -> scstream::Result<()> {
    // 2D Gaussian data with a vague NIW prior: kappa small because the
    // cluster centers are nowhere near the prior mean
    let prior = PriorHyperparams::Niw {
        kappa: 0.05,
        mean: dvector![0.0, 0.0],
        nu: 4.0,
        psi: DMatrix::identity(2, 2),
    };
    let config = EngineConfig::new(prior, 1.0, 1.0, 1e-8, 42);
    let mut model = ModelState::new(config)?;

    // 6 well-separated clusters, 20 batches of 500 points, no drift
    let stream = gen_gaussian_stream(6, 2, 10_000, 500, DriftSpec::none(), 7)?;

    println!("batch     K    predicted-ARI");
    for (i, batch) in stream.enumerate() {
        // labels under the current model, before it sees the batch
        let predicted = model.predict_labels(&batch)?;
        let result = model.update_with_batch(&batch)?;
        let ari = match &predicted {
            Some(pred) => {
                let truth = batch.truth.as_ref().expect("generator provides truth");
                format!("{:.4}", metrics::score(truth, pred)?.ari)
            }
            None => "(cold)".to_string(),
        };
        println!("{i:>5}  {:>4}    {ari}", result.k);
    }
    println!("\nfinal model: {} clusters", model.k());
    Ok(())
}
