//! How the decay rate trades adaptation against stability. On a recurring
//! stream -- half the clusters emit for a while, then the other half -- a
//! large lambda forgets the dormant clusters quickly (fast adaptation, labels
//! churn), while a small lambda remembers them across regimes (stable ids,
//! slower to drop stale structure). Full-stream NMI over concatenated
//! predictions rewards keeping ids consistent.
//!
//! ```bash
//! cargo run --release --example decay_tuning
//! ```

use nalgebra::{dvector, DMatrix};
use scstream::datagen::{gen_gaussian_stream, gen_recurring_wrapper, DriftSpec};
use scstream::engine::{Batch, EngineConfig, ModelState};
use scstream::family::PriorHyperparams;
use scstream::metrics;

fn run(lambda: f64, batches: &[Batch]) -> scstream::Result<(f64, f64, usize, usize)> {
    let prior = PriorHyperparams::Niw {
        kappa: 0.05,
        mean: dvector![0.0, 0.0],
        nu: 4.0,
        psi: DMatrix::identity(2, 2),
    };
    let mut config = EngineConfig::new(prior, 1.0, lambda, 1e-8, 11);
    config.t_iterations = 3;
    let mut model = ModelState::new(config)?;
    let mut truth_b = Vec::new();
    let mut pred_b = Vec::new();
    let mut mean_ari = 0.0;
    let mut k_max = 0;
    for batch in batches {
        let predicted = model.predict_labels(batch)?;
        let result = model.update_with_batch(batch)?;
        k_max = k_max.max(result.k);
        if let Some(pred) = predicted {
            let truth = batch.truth.clone().unwrap();
            mean_ari += metrics::score(&truth, &pred)?.ari;
            truth_b.push(truth);
            pred_b.push(pred);
        }
    }
    mean_ari /= pred_b.len() as f64;
    let full = metrics::full_nmi(&truth_b, &pred_b)?;
    Ok((mean_ari, full, model.k(), k_max))
}

fn main() -> scstream::Result<()> {
    // 6 clusters; only the even- or odd-labeled half is active, switching
    // every 12 batches
    let base = gen_gaussian_stream(6, 2, 48_000, 800, DriftSpec::none(), 31)?;
    let batches: Vec<Batch> = gen_recurring_wrapper(base, 12, 31)?.collect();

    println!("lambda   mean-ARI   full-NMI   final-K   max-K   history-bound");
    for lambda in [0.25, 0.5, 1.0, 2.0] {
        let (ari, full, k, k_max) = run(lambda, &batches)?;
        let bound = scstream::history::max_history_len(lambda, 1e-8);
        println!("{lambda:>6}   {ari:.4}     {full:.4}     {k:>5}   {k_max:>5}   {bound:>10}");
    }
    Ok(())
}
