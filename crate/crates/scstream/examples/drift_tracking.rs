//! Track clusters whose means follow independent random walks. The damped
//! window forgets stale history at rate lambda, so the posteriors follow the
//! moving clusters; split/merge moves repair the structure when clusters
//! collide or separate. Prints a small dashboard every few batches.
//!
//! ```bash
//! cargo run --release --example drift_tracking
//! ```

use nalgebra::{dvector, DMatrix};
use scstream::datagen::{gen_gaussian_stream, DriftSpec};
use scstream::engine::{EngineConfig, ModelState};
use scstream::family::PriorHyperparams;
use scstream::metrics;
use scstream::sampler::Posterior;

fn main() -> scstream::Result<()> {
    let prior = PriorHyperparams::Niw {
        kappa: 0.05,
        mean: dvector![0.0, 0.0],
        nu: 4.0,
        psi: DMatrix::identity(2, 2),
    };
    let mut config = EngineConfig::new(prior, 1.0, 1.0, 1e-8, 3);
    config.t_iterations = 5;
    let mut model = ModelState::new(config)?;

    // each cluster mean steps by N(0, (0.03 * separation)^2) per batch
    let stream = gen_gaussian_stream(8, 2, 60_000, 1000, DriftSpec::incremental(0.03), 19)?;

    let mut moves_total = 0usize;
    println!("batch   K   ARI     NMI     accepted-moves   largest-cluster mean");
    for (i, batch) in stream.enumerate() {
        let predicted = model.predict_labels(&batch)?;
        let result = model.update_with_batch(&batch)?;
        moves_total += result.moves.iter().filter(|m| m.accepted).count();
        if i % 5 != 0 {
            continue;
        }
        let (ari, nmi) = match &predicted {
            Some(pred) => {
                let s = metrics::score(batch.truth.as_ref().unwrap(), pred)?;
                (format!("{:.4}", s.ari), format!("{:.4}", s.nmi))
            }
            None => ("  -   ".into(), "  -   ".into()),
        };
        // where does the heaviest cluster currently sit?
        let heaviest = (0..model.k())
            .max_by(|&a, &b| model.clusters[a].weight.total_cmp(&model.clusters[b].weight))
            .unwrap();
        let mean = match model.cluster_posterior(heaviest)? {
            Posterior::Niw(p) => format!("({:+.1}, {:+.1})", p.mean[0], p.mean[1]),
            Posterior::Dirichlet(_) => unreachable!("gaussian stream"),
        };
        println!(
            "{i:>5} {:>3}  {ari}  {nmi}  {moves_total:>14}   {mean}",
            result.k
        );
    }
    Ok(())
}
