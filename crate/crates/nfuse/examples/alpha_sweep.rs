//! Sweep the modality fusion weight over [0, 1] on synthetic prediction
//! sets and report the per-metric optima.

use nfuse::fusion::{optimal_alpha, MetricKind};
use nfuse::metrics::PredictionSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Softmax-like rows: mostly right for `skill` of the samples, noisy
/// otherwise.
fn predictions(rng: &mut ChaCha8Rng, labels: &[usize], skill: f64) -> PredictionSet {
    let rows: Vec<[f64; 3]> = labels
        .iter()
        .map(|&label| {
            let mut row = [0.0f64; 3];
            for v in row.iter_mut() {
                *v = rng.gen_range(0.05..0.4);
            }
            if rng.gen_bool(skill) {
                row[label] += 1.0;
            }
            let s: f64 = row.iter().sum();
            row.map(|v| v / s)
        })
        .collect();
    PredictionSet::new(rows, labels.to_vec()).unwrap()
}

fn main() -> nfuse::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
    // T1 is stronger than FLAIR, but neither is perfect
    let t1 = predictions(&mut rng, &labels, 0.8);
    let fl = predictions(&mut rng, &labels, 0.6);

    println!("{:<12} {:>6} {:>9}", "metric", "alpha", "value");
    for metric in MetricKind::ALL {
        let (alpha, value, rows) = optimal_alpha(&t1, &fl, metric, 0.01)?;
        let col = MetricKind::ALL.iter().position(|&m| m == metric).unwrap();
        let endpoints = (rows[0].metrics[col], rows[100].metrics[col]);
        println!(
            "{:<12} {:>6.2} {:>9.4}   (flair-only {:.4}, t1-only {:.4})",
            metric.as_str(),
            alpha.value(),
            value,
            endpoints.0.unwrap_or(f64::NAN),
            endpoints.1.unwrap_or(f64::NAN),
        );
    }
    Ok(())
}
