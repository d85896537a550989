//! Memorize a handful of synthetic volumes with a narrow network — a
//! quick sanity check that gradients, the optimizer, and the training
//! loop fit together.

use nfuse::arch::{Network, NetworkSpec, INPUT_EXTENT};
use nfuse::data::{Modality, Volume};
use nfuse::labeling::Label;
use nfuse::train::{evaluate_network, train, TrainConfig, TrainSample, TransferMode};

fn sample(i: usize) -> TrainSample {
    let e = INPUT_EXTENT;
    let label = Label::ALL[i % 3];
    // a bright cube whose size tracks the class
    let mut data = vec![0.1f32; e * e * e];
    let c = e / 2;
    let r = 6 + 4 * label.index() + i / 3;
    for z in c - r..c + r {
        for y in c - r..c + r {
            for x in c - r..c + r {
                data[(z * e + y) * e + x] = 0.9;
            }
        }
    }
    TrainSample {
        session_id: format!("s{i:03}"),
        volume: Volume::new([e, e, e], data, Modality::T1).unwrap(),
        label,
    }
}

fn main() -> nfuse::Result<()> {
    let samples: Vec<TrainSample> = (0..6).map(sample).collect();
    let network = Network::init(NetworkSpec::with_channels([1, 2, 2, 2])?, 7)?;

    let mut cfg = TrainConfig::new(TransferMode::Retrain);
    cfg.learning_rate = 0.003;
    cfg.batch_size = 3;
    cfg.epochs = 40;
    cfg.augment = false;

    let outcome = train(&network, &samples, &[], &cfg)?;
    for row in outcome.log.iter().step_by(8) {
        println!(
            "epoch {:>3}  loss {:.4}  accuracy {:.2}",
            row.epoch, row.loss, row.accuracy
        );
    }
    let eval = evaluate_network(&outcome.network, &samples, 3)?;
    println!(
        "final: loss {:.4}  accuracy {:.2}  ({} optimizer steps)",
        eval.loss, eval.accuracy, outcome.steps
    );
    Ok(())
}
