//! Trains the toy architecture on the synthetic waveform task and prints
//! per-epoch statistics.
//!
//! ```text
//! cargo run --release -p timecaps --example synthetic -- [epochs] [seed]
//! ```

use timecaps::data::{split, synth_waveforms};
use timecaps::model::{ModelConfig, ModelParams};
use timecaps::train::{reconstruction_error, train_with, TrainConfig};

fn main() -> timecaps::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(20, |a| a.parse().expect("epochs must be an integer"));
    let seed = args.next().map_or(7, |a| a.parse().expect("seed must be an integer"));

    let data = synth_waveforms(300, 64, 0.1, seed)?;
    let (train_set, test_set) = split(&data, 1.0 / 3.0, seed)?;
    let cfg = ModelConfig::toy();
    let tc = TrainConfig { epochs, seed, ..TrainConfig::default() };
    let mut params = ModelParams::<f64>::init(&cfg, seed)?;
    let report = train_with(&mut params, &cfg, &tc, &train_set, &test_set, |s| {
        println!(
            "epoch {:2}  loss {:.5}  margin {:.5}  recon {:.5}  train {:.4}  test {:.4}",
            s.epoch, s.total_loss, s.margin_loss, s.recon_loss, s.train_accuracy, s.test_accuracy
        );
    })?;
    let (mse, baseline) = reconstruction_error(&params, &cfg, &test_set)?;
    println!("reconstruction mse {mse:.5} (per-signal mean {baseline:.5})");
    println!("confusion {:?}", report.confusion);
    println!("wall time {:.1}s", report.wall_time_secs);
    Ok(())
}
