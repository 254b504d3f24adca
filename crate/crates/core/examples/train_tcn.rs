//! Train a small classifier on synthetic subjects, save it, reload it and
//! check the reloaded model predicts the same thing.
//!
//! cargo run --release --example train_tcn -- [EPOCHS]

use gaitctl::eval::training_windows;
use gaitctl::synth::{generate_subjects, SynthConfig};
use gaitctl::tcn::{load_model, predict_session, save_model, train, TcnConfig, TrainConfig};
use gaitctl::{PreprocessConfig, SessionRecording, WindowConfig};

fn main() -> gaitctl::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let synth = SynthConfig { laps: 1, ..SynthConfig::default() };
    let subjects = generate_subjects(3, 7, &synth)?;
    let sessions: Vec<&SessionRecording> = subjects[..2].iter().flatten().map(|s| &s.recording).collect();

    let (window, pre) = (WindowConfig::default(), PreprocessConfig::default());
    let data = training_windows(&sessions, &pre, &window)?;
    let arch = TcnConfig { channels_per_block: 32, dense_units: 32, ..TcnConfig::default() };
    let tcfg = TrainConfig { max_epochs: epochs, learning_rate: 2e-3, ..TrainConfig::default() };
    let (model, history) = train(&data, &tcfg, &arch, &window, &pre)?;
    for e in &history.epochs {
        println!("epoch {:>3}  loss {:.4}  val loss {:.4}  val acc {:.3}", e.epoch, e.train_loss, e.val_loss, e.val_accuracy);
    }
    println!("{} parameters, receptive field {} frames", model.weights.param_count(), arch.receptive_field());

    let path = std::env::temp_dir().join("gaitctl-example-model.json");
    save_model(&model, &path)?;
    let back = load_model(&path)?;
    let held_out = &subjects[2][0].recording;
    let (a, b) = (predict_session(&model, held_out)?, predict_session(&back, held_out)?);
    assert_eq!(a, b);
    let labels = held_out.labels.as_ref().unwrap();
    let hits = a.iter().zip(labels).filter(|(p, l)| p.phase == **l).count();
    println!("held-out frame accuracy {:.3}", hits as f64 / labels.len() as f64);
    Ok(())
}
