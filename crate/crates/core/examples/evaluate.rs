//! Score a freshly trained model on a held-out subject with and without the
//! step decoder.

use gaitctl::eval::{evaluate_sessions, training_windows};
use gaitctl::fsm::FsmConfig;
use gaitctl::synth::{generate_subjects, SynthConfig};
use gaitctl::tcn::{train, TcnConfig, TrainConfig};
use gaitctl::{PreprocessConfig, SessionRecording, WindowConfig};

fn main() -> gaitctl::Result<()> {
    let synth = SynthConfig { laps: 1, ..SynthConfig::default() };
    let subjects = generate_subjects(4, 3, &synth)?;
    let train_sessions: Vec<&SessionRecording> = subjects[..3].iter().flatten().map(|s| &s.recording).collect();
    let test: Vec<SessionRecording> = subjects[3].iter().map(|s| s.recording.clone()).collect();

    let (window, pre) = (WindowConfig::default(), PreprocessConfig::default());
    let data = training_windows(&train_sessions, &pre, &window)?;
    let arch = TcnConfig { channels_per_block: 32, dense_units: 32, ..TcnConfig::default() };
    let tcfg = TrainConfig { max_epochs: 10, learning_rate: 2e-3, ..TrainConfig::default() };
    let (model, _) = train(&data, &tcfg, &arch, &window, &pre)?;

    let report = evaluate_sessions(&model, &FsmConfig::default(), &test)?;
    print!("{}", report.to_text());
    Ok(())
}
