//! How accuracy and step recall change with the number of training subjects.
//! Small settings; the CLI `sweep` command runs the full-size version.
//!
//! GAITCTL_THREADS=4 cargo run --release --example subject_sweep

use gaitctl::eval::{subject_sweep, SubjectData, SweepConfig, SweepSetup};
use gaitctl::fsm::FsmConfig;
use gaitctl::synth::{generate_subjects, subject_id, SynthConfig};
use gaitctl::tcn::{TcnConfig, TrainConfig};
use gaitctl::{PreprocessConfig, WindowConfig};

fn main() -> gaitctl::Result<()> {
    let synth = SynthConfig { laps: 1, ..SynthConfig::default() };
    let mut subjects: Vec<SubjectData> = generate_subjects(4, 1, &synth)?
        .into_iter()
        .enumerate()
        .map(|(i, s)| SubjectData { id: subject_id(i), sessions: s.into_iter().map(|x| x.recording).collect() })
        .collect();
    let test = subjects.split_off(3);

    let train = TrainConfig { max_epochs: 6, learning_rate: 2e-3, ..TrainConfig::default() };
    let arch = TcnConfig { channels_per_block: 16, dense_units: 16, ..TcnConfig::default() };
    let (window, preprocess, fsm) = (WindowConfig::default(), PreprocessConfig::default(), FsmConfig::default());
    let setup = SweepSetup { pool: &subjects, test: &test, train: &train, arch: &arch, window: &window, preprocess: &preprocess, fsm: &fsm };
    let table = subject_sweep(&setup, &SweepConfig { k_max: 3, repeats: 2, ..SweepConfig::default() })?;

    println!("k  acc w/o  acc w/  recall w/o  recall w/");
    for r in &table.rows {
        println!("{}  {:.4}   {:.4}  {:.4}      {:.4}", r.k, r.mean_accuracy_without_fsm, r.mean_accuracy_with_fsm,
            r.mean_step_recall_without_fsm, r.mean_step_recall_with_fsm);
    }
    Ok(())
}
