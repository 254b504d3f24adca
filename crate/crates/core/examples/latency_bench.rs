//! Per-frame latency of the online path with the default-size network.
//! Weights are untrained; timing does not depend on them.

use gaitctl::eval::bench_latency;
use gaitctl::fsm::FsmConfig;
use gaitctl::preprocess::NormStats;
use gaitctl::synth::{generate_session, make_profile, GaitStrategy, SynthConfig};
use gaitctl::tcn::{init_weights, TcnConfig, TcnModel};
use gaitctl::{PreprocessConfig, WindowConfig};

fn main() -> gaitctl::Result<()> {
    let arch = TcnConfig::default();
    let model = TcnModel::new(arch.clone(), init_weights(&arch, 0), NormStats::identity(), WindowConfig::default(), PreprocessConfig::default())?;
    let session = generate_session(&make_profile(0, GaitStrategy::TwoPoint), &SynthConfig::default(), 0)?.recording;
    let report = bench_latency(&model, &FsmConfig::default(), &session, 2000, 200)?;
    println!("{}", report.summary());
    Ok(())
}
