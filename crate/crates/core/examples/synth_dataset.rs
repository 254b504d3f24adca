//! Generate a small labeled dataset on disk and print its class balance.
//!
//! cargo run --example synth_dataset -- [OUT_DIR] [SUBJECTS]

use gaitctl::fsm::read_step_log;
use gaitctl::synth::{generate_dataset, SynthConfig};

fn main() -> gaitctl::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "target/example-data".into());
    let subjects: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);

    let cfg = SynthConfig::default();
    let manifest = generate_dataset(subjects, 0, &cfg, &out)?;
    println!("{} sessions in {out}", manifest.sessions.len());
    let names = ["stance", "take-off", "swing", "strike", "aux"];
    for (name, share) in names.iter().zip(manifest.class_shares()) {
        println!("  {name:<9} {:5.1}%", share * 100.0);
    }

    let first = &manifest.sessions[0];
    let steps = read_step_log(std::path::Path::new(&out).join(&first.steps_path))?;
    println!("{}: {} frames, {} steps, first step {:.2}-{:.2} s", first.path, first.frames, steps.len(),
        steps[0].start_us as f64 / 1e6, steps[0].end_us as f64 / 1e6);
    Ok(())
}
