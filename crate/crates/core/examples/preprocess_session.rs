//! Turn raw IMU samples into 9-channel measurement vectors, offline and
//! one sample at a time, and show that both paths agree.

use gaitctl::preprocess::{preprocess_session, segment_windows, PreprocessConfig, Preprocessor};
use gaitctl::synth::{generate_session, make_profile, GaitStrategy, SynthConfig};
use gaitctl::WindowConfig;

fn main() -> gaitctl::Result<()> {
    let session = generate_session(&make_profile(1, GaitStrategy::SwingThrough), &SynthConfig::default(), 0)?.recording;
    let cfg = PreprocessConfig::default();

    let offline = preprocess_session(&session, &cfg, 100.0)?;
    let mut online = Preprocessor::new(&cfg, 100.0)?;
    for (raw, want) in session.samples.iter().zip(&offline) {
        assert_eq!(online.process(raw)?, *want);
    }

    // channels: yaw pitch roll, filtered rates, gravity-free acceleration
    for (i, m) in offline.iter().enumerate().skip(100).step_by(25).take(6) {
        let v: Vec<String> = m.0.iter().map(|x| format!("{x:7.3}")).collect();
        println!("t={:.2}s {}", session.samples[i].t_us as f64 / 1e6, v.join(" "));
    }

    let windows = segment_windows(&offline, &session.timestamps(), session.labels.as_deref(), &WindowConfig::default());
    println!("{} frames -> {} windows of {} frames", offline.len(), windows.len(), windows[0].data.len());
    Ok(())
}
