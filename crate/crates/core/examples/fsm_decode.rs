//! Decode a noisy phase stream into scored steps, frame by frame.

use gaitctl::fsm::{fsm_step, uniform_timestamps, FsmConfig, FsmState};
use gaitctl::GaitPhase::{self, *};

fn main() {
    let mut labels: Vec<GaitPhase> = Vec::new();
    for (p, n) in [(Stance, 20), (TakeOff, 8), (Swing, 12), (Strike, 6), (Stance, 25), (TakeOff, 8), (Strike, 8), (Stance, 25)] {
        labels.extend(std::iter::repeat_n(p, n));
    }
    // single-frame glitches the debouncer should swallow
    labels[30] = Strike;
    labels[55] = Auxiliary;

    let cfg = FsmConfig::default();
    let t = uniform_timestamps(labels.len(), 100.0);
    let mut state = FsmState::new();
    let mut refined = Vec::new();
    for (i, &p) in labels.iter().enumerate() {
        let (r, step) = fsm_step(&mut state, p, t[i], &cfg);
        refined.push(r);
        if let Some(step) = step {
            let s = &step.interval;
            println!("step {:.2}-{:.2} s  score {}/4  phases {:?}", s.start_us as f64 / 1e6, s.end_us as f64 / 1e6, s.raw_score, s.phases_seen);
        }
    }
    let changed = labels.iter().zip(&refined).filter(|(a, b)| a != b).count();
    println!("{changed} of {} frames relabelled", labels.len());
}
