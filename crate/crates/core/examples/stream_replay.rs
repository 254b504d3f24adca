//! Replay a session over a local TCP socket and run the online pipeline
//! against it, then compare with the offline result.

use std::net::{TcpListener, TcpStream};

use gaitctl::eval::training_windows;
use gaitctl::fsm::{decode_sequence, FsmConfig};
use gaitctl::stream::{run_online_stream, serve_replay_on, MemorySink};
use gaitctl::synth::{generate_session, generate_subjects, make_profile, GaitStrategy, SynthConfig};
use gaitctl::tcn::{predict_session, train, TcnConfig, TrainConfig};
use gaitctl::{PreprocessConfig, SessionRecording, WindowConfig};

fn main() -> gaitctl::Result<()> {
    // a quickly trained small model, so the decoder has steps to find
    let subjects = generate_subjects(2, 9, &SynthConfig { laps: 1, ..SynthConfig::default() })?;
    let sessions: Vec<&SessionRecording> = subjects.iter().flatten().map(|s| &s.recording).collect();
    let (window, pre) = (WindowConfig::default(), PreprocessConfig::default());
    let data = training_windows(&sessions, &pre, &window)?;
    let arch = TcnConfig { channels_per_block: 16, dense_units: 16, ..TcnConfig::default() };
    let tcfg = TrainConfig { max_epochs: 6, learning_rate: 3e-3, ..TrainConfig::default() };
    let (model, _) = train(&data, &tcfg, &arch, &window, &pre)?;

    let session = generate_session(&make_profile(2, GaitStrategy::SwingTo), &SynthConfig::default(), 0)?.recording;
    let fsm = FsmConfig::default();

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let replay = {
        let session = session.clone();
        // ten times faster than recorded
        std::thread::spawn(move || serve_replay_on(&session, &listener, 10.0))
    };
    let mut sink = MemorySink::default();
    let summary = run_online_stream(&model, &fsm, TcpStream::connect(addr)?, &mut sink)?;
    let stats = replay.join().expect("replay thread")?;
    println!("sent {} frames in {:.2} s", stats.frames_sent, stats.elapsed_s);
    println!("{} frames, {} steps, latency {:.3} ms, max queue {}", summary.frames, summary.steps, summary.latency_ms, summary.max_queue_depth);

    let preds = predict_session(&model, &session)?;
    let phases: Vec<_> = preds.iter().map(|p| p.phase).collect();
    let (_, offline) = decode_sequence(&phases, &session.timestamps(), &fsm)?;
    println!("online matches offline: {}", offline == sink.steps);
    Ok(())
}
