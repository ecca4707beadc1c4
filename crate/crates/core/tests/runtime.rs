use std::thread;
use std::time::Duration;

use mm_arch::demos;
use mm_arch::model::Model;
use mm_arch::runtime::{self, EventKind, HaltReason, Mode, Runtime, Trace, TraceError};
use proptest::prelude::*;

#[test]
fn steps_then_finish_equal_run() {
    for demo in &demos::ALL {
        let model = demo.model().unwrap();
        let whole = runtime::run(model.clone(), Mode::Mm, 11, 60).unwrap();
        let mut rt = Runtime::new(model, Mode::Mm, 11).unwrap();
        for _ in 0..60 {
            rt.step().unwrap();
        }
        rt.finish();
        assert_eq!(rt.trace().to_ndjson(), whole.to_ndjson(), "{}", demo.name);
    }
}

#[test]
fn two_steps_equal_two_cycle_run() {
    let model = demos::THREAT.model().unwrap();
    let mut a = Runtime::new(model.clone(), Mode::Mm, 1).unwrap();
    a.step().unwrap();
    a.step().unwrap();
    let mut b = Runtime::new(model, Mode::Mm, 1).unwrap();
    b.run(2).unwrap();
    assert_eq!(a.inspect(10), b.inspect(10));
}

#[test]
fn demo_traces_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for demo in &demos::ALL {
        for mode in [Mode::Mm, Mode::Pipeline] {
            let trace = runtime::run(demo.model().unwrap(), mode, 5, 80).unwrap();
            let path = dir.path().join(format!("{}-{mode}.ndjson", demo.name));
            trace.write_to(std::fs::File::create(&path).unwrap()).unwrap();
            let text = std::fs::read_to_string(&path).unwrap();
            let back = Trace::parse(&text).unwrap();
            assert_eq!(back, trace);
            assert_eq!(back.to_ndjson(), text);
        }
    }
}

#[test]
fn truncated_trace_file_is_reported() {
    let text = runtime::run(demos::QUERY.model().unwrap(), Mode::Mm, 0, 20)
        .unwrap()
        .to_ndjson();
    let lines = text.lines().count();
    let cut = &text[..text.len() - 3];
    match Trace::parse(cut) {
        Err(TraceError::Truncated { last_good_line }) => assert_eq!(last_good_line, lines - 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn halt_action_ends_the_run_early() {
    let mut model = demos::QUERY.model().unwrap();
    let json = model.to_json().replacen(
        r#""emit-reward": {
            "amount": 2.0
          }"#,
        r#""halt": null"#,
        1,
    );
    assert_ne!(json, model.to_json(), "replacement target not found");
    model = Model::parse(&json).unwrap();
    let trace = runtime::run(model, Mode::Mm, 0, 200).unwrap();
    assert_eq!(trace.halt(), Some(HaltReason::HaltAction));
    assert_eq!(trace.events.last().unwrap().cycle, 2);
}

#[test]
fn step_after_halt_is_refused() {
    let mut rt = Runtime::new(demos::QUERY.model().unwrap(), Mode::Mm, 0).unwrap();
    rt.run(3).unwrap();
    assert!(rt.is_finished());
    assert!(matches!(rt.step(), Err(runtime::RuntimeError::Finished)));
}

fn echo_model(script: &str) -> Model {
    let json = serde_json::json!({
        "name": "echo",
        "codebook": {"dimension": 64, "seed": 1},
        "buffers": [{"name": "goal", "owner": "central"}],
        "predictors": [{
            "name": "echo",
            "tag": "outside",
            "kind": {"external": {"command": ["sh", "-c", script]}},
            "module": "goal",
            "emit": {"isa": "word", "slot": "form"}
        }]
    });
    Model::parse(&json.to_string()).unwrap()
}

fn step_slowly(rt: &mut Runtime, cycles: u32) {
    for _ in 0..cycles {
        rt.step().unwrap();
        thread::sleep(Duration::from_millis(5));
    }
    rt.finish();
}

#[test]
fn external_predictions_reach_middle_memory() {
    let script = r#"while read line; do
        echo '{"type":"prediction","tag":"outside","salience":0.5,"chunk":{"isa":"word","slots":{"form":"hello"}}}'
        echo 'not json'
    done"#;
    let mut rt = Runtime::new(echo_model(script), Mode::Mm, 0).unwrap();
    step_slowly(&mut rt, 40);
    let events = &rt.trace().events;
    assert!(events.iter().any(|e| matches!(
        &e.kind,
        EventKind::Deposit { origin, salience, .. } if origin.as_str() == "echo" && *salience == 0.5
    )));
    assert!(events
        .iter()
        .any(|e| matches!(&e.kind, EventKind::Error { raw: Some(raw), .. } if raw == "not json")));
}

#[test]
fn dead_predictor_is_reported_once_and_the_run_continues() {
    let mut rt = Runtime::new(echo_model("exit 0"), Mode::Mm, 0).unwrap();
    step_slowly(&mut rt, 30);
    let warnings = rt
        .trace()
        .events
        .iter()
        .filter(|e| matches!(&e.kind, EventKind::Warning { message } if message.contains("echo")))
        .count();
    assert_eq!(warnings, 1);
    assert_eq!(rt.trace().halt(), Some(HaltReason::CyclesExhausted));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn model_round_trip(
        demo in 0usize..demos::ALL.len(),
        decay in 0.1f64..0.9,
        alpha in 0.01f64..1.0,
        noise in 0.0f64..0.5,
        wm_weight in 0.0f64..3.0,
        cycle_ms in 10i64..100,
    ) {
        let mut m = demos::ALL[demo].model().unwrap();
        m.memory.decay = decay;
        m.memory.noise = noise;
        m.learning.alpha = alpha;
        m.context.wm_weight = wm_weight;
        m.clock.cycle_length_ms = cycle_ms;
        for im in &mut m.initial_mm {
            for a in &mut im.ages_ms {
                *a = (*a).max(cycle_ms);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.write(&path).unwrap();
        let back = Model::load(&path).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.to_json(), m.to_json());
    }
}
