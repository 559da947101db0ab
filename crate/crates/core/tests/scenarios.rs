use std::path::Path;

use moth_fed::simnet::scenario::{load_suite, run_scenario, run_suite, Backend, Scenario};

fn suite() -> Vec<Scenario> {
    load_suite(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")).expect("suite loads")
}

#[test]
fn every_scenario_passes_in_memory() {
    for s in suite() {
        let out = run_scenario(&s, &Backend::Memory).unwrap_or_else(|e| panic!("{e}"));
        assert!(out.checks_passed > 0, "{} has no checks", s.name);
    }
}

#[test]
fn every_scenario_passes_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let outs = run_suite(&suite(), &Backend::File(dir.path().to_path_buf())).unwrap_or_else(|e| panic!("{e}"));
    assert_eq!(outs.len(), suite().len());
}

#[test]
fn suite_has_expected_scenarios() {
    let names: Vec<String> = suite().into_iter().map(|s| s.name).collect();
    for want in ["mention", "follow", "delete", "faults", "restart", "visibility"] {
        assert!(names.iter().any(|n| n == want), "missing {want}");
    }
}

#[test]
fn broken_expectation_is_reported_with_step() {
    let s = Scenario::from_json(
        r#"{"name":"bad","seed":1,"steps":[
            {"op":"spawn","domain":"a.test"},
            {"op":"create_user","domain":"a.test","name":"alice"},
            {"op":"expect","check":{"kind":"home_count","domain":"a.test","user":"alice","count":3}}
        ]}"#,
    )
    .unwrap();
    let err = run_scenario(&s, &Backend::Memory).unwrap_err().to_string();
    assert!(err.contains("step 2"), "{err}");
}

#[test]
fn unknown_op_is_a_script_error() {
    assert!(Scenario::from_json(r#"{"name":"x","steps":[{"op":"explode"}]}"#).is_err());
}
