mod common;

use common::config;
use masfuzz_core::campaign::Pipeline;
use masfuzz_core::executor::sim::CurvePoint;
use masfuzz_core::executor::{DriverExecutor, ExecutorError, LibFuzzerExecutor, SimDriver, SimExecutor, SimSpec};
use masfuzz_core::synth::{DriverState, FuzzDriver};

fn generated(fx: &str, dir: &std::path::Path) -> (Pipeline, Vec<FuzzDriver>) {
    let p = Pipeline::from_config(config(fx, dir)).unwrap();
    p.mine().unwrap();
    let d = p.generate().unwrap();
    assert!(d.drivers.iter().all(|x| x.state == DriverState::Compiled));
    (p, d.drivers)
}

#[test]
fn real_run_respects_budget_and_reports_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let (p, drivers) = generated("minimath", dir.path());
    let mul = drivers.iter().find(|d| d.target_api == "mul").unwrap();
    let model = p.load_model().unwrap();
    let mut ex = LibFuzzerExecutor::new(p.cfg.executor.clone(), dir.path(), &model.root, 3);
    let grace = ex.grace_secs();

    let r = ex.execute(mul, 10.0).unwrap();
    assert!(r.t_actual >= 10.0 && r.t_actual <= 10.0 + grace, "t_actual {}", r.t_actual);
    assert!(r.executions > 0);
    assert!(r.crashes.is_empty());
    let cov = r.coverage.unwrap();
    assert!(cov.path.unwrap().is_file());
    assert!(!cov.branches.is_empty());
    assert!(cov.branches.iter().all(|b| b.starts_with("src/minimath.c:")), "{:?}", cov.branches);

    assert_eq!(ex.execute(mul, 0.0), Err(ExecutorError::InvalidBudget(0.0)));
    let mut missing = mul.clone();
    missing.id = "nope".into();
    assert!(matches!(ex.execute(&missing, 1.0), Err(ExecutorError::Launch { .. })));
}

#[test]
fn planted_null_deref_yields_one_crash_with_input() {
    let dir = tempfile::tempdir().unwrap();
    let (p, drivers) = generated("miniplist", dir.path());
    let model = p.load_model().unwrap();
    let public = model.api_names();
    let chain = common::s(&["plist_from_xml", "plist_copy", "plist_to_openstep"]);
    let d = drivers
        .iter()
        .find(|d| masfuzz_core::synth::is_subsequence(&chain, &d.effective_sequence(&public)))
        .expect("a driver realizes the planted chain");
    let mut ex = LibFuzzerExecutor::new(p.cfg.executor.clone(), dir.path(), &model.root, 1);
    let r = ex.execute(d, 60.0).unwrap();
    assert_eq!(r.crashes.len(), 1, "{:?}", r.crashes);
    let c = &r.crashes[0];
    assert!(c.input.starts_with(b"MPL!"), "{:?}", c.input);
    assert!(c.report.contains("AddressSanitizer"));
    assert!(c.report.contains("node_kind"), "{}", c.report);
    assert!(r.t_actual < 60.0);
}

#[test]
fn simulator_is_deterministic_and_monotone() {
    let mut spec = SimSpec::procedural(9);
    spec.drivers.insert(
        "fixed".into(),
        SimDriver {
            curve: vec![
                CurvePoint { at: 2.0, branches: vec!["a.c:1:0".into(), "a.c:1:1".into()] },
                CurvePoint { at: 8.0, branches: vec!["a.c:1:2".into()] },
            ],
            crashes: Vec::new(),
        },
    );
    let d = FuzzDriver::new("fixed", "f", String::new(), Vec::new());
    let run = |spec: &SimSpec| {
        let mut ex = SimExecutor::new(spec.clone(), None);
        (0..4).map(|_| ex.execute(&d, 3.0).unwrap()).collect::<Vec<_>>()
    };
    let a = run(&spec);
    assert_eq!(a, run(&spec));
    let sizes: Vec<usize> = a.iter().map(|r| r.branches().len()).collect();
    assert_eq!(sizes, vec![2, 0, 1, 0]);
    assert!(a.iter().all(|r| r.t_actual == 3.0));
}

#[test]
fn procedural_curves_follow_the_driver_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("minixlsx", dir.path());
    let spec = dir.path().join("sim.json");
    std::fs::write(&spec, r#"{"schema":"masfuzz.simspec/1","rng_seed":4}"#).unwrap();
    cfg.simulate = Some(spec);
    let p = Pipeline::from_config(cfg).unwrap();
    let (model, _) = p.mine().unwrap();
    let drivers = p.generate().unwrap().drivers;
    let mut ex = SimExecutor::new(SimSpec::procedural(4), Some(model.clone()));
    let mut total = std::collections::BTreeSet::new();
    for d in drivers.iter().filter(|d| d.state == DriverState::Compiled) {
        let first = ex.execute(d, 30.0).unwrap().branches();
        let again = ex.execute(d, 30.0).unwrap().branches();
        assert!(first.is_disjoint(&again));
        for b in first.iter().chain(&again) {
            let (file, line) = masfuzz_core::coverage::split_branch_id(b).unwrap();
            assert!(model.apis.iter().any(|a| a.body_span.as_ref().is_some_and(|s| s.contains(file, line))));
        }
        total.extend(first);
    }
    assert!(!total.is_empty());
}
