mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use common::{config, model, FIXTURES};
use masfuzz_core::metainfo::LibraryModel;
use masfuzz_core::oracle::stub::StubGenerationOracle;
use masfuzz_core::oracle::{GenerationOracle, GenerationRequest, OracleError, RepairRequest};
use masfuzz_core::sequence::{build_compat_graph, mine_mp_sequences, mine_usage_sequences, MinerConfig, SequencePool};
use masfuzz_core::synth::{
    build_seed_corpus, compile_with_repair, generate_driver, plan_calls, select_sequences, target_order,
    ClangCompiler, CompilerConfig, DriverState, FuzzDriver, ScriptedCompiler,
};

fn pool_for(m: &LibraryModel) -> SequencePool {
    let mut pool = SequencePool::new();
    pool.extend(mine_usage_sequences(m));
    pool.extend(mine_mp_sequences(&build_compat_graph(m), &MinerConfig::default()));
    pool
}

fn driver_for(m: &LibraryModel, pool: &mut SequencePool, target: &str, id: &str, oracle: &dyn GenerationOracle) -> FuzzDriver {
    let bundle = select_sequences(target, pool, m);
    let plan = plan_calls(&bundle);
    let g = generate_driver(id, Some(&bundle), &plan, target, m, oracle, None, true);
    assert_eq!(g.rejection, None, "{target}");
    g.driver
}

/// Stub generation with every library include dropped, so the first compile
/// fails on undeclared functions.
struct DropsIncludes {
    repairs: AtomicUsize,
}

impl GenerationOracle for DropsIncludes {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<String, OracleError> {
        let src = StubGenerationOracle.generate(req)?;
        Ok(src.lines().filter(|l| !(l.starts_with("#include \"") || l.starts_with("#include <mini") || l.contains(".h\""))).collect::<Vec<_>>().join("\n"))
    }

    fn repair(&self, req: &RepairRequest<'_>) -> Result<String, OracleError> {
        self.repairs.fetch_add(1, Ordering::SeqCst);
        StubGenerationOracle.repair(req)
    }
}

#[test]
fn missing_include_is_repaired_under_clang() {
    let dir = tempfile::tempdir().unwrap();
    let m = model("miniplist");
    let mut pool = pool_for(&m);
    let oracle = DropsIncludes { repairs: AtomicUsize::new(0) };
    let d = driver_for(&m, &mut pool, "plist_to_openstep", "d000", &oracle);
    assert!(!d.source.contains("miniplist.h"));
    let clang = ClangCompiler::new(CompilerConfig::default(), dir.path());
    let first = masfuzz_core::synth::DriverCompiler::compile(&clang, &d, &m);
    assert!(!first.ok);
    assert!(first.diagnostics.contains("implicit declaration of function"), "{}", first.diagnostics);

    let (fixed, outcome) = compile_with_repair(d, &clang, &m, &oracle);
    assert_eq!(fixed.state, DriverState::Compiled, "{:?}", fixed.note);
    assert_eq!(fixed.repair_attempts, 1);
    assert_eq!(oracle.repairs.load(Ordering::SeqCst), 1);
    assert!(fixed.source.contains("miniplist.h"));
    assert!(outcome.unwrap().binary.unwrap().is_file());
}

#[test]
fn stub_drivers_compile_for_every_fixture_api() {
    let dir = tempfile::tempdir().unwrap();
    for fx in FIXTURES {
        let cfg = config(fx, dir.path());
        let m = model(fx);
        let mut pool = pool_for(&m);
        let clang = ClangCompiler::new(cfg.compiler.clone(), &dir.path().join(fx));
        for (i, target) in target_order(&m, &pool).into_iter().enumerate() {
            let d = driver_for(&m, &mut pool, &target, &format!("d{i:03}"), &StubGenerationOracle);
            let (d, _) = compile_with_repair(d, &clang, &m, &StubGenerationOracle);
            assert_eq!(d.state, DriverState::Compiled, "{fx}/{target}: {:?}\n{}", d.note, d.source);
            assert_eq!(d.repair_attempts, 0, "{fx}/{target}");
            assert!(d.effective_sequence(&m.api_names()).contains(&target));
        }
    }
}

#[test]
fn failing_compiles_stop_after_three_repairs() {
    let m = model("minijson");
    let mut pool = pool_for(&m);
    let d = driver_for(&m, &mut pool, "mj_print", "d000", &StubGenerationOracle);
    let scripted = ScriptedCompiler::new(vec![false]);
    let (d, outcome) = compile_with_repair(d, &scripted, &m, &StubGenerationOracle);
    assert_eq!(d.state, DriverState::Retired);
    assert_eq!(d.repair_attempts, 3);
    assert_eq!(scripted.calls(), 4);
    assert!(outcome.is_none());
    assert!(d.note.unwrap().contains("after 3 repair attempts"));

    let d = driver_for(&m, &mut pool, "mj_get_number", "d001", &StubGenerationOracle);
    let scripted = ScriptedCompiler::new(vec![false, false, true]);
    let (d, _) = compile_with_repair(d, &scripted, &m, &StubGenerationOracle);
    assert_eq!((d.state, d.repair_attempts), (DriverState::Compiled, 2));
}

#[test]
fn seeds_come_from_docs() {
    let m = model("minibuf");
    let mut pool = pool_for(&m);
    let d = driver_for(&m, &mut pool, "mb_to_string", "d000", &StubGenerationOracle);
    let corpus = build_seed_corpus(&d, &m, &StubGenerationOracle);
    let data: Vec<&[u8]> = corpus.seeds.iter().map(|s| s.data.as_slice()).collect();
    assert!(data.contains(&&b"BUF1hello"[..]), "{data:?}");
    assert!(data.contains(&&b"BUF2text"[..]));
    let mut digests: Vec<_> = corpus.seeds.iter().map(|s| s.digest()).collect();
    digests.sort();
    digests.dedup();
    assert_eq!(digests.len(), corpus.seeds.len());

    let dir = tempfile::tempdir().unwrap();
    corpus.write_to(dir.path()).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), corpus.seeds.len());
}
