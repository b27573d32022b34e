mod common;

use common::{config, model};
use masfuzz_core::campaign::Pipeline;
use masfuzz_core::executor::{DriverExecutor, LibFuzzerExecutor};
use masfuzz_core::oracle::stub::StubAnalysisOracle;
use masfuzz_core::synth::{ClangCompiler, CompilerConfig, DriverCompiler, FuzzDriver};
use masfuzz_core::triage::{classify, dedup, to_record, Classification, SanitizerKind};

const MISUSE_DRIVER: &str = r#"#include <stddef.h>
#include <stdint.h>
#include "ares.h"

int LLVMFuzzerTestOneInput(const uint8_t *data, size_t size)
{
    ares_channel ch = NULL;
    struct ares_options opts = {0};
    if (size > 0 && data[0] == 'N') {
        ares_init_options(NULL, &opts, 0);
        return 0;
    }
    if (ares_init_options(&ch, &opts, 0) == 0)
        ares_destroy(ch);
    return 0;
}
"#;

#[test]
fn null_argument_against_documented_precondition_is_misuse() {
    let dir = tempfile::tempdir().unwrap();
    let m = model("minires");
    let mut d = FuzzDriver::new("m000", "ares_init_options", MISUSE_DRIVER.into(), Vec::new());
    let out = ClangCompiler::new(CompilerConfig::default(), dir.path()).compile(&d, &m);
    assert!(out.ok, "{}", out.diagnostics);
    d.transition(masfuzz_core::synth::DriverState::Compiled).unwrap();
    let corpus = dir.path().join("corpus/m000");
    std::fs::create_dir_all(&corpus).unwrap();
    std::fs::write(corpus.join("seed"), b"N").unwrap();

    let mut ex = LibFuzzerExecutor::new(Default::default(), dir.path(), &m.root, 1);
    let r = ex.execute(&d, 20.0).unwrap();
    assert_eq!(r.crashes.len(), 1);
    let rec = to_record(&r.crashes[0], &m);
    assert_eq!(rec.sanitizer_kind, SanitizerKind::AddrViolation);
    assert_eq!(rec.stack[0].symbol, "ares_init_options");
    assert_eq!(rec.stack[0].file.as_deref(), Some("src/ares.c"));
    let verdict = classify(&rec, &d, &m, &StubAnalysisOracle).unwrap();
    assert_eq!(verdict.classification, Classification::ApiMisuse, "{}", verdict.rationale);
    assert!(verdict.rationale.contains("ares_init_options"), "{}", verdict.rationale);
    assert!(classify(&verdict, &d, &m, &StubAnalysisOracle).is_err());
}

#[test]
fn planted_overflows_are_two_library_bugs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("minibuf", dir.path());
    cfg.scheduler.total_budget_secs = 120.0;
    cfg.rng_seed = 2;
    let p = Pipeline::from_config(cfg).unwrap();
    let report = p.run(false).unwrap();
    let book = p.load_crashes().unwrap();
    let bugs: Vec<_> = book.records.values().filter(|r| r.classification == Classification::LibraryBug).collect();
    assert_eq!(bugs.len(), 2, "{:#?}", book.records.values().map(|r| (&r.summary, &r.stack)).collect::<Vec<_>>());
    let tops: std::collections::BTreeSet<&str> = bugs.iter().map(|r| r.stack[0].symbol.as_str()).collect();
    assert_eq!(tops, ["mb_checksum", "mb_to_string"].into_iter().collect());
    for r in &bugs {
        assert!(r.summary.contains("heap-buffer-overflow"), "{}", r.summary);
        let art = dir.path().join("crashes").join(&r.dedup_key);
        assert_eq!(std::fs::read(art.join("input.bin")).unwrap(), r.input);
        assert!(art.join("report.txt").is_file() && art.join("triage.json").is_file());
    }
    assert_eq!(report.triage.library_bugs, 2);
    assert_eq!(report.triage.unique_crashes, book.records.len());
}

#[test]
fn same_stack_collapses_into_alternates() {
    let m = model("minibuf");
    let report = "==1==ERROR: AddressSanitizer: heap-buffer-overflow on address 0x602000000015 at pc 0x1 bp 0x2 sp 0x3\n\
READ of size 1 at 0x602000000015 thread T0\n\
    #0 0x55 in mb_checksum src/minibuf.c:30:9\n\
    #1 0x56 in LLVMFuzzerTestOneInput drivers/d000_mb_checksum.c:20:5\n";
    let raw = |driver: &str, input: &[u8]| masfuzz_core::triage::RawCrash {
        driver_id: driver.into(),
        input: input.to_vec(),
        report: report.into(),
    };
    let out = dedup([raw("d000", b"BUF3a"), raw("d001", b"BUF3bb"), raw("d000", b"BUF3a")], &m);
    assert_eq!(out.len(), 1);
    let r = out.values().next().unwrap();
    assert_eq!(r.driver_id, "d000");
    assert_eq!(r.alternates.len(), 1);
    assert_eq!(r.alternates[0].driver_id, "d001");
    assert_eq!(r.summary, "heap-buffer-overflow on address 0x602000000015");
}
