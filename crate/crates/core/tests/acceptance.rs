//! Acceptance criteria 1-8. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.

mod common;

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use xapp_store_core::conformance::{
    codes, resolve_evidence, run_acceptance, AcceptancePlan, CheckSeverity, Evidence, Verdict,
};
use xapp_store_core::manifest::{assess_document, canonicalize, parse_manifest, RicProfile};
use xapp_store_core::mtype::Mtype;
use xapp_store_core::pseudo_ric::{DeployRequest, PseudoRic};
use xapp_store_core::registry::persist::{AUDIT_LOG, RECORDS_DIR};
use xapp_store_core::registry::{
    LifecycleEvent, LifecycleState, PersistError, Registry, RegistryError,
};
use xapp_store_core::router::{EndpointId, RmrMessage};
use xapp_store_core::scenario::{EventKind, Scenario};
use xapp_store_core::store::{default_acceptance_scenario, Store, StoreConfig};

const MANIFEST_CASES: u32 = 200;
const ROUTER_CASES: u32 = 1000;
const GATE_CASES: u32 = 500;
const KPM_DURATION_MS: u64 = 20_000;
const KPM_PERIOD_MS: u64 = 2_000;
const KPM_EXPECTED: u64 = 10;
const KPM_TOLERANCE: u64 = 1;
const SCENARIO_TICKS: usize = 60;
const FUZZ_MESSAGES: u64 = 1000;

type Outcome = Result<String, String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion_1() -> Outcome {
    let round_trips = Cell::new(0);
    runner(MANIFEST_CASES)
        .run(&valid_manifest_doc(), |doc| {
            let m = parse_manifest(doc.to_string().as_bytes())
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let canon = canonicalize(&m);
            let again = parse_manifest(&canon).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&again, &m);
            prop_assert_eq!(canonicalize(&again), canon);
            round_trips.set(round_trips.get() + 1);
            Ok(())
        })
        .map_err(|e| format!("round trip: {e}"))?;

    let named = Cell::new(0);
    runner(MANIFEST_CASES)
        .run(&(valid_manifest_doc(), corruption()), |(doc, c)| {
            let (bad, path) = corrupt(&doc, c);
            let (_, result) = assess_document(bad.to_string().as_bytes(), &RicProfile::default());
            prop_assert!(
                result.errors().any(|v| path_names(&v.path, &path)),
                "{:?} at `{}` not reported: {:?}",
                c,
                path,
                result.violations
            );
            named.set(named.get() + 1);
            Ok(())
        })
        .map_err(|e| format!("corruption: {e}"))?;
    ensure(
        round_trips.get() == MANIFEST_CASES && named.get() == MANIFEST_CASES,
        || {
            format!(
                "ran {} round trips and {} corruptions",
                round_trips.get(),
                named.get()
            )
        },
    )?;
    Ok(format!(
        "{} manifests round-trip, {} corruptions named",
        round_trips.get(),
        named.get()
    ))
}

fn criterion_2() -> Outcome {
    let cases = Cell::new(0);
    let decisions = Cell::new(0);
    runner(ROUTER_CASES)
        .run(&prop::collection::vec(router_op(), 1..60), |ops| {
            let n = check_router_against_scan(&ops).map_err(TestCaseError::fail)?;
            cases.set(cases.get() + 1);
            decisions.set(decisions.get() + n);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    ensure(cases.get() == ROUTER_CASES, || {
        format!("ran {} cases", cases.get())
    })?;
    Ok(format!(
        "{} interleavings, {} routing decisions match the scan",
        cases.get(),
        decisions.get()
    ))
}

fn criterion_3() -> Outcome {
    let cases = Cell::new(0);
    let reached = Cell::new(0);
    runner(GATE_CASES)
        .run(&prop::collection::vec(registry_op(), 1..80), |ops| {
            if check_gate_sequence(&ops)? {
                reached.set(reached.get() + 1);
            }
            cases.set(cases.get() + 1);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    ensure(cases.get() == GATE_CASES, || {
        format!("ran {} cases", cases.get())
    })?;
    ensure(reached.get() > 0, || {
        "no sequence reached AVAILABLE or DEPLOYED".into()
    })?;

    let mut pairs = 0;
    for s in LifecycleState::ALL {
        for e in LifecycleEvent::ALL {
            let (mut reg, id) = record_in(s);
            if s == LifecycleState::Testing {
                let r = report(&reg, &id, true);
                reg.attach_report(&id, r).unwrap();
            }
            let got = reg.transition(&id, e);
            let want =
                oracle_next(s, e).ok_or(RegistryError::InvalidTransition { from: s, event: e });
            ensure(got == want, || {
                format!("{s} --{e}-->: got {got:?}, table says {want:?}")
            })?;
            pairs += 1;
        }
    }
    Ok(format!(
        "{} sequences keep the gate ({} reach AVAILABLE/DEPLOYED), {pairs} state/event pairs match the table",
        cases.get(),
        reached.get()
    ))
}

fn criterion_4() -> Outcome {
    let pkg = package("kpm-monitor");
    let plan = AcceptancePlan::default_for(&pkg.behavior_script, default_acceptance_scenario());
    ensure(plan.duration_ms == KPM_DURATION_MS, || {
        format!("plan runs {} ms", plan.duration_ms)
    })?;
    let periods: Vec<u64> = pkg
        .behavior_script
        .on_start
        .iter()
        .map(|s| s.report_period_ms)
        .collect();
    ensure(periods == [KPM_PERIOD_MS], || {
        format!("package periods {periods:?}")
    })?;

    let mut store = Store::in_memory(StoreConfig::default());
    let id = store
        .submit_bytes(&pkg.pack())
        .map_err(|e| e.to_string())?
        .id;
    let state = store.onboard(&id).map_err(|e| e.to_string())?;
    ensure(state == LifecycleState::Available, || {
        format!("ended {state}")
    })?;
    let report = store.latest_report(&id).map_err(|e| e.to_string())?.clone();
    ensure(report.verdict == Verdict::Pass, || {
        format!("verdict {:?}: {:?}", report.verdict, report.checks)
    })?;

    // Count again from a reproduction's router log, keyed by the payload's gNB.
    let run = run_acceptance(
        &id,
        &report.report_id,
        &pkg.manifest(),
        &pkg.behavior_script,
        &plan,
    )
    .map_err(|e| e.to_string())?;
    let ep = run.endpoint.clone().ok_or("not deployed")?;
    let mut per_gnb: BTreeMap<u64, u64> = BTreeMap::new();
    for r in run.ric.router().log() {
        if r.message.mtype == Mtype::RIC_INDICATION && r.delivered_to.contains(&ep) {
            let body: serde_json::Value =
                serde_json::from_slice(&r.message.payload).map_err(|e| e.to_string())?;
            *per_gnb
                .entry(body["gnb_id"].as_u64().ok_or("payload without gnb_id")?)
                .or_default() += 1;
        }
    }
    let gnbs = default_acceptance_scenario().gnbs.len();
    ensure(per_gnb.len() == gnbs, || {
        format!("indications from {per_gnb:?}, expected {gnbs} gNBs")
    })?;
    for (g, n) in &per_gnb {
        ensure(n.abs_diff(KPM_EXPECTED) <= KPM_TOLERANCE, || {
            format!("gNB {g}: {n} indications")
        })?;
    }
    let filed: Vec<u64> = report
        .checks
        .iter()
        .filter(|c| c.code == codes::INDICATIONS_RECEIVED)
        .map(|c| {
            c.evidence
                .iter()
                .filter(|e| matches!(e, Evidence::Router { .. }))
                .count() as u64
        })
        .collect();
    ensure(
        filed == per_gnb.values().copied().collect::<Vec<_>>(),
        || format!("report counts {filed:?} disagree with router log {per_gnb:?}"),
    )?;
    Ok(format!(
        "AVAILABLE with PASS, indications per gNB {per_gnb:?}"
    ))
}

fn criterion_5() -> Outcome {
    let mut seen = Vec::new();
    for (dir, code, end) in [
        (
            "undeclared-tx",
            codes::UNDECLARED_TX,
            LifecycleState::TestFailed,
        ),
        (
            "missing-author",
            "MISSING_FIELD",
            LifecycleState::ValidationFailed,
        ),
        (
            "health-death",
            codes::HEALTH_DEAD,
            LifecycleState::TestFailed,
        ),
    ] {
        let pkg = package(dir);
        let m = pkg.manifest();
        let mut store = Store::in_memory(StoreConfig::default());
        let id = store.submit(pkg.clone()).map_err(|e| e.to_string())?.id;
        let state = store.onboard(&id).map_err(|e| e.to_string())?;
        ensure(state == end, || format!("{dir}: ended {state}"))?;
        let report = store.latest_report(&id).map_err(|e| e.to_string())?.clone();
        ensure(report.verdict == Verdict::Fail, || {
            format!("{dir}: verdict PASS")
        })?;
        let check = report
            .find(code)
            .ok_or_else(|| format!("{dir}: no {code}"))?;
        ensure(
            check.severity == CheckSeverity::Error && !check.evidence.is_empty(),
            || format!("{dir}: {check:?}"),
        )?;
        if end == LifecycleState::TestFailed {
            // the store keeps only the report; rebuild the run to resolve against
            let plan =
                AcceptancePlan::default_for(&pkg.behavior_script, default_acceptance_scenario());
            let run = run_acceptance(&id, &report.report_id, &m, &pkg.behavior_script, &plan)
                .map_err(|e| e.to_string())?;
            let rerun = run.report.find(code).ok_or("code vanished on rerun")?;
            ensure(rerun.evidence == check.evidence, || {
                format!("{dir}: evidence differs on rerun")
            })?;
            resolve_evidence(&run.report, Some(&run.ric), &m)?;
        } else {
            resolve_evidence(&report, None, &m)?;
        }
        seen.push(format!("{dir}:{code}"));
    }
    Ok(format!(
        "FAIL reports with resolvable evidence: {}",
        seen.join(", ")
    ))
}

fn rsrp(tx_dbm: f64, gx: f64, gy: f64, x: f64, y: f64) -> f64 {
    let d = ((gx - x).powi(2) + (gy - y).powi(2)).sqrt().max(1.0);
    tx_dbm - (40.0 + 30.0 * d.log10())
}

fn criterion_6() -> Outcome {
    let run = || -> Result<Scenario, String> {
        let mut s = Scenario::new(scenario("two-gnb-crossing.json")).map_err(|e| e.to_string())?;
        for _ in 0..SCENARIO_TICKS {
            s.tick(&[]);
        }
        Ok(s)
    };
    let (a, b) = (run()?, run()?);
    ensure(
        a.export_event_log().as_bytes() == b.export_event_log().as_bytes(),
        || "event logs differ".into(),
    )?;

    let handovers: Vec<_> = a
        .event_log()
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Handover { .. }))
        .collect();
    ensure(handovers.len() == 1, || {
        format!("{} handovers", handovers.len())
    })?;

    let mut first = None;
    for k in 1..=SCENARIO_TICKS as u64 {
        let x = 150.0 + 10.0 * k as f64;
        if rsrp(30.0, 800.0, 250.0, x, 260.0) > rsrp(30.0, 200.0, 250.0, x, 260.0) + 3.0 {
            first = Some(k * 1000);
            break;
        }
    }
    let at = handovers[0].sim_time_ms;
    ensure(Some(at) == first, || {
        format!("handover at {at} ms, brute force says {first:?}")
    })?;
    Ok(format!("identical logs, single handover at {at} ms"))
}

fn criterion_7() -> Outcome {
    let mut ric = PseudoRic::new(Some(
        Scenario::new(scenario("two-gnb-crossing.json")).map_err(|e| e.to_string())?,
    ));
    let pkg = package("kpm-monitor");
    ric.deploy(DeployRequest {
        record_id: pkg.record_id(),
        manifest: pkg.manifest(),
        script: pkg.behavior_script.clone(),
    })
    .map_err(|e| e.to_string())?;
    ric.run_for(5_000);
    let before = ric.scenario().ok_or("no scenario")?.state_digest();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let known = [100u32, 101, 12010, 12011, 12050];
    for i in 0..FUZZ_MESSAGES {
        let mtype = if rng.gen_bool(0.5) {
            Mtype(known[rng.gen_range(0..known.len())])
        } else {
            Mtype(rng.gen_range(0..(1u32 << 31)))
        };
        let source = EndpointId::new(format!("fuzz-{}", rng.gen_range(0..8)));
        let payload: Vec<u8> = (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect();
        ric.router_mut()
            .route(RmrMessage::new(mtype, source, payload, i));
    }
    let after = ric.scenario().ok_or("no scenario")?.state_digest();
    ensure(before == after, || "radio/mobility state changed".into())?;
    Ok(format!(
        "{FUZZ_MESSAGES} messages routed, state digest unchanged"
    ))
}

fn criterion_8() -> Outcome {
    let io = |e: PersistError| e.to_string();
    let base = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut store = Store::open(base.path(), StoreConfig::default()).map_err(|e| e.to_string())?;
    let ok = store
        .submit(package("kpm-monitor"))
        .map_err(|e| e.to_string())?
        .id;
    store.onboard(&ok).map_err(|e| e.to_string())?;
    let bad = store
        .submit(package("undeclared-tx"))
        .map_err(|e| e.to_string())?
        .id;
    store.onboard(&bad).map_err(|e| e.to_string())?;
    drop(store);
    let mut reg = Registry::load(base.path()).map_err(io)?;
    let committed = reg.clone();

    // work that the crash interrupts
    reg.transition(&ok, LifecycleEvent::DeployRequested)
        .map_err(|e| e.to_string())?;
    reg.submit(package("health-death"))
        .map_err(|e| e.to_string())?;
    let total = reg.pending_writes(base.path());
    for n in 0..total {
        let d = tempfile::tempdir().map_err(|e| e.to_string())?;
        copy_tree(base.path(), d.path());
        reg.persist_until(d.path(), n).map_err(io)?;
        let loaded = Registry::load(d.path()).map_err(io)?;
        ensure(loaded == committed, || {
            format!("crash after write {n} of {total} lost committed state")
        })?;
    }

    let full = tempfile::tempdir().map_err(|e| e.to_string())?;
    copy_tree(base.path(), full.path());
    reg.clone().persist(full.path()).map_err(io)?;
    let old_len = fs::read(base.path().join(AUDIT_LOG))
        .map_err(|e| e.to_string())?
        .len();
    let whole = fs::read(full.path().join(AUDIT_LOG)).map_err(|e| e.to_string())?;
    let tail = &whole[old_len..];
    let mut torn = 0;
    for k in 1..tail.len() {
        if tail[k - 1] == b'\n' {
            continue;
        }
        let d = tempfile::tempdir().map_err(|e| e.to_string())?;
        copy_tree(base.path(), d.path());
        reg.persist_until(d.path(), total - 1).map_err(io)?;
        let mut audit = fs::read(d.path().join(AUDIT_LOG)).map_err(|e| e.to_string())?;
        audit.extend_from_slice(&tail[..k]);
        fs::write(d.path().join(AUDIT_LOG), &audit).map_err(|e| e.to_string())?;
        let strict = Registry::load(d.path());
        ensure(
            matches!(strict, Err(PersistError::CorruptStore { .. })),
            || format!("audit torn at byte {k} was not reported as CorruptStore"),
        )?;
        let (recovered, _) = Registry::recover(d.path()).map_err(io)?;
        for rec in committed.records() {
            ensure(recovered.get(&rec.id).is_ok(), || {
                format!("recovery lost {}", rec.id)
            })?;
        }
        ensure(recovered.audit().starts_with(committed.audit()), || {
            "recovery rewrote history".into()
        })?;
        torn += 1;
    }

    let path = base.path().join(RECORDS_DIR).join(format!("{ok}.json"));
    let raw = fs::read(&path).map_err(|e| e.to_string())?;
    fs::write(&path, &raw[..raw.len() / 2]).map_err(|e| e.to_string())?;
    ensure(
        matches!(
            Registry::load(base.path()),
            Err(PersistError::CorruptStore { .. })
        ),
        || "truncated record file was not reported as CorruptStore".into(),
    )?;
    Ok(format!(
        "{total} crash points reload committed state, {torn} torn tails detected"
    ))
}

type Criterion = (u8, &'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (
            1,
            "manifest properties",
            Duration::from_secs(5),
            criterion_1,
        ),
        (
            2,
            "router oracle equivalence",
            Duration::from_secs(10),
            criterion_2,
        ),
        (3, "lifecycle gate", Duration::from_secs(5), criterion_3),
        (
            4,
            "kpm monitor end to end",
            Duration::from_secs(5),
            criterion_4,
        ),
        (5, "failure reporting", Duration::from_secs(5), criterion_5),
        (
            6,
            "scenario determinism",
            Duration::from_secs(5),
            criterion_6,
        ),
        (
            7,
            "monitor-only invariant",
            Duration::from_secs(5),
            criterion_7,
        ),
        (
            8,
            "persistence crash safety",
            Duration::from_secs(5),
            criterion_8,
        ),
    ];
    let mut failed = 0;
    for (n, name, limit, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if took <= limit {
                Ok(msg)
            } else {
                Err(format!("{msg}; took {took:.2?}, limit {limit:?}"))
            }
        });
        match outcome {
            Ok(msg) => {
                println!("PASS criterion {n} ({name}) in {took:.2?} [limit {limit:?}]: {msg}")
            }
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}) in {took:.2?} [limit {limit:?}]: {msg}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
