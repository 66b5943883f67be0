#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use serde_json::{json, Value};

use proptest::test_runner::TestCaseError;
use xapp_store_core::archive::PackageArchive;
use xapp_store_core::conformance::{Check, CheckSeverity, ConformanceReport};
use xapp_store_core::mtype::Mtype;
use xapp_store_core::registry::{
    AuditEvent, LifecycleEvent, LifecycleEvent as E, LifecycleState, LifecycleState as S, Registry,
    RegistryError,
};
use xapp_store_core::router::{EndpointId, RmrMessage, RouteTable};
use xapp_store_core::scenario::ScenarioConfig;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn package(name: &str) -> PackageArchive {
    PackageArchive::from_dir(&repo_root().join("packages").join(name)).unwrap()
}

pub fn scenario(name: &str) -> ScenarioConfig {
    let raw = std::fs::read(repo_root().join("scenarios").join(name)).unwrap();
    ScenarioConfig::from_json(&raw).unwrap()
}

pub fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dst = to.join(e.file_name());
        if e.path().is_dir() {
            copy_tree(&e.path(), &dst);
        } else {
            std::fs::copy(e.path(), dst).unwrap();
        }
    }
}

// ---------------------------------------------------------------- manifests

fn semver_str() -> impl Strategy<Value = String> {
    (
        0u32..20,
        0u32..20,
        0u32..60,
        prop::option::weighted(
            0.2,
            prop::sample::select(vec!["alpha", "beta.2", "rc.1", "x-7"]),
        ),
    )
        .prop_map(|(a, b, c, pre)| match pre {
            Some(p) => format!("{a}.{b}.{c}-{p}"),
            None => format!("{a}.{b}.{c}"),
        })
}

fn range_value() -> impl Strategy<Value = Value> {
    (0u32..5, 0u32..10, 1u32..5).prop_map(|(maj, min, span)| {
        json!({"min": format!("{maj}.{min}.0"), "max": format!("{}.0.0", maj + span)})
    })
}

/// Documents that satisfy every manifest rule against RIC version 1.4.0.
pub fn valid_manifest_doc() -> impl Strategy<Value = Value> {
    let identity = (
        "[a-z][a-z0-9-]{0,20}[a-z0-9]",
        semver_str(),
        "[A-Za-z][A-Za-z .]{0,15}",
        prop::sample::select(vec![
            "MIT",
            "Apache-2.0",
            "BSD-3-Clause",
            "GPL-2.0-only",
            "MIT OR Apache-2.0",
        ]),
        prop::option::of("[a-z]{1,8}@[a-z]{1,8}\\.(org|net)"),
    );
    let compat = (0u32..=4, 2u32..4)
        .prop_map(|(lo, hi)| json!({"min": format!("1.{lo}.0"), "max": format!("{hi}.0.0")}));
    let body = (
        compat,
        (1i64..4000, 1i64..8192),
        prop::collection::btree_set(0i64..(1 << 31), 0..6),
        prop::collection::btree_set(0i64..(1 << 31), 0..6),
        prop::option::of(prop::collection::btree_set(
            prop::sample::select(vec!["KPM", "RC"]),
            0..=2,
        )),
        prop::option::of((prop::option::of(1i64..10_000), prop::option::of(1i64..10))),
        prop::option::of(prop::collection::vec(
            ("[a-z][a-z0-9]{0,8}", range_value()),
            0..3,
        )),
        prop::option::of(prop::option::of(any::<bool>())),
    );
    (identity, body).prop_map(
        |(
            (name, version, author, license, contact),
            (compat, (cpu, mem), rx, tx, sms, health, deps, security),
        )| {
            let mut doc = json!({
                "name": name,
                "version": version,
                "author": author,
                "license": license,
                "ric_compat": compat,
                "resources": {"cpu_millicores": cpu, "memory_mib": mem},
                "rx_mtypes": rx.into_iter().collect::<Vec<_>>(),
                "tx_mtypes": tx.into_iter().collect::<Vec<_>>(),
            });
            let o = doc.as_object_mut().unwrap();
            if let Some(c) = contact {
                o.insert("contact".into(), c.into());
            }
            if let Some(s) = sms {
                o.insert(
                    "service_models".into(),
                    s.into_iter().collect::<Vec<_>>().into(),
                );
            }
            if let Some((period, threshold)) = health {
                let mut h = serde_json::Map::new();
                if let Some(p) = period {
                    h.insert("liveness_period_ms".into(), p.into());
                }
                if let Some(t) = threshold {
                    h.insert("failure_threshold".into(), t.into());
                }
                o.insert("health".into(), Value::Object(h));
            }
            if let Some(deps) = deps {
                let list: Vec<Value> = deps
                    .into_iter()
                    .map(|(n, r)| json!({"name": n, "version": r}))
                    .collect();
                o.insert("dependencies".into(), list.into());
            }
            if let Some(sec) = security {
                let mut s = serde_json::Map::new();
                if let Some(b) = sec {
                    s.insert("allow_external_endpoints".into(), b.into());
                }
                o.insert("security".into(), Value::Object(s));
            }
            doc
        },
    )
}

/// A single-field corruption of a valid document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    Remove(&'static str),
    NameUppercase,
    NameEmpty,
    NameTooLong,
    AuthorBlank,
    LicenseGarbage,
    ContactNoAt,
    VersionTwoPart,
    VersionNotString,
    CompatInverted,
    CompatExcludesRic,
    CpuZero,
    MemoryNegative,
    RxNegative,
    TxTooLarge,
    RxNotArray,
    ServiceModelUnknown,
    HealthPeriodZero,
    HealthThresholdZero,
    DependencyBadName,
    SecurityNotBool,
    UnknownKey,
}

pub const REQUIRED: [&str; 8] = [
    "name",
    "version",
    "author",
    "license",
    "ric_compat",
    "resources",
    "rx_mtypes",
    "tx_mtypes",
];

pub fn corruption() -> impl Strategy<Value = Corruption> {
    use Corruption::*;
    let mut all: Vec<Corruption> = REQUIRED.iter().map(|k| Remove(k)).collect();
    all.extend([
        NameUppercase,
        NameEmpty,
        NameTooLong,
        AuthorBlank,
        LicenseGarbage,
        ContactNoAt,
        VersionTwoPart,
        VersionNotString,
        CompatInverted,
        CompatExcludesRic,
        CpuZero,
        MemoryNegative,
        RxNegative,
        TxTooLarge,
        RxNotArray,
        ServiceModelUnknown,
        HealthPeriodZero,
        HealthThresholdZero,
        DependencyBadName,
        SecurityNotBool,
        UnknownKey,
    ]);
    prop::sample::select(all)
}

/// Applies `c` and returns the corrupted document with the path it touched.
pub fn corrupt(doc: &Value, c: Corruption) -> (Value, String) {
    use Corruption::*;
    let mut d = doc.clone();
    let o = d.as_object_mut().unwrap();
    let path: String = match c {
        Remove(k) => {
            o.remove(k);
            k.into()
        }
        NameUppercase => {
            o.insert("name".into(), "Kpm_Monitor".into());
            "name".into()
        }
        NameEmpty => {
            o.insert("name".into(), "".into());
            "name".into()
        }
        NameTooLong => {
            o.insert("name".into(), "a".repeat(64).into());
            "name".into()
        }
        AuthorBlank => {
            o.insert("author".into(), "   ".into());
            "author".into()
        }
        LicenseGarbage => {
            o.insert("license".into(), "all rights reserved!".into());
            "license".into()
        }
        ContactNoAt => {
            o.insert("contact".into(), "nobody.example.org".into());
            "contact".into()
        }
        VersionTwoPart => {
            o.insert("version".into(), "1.2".into());
            "version".into()
        }
        VersionNotString => {
            o.insert("version".into(), json!(1));
            "version".into()
        }
        CompatInverted => {
            o.insert("ric_compat".into(), json!({"min": "1.5.0", "max": "1.5.0"}));
            "ric_compat".into()
        }
        CompatExcludesRic => {
            o.insert("ric_compat".into(), json!({"min": "2.0.0", "max": "3.0.0"}));
            "ric_compat".into()
        }
        CpuZero => {
            o["resources"]["cpu_millicores"] = json!(0);
            "resources.cpu_millicores".into()
        }
        MemoryNegative => {
            o["resources"]["memory_mib"] = json!(-64);
            "resources.memory_mib".into()
        }
        RxNegative => {
            o["rx_mtypes"].as_array_mut().unwrap().push(json!(-5));
            "rx_mtypes".into()
        }
        TxTooLarge => {
            o["tx_mtypes"]
                .as_array_mut()
                .unwrap()
                .push(json!(1i64 << 31));
            "tx_mtypes".into()
        }
        RxNotArray => {
            o.insert("rx_mtypes".into(), json!("12050"));
            "rx_mtypes".into()
        }
        ServiceModelUnknown => {
            let sm = o.entry("service_models").or_insert(json!([]));
            sm.as_array_mut().unwrap().push(json!("CCC"));
            "service_models".into()
        }
        HealthPeriodZero => {
            let h = o.entry("health").or_insert(json!({}));
            h["liveness_period_ms"] = json!(0);
            "health.liveness_period_ms".into()
        }
        HealthThresholdZero => {
            let h = o.entry("health").or_insert(json!({}));
            h["failure_threshold"] = json!(0);
            "health.failure_threshold".into()
        }
        DependencyBadName => {
            let deps = o.entry("dependencies").or_insert(json!([]));
            deps.as_array_mut()
                .unwrap()
                .push(json!({"name": "Not A Name", "version": {"min": "1.0.0", "max": "2.0.0"}}));
            "dependencies".into()
        }
        SecurityNotBool => {
            o.insert(
                "security".into(),
                json!({"allow_external_endpoints": "yes"}),
            );
            "security.allow_external_endpoints".into()
        }
        UnknownKey => {
            o.insert("colour".into(), "teal".into());
            "colour".into()
        }
    };
    (d, path)
}

/// True if `reported` is `expected` or lies beneath it (`expected[..]`, `expected.x`).
pub fn path_names(reported: &str, expected: &str) -> bool {
    reported == expected
        || reported
            .strip_prefix(expected)
            .is_some_and(|rest| rest.starts_with('[') || rest.starts_with('.'))
}

// ------------------------------------------------------------------- router

#[derive(Debug, Clone)]
pub enum RouterOp {
    Register { ep: u8, rx: BTreeSet<u8> },
    Deregister { ep: u8 },
    Route { src: u8, mtype: u8 },
    Drain { ep: u8, max: u8 },
}

pub fn router_op() -> impl Strategy<Value = RouterOp> {
    prop_oneof![
        3 => (0u8..10, prop::collection::btree_set(0u8..20, 0..6)).prop_map(|(ep, rx)| RouterOp::Register { ep, rx }),
        1 => (0u8..10).prop_map(|ep| RouterOp::Deregister { ep }),
        6 => (0u8..10, 0u8..20).prop_map(|(src, mtype)| RouterOp::Route { src, mtype }),
        2 => (0u8..10, 0u8..4).prop_map(|(ep, max)| RouterOp::Drain { ep, max }),
    ]
}

fn ep_id(i: u8) -> EndpointId {
    EndpointId::new(format!("ep{i}"))
}

/// Runs `ops` against a router and a brute-force model; returns the number
/// of routing decisions checked.
pub fn check_router_against_scan(ops: &[RouterOp]) -> Result<usize, String> {
    let mut router = RouteTable::new();
    // model: endpoint -> (rx set, sim times of queued copies in arrival order)
    let mut model: BTreeMap<u8, (BTreeSet<u8>, VecDeque<u64>)> = BTreeMap::new();
    let mut routed = 0;
    for (step, op) in ops.iter().enumerate() {
        match op {
            RouterOp::Register { ep, rx } => {
                let res = router.register_endpoint(
                    ep_id(*ep),
                    rx.iter().map(|&t| Mtype(t.into())).collect(),
                    BTreeSet::new(),
                );
                if res.is_ok() != !model.contains_key(ep) {
                    return Err(format!(
                        "step {step}: register result {res:?} disagrees with model"
                    ));
                }
                model.entry(*ep).or_insert((rx.clone(), VecDeque::new()));
            }
            RouterOp::Deregister { ep } => {
                let res = router.deregister_endpoint(&ep_id(*ep));
                match (res, model.remove(ep)) {
                    (Ok(n), Some((_, q))) if n == q.len() => {}
                    (Err(_), None) => {}
                    (r, m) => return Err(format!("step {step}: deregister {r:?} vs model {m:?}")),
                }
            }
            RouterOp::Route { src, mtype } => {
                let rec = router.route(RmrMessage::new(
                    Mtype((*mtype).into()),
                    ep_id(*src),
                    vec![],
                    step as u64,
                ));
                let expected: BTreeSet<EndpointId> = model
                    .iter()
                    .filter(|(_, (rx, _))| rx.contains(mtype))
                    .map(|(e, _)| ep_id(*e))
                    .collect();
                if rec.delivered_to != expected || rec.dropped != expected.is_empty() {
                    return Err(format!(
                        "step {step}: mtype {mtype} delivered to {:?}, scan says {expected:?}",
                        rec.delivered_to
                    ));
                }
                for (rx, q) in model.values_mut() {
                    if rx.contains(mtype) {
                        q.push_back(step as u64);
                    }
                }
                if router.log_entry(rec.seq) != Some(&rec) {
                    return Err(format!("step {step}: log entry {} missing", rec.seq));
                }
                routed += 1;
            }
            RouterOp::Drain { ep, max } => {
                let res = router.drain(&ep_id(*ep), *max as usize);
                match (res, model.get_mut(ep)) {
                    (Ok(msgs), Some((_, q))) => {
                        let n = (*max as usize).min(q.len());
                        let want: Vec<u64> = q.drain(..n).collect();
                        let got: Vec<u64> = msgs.iter().map(|m| m.sim_time_ms).collect();
                        if got != want {
                            return Err(format!("step {step}: drained {got:?} expected {want:?}"));
                        }
                    }
                    (Err(_), None) => {}
                    (r, m) => return Err(format!("step {step}: drain {r:?} vs model {m:?}")),
                }
            }
        }
        if !router.conservation_holds() {
            return Err(format!(
                "step {step}: conservation broken: {:?}",
                router.stats()
            ));
        }
        for (e, (_, q)) in &model {
            if router.pending(&ep_id(*e)) != q.len() {
                return Err(format!(
                    "step {step}: ep{e} holds {} expected {}",
                    router.pending(&ep_id(*e)),
                    q.len()
                ));
            }
        }
    }
    Ok(routed)
}

// ---------------------------------------------------------------- lifecycle

/// Every legal (state, event) pair, written out by hand. Anything absent is
/// illegal.
pub const LIFECYCLE_ORACLE: &[(LifecycleState, LifecycleEvent, LifecycleState)] = {
    use LifecycleEvent as E;
    use LifecycleState as S;
    &[
        (S::Submitted, E::ValidationStarted, S::Validating),
        (S::Validating, E::ValidationFailed, S::ValidationFailed),
        (S::Validating, E::ValidationPassed, S::Testing),
        (S::Testing, E::TestFailed, S::TestFailed),
        (S::Testing, E::TestPassed, S::Available),
        (S::Available, E::DeployRequested, S::Deployed),
        (S::Available, E::Retire, S::Retired),
        (S::Deployed, E::UndeployRequested, S::Available),
        (S::Deployed, E::Retire, S::Retired),
        (S::ValidationFailed, E::Superseded, S::Retired),
        (S::TestFailed, E::Superseded, S::Retired),
    ]
};

pub fn oracle_next(from: LifecycleState, event: LifecycleEvent) -> Option<LifecycleState> {
    LIFECYCLE_ORACLE
        .iter()
        .find(|(f, e, _)| *f == from && *e == event)
        .map(|(_, _, t)| *t)
}

/// A small valid package; `variant` changes the digest without touching
/// name or version.
pub fn tiny_package(name: &str, version: &str, variant: u8) -> PackageArchive {
    let doc = json!({
        "name": name, "version": version, "author": format!("dev {variant}"), "license": "MIT",
        "ric_compat": {"min": "1.0.0", "max": "2.0.0"},
        "resources": {"cpu_millicores": 10, "memory_mib": 10},
        "rx_mtypes": [12050], "tx_mtypes": [12010]
    });
    PackageArchive::new(doc.to_string().into_bytes(), b"{}", BTreeMap::new()).unwrap()
}

#[derive(Debug, Clone)]
pub enum RegistryOp {
    Submit { name: u8, version: u8, variant: u8 },
    Transition { record: u8, event: LifecycleEvent },
    Report { record: u8, pass: bool },
}

pub fn registry_op() -> impl Strategy<Value = RegistryOp> {
    prop_oneof![
        2 => (0u8..3, 0u8..2, 0u8..3).prop_map(|(name, version, variant)| RegistryOp::Submit { name, version, variant }),
        6 => (0u8..8, prop::sample::select(LifecycleEvent::ALL.to_vec()))
            .prop_map(|(record, event)| RegistryOp::Transition { record, event }),
        2 => (0u8..8, any::<bool>()).prop_map(|(record, pass)| RegistryOp::Report { record, pass }),
    ]
}

// ------------------------------------------------------- lifecycle model

pub fn report(reg: &Registry, id: &str, pass: bool) -> ConformanceReport {
    let checks = if pass {
        vec![]
    } else {
        vec![Check::new(
            "HEALTH_DEAD",
            CheckSeverity::Error,
            "no replies",
            vec![],
        )]
    };
    ConformanceReport::new(reg.next_report_id(id).unwrap(), id, checks, 0, 1)
}

/// A registry holding one record driven into `target` along legal edges.
pub fn record_in(target: S) -> (Registry, String) {
    let mut reg = Registry::new();
    let id = reg.submit(tiny_package("probe", "1.0.0", 0)).unwrap().id;
    let path: &[E] = match target {
        S::Submitted => &[],
        S::Validating => &[E::ValidationStarted],
        S::ValidationFailed => &[E::ValidationStarted, E::ValidationFailed],
        S::Testing => &[E::ValidationStarted, E::ValidationPassed],
        S::TestFailed => &[E::ValidationStarted, E::ValidationPassed, E::TestFailed],
        S::Available => &[E::ValidationStarted, E::ValidationPassed, E::TestPassed],
        S::Deployed => &[
            E::ValidationStarted,
            E::ValidationPassed,
            E::TestPassed,
            E::DeployRequested,
        ],
        S::Retired => &[
            E::ValidationStarted,
            E::ValidationPassed,
            E::TestPassed,
            E::Retire,
        ],
    };
    for ev in path {
        if *ev == E::TestPassed {
            let r = report(&reg, &id, true);
            reg.attach_report(&id, r).unwrap();
        }
        reg.transition(&id, *ev).unwrap();
    }
    assert_eq!(reg.get(&id).unwrap().state, target);
    (reg, id)
}

#[derive(Default)]
pub struct Model {
    pub state: BTreeMap<String, S>,
    pub latest_pass: BTreeMap<String, bool>,
    pub key: BTreeMap<String, (String, String)>,
    pub order: Vec<String>,
}

pub fn replay(reg: &Registry) -> Result<BTreeMap<String, S>, String> {
    let mut out: BTreeMap<String, S> = BTreeMap::new();
    let mut last_ts = 0;
    for a in reg.audit() {
        if a.ts <= last_ts {
            return Err(format!("timestamps not increasing at {}", a.ts));
        }
        last_ts = a.ts;
        let to = match a.event {
            AuditEvent::Submit => {
                if out.contains_key(&a.id) {
                    return Err(format!("{} submitted twice", a.id));
                }
                S::Submitted
            }
            AuditEvent::ReportFiled => {
                let at = *out
                    .get(&a.id)
                    .ok_or(format!("{} used before submit", a.id))?;
                if a.from != Some(at)
                    || a.report.is_none()
                    || !matches!(at, S::Validating | S::Testing)
                {
                    return Err(format!("bad report entry {a:?}"));
                }
                at
            }
            AuditEvent::Lifecycle(e) => {
                let from = *out
                    .get(&a.id)
                    .ok_or(format!("{} used before submit", a.id))?;
                if a.from != Some(from) {
                    return Err(format!("entry says from {:?}, replay has {from}", a.from));
                }
                oracle_next(from, e).ok_or(format!("illegal {from} --{e}--> in audit"))?
            }
        };
        if to != a.to {
            return Err(format!("entry says to {}, replay has {to}", a.to));
        }
        out.insert(a.id.clone(), to);
    }
    Ok(out)
}

pub fn apply(reg: &mut Registry, model: &mut Model, op: &RegistryOp) -> Result<(), TestCaseError> {
    match op {
        RegistryOp::Submit {
            name,
            version,
            variant,
        } => {
            let (name, version) = (format!("app{name}"), format!("1.{version}.0"));
            let pkg = tiny_package(&name, &version, *variant);
            let id = pkg.record_id();
            let clash = model
                .key
                .iter()
                .find(|(i, k)| {
                    **k == (name.clone(), version.clone()) && model.state[*i] != S::Retired
                })
                .map(|(i, _)| i.clone());
            let got = reg.submit(pkg);
            if model.state.contains_key(&id) {
                prop_assert!(matches!(&got, Ok(o) if !o.created && o.id == id));
                return Ok(());
            }
            match clash {
                Some(old) if !model.state[&old].is_failed() => {
                    prop_assert!(
                        matches!(got, Err(RegistryError::DuplicateVersion { .. })),
                        "{:?}",
                        got
                    );
                    return Ok(());
                }
                Some(old) => {
                    prop_assert_eq!(
                        got.as_ref().map(|o| o.superseded.clone()),
                        Ok(Some(old.clone()))
                    );
                    model.state.insert(old, S::Retired);
                }
                None => prop_assert!(got.is_ok(), "{:?}", got),
            }
            model.state.insert(id.clone(), S::Submitted);
            model.latest_pass.insert(id.clone(), false);
            model.key.insert(id.clone(), (name, version));
            model.order.push(id);
        }
        RegistryOp::Transition { record, event } => {
            let Some(id) = pick(model, *record) else {
                return Ok(());
            };
            let from = model.state[&id];
            let got = reg.transition(&id, *event);
            match oracle_next(from, *event) {
                None => prop_assert_eq!(
                    got,
                    Err(RegistryError::InvalidTransition {
                        from,
                        event: *event
                    })
                ),
                Some(to) if to.is_gated() && !model.latest_pass[&id] => {
                    prop_assert!(
                        matches!(got, Err(RegistryError::GateNotSatisfied { .. })),
                        "{:?}",
                        got
                    )
                }
                Some(to) => {
                    prop_assert_eq!(got, Ok(to));
                    model.state.insert(id, to);
                }
            }
        }
        RegistryOp::Report { record, pass } => {
            let Some(id) = pick(model, *record) else {
                return Ok(());
            };
            let r = report(reg, &id, *pass);
            let got = reg.attach_report(&id, r);
            if matches!(model.state[&id], S::Validating | S::Testing) {
                prop_assert!(got.is_ok());
                model.latest_pass.insert(id, *pass);
            } else {
                let is_wrong_state = matches!(got, Err(RegistryError::WrongState { .. }));
                prop_assert!(is_wrong_state);
            }
        }
    }
    Ok(())
}

pub fn pick(model: &Model, i: u8) -> Option<String> {
    if model.order.is_empty() {
        None
    } else {
        Some(model.order[i as usize % model.order.len()].clone())
    }
}

/// Runs `ops` against a registry and the model, checking the gate and the
/// audit replay after every step. Returns whether a gated state was reached.
pub fn check_gate_sequence(ops: &[RegistryOp]) -> Result<bool, TestCaseError> {
    let mut reg = Registry::new();
    let mut model = Model::default();
    let mut gated = false;
    for op in ops {
        apply(&mut reg, &mut model, op)?;
        for rec in reg.records() {
            prop_assert_eq!(rec.state, model.state[&rec.id]);
            if rec.state.is_gated() {
                gated = true;
                prop_assert!(
                    rec.has_passing_report(),
                    "{} is {} without a PASS",
                    rec.id,
                    rec.state
                );
            }
        }
        let replayed = replay(&reg).map_err(TestCaseError::fail)?;
        prop_assert_eq!(&replayed, &model.state);
    }
    Ok(gated)
}
