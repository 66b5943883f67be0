//! Acceptance testing and conformance reports.
//!
//! An acceptance run deploys one xApp into a fresh [`PseudoRic`] with its own
//! scenario, runs the plan's logical duration, then compares what the router
//! saw against what the manifest declares.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_vec;
use crate::manifest::{Severity, ValidationResult, XAppManifest, TOP_LEVEL_KEYS};
use crate::mtype::Mtype;
use crate::pseudo_ric::{
    BehaviorScript, DeployRequest, ProbeResult, PseudoRic, RuntimeEventKind, E2TERM,
};
use crate::router::EndpointId;
use crate::scenario::{Scenario, ScenarioConfig, ScenarioError};

pub mod codes {
    pub const UNDECLARED_TX: &str = "UNDECLARED_TX";
    pub const UNDECLARED_RX: &str = "UNDECLARED_RX";
    pub const UNUSED_DECLARATION: &str = "UNUSED_DECLARATION";
    pub const HEALTH_OK: &str = "HEALTH_OK";
    pub const HEALTH_DEAD: &str = "HEALTH_DEAD";
    pub const INDICATIONS_RECEIVED: &str = "INDICATIONS_RECEIVED";
    pub const INDICATION_SHORTFALL: &str = "INDICATION_SHORTFALL";
    pub const SUBSCRIPTION_REJECTED: &str = "SUBSCRIPTION_REJECTED";
    pub const EXTERNAL_ENDPOINTS_REQUESTED: &str = "EXTERNAL_ENDPOINTS_REQUESTED";
    pub const DEPLOY_FAILURE: &str = "DEPLOY_FAILURE";
}

/// Default logical duration of an acceptance run.
pub const DEFAULT_DURATION_MS: u64 = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckSeverity {
    Error,
    Warning,
    /// A check that passed.
    Info,
}

impl From<Severity> for CheckSeverity {
    fn from(s: Severity) -> Self {
        match s {
            Severity::Error => CheckSeverity::Error,
            Severity::Warning => CheckSeverity::Warning,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Pointer into the artifacts of a run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Evidence {
    /// Router observation-log sequence number.
    Router { seq: u64 },
    /// Pseudo-RIC runtime-log sequence number.
    Runtime { seq: u64 },
    /// Path into the manifest document.
    Manifest { path: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub code: String,
    pub severity: CheckSeverity,
    pub detail: String,
    pub evidence: Vec<Evidence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mtype: Option<Mtype>,
}

impl Check {
    pub fn new(
        code: &str,
        severity: CheckSeverity,
        detail: impl Into<String>,
        evidence: Vec<Evidence>,
    ) -> Self {
        Self {
            code: code.to_owned(),
            severity,
            detail: detail.into(),
            evidence,
            mtype: None,
        }
    }

    fn about(mut self, t: Mtype) -> Self {
        self.mtype = Some(t);
        self
    }

    pub fn is_error(&self) -> bool {
        self.severity == CheckSeverity::Error
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConformanceReport {
    pub report_id: String,
    pub record_id: String,
    pub verdict: Verdict,
    pub checks: Vec<Check>,
    pub started_at: u64,
    pub finished_at: u64,
}

impl ConformanceReport {
    /// Builds a finished report; the verdict follows from the checks.
    pub fn new(
        report_id: impl Into<String>,
        record_id: impl Into<String>,
        checks: Vec<Check>,
        started_at: u64,
        finished_at: u64,
    ) -> Self {
        let verdict = if checks.iter().any(Check::is_error) {
            Verdict::Fail
        } else {
            Verdict::Pass
        };
        Self {
            report_id: report_id.into(),
            record_id: record_id.into(),
            verdict,
            checks,
            started_at,
            finished_at,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn is_consistent(&self) -> bool {
        (self.verdict == Verdict::Fail) == self.checks.iter().any(Check::is_error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.is_error())
    }

    pub fn find(&self, code: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.code == code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("report does not parse: {0}")]
    Malformed(String),
    #[error("report verdict disagrees with its checks")]
    Inconsistent,
}

pub fn render_report(r: &ConformanceReport) -> Vec<u8> {
    to_canonical_vec(r).expect("serializable")
}

pub fn parse_report(raw: &[u8]) -> Result<ConformanceReport, ReportError> {
    let r: ConformanceReport =
        serde_json::from_slice(raw).map_err(|e| ReportError::Malformed(e.to_string()))?;
    if !r.is_consistent() {
        return Err(ReportError::Inconsistent);
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedBehavior {
    /// Minimum indications per accepted subscription.
    pub min_rx_indications: u64,
    pub require_health: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptancePlan {
    pub scenario: ScenarioConfig,
    pub duration_ms: u64,
    pub expected: ExpectedBehavior,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("duration must be positive")]
    ZeroDuration,
    #[error("duration {duration_ms} ms is shorter than twice the {period_ms} ms report period")]
    TooShort { duration_ms: u64, period_ms: u64 },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

impl AcceptancePlan {
    /// Duration `max(20 s, 2 × longest period)`; minimum indications
    /// `floor(duration / longest period) − 1`, or 0 without subscriptions.
    pub fn default_for(script: &BehaviorScript, scenario: ScenarioConfig) -> Self {
        let period = script.max_report_period_ms();
        let duration_ms = period.map_or(DEFAULT_DURATION_MS, |p| DEFAULT_DURATION_MS.max(2 * p));
        let min_rx_indications = period.map_or(0, |p| (duration_ms / p).saturating_sub(1));
        Self {
            scenario,
            duration_ms,
            expected: ExpectedBehavior {
                min_rx_indications,
                require_health: true,
            },
        }
    }

    pub fn check(&self, script: &BehaviorScript) -> Result<(), PlanError> {
        if self.duration_ms == 0 {
            return Err(PlanError::ZeroDuration);
        }
        if let Some(p) = script.max_report_period_ms() {
            if self.duration_ms < 2 * p {
                return Err(PlanError::TooShort {
                    duration_ms: self.duration_ms,
                    period_ms: p,
                });
            }
        }
        self.scenario.validate()?;
        Ok(())
    }
}

/// Message types seen for one endpoint, each occurrence with its evidence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrafficObservation {
    pub tx: BTreeMap<Mtype, Vec<Evidence>>,
    pub rx: BTreeMap<Mtype, Vec<Evidence>>,
    /// Receive registrations the xApp attempted beyond its manifest.
    pub rx_requested: BTreeMap<Mtype, Evidence>,
}

impl TrafficObservation {
    pub fn from_run(ric: &PseudoRic, endpoint: &EndpointId) -> Self {
        let mut obs = TrafficObservation::default();
        for rec in ric.router().log() {
            let t = rec.message.mtype;
            if rec.message.source == *endpoint {
                obs.tx
                    .entry(t)
                    .or_default()
                    .push(Evidence::Router { seq: rec.seq });
            }
            if rec.delivered_to.contains(endpoint) {
                obs.rx
                    .entry(t)
                    .or_default()
                    .push(Evidence::Router { seq: rec.seq });
            }
        }
        for ev in ric.events() {
            if let RuntimeEventKind::RxRegistrationRefused { endpoint: e, mtype } = &ev.kind {
                if e == endpoint {
                    obs.rx_requested
                        .insert(*mtype, Evidence::Runtime { seq: ev.seq });
                }
            }
        }
        obs
    }
}

/// Declared-versus-observed message types.
pub fn check_message_conformance(obs: &TrafficObservation, m: &XAppManifest) -> Vec<Check> {
    let declared_tx = m.declared_tx();
    let declared_rx = m.declared_rx();
    let mut out = Vec::new();

    for (t, ev) in &obs.tx {
        if !declared_tx.contains(t) {
            out.push(
                Check::new(
                    codes::UNDECLARED_TX,
                    CheckSeverity::Error,
                    format!("sent mtype {t} ({} times) not in tx_mtypes", ev.len()),
                    ev.clone(),
                )
                .about(*t),
            );
        }
    }

    let mut undeclared_rx: BTreeMap<Mtype, Vec<Evidence>> = BTreeMap::new();
    for (t, ev) in &obs.rx {
        if !declared_rx.contains(t) {
            undeclared_rx
                .entry(*t)
                .or_default()
                .extend(ev.iter().cloned());
        }
    }
    for (t, ev) in &obs.rx_requested {
        if !declared_rx.contains(t) {
            undeclared_rx.entry(*t).or_default().push(ev.clone());
        }
    }
    for (t, ev) in undeclared_rx {
        out.push(
            Check::new(
                codes::UNDECLARED_RX,
                CheckSeverity::Error,
                format!("receives or asks to receive mtype {t} not in rx_mtypes"),
                ev,
            )
            .about(t),
        );
    }

    for (field, declared, seen) in [
        ("tx_mtypes", &declared_tx, &obs.tx),
        ("rx_mtypes", &declared_rx, &obs.rx),
    ] {
        for (i, t) in declared.iter().enumerate() {
            if !seen.contains_key(t) {
                out.push(
                    Check::new(
                        codes::UNUSED_DECLARATION,
                        CheckSeverity::Warning,
                        format!("declared mtype {t} in {field} was never observed"),
                        vec![Evidence::Manifest {
                            path: manifest_mtype_path(m, field, *t)
                                .unwrap_or_else(|| format!("{field}[{i}]")),
                        }],
                    )
                    .about(*t),
                );
            }
        }
    }
    out
}

fn manifest_mtype_path(m: &XAppManifest, field: &str, t: Mtype) -> Option<String> {
    let set = if field == "tx_mtypes" {
        &m.tx_mtypes
    } else {
        &m.rx_mtypes
    };
    let i = set.as_ref()?.iter().position(|&x| x == i64::from(t.0))?;
    Some(format!("{field}[{i}]"))
}

/// HEALTH_DEAD if any probe left the xApp dead, else HEALTH_OK.
pub fn check_liveness(history: &[ProbeResult], m: &XAppManifest, require_health: bool) -> Check {
    match history.iter().find(|p| !p.alive) {
        Some(p) => Check::new(
            codes::HEALTH_DEAD,
            if require_health {
                CheckSeverity::Error
            } else {
                CheckSeverity::Warning
            },
            format!(
                "declared dead at {} ms after {} consecutive failed probes (threshold {})",
                p.sim_time_ms, p.consecutive_failures, m.health.failure_threshold
            ),
            history
                .iter()
                .filter(|q| !q.ok && q.probe_number <= p.probe_number)
                .map(|q| Evidence::Runtime { seq: q.event_seq })
                .collect(),
        ),
        None => Check::new(
            codes::HEALTH_OK,
            CheckSeverity::Info,
            format!("{} probes, none fatal", history.len()),
            history
                .iter()
                .map(|q| Evidence::Runtime { seq: q.event_seq })
                .collect(),
        ),
    }
}

/// Validation violations as report checks, each pointing at its manifest path.
pub fn validation_checks(result: &ValidationResult) -> Vec<Check> {
    result
        .violations
        .iter()
        .map(|v| {
            Check::new(
                v.code.as_str(),
                v.severity.into(),
                v.detail.clone(),
                vec![Evidence::Manifest {
                    path: v.path.clone(),
                }],
            )
        })
        .collect()
}

/// A finished acceptance run with the runtime it used, kept so evidence can
/// be resolved.
#[derive(Debug, Clone)]
pub struct AcceptanceRun {
    pub report: ConformanceReport,
    pub ric: PseudoRic,
    pub endpoint: Option<EndpointId>,
}

pub fn run_acceptance(
    record_id: &str,
    report_id: &str,
    manifest: &XAppManifest,
    script: &BehaviorScript,
    plan: &AcceptancePlan,
) -> Result<AcceptanceRun, PlanError> {
    plan.check(script)?;
    let scenario = Scenario::new(plan.scenario.clone())?;
    let mut ric = PseudoRic::new(Some(scenario));
    let started_at = ric.sim_time_ms();
    let mut checks = Vec::new();

    if manifest.security.allow_external_endpoints {
        checks.push(Check::new(
            codes::EXTERNAL_ENDPOINTS_REQUESTED,
            CheckSeverity::Warning,
            "manifest allows traffic outside the RIC router",
            vec![Evidence::Manifest {
                path: "security.allow_external_endpoints".into(),
            }],
        ));
    }

    let deployed = ric.deploy(DeployRequest {
        record_id: record_id.to_owned(),
        manifest: manifest.clone(),
        script: script.clone(),
    });
    let endpoint = match deployed {
        Ok(x) => x.endpoint_id.clone(),
        Err(e) => {
            checks.push(Check::new(
                codes::DEPLOY_FAILURE,
                CheckSeverity::Error,
                e.to_string(),
                vec![Evidence::Manifest {
                    path: "name".into(),
                }],
            ));
            let finished_at = ric.sim_time_ms();
            return Ok(AcceptanceRun {
                report: ConformanceReport::new(
                    report_id,
                    record_id,
                    checks,
                    started_at,
                    finished_at,
                ),
                ric,
                endpoint: None,
            });
        }
    };

    ric.run_for(plan.duration_ms);
    let x = ric
        .running_by_record(record_id)
        .expect("still tracked after death");

    let obs = TrafficObservation::from_run(&ric, &endpoint);
    checks.extend(check_message_conformance(&obs, manifest));
    checks.push(check_liveness(
        &x.probe_history,
        manifest,
        plan.expected.require_health,
    ));
    checks.extend(indication_checks(&ric, &endpoint, script, plan));

    let finished_at = ric.sim_time_ms();
    Ok(AcceptanceRun {
        report: ConformanceReport::new(report_id, record_id, checks, started_at, finished_at),
        ric,
        endpoint: Some(endpoint),
    })
}

fn indication_checks(
    ric: &PseudoRic,
    endpoint: &EndpointId,
    script: &BehaviorScript,
    plan: &AcceptancePlan,
) -> Vec<Check> {
    let mut out = Vec::new();
    let mut anchors = Vec::new();
    for ev in ric.events() {
        match &ev.kind {
            RuntimeEventKind::SubscriptionRejected {
                endpoint: e,
                reason,
            } if e == endpoint => {
                out.push(Check::new(
                    codes::SUBSCRIPTION_REJECTED,
                    CheckSeverity::Warning,
                    reason.clone(),
                    vec![Evidence::Runtime { seq: ev.seq }],
                ));
                anchors.push(Evidence::Runtime { seq: ev.seq });
            }
            RuntimeEventKind::Deployed { endpoint: e, .. } if e == endpoint => {
                anchors.push(Evidence::Runtime { seq: ev.seq });
            }
            _ => {}
        }
    }
    if script.on_start.is_empty() {
        return out;
    }
    let min = plan.expected.min_rx_indications;
    let subs: Vec<_> = ric
        .subscriptions()
        .iter()
        .filter(|s| s.endpoint_id == *endpoint)
        .collect();
    if subs.is_empty() {
        if min > 0 {
            out.push(Check::new(
                codes::INDICATION_SHORTFALL,
                CheckSeverity::Error,
                format!("no subscription was accepted; expected at least {min} indications"),
                anchors,
            ));
        }
        return out;
    }
    for s in subs {
        let corr = format!("sub-{}", s.id);
        let mut evidence: Vec<Evidence> = ric
            .events()
            .iter()
            .filter(|e| {
                matches!(e.kind, RuntimeEventKind::Subscribed { subscription_id, .. } if subscription_id == s.id)
            })
            .map(|e| Evidence::Runtime { seq: e.seq })
            .collect();
        let received: Vec<Evidence> = ric
            .router()
            .log()
            .iter()
            .filter(|r| {
                r.message.mtype == Mtype::RIC_INDICATION
                    && r.message.source.as_str() == E2TERM
                    && r.message.correlation_id.as_deref() == Some(corr.as_str())
                    && r.delivered_to.contains(endpoint)
            })
            .map(|r| Evidence::Router { seq: r.seq })
            .collect();
        let n = received.len() as u64;
        evidence.extend(received);
        out.push(if n < min {
            Check::new(
                codes::INDICATION_SHORTFALL,
                CheckSeverity::Error,
                format!("gNB {}: {n} indications, expected at least {min}", s.gnb_id),
                evidence,
            )
        } else {
            Check::new(
                codes::INDICATIONS_RECEIVED,
                CheckSeverity::Info,
                format!("gNB {}: {n} indications", s.gnb_id),
                evidence,
            )
        });
    }
    out
}

/// Confirms every evidence reference in `report` points at something real.
pub fn resolve_evidence(
    report: &ConformanceReport,
    ric: Option<&PseudoRic>,
    manifest: &XAppManifest,
) -> Result<(), String> {
    let doc = manifest.to_value();
    for check in &report.checks {
        for ev in &check.evidence {
            let ok = match ev {
                Evidence::Router { seq } => {
                    ric.is_some_and(|r| r.router().log_entry(*seq).is_some())
                }
                Evidence::Runtime { seq } => ric.is_some_and(|r| r.event(*seq).is_some()),
                Evidence::Manifest { path } => manifest_path_resolves(&doc, path),
            };
            if !ok {
                return Err(format!("{}: unresolved evidence {ev:?}", check.code));
            }
        }
    }
    Ok(())
}

/// True if `path` (`a.b[2].c`) exists in `doc`, or names a known top-level
/// field that the document omits.
pub fn manifest_path_resolves(doc: &serde_json::Value, path: &str) -> bool {
    let mut cur = doc;
    let mut first = true;
    for seg in path.split('.') {
        let (key, indexes) = match seg.find('[') {
            Some(i) => (&seg[..i], &seg[i..]),
            None => (seg, ""),
        };
        match cur.get(key) {
            Some(v) => cur = v,
            None => return first && indexes.is_empty() && TOP_LEVEL_KEYS.contains(&key),
        }
        first = false;
        for idx in indexes.split_terminator(']') {
            let Some(Ok(i)) = idx.strip_prefix('[').map(str::parse::<usize>) else {
                return false;
            };
            match cur.get(i) {
                Some(v) => cur = v,
                None => return false,
            }
        }
    }
    true
}
