//! The xApp store: records, the onboarding lifecycle and the audit log.
//!
//! Every state change is an audit entry. On disk the audit log is the commit
//! record; see [`persist`] for the layout.

mod lifecycle;
pub mod persist;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use semver::Version;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::archive::PackageArchive;
use crate::conformance::{ConformanceReport, Verdict};
use crate::manifest::{manifest_digest, XAppManifest};
use crate::mtype::Mtype;

pub use lifecycle::{next_state, LifecycleEvent, LifecycleState};
pub use persist::{PersistError, RecoveryReport};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("{name} {version} is already registered as {existing} with different contents")]
    DuplicateVersion {
        name: String,
        version: String,
        existing: String,
    },
    #[error("no record with id {0}")]
    UnknownId(String),
    #[error("{event} is not allowed in state {from}")]
    InvalidTransition {
        from: LifecycleState,
        event: LifecycleEvent,
    },
    #[error("record {id} has no passing report and cannot enter {target}")]
    GateNotSatisfied { id: String, target: LifecycleState },
    #[error("malformed archive: {0}")]
    MalformedArchive(String),
    #[error("record {id} is {state}, expected {expected}")]
    WrongState {
        id: String,
        state: LifecycleState,
        expected: LifecycleState,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XAppRecord {
    pub id: String,
    pub manifest: XAppManifest,
    pub package: PackageArchive,
    pub package_digest: String,
    pub manifest_digest: String,
    pub state: LifecycleState,
    pub reports: Vec<ConformanceReport>,
    pub submitted_at: u64,
    pub updated_at: u64,
    /// Ids of earlier records with the same name, oldest first.
    pub version_lineage: Vec<String>,
}

impl XAppRecord {
    pub fn latest_report(&self) -> Option<&ConformanceReport> {
        self.reports.last()
    }

    pub fn has_passing_report(&self) -> bool {
        self.latest_report().is_some_and(ConformanceReport::passed)
    }

    pub fn summary(&self) -> RecordSummary {
        RecordSummary {
            id: self.id.clone(),
            name: self.manifest.name_str().to_owned(),
            version: self.manifest.version_string(),
            state: self.state,
            package_digest: self.package_digest.clone(),
            submitted_at: self.submitted_at,
            updated_at: self.updated_at,
            latest_verdict: self.latest_report().map(|r| r.verdict),
            rx_mtypes: self.manifest.rx_mtypes.iter().flatten().copied().collect(),
            tx_mtypes: self.manifest.tx_mtypes.iter().flatten().copied().collect(),
        }
    }

    pub fn detail(&self) -> RecordDetail {
        RecordDetail {
            summary: self.summary(),
            manifest: self.manifest.to_value(),
            manifest_digest: self.manifest_digest.clone(),
            reports: self
                .reports
                .iter()
                .map(|r| ReportRef {
                    report_id: r.report_id.clone(),
                    verdict: r.verdict,
                })
                .collect(),
            version_lineage: self.version_lineage.clone(),
            assets: self.package.assets.keys().cloned().collect(),
        }
    }

    fn mentions(&self, t: i64) -> bool {
        [&self.manifest.rx_mtypes, &self.manifest.tx_mtypes]
            .into_iter()
            .flatten()
            .any(|s| s.contains(&t))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub id: String,
    pub name: String,
    pub version: String,
    pub state: LifecycleState,
    pub package_digest: String,
    pub submitted_at: u64,
    pub updated_at: u64,
    pub latest_verdict: Option<Verdict>,
    pub rx_mtypes: Vec<i64>,
    pub tx_mtypes: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRef {
    pub report_id: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordDetail {
    #[serde(flatten)]
    pub summary: RecordSummary,
    pub manifest: serde_json::Value,
    pub manifest_digest: String,
    pub reports: Vec<ReportRef>,
    pub version_lineage: Vec<String>,
    pub assets: Vec<String>,
}

/// What an audit entry records: record creation, a filed report or a
/// lifecycle event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditEvent {
    Submit,
    /// A report was linked; the state does not change.
    ReportFiled,
    Lifecycle(LifecycleEvent),
}

impl AuditEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditEvent::Submit => "SUBMIT",
            AuditEvent::ReportFiled => "REPORT_FILED",
            AuditEvent::Lifecycle(e) => e.as_str(),
        }
    }
}

impl fmt::Display for AuditEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for AuditEvent {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for AuditEvent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "SUBMIT" => return Ok(AuditEvent::Submit),
            "REPORT_FILED" => return Ok(AuditEvent::ReportFiled),
            _ => {}
        }
        LifecycleEvent::parse(&s)
            .map(AuditEvent::Lifecycle)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown audit event {s:?}")))
    }
}

/// One line of `audit.log`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditEntry {
    pub ts: u64,
    pub id: String,
    pub from: Option<LifecycleState>,
    pub event: AuditEvent,
    pub to: LifecycleState,
    /// Set on REPORT_FILED entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    #[serde(default, alias = "q")]
    pub name_substring: Option<String>,
    #[serde(default)]
    pub state: Option<LifecycleState>,
    #[serde(default)]
    pub mtype: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmitOutcome {
    pub id: String,
    /// False when an identical package was already on file.
    pub created: bool,
    /// A failed record with the same name and version that this one retired.
    pub superseded: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    records: BTreeMap<String, XAppRecord>,
    audit: Vec<AuditEntry>,
    clock: u64,
    marks: persist::Marks,
}

impl PartialEq for Registry {
    /// Observational equality: records, audit log and clock.
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records && self.audit == other.audit && self.clock == other.clock
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn get(&self, id: &str) -> Result<&XAppRecord, RegistryError> {
        self.records
            .get(id)
            .ok_or_else(|| RegistryError::UnknownId(id.to_owned()))
    }

    pub fn records(&self) -> impl Iterator<Item = &XAppRecord> {
        self.records.values()
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn log(
        &mut self,
        id: &str,
        from: Option<LifecycleState>,
        event: AuditEvent,
        to: LifecycleState,
        report: Option<String>,
    ) -> u64 {
        let ts = self.tick();
        self.audit.push(AuditEntry {
            ts,
            id: id.to_owned(),
            from,
            event,
            to,
            report,
        });
        self.marks.dirty.insert(id.to_owned());
        ts
    }

    pub fn submit_bytes(&mut self, archive: &[u8]) -> Result<SubmitOutcome, RegistryError> {
        let pkg = PackageArchive::unpack(archive)
            .map_err(|e| RegistryError::MalformedArchive(e.to_string()))?;
        self.submit(pkg)
    }

    /// Files a package in SUBMITTED. Identical contents return the existing
    /// record; a failed record with the same name and version is retired.
    pub fn submit(&mut self, pkg: PackageArchive) -> Result<SubmitOutcome, RegistryError> {
        let package_digest = pkg.digest();
        let id = package_digest[..16].to_owned();
        if self.records.contains_key(&id) {
            return Ok(SubmitOutcome {
                id,
                created: false,
                superseded: None,
            });
        }
        let manifest = pkg.manifest();
        let mut superseded = None;
        if let (Some(name), Some(version)) = (&manifest.name, &manifest.version) {
            let clash = self.records.values().find(|r| {
                r.state != LifecycleState::Retired
                    && r.manifest.name.as_ref() == Some(name)
                    && r.manifest.version.as_ref() == Some(version)
            });
            if let Some(old) = clash {
                if !old.state.is_failed() {
                    return Err(RegistryError::DuplicateVersion {
                        name: name.clone(),
                        version: version.to_string(),
                        existing: old.id.clone(),
                    });
                }
                superseded = Some(old.id.clone());
            }
        }
        if let Some(old) = &superseded {
            self.transition(old, LifecycleEvent::Superseded)?;
        }

        let mut lineage: Vec<&XAppRecord> = self
            .records
            .values()
            .filter(|r| manifest.name.is_some() && r.manifest.name == manifest.name)
            .collect();
        lineage.sort_by_key(|r| r.submitted_at);
        let version_lineage = lineage.into_iter().map(|r| r.id.clone()).collect();

        let ts = self.log(
            &id,
            None,
            AuditEvent::Submit,
            LifecycleState::Submitted,
            None,
        );
        self.records.insert(
            id.clone(),
            XAppRecord {
                id: id.clone(),
                manifest_digest: manifest_digest(&manifest),
                manifest,
                package: pkg,
                package_digest,
                state: LifecycleState::Submitted,
                reports: Vec::new(),
                submitted_at: ts,
                updated_at: ts,
                version_lineage,
            },
        );
        Ok(SubmitOutcome {
            id,
            created: true,
            superseded,
        })
    }

    /// Applies `event`. Entering AVAILABLE or DEPLOYED additionally needs the
    /// latest report to be a PASS.
    pub fn transition(
        &mut self,
        id: &str,
        event: LifecycleEvent,
    ) -> Result<LifecycleState, RegistryError> {
        let rec = self.get(id)?;
        let from = rec.state;
        let to = next_state(from, event).ok_or(RegistryError::InvalidTransition { from, event })?;
        if to.is_gated() && !rec.has_passing_report() {
            return Err(RegistryError::GateNotSatisfied {
                id: id.to_owned(),
                target: to,
            });
        }
        let ts = self.log(id, Some(from), AuditEvent::Lifecycle(event), to, None);
        let rec = self.records.get_mut(id).expect("checked above");
        rec.state = to;
        rec.updated_at = ts;
        Ok(to)
    }

    pub fn next_report_id(&self, id: &str) -> Result<String, RegistryError> {
        let n = self.get(id)?.reports.len() + 1;
        Ok(format!("rpt-{id}-{n}"))
    }

    /// Links a finished report and audits it. Only records under validation
    /// or test take reports.
    pub fn attach_report(
        &mut self,
        id: &str,
        report: ConformanceReport,
    ) -> Result<(), RegistryError> {
        let rec = self.get(id)?;
        if !matches!(
            rec.state,
            LifecycleState::Validating | LifecycleState::Testing
        ) {
            return Err(RegistryError::WrongState {
                id: id.to_owned(),
                state: rec.state,
                expected: LifecycleState::Testing,
            });
        }
        assert_eq!(report.record_id, id, "report belongs to another record");
        assert!(
            rec.reports.iter().all(|r| r.report_id != report.report_id),
            "report ids are unique"
        );
        let state = rec.state;
        let ts = self.log(
            id,
            Some(state),
            AuditEvent::ReportFiled,
            state,
            Some(report.report_id.clone()),
        );
        let rec = self.records.get_mut(id).expect("checked above");
        rec.reports.push(report);
        rec.updated_at = ts;
        Ok(())
    }

    pub fn require_state(
        &self,
        id: &str,
        expected: LifecycleState,
    ) -> Result<&XAppRecord, RegistryError> {
        let rec = self.get(id)?;
        if rec.state != expected {
            return Err(RegistryError::WrongState {
                id: id.to_owned(),
                state: rec.state,
                expected,
            });
        }
        Ok(rec)
    }

    /// Sorted by name, then version descending. Without a state filter
    /// RETIRED records are left out.
    pub fn search(&self, q: &SearchQuery) -> Vec<RecordSummary> {
        let mut hits: Vec<&XAppRecord> = self
            .records
            .values()
            .filter(|r| match q.state {
                Some(s) => r.state == s,
                None => r.state != LifecycleState::Retired,
            })
            .filter(|r| {
                q.name_substring
                    .as_deref()
                    .is_none_or(|sub| r.manifest.name_str().contains(sub))
            })
            .filter(|r| q.mtype.is_none_or(|t| r.mentions(t)))
            .collect();
        hits.sort_by(|a, b| {
            a.manifest
                .name_str()
                .cmp(b.manifest.name_str())
                .then_with(|| version_key(b).cmp(&version_key(a)))
                .then_with(|| a.id.cmp(&b.id))
        });
        hits.into_iter().map(XAppRecord::summary).collect()
    }

    /// Ids of non-retired records whose name is `name` and version is in range.
    pub fn resolve(&self, name: &str, accepts: impl Fn(&Version) -> bool) -> Vec<&str> {
        self.records
            .values()
            .filter(|r| {
                r.state != LifecycleState::Retired && r.manifest.name.as_deref() == Some(name)
            })
            .filter(|r| r.manifest.version.as_ref().is_some_and(&accepts))
            .map(|r| r.id.as_str())
            .collect()
    }

    pub fn mtype_index(&self) -> BTreeMap<Mtype, BTreeSet<String>> {
        let mut out: BTreeMap<Mtype, BTreeSet<String>> = BTreeMap::new();
        for r in self.records.values() {
            for t in r.manifest.declared_rx().union(&r.manifest.declared_tx()) {
                out.entry(*t).or_default().insert(r.id.clone());
            }
        }
        out
    }
}

fn version_key(r: &XAppRecord) -> Option<&Version> {
    r.manifest.version.as_ref()
}
