//! On-disk layout:
//!
//! ```text
//! <data_dir>/audit.log            one AuditEntry per line, append-only
//! <data_dir>/records/<id>.json    {"checksum", "record"} envelope
//! <data_dir>/records/<id>.json.prev  previous envelope
//! <data_dir>/reports/<rid>.json   rendered ConformanceReport, written once
//! <data_dir>/packages/<id>.xapp   the submitted archive, written once
//! ```
//!
//! A persist writes reports, packages and record files (each by atomic
//! rename) before appending to the audit log. The audit log is the commit
//! point: a record counts only once it has an audit entry, and its state is
//! whatever replaying its entries gives.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{next_state, AuditEntry, AuditEvent, LifecycleState, Registry, XAppRecord};
use crate::archive::PackageArchive;
use crate::canonical::{to_canonical_vec, value_to_canonical_vec};
use crate::conformance::{parse_report, render_report, ConformanceReport};
use crate::manifest::{canonicalize, parse_manifest};

pub const AUDIT_LOG: &str = "audit.log";
pub const RECORDS_DIR: &str = "records";
pub const REPORTS_DIR: &str = "reports";
pub const PACKAGES_DIR: &str = "packages";

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("i/o failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store: {detail}")]
    CorruptStore { detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_owned(),
        source,
    }
}

fn corrupt(detail: impl Into<String>) -> PersistError {
    PersistError::CorruptStore {
        detail: detail.into(),
    }
}

/// What has already reached disk.
#[derive(Debug, Clone, Default)]
pub(super) struct Marks {
    pub dirty: BTreeSet<String>,
    pub saved_reports: BTreeSet<String>,
    pub saved_packages: BTreeSet<String>,
    pub audit_saved: usize,
}

/// What [`Registry::recover`] had to throw away.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    /// Audit lines dropped from the tail (torn or inconsistent).
    pub audit_lines_dropped: usize,
    /// Records restored from their `.prev` envelope.
    pub restored_from_prev: Vec<String>,
    /// Committed records that could not be restored at all.
    pub lost: Vec<String>,
    /// Record files with no audit entry.
    pub uncommitted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordBody {
    id: String,
    manifest: serde_json::Value,
    manifest_digest: String,
    package_digest: String,
    state: LifecycleState,
    report_ids: Vec<String>,
    submitted_at: u64,
    updated_at: u64,
    version_lineage: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    checksum: String,
    record: serde_json::Value,
}

fn checksum(body: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(value_to_canonical_vec(body)))
}

fn envelope_bytes(rec: &XAppRecord) -> Vec<u8> {
    let body = RecordBody {
        id: rec.id.clone(),
        manifest: serde_json::from_slice(&canonicalize(&rec.manifest)).expect("canonical json"),
        manifest_digest: rec.manifest_digest.clone(),
        package_digest: rec.package_digest.clone(),
        state: rec.state,
        report_ids: rec.reports.iter().map(|r| r.report_id.clone()).collect(),
        submitted_at: rec.submitted_at,
        updated_at: rec.updated_at,
        version_lineage: rec.version_lineage.clone(),
    };
    let record = serde_json::to_value(&body).expect("serializable");
    let mut out = to_canonical_vec(&Envelope {
        checksum: checksum(&record),
        record,
    })
    .expect("serializable");
    out.push(b'\n');
    out
}

fn decode_envelope(raw: &[u8]) -> Result<RecordBody, String> {
    let env: Envelope =
        serde_json::from_slice(raw).map_err(|e| format!("unreadable envelope: {e}"))?;
    if checksum(&env.record) != env.checksum {
        return Err("checksum mismatch".into());
    }
    serde_json::from_value(env.record).map_err(|e| format!("bad record body: {e}"))
}

/// One durable write in a persist.
#[derive(Debug, Clone)]
enum WriteOp {
    Replace {
        path: PathBuf,
        bytes: Vec<u8>,
        keep_prev: bool,
    },
    Append {
        path: PathBuf,
        bytes: Vec<u8>,
    },
}

impl WriteOp {
    fn apply(&self) -> Result<(), PersistError> {
        match self {
            WriteOp::Replace {
                path,
                bytes,
                keep_prev,
            } => {
                if *keep_prev && path.exists() {
                    let prev = with_suffix(path, ".prev");
                    fs::copy(path, &prev).map_err(io_err(&prev))?;
                }
                let tmp = with_suffix(path, ".tmp");
                let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
                f.write_all(bytes).map_err(io_err(&tmp))?;
                f.sync_all().map_err(io_err(&tmp))?;
                fs::rename(&tmp, path).map_err(io_err(path))?;
            }
            WriteOp::Append { path, bytes } => {
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(io_err(path))?;
                f.write_all(bytes).map_err(io_err(path))?;
                f.sync_all().map_err(io_err(path))?;
            }
        }
        Ok(())
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_dirs(dir: &Path) -> Result<(), PersistError> {
    for sub in [RECORDS_DIR, REPORTS_DIR, PACKAGES_DIR] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    Ok(())
}

impl Registry {
    fn write_plan(&self, dir: &Path) -> Vec<WriteOp> {
        let mut ops = Vec::new();
        for id in &self.marks.dirty {
            let Some(rec) = self.records.get(id) else {
                continue;
            };
            for r in &rec.reports {
                if !self.marks.saved_reports.contains(&r.report_id) {
                    ops.push(WriteOp::Replace {
                        path: dir.join(REPORTS_DIR).join(format!("{}.json", r.report_id)),
                        bytes: render_report(r),
                        keep_prev: false,
                    });
                }
            }
            if !self.marks.saved_packages.contains(id) {
                ops.push(WriteOp::Replace {
                    path: dir.join(PACKAGES_DIR).join(format!("{id}.xapp")),
                    bytes: rec.package.pack(),
                    keep_prev: false,
                });
            }
            ops.push(WriteOp::Replace {
                path: dir.join(RECORDS_DIR).join(format!("{id}.json")),
                bytes: envelope_bytes(rec),
                keep_prev: true,
            });
        }
        let tail = &self.audit[self.marks.audit_saved..];
        if !tail.is_empty() {
            let mut bytes = Vec::new();
            for e in tail {
                bytes.extend(serde_json::to_vec(e).expect("serializable"));
                bytes.push(b'\n');
            }
            ops.push(WriteOp::Append {
                path: dir.join(AUDIT_LOG),
                bytes,
            });
        }
        ops
    }

    /// Number of durable writes the next [`Registry::persist`] would make.
    pub fn pending_writes(&self, dir: &Path) -> usize {
        self.write_plan(dir).len()
    }

    /// Writes everything changed since the last persist.
    pub fn persist(&mut self, dir: &Path) -> Result<(), PersistError> {
        ensure_dirs(dir)?;
        for op in self.write_plan(dir) {
            op.apply()?;
        }
        self.marks.audit_saved = self.audit.len();
        for id in std::mem::take(&mut self.marks.dirty) {
            if let Some(rec) = self.records.get(&id) {
                self.marks
                    .saved_reports
                    .extend(rec.reports.iter().map(|r| r.report_id.clone()));
                self.marks.saved_packages.insert(id);
            }
        }
        Ok(())
    }

    /// Fault injection: performs only the first `n` writes of a persist and
    /// then stops as if the process had died. The in-memory marks are left
    /// untouched.
    pub fn persist_until(&self, dir: &Path, n: usize) -> Result<usize, PersistError> {
        ensure_dirs(dir)?;
        let ops = self.write_plan(dir);
        let n = n.min(ops.len());
        for op in &ops[..n] {
            op.apply()?;
        }
        Ok(n)
    }

    /// Strict load: any damage is reported as [`PersistError::CorruptStore`].
    pub fn load(dir: &Path) -> Result<Registry, PersistError> {
        let audit = read_audit(dir, false)?.0;
        let files = list_records(dir)?;
        let by_id = group_audit(&audit);
        let mut records = BTreeMap::new();
        for (id, entries) in &by_id {
            let path = dir.join(RECORDS_DIR).join(format!("{id}.json"));
            let raw = fs::read(&path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => {
                    corrupt(format!("record {id} is in the audit log but has no file"))
                }
                _ => io_err(&path)(e),
            })?;
            let body = decode_envelope(&raw).map_err(|d| corrupt(format!("record {id}: {d}")))?;
            let state = replay(id, entries).map_err(corrupt)?;
            let rec = assemble(dir, body, state, entries, None).map_err(corrupt)?;
            records.insert(id.clone(), rec);
        }
        for id in &files {
            if !by_id.contains_key(id) {
                let path = dir.join(RECORDS_DIR).join(format!("{id}.json"));
                let raw = fs::read(&path).map_err(io_err(&path))?;
                decode_envelope(&raw)
                    .map_err(|d| corrupt(format!("uncommitted record {id}: {d}")))?;
            }
        }
        Ok(Self::from_parts(records, audit))
    }

    /// Salvaging load: drops a torn audit tail, falls back to `.prev`
    /// envelopes and rewrites the audit log to what survived.
    pub fn recover(dir: &Path) -> Result<(Registry, RecoveryReport), PersistError> {
        let mut report = RecoveryReport::default();
        let (mut audit, dropped) = read_audit(dir, true)?;
        report.audit_lines_dropped = dropped;

        let mut records = BTreeMap::new();
        let mut keep: BTreeMap<String, usize> = BTreeMap::new();
        for (id, entries) in group_audit(&audit) {
            let consistent = consistent_prefix(&id, &entries);
            if consistent == 0 {
                report.lost.push(id);
                continue;
            }
            let entries = &entries[..consistent];
            let state = replay(&id, entries).expect("prefix is consistent");
            let base = dir.join(RECORDS_DIR).join(format!("{id}.json"));
            let candidates = [(base.clone(), false), (with_suffix(&base, ".prev"), true)];
            let mut restored = None;
            for (path, is_prev) in candidates {
                let Ok(raw) = fs::read(&path) else { continue };
                let Ok(body) = decode_envelope(&raw) else {
                    continue;
                };
                if let Ok(rec) = assemble(dir, body, state, entries, Some(&id)) {
                    restored = Some((rec, is_prev));
                    break;
                }
            }
            match restored {
                Some((rec, is_prev)) => {
                    if is_prev {
                        report.restored_from_prev.push(id.clone());
                    }
                    keep.insert(id.clone(), entries.len());
                    records.insert(id, rec);
                }
                None => report.lost.push(id),
            }
        }

        let mut taken: BTreeMap<String, usize> = BTreeMap::new();
        let before = audit.len();
        audit.retain(|e| {
            let n = taken.entry(e.id.clone()).or_default();
            *n += 1;
            keep.get(&e.id).is_some_and(|&limit| *n <= limit)
        });
        report.audit_lines_dropped += before - audit.len();
        for id in list_records(dir)? {
            if !keep.contains_key(&id) && !report.lost.contains(&id) {
                report.uncommitted.push(id);
            }
        }

        let mut reg = Self::from_parts(records, audit);
        ensure_dirs(dir)?;
        let mut bytes = Vec::new();
        for e in &reg.audit {
            bytes.extend(serde_json::to_vec(e).expect("serializable"));
            bytes.push(b'\n');
        }
        WriteOp::Replace {
            path: dir.join(AUDIT_LOG),
            bytes,
            keep_prev: false,
        }
        .apply()?;
        reg.marks.dirty = reg.records.keys().cloned().collect();
        Ok((reg, report))
    }

    fn from_parts(records: BTreeMap<String, XAppRecord>, audit: Vec<AuditEntry>) -> Registry {
        let clock = audit.iter().map(|e| e.ts).max().unwrap_or(0);
        let marks = Marks {
            dirty: BTreeSet::new(),
            saved_reports: records
                .values()
                .flat_map(|r| r.reports.iter().map(|x| x.report_id.clone()))
                .collect(),
            saved_packages: records.keys().cloned().collect(),
            audit_saved: audit.len(),
        };
        Registry {
            records,
            audit,
            clock,
            marks,
        }
    }
}

/// Parses `audit.log`. With `salvage`, stops at the first bad line and
/// returns how many lines were skipped; otherwise any bad line is corruption.
fn read_audit(dir: &Path, salvage: bool) -> Result<(Vec<AuditEntry>, usize), PersistError> {
    let path = dir.join(AUDIT_LOG);
    let raw = match fs::read(&path) {
        Ok(r) => r,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(io_err(&path)(e)),
    };
    let mut out: Vec<AuditEntry> = Vec::new();
    let mut lines: Vec<&[u8]> = raw.split(|&b| b == b'\n').collect();
    let complete = raw.is_empty() || raw.ends_with(b"\n");
    if raw.ends_with(b"\n") || raw.is_empty() {
        lines.pop();
    }
    let total = lines.len();
    for (i, line) in lines.into_iter().enumerate() {
        let torn = !complete && i + 1 == total;
        let parsed = if torn {
            Err("line is not terminated".to_owned())
        } else {
            serde_json::from_slice::<AuditEntry>(line).map_err(|e| e.to_string())
        };
        let entry = parsed.and_then(|e| match out.last() {
            Some(prev) if e.ts <= prev.ts => Err(format!("timestamp {} does not advance", e.ts)),
            _ => Ok(e),
        });
        match entry {
            Ok(e) => out.push(e),
            Err(d) if salvage => {
                let _ = d;
                return Ok((out, total - i));
            }
            Err(d) => return Err(corrupt(format!("audit.log line {}: {d}", i + 1))),
        }
    }
    Ok((out, 0))
}

fn list_records(dir: &Path) -> Result<BTreeSet<String>, PersistError> {
    let path = dir.join(RECORDS_DIR);
    let entries = match fs::read_dir(&path) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeSet::new()),
        Err(e) => return Err(io_err(&path)(e)),
    };
    let mut out = BTreeSet::new();
    for e in entries {
        let e = e.map_err(io_err(&path))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".json") {
            out.insert(id.to_owned());
        }
    }
    Ok(out)
}

fn group_audit(audit: &[AuditEntry]) -> BTreeMap<String, Vec<AuditEntry>> {
    let mut out: BTreeMap<String, Vec<AuditEntry>> = BTreeMap::new();
    for e in audit {
        out.entry(e.id.clone()).or_default().push(e.clone());
    }
    out
}

/// Length of the longest prefix of `entries` that is a legal history.
fn consistent_prefix(id: &str, entries: &[AuditEntry]) -> usize {
    (0..=entries.len())
        .rev()
        .find(|&n| replay(id, &entries[..n]).is_ok())
        .unwrap_or(0)
}

/// Replays one record's audit entries from creation.
pub(super) fn replay(id: &str, entries: &[AuditEntry]) -> Result<LifecycleState, String> {
    let mut state: Option<LifecycleState> = None;
    for e in entries {
        let expected = match (state, e.event) {
            (None, AuditEvent::Submit) if e.from.is_none() => Some(LifecycleState::Submitted),
            (Some(s), AuditEvent::Lifecycle(ev)) if e.from == Some(s) && e.report.is_none() => {
                next_state(s, ev)
            }
            (Some(s), AuditEvent::ReportFiled)
                if e.from == Some(s)
                    && e.report.is_some()
                    && matches!(s, LifecycleState::Validating | LifecycleState::Testing) =>
            {
                Some(s)
            }
            _ => None,
        };
        if expected != Some(e.to) {
            return Err(format!(
                "record {id}: audit entry ts={} ({:?} --{}--> {}) does not follow the lifecycle",
                e.ts, e.from, e.event, e.to
            ));
        }
        state = expected;
    }
    state.ok_or_else(|| format!("record {id} has no audit entries"))
}

/// Rebuilds a record from its envelope body plus package and report files.
/// In salvage mode the body may be an older `.prev` copy.
fn assemble(
    dir: &Path,
    body: RecordBody,
    state: LifecycleState,
    entries: &[AuditEntry],
    salvage_for: Option<&str>,
) -> Result<XAppRecord, String> {
    let id = body.id.clone();
    if let Some(expected) = salvage_for {
        if expected != id {
            return Err(format!("envelope for {expected} holds record {id}"));
        }
    }
    let manifest = parse_manifest(&value_to_canonical_vec(&body.manifest))
        .map_err(|e| format!("record {id}: stored manifest does not parse: {e}"))?;
    let pkg_path = dir.join(PACKAGES_DIR).join(format!("{id}.xapp"));
    let pkg_raw = fs::read(&pkg_path).map_err(|e| format!("record {id}: package: {e}"))?;
    let package =
        PackageArchive::unpack(&pkg_raw).map_err(|e| format!("record {id}: package: {e}"))?;
    if package.digest() != body.package_digest || package.manifest() != manifest {
        return Err(format!("record {id}: package does not match the record"));
    }

    // The audit log decides which reports are committed. A record file may
    // list more when a persist died before its audit append.
    let report_ids: Vec<String> = entries.iter().filter_map(|e| e.report.clone()).collect();
    if salvage_for.is_none() && !body.report_ids.starts_with(&report_ids) {
        return Err(format!(
            "record {id}: file lists reports {:?}, audit log {report_ids:?}",
            body.report_ids
        ));
    }
    let mut reports: Vec<ConformanceReport> = Vec::new();
    for rid in &report_ids {
        let p = dir.join(REPORTS_DIR).join(format!("{rid}.json"));
        let raw = fs::read(&p).map_err(|e| format!("report {rid}: {e}"))?;
        let r = parse_report(&raw).map_err(|e| format!("report {rid}: {e}"))?;
        if r.record_id != id || r.report_id != *rid {
            return Err(format!("report {rid} does not belong to record {id}"));
        }
        reports.push(r);
    }
    if state.is_gated() && !reports.last().is_some_and(ConformanceReport::passed) {
        return Err(format!("record {id} is {state} without a passing report"));
    }
    Ok(XAppRecord {
        id,
        manifest,
        package,
        package_digest: body.package_digest,
        manifest_digest: body.manifest_digest,
        state,
        reports,
        submitted_at: entries.first().map_or(body.submitted_at, |e| e.ts),
        updated_at: entries.last().map_or(body.updated_at, |e| e.ts),
        version_lineage: body.version_lineage,
    })
}
