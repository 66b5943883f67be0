//! xApp manifest documents: strict parsing, validation and canonical encoding.
//!
//! Parsing is structural. It rejects documents that are not JSON objects, carry
//! unknown keys, have values of the wrong JSON type, or contain version strings
//! that are not semantic versions. Everything else (missing required fields,
//! out-of-domain message types, non-positive resources, bad names) survives
//! parsing and is reported by [`validate_manifest`], so that a developer gets the
//! full list of problems in one report.

use std::collections::BTreeSet;
use std::fmt;

use semver::Version;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::canonical::value_to_canonical_vec;
use crate::mtype::{Mtype, MTYPE_LIMIT};

pub const DEFAULT_LIVENESS_PERIOD_MS: i64 = 1000;
pub const DEFAULT_FAILURE_THRESHOLD: i64 = 3;
pub const MAX_NAME_LEN: usize = 63;

/// Top-level keys accepted in a manifest document.
pub const TOP_LEVEL_KEYS: [&str; 13] = [
    "name",
    "version",
    "author",
    "license",
    "contact",
    "ric_compat",
    "resources",
    "rx_mtypes",
    "tx_mtypes",
    "service_models",
    "health",
    "dependencies",
    "security",
];

/// Top-level keys a valid manifest must carry.
pub const REQUIRED_KEYS: [&str; 8] = [
    "name",
    "version",
    "author",
    "license",
    "ric_compat",
    "resources",
    "rx_mtypes",
    "tx_mtypes",
];

pub const KNOWN_SERVICE_MODELS: [&str; 2] = ["KPM", "RC"];

/// Half-open semantic version range `[min, max)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionRange {
    pub min: Version,
    pub max: Version,
}

impl VersionRange {
    pub fn contains(&self, v: &Version) -> bool {
        *v >= self.min && *v < self.max
    }

    fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("min".into(), Value::String(self.min.to_string()));
        m.insert("max".into(), Value::String(self.max.to_string()));
        Value::Object(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resources {
    pub cpu_millicores: i64,
    pub memory_mib: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HealthProbe {
    pub liveness_period_ms: i64,
    pub failure_threshold: i64,
}

impl Default for HealthProbe {
    fn default() -> Self {
        Self {
            liveness_period_ms: DEFAULT_LIVENESS_PERIOD_MS,
            failure_threshold: DEFAULT_FAILURE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dependency {
    pub name: String,
    pub version: VersionRange,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Security {
    pub allow_external_endpoints: bool,
}

/// A parsed manifest with defaults applied.
///
/// Required top-level fields are optional here: absence is a validation
/// violation, not a parse error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XAppManifest {
    pub name: Option<String>,
    pub version: Option<Version>,
    pub author: Option<String>,
    pub license: Option<String>,
    pub contact: Option<String>,
    pub ric_compat: Option<VersionRange>,
    pub resources: Option<Resources>,
    pub rx_mtypes: Option<BTreeSet<i64>>,
    pub tx_mtypes: Option<BTreeSet<i64>>,
    pub service_models: BTreeSet<String>,
    pub health: HealthProbe,
    pub dependencies: Vec<Dependency>,
    pub security: Security,
}

impl XAppManifest {
    pub fn name_str(&self) -> &str {
        self.name.as_deref().unwrap_or("")
    }

    pub fn version_string(&self) -> String {
        self.version
            .as_ref()
            .map(|v| v.to_string())
            .unwrap_or_default()
    }

    /// Declared receive types that lie inside the mtype domain.
    pub fn declared_rx(&self) -> BTreeSet<Mtype> {
        in_domain(self.rx_mtypes.as_ref())
    }

    /// Declared transmit types that lie inside the mtype domain.
    pub fn declared_tx(&self) -> BTreeSet<Mtype> {
        in_domain(self.tx_mtypes.as_ref())
    }

    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        let put_str = |m: &mut Map<String, Value>, k: &str, v: &Option<String>| {
            if let Some(s) = v {
                m.insert(k.into(), Value::String(s.clone()));
            }
        };
        put_str(&mut m, "name", &self.name);
        if let Some(v) = &self.version {
            m.insert("version".into(), Value::String(v.to_string()));
        }
        put_str(&mut m, "author", &self.author);
        put_str(&mut m, "license", &self.license);
        put_str(&mut m, "contact", &self.contact);
        if let Some(r) = &self.ric_compat {
            m.insert("ric_compat".into(), r.to_value());
        }
        if let Some(r) = &self.resources {
            m.insert(
                "resources".into(),
                serde_json::json!({"cpu_millicores": r.cpu_millicores, "memory_mib": r.memory_mib}),
            );
        }
        if let Some(s) = &self.rx_mtypes {
            m.insert("rx_mtypes".into(), s.iter().copied().collect());
        }
        if let Some(s) = &self.tx_mtypes {
            m.insert("tx_mtypes".into(), s.iter().copied().collect());
        }
        m.insert(
            "service_models".into(),
            self.service_models.iter().cloned().collect(),
        );
        m.insert(
            "health".into(),
            serde_json::json!({
                "liveness_period_ms": self.health.liveness_period_ms,
                "failure_threshold": self.health.failure_threshold,
            }),
        );
        m.insert(
            "dependencies".into(),
            self.dependencies
                .iter()
                .map(|d| serde_json::json!({"name": d.name, "version": d.version.to_value()}))
                .collect(),
        );
        m.insert(
            "security".into(),
            serde_json::json!({"allow_external_endpoints": self.security.allow_external_endpoints}),
        );
        Value::Object(m)
    }
}

fn in_domain(set: Option<&BTreeSet<i64>>) -> BTreeSet<Mtype> {
    set.into_iter()
        .flatten()
        .filter_map(|&t| Mtype::from_i64(t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    MalformedDocument,
    UnknownTopLevelField,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?} at `{path}`: {detail}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub path: String,
    pub detail: String,
}

impl ParseError {
    fn malformed(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            kind: ParseErrorKind::MalformedDocument,
            path: path.into(),
            detail: detail.into(),
        }
    }
}

/// Parses a UTF-8 JSON manifest document.
pub fn parse_manifest(raw: &[u8]) -> Result<XAppManifest, ParseError> {
    let text = std::str::from_utf8(raw)
        .map_err(|e| ParseError::malformed("", format!("not UTF-8: {e}")))?;
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| ParseError::malformed("", format!("invalid JSON: {e}")))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| ParseError::malformed("", "document is not a JSON object"))?;

    let mut keys: Vec<&String> = obj.keys().collect();
    keys.sort();
    if let Some(unknown) = keys.iter().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
        return Err(ParseError {
            kind: ParseErrorKind::UnknownTopLevelField,
            path: (*unknown).clone(),
            detail: format!("`{unknown}` is not a manifest field"),
        });
    }

    let health = match obj.get("health") {
        None => HealthProbe::default(),
        Some(v) => {
            let h = object(v, "health", &["liveness_period_ms", "failure_threshold"])?;
            HealthProbe {
                liveness_period_ms: opt_int(h, "health", "liveness_period_ms")?
                    .unwrap_or(DEFAULT_LIVENESS_PERIOD_MS),
                failure_threshold: opt_int(h, "health", "failure_threshold")?
                    .unwrap_or(DEFAULT_FAILURE_THRESHOLD),
            }
        }
    };

    let security = match obj.get("security") {
        None => Security::default(),
        Some(v) => {
            let s = object(v, "security", &["allow_external_endpoints"])?;
            let allow = match s.get("allow_external_endpoints") {
                None => false,
                Some(Value::Bool(b)) => *b,
                Some(_) => {
                    return Err(ParseError::malformed(
                        "security.allow_external_endpoints",
                        "expected a boolean",
                    ))
                }
            };
            Security {
                allow_external_endpoints: allow,
            }
        }
    };

    let resources = match obj.get("resources") {
        None => None,
        Some(v) => {
            let r = object(v, "resources", &["cpu_millicores", "memory_mib"])?;
            Some(Resources {
                cpu_millicores: req_int(r, "resources", "cpu_millicores")?,
                memory_mib: req_int(r, "resources", "memory_mib")?,
            })
        }
    };

    let service_models = match obj.get("service_models") {
        None => BTreeSet::new(),
        Some(v) => array(v, "service_models")?
            .iter()
            .enumerate()
            .map(|(i, item)| {
                item.as_str().map(str::to_owned).ok_or_else(|| {
                    ParseError::malformed(format!("service_models[{i}]"), "expected a string")
                })
            })
            .collect::<Result<_, _>>()?,
    };

    let dependencies = match obj.get("dependencies") {
        None => Vec::new(),
        Some(v) => array(v, "dependencies")?
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let path = format!("dependencies[{i}]");
                let d = object(item, &path, &["name", "version"])?;
                let name = d
                    .get("name")
                    .and_then(Value::as_str)
                    .ok_or_else(|| {
                        ParseError::malformed(format!("{path}.name"), "expected a string")
                    })?
                    .to_owned();
                let range = d.get("version").ok_or_else(|| {
                    ParseError::malformed(format!("{path}.version"), "missing version range")
                })?;
                Ok(Dependency {
                    name,
                    version: version_range(range, &format!("{path}.version"))?,
                })
            })
            .collect::<Result<_, ParseError>>()?,
    };

    Ok(XAppManifest {
        name: opt_str(obj, "name")?,
        version: obj
            .get("version")
            .map(|v| semver_value(v, "version"))
            .transpose()?,
        author: opt_str(obj, "author")?,
        license: opt_str(obj, "license")?,
        contact: opt_str(obj, "contact")?,
        ric_compat: obj
            .get("ric_compat")
            .map(|v| version_range(v, "ric_compat"))
            .transpose()?,
        resources,
        rx_mtypes: obj
            .get("rx_mtypes")
            .map(|v| int_set(v, "rx_mtypes"))
            .transpose()?,
        tx_mtypes: obj
            .get("tx_mtypes")
            .map(|v| int_set(v, "tx_mtypes"))
            .transpose()?,
        service_models,
        health,
        dependencies,
        security,
    })
}

fn object<'a>(
    v: &'a Value,
    path: &str,
    allowed: &[&str],
) -> Result<&'a Map<String, Value>, ParseError> {
    let m = v
        .as_object()
        .ok_or_else(|| ParseError::malformed(path, "expected an object"))?;
    let mut keys: Vec<&String> = m.keys().collect();
    keys.sort();
    if let Some(k) = keys.into_iter().find(|k| !allowed.contains(&k.as_str())) {
        return Err(ParseError::malformed(
            format!("{path}.{k}"),
            "unknown field",
        ));
    }
    Ok(m)
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, ParseError> {
    v.as_array()
        .ok_or_else(|| ParseError::malformed(path, "expected an array"))
}

fn opt_str(obj: &Map<String, Value>, key: &str) -> Result<Option<String>, ParseError> {
    match obj.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(ParseError::malformed(key, "expected a string")),
    }
}

fn int(v: &Value, path: &str) -> Result<i64, ParseError> {
    v.as_i64()
        .ok_or_else(|| ParseError::malformed(path, "expected an integer"))
}

fn opt_int(obj: &Map<String, Value>, parent: &str, key: &str) -> Result<Option<i64>, ParseError> {
    obj.get(key)
        .map(|v| int(v, &format!("{parent}.{key}")))
        .transpose()
}

fn req_int(obj: &Map<String, Value>, parent: &str, key: &str) -> Result<i64, ParseError> {
    opt_int(obj, parent, key)?
        .ok_or_else(|| ParseError::malformed(format!("{parent}.{key}"), "missing field"))
}

fn int_set(v: &Value, path: &str) -> Result<BTreeSet<i64>, ParseError> {
    array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, item)| int(item, &format!("{path}[{i}]")))
        .collect()
}

fn semver_value(v: &Value, path: &str) -> Result<Version, ParseError> {
    let s = v
        .as_str()
        .ok_or_else(|| ParseError::malformed(path, "expected a version string"))?;
    Version::parse(s)
        .map_err(|e| ParseError::malformed(path, format!("`{s}` is not a semantic version: {e}")))
}

fn version_range(v: &Value, path: &str) -> Result<VersionRange, ParseError> {
    let m = object(v, path, &["min", "max"])?;
    let get = |k: &str| {
        m.get(k)
            .ok_or_else(|| ParseError::malformed(format!("{path}.{k}"), "missing field"))
            .and_then(|v| semver_value(v, &format!("{path}.{k}")))
    };
    Ok(VersionRange {
        min: get("min")?,
        max: get("max")?,
    })
}

/// Canonical manifest bytes: sorted keys, sorted sets, no whitespace.
pub fn canonicalize(m: &XAppManifest) -> Vec<u8> {
    value_to_canonical_vec(&m.to_value())
}

/// Hex SHA-256 of the canonical manifest bytes.
pub fn manifest_digest(m: &XAppManifest) -> String {
    hex::encode(Sha256::digest(canonicalize(m)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    MalformedDocument,
    UnknownField,
    MissingField,
    NameFormat,
    LicenseFormat,
    ContactFormat,
    RicCompatRange,
    CompatRicVersion,
    ResourceNotPositive,
    MtypeDomain,
    ServiceModelUnknown,
    ServiceModelUnsupported,
    HealthNotPositive,
    DependencyInvalid,
    DependencyUnresolved,
}

impl ViolationCode {
    pub fn severity(self) -> Severity {
        match self {
            ViolationCode::ServiceModelUnsupported | ViolationCode::DependencyUnresolved => {
                Severity::Warning
            }
            _ => Severity::Error,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::MalformedDocument => "MALFORMED_DOCUMENT",
            ViolationCode::UnknownField => "UNKNOWN_FIELD",
            ViolationCode::MissingField => "MISSING_FIELD",
            ViolationCode::NameFormat => "NAME_FORMAT",
            ViolationCode::LicenseFormat => "LICENSE_FORMAT",
            ViolationCode::ContactFormat => "CONTACT_FORMAT",
            ViolationCode::RicCompatRange => "RIC_COMPAT_RANGE",
            ViolationCode::CompatRicVersion => "COMPAT_RIC_VERSION",
            ViolationCode::ResourceNotPositive => "RESOURCE_NOT_POSITIVE",
            ViolationCode::MtypeDomain => "MTYPE_DOMAIN",
            ViolationCode::ServiceModelUnknown => "SERVICE_MODEL_UNKNOWN",
            ViolationCode::ServiceModelUnsupported => "SERVICE_MODEL_UNSUPPORTED",
            ViolationCode::HealthNotPositive => "HEALTH_NOT_POSITIVE",
            ViolationCode::DependencyInvalid => "DEPENDENCY_INVALID",
            ViolationCode::DependencyUnresolved => "DEPENDENCY_UNRESOLVED",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub severity: Severity,
    pub path: String,
    pub detail: String,
}

impl Violation {
    pub fn new(code: ViolationCode, path: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            code,
            severity: code.severity(),
            path: path.into(),
            detail: detail.into(),
        }
    }
}

impl From<ParseError> for Violation {
    fn from(e: ParseError) -> Self {
        let code = match e.kind {
            ParseErrorKind::MalformedDocument => ViolationCode::MalformedDocument,
            ParseErrorKind::UnknownTopLevelField => ViolationCode::UnknownField,
        };
        Violation::new(code, e.path, e.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl ValidationResult {
    pub fn from_violations(violations: Vec<Violation>) -> Self {
        let valid = violations.iter().all(|v| v.severity != Severity::Error);
        Self { valid, violations }
    }

    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| v.severity == Severity::Error)
    }
}

/// The RIC a manifest is checked against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RicProfile {
    pub ric_version: Version,
}

impl Default for RicProfile {
    fn default() -> Self {
        Self {
            ric_version: Version::new(1, 4, 0),
        }
    }
}

/// Checks every manifest invariant. Pure and deterministic.
pub fn validate_manifest(m: &XAppManifest, profile: &RicProfile) -> ValidationResult {
    let mut out = Vec::new();
    let mut v = |code, path: &str, detail: String| out.push(Violation::new(code, path, detail));

    for key in ["name", "author", "license"] {
        let value = match key {
            "name" => &m.name,
            "author" => &m.author,
            _ => &m.license,
        };
        match value {
            None => v(
                ViolationCode::MissingField,
                key,
                format!("required field `{key}` is absent"),
            ),
            Some(s) if s.trim().is_empty() => v(
                ViolationCode::MissingField,
                key,
                format!("required field `{key}` is empty"),
            ),
            Some(_) => {}
        }
    }
    if let Some(name) = m.name.as_deref().filter(|s| !s.trim().is_empty()) {
        if !is_dns_label(name) {
            v(
                ViolationCode::NameFormat,
                "name",
                format!("`{name}` is not a DNS label (lowercase alphanumerics and '-', at most {MAX_NAME_LEN} chars)"),
            );
        }
    }
    if let Some(lic) = m.license.as_deref().filter(|s| !s.trim().is_empty()) {
        if !is_spdx_expression(lic) {
            v(
                ViolationCode::LicenseFormat,
                "license",
                format!("`{lic}` is not an SPDX-style identifier"),
            );
        }
    }
    if m.version.is_none() {
        v(
            ViolationCode::MissingField,
            "version",
            "required field `version` is absent".into(),
        );
    }
    if let Some(contact) = &m.contact {
        if !is_email_shaped(contact) {
            v(
                ViolationCode::ContactFormat,
                "contact",
                format!("`{contact}` is not an email address"),
            );
        }
    }

    match &m.ric_compat {
        None => v(
            ViolationCode::MissingField,
            "ric_compat",
            "required field `ric_compat` is absent".into(),
        ),
        Some(range) if range.min >= range.max => v(
            ViolationCode::RicCompatRange,
            "ric_compat",
            format!("min {} is not below max {}", range.min, range.max),
        ),
        Some(range) if !range.contains(&profile.ric_version) => v(
            ViolationCode::CompatRicVersion,
            "ric_compat",
            format!(
                "RIC version {} is outside [{}, {})",
                profile.ric_version, range.min, range.max
            ),
        ),
        Some(_) => {}
    }

    match &m.resources {
        None => v(
            ViolationCode::MissingField,
            "resources",
            "required field `resources` is absent".into(),
        ),
        Some(r) => {
            if r.cpu_millicores <= 0 {
                v(
                    ViolationCode::ResourceNotPositive,
                    "resources.cpu_millicores",
                    format!("{} is not positive", r.cpu_millicores),
                );
            }
            if r.memory_mib <= 0 {
                v(
                    ViolationCode::ResourceNotPositive,
                    "resources.memory_mib",
                    format!("{} is not positive", r.memory_mib),
                );
            }
        }
    }

    for key in ["rx_mtypes", "tx_mtypes"] {
        let set = if key == "rx_mtypes" {
            &m.rx_mtypes
        } else {
            &m.tx_mtypes
        };
        match set {
            None => v(
                ViolationCode::MissingField,
                key,
                format!("required field `{key}` is absent"),
            ),
            Some(set) => {
                for (i, t) in set.iter().enumerate() {
                    if !(0..MTYPE_LIMIT).contains(t) {
                        v(
                            ViolationCode::MtypeDomain,
                            &format!("{key}[{i}]"),
                            format!("{t} is outside [0, 2^31)"),
                        );
                    }
                }
            }
        }
    }

    for (i, sm) in m.service_models.iter().enumerate() {
        let path = format!("service_models[{i}]");
        if sm == "RC" {
            v(
                ViolationCode::ServiceModelUnsupported,
                &path,
                "RC is accepted but control actions are not supported at runtime".into(),
            );
        } else if !KNOWN_SERVICE_MODELS.contains(&sm.as_str()) {
            v(
                ViolationCode::ServiceModelUnknown,
                &path,
                format!("unknown service model `{sm}`"),
            );
        }
    }

    if m.health.liveness_period_ms <= 0 {
        v(
            ViolationCode::HealthNotPositive,
            "health.liveness_period_ms",
            format!("{} is not positive", m.health.liveness_period_ms),
        );
    }
    if m.health.failure_threshold < 1 {
        v(
            ViolationCode::HealthNotPositive,
            "health.failure_threshold",
            format!("{} is below 1", m.health.failure_threshold),
        );
    }

    for (i, d) in m.dependencies.iter().enumerate() {
        if !is_dns_label(&d.name) {
            v(
                ViolationCode::DependencyInvalid,
                &format!("dependencies[{i}].name"),
                format!("`{}` is not a valid xApp name", d.name),
            );
        }
        if d.version.min >= d.version.max {
            v(
                ViolationCode::DependencyInvalid,
                &format!("dependencies[{i}].version"),
                format!("min {} is not below max {}", d.version.min, d.version.max),
            );
        }
    }

    ValidationResult::from_violations(out)
}

/// Parses then validates a raw document, folding parse errors into violations.
pub fn assess_document(
    raw: &[u8],
    profile: &RicProfile,
) -> (Option<XAppManifest>, ValidationResult) {
    match parse_manifest(raw) {
        Ok(m) => {
            let result = validate_manifest(&m, profile);
            (Some(m), result)
        }
        Err(e) => (None, ValidationResult::from_violations(vec![e.into()])),
    }
}

pub fn is_dns_label(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= MAX_NAME_LEN
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        && !s.starts_with('-')
        && !s.ends_with('-')
}

fn is_spdx_expression(s: &str) -> bool {
    let ident = |t: &str| {
        !t.is_empty()
            && t.bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'-' || b == b'+')
    };
    let tokens: Vec<&str> = s
        .split(' ')
        .map(|t| t.trim_matches(|c| c == '(' || c == ')'))
        .collect();
    tokens.iter().enumerate().all(|(i, t)| {
        if i % 2 == 1 {
            matches!(*t, "AND" | "OR" | "WITH")
        } else {
            ident(t)
        }
    }) && tokens.len() % 2 == 1
}

fn is_email_shaped(s: &str) -> bool {
    let mut parts = s.split('@');
    let (Some(local), Some(domain), None) = (parts.next(), parts.next(), parts.next()) else {
        return false;
    };
    !local.is_empty()
        && !local.chars().any(char::is_whitespace)
        && domain.contains('.')
        && !domain.starts_with('.')
        && !domain.ends_with('.')
        && !domain.chars().any(char::is_whitespace)
}
