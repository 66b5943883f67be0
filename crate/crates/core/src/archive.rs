//! xApp package archives.
//!
//! A package is an uncompressed ustar archive holding `manifest.json`,
//! `behavior.json` and optional files under `assets/`. [`PackageArchive::pack`]
//! writes entries in sorted order with zeroed ownership and timestamps, so the
//! same contents always produce the same bytes.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::{Component, Path};

use sha2::{Digest, Sha256};

use crate::manifest::{canonicalize, parse_manifest, ParseError, XAppManifest};
use crate::pseudo_ric::{BehaviorScript, ScriptError};

pub const MANIFEST_ENTRY: &str = "manifest.json";
pub const BEHAVIOR_ENTRY: &str = "behavior.json";
pub const ASSETS_DIR: &str = "assets";
pub const MAX_ARCHIVE_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("archive is not a readable tar container: {0}")]
    Container(String),
    #[error("archive is missing `{0}`")]
    MissingEntry(&'static str),
    #[error("archive entry `{0}` is not allowed")]
    UnexpectedEntry(String),
    #[error("archive entry `{0}` appears twice")]
    DuplicateEntry(String),
    #[error("archive exceeds {MAX_ARCHIVE_BYTES} bytes")]
    TooLarge,
    #[error("manifest.json does not parse: {0}")]
    Manifest(#[from] ParseError),
    #[error("behavior.json does not parse: {0}")]
    Behavior(#[from] ScriptError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackageArchive {
    pub manifest_bytes: Vec<u8>,
    pub behavior_script: BehaviorScript,
    pub assets: BTreeMap<String, Vec<u8>>,
}

impl PackageArchive {
    /// Builds a package, checking that both documents parse.
    pub fn new(
        manifest_bytes: Vec<u8>,
        behavior_bytes: &[u8],
        assets: BTreeMap<String, Vec<u8>>,
    ) -> Result<Self, ArchiveError> {
        parse_manifest(&manifest_bytes)?;
        let behavior_script = BehaviorScript::parse(behavior_bytes)?;
        for name in assets.keys() {
            check_asset_name(name)?;
        }
        Ok(Self {
            manifest_bytes,
            behavior_script,
            assets,
        })
    }

    pub fn manifest(&self) -> XAppManifest {
        parse_manifest(&self.manifest_bytes).expect("checked at construction")
    }

    /// Hex SHA-256 identifying the package contents.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"xapp-package-v1\n");
        h.update(canonicalize(&self.manifest()));
        h.update(b"\n");
        h.update(self.behavior_script.to_json());
        for (name, bytes) in &self.assets {
            h.update(b"\n");
            h.update(name.as_bytes());
            h.update((bytes.len() as u64).to_be_bytes());
            h.update(bytes);
        }
        hex::encode(h.finalize())
    }

    /// Record id: the first 16 hex digits of the package digest.
    pub fn record_id(&self) -> String {
        self.digest()[..16].to_owned()
    }

    pub fn pack(&self) -> Vec<u8> {
        let mut builder = tar::Builder::new(Vec::new());
        let mut put = |path: &str, data: &[u8]| {
            let mut header = tar::Header::new_ustar();
            header.set_size(data.len() as u64);
            header.set_mode(0o644);
            header.set_mtime(0);
            header.set_uid(0);
            header.set_gid(0);
            header.set_entry_type(tar::EntryType::Regular);
            builder
                .append_data(&mut header, path, data)
                .expect("in-memory tar write");
        };
        put(BEHAVIOR_ENTRY, &self.behavior_script.to_json());
        put(MANIFEST_ENTRY, &self.manifest_bytes);
        for (name, data) in &self.assets {
            put(&format!("{ASSETS_DIR}/{name}"), data);
        }
        builder.into_inner().expect("in-memory tar finish")
    }

    pub fn unpack(bytes: &[u8]) -> Result<Self, ArchiveError> {
        if bytes.len() > MAX_ARCHIVE_BYTES {
            return Err(ArchiveError::TooLarge);
        }
        let mut archive = tar::Archive::new(Cursor::new(bytes));
        let mut manifest = None;
        let mut behavior = None;
        let mut assets = BTreeMap::new();
        let entries = archive
            .entries()
            .map_err(|e| ArchiveError::Container(e.to_string()))?;
        for entry in entries {
            let mut entry = entry.map_err(|e| ArchiveError::Container(e.to_string()))?;
            let kind = entry.header().entry_type();
            let path = entry
                .path()
                .map_err(|e| ArchiveError::Container(e.to_string()))?
                .into_owned();
            let path = normalize(&path)?;
            if kind.is_dir() {
                if path.is_empty() || path == ASSETS_DIR || path.starts_with("assets/") {
                    continue;
                }
                return Err(ArchiveError::UnexpectedEntry(path));
            }
            if !kind.is_file() {
                return Err(ArchiveError::UnexpectedEntry(path));
            }
            let mut data = Vec::new();
            entry
                .read_to_end(&mut data)
                .map_err(|e| ArchiveError::Container(e.to_string()))?;
            let slot = match path.as_str() {
                MANIFEST_ENTRY => &mut manifest,
                BEHAVIOR_ENTRY => &mut behavior,
                p => match p.strip_prefix("assets/") {
                    Some(name) if !name.is_empty() => {
                        if assets.insert(name.to_owned(), data).is_some() {
                            return Err(ArchiveError::DuplicateEntry(path));
                        }
                        continue;
                    }
                    _ => return Err(ArchiveError::UnexpectedEntry(path)),
                },
            };
            if slot.replace(data).is_some() {
                return Err(ArchiveError::DuplicateEntry(path));
            }
        }
        let manifest = manifest.ok_or(ArchiveError::MissingEntry(MANIFEST_ENTRY))?;
        let behavior = behavior.ok_or(ArchiveError::MissingEntry(BEHAVIOR_ENTRY))?;
        Self::new(manifest, &behavior, assets)
    }

    /// Reads `manifest.json`, `behavior.json` and `assets/**` from a directory.
    pub fn from_dir(dir: &Path) -> Result<Self, ArchiveError> {
        let manifest = std::fs::read(dir.join(MANIFEST_ENTRY)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ArchiveError::MissingEntry(MANIFEST_ENTRY),
            _ => e.into(),
        })?;
        let behavior = std::fs::read(dir.join(BEHAVIOR_ENTRY)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ArchiveError::MissingEntry(BEHAVIOR_ENTRY),
            _ => e.into(),
        })?;
        let mut assets = BTreeMap::new();
        let root = dir.join(ASSETS_DIR);
        if root.is_dir() {
            collect_assets(&root, &root, &mut assets)?;
        }
        Self::new(manifest, &behavior, assets)
    }
}

fn collect_assets(
    root: &Path,
    dir: &Path,
    out: &mut BTreeMap<String, Vec<u8>>,
) -> Result<(), ArchiveError> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_assets(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("walked from root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            out.insert(rel, std::fs::read(&path)?);
        }
    }
    Ok(())
}

fn normalize(path: &Path) -> Result<String, ArchiveError> {
    let mut parts = Vec::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::Normal(s) => parts.push(s.to_string_lossy().into_owned()),
            _ => return Err(ArchiveError::UnexpectedEntry(path.display().to_string())),
        }
    }
    Ok(parts.join("/"))
}

fn check_asset_name(name: &str) -> Result<(), ArchiveError> {
    let ok = !name.is_empty()
        && name
            .split('/')
            .all(|seg| !seg.is_empty() && seg != "." && seg != "..");
    if ok {
        Ok(())
    } else {
        Err(ArchiveError::UnexpectedEntry(format!("assets/{name}")))
    }
}
