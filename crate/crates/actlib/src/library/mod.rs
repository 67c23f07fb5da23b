//! The persistent action library.
//!
//! Library file layout (UTF-8 JSON, one document):
//!
//! ```json
//! {
//!   "schema-version": 1,
//!   "staleness-threshold": 2,
//!   "records": [
//!     {
//!       "api": {"api-id": "...", "name": "...", "description": "...", "params": [...],
//!               "steps": [...], "website": "..."},
//!       "source": "dist-map" | "unravel" | "evolved",
//!       "provenance": ["<task>", ...],
//!       "created-at-ms": 1760000000000,
//!       "success-count": 0,
//!       "failure-streak": 0,
//!       "stale": false,
//!       "members": [{"task": "<task>", "script": {<script fields>}}]
//!     }
//!   ]
//! }
//! ```
//!
//! Records are written sorted by `api-id`. Writes go to a temporary file in
//! the target directory which is then renamed over the destination.

mod synthesis;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use actlib_core::staleness::{is_stale, ExecutionStats, Outcome, DEFAULT_STALENESS_THRESHOLD};
use actlib_core::{validate_api, ActionApi, ActionScript, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;

pub use synthesis::{
    build_library, cluster_tasks, integrate_trace, synthesize_api, BuildReport, Integration, IntegrationKind,
    TaskCluster,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApiSource {
    DistMap,
    Unravel,
    Evolved,
}

/// A concrete script the api was synthesized from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Member {
    pub task: String,
    pub script: ActionScript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ApiRecord {
    pub api: ActionApi,
    pub source: ApiSource,
    pub provenance: Vec<String>,
    pub created_at_ms: u64,
    pub success_count: u64,
    pub failure_streak: u32,
    pub stale: bool,
    #[serde(default)]
    pub members: Vec<Member>,
}

impl ApiRecord {
    pub fn stats(&self) -> ExecutionStats {
        ExecutionStats { success_count: self.success_count, failure_streak: self.failure_streak, stale: self.stale }
    }

    fn set_stats(&mut self, s: ExecutionStats) {
        self.success_count = s.success_count;
        self.failure_streak = s.failure_streak;
        self.stale = s.stale;
    }
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("unknown api id {0:?}")]
    UnknownApiId(String),
    #[error("an api named {name:?} already exists for {website}")]
    NameCollision { website: String, name: String },
    #[error("invalid api: {0}")]
    InvalidApi(String),
    #[error("unsupported library schema-version {0}")]
    UnsupportedSchemaVersion(u64),
    #[error("corrupt library file: {0}")]
    CorruptFile(String),
    #[error("library io: {0}")]
    Io(String),
    #[error("synthesis incomplete: {0}")]
    SynthesisIncomplete(String),
    #[error("unusable LLM reply: {0}")]
    LlmReplyUnparseable(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryStore {
    pub staleness_threshold: u32,
    records: BTreeMap<String, ApiRecord>,
}

impl Default for LibraryStore {
    fn default() -> Self {
        Self::new(DEFAULT_STALENESS_THRESHOLD)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct LibraryFile {
    schema_version: u32,
    staleness_threshold: u32,
    records: Vec<ApiRecord>,
}

impl LibraryStore {
    pub fn new(staleness_threshold: u32) -> Self {
        Self { staleness_threshold, records: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, api_id: &str) -> Option<&ApiRecord> {
        self.records.get(api_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &ApiRecord> {
        self.records.values()
    }

    pub fn for_website<'a>(&'a self, website: &'a str) -> impl Iterator<Item = &'a ApiRecord> + 'a {
        self.records.values().filter(move |r| r.api.website == website)
    }

    pub fn find_by_name(&self, website: &str, name: &str) -> Option<&ApiRecord> {
        self.records.values().find(|r| r.api.website == website && r.api.name == name)
    }

    /// Website → api ids.
    pub fn website_index(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut idx: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (id, r) in &self.records {
            idx.entry(r.api.website.as_str()).or_default().push(id.as_str());
        }
        idx
    }

    fn fresh_id(&self, website: &str, name: &str) -> String {
        let base = format!("{website}/{name}");
        let mut id = base.clone();
        let mut n = 2;
        while self.records.contains_key(&id) {
            id = format!("{base}-{n}");
            n += 1;
        }
        id
    }

    fn check_api(&self, api: &ActionApi, replacing: Option<&str>) -> Result<(), LibraryError> {
        let report = validate_api(api);
        if !report.is_ok() {
            return Err(LibraryError::InvalidApi(report.to_string()));
        }
        if let Some(other) = self.find_by_name(&api.website, &api.name) {
            if Some(other.api.api_id.as_str()) != replacing {
                return Err(LibraryError::NameCollision { website: api.website.clone(), name: api.name.clone() });
            }
        }
        Ok(())
    }

    /// Adds a new record; the api id is derived from website and name.
    pub fn insert(
        &mut self,
        mut api: ActionApi,
        source: ApiSource,
        members: Vec<Member>,
    ) -> Result<String, LibraryError> {
        self.check_api(&api, None)?;
        let id = self.fresh_id(&api.website, &api.name);
        api.api_id = id.clone();
        let record = ApiRecord {
            api,
            source,
            provenance: members.iter().map(|m| m.task.clone()).collect(),
            created_at_ms: crate::executor::now_ms(),
            success_count: 0,
            failure_streak: 0,
            stale: false,
            members,
        };
        self.records.insert(id.clone(), record);
        Ok(id)
    }

    /// Replaces the api of an existing record, keeping its id.
    fn replace(
        &mut self,
        api_id: &str,
        mut api: ActionApi,
        members: Vec<Member>,
        new_task: &str,
    ) -> Result<(), LibraryError> {
        if !self.records.contains_key(api_id) {
            return Err(LibraryError::UnknownApiId(api_id.into()));
        }
        api.api_id = api_id.into();
        self.check_api(&api, Some(api_id))?;
        let r = self.records.get_mut(api_id).expect("checked above");
        r.api = api;
        r.source = ApiSource::Evolved;
        r.provenance.push(new_task.into());
        r.members = members;
        r.set_stats(ExecutionStats::default());
        Ok(())
    }

    pub fn record_execution_outcome(&mut self, api_id: &str, outcome: Outcome) -> Result<&ApiRecord, LibraryError> {
        let threshold = self.staleness_threshold;
        let r = self.records.get_mut(api_id).ok_or_else(|| LibraryError::UnknownApiId(api_id.into()))?;
        let mut stats = r.stats();
        stats.record(outcome, threshold);
        r.set_stats(stats);
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        let file = LibraryFile {
            schema_version: SCHEMA_VERSION,
            staleness_threshold: self.staleness_threshold,
            records: self.records.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("library serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LibraryError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| LibraryError::CorruptFile(e.to_string()))?;
        let version = value
            .get("schema-version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| LibraryError::CorruptFile("missing schema-version".into()))?;
        if version != u64::from(SCHEMA_VERSION) {
            return Err(LibraryError::UnsupportedSchemaVersion(version));
        }
        let file: LibraryFile = serde_json::from_value(value).map_err(|e| LibraryError::CorruptFile(e.to_string()))?;
        let mut store = Self::new(file.staleness_threshold);
        for r in file.records {
            let id = r.api.api_id.clone();
            if store.records.contains_key(&id) {
                return Err(LibraryError::CorruptFile(format!("duplicate api-id {id}")));
            }
            if store.find_by_name(&r.api.website, &r.api.name).is_some() {
                return Err(LibraryError::CorruptFile(format!(
                    "duplicate api name {} for {}",
                    r.api.name, r.api.website
                )));
            }
            if r.stale != is_stale(r.failure_streak, store.staleness_threshold) {
                log::warn!("record {id}: stale flag disagrees with failure-streak");
            }
            store.records.insert(id, r);
        }
        Ok(store)
    }
}

pub fn save_library(store: &LibraryStore, path: impl AsRef<Path>) -> Result<(), LibraryError> {
    let path = path.as_ref();
    let io = |e: std::io::Error| LibraryError::Io(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(store.to_json().as_bytes()).map_err(io)?;
    tmp.write_all(b"\n").map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn load_library(path: impl AsRef<Path>) -> Result<LibraryStore, LibraryError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| LibraryError::Io(format!("{}: {e}", path.display())))?;
    LibraryStore::from_json(&text)
}
