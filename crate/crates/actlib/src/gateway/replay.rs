//! Deterministic record/replay provider.
//!
//! Fixture directory layout: every `*.json` file directly inside the
//! directory holds either one [`Fixture`] object or an array of them. A
//! fixture's key is recomputed from its `template` and `slots`, so file
//! names are informational (the recorder names files `<key>.json`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{prompt_key, GatewayError, Prompt, Provider, ProviderReply, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Fixture {
    pub template: String,
    #[serde(default)]
    pub slots: BTreeMap<String, String>,
    /// Verbatim reply text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    /// Reply given as JSON; replayed as its compact serialization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_json: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

impl Fixture {
    pub fn text(template: &str, slots: BTreeMap<String, String>, reply: &str) -> Self {
        Self {
            template: template.into(),
            slots,
            reply: Some(reply.into()),
            reply_json: None,
            prompt_tokens: None,
            completion_tokens: None,
        }
    }

    pub fn json(template: &str, slots: BTreeMap<String, String>, reply: serde_json::Value) -> Self {
        Self {
            template: template.into(),
            slots,
            reply: None,
            reply_json: Some(reply),
            prompt_tokens: None,
            completion_tokens: None,
        }
    }

    pub fn key(&self) -> String {
        prompt_key(&self.template, &self.slots)
    }

    pub fn reply_text(&self) -> Result<String, String> {
        match (&self.reply, &self.reply_json) {
            (Some(t), None) => Ok(t.clone()),
            (None, Some(v)) => Ok(v.to_string()),
            _ => Err(format!("fixture for {} must set exactly one of reply, reply-json", self.template)),
        }
    }

    fn usage(&self) -> Option<Usage> {
        Some(Usage { prompt_tokens: self.prompt_tokens?, completion_tokens: self.completion_tokens? })
    }
}

#[derive(Debug, Default, Clone)]
pub struct ReplayProvider {
    fixtures: BTreeMap<String, Fixture>,
}

impl ReplayProvider {
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref();
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| GatewayError::Transport(format!("fixture dir {}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut me = Self::default();
        for path in files {
            let text =
                fs::read_to_string(&path).map_err(|e| GatewayError::Transport(format!("{}: {e}", path.display())))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| GatewayError::Transport(format!("{}: {e}", path.display())))?;
            let fixtures: Vec<Fixture> = if value.is_array() {
                serde_json::from_value(value)
            } else {
                serde_json::from_value(value).map(|f| vec![f])
            }
            .map_err(|e| GatewayError::Transport(format!("{}: {e}", path.display())))?;
            for f in fixtures {
                f.reply_text().map_err(|e| GatewayError::Transport(format!("{}: {e}", path.display())))?;
                let key = f.key();
                if let Some(prev) = me.fixtures.get(&key) {
                    if prev != &f {
                        return Err(GatewayError::Transport(format!(
                            "{}: conflicting fixtures for key {key} ({})",
                            path.display(),
                            f.template
                        )));
                    }
                }
                me.fixtures.insert(key, f);
            }
        }
        Ok(me)
    }

    pub fn insert(&mut self, fixture: Fixture) {
        self.fixtures.insert(fixture.key(), fixture);
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl Provider for ReplayProvider {
    fn complete(&self, prompt: &Prompt) -> Result<ProviderReply, GatewayError> {
        let key = prompt.key();
        let fixture = self.fixtures.get(&key).ok_or_else(|| GatewayError::ReplayMiss {
            key: key.clone(),
            template: prompt.template.clone(),
            slots: serde_json::to_string(&prompt.slots).unwrap_or_default(),
        })?;
        Ok(ProviderReply { text: fixture.reply_text().map_err(GatewayError::Transport)?, usage: fixture.usage() })
    }
}

/// Wraps a live provider and writes every reply as a fixture file.
pub struct RecordingProvider {
    inner: Box<dyn Provider>,
    dir: PathBuf,
    lock: Mutex<()>,
}

impl RecordingProvider {
    pub fn new(inner: Box<dyn Provider>, dir: impl Into<PathBuf>) -> Self {
        Self { inner, dir: dir.into(), lock: Mutex::new(()) }
    }
}

impl Provider for RecordingProvider {
    fn complete(&self, prompt: &Prompt) -> Result<ProviderReply, GatewayError> {
        let reply = self.inner.complete(prompt)?;
        let fixture = Fixture {
            template: prompt.template.clone(),
            slots: prompt.slots.clone(),
            reply: Some(reply.text.clone()),
            reply_json: None,
            prompt_tokens: reply.usage.map(|u| u.prompt_tokens),
            completion_tokens: reply.usage.map(|u| u.completion_tokens),
        };
        let _guard = self.lock.lock().expect("recorder poisoned");
        fs::create_dir_all(&self.dir).map_err(|e| GatewayError::Transport(e.to_string()))?;
        let path = self.dir.join(format!("{}.json", fixture.key()));
        let body = serde_json::to_string_pretty(&fixture).expect("fixture serializes");
        fs::write(&path, body).map_err(|e| GatewayError::Transport(format!("{}: {e}", path.display())))?;
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slots(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn replays_fixture_and_counts() {
        let mut f = Fixture::json("retrieve", slots(&[("request", "r")]), serde_json::json!({"match": false}));
        f.prompt_tokens = Some(120);
        f.completion_tokens = Some(6);
        let mut p = ReplayProvider::default();
        p.insert(f);
        let prompt = Prompt::raw("retrieve", slots(&[("request", "r")]), "s", "u");
        let r = p.complete(&prompt).unwrap();
        assert_eq!(r.text, r#"{"match":false}"#);
        assert_eq!(r.usage, Some(Usage { prompt_tokens: 120, completion_tokens: 6 }));
    }

    #[test]
    fn miss_names_key() {
        let p = ReplayProvider::default();
        let prompt = Prompt::raw("retrieve", slots(&[("request", "pizza")]), "", "");
        match p.complete(&prompt) {
            Err(GatewayError::ReplayMiss { key, slots, .. }) => {
                assert_eq!(key, prompt.key());
                assert!(slots.contains("pizza"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn record_then_replay_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        let mut live = ReplayProvider::default();
        live.insert(Fixture::text("t", slots(&[("a", "1")]), "hello"));
        let rec = RecordingProvider::new(Box::new(live), dir.path());
        let prompt = Prompt::raw("t", slots(&[("a", "1")]), "", "");
        rec.complete(&prompt).unwrap();
        let replay = ReplayProvider::from_dir(dir.path()).unwrap();
        assert_eq!(replay.len(), 1);
        assert_eq!(replay.complete(&prompt).unwrap().text, "hello");
    }

    #[test]
    fn array_files_and_conflicts() {
        let dir = tempfile::tempdir().unwrap();
        let a = Fixture::text("t", slots(&[("a", "1")]), "x");
        let b = Fixture::text("t", slots(&[("a", "1")]), "y");
        fs::write(dir.path().join("a.json"), serde_json::to_string(&vec![a.clone()]).unwrap()).unwrap();
        assert_eq!(ReplayProvider::from_dir(dir.path()).unwrap().len(), 1);
        fs::write(dir.path().join("b.json"), serde_json::to_string(&b).unwrap()).unwrap();
        assert!(ReplayProvider::from_dir(dir.path()).is_err());
    }
}
