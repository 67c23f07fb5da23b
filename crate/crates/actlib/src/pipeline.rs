//! Batch drivers over the building blocks: distilling a site's pages and
//! building a library from a list of tasks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::{distill_page, verify_distillation, DistillError, DistilledPage};
use crate::executor::{Session, SessionError};
use crate::gateway::Gateway;
use crate::generation::{distmap_generate, unravel_run, UnravelOptions};
use crate::library::{build_library, ApiSource, BuildReport, LibraryStore, Member};
use crate::sim::SimSite;

/// One row of a tasks file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TaskRow {
    pub website: String,
    pub task: String,
}

/// Reads a tasks file: a JSON array of `{"website": ..., "task": ...}`.
pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<TaskRow>, String> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    DistMap,
    #[default]
    Unravel,
}

/// Distills and verifies one page.
pub fn distill_verified(
    html: &str,
    page_id: &str,
    source_url: &str,
    gateway: &Gateway,
) -> Result<DistilledPage, DistillError> {
    let first = distill_page(html, page_id, source_url, gateway)?;
    for w in &first.warnings {
        log::warn!("{page_id}: {w:?}");
    }
    let checked = verify_distillation(html, &first.page, gateway)?;
    for w in &checked.warnings {
        log::warn!("{page_id}: {w:?}");
    }
    Ok(checked.page)
}

/// Every page of a simulated site, distilled and verified, in page-id order.
pub fn distill_site(site: &SimSite, gateway: &Gateway) -> Result<Vec<DistilledPage>, DistillError> {
    site.pages.keys().map(|id| distill_verified(site.html(id), id, &site.url_of(id), gateway)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BuildOutcome {
    pub scripts: Vec<Member>,
    /// `(task, error)` for tasks that produced no script.
    pub generation_failures: Vec<(String, String)>,
    pub library: BuildReport,
}

pub type SessionSource<'a> = dyn FnMut() -> Result<Box<dyn Session>, SessionError> + 'a;

/// Explores each task on a fresh session.
pub fn scripts_by_unravel(
    tasks: &[TaskRow],
    sessions: &mut SessionSource<'_>,
    gateway: &Gateway,
    options: UnravelOptions,
) -> (Vec<Member>, Vec<(String, String)>) {
    let mut scripts = Vec::new();
    let mut failures = Vec::new();
    for row in tasks {
        let mut session = match sessions() {
            Ok(s) => s,
            Err(e) => {
                failures.push((row.task.clone(), e.to_string()));
                continue;
            }
        };
        match unravel_run(&row.task, &row.website, session.as_mut(), gateway, options) {
            Ok((_, script)) => scripts.push(Member { task: row.task.clone(), script }),
            Err(e) => failures.push((row.task.clone(), e.to_string())),
        }
        let _ = session.close();
    }
    (scripts, failures)
}

/// Generates one script per task from already verified pages.
pub fn scripts_by_distmap(
    tasks: &[TaskRow],
    pages: &[DistilledPage],
    gateway: &Gateway,
) -> (Vec<Member>, Vec<(String, String)>) {
    let mut scripts = Vec::new();
    let mut failures = Vec::new();
    for row in tasks {
        match distmap_generate(&row.task, &row.website, pages, gateway) {
            Ok(script) => scripts.push(Member { task: row.task.clone(), script }),
            Err(e) => failures.push((row.task.clone(), e.to_string())),
        }
    }
    (scripts, failures)
}

/// Clusters and synthesizes `scripts` into `store`.
pub fn finish_build(
    scripts: Vec<Member>,
    generation_failures: Vec<(String, String)>,
    store: &mut LibraryStore,
    gateway: &Gateway,
    strategy: Strategy,
) -> BuildOutcome {
    let source = match strategy {
        Strategy::DistMap => ApiSource::DistMap,
        Strategy::Unravel => ApiSource::Unravel,
    };
    let library = build_library(&scripts, store, gateway, source);
    BuildOutcome { scripts, generation_failures, library }
}
