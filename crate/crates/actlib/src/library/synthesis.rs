//! Clustering concrete scripts and synthesizing parameterized apis from them.

use std::collections::{BTreeMap, BTreeSet};

use actlib_core::synth::check_completeness;
use actlib_core::{script_signature, validate_api, ActionApi, ActionScript, ActionStep, ParamSpec};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ApiSource, LibraryError, LibraryStore, Member};
use crate::gateway::prompts::{render, CLUSTER, SYNTHESIZE_DRAFT, SYNTHESIZE_REFINE};
use crate::gateway::{digest_json, extract_json, Gateway, Tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TaskCluster {
    pub cluster_id: String,
    pub website: String,
    pub members: Vec<Member>,
    pub shared_signature: String,
}

fn signature_of(script: &ActionScript) -> String {
    script_signature(script).map(|s| s.0).unwrap_or_default()
}

fn listing(members: &[&Member]) -> String {
    let items: Vec<_> =
        members.iter().enumerate().map(|(i, m)| json!({"index": i, "task": m.task, "steps": m.script.steps})).collect();
    serde_json::to_string_pretty(&items).expect("steps serialize")
}

fn task_lines(members: &[&Member]) -> String {
    members.iter().map(|m| m.task.as_str()).collect::<Vec<_>>().join("\n")
}

fn parse_json<T: for<'de> Deserialize<'de>>(reply: &str) -> Result<T, String> {
    let body = extract_json(reply).ok_or("no JSON object in reply")?;
    serde_json::from_str(body).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
struct ClusterReply {
    clusters: Vec<Vec<usize>>,
}

fn is_partition(groups: &[Vec<usize>], n: usize) -> bool {
    let mut seen = BTreeSet::new();
    groups.iter().all(|g| !g.is_empty())
        && groups.iter().flatten().all(|i| *i < n && seen.insert(*i))
        && seen.len() == n
}

fn by_signature(members: &[&Member]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, m) in members.iter().enumerate() {
        groups.entry(signature_of(&m.script)).or_default().push(i);
    }
    let mut out: Vec<_> = groups.into_values().collect();
    out.sort();
    out
}

fn cluster_website(website: &str, members: &[&Member], gateway: &Gateway) -> Vec<Vec<usize>> {
    if members.len() <= 1 {
        return vec![(0..members.len()).collect()];
    }
    let tasks = listing(members);
    let prompt = render(
        CLUSTER,
        &[("website", website), ("tasks", &tasks)],
        &[
            ("website", website.to_string()),
            ("tasks", task_lines(members)),
            ("scripts", digest_json(&members.iter().map(|m| &m.script.steps).collect::<Vec<_>>())),
        ],
    );
    match gateway.complete(&prompt, &[Tag::Synthesis]) {
        Ok(reply) => match parse_json::<ClusterReply>(&reply) {
            Ok(r) if is_partition(&r.clusters, members.len()) => return r.clusters,
            Ok(_) => log::warn!("cluster reply for {website} is not a partition; grouping by signature"),
            Err(e) => log::warn!("cluster reply for {website} unusable ({e}); grouping by signature"),
        },
        Err(e) => log::warn!("cluster call for {website} failed ({e}); grouping by signature"),
    }
    by_signature(members)
}

/// Groups scripts into clusters per website. Every input lands in exactly one cluster.
pub fn cluster_tasks(scripts: &[Member], gateway: &Gateway) -> Vec<TaskCluster> {
    let mut per_site: BTreeMap<&str, Vec<&Member>> = BTreeMap::new();
    for m in scripts {
        per_site.entry(m.script.website.as_str()).or_default().push(m);
    }
    let mut out = Vec::new();
    for (website, members) in per_site {
        for (n, group) in cluster_website(website, &members, gateway).into_iter().enumerate() {
            let members: Vec<Member> = group.iter().map(|i| members[*i].clone()).collect();
            out.push(TaskCluster {
                cluster_id: format!("{website}#{n}"),
                website: website.to_string(),
                shared_signature: signature_of(&members[0].script),
                members,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct ApiBody {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    params: Vec<ParamSpec>,
    steps: Vec<ActionStep>,
}

#[derive(Deserialize)]
struct DraftReply {
    api: ApiBody,
    #[serde(default)]
    shortcomings: Vec<String>,
}

#[derive(Deserialize)]
struct RefineReply {
    api: ApiBody,
}

fn to_api(body: ApiBody, website: &str) -> ActionApi {
    ActionApi {
        api_id: format!("{website}/{}", body.name),
        name: body.name,
        description: body.description,
        params: body.params,
        steps: body.steps,
        website: website.to_string(),
    }
}

fn accept(api: &ActionApi, members: &[Member]) -> Result<(), String> {
    let report = validate_api(api);
    if !report.is_ok() {
        return Err(report.to_string());
    }
    check_completeness(api, members.iter().map(|m| m.script.steps.as_slice())).map(drop).map_err(|e| e.to_string())
}

/// Two-pass synthesis: a draft with self-reported shortcomings, then a
/// refinement. The refined api is kept if it reproduces every member,
/// otherwise the draft if it does.
pub fn synthesize_api(cluster: &TaskCluster, gateway: &Gateway) -> Result<ActionApi, LibraryError> {
    let website = cluster.website.as_str();
    if cluster.members.is_empty() {
        return Err(LibraryError::SynthesisIncomplete("empty cluster".into()));
    }
    let refs: Vec<&Member> = cluster.members.iter().collect();
    let members = listing(&refs);
    let salient = [
        ("website", website.to_string()),
        ("tasks", task_lines(&refs)),
        ("members", digest_json(&refs.iter().map(|m| &m.script.steps).collect::<Vec<_>>())),
    ];

    let mut draft = None;
    let mut last_err = String::new();
    for attempt in 1..=2 {
        let prompt =
            render(SYNTHESIZE_DRAFT, &[("website", website), ("members", &members)], &salient).with_attempt(attempt);
        match parse_json::<DraftReply>(&gateway.complete(&prompt, &[Tag::Synthesis])?) {
            Ok(d) => {
                draft = Some(d);
                break;
            }
            Err(e) => {
                log::warn!("synthesis draft for {} unusable: {e}", cluster.cluster_id);
                last_err = e;
            }
        }
    }
    let draft = draft.ok_or(LibraryError::LlmReplyUnparseable(last_err))?;
    let draft_api = to_api(draft.api.clone(), website);
    let draft_check = accept(&draft_api, &cluster.members);

    let draft_json = serde_json::to_string_pretty(&draft.api).expect("api serializes");
    let shortcomings = if draft.shortcomings.is_empty() {
        "(none reported)".to_string()
    } else {
        draft.shortcomings.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n")
    };
    let feedback = match &draft_check {
        Ok(()) => String::new(),
        Err(e) => format!("\nThe draft does not reproduce the scripts: {e}."),
    };
    let prompt = render(
        SYNTHESIZE_REFINE,
        &[
            ("website", website),
            ("draft", &draft_json),
            ("shortcomings", &shortcomings),
            ("members", &members),
            ("feedback", &feedback),
        ],
        &salient,
    );
    let refined = match gateway.complete(&prompt, &[Tag::Synthesis]) {
        Ok(reply) => parse_json::<RefineReply>(&reply).map(|r| to_api(r.api, website)),
        Err(e) => Err(e.to_string()),
    };
    match refined {
        Ok(api) => match accept(&api, &cluster.members) {
            Ok(()) => return Ok(api),
            Err(e) => log::warn!("refined api for {} rejected: {e}", cluster.cluster_id),
        },
        Err(e) => log::warn!("refinement for {} unusable: {e}", cluster.cluster_id),
    }
    match draft_check {
        Ok(()) => Ok(draft_api),
        Err(e) => Err(LibraryError::SynthesisIncomplete(format!("{}: {e}", cluster.cluster_id))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationKind {
    /// The script is already a member of a healthy api.
    Unchanged,
    /// Merged into an existing api, which was re-synthesized.
    Merged,
    /// Replaced the members of a degraded api.
    Refreshed,
    Created,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Integration {
    pub api_id: String,
    pub kind: IntegrationKind,
}

/// Folds a newly generated script into the library.
///
/// The script is clustered against the members of the same website's apis.
/// If it joins the cluster of an existing api, that api is re-synthesized in
/// place (keeping its id); if the api has recent failures its old members are
/// dropped so the api is rebuilt from the new script alone. Otherwise, or if
/// re-synthesis fails, a new api is created. No api is ever removed.
pub fn integrate_trace(
    task: &str,
    script: &ActionScript,
    store: &mut LibraryStore,
    gateway: &Gateway,
    source: ApiSource,
) -> Result<Integration, LibraryError> {
    let new = Member { task: task.to_string(), script: script.clone() };
    if let Some(r) = store
        .for_website(&script.website)
        .find(|r| r.failure_streak == 0 && r.members.iter().any(|m| m.script.steps == script.steps))
    {
        return Ok(Integration { api_id: r.api.api_id.clone(), kind: IntegrationKind::Unchanged });
    }

    let mut pool: Vec<Member> = Vec::new();
    let mut owner: Vec<String> = Vec::new();
    for r in store.for_website(&script.website) {
        for m in &r.members {
            pool.push(m.clone());
            owner.push(r.api.api_id.clone());
        }
    }
    let new_idx = pool.len();
    pool.push(new.clone());

    let target = if pool.len() > 1 {
        let refs: Vec<&Member> = pool.iter().collect();
        let groups = cluster_website(&script.website, &refs, gateway);
        let group = groups.into_iter().find(|g| g.contains(&new_idx)).unwrap_or_default();
        let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
        for i in group.iter().filter(|i| **i != new_idx) {
            *votes.entry(owner[*i].as_str()).or_default() += 1;
        }
        // Most shared members wins; ties go to the smallest id.
        votes.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0))).map(|(id, _)| id.to_string())
    } else {
        None
    };

    if let Some(id) = target {
        let record = store.get(&id).expect("owner ids come from the store");
        let degraded = record.failure_streak > 0;
        let mut members = if degraded { Vec::new() } else { record.members.clone() };
        members.push(new.clone());
        let cluster = TaskCluster {
            cluster_id: id.clone(),
            website: script.website.clone(),
            shared_signature: signature_of(script),
            members: members.clone(),
        };
        match synthesize_api(&cluster, gateway).and_then(|api| store.replace(&id, api, members, task)) {
            Ok(()) => {
                let kind = if degraded { IntegrationKind::Refreshed } else { IntegrationKind::Merged };
                return Ok(Integration { api_id: id, kind });
            }
            Err(e) => log::warn!("could not fold trace into {id}: {e}; creating a new api"),
        }
    }

    let cluster = TaskCluster {
        cluster_id: format!("{}#new", script.website),
        website: script.website.clone(),
        shared_signature: signature_of(script),
        members: vec![new.clone()],
    };
    let api = synthesize_api(&cluster, gateway)?;
    let api_id = store.insert(api, source, vec![new])?;
    Ok(Integration { api_id, kind: IntegrationKind::Created })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BuildReport {
    pub created: Vec<String>,
    /// `(task, error)` for scripts that ended up in no api.
    pub failed: Vec<(String, String)>,
}

/// Clusters `scripts`, synthesizes one api per cluster and inserts them.
///
/// A cluster whose synthesis fails is retried member by member.
pub fn build_library(
    scripts: &[Member],
    store: &mut LibraryStore,
    gateway: &Gateway,
    source: ApiSource,
) -> BuildReport {
    let mut report = BuildReport::default();
    for cluster in cluster_tasks(scripts, gateway) {
        let attempt =
            synthesize_api(&cluster, gateway).and_then(|api| store.insert(api, source, cluster.members.clone()));
        match attempt {
            Ok(id) => report.created.push(id),
            Err(e) if cluster.members.len() > 1 => {
                log::warn!("cluster {} not synthesized ({e}); trying members alone", cluster.cluster_id);
                for (n, m) in cluster.members.iter().enumerate() {
                    let single = TaskCluster {
                        cluster_id: format!("{}.{n}", cluster.cluster_id),
                        website: cluster.website.clone(),
                        shared_signature: signature_of(&m.script),
                        members: vec![m.clone()],
                    };
                    match synthesize_api(&single, gateway).and_then(|api| store.insert(api, source, vec![m.clone()])) {
                        Ok(id) => report.created.push(id),
                        Err(e) => report.failed.push((m.task.clone(), e.to_string())),
                    }
                }
            }
            Err(e) => report.failed.push((cluster.members[0].task.clone(), e.to_string())),
        }
    }
    report
}
