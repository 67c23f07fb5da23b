//! Command-line front end.
//!
//! Every setting resolves as: command-line flag, then `ACTLIB_*` environment
//! variable, then the `--config` TOML file, then the built-in default.
//!
//! Exit codes: 0 success, 1 task failure, 2 configuration or input error.

use std::fs;
use std::path::{Path, PathBuf};

use actlib_core::tokens::{Baseline, BASELINE_CALLS, BASELINE_TOKENS_PER_CALL};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::distill::PageDocument;
use crate::evalkit::{comparison_table, evaluate, parse_predictions, token_report, AnnotatedTrace, MatchMode};
use crate::executor::{Session, SessionError};
use crate::gateway::{Gateway, Provider, RecordingProvider, RemoteConfig, RemoteProvider, ReplayProvider, TokenLedger};
use crate::generation::{Limits, UnravelOptions};
use crate::library::{load_library, save_library, LibraryStore};
use crate::pipeline::{self, Strategy, TaskRow};
use crate::runtime::{handle_request, RuntimeOptions, TaskStatus};
use crate::sim::{load_site_spec, SimSite};
use crate::webdriver::WebDriverSession;

pub const EXIT_OK: i32 = 0;
pub const EXIT_TASK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "actlib", version, about = "Build and use a library of reusable website actions")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Remote,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    DistMap,
    Unravel,
}

#[derive(Debug, Default, Args)]
pub struct GlobalArgs {
    /// TOML file with defaults for any of the settings below.
    #[arg(long, global = true, env = "ACTLIB_CONFIG")]
    pub config: Option<PathBuf>,
    /// Library file [default: library.json]
    #[arg(long, global = true, env = "ACTLIB_LIBRARY")]
    pub library: Option<PathBuf>,
    /// Simulated site spec to run against.
    #[arg(long, global = true, env = "ACTLIB_SITE_SPEC")]
    pub site_spec: Option<PathBuf>,
    /// Remote WebDriver endpoint to run against.
    #[arg(long, global = true, env = "ACTLIB_WEBDRIVER_URL")]
    pub webdriver_url: Option<String>,
    /// Page a WebDriver session starts on.
    #[arg(long, global = true, env = "ACTLIB_START_URL")]
    pub start_url: Option<String>,
    /// Website name used with WebDriver [default: host of --start-url]
    #[arg(long, global = true, env = "ACTLIB_WEBSITE")]
    pub website: Option<String>,
    /// LLM provider [default: remote]
    #[arg(long, global = true, value_enum, env = "ACTLIB_PROVIDER")]
    pub provider: Option<ProviderKind>,
    /// Fixture directory for the replay provider.
    #[arg(long, global = true, env = "ACTLIB_FIXTURES")]
    pub fixtures: Option<PathBuf>,
    /// Record remote replies as fixtures into this directory.
    #[arg(long, global = true, env = "ACTLIB_RECORD")]
    pub record: Option<PathBuf>,
    /// Library construction strategy [default: unravel]
    #[arg(long, global = true, value_enum, env = "ACTLIB_STRATEGY")]
    pub strategy: Option<StrategyArg>,
    /// Page views allowed per exploration [default: 10]
    #[arg(long, global = true, env = "ACTLIB_MAX_PAGES")]
    pub max_pages: Option<u32>,
    /// Steps allowed per exploration [default: 40]
    #[arg(long, global = true, env = "ACTLIB_MAX_STEPS")]
    pub max_steps: Option<u32>,
    /// Re-prompts after a failed step [default: 1]
    #[arg(long, global = true, env = "ACTLIB_MAX_RETRIES")]
    pub max_retries: Option<u32>,
    /// Consecutive failures that mark an api stale [default: 2]
    #[arg(long, global = true, env = "ACTLIB_STALENESS")]
    pub staleness: Option<u32>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true, env = "ACTLIB_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distill HTML files (or every page of --site-spec) into element lists.
    Distill {
        /// HTML files or directories of `.html` files.
        inputs: Vec<PathBuf>,
    },
    /// Build or extend the library from a tasks file.
    BuildLibrary {
        /// JSON array of {"website": ..., "task": ...}.
        #[arg(long)]
        tasks: PathBuf,
        /// Directory of distilled page files to use with dist-map instead of distilling the site.
        #[arg(long)]
        pages: Option<PathBuf>,
    },
    /// Serve one request and print the result report.
    Run { request: String },
    /// Score predictions against an annotated trace.
    Eval {
        /// Script document, execution trace, or list of predicted steps.
        #[arg(long)]
        predicted: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, default_value = "lenient")]
        mode: ModeArg,
    },
    /// Compare the tokens of a ledger or run report with the stepwise baseline.
    Tokens {
        /// Token ledger or `run` report.
        #[arg(long, conflicts_with = "total")]
        ledger: Option<PathBuf>,
        /// Total tokens, instead of a ledger.
        #[arg(long, requires = "calls")]
        total: Option<u64>,
        #[arg(long)]
        calls: Option<u64>,
        #[arg(long, default_value_t = BASELINE_TOKENS_PER_CALL)]
        baseline_tokens: u64,
        #[arg(long, default_value_t = BASELINE_CALLS)]
        baseline_calls: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Exact,
    Lenient,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileConfig {
    library: Option<PathBuf>,
    site_spec: Option<PathBuf>,
    webdriver_url: Option<String>,
    start_url: Option<String>,
    website: Option<String>,
    provider: Option<ProviderKind>,
    fixtures: Option<PathBuf>,
    record: Option<PathBuf>,
    strategy: Option<StrategyArg>,
    max_pages: Option<u32>,
    max_steps: Option<u32>,
    max_retries: Option<u32>,
    staleness: Option<u32>,
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SiteSource {
    Sim(PathBuf),
    WebDriver { url: String, start_url: String, website: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderChoice {
    Remote { record: Option<PathBuf> },
    Replay { fixtures: PathBuf },
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub library: PathBuf,
    pub site: Option<SiteSource>,
    pub provider: ProviderChoice,
    pub limits: Limits,
    pub staleness: u32,
    pub strategy: Strategy,
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn host_of(url: &str) -> Option<String> {
    let rest = url.split_once("://").map_or(url, |(_, r)| r);
    let host = rest.split(['/', ':', '?', '#']).next()?;
    (!host.is_empty()).then(|| host.trim_start_matches("www.").to_string())
}

impl RunConfig {
    pub fn resolve(args: &GlobalArgs) -> Result<Self, ConfigError> {
        let file: FileConfig = match &args.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let pick = |flag: &Option<PathBuf>, file: &Option<PathBuf>| flag.clone().or_else(|| file.clone());
        let site_spec = pick(&args.site_spec, &file.site_spec);
        let webdriver = args.webdriver_url.clone().or(file.webdriver_url);
        let site = match (site_spec, webdriver) {
            (Some(_), Some(_)) => {
                return Err(ConfigError("give either --site-spec or --webdriver-url, not both".into()))
            }
            (Some(p), None) => Some(SiteSource::Sim(p)),
            (None, Some(url)) => {
                let start_url = args
                    .start_url
                    .clone()
                    .or(file.start_url)
                    .ok_or_else(|| ConfigError("--webdriver-url needs --start-url".into()))?;
                let website = args
                    .website
                    .clone()
                    .or(file.website)
                    .or_else(|| host_of(&start_url))
                    .ok_or_else(|| ConfigError("cannot tell the website; pass --website".into()))?;
                Some(SiteSource::WebDriver { url, start_url, website })
            }
            (None, None) => None,
        };
        let provider = match args.provider.or(file.provider).unwrap_or(ProviderKind::Remote) {
            ProviderKind::Remote => ProviderChoice::Remote { record: pick(&args.record, &file.record) },
            ProviderKind::Replay => ProviderChoice::Replay {
                fixtures: pick(&args.fixtures, &file.fixtures)
                    .ok_or_else(|| ConfigError("the replay provider needs --fixtures".into()))?,
            },
        };
        let d = Limits::default();
        let limits = Limits {
            max_pages: args.max_pages.or(file.max_pages).unwrap_or(d.max_pages),
            max_steps: args.max_steps.or(file.max_steps).unwrap_or(d.max_steps),
            max_retries: args.max_retries.or(file.max_retries).unwrap_or(d.max_retries),
        };
        let strategy = match args.strategy.or(file.strategy).unwrap_or(StrategyArg::Unravel) {
            StrategyArg::DistMap => Strategy::DistMap,
            StrategyArg::Unravel => Strategy::Unravel,
        };
        Ok(Self {
            library: pick(&args.library, &file.library).unwrap_or_else(|| PathBuf::from("library.json")),
            site,
            provider,
            limits,
            staleness: args.staleness.or(file.staleness).unwrap_or(actlib_core::staleness::DEFAULT_STALENESS_THRESHOLD),
            strategy,
            out: pick(&args.out, &file.out),
        })
    }

    pub fn gateway(&self) -> Result<Gateway, ConfigError> {
        let provider: Box<dyn Provider> = match &self.provider {
            ProviderChoice::Replay { fixtures } => {
                Box::new(ReplayProvider::from_dir(fixtures).map_err(|e| ConfigError(e.to_string()))?)
            }
            ProviderChoice::Remote { record } => {
                let remote = RemoteProvider::new(RemoteConfig::from_env().map_err(|e| ConfigError(e.to_string()))?);
                match record {
                    Some(dir) => Box::new(RecordingProvider::new(Box::new(remote), dir.clone())),
                    None => Box::new(remote),
                }
            }
        };
        Ok(Gateway::from_boxed(provider))
    }
}

/// The site sessions come from, loaded once.
pub enum LoadedSite {
    Sim(SimSite),
    WebDriver { url: String, start_url: String, website: String },
}

impl LoadedSite {
    pub fn load(source: &SiteSource) -> Result<Self, ConfigError> {
        Ok(match source {
            SiteSource::Sim(p) => LoadedSite::Sim(load_site_spec(p).map_err(|e| ConfigError(e.to_string()))?),
            SiteSource::WebDriver { url, start_url, website } => {
                LoadedSite::WebDriver { url: url.clone(), start_url: start_url.clone(), website: website.clone() }
            }
        })
    }

    pub fn website(&self) -> &str {
        match self {
            LoadedSite::Sim(s) => &s.website,
            LoadedSite::WebDriver { website, .. } => website,
        }
    }

    pub fn open(&self) -> Result<Box<dyn Session>, SessionError> {
        match self {
            LoadedSite::Sim(s) => Ok(Box::new(s.open_session())),
            LoadedSite::WebDriver { url, start_url, .. } => {
                let mut s = WebDriverSession::new(url);
                s.open(start_url)?;
                Ok(Box::new(s))
            }
        }
    }
}

fn need_site(cfg: &RunConfig) -> Result<LoadedSite, ConfigError> {
    let source =
        cfg.site.as_ref().ok_or_else(|| ConfigError("this command needs --site-spec or --webdriver-url".into()))?;
    LoadedSite::load(source)
}

fn load_store(cfg: &RunConfig) -> Result<LibraryStore, ConfigError> {
    if !cfg.library.exists() {
        log::warn!("{} does not exist; starting with an empty library", cfg.library.display());
        return Ok(LibraryStore::new(cfg.staleness));
    }
    let mut store = load_library(&cfg.library).map_err(|e| ConfigError(e.to_string()))?;
    store.staleness_threshold = cfg.staleness;
    Ok(store)
}

fn emit(cfg: &RunConfig, value: &Value) -> Result<(), ConfigError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    match &cfg.out {
        Some(p) => fs::write(p, text + "\n").map_err(|e| ConfigError(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn unravel_options(cfg: &RunConfig) -> UnravelOptions {
    UnravelOptions { limits: cfg.limits, ..UnravelOptions::default() }
}

fn html_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, ConfigError> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "html" || x == "htm"))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(ConfigError(format!("{}: no such file or directory", p.display())));
        }
    }
    Ok(files)
}

fn cmd_distill(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<i32, ConfigError> {
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("pages"));
    let mut jobs: Vec<(String, String, String)> = Vec::new();
    if inputs.is_empty() {
        if let Some(src) = &cfg.site {
            if let LoadedSite::Sim(site) = LoadedSite::load(src)? {
                for id in site.pages.keys() {
                    jobs.push((id.clone(), site.url_of(id), site.html(id).to_string()));
                }
            }
        }
    } else {
        for f in html_inputs(inputs)? {
            let html = fs::read_to_string(&f).map_err(|e| ConfigError(format!("{}: {e}", f.display())))?;
            let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let url = format!("file://{}", f.display());
            jobs.push((id, url, html));
        }
    }
    if jobs.is_empty() {
        log::warn!("nothing to distill");
        return Ok(EXIT_OK);
    }
    let gateway = cfg.gateway()?;
    fs::create_dir_all(&out_dir).map_err(|e| ConfigError(format!("{}: {e}", out_dir.display())))?;
    let mut failed = 0;
    for (id, url, html) in jobs {
        match pipeline::distill_verified(&html, &id, &url, &gateway) {
            Ok(page) => {
                let path = out_dir.join(format!("{id}.json"));
                let doc = PageDocument::from(page);
                let text = serde_json::to_string_pretty(&doc).expect("page serializes");
                fs::write(&path, text + "\n").map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            }
            Err(e) => {
                eprintln!("{id}: {e}");
                failed += 1;
            }
        }
    }
    Ok(if failed > 0 { EXIT_TASK_FAILED } else { EXIT_OK })
}

fn load_pages(dir: &Path) -> Result<Vec<crate::distill::DistilledPage>, ConfigError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ConfigError(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|f| f.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|f| {
            let text = fs::read_to_string(f).map_err(|e| ConfigError(format!("{}: {e}", f.display())))?;
            let doc: PageDocument =
                serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", f.display())))?;
            Ok(doc.into())
        })
        .collect()
}

fn cmd_build(cfg: &RunConfig, tasks_path: &Path, pages_dir: Option<&Path>) -> Result<i32, ConfigError> {
    let tasks: Vec<TaskRow> = pipeline::load_tasks(tasks_path).map_err(ConfigError)?;
    let mut store = load_store(cfg)?;
    if tasks.is_empty() {
        log::warn!("tasks file is empty");
        save_library(&store, &cfg.library).map_err(|e| ConfigError(e.to_string()))?;
        emit(cfg, &json!({"scripts": [], "generation-failures": [], "library": {"created": [], "failed": []}}))?;
        return Ok(EXIT_OK);
    }
    let gateway = cfg.gateway()?;
    let (scripts, failures) = match cfg.strategy {
        Strategy::Unravel => {
            let site = need_site(cfg)?;
            pipeline::scripts_by_unravel(&tasks, &mut || site.open(), &gateway, unravel_options(cfg))
        }
        Strategy::DistMap => {
            let pages = match pages_dir {
                Some(d) => load_pages(d)?,
                None => match need_site(cfg)? {
                    LoadedSite::Sim(site) => match pipeline::distill_site(&site, &gateway) {
                        Ok(p) => p,
                        Err(e) => {
                            eprintln!("distillation failed: {e}");
                            return Ok(EXIT_TASK_FAILED);
                        }
                    },
                    other => {
                        let mut s = other.open().map_err(|e| ConfigError(e.to_string()))?;
                        let html = s.current_html().map_err(|e| ConfigError(e.to_string()))?;
                        let url = s.current_url().map_err(|e| ConfigError(e.to_string()))?;
                        match pipeline::distill_verified(&html, "start", &url, &gateway) {
                            Ok(p) => vec![p],
                            Err(e) => {
                                eprintln!("distillation failed: {e}");
                                return Ok(EXIT_TASK_FAILED);
                            }
                        }
                    }
                },
            };
            pipeline::scripts_by_distmap(&tasks, &pages, &gateway)
        }
    };
    let outcome = pipeline::finish_build(scripts, failures, &mut store, &gateway, cfg.strategy);
    save_library(&store, &cfg.library).map_err(|e| ConfigError(e.to_string()))?;
    let ledger = gateway.ledger();
    let mut report = serde_json::to_value(&outcome).expect("outcome serializes");
    report["token-totals"] =
        json!({"calls": ledger.calls(), "total-tokens": ledger.total_tokens(), "estimated": ledger.any_estimated()});
    emit(cfg, &report)?;
    let failed = !outcome.generation_failures.is_empty() || !outcome.library.failed.is_empty();
    Ok(if failed { EXIT_TASK_FAILED } else { EXIT_OK })
}

fn cmd_run(cfg: &RunConfig, request: &str) -> Result<i32, ConfigError> {
    let site = need_site(cfg)?;
    let mut store = load_store(cfg)?;
    let gateway = cfg.gateway()?;
    let options = RuntimeOptions { website: site.website().to_string(), unravel: unravel_options(cfg) };
    let result = handle_request(request, &mut store, &mut || site.open(), &gateway, &options);
    save_library(&store, &cfg.library).map_err(|e| ConfigError(e.to_string()))?;
    emit(cfg, &result.to_report())?;
    Ok(if result.status == TaskStatus::Failed { EXIT_TASK_FAILED } else { EXIT_OK })
}

fn cmd_eval(cfg: &RunConfig, predicted: &Path, gold: &Path, mode: ModeArg) -> Result<i32, ConfigError> {
    let text = fs::read_to_string(predicted).map_err(|e| ConfigError(format!("{}: {e}", predicted.display())))?;
    let preds = parse_predictions(&text).map_err(|e| ConfigError(format!("{}: {e}", predicted.display())))?;
    let gold = AnnotatedTrace::load(gold).map_err(|e| ConfigError(e.to_string()))?;
    let mode = match mode {
        ModeArg::Exact => MatchMode::Exact,
        ModeArg::Lenient => MatchMode::Lenient,
    };
    let report = evaluate(&preds, &gold, mode).map_err(|e| ConfigError(e.to_string()))?;
    eprint!("{}", comparison_table(&report));
    emit(cfg, &serde_json::to_value(&report).expect("report serializes"))?;
    Ok(EXIT_OK)
}

fn ledger_from_file(path: &Path) -> Result<TokenLedger, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let ledger = value.get("tokens").cloned().unwrap_or(value);
    serde_json::from_value(ledger).map_err(|e| ConfigError(format!("{}: not a token ledger: {e}", path.display())))
}

fn cmd_tokens(
    cfg: &RunConfig,
    ledger: Option<&Path>,
    total: Option<(u64, u64)>,
    baseline: Baseline,
) -> Result<i32, ConfigError> {
    let report = match (ledger, total) {
        (Some(p), _) => token_report(&ledger_from_file(p)?, baseline),
        (None, Some((t, c))) => crate::evalkit::report_for_totals(t, c, false, baseline),
        (None, None) => return Err(ConfigError("give --ledger or --total/--calls".into())),
    }
    .map_err(|e| ConfigError(e.to_string()))?;
    eprint!("{}", report.to_text());
    emit(cfg, &serde_json::to_value(&report).expect("report serializes"))?;
    Ok(EXIT_OK)
}

pub fn run(cli: Cli) -> i32 {
    let cfg = match RunConfig::resolve(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let result = match &cli.command {
        Command::Distill { inputs } => cmd_distill(&cfg, inputs),
        Command::BuildLibrary { tasks, pages } => cmd_build(&cfg, tasks, pages.as_deref()),
        Command::Run { request } => cmd_run(&cfg, request),
        Command::Eval { predicted, gold, mode } => cmd_eval(&cfg, predicted, gold, *mode),
        Command::Tokens { ledger, total, calls, baseline_tokens, baseline_calls } => cmd_tokens(
            &cfg,
            ledger.as_deref(),
            total.zip(*calls),
            Baseline { tokens_per_call: *baseline_tokens, calls: *baseline_calls },
        ),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}
