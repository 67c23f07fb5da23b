#![allow(dead_code)]

use std::path::PathBuf;

use actlib::executor::{Session, SessionError};
use actlib::gateway::{Gateway, ReplayProvider};
use actlib::generation::UnravelOptions;
use actlib::library::{load_library, LibraryStore};
use actlib::pipeline::{self, TaskRow};
use actlib::runtime::RuntimeOptions;
use actlib::sim::{load_site_spec, SimSite};
use actlib_core::Bindings;
use serde::Deserialize;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn site(name: &str) -> SimSite {
    load_site_spec(fixtures().join("sites").join(name).join("site.json")).unwrap()
}

pub fn replay() -> Gateway {
    Gateway::new(ReplayProvider::from_dir(fixtures().join("replay")).unwrap())
}

pub fn sessions(site: &SimSite) -> impl FnMut() -> Result<Box<dyn Session>, SessionError> + '_ {
    move || Ok(Box::new(site.open_session()) as Box<dyn Session>)
}

pub fn options(site: &SimSite) -> RuntimeOptions {
    RuntimeOptions { website: site.website.clone(), unravel: UnravelOptions::default() }
}

pub fn build_tasks() -> Vec<TaskRow> {
    pipeline::load_tasks(fixtures().join("tasks/delta-build.json")).unwrap()
}

pub fn library(name: &str) -> LibraryStore {
    load_library(fixtures().join("libraries").join(format!("{name}.json"))).unwrap()
}

#[derive(Debug, Deserialize)]
pub struct Expected {
    pub api: String,
    pub bindings: Bindings,
}

#[derive(Debug, Deserialize)]
pub struct RequestCase {
    pub request: String,
    pub expected: Option<Expected>,
}

pub fn requests() -> Vec<RequestCase> {
    let text = std::fs::read_to_string(fixtures().join("tasks/delta-requests.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}
