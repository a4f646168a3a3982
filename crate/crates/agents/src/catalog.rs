//! Schemas, prompt templates and workflow specs known to a runtime.
//!
//! The built-in set is compiled in. A config directory may add to or replace
//! it with files laid out as:
//!
//! - `schemas/*.json`: an object mapping schema names to schemas
//! - `templates/*.json`: an array of prompt templates
//! - `workflows/*.json`: one workflow spec per file
//!
//! Files are read in name order; later definitions replace earlier ones.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use margin_core::schema::SchemaRegistry;
use thiserror::Error;

use crate::template::PromptTemplate;
use crate::workflow::WorkflowSpec;

const SCHEMAS: &str = include_str!("../assets/schemas.json");
const TEMPLATES: &str = include_str!("../assets/templates.json");
const WORKFLOWS: [&str; 6] = [
    include_str!("../assets/workflows/reviewer.json"),
    include_str!("../assets/workflows/segment_review.json"),
    include_str!("../assets/workflows/enhancer.json"),
    include_str!("../assets/workflows/scoring.json"),
    include_str!("../assets/workflows/researcher.json"),
    include_str!("../assets/workflows/compare_works.json"),
];

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("{path}: {reason}")]
    File { path: PathBuf, reason: String },
    #[error("built-in {what}: {reason}")]
    Builtin { what: &'static str, reason: String },
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    pub schemas: SchemaRegistry,
    pub templates: BTreeMap<String, PromptTemplate>,
    pub workflows: BTreeMap<String, WorkflowSpec>,
}

impl Catalog {
    /// The compiled-in schemas, templates and agent workflows.
    pub fn builtin() -> Result<Self, CatalogError> {
        let schemas = SchemaRegistry::from_json(SCHEMAS)
            .map_err(|e| CatalogError::Builtin { what: "schemas", reason: e.to_string() })?;
        let templates: Vec<PromptTemplate> = serde_json::from_str(TEMPLATES)
            .map_err(|e| CatalogError::Builtin { what: "templates", reason: e.to_string() })?;
        let mut cat = Self { schemas, ..Self::default() };
        for t in templates {
            cat.insert_template(t);
        }
        for doc in WORKFLOWS {
            let spec = WorkflowSpec::from_json(doc)
                .map_err(|e| CatalogError::Builtin { what: "workflow", reason: e.to_string() })?;
            cat.insert_workflow(spec);
        }
        Ok(cat)
    }

    pub fn insert_template(&mut self, t: PromptTemplate) {
        self.templates.insert(t.template_id.clone(), t);
    }

    pub fn insert_workflow(&mut self, w: WorkflowSpec) {
        self.workflows.insert(w.workflow_id.clone(), w);
    }

    /// Loads the `schemas/`, `templates/` and `workflows/` subdirectories of
    /// `dir`; missing subdirectories are skipped.
    pub fn load_dir(&mut self, dir: &Path) -> Result<(), CatalogError> {
        for path in json_files(&dir.join("schemas"))? {
            let reg = SchemaRegistry::from_json(&read(&path)?).map_err(|e| file_err(&path, e))?;
            self.schemas.extend(reg);
        }
        for path in json_files(&dir.join("templates"))? {
            let ts: Vec<PromptTemplate> = serde_json::from_str(&read(&path)?).map_err(|e| file_err(&path, e))?;
            for t in ts {
                self.insert_template(t);
            }
        }
        for path in json_files(&dir.join("workflows"))? {
            let spec = WorkflowSpec::from_json(&read(&path)?).map_err(|e| file_err(&path, e))?;
            self.insert_workflow(spec);
        }
        Ok(())
    }
}

fn file_err(path: &Path, e: impl ToString) -> CatalogError {
    CatalogError::File { path: path.to_owned(), reason: e.to_string() }
}

fn read(path: &Path) -> Result<String, CatalogError> {
    fs::read_to_string(path).map_err(|e| file_err(path, e))
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, CatalogError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| file_err(dir, e))? {
        let path = entry.map_err(|e| file_err(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
