use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("missing variable `{0}`")]
    MissingVariable(String),
    #[error("template `{template}`: placeholder `{name}` is not a required variable")]
    Undeclared { template: String, name: String },
    #[error("template `{template}`: unterminated placeholder at byte {at}")]
    Unterminated { template: String, at: usize },
}

/// A single-shot prompt with `${name}` placeholders. `$${` renders a literal `${`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub body: String,
    pub required_variables: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_schema: Option<String>,
}

#[derive(Debug, PartialEq)]
enum Piece<'a> {
    Lit(&'a str),
    Var(&'a str),
}

fn pieces(body: &str) -> Result<Vec<Piece<'_>>, usize> {
    let mut out = Vec::new();
    let mut rest = body;
    let mut consumed = 0;
    while let Some(i) = rest.find('$') {
        let after = &rest[i..];
        if after.starts_with("$${") {
            out.push(Piece::Lit(&rest[..i]));
            out.push(Piece::Lit("${"));
            rest = &rest[i + 3..];
            consumed += i + 3;
        } else if after.starts_with("${") {
            out.push(Piece::Lit(&rest[..i]));
            let close = after.find('}').ok_or(consumed + i)?;
            out.push(Piece::Var(after[2..close].trim()));
            rest = &after[close + 1..];
            consumed += i + close + 1;
        } else {
            out.push(Piece::Lit(&rest[..=i]));
            rest = &rest[i + 1..];
            consumed += i + 1;
        }
    }
    out.push(Piece::Lit(rest));
    Ok(out)
}

/// Text substituted for a variable: strings verbatim, anything else as compact JSON.
pub fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl PromptTemplate {
    /// Checks that every placeholder is declared and the body is well formed.
    pub fn check(&self) -> Result<(), TemplateError> {
        let ps = pieces(&self.body)
            .map_err(|at| TemplateError::Unterminated { template: self.template_id.clone(), at })?;
        for p in ps {
            if let Piece::Var(name) = p {
                if !self.required_variables.contains(name) {
                    return Err(TemplateError::Undeclared { template: self.template_id.clone(), name: name.into() });
                }
            }
        }
        Ok(())
    }

    pub fn render(&self, vars: &BTreeMap<String, Value>) -> Result<String, TemplateError> {
        if let Some(missing) = self.required_variables.iter().find(|v| !vars.contains_key(*v)) {
            return Err(TemplateError::MissingVariable(missing.clone()));
        }
        let ps = pieces(&self.body)
            .map_err(|at| TemplateError::Unterminated { template: self.template_id.clone(), at })?;
        let mut out = String::with_capacity(self.body.len());
        for p in ps {
            match p {
                Piece::Lit(s) => out.push_str(s),
                Piece::Var(name) => {
                    let v = vars.get(name).ok_or_else(|| TemplateError::MissingVariable(name.into()))?;
                    out.push_str(&value_text(v));
                }
            }
        }
        Ok(out)
    }
}
