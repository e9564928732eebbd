//! Prompt templates and rendering.
//!
//! Templates ship as data files under `templates/`. Each file has a small
//! header (`template`, `version`, `source`) separated from the body by `---`.
//! Bodies use `{{slot}}` placeholders. Slots derived from the problem are
//! always available; anything else must be supplied by the caller.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::{IoStyle, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    NaiveSolution,
    TaggedSolution,
    Oracle,
    InputValidator,
    InputGenerator,
    BatchGenerator,
    Refinement,
}

impl PromptKind {
    pub const ALL: [PromptKind; 7] = [
        PromptKind::NaiveSolution,
        PromptKind::TaggedSolution,
        PromptKind::Oracle,
        PromptKind::InputValidator,
        PromptKind::InputGenerator,
        PromptKind::BatchGenerator,
        PromptKind::Refinement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::NaiveSolution => "naive_solution",
            PromptKind::TaggedSolution => "tagged_solution",
            PromptKind::Oracle => "oracle",
            PromptKind::InputValidator => "input_validator",
            PromptKind::InputGenerator => "input_generator",
            PromptKind::BatchGenerator => "batch_generator",
            PromptKind::Refinement => "refinement",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("missing prompt slot `{0}`")]
    MissingSlot(String),
    #[error("template {0} is malformed: {1}")]
    Malformed(&'static str, &'static str),
}

#[derive(Debug, Clone)]
pub struct Template {
    pub kind: PromptKind,
    pub version: u32,
    pub source: String,
    pub body: String,
}

impl Template {
    fn parse(kind: PromptKind, file: &'static str, text: &str) -> Result<Self, PromptError> {
        let (header, body) = text.split_once("\n---\n").ok_or(PromptError::Malformed(file, "no header separator"))?;
        let mut version = None;
        let mut source = None;
        for line in header.lines() {
            match line.split_once(':') {
                Some(("version", v)) => version = v.trim().parse().ok(),
                Some(("source", v)) => source = Some(v.trim().to_string()),
                Some(("template", v)) if v.trim() != kind.as_str() => {
                    return Err(PromptError::Malformed(file, "template name does not match kind"))
                }
                _ => {}
            }
        }
        Ok(Self {
            kind,
            version: version.ok_or(PromptError::Malformed(file, "missing version"))?,
            source: source.ok_or(PromptError::Malformed(file, "missing source"))?,
            body: body.to_string(),
        })
    }

    /// Slot names referenced by the body, in order of first appearance.
    pub fn slots(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) => {
                    let name = &after[..end];
                    if !out.contains(&name) {
                        out.push(name);
                    }
                    rest = &after[end + 2..];
                }
                None => break,
            }
        }
        out
    }
}

fn raw_template(kind: PromptKind) -> (&'static str, &'static str) {
    match kind {
        PromptKind::NaiveSolution => ("naive_solution.txt", include_str!("../../templates/naive_solution.txt")),
        PromptKind::TaggedSolution => ("tagged_solution.txt", include_str!("../../templates/tagged_solution.txt")),
        PromptKind::Oracle => ("oracle.txt", include_str!("../../templates/oracle.txt")),
        PromptKind::InputValidator => ("input_validator.txt", include_str!("../../templates/input_validator.txt")),
        PromptKind::InputGenerator => ("input_generator.txt", include_str!("../../templates/input_generator.txt")),
        PromptKind::BatchGenerator => ("batch_generator.txt", include_str!("../../templates/batch_generator.txt")),
        PromptKind::Refinement => ("refinement.txt", include_str!("../../templates/refinement.txt")),
    }
}

/// The shipped template for `kind`.
pub fn template(kind: PromptKind) -> &'static Template {
    static TEMPLATES: OnceLock<Vec<Template>> = OnceLock::new();
    let all = TEMPLATES.get_or_init(|| {
        PromptKind::ALL
            .iter()
            .map(|&k| {
                let (file, text) = raw_template(k);
                Template::parse(k, file, text).expect("shipped templates are well-formed")
            })
            .collect()
    });
    &all[PromptKind::ALL.iter().position(|&k| k == kind).expect("kind listed in ALL")]
}

fn problem_slot(problem: &Problem, name: &str) -> Option<String> {
    let value = match name {
        "title" => problem.title.clone(),
        "description" => problem.description.trim_end().to_string(),
        "constraints" => problem.constraints.trim_end().to_string(),
        "io_format" => match (&problem.io_style, &problem.signature) {
            (IoStyle::FunctionCall, Some(sig)) => format!(
                "Implement the function `{}({})`. It may be a top-level function or a method of a class named `Solution`. Do not read from standard input or print anything.",
                sig.name,
                sig.params.join(", ")
            ),
            _ => "Read the input from standard input and print the answer to standard output.".to_string(),
        },
        "input_encoding" => match (&problem.io_style, &problem.signature) {
            (IoStyle::FunctionCall, Some(sig)) => format!(
                "A test input is a JSON array holding the arguments of `{}({})` in order.",
                sig.name,
                sig.params.join(", ")
            ),
            _ => "A test input is the complete text given to the program on standard input; as a JSON value it is a single string.".to_string(),
        },
        "examples" => problem
            .public_tests
            .iter()
            .enumerate()
            .map(|(i, t)| format!("Example {}:\nInput:\n{}\nOutput:\n{}", i + 1, t.input.trim_end(), t.expected_output.trim_end()))
            .collect::<Vec<_>>()
            .join("\n\n"),
        "example_inputs" => problem
            .public_tests
            .iter()
            .map(|t| t.input.trim_end().to_string())
            .collect::<Vec<_>>()
            .join("\n\n"),
        _ => return None,
    };
    Some(value)
}

/// Renders the template for `kind`. Extras take precedence over
/// problem-derived slots. Substituted text is never re-expanded.
pub fn render_prompt(
    kind: PromptKind,
    problem: &Problem,
    extras: &BTreeMap<String, String>,
) -> Result<String, PromptError> {
    let tpl = template(kind);
    let mut out = String::with_capacity(tpl.body.len() + problem.description.len());
    let mut rest = tpl.body.as_str();
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            out.push_str(&rest[start..]);
            rest = "";
            break;
        };
        let name = &after[..end];
        let value = extras
            .get(name)
            .cloned()
            .or_else(|| problem_slot(problem, name))
            .ok_or_else(|| PromptError::MissingSlot(name.to_string()))?;
        out.push_str(&value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}
