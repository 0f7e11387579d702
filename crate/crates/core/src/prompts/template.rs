//! Plain-text templates with `{{name}}` placeholders.
//!
//! Rendering is a single left-to-right pass: substituted values are copied
//! verbatim and never rescanned, so a statement containing `{{genre}}` stays
//! literal.

use std::collections::BTreeMap;
use std::path::Path;

use super::PromptError;

const BUILTIN: &[(&str, &str)] = &[
    ("transform", include_str!("../../templates/transform.txt")),
    ("transform_notag", include_str!("../../templates/transform_notag.txt")),
    ("transform_misaligned", include_str!("../../templates/transform_misaligned.txt")),
    ("paraphrase", include_str!("../../templates/paraphrase.txt")),
    ("solve_rs", include_str!("../../templates/solve_rs.txt")),
    ("solve_cot", include_str!("../../templates/solve_cot.txt")),
    ("solve_scot", include_str!("../../templates/solve_scot.txt")),
    ("solve_narrative", include_str!("../../templates/solve_narrative.txt")),
    ("solve_narrative_concat", include_str!("../../templates/solve_narrative_concat.txt")),
    ("solve_external", include_str!("../../templates/solve_external.txt")),
    ("backtranslate", include_str!("../../templates/backtranslate.txt")),
    ("backtranslate_retry", include_str!("../../templates/backtranslate_retry.txt")),
];

/// Immutable id -> template text map, shared across threads once built.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, String>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateRegistry {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(id, text)| (id.to_string(), text.to_string()))
                .collect(),
        }
    }

    /// Built-in templates overlaid with every `*.txt` file in `dir`; the file
    /// stem is the template id.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut registry = Self::builtin();
        let entries = std::fs::read_dir(dir).map_err(|e| PromptError::TemplateDir(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| PromptError::TemplateDir(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let text = std::fs::read_to_string(&path).map_err(|e| PromptError::TemplateDir(format!("{}: {e}", path.display())))?;
            registry.templates.insert(id.to_string(), text);
        }
        Ok(registry)
    }

    pub fn insert(&mut self, id: impl Into<String>, text: impl Into<String>) {
        self.templates.insert(id.into(), text.into());
    }

    pub fn get(&self, id: &str) -> Result<&str, PromptError> {
        self.templates
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| PromptError::UnknownTemplate(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.templates.contains_key(id)
    }

    pub fn render(&self, id: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
        render(self.get(id)?, values).map_err(|e| match e {
            PromptError::MissingPlaceholder { name, .. } => PromptError::MissingPlaceholder {
                template: id.to_string(),
                name,
            },
            other => other,
        })
    }
}

/// Substitutes every `{{name}}`. Unknown names are an error; text that merely
/// looks like braces (`{x}`, unterminated `{{`) is copied through.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) if is_placeholder_name(&after[..close]) => {
                let name = &after[..close];
                let value = values
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::MissingPlaceholder {
                        template: String::new(),
                        name: name.to_string(),
                    })?;
                out.push_str(value);
                rest = &after[close + 2..];
            }
            _ => {
                out.push_str("{{");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn is_placeholder_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}
