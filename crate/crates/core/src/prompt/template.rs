//! Versioned prompt templates with `{name}` placeholders.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template `{template}` has no value for placeholder `{name}`")]
    UnboundPlaceholder { template: &'static str, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub version: u32,
    pub text: &'static str,
}

impl Template {
    /// `name@version`, recorded in transcripts and run manifests.
    pub fn id(&self) -> String {
        format!("{}@{}", self.name, self.version)
    }

    /// Single-pass substitution: substituted values are never re-scanned for placeholders.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let ident_len = after
                .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
                .unwrap_or(after.len());
            if ident_len > 0 && after[ident_len..].starts_with('}') {
                let name = &after[..ident_len];
                let value = bindings
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| TemplateError::UnboundPlaceholder {
                        template: self.name,
                        name: name.to_string(),
                    })?;
                out.push_str(value);
                rest = &after[ident_len + 1..];
            } else {
                out.push('{');
                rest = after;
            }
        }
        out.push_str(rest);
        Ok(out)
    }

    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        let mut rest = self.text;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let len = after
                .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
                .unwrap_or(after.len());
            if len > 0 && after[len..].starts_with('}') && !names.contains(&&after[..len]) {
                names.push(&after[..len]);
            }
            rest = after;
        }
        names
    }
}

pub const BASE: Template = Template {
    name: "base",
    version: 1,
    text: include_str!("../../templates/base.txt"),
};

pub const NARRATOR: Template = Template {
    name: "narrator",
    version: 1,
    text: include_str!("../../templates/narrator.txt"),
};

pub const EVALUATOR: Template = Template {
    name: "evaluator",
    version: 1,
    text: include_str!("../../templates/evaluator.txt"),
};

pub const CRITIC_SUMMARY: Template = Template {
    name: "critic_summary",
    version: 1,
    text: include_str!("../../templates/critic_summary.txt"),
};

pub const COHERENCE: Template = Template {
    name: "coherence",
    version: 1,
    text: include_str!("../../templates/coherence.txt"),
};

pub const ALL: [Template; 5] = [BASE, NARRATOR, EVALUATOR, CRITIC_SUMMARY, COHERENCE];

/// Ids of every shipped template, in a fixed order.
pub fn versions() -> Vec<String> {
    ALL.iter().map(Template::id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitution_is_single_pass() {
        let t = Template {
            name: "t",
            version: 1,
            text: "a {x} b {y} {not closed",
        };
        let out = t.render(&[("x", "{y}"), ("y", "Y")]).unwrap();
        assert_eq!(out, "a {y} b Y {not closed");
    }

    #[test]
    fn unbound_placeholder_is_an_error() {
        let t = Template {
            name: "t",
            version: 2,
            text: "{missing}",
        };
        assert!(t.render(&[]).is_err());
        assert_eq!(t.id(), "t@2");
    }

    #[test]
    fn shipped_placeholders() {
        assert_eq!(
            NARRATOR.placeholders(),
            ["initial_prompt", "last_narrative", "faithful_feedback", "coherence_section"]
        );
        assert_eq!(EVALUATOR.placeholders().len(), 5);
        assert_eq!(CRITIC_SUMMARY.placeholders(), ["combined_feedback"]);
        assert_eq!(COHERENCE.placeholders(), ["narrative"]);
    }
}
