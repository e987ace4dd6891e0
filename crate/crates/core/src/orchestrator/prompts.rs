use std::path::Path;

use crate::config::ConfigError;

const EXTRACTOR: &str = include_str!("../../prompts/extractor.txt");
const ANSWERER: &str = include_str!("../../prompts/answerer.txt");
const CRITIC: &str = include_str!("../../prompts/critic.txt");

/// Plain-text templates with `{name}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub extractor: String,
    pub answerer: String,
    pub critic: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self { extractor: EXTRACTOR.into(), answerer: ANSWERER.into(), critic: CRITIC.into() }
    }
}

impl PromptTemplates {
    /// Built-in templates, overridden by any of the three files found in `dir`.
    pub fn load(dir: &Path) -> Result<Self, ConfigError> {
        let mut t = Self::default();
        for (name, slot) in [
            ("extractor.txt", &mut t.extractor),
            ("answerer.txt", &mut t.answerer),
            ("critic.txt", &mut t.critic),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(&path)
                    .map_err(|source| ConfigError::Io { path, source })?;
            }
        }
        Ok(t)
    }
}

/// Substitutes `{key}` placeholders. Values are inserted verbatim and are not
/// rescanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (key, value) in vars {
            let placeholder_len = key.len() + 2;
            if tail.len() >= placeholder_len
                && tail.as_bytes()[placeholder_len - 1] == b'}'
                && &tail[1..placeholder_len - 1] == *key
            {
                out.push_str(value);
                rest = &tail[placeholder_len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_replaces_known_keys_only() {
        let out = render("Q: {query} {\"a\":1} {unknown} {query}", &[("query", "hi {query}")]);
        assert_eq!(out, "Q: hi {query} {\"a\":1} {unknown} hi {query}");
    }

    #[test]
    fn shipped_templates_have_their_placeholders() {
        let t = PromptTemplates::default();
        assert!(t.extractor.contains("{text}"));
        for key in ["{graph}", "{chunks}", "{history}", "{feedback}", "{query}"] {
            assert!(t.answerer.contains(key), "{key}");
        }
        for key in ["{query}", "{answer}", "{context}"] {
            assert!(t.critic.contains(key), "{key}");
        }
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("critic.txt"), "rate {answer}").unwrap();
        let t = PromptTemplates::load(dir.path()).unwrap();
        assert_eq!(t.critic, "rate {answer}");
        assert_eq!(t.answerer, PromptTemplates::default().answerer);
    }
}
