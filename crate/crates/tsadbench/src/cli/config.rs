//! Plain-text key–value run configuration with one section per module.
//!
//! ```text
//! # comment
//! [synth]
//! dims = 8
//! fault_kinds = step,drift
//! ```

use indexmap::IndexMap;

use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    sections: IndexMap<String, IndexMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: IndexMap<String, IndexMap<String, String>> = IndexMap::new();
        let mut current = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(Error::Parse {
                    line: line_no,
                    msg: format!("unterminated section header `{line}`"),
                })?;
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            if current.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "key outside of any [section]".to_string(),
                });
            }
            sections
                .get_mut(&current)
                .expect("section inserted above")
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { sections })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|s| s.as_str())
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| {
                Error::config(format!("[{section}] {key} = {v}: {e}"))
            }),
        }
    }

    /// Comma-separated list value.
    pub fn get_list(&self, section: &str, key: &str) -> Option<Vec<String>> {
        self.get(section, key).map(|v| {
            v.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }

    /// All keys of a section, in declaration order.
    pub fn section_keys(&self, section: &str) -> Vec<String> {
        self.sections
            .get(section)
            .map(|s| s.keys().cloned().collect())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_keys_comments() {
        let cfg = ConfigFile::parse(
            "# comment\n[synth]\ndims = 8\nfault_kinds = step, drift\n\n[benchmark]\nseed=7\n",
        )
        .unwrap();
        assert_eq!(cfg.get("synth", "dims"), Some("8"));
        assert_eq!(
            cfg.get_list("synth", "fault_kinds"),
            Some(vec!["step".to_string(), "drift".to_string()])
        );
        assert_eq!(cfg.get_parsed::<u64>("benchmark", "seed").unwrap(), Some(7));
        assert_eq!(cfg.get("missing", "x"), None);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match ConfigFile::parse("[synth]\nnot a pair\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match ConfigFile::parse("orphan = 1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }
}
