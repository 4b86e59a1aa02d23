//! Run manifest: a sectioned key-value text file recording everything needed
//! to reproduce a run (config snapshot, per-radiograph corruption draws,
//! per-epoch losses, final metrics). Writing then parsing then writing again
//! yields identical bytes.

use crate::error::{Error, Result};
use std::fmt::Display;
use std::path::Path;

pub const MANIFEST_HEADER: &str = "swapct-manifest v1";

/// Ordered sections of ordered key-value pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    sections: Vec<(String, Vec<(String, String)>)>,
}

impl RunManifest {
    pub fn new() -> Self {
        RunManifest::default()
    }

    fn section_mut(&mut self, name: &str) -> &mut Vec<(String, String)> {
        if let Some(pos) = self.sections.iter().position(|(s, _)| s == name) {
            &mut self.sections[pos].1
        } else {
            self.sections.push((name.to_string(), Vec::new()));
            &mut self.sections.last_mut().expect("just pushed").1
        }
    }

    /// Appends a key-value entry to a section (created on first use).
    pub fn put(&mut self, section: &str, key: &str, value: impl Display) {
        self.section_mut(section).push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|(s, _)| s == section)
            .and_then(|(_, kvs)| kvs.iter().find(|(k, _)| k == key))
            .map(|(_, v)| v.as_str())
    }

    /// All values in a section whose keys start with the given prefix, in
    /// insertion order.
    pub fn values_with_prefix(&self, section: &str, prefix: &str) -> Vec<(&str, &str)> {
        self.sections
            .iter()
            .find(|(s, _)| s == section)
            .map(|(_, kvs)| {
                kvs.iter()
                    .filter(|(k, _)| k.starts_with(prefix))
                    .map(|(k, v)| (k.as_str(), v.as_str()))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn sections(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(s, _)| s.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for (section, kvs) in &self.sections {
            out.push('[');
            out.push_str(section);
            out.push_str("]\n");
            for (k, v) in kvs {
                out.push_str(k);
                out.push_str(" = ");
                out.push_str(v);
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == MANIFEST_HEADER => {}
            other => {
                return Err(Error::Format(format!(
                    "bad manifest header: expected '{MANIFEST_HEADER}', got {other:?}"
                )))
            }
        }
        let mut manifest = RunManifest::new();
        let mut current: Option<String> = None;
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                manifest.section_mut(name);
                current = Some(name.to_string());
            } else if let Some((k, v)) = line.split_once(" = ") {
                let section = current.clone().ok_or_else(|| {
                    Error::Format(format!("manifest line {} outside any section", lineno + 2))
                })?;
                manifest.put(&section, k, v);
            } else {
                return Err(Error::Format(format!(
                    "unparseable manifest line {}: '{line}'",
                    lineno + 2
                )));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = RunManifest::new();
        m.put("config", "mode", "awgn");
        m.put("config", "n_views", 4);
        m.put("config", "lr", 0.001_f64);
        m.put("train", "epoch.1.loss", 0.123456789_f64);
        m.put("train", "epoch.2.loss", 0.0456_f64);
        m.put("validation", "epoch.10.snr_db", 15.25_f64);
        let text = m.render();
        let parsed = RunManifest::parse(&text).unwrap();
        assert_eq!(parsed, m);
        assert_eq!(parsed.render(), text);
    }

    #[test]
    fn getters_find_entries() {
        let mut m = RunManifest::new();
        m.put("config", "seed", 7);
        m.put("train", "epoch.1.loss", 1.0);
        m.put("train", "epoch.2.loss", 0.5);
        assert_eq!(m.get("config", "seed"), Some("7"));
        assert_eq!(m.values_with_prefix("train", "epoch.").len(), 2);
        assert_eq!(m.get("config", "missing"), None);
    }

    #[test]
    fn bad_header_and_stray_lines_rejected() {
        assert!(RunManifest::parse("not a manifest\n").is_err());
        let text = format!("{MANIFEST_HEADER}\nkey = value\n");
        assert!(RunManifest::parse(&text).is_err());
        let text = format!("{MANIFEST_HEADER}\n[s]\ngarbage line\n");
        assert!(RunManifest::parse(&text).is_err());
    }
}
