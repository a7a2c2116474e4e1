//! INI-style `key = value` configuration, one section per pipeline stage.

use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Config {
    ini: Ini,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { ini })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.ini.write_to_file(path).map_err(|e| Error::io(path, e))
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini.get_from(Some(section), key).map(str::trim)
    }

    /// Typed lookup; `Ok(None)` when the key is absent.
    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(text) => text
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("[{section}] {key} = {text:?} is not valid"))),
        }
    }

    pub fn require<T: FromStr>(&self, section: &str, key: &str) -> Result<T> {
        self.get(section, key)?
            .ok_or_else(|| Error::Config(format!("missing [{section}] {key}")))
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.ini
            .with_section(Some(section))
            .set(key, value.to_string());
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.ini.section(Some(section)).is_some()
    }

    /// Keys of one section, in file order.
    pub fn keys(&self, section: &str) -> Vec<String> {
        self.ini
            .section(Some(section))
            .map(|props| props.iter().map(|(k, _)| k.to_string()).collect())
            .unwrap_or_default()
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.ini.write_to(&mut buf).expect("write to vec");
        String::from_utf8(buf).expect("ini output is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn typed_lookup() {
        let cfg = Config::parse(
            "[train]\npatch = 8\nsz = 10\nweighted = true\n\n[separate]\neps = 4,4,7,8\n",
        )
        .unwrap();
        assert_eq!(cfg.get::<usize>("train", "patch").unwrap(), Some(8));
        assert_eq!(cfg.get::<bool>("train", "weighted").unwrap(), Some(true));
        assert_eq!(cfg.raw("separate", "eps"), Some("4,4,7,8"));
        assert_eq!(cfg.get::<usize>("train", "missing").unwrap(), None);
        assert!(cfg.get::<usize>("train", "weighted").is_err());
        assert!(cfg.require::<usize>("bench", "trials").is_err());
    }

    #[test]
    fn set_then_reparse() {
        let mut cfg = Config::new();
        cfg.set("dictionary", "n", 64);
        cfg.set("dictionary", "weighted", false);
        let back = Config::parse(&cfg.to_text()).unwrap();
        assert_eq!(back.require::<usize>("dictionary", "n").unwrap(), 64);
        assert!(!back.require::<bool>("dictionary", "weighted").unwrap());
        assert_eq!(back.keys("dictionary"), vec!["n", "weighted"]);
    }
}
