//! Layered settings: command-line flag, then the `--config` TOML file, then
//! `DARKSFM_*` environment variables, then the built-in default.
//!
//! Top-level keys (`seed`, `threads`, `format`, `log_level`) live at the root
//! of the file and map to `DARKSFM_SEED` and so on. Subcommand keys live in a
//! table named after the subcommand with dashes replaced by underscores, and
//! map to `DARKSFM_<SUBCOMMAND>_<KEY>`, e.g. `[sfm] lambda_intr = 5` or
//! `DARKSFM_SFM_LAMBDA_INTR=5`.

use anyhow::{anyhow, bail, Context, Result};
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Default)]
pub struct Settings {
    file: toml::Table,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: toml::Table = text
            .parse()
            .map_err(|e| anyhow!("config {}: {e}", path.display()))?;
        Ok(Settings { file })
    }

    fn file_value(&self, section: Option<&str>, key: &str) -> Option<String> {
        let table = match section {
            Some(s) => self.file.get(&s.replace('-', "_"))?.as_table()?,
            None => &self.file,
        };
        Some(match table.get(key)? {
            toml::Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    }

    fn env_name(section: Option<&str>, key: &str) -> String {
        let mut name = String::from("DARKSFM_");
        if let Some(s) = section {
            name.push_str(&s.replace('-', "_").to_uppercase());
            name.push('_');
        }
        name.push_str(&key.to_uppercase());
        name
    }

    /// Resolves one setting; `flag` wins when present.
    pub fn get<T>(&self, flag: Option<T>, section: Option<&str>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        let (raw, origin) = match self.file_value(section, key) {
            Some(v) => (v, "config file".to_string()),
            None => match std::env::var(Self::env_name(section, key)) {
                Ok(v) => (v, Self::env_name(section, key)),
                Err(_) => return Ok(None),
            },
        };
        match raw.trim().parse() {
            Ok(v) => Ok(Some(v)),
            Err(e) => bail!("setting {key} from {origin}: cannot parse {raw:?}: {e}"),
        }
    }

    pub fn or<T>(&self, flag: Option<T>, section: Option<&str>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.get(flag, section, key)?.unwrap_or(default))
    }

    pub fn required<T>(&self, flag: Option<T>, section: &str, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(flag, Some(section), key)?.ok_or_else(|| {
            anyhow!(
                "{section}: missing --{}; set it on the command line, in [{}] of the config file, or in {}",
                key.replace('_', "-"),
                section.replace('-', "_"),
                Self::env_name(Some(section), key)
            )
        })
    }
}
