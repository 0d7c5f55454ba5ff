//! `key=value` overrides on top of any serializable configuration.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Parses `raw` as a TOML value, falling back to a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies overrides such as `epochs=5` or `model.channels=16`. Dotted keys
/// descend into tables. A key must already exist unless it is listed in
/// `optional` (for fields that are omitted when unset).
pub fn apply_overrides<C, S>(base: &C, overrides: &[S], optional: &[&str]) -> Result<C>
where
    C: Serialize + DeserializeOwned,
    S: AsRef<str>,
{
    let mut root = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
    for ov in overrides {
        let ov = ov.as_ref();
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
        let key = key.trim();
        let path: Vec<&str> = key.split('.').collect();
        let (last, parents) = path.split_last().expect("split yields one item");
        let mut table = &mut root;
        for p in parents {
            table = match table.get_mut(*p) {
                Some(toml::Value::Table(t)) => t,
                _ => return Err(Error::Config(format!("unknown config section `{p}` in `{key}`"))),
            };
        }
        if !table.contains_key(*last) && !optional.contains(&key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        table.insert(last.to_string(), parse_value(raw.trim()));
    }
    toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

pub fn to_toml<C: Serialize>(c: &C) -> Result<String> {
    toml::to_string(c).map_err(|e| Error::Config(format!("serializing config: {e}")))
}

pub fn from_toml<C: DeserializeOwned>(text: &str) -> Result<C> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}
