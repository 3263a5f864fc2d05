//! Config files and the flag/file merge.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Subcommand names. A table under one of these keys applies only to that
/// subcommand.
pub const SECTIONS: &[&str] = &["gen-data", "gen-negatives", "search", "eval", "bridge-check"];

pub fn load(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let value: Value = if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
    } else {
        let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::to_value(table).expect("toml values map to json")
    };
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(CliError::Usage(format!("{}: expected a table of keys", path.display()))),
    }
}

/// Keys for `section`: top-level scalars overlaid by the section's table.
pub fn section(file: &Map<String, Value>, section: &str) -> Map<String, Value> {
    let mut out: Map<String, Value> =
        file.iter().filter(|(k, _)| !SECTIONS.contains(&k.as_str())).map(|(k, v)| (k.replace('_', "-"), v.clone())).collect();
    if let Some(Value::Object(t)) = file.get(section) {
        out.extend(t.iter().map(|(k, v)| (k.replace('_', "-"), v.clone())));
    }
    out
}

/// Fills every flag left unset (null or false) from the file. Unknown keys
/// are rejected by the target type.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Map<String, Value>) -> Result<T, CliError> {
    let Value::Object(mut merged) = serde_json::to_value(flags).expect("flags serialize") else {
        unreachable!("flag structs serialize to objects")
    };
    for (k, v) in file {
        match merged.get(&k) {
            Some(Value::Null) | Some(Value::Bool(false)) | None => {
                merged.insert(k, v);
            }
            _ => {}
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields, rename_all = "kebab-case")]
    struct Flags {
        seed: Option<u64>,
        max_iterations: Option<usize>,
        no_search: bool,
    }

    #[test]
    fn flags_win_and_unknown_keys_fail() {
        let file: Map<String, Value> =
            serde_json::from_str(r#"{"seed": 3, "max_iterations": 7, "no-search": true, "search": {"seed": 4}, "eval": {"x": 1}}"#)
                .unwrap();
        let flags = Flags { seed: Some(9), max_iterations: None, no_search: false };
        let got = merge(&flags, section(&file, "search")).unwrap();
        assert_eq!(got, Flags { seed: Some(9), max_iterations: Some(7), no_search: true });
        let bad: Map<String, Value> = serde_json::from_str(r#"{"sed": 3}"#).unwrap();
        assert!(merge(&flags, section(&bad, "search")).is_err());
    }
}
