//! Layered `key = value` configuration.
//!
//! Resolution order, lowest first: built-in defaults, the config file, the
//! `XCAM_SEED` environment variable (seed only), command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde_json::{json, Value};
use xcam_core::{Error, Result};

pub const SEED_ENV: &str = "XCAM_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "config file",
            Source::Env => "environment",
            Source::Flag => "flag",
        })
    }
}

/// Key with its built-in default; `None` means no default.
pub type KeySpec = (&'static str, Option<&'static str>);

pub struct Resolved {
    keys: Vec<&'static str>,
    values: BTreeMap<&'static str, (String, Source)>,
}

fn config_error(msg: String) -> Error {
    Error::Config(msg)
}

/// Parses a flat `key = value` file; `#` starts a comment line.
pub fn parse_config_file(path: &Path, keys: &[KeySpec]) -> Result<Vec<(&'static str, String)>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out: Vec<(&'static str, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {reason}", n + 1),
        };
        let (k, v) = line.split_once('=').ok_or_else(|| fail("expected `key = value`".into()))?;
        let k = k.trim().replace('-', "_");
        let key = keys
            .iter()
            .map(|(name, _)| *name)
            .find(|name| *name == k)
            .ok_or_else(|| fail(format!("unknown key {k:?}")))?;
        if out.iter().any(|(seen, _)| *seen == key) {
            return Err(fail(format!("duplicate key {key:?}")));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

impl Resolved {
    pub fn resolve(
        keys: &[KeySpec],
        file: Option<&Path>,
        env_seed: Option<String>,
        flags: Vec<(&'static str, String)>,
    ) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, d) in keys {
            if let Some(d) = d {
                values.insert(*k, (d.to_string(), Source::Default));
            }
        }
        if let Some(path) = file {
            for (k, v) in parse_config_file(path, keys)? {
                values.insert(k, (v, Source::File));
            }
        }
        if let Some(seed) = env_seed {
            if keys.iter().any(|(k, _)| *k == "seed") {
                values.insert("seed", (seed, Source::Env));
            }
        }
        for (k, v) in flags {
            values.insert(k, (v, Source::Flag));
        }
        Ok(Resolved {
            keys: keys.iter().map(|(k, _)| *k).collect(),
            values,
        })
    }

    #[cfg(test)]
    pub fn source(&self, key: &str) -> Option<Source> {
        self.values.get(key).map(|(_, s)| *s)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let (v, source) = self.values.get(key).ok_or_else(|| {
            let hint = if key == "seed" {
                format!(" (pass --seed, set {SEED_ENV} or add it to the config file)")
            } else {
                String::new()
            };
            config_error(format!("{key} is required{hint}"))
        })?;
        v.parse()
            .map_err(|e| config_error(format!("{key} = {v:?} from {source}: {e}")))
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        if self.values.contains_key(key) {
            self.get(key).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Resolved values in declaration order, one `key = value` line each.
    /// Unset keys appear as comments. Loadable with `--config`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for k in &self.keys {
            match self.values.get(k) {
                Some((v, _)) => out.push_str(&format!("{k} = {v}\n")),
                None => out.push_str(&format!("# {k} is unset\n")),
            }
        }
        out
    }

    /// `{key: {value, source}}` for run manifests.
    pub fn to_json(&self) -> Value {
        let map: serde_json::Map<String, Value> = self
            .keys
            .iter()
            .filter_map(|k| {
                self.values
                    .get(k)
                    .map(|(v, s)| (k.to_string(), json!({"value": v, "source": s.to_string()})))
            })
            .collect();
        json!({
            "precedence": ["default", "config file", "environment", "flag"],
            "values": map,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEYS: &[KeySpec] = &[("seed", None), ("epochs", Some("120"))];

    #[test]
    fn flags_beat_env_beat_defaults() {
        let r = Resolved::resolve(KEYS, None, Some("5".into()), vec![]).unwrap();
        assert_eq!(r.get::<u64>("seed").unwrap(), 5);
        assert_eq!(r.source("seed"), Some(Source::Env));
        let r = Resolved::resolve(KEYS, None, Some("5".into()), vec![("seed", "9".into())]).unwrap();
        assert_eq!(r.get::<u64>("seed").unwrap(), 9);
        assert_eq!(r.get::<usize>("epochs").unwrap(), 120);
    }

    #[test]
    fn missing_seed_is_an_error() {
        let r = Resolved::resolve(KEYS, None, None, vec![]).unwrap();
        let e = r.get::<u64>("seed").unwrap_err().to_string();
        assert!(e.contains(SEED_ENV), "{e}");
        assert!(r.render().contains("# seed is unset"));
    }

    #[test]
    fn config_file_sits_between_defaults_and_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nepochs = 7\nseed = 1\n").unwrap();
        let r = Resolved::resolve(KEYS, Some(&path), Some("2".into()), vec![]).unwrap();
        assert_eq!(r.get::<usize>("epochs").unwrap(), 7);
        assert_eq!(r.get::<u64>("seed").unwrap(), 2);
        std::fs::write(&path, "bogus = 1\n").unwrap();
        assert!(Resolved::resolve(KEYS, Some(&path), None, vec![]).is_err());
    }
}
