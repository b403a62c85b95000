//! Parameter checkpoints: one `.dt` file per tensor plus `manifest.txt`,
//! a flat `key = value` listing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Array, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{load_tensor, save_tensor};

pub const MANIFEST: &str = "manifest.txt";
const FORMAT: &str = "lid-align-checkpoint";

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

/// Writes `params` and the `extra` metadata under `dir`. Values are stored as
/// `f32`; arrays already rounded to `f32` reload exactly.
pub fn save_params(dir: &Path, params: &ParamStore, extra: &BTreeMap<String, String>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("format = {FORMAT}\nversion = 1\n");
    for (name, value) in params {
        if !valid_name(name) {
            return Err(Error::ParamMismatch(format!("cannot store parameter named `{name}`")));
        }
        let file = format!("{name}.dt");
        save_tensor(&value.to_tensor()?, dir.join(&file))?;
        manifest.push_str(&format!("param.{name} = {file}\n"));
    }
    for (k, v) in extra {
        if k.starts_with("param.") || k.contains('\n') || v.contains('\n') {
            return Err(Error::Config(format!("invalid manifest entry `{k}`")));
        }
        manifest.push_str(&format!("{k} = {v}\n"));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))
}

pub fn load_params(dir: &Path) -> Result<(ParamStore, BTreeMap<String, String>)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut params = ParamStore::new();
    let mut extra = BTreeMap::new();
    let mut format_seen = false;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Config(format!("{}:{}: expected `key = value`", path.display(), lineno + 1)))?;
        if let Some(name) = key.strip_prefix("param.") {
            if !valid_name(value) {
                return Err(Error::Config(format!("bad tensor file name `{value}`")));
            }
            let t = load_tensor(dir.join(value))?;
            params.insert(name.to_string(), Array::from_tensor(&t));
        } else if key == "format" {
            if value != FORMAT {
                return Err(Error::Config(format!("not a checkpoint manifest: format `{value}`")));
            }
            format_seen = true;
        } else if key != "version" {
            extra.insert(key.to_string(), value.to_string());
        }
    }
    if !format_seen {
        return Err(Error::Config(format!("{} has no format line", path.display())));
    }
    Ok((params, extra))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_f32_representable_params() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = Array::new(vec![2, 2], vec![0.1, -0.2, 1.0 / 3.0, 4.0]).unwrap();
        w.round_to_f32();
        let params = ParamStore::from([("g.w".to_string(), w), ("g.b".to_string(), Array::scalar(0.5))]);
        let extra = BTreeMap::from([("step".to_string(), "17".to_string())]);
        save_params(dir.path(), &params, &extra).unwrap();
        let (back, meta) = load_params(dir.path()).unwrap();
        assert_eq!(back, params);
        assert_eq!(meta, extra);
    }

    #[test]
    fn rejects_unsafe_names() {
        let dir = tempfile::tempdir().unwrap();
        let params = ParamStore::from([("../x".to_string(), Array::scalar(1.0))]);
        assert!(save_params(dir.path(), &params, &BTreeMap::new()).is_err());
    }
}
