//! Sectioned `key = value` configuration. Every key has a flag of the same name; flags win.

use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use stiffdiff::error::{Error, Result};

#[derive(Debug, Default)]
pub struct Config {
    ini: Option<Ini>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let ini = Ini::load_from_file(path)
            .map_err(|e| Error::InvalidConfig(format!("reading config {}: {e}", path.display())))?;
        Ok(Self { ini: Some(ini) })
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::InvalidConfig(format!("parsing config: {e}")))?;
        Ok(Self { ini: Some(ini) })
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini.as_ref()?.section(Some(section))?.get(key).map(str::trim)
    }

    /// The flag if given, else the config entry, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, section: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.pick_opt(flag, section, key)?.unwrap_or(default))
    }

    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(section, key)
            .map(|v| {
                v.parse()
                    .map_err(|e| Error::InvalidConfig(format!("[{section}] {key} = {v}: {e}")))
            })
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let c = Config::parse_str("[train]\nsteps = 700\nlr=0.01\n").unwrap();
        assert_eq!(c.pick(Some(5usize), "train", "steps", 1).unwrap(), 5);
        assert_eq!(c.pick(None, "train", "steps", 1usize).unwrap(), 700);
        assert_eq!(c.pick(None, "train", "batch-size", 16usize).unwrap(), 16);
        assert_eq!(c.pick(None, "train", "lr", 1e-3).unwrap(), 0.01);
        assert!(c.pick(None, "train", "lr", 1usize).is_err());
    }
}
