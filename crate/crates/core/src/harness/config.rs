//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Recognized keys:
//!
//! ```text
//! base.family        gaussian | laplacian            (gaussian)
//! base.bandwidth     positive real                   (0.5)
//! base.dim           positive integer                (1)
//! embed.family       linear | gaussian_on_h          (linear)
//! embed.sigma        positive real                   (1.0)
//! data.n             meta-sample size                (64)
//! data.d             bag size                        (64)
//! data.meta_family   gaussian_means | mixture        (gaussian_means)
//! data.spread        point spread around θ           (0.1)
//! data.noise_sigma   label noise                     (0.1)
//! data.label_bound   M                               (5.0)
//! truth.kind         linear_mean | rkhs_combination  (rkhs_combination)
//! truth.w            comma list, one weight per dim  (1/p each)
//! truth.anchors      anchor count                    (5)
//! truth.anchor_seed  integer                         (7)
//! penalty.kind       identity | laplacian            (laplacian)
//! penalty.bandwidth  positive real                   (0.5)
//! schedule.r         (0, 1]                          (0.5)
//! schedule.beta      (0, 1] or `auto`                (auto)
//! schedule.alpha     (0, 1]                          (1.0)
//! experiment.sizes        comma list                 (64,128,256,512,1024)
//! experiment.n            distributed sample size    (512)
//! experiment.machines     comma list                 (1,2,4,8)
//! experiment.seeds        comma list                 (1,2,3,4,5)
//! experiment.d_max        bag-size cap               (4096)
//! experiment.test_bags    test bag count             (200)
//! experiment.reference_d  test bag size              (2048)
//! partition.strategy      contiguous | shuffled      (contiguous)
//! seed                    integer                    (0)
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "base.family",
    "base.bandwidth",
    "base.dim",
    "embed.family",
    "embed.sigma",
    "data.n",
    "data.d",
    "data.meta_family",
    "data.spread",
    "data.noise_sigma",
    "data.label_bound",
    "truth.kind",
    "truth.w",
    "truth.anchors",
    "truth.anchor_seed",
    "penalty.kind",
    "penalty.bandwidth",
    "schedule.r",
    "schedule.beta",
    "schedule.alpha",
    "experiment.sizes",
    "experiment.n",
    "experiment.machines",
    "experiment.seeds",
    "experiment.d_max",
    "experiment.test_bags",
    "experiment.reference_d",
    "partition.strategy",
    "seed",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Parse(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(Self { entries })
    }

    /// Parses and rejects keys outside [`KNOWN_KEYS`], which catches typos.
    pub fn parse_strict(text: &str) -> Result<Self> {
        let c = Self::parse(text)?;
        if let Some(k) = c.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            return Err(Error::Parse(format!("unknown key `{k}`")));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse_strict(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn value<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Parse(format!("`{key}`: cannot parse `{s}`"))),
        }
    }

    pub fn list<T: FromStr + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse()
                        .map_err(|_| Error::Parse(format!("`{key}`: cannot parse `{item}`")))
                })
                .collect(),
        }
    }

    pub fn string(&self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or(default).to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let c = Config::parse("# c\n a = 1.5 \n\nlist=1, 2,3\nname=x").unwrap();
        assert_eq!(c.value("a", 0.0).unwrap(), 1.5);
        assert_eq!(c.list::<usize>("list", &[]).unwrap(), vec![1, 2, 3]);
        assert_eq!(c.value("missing", 7usize).unwrap(), 7);
        assert_eq!(c.string("name", "y"), "x");
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(Config::parse("novalue").is_err());
        assert!(Config::parse("a=1\na=2").is_err());
        assert!(Config::parse("a=x").unwrap().value("a", 0.0).is_err());
        assert!(Config::parse_strict("base.bandwith = 1").is_err());
        assert!(Config::parse_strict("base.bandwidth = 1").is_ok());
    }
}
