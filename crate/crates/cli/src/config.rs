//! Flat `key = value` configuration with command-line overrides.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Accepted keys and a one-line description each.
pub const KEYS: &[(&str, &str)] = &[
    ("beta", "inverse temperature, or a comma-separated list"),
    ("n", "vortex count N, a comma list, or a doubling range like 8..64"),
    ("m", "mass, or a comma list of masses"),
    ("a", "exponent of the mass schedule m = N^a"),
    ("cutoff", "Fourier cutoff K (default depends on the experiment)"),
    ("grid_n", "grid points per axis for kernel tables"),
    ("samples", "Monte Carlo samples / random instances"),
    ("seed", "base seed (u64)"),
    ("bins", "histogram bins per axis"),
    ("p", "exponent of the L^p distance"),
    ("h", "number of fixed positive vortices"),
    ("l", "number of fixed negative vortices"),
    ("k", "number of fixed vortices in the remainder"),
    ("order", "expansion order n (default: smallest n > 1 + beta*a/2pi)"),
    ("alpha", "exponential-moment parameter"),
    ("alpha2", "second exponential-moment parameter (>= alpha)"),
    ("records", "recorded Monte Carlo configurations per N"),
    ("chains", "independent Markov chains per N"),
    ("out", "output directory"),
];

fn normalise_key(k: &str) -> String {
    k.trim().to_ascii_lowercase().replace('-', "_")
}

fn check_key(k: &str) -> Result<()> {
    if KEYS.iter().any(|(name, _)| *name == k) {
        Ok(())
    } else {
        let known: Vec<&str> = KEYS.iter().map(|(n, _)| *n).collect();
        bail!("unknown key `{k}` (known keys: {})", known.join(", "))
    }
}

/// Raw key-value pairs plus a record of every value the run actually used.
#[derive(Debug, Default)]
pub struct Params {
    raw: BTreeMap<String, String>,
    used: RefCell<BTreeMap<String, String>>,
}

impl Params {
    /// Parses a config file's text: one `key = value` per line, `#` comments.
    pub fn parse_file_text(text: &str) -> Result<Self> {
        let mut p = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", lineno + 1))?;
            p.set(k, v.trim()).with_context(|| format!("line {}", lineno + 1))?;
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse_file_text(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Sets (or overrides) a value after validating the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = normalise_key(key);
        check_key(&k)?;
        if value.is_empty() {
            bail!("key `{k}` has an empty value");
        }
        self.raw.insert(k, value.to_string());
        Ok(())
    }

    fn record(&self, key: &str, value: impl Display) {
        self.used.borrow_mut().insert(key.to_string(), value.to_string());
    }

    fn parse_one<T: FromStr>(key: &str, s: &str) -> Result<T>
    where
        T::Err: Display,
    {
        s.trim()
            .parse()
            .map_err(|e| anyhow!("key `{key}`: cannot parse `{s}`: {e}"))
    }

    pub fn get<T: FromStr + Display + Copy>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let v = match self.raw.get(key) {
            Some(s) => Self::parse_one(key, s)?,
            None => default,
        };
        self.record(key, v);
        Ok(v)
    }

    pub fn get_opt<T: FromStr + Display + Copy>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw.get(key) {
            Some(s) => {
                let v = Self::parse_one(key, s)?;
                self.record(key, v);
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    pub fn list_f64(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        let v = match self.raw.get(key) {
            Some(s) => s
                .split(',')
                .map(|x| Self::parse_one(key, x))
                .collect::<Result<Vec<f64>>>()?,
            None => default.to_vec(),
        };
        self.record(key, join(&v));
        Ok(v)
    }

    /// Comma list, or `a..b` for the doubling sequence `a, 2a, ..., b`.
    pub fn list_usize(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        let v = match self.raw.get(key) {
            Some(s) if s.contains("..") => {
                let (a, b) = s.split_once("..").expect("checked");
                let (a, b): (usize, usize) = (Self::parse_one(key, a)?, Self::parse_one(key, b)?);
                if a == 0 || b < a {
                    bail!("key `{key}`: bad range `{s}`");
                }
                std::iter::successors(Some(a), |x| Some(x * 2))
                    .take_while(|x| *x <= b)
                    .collect()
            }
            Some(s) => s
                .split(',')
                .map(|x| Self::parse_one(key, x))
                .collect::<Result<Vec<usize>>>()?,
            None => default.to_vec(),
        };
        self.record(key, join(&v));
        Ok(v)
    }

    pub fn out_dir(&self) -> String {
        let out = self.raw.get("out").cloned().unwrap_or_else(|| "out".into());
        self.record("out", &out);
        out
    }

    /// Every value that was read, with defaults filled in.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        self.used.borrow().clone()
    }
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_overrides() {
        let err = Params::parse_file_text("# comment\nbeta = 2\nn-grid-ignored = 1\n").unwrap_err();
        assert!(format!("{err:#}").contains("line 3"));
        assert!(Params::parse_file_text("beta 2\n").is_err());
        let mut p = Params::parse_file_text("beta = 2\nsamples=10 # trailing\n").unwrap();
        p.set("beta", "3").unwrap();
        assert_eq!(p.get("beta", 1.0).unwrap(), 3.0);
        assert_eq!(p.get("samples", 1usize).unwrap(), 10);
        assert_eq!(p.get("seed", 7u64).unwrap(), 7);
        assert_eq!(p.resolved().get("seed").unwrap(), "7");
        assert!(p.set("bogus", "1").is_err());
    }

    #[test]
    fn lists_and_ranges() {
        let mut p = Params::default();
        p.set("n", "8..64").unwrap();
        p.set("m", "3,5,10").unwrap();
        assert_eq!(p.list_usize("n", &[]).unwrap(), vec![8, 16, 32, 64]);
        assert_eq!(p.list_f64("m", &[]).unwrap(), vec![3.0, 5.0, 10.0]);
        p.set("n", "4,6").unwrap();
        assert_eq!(p.list_usize("n", &[]).unwrap(), vec![4, 6]);
        p.set("n", "8..4").unwrap();
        assert!(p.list_usize("n", &[]).is_err());
        p.set("beta", "x").unwrap();
        assert!(p.get("beta", 1.0).is_err());
    }
}
