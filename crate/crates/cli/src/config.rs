//! Flat `section.key = value` experiment configuration.
//!
//! Every key has a default, unknown and repeated keys are rejected, and the
//! canonical serialization (every key except `output.dir`, sorted, values
//! normalized) is hashed into the config fingerprint.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.into() }
}

/// Documentation of one accepted key.
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

macro_rules! keys {
    ($($key:literal => $default:literal, $help:literal;)*) => {
        pub const KEYS: &[KeySpec] = &[$(KeySpec { key: $key, default: $default, help: $help }),*];
    };
}

keys! {
    "model.name" => "linear_drift", "linear_drift | geometric | translation";
    "model.b" => "1", "drift slope (linear_drift, translation)";
    "model.g0" => "0", "constant drift (translation)";
    "model.x0" => "1", "initial value";
    "measure.name" => "mu_lambda", "mu_lambda | table";
    "measure.lambda" => "0.5", "power-law exponent in (0, 1] of mu_lambda";
    "measure.table" => "", "atom table file (mark weight per line) for measure.name = table";
    "run.t" => "1", "time horizon t > 0";
    "run.n" => "10", "exhaustion level n >= 1 of the differentiated jumps";
    "run.truncation" => "", "truncation level N >= n of the simulated equation; empty means run.n";
    "run.levels" => "1", "integration by parts levels L in {1, 2}";
    "run.paths" => "10000", "Monte Carlo paths M >= 1";
    "run.seed" => "42", "64-bit seed; path p uses substream (seed, p)";
    "run.chunk_size" => "1024", "paths per parallel work unit";
    "run.reduction" => "path_order", "reduction order; only path_order is supported";
    "output.dir" => "out", "output directory";
    "ibp.g" => "one", "weight functional G: one | active | terminal";
    "ibp.phi" => "sin,cos", "test functions: sin, cos, identity, bump:<center>:<width>, sigmoid:<center>:<eps>";
    "theta.n" => "10,100,1000,10000,100000,1000000", "exhaustion levels of the theta table";
    "decay.xi_min" => "100", "smallest frequency";
    "decay.xi_max" => "1000", "largest frequency";
    "decay.xi_count" => "12", "number of log-spaced frequencies";
    "decay.bounds" => "5:1,5:2", "n:L pairs of the envelope curves";
    "density.y_min" => "-2", "first density abscissa";
    "density.y_max" => "18", "last density abscissa";
    "density.y_count" => "41", "number of density abscissae";
    "density.bandwidths" => "0.05,0.1", "bandwidths in units of the sample standard deviation";
    "coverage.grid" => "5:1,5:2,20:1,20:2,100:1,100:2", "n:L cells of the coverage table";
    "check.points" => "100", "random points of the partial-derivative check";
}

/// Keys read by each subcommand, for the help text.
pub fn keys_for(subcommand: &str) -> Vec<&'static KeySpec> {
    let own: Vec<&str> = match subcommand {
        "simulate" | "duality" => vec!["run."],
        "theta" => vec!["theta."],
        "ibp" => vec!["run.", "ibp."],
        "decay" => vec!["run.", "decay."],
        "density" => vec!["run.", "density."],
        "coverage" => vec!["run.", "coverage."],
        "check-model" => vec!["run.t", "run.n", "run.seed", "check."],
        _ => vec![],
    };
    KEYS.iter()
        .filter(|k| ["model.", "measure.", "output.dir"].iter().chain(&own).any(|p| k.key.starts_with(p)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum MeasureSpec {
    PowerLaw {
        lambda: f64,
    },
    /// Atom table with the SHA-256 of its contents.
    Table {
        path: PathBuf,
        text: String,
        sha256: String,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model_name: String,
    pub b: f64,
    pub g0: f64,
    pub x0: f64,
    pub measure: MeasureSpec,
    pub t: f64,
    pub n: usize,
    pub truncation: usize,
    pub levels: usize,
    pub paths: u64,
    pub seed: u64,
    pub chunk_size: u64,
    pub out: PathBuf,
    pub g: String,
    pub phi: Vec<String>,
    pub theta_n: Vec<usize>,
    pub xi_min: f64,
    pub xi_max: f64,
    pub xi_count: usize,
    pub decay_bounds: Vec<(usize, usize)>,
    pub y_min: f64,
    pub y_max: f64,
    pub y_count: usize,
    pub bandwidths: Vec<f64>,
    pub coverage_grid: Vec<(usize, usize)>,
    pub check_points: usize,
}

/// Raw key-value assignments, later resolved into an [`ExperimentConfig`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, text: line.to_string() });
            };
            let k = k.trim();
            if raw.values.contains_key(k) {
                return Err(ConfigError::Duplicate(k.to_string()));
            }
            raw.set(k, v.trim())?;
        }
        Ok(raw)
    }

    /// Sets or overrides a key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KEYS.iter().any(|k| k.key == key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| KEYS.iter().find(|k| k.key == key).expect("documented key").default)
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let v = self.get(key);
        v.parse().map_err(|_| invalid(key, format!("cannot parse `{v}`")))
    }

    fn real(&self, key: &str) -> Result<f64, ConfigError> {
        let v: f64 = self.num(key)?;
        if !v.is_finite() {
            return Err(invalid(key, "must be finite"));
        }
        Ok(v)
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| invalid(key, format!("cannot parse `{s}`"))))
            .collect()
    }

    fn pairs(&self, key: &str) -> Result<Vec<(usize, usize)>, ConfigError> {
        let out = self
            .list::<String>(key)?
            .iter()
            .map(|s| {
                let (n, l) = s.split_once(':').ok_or_else(|| invalid(key, format!("expected n:L, got `{s}`")))?;
                let n: usize = n.parse().map_err(|_| invalid(key, format!("cannot parse n in `{s}`")))?;
                let l: usize = l.parse().map_err(|_| invalid(key, format!("cannot parse L in `{s}`")))?;
                if n == 0 || l == 0 {
                    return Err(invalid(key, format!("n and L must be >= 1 in `{s}`")));
                }
                Ok((n, l))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(out)
    }

    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let model_name = self.get("model.name").to_string();
        if !["linear_drift", "geometric", "translation"].contains(&model_name.as_str()) {
            return Err(invalid("model.name", format!("unknown model `{model_name}`")));
        }
        let measure = match self.get("measure.name") {
            "mu_lambda" => {
                let lambda = self.real("measure.lambda")?;
                if !(lambda > 0.0 && lambda <= 1.0) {
                    return Err(invalid("measure.lambda", "must lie in (0, 1]"));
                }
                MeasureSpec::PowerLaw { lambda }
            }
            "table" => {
                let path = PathBuf::from(self.get("measure.table"));
                if path.as_os_str().is_empty() {
                    return Err(invalid("measure.table", "required when measure.name = table"));
                }
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
                let sha256 = hex::encode(Sha256::digest(text.as_bytes()));
                MeasureSpec::Table { path, text, sha256 }
            }
            other => return Err(invalid("measure.name", format!("unknown measure `{other}`"))),
        };
        let t = self.real("run.t")?;
        if !(t > 0.0) {
            return Err(invalid("run.t", "must be positive"));
        }
        let n: usize = self.num("run.n")?;
        if n == 0 {
            return Err(invalid("run.n", "must be >= 1"));
        }
        let truncation = match self.get("run.truncation") {
            "" => n,
            _ => self.num("run.truncation")?,
        };
        if truncation < n {
            return Err(invalid("run.truncation", "must be >= run.n"));
        }
        let levels: usize = self.num("run.levels")?;
        if !(1..=2).contains(&levels) {
            return Err(invalid("run.levels", "must be 1 or 2"));
        }
        let paths: u64 = self.num("run.paths")?;
        if paths == 0 {
            return Err(invalid("run.paths", "must be >= 1"));
        }
        let chunk_size: u64 = self.num("run.chunk_size")?;
        if chunk_size == 0 {
            return Err(invalid("run.chunk_size", "must be >= 1"));
        }
        if self.get("run.reduction") != "path_order" {
            return Err(invalid("run.reduction", "only path_order is supported"));
        }
        let g = self.get("ibp.g").to_string();
        if !["one", "active", "terminal"].contains(&g.as_str()) {
            return Err(invalid("ibp.g", format!("unknown functional `{g}`")));
        }
        if levels == 2 && g != "one" {
            return Err(invalid("ibp.g", "two levels support only G = one"));
        }
        let phi: Vec<String> = self.list("ibp.phi")?;
        if phi.is_empty() {
            return Err(invalid("ibp.phi", "needs at least one test function"));
        }
        for p in &phi {
            jumptime::ibp::TestFunction::parse(p).map_err(|e| invalid("ibp.phi", e.to_string()))?;
        }
        let theta_n: Vec<usize> = self.list("theta.n")?;
        if theta_n.is_empty() || theta_n.contains(&0) {
            return Err(invalid("theta.n", "needs levels >= 1"));
        }
        let (xi_min, xi_max) = (self.real("decay.xi_min")?, self.real("decay.xi_max")?);
        if !(xi_min > 0.0 && xi_max > xi_min) {
            return Err(invalid("decay.xi_max", "need 0 < decay.xi_min < decay.xi_max"));
        }
        let xi_count: usize = self.num("decay.xi_count")?;
        if xi_count < 2 {
            return Err(invalid("decay.xi_count", "must be >= 2"));
        }
        let (y_min, y_max) = (self.real("density.y_min")?, self.real("density.y_max")?);
        if !(y_max > y_min) {
            return Err(invalid("density.y_max", "must exceed density.y_min"));
        }
        let y_count: usize = self.num("density.y_count")?;
        if y_count < 2 {
            return Err(invalid("density.y_count", "must be >= 2"));
        }
        let bandwidths: Vec<f64> = self.list("density.bandwidths")?;
        if bandwidths.is_empty() || bandwidths.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(invalid("density.bandwidths", "needs positive bandwidths"));
        }
        let check_points: usize = self.num("check.points")?;
        if check_points == 0 {
            return Err(invalid("check.points", "must be >= 1"));
        }
        Ok(ExperimentConfig {
            model_name,
            b: self.real("model.b")?,
            g0: self.real("model.g0")?,
            x0: self.real("model.x0")?,
            measure,
            t,
            n,
            truncation,
            levels,
            paths,
            seed: self.num("run.seed")?,
            chunk_size,
            out: PathBuf::from(self.get("output.dir")),
            g,
            phi,
            theta_n,
            xi_min,
            xi_max,
            xi_count,
            decay_bounds: self.pairs("decay.bounds")?,
            y_min,
            y_max,
            y_count,
            bandwidths,
            coverage_grid: self.pairs("coverage.grid")?,
            check_points,
        })
    }
}

fn pairs_text(p: &[(usize, usize)]) -> String {
    p.iter().map(|(n, l)| format!("{n}:{l}")).collect::<Vec<_>>().join(",")
}

fn list_text<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        RawConfig::parse(text)?.resolve()
    }

    /// Resolved values of every fingerprinted key, in key order.
    pub fn canonical_entries(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("model.name", self.model_name.clone());
        m.insert("model.b", format!("{:?}", self.b));
        m.insert("model.g0", format!("{:?}", self.g0));
        m.insert("model.x0", format!("{:?}", self.x0));
        match &self.measure {
            MeasureSpec::PowerLaw { lambda } => {
                m.insert("measure.name", "mu_lambda".into());
                m.insert("measure.lambda", format!("{lambda:?}"));
            }
            MeasureSpec::Table { sha256, .. } => {
                m.insert("measure.name", "table".into());
                m.insert("measure.table", format!("sha256:{sha256}"));
            }
        }
        m.insert("run.t", format!("{:?}", self.t));
        m.insert("run.n", self.n.to_string());
        m.insert("run.truncation", self.truncation.to_string());
        m.insert("run.levels", self.levels.to_string());
        m.insert("run.paths", self.paths.to_string());
        m.insert("run.seed", self.seed.to_string());
        m.insert("run.chunk_size", self.chunk_size.to_string());
        m.insert("run.reduction", "path_order".into());
        m.insert("ibp.g", self.g.clone());
        m.insert("ibp.phi", self.phi.join(","));
        m.insert("theta.n", list_text(&self.theta_n));
        m.insert("decay.xi_min", format!("{:?}", self.xi_min));
        m.insert("decay.xi_max", format!("{:?}", self.xi_max));
        m.insert("decay.xi_count", self.xi_count.to_string());
        m.insert("decay.bounds", pairs_text(&self.decay_bounds));
        m.insert("density.y_min", format!("{:?}", self.y_min));
        m.insert("density.y_max", format!("{:?}", self.y_max));
        m.insert("density.y_count", self.y_count.to_string());
        m.insert("density.bandwidths", list_text(&self.bandwidths));
        m.insert("coverage.grid", pairs_text(&self.coverage_grid));
        m.insert("check.points", self.check_points.to_string());
        m
    }

    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.canonical_entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = ExperimentConfig::from_text("").unwrap();
        assert_eq!(c.truncation, c.n);
        assert_eq!(c.measure, MeasureSpec::PowerLaw { lambda: 0.5 });
        assert_eq!(c.fingerprint().len(), 64);
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        assert_eq!(RawConfig::parse("run.sed = 1"), Err(ConfigError::UnknownKey("run.sed".into())));
        assert_eq!(RawConfig::parse("run.t = 1\nrun.t = 2"), Err(ConfigError::Duplicate("run.t".into())));
        assert!(matches!(RawConfig::parse("run.t 1"), Err(ConfigError::Syntax { line: 1, .. })));
    }

    #[test]
    fn field_level_messages() {
        let e = ExperimentConfig::from_text("run.t = -1").unwrap_err();
        assert_eq!(e.to_string(), "run.t: must be positive");
        let e = ExperimentConfig::from_text("run.n = 5\nrun.truncation = 3").unwrap_err();
        assert!(e.to_string().starts_with("run.truncation"));
        assert!(ExperimentConfig::from_text("measure.lambda = 0").is_err());
        assert!(ExperimentConfig::from_text("ibp.phi = tan").is_err());
        assert!(ExperimentConfig::from_text("run.levels = 2\nibp.g = terminal").is_err());
    }

    #[test]
    fn fingerprint_ignores_formatting_and_output_dir() {
        let a = ExperimentConfig::from_text("run.t = 1\n# comment\noutput.dir = a").unwrap();
        let b = ExperimentConfig::from_text("run.t=1.0\noutput.dir = b").unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = ExperimentConfig::from_text("run.t = 1.5").unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn every_subcommand_documents_its_keys() {
        for sub in ["simulate", "theta", "duality", "ibp", "decay", "density", "coverage", "check-model"] {
            let keys = keys_for(sub);
            assert!(keys.iter().any(|k| k.key == "model.name"), "{sub}");
        }
    }
}
