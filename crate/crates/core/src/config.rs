//! Run configuration: flat `section.key = value` lines.
//!
//! ```text
//! problem.k = 2
//! problem.f = "exp(0.1*x1)"
//! grid.n1 = 32
//! ```
//!
//! Every diagnostic names the offending key.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;
use toml::Value;

use crate::elliptic::{steady_settings, EigenSettings};
use crate::exec::Exec;
use crate::flow::{FlowSettings, ProblemSpec, Scheme, StopRule, StructuralFlags};
use crate::geometry::{Domain, Grid, Point};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("syntax: {0}")]
    Syntax(String),
    #[error("{key}: {message}")]
    Field { key: String, message: String },
}

impl ConfigError {
    fn field(key: &str, message: impl fmt::Display) -> Self {
        ConfigError::Field {
            key: key.to_string(),
            message: message.to_string(),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "problem.k",
    "problem.l",
    "problem.domain",
    "problem.radius",
    "problem.a",
    "problem.b",
    "problem.half_width",
    "problem.f",
    "problem.phi",
    "problem.u0",
    "problem.u_exact",
    "problem.y0",
    "problem.c_phi",
    "problem.c_f",
    "problem.initial_subsolution",
    "grid.backend",
    "grid.n1",
    "grid.n2",
    "flow.scheme",
    "flow.stop",
    "flow.cfl",
    "flow.dt",
    "flow.tol_steady",
    "flow.tol_trans",
    "flow.window",
    "flow.t_max",
    "flow.max_steps",
    "flow.checkpoint_every",
    "flow.record_every",
    "flow.exec",
    "eigen.eps0",
    "eigen.levels",
    "output.dir",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Polar,
    Cartesian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: ProblemSpec,
    pub u_exact: Option<String>,
    pub backend: Backend,
    pub resolution: (usize, usize),
    pub flow: FlowSettings,
    pub stop: StopRule,
    pub eigen: EigenSettings,
    pub out_dir: PathBuf,
    /// SHA-256 of the normalized key/value listing.
    pub hash: String,
}

struct Fields {
    map: BTreeMap<String, Value>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

impl Fields {
    fn get(&self, key: &str) -> Option<&Value> {
        self.map.get(key)
    }

    fn str(&self, key: &str) -> Result<Option<String>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(ConfigError::field(key, format!("expected a string, got {v}"))),
        }
    }

    fn req_str(&self, key: &str) -> Result<String, ConfigError> {
        self.str(key)?
            .ok_or_else(|| ConfigError::field(key, "missing"))
    }

    fn float(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(ConfigError::field(key, format!("expected a number, got {v}"))),
        }
    }

    fn positive(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.float(key)? {
            Some(x) if !(x > 0.0 && x.is_finite()) => {
                Err(ConfigError::field(key, format!("must be positive, got {x}")))
            }
            other => Ok(other),
        }
    }

    fn uint(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as usize)),
            Some(v) => Err(ConfigError::field(
                key,
                format!("expected a nonnegative integer, got {v}"),
            )),
        }
    }

    fn bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(v) => Err(ConfigError::field(key, format!("expected true or false, got {v}"))),
        }
    }

    fn point(&self, key: &str) -> Result<Option<Point>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(a)) if a.len() == 2 => {
                let mut p = [0.0; 2];
                for (slot, v) in p.iter_mut().zip(a) {
                    *slot = match v {
                        Value::Float(x) => *x,
                        Value::Integer(i) => *i as f64,
                        _ => return Err(ConfigError::field(key, "expected two numbers")),
                    };
                }
                Ok(Some(p))
            }
            Some(_) => Err(ConfigError::field(key, "expected [x, y]")),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
        let mut map = BTreeMap::new();
        flatten("", &table, &mut map);
        if let Some(bad) = map.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(ConfigError::field(bad, "unknown key"));
        }
        let hash = {
            let mut h = Sha256::new();
            for (k, v) in &map {
                h.update(format!("{k}={v}\n").as_bytes());
            }
            h.finalize()
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect::<String>()
        };
        let fields = Fields { map };
        Self::build(&fields, hash)
    }

    fn build(c: &Fields, hash: String) -> Result<Self, ConfigError> {
        let k = c
            .uint("problem.k")?
            .ok_or_else(|| ConfigError::field("problem.k", "missing"))?;
        let l = c.uint("problem.l")?.unwrap_or(0);
        if !(1..=2).contains(&k) {
            return Err(ConfigError::field("problem.k", format!("must be 1 or 2 in the plane, got {k}")));
        }
        if l >= k {
            return Err(ConfigError::field("problem.l", format!("must be below k = {k}, got {l}")));
        }
        let domain_name = c.str("problem.domain")?.unwrap_or_else(|| "disk".into());
        let domain = match domain_name.as_str() {
            "disk" => Domain::disk(c.positive("problem.radius")?.unwrap_or(1.0))
                .map_err(|e| ConfigError::field("problem.radius", e))?,
            "ellipse" => Domain::ellipse(
                c.positive("problem.a")?
                    .ok_or_else(|| ConfigError::field("problem.a", "missing"))?,
                c.positive("problem.b")?
                    .ok_or_else(|| ConfigError::field("problem.b", "missing"))?,
            )
            .map_err(|e| ConfigError::field("problem.a", e))?,
            "square" => Domain::square(c.positive("problem.half_width")?.unwrap_or(1.0))
                .map_err(|e| ConfigError::field("problem.half_width", e))?,
            other => {
                return Err(ConfigError::field(
                    "problem.domain",
                    format!("expected disk, ellipse or square, got {other:?}"),
                ))
            }
        };
        let f = c.req_str("problem.f")?;
        let phi = c.req_str("problem.phi")?;
        let u0 = c.req_str("problem.u0")?;
        let spec = ProblemSpec::new(k, l, domain, &f, &phi, &u0).map_err(|e| {
            // messages from the problem layer already start with the key
            let text = e.to_string();
            let text = text.strip_prefix("invalid problem: ").unwrap_or(&text).to_string();
            match text.split_once(": ") {
                Some((key, rest)) if key.starts_with("problem.") => ConfigError::field(key, rest),
                _ => ConfigError::field("problem", text),
            }
        })?;
        let c_phi = c.float("problem.c_phi")?;
        if let Some(v) = c_phi {
            if !(v < 0.0) {
                return Err(ConfigError::field("problem.c_phi", format!("must be negative, got {v}")));
            }
        }
        let flags = StructuralFlags {
            c_phi,
            c_f: c.positive("problem.c_f")?,
            initial_subsolution: c.bool("problem.initial_subsolution")?.unwrap_or(false),
        };
        let spec = spec.with_flags(flags);
        let u_exact = c.str("problem.u_exact")?;
        if let Some(src) = &u_exact {
            crate::exprparse::parse_for(src, crate::exprparse::Slot::U0)
                .map_err(|e| ConfigError::field("problem.u_exact", e))?;
        }

        let backend = match c.str("grid.backend")?.as_deref() {
            None if domain_name == "square" => Backend::Cartesian,
            None => Backend::Polar,
            Some("polar") => Backend::Polar,
            Some("cartesian") => Backend::Cartesian,
            Some(other) => {
                return Err(ConfigError::field(
                    "grid.backend",
                    format!("expected polar or cartesian, got {other:?}"),
                ))
            }
        };
        let n1 = c.uint("grid.n1")?.unwrap_or(32);
        let n2 = c.uint("grid.n2")?.unwrap_or(match backend {
            Backend::Polar => 2 * n1,
            Backend::Cartesian => n1,
        });
        let probe = Grid::build(domain, (n1, n2)).map_err(|e| ConfigError::field("grid.n1", e))?;
        let built = match probe.backend() {
            crate::geometry::Backend::Polar { .. } => Backend::Polar,
            crate::geometry::Backend::Cartesian { .. } => Backend::Cartesian,
        };
        if built != backend {
            return Err(ConfigError::field(
                "grid.backend",
                format!("{domain_name} domains use the {} backend", if built == Backend::Polar { "polar" } else { "cartesian" }),
            ));
        }

        let defaults = FlowSettings::default();
        let scheme = match c.str("flow.scheme")?.as_deref() {
            None | Some("implicit") => Scheme::LinearlyImplicit,
            Some("explicit") => Scheme::Explicit,
            Some(other) => {
                return Err(ConfigError::field(
                    "flow.scheme",
                    format!("expected implicit or explicit, got {other:?}"),
                ))
            }
        };
        let stop = match c.str("flow.stop")?.as_deref() {
            None | Some("steady") => StopRule::Steady,
            Some("translating") => StopRule::Translating,
            Some("horizon") => StopRule::Horizon,
            Some(other) => {
                return Err(ConfigError::field(
                    "flow.stop",
                    format!("expected steady, translating or horizon, got {other:?}"),
                ))
            }
        };
        let exec = match c.str("flow.exec")?.as_deref() {
            None => Exec::default(),
            Some("parallel") => Exec::Parallel,
            Some("sequential") => Exec::Sequential,
            Some(other) => {
                return Err(ConfigError::field(
                    "flow.exec",
                    format!("expected parallel or sequential, got {other:?}"),
                ))
            }
        };
        if exec == Exec::Parallel && !Exec::Parallel.is_parallel() {
            return Err(ConfigError::field("flow.exec", "built without the parallel feature"));
        }
        let cfl = c.positive("flow.cfl")?.unwrap_or(defaults.cfl);
        if cfl > 1.0 {
            return Err(ConfigError::field("flow.cfl", format!("must be at most 1, got {cfl}")));
        }
        let flow = FlowSettings {
            scheme,
            cfl,
            dt: c.positive("flow.dt")?.unwrap_or(defaults.dt),
            tol_steady: c.positive("flow.tol_steady")?.unwrap_or(defaults.tol_steady),
            tol_trans: c.positive("flow.tol_trans")?.unwrap_or(defaults.tol_trans),
            window: c.uint("flow.window")?.unwrap_or(defaults.window),
            t_max: c.positive("flow.t_max")?.unwrap_or(defaults.t_max),
            max_steps: c.uint("flow.max_steps")?.unwrap_or(defaults.max_steps),
            checkpoint_every: c.uint("flow.checkpoint_every")?.unwrap_or(defaults.checkpoint_every),
            record_every: c.uint("flow.record_every")?.unwrap_or(defaults.record_every).max(1),
            exec,
            ..defaults
        };

        let y0 = c.point("problem.y0")?;
        if let Some(p) = y0 {
            if !domain.contains(p) {
                return Err(ConfigError::field("problem.y0", "point lies outside the domain"));
            }
        }
        let eigen = EigenSettings {
            eps0: c.positive("eigen.eps0")?.unwrap_or(1.0),
            levels: c.uint("eigen.levels")?.unwrap_or(6),
            y0,
            flow: steady_settings(&FlowSettings { exec, ..FlowSettings::default() }),
            ..EigenSettings::default()
        };
        let out_dir = PathBuf::from(c.str("output.dir")?.unwrap_or_else(|| "out".into()));
        Ok(Self {
            spec,
            u_exact,
            backend,
            resolution: (n1, n2),
            flow,
            stop,
            eigen,
            out_dir,
            hash,
        })
    }

    pub fn grid(&self) -> Result<Grid, crate::geometry::GeomError> {
        Grid::build(self.spec.domain, self.resolution)
    }

    pub fn outside_theory(&self) -> bool {
        self.spec.domain.nonsmooth()
    }

    /// `HQFLOW_OUT` overrides `output.dir`.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os("HQFLOW_OUT") {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.out_dir.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
problem.k = 1
problem.f = "1"
problem.phi = "1"
problem.u0 = "0.5*(x1^2+x2^2)"
grid.n1 = 8
"#;

    fn field_of(text: &str) -> String {
        match RunConfig::parse(text).unwrap_err() {
            ConfigError::Field { key, .. } => key,
            e => panic!("{e}"),
        }
    }

    #[test]
    fn defaults() {
        let c = RunConfig::parse(BASE).unwrap();
        assert_eq!(c.resolution, (8, 16));
        assert_eq!(c.backend, Backend::Polar);
        assert_eq!(c.stop, StopRule::Steady);
        assert!(!c.outside_theory());
        assert_eq!(c.hash.len(), 64);
    }

    #[test]
    fn diagnostics_name_the_key() {
        assert_eq!(field_of(&format!("{BASE}problem.l = -1\n")), "problem.l");
        assert_eq!(field_of(&format!("{BASE}flow.cfl = 2.0\n")), "flow.cfl");
        assert_eq!(field_of(&format!("{BASE}grid.mesh = 3\n")), "grid.mesh");
        assert_eq!(field_of(&format!("{BASE}flow.stop = \"never\"\n")), "flow.stop");
        assert_eq!(field_of(&BASE.replace("\"1\"\nproblem.phi", "\"log(x1\"\nproblem.phi")), "problem.f");
        assert_eq!(field_of(&format!("{BASE}problem.c_phi = 1.0\n")), "problem.c_phi");
        assert_eq!(field_of(&BASE.replace("problem.k = 1", "problem.k = 3")), "problem.k");
    }

    #[test]
    fn square_is_cartesian_and_outside_theory() {
        let c = RunConfig::parse(&format!("{BASE}problem.domain = \"square\"\n")).unwrap();
        assert_eq!(c.backend, Backend::Cartesian);
        assert!(c.outside_theory());
        assert_eq!(
            field_of(&format!("{BASE}problem.domain = \"square\"\ngrid.backend = \"polar\"\n")),
            "grid.backend"
        );
    }

    #[test]
    fn hash_ignores_layout() {
        let a = RunConfig::parse(BASE).unwrap();
        let b = RunConfig::parse(&format!("# comment\n{}", BASE.replace(" = ", "="))).unwrap();
        assert_eq!(a.hash, b.hash);
        let c = RunConfig::parse(&BASE.replace("grid.n1 = 8", "grid.n1 = 10")).unwrap();
        assert_ne!(a.hash, c.hash);
    }
}
