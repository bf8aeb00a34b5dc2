//! Scenario and needle files.
//!
//! A scenario file is TOML with the keys below; every error names the line
//! and the dotted key it refers to.
//!
//! ```toml
//! horizon = 1.0
//! l0 = 0.0                       # optional
//!
//! [domain]                       # optional, unit cube by default
//! lo = [0.0, 0.0, 0.0]
//! hi = [1.0, 1.0, 1.0]
//!
//! [inclusion]
//! shape = "ball"                 # or "ellipsoid" with `axes = [a, b, c]`
//! center_path = { times = [0.0, 1.0], points = [[0.5, 0.5, 0.4], [0.5, 0.5, 0.6]] }
//! radius_path = { times = [0.0], values = [0.15] }
//! k0 = 2.0
//!
//! [initial]                      # optional, zero by default
//! kind = "bump"                  # zero | constant | bump | probe_seeded
//! amplitude = 1.0
//! center = [0.5, 0.5, 0.5]
//! width = 0.2
//!
//! [[needle]]                     # any number of needles
//! path = { times = [0.0, 1.0], points = [[-0.1, 0.5, 0.5], [0.8, 0.5, 0.5]] }
//! extension = "clamp"            # or "linear"
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Domain, Extension, InclusionTrajectory, InitialData, Needle, PiecewiseLinear, Scenario, Shape, Vec3};

/// Parses TOML into `T`, reporting the failing key and its line.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| toml_error(text, String::new(), &e))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let key = if key == "." { String::new() } else { key };
        toml_error(text, key, e.inner())
    })
}

fn toml_error(text: &str, key: String, e: &toml::de::Error) -> Error {
    let line = match e.span() {
        Some(span) => line_at(text, span.start),
        None => key_line(text, &key).unwrap_or(0),
    };
    Error::Config {
        line,
        key,
        message: e.message().trim().to_string(),
    }
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `a.b.c = …`, following `[a]`/`[[a]]` headers; array indices in the
/// key are ignored. 0 if the key does not appear.
pub fn key_line(text: &str, key: &str) -> Option<usize> {
    let parts: Vec<&str> = key.split('.').filter(|p| p.parse::<usize>().is_err() && !p.is_empty()).collect();
    let (leaf, table) = parts.split_last()?;
    let table = table.join(".");
    let mut current = String::new();
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == key {
                header_line = Some(i + 1);
            }
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            let k = k.trim();
            let full = if current.is_empty() { k.to_string() } else { format!("{current}.{k}") };
            if (current == table && k == *leaf) || full == parts.join(".") {
                return Some(i + 1);
            }
        }
    }
    header_line
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointPath {
    pub times: Vec<f64>,
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuePath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeSpec {
    Ball,
    Ellipsoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InclusionSpec {
    pub shape: ShapeSpec,
    #[serde(default)]
    pub axes: Option<[f64; 3]>,
    pub center_path: PointPath,
    pub radius_path: ValuePath,
    pub k0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeedleSpec {
    pub path: PointPath,
    #[serde(default)]
    pub extension: Extension,
}

/// Raw contents of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub horizon: f64,
    #[serde(default)]
    pub l0: f64,
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    pub inclusion: InclusionSpec,
    #[serde(default)]
    pub initial: Option<InitialData>,
    #[serde(default)]
    pub needle: Vec<NeedleSpec>,
}

fn points(p: &[[f64; 3]]) -> Vec<Vec3> {
    p.iter().map(|q| Vec3::new(q[0], q[1], q[2])).collect()
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        parse_toml(text)
    }

    /// Builds the scenario and needles; `text` is the source, used to locate
    /// keys in error messages.
    pub fn build(&self, text: &str) -> Result<(Scenario, Vec<Needle>)> {
        let err = |key: &str, e: Error| Error::Config {
            line: key_line(text, key).unwrap_or(0),
            key: key.to_string(),
            message: e.to_string(),
        };
        let domain = match self.domain {
            Some(d) => Domain::new(Vec3::from(d.lo), Vec3::from(d.hi)).map_err(|e| err("domain", e))?,
            None => Domain::unit_cube(),
        };
        let inc = &self.inclusion;
        let shape = match (inc.shape, inc.axes) {
            (ShapeSpec::Ball, None) => Shape::Ball,
            (ShapeSpec::Ellipsoid, Some(a)) => Shape::Ellipsoid { axes: Vec3::from(a) },
            (ShapeSpec::Ball, Some(_)) => {
                return Err(err("inclusion.axes", Error::Parameter("a ball takes no axes".into())))
            }
            (ShapeSpec::Ellipsoid, None) => {
                return Err(err("inclusion.axes", Error::Parameter("an ellipsoid needs axes".into())))
            }
        };
        let center_path = PiecewiseLinear::new(inc.center_path.times.clone(), points(&inc.center_path.points))
            .map_err(|e| err("inclusion.center_path", e))?;
        let radius_path = PiecewiseLinear::new(inc.radius_path.times.clone(), inc.radius_path.values.clone())
            .map_err(|e| err("inclusion.radius_path", e))?;
        if inc.radius_path.values.iter().any(|&r| !(r > 0.0)) {
            return Err(err(
                "inclusion.radius_path",
                Error::Parameter("radii must be positive".into()),
            ));
        }
        if !(inc.k0 > 0.0 && inc.k0.is_finite()) {
            return Err(err("inclusion.k0", Error::Parameter(format!("k0 must be positive, got {}", inc.k0))));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(err("horizon", Error::Parameter(format!("horizon must be positive, got {}", self.horizon))));
        }
        let inclusion = InclusionTrajectory {
            shape,
            center_path,
            radius_path,
            k0: inc.k0,
            profile: None,
        };
        let mut scenario = Scenario::new(domain, self.horizon, inclusion);
        scenario.l0 = self.l0;
        if let Some(initial) = self.initial {
            scenario = scenario.with_initial(initial);
        }
        let needles = self
            .needle
            .iter()
            .enumerate()
            .map(|(i, n)| {
                Needle::from_points(n.path.times.clone(), points(&n.path.points), self.horizon, n.extension)
                    .map_err(|e| err(&format!("needle[{i}].path"), e))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((scenario, needles))
    }
}

/// Reads and builds a scenario file.
pub fn load_scenario(path: &Path) -> Result<(Scenario, Vec<Needle>)> {
    let text = std::fs::read_to_string(path)?;
    ScenarioFile::parse(&text)?.build(&text)
}
