//! Experiment plans: which scenario, which needles, which ladders.
//!
//! ```toml
//! name = "static-ball"
//! scenario = "scenarios/static-ball.toml"   # relative to the plan file
//! output = "out/static-ball"                # optional, overridden by --out
//! seed = 7
//! delta = 3.6                               # optional; from ground truth otherwise
//! noise = 0.0                               # multiplicative flux noise level
//! volume = false                            # also evaluate the volume form
//! snapshots = false                         # write reflected fields
//!
//! [grid]
//! n = 32
//! steps = 128
//!
//! [ladders]
//! tau = [8.0, 12.0, 16.0, 20.0]
//! mu = [2.0]
//! theta = [0.5]
//! t_prime = [1.0]
//!
//! [search]                                  # optional
//! theta_step = 0.02
//! theta_window = 0.06
//! min_horizon = 0.1
//!
//! [bounds]                                  # optional
//! tau = [5.0, 10.0, 20.0, 40.0]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{key_line, parse_toml, ScenarioFile};
use crate::error::{Error, Result};
use crate::reconstruct::GridSpec;
use crate::scenario::{Needle, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ladders {
    pub tau: Vec<f64>,
    pub mu: Vec<f64>,
    pub theta: Vec<f64>,
    pub t_prime: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub theta_step: f64,
    #[serde(default)]
    pub theta_window: Option<f64>,
    #[serde(default)]
    pub min_horizon: f64,
    #[serde(default = "default_safety")]
    pub delta_safety: f64,
}

fn default_safety() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub tau: Vec<f64>,
    /// Comparison distance of the lower bounds, above the true distance.
    #[serde(default = "default_offset")]
    pub offset: f64,
    /// Admissible deviation of the measured decay slope.
    #[serde(default = "default_slack")]
    pub slack: f64,
}

fn default_offset() -> f64 {
    0.3
}

fn default_slack() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub scenario: PathBuf,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub volume: bool,
    #[serde(default)]
    pub snapshots: bool,
    pub grid: GridConfig,
    pub ladders: Ladders,
    #[serde(default)]
    pub search: Option<SearchConfig>,
    #[serde(default)]
    pub bounds: Option<BoundsConfig>,
}

/// A plan with its scenario resolved and a content hash of both files.
#[derive(Debug, Clone)]
pub struct LoadedPlan {
    pub plan: ExperimentPlan,
    pub path: PathBuf,
    pub scenario: Scenario,
    pub needles: Vec<Needle>,
    /// SHA-256 over the plan text and the scenario text.
    pub hash: String,
    text: String,
}

impl ExperimentPlan {
    pub fn grid_spec(&self, horizon: f64) -> GridSpec {
        GridSpec {
            n: self.grid.n,
            dt: horizon / self.grid.steps as f64,
        }
    }
}

/// Reads a plan and the scenario file it refers to.
pub fn load_plan(path: &Path) -> Result<LoadedPlan> {
    let text = std::fs::read_to_string(path)?;
    let plan: ExperimentPlan = parse_toml(&text)?;
    let scenario_path = path.parent().unwrap_or(Path::new(".")).join(&plan.scenario);
    let scenario_text = std::fs::read_to_string(&scenario_path).map_err(|e| Error::Config {
        line: key_line(&text, "scenario").unwrap_or(0),
        key: "scenario".into(),
        message: format!("cannot read {}: {e}", scenario_path.display()),
    })?;
    let (scenario, needles) = ScenarioFile::parse(&scenario_text)?.build(&scenario_text)?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.update([0u8]);
    hasher.update(scenario_text.as_bytes());
    Ok(LoadedPlan {
        plan,
        path: path.to_path_buf(),
        scenario,
        needles,
        hash: hex::encode(hasher.finalize()),
        text,
    })
}

impl LoadedPlan {
    /// Every violated plan invariant, each prefixed with its line when known.
    pub fn violations(&self) -> Vec<String> {
        let p = &self.plan;
        let mut out = Vec::new();
        let mut push = |key: &str, msg: String| {
            let at = key_line(&self.text, key).map(|l| format!("line {l}, ")).unwrap_or_default();
            out.push(format!("{at}{key}: {msg}"));
        };
        let ladders = [
            ("ladders.tau", &p.ladders.tau),
            ("ladders.mu", &p.ladders.mu),
            ("ladders.theta", &p.ladders.theta),
            ("ladders.t_prime", &p.ladders.t_prime),
        ];
        for (key, l) in ladders {
            if l.is_empty() {
                push(key, "ladder is empty".into());
            } else if l.windows(2).any(|w| !(w[1] > w[0])) {
                push(key, format!("ladder must be strictly increasing, got {l:?}"));
            }
            if l.iter().any(|v| !v.is_finite()) {
                push(key, "ladder holds a non-finite value".into());
            }
        }
        let tau_min = p.ladders.tau.first().copied().unwrap_or(f64::NAN);
        let mu_max = p.ladders.mu.last().copied().unwrap_or(f64::NAN);
        if tau_min <= 0.0 {
            push("ladders.tau", format!("tau must be positive, got {tau_min}"));
        }
        if p.ladders.mu.first().is_some_and(|&m| m < 0.0) {
            push("ladders.mu", "mu must be nonnegative".into());
        }
        if mu_max > tau_min / 4.0 {
            push(
                "ladders.mu",
                format!("largest mu {mu_max} exceeds a quarter of the smallest tau ({tau_min}/4 = {})", tau_min / 4.0),
            );
        }
        let horizon = self.scenario.horizon;
        for &tp in &p.ladders.t_prime {
            if !(tp > 0.0 && tp <= horizon) {
                push("ladders.t_prime", format!("T' = {tp} outside (0, {horizon}]"));
            }
            for &th in &p.ladders.theta {
                if !(th > 0.0 && th < tp) {
                    push("ladders.theta", format!("theta = {th} not in the open interval (0, T' = {tp})"));
                }
            }
        }
        if p.grid.n < 4 {
            push("grid.n", format!("need at least 4 nodes per axis, got {}", p.grid.n));
        }
        if p.grid.steps < 2 {
            push("grid.steps", format!("need at least 2 time steps, got {}", p.grid.steps));
        }
        if let Some(d) = p.delta {
            if !(d > 0.0 && d.is_finite()) {
                push("delta", format!("delta must be positive, got {d}"));
            }
        }
        if !(p.noise >= 0.0 && p.noise < 1.0) {
            push("noise", format!("noise level must lie in [0, 1), got {}", p.noise));
        }
        if let Some(s) = &p.search {
            if !(s.theta_step > 0.0) {
                push("search.theta_step", format!("must be positive, got {}", s.theta_step));
            }
            if s.theta_window.is_some_and(|w| !(w > 0.0)) {
                push("search.theta_window", "must be positive".into());
            }
            if !(s.delta_safety >= 1.0) {
                push("search.delta_safety", format!("must be at least 1, got {}", s.delta_safety));
            }
            if !(s.min_horizon >= 0.0 && s.min_horizon < horizon) {
                push("search.min_horizon", format!("must lie in [0, {horizon}), got {}", s.min_horizon));
            }
        }
        if let Some(b) = &p.bounds {
            if b.tau.len() < 2 || b.tau.windows(2).any(|w| !(w[1] > w[0])) || b.tau[0] <= 0.0 {
                push("bounds.tau", format!("need a positive increasing ladder of at least 2, got {:?}", b.tau));
            }
            if !(b.offset > 0.0) {
                push("bounds.offset", "must be positive".into());
            }
        }
        for v in self.scenario.violations() {
            push("scenario", v);
        }
        for (i, n) in self.needles.iter().enumerate() {
            for v in n.violations(&self.scenario.domain) {
                push(&format!("needle[{i}]"), format!("{v} (y(t) must not lie in the closed body for t <= 0)"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Output directory: the override, else the plan's, else `out/<name>`,
    /// relative to the plan file.
    pub fn output_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        if let Some(d) = override_dir {
            return d.to_path_buf();
        }
        let base = self.path.parent().unwrap_or(Path::new("."));
        match &self.plan.output {
            Some(o) => base.join(o),
            None => base.join("out").join(&self.plan.name),
        }
    }
}

/// Loads and validates a plan, returning `"ok"` or the list of violations.
pub fn validate_plan(path: &Path) -> Result<String> {
    let loaded = load_plan(path)?;
    loaded.validate()?;
    Ok("ok".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    const SCENARIO: &str = r#"
horizon = 1.0

[inclusion]
shape = "ball"
center_path = { times = [0.0], points = [[0.5, 0.5, 0.5]] }
radius_path = { times = [0.0], values = [0.15] }
k0 = 2.0

[[needle]]
path = { times = [0.0, 0.25], points = [[-0.15, 0.5, 0.5], [0.1, 0.5, 0.5]] }
"#;

    const PLAN: &str = r#"
name = "t"
scenario = "s.toml"

[grid]
n = 8
steps = 16

[ladders]
tau = [8.0, 12.0, 16.0]
mu = [2.0]
theta = [0.5]
t_prime = [1.0]
"#;

    fn write(dir: &Path, plan: &str, scenario: &str) -> PathBuf {
        fs::write(dir.join("s.toml"), scenario).unwrap();
        let p = dir.join("plan.toml");
        fs::write(&p, plan).unwrap();
        p
    }

    #[test]
    fn well_formed_plan_is_ok() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), PLAN, SCENARIO);
        assert_eq!(validate_plan(&p).unwrap(), "ok");
    }

    fn violations(plan: &str, scenario: &str) -> Vec<String> {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), plan, scenario);
        match validate_plan(&p) {
            Err(Error::Validation(v)) => v,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mu_above_quarter_tau_is_rejected() {
        let v = violations(&PLAN.replace("mu = [2.0]", "mu = [2.5]"), SCENARIO);
        assert!(v.iter().any(|m| m.contains("ladders.mu") && m.contains("quarter")), "{v:?}");
    }

    #[test]
    fn theta_at_final_time_is_rejected() {
        let v = violations(&PLAN.replace("theta = [0.5]", "theta = [1.0]"), SCENARIO);
        assert!(v.iter().any(|m| m.contains("open interval")), "{v:?}");
    }

    #[test]
    fn unsorted_ladder_is_rejected() {
        let v = violations(&PLAN.replace("[8.0, 12.0, 16.0]", "[12.0, 8.0, 16.0]"), SCENARIO);
        assert!(v.iter().any(|m| m.contains("strictly increasing")), "{v:?}");
    }

    #[test]
    fn needle_starting_inside_is_rejected() {
        let v = violations(PLAN, &SCENARIO.replace("[-0.15, 0.5, 0.5], [0.1", "[0.05, 0.5, 0.5], [0.1"));
        assert!(v.iter().any(|m| m.contains("needle[0]") && m.contains("t <= 0")), "{v:?}");
    }

    #[test]
    fn hash_tracks_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = load_plan(&write(dir.path(), PLAN, SCENARIO)).unwrap().hash;
        let b = load_plan(&write(dir.path(), PLAN, &SCENARIO.replace("k0 = 2.0", "k0 = 3.0"))).unwrap().hash;
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
    }
}
