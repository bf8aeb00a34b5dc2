//! Plan execution: indicator ladders, reconstruction, bound checks, plots.
//!
//! Files written to the output directory:
//!
//! | file | contents |
//! |------|----------|
//! | `indicators.csv` | one row per evaluated ladder cell, see [`CSV_COLUMNS`] |
//! | `reconstruction.json` | [`RunReport`]: samples, distance estimates, searches |
//! | `bounds.json` | [`BoundsFile`]: quadrature checks of the decay estimates |
//! | `plots/*.svg` | `ln|I|` against `τ`, `d̂(θ)` against the true distance, `F̂` and the `t_n` staircase |
//! | `snapshots/*.bin`, `*.json` | reflected fields, when the plan asks for them |
//! | `diagnostics.txt` | the error, when the run fails |
//!
//! Every file carries the plan hash. Floats are written in shortest
//! round-trip form, and results are merged in sorted key order, so reruns
//! are byte-identical whatever the worker count.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{check_gradp_bounds, check_gradp_decay, check_p_squared_bound, check_spacetime_bounds, BoundReport, Region};
use crate::error::{Error, Result};
use crate::indicator::{IndicatorSample, CSV_HEADER};
use crate::logspace::SignedLog;
use crate::plan::{ExperimentPlan, LoadedPlan};
use crate::probe::{EtaMode, ProbeParams};
use crate::reconstruct::{
    delta_from_ground_truth, estimate_distance_from, scan_one, DistanceEstimate, Evaluator, FConfig, NeedleScan, Pipeline,
    SearchOptions, TStar,
};
use crate::scenario::{t_star_true, Shape};
use crate::solver::write_snapshot;
use crate::svg::{Chart, Series, Style};

/// Column names of `indicators.csv`.
pub const CSV_COLUMNS: &str = "needle";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub needle: usize,
    pub sample: IndicatorSample,
}

/// A ladder cell that could not be evaluated, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub needle: usize,
    pub what: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    pub needle: usize,
    pub mu: f64,
    pub t_prime: f64,
    /// `d(y(θ), D(θ))` from the scenario geometry.
    pub truth: f64,
    pub estimate: DistanceEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleInfo {
    pub index: usize,
    pub t_star_true: Option<f64>,
    /// Latest final time the solves cover.
    pub solved_horizon: f64,
    /// `(θ, d(y(θ), D(θ)))` on a uniform grid.
    pub truth_curve: Vec<(f64, f64)>,
}

/// Contents of `reconstruction.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub plan_hash: String,
    pub plan: ExperimentPlan,
    pub needles: Vec<NeedleInfo>,
    pub samples: Vec<CellRecord>,
    pub distances: Vec<DistanceRecord>,
    pub delta: Option<f64>,
    pub searches: Vec<NeedleScan>,
    pub skipped: Vec<Skipped>,
}

/// Contents of `bounds.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsFile {
    pub plan_hash: String,
    pub passed: bool,
    pub report: BoundReport,
}

/// Paths written by a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

fn skip_or_fail(e: Error) -> Result<String> {
    match e {
        Error::Clearance { .. } | Error::Arity { .. } => Ok(e.to_string()),
        other => Err(other),
    }
}

/// Runs a validated plan on a pool of `workers` threads; on failure writes
/// `diagnostics.txt` into the output directory and returns the error.
pub fn run_plan(loaded: &LoadedPlan, out: &Path, workers: usize) -> Result<RunOutput> {
    loaded.validate()?;
    fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Parameter(format!("worker pool: {e}")))?;
    let result = pool.install(|| execute(loaded, out));
    if let Err(e) = &result {
        let text = format!("plan: {}\nplan_hash: {}\nerror: {e}\n", loaded.plan.name, loaded.hash);
        fs::write(out.join("diagnostics.txt"), text)?;
    }
    result
}

fn execute(loaded: &LoadedPlan, out: &Path) -> Result<RunOutput> {
    let plan = &loaded.plan;
    let scenario = &loaded.scenario;
    let spec = plan.grid_spec(scenario.horizon);
    let pipelines = loaded
        .needles
        .iter()
        .enumerate()
        .map(|(i, n)| {
            Pipeline::new(scenario.clone(), n.clone(), spec).map(|p| p.with_noise(plan.noise, plan.seed.wrapping_add(i as u64)))
        })
        .collect::<Result<Vec<_>>>()?;

    // indicator ladders
    let l = &plan.ladders;
    let mut cells = Vec::new();
    for i in 0..pipelines.len() {
        for &tp in &l.t_prime {
            for &th in &l.theta {
                for &mu in &l.mu {
                    for &tau in &l.tau {
                        cells.push((i, tp, th, mu, tau));
                    }
                }
            }
        }
    }
    let evaluated: Vec<Result<std::result::Result<CellRecord, Skipped>>> = cells
        .par_iter()
        .map(|&(i, tp, th, mu, tau)| {
            let params = ProbeParams::new(tau, mu, th, tp, EtaMode::MuSign)?;
            match pipelines[i].sample(&params, plan.volume) {
                Ok(sample) => Ok(Ok(CellRecord { needle: i, sample })),
                Err(e) => Ok(Err(Skipped {
                    needle: i,
                    what: format!("tau={tau} mu={mu} theta={th} t_prime={tp}"),
                    reason: skip_or_fail(e)?,
                })),
            }
        })
        .collect();
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for r in evaluated {
        match r? {
            Ok(c) => samples.push(c),
            Err(s) => skipped.push(s),
        }
    }

    // distance estimates per (needle, T', θ, μ)
    let mut distances = Vec::new();
    for i in 0..pipelines.len() {
        for &tp in &l.t_prime {
            for &th in &l.theta {
                for &mu in &l.mu {
                    let points: Vec<(f64, SignedLog)> = samples
                        .iter()
                        .filter(|c| c.needle == i && c.sample.params.t_prime == tp && c.sample.params.theta == th && c.sample.params.mu == mu)
                        .map(|c| (c.sample.params.tau, c.sample.i_boundary))
                        .collect();
                    match estimate_distance_from(th, &points) {
                        Ok(estimate) => distances.push(DistanceRecord {
                            needle: i,
                            mu,
                            t_prime: tp,
                            truth: scenario.inclusion.distance(th, &loaded.needles[i].at(th)),
                            estimate,
                        }),
                        Err(e) => skipped.push(Skipped {
                            needle: i,
                            what: format!("distance mu={mu} theta={th} t_prime={tp}"),
                            reason: skip_or_fail(e)?,
                        }),
                    }
                }
            }
        }
    }

    // first-contact searches
    let mut searches = Vec::new();
    let mut delta_used = None;
    if let Some(sc) = &plan.search {
        let config = FConfig {
            tau_ladder: l.tau.clone(),
            mu_ladder: l.mu.clone(),
            theta_step: sc.theta_step,
            theta_window: sc.theta_window,
        };
        let opts = SearchOptions {
            min_horizon: sc.min_horizon,
            step_floor: 1e-3,
            ..SearchOptions::default()
        };
        let deltas = loaded
            .needles
            .iter()
            .map(|n| match plan.delta {
                Some(d) => Ok(d),
                None => delta_from_ground_truth(scenario, n, scenario.horizon, sc.delta_safety),
            })
            .collect::<Result<Vec<_>>>()?;
        // one δ for the whole scan: the largest per-needle rate
        let delta = deltas.iter().copied().fold(0.0, f64::max);
        delta_used = Some(delta);
        let results: Vec<Result<std::result::Result<NeedleScan, Skipped>>> = pipelines
            .par_iter()
            .enumerate()
            .map(|(i, p)| match scan_one(i, p.needle(), p, &config, delta, scenario.horizon, &opts) {
                Ok(s) => Ok(Ok(s)),
                Err(e) => Ok(Err(Skipped {
                    needle: i,
                    what: "search".into(),
                    reason: skip_or_fail(e)?,
                })),
            })
            .collect();
        for r in results {
            match r? {
                Ok(s) => searches.push(s),
                Err(s) => skipped.push(s),
            }
        }
    }

    let needles: Vec<NeedleInfo> = pipelines
        .iter()
        .enumerate()
        .map(|(i, p)| NeedleInfo {
            index: i,
            t_star_true: t_star_true(scenario, p.needle()),
            solved_horizon: p.horizon(),
            truth_curve: (0..=100)
                .map(|k| {
                    let t = scenario.horizon * k as f64 / 100.0;
                    (t, scenario.inclusion.distance(t, &p.needle().at(t)))
                })
                .collect(),
        })
        .collect();

    let report = RunReport {
        plan_hash: loaded.hash.clone(),
        plan: plan.clone(),
        needles,
        samples,
        distances,
        delta: delta_used,
        searches,
        skipped,
    };

    let mut files = Vec::new();
    let csv = out.join("indicators.csv");
    fs::write(&csv, indicators_csv(&report))?;
    files.push(csv);
    let json = out.join("reconstruction.json");
    fs::write(&json, serde_json::to_string_pretty(&report)? + "\n")?;
    files.push(json);

    if let Some(bc) = &plan.bounds {
        let bounds = bound_checks(loaded, bc)?;
        let path = out.join("bounds.json");
        fs::write(&path, serde_json::to_string_pretty(&bounds)? + "\n")?;
        files.push(path);
    }
    files.extend(write_plots(&report, &out.join("plots"))?);

    if plan.snapshots {
        let dir = out.join("snapshots");
        fs::create_dir_all(&dir)?;
        for (i, p) in pipelines.iter().enumerate() {
            for &tau in &l.tau {
                let field = p.reflected_field(tau)?;
                let params = ProbeParams::new(tau, 0.0, 0.5 * field.grid.t_end, field.grid.t_end, EtaMode::Zero)?;
                let (bin, meta) = write_snapshot(&field, &dir.join(format!("needle{i}_tau{tau}")), &loaded.hash, Some(&params))?;
                files.push(bin);
                files.push(meta);
            }
        }
    }
    Ok(RunOutput {
        dir: out.to_path_buf(),
        files,
    })
}

/// `indicators.csv` with its self-describing comment header.
pub fn indicators_csv(report: &RunReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("# heatprobe indicators; plan={}; plan_hash={}\n", report.plan.name, report.plan_hash));
    s.push_str(&format!(
        "# grid n={} steps={}; seed={}; noise={}\n",
        report.plan.grid.n, report.plan.grid.steps, report.plan.seed, report.plan.noise
    ));
    s.push_str(&format!("{CSV_COLUMNS},{CSV_HEADER}\n"));
    for c in &report.samples {
        s.push_str(&format!("{},{}\n", c.needle, c.sample.csv_row()));
    }
    s
}

fn bound_checks(loaded: &LoadedPlan, bc: &crate::plan::BoundsConfig) -> Result<BoundsFile> {
    let scenario = &loaded.scenario;
    let plan = &loaded.plan;
    let mut report = BoundReport::default();
    if !matches!(scenario.inclusion.shape, Shape::Ball) || scenario.contrast_sign() == 0 {
        return Ok(BoundsFile {
            plan_hash: loaded.hash.clone(),
            passed: true,
            report,
        });
    }
    let mu = plan.ladders.mu.last().copied().unwrap_or(0.0);
    let tp = plan.ladders.t_prime.last().copied().unwrap_or(scenario.horizon);
    for (i, needle) in loaded.needles.iter().enumerate() {
        for &th in &plan.ladders.theta {
            let y = needle.at(th);
            let region = Region::Ball {
                center: scenario.inclusion.center(th),
                radius: scenario.inclusion.radius(th),
            };
            let d0 = region.distance(&y);
            if d0 <= 0.0 {
                continue;
            }
            let tag = |name: &str| format!("{name}[needle={i},theta={th}]");
            let mut p2 = check_p_squared_bound(&region, &y, &bc.tau)?;
            p2.name = tag(&p2.name);
            let g = check_gradp_bounds(&region, &y, d0 + bc.offset, &bc.tau)?;
            let mut decay = check_gradp_decay(&region, &y, d0 + bc.offset, &bc.tau, bc.slack)?;
            decay.name = tag(&decay.name);
            report.checks.push(p2);
            for mut c in [g.upper, g.lower, g.lower_explicit] {
                c.name = tag(&c.name);
                report.checks.push(c);
            }
            report.decay.push(decay);
            if mu > 0.0 && mu < bc.tau[0] && th < tp {
                let base = ProbeParams::new(bc.tau[0], mu, th, tp, EtaMode::MuSign)?;
                match check_spacetime_bounds(scenario, needle, &base, d0 + bc.offset, &bc.tau) {
                    Ok((up, lo)) => {
                        for mut c in [up, lo] {
                            c.name = tag(&c.name);
                            report.checks.push(c);
                        }
                    }
                    Err(Error::Clearance { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(BoundsFile {
        plan_hash: loaded.hash.clone(),
        passed: report.passed(),
        report,
    })
}

/// Renders the plots of a run into `dir`.
pub fn write_plots(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut save = |name: &str, chart: Chart| -> Result<()> {
        let path = dir.join(name);
        let mut text = chart.to_svg();
        text.insert_str(
            text.find('>').map(|i| i + 1).unwrap_or(0),
            &format!("\n<!-- plan_hash {} -->", report.plan_hash),
        );
        fs::write(&path, text)?;
        files.push(path);
        Ok(())
    };

    let mut keys: Vec<(usize, u64, u64, u64)> = report
        .samples
        .iter()
        .map(|c| (c.needle, c.sample.params.t_prime.to_bits(), c.sample.params.theta.to_bits(), c.sample.params.mu.to_bits()))
        .collect();
    keys.sort();
    keys.dedup();
    let mut chart = Chart::new("Indicator decay", "τ", "ln|I|");
    for &(i, tp, th, mu) in &keys {
        let pts: Vec<(f64, f64)> = report
            .samples
            .iter()
            .filter(|c| {
                (c.needle, c.sample.params.t_prime.to_bits(), c.sample.params.theta.to_bits(), c.sample.params.mu.to_bits())
                    == (i, tp, th, mu)
            })
            .map(|c| (c.sample.params.tau, c.sample.i_boundary.ln_abs))
            .collect();
        chart = chart.with(Series::new(
            format!("n{i} θ={} μ={} T′={}", f64::from_bits(th), f64::from_bits(mu), f64::from_bits(tp)),
            pts,
            Style::LineMarkers,
        ));
    }
    save("ln_i_vs_tau.svg", chart)?;

    let mut chart = Chart::new("Distance estimates", "θ", "distance");
    for info in &report.needles {
        let mut est: Vec<(f64, f64)> = report
            .distances
            .iter()
            .filter(|d| d.needle == info.index)
            .map(|d| (d.estimate.theta, d.estimate.d_hat))
            .collect();
        est.sort_by(|a, b| a.0.total_cmp(&b.0));
        if !est.is_empty() {
            chart = chart
                .with(Series::new(format!("n{} d̂(θ)", info.index), est, Style::Markers))
                .with(Series::new(format!("n{} d(y(θ), D(θ))", info.index), info.truth_curve.clone(), Style::Dashed));
        }
    }
    save("distance_vs_theta.svg", chart)?;

    let mut f_chart = Chart::new("F̂ along the search", "T′", "F̂(T′)");
    let mut stairs = Chart::new("Search iterates", "n", "t_n");
    for s in &report.searches {
        let f: Vec<(f64, f64)> = s.f_profile.iter().map(|e| (e.t_prime, e.value)).collect();
        f_chart = f_chart.with(Series::new(format!("n{}", s.index), f, Style::LineMarkers));
        let t: Vec<(f64, f64)> = s.search.t_sequence.iter().enumerate().map(|(k, &t)| (k as f64, t)).collect();
        let len = t.len().max(1) as f64;
        stairs = stairs.with(Series::new(format!("n{} t_n", s.index), t, Style::Step));
        if let Some(ts) = report.needles.get(s.index).and_then(|n| n.t_star_true) {
            stairs = stairs.with(Series::new(format!("n{} T*", s.index), vec![(0.0, ts), (len - 1.0, ts)], Style::Dashed));
        }
    }
    save("f_profile.svg", f_chart)?;
    save("t_staircase.svg", stairs)?;
    Ok(files)
}

/// Reads `reconstruction.json` from a run directory.
pub fn read_report(dir: &Path) -> Result<RunReport> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join("reconstruction.json"))?)?)
}

/// Re-renders the plots of an existing run.
pub fn plot(dir: &Path) -> Result<Vec<PathBuf>> {
    write_plots(&read_report(dir)?, &dir.join("plots"))
}

/// Plain-text summary of an existing run.
pub fn report(dir: &Path, out: &mut impl Write) -> Result<()> {
    let r = read_report(dir)?;
    writeln!(out, "plan {} ({})", r.plan.name, r.plan_hash)?;
    writeln!(
        out,
        "grid n={} steps={}, {} samples, {} skipped",
        r.plan.grid.n,
        r.plan.grid.steps,
        r.samples.len(),
        r.skipped.len()
    )?;
    for d in &r.distances {
        writeln!(
            out,
            "needle {} θ={} μ={} T′={}: d̂ = {:.4} (true {:.4}, residual {:.2e}{})",
            d.needle,
            d.estimate.theta,
            d.mu,
            d.t_prime,
            d.estimate.d_hat,
            d.truth,
            d.estimate.fit_residual,
            if d.estimate.clamped { ", clamped" } else { "" }
        )?;
    }
    for s in &r.searches {
        let truth = r.needles.get(s.index).and_then(|n| n.t_star_true);
        let truth = match truth {
            Some(t) => format!("{t:.4}"),
            None => "T+0".into(),
        };
        let hat = match s.search.t_star_hat {
            TStar::At(t) => format!("{t:.4}"),
            TStar::BeyondHorizon => "T+0".into(),
        };
        writeln!(
            out,
            "needle {}: T̂* = {hat} (true {truth}), {} iterates, {:?}",
            s.index,
            s.search.t_sequence.len(),
            s.search.termination
        )?;
    }
    if let Ok(text) = fs::read_to_string(dir.join("bounds.json")) {
        let b: BoundsFile = serde_json::from_str(&text)?;
        let failed: Vec<&str> = b
            .report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .chain(b.report.decay.iter().filter(|c| !c.passed).map(|c| c.name.as_str()))
            .collect();
        writeln!(
            out,
            "bound checks: {} of {} passed{}",
            b.report.checks.len() + b.report.decay.len() - failed.len(),
            b.report.checks.len() + b.report.decay.len(),
            if failed.is_empty() { String::new() } else { format!(" (failed: {})", failed.join(", ")) }
        )?;
    }
    for s in &r.skipped {
        writeln!(out, "skipped needle {} {}: {}", s.needle, s.what, s.reason)?;
    }
    Ok(())
}
