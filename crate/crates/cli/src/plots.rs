//! Plot-ready tables derived from a finished run directory.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use trapwave::dispersion::{frequency_iso, regime_classify, DispersionVariant, MediumSample, Regime};
use trapwave::io::read_spectrum;
use trapwave::rays::{RayStatus, RayTrajectory};

use crate::config::Scenario;
use crate::error::{CliError, CliResult};
use crate::output::{read_manifest, RunDir, MANIFEST, SCENARIO};
use crate::pipeline::{self, residence_rows, spectrum_name, LogEntry, TrajectoryRow};

pub const PLOTS: &str = "plots";
/// Wave level assumed by the regime map when the run has no spectrum.
pub const NOMINAL_LEVEL: f64 = 1e-2;
/// Samples kept per ray in the plotted trajectories.
pub const MAX_RAY_POINTS: usize = 2000;
pub const DEFAULT_RESIDENCE_BINS: usize = 40;
const CURVE_POINTS: usize = 200;
const REGIME_K_POINTS: usize = 64;

/// Files `emit-plots` needs in a run directory.
pub fn required_files(s: Option<&Scenario>) -> Vec<String> {
    let mut out = vec![MANIFEST.to_string(), SCENARIO.to_string()];
    let Some(s) = s else { return out };
    if s.run.is_some() {
        out.push(pipeline::LOG.into());
        if s.gabor.is_some() {
            out.push(spectrum_name(0));
        }
    }
    if s.rays.is_some() {
        out.push(pipeline::RAYS.into());
        out.push(pipeline::TRAJECTORIES.into());
    }
    if s.kinetics.is_some() {
        out.push(pipeline::RATES.into());
    }
    if s.dispersion_probe.is_some() {
        out.push(pipeline::DISPERSION.into());
    }
    out
}

fn check_present(dir: &Path, files: &[String]) -> CliResult<()> {
    let missing: Vec<String> = files.iter().filter(|f| !dir.join(f).is_file()).cloned().collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::MissingFiles { dir: dir.display().to_string(), files: missing })
    }
}

#[derive(Serialize)]
struct CurveRow {
    k: f64,
    ehrenfest: f64,
    bogoliubov: f64,
    unified: f64,
}

#[derive(Serialize)]
struct RegimeRow {
    x: f64,
    k: f64,
    rho: f64,
    regime: &'static str,
}

#[derive(Serialize)]
struct SliceRow {
    time: f64,
    k: f64,
    n: f64,
}

#[derive(Serialize)]
struct ConservationRow {
    step: usize,
    time: f64,
    quantity: &'static str,
    value: f64,
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::ThreeWave => "three_wave",
        Regime::FourWave => "four_wave",
    }
}

/// Writes the plot tables into `<dir>/plots` and refreshes the manifest.
pub fn emit_plots(dir: &Path) -> CliResult<Vec<String>> {
    if !dir.is_dir() {
        return Err(CliError::MissingFiles { dir: dir.display().to_string(), files: required_files(None) });
    }
    check_present(dir, &required_files(None))?;
    let s = Scenario::load(&dir.join(SCENARIO))?;
    check_present(dir, &required_files(Some(&s)))?;
    let manifest = read_manifest(dir)?;
    let run = RunDir::open(dir, manifest.config_hash.clone());
    fs::create_dir_all(dir.join(PLOTS))?;
    let mut written = Vec::new();
    let mut put = |name: &str| {
        let rel = format!("{PLOTS}/{name}");
        written.push(rel.clone());
        rel
    };

    let setup = pipeline::setup(&s)?;
    let grid = setup.grid;
    let rho_at: Vec<f64> = match &setup.profile {
        Some(p) => p.rho.clone(),
        None => vec![0.0; grid.len()],
    };
    let center = grid.ravel(&[grid.points / 2; 3][..grid.dim]);
    let u0 = setup.potential[center];
    let rho0 = rho_at[center];

    let k_max = grid.nyquist().min(s.k_char().map_or(f64::INFINITY, |k| 3.0 * k));
    let curves: Vec<CurveRow> = (0..=CURVE_POINTS)
        .map(|i| {
            let k = k_max * i as f64 / CURVE_POINTS as f64;
            let m = MediumSample::uniform(u0, rho0);
            CurveRow {
                k,
                ehrenfest: frequency_iso(k, &m, DispersionVariant::Ehrenfest),
                bogoliubov: frequency_iso(k, &m, DispersionVariant::Bogoliubov),
                unified: frequency_iso(k, &m, DispersionVariant::Unified),
            }
        })
        .collect();
    run.write_csv(&put("dispersion_curves.csv"), &curves, "emit-plots", json!("wavenumber k, frequency of each law"), "Dispersion laws at the trap center.")?;

    let mut level = NOMINAL_LEVEL;
    let mut slices = Vec::new();
    if s.run.is_some() && s.gabor.is_some() {
        let log: Vec<LogEntry> = serde_json::from_str(&fs::read_to_string(dir.join(pipeline::LOG))?)?;
        for e in &log {
            let path = dir.join(spectrum_name(e.step));
            if !path.is_file() {
                continue;
            }
            let spec = read_spectrum(&path)?;
            let psg = spec.psg;
            let xi = (0..psg.x_len())
                .min_by(|&a, &b| {
                    let r = |i: usize| psg.x_node(i).iter().map(|v| v * v).sum::<f64>();
                    r(a).partial_cmp(&r(b)).unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(0);
            let row = spec.at_x(xi);
            for ki in 0..psg.k_len() {
                let k = psg.k_node(ki);
                if k[1..].iter().any(|v| v.abs() > 0.5 * psg.k.step) {
                    continue;
                }
                slices.push(SliceRow { time: spec.time, k: k[0], n: row[ki] });
            }
            level = row.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        }
        run.write_csv(&put("spectra_slices.csv"), &slices, "emit-plots", json!("time, wavenumber k along the first axis, waveaction n"), "Spectrum at the x node nearest the center.")?;
    }

    let (k_lo, k_hi) = match &s.kinetics {
        Some(k) => (k.k_lo, k.k_hi),
        None => (grid.dk(), k_max.max(2.0 * grid.dk())),
    };
    let dim = s.kinetics.as_ref().map_or(grid.dim, |k| k.dim);
    let mut regime = Vec::new();
    let step = (grid.points / 128).max(1);
    for i in (0..grid.points).step_by(step) {
        let mut idx = [grid.points / 2; 3];
        idx[0] = i;
        let f = grid.ravel(&idx[..grid.dim]);
        for j in 0..REGIME_K_POINTS {
            let k = k_lo + (k_hi - k_lo) * j as f64 / (REGIME_K_POINTS - 1) as f64;
            let r = regime_classify(k, rho_at[f], level, dim);
            regime.push(RegimeRow { x: grid.coord(i), k, rho: rho_at[f], regime: regime_name(r) });
        }
    }
    run.write_csv(&put("regime_map.csv"), &regime, "emit-plots", json!({ "x": "position along the first axis", "k": "wavenumber", "rho": "condensate density", "regime": "three_wave or four_wave", "wave_level": level }), "Dominant collision process across the trap.")?;

    if s.run.is_some() {
        let log: Vec<LogEntry> = serde_json::from_str(&fs::read_to_string(dir.join(pipeline::LOG))?)?;
        let mut rows = Vec::new();
        for e in &log {
            let mut push = |quantity, value: Option<f64>| {
                if let Some(value) = value {
                    rows.push(ConservationRow { step: e.step, time: e.time, quantity, value });
                }
            };
            push("particles", Some(e.particles));
            push("energy", Some(e.total));
            push("gabor_quadratic", e.gabor_quadratic);
            push("canonical_residual", e.canonical_residual);
        }
        run.write_csv(&put("conservation.csv"), &rows, "emit-plots", json!("step, time, quantity name, value"), "Conserved quantities over the run.")?;
    }

    if s.rays.is_some() {
        let mut reader = csv::Reader::from_path(dir.join(pipeline::TRAJECTORIES))?;
        let rows: Vec<TrajectoryRow> = reader.deserialize().collect::<Result<_, _>>()?;
        let count = rows.iter().map(|r| r.ray + 1).max().unwrap_or(0);
        let mut trajs = Vec::new();
        let mut plotted = Vec::new();
        for ray in 0..count {
            let own: Vec<&TrajectoryRow> = rows.iter().filter(|r| r.ray == ray).collect();
            let every = own.len().div_ceil(MAX_RAY_POINTS).max(1);
            plotted.extend(own.iter().enumerate().filter(|(i, _)| i % every == 0 || *i + 1 == own.len()).map(|(_, r)| **r));
            trajs.push(RayTrajectory { samples: own.iter().map(|r| r.state()).collect(), events: Vec::new(), status: RayStatus::Completed, max_drift: 0.0 });
        }
        run.write_csv(&put("trajectories.csv"), &plotted, "emit-plots", json!(pipeline::TRAJECTORY_COLUMNS), "Decimated ray trajectories.")?;
        let bins = s.rays.as_ref().and_then(|r| r.residence_bins).unwrap_or(DEFAULT_RESIDENCE_BINS);
        let res = residence_rows(&trajs, s.grid.extent, bins)?;
        run.write_csv(&put("residence.csv"), &res, "emit-plots", json!("bin edges x_lo x_hi, time fraction, fraction per unit length"), "Time-weighted residence along the first axis.")?;
    }

    run.write_manifest(&manifest.scenario, manifest.seeds)?;
    Ok(written)
}
