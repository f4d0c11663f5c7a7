//! Scenario execution: condensate setup, evolution with snapshots, rays,
//! kinetics and the dispersion probe.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use trapwave::dispersion::{bogoliubov_frequency, fit_frequency, MediumSample, Vec3};
use trapwave::fields::{
    default_time_step, evolve_gp, evolve_linearized, ground_state, madelung_decompose, thomas_fermi_profile,
    CondensateProfile, FieldState, GroundStateTarget, PerturbationState,
};
use trapwave::gabor::{slow_transform, spectrum, waveaction_field, GaborKernel, PhaseSpaceGrid, PhaseSpaceSpectrum};
use trapwave::grid::{Grid, Spectral};
use trapwave::hamiltonian::{hamiltonian_gabor, hamiltonian_gp, verify_canonical};
use trapwave::io::{read_field, snapshot_name, write_field, write_spectrum, FieldHeader};
use trapwave::kinetics::{
    collision_3wave, collision_4wave, conservation_residuals, evolve_master, CollisionConfig, IsotropicSpectrum,
    MasterEnsemble, MasterOptions, RJParams,
};
use trapwave::medium::{AnalyticMedium, GridMedium, Medium};
use trapwave::rays::{integrate_ray, residence_density, RayState, RayTrajectory, ResidenceCoordinate};
use trapwave::Cx;

use crate::config::{
    CondensateSpec, KineticsSpec, PerturbationSpec, PotentialSpec, ProbeSpec, ProcessSpec, RaySpec, Scenario,
    SpectrumPreset,
};
use crate::error::{CliError, CliResult};
use crate::output::{RunDir, SCENARIO};

pub const LOG: &str = "log.json";
pub const RAYS: &str = "rays.json";
pub const TRAJECTORIES: &str = "trajectories.csv";
pub const EVENTS: &str = "events.csv";
pub const RESIDENCE: &str = "residence.csv";
pub const RATES: &str = "rates.csv";
pub const CONSERVATION: &str = "conservation.json";
pub const MASTER: &str = "master.csv";
pub const MASTER_TOTALS: &str = "master_totals.csv";
pub const DISPERSION: &str = "dispersion.csv";

/// Which parts of a scenario to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sections {
    pub evolve: bool,
    pub probe: bool,
    pub rays: bool,
    pub kinetics: bool,
}

impl Sections {
    pub const ALL: Self = Self { evolve: true, probe: true, rays: true, kinetics: true };
    pub const RAYS: Self = Self { evolve: false, probe: false, rays: true, kinetics: false };
    pub const KINETICS: Self = Self { evolve: false, probe: false, rays: false, kinetics: true };
}

/// Grid, trap and optional condensate of a scenario.
pub struct Setup {
    pub grid: Grid<f64>,
    pub potential: Vec<f64>,
    pub profile: Option<Arc<CondensateProfile<f64>>>,
}

pub fn build_potential(s: &Scenario, grid: &Grid<f64>) -> CliResult<Vec<f64>> {
    Ok(match &s.potential {
        PotentialSpec::None => vec![0.0; grid.len()],
        PotentialSpec::Harmonic { coeff } => grid.sample(|x| x.iter().zip(coeff).map(|(x, c)| c * x * x).sum()),
        PotentialSpec::Tabulated { path } => {
            let snap = read_field(path)?;
            if snap.header.complex || snap.header.grid != *grid {
                return Err(CliError::Validation(vec![format!(
                    "potential.path {} must hold a real field on the scenario grid",
                    path.display()
                )]));
            }
            snap.values
        }
    })
}

pub fn setup(s: &Scenario) -> CliResult<Setup> {
    let grid = s.grid()?;
    let potential = build_potential(s, &grid)?;
    let profile = match &s.condensate {
        CondensateSpec::None => None,
        CondensateSpec::GroundState { particles, chemical_potential, tol } => {
            let target = match (particles, chemical_potential) {
                (Some(n), _) => GroundStateTarget::ParticleNumber(*n),
                (None, Some(mu)) => GroundStateTarget::ChemicalPotential(*mu),
                (None, None) => return Err(CliError::Validation(vec!["ground state target missing".into()])),
            };
            info!("relaxing ground state");
            Some(ground_state(grid, &potential, target, *tol)?)
        }
        CondensateSpec::ThomasFermi { omega } => Some(thomas_fermi_profile(grid, &potential, *omega)?),
        CondensateSpec::Uniform { density } => {
            let psi0 = vec![Cx::new(density.sqrt(), 0.0); grid.len()];
            Some(madelung_decompose(grid, &psi0, &potential))
        }
    };
    Ok(Setup { grid, potential, profile: profile.map(Arc::new) })
}

fn pad3(v: &[f64]) -> Vec3<f64> {
    let mut out = [0.0; 3];
    out[..v.len()].copy_from_slice(v);
    out
}

/// Analytic medium for harmonic traps, interpolated grid fields otherwise.
pub fn build_medium(s: &Scenario, setup: &Setup) -> CliResult<Box<dyn Medium<f64>>> {
    let half = s.grid.extent / 2.0;
    let analytic_omega = match (&s.potential, &s.condensate) {
        (PotentialSpec::Harmonic { .. }, CondensateSpec::None) => Some(None),
        (PotentialSpec::Harmonic { .. }, CondensateSpec::ThomasFermi { omega }) => Some(Some(*omega)),
        _ => None,
    };
    if let (PotentialSpec::Harmonic { coeff }, Some(omega)) = (&s.potential, analytic_omega) {
        let c = pad3(coeff);
        let m = AnalyticMedium::new(s.grid.dim, move |x: &Vec3<f64>| {
            let u = c[0] * x[0] * x[0] + c[1] * x[1] * x[1] + c[2] * x[2] * x[2];
            let gu = [2.0 * c[0] * x[0], 2.0 * c[1] * x[1], 2.0 * c[2] * x[2]];
            let mut out = MediumSample { potential: u, grad_potential: gu, ..Default::default() };
            if let Some(w) = omega.filter(|&w| u < w) {
                out.rho = w - u;
                out.grad_rho = [-gu[0], -gu[1], -gu[2]];
            }
            out
        });
        return Ok(Box::new(m.bounded(half)));
    }
    Ok(match &setup.profile {
        Some(p) => Box::new(GridMedium::from_profile(p)),
        None => Box::new(GridMedium::from_potential(setup.grid, setup.potential.clone())?),
    })
}

/// Initial perturbation field, or `None` when the scenario has none.
pub fn initial_perturbation(s: &Scenario, grid: &Grid<f64>) -> Option<Vec<Cx<f64>>> {
    match &s.perturbation {
        PerturbationSpec::None => None,
        PerturbationSpec::Packet { center, wavevector, width, amplitude } => Some(grid.sample_complex(|x| {
            let (mut r2, mut phase) = (0.0, 0.0);
            for a in 0..x.len() {
                r2 += (x[a] - center[a]).powi(2);
                phase += wavevector[a] * x[a];
            }
            Cx::from_polar(amplitude * (-r2 / (2.0 * width * width)).exp(), phase)
        })),
        PerturbationSpec::Modes { wavenumbers, amplitude } => {
            Some(grid.sample_complex(|x| Cx::new(wavenumbers.iter().map(|k| amplitude * (k * x[0]).cos()).sum(), 0.0)))
        }
        PerturbationSpec::Random { k_max, amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            let mut c: Vec<Cx<f64>> = (0..grid.len())
                .map(|f| {
                    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                    let k2: f64 = grid.wavevector(f).iter().map(|k| k * k).sum();
                    if k2 > 0.0 && k2 <= k_max * k_max {
                        Cx::from_polar(1.0, phase)
                    } else {
                        Cx::new(0.0, 0.0)
                    }
                })
                .collect();
            Spectral::new(*grid).inverse(&mut c);
            let peak = c.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if peak > 0.0 {
                c.iter_mut().for_each(|z| *z = *z * (amplitude / peak));
            }
            Some(c)
        }
    }
}

/// One row of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub time: f64,
    pub particles: f64,
    pub kinetic: f64,
    pub interaction: f64,
    pub potential: f64,
    pub total: f64,
    pub max_perturbation: Option<f64>,
    pub gabor_quadratic: Option<f64>,
    pub canonical_residual: Option<f64>,
}

enum Evolving {
    Field(FieldState<f64>),
    Linear(PerturbationState<f64>),
}

impl Evolving {
    fn quantity(&self) -> &'static str {
        match self {
            Evolving::Field(_) => "psi",
            Evolving::Linear(_) => "delta_psi",
        }
    }

    fn time(&self) -> f64 {
        match self {
            Evolving::Field(f) => f.time,
            Evolving::Linear(p) => p.time,
        }
    }

    fn values(&self) -> &[Cx<f64>] {
        match self {
            Evolving::Field(f) => &f.psi,
            Evolving::Linear(p) => &p.delta_psi,
        }
    }

    fn full_field(&self) -> FieldState<f64> {
        match self {
            Evolving::Field(f) => f.clone(),
            Evolving::Linear(p) => {
                let bg = &p.background;
                let psi = bg.psi0.iter().zip(&p.delta_psi).map(|(a, b)| a + b).collect();
                FieldState { grid: bg.grid, psi, potential: bg.potential.clone(), time: p.time }
            }
        }
    }

    fn advance(&self, dt: f64, steps: usize, nonlinear: bool) -> CliResult<Self> {
        Ok(match self {
            Evolving::Field(f) => Evolving::Field(evolve_gp(f, dt, steps, nonlinear)?),
            Evolving::Linear(p) => {
                let (next, warnings) = evolve_linearized(p, dt, steps, nonlinear)?;
                if let Some(w) = warnings.first() {
                    warn!("perturbation amplitude {:.3} at t = {:.4} leaves the linear regime", w.max_amplitude, w.time);
                }
                Evolving::Linear(next)
            }
        })
    }
}

struct GaborSetup {
    kernel: GaborKernel<f64>,
    psg: PhaseSpaceGrid<f64>,
    canonical: bool,
}

fn gabor_setup(s: &Scenario, grid: &Grid<f64>) -> CliResult<Option<GaborSetup>> {
    let Some(spec) = &s.gabor else { return Ok(None) };
    let kernel = s.kernel().expect("gabor section present")?;
    let psg = PhaseSpaceGrid::for_field(*grid, spec.stride)?;
    kernel.validate_for(&psg)?;
    Ok(Some(GaborSetup { kernel, psg, canonical: spec.canonical_check }))
}

fn write_snapshot(dir: &RunDir, state: &Evolving, grid: &Grid<f64>, step: usize) -> CliResult<()> {
    let q = state.quantity();
    let mut header = FieldHeader::new(q, grid, state.time(), step, true);
    header.meta = json!({ "units": crate::output::UNITS, "config_hash": dir.config_hash() });
    write_field(&dir.path(&snapshot_name(q, step)), &header, state.values())?;
    Ok(())
}

fn find_resume_point(dir: &RunDir, quantity: &str, steps: usize, every: usize) -> Option<usize> {
    (0..=steps / every).rev().map(|i| i * every).find(|&st| dir.path(&snapshot_name(quantity, st)).exists())
}

fn evolve(s: &Scenario, setup: &Setup, medium: &dyn Medium<f64>, dir: &RunDir, resume: bool) -> CliResult<()> {
    let run = s.run.as_ref().expect("run section present");
    let grid = setup.grid;
    let max_rho = setup.profile.as_ref().map_or(0.0, |p| p.max_density());
    let dt = run.dt.unwrap_or_else(|| default_time_step(&grid, &setup.potential, max_rho));
    let pert = initial_perturbation(s, &grid);
    let mut state = match (&setup.profile, pert) {
        (Some(p), Some(d)) => Evolving::Linear(PerturbationState::from_delta(p.clone(), d)?),
        (Some(p), None) => Evolving::Field(p.field_state()),
        (None, Some(d)) => Evolving::Field(FieldState::new(grid, d, setup.potential.clone())?),
        (None, None) => return Err(CliError::Validation(vec!["nothing to evolve".into()])),
    };
    let gabor = gabor_setup(s, &grid)?;

    let mut log: Vec<LogEntry> = Vec::new();
    let mut start = 0;
    if resume {
        if let Some(st) = find_resume_point(dir, state.quantity(), run.steps, run.snapshot_every) {
            let snap = read_field(&dir.path(&snapshot_name(state.quantity(), st)))?;
            let values = snap.complex();
            state = match state {
                Evolving::Field(mut f) => {
                    f.psi = values;
                    f.time = snap.header.time;
                    Evolving::Field(f)
                }
                Evolving::Linear(mut p) => {
                    p.delta_psi = values;
                    p.time = snap.header.time;
                    Evolving::Linear(p)
                }
            };
            if let Ok(text) = std::fs::read_to_string(dir.path(LOG)) {
                log = serde_json::from_str::<Vec<LogEntry>>(&text)?.into_iter().filter(|e| e.step <= st).collect();
            }
            if log.last().map(|e| e.step) == Some(st) {
                start = st;
                info!("resuming from step {st}");
            } else {
                log.clear();
            }
        }
    }
    if start == 0 {
        log.clear();
        record(s, &state, &gabor, medium, dir, &grid, 0, run.steps, &mut log)?;
    }

    let mut step = start;
    while step < run.steps {
        let chunk = run.snapshot_every.min(run.steps - step);
        state = state.advance(dt, chunk, run.nonlinear)?;
        step += chunk;
        record(s, &state, &gabor, medium, dir, &grid, step, run.steps, &mut log)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn record(
    s: &Scenario,
    state: &Evolving,
    gabor: &Option<GaborSetup>,
    medium: &dyn Medium<f64>,
    dir: &RunDir,
    grid: &Grid<f64>,
    step: usize,
    last: usize,
    log: &mut Vec<LogEntry>,
) -> CliResult<()> {
    write_snapshot(dir, state, grid, step)?;
    let full = state.full_field();
    let h = hamiltonian_gp(&full);
    let mut entry = LogEntry {
        step,
        time: state.time(),
        particles: trapwave::fields::particle_number(&full),
        kinetic: h.kinetic,
        interaction: h.interaction,
        potential: h.potential,
        total: h.total,
        max_perturbation: None,
        gabor_quadratic: None,
        canonical_residual: None,
    };
    if let Evolving::Linear(p) = state {
        entry.max_perturbation = Some(p.max_amplitude());
    }
    if let Some(g) = gabor {
        let spec = match state {
            Evolving::Field(f) => {
                let a = slow_transform(&f.psi, &g.kernel, &g.psg)?;
                entry.gabor_quadratic = Some(hamiltonian_gabor(&a, medium, false)?);
                if g.canonical && step == last {
                    let nonlinear = s.run.as_ref().is_some_and(|r| r.nonlinear);
                    entry.canonical_residual = Some(verify_canonical(&a, medium, None, nonlinear)?);
                }
                spectrum(&[a])?
            }
            Evolving::Linear(p) => waveaction_field(p, &g.kernel, &g.psg)?,
        };
        write_spectrum(&dir.path(&spectrum_name(step)), &spec)?;
    }
    log.push(entry);
    dir.write_json(
        LOG,
        log,
        "run",
        json!({
            "step": "integer", "time": "time", "particles": "int |psi|^2 dx",
            "kinetic": "int |grad psi|^2 dx", "interaction": "(1/2) int |psi|^4 dx",
            "potential": "int U |psi|^2 dx", "total": "energy",
            "max_perturbation": "max |delta psi / psi0|",
            "gabor_quadratic": "quadratic phase-space Hamiltonian",
            "canonical_residual": "relative mismatch of dH/da* and i da/dt",
        }),
        "Diagnostics at each snapshot.",
    )
}

/// `n_<step>.spec`
pub fn spectrum_name(step: usize) -> String {
    format!("n_{step:06}.spec")
}

/// Summary of one ray written to the rays JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaySummary {
    pub ray: usize,
    pub status: trapwave::rays::RayStatus,
    pub omega_init: f64,
    pub max_drift: f64,
    pub samples: usize,
    pub reflections: usize,
}

/// One trajectory sample in CSV form.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub ray: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub kx: f64,
    pub ky: f64,
    pub kz: f64,
    pub omega_init: f64,
}

impl TrajectoryRow {
    pub fn state(&self) -> RayState<f64> {
        RayState { position: [self.x, self.y, self.z], wavevector: [self.kx, self.ky, self.kz], time: self.t, omega_init: self.omega_init }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResidenceRow {
    pub x_lo: f64,
    pub x_hi: f64,
    pub fraction: f64,
    pub density: f64,
}

pub const TRAJECTORY_COLUMNS: &str = "ray index, time t, position x y z, wavevector kx ky kz, launch frequency";

/// Residence histogram along the first axis with `bins` equal bins over the box.
pub fn residence_rows(trajs: &[RayTrajectory<f64>], extent: f64, bins: usize) -> CliResult<Vec<ResidenceRow>> {
    let edges: Vec<f64> = (0..=bins).map(|i| -extent / 2.0 + extent * i as f64 / bins as f64).collect();
    let h = residence_density(trajs, &edges, ResidenceCoordinate::Axis(0))?;
    Ok(h.density()
        .iter()
        .zip(&h.fraction)
        .zip(edges.windows(2))
        .map(|((&d, &f), e)| ResidenceRow { x_lo: e[0], x_hi: e[1], fraction: f, density: d })
        .collect())
}

fn run_rays(s: &Scenario, spec: &RaySpec, medium: &dyn Medium<f64>, dir: &RunDir) -> CliResult<()> {
    let mut trajs = Vec::new();
    for l in &spec.launch {
        let init = RayState::launch(pad3(&l.position), pad3(&l.wavevector), medium, s.dispersion);
        trajs.push(integrate_ray(init, medium, s.dispersion, spec.t_end, spec.dt)?);
    }
    info!("integrated {} rays", trajs.len());
    let summaries: Vec<RaySummary> = trajs
        .iter()
        .enumerate()
        .map(|(i, t)| RaySummary {
            ray: i,
            status: t.status,
            omega_init: t.samples[0].omega_init,
            max_drift: t.max_drift,
            samples: t.samples.len(),
            reflections: t.events.len(),
        })
        .collect();
    dir.write_json(RAYS, &json!({ "model": s.dispersion, "rays": summaries }), "rays", json!({ "omega_init": "frequency", "max_drift": "relative" }), "Per-ray integration summary.")?;

    let rows: Vec<TrajectoryRow> = trajs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            t.samples.iter().map(move |p| TrajectoryRow {
                ray: i,
                t: p.time,
                x: p.position[0],
                y: p.position[1],
                z: p.position[2],
                kx: p.wavevector[0],
                ky: p.wavevector[1],
                kz: p.wavevector[2],
                omega_init: p.omega_init,
            })
        })
        .collect();
    dir.write_csv(TRAJECTORIES, &rows, "rays", json!(TRAJECTORY_COLUMNS), "Ray samples at the nominal step.")?;

    #[derive(Serialize)]
    struct EventRow {
        ray: usize,
        t: f64,
        x: f64,
        y: f64,
        z: f64,
        potential: f64,
    }
    let events: Vec<EventRow> = trajs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            t.events.iter().map(move |e| EventRow { ray: i, t: e.time, x: e.position[0], y: e.position[1], z: e.position[2], potential: e.potential })
        })
        .collect();
    dir.write_csv(EVENTS, &events, "rays", json!("ray index, time, turning point x y z, trap potential there"), "Turning points where |k| reaches zero.")?;

    if let Some(bins) = spec.residence_bins {
        let rows = residence_rows(&trajs, s.grid.extent, bins)?;
        dir.write_csv(RESIDENCE, &rows, "rays", json!("bin edges x_lo x_hi, time fraction, fraction per unit length"), "Time-weighted residence along the first axis.")?;
    }
    Ok(())
}

/// Frequency law used by the kinetic section.
pub fn kinetic_omega(k: &KineticsSpec) -> impl Fn(f64) -> f64 + Sync + Copy {
    let rho = match k.process {
        ProcessSpec::FourWave => 0.0,
        ProcessSpec::ThreeWave { rho, .. } => rho,
    };
    move |q: f64| if rho > 0.0 { bogoliubov_frequency(q * q, rho) } else { q * q }
}

/// Occupation on the kinetic shells.
pub fn kinetic_spectrum(s: &Scenario, k: &KineticsSpec) -> CliResult<IsotropicSpectrum<f64>> {
    let shells = IsotropicSpectrum::linear_shells(k.k_lo, k.k_hi, k.shells);
    let pos = [0.0; 3];
    let omega = kinetic_omega(k);
    Ok(match &k.preset {
        SpectrumPreset::Flat { level } => IsotropicSpectrum::from_fn(shells, pos, k.dim, |_| *level)?,
        SpectrumPreset::RayleighJeans { temperature, chem_potential } => {
            RJParams::new(*temperature, *chem_potential)?.spectrum(shells, pos, k.dim, omega)?
        }
        SpectrumPreset::Gaussian { center, width, amplitude } => {
            IsotropicSpectrum::from_fn(shells, pos, k.dim, |q| amplitude * (-((q - center) / width).powi(2)).exp())?
        }
        SpectrumPreset::Random { lo, hi } => {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            let n = (0..shells.len()).map(|_| rng.gen_range(*lo..*hi)).collect();
            IsotropicSpectrum::new(shells, n, pos, k.dim)?
        }
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateRow {
    pub k: f64,
    pub n: f64,
    pub rate: f64,
    pub stderr: f64,
    pub energy_rate: f64,
    pub energy_stderr: f64,
}

fn run_kinetics(s: &Scenario, k: &KineticsSpec, dir: &RunDir) -> CliResult<()> {
    let spec = kinetic_spectrum(s, k)?;
    let omega = kinetic_omega(k);
    let cfg = match k.process {
        ProcessSpec::FourWave => CollisionConfig::four_wave(k.delta_width, k.mc_samples),
        ProcessSpec::ThreeWave { vertex_constant, .. } => CollisionConfig::three_wave(k.delta_width, k.mc_samples, vertex_constant),
    }
    .with_seed(s.seed);
    let cfg = match k.coupling {
        Some(c) => cfg.with_coupling(c),
        None => cfg,
    };
    let rates = match k.process {
        ProcessSpec::FourWave => collision_4wave(&spec, omega, &cfg)?,
        ProcessSpec::ThreeWave { .. } => collision_3wave(&spec, omega, &cfg)?,
    };
    if !rates.insufficient.is_empty() {
        warn!("{} shells have Monte-Carlo errors above 20% of the rate", rates.insufficient.len());
    }
    let rows: Vec<RateRow> = (0..spec.len())
        .map(|i| RateRow {
            k: rates.k_shells[i],
            n: spec.n_values[i],
            rate: rates.rate[i],
            stderr: rates.stderr[i],
            energy_rate: rates.energy_rate[i],
            energy_stderr: rates.energy_stderr[i],
        })
        .collect();
    dir.write_csv(RATES, &rows, "kinetics", json!("shell wavenumber k, occupation n, dn/dt and its standard error, omega dn/dt and its standard error"), "Collision-integral rates per shell.")?;
    let cons = conservation_residuals(&rates);
    dir.write_json(
        CONSERVATION,
        &json!({ "residuals": cons, "insufficient_shells": rates.insufficient }),
        "kinetics",
        json!({ "dn_dt": "particles per time", "de_dt": "energy per time" }),
        "Shell quadrature of total particle and energy rates.",
    )?;
    if let Some(m) = &k.master {
        run_master(s, &spec, m, dir)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MasterRow {
    pub time: f64,
    pub k: f64,
    pub n: f64,
}

fn run_master(s: &Scenario, spec: &IsotropicSpectrum<f64>, m: &crate::config::MasterSpec, dir: &RunDir) -> CliResult<()> {
    let grid = s.grid()?;
    let psg = PhaseSpaceGrid::for_field(grid, grid.points)?;
    let shells = spec.k_shells.clone();
    let n_values = spec.n_values.clone();
    let lookup = move |q: f64| {
        if q < shells[0] || q > *shells.last().expect("shells") {
            return 0.0;
        }
        let i = shells.partition_point(|&v| v < q).min(shells.len() - 1);
        let j = if i > 0 && (q - shells[i - 1]) < (shells[i] - q) { i - 1 } else { i };
        n_values[j]
    };
    let occupation = |kv: &Vec3<f64>| lookup((kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2]).sqrt());
    let mut ens = MasterEnsemble::random_phase(psg, GaborKernel::new(0.0)?, occupation, m.members, s.seed)?;
    let medium = AnalyticMedium::uniform(grid.dim, 0.0, 0.0);
    let edges = spec.edges();
    let kmod: Vec<f64> = (0..grid.len()).map(|f| grid.wavevector(f).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut rows = Vec::new();
    let mut totals = Vec::new();
    let mut bin = |ens: &MasterEnsemble<f64>| -> CliResult<()> {
        let occ = ens.homogeneous_occupation()?;
        let (mut sum, mut cnt) = (vec![0.0; spec.len()], vec![0usize; spec.len()]);
        for (q, v) in kmod.iter().zip(&occ) {
            if let Some(b) = edges.windows(2).position(|e| *q >= e[0] && *q < e[1]) {
                sum[b] += v;
                cnt[b] += 1;
            }
        }
        for b in 0..spec.len() {
            if cnt[b] > 0 {
                rows.push(MasterRow { time: ens.time, k: spec.k_shells[b], n: sum[b] / cnt[b] as f64 });
            }
        }
        totals.push(json!({ "time": ens.time, "total_intensity": ens.total_intensity() }));
        Ok(())
    };
    bin(&ens)?;
    let mut step = 0;
    while step < m.steps {
        let chunk = m.snapshot_every.min(m.steps - step);
        ens = evolve_master(&ens, &medium, m.dt, chunk, MasterOptions::default())?;
        step += chunk;
        bin(&ens)?;
    }
    info!("master ensemble reached t = {:.3}", ens.time);
    dir.write_csv(MASTER, &rows, "kinetics.master", json!("time, shell wavenumber k, shell-mean occupation n"), "Ensemble occupation from the master equation.")?;
    #[derive(Serialize)]
    struct TotalRow {
        time: f64,
        total_intensity: f64,
    }
    let totals: Vec<TotalRow> = totals
        .iter()
        .map(|v| TotalRow { time: v["time"].as_f64().unwrap_or(0.0), total_intensity: v["total_intensity"].as_f64().unwrap_or(0.0) })
        .collect();
    dir.write_csv(MASTER_TOTALS, &totals, "kinetics.master", json!("time, sum of |a|^2 over members and nodes"), "Ensemble intensity over time.")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProbeRow {
    pub mode: usize,
    pub k: f64,
    pub omega_measured: f64,
    pub omega_theory: f64,
    pub rel_error: f64,
}

/// Standing waves on the uniform condensate; frequencies fitted from the
/// projection of `Re(delta psi / psi0)` on each mode.
pub fn dispersion_probe(s: &Scenario, p: &ProbeSpec, setup: &Setup) -> CliResult<Vec<ProbeRow>> {
    let grid = setup.grid;
    let profile = setup.profile.clone().ok_or_else(|| CliError::Validation(vec!["dispersion probe needs a condensate".into()]))?;
    let rho = profile.max_density();
    let dt = s.run.as_ref().and_then(|r| r.dt).unwrap_or_else(|| default_time_step(&grid, &setup.potential, rho));
    let ks: Vec<f64> = p.modes.iter().map(|&m| m as f64 * grid.dk()).collect();
    let re = grid.sample(|x| ks.iter().map(|k| p.amplitude * (k * x[0]).cos()).sum());
    let mut pert = PerturbationState::from_parts(profile, &re, &vec![0.0; grid.len()])?;
    let xs: Vec<f64> = (0..grid.len()).map(|i| grid.coord(grid.unravel(i)[0])).collect();
    let project = |r: &[f64], k: f64| 2.0 / r.len() as f64 * r.iter().zip(&xs).map(|(v, x)| v * (k * x).cos()).sum::<f64>();
    let chunk = 5;
    let t_end = p.periods * 2.0 * PI / bogoliubov_frequency(ks[0] * ks[0], rho);
    let mut times = vec![0.0];
    let mut series: Vec<Vec<f64>> = ks.iter().map(|&k| vec![project(&re, k)]).collect();
    while pert.time < t_end {
        pert = evolve_linearized(&pert, dt, chunk, false)?.0;
        let r = pert.re_part();
        times.push(pert.time);
        for (sr, &k) in series.iter_mut().zip(&ks) {
            sr.push(project(&r, k));
        }
    }
    let w_max = PI / (dt * chunk as f64);
    Ok(p
        .modes
        .iter()
        .zip(&ks)
        .zip(&series)
        .map(|((&mode, &k), sr)| {
            let w = fit_frequency(&times, sr, w_max);
            let theory = bogoliubov_frequency(k * k, rho);
            ProbeRow { mode, k, omega_measured: w, omega_theory: theory, rel_error: (w - theory).abs() / theory }
        })
        .collect())
}

/// Seeds recorded in the manifest, keyed by consumer.
pub fn seeds(s: &Scenario) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::new();
    m.insert("scenario".to_string(), s.seed);
    if matches!(s.perturbation, PerturbationSpec::Random { .. }) {
        m.insert("perturbation".into(), s.seed);
    }
    if let Some(k) = &s.kinetics {
        m.insert("collision".into(), s.seed);
        if matches!(k.preset, SpectrumPreset::Random { .. }) {
            m.insert("spectrum".into(), s.seed);
        }
        if k.master.is_some() {
            m.insert("master".into(), s.seed);
        }
    }
    m
}

/// Executes the selected sections into `root` and writes the manifest.
pub fn execute(s: &Scenario, root: &Path, sections: Sections, resume: bool) -> CliResult<RunDir> {
    if resume && root.join(SCENARIO).exists() {
        let existing = Scenario::load(&root.join(SCENARIO))?;
        if existing.config_hash() != s.config_hash() {
            return Err(CliError::Validation(vec![format!("{} holds a different scenario", root.display())]));
        }
    }
    let dir = RunDir::create(root, s)?;
    let setup = setup(s)?;
    let medium = build_medium(s, &setup)?;
    if sections.evolve && s.run.is_some() {
        evolve(s, &setup, medium.as_ref(), &dir, resume)?;
    }
    if sections.probe {
        if let Some(p) = &s.dispersion_probe {
            let rows = dispersion_probe(s, p, &setup)?;
            dir.write_csv(DISPERSION, &rows, "dispersion_probe", json!("mode index, wavenumber k, fitted and predicted angular frequency, relative error"), "Measured Bogoliubov dispersion.")?;
        }
    }
    if sections.rays {
        if let Some(r) = &s.rays {
            run_rays(s, r, medium.as_ref(), &dir)?;
        }
    }
    if sections.kinetics {
        if let Some(k) = &s.kinetics {
            run_kinetics(s, k, &dir)?;
        }
    }
    dir.write_manifest(&s.name, seeds(s))?;
    Ok(dir)
}

/// Gabor spectrum of a stored field snapshot.
pub fn snapshot_spectrum(path: &Path, eps_star: f64, stride: usize) -> CliResult<PhaseSpaceSpectrum<f64>> {
    let snap = read_field(path)?;
    let g = snap.header.grid;
    let grid = Grid::new(g.dim, g.extent, g.points)?;
    let psg = PhaseSpaceGrid::for_field(grid, stride)?;
    let kernel = GaborKernel::new(eps_star)?;
    kernel.validate_for(&psg)?;
    let a = slow_transform(&snap.complex(), &kernel, &psg)?;
    let mut spec = spectrum(&[a])?;
    spec.time = snap.header.time;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::builtin;

    #[test]
    fn random_perturbation_is_seeded_and_scaled() {
        let s = builtin("hamiltonian-structure").unwrap();
        let g = s.grid().unwrap();
        let a = initial_perturbation(&s, &g).unwrap();
        assert_eq!(a, initial_perturbation(&s, &g).unwrap());
        let peak = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((peak - 0.3).abs() < 1e-12);
        let mut s2 = s.clone();
        s2.seed += 1;
        assert_ne!(a, initial_perturbation(&s2, &g).unwrap());
    }

    #[test]
    fn thomas_fermi_medium_is_analytic() {
        let s = builtin("condensate-crossing").unwrap();
        let m = build_medium(&s, &setup(&s).unwrap()).unwrap();
        let c = m.sample(&[0.0; 3]);
        assert_eq!((c.potential, c.rho), (0.0, 9.0));
        let out = m.sample(&[4.0, 0.0, 0.0]);
        assert_eq!((out.potential, out.rho), (16.0, 0.0));
        assert!(!m.contains(&[8.5, 0.0, 0.0]));
    }

    #[test]
    fn kinetic_presets() {
        let mut s = builtin("kinetic-stationarity").unwrap();
        let k = s.kinetics.clone().unwrap();
        let rj = kinetic_spectrum(&s, &k).unwrap();
        assert_eq!(rj.len(), 16);
        assert!((rj.n_values[0] - 1.0 / (0.25 + 1.0)).abs() < 1e-12);
        let mut k2 = k.clone();
        k2.preset = SpectrumPreset::Random { lo: 1.0, hi: 2.0 };
        let a = kinetic_spectrum(&s, &k2).unwrap();
        assert!(a.n_values.iter().all(|&v| (1.0..2.0).contains(&v)));
        s.seed = 9;
        assert_ne!(a.n_values, kinetic_spectrum(&s, &k2).unwrap().n_values);
    }

    #[test]
    fn residence_fractions_sum_to_one() {
        let s = builtin("weak-condensate").unwrap();
        let st = setup(&s).unwrap();
        let m = build_medium(&s, &st).unwrap();
        let init = RayState::launch([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], m.as_ref(), s.dispersion);
        let t = integrate_ray(init, m.as_ref(), s.dispersion, 5.0, 1e-3).unwrap();
        let rows = residence_rows(&[t], s.grid.extent, 32).unwrap();
        let total: f64 = rows.iter().map(|r| r.fraction).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}
