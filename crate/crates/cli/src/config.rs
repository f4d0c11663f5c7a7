//! Scenario documents and their validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trapwave::dispersion::DispersionModel;
use trapwave::gabor::{GaborKernel, PhaseSpaceGrid};
use trapwave::grid::Grid;

use crate::error::{CliError, CliResult};

pub const SCHEMA: &str = "trapwave-scenario/1";

/// Scale separation above which a scenario is flagged.
pub const EPS_WARN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    #[serde(default)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub condensate: CondensateSpec,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    #[serde(default = "default_model")]
    pub dispersion: DispersionModel,
    #[serde(default)]
    pub run: Option<RunSpec>,
    #[serde(default)]
    pub gabor: Option<GaborSpec>,
    #[serde(default)]
    pub rays: Option<RaySpec>,
    #[serde(default)]
    pub kinetics: Option<KineticsSpec>,
    #[serde(default)]
    pub dispersion_probe: Option<ProbeSpec>,
}

fn default_model() -> DispersionModel {
    DispersionModel::UNIFIED
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub extent: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    #[default]
    None,
    /// `U = sum_i coeff_i x_i^2`.
    Harmonic { coeff: Vec<f64> },
    /// Real field snapshot on the scenario grid.
    Tabulated { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CondensateSpec {
    #[default]
    None,
    /// Imaginary-time relaxation at fixed particle number or chemical potential.
    GroundState {
        #[serde(default)]
        particles: Option<f64>,
        #[serde(default)]
        chemical_potential: Option<f64>,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    ThomasFermi { omega: f64 },
    /// Homogeneous density, requires no potential.
    Uniform { density: f64 },
}

fn default_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationSpec {
    #[default]
    None,
    /// Gaussian packet `A exp(-|x - c|^2 / (2 w^2) + i k.x)`.
    Packet { center: Vec<f64>, wavevector: Vec<f64>, width: f64, amplitude: f64 },
    /// Standing waves `A cos(k x)` along the first axis.
    Modes { wavenumbers: Vec<f64>, amplitude: f64 },
    /// Random phases on all modes with `|k| <= k_max`, peak amplitude `A`.
    Random { k_max: f64, amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Defaults to the solver's stability-based step.
    #[serde(default)]
    pub dt: Option<f64>,
    pub steps: usize,
    pub snapshot_every: usize,
    #[serde(default = "yes")]
    pub nonlinear: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaborSpec {
    /// Kernel width; `sqrt(eps)` of the scenario scale separation when absent.
    #[serde(default)]
    pub eps_star: Option<f64>,
    pub stride: usize,
    #[serde(default)]
    pub canonical_check: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RayLaunch {
    pub position: Vec<f64>,
    pub wavevector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaySpec {
    pub launch: Vec<RayLaunch>,
    pub t_end: f64,
    pub dt: f64,
    /// Residence histogram bin count over the grid box along the first axis.
    #[serde(default)]
    pub residence_bins: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectrumPreset {
    Flat { level: f64 },
    RayleighJeans { temperature: f64, chem_potential: f64 },
    Gaussian { center: f64, width: f64, amplitude: f64 },
    /// Independent uniform values in `[lo, hi)` drawn from the scenario seed.
    Random { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessSpec {
    FourWave,
    /// Acoustic vertex `|V|^2 = c k k1 k2` on the condensate density `rho`.
    ThreeWave { vertex_constant: f64, rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterSpec {
    pub members: usize,
    pub dt: f64,
    pub steps: usize,
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticsSpec {
    pub preset: SpectrumPreset,
    pub k_lo: f64,
    pub k_hi: f64,
    pub shells: usize,
    pub dim: usize,
    pub process: ProcessSpec,
    pub delta_width: f64,
    pub mc_samples: usize,
    #[serde(default)]
    pub coupling: Option<f64>,
    /// Random-phase master-equation ensemble seeded with the preset spectrum.
    #[serde(default)]
    pub master: Option<MasterSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    /// Mode indices `m` of `k = m dk` along the first axis.
    pub modes: Vec<usize>,
    pub periods: f64,
    pub amplitude: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(vec![format!("config does not parse: {e}")]))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical serialization; the hash of these bytes identifies a run.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn grid(&self) -> CliResult<Grid<f64>> {
        Ok(Grid::new(self.grid.dim, self.grid.extent, self.grid.points)?)
    }

    /// Characteristic wavenumber of the perturbation or kinetic spectrum.
    pub fn k_char(&self) -> Option<f64> {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        match &self.perturbation {
            PerturbationSpec::Packet { wavevector, .. } => Some(norm(wavevector)),
            PerturbationSpec::Modes { wavenumbers, .. } => wavenumbers.iter().copied().reduce(f64::max),
            PerturbationSpec::Random { k_max, .. } => Some(*k_max),
            PerturbationSpec::None => self.kinetics.as_ref().map(|k| (k.k_lo + k.k_hi) / 2.0),
        }
        .filter(|k| *k > 0.0)
    }

    /// Trap length: the condensate radius, or the turning radius of a wave
    /// at `k_char` in the stiffest harmonic direction.
    pub fn trap_length(&self) -> Option<f64> {
        let c = match &self.potential {
            PotentialSpec::Harmonic { coeff } => coeff.iter().copied().fold(0.0, f64::max),
            _ => return None,
        };
        if c <= 0.0 {
            return None;
        }
        match &self.condensate {
            CondensateSpec::ThomasFermi { omega } => Some((omega / c).sqrt()),
            CondensateSpec::GroundState { chemical_potential: Some(mu), .. } => Some((mu / c).sqrt()),
            _ => self.k_char().map(|k| k / c.sqrt()),
        }
    }

    /// `eps = 1 / (k_char L_trap)`, zero for an untrapped system.
    pub fn scale_separation(&self) -> Option<f64> {
        match (self.k_char(), self.trap_length()) {
            (Some(k), Some(l)) => Some(1.0 / (k * l)),
            (Some(_), None) if matches!(self.potential, PotentialSpec::None) => Some(0.0),
            _ => None,
        }
    }

    pub fn kernel(&self) -> Option<CliResult<GaborKernel<f64>>> {
        let g = self.gabor.as_ref()?;
        let k = match (g.eps_star, self.scale_separation()) {
            (Some(e), _) => GaborKernel::new(e),
            (None, Some(eps)) if eps > 0.0 => GaborKernel::from_scale_separation(eps),
            _ => return Some(Err(CliError::Validation(vec!["gabor.eps_star is required when the scale separation is undefined".into()]))),
        };
        Some(k.map_err(CliError::from))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub scenario: String,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    pub k_char: Option<f64>,
    pub trap_length: Option<f64>,
    pub scale_separation: Option<f64>,
    pub nyquist: Option<f64>,
    /// `dt max(k^2)`, stable below pi.
    pub cfl: Option<f64>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn into_result(self) -> CliResult<Self> {
        if self.ok() {
            Ok(self)
        } else {
            Err(CliError::Validation(self.errors))
        }
    }
}

pub fn validate(s: &Scenario) -> ValidationReport {
    let mut r = ValidationReport { scenario: s.name.clone(), ..Default::default() };
    if s.schema != SCHEMA {
        r.errors.push(format!("schema must be '{SCHEMA}', got '{}'", s.schema));
    }
    if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        r.errors.push(format!("name '{}' must be non-empty and use [A-Za-z0-9_-]", s.name));
    }
    let grid = match Grid::new(s.grid.dim, s.grid.extent, s.grid.points) {
        Ok(g) => Some(g),
        Err(e) => {
            r.errors.push(format!("grid: {e}"));
            None
        }
    };
    let dim = s.grid.dim;
    let check_len = |what: &str, v: &[f64], errs: &mut Vec<String>| {
        if v.len() != dim {
            errs.push(format!("{what} has {} components, grid dimension is {dim}", v.len()));
        }
    };

    match &s.potential {
        PotentialSpec::Harmonic { coeff } => {
            check_len("potential.coeff", coeff, &mut r.errors);
            if coeff.iter().any(|c| !(*c >= 0.0)) {
                r.errors.push("potential.coeff must be non-negative".into());
            }
        }
        PotentialSpec::Tabulated { path } if !path.exists() => {
            r.errors.push(format!("potential.path {} does not exist", path.display()));
        }
        _ => {}
    }
    match &s.condensate {
        CondensateSpec::GroundState { particles, chemical_potential, tol } => {
            if particles.is_some() == chemical_potential.is_some() {
                r.errors.push("condensate.ground_state needs exactly one of particles, chemical_potential".into());
            }
            if !(*tol > 0.0) {
                r.errors.push("condensate.tol must be positive".into());
            }
            if matches!(s.potential, PotentialSpec::None) && particles.is_none() {
                r.errors.push("an untrapped ground state needs a particle number".into());
            }
        }
        CondensateSpec::ThomasFermi { omega } if !(*omega > 0.0) => r.errors.push("condensate.omega must be positive".into()),
        CondensateSpec::Uniform { density } => {
            if !(*density > 0.0) {
                r.errors.push("condensate.density must be positive".into());
            }
            if !matches!(s.potential, PotentialSpec::None) {
                r.errors.push("a uniform condensate requires potential kind 'none'".into());
            }
        }
        _ => {}
    }

    if let Some(g) = grid {
        let nyq = g.nyquist();
        r.nyquist = Some(nyq);
        let spacing = g.spacing();
        match &s.perturbation {
            PerturbationSpec::Packet { center, wavevector, width, amplitude } => {
                check_len("perturbation.center", center, &mut r.errors);
                check_len("perturbation.wavevector", wavevector, &mut r.errors);
                if wavevector.iter().any(|k| k.abs() >= nyq) {
                    r.errors.push(format!("perturbation.wavevector exceeds the Nyquist wavenumber {nyq:.4}"));
                }
                if !(*width >= 2.0 * spacing) {
                    r.errors.push(format!("perturbation.width must resolve at least two grid spacings ({:.4})", 2.0 * spacing));
                }
                if !(*amplitude > 0.0) {
                    r.errors.push("perturbation.amplitude must be positive".into());
                }
            }
            PerturbationSpec::Modes { wavenumbers, amplitude } => {
                if wavenumbers.is_empty() {
                    r.errors.push("perturbation.wavenumbers is empty".into());
                }
                if wavenumbers.iter().any(|k| k.abs() >= nyq) {
                    r.errors.push(format!("perturbation.wavenumbers exceed the Nyquist wavenumber {nyq:.4}"));
                }
                if !(*amplitude > 0.0) {
                    r.errors.push("perturbation.amplitude must be positive".into());
                }
            }
            PerturbationSpec::Random { k_max, amplitude } => {
                if !(*k_max > 0.0 && *k_max < nyq) {
                    r.errors.push(format!("perturbation.k_max must lie in (0, {nyq:.4})"));
                }
                if !(*amplitude > 0.0) {
                    r.errors.push("perturbation.amplitude must be positive".into());
                }
            }
            PerturbationSpec::None => {}
        }
        if let Some(run) = &s.run {
            if run.steps == 0 || run.snapshot_every == 0 {
                r.errors.push("run.steps and run.snapshot_every must be positive".into());
            }
            if let Some(dt) = run.dt {
                if !(dt > 0.0) {
                    r.errors.push("run.dt must be positive".into());
                } else {
                    let cfl = dt * g.max_k_squared();
                    r.cfl = Some(cfl);
                    if cfl >= std::f64::consts::PI {
                        r.errors.push(format!("run.dt violates the split-step bound: dt max(k^2) = {cfl:.3} >= pi"));
                    }
                }
            }
            if matches!(s.perturbation, PerturbationSpec::None) && matches!(s.condensate, CondensateSpec::None) {
                r.errors.push("run needs a perturbation or a condensate to evolve".into());
            }
        }
        if let Some(gs) = &s.gabor {
            if s.run.is_none() {
                r.errors.push("gabor analysis needs a run section".into());
            }
            match PhaseSpaceGrid::for_field(g, gs.stride) {
                Ok(psg) => match s.kernel() {
                    Some(Ok(k)) => {
                        if let Err(e) = k.validate_for(&psg) {
                            r.errors.push(format!("gabor: {e}"));
                        }
                    }
                    Some(Err(e)) => r.errors.push(format!("gabor: {e}")),
                    None => {}
                },
                Err(e) => r.errors.push(format!("gabor.stride: {e}")),
            }
        }
        if let Some(p) = &s.dispersion_probe {
            if !matches!(s.condensate, CondensateSpec::Uniform { .. }) {
                r.errors.push("dispersion_probe needs a uniform condensate".into());
            }
            if p.modes.is_empty() || p.modes.iter().any(|&m| m == 0 || m >= g.points / 2) {
                r.errors.push(format!("dispersion_probe.modes must lie in 1..{}", g.points / 2));
            }
            if !(p.periods > 0.0 && p.amplitude > 0.0) {
                r.errors.push("dispersion_probe.periods and amplitude must be positive".into());
            }
            if s.run.is_none() {
                r.errors.push("dispersion_probe needs a run section for its time step".into());
            }
        }
    }

    if let Some(rays) = &s.rays {
        if rays.launch.is_empty() {
            r.errors.push("rays.launch is empty".into());
        }
        for (i, l) in rays.launch.iter().enumerate() {
            check_len(&format!("rays.launch[{i}].position"), &l.position, &mut r.errors);
            check_len(&format!("rays.launch[{i}].wavevector"), &l.wavevector, &mut r.errors);
        }
        if !(rays.t_end > 0.0 && rays.dt > 0.0) {
            r.errors.push("rays.t_end and rays.dt must be positive".into());
        }
        if rays.residence_bins == Some(0) {
            r.errors.push("rays.residence_bins must be positive".into());
        }
    }
    if let Some(k) = &s.kinetics {
        if !(k.k_lo > 0.0 && k.k_hi > k.k_lo) || k.shells < 2 {
            r.errors.push("kinetics needs 0 < k_lo < k_hi and at least two shells".into());
        }
        if !(1..=3).contains(&k.dim) {
            r.errors.push("kinetics.dim must be 1, 2 or 3".into());
        }
        if matches!(k.process, ProcessSpec::FourWave) && k.dim < 2 {
            r.errors.push("four-wave kinetics needs dim >= 2".into());
        }
        if !(k.delta_width > 0.0) || k.mc_samples == 0 {
            r.errors.push("kinetics.delta_width and mc_samples must be positive".into());
        }
        if let Some(m) = &k.master {
            if m.members == 0 || m.steps == 0 || m.snapshot_every == 0 || !(m.dt > 0.0) {
                r.errors.push("kinetics.master needs positive members, dt, steps and snapshot_every".into());
            }
            if k.dim != s.grid.dim {
                r.errors.push("kinetics.master needs kinetics.dim equal to the grid dimension".into());
            }
        }
    }

    r.k_char = s.k_char();
    r.trap_length = s.trap_length();
    r.scale_separation = s.scale_separation();
    if let Some(eps) = r.scale_separation {
        if eps > EPS_WARN {
            r.warnings.push(format!("scale separation eps = {eps:.3} exceeds {EPS_WARN}; WKB results are unreliable"));
        }
    }
    r
}
