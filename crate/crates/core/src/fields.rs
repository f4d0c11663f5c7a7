//! Order-parameter fields on a periodic grid: real-time Gross-Pitaevskii
//! integration, imaginary-time ground states, Madelung decomposition and
//! linearized perturbation dynamics on a condensate background.
//!
//! Units follow `i d_t psi + Lap psi - |psi|^2 psi - U psi = 0`, i.e. hbar = 2m = 1
//! with unit coupling.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Spectral};
use crate::scalar::{all_finite, cis, cx, Cx, Real};

/// Complex order parameter with its trapping potential.
#[derive(Debug, Clone)]
pub struct FieldState<T: Real> {
    pub grid: Grid<T>,
    pub psi: Vec<Cx<T>>,
    pub potential: Vec<T>,
    pub time: T,
}

impl<T: Real> FieldState<T> {
    pub fn new(grid: Grid<T>, psi: Vec<Cx<T>>, potential: Vec<T>) -> Result<Self> {
        if psi.len() != grid.len() || potential.len() != grid.len() {
            return Err(Error::Config("psi and potential must match the grid".into()));
        }
        Ok(Self { grid, psi, potential, time: T::zero() })
    }

    pub fn density(&self) -> Vec<T> {
        self.psi.iter().map(|z| z.norm_sqr()).collect()
    }

    /// Largest |psi| on the outermost layer of nodes.
    pub fn edge_amplitude(&self) -> T {
        let n = self.grid.points;
        (0..self.grid.len())
            .filter(|&f| {
                let idx = self.grid.unravel(f);
                (0..self.grid.dim).any(|a| idx[a] == 0 || idx[a] == n - 1)
            })
            .map(|f| self.psi[f].norm())
            .fold(T::zero(), T::max)
    }
}

/// Stationary condensate in Madelung form.
#[derive(Debug, Clone)]
pub struct CondensateProfile<T: Real> {
    pub grid: Grid<T>,
    pub psi0: Vec<Cx<T>>,
    pub potential: Vec<T>,
    pub rho: Vec<T>,
    pub theta: Vec<T>,
    /// `v = 2 grad theta`, one component per axis.
    pub velocity: Vec<Vec<T>>,
    pub omega0: T,
    /// `true` where the density is above the phase-extraction floor.
    pub phase_mask: Vec<bool>,
}

impl<T: Real> CondensateProfile<T> {
    pub fn particle_number(&self) -> T {
        self.rho.iter().copied().sum::<T>() * self.grid.cell_volume()
    }

    pub fn max_density(&self) -> T {
        self.rho.iter().copied().fold(T::zero(), T::max)
    }

    /// `sqrt(rho) e^{i theta}`.
    pub fn reconstruct(&self) -> Vec<Cx<T>> {
        self.rho
            .iter()
            .zip(&self.theta)
            .map(|(&r, &th)| cis(th) * r.sqrt())
            .collect()
    }

    /// Relative L2 norm of `div(rho v)`, the stationarity defect of the
    /// continuity equation.
    pub fn continuity_residual(&self) -> T {
        let sp = Spectral::new(self.grid);
        let mut div = vec![T::zero(); self.grid.len()];
        for (a, comp) in self.velocity.iter().enumerate() {
            let flux: Vec<Cx<T>> = self
                .rho
                .iter()
                .zip(comp)
                .map(|(&r, &v)| cx(r * v, T::zero()))
                .collect();
            for (d, z) in div.iter_mut().zip(sp.derivative(&flux, a)) {
                *d = *d + z.re;
            }
        }
        let num: T = div.iter().map(|&d| d * d).sum();
        let den: T = self.rho.iter().map(|&r| r * r).sum();
        if den == T::zero() {
            T::zero()
        } else {
            (num / den).sqrt()
        }
    }

    pub fn field_state(&self) -> FieldState<T> {
        FieldState {
            grid: self.grid,
            psi: self.psi0.clone(),
            potential: self.potential.clone(),
            time: T::zero(),
        }
    }
}

/// Time step from `dt = 0.1 / max(max k^2, max U + 2 max rho)`.
pub fn default_time_step<T: Real>(grid: &Grid<T>, potential: &[T], max_rho: T) -> T {
    let umax = potential.iter().copied().fold(T::zero(), T::max);
    T::lit(0.1) / grid.max_k_squared().max(umax + T::lit(2.0) * max_rho)
}

fn check_split_step<T: Real>(grid: &Grid<T>, dt: T) -> Result<()> {
    if !(dt > T::zero()) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    if dt * grid.max_k_squared() >= T::PI() {
        return Err(Error::Config(format!(
            "dt * max(k^2) = {} violates the split-step bound pi",
            dt * grid.max_k_squared()
        )));
    }
    Ok(())
}

/// Advances `state` by `steps * dt` with Strang splitting between the exact
/// kinetic propagator and the pointwise potential (+ cubic) phase.
///
/// With `nonlinear == false` this is the linear Schrodinger equation.
pub fn evolve_gp<T: Real>(
    state: &FieldState<T>,
    dt: T,
    steps: usize,
    nonlinear: bool,
) -> Result<FieldState<T>> {
    check_split_step(&state.grid, dt)?;
    let sp = Spectral::new(state.grid);
    let kinetic: Vec<Cx<T>> = sp.k_squared().iter().map(|&k2| cis(-k2 * dt)).collect();
    let half = dt / T::lit(2.0);
    let mut psi = state.psi.clone();
    let pointwise = |psi: &mut [Cx<T>]| {
        for (z, &u) in psi.iter_mut().zip(&state.potential) {
            let nl = if nonlinear { z.norm_sqr() } else { T::zero() };
            *z = *z * cis(-(u + nl) * half);
        }
    };
    for step in 0..steps {
        pointwise(&mut psi);
        sp.forward(&mut psi);
        for (z, k) in psi.iter_mut().zip(&kinetic) {
            *z = *z * k;
        }
        sp.inverse(&mut psi);
        pointwise(&mut psi);
        if !all_finite(&psi) {
            return Err(Error::Diverged { step, what: "non-finite psi".into() });
        }
    }
    Ok(FieldState {
        grid: state.grid,
        psi,
        potential: state.potential.clone(),
        time: state.time + dt * T::from_usize_lossy(steps),
    })
}

/// `N = int |psi|^2 dx`.
pub fn particle_number<T: Real>(state: &FieldState<T>) -> T {
    state.psi.iter().map(|z| z.norm_sqr()).sum::<T>() * state.grid.cell_volume()
}

/// `E = int (|grad psi|^2 + |psi|^4 / 2 + U |psi|^2) dx`.
pub fn energy<T: Real>(state: &FieldState<T>) -> T {
    let sp = Spectral::new(state.grid);
    let kin = sp.gradient_energy(&state.psi);
    let pot: T = state
        .psi
        .iter()
        .zip(&state.potential)
        .map(|(z, &u)| {
            let r = z.norm_sqr();
            r * r / T::lit(2.0) + u * r
        })
        .sum();
    kin + pot * state.grid.cell_volume()
}

/// What the imaginary-time solver should hold fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundStateTarget<T> {
    ParticleNumber(T),
    ChemicalPotential(T),
}

#[derive(Debug, Clone, Copy)]
pub struct GroundStateOptions<T> {
    pub tol: T,
    pub max_iter: usize,
    /// Initial imaginary time step; chosen from the problem scale when `None`.
    pub dtau: Option<T>,
    /// How many times the step may be refined by 4x to meet the residual bound.
    pub refinements: usize,
}

impl<T: Real> GroundStateOptions<T> {
    pub fn with_tol(tol: T) -> Self {
        Self { tol, max_iter: 400_000, dtau: None, refinements: 5 }
    }
}

/// `Omega = int(|grad psi|^2 + U|psi|^2 + |psi|^4) dx / N`.
pub fn chemical_potential<T: Real>(sp: &Spectral<T>, psi: &[Cx<T>], potential: &[T]) -> T {
    let dv = sp.grid().cell_volume();
    let n: T = psi.iter().map(|z| z.norm_sqr()).sum::<T>() * dv;
    if n == T::zero() {
        return T::zero();
    }
    let rest: T = psi
        .iter()
        .zip(potential)
        .map(|(z, &u)| {
            let r = z.norm_sqr();
            u * r + r * r
        })
        .sum::<T>()
        * dv;
    (sp.gradient_energy(psi) + rest) / n
}

/// `||Omega psi + Lap psi - |psi|^2 psi - U psi||_2 / ||psi||_2`.
pub fn stationary_residual<T: Real>(
    sp: &Spectral<T>,
    psi: &[Cx<T>],
    potential: &[T],
    omega: T,
) -> T {
    let lap = sp.laplacian(psi);
    let mut num = T::zero();
    let mut den = T::zero();
    for ((z, l), &u) in psi.iter().zip(&lap).zip(potential) {
        let r = *z * (omega - z.norm_sqr() - u) + l;
        num = num + r.norm_sqr();
        den = den + z.norm_sqr();
    }
    if den == T::zero() {
        T::zero()
    } else {
        (num / den).sqrt()
    }
}

/// Imaginary-time relaxation to the stationary condensate of `potential`.
pub fn ground_state<T: Real>(
    grid: Grid<T>,
    potential: &[T],
    target: GroundStateTarget<T>,
    tol: T,
) -> Result<CondensateProfile<T>> {
    ground_state_with(grid, potential, target, GroundStateOptions::with_tol(tol))
}

pub fn ground_state_with<T: Real>(
    grid: Grid<T>,
    potential: &[T],
    target: GroundStateTarget<T>,
    opts: GroundStateOptions<T>,
) -> Result<CondensateProfile<T>> {
    if potential.len() != grid.len() {
        return Err(Error::Config("potential does not match grid".into()));
    }
    if !(opts.tol > T::zero()) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    if potential.iter().any(|u| !u.is_finite()) {
        return Err(Error::Config("potential must be finite (bounded below)".into()));
    }
    let sp = Spectral::new(grid);
    let dv = grid.cell_volume();
    let umin = potential.iter().copied().fold(T::infinity(), T::min);

    let mut psi: Vec<Cx<T>> = match target {
        GroundStateTarget::ChemicalPotential(omega) => {
            if omega <= umin {
                return Err(Error::EmptyCondensate { omega0: omega.as_f64(), min_potential: umin.as_f64() });
            }
            // Thomas-Fermi start; a tiny floor keeps the relaxation alive in the tails
            let peak = omega - umin;
            potential
                .iter()
                .map(|&u| cx((omega - u).max(peak * T::lit(1e-8)).sqrt(), T::zero()))
                .collect()
        }
        GroundStateTarget::ParticleNumber(n) => {
            if !(n > T::zero()) {
                return Err(Error::Config("target particle number must be positive".into()));
            }
            let sigma = grid.extent / T::lit(8.0);
            let g: Vec<Cx<T>> = grid.sample_complex(|x| {
                let r2: T = x.iter().map(|&xi| xi * xi).sum();
                cx((-r2 / (T::lit(2.0) * sigma * sigma)).exp(), T::zero())
            });
            let norm: T = g.iter().map(|z| z.norm_sqr()).sum::<T>() * dv;
            let s = (n / norm).sqrt();
            g.into_iter().map(|z| z * s).collect()
        }
    };

    let omega_scale = match target {
        GroundStateTarget::ChemicalPotential(o) => (o - umin).abs().max(T::one()),
        GroundStateTarget::ParticleNumber(_) => chemical_potential(&sp, &psi, potential).abs().max(T::one()),
    };
    let mut dtau = opts.dtau.unwrap_or_else(|| (T::lit(0.05) / omega_scale).min(T::lit(0.01)));
    let fixed_omega = match target {
        GroundStateTarget::ChemicalPotential(o) => Some(o),
        GroundStateTarget::ParticleNumber(_) => None,
    };
    let target_n = match target {
        GroundStateTarget::ParticleNumber(n) => Some(n),
        GroundStateTarget::ChemicalPotential(_) => None,
    };

    let mut iterations = 0usize;
    let mut residual = T::infinity();
    let check_every = 25usize;
    for _stage in 0..=opts.refinements {
        let kinetic: Vec<T> = sp.k_squared().iter().map(|&k2| (-k2 * dtau).exp()).collect();
        let half = dtau / T::lit(2.0);
        let shift = fixed_omega.unwrap_or(T::zero());
        let mut best = T::infinity();
        let mut stalled = 0usize;
        loop {
            for _ in 0..check_every {
                for (z, &u) in psi.iter_mut().zip(potential) {
                    *z = *z * (-(u + z.norm_sqr() - shift) * half).exp();
                }
                sp.forward(&mut psi);
                for (z, &k) in psi.iter_mut().zip(&kinetic) {
                    *z = *z * k;
                }
                sp.inverse(&mut psi);
                for (z, &u) in psi.iter_mut().zip(potential) {
                    *z = *z * (-(u + z.norm_sqr() - shift) * half).exp();
                }
                if let Some(n) = target_n {
                    let cur: T = psi.iter().map(|z| z.norm_sqr()).sum::<T>() * dv;
                    let s = (n / cur).sqrt();
                    for z in psi.iter_mut() {
                        *z = *z * s;
                    }
                }
            }
            iterations += check_every;
            if !all_finite(&psi) {
                return Err(Error::Diverged { step: iterations, what: "imaginary-time field".into() });
            }
            let n: T = psi.iter().map(|z| z.norm_sqr()).sum::<T>() * dv;
            if n == T::zero() {
                return Err(Error::EmptyCondensate { omega0: shift.as_f64(), min_potential: umin.as_f64() });
            }
            let omega = chemical_potential(&sp, &psi, potential);
            residual = stationary_residual(&sp, &psi, potential, omega);
            if residual < T::lit(10.0) * opts.tol {
                let mut profile = madelung_decompose(grid, &psi, potential);
                profile.omega0 = omega;
                return Ok(profile);
            }
            if iterations >= opts.max_iter {
                return Err(Error::NotConverged { iterations, residual: residual.as_f64() });
            }
            // the splitting error puts a floor under the residual; refine once it stops falling
            if residual < best * T::lit(0.995) {
                best = residual;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= 40 {
                    break;
                }
            }
        }
        dtau = dtau / T::lit(4.0);
    }
    Err(Error::NotConverged { iterations, residual: residual.as_f64() })
}

/// `rho = max(0, omega0 - U)` with zero phase.
pub fn thomas_fermi_profile<T: Real>(grid: Grid<T>, potential: &[T], omega0: T) -> Result<CondensateProfile<T>> {
    if potential.len() != grid.len() {
        return Err(Error::Config("potential does not match grid".into()));
    }
    let umin = potential.iter().copied().fold(T::infinity(), T::min);
    if omega0 <= umin {
        return Err(Error::EmptyCondensate { omega0: omega0.as_f64(), min_potential: umin.as_f64() });
    }
    let rho: Vec<T> = potential.iter().map(|&u| (omega0 - u).max(T::zero())).collect();
    let psi0 = rho.iter().map(|&r| cx(r.sqrt(), T::zero())).collect();
    let floor = density_floor(&rho);
    Ok(CondensateProfile {
        grid,
        psi0,
        potential: potential.to_vec(),
        phase_mask: rho.iter().map(|&r| r > floor).collect(),
        theta: vec![T::zero(); grid.len()],
        velocity: vec![vec![T::zero(); grid.len()]; grid.dim],
        rho,
        omega0,
    })
}

/// Condensate reflection radius `r0` of an isotropic power-law trap
/// `U = coeff * r^2`: the point where `omega0 = U(r0)`.
pub fn harmonic_reflection_radius<T: Real>(coeff: T, omega0: T) -> T {
    (omega0 / coeff).sqrt()
}

fn density_floor<T: Real>(rho: &[T]) -> T {
    rho.iter().copied().fold(T::zero(), T::max) * T::lit(1e-12)
}

/// `rho = |psi0|^2`, `theta = arg psi0` (unwrapped along grid lines),
/// `v = 2 grad theta` computed as `2 Im(psi0* grad psi0) / rho`.
///
/// Below the density floor (`1e-12 * max rho`) the phase and velocity are set
/// to zero and `phase_mask` is `false`. `omega0` is the chemical-potential
/// estimate of the field.
pub fn madelung_decompose<T: Real>(grid: Grid<T>, psi0: &[Cx<T>], potential: &[T]) -> CondensateProfile<T> {
    let rho: Vec<T> = psi0.iter().map(|z| z.norm_sqr()).collect();
    let floor = density_floor(&rho);
    let mask: Vec<bool> = rho.iter().map(|&r| r > floor && r > T::zero()).collect();
    let sp = Spectral::new(grid);

    let mut theta: Vec<T> = psi0
        .iter()
        .zip(&mask)
        .map(|(z, &m)| if m { z.arg() } else { T::zero() })
        .collect();
    unwrap_phase(&grid, &mut theta, &mask);

    let velocity: Vec<Vec<T>> = (0..grid.dim)
        .map(|a| {
            let d = sp.derivative(psi0, a);
            psi0.iter()
                .zip(&d)
                .zip(rho.iter().zip(&mask))
                .map(|((z, dz), (&r, &m))| {
                    if m {
                        T::lit(2.0) * (z.conj() * dz).im / r
                    } else {
                        T::zero()
                    }
                })
                .collect()
        })
        .collect();
    let omega0 = chemical_potential(&sp, psi0, potential);
    CondensateProfile {
        grid,
        psi0: psi0.to_vec(),
        potential: potential.to_vec(),
        rho,
        theta,
        velocity,
        omega0,
        phase_mask: mask,
    }
}

fn unwrap_phase<T: Real>(grid: &Grid<T>, theta: &mut [T], mask: &[bool]) {
    let n = grid.points;
    let tau = T::TAU();
    for axis in (0..grid.dim).rev() {
        let stride = n.pow((grid.dim - 1 - axis) as u32);
        let block = stride * n;
        for start in (0..theta.len()).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                for j in 1..n {
                    let (p, c) = (base + (j - 1) * stride, base + j * stride);
                    if !(mask[p] && mask[c]) {
                        continue;
                    }
                    let mut d = theta[c] - theta[p];
                    while d > T::PI() {
                        theta[c] = theta[c] - tau;
                        d = d - tau;
                    }
                    while d < -T::PI() {
                        theta[c] = theta[c] + tau;
                        d = d + tau;
                    }
                }
            }
        }
        // only the first line of the remaining axes gets joined; that is enough
        // for a single-valued phase on simply connected supports
        if axis > 0 {
            break;
        }
    }
}

/// Small perturbation `phi` of a stationary condensate, `psi = psi0 (1 + phi)`.
///
/// The state is stored as `delta_psi = psi0 * phi`; `phi = a + i b` is
/// recovered where the background density is above the floor.
#[derive(Debug, Clone)]
pub struct PerturbationState<T: Real> {
    pub background: Arc<CondensateProfile<T>>,
    pub delta_psi: Vec<Cx<T>>,
    pub time: T,
    /// `max |phi|` above which a [`LinearityWarning`] is emitted.
    pub linearity_threshold: T,
}

/// Emitted when the perturbation leaves the small-amplitude regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearityWarning<T> {
    pub step: usize,
    pub time: T,
    pub max_amplitude: T,
}

impl<T: Real> PerturbationState<T> {
    /// Builds the state from real and imaginary parts of `phi`.
    pub fn from_parts(background: Arc<CondensateProfile<T>>, re_part: &[T], im_part: &[T]) -> Result<Self> {
        let n = background.grid.len();
        if re_part.len() != n || im_part.len() != n {
            return Err(Error::Config("perturbation does not match grid".into()));
        }
        let delta_psi = background
            .psi0
            .iter()
            .zip(re_part.iter().zip(im_part))
            .map(|(p, (&a, &b))| *p * cx(a, b))
            .collect();
        Ok(Self { background, delta_psi, time: T::zero(), linearity_threshold: T::lit(0.1) })
    }

    /// Builds the state directly from `delta_psi = psi - psi0`.
    pub fn from_delta(background: Arc<CondensateProfile<T>>, delta_psi: Vec<Cx<T>>) -> Result<Self> {
        if delta_psi.len() != background.grid.len() {
            return Err(Error::Config("perturbation does not match grid".into()));
        }
        Ok(Self { background, delta_psi, time: T::zero(), linearity_threshold: T::lit(0.1) })
    }

    /// `phi = delta_psi / psi0` (zero below the density floor).
    pub fn phi(&self) -> Vec<Cx<T>> {
        self.delta_psi
            .iter()
            .zip(&self.background.psi0)
            .zip(&self.background.phase_mask)
            .map(|((d, p), &m)| if m { d / p } else { Cx::default() })
            .collect()
    }

    /// `a = Re phi`.
    pub fn re_part(&self) -> Vec<T> {
        self.phi().into_iter().map(|z| z.re).collect()
    }

    /// `b = Im phi`.
    pub fn im_part(&self) -> Vec<T> {
        self.phi().into_iter().map(|z| z.im).collect()
    }

    pub fn max_amplitude(&self) -> T {
        self.phi().iter().map(|z| z.norm()).fold(T::zero(), T::max)
    }
}

/// `exp(M t)` for `d/dt (x, y) = M (x, y)`, the real form of
/// `i chi_t = A chi + B chi*`.
#[inline]
fn bogoliubov_pointwise<T: Real>(chi: Cx<T>, a: T, b: Cx<T>, t: T) -> Cx<T> {
    let s2 = b.norm_sqr() - a * a;
    let arg = s2 * t * t;
    let (c, s) = if arg.abs() < T::lit(1e-8) {
        (T::one() + arg / T::lit(2.0), t * (T::one() + arg / T::lit(6.0)))
    } else if s2 < T::zero() {
        let w = (-s2).sqrt();
        ((w * t).cos(), (w * t).sin() / w)
    } else {
        let w = s2.sqrt();
        ((w * t).cosh(), (w * t).sinh() / w)
    };
    let (x, y) = (chi.re, chi.im);
    let mx = b.im * x + (a - b.re) * y;
    let my = -(a + b.re) * x - b.im * y;
    cx(c * x + s * mx, c * y + s * my)
}

/// Advances the perturbation by `steps * dt`.
///
/// The Laplacian is applied exactly in Fourier space; the density-dependent
/// terms are applied pointwise, exactly for the linear problem and with RK4 for
/// the cubic terms when `keep_nonlinear` is set. Splitting order matches
/// [`evolve_gp`].
pub fn evolve_linearized<T: Real>(
    pert: &PerturbationState<T>,
    dt: T,
    steps: usize,
    keep_nonlinear: bool,
) -> Result<(PerturbationState<T>, Vec<LinearityWarning<T>>)> {
    let bg = &pert.background;
    check_split_step(&bg.grid, dt)?;
    let sp = Spectral::new(bg.grid);
    let kinetic: Vec<Cx<T>> = sp.k_squared().iter().map(|&k2| cis(-k2 * dt)).collect();
    let half = dt / T::lit(2.0);
    let omega = bg.omega0;
    let coeff_a: Vec<T> = bg
        .potential
        .iter()
        .zip(&bg.rho)
        .map(|(&u, &r)| u + T::lit(2.0) * r - omega)
        .collect();
    let coeff_b: Vec<Cx<T>> = bg.psi0.iter().map(|p| p * p).collect();

    let nonlinear_rhs = |chi: Cx<T>, p0: Cx<T>, u: T, r: T| -> Cx<T> {
        let psi = p0 + chi;
        let val = chi * (u - omega) + psi * psi.norm_sqr() - p0 * r;
        cx(val.im, -val.re)
    };
    let pointwise = |chi: &mut [Cx<T>]| {
        if keep_nonlinear {
            for (i, z) in chi.iter_mut().enumerate() {
                let (p0, u, r) = (bg.psi0[i], bg.potential[i], bg.rho[i]);
                let k1 = nonlinear_rhs(*z, p0, u, r);
                let k2 = nonlinear_rhs(*z + k1 * (half / T::lit(2.0)), p0, u, r);
                let k3 = nonlinear_rhs(*z + k2 * (half / T::lit(2.0)), p0, u, r);
                let k4 = nonlinear_rhs(*z + k3 * half, p0, u, r);
                *z = *z + (k1 + k2 * T::lit(2.0) + k3 * T::lit(2.0) + k4) * (half / T::lit(6.0));
            }
        } else {
            for ((z, &a), &b) in chi.iter_mut().zip(&coeff_a).zip(&coeff_b) {
                *z = bogoliubov_pointwise(*z, a, b, half);
            }
        }
    };

    let mut out = pert.clone();
    let mut warnings = Vec::new();
    let mut warn_level = pert.linearity_threshold;
    for step in 0..steps {
        pointwise(&mut out.delta_psi);
        sp.forward(&mut out.delta_psi);
        for (z, k) in out.delta_psi.iter_mut().zip(&kinetic) {
            *z = *z * k;
        }
        sp.inverse(&mut out.delta_psi);
        pointwise(&mut out.delta_psi);
        if !all_finite(&out.delta_psi) {
            return Err(Error::Diverged { step, what: "non-finite perturbation".into() });
        }
        out.time = pert.time + dt * T::from_usize_lossy(step + 1);
        // checking every step costs a division per node; every 16th is plenty
        if step % 16 == 15 || step + 1 == steps {
            let amp = out.max_amplitude();
            if amp > warn_level {
                log::warn!("perturbation amplitude {amp} exceeds linearity threshold at step {step}");
                warnings.push(LinearityWarning { step, time: out.time, max_amplitude: amp });
                warn_level = amp * T::lit(1.5);
            }
        }
    }
    Ok((out, warnings))
}
