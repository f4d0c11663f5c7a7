//! Energy of the condensate field and the canonical form of the slow-amplitude
//! dynamics.
//!
//! On phase space the Hamiltonian is
//!
//! ```text
//! H = int dmu [ (omega - x . grad U) |a|^2 - grad U . Im(a* d_k a) + 2k . Im(a* d_x a) ]
//!   + (1/2) int |psi|^4 dx,        omega = k^2 + U(x)
//! ```
//!
//! with `dmu` the phase-space measure under which `int |a|^2 dmu = int |psi|^2 dx`
//! and `psi` the field synthesized from `a`. Variational derivatives are taken
//! with respect to `dmu`, so `i d_t a = dH / da*` for the master equation.

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dispersion::{bogoliubov_frequency, MediumSample};
use crate::error::{Error, Result};
use crate::fields::{CondensateProfile, FieldState};
use crate::gabor::{bin_table, window, wrapped, EigenPair, PhaseSpaceGrid, SlowAmplitude};
use crate::grid::{Grid, Spectral};
use crate::kinetics::strang_step;
use crate::medium::Medium;
use crate::scalar::{cx, Cx, Real};

/// Nodes probed by [`verify_canonical`].
const CANONICAL_SAMPLES: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianBreakdown<T> {
    /// `int |grad psi|^2`
    pub kinetic: T,
    /// `(1/2) int |psi|^4`
    pub interaction: T,
    /// `int U |psi|^2`
    pub potential: T,
    pub total: T,
}

/// GP energy with spectral gradients.
pub fn hamiltonian_gp<T: Real>(state: &FieldState<T>) -> HamiltonianBreakdown<T> {
    let sp = Spectral::new(state.grid);
    let kinetic = sp.gradient_energy(&state.psi);
    let (mut quartic, mut pot) = (T::zero(), T::zero());
    for (z, &u) in state.psi.iter().zip(&state.potential) {
        let r = z.norm_sqr();
        quartic = quartic + r * r;
        pot = pot + u * r;
    }
    let dv = state.grid.cell_volume();
    let interaction = quartic * dv / T::lit(2.0);
    let potential = pot * dv;
    HamiltonianBreakdown { kinetic, interaction, potential, total: kinetic + interaction + potential }
}

/// Normal variable `a = sqrt(2 rho omega) / k * mu` built from the Bogoliubov
/// branch amplitude, so that `|a|^2` is the waveaction.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalVariable<T: Real> {
    pub psg: PhaseSpaceGrid<T>,
    pub values: Vec<Cx<T>>,
    /// Condensate density at each x node.
    pub rho: Vec<T>,
}

impl<T: Real> NormalVariable<T> {
    pub fn action(&self) -> Vec<T> {
        self.values.iter().map(|z| z.norm_sqr()).collect()
    }
}

/// Densities of `profile` at the x nodes of `psg`.
fn node_density<T: Real>(psg: &PhaseSpaceGrid<T>, profile: &CondensateProfile<T>) -> Result<Vec<T>> {
    let (grid, stride) = psg.field_grid()?;
    grid.ensure_same(&profile.grid)?;
    Ok((0..psg.x_len())
        .map(|xi| {
            let idx = psg.x_index(xi);
            let mut g = [0usize; 3];
            for a in 0..grid.dim {
                g[a] = idx[a] * stride;
            }
            profile.rho[grid.ravel(&g)]
        })
        .collect())
}

/// `k = 0` nodes carry no action and are set to zero.
pub fn normal_variable<T: Real>(pair: &EigenPair<T>, profile: &CondensateProfile<T>) -> Result<NormalVariable<T>> {
    let psg = pair.psg;
    let rho = node_density(&psg, profile)?;
    let nk = psg.k_len();
    let values = pair
        .mu_amp
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let k = psg.k_node(i % nk);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            if k2 == T::zero() {
                return Cx::default();
            }
            let r = rho[i / nk];
            m * (T::lit(2.0) * r * bogoliubov_frequency(k2, r) / k2).sqrt()
        })
        .collect();
    Ok(NormalVariable { psg, values, rho })
}

/// Per-grid data shared by the quadratic form, the synthesis and the measure.
struct PhaseOps<T: Real> {
    psg: PhaseSpaceGrid<T>,
    grid: Grid<T>,
    sp: Spectral<T>,
    table: Vec<(usize, bool)>,
    windows: Vec<Vec<T>>,
    /// `sum_j f(eps*|x - x_j|)^2` on the field grid.
    w2: Vec<T>,
    measure: T,
    media: Vec<MediumSample<T>>,
}

impl<T: Real> PhaseOps<T> {
    fn new<M: Medium<T> + ?Sized>(a: &SlowAmplitude<T>, medium: &M) -> Result<Self> {
        let psg = a.psg;
        let (grid, _) = psg.field_grid()?;
        a.kernel.validate_for(&psg)?;
        let windows: Vec<Vec<T>> = (0..psg.x_len()).map(|xi| window(&grid, &a.kernel, &psg.x_node(xi))).collect();
        let mut w2 = vec![T::zero(); grid.len()];
        for w in &windows {
            for (s, &v) in w2.iter_mut().zip(w) {
                *s = *s + v * v;
            }
        }
        let mean = w2.iter().copied().sum::<T>() / T::from_usize_lossy(grid.len());
        if mean <= T::zero() {
            return Err(Error::Domain("window weights vanish".into()));
        }
        let media = (0..psg.x_len()).map(|xi| medium.sample(&psg.x_node(xi))).collect();
        Ok(Self {
            psg,
            grid,
            sp: Spectral::new(grid),
            table: bin_table(&psg)?,
            windows,
            w2,
            measure: T::one() / (grid.volume() * mean),
            media,
        })
    }

    fn local_field(&self, a: &[Cx<T>], xi: usize) -> Vec<Cx<T>> {
        let mut buf = vec![Cx::default(); self.grid.len()];
        for (m, &(b, odd)) in self.table.iter().enumerate() {
            let z = a[self.psg.index(xi, m)];
            buf[b] = if odd { -z } else { z };
        }
        self.sp.inverse(&mut buf);
        buf
    }

    /// `L a` with `i d_t a = L a` for the linear part of the master equation.
    fn apply(&self, a: &[Cx<T>]) -> Vec<Cx<T>> {
        let psg = &self.psg;
        let nk = psg.k_len();
        let mut out: Vec<Cx<T>> = a
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let k = psg.k_node(i % nk);
                z * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2] + self.media[i / nk].potential)
            })
            .collect();
        for xi in 0..psg.x_len() {
            let g = self.media[xi].grad_potential;
            if g.iter().all(|&v| v == T::zero()) {
                continue;
            }
            let x0 = psg.x_node(xi);
            let mut buf = self.local_field(a, xi);
            for (f, z) in buf.iter_mut().enumerate() {
                let x = self.grid.position(f);
                let mut s = T::zero();
                for ax in 0..self.grid.dim {
                    s = s + g[ax] * wrapped(x[ax] - x0[ax], self.grid.extent);
                }
                *z = *z * s;
            }
            self.sp.forward(&mut buf);
            for (m, &(b, odd)) in self.table.iter().enumerate() {
                let z = if odd { -buf[b] } else { buf[b] };
                let o = &mut out[psg.index(xi, m)];
                *o = *o + z;
            }
        }
        let n = psg.x.count;
        if n > 1 {
            let mut planner = FftPlanner::new();
            let fwd = planner.plan_fft_forward(n);
            let inv = planner.plan_fft_inverse(n);
            let extent = psg.x.step * T::from_usize_lossy(n);
            let q: Vec<T> = (0..n)
                .map(|j| {
                    let s = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                    T::TAU() * T::lit(s) / extent
                })
                .collect();
            let mut line = vec![Cx::default(); n];
            for axis in 0..psg.dim {
                let st = n.pow((psg.dim - 1 - axis) as u32);
                for ki in 0..nk {
                    let k = psg.k_node(ki)[axis];
                    if k == T::zero() {
                        continue;
                    }
                    for start in (0..psg.x_len()).filter(|s| (s / st) % n == 0) {
                        for (j, l) in line.iter_mut().enumerate() {
                            *l = a[psg.index(start + j * st, ki)];
                        }
                        fwd.process(&mut line);
                        for (l, &qj) in line.iter_mut().zip(&q) {
                            *l = *l * (T::lit(2.0) * k * qj / T::from_usize_lossy(n));
                        }
                        inv.process(&mut line);
                        for (j, l) in line.iter().enumerate() {
                            let o = &mut out[psg.index(start + j * st, ki)];
                            *o = *o + l;
                        }
                    }
                }
            }
        }
        out
    }

    /// Field `sum_j f_j inverse(a_j) / (dx^d sum_j f_j^2)`, a left inverse of
    /// the slow transform whose adjoint is the transform itself.
    fn synthesize(&self, a: &[Cx<T>]) -> Vec<Cx<T>> {
        let mut acc = vec![Cx::default(); self.grid.len()];
        for xi in 0..self.psg.x_len() {
            let buf = self.local_field(a, xi);
            for ((s, z), &w) in acc.iter_mut().zip(&buf).zip(&self.windows[xi]) {
                *s = *s + z * w;
            }
        }
        let dv = self.grid.cell_volume();
        acc.iter().zip(&self.w2).map(|(z, &w)| z / (dv * w)).collect()
    }

    fn energy(&self, a: &[Cx<T>], quartic: bool) -> T {
        let la = self.apply(a);
        let quad: T = a.iter().zip(&la).map(|(z, l)| (z.conj() * l).re).sum::<T>() * self.measure;
        if !quartic {
            return quad;
        }
        let g = self.synthesize(a);
        let q4: T = g.iter().map(|z| z.norm_sqr() * z.norm_sqr()).sum();
        quad + q4 * self.grid.cell_volume() / T::lit(2.0)
    }

    fn norm_bound(&self) -> T {
        let psg = &self.psg;
        let kmax = (0..psg.k_len())
            .map(|m| {
                let k = psg.k_node(m);
                (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt()
            })
            .fold(T::zero(), T::max);
        let (umax, gmax) = self.media.iter().fold((T::zero(), T::zero()), |(u, g), s| {
            let gn = (s.grad_potential[0] * s.grad_potential[0]
                + s.grad_potential[1] * s.grad_potential[1]
                + s.grad_potential[2] * s.grad_potential[2])
                .sqrt();
            (u.max(s.potential.abs()), g.max(gn))
        });
        let qmax = if psg.x.count > 1 { T::PI() / psg.x.step } else { T::zero() };
        let d = T::from_usize_lossy(psg.dim).sqrt();
        kmax * kmax + umax + gmax * self.grid.extent * d / T::lit(2.0) + T::lit(2.0) * kmax * qmax * d
    }
}

/// Phase-space measure `dmu` per node, `int |a|^2 dmu = int |psi|^2 dx`.
pub fn phase_space_measure<T: Real>(a: &SlowAmplitude<T>) -> Result<T> {
    let ops = PhaseOps::new(a, &crate::medium::AnalyticMedium::uniform(a.psg.dim, T::zero(), T::zero()))?;
    Ok(ops.measure)
}

/// Quadrature of the canonical form with `omega = k^2 + U`, plus the quartic
/// term of the synthesized field when requested.
pub fn hamiltonian_gabor<T: Real, M: Medium<T> + ?Sized>(a: &SlowAmplitude<T>, medium: &M, include_quartic: bool) -> Result<T> {
    let ops = PhaseOps::new(a, medium)?;
    Ok(ops.energy(&a.values, include_quartic))
}

/// Max relative mismatch between `dH/da*` (symmetric differences with step
/// `h`, default `1e-6 max|a|`) and `i d_t a` of one master-equation step,
/// over a sample of nodes.
pub fn verify_canonical<T: Real, M: Medium<T> + ?Sized>(
    a: &SlowAmplitude<T>,
    medium: &M,
    h: Option<T>,
    include_quartic: bool,
) -> Result<T> {
    let amax = a.values.iter().map(|z| z.norm()).fold(T::zero(), T::max);
    if amax == T::zero() {
        return Ok(T::zero());
    }
    let ops = PhaseOps::new(a, medium)?;
    let h = h.unwrap_or(T::lit(1e-6) * amax);
    if !(h > T::zero()) {
        return Err(Error::Config("perturbation step must be positive".into()));
    }

    let tau = T::lit(1e-4) / ops.norm_bound().max(T::one());
    let mut planner = FftPlanner::new();
    let mut fwd = a.clone();
    strang_step(&mut fwd, medium, tau, &ops.sp, &ops.table, &mut planner, include_quartic)?;
    let mut back = a.clone();
    strang_step(&mut back, medium, -tau, &ops.sp, &ops.table, &mut planner, include_quartic)?;
    let rhs: Vec<Cx<T>> = fwd
        .values
        .iter()
        .zip(&back.values)
        .map(|(p, m)| (p - m) * cx(T::zero(), T::one() / (T::lit(2.0) * tau)))
        .collect();

    let mut order: Vec<usize> = (0..rhs.len()).collect();
    order.sort_by(|&i, &j| rhs[j].norm().partial_cmp(&rhs[i].norm()).unwrap_or(std::cmp::Ordering::Equal));
    let mut nodes: Vec<usize> = order.iter().take(CANONICAL_SAMPLES / 2).copied().collect();
    let stride = (rhs.len() / (CANONICAL_SAMPLES / 2)).max(1);
    nodes.extend((0..rhs.len()).step_by(stride).take(CANONICAL_SAMPLES / 2));
    nodes.sort_unstable();
    nodes.dedup();

    let mut work = a.values.clone();
    let diff = |j: usize, dz: Cx<T>, work: &mut Vec<Cx<T>>| {
        let z0 = work[j];
        work[j] = z0 + dz;
        let hp = ops.energy(work, include_quartic);
        work[j] = z0 - dz;
        let hm = ops.energy(work, include_quartic);
        work[j] = z0;
        (hp - hm) / (T::lit(2.0) * h)
    };
    let (mut worst, mut scale) = (T::zero(), T::zero());
    for &j in &nodes {
        let dre = diff(j, cx(h, T::zero()), &mut work);
        let dim = diff(j, cx(T::zero(), h), &mut work);
        let grad = cx(dre, dim) / (T::lit(2.0) * ops.measure);
        worst = worst.max((grad - rhs[j]).norm());
        scale = scale.max(rhs[j].norm());
    }
    Ok(if scale > T::zero() { worst / scale } else { worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{evolve_gp, madelung_decompose, PerturbationState};
    use crate::gabor::{bogoliubov_project, gabor_transform_real, mu_action, slow_transform, waveaction_field, GaborKernel};
    use crate::medium::AnalyticMedium;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn smooth_field(g: &Grid<f64>, kmax: f64, amp: f64, seed: u64) -> Vec<Cx<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = Spectral::new(*g);
        let mut c: Vec<Cx<f64>> = (0..g.len())
            .map(|f| {
                let k2: f64 = g.wavevector(f).iter().map(|v| v * v).sum();
                if k2 <= kmax * kmax {
                    cx(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                } else {
                    Cx::default()
                }
            })
            .collect();
        sp.inverse(&mut c);
        let m = c.iter().map(|z| z.norm()).fold(0.0, f64::max);
        c.iter().map(|z| z * (amp / m)).collect()
    }

    #[test]
    fn gp_parts() {
        let g = Grid::<f64>::new(2, 8.0, 16).unwrap();
        let zero = FieldState::new(g, vec![Cx::default(); g.len()], vec![0.0; g.len()]).unwrap();
        let h = hamiltonian_gp(&zero);
        assert_eq!((h.kinetic, h.interaction, h.potential, h.total), (0.0, 0.0, 0.0, 0.0));

        let c = cx(0.6f64, -0.4);
        let st = FieldState::new(g, vec![c; g.len()], vec![1.5; g.len()]).unwrap();
        let h = hamiltonian_gp(&st);
        let v = g.volume();
        assert!(h.kinetic.abs() < 1e-12);
        assert!((h.interaction - 0.5 * c.norm_sqr().powi(2) * v).abs() < 1e-12);
        assert!((h.potential - 1.5 * c.norm_sqr() * v).abs() < 1e-12);
        assert_eq!(h.total, h.kinetic + h.interaction + h.potential);
    }

    #[test]
    fn gp_energy_is_conserved() {
        let g = Grid::<f64>::new(1, 20.0, 128).unwrap();
        let u = g.sample(|x| 0.1 * x[0] * x[0]);
        let psi = g.sample_complex(|x| cx((-x[0] * x[0] / 4.0).exp(), 0.3 * (x[0]).sin()));
        let st = FieldState::new(g, psi, u).unwrap();
        let e0 = hamiltonian_gp(&st).total;
        let out = evolve_gp(&st, 1e-3, 1000, true).unwrap();
        let e1 = hamiltonian_gp(&out).total;
        assert!(((e1 - e0) / e0).abs() < 1e-6, "{e0} {e1}");
    }

    #[test]
    fn uniform_potential_reduces_to_mean_frequency() {
        let g = Grid::<f64>::new(1, 64.0, 256).unwrap();
        let psg = PhaseSpaceGrid::for_field(g, 8).unwrap();
        let ker = GaborKernel::new(0.25).unwrap();
        let k0 = g.dk() * 12.0;
        let psi = g.sample_complex(|x| crate::scalar::cis(k0 * x[0]) * 0.1);
        let a = slow_transform(&psi, &ker, &psg).unwrap();
        let u0 = 0.7;
        let h = hamiltonian_gabor(&a, &AnalyticMedium::uniform(1, u0, 0.0), false).unwrap();
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * g.cell_volume();
        // k^2 + 2k (k0 - k) averaged over a window spectrum of variance eps*^2
        let expect = (k0 * k0 - 0.25f64.powi(2) + u0) * norm;
        assert!(((h - expect) / expect).abs() < 1e-6, "{h} {expect}");
    }

    #[test]
    fn localized_packet_matches_direct_quadrature() {
        let g = Grid::<f64>::new(1, 64.0, 256).unwrap();
        let psg = PhaseSpaceGrid::for_field(g, 8).unwrap();
        let ker = GaborKernel::new(0.25).unwrap();
        let (x0, k0, s) = (4.0, 1.5, 4.0);
        let grad = 0.05;
        let m = AnalyticMedium::new(1, move |x: &[f64; 3]| MediumSample {
            potential: grad * x[0],
            grad_potential: [grad, 0.0, 0.0],
            ..MediumSample::uniform(0.0, 0.0)
        });
        let psi = g.sample_complex(|x| crate::scalar::cis(k0 * x[0]) * (-(x[0] - x0).powi(2) / (2.0 * s * s)).exp() * 0.1);
        let a = slow_transform(&psi, &ker, &psg).unwrap();
        let h = hamiltonian_gabor(&a, &m, false).unwrap();
        let st = FieldState::new(g, psi.clone(), g.sample(|x| grad * x[0])).unwrap();
        let gp = hamiltonian_gp(&st);
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * g.cell_volume();
        let direct = gp.kinetic + gp.potential - ker.eps_star.powi(2) * norm;
        assert!(((h - direct) / direct).abs() < 1e-3, "{h} {direct}");
    }

    #[test]
    fn agrees_with_gp_energy() {
        let g = Grid::<f64>::new(1, 160.0, 256).unwrap();
        let psg = PhaseSpaceGrid::for_field(g, 8).unwrap();
        let eps = 0.01;
        let ker = GaborKernel::from_scale_separation(eps).unwrap();
        let u = g.sample(|x| eps * eps * x[0] * x[0]);
        let m = AnalyticMedium::harmonic(1, eps * eps);
        let psi = g.sample_complex(|x| crate::scalar::cis(x[0]) * 0.3 * (-(x[0] * x[0]) / 200.0).exp());
        let a = slow_transform(&psi, &ker, &psg).unwrap();
        let st = FieldState::new(g, psi, u).unwrap();
        let gp = hamiltonian_gp(&st);
        let hg = hamiltonian_gabor(&a, &m, true).unwrap();
        let rel = ((hg - gp.total) / gp.total).abs();
        assert!(rel < 2.0 * (eps + ker.eps_star), "{hg} {} {rel}", gp.total);
    }

    #[test]
    fn measure_reproduces_norm() {
        let g = Grid::<f64>::new(2, 48.0, 128).unwrap();
        let psg = PhaseSpaceGrid::for_field(g, 8).unwrap();
        let ker = GaborKernel::new(0.25).unwrap();
        let psi = smooth_field(&g, 2.0, 0.2, 3);
        let a = slow_transform(&psi, &ker, &psg).unwrap();
        let mu = phase_space_measure(&a).unwrap();
        let lhs: f64 = a.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * mu;
        let rhs: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * g.cell_volume();
        assert!(((lhs - rhs) / rhs).abs() < 1e-4, "{lhs} {rhs}");
    }

    #[test]
    fn canonical_zero_and_single_node() {
        let g = Grid::<f64>::new(1, 64.0, 256).unwrap();
        let psg = PhaseSpaceGrid::for_field(g, 8).unwrap();
        let ker = GaborKernel::new(0.25).unwrap();
        let free = AnalyticMedium::uniform(1, 0.0, 0.0);
        let zero = SlowAmplitude::zeros(psg, ker);
        assert_eq!(verify_canonical(&zero, &free, None, true).unwrap(), 0.0);
        let mut a = zero.clone();
        a.values[psg.index(5, 40)] = cx(0.3, 0.1);
        let r = verify_canonical(&a, &free, None, false).unwrap();
        assert!(r < 1e-6, "{r}");
    }

    #[test]
    fn canonical_random_weak_field() {
        let g = Grid::<f64>::new(1, 64.0, 256).unwrap();
        let psg = PhaseSpaceGrid::for_field(g, 8).unwrap();
        let ker = GaborKernel::new(0.25).unwrap();
        let m = AnalyticMedium::harmonic(1, 0.01);
        let psi = smooth_field(&g, 2.5, 0.3, 11);
        let a = slow_transform(&psi, &ker, &psg).unwrap();
        let r = verify_canonical(&a, &m, None, true).unwrap();
        assert!(r < 5e-2, "{r}");
        let lin = verify_canonical(&a, &m, None, false).unwrap();
        assert!(lin < 1e-5, "{lin}");
    }

    fn uniform_pair(rho0: f64) -> (EigenPair<f64>, CondensateProfile<f64>, PerturbationState<f64>, PhaseSpaceGrid<f64>, GaborKernel<f64>) {
        let g = Grid::<f64>::new(1, 64.0, 256).unwrap();
        let psg = PhaseSpaceGrid::for_field(g, 16).unwrap();
        let ker = GaborKernel::new(0.25).unwrap();
        let u = vec![-rho0; g.len()];
        let psi0 = vec![cx(rho0.sqrt(), 0.0); g.len()];
        let prof = Arc::new(madelung_decompose(g, &psi0, &u));
        let re = g.sample(|x| 1e-3 * (g.dk() * 10.0 * x[0]).cos());
        let im = g.sample(|x| 2e-3 * (g.dk() * 10.0 * x[0]).sin());
        let pert = PerturbationState::from_parts(prof.clone(), &re, &im).unwrap();
        let a_hat = gabor_transform_real(&pert.re_part(), &ker, &psg).unwrap();
        let b_hat = gabor_transform_real(&pert.im_part(), &ker, &psg).unwrap();
        let pair = bogoliubov_project(&a_hat, &b_hat, &vec![rho0; psg.x_len()]).unwrap();
        ((pair), (*prof).clone(), pert, psg, ker)
    }

    #[test]
    fn normal_variable_carries_waveaction() {
        let (pair, prof, pert, psg, ker) = uniform_pair(1.0);
        let nv = normal_variable(&pair, &prof).unwrap();
        let act = nv.action();
        let mu = mu_action(&pair);
        let wa = waveaction_field(&pert, &ker, &psg).unwrap();
        let nk = psg.k_len();
        let scale = wa.values.iter().copied().fold(0.0, f64::max);
        for i in 0..psg.len() {
            let k = psg.k_node(i % nk)[0];
            if k == 0.0 {
                assert_eq!(act[i], 0.0);
                continue;
            }
            assert!((act[i] - mu[i]).abs() <= 1e-12 * scale.max(1e-300));
            assert!((act[i] - wa.values[i]).abs() <= 1e-9 * scale, "{i} {} {}", act[i], wa.values[i]);
        }
        let mut zero = pair.clone();
        zero.mu_amp.iter_mut().for_each(|z| *z = Cx::default());
        assert!(normal_variable(&zero, &prof).unwrap().values.iter().all(|z| *z == Cx::default()));
    }

    #[test]
    fn normal_variable_vanishes_linearly_with_density() {
        let mut ratios = vec![];
        for &r in &[1e-2, 1e-3, 1e-4] {
            let (pair, prof, _, psg, _) = uniform_pair(r);
            let nv = normal_variable(&pair, &prof).unwrap();
            let i = (0..psg.len()).max_by(|&i, &j| pair.mu_amp[i].norm().partial_cmp(&pair.mu_amp[j].norm()).unwrap()).unwrap();
            ratios.push(nv.values[i].norm_sqr() / pair.mu_amp[i].norm_sqr() / r);
        }
        assert!((ratios[2] / ratios[1] - 1.0).abs() < 0.02, "{ratios:?}");
        assert!((ratios[1] / ratios[0] - 1.0).abs() < 0.02, "{ratios:?}");
    }
}
