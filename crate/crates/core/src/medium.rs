//! Sampling of the background (trap, condensate density and flow) at
//! arbitrary positions.

use crate::dispersion::{MediumSample, Vec3};
use crate::error::{Error, Result};
use crate::fields::CondensateProfile;
use crate::grid::Grid;
use crate::scalar::Real;

/// Background seen by rays and kinetic transport.
pub trait Medium<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn sample(&self, x: &Vec3<T>) -> MediumSample<T>;

    /// Whether `x` lies in the region the medium describes.
    fn contains(&self, _x: &Vec3<T>) -> bool {
        true
    }
}

/// Catmull-Rom weights and their derivatives for offsets -1..=2.
#[inline]
pub(crate) fn catmull_rom<T: Real>(t: T) -> ([T; 4], [T; 4]) {
    let h = T::lit(0.5);
    let (t2, t3) = (t * t, t * t * t);
    let c = |x: f64| T::lit(x);
    (
        [
            h * (-t3 + c(2.0) * t2 - t),
            h * (c(3.0) * t3 - c(5.0) * t2 + c(2.0)),
            h * (c(-3.0) * t3 + c(4.0) * t2 + t),
            h * (t3 - t2),
        ],
        [
            h * (c(-3.0) * t2 + c(4.0) * t - c(1.0)),
            h * (c(9.0) * t2 - c(10.0) * t),
            h * (c(-9.0) * t2 + c(8.0) * t + c(1.0)),
            h * (c(3.0) * t2 - c(2.0) * t),
        ],
    )
}

/// Periodic tensor-product cubic interpolation of nodal fields.
#[derive(Debug, Clone)]
pub struct GridMedium<T: Real> {
    grid: Grid<T>,
    potential: Vec<T>,
    rho: Vec<T>,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> GridMedium<T> {
    /// Trap only, no condensate.
    pub fn from_potential(grid: Grid<T>, potential: Vec<T>) -> Result<Self> {
        if potential.len() != grid.len() {
            return Err(Error::Config("potential does not match grid".into()));
        }
        let n = grid.len();
        Ok(Self { grid, potential, rho: vec![T::zero(); n], velocity: Vec::new() })
    }

    pub fn from_profile(profile: &CondensateProfile<T>) -> Self {
        let flowing = profile.velocity.iter().any(|c| c.iter().any(|&v| v != T::zero()));
        Self {
            grid: profile.grid,
            potential: profile.potential.clone(),
            rho: profile.rho.clone(),
            velocity: if flowing { profile.velocity.clone() } else { Vec::new() },
        }
    }

    pub fn from_fields(grid: Grid<T>, potential: Vec<T>, rho: Vec<T>, velocity: Vec<Vec<T>>) -> Result<Self> {
        let n = grid.len();
        if potential.len() != n || rho.len() != n || velocity.iter().any(|c| c.len() != n) {
            return Err(Error::Config("medium fields do not match grid".into()));
        }
        if !velocity.is_empty() && velocity.len() != grid.dim {
            return Err(Error::Config("velocity needs one component per axis".into()));
        }
        Ok(Self { grid, potential, rho, velocity })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    /// Value and gradient of one nodal field at `x`.
    pub fn interpolate(&self, field: &[T], x: &Vec3<T>) -> (T, Vec3<T>) {
        let g = &self.grid;
        let n = g.points as isize;
        let dx = g.spacing();
        let half = g.extent / T::lit(2.0);
        let dim = g.dim;
        let mut base = [0isize; 3];
        let mut w = [[T::zero(); 4]; 3];
        let mut dw = [[T::zero(); 4]; 3];
        for a in 0..dim {
            let s = (x[a] + half) / dx;
            let i0 = s.floor();
            let (wa, dwa) = catmull_rom(s - i0);
            base[a] = i0.to_isize().unwrap_or(0);
            w[a] = wa;
            dw[a] = dwa;
        }
        let wrap = |i: isize| i.rem_euclid(n) as usize;
        let mut val = T::zero();
        let mut grad = [T::zero(); 3];
        let span = 4usize.pow(dim as u32);
        for o in 0..span {
            let mut off = [0usize; 3];
            let mut rem = o;
            for a in (0..dim).rev() {
                off[a] = rem % 4;
                rem /= 4;
            }
            let mut flat = 0usize;
            for a in 0..dim {
                flat = flat * g.points + wrap(base[a] + off[a] as isize - 1);
            }
            let f = field[flat];
            let mut wprod = T::one();
            for a in 0..dim {
                wprod = wprod * w[a][off[a]];
            }
            val = val + wprod * f;
            for d in 0..dim {
                let mut p = dw[d][off[d]];
                for a in 0..dim {
                    if a != d {
                        p = p * w[a][off[a]];
                    }
                }
                grad[d] = grad[d] + p * f;
            }
        }
        for gd in grad.iter_mut().take(dim) {
            *gd = *gd / dx;
        }
        (val, grad)
    }
}

impl<T: Real> Medium<T> for GridMedium<T> {
    fn dim(&self) -> usize {
        self.grid.dim
    }

    fn sample(&self, x: &Vec3<T>) -> MediumSample<T> {
        let (potential, grad_potential) = self.interpolate(&self.potential, x);
        let (rho, grad_rho) = self.interpolate(&self.rho, x);
        let mut s = MediumSample {
            potential,
            // cubic overshoot at the condensate edge must not create negative density
            rho: rho.max(T::zero()),
            grad_potential,
            grad_rho,
            ..Default::default()
        };
        for (j, comp) in self.velocity.iter().enumerate() {
            let (v, gv) = self.interpolate(comp, x);
            s.velocity[j] = v;
            for i in 0..3 {
                s.grad_velocity[i][j] = gv[i];
            }
        }
        s
    }

    fn contains(&self, x: &Vec3<T>) -> bool {
        let half = self.grid.extent / T::lit(2.0);
        x.iter().take(self.grid.dim).all(|&c| c >= -half && c < half)
    }
}

type SampleFn<T> = dyn Fn(&Vec3<T>) -> MediumSample<T> + Send + Sync;

/// Medium given by a closure, optionally restricted to `|x_i| <= half_extent`.
pub struct AnalyticMedium<T: Real> {
    dim: usize,
    half_extent: Option<T>,
    f: Box<SampleFn<T>>,
}

impl<T: Real> std::fmt::Debug for AnalyticMedium<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticMedium").field("dim", &self.dim).field("half_extent", &self.half_extent).finish()
    }
}

impl<T: Real> AnalyticMedium<T> {
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&Vec3<T>) -> MediumSample<T> + Send + Sync + 'static,
    {
        Self { dim, half_extent: None, f: Box::new(f) }
    }

    pub fn bounded(mut self, half_extent: T) -> Self {
        self.half_extent = Some(half_extent);
        self
    }

    /// `U = coeff |x|^2`, no condensate.
    pub fn harmonic(dim: usize, coeff: T) -> Self {
        Self::new(dim, move |x| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            let two = T::lit(2.0) * coeff;
            MediumSample {
                potential: coeff * r2,
                grad_potential: [two * x[0], two * x[1], two * x[2]],
                ..Default::default()
            }
        })
    }

    /// `U = coeff |x|^2` with the Thomas-Fermi density `max(0, omega0 - U)`.
    pub fn thomas_fermi_harmonic(dim: usize, coeff: T, omega0: T) -> Self {
        Self::new(dim, move |x| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            let two = T::lit(2.0) * coeff;
            let u = coeff * r2;
            let gu = [two * x[0], two * x[1], two * x[2]];
            let inside = u < omega0;
            MediumSample {
                potential: u,
                rho: if inside { omega0 - u } else { T::zero() },
                grad_potential: gu,
                grad_rho: if inside { [-gu[0], -gu[1], -gu[2]] } else { [T::zero(); 3] },
                ..Default::default()
            }
        })
    }

    /// Homogeneous background.
    pub fn uniform(dim: usize, potential: T, rho: T) -> Self {
        Self::new(dim, move |_| MediumSample::uniform(potential, rho))
    }
}

impl<T: Real> Medium<T> for AnalyticMedium<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, x: &Vec3<T>) -> MediumSample<T> {
        (self.f)(x)
    }

    fn contains(&self, x: &Vec3<T>) -> bool {
        match self.half_extent {
            Some(h) => x.iter().take(self.dim).all(|&c| c.abs() <= h),
            None => true,
        }
    }
}

/// Adds a density gain `g rho` to the potential and removes the condensate,
/// the "renormalized trap" picture of a condensate.
pub struct EffectivePotential<'a, T: Real, M: Medium<T>> {
    pub inner: &'a M,
    pub gain: T,
}

impl<T: Real, M: Medium<T>> Medium<T> for EffectivePotential<'_, T, M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn sample(&self, x: &Vec3<T>) -> MediumSample<T> {
        let s = self.inner.sample(x);
        let mut out = MediumSample::uniform(s.potential + self.gain * s.rho, T::zero());
        for i in 0..3 {
            out.grad_potential[i] = s.grad_potential[i] + self.gain * s.grad_rho[i];
        }
        out
    }

    fn contains(&self, x: &Vec3<T>) -> bool {
        self.inner.contains(x)
    }
}
