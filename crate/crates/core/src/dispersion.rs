//! Dispersion laws of short waves on a (possibly absent) condensate, their
//! phase-space derivatives, and the regime bookkeeping built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Spatial vector padded to three components; unused axes are zero.
pub type Vec3<T> = [T; 3];

#[inline]
pub(crate) fn dot3<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn norm3<T: Real>(a: &Vec3<T>) -> T {
    dot3(a, a).sqrt()
}

/// Local state of the medium seen by a wavepacket.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MediumSample<T> {
    pub potential: T,
    pub rho: T,
    pub velocity: Vec3<T>,
    pub grad_potential: Vec3<T>,
    pub grad_rho: Vec3<T>,
    /// `grad_velocity[i][j] = d_i v_j`.
    pub grad_velocity: [Vec3<T>; 3],
}

impl<T: Real> MediumSample<T> {
    /// Homogeneous medium without flow.
    pub fn uniform(potential: T, rho: T) -> Self {
        Self { potential, rho, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionVariant {
    /// `k^2 + U`
    Ehrenfest,
    /// `k sqrt(k^2 + 2 rho)`
    Bogoliubov,
    /// `k sqrt(k^2 + 2 rho) + U + rho`
    Unified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionModel {
    pub variant: DispersionVariant,
    /// Adds the flow term `k . v`.
    #[serde(default)]
    pub doppler: bool,
}

impl DispersionModel {
    pub const EHRENFEST: Self = Self { variant: DispersionVariant::Ehrenfest, doppler: false };
    pub const BOGOLIUBOV: Self = Self { variant: DispersionVariant::Bogoliubov, doppler: false };
    pub const UNIFIED: Self = Self { variant: DispersionVariant::Unified, doppler: false };

    pub fn with_doppler(self, doppler: bool) -> Self {
        Self { doppler, ..self }
    }
}

/// The Unified law collapses onto Ehrenfest where there is no condensate;
/// branching keeps the two bitwise identical there.
#[inline]
fn no_condensate<T: Real>(m: &MediumSample<T>) -> bool {
    m.rho == T::zero() && m.grad_rho.iter().all(|&g| g == T::zero())
}

/// Bogoliubov frequency as a function of `|k|^2`.
#[inline]
pub fn bogoliubov_frequency<T: Real>(k2: T, rho: T) -> T {
    (k2 * (k2 + T::lit(2.0) * rho)).sqrt()
}

/// Frequency of isotropic waves of magnitude `k` at a fixed point.
pub fn frequency_iso<T: Real>(k: T, m: &MediumSample<T>, variant: DispersionVariant) -> T {
    let k2 = k * k;
    match variant {
        DispersionVariant::Ehrenfest => k2 + m.potential,
        DispersionVariant::Bogoliubov => bogoliubov_frequency(k2, m.rho),
        DispersionVariant::Unified => {
            if no_condensate(m) {
                k2 + m.potential
            } else {
                bogoliubov_frequency(k2, m.rho) + m.potential + m.rho
            }
        }
    }
}

pub fn frequency<T: Real>(k: &Vec3<T>, m: &MediumSample<T>, model: DispersionModel) -> T {
    let k2 = dot3(k, k);
    let base = match model.variant {
        DispersionVariant::Ehrenfest => k2 + m.potential,
        DispersionVariant::Bogoliubov => bogoliubov_frequency(k2, m.rho),
        DispersionVariant::Unified if no_condensate(m) => k2 + m.potential,
        DispersionVariant::Unified => bogoliubov_frequency(k2, m.rho) + m.potential + m.rho,
    };
    if model.doppler {
        base + dot3(k, &m.velocity)
    } else {
        base
    }
}

/// `d omega / d k`.
pub fn group_velocity<T: Real>(k: &Vec3<T>, m: &MediumSample<T>, model: DispersionModel) -> Vec3<T> {
    let two = T::lit(2.0);
    let k2 = dot3(k, k);
    let ehrenfest = [two * k[0], two * k[1], two * k[2]];
    let mut out = match model.variant {
        DispersionVariant::Ehrenfest => ehrenfest,
        DispersionVariant::Unified if no_condensate(m) => ehrenfest,
        DispersionVariant::Bogoliubov | DispersionVariant::Unified => {
            let kmag = k2.sqrt();
            if kmag == T::zero() {
                [T::zero(); 3]
            } else {
                let s = (k2 + two * m.rho).sqrt();
                let f = (two * k2 + two * m.rho) / (s * kmag);
                [f * k[0], f * k[1], f * k[2]]
            }
        }
    };
    if model.doppler {
        for (o, v) in out.iter_mut().zip(&m.velocity) {
            *o = *o + *v;
        }
    }
    out
}

/// `grad_x omega` at fixed `k`.
pub fn space_gradient<T: Real>(k: &Vec3<T>, m: &MediumSample<T>, model: DispersionModel) -> Vec3<T> {
    let k2 = dot3(k, k);
    let mut out = match model.variant {
        DispersionVariant::Ehrenfest => m.grad_potential,
        DispersionVariant::Unified if no_condensate(m) => m.grad_potential,
        DispersionVariant::Bogoliubov | DispersionVariant::Unified => {
            let s = (k2 + T::lit(2.0) * m.rho).sqrt();
            let f = if s == T::zero() { T::zero() } else { k2.sqrt() / s };
            let mut g = [T::zero(); 3];
            for i in 0..3 {
                g[i] = f * m.grad_rho[i];
                if model.variant == DispersionVariant::Unified {
                    g[i] = g[i] + m.grad_potential[i] + m.grad_rho[i];
                }
            }
            g
        }
    };
    if model.doppler {
        for (i, o) in out.iter_mut().enumerate() {
            *o = *o + dot3(k, &m.grad_velocity[i]);
        }
    }
    out
}

/// Inverts the Bogoliubov law: `k = sqrt(sqrt(rho^2 + omega_b^2) - rho)`.
pub fn wavenumber_from_frequency<T: Real>(omega_b: T, rho: T) -> Result<T> {
    if omega_b < T::zero() || !omega_b.is_finite() {
        return Err(Error::Domain(format!("Bogoliubov frequency must be >= 0, got {omega_b}")));
    }
    if rho < T::zero() {
        return Err(Error::Domain(format!("density must be >= 0, got {rho}")));
    }
    let root = rho.hypot(omega_b);
    // omega^2 / (root + rho) avoids cancellation when rho >> omega
    let k2 = if root + rho == T::zero() { T::zero() } else { omega_b * omega_b / (root + rho) };
    Ok(k2.sqrt())
}

/// Characteristic three-wave interaction time `k^(2-d) / (rho n)`.
///
/// Returns infinity when either the condensate or the waves are absent.
pub fn timescale_3wave<T: Real>(k: T, rho: T, n_level: T, dim: usize) -> T {
    if rho == T::zero() || n_level == T::zero() {
        return T::infinity();
    }
    k.powi(2 - dim as i32) / (rho * n_level)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ThreeWave,
    FourWave,
}

/// Density above which three-wave processes dominate whatever the wave level,
/// in units of `k^2`.
pub const STRONG_CONDENSATE_RATIO: f64 = 0.5;

/// Which collision process dominates at wavenumber `k`.
///
/// Three-wave when the condensate outweighs the waves, `rho > n k^d`, and
/// always once `rho` is comparable to `k^2`.
pub fn regime_classify<T: Real>(k: T, rho: T, n_level: T, dim: usize) -> Regime {
    if rho > T::zero() && (rho > n_level * k.powi(dim as i32) || rho >= T::lit(STRONG_CONDENSATE_RATIO) * k * k) {
        Regime::ThreeWave
    } else {
        Regime::FourWave
    }
}

/// Angular frequency of a sampled oscillation `A cos(wt) + B sin(wt)`.
///
/// Scans the least-squares power on `(0, w_max)` and refines the best peak by
/// golden-section search.
pub fn fit_frequency(times: &[f64], s: &[f64], w_max: f64) -> f64 {
    let power = |w: f64| {
        let (mut cc, mut ss, mut cs, mut yc, mut ys) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&t, &y) in times.iter().zip(s) {
            let (sn, c) = (w * t).sin_cos();
            cc += c * c;
            ss += sn * sn;
            cs += c * sn;
            yc += y * c;
            ys += y * sn;
        }
        let det = cc * ss - cs * cs;
        if det.abs() < 1e-300 {
            return 0.0;
        }
        (yc * (ss * yc - cs * ys) + ys * (cc * ys - cs * yc)) / det
    };
    let span = times.last().unwrap() - times[0];
    let dw = std::f64::consts::PI / span / 4.0;
    let mut best = (0.0, dw);
    let mut w = dw;
    while w < w_max {
        let p = power(w);
        if p > best.0 {
            best = (p, w);
        }
        w += dw;
    }
    let (mut a, mut b) = (best.1 - dw, best.1 + dw);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if power(c) > power(d) {
            b = d;
        } else {
            a = c;
        }
    }
    (a + b) / 2.0
}
