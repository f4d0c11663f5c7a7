//! Wavepacket trajectories `x' = d_k omega`, `k' = -grad_x omega`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispersion::{dot3, frequency, group_velocity, norm3, space_gradient, DispersionModel, Vec3};
use crate::error::{Error, Result};
use crate::medium::Medium;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayState<T> {
    pub position: Vec3<T>,
    pub wavevector: Vec3<T>,
    pub time: T,
    pub omega_init: T,
}

impl<T: Real> RayState<T> {
    /// Launch state with `omega_init` evaluated from the medium.
    pub fn launch<M: Medium<T> + ?Sized>(position: Vec3<T>, wavevector: Vec3<T>, medium: &M, model: DispersionModel) -> Self {
        let omega_init = frequency(&wavevector, &medium.sample(&position), model);
        Self { position, wavevector, time: T::zero(), omega_init }
    }

    pub fn omega<M: Medium<T> + ?Sized>(&self, medium: &M, model: DispersionModel) -> T {
        frequency(&self.wavevector, &medium.sample(&self.position), model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionKind {
    PotentialTurning,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionEvent<T> {
    pub time: T,
    pub position: Vec3<T>,
    pub wavevector: Vec3<T>,
    /// Trap potential at the turning point.
    pub potential: T,
    pub kind: ReflectionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RayStatus {
    Completed,
    OutOfDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayTrajectory<T> {
    pub samples: Vec<RayState<T>>,
    pub events: Vec<ReflectionEvent<T>>,
    pub status: RayStatus,
    /// Largest relative frequency drift seen along the trajectory.
    pub max_drift: T,
}

impl<T: Real> RayTrajectory<T> {
    pub fn last(&self) -> &RayState<T> {
        self.samples.last().expect("trajectory has at least the launch sample")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayOptions<T> {
    /// Relative frequency drift accepted per step before halving.
    pub step_tol: T,
    /// Relative frequency drift accepted over the whole trajectory.
    pub drift_tol: T,
    pub max_halvings: u32,
}

impl<T: Real> Default for RayOptions<T> {
    fn default() -> Self {
        Self { step_tol: T::lit(1e-10), drift_tol: T::lit(1e-6), max_halvings: 12 }
    }
}

#[inline]
fn rhs<T: Real, M: Medium<T> + ?Sized>(x: &Vec3<T>, k: &Vec3<T>, medium: &M, model: DispersionModel) -> (Vec3<T>, Vec3<T>) {
    let s = medium.sample(x);
    let xd = group_velocity(k, &s, model);
    let g = space_gradient(k, &s, model);
    (xd, [-g[0], -g[1], -g[2]])
}

#[inline]
fn axpy<T: Real>(a: &Vec3<T>, h: T, b: &Vec3<T>) -> Vec3<T> {
    [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]]
}

/// One classical RK4 step.
pub fn rk4_step<T: Real, M: Medium<T> + ?Sized>(
    x: &Vec3<T>,
    k: &Vec3<T>,
    h: T,
    medium: &M,
    model: DispersionModel,
) -> (Vec3<T>, Vec3<T>) {
    let half = h / T::lit(2.0);
    let (x1, k1) = rhs(x, k, medium, model);
    let (x2, k2) = rhs(&axpy(x, half, &x1), &axpy(k, half, &k1), medium, model);
    let (x3, k3) = rhs(&axpy(x, half, &x2), &axpy(k, half, &k2), medium, model);
    let (x4, k4) = rhs(&axpy(x, h, &x3), &axpy(k, h, &k3), medium, model);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    let mut xn = *x;
    let mut kn = *k;
    for i in 0..3 {
        xn[i] = xn[i] + sixth * (x1[i] + two * x2[i] + two * x3[i] + x4[i]);
        kn[i] = kn[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
    }
    (xn, kn)
}

pub fn integrate_ray<T: Real, M: Medium<T> + ?Sized>(
    init: RayState<T>,
    medium: &M,
    model: DispersionModel,
    t_end: T,
    dt: T,
) -> Result<RayTrajectory<T>> {
    integrate_ray_with(init, medium, model, t_end, dt, RayOptions::default())
}

/// Integrates from `init.time` to `t_end` (backwards if `t_end < init.time`)
/// with nominal step `|dt|`, recording one sample per nominal step.
pub fn integrate_ray_with<T: Real, M: Medium<T> + ?Sized>(
    init: RayState<T>,
    medium: &M,
    model: DispersionModel,
    t_end: T,
    dt: T,
    opts: RayOptions<T>,
) -> Result<RayTrajectory<T>> {
    if !(dt.abs() > T::zero()) {
        return Err(Error::Config("ray time step must be nonzero".into()));
    }
    if !medium.contains(&init.position) {
        return Err(Error::Config("ray launched outside the medium".into()));
    }
    let span = t_end - init.time;
    let steps = (span.abs() / dt.abs()).ceil().to_usize().unwrap_or(0);
    let h = if steps == 0 { T::zero() } else { span / T::from_usize_lossy(steps) };
    let omega0 = init.omega_init;
    let scale = omega0.abs().max(T::epsilon());
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(init);
    let (mut x, mut k) = (init.position, init.wavevector);
    let mut omega_prev = frequency(&k, &medium.sample(&x), model);
    let mut max_drift = (omega_prev - omega0).abs() / scale;
    let mut status = RayStatus::Completed;
    for step in 0..steps {
        let mut accepted = None;
        for level in 0..=opts.max_halvings {
            let sub = 1usize << level;
            let hs = h / T::from_usize_lossy(sub);
            let (mut xs, mut ks) = (x, k);
            for _ in 0..sub {
                let (xn, kn) = rk4_step(&xs, &ks, hs, medium, model);
                xs = xn;
                ks = kn;
            }
            let om = frequency(&ks, &medium.sample(&xs), model);
            let local = (om - omega_prev).abs() / scale;
            let finite = xs.iter().chain(&ks).all(|v| v.is_finite()) && om.is_finite();
            if finite && (local <= opts.step_tol || level == opts.max_halvings) {
                accepted = Some((xs, ks, om));
                break;
            }
        }
        let t = init.time + h * T::from_usize_lossy(step + 1);
        let (xn, kn, om) = match accepted {
            Some(v) => v,
            None => return Err(Error::RayIntegration { time: t.as_f64(), drift: f64::INFINITY }),
        };
        let drift = (om - omega0).abs() / scale;
        if drift > opts.drift_tol {
            return Err(Error::RayIntegration { time: t.as_f64(), drift: drift.as_f64() });
        }
        max_drift = max_drift.max(drift);
        x = xn;
        k = kn;
        omega_prev = om;
        samples.push(RayState { position: x, wavevector: k, time: t, omega_init: omega0 });
        if !medium.contains(&x) {
            status = RayStatus::OutOfDomain;
            break;
        }
    }
    let mut traj = RayTrajectory { samples, events: Vec::new(), status, max_drift };
    traj.events = find_reflections(&traj, medium, model);
    Ok(traj)
}

/// Integrates many rays in parallel; results keep the input order.
pub fn integrate_rays<T: Real, M: Medium<T> + ?Sized>(
    inits: &[RayState<T>],
    medium: &M,
    model: DispersionModel,
    t_end: T,
    dt: T,
) -> Vec<Result<RayTrajectory<T>>> {
    inits
        .par_iter()
        .map(|&s| integrate_ray(s, medium, model, t_end, dt))
        .collect()
}

/// Fraction of the launch wavenumber below which a minimum of `|k|` counts as
/// a turning point.
pub const REFLECTION_THRESHOLD: f64 = 1e-3;

/// Locates turning points (`|k| -> 0`) between samples.
///
/// A minimum of `|k|` is bracketed by a sign change of `d|k|^2/dt = 2 k . k'`
/// and refined by bisection on single RK4 steps from the left sample.
pub fn find_reflections<T: Real, M: Medium<T> + ?Sized>(
    traj: &RayTrajectory<T>,
    medium: &M,
    model: DispersionModel,
) -> Vec<ReflectionEvent<T>> {
    let mut out = Vec::new();
    let samples = &traj.samples;
    if samples.len() < 2 {
        return out;
    }
    let k_launch = norm3(&samples[0].wavevector);
    let threshold = T::lit(REFLECTION_THRESHOLD) * k_launch;
    let slope = |x: &Vec3<T>, k: &Vec3<T>| {
        let (_, kd) = rhs(x, k, medium, model);
        dot3(k, &kd)
    };
    let forward = samples[1].time > samples[0].time;
    for w in samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let mut sa = slope(&a.position, &a.wavevector);
        let sb = slope(&b.position, &b.wavevector);
        if !forward {
            sa = -sa;
        }
        let sb = if forward { sb } else { -sb };
        // descending into a minimum, or passing straight through k = 0
        let bracket = sa < T::zero() && sb >= T::zero();
        let crossing = dot3(&a.wavevector, &b.wavevector) <= T::zero();
        if !(bracket || crossing) {
            continue;
        }
        let h = b.time - a.time;
        let at = |tau: T| rk4_step(&a.position, &a.wavevector, tau, medium, model);
        let (mut lo, mut hi) = (T::zero(), h);
        let mut best = (a.position, a.wavevector, T::zero());
        for _ in 0..60 {
            let mid = (lo + hi) / T::lit(2.0);
            let (xm, km) = at(mid);
            let s = slope(&xm, &km);
            let s = if forward { s } else { -s };
            best = (xm, km, mid);
            if s < T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (xr, kr, tau) = best;
        if norm3(&kr) < threshold {
            out.push(ReflectionEvent {
                time: a.time + tau,
                position: xr,
                wavevector: kr,
                potential: medium.sample(&xr).potential,
                kind: ReflectionKind::PotentialTurning,
            });
        }
    }
    out
}

/// `q(t) = q0 + int_0^t source(ray(s)) ds` by the trapezoid rule over the
/// recorded samples.
pub fn advect_quantity<T: Real, F: Fn(&RayState<T>) -> T>(traj: &RayTrajectory<T>, q0: T, source: F) -> Vec<(T, T)> {
    let mut out = Vec::with_capacity(traj.samples.len());
    let mut q = q0;
    let mut prev: Option<(T, T)> = None;
    for s in &traj.samples {
        let f = source(s);
        if let Some((t0, f0)) = prev {
            q = q + (s.time - t0) * (f + f0) / T::lit(2.0);
        }
        out.push((s.time, q));
        prev = Some((s.time, f));
    }
    out
}

/// Coordinate the residence histogram is binned in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidenceCoordinate {
    Axis(usize),
    Radius,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidenceHistogram<T> {
    pub edges: Vec<T>,
    /// Fraction of total ray time spent in each bin; sums to one over the
    /// covered range.
    pub fraction: Vec<T>,
}

impl<T: Real> ResidenceHistogram<T> {
    /// Time fraction per unit length.
    pub fn density(&self) -> Vec<T> {
        self.fraction
            .iter()
            .zip(self.edges.windows(2))
            .map(|(&f, e)| f / (e[1] - e[0]))
            .collect()
    }
}

/// Time-weighted position histogram over an ensemble of trajectories.
///
/// Each sample interval contributes its duration to the bin of its midpoint.
pub fn residence_density<T: Real>(
    trajs: &[RayTrajectory<T>],
    edges: &[T],
    coord: ResidenceCoordinate,
) -> Result<ResidenceHistogram<T>> {
    if edges.len() < 2 || edges.windows(2).any(|e| !(e[1] > e[0])) {
        return Err(Error::Config("histogram edges must be increasing".into()));
    }
    if trajs.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let pick = |x: &Vec3<T>| match coord {
        ResidenceCoordinate::Axis(a) => x[a],
        ResidenceCoordinate::Radius => norm3(x),
    };
    let mut acc = vec![T::zero(); edges.len() - 1];
    let mut total = T::zero();
    for tr in trajs {
        for w in tr.samples.windows(2) {
            let dt = (w[1].time - w[0].time).abs();
            let mid = (pick(&w[0].position) + pick(&w[1].position)) / T::lit(2.0);
            let pos = edges.partition_point(|&e| e <= mid);
            if pos == 0 || pos == edges.len() {
                continue;
            }
            acc[pos - 1] = acc[pos - 1] + dt;
            total = total + dt;
        }
    }
    if total > T::zero() {
        for a in acc.iter_mut() {
            *a = *a / total;
        }
    }
    Ok(ResidenceHistogram { edges: edges.to_vec(), fraction: acc })
}
