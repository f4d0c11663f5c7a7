//! Collision integrals, the Gabor-amplitude master equation and the
//! ray-transport kinetic solver.
//!
//! Collision rates are Monte-Carlo estimates of bin averages over radial
//! shells. Wavevectors are confined to the resolved annulus spanned by the
//! shell bins, which keeps the sampled domain symmetric under relabelling of
//! the interacting waves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dispersion::{frequency_iso, regime_classify, DispersionModel, Regime, Vec3};
use crate::error::{Error, Result};
use crate::gabor::{bin_table, inverse_slow, slow_transform, wrapped, GaborKernel, PhaseSpaceGrid, PhaseSpaceSpectrum, SlowAmplitude};
use crate::grid::Spectral;
use crate::medium::{catmull_rom, Medium};
use crate::rays::rk4_step;
use crate::scalar::{all_finite, cis, cx, Cx, Real};

/// Radially symmetric waveaction `n(|k|)` at one position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropicSpectrum<T> {
    pub k_shells: Vec<T>,
    pub n_values: Vec<T>,
    pub position: Vec3<T>,
    pub dim: usize,
}

impl<T: Real> IsotropicSpectrum<T> {
    pub fn new(k_shells: Vec<T>, n_values: Vec<T>, position: Vec3<T>, dim: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!("spectrum dimension {dim} not in 1..=3")));
        }
        if k_shells.len() < 2 || k_shells.len() != n_values.len() {
            return Err(Error::Config("need >= 2 shells with one value each".into()));
        }
        if k_shells.windows(2).any(|w| !(w[1] > w[0])) || !(k_shells[0] > T::zero()) {
            return Err(Error::Config("shells must be positive and increasing".into()));
        }
        if n_values.iter().any(|&n| !(n >= T::zero()) || !n.is_finite()) {
            return Err(Error::Config("waveaction must be finite and nonnegative".into()));
        }
        let s = Self { k_shells, n_values, position, dim };
        if !(s.edges()[0] > T::zero()) {
            return Err(Error::Config("innermost bin reaches k = 0".into()));
        }
        Ok(s)
    }

    pub fn from_fn<F: Fn(T) -> T>(k_shells: Vec<T>, position: Vec3<T>, dim: usize, f: F) -> Result<Self> {
        let n = k_shells.iter().map(|&k| f(k)).collect();
        Self::new(k_shells, n, position, dim)
    }

    /// `count` evenly spaced shells on `[k_lo, k_hi]`.
    pub fn linear_shells(k_lo: T, k_hi: T, count: usize) -> Vec<T> {
        let h = (k_hi - k_lo) / T::from_usize_lossy(count.max(2) - 1);
        (0..count).map(|i| k_lo + h * T::from_usize_lossy(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.k_shells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_shells.is_empty()
    }

    /// Bin edges: midpoints between shells, half a spacing beyond the ends.
    pub fn edges(&self) -> Vec<T> {
        let k = &self.k_shells;
        let m = k.len();
        let half = T::lit(0.5);
        let mut e = Vec::with_capacity(m + 1);
        e.push(k[0] - half * (k[1] - k[0]));
        for w in k.windows(2) {
            e.push(half * (w[0] + w[1]));
        }
        e.push(k[m - 1] + half * (k[m - 1] - k[m - 2]));
        e
    }

    /// d-dimensional volume of each bin.
    pub fn shell_volumes(&self) -> Vec<T> {
        let e = self.edges();
        e.windows(2).map(|w| ball_volume(w[1], self.dim) - ball_volume(w[0], self.dim)).collect()
    }

    /// `sum_i V_i n_i`.
    pub fn total(&self) -> T {
        self.shell_volumes().iter().zip(&self.n_values).map(|(&v, &n)| v * n).sum()
    }

    pub fn scaled(&self, c: T) -> Self {
        Self { n_values: self.n_values.iter().map(|&n| n * c).collect(), ..self.clone() }
    }
}

fn unit_sphere_area<T: Real>(dim: usize) -> T {
    match dim {
        1 => T::lit(2.0),
        2 => T::TAU(),
        _ => T::lit(4.0) * T::PI(),
    }
}

fn ball_volume<T: Real>(r: T, dim: usize) -> T {
    unit_sphere_area::<T>(dim) * r.powi(dim as i32) / T::from_usize_lossy(dim)
}

/// Rayleigh-Jeans equilibrium `n = T / (omega - mu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RJParams<T> {
    pub temperature: T,
    pub chem_potential: T,
}

impl<T: Real> RJParams<T> {
    pub fn new(temperature: T, chem_potential: T) -> Result<Self> {
        if !(temperature > T::zero()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(Self { temperature, chem_potential })
    }

    pub fn occupation(&self, omega: T) -> T {
        self.temperature / (omega - self.chem_potential)
    }

    /// RJ spectrum on the given shells; `mu` must lie below every shell frequency.
    pub fn spectrum<F: Fn(T) -> T>(&self, k_shells: Vec<T>, position: Vec3<T>, dim: usize, omega: F) -> Result<IsotropicSpectrum<T>> {
        if k_shells.iter().any(|&k| !(omega(k) > self.chem_potential)) {
            return Err(Error::Config("chemical potential must lie below min omega".into()));
        }
        IsotropicSpectrum::from_fn(k_shells, position, dim, |k| self.occupation(omega(k)))
    }
}

/// Three-wave interaction coefficient `|V_{k k1 k2}|^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexModel<T> {
    /// `|V|^2 = C k k1 k2`.
    AcousticLimit { constant: T },
    /// Values on shell bins, indexed `[i * M * M + j * M + l]` for the bins of
    /// `(|k|, |k1|, |k2|)`.
    UserTable { table: Vec<T> },
}

impl<T: Real> VertexModel<T> {
    fn value(&self, k: [T; 3], bins: [usize; 3], m: usize) -> T {
        match self {
            VertexModel::AcousticLimit { constant } => *constant * k[0] * k[1] * k[2],
            VertexModel::UserTable { table } => table[bins[0] * m * m + bins[1] * m + bins[2]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionConfig<T> {
    /// Standard deviation of the Gaussian that replaces the frequency delta.
    pub delta_width: T,
    /// Samples per shell.
    pub mc_samples: usize,
    /// Overall prefactor of the collision integral.
    pub coupling: T,
    pub vertex_model: VertexModel<T>,
    pub seed: u64,
    /// Independent RNG streams per shell; results do not depend on thread count.
    pub shards: usize,
}

impl<T: Real> CollisionConfig<T> {
    /// Four-wave defaults: coupling `1/pi`.
    pub fn four_wave(delta_width: T, mc_samples: usize) -> Self {
        Self {
            delta_width,
            mc_samples,
            coupling: T::FRAC_1_PI(),
            vertex_model: VertexModel::AcousticLimit { constant: T::one() },
            seed: 0,
            shards: 8,
        }
    }

    /// Three-wave defaults: coupling `pi`, acoustic vertex with constant `c`.
    pub fn three_wave(delta_width: T, mc_samples: usize, c: T) -> Self {
        Self { coupling: T::PI(), vertex_model: VertexModel::AcousticLimit { constant: c }, ..Self::four_wave(delta_width, mc_samples) }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_coupling(mut self, coupling: T) -> Self {
        self.coupling = coupling;
        self
    }

    fn validate(&self, m: usize) -> Result<()> {
        if !(self.delta_width > T::zero()) {
            return Err(Error::Config("delta_width must be positive".into()));
        }
        if self.mc_samples == 0 || self.shards == 0 {
            return Err(Error::Config("mc_samples and shards must be positive".into()));
        }
        if let VertexModel::UserTable { table } = &self.vertex_model {
            if table.len() != m * m * m {
                return Err(Error::Config(format!("vertex table needs {} entries", m * m * m)));
            }
        }
        Ok(())
    }
}

/// Twice the mean frequency spacing of the shells.
pub fn default_delta_width<T: Real, F: Fn(T) -> T>(spec: &IsotropicSpectrum<T>, omega: F) -> T {
    let m = spec.len();
    let span = omega(spec.k_shells[m - 1]) - omega(spec.k_shells[0]);
    T::lit(2.0) * span / T::from_usize_lossy(m - 1)
}

/// Bin-averaged rates `dn/dt` with Monte-Carlo standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionRates<T> {
    pub k_shells: Vec<T>,
    pub rate: Vec<T>,
    pub stderr: Vec<T>,
    /// Bin averages of `omega * dn/dt`.
    pub energy_rate: Vec<T>,
    pub energy_stderr: Vec<T>,
    pub shell_volumes: Vec<T>,
    /// Shells where the standard error exceeds 20% of the rate.
    pub insufficient: Vec<usize>,
}

/// `(dN/dt, dE/dt)` with their standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservationResiduals<T> {
    pub dn_dt: T,
    pub dn_stderr: T,
    pub de_dt: T,
    pub de_stderr: T,
}

/// Shell quadrature of `dN/dt = int rate dk` and `dE/dt = int omega rate dk`.
pub fn conservation_residuals<T: Real>(rates: &CollisionRates<T>) -> ConservationResiduals<T> {
    let mut r = ConservationResiduals { dn_dt: T::zero(), dn_stderr: T::zero(), de_dt: T::zero(), de_stderr: T::zero() };
    for i in 0..rates.rate.len() {
        let v = rates.shell_volumes[i];
        r.dn_dt = r.dn_dt + v * rates.rate[i];
        r.de_dt = r.de_dt + v * rates.energy_rate[i];
        r.dn_stderr = r.dn_stderr + (v * rates.stderr[i]).powi(2);
        r.de_stderr = r.de_stderr + (v * rates.energy_stderr[i]).powi(2);
    }
    r.dn_stderr = r.dn_stderr.sqrt();
    r.de_stderr = r.de_stderr.sqrt();
    r
}

/// `n(|q|)` between shells: `1/n` linear in `omega`, which reproduces any
/// Rayleigh-Jeans spectrum exactly; linear `n` next to empty shells.
struct ShellInterp<'a, T> {
    spec: &'a IsotropicSpectrum<T>,
    edges: Vec<T>,
    omega: Vec<T>,
}

impl<'a, T: Real> ShellInterp<'a, T> {
    fn new<F: Fn(T) -> T>(spec: &'a IsotropicSpectrum<T>, omega: &F) -> Self {
        Self { edges: spec.edges(), omega: spec.k_shells.iter().map(|&k| omega(k)).collect(), spec }
    }

    /// Bin index of `|q|`, `None` outside the resolved annulus.
    fn bin(&self, q: T) -> Option<usize> {
        let e = &self.edges;
        if q < e[0] || q >= e[e.len() - 1] {
            return None;
        }
        Some(e.partition_point(|&x| x <= q) - 1)
    }

    fn value(&self, q: T, w: T, bin: usize) -> T {
        let k = &self.spec.k_shells;
        let n = &self.spec.n_values;
        let m = k.len();
        let a = if q < k[bin] { bin.saturating_sub(1) } else { bin }.min(m - 2);
        let b = a + 1;
        let t = (w - self.omega[a]) / (self.omega[b] - self.omega[a]);
        if n[a] == n[b] {
            return n[a];
        }
        if n[a] > T::zero() && n[b] > T::zero() {
            let inv = (T::one() - t) / n[a] + t / n[b];
            if inv > T::zero() {
                return T::one() / inv;
            }
            return n[bin];
        }
        ((T::one() - t) * n[a] + t * n[b]).max(T::zero())
    }
}

/// Uniform draw in the annulus `lo <= |q| < hi`.
fn draw_annulus<T: Real>(rng: &mut ChaCha8Rng, lo: T, hi: T, dim: usize) -> Vec3<T> {
    let d = dim as i32;
    let u: f64 = rng.gen();
    let r = (lo.powi(d) + T::lit(u) * (hi.powi(d) - lo.powi(d))).powf(T::one() / T::lit(dim as f64));
    let dir = draw_direction::<T>(rng, dim);
    [dir[0] * r, dir[1] * r, dir[2] * r]
}

fn draw_direction<T: Real>(rng: &mut ChaCha8Rng, dim: usize) -> Vec3<T> {
    match dim {
        1 => [if rng.gen::<bool>() { T::one() } else { -T::one() }, T::zero(), T::zero()],
        2 => {
            let th = T::lit(rng.gen_range(0.0..std::f64::consts::TAU));
            [th.cos(), th.sin(), T::zero()]
        }
        _ => {
            let z = T::lit(rng.gen_range(-1.0..1.0));
            let ph = T::lit(rng.gen_range(0.0..std::f64::consts::TAU));
            let s = (T::one() - z * z).max(T::zero()).sqrt();
            [s * ph.cos(), s * ph.sin(), z]
        }
    }
}

/// Magnitude drawn with density `~ r^{d-1}` on `[lo, hi)`.
fn draw_radius<T: Real>(rng: &mut ChaCha8Rng, lo: T, hi: T, dim: usize) -> T {
    let d = dim as i32;
    let u: f64 = rng.gen();
    (lo.powi(d) + T::lit(u) * (hi.powi(d) - lo.powi(d))).powf(T::one() / T::lit(dim as f64))
}

fn gauss<T: Real>(x: T, sigma: T) -> T {
    (-(x * x) / (T::lit(2.0) * sigma * sigma)).exp() / (sigma * T::TAU().sqrt())
}

#[inline]
fn mag<T: Real>(v: &Vec3<T>) -> T {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[derive(Default, Clone, Copy)]
struct Moments {
    n: f64,
    s: f64,
    s2: f64,
    e: f64,
    e2: f64,
}

impl Moments {
    fn push(&mut self, f: f64, w: f64) {
        self.n += 1.0;
        self.s += f;
        self.s2 += f * f;
        self.e += w * f;
        self.e2 += (w * f) * (w * f);
    }

    fn merge(mut self, o: Moments) -> Moments {
        self.n += o.n;
        self.s += o.s;
        self.s2 += o.s2;
        self.e += o.e;
        self.e2 += o.e2;
        self
    }

    fn mean_err(n: f64, s: f64, s2: f64) -> (f64, f64) {
        let m = s / n;
        let var = ((s2 / n - m * m) * n / (n - 1.0).max(1.0)).max(0.0);
        (m, (var / n).sqrt())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Process {
    FourWave,
    ThreeWave,
}

fn collide<T: Real, F: Fn(T) -> T + Sync>(spec: &IsotropicSpectrum<T>, omega: &F, cfg: &CollisionConfig<T>, process: Process) -> Result<CollisionRates<T>> {
    let m = spec.len();
    cfg.validate(m)?;
    let interp = ShellInterp::new(spec, omega);
    let edges = interp.edges.clone();
    let (lo, hi) = (edges[0], edges[m]);
    let dim = spec.dim;
    let annulus = ball_volume(hi, dim) - ball_volume(lo, dim);
    let per_shard = cfg.mc_samples.div_ceil(cfg.shards);
    let sigma = cfg.delta_width;

    let tasks: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..cfg.shards).map(move |s| (i, s))).collect();
    let partial: Vec<Moments> = tasks
        .par_iter()
        .map(|&(shell, shard)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((shell * cfg.shards + shard) as u64 + if process == Process::ThreeWave { 1 << 40 } else { 0 });
            let mut acc = Moments::default();
            let look = |q: &Vec3<T>| -> Option<(T, T, T, usize)> {
                let qm = mag(q);
                let b = interp.bin(qm)?;
                let w = omega(qm);
                Some((qm, w, interp.value(qm, w, b), b))
            };
            for _ in 0..per_shard {
                let km = draw_radius(&mut rng, edges[shell], edges[shell + 1], dim);
                let k = [km, T::zero(), T::zero()];
                let w = omega(km);
                let n = interp.value(km, w, shell);
                let f = match process {
                    Process::FourWave => {
                        let k1 = draw_annulus(&mut rng, lo, hi, dim);
                        let k2 = draw_annulus(&mut rng, lo, hi, dim);
                        let k3 = [k[0] + k1[0] - k2[0], k[1] + k1[1] - k2[1], k[2] + k1[2] - k2[2]];
                        match (look(&k1), look(&k2), look(&k3)) {
                            (Some((_, w1, n1, _)), Some((_, w2, n2, _)), Some((_, w3, n3, _))) => {
                                let t = n2 * n3 * (n + n1) - n * n1 * (n2 + n3);
                                annulus * annulus * t * gauss(w + w1 - w2 - w3, sigma)
                            }
                            _ => T::zero(),
                        }
                    }
                    Process::ThreeWave => {
                        let q = draw_annulus(&mut rng, lo, hi, dim);
                        let mut total = T::zero();
                        let p = look(&q);
                        // decay k -> q + (k - q)
                        let r = [k[0] - q[0], k[1] - q[1], k[2] - q[2]];
                        if let (Some((q1, w1, n1, b1)), Some((q2, w2, n2, b2))) = (p, look(&r)) {
                            let v = cfg.vertex_model.value([km, q1, q2], [shell, b1, b2], m);
                            total = total + v * (n1 * n2 - n * (n1 + n2)) * gauss(w - w1 - w2, sigma);
                        }
                        // absorption (k + q) -> k + q
                        let s = [k[0] + q[0], k[1] + q[1], k[2] + q[2]];
                        if let (Some((q2, w2, n2, b2)), Some((q1, w1, n1, b1))) = (p, look(&s)) {
                            let v = cfg.vertex_model.value([q1, km, q2], [b1, shell, b2], m);
                            total = total - T::lit(2.0) * v * (n * n2 - n1 * (n + n2)) * gauss(w1 - w - w2, sigma);
                        }
                        annulus * total
                    }
                };
                let f = (cfg.coupling * f).as_f64();
                acc.push(f, w.as_f64());
            }
            acc
        })
        .collect();

    let vols = spec.shell_volumes();
    let mut out = CollisionRates {
        k_shells: spec.k_shells.clone(),
        rate: Vec::with_capacity(m),
        stderr: Vec::with_capacity(m),
        energy_rate: Vec::with_capacity(m),
        energy_stderr: Vec::with_capacity(m),
        shell_volumes: vols,
        insufficient: Vec::new(),
    };
    for (i, chunk) in partial.chunks(cfg.shards).enumerate() {
        let mo = chunk.iter().fold(Moments::default(), |a, &b| a.merge(b));
        let (r, se) = Moments::mean_err(mo.n, mo.s, mo.s2);
        let (e, ee) = Moments::mean_err(mo.n, mo.e, mo.e2);
        if se > 0.2 * r.abs() && r != 0.0 {
            out.insufficient.push(i);
        }
        out.rate.push(T::lit(r));
        out.stderr.push(T::lit(se));
        out.energy_rate.push(T::lit(e));
        out.energy_stderr.push(T::lit(ee));
    }
    if !out.insufficient.is_empty() {
        log::warn!("collision rates: standard error above 20% on {} of {m} shells; raise mc_samples", out.insufficient.len());
    }
    Ok(out)
}

/// Four-wave collision integral
/// `C int n n1 n2 n3 (1/n + 1/n1 - 1/n2 - 1/n3) delta(k + k1 - k2 - k3) delta(omega) dk1 dk2 dk3`
/// with `C = cfg.coupling`, for `d` in 2..=3.
pub fn collision_4wave<T: Real, F: Fn(T) -> T + Sync>(spec: &IsotropicSpectrum<T>, omega: F, cfg: &CollisionConfig<T>) -> Result<CollisionRates<T>> {
    if spec.dim < 2 {
        return Err(Error::Config("four-wave collisions vanish identically in one dimension".into()));
    }
    collide(spec, &omega, cfg, Process::FourWave)
}

/// Three-wave collision integral, decay and absorption terms with
/// `f_{k12} = n1 n2 - n (n1 + n2)`; conserves energy but not particle number.
pub fn collision_3wave<T: Real, F: Fn(T) -> T + Sync>(spec: &IsotropicSpectrum<T>, omega: F, cfg: &CollisionConfig<T>) -> Result<CollisionRates<T>> {
    collide(spec, &omega, cfg, Process::ThreeWave)
}

/// Bracket `n n1 n2 n3 (1/n + 1/n1 - 1/n2 - 1/n3)` of one quadruple.
pub fn four_wave_bracket<T: Real>(n: T, n1: T, n2: T, n3: T) -> T {
    n2 * n3 * (n + n1) - n * n1 * (n2 + n3)
}

/// Ensemble of slow amplitudes evolved by the master equation.
#[derive(Debug, Clone)]
pub struct MasterEnsemble<T: Real> {
    pub members: Vec<SlowAmplitude<T>>,
    pub rng_seed: u64,
    pub time: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MasterOptions<T> {
    /// Members whose `max |a|` exceeds this are reported as diverged.
    pub max_amplitude: Option<T>,
}

impl<T: Real> Default for MasterOptions<T> {
    fn default() -> Self {
        Self { max_amplitude: None }
    }
}

impl<T: Real> MasterEnsemble<T> {
    /// Random-phase members with box-mode occupation `n(k)`, that is
    /// `<|c_k|^2> = n(k) dk^d` for Fourier coefficients `psi = sum_k c_k e^{ikx}`.
    /// Amplitudes are fixed and phases uniform.
    pub fn random_phase<F: Fn(&Vec3<T>) -> T + Sync>(
        psg: PhaseSpaceGrid<T>,
        kernel: GaborKernel<T>,
        occupation: F,
        members: usize,
        seed: u64,
    ) -> Result<Self> {
        if members == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let (grid, _) = psg.field_grid()?;
        kernel.validate_for(&psg)?;
        let sp = Spectral::new(grid);
        let cell = grid.dk().powi(grid.dim as i32);
        let amp: Vec<T> = (0..grid.len())
            .map(|f| {
                let kv = grid.wavevector(f);
                let mut k = [T::zero(); 3];
                k[..grid.dim].copy_from_slice(&kv);
                (occupation(&k) * cell).max(T::zero()).sqrt()
            })
            .collect();
        let out: Result<Vec<SlowAmplitude<T>>> = (0..members)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let mut c: Vec<Cx<T>> = amp
                    .iter()
                    .map(|&a| cis(T::lit(rng.gen_range(0.0..std::f64::consts::TAU))) * a)
                    .collect();
                sp.inverse(&mut c);
                let scale = T::from_usize_lossy(grid.len());
                c.iter_mut().for_each(|z| *z = *z * scale);
                slow_transform(&c, &kernel, &psg)
            })
            .collect();
        Ok(Self { members: out?, rng_seed: seed, time: T::zero() })
    }

    /// Ensemble average `<|a|^2>` on the phase-space grid.
    pub fn mean_intensity(&self) -> Vec<T> {
        let count = T::from_usize_lossy(self.members.len());
        let mut acc = vec![T::zero(); self.members[0].values.len()];
        for m in &self.members {
            for (s, z) in acc.iter_mut().zip(&m.values) {
                *s = *s + z.norm_sqr();
            }
        }
        acc.iter().map(|&s| s / count).collect()
    }

    /// Box-mode occupation `<|c_k|^2> / dk^d` for a single-node ensemble with
    /// `eps* = 0`, in ascending k order.
    pub fn homogeneous_occupation(&self) -> Result<Vec<T>> {
        let first = &self.members[0];
        if first.psg.x_len() != 1 || first.kernel.eps_star != T::zero() {
            return Err(Error::Config("homogeneous occupation needs one x node and eps* = 0".into()));
        }
        let (grid, _) = first.psg.field_grid()?;
        let cell = grid.dk().powi(grid.dim as i32);
        Ok(self.mean_intensity().iter().map(|&v| v * cell).collect())
    }

    pub fn total_intensity(&self) -> T {
        self.members.iter().map(|m| m.values.iter().map(|z| z.norm_sqr()).sum::<T>()).sum()
    }
}

/// Free transport `a(x, k) <- a(x - 2k tau, k) e^{-i k^2 tau}`.
fn free_step<T: Real>(a: &mut SlowAmplitude<T>, tau: T, planner: &mut FftPlanner<T>) {
    let psg = a.psg;
    let nk = psg.k_len();
    for (i, z) in a.values.iter_mut().enumerate() {
        let k = psg.k_node(i % nk);
        *z = *z * cis(-(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) * tau);
    }
    let n = psg.x.count;
    if n == 1 {
        return;
    }
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let extent = psg.x.step * T::from_usize_lossy(n);
    let q: Vec<T> = (0..n)
        .map(|j| {
            let s = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            T::TAU() * T::lit(s) / extent
        })
        .collect();
    let stride_of = |a: usize| n.pow((psg.dim - 1 - a) as u32);
    let mut line = vec![Cx::default(); n];
    for ki in 0..nk {
        let k = psg.k_node(ki);
        for axis in 0..psg.dim {
            let shift = T::lit(2.0) * k[axis] * tau;
            if shift == T::zero() {
                continue;
            }
            let st = stride_of(axis);
            for start in 0..psg.x_len() {
                if (start / st) % n != 0 {
                    continue;
                }
                for (j, l) in line.iter_mut().enumerate() {
                    *l = a.values[psg.index(start + j * st, ki)];
                }
                fwd.process(&mut line);
                for (j, l) in line.iter_mut().enumerate() {
                    *l = *l * cis(-q[j] * shift) / T::from_usize_lossy(n);
                }
                inv.process(&mut line);
                for (j, l) in line.iter().enumerate() {
                    a.values[psg.index(start + j * st, ki)] = *l;
                }
            }
        }
    }
}

/// Potential step: local fields multiplied by `exp(-i (U + grad U . y) tau)`.
fn potential_step<T: Real, M: Medium<T> + ?Sized>(a: &mut SlowAmplitude<T>, tau: T, medium: &M, sp: &Spectral<T>, table: &[(usize, bool)]) {
    let psg = a.psg;
    let grid = *sp.grid();
    let nk = psg.k_len();
    for xi in 0..psg.x_len() {
        let x0 = psg.x_node(xi);
        let s = medium.sample(&x0);
        if s.potential == T::zero() && s.grad_potential.iter().all(|&g| g == T::zero()) {
            continue;
        }
        let mut buf = vec![Cx::default(); grid.len()];
        for (m, &(b, odd)) in table.iter().enumerate() {
            let z = a.values[psg.index(xi, m)];
            buf[b] = if odd { -z } else { z };
        }
        sp.inverse(&mut buf);
        for (f, z) in buf.iter_mut().enumerate() {
            let x = grid.position(f);
            let mut ph = s.potential;
            for ax in 0..grid.dim {
                ph = ph + s.grad_potential[ax] * wrapped(x[ax] - x0[ax], grid.extent);
            }
            *z = *z * cis(-ph * tau);
        }
        sp.forward(&mut buf);
        for (m, &(b, odd)) in table.iter().enumerate() {
            let z = buf[b];
            a.values[psg.index(xi, m)] = if odd { -z } else { z };
        }
    }
    debug_assert_eq!(nk, table.len());
}

/// Cubic step: `psi <- psi e^{-i |psi|^2 dt}` on the reconstructed field,
/// mapped back as an increment of the amplitudes.
fn cubic_step<T: Real>(a: &mut SlowAmplitude<T>, dt: T) -> Result<()> {
    let g = inverse_slow(a)?;
    let dg: Vec<Cx<T>> = g.iter().map(|z| z * (cis(-z.norm_sqr() * dt) - cx(T::one(), T::zero()))).collect();
    let inc = slow_transform(&dg, &a.kernel, &a.psg)?;
    for (v, d) in a.values.iter_mut().zip(&inc.values) {
        *v = *v + d;
    }
    Ok(())
}

/// One `K(dt/2) P(dt/2) N(dt) P(dt/2) K(dt/2)` step; the cubic stage is
/// skipped when `cubic` is false.
pub(crate) fn strang_step<T: Real, M: Medium<T> + ?Sized>(
    a: &mut SlowAmplitude<T>,
    medium: &M,
    dt: T,
    sp: &Spectral<T>,
    table: &[(usize, bool)],
    planner: &mut FftPlanner<T>,
    cubic: bool,
) -> Result<()> {
    let half = dt / T::lit(2.0);
    free_step(a, half, planner);
    potential_step(a, half, medium, sp, table);
    if cubic {
        cubic_step(a, dt)?;
    }
    potential_step(a, half, medium, sp, table);
    free_step(a, half, planner);
    Ok(())
}

/// Advances every member by `steps` Strang steps of
///
/// ```text
/// d_t a = -2k . grad_x a + grad U . grad_k a - i (k^2 + U - x . grad U) a - i (cubic)
/// ```
///
/// The cubic term is the windowed transform of `|psi|^2 psi` for the field
/// reconstructed from `a`, which is the kernel-convolved product of amplitudes.
pub fn evolve_master<T: Real, M: Medium<T> + ?Sized>(
    ens: &MasterEnsemble<T>,
    medium: &M,
    dt: T,
    steps: usize,
    opts: MasterOptions<T>,
) -> Result<MasterEnsemble<T>> {
    let first = ens.members.first().ok_or(Error::EmptyEnsemble)?;
    let psg = first.psg;
    let (grid, _) = psg.field_grid()?;
    let sp = Spectral::new(grid);
    let table = bin_table(&psg)?;
    let members: Result<Vec<SlowAmplitude<T>>> = ens
        .members
        .par_iter()
        .enumerate()
        .map(|(idx, m0)| {
            let mut a = m0.clone();
            let mut planner = FftPlanner::new();
            for step in 0..steps {
                strang_step(&mut a, medium, dt, &sp, &table, &mut planner, true)?;
                let too_big = opts
                    .max_amplitude
                    .is_some_and(|lim| a.values.iter().any(|z| z.norm() > lim));
                if !all_finite(&a.values) || too_big {
                    return Err(Error::MemberDiverged { member: idx, step });
                }
                a.time = a.time + dt;
            }
            Ok(a)
        })
        .collect();
    Ok(MasterEnsemble { members: members?, rng_seed: ens.rng_seed, time: ens.time + dt * T::from_usize_lossy(steps) })
}

/// `<|z|^6> / (6 <|z|^2>^3)`: one for circular complex Gaussian samples.
pub fn sixth_moment_ratio<T: Real>(samples: &[Cx<T>]) -> T {
    let n = T::from_usize_lossy(samples.len());
    let m2 = samples.iter().map(|z| z.norm_sqr()).sum::<T>() / n;
    let m6 = samples.iter().map(|z| z.norm_sqr().powi(3)).sum::<T>() / n;
    m6 / (T::lit(6.0) * m2.powi(3))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticConfig<T> {
    pub collision: CollisionConfig<T>,
    /// Dimension of the isotropic collision integral at each x node.
    pub collision_dim: usize,
    /// RK4 substeps per backward ray trace.
    pub ray_substeps: usize,
}

impl<T: Real> KineticConfig<T> {
    pub fn new(collision: CollisionConfig<T>) -> Self {
        Self { collision, collision_dim: 3, ray_substeps: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KineticRun<T: Real> {
    pub spectrum: PhaseSpaceSpectrum<T>,
    /// Negative values clamped to zero, per step.
    pub clamp_counts: Vec<usize>,
    /// Steps whose clamp fraction exceeded 1%.
    pub stability_warnings: Vec<usize>,
    /// Regime used at each x node in the last step.
    pub regimes: Vec<Option<Regime>>,
    pub total: Vec<T>,
}

fn clamp_negative<T: Real>(values: &mut [T]) -> usize {
    let mut count = 0;
    for v in values.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
            count += 1;
        }
    }
    count
}

fn bicubic<T: Real>(psg: &PhaseSpaceGrid<T>, values: &[T], x: T, k: T) -> T {
    let fx = (x - psg.x.start) / psg.x.step;
    let fk = (k - psg.k.start) / psg.k.step;
    let (nx, nk) = (psg.x.count, psg.k.count);
    let last_x = T::from_usize_lossy(nx - 1);
    let last_k = T::from_usize_lossy(nk - 1);
    // feet outside the box take the nearest boundary value
    let fx = fx.max(T::zero()).min(last_x);
    let fk = fk.max(T::zero()).min(last_k);
    let (ix, ik) = (fx.floor(), fk.floor());
    let (wx, _) = catmull_rom(fx - ix);
    let (wk, _) = catmull_rom(fk - ik);
    let (ix, ik) = (ix.to_isize().unwrap_or(0), ik.to_isize().unwrap_or(0));
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut acc = T::zero();
    for (a, &wa) in wx.iter().enumerate() {
        let xi = clamp(ix - 1 + a as isize, nx);
        for (b, &wb) in wk.iter().enumerate() {
            let ki = clamp(ik - 1 + b as isize, nk);
            acc = acc + wa * wb * values[psg.index(xi, ki)];
        }
    }
    acc
}

/// Ray transport plus local collisions of `n(x, k)` on a one-dimensional
/// phase space with a k lattice symmetric about zero.
///
/// Each step traces rays backwards from every node, interpolates `n` at the
/// foot point (clamped into the lattice, so inflow carries the boundary
/// value), then adds `dt` times the local collision rate. At each x node
/// `n(|k|)` is folded into an isotropic spectrum of dimension
/// `cfg.collision_dim`; the process follows [`regime_classify`] at the
/// spectral peak.
pub fn kinetic_evolve<T: Real, M: Medium<T> + ?Sized>(
    spec: &PhaseSpaceSpectrum<T>,
    medium: &M,
    model: DispersionModel,
    cfg: &KineticConfig<T>,
    dt: T,
    steps: usize,
) -> Result<KineticRun<T>> {
    let psg = spec.psg;
    if psg.dim != 1 {
        return Err(Error::Config("kinetic transport supports a one-dimensional phase space".into()));
    }
    if spec.values.iter().any(|&v| !(v >= T::zero())) {
        return Err(Error::Config("initial spectrum must be nonnegative".into()));
    }
    let nk = psg.k.count;
    let mid = (psg.k.start + psg.k.end()).abs();
    if mid > T::roundoff() * psg.k.step * T::from_usize_lossy(nk) {
        return Err(Error::Config("kinetic k lattice must be symmetric about zero".into()));
    }
    let sub = cfg.ray_substeps.max(1);
    let h = -dt / T::from_usize_lossy(sub);
    let feet: Vec<(T, T)> = (0..psg.len())
        .into_par_iter()
        .map(|i| {
            let mut x = psg.x_node(i / nk);
            let mut k = psg.k_node(i % nk);
            for _ in 0..sub {
                let (xn, kn) = rk4_step(&x, &k, h, medium, model);
                x = xn;
                k = kn;
            }
            (x[0], k[0])
        })
        .collect();

    let collide_on = cfg.collision.coupling != T::zero();
    let mut values = spec.values.clone();
    let mut run = KineticRun {
        spectrum: spec.clone(),
        clamp_counts: Vec::with_capacity(steps),
        stability_warnings: Vec::new(),
        regimes: vec![None; psg.x.count],
        total: vec![spec.total()],
    };
    for step in 0..steps {
        let mut next: Vec<T> = feet.par_iter().map(|&(x, k)| bicubic(&psg, &values, x, k)).collect();
        let mut clamped = clamp_negative(&mut next);
        if collide_on {
            for xi in 0..psg.x.count {
                let x0 = psg.x_node(xi);
                let row = &next[psg.index(xi, 0)..psg.index(xi, 0) + nk];
                if row.iter().all(|&v| v == T::zero()) {
                    continue;
                }
                let mut pos: Vec<usize> = (0..nk).filter(|&j| psg.k.node(j) > T::zero()).collect();
                // innermost node whose bin would reach k = 0 does not collide
                if pos.len() > 2 && psg.k.node(pos[0]) * T::lit(2.0) <= psg.k.node(pos[1]) - psg.k.node(pos[0]) + T::roundoff() {
                    pos.remove(0);
                }
                let shells: Vec<T> = pos.iter().map(|&j| psg.k.node(j)).collect();
                let folded: Vec<T> = pos.iter().map(|&j| (row[j] + row[nk - 1 - j]) / T::lit(2.0)).collect();
                let iso = IsotropicSpectrum::new(shells, folded, x0, cfg.collision_dim)?;
                let sample = medium.sample(&x0);
                let omega = |k: T| frequency_iso(k, &sample, model.variant);
                let peak = (0..iso.len()).fold(0, |b, i| if iso.n_values[i] > iso.n_values[b] { i } else { b });
                let regime = regime_classify(iso.k_shells[peak], sample.rho, iso.n_values[peak], cfg.collision_dim);
                run.regimes[xi] = Some(regime);
                let rates = match regime {
                    Regime::FourWave if cfg.collision_dim >= 2 => collision_4wave(&iso, omega, &cfg.collision)?,
                    Regime::FourWave => continue,
                    Regime::ThreeWave => collision_3wave(&iso, omega, &cfg.collision)?,
                };
                for (s, &j) in pos.iter().enumerate() {
                    let d = dt * rates.rate[s];
                    let a = psg.index(xi, j);
                    let b = psg.index(xi, nk - 1 - j);
                    next[a] = next[a] + d;
                    next[b] = next[b] + d;
                }
            }
        }
        clamped += clamp_negative(&mut next);
        if clamped * 100 > next.len() {
            log::warn!("kinetic step {step}: clamped {clamped} of {} nodes", next.len());
            run.stability_warnings.push(step);
        }
        run.clamp_counts.push(clamped);
        values = next;
        run.spectrum.values = values.clone();
        run.total.push(run.spectrum.total());
    }
    run.spectrum.time = spec.time + dt * T::from_usize_lossy(steps);
    Ok(run)
}
