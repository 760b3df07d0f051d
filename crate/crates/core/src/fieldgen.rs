//! Forward generation of flow-field solutions: Matérn Gaussian random
//! fields via FFT, divergence-free curl construction, and spectrum-
//! constrained random-phase mode synthesis.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::Field;
use crate::grid::Grid;
use crate::rng;
use crate::spectrum::SpectrumModel;

/// Mean function of a Gaussian random field.
#[derive(Debug, Clone)]
pub enum MeanFn {
    Const(f64),
    Field(Field),
}

/// Matérn covariance parameters.
///
/// The kernel is realized through its power spectral density
/// `S(κ) ∝ σ² (2ν/λ² + |κ|²)^{−(ν + d/2)}` on the torus, renormalized so the
/// discrete field variance equals `sigma2`; the Bessel-function form is never
/// evaluated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaternParams {
    pub lambda: f64,
    pub nu: f64,
    pub sigma2: f64,
    #[serde(skip)]
    pub mean: Option<Box<MeanFnSerde>>,
}

/// Wrapper so `MaternParams` stays serializable; constant means only.
#[derive(Debug, Clone)]
pub struct MeanFnSerde(pub MeanFn);

impl MaternParams {
    pub fn new(lambda: f64, nu: f64, sigma2: f64) -> MaternParams {
        MaternParams { lambda, nu, sigma2, mean: None }
    }

    pub fn with_mean(mut self, mean: MeanFn) -> MaternParams {
        self.mean = Some(Box::new(MeanFnSerde(mean)));
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.nu > 0.0) || !(self.sigma2 >= 0.0) {
            return Err(Error::Usage(format!(
                "invalid Matérn parameters: lambda={}, nu={}, sigma2={}",
                self.lambda, self.nu, self.sigma2
            )));
        }
        Ok(())
    }
}

/// Sample a scalar Matérn Gaussian random field on a periodic grid.
///
/// Spectral sampling: the FFT of white noise is shaped by `√S(κ)` and
/// transformed back; cost O(N log N). Deterministic for a given seed.
pub fn sample_grf(grid: &Grid, params: &MaternParams, seed: u64) -> Result<Field> {
    if !grid.all_periodic() {
        return Err(Error::Usage("GRF sampling requires an all-periodic grid".into()));
    }
    params.validate()?;
    let dim = grid.dim();
    let npts = grid.points();
    let shape: Vec<usize> = grid.shape().to_vec();

    let mut out = Field::zeros(grid, 1);
    match params.mean.as_deref() {
        None => {}
        Some(MeanFnSerde(MeanFn::Const(c))) => out.data_mut().fill(*c),
        Some(MeanFnSerde(MeanFn::Field(mu))) => {
            if !mu.same_layout(&out) {
                return Err(Error::Shape("mean field does not match grid".into()));
            }
            out.data_mut().copy_from_slice(mu.data());
        }
    }
    if params.sigma2 == 0.0 {
        return Ok(out);
    }

    // unnormalized Matérn spectral density on the wavenumber lattice
    let kappa0_sq = 2.0 * params.nu / (params.lambda * params.lambda);
    let exponent = -(params.nu + dim as f64 / 2.0);
    let dk: Vec<f64> = (0..dim).map(|a| std::f64::consts::TAU / grid.length(a)).collect();
    let mut density = vec![0.0f64; npts];
    let mut idx = [0usize; 3];
    let mut total = 0.0;
    for (flat, s) in density.iter_mut().enumerate() {
        grid.unflatten(flat, &mut idx);
        let mut k2 = 0.0;
        for a in 0..dim {
            let m = fft::mode(grid.n(a), idx[a]) as f64 * dk[a];
            k2 += m * m;
        }
        *s = (kappa0_sq + k2).powf(exponent);
        total += *s;
    }
    // discrete renormalization: field variance = (1/N) Σ S = sigma2
    let scale = params.sigma2 * npts as f64 / total;

    let mut rng = rng::stream(seed, &[]);
    let mut buf: Vec<Complex<f64>> = (0..npts)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    fft::forward(&shape, &mut buf);
    for (v, s) in buf.iter_mut().zip(&density) {
        *v *= (scale * s).sqrt();
    }
    fft::inverse(&shape, &mut buf);
    for (o, v) in out.data_mut().iter_mut().zip(&buf) {
        *o += v.re;
    }
    Ok(out)
}

/// Divergence-free velocity field from scalar potentials, using the same
/// stencils as [`crate::ops::divergence`] so the discrete divergence
/// annihilates exactly (not just to truncation order).
///
/// 2D: one potential, `u = (∂φ/∂y, −∂φ/∂x)`. 3D: three potentials,
/// `u = ∇×(φ_x, φ_y, φ_z)`. With `staggered`, potentials are read at nodes
/// (2D) or cell edges (3D) and the velocity lands on MAC faces.
pub fn curl_potential(potentials: &[Field], staggered: bool) -> Result<Field> {
    if potentials.is_empty() {
        return Err(Error::Shape("curl needs at least one potential".into()));
    }
    let grid = potentials[0].grid().clone();
    if !grid.all_periodic() {
        return Err(Error::Usage("curl construction requires an all-periodic grid".into()));
    }
    let dim = grid.dim();
    let want = if dim == 2 { 1 } else { 3 };
    if potentials.len() != want {
        return Err(Error::Shape(format!(
            "{dim}D curl needs {want} potential(s), got {}",
            potentials.len()
        )));
    }
    for p in potentials {
        if p.grid() != &grid || !p.is_scalar() {
            return Err(Error::Shape("potentials must be scalar fields on one grid".into()));
        }
    }

    let mut out = Field::zeros(&grid, dim);
    let mut idx = [0usize; 3];
    let wrap_up = |idx: &[usize; 3], a: usize| -> usize {
        let mut j = *idx;
        j[a] = (j[a] + 1) % grid.n(a);
        grid.flat(&j[..dim])
    };
    let wrap_dn = |idx: &[usize; 3], a: usize| -> usize {
        let mut j = *idx;
        j[a] = (j[a] + grid.n(a) - 1) % grid.n(a);
        grid.flat(&j[..dim])
    };
    let h: Vec<f64> = (0..dim).map(|a| grid.spacing(a)).collect();

    for flat in 0..grid.points() {
        grid.unflatten(flat, &mut idx);
        if dim == 2 {
            let phi = potentials[0].component(0);
            let (ux, uy) = if staggered {
                (
                    (phi[wrap_up(&idx, 1)] - phi[flat]) / h[1],
                    -(phi[wrap_up(&idx, 0)] - phi[flat]) / h[0],
                )
            } else {
                (
                    (phi[wrap_up(&idx, 1)] - phi[wrap_dn(&idx, 1)]) / (2.0 * h[1]),
                    -(phi[wrap_up(&idx, 0)] - phi[wrap_dn(&idx, 0)]) / (2.0 * h[0]),
                )
            };
            out.component_mut(0)[flat] = ux;
            out.component_mut(1)[flat] = uy;
        } else {
            // u_c = ∂φ_b/∂a − ∂φ_a/∂b for (c, a, b) cyclic
            for c in 0..3 {
                let a = (c + 1) % 3;
                let b = (c + 2) % 3;
                let pa = potentials[a].component(0);
                let pb = potentials[b].component(0);
                let v = if staggered {
                    (pb[wrap_up(&idx, a)] - pb[flat]) / h[a]
                        - (pa[wrap_up(&idx, b)] - pa[flat]) / h[b]
                } else {
                    (pb[wrap_up(&idx, a)] - pb[wrap_dn(&idx, a)]) / (2.0 * h[a])
                        - (pa[wrap_up(&idx, b)] - pa[wrap_dn(&idx, b)]) / (2.0 * h[b])
                };
                out.component_mut(c)[flat] = v;
            }
        }
    }
    Ok(out)
}

/// One synthesized mode: magnitude, angles, phase, unit wave direction and
/// unit amplitude direction (orthogonal to the wave direction).
#[derive(Debug, Clone)]
pub struct Mode {
    pub magnitude: f64,
    pub theta: f64,
    pub phi: f64,
    pub psi: f64,
    pub khat: [f64; 3],
    pub sigma_hat: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct ModeSet {
    pub modes: Vec<Mode>,
    pub dkappa: f64,
}

/// Options for the mode-sum generators.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    /// Low end of the magnitude ladder.
    pub kappa_min: f64,
    /// High end of the magnitude ladder; defaults to the grid Nyquist radius.
    pub kappa_max: Option<f64>,
    /// Sample wave directions uniformly on the sphere instead of the
    /// paper-style θ, φ ~ U(0, 2π).
    pub sphere_uniform: bool,
    /// Evaluate vector components at MAC face positions instead of nodes.
    pub staggered: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { kappa_min: 1.0, kappa_max: None, sphere_uniform: false, staggered: false }
    }
}

fn nyquist_radius(grid: &Grid) -> f64 {
    (0..grid.dim())
        .map(|a| std::f64::consts::PI * grid.n(a) as f64 / grid.length(a))
        .fold(f64::INFINITY, f64::min)
}

/// Build the random mode set: magnitudes on a uniform ladder of `m_count`
/// midpoints between `kappa_min` and `kappa_max`, angles and phases i.i.d.
/// uniform on [0, 2π), one stream per (seed, mode).
pub fn build_mode_set(
    grid: &Grid,
    m_count: usize,
    seed: u64,
    opts: &SynthOptions,
) -> Result<ModeSet> {
    if m_count == 0 {
        return Err(Error::Usage("mode count must be at least 1".into()));
    }
    let dim = grid.dim();
    let kmax = opts.kappa_max.unwrap_or_else(|| nyquist_radius(grid));
    if !(kmax > opts.kappa_min) {
        return Err(Error::Usage("kappa_max must exceed kappa_min".into()));
    }
    let dkappa = (kmax - opts.kappa_min) / m_count as f64;
    let tau = std::f64::consts::TAU;
    let mut modes = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let mut rng = rng::stream(seed, &[m as u64]);
        let magnitude = opts.kappa_min + (m as f64 + 0.5) * dkappa;
        let (theta, phi, psi, alpha): (f64, f64, f64, f64);
        if dim == 2 {
            theta = std::f64::consts::FRAC_PI_2;
            phi = rng.gen::<f64>() * tau;
            psi = rng.gen::<f64>() * tau;
            alpha = 0.0;
        } else {
            theta = if opts.sphere_uniform {
                (1.0 - 2.0 * rng.gen::<f64>()).acos()
            } else {
                rng.gen::<f64>() * tau
            };
            phi = rng.gen::<f64>() * tau;
            psi = rng.gen::<f64>() * tau;
            alpha = rng.gen::<f64>() * tau;
        }
        let khat: [f64; 3];
        let sigma_hat: [f64; 3];
        if dim == 2 {
            khat = [phi.cos(), phi.sin(), 0.0];
            // unique in-plane divergence-free direction: khat rotated 90°
            sigma_hat = [-phi.sin(), phi.cos(), 0.0];
        } else {
            khat = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
            // orthonormal frame perpendicular to khat
            let e1 = [-phi.sin(), phi.cos(), 0.0];
            let e2 = [
                khat[1] * e1[2] - khat[2] * e1[1],
                khat[2] * e1[0] - khat[0] * e1[2],
                khat[0] * e1[1] - khat[1] * e1[0],
            ];
            sigma_hat = [
                alpha.cos() * e1[0] + alpha.sin() * e2[0],
                alpha.cos() * e1[1] + alpha.sin() * e2[1],
                alpha.cos() * e1[2] + alpha.sin() * e2[2],
            ];
        }
        modes.push(Mode { magnitude, theta, phi, psi, khat, sigma_hat });
    }
    Ok(ModeSet { modes, dkappa })
}

fn mode_amplitudes(spectrum: &SpectrumModel, set: &ModeSet, half: bool) -> Result<Vec<f64>> {
    spectrum.validate()?;
    set.modes
        .iter()
        .map(|m| {
            let e = spectrum.eval(m.magnitude);
            if e < 0.0 {
                return Err(Error::Numerical(format!(
                    "spectrum negative at |κ| = {}",
                    m.magnitude
                )));
            }
            let factor = if half { 0.5 } else { 1.0 };
            Ok(2.0 * (factor * e * set.dkappa).sqrt())
        })
        .collect()
}

/// Divergence-free random-phase mode sum
/// `u(x) = 2 Σ_m √(E(|κ_m|) Δκ) cos(κ_m·x + ψ_m) σ̂_m`; cost O(M·N).
pub fn synth_vector_field(
    grid: &Grid,
    spectrum: &SpectrumModel,
    m_count: usize,
    seed: u64,
    opts: &SynthOptions,
) -> Result<Field> {
    let set = build_mode_set(grid, m_count, seed, opts)?;
    let amps = mode_amplitudes(spectrum, &set, false)?;
    let dim = grid.dim();
    let mut out = Field::zeros(grid, dim);
    let h: Vec<f64> = (0..dim).map(|a| grid.spacing(a)).collect();
    let mut idx = [0usize; 3];
    for c in 0..dim {
        // MAC staggering: component c sits at nodes along its own axis and
        // at cell centers along the others
        let mut offset = [0.0f64; 3];
        if opts.staggered {
            for a in 0..dim {
                if a != c {
                    offset[a] = 0.5 * h[a];
                }
            }
        }
        let comp = out.component_mut(c);
        for (mode, amp) in set.modes.iter().zip(&amps) {
            if *amp == 0.0 || mode.sigma_hat[c] == 0.0 {
                continue;
            }
            let k = [
                mode.magnitude * mode.khat[0],
                mode.magnitude * mode.khat[1],
                mode.magnitude * mode.khat[2],
            ];
            let coeff = amp * mode.sigma_hat[c];
            for (flat, v) in comp.iter_mut().enumerate() {
                grid.unflatten(flat, &mut idx);
                let mut phase = mode.psi;
                for a in 0..dim {
                    phase += k[a] * (idx[a] as f64 * h[a] + offset[a]);
                }
                *v += coeff * phase.cos();
            }
        }
    }
    Ok(out)
}

/// Scalar random-phase mode sum
/// `u(x) = 2 Σ_m √(½ E_φ(|κ_m|) Δκ) cos(κ_m·x + ψ_m)`.
pub fn synth_scalar_field(
    grid: &Grid,
    spectrum: &SpectrumModel,
    m_count: usize,
    seed: u64,
    opts: &SynthOptions,
) -> Result<Field> {
    let set = build_mode_set(grid, m_count, seed, opts)?;
    let amps = mode_amplitudes(spectrum, &set, true)?;
    let dim = grid.dim();
    let mut out = Field::zeros(grid, 1);
    let h: Vec<f64> = (0..dim).map(|a| grid.spacing(a)).collect();
    let mut idx = [0usize; 3];
    let comp = out.component_mut(0);
    for (mode, amp) in set.modes.iter().zip(&amps) {
        if *amp == 0.0 {
            continue;
        }
        let k = [
            mode.magnitude * mode.khat[0],
            mode.magnitude * mode.khat[1],
            mode.magnitude * mode.khat[2],
        ];
        for (flat, v) in comp.iter_mut().enumerate() {
            grid.unflatten(flat, &mut idx);
            let mut phase = mode.psi;
            for a in 0..dim {
                phase += k[a] * idx[a] as f64 * h[a];
            }
            *v += amp * phase.cos();
        }
    }
    Ok(out)
}
