//! Target energy spectra and radial spectrum estimation.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::Field;

/// Energy convention: vector (kinetic) spectra carry the 1/2 factor, scalar
/// spectra do not, so that for scalars `Σ E(κ) Δκ` equals the field variance.
/// This constant is the single place the convention lives.
pub const KINETIC_HALF: f64 = 0.5;

/// Target energy spectrum E(|κ|).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SpectrumModel {
    /// `E = amplitude · |κ|^exponent`, with the value held fixed below
    /// `kappa_low` (inertial-range lower limit).
    PowerLaw { amplitude: f64, exponent: f64, kappa_low: f64 },
    VonKarmanPao(VkpParams),
    /// Piecewise-linear table of (|κ|, E) pairs, clamped outside its range.
    Tabulated(Vec<(f64, f64)>),
}

/// Von Kármán–Pao parameters: `E(κ) = α (u'²/κ_e) (κ/κ_e)^4 /
/// [1 + (κ/κ_e)²]^{17/6} · exp(−2 (κ/κ_η)²)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VkpParams {
    pub alpha: f64,
    pub u_prime: f64,
    pub kappa_e: f64,
    pub kappa_eta: f64,
}

/// Validated von Kármán–Pao spectrum.
pub fn vkp_spectrum(params: VkpParams) -> Result<SpectrumModel> {
    if !(params.alpha > 0.0 && params.u_prime > 0.0 && params.kappa_e > 0.0 && params.kappa_eta > 0.0)
    {
        return Err(Error::Usage("von Kármán–Pao parameters must be positive".into()));
    }
    Ok(SpectrumModel::VonKarmanPao(params))
}

impl SpectrumModel {
    /// Inertial-range power law `E_p = a·|κ|^e` held fixed below `kappa_low`.
    pub fn power_law(amplitude: f64, exponent: f64, kappa_low: f64) -> SpectrumModel {
        SpectrumModel::PowerLaw { amplitude, exponent, kappa_low }
    }

    pub fn eval(&self, kappa: f64) -> f64 {
        match self {
            SpectrumModel::PowerLaw { amplitude, exponent, kappa_low } => {
                let k = kappa.max(*kappa_low);
                if k <= 0.0 {
                    return 0.0;
                }
                amplitude * k.powf(*exponent)
            }
            SpectrumModel::VonKarmanPao(p) => {
                if kappa <= 0.0 {
                    return 0.0;
                }
                let kr = kappa / p.kappa_e;
                p.alpha * (p.u_prime * p.u_prime / p.kappa_e) * kr.powi(4)
                    / (1.0 + kr * kr).powf(17.0 / 6.0)
                    * (-2.0 * (kappa / p.kappa_eta).powi(2)).exp()
            }
            SpectrumModel::Tabulated(table) => {
                if table.is_empty() {
                    return 0.0;
                }
                if kappa <= table[0].0 {
                    return table[0].1;
                }
                if kappa >= table[table.len() - 1].0 {
                    return table[table.len() - 1].1;
                }
                let i = table.partition_point(|(k, _)| *k <= kappa) - 1;
                let (k0, e0) = table[i];
                let (k1, e1) = table[i + 1];
                let t = (kappa - k0) / (k1 - k0);
                e0 + t * (e1 - e0)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let SpectrumModel::Tabulated(table) = self {
            if table.iter().any(|(_, e)| *e < 0.0) {
                return Err(Error::Usage("tabulated spectrum has negative entries".into()));
            }
        }
        Ok(())
    }
}

/// Radial shell spectrum of a periodic field.
///
/// FFT energy `|F|²/N²` is accumulated into unit-width shells centered on
/// integer radii `|κ| = 1, 2, ...` up to the Nyquist radius; vector fields
/// sum component energies with the kinetic [`KINETIC_HALF`] factor.
pub fn estimate_spectrum(f: &Field) -> Result<Vec<(f64, f64)>> {
    let grid = f.grid();
    if !grid.all_periodic() {
        return Err(Error::Usage("spectrum estimation requires a periodic grid".into()));
    }
    let dim = grid.dim();
    let npts = grid.points() as f64;
    let shape: Vec<usize> = grid.shape().to_vec();
    // physical wavenumber step per axis (2π/L); integer lattice when L = 2π
    let dk: Vec<f64> = (0..dim).map(|a| std::f64::consts::TAU / grid.length(a)).collect();
    let kmax = (0..dim)
        .map(|a| dk[a] * (grid.n(a) / 2) as f64)
        .fold(f64::INFINITY, f64::min);
    let nshells = kmax.floor() as usize;
    let mut shells = vec![0.0f64; nshells + 1];

    let mut buf: Vec<Complex<f64>> = Vec::new();
    for c in 0..f.components() {
        buf.clear();
        buf.extend(f.component(c).iter().map(|&v| Complex::new(v, 0.0)));
        fft::forward(&shape, &mut buf);
        let mut idx = [0usize; 3];
        for (flat, v) in buf.iter().enumerate() {
            grid.unflatten(flat, &mut idx);
            let mut k2 = 0.0;
            for a in 0..dim {
                let m = fft::mode(grid.n(a), idx[a]) as f64 * dk[a];
                k2 += m * m;
            }
            let shell = k2.sqrt().round() as usize;
            if shell >= 1 && shell <= nshells {
                shells[shell] += v.norm_sqr() / (npts * npts);
            }
        }
    }
    let factor = if f.components() > 1 { KINETIC_HALF } else { 1.0 };
    Ok((1..=nshells).map(|s| (s as f64, factor * shells[s])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn zero_field_has_zero_spectrum() {
        let g = Grid::periodic(&[16, 16]);
        let f = Field::zeros(&g, 1);
        let spec = estimate_spectrum(&f).unwrap();
        assert_eq!(spec.len(), 8);
        assert!(spec.iter().all(|(_, e)| *e == 0.0));
    }

    #[test]
    fn single_mode_energy_obeys_parseval() {
        // f = a cos(8x): variance a²/2, all of it in the |κ| = 8 shell
        let g = Grid::periodic(&[64, 64]);
        let a = 1.7;
        let f = Field::scalar_from_fn(&g, |x| a * (8.0 * x[0]).cos());
        let spec = estimate_spectrum(&f).unwrap();
        let total: f64 = spec.iter().map(|(_, e)| e).sum();
        let variance = f.data().iter().map(|v| v * v).sum::<f64>() / f.data().len() as f64;
        assert!((total - variance).abs() <= 1e-10 * variance);
        assert!((total - a * a / 2.0).abs() < 1e-10);
        for (k, e) in &spec {
            if (*k - 8.0).abs() > 0.5 {
                assert!(e.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vector_spectrum_uses_kinetic_half() {
        let g = Grid::periodic(&[32, 32]);
        let mut u = Field::zeros(&g, 2);
        let h = g.spacing(0);
        for i in 0..32 {
            for j in 0..32 {
                let x = i as f64 * h;
                let flat = g.flat(&[i, j]);
                u.component_mut(0)[flat] = (4.0 * x).cos();
                u.component_mut(1)[flat] = (4.0 * x).sin();
            }
        }
        let spec = estimate_spectrum(&u).unwrap();
        let total: f64 = spec.iter().map(|(_, e)| e).sum();
        // ½⟨u·u⟩ = ½(½ + ½) = ½
        assert!((total - 0.5).abs() < 1e-10);
    }

    #[test]
    fn non_periodic_grid_is_rejected() {
        use crate::grid::BcKind;
        let g = Grid::new(&[8, 8], &[1.0, 1.0], &[BcKind::Dirichlet, BcKind::Periodic]).unwrap();
        let f = Field::zeros(&g, 1);
        assert!(estimate_spectrum(&f).is_err());
    }

    #[test]
    fn vkp_shape() {
        let spec = vkp_spectrum(VkpParams { alpha: 1.453, u_prime: 1.0, kappa_e: 4.0, kappa_eta: 1e3 })
            .unwrap();
        assert_eq!(spec.eval(0.0), 0.0);
        // κ⁴ prefactor: E/κ⁴ approaches a constant as κ → 0
        let c1 = spec.eval(1e-3) / 1e-3f64.powi(4);
        let c2 = spec.eval(1e-4) / 1e-4f64.powi(4);
        assert!((c1 / c2 - 1.0).abs() < 1e-3);
        // dense scan oracle: single interior peak near κ_e
        let mut best = (0.0, 0.0);
        let mut k = 0.01;
        while k < 100.0 {
            let e = spec.eval(k);
            if e > best.1 {
                best = (k, e);
            }
            k += 0.01;
        }
        // analytic peak of κ⁴/(1+(κ/κe)²)^{17/6} at κ = κe·√(12/5)
        let expect = 4.0 * (12.0f64 / 5.0).sqrt();
        assert!((best.0 - expect).abs() < 0.05, "peak at {} vs {}", best.0, expect);
        assert!(spec.eval(best.0) > spec.eval(0.5) && spec.eval(best.0) > spec.eval(50.0));
    }

    #[test]
    fn vkp_rejects_nonpositive_params() {
        assert!(vkp_spectrum(VkpParams { alpha: 0.0, u_prime: 1.0, kappa_e: 1.0, kappa_eta: 1.0 }).is_err());
    }

    #[test]
    fn tabulated_interpolates() {
        let t = SpectrumModel::Tabulated(vec![(1.0, 2.0), (3.0, 6.0)]);
        assert_eq!(t.eval(2.0), 4.0);
        assert_eq!(t.eval(0.0), 2.0);
        assert_eq!(t.eval(10.0), 6.0);
    }
}
