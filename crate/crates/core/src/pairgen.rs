//! Forward construction of PDE-consistent training pairs.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{apply_boundary, smooth_preserving_boundary, Field};
use crate::fieldgen::{sample_grf, synth_scalar_field, MaternParams, SynthOptions};
use crate::grid::{BoundarySpec, Grid};
use crate::linsolve::LaplaceOperator;
use crate::ops::convect_staggered;
use crate::rng;
use crate::spectrum::SpectrumModel;

/// Generation provenance stored with each pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairMeta {
    pub method: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matern: Option<MaternParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
}

/// A (solution, rhs, boundary) triple satisfying `rhs = A·solution` with the
/// shared discrete operator; the rhs is stored, never recomputed.
#[derive(Debug, Clone)]
pub struct DataPair {
    pub solution: Field,
    pub rhs: Field,
    pub bc: BoundarySpec,
    pub meta: PairMeta,
}

/// Ordered pair collection over one grid with a train/validation split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub grid: Grid,
    pub pairs: Vec<DataPair>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn train_pairs(&self) -> impl Iterator<Item = &DataPair> {
        self.train.iter().map(|&i| &self.pairs[i])
    }

    pub fn validation_pairs(&self) -> impl Iterator<Item = &DataPair> {
        self.validation.iter().map(|&i| &self.pairs[i])
    }

    /// Default split: first 80% train, rest validation.
    fn default_split(count: usize) -> (Vec<usize>, Vec<usize>) {
        let cut = (count * 4).div_ceil(5).max(1.min(count));
        ((0..cut).collect(), (cut..count).collect())
    }
}

/// Build a Poisson pair from a generated scalar field: impose boundary data,
/// smooth while preserving it, pin the null space on all-periodic grids by
/// mean subtraction, then forward-compute `rhs = A p`.
pub fn make_poisson_pair(p: &Field, bc: &BoundarySpec) -> Result<DataPair> {
    let iters = if p.grid().all_periodic() { 0 } else { 2 };
    make_poisson_pair_with(p, bc, iters, PairMeta {
        method: "custom".into(),
        seed: 0,
        matern: None,
        spectrum: None,
        modes: None,
    })
}

pub fn make_poisson_pair_with(
    p: &Field,
    bc: &BoundarySpec,
    smooth_iters: usize,
    meta: PairMeta,
) -> Result<DataPair> {
    p.check_finite()?;
    if !p.is_scalar() {
        return Err(Error::Shape("Poisson pairs are built from scalar fields".into()));
    }
    let constrained = apply_boundary(p, bc)?;
    let mut solution = smooth_preserving_boundary(&constrained, bc, smooth_iters)?;
    if p.grid().all_periodic() {
        solution.sub_mean();
    }
    let op = LaplaceOperator::new(p.grid());
    let rhs = op.apply(&solution)?;
    Ok(DataPair { solution, rhs, bc: bc.clone(), meta })
}

/// Source term that balances the second-order time-discrete momentum
/// equation for the consecutive states `(u_prev, u)`:
/// `f = (u − u_prev)/dt + C(u_prev) − (∇²u + ∇²u_prev)/(2 Re)`,
/// with `C` the Adams-Bashforth convection started from `u_prev` (the same
/// bootstrap the time stepper uses on its first step). Substituting
/// `(u_prev, u, f)` back into the predictor stencil balances it exactly.
pub fn balance_source(u: &Field, u_prev: &Field, dt: f64, re: f64) -> Result<Field> {
    if !u.same_layout(u_prev) {
        return Err(Error::Shape("velocity states live on different grids".into()));
    }
    if !(dt > 0.0) || !(re > 0.0) {
        return Err(Error::Usage("dt and Re must be positive".into()));
    }
    let conv_prev = convect_staggered(u_prev)?;
    let op = LaplaceOperator::new(u.grid());
    let lap_u = op.apply(u)?;
    let lap_prev = op.apply(u_prev)?;
    let mut f = u.clone();
    f.axpy(-1.0, u_prev);
    f.scale(1.0 / dt);
    // AB2 with bootstrapped history: ½(3C(u_prev) − C(u_prev)) = C(u_prev)
    f.axpy(1.0, &conv_prev);
    f.axpy(-0.5 / re, &lap_u);
    f.axpy(-0.5 / re, &lap_prev);
    Ok(f)
}

/// Per-method generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum GenParams {
    /// Matérn parameters drawn per sample from uniform ranges.
    Grf {
        lambda_range: (f64, f64),
        nu_range: (f64, f64),
        sigma2_range: (f64, f64),
    },
    /// Fixed target spectrum, random phases and angles per sample.
    Spectrum { spectrum: SpectrumModel, modes: usize, kappa_min: f64 },
}

impl GenParams {
    /// Matérn ranges: λ ~ U(0.05, 0.1), ν ~ U(0.5, 3), σ² ~ U(0.01, 3).
    pub fn default_grf() -> GenParams {
        GenParams::Grf {
            lambda_range: (0.05, 0.1),
            nu_range: (0.5, 3.0),
            sigma2_range: (0.01, 3.0),
        }
    }

    /// Pressure spectrum `E_p = 0.5 |κ|^{−7/3}` held fixed below |κ| = 6.
    pub fn default_spectrum(modes: usize) -> GenParams {
        GenParams::Spectrum {
            spectrum: SpectrumModel::power_law(0.5, -7.0 / 3.0, 6.0),
            modes,
            kappa_min: 1.0,
        }
    }

    pub fn method_name(&self) -> &'static str {
        match self {
            GenParams::Grf { .. } => "grf",
            GenParams::Spectrum { .. } => "spectrum",
        }
    }
}

/// Generate `count` Poisson pairs on an all-periodic grid; deterministic for
/// a given seed, sample-parallel.
pub fn generate_dataset(
    params: &GenParams,
    count: usize,
    grid: &Grid,
    seed: u64,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Usage("dataset needs at least one sample".into()));
    }
    if !grid.all_periodic() {
        return Err(Error::Usage("dataset generation targets all-periodic grids".into()));
    }
    let bc = BoundarySpec::all_periodic(grid.dim());
    let pairs: Result<Vec<DataPair>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let sample_seed = rng::derive(seed, &[i as u64]);
            match params {
                GenParams::Grf { lambda_range, nu_range, sigma2_range } => {
                    let mut prng = rng::stream(seed, &[i as u64, u64::MAX]);
                    let lambda = prng.gen_range(lambda_range.0..lambda_range.1);
                    let nu = prng.gen_range(nu_range.0..nu_range.1);
                    let sigma2 = prng.gen_range(sigma2_range.0..sigma2_range.1);
                    let matern = MaternParams::new(lambda, nu, sigma2);
                    let field = sample_grf(grid, &matern, sample_seed)?;
                    make_poisson_pair_with(&field, &bc, 0, PairMeta {
                        method: "grf".into(),
                        seed: sample_seed,
                        matern: Some(matern),
                        spectrum: None,
                        modes: None,
                    })
                }
                GenParams::Spectrum { spectrum, modes, kappa_min } => {
                    let opts = SynthOptions { kappa_min: *kappa_min, ..Default::default() };
                    let field = synth_scalar_field(grid, spectrum, *modes, sample_seed, &opts)?;
                    make_poisson_pair_with(&field, &bc, 0, PairMeta {
                        method: "spectrum".into(),
                        seed: sample_seed,
                        matern: None,
                        spectrum: Some(spectrum.clone()),
                        modes: Some(*modes),
                    })
                }
            }
        })
        .collect();
    let pairs = pairs?;
    let (train, validation) = Dataset::default_split(count);
    Ok(Dataset { grid: grid.clone(), pairs, train, validation })
}

/// Dataset metadata embedded in containers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: String,
    pub grid: Grid,
    pub count: usize,
    pub seed: u64,
    pub params: GenParams,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub pair_meta: Vec<PairMeta>,
}

impl Dataset {
    pub fn to_container(&self, params: &GenParams, seed: u64) -> Result<crate::container::Container> {
        let mut c = crate::container::Container::new();
        let meta = DatasetMeta {
            kind: "dataset".into(),
            grid: self.grid.clone(),
            count: self.pairs.len(),
            seed,
            params: params.clone(),
            train: self.train.clone(),
            validation: self.validation.clone(),
            pair_meta: self.pairs.iter().map(|p| p.meta.clone()).collect(),
        };
        c.set_meta(&meta)?;
        let shape: Vec<usize> = self.grid.shape().to_vec();
        for (i, pair) in self.pairs.iter().enumerate() {
            c.push_f64(&format!("pair{i:04}/solution"), &shape, pair.solution.data().to_vec())?;
            c.push_f64(&format!("pair{i:04}/rhs"), &shape, pair.rhs.data().to_vec())?;
        }
        Ok(c)
    }

    pub fn from_container(c: &crate::container::Container) -> Result<Dataset> {
        let meta: DatasetMeta = c.meta()?;
        let grid = meta.grid.clone();
        let bc = BoundarySpec::all_periodic(grid.dim());
        let mut pairs = Vec::with_capacity(meta.count);
        for i in 0..meta.count {
            let (_, sol) = c.get_f64(&format!("pair{i:04}/solution"))?;
            let (_, rhs) = c.get_f64(&format!("pair{i:04}/rhs"))?;
            pairs.push(DataPair {
                solution: Field::from_data(&grid, 1, sol.to_vec())?,
                rhs: Field::from_data(&grid, 1, rhs.to_vec())?,
                bc: bc.clone(),
                meta: meta.pair_meta.get(i).cloned().unwrap_or(PairMeta {
                    method: "unknown".into(),
                    seed: 0,
                    matern: None,
                    spectrum: None,
                    modes: None,
                }),
            });
        }
        Ok(Dataset { grid, pairs, train: meta.train, validation: meta.validation })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_gives_zero_rhs() {
        let g = Grid::periodic(&[16, 16]);
        let p = Field::zeros(&g, 1);
        let bc = BoundarySpec::all_periodic(2);
        let pair = make_poisson_pair(&p, &bc).unwrap();
        assert!(pair.rhs.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cosine_rhs_matches_stencil_eigenvalue() {
        let g = Grid::periodic(&[64, 64]);
        let h = g.spacing(0);
        let p = Field::scalar_from_fn(&g, |x| (4.0 * x[0]).cos());
        let bc = BoundarySpec::all_periodic(2);
        let pair = make_poisson_pair(&p, &bc).unwrap();
        let lambda = -(2.0 - 2.0 * (4.0 * h).cos()) / (h * h);
        for (rhs, sol) in pair.rhs.data().iter().zip(pair.solution.data()) {
            assert!((rhs - lambda * sol).abs() < 1e-10);
        }
    }

    #[test]
    fn constructional_identity_is_exact() {
        let g = Grid::periodic(&[32, 32]);
        let spec = SpectrumModel::power_law(0.5, -7.0 / 3.0, 6.0);
        let f = synth_scalar_field(&g, &spec, 64, 3, &SynthOptions::default()).unwrap();
        let bc = BoundarySpec::all_periodic(2);
        let pair = make_poisson_pair(&f, &bc).unwrap();
        let op = LaplaceOperator::new(&g);
        let recomputed = op.apply(&pair.solution).unwrap();
        // identical operator, identical input: bitwise-equal rhs
        assert_eq!(recomputed.data(), pair.rhs.data());
    }

    #[test]
    fn periodic_rhs_has_zero_mean() {
        let g = Grid::periodic(&[32, 32]);
        let p = sample_grf(&g, &MaternParams::new(0.1, 1.0, 1.0), 9).unwrap();
        let bc = BoundarySpec::all_periodic(2);
        let pair = make_poisson_pair(&p, &bc).unwrap();
        let scale = pair.rhs.norm_l2() / (pair.rhs.data().len() as f64).sqrt();
        assert!(pair.rhs.mean().abs() < 1e-12 * scale.max(1.0));
        // solutions are mean-subtracted on periodic grids
        assert!(pair.solution.mean().abs() < 1e-12);
    }

    #[test]
    fn balance_source_trivial_cases() {
        let g = Grid::periodic(&[16, 16]);
        let zero = Field::zeros(&g, 2);
        let f = balance_source(&zero, &zero, 1e-3, 100.0).unwrap();
        assert!(f.data().iter().all(|v| *v == 0.0));

        let c = Field::constant(&g, 2, 1.7);
        let f = balance_source(&c, &c, 1e-3, 100.0).unwrap();
        assert!(f.data().iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn dataset_generation_is_deterministic_and_distinct() {
        let g = Grid::periodic(&[32, 32]);
        let params = GenParams::default_grf();
        let a = generate_dataset(&params, 8, &g, 42).unwrap();
        let b = generate_dataset(&params, 8, &g, 42).unwrap();
        for (pa, pb) in a.pairs.iter().zip(&b.pairs) {
            assert_eq!(pa.solution.data(), pb.solution.data());
            assert_eq!(pa.rhs.data(), pb.rhs.data());
        }
        for i in 0..a.len() {
            for j in (i + 1)..a.len() {
                assert_ne!(a.pairs[i].solution.data(), a.pairs[j].solution.data());
            }
        }
        assert_eq!(a.train.len() + a.validation.len(), 8);
    }

    #[test]
    fn grf_dataset_draws_params_in_ranges() {
        let g = Grid::periodic(&[16, 16]);
        let ds = generate_dataset(&GenParams::default_grf(), 12, &g, 7).unwrap();
        for p in &ds.pairs {
            let m = p.meta.matern.as_ref().expect("grf meta");
            assert!((0.05..0.1).contains(&m.lambda));
            assert!((0.5..3.0).contains(&m.nu));
            assert!((0.01..3.0).contains(&m.sigma2));
        }
    }

    #[test]
    fn spectrum_dataset_3d() {
        let g = Grid::periodic(&[8, 8, 8]);
        let ds = generate_dataset(&GenParams::default_spectrum(16), 3, &g, 1).unwrap();
        assert_eq!(ds.len(), 3);
        let op = LaplaceOperator::new(&g);
        for p in &ds.pairs {
            let re = op.apply(&p.solution).unwrap();
            assert_eq!(re.data(), p.rhs.data());
        }
    }

    #[test]
    fn container_roundtrip_preserves_pairs() {
        let g = Grid::periodic(&[16, 16]);
        let params = GenParams::default_spectrum(24);
        let ds = generate_dataset(&params, 4, &g, 5).unwrap();
        let c = ds.to_container(&params, 5).unwrap();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let c2 = crate::container::Container::read_from(&mut buf.as_slice()).unwrap();
        let ds2 = Dataset::from_container(&c2).unwrap();
        assert_eq!(ds2.len(), 4);
        for (a, b) in ds.pairs.iter().zip(&ds2.pairs) {
            assert_eq!(a.solution.data(), b.solution.data());
            assert_eq!(a.rhs.data(), b.rhs.data());
        }
    }
}
