//! Second-order projection method for 2D incompressible Navier-Stokes on a
//! staggered MAC grid, with a pluggable pressure-Poisson solver.
//!
//! Time discretization: Adams-Bashforth for convection, Crank-Nicolson for
//! viscosity. Each step solves the implicit Helmholtz system for the
//! intermediate velocity, the pressure Poisson equation for the new
//! pressure, and corrects the velocity to enforce incompressibility.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::fieldgen::{curl_potential, sample_grf, synth_vector_field, MaternParams, SynthOptions};
use crate::grid::Grid;
use crate::linsolve::{bicgstab, mg_solve, HelmholtzOperator, LaplaceOperator, MgConfig, SolverReport};
use crate::ops::{convect_staggered, divergence, gradient};
use crate::spectrum::{vkp_spectrum, VkpParams};

/// Body force `f = sin(κ y) x̂`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KolmogorovForcing {
    pub kappa: usize,
}

impl KolmogorovForcing {
    /// Sampled at the u-face positions of a staggered grid.
    pub fn field(&self, grid: &Grid) -> Field {
        let mut f = Field::zeros(grid, 2);
        let hy = grid.spacing(1);
        let ny = grid.n(1);
        let comp = f.component_mut(0);
        for (flat, v) in comp.iter_mut().enumerate() {
            let j = flat % ny;
            let y = (j as f64 + 0.5) * hy;
            *v = (self.kappa as f64 * y).sin();
        }
        f
    }
}

/// Pressure-Poisson solver plug-in: produces an initial guess and refines it.
pub trait PpeSolver {
    fn name(&self) -> String;
    /// Initial approximation for the solve; the previous-step pressure by
    /// default, a network prediction for learned solvers.
    fn initial_guess(&mut self, op: &LaplaceOperator, b: &Field, prev_p: &Field) -> Result<Field> {
        let _ = (op, b);
        Ok(prev_p.clone())
    }
    fn solve_from(
        &mut self,
        op: &LaplaceOperator,
        b: &Field,
        x0: &Field,
    ) -> Result<(Field, SolverReport)>;

    fn solve(
        &mut self,
        op: &LaplaceOperator,
        b: &Field,
        prev_p: &Field,
    ) -> Result<(Field, SolverReport)> {
        let x0 = self.initial_guess(op, b, prev_p)?;
        self.solve_from(op, b, &x0)
    }
}

/// Plain BiCGSTAB with previous-step initialization.
pub struct BicgstabPpe {
    pub tol: f64,
    pub max_iter: usize,
}

impl PpeSolver for BicgstabPpe {
    fn name(&self) -> String {
        "bicgstab".into()
    }

    fn solve_from(&mut self, op: &LaplaceOperator, b: &Field, x0: &Field) -> Result<(Field, SolverReport)> {
        bicgstab(op, b, x0, self.tol, self.max_iter)
    }
}

/// Classical multigrid V-cycles.
pub struct MgPpe {
    pub config: MgConfig,
    pub tol: f64,
}

impl PpeSolver for MgPpe {
    fn name(&self) -> String {
        "mg".into()
    }

    fn solve_from(&mut self, op: &LaplaceOperator, b: &Field, x0: &Field) -> Result<(Field, SolverReport)> {
        mg_solve(op, b, x0, &self.config, self.tol)
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionConfig {
    pub re: f64,
    pub dt: f64,
    pub forcing: Option<KolmogorovForcing>,
    pub helmholtz_tol: f64,
    pub helmholtz_max_iter: usize,
}

impl ProjectionConfig {
    pub fn new(re: f64, dt: f64) -> ProjectionConfig {
        ProjectionConfig { re, dt, forcing: None, helmholtz_tol: 1e-12, helmholtz_max_iter: 500 }
    }
}

/// Time-stepper state: two velocity levels for Adams-Bashforth, pressure,
/// and the clock.
#[derive(Debug, Clone)]
pub struct ProjectionState {
    pub u: Field,
    pub u_prev: Field,
    pub p: Field,
    pub t: f64,
    pub step: usize,
}

impl ProjectionState {
    /// First-order bootstrap: the missing history level starts equal to u0.
    pub fn from_initial(u0: Field) -> Result<ProjectionState> {
        if u0.components() != 2 || u0.grid().dim() != 2 {
            return Err(Error::Shape("projection state needs a 2D vector field".into()));
        }
        let p = Field::zeros(u0.grid(), 1);
        Ok(ProjectionState { u_prev: u0.clone(), u: u0, p, t: 0.0, step: 0 })
    }
}

pub struct Stepper {
    grid: Grid,
    cfg: ProjectionConfig,
    lap: LaplaceOperator,
    helmholtz: HelmholtzOperator,
    forcing_field: Field,
}

impl Stepper {
    pub fn new(grid: &Grid, cfg: ProjectionConfig) -> Result<Stepper> {
        if grid.dim() != 2 || !grid.all_periodic() {
            return Err(Error::Usage("the time stepper runs on 2D all-periodic grids".into()));
        }
        if !(cfg.re > 0.0) || !(cfg.dt > 0.0) {
            return Err(Error::Usage("Re and dt must be positive".into()));
        }
        let forcing_field = match &cfg.forcing {
            Some(f) => {
                if f.kappa == 0 {
                    return Err(Error::Usage("forcing wavenumber must be at least 1".into()));
                }
                f.field(grid)
            }
            None => Field::zeros(grid, 2),
        };
        let helmholtz = HelmholtzOperator::new(grid, cfg.dt / (2.0 * cfg.re))?;
        Ok(Stepper { grid: grid.clone(), cfg, lap: LaplaceOperator::new(grid), helmholtz, forcing_field })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn laplace(&self) -> &LaplaceOperator {
        &self.lap
    }

    pub fn config(&self) -> &ProjectionConfig {
        &self.cfg
    }

    /// Intermediate velocity: solves
    /// `(I − dt/(2Re) ∇²) u* = uⁿ + dt (−½(3C(uⁿ) − C(uⁿ⁻¹)) + ∇²uⁿ/(2Re) + f)`.
    pub fn predictor(&self, u_n: &Field, u_nm1: &Field, forcing: &Field) -> Result<Field> {
        let conv_n = convect_staggered(u_n)?;
        let conv_nm1 = convect_staggered(u_nm1)?;
        let lap_n = self.lap.apply(u_n)?;
        let dt = self.cfg.dt;
        let mut rhs = u_n.clone();
        rhs.axpy(-1.5 * dt, &conv_n);
        rhs.axpy(0.5 * dt, &conv_nm1);
        rhs.axpy(dt / (2.0 * self.cfg.re), &lap_n);
        rhs.axpy(dt, forcing);

        let mut u_star = Field::zeros(&self.grid, 2);
        for c in 0..2 {
            let b = Field::from_data(&self.grid, 1, rhs.component(c).to_vec())?;
            let x0 = Field::from_data(&self.grid, 1, u_n.component(c).to_vec())?;
            let (x, rep) = bicgstab(
                &self.helmholtz,
                &b,
                &x0,
                self.cfg.helmholtz_tol,
                self.cfg.helmholtz_max_iter,
            )?;
            if !rep.converged {
                return Err(Error::Numerical(format!(
                    "Helmholtz solve for component {c} did not converge: {:?}",
                    rep.failure
                )));
            }
            u_star.component_mut(c).copy_from_slice(x.component(0));
        }
        Ok(u_star)
    }

    /// Pressure Poisson right-hand side `∇·u*/dt`, mean-subtracted for
    /// periodic compatibility.
    pub fn ppe_rhs(&self, u_star: &Field) -> Result<Field> {
        let mut rhs = divergence(u_star, true)?;
        rhs.scale(1.0 / self.cfg.dt);
        rhs.sub_mean();
        Ok(rhs)
    }

    /// `u^{n+1} = u* − dt ∇p`.
    pub fn corrector(&self, u_star: &Field, p: &Field) -> Result<Field> {
        let grad_p = gradient(p, true)?;
        let mut u = u_star.clone();
        u.axpy(-self.cfg.dt, &grad_p);
        Ok(u)
    }

    /// Advance one step with the given PPE solver; returns its report.
    pub fn step(&self, state: &mut ProjectionState, solver: &mut dyn PpeSolver) -> Result<SolverReport> {
        let u_star = self.predictor(&state.u, &state.u_prev, &self.forcing_field)?;
        let b = self.ppe_rhs(&u_star)?;
        let (p, report) = solver.solve(&self.lap, &b, &state.p)?;
        if !report.converged {
            return Err(Error::Numerical(format!(
                "PPE solve failed at t = {}: {:?}",
                state.t, report.failure
            )));
        }
        let u_next = self.corrector(&u_star, &p)?;
        state.u_prev = std::mem::replace(&mut state.u, u_next);
        state.p = p;
        state.t += self.cfg.dt;
        state.step += 1;
        Ok(report)
    }
}

/// Kinetic energy `½⟨u·u⟩` averaged over the grid.
pub fn kinetic_energy(u: &Field) -> f64 {
    0.5 * u.data().iter().map(|v| v * v).sum::<f64>() / u.grid().points() as f64
}

/// Taylor-Green vortex sampled on the staggered lattice:
/// `u = sin x cos y · e^{−2t/Re}`, `v = −cos x sin y · e^{−2t/Re}`.
pub fn taylor_green(grid: &Grid, t: f64, re: f64) -> Field {
    let decay = (-2.0 * t / re).exp();
    let (nx, ny) = (grid.n(0), grid.n(1));
    let (hx, hy) = (grid.spacing(0), grid.spacing(1));
    let mut u = Field::zeros(grid, 2);
    for i in 0..nx {
        for j in 0..ny {
            let flat = i * ny + j;
            let (xf, yc) = (i as f64 * hx, (j as f64 + 0.5) * hy);
            u.component_mut(0)[flat] = xf.sin() * yc.cos() * decay;
            let (xc, yf) = ((i as f64 + 0.5) * hx, j as f64 * hy);
            u.component_mut(1)[flat] = -xc.cos() * yf.sin() * decay;
        }
    }
    u
}

/// Benchmark case labels from the forced-turbulence table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseId {
    I,
    II,
    III,
    IV,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum InitKind {
    /// Curl of a Matérn GRF potential (λ = 0.1, ν = 1, σ² = 1).
    Grf,
    /// Divergence-free von Kármán-Pao mode sum.
    Spectrum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseConfig {
    pub case: CaseId,
    pub grid_n: usize,
    pub re: f64,
    pub dt: f64,
    pub forcing_kappa: usize,
    pub init: InitKind,
}

impl CaseConfig {
    /// Desk-scale defaults: 128², Re 500, dt 1e−3, forcing sin(8y)/sin(16y).
    pub fn desk(case: CaseId) -> CaseConfig {
        let (init, forcing_kappa) = match case {
            CaseId::I => (InitKind::Grf, 8),
            CaseId::II => (InitKind::Grf, 16),
            CaseId::III => (InitKind::Spectrum, 8),
            CaseId::IV => (InitKind::Spectrum, 16),
        };
        CaseConfig { case, grid_n: 128, re: 500.0, dt: 1e-3, forcing_kappa, init }
    }

    /// Production-scale settings (1024², Re 5000, dt 5e−4, sin(16y)/sin(32y)).
    pub fn paper(case: CaseId) -> CaseConfig {
        let (init, forcing_kappa) = match case {
            CaseId::I => (InitKind::Grf, 16),
            CaseId::II => (InitKind::Grf, 32),
            CaseId::III => (InitKind::Spectrum, 16),
            CaseId::IV => (InitKind::Spectrum, 32),
        };
        CaseConfig { case, grid_n: 1024, re: 5000.0, dt: 5e-4, forcing_kappa, init }
    }

    pub fn initial_velocity(&self, grid: &Grid, seed: u64) -> Result<Field> {
        match self.init {
            InitKind::Grf => {
                let phi = sample_grf(grid, &MaternParams::new(0.1, 1.0, 1.0), seed)?;
                curl_potential(&[phi], true)
            }
            InitKind::Spectrum => {
                let nyq = std::f64::consts::PI * grid.n(0) as f64 / grid.length(0);
                let spec = vkp_spectrum(VkpParams {
                    alpha: 1.453,
                    u_prime: 1.0,
                    kappa_e: 4.0,
                    kappa_eta: 0.5 * nyq,
                })?;
                let opts = SynthOptions { staggered: true, ..Default::default() };
                synth_vector_field(grid, &spec, 128, seed, &opts)
            }
        }
    }
}

/// Per-step diagnostics of a case run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub t: f64,
    pub ppe_iterations: usize,
    pub ppe_residual: f64,
    /// ‖p(t) − p(t−dt)‖₂ / ‖p(t)‖₂
    pub p_change_rel: f64,
    pub kinetic_energy: f64,
    pub comparisons: Vec<CompareMetric>,
}

/// Metrics of an alternative solver run against the same per-step system:
/// its initial-guess error vs the reference pressure and the iterations it
/// needs to reach the reference tolerance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareMetric {
    pub name: String,
    pub guess_rel_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Advance a case `steps` steps with the reference solver, recording per-step
/// metrics; optional comparison solvers are exercised on the same systems.
pub fn run_case(
    cfg: &CaseConfig,
    seed: u64,
    steps: usize,
    reference: &mut dyn PpeSolver,
    comparisons: &mut [&mut dyn PpeSolver],
) -> Result<(ProjectionState, Vec<StepMetrics>)> {
    let grid = Grid::periodic_square(2, cfg.grid_n);
    let mut pcfg = ProjectionConfig::new(cfg.re, cfg.dt);
    pcfg.forcing = Some(KolmogorovForcing { kappa: cfg.forcing_kappa });
    let stepper = Stepper::new(&grid, pcfg)?;
    let mut state = ProjectionState::from_initial(cfg.initial_velocity(&grid, seed)?)?;
    let mut metrics = Vec::with_capacity(steps);
    for _ in 0..steps {
        let p_old = state.p.clone();
        // the same intermediate system the reference advances with
        let u_star = stepper.predictor(&state.u, &state.u_prev, &stepper.forcing_field)?;
        let b = stepper.ppe_rhs(&u_star)?;
        let (p_ref, report) = reference.solve(&stepper.lap, &b, &state.p)?;
        if !report.converged {
            return Err(Error::Numerical(format!(
                "reference PPE solve failed at step {}: {:?}",
                state.step, report.failure
            )));
        }
        let mut comps = Vec::new();
        for solver in comparisons.iter_mut() {
            let guess = solver.initial_guess(&stepper.lap, &b, &p_old)?;
            let mut diff = guess.clone();
            diff.axpy(-1.0, &p_ref);
            let denom = p_ref.norm_l2().max(1e-300);
            let (_, rep) = solver.solve_from(&stepper.lap, &b, &guess)?;
            comps.push(CompareMetric {
                name: solver.name(),
                guess_rel_error: diff.norm_l2() / denom,
                iterations: rep.iterations,
                converged: rep.converged,
            });
        }
        let u_next = stepper.corrector(&u_star, &p_ref)?;
        state.u_prev = std::mem::replace(&mut state.u, u_next);
        state.p = p_ref;
        state.t += cfg.dt;
        state.step += 1;

        let mut dp = state.p.clone();
        dp.axpy(-1.0, &p_old);
        let p_norm = state.p.norm_l2().max(1e-300);
        metrics.push(StepMetrics {
            step: state.step,
            t: state.t,
            ppe_iterations: report.iterations,
            ppe_residual: report.final_residual(),
            p_change_rel: dp.norm_l2() / p_norm,
            kinetic_energy: kinetic_energy(&state.u),
            comparisons: comps,
        });
    }
    Ok((state, metrics))
}
