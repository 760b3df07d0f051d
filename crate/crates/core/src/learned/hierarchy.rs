//! Multigrid with learned kernels: smoothing, differentiation, transfer and
//! coarsest-inverse convolutions, plus an optional per-level correction
//! network mapping the restricted residual to a low-frequency error
//! correction.
//!
//! With kernels at their classical initialization and the correction
//! networks' output layers zeroed, one cycle reproduces the classical
//! V-cycle; training then tightens the kernels on the data distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;
use crate::learned::params::{xavier, ParamStore, ParamVars};
use crate::learned::tape::{Anchor, Nonlin, Tape, Tensor, Var};
use crate::linsolve::{LaplaceOperator, LinearOp, SolverReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MgVariant {
    /// Learned kernels only.
    Nmg,
    /// Strided-convolution correction network.
    CnnMg,
    /// Wavelet-transform correction network.
    WtcnnMg,
}

impl MgVariant {
    pub fn name(self) -> &'static str {
        match self {
            MgVariant::Nmg => "nmg",
            MgVariant::CnnMg => "cnn-mg",
            MgVariant::WtcnnMg => "wtcnn-mg",
        }
    }

    pub fn parse(s: &str) -> Result<MgVariant> {
        match s {
            "nmg" => Ok(MgVariant::Nmg),
            "cnn-mg" => Ok(MgVariant::CnnMg),
            "wtcnn-mg" => Ok(MgVariant::WtcnnMg),
            other => Err(Error::Usage(format!("unknown learned-mg variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyCfg {
    pub levels: usize,
    pub pre_sweeps: usize,
    pub post_sweeps: usize,
    /// Stencil kernel width (odd).
    pub kernel_size: usize,
    /// Hidden channels of the correction networks.
    pub hidden_channels: usize,
    /// Jacobi weight and sweep count behind the classical initialization.
    pub jacobi_weight: f64,
    pub coarse_sweeps: usize,
}

impl HierarchyCfg {
    pub fn for_grid(grid: &Grid) -> HierarchyCfg {
        let mg = crate::linsolve::MgConfig::for_grid(grid);
        HierarchyCfg {
            levels: mg.levels,
            pre_sweeps: mg.pre_sweeps,
            post_sweeps: mg.post_sweeps,
            kernel_size: 3,
            hidden_channels: 8,
            jacobi_weight: mg.jacobi_weight,
            coarse_sweeps: mg.coarse_sweeps,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnedHierarchy {
    pub grid: Grid,
    pub variant: MgVariant,
    pub cfg: HierarchyCfg,
    pub params: ParamStore,
    grids: Vec<Grid>,
}

/// Tensor-product stencil helper: weights per axis combined over a cubic
/// kernel of width `w`.
fn tensor_kernel(dim: usize, w: usize, axis_weights: &[f64]) -> Tensor {
    let mut shape = vec![1usize, 1];
    shape.extend(std::iter::repeat(w).take(dim));
    let mut t = Tensor::zeros(&shape);
    let pts = w.pow(dim as u32);
    for p in 0..pts {
        let mut rem = p;
        let mut val = 1.0;
        for _ in 0..dim {
            val *= axis_weights[rem % w];
            rem /= w;
        }
        t.data[p] = val;
    }
    t
}

/// Cross-shaped Laplacian stencil kernel for spacing `h` per axis.
fn laplacian_kernel(grid: &Grid, w: usize) -> Tensor {
    let dim = grid.dim();
    let mut shape = vec![1usize, 1];
    shape.extend(std::iter::repeat(w).take(dim));
    let mut t = Tensor::zeros(&shape);
    let r = w / 2;
    let center: Vec<usize> = vec![r; dim];
    let flat = |idx: &[usize]| -> usize {
        let mut f = 0;
        for a in 0..dim {
            f = f * w + idx[a];
        }
        f
    };
    let mut diag = 0.0;
    for a in 0..dim {
        let h = grid.spacing(a);
        let inv = 1.0 / (h * h);
        diag -= 2.0 * inv;
        let mut lo = center.clone();
        lo[a] -= 1;
        let mut hi = center.clone();
        hi[a] += 1;
        t.data[flat(&lo)] += inv;
        t.data[flat(&hi)] += inv;
    }
    t.data[flat(&center)] = diag;
    t
}

fn jacobi_diag(grid: &Grid) -> f64 {
    -(0..grid.dim())
        .map(|a| {
            let h = grid.spacing(a);
            2.0 / (h * h)
        })
        .sum::<f64>()
}

/// Effective kernel of `coarse_sweeps` weighted-Jacobi sweeps from zero on
/// the coarsest periodic lattice, obtained by probing with a delta and
/// index-reversing (the probe gives the circulant response `s`, and the
/// zero-anchored convolution computes `Σ_q k[q]·b[p+q]`, so `k[q] = s[−q]`).
fn coarse_inverse_kernel(grid: &Grid, sweeps: usize, omega: f64) -> Tensor {
    let op = LaplaceOperator::new(grid);
    let n = grid.points();
    let mut b = vec![0.0; n];
    b[0] = 1.0;
    let diag = jacobi_diag(grid);
    let mut x = vec![0.0; n];
    let mut ax = vec![0.0; n];
    for _ in 0..sweeps {
        op.apply_slice(&x, &mut ax);
        for i in 0..n {
            x[i] += omega * (b[i] - ax[i]) / diag;
        }
    }
    // index-reverse per axis
    let dim = grid.dim();
    let mut shape = vec![1usize, 1];
    shape.extend_from_slice(grid.shape());
    let mut t = Tensor::zeros(&shape);
    let mut idx = [0usize; 3];
    for (flat, v) in x.iter().enumerate() {
        grid.unflatten(flat, &mut idx);
        let mut rev = [0usize; 3];
        for a in 0..dim {
            rev[a] = (grid.n(a) - idx[a]) % grid.n(a);
        }
        t.data[grid.flat(&rev[..dim])] = *v;
    }
    t
}

impl LearnedHierarchy {
    /// Build a hierarchy at the classical initialization: Jacobi-equivalent
    /// smoothing kernels, rediscretized Laplacian kernels, full-weighting /
    /// linear transfer kernels, a delta-probed coarsest inverse, and
    /// correction networks with zeroed output layers.
    pub fn classical_init(
        grid: &Grid,
        variant: MgVariant,
        cfg: HierarchyCfg,
        seed: u64,
    ) -> Result<LearnedHierarchy> {
        if !grid.all_periodic() {
            return Err(Error::Usage("learned multigrid requires an all-periodic grid".into()));
        }
        if cfg.kernel_size % 2 == 0 {
            return Err(Error::Usage("kernel size must be odd".into()));
        }
        let levels = cfg.levels;
        if levels < 2 {
            return Err(Error::Usage("hierarchy needs at least 2 levels".into()));
        }
        let dim = grid.dim();
        let mut grids = vec![grid.clone()];
        for _ in 1..levels {
            grids.push(grids.last().unwrap().coarsen()?);
        }
        for a in 0..dim {
            if grids[levels - 1].n(a) < 4 {
                return Err(Error::Usage("coarsest level below 4 points per axis".into()));
            }
        }
        if variant != MgVariant::Nmg {
            for l in 1..levels.saturating_sub(1) {
                for a in 0..dim {
                    if grids[l].n(a) % 4 != 0 {
                        return Err(Error::Usage(format!(
                            "correction level {l} needs axis sizes divisible by 4"
                        )));
                    }
                }
            }
        }

        let mut params = ParamStore::new();
        let w = cfg.kernel_size;
        for l in 0..levels - 1 {
            // Jacobi-equivalent smoother: omega/diag at the center tap
            let mut m = tensor_kernel(dim, w, &{
                let mut z = vec![0.0; w];
                z[w / 2] = 1.0;
                z
            });
            let scale = cfg.jacobi_weight / jacobi_diag(&grids[l]);
            for v in &mut m.data {
                *v *= scale;
            }
            params.insert(&format!("smooth/{l}"), m);
            params.insert(
                &format!("restrict/{l}"),
                tensor_kernel(dim, 3, &[0.25, 0.5, 0.25]),
            );
            params.insert(&format!("prolong/{l}"), tensor_kernel(dim, 3, &[0.5, 1.0, 0.5]));
            if l >= 1 {
                params.insert(&format!("diff/{l}"), laplacian_kernel(&grids[l], w));
            }
        }
        params.insert(
            "coarse_inv",
            coarse_inverse_kernel(&grids[levels - 1], cfg.coarse_sweeps, cfg.jacobi_weight),
        );

        if variant != MgVariant::Nmg {
            let hc = cfg.hidden_channels;
            let bands = 1usize << dim;
            let ks: Vec<usize> = std::iter::repeat(3).take(dim).collect();
            let kshape = |co: usize, ci: usize| -> Vec<usize> {
                let mut s = vec![co, ci];
                s.extend_from_slice(&ks);
                s
            };
            let kvol: usize = ks.iter().product();
            for l in 1..levels - 1 {
                let p = |name: &str| format!("corr/{l}/{name}");
                match variant {
                    MgVariant::WtcnnMg => {
                        params.insert(
                            &p("enc1"),
                            xavier(&kshape(hc, bands), bands * kvol, hc * kvol, seed, &[l as u64, 1]),
                        );
                        params.insert(
                            &p("enc2"),
                            xavier(&kshape(hc, hc * bands), hc * bands * kvol, hc * kvol, seed, &[l as u64, 2]),
                        );
                        params.insert(
                            &p("dec1"),
                            xavier(&kshape(hc * bands, hc), hc * kvol, hc * bands * kvol, seed, &[l as u64, 3]),
                        );
                        params.insert(&p("out"), Tensor::zeros(&kshape(bands, hc)));
                    }
                    MgVariant::CnnMg => {
                        params.insert(
                            &p("down1"),
                            xavier(&kshape(bands, 1), kvol, bands * kvol, seed, &[l as u64, 10]),
                        );
                        params.insert(
                            &p("enc1"),
                            xavier(&kshape(hc, bands), bands * kvol, hc * kvol, seed, &[l as u64, 11]),
                        );
                        params.insert(
                            &p("down2"),
                            xavier(&kshape(hc * bands, hc), hc * kvol, hc * bands * kvol, seed, &[l as u64, 12]),
                        );
                        params.insert(
                            &p("enc2"),
                            xavier(&kshape(hc, hc * bands), hc * bands * kvol, hc * kvol, seed, &[l as u64, 13]),
                        );
                        params.insert(
                            &p("dec1"),
                            xavier(&kshape(hc * bands, hc), hc * kvol, hc * bands * kvol, seed, &[l as u64, 14]),
                        );
                        // transposed conv kernels: [c_out(from), c_in(to), k...]
                        params.insert(
                            &p("up1"),
                            xavier(&kshape(hc * bands, hc), hc * bands * kvol, hc * kvol, seed, &[l as u64, 15]),
                        );
                        params.insert(&p("out"), Tensor::zeros(&kshape(bands, hc)));
                        params.insert(
                            &p("up2"),
                            xavier(&kshape(bands, 1), bands * kvol, kvol, seed, &[l as u64, 16]),
                        );
                    }
                    MgVariant::Nmg => unreachable!(),
                }
            }
        }

        Ok(LearnedHierarchy { grid: grid.clone(), variant, cfg, params, grids })
    }

    pub fn level_grid(&self, level: usize) -> &Grid {
        &self.grids[level]
    }

    /// Correction network forward (Eq.-11 style nesting) at a coarse level.
    fn correction(&self, tape: &mut Tape, vars: &ParamVars, level: usize, b: Var) -> Var {
        let p = |name: &str| format!("corr/{level}/{name}");
        match self.variant {
            MgVariant::Nmg => unreachable!("no correction network in NMG"),
            MgVariant::WtcnnMg => {
                let w1 = tape.dwt(b);
                let c1 = tape.conv(w1, vars.get(&p("enc1")), 1, Anchor::Centered);
                let e1 = tape.pointwise(c1, Nonlin::Tanh);
                let w2 = tape.dwt(e1);
                let c2 = tape.conv(w2, vars.get(&p("enc2")), 1, Anchor::Centered);
                let e2 = tape.pointwise(c2, Nonlin::Tanh);
                let c3 = tape.conv(e2, vars.get(&p("dec1")), 1, Anchor::Centered);
                let d1 = tape.pointwise(c3, Nonlin::Tanh);
                let u1 = tape.idwt(d1);
                let c4 = tape.conv(u1, vars.get(&p("out")), 1, Anchor::Centered);
                tape.idwt(c4)
            }
            MgVariant::CnnMg => {
                let w1 = tape.conv(b, vars.get(&p("down1")), 2, Anchor::Centered);
                let c1 = tape.conv(w1, vars.get(&p("enc1")), 1, Anchor::Centered);
                let e1 = tape.pointwise(c1, Nonlin::Tanh);
                let w2 = tape.conv(e1, vars.get(&p("down2")), 2, Anchor::Centered);
                let c2 = tape.conv(w2, vars.get(&p("enc2")), 1, Anchor::Centered);
                let e2 = tape.pointwise(c2, Nonlin::Tanh);
                let c3 = tape.conv(e2, vars.get(&p("dec1")), 1, Anchor::Centered);
                let d1 = tape.pointwise(c3, Nonlin::Tanh);
                let u1 = tape.conv_transpose(d1, vars.get(&p("up1")), 2);
                let c4 = tape.conv(u1, vars.get(&p("out")), 1, Anchor::Centered);
                tape.conv_transpose(c4, vars.get(&p("up2")), 2)
            }
        }
    }

    /// Differentiation operator at a level: the exact stencil on the finest
    /// level (so outer residuals are trustworthy), a learned kernel below.
    fn apply_a(&self, tape: &mut Tape, vars: &ParamVars, level: usize, x: Var) -> Var {
        if level == 0 {
            tape.laplace(x)
        } else {
            tape.conv(x, vars.get(&format!("diff/{level}")), 1, Anchor::Centered)
        }
    }

    fn vcycle_tape(&self, tape: &mut Tape, vars: &ParamVars, level: usize, b: Var, x0: Var) -> Var {
        let last = self.cfg.levels - 1;
        if level == last {
            return tape.conv(b, vars.get("coarse_inv"), 1, Anchor::Zero);
        }
        let smooth = vars.get(&format!("smooth/{level}"));
        let mut x = x0;
        for _ in 0..self.cfg.pre_sweeps {
            let ax = self.apply_a(tape, vars, level, x);
            let r = tape.sub(b, ax);
            let dx = tape.conv(r, smooth, 1, Anchor::Centered);
            x = tape.add(x, dx);
        }
        let ax = self.apply_a(tape, vars, level, x);
        let r = tape.sub(b, ax);
        let bc = tape.conv(r, vars.get(&format!("restrict/{level}")), 2, Anchor::Centered);
        let mut cshape = vec![1usize];
        cshape.extend_from_slice(self.grids[level + 1].shape());
        let xc0 = tape.leaf(Tensor::zeros(&cshape), false);
        let xc = self.vcycle_tape(tape, vars, level + 1, bc, xc0);
        let px = tape.conv_transpose(xc, vars.get(&format!("prolong/{level}")), 2);
        x = tape.add(x, px);
        if self.variant != MgVariant::Nmg && level >= 1 {
            let nn = self.correction(tape, vars, level, b);
            x = tape.add(x, nn);
        }
        for _ in 0..self.cfg.post_sweeps {
            let ax = self.apply_a(tape, vars, level, x);
            let r = tape.sub(b, ax);
            let dx = tape.conv(r, smooth, 1, Anchor::Centered);
            x = tape.add(x, dx);
        }
        x
    }

    /// `cycles` V-cycles on the tape, starting from `x0`; the constant null
    /// space is projected out after every cycle.
    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, b: Var, x0: Var, cycles: usize) -> Var {
        let mut x = x0;
        for _ in 0..cycles {
            x = self.vcycle_tape(tape, vars, 0, b, x);
            x = tape.mean_sub(x);
        }
        x
    }

    fn field_shape(&self) -> Vec<usize> {
        let mut s = vec![1usize];
        s.extend_from_slice(self.grid.shape());
        s
    }

    /// One V-cycle without gradient tracking.
    pub fn vcycle(&self, b: &Field, x0: &Field) -> Result<Field> {
        if b.grid() != &self.grid || x0.grid() != &self.grid {
            return Err(Error::Shape("b/x0 grid does not match the hierarchy".into()));
        }
        let mut tape = Tape::with_grid(&self.grid);
        let vars = self.params.leaf_all(&mut tape, false);
        let shape = self.field_shape();
        let bv = tape.leaf(Tensor::from_vec(&shape, b.data().to_vec()), false);
        let xv = tape.leaf(Tensor::from_vec(&shape, x0.data().to_vec()), false);
        let out = self.forward(&mut tape, &vars, bv, xv, 1);
        Field::from_data(&self.grid, 1, tape.value(out).data.clone())
    }

    /// Repeat V-cycles until `‖Ax − b‖/‖b‖ ≤ tol`; the residual is always
    /// recomputed with the exact operator, never the learned kernels.
    pub fn solve(&self, b: &Field, x0: &Field, tol: f64, max_cycles: usize) -> Result<(Field, SolverReport)> {
        let op = LaplaceOperator::new(&self.grid);
        let b_norm = b.norm_l2();
        let denom = if b_norm > 0.0 { b_norm } else { 1.0 };
        let mut report = SolverReport::new(tol);
        let mut x = x0.clone();
        if op.has_nullspace() {
            x.sub_mean();
        }
        let residual = |x: &Field| -> Result<f64> {
            let ax = op.apply(x)?;
            let mut r = ax;
            r.axpy(-1.0, b);
            Ok(r.norm_l2() / denom)
        };
        let r0 = residual(&x)?;
        report.residual_history.push(r0);
        if r0 <= tol {
            report.converged = true;
            return Ok((x, report));
        }
        for cycle in 0..max_cycles {
            x = self.vcycle(b, &x)?;
            if op.has_nullspace() {
                x.sub_mean();
            }
            let r = residual(&x)?;
            report.iterations = cycle + 1;
            report.residual_history.push(r);
            if r <= tol {
                report.converged = true;
                break;
            }
            if !r.is_finite() || r > 10.0 * r0 {
                report.failure = Some(format!("diverged: residual {r:e} vs initial {r0:e}"));
                break;
            }
        }
        Ok((x, report))
    }
}

/// Architecture descriptor stored next to the parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyMeta {
    pub kind: String,
    pub grid: Grid,
    pub variant: MgVariant,
    pub cfg: HierarchyCfg,
}

impl LearnedHierarchy {
    pub fn to_container(&self) -> Result<crate::container::Container> {
        let mut c = crate::container::Container::new();
        c.set_meta(&HierarchyMeta {
            kind: "learned-mg".into(),
            grid: self.grid.clone(),
            variant: self.variant,
            cfg: self.cfg.clone(),
        })?;
        self.params.store(&mut c)?;
        Ok(c)
    }

    pub fn from_container(c: &crate::container::Container) -> Result<LearnedHierarchy> {
        let meta: HierarchyMeta = c.meta()?;
        if meta.kind != "learned-mg" {
            return Err(Error::Format(format!("container holds {:?}, not learned-mg", meta.kind)));
        }
        let mut h = LearnedHierarchy::classical_init(&meta.grid, meta.variant, meta.cfg, 0)?;
        h.params.load(c)?;
        Ok(h)
    }
}
