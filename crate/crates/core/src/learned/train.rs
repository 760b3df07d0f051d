//! Adam training loops for the Poisson network and the learned multigrid.
//!
//! Loss: `L_p + λ_eq·L_eq + λ_wd·‖θ‖²` with `L_p = ‖p − p_train‖/‖p_train‖`
//! and `L_eq = ‖A p − b_train‖/‖b_train‖`, averaged over the batch. The
//! learning rate starts at `lr0` and is halved every `lr_halve_every`
//! epochs. All runs are deterministic for a fixed seed (batch-parallel
//! gradient reduction is ordered).

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::fmt_g17;
use crate::error::{Error, Result};
use crate::learned::hierarchy::LearnedHierarchy;
use crate::learned::nets::PoissonNn;
use crate::learned::params::ParamStore;
use crate::learned::tape::{Tape, Tensor};
use crate::pairgen::Dataset;
use crate::rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub lr_halve_every: usize,
    pub lambda_eq: f64,
    pub lambda_wd: f64,
    /// V-cycles unrolled per loss evaluation (hierarchy training only).
    pub vcycles: usize,
    /// Pairs per epoch; `None` runs the full training split.
    pub batch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            lr0: 1e-3,
            lr_halve_every: 500,
            lambda_eq: 1.0,
            lambda_wd: 1e-6,
            vcycles: 1,
            batch: None,
            seed: 0,
        }
    }
}

pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr0 * 0.5f64.powi((epoch / cfg.lr_halve_every) as i32)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_p: f64,
    pub loss_eq: f64,
    pub loss_wd: f64,
    pub total: f64,
}

/// RFC-4180 CSV of the loss history.
pub fn loss_curve_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,loss_p,loss_eq,loss_wd,total\r\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\r\n",
            r.epoch,
            fmt_g17(r.lr),
            fmt_g17(r.loss_p),
            fmt_g17(r.loss_eq),
            fmt_g17(r.loss_wd),
            fmt_g17(r.total)
        ));
    }
    out
}

pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Adam {
        let sizes: Vec<usize> = params.iter().map(|(_, t)| t.numel()).collect();
        Adam {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (pi, (_, tensor)) in params.iter_mut().enumerate() {
            let g = &grads[pi];
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            for i in 0..tensor.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                tensor.data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Deterministic batch of training-pair indices for an epoch.
fn epoch_batch(data: &Dataset, cfg: &TrainConfig, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = data.train.clone();
    match cfg.batch {
        None => idx,
        Some(b) if b >= idx.len() => idx,
        Some(b) => {
            let mut rng = rng::stream(cfg.seed, &[0xba7c, epoch as u64]);
            idx.shuffle(&mut rng);
            idx.truncate(b);
            idx
        }
    }
}

fn check_finite(label: &str, epoch: usize, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{label} became non-finite at epoch {epoch}")))
    }
}

/// Train the Poisson network on the training split of a dataset.
pub fn train_poisson_nn(
    model: &mut PoissonNn,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    if data.train.is_empty() {
        return Err(Error::Usage("empty training split".into()));
    }
    if data.grid != model.grid {
        return Err(Error::Shape("dataset grid does not match the model grid".into()));
    }
    let grid = model.grid.clone();
    let mut shape = vec![1usize];
    shape.extend_from_slice(grid.shape());
    let features = PoissonNn::feature_matrix(&grid, model.cfg.freqs);
    let mut adam = Adam::new(&model.params);
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let batch = epoch_batch(data, cfg, epoch);
        let inv = 1.0 / batch.len() as f64;
        let mut tape = Tape::with_grid(&grid);
        let vars = model.params.leaf_all(&mut tape, true);
        let feat = tape.leaf(features.clone(), false);
        let (g_map, h_map) = model.emit_fields(&mut tape, &vars, &grid, feat);

        let mut loss_p_acc = None;
        let mut loss_eq_acc = None;
        for &pi in &batch {
            let pair = &data.pairs[pi];
            let b = tape.leaf(Tensor::from_vec(&shape, pair.rhs.data().to_vec()), false);
            let target = tape.leaf(Tensor::from_vec(&shape, pair.solution.data().to_vec()), false);
            let pred = model.predict(&mut tape, g_map, h_map, b);
            let lp = tape.rel_l2(pred, target);
            let ax = tape.laplace(pred);
            let leq = tape.rel_l2(ax, b);
            loss_p_acc = Some(match loss_p_acc {
                None => lp,
                Some(acc) => tape.add(acc, lp),
            });
            loss_eq_acc = Some(match loss_eq_acc {
                None => leq,
                Some(acc) => tape.add(acc, leq),
            });
        }
        let lp_mean = tape.scale(loss_p_acc.unwrap(), inv);
        let leq_mean = tape.scale(loss_eq_acc.unwrap(), inv);
        let mut total = tape.add_scaled(lp_mean, leq_mean, cfg.lambda_eq);
        if cfg.lambda_wd != 0.0 {
            let mut wd_acc = None;
            for (_, v) in vars.iter() {
                let sq = tape.sum_sq(v);
                wd_acc = Some(match wd_acc {
                    None => sq,
                    Some(acc) => tape.add(acc, sq),
                });
            }
            total = tape.add_scaled(total, wd_acc.unwrap(), cfg.lambda_wd);
        }
        let record = EpochRecord {
            epoch,
            lr: lr_at(cfg, epoch),
            loss_p: tape.value(lp_mean).data[0],
            loss_eq: tape.value(leq_mean).data[0],
            loss_wd: cfg.lambda_wd * model.params.squared_norm(),
            total: tape.value(total).data[0],
        };
        check_finite("loss", epoch, record.total)?;
        tape.backward(total);
        let grads = model.params.grads(&tape, &vars);
        adam.step(&mut model.params, &grads, record.lr);
        records.push(record);
    }
    Ok(records)
}

/// Train a learned multigrid hierarchy: the loss is evaluated on the output
/// of `cfg.vcycles` V-cycles from a zero initial guess.
pub fn train_hierarchy(
    h: &mut LearnedHierarchy,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    if data.train.is_empty() {
        return Err(Error::Usage("empty training split".into()));
    }
    if data.grid != h.grid {
        return Err(Error::Shape("dataset grid does not match the hierarchy grid".into()));
    }
    let grid = h.grid.clone();
    let mut shape = vec![1usize];
    shape.extend_from_slice(grid.shape());
    let mut adam = Adam::new(&h.params);
    let mut records = Vec::with_capacity(cfg.epochs);
    let threads = rayon::current_num_threads().max(1);

    for epoch in 0..cfg.epochs {
        let batch = epoch_batch(data, cfg, epoch);
        let inv = 1.0 / batch.len() as f64;
        // fixed contiguous chunks so the reduction order is deterministic
        let chunk = batch.len().div_ceil(threads);
        let chunks: Vec<&[usize]> = batch.chunks(chunk).collect();
        let partials: Result<Vec<(f64, f64, Vec<Vec<f64>>)>> = chunks
            .into_par_iter()
            .map(|ids| {
                let mut tape = Tape::with_grid(&grid);
                let vars = h.params.leaf_all(&mut tape, true);
                let mut lp_acc = None;
                let mut leq_acc = None;
                for &pi in ids {
                    let pair = &data.pairs[pi];
                    let b = tape.leaf(Tensor::from_vec(&shape, pair.rhs.data().to_vec()), false);
                    let target =
                        tape.leaf(Tensor::from_vec(&shape, pair.solution.data().to_vec()), false);
                    let x0 = tape.leaf(Tensor::zeros(&shape), false);
                    let x = h.forward(&mut tape, &vars, b, x0, cfg.vcycles);
                    let lp = tape.rel_l2(x, target);
                    let ax = tape.laplace(x);
                    let leq = tape.rel_l2(ax, b);
                    lp_acc = Some(match lp_acc {
                        None => lp,
                        Some(acc) => tape.add(acc, lp),
                    });
                    leq_acc = Some(match leq_acc {
                        None => leq,
                        Some(acc) => tape.add(acc, leq),
                    });
                }
                let lp_sum = lp_acc.unwrap();
                let leq_sum = leq_acc.unwrap();
                let total = tape.add_scaled(lp_sum, leq_sum, cfg.lambda_eq);
                let scaled = tape.scale(total, inv);
                tape.backward(scaled);
                let grads = h.params.grads(&tape, &vars);
                Ok((tape.value(lp_sum).data[0], tape.value(leq_sum).data[0], grads))
            })
            .collect();
        let partials = partials?;

        let mut loss_p = 0.0;
        let mut loss_eq = 0.0;
        let mut grads: Vec<Vec<f64>> = h.params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        for (lp, leq, g) in &partials {
            loss_p += lp;
            loss_eq += leq;
            for (acc, add) in grads.iter_mut().zip(g) {
                for (a, b) in acc.iter_mut().zip(add) {
                    *a += b;
                }
            }
        }
        loss_p *= inv;
        loss_eq *= inv;
        // weight decay: λ‖θ‖², gradient 2λθ
        let mut loss_wd = 0.0;
        if cfg.lambda_wd != 0.0 {
            for (pi, (_, t)) in h.params.iter().enumerate() {
                for (g, v) in grads[pi].iter_mut().zip(&t.data) {
                    *g += 2.0 * cfg.lambda_wd * v;
                }
                loss_wd += cfg.lambda_wd * t.data.iter().map(|v| v * v).sum::<f64>();
            }
        }
        let record = EpochRecord {
            epoch,
            lr: lr_at(cfg, epoch),
            loss_p,
            loss_eq,
            loss_wd,
            total: loss_p + cfg.lambda_eq * loss_eq + loss_wd,
        };
        check_finite("loss", epoch, record.total)?;
        adam.step(&mut h.params, &grads, record.lr);
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::learned::hierarchy::{HierarchyCfg, MgVariant};
    use crate::learned::nets::FourierNetCfg;
    use crate::pairgen::{generate_dataset, GenParams};

    #[test]
    fn lr_schedule_halves_every_500() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(&cfg, 0), 1e-3);
        assert_eq!(lr_at(&cfg, 499), 1e-3);
        assert_eq!(lr_at(&cfg, 500), 5e-4);
        assert_eq!(lr_at(&cfg, 1000), 2.5e-4);
    }

    #[test]
    fn one_epoch_descends_on_one_pair() {
        let g = Grid::periodic(&[32, 32]);
        let data = generate_dataset(&GenParams::default_spectrum(32), 1, &g, 3).unwrap();
        let mut model =
            PoissonNn::new(&g, FourierNetCfg { freqs: 8, hidden: 16, hidden_layers: 2 }, 5).unwrap();
        let cfg = TrainConfig { epochs: 2, lambda_wd: 0.0, ..Default::default() };
        let records = train_poisson_nn(&mut model, &data, &cfg).unwrap();
        assert!(
            records[1].total < records[0].total,
            "loss did not descend: {} -> {}",
            records[0].total,
            records[1].total
        );
    }

    #[test]
    fn training_is_deterministic() {
        let g = Grid::periodic(&[16, 16]);
        let data = generate_dataset(&GenParams::default_spectrum(16), 4, &g, 7).unwrap();
        let run = || {
            let mut model =
                PoissonNn::new(&g, FourierNetCfg { freqs: 4, hidden: 8, hidden_layers: 2 }, 11).unwrap();
            let cfg = TrainConfig { epochs: 3, ..Default::default() };
            train_poisson_nn(&mut model, &data, &cfg).unwrap()
        };
        let a = run();
        let b = run();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.total, rb.total);
        }
    }

    #[test]
    fn hierarchy_epoch_descends() {
        let g = Grid::periodic(&[32, 32]);
        let data = generate_dataset(&GenParams::default_spectrum(32), 4, &g, 9).unwrap();
        let mut h = LearnedHierarchy::classical_init(
            &g,
            MgVariant::WtcnnMg,
            HierarchyCfg::for_grid(&g),
            13,
        )
        .unwrap();
        let cfg = TrainConfig { epochs: 4, lambda_wd: 0.0, ..Default::default() };
        let records = train_hierarchy(&mut h, &data, &cfg).unwrap();
        assert!(records.last().unwrap().total < records[0].total);
    }

    #[test]
    fn zero_weight_decay_contributes_no_gradient() {
        // finite-difference on a single parameter entry with λ_wd = 0: the
        // gradient equals that of the data loss alone
        let g = Grid::periodic(&[16, 16]);
        let data = generate_dataset(&GenParams::default_spectrum(16), 1, &g, 2).unwrap();
        let pair = &data.pairs[0];
        let model =
            PoissonNn::new(&g, FourierNetCfg { freqs: 2, hidden: 4, hidden_layers: 2 }, 3).unwrap();
        let mut shape = vec![1usize];
        shape.extend_from_slice(g.shape());
        let features = PoissonNn::feature_matrix(&g, model.cfg.freqs);

        let loss_of = |params: &ParamStore, with_wd: f64| -> f64 {
            let mut tape = Tape::with_grid(&g);
            let vars = params.leaf_all(&mut tape, true);
            let feat = tape.leaf(features.clone(), false);
            let (g_map, h_map) = model.emit_fields(&mut tape, &vars, &g, feat);
            let b = tape.leaf(Tensor::from_vec(&shape, pair.rhs.data().to_vec()), false);
            let target = tape.leaf(Tensor::from_vec(&shape, pair.solution.data().to_vec()), false);
            let pred = model.predict(&mut tape, g_map, h_map, b);
            let lp = tape.rel_l2(pred, target);
            if with_wd == 0.0 {
                return tape.value(lp).data[0];
            }
            let mut wd_acc = None;
            for (_, v) in vars.iter() {
                let sq = tape.sum_sq(v);
                wd_acc = Some(match wd_acc {
                    None => sq,
                    Some(acc) => tape.add(acc, sq),
                });
            }
            let total = tape.add_scaled(lp, wd_acc.unwrap(), with_wd);
            tape.value(total).data[0]
        };

        // analytic gradient at λ_wd = 0
        let mut tape = Tape::with_grid(&g);
        let vars = model.params.leaf_all(&mut tape, true);
        let feat = tape.leaf(features.clone(), false);
        let (g_map, h_map) = model.emit_fields(&mut tape, &vars, &g, feat);
        let b = tape.leaf(Tensor::from_vec(&shape, pair.rhs.data().to_vec()), false);
        let target = tape.leaf(Tensor::from_vec(&shape, pair.solution.data().to_vec()), false);
        let pred = model.predict(&mut tape, g_map, h_map, b);
        let lp = tape.rel_l2(pred, target);
        tape.backward(lp);
        let analytic = tape.grad(vars.get("ng/w0")).unwrap()[3];

        let eps = 1e-6;
        let mut plus = model.params.clone();
        for (name, t) in plus.iter_mut() {
            if name == "ng/w0" {
                t.data[3] += eps;
            }
        }
        let mut minus = model.params.clone();
        for (name, t) in minus.iter_mut() {
            if name == "ng/w0" {
                t.data[3] -= eps;
            }
        }
        let fd = (loss_of(&plus, 0.0) - loss_of(&minus, 0.0)) / (2.0 * eps);
        assert!((analytic - fd).abs() <= 1e-6 * fd.abs().max(1e-8), "{analytic} vs {fd}");
    }
}
