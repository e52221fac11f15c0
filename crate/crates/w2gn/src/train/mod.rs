//! Training loops: the non-minimax regularized-correlations objective with
//! cycle regularizers and the stop-gradient heuristic, plus the
//! single-discriminator and minimax baselines.

use ndarray::{Array1, Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::BatchSource;
use crate::icnn::{DenseIcnn, DenseIcnnSpec, IcnnError};
use crate::metrics::{energy_distance, mean_sq_diff, MetricsError};
use crate::opt::Adam;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: u64 },
    #[error(transparent)]
    Icnn(#[from] IcnnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_l1() -> f64 {
    1e-10
}
fn default_true() -> bool {
    true
}
fn default_pretrain() -> usize {
    1000
}
fn default_pretrain_lr() -> f64 {
    1e-2
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub spec: DenseIcnnSpec,
    /// Weight of the target-side cycle regularizer (the lambda of the paper).
    pub lambda_y: f64,
    /// Weight of the mirrored source-side regularizer; 0 disables it.
    #[serde(default)]
    pub lambda_x: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    pub batch_size: usize,
    pub iters: usize,
    #[serde(default = "default_l1")]
    pub l1_penalty: f64,
    /// Do not backpropagate into the conjugate net through the correlation
    /// term; its gradient then flows only through the cycle regularizers.
    #[serde(default = "default_true")]
    pub stop_gradient: bool,
    /// Optional N(0, sigma^2 I) noise added to every batch.
    #[serde(default)]
    pub smoothing_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pretrain")]
    pub pretrain_iters: usize,
    /// Identity pretraining tolerates a larger step than the main loop.
    #[serde(default = "default_pretrain_lr")]
    pub pretrain_lr: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.spec.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        if self.lambda_y < 0.0 || self.lambda_x < 0.0 {
            return Err(TrainError::Config("lambda weights must be nonnegative".into()));
        }
        if self.lr <= 0.0 {
            return Err(TrainError::Config("lr must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::Config("batch_size must be at least 2".into()));
        }
        if self.iters == 0 {
            return Err(TrainError::Config("iters must be positive".into()));
        }
        if self.l1_penalty < 0.0 || self.smoothing_sigma < 0.0 {
            return Err(TrainError::Config("penalties must be nonnegative".into()));
        }
        Ok(())
    }

    /// The sufficient condition of the correlation bound wants
    /// lambda * beta > 1; violating it is legal but worth a warning.
    pub fn lambda_beta_warning(&self) -> Option<String> {
        if self.lambda_y * self.spec.beta <= 1.0 {
            Some(format!(
                "lambda_y * beta = {:.3e} <= 1; the correlation upper bound is not guaranteed",
                self.lambda_y * self.spec.beta
            ))
        } else {
            None
        }
    }
}

/// Both networks plus optimizer state; one run owns this exclusively.
pub struct TrainState {
    pub theta: DenseIcnn,
    pub omega: DenseIcnn,
    adam_theta: Adam,
    adam_omega: Adam,
    pub iteration: u64,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let theta = DenseIcnn::init(cfg.spec.clone(), cfg.seed)?;
        let omega = theta.clone();
        let n = theta.param_count();
        Ok(TrainState {
            theta,
            omega,
            adam_theta: Adam::new(n, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
            adam_omega: Adam::new(n, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e3779b97f4a7c15)),
        })
    }

    /// Resets the conjugate net to a copy of the primary one.
    pub fn copy_theta_to_omega(&mut self) {
        self.omega = self.theta.clone();
    }
}

/// One logged row of a training run. `wall_ms` is the only
/// non-deterministic field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: u64,
    pub loss: f64,
    pub corr_hat: f64,
    pub term_x: f64,
    pub term_y: f64,
    pub r_y: f64,
    pub r_x: f64,
    pub ed_forward: f64,
    pub ed_inverse: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RunReport {
    pub records: Vec<IterRecord>,
    pub pretrain_mse: f64,
    pub final_corr_hat: f64,
    pub wall_total_ms: f64,
    pub iters_per_sec: f64,
}

/// The two correlation brackets: mean psi_theta over the source batch and
/// mean <grad psi_omega(y), y> - psi_theta(grad psi_omega(y)) over the target.
pub fn corr_terms(
    theta: &DenseIcnn,
    omega: &DenseIcnn,
    batch_x: &ArrayView2<f64>,
    batch_y: &ArrayView2<f64>,
) -> Result<(f64, f64), TrainError> {
    let n = batch_x.nrows() as f64;
    let m = batch_y.nrows() as f64;
    let term_x = theta.forward(batch_x)?.sum() / n;
    let u = omega.push(batch_y)?;
    let psi_u = theta.forward(&u.view())?;
    let mut term_y = 0.0;
    for (j, row) in u.rows().into_iter().enumerate() {
        let inner: f64 = row.iter().zip(batch_y.row(j).iter()).map(|(a, b)| a * b).sum();
        term_y += inner - psi_u[j];
    }
    Ok((term_x, term_y / m))
}

/// Target-side cycle loss: mean || push_theta(push_omega(y)) - y ||^2.
pub fn cycle_reg_y(
    theta: &DenseIcnn,
    omega: &DenseIcnn,
    batch_y: &ArrayView2<f64>,
) -> Result<f64, TrainError> {
    let u = omega.push(batch_y)?;
    let back = theta.push(&u.view())?;
    Ok(mean_sq_diff(&back.view(), batch_y))
}

/// Source-side cycle loss: mean || push_omega(push_theta(x)) - x ||^2.
pub fn cycle_reg_x(
    theta: &DenseIcnn,
    omega: &DenseIcnn,
    batch_x: &ArrayView2<f64>,
) -> Result<f64, TrainError> {
    let v = theta.push(batch_x)?;
    let back = omega.push(&v.view())?;
    Ok(mean_sq_diff(&back.view(), batch_x))
}

/// Loss pieces of one step; `r_x` is only evaluated when lambda_x > 0.
#[derive(Debug, Clone, Copy)]
pub struct StepMetrics {
    pub loss: f64,
    pub term_x: f64,
    pub term_y: f64,
    pub r_y: f64,
    pub r_x: Option<f64>,
}

impl StepMetrics {
    pub fn corr_hat(&self, lambda_y: f64) -> f64 {
        self.term_x + self.term_y + 0.5 * lambda_y * self.r_y
    }
}

/// Full loss and both parameter gradients for one batch pair, without
/// touching optimizer state. The omega gradient honours `stop_gradient`.
pub fn w2gn_loss_grads(
    theta: &DenseIcnn,
    omega: &DenseIcnn,
    cfg: &TrainConfig,
    batch_x: &ArrayView2<f64>,
    batch_y: &ArrayView2<f64>,
) -> Result<(StepMetrics, Vec<f64>, Vec<f64>), TrainError> {
    let n = batch_x.nrows() as f64;
    let m = batch_y.nrows() as f64;
    let ones_x: Array1<f64> = Array1::ones(batch_x.nrows());
    let ones_y: Array1<f64> = Array1::ones(batch_y.nrows());

    // u = grad psi_omega(Y), the candidate inverse images of the target batch
    let u = omega.push(batch_y)?;

    // source bracket: mean psi_theta(x)
    let pos_seeds = ones_x.mapv(|v| v / n);
    let (vals_x, grads_a, dx_a) = theta.backward(batch_x, &pos_seeds.view())?;
    let term_x = vals_x.sum() / n;

    // target bracket: mean <u, y> - psi_theta(u); the -1/m seeds make this
    // pass also yield the theta-gradient of the -psi_theta(u) piece
    let neg_seeds = ones_y.mapv(|v| -v / m);
    let (vals_u, grads_b, _) = theta.backward(&u.view(), &neg_seeds.view())?;
    let mut term_y = 0.0;
    for (j, row) in u.rows().into_iter().enumerate() {
        let inner: f64 = row.iter().zip(batch_y.row(j).iter()).map(|(a, b)| a * b).sum();
        term_y += inner - vals_u[j];
    }
    term_y /= m;

    // push_theta(u) and the cycle residual r = push_theta(u) - y
    let push_u = theta.push(&u.view())?;
    let residual_y = &push_u - batch_y;
    let r_y = residual_y.iter().map(|v| v * v).sum::<f64>() / m;

    let mut grads_theta = grads_a;
    for (g, b) in grads_theta.iter_mut().zip(grads_b.iter()) {
        *g += b;
    }
    let mut grads_omega = vec![0.0; omega.param_count()];

    // tangent of the omega pass over Y: cycle chain plus (unless stopped)
    // the correlation bracket's own dependence on u
    let mut omega_tangent_y: Option<Array2<f64>> = None;

    if cfg.lambda_y > 0.0 {
        // theta side of R_Y and the Hessian product feeding the omega chain
        let t_r = residual_y.mapv(|v| v * cfg.lambda_y / m);
        let dual = theta.dual_backward(&u.view(), &t_r.view(), &ones_y.view())?;
        for (g, d) in grads_theta.iter_mut().zip(dual.grads_tangent.iter()) {
            *g += d;
        }
        omega_tangent_y = Some(dual.dx_tangent);
    }
    if !cfg.stop_gradient {
        let q = (batch_y - &push_u).mapv(|v| v / m);
        omega_tangent_y = Some(match omega_tangent_y {
            Some(t) => t + &q,
            None => q,
        });
    }
    if let Some(t) = omega_tangent_y {
        let dual = omega.dual_backward(batch_y, &t.view(), &ones_y.view())?;
        for (g, d) in grads_omega.iter_mut().zip(dual.grads_tangent.iter()) {
            *g += d;
        }
    }

    // mirrored source-side cycle
    let mut r_x = None;
    if cfg.lambda_x > 0.0 {
        let v = dx_a.mapv(|g| g * n); // push_theta(X), recovered from the 1/n seeds
        let w = omega.push(&v.view())?;
        let residual_x = &w - batch_x;
        r_x = Some(residual_x.iter().map(|r| r * r).sum::<f64>() / n);
        let s = residual_x.mapv(|r| r * cfg.lambda_x / n);
        let dual_w = omega.dual_backward(&v.view(), &s.view(), &ones_x.view())?;
        for (g, d) in grads_omega.iter_mut().zip(dual_w.grads_tangent.iter()) {
            *g += d;
        }
        let dual_t = theta.dual_backward(batch_x, &dual_w.dx_tangent.view(), &ones_x.view())?;
        for (g, d) in grads_theta.iter_mut().zip(dual_t.grads_tangent.iter()) {
            *g += d;
        }
    }

    let mut loss = term_x + term_y + 0.5 * cfg.lambda_y * r_y
        + 0.5 * cfg.lambda_x * r_x.unwrap_or(0.0);
    if cfg.l1_penalty > 0.0 {
        loss += cfg.l1_penalty * (theta.l1_norm() + omega.l1_norm());
        theta.add_l1_subgradient(&mut grads_theta, cfg.l1_penalty);
        omega.add_l1_subgradient(&mut grads_omega, cfg.l1_penalty);
    }

    Ok((StepMetrics { loss, term_x, term_y, r_y, r_x }, grads_theta, grads_omega))
}

/// One optimizer step of the non-minimax objective: gradients, Adam update,
/// nonnegativity projection, iteration bump.
pub fn w2gn_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    batch_x: &ArrayView2<f64>,
    batch_y: &ArrayView2<f64>,
) -> Result<StepMetrics, TrainError> {
    let (metrics, grads_theta, grads_omega) =
        w2gn_loss_grads(&state.theta, &state.omega, cfg, batch_x, batch_y)?;
    if !metrics.loss.is_finite() {
        return Err(TrainError::NonFinite { what: "loss", iteration: state.iteration });
    }
    state.adam_theta.step(state.theta.params_mut(), &grads_theta);
    state.theta.project_nonneg();
    // with everything feeding omega disabled there is no gradient path at
    // all, so the conjugate net must stay bit-identical
    let omega_active = !(cfg.stop_gradient && cfg.lambda_y == 0.0 && cfg.lambda_x == 0.0);
    if omega_active {
        state.adam_omega.step(state.omega.params_mut(), &grads_omega);
        state.omega.project_nonneg();
    }
    state.iteration += 1;
    Ok(metrics)
}

/// Fits the input-gradient of `net` to the identity map by MSE; returns the
/// final batch MSE.
pub fn pretrain_identity<S: BatchSource>(
    net: &mut DenseIcnn,
    sampler: &mut S,
    iters: usize,
    batch_size: usize,
    lr: f64,
) -> Result<f64, TrainError> {
    let mut adam = Adam::new(net.param_count(), lr, 0.9, 0.999, 1e-8);
    let mut mse = 0.0;
    for it in 0..iters.max(1) {
        let x = sampler.sample(batch_size);
        let n = x.nrows() as f64;
        let push = net.push(&x.view())?;
        let residual = &push - &x;
        mse = residual.iter().map(|v| v * v).sum::<f64>() / n;
        if !mse.is_finite() {
            return Err(TrainError::NonFinite { what: "pretrain mse", iteration: it as u64 });
        }
        if iters == 0 {
            break;
        }
        let t = residual.mapv(|v| 2.0 * v / n);
        let ones = Array1::ones(x.nrows());
        let dual = net.dual_backward(&x.view(), &t.view(), &ones.view())?;
        adam.step(net.params_mut(), &dual.grads_tangent);
        net.project_nonneg();
    }
    Ok(mse)
}

fn add_noise(batch: &mut Array2<f64>, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        for v in batch.iter_mut() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn eval_record<P: BatchSource, Q: BatchSource>(
    state: &TrainState,
    metrics: &StepMetrics,
    cfg: &TrainConfig,
    sampler_p: &mut P,
    sampler_q: &mut Q,
    wall_ms: f64,
) -> Result<IterRecord, TrainError> {
    let n = cfg.batch_size.min(512);
    let xe = sampler_p.sample(n);
    let ye = sampler_q.sample(n);
    let fwd = state.theta.push(&xe.view())?;
    let inv = state.omega.push(&ye.view())?;
    let ed_forward = energy_distance(&fwd.view(), &ye.view())?;
    let ed_inverse = energy_distance(&inv.view(), &xe.view())?;
    let r_x = match metrics.r_x {
        Some(v) => v,
        None => cycle_reg_x(&state.theta, &state.omega, &xe.view())?,
    };
    Ok(IterRecord {
        iteration: state.iteration,
        loss: metrics.loss,
        corr_hat: metrics.corr_hat(cfg.lambda_y),
        term_x: metrics.term_x,
        term_y: metrics.term_y,
        r_y: metrics.r_y,
        r_x,
        ed_forward,
        ed_inverse,
        wall_ms,
    })
}

/// Full procedure: identity pretraining on the primary net, weight copy to
/// the conjugate, then `cfg.iters` steps. `on_log` fires at every logged
/// record (including the final iteration).
pub fn train_w2gn_with<P, Q, F>(
    cfg: &TrainConfig,
    sampler_p: &mut P,
    sampler_q: &mut Q,
    log_interval: usize,
    mut on_log: F,
) -> Result<(TrainState, RunReport), TrainError>
where
    P: BatchSource,
    Q: BatchSource,
    F: FnMut(&TrainState, &IterRecord),
{
    cfg.validate()?;
    let started = std::time::Instant::now();
    let mut state = TrainState::new(cfg)?;
    let mut report = RunReport::default();
    report.pretrain_mse =
        pretrain_identity(&mut state.theta, sampler_p, cfg.pretrain_iters, cfg.batch_size, cfg.pretrain_lr)?;
    state.copy_theta_to_omega();

    let interval = log_interval.max(1);
    for it in 0..cfg.iters {
        let mut x = sampler_p.sample(cfg.batch_size);
        let mut y = sampler_q.sample(cfg.batch_size);
        add_noise(&mut x, cfg.smoothing_sigma, &mut state.rng);
        add_noise(&mut y, cfg.smoothing_sigma, &mut state.rng);
        let metrics = w2gn_step(&mut state, cfg, &x.view(), &y.view())?;
        if (it + 1) % interval == 0 || it + 1 == cfg.iters {
            let wall = started.elapsed().as_secs_f64() * 1e3;
            let rec = eval_record(&state, &metrics, cfg, sampler_p, sampler_q, wall)?;
            on_log(&state, &rec);
            report.final_corr_hat = rec.corr_hat;
            report.records.push(rec);
        }
    }
    report.wall_total_ms = started.elapsed().as_secs_f64() * 1e3;
    report.iters_per_sec = cfg.iters as f64 / (report.wall_total_ms / 1e3).max(1e-9);
    Ok((state, report))
}

pub fn train_w2gn<P: BatchSource, Q: BatchSource>(
    cfg: &TrainConfig,
    sampler_p: &mut P,
    sampler_q: &mut Q,
    log_interval: usize,
) -> Result<(TrainState, RunReport), TrainError> {
    train_w2gn_with(cfg, sampler_p, sampler_q, log_interval, |_, _| {})
}

/// Result of inverting the generative map at one target point.
#[derive(Debug, Clone)]
pub struct InversionResult {
    pub x_hat: Vec<f64>,
    /// Final ||grad psi(x_hat) - y||.
    pub residual: f64,
    pub converged: bool,
}

/// Batched concave maximization of <x, y> - psi(x) by backtracking gradient
/// ascent from x0 = y; rows converge independently.
pub fn invert_gradient_batch(
    net: &DenseIcnn,
    y: &ArrayView2<f64>,
    steps: usize,
    tol: f64,
) -> Result<(Array2<f64>, Vec<bool>), TrainError> {
    let n = y.nrows();
    let mut x = y.to_owned();
    let mut lr = vec![0.5f64; n];
    let ones = Array1::ones(n);
    let objective = |vals: &Array1<f64>, x: &Array2<f64>| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let inner: f64 =
                    x.row(i).iter().zip(y.row(i).iter()).map(|(a, b)| a * b).sum();
                inner - vals[i]
            })
            .collect()
    };
    let (vals, _, dx) = net.backward(&x.view(), &ones.view())?;
    let mut obj = objective(&vals, &x);
    let mut grad = {
        let mut g = -dx;
        g += y;
        g
    };
    let mut converged = vec![false; n];
    for _ in 0..steps {
        let mut active = false;
        for i in 0..n {
            let gnorm = grad.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            converged[i] = gnorm <= tol;
            active |= !converged[i];
        }
        if !active {
            break;
        }
        let mut cand = x.clone();
        for i in 0..n {
            if converged[i] {
                continue;
            }
            for (c, g) in cand.row_mut(i).iter_mut().zip(grad.row(i).iter()) {
                *c += lr[i] * g;
            }
        }
        let (vals_c, _, dx_c) = net.backward(&cand.view(), &ones.view())?;
        let obj_c = objective(&vals_c, &cand);
        for i in 0..n {
            if converged[i] {
                continue;
            }
            if obj_c[i] >= obj[i] {
                obj[i] = obj_c[i];
                for (xv, cv) in x.row_mut(i).iter_mut().zip(cand.row(i).iter()) {
                    *xv = *cv;
                }
                for (gv, (yv, dv)) in
                    grad.row_mut(i).iter_mut().zip(y.row(i).iter().zip(dx_c.row(i).iter()))
                {
                    *gv = yv - dv;
                }
                lr[i] *= 1.1;
            } else {
                lr[i] *= 0.5;
            }
        }
    }
    Ok((x, converged))
}

/// Single-point inversion of Eq-style sub-problem; see
/// [`invert_gradient_batch`] for the solver.
pub fn invert_gradient(
    net: &DenseIcnn,
    y: &[f64],
    steps: usize,
    tol: f64,
) -> Result<InversionResult, TrainError> {
    let view = ArrayView2::from_shape((1, y.len()), y)
        .map_err(|_| TrainError::Config("dimension mismatch".into()))?;
    let (x, converged) = invert_gradient_batch(net, &view, steps, tol)?;
    let x_hat = x.row(0).to_vec();
    let g = net.push_one(&x_hat)?;
    let residual =
        g.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(InversionResult { x_hat, residual, converged: converged[0] })
}

/// Single-network baseline: every step inverts the current map on the target
/// batch and applies the envelope-theorem parameter gradient.
pub fn train_single_discriminator<P: BatchSource, Q: BatchSource>(
    cfg: &TrainConfig,
    sampler_p: &mut P,
    sampler_q: &mut Q,
    log_interval: usize,
) -> Result<(DenseIcnn, RunReport), TrainError> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let mut report = RunReport::default();
    let mut net = DenseIcnn::init(cfg.spec.clone(), cfg.seed)?;
    report.pretrain_mse =
        pretrain_identity(&mut net, sampler_p, cfg.pretrain_iters, cfg.batch_size, cfg.pretrain_lr)?;
    let mut adam =
        Adam::new(net.param_count(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let interval = log_interval.max(1);
    for it in 0..cfg.iters {
        let x = sampler_p.sample(cfg.batch_size);
        let y = sampler_q.sample(cfg.batch_size);
        let n = x.nrows() as f64;
        let (x_hat, _) = invert_gradient_batch(&net, &y.view(), 200, 1e-4)?;
        let ones = Array1::from_elem(x.nrows(), 1.0 / n);
        let neg = Array1::from_elem(y.nrows(), -1.0 / n);
        let (vals_x, grads_p, _) = net.backward(&x.view(), &ones.view())?;
        let (vals_h, grads_m, _) = net.backward(&x_hat.view(), &neg.view())?;
        let mut grads = grads_p;
        for (g, m) in grads.iter_mut().zip(grads_m.iter()) {
            *g += m;
        }
        if cfg.l1_penalty > 0.0 {
            net.add_l1_subgradient(&mut grads, cfg.l1_penalty);
        }
        let term_x = vals_x.sum() / n;
        let mut term_y = 0.0;
        for (j, row) in x_hat.rows().into_iter().enumerate() {
            let inner: f64 = row.iter().zip(y.row(j).iter()).map(|(a, b)| a * b).sum();
            term_y += inner - vals_h[j];
        }
        term_y /= n;
        let loss = term_x + term_y;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { what: "loss", iteration: it as u64 });
        }
        adam.step(net.params_mut(), &grads);
        net.project_nonneg();
        if (it + 1) % interval == 0 || it + 1 == cfg.iters {
            let m = cfg.batch_size.min(512);
            let xe = sampler_p.sample(m);
            let ye = sampler_q.sample(m);
            let fwd = net.push(&xe.view())?;
            let ed_forward = energy_distance(&fwd.view(), &ye.view())?;
            let rec = IterRecord {
                iteration: (it + 1) as u64,
                loss,
                corr_hat: loss,
                term_x,
                term_y,
                r_y: 0.0,
                r_x: 0.0,
                ed_forward,
                ed_inverse: ed_forward,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            };
            report.final_corr_hat = rec.corr_hat;
            report.records.push(rec);
        }
    }
    report.wall_total_ms = started.elapsed().as_secs_f64() * 1e3;
    report.iters_per_sec = cfg.iters as f64 / (report.wall_total_ms / 1e3).max(1e-9);
    Ok((net, report))
}

/// Two-network minimax baseline: ten inner ascent steps on the conjugate per
/// primary step, fresh batches per inner iteration.
pub fn train_minimax_baseline<P: BatchSource, Q: BatchSource>(
    cfg: &TrainConfig,
    sampler_p: &mut P,
    sampler_q: &mut Q,
    log_interval: usize,
) -> Result<(TrainState, RunReport), TrainError> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let mut state = TrainState::new(cfg)?;
    let mut report = RunReport::default();
    report.pretrain_mse =
        pretrain_identity(&mut state.theta, sampler_p, cfg.pretrain_iters, cfg.batch_size, cfg.pretrain_lr)?;
    state.copy_theta_to_omega();
    let interval = log_interval.max(1);
    const INNER: usize = 10;

    for it in 0..cfg.iters {
        // inner maximization of the variational bracket over the conjugate
        for _ in 0..INNER {
            let y = sampler_q.sample(cfg.batch_size);
            let m = y.nrows() as f64;
            let u = state.omega.push(&y.view())?;
            let push_u = state.theta.push(&u.view())?;
            let q = (&y - &push_u).mapv(|v| v / m);
            let ones = Array1::ones(y.nrows());
            let dual = state.omega.dual_backward(&y.view(), &q.view(), &ones.view())?;
            // ascent: negate the gradient of the quantity being maximized
            let grads: Vec<f64> = dual.grads_tangent.iter().map(|g| -g).collect();
            state.adam_omega.step(state.omega.params_mut(), &grads);
            state.omega.project_nonneg();
        }
        // one outer minimization step on the primary net
        let x = sampler_p.sample(cfg.batch_size);
        let y = sampler_q.sample(cfg.batch_size);
        let n = x.nrows() as f64;
        let u = state.omega.push(&y.view())?;
        let pos_seeds = Array1::from_elem(x.nrows(), 1.0 / n);
        let neg_seeds = Array1::from_elem(y.nrows(), -1.0 / n);
        let (vals_x, grads_a, _) = state.theta.backward(&x.view(), &pos_seeds.view())?;
        let (vals_u, grads_b, _) = state.theta.backward(&u.view(), &neg_seeds.view())?;
        let mut grads = grads_a;
        for (g, b) in grads.iter_mut().zip(grads_b.iter()) {
            *g += b;
        }
        if cfg.l1_penalty > 0.0 {
            state.theta.add_l1_subgradient(&mut grads, cfg.l1_penalty);
        }
        let term_x = vals_x.sum() / n;
        let mut term_y = 0.0;
        for (j, row) in u.rows().into_iter().enumerate() {
            let inner: f64 = row.iter().zip(y.row(j).iter()).map(|(a, b)| a * b).sum();
            term_y += inner - vals_u[j];
        }
        term_y /= n;
        let loss = term_x + term_y;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { what: "loss", iteration: state.iteration });
        }
        state.adam_theta.step(state.theta.params_mut(), &grads);
        state.theta.project_nonneg();
        state.iteration += 1;

        if (it + 1) % interval == 0 || it + 1 == cfg.iters {
            let metrics = StepMetrics { loss, term_x, term_y, r_y: 0.0, r_x: Some(0.0) };
            let wall = started.elapsed().as_secs_f64() * 1e3;
            let mut rec = eval_record(&state, &metrics, cfg, sampler_p, sampler_q, wall)?;
            rec.corr_hat = loss;
            report.final_corr_hat = rec.corr_hat;
            report.records.push(rec);
        }
    }
    report.wall_total_ms = started.elapsed().as_secs_f64() * 1e3;
    report.iters_per_sec = cfg.iters as f64 / (report.wall_total_ms / 1e3).max(1e-9);
    Ok((state, report))
}

#[cfg(test)]
mod tests;
