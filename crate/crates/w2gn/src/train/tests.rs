use super::*;
use crate::data::{Sampler, ToyDistribution};
use crate::icnn::DenseIcnnSpec;
use ndarray::array;

fn quadratic_net(dim: usize, beta: f64) -> DenseIcnn {
    // zero weights leave only the beta/2 ||x||^2 term, so push(x) = beta * x
    let spec = DenseIcnnSpec {
        input_dim: dim,
        rank: 2,
        widths: vec![4],
        beta,
        celu_alpha: 1.0,
    };
    DenseIcnn::zeroed(spec).unwrap()
}

fn small_cfg(spec: DenseIcnnSpec) -> TrainConfig {
    TrainConfig {
        spec,
        lambda_y: 1.0,
        lambda_x: 0.0,
        lr: 1e-3,
        adam_beta1: 0.9,
        adam_beta2: 0.999,
        adam_eps: 1e-8,
        batch_size: 64,
        iters: 10,
        l1_penalty: 0.0,
        stop_gradient: true,
        smoothing_sigma: 0.0,
        seed: 5,
        pretrain_iters: 0,
        pretrain_lr: 1e-2,
    }
}

fn standard_sampler(seed: u64) -> Sampler {
    Sampler::new(ToyDistribution::StandardGaussian { dim: 2 }, seed).unwrap()
}

/// Loss of the full objective evaluated without any gradient machinery.
fn loss_eval(
    theta: &DenseIcnn,
    omega: &DenseIcnn,
    cfg: &TrainConfig,
    x: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
) -> f64 {
    let (tx, ty) = corr_terms(theta, omega, x, y).unwrap();
    let ry = cycle_reg_y(theta, omega, y).unwrap();
    let rx = if cfg.lambda_x > 0.0 { cycle_reg_x(theta, omega, x).unwrap() } else { 0.0 };
    tx + ty
        + 0.5 * cfg.lambda_y * ry
        + 0.5 * cfg.lambda_x * rx
        + cfg.l1_penalty * (theta.l1_norm() + omega.l1_norm())
}

#[test]
fn corr_terms_closed_form_quadratics() {
    let theta = quadratic_net(2, 1.0);
    let omega = quadratic_net(2, 1.0);
    let x = array![[1.0, 0.0]];
    let y = array![[0.0, 2.0]];
    let (tx, ty) = corr_terms(&theta, &omega, &x.view(), &y.view()).unwrap();
    assert!((tx - 0.5).abs() < 1e-12);
    assert!((ty - 2.0).abs() < 1e-12);
}

#[test]
fn corr_terms_of_identity_maps_equal_const() {
    let theta = quadratic_net(2, 1.0);
    let omega = quadratic_net(2, 1.0);
    let mut s = standard_sampler(3);
    let b = s.sample(128);
    let (tx, ty) = corr_terms(&theta, &omega, &b.view(), &b.view()).unwrap();
    let const_mc = crate::metrics::mean_sq_norm(&b.view()); // mean ||x||^2 / 2 twice
    assert!((tx + ty - const_mc).abs() < 1e-10);
}

#[test]
fn cycle_regs_arithmetic_examples() {
    let theta2 = quadratic_net(2, 2.0); // push = 2x
    let id = quadratic_net(2, 1.0);
    let half = quadratic_net(2, 0.5); // push = x/2
    let y = array![[1.0, 0.0]];

    assert!((cycle_reg_y(&theta2, &id, &y.view()).unwrap() - 1.0).abs() < 1e-12);
    assert!(cycle_reg_y(&id, &id, &y.view()).unwrap() < 1e-15);
    assert!((cycle_reg_x(&theta2, &id, &y.view()).unwrap() - 1.0).abs() < 1e-12);
    assert!(cycle_reg_x(&theta2, &half, &y.view()).unwrap() < 1e-15);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let spec = DenseIcnnSpec { input_dim: 2, rank: 2, widths: vec![6, 4], beta: 1e-2, celu_alpha: 1.0 };
    let mut cfg = small_cfg(spec.clone());
    cfg.lambda_y = 1.3;
    cfg.lambda_x = 0.7;
    cfg.stop_gradient = false;
    let theta = DenseIcnn::init(spec.clone(), 21).unwrap();
    let omega = DenseIcnn::init(spec, 22).unwrap();
    let mut s = standard_sampler(23);
    let x = s.sample(8);
    let y = s.sample(8) + 0.3;

    let (_, g_theta, g_omega) =
        w2gn_loss_grads(&theta, &omega, &cfg, &x.view(), &y.view()).unwrap();

    let h = 1e-5;
    for (which, grads) in [(0, &g_theta), (1, &g_omega)] {
        for i in 0..grads.len() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            let mut op = omega.clone();
            let mut om = omega.clone();
            if which == 0 {
                tp.params_mut()[i] += h;
                tm.params_mut()[i] -= h;
            } else {
                op.params_mut()[i] += h;
                om.params_mut()[i] -= h;
            }
            let fd = (loss_eval(&tp, &op, &cfg, &x.view(), &y.view())
                - loss_eval(&tm, &om, &cfg, &x.view(), &y.view()))
                / (2.0 * h);
            let g = grads[i];
            let scale = g.abs().max(fd.abs()).max(1e-6);
            assert!(
                (fd - g).abs() / scale < 1e-4,
                "net {which} param {i}: analytic {g} vs fd {fd}"
            );
        }
    }
}

#[test]
fn stop_gradient_freezes_omega() {
    let spec = DenseIcnnSpec { input_dim: 2, rank: 2, widths: vec![8, 4], beta: 1e-6, celu_alpha: 1.0 };
    let mut cfg = small_cfg(spec);
    cfg.lambda_y = 0.0;
    cfg.lambda_x = 0.0;
    cfg.stop_gradient = true;
    cfg.l1_penalty = 1e-10;
    let mut state = TrainState::new(&cfg).unwrap();
    let before = state.omega.params().to_vec();
    let mut s = standard_sampler(6);
    for _ in 0..100 {
        let x = s.sample(16);
        let y = s.sample(16);
        w2gn_step(&mut state, &cfg, &x.view(), &y.view()).unwrap();
    }
    assert_eq!(state.omega.params(), &before[..]);
    assert_eq!(state.iteration, 100);
}

#[test]
fn pretrain_reaches_identity_and_reports_zero_for_exact_nets() {
    let mut exact = quadratic_net(2, 1.0);
    let mut s = standard_sampler(7);
    let mse = pretrain_identity(&mut exact, &mut s, 0, 32, 1e-3).unwrap();
    assert_eq!(mse, 0.0);

    let spec = DenseIcnnSpec { input_dim: 2, rank: 2, widths: vec![64, 64], beta: 1e-6, celu_alpha: 1.0 };
    let mut net = DenseIcnn::init(spec, 1).unwrap();
    let mse = pretrain_identity(&mut net, &mut s, 1000, 128, 1e-2).unwrap();
    assert!(mse < 1e-2, "pretrain mse {mse}");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    assert!(net.convexity_check(1000, &mut rng) <= 1e-9);
}

#[test]
fn pretrain_is_deterministic() {
    let spec = DenseIcnnSpec { input_dim: 2, rank: 2, widths: vec![8], beta: 1e-6, celu_alpha: 1.0 };
    let run = || {
        let mut net = DenseIcnn::init(spec.clone(), 3).unwrap();
        let mut s = standard_sampler(4);
        let mse = pretrain_identity(&mut net, &mut s, 50, 32, 1e-3).unwrap();
        (mse, net.params().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn invert_gradient_quadratic_cases() {
    let id = quadratic_net(2, 1.0);
    let res = invert_gradient(&id, &[0.3, -0.8], 200, 1e-10).unwrap();
    assert!(res.converged);
    assert!((res.x_hat[0] - 0.3).abs() < 1e-9 && (res.x_hat[1] + 0.8).abs() < 1e-9);

    let twice = quadratic_net(2, 2.0);
    let res = invert_gradient(&twice, &[1.0, 2.0], 200, 1e-8).unwrap();
    assert!(res.converged);
    assert!((res.x_hat[0] - 0.5).abs() < 1e-6 && (res.x_hat[1] - 1.0).abs() < 1e-6);
}

#[test]
fn invert_gradient_self_consistency_on_random_net() {
    let spec = DenseIcnnSpec { input_dim: 2, rank: 2, widths: vec![8, 4], beta: 1e-2, celu_alpha: 1.0 };
    let net = DenseIcnn::init(spec, 11).unwrap();
    let mut s = standard_sampler(12);
    let targets = net.push(&s.sample(8).view()).unwrap();
    for row in targets.rows() {
        let res = invert_gradient(&net, &row.to_vec(), 200, 1e-4).unwrap();
        assert!(res.residual < 1e-4, "residual {}", res.residual);
    }
}

#[test]
fn w2gn_identity_problem_stays_near_identity() {
    let spec = DenseIcnnSpec { input_dim: 2, rank: 2, widths: vec![16, 8], beta: 1e-6, celu_alpha: 1.0 };
    let mut cfg = small_cfg(spec);
    cfg.iters = 400;
    cfg.pretrain_iters = 500;
    cfg.lambda_x = 1.0;
    let mut p = standard_sampler(41);
    let mut q = standard_sampler(42);
    let (state, report) = train_w2gn(&cfg, &mut p, &mut q, 100).unwrap();
    let last = report.records.last().unwrap();
    assert!(last.r_y < 1e-2, "r_y {}", last.r_y);
    assert!(last.r_x < 1e-2, "r_x {}", last.r_x);
    let mut e = standard_sampler(43);
    let xe = e.sample(512);
    let push = state.theta.push(&xe.view()).unwrap();
    let msd = crate::metrics::mean_sq_diff(&push.view(), &xe.view());
    assert!(msd < 1e-1, "push deviates from identity: {msd}");
    assert!(report.records.iter().all(|r| r.loss.is_finite()
        && r.corr_hat.is_finite()
        && r.ed_forward.is_finite()
        && r.ed_inverse.is_finite()));
}

#[test]
fn training_is_deterministic_in_seed() {
    let spec = DenseIcnnSpec { input_dim: 2, rank: 2, widths: vec![8, 4], beta: 1e-6, celu_alpha: 1.0 };
    let mut cfg = small_cfg(spec);
    cfg.iters = 60;
    cfg.pretrain_iters = 50;
    cfg.smoothing_sigma = 0.01;
    let run = || {
        let mut p = standard_sampler(1);
        let mut q = Sampler::new(
            ToyDistribution::Gaussian { mean: vec![1.0, -1.0], cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]] },
            2,
        )
        .unwrap();
        let (state, report) = train_w2gn(&cfg, &mut p, &mut q, 20).unwrap();
        let stripped: Vec<(u64, f64, f64, f64, f64)> = report
            .records
            .iter()
            .map(|r| (r.iteration, r.loss, r.corr_hat, r.ed_forward, r.ed_inverse))
            .collect();
        (state.theta.params().to_vec(), state.omega.params().to_vec(), stripped)
    };
    assert_eq!(run(), run());
}

#[test]
fn minimax_baseline_ignores_lambda() {
    let spec = DenseIcnnSpec { input_dim: 2, rank: 2, widths: vec![8, 4], beta: 1e-6, celu_alpha: 1.0 };
    let run = |lambda: f64| {
        let mut cfg = small_cfg(spec.clone());
        cfg.lambda_y = lambda;
        cfg.iters = 15;
        cfg.pretrain_iters = 30;
        let mut p = standard_sampler(8);
        let mut q = standard_sampler(9);
        let (state, _) = train_minimax_baseline(&cfg, &mut p, &mut q, 5).unwrap();
        state.theta.params().to_vec()
    };
    assert_eq!(run(1.0), run(5.0));
}

#[test]
fn minimax_identity_problem_converges() {
    let spec = DenseIcnnSpec { input_dim: 2, rank: 2, widths: vec![16, 8], beta: 1e-6, celu_alpha: 1.0 };
    let mut cfg = small_cfg(spec);
    cfg.iters = 150;
    cfg.pretrain_iters = 500;
    let mut p = standard_sampler(44);
    let mut q = standard_sampler(45);
    let (state, _) = train_minimax_baseline(&cfg, &mut p, &mut q, 50).unwrap();
    let mut e = standard_sampler(46);
    let xe = e.sample(512);
    let push = state.theta.push(&xe.view()).unwrap();
    let msd = crate::metrics::mean_sq_diff(&push.view(), &xe.view());
    assert!(msd < 1e-1, "minimax push deviates from identity: {msd}");
}

#[test]
fn single_discriminator_fits_a_shift() {
    let spec = DenseIcnnSpec { input_dim: 1, rank: 1, widths: vec![8, 4], beta: 1e-6, celu_alpha: 1.0 };
    let mut cfg = small_cfg(spec);
    cfg.iters = 400;
    cfg.lr = 3e-3;
    cfg.pretrain_iters = 300;
    cfg.batch_size = 64;
    let mut p = Sampler::new(ToyDistribution::StandardGaussian { dim: 1 }, 51).unwrap();
    let mut q = Sampler::new(
        ToyDistribution::Gaussian { mean: vec![2.0], cov: vec![vec![1.0]] },
        52,
    )
    .unwrap();
    let (net, _) = train_single_discriminator(&cfg, &mut p, &mut q, 100).unwrap();
    let mut e = Sampler::new(ToyDistribution::StandardGaussian { dim: 1 }, 53).unwrap();
    let xe = e.sample(256);
    let push = net.push(&xe.view()).unwrap();
    let mae = push
        .rows()
        .into_iter()
        .zip(xe.rows())
        .map(|(p, x)| (p[0] - (x[0] + 2.0)).abs())
        .sum::<f64>()
        / 256.0;
    assert!(mae < 0.1, "single-disc map error {mae}");
}

#[test]
fn invalid_configs_are_rejected() {
    let spec = DenseIcnnSpec { input_dim: 2, rank: 2, widths: vec![4], beta: 1e-6, celu_alpha: 1.0 };
    let mut cfg = small_cfg(spec);
    cfg.batch_size = 1;
    assert!(cfg.validate().is_err());
    cfg.batch_size = 8;
    cfg.lambda_y = -1.0;
    assert!(cfg.validate().is_err());
    cfg.lambda_y = 1.0;
    assert!(cfg.validate().is_ok());
    assert!(cfg.lambda_beta_warning().is_some()); // beta = 1e-6
}
