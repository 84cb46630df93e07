use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stiffdiff::autodiff::Tape;
use stiffdiff::scorenet::*;

fn config(core: CoreKind, bidirectional: bool) -> ScoreNetConfig {
    ScoreNetConfig {
        token_dim: 6,
        layers: 2,
        hidden_dim: 5,
        bidirectional,
        embed_dim: 4,
        core,
        denoising: true,
        embed_seed: 3,
    }
}

/// Network with a random (non-zero) output head so outputs depend on the inputs.
fn randomized(cfg: ScoreNetConfig, seed: u64) -> ScoreNetwork {
    let mut net = ScoreNetwork::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for t in net.params_mut().tensors_mut() {
        for v in t.data_mut() {
            if *v == 0.0 {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    net
}

struct Inputs {
    steps: usize,
    batch: usize,
    condition: Vec<f64>,
    noisy: Vec<f64>,
    step: Vec<usize>,
}

impl Inputs {
    fn random(steps: usize, batch: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            steps,
            batch,
            condition: (0..steps * batch * CONDITION_DIM).map(|_| rng.random_range(-1.0..1.0)).collect(),
            noisy: (0..steps * batch * FORCE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect(),
            step: (0..batch).map(|_| rng.random_range(1..=30)).collect(),
        }
    }

    fn net_input(&self) -> NetInput<'_> {
        NetInput {
            steps: self.steps,
            batch: self.batch,
            condition: &self.condition,
            noisy: Some(&self.noisy),
            step: Some(&self.step),
            total_steps: 30,
        }
    }
}

#[test]
fn unidirectional_core_is_causal() {
    for core in [CoreKind::Gru, CoreKind::Lstm] {
        let net = randomized(config(core, false), 1);
        let a = Inputs::random(12, 2, 5);
        let mut b = Inputs::random(12, 2, 5);
        // perturb every step from t = 7 on
        let cut = 7;
        for r in cut * 2..12 * 2 {
            b.noisy[r * 2] += 0.3;
            b.condition[r * CONDITION_DIM + 1] -= 0.2;
        }
        let (ya, yb) = (net.predict(&a.net_input()).unwrap(), net.predict(&b.net_input()).unwrap());
        for r in 0..cut * 2 {
            assert_eq!(ya[r * 2..r * 2 + 2], yb[r * 2..r * 2 + 2], "{core:?}: row {r} saw the future");
        }
        assert_ne!(ya[cut * 4..], yb[cut * 4..]);
    }
}

#[test]
fn bidirectional_core_sees_the_future() {
    let net = randomized(config(CoreKind::Gru, true), 1);
    let a = Inputs::random(10, 1, 2);
    let mut b = Inputs::random(10, 1, 2);
    b.noisy[18] += 0.5;
    let (ya, yb) = (net.predict(&a.net_input()).unwrap(), net.predict(&b.net_input()).unwrap());
    assert_ne!(ya[0..2], yb[0..2]);
}

#[test]
fn permuting_time_changes_output() {
    for core in [CoreKind::Gru, CoreKind::Lstm] {
        let net = randomized(config(core, true), 2);
        let a = Inputs::random(8, 1, 9);
        let mut b = Inputs { step: a.step.clone(), ..Inputs::random(8, 1, 9) };
        // swap steps 1 and 5
        for k in 0..CONDITION_DIM {
            b.condition.swap(CONDITION_DIM + k, 5 * CONDITION_DIM + k);
        }
        for k in 0..FORCE_DIM {
            b.noisy.swap(FORCE_DIM + k, 5 * FORCE_DIM + k);
        }
        let (ya, yb) = (net.predict(&a.net_input()).unwrap(), net.predict(&b.net_input()).unwrap());
        // the per-step MLP would just swap rows 1 and 5; a sequence core changes other rows too
        assert_ne!(ya[0..2], yb[0..2], "{core:?}");
    }
}

#[test]
fn per_step_mlp_ignores_neighbours() {
    let net = randomized(config(CoreKind::Mlp, true), 4);
    let a = Inputs::random(6, 1, 1);
    let mut b = Inputs::random(6, 1, 1);
    b.noisy[8] += 1.0;
    let (ya, yb) = (net.predict(&a.net_input()).unwrap(), net.predict(&b.net_input()).unwrap());
    for t in [0, 1, 2, 3, 5] {
        assert_eq!(ya[t * 2..t * 2 + 2], yb[t * 2..t * 2 + 2]);
    }
    assert_ne!(ya[8..10], yb[8..10]);
}

#[test]
fn horizon_is_not_baked_into_parameters() {
    let net = randomized(config(CoreKind::Gru, true), 6);
    for steps in [100, 200] {
        let x = Inputs::random(steps, 1, 3);
        let y = net.predict(&x.net_input()).unwrap();
        assert_eq!(y.len(), steps * FORCE_DIM);
        assert!(y.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn forward_is_deterministic_and_batch_consistent() {
    let net = randomized(config(CoreKind::Gru, true), 8);
    let x = Inputs::random(7, 3, 4);
    let y1 = net.predict(&x.net_input()).unwrap();
    let y2 = net.predict(&x.net_input()).unwrap();
    assert!(y1.iter().zip(&y2).all(|(a, b)| a.to_bits() == b.to_bits()));
    // the middle item run alone matches its slot in the batch
    let single = Inputs {
        steps: 7,
        batch: 1,
        condition: (0..7).flat_map(|t| x.condition[(t * 3 + 1) * CONDITION_DIM..(t * 3 + 2) * CONDITION_DIM].to_vec()).collect(),
        noisy: (0..7).flat_map(|t| x.noisy[(t * 3 + 1) * FORCE_DIM..(t * 3 + 2) * FORCE_DIM].to_vec()).collect(),
        step: vec![x.step[1]],
    };
    let ys = net.predict(&single.net_input()).unwrap();
    for t in 0..7 {
        for k in 0..2 {
            assert!((ys[t * 2 + k] - y1[(t * 3 + 1) * 2 + k]).abs() < 1e-12);
        }
    }
}

#[test]
fn regression_net_takes_condition_only() {
    let cfg = ScoreNetConfig {
        denoising: false,
        ..config(CoreKind::Gru, true)
    };
    assert_eq!(cfg.input_dim(), CONDITION_DIM);
    let net = randomized(cfg, 2);
    let x = Inputs::random(5, 2, 3);
    let y = net
        .predict(&NetInput {
            noisy: None,
            step: None,
            ..x.net_input()
        })
        .unwrap();
    assert_eq!(y.len(), 5 * 2 * FORCE_DIM);
}

/// Central-difference check of d sum(out * w) / d params for every parameter entry.
fn param_gradient_rel_err(net: &mut ScoreNetwork, x: &Inputs, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..x.steps * x.batch * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |net: &ScoreNetwork| -> f64 { net.predict(&x.net_input()).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum() };
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape).unwrap();
    let out = net.forward(&mut tape, &vars, &x.net_input()).unwrap();
    let wv = tape.constant(x.steps * x.batch, 2, w.clone()).unwrap();
    let p = tape.mul(out, wv).unwrap();
    let l = tape.sum(p);
    let grads = tape.backward(l).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| grads.get(*v).unwrap().to_vec()).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..net.params().len() {
        for j in 0..net.params().tensors()[k].len() {
            let orig = net.params().tensors()[k].data()[j];
            net.params_mut().tensors_mut()[k].data_mut()[j] = orig + h;
            let up = objective(net);
            net.params_mut().tensors_mut()[k].data_mut()[j] = orig - h;
            let down = objective(net);
            net.params_mut().tensors_mut()[k].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = analytic[k][j];
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-6));
        }
    }
    worst
}

#[test]
fn parameter_gradients_match_finite_differences() {
    for (i, core) in [CoreKind::Gru, CoreKind::Lstm, CoreKind::Mlp].into_iter().enumerate() {
        let mut net = randomized(config(core, true), 10 + i as u64);
        let x = Inputs::random(4, 2, 20 + i as u64);
        let e = param_gradient_rel_err(&mut net, &x, i as u64);
        assert!(e <= 1e-4, "{core:?}: max relative error {e}");
    }
}
