use std::cell::Cell;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stiffdiff::autodiff::Tape;
use stiffdiff::diffusion::*;
use stiffdiff::error::Error;
use stiffdiff::scorenet::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn small_config(denoising: bool) -> ScoreNetConfig {
    ScoreNetConfig {
        token_dim: 8,
        layers: 1,
        hidden_dim: 8,
        bidirectional: true,
        embed_dim: 4,
        core: CoreKind::Gru,
        denoising,
        embed_seed: 1,
    }
}

/// Forces that depend on the condition in a smooth, learnable way.
fn synthetic(n: usize, horizon: usize, seed: u64) -> Vec<Example> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let phase: f64 = r.random_range(-1.0..1.0);
            let gain: f64 = r.random_range(-1.0..1.0);
            let mut condition = Vec::new();
            let mut forces = Vec::new();
            for t in 0..horizon {
                let s = t as f64 / horizon as f64;
                condition.extend([s * 2.0 - 1.0, phase, gain, 0.0, phase * gain, -gain]);
                forces.extend([0.6 * (3.0 * s + phase).sin(), 0.5 * gain * (1.0 - s)]);
            }
            Example { condition, forces }
        })
        .collect()
}

#[test]
fn linear_schedule_endpoints() {
    let s = DiffusionSchedule::new(ScheduleKind::Linear, 2).unwrap();
    assert_eq!(s.betas(), &[1e-4, 0.02]);
    assert!(matches!(DiffusionSchedule::new(ScheduleKind::Linear, 0), Err(Error::InvalidSteps(_))));
}

#[test]
fn alpha_bar_table_matches_direct_product() {
    for kind in [ScheduleKind::Linear, ScheduleKind::SquaredCosine] {
        let s = DiffusionSchedule::new(kind, 30).unwrap();
        let mut prod = 1.0;
        for i in 1..=30 {
            prod *= 1.0 - s.beta(i);
            assert!((s.alpha_bar(i) - prod).abs() <= 1e-12, "{kind} i={i}");
        }
    }
}

proptest! {
    #[test]
    fn schedules_are_valid(steps in 1usize..400, cosine in any::<bool>()) {
        let kind = if cosine { ScheduleKind::SquaredCosine } else { ScheduleKind::Linear };
        let s = DiffusionSchedule::new(kind, steps).unwrap();
        prop_assert_eq!(s.betas().len(), steps);
        prop_assert_eq!(s.alpha_bars().len(), steps);
        for i in 1..=steps {
            prop_assert!(s.beta(i) > 0.0 && s.beta(i) <= MAX_BETA);
            prop_assert!(s.alpha_bar(i) < s.alpha_bar(i - 1));
            if kind == ScheduleKind::Linear && i > 1 {
                prop_assert!(s.beta(i) > s.beta(i - 1));
            }
        }
    }

    #[test]
    fn interleave_round_trip(batch in 1usize..5, h in 1usize..7, width in 1usize..4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let items: Vec<Vec<f64>> = (0..batch).map(|_| (0..h * width).map(|_| r.random()).collect()).collect();
        let refs: Vec<&[f64]> = items.iter().map(Vec::as_slice).collect();
        let buf = interleave(&refs, width).unwrap();
        prop_assert_eq!(deinterleave(&buf, batch, width), items);
    }
}

#[test]
fn forward_noise_variance_at_last_step() {
    let s = DiffusionSchedule::new(ScheduleKind::Linear, 30).unwrap();
    let (x, _) = forward_noise(&vec![0.0; 100_000], 30, &s, &mut rng(4));
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let want = (1.0 - s.alpha_bar(30)).sqrt();
    assert!((std / want - 1.0).abs() < 0.05, "std {std} vs {want}");
}

#[test]
fn forward_noise_limits_and_determinism() {
    let s = DiffusionSchedule::new(ScheduleKind::Linear, 10).unwrap();
    let clean = vec![0.3, -0.7, 0.1, 0.9];
    assert_eq!(forward_noise(&clean, 0, &s, &mut rng(1)).0, clean);
    assert_eq!(forward_noise(&clean, 7, &s, &mut rng(1)), forward_noise(&clean, 7, &s, &mut rng(1)));
    let (noisy, eps) = forward_noise(&clean, 7, &s, &mut rng(2));
    let a = s.alpha_bar(7);
    for k in 0..clean.len() {
        assert!((noisy[k] - (a.sqrt() * clean[k] + (1.0 - a).sqrt() * eps[k])).abs() < 1e-15);
    }
}

fn loss_value(net: &ScoreNetwork, batch: &NoisedBatch) -> f64 {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape).unwrap();
    let l = if net.config().denoising {
        training_loss(net, &mut tape, &vars, batch)
    } else {
        regression_loss(net, &mut tape, &vars, batch)
    };
    tape.scalar(l.unwrap())
}

#[test]
fn zero_output_net_has_unit_loss() {
    let net = ScoreNetwork::new(small_config(true), 0).unwrap();
    let data = synthetic(50, 100, 5);
    let refs: Vec<&Example> = data.iter().collect();
    let s = DiffusionSchedule::new(ScheduleKind::Linear, 30).unwrap();
    let batch = NoisedBatch::draw(&refs, &s, &mut rng(6)).unwrap();
    assert!(net.predict(&batch.net_input()).unwrap().iter().all(|v| *v == 0.0));
    let loss = loss_value(&net, &batch);
    assert!((loss - 1.0).abs() < 0.05, "loss {loss}");
}

#[test]
fn oracle_noise_gives_zero_loss() {
    let data = synthetic(8, 20, 7);
    let refs: Vec<&Example> = data.iter().collect();
    let s = DiffusionSchedule::new(ScheduleKind::Linear, 30).unwrap();
    let b = NoisedBatch::draw(&refs, &s, &mut rng(8)).unwrap();
    // recover ε from the noised and clean values alone
    let recovered: Vec<f64> = (0..b.noisy.len())
        .map(|k| {
            let a = s.alpha_bar(b.step[(k / FORCE_DIM) % b.batch]);
            (b.noisy[k] - a.sqrt() * b.clean[k]) / (1.0 - a).sqrt()
        })
        .collect();
    assert!(mean_squared_error(&recovered, &b.eps).unwrap() < 1e-20);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    for denoising in [true, false] {
        let mut net = ScoreNetwork::new(small_config(denoising), 2).unwrap();
        let mut r = rng(9);
        for t in net.params_mut().tensors_mut() {
            for v in t.data_mut() {
                *v += r.random_range(-0.3..0.3);
            }
        }
        let data = synthetic(3, 5, 10);
        let refs: Vec<&Example> = data.iter().collect();
        let s = DiffusionSchedule::new(ScheduleKind::Linear, 10).unwrap();
        let batch = NoisedBatch::draw(&refs, &s, &mut r).unwrap();
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape).unwrap();
        let l = if denoising {
            training_loss(&net, &mut tape, &vars, &batch)
        } else {
            regression_loss(&net, &mut tape, &vars, &batch)
        }
        .unwrap();
        let grads = tape.backward(l).unwrap();
        let analytic: Vec<Vec<f64>> = vars.iter().map(|v| grads.get(*v).unwrap().to_vec()).collect();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..net.params().len() {
            for j in 0..net.params().tensors()[k].len() {
                let orig = net.params().tensors()[k].data()[j];
                net.params_mut().tensors_mut()[k].data_mut()[j] = orig + h;
                let up = loss_value(&net, &batch);
                net.params_mut().tensors_mut()[k].data_mut()[j] = orig - h;
                let down = loss_value(&net, &batch);
                net.params_mut().tensors_mut()[k].data_mut()[j] = orig;
                let fd = (up - down) / (2.0 * h);
                let g = analytic[k][j];
                worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-6));
            }
        }
        assert!(worst <= 1e-4, "denoising={denoising}: max relative error {worst}");
    }
}

/// Returns the true noise of a fixed clean target and counts its calls.
struct Oracle {
    clean: Vec<f64>,
    schedule: DiffusionSchedule,
    calls: Cell<usize>,
}

impl NoisePredictor for Oracle {
    fn predict_noise(&self, input: &NetInput) -> stiffdiff::error::Result<Vec<f64>> {
        self.calls.set(self.calls.get() + 1);
        let noisy = input.noisy.unwrap();
        let i = input.step.unwrap()[0];
        let a = self.schedule.alpha_bar(i);
        Ok(noisy
            .iter()
            .zip(self.clean.iter().cycle())
            .map(|(x, c)| (x - a.sqrt() * c) / (1.0 - a).sqrt())
            .collect())
    }
}

#[test]
fn denoise_inverts_noising_exactly_at_first_step() {
    let s = DiffusionSchedule::new(ScheduleKind::Linear, 30).unwrap();
    let clean = vec![0.4, -0.2, 0.9, 0.0, -1.0, 0.5];
    let (x1, eps) = forward_noise(&clean, 1, &s, &mut rng(11));
    let back = denoise_step(&x1, &eps, 1, &s, Some(&[1.0; 6]), None);
    for (b, c) in back.iter().zip(&clean) {
        assert!((b - c).abs() < 1e-12);
    }
}

#[test]
fn oracle_step_is_the_gaussian_posterior_mean() {
    // With the true ε, the reverse mean equals the closed-form q(x_{i-1} | x_i, x_0) mean.
    let s = DiffusionSchedule::new(ScheduleKind::SquaredCosine, 20).unwrap();
    let clean = vec![0.4, -0.2, 0.9, 0.0];
    for i in 2..=20 {
        let (xi, eps) = forward_noise(&clean, i, &s, &mut rng(i as u64));
        let mean = denoise_step(&xi, &eps, i, &s, None, None);
        // the clean target is inside the clamp, so clamping changes nothing
        let clamped = denoise_step(&xi, &eps, i, &s, None, Some(1.0));
        let (ab, ab_prev, beta) = (s.alpha_bar(i), s.alpha_bar(i - 1), s.beta(i));
        for k in 0..clean.len() {
            let want = ab_prev.sqrt() * beta / (1.0 - ab) * clean[k] + (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab) * xi[k];
            assert!((mean[k] - want).abs() < 1e-9, "i={i}: {} vs {want}", mean[k]);
            assert!((clamped[k] - want).abs() < 1e-9);
        }
    }
}

#[test]
fn clamped_step_bounds_the_clean_estimate() {
    let s = DiffusionSchedule::new(ScheduleKind::SquaredCosine, 30).unwrap();
    let x = vec![0.3, -0.1, 2.0];
    // a wild ε estimate implies a clean value far outside the data range
    let eps = vec![40.0, -40.0, 0.0];
    for i in 1..=30 {
        let (ab, ab_prev) = (s.alpha_bar(i), if i > 1 { s.alpha_bar(i - 1) } else { 1.0 });
        let out = denoise_step(&x, &eps, i, &s, None, Some(1.0));
        for k in 0..3 {
            let x0 = ((x[k] - (1.0 - ab).sqrt() * eps[k]) / ab.sqrt()).clamp(-1.0, 1.0);
            let want = ab_prev.sqrt() * s.beta(i) / (1.0 - ab) * x0 + s.alpha(i).sqrt() * (1.0 - ab_prev) / (1.0 - ab) * x[k];
            assert!((out[k] - want).abs() < 1e-9, "i={i} k={k}");
        }
        // at the last step the output is the clamped clean estimate itself
        if i == 1 {
            assert!(out.iter().all(|v| v.abs() <= 1.0 + 1e-12), "{out:?}");
        }
    }
}

#[test]
fn sampler_calls_the_net_once_per_step() {
    for steps in [1, 5, 30] {
        let s = DiffusionSchedule::new(ScheduleKind::Linear, steps).unwrap();
        let oracle = Oracle {
            clean: vec![0.25, -0.5],
            schedule: s.clone(),
            calls: Cell::new(0),
        };
        let cond = vec![0.0; 4 * CONDITION_DIM];
        let out = sample(&oracle, &[&cond, &cond, &cond], &s, None, &mut rng(12)).unwrap();
        assert_eq!(oracle.calls.get(), steps);
        assert_eq!(out.len(), 3);
        // the oracle pins every chain to the clean target at the last step
        for o in &out {
            for (v, c) in o.iter().zip([0.25, -0.5].iter().cycle()) {
                assert!((v - c).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn sampler_is_deterministic_per_seed() {
    let net = {
        let mut n = ScoreNetwork::new(small_config(true), 3).unwrap();
        let mut r = rng(13);
        n.params_mut().tensors_mut().iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v += r.random_range(-0.2..0.2)));
        n
    };
    let s = DiffusionSchedule::new(ScheduleKind::Linear, 10).unwrap();
    let data = synthetic(2, 6, 14);
    let conds: Vec<&[f64]> = data.iter().map(|e| e.condition.as_slice()).collect();
    let a = sample(&net, &conds, &s, None, &mut rng(15)).unwrap();
    let b = sample(&net, &conds, &s, None, &mut rng(15)).unwrap();
    let c = sample(&net, &conds, &s, None, &mut rng(16)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

struct Diverging;

impl NoisePredictor for Diverging {
    fn predict_noise(&self, input: &NetInput) -> stiffdiff::error::Result<Vec<f64>> {
        Ok(vec![f64::NAN; input.noisy.unwrap().len()])
    }
}

#[test]
fn sampler_reports_divergence() {
    let s = DiffusionSchedule::new(ScheduleKind::Linear, 3).unwrap();
    let cond = vec![0.0; 2 * CONDITION_DIM];
    assert!(matches!(sample(&Diverging, &[&cond], &s, None, &mut rng(0)), Err(Error::NonFinite(_))));
}

#[test]
fn baseline_prediction_is_deterministic() {
    let mut net = ScoreNetwork::new(small_config(false), 4).unwrap();
    net.params_mut().tensors_mut().iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v += 0.1));
    let data = synthetic(2, 6, 17);
    let conds: Vec<&[f64]> = data.iter().map(|e| e.condition.as_slice()).collect();
    let a = baseline_predict(&net, &conds).unwrap();
    assert_eq!(a, baseline_predict(&net, &conds).unwrap());
    let denoiser = ScoreNetwork::new(small_config(true), 4).unwrap();
    assert!(baseline_predict(&denoiser, &conds).is_err());
}

fn quick_config(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 16,
        lr: 3e-3,
        patience: steps,
        eval_every: 50,
        clip_norm: Some(1.0),
        val_limit: 32,
        seed,
    }
}

#[test]
fn regression_loss_falls_early() {
    let mut net = ScoreNetwork::new(small_config(false), 5).unwrap();
    let data = synthetic(64, 12, 18);
    let s = DiffusionSchedule::new(ScheduleKind::Linear, 1).unwrap();
    let out = train(&mut net, &s, &data, &[], &quick_config(100, 1), &mut |_| {}).unwrap();
    let smooth = |rows: &[LogRow]| rows.iter().map(|r| r.train_loss).sum::<f64>() / rows.len() as f64;
    let windows: Vec<f64> = out.log.chunks(20).map(smooth).collect();
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
}

#[test]
fn trained_denoiser_beats_untrained_and_descends() {
    let data = synthetic(160, 12, 19);
    let (train_set, held) = data.split_at(128);
    let s = DiffusionSchedule::new(ScheduleKind::Linear, 30).unwrap();
    let untrained = ScoreNetwork::new(small_config(true), 6).unwrap();
    let mut net = untrained.clone();
    train(&mut net, &s, train_set, &held[..16], &quick_config(1500, 2), &mut |_| {}).unwrap();

    let conds: Vec<&[f64]> = held.iter().map(|e| e.condition.as_slice()).collect();
    let mse = |n: &ScoreNetwork| {
        let pred = sample(n, &conds, &s, None, &mut rng(20)).unwrap();
        pred.iter().zip(held).map(|(p, e)| mean_squared_error(p, &e.forces).unwrap()).sum::<f64>() / held.len() as f64
    };
    let (before, after) = (mse(&untrained), mse(&net));
    assert!(after * 10.0 <= before, "trained {after} vs untrained {before}");

    // mean |ε̂| along one chain, recorded from i = T down to 1
    struct Recorder<'a>(&'a ScoreNetwork, std::cell::RefCell<Vec<f64>>);
    impl NoisePredictor for Recorder<'_> {
        fn predict_noise(&self, input: &NetInput) -> stiffdiff::error::Result<Vec<f64>> {
            let e = self.0.predict(input)?;
            self.1.borrow_mut().push(e.iter().map(|v| v.abs()).sum::<f64>() / e.len() as f64);
            Ok(e)
        }
    }
    let rec = Recorder(&net, Default::default());
    sample(&rec, &conds, &s, None, &mut rng(21)).unwrap();
    let mags = rec.1.into_inner();
    assert!(mags[mags.len() - 1] < mags[0], "{mags:?}");
}
