use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sds_lab::diffusion::{
    ancestral_sample, estimate_x0, noise_sample, Condition, NoiseSchedule, ScheduleKind, SigmaRule,
};
use sds_lab::oracle::{GaussianMixture, GmmDenoiser};

fn kind() -> impl Strategy<Value = ScheduleKind> {
    prop_oneof![Just(ScheduleKind::DdpmLinear), Just(ScheduleKind::Cosine)]
}

proptest! {
    #[test]
    fn estimate_x0_inverts_noising(
        kind in kind(),
        max_t in 2usize..=1000,
        t_frac in 0.0f64..1.0,
        x in prop::collection::vec(-10.0f64..10.0, 1..6),
        seed in any::<u64>(),
    ) {
        let s = NoiseSchedule::new(kind, max_t).unwrap();
        let t = 1 + ((max_t - 1) as f64 * t_frac) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noised = noise_sample(&s, &x, t, &mut rng).unwrap();
        let back = estimate_x0(&s, &noised.x_t, &noised.eps, t).unwrap();
        let scale = x.iter().map(|v| v.abs()).fold(1.0, f64::max);
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn chain_rule_and_monotone_snr(kind in kind(), max_t in 2usize..=1000) {
        let s = NoiseSchedule::new(kind, max_t).unwrap();
        for t in 2..=max_t {
            let ratio = s.alpha_bar(t) / s.alpha_bar(t - 1);
            prop_assert!((ratio / s.alpha(t) - 1.0).abs() <= 1e-12);
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            prop_assert!(s.snr(t) < s.snr(t - 1));
            prop_assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
        }
        prop_assert!(s.alpha_bar(max_t) > 0.0 && s.alpha_bar(1) < 1.0);
    }
}

#[test]
fn terminal_noise_decorrelates() {
    let s = NoiseSchedule::new(ScheduleKind::DdpmLinear, 1000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 10_000;
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sds_lab::diffusion::standard_normal_vec(1, &mut rng);
        let noised = noise_sample(&s, &x, 1000, &mut rng).unwrap();
        pairs.push((x[0], noised.x_t[0]));
    }
    let mean = |f: &dyn Fn(&(f64, f64)) -> f64| pairs.iter().map(f).sum::<f64>() / n as f64;
    let (mx, my) = (mean(&|p| p.0), mean(&|p| p.1));
    let cov = mean(&|p| (p.0 - mx) * (p.1 - my));
    let vx = mean(&|p| (p.0 - mx).powi(2));
    let vy = mean(&|p| (p.1 - my).powi(2));
    let rho = cov / (vx * vy).sqrt();
    let expected = s.alpha_bar(1000).sqrt();
    let se = (1.0 - expected * expected) / (n as f64).sqrt();
    assert!(
        (rho - expected).abs() <= 3.0 * se,
        "rho {rho} vs {expected}"
    );
}

#[test]
fn noised_origin_has_schedule_variance() {
    let s = NoiseSchedule::new(ScheduleKind::Cosine, 1000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for t in [10, 300, 700, 1000] {
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| noise_sample(&s, &[0.0], t, &mut rng).unwrap().x_t[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = 1.0 - s.alpha_bar(t);
        assert!(
            (var / expected - 1.0).abs() <= 0.05,
            "t={t}: {var} vs {expected}"
        );
    }
}

fn nearest_mode(mixture: &GaussianMixture, x: &[f64]) -> usize {
    let d = mixture.mode_distances(x);
    (0..d.len()).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap()
}

#[test]
fn ancestral_sampling_reproduces_mixture_weights() {
    let s = NoiseSchedule::new(ScheduleKind::DdpmLinear, 1000).unwrap();
    let mixtures = [
        GaussianMixture::quad(),
        GaussianMixture::new(
            vec![0.3, 0.7],
            vec![vec![-3.0, 1.0], vec![3.0, -1.0]],
            vec![0.2, 0.5],
        )
        .unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for mixture in mixtures {
        let denoiser = GmmDenoiser::new(s.clone(), mixture.clone());
        let mut counts = vec![0usize; mixture.num_components()];
        let n = 2000;
        for _ in 0..n {
            let x = ancestral_sample(
                &s,
                &denoiser,
                Condition(0),
                SigmaRule::SqrtOneMinusAlpha,
                &mut rng,
            )
            .unwrap();
            counts[nearest_mode(&mixture, &x)] += 1;
        }
        for (k, c) in counts.iter().enumerate() {
            let share = *c as f64 / n as f64;
            assert!(
                (share - mixture.weights()[k]).abs() <= 0.05,
                "mode {k}: {share}"
            );
        }
    }
}
