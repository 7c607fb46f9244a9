//! Property suites checked against the independent oracles.

mod oracles;

use cilforge_core::datagen::{downsample, Clip, FrameShape};
use cilforge_core::losses::{
    exemplar_loss, logistic, ls_label, sc_loss, teacher_agent_label_for, AgentConfig,
    ExemplarInputs, ReplayMode, SoftLabel,
};
use cilforge_core::memory::herding_select;
use cilforge_core::nn::{expand_head, forward, ModelSpec, ModelState};
use cilforge_core::sampler::{motion_profile, select_keyframes};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scalar_clip(values: &[f64]) -> Clip {
    Clip::from_scalars(0, values).unwrap()
}

#[test]
fn keyframes_match_integer_oracle_exhaustively() {
    let mut checked = 0usize;
    for len in 1..=8usize {
        for code in 0..4usize.pow(len as u32) {
            let ints: Vec<i64> = (0..len).map(|i| ((code >> (2 * i)) & 3) as i64).collect();
            let clip = scalar_clip(&ints.iter().map(|&v| v as f64).collect::<Vec<_>>());
            for n in 1..=len {
                let expected = oracles::keyframes_integer(&ints, n).unwrap();
                assert_eq!(
                    select_keyframes(&clip, n, 1.0).unwrap(),
                    expected,
                    "{ints:?} n={n}"
                );
                checked += 1;
            }
            assert!(select_keyframes(&clip, len + 1, 1.0).is_err());
        }
    }
    assert!(checked > 400_000);
}

#[test]
fn keyframe_documented_cases() {
    let clip = scalar_clip(&[0.0, 1.0, 1.0, 1.0, 2.0]);
    assert_eq!(select_keyframes(&clip, 2, 1.0).unwrap(), vec![1, 4]);
    assert_eq!(
        select_keyframes(&scalar_clip(&[3.0; 10]), 4, 1.0).unwrap(),
        vec![1, 3, 6, 8]
    );
    let p = motion_profile(&scalar_clip(&[0.0, 1.0, 5.0]), 0.5);
    assert_eq!(p.energies, vec![1.0, 2.0]);
    assert!((p.cumulative[1] - 1.0 / 3.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn keyframes_on_real_clips(
        values in prop::collection::vec(-5.0f64..5.0, 1..40),
        n_frac in 0.0f64..1.0,
        gamma in 0.05f64..=1.0,
        scale in 0.01f64..100.0,
    ) {
        let n = 1 + ((values.len() - 1) as f64 * n_frac) as usize;
        let picks = select_keyframes(&scalar_clip(&values), n, gamma).unwrap();
        prop_assert_eq!(picks.len(), n);
        prop_assert!(picks.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*picks.last().unwrap() < values.len());
        prop_assert_eq!(&picks, &oracles::keyframes_real(&values, n, gamma).unwrap());
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        prop_assert_eq!(select_keyframes(&scalar_clip(&scaled), n, gamma).unwrap(), picks);
    }

    #[test]
    fn keyframe_coverage_on_strictly_increasing_profiles(
        steps in prop::collection::vec(0.5f64..2.0, 4..40),
        n_frac in 0.0f64..1.0,
    ) {
        // every energy share below 1/n keeps the cap from binding
        let total: f64 = steps.iter().sum();
        let max_share = steps.iter().cloned().fold(0.0, f64::max) / total;
        let frames = steps.len() + 1;
        let n = 1 + ((frames - 1) as f64 * n_frac) as usize;
        prop_assume!(max_share < 1.0 / n as f64);
        let mut values = vec![0.0];
        for s in &steps {
            values.push(values.last().unwrap() + s);
        }
        let clip = scalar_clip(&values);
        let c = motion_profile(&clip, 1.0).cumulative;
        let picks = select_keyframes(&clip, n, 1.0).unwrap();
        for w in picks.windows(2) {
            prop_assert!(c[w[1]] - c[w[0]] <= 2.0 / n as f64 + 1e-12);
        }
    }

    #[test]
    fn herding_matches_greedy_oracle(
        seed in any::<u64>(),
        count in 1usize..=10,
        dim in 1usize..=4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e: Vec<Vec<f64>> = (0..count)
            .map(|_| (0..dim).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect())
            .collect();
        let full = herding_select(&e, count).unwrap();
        prop_assert_eq!(&full, &oracles::herding_greedy(&e, count));
        for m in 0..=count {
            prop_assert_eq!(&herding_select(&e, m).unwrap()[..], &full[..m]);
        }
        prop_assert_eq!(full[0], oracles::nearest_to_mean(&e));
        let mut sorted = full.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (0..count).collect::<Vec<_>>());
    }

    #[test]
    fn teacher_agent_simplex_and_argmax(
        p in prop::collection::vec(0.0f64..=1.0, 1..12),
        class_frac in 0.0f64..1.0,
        alpha in 0.001f64..=1.0,
    ) {
        let class = ((p.len() as f64 * class_frac) as usize).min(p.len() - 1);
        let chi = teacher_agent_label_for(class, &p, alpha).unwrap();
        let v = chi.values();
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(v.iter().all(|&x| x >= 0.0));
        prop_assert!(v.iter().all(|&x| v[class] >= x));
        let oracle = oracles::teacher_agent(class, &p, alpha);
        for (a, b) in v.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn softening_grows_with_uniform_calibration(
        classes in 2usize..10,
        u1 in 0.0f64..1.0,
        du in 0.001f64..0.5,
        alpha in 0.01f64..=1.0,
    ) {
        let u2 = (u1 + du).min(1.0);
        prop_assume!(u2 > u1);
        let a = teacher_agent_label_for(0, &vec![u1; classes], alpha).unwrap();
        let b = teacher_agent_label_for(0, &vec![u2; classes], alpha).unwrap();
        prop_assert!(b.values()[0] < a.values()[0]);
    }

    #[test]
    fn sc_tied_logit_sign(o in -8.0f64..8.0, chi_true in 0.01f64..0.99) {
        let chi = SoftLabel::try_from(vec![chi_true, 1.0 - chi_true]).unwrap();
        let (_, g, _) = sc_loss(&[o, -o], &chi).unwrap();
        let total = g[0] - g[1];
        prop_assert!((total - (logistic(o) - chi_true)).abs() < 1e-12);
        prop_assert_eq!(total > 0.0, logistic(o) > chi_true);
    }

    #[test]
    fn forward_is_affine_in_the_embedding(
        seed in any::<u64>(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ModelSpec { frame_shape: FrameShape::new(1, 2, 2), hidden: 0, embed_dim: 5 };
        let mut model = ModelState::new(spec, &mut rng).unwrap();
        expand_head(&mut model, 4, &mut rng);
        for v in model.params.head.bias.iter_mut() {
            *v = rand::Rng::random_range(&mut rng, -1.0..1.0);
        }
        let y1: Vec<f64> = (0..5).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
        let y2: Vec<f64> = (0..5).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
        let mix: Vec<f64> = y1.iter().zip(&y2).map(|(p, q)| a * p + b * q).collect();
        let lhs = forward(&model, &mix).unwrap();
        let f1 = forward(&model, &y1).unwrap();
        let f2 = forward(&model, &y2).unwrap();
        for c in 0..4 {
            let rhs = a * f1[c] + b * f2[c] - (a + b - 1.0) * model.params.head.bias[c];
            prop_assert!((lhs[c] - rhs).abs() <= 1e-12 * (1.0 + lhs[c].abs()));
        }
    }

    #[test]
    fn head_growth_preserves_old_logits(seed in any::<u64>(), extra in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ModelSpec { frame_shape: FrameShape::new(1, 2, 2), hidden: 3, embed_dim: 4 };
        let mut model = ModelState::new(spec, &mut rng).unwrap();
        expand_head(&mut model, 3, &mut rng);
        let y: Vec<f64> = (0..4).map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0)).collect();
        let before = forward(&model, &y).unwrap();
        expand_head(&mut model, extra, &mut rng);
        let after = forward(&model, &y).unwrap();
        prop_assert_eq!(after.len(), 3 + extra);
        prop_assert_eq!(&after[..3], &before[..]);
    }

    #[test]
    fn downsample_preserves_frame_means(
        seed in any::<u64>(),
        k in prop::sample::select(vec![1usize, 2, 4]),
        blocks in 1usize..4,
        channels in 1usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = k * blocks;
        let shape = FrameShape::new(channels, side, side);
        let frames = 3;
        // dyadic values keep every sum exact
        let data: Vec<f64> = (0..frames * shape.len())
            .map(|_| rand::Rng::random_range(&mut rng, -64i32..64) as f64 / 8.0)
            .collect();
        let clip = Clip::new(1, 0, shape, data).unwrap();
        let small = downsample(&clip, 1.0 / k as f64).unwrap();
        prop_assert_eq!(small.shape(), FrameShape::new(channels, blocks, blocks));
        for t in 0..frames {
            let mean = |f: &[f64]| f.iter().sum::<f64>() / f.len() as f64;
            prop_assert_eq!(mean(clip.frame(t)), mean(small.frame(t)));
        }
    }

    #[test]
    fn epe_never_increases_the_replay_loss(
        logits in prop::collection::vec(-4.0f64..4.0, 5),
        teacher in prop::collection::vec(-4.0f64..4.0, 3),
        label in 0usize..3,
        lambda in 0.0f64..=1.0,
    ) {
        let agent = AgentConfig::default();
        let inputs = |keep| ExemplarInputs {
            logits: &logits,
            label,
            old_classes: 3,
            teacher_logits: Some(&teacher),
            calibration: None,
            keep,
        };
        let kept = exemplar_loss(ReplayMode::KdEpe, lambda, &agent, &inputs(true)).unwrap().loss;
        let dropped = exemplar_loss(ReplayMode::KdEpe, lambda, &agent, &inputs(false)).unwrap().loss;
        let kd = exemplar_loss(ReplayMode::Kd, lambda, &agent, &inputs(true)).unwrap().loss;
        prop_assert!(dropped <= kept);
        prop_assert_eq!(kept, kd);
    }
}

#[test]
fn label_smoothing_is_a_teacher_agent_special_case() {
    for classes in [2usize, 5, 10] {
        for step in 1..=9 {
            let u = step as f64 / 10.0;
            let eps = classes as f64 * u / (1.0 + classes as f64 * u);
            for class in 0..classes {
                let chi = teacher_agent_label_for(class, &vec![u; classes], 1.0).unwrap();
                let ls = ls_label(classes, class, eps).unwrap();
                for (a, b) in chi.values().iter().zip(ls.values()) {
                    assert!((a - b).abs() <= 1e-12, "C={classes} u={u}");
                }
            }
        }
    }
}
