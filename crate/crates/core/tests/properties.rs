use proptest::prelude::*;

use adamemento::agent::gae::normalize_advantages;
use adamemento::agent::policy::sample_categorical;
use adamemento::curiosity::{intrinsic_reward, CoarseFineModel};
use adamemento::env::{self, make_env, Action, EnvName, Observation, SpecOverrides};
use adamemento::memory::{finalize_trajectory, MBuffer, Step, TerminalKind};
use adamemento::nn::{clip_grad_norm, softmax_in_place, Activation, NetParams};
use adamemento::oracle::{gated_policy, ConfidenceTable, QTable, StochasticPolicy};
use adamemento::seed::rng_from;

fn env_name() -> impl Strategy<Value = EnvName> {
    prop_oneof![Just(EnvName::CliffWalking), Just(EnvName::FourRooms), Just(EnvName::DarkChamber)]
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(mut v in prop::collection::vec(-500.0f64..500.0, 1..12)) {
        softmax_in_place(&mut v);
        prop_assert!(v.iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_head_stays_in_unit_interval(seed in any::<u64>(), x in prop::collection::vec(-50.0f64..50.0, 5)) {
        let net = NetParams::init(&[5, 7, 3], &[Activation::Relu, Activation::Sigmoid], seed).unwrap();
        let y = net.output(&x).unwrap();
        prop_assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn clipping_caps_the_global_norm(seed in any::<u64>(), scale in 0.0f64..100.0, max_norm in 0.01f64..5.0) {
        let mut a = NetParams::init(&[3, 4, 2], &[Activation::Relu, Activation::Identity], seed).unwrap();
        let mut b = NetParams::init(&[2, 2], &[Activation::Identity], seed ^ 1).unwrap();
        a.scale(scale);
        b.scale(scale);
        let before: Vec<f64> = a.values().chain(b.values()).cloned().collect();
        let mut grads = [a, b];
        let norm = clip_grad_norm(&mut grads, max_norm);
        let after: Vec<f64> = grads.iter().flat_map(|g| g.values().cloned()).collect();
        let new_norm = after.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(new_norm <= max_norm * (1.0 + 1e-12));
        // Direction is kept: every coordinate shrinks by the same factor.
        if norm > 0.0 {
            let k = new_norm / norm;
            for (x, y) in before.iter().zip(&after) {
                prop_assert!((x * k - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn normalized_advantages_are_standard(mut adv in prop::collection::vec(-1e3f64..1e3, 2..200)) {
        let n = adv.len() as f64;
        let spread = adv.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - adv.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        normalize_advantages(&mut adv, 1e-8);
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn m_buffer_is_bounded_and_sorted(
        cap in 1usize..8,
        offers in prop::collection::vec((-20i32..=0, 1usize..15, any::<bool>()), 0..80),
    ) {
        let mut buf = MBuffer::new(cap).unwrap();
        for (ret, len, dies) in offers {
            let steps = (0..len)
                .map(|t| Step {
                    observation: Observation::new(0, 4).unwrap(),
                    action: 0,
                    reward: if t == 0 { ret as f64 } else { 0.0 },
                })
                .collect();
            let kind = if dies { TerminalKind::Death } else { TerminalKind::Goal };
            buf.offer(finalize_trajectory(steps, kind).unwrap());
            prop_assert!(buf.len() <= cap);
            prop_assert!(buf.entries().iter().all(|t| t.effective_length() > 0));
            for w in buf.entries().windows(2) {
                prop_assert!(w[0].rank_cmp(&w[1]) != std::cmp::Ordering::Less);
            }
        }
    }

    #[test]
    fn intrinsic_reward_is_non_negative(seed in any::<u64>(), dim in 2usize..30, cell in any::<prop::sample::Index>(), lambda in 0.0f64..1.0) {
        let model = CoarseFineModel::new(dim, 8, 4, lambda, 1e-8, &mut rng_from(seed)).unwrap();
        let novelty = intrinsic_reward(&model, &Observation::new(cell.index(dim), dim).unwrap()).unwrap();
        prop_assert!(novelty.reward >= 0.0 && novelty.reward.is_finite());
    }

    #[test]
    fn random_walks_respect_the_grid(name in env_name(), moves in prop::collection::vec(0usize..4, 1..600)) {
        let spec = make_env(name, &SpecOverrides::default()).unwrap();
        let (mut state, _) = env::reset(&spec, 0);
        for a in moves {
            let (obs, info) = env::step_mut(&mut state, &spec, Action::ALL[a]).unwrap();
            prop_assert!(spec.in_bounds(state.position));
            prop_assert!(!spec.is_wall(state.position));
            prop_assert_eq!(obs.index(), spec.cell_index(state.position));
            prop_assert!(state.steps_taken <= spec.max_steps);
            prop_assert!(!(info.terminated && info.truncated));
            let expected = if info.fell {
                spec.cliff_reward
            } else if info.terminated {
                spec.step_reward + spec.goal_reward
            } else {
                spec.step_reward
            };
            prop_assert_eq!(info.reward, expected);
            if state.done {
                prop_assert!(env::step_mut(&mut state, &spec, Action::Up).is_err());
                break;
            }
        }
    }

    #[test]
    fn gated_policy_is_a_distribution(
        ns in 1usize..6,
        na in 2usize..5,
        seed in any::<u64>(),
        kappa in 0.0f64..1.0,
    ) {
        use rand::Rng as _;
        let mut rng = rng_from(seed);
        let mut probs = Vec::new();
        for _ in 0..ns {
            let row: Vec<f64> = (0..na).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let sum: f64 = row.iter().sum();
            probs.extend(row.iter().map(|x| x / sum));
        }
        let pi = StochasticPolicy::new(ns, na, probs).unwrap();
        let q = QTable::from_fn(ns, na, |_, _| rng.gen());
        let conf = ConfidenceTable::new(ns, na, (0..ns * na).map(|_| rng.gen()).collect()).unwrap();
        let gated = gated_policy(&pi, &q, &conf, kappa);
        for s in 0..ns {
            let row = gated.row(s);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn categorical_draws_land_on_support(
        weights in prop::collection::vec(prop_oneof![Just(0.0f64), 0.01f64..1.0], 1..8),
        u in 0.0f64..1.0,
    ) {
        prop_assume!(weights.iter().any(|&w| w > 0.0));
        let sum: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        let i = sample_categorical(&probs, u);
        prop_assert!(i < probs.len());
        // The fallback index may carry zero mass only through rounding at u ≈ 1.
        prop_assert!(probs[i] > 0.0 || u > 1.0 - 1e-12);
    }
}
