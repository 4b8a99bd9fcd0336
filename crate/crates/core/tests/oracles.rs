//! Library results checked against independent computations done here.

use std::collections::VecDeque;

use adamemento::curiosity::{intrinsic_reward, train_autoencoder, CoarseFineModel};
use adamemento::env::{self, make_env, Action, EnvName, GridSpec, Observation, Pos, SpecOverrides};
use adamemento::nn::{self, adam_step, Activation, AdamState, LossKind, NetParams};
use adamemento::oracle::{
    gridworld_to_mdp, policy_evaluation, random_mdp, value_iteration, StochasticPolicy, TabularMdp,
};
use adamemento::seed::rng_from;

/// `(I − γ P_π) v = r_π` by Gaussian elimination with partial pivoting.
fn exact_values(mdp: &TabularMdp, probs: &[f64]) -> Vec<f64> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut a = vec![vec![0.0; ns + 1]; ns];
    for s in 0..ns {
        a[s][s] = 1.0;
        for act in 0..na {
            let p = probs[s * na + act];
            a[s][ns] += p * mdp.reward[s * na + act];
            for s2 in 0..ns {
                a[s][s2] -= mdp.gamma * p * mdp.transition[(s * na + act) * ns + s2];
            }
        }
    }
    for c in 0..ns {
        let p = (c..ns).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        for r in 0..ns {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=ns {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    (0..ns).map(|s| a[s][ns] / a[s][s]).collect()
}

#[test]
fn value_iteration_matches_best_deterministic_policy() {
    for seed in 0..25 {
        let (ns, na) = (2 + seed as usize % 4, 2 + seed as usize % 3);
        let mdp = random_mdp(seed, ns, na, 0.9).unwrap();
        let solve = value_iteration(&mdp, 1e-12).unwrap();
        let mut best = vec![f64::NEG_INFINITY; ns];
        for code in 0..na.pow(ns as u32) {
            let mut probs = vec![0.0; ns * na];
            let mut c = code;
            for s in 0..ns {
                probs[s * na + c % na] = 1.0;
                c /= na;
            }
            let v = exact_values(&mdp, &probs);
            for s in 0..ns {
                best[s] = best[s].max(v[s]);
            }
        }
        for s in 0..ns {
            assert!((solve.v_star[s] - best[s]).abs() < 1e-8, "seed {seed} state {s}");
        }
    }
}

#[test]
fn policy_evaluation_matches_direct_solve() {
    for seed in 0..20 {
        let mdp = random_mdp(seed, 6, 3, 0.95).unwrap();
        let pi = StochasticPolicy::uniform(6, 3);
        let v = policy_evaluation(&mdp, &pi, 1e-12).unwrap();
        for (a, b) in v.iter().zip(exact_values(&mdp, &pi.probs)) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

fn bfs(spec: &GridSpec, blocked: Option<Pos>) -> Option<usize> {
    let goal = spec.goal?;
    let mut dist = vec![None; spec.n_cells()];
    dist[spec.cell_index(spec.start)] = Some(0);
    let mut queue = VecDeque::from([spec.start]);
    while let Some(p) = queue.pop_front() {
        let d = dist[spec.cell_index(p)].unwrap();
        if p == goal {
            return Some(d);
        }
        for a in Action::ALL {
            let t = env::transition(spec, p, a);
            if t.fell || Some(t.next) == blocked || dist[spec.cell_index(t.next)].is_some() {
                continue;
            }
            dist[spec.cell_index(t.next)] = Some(d + 1);
            queue.push_back(t.next);
        }
    }
    None
}

#[test]
fn cliff_shortest_path_is_thirteen_moves() {
    let spec = make_env(EnvName::CliffWalking, &SpecOverrides::default()).unwrap();
    assert_eq!(bfs(&spec, None), Some(13));
    assert_eq!(env::shortest_path_len(&spec), Some(13));
}

#[test]
fn cliff_optimal_value_is_thirteen_discounted_steps() {
    let spec = make_env(EnvName::CliffWalking, &SpecOverrides::default()).unwrap();
    let gamma: f64 = 0.99;
    let solve = value_iteration(&gridworld_to_mdp(&spec, gamma).unwrap(), 1e-12).unwrap();
    let expected = -(1.0 - gamma.powi(13)) / (1.0 - gamma);
    assert!((solve.v_star[spec.cell_index(spec.start)] - expected).abs() < 1e-8);
}

#[test]
fn four_rooms_has_a_doorway_that_cuts_start_from_goal() {
    let spec = make_env(EnvName::FourRooms, &SpecOverrides::default()).unwrap();
    assert!(bfs(&spec, None).is_some());
    let cuts: Vec<Pos> = (0..spec.n_cells())
        .map(|i| spec.cell_at(i))
        .filter(|&p| !spec.is_wall(p) && p != spec.start && Some(p) != spec.goal)
        .filter(|&p| bfs(&spec, Some(p)).is_none())
        .collect();
    assert!(!cuts.is_empty());
    // A doorway sits in a wall line: walls on two opposite sides.
    let wall = |r: isize, c: isize| r < 0 || c < 0 || spec.is_wall(Pos::new(r as usize, c as usize));
    assert!(cuts.iter().any(|p| {
        let (r, c) = (p.row as isize, p.col as isize);
        (wall(r - 1, c) && wall(r + 1, c)) || (wall(r, c - 1) && wall(r, c + 1))
    }));
}

#[test]
fn forward_matches_hand_computation() {
    let mut net = NetParams::init(&[2, 2, 2], &[Activation::Relu, Activation::Softmax], 0).unwrap();
    net.layers[0].weights = vec![1.0, -1.0, 0.5, 2.0];
    net.layers[0].bias = vec![0.0, -1.0];
    net.layers[1].weights = vec![1.0, 0.0, -1.0, 1.0];
    net.layers[1].bias = vec![0.0, 0.5];
    // Hidden: relu(3 − 1) = 2, relu(1.5 + 2 − 1) = 2.5. Logits: 2 and 1.
    let y = net.output(&[3.0, 1.0]).unwrap();
    let e = 1.0f64.exp();
    assert!((y[0] - e / (e + 1.0)).abs() < 1e-15);
    assert!((y[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
}

#[test]
fn adam_fits_a_linear_map() {
    let mut net = NetParams::init(&[2, 1], &[Activation::Identity], 5).unwrap();
    let xs = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 2.0]];
    let ts: Vec<[f64; 1]> = xs.iter().map(|x| [3.0 * x[0] - 2.0 * x[1] + 0.5]).collect();
    let batch: Vec<(&[f64], &[f64])> = xs.iter().zip(&ts).map(|(x, t)| (&x[..], &t[..])).collect();
    let mut adam = AdamState::new(&net, 1e-8);
    for _ in 0..20000 {
        let (_, g) = nn::loss_and_grad(&net, &batch, LossKind::Mse, 0.0, None).unwrap();
        adam_step(&mut net, &g, &mut adam, 1e-2).unwrap();
    }
    let (loss, _) = nn::loss_and_grad(&net, &batch, LossKind::Mse, 0.0, None).unwrap();
    assert!(loss < 1e-10, "loss {loss}");
    let w = &net.layers[0];
    assert!((w.weights[0] - 3.0).abs() < 1e-4 && (w.weights[1] + 2.0).abs() < 1e-4 && (w.bias[0] - 0.5).abs() < 1e-4);
}

#[test]
fn trained_cells_become_less_novel_than_unseen_ones() {
    let dim = 25;
    let mut rng = rng_from(9);
    let mut model = CoarseFineModel::new(dim, 32, 8, 0.0, 1e-8, &mut rng).unwrap();
    let seen: Vec<Observation> = (0..5).map(|i| Observation::new(i, dim).unwrap()).collect();
    for _ in 0..400 {
        train_autoencoder(&mut model, &seen, 1e-2, 1.0, &mut rng).unwrap();
    }
    let novelty = |i| intrinsic_reward(&model, &Observation::new(i, dim).unwrap()).unwrap().reward;
    let worst_seen = (0..5).map(novelty).fold(0.0, f64::max);
    let best_unseen = (5..dim).map(novelty).fold(f64::INFINITY, f64::min);
    assert!(worst_seen < best_unseen, "{worst_seen} vs {best_unseen}");
}
