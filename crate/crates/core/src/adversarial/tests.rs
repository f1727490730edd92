use super::*;
use crate::contrastive::pairwise_loss;
use crate::graph::{stochastic_augment, SparseGraph};
use crate::model::{embed, init_params, EncoderMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(n: usize, f: usize, p: f64, rng: &mut ChaCha8Rng) -> SparseGraph {
    let pairs: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let edges: Vec<_> = pairs.into_iter().filter(|_| rng.random_bool(p)).collect();
    let x = DenseMat::from_fn(n, f, |_, _| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
    SparseGraph::new(Adjacency::from_edges(n, edges).unwrap(), x).unwrap()
}

fn random_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DenseMat {
    DenseMat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn frozen_loss(params: &ModelParams, a: &View, b: &View, tau: f64) -> f64 {
    let mut t = Tape::new();
    let vars = params.record(&mut t, false);
    let za = t.constant(embed(params, a).unwrap());
    let zb = t.constant(embed(params, b).unwrap());
    let l = pairwise_loss(za, zb, &vars, tau, &mut t).unwrap();
    t.scalar(l)
}

/// Sorts every candidate by (score desc, position asc) and keeps `c`.
fn exhaustive_rank(cands: Vec<(f64, (usize, usize))>, c: usize) -> Vec<(usize, usize)> {
    let mut cands = cands;
    cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    cands.into_iter().take(c).map(|(_, at)| at).collect()
}

#[test]
fn zero_budget_and_zero_gradient_keep_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_graph(8, 3, 0.4, &mut rng);
    let grad = random_mat(8, 8, &mut rng);
    let zero = PerturbationBudget::new(0.0, 0.0).unwrap();
    assert_eq!(structural_perturb(&grad, &g.adjacency, &zero).unwrap(), g.adjacency);
    let full = PerturbationBudget::new(1.0, 1.0).unwrap();
    assert_eq!(structural_perturb(&DenseMat::zeros(8, 8), &g.adjacency, &full).unwrap(), g.adjacency);
    assert!(PerturbationBudget::new(1.5, 0.0).is_err());
}

#[test]
fn edge_flips_match_exhaustive_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let g = random_graph(8, 2, 0.4, &mut rng);
        let mut grad = random_mat(8, 8, &mut rng);
        grad = grad.zip_map(&grad.transpose(), |a, b| 0.5 * (a + b));
        // Exact ties exercise the positional tie-break.
        grad.set(0, 5, 0.9);
        grad.set(5, 0, 0.9);
        grad.set(1, 2, 0.9);
        grad.set(2, 1, 0.9);
        let c = 3;
        let mut cands = Vec::new();
        for i in 0..8 {
            for j in i + 1..8 {
                let s = if g.adjacency.has_edge(i, j) { -grad.get(i, j) } else { grad.get(i, j) };
                if s > 0.0 {
                    cands.push((s, (i, j)));
                }
            }
        }
        let expect = exhaustive_rank(cands, c);
        assert_eq!(select_edge_flips(&grad, &g.adjacency, c), expect);
        let budget = PerturbationBudget::new(1.0, 0.0).unwrap();
        let ratio_c = budget.edge_count(&g.adjacency);
        let flipped = structural_perturb(&grad, &g.adjacency, &budget).unwrap();
        assert!(flipped.is_valid());
        let diff = (0..8)
            .flat_map(|i| (i + 1..8).map(move |j| (i, j)))
            .filter(|&(i, j)| flipped.has_edge(i, j) != g.adjacency.has_edge(i, j))
            .count();
        assert!(diff <= ratio_c);
    }
}

#[test]
fn mask_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let x = DenseMat::from_fn(5, 6, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        let gx = random_mat(5, 6, &mut rng);
        let nnz = x.count_nonzero();
        if nnz == 0 {
            continue;
        }
        // Smallest ratio whose ceiling gives 4 (or everything if fewer).
        let c = nnz.min(4);
        let budget = PerturbationBudget::new(c as f64 / nnz as f64, c as f64 / nnz as f64).unwrap();
        assert_eq!(budget.feature_count(&x), c);
        let mut cands = Vec::new();
        for i in 0..5 {
            for j in 0..6 {
                if x.get(i, j) > 0.0 && gx.get(i, j) < 0.0 {
                    cands.push((-gx.get(i, j), (i, j)));
                }
            }
        }
        let expect = exhaustive_rank(cands, c);
        let mask = adversarial_feature_mask(&gx, &x, &budget).unwrap();
        assert_eq!(mask.masked, expect);
        let view = assemble_adversarial_view(Adjacency::empty(5), &x, &mask).unwrap();
        assert_eq!(view.features.count_nonzero(), nnz - mask.masked.len());
        for (a, b) in view.features.as_slice().iter().zip(x.as_slice()) {
            assert!(a <= b);
            assert!(*a == 0.0 || a == b);
        }
        assert_eq!(view.provenance, Provenance::Adversarial);
    }
}

#[test]
fn mask_degenerate_cases() {
    let x = DenseMat::filled(3, 4, 1.0);
    let neg = DenseMat::filled(3, 4, -1.0);
    let zero = PerturbationBudget::new(0.0, 0.0).unwrap();
    let m = adversarial_feature_mask(&neg, &x, &zero).unwrap();
    assert_eq!(m.to_dense(), DenseMat::filled(3, 4, 1.0));
    let some = PerturbationBudget::new(0.0, 0.5).unwrap();
    let m = adversarial_feature_mask(&DenseMat::filled(3, 4, 1.0), &x, &some).unwrap();
    assert!(m.masked.is_empty());
    assert_eq!(adversarial_feature_mask(&neg, &x, &some).unwrap().masked.len(), 6);
}

#[test]
fn flip_matches_joint_ranking_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let x = DenseMat::from_fn(5, 6, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        let gx = random_mat(5, 6, &mut rng);
        let budget = PerturbationBudget::new(0.0, 0.3).unwrap();
        let c = budget.feature_count(&x);
        let mut cands = Vec::new();
        for i in 0..5 {
            for j in 0..6 {
                let g = gx.get(i, j);
                let s = if x.get(i, j) > 0.0 { -g } else { g };
                if s > 0.0 {
                    cands.push((s, (i, j)));
                }
            }
        }
        let mut expect = x.clone();
        for (i, j) in exhaustive_rank(cands, c) {
            expect.set(i, j, 1.0 - x.get(i, j));
        }
        assert_eq!(flip_feature_perturb(&gx, &x, &budget).unwrap(), expect);
    }
    let ones = DenseMat::filled(4, 4, 1.0);
    let gx = random_mat(4, 4, &mut rng);
    let b = PerturbationBudget::new(0.0, 0.25).unwrap();
    let masked = adversarial_feature_mask(&gx, &ones, &b).unwrap().apply(&ones);
    assert_eq!(flip_feature_perturb(&gx, &ones, &b).unwrap(), masked);
    let none = PerturbationBudget::new(0.0, 0.0).unwrap();
    assert_eq!(flip_feature_perturb(&gx, &ones, &none).unwrap(), ones);
}

fn two_views(n: usize, seed: u64) -> (ModelParams, View, View) {
    two_views_with(n, 6, 0.3, seed)
}

fn two_views_with(n: usize, f: usize, density: f64, seed: u64) -> (ModelParams, View, View) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_graph(n, f, 0.2, &mut rng);
    let g = SparseGraph::new(
        g.adjacency,
        DenseMat::from_fn(n, f, |_, _| if rng.random_bool(density) { 1.0 } else { 0.0 }),
    )
    .unwrap();
    let p = init_params(EncoderMode::Gcn, f, 8, 5, 4, &mut rng).unwrap();
    let v = View::clean(&g);
    let v1 = stochastic_augment(&v, 0.2, 0.2, &mut rng).unwrap();
    let v2 = stochastic_augment(&v, 0.2, 0.2, &mut rng).unwrap();
    (p, v1, v2)
}

#[test]
fn zero_second_layer_gives_zero_gradients() {
    let (mut p, v1, v2) = two_views(10, 5);
    p.encoder.w2 = Some(DenseMat::zeros(8, 5));
    let g = compute_gradients(&p, &v1, &v2, 0.5, 100).unwrap();
    assert_eq!(g.g_a.max_abs(), 0.0);
    assert_eq!(g.g_x.max_abs(), 0.0);
}

#[test]
fn gradients_match_finite_differences() {
    let (p, v1, v2) = two_views(20, 6);
    let tau = 0.5;
    let g = compute_gradients(&p, &v1, &v2, tau, 100).unwrap();
    let loss_at = |a1: &DenseMat, a2: &DenseMat, x1: &DenseMat, x2: &DenseMat| {
        let mut t = Tape::new();
        let vars = p.record(&mut t, false);
        let input = |a: &DenseMat, x: &DenseMat, t: &mut Tape| {
            let adjacency = t.constant(a.clone());
            let propagation = t.gcn_norm(adjacency).unwrap();
            let features = t.constant(x.clone());
            GraphInput::Dense { adjacency, propagation, features }
        };
        let i1 = input(a1, x1, &mut t);
        let i2 = input(a2, x2, &mut t);
        let z1 = encode(&p, &vars, &i1, &mut t).unwrap();
        let z2 = encode(&p, &vars, &i2, &mut t).unwrap();
        let l = pairwise_loss(z1, z2, &vars, tau, &mut t).unwrap();
        t.scalar(l)
    };
    let (a1, a2) = (v1.adjacency.to_dense(), v2.adjacency.to_dense());
    let (x1, x2) = (v1.features.clone(), v2.features.clone());
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rel = |a: f64, fd: f64| (a - fd).abs() / (fd.abs() + 1e-8);
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let (i, j) = (rng.random_range(0..20), rng.random_range(0..20));
        if i == j {
            continue;
        }
        let bump = |m: &DenseMat, s: f64| {
            let mut m = m.clone();
            m.add_at(i, j, s);
            m.add_at(j, i, s);
            m
        };
        let fd = (loss_at(&bump(&a1, h), &bump(&a2, h), &x1, &x2)
            - loss_at(&bump(&a1, -h), &bump(&a2, -h), &x1, &x2))
            / (2.0 * h);
        worst = worst.max(rel(2.0 * g.g_a.get(i, j), fd));
    }
    for _ in 0..30 {
        let (i, j) = (rng.random_range(0..20), rng.random_range(0..6));
        let bump = |m: &DenseMat, s: f64| {
            let mut m = m.clone();
            m.add_at(i, j, s);
            m
        };
        let fd = (loss_at(&a1, &a2, &bump(&x1, h), &bump(&x2, h))
            - loss_at(&a1, &a2, &bump(&x1, -h), &bump(&x2, -h)))
            / (2.0 * h);
        worst = worst.max(rel(g.g_x.get(i, j), fd));
    }
    assert!(worst < 1e-4, "{worst}");
    assert_eq!(g.g_a, g.g_a.transpose());
    assert!((0..20).all(|i| g.g_a.get(i, i) == 0.0));
}

#[test]
fn swapping_views_keeps_gradients() {
    let (p, v1, v2) = two_views(15, 8);
    let a = compute_gradients(&p, &v1, &v2, 0.5, 100).unwrap();
    let b = compute_gradients(&p, &v2, &v1, 0.5, 100).unwrap();
    let scale = a.g_a.max_abs().max(1e-300);
    assert!(a.g_a.zip_map(&b.g_a, |x, y| (x - y).abs()).max_abs() <= 1e-12 * scale);
}

#[test]
fn dense_limit_is_enforced() {
    let (p, v1, v2) = two_views(15, 9);
    assert!(compute_gradients(&p, &v1, &v2, 0.5, 10).is_err());
}

#[test]
fn zero_budget_returns_view_one() {
    let (p, v1, v2) = two_views(12, 10);
    let zero = PerturbationBudget::new(0.0, 0.0).unwrap();
    let adv = generate_adversarial_view(&p, &v1, &v2, 0.5, &zero, FeaturePerturbation::Mask, 100).unwrap();
    assert_eq!(adv.adjacency, v1.adjacency);
    assert_eq!(adv.features, v1.features);
}

#[test]
fn attack_usually_increases_frozen_loss() {
    let mut wins = 0;
    let trials = 20;
    for seed in 0..trials {
        // Sparse bag-of-words features, where one masked entry is a small
        // change relative to the row.
        let (p, v1, v2) = two_views_with(30, 50, 0.1, 100 + seed);
        let budget = PerturbationBudget::new(0.1, 0.1).unwrap();
        let adv = generate_adversarial_view(&p, &v1, &v2, 0.5, &budget, FeaturePerturbation::Mask, 100).unwrap();
        let before = frozen_loss(&p, &v1, &v2, 0.5);
        let after = frozen_loss(&p, &adv, &v2, 0.5);
        if after >= before {
            wins += 1;
        }
        let flips = (0..30)
            .flat_map(|i| (i + 1..30).map(move |j| (i, j)))
            .filter(|&(i, j)| adv.adjacency.has_edge(i, j) != v1.adjacency.has_edge(i, j))
            .count();
        assert!(flips <= budget.edge_count(&v1.adjacency));
        let changed = adv.features.zip_map(&v1.features, |a, b| (a != b) as u8 as f64).sum() as usize;
        assert!(changed <= budget.feature_count(&v1.features));
    }
    assert!(wins * 10 >= trials * 9, "{wins}/{trials}");
}

