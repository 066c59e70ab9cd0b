mod common;

use common::{random_edges, rng, RefGraph};
use heurlink::data::{self, SynthKind};
use heurlink::eval::{auc_metric, hits_at_k, mrr, split_edges, Metric};
use heurlink::heuristics::{score_pairs, score_ra, score_ra_sym};
use heurlink::model::{self, softmax3, BetaInit, Mode, ParamGroup};
use heurlink::oracle::oracle_path_count_no_loops;
use heurlink::training::{auc_loss, AdamState, GradientBundle, TrainConfig};
use heurlink::{DenseMatrix, HeuristicId, ModelConfig, OperatorSpec, PropagationOperators, SparseGraph};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2..=max_n).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..(3 * n))))
}

fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-20i32..20).prop_map(|v| v as f64 / 4.0), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csr_is_symmetric_with_loops((n, edges) in graph_strategy(30)) {
        let g = SparseGraph::from_edges(n, &edges).unwrap();
        let reference = RefGraph::new(n, &edges);
        for i in 0..n {
            prop_assert!(g.contains(i, i));
            prop_assert_eq!(g.degree(i), reference.nbrs[i].len());
            prop_assert_eq!(g.neighbors(i).to_vec(), reference.nbrs[i].iter().copied().collect::<Vec<_>>());
            for &j in g.neighbors(i) {
                prop_assert!(g.contains(j, i));
            }
        }
        prop_assert_eq!(g.num_edges(), reference.num_edges());
    }

    #[test]
    fn build_ignores_order_orientation_and_duplicates((n, edges) in graph_strategy(30), seed in any::<u64>()) {
        let g = SparseGraph::from_edges(n, &edges).unwrap();
        let mut shuffled: Vec<(usize, usize)> = edges.iter().flat_map(|&(u, v)| [(v, u), (u, v)]).collect();
        shuffled.shuffle(&mut rng(seed));
        prop_assert_eq!(SparseGraph::from_edges(n, &shuffled).unwrap(), g);
    }

    #[test]
    fn normalized_operators_sum_to_one((n, edges) in graph_strategy(40)) {
        let g = SparseGraph::from_edges(n, &edges).unwrap();
        for s in g.normalize(OperatorSpec::RowStochastic).row_sums() {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
        for s in g.normalize(OperatorSpec::ColumnStochastic).col_sums() {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
        let sym = g.normalize(OperatorSpec::Symmetric).to_dense();
        prop_assert_eq!(sym.transpose(), sym);
    }

    #[test]
    fn spmm_of_identity_rebuilds_operator((n, edges) in graph_strategy(40), logits in prop::array::uniform3(-3.0f64..3.0)) {
        let g = SparseGraph::from_edges(n, &edges).unwrap();
        let reference = RefGraph::new(n, &edges);
        let a = softmax3(logits);
        let cases = [
            (g.normalize(OperatorSpec::RawWithLoops), reference.raw()),
            (g.normalize(OperatorSpec::RowStochastic), reference.row_stochastic()),
            (g.normalize(OperatorSpec::ColumnStochastic), reference.col_stochastic()),
            (g.normalize(OperatorSpec::Symmetric), reference.symmetric()),
            (PropagationOperators::new(&g).mix(a).unwrap(), reference.mixture(a)),
        ];
        for (op, dense) in cases {
            let got = common::to_nalgebra(&op.spmm(&DenseMatrix::identity(n)).unwrap());
            prop_assert!((got - dense).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_positive_and_normalized(logits in prop::array::uniform3(-30.0f64..30.0)) {
        let a = softmax3(logits);
        prop_assert!(a.iter().all(|&x| x > 0.0));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn heuristics_are_symmetric_up_to_detailed_balance((n, edges) in graph_strategy(25)) {
        let g = SparseGraph::from_edges(n, &edges).unwrap();
        prop_assume!(g.num_edges() > 0);
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let ids = [
            HeuristicId::Cn,
            HeuristicId::Llhn,
            HeuristicId::Ra,
            HeuristicId::RaSq,
            HeuristicId::RaSym,
            HeuristicId::Katz { gamma: 0.1, order: 6 },
            HeuristicId::Glhn { phi: 0.1, order: 6 },
            HeuristicId::Rwr { alpha: 0.3, order: 6 },
            HeuristicId::Lpi { gamma: 0.2, order: 4 },
            HeuristicId::Lrw { alpha: 0.4, order: 5 },
        ];
        for id in ids {
            let s = score_pairs(&g, &id, &pairs).unwrap();
            // The restart walk satisfies detailed balance instead:
            // d̃_i s(i, j) = d̃_j s(j, i).
            let weight = |i: usize| match id {
                HeuristicId::Rwr { .. } => g.degree(i) as f64,
                _ => 1.0,
            };
            for i in 0..n {
                for j in 0..n {
                    let (a, b) = (weight(i) * s[i * n + j], weight(j) * s[j * n + i]);
                    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} ({i},{j}): {a} vs {b}", id);
                }
            }
        }
    }

    #[test]
    fn ra_sym_identity((n, edges) in graph_strategy(25), i in 0usize..25, j in 0usize..25) {
        let g = SparseGraph::from_edges(n, &edges).unwrap();
        let (i, j) = (i % n, j % n);
        let expected = score_ra(&g, i, j).unwrap() / ((g.degree(i) * g.degree(j)) as f64).sqrt();
        prop_assert!((score_ra_sym(&g, i, j).unwrap() - expected).abs() <= 1e-12);
    }

    #[test]
    fn katz_is_monotone_in_truncation((n, edges) in graph_strategy(20), gamma in 0.01f64..0.9) {
        let g = SparseGraph::from_edges(n, &edges).unwrap();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let mut prev = vec![0.0; pairs.len()];
        for order in 1..6 {
            let s = score_pairs(&g, &HeuristicId::Katz { gamma, order }, &pairs).unwrap();
            for (a, b) in prev.iter().zip(&s) {
                prop_assert!(b >= a);
            }
            if order == 1 {
                for (&(i, j), v) in pairs.iter().zip(&s) {
                    if i != j && !g.has_edge(i, j) {
                        prop_assert_eq!(*v, 0.0);
                    }
                }
            }
            prev = s;
        }
    }

    #[test]
    fn auc_loss_is_nonnegative_and_shift_invariant(
        pos in prop::collection::vec(-5.0f64..5.0, 1..8),
        neg in prop::collection::vec(-5.0f64..5.0, 0..20),
        shift in -100.0f64..100.0,
        margin in 0.1f64..3.0,
    ) {
        let owner: Vec<usize> = (0..neg.len()).map(|q| q % pos.len()).collect();
        let margins = vec![margin; pos.len()];
        let base = auc_loss(&pos, &neg, &owner, &margins).unwrap();
        prop_assert!(base.loss >= 0.0);
        let separated = neg.iter().zip(&owner).all(|(&n, &p)| pos[p] - n >= margin);
        prop_assert_eq!(base.loss == 0.0, separated);
        let sp: Vec<f64> = pos.iter().map(|v| v + shift).collect();
        let sn: Vec<f64> = neg.iter().map(|v| v + shift).collect();
        let shifted = auc_loss(&sp, &sn, &owner, &margins).unwrap();
        prop_assert!((shifted.loss - base.loss).abs() <= 1e-9 * base.loss.max(1.0));
    }

    #[test]
    fn adam_with_zero_gradient_is_a_fixed_point(seed in any::<u64>(), steps in 1usize..5) {
        let g = SparseGraph::from_edges(5, &[(0, 1), (1, 2), (3, 4)]).unwrap();
        let cfg = ModelConfig {
            depth: 3,
            input_dim: Some(2),
            hidden_dim: 3,
            use_node_embeddings: true,
            embedding_dim: 2,
            mlp_layers: 2,
            mlp_hidden_dim: 3,
            beta_init: BetaInit::Random,
            ..Default::default()
        };
        let mut params = model::init_params(&cfg, &g, seed).unwrap();
        let before = params.clone();
        let zero = GradientBundle::zeros_like(&params);
        let mut adam = AdamState::new(&params);
        let tc = TrainConfig::default();
        for _ in 0..steps {
            adam.step(&mut params, &zero, 0.1, &tc.adam, &[]).unwrap();
        }
        prop_assert_eq!(params, before);
    }

    #[test]
    fn splits_never_leak((n, edges) in graph_strategy(60), seed in any::<u64>()) {
        let g = SparseGraph::from_edges(n, &edges).unwrap();
        if let Ok(split) = split_edges(&g, 0.05, 0.1, seed) {
            split.validate().unwrap();
            let train = split.train_graph(n).unwrap();
            for &(u, v) in split.valid_pos.iter().chain(&split.test_pos) {
                prop_assert!(!train.has_edge(u, v));
                prop_assert!(g.has_edge(u, v));
            }
            for &(u, v) in split.valid_neg.iter().chain(&split.test_neg) {
                prop_assert!(!g.has_edge(u, v) && u != v);
            }
            let m = g.num_edges();
            prop_assert_eq!(split.valid_pos.len(), m * 5 / 100);
            prop_assert_eq!(split.test_pos.len(), m / 10);
            prop_assert_eq!(split.train.len() + split.valid_pos.len() + split.test_pos.len(), m);
            prop_assert_eq!(split_edges(&g, 0.05, 0.1, seed).unwrap(), split);
        }
    }

    #[test]
    fn hits_is_monotone_in_k(pos in scores(30), neg in scores(60)) {
        let mut prev = 0.0;
        for k in 1..=neg.len() + 2 {
            let h = hits_at_k(&pos, &neg, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
            prop_assert!(h >= prev);
            prev = h;
        }
    }

    #[test]
    fn metrics_ignore_increasing_transforms(pos in scores(30), neg in scores(60), k in 1usize..10) {
        // Exact on the quarter grid used by `scores`.
        let f = |v: &f64| v * v * v + 3.0 * v + 1.0;
        let (tp, tn): (Vec<f64>, Vec<f64>) = (pos.iter().map(f).collect(), neg.iter().map(f).collect());
        for m in [Metric::HitsAt(k), Metric::Mrr, Metric::Auc] {
            prop_assert_eq!(m.evaluate(&pos, &neg).unwrap(), m.evaluate(&tp, &tn).unwrap());
        }
        let per: Vec<(f64, Vec<f64>)> = pos.iter().map(|&p| (p, neg.clone())).collect();
        let tper: Vec<(f64, Vec<f64>)> = tp.iter().map(|&p| (p, tn.clone())).collect();
        prop_assert_eq!(mrr(&per).unwrap(), mrr(&tper).unwrap());
    }

    #[test]
    fn auc_equals_pairwise_enumeration(pos in scores(100), neg in scores(100)) {
        let mut credit = 0.0;
        for p in &pos {
            for n in &neg {
                credit += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        prop_assert_eq!(auc_metric(&pos, &neg).unwrap(), credit / (pos.len() * neg.len()) as f64);
    }

    #[test]
    fn forward_is_permutation_equivariant((n, edges) in graph_strategy(25), seed in any::<u64>()) {
        let g = SparseGraph::from_edges(n, &edges).unwrap();
        let cfg = ModelConfig {
            depth: 4,
            input_dim: Some(3),
            hidden_dim: 3,
            mlp_layers: 1,
            beta_init: BetaInit::Random,
            dropout: 0.0,
            ..Default::default()
        };
        let mut r = rng(seed);
        let mut params = model::init_params(&cfg, &g, seed).unwrap();
        for row in &mut params.alpha_logits {
            *row = [0, 1, 2].map(|_| r.gen_range(-2.0..2.0));
        }
        let x = DenseMatrix::from_fn(n, 3, |_, _| r.gen_range(-1.0..1.0));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let pg = SparseGraph::from_edges(n, &edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect::<Vec<_>>()).unwrap();
        let mut px = DenseMatrix::zeros(n, 3);
        for i in 0..n {
            px.row_mut(perm[i]).copy_from_slice(x.row(i));
        }
        let z = model::embed(&params, &g, Some(&x)).unwrap();
        let pz = model::embed(&params, &pg, Some(&px)).unwrap();
        for i in 0..n {
            for c in 0..3 {
                prop_assert!((z.get(i, c) - pz.get(perm[i], c)).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let mut r = rng(5);
    let edges = random_edges(50, 0.1, &mut r);
    let g = SparseGraph::from_edges(50, &edges).unwrap();
    let cfg = ModelConfig {
        depth: 6,
        use_node_embeddings: true,
        embedding_dim: 8,
        mlp_layers: 2,
        mlp_hidden_dim: 8,
        dropout: 0.0,
        ..Default::default()
    };
    let params = model::init_params(&cfg, &g, 3).unwrap();
    let ops = PropagationOperators::new(&g);
    let a = model::forward(&params, &ops, None, Mode::Eval).unwrap().z;
    let b = model::forward(&params, &ops, None, Mode::Eval).unwrap().z;
    assert_eq!(a.as_slice(), b.as_slice());
}

#[test]
fn triangle_generator_invariants() {
    let ds = data::generate_triangular(40, 1).unwrap();
    assert_eq!(ds.graph, data::generate_triangular(40, 1).unwrap().graph);
    let g = &ds.graph;
    let pairs: Vec<(usize, usize)> = (0..120).flat_map(|i| (0..120).map(move |j| (i, j))).collect();
    let cn = score_pairs(g, &HeuristicId::Cn, &pairs).unwrap();
    let katz = score_pairs(g, &HeuristicId::Katz { gamma: 0.3, order: 6 }, &pairs).unwrap();
    for (k, &(i, j)) in pairs.iter().enumerate() {
        if i / 3 == j / 3 {
            if i != j {
                assert!(g.has_edge(i, j));
                assert_eq!(cn[k], 3.0);
            }
        } else {
            assert_eq!((cn[k], katz[k]), (0.0, 0.0));
        }
    }
}

#[test]
fn hexagon_edges_close_only_through_five_steps() {
    let ds = data::generate_hexagonal(5, 2).unwrap();
    assert_eq!(ds.graph, data::generate_hexagonal(5, 2).unwrap().graph);
    let edges = ds.graph.edges();
    assert_eq!(edges.len(), 30);
    for &(u, v) in &edges {
        let rest: Vec<_> = edges.iter().copied().filter(|&e| e != (u, v)).collect();
        let h = SparseGraph::from_edges(30, &rest).unwrap();
        for len in 1..5 {
            assert_eq!(oracle_path_count_no_loops(&h, u, v, len).unwrap(), 0, "({u},{v}) length {len}");
        }
        assert_eq!(oracle_path_count_no_loops(&h, u, v, 5).unwrap(), 1);
    }
}

#[test]
fn case_study_split_is_reproducible_and_clean() {
    for kind in [SynthKind::Triangular, SynthKind::Hexagonal] {
        let s = data::case_study_split(kind, 50, 0.1, 0.1, 4).unwrap();
        s.validate().unwrap();
        assert_eq!(s, data::case_study_split(kind, 50, 0.1, 0.1, 4).unwrap());
        let g = s.train_graph(50 * kind.cycle_len()).unwrap();
        for &(u, v) in s.supervision_positives().iter().chain(&s.valid_pos).chain(&s.test_pos) {
            assert!(!g.has_edge(u, v));
        }
    }
}

/// Scores independent of the labels give an AUC near one half.
#[test]
fn null_model_auc_is_near_half() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let edges = random_edges(200, 0.05, &mut r);
        let g = SparseGraph::from_edges(200, &edges).unwrap();
        let split = split_edges(&g, 0.05, 0.2, seed).unwrap();
        let pos: Vec<f64> = split.test_pos.iter().map(|_| r.gen()).collect();
        let neg: Vec<f64> = split.test_neg.iter().map(|_| r.gen()).collect();
        let auc = auc_metric(&pos, &neg).unwrap();
        assert!((auc - 0.5).abs() <= 0.1, "seed {seed}: {auc}");
    }
}

#[test]
fn frozen_groups_stay_fixed() {
    let g = SparseGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
    let cfg = ModelConfig {
        depth: 2,
        use_node_embeddings: true,
        embedding_dim: 2,
        mlp_layers: 1,
        ..Default::default()
    };
    let mut params = model::init_params(&cfg, &g, 0).unwrap();
    let before = params.clone();
    let mut grads = GradientBundle::zeros_like(&params);
    for (_, t) in grads.0.tensors_mut() {
        t.iter_mut().for_each(|v| *v = 1.0);
    }
    let mut adam = AdamState::new(&params);
    adam.step(&mut params, &grads, 0.1, &TrainConfig::default().adam, &[ParamGroup::Beta]).unwrap();
    assert_eq!(params.betas, before.betas);
    assert_ne!(params.node_embeddings, before.node_embeddings);
}
