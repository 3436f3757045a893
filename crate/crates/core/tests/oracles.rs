#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use gnnkit::graph::{build_graph, gcn_norm_weights, EdgeWeights};
use gnnkit::layers::{
    gat_forward, gcn_forward, sage_forward, LayerConfig, LayerKind, LayerParams, NormKind, Propagation,
};
use gnnkit::model::{model_forward, ModelConfig, ModelParams};
use gnnkit::tensor::kernels::spmm;
use gnnkit::tensor::{Matrix, Mode};
use gnnkit::train::roc_auc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAPHS: u64 = 40;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn spmm_matches_dense_product() {
    for seed in 0..GRAPHS {
        let mut r = rng(seed);
        let n = r.gen_range(1..=50);
        let edges = random_edges(n, &mut r);
        let g = build_graph(&edges, n, false, false).unwrap();
        let p = pairs(n, &edges, false, false);
        let mut dense = vec![vec![0.0; n]; n];
        for &(v, u) in &p {
            dense[v][u] = r.gen_range(-1.0..1.0);
        }
        // slot order is (row, col) sorted, the same order as the pair set
        let w: Vec<f64> = p.iter().map(|&(v, u)| dense[v][u]).collect();
        let x = random_matrix(n, 5, &mut r);
        let got = spmm(&g, &w, 1, &x).unwrap();
        assert!(scaled_err(&got, &dense_mm(&dense, &x)) < 1e-12, "seed {seed}");
        let got32 = spmm(
            &g,
            &w.iter().map(|&v| v as f32).collect::<Vec<_>>(),
            1,
            &x.cast::<f32>(),
        )
        .unwrap();
        assert!(scaled_err(&got32.cast(), &dense_mm(&dense, &x)) < 1e-5, "seed {seed}");
    }
}

#[test]
fn gcn_and_sage_layers_match_dense() {
    for seed in 0..GRAPHS {
        let mut r = rng(100 + seed);
        let n = r.gen_range(1..=50);
        let edges = random_edges(n, &mut r);
        let g = build_graph(&edges, n, true, true).unwrap();
        let cfg = LayerConfig::new(LayerKind::Gcn, 4, 3);
        let params = LayerParams::<f64>::init(&cfg, &mut r).unwrap();
        let h = random_matrix(n, 4, &mut r);
        let out = gcn_forward(
            &params,
            &cfg,
            &g,
            &gcn_norm_weights(&g).unwrap(),
            &h,
            Mode::Eval,
            &mut r,
        )
        .unwrap();
        let a = sym_normalize(&adjacency(n, &pairs(n, &edges, true, true)));
        let want = relu(&dense_mm(&a, &mm(&h, &params.weight)));
        assert!(scaled_err(&out.output, &want) < 1e-12, "gcn seed {seed}");

        let no_loops: Vec<_> = edges.iter().copied().filter(|(u, v)| u != v).collect();
        let gs = build_graph(&no_loops, n, true, false).unwrap();
        let cfg = LayerConfig::new(LayerKind::Sage, 4, 3);
        let params = LayerParams::<f64>::init(&cfg, &mut r).unwrap();
        let out = sage_forward(&params, &cfg, &gs, &h, Mode::Eval, &mut r).unwrap();
        let mean = mean_normalize(&adjacency(n, &pairs(n, &no_loops, true, false)));
        let neigh = mm(&dense_mm(&mean, &h), params.neighbor_weight.as_ref().unwrap());
        let want = relu(&plus(&mm(&h, &params.weight), &neigh));
        assert!(scaled_err(&out.output, &want) < 1e-12, "sage seed {seed}");
    }
}

#[test]
fn gat_attention_matches_dense() {
    for seed in 0..GRAPHS {
        let mut r = rng(200 + seed);
        let n = r.gen_range(1..=50);
        let edges = random_edges(n, &mut r);
        let g = build_graph(&edges, n, true, true).unwrap();
        let mut cfg = LayerConfig::new(LayerKind::Gat, 4, 6);
        cfg.heads = 2;
        cfg.raw_output = true;
        let params = LayerParams::<f64>::init(&cfg, &mut r).unwrap();
        let h = random_matrix(n, 4, &mut r);
        let out = gat_forward(&params, &cfg, &g, &h, Mode::Eval, &mut r).unwrap();
        let a = adjacency(n, &pairs(n, &edges, true, true));
        let wh = mm(&h, &params.weight);
        let (want, alphas) = gat_dense(&a, &wh, params.attention.as_ref().unwrap(), 0.2);
        assert!(scaled_err(&out.output, &want) < 1e-12, "seed {seed}");
        for alpha in &alphas {
            for row in alpha {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

/// Two-layer GCN with LayerNorm, residual and JK, composed from dense parts.
#[test]
fn whole_model_matches_dense_composition() {
    for seed in 0..10 {
        let mut r = rng(300 + seed);
        let n = r.gen_range(2..=40);
        let edges = random_edges(n, &mut r);
        let mut cfg = ModelConfig::new(LayerKind::Gcn, 5, 6, 3, 2);
        cfg.norm = NormKind::Layer;
        cfg.residual = true;
        cfg.jk = true;
        let mut params = ModelParams::<f64>::init(&cfg, &mut r).unwrap();
        for l in &mut params.layers {
            l.gamma = Some(random_matrix(1, 6, &mut r));
            l.beta = Some(random_matrix(1, 6, &mut r));
        }
        params.head_bias = random_matrix(1, 3, &mut r);
        let x = random_matrix(n, 5, &mut r);
        let base = build_graph(&edges, n, false, false).unwrap();
        let prop = Propagation::new(LayerKind::Gcn, &base).unwrap();
        let got = model_forward(&params, &cfg, &prop, &x, Mode::Eval, &mut r).unwrap();

        let a = sym_normalize(&adjacency(n, &pairs(n, &edges, true, true)));
        let mut h = x.clone();
        let mut jk: Option<Matrix<f64>> = None;
        for l in &params.layers {
            let core = dense_mm(&a, &mm(&h, &l.weight));
            let pre = plus(&mm(&h, l.residual.as_ref().unwrap()), &core);
            h = relu(&layer_norm(
                &pre,
                l.gamma.as_ref().unwrap(),
                l.beta.as_ref().unwrap(),
                1e-5,
            ));
            jk = Some(match jk {
                None => h.clone(),
                Some(s) => plus(&s, &h),
            });
        }
        let want = add_bias(&mm(&jk.unwrap(), &params.head_weight), &params.head_bias);
        assert!(
            scaled_err(&got, &want) < 1e-6,
            "seed {seed}: {}",
            scaled_err(&got, &want)
        );
    }
}

#[test]
fn models_are_permutation_equivariant() {
    for (i, kind) in [LayerKind::Gcn, LayerKind::Sage, LayerKind::Gat]
        .into_iter()
        .enumerate()
    {
        let mut r = rng(400 + i as u64);
        let n = 30;
        let edges = random_edges(n, &mut r);
        let mut cfg = ModelConfig::new(kind, 4, 8, 3, 3);
        cfg.heads = if kind == LayerKind::Gat { 2 } else { 1 };
        cfg.norm = NormKind::Layer;
        cfg.residual = true;
        let params = ModelParams::<f64>::init(&cfg, &mut r).unwrap();
        let x = random_matrix(n, 4, &mut r);
        let mut perm: Vec<usize> = (0..n).collect();
        for k in (1..n).rev() {
            perm.swap(k, r.gen_range(0..=k));
        }
        // node v becomes perm[v]
        let pedges: Vec<_> = edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut px = Matrix::zeros(n, 4);
        for v in 0..n {
            px.row_mut(perm[v]).copy_from_slice(x.row(v));
        }
        let run = |edges: &[(usize, usize)], x: &Matrix<f64>| {
            let prop = Propagation::new(kind, &build_graph(edges, n, false, false).unwrap()).unwrap();
            model_forward(&params, &cfg, &prop, x, Mode::Eval, &mut rng(0)).unwrap()
        };
        let (a, b) = (run(&edges, &x), run(&pedges, &px));
        for v in 0..n {
            for c in 0..3 {
                assert!((a.get(v, c) - b.get(perm[v], c)).abs() < 1e-10, "{kind:?}");
            }
        }
    }
}

#[test]
fn roc_auc_equals_pairwise_count() {
    for seed in 0..100 {
        let mut r = rng(500 + seed);
        let n = r.gen_range(2..=200);
        // coarse scores force plenty of ties
        let scores: Vec<f64> = (0..n).map(|_| (r.gen_range(0..20) as f64) / 4.0).collect();
        let mut labels: Vec<i64> = (0..n).map(|_| r.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let mask: Vec<usize> = (0..n).collect();
        assert_eq!(
            roc_auc(&scores, &labels, &mask).unwrap(),
            pairwise_auc(&scores, &labels)
        );
    }
}

#[test]
fn gcn_weights_from_dense_degrees() {
    let mut r = rng(600);
    let n = 20;
    let edges = random_edges(n, &mut r);
    let g = build_graph(&edges, n, true, true).unwrap();
    let w: EdgeWeights<f64> = gcn_norm_weights(&g).unwrap();
    let a = sym_normalize(&adjacency(n, &pairs(n, &edges, true, true)));
    for v in 0..n {
        for u in 0..n {
            assert!((w.get(&g, v, u) - a[v][u]).abs() < 1e-15);
        }
    }
}
