//! Finite-difference checks over every differentiable kernel, every layer
//! kind crossed with the layer recipe options, and whole models with loss.
//!
//! Each check contracts the op output with a fixed random projection, so
//! the scalar objective touches every output coordinate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{build_graph, gcn_norm_weights, Graph};
use crate::layers::{layer_forward, LayerConfig, LayerKind, LayerParams, LayerVars, NormKind, Propagation};
use crate::model::{forward_on_tape, masked_loss, ModelConfig, ModelParams, ModelVars, Reduction};
use crate::tensor::{finite_diff_check, Activation, GradReport, Matrix, Mode, RunningStats, Tape, Var};

pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: String,
    pub report: GradReport,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

fn dot(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// Checks d/dx of `<build(x), P>` for a fixed random `P`.
fn tape_check<'g, F>(name: String, point: &Matrix<f64>, seed: u64, build: F) -> Result<GradCase>
where
    F: Fn(&mut Tape<'g, f64>, Var) -> Result<Var>,
{
    let eval = |x: &Matrix<f64>| -> Result<(f64, Matrix<f64>)> {
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let out = build(&mut tape, v)?;
        let y = tape.value(out);
        let proj = random(y.rows(), y.cols(), &mut ChaCha8Rng::seed_from_u64(seed));
        let value = dot(y, &proj);
        let grad = tape
            .backward(out, proj)
            .take(v)
            .unwrap_or_else(|| Matrix::zeros(x.rows(), x.cols()));
        Ok((value, grad))
    };
    // surface construction errors once; after that every probe has the same shapes
    eval(point)?;
    let report = finite_diff_check(|x| eval(x).expect("probe evaluates"), point, TOLERANCE);
    Ok(GradCase { name, report })
}

/// Small random symmetric graph with at least one edge per node.
pub fn random_graph(n: usize, p: f64, self_loops: bool, rng: &mut ChaCha8Rng) -> Result<Graph> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
        edges.push((u, (u + 1) % n));
    }
    let edges: Vec<_> = edges.into_iter().filter(|(u, v)| u != v).collect();
    build_graph(&edges, n, true, self_loops)
}

fn kernel_cases(rng: &mut ChaCha8Rng) -> Result<Vec<GradCase>> {
    let g = random_graph(7, 0.3, true, rng)?;
    let w = gcn_norm_weights::<f64>(&g)?;
    let m = g.num_edges();
    let (a, b) = (random(5, 4, rng), random(4, 3, rng));
    let c = random(5, 4, rng);
    let bias = random(1, 4, rng);
    let x = random(7, 6, rng);
    let ew1 = random(m, 1, rng);
    let ew2 = random(m, 2, rng);
    let att = random(2, 6, rng);
    let logits = random(m, 2, rng);
    let gamma = random(1, 6, rng);
    let beta = random(1, 6, rng);
    let stats = RunningStats {
        mean: vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.1],
        var: vec![1.5, 0.7, 1.0, 2.0, 0.9, 1.1],
    };
    let mask: Vec<f64> = (0..42).map(|_| if rng.gen_bool(0.5) { 0.0 } else { 2.0 }).collect();
    let mut s = 100;
    let mut next = || {
        s += 1;
        s
    };
    let (gr, wv) = (&g, w.values());
    let mut out = vec![
        tape_check("matmul/a".into(), &a, next(), |t, v| {
            let bv = t.param(b.clone());
            t.matmul(v, bv)
        })?,
        tape_check("matmul/b".into(), &b, next(), |t, v| {
            let av = t.param(a.clone());
            t.matmul(av, v)
        })?,
        tape_check("matmul/shared".into(), &random(4, 4, rng), next(), |t, v| {
            t.matmul(v, v)
        })?,
        tape_check("add".into(), &a, next(), |t, v| {
            let cv = t.param(c.clone());
            t.add(v, cv)
        })?,
        tape_check("add_row/x".into(), &c, next(), |t, v| {
            let bv = t.param(bias.clone());
            t.add_row(v, bv)
        })?,
        tape_check("add_row/bias".into(), &bias, next(), |t, v| {
            let cv = t.param(c.clone());
            t.add_row(cv, v)
        })?,
        tape_check("spmm/x".into(), &x, next(), |t, v| t.spmm_fixed(gr, wv, v))?,
        tape_check("spmm_edge/weights".into(), &ew1, next(), |t, v| {
            let xv = t.param(x.clone());
            t.spmm_edge(gr, v, xv)
        })?,
        tape_check("spmm_edge/weights_2heads".into(), &ew2, next(), |t, v| {
            let xv = t.param(x.clone());
            t.spmm_edge(gr, v, xv)
        })?,
        tape_check("spmm_edge/x_2heads".into(), &x, next(), |t, v| {
            let wv = t.param(ew2.clone());
            t.spmm_edge(gr, wv, v)
        })?,
        tape_check("edge_scores/wh".into(), &x, next(), |t, v| {
            let av = t.param(att.clone());
            t.edge_scores(gr, v, av)
        })?,
        tape_check("edge_scores/att".into(), &att, next(), |t, v| {
            let xv = t.param(x.clone());
            t.edge_scores(gr, xv, v)
        })?,
        tape_check("segment_softmax".into(), &logits, next(), |t, v| {
            t.segment_softmax(gr, v)
        })?,
        tape_check("relu".into(), &x, next(), |t, v| Ok(t.activation(v, Activation::Relu)))?,
        tape_check("leaky_relu".into(), &x, next(), |t, v| {
            Ok(t.activation(v, Activation::LeakyRelu(0.2)))
        })?,
        tape_check("dropout".into(), &x, next(), |t, v| {
            Ok(t.dropout_with_mask(v, mask.clone()))
        })?,
    ];
    for (which, point) in [("x", &x), ("gamma", &gamma), ("beta", &beta)] {
        let pick = |t: &mut Tape<'_, f64>, v: Var| -> [Var; 3] {
            let mut vars = [x.clone(), gamma.clone(), beta.clone()].map(|m| t.param(m));
            vars[["x", "gamma", "beta"].iter().position(|w| *w == which).unwrap()] = v;
            vars
        };
        out.push(tape_check(format!("layer_norm/{which}"), point, next(), |t, v| {
            let [xv, gv, bv] = pick(t, v);
            t.layer_norm(xv, gv, bv, 1e-5)
        })?);
        for mode in [Mode::Train, Mode::Eval] {
            out.push(tape_check(
                format!("batch_norm_{mode:?}/{which}").to_lowercase(),
                point,
                next(),
                |t, v| {
                    let [xv, gv, bv] = pick(t, v);
                    Ok(t.batch_norm(xv, gv, bv, &stats, mode, 1e-5, 0.1)?.0)
                },
            )?);
        }
    }

    let labels: Vec<i64> = (0..7).map(|i| i % 3).collect();
    let z = random(7, 3, rng);
    let z1 = random(7, 1, rng);
    let bin: Vec<i64> = (0..7).map(|i| i % 2).collect();
    let maskn = [0, 2, 3, 6];
    for (name, point, labels, reduction) in [
        ("cross_entropy/mean", &z, &labels, Reduction::Mean),
        ("cross_entropy/sum", &z, &labels, Reduction::Sum),
        ("bce/mean", &z1, &bin, Reduction::Mean),
        ("bce/sum", &z1, &bin, Reduction::Sum),
    ] {
        let report = finite_diff_check(
            |p| masked_loss(p, labels, &maskn, reduction).expect("loss evaluates"),
            point,
            TOLERANCE,
        );
        out.push(GradCase {
            name: name.into(),
            report,
        });
    }
    Ok(out)
}

/// Recipe variants crossed with each layer kind.
const RECIPES: [(&str, f64, bool); 3] = [("plain", 0.0, false), ("dropout", 0.3, false), ("raw", 0.0, true)];

fn layer_cases(rng: &mut ChaCha8Rng) -> Result<Vec<GradCase>> {
    let base = random_graph(6, 0.4, false, rng)?;
    let mut out = Vec::new();
    let mut seed = 1000;
    for (kind, heads) in [
        (LayerKind::Gcn, 1),
        (LayerKind::Sage, 1),
        (LayerKind::Gat, 1),
        (LayerKind::Gat, 2),
    ] {
        let prop = Propagation::<f64>::new(kind, &base)?;
        for norm in [NormKind::None, NormKind::Layer, NormKind::Batch] {
            for residual in [false, true] {
                for (recipe, dropout, raw) in RECIPES {
                    let mut cfg = LayerConfig::new(kind, 3, 4);
                    cfg.heads = heads;
                    cfg.norm = norm;
                    cfg.residual = residual;
                    cfg.dropout = dropout;
                    cfg.raw_output = raw;
                    let mut params = LayerParams::<f64>::init(&cfg, rng)?;
                    // move gamma and beta off their initial values
                    for t in [&mut params.gamma, &mut params.beta].into_iter().flatten() {
                        *t = random(1, 4, rng);
                    }
                    let h = random(6, 3, rng);
                    let n_slots = params.tensors().len();
                    let tag = format!(
                        "{}{}/{}/res={}/{}",
                        kind.name(),
                        if heads > 1 { format!("x{heads}") } else { String::new() },
                        norm.name(),
                        residual,
                        recipe
                    );
                    for slot in 0..=n_slots {
                        seed += 1;
                        let point = if slot == n_slots {
                            h.clone()
                        } else {
                            params.tensors()[slot].clone()
                        };
                        let (prop, cfg, params, h) = (&prop, &cfg, &params, &h);
                        let name = if slot == n_slots {
                            format!("{tag}/input")
                        } else {
                            format!("{tag}/param{slot}")
                        };
                        out.push(tape_check(name, &point, seed, move |t, v| {
                            let vars = LayerVars::register(t, params);
                            let mut ordered = vars.ordered();
                            let hv = if slot == n_slots {
                                v
                            } else {
                                ordered[slot] = v;
                                t.param(h.clone())
                            };
                            let vars = rebind(vars, &ordered);
                            // fresh RNG per probe so every evaluation draws the same mask
                            let mut drng = ChaCha8Rng::seed_from_u64(seed);
                            let (o, _) = layer_forward(
                                t,
                                prop,
                                cfg,
                                &vars,
                                params.running.as_ref(),
                                hv,
                                Mode::Train,
                                &mut drng,
                            )?;
                            Ok(o)
                        })?);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Replaces the handles of `vars` with `ordered` (same order as `LayerVars::ordered`).
fn rebind(vars: LayerVars, ordered: &[Var]) -> LayerVars {
    let mut it = ordered.iter().copied();
    let mut next = |present: bool| if present { it.next() } else { None };
    let weight = next(true).expect("weight");
    LayerVars {
        weight,
        neighbor_weight: next(vars.neighbor_weight.is_some()),
        attention: next(vars.attention.is_some()),
        residual: next(vars.residual.is_some()),
        gamma: next(vars.gamma.is_some()),
        beta: next(vars.beta.is_some()),
    }
}

fn model_cases(rng: &mut ChaCha8Rng) -> Result<Vec<GradCase>> {
    let base = random_graph(8, 0.3, false, rng)?;
    let x = random(8, 3, rng);
    let mut out = Vec::new();
    let mut seed = 5000;
    for (kind, heads) in [(LayerKind::Gcn, 1), (LayerKind::Sage, 1), (LayerKind::Gat, 2)] {
        let prop = Propagation::<f64>::new(kind, &base)?;
        for (jk, classes) in [(false, 3), (true, 3), (false, 1)] {
            let mut cfg = ModelConfig::new(kind, 3, 4, classes, 2);
            cfg.heads = heads;
            cfg.jk = jk;
            cfg.norm = NormKind::Batch;
            cfg.residual = true;
            cfg.dropout = 0.25;
            let params = ModelParams::<f64>::init(&cfg, rng)?;
            let labels: Vec<i64> = (0..8).map(|i| (i % classes.max(2)) as i64).collect();
            let mask = [0, 1, 3, 4, 6];
            for slot in 0..params.tensors().len() {
                seed += 1;
                let point = params.tensors()[slot].clone();
                let name = format!(
                    "model/{}/jk={}/{}/param{slot}",
                    kind.name(),
                    jk,
                    if classes == 1 { "bce" } else { "ce" }
                );
                let eval = |p: &Matrix<f64>| -> Result<(f64, Matrix<f64>)> {
                    let mut params = params.clone();
                    *params.tensors_mut()[slot] = p.clone();
                    let mut tape = Tape::new();
                    let vars = ModelVars::register(&mut tape, &params);
                    let xv = tape.constant_ref(&x);
                    let mut drng = ChaCha8Rng::seed_from_u64(seed);
                    let pass = forward_on_tape(&mut tape, &prop, &cfg, &params, &vars, xv, Mode::Train, &mut drng)?;
                    let (loss, dlogits) = masked_loss(tape.value(pass.logits), &labels, &mask, Reduction::Mean)?;
                    let mut grads = tape.backward(pass.logits, dlogits);
                    let v = vars.ordered()[slot];
                    Ok((loss, grads.take(v).unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols()))))
                };
                eval(&point)?;
                let report = finite_diff_check(|p| eval(p).expect("probe evaluates"), &point, TOLERANCE);
                out.push(GradCase { name, report });
            }
        }
    }
    Ok(out)
}

/// Runs every check. Deterministic for a given seed.
pub fn run_suite(seed: u64) -> Result<Vec<GradCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = kernel_cases(&mut rng)?;
    cases.extend(layer_cases(&mut rng)?);
    cases.extend(model_cases(&mut rng)?);
    Ok(cases)
}
