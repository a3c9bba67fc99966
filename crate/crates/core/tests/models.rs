//! Forward passes against dense reference implementations.

use dagconv::nn::{gcn_operator, simple_dcn_forward, Activation, Dcn, FbGcnn, Gcn, Mlp, Model, ParamSet, Pdcn};
use dagconv::synth::{assign_weights, er_dag, rng_from_seed, EdgeWeights};
use dagconv::{gso_set, transitive_closure, AnchorSelection, CausalGsoSet, Dag};
use nalgebra::DMatrix;
use rand::Rng;

const TOL: f64 = 1e-11;

fn setup(seed: u64) -> (Dag, CausalGsoSet, Vec<DMatrix<f64>>) {
    let d = er_dag(12, 0.3, seed).unwrap();
    let d = assign_weights(&d, EdgeWeights::SignedUniform { low: 0.2, high: 0.7 }, seed).unwrap();
    let c = transitive_closure(&d);
    let g = gso_set(&d, &c, &AnchorSelection::Nodes(vec![0, 3, 5, 7, 11]), false).unwrap();
    let dense = g.members().iter().map(|m| m.matrix().to_dense()).collect();
    (d, g, dense)
}

fn relu(m: DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

/// Applies `f` to every `n`-row block of a stacked batch.
fn per_sample(x: &DMatrix<f64>, n: usize, f: impl Fn(DMatrix<f64>) -> DMatrix<f64>) -> DMatrix<f64> {
    let blocks: Vec<DMatrix<f64>> = (0..x.nrows() / n).map(|b| f(x.rows(b * n, n).into_owned())).collect();
    let cols = blocks[0].ncols();
    let mut out = DMatrix::zeros(x.nrows(), cols);
    for (b, m) in blocks.iter().enumerate() {
        out.rows_mut(b * n, n).copy_from(m);
    }
    out
}

fn randomized(model: &Model, seed: u64) -> ParamSet {
    let mut rng = rng_from_seed(seed);
    let mut p = model.init_params(&mut rng);
    for t in p.tensors_mut() {
        t.value.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    p
}

fn batch(n: usize, f: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(3 * n, f, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn dcn_matches_dense_sum_of_shifts() {
    let (_, g, s) = setup(1);
    let n = g.n();
    let k = s.len();
    // widening then narrowing exercises both association orders
    let widths = vec![2, 4, 3, 1];
    let model = Model::Dcn(Dcn::new(&g, widths.clone()).unwrap());
    let p = randomized(&model, 2);
    let x = batch(n, 2, 3);
    let expected = per_sample(&x, n, |mut h| {
        for l in 0..widths.len() - 1 {
            let theta = &p.get(l).value;
            let fi = widths[l];
            let mut z = DMatrix::zeros(n, widths[l + 1]);
            for kk in 0..k {
                z += &s[kk] * &h * theta.rows(kk * fi, fi);
            }
            h = if l + 2 == widths.len() { z } else { relu(z) };
        }
        h
    });
    let got = model.predict(&p, &x).unwrap();
    assert!((got - expected).amax() < TOL);
}

#[test]
fn pdcn_matches_dense_shared_mlp() {
    let (_, g, s) = setup(4);
    let n = g.n();
    let model = Model::Pdcn(Pdcn::new(&g, vec![2, 6, 2]).unwrap());
    let p = randomized(&model, 5);
    let x = batch(n, 2, 6);
    let mlp = |h: DMatrix<f64>| {
        let z1 = relu(&h * &p.get(0).value + DMatrix::from_fn(n, 6, |_, j| p.get(1).value[(0, j)]));
        &z1 * &p.get(2).value + DMatrix::from_fn(n, 2, |_, j| p.get(3).value[(0, j)])
    };
    let expected = per_sample(&x, n, |h| s.iter().map(|sk| mlp(sk * &h)).fold(DMatrix::zeros(n, 2), |a, b| a + b));
    let got = model.predict(&p, &x).unwrap();
    assert!((got - expected).amax() < TOL);
}

#[test]
fn fb_gcnn_matches_dense_adjacency_powers() {
    let (d, g, _) = setup(7);
    let n = g.n();
    let a = d.adjacency_dense();
    let order = 3;
    let widths = vec![1, 4, 2];
    let model = Model::FbGcnn(FbGcnn::from_dag(&d, order, widths.clone()).unwrap());
    let p = randomized(&model, 8);
    let x = batch(n, 1, 9);
    let expected = per_sample(&x, n, |mut h| {
        for l in 0..2 {
            let fi = widths[l];
            let theta = &p.get(l).value;
            let mut z = DMatrix::zeros(n, widths[l + 1]);
            let mut ar = DMatrix::<f64>::identity(n, n);
            for r in 0..order {
                z += &ar * &h * theta.rows(r * fi, fi);
                ar = &a * ar;
            }
            h = if l == 1 { z } else { relu(z) };
        }
        h
    });
    let got = model.predict(&p, &x).unwrap();
    assert!((got - expected).amax() < TOL);
}

#[test]
fn gcn_matches_dense_normalized_operator() {
    let (d, g, _) = setup(10);
    let n = g.n();
    let mut ahat = DMatrix::<f64>::identity(n, n);
    for e in d.edges() {
        ahat[(e.target, e.source)] = 1.0;
        ahat[(e.source, e.target)] = 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| ahat.row(i).sum()).collect();
    let norm = DMatrix::from_fn(n, n, |i, j| ahat[(i, j)] / (deg[i] * deg[j]).sqrt());
    assert!((gcn_operator(&d).to_dense() - &norm).amax() < TOL);

    let model = Model::Gcn(Gcn::new(&d, vec![3, 2, 4]).unwrap());
    let p = randomized(&model, 11);
    let x = batch(n, 3, 12);
    let expected = per_sample(&x, n, |h| &norm * relu(&norm * h * &p.get(0).value) * &p.get(1).value);
    assert!((model.predict(&p, &x).unwrap() - expected).amax() < TOL);
}

#[test]
fn mlp_ignores_graph_structure() {
    let model = Model::Mlp(Mlp::new(vec![2, 3, 1]).unwrap());
    let p = randomized(&model, 13);
    let x = batch(5, 2, 14);
    let got = model.predict(&p, &x).unwrap();
    for r in 0..x.nrows() {
        let row = x.rows(r, 1).into_owned();
        let h = relu(&row * &p.get(0).value + &p.get(1).value);
        let y = &h * &p.get(2).value + &p.get(3).value;
        assert!((got[(r, 0)] - y[(0, 0)]).abs() < TOL);
    }
}

#[test]
fn scalar_tap_dcn_matches_nested_filters() {
    let (_, g, s) = setup(15);
    let n = g.n();
    let mut rng = rng_from_seed(16);
    let taps: Vec<Vec<f64>> = (0..2).map(|_| (0..s.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut h = DMatrix::from_column_slice(n, 1, &x);
    for t in &taps {
        let hf: DMatrix<f64> = s.iter().zip(t).map(|(sk, tk)| sk * &h * *tk).fold(DMatrix::zeros(n, 1), |a, b| a + b);
        h = relu(hf);
    }
    let got = simple_dcn_forward(&g, &taps, Activation::Relu, &x).unwrap();
    assert!(got.iter().zip(h.iter()).all(|(a, b)| (a - b).abs() < TOL));
}

#[test]
fn shape_errors_are_reported() {
    let (_, g, _) = setup(17);
    let model = Model::Dcn(Dcn::new(&g, vec![2, 1]).unwrap());
    let p = model.init_params(&mut rng_from_seed(0));
    assert!(model.predict(&p, &DMatrix::zeros(g.n(), 3)).is_err());
    assert!(model.predict(&p, &DMatrix::zeros(g.n() + 1, 2)).is_err());
    assert!(Dcn::new(&g, vec![2]).is_err());
}
