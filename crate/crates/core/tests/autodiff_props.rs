use koopid::autodiff::{xavier_init, Graph, Mlp, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Builds `Σ op(params) ∘ W` for a fixed random `W` so that every output
/// entry carries a different weight.
type Builder<'a> = dyn Fn(&mut Graph, &[Var]) -> Var + 'a;

fn scalar_of(g: &mut Graph, out: Var, seed: u64) -> Var {
    let shape = g.value(out).shape().to_vec();
    let n = g.value(out).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let w = g.constant(w);
    let prod = g.mul(out, w).unwrap();
    g.sum(prod).unwrap()
}

fn evaluate(build: &Builder, params: &[Tensor], seed: u64) -> (Graph, Var, Vec<Var>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, t)| g.param(&format!("p{i}"), t.clone()).unwrap())
        .collect();
    let out = build(&mut g, &vars);
    let root = scalar_of(&mut g, out, seed);
    (g, root, vars)
}

fn assert_matches_fd(build: &Builder, params: Vec<Tensor>, seed: u64) {
    let (g, root, _) = evaluate(build, &params, seed);
    let grads = g.backward(root).unwrap();
    for (i, p) in params.iter().enumerate() {
        let grad = &grads[&format!("p{i}")];
        for j in 0..p.len() {
            let mut plus = params.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = params.clone();
            minus[i].data_mut()[j] -= H;
            let (gp, rp, _) = evaluate(build, &plus, seed);
            let (gm, rm, _) = evaluate(build, &minus, seed);
            let fd = (gp.value(rp).data()[0] - gm.value(rm).data()[0]) / (2.0 * H);
            let an = grad.data()[j];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
            assert!(rel < 1e-5, "p{i}[{j}]: analytic {an}, finite difference {fd}");
        }
    }
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul_gradient(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n) = dims(&mut rng);
        let ps = vec![random_tensor(&mut rng, m, k, 2.0), random_tensor(&mut rng, k, n, 2.0)];
        assert_matches_fd(&|g, v| g.matmul(v[0], v[1]).unwrap(), ps, seed);
    }

    #[test]
    fn transpose_gradient(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n, _) = dims(&mut rng);
        let ps = vec![random_tensor(&mut rng, m, n, 2.0)];
        assert_matches_fd(&|g, v| g.transpose(v[0]).unwrap(), ps, seed);
    }

    #[test]
    fn elementwise_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n, _) = dims(&mut rng);
        let ps = vec![random_tensor(&mut rng, m, n, 2.0), random_tensor(&mut rng, m, n, 2.0)];
        assert_matches_fd(&|g, v| g.add(v[0], v[1]).unwrap(), ps.clone(), seed);
        assert_matches_fd(&|g, v| g.sub(v[0], v[1]).unwrap(), ps.clone(), seed);
        assert_matches_fd(&|g, v| g.mul(v[0], v[1]).unwrap(), ps.clone(), seed);
        assert_matches_fd(&|g, v| g.scale(v[0], -1.7).unwrap(), ps.clone(), seed);
        assert_matches_fd(&|g, v| g.square(v[0]).unwrap(), ps.clone(), seed);
        assert_matches_fd(&|g, v| g.tanh(v[0]).unwrap(), ps, seed);
    }

    #[test]
    fn reduction_and_layout_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n, k) = dims(&mut rng);
        let a = random_tensor(&mut rng, m, n, 2.0);
        let b = random_tensor(&mut rng, m, k, 2.0);
        let row = random_tensor(&mut rng, 1, n, 2.0);
        assert_matches_fd(&|g, v| g.sum(v[0]).unwrap(), vec![a.clone()], seed);
        assert_matches_fd(&|g, v| g.add_row(v[0], v[1]).unwrap(), vec![a.clone(), row], seed);
        assert_matches_fd(&|g, v| g.concat_cols(&[v[0], v[1], v[0]]).unwrap(), vec![a.clone(), b], seed);
        assert_matches_fd(&|g, v| g.reshape(v[0], &[n, m]).unwrap(), vec![a], seed);
    }

    #[test]
    fn row_matvec_gradient(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, p, q) = dims(&mut rng);
        let ps = vec![random_tensor(&mut rng, rows, p * q, 2.0), random_tensor(&mut rng, rows, q, 2.0)];
        assert_matches_fd(&|g, v| g.row_matvec(v[0], v[1]).unwrap(), ps, seed);
    }

    #[test]
    fn affine_tanh_chain_gradient(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n) = dims(&mut rng);
        let ps = vec![
            random_tensor(&mut rng, m, k, 2.0),
            random_tensor(&mut rng, k, n, 1.0),
            random_tensor(&mut rng, 1, n, 1.0),
        ];
        let build = |g: &mut Graph, v: &[Var]| {
            let h = g.affine(v[0], v[1], v[2]).unwrap();
            let t = g.tanh(h).unwrap();
            let sq = g.square(t).unwrap();
            g.mul(sq, h).unwrap()
        };
        assert_matches_fd(&build, ps, seed);
    }

    /// Adjoints are linear: the gradient of `f + c·h` equals
    /// `∇f + c·∇h` when both share the same leaves.
    #[test]
    fn adjoints_are_linear(seed in any::<u64>(), c in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n) = dims(&mut rng);
        let a = random_tensor(&mut rng, m, k, 2.0);
        let b = random_tensor(&mut rng, k, n, 2.0);
        let f = |g: &mut Graph, x: Var, y: Var| {
            let p = g.matmul(x, y).unwrap();
            let t = g.tanh(p).unwrap();
            g.sum(t).unwrap()
        };
        let h = |g: &mut Graph, x: Var, _y: Var| {
            let s = g.square(x).unwrap();
            g.sum(s).unwrap()
        };
        let grads = |which: u8| {
            let mut g = Graph::new();
            let x = g.param("a", a.clone()).unwrap();
            let y = g.param("b", b.clone()).unwrap();
            let root = match which {
                0 => f(&mut g, x, y),
                1 => h(&mut g, x, y),
                _ => {
                    let fv = f(&mut g, x, y);
                    let hv = h(&mut g, x, y);
                    let hs = g.scale(hv, c).unwrap();
                    g.add(fv, hs).unwrap()
                }
            };
            g.backward(root).unwrap()
        };
        let (gf, gh, gs) = (grads(0), grads(1), grads(2));
        for name in ["a", "b"] {
            for ((s, x), y) in gs[name].data().iter().zip(gf[name].data()).zip(gh[name].data()) {
                prop_assert!((s - (x + c * y)).abs() < 1e-12 * (1.0 + s.abs()));
            }
        }
    }

    #[test]
    fn xavier_bounds_and_determinism(seed in any::<u64>(), widths in prop::collection::vec(1usize..30, 2..5)) {
        let mlp = xavier_init(&widths, seed).unwrap();
        for (layer, w) in mlp.layers().iter().zip(widths.windows(2)) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            prop_assert!(layer.weight.data().iter().all(|v| v.abs() <= bound));
            prop_assert!(layer.bias.data().iter().all(|&v| v == 0.0));
        }
        prop_assert_eq!(mlp, xavier_init(&widths, seed).unwrap());
    }

    #[test]
    fn saturated_tanh_stays_finite(x in -1e300f64..1e300) {
        let mut g = Graph::new();
        let v = g.param("x", Tensor::scalar(x)).unwrap();
        let t = g.tanh(v).unwrap();
        let s = g.sum(t).unwrap();
        prop_assert!(g.value(t).data()[0].abs() <= 1.0);
        let grads = g.backward(s).unwrap();
        prop_assert!(grads["x"].data()[0].is_finite());
    }
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mlp = Mlp::xavier(&[3, 7, 2], true, &mut rng).unwrap();
    let x = random_tensor(&mut rng, 5, 3, 1.5);
    let mut flat = Vec::new();
    for l in mlp.layers() {
        flat.push(l.weight.clone());
        flat.push(Tensor::matrix(1, l.bias.len(), l.bias.data().to_vec()).unwrap());
    }
    flat.push(mlp.bypass().unwrap().clone());
    let build = |g: &mut Graph, v: &[Var]| {
        let xin = g.constant(x.clone());
        let h = g.affine(xin, v[0], v[1]).unwrap();
        let h = g.tanh(h).unwrap();
        let out = g.affine(h, v[2], v[3]).unwrap();
        let by = g.matmul(xin, v[4]).unwrap();
        g.add(out, by).unwrap()
    };
    // the hand-built graph is the network itself
    let mut g = Graph::new();
    let bound = mlp.bind(&mut g, "", false).unwrap();
    let xin = g.constant(x.clone());
    let y = bound.apply(&mut g, xin).unwrap();
    for r in 0..5 {
        let row = mlp.eval(x.row(r)).unwrap();
        for (a, b) in row.iter().zip(g.value(y).row(r)) {
            assert!((a - b).abs() < 1e-14);
        }
    }
    assert_matches_fd(&build, flat, 3);
}

#[test]
fn xavier_variance_matches_rule() {
    let mlp = xavier_init(&[4, 40, 4], 0).unwrap();
    for layer in mlp.layers() {
        let (fi, fo) = (layer.weight.rows(), layer.weight.cols());
        let d = layer.weight.data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64;
        let target = 2.0 / (fi + fo) as f64;
        assert!((var / target - 1.0).abs() < 0.2, "{var} vs {target}");
    }
}
