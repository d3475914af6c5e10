use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semtex_tensor::{Graph, Tensor, Var};

/// Compares analytic gradients of `f(inputs).sum()` against central
/// differences for every input element.
fn check(inputs: &[Tensor<f64>], f: impl Fn(&[Var<f64>]) -> Var<f64>) {
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&vars).sum();
    let grads = g.backward(&out);
    let eps = 1e-6;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(&vars[k]);
        for i in 0..t.numel() {
            let eval = |delta: f64| {
                let g = Graph::new();
                let vs: Vec<_> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let mut t = t.clone();
                        if j == k {
                            t.data_mut()[i] += delta;
                        }
                        g.constant(t)
                    })
                    .collect();
                f(&vs).sum().item()
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / (1e-6 + a.abs().max(numeric.abs()));
            assert!(err < 1e-5, "input {k} elem {i}: analytic {a} numeric {numeric}");
        }
    }
}

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn conv2d_strided_padded() {
    check(&[rand(&[2, 3, 5, 5], 1), rand(&[4, 3, 3, 3], 2)], |v| {
        v[0].conv2d(&v[1], 2, 1).square()
    });
}

#[test]
fn conv2d_pointwise() {
    check(&[rand(&[2, 3, 4, 4], 3), rand(&[2, 3, 1, 1], 4)], |v| {
        v[0].conv2d(&v[1], 1, 0).square()
    });
}

#[test]
fn matmul_family() {
    check(&[rand(&[3, 4], 5), rand(&[4, 2], 6), rand(&[5, 4], 7)], |v| {
        v[0].matmul(&v[1]).square().sum().add(&v[0].matmul_t(&v[2]).square().sum())
    });
}

#[test]
fn broadcast_arithmetic() {
    let pos = rand(&[1, 3, 1], 9).map(|x| x.abs() + 0.5);
    check(&[rand(&[2, 3, 4], 8), pos], |v| {
        v[0].mul(&v[1]).sub(&v[1]).div(&v[1].add_scalar(1.0)).square()
    });
}

#[test]
fn nonlinearities() {
    let pos = rand(&[10], 11).map(|x| x.abs() + 0.3);
    check(&[rand(&[10], 10), pos], |v| {
        let a = v[0].softplus().add(&v[0].leaky_relu(0.2)).add(&v[0].tanh());
        let b = v[1].sqrt().add(&v[1].rsqrt()).add(&v[1].exp());
        a.sum().add(&b.sum())
    });
}

#[test]
fn reductions_and_resampling() {
    check(&[rand(&[2, 3, 4, 4], 12)], |v| {
        let m = v[0].mean_axes(&[0, 2]).square();
        let s = v[0].sum_axes(&[1]).expand(&[2, 3, 4, 4]).mul(&v[0]);
        let r = v[0].avg_pool(2).upsample2x().mul(&v[0]);
        m.sum().add(&s.sum()).add(&r.sum())
    });
}

#[test]
fn shape_ops() {
    check(&[rand(&[2, 2, 3], 13), rand(&[2, 1, 3], 14)], |v| {
        let c = Var::concat(&[v[0].clone(), v[1].clone()], 1);
        let r = c.reshape(&[6, 3]).narrow0(1, 4);
        r.square().mul(&r)
    });
}
