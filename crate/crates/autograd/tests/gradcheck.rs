//! Finite-difference checks for every differentiable operation.

use autograd::{mean_tensors, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Compares autodiff gradients of `sum(f(inputs) * probe)` with central
/// differences in f64-accumulated f32 arithmetic.
fn check<F>(inputs: Vec<(Vec<f32>, Vec<usize>)>, f: F, step: f32, tol: f32)
where
    F: Fn(&[Tensor]) -> Tensor,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let leaves: Vec<Tensor> = inputs.iter().map(|(d, s)| Tensor::var(d.clone(), s)).collect();
    let out = f(&leaves);
    let probe = random(&mut rng, out.numel(), -1.0, 1.0);
    let objective = |ts: &[Tensor]| -> f64 {
        let o = f(ts);
        o.data().iter().zip(&probe).map(|(&a, &b)| a as f64 * b as f64).sum()
    };
    let grads = out.mul(&Tensor::new(probe.clone(), out.shape())).sum_all().backward();
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(leaf);
        for j in 0..leaf.numel() {
            let eval = |delta: f32| {
                let ts: Vec<Tensor> = inputs
                    .iter()
                    .enumerate()
                    .map(|(k, (d, s))| {
                        let mut d = d.clone();
                        if k == li {
                            d[j] += delta;
                        }
                        Tensor::new(d, s)
                    })
                    .collect();
                objective(&ts)
            };
            let fd = ((eval(step) - eval(-step)) / (2.0 * step as f64)) as f32;
            let a = analytic[j];
            let err = (a - fd).abs() / fd.abs().max(a.abs()).max(1.0);
            assert!(err < tol, "input {li} elem {j}: autodiff {a} vs fd {fd}");
        }
    }
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = vec![2, 3];
    let a = random(&mut rng, 6, -2.0, 2.0);
    let b = random(&mut rng, 6, 0.5, 2.0);
    check(vec![(a.clone(), s.clone()), (b.clone(), s.clone())], |t| t[0].add(&t[1]).mul(&t[1]), 1e-2, 1e-2);
    check(vec![(a.clone(), s.clone()), (b.clone(), s.clone())], |t| t[0].sub(&t[1]).sqr(), 1e-2, 1e-2);
    check(vec![(b.clone(), s.clone())], |t| t[0].ln(), 1e-3, 1e-2);
    check(vec![(a.clone(), s.clone())], |t| t[0].tanh().scale(3.0).add_scalar(1.0), 1e-2, 1e-2);
    check(vec![(a.clone(), s.clone())], |t| t[0].sigmoid(), 1e-2, 1e-2);
    check(vec![(a.clone(), s.clone())], |t| t[0].softplus(), 1e-2, 1e-2);
    check(vec![(a.clone(), s.clone())], |t| t[0].sum_all().sqr(), 1e-2, 1e-2);
    check(vec![(a, s.clone())], |t| t[0].mean_all(), 1e-2, 1e-2);
}

#[test]
fn minimum_routes_to_smaller_argument() {
    let a = Tensor::var(vec![1.0, 3.0, 2.0], &[3]);
    let b = Tensor::var(vec![2.0, 1.0, 2.0], &[3]);
    let g = a.minimum(&b).sum_all().backward();
    assert_eq!(g.get(&a).unwrap(), &[1.0, 0.0, 1.0]);
    assert_eq!(g.get(&b).unwrap(), &[0.0, 1.0, 0.0]);
}

#[test]
fn layout_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, 2 * 3 * 4 * 4, -1.0, 1.0);
    let y = random(&mut rng, 2 * 2 * 4 * 4, -1.0, 1.0);
    let sx = vec![2, 3, 4, 4];
    let sy = vec![2, 2, 4, 4];
    check(vec![(x.clone(), sx.clone()), (y.clone(), sy.clone())], |t| Tensor::cat_channels(&[t[0].clone(), t[1].clone()]).sqr(), 1e-2, 1e-2);
    check(vec![(x.clone(), sx.clone())], |t| t[0].narrow_channels(1, 2).sqr(), 1e-2, 1e-2);
    check(vec![(x.clone(), sx.clone())], |t| t[0].narrow_batch(1, 1).sqr(), 1e-2, 1e-2);
    check(vec![(x.clone(), sx.clone())], |t| t[0].mean_channels().sqr(), 1e-2, 1e-2);
    check(vec![(x.clone(), sx.clone())], |t| t[0].avg_pool2().sqr(), 1e-2, 1e-2);
    check(vec![(x.clone(), sx.clone())], |t| t[0].upsample2_bilinear().sqr(), 1e-2, 1e-2);
    check(vec![(x.clone(), sx.clone())], |t| Tensor::cat_batch(&[t[0].clone(), t[0].scale(2.0)]).sqr(), 1e-2, 1e-2);
    check(vec![(x, sx.clone()), (y, sy)], |t| mean_tensors(&[t[0].narrow_channels(0, 2), t[1].clone()]).sqr(), 1e-2, 1e-2);
}

#[test]
fn convolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, 2 * 3 * 6 * 6, -1.0, 1.0);
    let w = random(&mut rng, 4 * 3 * 3 * 3, -0.5, 0.5);
    let b = random(&mut rng, 4, -0.5, 0.5);
    for stride in [1, 2] {
        check(
            vec![(x.clone(), vec![2, 3, 6, 6]), (w.clone(), vec![4, 3, 3, 3]), (b.clone(), vec![4])],
            move |t| t[0].conv2d(&t[1], Some(&t[2]), stride, 1).sqr(),
            1e-2,
            2e-2,
        );
    }
    let wt = random(&mut rng, 3 * 4 * 5 * 5, -0.5, 0.5);
    let xs = random(&mut rng, 2 * 3 * 3 * 3, -1.0, 1.0);
    check(
        vec![(xs, vec![2, 3, 3, 3]), (wt, vec![3, 4, 5, 5]), (b, vec![4])],
        |t| {
            let y = t[0].conv_transpose2d(&t[1], Some(&t[2]), 2, 2, 1);
            assert_eq!(y.shape(), &[2, 4, 6, 6]);
            y.sqr()
        },
        1e-2,
        2e-2,
    );
}

#[test]
fn shared_subexpressions_accumulate() {
    let x = Tensor::var(vec![3.0], &[1]);
    let y = x.mul(&x).add(&x);
    let g = y.sum_all().backward();
    assert_eq!(g.get(&x).unwrap(), &[7.0]);
}

#[test]
fn constants_record_no_graph() {
    let x = Tensor::new(vec![1.0, 2.0], &[2]);
    let y = x.sqr().sum_all();
    assert!(!y.requires_grad());
    assert!(y.backward().get(&x).is_none());
}

#[test]
fn select_per_element_routes_gradient() {
    let a = Tensor::var(vec![1.0, 2.0, 3.0], &[3]);
    let b = Tensor::var(vec![4.0, 5.0, 6.0], &[3]);
    let s = Tensor::select_per_element(&[a.clone(), b.clone()], &[1, 0, 1]);
    assert_eq!(s.data(), &[4.0, 2.0, 6.0]);
    let g = s.sum_all().backward();
    assert_eq!(g.get(&a).unwrap(), &[0.0, 1.0, 0.0]);
    assert_eq!(g.get(&b).unwrap(), &[1.0, 0.0, 1.0]);
}
