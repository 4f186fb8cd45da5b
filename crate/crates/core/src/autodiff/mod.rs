//! Minimal dense autodiff: a recording [`Graph`], matmul kernels and Adam.

mod adam;
mod graph;
mod kernels;

pub use adam::{AdamConfig, AdamState};
pub use graph::{log_softmax, softmax_in_place, Graph, Var, MASKED};

use alloc::vec::Vec;

use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Softmax over the last dimension of `x`.
pub fn softmax_lastdim<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let c = x.cols();
    let mut data: Vec<T> = x.data().to_vec();
    data.chunks_exact_mut(c).for_each(softmax_in_place);
    if data.iter().any(|v| !v.is_finite()) {
        return Err(crate::Error::NonFinite { op: "softmax" });
    }
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t2(rows: usize, cols: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], data).unwrap().with_requires_grad(true)
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        t2(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of every input gradient of `f`.
    fn fd_check(inputs: &[Tensor<f64>], f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t).unwrap()).collect();
        let loss = f(&mut g, &vars).unwrap();
        g.backward(loss).unwrap();

        let eval = |ts: &[Tensor<f64>]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ts.iter().map(|t| g.input(t).unwrap()).collect();
            let l = f(&mut g, &vars).unwrap();
            g.scalar(l)
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = g.grad(vars[k]).expect("input reached by loss").to_vec();
            for (i, &a) in analytic.iter().enumerate().take(t.numel()) {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[i] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let mut g = Graph::<f64>::new();
        let i = g.input(&t2(2, 2, vec![1.0, 0.0, 0.0, 1.0])).unwrap();
        let b = g.input(&t2(2, 2, vec![2.0, 3.0, 4.0, 5.0])).unwrap();
        let c = g.matmul(i, b).unwrap();
        assert_eq!(g.value(c), &[2.0, 3.0, 4.0, 5.0]);

        let a = g.input(&t2(1, 2, vec![1.0, 2.0])).unwrap();
        let b = g.input(&t2(2, 1, vec![3.0, 4.0])).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[11.0]);

        let bad = g.input(&t2(1, 2, vec![0.0, 0.0])).unwrap();
        assert!(matches!(g.matmul(a, bad), Err(Error::Shape { op: "matmul", .. })));
    }

    #[test]
    fn matmul_gradient_of_sum_is_ones_times_bt() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(4, 5, &mut rng);
        let b = random(5, 3, &mut rng);
        let mut g = Graph::new();
        let (va, vb) = (g.input(&a).unwrap(), g.input(&b).unwrap());
        let c = g.matmul(va, vb).unwrap();
        let s = g.sum(c).unwrap();
        g.backward(s).unwrap();
        let da = g.grad(va).unwrap();
        for i in 0..4 {
            for p in 0..5 {
                let want: f64 = b.row(p).iter().sum();
                assert!((da[i * 5 + p] - want).abs() < 1e-12);
            }
        }
        let err = fd_check(&[a, b], |g, v| {
            let c = g.matmul(v[0], v[1])?;
            g.sum(c)
        });
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_lastdim(&Tensor::new(vec![3], vec![0.0f64; 3]).unwrap()).unwrap();
        assert!(s.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

        let s = softmax_lastdim(&Tensor::new(vec![2], vec![1000.0f64, 0.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0]);

        let s = softmax_lastdim(&Tensor::new(vec![3], vec![1.0f64, 2.0, 3.0]).unwrap()).unwrap();
        let want = [0.09003057317038046, 0.24472847105479764, 0.6652409557748218];
        for (a, b) in s.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = Graph::<f64>::new();
        let gain = g.input(&t2(1, 3, vec![1.0; 3])).unwrap();
        let bias = g.input(&t2(1, 3, vec![0.0; 3])).unwrap();
        let x = g.input(&t2(1, 3, vec![5.0; 3])).unwrap();
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert_eq!(g.value(y), &[0.0; 3]);
        assert!(g.layer_norm(x, gain, bias, 0.0).is_err());
        assert!(g.layer_norm(x, gain, bias, -1.0).is_err());

        let gain = g.input(&t2(1, 2, vec![1.0; 2])).unwrap();
        let bias = g.input(&t2(1, 2, vec![0.0; 2])).unwrap();
        let x = g.input(&t2(1, 2, vec![1.0, 3.0])).unwrap();
        let y = g.layer_norm(x, gain, bias, 1e-12).unwrap();
        assert!((g.value(y)[0] + 1.0).abs() < 1e-9 && (g.value(y)[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_output_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(3, 8, &mut rng);
        let mut g = Graph::<f64>::new();
        let gain = g.input(&t2(1, 8, vec![1.0; 8])).unwrap();
        let bias = g.input(&t2(1, 8, vec![0.0; 8])).unwrap();
        let vx = g.input(&x).unwrap();
        let y = g.layer_norm(vx, gain, bias, 1e-5).unwrap();
        for row in g.value(y).chunks(8) {
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-7);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::<f64>::new();
        let uniform = g.input(&t2(1, 4, vec![0.0; 4])).unwrap();
        let l = g.cross_entropy(uniform, &[Some(2)], 0.0).unwrap();
        assert!((g.scalar(l) - 4f64.ln()).abs() < 1e-12);

        let peaked = g.input(&t2(1, 3, vec![0.0, 80.0, 0.0])).unwrap();
        let l = g.cross_entropy(peaked, &[Some(1)], 0.0).unwrap();
        assert!(g.scalar(l) < 1e-30);

        let x = g.input(&t2(1, 3, vec![1.0, 2.0, 3.0])).unwrap();
        let l = g.cross_entropy(x, &[Some(2)], 0.1).unwrap();
        assert!((g.scalar(l) - 0.5576059644443802).abs() < 1e-12);

        assert!(matches!(
            g.cross_entropy(x, &[Some(3)], 0.0),
            Err(Error::OutOfRange { what: "target id", .. })
        ));
        // masked rows do not contribute to the mean
        let two = g.input(&t2(2, 4, vec![0.0, 0.0, 0.0, 0.0, 9.0, 1.0, 2.0, 3.0])).unwrap();
        let l = g.cross_entropy(two, &[Some(0), None], 0.0).unwrap();
        assert!((g.scalar(l) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn backward_trivial_cases() {
        let x = t2(2, 2, vec![1.0, -2.0, 3.0, 0.5]);
        let mut g = Graph::new();
        let v = g.input(&x).unwrap();
        let s = g.sum(v).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(v).unwrap(), &[1.0; 4]);
        assert_eq!(g.backward(s), Err(Error::GraphConsumed));

        let mut g = Graph::new();
        let v = g.input(&x).unwrap();
        let sq = g.mul(v, v).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(v).unwrap(), &[2.0, -4.0, 6.0, 1.0]);

        let mut g = Graph::new();
        let v = g.input(&x).unwrap();
        assert_eq!(g.backward(v), Err(Error::NonScalarLoss { rows: 2, cols: 2 }));
    }

    #[test]
    fn non_finite_values_name_the_op() {
        let mut g = Graph::<f64>::new();
        let x = g.input(&t2(1, 2, vec![1e300, 1e300])).unwrap();
        assert_eq!(g.mul(x, x), Err(Error::NonFinite { op: "mul" }));
        assert!(g.input(&t2(1, 1, vec![f64::NAN])).is_err());
    }

    #[test]
    fn every_op_passes_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a = random(3, 4, &mut rng);
        let b = random(5, 4, &mut rng);
        let row = random(1, 4, &mut rng);
        let gain = random(1, 4, &mut rng);

        let cases: Vec<(&str, f64)> = vec![
            ("matmul_nt", fd_check(&[a.clone(), b.clone()], |g, v| {
                let c = g.matmul_nt(v[0], v[1])?;
                let c2 = g.mul(c, c)?;
                g.sum(c2)
            })),
            ("gelu+add_row", fd_check(&[a.clone(), row.clone()], |g, v| {
                let c = g.add_row(v[0], v[1])?;
                let c = g.gelu(c)?;
                let c2 = g.mul(c, c)?;
                g.mean(c2)
            })),
            ("softmax", fd_check(&[a.clone(), b.clone()], |g, v| {
                let s = g.softmax(v[0])?;
                let w = g.matmul_nt(s, v[1])?;
                let w2 = g.mul(w, w)?;
                g.sum(w2)
            })),
            ("layer_norm", fd_check(&[a.clone(), gain.clone(), row.clone(), b.clone()], |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                let w = g.matmul_nt(y, v[3])?;
                let w2 = g.mul(w, w)?;
                g.sum(w2)
            })),
            ("gather", fd_check(&[b.clone(), a.clone()], |g, v| {
                let e = g.gather(v[0], &[4, 1, 4])?;
                let w = g.mul(e, v[1])?;
                let w2 = g.mul(w, w)?;
                g.sum(w2)
            })),
            ("slices+concats", fd_check(&[a.clone(), b.clone()], |g, v| {
                let l = g.slice_cols(v[0], 0, 2)?;
                let r = g.slice_cols(v[0], 2, 2)?;
                let sw = g.concat_cols(&[r, l])?;
                let top = g.slice_rows(v[1], 1, 3)?;
                let st = g.concat_rows(&[sw, top])?;
                let st2 = g.mul(st, st)?;
                let flat = g.reshape(st2, 1, 24)?;
                let s = g.scale(flat, 0.3)?;
                g.sum(s)
            })),
            ("cross_entropy", fd_check(core::slice::from_ref(&a), |g, v| {
                g.cross_entropy(v[0], &[Some(1), None, Some(3)], 0.1)
            })),
        ];
        for (name, err) in cases {
            assert!(err < 1e-6, "{name}: rel err {err}");
        }
    }

    #[test]
    fn dropout_is_identity_at_rate_zero_and_scales_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = t2(1, 1000, vec![1.0; 1000]);
        let mut g = Graph::new();
        let v = g.input(&x).unwrap();
        assert_eq!(g.dropout(v, 0.0, &mut rng).unwrap(), v);
        let d = g.dropout(v, 0.1, &mut rng).unwrap();
        let vals = g.value(d);
        assert!(vals.iter().all(|&y| y == 0.0 || (y - 1.0 / 0.9).abs() < 1e-12));
        let dropped = vals.iter().filter(|&&y| y == 0.0).count();
        assert!((50..150).contains(&dropped), "{dropped}");
    }
}
