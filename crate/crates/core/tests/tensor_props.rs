use ictasnet::tensor::{ops, Tensor};
use proptest::prelude::*;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).unwrap()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

/// `(L, N, data)` for an `L×N` map.
fn map2() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..9, 1usize..6).prop_flat_map(|(l, n)| (Just(l), Just(n), values(l * n)))
}

/// `(L, N, C, data)` for an `L×N×C` map.
fn map3() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
    (1usize..7, 1usize..5, 1usize..4).prop_flat_map(|(l, n, c)| (Just(l), Just(n), Just(c), values(l * n * c)))
}

fn eye(n: usize) -> Tensor {
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        d[i * n + i] = 1.0;
    }
    tensor(&[n, n], d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identity_convs_are_bit_exact((l, n, data) in map2(), dilation in 1usize..5) {
        let x = tensor(&[l, n], data.clone());
        let y = ops::pointwise_conv(&x, 1, &eye(n), Some(&Tensor::zeros(&[n]).unwrap())).unwrap();
        prop_assert_eq!(y.to_vec(), data.clone());
        let mut k = vec![0.0; n * 3];
        for i in 0..n {
            k[i * 3 + 1] = 1.0;
        }
        let y = ops::depthwise_conv1d(&x, &tensor(&[n, 3], k), &Tensor::zeros(&[n]).unwrap(), dilation).unwrap();
        prop_assert_eq!(y.to_vec(), data.clone());
        let y = ops::matmul(&x, &eye(n)).unwrap();
        prop_assert_eq!(y.to_vec(), data);
    }

    #[test]
    fn identity_2d_conv_is_bit_exact((l, n, c, data) in map3(), dilation in 1usize..4) {
        let x = tensor(&[l, n, c], data.clone());
        let mut k = vec![0.0; c * 9];
        for i in 0..c {
            k[i * 9 + 4] = 1.0;
        }
        let y = ops::depthwise_conv2d(&x, &tensor(&[c, 3, 3], k), &Tensor::zeros(&[c]).unwrap(), dilation).unwrap();
        prop_assert_eq!(y.to_vec(), data.clone());
        let y = ops::pointwise_conv(&x, 2, &eye(c), None).unwrap();
        prop_assert_eq!(y.to_vec(), data);
    }

    #[test]
    fn conv_shapes((l, n, c, data) in map3(), out in 1usize..6, dilation in 1usize..4) {
        let x = tensor(&[l, n, c], data);
        let w = Tensor::full(&[c, out], 0.5).unwrap();
        prop_assert_eq!(ops::pointwise_conv(&x, 2, &w, None).unwrap().shape().to_vec(), vec![l, n, out]);
        let w = Tensor::full(&[n, out], 0.5).unwrap();
        prop_assert_eq!(ops::pointwise_conv(&x, 1, &w, None).unwrap().shape().to_vec(), vec![l, out, c]);
        let k = Tensor::full(&[c, 3, 3], 0.1).unwrap();
        let b = Tensor::zeros(&[c]).unwrap();
        prop_assert_eq!(ops::depthwise_conv2d(&x, &k, &b, dilation).unwrap().shape().to_vec(), vec![l, n, c]);
        let g = Tensor::full(&[c], 1.0).unwrap();
        prop_assert_eq!(ops::global_layer_norm(&x, 2, &g, &b).unwrap().shape().to_vec(), vec![l, n, c]);
    }

    #[test]
    fn invalid_shapes_are_errors((l, n, data) in map2(), extra in 1usize..4) {
        let x = tensor(&[l, n], data);
        let w = Tensor::full(&[n + extra, 2], 1.0).unwrap();
        prop_assert!(ops::pointwise_conv(&x, 1, &w, None).is_err());
        prop_assert!(ops::matmul(&x, &w).is_err());
        let k = Tensor::full(&[n + extra, 3], 1.0).unwrap();
        prop_assert!(ops::depthwise_conv1d(&x, &k, &Tensor::zeros(&[n + extra]).unwrap(), 1).is_err());
        let other = Tensor::full(&[l, n + extra], 1.0).unwrap();
        prop_assert!(ops::add(&x, &other).is_err());
        prop_assert!(ops::mul(&x, &other).is_err());
        prop_assert!(ops::reshape(&x, &[l * n + extra]).is_err());
    }

    #[test]
    fn positive_homogeneity(data in values(12), a in 0.01f64..10.0, slope in -1.0f64..1.0) {
        let x = tensor(&[3, 4], data.clone());
        let ax = tensor(&[3, 4], data.iter().map(|v| a * v).collect());
        let s = tensor(&[1], vec![slope]);
        let scaled = |t: Tensor| -> Vec<f64> { t.to_vec().iter().map(|v| a * v).collect() };
        let lhs = ops::relu(&ax).to_vec();
        let rhs = scaled(ops::relu(&x));
        for (p, q) in lhs.iter().zip(&rhs) {
            prop_assert!((p - q).abs() <= 1e-15 * q.abs().max(1.0));
        }
        let lhs = ops::prelu(&ax, &s).unwrap().to_vec();
        let rhs = scaled(ops::prelu(&x, &s).unwrap());
        for (p, q) in lhs.iter().zip(&rhs) {
            prop_assert!((p - q).abs() <= 1e-15 * q.abs().max(1.0));
        }
    }

    #[test]
    fn forward_and_backward_are_deterministic((l, n, c, data) in map3()) {
        let run = || {
            let x = Tensor::parameter(&[l, n, c], data.clone()).unwrap();
            let g = Tensor::parameter(&[c], vec![1.5; c]).unwrap();
            let b = Tensor::parameter(&[c], vec![0.1; c]).unwrap();
            let k = Tensor::parameter(&[c, 3, 3], vec![0.3; c * 9]).unwrap();
            let y = ops::global_layer_norm(&x, 2, &g, &b).unwrap();
            let y = ops::depthwise_conv2d(&y, &k, &b, 2).unwrap();
            let y = ops::sigmoid(&y);
            let loss = ops::sum(&ops::mul(&y, &y).unwrap());
            loss.backward().unwrap();
            (y.to_vec(), x.grad().unwrap(), k.grad().unwrap())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn sigmoid_is_strictly_inside_unit_interval(data in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let n = data.len();
        for v in ops::sigmoid(&tensor(&[n], data)).to_vec() {
            prop_assert!(v > 0.0 && v < 1.0, "{v}");
        }
    }
}
