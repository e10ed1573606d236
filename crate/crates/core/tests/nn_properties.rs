use proptest::prelude::*;
use sumo::nn::{maxpool1d, softmax_channels, upsample_nn, Conv1d, Tensor};

fn tensor(shape: &[usize], vals: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), vals[..shape.iter().product::<usize>()].to_vec()).unwrap()
}

proptest! {
    #[test]
    fn conv_is_linear_in_input(
        vals in proptest::collection::vec(-1.0f64..1.0, 3 * 2 * 32),
        w in proptest::collection::vec(-1.0f64..1.0, 2 * 2 * 5),
        a in -3.0f64..3.0,
        t in 1usize..16,
        d in 1usize..4,
    ) {
        let layer = Conv1d::new(tensor(&[2, 2, 5], &w), Tensor::zeros(&[2]), d).unwrap();
        let x1 = tensor(&[1, 2, t], &vals);
        let x2 = tensor(&[1, 2, t], &vals[64..]);
        let mix = Tensor::new(vec![1, 2, t], x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + q).collect()).unwrap();
        let lhs = layer.forward(&mix).unwrap();
        let (y1, y2) = (layer.forward(&x1).unwrap(), layer.forward(&x2).unwrap());
        for i in 0..lhs.len() {
            prop_assert!((lhs.data()[i] - (a * y1.data()[i] + y2.data()[i])).abs() < 1e-10);
        }
        prop_assert_eq!(lhs.shape(), &[1, 2, t]);
    }

    #[test]
    fn softmax_normalizes(vals in proptest::collection::vec(-50.0f64..50.0, 2 * 2 * 20)) {
        let y = softmax_channels(&tensor(&[2, 2, 20], &vals)).unwrap();
        for b in 0..2 {
            for t in 0..20 {
                let (p, q) = (y.data()[b * 40 + t], y.data()[b * 40 + 20 + t]);
                prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&q));
                prop_assert!((p + q - 1.0).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn pool_then_upsample_restores_length(t in 1usize..500, w in 1usize..9) {
        let x = Tensor::<f32>::from_fn(&[1, 2, t], |i| i as f32);
        let (p, _) = maxpool1d(&x, w).unwrap();
        prop_assert_eq!(p.shape()[2], t.div_ceil(w));
        let u = upsample_nn(&p, w, t).unwrap();
        prop_assert_eq!(u.shape(), x.shape());
    }
}
