//! Convolution checked against a naive seven-loop reference and basic algebra.
#![allow(clippy::needless_range_loop)]

use vpforge_core::rng::Rng;
use vpforge_core::tensor::{conv3d_forward, ConvGeometry, Dims5, Tensor5};

/// Direct definition of zero-padded strided dilated 3-D convolution. Kept
/// deliberately naive; this is the reference the fast path is judged against.
fn naive_conv3d(
    input: &Tensor5<f64>,
    weight: &Tensor5<f64>,
    bias: &[f64],
    geom: &ConvGeometry,
) -> Tensor5<f64> {
    let id = input.dims();
    let wd = weight.dims();
    let (kt, kh, kw) = geom.kernel;
    let (st, sh, sw) = geom.stride;
    let (pt, ph, pw) = geom.padding;
    let (dt, dh, dw) = geom.dilation;
    let (ot, oh, ow) = geom.out_dims(id.t, id.h, id.w).unwrap();
    let mut out = Tensor5::zeros(Dims5::new(id.n, wd.n, ot, oh, ow));
    for n in 0..id.n {
        for o in 0..wd.n {
            for t in 0..ot {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = bias[o];
                        for i in 0..id.c {
                            for a in 0..kt {
                                for b in 0..kh {
                                    for c in 0..kw {
                                        let it = (t * st + a * dt) as isize - pt as isize;
                                        let iy = (y * sh + b * dh) as isize - ph as isize;
                                        let ix = (x * sw + c * dw) as isize - pw as isize;
                                        if it < 0
                                            || iy < 0
                                            || ix < 0
                                            || it >= id.t as isize
                                            || iy >= id.h as isize
                                            || ix >= id.w as isize
                                        {
                                            continue;
                                        }
                                        acc += weight.at(o, i, a, b, c)
                                            * input.at(n, i, it as usize, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        *out.at_mut(n, o, t, y, x) = acc;
                    }
                }
            }
        }
    }
    out
}

fn random_case(rng: &mut Rng) -> (Tensor5<f64>, Tensor5<f64>, Vec<f64>, ConvGeometry) {
    loop {
        let dims = Dims5::new(
            rng.range_usize(1, 2),
            rng.range_usize(1, 3),
            rng.range_usize(1, 6),
            rng.range_usize(1, 6),
            rng.range_usize(1, 6),
        );
        let kernel = (
            rng.range_usize(1, 3),
            rng.range_usize(1, 3),
            rng.range_usize(1, 3),
        );
        let geom = ConvGeometry::new(kernel)
            .with_stride((
                rng.range_usize(1, 2),
                rng.range_usize(1, 2),
                rng.range_usize(1, 2),
            ))
            .with_padding((
                rng.range_usize(0, 2),
                rng.range_usize(0, 2),
                rng.range_usize(0, 2),
            ))
            .with_dilation((
                rng.range_usize(1, 2),
                rng.range_usize(1, 2),
                rng.range_usize(1, 2),
            ));
        if geom.out_dims(dims.t, dims.h, dims.w).is_err() {
            continue;
        }
        let oc = rng.range_usize(1, 3);
        let input = Tensor5::from_fn(dims, |_| rng.range(-1.0, 1.0));
        let weight = Tensor5::from_fn(Dims5::new(oc, dims.c, kernel.0, kernel.1, kernel.2), |_| {
            rng.range(-1.0, 1.0)
        });
        let bias = (0..oc).map(|_| rng.range(-1.0, 1.0)).collect();
        return (input, weight, bias, geom);
    }
}

#[test]
fn matches_naive_oracle_on_random_geometries() {
    let mut rng = Rng::from_seed(0xC0DE);
    for case in 0..60 {
        let (input, weight, bias, geom) = random_case(&mut rng);
        let fast = conv3d_forward(&input, &weight, &bias, &geom).unwrap();
        let naive = naive_conv3d(&input, &weight, &bias, &geom);
        assert_eq!(fast.dims(), naive.dims());
        let max_err = fast
            .data()
            .iter()
            .zip(naive.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(
            max_err <= 1e-6,
            "case {case}: max abs err {max_err} (geom {geom:?})"
        );
    }
}

#[test]
fn specified_example_case() {
    // 1x2x3x4x4 input, 2 -> 3 channels, 3x3x3 kernel, pad 1.
    let mut rng = Rng::from_seed(777);
    let input = Tensor5::from_fn(Dims5::new(1, 2, 3, 4, 4), |_| rng.range(-1.0, 1.0));
    let weight = Tensor5::from_fn(Dims5::new(3, 2, 3, 3, 3), |_| rng.range(-1.0, 1.0));
    let bias = vec![0.1, -0.2, 0.3];
    let geom = ConvGeometry::new((3, 3, 3)).with_padding((1, 1, 1));
    let fast = conv3d_forward(&input, &weight, &bias, &geom).unwrap();
    let naive = naive_conv3d(&input, &weight, &bias, &geom);
    let max_err = fast
        .data()
        .iter()
        .zip(naive.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(max_err <= 1e-6, "max abs err {max_err}");
}

#[test]
fn conv_is_linear_in_input() {
    let mut rng = Rng::from_seed(31);
    let dims = Dims5::new(1, 2, 4, 5, 5);
    let x = Tensor5::from_fn(dims, |_| rng.range(-1.0, 1.0));
    let y = Tensor5::from_fn(dims, |_| rng.range(-1.0, 1.0));
    let weight = Tensor5::from_fn(Dims5::new(2, 2, 3, 3, 3), |_| rng.range(-1.0, 1.0));
    let geom = ConvGeometry::new((3, 3, 3)).with_padding((1, 1, 1));
    let bias = vec![0.0; 2];
    let (a, b) = (1.7, -0.4);

    let mut combo = x.scale(a);
    combo.add_scaled(&y, b).unwrap();
    let lhs = conv3d_forward(&combo, &weight, &bias, &geom).unwrap();

    let cx = conv3d_forward(&x, &weight, &bias, &geom).unwrap();
    let cy = conv3d_forward(&y, &weight, &bias, &geom).unwrap();
    let mut rhs = cx.scale(a);
    rhs.add_scaled(&cy, b).unwrap();

    let max_err = lhs
        .data()
        .iter()
        .zip(rhs.data())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    assert!(max_err <= 1e-6, "linearity violated: {max_err}");
}
