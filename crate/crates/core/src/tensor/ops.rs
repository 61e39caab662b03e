//! Elementwise activations and nearest-neighbor upsampling, with adjoints.

use super::{Dims5, Scalar, Tensor5};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    pub fn leaky_default() -> Self {
        Activation::LeakyRelu { slope: 0.2 }
    }

    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Sigmoid => {
                let one = T::one();
                // Stable form; clamp keeps the output strictly inside (0, 1)
                // even where exp saturates in floating point.
                let v = if x >= T::zero() {
                    one / (one + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (one + e)
                };
                v.max(T::min_positive_value()).min(one - T::epsilon())
            }
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > T::zero() {
                    x
                } else {
                    x * T::of_f64(slope)
                }
            }
        }
    }

    /// Derivative at x (subgradient 0 taken at the relu kink).
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Sigmoid => {
                let s = Activation::Sigmoid.apply(x);
                s * (T::one() - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::of_f64(slope)
                }
            }
        }
    }
}

pub fn activation<T: Scalar>(input: &Tensor5<T>, kind: Activation) -> Result<Tensor5<T>> {
    if !input.all_finite() {
        return Err(Error::NonFinite("activation input"));
    }
    if let Activation::LeakyRelu { slope } = kind {
        if !slope.is_finite() {
            return Err(Error::NonFinite("leaky_relu slope"));
        }
    }
    Ok(input.map(|v| kind.apply(v)))
}

/// grad_input = grad_out * kind'(input)
pub fn activation_backward<T: Scalar>(
    grad_out: &Tensor5<T>,
    input: &Tensor5<T>,
    kind: Activation,
) -> Result<Tensor5<T>> {
    if grad_out.dims() != input.dims() {
        return Err(Error::shape(
            "activation_backward",
            input.dims(),
            grad_out.dims(),
        ));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| g * kind.derivative(x))
        .collect();
    Tensor5::from_vec(input.dims(), data)
}

/// out[n,c,t,y,x] = in[n,c,t/ft,y/fh,x/fw]
pub fn upsample3d_nearest<T: Scalar>(
    input: &Tensor5<T>,
    factors: (usize, usize, usize),
) -> Result<Tensor5<T>> {
    let (ft, fh, fw) = factors;
    if ft == 0 || fh == 0 || fw == 0 {
        return Err(Error::InvalidGeometry(
            "upsample factors must be >= 1".into(),
        ));
    }
    let d = input.dims();
    let out_dims = Dims5::new(d.n, d.c, d.t * ft, d.h * fh, d.w * fw);
    let mut out = Tensor5::zeros(out_dims);
    for n in 0..d.n {
        for c in 0..d.c {
            for t in 0..out_dims.t {
                let st = t / ft;
                for y in 0..out_dims.h {
                    let sy = y / fh;
                    let src = input.index(n, c, st, sy, 0);
                    let dst = out.index(n, c, t, y, 0);
                    if fw == 1 {
                        let (src_row, dst_row) = (src..src + d.w, dst..dst + d.w);
                        let (a, b) = (input.data(), &mut out.data_mut()[dst_row]);
                        b.copy_from_slice(&a[src_row]);
                    } else {
                        for x in 0..out_dims.w {
                            out.data_mut()[dst + x] = input.data()[src + x / fw];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of nearest upsampling: block sums of grad_out.
pub fn upsample3d_backward<T: Scalar>(
    grad_out: &Tensor5<T>,
    factors: (usize, usize, usize),
) -> Result<Tensor5<T>> {
    let (ft, fh, fw) = factors;
    if ft == 0 || fh == 0 || fw == 0 {
        return Err(Error::InvalidGeometry(
            "upsample factors must be >= 1".into(),
        ));
    }
    let d = grad_out.dims();
    if !d.t.is_multiple_of(ft) || !d.h.is_multiple_of(fh) || !d.w.is_multiple_of(fw) {
        return Err(Error::shape(
            "upsample3d_backward",
            format!("dims divisible by {factors:?}"),
            d,
        ));
    }
    let in_dims = Dims5::new(d.n, d.c, d.t / ft, d.h / fh, d.w / fw);
    let mut grad_in = Tensor5::zeros(in_dims);
    for n in 0..d.n {
        for c in 0..d.c {
            for t in 0..d.t {
                for y in 0..d.h {
                    let src = grad_out.index(n, c, t, y, 0);
                    let dst = grad_in.index(n, c, t / ft, y / fh, 0);
                    for x in 0..d.w {
                        grad_in.data_mut()[dst + x / fw] += grad_out.data()[src + x];
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        let t = Tensor5::<f64>::zeros(Dims5::new(1, 1, 1, 1, 4));
        let out = activation(&t, Activation::Sigmoid).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let t = Tensor5::<f64>::filled(Dims5::new(1, 1, 1, 1, 1), -2.0);
        let out = activation(&t, Activation::LeakyRelu { slope: 0.2 }).unwrap();
        assert!((out.data()[0] + 0.4).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_strictly_in_unit_interval() {
        let mut rng = crate::rng::Rng::from_seed(99);
        let t = Tensor5::<f64>::from_fn(Dims5::new(1, 1, 2, 8, 8), |_| rng.range(-60.0, 60.0));
        let out = activation(&t, Activation::Sigmoid).unwrap();
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn activation_rejects_non_finite() {
        let t = Tensor5::<f64>::filled(Dims5::new(1, 1, 1, 1, 1), f64::NAN);
        assert!(activation(&t, Activation::Relu).is_err());
    }

    #[test]
    fn upsample_identity_factors() {
        let mut rng = crate::rng::Rng::from_seed(1);
        let t = Tensor5::<f64>::from_fn(Dims5::new(1, 2, 2, 3, 3), |_| rng.uniform());
        let out = upsample3d_nearest(&t, (1, 1, 1)).unwrap();
        assert_eq!(t, out);
    }

    #[test]
    fn upsample_duplicates_along_width() {
        let t = Tensor5::<f64>::from_vec(Dims5::new(1, 1, 1, 1, 2), vec![3.0, 7.0]).unwrap();
        let out = upsample3d_nearest(&t, (1, 1, 2)).unwrap();
        assert_eq!(out.data(), &[3.0, 3.0, 7.0, 7.0]);
    }

    #[test]
    fn upsample_backward_is_block_sum() {
        let g = Tensor5::<f64>::from_vec(
            Dims5::new(1, 1, 1, 2, 4),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        )
        .unwrap();
        let gi = upsample3d_backward(&g, (1, 2, 2)).unwrap();
        assert_eq!(gi.dims(), Dims5::new(1, 1, 1, 1, 2));
        assert_eq!(gi.data(), &[1.0 + 2.0 + 5.0 + 6.0, 3.0 + 4.0 + 7.0 + 8.0]);
    }
}
