//! Layer primitives: 3-D gated convolution, spectral weight normalization,
//! and spectrally normalized plain convolution. Each layer's forward returns
//! a cache; the matching backward consumes it and yields exact adjoints.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{
    activation, activation_backward, conv3d_backward, conv3d_backward_input, conv3d_forward,
    Activation, ConvGeometry, Dims5, Scalar, Tensor5,
};

/// How spectral normalization behaves during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnMode {
    /// Run the configured power iterations, persist u and sigma, divide by
    /// the fresh sigma. Training default.
    Update,
    /// Divide by the stored sigma without touching the state. Used for
    /// inference and for finite-difference checks, which need the
    /// normalizer held constant.
    Frozen,
}

/// Persistent power-iteration state for one weight tensor.
#[derive(Debug, Clone)]
pub struct SpectralNormState<T> {
    /// Left singular vector estimate, length = output channels.
    pub u: Vec<T>,
    /// Iterations per Update forward.
    pub power_iters: usize,
    pub eps: f64,
    /// Last computed spectral norm estimate; 1 until the first update.
    pub sigma: T,
}

impl<T: Scalar> SpectralNormState<T> {
    pub fn new(out_channels: usize, rng: &mut Rng) -> Self {
        let mut u: Vec<T> = (0..out_channels)
            .map(|_| T::of_f64(rng.normal(1.0)))
            .collect();
        let norm = l2_norm(&u);
        if norm > 0.0 {
            for x in &mut u {
                *x /= T::of_f64(norm);
            }
        } else {
            u[0] = T::one();
        }
        SpectralNormState {
            u,
            power_iters: 1,
            eps: 1e-12,
            sigma: T::one(),
        }
    }
}

fn l2_norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter()
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Estimate the spectral norm of W viewed as an (out_channels, rest) matrix
/// with `state.power_iters` power iterations, and return W / sigma with the
/// state updated. A degenerate (near-zero) W is returned unchanged with the
/// flag set.
pub fn spectral_normalize<T: Scalar>(
    weight: &Tensor5<T>,
    state: &mut SpectralNormState<T>,
) -> Result<(Tensor5<T>, bool)> {
    let m = weight.dims().n;
    let k = weight.len() / m;
    if state.u.len() != m {
        return Err(Error::shape(
            "spectral_normalize u length",
            m,
            state.u.len(),
        ));
    }
    let a = weight.data();
    let mut v = vec![T::zero(); k];
    for _ in 0..state.power_iters {
        // v = A^T u / ||A^T u||
        for x in v.iter_mut() {
            *x = T::zero();
        }
        for (row, &ui) in state.u.iter().enumerate() {
            let a_row = &a[row * k..(row + 1) * k];
            for (vx, &ax) in v.iter_mut().zip(a_row) {
                *vx += ax * ui;
            }
        }
        let vn = l2_norm(&v);
        if vn < state.eps {
            return Ok((weight.clone(), true));
        }
        for x in &mut v {
            *x /= T::of_f64(vn);
        }
        // u = A v / ||A v||
        for (row, ux) in state.u.iter_mut().enumerate() {
            let a_row = &a[row * k..(row + 1) * k];
            let mut acc = 0.0f64;
            for (&ax, &vx) in a_row.iter().zip(&v) {
                acc += ax.as_f64() * vx.as_f64();
            }
            *ux = T::of_f64(acc);
        }
        let un = l2_norm(&state.u);
        if un < state.eps {
            return Ok((weight.clone(), true));
        }
        for x in &mut state.u {
            *x /= T::of_f64(un);
        }
    }
    // sigma = u^T A v
    let mut sigma = 0.0f64;
    for (row, &ui) in state.u.iter().enumerate() {
        let a_row = &a[row * k..(row + 1) * k];
        let mut acc = 0.0f64;
        for (&ax, &vx) in a_row.iter().zip(&v) {
            acc += ax.as_f64() * vx.as_f64();
        }
        sigma += ui.as_f64() * acc;
    }
    if sigma.abs() < state.eps {
        return Ok((weight.clone(), true));
    }
    state.sigma = T::of_f64(sigma);
    Ok((weight.scale(T::one() / state.sigma), false))
}

fn effective_weight<T: Scalar>(
    weight: &Tensor5<T>,
    sn: Option<&mut SpectralNormState<T>>,
    mode: SnMode,
) -> Result<(Tensor5<T>, T)> {
    match sn {
        None => Ok((weight.clone(), T::one())),
        Some(state) => match mode {
            SnMode::Update => {
                let (w_hat, degenerate) = spectral_normalize(weight, state)?;
                let sigma = if degenerate { T::one() } else { state.sigma };
                Ok((w_hat, sigma))
            }
            SnMode::Frozen => {
                let sigma = state.sigma;
                Ok((weight.scale(T::one() / sigma), sigma))
            }
        },
    }
}

/// Uniform fan-in initializer shared by all conv layers.
pub fn conv_weight_init<T: Scalar>(
    rng: &mut Rng,
    out_c: usize,
    in_c: usize,
    kernel: (usize, usize, usize),
) -> Tensor5<T> {
    let fan_in = in_c * kernel.0 * kernel.1 * kernel.2;
    let limit = (1.0 / fan_in as f64).sqrt();
    Tensor5::from_fn(
        Dims5::new(out_c, in_c, kernel.0, kernel.1, kernel.2),
        |_| T::of_f64(rng.range(-limit, limit)),
    )
}

/// Stack two weight tensors along the output-channel axis so a gated layer's
/// feature and gating filters run as a single convolution.
fn stack_out_channels<T: Scalar>(a: &Tensor5<T>, b: &Tensor5<T>) -> Result<Tensor5<T>> {
    let (da, db) = (a.dims(), b.dims());
    if (da.c, da.t, da.h, da.w) != (db.c, db.t, db.h, db.w) {
        return Err(Error::shape("stack_out_channels", da, db));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor5::from_vec(Dims5::new(da.n + db.n, da.c, da.t, da.h, da.w), data)
}

fn split_out_channels<T: Scalar>(w: &Tensor5<T>, n_first: usize) -> (Tensor5<T>, Tensor5<T>) {
    let d = w.dims();
    let per = d.c * d.t * d.h * d.w;
    let first = Tensor5::from_vec(
        Dims5::new(n_first, d.c, d.t, d.h, d.w),
        w.data()[..n_first * per].to_vec(),
    )
    .unwrap();
    let rest = Tensor5::from_vec(
        Dims5::new(d.n - n_first, d.c, d.t, d.h, d.w),
        w.data()[n_first * per..].to_vec(),
    )
    .unwrap();
    (first, rest)
}

/// 3-D gated convolution: output = sigmoid(gating) * phi(features), where
/// gating and features come from two parallel filters over the same input.
#[derive(Debug, Clone)]
pub struct GatedConv3d<T> {
    pub w_f: Tensor5<T>,
    pub b_f: Vec<T>,
    pub w_g: Tensor5<T>,
    pub b_g: Vec<T>,
    pub geom: ConvGeometry,
    pub phi: Activation,
    pub sn_f: Option<SpectralNormState<T>>,
    pub sn_g: Option<SpectralNormState<T>>,
}

pub struct GatedConvCache<T> {
    input: Tensor5<T>,
    gating_pre: Tensor5<T>,
    features_pre: Tensor5<T>,
    w_eff: Tensor5<T>, // stacked (gating then features), as used in forward
    sigma_f: T,
    sigma_g: T,
}

impl<T: Scalar> GatedConvCache<T> {
    /// sigmoid(gating) for the first output channel, for gate-map dumps.
    pub fn gate_map(&self) -> Result<Tensor5<T>> {
        let first = if self.gating_pre.dims().c == 1 {
            self.gating_pre.clone()
        } else {
            self.gating_pre.split_channels(1)?.0
        };
        activation(&first, Activation::Sigmoid)
    }
}

pub struct GatedConvGrads<T> {
    pub input: Tensor5<T>,
    pub w_f: Tensor5<T>,
    pub b_f: Vec<T>,
    pub w_g: Tensor5<T>,
    pub b_g: Vec<T>,
}

impl<T: Scalar> GatedConv3d<T> {
    pub fn new(
        rng: &mut Rng,
        in_c: usize,
        out_c: usize,
        geom: ConvGeometry,
        phi: Activation,
        spectral_norm: bool,
        sn_on_gating: bool,
    ) -> Self {
        let w_f = conv_weight_init(rng, out_c, in_c, geom.kernel);
        let w_g = conv_weight_init(rng, out_c, in_c, geom.kernel);
        let sn_f = spectral_norm.then(|| SpectralNormState::new(out_c, rng));
        let sn_g = (spectral_norm && sn_on_gating).then(|| SpectralNormState::new(out_c, rng));
        GatedConv3d {
            w_f,
            b_f: vec![T::zero(); out_c],
            w_g,
            b_g: vec![T::zero(); out_c],
            geom,
            phi,
            sn_f,
            sn_g,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.w_f.dims().n
    }

    pub fn forward(
        &mut self,
        input: &Tensor5<T>,
        mode: SnMode,
    ) -> Result<(Tensor5<T>, GatedConvCache<T>)> {
        if self.w_f.dims() != self.w_g.dims() {
            return Err(Error::shape(
                "gated conv filter dims",
                self.w_f.dims(),
                self.w_g.dims(),
            ));
        }
        let oc = self.out_channels();
        let (w_g_eff, sigma_g) = effective_weight(&self.w_g, self.sn_g.as_mut(), mode)?;
        let (w_f_eff, sigma_f) = effective_weight(&self.w_f, self.sn_f.as_mut(), mode)?;
        let w_eff = stack_out_channels(&w_g_eff, &w_f_eff)?;
        let mut bias = Vec::with_capacity(2 * oc);
        bias.extend_from_slice(&self.b_g);
        bias.extend_from_slice(&self.b_f);

        let pre = conv3d_forward(input, &w_eff, &bias, &self.geom)?;
        let (gating_pre, features_pre) = pre.split_channels(oc)?;
        let gate = activation(&gating_pre, Activation::Sigmoid)?;
        let feat = activation(&features_pre, self.phi)?;
        let output = gate.mul(&feat)?;
        Ok((
            output,
            GatedConvCache {
                input: input.clone(),
                gating_pre,
                features_pre,
                w_eff,
                sigma_f,
                sigma_g,
            },
        ))
    }

    /// Product-rule adjoint through the gate:
    /// d_gating = grad_out * phi(features) * sigmoid'(gating),
    /// d_features = grad_out * sigmoid(gating) * phi'(features).
    /// Spectral normalization is treated as a constant scale 1/sigma.
    pub fn backward(
        &self,
        grad_out: &Tensor5<T>,
        cache: &GatedConvCache<T>,
    ) -> Result<GatedConvGrads<T>> {
        let oc = self.out_channels();
        if grad_out.dims() != cache.gating_pre.dims() {
            return Err(Error::shape(
                "gated conv backward grad_out",
                cache.gating_pre.dims(),
                grad_out.dims(),
            ));
        }
        let gate = activation(&cache.gating_pre, Activation::Sigmoid)?;
        let feat = activation(&cache.features_pre, self.phi)?;
        let d_gating = activation_backward(
            &grad_out.mul(&feat)?,
            &cache.gating_pre,
            Activation::Sigmoid,
        )?;
        let d_features = activation_backward(&grad_out.mul(&gate)?, &cache.features_pre, self.phi)?;

        let d_pre = d_gating.concat_channels(&d_features)?;
        let (grad_input, gw_stacked, gb_stacked) =
            conv3d_backward(&d_pre, &cache.input, &cache.w_eff, &self.geom)?;
        let (gw_g_eff, gw_f_eff) = split_out_channels(&gw_stacked, oc);
        Ok(GatedConvGrads {
            input: grad_input,
            w_f: gw_f_eff.scale(T::one() / cache.sigma_f),
            b_f: gb_stacked[oc..].to_vec(),
            w_g: gw_g_eff.scale(T::one() / cache.sigma_g),
            b_g: gb_stacked[..oc].to_vec(),
        })
    }
}

/// Plain 3-D convolution with spectral normalization and an optional
/// activation; the discriminator is built from these.
#[derive(Debug, Clone)]
pub struct SnConv3d<T> {
    pub weight: Tensor5<T>,
    pub bias: Vec<T>,
    pub geom: ConvGeometry,
    pub phi: Option<Activation>,
    pub sn: Option<SpectralNormState<T>>,
}

pub struct SnConvCache<T> {
    input: Tensor5<T>,
    pre: Tensor5<T>,
    w_eff: Tensor5<T>,
    sigma: T,
}

impl<T: Scalar> SnConv3d<T> {
    pub fn new(
        rng: &mut Rng,
        in_c: usize,
        out_c: usize,
        geom: ConvGeometry,
        phi: Option<Activation>,
        spectral_norm: bool,
    ) -> Self {
        let weight = conv_weight_init(rng, out_c, in_c, geom.kernel);
        let sn = spectral_norm.then(|| SpectralNormState::new(out_c, rng));
        SnConv3d {
            weight,
            bias: vec![T::zero(); out_c],
            geom,
            phi,
            sn,
        }
    }

    pub fn forward(
        &mut self,
        input: &Tensor5<T>,
        mode: SnMode,
    ) -> Result<(Tensor5<T>, SnConvCache<T>)> {
        let (w_eff, sigma) = effective_weight(&self.weight, self.sn.as_mut(), mode)?;
        let pre = conv3d_forward(input, &w_eff, &self.bias, &self.geom)?;
        let out = match self.phi {
            Some(phi) => activation(&pre, phi)?,
            None => pre.clone(),
        };
        Ok((
            out,
            SnConvCache {
                input: input.clone(),
                pre,
                w_eff,
                sigma,
            },
        ))
    }

    pub fn backward(
        &self,
        grad_out: &Tensor5<T>,
        cache: &SnConvCache<T>,
    ) -> Result<(Tensor5<T>, Tensor5<T>, Vec<T>)> {
        let d_pre = match self.phi {
            Some(phi) => activation_backward(grad_out, &cache.pre, phi)?,
            None => grad_out.clone(),
        };
        let (grad_input, gw_eff, gb) =
            conv3d_backward(&d_pre, &cache.input, &cache.w_eff, &self.geom)?;
        Ok((grad_input, gw_eff.scale(T::one() / cache.sigma), gb))
    }

    /// Input gradient only; parameter gradients are skipped entirely.
    pub fn backward_input(
        &self,
        grad_out: &Tensor5<T>,
        cache: &SnConvCache<T>,
    ) -> Result<Tensor5<T>> {
        let d_pre = match self.phi {
            Some(phi) => activation_backward(grad_out, &cache.pre, phi)?,
            None => grad_out.clone(),
        };
        conv3d_backward_input(&d_pre, cache.input.dims(), &cache.w_eff, &self.geom)
    }
}
