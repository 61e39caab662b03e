//! Training objectives: plain and masked l1, perceptual and style (Gram)
//! losses over a fixed feature extractor, and the hinge GAN pair. Every loss
//! returns its value together with the exact gradient the training loop needs.
//!
//! The feature extractor is a frozen stack of per-frame conv + relu + avgpool
//! stages. Its weights are deterministic pseudo-random from a seed by
//! default, or loaded from a checkpoint-format file; they are never trained,
//! and gradients flow through it to its input only.

use crate::error::{Error, Result};
use crate::io::checkpoint::{self, ParamRecord};
use crate::rng::Rng;
use crate::tensor::{
    activation, activation_backward, conv3d_backward_input, conv3d_forward, upsample3d_backward,
    upsample3d_nearest, Activation, ConvGeometry, Dims5, Matrix, Scalar, Tensor5,
};

/// Weights for the total objective.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub l1: f64,
    pub l1_mask: f64,
    pub perceptual: f64,
    pub style: f64,
    pub gan: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            l1_mask: 2.0,
            perceptual: 0.05,
            style: 25.0,
            gan: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.l1, self.l1_mask, self.perceptual, self.style, self.gan];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and >= 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Which way the hinge margins point. `Standard` is the usual orientation
/// (reals pushed above +1, fakes below -1). `PaperLiteral` swaps the two
/// margin terms and exists for comparison runs only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum HingeForm {
    #[default]
    Standard,
    PaperLiteral,
}

/// How the style loss normalizes each layer term. `Printed` divides the
/// summed Gram difference by C^2 and again by C*H*W; `Conventional` divides
/// by C*H*W only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum StyleNorm {
    #[default]
    Printed,
    Conventional,
}

#[inline]
fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Mean absolute error over every element, with gradient wrt the output.
pub fn l1_loss<T: Scalar>(output: &Tensor5<T>, target: &Tensor5<T>) -> Result<(T, Tensor5<T>)> {
    if output.dims() != target.dims() {
        return Err(Error::shape("l1_loss", target.dims(), output.dims()));
    }
    let n = output.len() as f64;
    let mut acc = 0.0f64;
    let mut grad = Tensor5::zeros(output.dims());
    for (g, (&o, &v)) in grad
        .data_mut()
        .iter_mut()
        .zip(output.data().iter().zip(target.data()))
    {
        let d = o - v;
        acc += d.as_f64().abs();
        *g = sign(d) * T::of_f64(1.0 / n);
    }
    Ok((T::of_f64(acc / n), grad))
}

/// Mean of M * |O - V| over every element (the mask broadcasts over
/// channels; unmasked voxels contribute zeros to the same denominator).
pub fn masked_l1_loss<T: Scalar>(
    output: &Tensor5<T>,
    target: &Tensor5<T>,
    mask: &Tensor5<T>,
) -> Result<(T, Tensor5<T>)> {
    if output.dims() != target.dims() {
        return Err(Error::shape("masked_l1_loss", target.dims(), output.dims()));
    }
    let d = output.dims();
    let md = mask.dims();
    if md.c != 1 || md.n != d.n || md.t != d.t || md.h != d.h || md.w != d.w {
        return Err(Error::shape("masked_l1_loss mask", d, md));
    }
    let n = output.len() as f64;
    let vol = d.voxels();
    let mut acc = 0.0f64;
    let mut grad = Tensor5::zeros(d);
    for nn in 0..d.n {
        let m_frame = &mask.data()[nn * vol..(nn + 1) * vol];
        for c in 0..d.c {
            let base = (nn * d.c + c) * vol;
            for i in 0..vol {
                let m = m_frame[i];
                let diff = output.data()[base + i] - target.data()[base + i];
                acc += (m * diff).as_f64().abs();
                grad.data_mut()[base + i] = m * sign(diff) * T::of_f64(1.0 / n);
            }
        }
    }
    Ok((T::of_f64(acc / n), grad))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureExtractorConfig {
    /// Output channels per stage; each stage halves height and width.
    pub channels: Vec<usize>,
    pub seed: u64,
    /// Optional checkpoint-format file overriding the random weights.
    pub weights_path: Option<String>,
}

impl Default for FeatureExtractorConfig {
    fn default() -> Self {
        FeatureExtractorConfig {
            channels: vec![32, 64, 96],
            seed: 7,
            weights_path: None,
        }
    }
}

struct Stage<T> {
    weight: Tensor5<T>,
    bias: Vec<T>,
    geom: ConvGeometry,
    relu: bool,
    pool: bool,
}

/// Frozen per-frame feature stack with one tap per stage.
pub struct FeatureExtractor<T> {
    stages: Vec<Stage<T>>,
    in_channels: usize,
}

const FE_GEOM: ConvGeometry = ConvGeometry {
    kernel: (1, 3, 3),
    stride: (1, 1, 1),
    padding: (0, 1, 1),
    dilation: (1, 1, 1),
};
const POOL: (usize, usize, usize) = (1, 2, 2);

impl<T: Scalar> FeatureExtractor<T> {
    pub fn from_config(cfg: &FeatureExtractorConfig, in_channels: usize) -> Result<Self> {
        if let Some(path) = &cfg.weights_path {
            let records = checkpoint::load_checkpoint(std::path::Path::new(path))?;
            return Self::from_records(&records, in_channels);
        }
        if cfg.channels.is_empty() {
            return Err(Error::Config(
                "feature extractor needs at least one stage".into(),
            ));
        }
        let mut rng = Rng::from_seed(cfg.seed);
        let mut stages = Vec::with_capacity(cfg.channels.len());
        let mut c_in = in_channels;
        for &c_out in &cfg.channels {
            let weight = crate::nn::conv_weight_init(&mut rng, c_out, c_in, FE_GEOM.kernel);
            stages.push(Stage {
                weight,
                bias: vec![T::zero(); c_out],
                geom: FE_GEOM,
                relu: true,
                pool: true,
            });
            c_in = c_out;
        }
        Ok(FeatureExtractor {
            stages,
            in_channels,
        })
    }

    /// Single 1x1 conv wired as the identity: features equal the input.
    /// Test fixture for the loss algebra.
    pub fn identity(channels: usize) -> Self {
        let mut weight = Tensor5::zeros(Dims5::new(channels, channels, 1, 1, 1));
        for c in 0..channels {
            *weight.at_mut(c, c, 0, 0, 0) = T::one();
        }
        FeatureExtractor {
            stages: vec![Stage {
                weight,
                bias: vec![T::zero(); channels],
                geom: ConvGeometry::new((1, 1, 1)),
                relu: false,
                pool: false,
            }],
            in_channels: channels,
        }
    }

    pub fn num_taps(&self) -> usize {
        self.stages.len()
    }

    pub fn to_records(&self) -> Vec<ParamRecord> {
        let mut recs = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            let d = s.weight.dims();
            recs.push(ParamRecord::new(
                format!("fe.stage{i}.weight"),
                vec![d.n as u32, d.c as u32, d.t as u32, d.h as u32, d.w as u32],
                s.weight.data().iter().map(|v| v.as_f64() as f32).collect(),
            ));
            recs.push(ParamRecord::new(
                format!("fe.stage{i}.bias"),
                vec![s.bias.len() as u32],
                s.bias.iter().map(|v| v.as_f64() as f32).collect(),
            ));
        }
        recs
    }

    pub fn from_records(records: &[ParamRecord], in_channels: usize) -> Result<Self> {
        let mut stages = Vec::new();
        let mut c_in = in_channels;
        for i in 0.. {
            let Some(w) = records
                .iter()
                .find(|r| r.name == format!("fe.stage{i}.weight"))
            else {
                break;
            };
            let b = records
                .iter()
                .find(|r| r.name == format!("fe.stage{i}.bias"))
                .ok_or_else(|| Error::Config(format!("missing fe.stage{i}.bias")))?;
            if w.dims.len() != 5 {
                return Err(Error::Config(format!("fe.stage{i}.weight must be rank 5")));
            }
            let dims = Dims5::new(
                w.dims[0] as usize,
                w.dims[1] as usize,
                w.dims[2] as usize,
                w.dims[3] as usize,
                w.dims[4] as usize,
            );
            if dims.c != c_in {
                return Err(Error::shape(
                    "feature extractor stage channels",
                    c_in,
                    dims.c,
                ));
            }
            stages.push(Stage {
                weight: Tensor5::from_vec(
                    dims,
                    w.data.iter().map(|&v| T::of_f64(v as f64)).collect(),
                )?,
                bias: b.data.iter().map(|&v| T::of_f64(v as f64)).collect(),
                geom: ConvGeometry::new((dims.t, dims.h, dims.w)).same_padding(),
                relu: true,
                pool: true,
            });
            c_in = dims.n;
        }
        if stages.is_empty() {
            return Err(Error::Config("no feature extractor stages in file".into()));
        }
        Ok(FeatureExtractor {
            stages,
            in_channels,
        })
    }

    fn check_frame(&self, frame: &Tensor5<T>) -> Result<()> {
        let d = frame.dims();
        if d.c != self.in_channels {
            return Err(Error::shape(
                "feature extractor channels",
                self.in_channels,
                d.c,
            ));
        }
        let pools = self.stages.iter().filter(|s| s.pool).count() as u32;
        let div = 2usize.pow(pools);
        if !d.h.is_multiple_of(div) || !d.w.is_multiple_of(div) || d.h == 0 || d.w == 0 {
            return Err(Error::shape(
                "feature extractor frame dims",
                format!("h, w divisible by {div}"),
                d,
            ));
        }
        Ok(())
    }

    /// Run one frame (1, C, 1, H, W); returns the tap outputs and a cache.
    fn forward_frame(&self, frame: &Tensor5<T>) -> Result<(Vec<Tensor5<T>>, FeCache<T>)> {
        self.check_frame(frame)?;
        let mut taps = Vec::with_capacity(self.stages.len());
        let mut cache = FeCache {
            inputs: Vec::with_capacity(self.stages.len()),
            pre_relu: Vec::with_capacity(self.stages.len()),
        };
        let mut x = frame.clone();
        for stage in &self.stages {
            cache.inputs.push(x.clone());
            let pre = conv3d_forward(&x, &stage.weight, &stage.bias, &stage.geom)?;
            cache.pre_relu.push(pre.clone());
            let mut y = if stage.relu {
                activation(&pre, Activation::Relu)?
            } else {
                pre
            };
            if stage.pool {
                y = avg_pool(&y)?;
            }
            taps.push(y.clone());
            x = y;
        }
        Ok((taps, cache))
    }

    /// Back-propagate per-tap gradients to the frame input.
    fn backward_frame(&self, tap_grads: &[Tensor5<T>], cache: &FeCache<T>) -> Result<Tensor5<T>> {
        let mut g: Option<Tensor5<T>> = None;
        for (i, stage) in self.stages.iter().enumerate().rev() {
            let mut gy = match g.take() {
                Some(prev) => {
                    let mut gy = tap_grads[i].clone();
                    gy.add_scaled(&prev, T::one())?;
                    gy
                }
                None => tap_grads[i].clone(),
            };
            if stage.pool {
                gy = avg_pool_backward(&gy)?;
            }
            let d_pre = if stage.relu {
                activation_backward(&gy, &cache.pre_relu[i], Activation::Relu)?
            } else {
                gy
            };
            g = Some(conv3d_backward_input(
                &d_pre,
                cache.inputs[i].dims(),
                &stage.weight,
                &stage.geom,
            )?);
        }
        g.ok_or_else(|| Error::Config("empty feature extractor".into()))
    }
}

struct FeCache<T> {
    inputs: Vec<Tensor5<T>>,
    pre_relu: Vec<Tensor5<T>>,
}

/// 2x2 spatial average pooling, expressed through the nearest-upsample pair.
fn avg_pool<T: Scalar>(x: &Tensor5<T>) -> Result<Tensor5<T>> {
    let quarter = T::of_f64(0.25);
    Ok(upsample3d_backward(x, POOL)?.scale(quarter))
}

fn avg_pool_backward<T: Scalar>(g: &Tensor5<T>) -> Result<Tensor5<T>> {
    let quarter = T::of_f64(0.25);
    Ok(upsample3d_nearest(g, POOL)?.scale(quarter))
}

fn extract_frame<T: Scalar>(video: &Tensor5<T>, n: usize, t: usize) -> Tensor5<T> {
    let d = video.dims();
    let hw = d.spatial();
    let mut out = Tensor5::zeros(Dims5::new(1, d.c, 1, d.h, d.w));
    for c in 0..d.c {
        let src = ((n * d.c + c) * d.t + t) * hw;
        out.data_mut()[c * hw..(c + 1) * hw].copy_from_slice(&video.data()[src..src + hw]);
    }
    out
}

fn scatter_frame_grad<T: Scalar>(
    grad: &mut Tensor5<T>,
    frame_grad: &Tensor5<T>,
    n: usize,
    t: usize,
) {
    let d = grad.dims();
    let hw = d.spatial();
    for c in 0..d.c {
        let dst = ((n * d.c + c) * d.t + t) * hw;
        for (g, &f) in grad.data_mut()[dst..dst + hw]
            .iter_mut()
            .zip(&frame_grad.data()[c * hw..(c + 1) * hw])
        {
            *g += f;
        }
    }
}

/// Per-frame feature maps from every tap layer: `result[frame][tap]`.
pub fn extract_features<T: Scalar>(
    video: &Tensor5<T>,
    fe: &FeatureExtractor<T>,
) -> Result<Vec<Vec<Tensor5<T>>>> {
    let d = video.dims();
    let mut all = Vec::with_capacity(d.n * d.t);
    for n in 0..d.n {
        for t in 0..d.t {
            let (taps, _) = fe.forward_frame(&extract_frame(video, n, t))?;
            all.push(taps);
        }
    }
    Ok(all)
}

/// Channel auto-correlation of a (C, H, W) feature map flattened to (C, H*W):
/// G[i][j] = sum over pixels of F[i] * F[j].
pub fn gram<T: Scalar>(feature: &Tensor5<T>) -> Matrix<T> {
    let d = feature.dims();
    let c = d.c;
    let hw = d.t * d.h * d.w; // frame features have t == 1
    let mut g = Matrix::zeros(c, c);
    unsafe {
        T::gemm(
            c,
            hw,
            c,
            T::one(),
            feature.data().as_ptr(),
            hw as isize,
            1,
            feature.data().as_ptr(),
            1,
            hw as isize,
            T::zero(),
            g.data.as_mut_ptr(),
            c as isize,
            1,
        );
    }
    g
}

/// Shared evaluation of the perceptual and style terms. Returns
/// ((perceptual, style), gradient wrt `output` of
/// w_perc * perceptual + w_style * style, frame count).
fn feature_losses<T: Scalar>(
    output: &Tensor5<T>,
    target: &Tensor5<T>,
    fe: &FeatureExtractor<T>,
    w_perc: f64,
    w_style: f64,
    style_norm: StyleNorm,
) -> Result<((f64, f64), Tensor5<T>, usize)> {
    if output.dims() != target.dims() {
        return Err(Error::shape("feature loss", target.dims(), output.dims()));
    }
    let d = output.dims();
    let mut perc_acc = 0.0f64;
    let mut style_acc = 0.0f64;
    let mut grad = Tensor5::zeros(d);

    for n in 0..d.n {
        for t in 0..d.t {
            let frame_o = extract_frame(output, n, t);
            let frame_v = extract_frame(target, n, t);
            let (taps_o, cache_o) = fe.forward_frame(&frame_o)?;
            let (taps_v, _) = fe.forward_frame(&frame_v)?;

            let mut tap_grads: Vec<Tensor5<T>> = Vec::with_capacity(taps_o.len());
            for (tap_o, tap_v) in taps_o.iter().zip(&taps_v) {
                let td = tap_o.dims();
                let n_p = (td.c * td.t * td.h * td.w) as f64;
                let mut tap_grad = Tensor5::zeros(td);

                // perceptual: |psi_o - psi_v| / N_p
                let mut acc = 0.0f64;
                for (g, (&o, &v)) in tap_grad
                    .data_mut()
                    .iter_mut()
                    .zip(tap_o.data().iter().zip(tap_v.data()))
                {
                    let diff = o - v;
                    acc += diff.as_f64().abs();
                    *g = sign(diff) * T::of_f64(w_perc / n_p);
                }
                perc_acc += acc / n_p;

                // style: normalized l1 between Gram matrices
                if w_style != 0.0 {
                    let c = td.c as f64;
                    let eta = match style_norm {
                        StyleNorm::Printed => 1.0 / (c * c * n_p),
                        StyleNorm::Conventional => 1.0 / n_p,
                    };
                    let g_o = gram(tap_o);
                    let g_v = gram(tap_v);
                    let mut s = Matrix::<T>::zeros(td.c, td.c);
                    let mut acc = 0.0f64;
                    for i in 0..td.c {
                        for j in 0..td.c {
                            let diff = g_o.at(i, j) - g_v.at(i, j);
                            acc += diff.as_f64().abs();
                            s.data[i * td.c + j] = sign(diff);
                        }
                    }
                    style_acc += acc * eta;
                    // d/dF of sum s_ij G_ij = (S + S^T) F
                    let hw = td.t * td.h * td.w;
                    let scale = T::of_f64(w_style * eta);
                    for i in 0..td.c {
                        for j in 0..td.c {
                            let coeff = (s.at(i, j) + s.at(j, i)) * scale;
                            if coeff == T::zero() {
                                continue;
                            }
                            let src = &tap_o.data()[j * hw..(j + 1) * hw];
                            let dst = &mut tap_grad.data_mut()[i * hw..(i + 1) * hw];
                            for (dv, &sv) in dst.iter_mut().zip(src) {
                                *dv += coeff * sv;
                            }
                        }
                    }
                }
                tap_grads.push(tap_grad);
            }

            let frame_grad = fe.backward_frame(&tap_grads, &cache_o)?;
            scatter_frame_grad(&mut grad, &frame_grad, n, t);
        }
    }
    Ok(((perc_acc, style_acc), grad, d.n * d.t))
}

/// Sum over frames and tap layers of |psi_O - psi_V| / N_p, with gradient.
pub fn perceptual_loss<T: Scalar>(
    output: &Tensor5<T>,
    target: &Tensor5<T>,
    fe: &FeatureExtractor<T>,
) -> Result<(T, Tensor5<T>)> {
    let ((perc, _), grad, _) = feature_losses(output, target, fe, 1.0, 0.0, StyleNorm::Printed)?;
    Ok((T::of_f64(perc), grad))
}

/// Sum over frames and tap layers of the normalized l1 distance between Gram
/// matrices, with gradient.
pub fn style_loss<T: Scalar>(
    output: &Tensor5<T>,
    target: &Tensor5<T>,
    fe: &FeatureExtractor<T>,
    norm: StyleNorm,
) -> Result<(T, Tensor5<T>)> {
    let ((_, style), grad, _) = feature_losses(output, target, fe, 0.0, 1.0, norm)?;
    Ok((T::of_f64(style), grad))
}

/// Hinge discriminator loss with gradients wrt both score volumes.
pub fn gan_d_loss<T: Scalar>(
    scores_real: &Tensor5<T>,
    scores_fake: &Tensor5<T>,
    form: HingeForm,
) -> (T, Tensor5<T>, Tensor5<T>) {
    let (real_sign, fake_sign) = match form {
        // mean relu(1 - real) + mean relu(1 + fake)
        HingeForm::Standard => (-1.0, 1.0),
        // mean relu(1 + real) + mean relu(1 - fake), as printed
        HingeForm::PaperLiteral => (1.0, -1.0),
    };
    let hinge = |scores: &Tensor5<T>, s: f64| -> (f64, Tensor5<T>) {
        let n = scores.len() as f64;
        let mut acc = 0.0f64;
        let mut grad = Tensor5::zeros(scores.dims());
        for (g, &v) in grad.data_mut().iter_mut().zip(scores.data()) {
            let arg = 1.0 + s * v.as_f64();
            if arg > 0.0 {
                acc += arg;
                *g = T::of_f64(s / n);
            }
        }
        (acc / n, grad)
    };
    let (real_val, grad_real) = hinge(scores_real, real_sign);
    let (fake_val, grad_fake) = hinge(scores_fake, fake_sign);
    (T::of_f64(real_val + fake_val), grad_real, grad_fake)
}

/// Generator adversarial loss: -mean(scores_fake), with gradient.
pub fn gan_g_loss<T: Scalar>(scores_fake: &Tensor5<T>) -> (T, Tensor5<T>) {
    let n = scores_fake.len() as f64;
    let mut acc = 0.0f64;
    for &v in scores_fake.data() {
        acc += v.as_f64();
    }
    let grad = Tensor5::filled(scores_fake.dims(), T::of_f64(-1.0 / n));
    (T::of_f64(-acc / n), grad)
}

/// Breakdown of the total objective.
#[derive(Debug, Clone)]
pub struct TotalLoss<T> {
    pub total: T,
    pub l1: T,
    pub l1_mask: T,
    pub perceptual: T,
    pub style: T,
    pub gan_g: T,
    /// Gradient wrt the generator output of every term except the GAN one.
    pub grad_output: Tensor5<T>,
    /// Gradient wrt the fake scores of the weighted GAN term, to be chained
    /// through the discriminator by the caller.
    pub grad_scores_fake: Option<Tensor5<T>>,
}

/// Weighted sum of the five terms. The GAN term is included when fake scores
/// are provided; its gradient is returned wrt the scores (the caller owns the
/// discriminator and finishes the chain).
pub fn total_loss<T: Scalar>(
    output: &Tensor5<T>,
    target: &Tensor5<T>,
    mask: &Tensor5<T>,
    fe: &FeatureExtractor<T>,
    weights: &LossWeights,
    scores_fake: Option<&Tensor5<T>>,
    style_norm: StyleNorm,
) -> Result<TotalLoss<T>> {
    weights.validate()?;
    let (l1, g_l1) = l1_loss(output, target)?;
    let (l1m, g_l1m) = masked_l1_loss(output, target, mask)?;

    let mut grad = Tensor5::zeros(output.dims());
    grad.add_scaled(&g_l1, T::of_f64(weights.l1))?;
    grad.add_scaled(&g_l1m, T::of_f64(weights.l1_mask))?;

    let (perc, style) = if weights.perceptual != 0.0 || weights.style != 0.0 {
        let ((perc, style), g_fe, _) = feature_losses(
            output,
            target,
            fe,
            weights.perceptual,
            weights.style,
            style_norm,
        )?;
        grad.add_scaled(&g_fe, T::one())?;
        (perc, style)
    } else {
        (0.0, 0.0)
    };

    let (gan_g, grad_scores_fake) = match scores_fake {
        Some(scores) if weights.gan != 0.0 => {
            let (v, g) = gan_g_loss(scores);
            (v.as_f64(), Some(g.scale(T::of_f64(weights.gan))))
        }
        Some(scores) => {
            let (v, _) = gan_g_loss(scores);
            (v.as_f64(), None)
        }
        None => (0.0, None),
    };

    let total = weights.l1 * l1.as_f64()
        + weights.l1_mask * l1m.as_f64()
        + weights.perceptual * perc
        + weights.style * style
        + weights.gan * gan_g;
    Ok(TotalLoss {
        total: T::of_f64(total),
        l1,
        l1_mask: l1m,
        perceptual: T::of_f64(perc),
        style: T::of_f64(style),
        gan_g: T::of_f64(gan_g),
        grad_output: grad,
        grad_scores_fake,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(dims: Dims5, seed: u64) -> Tensor5<f64> {
        let mut rng = Rng::from_seed(seed);
        Tensor5::from_fn(dims, |_| rng.range(-1.0, 1.0))
    }

    #[test]
    fn l1_zero_at_equality_and_shift() {
        let v = rand_tensor(Dims5::new(1, 3, 2, 4, 4), 1);
        let (loss, _) = l1_loss(&v, &v).unwrap();
        assert_eq!(loss, 0.0);
        let shifted = v.map(|x| x + 0.25);
        let (loss, grad) = l1_loss(&shifted, &v).unwrap();
        assert!((loss - 0.25).abs() < 1e-12);
        let n = v.len() as f64;
        assert!(grad.data().iter().all(|&g| (g - 1.0 / n).abs() < 1e-15));
    }

    #[test]
    fn l1_matches_loop_oracle() {
        let a = rand_tensor(Dims5::new(2, 3, 2, 3, 3), 2);
        let b = rand_tensor(Dims5::new(2, 3, 2, 3, 3), 3);
        let (loss, _) = l1_loss(&a, &b).unwrap();
        let mut acc = 0.0;
        for (x, y) in a.data().iter().zip(b.data()) {
            acc += (x - y).abs();
        }
        assert!((loss - acc / a.len() as f64).abs() <= 1e-12);
    }

    #[test]
    fn masked_l1_endpoints() {
        let d = Dims5::new(1, 3, 2, 4, 4);
        let o = rand_tensor(d, 4);
        let v = rand_tensor(d, 5);
        let md = Dims5::new(1, 1, 2, 4, 4);

        let (zero_loss, zero_grad) = masked_l1_loss(&o, &v, &Tensor5::zeros(md)).unwrap();
        assert_eq!(zero_loss, 0.0);
        assert!(zero_grad.data().iter().all(|&g| g == 0.0));

        let (full, _) = masked_l1_loss(&o, &v, &Tensor5::filled(md, 1.0)).unwrap();
        let (plain, _) = l1_loss(&o, &v).unwrap();
        assert!((full - plain).abs() < 1e-12);
    }

    #[test]
    fn masked_l1_half_mask_shift_two() {
        let d = Dims5::new(1, 3, 2, 4, 4);
        let v = rand_tensor(d, 6);
        let o = v.map(|x| x + 2.0);
        let mut m = Tensor5::zeros(Dims5::new(1, 1, 2, 4, 4));
        for t in 0..2 {
            for y in 0..4 {
                for x in 0..2 {
                    *m.at_mut(0, 0, t, y, x) = 1.0;
                }
            }
        }
        let (loss, _) = masked_l1_loss(&o, &v, &m).unwrap();
        assert!((loss - 1.0).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn identity_extractor_reproduces_frames() {
        let fe = FeatureExtractor::<f64>::identity(3);
        let v = rand_tensor(Dims5::new(1, 3, 2, 4, 4), 7);
        let feats = extract_features(&v, &fe).unwrap();
        assert_eq!(feats.len(), 2);
        for (t, frame_taps) in feats.iter().enumerate() {
            assert_eq!(frame_taps.len(), 1);
            for c in 0..3 {
                for y in 0..4 {
                    for x in 0..4 {
                        assert_eq!(frame_taps[0].at(0, c, 0, y, x), v.at(0, c, t, y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn extractor_is_deterministic() {
        let fe =
            FeatureExtractor::<f64>::from_config(&FeatureExtractorConfig::default(), 3).unwrap();
        let v = rand_tensor(Dims5::new(1, 3, 1, 16, 16), 8);
        let a = extract_features(&v, &fe).unwrap();
        let b = extract_features(&v, &fe).unwrap();
        assert_eq!(a[0][2], b[0][2]);
    }

    #[test]
    fn perceptual_identity_extractor_equals_frame_l1_sum() {
        let fe = FeatureExtractor::<f64>::identity(3);
        let d = Dims5::new(1, 3, 3, 4, 4);
        let o = rand_tensor(d, 9);
        let v = rand_tensor(d, 10);
        let (perc, _) = perceptual_loss(&o, &v, &fe).unwrap();
        let (l1, _) = l1_loss(&o, &v).unwrap();
        assert!(
            (perc - 3.0 * l1).abs() < 1e-12,
            "perc {perc}, 3*l1 {}",
            3.0 * l1
        );
    }

    #[test]
    fn perceptual_zero_at_equality() {
        let fe =
            FeatureExtractor::<f64>::from_config(&FeatureExtractorConfig::default(), 3).unwrap();
        let v = rand_tensor(Dims5::new(1, 3, 2, 16, 16), 11);
        let (perc, grad) = perceptual_loss(&v, &v, &fe).unwrap();
        assert_eq!(perc, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn perceptual_matches_composed_oracle() {
        let fe =
            FeatureExtractor::<f64>::from_config(&FeatureExtractorConfig::default(), 3).unwrap();
        let d = Dims5::new(1, 3, 2, 8, 8);
        let o = rand_tensor(d, 12);
        let v = rand_tensor(d, 13);
        let (perc, _) = perceptual_loss(&o, &v, &fe).unwrap();

        let fo = extract_features(&o, &fe).unwrap();
        let fv = extract_features(&v, &fe).unwrap();
        let mut expect = 0.0;
        for (frame_o, frame_v) in fo.iter().zip(&fv) {
            for (tap_o, tap_v) in frame_o.iter().zip(frame_v) {
                let n_p = tap_o.len() as f64;
                let acc: f64 = tap_o
                    .data()
                    .iter()
                    .zip(tap_v.data())
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                expect += acc / n_p;
            }
        }
        assert!((perc - expect).abs() < 1e-12);
    }

    #[test]
    fn gram_one_hot_channels_is_diagonal() {
        let mut f = Tensor5::<f64>::zeros(Dims5::new(1, 2, 1, 2, 2));
        *f.at_mut(0, 0, 0, 0, 0) = 2.0;
        *f.at_mut(0, 1, 0, 1, 1) = 3.0;
        let g = gram(&f);
        assert_eq!(g.at(0, 0), 4.0);
        assert_eq!(g.at(1, 1), 9.0);
        assert_eq!(g.at(0, 1), 0.0);
        assert_eq!(g.at(1, 0), 0.0);
    }

    #[test]
    fn gram_matches_triple_loop_oracle() {
        let f = rand_tensor(Dims5::new(1, 4, 1, 3, 5), 14);
        let g = gram(&f);
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = 0.0;
                for y in 0..3 {
                    for x in 0..5 {
                        acc += f.at(0, i, 0, y, x) * f.at(0, j, 0, y, x);
                    }
                }
                assert!((g.at(i, j) - acc).abs() < 1e-10, "({i},{j})");
            }
        }
    }

    #[test]
    fn gram_symmetric_psd() {
        let f = rand_tensor(Dims5::new(1, 3, 1, 4, 4), 15);
        let g = gram(&f);
        for i in 0..3 {
            for j in 0..3 {
                assert!((g.at(i, j) - g.at(j, i)).abs() < 1e-12);
            }
        }
        // v^T G v = ||F^T v||^2 >= 0 for a few random v
        let mut rng = Rng::from_seed(16);
        for _ in 0..10 {
            let v: Vec<f64> = (0..3).map(|_| rng.range(-1.0, 1.0)).collect();
            let mut quad = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    quad += v[i] * g.at(i, j) * v[j];
                }
            }
            assert!(quad >= -1e-10, "quad {quad}");
        }
    }

    #[test]
    fn style_zero_at_equality_and_scaling() {
        let fe = FeatureExtractor::<f64>::identity(2);
        let d = Dims5::new(1, 2, 1, 4, 4);
        let v = rand_tensor(d, 17);
        let (loss, _) = style_loss(&v, &v, &fe, StyleNorm::Printed).unwrap();
        assert_eq!(loss, 0.0);

        // With an identity extractor, scaling O scales its Gram by s^2:
        // style(s*V, V) proportional to (s^2 - 1) * gram(V) elementwise.
        let s = 1.5f64;
        let scaled = v.scale(s);
        let (loss, _) = style_loss(&scaled, &v, &fe, StyleNorm::Printed).unwrap();
        let g = gram(&extract_frame(&v, 0, 0));
        let sum_abs: f64 = g.data.iter().map(|x| x.abs()).sum();
        let c = 2.0f64;
        let n_p = (2 * 4 * 4) as f64;
        let expect = (s * s - 1.0) * sum_abs / (c * c * n_p);
        assert!((loss - expect).abs() < 1e-12, "loss {loss} expect {expect}");
    }

    #[test]
    fn style_matches_composed_oracle() {
        let fe =
            FeatureExtractor::<f64>::from_config(&FeatureExtractorConfig::default(), 3).unwrap();
        let d = Dims5::new(1, 3, 2, 8, 8);
        let o = rand_tensor(d, 18);
        let v = rand_tensor(d, 19);
        let (loss, _) = style_loss(&o, &v, &fe, StyleNorm::Printed).unwrap();

        let fo = extract_features(&o, &fe).unwrap();
        let fv = extract_features(&v, &fe).unwrap();
        let mut expect = 0.0;
        for (frame_o, frame_v) in fo.iter().zip(&fv) {
            for (tap_o, tap_v) in frame_o.iter().zip(frame_v) {
                let td = tap_o.dims();
                let (c, n_p) = (td.c as f64, tap_o.len() as f64);
                let g_o = gram(tap_o);
                let g_v = gram(tap_v);
                let acc: f64 = g_o
                    .data
                    .iter()
                    .zip(&g_v.data)
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                expect += acc / (c * c * n_p);
            }
        }
        assert!((loss - expect).abs() < 1e-12, "loss {loss} expect {expect}");
    }

    #[test]
    fn hinge_perfect_discriminator_zero_loss() {
        let real = Tensor5::<f64>::filled(Dims5::new(1, 1, 2, 2, 2), 1.0);
        let fake = Tensor5::<f64>::filled(Dims5::new(1, 1, 2, 2, 2), -1.0);
        let (loss, gr, gf) = gan_d_loss(&real, &fake, HingeForm::Standard);
        assert_eq!(loss, 0.0);
        assert!(gr.data().iter().all(|&g| g == 0.0));
        assert!(gf.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn hinge_at_zero_scores() {
        let zeros = Tensor5::<f64>::zeros(Dims5::new(1, 1, 1, 2, 2));
        let (d_loss, _, _) = gan_d_loss(&zeros, &zeros, HingeForm::Standard);
        assert_eq!(d_loss, 2.0);
        let (d_loss, _, _) = gan_d_loss(&zeros, &zeros, HingeForm::PaperLiteral);
        assert_eq!(d_loss, 2.0);
        let (g_loss, _) = gan_g_loss(&zeros);
        assert_eq!(g_loss, 0.0);
    }

    #[test]
    fn hinge_saturation_has_zero_grad() {
        let real = Tensor5::<f64>::filled(Dims5::new(1, 1, 1, 1, 4), 1.5);
        let fake = Tensor5::<f64>::filled(Dims5::new(1, 1, 1, 1, 4), -1.5);
        let (_, gr, gf) = gan_d_loss(&real, &fake, HingeForm::Standard);
        assert!(gr.data().iter().all(|&g| g == 0.0));
        assert!(gf.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn total_loss_zero_weights() {
        let fe = FeatureExtractor::<f64>::identity(3);
        let d = Dims5::new(1, 3, 1, 4, 4);
        let o = rand_tensor(d, 20);
        let v = rand_tensor(d, 21);
        let m = Tensor5::zeros(Dims5::new(1, 1, 1, 4, 4));
        let w = LossWeights {
            l1: 0.0,
            l1_mask: 0.0,
            perceptual: 0.0,
            style: 0.0,
            gan: 0.0,
        };
        let tl = total_loss(&o, &v, &m, &fe, &w, None, StyleNorm::Printed).unwrap();
        assert_eq!(tl.total, 0.0);
        assert!(tl.grad_output.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn total_loss_only_l1() {
        let fe = FeatureExtractor::<f64>::identity(3);
        let d = Dims5::new(1, 3, 1, 4, 4);
        let o = rand_tensor(d, 22);
        let v = rand_tensor(d, 23);
        let m = Tensor5::zeros(Dims5::new(1, 1, 1, 4, 4));
        let w = LossWeights {
            l1: 1.0,
            l1_mask: 0.0,
            perceptual: 0.0,
            style: 0.0,
            gan: 0.0,
        };
        let tl = total_loss(&o, &v, &m, &fe, &w, None, StyleNorm::Printed).unwrap();
        let (l1, g) = l1_loss(&o, &v).unwrap();
        assert_eq!(tl.total, l1);
        assert_eq!(tl.grad_output, g);
    }

    #[test]
    fn total_loss_affine_in_style_weight() {
        let fe =
            FeatureExtractor::<f64>::from_config(&FeatureExtractorConfig::default(), 3).unwrap();
        let d = Dims5::new(1, 3, 1, 8, 8);
        let o = rand_tensor(d, 24);
        let v = rand_tensor(d, 25);
        let m = Tensor5::zeros(Dims5::new(1, 1, 1, 8, 8));
        let base = LossWeights {
            style: 10.0,
            gan: 0.0,
            ..Default::default()
        };
        let doubled = LossWeights {
            style: 20.0,
            ..base
        };
        let t1 = total_loss(&o, &v, &m, &fe, &base, None, StyleNorm::Printed).unwrap();
        let t2 = total_loss(&o, &v, &m, &fe, &doubled, None, StyleNorm::Printed).unwrap();
        let style_contrib_1 = 10.0 * t1.style;
        let style_contrib_2 = 20.0 * t2.style;
        assert!((t2.total - t1.total - (style_contrib_2 - style_contrib_1)).abs() < 1e-12);
        assert!((style_contrib_2 - 2.0 * style_contrib_1).abs() < 1e-12);
    }

    #[test]
    fn extractor_loads_from_checkpoint_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fe.vpf");
        let fe = FeatureExtractor::<f64>::from_config(&FeatureExtractorConfig::default(), 3).unwrap();
        checkpoint::save_checkpoint(&path, &fe.to_records()).unwrap();

        let cfg = FeatureExtractorConfig {
            weights_path: Some(path.to_str().unwrap().to_string()),
            ..Default::default()
        };
        let loaded = FeatureExtractor::<f64>::from_config(&cfg, 3).unwrap();
        assert_eq!(loaded.num_taps(), fe.num_taps());
        let v = rand_tensor(Dims5::new(1, 3, 1, 16, 16), 30);
        let a = extract_features(&v, &fe).unwrap();
        let b = extract_features(&v, &loaded).unwrap();
        for (ta, tb) in a[0].iter().zip(&b[0]) {
            let max_err = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(max_err < 1e-6, "taps differ by {max_err}");
        }
    }

    #[test]
    fn weights_validation() {
        let w = LossWeights {
            l1: -1.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }
}
