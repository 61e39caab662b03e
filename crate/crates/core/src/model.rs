//! The inpainting generator (UNet-like stack of 3-D gated convolutions with
//! two spatial downsamplings, two dilated bottleneck layers, and skip
//! connections) and the temporal patch discriminator (six spectrally
//! normalized 3-D convolutions plus a linear patch-score head).

use crate::error::{Error, Result};
use crate::io::checkpoint::{self, ParamRecord};
use crate::nn::{
    GatedConv3d, GatedConvCache, GatedConvGrads, SnConv3d, SnConvCache, SnMode, SpectralNormState,
};
use crate::rng::Rng;
use crate::tensor::{
    upsample3d_backward, upsample3d_nearest, Activation, ConvGeometry, Dims5, Scalar, Tensor5,
};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub spectral_norm: bool,
    /// Normalize the gating filters as well as the feature filters.
    pub sn_on_gating: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_channels: 32,
            in_channels: 4,
            out_channels: 3,
            spectral_norm: true,
            sn_on_gating: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    /// Exactly six conv layers; kernel 3x5x5 and stride 1x2x2 are fixed.
    pub channels: Vec<usize>,
    pub spectral_norm: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            in_channels: 3,
            channels: vec![64, 128, 256, 256, 256, 256],
            spectral_norm: true,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != 6 {
            return Err(Error::Config(format!(
                "discriminator needs exactly 6 conv layers, got {}",
                self.channels.len()
            )));
        }
        if self.channels.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config(
                "discriminator channels must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn layer_geom() -> ConvGeometry {
        ConvGeometry::new((3, 5, 5))
            .with_stride((1, 2, 2))
            .with_padding((1, 2, 2))
    }
}

/// Receptive field extents per axis for a chain of conv layers, via
/// rf += (k - 1) * dilation * prod(previous strides).
pub fn receptive_field(geoms: &[ConvGeometry]) -> (usize, usize, usize) {
    let mut rf = (1usize, 1usize, 1usize);
    let mut jump = (1usize, 1usize, 1usize);
    for g in geoms {
        rf.0 += (g.kernel.0 - 1) * g.dilation.0 * jump.0;
        rf.1 += (g.kernel.1 - 1) * g.dilation.1 * jump.1;
        rf.2 += (g.kernel.2 - 1) * g.dilation.2 * jump.2;
        jump.0 *= g.stride.0;
        jump.1 *= g.stride.1;
        jump.2 *= g.stride.2;
    }
    rf
}

/// I = concat(V * (1 - M), M): RGB zeroed on holes plus the mask channel.
pub fn make_masked_input<T: Scalar>(video: &Tensor5<T>, mask: &Tensor5<T>) -> Result<Tensor5<T>> {
    check_mask_pair(video, mask, "make_masked_input")?;
    let keep = mask.map(|m| T::one() - m);
    let masked = mask_mul(video, &keep)?;
    masked.concat_channels(mask)
}

/// M * O + (1 - M) * V: generator output on holes, ground truth elsewhere.
pub fn composite<T: Scalar>(
    output: &Tensor5<T>,
    video: &Tensor5<T>,
    mask: &Tensor5<T>,
) -> Result<Tensor5<T>> {
    if output.dims() != video.dims() {
        return Err(Error::shape("composite", video.dims(), output.dims()));
    }
    check_mask_pair(video, mask, "composite")?;
    let d = video.dims();
    let mut out = video.clone();
    let vol = d.voxels();
    for n in 0..d.n {
        let m_frame = &mask.data()[n * vol..(n + 1) * vol];
        for c in 0..d.c {
            let base = (n * d.c + c) * vol;
            let dst = &mut out.data_mut()[base..base + vol];
            let src_o = &output.data()[base..base + vol];
            for ((dv, &ov), &mv) in dst.iter_mut().zip(src_o).zip(m_frame) {
                if mv != T::zero() {
                    *dv = ov;
                }
            }
        }
    }
    Ok(out)
}

fn check_mask_pair<T: Scalar>(
    video: &Tensor5<T>,
    mask: &Tensor5<T>,
    context: &'static str,
) -> Result<()> {
    let (vd, md) = (video.dims(), mask.dims());
    if md.c != 1 || md.n != vd.n || md.t != vd.t || md.h != vd.h || md.w != vd.w {
        return Err(Error::shape(
            context,
            format!("mask {}x1x{}x{}x{}", vd.n, vd.t, vd.h, vd.w),
            md,
        ));
    }
    for &v in mask.data() {
        let v = v.as_f64();
        if v != 0.0 && v != 1.0 {
            return Err(Error::NonBinaryMask(v));
        }
    }
    Ok(())
}

/// x * m with the single mask channel broadcast over x's channels.
pub fn mask_mul<T: Scalar>(x: &Tensor5<T>, mask: &Tensor5<T>) -> Result<Tensor5<T>> {
    let (xd, md) = (x.dims(), mask.dims());
    if md.c != 1 || md.n != xd.n || md.t != xd.t || md.h != xd.h || md.w != xd.w {
        return Err(Error::shape("mask_mul", xd, md));
    }
    let vol = xd.voxels();
    let mut out = x.clone();
    for n in 0..xd.n {
        let m_frame = &mask.data()[n * vol..(n + 1) * vol];
        for c in 0..xd.c {
            let base = (n * xd.c + c) * vol;
            for (v, &m) in out.data_mut()[base..base + vol].iter_mut().zip(m_frame) {
                *v *= m;
            }
        }
    }
    Ok(out)
}

const GEN_LAYER_NAMES: [&str; 9] = [
    "enc1", "enc2", "enc3", "enc4", "dil1", "dil2", "dec1", "dec2", "dec3",
];

/// Gated-conv UNet. Temporal stride stays 1 everywhere so the frame count is
/// preserved; height and width must be divisible by 4 (two stride-2 stages).
#[derive(Debug, Clone)]
pub struct Generator<T> {
    pub cfg: GeneratorConfig,
    pub layers: Vec<GatedConv3d<T>>,
    pub head: SnConv3d<T>,
}

pub struct GeneratorCache<T> {
    layer_caches: Vec<GatedConvCache<T>>,
    head_cache: SnConvCache<T>,
}

pub struct GeneratorGrads<T> {
    pub input: Tensor5<T>,
    pub layers: Vec<GatedConvGrads<T>>,
    pub head_w: Tensor5<T>,
    pub head_b: Vec<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(cfg: GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        let c = cfg.base_channels;
        let leaky = Activation::leaky_default();
        let k355 = ConvGeometry::new((3, 5, 5)).with_padding((1, 2, 2));
        let down = ConvGeometry::new((3, 4, 4))
            .with_stride((1, 2, 2))
            .with_padding((1, 1, 1));
        let k333 = ConvGeometry::new((3, 3, 3)).with_padding((1, 1, 1));
        let dil2 = ConvGeometry::new((3, 3, 3))
            .with_dilation((1, 2, 2))
            .with_padding((1, 2, 2));
        let dil4 = ConvGeometry::new((3, 3, 3))
            .with_dilation((1, 4, 4))
            .with_padding((1, 4, 4));

        let specs: [(usize, usize, ConvGeometry); 9] = [
            (cfg.in_channels, c, k355),
            (c, 2 * c, down),
            (2 * c, 2 * c, k333),
            (2 * c, 4 * c, down),
            (4 * c, 4 * c, dil2),
            (4 * c, 4 * c, dil4),
            (6 * c, 2 * c, k333), // after upsample + skip from enc3
            (2 * c, 2 * c, k333),
            (3 * c, c, k333), // after upsample + skip from enc1
        ];
        let layers = specs
            .iter()
            .map(|&(in_c, out_c, geom)| {
                GatedConv3d::new(
                    rng,
                    in_c,
                    out_c,
                    geom,
                    leaky,
                    cfg.spectral_norm,
                    cfg.sn_on_gating,
                )
            })
            .collect();
        let head = SnConv3d::new(
            rng,
            c,
            cfg.out_channels,
            k333,
            Some(Activation::Tanh),
            false,
        );
        Ok(Generator { cfg, layers, head })
    }

    fn check_input(&self, input: &Tensor5<T>) -> Result<()> {
        let d = input.dims();
        if d.c != self.cfg.in_channels {
            return Err(Error::shape(
                "generator input channels",
                self.cfg.in_channels,
                d.c,
            ));
        }
        if !d.h.is_multiple_of(4) || !d.w.is_multiple_of(4) || d.h == 0 || d.w == 0 {
            return Err(Error::shape(
                "generator input dims (h, w must be multiples of 4)",
                "h % 4 == 0 && w % 4 == 0",
                d,
            ));
        }
        Ok(())
    }

    pub fn forward(
        &mut self,
        input: &Tensor5<T>,
        mode: SnMode,
    ) -> Result<(Tensor5<T>, GeneratorCache<T>)> {
        self.check_input(input)?;
        let up = (1usize, 2usize, 2usize);
        let mut caches = Vec::with_capacity(9);

        let fwd = |idx: usize,
                   x: &Tensor5<T>,
                   layers: &mut Vec<GatedConv3d<T>>,
                   caches: &mut Vec<GatedConvCache<T>>|
         -> Result<Tensor5<T>> {
            let (y, cache) = layers[idx].forward(x, mode)?;
            caches.push(cache);
            Ok(y)
        };

        let a1 = fwd(0, input, &mut self.layers, &mut caches)?;
        let a2 = fwd(1, &a1, &mut self.layers, &mut caches)?;
        let a3 = fwd(2, &a2, &mut self.layers, &mut caches)?;
        let a4 = fwd(3, &a3, &mut self.layers, &mut caches)?;
        let a5 = fwd(4, &a4, &mut self.layers, &mut caches)?;
        let a6 = fwd(5, &a5, &mut self.layers, &mut caches)?;
        let c1 = upsample3d_nearest(&a6, up)?.concat_channels(&a3)?;
        let a7 = fwd(6, &c1, &mut self.layers, &mut caches)?;
        let a8 = fwd(7, &a7, &mut self.layers, &mut caches)?;
        let c2 = upsample3d_nearest(&a8, up)?.concat_channels(&a1)?;
        let a9 = fwd(8, &c2, &mut self.layers, &mut caches)?;
        let (out, head_cache) = self.head.forward(&a9, mode)?;
        debug_assert!(out.all_finite());
        Ok((
            out,
            GeneratorCache {
                layer_caches: caches,
                head_cache,
            },
        ))
    }

    pub fn backward(
        &self,
        grad_out: &Tensor5<T>,
        cache: &GeneratorCache<T>,
    ) -> Result<GeneratorGrads<T>> {
        let c = self.cfg.base_channels;
        let up = (1usize, 2usize, 2usize);
        let (g_a9, head_w, head_b) = self.head.backward(grad_out, &cache.head_cache)?;

        let g9 = self.layers[8].backward(&g_a9, &cache.layer_caches[8])?;
        let (g_u2, g_a1_skip) = g9.input.split_channels(2 * c)?;
        let g_a8 = upsample3d_backward(&g_u2, up)?;

        let g8 = self.layers[7].backward(&g_a8, &cache.layer_caches[7])?;
        let g7 = self.layers[6].backward(&g8.input, &cache.layer_caches[6])?;
        let (g_u1, g_a3_skip) = g7.input.split_channels(4 * c)?;
        let g_a6 = upsample3d_backward(&g_u1, up)?;

        let g6 = self.layers[5].backward(&g_a6, &cache.layer_caches[5])?;
        let g5 = self.layers[4].backward(&g6.input, &cache.layer_caches[4])?;
        let g4 = self.layers[3].backward(&g5.input, &cache.layer_caches[3])?;
        let mut g_a3 = g4.input.clone();
        g_a3.add_scaled(&g_a3_skip, T::one())?;
        let g3 = self.layers[2].backward(&g_a3, &cache.layer_caches[2])?;
        let g2 = self.layers[1].backward(&g3.input, &cache.layer_caches[1])?;
        let mut g_a1 = g2.input.clone();
        g_a1.add_scaled(&g_a1_skip, T::one())?;
        let g1 = self.layers[0].backward(&g_a1, &cache.layer_caches[0])?;

        let input = g1.input.clone();
        let layers = vec![g1, g2, g3, g4, g5, g6, g7, g8, g9];
        Ok(GeneratorGrads {
            input,
            layers,
            head_w,
            head_b,
        })
    }

    /// First-channel gate maps per layer, for inspection dumps.
    pub fn gate_maps(&self, cache: &GeneratorCache<T>) -> Result<Vec<(String, Tensor5<T>)>> {
        cache
            .layer_caches
            .iter()
            .enumerate()
            .map(|(i, c)| Ok((GEN_LAYER_NAMES[i].to_string(), c.gate_map()?)))
            .collect()
    }
}

/// Temporal patch discriminator: six 3x5x5 stride-1x2x2 conv layers and a
/// 1x1x1 linear head producing one raw score per spatio-temporal patch.
#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    pub cfg: DiscriminatorConfig,
    pub layers: Vec<SnConv3d<T>>,
    pub head: SnConv3d<T>,
}

pub struct DiscriminatorCache<T> {
    layer_caches: Vec<SnConvCache<T>>,
    head_cache: SnConvCache<T>,
}

pub struct DiscriminatorGrads<T> {
    pub input: Tensor5<T>,
    /// (weight, bias) per conv layer, head last.
    pub layers: Vec<(Tensor5<T>, Vec<T>)>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(cfg: DiscriminatorConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let geom = DiscriminatorConfig::layer_geom();
        let leaky = Activation::leaky_default();
        let mut layers = Vec::with_capacity(6);
        let mut in_c = cfg.in_channels;
        for &out_c in &cfg.channels {
            layers.push(SnConv3d::new(
                rng,
                in_c,
                out_c,
                geom,
                Some(leaky),
                cfg.spectral_norm,
            ));
            in_c = out_c;
        }
        let head = SnConv3d::new(
            rng,
            in_c,
            1,
            ConvGeometry::new((1, 1, 1)),
            None,
            cfg.spectral_norm,
        );
        Ok(Discriminator { cfg, layers, head })
    }

    pub fn forward(
        &mut self,
        video: &Tensor5<T>,
        mode: SnMode,
    ) -> Result<(Tensor5<T>, DiscriminatorCache<T>)> {
        if video.dims().c != self.cfg.in_channels {
            return Err(Error::shape(
                "discriminator input channels",
                self.cfg.in_channels,
                video.dims().c,
            ));
        }
        let mut caches = Vec::with_capacity(6);
        let mut x = video.clone();
        for layer in &mut self.layers {
            let (y, cache) = layer.forward(&x, mode)?;
            caches.push(cache);
            x = y;
        }
        let (scores, head_cache) = self.head.forward(&x, mode)?;
        Ok((
            scores,
            DiscriminatorCache {
                layer_caches: caches,
                head_cache,
            },
        ))
    }

    pub fn backward(
        &self,
        grad_scores: &Tensor5<T>,
        cache: &DiscriminatorCache<T>,
    ) -> Result<DiscriminatorGrads<T>> {
        let (mut g, head_w, head_b) = self.head.backward(grad_scores, &cache.head_cache)?;
        let mut grads_rev: Vec<(Tensor5<T>, Vec<T>)> = vec![(head_w, head_b)];
        for (layer, lc) in self.layers.iter().zip(&cache.layer_caches).rev() {
            let (gi, gw, gb) = layer.backward(&g, lc)?;
            grads_rev.push((gw, gb));
            g = gi;
        }
        grads_rev.reverse();
        Ok(DiscriminatorGrads {
            input: g,
            layers: grads_rev,
        })
    }

    /// Gradient with respect to the input video only (discriminator
    /// parameters untouched); this is the path the generator step uses.
    pub fn backward_input(
        &self,
        grad_scores: &Tensor5<T>,
        cache: &DiscriminatorCache<T>,
    ) -> Result<Tensor5<T>> {
        let mut g = self.head.backward_input(grad_scores, &cache.head_cache)?;
        for (layer, lc) in self.layers.iter().zip(&cache.layer_caches).rev() {
            g = layer.backward_input(&g, lc)?;
        }
        Ok(g)
    }

    pub fn geoms(&self) -> Vec<ConvGeometry> {
        let mut gs = vec![DiscriminatorConfig::layer_geom(); 6];
        gs.push(ConvGeometry::new((1, 1, 1)));
        gs
    }
}

impl<T: Scalar> Generator<T> {
    /// Trainable parameters as named flat slices, in a fixed order that
    /// matches [`Generator::grad_entries`].
    pub fn param_entries_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out = Vec::with_capacity(self.layers.len() * 4 + 2);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("g.{}", GEN_LAYER_NAMES[i]);
            let GatedConv3d {
                w_f, b_f, w_g, b_g, ..
            } = layer;
            out.push((format!("{p}.w_f"), w_f.data_mut()));
            out.push((format!("{p}.b_f"), b_f.as_mut_slice()));
            out.push((format!("{p}.w_g"), w_g.data_mut()));
            out.push((format!("{p}.b_g"), b_g.as_mut_slice()));
        }
        out.push(("g.head.w".to_string(), self.head.weight.data_mut()));
        out.push(("g.head.b".to_string(), self.head.bias.as_mut_slice()));
        out
    }

    pub fn grad_entries<'a>(&self, grads: &'a GeneratorGrads<T>) -> Vec<(String, &'a [T])> {
        let mut out = Vec::with_capacity(grads.layers.len() * 4 + 2);
        for (i, g) in grads.layers.iter().enumerate() {
            let p = format!("g.{}", GEN_LAYER_NAMES[i]);
            out.push((format!("{p}.w_f"), g.w_f.data()));
            out.push((format!("{p}.b_f"), g.b_f.as_slice()));
            out.push((format!("{p}.w_g"), g.w_g.data()));
            out.push((format!("{p}.b_g"), g.b_g.as_slice()));
        }
        out.push(("g.head.w".to_string(), grads.head_w.data()));
        out.push(("g.head.b".to_string(), grads.head_b.as_slice()));
        out
    }
}

impl<T: Scalar> Discriminator<T> {
    pub fn param_entries_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out = Vec::with_capacity(self.layers.len() * 2 + 2);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let SnConv3d { weight, bias, .. } = layer;
            out.push((format!("d.conv{}.w", i + 1), weight.data_mut()));
            out.push((format!("d.conv{}.b", i + 1), bias.as_mut_slice()));
        }
        out.push(("d.head.w".to_string(), self.head.weight.data_mut()));
        out.push(("d.head.b".to_string(), self.head.bias.as_mut_slice()));
        out
    }

    pub fn grad_entries<'a>(&self, grads: &'a DiscriminatorGrads<T>) -> Vec<(String, &'a [T])> {
        let mut out = Vec::with_capacity(grads.layers.len() * 2);
        for (i, (w, b)) in grads.layers.iter().enumerate() {
            let name = if i == grads.layers.len() - 1 {
                "d.head".to_string()
            } else {
                format!("d.conv{}", i + 1)
            };
            out.push((format!("{name}.w"), w.data()));
            out.push((format!("{name}.b"), b.as_slice()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

/// Generator, discriminator, spectral-norm states, and the step counter.
/// Checkpoints round-trip bit-exactly for single-precision models.
pub struct ModelState<T> {
    pub config: ModelConfig,
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub step: u64,
}

fn tensor_record<T: Scalar>(name: String, t: &Tensor5<T>) -> ParamRecord {
    let d = t.dims();
    ParamRecord::new(
        name,
        vec![d.n as u32, d.c as u32, d.t as u32, d.h as u32, d.w as u32],
        t.data().iter().map(|v| v.as_f64() as f32).collect(),
    )
}

fn vec_record<T: Scalar>(name: String, v: &[T]) -> ParamRecord {
    ParamRecord::new(
        name,
        vec![v.len() as u32],
        v.iter().map(|x| x.as_f64() as f32).collect(),
    )
}

fn sn_records<T: Scalar>(
    name: &str,
    sn: &Option<SpectralNormState<T>>,
    out: &mut Vec<ParamRecord>,
) {
    if let Some(s) = sn {
        out.push(vec_record(format!("{name}.u"), &s.u));
        out.push(vec_record(format!("{name}.sigma"), &[s.sigma]));
    }
}

impl<T: Scalar> ModelState<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut g_rng = Rng::derive(seed, 0x0067_656e);
        let mut d_rng = Rng::derive(seed, 0x6469_7363);
        Ok(ModelState {
            generator: Generator::new(config.generator.clone(), &mut g_rng)?,
            discriminator: Discriminator::new(config.discriminator.clone(), &mut d_rng)?,
            config,
            step: 0,
        })
    }

    pub fn assert_params_finite(&self) -> Result<()> {
        for layer in &self.generator.layers {
            if !layer.w_f.all_finite() || !layer.w_g.all_finite() {
                return Err(Error::Numeric("non-finite generator weight".into()));
            }
        }
        for layer in &self.discriminator.layers {
            if !layer.weight.all_finite() {
                return Err(Error::Numeric("non-finite discriminator weight".into()));
            }
        }
        if !self.generator.head.weight.all_finite() || !self.discriminator.head.weight.all_finite()
        {
            return Err(Error::Numeric("non-finite head weight".into()));
        }
        Ok(())
    }

    pub fn to_records(&self) -> Result<Vec<ParamRecord>> {
        let config_json = serde_json::to_string(&self.config)
            .map_err(|e| Error::Config(format!("serialize model config: {e}")))?;
        let mut recs = vec![
            checkpoint::string_record("meta.config_json", &config_json),
            vec_record("meta.step".to_string(), &[T::of_f64(self.step as f64)]),
        ];
        for (i, layer) in self.generator.layers.iter().enumerate() {
            let p = format!("g.{}", GEN_LAYER_NAMES[i]);
            recs.push(tensor_record(format!("{p}.w_f"), &layer.w_f));
            recs.push(vec_record(format!("{p}.b_f"), &layer.b_f));
            recs.push(tensor_record(format!("{p}.w_g"), &layer.w_g));
            recs.push(vec_record(format!("{p}.b_g"), &layer.b_g));
            sn_records(&format!("{p}.sn_f"), &layer.sn_f, &mut recs);
            sn_records(&format!("{p}.sn_g"), &layer.sn_g, &mut recs);
        }
        recs.push(tensor_record(
            "g.head.w".to_string(),
            &self.generator.head.weight,
        ));
        recs.push(vec_record(
            "g.head.b".to_string(),
            &self.generator.head.bias,
        ));
        sn_records("g.head.sn", &self.generator.head.sn, &mut recs);
        for (i, layer) in self.discriminator.layers.iter().enumerate() {
            let p = format!("d.conv{}", i + 1);
            recs.push(tensor_record(format!("{p}.w"), &layer.weight));
            recs.push(vec_record(format!("{p}.b"), &layer.bias));
            sn_records(&format!("{p}.sn"), &layer.sn, &mut recs);
        }
        recs.push(tensor_record(
            "d.head.w".to_string(),
            &self.discriminator.head.weight,
        ));
        recs.push(vec_record(
            "d.head.b".to_string(),
            &self.discriminator.head.bias,
        ));
        sn_records("d.head.sn", &self.discriminator.head.sn, &mut recs);
        Ok(recs)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save_checkpoint(path, &self.to_records()?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let records = checkpoint::load_checkpoint(path)?;
        let by_name: std::collections::HashMap<&str, &ParamRecord> =
            records.iter().map(|r| (r.name.as_str(), r)).collect();
        let config_rec = by_name
            .get("meta.config_json")
            .ok_or_else(|| Error::format(path.display(), "missing meta.config_json record"))?;
        let config: ModelConfig = serde_json::from_str(&checkpoint::record_to_string(config_rec)?)
            .map_err(|e| Error::format(path.display(), format!("bad model config: {e}")))?;
        let mut model = ModelState::new(config, 0)?;
        let step_rec = by_name
            .get("meta.step")
            .ok_or_else(|| Error::format(path.display(), "missing meta.step record"))?;
        model.step = step_rec.data.first().copied().unwrap_or(0.0) as u64;

        let mut consumed = 2usize;
        {
            let mut fill = |name: String, dst: &mut [T]| -> Result<()> {
                let rec = by_name.get(name.as_str()).ok_or_else(|| {
                    Error::format(path.display(), format!("missing record '{name}'"))
                })?;
                if rec.data.len() != dst.len() {
                    return Err(Error::shape("checkpoint record", dst.len(), rec.data.len()));
                }
                for (d, &s) in dst.iter_mut().zip(&rec.data) {
                    *d = T::of_f64(s as f64);
                }
                consumed += 1;
                Ok(())
            };
            for (name, param) in model.generator.param_entries_mut() {
                fill(name, param)?;
            }
            for (name, param) in model.discriminator.param_entries_mut() {
                fill(name, param)?;
            }
            let mut fill_sn =
                |prefix: String, sn: &mut Option<SpectralNormState<T>>| -> Result<()> {
                    if let Some(s) = sn.as_mut() {
                        fill(format!("{prefix}.u"), &mut s.u)?;
                        let mut sigma = [s.sigma];
                        fill(format!("{prefix}.sigma"), &mut sigma)?;
                        s.sigma = sigma[0];
                    }
                    Ok(())
                };
            for (i, layer) in model.generator.layers.iter_mut().enumerate() {
                let p = format!("g.{}", GEN_LAYER_NAMES[i]);
                fill_sn(format!("{p}.sn_f"), &mut layer.sn_f)?;
                fill_sn(format!("{p}.sn_g"), &mut layer.sn_g)?;
            }
            fill_sn("g.head.sn".to_string(), &mut model.generator.head.sn)?;
            for (i, layer) in model.discriminator.layers.iter_mut().enumerate() {
                fill_sn(format!("d.conv{}.sn", i + 1), &mut layer.sn)?;
            }
            fill_sn("d.head.sn".to_string(), &mut model.discriminator.head.sn)?;
        }
        if consumed != records.len() {
            return Err(Error::format(
                path.display(),
                format!("{} unrecognized records", records.len() - consumed),
            ));
        }
        Ok(model)
    }
}

/// Empirically measure the receptive field of one interior discriminator
/// score: back-propagate a one-hot score gradient and report the bounding
/// box of nonzero input gradients over (t, h, w).
pub fn gradient_footprint<T: Scalar>(
    disc: &mut Discriminator<T>,
    t: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<(usize, usize, usize)> {
    let mut rng = Rng::from_seed(seed);
    let input = Tensor5::from_fn(Dims5::new(1, disc.cfg.in_channels, t, h, w), |_| {
        T::of_f64(rng.range(-1.0, 1.0))
    });
    let (scores, cache) = disc.forward(&input, SnMode::Frozen)?;
    let sd = scores.dims();
    let mut one_hot = Tensor5::zeros(sd);
    *one_hot.at_mut(0, 0, sd.t / 2, sd.h / 2, sd.w / 2) = T::one();
    let grad = disc.backward_input(&one_hot, &cache)?;

    let gd = grad.dims();
    let (mut t_lo, mut t_hi) = (gd.t, 0usize);
    let (mut h_lo, mut h_hi) = (gd.h, 0usize);
    let (mut w_lo, mut w_hi) = (gd.w, 0usize);
    for n in 0..1 {
        for c in 0..gd.c {
            for tt in 0..gd.t {
                for yy in 0..gd.h {
                    for xx in 0..gd.w {
                        if grad.at(n, c, tt, yy, xx) != T::zero() {
                            t_lo = t_lo.min(tt);
                            t_hi = t_hi.max(tt);
                            h_lo = h_lo.min(yy);
                            h_hi = h_hi.max(yy);
                            w_lo = w_lo.min(xx);
                            w_hi = w_hi.max(xx);
                        }
                    }
                }
            }
        }
    }
    if t_hi < t_lo {
        return Err(Error::Numeric("gradient footprint is empty".into()));
    }
    Ok((t_hi - t_lo + 1, h_hi - h_lo + 1, w_hi - w_lo + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(dims: Dims5, seed: u64) -> Tensor5<f64> {
        let mut rng = Rng::from_seed(seed);
        Tensor5::from_fn(dims, |_| rng.range(-1.0, 1.0))
    }

    fn binary_mask(dims: Dims5, seed: u64) -> Tensor5<f64> {
        let mut rng = Rng::from_seed(seed);
        Tensor5::from_fn(dims, |_| if rng.chance(0.5) { 1.0 } else { 0.0 })
    }

    fn desk_generator(c: usize, seed: u64) -> Generator<f64> {
        let mut rng = Rng::from_seed(seed);
        Generator::new(
            GeneratorConfig {
                base_channels: c,
                ..Default::default()
            },
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn masked_input_zero_mask() {
        let v = rand_tensor(Dims5::new(1, 3, 2, 4, 4), 1);
        let m = Tensor5::zeros(Dims5::new(1, 1, 2, 4, 4));
        let i = make_masked_input(&v, &m).unwrap();
        assert_eq!(i.dims().c, 4);
        let (rgb, mask_ch) = i.split_channels(3).unwrap();
        assert_eq!(rgb, v);
        assert!(mask_ch.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn masked_input_full_mask() {
        let v = rand_tensor(Dims5::new(1, 3, 2, 4, 4), 2);
        let m = Tensor5::filled(Dims5::new(1, 1, 2, 4, 4), 1.0);
        let i = make_masked_input(&v, &m).unwrap();
        let (rgb, mask_ch) = i.split_channels(3).unwrap();
        assert!(rgb.data().iter().all(|&x| x == 0.0));
        assert!(mask_ch.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn masked_input_checkerboard() {
        let d = Dims5::new(1, 3, 1, 4, 4);
        let v = rand_tensor(d, 3);
        let mut m = Tensor5::zeros(Dims5::new(1, 1, 1, 4, 4));
        for y in 0..4 {
            for x in 0..4 {
                if (x + y) % 2 == 0 {
                    *m.at_mut(0, 0, 0, y, x) = 1.0;
                }
            }
        }
        let i = make_masked_input(&v, &m).unwrap();
        let (rgb, _) = i.split_channels(3).unwrap();
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    let expect = if (x + y) % 2 == 0 {
                        0.0
                    } else {
                        v.at(0, c, 0, y, x)
                    };
                    assert_eq!(rgb.at(0, c, 0, y, x), expect);
                }
            }
        }
    }

    #[test]
    fn composite_endpoints_and_idempotence() {
        let d = Dims5::new(1, 3, 2, 4, 4);
        let v = rand_tensor(d, 4);
        let o = rand_tensor(d, 5);
        let md = Dims5::new(1, 1, 2, 4, 4);

        let zero = Tensor5::zeros(md);
        assert_eq!(composite(&o, &v, &zero).unwrap(), v);
        let one = Tensor5::filled(md, 1.0);
        assert_eq!(composite(&o, &v, &one).unwrap(), o);

        let m = binary_mask(md, 6);
        let c1 = composite(&o, &v, &m).unwrap();
        let c2 = composite(&c1, &v, &m).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn composite_preserves_unmasked_bits() {
        let d = Dims5::new(1, 3, 2, 4, 4);
        let v = rand_tensor(d, 7);
        let o = rand_tensor(d, 8);
        let m = binary_mask(Dims5::new(1, 1, 2, 4, 4), 9);
        let comp = composite(&o, &v, &m).unwrap();
        for c in 0..3 {
            for t in 0..2 {
                for y in 0..4 {
                    for x in 0..4 {
                        if m.at(0, 0, t, y, x) == 0.0 {
                            assert_eq!(comp.at(0, c, t, y, x), v.at(0, c, t, y, x));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn composite_rejects_non_binary_mask() {
        let d = Dims5::new(1, 3, 1, 2, 2);
        let v = rand_tensor(d, 10);
        let m = Tensor5::filled(Dims5::new(1, 1, 1, 2, 2), 0.5);
        assert!(composite(&v, &v, &m).is_err());
    }

    #[test]
    fn generator_shape_contract() {
        let mut g = desk_generator(4, 11);
        let input = rand_tensor(Dims5::new(1, 4, 3, 8, 12), 12);
        let (out, _) = g.forward(&input, SnMode::Frozen).unwrap();
        assert_eq!(out.dims(), Dims5::new(1, 3, 3, 8, 12));
    }

    #[test]
    fn generator_rejects_indivisible_dims() {
        let mut g = desk_generator(4, 13);
        let input = rand_tensor(Dims5::new(1, 4, 2, 6, 8), 14);
        assert!(g.forward(&input, SnMode::Frozen).is_err());
    }

    #[test]
    fn zero_generator_outputs_zero() {
        let mut g = desk_generator(4, 15);
        for layer in &mut g.layers {
            layer.w_f = Tensor5::zeros(layer.w_f.dims());
            layer.w_g = Tensor5::zeros(layer.w_g.dims());
            layer.b_f = vec![0.0; layer.b_f.len()];
            layer.b_g = vec![0.0; layer.b_g.len()];
        }
        g.head.weight = Tensor5::zeros(g.head.weight.dims());
        g.head.bias = vec![0.0; 3];
        let input = rand_tensor(Dims5::new(1, 4, 2, 4, 4), 16);
        let (out, _) = g.forward(&input, SnMode::Frozen).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generator_output_range_is_open_unit() {
        let mut g = desk_generator(4, 17);
        let input = rand_tensor(Dims5::new(1, 4, 2, 8, 8), 18);
        let (out, _) = g.forward(&input, SnMode::Update).unwrap();
        assert!(out.data().iter().all(|&v| v > -1.0 && v < 1.0));
        assert!(out.all_finite());
    }

    #[test]
    fn discriminator_halves_spatial_dims_six_times() {
        let mut rng = Rng::from_seed(19);
        let cfg = DiscriminatorConfig {
            channels: vec![4, 4, 4, 4, 4, 4],
            ..Default::default()
        };
        let mut d = Discriminator::<f64>::new(cfg, &mut rng).unwrap();
        let input = rand_tensor(Dims5::new(1, 3, 5, 64, 64), 20);
        let (scores, _) = d.forward(&input, SnMode::Frozen).unwrap();
        assert_eq!(scores.dims(), Dims5::new(1, 1, 5, 1, 1));
    }

    #[test]
    fn zero_discriminator_scores_zero() {
        let mut rng = Rng::from_seed(21);
        let cfg = DiscriminatorConfig {
            channels: vec![2, 2, 2, 2, 2, 2],
            spectral_norm: false,
            ..Default::default()
        };
        let mut d = Discriminator::<f64>::new(cfg, &mut rng).unwrap();
        for layer in &mut d.layers {
            layer.weight = Tensor5::zeros(layer.weight.dims());
        }
        d.head.weight = Tensor5::zeros(d.head.weight.dims());
        let input = rand_tensor(Dims5::new(1, 3, 3, 32, 32), 22);
        let (scores, _) = d.forward(&input, SnMode::Frozen).unwrap();
        assert!(scores.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_permutation_permutes_scores() {
        let mut rng = Rng::from_seed(23);
        let cfg = DiscriminatorConfig {
            channels: vec![2, 2, 2, 2, 2, 2],
            ..Default::default()
        };
        let mut d = Discriminator::<f64>::new(cfg, &mut rng).unwrap();
        let a = rand_tensor(Dims5::new(1, 3, 3, 32, 32), 24);
        let b = rand_tensor(Dims5::new(1, 3, 3, 32, 32), 25);

        let mut ab_data = a.data().to_vec();
        ab_data.extend_from_slice(b.data());
        let ab = Tensor5::from_vec(Dims5::new(2, 3, 3, 32, 32), ab_data).unwrap();
        let mut ba_data = b.data().to_vec();
        ba_data.extend_from_slice(a.data());
        let ba = Tensor5::from_vec(Dims5::new(2, 3, 3, 32, 32), ba_data).unwrap();

        let (s_ab, _) = d.forward(&ab, SnMode::Frozen).unwrap();
        let (s_ba, _) = d.forward(&ba, SnMode::Frozen).unwrap();
        let vol = s_ab.dims().voxels();
        assert_eq!(&s_ab.data()[..vol], &s_ba.data()[vol..]);
        assert_eq!(&s_ab.data()[vol..], &s_ba.data()[..vol]);
    }

    #[test]
    fn receptive_field_single_layer() {
        let rf = receptive_field(&[ConvGeometry::new((3, 3, 3))]);
        assert_eq!(rf, (3, 3, 3));
    }

    #[test]
    fn receptive_field_two_layer_stride() {
        let geoms = [
            ConvGeometry::new((3, 3, 3)).with_stride((2, 2, 2)),
            ConvGeometry::new((3, 3, 3)),
        ];
        assert_eq!(receptive_field(&geoms), (7, 7, 7));
    }

    #[test]
    fn receptive_field_patch_discriminator() {
        let geoms = vec![DiscriminatorConfig::layer_geom(); 6];
        assert_eq!(receptive_field(&geoms), (13, 253, 253));
    }

    #[test]
    fn footprint_matches_analytic_rf() {
        let mut rng = Rng::from_seed(26);
        let cfg = DiscriminatorConfig {
            channels: vec![2, 2, 2, 2, 2, 2],
            spectral_norm: false,
            ..Default::default()
        };
        let mut d = Discriminator::<f64>::new(cfg, &mut rng).unwrap();
        let (t, h, w) = gradient_footprint(&mut d, 16, 288, 288, 27).unwrap();
        assert_eq!((t, h, w), (13, 253, 253));
    }
}
