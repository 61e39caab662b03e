//! Central finite-difference verification of every analytic gradient.
//!
//! Each target packages an objective together with the analytic gradients of
//! its parameter groups. The differencing side always evaluates the
//! objective in double precision (forward passes only, at the same parameter
//! point), so it stays a trustworthy oracle even when the gradients under
//! test come from the single-precision path. Spectral normalization runs
//! once to populate u and sigma and is then held frozen, matching the
//! backward pass's constant-sigma treatment.

use crate::error::{Error, Result};
use crate::loss::{
    gan_d_loss, gan_g_loss, l1_loss, masked_l1_loss, perceptual_loss, style_loss, FeatureExtractor,
    FeatureExtractorConfig, HingeForm, StyleNorm,
};
use crate::model::{make_masked_input, GeneratorConfig, ModelConfig, ModelState};
use crate::nn::{GatedConv3d, SnConv3d, SnMode, SpectralNormState};
use crate::rng::Rng;
use crate::tensor::{
    activation, activation_backward, conv3d_backward, conv3d_forward, upsample3d_backward,
    upsample3d_nearest, Activation, ConvGeometry, Dims5, Dtype, Scalar, Tensor5,
};

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub target: String,
    pub group: String,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= self.threshold
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.passed())
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub const FD_EPS: f64 = 1e-5;

fn thresholds<T: Scalar>() -> (f64, f64) {
    // (layers/losses, generator end-to-end)
    match T::DTYPE {
        Dtype::Double => (1e-6, 1e-5),
        Dtype::Single => (1e-2, 1e-2),
    }
}

struct FdCase<T> {
    target: String,
    groups: Vec<(String, Vec<T>)>,
    analytic: Vec<Vec<T>>,
    /// Double-precision objective at the (possibly perturbed) group values.
    #[allow(clippy::type_complexity)]
    eval: Box<dyn Fn(&[Vec<f64>]) -> Result<f64>>,
    threshold: f64,
    samples: usize,
    /// Denominator floor for the relative error: entries below this
    /// magnitude are compared with an absolute tolerance of
    /// threshold * floor instead.
    floor: f64,
}

/// Entries checked per group; groups at most this size are checked fully.
const SAMPLES_PER_GROUP: usize = 48;

fn run_case<T: Scalar>(case: &FdCase<T>, eps: f64, rng: &mut Rng) -> Result<Vec<GradCheckEntry>> {
    let mut values: Vec<Vec<f64>> = case
        .groups
        .iter()
        .map(|(_, v)| v.iter().map(|x| x.as_f64()).collect())
        .collect();
    let mut entries = Vec::with_capacity(case.groups.len());
    for gi in 0..case.groups.len() {
        let len = values[gi].len();
        let indices: Vec<usize> = if len <= case.samples {
            (0..len).collect()
        } else {
            (0..case.samples)
                .map(|_| rng.range_usize(0, len - 1))
                .collect()
        };
        let mut max_rel = 0.0f64;
        let mut skipped = 0usize;
        for &i in &indices {
            let orig = values[gi][i];
            let mut fd_at = |delta: f64| -> Result<f64> {
                values[gi][i] = orig + delta;
                let v = (case.eval)(&values);
                values[gi][i] = orig;
                v
            };
            let an = case.analytic[gi][i].as_f64();
            // The objectives contain |.| and relu kinks; a probe whose
            // difference window straddles one produces an unusable quotient.
            // Shrinking the window moves the kink outside it, so try a small
            // ladder of widths and accept the first agreeing level. A wrong
            // analytic gradient is not rescued by this: every window then
            // agrees with the others while disagreeing with the analytic
            // value, which is recorded as a failure below.
            let mut last_fd = f64::NAN;
            let mut last_rel = f64::INFINITY;
            let mut passed = false;
            let smallest = eps / 8.0;
            for h in [eps, eps / 2.0, smallest] {
                last_fd = (fd_at(h)? - fd_at(-h)?) / (2.0 * h);
                last_rel = (an - last_fd).abs() / an.abs().max(last_fd.abs()).max(case.floor);
                if last_rel <= case.threshold {
                    passed = true;
                    break;
                }
            }
            if passed {
                max_rel = max_rel.max(last_rel);
            } else {
                // A kink at the base point itself defeats any central window.
                // There the one-sided quotients disagree by the slope jump;
                // a wrong analytic gradient instead leaves them agreeing
                // with each other (and with fd), which is kept as a failure.
                let f0 = fd_at(0.0)?;
                let fwd = (fd_at(smallest)? - f0) / smallest;
                let bwd = (f0 - fd_at(-smallest)?) / smallest;
                if (fwd - bwd).abs() > 0.5 * (an - last_fd).abs() {
                    skipped += 1;
                } else {
                    max_rel = max_rel.max(last_rel);
                }
            }
        }
        if skipped > indices.len() / 2 {
            max_rel = f64::INFINITY; // too many kink hits to certify
        }
        entries.push(GradCheckEntry {
            target: case.target.clone(),
            group: case.groups[gi].0.clone(),
            max_rel_err: max_rel,
            threshold: case.threshold,
        });
    }
    Ok(entries)
}

fn rand_tensor<T: Scalar>(dims: Dims5, rng: &mut Rng) -> Tensor5<T> {
    Tensor5::from_fn(dims, |_| T::of_f64(rng.range(-1.0, 1.0)))
}

fn rand_mask<T: Scalar>(dims: Dims5, rng: &mut Rng) -> Tensor5<T> {
    Tensor5::from_fn(dims, |_| if rng.chance(0.5) { T::one() } else { T::zero() })
}

/// <probe, x> with the probe fixed; turns tensor-valued ops into scalars.
fn probe_dot(probe: &Tensor5<f64>, x: &Tensor5<f64>) -> f64 {
    probe
        .data()
        .iter()
        .zip(x.data())
        .map(|(&p, &v)| p * v)
        .sum()
}

fn conv3d_cases<T: Scalar>(threshold: f64, rng: &mut Rng) -> Result<Vec<FdCase<T>>> {
    let geoms = [
        (
            "conv3d",
            ConvGeometry::new((3, 3, 3)).with_padding((1, 1, 1)),
        ),
        (
            "conv3d_strided_dilated",
            ConvGeometry::new((2, 3, 3))
                .with_stride((1, 2, 2))
                .with_padding((0, 1, 2))
                .with_dilation((1, 1, 2)),
        ),
    ];
    let mut cases = Vec::new();
    for (name, geom) in geoms {
        let input = rand_tensor::<T>(Dims5::new(1, 2, 3, 6, 6), rng);
        let weight = rand_tensor::<T>(
            Dims5::new(3, 2, geom.kernel.0, geom.kernel.1, geom.kernel.2),
            rng,
        );
        let bias: Vec<T> = (0..3).map(|_| T::of_f64(rng.range(-1.0, 1.0))).collect();
        let out = conv3d_forward(&input, &weight, &bias, &geom)?;
        let probe = rand_tensor::<T>(out.dims(), rng);
        let (gi, gw, gb) = conv3d_backward(&probe, &input, &weight, &geom)?;

        let (in_dims, w_dims) = (input.dims(), weight.dims());
        let probe64 = probe.cast::<f64>();
        cases.push(FdCase {
            target: name.to_string(),
            groups: vec![
                ("input".into(), input.data().to_vec()),
                ("weight".into(), weight.data().to_vec()),
                ("bias".into(), bias.clone()),
            ],
            analytic: vec![gi.data().to_vec(), gw.data().to_vec(), gb],
            eval: Box::new(move |vals| {
                let x = Tensor5::from_vec(in_dims, vals[0].clone())?;
                let w = Tensor5::from_vec(w_dims, vals[1].clone())?;
                let out = conv3d_forward(&x, &w, &vals[2], &geom)?;
                Ok(probe_dot(&probe64, &out))
            }),
            threshold,
            samples: SAMPLES_PER_GROUP,
            floor: 1e-3,
        });
    }
    Ok(cases)
}

fn activation_cases<T: Scalar>(threshold: f64, rng: &mut Rng) -> Result<Vec<FdCase<T>>> {
    let kinds = [
        ("sigmoid", Activation::Sigmoid),
        ("tanh", Activation::Tanh),
        ("relu", Activation::Relu),
        ("leaky_relu", Activation::LeakyRelu { slope: 0.2 }),
    ];
    let dims = Dims5::new(1, 2, 2, 4, 4);
    let mut cases = Vec::new();
    for (name, kind) in kinds {
        let input = rand_tensor::<T>(dims, rng);
        let probe = rand_tensor::<T>(dims, rng);
        let analytic = activation_backward(&probe, &input, kind)?;
        let probe64 = probe.cast::<f64>();
        cases.push(FdCase {
            target: format!("activation_{name}"),
            groups: vec![("input".into(), input.data().to_vec())],
            analytic: vec![analytic.data().to_vec()],
            eval: Box::new(move |vals| {
                let x = Tensor5::from_vec(dims, vals[0].clone())?;
                Ok(probe_dot(&probe64, &activation(&x, kind)?))
            }),
            threshold,
            samples: SAMPLES_PER_GROUP,
            floor: 1e-3,
        });
    }
    Ok(cases)
}

fn upsample_cases<T: Scalar>(threshold: f64, rng: &mut Rng) -> Result<Vec<FdCase<T>>> {
    let factor_sets = [(1usize, 2usize, 2usize), (2, 1, 3)];
    let dims = Dims5::new(1, 2, 2, 3, 3);
    let mut cases = Vec::new();
    for factors in factor_sets {
        let input = rand_tensor::<T>(dims, rng);
        let out = upsample3d_nearest(&input, factors)?;
        let probe = rand_tensor::<T>(out.dims(), rng);
        let analytic = upsample3d_backward(&probe, factors)?;
        let probe64 = probe.cast::<f64>();
        cases.push(FdCase {
            target: format!("upsample_{}x{}x{}", factors.0, factors.1, factors.2),
            groups: vec![("input".into(), input.data().to_vec())],
            analytic: vec![analytic.data().to_vec()],
            eval: Box::new(move |vals| {
                let x = Tensor5::from_vec(dims, vals[0].clone())?;
                Ok(probe_dot(&probe64, &upsample3d_nearest(&x, factors)?))
            }),
            threshold,
            samples: SAMPLES_PER_GROUP,
            floor: 1e-3,
        });
    }
    Ok(cases)
}

fn gated_conv_case<T: Scalar>(threshold: f64, rng: &mut Rng) -> Result<FdCase<T>> {
    let geom = ConvGeometry::new((3, 3, 3)).with_padding((1, 1, 1));
    let mut init_rng = Rng::from_seed(rng.next_u64());
    let mut layer: GatedConv3d<T> = GatedConv3d::new(
        &mut init_rng,
        2,
        3,
        geom,
        Activation::leaky_default(),
        false,
        false,
    );
    let input = rand_tensor::<T>(Dims5::new(1, 2, 3, 6, 6), rng);
    let (out, cache) = layer.forward(&input, SnMode::Frozen)?;
    let probe = rand_tensor::<T>(out.dims(), rng);
    let grads = layer.backward(&probe, &cache)?;

    let in_dims = input.dims();
    let (wf_dims, wg_dims) = (layer.w_f.dims(), layer.w_g.dims());
    let phi = layer.phi;
    let probe64 = probe.cast::<f64>();
    Ok(FdCase {
        target: "gated_conv3d".into(),
        groups: vec![
            ("input".into(), input.data().to_vec()),
            ("w_f".into(), layer.w_f.data().to_vec()),
            ("b_f".into(), layer.b_f.clone()),
            ("w_g".into(), layer.w_g.data().to_vec()),
            ("b_g".into(), layer.b_g.clone()),
        ],
        analytic: vec![
            grads.input.data().to_vec(),
            grads.w_f.data().to_vec(),
            grads.b_f.clone(),
            grads.w_g.data().to_vec(),
            grads.b_g.clone(),
        ],
        eval: Box::new(move |vals| {
            let mut l = GatedConv3d::<f64> {
                w_f: Tensor5::from_vec(wf_dims, vals[1].clone())?,
                b_f: vals[2].clone(),
                w_g: Tensor5::from_vec(wg_dims, vals[3].clone())?,
                b_g: vals[4].clone(),
                geom,
                phi,
                sn_f: None,
                sn_g: None,
            };
            let x = Tensor5::from_vec(in_dims, vals[0].clone())?;
            let (out, _) = l.forward(&x, SnMode::Frozen)?;
            Ok(probe_dot(&probe64, &out))
        }),
        threshold,
        samples: SAMPLES_PER_GROUP,
        floor: 1e-3,
    })
}

fn snconv_case<T: Scalar>(threshold: f64, rng: &mut Rng) -> Result<FdCase<T>> {
    let geom = ConvGeometry::new((3, 3, 3)).with_padding((1, 1, 1));
    let mut init_rng = Rng::from_seed(rng.next_u64());
    let mut layer: SnConv3d<T> = SnConv3d::new(
        &mut init_rng,
        2,
        3,
        geom,
        Some(Activation::leaky_default()),
        true,
    );
    let input = rand_tensor::<T>(Dims5::new(1, 2, 3, 6, 6), rng);
    // Populate u and sigma once, then keep the normalizer frozen throughout.
    let _ = layer.forward(&input, SnMode::Update)?;
    let (out, cache) = layer.forward(&input, SnMode::Frozen)?;
    let probe = rand_tensor::<T>(out.dims(), rng);
    let (gi, gw, gb) = layer.backward(&probe, &cache)?;

    let in_dims = input.dims();
    let w_dims = layer.weight.dims();
    let phi = layer.phi;
    let frozen_sn = layer.sn.as_ref().map(|s| SpectralNormState::<f64> {
        u: s.u.iter().map(|x| x.as_f64()).collect(),
        power_iters: s.power_iters,
        eps: s.eps,
        sigma: s.sigma.as_f64(),
    });
    let probe64 = probe.cast::<f64>();
    Ok(FdCase {
        target: "snconv3d".into(),
        groups: vec![
            ("input".into(), input.data().to_vec()),
            ("weight".into(), layer.weight.data().to_vec()),
            ("bias".into(), layer.bias.clone()),
        ],
        analytic: vec![gi.data().to_vec(), gw.data().to_vec(), gb],
        eval: Box::new(move |vals| {
            let mut l = SnConv3d::<f64> {
                weight: Tensor5::from_vec(w_dims, vals[1].clone())?,
                bias: vals[2].clone(),
                geom,
                phi,
                sn: frozen_sn.clone(),
            };
            let x = Tensor5::from_vec(in_dims, vals[0].clone())?;
            let (out, _) = l.forward(&x, SnMode::Frozen)?;
            Ok(probe_dot(&probe64, &out))
        }),
        threshold,
        samples: SAMPLES_PER_GROUP,
        floor: 1e-3,
    })
}

fn loss_cases<T: Scalar>(threshold: f64, rng: &mut Rng) -> Result<Vec<FdCase<T>>> {
    let dims = Dims5::new(1, 3, 2, 8, 8);
    let mask_dims = Dims5::new(1, 1, 2, 8, 8);
    let mut cases = Vec::new();

    // l1
    {
        let o = rand_tensor::<T>(dims, rng);
        let v = rand_tensor::<T>(dims, rng);
        let (_, grad) = l1_loss(&o, &v)?;
        let v64 = v.cast::<f64>();
        cases.push(FdCase {
            target: "l1_loss".into(),
            groups: vec![("output".into(), o.data().to_vec())],
            analytic: vec![grad.data().to_vec()],
            eval: Box::new(move |vals| {
                let o = Tensor5::from_vec(dims, vals[0].clone())?;
                Ok(l1_loss(&o, &v64)?.0)
            }),
            threshold,
            samples: SAMPLES_PER_GROUP,
            floor: 1e-3,
        });
    }
    // masked l1
    {
        let o = rand_tensor::<T>(dims, rng);
        let v = rand_tensor::<T>(dims, rng);
        let m = rand_mask::<T>(mask_dims, rng);
        let (_, grad) = masked_l1_loss(&o, &v, &m)?;
        let (v64, m64) = (v.cast::<f64>(), m.cast::<f64>());
        cases.push(FdCase {
            target: "masked_l1_loss".into(),
            groups: vec![("output".into(), o.data().to_vec())],
            analytic: vec![grad.data().to_vec()],
            eval: Box::new(move |vals| {
                let o = Tensor5::from_vec(dims, vals[0].clone())?;
                Ok(masked_l1_loss(&o, &v64, &m64)?.0)
            }),
            threshold,
            samples: SAMPLES_PER_GROUP,
            floor: 1e-3,
        });
    }
    // perceptual (includes the extractor input-gradient path)
    {
        let fe_cfg = FeatureExtractorConfig {
            channels: vec![4, 6],
            seed: 11,
            weights_path: None,
        };
        let fe = FeatureExtractor::<T>::from_config(&fe_cfg, 3)?;
        let o = rand_tensor::<T>(dims, rng);
        let v = rand_tensor::<T>(dims, rng);
        let (_, grad) = perceptual_loss(&o, &v, &fe)?;
        let v64 = v.cast::<f64>();
        cases.push(FdCase {
            target: "perceptual_loss".into(),
            groups: vec![("output".into(), o.data().to_vec())],
            analytic: vec![grad.data().to_vec()],
            eval: Box::new(move |vals| {
                let fe = FeatureExtractor::<f64>::from_config(&fe_cfg, 3)?;
                let o = Tensor5::from_vec(dims, vals[0].clone())?;
                Ok(perceptual_loss(&o, &v64, &fe)?.0)
            }),
            threshold,
            samples: SAMPLES_PER_GROUP,
            floor: 1e-3,
        });
    }
    // style
    {
        let fe_cfg = FeatureExtractorConfig {
            channels: vec![4, 6],
            seed: 12,
            weights_path: None,
        };
        let fe = FeatureExtractor::<T>::from_config(&fe_cfg, 3)?;
        let o = rand_tensor::<T>(dims, rng);
        let v = rand_tensor::<T>(dims, rng);
        let (_, grad) = style_loss(&o, &v, &fe, StyleNorm::Printed)?;
        let v64 = v.cast::<f64>();
        cases.push(FdCase {
            target: "style_loss".into(),
            groups: vec![("output".into(), o.data().to_vec())],
            analytic: vec![grad.data().to_vec()],
            eval: Box::new(move |vals| {
                let fe = FeatureExtractor::<f64>::from_config(&fe_cfg, 3)?;
                let o = Tensor5::from_vec(dims, vals[0].clone())?;
                Ok(style_loss(&o, &v64, &fe, StyleNorm::Printed)?.0)
            }),
            threshold,
            samples: SAMPLES_PER_GROUP,
            floor: 1e-3,
        });
    }
    // hinge discriminator loss wrt both score volumes
    {
        let sdims = Dims5::new(1, 1, 2, 3, 3);
        let s_real = rand_tensor::<T>(sdims, rng).scale(T::of_f64(1.5));
        let s_fake = rand_tensor::<T>(sdims, rng).scale(T::of_f64(1.5));
        let (_, g_real, g_fake) = gan_d_loss(&s_real, &s_fake, HingeForm::Standard);
        cases.push(FdCase {
            target: "gan_d_loss".into(),
            groups: vec![
                ("scores_real".into(), s_real.data().to_vec()),
                ("scores_fake".into(), s_fake.data().to_vec()),
            ],
            analytic: vec![g_real.data().to_vec(), g_fake.data().to_vec()],
            eval: Box::new(move |vals| {
                let r = Tensor5::from_vec(sdims, vals[0].clone())?;
                let f = Tensor5::from_vec(sdims, vals[1].clone())?;
                Ok(gan_d_loss(&r, &f, HingeForm::Standard).0)
            }),
            threshold,
            samples: SAMPLES_PER_GROUP,
            floor: 1e-3,
        });
    }
    // generator adversarial loss
    {
        let sdims = Dims5::new(1, 1, 2, 3, 3);
        let s_fake = rand_tensor::<T>(sdims, rng);
        let (_, grad) = gan_g_loss(&s_fake);
        cases.push(FdCase {
            target: "gan_g_loss".into(),
            groups: vec![("scores_fake".into(), s_fake.data().to_vec())],
            analytic: vec![grad.data().to_vec()],
            eval: Box::new(move |vals| {
                let f = Tensor5::from_vec(sdims, vals[0].clone())?;
                Ok(gan_g_loss(&f).0)
            }),
            threshold,
            samples: SAMPLES_PER_GROUP,
            floor: 1e-3,
        });
    }
    Ok(cases)
}

fn generator_case<T: Scalar>(threshold: f64, rng: &mut Rng) -> Result<FdCase<T>> {
    let config = ModelConfig {
        generator: GeneratorConfig {
            base_channels: 4,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut model: ModelState<T> = ModelState::new(config.clone(), 41)?;
    let video = rand_tensor::<T>(Dims5::new(1, 3, 4, 8, 8), rng);
    let mask = rand_mask::<T>(Dims5::new(1, 1, 4, 8, 8), rng);
    let input = make_masked_input(&video, &mask)?;
    // One update pass seeds every spectral-norm sigma; FD then runs frozen.
    let _ = model.generator.forward(&input, SnMode::Update)?;
    let (output, cache) = model.generator.forward(&input, SnMode::Frozen)?;
    let (_, grad_out) = masked_l1_loss(&output, &video, &mask)?;
    let grads = model.generator.backward(&grad_out, &cache)?;

    let mut groups = Vec::new();
    let mut analytic = Vec::new();
    {
        let entries = model.generator.grad_entries(&grads);
        let mut params = model.generator.param_entries_mut();
        for ((name, param), (gname, grad)) in params.iter_mut().zip(entries) {
            debug_assert_eq!(*name, gname);
            groups.push((name.clone(), param.to_vec()));
            analytic.push(grad.to_vec());
        }
    }

    // Double-precision twin with the same architecture and frozen sigma.
    let mut twin: ModelState<f64> = ModelState::new(config, 41)?;
    let input64 = input.cast::<f64>();
    let _ = twin.generator.forward(&input64, SnMode::Update)?;
    let (video64, mask64) = (video.cast::<f64>(), mask.cast::<f64>());
    let twin = std::cell::RefCell::new(twin);
    Ok(FdCase {
        target: "generator".into(),
        groups,
        analytic,
        eval: Box::new(move |vals| {
            let mut m = twin.borrow_mut();
            for ((_, param), v) in m.generator.param_entries_mut().iter_mut().zip(vals) {
                param.copy_from_slice(v);
            }
            let (out, _) = m.generator.forward(&input64, SnMode::Frozen)?;
            Ok(masked_l1_loss(&out, &video64, &mask64)?.0)
        }),
        threshold,
        samples: 16,
        floor: 1e-3,
    })
}

pub const GRAD_CHECK_TARGETS: [&str; 8] = [
    "conv3d",
    "activation",
    "upsample",
    "gated_conv3d",
    "snconv3d",
    "losses",
    "generator",
    "all",
];

/// Run finite-difference checks for one target (or "all") and collect
/// per-parameter-group maximum relative errors.
pub fn grad_check<T: Scalar>(target: &str, eps: f64) -> Result<GradCheckReport> {
    let (layer_thr, gen_thr) = thresholds::<T>();
    let mut rng = Rng::from_seed(0x5eed_6ead);
    let mut cases: Vec<FdCase<T>> = Vec::new();

    let want = |name: &str| target == "all" || target == name;
    if want("conv3d") {
        cases.extend(conv3d_cases(layer_thr, &mut rng)?);
    }
    if want("activation") {
        cases.extend(activation_cases(layer_thr, &mut rng)?);
    }
    if want("upsample") {
        cases.extend(upsample_cases(layer_thr, &mut rng)?);
    }
    if want("gated_conv3d") {
        cases.push(gated_conv_case(layer_thr, &mut rng)?);
    }
    if want("snconv3d") {
        cases.push(snconv_case(layer_thr, &mut rng)?);
    }
    if want("losses") {
        cases.extend(loss_cases(layer_thr, &mut rng)?);
    }
    if want("generator") {
        cases.push(generator_case(gen_thr, &mut rng)?);
    }
    if cases.is_empty() {
        return Err(Error::Config(format!(
            "unknown grad-check target '{target}'"
        )));
    }

    let mut report = GradCheckReport::default();
    for case in &cases {
        report.entries.extend(run_case(case, eps, &mut rng)?);
    }
    Ok(report)
}
