//! Pixel-space minimization of the assembled objective: latent
//! initialization, cached objective evaluation (value + pixel gradient), the
//! Adam update rule, and the optimization loop.
//!
//! Style targets (Gram matrices of the example image, masked or global) are
//! computed once when the [`Objective`] is built and reused across
//! iterations; re-building the objective reproduces the same values bit for
//! bit. The assembled pixel gradient is formed as
//! `alpha * grad(faithfulness) + weight * backward(style cotangents)`, so
//! gradient assembly is exactly linear in the term weights.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{
    assemble_objective_value, build_masked_style_target, build_style_target, content_loss,
    faithfulness_loss, masked_style_loss_with_target, style_loss, LossBreakdown, MaskedStyleTarget,
    Mode, StyleEval, StyleTarget, TermValues,
};
use crate::masks::MaskSet;
use crate::net::{layer_index, ActivationStack, FeatureMap, Network};
use crate::rng::Rng64;
use crate::sampling::{upsample_bicubic, GaussianKernel};
use crate::scalar::{cast, Scalar};

/// Default term weights; exposed so the CLI and tests share one source.
pub const DEFAULT_ALPHA: f64 = 1e3;
pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_SR_ITERATIONS: usize = 500;
pub const DEFAULT_SYNTH_ITERATIONS: usize = 1000;
pub const DEFAULT_INIT_NOISE_STD: f64 = 0.01;

/// Style layers used when none are specified.
pub fn default_style_layers<T: Scalar>() -> Vec<(String, T)> {
    ["conv1_1", "pool1", "pool2", "pool3", "pool4", "pool5"]
        .iter()
        .map(|n| (n.to_string(), T::one()))
        .collect()
}

pub const DEFAULT_CONTENT_LAYER: &str = "conv4_2";

/// How the latent image is initialized before descent.
#[derive(Debug, Clone)]
pub enum LatentInit<T> {
    /// Bicubic upsample of the LR input plus seeded Gaussian perturbation.
    BicubicOfInput { noise_std: T },
    /// Copy of the content image (transfer mode).
    ContentCopy,
    /// Seeded uniform noise (texture synthesis from scratch).
    UniformNoise { lo: T, hi: T },
}

/// Everything needed to evaluate one objective.
#[derive(Debug, Clone)]
pub struct ObjectiveConfig<T> {
    pub mode: Mode,
    pub alpha: T,
    pub beta: T,
    pub style_layers: Vec<(String, T)>,
    pub content_layer: String,
    /// Downsampling factor between the latent and the LR input (sr modes).
    pub factor: usize,
    pub kernel: GaussianKernel<T>,
    /// Mask pairs (sr_local mode).
    pub mask_set: Option<MaskSet<T>>,
    pub style_image: Image<T>,
    /// LR input (sr modes) or content image (transfer).
    pub input_image: Option<Image<T>>,
    /// Output size for synthesis without an input image.
    pub out_size: Option<(usize, usize)>,
    pub init: LatentInit<T>,
    pub seed: u64,
}

impl<T: Scalar> ObjectiveConfig<T> {
    /// Output dimensions implied by the configuration.
    pub fn output_dims(&self) -> Result<(usize, usize)> {
        match self.mode {
            Mode::Transfer => {
                let c = self.input_image.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("transfer mode needs a content image".into())
                })?;
                Ok((c.height(), c.width()))
            }
            Mode::SrGlobal | Mode::SrLocal => match (&self.input_image, self.out_size) {
                (Some(c), _) => Ok((c.height() * self.factor, c.width() * self.factor)),
                (None, Some(dims)) => Ok(dims),
                (None, None) => Err(Error::InvalidArgument(
                    "sr modes need an input image (or an explicit output size)".into(),
                )),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha + self.beta > T::zero()) {
            return Err(Error::InvalidArgument("alpha + beta must be positive".into()));
        }
        if self.alpha < T::zero() || self.beta < T::zero() {
            return Err(Error::InvalidArgument("weights must be non-negative".into()));
        }
        if self.factor < 1 {
            return Err(Error::InvalidArgument("factor must be >= 1".into()));
        }
        for (name, _) in &self.style_layers {
            layer_index(name)?;
        }
        layer_index(&self.content_layer)?;
        match self.mode {
            Mode::Transfer => {
                if self.alpha > T::zero() && self.input_image.is_none() {
                    return Err(Error::InvalidArgument(
                        "transfer mode with alpha > 0 needs a content image".into(),
                    ));
                }
            }
            Mode::SrGlobal => {
                if self.alpha > T::zero() && self.input_image.is_none() {
                    return Err(Error::InvalidArgument("sr mode needs an LR input image".into()));
                }
            }
            Mode::SrLocal => {
                if self.alpha > T::zero() && self.input_image.is_none() {
                    return Err(Error::InvalidArgument("sr mode needs an LR input image".into()));
                }
                match &self.mask_set {
                    None => {
                        return Err(Error::InvalidArgument(
                            "sr_local mode needs a mask set".into(),
                        ))
                    }
                    Some(set) if set.is_empty() => return Err(Error::EmptyMaskSet),
                    _ => {}
                }
            }
        }
        self.output_dims().map(|_| ())
    }

    /// Deepest network layer any active term needs.
    fn deepest_layer(&self) -> Option<String> {
        let mut deepest: Option<(usize, String)> = None;
        let mut consider = |name: &str| {
            let idx = layer_index(name).expect("validated layer");
            if deepest.as_ref().map(|(d, _)| idx > *d).unwrap_or(true) {
                deepest = Some((idx, name.to_string()));
            }
        };
        if self.beta > T::zero() {
            for (name, _) in &self.style_layers {
                consider(name);
            }
        }
        if self.mode == Mode::Transfer && self.alpha > T::zero() {
            consider(&self.content_layer);
        }
        deepest.map(|(_, n)| n)
    }
}

/// Precomputed objective state: style targets, content activations, and the
/// deepest layer to evaluate.
pub struct Objective<'a, T> {
    net: &'a Network<T>,
    pub cfg: ObjectiveConfig<T>,
    deepest: Option<String>,
    style_target: Option<StyleTarget<T>>,
    masked_target: Option<MaskedStyleTarget<T>>,
    content_acts: Option<ActivationStack<T>>,
}

impl<'a, T: Scalar> Objective<'a, T> {
    pub fn new(net: &'a Network<T>, cfg: ObjectiveConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let deepest = cfg.deepest_layer();
        let (out_h, out_w) = cfg.output_dims()?;

        let mut style_target = None;
        let mut masked_target = None;
        if cfg.beta > T::zero() {
            let deepest = deepest.as_deref().expect("beta > 0 implies style layers");
            let s_acts = net.forward(&cfg.style_image, deepest)?;
            match cfg.mode {
                Mode::SrLocal => {
                    let mask_set = cfg.mask_set.as_ref().expect("validated");
                    // only the layer shapes of the x side are needed here; a
                    // zero latent of the right size provides them
                    let x_shape = net.forward(&Image::new(out_h, out_w), deepest)?;
                    masked_target = Some(build_masked_style_target(
                        mask_set,
                        &s_acts,
                        &x_shape,
                        &cfg.style_layers,
                    )?);
                }
                _ => {
                    style_target = Some(build_style_target(&s_acts, &cfg.style_layers)?);
                }
            }
        }

        let content_acts = if cfg.mode == Mode::Transfer && cfg.alpha > T::zero() {
            let deepest = deepest.as_deref().expect("content layer considered");
            Some(net.forward(cfg.input_image.as_ref().unwrap(), deepest)?)
        } else {
            None
        };

        Ok(Objective {
            net,
            cfg,
            deepest,
            style_target,
            masked_target,
            content_acts,
        })
    }

    /// Mask pairs skipped per layer when the masked targets were built.
    pub fn skipped_mask_layers(&self) -> &[(usize, String)] {
        self.masked_target.as_ref().map(|t| t.skipped.as_slice()).unwrap_or(&[])
    }

    /// Value and pixel gradient of the full objective at the latent `x`.
    pub fn evaluate(&self, x: &Image<T>) -> Result<(LossBreakdown<T>, Image<T>)> {
        let cfg = &self.cfg;
        let (out_h, out_w) = cfg.output_dims()?;
        if (x.height(), x.width()) != (out_h, out_w) {
            return Err(Error::ShapeMismatch(format!(
                "latent is {}x{}, objective expects {out_h}x{out_w}",
                x.height(),
                x.width()
            )));
        }

        let x_acts = match &self.deepest {
            Some(layer) => Some(self.net.forward(x, layer)?),
            None => None,
        };

        // style term and its pixel gradient (unit weight; scaled at assembly)
        let mut style_eval: Option<StyleEval<T>> = None;
        if cfg.beta > T::zero() {
            let acts = x_acts.as_ref().expect("style needs activations");
            style_eval = Some(match cfg.mode {
                Mode::SrLocal => {
                    masked_style_loss_with_target(self.masked_target.as_ref().unwrap(), acts)?
                }
                _ => style_loss(self.style_target.as_ref().unwrap(), acts)?,
            });
        }

        let mut content_value: Option<T> = None;
        let mut cotangents: Vec<(String, FeatureMap<T>)> = Vec::new();
        let style_weight = match cfg.mode {
            Mode::SrLocal => {
                let k = cfg.mask_set.as_ref().map(|m| m.len()).unwrap_or(1);
                cfg.beta / cast::<T>(k as f64)
            }
            _ => cfg.beta,
        };
        if let Some(eval) = &style_eval {
            for (name, g) in &eval.grads {
                let mut scaled = g.clone();
                for v in scaled.data.iter_mut() {
                    *v *= style_weight;
                }
                cotangents.push((name.clone(), scaled));
            }
        }
        if let Some(c_acts) = &self.content_acts {
            let acts = x_acts.as_ref().expect("content needs activations");
            let (v, g) = content_loss(c_acts, acts, &cfg.content_layer)?;
            content_value = Some(v);
            let mut scaled = g;
            for v in scaled.data.iter_mut() {
                *v *= cfg.alpha;
            }
            cotangents.push((cfg.content_layer.clone(), scaled));
        } else if cfg.mode == Mode::Transfer {
            content_value = Some(T::zero());
        }

        let mut grad = if cotangents.is_empty() {
            Image::new(out_h, out_w)
        } else {
            self.net.backward(x_acts.as_ref().unwrap(), &cotangents)?
        };

        // faithfulness term, added directly in pixel space
        let mut faith_value: Option<T> = None;
        if matches!(cfg.mode, Mode::SrGlobal | Mode::SrLocal) {
            if cfg.alpha > T::zero() {
                let c = cfg.input_image.as_ref().expect("validated");
                let (v, g) = faithfulness_loss(x, c, cfg.factor, &cfg.kernel)?;
                faith_value = Some(v);
                for (dst, &src) in grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *dst += cfg.alpha * src;
                }
            } else {
                faith_value = Some(T::zero());
            }
        }

        let style_evaluated = style_eval.is_some();
        let content_evaluated = self.content_acts.is_some();
        let terms = TermValues {
            faithfulness: faith_value,
            style: Some(style_eval.as_ref().map(|e| e.value).unwrap_or_else(T::zero)),
            content: content_value,
            mask_count: match cfg.mode {
                Mode::SrLocal => cfg.mask_set.as_ref().map(|m| m.len()),
                _ => None,
            },
            per_layer_style: style_eval.map(|e| e.per_layer).unwrap_or_default(),
        };
        let mut breakdown = assemble_objective_value(cfg.alpha, cfg.beta, cfg.mode, terms)?;
        // terms that were never evaluated (zero weight) are inapplicable and
        // serialize as empty trace fields
        if !style_evaluated {
            breakdown.style = None;
        }
        if !content_evaluated && cfg.mode == Mode::Transfer {
            breakdown.content = None;
        }
        if matches!(cfg.mode, Mode::SrGlobal | Mode::SrLocal) && !(cfg.alpha > T::zero()) {
            breakdown.faithfulness = None;
        }
        Ok((breakdown, grad))
    }
}

/// Initial latent per the configured mode.
pub fn init_latent<T: Scalar>(cfg: &ObjectiveConfig<T>) -> Result<Image<T>> {
    let (out_h, out_w) = cfg.output_dims()?;
    match &cfg.init {
        LatentInit::ContentCopy => cfg
            .input_image
            .clone()
            .ok_or_else(|| Error::InvalidArgument("no content image to copy".into())),
        LatentInit::UniformNoise { lo, hi } => {
            let mut rng = Rng64::new(cfg.seed).fork(0x6e6f_6973);
            let (lo, hi) = (lo.to_f64().unwrap(), hi.to_f64().unwrap());
            Ok(Image::from_fn(out_h, out_w, |_, _| {
                cast(rng.next_range(lo, hi))
            }))
        }
        LatentInit::BicubicOfInput { noise_std } => {
            let c = cfg.input_image.as_ref().ok_or_else(|| {
                Error::InvalidArgument("bicubic init needs an input image".into())
            })?;
            let mut up = upsample_bicubic(c, cfg.factor)?;
            let std = noise_std.to_f64().unwrap();
            if std > 0.0 {
                let mut rng = Rng64::new(cfg.seed).fork(0x7065_7274);
                for v in up.as_mut_slice() {
                    *v += cast(std * rng.next_gaussian());
                }
            }
            Ok(up)
        }
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> Default for AdamParams<T> {
    fn default() -> Self {
        AdamParams {
            lr: cast(0.02),
            beta1: cast(0.9),
            beta2: cast(0.999),
            eps: cast(1e-8),
        }
    }
}

/// Optimizer state: current iterate, step count, moment accumulators, and the
/// per-iteration loss trace.
#[derive(Debug, Clone)]
pub struct OptimState<T> {
    pub x: Image<T>,
    pub step: usize,
    m: Vec<T>,
    v: Vec<T>,
    pub trace: Vec<LossBreakdown<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(x0: Image<T>) -> Self {
        let n = x0.height() * x0.width();
        OptimState {
            x: x0,
            step: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            trace: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients, naming the
/// iteration that produced them.
pub fn adam_step<T: Scalar>(
    state: &mut OptimState<T>,
    grad: &Image<T>,
    params: &AdamParams<T>,
) -> Result<()> {
    if (grad.height(), grad.width()) != (state.x.height(), state.x.width()) {
        return Err(Error::ShapeMismatch(format!(
            "gradient {}x{} vs iterate {}x{}",
            grad.height(),
            grad.width(),
            state.x.height(),
            state.x.width()
        )));
    }
    if grad.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { step: state.step });
    }
    state.step += 1;
    let t = state.step as i32;
    let one = T::one();
    let bc1 = one - params.beta1.powi(t);
    let bc2 = one - params.beta2.powi(t);
    for ((x, g), (m, v)) in state
        .x
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = params.beta1 * *m + (one - params.beta1) * *g;
        *v = params.beta2 * *v + (one - params.beta2) * *g * *g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *x -= params.lr * m_hat / (v_hat.sqrt() + params.eps);
    }
    Ok(())
}

/// Run the full loop: init, then `iterations` of evaluate + Adam. Returns the
/// final (unclamped) latent and the loss trace. Deterministic per seed.
pub fn run<T: Scalar>(
    net: &Network<T>,
    cfg: ObjectiveConfig<T>,
    iterations: usize,
    adam: &AdamParams<T>,
) -> Result<(Image<T>, Vec<LossBreakdown<T>>)> {
    run_with_callback(net, cfg, iterations, adam, |_, _| {})
}

/// Same as [`run`] with a per-iteration observer (used by the CLI for
/// progress reporting).
pub fn run_with_callback<T: Scalar>(
    net: &Network<T>,
    cfg: ObjectiveConfig<T>,
    iterations: usize,
    adam: &AdamParams<T>,
    on_iter: impl FnMut(usize, &LossBreakdown<T>),
) -> Result<(Image<T>, Vec<LossBreakdown<T>>)> {
    let objective = Objective::new(net, cfg)?;
    run_prepared(&objective, iterations, adam, on_iter)
}

/// Optimization loop over an already-built objective.
pub fn run_prepared<T: Scalar>(
    objective: &Objective<'_, T>,
    iterations: usize,
    adam: &AdamParams<T>,
    mut on_iter: impl FnMut(usize, &LossBreakdown<T>),
) -> Result<(Image<T>, Vec<LossBreakdown<T>>)> {
    if iterations < 1 {
        return Err(Error::InvalidArgument("iterations must be >= 1".into()));
    }
    let x0 = init_latent(&objective.cfg)?;
    let mut state = OptimState::new(x0);
    for i in 0..iterations {
        let (breakdown, grad) = objective.evaluate(&state.x)?;
        adam_step(&mut state, &grad, adam)?;
        on_iter(i, &breakdown);
        state.trace.push(breakdown);
    }
    Ok((state.x, state.trace))
}

/// Serialize a loss trace as `step,total,faithfulness,style,content` CSV with
/// empty fields for inapplicable terms.
pub fn trace_to_csv<T: Scalar>(trace: &[LossBreakdown<T>]) -> String {
    let mut out = String::from("step,total,faithfulness,style,content\n");
    let fmt = |v: Option<T>| v.map(|x| format!("{x}")).unwrap_or_default();
    for (i, row) in trace.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            i + 1,
            row.total,
            fmt(row.faithfulness),
            fmt(row.style),
            fmt(row.content)
        );
    }
    out
}

pub fn write_trace_csv<T: Scalar>(trace: &[LossBreakdown<T>], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), trace_to_csv(trace)).map_err(|e| Error::io(path.as_ref(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::MaskSet;

    fn texture(h: usize, w: usize, seed: u64) -> Image<f64> {
        let mut rng = Rng64::new(seed);
        let mut img = Image::from_fn(h, w, |y, x| {
            0.5 + 0.3 * ((y as f64 * 0.7).sin() * (x as f64 * 0.5).cos())
        });
        for v in img.as_mut_slice() {
            *v = (*v + 0.1 * (rng.next_f64() - 0.5)).clamp(0.0, 1.0);
        }
        img
    }

    fn sr_config(c: Image<f64>, style: Image<f64>, f: usize) -> ObjectiveConfig<f64> {
        ObjectiveConfig {
            mode: Mode::SrGlobal,
            alpha: 1e3,
            beta: 1.0,
            style_layers: vec![
                ("conv1_1".into(), 1.0),
                ("pool1".into(), 1.0),
                ("pool2".into(), 1.0),
            ],
            content_layer: DEFAULT_CONTENT_LAYER.into(),
            factor: f,
            kernel: GaussianKernel::new(0.5 * f as f64).unwrap(),
            mask_set: None,
            style_image: style,
            input_image: Some(c),
            out_size: None,
            init: LatentInit::BicubicOfInput { noise_std: 0.01 },
            seed: 7,
        }
    }

    #[test]
    fn init_latent_bicubic_and_copy() {
        let c = texture(8, 8, 1);
        let mut cfg = sr_config(c.clone(), texture(16, 16, 2), 2);
        cfg.init = LatentInit::BicubicOfInput { noise_std: 0.0 };
        let x0 = init_latent(&cfg).unwrap();
        assert_eq!(x0, upsample_bicubic(&c, 2).unwrap());

        // f = 1: bicubic is the identity, so x0 = c exactly
        let mut cfg1 = sr_config(c.clone(), texture(16, 16, 2), 1);
        cfg1.kernel = GaussianKernel::delta();
        cfg1.init = LatentInit::BicubicOfInput { noise_std: 0.0 };
        assert_eq!(init_latent(&cfg1).unwrap(), c);
    }

    #[test]
    fn init_perturbation_follows_half_normal_statistics() {
        let c = texture(32, 32, 3);
        let mut cfg = sr_config(c.clone(), texture(16, 16, 2), 2);
        cfg.init = LatentInit::BicubicOfInput { noise_std: 0.01 };
        cfg.seed = 11;
        let x0 = init_latent(&cfg).unwrap();
        let x0_again = init_latent(&cfg).unwrap();
        assert_eq!(x0, x0_again);

        let base = upsample_bicubic(&c, 2).unwrap();
        let n = 64.0 * 64.0;
        let mean_abs: f64 = x0
            .as_slice()
            .iter()
            .zip(base.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n;
        let expect = 0.01 * (2.0 / std::f64::consts::PI).sqrt();
        let half_normal_sd = 0.01 * (1.0 - 2.0 / std::f64::consts::PI).sqrt();
        let se = half_normal_sd / n.sqrt();
        assert!(
            (mean_abs - expect).abs() < 3.0 * se,
            "mean |noise| {mean_abs} vs {expect} (se {se})"
        );
    }

    #[test]
    fn synth_init_noise_in_range() {
        let mut cfg = sr_config(texture(8, 8, 1), texture(16, 16, 2), 2);
        cfg.input_image = None;
        cfg.out_size = Some((24, 16));
        cfg.init = LatentInit::UniformNoise { lo: 0.4, hi: 0.6 };
        let x0 = init_latent(&cfg).unwrap();
        assert_eq!((x0.height(), x0.width()), (24, 16));
        assert!(x0.as_slice().iter().all(|&v| (0.4..0.6).contains(&v)));
    }

    #[test]
    fn adam_zero_gradient_keeps_iterate() {
        let x = texture(4, 4, 4);
        let mut state = OptimState::new(x.clone());
        adam_step(&mut state, &Image::new(4, 4), &AdamParams::default()).unwrap();
        assert_eq!(state.x, x);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_has_unit_magnitude() {
        // after bias correction a constant gradient g produces a step of
        // lr * g / (|g| + eps), i.e. about lr in magnitude
        let x = Image::<f64>::constant(3, 3, 0.5);
        let mut state = OptimState::new(x);
        let g = Image::<f64>::constant(3, 3, 0.37);
        let p = AdamParams::<f64>::default();
        adam_step(&mut state, &g, &p).unwrap();
        for &v in state.x.as_slice() {
            assert!((v - (0.5 - p.lr)).abs() < 1e-7, "{v}");
        }
    }

    /// Scalar reference Adam, written independently.
    #[test]
    fn adam_matches_scalar_reference() {
        let mut rng = Rng64::new(5);
        let p = AdamParams::<f64> {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let n = 12;
        let x0: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let mut state = OptimState::new(Image::from_vec(3, 4, x0.clone()).unwrap());

        let mut x = x0;
        let mut m = vec![0.0; n];
        let mut v = vec![0.0; n];
        for t in 1..=10 {
            let g: Vec<f64> = (0..n).map(|_| rng.next_f64() - 0.5).collect();
            adam_step(&mut state, &Image::from_vec(3, 4, g.clone()).unwrap(), &p).unwrap();
            for i in 0..n {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                x[i] -= 0.05 * mh / (vh.sqrt() + 1e-8);
            }
            for i in 0..n {
                assert!(
                    (state.x.as_slice()[i] - x[i]).abs() <= 1e-12 * x[i].abs().max(1.0),
                    "step {t} element {i}"
                );
            }
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut state = OptimState::new(Image::<f64>::constant(2, 2, 0.1));
        state.step = 41;
        let mut g = Image::<f64>::new(2, 2);
        g.set(1, 1, f64::NAN);
        let err = adam_step(&mut state, &g, &AdamParams::default()).unwrap_err();
        assert!(err.to_string().contains("41"), "{err}");
    }

    #[test]
    fn beta_zero_objective_is_pure_faithfulness() {
        let c = texture(8, 8, 6);
        let net = Network::<f64>::random(50);
        let mut cfg = sr_config(c.clone(), texture(16, 16, 7), 1);
        cfg.beta = 0.0;
        cfg.kernel = GaussianKernel::delta();
        cfg.init = LatentInit::BicubicOfInput { noise_std: 0.0 };
        let objective = Objective::new(&net, cfg).unwrap();
        // x = c satisfies A x = c, so loss and gradient vanish
        let (b, g) = objective.evaluate(&c).unwrap();
        assert_eq!(b.total, 0.0);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_assembly_is_linear() {
        let c = texture(8, 8, 8);
        let style = texture(16, 16, 9);
        let net = Network::<f64>::random(51);
        let x = texture(16, 16, 10);

        let mut base = sr_config(c, style, 2);
        base.init = LatentInit::BicubicOfInput { noise_std: 0.0 };
        let (alpha, beta) = (350.0, 2.5);

        let mut faith_only = base.clone();
        faith_only.alpha = 1.0;
        faith_only.beta = 0.0;
        let g_f = Objective::new(&net, faith_only).unwrap().evaluate(&x).unwrap().1;

        let mut style_only = base.clone();
        style_only.alpha = 0.0;
        style_only.beta = 1.0;
        let g_s = Objective::new(&net, style_only).unwrap().evaluate(&x).unwrap().1;

        let mut both = base;
        both.alpha = alpha;
        both.beta = beta;
        let g = Objective::new(&net, both).unwrap().evaluate(&x).unwrap().1;

        for i in 0..x.as_slice().len() {
            let want = alpha * g_f.as_slice()[i] + beta * g_s.as_slice()[i];
            let got = g.as_slice()[i];
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1e-12),
                "pixel {i}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn cached_targets_change_nothing() {
        let c = texture(8, 8, 11);
        let style = texture(16, 16, 12);
        let net = Network::<f64>::random(52);
        let cfg = sr_config(c, style, 2);
        let x = texture(16, 16, 13);

        let cached = Objective::new(&net, cfg.clone()).unwrap();
        let (b1, g1) = cached.evaluate(&x).unwrap();
        let (b2, g2) = cached.evaluate(&x).unwrap();
        assert_eq!(b1.total, b2.total);
        assert_eq!(g1, g2);

        // a freshly built objective (uncached route) agrees bit for bit
        let fresh = Objective::new(&net, cfg).unwrap();
        let (b3, g3) = fresh.evaluate(&x).unwrap();
        assert_eq!(b1.total, b3.total);
        assert_eq!(g1, g3);
    }

    #[test]
    fn quadratic_descent_reaches_the_input() {
        // beta = 0, f = 1, identity kernel: objective alpha * ||x - c||^2;
        // Adam from the perturbed init must drive x back to c
        let c = texture(12, 12, 14);
        let net = Network::<f64>::random(53);
        let mut cfg = sr_config(c.clone(), texture(12, 12, 15), 1);
        cfg.beta = 0.0;
        cfg.kernel = GaussianKernel::delta();
        cfg.init = LatentInit::BicubicOfInput { noise_std: 0.05 };
        let adam = AdamParams {
            lr: 0.05,
            ..Default::default()
        };
        let (x, trace) = run(&net, cfg, 300, &adam).unwrap();
        assert_eq!(trace.len(), 300);
        let worst = x.max_abs_diff(&c);
        assert!(worst < 0.01, "|x - c|_inf = {worst}");
        assert!(trace.last().unwrap().total < trace[0].total);
    }

    #[test]
    fn single_iteration_trace() {
        let c = texture(8, 8, 16);
        let net = Network::<f64>::random(54);
        let mut cfg = sr_config(c, texture(16, 16, 17), 2);
        cfg.beta = 0.0;
        let (_, trace) = run(&net, cfg, 1, &AdamParams::default()).unwrap();
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn runs_are_bit_deterministic() {
        let c = texture(8, 8, 18);
        let style = texture(16, 16, 19);
        let net = Network::<f64>::random(55);
        let cfg = sr_config(c, style, 2);
        let (x1, t1) = run(&net, cfg.clone(), 5, &AdamParams::default()).unwrap();
        let (x2, t2) = run(&net, cfg, 5, &AdamParams::default()).unwrap();
        assert_eq!(x1, x2);
        for (a, b) in t1.iter().zip(&t2) {
            assert_eq!(a.total, b.total);
        }
    }

    #[test]
    fn descent_over_windows_on_committed_fixture() {
        let c = texture(12, 12, 20);
        let style = texture(24, 24, 21);
        let net = Network::<f64>::random(56);
        let cfg = sr_config(c, style, 2);
        let (_, trace) = run(&net, cfg, 200, &AdamParams::default()).unwrap();
        let avg = |rows: &[LossBreakdown<f64>]| {
            rows.iter().map(|r| r.total).sum::<f64>() / rows.len() as f64
        };
        let lead = avg(&trace[..100]);
        let tail = avg(&trace[100..]);
        assert!(tail < lead, "leading {lead} vs trailing {tail}");
    }

    #[test]
    fn sr_local_with_full_mask_reduces_to_global_bit_exactly() {
        let c = texture(8, 8, 22);
        let style = texture(16, 16, 23);
        let net = Network::<f64>::random(57);
        let x = texture(16, 16, 24);

        let global = sr_config(c.clone(), style.clone(), 2);
        let mut local = global.clone();
        local.mode = Mode::SrLocal;
        local.mask_set = Some(MaskSet::full(16, 16, 16, 16));

        let (bg, gg) = Objective::new(&net, global).unwrap().evaluate(&x).unwrap();
        let (bl, gl) = Objective::new(&net, local).unwrap().evaluate(&x).unwrap();
        assert_eq!(bg.total, bl.total);
        assert_eq!(gg, gl);
    }

    #[test]
    fn trace_csv_format() {
        let trace = vec![
            LossBreakdown::<f64> {
                total: 3.5,
                faithfulness: Some(2.0),
                style: Some(1.5),
                content: None,
                mask_count: None,
                per_layer_style: vec![],
            },
            LossBreakdown::<f64> {
                total: 2.0,
                faithfulness: Some(1.0),
                style: Some(1.0),
                content: None,
                mask_count: None,
                per_layer_style: vec![],
            },
        ];
        let csv = trace_to_csv(&trace);
        assert_eq!(
            csv,
            "step,total,faithfulness,style,content\n1,3.5,2,1.5,\n2,2,1,1,\n"
        );
    }

    #[test]
    fn config_validation_fails_fast() {
        let cfg = sr_config(texture(8, 8, 25), texture(16, 16, 26), 2);
        let net = Network::<f64>::random(58);

        let mut bad = cfg.clone();
        bad.alpha = 0.0;
        bad.beta = 0.0;
        assert!(Objective::new(&net, bad).is_err());

        let mut bad = cfg.clone();
        bad.style_layers = vec![("conv9_9".into(), 1.0)];
        assert!(Objective::new(&net, bad).is_err());

        let mut bad = cfg.clone();
        bad.mode = Mode::SrLocal;
        assert!(Objective::new(&net, bad).is_err(), "missing mask set");

        let mut bad = cfg;
        bad.input_image = None;
        assert!(Objective::new(&net, bad).is_err());
    }

    #[test]
    fn evaluate_checks_latent_shape() {
        let net = Network::<f64>::random(59);
        let cfg = sr_config(texture(8, 8, 27), texture(16, 16, 28), 2);
        let objective = Objective::new(&net, cfg).unwrap();
        assert!(objective.evaluate(&texture(8, 8, 29)).is_err());
    }
}
