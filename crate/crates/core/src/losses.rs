//! Energy terms of the objective: Gram matrices, global and masked style
//! losses, content loss, and the blur-downsample faithfulness term. Every
//! operation returns both its scalar value and the gradient with respect to
//! its feature-map or pixel inputs.
//!
//! The masked style path and the global style path deliberately share the
//! per-layer arithmetic (`gram_frobenius_term`), so a single all-ones mask
//! pair reproduces the global loss bit for bit.

use crate::error::{Error, Result};
use crate::image::{resize_nearest, Image};
use crate::masks::MaskSet;
use crate::net::{ActivationStack, FeatureMap};
use crate::sampling::{downsample, downsample_adjoint, GaussianKernel};
use crate::scalar::{cast, cast_usize, Scalar};

/// Channel-correlation matrix G = F F^T of a matricized feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix<T> {
    pub n: usize,
    pub data: Vec<T>, // n x n, row-major
}

impl<T: Scalar> GramMatrix<T> {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn trace(&self) -> T {
        (0..self.n).fold(T::zero(), |acc, i| acc + self.at(i, i))
    }
}

/// G_ij = sum_k F_ik F_jk with no normalization. The lower triangle is
/// mirrored from the upper one, so symmetry holds exactly.
pub fn gram<T: Scalar>(x: &FeatureMap<T>) -> GramMatrix<T> {
    let n = x.channels;
    let m = x.spatial();
    let mut data = vec![T::zero(); n * n];
    T::gemm(n, m, n, T::one(), &x.data, false, &x.data, true, T::zero(), &mut data);
    for i in 0..n {
        for j in 0..i {
            data[i * n + j] = data[j * n + i];
        }
    }
    GramMatrix { n, data }
}

/// Optimization mode selecting which terms make up the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// alpha * content + beta * style.
    Transfer,
    /// alpha * faithfulness + beta * style.
    SrGlobal,
    /// alpha * faithfulness + (beta / K) * masked style.
    SrLocal,
}

/// Per-layer Gram target with its weight, fixed when the target is built.
#[derive(Debug, Clone)]
pub struct StyleTargetLayer<T> {
    pub layer: String,
    pub gram: GramMatrix<T>,
    pub weight: T,
    /// Normalization denominator 4 n^2 m^2 recorded at build time (the loss
    /// itself re-derives m from the current x activation).
    pub norm_denom: T,
}

#[derive(Debug, Clone)]
pub struct StyleTarget<T> {
    pub layers: Vec<StyleTargetLayer<T>>,
}

/// Build per-layer Gram targets of a style image's activations.
pub fn build_style_target<T: Scalar>(
    s_acts: &ActivationStack<T>,
    layer_weights: &[(String, T)],
) -> Result<StyleTarget<T>> {
    let mut layers = Vec::with_capacity(layer_weights.len());
    for (name, w) in layer_weights {
        if !(*w > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "style layer weight for {name} must be positive"
            )));
        }
        let fm = s_acts.get(name)?;
        let g = gram(fm);
        let four = cast::<T>(4.0);
        let n = cast_usize::<T>(fm.channels);
        let m = cast_usize::<T>(fm.spatial());
        layers.push(StyleTargetLayer {
            layer: name.clone(),
            gram: g,
            weight: *w,
            norm_denom: four * n * n * m * m,
        });
    }
    Ok(StyleTarget { layers })
}

/// Shared per-layer style arithmetic:
/// value = w / (4 n^2 m^2) * ||G(F) - T||_F^2,
/// grad  = w / (n^2 m^2) * (G(F) - T) F.
/// `m_norm` is the spatial normalizer (full spatial size, or the masked pixel
/// count in the masked variant).
fn gram_frobenius_term<T: Scalar>(
    weight: T,
    f: &FeatureMap<T>,
    target: &GramMatrix<T>,
    m_norm: T,
) -> Result<(T, FeatureMap<T>)> {
    let n = f.channels;
    if target.n != n {
        return Err(Error::ShapeMismatch(format!(
            "Gram target has {} channels, activation has {n}",
            target.n
        )));
    }
    let g = gram(f);
    let diff: Vec<T> = g.data.iter().zip(&target.data).map(|(&a, &b)| a - b).collect();
    let frob = diff.iter().fold(T::zero(), |acc, &d| acc + d * d);
    let nn = cast_usize::<T>(n);
    let denom = nn * nn * m_norm * m_norm;
    let value = weight / (cast::<T>(4.0) * denom) * frob;

    let mut grad = FeatureMap::zeros(n, f.height, f.width);
    T::gemm(
        n,
        n,
        f.spatial(),
        weight / denom,
        &diff,
        false,
        &f.data,
        false,
        T::zero(),
        &mut grad.data,
    );
    Ok((value, grad))
}

/// Evaluated style term: scalar value, per-layer cotangents for the network
/// backward pass, and per-layer contributions for reporting.
#[derive(Debug, Clone)]
pub struct StyleEval<T> {
    pub value: T,
    pub grads: Vec<(String, FeatureMap<T>)>,
    pub per_layer: Vec<(String, T)>,
    /// (pair index, layer) combinations skipped because a resized mask was
    /// empty at that layer. Always empty for the global loss.
    pub skipped: Vec<(usize, String)>,
}

/// Global style loss over the target's layers, normalized by the current
/// activation's spatial size.
pub fn style_loss<T: Scalar>(
    target: &StyleTarget<T>,
    x_acts: &ActivationStack<T>,
) -> Result<StyleEval<T>> {
    let mut value = T::zero();
    let mut grads = Vec::with_capacity(target.layers.len());
    let mut per_layer = Vec::with_capacity(target.layers.len());
    for tl in &target.layers {
        let fm = x_acts.get(&tl.layer)?;
        let m = cast_usize::<T>(fm.spatial());
        let (v, g) = gram_frobenius_term(tl.weight, fm, &tl.gram, m)?;
        value += v;
        per_layer.push((tl.layer.clone(), v));
        grads.push((tl.layer.clone(), g));
    }
    Ok(StyleEval {
        value,
        grads,
        per_layer,
        skipped: Vec::new(),
    })
}

/// L2 content loss at one layer: 1/2 ||X - C||^2 with gradient X - C.
pub fn content_loss<T: Scalar>(
    c_acts: &ActivationStack<T>,
    x_acts: &ActivationStack<T>,
    layer: &str,
) -> Result<(T, FeatureMap<T>)> {
    let c = c_acts.get(layer)?;
    let x = x_acts.get(layer)?;
    if !c.same_shape(x) {
        return Err(Error::ShapeMismatch(format!(
            "content layer {layer}: {}x{}x{} vs {}x{}x{}",
            c.channels, c.height, c.width, x.channels, x.height, x.width
        )));
    }
    let mut grad = FeatureMap::zeros(x.channels, x.height, x.width);
    let mut value = T::zero();
    let half = cast::<T>(0.5);
    for ((g, &xv), &cv) in grad.data.iter_mut().zip(&x.data).zip(&c.data) {
        let d = xv - cv;
        *g = d;
        value += half * d * d;
    }
    Ok((value, grad))
}

/// Faithfulness term ||A x - c||^2 for A = decimate(blur(.)), as a plain sum
/// of squares; the gradient is 2 A^T (A x - c) through the exact adjoint.
pub fn faithfulness_loss<T: Scalar>(
    x: &Image<T>,
    c: &Image<T>,
    f: usize,
    kernel: &GaussianKernel<T>,
) -> Result<(T, Image<T>)> {
    let down = downsample(x, f, kernel)?;
    if (down.height(), down.width()) != (c.height(), c.width()) {
        return Err(Error::ShapeMismatch(format!(
            "downsampled x is {}x{}, low-resolution input is {}x{}",
            down.height(),
            down.width(),
            c.height(),
            c.width()
        )));
    }
    let residual = Image::from_vec(
        down.height(),
        down.width(),
        down.as_slice()
            .iter()
            .zip(c.as_slice())
            .map(|(&a, &b)| a - b)
            .collect(),
    )?;
    let value = residual
        .as_slice()
        .iter()
        .fold(T::zero(), |acc, &r| acc + r * r);
    let two = T::one() + T::one();
    let grad = downsample_adjoint(&residual, f, kernel, x.height(), x.width())?.map(|v| two * v);
    Ok((value, grad))
}

/// Nearest-neighbor mask resampling (the R operator). Inputs must be binary;
/// nearest-neighbor sampling keeps them binary.
pub fn resize_mask_nn<T: Scalar>(m: &Image<T>, target_h: usize, target_w: usize) -> Result<Image<T>> {
    if !m.is_binary() {
        return Err(Error::NonBinaryMask("resize input".into()));
    }
    Ok(resize_nearest(m, target_h, target_w))
}

/// Per-pair, per-layer cached data for the masked style loss: the target Gram
/// of the masked style activation, the resized x-side mask, and its pixel
/// count.
#[derive(Debug, Clone)]
pub struct MaskedStyleTarget<T> {
    pub pair_count: usize,
    /// One entry per (pair, layer) that survives mask resizing.
    entries: Vec<MaskedEntry<T>>,
    /// Combinations dropped because either resized mask was empty.
    pub skipped: Vec<(usize, String)>,
}

#[derive(Debug, Clone)]
struct MaskedEntry<T> {
    pair: usize,
    layer: String,
    weight: T,
    target: GramMatrix<T>,
    x_mask: FeatureMap<T>, // single-channel resized mask stored as 1 x h x w
    x_count: usize,
}

fn mask_to_plane<T: Scalar>(mask: &Image<T>, h: usize, w: usize) -> (FeatureMap<T>, usize) {
    let resized = resize_nearest(mask, h, w);
    let count = resized.as_slice().iter().filter(|&&v| v == T::one()).count();
    let plane = FeatureMap {
        channels: 1,
        height: h,
        width: w,
        data: resized.as_slice().to_vec(),
    };
    (plane, count)
}

/// Elementwise broadcast multiply of a feature map by a single-channel plane.
fn apply_mask<T: Scalar>(fm: &FeatureMap<T>, plane: &FeatureMap<T>) -> FeatureMap<T> {
    let mut out = fm.clone();
    for c in 0..out.channels {
        let s = out.height * out.width;
        for (v, &m) in out.data[c * s..(c + 1) * s].iter_mut().zip(&plane.data) {
            *v *= m;
        }
    }
    out
}

/// Precompute the masked Gram targets of the style image for every pair and
/// layer; this is the cacheable half of the masked style loss.
pub fn build_masked_style_target<T: Scalar>(
    mask_set: &MaskSet<T>,
    s_acts: &ActivationStack<T>,
    x_acts_shape: &ActivationStack<T>,
    layer_weights: &[(String, T)],
) -> Result<MaskedStyleTarget<T>> {
    if mask_set.is_empty() {
        return Err(Error::EmptyMaskSet);
    }
    for (k, pair) in mask_set.pairs.iter().enumerate() {
        if !pair.x.is_binary() || !pair.s.is_binary() {
            return Err(Error::NonBinaryMask(format!("pair {k}")));
        }
    }
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (k, pair) in mask_set.pairs.iter().enumerate() {
        for (name, w) in layer_weights {
            if !(*w > T::zero()) {
                return Err(Error::InvalidArgument(format!(
                    "style layer weight for {name} must be positive"
                )));
            }
            let s_fm = s_acts.get(name)?;
            let x_fm = x_acts_shape.get(name)?;
            let (s_plane, s_count) = mask_to_plane(&pair.s, s_fm.height, s_fm.width);
            let (x_plane, x_count) = mask_to_plane(&pair.x, x_fm.height, x_fm.width);
            if s_count == 0 || x_count == 0 {
                skipped.push((k, name.clone()));
                continue;
            }
            let masked_s = apply_mask(s_fm, &s_plane);
            entries.push(MaskedEntry {
                pair: k,
                layer: name.clone(),
                weight: *w,
                target: gram(&masked_s),
                x_mask: x_plane,
                x_count,
            });
        }
    }
    Ok(MaskedStyleTarget {
        pair_count: mask_set.len(),
        entries,
        skipped,
    })
}

/// Masked style loss against precomputed targets. Values and gradients are
/// sums over mask pairs; the chain rule re-multiplies each pair's gradient by
/// its resized mask.
pub fn masked_style_loss_with_target<T: Scalar>(
    target: &MaskedStyleTarget<T>,
    x_acts: &ActivationStack<T>,
) -> Result<StyleEval<T>> {
    let mut value = T::zero();
    let mut grads: Vec<(String, FeatureMap<T>)> = Vec::new();
    let mut per_layer: Vec<(String, T)> = Vec::new();
    for entry in &target.entries {
        let x_fm = x_acts.get(&entry.layer)?;
        if (x_fm.height, x_fm.width) != (entry.x_mask.height, entry.x_mask.width) {
            return Err(Error::ShapeMismatch(format!(
                "activation {} changed shape since the masked target was built",
                entry.layer
            )));
        }
        let masked_x = apply_mask(x_fm, &entry.x_mask);
        let (v, g) = gram_frobenius_term(
            entry.weight,
            &masked_x,
            &entry.target,
            cast_usize::<T>(entry.x_count),
        )?;
        let g = apply_mask(&g, &entry.x_mask);
        value += v;
        match per_layer.iter_mut().find(|(n, _)| n == &entry.layer) {
            Some((_, acc)) => *acc += v,
            None => per_layer.push((entry.layer.clone(), v)),
        }
        match grads.iter_mut().find(|(n, _)| n == &entry.layer) {
            Some((_, acc)) => {
                for (a, &b) in acc.data.iter_mut().zip(&g.data) {
                    *a += b;
                }
            }
            None => grads.push((entry.layer.clone(), g)),
        }
        let _ = entry.pair;
    }
    Ok(StyleEval {
        value,
        grads,
        per_layer,
        skipped: target.skipped.clone(),
    })
}

/// One-shot masked style loss (builds the targets, then evaluates).
pub fn masked_style_loss<T: Scalar>(
    mask_set: &MaskSet<T>,
    s_acts: &ActivationStack<T>,
    x_acts: &ActivationStack<T>,
    layer_weights: &[(String, T)],
) -> Result<StyleEval<T>> {
    let target = build_masked_style_target(mask_set, s_acts, x_acts, layer_weights)?;
    masked_style_loss_with_target(&target, x_acts)
}

/// Scalar term values entering the total objective.
#[derive(Debug, Clone, Default)]
pub struct TermValues<T> {
    pub faithfulness: Option<T>,
    pub style: Option<T>,
    pub content: Option<T>,
    /// Mask pair count K (sr_local mode).
    pub mask_count: Option<usize>,
    pub per_layer_style: Vec<(String, T)>,
}

/// All scalar components of one objective evaluation.
#[derive(Debug, Clone)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub faithfulness: Option<T>,
    pub style: Option<T>,
    pub content: Option<T>,
    pub mask_count: Option<usize>,
    pub per_layer_style: Vec<(String, T)>,
}

/// Combine term values into the mode's total:
/// transfer = alpha*content + beta*style, sr_global = alpha*faithfulness +
/// beta*style, sr_local = alpha*faithfulness + (beta/K)*style.
pub fn assemble_objective_value<T: Scalar>(
    alpha: T,
    beta: T,
    mode: Mode,
    terms: TermValues<T>,
) -> Result<LossBreakdown<T>> {
    let need = |v: Option<T>, what: &str| {
        v.ok_or_else(|| Error::InvalidArgument(format!("{what} term required for {mode:?}")))
    };
    let total = match mode {
        Mode::Transfer => {
            alpha * need(terms.content, "content")? + beta * need(terms.style, "style")?
        }
        Mode::SrGlobal => {
            alpha * need(terms.faithfulness, "faithfulness")? + beta * need(terms.style, "style")?
        }
        Mode::SrLocal => {
            let k = terms
                .mask_count
                .ok_or_else(|| Error::InvalidArgument("mask count required for SrLocal".into()))?;
            if k == 0 {
                return Err(Error::EmptyMaskSet);
            }
            alpha * need(terms.faithfulness, "faithfulness")?
                + beta / cast_usize::<T>(k) * need(terms.style, "style")?
        }
    };
    Ok(LossBreakdown {
        total,
        faithfulness: terms.faithfulness,
        style: terms.style,
        content: terms.content,
        mask_count: terms.mask_count,
        per_layer_style: terms.per_layer_style,
    })
}
