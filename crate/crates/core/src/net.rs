//! Fixed VGG-19-style convolutional trunk: forward evaluation and analytic
//! backward passes from injected per-layer cotangents to an input-pixel
//! gradient.
//!
//! The layer sequence is the 16-conv / 5-pool trunk (conv1_1 .. pool5) with a
//! ReLU fused after every convolution, so a stored `conv*` activation is the
//! post-ReLU map. Convolutions are 3x3, stride 1, zero padding 1; pooling is
//! 2x2 stride 2 (average by default, max behind a switch). Weights are loaded
//! from the `GMW1` file format or seeded at random; they are never trained.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng64;
use crate::scalar::{cast, Scalar};

/// One layer of the trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// 3x3 convolution, stride 1, zero padding 1, fused ReLU.
    Conv { in_c: usize, out_c: usize },
    /// 2x2 pooling with stride 2.
    Pool,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerSpec {
    pub name: &'static str,
    pub kind: LayerKind,
}

const fn conv(name: &'static str, in_c: usize, out_c: usize) -> LayerSpec {
    LayerSpec {
        name,
        kind: LayerKind::Conv { in_c, out_c },
    }
}

const fn pool(name: &'static str) -> LayerSpec {
    LayerSpec {
        name,
        kind: LayerKind::Pool,
    }
}

/// The full trunk in evaluation order.
pub const LAYERS: [LayerSpec; 21] = [
    conv("conv1_1", 3, 64),
    conv("conv1_2", 64, 64),
    pool("pool1"),
    conv("conv2_1", 64, 128),
    conv("conv2_2", 128, 128),
    pool("pool2"),
    conv("conv3_1", 128, 256),
    conv("conv3_2", 256, 256),
    conv("conv3_3", 256, 256),
    conv("conv3_4", 256, 256),
    pool("pool3"),
    conv("conv4_1", 256, 512),
    conv("conv4_2", 512, 512),
    conv("conv4_3", 512, 512),
    conv("conv4_4", 512, 512),
    pool("pool4"),
    conv("conv5_1", 512, 512),
    conv("conv5_2", 512, 512),
    conv("conv5_3", 512, 512),
    conv("conv5_4", 512, 512),
    pool("pool5"),
];

/// Index of a layer by name.
pub fn layer_index(name: &str) -> Result<usize> {
    LAYERS
        .iter()
        .position(|l| l.name == name)
        .ok_or_else(|| Error::UnknownLayer(name.to_string()))
}

/// Check that an input of the given size can be evaluated down to `deepest`
/// without pooling any dimension to zero (fail-fast validation for callers).
pub fn supports_depth(height: usize, width: usize, deepest: &str) -> Result<()> {
    let idx = layer_index(deepest)?;
    let (mut h, mut w) = (height, width);
    for layer in LAYERS.iter().take(idx + 1) {
        if matches!(layer.kind, LayerKind::Pool) {
            h /= 2;
            w /= 2;
            if h == 0 || w == 0 {
                return Err(Error::ImageTooSmall {
                    height,
                    width,
                    layer: layer.name.into(),
                });
            }
        }
    }
    Ok(())
}

/// Pooling variant used by every pool layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolKind {
    #[default]
    Average,
    Max,
}

/// Per-layer activation tensor: channels x height x width, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "feature data length {} != {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[T] {
        &self.data[c * self.spatial()..(c + 1) * self.spatial()]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let s = self.height * self.width;
        &mut self.data[c * s..(c + 1) * s]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }
}

/// All activations of one forward pass, up to the deepest requested layer.
#[derive(Debug, Clone)]
pub struct ActivationStack<T> {
    /// Preprocessed 3-channel input.
    pub input: FeatureMap<T>,
    /// maps[i] is the output of LAYERS[i]; length = deepest index + 1.
    pub maps: Vec<FeatureMap<T>>,
}

impl<T: Scalar> ActivationStack<T> {
    pub fn get(&self, name: &str) -> Result<&FeatureMap<T>> {
        let idx = layer_index(name)?;
        self.maps.get(idx).ok_or_else(|| {
            Error::UnknownLayer(format!("{name} not evaluated in this forward pass"))
        })
    }
}

/// Fixed network: conv kernels/biases plus input preprocessing constants.
///
/// Kernel values are kept at f32 precision regardless of the working scalar,
/// matching the on-disk format bit for bit.
#[derive(Debug, Clone)]
pub struct Network<T> {
    /// Per conv layer, in trunk order: out_c x (in_c*9) row-major.
    kernels: Vec<Vec<T>>,
    /// Per conv layer: out_c biases.
    biases: Vec<Vec<T>>,
    /// Per-channel mean offsets in image units ([0,1] range).
    pub means: [T; 3],
    /// Multiplier applied after mean subtraction.
    pub scale: T,
    /// Pooling variant for all pool layers.
    pub pooling: PoolKind,
}

const WEIGHTS_MAGIC: &[u8; 4] = b"GMW1";
const WEIGHTS_VERSION: u32 = 1;

fn conv_ordinal(layer_idx: usize) -> usize {
    LAYERS[..layer_idx]
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::Conv { .. }))
        .count()
}

impl<T: Scalar> Network<T> {
    /// Deterministic random network: kernels uniform with variance 1/(in_c*9),
    /// zero biases, means 0.5 and unit scale.
    pub fn random(seed: u64) -> Self {
        let root = Rng64::new(seed);
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        for (i, layer) in LAYERS.iter().enumerate() {
            if let LayerKind::Conv { in_c, out_c } = layer.kind {
                let mut rng = root.fork(i as u64);
                let a = (3.0 / (in_c as f64 * 9.0)).sqrt();
                let k: Vec<T> = (0..out_c * in_c * 9)
                    .map(|_| cast(rng.next_range(-a, a) as f32 as f64))
                    .collect();
                kernels.push(k);
                biases.push(vec![T::zero(); out_c]);
            }
        }
        Network {
            kernels,
            biases,
            means: [cast(0.5); 3],
            scale: T::one(),
            pooling: PoolKind::Average,
        }
    }

    pub fn kernel(&self, layer_idx: usize) -> &[T] {
        &self.kernels[conv_ordinal(layer_idx)]
    }

    pub fn bias(&self, layer_idx: usize) -> &[T] {
        &self.biases[conv_ordinal(layer_idx)]
    }

    /// Test hook: replace one conv layer's parameters (shape-checked).
    pub fn set_conv(&mut self, name: &str, kernel: Vec<T>, bias: Vec<T>) -> Result<()> {
        let idx = layer_index(name)?;
        let LayerKind::Conv { in_c, out_c } = LAYERS[idx].kind else {
            return Err(Error::InvalidArgument(format!("{name} is not a conv layer")));
        };
        if kernel.len() != out_c * in_c * 9 || bias.len() != out_c {
            return Err(Error::ShapeMismatch(format!("bad parameter size for {name}")));
        }
        let ord = conv_ordinal(idx);
        self.kernels[ord] = kernel;
        self.biases[ord] = bias;
        Ok(())
    }

    /// Serialize to the GMW1 format (little-endian f32 payload).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.kernels.len() as u32).to_le_bytes());
        for (i, layer) in LAYERS.iter().enumerate() {
            let LayerKind::Conv { in_c, out_c } = layer.kind else {
                continue;
            };
            let ord = conv_ordinal(i);
            buf.extend_from_slice(&(layer.name.len() as u16).to_le_bytes());
            buf.extend_from_slice(layer.name.as_bytes());
            for dim in [out_c as u32, in_c as u32, 3u32, 3u32] {
                buf.extend_from_slice(&dim.to_le_bytes());
            }
            for v in &self.kernels[ord] {
                buf.extend_from_slice(&(v.to_f64().unwrap() as f32).to_le_bytes());
            }
            for v in &self.biases[ord] {
                buf.extend_from_slice(&(v.to_f64().unwrap() as f32).to_le_bytes());
            }
        }
        for m in &self.means {
            buf.extend_from_slice(&(m.to_f64().unwrap() as f32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.scale.to_f64().unwrap() as f32).to_le_bytes());
        File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    /// Load and shape-check a GMW1 file. Every conv layer of the trunk must be
    /// present, in order, with 3x3 kernels and the expected channel counts.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
            layer: None,
        };
        if cur.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::WeightFormat {
                layer: None,
                detail: "bad magic, expected GMW1".into(),
            });
        }
        let version = cur.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::WeightFormat {
                layer: None,
                detail: format!("unsupported version {version}"),
            });
        }
        let count = cur.u32()? as usize;
        let conv_layers: Vec<&LayerSpec> = LAYERS
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv { .. }))
            .collect();
        if count != conv_layers.len() {
            return Err(Error::WeightFormat {
                layer: None,
                detail: format!("expected {} conv layers, file declares {count}", conv_layers.len()),
            });
        }
        let mut kernels = Vec::with_capacity(count);
        let mut biases = Vec::with_capacity(count);
        for spec in conv_layers {
            let LayerKind::Conv { in_c, out_c } = spec.kind else {
                unreachable!()
            };
            let name_len = cur.u16()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec()).map_err(|_| {
                Error::WeightFormat {
                    layer: Some(spec.name.into()),
                    detail: "non-ASCII layer name".into(),
                }
            })?;
            cur.layer = Some(spec.name);
            if name != spec.name {
                return Err(Error::WeightFormat {
                    layer: Some(spec.name.into()),
                    detail: format!("expected layer {}, found {name}", spec.name),
                });
            }
            let dims = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?];
            let want = [out_c as u32, in_c as u32, 3, 3];
            if dims != want {
                return Err(Error::WeightFormat {
                    layer: Some(spec.name.into()),
                    detail: format!("shape {dims:?} does not match expected {want:?}"),
                });
            }
            let mut read_values = |n: usize| -> Result<Vec<T>> {
                (0..n)
                    .map(|_| {
                        let v = cur.f32()?;
                        if !v.is_finite() {
                            return Err(Error::WeightFormat {
                                layer: Some(spec.name.into()),
                                detail: format!("non-finite value {v}"),
                            });
                        }
                        Ok(cast(v as f64))
                    })
                    .collect()
            };
            let k = read_values(out_c * in_c * 9)?;
            let b = read_values(out_c)?;
            kernels.push(k);
            biases.push(b);
        }
        cur.layer = None;
        let means = [
            cast(cur.f32()? as f64),
            cast(cur.f32()? as f64),
            cast(cur.f32()? as f64),
        ];
        let scale = cast(cur.f32()? as f64);
        Ok(Network {
            kernels,
            biases,
            means,
            scale,
            pooling: PoolKind::Average,
        })
    }

    /// Replicate the gray channel to 3 channels, subtract the per-channel
    /// mean, and apply the scale.
    pub fn prepare_input(&self, img: &Image<T>) -> FeatureMap<T> {
        let (h, w) = (img.height(), img.width());
        let mut fm = FeatureMap::zeros(3, h, w);
        for c in 0..3 {
            let mean = self.means[c];
            let chan = fm.channel_mut(c);
            for (dst, &src) in chan.iter_mut().zip(img.as_slice()) {
                *dst = (src - mean) * self.scale;
            }
        }
        fm
    }

    /// Backward of `prepare_input`: sum the replicated channel gradients and
    /// rescale.
    fn input_gradient(&self, g: &FeatureMap<T>) -> Image<T> {
        let mut out = Image::new(g.height, g.width);
        for c in 0..3 {
            let chan = g.channel(c);
            for (dst, &src) in out.as_mut_slice().iter_mut().zip(chan) {
                *dst += src * self.scale;
            }
        }
        out
    }

    /// Check that the trunk up to `deepest_idx` never pools a dimension to
    /// zero; returns the per-layer spatial sizes.
    fn plan_sizes(h: usize, w: usize, deepest_idx: usize) -> Result<Vec<(usize, usize)>> {
        let (mut ch, mut cw) = (h, w);
        let mut sizes = Vec::with_capacity(deepest_idx + 1);
        for layer in LAYERS.iter().take(deepest_idx + 1) {
            if matches!(layer.kind, LayerKind::Pool) {
                ch /= 2;
                cw /= 2;
                if ch == 0 || cw == 0 {
                    return Err(Error::ImageTooSmall {
                        height: h,
                        width: w,
                        layer: layer.name.into(),
                    });
                }
            }
            sizes.push((ch, cw));
        }
        Ok(sizes)
    }

    /// Run the trunk up to and including `deepest`, retaining every activation.
    pub fn forward(&self, img: &Image<T>, deepest: &str) -> Result<ActivationStack<T>> {
        let deepest_idx = layer_index(deepest)?;
        Self::plan_sizes(img.height(), img.width(), deepest_idx)?;
        let input = self.prepare_input(img);
        let mut maps: Vec<FeatureMap<T>> = Vec::with_capacity(deepest_idx + 1);
        let mut cols: Vec<T> = Vec::new();
        let mut padded: Vec<T> = Vec::new();
        for (i, layer) in LAYERS.iter().enumerate().take(deepest_idx + 1) {
            let src = if i == 0 { &input } else { &maps[i - 1] };
            let out = match layer.kind {
                LayerKind::Conv { in_c, out_c } => {
                    debug_assert_eq!(src.channels, in_c);
                    conv_forward(
                        &self.kernels[conv_ordinal(i)],
                        &self.biases[conv_ordinal(i)],
                        src,
                        out_c,
                        &mut cols,
                        &mut padded,
                    )
                }
                LayerKind::Pool => pool_forward(src, self.pooling),
            };
            maps.push(out);
        }
        Ok(ActivationStack { input, maps })
    }

    /// Backpropagate injected per-layer cotangents to a pixel gradient:
    /// the gradient of `sum_l <grad_l, X^l>` with respect to the input image.
    pub fn backward(
        &self,
        acts: &ActivationStack<T>,
        layer_grads: &[(String, FeatureMap<T>)],
    ) -> Result<Image<T>> {
        self.backward_opts(acts, layer_grads, true)
    }

    /// `flip_kernels: false` deliberately breaks the conv backward (used by the
    /// gradient-check harness to prove the harness catches errors).
    pub fn backward_opts(
        &self,
        acts: &ActivationStack<T>,
        layer_grads: &[(String, FeatureMap<T>)],
        flip_kernels: bool,
    ) -> Result<Image<T>> {
        if acts.maps.is_empty() {
            return Err(Error::ShapeMismatch("empty activation stack".into()));
        }
        let mut injected: Vec<Option<&FeatureMap<T>>> = vec![None; acts.maps.len()];
        for (name, g) in layer_grads {
            let idx = layer_index(name)?;
            let act = acts.maps.get(idx).ok_or_else(|| {
                Error::UnknownLayer(format!("{name} not evaluated in this forward pass"))
            })?;
            if !g.same_shape(act) {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for {name} is {}x{}x{}, activation is {}x{}x{}",
                    g.channels, g.height, g.width, act.channels, act.height, act.width
                )));
            }
            injected[idx] = Some(g);
        }
        let deepest = injected
            .iter()
            .rposition(|g| g.is_some())
            .unwrap_or(0);
        let mut g = FeatureMap::zeros(
            acts.maps[deepest].channels,
            acts.maps[deepest].height,
            acts.maps[deepest].width,
        );
        let mut cols: Vec<T> = Vec::new();
        for i in (0..=deepest).rev() {
            if let Some(inj) = injected[i] {
                for (dst, &src) in g.data.iter_mut().zip(&inj.data) {
                    *dst += src;
                }
            }
            let src = if i == 0 { &acts.input } else { &acts.maps[i - 1] };
            g = match LAYERS[i].kind {
                LayerKind::Conv { in_c, out_c } => {
                    debug_assert_eq!(out_c, g.channels);
                    conv_backward_input(
                        &self.kernels[conv_ordinal(i)],
                        &acts.maps[i],
                        &g,
                        in_c,
                        flip_kernels,
                        &mut cols,
                    )
                }
                LayerKind::Pool => pool_backward(src, &g, self.pooling),
            };
        }
        Ok(self.input_gradient(&g))
    }
}

/// Byte cursor for the weight file with layer context for error messages.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    layer: Option<&'static str>,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self.bytes.get(self.pos..end).ok_or_else(|| Error::WeightFormat {
            layer: self.layer.map(String::from),
            detail: "truncated file".into(),
        })?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// im2col + GEMM convolution with fused bias and ReLU.
fn conv_forward<T: Scalar>(
    kernel: &[T],
    bias: &[T],
    input: &FeatureMap<T>,
    out_c: usize,
    cols: &mut Vec<T>,
    padded: &mut Vec<T>,
) -> FeatureMap<T> {
    let (in_c, h, w) = (input.channels, input.height, input.width);
    let (ph, pw) = (h + 2, w + 2);
    let n = h * w;
    let k = in_c * 9;

    padded.clear();
    padded.resize(in_c * ph * pw, T::zero());
    for c in 0..in_c {
        let src = input.channel(c);
        for y in 0..h {
            let dst = &mut padded[c * ph * pw + (y + 1) * pw + 1..c * ph * pw + (y + 1) * pw + 1 + w];
            dst.copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }

    cols.clear();
    cols.resize(k * n, T::zero());
    for c in 0..in_c {
        let map = &padded[c * ph * pw..(c + 1) * ph * pw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 3 + ky) * 3 + kx) * n..((c * 3 + ky) * 3 + kx + 1) * n];
                for y in 0..h {
                    row[y * w..(y + 1) * w]
                        .copy_from_slice(&map[(y + ky) * pw + kx..(y + ky) * pw + kx + w]);
                }
            }
        }
    }

    let mut out = FeatureMap::zeros(out_c, h, w);
    for (o, &b) in bias.iter().enumerate() {
        out.channel_mut(o).fill(b);
    }
    T::gemm(out_c, k, n, T::one(), kernel, false, cols, false, T::one(), &mut out.data);
    for v in out.data.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

/// Gradient of the conv (with fused ReLU) with respect to its input.
fn conv_backward_input<T: Scalar>(
    kernel: &[T],
    output_act: &FeatureMap<T>,
    grad_out: &FeatureMap<T>,
    in_c: usize,
    flip_kernels: bool,
    cols: &mut Vec<T>,
) -> FeatureMap<T> {
    let (out_c, h, w) = (grad_out.channels, grad_out.height, grad_out.width);
    let n = h * w;
    let k = in_c * 9;

    // ReLU backward: zero wherever the stored activation is zero.
    let masked: Vec<T> = grad_out
        .data
        .iter()
        .zip(&output_act.data)
        .map(|(&g, &a)| if a > T::zero() { g } else { T::zero() })
        .collect();

    // dCols = W^T . dOut, then scatter the 9 shifted planes back (col2im).
    cols.clear();
    cols.resize(k * n, T::zero());
    T::gemm(k, out_c, n, T::one(), kernel, true, &masked, false, T::zero(), cols);

    let (ph, pw) = (h + 2, w + 2);
    let mut padded = vec![T::zero(); in_c * ph * pw];
    for c in 0..in_c {
        let map = &mut padded[c * ph * pw..(c + 1) * ph * pw];
        for ky in 0..3 {
            for kx in 0..3 {
                // the forward col row (c,ky,kx) was read from padded offset
                // (y+ky, x+kx); its transpose scatters back to the same spot.
                // the sabotage path scatters to the mirrored tap instead.
                let (sy, sx) = if flip_kernels { (ky, kx) } else { (2 - ky, 2 - kx) };
                let row = &cols[((c * 3 + ky) * 3 + kx) * n..((c * 3 + ky) * 3 + kx + 1) * n];
                for y in 0..h {
                    let dst = &mut map[(y + sy) * pw + sx..(y + sy) * pw + sx + w];
                    for (d, &s) in dst.iter_mut().zip(&row[y * w..(y + 1) * w]) {
                        *d += s;
                    }
                }
            }
        }
    }

    let mut out = FeatureMap::zeros(in_c, h, w);
    for c in 0..in_c {
        let map = &padded[c * ph * pw..(c + 1) * ph * pw];
        let chan = out.channel_mut(c);
        for y in 0..h {
            chan[y * w..(y + 1) * w].copy_from_slice(&map[(y + 1) * pw + 1..(y + 1) * pw + 1 + w]);
        }
    }
    out
}

fn pool_forward<T: Scalar>(input: &FeatureMap<T>, kind: PoolKind) -> FeatureMap<T> {
    let (c, h, w) = (input.channels, input.height / 2, input.width / 2);
    let quarter = cast::<T>(0.25);
    let mut out = FeatureMap::zeros(c, h, w);
    for ch in 0..c {
        let src = input.channel(ch);
        let dst = out.channel_mut(ch);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * input.width + 2 * x;
                let cell = [src[i], src[i + 1], src[i + input.width], src[i + input.width + 1]];
                dst[y * w + x] = match kind {
                    PoolKind::Average => (cell[0] + cell[1] + cell[2] + cell[3]) * quarter,
                    PoolKind::Max => cell.into_iter().fold(T::neg_infinity(), T::max),
                };
            }
        }
    }
    out
}

fn pool_backward<T: Scalar>(
    input_act: &FeatureMap<T>,
    grad_out: &FeatureMap<T>,
    kind: PoolKind,
) -> FeatureMap<T> {
    let quarter = cast::<T>(0.25);
    let mut out = FeatureMap::zeros(input_act.channels, input_act.height, input_act.width);
    let w_in = input_act.width;
    for c in 0..grad_out.channels {
        let src_act = input_act.channel(c);
        let g = grad_out.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..grad_out.height {
            for x in 0..grad_out.width {
                let gv = g[y * grad_out.width + x];
                let i = 2 * y * w_in + 2 * x;
                let idx = [i, i + 1, i + w_in, i + w_in + 1];
                match kind {
                    PoolKind::Average => {
                        for j in idx {
                            dst[j] += gv * quarter;
                        }
                    }
                    PoolKind::Max => {
                        // route to the first maximum of the stored input window
                        let mut best = idx[0];
                        for &j in &idx[1..] {
                            if src_act[j] > src_act[best] {
                                best = j;
                            }
                        }
                        dst[best] += gv;
                    }
                }
            }
        }
    }
    out
}
