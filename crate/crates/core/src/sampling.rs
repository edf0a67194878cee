//! Image-formation operators: Gaussian blur, decimation, their exact adjoint,
//! and bicubic upsampling.
//!
//! Blur uses symmetric reflection without edge repeat (index -1 maps to 1), and
//! the adjoint mirrors that boundary handling exactly so that
//! `<Ax, y> == <x, At y>` holds for the blur-downsample operator A.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::{cast, Scalar};

/// Normalized 2-D Gaussian tap grid.
#[derive(Debug, Clone)]
pub struct GaussianKernel<T> {
    sigma: T,
    radius: usize,
    taps: Vec<T>, // (2*radius+1)^2, row-major, sums to 1
}

impl<T: Scalar> GaussianKernel<T> {
    /// Gaussian with radius ceil(3*sigma). Rejects non-positive sigma.
    pub fn new(sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "kernel sigma must be positive, got {sigma}"
            )));
        }
        let radius = sigma.to_f64().unwrap().mul_add(3.0, 0.0).ceil() as usize;
        let side = 2 * radius + 1;
        let inv_two_sigma_sq = (T::one() + T::one()) * sigma * sigma;
        let mut taps = vec![T::zero(); side * side];
        let mut sum = T::zero();
        for dy in 0..side {
            for dx in 0..side {
                let fy = cast::<T>(dy as f64 - radius as f64);
                let fx = cast::<T>(dx as f64 - radius as f64);
                let v = (-(fy * fy + fx * fx) / inv_two_sigma_sq).exp();
                taps[dy * side + dx] = v;
                sum += v;
            }
        }
        for t in taps.iter_mut() {
            *t /= sum;
        }
        Ok(GaussianKernel { sigma, radius, taps })
    }

    /// Single-tap identity kernel (the sigma -> 0 limit).
    pub fn delta() -> Self {
        GaussianKernel {
            sigma: T::zero(),
            radius: 0,
            taps: vec![T::one()],
        }
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn taps(&self) -> &[T] {
        &self.taps
    }
}

/// Mirror an index into [0, n) without repeating the edge sample
/// (..., 2, 1 | 0, 1, ..., n-1 | n-2, n-3, ...).
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Per-axis lookup of mirrored indices for offsets -radius..n+radius.
fn mirror_table(n: usize, radius: usize) -> Vec<usize> {
    (0..n + 2 * radius)
        .map(|i| mirror_index(i as isize - radius as isize, n))
        .collect()
}

/// 2-D correlation with the kernel under mirrored boundary handling.
/// Output size equals input size.
pub fn blur<T: Scalar>(img: &Image<T>, kernel: &GaussianKernel<T>) -> Image<T> {
    let (h, w) = (img.height(), img.width());
    let r = kernel.radius;
    let side = 2 * r + 1;
    let my = mirror_table(h, r);
    let mx = mirror_table(w, r);
    let mut out = Image::new(h, w);
    for y in 0..h {
        let out_row = out.row_mut(y);
        for (x, o) in out_row.iter_mut().enumerate() {
            let mut acc = T::zero();
            for dy in 0..side {
                let src_row = img.row(my[y + dy]);
                let tap_row = &kernel.taps[dy * side..(dy + 1) * side];
                for dx in 0..side {
                    acc += tap_row[dx] * src_row[mx[x + dx]];
                }
            }
            *o = acc;
        }
    }
    out
}

/// Blur then keep pixels at positions (f*i, f*j). Dimensions must divide by f.
pub fn downsample<T: Scalar>(img: &Image<T>, f: usize, kernel: &GaussianKernel<T>) -> Result<Image<T>> {
    if f < 1 {
        return Err(Error::InvalidArgument("downsampling factor must be >= 1".into()));
    }
    if !img.height().is_multiple_of(f) || !img.width().is_multiple_of(f) {
        return Err(Error::ShapeMismatch(format!(
            "image {}x{} not divisible by factor {f}",
            img.height(),
            img.width()
        )));
    }
    let blurred = blur(img, kernel);
    let (oh, ow) = (img.height() / f, img.width() / f);
    Ok(Image::from_fn(oh, ow, |y, x| blurred.at(y * f, x * f)))
}

/// Exact adjoint of `downsample`: zero-upsampling followed by the transpose of
/// the mirrored-boundary correlation (a scatter of each tap back to the source
/// pixel it read).
pub fn downsample_adjoint<T: Scalar>(
    residual: &Image<T>,
    f: usize,
    kernel: &GaussianKernel<T>,
    hr_h: usize,
    hr_w: usize,
) -> Result<Image<T>> {
    if f < 1 {
        return Err(Error::InvalidArgument("downsampling factor must be >= 1".into()));
    }
    if residual.height() * f != hr_h || residual.width() * f != hr_w {
        return Err(Error::ShapeMismatch(format!(
            "residual {}x{} does not match {hr_h}x{hr_w} at factor {f}",
            residual.height(),
            residual.width()
        )));
    }
    let r = kernel.radius;
    let side = 2 * r + 1;
    let my = mirror_table(hr_h, r);
    let mx = mirror_table(hr_w, r);
    let mut out = Image::new(hr_h, hr_w);
    for ly in 0..residual.height() {
        for lx in 0..residual.width() {
            let v = residual.at(ly, lx);
            if v == T::zero() {
                continue;
            }
            let (y, x) = (ly * f, lx * f);
            for dy in 0..side {
                let ty = my[y + dy];
                let tap_row = &kernel.taps[dy * side..(dy + 1) * side];
                for dx in 0..side {
                    let tx = mx[x + dx];
                    let acc = out.at(ty, tx) + tap_row[dx] * v;
                    out.set(ty, tx, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Catmull-Rom weights for fractional offset t in [0, 1).
#[inline]
fn catmull_rom<T: Scalar>(t: T) -> [T; 4] {
    let half = cast::<T>(0.5);
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -half * t3 + t2 - half * t,
        cast::<T>(1.5) * t3 - cast::<T>(2.5) * t2 + T::one(),
        -cast::<T>(1.5) * t3 + (T::one() + T::one()) * t2 + half * t,
        half * t3 - half * t2,
    ]
}

/// Bicubic (Catmull-Rom) upsampling by an integer factor on the
/// align-corners-false sample grid, with clamped border taps.
pub fn upsample_bicubic<T: Scalar>(img: &Image<T>, f: usize) -> Result<Image<T>> {
    if f < 1 {
        return Err(Error::InvalidArgument("upsampling factor must be >= 1".into()));
    }
    if f == 1 {
        return Ok(img.clone());
    }
    let (h, w) = (img.height(), img.width());
    let (oh, ow) = (h * f, w * f);
    // per-axis tap indices and weights
    let axis = |n: usize, on: usize| -> Vec<([usize; 4], [T; 4])> {
        (0..on)
            .map(|i| {
                let src = (i as f64 + 0.5) / f as f64 - 0.5;
                let i0 = src.floor();
                let t = cast::<T>(src - i0);
                let idx = std::array::from_fn(|k| {
                    (i0 as isize + k as isize - 1).clamp(0, n as isize - 1) as usize
                });
                (idx, catmull_rom(t))
            })
            .collect()
    };
    let ys = axis(h, oh);
    let xs = axis(w, ow);
    Ok(Image::from_fn(oh, ow, |y, x| {
        let (yi, yw) = &ys[y];
        let (xi, xw) = &xs[x];
        let mut acc = T::zero();
        for a in 0..4 {
            let row = img.row(yi[a]);
            let mut racc = T::zero();
            for b in 0..4 {
                racc += xw[b] * row[xi[b]];
            }
            acc += yw[a] * racc;
        }
        acc
    }))
}
