//! Mask-pair construction: manual masks loaded from files, and automatic
//! pairs derived from a low-resolution nearest-neighbor field by cell pooling
//! and dilation.
//!
//! A pair (m_x, m_s) selects a region of the output image and the example
//! region whose texture statistics it should take on. Masks are strictly
//! binary; overlap between pairs is allowed and the x-side union must cover
//! the whole output.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::image::{load_image, resize_nearest, Image};
use crate::patchmatch::NnField;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskProvenance {
    Manual,
    PatchMatch,
}

#[derive(Debug, Clone)]
pub struct MaskPair<T> {
    /// Binary mask at output resolution.
    pub x: Image<T>,
    /// Binary mask at style-image resolution.
    pub s: Image<T>,
}

#[derive(Debug, Clone)]
pub struct MaskSet<T> {
    pub pairs: Vec<MaskPair<T>>,
    pub provenance: MaskProvenance,
}

impl<T: Scalar> MaskSet<T> {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// A single pair of all-ones masks (the reduction to the global loss).
    pub fn full(out_h: usize, out_w: usize, style_h: usize, style_w: usize) -> Self {
        MaskSet {
            pairs: vec![MaskPair {
                x: Image::constant(out_h, out_w, T::one()),
                s: Image::constant(style_h, style_w, T::one()),
            }],
            provenance: MaskProvenance::Manual,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::EmptyMaskSet);
        }
        for (k, pair) in self.pairs.iter().enumerate() {
            if !pair.x.is_binary() || !pair.s.is_binary() {
                return Err(Error::NonBinaryMask(format!("pair {k}")));
            }
        }
        let (h, w) = (self.pairs[0].x.height(), self.pairs[0].x.width());
        let (sh, sw) = (self.pairs[0].s.height(), self.pairs[0].s.width());
        for pair in &self.pairs {
            if (pair.x.height(), pair.x.width()) != (h, w)
                || (pair.s.height(), pair.s.width()) != (sh, sw)
            {
                return Err(Error::ShapeMismatch("mask pair dimensions differ".into()));
            }
        }
        let uncovered = (0..h * w)
            .filter(|&i| self.pairs.iter().all(|p| p.x.as_slice()[i] == T::zero()))
            .count();
        if uncovered > 0 {
            return Err(Error::MaskCoverage { uncovered });
        }
        Ok(())
    }
}

/// Binary dilation by a square structuring element of the given radius,
/// separable into a horizontal and a vertical max pass.
pub fn dilate<T: Scalar>(mask: &Image<T>, radius: usize) -> Image<T> {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = (mask.height(), mask.width());
    let r = radius;
    let mut horiz = Image::new(h, w);
    for y in 0..h {
        let row = mask.row(y);
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            let v = if row[lo..hi].iter().any(|&m| m == T::one()) {
                T::one()
            } else {
                T::zero()
            };
            horiz.set(y, x, v);
        }
    }
    let mut out = Image::new(h, w);
    for x in 0..w {
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            let v = if (lo..hi).any(|yy| horiz.at(yy, x) == T::one()) {
                T::one()
            } else {
                T::zero()
            };
            out.set(y, x, v);
        }
    }
    out
}

fn binarize<T: Scalar>(img: &Image<T>) -> Image<T> {
    let half = T::from_f64(0.5).unwrap();
    img.map(|v| if v > half { T::one() } else { T::zero() })
}

/// Load paired manual masks: threshold at 0.5, nearest-neighbor resize to the
/// declared resolutions, dilate, and verify output coverage.
pub fn load_manual_masks<T: Scalar>(
    x_paths: &[PathBuf],
    s_paths: &[PathBuf],
    out_h: usize,
    out_w: usize,
    style_h: usize,
    style_w: usize,
    dilation_radius: usize,
) -> Result<MaskSet<T>> {
    if x_paths.is_empty() || x_paths.len() != s_paths.len() {
        return Err(Error::InvalidArgument(format!(
            "need equal, nonzero mask list lengths, got {} and {}",
            x_paths.len(),
            s_paths.len()
        )));
    }
    let load_side = |path: &PathBuf, h: usize, w: usize| -> Result<Image<T>> {
        let img = load_image::<T>(path)?;
        let mut m = binarize(&img);
        if (m.height(), m.width()) != (h, w) {
            m = resize_nearest(&m, h, w);
        }
        Ok(dilate(&m, dilation_radius))
    };
    let mut pairs = Vec::with_capacity(x_paths.len());
    for (xp, sp) in x_paths.iter().zip(s_paths) {
        pairs.push(MaskPair {
            x: load_side(xp, out_h, out_w)?,
            s: load_side(sp, style_h, style_w)?,
        });
    }
    let set = MaskSet {
        pairs,
        provenance: MaskProvenance::Manual,
    };
    set.validate()?;
    Ok(set)
}

/// Bookkeeping from automatic mask generation.
#[derive(Debug, Clone, Default)]
pub struct MaskGenReport {
    /// Cells that contained no NNF positions and borrowed a neighbor's m_s
    /// (cell index, donor cell index).
    pub borrowed_cells: Vec<(usize, usize)>,
}

/// Build (m_x, m_s) pairs from a low-resolution NNF: the output is tiled by
/// square cells (one pair per cell, the last row/column may be smaller); every
/// NNF position whose f-scaled location lands in a cell stamps a square of 1s
/// at its f-scaled match into that cell's style mask, which is then dilated.
/// Cells without any NNF position borrow the nearest stamped cell's mask.
#[allow(clippy::too_many_arguments)]
pub fn generate_patchmatch_masks<T: Scalar>(
    nnf: &NnField<T>,
    f: usize,
    out_h: usize,
    out_w: usize,
    style_h: usize,
    style_w: usize,
    cell_size: usize,
    stamp_size: usize,
    dilation_radius: usize,
) -> Result<(MaskSet<T>, MaskGenReport)> {
    if cell_size < 1 || stamp_size < 1 || f < 1 {
        return Err(Error::InvalidArgument(
            "cell size, stamp size and factor must be >= 1".into(),
        ));
    }
    if !out_h.is_multiple_of(f) || !out_w.is_multiple_of(f) {
        return Err(Error::ShapeMismatch(format!(
            "output {out_h}x{out_w} not divisible by factor {f}"
        )));
    }
    let (lh, lw) = (out_h / f, out_w / f);
    if nnf.height + nnf.patch_size - 1 != lh || nnf.width + nnf.patch_size - 1 != lw {
        return Err(Error::ShapeMismatch(format!(
            "NNF grid {}x{} (patch {}) inconsistent with LR input {lh}x{lw}",
            nnf.height, nnf.width, nnf.patch_size
        )));
    }

    let cells_y = out_h.div_ceil(cell_size);
    let cells_x = out_w.div_ceil(cell_size);
    let k = cells_y * cells_x;

    let mut x_masks = Vec::with_capacity(k);
    let mut s_masks = vec![Image::<T>::new(style_h, style_w); k];
    let mut stamped = vec![false; k];
    for cy in 0..cells_y {
        for cx in 0..cells_x {
            let y0 = cy * cell_size;
            let x0 = cx * cell_size;
            let y1 = ((cy + 1) * cell_size).min(out_h);
            let x1 = ((cx + 1) * cell_size).min(out_w);
            let mut m = Image::new(out_h, out_w);
            for y in y0..y1 {
                m.row_mut(y)[x0..x1].fill(T::one());
            }
            x_masks.push(m);
        }
    }

    // pool: stamp every correspondence into the cell owning its scaled source
    for py in 0..nnf.height {
        for px in 0..nnf.width {
            let (hy, hx) = (py * f, px * f);
            let cell = (hy / cell_size) * cells_x + hx / cell_size;
            let (dy, dx) = nnf.offset(py, px);
            let ty = (py as i64 + dy as i64) * f as i64;
            let tx = (px as i64 + dx as i64) * f as i64;
            stamp_square(&mut s_masks[cell], ty, tx, stamp_size);
            stamped[cell] = true;
        }
    }

    let mut report = MaskGenReport::default();
    if !stamped.iter().any(|&s| s) {
        return Err(Error::InvalidArgument("NNF produced no stamps".into()));
    }
    // empty cells copy the nearest stamped cell's style mask
    for idx in 0..k {
        if stamped[idx] {
            continue;
        }
        let (cy, cx) = (idx / cells_x, idx % cells_x);
        let donor = (0..k)
            .filter(|&j| stamped[j])
            .min_by_key(|&j| {
                let (jy, jx) = (j / cells_x, j % cells_x);
                let dy = jy as i64 - cy as i64;
                let dx = jx as i64 - cx as i64;
                (dy * dy + dx * dx, j)
            })
            .unwrap();
        s_masks[idx] = s_masks[donor].clone();
        report.borrowed_cells.push((idx, donor));
    }

    let pairs = x_masks
        .into_iter()
        .zip(s_masks)
        .map(|(x, s)| MaskPair {
            x,
            s: dilate(&s, dilation_radius),
        })
        .collect();
    let set = MaskSet {
        pairs,
        provenance: MaskProvenance::PatchMatch,
    };
    set.validate()?;
    Ok((set, report))
}

/// Stamp a size x size square of ones centered at (cy, cx), clipped to bounds.
fn stamp_square<T: Scalar>(mask: &mut Image<T>, cy: i64, cx: i64, size: usize) {
    let half = size as i64 / 2;
    let y0 = (cy - half).max(0);
    let x0 = (cx - half).max(0);
    let y1 = (cy - half + size as i64).min(mask.height() as i64);
    let x1 = (cx - half + size as i64).min(mask.width() as i64);
    for y in y0..y1 {
        if x0 < x1 {
            mask.row_mut(y as usize)[x0 as usize..x1 as usize].fill(T::one());
        }
    }
}
