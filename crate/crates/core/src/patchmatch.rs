//! Randomized approximate nearest-neighbor fields between two grayscale
//! images, plus an exhaustive reference search.
//!
//! Positions index valid patch origins (top-left corners), so every stored
//! offset points at a fully in-bounds target patch. The algorithm alternates
//! scanline propagation (left/up neighbors on even iterations, right/down on
//! odd) with a random search whose radius decays from the full target extent
//! down to one pixel. All randomness comes from the seeded [`Rng64`], so a
//! field is bit-reproducible given its inputs and seed.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng64;
use crate::scalar::{cast, Scalar};

/// Per-position best-match offsets and patch distances.
#[derive(Debug, Clone, PartialEq)]
pub struct NnField<T> {
    /// Valid-origin grid height of the source image (src_h - patch + 1).
    pub height: usize,
    /// Valid-origin grid width of the source image.
    pub width: usize,
    pub patch_size: usize,
    /// (dy, dx) displacement into the target per position, row-major.
    pub offsets: Vec<(i32, i32)>,
    /// Patch SSD at the stored offset per position.
    pub distances: Vec<T>,
}

impl<T: Scalar> NnField<T> {
    #[inline]
    pub fn offset(&self, y: usize, x: usize) -> (i32, i32) {
        self.offsets[y * self.width + x]
    }

    #[inline]
    pub fn distance(&self, y: usize, x: usize) -> T {
        self.distances[y * self.width + x]
    }

    pub fn mean_distance(&self) -> f64 {
        self.distances.iter().map(|d| d.to_f64().unwrap()).sum::<f64>()
            / self.distances.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct PatchMatchParams<T> {
    /// Odd patch side, >= 3.
    pub patch_size: usize,
    pub iterations: usize,
    /// Multiplier applied to the search radius after each probe.
    pub search_radius_decay: T,
    pub rng_seed: u64,
}

impl<T: Scalar> Default for PatchMatchParams<T> {
    fn default() -> Self {
        PatchMatchParams {
            patch_size: 7,
            iterations: 5,
            search_radius_decay: cast(0.5),
            rng_seed: 0,
        }
    }
}

impl<T: Scalar> PatchMatchParams<T> {
    fn validate(&self) -> Result<()> {
        if self.patch_size < 3 || self.patch_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "patch size must be odd and >= 3, got {}",
                self.patch_size
            )));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        let d = self.search_radius_decay.to_f64().unwrap();
        if !(0.0 < d && d < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "search radius decay must lie in (0, 1), got {d}"
            )));
        }
        Ok(())
    }
}

const SEARCH_PROBES_PER_LEVEL: usize = 6;

/// Sum of squared differences over aligned patch_size^2 windows; no bounds
/// management, callers guarantee validity.
#[inline]
fn ssd<T: Scalar>(
    a: &Image<T>,
    ay: usize,
    ax: usize,
    b: &Image<T>,
    by: usize,
    bx: usize,
    patch: usize,
) -> T {
    let mut acc = T::zero();
    for dy in 0..patch {
        let ra = &a.row(ay + dy)[ax..ax + patch];
        let rb = &b.row(by + dy)[bx..bx + patch];
        for (va, vb) in ra.iter().zip(rb) {
            let d = *va - *vb;
            acc += d * d;
        }
    }
    acc
}

/// Bounds-checked patch SSD between two images.
pub fn patch_distance<T: Scalar>(
    a: &Image<T>,
    ay: usize,
    ax: usize,
    b: &Image<T>,
    by: usize,
    bx: usize,
    patch_size: usize,
) -> Result<T> {
    if ay + patch_size > a.height()
        || ax + patch_size > a.width()
        || by + patch_size > b.height()
        || bx + patch_size > b.width()
    {
        return Err(Error::InvalidArgument(format!(
            "patch at ({ay},{ax})/({by},{bx}) size {patch_size} out of bounds"
        )));
    }
    Ok(ssd(a, ay, ax, b, by, bx, patch_size))
}

fn grid_dims<T: Scalar>(src: &Image<T>, tgt: &Image<T>, patch: usize) -> Result<(usize, usize, usize, usize)> {
    if src.height() < patch || src.width() < patch || tgt.height() < patch || tgt.width() < patch {
        return Err(Error::InvalidArgument(format!(
            "images {}x{} / {}x{} smaller than patch {patch}",
            src.height(),
            src.width(),
            tgt.height(),
            tgt.width()
        )));
    }
    Ok((
        src.height() - patch + 1,
        src.width() - patch + 1,
        tgt.height() - patch + 1,
        tgt.width() - patch + 1,
    ))
}

/// Exhaustive minimum-SSD field; ties broken by the smallest (dy, dx).
pub fn brute_force_nnf<T: Scalar>(
    src: &Image<T>,
    tgt: &Image<T>,
    patch_size: usize,
) -> Result<NnField<T>> {
    let (gh, gw, th, tw) = grid_dims(src, tgt, patch_size)?;
    let mut offsets = Vec::with_capacity(gh * gw);
    let mut distances = Vec::with_capacity(gh * gw);
    for y in 0..gh {
        for x in 0..gw {
            let mut best = (i32::MAX, i32::MAX);
            let mut best_d = T::infinity();
            for ty in 0..th {
                for tx in 0..tw {
                    let d = ssd(src, y, x, tgt, ty, tx, patch_size);
                    let off = (ty as i32 - y as i32, tx as i32 - x as i32);
                    if d < best_d || (d == best_d && off < best) {
                        best_d = d;
                        best = off;
                    }
                }
            }
            offsets.push(best);
            distances.push(best_d);
        }
    }
    Ok(NnField {
        height: gh,
        width: gw,
        patch_size,
        offsets,
        distances,
    })
}

/// Randomized approximate field (init, propagation, random search).
pub fn compute_nnf<T: Scalar>(
    src: &Image<T>,
    tgt: &Image<T>,
    params: &PatchMatchParams<T>,
) -> Result<NnField<T>> {
    params.validate()?;
    let patch = params.patch_size;
    let (gh, gw, th, tw) = grid_dims(src, tgt, patch)?;
    let root = Rng64::new(params.rng_seed);

    // random init, one forked stream per row
    let mut offsets = vec![(0i32, 0i32); gh * gw];
    let mut distances = vec![T::zero(); gh * gw];
    for y in 0..gh {
        let mut rng = root.fork(y as u64 + 1);
        for x in 0..gw {
            let ty = rng.next_below(th);
            let tx = rng.next_below(tw);
            offsets[y * gw + x] = (ty as i32 - y as i32, tx as i32 - x as i32);
            distances[y * gw + x] = ssd(src, y, x, tgt, ty, tx, patch);
        }
    }

    let mut rng = root.fork(0);
    let decay = params.search_radius_decay.to_f64().unwrap();
    for iter in 0..params.iterations {
        // try adopting a neighbor's offset at (y, x); accept strict improvements
        let try_offset = |offsets: &mut Vec<(i32, i32)>,
                              distances: &mut Vec<T>,
                              y: usize,
                              x: usize,
                              cand: (i32, i32)| {
            let ty = y as i32 + cand.0;
            let tx = x as i32 + cand.1;
            if ty < 0 || tx < 0 || ty >= th as i32 || tx >= tw as i32 {
                return;
            }
            let d = ssd(src, y, x, tgt, ty as usize, tx as usize, patch);
            if d < distances[y * gw + x] {
                distances[y * gw + x] = d;
                offsets[y * gw + x] = cand;
            }
        };

        if iter % 2 == 0 {
            for y in 0..gh {
                for x in 0..gw {
                    if x > 0 {
                        let c = offsets[y * gw + x - 1];
                        try_offset(&mut offsets, &mut distances, y, x, c);
                    }
                    if y > 0 {
                        let c = offsets[(y - 1) * gw + x];
                        try_offset(&mut offsets, &mut distances, y, x, c);
                    }
                }
            }
        } else {
            for y in (0..gh).rev() {
                for x in (0..gw).rev() {
                    if x + 1 < gw {
                        let c = offsets[y * gw + x + 1];
                        try_offset(&mut offsets, &mut distances, y, x, c);
                    }
                    if y + 1 < gh {
                        let c = offsets[(y + 1) * gw + x];
                        try_offset(&mut offsets, &mut distances, y, x, c);
                    }
                }
            }
        }

        // random search, row-major, radius decaying from the full extent to 1;
        // a handful of probes per radius level markedly improves convergence
        // on small fields at negligible cost
        for y in 0..gh {
            for x in 0..gw {
                let mut radius = th.max(tw) as f64;
                while radius >= 1.0 {
                    let r = radius as i64;
                    for _probe in 0..SEARCH_PROBES_PER_LEVEL {
                        let (by, bx) = offsets[y * gw + x];
                        let cty = y as i64 + by as i64 + rng.next_signed(r);
                        let ctx = x as i64 + bx as i64 + rng.next_signed(r);
                        let cty = cty.clamp(0, th as i64 - 1) as usize;
                        let ctx = ctx.clamp(0, tw as i64 - 1) as usize;
                        let cand = (cty as i32 - y as i32, ctx as i32 - x as i32);
                        let d = ssd(src, y, x, tgt, cty, ctx, patch);
                        if d < distances[y * gw + x] {
                            distances[y * gw + x] = d;
                            offsets[y * gw + x] = cand;
                        }
                    }
                    radius *= decay;
                }
            }
        }
    }

    Ok(NnField {
        height: gh,
        width: gw,
        patch_size: patch,
        offsets,
        distances,
    })
}

/// Write the binary dump: magic "NNF1", u32 h/w/patch, then per position
/// (i32 dy, i32 dx, f32 distance), all little-endian, row-major.
pub fn write_nnf<T: Scalar>(field: &NnField<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + field.offsets.len() * 12);
    buf.extend_from_slice(b"NNF1");
    buf.extend_from_slice(&(field.height as u32).to_le_bytes());
    buf.extend_from_slice(&(field.width as u32).to_le_bytes());
    buf.extend_from_slice(&(field.patch_size as u32).to_le_bytes());
    for (off, d) in field.offsets.iter().zip(&field.distances) {
        buf.extend_from_slice(&off.0.to_le_bytes());
        buf.extend_from_slice(&off.1.to_le_bytes());
        buf.extend_from_slice(&(d.to_f64().unwrap() as f32).to_le_bytes());
    }
    File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

/// Read a dump written by [`write_nnf`].
pub fn read_nnf<T: Scalar>(path: impl AsRef<Path>) -> Result<NnField<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != b"NNF1" {
        return Err(Error::decode(path, "bad NNF1 header"));
    }
    let rd = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap()) as usize;
    let (h, w, patch) = (rd(4), rd(8), rd(12));
    let need = 16 + h * w * 12;
    if bytes.len() != need {
        return Err(Error::decode(
            path,
            format!("expected {need} bytes for {h}x{w} field, found {}", bytes.len()),
        ));
    }
    let mut offsets = Vec::with_capacity(h * w);
    let mut distances = Vec::with_capacity(h * w);
    for i in 0..h * w {
        let p = 16 + i * 12;
        let dy = i32::from_le_bytes(bytes[p..p + 4].try_into().unwrap());
        let dx = i32::from_le_bytes(bytes[p + 4..p + 8].try_into().unwrap());
        let d = f32::from_le_bytes(bytes[p + 8..p + 12].try_into().unwrap());
        offsets.push((dy, dx));
        distances.push(cast(d as f64));
    }
    Ok(NnField {
        height: h,
        width: w,
        patch_size: patch,
        offsets,
        distances,
    })
}
