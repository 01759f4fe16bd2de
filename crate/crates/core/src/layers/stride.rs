//! Post-convolution stride extraction.
//!
//! Both variants consume a vector whose wanted elements sit on a regular
//! [`RowGrid`] and return them compacted row-major into slots
//! `[0, rows * width)`, with every other slot zero.
//!
//! - Variant 1 (`Extract`) walks the rows with one rotation index, picks the
//!   elements of each row with single-slot masks and re-aligns rows with
//!   negative rotations. One level.
//! - Variant 2 (`Masked`) masks the grid once, compacts columns in
//!   `log2(width)` rotate-mask rounds and gathers rows with `width` row
//!   masks. Needs a power-of-two width; otherwise it falls back to variant 1.

use serde::{Deserialize, Serialize};

use super::common::{rot, select, span, sum_all};
use crate::error::{Error, Result};
use crate::simd::{SlotBackend, SlotVector, TraceEvent};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrideVariant {
    /// Rotation-based extraction: fewest levels.
    #[default]
    Extract,
    /// Mask-based log compaction: fewest rotation keys.
    Masked,
}

/// `rows` rows starting at slot `q * pitch`, each holding `width` wanted
/// elements spaced `stride` apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowGrid {
    pub rows: usize,
    pub pitch: usize,
    pub stride: usize,
    pub width: usize,
}

impl RowGrid {
    /// Grid of a single `W x W` channel block strided by `S` into `out_width` columns.
    pub fn single(in_width: usize, stride: usize, out_width: usize) -> Self {
        RowGrid {
            rows: out_width,
            pitch: stride * in_width,
            stride,
            width: out_width,
        }
    }

    pub fn validate(&self, slot_count: usize) -> Result<()> {
        if self.rows == 0 || self.width == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(format!("empty stride grid {self:?}")));
        }
        if self.rows > 1 && (self.width - 1) * self.stride >= self.pitch {
            return Err(Error::InvalidConfig(format!(
                "stride grid rows overlap: {self:?}"
            )));
        }
        let last = (self.rows - 1) * self.pitch + (self.width - 1) * self.stride;
        if last >= slot_count || self.rows * self.width > slot_count {
            return Err(Error::CapacityExceeded {
                needed: last + 1,
                available: slot_count,
            });
        }
        Ok(())
    }

    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.rows).flat_map(move |q| {
            (0..self.width).map(move |j| q * self.pitch + j * self.stride)
        })
    }

    /// Whether variant 2 can run on this grid.
    pub fn log_compactable(&self) -> bool {
        self.width.is_power_of_two()
    }

    pub fn compaction_rounds(&self) -> u32 {
        if self.stride > 1 {
            self.width.trailing_zeros()
        } else {
            0
        }
    }
}

/// Variant actually executed for a grid.
pub fn effective_variant(variant: StrideVariant, grid: &RowGrid) -> StrideVariant {
    match variant {
        StrideVariant::Masked if !grid.log_compactable() => StrideVariant::Extract,
        v => v,
    }
}

/// Levels consumed by [`stride_grid`]. `premasked` drops variant 2's
/// initial grid mask.
pub fn stride_depth(variant: StrideVariant, grid: &RowGrid, premasked: bool) -> u32 {
    match effective_variant(variant, grid) {
        StrideVariant::Extract => 1,
        StrideVariant::Masked => u32::from(!premasked) + grid.compaction_rounds() + 1,
    }
}

pub fn stride_grid(
    backend: &dyn SlotBackend,
    v: &SlotVector,
    grid: &RowGrid,
    variant: StrideVariant,
    premasked: bool,
) -> Result<SlotVector> {
    grid.validate(backend.slot_count())?;
    match effective_variant(variant, grid) {
        StrideVariant::Extract => {
            if variant == StrideVariant::Masked {
                backend.annotate(TraceEvent::Note {
                    text: format!(
                        "masked striding needs a power-of-two output width, got {}; using extraction",
                        grid.width
                    ),
                });
            }
            extract_rows(backend, v, grid)
        }
        StrideVariant::Masked => compact_masked(backend, v, grid, premasked),
    }
}

fn extract_rows(backend: &dyn SlotBackend, v: &SlotVector, grid: &RowGrid) -> Result<SlotVector> {
    let n = backend.slot_count();
    let w = grid.width;
    let mut cursor = v.clone();
    let mut rows = Vec::with_capacity(grid.rows);
    for q in 0..grid.rows {
        if q > 0 {
            cursor = rot(backend, &cursor, grid.pitch as i64)?;
        }
        let row = if grid.stride == 1 || w == 1 {
            backend.mult_plain(&cursor, &span(n, 0, w, 1.0))?
        } else {
            let mut u = cursor.clone();
            let mut picked = Vec::with_capacity(w);
            picked.push(backend.mult_plain(&u, &select(n, [0], 1.0))?);
            for j in 1..w {
                u = rot(backend, &u, (grid.stride - 1) as i64)?;
                picked.push(backend.mult_plain(&u, &select(n, [j], 1.0))?);
            }
            sum_all(backend, &picked)?
        };
        rows.push(row);
    }
    let mut out = rows.pop().expect("at least one row");
    while let Some(row) = rows.pop() {
        out = rot(backend, &out, -(w as i64))?;
        out = backend.add(&out, &row)?;
    }
    Ok(out)
}

fn compact_masked(
    backend: &dyn SlotBackend,
    v: &SlotVector,
    grid: &RowGrid,
    premasked: bool,
) -> Result<SlotVector> {
    let n = backend.slot_count();
    let (s, w) = (grid.stride, grid.width);
    let mut cur = if premasked {
        v.clone()
    } else {
        backend.mult_plain(v, &select(n, grid.positions(), 1.0))?
    };

    // Element j of a row starts at j*s and must end at j; round t moves the
    // elements whose bit t is set left by (s-1)*2^t.
    for t in 0..grid.compaction_rounds() {
        let step = 1usize << t;
        let moving = (0..grid.rows).flat_map(|q| {
            (0..w)
                .filter(move |j| j & step != 0)
                .map(move |j| q * grid.pitch + j * s - (s - 1) * (j % step))
        });
        let picked = backend.mult_plain(&cur, &select(n, moving, 1.0))?;
        let moved = rot(backend, &picked, ((s - 1) * step) as i64)?;
        cur = backend.add(&backend.sub(&cur, &picked)?, &moved)?;
    }

    let mut gathered = Vec::with_capacity(grid.rows);
    let mut u = cur;
    for q in 0..grid.rows {
        if q > 0 {
            u = rot(backend, &u, (grid.pitch - w) as i64)?;
        }
        gathered.push(backend.mult_plain(&u, &span(n, q * w, (q + 1) * w, 1.0))?);
    }
    sum_all(backend, &gathered)
}

/// Variant 1 on a single-channel intermediate of row width `width`:
/// keeps rows and columns `0, stride, 2*stride, ...` (`out_width` of each).
pub fn stride_extract_v1(
    backend: &dyn SlotBackend,
    a_star: &SlotVector,
    width: usize,
    stride: usize,
    out_width: usize,
) -> Result<SlotVector> {
    check_fits(width, stride, out_width)?;
    stride_grid(
        backend,
        a_star,
        &RowGrid::single(width, stride, out_width),
        StrideVariant::Extract,
        false,
    )
}

/// Variant 2; falls back to variant 1 (with a trace note) unless
/// `out_width` is a power of two.
pub fn stride_extract_v2(
    backend: &dyn SlotBackend,
    a_star: &SlotVector,
    width: usize,
    stride: usize,
    out_width: usize,
) -> Result<SlotVector> {
    check_fits(width, stride, out_width)?;
    stride_grid(
        backend,
        a_star,
        &RowGrid::single(width, stride, out_width),
        StrideVariant::Masked,
        false,
    )
}

fn check_fits(width: usize, stride: usize, out_width: usize) -> Result<()> {
    if stride == 0 || out_width == 0 || (out_width - 1) * stride >= width {
        return Err(Error::InvalidConfig(format!(
            "cannot take {out_width} strided columns (stride {stride}) from width {width}"
        )));
    }
    Ok(())
}

/// Strides every channel of a `C x W x W` block layout into a compact
/// `C x w_out x w_out` layout. Channels are handled jointly when their
/// spacing lines up with the row pitch, otherwise one at a time.
pub(crate) fn stride_channels(
    backend: &dyn SlotBackend,
    v: &SlotVector,
    channels: usize,
    width: usize,
    stride: usize,
    out_width: usize,
    variant: StrideVariant,
) -> Result<SlotVector> {
    if channels == 1 || out_width * stride == width {
        let grid = RowGrid {
            rows: channels * out_width,
            pitch: stride * width,
            stride,
            width: out_width,
        };
        return stride_grid(backend, v, &grid, variant, false);
    }
    let grid = RowGrid::single(width, stride, out_width);
    let block = width * width;
    let mut cursor = v.clone();
    let mut outs = Vec::with_capacity(channels);
    for c in 0..channels {
        if c > 0 {
            cursor = rot(backend, &cursor, block as i64)?;
        }
        outs.push(stride_grid(backend, &cursor, &grid, variant, false)?);
    }
    let out_block = (out_width * out_width) as i64;
    let mut out = outs.pop().expect("at least one channel");
    while let Some(prev) = outs.pop() {
        out = rot(backend, &out, -out_block)?;
        out = backend.add(&out, &prev)?;
    }
    Ok(out)
}
