use super::font::{self, ADVANCE, GLYPH_H};
use super::GridSpec;
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Image};

pub const LINE_COLOR: [u8; 3] = [255, 0, 0];
const HALO_COLOR: [u8; 3] = [255, 255, 255];

/// Rasterized label: `core` pixels take the line color, `halo` pixels
/// (disjoint from `core`) are painted white.
#[derive(Clone, Debug)]
pub struct GlyphStamp {
    pub core: BinaryMask,
    pub halo: BinaryMask,
}

impl GlyphStamp {
    pub fn width(&self) -> usize {
        self.core.width
    }

    pub fn height(&self) -> usize {
        self.core.height
    }
}

/// Renders `text` with glyph height `font_px`, surrounded by a halo.
pub fn glyph_stamp(text: &str, font_px: u32) -> GlyphStamp {
    let chars: Vec<char> = text.chars().collect();
    let font_px = font_px.max(1) as usize;
    let unit = font_px as f64 / GLYPH_H as f64;
    let units_w = (ADVANCE * chars.len()).saturating_sub(1).max(1);
    let text_w = (unit * units_w as f64).ceil() as usize;
    let halo = (font_px / 12).max(1);
    let (w, h) = (text_w + 2 * halo, font_px + 2 * halo);

    let mut core = BinaryMask::new(w, h);
    for py in 0..font_px {
        let gy = ((py as f64 + 0.5) / unit) as usize;
        for px in 0..text_w {
            let gx = ((px as f64 + 0.5) / unit) as usize;
            let (ci, col) = (gx / ADVANCE, gx % ADVANCE);
            if ci < chars.len() && font::ink(chars[ci], col, gy) {
                core.set(px + halo, py + halo, true);
            }
        }
    }
    let mut ring = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if core.get(x, y) {
                continue;
            }
            let near = (y.saturating_sub(halo)..=(y + halo).min(h - 1))
                .any(|yy| (x.saturating_sub(halo)..=(x + halo).min(w - 1)).any(|xx| core.get(xx, yy)));
            ring.set(x, y, near);
        }
    }
    GlyphStamp { core, halo: ring }
}

/// Pixel spans `[start, end)` of the internal lines along an axis of length `len`.
pub fn line_positions(len: usize, parts: usize, line_width: u32) -> Vec<(usize, usize)> {
    let lw = line_width as usize;
    (1..parts)
        .map(|k| {
            let center = (2 * k * len + parts) / (2 * parts);
            let start = center.saturating_sub(lw / 2);
            (start, (start + lw).min(len))
        })
        .collect()
}

/// Draws the numbered grid: `cols-1` vertical and `rows-1` horizontal red
/// lines, then each cell's index centered in the cell. The result is RGB;
/// every pixel not covered by a line or label is copied unchanged.
pub fn render_grid_overlay(img: &Image, grid: &GridSpec) -> Result<Image> {
    if grid.cols == 0 || grid.rows == 0 {
        return Err(Error::InvalidGrid("grid needs at least one row and column".into()));
    }
    let (w, h) = img.dims();
    let (cell_w, cell_h) = (w / grid.cols, h / grid.rows);
    let min_cell = 2 * grid.font_size_px as usize;
    if cell_w < min_cell || cell_h < min_cell {
        return Err(Error::GridTooDense {
            cell_w,
            cell_h,
            font_px: grid.font_size_px,
        });
    }
    let mut out = img.to_rgb();
    for (x0, x1) in line_positions(w, grid.cols, grid.line_width_px) {
        for y in 0..h {
            for x in x0..x1 {
                out.pixel_mut(x, y).copy_from_slice(&LINE_COLOR);
            }
        }
    }
    for (y0, y1) in line_positions(h, grid.rows, grid.line_width_px) {
        for y in y0..y1 {
            for x in 0..w {
                out.pixel_mut(x, y).copy_from_slice(&LINE_COLOR);
            }
        }
    }
    for index in 1..=grid.cell_count() {
        let (col, row) = grid.cell_position(index);
        let (x0, x1) = grid.col_bounds(col, w);
        let (y0, y1) = grid.row_bounds(row, h);
        let stamp = glyph_stamp(&index.to_string(), grid.font_size_px);
        let (sx, sy) = label_origin(x0, x1, y0, y1, &stamp);
        for gy in 0..stamp.height() {
            for gx in 0..stamp.width() {
                let (x, y) = (sx + gx as i64, sy + gy as i64);
                if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                    continue;
                }
                let color = if stamp.core.get(gx, gy) {
                    &LINE_COLOR
                } else if stamp.halo.get(gx, gy) {
                    &HALO_COLOR
                } else {
                    continue;
                };
                out.pixel_mut(x as usize, y as usize).copy_from_slice(color);
            }
        }
    }
    Ok(out)
}

/// Top-left corner placing `stamp` at the center of a cell.
pub(crate) fn label_origin(x0: usize, x1: usize, y0: usize, y1: usize, stamp: &GlyphStamp) -> (i64, i64) {
    let cx = ((x0 + x1) / 2) as i64;
    let cy = ((y0 + y1) / 2) as i64;
    (cx - stamp.width() as i64 / 2, cy - stamp.height() as i64 / 2)
}
