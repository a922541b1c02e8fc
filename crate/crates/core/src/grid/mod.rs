//! Numbered grid prompting and recursive routing.
//!
//! Cells are indexed `1..=cols*rows` in reading order (row-major, top row
//! first). Cell boundaries are integer floors of `k * W / cols`, so the
//! cells of any frame tile it exactly.

mod font;
mod overlay;
mod prompt;
mod response;
mod routing;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use overlay::{glyph_stamp, line_positions, render_grid_overlay, GlyphStamp, LINE_COLOR};
pub use prompt::{build_routing_prompt, ROUTING_PROMPT_TEMPLATE, STRICT_JSON_SUFFIX};
pub use response::{parse_vlm_response, RoutingResult};
pub use routing::{route, RoutingConfig, RoutingState, RoutingStep};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
    pub line_width_px: u32,
    pub font_size_px: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            cols: 4,
            rows: 3,
            line_width_px: 5,
            font_size_px: 50,
        }
    }
}

impl GridSpec {
    pub fn new(cols: usize, rows: usize) -> Self {
        Self {
            cols,
            rows,
            ..Self::default()
        }
    }

    pub fn cell_count(&self) -> usize {
        self.cols * self.rows
    }

    pub(crate) fn check_index(&self, index: i64) -> Result<usize> {
        if index < 1 || index as usize > self.cell_count() {
            return Err(Error::BadIndex {
                index,
                max: self.cell_count(),
            });
        }
        Ok(index as usize)
    }

    /// Column and row of a 1-based index.
    pub fn cell_position(&self, index: usize) -> (usize, usize) {
        ((index - 1) % self.cols, (index - 1) / self.cols)
    }

    /// `[start, end)` pixel interval of column `col` in a frame `width` wide.
    pub fn col_bounds(&self, col: usize, width: usize) -> (usize, usize) {
        (col * width / self.cols, (col + 1) * width / self.cols)
    }

    pub fn row_bounds(&self, row: usize, height: usize) -> (usize, usize) {
        (row * height / self.rows, (row + 1) * height / self.rows)
    }

    /// 1-based index of the cell containing pixel `(x, y)`.
    pub fn cell_index_at(&self, x: usize, y: usize, width: usize, height: usize) -> Option<usize> {
        if x >= width || y >= height {
            return None;
        }
        let col = locate(x, width, self.cols);
        let row = locate(y, height, self.rows);
        Some(row * self.cols + col + 1)
    }
}

// largest k with floor(k * len / parts) <= p
fn locate(p: usize, len: usize, parts: usize) -> usize {
    let mut k = (p * parts / len).min(parts - 1);
    while k + 1 < parts && (k + 1) * len / parts <= p {
        k += 1;
    }
    while k > 0 && k * len / parts > p {
        k -= 1;
    }
    k
}

/// Affine map from a frame's pixel coordinates to full-resolution ERP
/// coordinates: `erp = offset + scale * frame`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub offset_x: f64,
    pub offset_y: f64,
    pub scale_x: f64,
    pub scale_y: f64,
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        offset_x: 0.0,
        offset_y: 0.0,
        scale_x: 1.0,
        scale_y: 1.0,
    };

    pub fn scale(scale_x: f64, scale_y: f64) -> Self {
        Self {
            scale_x,
            scale_y,
            ..Self::IDENTITY
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.offset_x + self.scale_x * x, self.offset_y + self.scale_y * y)
    }

    /// `outer ∘ self`: first this map, then `outer`.
    pub fn then(&self, outer: &AffineMap) -> AffineMap {
        AffineMap {
            offset_x: outer.offset_x + outer.scale_x * self.offset_x,
            offset_y: outer.offset_y + outer.scale_y * self.offset_y,
            scale_x: outer.scale_x * self.scale_x,
            scale_y: outer.scale_y * self.scale_y,
        }
    }
}

/// Axis-aligned rectangle in full-resolution ERP pixels. `x1` may exceed the
/// panorama width for regions that wrap across the seam.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErpRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl ErpRect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    /// Whether the center of ERP pixel `(col, row)` lies inside, accounting
    /// for the seam.
    pub fn contains_pixel(&self, col: usize, row: usize, erp_width: usize) -> bool {
        let y = row as f64 + 0.5;
        if y < self.y0 || y >= self.y1 {
            return false;
        }
        let w = erp_width as f64;
        let x = col as f64 + 0.5;
        [x - w, x, x + w].iter().any(|&xx| xx >= self.x0 && xx < self.x1)
    }
}

/// Region of a routing frame, with the frame's mapping back to the panorama.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropRegion {
    pub frame_width: usize,
    pub frame_height: usize,
    pub x0: usize,
    pub y0: usize,
    /// May reach past `frame_width` when `wraps_seam`.
    pub width: usize,
    pub height: usize,
    pub wraps_seam: bool,
    pub frame_to_erp: AffineMap,
}

impl CropRegion {
    pub fn erp_rect(&self) -> ErpRect {
        let (x0, y0) = self.frame_to_erp.apply(self.x0 as f64, self.y0 as f64);
        let (x1, y1) = self
            .frame_to_erp
            .apply((self.x0 + self.width) as f64, (self.y0 + self.height) as f64);
        ErpRect { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    /// Mapping from this region's own pixel grid (origin at `x0, y0`) to ERP.
    pub fn local_to_erp(&self) -> AffineMap {
        AffineMap {
            offset_x: self.x0 as f64,
            offset_y: self.y0 as f64,
            scale_x: 1.0,
            scale_y: 1.0,
        }
        .then(&self.frame_to_erp)
    }
}

fn check_frame(grid: &GridSpec, width: usize, height: usize) -> Result<()> {
    if grid.cols == 0 || grid.rows == 0 {
        return Err(Error::InvalidGrid("grid needs at least one row and column".into()));
    }
    if width < grid.cols || height < grid.rows {
        return Err(Error::InvalidGrid(format!(
            "{width}x{height} frame cannot hold a {}x{} grid",
            grid.cols, grid.rows
        )));
    }
    Ok(())
}

/// Region of a single cell.
pub fn cell_region(index: i64, grid: &GridSpec, width: usize, height: usize, frame_to_erp: AffineMap) -> Result<CropRegion> {
    check_frame(grid, width, height)?;
    let index = grid.check_index(index)?;
    let (col, row) = grid.cell_position(index);
    let (x0, x1) = grid.col_bounds(col, width);
    let (y0, y1) = grid.row_bounds(row, height);
    Ok(CropRegion {
        frame_width: width,
        frame_height: height,
        x0,
        y0,
        width: x1 - x0,
        height: y1 - y0,
        wraps_seam: false,
        frame_to_erp,
    })
}

/// Minimal region covering every listed cell.
///
/// With `periodic` (a full panorama frame) the column span is the shortest
/// circular interval, which may wrap across the seam.
pub fn merge_cells(
    indices: &[i64],
    grid: &GridSpec,
    width: usize,
    height: usize,
    periodic: bool,
    frame_to_erp: AffineMap,
) -> Result<CropRegion> {
    check_frame(grid, width, height)?;
    if indices.is_empty() {
        return Err(Error::EmptyGridBoxes);
    }
    let mut used_cols = vec![false; grid.cols];
    let (mut row_lo, mut row_hi) = (usize::MAX, 0);
    for &i in indices {
        let (c, r) = grid.cell_position(grid.check_index(i)?);
        used_cols[c] = true;
        row_lo = row_lo.min(r);
        row_hi = row_hi.max(r);
    }
    let cols = grid.cols;
    let first = used_cols.iter().position(|&u| u).unwrap();
    let last = used_cols.iter().rposition(|&u| u).unwrap();
    let (mut start, mut len) = (first, last - first + 1);
    if periodic {
        // shortest circular interval; ties keep the non-wrapping one
        for s in (0..cols).filter(|&s| used_cols[s]) {
            let l = (0..cols)
                .filter(|&c| used_cols[c])
                .map(|c| (c + cols - s) % cols + 1)
                .max()
                .unwrap();
            if l < len {
                start = s;
                len = l;
            }
        }
    }
    let end = start + len; // exclusive, may exceed cols
    let x0 = grid.col_bounds(start, width).0;
    let x1 = if end > cols {
        width + grid.col_bounds(end - 1 - cols, width).1
    } else {
        grid.col_bounds(end - 1, width).1
    };
    let y0 = grid.row_bounds(row_lo, height).0;
    let y1 = grid.row_bounds(row_hi, height).1;
    Ok(CropRegion {
        frame_width: width,
        frame_height: height,
        x0,
        y0,
        width: x1 - x0,
        height: y1 - y0,
        wraps_seam: end > cols,
        frame_to_erp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ID: AffineMap = AffineMap::IDENTITY;

    #[test]
    fn first_and_last_cells() {
        let g = GridSpec::default();
        let c = cell_region(1, &g, 2000, 1000, ID).unwrap();
        assert_eq!((c.x0, c.x0 + c.width, c.y0, c.y0 + c.height), (0, 500, 0, 333));
        let c = cell_region(12, &g, 2000, 1000, ID).unwrap();
        assert_eq!((c.x0, c.x0 + c.width, c.y0, c.y0 + c.height), (1500, 2000, 666, 1000));
        let total: usize = (1..=12).map(|i| cell_region(i, &g, 2000, 1000, ID).unwrap().area()).sum();
        assert_eq!(total, 2_000_000);
        assert!(matches!(cell_region(0, &g, 2000, 1000, ID), Err(Error::BadIndex { .. })));
        assert!(matches!(cell_region(13, &g, 2000, 1000, ID), Err(Error::BadIndex { .. })));
    }

    #[test]
    fn merge_examples() {
        let g = GridSpec::default();
        let r = merge_cells(&[4, 5], &g, 2000, 1000, true, ID).unwrap();
        assert!(r.wraps_seam);
        assert_eq!((r.x0, r.width, r.y0, r.height), (1500, 1000, 0, 666));

        let single = merge_cells(&[6], &g, 2000, 1000, true, ID).unwrap();
        assert_eq!(single, cell_region(6, &g, 2000, 1000, ID).unwrap());

        let block = merge_cells(&[1, 2, 5, 6], &g, 2000, 1000, true, ID).unwrap();
        assert_eq!((block.x0, block.width, block.y0, block.height), (0, 1000, 0, 666));
        assert!(!block.wraps_seam);

        // without seam periodicity the same pair spans the whole width
        let flat = merge_cells(&[4, 5], &g, 2000, 1000, false, ID).unwrap();
        assert_eq!((flat.x0, flat.width), (0, 2000));
        assert!(!flat.wraps_seam);
    }

    #[test]
    fn merge_matches_enumerated_circular_intervals() {
        // brute force: enumerate every (start, len) interval, keep the shortest covering one
        let g = GridSpec::new(5, 2);
        for mask in 1u32..(1 << 5) {
            let cols: Vec<usize> = (0..5).filter(|c| mask & (1 << c) != 0).collect();
            let idx: Vec<i64> = cols.iter().map(|&c| c as i64 + 1).collect();
            let mut best = (usize::MAX, 0);
            for len in 1..=5 {
                for start in 0..5 {
                    if cols.iter().all(|&c| (c + 5 - start) % 5 < len) && len < best.0 {
                        best = (len, start);
                    }
                }
                if best.0 != usize::MAX {
                    break;
                }
            }
            let r = merge_cells(&idx, &g, 500, 100, true, ID).unwrap();
            assert_eq!(r.width, best.0 * 100, "cols {cols:?}");
        }
    }

    #[test]
    fn erp_rect_follows_mapping() {
        let g = GridSpec::default();
        let map = AffineMap::scale(2.0, 2.0);
        let r = merge_cells(&[4, 5], &g, 2000, 1000, true, map).unwrap();
        let e = r.erp_rect();
        assert_eq!((e.x0, e.x1, e.y0, e.y1), (3000.0, 5000.0, 0.0, 1332.0));
        assert!(e.contains_pixel(0, 0, 4000));
        assert!(e.contains_pixel(3999, 10, 4000));
        assert!(!e.contains_pixel(2000, 10, 4000));
    }

    proptest! {
        #[test]
        fn cells_tile_the_frame(w in 1usize..600, h in 1usize..400, cols in 1usize..12, rows in 1usize..12) {
            prop_assume!(w >= cols && h >= rows);
            let g = GridSpec::new(cols, rows);
            let mut cover = vec![0u8; w * h];
            for i in 1..=g.cell_count() {
                let c = cell_region(i as i64, &g, w, h, ID).unwrap();
                for y in c.y0..c.y0 + c.height {
                    for x in c.x0..c.x0 + c.width {
                        cover[y * w + x] += 1;
                        prop_assert_eq!(g.cell_index_at(x, y, w, h), Some(i));
                    }
                }
            }
            prop_assert!(cover.iter().all(|&n| n == 1));
        }

        #[test]
        fn nested_mapping_composes(
            levels in proptest::collection::vec((0.0f64..500.0, 0.0f64..500.0, 0.05f64..4.0, 0.05f64..4.0), 1..5),
            px in 0.0f64..2000.0, py in 0.0f64..1000.0,
        ) {
            let maps: Vec<AffineMap> = levels
                .iter()
                .map(|&(ox, oy, sx, sy)| AffineMap { offset_x: ox, offset_y: oy, scale_x: sx, scale_y: sy })
                .collect();
            // maps[0] is the outermost (frame 1 -> ERP)
            let mut cumulative = maps[0];
            for m in &maps[1..] {
                cumulative = m.then(&cumulative);
            }
            let (mut x, mut y) = (px, py);
            for m in maps.iter().rev() {
                (x, y) = m.apply(x, y);
            }
            let (cx, cy) = cumulative.apply(px, py);
            prop_assert!((cx - x).abs() < 1e-9 * x.abs().max(1.0));
            prop_assert!((cy - y).abs() < 1e-9 * y.abs().max(1.0));
        }
    }
}
