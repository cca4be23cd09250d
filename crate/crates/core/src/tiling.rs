//! High-resolution tiling: best-ratio grid selection, tile geometry,
//! thumbnail handling, and padding-token accounting for letterboxed
//! untiled inputs.
//!
//! Single images are split along a grid chosen to approximate their
//! aspect ratio and resized (with distortion) onto the exact grid canvas.
//! Multi-image and video inputs bypass tiling and are letterboxed into a
//! single base tile each. All geometry is exact integer arithmetic; no
//! pixels are touched.

use serde::{Deserialize, Serialize};

use crate::model::{Modality, Sample, VisionConfig};

/// A tile grid: `cols x rows` base tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub cols: u32,
    pub rows: u32,
}

impl Grid {
    pub fn tiles(&self) -> u32 {
        self.cols * self.rows
    }

    pub fn transpose(&self) -> Grid {
        Grid {
            cols: self.rows,
            rows: self.cols,
        }
    }
}

/// One tile rectangle in resized-canvas coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Geometry and token plan for one image or frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingPlan {
    pub grid: Grid,
    pub resized_width: u32,
    pub resized_height: u32,
    /// Row-major tiles covering the resized canvas exactly.
    pub tile_rects: Vec<TileRect>,
    /// True only when the image was split and a full-image thumbnail tile
    /// is appended after the slices.
    pub include_thumbnail: bool,
    pub tokens_per_tile: u64,
    pub total_vision_tokens: u64,
}

impl TilingPlan {
    /// Grid tiles plus the thumbnail, when present.
    pub fn tile_count(&self) -> u64 {
        self.grid.tiles() as u64 + self.include_thumbnail as u64
    }
}

/// All grids with `1 <= cols * rows <= max_slices`, ordered by ascending
/// tile count, then by ascending cols.
pub fn candidate_grids(max_slices: u32) -> Vec<Grid> {
    let mut grids = Vec::new();
    for cols in 1..=max_slices {
        for rows in 1..=max_slices / cols {
            grids.push(Grid { cols, rows });
        }
    }
    grids.sort_by_key(|g| (g.tiles(), g.cols));
    grids
}

// Aspect distance between a grid and an image is |ln(cols/rows) - ln(w/h)|
// = ln(p/q) with p = max(cols*h, rows*w), q = min(cols*h, rows*w).
// Ordering two distances therefore reduces to comparing p1/q1 vs p2/q2,
// done exactly by cross-multiplication in u128.
fn distance_ratio(grid: Grid, width: u32, height: u32) -> (u128, u128) {
    let a = grid.cols as u128 * height as u128;
    let b = grid.rows as u128 * width as u128;
    if a >= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn distance_cmp(g1: Grid, g2: Grid, width: u32, height: u32) -> std::cmp::Ordering {
    let (p1, q1) = distance_ratio(g1, width, height);
    let (p2, q2) = distance_ratio(g2, width, height);
    (p1 * q2).cmp(&(p2 * q1))
}

/// Chooses the candidate grid whose aspect ratio is log-closest to the
/// image's. Ties are broken by tile count: a larger grid wins only when
/// the image area exceeds half of that grid's canvas area, so small
/// images stay on few tiles and large images earn more.
pub fn select_grid(width: u32, height: u32, cfg: &VisionConfig) -> Grid {
    let base = cfg.base_resolution as u128;
    let area = width as u128 * height as u128;

    let mut best = Grid { cols: 1, rows: 1 };
    for grid in candidate_grids(cfg.max_slices) {
        match distance_cmp(grid, best, width, height) {
            std::cmp::Ordering::Less => best = grid,
            std::cmp::Ordering::Equal => {
                if 2 * area > grid.tiles() as u128 * base * base {
                    best = grid;
                }
            }
            std::cmp::Ordering::Greater => {}
        }
    }
    best
}

fn grid_plan(grid: Grid, cfg: &VisionConfig, use_thumbnail: bool) -> TilingPlan {
    let base = cfg.base_resolution;
    let resized_width = grid.cols * base;
    let resized_height = grid.rows * base;

    let mut tile_rects = Vec::with_capacity(grid.tiles() as usize);
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            tile_rects.push(TileRect {
                x: col * base,
                y: row * base,
                w: base,
                h: base,
            });
        }
    }

    let include_thumbnail = use_thumbnail && grid.tiles() > 1;
    let tokens_per_tile = cfg.tokens_per_tile();
    let total_tiles = grid.tiles() as u64 + include_thumbnail as u64;

    TilingPlan {
        grid,
        resized_width,
        resized_height,
        tile_rects,
        include_thumbnail,
        tokens_per_tile,
        total_vision_tokens: total_tiles * tokens_per_tile,
    }
}

/// Produces one [`TilingPlan`] per image/frame of a valid sample.
///
/// Single images go through grid selection; multi-image and video inputs
/// bypass tiling entirely and map each image/frame onto one untiled base
/// tile. Text yields no plans.
pub fn plan_tiling(sample: &Sample, cfg: &VisionConfig) -> Vec<TilingPlan> {
    match sample.modality {
        Modality::Text => Vec::new(),
        Modality::SingleImage => {
            let (w, h) = sample.image_dims[0];
            let grid = select_grid(w, h, cfg);
            vec![grid_plan(grid, cfg, cfg.use_thumbnail)]
        }
        Modality::MultiImage { .. } | Modality::Video { .. } => sample
            .image_dims
            .iter()
            .map(|_| grid_plan(Grid { cols: 1, rows: 1 }, cfg, false))
            .collect(),
    }
}

// Content band of the letterboxed short axis, in whole patches: the image
// side maps to round(patch_grid * short / long) patches (at least one),
// centered on the grid. The long axis is fully covered.
fn snapped_band(short: u64, long: u64, patch_grid: u32) -> (u32, u32) {
    let g = patch_grid as u64;
    let n = ((2 * g * short + long) / (2 * long)).clamp(1, g) as u32;
    let start = (patch_grid - n) / 2;
    (start, start + n)
}

// Does the block of patches aggregated by downsampled index `block`
// intersect the half-open content interval `[lo, hi)`?
fn block_hits(block: u32, downsample: u32, patch_grid: u32, lo: u32, hi: u32) -> bool {
    let start = block * downsample;
    let end = ((block + 1) * downsample).min(patch_grid);
    start < hi && end > lo
}

/// Models symmetric letterboxing of a `width x height` input into the
/// base square. A post-downsample token is dropped iff every encoder
/// patch it aggregates lies entirely inside the padding band; the
/// content/padding split is made at whole-patch granularity. Returns the
/// kept-token count and the keep mask over the downsampled grid.
pub fn effective_tokens_letterboxed(
    width: u32,
    height: u32,
    cfg: &VisionConfig,
) -> (u64, Vec<Vec<bool>>) {
    let g = cfg.patch_grid;
    let side = cfg.downsampled_side();

    // Vertical padding when the image is wide, horizontal when tall.
    let (row_lo, row_hi) = if width >= height {
        snapped_band(height as u64, width as u64, g)
    } else {
        (0, g)
    };
    let (col_lo, col_hi) = if height >= width {
        snapped_band(width as u64, height as u64, g)
    } else {
        (0, g)
    };

    let row_ok: Vec<bool> = (0..side)
        .map(|r| block_hits(r, cfg.downsample, g, row_lo, row_hi))
        .collect();
    let col_ok: Vec<bool> = (0..side)
        .map(|c| block_hits(c, cfg.downsample, g, col_lo, col_hi))
        .collect();

    let mask: Vec<Vec<bool>> = row_ok
        .iter()
        .map(|&r| col_ok.iter().map(|&c| r && c).collect())
        .collect();
    let kept = mask.iter().flatten().filter(|&&k| k).count() as u64;
    (kept, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VisionConfig;
    use proptest::prelude::*;

    fn cfg() -> VisionConfig {
        VisionConfig::default()
    }

    #[test]
    fn candidate_grids_smallest_cases() {
        assert_eq!(candidate_grids(1), vec![Grid { cols: 1, rows: 1 }]);
        assert_eq!(
            candidate_grids(2),
            vec![
                Grid { cols: 1, rows: 1 },
                Grid { cols: 1, rows: 2 },
                Grid { cols: 2, rows: 1 },
            ]
        );
    }

    #[test]
    fn candidate_grids_count_matches_enumeration_oracle() {
        // Independent oracle: count (cols, rows) pairs by direct scan.
        for max_slices in 1..=12u32 {
            let mut expected = 0usize;
            for c in 1..=max_slices {
                for r in 1..=max_slices {
                    if c * r <= max_slices {
                        expected += 1;
                    }
                }
            }
            let grids = candidate_grids(max_slices);
            assert_eq!(grids.len(), expected, "max_slices={max_slices}");
            // Deduplicated.
            let mut dedup = grids.clone();
            dedup.dedup();
            assert_eq!(dedup.len(), grids.len());
        }
        // Frozen from the oracle above for the default slice cap.
        assert_eq!(candidate_grids(9).len(), 23);
    }

    #[test]
    fn candidate_grids_order_is_product_then_cols() {
        let grids = candidate_grids(9);
        let keys: Vec<(u32, u32)> = grids.iter().map(|g| (g.tiles(), g.cols)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    // Reference implementation of grid selection used as the test oracle:
    // floating-point log distances, scanning candidates in order with the
    // documented area tie-break.
    fn select_grid_oracle(width: u32, height: u32, cfg: &VisionConfig) -> Grid {
        let image_ratio = (width as f64 / height as f64).ln();
        let mut best = Grid { cols: 1, rows: 1 };
        let mut best_d = f64::INFINITY;
        for grid in candidate_grids(cfg.max_slices) {
            let d = ((grid.cols as f64 / grid.rows as f64).ln() - image_ratio).abs();
            if d < best_d {
                best = grid;
                best_d = d;
            } else if d == best_d {
                let half_canvas = 0.5
                    * grid.tiles() as f64
                    * (cfg.base_resolution as f64)
                    * (cfg.base_resolution as f64);
                if (width as f64) * (height as f64) > half_canvas {
                    best = grid;
                }
            }
        }
        best
    }

    #[test]
    fn square_small_image_stays_on_one_tile() {
        assert_eq!(select_grid(384, 384, &cfg()), Grid { cols: 1, rows: 1 });
    }

    #[test]
    fn wide_image_matches_oracle_tie_break() {
        // 800x400 ties between (2,1) and (4,2); the image covers less than
        // half the 4x2 canvas, so the smaller grid wins.
        let expected = select_grid_oracle(800, 400, &cfg());
        assert_eq!(expected, Grid { cols: 2, rows: 1 });
        assert_eq!(select_grid(800, 400, &cfg()), expected);
        // Four times the area crosses the 4x2 threshold.
        assert_eq!(
            select_grid(1600, 800, &cfg()),
            select_grid_oracle(1600, 800, &cfg())
        );
        assert_eq!(select_grid(1600, 800, &cfg()), Grid { cols: 4, rows: 2 });
    }

    #[test]
    fn extreme_aspect_clamps_to_widest_grid() {
        assert_eq!(select_grid(4000, 400, &cfg()), Grid { cols: 9, rows: 1 });
        assert_eq!(
            select_grid(4000, 400, &cfg()),
            select_grid_oracle(4000, 400, &cfg())
        );
    }

    fn single_image(id: &str, w: u32, h: u32) -> Sample {
        Sample {
            id: id.to_string(),
            modality: Modality::SingleImage,
            image_dims: vec![(w, h)],
            text_tokens: 0,
            quality_tier: 1,
            is_cot: false,
            payload_path: None,
        }
    }

    #[test]
    fn base_resolution_single_image_is_one_tile() {
        let plans = plan_tiling(&single_image("s", 384, 384), &cfg());
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].grid, Grid { cols: 1, rows: 1 });
        assert!(!plans[0].include_thumbnail);
        assert_eq!(plans[0].total_vision_tokens, 196);
    }

    #[test]
    fn large_square_image_fills_grid_plus_thumbnail() {
        let plans = plan_tiling(&single_image("s", 1152, 1152), &cfg());
        assert_eq!(plans[0].grid, Grid { cols: 3, rows: 3 });
        assert!(plans[0].include_thumbnail);
        assert_eq!(plans[0].tile_count(), 10);
        assert_eq!(plans[0].total_vision_tokens, 1960);
    }

    #[test]
    fn video_frames_bypass_tiling() {
        let sample = Sample {
            id: "v".to_string(),
            modality: Modality::Video { frames: 8 },
            image_dims: vec![(1920, 1080); 8],
            text_tokens: 0,
            quality_tier: 1,
            is_cot: false,
            payload_path: None,
        };
        let plans = plan_tiling(&sample, &cfg());
        assert_eq!(plans.len(), 8);
        for plan in &plans {
            assert_eq!(plan.grid, Grid { cols: 1, rows: 1 });
            assert!(!plan.include_thumbnail);
            assert_eq!(plan.total_vision_tokens, 196);
        }
    }

    #[test]
    fn text_samples_have_no_plans() {
        let sample = Sample {
            id: "t".to_string(),
            modality: Modality::Text,
            image_dims: vec![],
            text_tokens: 5,
            quality_tier: 1,
            is_cot: false,
            payload_path: None,
        };
        assert!(plan_tiling(&sample, &cfg()).is_empty());
    }

    #[test]
    fn tile_rects_partition_the_canvas() {
        let plans = plan_tiling(&single_image("s", 1000, 700), &cfg());
        let plan = &plans[0];
        let area: u64 = plan
            .tile_rects
            .iter()
            .map(|r| r.w as u64 * r.h as u64)
            .sum();
        assert_eq!(area, plan.resized_width as u64 * plan.resized_height as u64);
        for (i, a) in plan.tile_rects.iter().enumerate() {
            assert_eq!((a.w, a.h), (384, 384));
            for b in &plan.tile_rects[i + 1..] {
                let disjoint =
                    a.x + a.w <= b.x || b.x + b.w <= a.x || a.y + a.h <= b.y || b.y + b.h <= a.y;
                assert!(disjoint, "tiles overlap: {a:?} vs {b:?}");
            }
        }
    }

    // Letterbox oracle: classify every patch against the snapped content
    // band, then scan each token's patch block literally.
    fn letterbox_oracle(width: u32, height: u32, cfg: &VisionConfig) -> u64 {
        let g = cfg.patch_grid;
        let ds = cfg.downsample;
        let side = g.div_ceil(ds);

        let band = |short: u64, long: u64| -> (u32, u32) {
            let n = ((2 * g as u64 * short + long) / (2 * long)).clamp(1, g as u64) as u32;
            let start = (g - n) / 2;
            (start, start + n)
        };
        let (r0, r1) = if width >= height {
            band(height as u64, width as u64)
        } else {
            (0, g)
        };
        let (c0, c1) = if height >= width {
            band(width as u64, height as u64)
        } else {
            (0, g)
        };

        let mut kept = 0;
        for tr in 0..side {
            for tc in 0..side {
                let mut any_content = false;
                for pr in tr * ds..((tr + 1) * ds).min(g) {
                    for pc in tc * ds..((tc + 1) * ds).min(g) {
                        if pr >= r0 && pr < r1 && pc >= c0 && pc < c1 {
                            any_content = true;
                        }
                    }
                }
                if any_content {
                    kept += 1;
                }
            }
        }
        kept
    }

    #[test]
    fn square_input_keeps_every_token() {
        let (kept, mask) = effective_tokens_letterboxed(384, 384, &cfg());
        assert_eq!(kept, 196);
        assert!(mask.iter().flatten().all(|&k| k));
    }

    #[test]
    fn half_height_input_keeps_half_the_rows() {
        // Frozen from the oracle: a 2:1 input maps to 7 of 14 token rows.
        assert_eq!(letterbox_oracle(384, 192, &cfg()), 98);
        let (kept, mask) = effective_tokens_letterboxed(384, 192, &cfg());
        assert_eq!(kept, 98);
        let content_rows = mask.iter().filter(|row| row.iter().any(|&k| k)).count();
        assert_eq!(content_rows, 7);
    }

    #[test]
    fn degenerate_strip_keeps_one_row() {
        assert_eq!(letterbox_oracle(384, 1, &cfg()), 14);
        let (kept, _) = effective_tokens_letterboxed(384, 1, &cfg());
        assert_eq!(kept, 14);
    }

    proptest! {
        #[test]
        fn selected_grid_is_within_slice_cap(w in 1u32..5000, h in 1u32..5000) {
            let c = cfg();
            let grid = select_grid(w, h, &c);
            prop_assert!(grid.tiles() >= 1 && grid.tiles() <= c.max_slices);
        }

        #[test]
        fn select_grid_matches_float_oracle(w in 1u32..5000, h in 1u32..5000) {
            let c = cfg();
            prop_assert_eq!(select_grid(w, h, &c), select_grid_oracle(w, h, &c));
        }

        #[test]
        fn select_grid_is_transpose_consistent(w in 1u32..5000, h in 1u32..5000, max in 1u32..16) {
            let c = VisionConfig { max_slices: max, ..cfg() };
            prop_assert_eq!(select_grid(h, w, &c), select_grid(w, h, &c).transpose());
        }

        // Uniform scaling preserves every aspect-distance comparison; the
        // selection can only move when the scaled area crosses one of the
        // half-canvas tie-break thresholds.
        #[test]
        fn select_grid_scale_invariant_between_thresholds(
            w in 1u32..2000, h in 1u32..2000, k in 1u32..4,
        ) {
            let c = cfg();
            let regime = |area: u128| -> Vec<bool> {
                candidate_grids(c.max_slices)
                    .iter()
                    .map(|g| {
                        2 * area
                            > g.tiles() as u128
                                * c.base_resolution as u128
                                * c.base_resolution as u128
                    })
                    .collect()
            };
            let a1 = w as u128 * h as u128;
            let a2 = (w * k) as u128 * (h * k) as u128;
            if regime(a1) == regime(a2) {
                prop_assert_eq!(select_grid(w, h, &c), select_grid(w * k, h * k, &c));
            }
        }

        #[test]
        fn plan_total_tiles_bounded(w in 1u32..8000, h in 1u32..8000) {
            let c = cfg();
            let plans = plan_tiling(&single_image("p", w, h), &c);
            let tiles = plans[0].tile_count();
            prop_assert!(tiles >= 1 && tiles <= c.max_slices as u64 + 1);
        }

        #[test]
        fn letterbox_matches_oracle(w in 1u32..4096, h in 1u32..4096) {
            let c = cfg();
            let (kept, _) = effective_tokens_letterboxed(w, h, &c);
            prop_assert_eq!(kept, letterbox_oracle(w, h, &c));
        }

        #[test]
        fn letterbox_monotone_in_aspect(w in 1u32..2048, h1 in 1u32..2048, h2 in 1u32..2048) {
            // Wider-than-tall inputs only; nearer-square keeps more tokens.
            let c = cfg();
            let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
            let w = w.max(hi);
            let (kept_lo, _) = effective_tokens_letterboxed(w, lo, &c);
            let (kept_hi, _) = effective_tokens_letterboxed(w, hi, &c);
            prop_assert!(kept_lo <= kept_hi);
        }

        #[test]
        fn letterbox_transpose_symmetric(w in 1u32..4096, h in 1u32..4096) {
            let c = cfg();
            let (kept_a, _) = effective_tokens_letterboxed(w, h, &c);
            let (kept_b, _) = effective_tokens_letterboxed(h, w, &c);
            prop_assert_eq!(kept_a, kept_b);
        }
    }
}
