//! Tiled heightfield with four terrain families at difficulty levels 0..=9.
//!
//! Tile `(row, col)` covers `x in [col*side, (col+1)*side]` and
//! `y in [row*side, (row+1)*side]`. Every row holds one terrain family and
//! the level equals the column index scaled onto 0..=9.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TerrainConfig;

pub const MAX_LEVEL: u8 = 9;
/// Side of the flat spawn platform at every tile center.
pub const PLATFORM_SIDE: f64 = 1.0;
/// Height-scan pattern: `SCAN_POINTS x SCAN_POINTS` over a `SCAN_SPAN` square.
pub const SCAN_POINTS: usize = 11;
pub const SCAN_SPAN: f64 = 1.0;
pub const NUM_HEIGHT_SAMPLES: usize = SCAN_POINTS * SCAN_POINTS;

const ROUGH_LATTICE: f64 = 0.25;
const OBSTACLES_PER_TILE: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum TerrainError {
    #[error("terrain proportions must be non-negative and sum to 1 (got {0:?})")]
    InvalidProportions([f64; 4]),
    #[error("terrain level {0} outside 0..=9")]
    LevelOutOfRange(u8),
    #[error("point ({x}, {y}) lies outside the heightfield")]
    OutOfBounds { x: f64, y: f64 },
    #[error("unknown terrain type {0:?}")]
    UnknownType(String),
    #[error("invalid terrain geometry: {0}")]
    Geometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TerrainType {
    Slope,
    RoughSlope,
    Stairs,
    DiscreteObstacles,
}

impl TerrainType {
    pub const ALL: [TerrainType; 4] = [
        TerrainType::Slope,
        TerrainType::RoughSlope,
        TerrainType::Stairs,
        TerrainType::DiscreteObstacles,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TerrainType::Slope => "slope",
            TerrainType::RoughSlope => "rough",
            TerrainType::Stairs => "stairs",
            TerrainType::DiscreteObstacles => "obstacles",
        }
    }

    /// Slopes and rough slopes get the widened command ranges.
    pub fn is_sloped(self) -> bool {
        matches!(self, TerrainType::Slope | TerrainType::RoughSlope)
    }
}

impl fmt::Display for TerrainType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TerrainType {
    type Err = TerrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slope" | "slopes" => Ok(TerrainType::Slope),
            "rough" | "rough_slope" | "rough-slopes" => Ok(TerrainType::RoughSlope),
            "stairs" => Ok(TerrainType::Stairs),
            "obstacles" | "discrete_obstacles" => Ok(TerrainType::DiscreteObstacles),
            other => Err(TerrainError::UnknownType(other.to_string())),
        }
    }
}

/// Geometric parameters of one tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TileParams {
    Slope { inclination_deg: f64 },
    RoughSlope { inclination_deg: f64, noise_amplitude: f64 },
    /// `step_width` is the lower bound of the sampled tread width range.
    Stairs { step_height: f64, width_range: (f64, f64) },
    DiscreteObstacles { height: f64 },
}

impl TileParams {
    /// Largest elevation magnitude the tile may reach relative to its border.
    pub fn noise_amplitude(&self) -> f64 {
        match *self {
            TileParams::Slope { .. } => 0.0,
            TileParams::RoughSlope { noise_amplitude, .. } => noise_amplitude,
            TileParams::Stairs { step_height, .. } => step_height,
            TileParams::DiscreteObstacles { height } => height,
        }
    }
}

/// Tile geometry for a terrain family at a difficulty level (lengths in m).
pub fn tile_params(kind: TerrainType, level: u8) -> Result<TileParams, TerrainError> {
    if level > MAX_LEVEL {
        return Err(TerrainError::LevelOutOfRange(level));
    }
    let frac = level as f64 / MAX_LEVEL as f64;
    let inclination_deg = 40.0 * frac;
    Ok(match kind {
        TerrainType::Slope => TileParams::Slope { inclination_deg },
        TerrainType::RoughSlope => TileParams::RoughSlope {
            inclination_deg,
            noise_amplitude: (1.0 + 7.0 * frac) / 100.0,
        },
        TerrainType::Stairs => TileParams::Stairs {
            step_height: (5.0 + 18.0 * frac) / 100.0,
            width_range: (0.20, 0.40),
        },
        TerrainType::DiscreteObstacles => TileParams::DiscreteObstacles {
            height: (5.0 + 10.0 * frac) / 100.0,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileMeta {
    pub kind: TerrainType,
    pub level: u8,
    /// Stair tread width drawn for this tile; zero for other families.
    pub step_width: f64,
}

/// Discretized elevation grid, immutable after construction.
#[derive(Debug, Clone)]
pub struct HeightField {
    /// Row-major, `ny` rows along y by `nx` columns along x.
    grid: Vec<f32>,
    nx: usize,
    ny: usize,
    pub cell_size: f64,
    pub tile_rows: usize,
    pub tile_cols: usize,
    pub tile_side: f64,
    tiles: Vec<TileMeta>,
}

impl HeightField {
    pub fn dims(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn width(&self) -> f64 {
        self.tile_cols as f64 * self.tile_side
    }

    pub fn length(&self) -> f64 {
        self.tile_rows as f64 * self.tile_side
    }

    pub fn tile(&self, row: usize, col: usize) -> &TileMeta {
        &self.tiles[row * self.tile_cols + col]
    }

    pub fn row_type(&self, row: usize) -> TerrainType {
        self.tile(row, 0).kind
    }

    pub fn rows_of_type(&self, kind: TerrainType) -> Vec<usize> {
        (0..self.tile_rows).filter(|&r| self.row_type(r) == kind).collect()
    }

    /// Column that holds `level` in every row.
    pub fn column_for_level(&self, level: u8) -> usize {
        if self.tile_cols <= 1 {
            return 0;
        }
        let c = (level as f64 / MAX_LEVEL as f64 * (self.tile_cols - 1) as f64).round() as usize;
        c.min(self.tile_cols - 1)
    }

    pub fn tile_center(&self, row: usize, col: usize) -> (f64, f64) {
        ((col as f64 + 0.5) * self.tile_side, (row as f64 + 0.5) * self.tile_side)
    }

    /// Stored elevation at grid node `(iy, ix)`.
    pub fn node(&self, iy: usize, ix: usize) -> f64 {
        self.grid[iy * self.nx + ix] as f64
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= self.width() && y <= self.length()
    }

    /// Bilinear interpolation of the four surrounding nodes.
    pub fn height_at(&self, x: f64, y: f64) -> Result<f64, TerrainError> {
        if !(x.is_finite() && y.is_finite() && self.contains(x, y)) {
            return Err(TerrainError::OutOfBounds { x, y });
        }
        Ok(self.sample(x, y))
    }

    /// Like [`height_at`](Self::height_at) but clamps the query to the field edge.
    pub fn height_clamped(&self, x: f64, y: f64) -> f64 {
        let x = if x.is_finite() { x.clamp(0.0, self.width()) } else { 0.0 };
        let y = if y.is_finite() { y.clamp(0.0, self.length()) } else { 0.0 };
        self.sample(x, y)
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = x / self.cell_size;
        let fy = y / self.cell_size;
        let ix = (fx.floor() as usize).min(self.nx - 2);
        let iy = (fy.floor() as usize).min(self.ny - 2);
        let tx = fx - ix as f64;
        let ty = fy - iy as f64;
        let h00 = self.node(iy, ix);
        let h01 = self.node(iy, ix + 1);
        let h10 = self.node(iy + 1, ix);
        let h11 = self.node(iy + 1, ix + 1);
        let lo = h00 + (h01 - h00) * tx;
        let hi = h10 + (h11 - h10) * tx;
        lo + (hi - lo) * ty
    }

    /// Elevations at the body-frame scan pattern, relative to the base height.
    ///
    /// The pattern is yawed with the base; roll and pitch are ignored.
    pub fn height_samples(&self, base_pos: [f64; 3], yaw: f64, out: &mut [f64]) {
        assert_eq!(out.len(), NUM_HEIGHT_SAMPLES);
        let (s, c) = yaw.sin_cos();
        let step = SCAN_SPAN / (SCAN_POINTS - 1) as f64;
        let half = 0.5 * SCAN_SPAN;
        let mut k = 0;
        for i in 0..SCAN_POINTS {
            let bx = -half + i as f64 * step;
            for j in 0..SCAN_POINTS {
                let by = -half + j as f64 * step;
                let wx = base_pos[0] + c * bx - s * by;
                let wy = base_pos[1] + s * bx + c * by;
                out[k] = self.height_clamped(wx, wy) - base_pos[2];
                k += 1;
            }
        }
    }

    /// Writes the grid as whitespace-separated rows (one grid row per line).
    pub fn write_matrix<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# rows={} cols={} cell_size={} tile_rows={} tile_cols={} tile_side={}",
            self.ny, self.nx, self.cell_size, self.tile_rows, self.tile_cols, self.tile_side
        )?;
        for r in 0..self.tile_rows {
            let row: Vec<String> = (0..self.tile_cols)
                .map(|c| {
                    let t = self.tile(r, c);
                    format!("{}:{}", t.kind, t.level)
                })
                .collect();
            writeln!(w, "# tiles[{r}] {}", row.join(" "))?;
        }
        let mut line = String::new();
        for iy in 0..self.ny {
            line.clear();
            for ix in 0..self.nx {
                if ix > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{:.4}", self.grid[iy * self.nx + ix]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Type of each tile row for the given proportions.
pub fn row_types(tile_rows: usize, proportions: [f64; 4]) -> Vec<TerrainType> {
    let mut cumulative = [0.0; 4];
    let mut acc = 0.0;
    for (i, p) in proportions.iter().enumerate() {
        acc += p;
        cumulative[i] = acc;
    }
    (0..tile_rows)
        .map(|r| {
            let u = (r as f64 + 0.5) / tile_rows as f64;
            let idx = cumulative.iter().position(|&c| u < c).unwrap_or_else(|| {
                // Rounding at the end of the cumulative sum: pick the last non-empty family.
                proportions.iter().rposition(|&p| p > 0.0).unwrap_or(0)
            });
            TerrainType::ALL[idx]
        })
        .collect()
}

/// Builds the default-geometry field (20 x 10 tiles of 10 m, 5 cm cells).
pub fn build_field(seed: u64, proportions: [f64; 4]) -> Result<HeightField, TerrainError> {
    let cfg = TerrainConfig {
        proportions,
        ..TerrainConfig::default()
    };
    build_field_with(seed, &cfg)
}

pub fn build_field_with(seed: u64, cfg: &TerrainConfig) -> Result<HeightField, TerrainError> {
    let p = cfg.proportions;
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 || p.iter().any(|&x| !(x >= 0.0)) {
        return Err(TerrainError::InvalidProportions(p));
    }
    let cells_per_tile = cfg.tile_side / cfg.cell_size;
    if cfg.tile_rows == 0
        || cfg.tile_cols == 0
        || !(cells_per_tile >= 4.0)
        || (cells_per_tile - cells_per_tile.round()).abs() > 1e-9
    {
        return Err(TerrainError::Geometry(format!(
            "tile side {} must be a multiple (≥ 4) of cell size {}",
            cfg.tile_side, cfg.cell_size
        )));
    }
    let cpt = cells_per_tile.round() as usize;
    let nx = cfg.tile_cols * cpt + 1;
    let ny = cfg.tile_rows * cpt + 1;
    let mut grid = vec![0.0f32; nx * ny];
    let kinds = row_types(cfg.tile_rows, p);
    let mut tiles = Vec::with_capacity(cfg.tile_rows * cfg.tile_cols);

    let mut field = HeightField {
        grid: Vec::new(),
        nx,
        ny,
        cell_size: cfg.cell_size,
        tile_rows: cfg.tile_rows,
        tile_cols: cfg.tile_cols,
        tile_side: cfg.tile_side,
        tiles: Vec::new(),
    };

    for (row, &kind) in kinds.iter().enumerate() {
        for col in 0..cfg.tile_cols {
            let level = if cfg.tile_cols <= 1 {
                0
            } else {
                ((col as f64) * MAX_LEVEL as f64 / (cfg.tile_cols - 1) as f64).round() as u8
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((row * cfg.tile_cols + col) as u64);
            let params = tile_params(kind, level)?;
            let step_width = match params {
                TileParams::Stairs { width_range, .. } => rng.random_range(width_range.0..=width_range.1),
                _ => 0.0,
            };
            let tile = TileGen::new(params, step_width, cfg.tile_side, cfg.cell_size, &mut rng);
            for ly in 0..=cpt {
                for lx in 0..=cpt {
                    let h = tile.height(lx as f64 * cfg.cell_size, ly as f64 * cfg.cell_size);
                    grid[(row * cpt + ly) * nx + col * cpt + lx] = h as f32;
                }
            }
            tiles.push(TileMeta { kind, level, step_width });
        }
    }
    field.grid = grid;
    field.tiles = tiles;
    Ok(field)
}

/// Procedural height function of one tile in tile-local coordinates.
struct TileGen {
    params: TileParams,
    side: f64,
    step_width: f64,
    /// Coarse noise lattice for rough slopes.
    noise: Vec<f64>,
    noise_n: usize,
    /// Axis-aligned boxes `(x0, y0, x1, y1, height)` for obstacles.
    boxes: Vec<(f64, f64, f64, f64, f64)>,
}

impl TileGen {
    fn new(params: TileParams, step_width: f64, side: f64, _cell: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut noise = Vec::new();
        let mut noise_n = 0;
        let mut boxes = Vec::new();
        match params {
            TileParams::RoughSlope { noise_amplitude, .. } => {
                noise_n = (side / ROUGH_LATTICE).round() as usize + 1;
                noise = (0..noise_n * noise_n)
                    .map(|_| rng.random_range(-noise_amplitude..=noise_amplitude))
                    .collect();
            }
            TileParams::DiscreteObstacles { height } => {
                let lo = 0.5 * (side - PLATFORM_SIDE);
                let hi = lo + PLATFORM_SIDE;
                while boxes.len() < OBSTACLES_PER_TILE {
                    let w = rng.random_range(0.5..=2.0);
                    let l = rng.random_range(0.5..=2.0);
                    let x0 = rng.random_range(0.0..(side - w));
                    let y0 = rng.random_range(0.0..(side - l));
                    let h = rng.random_range(-height..=height);
                    // Keep the spawn platform clear.
                    let overlaps = x0 < hi && x0 + w > lo && y0 < hi && y0 + l > lo;
                    if !overlaps {
                        boxes.push((x0, y0, x0 + w, y0 + l, h));
                    }
                }
            }
            _ => {}
        }
        Self {
            params,
            side,
            step_width,
            noise,
            noise_n,
            boxes,
        }
    }

    /// Chebyshev distance to the tile border, capped at the platform edge.
    fn pyramid_distance(&self, x: f64, y: f64) -> f64 {
        let d = x.min(y).min(self.side - x).min(self.side - y).max(0.0);
        d.min(0.5 * (self.side - PLATFORM_SIDE))
    }

    fn height(&self, x: f64, y: f64) -> f64 {
        match self.params {
            TileParams::Slope { inclination_deg } => {
                inclination_deg.to_radians().tan() * self.pyramid_distance(x, y)
            }
            TileParams::RoughSlope { inclination_deg, .. } => {
                inclination_deg.to_radians().tan() * self.pyramid_distance(x, y) + self.noise_at(x, y)
            }
            TileParams::Stairs { step_height, .. } => {
                let d = self.pyramid_distance(x, y);
                step_height * (d / self.step_width + 1e-9).floor()
            }
            TileParams::DiscreteObstacles { .. } => self
                .boxes
                .iter()
                .rev()
                .find(|b| x >= b.0 && x < b.2 && y >= b.1 && y < b.3)
                .map(|b| b.4)
                .unwrap_or(0.0),
        }
    }

    fn noise_at(&self, x: f64, y: f64) -> f64 {
        let fx = x / ROUGH_LATTICE;
        let fy = y / ROUGH_LATTICE;
        let ix = (fx.floor() as usize).min(self.noise_n - 2);
        let iy = (fy.floor() as usize).min(self.noise_n - 2);
        let tx = fx - ix as f64;
        let ty = fy - iy as f64;
        let n = |i: usize, j: usize| self.noise[j * self.noise_n + i];
        let lo = n(ix, iy) + (n(ix + 1, iy) - n(ix, iy)) * tx;
        let hi = n(ix, iy + 1) + (n(ix + 1, iy + 1) - n(ix, iy + 1)) * tx;
        // Tile borders stay at zero so neighbouring tiles join continuously.
        let edge = x.min(y).min(self.side - x).min(self.side - y);
        let fade = (edge / ROUGH_LATTICE).clamp(0.0, 1.0);
        (lo + (hi - lo) * ty) * fade
    }
}
