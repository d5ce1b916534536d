//! Scene geometry: binary occupancy grids, transmitter placement and the
//! line-of-sight primitive used by the propagation solver.
//!
//! Coordinates are continuous and measured in cells. Cell `(i, j)` covers the
//! closed square `[i, i + 1] x [j, j + 1]`; its center is `(i + 0.5, j + 0.5)`.
//! Multiply by `cell_size` to obtain meters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::radiomap::RadioMap;

/// Distance (in cells) trimmed from both ends of a segment before testing it
/// against occupied cells. Keeps reflection points that sit on a face from
/// registering as hits on the face's own cell.
pub const SEGMENT_TRIM: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(self, other: Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }
}

/// Binary occupancy matrix; `1` marks a non-penetrable obstacle.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    cell_size: f64,
    cells: Vec<u8>,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, cell_size: f64, cells: Vec<u8>) -> Result<Self> {
        if width < 4 || height < 4 {
            return Err(Error::arg(format!("grid must be at least 4x4, got {width}x{height}")));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::arg(format!("cell size must be positive, got {cell_size}")));
        }
        if cells.len() != width * height {
            return Err(Error::arg(format!("expected {} cells, got {}", width * height, cells.len())));
        }
        if cells.iter().any(|&c| c > 1) {
            return Err(Error::arg("occupancy cells must be exactly 0 or 1"));
        }
        Ok(OccupancyGrid { width, height, cell_size, cells })
    }

    pub fn empty(width: usize, height: usize, cell_size: f64) -> Result<Self> {
        Self::new(width, height, cell_size, vec![0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn is_occupied(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.width + i] == 1
    }

    /// Occupancy lookup that treats everything outside the grid as free.
    pub fn occupied_at(&self, i: isize, j: isize) -> bool {
        i >= 0
            && j >= 0
            && (i as usize) < self.width
            && (j as usize) < self.height
            && self.is_occupied(i as usize, j as usize)
    }

    pub fn set(&mut self, i: usize, j: usize, occupied: bool) {
        self.cells[j * self.width + i] = occupied as u8;
    }

    /// Marks the rectangle of cells `[x0, x1) x [y0, y1)` as occupied.
    pub fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize) {
        for j in y0..y1.min(self.height) {
            for i in x0..x1.min(self.width) {
                self.set(i, j, true);
            }
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64
    }

    /// Cell index containing `p`; points on the far boundary map to the last cell.
    pub fn cell_of(&self, p: Point) -> (usize, usize) {
        let i = (p.x.floor().max(0.0) as usize).min(self.width - 1);
        let j = (p.y.floor().max(0.0) as usize).min(self.height - 1);
        (i, j)
    }

    pub fn is_free_point(&self, p: Point) -> bool {
        if !self.contains(p) {
            return false;
        }
        let (i, j) = self.cell_of(p);
        !self.is_occupied(i, j)
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.cells.iter().filter(|&&c| c == 1).count() as f64 / self.cells.len() as f64
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        Point::new(i as f64 + 0.5, j as f64 + 0.5)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transmitter {
    pub x: f64,
    pub y: f64,
    pub power: f64,
}

impl Transmitter {
    pub fn at(x: f64, y: f64) -> Self {
        Transmitter { x, y, power: 1.0 }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub grid: OccupancyGrid,
    pub tx: Transmitter,
    pub seed: u64,
    pub tag: String,
}

impl Scene {
    pub fn new(grid: OccupancyGrid, tx: Transmitter, seed: u64, tag: impl Into<String>) -> Result<Self> {
        if !(tx.power > 0.0 && tx.power.is_finite()) {
            return Err(Error::arg(format!("transmitter power must be positive, got {}", tx.power)));
        }
        if !grid.is_free_point(tx.position()) {
            return Err(Error::arg(format!(
                "transmitter at ({}, {}) is outside the grid or inside an obstacle",
                tx.x, tx.y
            )));
        }
        Ok(Scene { grid, tx, seed, tag: tag.into() })
    }
}

/// Parameters of the random urban-layout generator. Ranges are inclusive.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub building_count: (usize, usize),
    pub building_size: (usize, usize),
    /// Free border (cells) kept around the grid edge.
    pub margin: usize,
    /// Single-cell blockers (vehicle-like occluders) added after the buildings.
    pub blocker_count: (usize, usize),
    pub max_retries: usize,
}

impl SceneParams {
    /// 32x32 desk-scale layouts.
    pub fn desk() -> Self {
        SceneParams {
            width: 32,
            height: 32,
            cell_size: 1.0,
            building_count: (2, 5),
            building_size: (3, 8),
            margin: 1,
            blocker_count: (0, 0),
            max_retries: 1000,
        }
    }

    /// 256x256 grid at 1 m resolution.
    pub fn benchmark() -> Self {
        SceneParams {
            width: 256,
            height: 256,
            cell_size: 1.0,
            building_count: (20, 60),
            building_size: (8, 30),
            margin: 2,
            blocker_count: (0, 0),
            max_retries: 10_000,
        }
    }

    /// Upper bound on the occupied-cell fraction these parameters can produce.
    pub fn max_coverage(&self) -> f64 {
        let per = (self.building_size.1 * self.building_size.1) as f64;
        let cells = (self.width * self.height) as f64;
        ((self.building_count.1 as f64 * per + self.blocker_count.1 as f64) / cells).min(1.0)
    }

    fn validate(&self) -> Result<()> {
        if self.building_count.0 > self.building_count.1
            || self.building_size.0 > self.building_size.1
            || self.blocker_count.0 > self.blocker_count.1
        {
            return Err(Error::arg("scene parameter ranges must satisfy min <= max"));
        }
        if self.building_size.0 == 0 && self.building_count.1 > 0 {
            return Err(Error::arg("building size must be at least one cell"));
        }
        let span_x = self.width.saturating_sub(2 * self.margin);
        let span_y = self.height.saturating_sub(2 * self.margin);
        if self.building_count.1 > 0 && (self.building_size.1 > span_x || self.building_size.1 > span_y) {
            return Err(Error::arg("buildings do not fit inside the margins"));
        }
        OccupancyGrid::empty(self.width, self.height, self.cell_size).map(|_| ())
    }
}

fn build_grid(rng: &mut ChaCha8Rng, params: &SceneParams) -> Result<OccupancyGrid> {
    let mut grid = OccupancyGrid::empty(params.width, params.height, params.cell_size)?;
    let n = rng.gen_range(params.building_count.0..=params.building_count.1);
    for _ in 0..n {
        let bw = rng.gen_range(params.building_size.0..=params.building_size.1);
        let bh = rng.gen_range(params.building_size.0..=params.building_size.1);
        let x0 = rng.gen_range(params.margin..=params.width - params.margin - bw);
        let y0 = rng.gen_range(params.margin..=params.height - params.margin - bh);
        grid.fill_rect(x0, y0, x0 + bw, y0 + bh);
    }
    let blockers = rng.gen_range(params.blocker_count.0..=params.blocker_count.1);
    for _ in 0..blockers {
        let i = rng.gen_range(0..params.width);
        let j = rng.gen_range(0..params.height);
        grid.set(i, j, true);
    }
    Ok(grid)
}

/// Uniform rejection sampling over free cells, jittered inside the chosen cell.
fn place_transmitter(rng: &mut ChaCha8Rng, grid: &OccupancyGrid, max_retries: usize) -> Result<Transmitter> {
    for _ in 0..max_retries.max(1) {
        let i = rng.gen_range(0..grid.width());
        let j = rng.gen_range(0..grid.height());
        let jx: f64 = rng.gen_range(0.1..0.9);
        let jy: f64 = rng.gen_range(0.1..0.9);
        if !grid.is_occupied(i, j) {
            return Ok(Transmitter::at(i as f64 + jx, j as f64 + jy));
        }
    }
    Err(Error::Generation(format!("no free cell found for the transmitter after {max_retries} attempts")))
}

/// Generates one scene; a pure function of `(seed, params)`.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<Scene> {
    Ok(generate_scene_group(seed, params, 1)?.remove(0))
}

/// Generates `tx_count` scenes sharing one layout but with distinct
/// transmitter placements. The first scene equals `generate_scene(seed, params)`.
pub fn generate_scene_group(seed: u64, params: &SceneParams, tx_count: usize) -> Result<Vec<Scene>> {
    params.validate()?;
    if tx_count == 0 {
        return Err(Error::arg("at least one transmitter per scene is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = build_grid(&mut rng, params)?;
    (0..tx_count)
        .map(|k| {
            let tx = place_transmitter(&mut rng, &grid, params.max_retries)?;
            Scene::new(grid.clone(), tx, seed, format!("s{seed}-t{k}"))
        })
        .collect()
}

fn check_inside(grid: &OccupancyGrid, p: Point) -> Result<()> {
    if !(p.x.is_finite() && p.y.is_finite()) || !grid.contains(p) {
        return Err(Error::arg(format!("point ({}, {}) lies outside the grid", p.x, p.y)));
    }
    Ok(())
}

/// True iff the open segment `a -> b` crosses no occupied cell.
///
/// Conservative supercover semantics: every occupied cell whose closed square
/// the segment touches (corners and edges included) blocks it. The cells that
/// contain the endpoints are excluded, and `SEGMENT_TRIM` cells are trimmed
/// from both ends.
pub fn los_visible(grid: &OccupancyGrid, a: Point, b: Point) -> Result<bool> {
    check_inside(grid, a)?;
    check_inside(grid, b)?;
    Ok(segment_clear(grid, a, b))
}

/// `los_visible` without the bounds checks.
pub(crate) fn segment_clear(grid: &OccupancyGrid, a: Point, b: Point) -> bool {
    let d = b.sub(a);
    let len = d.x.hypot(d.y);
    if len < 2.0 * SEGMENT_TRIM {
        return true;
    }
    let t0 = SEGMENT_TRIM / len;
    let t1 = 1.0 - t0;
    let skip_a = grid.cell_of(a);
    let skip_b = grid.cell_of(b);

    let pa = a.add(d.scale(t0));
    let pb = a.add(d.scale(t1));
    let xmin = pa.x.min(pb.x);
    let xmax = pa.x.max(pb.x);
    let w = grid.width() as isize;
    let h = grid.height() as isize;
    let col_lo = ((xmin.ceil() as isize) - 1).max(0);
    let col_hi = (xmax.floor() as isize).min(w - 1);

    for i in col_lo..=col_hi {
        // y-extent of the trimmed segment inside the column's closed x-slab.
        let (ylo, yhi) = if d.x == 0.0 {
            (pa.y.min(pb.y), pa.y.max(pb.y))
        } else {
            let ta = ((i as f64 - a.x) / d.x).clamp(t0, t1);
            let tb = ((i as f64 + 1.0 - a.x) / d.x).clamp(t0, t1);
            let ya = a.y + d.y * ta;
            let yb = a.y + d.y * tb;
            (ya.min(yb), ya.max(yb))
        };
        let row_lo = ((ylo.ceil() as isize) - 1).max(0);
        let row_hi = (yhi.floor() as isize).min(h - 1);
        for j in row_lo..=row_hi {
            let (iu, ju) = (i as usize, j as usize);
            if !grid.is_occupied(iu, ju) || (iu, ju) == skip_a || (iu, ju) == skip_b {
                continue;
            }
            if segment_touches_square(a, d, t0, t1, i as f64, j as f64) {
                return false;
            }
        }
    }
    true
}

/// Slab test: does `a + t d`, `t in [t0, t1]`, meet the closed unit square at `(x0, y0)`?
fn segment_touches_square(a: Point, d: Point, t0: f64, t1: f64, x0: f64, y0: f64) -> bool {
    let mut enter = t0;
    let mut exit = t1;
    for (origin, dir, lo) in [(a.x, d.x, x0), (a.y, d.y, y0)] {
        let hi = lo + 1.0;
        if dir == 0.0 {
            if origin < lo || origin > hi {
                return false;
            }
        } else {
            let (ta, tb) = ((lo - origin) / dir, (hi - origin) / dir);
            enter = enter.max(ta.min(tb));
            exit = exit.min(ta.max(tb));
        }
    }
    enter <= exit
}

/// Euclidean distance (meters) from each cell center to the transmitter.
pub fn distance_field(scene: &Scene) -> RadioMap {
    let g = &scene.grid;
    let tx = scene.tx.position();
    let values = (0..g.height())
        .flat_map(|j| (0..g.width()).map(move |i| (i, j)))
        .map(|(i, j)| g.cell_center(i, j).dist(tx) * g.cell_size())
        .collect();
    RadioMap::from_values(g.width(), g.height(), values).expect("distances are finite and nonnegative")
}
