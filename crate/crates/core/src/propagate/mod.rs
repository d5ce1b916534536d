//! Path enumeration and radio-map solves.
//!
//! Paths are specular reflection chains found with the image-source method:
//! the transmitter is mirrored successively across building faces, and a
//! candidate chain is valid at a receiver when the unfolded line from the
//! receiver to the last image crosses every face inside its extent and every
//! leg of the folded polyline has line of sight.
//!
//! Per-path power is `P = P_tx * rho^b / max(len, eps_d)^2` with
//! `rho = REFLECTION_LOSS` and `eps_d = NEAR_FIELD_CELLS * cell_size`.

mod faces;
mod lowpass;

use std::cmp::Ordering;

use rayon::prelude::*;

pub use self::faces::{extract_faces, Axis, Face};
pub use self::lowpass::{
    lowpass, lowpass_with, verify_lowfreq_bound, verify_young_l2, Boundary, LowFreqBoundReport, LowPassKernel,
    YoungL2Report,
};
use crate::envgrid::{segment_clear, Point, Scene};
use crate::error::{Error, Result};
pub use crate::radiomap::RadioMap;

/// Per-reflection power factor.
pub const REFLECTION_LOSS: f64 = 0.3;
/// Near-field distance clamp, in cells.
pub const NEAR_FIELD_CELLS: f64 = 0.5;
/// Default maximum interaction order.
pub const DEFAULT_MAX_ORDER: usize = 2;
/// Largest interaction order the enumerator accepts.
pub const MAX_SUPPORTED_ORDER: usize = 4;
/// Negative residual magnitudes below this are rounding dust and clamp to 0.
pub const RESIDUAL_DUST: f64 = 1e-12;
/// Support threshold for the residual, relative to its maximum.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// One propagation path from the transmitter to a receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    /// Polyline from the transmitter through reflection points to the receiver, in cells.
    pub vertices: Vec<Point>,
    pub reflections: usize,
    /// Length in meters.
    pub length: f64,
    /// Face indices (see [`extract_faces`]) in reflection order.
    pub faces: Vec<usize>,
    pub tx_power: f64,
    /// Near-field clamp in meters.
    pub near_field: f64,
}

impl Path {
    /// Polyline length of `vertices`, converted to meters.
    pub fn polyline_length(&self, cell_size: f64) -> f64 {
        self.vertices.windows(2).map(|w| w[0].dist(w[1])).sum::<f64>() * cell_size
    }
}

/// Received power carried by `path`.
pub fn path_power(path: &Path) -> f64 {
    let d = path.length.max(path.near_field);
    path.tx_power * REFLECTION_LOSS.powi(path.reflections as i32) / (d * d)
}

/// Orders paths strongest first: higher power, then fewer reflections, then
/// shorter length, then lexicographic face sequence.
fn strength_order(a: &Path, pa: f64, b: &Path, pb: f64) -> Ordering {
    pb.partial_cmp(&pa)
        .unwrap_or(Ordering::Equal)
        .then(a.reflections.cmp(&b.reflections))
        .then(a.length.partial_cmp(&b.length).unwrap_or(Ordering::Equal))
        .then_with(|| a.faces.cmp(&b.faces))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Index of the main path `p*` under the deterministic tie-break.
    pub fn strongest(&self) -> Option<usize> {
        let powers: Vec<f64> = self.paths.iter().map(path_power).collect();
        (0..self.paths.len()).min_by(|&i, &j| strength_order(&self.paths[i], powers[i], &self.paths[j], powers[j]))
    }

    /// Incoherent sum of all path powers, accumulated in enumeration order.
    pub fn total_power(&self) -> f64 {
        self.paths.iter().map(path_power).fold(0.0, |acc, p| acc + p)
    }
}

/// A mirrored transmitter for one face sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSource {
    pub faces: Vec<usize>,
    /// `images[0]` is the transmitter, `images[m]` the final image.
    pub images: Vec<Point>,
}

impl ImageSource {
    pub fn order(&self) -> usize {
        self.faces.len()
    }

    pub fn image(&self) -> Point {
        *self.images.last().expect("image chain always holds the transmitter")
    }
}

/// Bit per candidate image-source sequence; set iff that path is valid at the receiver.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VisibilityState {
    pub bits: Vec<bool>,
}

impl VisibilityState {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Image-source enumerator bound to one scene and interaction order.
#[derive(Clone, Debug)]
pub struct PathTracer<'a> {
    scene: &'a Scene,
    faces: Vec<Face>,
    sources: Vec<ImageSource>,
}

impl<'a> PathTracer<'a> {
    pub fn new(scene: &'a Scene, max_order: usize) -> Result<Self> {
        if max_order > MAX_SUPPORTED_ORDER {
            return Err(Error::arg(format!("interaction order {max_order} exceeds {MAX_SUPPORTED_ORDER}")));
        }
        let faces = extract_faces(&scene.grid);
        let tx = scene.tx.position();
        let mut sources = vec![ImageSource { faces: Vec::new(), images: vec![tx] }];
        // Breadth-first by order, lexicographic within an order.
        let mut frontier = 0..1;
        for _ in 0..max_order {
            let mut next = Vec::new();
            for src in &sources[frontier.clone()] {
                let last = src.image();
                for (fi, face) in faces.iter().enumerate() {
                    if src.faces.last() == Some(&fi) || face.side(last) <= 0.0 {
                        continue;
                    }
                    let mut seq = src.faces.clone();
                    seq.push(fi);
                    let mut images = src.images.clone();
                    images.push(face.mirror(last));
                    next.push(ImageSource { faces: seq, images });
                }
            }
            let start = sources.len();
            sources.extend(next);
            frontier = start..sources.len();
        }
        Ok(PathTracer { scene, faces, sources })
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Candidate sequences in canonical order; index 0 is the direct path.
    pub fn sources(&self) -> &[ImageSource] {
        &self.sources
    }

    fn check_receiver(&self, rx: Point) -> Result<()> {
        if !(rx.x.is_finite() && rx.y.is_finite()) || !self.scene.grid.is_free_point(rx) {
            return Err(Error::arg(format!("receiver ({}, {}) is outside the grid or inside an obstacle", rx.x, rx.y)));
        }
        Ok(())
    }

    /// Builds the folded path for candidate `idx` at `rx`, if it is valid there.
    pub fn trace(&self, idx: usize, rx: Point) -> Option<Path> {
        let src = &self.sources[idx];
        let m = src.order();
        let mut rev = Vec::with_capacity(m + 2);
        rev.push(rx);
        let mut target = rx;
        for j in (0..m).rev() {
            let face = &self.faces[src.faces[j]];
            let image = src.images[j + 1];
            let st = face.side(target);
            let si = face.side(image);
            if st <= 0.0 || si >= 0.0 {
                return None;
            }
            let u = st / (st - si);
            let q = target.add(image.sub(target).scale(u));
            if !face.covers(q) {
                return None;
            }
            rev.push(q);
            target = q;
        }
        rev.push(src.images[0]);
        rev.reverse();
        let grid = &self.scene.grid;
        if !rev.windows(2).all(|w| segment_clear(grid, w[0], w[1])) {
            return None;
        }
        let cell = grid.cell_size();
        let length = rev.windows(2).map(|w| w[0].dist(w[1])).sum::<f64>() * cell;
        Some(Path {
            vertices: rev,
            reflections: m,
            length,
            faces: src.faces.clone(),
            tx_power: self.scene.tx.power,
            near_field: NEAR_FIELD_CELLS * cell,
        })
    }

    pub fn paths_at(&self, rx: Point) -> Result<PathSet> {
        self.check_receiver(rx)?;
        Ok(self.paths_unchecked(rx))
    }

    fn paths_unchecked(&self, rx: Point) -> PathSet {
        PathSet { paths: (0..self.sources.len()).filter_map(|i| self.trace(i, rx)).collect() }
    }

    pub fn state_at(&self, rx: Point) -> Result<VisibilityState> {
        self.check_receiver(rx)?;
        Ok(VisibilityState { bits: (0..self.sources.len()).map(|i| self.trace(i, rx).is_some()).collect() })
    }

    /// Power the candidate would deliver at `x` if every leg were visible
    /// (the smooth factor of the visibility factorization).
    pub fn unobstructed_power(&self, idx: usize, x: Point) -> f64 {
        let src = &self.sources[idx];
        let cell = self.scene.grid.cell_size();
        let d = (x.dist(src.image()) * cell).max(NEAR_FIELD_CELLS * cell);
        self.scene.tx.power * REFLECTION_LOSS.powi(src.order() as i32) / (d * d)
    }
}

/// All specular paths of order `<= k` from the transmitter to `rx`.
pub fn enumerate_paths(scene: &Scene, rx: Point, k: usize) -> Result<PathSet> {
    PathTracer::new(scene, k)?.paths_at(rx)
}

pub fn visibility_state(scene: &Scene, rx: Point, k: usize) -> Result<VisibilityState> {
    PathTracer::new(scene, k)?.state_at(rx)
}

/// Main-path map, multipath map and per-cell path counts of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SolvedMaps {
    pub mp: RadioMap,
    pub mu: RadioMap,
    pub path_counts: Vec<usize>,
}

/// Solves both maps in one pass. Receivers sit at free cell centers; occupied cells are 0.
pub fn solve(scene: &Scene, k: usize) -> Result<SolvedMaps> {
    let tracer = PathTracer::new(scene, k)?;
    let grid = &scene.grid;
    let (w, h) = (grid.width(), grid.height());
    let cells: Vec<(f64, f64, usize)> = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx % w, idx / w);
            if grid.is_occupied(i, j) {
                return (0.0, 0.0, 0);
            }
            let set = tracer.paths_unchecked(grid.cell_center(i, j));
            let mp = set.strongest().map_or(0.0, |s| path_power(&set.paths[s]));
            (mp, set.total_power(), set.len())
        })
        .collect();
    let mp = cells.iter().map(|c| c.0).collect();
    let mu = cells.iter().map(|c| c.1).collect();
    let path_counts = cells.iter().map(|c| c.2).collect();
    Ok(SolvedMaps { mp: RadioMap::from_values(w, h, mp)?, mu: RadioMap::from_values(w, h, mu)?, path_counts })
}

/// Per cell, the power of the strongest path (0 where no path exists).
pub fn solve_mp(scene: &Scene, k: usize) -> Result<RadioMap> {
    Ok(solve(scene, k)?.mp)
}

/// Per cell, the incoherent sum over all paths of order `<= k`.
pub fn solve_mu(scene: &Scene, k: usize) -> Result<RadioMap> {
    Ok(solve(scene, k)?.mu)
}

/// Visibility state at every free cell center (`None` for occupied cells).
pub fn visibility_map(scene: &Scene, k: usize) -> Result<Vec<Option<VisibilityState>>> {
    let tracer = PathTracer::new(scene, k)?;
    let grid = &scene.grid;
    let w = grid.width();
    Ok((0..w * grid.height())
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx % w, idx / w);
            (!grid.is_occupied(i, j)).then(|| tracer.state_at(grid.cell_center(i, j)).expect("free cell center"))
        })
        .collect())
}

/// Multipath residual `U_MU - U_MP` with its support statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual {
    pub map: RadioMap,
    /// `|S| / |Omega|`, with `S` the cells above `SUPPORT_THRESHOLD * u_max`.
    pub support_fraction: f64,
    pub support_cells: usize,
    pub u_max: f64,
}

pub fn residual(mu: &RadioMap, mp: &RadioMap) -> Result<Residual> {
    if !mu.same_shape(mp) {
        return Err(Error::arg(format!(
            "residual needs equal shapes, got {}x{} and {}x{}",
            mu.width(),
            mu.height(),
            mp.width(),
            mp.height()
        )));
    }
    let mut values = Vec::with_capacity(mu.len());
    for (i, (a, b)) in mu.values().iter().zip(mp.values()).enumerate() {
        let d = a - b;
        if d < 0.0 {
            if d < -RESIDUAL_DUST {
                return Err(Error::arg(format!("multipath map is below the main-path map by {} at cell {i}", -d)));
            }
            values.push(0.0);
        } else {
            values.push(d);
        }
    }
    let map = RadioMap::from_values(mu.width(), mu.height(), values)?;
    let u_max = map.max();
    let support_cells = if u_max > 0.0 {
        map.values().iter().filter(|&&v| v > SUPPORT_THRESHOLD * u_max).count()
    } else {
        0
    };
    let support_fraction = support_cells as f64 / map.len() as f64;
    Ok(Residual { map, support_fraction, support_cells, u_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgrid::{generate_scene, OccupancyGrid, SceneParams, Transmitter};

    fn scene(grid: OccupancyGrid, tx: (f64, f64)) -> Scene {
        Scene::new(grid, Transmitter::at(tx.0, tx.1), 0, "test").unwrap()
    }

    fn desk_scene(seed: u64) -> Scene {
        generate_scene(seed, &SceneParams::desk()).unwrap()
    }

    #[test]
    fn empty_grid_has_only_the_direct_path() {
        let s = scene(OccupancyGrid::empty(16, 16, 1.0).unwrap(), (3.3, 4.6));
        let set = enumerate_paths(&s, Point::new(10.5, 12.5), 2).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.paths[0].reflections, 0);
    }

    #[test]
    fn occluded_direct_path_with_order_zero_is_empty() {
        let mut g = OccupancyGrid::empty(12, 12, 1.0).unwrap();
        g.fill_rect(4, 3, 6, 7);
        let s = scene(g, (2.0, 5.0));
        assert!(enumerate_paths(&s, Point::new(8.0, 5.0), 0).unwrap().is_empty());
        // With reflections allowed, paths around the block appear only via
        // faces that see both ends; the direct one stays absent.
        let set = enumerate_paths(&s, Point::new(8.0, 5.0), 2).unwrap();
        assert!(set.paths.iter().all(|p| p.reflections > 0));
    }

    #[test]
    fn receiver_in_obstacle_is_rejected() {
        let mut g = OccupancyGrid::empty(12, 12, 1.0).unwrap();
        g.fill_rect(4, 3, 6, 7);
        let s = scene(g, (2.0, 5.0));
        assert!(enumerate_paths(&s, Point::new(5.5, 5.5), 1).is_err());
        assert!(enumerate_paths(&s, Point::new(2.5, 5.5), MAX_SUPPORTED_ORDER + 1).is_err());
    }

    #[test]
    fn single_wall_reflection_matches_mirror_geometry() {
        let mut g = OccupancyGrid::empty(20, 20, 1.0).unwrap();
        g.fill_rect(10, 2, 12, 18);
        let s = scene(g, (4.5, 6.5));
        let rx = Point::new(6.5, 12.5);
        let set = enumerate_paths(&s, rx, 1).unwrap();
        assert_eq!(set.len(), 2);
        let refl = set.paths.iter().find(|p| p.reflections == 1).unwrap();
        let image = Point::new(15.5, 6.5);
        assert!((refl.length - rx.dist(image)).abs() < 1e-12);
        assert!((refl.vertices[1].x - 10.0).abs() < 1e-12);
    }

    #[test]
    fn path_power_examples() {
        let mk = |len: f64, b: usize| Path {
            vertices: vec![],
            reflections: b,
            length: len,
            faces: vec![0; b],
            tx_power: 1.0,
            near_field: 0.5,
        };
        assert_eq!(path_power(&mk(1.0, 0)), 1.0);
        assert!((path_power(&mk(10.0, 0)) - 0.01).abs() < 1e-15);
        assert!((path_power(&mk(10.0, 1)) - 0.003).abs() < 1e-15);
        assert_eq!(path_power(&mk(0.1, 0)), 4.0);
    }

    #[test]
    fn path_lengths_match_polylines_and_order_bound() {
        let s = desk_scene(3);
        let tracer = PathTracer::new(&s, 2).unwrap();
        for j in (0..32).step_by(3) {
            for i in (0..32).step_by(3) {
                if s.grid.is_occupied(i, j) {
                    continue;
                }
                for p in tracer.paths_at(s.grid.cell_center(i, j)).unwrap().paths {
                    assert!(p.reflections <= 2);
                    let poly = p.polyline_length(1.0);
                    assert!((p.length - poly).abs() <= 1e-9 * poly.max(1.0));
                }
            }
        }
    }

    #[test]
    fn empty_grid_maps_are_inverse_square_and_identical() {
        let s = scene(OccupancyGrid::empty(8, 8, 1.0).unwrap(), (2.5, 3.5));
        let m = solve(&s, 2).unwrap();
        assert_eq!(m.mp, m.mu);
        for j in 0..8 {
            for i in 0..8 {
                let d = s.grid.cell_center(i, j).dist(s.tx.position()).max(0.5);
                assert_eq!(m.mp.get(i, j), 1.0 / (d * d));
            }
        }
        let r = residual(&m.mu, &m.mp).unwrap();
        assert!(r.map.values().iter().all(|&v| v == 0.0));
        assert_eq!(r.support_fraction, 0.0);
    }

    #[test]
    fn mp_is_the_max_over_the_path_set() {
        let s = desk_scene(11);
        let maps = solve(&s, 2).unwrap();
        let tracer = PathTracer::new(&s, 2).unwrap();
        for j in 0..32 {
            for i in 0..32 {
                if s.grid.is_occupied(i, j) {
                    assert_eq!(maps.mp.get(i, j), 0.0);
                    continue;
                }
                let set = tracer.paths_at(s.grid.cell_center(i, j)).unwrap();
                let max = set.paths.iter().map(path_power).fold(0.0, f64::max);
                assert_eq!(maps.mp.get(i, j), max);
                assert!(maps.mu.get(i, j) >= maps.mp.get(i, j));
            }
        }
    }

    #[test]
    fn fully_occluded_cell_with_order_zero_is_zero() {
        let mut g = OccupancyGrid::empty(12, 12, 1.0).unwrap();
        g.fill_rect(5, 0, 6, 12);
        let s = scene(g, (2.5, 5.5));
        let mp = solve_mp(&s, 0).unwrap();
        assert_eq!(mp.get(8, 5), 0.0);
        assert!(mp.get(1, 5) > 0.0);
    }

    #[test]
    fn tie_break_prefers_fewer_reflections_then_shorter() {
        let a = Path { vertices: vec![], reflections: 1, length: 2.0, faces: vec![3], tx_power: 1.0, near_field: 0.5 };
        let b = Path { reflections: 0, faces: vec![], ..a.clone() };
        let set = PathSet { paths: vec![a.clone(), b] };
        // Powers differ (0.3 vs 1.0 scale), strongest is the direct one anyway.
        assert_eq!(set.strongest(), Some(1));
        let c = Path { faces: vec![1], ..a.clone() };
        let set = PathSet { paths: vec![a, c] };
        assert_eq!(set.strongest(), Some(1));
    }

    #[test]
    fn residual_decomposition_and_zero_criterion() {
        for seed in 0..6 {
            let s = desk_scene(seed);
            let m = solve(&s, 2).unwrap();
            let r = residual(&m.mu, &m.mp).unwrap();
            for idx in 0..m.mu.len() {
                let (mu, mp, du) = (m.mu.values()[idx], m.mp.values()[idx], r.map.values()[idx]);
                assert!(du >= 0.0);
                assert!((mp + du - mu).abs() <= 1e-12 * m.mu.max());
                assert_eq!(du == 0.0, m.path_counts[idx] <= 1, "cell {idx}");
            }
        }
    }

    #[test]
    fn residual_of_identical_maps_is_zero() {
        let m = RadioMap::from_values(4, 4, (0..16).map(|v| v as f64).collect()).unwrap();
        let r = residual(&m, &m).unwrap();
        assert!(r.map.values().iter().all(|&v| v == 0.0));
        assert_eq!(r.support_fraction, 0.0);
        assert!(residual(&m, &RadioMap::zeros(4, 5)).is_err());
    }

    #[test]
    fn mu_is_monotone_in_order() {
        let s = desk_scene(21);
        let m0 = solve_mu(&s, 0).unwrap();
        let m1 = solve_mu(&s, 1).unwrap();
        let m2 = solve_mu(&s, 2).unwrap();
        for idx in 0..m0.len() {
            assert!(m1.values()[idx] >= m0.values()[idx]);
            assert!(m2.values()[idx] >= m1.values()[idx]);
        }
    }

    #[test]
    fn visibility_state_examples() {
        let s = scene(OccupancyGrid::empty(8, 8, 1.0).unwrap(), (2.5, 3.5));
        assert_eq!(visibility_state(&s, Point::new(6.5, 6.5), 2).unwrap().bits, vec![true]);

        let mut g = OccupancyGrid::empty(12, 12, 1.0).unwrap();
        g.fill_rect(5, 2, 7, 9);
        let s = scene(g, (2.5, 5.5));
        let st = visibility_state(&s, Point::new(9.5, 5.5), 2).unwrap();
        assert!(!st.bits[0]);
        let tracer = PathTracer::new(&s, 2).unwrap();
        assert_eq!(st.bits.len(), tracer.sources().len());
        assert_eq!(st.count(), tracer.paths_at(Point::new(9.5, 5.5)).unwrap().len());
    }

    /// Flood fill over 4-neighbours with equal states; any two cells in the same
    /// region must carry identical states, and within a region interior the
    /// discrete Laplacian of U_MU equals that of the summed closed-form powers.
    #[test]
    fn constant_visibility_regions_are_smooth() {
        let s = desk_scene(7);
        let (w, h) = (32usize, 32usize);
        let states = visibility_map(&s, 2).unwrap();
        let maps = solve(&s, 2).unwrap();
        let tracer = PathTracer::new(&s, 2).unwrap();

        let mut region = vec![usize::MAX; w * h];
        let mut next_id = 0;
        for start in 0..w * h {
            if states[start].is_none() || region[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            region[start] = next_id;
            while let Some(c) = stack.pop() {
                let (i, j) = ((c % w) as isize, (c / w) as isize);
                for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let (ni, nj) = (i + di, j + dj);
                    if ni < 0 || nj < 0 || ni >= w as isize || nj >= h as isize {
                        continue;
                    }
                    let n = nj as usize * w + ni as usize;
                    if region[n] == usize::MAX && states[n].is_some() && states[n] == states[c] {
                        region[n] = next_id;
                        stack.push(n);
                    }
                }
            }
            next_id += 1;
        }
        let mut checked = 0;
        for c in 0..w * h {
            let Some(state) = &states[c] else { continue };
            let (i, j) = (c % w, c / w);
            if i == 0 || j == 0 || i == w - 1 || j == h - 1 {
                continue;
            }
            let nbrs = [c - 1, c + 1, c - w, c + w];
            if !nbrs.iter().all(|&n| region[n] == region[c]) {
                continue;
            }
            for &n in &nbrs {
                assert_eq!(states[n].as_ref(), Some(state));
            }
            let closed = |cell: usize| -> f64 {
                let p = s.grid.cell_center(cell % w, cell / w);
                state.bits.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| tracer.unobstructed_power(k, p)).sum()
            };
            let lap = |f: &dyn Fn(usize) -> f64| nbrs.iter().map(|&n| f(n)).sum::<f64>() - 4.0 * f(c);
            let lap_u = lap(&|n| maps.mu.values()[n]);
            let lap_closed = lap(&closed);
            assert!((lap_u - lap_closed).abs() <= 1e-9 * maps.mu.max(), "cell {c}");
            checked += 1;
        }
        assert!(checked > 100);
    }
}
