use crate::envgrid::{OccupancyGrid, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Face on the line `x = coord`.
    Vertical,
    /// Face on the line `y = coord`.
    Horizontal,
}

/// Maximal straight run of cell edges separating an obstacle from free space.
///
/// `normal` is `+1.0` or `-1.0` along the face's axis and points into free space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Face {
    pub axis: Axis,
    pub coord: f64,
    pub lo: f64,
    pub hi: f64,
    pub normal: f64,
}

impl Face {
    /// Signed distance of `p` from the face line, positive on the free side.
    pub fn side(&self, p: Point) -> f64 {
        match self.axis {
            Axis::Vertical => (p.x - self.coord) * self.normal,
            Axis::Horizontal => (p.y - self.coord) * self.normal,
        }
    }

    pub fn mirror(&self, p: Point) -> Point {
        match self.axis {
            Axis::Vertical => Point::new(2.0 * self.coord - p.x, p.y),
            Axis::Horizontal => Point::new(p.x, 2.0 * self.coord - p.y),
        }
    }

    /// Coordinate of `p` along the face direction.
    pub fn along(&self, p: Point) -> f64 {
        match self.axis {
            Axis::Vertical => p.y,
            Axis::Horizontal => p.x,
        }
    }

    pub fn covers(&self, p: Point) -> bool {
        let s = self.along(p);
        s >= self.lo && s <= self.hi
    }
}

/// Extracts every reflecting face of the grid. Faces whose free side lies
/// outside the grid are dropped. Order: vertical faces by `(coord, lo)`, then
/// horizontal faces by `(coord, lo)`.
pub fn extract_faces(grid: &OccupancyGrid) -> Vec<Face> {
    let w = grid.width() as isize;
    let h = grid.height() as isize;
    let mut faces = Vec::new();

    // Vertical lines x = c: edge between (c-1, j) and (c, j).
    for c in 0..=w {
        for normal in [-1.0, 1.0] {
            let mut run: Option<isize> = None;
            for j in 0..=h {
                let is_face = j < h && {
                    let left = grid.occupied_at(c - 1, j);
                    let right = grid.occupied_at(c, j);
                    // normal -x: obstacle on the right, free (in-grid) on the left.
                    if normal < 0.0 {
                        right && !left && c >= 1
                    } else {
                        left && !right && c < w
                    }
                };
                match (is_face, run) {
                    (true, None) => run = Some(j),
                    (false, Some(start)) => {
                        faces.push(Face { axis: Axis::Vertical, coord: c as f64, lo: start as f64, hi: j as f64, normal });
                        run = None;
                    }
                    _ => {}
                }
            }
        }
    }

    for r in 0..=h {
        for normal in [-1.0, 1.0] {
            let mut run: Option<isize> = None;
            for i in 0..=w {
                let is_face = i < w && {
                    let below = grid.occupied_at(i, r - 1);
                    let above = grid.occupied_at(i, r);
                    if normal < 0.0 {
                        above && !below && r >= 1
                    } else {
                        below && !above && r < h
                    }
                };
                match (is_face, run) {
                    (true, None) => run = Some(i),
                    (false, Some(start)) => {
                        faces.push(Face { axis: Axis::Horizontal, coord: r as f64, lo: start as f64, hi: i as f64, normal });
                        run = None;
                    }
                    _ => {}
                }
            }
        }
    }
    faces
}
