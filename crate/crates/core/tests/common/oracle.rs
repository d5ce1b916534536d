//! Brute-force angular ray sweep used as an independent reference for the
//! image-source enumerator.
//!
//! Rays leave the transmitter at every angle, bounce specularly off occupied
//! cell squares, and are split into angular pieces over which the sequence of
//! hit lines is constant. Inside a piece the signed offset of a receiver from
//! each leg is monotone, so a sign change brackets a path that is then refined
//! by bisection and re-traced for validation.

use radiomap_core::envgrid::{Point, Scene};

const T_MIN: f64 = 1e-9;
const RESOLVE: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Hit {
    /// Reflection off line x = c (`vertical = true`) or y = c, entered from `side`.
    Line { vertical: bool, coord: i64, side: i8 },
    /// Ray left the grid. The exit distance is continuous in the angle, so the
    /// border it leaves through is not part of the signature.
    Exit,
}

#[derive(Clone, Debug)]
struct Leg {
    start: Point,
    dir: Point,
    len: f64,
}

#[derive(Clone, Debug)]
struct Trace {
    hits: Vec<Hit>,
    legs: Vec<Leg>,
}

pub struct AngularOracle<'a> {
    scene: &'a Scene,
    blocks: Vec<(f64, f64)>,
    order: usize,
}

/// A path found by the sweep: reflection count and length in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OraclePath {
    pub reflections: usize,
    pub length: f64,
}

impl<'a> AngularOracle<'a> {
    pub fn new(scene: &'a Scene, order: usize) -> Self {
        let g = &scene.grid;
        let mut blocks = Vec::new();
        for j in 0..g.height() {
            for i in 0..g.width() {
                if g.is_occupied(i, j) {
                    blocks.push((i as f64, j as f64));
                }
            }
        }
        AngularOracle { scene, blocks, order }
    }

    fn first_hit(&self, p: Point, d: Point) -> (f64, Hit) {
        let (w, h) = (self.scene.grid.width() as f64, self.scene.grid.height() as f64);
        // Exit through the grid border.
        let mut best_t = f64::INFINITY;
        let mut best = Hit::Exit;
        for (o, dir, hi) in [(p.x, d.x, w), (p.y, d.y, h)] {
            if dir > 0.0 {
                best_t = best_t.min((hi - o) / dir);
            } else if dir < 0.0 {
                best_t = best_t.min(-o / dir);
            }
        }
        for &(x0, y0) in &self.blocks {
            let (mut enter, mut exit) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut enter_vertical = true;
            let mut ok = true;
            for (vertical, o, dir, lo) in [(true, p.x, d.x, x0), (false, p.y, d.y, y0)] {
                if dir == 0.0 {
                    if o < lo || o > lo + 1.0 {
                        ok = false;
                    }
                    continue;
                }
                let ta = (lo - o) / dir;
                let tb = (lo + 1.0 - o) / dir;
                let (tn, tf) = if ta < tb { (ta, tb) } else { (tb, ta) };
                if tn > enter {
                    enter = tn;
                    enter_vertical = vertical;
                }
                exit = exit.min(tf);
            }
            if !ok || enter > exit || enter <= T_MIN || enter >= best_t {
                continue;
            }
            best_t = enter;
            let (coord, side) = if enter_vertical {
                if d.x > 0.0 { (x0 as i64, -1) } else { (x0 as i64 + 1, 1) }
            } else if d.y > 0.0 {
                (y0 as i64, -1)
            } else {
                (y0 as i64 + 1, 1)
            };
            best = Hit::Line { vertical: enter_vertical, coord, side };
        }
        (best_t, best)
    }

    fn trace(&self, theta: f64) -> Trace {
        let mut p = self.scene.tx.position();
        let mut d = Point::new(theta.cos(), theta.sin());
        let mut hits = Vec::with_capacity(self.order + 1);
        let mut legs = Vec::with_capacity(self.order + 1);
        for _ in 0..=self.order {
            let (t, hit) = self.first_hit(p, d);
            legs.push(Leg { start: p, dir: d, len: t });
            hits.push(hit);
            match hit {
                Hit::Exit => break,
                Hit::Line { vertical, .. } => {
                    p = p.add(d.scale(t));
                    d = if vertical { Point::new(-d.x, d.y) } else { Point::new(d.x, -d.y) };
                }
            }
        }
        Trace { hits, legs }
    }


    /// Sorted `(theta, hits)` samples, refined around every signature change.
    fn samples(&self, count: usize) -> Vec<(f64, Vec<Hit>)> {
        let two_pi = std::f64::consts::TAU;
        let mut pts: Vec<(f64, Vec<Hit>)> = Vec::new();
        let mut prev = (0.0, self.trace(0.0).hits);
        pts.push(prev.clone());
        let quarter = std::f64::consts::FRAC_PI_2;
        let quarter_of = |th: f64| (th / quarter).floor() as i64;
        for s in 1..=count {
            let th = two_pi * s as f64 / count as f64;
            let q = quarter_of(th);
            if q != quarter_of(prev.0) {
                // Close the previous quarter with its last representable angle so
                // roots just below the boundary still see a sign change.
                let mut edge = q as f64 * quarter;
                while quarter_of(edge) >= q {
                    edge = f64::from_bits(edge.to_bits() - 1);
                }
                if edge > prev.0 {
                    let cur = (edge, self.trace(edge).hits);
                    if cur.1 != prev.1 {
                        self.refine(&prev, &cur, &mut pts);
                    }
                    pts.push(cur.clone());
                    prev = cur;
                }
            }
            let cur = (th, self.trace(th).hits);
            if cur.1 != prev.1 {
                self.refine(&prev, &cur, &mut pts);
            }
            pts.push(cur.clone());
            prev = cur;
        }
        pts
    }

    fn refine(&self, a: &(f64, Vec<Hit>), b: &(f64, Vec<Hit>), out: &mut Vec<(f64, Vec<Hit>)>) {
        if b.0 - a.0 < RESOLVE {
            return;
        }
        let mid = 0.5 * (a.0 + b.0);
        let m = (mid, self.trace(mid).hits);
        if m.1 != a.1 {
            self.refine(a, &m, out);
        }
        out.push(m.clone());
        if m.1 != b.1 {
            self.refine(&m, b, out);
        }
    }

    /// Angular intervals over which leg `leg` exists and is produced by the
    /// same reflecting lines. Intervals never span a quarter turn, so the
    /// receiver offset has at most one root inside each.
    fn leg_pieces(pts: &[(f64, Vec<Hit>)], leg: usize) -> Vec<(f64, f64)> {
        let quarter = std::f64::consts::FRAC_PI_2;
        let key = |(th, hits): &(f64, Vec<Hit>)| {
            let exists = hits.len() > leg;
            ((th / quarter).floor() as i64, exists, if exists { hits[..leg].to_vec() } else { Vec::new() })
        };
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=pts.len() {
            if i == pts.len() || key(&pts[i]) != key(&pts[start]) {
                if key(&pts[start]).1 {
                    out.push((pts[start].0, pts[i - 1].0));
                }
                start = i;
            }
        }
        out
    }

    /// Every path to every free cell center, indexed row-major.
    pub fn sweep(&self, samples: usize) -> Vec<Vec<OraclePath>> {
        let g = &self.scene.grid;
        let (w, h) = (g.width(), g.height());
        let receivers: Vec<(usize, Point)> = (0..w * h)
            .filter(|&c| !g.is_occupied(c % w, c / w))
            .map(|c| (c, g.cell_center(c % w, c / w)))
            .collect();
        let mut found: Vec<Vec<OraclePath>> = vec![Vec::new(); w * h];
        let offset = |tr: &Trace, leg: usize, rx: Point| -> f64 {
            let l = &tr.legs[leg];
            l.dir.cross(rx.sub(l.start))
        };
        let pts = self.samples(samples);
        for leg in 0..=self.order {
            for (lo, hi) in Self::leg_pieces(&pts, leg) {
                let (tl, th) = (self.trace(lo), self.trace(hi));
                for &(cell, rx) in &receivers {
                    let (fl, fh) = (offset(&tl, leg, rx), offset(&th, leg, rx));
                    let theta = if fl == 0.0 {
                        lo
                    } else if fh == 0.0 {
                        hi
                    } else if (fl > 0.0) != (fh > 0.0) {
                        let (mut a, mut b, sa) = (lo, hi, fl > 0.0);
                        loop {
                            let m = 0.5 * (a + b);
                            if m <= a || m >= b {
                                break;
                            }
                            if (offset(&self.trace(m), leg, rx) > 0.0) == sa {
                                a = m;
                            } else {
                                b = m;
                            }
                        }
                        0.5 * (a + b)
                    } else {
                        continue;
                    };
                    let tr = self.trace(theta);
                    if tr.legs.len() <= leg || tr.hits[..leg] != tl.hits[..leg] {
                        continue;
                    }
                    let l = &tr.legs[leg];
                    let s = l.dir.dot(rx.sub(l.start));
                    if offset(&tr, leg, rx).abs() > 1e-6 || s <= T_MIN || s >= l.len - T_MIN {
                        continue;
                    }
                    let length = (tr.legs[..leg].iter().map(|x| x.len).sum::<f64>() + s) * g.cell_size();
                    if !found[cell].iter().any(|p| p.reflections == leg && (p.length - length).abs() < 1e-7) {
                        found[cell].push(OraclePath { reflections: leg, length });
                    }
                }
            }
        }
        found
    }
}

/// Incoherent sum with the same per-path power law as the solver.
pub fn oracle_power(paths: &[OraclePath], tx_power: f64, cell_size: f64) -> f64 {
    paths
        .iter()
        .map(|p| {
            let d = p.length.max(0.5 * cell_size);
            tx_power * 0.3f64.powi(p.reflections as i32) / (d * d)
        })
        .sum()
}
