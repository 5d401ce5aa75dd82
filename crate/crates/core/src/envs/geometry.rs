//! Planar geometry: ray casting for lidar and exponential social-force
//! repulsion.

use serde::{Deserialize, Serialize};

use crate::types::Point;

/// Distances below this are treated as this value when computing repulsion.
pub const MIN_FORCE_DISTANCE: f64 = 0.01;

/// Smallest lidar reading; a ray starting inside an obstacle reports this.
pub const MIN_LIDAR_RANGE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub a: Point,
    pub b: Point,
}

impl Wall {
    pub fn new(ax: f64, ay: f64, bx: f64, by: f64) -> Self {
        Self { a: Point { x: ax, y: ay }, b: Point { x: bx, y: by } }
    }

    pub fn nearest_point(&self, p: Point) -> Point {
        let (dx, dy) = (self.b.x - self.a.x, self.b.y - self.a.y);
        let len2 = dx * dx + dy * dy;
        if len2 == 0.0 {
            return self.a;
        }
        let t = (((p.x - self.a.x) * dx + (p.y - self.a.y) * dy) / len2).clamp(0.0, 1.0);
        Point { x: self.a.x + t * dx, y: self.a.y + t * dy }
    }
}

pub fn distance(a: Point, b: Point) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Distance along the unit ray `(origin, dir)` to the first intersection with
/// a circle, if any lies ahead. An origin inside the circle yields `Some(0)`.
pub fn ray_circle(origin: Point, dir: (f64, f64), center: Point, radius: f64) -> Option<f64> {
    let (ox, oy) = (origin.x - center.x, origin.y - center.y);
    let c = ox * ox + oy * oy - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let b = ox * dir.0 + oy * dir.1;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

/// Distance along the unit ray to a wall segment, if hit.
pub fn ray_segment(origin: Point, dir: (f64, f64), wall: &Wall) -> Option<f64> {
    let (ex, ey) = (wall.b.x - wall.a.x, wall.b.y - wall.a.y);
    let denom = dir.0 * ey - dir.1 * ex;
    if denom.abs() < 1e-12 {
        return None;
    }
    let (wx, wy) = (wall.a.x - origin.x, wall.a.y - origin.y);
    let t = (wx * ey - wy * ex) / denom;
    let u = (wx * dir.1 - wy * dir.0) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Ranges of `rays` beams spaced evenly counter-clockwise starting at
/// `heading`, each clipped to `(0, max_range]`.
pub fn compute_lidar(
    origin: Point,
    heading: f64,
    rays: usize,
    max_range: f64,
    humans: &[Point],
    human_radius: f64,
    walls: &[Wall],
) -> Vec<f64> {
    (0..rays)
        .map(|k| {
            let angle = heading + std::f64::consts::TAU * k as f64 / rays as f64;
            let dir = (angle.cos(), angle.sin());
            let hits = humans
                .iter()
                .filter_map(|&h| ray_circle(origin, dir, h, human_radius))
                .chain(walls.iter().filter_map(|w| ray_segment(origin, dir, w)));
            hits.fold(max_range, f64::min).max(MIN_LIDAR_RANGE)
        })
        .collect()
}

fn repulsion(from: Point, source: Point, gain: f64, length_scale: f64) -> (f64, f64) {
    let (dx, dy) = (from.x - source.x, from.y - source.y);
    let d = dx.hypot(dy);
    let (ux, uy) = if d > 0.0 { (dx / d, dy / d) } else { (1.0, 0.0) };
    let magnitude = gain * (-d.max(MIN_FORCE_DISTANCE) / length_scale).exp();
    (magnitude * ux, magnitude * uy)
}

/// Sum of `gain * exp(-d / length_scale) * unit(robot - entity)` over point
/// entities plus the same repulsion from the nearest point of each wall.
pub fn social_force(robot: Point, entities: &[Point], walls: &[Wall], gain: f64, length_scale: f64) -> Point {
    let sources = entities.iter().copied().chain(walls.iter().map(|w| w.nearest_point(robot)));
    let (fx, fy) = sources
        .map(|s| repulsion(robot, s, gain, length_scale))
        .fold((0.0, 0.0), |acc, f| (acc.0 + f.0, acc.1 + f.1));
    Point { x: fx, y: fy }
}
