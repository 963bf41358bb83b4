//! Oriented boxes in the ground plane.

use serde::{Deserialize, Serialize};

use crate::verbalizer::SemanticGrid;

pub const EGO_LENGTH: f64 = 4.5;
pub const EGO_WIDTH: f64 = 1.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: [f64; 2],
    /// Extent along the heading.
    pub length: f64,
    pub width: f64,
    pub yaw: f64,
}

impl OrientedBox {
    pub fn new(center: [f64; 2], length: f64, width: f64, yaw: f64) -> Self {
        Self { center, length, width, yaw }
    }

    pub fn ego(center: [f64; 2], yaw: f64) -> Self {
        Self::new(center, EGO_LENGTH, EGO_WIDTH, yaw)
    }

    fn axes(&self) -> ([f64; 2], [f64; 2]) {
        let (s, c) = self.yaw.sin_cos();
        ([c, s], [-s, c])
    }

    /// Corners counter-clockwise starting front-left.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (u, v) = self.axes();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let at = |a: f64, b: f64| [self.center[0] + a * u[0] + b * v[0], self.center[1] + a * u[1] + b * v[1]];
        [at(hl, hw), at(-hl, hw), at(-hl, -hw), at(hl, -hw)]
    }

    /// Center, corners and edge midpoints.
    pub fn sample_points(&self) -> Vec<[f64; 2]> {
        let c = self.corners();
        let mut pts = vec![self.center];
        pts.extend_from_slice(&c);
        for i in 0..4 {
            let (a, b) = (c[i], c[(i + 1) % 4]);
            pts.push([(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]);
        }
        pts
    }

    /// Front bumper center.
    pub fn front(&self) -> [f64; 2] {
        let (u, _) = self.axes();
        [self.center[0] + u[0] * self.length / 2.0, self.center[1] + u[1] * self.length / 2.0]
    }

    /// Euclidean distance from `p` to the box; 0 inside.
    pub fn distance_to_point(&self, p: [f64; 2]) -> f64 {
        let (u, v) = self.axes();
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let a = (d[0] * u[0] + d[1] * u[1]).abs() - self.length / 2.0;
        let b = (d[0] * v[0] + d[1] * v[1]).abs() - self.width / 2.0;
        a.max(0.0).hypot(b.max(0.0))
    }

    /// Separating-axis overlap test.
    pub fn overlaps(&self, other: &OrientedBox) -> bool {
        let (a, b) = (self.corners(), other.corners());
        let (u1, v1) = self.axes();
        let (u2, v2) = other.axes();
        for axis in [u1, v1, u2, v2] {
            let proj = |pts: &[[f64; 2]; 4]| {
                pts.iter().map(|p| p[0] * axis[0] + p[1] * axis[1]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
            };
            let (alo, ahi) = proj(&a);
            let (blo, bhi) = proj(&b);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
        true
    }

    /// Distance between two boxes, zero when they overlap. For disjoint convex
    /// polygons the minimum is reached at a corner of one of them.
    pub fn clearance(&self, other: &OrientedBox) -> f64 {
        if self.overlaps(other) {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for p in other.corners() {
            best = best.min(self.distance_to_point(p));
        }
        for p in self.corners() {
            best = best.min(other.distance_to_point(p));
        }
        best
    }

    /// Whether any sample point lies on a cell labeled `label`.
    pub fn touches_label(&self, grid: &SemanticGrid, label: &str) -> bool {
        self.sample_points().into_iter().any(|p| grid.label_at(p) == Some(label))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_and_distance() {
        let a = OrientedBox::ego([0.0, 0.0], 0.0);
        let b = OrientedBox::new([4.0, 0.0], 4.5, 1.8, 0.0);
        let c = OrientedBox::new([5.0, 0.0], 4.5, 1.8, 0.0);
        assert!(a.overlaps(&b));
        assert!(!a.overlaps(&c));
        assert!((a.clearance(&c) - 0.5).abs() < 1e-12);
        assert!((a.distance_to_point([0.0, 3.5]) - 2.6).abs() < 1e-12);
        let rotated = OrientedBox::new([0.0, 2.5], 4.5, 1.8, std::f64::consts::FRAC_PI_2);
        assert!(a.overlaps(&rotated));
    }
}
