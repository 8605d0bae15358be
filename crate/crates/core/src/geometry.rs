//! Yaw-only oriented boxes and their intersection tests.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Box rotated about the vertical axis only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: [f64; 3],
    pub half: [f64; 3],
    pub yaw: f64,
}

impl Obb {
    pub fn new(center: [f64; 3], extents: [f64; 3], yaw: f64) -> Self {
        Self {
            center,
            half: [extents[0] / 2.0, extents[1] / 2.0, extents[2] / 2.0],
            yaw,
        }
    }

    /// Shrink every half-extent by `margin` so that face contact does not count as overlap.
    pub fn shrunk(mut self, margin: f64) -> Self {
        for h in &mut self.half {
            *h = (*h - margin).max(0.0);
        }
        self
    }

    fn axes(&self) -> [Vec3; 3] {
        let (s, c) = self.yaw.sin_cos();
        [Vec3::new(c, s, 0.0), Vec3::new(-s, c, 0.0), Vec3::z()]
    }

    pub fn center_v(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn support(&self, dir: &Vec3) -> Vec3 {
        let mut p = self.center_v();
        for (axis, h) in self.axes().iter().zip(self.half) {
            let s = if axis.dot(dir) >= 0.0 { 1.0 } else { -1.0 };
            p += axis * (s * h);
        }
        p
    }

    pub fn bottom(&self) -> f64 {
        self.center[2] - self.half[2]
    }

    pub fn top(&self) -> f64 {
        self.center[2] + self.half[2]
    }

    /// Corners of the footprint in the xy plane.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let [hx, hy, _] = self.half;
        let [cx, cy, _] = self.center;
        let corner = |a: f64, b: f64| [cx + a * hx * c - b * hy * s, cy + a * hx * s + b * hy * c];
        [corner(1.0, 1.0), corner(-1.0, 1.0), corner(-1.0, -1.0), corner(1.0, -1.0)]
    }

    /// Whether the xy point lies inside the footprint.
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= self.half[0] && v.abs() <= self.half[1]
    }
}

/// Strict 2-D separating-axis overlap of two footprints.
pub fn footprints_overlap(a: &Obb, b: &Obb) -> bool {
    let pa = a.footprint();
    let pb = b.footprint();
    let axes = [a.yaw, a.yaw + std::f64::consts::FRAC_PI_2, b.yaw, b.yaw + std::f64::consts::FRAC_PI_2];
    axes.iter().all(|ang| {
        let (s, c) = ang.sin_cos();
        let proj = |p: &[[f64; 2]; 4]| {
            p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| {
                let d = q[0] * c + q[1] * s;
                (lo.min(d), hi.max(d))
            })
        };
        let (alo, ahi) = proj(&pa);
        let (blo, bhi) = proj(&pb);
        alo < bhi && blo < ahi
    })
}

/// Strict overlap of two yaw-only boxes: shared vertical axis reduces SAT to
/// the z interval plus the footprint test.
pub fn obb_overlap(a: &Obb, b: &Obb) -> bool {
    a.bottom() < b.top() && b.bottom() < a.top() && footprints_overlap(a, b)
}

/// Any convex set queried through its support mapping.
pub trait Support {
    fn support(&self, dir: &Vec3) -> Vec3;
}

impl Support for Obb {
    fn support(&self, dir: &Vec3) -> Vec3 {
        Obb::support(self, dir)
    }
}

/// Convex hull of a box at two consecutive poses.
#[derive(Debug, Clone, Copy)]
pub struct SweptObb {
    pub from: Obb,
    pub to: Obb,
}

impl Support for SweptObb {
    fn support(&self, dir: &Vec3) -> Vec3 {
        let a = self.from.support(dir);
        let b = self.to.support(dir);
        if a.dot(dir) >= b.dot(dir) {
            a
        } else {
            b
        }
    }
}

/// GJK boolean intersection test between two convex sets.
pub fn gjk_intersect<A: Support, B: Support>(a: &A, b: &B) -> bool {
    let support = |d: &Vec3| a.support(d) - b.support(&-d);
    let mut dir = Vec3::x();
    let first = support(&dir);
    let mut simplex: Vec<Vec3> = vec![first];
    dir = -first;
    for _ in 0..128 {
        if dir.norm_squared() < 1e-30 {
            return true;
        }
        let p = support(&dir);
        if p.dot(&dir) <= 0.0 {
            return false;
        }
        simplex.push(p);
        if next_simplex(&mut simplex, &mut dir) {
            return true;
        }
    }
    true
}

fn triple(a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    a.cross(b).cross(c)
}

fn line_case(a: Vec3, b: Vec3, simplex: &mut Vec<Vec3>, dir: &mut Vec3) -> bool {
    let ab = b - a;
    let ao = -a;
    if ab.dot(&ao) > 0.0 {
        *simplex = vec![b, a];
        *dir = triple(&ab, &ao, &ab);
        if dir.norm_squared() < 1e-30 {
            // origin lies on the segment
            return true;
        }
    } else {
        *simplex = vec![a];
        *dir = ao;
    }
    false
}

fn triangle_case(a: Vec3, b: Vec3, c: Vec3, simplex: &mut Vec<Vec3>, dir: &mut Vec3) -> bool {
    let ab = b - a;
    let ac = c - a;
    let ao = -a;
    let abc = ab.cross(&ac);
    if abc.cross(&ac).dot(&ao) > 0.0 {
        if ac.dot(&ao) > 0.0 {
            *simplex = vec![c, a];
            *dir = triple(&ac, &ao, &ac);
            return dir.norm_squared() < 1e-30;
        }
        return line_case(a, b, simplex, dir);
    }
    if ab.cross(&abc).dot(&ao) > 0.0 {
        return line_case(a, b, simplex, dir);
    }
    let side = abc.dot(&ao);
    if side.abs() < 1e-30 {
        return true;
    }
    if side > 0.0 {
        *simplex = vec![c, b, a];
        *dir = abc;
    } else {
        *simplex = vec![b, c, a];
        *dir = -abc;
    }
    false
}

fn next_simplex(simplex: &mut Vec<Vec3>, dir: &mut Vec3) -> bool {
    match simplex.len() {
        2 => {
            let (b, a) = (simplex[0], simplex[1]);
            line_case(a, b, simplex, dir)
        }
        3 => {
            let (c, b, a) = (simplex[0], simplex[1], simplex[2]);
            triangle_case(a, b, c, simplex, dir)
        }
        4 => {
            let (d, c, b, a) = (simplex[0], simplex[1], simplex[2], simplex[3]);
            let ao = -a;
            let ab = b - a;
            let ac = c - a;
            let ad = d - a;
            let abc = ab.cross(&ac);
            let acd = ac.cross(&ad);
            let adb = ad.cross(&ab);
            // face normals oriented away from the opposite vertex
            let orient = |n: Vec3, opposite: Vec3| if n.dot(&opposite) > 0.0 { -n } else { n };
            let abc = orient(abc, ad);
            let acd = orient(acd, ab);
            let adb = orient(adb, ac);
            if abc.dot(&ao) > 0.0 {
                return triangle_case(a, b, c, simplex, dir);
            }
            if acd.dot(&ao) > 0.0 {
                return triangle_case(a, c, d, simplex, dir);
            }
            if adb.dot(&ao) > 0.0 {
                return triangle_case(a, d, b, simplex, dir);
            }
            true
        }
        _ => unreachable!("simplex holds 2..=4 points"),
    }
}

/// Wrap an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn unit(center: [f64; 3], yaw: f64) -> Obb {
        Obb::new(center, [1.0, 1.0, 1.0], yaw)
    }

    #[test]
    fn sat_and_gjk_agree_on_simple_cases() {
        let a = unit([0.0, 0.0, 0.0], 0.0);
        let cases = [
            (unit([0.9, 0.0, 0.0], 0.0), true),
            (unit([1.1, 0.0, 0.0], 0.0), false),
            (unit([1.1, 0.0, 0.0], FRAC_PI_4), true),
            (unit([1.25, 0.0, 0.0], FRAC_PI_4), false),
            (unit([0.0, 0.0, 0.99], 0.3), true),
            (unit([0.0, 0.0, 1.01], 0.3), false),
            (unit([0.8, 0.8, 0.5], 0.1), true),
        ];
        for (b, want) in cases {
            assert_eq!(obb_overlap(&a, &b), want, "{b:?}");
            assert_eq!(gjk_intersect(&a, &b), want, "{b:?}");
        }
    }

    #[test]
    fn swept_box_catches_tunneling() {
        let wall = Obb::new([0.0, 0.0, 0.0], [0.02, 1.0, 1.0], 0.0);
        let from = Obb::new([-0.5, 0.0, 0.0], [0.1, 0.1, 0.1], 0.0);
        let to = Obb::new([0.5, 0.0, 0.0], [0.1, 0.1, 0.1], 0.0);
        assert!(!obb_overlap(&from, &wall) && !obb_overlap(&to, &wall));
        assert!(gjk_intersect(&SweptObb { from, to }, &wall));
        let above = Obb::new([0.0, 0.0, 1.0], [0.02, 1.0, 1.0], 0.0);
        assert!(!gjk_intersect(&SweptObb { from, to }, &above));
    }

    #[test]
    fn face_contact_is_not_overlap_after_shrink() {
        let a = Obb::new([0.0, 0.0, 0.05], [0.1, 0.1, 0.1], 0.0).shrunk(1e-6);
        let b = Obb::new([0.0, 0.0, 0.15], [0.1, 0.1, 0.1], 0.0).shrunk(1e-6);
        assert!(!obb_overlap(&a, &b));
        assert!(!gjk_intersect(&a, &b));
    }

    #[test]
    fn contains_and_normalize() {
        let b = Obb::new([0.0, 0.0, 0.0], [0.4, 0.1, 0.1], PI / 2.0);
        assert!(b.contains_xy(0.0, 0.15));
        assert!(!b.contains_xy(0.15, 0.0));
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(0.3 + 2.0 * PI) - 0.3).abs() < 1e-12);
    }
}
