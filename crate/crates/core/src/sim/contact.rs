//! Penetration-spring contact proxy.

use super::scene::Aabb;
use crate::geometry::{add, cross, sub, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactForce {
    /// Newtons, world frame.
    pub f: Vec3<f64>,
    /// Newton-meters about the tool tip.
    pub tau: Vec3<f64>,
}

impl ContactForce {
    pub fn magnitude(&self) -> f64 {
        crate::geometry::norm(self.f)
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.f[0], self.f[1], self.f[2], self.tau[0], self.tau[1], self.tau[2]]
    }

    pub fn is_zero(&self) -> bool {
        self.f == [0.0; 3] && self.tau == [0.0; 3]
    }
}

/// Force on `body` from one obstacle: `k · depth` along the minimum
/// translation axis, pushing the body out. `None` without penetration.
pub fn box_contact(body: &Aabb, obstacle: &Aabb, k: f64) -> Option<(Vec3<f64>, Vec3<f64>)> {
    let overlap = body.overlap(obstacle)?;
    let axis = (0..3).fold(0, |best, i| if overlap[i] < overlap[best] { i } else { best });
    let (bc, oc) = (body.center(), obstacle.center());
    let sign = if bc[axis] >= oc[axis] { 1.0 } else { -1.0 };
    let mut f = [0.0; 3];
    f[axis] = sign * k * overlap[axis];
    let point = std::array::from_fn(|i| 0.5 * (body.min[i].max(obstacle.min[i]) + body.max[i].min(obstacle.max[i])));
    Some((f, point))
}

/// Sum of spring forces on `bodies` from `obstacles`, with torques about `anchor`.
pub fn compute_contact_force(bodies: &[Aabb], obstacles: &[Aabb], k: f64, anchor: Vec3<f64>) -> ContactForce {
    let mut out = ContactForce::default();
    for b in bodies {
        for o in obstacles {
            if let Some((f, point)) = box_contact(b, o, k) {
                out.f = add(out.f, f);
                out.tau = add(out.tau, cross(sub(point, anchor), f));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_penetration_gives_exactly_zero() {
        let a = Aabb::new([0.0; 3], [1.0; 3]).unwrap();
        let b = Aabb::new([1.0, 0.0, 0.0], [2.0, 1.0, 1.0]).unwrap();
        assert!(compute_contact_force(&[a], &[b], 500.0, [0.0; 3]).is_zero());
    }

    #[test]
    fn force_follows_minimum_overlap_axis() {
        // Body sinks 4 mm into a floor slab: push straight up with k·d.
        let floor = Aabb::new([-1.0, -1.0, -0.1], [1.0, 1.0, 0.0]).unwrap();
        let tip = Aabb::around([0.2, 0.0, 0.006], [0.01; 3]);
        let c = compute_contact_force(&[tip], &[floor], 500.0, [0.2, 0.0, 0.006]);
        assert!((c.f[2] - 500.0 * 0.004).abs() < 1e-12);
        assert_eq!((c.f[0], c.f[1]), (0.0, 0.0));
        assert!((c.magnitude() - 2.0).abs() < 1e-12);
        // Side entry: overlap in x smaller than in z, push toward -x.
        let wall = Aabb::new([0.0, -1.0, 0.0], [0.5, 1.0, 1.0]).unwrap();
        let body = Aabb::around([-0.005, 0.0, 0.5], [0.01; 3]);
        let (f, _) = box_contact(&body, &wall, 100.0).unwrap();
        assert!(f[0] < 0.0 && f[1] == 0.0 && f[2] == 0.0);
        assert!((f[0] + 100.0 * 0.005).abs() < 1e-12);
    }

    #[test]
    fn magnitude_grows_with_depth() {
        let floor = Aabb::new([-1.0, -1.0, -0.1], [1.0, 1.0, 0.0]).unwrap();
        let mut last = 0.0;
        for d in [0.001, 0.002, 0.005, 0.009] {
            let tip = Aabb::around([0.0, 0.0, 0.01 - d], [0.01; 3]);
            let m = compute_contact_force(&[tip], &[floor], 500.0, [0.0; 3]).magnitude();
            assert!(m > last);
            last = m;
        }
    }
}
