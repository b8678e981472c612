//! Small fixed-size 3-D math: vectors, unit quaternions and rigid poses.

use crate::scalar::Real;

pub type Vec3<T> = [T; 3];

pub fn add<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale<T: Real>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm<T: Real>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

/// Unit quaternion stored as (w, x, y, z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Quat<T> {
    pub fn identity() -> Self {
        Self { w: T::one(), x: T::zero(), y: T::zero(), z: T::zero() }
    }

    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let half = angle * T::of(0.5);
        let s = half.sin();
        Self { w: half.cos(), x: axis[0] * s, y: axis[1] * s, z: axis[2] * s }
    }

    /// Quaternion exponential of a rotation vector (axis * angle).
    pub fn from_rotation_vector(v: Vec3<T>) -> Self {
        let angle = norm(v);
        if angle < T::of(1e-12) {
            // second-order expansion keeps tiny increments accurate
            let h = scale(v, T::of(0.5));
            return Self { w: T::one(), x: h[0], y: h[1], z: h[2] }.normalized();
        }
        Self::from_axis_angle(scale(v, T::one() / angle), angle)
    }

    /// Inverse of [`Quat::from_rotation_vector`]; angle in `[0, π]`.
    pub fn to_rotation_vector(&self) -> Vec3<T> {
        let q = if self.w < T::zero() { self.neg() } else { *self };
        let v = [q.x, q.y, q.z];
        let s = norm(v);
        if s < T::of(1e-15) {
            return scale(v, T::of(2.0));
        }
        let angle = T::of(2.0) * s.atan2(q.w);
        scale(v, angle / s)
    }

    pub fn from_euler_zyx(yaw: T, pitch: T, roll: T) -> Self {
        let qz = Self::from_axis_angle([T::zero(), T::zero(), T::one()], yaw);
        let qy = Self::from_axis_angle([T::zero(), T::one(), T::zero()], pitch);
        let qx = Self::from_axis_angle([T::one(), T::zero(), T::zero()], roll);
        qz.mul(&qy).mul(&qx)
    }

    fn neg(&self) -> Self {
        Self { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn norm(&self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self { w: self.w / n, x: self.x / n, y: self.y / n, z: self.z / n }
    }

    pub fn conjugate(&self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn mul(&self, o: &Self) -> Self {
        Self {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    pub fn rotate(&self, v: Vec3<T>) -> Vec3<T> {
        let u = [self.x, self.y, self.z];
        let two = T::of(2.0);
        let t = scale(cross(u, v), two);
        add(add(v, scale(t, self.w)), cross(u, t))
    }

    /// Rotation angle between two orientations, in `[0, π]`.
    pub fn angle_to(&self, o: &Self) -> T {
        let d = (self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z).abs();
        T::of(2.0) * d.min(T::one()).acos()
    }

    /// Row-major 3×3 rotation matrix.
    pub fn to_matrix(&self) -> [[T; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let one = T::one();
        let two = T::of(2.0);
        [
            [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
            [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
            [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
        ]
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }
}

/// Rigid transform: position in meters plus unit quaternion orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T> {
    pub position: Vec3<T>,
    pub orientation: Quat<T>,
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Self { position: [T::zero(); 3], orientation: Quat::identity() }
    }

    pub fn new(position: Vec3<T>, orientation: Quat<T>) -> Self {
        Self { position, orientation }
    }

    pub fn from_translation(position: Vec3<T>) -> Self {
        Self { position, orientation: Quat::identity() }
    }

    /// `self ∘ other`: apply `other` in the frame of `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            position: add(self.position, self.orientation.rotate(other.position)),
            orientation: self.orientation.mul(&other.orientation),
        }
    }

    pub fn inverse(&self) -> Self {
        let inv = self.orientation.conjugate();
        Self { position: scale(inv.rotate(self.position), -T::one()), orientation: inv }
    }

    pub fn transform_point(&self, p: Vec3<T>) -> Vec3<T> {
        add(self.position, self.orientation.rotate(p))
    }

    /// Pose distance: translation plus `angular_weight` meters per radian.
    pub fn distance(&self, o: &Self, angular_weight: T) -> T {
        norm(sub(self.position, o.position)) + angular_weight * self.orientation.angle_to(&o.orientation)
    }
}
