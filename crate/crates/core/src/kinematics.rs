//! Serial revolute chain: forward kinematics, geometric Jacobian and
//! damped-least-squares resolution of Cartesian increments.
//!
//! Joint `i` rotates about `axis_i` (expressed in the frame left by joint
//! `i - 1`) and is followed by the fixed translation `offset_i`; the frame
//! after the last offset is the tool tip.

use crate::error::{Error, Result};
use crate::geometry::{self, cross, norm, sub, Pose, Quat, Vec3};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link<T> {
    pub axis: Vec3<T>,
    pub offset: Vec3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec<T> {
    links: Vec<Link<T>>,
    limits: Vec<(T, T)>,
}

impl<T: Real> ChainSpec<T> {
    pub fn new(links: Vec<Link<T>>, limits: Vec<(T, T)>) -> Result<Self> {
        if links.len() < 2 {
            return Err(Error::invalid("chain", format!("needs at least 2 joints, got {}", links.len())));
        }
        if limits.len() != links.len() {
            return Err(Error::dim("joint limits", links.len(), limits.len()));
        }
        for (i, l) in links.iter().enumerate() {
            if (norm(l.axis) - T::one()).abs() > T::of(1e-9) {
                return Err(Error::invalid("chain", format!("axis of joint {i} is not unit length")));
            }
            if !l.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("offset of joint {i}")));
            }
        }
        for (i, &(lo, hi)) in limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::invalid("chain", format!("joint {i} limits not ordered")));
            }
        }
        Ok(Self { links, limits })
    }

    /// Six revolute joints with UR5e-like link lengths, tool pointing along
    /// the last link.
    pub fn ur5e_like() -> Self {
        let (o, l) = (T::zero(), T::one());
        let z = |h: f64| [o, o, T::of(h)];
        let links = vec![
            Link { axis: [o, o, l], offset: z(0.163) },
            Link { axis: [o, l, o], offset: z(0.425) },
            Link { axis: [o, l, o], offset: z(0.392) },
            Link { axis: [o, l, o], offset: z(0.100) },
            Link { axis: [l, o, o], offset: z(0.100) },
            Link { axis: [o, o, l], offset: z(0.100) },
        ];
        let pi = T::PI();
        let limits = vec![(-pi, pi), (-pi, pi), (T::of(-2.8), T::of(2.8)), (-pi, pi), (-pi, pi), (-pi, pi)];
        Self::new(links, limits).expect("built-in chain is valid")
    }

    /// Tool pointing straight down, in front of the base.
    pub fn ur5e_home() -> Vec<T> {
        [0.0, 0.5, 1.5, std::f64::consts::PI - 2.0, 0.0, 0.0].iter().map(|&v| T::of(v)).collect()
    }

    pub fn n_joints(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link<T>] {
        &self.links
    }

    pub fn limits(&self) -> &[(T, T)] {
        &self.limits
    }

    fn check(&self, q: &[T]) -> Result<()> {
        if q.len() != self.n_joints() {
            return Err(Error::dim("joint vector", self.n_joints(), q.len()));
        }
        Ok(())
    }

    /// Clamp into joint limits; returns whether any joint saturated.
    pub fn clamp(&self, q: &mut [T]) -> bool {
        let mut hit = false;
        for (v, &(lo, hi)) in q.iter_mut().zip(&self.limits) {
            if *v < lo {
                *v = lo;
                hit = true;
            } else if *v > hi {
                *v = hi;
                hit = true;
            }
        }
        hit
    }

    /// World frame of every joint origin (before its rotation) plus the tool.
    fn frames(&self, q: &[T]) -> (Vec<(Vec3<T>, Vec3<T>)>, Pose<T>) {
        let mut pose = Pose::identity();
        let mut joints = Vec::with_capacity(q.len());
        for (link, &angle) in self.links.iter().zip(q) {
            let axis_world = pose.orientation.rotate(link.axis);
            joints.push((pose.position, axis_world));
            let rot = Pose::new([T::zero(); 3], Quat::from_axis_angle(link.axis, angle));
            pose = pose.compose(&rot).compose(&Pose::from_translation(link.offset));
        }
        pose.orientation = pose.orientation.normalized();
        (joints, pose)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState<T> {
    pub q: Vec<T>,
    pub timestamp: T,
}

impl<T: Real> JointState<T> {
    pub fn new(q: Vec<T>) -> Self {
        Self { q, timestamp: T::zero() }
    }
}

/// Cartesian increment `[dx, dy, dz, drx, dry, drz, g]`: world-frame
/// translation, rotation vector, and adhesion command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianDelta<T> {
    pub d_pos: Vec3<T>,
    pub d_rot: Vec3<T>,
    pub g: T,
}

impl<T: Real> CartesianDelta<T> {
    pub fn zero() -> Self {
        Self { d_pos: [T::zero(); 3], d_rot: [T::zero(); 3], g: T::zero() }
    }

    pub fn from_array(a: &[T; 7]) -> Self {
        Self { d_pos: [a[0], a[1], a[2]], d_rot: [a[3], a[4], a[5]], g: a[6] }
    }

    pub fn to_array(&self) -> [T; 7] {
        let (p, r) = (self.d_pos, self.d_rot);
        [p[0], p[1], p[2], r[0], r[1], r[2], self.g]
    }

    /// Scale translation and rotation down to the caps and clip `g` to [-1, 1].
    pub fn capped(&self, max_pos: T, max_rot: T) -> Self {
        let cap = |v: Vec3<T>, m: T| {
            let n = norm(v);
            if n > m {
                geometry::scale(v, m / n)
            } else {
                v
            }
        };
        Self {
            d_pos: cap(self.d_pos, max_pos),
            d_rot: cap(self.d_rot, max_rot),
            g: self.g.max(-T::one()).min(T::one()),
        }
    }

    pub fn twist(&self) -> [T; 6] {
        let (p, r) = (self.d_pos, self.d_rot);
        [p[0], p[1], p[2], r[0], r[1], r[2]]
    }
}

/// 6×n geometric Jacobian, row-major; rows 0..3 linear, 3..6 angular.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian<T> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Real> Jacobian<T> {
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.n + col]
    }

    pub fn column(&self, col: usize) -> [T; 6] {
        std::array::from_fn(|r| self.get(r, col))
    }
}

pub fn forward_kinematics<T: Real>(chain: &ChainSpec<T>, q: &JointState<T>) -> Result<Pose<T>> {
    chain.check(&q.q)?;
    Ok(chain.frames(&q.q).1)
}

/// World positions of every joint origin followed by the tool tip.
pub fn joint_positions<T: Real>(chain: &ChainSpec<T>, q: &JointState<T>) -> Result<Vec<Vec3<T>>> {
    chain.check(&q.q)?;
    let (joints, tool) = chain.frames(&q.q);
    let mut pts: Vec<Vec3<T>> = joints.into_iter().map(|(p, _)| p).collect();
    pts.push(tool.position);
    Ok(pts)
}

pub fn jacobian<T: Real>(chain: &ChainSpec<T>, q: &JointState<T>) -> Result<Jacobian<T>> {
    chain.check(&q.q)?;
    let n = chain.n_joints();
    let (joints, tool) = chain.frames(&q.q);
    let mut data = vec![T::zero(); 6 * n];
    for (i, (p, axis)) in joints.iter().enumerate() {
        let lin = cross(*axis, sub(tool.position, *p));
        for r in 0..3 {
            data[r * n + i] = lin[r];
            data[(r + 3) * n + i] = axis[r];
        }
    }
    Ok(Jacobian { n, data })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution<T> {
    pub dq: Vec<T>,
    /// A joint hit its limit and the increment was clamped.
    pub saturated: bool,
}

/// `dq = Jᵀ (J Jᵀ + λ² I)⁻¹ · twist`, clamped so `q + dq` stays in limits.
pub fn resolve_cartesian_delta<T: Real>(
    chain: &ChainSpec<T>,
    q: &JointState<T>,
    delta: &CartesianDelta<T>,
    damping: T,
) -> Result<Resolution<T>> {
    if !(damping > T::zero()) {
        return Err(Error::invalid("damping", "must be positive"));
    }
    let j = jacobian(chain, q)?;
    let n = j.n;
    let twist = delta.twist();
    let mut normal = [[T::zero(); 6]; 6];
    for (r, row) in normal.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (0..n).map(|k| j.get(r, k) * j.get(c, k)).sum();
        }
        row[r] += damping * damping;
    }
    let y = cholesky_solve6(normal, twist);
    let mut next: Vec<T> = (0..n).map(|k| q.q[k] + (0..6).map(|r| j.get(r, k) * y[r]).sum::<T>()).collect();
    let saturated = chain.clamp(&mut next);
    let dq = next.iter().zip(&q.q).map(|(a, b)| *a - *b).collect();
    Ok(Resolution { dq, saturated })
}

/// Solve `A x = b` for symmetric positive definite 6×6 `A`.
fn cholesky_solve6<T: Real>(a: [[T; 6]; 6], b: [T; 6]) -> [T; 6] {
    let mut l = [[T::zero(); 6]; 6];
    for i in 0..6 {
        for k in 0..=i {
            let s: T = (0..k).map(|p| l[i][p] * l[k][p]).sum();
            if i == k {
                l[i][i] = (a[i][i] - s).max(T::min_positive_value()).sqrt();
            } else {
                l[i][k] = (a[i][k] - s) / l[k][k];
            }
        }
    }
    let mut y = [T::zero(); 6];
    for i in 0..6 {
        let s: T = (0..i).map(|p| l[i][p] * y[p]).sum();
        y[i] = (b[i] - s) / l[i][i];
    }
    let mut x = [T::zero(); 6];
    for i in (0..6).rev() {
        let s: T = (i + 1..6).map(|p| l[p][i] * x[p]).sum();
        x[i] = (y[i] - s) / l[i][i];
    }
    x
}

/// Six-vector pose error `(target - current)` as translation and rotation vector.
pub fn pose_error<T: Real>(current: &Pose<T>, target: &Pose<T>) -> [T; 6] {
    let dp = sub(target.position, current.position);
    let dr = target.orientation.mul(&current.orientation.conjugate()).to_rotation_vector();
    [dp[0], dp[1], dp[2], dr[0], dr[1], dr[2]]
}
