use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::contact::{compute_contact_force, ContactForce};
use super::render::{rasterize, Camera, Image, Solid, VIEW_SIZE};
use super::scene::{Aabb, SceneSpec};
use crate::error::{Error, Result};
use crate::geometry::{norm, scale, sub, Pose, Quat, Vec3};
use crate::kinematics::{joint_positions, resolve_cartesian_delta, CartesianDelta, JointState};

/// Length of the flattened object state `[position, quaternion wxyz, attached]`.
pub const PANEL_STATE_DIM: usize = 8;
pub const FORCE_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanelState {
    pub pose: Pose<f64>,
    pub attached: bool,
}

impl PanelState {
    pub fn to_array(&self) -> [f64; PANEL_STATE_DIM] {
        let (p, q) = (self.pose.position, self.pose.orientation);
        [p[0], p[1], p[2], q.w, q.x, q.y, q.z, if self.attached { 1.0 } else { 0.0 }]
    }
}

/// Uniform horizontal panel displacement in `[-half_range, half_range]²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSpec {
    pub half_range: f64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self { half_range: 0.02 }
    }
}

/// Adhesion command levels: `g ≥ 0.5` engages, `g ≤ -0.5` releases, anything
/// in between keeps the current state.
pub const ENGAGE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Joint increment in radians plus adhesion command.
    Joint { dq: Vec<f64>, g: f64 },
    /// World-frame Cartesian increment resolved by damped least squares.
    Cartesian(CartesianDelta<f64>),
}

impl Action {
    pub fn g(&self) -> f64 {
        match self {
            Action::Joint { g, .. } => *g,
            Action::Cartesian(d) => d.g,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pickup,
    Place,
    Align,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Agent,
    Wrist,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub f: ContactForce,
    pub q: JointState<f64>,
    pub s: PanelState,
    pub t: u64,
    pub agent_view: Option<Image>,
    pub wrist_view: Option<Image>,
}

impl Observation {
    /// `[f (6), q (n), s (8)]`.
    pub fn low_dim(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FORCE_DIM + self.q.q.len() + PANEL_STATE_DIM);
        v.extend_from_slice(&self.f.to_array());
        v.extend_from_slice(&self.q.q);
        v.extend_from_slice(&self.s.to_array());
        v
    }
}

pub fn low_dim_len(n_joints: usize) -> usize {
    FORCE_DIM + n_joints + PANEL_STATE_DIM
}

/// Success predicates. `lifted` is the panel's height gain since reset.
///
/// Pickup also holds once the panel sits on the target, so a released,
/// installed panel satisfies all three phases.
pub fn check_success(scene: &SceneSpec, panel: &PanelState, lifted: f64, phase: Phase) -> bool {
    let p = &scene.params;
    let place = norm(sub(panel.pose.position, scene.target_frame.position)) <= p.pos_tol;
    match phase {
        Phase::Place => place,
        Phase::Align => place && panel.pose.orientation.angle_to(&scene.target_frame.orientation) <= p.ang_tol,
        Phase::Pickup => (panel.attached && lifted >= p.lift_height) || place,
    }
}

/// Kinematic panel-installation environment.
#[derive(Debug, Clone)]
pub struct Env {
    scene: Arc<SceneSpec>,
    q: Vec<f64>,
    panel: PanelState,
    engaged: bool,
    rel: Option<Pose<f64>>,
    force: ContactForce,
    t: u64,
    panel_start_z: f64,
    saturated: bool,
}

impl Env {
    pub fn new(scene: Arc<SceneSpec>) -> Self {
        let mut env = Self {
            q: scene.home_q.clone(),
            panel: PanelState { pose: scene.panel_home, attached: false },
            engaged: false,
            rel: None,
            force: ContactForce::default(),
            t: 0,
            panel_start_z: scene.panel_home.position[2],
            saturated: false,
            scene,
        };
        env.force = env.contact();
        env
    }

    /// Home the arm and place the panel, optionally displaced. The draw is
    /// a pure function of `(scene.rng_seed, seed)`.
    pub fn reset(&mut self, perturb: Option<&PerturbSpec>, seed: u64) -> Result<Observation> {
        let mut pose = self.scene.panel_home;
        if let Some(p) = perturb {
            let mut rng = ChaCha8Rng::seed_from_u64(self.scene.rng_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ seed);
            let mut tries = 0;
            loop {
                if tries == 100 {
                    return Err(Error::PerturbationRejected(tries));
                }
                tries += 1;
                let r = p.half_range;
                let dx = if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
                let dy = if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
                let cand = [pose.position[0] + dx, pose.position[1] + dy, pose.position[2]];
                if self.scene.workspace.contains(cand) {
                    pose.position = cand;
                    break;
                }
            }
        }
        self.q = self.scene.home_q.clone();
        self.panel = PanelState { pose, attached: false };
        self.engaged = false;
        self.rel = None;
        self.t = 0;
        self.panel_start_z = pose.position[2];
        self.saturated = false;
        self.force = self.contact();
        Ok(self.observe())
    }

    pub fn scene(&self) -> &SceneSpec {
        &self.scene
    }

    pub fn scene_arc(&self) -> Arc<SceneSpec> {
        self.scene.clone()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn panel(&self) -> &PanelState {
        &self.panel
    }

    pub fn engaged(&self) -> bool {
        self.engaged
    }

    pub fn force(&self) -> &ContactForce {
        &self.force
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Whether the last step hit a joint limit.
    pub fn saturated(&self) -> bool {
        self.saturated
    }

    pub fn lifted(&self) -> f64 {
        self.panel.pose.position[2] - self.panel_start_z
    }

    pub fn tool_pose(&self) -> Pose<f64> {
        self.scene.tool_pose(&self.q).expect("configuration length is maintained")
    }

    /// Centroid of the panel's top face.
    pub fn grasp_point(&self) -> Vec3<f64> {
        self.panel.pose.transform_point([0.0, 0.0, self.scene.panel_half[2]])
    }

    pub fn grasp_distance(&self) -> f64 {
        norm(sub(self.tool_pose().position, self.grasp_point()))
    }

    /// Panel pose relative to the tool while attached.
    pub fn attachment(&self) -> Option<Pose<f64>> {
        self.rel
    }

    pub fn check_success(&self, phase: Phase) -> bool {
        check_success(&self.scene, &self.panel, self.lifted(), phase)
    }

    pub fn step(&mut self, action: &Action) -> Result<Observation> {
        let n = self.q.len();
        let p = self.scene.params;
        let mut next = self.q.clone();
        match action {
            Action::Joint { dq, .. } => {
                if dq.len() != n {
                    return Err(Error::dim("joint action", n, dq.len()));
                }
                if dq.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("joint action".into()));
                }
                for (a, d) in next.iter_mut().zip(dq) {
                    *a += d.clamp(-p.max_joint_step, p.max_joint_step);
                }
            }
            Action::Cartesian(delta) => {
                if delta.to_array().iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("cartesian action".into()));
                }
                let capped = delta.capped(p.max_step_pos, p.max_step_rot);
                // The chain is expressed in the base frame.
                let inv = self.scene.arm_base.orientation.conjugate();
                let local = CartesianDelta { d_pos: inv.rotate(capped.d_pos), d_rot: inv.rotate(capped.d_rot), g: capped.g };
                let r = resolve_cartesian_delta(&self.scene.chain, &JointState::new(self.q.clone()), &local, p.damping)?;
                for (a, d) in next.iter_mut().zip(&r.dq) {
                    *a += d;
                }
            }
        }
        self.saturated = self.scene.chain.clamp(&mut next);
        self.q = next;
        let tool = self.tool_pose();
        if let Some(rel) = self.rel {
            self.panel.pose = tool.compose(&rel);
        }
        let g = action.g();
        if g >= ENGAGE {
            self.engaged = true;
        } else if g <= -ENGAGE {
            self.engaged = false;
        }
        if self.engaged && self.rel.is_none() && self.grasp_distance() <= p.grasp_tol {
            self.rel = Some(tool.inverse().compose(&self.panel.pose));
            self.panel.attached = true;
        } else if !self.engaged && self.rel.is_some() {
            self.rel = None;
            self.panel.attached = false;
        }
        self.force = self.contact();
        self.t += 1;
        Ok(self.observe())
    }

    fn contact(&self) -> ContactForce {
        let tool = self.tool_pose();
        let h = self.scene.params.tip_half;
        let mut bodies = vec![Aabb::around(tool.position, [h; 3])];
        if self.panel.attached {
            bodies.push(Aabb::of_oriented(&self.panel.pose, self.scene.panel_half));
        }
        compute_contact_force(&bodies, &self.scene.obstacle_boxes, self.scene.params.k_contact, tool.position)
    }

    pub fn observe(&self) -> Observation {
        Observation {
            f: self.force,
            q: JointState { q: self.q.clone(), timestamp: self.t as f64 * self.scene.dt() },
            s: self.panel,
            t: self.t,
            agent_view: None,
            wrist_view: None,
        }
    }

    /// Observation including both rendered views.
    pub fn observe_full(&self) -> Observation {
        let mut o = self.observe();
        o.agent_view = Some(self.render(View::Agent));
        o.wrist_view = Some(self.render(View::Wrist));
        o
    }

    pub fn solids(&self) -> Vec<Solid> {
        let s = &self.scene;
        let mut out = Vec::new();
        for (i, b) in s.obstacle_boxes.iter().enumerate() {
            let color = if i == 0 { [150, 120, 90] } else { [120, 120, 135] };
            out.push(Solid { pose: Pose::from_translation(b.center()), half: b.half_extents(), color });
        }
        out.push(Solid { pose: s.target_frame, half: [s.panel_half[0], s.panel_half[1], 0.002], color: [60, 180, 90] });
        out.push(Solid { pose: self.panel.pose, half: s.panel_half, color: [40, 80, 200] });
        let pts = joint_positions(&s.chain, &JointState::new(self.q.clone())).expect("configuration length is maintained");
        let world: Vec<Vec3<f64>> = pts.iter().map(|&p| s.arm_base.transform_point(p)).collect();
        for w in world.windows(2) {
            let d = sub(w[1], w[0]);
            let len = norm(d);
            if len < 1e-6 {
                continue;
            }
            let mid = crate::geometry::add(w[0], scale(d, 0.5));
            out.push(Solid { pose: Pose::new(mid, quat_from_x(d)), half: [0.5 * len, 0.025, 0.025], color: [230, 140, 40] });
        }
        let tool = self.tool_pose();
        let tip_color = if self.engaged { [200, 40, 40] } else { [30, 30, 30] };
        out.push(Solid { pose: tool, half: [self.scene.params.tip_half; 3], color: tip_color });
        out
    }

    pub fn camera(&self, view: View) -> Camera {
        match view {
            View::Agent => {
                let c = self.scene.camera;
                Camera::look_at(c.eye, c.target, [0.0, 0.0, 1.0], c.fov_deg, VIEW_SIZE)
            }
            View::Wrist => {
                let tool = self.tool_pose();
                let eye = tool.transform_point([0.06, 0.0, -0.03]);
                let target = tool.transform_point([0.0, 0.0, 0.3]);
                Camera::look_at(eye, target, tool.orientation.rotate([1.0, 0.0, 0.0]), 70.0, VIEW_SIZE)
            }
        }
    }

    pub fn render(&self, view: View) -> Image {
        rasterize(&self.camera(view), &self.solids(), VIEW_SIZE)
    }
}

/// Rotation taking the x axis onto `d`.
fn quat_from_x(d: Vec3<f64>) -> Quat<f64> {
    let u = scale(d, 1.0 / norm(d));
    let axis = crate::geometry::cross([1.0, 0.0, 0.0], u);
    let s = norm(axis);
    let c = u[0];
    if s < 1e-12 {
        return if c > 0.0 { Quat::identity() } else { Quat::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::PI) };
    }
    Quat::from_axis_angle(scale(axis, 1.0 / s), s.atan2(c))
}
