use std::fmt;
use std::path::Path;

use crate::config::{parse_numbers, ConfigFile};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Quat, Vec3};
use crate::kinematics::{forward_kinematics, pose_error, resolve_cartesian_delta, CartesianDelta, ChainSpec, JointState, Link};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneId {
    Desk,
    Ground,
}

impl SceneId {
    pub fn name(self) -> &'static str {
        match self {
            SceneId::Desk => "desk",
            SceneId::Ground => "ground",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(SceneId::Desk),
            "ground" => Ok(SceneId::Ground),
            other => Err(Error::invalid("scene", format!("unknown scene {other:?}"))),
        }
    }
}

impl fmt::Display for SceneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3<f64>,
    pub max: Vec3<f64>,
}

impl Aabb {
    pub fn new(min: Vec3<f64>, max: Vec3<f64>) -> Result<Self> {
        if (0..3).any(|i| !(min[i] < max[i])) {
            return Err(Error::invalid("box", format!("min {min:?} not below max {max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn around(center: Vec3<f64>, half: Vec3<f64>) -> Self {
        Self { min: std::array::from_fn(|i| center[i] - half[i]), max: std::array::from_fn(|i| center[i] + half[i]) }
    }

    pub fn center(&self) -> Vec3<f64> {
        std::array::from_fn(|i| 0.5 * (self.min[i] + self.max[i]))
    }

    pub fn half_extents(&self) -> Vec3<f64> {
        std::array::from_fn(|i| 0.5 * (self.max[i] - self.min[i]))
    }

    pub fn contains(&self, p: Vec3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Per-axis overlap lengths when the interiors intersect.
    pub fn overlap(&self, o: &Aabb) -> Option<Vec3<f64>> {
        let d: Vec3<f64> = std::array::from_fn(|i| self.max[i].min(o.max[i]) - self.min[i].max(o.min[i]));
        d.iter().all(|&v| v > 0.0).then_some(d)
    }

    /// Bounding box of an oriented box.
    pub fn of_oriented(pose: &Pose<f64>, half: Vec3<f64>) -> Self {
        let m = pose.orientation.to_matrix();
        let ext: Vec3<f64> = std::array::from_fn(|r| (0..3).map(|c| m[r][c].abs() * half[c]).sum());
        Self::around(pose.position, ext)
    }
}

/// Thresholds and caps shared by the environment, teleop and policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvParams {
    pub k_contact: f64,
    pub grasp_tol: f64,
    pub lift_height: f64,
    pub pos_tol: f64,
    pub ang_tol: f64,
    pub max_step_pos: f64,
    pub max_step_rot: f64,
    pub max_joint_step: f64,
    pub damping: f64,
    /// Half edge of the contact box around the tool tip.
    pub tip_half: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            k_contact: 500.0,
            grasp_tol: 0.03,
            lift_height: 0.05,
            pos_tol: 0.02,
            ang_tol: 10f64.to_radians(),
            max_step_pos: 0.015,
            max_step_rot: 0.08,
            max_joint_step: 0.1,
            damping: 0.05,
            tip_half: 0.01,
        }
    }
}

/// Pinhole camera looking from `eye` at `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSpec {
    pub eye: Vec3<f64>,
    pub target: Vec3<f64>,
    pub fov_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub scene_id: SceneId,
    pub panel_home: Pose<f64>,
    pub panel_half: Vec3<f64>,
    pub target_frame: Pose<f64>,
    pub obstacle_boxes: Vec<Aabb>,
    pub arm_base: Pose<f64>,
    pub rng_seed: u64,
    pub workspace: Aabb,
    pub chain: ChainSpec<f64>,
    pub home_q: Vec<f64>,
    pub params: EnvParams,
    pub hz: f64,
    pub camera: CameraSpec,
}

/// Tool pointing straight down with its x axis along world x.
pub fn tool_down() -> Quat<f64> {
    Quat::from_axis_angle([0.0, 1.0, 0.0], std::f64::consts::PI)
}

impl SceneSpec {
    pub fn desk() -> Self {
        let chain = ChainSpec::ur5e_like();
        let base = Pose::identity();
        let home_q = solve_home(&chain, &base, &Pose::new([0.40, 0.0, 0.22], tool_down()));
        let spec = Self {
            scene_id: SceneId::Desk,
            panel_home: Pose::from_translation([0.45, -0.20, 0.01]),
            panel_half: [0.06, 0.04, 0.01],
            target_frame: Pose::new([0.42, 0.25, 0.11], Quat::from_axis_angle([0.0, 0.0, 1.0], 0.5)),
            obstacle_boxes: vec![
                Aabb { min: [-0.3, -0.7, -0.05], max: [1.0, 0.7, 0.0] },
                Aabb { min: [0.37, 0.20, 0.0], max: [0.47, 0.30, 0.10] },
            ],
            arm_base: base,
            rng_seed: 7,
            workspace: Aabb { min: [0.15, -0.55, -0.01], max: [0.85, 0.55, 0.70] },
            chain,
            home_q,
            params: EnvParams::default(),
            hz: 20.0,
            camera: CameraSpec { eye: [1.35, 0.0, 1.05], target: [0.35, 0.0, 0.15], fov_deg: 60.0 },
        };
        spec.validate().expect("built-in desk scene is valid");
        spec
    }

    pub fn ground() -> Self {
        let chain = ChainSpec::ur5e_like();
        let base = Pose::from_translation([0.0, 0.0, 0.35]);
        let home_q = solve_home(&chain, &base, &Pose::new([0.40, 0.0, 0.45], tool_down()));
        let tilt = Quat::from_axis_angle([1.0, 0.0, 0.0], 0.3);
        let spec = Self {
            scene_id: SceneId::Ground,
            panel_home: Pose::from_translation([0.50, -0.25, 0.01]),
            panel_half: [0.06, 0.04, 0.01],
            target_frame: Pose::new([0.48, 0.30, 0.40], tilt),
            obstacle_boxes: vec![
                Aabb { min: [-0.5, -0.8, -0.05], max: [1.2, 0.8, 0.0] },
                Aabb { min: [0.43, 0.25, 0.0], max: [0.53, 0.35, 0.33] },
                Aabb { min: [-0.08, -0.08, 0.0], max: [0.08, 0.08, 0.35] },
            ],
            arm_base: base,
            rng_seed: 11,
            workspace: Aabb { min: [0.15, -0.6, -0.01], max: [0.9, 0.6, 0.9] },
            chain,
            home_q,
            params: EnvParams::default(),
            hz: 20.0,
            camera: CameraSpec { eye: [1.5, 0.0, 1.2], target: [0.45, 0.0, 0.2], fov_deg: 55.0 },
        };
        spec.validate().expect("built-in ground scene is valid");
        spec
    }

    pub fn builtin(id: SceneId) -> Self {
        match id {
            SceneId::Desk => Self::desk(),
            SceneId::Ground => Self::ground(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.workspace.contains(self.panel_home.position) {
            return Err(Error::invalid("scene", "panel_home outside workspace"));
        }
        if !self.workspace.contains(self.target_frame.position) {
            return Err(Error::invalid("scene", "target_frame outside workspace"));
        }
        if self.home_q.len() != self.chain.n_joints() {
            return Err(Error::dim("home configuration", self.chain.n_joints(), self.home_q.len()));
        }
        for pose in [&self.panel_home, &self.target_frame, &self.arm_base] {
            if (pose.orientation.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("scene", "orientation is not a unit quaternion"));
            }
        }
        if !(self.hz > 0.0 && self.hz <= 100.0) {
            return Err(Error::invalid("scene", format!("step rate {} Hz outside (0, 100]", self.hz)));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.hz
    }

    /// Tool pose in world coordinates.
    pub fn tool_pose(&self, q: &[f64]) -> Result<Pose<f64>> {
        let local = forward_kinematics(&self.chain, &JointState::new(q.to_vec()))?;
        Ok(self.arm_base.compose(&local))
    }

    /// Load a scene file: `base = desk|ground` selects defaults, then any of
    /// the keys below override them.
    ///
    /// ```text
    /// base = desk
    /// panel_home = x y z [qw qx qy qz]
    /// panel_half = hx hy hz
    /// target_frame = x y z [qw qx qy qz]
    /// arm_base = x y z [qw qx qy qz]
    /// obstacle = minx miny minz maxx maxy maxz   (repeatable; replaces defaults)
    /// workspace = minx miny minz maxx maxy maxz
    /// rng_seed = 7
    /// hz = 20
    /// home_q = q1 .. qn
    /// k_contact, grasp_tol, lift_height, pos_tol, ang_tol_deg,
    /// max_step_pos, max_step_rot, max_joint_step, damping
    /// joint.N.axis / joint.N.offset / joint.N.limits   (full chain override)
    /// ```
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = ConfigFile::load(path)?;
        let spec = Self::from_config(&mut cfg)?;
        cfg.reject_unknown()?;
        Ok(spec)
    }

    pub fn from_config(cfg: &mut ConfigFile) -> Result<Self> {
        let base: String = cfg.get_or("base", "desk".to_string())?;
        let mut s = Self::builtin(SceneId::parse(&base)?);
        if let Some(p) = pose_key(cfg, "panel_home")? {
            s.panel_home = p;
        }
        if let Some(p) = pose_key(cfg, "target_frame")? {
            s.target_frame = p;
        }
        if let Some(p) = pose_key(cfg, "arm_base")? {
            s.arm_base = p;
        }
        if let Some(v) = fixed::<3>(cfg, "panel_half")? {
            s.panel_half = v;
        }
        if let Some(v) = fixed::<6>(cfg, "workspace")? {
            s.workspace = Aabb::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])?;
        }
        let obstacles = cfg.take_all("obstacle");
        if !obstacles.is_empty() {
            s.obstacle_boxes = obstacles
                .iter()
                .map(|raw| {
                    let v = parse_numbers(raw).map_err(|reason| Error::Config { location: "obstacle".into(), reason })?;
                    if v.len() != 6 {
                        return Err(Error::Config { location: "obstacle".into(), reason: "expected 6 numbers".into() });
                    }
                    Aabb::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
                })
                .collect::<Result<_>>()?;
        }
        s.rng_seed = cfg.get_or("rng_seed", s.rng_seed)?;
        s.hz = cfg.get_or("hz", s.hz)?;
        let p = &mut s.params;
        p.k_contact = cfg.get_or("k_contact", p.k_contact)?;
        p.grasp_tol = cfg.get_or("grasp_tol", p.grasp_tol)?;
        p.lift_height = cfg.get_or("lift_height", p.lift_height)?;
        p.pos_tol = cfg.get_or("pos_tol", p.pos_tol)?;
        p.ang_tol = cfg.get_or("ang_tol_deg", p.ang_tol.to_degrees())?.to_radians();
        p.max_step_pos = cfg.get_or("max_step_pos", p.max_step_pos)?;
        p.max_step_rot = cfg.get_or("max_step_rot", p.max_step_rot)?;
        p.max_joint_step = cfg.get_or("max_joint_step", p.max_joint_step)?;
        p.damping = cfg.get_or("damping", p.damping)?;
        if let Some(chain) = chain_from_config(cfg)? {
            s.home_q = vec![0.0; chain.n_joints()];
            s.chain = chain;
        }
        if let Some(q) = cfg.get_vec("home_q")? {
            s.home_q = q;
        }
        s.validate()?;
        Ok(s)
    }
}

fn fixed<const N: usize>(cfg: &mut ConfigFile, key: &str) -> Result<Option<[f64; N]>> {
    match cfg.get_vec(key)? {
        None => Ok(None),
        Some(v) if v.len() == N => Ok(Some(std::array::from_fn(|i| v[i]))),
        Some(v) => Err(Error::Config { location: key.into(), reason: format!("expected {N} numbers, got {}", v.len()) }),
    }
}

fn pose_key(cfg: &mut ConfigFile, key: &str) -> Result<Option<Pose<f64>>> {
    let Some(v) = cfg.get_vec(key)? else { return Ok(None) };
    match v.len() {
        3 => Ok(Some(Pose::from_translation([v[0], v[1], v[2]]))),
        7 => {
            let q = Quat::new(v[3], v[4], v[5], v[6]);
            if (q.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::Config { location: key.into(), reason: "quaternion is not unit length".into() });
            }
            Ok(Some(Pose::new([v[0], v[1], v[2]], q.normalized())))
        }
        n => Err(Error::Config { location: key.into(), reason: format!("expected 3 or 7 numbers, got {n}") }),
    }
}

/// `joint.0.axis = 0 0 1`, `joint.0.offset = 0 0 0.163`, `joint.0.limits = -3.14 3.14`, ...
pub fn chain_from_config(cfg: &mut ConfigFile) -> Result<Option<ChainSpec<f64>>> {
    let mut links = Vec::new();
    let mut limits = Vec::new();
    loop {
        let i = links.len();
        let Some(axis) = fixed::<3>(cfg, &format!("joint.{i}.axis"))? else { break };
        let offset = fixed::<3>(cfg, &format!("joint.{i}.offset"))?
            .ok_or_else(|| Error::Config { location: format!("joint.{i}"), reason: "missing offset".into() })?;
        let lim = fixed::<2>(cfg, &format!("joint.{i}.limits"))?.unwrap_or([-std::f64::consts::PI, std::f64::consts::PI]);
        links.push(Link { axis, offset });
        limits.push((lim[0], lim[1]));
    }
    if links.is_empty() {
        return Ok(None);
    }
    ChainSpec::new(links, limits).map(Some)
}

/// Iterate damped least squares from the reference posture to a tool pose.
fn solve_home(chain: &ChainSpec<f64>, base: &Pose<f64>, tool: &Pose<f64>) -> Vec<f64> {
    let local = base.inverse().compose(tool);
    let mut q = ChainSpec::<f64>::ur5e_home();
    for _ in 0..400 {
        let state = JointState::new(q.clone());
        let cur = forward_kinematics(chain, &state).expect("home chain");
        let e = pose_error(&cur, &local);
        let delta = CartesianDelta { d_pos: [e[0], e[1], e[2]], d_rot: [e[3], e[4], e[5]], g: 0.0 }.capped(0.05, 0.2);
        let r = resolve_cartesian_delta(chain, &state, &delta, 0.01).expect("home chain");
        for (a, b) in q.iter_mut().zip(&r.dq) {
            *a += b;
        }
    }
    // Rounded so the posture is reproducible from the printed value.
    q.iter().map(|v| (v * 1e6).round() / 1e6).collect()
}
