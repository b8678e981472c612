//! Flat-shaded z-buffered box rasterizer and PPM (P6) images.

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, norm, scale, sub, Pose, Vec3};

pub const VIEW_SIZE: usize = 256;
pub const BACKGROUND: [u8; 3] = [200, 215, 230];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB.
    pub data: Vec<u8>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let bad = |r: &str| Error::invalid("ppm image", r.to_string());
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ascii"))?);
        }
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(bad("only binary P6 with maxval 255 is supported"));
        }
        let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
        let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
        let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing pixel data"))?;
        if data.len() != width * height * 3 {
            return Err(bad("pixel data length does not match header"));
        }
        Ok(Self { width, height, data: data.to_vec() })
    }

    /// Box-filtered grayscale at `side × side`, values in [0, 1].
    pub fn downsample_gray(&self, side: usize) -> Vec<f64> {
        let (bw, bh) = (self.width / side, self.height / side);
        let mut out = vec![0.0; side * side];
        for (cell, v) in out.iter_mut().enumerate() {
            let (cx, cy) = (cell % side, cell / side);
            let mut acc = 0u32;
            for y in cy * bh..(cy + 1) * bh {
                for x in cx * bw..(cx + 1) * bw {
                    let i = 3 * (y * self.width + x);
                    acc += 299 * self.data[i] as u32 + 587 * self.data[i + 1] as u32 + 114 * self.data[i + 2] as u32;
                }
            }
            *v = acc as f64 / (1000.0 * 255.0 * (bw * bh) as f64);
        }
        out
    }
}

/// Oriented box to draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solid {
    pub pose: Pose<f64>,
    pub half: Vec3<f64>,
    pub color: [u8; 3],
}

/// Camera with `forward` along +z of its frame, `right` +x, `down` +y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub eye: Vec3<f64>,
    pub right: Vec3<f64>,
    pub down: Vec3<f64>,
    pub forward: Vec3<f64>,
    pub focal: f64,
}

impl Camera {
    pub fn look_at(eye: Vec3<f64>, target: Vec3<f64>, up_hint: Vec3<f64>, fov_deg: f64, size: usize) -> Self {
        let forward = unit(sub(target, eye));
        let mut right = cross(forward, up_hint);
        if norm(right) < 1e-9 {
            right = cross(forward, [1.0, 0.0, 0.0]);
        }
        let right = unit(right);
        let down = cross(forward, right);
        let focal = 0.5 * size as f64 / (0.5 * fov_deg.to_radians()).tan();
        Self { eye, right, down, forward, focal }
    }

    fn to_camera(&self, p: Vec3<f64>) -> Vec3<f64> {
        let d = sub(p, self.eye);
        [dot(d, self.right), dot(d, self.down), dot(d, self.forward)]
    }
}

fn unit(v: Vec3<f64>) -> Vec3<f64> {
    scale(v, 1.0 / norm(v))
}

const NEAR: f64 = 0.01;
const LIGHT: Vec3<f64> = [0.3713906763541037, 0.5570860145311556, 0.7427813527082074];

// Corner index bits: x = 1, y = 2, z = 4. Each face lists its corners in cyclic order.
const FACES: [([usize; 4], usize, f64); 6] = [
    ([0, 2, 6, 4], 0, -1.0),
    ([1, 3, 7, 5], 0, 1.0),
    ([0, 1, 5, 4], 1, -1.0),
    ([2, 3, 7, 6], 1, 1.0),
    ([0, 1, 3, 2], 2, -1.0),
    ([4, 5, 7, 6], 2, 1.0),
];

/// Rasterize `solids` with a depth buffer. Faces crossing the near plane are
/// skipped.
pub fn rasterize(cam: &Camera, solids: &[Solid], size: usize) -> Image {
    let mut img = Image::filled(size, size, BACKGROUND);
    let mut depth = vec![f64::INFINITY; size * size];
    let c = 0.5 * size as f64;
    for s in solids {
        let corners: [Vec3<f64>; 8] = std::array::from_fn(|i| {
            let local = [
                if i & 1 == 0 { -s.half[0] } else { s.half[0] },
                if i & 2 == 0 { -s.half[1] } else { s.half[1] },
                if i & 4 == 0 { -s.half[2] } else { s.half[2] },
            ];
            cam.to_camera(s.pose.transform_point(local))
        });
        for (idx, axis, sign) in FACES {
            let mut n_local = [0.0; 3];
            n_local[axis] = sign;
            let n_world = s.pose.orientation.rotate(n_local);
            let n_cam = [dot(n_world, cam.right), dot(n_world, cam.down), dot(n_world, cam.forward)];
            let p0 = corners[idx[0]];
            // Back-face: the normal points away from the eye.
            if dot(n_cam, p0) >= 0.0 {
                continue;
            }
            if idx.iter().any(|&k| corners[k][2] < NEAR) {
                continue;
            }
            let shade = 0.45 + 0.55 * dot(n_world, LIGHT).abs();
            let rgb = s.color.map(|v| (v as f64 * shade).round().min(255.0) as u8);
            let pts: [(f64, f64); 4] = idx.map(|k| {
                let p = corners[k];
                (c + cam.focal * p[0] / p[2], c + cam.focal * p[1] / p[2])
            });
            let xmin = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let xmax = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil().min(size as f64) as usize;
            let ymin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let ymax = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().min(size as f64) as usize;
            let area: f64 = (0..4).map(|i| edge(pts[i], pts[(i + 1) % 4], pts[(i + 2) % 4].0, pts[(i + 2) % 4].1)).sum();
            if area.abs() < 1e-9 {
                continue;
            }
            let orient = area.signum();
            let plane_d = dot(n_cam, p0);
            for y in ymin..ymax {
                for x in xmin..xmax {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    if !(0..4).all(|i| orient * edge(pts[i], pts[(i + 1) % 4], px, py) >= 0.0) {
                        continue;
                    }
                    // Ray through the pixel hits the face plane at depth z.
                    let ray = [(px - c) / cam.focal, (py - c) / cam.focal, 1.0];
                    let z = plane_d / dot(n_cam, ray);
                    let k = y * size + x;
                    if z > 0.0 && z < depth[k] {
                        depth[k] = z;
                        img.data[3 * k..3 * k + 3].copy_from_slice(&rgb);
                    }
                }
            }
        }
    }
    img
}

fn edge(a: (f64, f64), b: (f64, f64), x: f64, y: f64) -> f64 {
    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
}
