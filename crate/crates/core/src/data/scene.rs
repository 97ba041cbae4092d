//! Procedural road scenes seen from a camera riding the road centerline.
//!
//! The road lies on flat ground. Its centerline follows a piecewise-smooth
//! curvature profile `κ(s)` over arc length `s`; positive curvature turns
//! right. The camera looks along the vehicle heading with zero pitch, so a
//! ground point at lateral `X` (right) and forward `Z` appears at normalized
//! image coordinates `x = 0.5 + f·X/Z`, `y = horizon + f·h/Z` (both in
//! `[0, 1]`, `y` growing downwards).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mainnet::VehicleState;
use crate::seed;

/// Segmentation classes of the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Road = 0,
    Marking = 1,
    Background = 2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    /// Raw render size (height, width).
    pub render_hw: [usize; 2],
    /// Seconds between raw frames.
    pub raw_dt: f64,
    /// Curvature bound in 1/m.
    pub kappa_max: f64,
    /// Probability that a segment is straight.
    pub straight_prob: f64,
    /// Segment length range in metres.
    pub segment_len: [f64; 2],
    /// Length of the cosine blend between segments.
    pub ramp_len: f64,
    pub speed_mean: f64,
    pub speed_std: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Relaxation time of the speed process in seconds.
    pub speed_tau: f64,
    /// Nominal lighting level in `[0, 1]`.
    pub lighting: f64,
    /// Half-range of the per-sequence lighting draw.
    pub lighting_jitter: f64,
    /// Width of one lane; the road carries two.
    pub lane_width: f64,
    /// Standard deviation of additive pixel noise (fraction of full scale).
    pub noise: f64,
    pub wheelbase: f64,
    /// Torque per unit steering rate (N·m per rad/s).
    pub torque_gain: f64,
    pub camera_height: f64,
    /// Focal length in units of image width.
    pub focal: f64,
    /// Normalized row of the horizon.
    pub horizon: f64,
    /// Ground beyond this distance renders as haze.
    pub view_distance: f64,
    /// Negate the curvature profile.
    pub mirror: bool,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            render_hw: [64, 64],
            raw_dt: 0.05,
            kappa_max: 0.008,
            straight_prob: 0.25,
            segment_len: [40.0, 120.0],
            ramp_len: 20.0,
            speed_mean: 22.0,
            speed_std: 4.0,
            speed_min: 8.0,
            speed_max: 32.0,
            speed_tau: 6.0,
            lighting: 0.8,
            lighting_jitter: 0.2,
            lane_width: 3.7,
            noise: 0.02,
            wheelbase: 2.7,
            torque_gain: 0.5,
            camera_height: 1.5,
            focal: 2.0,
            horizon: 0.45,
            view_distance: 120.0,
            mirror: false,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(format!("scenario: {msg}")));
        if self.render_hw[0] == 0 || self.render_hw[1] == 0 {
            return bad("render_hw must be positive");
        }
        if !(self.raw_dt > 0.0) {
            return bad("raw_dt must be positive");
        }
        if !(self.kappa_max >= 0.0) || self.kappa_max * (self.view_distance + self.ramp_len) > 1.3 {
            return bad("kappa_max must be ≥ 0 and keep the visible road bending less than 75°");
        }
        if !(0.0..=1.0).contains(&self.straight_prob) {
            return bad("straight_prob must lie in [0, 1]");
        }
        if !(self.segment_len[0] > 0.0 && self.segment_len[0] <= self.segment_len[1]) {
            return bad("segment_len must be an increasing positive range");
        }
        if !(self.ramp_len >= 0.0) || self.ramp_len > self.segment_len[0] {
            return bad("ramp_len must lie in [0, segment_len[0]]");
        }
        if !(self.speed_min >= 0.0 && self.speed_min <= self.speed_max) {
            return bad("speed range must satisfy 0 ≤ speed_min ≤ speed_max");
        }
        if !(self.speed_std >= 0.0 && self.speed_tau > 0.0) {
            return bad("speed_std must be ≥ 0 and speed_tau > 0");
        }
        if !(0.0..=1.0).contains(&self.lighting) || !(self.lighting_jitter >= 0.0) {
            return bad("lighting must lie in [0, 1] and lighting_jitter be ≥ 0");
        }
        if !(self.lane_width > 0.3 && self.noise >= 0.0 && self.wheelbase > 0.0) {
            return bad("lane_width, noise and wheelbase out of range");
        }
        if !(self.camera_height > 0.0 && self.focal > 0.0 && self.view_distance > 0.0) {
            return bad("camera_height, focal and view_distance must be positive");
        }
        if !(self.horizon > 0.0 && self.horizon < 1.0) {
            return bad("horizon must lie in (0, 1)");
        }
        let nearest = self.focal * self.camera_height / (1.0 - self.horizon);
        if nearest <= self.speed_max * self.raw_dt * 2.5 {
            return bad("camera sees too close to the car for the speed range");
        }
        Ok(())
    }

    pub fn road_half_width(&self) -> f64 {
        self.lane_width
    }
}

/// Vehicle pose in the world: position and heading (radians from the world
/// `+z` axis towards `+x`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
}

impl Pose {
    /// Vehicle-frame `(X right, Z forward)` to world `(x, z)`.
    pub fn to_world(&self, lx: f64, lz: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (self.x + lx * c + lz * s, self.z - lx * s + lz * c)
    }

    pub fn to_local(&self, wx: f64, wz: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (dx, dz) = (wx - self.x, wz - self.z);
        (dx * c - dz * s, dx * s + dz * c)
    }
}

/// Pinhole camera in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub height: f64,
    pub horizon: f64,
}

impl Camera {
    pub fn project(&self, lx: f64, lz: f64) -> (f64, f64) {
        (0.5 + self.focal * lx / lz, self.horizon + self.focal * self.height / lz)
    }

    /// Ground point under an image position, `None` at or above the horizon.
    pub fn unproject(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        if y <= self.horizon {
            return None;
        }
        let lz = self.focal * self.height / (y - self.horizon);
        Some(((x - 0.5) * lz / self.focal, lz))
    }
}

const GRID_DS: f64 = 0.25;
/// Arc length of the first raw frame; leaves room for the torque look-back.
const START_S: f64 = 20.0;

#[derive(Debug, Clone)]
struct CurvatureProfile {
    starts: Vec<f64>,
    kappas: Vec<f64>,
    ramp: f64,
}

impl CurvatureProfile {
    fn sample<R: Rng>(rng: &mut R, p: &ScenarioParams, length: f64) -> Self {
        let mut starts = Vec::new();
        let mut kappas = Vec::new();
        let mut s = -p.segment_len[1];
        while s < length {
            starts.push(s);
            let k = if rng.gen_bool(p.straight_prob) || p.kappa_max == 0.0 {
                0.0
            } else {
                rng.gen_range(-p.kappa_max..=p.kappa_max)
            };
            kappas.push(if p.mirror { -k } else { k });
            s += if p.segment_len[0] < p.segment_len[1] {
                rng.gen_range(p.segment_len[0]..p.segment_len[1])
            } else {
                p.segment_len[0]
            };
        }
        Self {
            starts,
            kappas,
            ramp: p.ramp_len,
        }
    }

    fn at(&self, s: f64) -> f64 {
        let i = self.starts.partition_point(|&a| a <= s).saturating_sub(1);
        let k = self.kappas[i];
        if self.ramp > 0.0 {
            let half = self.ramp / 2.0;
            if i + 1 < self.starts.len() && s > self.starts[i + 1] - half {
                let w = (s - (self.starts[i + 1] - half)) / self.ramp;
                return blend(k, self.kappas[i + 1], w);
            }
            if i > 0 && s < self.starts[i] + half {
                let w = (s - (self.starts[i] - half)) / self.ramp;
                return blend(self.kappas[i - 1], k, w);
            }
        }
        k
    }
}

fn blend(a: f64, b: f64, w: f64) -> f64 {
    let t = 0.5 - 0.5 * (std::f64::consts::PI * w.clamp(0.0, 1.0)).cos();
    a + (b - a) * t
}

/// Deterministic vehicle motion for one driving sequence.
#[derive(Debug, Clone)]
pub struct Trajectory {
    params: ScenarioParams,
    profile: CurvatureProfile,
    theta: Vec<f64>,
    gx: Vec<f64>,
    gz: Vec<f64>,
    /// Arc length at each raw frame.
    pub s: Vec<f64>,
    /// Speed at each raw frame.
    pub speed: Vec<f64>,
    pub lighting: f64,
    seed: u64,
}

/// Precomputed centerline ahead of the vehicle for one frame.
#[derive(Debug, Clone)]
pub struct FrameView<'a> {
    traj: &'a Trajectory,
    pub pose: Pose,
    s0: f64,
    /// Centerline samples in the vehicle frame: (X, Z, relative heading, s).
    line: Vec<[f64; 4]>,
}

impl Trajectory {
    pub fn new(seed: u64, params: &ScenarioParams, raw_len: usize) -> Result<Self> {
        params.validate()?;
        if raw_len == 0 {
            return Err(Error::usage("a sequence needs at least one raw frame"));
        }
        let mut speed_rng = seed::rng(seed, 1);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let clamp = |v: f64| v.clamp(params.speed_min, params.speed_max);
        let mut v = clamp(params.speed_mean + params.speed_std * normal.sample(&mut speed_rng));
        let a = params.raw_dt / params.speed_tau;
        let kick = params.speed_std * (2.0 * a).sqrt();
        let mut s = Vec::with_capacity(raw_len);
        let mut speed = Vec::with_capacity(raw_len);
        let mut pos = START_S;
        for _ in 0..raw_len {
            s.push(pos);
            speed.push(v);
            pos += v * params.raw_dt;
            v = clamp(v + (params.speed_mean - v) * a + kick * normal.sample(&mut speed_rng));
        }
        let length = pos + params.view_distance * 1.5 + params.segment_len[1];
        let profile = CurvatureProfile::sample(&mut seed::rng(seed, 0), params, length);
        let n = (length / GRID_DS).ceil() as usize + 2;
        let mut theta = vec![0.0; n];
        let mut gx = vec![0.0; n];
        let mut gz = vec![0.0; n];
        let mut k_prev = profile.at(0.0);
        for i in 1..n {
            let k = profile.at(i as f64 * GRID_DS);
            theta[i] = theta[i - 1] + 0.5 * (k_prev + k) * GRID_DS;
            let mid = 0.5 * (theta[i - 1] + theta[i]);
            gx[i] = gx[i - 1] + GRID_DS * mid.sin();
            gz[i] = gz[i - 1] + GRID_DS * mid.cos();
            k_prev = k;
        }
        let mut light_rng = seed::rng(seed, 2);
        let lighting = (params.lighting
            + params.lighting_jitter * light_rng.gen_range(-1.0..=1.0))
        .clamp(0.0, 1.0);
        Ok(Self {
            params: params.clone(),
            profile,
            theta,
            gx,
            gz,
            s,
            speed,
            lighting,
            seed,
        })
    }

    pub fn params(&self) -> &ScenarioParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn camera(&self) -> Camera {
        Camera {
            focal: self.params.focal,
            height: self.params.camera_height,
            horizon: self.params.horizon,
        }
    }

    pub fn curvature(&self, s: f64) -> f64 {
        self.profile.at(s)
    }

    pub fn pose_at(&self, s: f64) -> Pose {
        let u = (s / GRID_DS).max(0.0);
        let i = (u.floor() as usize).min(self.theta.len() - 2);
        let w = u - i as f64;
        let lerp = |v: &[f64]| v[i] + (v[i + 1] - v[i]) * w;
        Pose {
            x: lerp(&self.gx),
            z: lerp(&self.gz),
            theta: lerp(&self.theta),
        }
    }

    pub fn pose(&self, t: usize) -> Pose {
        self.pose_at(self.s[t])
    }

    fn angle_at(&self, s: f64) -> f64 {
        (self.params.wheelbase * self.curvature(s)).atan()
    }

    /// Ground-truth state of raw frame `t`. Torque is proportional to the
    /// steering rate over the preceding raw interval.
    pub fn state(&self, t: usize) -> VehicleState {
        let s = self.s[t];
        let angle = self.angle_at(s);
        let back = s - self.speed[t] * self.params.raw_dt;
        let rate = (angle - self.angle_at(back)) / self.params.raw_dt;
        VehicleState {
            angle,
            speed: self.speed[t],
            torque: self.params.torque_gain * rate,
        }
    }

    pub fn view(&self, t: usize) -> FrameView<'_> {
        let s0 = self.s[t];
        let pose = self.pose_at(s0);
        let first = (s0 / GRID_DS).floor() as usize;
        let reach = self.params.view_distance * 1.2 + 2.0 * GRID_DS;
        let mut line = Vec::new();
        let mut i = first;
        while i < self.theta.len() {
            let (lx, lz) = pose.to_local(self.gx[i], self.gz[i]);
            let s = i as f64 * GRID_DS;
            line.push([lx, lz, self.theta[i] - pose.theta, s]);
            if s - s0 > reach {
                break;
            }
            i += 1;
        }
        FrameView {
            traj: self,
            pose,
            s0,
            line,
        }
    }

    /// Render raw frame `t` as interleaved RGB bytes (`H×W×3`).
    pub fn render(&self, t: usize) -> Vec<u8> {
        let [h, w] = self.params.render_hw;
        let view = self.view(t);
        let mut noise_rng = seed::rng(seed::derive(self.seed, 3), t as u64);
        let normal = Normal::new(0.0, self.params.noise.max(1e-12)).expect("valid sigma");
        let gain = 0.4 + 0.6 * self.lighting;
        let mut out = Vec::with_capacity(h * w * 3);
        for i in 0..h {
            let y = (i as f64 + 0.5) / h as f64;
            for j in 0..w {
                let x = (j as f64 + 0.5) / w as f64;
                let rgb = view.color(x, y);
                for c in rgb {
                    let mut v = c * gain;
                    if self.params.noise > 0.0 {
                        v += normal.sample(&mut noise_rng);
                    }
                    out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        out
    }
}

/// Where the centerline sits at a given forward distance.
struct LineHit {
    x: f64,
    heading: f64,
    s: f64,
}

impl FrameView<'_> {
    fn line_at(&self, lz: f64) -> Option<LineHit> {
        let k = self.line.partition_point(|p| p[1] < lz);
        if k == 0 || k >= self.line.len() {
            return None;
        }
        let (a, b) = (self.line[k - 1], self.line[k]);
        let w = (lz - a[1]) / (b[1] - a[1]);
        Some(LineHit {
            x: a[0] + (b[0] - a[0]) * w,
            heading: a[2] + (b[2] - a[2]) * w,
            s: a[3] + (b[3] - a[3]) * w,
        })
    }

    /// Signed distance from the centerline and arc length of a ground
    /// point, `None` when it lies beyond the view distance.
    fn road_coords(&self, lx: f64, lz: f64) -> Option<(f64, f64)> {
        if lz > self.traj.params.view_distance {
            return None;
        }
        let hit = self.line_at(lz)?;
        Some(((lx - hit.x) * hit.heading.cos(), hit.s))
    }

    fn classify_ground(&self, lx: f64, lz: f64) -> Class {
        let p = &self.traj.params;
        let Some((d, s)) = self.road_coords(lx, lz) else {
            return Class::Background;
        };
        let half = p.road_half_width();
        let d = d.abs();
        if d >= half {
            return Class::Background;
        }
        let edge = d > half - 0.15;
        let dash = d < 0.075 && (s / 9.0).fract() < 1.0 / 3.0;
        if edge || dash {
            Class::Marking
        } else {
            Class::Road
        }
    }

    /// Oracle class at normalized image coordinates.
    pub fn classify(&self, x: f64, y: f64) -> Class {
        match self.traj.camera().unproject(x, y) {
            Some((lx, lz)) => self.classify_ground(lx, lz),
            None => Class::Background,
        }
    }

    fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let cam = self.traj.camera();
        let Some((lx, lz)) = cam.unproject(x, y) else {
            let t = (y / cam.horizon).clamp(0.0, 1.0);
            return [0.45 + 0.2 * t, 0.6 + 0.15 * t, 0.85];
        };
        if lz > self.traj.params.view_distance {
            return [0.62, 0.66, 0.62];
        }
        let (wx, wz) = self.pose.to_world(lx, lz);
        let tex = (0.8 * wx).sin() * (0.7 * wz).sin();
        match self.classify_ground(lx, lz) {
            Class::Road => {
                let v = 0.35 * (1.0 + 0.08 * tex);
                [v, v, v * 1.04]
            }
            Class::Marking => [0.95, 0.94, 0.88],
            Class::Background => {
                let m = 1.0 + 0.3 * tex;
                [0.22 * m, 0.45 * m, 0.16 * m]
            }
        }
    }

    /// Image motion, in normalized units, of the scene point seen at
    /// `(x, y)` in this frame when the vehicle moves to `next`. Points at
    /// or above the horizon are at infinity and move with rotation only.
    pub fn flow_to(&self, next: &Pose, x: f64, y: f64) -> (f64, f64) {
        let cam = self.traj.camera();
        match cam.unproject(x, y) {
            Some((lx, lz)) => {
                let (wx, wz) = self.pose.to_world(lx, lz);
                let (nx, nz) = next.to_local(wx, wz);
                let (px, py) = cam.project(nx, nz.max(1e-3));
                (px - x, py - y)
            }
            None => {
                let d = next.theta - self.pose.theta;
                let (s, c) = d.sin_cos();
                let dx = (x - 0.5) / cam.focal;
                let dy = (y - cam.horizon) / cam.focal;
                let nx = dx * c - s;
                let nz = dx * s + c;
                (
                    0.5 + cam.focal * nx / nz - x,
                    cam.horizon + cam.focal * dy / nz - y,
                )
            }
        }
    }

    pub fn arc_length(&self) -> f64 {
        self.s0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight() -> ScenarioParams {
        ScenarioParams {
            kappa_max: 0.0,
            noise: 0.0,
            ..ScenarioParams::default()
        }
    }

    #[test]
    fn straight_road_has_zero_angle_and_torque() {
        let tr = Trajectory::new(3, &straight(), 30).unwrap();
        for t in 0..tr.len() {
            let s = tr.state(t);
            assert_eq!(s.angle, 0.0);
            assert_eq!(s.torque, 0.0);
        }
    }

    #[test]
    fn project_inverts_unproject() {
        let cam = Camera {
            focal: 2.0,
            height: 1.5,
            horizon: 0.45,
        };
        let (lx, lz) = cam.unproject(0.3, 0.8).unwrap();
        let (x, y) = cam.project(lx, lz);
        assert!((x - 0.3).abs() < 1e-12 && (y - 0.8).abs() < 1e-12);
        assert!(cam.unproject(0.5, 0.4).is_none());
    }

    #[test]
    fn pose_round_trip() {
        let p = Pose {
            x: 3.0,
            z: -2.0,
            theta: 0.4,
        };
        let (wx, wz) = p.to_world(1.5, 7.0);
        let (lx, lz) = p.to_local(wx, wz);
        assert!((lx - 1.5).abs() < 1e-12 && (lz - 7.0).abs() < 1e-12);
    }

    #[test]
    fn render_is_deterministic_and_sized() {
        let p = ScenarioParams::default();
        let a = Trajectory::new(11, &p, 4).unwrap();
        let b = Trajectory::new(11, &p, 4).unwrap();
        let fa = a.render(3);
        assert_eq!(fa.len(), 64 * 64 * 3);
        assert_eq!(fa, b.render(3));
    }

    #[test]
    fn speeds_respect_bounds() {
        let p = ScenarioParams::default();
        let tr = Trajectory::new(5, &p, 500).unwrap();
        assert!(tr.speed.iter().all(|&v| v >= p.speed_min && v <= p.speed_max));
    }

    #[test]
    fn invalid_horizon_is_rejected() {
        let p = ScenarioParams {
            horizon: 1.2,
            ..ScenarioParams::default()
        };
        assert!(matches!(Trajectory::new(0, &p, 3), Err(Error::Config(_))));
    }
}
