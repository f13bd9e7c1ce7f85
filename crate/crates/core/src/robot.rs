//! Drill-target transform chain and a kinematic position-based visual
//! servoing loop.
//!
//! Frame names follow `T_a_b`: the pose of frame `a` expressed in frame
//! `b` (maps `a` coordinates to `b` coordinates). Frames: `b` robot base,
//! `e` end effector, `e0` end effector at capture time, `c` camera, `s`
//! scene (sensor cloud), `t` tool tip, `thope` desired tool pose.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{RigidTransform, Vector3};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            fx: 600.0,
            fy: 600.0,
            cx: 320.0,
            cy: 240.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSet<T: Real> {
    /// Camera in end-effector frame (hand-eye).
    pub t_c_e: RigidTransform<T>,
    /// Tool tip in end-effector frame.
    pub t_t_e: RigidTransform<T>,
    /// Only scales measurement noise in the simulation.
    pub intrinsics: Intrinsics,
}

impl<T: Real> Default for CalibrationSet<T> {
    fn default() -> Self {
        Self {
            t_c_e: RigidTransform::identity(),
            t_t_e: RigidTransform::identity(),
            intrinsics: Intrinsics::default(),
        }
    }
}

/// Desired tool pose in the current tool frame:
/// `inv(T_t_e) * T_c_e * T_s_c * T_thope_s`.
pub fn drill_target_in_tool<T: Real>(
    calib: &CalibrationSet<T>,
    t_s_c: &RigidTransform<T>,
    t_thope_s: &RigidTransform<T>,
) -> RigidTransform<T> {
    calib.t_t_e.inverse() * calib.t_c_e * *t_s_c * *t_thope_s
}

/// Desired tool pose in the base frame: `T_e0_b * T_t_e * T_thope_t`.
pub fn drill_target_in_base<T: Real>(
    t_e0_b: &RigidTransform<T>,
    calib: &CalibrationSet<T>,
    t_thope_t: &RigidTransform<T>,
) -> RigidTransform<T> {
    *t_e0_b * calib.t_t_e * *t_thope_t
}

/// Angular then linear velocity, both in the current tool frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist<T: Real> {
    pub angular: Vector3<T>,
    pub linear: Vector3<T>,
}

impl<T: Real> Twist<T> {
    pub fn zero() -> Self {
        Self {
            angular: Vector3::zeros(),
            linear: Vector3::zeros(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.angular.iter().chain(self.linear.iter()).all(|v| *v == T::zero())
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            angular: self.angular * k,
            linear: self.linear * k,
        }
    }

    /// Re-expresses a twist given in frame `a` in frame `b`, where `t` is
    /// the pose of `a` in `b` (adjoint map).
    pub fn transformed(&self, t: &RigidTransform<T>) -> Self {
        let r = t.rotation();
        let w = r * self.angular;
        Self {
            angular: w,
            linear: r * self.linear + t.translation().cross(&w),
        }
    }

    /// Pose increment after moving with this twist for `dt`: rotation by
    /// `angular * dt`, translation by `linear * dt`.
    pub fn step(&self, dt: T) -> RigidTransform<T> {
        RigidTransform::from_rotation_vector(self.angular * dt, self.linear * dt)
    }
}

/// Per-run perturbations. Calibration noise is drawn once per run, the
/// measurement noise once per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoNoise {
    /// Std. dev. of the hand-eye rotation vector error (radians).
    pub calib_rot_sigma: f64,
    /// Std. dev. of the hand-eye translation error (metres).
    pub calib_trans_sigma: f64,
    pub meas_rot_sigma: f64,
    pub meas_trans_sigma: f64,
    /// Std. dev. of focal-length errors (pixels).
    pub focal_sigma: f64,
    /// Std. dev. of principal-point errors (pixels).
    pub center_sigma: f64,
}

impl ServoNoise {
    pub fn none() -> Self {
        Self {
            calib_rot_sigma: 0.0,
            calib_trans_sigma: 0.0,
            meas_rot_sigma: 0.0,
            meas_trans_sigma: 0.0,
            focal_sigma: 0.0,
            center_sigma: 0.0,
        }
    }

    /// Calibration errors of 0.01 on both vectors, 5 px focal and 1 px
    /// principal-point errors, and a small per-step pose jitter.
    pub fn typical() -> Self {
        Self {
            calib_rot_sigma: 0.01,
            calib_trans_sigma: 0.01,
            meas_rot_sigma: 1e-4,
            meas_trans_sigma: 2e-5,
            focal_sigma: 5.0,
            center_sigma: 1.0,
        }
    }

    fn is_valid(&self) -> bool {
        [
            self.calib_rot_sigma,
            self.calib_trans_sigma,
            self.meas_rot_sigma,
            self.meas_trans_sigma,
            self.focal_sigma,
            self.center_sigma,
        ]
        .iter()
        .all(|v| *v >= 0.0 && v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoParams<T: Real> {
    /// Proportional gain (1/s).
    pub gain: T,
    /// Integration step (s).
    pub dt: T,
    /// Translation threshold (m).
    pub stop_trans: T,
    /// Rotation threshold (radians).
    pub stop_rot: T,
    pub max_steps: usize,
    pub noise: ServoNoise,
}

impl<T: Real> Default for ServoParams<T> {
    fn default() -> Self {
        Self {
            gain: T::one(),
            dt: T::of(0.01),
            stop_trans: T::of(1e-4),
            stop_rot: T::from_degrees(0.05),
            max_steps: 5000,
            noise: ServoNoise::none(),
        }
    }
}

impl<T: Real> ServoParams<T> {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gain > T::zero() && self.dt > T::zero()) {
            return Err("gain and dt must be positive".into());
        }
        if !(self.stop_trans > T::zero() && self.stop_rot > T::zero()) {
            return Err("stop thresholds must be positive".into());
        }
        if self.max_steps == 0 {
            return Err("max_steps must be at least 1".into());
        }
        if !self.noise.is_valid() {
            return Err("noise levels must be non-negative".into());
        }
        Ok(())
    }
}

/// Translation norm and rotation angle (radians) of `inv(current) * target`.
pub fn pose_error<T: Real>(current: &RigidTransform<T>, target: &RigidTransform<T>) -> (T, T) {
    let e = current.inverse() * *target;
    (e.translation().norm(), e.rotation_angle())
}

/// Proportional control law on the pose error. Returns a zero twist and
/// `done = true` once both errors are under their thresholds.
pub fn pbvs_step<T: Real>(current: &RigidTransform<T>, target: &RigidTransform<T>, p: &ServoParams<T>) -> (Twist<T>, bool) {
    let e = current.inverse() * *target;
    if e.translation().norm() < p.stop_trans && e.rotation_angle() < p.stop_rot {
        return (Twist::zero(), true);
    }
    let twist = Twist {
        angular: e.rotation_vector(),
        linear: e.translation(),
    };
    (twist.scaled(p.gain), false)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoSample<T: Real> {
    pub t: T,
    /// True tool pose in the base frame.
    pub pose: RigidTransform<T>,
    /// True errors; rotation in radians.
    pub e_trans: T,
    pub e_rot: T,
    /// Commanded twist at this state.
    pub twist: Twist<T>,
}

impl<T: Real> ServoSample<T> {
    /// t, x, y, z, qw, qx, qy, qz, e_trans, e_rot (degrees), wx, wy, wz,
    /// vx, vy, vz.
    pub fn csv_row(&self) -> [f64; 16] {
        let p = self.pose.translation();
        let q = self.pose.rotation();
        let q = q.quaternion();
        let (w, v) = (self.twist.angular, self.twist.linear);
        [
            self.t.as_f64(),
            p.x.as_f64(),
            p.y.as_f64(),
            p.z.as_f64(),
            q.w.as_f64(),
            q.i.as_f64(),
            q.j.as_f64(),
            q.k.as_f64(),
            self.e_trans.as_f64(),
            self.e_rot.to_degrees(),
            w.x.as_f64(),
            w.y.as_f64(),
            w.z.as_f64(),
            v.x.as_f64(),
            v.y.as_f64(),
            v.z.as_f64(),
        ]
    }
}

pub const TRAJECTORY_HEADER: [&str; 16] = [
    "t", "x", "y", "z", "qw", "qx", "qy", "qz", "e_trans", "e_rot", "wx", "wy", "wz", "vx", "vy", "vz",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ServoRun<T: Real> {
    pub samples: Vec<ServoSample<T>>,
    pub converged: bool,
    /// True tip errors at the last state; rotation in radians.
    pub final_trans_error: T,
    pub final_rot_error: T,
}

fn gaussian_vec<T: Real>(rng: &mut ChaCha8Rng, sigma: f64) -> Vector3<T> {
    if sigma == 0.0 {
        return Vector3::zeros();
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    Vector3::new(T::of(n.sample(rng)), T::of(n.sample(rng)), T::of(n.sample(rng)))
}

/// Kinematic closed-loop simulation with perfect velocity tracking.
///
/// The pose error is measured with per-step noise (scaled up by the drawn
/// intrinsics error) and the resulting twist is mapped to the robot
/// through a hand-eye estimate off by the drawn calibration error, so the
/// robot executes a slightly rotated and offset version of the command.
/// The loop stops when the measured error is under both thresholds.
pub fn simulate_servo<T: Real>(
    initial: &RigidTransform<T>,
    target: &RigidTransform<T>,
    calib: &CalibrationSet<T>,
    p: &ServoParams<T>,
    seed: u64,
) -> Result<ServoRun<T>, String> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nz = &p.noise;
    let calib_err = RigidTransform::from_rotation_vector(
        gaussian_vec::<T>(&mut rng, nz.calib_rot_sigma),
        gaussian_vec::<T>(&mut rng, nz.calib_trans_sigma),
    );
    // the command is computed in the estimated camera frame and executed in
    // the true one; expressed in the tool frame that is a conjugation
    let to_cam = calib.t_t_e.inverse() * calib.t_c_e;
    let mapping = to_cam * calib_err * to_cam.inverse();
    let k = &calib.intrinsics;
    let focal = |rng: &mut ChaCha8Rng, s: f64| {
        if s > 0.0 {
            Normal::new(0.0, s).unwrap().sample(rng)
        } else {
            0.0
        }
    };
    let df = focal(&mut rng, nz.focal_sigma).abs() + focal(&mut rng, nz.focal_sigma).abs();
    let dc = focal(&mut rng, nz.center_sigma).abs() + focal(&mut rng, nz.center_sigma).abs();
    let scale = 1.0 + (df + dc) / (k.fx + k.fy).max(1.0);

    let mut x = *initial;
    let mut samples = Vec::new();
    let mut converged = false;
    for step in 0..=p.max_steps {
        let noise = RigidTransform::from_rotation_vector(
            gaussian_vec::<T>(&mut rng, nz.meas_rot_sigma * scale),
            gaussian_vec::<T>(&mut rng, nz.meas_trans_sigma * scale),
        );
        let measured = x * noise;
        let (twist, done) = pbvs_step(&measured, target, p);
        let (e_trans, e_rot) = pose_error(&x, target);
        samples.push(ServoSample {
            t: T::of(step as f64) * p.dt,
            pose: x,
            e_trans,
            e_rot,
            twist,
        });
        if done {
            converged = true;
            break;
        }
        if step == p.max_steps {
            break;
        }
        x = x * twist.transformed(&mapping).step(p.dt);
    }
    let last = samples.last().expect("at least one sample");
    Ok(ServoRun {
        final_trans_error: last.e_trans,
        final_rot_error: last.e_rot,
        converged,
        samples,
    })
}
