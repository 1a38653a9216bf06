//! Rigid pose trajectories: a uniform cubic B-spline over control poses,
//! clamped at the ends by control-point repetition, plus the step-and-shoot
//! schedule that maps views onto shots.
//!
//! Evaluation uses the deviation form `P0 + b1*(P1-P0) + b2*(P2-P0) +
//! b3*(P3-P0)`. That makes constant trajectories reproduce their value
//! bitwise (all deviations are zero), which downstream code relies on:
//! an all-identity trajectory must yield a sinogram bitwise equal to the
//! motion-free one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// In-plane rigid motion state plus a radial breathing scale.
/// `breath_scale` expands (> 1) or contracts (< 1) the object radially
/// about the image centre; 1.0 means no breathing deformation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub tx_mm: f64,
    pub ty_mm: f64,
    pub theta_rad: f64,
    pub breath_scale: f64,
}

impl RigidPose {
    pub const IDENTITY: RigidPose = RigidPose {
        tx_mm: 0.0,
        ty_mm: 0.0,
        theta_rad: 0.0,
        breath_scale: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let finite = self.tx_mm.is_finite()
            && self.ty_mm.is_finite()
            && self.theta_rad.is_finite()
            && self.breath_scale.is_finite();
        if !finite {
            return Err(Error::Domain("pose has a non-finite component".to_string()));
        }
        if self.breath_scale <= 0.0 {
            return Err(Error::Domain(format!(
                "breath_scale must be positive, got {}",
                self.breath_scale
            )));
        }
        Ok(())
    }

    /// Exact identity test; used to take the resample-free path.
    pub fn is_identity(&self) -> bool {
        self.tx_mm == 0.0 && self.ty_mm == 0.0 && self.theta_rad == 0.0 && self.breath_scale == 1.0
    }
}

/// Cubic B-spline basis at local parameter `s` in [0, 1].
fn basis(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        (-s3 + 3.0 * s2 - 3.0 * s + 1.0) / 6.0,
        (3.0 * s3 - 6.0 * s2 + 4.0) / 6.0,
        (-3.0 * s3 + 3.0 * s2 + 3.0 * s + 1.0) / 6.0,
        s3 / 6.0,
    ]
}

/// Control poses plus the shot schedule. The spline is evaluated once per
/// shot (at the shot's midpoint time); every view inside a shot shares that
/// pose exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionTrajectory {
    control_poses: Vec<RigidPose>,
    n_shots: usize,
}

impl MotionTrajectory {
    /// Requires at least 4 control poses (cubic evaluation) and at least
    /// one shot.
    pub fn new(control_poses: Vec<RigidPose>, n_shots: usize) -> Result<Self> {
        if control_poses.len() < 4 {
            return Err(Error::Config(format!(
                "trajectory needs at least 4 control poses, got {}",
                control_poses.len()
            )));
        }
        if n_shots == 0 {
            return Err(Error::Config("n_shots must be at least 1".to_string()));
        }
        for p in &control_poses {
            p.validate()?;
        }
        Ok(MotionTrajectory {
            control_poses,
            n_shots,
        })
    }

    /// A trajectory that stays at the identity pose; useful as a no-motion
    /// control arm.
    pub fn identity(n_shots: usize) -> Result<Self> {
        MotionTrajectory::new(vec![RigidPose::IDENTITY; 4], n_shots)
    }

    pub fn n_shots(&self) -> usize {
        self.n_shots
    }

    pub fn control_poses(&self) -> &[RigidPose] {
        &self.control_poses
    }

    /// Maps a view index onto its shot: contiguous blocks, as equal as the
    /// division allows (sizes differ by at most one view).
    pub fn shot_of_view(&self, view: usize, n_views: usize) -> usize {
        debug_assert!(view < n_views);
        (view * self.n_shots) / n_views
    }

    /// Midpoint time of a shot on the trajectory clock in [0, 1].
    pub fn shot_time(&self, shot: usize) -> f64 {
        (shot as f64 + 0.5) / self.n_shots as f64
    }

    /// Padded control access: ends are clamped by repeating the first and
    /// last control twice, giving `m + 4` effective controls and `m + 1`
    /// cubic segments for `m` real controls.
    #[inline]
    fn padded(&self, i: usize) -> RigidPose {
        let m = self.control_poses.len();
        let idx = (i as isize - 2).clamp(0, m as isize - 1) as usize;
        self.control_poses[idx]
    }

    /// Evaluates the clamped uniform cubic B-spline at `t` in [0, 1],
    /// componentwise over (tx, ty, theta, breath_scale).
    pub fn eval(&self, t: f64) -> Result<RigidPose> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!(
                "trajectory time {t} outside [0, 1]"
            )));
        }
        let m = self.control_poses.len();
        let n_segments = m + 1;
        let u = t * n_segments as f64;
        let j = (u.floor() as usize).min(n_segments - 1);
        let s = u - j as f64;
        let b = basis(s);
        let p0 = self.padded(j);
        let p1 = self.padded(j + 1);
        let p2 = self.padded(j + 2);
        let p3 = self.padded(j + 3);
        let eval1 = |q0: f64, q1: f64, q2: f64, q3: f64| {
            q0 + (b[1] * (q1 - q0) + b[2] * (q2 - q0) + b[3] * (q3 - q0))
        };
        Ok(RigidPose {
            tx_mm: eval1(p0.tx_mm, p1.tx_mm, p2.tx_mm, p3.tx_mm),
            ty_mm: eval1(p0.ty_mm, p1.ty_mm, p2.ty_mm, p3.ty_mm),
            theta_rad: eval1(p0.theta_rad, p1.theta_rad, p2.theta_rad, p3.theta_rad),
            breath_scale: eval1(
                p0.breath_scale,
                p1.breath_scale,
                p2.breath_scale,
                p3.breath_scale,
            ),
        })
    }

    /// Pose applied to every view of the shot containing `view`.
    pub fn pose_for_view(&self, view: usize, n_views: usize) -> Result<RigidPose> {
        self.eval(self.shot_time(self.shot_of_view(view, n_views)))
    }
}

/// Free-function form of [`MotionTrajectory::eval`].
pub fn eval_trajectory(traj: &MotionTrajectory, t: f64) -> Result<RigidPose> {
    traj.eval(t)
}
