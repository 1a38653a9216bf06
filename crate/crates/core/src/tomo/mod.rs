//! Motion-aware CT simulation: scan geometry, sinogram container, spline
//! pose trajectories, forward projection, and filtered backprojection.
//!
//! The paired-scan entry point [`simulate_motion_scan`] produces a
//! motion-free reference and a motion-corrupted reconstruction of the same
//! phantom through the same code path, so an identity trajectory yields a
//! bitwise-equal pair.

mod fbp;
mod project;
pub mod trajectory;

pub use fbp::{backproject, ramp_filter, ramp_filter_windowed, RampWindow};
pub use project::{forward_project, transform_image};
pub use trajectory::{eval_trajectory, MotionTrajectory, RigidPose};

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::phantom::{make_phantom, PhantomSpec};

/// Parallel-beam acquisition parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanGeometry {
    pub n_views: usize,
    /// Total angular coverage; views sit at `v * range / n_views`.
    pub angular_range_rad: f64,
    pub n_detectors: usize,
    pub detector_spacing_mm: f64,
    /// Sampling step along each ray; at most one detector pitch.
    pub ray_step_mm: f64,
}

impl ScanGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 {
            return Err(Error::Config("n_views must be at least 1".to_string()));
        }
        if self.n_detectors < 2 {
            return Err(Error::Config(format!(
                "n_detectors must be at least 2, got {}",
                self.n_detectors
            )));
        }
        if !(self.detector_spacing_mm.is_finite() && self.detector_spacing_mm > 0.0) {
            return Err(Error::Config(format!(
                "detector_spacing_mm must be positive, got {}",
                self.detector_spacing_mm
            )));
        }
        if !(self.ray_step_mm.is_finite()
            && self.ray_step_mm > 0.0
            && self.ray_step_mm <= self.detector_spacing_mm)
        {
            return Err(Error::Config(format!(
                "ray_step_mm must lie in (0, detector_spacing_mm], got {}",
                self.ray_step_mm
            )));
        }
        if !(self.angular_range_rad.is_finite()
            && self.angular_range_rad > 0.0
            && self.angular_range_rad <= 2.0 * std::f64::consts::PI + 1e-12)
        {
            return Err(Error::Config(format!(
                "angular_range_rad must lie in (0, 2pi], got {}",
                self.angular_range_rad
            )));
        }
        Ok(())
    }

    /// Angle of view `v`.
    pub fn view_angle(&self, v: usize) -> f64 {
        v as f64 * self.angular_range_rad / self.n_views as f64
    }
}

/// Projection data: one row per view, one column per detector bin, in
/// view-major order. Angles are strictly increasing within
/// `[0, angular_range)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    n_views: usize,
    n_detectors: usize,
    angles_rad: Vec<f64>,
    detector_spacing_mm: f64,
    angular_range_rad: f64,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn new(
        n_views: usize,
        n_detectors: usize,
        angles_rad: Vec<f64>,
        detector_spacing_mm: f64,
        angular_range_rad: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if n_views == 0 || n_detectors < 2 {
            return Err(Error::Invalid(format!(
                "sinogram needs n_views >= 1 and n_detectors >= 2, got {n_views}x{n_detectors}"
            )));
        }
        if angles_rad.len() != n_views {
            return Err(Error::Invalid(format!(
                "{} angles for {} views",
                angles_rad.len(),
                n_views
            )));
        }
        if !(detector_spacing_mm.is_finite() && detector_spacing_mm > 0.0) {
            return Err(Error::Invalid(format!(
                "detector spacing must be positive, got {detector_spacing_mm}"
            )));
        }
        if !(angular_range_rad.is_finite() && angular_range_rad > 0.0) {
            return Err(Error::Invalid(format!(
                "angular range must be positive, got {angular_range_rad}"
            )));
        }
        for (i, &a) in angles_rad.iter().enumerate() {
            if !a.is_finite() || a < 0.0 || a >= angular_range_rad {
                return Err(Error::Invalid(format!(
                    "angle {i} = {a} outside [0, {angular_range_rad})"
                )));
            }
            if i > 0 && a <= angles_rad[i - 1] {
                return Err(Error::Invalid(format!(
                    "angles not strictly increasing at index {i}"
                )));
            }
        }
        if data.len() != n_views * n_detectors {
            return Err(Error::Invalid(format!(
                "data length {} does not match {n_views}x{n_detectors}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sinogram bin {pos}")));
        }
        Ok(Sinogram {
            n_views,
            n_detectors,
            angles_rad,
            detector_spacing_mm,
            angular_range_rad,
            data,
        })
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn angles_rad(&self) -> &[f64] {
        &self.angles_rad
    }

    pub fn detector_spacing_mm(&self) -> f64 {
        self.detector_spacing_mm
    }

    pub fn angular_range_rad(&self) -> f64 {
        self.angular_range_rad
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// One view's detector row.
    pub fn view(&self, v: usize) -> &[f64] {
        &self.data[v * self.n_detectors..(v + 1) * self.n_detectors]
    }
}

/// Output of [`simulate_motion_scan`]: the windowed reconstruction pair
/// plus the intermediate sinograms for inspection and export.
#[derive(Clone, Debug)]
pub struct MotionScanOutput {
    /// Motion-free reconstruction, signed unit.
    pub reference: Image2D,
    /// Motion-corrupted reconstruction, signed unit.
    pub corrupted: Image2D,
    pub sino_reference: Sinogram,
    pub sino_corrupted: Sinogram,
}

/// Renders the phantom, projects it twice (without motion and under the
/// trajectory), reconstructs both sinograms by FBP on the phantom lattice,
/// and windows both reconstructions into the signed-unit domain.
pub fn simulate_motion_scan(
    spec: &PhantomSpec,
    geom: &ScanGeometry,
    traj: &MotionTrajectory,
    window: (f64, f64),
) -> Result<MotionScanOutput> {
    let phantom = make_phantom(spec)?;
    let sino_reference = forward_project(&phantom, geom, None)?;
    let sino_corrupted = forward_project(&phantom, geom, Some(traj))?;
    let recon = |sino: &Sinogram| -> Result<Image2D> {
        let raw = backproject(&ramp_filter(sino)?, spec.width, spec.height, spec.spacing_mm)?;
        raw.normalize_to_signed_unit(window.0, window.1)
    };
    let reference = recon(&sino_reference)?;
    let corrupted = recon(&sino_corrupted)?;
    Ok(MotionScanOutput {
        reference,
        corrupted,
        sino_reference,
        sino_corrupted,
    })
}
