//! JSON run configuration: scanner geometry, motion trajectory, phantom,
//! display window, loss, segmenter, prompts, and optimizer settings in one
//! document. Angles are degrees in the file and radians in memory; every
//! section rejects unknown keys so typos surface as configuration errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::MaskFeatureMap;
use crate::loss::LossConfig;
use crate::mask::{PromptPoint, PromptSet, SegmenterConfig};
use crate::metrics::SsimConstants;
use crate::optim::OptimizerConfig;
use crate::phantom::{Ellipse, PhantomSpec};
use crate::tomo::trajectory::{MotionTrajectory, RigidPose};
use crate::tomo::ScanGeometry;

fn config_err(section: &str, err: Error) -> Error {
    Error::Config(format!("{section}: {err}"))
}

/// Scanner geometry as written in configuration files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub n_views: usize,
    #[serde(default = "default_angular_range_deg")]
    pub angular_range_deg: f64,
    pub n_detectors: usize,
    pub detector_spacing_mm: f64,
    /// Sampling step along each ray; defaults to half the phantom spacing.
    #[serde(default)]
    pub ray_step_mm: Option<f64>,
}

fn default_angular_range_deg() -> f64 {
    180.0
}

impl GeometryConfig {
    pub fn scan_geometry(&self, default_ray_step_mm: f64) -> Result<ScanGeometry> {
        let geom = ScanGeometry {
            n_views: self.n_views,
            angular_range_rad: self.angular_range_deg.to_radians(),
            n_detectors: self.n_detectors,
            detector_spacing_mm: self.detector_spacing_mm,
            ray_step_mm: self.ray_step_mm.unwrap_or(default_ray_step_mm),
        };
        geom.validate().map_err(|e| config_err("geometry", e))?;
        Ok(geom)
    }
}

/// One control pose of the motion spline, rotation in degrees.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseConfig {
    #[serde(default)]
    pub tx_mm: f64,
    #[serde(default)]
    pub ty_mm: f64,
    #[serde(default)]
    pub theta_deg: f64,
    #[serde(default = "default_breath_scale")]
    pub breath_scale: f64,
}

fn default_breath_scale() -> f64 {
    1.0
}

impl PoseConfig {
    fn pose(&self) -> RigidPose {
        RigidPose {
            tx_mm: self.tx_mm,
            ty_mm: self.ty_mm,
            theta_rad: self.theta_deg.to_radians(),
            breath_scale: self.breath_scale,
        }
    }
}

/// Step-and-shoot trajectory section.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub n_shots: usize,
    pub control_poses: Vec<PoseConfig>,
}

impl TrajectoryConfig {
    pub fn trajectory(&self) -> Result<MotionTrajectory> {
        let poses = self.control_poses.iter().map(PoseConfig::pose).collect();
        MotionTrajectory::new(poses, self.n_shots).map_err(|e| config_err("trajectory", e))
    }
}

/// One phantom ellipse, rotation in degrees.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipseConfig {
    pub center_x_mm: f64,
    pub center_y_mm: f64,
    pub semi_axis_a_mm: f64,
    pub semi_axis_b_mm: f64,
    #[serde(default)]
    pub rotation_deg: f64,
    pub additive_intensity: f64,
}

/// Phantom section: lattice plus additive ellipses.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub width: usize,
    pub height: usize,
    pub spacing_mm: f64,
    pub ellipses: Vec<EllipseConfig>,
}

impl PhantomConfig {
    pub fn phantom_spec(&self) -> Result<PhantomSpec> {
        let spec = PhantomSpec {
            width: self.width,
            height: self.height,
            spacing_mm: self.spacing_mm,
            ellipses: self
                .ellipses
                .iter()
                .map(|e| Ellipse {
                    center_x_mm: e.center_x_mm,
                    center_y_mm: e.center_y_mm,
                    semi_axis_a_mm: e.semi_axis_a_mm,
                    semi_axis_b_mm: e.semi_axis_b_mm,
                    rotation_rad: e.rotation_deg.to_radians(),
                    additive_intensity: e.additive_intensity,
                })
                .collect(),
        };
        spec.validate().map_err(|e| config_err("phantom", e))?;
        Ok(spec)
    }
}

/// Intensity window mapped onto the signed-unit range after reconstruction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub lo: f64,
    pub hi: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { lo: 0.0, hi: 1.0 }
    }
}

impl WindowConfig {
    pub fn bounds(&self) -> Result<(f64, f64)> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::Config(format!(
                "window: lo must be finite and below hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok((self.lo, self.hi))
    }
}

/// Loss weights and patch-selection parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub patch_size: usize,
    pub rho: f64,
    pub k1: f64,
    pub k2: f64,
    pub dice_threshold: f64,
    pub tv_weight: f64,
    pub coverage_min: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            lambda_a: 1.0,
            lambda_b: 0.0,
            patch_size: 16,
            rho: 0.25,
            k1: 0.01,
            k2: 0.03,
            dice_threshold: -0.5,
            tv_weight: 0.0,
            coverage_min: 0.5,
        }
    }
}

impl LossSection {
    pub fn loss_config(&self, mask: Option<MaskFeatureMap>) -> Result<LossConfig> {
        let cfg = LossConfig {
            lambda_a: self.lambda_a,
            lambda_b: self.lambda_b,
            patch_size: self.patch_size,
            rho: self.rho,
            consts: SsimConstants {
                k1: self.k1,
                k2: self.k2,
                ..SsimConstants::default()
            },
            mask,
            coverage_min: self.coverage_min,
            tv_weight: self.tv_weight,
        };
        cfg.validate().map_err(|e| config_err("loss", e))?;
        Ok(cfg)
    }
}

/// Segmenter section with the same fields as [`SegmenterConfig`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterSection {
    pub intensity_threshold: f64,
    pub morphology_radius: usize,
}

impl Default for SegmenterSection {
    fn default() -> Self {
        SegmenterSection {
            intensity_threshold: -0.85,
            morphology_radius: 1,
        }
    }
}

impl SegmenterSection {
    pub fn segmenter_config(&self) -> Result<SegmenterConfig> {
        let cfg = SegmenterConfig {
            intensity_threshold: self.intensity_threshold,
            morphology_radius: self.morphology_radius,
        };
        cfg.validate().map_err(|e| config_err("segmenter", e))?;
        Ok(cfg)
    }
}

/// Descent-loop section.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub max_iters: usize,
    pub initial_step: f64,
    pub convergence_tol: f64,
    pub clamp_domain: bool,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        OptimizerSection {
            max_iters: d.max_iters,
            initial_step: d.initial_step,
            convergence_tol: d.convergence_tol,
            clamp_domain: d.clamp_domain,
        }
    }
}

impl OptimizerSection {
    pub fn optimizer_config(&self) -> Result<OptimizerConfig> {
        let cfg = OptimizerConfig {
            max_iters: self.max_iters,
            initial_step: self.initial_step,
            convergence_tol: self.convergence_tol,
            clamp_domain: self.clamp_domain,
        };
        cfg.validate().map_err(|e| config_err("optimizer", e))?;
        Ok(cfg)
    }
}

/// A complete run description as parsed from a JSON file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub trajectory: TrajectoryConfig,
    pub phantom: PhantomConfig,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub segmenter: SegmenterSection,
    #[serde(default)]
    pub prompts: Vec<PromptPoint>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Parses a configuration from JSON text.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("configuration parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::error::Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    pub fn scan_geometry(&self) -> Result<ScanGeometry> {
        self.geometry.scan_geometry(self.phantom.spacing_mm / 2.0)
    }

    pub fn motion_trajectory(&self) -> Result<MotionTrajectory> {
        self.trajectory.trajectory()
    }

    pub fn phantom_spec(&self) -> Result<PhantomSpec> {
        self.phantom.phantom_spec()
    }

    pub fn window_bounds(&self) -> Result<(f64, f64)> {
        self.window.bounds()
    }

    pub fn loss_config(&self, mask: Option<MaskFeatureMap>) -> Result<LossConfig> {
        self.loss.loss_config(mask)
    }

    pub fn optimizer_config(&self) -> Result<OptimizerConfig> {
        self.optimizer.optimizer_config()
    }

    pub fn segmenter_config(&self) -> Result<SegmenterConfig> {
        self.segmenter.segmenter_config()
    }

    /// The configured prompts, or an error if none were given.
    pub fn prompt_set(&self) -> Result<PromptSet> {
        PromptSet::new(self.prompts.clone())
            .map_err(|_| Error::Config("prompts: at least one prompt point is required".to_string()))
    }

    /// Cross-validates every section.
    pub fn validate(&self) -> Result<()> {
        self.scan_geometry()?;
        self.motion_trajectory()?;
        self.phantom_spec()?;
        self.window_bounds()?;
        self.loss_config(None)?;
        self.optimizer_config()?;
        self.segmenter_config()?;
        for p in &self.prompts {
            if p.x >= self.phantom.width || p.y >= self.phantom.height {
                return Err(Error::Config(format!(
                    "prompts: point ({}, {}) lies outside the {}x{} phantom",
                    p.x, p.y, self.phantom.width, self.phantom.height
                )));
            }
        }
        Ok(())
    }

    /// A chest-like reference scene: a body ellipse with two lungs, a
    /// spine block, and two small nodules, scanned over 180 degrees with a
    /// slow drift-and-breathe trajectory.
    pub fn standard_chest() -> Self {
        RunConfig {
            geometry: GeometryConfig {
                n_views: 360,
                angular_range_deg: 180.0,
                n_detectors: 185,
                detector_spacing_mm: 1.0,
                ray_step_mm: Some(0.5),
            },
            trajectory: TrajectoryConfig {
                n_shots: 12,
                control_poses: vec![
                    PoseConfig {
                        tx_mm: 0.0,
                        ty_mm: 0.0,
                        theta_deg: 0.0,
                        breath_scale: 1.0,
                    },
                    PoseConfig {
                        tx_mm: 1.0,
                        ty_mm: -0.5,
                        theta_deg: 1.5,
                        breath_scale: 1.01,
                    },
                    PoseConfig {
                        tx_mm: 2.0,
                        ty_mm: -1.0,
                        theta_deg: 3.0,
                        breath_scale: 1.03,
                    },
                    PoseConfig {
                        tx_mm: 3.0,
                        ty_mm: -1.5,
                        theta_deg: 5.0,
                        breath_scale: 1.04,
                    },
                ],
            },
            phantom: PhantomConfig {
                width: 128,
                height: 128,
                spacing_mm: 1.0,
                ellipses: vec![
                    EllipseConfig {
                        center_x_mm: 0.0,
                        center_y_mm: 0.0,
                        semi_axis_a_mm: 55.0,
                        semi_axis_b_mm: 42.0,
                        rotation_deg: 0.0,
                        additive_intensity: 1.0,
                    },
                    EllipseConfig {
                        center_x_mm: -22.0,
                        center_y_mm: -2.0,
                        semi_axis_a_mm: 16.0,
                        semi_axis_b_mm: 26.0,
                        rotation_deg: -8.0,
                        additive_intensity: -0.72,
                    },
                    EllipseConfig {
                        center_x_mm: 22.0,
                        center_y_mm: -2.0,
                        semi_axis_a_mm: 16.0,
                        semi_axis_b_mm: 26.0,
                        rotation_deg: 8.0,
                        additive_intensity: -0.72,
                    },
                    EllipseConfig {
                        center_x_mm: 0.0,
                        center_y_mm: 30.0,
                        semi_axis_a_mm: 7.0,
                        semi_axis_b_mm: 7.0,
                        rotation_deg: 0.0,
                        additive_intensity: 0.55,
                    },
                    EllipseConfig {
                        center_x_mm: -20.0,
                        center_y_mm: -6.0,
                        semi_axis_a_mm: 4.0,
                        semi_axis_b_mm: 4.0,
                        rotation_deg: 0.0,
                        additive_intensity: 0.5,
                    },
                    EllipseConfig {
                        center_x_mm: 25.0,
                        center_y_mm: 6.0,
                        semi_axis_a_mm: 3.0,
                        semi_axis_b_mm: 3.0,
                        rotation_deg: 0.0,
                        additive_intensity: 0.5,
                    },
                ],
            },
            window: WindowConfig { lo: -0.1, hi: 1.7 },
            loss: LossSection::default(),
            segmenter: SegmenterSection::default(),
            prompts: vec![PromptPoint { x: 64, y: 64 }],
            optimizer: OptimizerSection::default(),
            seed: 20240817,
        }
    }
}
