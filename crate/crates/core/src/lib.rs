//! Motion-artifact simulation and correction toolkit for 2-D tomographic
//! images.
//!
//! The crate covers the full loop: additive ellipse phantoms
//! ([`phantom`]), parallel-beam projection with step-and-shoot rigid and
//! breathing motion plus filtered backprojection ([`tomo`]), image quality
//! metrics built around a variance-selective patch SSIM ([`metrics`]), the
//! differentiable form of that metric with analytic gradients ([`loss`]),
//! a backtracking gradient-descent correction harness with an objective
//! ablation ([`optim`]), prompt-driven threshold segmentation for region
//! masks ([`mask`]), float image containers and deterministic file formats
//! ([`image`], [`io`]), and the JSON run configuration shared by the
//! command-line tools ([`config`]).
//!
//! All numerical paths are deterministic: seeded generators, ordered
//! reductions, and parallelism only over independent output elements, so
//! repeated runs produce byte-identical artifacts at any thread count.

pub mod config;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod optim;
pub mod phantom;
pub mod tomo;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use image::{DomainTag, Image2D, MaskFeatureMap, PatchGrid};
pub use loss::{
    finite_diff_check, finite_diff_check_top, total_loss, tv_regularizer, vs_ssim_loss,
    LossConfig, LossValueGrad, Regularizer, TvRegularizer,
};
pub use mask::{load_external_mask, segment_from_prompts, PromptPoint, PromptSet, SegmenterConfig};
pub use metrics::{
    dice, evaluate_pair, psnr, select_patches, ssim_global, ssim_patch, vs_ssim, MetricsReport,
    PatchSelection, SsimConstants,
};
pub use optim::{
    ablate_objectives, ablation_to_csv, attention_compose, optimize_correction,
    AblationArmResult, CorrectionResult, OptimizationTrace, OptimizerConfig, StopReason,
    TraceRecord,
};
pub use phantom::{make_phantom, Ellipse, PhantomSpec};
pub use tomo::{
    backproject, forward_project, ramp_filter, simulate_motion_scan, transform_image,
    MotionScanOutput, ScanGeometry, Sinogram,
};
pub use tomo::trajectory::{eval_trajectory, MotionTrajectory, RigidPose};
