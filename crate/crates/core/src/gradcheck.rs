//! Standard gradient verification battery: compares the analytic gradients
//! of the differentiable objectives against central finite differences at
//! the dominant gradient entries and formats one pass/fail line per loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::{DomainTag, Image2D};
use crate::loss::{finite_diff_check_top, tv_regularizer, vs_ssim_loss, LossConfig};

/// Probe step used by the battery.
pub const GRADCHECK_EPSILON: f64 = 1e-4;
/// Number of dominant gradient entries probed per loss.
pub const GRADCHECK_PROBES: usize = 50;
/// Tolerance for the selective SSIM loss.
pub const VS_SSIM_TOLERANCE: f64 = 1e-3;
/// Tolerance for the total-variation regularizer.
pub const TV_TOLERANCE: f64 = 1e-4;

/// Result of one finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheckLine {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckLine {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    /// `name: max_rel_err=<err> (tol <tol>) PASS|FAIL`
    pub fn format_line(&self) -> String {
        format!(
            "{}: max_rel_err={:.3e} (tol {:.1e}) {}",
            self.name,
            self.max_rel_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Seeded test pair for the selective SSIM check: a high-variance ground
/// truth and a noisy copy, both strictly inside the signed-unit range so
/// probe offsets stay representable.
pub fn seeded_pair(seed: u64) -> (Image2D, Image2D) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt_data: Vec<f64> = (0..32 * 32).map(|_| rng.random_range(-0.999..0.999)).collect();
    let gen_data: Vec<f64> = gt_data
        .iter()
        .map(|v| (v + rng.random_range(-0.4..0.4)).clamp(-0.999, 0.999))
        .collect();
    let gt = Image2D::new(32, 32, 1, 1.0, DomainTag::SignedUnit, gt_data).expect("seeded gt");
    let gen = Image2D::new(32, 32, 1, 1.0, DomainTag::SignedUnit, gen_data).expect("seeded gen");
    (gt, gen)
}

/// Seeded test point for the total-variation check: a tilted ramp plus
/// bounded noise, so both forward differences stay well away from zero and
/// the smoothed square root is well conditioned everywhere.
pub fn seeded_ramp(seed: u64) -> Image2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let (w, h) = (16, 16);
    let data: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            0.4 * x + 0.25 * y + rng.random_range(-0.1..0.1)
        })
        .collect();
    Image2D::new(w, h, 1, 1.0, DomainTag::Raw, data).expect("seeded ramp")
}

/// Runs the battery at the given seed: the selective SSIM loss on a seeded
/// 32x32 pair (patch size 8, rho 0.5) and the total-variation regularizer
/// on a seeded 16x16 ramp, each probed at the 50 largest-magnitude gradient
/// entries with step 1e-4.
pub fn standard_checks(seed: u64) -> Result<Vec<GradCheckLine>> {
    let (gt, gen) = seeded_pair(seed);
    let cfg = LossConfig {
        patch_size: 8,
        rho: 0.5,
        ..LossConfig::default()
    };
    let vs_err = finite_diff_check_top(
        |img| vs_ssim_loss(img, &gt, &cfg),
        &gen,
        GRADCHECK_EPSILON,
        GRADCHECK_PROBES,
    )?;

    let ramp = seeded_ramp(seed);
    let tv_err = finite_diff_check_top(tv_regularizer, &ramp, GRADCHECK_EPSILON, GRADCHECK_PROBES)?;

    Ok(vec![
        GradCheckLine {
            name: "vs_ssim_loss",
            max_rel_error: vs_err,
            tolerance: VS_SSIM_TOLERANCE,
        },
        GradCheckLine {
            name: "tv_regularizer",
            max_rel_error: tv_err,
            tolerance: TV_TOLERANCE,
        },
    ])
}
