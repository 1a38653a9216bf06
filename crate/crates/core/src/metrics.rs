//! Image-quality metrics: PSNR, global SSIM (11x11 Gaussian window),
//! whole-patch SSIM, variance-ranked patch selection, the
//! variance-selective SSIM built on it, and the Dice overlap score.
//!
//! All reductions run in fixed row-major order so results are bitwise
//! reproducible regardless of thread count.

use crate::error::{Error, Result};
use crate::image::{extract_patch, Image2D, MaskFeatureMap, PatchGrid};

/// SSIM stabilization constants. `c1 = (k1 L)^2`, `c2 = (k2 L)^2` with `L`
/// the dynamic range of the value domain (2.0 for signed-unit images).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConstants {
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConstants {
    fn default() -> Self {
        SsimConstants {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 2.0,
        }
    }
}

impl SsimConstants {
    pub fn validate(&self) -> Result<()> {
        if self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "SSIM constants must be positive: k1 {} k2 {} L {}",
                self.k1, self.k2, self.dynamic_range
            )))
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }
}

/// Peak dynamic range used by [`psnr`]; matches the signed-unit domain.
pub const PSNR_PEAK: f64 = 2.0;

/// Peak signal-to-noise ratio in decibels; identical images return
/// `f64::INFINITY`.
pub fn psnr(a: &Image2D, b: &Image2D) -> Result<f64> {
    a.expect_same_geometry(b, "psnr")?;
    a.expect_single_channel("psnr")?;
    let n = a.data().len() as f64;
    let mut se = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        se += d * d;
    }
    let mse = se / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PSNR_PEAK * PSNR_PEAK / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// Normalized 1-D Gaussian taps for the SSIM window.
fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW as f64 - 1.0) / 2.0;
    let mut sum = 0.0;
    for (i, slot) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *slot = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *slot;
    }
    for slot in &mut w {
        *slot /= sum;
    }
    w
}

/// Valid-region horizontal convolution; output width shrinks by
/// `SSIM_WINDOW - 1`.
fn conv_rows(input: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - (SSIM_WINDOW - 1);
    let mut out = vec![0.0; ow * h];
    for y in 0..h {
        let row = &input[y * w..(y + 1) * w];
        let orow = &mut out[y * ow..(y + 1) * ow];
        for (x, slot) in orow.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &t) in taps.iter().enumerate() {
                acc += t * row[x + i];
            }
            *slot = acc;
        }
    }
    out
}

/// Valid-region vertical convolution; output height shrinks by
/// `SSIM_WINDOW - 1`.
fn conv_cols(input: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let oh = h - (SSIM_WINDOW - 1);
    let mut out = vec![0.0; w * oh];
    for y in 0..oh {
        let orow = &mut out[y * w..(y + 1) * w];
        for (x, slot) in orow.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &t) in taps.iter().enumerate() {
                acc += t * input[(y + i) * w + x];
            }
            *slot = acc;
        }
    }
    out
}

fn gaussian_blur_valid(input: &[f64], w: usize, h: usize) -> Vec<f64> {
    let taps = gaussian_taps();
    let horiz = conv_rows(input, w, h, &taps);
    conv_cols(&horiz, w - (SSIM_WINDOW - 1), h, &taps)
}

/// Mean SSIM over all valid 11x11 Gaussian-weighted windows.
pub fn ssim_global(a: &Image2D, b: &Image2D, consts: &SsimConstants) -> Result<f64> {
    a.expect_same_geometry(b, "ssim_global")?;
    a.expect_single_channel("ssim_global")?;
    consts.validate()?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Invalid(format!(
            "ssim_global needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let pa = a.plane(0);
    let pb = b.plane(0);
    let n = w * h;
    let mut aa = vec![0.0; n];
    let mut bb = vec![0.0; n];
    let mut ab = vec![0.0; n];
    for i in 0..n {
        aa[i] = pa[i] * pa[i];
        bb[i] = pb[i] * pb[i];
        ab[i] = pa[i] * pb[i];
    }
    let mu_a = gaussian_blur_valid(pa, w, h);
    let mu_b = gaussian_blur_valid(pb, w, h);
    let m_aa = gaussian_blur_valid(&aa, w, h);
    let m_bb = gaussian_blur_valid(&bb, w, h);
    let m_ab = gaussian_blur_valid(&ab, w, h);

    let c1 = consts.c1();
    let c2 = consts.c2();
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_aa[i] - ma * ma;
        let vb = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        sum += num / den;
    }
    Ok(sum / mu_a.len() as f64)
}

/// Whole-patch statistics accumulated in one row-major pass each.
struct PatchStats {
    mean_a: f64,
    mean_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
}

fn patch_stats(a: &[f64], b: &[f64]) -> PatchStats {
    let n = a.len() as f64;
    let mut sa = 0.0;
    let mut sb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        sa += x;
        sb += y;
    }
    let mean_a = sa / n;
    let mean_b = sb / n;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    let mut cov = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        var_a += dx * dx;
        var_b += dy * dy;
        cov += dx * dy;
    }
    PatchStats {
        mean_a,
        mean_b,
        var_a: var_a / n,
        var_b: var_b / n,
        cov: cov / n,
    }
}

/// SSIM of two equally sized patches from whole-patch population
/// statistics: one value per patch, no sliding window.
pub fn ssim_patch(a: &[f64], b: &[f64], consts: &SsimConstants) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "patch lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    consts.validate()?;
    let s = patch_stats(a, b);
    let c1 = consts.c1();
    let c2 = consts.c2();
    let num = (2.0 * s.mean_a * s.mean_b + c1) * (2.0 * s.cov + c2);
    let den = (s.mean_a * s.mean_a + s.mean_b * s.mean_b + c1) * (s.var_a + s.var_b + c2);
    Ok(num / den)
}

/// Variance ranking over the admitted patches of a ground-truth image, and
/// the retained top-variance subset Ω.
#[derive(Clone, Debug)]
pub struct PatchSelection {
    grid: PatchGrid,
    admitted: Vec<(usize, usize)>,
    variances: Vec<f64>,
    selected: Vec<(usize, usize)>,
    rho: f64,
}

impl PatchSelection {
    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    /// Admitted patches in row-major order.
    pub fn admitted(&self) -> &[(usize, usize)] {
        &self.admitted
    }

    /// Ground-truth population variance per admitted patch, aligned with
    /// [`Self::admitted`].
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// The selection Ω, stored in row-major order.
    pub fn selected(&self) -> &[(usize, usize)] {
        &self.selected
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// Ranks admitted patches by ground-truth variance and keeps the top
/// `max(1, round(rho * admitted_count))`. Ties break toward lower
/// (row, col), so the result is a deterministic set.
pub fn select_patches(
    gt: &Image2D,
    patch_size: usize,
    rho: f64,
    mask: Option<&MaskFeatureMap>,
    coverage_min: f64,
) -> Result<PatchSelection> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Domain(format!("rho must lie in (0, 1], got {rho}")));
    }
    let grid = gt.decompose_patches(patch_size, mask, coverage_min)?;
    let admitted = grid.admitted_patches();
    if admitted.is_empty() {
        return Err(Error::Invalid(
            "patch selection is empty: no admitted patches".to_string(),
        ));
    }
    let variances: Vec<f64> = admitted
        .iter()
        .map(|&(r, c)| {
            let patch = extract_patch(gt, &grid, r, c);
            let n = patch.len() as f64;
            let mean = patch.iter().sum::<f64>() / n;
            patch.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n
        })
        .collect();

    let k = ((rho * admitted.len() as f64).round() as usize).max(1);
    let mut order: Vec<usize> = (0..admitted.len()).collect();
    order.sort_by(|&i, &j| {
        variances[j]
            .total_cmp(&variances[i])
            .then_with(|| admitted[i].cmp(&admitted[j]))
    });
    let mut selected: Vec<(usize, usize)> = order[..k.min(order.len())]
        .iter()
        .map(|&i| admitted[i])
        .collect();
    // Kept in row-major order so downstream sums are order-deterministic.
    selected.sort_unstable();
    Ok(PatchSelection {
        grid,
        admitted,
        variances,
        selected,
        rho,
    })
}

/// Variance-selective SSIM: the arithmetic mean of whole-patch SSIM over
/// the selection Ω.
pub fn vs_ssim(
    gt: &Image2D,
    gen: &Image2D,
    sel: &PatchSelection,
    consts: &SsimConstants,
) -> Result<f64> {
    gt.expect_same_geometry(gen, "vs_ssim")?;
    gt.expect_single_channel("vs_ssim")?;
    let ps = sel.grid().patch_size();
    if sel.grid().rows() * ps > gt.height() || sel.grid().cols() * ps > gt.width() {
        return Err(Error::ShapeMismatch(
            "patch selection does not fit the image".to_string(),
        ));
    }
    let mut sum = 0.0;
    for &(r, c) in sel.selected() {
        let pg = extract_patch(gt, sel.grid(), r, c);
        let pn = extract_patch(gen, sel.grid(), r, c);
        sum += ssim_patch(&pg, &pn, consts)?;
    }
    Ok(sum / sel.selected().len() as f64)
}

/// Dice overlap of the foregrounds `{value > threshold}` of two images.
/// Two empty foregrounds count as perfect agreement.
pub fn dice(gen: &Image2D, gt: &Image2D, threshold: f64) -> Result<f64> {
    gen.expect_same_geometry(gt, "dice")?;
    gen.expect_single_channel("dice")?;
    if !threshold.is_finite() {
        return Err(Error::Domain(format!("dice threshold {threshold}")));
    }
    let mut a = 0usize;
    let mut b = 0usize;
    let mut both = 0usize;
    for (&x, &y) in gen.data().iter().zip(gt.data()) {
        let fa = x > threshold;
        let fb = y > threshold;
        a += usize::from(fa);
        b += usize::from(fb);
        both += usize::from(fa && fb);
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// The metric quadruple reported per case.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub case_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub vs_ssim: f64,
    pub dice: f64,
}

/// Fixed 6-decimal metric formatting; infinities render as `inf` so CSV
/// and JSON stay parseable.
pub fn format_metric(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        }
    } else {
        format!("{v:.6}")
    }
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "case_id,psnr_db,ssim,vs_ssim,dice";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.case_id,
            format_metric(self.psnr_db),
            format_metric(self.ssim),
            format_metric(self.vs_ssim),
            format_metric(self.dice)
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        let psnr = if self.psnr_db.is_infinite() {
            serde_json::Value::String(if self.psnr_db > 0.0 { "inf" } else { "-inf" }.to_string())
        } else {
            serde_json::json!(self.psnr_db)
        };
        serde_json::json!({
            "case_id": self.case_id,
            "psnr_db": psnr,
            "ssim": self.ssim,
            "vs_ssim": self.vs_ssim,
            "dice": self.dice,
        })
    }
}

/// Computes the full report for a (ground truth, test) pair.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_pair(
    case_id: &str,
    gt: &Image2D,
    test: &Image2D,
    mask: Option<&MaskFeatureMap>,
    patch_size: usize,
    rho: f64,
    coverage_min: f64,
    consts: &SsimConstants,
    dice_threshold: f64,
) -> Result<MetricsReport> {
    let sel = select_patches(gt, patch_size, rho, mask, coverage_min)?;
    Ok(MetricsReport {
        case_id: case_id.to_string(),
        psnr_db: psnr(test, gt)?,
        ssim: ssim_global(test, gt, consts)?,
        vs_ssim: vs_ssim(gt, test, &sel, consts)?,
        dice: dice(test, gt, dice_threshold)?,
    })
}
