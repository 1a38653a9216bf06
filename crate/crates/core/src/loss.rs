//! Differentiable objectives: the variance-selective SSIM loss with its
//! analytic gradient, a smoothed total-variation regularizer, the weighted
//! composite loss, and finite-difference gradient verification.
//!
//! The selection Ω is a function of the ground truth only, so it is held
//! fixed under differentiation and the loss is smooth inside each ranking
//! cell. Patches are disjoint tiles; the gradient is written tile by tile
//! in row-major selection order and is exactly zero outside Ω.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{DomainTag, Image2D, MaskFeatureMap};
use crate::metrics::{select_patches, SsimConstants};

/// Weights and patching parameters of the composite objective.
#[derive(Clone, Debug)]
pub struct LossConfig {
    /// Weight of the variance-selective SSIM term.
    pub lambda_a: f64,
    /// Weight of the pluggable auxiliary regularizers.
    pub lambda_b: f64,
    pub patch_size: usize,
    pub rho: f64,
    pub consts: SsimConstants,
    pub mask: Option<MaskFeatureMap>,
    pub coverage_min: f64,
    /// Weight of the built-in total-variation term.
    pub tv_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_a: 1.0,
            lambda_b: 0.0,
            patch_size: 16,
            rho: 0.25,
            consts: SsimConstants::default(),
            mask: None,
            coverage_min: 0.5,
            tv_weight: 0.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_a < 0.0 || !self.lambda_a.is_finite() {
            return Err(Error::Config(format!("lambda_a must be >= 0, got {}", self.lambda_a)));
        }
        if self.lambda_b < 0.0 || !self.lambda_b.is_finite() {
            return Err(Error::Config(format!("lambda_b must be >= 0, got {}", self.lambda_b)));
        }
        if self.tv_weight < 0.0 || !self.tv_weight.is_finite() {
            return Err(Error::Config(format!("tv_weight must be >= 0, got {}", self.tv_weight)));
        }
        if self.patch_size < 2 {
            return Err(Error::Config(format!(
                "patch_size must be at least 2, got {}",
                self.patch_size
            )));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.coverage_min) {
            return Err(Error::Config(format!(
                "coverage_min must lie in [0, 1], got {}",
                self.coverage_min
            )));
        }
        self.consts.validate()
    }
}

/// A loss value together with its gradient image (partial derivative per
/// pixel of the generated image).
#[derive(Clone, Debug)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad: Image2D,
}

impl LossValueGrad {
    fn check_finite(self, what: &str) -> Result<Self> {
        if self.value.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(format!("{what} value is {}", self.value)))
        }
    }
}

/// `1 - VS-SSIM(gt, gen)` with its analytic gradient with respect to the
/// generated image.
///
/// For a patch with ground-truth stats (mu_x, var_x) and generated stats
/// (mu_y, var_y, cov), writing A1 = 2 mu_x mu_y + c1, A2 = 2 cov + c2,
/// B1 = mu_x^2 + mu_y^2 + c1, B2 = var_x + var_y + c2 and S = A1 A2/(B1 B2),
/// the derivative with respect to generated pixel y_k is
///
/// ```text
/// dS/dy_k = 2 / (n B1 B2) * [ mu_x A2 + A1 (x_k - mu_x)
///                             - S (mu_y B2 + B1 (y_k - mu_y)) ]
/// ```
///
/// and the loss gradient is `-(1/|Omega|) dS/dy_k` inside selected patches,
/// exactly zero elsewhere.
pub fn vs_ssim_loss(gen: &Image2D, gt: &Image2D, cfg: &LossConfig) -> Result<LossValueGrad> {
    gen.expect_same_geometry(gt, "vs_ssim_loss")?;
    gen.expect_single_channel("vs_ssim_loss")?;
    cfg.validate()?;
    let sel = select_patches(gt, cfg.patch_size, cfg.rho, cfg.mask.as_ref(), cfg.coverage_min)?;

    let (w, ps) = (gen.width(), cfg.patch_size);
    let n = (ps * ps) as f64;
    let inv_omega = 1.0 / sel.selected().len() as f64;
    let c1 = cfg.consts.c1();
    let c2 = cfg.consts.c2();
    let gt_plane = gt.plane(0);
    let gen_plane = gen.plane(0);

    let mut grad = vec![0.0; gen.data().len()];
    let mut ssim_sum = 0.0;
    for &(r, c) in sel.selected() {
        let (x0, y0) = sel.grid().patch_origin(r, c);
        // Whole-patch population statistics, two passes.
        let mut sx = 0.0;
        let mut sy = 0.0;
        for dy in 0..ps {
            let base = (y0 + dy) * w + x0;
            for dx in 0..ps {
                sx += gt_plane[base + dx];
                sy += gen_plane[base + dx];
            }
        }
        let mu_x = sx / n;
        let mu_y = sy / n;
        let mut var_x = 0.0;
        let mut var_y = 0.0;
        let mut cov = 0.0;
        for dy in 0..ps {
            let base = (y0 + dy) * w + x0;
            for dx in 0..ps {
                let ex = gt_plane[base + dx] - mu_x;
                let ey = gen_plane[base + dx] - mu_y;
                var_x += ex * ex;
                var_y += ey * ey;
                cov += ex * ey;
            }
        }
        var_x /= n;
        var_y /= n;
        cov /= n;

        let a1 = 2.0 * mu_x * mu_y + c1;
        let a2 = 2.0 * cov + c2;
        let b1 = mu_x * mu_x + mu_y * mu_y + c1;
        let b2 = var_x + var_y + c2;
        let s = (a1 * a2) / (b1 * b2);
        ssim_sum += s;

        let coef = 2.0 / (n * b1 * b2);
        for dy in 0..ps {
            let base = (y0 + dy) * w + x0;
            for dx in 0..ps {
                let xk = gt_plane[base + dx];
                let yk = gen_plane[base + dx];
                let ds = coef * (mu_x * a2 + a1 * (xk - mu_x) - s * (mu_y * b2 + b1 * (yk - mu_y)));
                grad[base + dx] = -inv_omega * ds;
            }
        }
    }
    let value = 1.0 - ssim_sum * inv_omega;
    let grad = Image2D::new(
        gen.width(),
        gen.height(),
        1,
        gen.spacing_mm(),
        DomainTag::Raw,
        grad,
    )?;
    LossValueGrad { value, grad }.check_finite("vs_ssim_loss")
}

/// Smoothing floor inside the TV square root; keeps the gradient defined
/// on flat regions.
pub const TV_EPSILON: f64 = 1e-6;

/// Smoothed isotropic total variation with forward differences:
/// `sum_ij sqrt(gx^2 + gy^2 + eps^2)` where the differences are zero on the
/// last column/row respectively. The gradient scatters each term onto the
/// three pixels in its stencil.
pub fn tv_regularizer(img: &Image2D) -> Result<LossValueGrad> {
    img.expect_single_channel("tv_regularizer")?;
    let (w, h) = (img.width(), img.height());
    let p = img.plane(0);
    let mut grad = vec![0.0; w * h];
    let mut value = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let gx = if x + 1 < w { p[i + 1] - p[i] } else { 0.0 };
            let gy = if y + 1 < h { p[i + w] - p[i] } else { 0.0 };
            let t = (gx * gx + gy * gy + TV_EPSILON * TV_EPSILON).sqrt();
            value += t;
            let inv = 1.0 / t;
            grad[i] -= (gx + gy) * inv;
            if x + 1 < w {
                grad[i + 1] += gx * inv;
            }
            if y + 1 < h {
                grad[i + w] += gy * inv;
            }
        }
    }
    let grad = Image2D::new(w, h, 1, img.spacing_mm(), DomainTag::Raw, grad)?;
    LossValueGrad { value, grad }.check_finite("tv_regularizer")
}

/// A pluggable differentiable penalty on the generated image; fills the
/// auxiliary slot of the composite objective.
pub trait Regularizer {
    fn name(&self) -> &str;
    fn evaluate(&self, img: &Image2D) -> Result<LossValueGrad>;
}

/// Total variation as a named [`Regularizer`].
pub struct TvRegularizer;

impl Regularizer for TvRegularizer {
    fn name(&self) -> &str {
        "tv"
    }

    fn evaluate(&self, img: &Image2D) -> Result<LossValueGrad> {
        tv_regularizer(img)
    }
}

/// Composite objective
/// `lambda_a * vs_ssim_loss + lambda_b * sum(aux) + tv_weight * tv`.
/// Terms with a zero weight are skipped entirely, so the degenerate
/// configuration (lambda_a = 1, others 0) reproduces `vs_ssim_loss`
/// bit for bit.
pub fn total_loss(
    gen: &Image2D,
    gt: &Image2D,
    cfg: &LossConfig,
    aux: &[&dyn Regularizer],
) -> Result<LossValueGrad> {
    cfg.validate()?;
    let mut value = 0.0;
    let mut grad = vec![0.0; gen.data().len()];
    let mut shaped = false;

    let mut accumulate = |weight: f64, term: LossValueGrad, grad: &mut Vec<f64>| {
        value += weight * term.value;
        for (g, t) in grad.iter_mut().zip(term.grad.data()) {
            *g += weight * t;
        }
    };

    if cfg.lambda_a != 0.0 {
        let term = vs_ssim_loss(gen, gt, cfg)?;
        shaped = true;
        accumulate(cfg.lambda_a, term, &mut grad);
    }
    if cfg.lambda_b != 0.0 {
        for reg in aux {
            let term = reg.evaluate(gen)?;
            term.grad.expect_same_geometry(gen, reg.name())?;
            shaped = true;
            accumulate(cfg.lambda_b, term, &mut grad);
        }
    }
    if cfg.tv_weight != 0.0 {
        let term = tv_regularizer(gen)?;
        shaped = true;
        accumulate(cfg.tv_weight, term, &mut grad);
    }
    if !shaped {
        // All weights zero: the objective is identically zero but the
        // gradient must still carry the right shape.
        gen.expect_single_channel("total_loss")?;
    }
    let grad = Image2D::new(
        gen.width(),
        gen.height(),
        gen.channels(),
        gen.spacing_mm(),
        DomainTag::Raw,
        grad,
    )?;
    LossValueGrad { value, grad }.check_finite("total_loss")
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn probe_fd<F>(loss: &F, point: &Image2D, index: usize, epsilon: f64) -> Result<f64>
where
    F: Fn(&Image2D) -> Result<LossValueGrad>,
{
    let eval_at = |delta: f64| -> Result<f64> {
        let mut data = point.data().to_vec();
        data[index] += delta;
        // Perturbed points may leave [-1, 1]; carry them as raw values.
        let img = Image2D::new(
            point.width(),
            point.height(),
            point.channels(),
            point.spacing_mm(),
            DomainTag::Raw,
            data,
        )?;
        let out = loss(&img)?;
        if !out.value.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at probe {index} offset {delta}"
            )));
        }
        Ok(out.value)
    };
    let plus = eval_at(epsilon)?;
    let minus = eval_at(-epsilon)?;
    Ok((plus - minus) / (2.0 * epsilon))
}

/// Compares the analytic gradient of `loss` against central finite
/// differences at `n_probes` seeded-random distinct pixels; returns the
/// maximum relative error with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(
    loss: F,
    point: &Image2D,
    epsilon: f64,
    n_probes: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&Image2D) -> Result<LossValueGrad>,
{
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if n_probes == 0 {
        return Err(Error::Domain("n_probes must be at least 1".to_string()));
    }
    let base = loss(point)?;
    if !base.value.is_finite() {
        return Err(Error::NonFinite("loss at the probe point".to_string()));
    }
    let n = point.data().len();
    let count = n_probes.min(n);
    // Partial Fisher-Yates over the index range: distinct, seed-determined.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = rng.random_range(i..n);
        indices.swap(i, j);
    }

    let mut max_rel = 0.0f64;
    for &k in &indices[..count] {
        let numeric = probe_fd(&loss, point, k, epsilon)?;
        max_rel = max_rel.max(relative_error(base.grad.data()[k], numeric));
    }
    Ok(max_rel)
}

/// Finite-difference check over the `top_k` largest-magnitude entries of
/// the analytic gradient (ties toward lower index). SSIM-style losses have
/// noisy tiny-gradient entries; probing the dominant ones measures the
/// gradient that optimization actually follows.
pub fn finite_diff_check_top<F>(
    loss: F,
    point: &Image2D,
    epsilon: f64,
    top_k: usize,
) -> Result<f64>
where
    F: Fn(&Image2D) -> Result<LossValueGrad>,
{
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if top_k == 0 {
        return Err(Error::Domain("top_k must be at least 1".to_string()));
    }
    let base = loss(point)?;
    let g = base.grad.data();
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&i, &j| g[j].abs().total_cmp(&g[i].abs()).then(i.cmp(&j)));
    let count = top_k.min(order.len());
    let mut max_rel = 0.0f64;
    for &k in &order[..count] {
        let numeric = probe_fd(&loss, point, k, epsilon)?;
        max_rel = max_rel.max(relative_error(g[k], numeric));
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn seeded_signed(w: usize, h: usize, seed: u64) -> Image2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h)
            .map(|_| rng.random_range(-0.999..0.999))
            .collect();
        Image2D::new(w, h, 1, 1.0, DomainTag::SignedUnit, data).unwrap()
    }

    fn cfg_8_half() -> LossConfig {
        LossConfig {
            patch_size: 8,
            rho: 0.5,
            ..LossConfig::default()
        }
    }

    #[test]
    fn loss_is_zero_with_zero_grad_at_identity() {
        let gt = seeded_signed(32, 32, 100);
        let out = vs_ssim_loss(&gt, &gt, &cfg_8_half()).unwrap();
        assert!(out.value.abs() < 1e-10, "value {}", out.value);
        let max_g = out.grad.data().iter().fold(0.0f64, |m, &g| m.max(g.abs()));
        assert!(max_g < 1e-10, "max grad {max_g}");
    }

    #[test]
    fn gradient_is_zero_outside_selected_patches() {
        let gt = seeded_signed(32, 32, 101);
        let gen = seeded_signed(32, 32, 102);
        let cfg = cfg_8_half();
        let out = vs_ssim_loss(&gen, &gt, &cfg).unwrap();
        let sel = select_patches(&gt, 8, 0.5, None, 0.5).unwrap();
        let selected: std::collections::HashSet<(usize, usize)> =
            sel.selected().iter().copied().collect();
        for y in 0..32 {
            for x in 0..32 {
                let cell = (y / 8, x / 8);
                if !selected.contains(&cell) {
                    assert_eq!(out.grad.get(0, y, x), 0.0, "pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn loss_value_matches_one_minus_vs_ssim() {
        use crate::metrics::vs_ssim;
        let gt = seeded_signed(32, 32, 103);
        let gen = seeded_signed(32, 32, 104);
        let cfg = cfg_8_half();
        let out = vs_ssim_loss(&gen, &gt, &cfg).unwrap();
        let sel = select_patches(&gt, 8, 0.5, None, 0.5).unwrap();
        let v = vs_ssim(&gt, &gen, &sel, &cfg.consts).unwrap();
        assert!((out.value - (1.0 - v)).abs() < 1e-12);
        assert!(out.value >= 0.0 && out.value <= 2.0);
    }

    #[test]
    fn analytic_gradient_passes_finite_difference_check() {
        let gt = seeded_signed(32, 32, 105);
        let gen = seeded_signed(32, 32, 106);
        let cfg = cfg_8_half();
        let err = finite_diff_check_top(
            |img| vs_ssim_loss(img, &gt, &cfg),
            &gen,
            1e-4,
            50,
        )
        .unwrap();
        assert!(err < 1e-3, "max rel error {err}");
    }

    #[test]
    fn tv_constant_image_is_flat() {
        let img = Image2D::new(8, 8, 1, 1.0, DomainTag::SignedUnit, vec![0.25; 64]).unwrap();
        let out = tv_regularizer(&img).unwrap();
        assert!((out.value - 64.0 * TV_EPSILON).abs() < 1e-15);
        assert!(out.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn tv_step_matches_direct_summation_oracle() {
        // Unit step between columns 3 and 4 on an 8x8 lattice.
        let mut data = vec![0.0; 64];
        for y in 0..8 {
            for x in 4..8 {
                data[y * 8 + x] = 1.0;
            }
        }
        let img = Image2D::new(8, 8, 1, 1.0, DomainTag::Raw, data.clone()).unwrap();
        let out = tv_regularizer(&img).unwrap();
        let mut oracle = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                let gx = if x + 1 < 8 { data[y * 8 + x + 1] - data[y * 8 + x] } else { 0.0 };
                let gy = if y + 1 < 8 { data[(y + 1) * 8 + x] - data[y * 8 + x] } else { 0.0 };
                oracle += (gx * gx + gy * gy + TV_EPSILON * TV_EPSILON).sqrt();
            }
        }
        assert!((out.value - oracle).abs() < 1e-9);
        // 8 step terms of ~1 plus 56 epsilon terms.
        assert!((out.value - (8.0 + 56.0 * TV_EPSILON)).abs() < 1e-6);
    }

    #[test]
    fn tv_gradient_passes_finite_difference_check() {
        let img = seeded_signed(16, 16, 107);
        let err = finite_diff_check(tv_regularizer, &img, 1e-4, 50, 42).unwrap();
        assert!(err < 1e-4, "max rel error {err}");
    }

    #[test]
    fn total_loss_degenerates_to_vs_ssim_loss() {
        let gt = seeded_signed(32, 32, 108);
        let gen = seeded_signed(32, 32, 109);
        let cfg = cfg_8_half();
        let lone = vs_ssim_loss(&gen, &gt, &cfg).unwrap();
        let combo = total_loss(&gen, &gt, &cfg, &[]).unwrap();
        assert_eq!(lone.value, combo.value);
        assert_eq!(lone.grad.data(), combo.grad.data());
    }

    #[test]
    fn total_loss_is_linear_in_weights() {
        let gt = seeded_signed(32, 32, 110);
        let gen = seeded_signed(32, 32, 111);
        let mut cfg = cfg_8_half();
        cfg.tv_weight = 0.1;
        let base = total_loss(&gen, &gt, &cfg, &[]).unwrap();

        // Components recomputed independently.
        let vs = vs_ssim_loss(&gen, &gt, &cfg).unwrap();
        let tv = tv_regularizer(&gen).unwrap();
        let expected = vs.value + 0.1 * tv.value;
        assert!((base.value - expected).abs() < 1e-12);

        let mut doubled = cfg.clone();
        doubled.lambda_a = 2.0;
        doubled.tv_weight = 0.0;
        let d = total_loss(&gen, &gt, &doubled, &[]).unwrap();
        assert!((d.value - 2.0 * vs.value).abs() < 1e-12);
        for (a, b) in d.grad.data().iter().zip(vs.grad.data()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn aux_regularizers_fill_the_lambda_b_slot() {
        let gt = seeded_signed(16, 16, 112);
        let gen = seeded_signed(16, 16, 113);
        let mut cfg = LossConfig {
            patch_size: 8,
            rho: 1.0,
            ..LossConfig::default()
        };
        cfg.lambda_b = 0.5;
        let with_aux = total_loss(&gen, &gt, &cfg, &[&TvRegularizer]).unwrap();
        let vs = vs_ssim_loss(&gen, &gt, &cfg).unwrap();
        let tv = tv_regularizer(&gen).unwrap();
        assert!((with_aux.value - (vs.value + 0.5 * tv.value)).abs() < 1e-12);
    }

    #[test]
    fn quadratic_loss_passes_with_tight_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(114);
        let data: Vec<f64> = (0..64)
            .map(|_| {
                let mag = rng.random_range(0.2..1.0);
                if rng.random_range(0.0..1.0) < 0.5 {
                    -mag
                } else {
                    mag
                }
            })
            .collect();
        let point = Image2D::new(8, 8, 1, 1.0, DomainTag::Raw, data).unwrap();
        let quad = |img: &Image2D| -> Result<LossValueGrad> {
            let value = img.data().iter().map(|v| v * v).sum::<f64>() / 2.0;
            let grad = img.clone();
            Ok(LossValueGrad { value, grad })
        };
        // Central differences are exact for quadratics; a large step keeps
        // cancellation noise far below the tolerance.
        let err = finite_diff_check(quad, &point, 0.5, 64, 7).unwrap();
        assert!(err < 1e-8, "max rel error {err}");
    }

    #[test]
    fn finite_diff_check_rejects_bad_epsilon() {
        let img = seeded_signed(8, 8, 115);
        let quad = |img: &Image2D| -> Result<LossValueGrad> {
            Ok(LossValueGrad {
                value: 0.0,
                grad: img.clone(),
            })
        };
        assert!(matches!(
            finite_diff_check(quad, &img, 0.0, 4, 1),
            Err(Error::Domain(_))
        ));
    }
}
