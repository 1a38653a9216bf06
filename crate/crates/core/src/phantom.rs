//! Analytic ellipse phantoms rendered onto a pixel lattice.
//!
//! The physical frame is centred on the image: pixel (ix, iy) sits at
//! `x = (ix - (w-1)/2) * spacing`, `y = (iy - (h-1)/2) * spacing`, with `y`
//! growing with the row index. Ellipse intensities are additive, so overlaps
//! sum, which is how the classic head/chest phantoms are composed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DomainTag, Image2D};

/// One additive ellipse. `rotation_rad` rotates the ellipse axes
/// counter-clockwise relative to the +x axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center_x_mm: f64,
    pub center_y_mm: f64,
    pub semi_axis_a_mm: f64,
    pub semi_axis_b_mm: f64,
    pub rotation_rad: f64,
    pub additive_intensity: f64,
}

impl Ellipse {
    fn validate(&self, index: usize) -> Result<()> {
        let finite = self.center_x_mm.is_finite()
            && self.center_y_mm.is_finite()
            && self.semi_axis_a_mm.is_finite()
            && self.semi_axis_b_mm.is_finite()
            && self.rotation_rad.is_finite()
            && self.additive_intensity.is_finite();
        if !finite {
            return Err(Error::Domain(format!(
                "ellipse {index} has a non-finite parameter"
            )));
        }
        if self.semi_axis_a_mm <= 0.0 || self.semi_axis_b_mm <= 0.0 {
            return Err(Error::Domain(format!(
                "ellipse {index} semi-axes must be positive, got {} and {}",
                self.semi_axis_a_mm, self.semi_axis_b_mm
            )));
        }
        Ok(())
    }

    /// True when the physical point (x, y) lies inside or on the ellipse.
    #[inline]
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center_x_mm;
        let dy = y - self.center_y_mm;
        let (sin, cos) = self.rotation_rad.sin_cos();
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        let a = u / self.semi_axis_a_mm;
        let b = v / self.semi_axis_b_mm;
        a * a + b * b <= 1.0
    }
}

/// A phantom definition: lattice size, spacing and the additive ellipses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub spacing_mm: f64,
    pub ellipses: Vec<Ellipse>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Domain(format!(
                "phantom dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.spacing_mm.is_finite() && self.spacing_mm > 0.0) {
            return Err(Error::Domain(format!(
                "phantom spacing must be positive, got {}",
                self.spacing_mm
            )));
        }
        if self.ellipses.is_empty() {
            return Err(Error::Domain(
                "phantom needs at least one ellipse".to_string(),
            ));
        }
        for (i, e) in self.ellipses.iter().enumerate() {
            e.validate(i)?;
        }
        Ok(())
    }

    /// A single centred disk, handy for projection fidelity checks where the
    /// analytic chord length is known.
    pub fn centered_disk(
        width: usize,
        height: usize,
        spacing_mm: f64,
        radius_mm: f64,
        intensity: f64,
    ) -> PhantomSpec {
        PhantomSpec {
            width,
            height,
            spacing_mm,
            ellipses: vec![Ellipse {
                center_x_mm: 0.0,
                center_y_mm: 0.0,
                semi_axis_a_mm: radius_mm,
                semi_axis_b_mm: radius_mm,
                rotation_rad: 0.0,
                additive_intensity: intensity,
            }],
        }
    }
}

/// Rasterizes the phantom: each pixel takes the sum of intensities of the
/// ellipses whose interior contains the pixel centre. The result is raw.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Image2D> {
    spec.validate()?;
    let cx = (spec.width as f64 - 1.0) / 2.0;
    let cy = (spec.height as f64 - 1.0) / 2.0;
    let mut data = vec![0.0; spec.width * spec.height];
    for iy in 0..spec.height {
        let y = (iy as f64 - cy) * spec.spacing_mm;
        let row = &mut data[iy * spec.width..(iy + 1) * spec.width];
        for (ix, out) in row.iter_mut().enumerate() {
            let x = (ix as f64 - cx) * spec.spacing_mm;
            let mut v = 0.0;
            for e in &spec.ellipses {
                if e.contains(x, y) {
                    v += e.additive_intensity;
                }
            }
            *out = v;
        }
    }
    Image2D::new(
        spec.width,
        spec.height,
        1,
        spec.spacing_mm,
        DomainTag::Raw,
        data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_hits_center_and_misses_corner() {
        let spec = PhantomSpec::centered_disk(64, 64, 1.0, 20.0, 1.0);
        let img = make_phantom(&spec).unwrap();
        assert_eq!(img.get(0, 32, 32), 1.0);
        assert_eq!(img.get(0, 0, 0), 0.0);
        // Disk area ~ pi r^2; pixelization error stays small at this size.
        let area: f64 = img.data().iter().sum();
        let expected = std::f64::consts::PI * 20.0 * 20.0;
        assert!((area - expected).abs() / expected < 0.02, "area {area}");
    }

    #[test]
    fn overlapping_ellipses_add() {
        let mut spec = PhantomSpec::centered_disk(32, 32, 1.0, 10.0, 0.75);
        spec.ellipses.push(Ellipse {
            center_x_mm: 0.0,
            center_y_mm: 0.0,
            semi_axis_a_mm: 4.0,
            semi_axis_b_mm: 4.0,
            rotation_rad: 0.0,
            additive_intensity: -0.25,
        });
        let img = make_phantom(&spec).unwrap();
        assert_eq!(img.get(0, 16, 16), 0.5);
        assert_eq!(img.get(0, 16, 16 + 8), 0.75);
    }

    #[test]
    fn rotation_moves_the_long_axis() {
        let spec = PhantomSpec {
            width: 41,
            height: 41,
            spacing_mm: 1.0,
            ellipses: vec![Ellipse {
                center_x_mm: 0.0,
                center_y_mm: 0.0,
                semi_axis_a_mm: 15.0,
                semi_axis_b_mm: 3.0,
                rotation_rad: std::f64::consts::FRAC_PI_2,
                additive_intensity: 1.0,
            }],
        };
        let img = make_phantom(&spec).unwrap();
        // Long axis now vertical: +y extremity inside, +x extremity outside.
        assert_eq!(img.get(0, 20 + 14, 20), 1.0);
        assert_eq!(img.get(0, 20, 20 + 14), 0.0);
    }

    #[test]
    fn validation_rejects_degenerate_specs() {
        let mut spec = PhantomSpec::centered_disk(8, 8, 1.0, 3.0, 1.0);
        spec.ellipses[0].semi_axis_a_mm = 0.0;
        assert!(make_phantom(&spec).is_err());
        let empty = PhantomSpec {
            width: 8,
            height: 8,
            spacing_mm: 1.0,
            ellipses: vec![],
        };
        assert!(make_phantom(&empty).is_err());
    }
}
