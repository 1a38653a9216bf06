//! In-memory image containers and the patch bookkeeping used by the
//! variance-selective metrics.
//!
//! Pixels are stored as `f64` in channel-planar, row-major order: the
//! sample for channel `c` at column `x`, row `y` lives at
//! `c * w * h + y * w + x`. Physical pixel spacing is isotropic and carried
//! in millimetres. A [`DomainTag`] records whether the values are raw
//! attenuation-like quantities or have been windowed into `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value domain of an [`Image2D`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    /// Unbounded real samples (attenuation, sinogram bins, gradients).
    Raw,
    /// Windowed samples, every value in `[-1, 1]`.
    SignedUnit,
}

impl DomainTag {
    /// On-disk tag byte. `0` = raw, `1` = signed unit.
    pub fn to_byte(self) -> u8 {
        match self {
            DomainTag::Raw => 0,
            DomainTag::SignedUnit => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<DomainTag> {
        match b {
            0 => Some(DomainTag::Raw),
            1 => Some(DomainTag::SignedUnit),
            _ => None,
        }
    }
}

/// A dense 2-D image with one or more channels and isotropic spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    channels: usize,
    spacing_mm: f64,
    domain: DomainTag,
    data: Vec<f64>,
}

impl Image2D {
    /// Builds an image, checking every container invariant:
    /// positive dimensions, positive finite spacing, `data.len() == w*h*c`,
    /// all samples finite, and samples within `[-1, 1]` when tagged
    /// [`DomainTag::SignedUnit`].
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        spacing_mm: f64,
        domain: DomainTag,
        data: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Invalid(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if !(spacing_mm.is_finite() && spacing_mm > 0.0) {
            return Err(Error::Domain(format!(
                "pixel spacing must be positive and finite, got {spacing_mm}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::Invalid("image dimensions overflow".to_string()))?;
        if data.len() != expected {
            return Err(Error::Invalid(format!(
                "data length {} does not match {width}x{height}x{channels} = {expected}",
                data.len()
            )));
        }
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("sample {i} is {v}")));
            }
            if domain == DomainTag::SignedUnit && !(-1.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!(
                    "signed_unit sample {i} is {v}, outside [-1, 1]"
                )));
            }
        }
        Ok(Image2D {
            width,
            height,
            channels,
            spacing_mm,
            domain,
            data,
        })
    }

    /// Single-channel all-zero image tagged raw.
    pub fn zeros(width: usize, height: usize, spacing_mm: f64) -> Result<Self> {
        Image2D::new(
            width,
            height,
            1,
            spacing_mm,
            DomainTag::Raw,
            vec![0.0; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spacing_mm(&self) -> f64 {
        self.spacing_mm
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    /// Full channel-planar buffer.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Consumes the image, returning its buffer.
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// One channel plane, row-major.
    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[channel * n..(channel + 1) * n]
    }

    /// Sample at (channel, row, column). Callers index within bounds.
    #[inline]
    pub fn get(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    /// True when the two images agree in width, height, channel count and
    /// spacing. Domain tags are compared separately where they matter.
    pub fn same_geometry(&self, other: &Image2D) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
            && self.spacing_mm == other.spacing_mm
    }

    pub(crate) fn expect_same_geometry(&self, other: &Image2D, what: &str) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} @ {} mm vs {}x{}x{} @ {} mm",
                self.width,
                self.height,
                self.channels,
                self.spacing_mm,
                other.width,
                other.height,
                other.channels,
                other.spacing_mm
            )))
        }
    }

    pub(crate) fn expect_single_channel(&self, what: &str) -> Result<()> {
        if self.channels == 1 {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what} requires a single-channel image, got {} channels",
                self.channels
            )))
        }
    }

    /// Windows `[window_lo, window_hi]` affinely onto `[-1, 1]`, clamping
    /// values outside the window. The result is tagged signed unit.
    pub fn normalize_to_signed_unit(&self, window_lo: f64, window_hi: f64) -> Result<Image2D> {
        if !(window_lo.is_finite() && window_hi.is_finite()) {
            return Err(Error::Domain(
                "normalization window must be finite".to_string(),
            ));
        }
        if window_hi <= window_lo {
            return Err(Error::Domain(format!(
                "normalization window is empty: lo {window_lo} >= hi {window_hi}"
            )));
        }
        let scale = 2.0 / (window_hi - window_lo);
        let data = self
            .data
            .iter()
            .map(|&v| ((v - window_lo) * scale - 1.0).clamp(-1.0, 1.0))
            .collect();
        Image2D::new(
            self.width,
            self.height,
            self.channels,
            self.spacing_mm,
            DomainTag::SignedUnit,
            data,
        )
    }

    /// Appends a mask as an extra channel, remapping {0, 1} to {-1, +1} so
    /// the combined image stays signed unit.
    ///
    /// The image must already be signed unit and must match the mask's
    /// width and height.
    pub fn concat_channels(&self, mask: &MaskFeatureMap) -> Result<Image2D> {
        if self.domain != DomainTag::SignedUnit {
            return Err(Error::Domain(
                "concat_channels requires a signed_unit image".to_string(),
            ));
        }
        if self.width != mask.width() || self.height != mask.height() {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} vs mask {}x{}",
                self.width,
                self.height,
                mask.width(),
                mask.height()
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + self.width * self.height);
        data.extend_from_slice(&self.data);
        data.extend(
            mask.data()
                .iter()
                .map(|&b| if b != 0 { 1.0 } else { -1.0 }),
        );
        Image2D::new(
            self.width,
            self.height,
            self.channels + 1,
            self.spacing_mm,
            DomainTag::SignedUnit,
            data,
        )
    }

    /// Tiles the image into non-overlapping `patch_size`-square patches and
    /// records which of them are admitted.
    ///
    /// The grid is anchored at pixel (0, 0); trailing rows and columns that
    /// do not fill a whole patch are dropped. Without a mask every patch is
    /// admitted. With a mask, a patch is admitted when the fraction of
    /// foreground pixels inside it is at least `coverage_min`.
    pub fn decompose_patches(
        &self,
        patch_size: usize,
        mask: Option<&MaskFeatureMap>,
        coverage_min: f64,
    ) -> Result<PatchGrid> {
        self.expect_single_channel("decompose_patches")?;
        if patch_size < 2 {
            return Err(Error::Domain(format!(
                "patch_size must be at least 2, got {patch_size}"
            )));
        }
        if patch_size > self.width || patch_size > self.height {
            return Err(Error::Domain(format!(
                "patch_size {patch_size} exceeds image extent {}x{}",
                self.width, self.height
            )));
        }
        if !(0.0..=1.0).contains(&coverage_min) {
            return Err(Error::Domain(format!(
                "coverage_min must lie in [0, 1], got {coverage_min}"
            )));
        }
        if let Some(m) = mask {
            if m.width() != self.width || m.height() != self.height {
                return Err(Error::ShapeMismatch(format!(
                    "image {}x{} vs mask {}x{}",
                    self.width,
                    self.height,
                    m.width(),
                    m.height()
                )));
            }
        }
        let rows = self.height / patch_size;
        let cols = self.width / patch_size;
        let patch_area = (patch_size * patch_size) as f64;
        let mut admitted = vec![true; rows * cols];
        if let Some(m) = mask {
            for r in 0..rows {
                for c in 0..cols {
                    let mut fg = 0usize;
                    for dy in 0..patch_size {
                        let y = r * patch_size + dy;
                        let row = &m.data()[y * self.width..(y + 1) * self.width];
                        for dx in 0..patch_size {
                            fg += usize::from(row[c * patch_size + dx]);
                        }
                    }
                    admitted[r * cols + c] = fg as f64 / patch_area >= coverage_min;
                }
            }
        }
        Ok(PatchGrid {
            patch_size,
            rows,
            cols,
            admitted,
        })
    }
}

/// A binary foreground map with the same lattice as the image it annotates.
/// Samples are exactly 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskFeatureMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl MaskFeatureMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Invalid(format!(
                "mask data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&b| b > 1) {
            return Err(Error::Invalid(format!(
                "mask sample {pos} is {}, expected 0 or 1",
                data[pos]
            )));
        }
        Ok(MaskFeatureMap {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        MaskFeatureMap::new(width, height, vec![0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().map(|&b| usize::from(b)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.foreground_count() == 0
    }
}

/// Result of [`Image2D::decompose_patches`]: the tiling parameters plus an
/// admission flag per patch, row-major with origin at patch (0, 0).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    patch_size: usize,
    rows: usize,
    cols: usize,
    admitted: Vec<bool>,
}

impl PatchGrid {
    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Total patch count, admitted or not.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_admitted(&self, row: usize, col: usize) -> bool {
        self.admitted[row * self.cols + col]
    }

    pub fn admitted_count(&self) -> usize {
        self.admitted.iter().filter(|&&a| a).count()
    }

    /// Admitted patch coordinates in row-major order.
    pub fn admitted_patches(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.admitted_count());
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.admitted[r * self.cols + c] {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Top-left pixel (x, y) of patch (row, col).
    pub fn patch_origin(&self, row: usize, col: usize) -> (usize, usize) {
        (col * self.patch_size, row * self.patch_size)
    }
}

/// Copies patch (row, col) of a single-channel image into a contiguous
/// buffer, row-major.
pub(crate) fn extract_patch(img: &Image2D, grid: &PatchGrid, row: usize, col: usize) -> Vec<f64> {
    let ps = grid.patch_size();
    let (x0, y0) = grid.patch_origin(row, col);
    let mut out = Vec::with_capacity(ps * ps);
    let plane = img.plane(0);
    for dy in 0..ps {
        let start = (y0 + dy) * img.width() + x0;
        out.extend_from_slice(&plane[start..start + ps]);
    }
    out
}
