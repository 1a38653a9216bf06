//! Prompt-driven foreground segmentation: intensity thresholding, 4-connected
//! component selection at user prompts, and a morphological closing to smooth
//! the result. Stands in for heavier promptable segmenters while keeping the
//! same contract: points in, binary feature map out.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image2D, MaskFeatureMap};

/// A pixel coordinate used to prompt the segmenter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPoint {
    pub x: usize,
    pub y: usize,
}

/// A non-empty set of prompt points.
#[derive(Clone, Debug)]
pub struct PromptSet(Vec<PromptPoint>);

impl PromptSet {
    pub fn new(points: Vec<PromptPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config(
                "a prompt set needs at least one point".to_string(),
            ));
        }
        Ok(PromptSet(points))
    }

    pub fn points(&self) -> &[PromptPoint] {
        &self.0
    }
}

/// Threshold and smoothing parameters of the segmenter.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SegmenterConfig {
    /// Foreground is strictly above this value (signed-unit scale).
    pub intensity_threshold: f64,
    /// Radius of the Euclidean disk used for the closing; zero disables it.
    pub morphology_radius: usize,
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.intensity_threshold.is_finite()
            || !(-1.0..=1.0).contains(&self.intensity_threshold)
        {
            return Err(Error::Config(format!(
                "intensity_threshold must lie in [-1, 1], got {}",
                self.intensity_threshold
            )));
        }
        Ok(())
    }
}

/// Offsets of the Euclidean disk structuring element: `dx^2 + dy^2 <= r^2`.
fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let r2 = r * r;
    let mut offs = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r2 {
                offs.push((dx, dy));
            }
        }
    }
    offs
}

/// Dilation with out-of-bounds treated as background: a border pixel turns
/// on only from in-bounds neighbors.
fn dilate(mask: &[u8], w: usize, h: usize, offs: &[(isize, isize)]) -> Vec<u8> {
    let mut out = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let hit = offs.iter().any(|&(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                nx >= 0
                    && ny >= 0
                    && nx < w as isize
                    && ny < h as isize
                    && mask[ny as usize * w + nx as usize] == 1
            });
            if hit {
                out[y as usize * w + x as usize] = 1;
            }
        }
    }
    out
}

/// Erosion with out-of-bounds treated as foreground, so a region touching
/// the border keeps its border pixels and a uniformly-on mask is a fixed
/// point of the closing.
fn erode(mask: &[u8], w: usize, h: usize, offs: &[(isize, isize)]) -> Vec<u8> {
    let mut out = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let all = offs.iter().all(|&(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize {
                    mask[ny as usize * w + nx as usize] == 1
                } else {
                    true
                }
            });
            if all {
                out[y as usize * w + x as usize] = 1;
            }
        }
    }
    out
}

/// Closing = dilation followed by erosion with the same element.
fn close(mask: Vec<u8>, w: usize, h: usize, radius: usize) -> Vec<u8> {
    if radius == 0 {
        return mask;
    }
    let offs = disk_offsets(radius);
    let dilated = dilate(&mask, w, h, &offs);
    erode(&dilated, w, h, &offs)
}

/// Labels 4-connected foreground components; background keeps label 0,
/// components get 1, 2, ... in raster order of their first pixel.
fn label_components(binary: &[u8], w: usize, h: usize) -> Vec<u32> {
    let mut labels = vec![0u32; w * h];
    let mut next = 1u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if binary[start] == 0 || labels[start] != 0 {
            continue;
        }
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if binary[j] == 1 && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        next += 1;
    }
    labels
}

/// Segments the image at the given prompts: binarize strictly above the
/// threshold, take the union of the 4-connected components containing the
/// prompts, then close the union with a Euclidean disk of the configured
/// radius. A prompt outside the image or on a background pixel is an error
/// naming the point.
pub fn segment_from_prompts(
    img: &Image2D,
    prompts: &PromptSet,
    cfg: &SegmenterConfig,
) -> Result<MaskFeatureMap> {
    img.expect_single_channel("segment_from_prompts")?;
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    let plane = img.plane(0);
    let binary: Vec<u8> = plane
        .iter()
        .map(|&v| u8::from(v > cfg.intensity_threshold))
        .collect();
    let labels = label_components(&binary, w, h);

    let mut wanted = Vec::new();
    for p in prompts.points() {
        if p.x >= w || p.y >= h {
            return Err(Error::Domain(format!(
                "prompt ({}, {}) lies outside the {w}x{h} image",
                p.x, p.y
            )));
        }
        let i = p.y * w + p.x;
        if binary[i] == 0 {
            return Err(Error::Domain(format!(
                "prompt ({}, {}) lies on background: value {} is not above threshold {}",
                p.x,
                p.y,
                plane[i],
                cfg.intensity_threshold
            )));
        }
        let label = labels[i];
        if !wanted.contains(&label) {
            wanted.push(label);
        }
    }

    let union: Vec<u8> = labels
        .iter()
        .map(|l| u8::from(*l != 0 && wanted.contains(l)))
        .collect();
    let closed = close(union, w, h, cfg.morphology_radius);
    MaskFeatureMap::new(w, h, closed)
}

/// An externally supplied mask; emptiness is a signal for the caller, not
/// an error, so a pipeline can fall back to unmasked selection.
#[derive(Clone, Debug)]
pub struct LoadedMask {
    pub mask: MaskFeatureMap,
    pub empty: bool,
}

/// Reads a binary mask from a PGM file and flags whether it has any
/// foreground at all.
pub fn load_external_mask(path: &Path) -> Result<LoadedMask> {
    let mask = crate::io::read_mask(path)?;
    let empty = mask.is_empty();
    Ok(LoadedMask { mask, empty })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::DomainTag;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image_from(w: usize, h: usize, data: Vec<f64>) -> Image2D {
        Image2D::new(w, h, 1, 1.0, DomainTag::SignedUnit, data).unwrap()
    }

    fn cfg(threshold: f64, radius: usize) -> SegmenterConfig {
        SegmenterConfig {
            intensity_threshold: threshold,
            morphology_radius: radius,
        }
    }

    fn prompt(x: usize, y: usize) -> PromptSet {
        PromptSet::new(vec![PromptPoint { x, y }]).unwrap()
    }

    /// Independent component oracle: union-find over 4-adjacent foreground.
    struct Dsu(Vec<usize>);

    impl Dsu {
        fn new(n: usize) -> Self {
            Dsu((0..n).collect())
        }

        fn find(&mut self, i: usize) -> usize {
            if self.0[i] != i {
                let root = self.find(self.0[i]);
                self.0[i] = root;
            }
            self.0[i]
        }

        fn union(&mut self, a: usize, b: usize) {
            let (ra, rb) = (self.find(a), self.find(b));
            self.0[ra] = rb;
        }
    }

    #[test]
    fn component_selection_matches_union_find_oracle() {
        let (w, h) = (24, 18);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let data: Vec<f64> = (0..w * h)
            .map(|_| if rng.random_range(0.0..1.0) < 0.45 { 0.9 } else { -0.9 })
            .collect();
        let img = image_from(w, h, data.clone());

        let mut dsu = Dsu::new(w * h);
        let fg = |i: usize| data[i] > 0.0;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !fg(i) {
                    continue;
                }
                if x + 1 < w && fg(i + 1) {
                    dsu.union(i, i + 1);
                }
                if y + 1 < h && fg(i + w) {
                    dsu.union(i, i + w);
                }
            }
        }

        // Probe several foreground prompts across the image.
        let prompts: Vec<usize> = (0..w * h).filter(|&i| fg(i)).step_by(17).collect();
        for &pi in &prompts {
            let got = segment_from_prompts(
                &img,
                &prompt(pi % w, pi / w),
                &cfg(0.0, 0),
            )
            .unwrap();
            let root = dsu.find(pi);
            for i in 0..w * h {
                let expected = u8::from(fg(i) && dsu.find(i) == root);
                assert_eq!(got.data()[i], expected, "pixel {i} prompt {pi}");
            }
        }
    }

    #[test]
    fn diagonal_neighbors_are_separate_components() {
        // Two foreground pixels touching only at a corner.
        let mut data = vec![-1.0; 16];
        data[5] = 1.0; // (1, 1)
        data[10] = 1.0; // (2, 2)
        let img = image_from(4, 4, data);
        let got = segment_from_prompts(&img, &prompt(1, 1), &cfg(0.0, 0)).unwrap();
        assert!(got.get(1, 1));
        assert!(!got.get(2, 2));
        assert_eq!(got.foreground_count(), 1);
    }

    #[test]
    fn disk_segmentation_overlaps_the_true_disk() {
        use crate::metrics::dice;
        use crate::phantom::{make_phantom, PhantomSpec};
        let spec = PhantomSpec::centered_disk(64, 64, 1.0, 20.0, 1.0);
        let raw = make_phantom(&spec).unwrap();
        let img = raw.normalize_to_signed_unit(0.0, 1.0).unwrap();
        let got = segment_from_prompts(&img, &prompt(32, 32), &cfg(0.0, 1)).unwrap();

        // Ideal disk rendered as a signed-unit image for the overlap score.
        let ideal: Vec<f64> = (0..64 * 64)
            .map(|i| {
                let (x, y) = ((i % 64) as f64 - 31.5, (i / 64) as f64 - 31.5);
                if x * x + y * y <= 400.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        let got_img = image_from(
            64,
            64,
            got.data().iter().map(|&b| if b == 1 { 1.0 } else { -1.0 }).collect(),
        );
        let ideal_img = image_from(64, 64, ideal);
        let overlap = dice(&got_img, &ideal_img, 0.0).unwrap();
        assert!(overlap > 0.95, "dice {overlap}");
    }

    #[test]
    fn uniform_foreground_closes_to_all_ones() {
        let img = image_from(12, 9, vec![0.5; 108]);
        let got = segment_from_prompts(&img, &prompt(0, 0), &cfg(0.0, 2)).unwrap();
        assert_eq!(got.foreground_count(), 108);
    }

    #[test]
    fn closing_fills_a_small_hole() {
        // A 7x7 foreground block with one interior pixel punched out.
        let (w, h) = (11, 11);
        let mut data = vec![-1.0; w * h];
        for y in 2..9 {
            for x in 2..9 {
                data[y * w + x] = 1.0;
            }
        }
        data[5 * w + 5] = -1.0;
        let img = image_from(w, h, data);
        let open = segment_from_prompts(&img, &prompt(2, 2), &cfg(0.0, 0)).unwrap();
        assert!(!open.get(5, 5));
        let closed = segment_from_prompts(&img, &prompt(2, 2), &cfg(0.0, 1)).unwrap();
        assert!(closed.get(5, 5), "closing should fill the hole");
        // The outer boundary of the block is unchanged.
        assert!(closed.get(2, 2));
        assert!(!closed.get(1, 1));
    }

    #[test]
    fn radius_zero_is_the_identity() {
        let mut data = vec![-1.0; 64];
        for i in [9, 10, 17, 18, 26] {
            data[i] = 0.8;
        }
        let img = image_from(8, 8, data.clone());
        let got = segment_from_prompts(&img, &prompt(1, 1), &cfg(0.0, 0)).unwrap();
        for (m, v) in got.data().iter().zip(&data) {
            assert_eq!(*m, u8::from(*v > 0.0));
        }
    }

    #[test]
    fn additional_prompts_grow_the_mask() {
        // Two disjoint blobs.
        let (w, h) = (16, 8);
        let mut data = vec![-1.0; w * h];
        for y in 2..5 {
            for x in 2..5 {
                data[y * w + x] = 1.0;
            }
            for x in 10..13 {
                data[y * w + x] = 1.0;
            }
        }
        let img = image_from(w, h, data);
        let one = segment_from_prompts(&img, &prompt(3, 3), &cfg(0.0, 0)).unwrap();
        let both = segment_from_prompts(
            &img,
            &PromptSet::new(vec![PromptPoint { x: 3, y: 3 }, PromptPoint { x: 11, y: 3 }])
                .unwrap(),
            &cfg(0.0, 0),
        )
        .unwrap();
        assert_eq!(one.foreground_count(), 9);
        assert_eq!(both.foreground_count(), 18);
        for i in 0..w * h {
            assert!(both.data()[i] >= one.data()[i], "mask shrank at {i}");
        }
    }

    #[test]
    fn background_prompt_is_an_error_naming_the_point() {
        let img = image_from(8, 8, vec![-0.9; 64]);
        let err = segment_from_prompts(&img, &prompt(3, 4), &cfg(0.0, 1)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(3, 4)"), "message should name the point: {msg}");
    }

    #[test]
    fn out_of_bounds_prompt_is_an_error() {
        let img = image_from(8, 8, vec![0.9; 64]);
        assert!(matches!(
            segment_from_prompts(&img, &prompt(8, 0), &cfg(0.0, 1)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn empty_prompt_set_is_rejected() {
        assert!(matches!(PromptSet::new(vec![]), Err(Error::Config(_))));
    }

    #[test]
    fn external_mask_reports_emptiness_as_a_signal() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("empty.pgm");
        let mask = MaskFeatureMap::zeros(6, 4).unwrap();
        crate::io::write_mask(&mask, &path).unwrap();
        let loaded = load_external_mask(&path).unwrap();
        assert!(loaded.empty);
        assert_eq!(loaded.mask.width(), 6);

        let path2 = dir.path().join("full.pgm");
        let mask2 = MaskFeatureMap::new(6, 4, vec![1; 24]).unwrap();
        crate::io::write_mask(&mask2, &path2).unwrap();
        assert!(!load_external_mask(&path2).unwrap().empty);
    }
}
