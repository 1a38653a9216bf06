//! On-disk formats: the IMG2D raster container, binary PGM masks and
//! previews, and the sinogram container with its JSON angle sidecar.
//!
//! IMG2D layout (little-endian, 24-byte header):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "I2DF"
//! 4       4     u32 width
//! 8       4     u32 height
//! 12      4     u32 channels
//! 16      1     u8 domain tag (0 raw, 1 signed_unit)
//! 17      3     zero padding
//! 20      4     f32 spacing_mm
//! 24      ...   f32 samples, channel-planar, row-major
//! ```
//!
//! Samples are stored as `f32`; reading a written file reproduces the
//! stored samples bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DomainTag, Image2D, MaskFeatureMap};
use crate::tomo::Sinogram;

const IMG2D_MAGIC: &[u8; 4] = b"I2DF";
const IMG2D_HEADER_LEN: usize = 24;
/// Upper bound on `w * h * c` accepted from disk, to keep a corrupt header
/// from driving a huge allocation.
const MAX_SAMPLES: usize = 1 << 28;

/// Serializes an image to the IMG2D container.
///
/// Samples are narrowed to `f32`; values whose magnitude exceeds the `f32`
/// range are rejected rather than silently turned infinite.
pub fn write_image(img: &Image2D, path: &Path) -> Result<()> {
    let n = img.data().len();
    let mut bytes = Vec::with_capacity(IMG2D_HEADER_LEN + 4 * n);
    bytes.extend_from_slice(IMG2D_MAGIC);
    bytes.extend_from_slice(&u32_checked(img.width(), path)?.to_le_bytes());
    bytes.extend_from_slice(&u32_checked(img.height(), path)?.to_le_bytes());
    bytes.extend_from_slice(&u32_checked(img.channels(), path)?.to_le_bytes());
    bytes.push(img.domain().to_byte());
    bytes.extend_from_slice(&[0u8; 3]);
    bytes.extend_from_slice(&(img.spacing_mm() as f32).to_le_bytes());
    for &v in img.data() {
        let s = v as f32;
        if !s.is_finite() {
            return Err(Error::NonFinite(format!(
                "sample {v} does not fit the f32 container"
            )));
        }
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses an IMG2D file, validating the header, payload length, sample
/// finiteness and the signed-unit range when the tag demands it.
pub fn read_image(path: &Path) -> Result<Image2D> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < IMG2D_HEADER_LEN {
        return Err(Error::format(path, "file shorter than the 24-byte header"));
    }
    if &bytes[0..4] != IMG2D_MAGIC {
        return Err(Error::format(path, "bad magic, expected \"I2DF\""));
    }
    let width = read_u32(&bytes, 4) as usize;
    let height = read_u32(&bytes, 8) as usize;
    let channels = read_u32(&bytes, 12) as usize;
    let domain = DomainTag::from_byte(bytes[16])
        .ok_or_else(|| Error::format(path, format!("unknown domain tag {}", bytes[16])))?;
    if bytes[17..20] != [0, 0, 0] {
        return Err(Error::format(path, "nonzero header padding"));
    }
    let spacing = f32::from_le_bytes(bytes[20..24].try_into().unwrap());
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::format(path, format!("bad spacing {spacing}")));
    }
    if width == 0 || height == 0 || channels == 0 {
        return Err(Error::format(
            path,
            format!("zero dimension in header {width}x{height}x{channels}"),
        ));
    }
    let n = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .filter(|&n| n <= MAX_SAMPLES)
        .ok_or_else(|| {
            Error::format(
                path,
                format!("header dimensions {width}x{height}x{channels} too large"),
            )
        })?;
    let expected = IMG2D_HEADER_LEN + 4 * n;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("payload length {} != expected {}", bytes.len(), expected),
        ));
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let off = IMG2D_HEADER_LEN + 4 * i;
        let s = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if !s.is_finite() {
            return Err(Error::format(path, format!("non-finite sample {i}")));
        }
        data.push(f64::from(s));
    }
    Image2D::new(width, height, channels, f64::from(spacing), domain, data)
        .map_err(|e| Error::format(path, e.to_string()))
}

fn u32_checked(v: usize, path: &Path) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format(path, format!("dimension {v} exceeds u32")))
}

fn read_u32(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
}

/// Writes a mask as binary PGM (P5), maxval 255, foreground as 255.
pub fn write_mask(mask: &MaskFeatureMap, path: &Path) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    bytes.extend(mask.data().iter().map(|&b| if b != 0 { 255u8 } else { 0u8 }));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a binary PGM (P5) mask. Any maxval up to 255 is accepted and
/// nonzero samples count as foreground.
pub fn read_mask(path: &Path) -> Result<MaskFeatureMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = 0usize;
    let magic = next_token(&bytes, &mut cursor)
        .ok_or_else(|| Error::format(path, "missing PGM magic"))?;
    if magic != b"P5" {
        return Err(Error::format(path, "expected binary PGM magic \"P5\""));
    }
    let width = parse_dim(&bytes, &mut cursor, path, "width")?;
    let height = parse_dim(&bytes, &mut cursor, path, "height")?;
    let maxval = parse_dim(&bytes, &mut cursor, path, "maxval")?;
    if !(1..=255).contains(&maxval) {
        return Err(Error::format(
            path,
            format!("mask maxval must be in 1..=255, got {maxval}"),
        ));
    }
    // Exactly one whitespace byte separates the header from the samples.
    cursor += 1;
    let n = width
        .checked_mul(height)
        .filter(|&n| n <= MAX_SAMPLES)
        .ok_or_else(|| Error::format(path, "mask dimensions too large"))?;
    if bytes.len() != cursor + n {
        return Err(Error::format(
            path,
            format!("payload length {} != expected {}", bytes.len() - cursor.min(bytes.len()), n),
        ));
    }
    let data = bytes[cursor..].iter().map(|&b| u8::from(b != 0)).collect();
    MaskFeatureMap::new(width, height, data).map_err(|e| Error::format(path, e.to_string()))
}

fn parse_dim(bytes: &[u8], cursor: &mut usize, path: &Path, what: &str) -> Result<usize> {
    let tok = next_token(bytes, cursor)
        .ok_or_else(|| Error::format(path, format!("missing PGM {what}")))?;
    let s = std::str::from_utf8(tok)
        .map_err(|_| Error::format(path, format!("non-ASCII PGM {what}")))?;
    let v: usize = s
        .parse()
        .map_err(|_| Error::format(path, format!("bad PGM {what} {s:?}")))?;
    if v == 0 {
        return Err(Error::format(path, format!("PGM {what} must be positive")));
    }
    Ok(v)
}

/// Returns the next whitespace-delimited header token, skipping `#` comments.
/// Leaves the cursor on the whitespace byte that terminated the token.
fn next_token<'a>(bytes: &'a [u8], cursor: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    (*cursor > start).then(|| &bytes[start..*cursor])
}

/// Writes a single-channel image as a 16-bit binary PGM preview, mapping
/// `[lo, hi]` linearly onto `[0, 65535]` (clamped). Samples are big-endian
/// as PGM requires.
pub fn write_image_pgm16(img: &Image2D, lo: f64, hi: f64, path: &Path) -> Result<()> {
    img.expect_single_channel("write_image_pgm16")?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Domain(format!(
            "preview window is empty: lo {lo} >= hi {hi}"
        )));
    }
    let scale = 65535.0 / (hi - lo);
    let mut bytes = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for &v in img.plane(0) {
        let q = (((v - lo) * scale).round()).clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Preview with an automatic window: `[-1, 1]` for signed-unit images, the
/// data range otherwise (constant raw images come out black).
pub fn write_image_preview(img: &Image2D, path: &Path) -> Result<()> {
    let (lo, hi) = match img.domain() {
        DomainTag::SignedUnit => (-1.0, 1.0),
        DomainTag::Raw => {
            let lo = img.plane(0).iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = img.plane(0).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (lo, hi)
            } else {
                (lo, lo + 1.0)
            }
        }
    };
    write_image_pgm16(img, lo, hi, path)
}

/// Angle metadata stored next to a sinogram payload.
#[derive(Debug, Serialize, Deserialize)]
struct SinogramSidecar {
    n_views: usize,
    n_detectors: usize,
    detector_spacing_mm: f64,
    angular_range_rad: f64,
    angles_rad: Vec<f64>,
}

/// Path of the JSON sidecar for a sinogram payload path
/// (`sino.i2d` maps to `sino.angles.json`).
pub fn sinogram_sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("angles.json")
}

/// Writes a sinogram as an IMG2D payload (one row per view, raw domain,
/// detector spacing as the pixel spacing) plus a JSON sidecar holding the
/// per-view angles.
pub fn write_sinogram(sino: &Sinogram, path: &Path) -> Result<()> {
    let img = Image2D::new(
        sino.n_detectors(),
        sino.n_views(),
        1,
        sino.detector_spacing_mm(),
        DomainTag::Raw,
        sino.data().to_vec(),
    )?;
    write_image(&img, path)?;
    let sidecar = SinogramSidecar {
        n_views: sino.n_views(),
        n_detectors: sino.n_detectors(),
        detector_spacing_mm: sino.detector_spacing_mm(),
        angular_range_rad: sino.angular_range_rad(),
        angles_rad: sino.angles_rad().to_vec(),
    };
    let sidecar_path = sinogram_sidecar_path(path);
    let mut text = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::format(&sidecar_path, e.to_string()))?;
    text.push('\n');
    fs::write(&sidecar_path, text).map_err(|e| Error::io(&sidecar_path, e))
}

/// Reads a sinogram payload and its angle sidecar, cross-checking the two.
pub fn read_sinogram(path: &Path) -> Result<Sinogram> {
    let img = read_image(path)?;
    let sidecar_path = sinogram_sidecar_path(path);
    let text = fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let sidecar: SinogramSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::format(&sidecar_path, e.to_string()))?;
    if sidecar.n_views != img.height() || sidecar.n_detectors != img.width() {
        return Err(Error::format(
            &sidecar_path,
            format!(
                "sidecar {}x{} disagrees with payload {}x{}",
                sidecar.n_views,
                sidecar.n_detectors,
                img.height(),
                img.width()
            ),
        ));
    }
    Sinogram::new(
        sidecar.n_views,
        sidecar.n_detectors,
        sidecar.angles_rad,
        sidecar.detector_spacing_mm,
        sidecar.angular_range_rad,
        img.into_data(),
    )
    .map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn f32_grid(values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| f64::from(v as f32)).collect()
    }

    #[test]
    fn img2d_header_bytes_are_pinned() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("tiny.i2d");
        let img = Image2D::new(2, 1, 1, 1.0, DomainTag::SignedUnit, vec![-1.0, 0.5]).unwrap();
        write_image(&img, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"I2DF");
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-1.0f32).to_le_bytes());
        expected.extend_from_slice(&0.5f32.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn img2d_round_trip_is_bit_exact_on_f32_grid() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("rt.i2d");
        let data = f32_grid(&[0.125, -3.5e7, 1.0e-12, 42.0, -0.0, 7.25]);
        let img = Image2D::new(3, 2, 1, 0.5, DomainTag::Raw, data.clone()).unwrap();
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.data(), &data[..]);
        assert_eq!(back.width(), 3);
        assert_eq!(back.height(), 2);
        assert_eq!(back.domain(), DomainTag::Raw);
        assert_eq!(back.spacing_mm(), 0.5);

        // A second write of what was just read reproduces identical bytes.
        let path2 = dir.path().join("rt2.i2d");
        write_image(&back, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn img2d_rejects_malformed_files() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bad.i2d");
        let img = Image2D::new(2, 2, 1, 1.0, DomainTag::Raw, vec![0.0; 4]).unwrap();
        write_image(&img, &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(read_image(&path), Err(Error::Format { .. })));

        let truncated = &good[..good.len() - 1];
        fs::write(&path, truncated).unwrap();
        assert!(matches!(read_image(&path), Err(Error::Format { .. })));

        let mut trailing = good.clone();
        trailing.push(0);
        fs::write(&path, &trailing).unwrap();
        assert!(matches!(read_image(&path), Err(Error::Format { .. })));

        let mut bad_pad = good.clone();
        bad_pad[18] = 7;
        fs::write(&path, &bad_pad).unwrap();
        assert!(matches!(read_image(&path), Err(Error::Format { .. })));

        let mut bad_tag = good.clone();
        bad_tag[16] = 9;
        fs::write(&path, &bad_tag).unwrap();
        assert!(matches!(read_image(&path), Err(Error::Format { .. })));

        let mut nan_payload = good.clone();
        nan_payload[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, &nan_payload).unwrap();
        assert!(matches!(read_image(&path), Err(Error::Format { .. })));

        // signed_unit tag with an out-of-range sample
        let mut out_of_range = good.clone();
        out_of_range[16] = 1;
        out_of_range[24..28].copy_from_slice(&2.0f32.to_le_bytes());
        fs::write(&path, &out_of_range).unwrap();
        assert!(matches!(read_image(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn write_rejects_values_outside_f32_range() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("big.i2d");
        let img = Image2D::new(1, 1, 1, 1.0, DomainTag::Raw, vec![1.0e39]).unwrap();
        assert!(matches!(write_image(&img, &path), Err(Error::NonFinite(_))));
    }

    #[test]
    fn pgm_mask_round_trip_and_header() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.pgm");
        let mask = MaskFeatureMap::new(3, 2, vec![1, 0, 1, 0, 1, 0]).unwrap();
        write_mask(&mask, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(&bytes[11..], &[255, 0, 255, 0, 255, 0]);
        let back = read_mask(&path).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn pgm_mask_accepts_comments_and_any_nonzero() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("c.pgm");
        fs::write(&path, b"P5 # comment\n# another\n2 2\n7\n\x00\x03\x07\x00").unwrap();
        let mask = read_mask(&path).unwrap();
        assert_eq!(mask.data(), &[0, 1, 1, 0]);
    }

    #[test]
    fn pgm_mask_rejects_wide_maxval_and_bad_magic() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("w.pgm");
        fs::write(&path, b"P5\n1 1\n65535\n\x00\x00").unwrap();
        assert!(matches!(read_mask(&path), Err(Error::Format { .. })));
        fs::write(&path, b"P2\n1 1\n255\n0").unwrap();
        assert!(matches!(read_mask(&path), Err(Error::Format { .. })));
        fs::write(&path, b"P5\n2 2\n255\n\x00\x00\x00").unwrap();
        assert!(matches!(read_mask(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn preview_uses_big_endian_16bit_samples() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("v.pgm");
        let img = Image2D::new(2, 1, 1, 1.0, DomainTag::SignedUnit, vec![-1.0, 1.0]).unwrap();
        write_image_pgm16(&img, -1.0, 1.0, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..13], b"P5\n2 1\n65535\n");
        assert_eq!(&bytes[13..], &[0x00, 0x00, 0xFF, 0xFF]);
    }

    #[test]
    fn sinogram_round_trip_with_sidecar() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("sino.i2d");
        let angles = vec![0.0, 1.0, 2.0];
        let data = f32_grid(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let sino = Sinogram::new(3, 2, angles.clone(), 1.5, 3.0, data.clone()).unwrap();
        write_sinogram(&sino, &path).unwrap();
        assert!(sinogram_sidecar_path(&path).ends_with("sino.angles.json"));
        let back = read_sinogram(&path).unwrap();
        assert_eq!(back.data(), &data[..]);
        assert_eq!(back.angles_rad(), &angles[..]);
        assert_eq!(back.detector_spacing_mm(), 1.5);
        assert_eq!(back.angular_range_rad(), 3.0);
    }
}
