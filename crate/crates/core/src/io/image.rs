//! Image files.
//!
//! Count images are 16-bit binary PGM (`P5`, maxval 65535, big-endian
//! samples) with a TOML sidecar next to them carrying bin geometry and
//! metadata. Real-valued images are `EPGR` files: magic, version, `nx`,
//! `ny` as u64, then `f64` little-endian values, also with a sidecar. Masks
//! are PBM (`P4`, 1 = blocked) with a sidecar giving pitch and origin.
//!
//! Netpbm rows run top to bottom, so row 0 of the file is the highest `y`
//! (or `v`) row of the image.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_toml, write_toml, IoError, Provenance};
use crate::coincidence::CoincidenceWindow;
use crate::optics::Mask;
use crate::reconstruction::{Binning, GhostImage, ImageMeta, RealImage};

/// Sidecar path: the image path with its extension replaced by `toml`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("toml")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageSidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    origin_x_um: f64,
    origin_y_um: f64,
    bin_um: f64,
    nx: usize,
    ny: usize,
    duration_ps: u64,
    n_counted: u64,
    n_outside: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window_offset_ps: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window_half_width_ps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    accidentals_subtracted: Option<f64>,
}

impl ImageSidecar {
    fn new(b: &Binning, m: &ImageMeta, prov: Option<&Provenance>) -> Self {
        Self {
            seed: prov.map(|p| p.seed),
            config_hash: prov.map(|p| p.config_hash.clone()),
            origin_x_um: b.origin_um[0],
            origin_y_um: b.origin_um[1],
            bin_um: b.bin_um,
            nx: b.nx,
            ny: b.ny,
            duration_ps: m.duration_ps,
            n_counted: m.n_counted,
            n_outside: m.n_outside,
            window_offset_ps: m.window.map(|w| w.offset_ps),
            window_half_width_ps: m.window.map(|w| w.half_width_ps),
            accidentals_subtracted: m.accidentals_subtracted,
        }
    }

    fn binning(&self) -> Result<Binning, IoError> {
        if !(self.bin_um > 0.0 && self.bin_um.is_finite()) || self.nx == 0 || self.ny == 0 {
            return Err(IoError::malformed("image sidecar", "bad bin geometry".into()));
        }
        Ok(Binning {
            origin_um: [self.origin_x_um, self.origin_y_um],
            bin_um: self.bin_um,
            nx: self.nx,
            ny: self.ny,
        })
    }

    fn meta(&self) -> Result<ImageMeta, IoError> {
        let window = match (self.window_offset_ps, self.window_half_width_ps) {
            (Some(o), Some(w)) => Some(CoincidenceWindow::new(o, w)),
            (None, None) => None,
            _ => return Err(IoError::malformed("image sidecar", "half a coincidence window".into())),
        };
        Ok(ImageMeta {
            duration_ps: self.duration_ps,
            n_counted: self.n_counted,
            n_outside: self.n_outside,
            window,
            accidentals_subtracted: self.accidentals_subtracted,
        })
    }

    fn provenance(&self) -> Option<Provenance> {
        Some(Provenance {
            seed: self.seed?,
            config_hash: self.config_hash.clone()?,
        })
    }
}

/// Netpbm header: magic, optional comment lines, then the numeric fields.
fn netpbm_header(magic: &str, fields: &[usize], comments: &[String]) -> Vec<u8> {
    let mut h = format!("{magic}\n");
    for c in comments {
        h.push_str(&format!("# {c}\n"));
    }
    let f: Vec<String> = fields.iter().map(usize::to_string).collect();
    h.push_str(&f[..2].join(" "));
    h.push('\n');
    for v in &f[2..] {
        h.push_str(v);
        h.push('\n');
    }
    h.into_bytes()
}

/// Parses `n` whitespace-separated header integers after `magic`, skipping
/// comments. Returns the fields and the offset of the raster.
fn parse_netpbm(bytes: &[u8], magic: &[u8; 2], n: usize) -> Result<(Vec<usize>, usize), IoError> {
    const WHAT: &str = "netpbm";
    if bytes.len() < 2 || &bytes[..2] != magic {
        let mut found = [0u8; 4];
        let k = bytes.len().min(2);
        found[..k].copy_from_slice(&bytes[..k]);
        return Err(IoError::BadMagic(found));
    }
    let mut pos = 2;
    let mut fields = Vec::with_capacity(n);
    while fields.len() < n {
        match bytes.get(pos) {
            None => return Err(IoError::TruncatedHeader),
            Some(b'#') => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => pos += 1,
            Some(c) if c.is_ascii_digit() => {
                let start = pos;
                while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                    pos += 1;
                }
                let s = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
                fields.push(s.parse().map_err(|_| IoError::malformed(WHAT, format!("field {s}")))?);
            }
            Some(c) => return Err(IoError::malformed(WHAT, format!("unexpected byte {c:#04x}"))),
        }
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => Ok((fields, pos + 1)),
        _ => Err(IoError::TruncatedHeader),
    }
}

fn provenance_comments(prov: Option<&Provenance>) -> Vec<String> {
    prov.map(|p| vec![format!("seed = {}", p.seed), format!("config_hash = {}", p.config_hash)])
        .unwrap_or_default()
}

/// 16-bit PGM of `values` (row-major, row 0 lowest) flipped to top-down.
pub fn encode_pgm16(nx: usize, ny: usize, values: &[u16], prov: Option<&Provenance>) -> Vec<u8> {
    let mut out = netpbm_header("P5", &[nx, ny, 65535], &provenance_comments(prov));
    for j in (0..ny).rev() {
        for v in &values[j * nx..(j + 1) * nx] {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

/// Inverse of [`encode_pgm16`]: `(nx, ny, values)` with row 0 lowest.
pub fn decode_pgm16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), IoError> {
    let (f, start) = parse_netpbm(bytes, b"P5", 3)?;
    let (nx, ny, maxval) = (f[0], f[1], f[2]);
    if maxval != 65535 {
        return Err(IoError::malformed("pgm", format!("maxval {maxval}, expected 65535")));
    }
    let body = &bytes[start..];
    let n = nx * ny;
    if body.len() != 2 * n {
        return Err(if body.len() < 2 * n {
            IoError::TruncatedRecord { index: (body.len() / 2) as u64 }
        } else {
            IoError::CountMismatch { declared: n as u64, found: (body.len() / 2) as u64 }
        });
    }
    let mut values = vec![0u16; n];
    for (row, chunk) in body.chunks_exact(2 * nx.max(1)).enumerate().take(ny) {
        let j = ny - 1 - row;
        for (i, b) in chunk.chunks_exact(2).enumerate() {
            values[j * nx + i] = u16::from_be_bytes([b[0], b[1]]);
        }
    }
    Ok((nx, ny, values))
}

/// Count image as PGM plus sidecar. Fails if any bin exceeds 65535.
pub fn write_ghost(path: &Path, img: &GhostImage, prov: Option<&Provenance>) -> Result<(), IoError> {
    let values = img
        .counts
        .iter()
        .map(|&c| u16::try_from(c).map_err(|_| IoError::Overflow(c)))
        .collect::<Result<Vec<u16>, _>>()?;
    std::fs::write(path, encode_pgm16(img.binning.nx, img.binning.ny, &values, prov))?;
    write_toml(&sidecar_path(path), &ImageSidecar::new(&img.binning, &img.meta, prov))
}

pub fn read_ghost(path: &Path) -> Result<(GhostImage, Option<Provenance>), IoError> {
    let side: ImageSidecar = read_toml(&sidecar_path(path), "image sidecar")?;
    let binning = side.binning()?;
    let (nx, ny, values) = decode_pgm16(&std::fs::read(path)?)?;
    if (nx, ny) != (binning.nx, binning.ny) {
        return Err(IoError::malformed("pgm", "size disagrees with sidecar".into()));
    }
    let img = GhostImage {
        binning,
        counts: values.into_iter().map(u64::from).collect(),
        meta: side.meta()?,
    };
    Ok((img, side.provenance()))
}

/// Display rendering of a real image: linear map of `[0, max]` onto the
/// 16-bit range, negatives clamped to 0.
pub fn render_pgm(img: &RealImage, prov: Option<&Provenance>) -> Vec<u8> {
    let max = img.values.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    let values: Vec<u16> = img
        .values
        .iter()
        .map(|v| (v.max(0.0) * scale).round().min(65535.0) as u16)
        .collect();
    encode_pgm16(img.binning.nx, img.binning.ny, &values, prov)
}

pub const REAL_MAGIC: [u8; 4] = *b"EPGR";

pub fn encode_real(img: &RealImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(22 + 8 * img.values.len());
    out.extend_from_slice(&REAL_MAGIC);
    out.extend_from_slice(&super::binary::FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(img.binning.nx as u64).to_le_bytes());
    out.extend_from_slice(&(img.binning.ny as u64).to_le_bytes());
    for v in &img.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_real_values(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>), IoError> {
    if bytes.len() < 4 || bytes[..4] != REAL_MAGIC {
        let mut found = [0u8; 4];
        let k = bytes.len().min(4);
        found[..k].copy_from_slice(&bytes[..k]);
        return Err(IoError::BadMagic(found));
    }
    if bytes.len() < 22 {
        return Err(IoError::TruncatedHeader);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != super::binary::FORMAT_VERSION {
        return Err(IoError::VersionUnsupported(version));
    }
    let nx = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
    let ny = u64::from_le_bytes(bytes[14..22].try_into().expect("8 bytes")) as usize;
    let body = &bytes[22..];
    let n = nx.checked_mul(ny).ok_or(IoError::malformed("real image", "size overflow".into()))?;
    if body.len() != 8 * n {
        return Err(if body.len() < 8 * n {
            IoError::TruncatedRecord { index: (body.len() / 8) as u64 }
        } else {
            IoError::CountMismatch { declared: n as u64, found: (body.len() / 8) as u64 }
        });
    }
    let values = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    Ok((nx, ny, values))
}

pub fn write_real(path: &Path, img: &RealImage, prov: Option<&Provenance>) -> Result<(), IoError> {
    std::fs::write(path, encode_real(img))?;
    write_toml(&sidecar_path(path), &ImageSidecar::new(&img.binning, &img.meta, prov))
}

pub fn read_real(path: &Path) -> Result<(RealImage, Option<Provenance>), IoError> {
    let side: ImageSidecar = read_toml(&sidecar_path(path), "image sidecar")?;
    let binning = side.binning()?;
    let (nx, ny, values) = decode_real_values(&std::fs::read(path)?)?;
    if (nx, ny) != (binning.nx, binning.ny) {
        return Err(IoError::malformed("real image", "size disagrees with sidecar".into()));
    }
    Ok((
        RealImage {
            binning,
            values,
            meta: side.meta()?,
        },
        side.provenance(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskSidecar {
    name: String,
    pixel_pitch_um: f64,
    origin_u_um: f64,
    origin_v_um: f64,
}

/// Packed PBM raster, row 0 of the file being the highest `v`.
pub fn encode_pbm(width: usize, height: usize, blocked: impl Fn(usize, usize) -> bool) -> Vec<u8> {
    let mut out = netpbm_header("P4", &[width, height], &[]);
    let row_bytes = width.div_ceil(8);
    for j in (0..height).rev() {
        let mut row = vec![0u8; row_bytes];
        for i in 0..width {
            if blocked(i, j) {
                row[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    out
}

/// `(width, height, blocked)` with row 0 lowest.
pub fn decode_pbm(bytes: &[u8]) -> Result<(usize, usize, Vec<bool>), IoError> {
    let (f, start) = parse_netpbm(bytes, b"P4", 2)?;
    let (w, h) = (f[0], f[1]);
    let row_bytes = w.div_ceil(8);
    let body = &bytes[start..];
    if body.len() != row_bytes * h {
        return Err(if body.len() < row_bytes * h {
            IoError::TruncatedRecord { index: (body.len() / row_bytes.max(1)) as u64 }
        } else {
            IoError::CountMismatch { declared: h as u64, found: (body.len() / row_bytes.max(1)) as u64 }
        });
    }
    let mut blocked = vec![false; w * h];
    for (row, chunk) in body.chunks_exact(row_bytes.max(1)).enumerate().take(h) {
        let j = h - 1 - row;
        for i in 0..w {
            blocked[j * w + i] = chunk[i / 8] & (0x80 >> (i % 8)) != 0;
        }
    }
    Ok((w, h, blocked))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<(), IoError> {
    let pbm = encode_pbm(mask.width(), mask.height(), |i, j| !mask.is_open(i, j));
    std::fs::write(path, pbm)?;
    let o = mask.origin_um();
    write_toml(
        &sidecar_path(path),
        &MaskSidecar {
            name: mask.name().to_string(),
            pixel_pitch_um: mask.pitch_um(),
            origin_u_um: o[0],
            origin_v_um: o[1],
        },
    )
}

pub fn read_mask(path: &Path) -> Result<Mask, IoError> {
    let side: MaskSidecar = read_toml(&sidecar_path(path), "mask sidecar")?;
    let (w, h, blocked) = decode_pbm(&std::fs::read(path)?)?;
    let open = blocked.into_iter().map(|b| !b).collect();
    Mask::new(side.name, w, h, open, side.pixel_pitch_um, [side.origin_u_um, side.origin_v_um])
        .map_err(|e| IoError::malformed("mask", e.to_string()))
}

/// Binary image (for example a thresholded ghost image) as PBM, `true`
/// drawn black.
pub fn encode_binary_image(b: &Binning, bits: &[bool]) -> Vec<u8> {
    encode_pbm(b.nx, b.ny, |i, j| bits[j * b.nx + i])
}
