//! Binary grid formats: Middlebury `.flo` for flow, grayscale PFM for scalar
//! maps and 8-bit PGM for masks.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::flow::{FlowField, FlowKind};
use crate::grid::{Grid, Mask};

const FLO_MAGIC: &[u8; 4] = b"PIEH";
/// Middlebury convention: components above this magnitude mean "unknown".
const FLO_UNKNOWN_THRESH: f32 = 1e9;
const FLO_UNKNOWN: f32 = 1e10;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (w, h) = (flow.width(), flow.height());
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (u, v, f) in flow.vectors.indexed() {
        let (a, b) = if *flow.valid.get(u, v) {
            (f.x as f32, f.y as f32)
        } else {
            (FLO_UNKNOWN, FLO_UNKNOWN)
        };
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

/// Decodes a `.flo` buffer. Non-finite or "unknown" vectors become invalid.
pub fn decode_flo(bytes: &[u8], path: &Path, kind: FlowKind) -> Result<FlowField> {
    if bytes.len() < 12 || &bytes[..4] != FLO_MAGIC {
        return Err(Error::format(path, "not a .flo file (bad magic)"));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w <= 0 || h <= 0 {
        return Err(Error::format(path, format!("bad dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let body = &bytes[12..];
    if body.len() != 8 * w * h {
        return Err(Error::format(
            path,
            format!("expected {} data bytes, found {}", 8 * w * h, body.len()),
        ));
    }
    let f32_at = |i: usize| f32::from_le_bytes(body[4 * i..4 * i + 4].try_into().unwrap());
    let mut vectors = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let (a, b) = (f32_at(2 * i), f32_at(2 * i + 1));
        let ok = a.is_finite()
            && b.is_finite()
            && a.abs() < FLO_UNKNOWN_THRESH
            && b.abs() < FLO_UNKNOWN_THRESH;
        vectors.push(if ok {
            Vector2::new(a as f64, b as f64)
        } else {
            Vector2::zeros()
        });
        valid.push(ok);
    }
    FlowField::new(Grid::from_vec(w, h, vectors)?, Grid::from_vec(w, h, valid)?, kind)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    write_bytes(path, &encode_flo(flow))
}

pub fn read_flo(path: &Path, kind: FlowKind) -> Result<FlowField> {
    decode_flo(&read_bytes(path)?, path, kind)
}

/// Grayscale little-endian PFM. Rows are stored bottom-to-top, as the
/// format prescribes.
pub fn encode_pfm(grid: &Grid<f64>) -> Vec<u8> {
    let (w, h) = (grid.width(), grid.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for v in (0..h).rev() {
        for u in 0..w {
            out.extend_from_slice(&(*grid.get(u, v) as f32).to_le_bytes());
        }
    }
    out
}

/// Splits off `count` whitespace-separated header tokens, returning them and
/// the byte offset just past the single whitespace byte that ends the last.
fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        // PGM allows comments between header fields.
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    (i < bytes.len()).then_some((tokens, i + 1))
}

fn parse_dims(path: &Path, w: &str, h: &str) -> Result<(usize, usize)> {
    match (w.parse::<usize>(), h.parse::<usize>()) {
        (Ok(w), Ok(h)) if w > 0 && h > 0 => Ok((w, h)),
        _ => Err(Error::format(path, format!("bad dimensions '{w} {h}'"))),
    }
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Grid<f64>> {
    let (tokens, offset) =
        header_tokens(bytes, 4).ok_or_else(|| Error::format(path, "truncated PFM header"))?;
    if tokens[0] != "Pf" {
        return Err(Error::format(
            path,
            format!("expected grayscale PFM 'Pf', found '{}'", tokens[0]),
        ));
    }
    let (w, h) = parse_dims(path, &tokens[1], &tokens[2])?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::format(path, format!("bad scale '{}'", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, "PFM scale must be non-zero"));
    }
    let little = scale < 0.0;
    let body = &bytes[offset..];
    if body.len() != 4 * w * h {
        return Err(Error::format(
            path,
            format!("expected {} data bytes, found {}", 4 * w * h, body.len()),
        ));
    }
    let mut data = vec![0.0; w * h];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().unwrap();
        let x = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (row_from_bottom, u) = (i / w, i % w);
        data[(h - 1 - row_from_bottom) * w + u] = x as f64;
    }
    Grid::from_vec(w, h, data)
}

pub fn write_pfm(path: &Path, grid: &Grid<f64>) -> Result<()> {
    write_bytes(path, &encode_pfm(grid))
}

pub fn read_pfm(path: &Path) -> Result<Grid<f64>> {
    decode_pfm(&read_bytes(path)?, path)
}

/// Binary PGM (P5), 255 for valid pixels and 0 otherwise.
pub fn encode_pgm_mask(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.as_slice().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Any non-zero byte counts as valid.
pub fn decode_pgm_mask(bytes: &[u8], path: &Path) -> Result<Mask> {
    let (tokens, offset) =
        header_tokens(bytes, 4).ok_or_else(|| Error::format(path, "truncated PGM header"))?;
    if tokens[0] != "P5" {
        return Err(Error::format(path, format!("expected 'P5', found '{}'", tokens[0])));
    }
    let (w, h) = parse_dims(path, &tokens[1], &tokens[2])?;
    if tokens[3] != "255" {
        return Err(Error::format(path, "only 8-bit PGM masks are supported"));
    }
    let body = &bytes[offset..];
    if body.len() != w * h {
        return Err(Error::format(
            path,
            format!("expected {} data bytes, found {}", w * h, body.len()),
        ));
    }
    Grid::from_vec(w, h, body.iter().map(|&b| b != 0).collect())
}

pub fn write_pgm_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_bytes(path, &encode_pgm_mask(mask))
}

pub fn read_pgm_mask(path: &Path) -> Result<Mask> {
    decode_pgm_mask(&read_bytes(path)?, path)
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
