//! Binary persistence for complex matrices (transmission matrices, states)
//! and camera frame stacks.
//!
//! Matrix file: 8-byte magic `TPSHMAT1`, a little-endian `u32` header length,
//! a JSON header, then row-major little-endian `f64` pairs `(re, im)`.
//!
//! Frame file: 8-byte magic `TPSHFRM\0`, `u32` version, `u32` pixel count,
//! then one byte per pixel, frame after frame. Detector parameters, seed and
//! frame count live in a JSON sidecar next to it (`<name>.json`).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::correlations::{DetectorParams, FrameStack};
use crate::error::{Error, Result};
use crate::optics::SlmGeometry;
use crate::wavefront::{Basis, ReferenceScheme, TransmissionMatrix};

pub const MATRIX_MAGIC: &[u8; 8] = b"TPSHMAT1";
pub const FRAME_MAGIC: &[u8; 8] = b"TPSHFRM\0";
pub const FRAME_VERSION: u32 = 1;
pub const MATRIX_DTYPE: &str = "c128le";

/// Grid segmentation as stored in matrix headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub n_points: usize,
    pub aperture: usize,
    pub n_segments: usize,
}

impl Segmentation {
    pub fn of(geometry: &SlmGeometry) -> Self {
        Self {
            n_points: geometry.n_points(),
            aperture: geometry.aperture().len(),
            n_segments: geometry.n_segments(),
        }
    }

    pub fn geometry(&self) -> Result<SlmGeometry> {
        SlmGeometry::new(self.n_points, self.aperture, self.n_segments)
            .map_err(|e| Error::Format(format!("bad segmentation: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Basis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulated: Option<Vec<usize>>,
}

impl MatrixHeader {
    pub fn plain(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            dtype: MATRIX_DTYPE.into(),
            basis: None,
            seed: None,
            segmentation: None,
            phase_steps: None,
            reference: None,
            modulated: None,
        }
    }
}

/// Writes to a sibling temporary file, then renames over `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp: PathBuf = path.to_path_buf();
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("not a file path: {}", path.display())))?;
    tmp.set_file_name(format!(".{}.partial", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn encode_matrix(header: &MatrixHeader, matrix: &DMatrix<Complex64>) -> Result<Vec<u8>> {
    if header.rows != matrix.nrows() || header.cols != matrix.ncols() {
        return Err(Error::Format("header shape does not match matrix".into()));
    }
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 16 * matrix.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for r in 0..matrix.nrows() {
        for c in 0..matrix.ncols() {
            let z = matrix[(r, c)];
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<(MatrixHeader, DMatrix<Complex64>)> {
    if bytes.len() < 12 || &bytes[..8] != MATRIX_MAGIC {
        return Err(Error::Format("missing matrix magic".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = 12usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("truncated matrix header".into()))?;
    let header: MatrixHeader = serde_json::from_slice(&bytes[12..body])?;
    if header.dtype != MATRIX_DTYPE {
        return Err(Error::Format(format!("unsupported dtype {}", header.dtype)));
    }
    let expected = header
        .rows
        .checked_mul(header.cols)
        .and_then(|v| v.checked_mul(16))
        .ok_or_else(|| Error::Format("matrix dimensions overflow".into()))?;
    let payload = &bytes[body..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload holds {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let f = |k: usize| f64::from_le_bytes(payload[8 * k..8 * k + 8].try_into().expect("8 bytes"));
    let cols = header.cols;
    let matrix = DMatrix::from_fn(header.rows, cols, |r, c| {
        let k = 2 * (r * cols + c);
        Complex64::new(f(k), f(k + 1))
    });
    Ok((header, matrix))
}

pub fn save_matrix(path: &Path, header: &MatrixHeader, matrix: &DMatrix<Complex64>) -> Result<()> {
    write_atomic(path, &encode_matrix(header, matrix)?)
}

pub fn load_matrix(path: &Path) -> Result<(MatrixHeader, DMatrix<Complex64>)> {
    decode_matrix(&fs::read(path)?)
}

pub fn tm_header(tm: &TransmissionMatrix) -> MatrixHeader {
    MatrixHeader {
        basis: Some(tm.basis),
        seed: tm.seed,
        segmentation: Some(Segmentation::of(&tm.geometry)),
        phase_steps: Some(tm.phase_steps),
        reference: Some(tm.scheme),
        modulated: Some(tm.modulated.clone()),
        ..MatrixHeader::plain(tm.rows(), tm.cols())
    }
}

pub fn save_tm(path: &Path, tm: &TransmissionMatrix) -> Result<()> {
    save_matrix(path, &tm_header(tm), &tm.entries)
}

pub fn load_tm(path: &Path) -> Result<TransmissionMatrix> {
    let (h, entries) = load_matrix(path)?;
    let missing = |f: &str| Error::Format(format!("transmission matrix header lacks `{f}`"));
    let geometry = h.segmentation.ok_or_else(|| missing("segmentation"))?.geometry()?;
    let modulated = h.modulated.ok_or_else(|| missing("modulated"))?;
    if modulated.len() != h.cols || modulated.iter().any(|&s| s >= geometry.n_segments()) {
        return Err(Error::Format("modulated segment list inconsistent with matrix".into()));
    }
    Ok(TransmissionMatrix {
        entries,
        geometry,
        modulated,
        basis: h.basis.ok_or_else(|| missing("basis"))?,
        scheme: h.reference.ok_or_else(|| missing("reference"))?,
        phase_steps: h.phase_steps.ok_or_else(|| missing("phase_steps"))?,
        seed: h.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSidecar {
    pub version: u32,
    pub n_pixels: usize,
    pub n_frames: usize,
    pub seed: u64,
    pub detector: DetectorParams,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_frames(path: &Path, stack: &FrameStack) -> Result<()> {
    let mut out = Vec::with_capacity(16 + stack.frames.len());
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.extend_from_slice(&(stack.n_pixels as u32).to_le_bytes());
    out.extend_from_slice(&stack.frames);
    let sidecar = FrameSidecar {
        version: FRAME_VERSION,
        n_pixels: stack.n_pixels,
        n_frames: stack.n_frames,
        seed: stack.seed,
        detector: stack.detector,
    };
    write_atomic(path, &out)?;
    let mut json = serde_json::to_vec_pretty(&sidecar)?;
    json.push(b'\n');
    write_atomic(&sidecar_path(path), &json)
}

pub fn load_frames(path: &Path) -> Result<FrameStack> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != FRAME_MAGIC {
        return Err(Error::Format("missing frame magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FRAME_VERSION {
        return Err(Error::Format(format!("unsupported frame version {version}")));
    }
    let n_pixels = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let sidecar: FrameSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let payload = &bytes[16..];
    if n_pixels == 0
        || sidecar.n_pixels != n_pixels
        || payload.len() != n_pixels * sidecar.n_frames
    {
        return Err(Error::Format("frame payload inconsistent with header".into()));
    }
    Ok(FrameStack {
        n_pixels,
        n_frames: sidecar.n_frames,
        frames: payload.to_vec(),
        detector: sidecar.detector,
        seed: sidecar.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_roundtrip_bits() {
        let m = DMatrix::from_fn(3, 5, |r, c| Complex64::new(r as f64 / 3.0, -(c as f64).sqrt()));
        let bytes = encode_matrix(&MatrixHeader::plain(3, 5), &m).unwrap();
        let (h, back) = decode_matrix(&bytes).unwrap();
        assert_eq!(h.rows * h.cols * 16, bytes.len() - 12 - u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize);
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn truncated_or_bad_magic() {
        let m = DMatrix::from_element(2, 2, Complex64::new(1.0, 2.0));
        let bytes = encode_matrix(&MatrixHeader::plain(2, 2), &m).unwrap();
        for cut in [0, 5, 11, 14, bytes.len() - 1] {
            assert!(matches!(decode_matrix(&bytes[..cut]), Err(Error::Format(_))));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_matrix(&bad), Err(Error::Format(_))));
    }
}
