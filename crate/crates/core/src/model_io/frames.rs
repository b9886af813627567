//! Binary PPM (P6, maxval 255) frames.

use std::fs;
use std::path::{Path, PathBuf};

use super::FormatError;
use crate::tensor::Tensor4;
use crate::{Error, Result};

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.ppm")
}

/// clamp01 then round half away from zero, so 0.5 maps to 128.
pub fn to_byte(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

pub fn from_byte(b: u8) -> f32 {
    b as f32 / 255.0
}

/// Snaps every value to the nearest 8-bit level, as a write/read round trip
/// would.
pub fn quantize_8bit(t: &Tensor4<f32>) -> Tensor4<f32> {
    t.map(|v| from_byte(to_byte(v)))
}

pub fn encode_ppm(frame: &Tensor4<f32>) -> Result<Vec<u8>, FormatError> {
    let s = frame.shape();
    if s.b != 1 || s.c != 3 {
        return Err(FormatError::FrameShape(s));
    }
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    out.reserve(s.h * s.w * 3);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                out.push(to_byte(frame.at(0, c, y, x)));
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize, String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("expected a number at byte {start}"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|e| format!("{e}"))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor4<f32>, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err("not a binary PPM (missing P6 magic)".into());
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let w = cur.number()?;
    let h = cur.number()?;
    let maxval = cur.number()?;
    if maxval != 255 {
        return Err(format!("maxval {maxval} is not supported (255 only)"));
    }
    if w == 0 || h == 0 {
        return Err("empty image".into());
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing separator after maxval".into());
    }
    let raster = &bytes[cur.pos + 1..];
    if raster.len() != w * h * 3 {
        return Err(format!("raster has {} bytes, expected {}", raster.len(), w * h * 3));
    }
    Ok(Tensor4::from_fn([1, 3, h, w], |_, c, y, x| from_byte(raster[(y * w + x) * 3 + c])))
}

pub fn write_frame(path: &Path, frame: &Tensor4<f32>) -> Result<()> {
    let bytes = encode_ppm(frame)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_frame(path: &Path) -> Result<Tensor4<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|reason| {
        FormatError::Frame {
            index: None,
            reason: format!("{}: {reason}", path.display()),
        }
        .into()
    })
}

/// Writes `frame_000000.ppm`, `frame_000001.ppm`, ... into `dir`.
pub fn write_frames(dir: &Path, frames: &[Tensor4<f32>]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(frame_file_name(i));
            write_frame(&path, f)?;
            Ok(path)
        })
        .collect()
}

/// Frame files in `dir`, in index order. Indices must run 0, 1, 2, ...
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut indexed = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(idx) = name.strip_prefix("frame_").and_then(|n| n.strip_suffix(".ppm")) {
            let idx: usize = idx.parse().map_err(|_| FormatError::Frame {
                index: None,
                reason: format!("bad frame file name {name}"),
            })?;
            indexed.push((idx, path));
        }
    }
    indexed.sort();
    for (expected, (idx, _)) in indexed.iter().enumerate() {
        if *idx != expected {
            return Err(FormatError::Frame {
                index: Some(expected),
                reason: "frame indices are not contiguous from 0".into(),
            }
            .into());
        }
    }
    Ok(indexed.into_iter().map(|(_, p)| p).collect())
}

pub fn read_frames(dir: &Path) -> Result<Vec<Tensor4<f32>>> {
    let paths = frame_paths(dir)?;
    if paths.is_empty() {
        return Err(FormatError::Frame {
            index: None,
            reason: format!("no frames in {}", dir.display()),
        }
        .into());
    }
    let mut frames: Vec<Tensor4<f32>> = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let frame = decode_ppm(&bytes).map_err(|reason| FormatError::Frame {
            index: Some(i),
            reason,
        })?;
        if let Some(first) = frames.first() {
            if first.shape() != frame.shape() {
                return Err(FormatError::Frame {
                    index: Some(i),
                    reason: format!("dims {} differ from frame 0 ({})", frame.shape(), first.shape()),
                }
                .into());
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}
