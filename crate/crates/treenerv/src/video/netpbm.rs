//! Binary netpbm I/O: P6 (RGB) and P5 (grayscale), 8-bit maxval 255 only.
//!
//! Frames are numbered files (`frame_000042.ppm`); the numeric part of the
//! stem orders them and must be contiguous. Pixels map to [0, 1] by division
//! with 255; saving rounds half away from zero, so a save/load round trip
//! moves a value by at most half a quantization step.

use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;

use super::{VideoError, VideoSequence};

fn io_err(path: &Path, source: std::io::Error) -> VideoError {
    VideoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad(path: &Path, detail: impl Into<String>) -> VideoError {
    VideoError::BadFile {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Number embedded in a file stem, e.g. "frame_0042" -> 42.
fn stem_number(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().filter(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        None
    } else {
        digits.parse().ok()
    }
}

struct PnmHeader {
    channels: usize,
    width: usize,
    height: usize,
    data_offset: usize,
}

/// Parse a P5/P6 header: magic, whitespace/comments, width, height, maxval,
/// then a single whitespace byte before the raster.
fn parse_header(path: &Path, bytes: &[u8]) -> Result<PnmHeader, VideoError> {
    if bytes.len() < 2 {
        return Err(bad(path, "file too short for a netpbm header"));
    }
    let channels = match &bytes[0..2] {
        b"P5" => 1,
        b"P6" => 3,
        magic => {
            return Err(bad(
                path,
                format!("unsupported magic {:?} (want P5 or P6)", String::from_utf8_lossy(magic)),
            ))
        }
    };
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and '#' comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(bad(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if pos == start {
            return Err(bad(path, "expected a decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text
            .parse()
            .map_err(|_| bad(path, format!("bad header field {text}")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad(path, format!("maxval must be 255, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(bad(path, "zero image dimension"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad(path, "missing whitespace before raster")),
    }
    Ok(PnmHeader {
        channels,
        width,
        height,
        data_offset: pos,
    })
}

fn decode_frame(path: &Path) -> Result<Tensor, VideoError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let header = parse_header(path, &bytes)?;
    let (c, h, w) = (header.channels, header.height, header.width);
    let expected = c * h * w;
    let raster = &bytes[header.data_offset..];
    if raster.len() < expected {
        return Err(bad(
            path,
            format!("raster holds {} bytes, expected {expected}", raster.len()),
        ));
    }
    // Interleaved raster to planar C x H x W.
    let mut data = vec![0.0f32; expected];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(ch * h + y) * w + x] = raster[(y * w + x) * c + ch] as f32 / 255.0;
            }
        }
    }
    Ok(Tensor::new(vec![c, h, w], data).expect("shape matches raster"))
}

/// Load all numbered P5/P6 frames from a directory, ordered by the number in
/// the filename. Mixed formats or resolutions, gaps in the numbering and
/// non-netpbm magics are rejected with the offending filename.
pub fn load_frames(dir: &Path) -> Result<VideoSequence, VideoError> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut numbered: Vec<(u64, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("ppm") | Some("pgm")) {
            continue;
        }
        let number = stem_number(&path)
            .ok_or_else(|| bad(&path, "filename carries no frame number"))?;
        numbered.push((number, path));
    }
    if numbered.is_empty() {
        return Err(VideoError::EmptyDirectory(dir.display().to_string()));
    }
    numbered.sort();
    let first = numbered[0].0;
    for (i, (num, _)) in numbered.iter().enumerate() {
        let expected = first + i as u64;
        if *num != expected {
            return Err(VideoError::NonContiguous {
                expected,
                found: *num,
            });
        }
    }

    let mut frames = Vec::with_capacity(numbered.len());
    let mut first_shape: Option<(usize, usize, usize)> = None;
    for (_, path) in &numbered {
        let frame = decode_frame(path)?;
        let shape = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
        match first_shape {
            None => first_shape = Some(shape),
            Some(want) if want != shape => {
                return Err(VideoError::MixedResolution {
                    path: path.display().to_string(),
                    got: shape,
                    want,
                });
            }
            _ => {}
        }
        frames.push(frame);
    }
    VideoSequence::new(frames, dir.display().to_string())
}

/// Write a sequence as zero-padded numbered P6/P5 files. Values are clamped
/// to [0, 1] and rounded half away from zero to 8-bit.
pub fn save_frames(seq: &VideoSequence, dir: &Path) -> Result<(), VideoError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let (magic, ext) = if seq.channels == 1 {
        ("P5", "pgm")
    } else {
        ("P6", "ppm")
    };
    for (i, frame) in seq.frames.iter().enumerate() {
        let path = dir.join(format!("frame_{i:06}.{ext}"));
        let (c, h, w) = (seq.channels, seq.height, seq.width);
        let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
        let data = frame.data();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = data[(ch * h + y) * w + x].clamp(0.0, 1.0);
                    bytes.push((v * 255.0).round() as u8);
                }
            }
        }
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}
