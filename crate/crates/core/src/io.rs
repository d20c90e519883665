//! Sequence directory layout:
//!
//! ```text
//! <dir>/frames/00000.png            RGB, 8 bits per channel
//! <dir>/masks/<object_id>/00000.png grayscale, 1 bit per pixel
//! <dir>/instructions.json           [{seed, rephrasings, kind, target_object_id}]
//! ```
//!
//! The sequence id is the directory name. Pixel values are quantized to
//! multiples of 1/255 on save.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{AnnotatedSequence, BinaryMask, Frame, InstructionKind, InstructionRecord, ObjectId};

pub const FRAMES_DIR: &str = "frames";
pub const MASKS_DIR: &str = "masks";
pub const INSTRUCTIONS_FILE: &str = "instructions.json";

pub fn frame_file_name(index: usize) -> String {
    format!("{index:05}.png")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordJson {
    seed: String,
    rephrasings: Vec<String>,
    kind: InstructionKind,
    target_object_id: u32,
}

pub fn save_sequence(seq: &AnnotatedSequence, dir: &Path) -> Result<()> {
    let frames_dir = dir.join(FRAMES_DIR);
    create_dir(&frames_dir)?;
    for (i, f) in seq.frames().iter().enumerate() {
        write_frame_png(f, &frames_dir.join(frame_file_name(i)))?;
    }
    for (id, masks) in seq.gt_masks() {
        let mdir = dir.join(MASKS_DIR).join(id.to_string());
        create_dir(&mdir)?;
        for (i, m) in masks.iter().enumerate() {
            write_mask_png(m, &mdir.join(frame_file_name(i)))?;
        }
    }
    let records: Vec<RecordJson> = seq
        .instructions()
        .iter()
        .map(|r| RecordJson {
            seed: r.seed_text().to_string(),
            rephrasings: r.rephrasings().to_vec(),
            kind: r.kind(),
            target_object_id: r.target().get(),
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&records).expect("records serialize");
    text.push('\n');
    write_file(&dir.join(INSTRUCTIONS_FILE), text.as_bytes())
}

/// Reads the gap-free run `00000.png, 00001.png, ...` from `dir`.
pub fn load_frames(dir: &Path) -> Result<Vec<Frame>> {
    let frame_count = count_indexed_files(dir)?;
    if frame_count == 0 {
        return Err(CoreError::CorruptSequence { index: 0, reason: "no frames".into() });
    }
    (0..frame_count).map(|i| read_frame_png(&dir.join(frame_file_name(i)), i)).collect()
}

pub fn load_sequence(dir: &Path) -> Result<AnnotatedSequence> {
    let sequence_id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CoreError::invalid("sequence path", format!("{} has no usable name", dir.display())))?
        .to_string();

    let frames = load_frames(&dir.join(FRAMES_DIR))?;
    let frame_count = frames.len();

    let masks_root = dir.join(MASKS_DIR);
    let mut gt_masks = BTreeMap::new();
    for entry in read_dir_sorted(&masks_root)? {
        let name = entry.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let id = name
            .parse::<u32>()
            .ok()
            .and_then(|v| ObjectId::new(v).ok())
            .ok_or_else(|| CoreError::invalid("mask directory", format!("{} is not an object id", entry.display())))?;
        let mut masks = Vec::with_capacity(frame_count);
        for i in 0..frame_count {
            let p = entry.join(frame_file_name(i));
            if !p.is_file() {
                return Err(CoreError::CorruptSequence {
                    index: i,
                    reason: format!("missing mask {}", p.display()),
                });
            }
            masks.push(read_mask_png(&p, i)?);
        }
        let extra = count_indexed_files(&entry)?;
        if extra != frame_count {
            return Err(CoreError::CorruptSequence {
                index: frame_count,
                reason: format!("object {id} has mask files beyond the {frame_count} frames"),
            });
        }
        gt_masks.insert(id, masks);
    }

    let instructions = read_instructions(&dir.join(INSTRUCTIONS_FILE))?;
    AnnotatedSequence::new(sequence_id, frames, gt_masks, instructions)
}

pub fn read_instructions(path: &Path) -> Result<Vec<InstructionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let records: Vec<RecordJson> = serde_json::from_str(&text)
        .map_err(|e| CoreError::Parse { path: path.to_path_buf(), line: e.line(), message: e.to_string() })?;
    records
        .into_iter()
        .map(|r| {
            let id = ObjectId::new(r.target_object_id)?;
            InstructionRecord::new(r.seed, r.rephrasings, r.kind, id)
        })
        .collect()
}

/// Writes an RGB8 PNG of `frame`.
pub fn write_frame_png(frame: &Frame, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = frame.pixels().iter().map(|&v| to_u8(v)).collect();
    write_png(path, frame.width() as u32, frame.height() as u32, png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
}

pub fn read_frame_png(path: &Path, index: usize) -> Result<Frame> {
    let (info, buf) = read_png(path)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(CoreError::Image {
            path: path.to_path_buf(),
            message: format!("expected 8-bit RGB, got {:?} {:?}", info.color_type, info.bit_depth),
        });
    }
    let pixels = buf.iter().map(|&b| f64::from(b) / 255.0).collect();
    Frame::new(info.height as usize, info.width as usize, pixels, index).map_err(|e| CoreError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes a 1-bit grayscale PNG of `mask`.
pub fn write_mask_png(mask: &BinaryMask, path: &Path) -> Result<()> {
    let (h, w) = mask.shape();
    let stride = w.div_ceil(8);
    let mut packed = vec![0u8; stride * h];
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                packed[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    write_png(path, w as u32, h as u32, png::ColorType::Grayscale, png::BitDepth::One, &packed)
}

pub fn read_mask_png(path: &Path, frame_index: usize) -> Result<BinaryMask> {
    let (info, buf) = read_png(path)?;
    let (h, w) = (info.height as usize, info.width as usize);
    let bad = |message: String| CoreError::Image { path: path.to_path_buf(), message };
    if info.color_type != png::ColorType::Grayscale {
        return Err(bad(format!("expected grayscale mask, got {:?}", info.color_type)));
    }
    let grid = match info.bit_depth {
        png::BitDepth::One => {
            let stride = w.div_ceil(8);
            (0..h * w).map(|i| buf[(i / w) * stride + (i % w) / 8] & (0x80 >> ((i % w) % 8)) != 0).collect()
        }
        png::BitDepth::Eight => buf.iter().take(h * w).map(|&b| b >= 128).collect(),
        other => return Err(bad(format!("unsupported mask bit depth {other:?}"))),
    };
    BinaryMask::new(h, w, grid, frame_index).map_err(|e| bad(e.to_string()))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png(path: &Path, w: u32, h: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
    enc.set_color(color);
    enc.set_depth(depth);
    enc.set_compression(png::Compression::Default);
    let to_io = |e: png::EncodingError| CoreError::io(path, std::io::Error::other(e.to_string()));
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(data).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

fn read_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>)> {
    let file = fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let bad = |e: png::DecodingError| CoreError::Image { path: path.to_path_buf(), message: e.to_string() };
    let mut reader = decoder.read_info().map_err(bad)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CoreError::io(path, e))
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| CoreError::io(&tmp, e))?;
        f.sync_all().map_err(|e| CoreError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CoreError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| CoreError::io(dir, e)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Number of files `00000.png, 00001.png, ...` present without gaps;
/// a gap is reported as a corrupt sequence at the first missing index.
fn count_indexed_files(dir: &Path) -> Result<usize> {
    let names: Vec<String> = read_dir_sorted(dir)?
        .iter()
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_string))
        .filter(|n| n.ends_with(".png"))
        .collect();
    for (i, n) in names.iter().enumerate() {
        if *n != frame_file_name(i) {
            return Err(CoreError::CorruptSequence {
                index: i,
                reason: format!("{}: expected {}, found {n}", dir.display(), frame_file_name(i)),
            });
        }
    }
    Ok(names.len())
}
