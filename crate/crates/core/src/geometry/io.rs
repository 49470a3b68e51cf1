//! Dataset directory layout and file formats.
//!
//! `manifest.txt` holds one line per pair (`id kind seed split`); each pair
//! stores `pair_<id>.src.ppm` / `.tgt.ppm` (binary P6), `pair_<id>.map`
//! (magic `CMAP`, u32 W, u32 H, then H*W*2 little-endian f32, u before v),
//! and `pair_<id>.mask` (magic `MSK1`, u32 W, u32 H, H*W bytes of 0/1).

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::synth::ImageBuf;
use super::{CorrespondenceMap, MatchabilityMask};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, msg: impl Into<String>) -> DatasetError {
    DatasetError::Format { path: path.to_path_buf(), msg: msg.into() }
}

// ── PPM ──────────────────────────────────────────────────────────────

pub fn write_ppm(path: &Path, img: &ImageBuf) -> Result<(), DatasetError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write!(w, "P6\n{} {}\n255\n", img.width, img.height).map_err(io_err(path))?;
    let mut row = Vec::with_capacity(img.width * 3);
    for i in 0..img.height {
        row.clear();
        for j in 0..img.width {
            for c in 0..3 {
                row.push((img.at(c, i, j).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        w.write_all(&row).map_err(io_err(path))?;
    }
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<ImageBuf, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String, DatasetError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated PPM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P6" {
        return Err(format_err(path, "not a binary P6 file"));
    }
    let width: usize = token(&bytes)?.parse().map_err(|_| format_err(path, "bad width"))?;
    let height: usize = token(&bytes)?.parse().map_err(|_| format_err(path, "bad height"))?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| format_err(path, "bad maxval"))?;
    if maxval != 255 {
        return Err(format_err(path, "only maxval 255 supported"));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(format_err(path, "truncated pixel data"));
    }
    let mut img = ImageBuf::zeros(width, height);
    for i in 0..height {
        for j in 0..width {
            for c in 0..3 {
                img.set(c, i, j, bytes[pos + (i * width + j) * 3 + c] as f32 / 255.0);
            }
        }
    }
    Ok(img)
}

// ── Correspondence map / mask ────────────────────────────────────────

pub fn write_map(path: &Path, m: &CorrespondenceMap) -> Result<(), DatasetError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(b"CMAP").map_err(io_err(path))?;
    w.write_all(&(m.width as u32).to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&(m.height as u32).to_le_bytes()).map_err(io_err(path))?;
    for v in &m.data {
        w.write_all(&(*v as f32).to_le_bytes()).map_err(io_err(path))?;
    }
    Ok(())
}

pub fn read_map(path: &Path) -> Result<CorrespondenceMap, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != b"CMAP" {
        return Err(format_err(path, "bad magic (expected CMAP)"));
    }
    let width = read_u32(&mut r, path)? as usize;
    let height = read_u32(&mut r, path)? as usize;
    let mut buf = vec![0u8; width * height * 2 * 4];
    r.read_exact(&mut buf).map_err(io_err(path))?;
    let data = buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(CorrespondenceMap { width, height, data })
}

pub fn write_mask(path: &Path, m: &MatchabilityMask) -> Result<(), DatasetError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(b"MSK1").map_err(io_err(path))?;
    w.write_all(&(m.width as u32).to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&(m.height as u32).to_le_bytes()).map_err(io_err(path))?;
    let bytes: Vec<u8> = m.data.iter().map(|v| u8::from(*v)).collect();
    w.write_all(&bytes).map_err(io_err(path))?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<MatchabilityMask, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != b"MSK1" {
        return Err(format_err(path, "bad magic (expected MSK1)"));
    }
    let width = read_u32(&mut r, path)? as usize;
    let height = read_u32(&mut r, path)? as usize;
    let mut bytes = vec![0u8; width * height];
    r.read_exact(&mut bytes).map_err(io_err(path))?;
    Ok(MatchabilityMask { width, height, data: bytes.iter().map(|b| *b != 0).collect() })
}

fn read_u32<R: Read>(r: &mut R, path: &Path) -> Result<u32, DatasetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err(path))?;
    Ok(u32::from_le_bytes(b))
}

// ── Manifest ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: usize,
    pub kind: String,
    pub seed: u64,
    pub split: Split,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{} {} {} {}\n", e.id, e.kind, e.seed, e.split.name()));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut entries = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() < 4 {
            return Err(format_err(path, format!("line {}: expected 'id kind seed split'", ln + 1)));
        }
        let id = parts[0].parse().map_err(|_| format_err(path, format!("line {}: bad id", ln + 1)))?;
        let seed = parts[2].parse().map_err(|_| format_err(path, format!("line {}: bad seed", ln + 1)))?;
        let split = match parts[3] {
            "train" => Split::Train,
            "val" => Split::Val,
            other => return Err(format_err(path, format!("line {}: unknown split '{other}'", ln + 1))),
        };
        entries.push(ManifestEntry { id, kind: parts[1].to_string(), seed, split });
    }
    Ok(entries)
}

// ── Pair-level helpers ───────────────────────────────────────────────

pub fn pair_paths(dir: &Path, id: usize) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("pair_{id}.src.ppm")),
        dir.join(format!("pair_{id}.tgt.ppm")),
        dir.join(format!("pair_{id}.map")),
        dir.join(format!("pair_{id}.mask")),
    )
}

pub struct StoredPair {
    pub source: ImageBuf,
    pub target: ImageBuf,
    pub gt_map: CorrespondenceMap,
    pub gt_mask: MatchabilityMask,
}

pub fn write_pair(dir: &Path, id: usize, p: &StoredPair) -> Result<(), DatasetError> {
    let (src, tgt, map, mask) = pair_paths(dir, id);
    write_ppm(&src, &p.source)?;
    write_ppm(&tgt, &p.target)?;
    write_map(&map, &p.gt_map)?;
    write_mask(&mask, &p.gt_mask)
}

pub fn read_pair(dir: &Path, id: usize) -> Result<StoredPair, DatasetError> {
    let (src, tgt, map, mask) = pair_paths(dir, id);
    Ok(StoredPair {
        source: read_ppm(&src)?,
        target: read_ppm(&tgt)?,
        gt_map: read_map(&map)?,
        gt_mask: read_mask(&mask)?,
    })
}
