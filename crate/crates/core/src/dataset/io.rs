//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/sample_00000.bin
//! <dir>/sample_00001.bin
//! ...
//! ```
//!
//! Each sample binary is little-endian: magic `PCQ1`, `u32` point count,
//! `u32` flags (bit 0: colors present, always set), then `N×3` `f64`
//! coordinates followed by `N×3` `f64` colors. Scores are stored in the
//! manifest as shortest round-trip decimal strings, so a save/load cycle is
//! bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DistortionKind, DistortionSpec, DomainDataset, DomainTag, Point, PointCloudSample, ShapeFamily};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"PCQ1";
const FLAG_COLORS: u32 = 1;
const HEADER_LEN: usize = 12;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema_version: u32,
    domain_tag: DomainTag,
    groups: BTreeMap<String, Vec<usize>>,
    samples: Vec<SampleEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleEntry {
    file: String,
    n_points: usize,
    content_id: u32,
    shape: ShapeFamily,
    distortion: DistortionKind,
    intensity: u8,
    mos: String,
}

pub fn save_dataset(ds: &DomainDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(ds.len());
    for (i, s) in ds.samples.iter().enumerate() {
        let file = format!("sample_{i:05}.bin");
        let path = dir.join(&file);
        fs::write(&path, encode_sample(s)).map_err(|e| Error::io(&path, e))?;
        entries.push(SampleEntry {
            file,
            n_points: s.len(),
            content_id: s.content_id,
            shape: s.shape,
            distortion: s.distortion.kind,
            intensity: s.distortion.intensity,
            mos: format!("{}", s.mos),
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        domain_tag: ds.domain_tag,
        groups: ds.groups.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        samples: entries,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<DomainDataset> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        offset: byte_offset(&text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let manifest_err = |message: String| Error::Parse {
        path: manifest_path.clone(),
        offset: 0,
        message,
    };
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(manifest_err(format!(
            "unsupported schema version {}",
            manifest.schema_version
        )));
    }

    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (points, colors) = decode_sample(&bytes, &path)?;
        if points.len() != entry.n_points {
            return Err(manifest_err(format!(
                "{} holds {} points, manifest says {}",
                entry.file,
                points.len(),
                entry.n_points
            )));
        }
        let mos: f64 = entry
            .mos
            .parse()
            .map_err(|_| manifest_err(format!("bad mos `{}` for {}", entry.mos, entry.file)))?;
        samples.push(PointCloudSample {
            points,
            colors,
            mos,
            content_id: entry.content_id,
            shape: entry.shape,
            distortion: DistortionSpec::new(entry.distortion, entry.intensity),
            domain_tag: manifest.domain_tag,
        });
    }

    let ds = DomainDataset::from_samples(manifest.domain_tag, samples).map_err(|e| manifest_err(e.to_string()))?;
    let stored: BTreeMap<u32, Vec<usize>> = manifest
        .groups
        .iter()
        .map(|(k, v)| {
            k.parse::<u32>()
                .map(|k| (k, v.clone()))
                .map_err(|_| manifest_err(format!("bad group key `{k}`")))
        })
        .collect::<Result<_>>()?;
    if stored != ds.groups {
        return Err(manifest_err("group map disagrees with sample content ids".into()));
    }
    Ok(ds)
}

fn encode_sample(s: &PointCloudSample) -> Vec<u8> {
    let n = s.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * 48);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&FLAG_COLORS.to_le_bytes());
    for v in s.points.iter().chain(&s.colors).flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_sample(bytes: &[u8], path: &Path) -> Result<(Vec<Point>, Vec<Point>)> {
    let err = |offset: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        offset: offset as u64,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(err(0, "bad magic, expected PCQ1".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let flags = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if flags & FLAG_COLORS == 0 {
        return Err(err(8, "colorless clouds are not supported".into()));
    }
    let expected = HEADER_LEN + n * 48;
    if bytes.len() != expected {
        return Err(err(
            bytes.len().min(expected),
            format!("payload holds {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut read = |count: usize| -> Vec<Point> {
        (0..count)
            .map(|_| [values.next().unwrap(), values.next().unwrap(), values.next().unwrap()])
            .collect()
    };
    let points = read(n);
    let colors = read(n);
    Ok((points, colors))
}

fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)) as u64
}
