//! On-disk formats.
//!
//! Volumes and supervoxel maps are a JSON header
//! `{"dims":[nx,ny,nz],"dtype":"u8"|"f32"|"u32","data":"<relative path>"}`
//! next to a raw little-endian payload (x fastest). Feature matrices use
//! `{"n":S,"d":d,"data":"<relative path>"}` with row-major f32. Ground-truth
//! labels are one class index per line.
//!
//! A dataset directory ties these together with a `dataset.json` manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{summarize_supervoxels, Dataset, LabelSet, Supervoxel, SupervoxelMap, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    F32,
    U32,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 | Dtype::U32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub dtype: Dtype,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureHeader {
    pub n: usize,
    pub d: usize,
    pub data: String,
}

/// `dataset.json`: paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svmap: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    pub labels: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

pub const MANIFEST_NAME: &str = "dataset.json";

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn sibling(header: &Path, rel: &str) -> PathBuf {
    header.parent().unwrap_or_else(|| Path::new(".")).join(rel)
}

fn payload_name(header: &Path, ext: &str) -> String {
    let stem = header.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    format!("{stem}.{ext}")
}

fn read_payload(header_path: &Path, rel: &str, expected_len: usize) -> Result<Vec<u8>> {
    let path = sibling(header_path, rel);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != expected_len {
        return Err(format_err(
            &path,
            format!("expected {expected_len} bytes, found {}", bytes.len()),
        ));
    }
    Ok(bytes)
}

fn read_volume_raw(header_path: &Path) -> Result<(VolumeHeader, Vec<u8>)> {
    let header: VolumeHeader = read_json(header_path)?;
    let n: usize = header.dims.iter().product();
    let bytes = read_payload(header_path, &header.data, n * header.dtype.width())?;
    Ok((header, bytes))
}

fn write_volume_raw(header_path: &Path, dims: [usize; 3], dtype: Dtype, bytes: &[u8]) -> Result<()> {
    let data = payload_name(header_path, "raw");
    let payload = sibling(header_path, &data);
    fs::write(&payload, bytes).map_err(|e| Error::io(&payload, e))?;
    write_json(header_path, &VolumeHeader { dims, dtype, data })
}

/// Reads an intensity volume; `u8` payloads are widened to f32.
pub fn read_volume_f32(header_path: &Path) -> Result<Volume<f32>> {
    let (header, bytes) = read_volume_raw(header_path)?;
    let data = match header.dtype {
        Dtype::U8 => bytes.iter().map(|&b| b as f32).collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::U32 => return Err(format_err(header_path, "intensity volume cannot be u32")),
    };
    Volume::new(header.dims, data)
}

pub fn write_volume_f32(header_path: &Path, volume: &Volume<f32>) -> Result<()> {
    let bytes: Vec<u8> = volume.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_volume_raw(header_path, volume.dims(), Dtype::F32, &bytes)
}

/// Reads a class-index volume (dtype `u8`).
pub fn read_volume_u8(header_path: &Path) -> Result<Volume<u8>> {
    let (header, bytes) = read_volume_raw(header_path)?;
    if header.dtype != Dtype::U8 {
        return Err(format_err(header_path, "class volume must be u8"));
    }
    Volume::new(header.dims, bytes)
}

pub fn write_volume_u8(header_path: &Path, volume: &Volume<u8>) -> Result<()> {
    write_volume_raw(header_path, volume.dims(), Dtype::U8, volume.data())
}

pub fn read_svmap(header_path: &Path) -> Result<SupervoxelMap> {
    let (header, bytes) = read_volume_raw(header_path)?;
    if header.dtype != Dtype::U32 {
        return Err(format_err(header_path, "supervoxel map must be u32"));
    }
    let ids = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    SupervoxelMap::new_connected(Volume::new(header.dims, ids)?)
}

pub fn write_svmap(header_path: &Path, map: &SupervoxelMap) -> Result<()> {
    let bytes: Vec<u8> = map.ids().data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_volume_raw(header_path, map.dims(), Dtype::U32, &bytes)
}

pub fn read_features(header_path: &Path) -> Result<Vec<Vec<f64>>> {
    let header: FeatureHeader = read_json(header_path)?;
    let bytes = read_payload(header_path, &header.data, header.n * header.d * 4)?;
    let flat: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if header.d == 0 {
        return Ok(vec![Vec::new(); header.n]);
    }
    Ok(flat.chunks(header.d).map(<[f64]>::to_vec).collect())
}

pub fn write_features(header_path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let d = rows.first().map_or(0, Vec::len);
    if let Some(row) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: row.len(),
        });
    }
    let data = payload_name(header_path, "bin");
    let payload = sibling(header_path, &data);
    let bytes: Vec<u8> = rows
        .iter()
        .flatten()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    fs::write(&payload, bytes).map_err(|e| Error::io(&payload, e))?;
    write_json(header_path, &FeatureHeader { n: rows.len(), d, data })
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| format_err(path, format!("line {}: not a class index: {l:?}", i + 1)))
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 2);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `volume.json`, `svmap.json`, `features.json`, `labels.txt` and the
/// `dataset.json` manifest into `dir`. Returns the manifest path.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = DatasetManifest {
        classes: dataset.labels.names().to_vec(),
        volume: None,
        svmap: None,
        features: Some("features.json".into()),
        labels: "labels.txt".into(),
        kappa: Some(dataset.kappa),
    };
    if let Some(volume) = &dataset.volume {
        write_volume_f32(&dir.join("volume.json"), volume)?;
        manifest.volume = Some("volume.json".into());
    }
    if let Some(map) = &dataset.svmap {
        write_svmap(&dir.join("svmap.json"), map)?;
        manifest.svmap = Some("svmap.json".into());
    }
    let rows: Vec<Vec<f64>> = dataset.supervoxels.iter().map(|s| s.features.clone()).collect();
    write_features(&dir.join("features.json"), &rows)?;
    write_labels(&dir.join("labels.txt"), &dataset.ground_truth)?;
    let path = dir.join(MANIFEST_NAME);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads a dataset from a manifest file or a directory containing one.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    let labels = LabelSet::new(manifest.classes.clone())?;
    let ground_truth = read_labels(&sibling(&manifest_path, &manifest.labels))?;
    let features = manifest
        .features
        .as_deref()
        .map(|f| read_features(&sibling(&manifest_path, f)))
        .transpose()?;

    match (&manifest.volume, &manifest.svmap) {
        (Some(v), Some(m)) => {
            let volume = read_volume_f32(&sibling(&manifest_path, v))?;
            let svmap = read_svmap(&sibling(&manifest_path, m))?;
            let mut supervoxels = summarize_supervoxels(&volume, &svmap)?;
            if let Some(rows) = features {
                if rows.len() != supervoxels.len() {
                    return Err(format_err(
                        &manifest_path,
                        format!("{} feature rows for {} supervoxels", rows.len(), supervoxels.len()),
                    ));
                }
                for (sv, row) in supervoxels.iter_mut().zip(rows) {
                    sv.features = row;
                }
            }
            let kappa = manifest.kappa.unwrap_or_else(|| svmap.mean_equivalent_radius());
            Dataset::with_parts(Some(volume), Some(svmap), supervoxels, labels, ground_truth, kappa)
        }
        (None, None) => {
            let rows = features
                .ok_or_else(|| format_err(&manifest_path, "tabular datasets need a feature matrix"))?;
            let supervoxels: Vec<Supervoxel> = rows
                .into_iter()
                .enumerate()
                .map(|(id, features)| Supervoxel {
                    id,
                    center: [0.0; 3],
                    features,
                    member_count: 1,
                })
                .collect();
            Dataset::with_parts(None, None, supervoxels, labels, ground_truth, manifest.kappa.unwrap_or(1.0))
        }
        _ => Err(format_err(
            &manifest_path,
            "volume and svmap must be given together",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::grid_oversegment;

    #[test]
    fn volume_roundtrip_and_header_shape() {
        let dir = tempfile::tempdir().unwrap();
        let vol = Volume::new([3, 2, 1], vec![0.5f32, 1.0, -2.0, 3.25, 4.0, 5.0]).unwrap();
        let header = dir.path().join("vol.json");
        write_volume_f32(&header, &vol).unwrap();
        assert_eq!(read_volume_f32(&header).unwrap(), vol);

        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&header).unwrap()).unwrap();
        assert_eq!(json["dims"], serde_json::json!([3, 2, 1]));
        assert_eq!(json["dtype"], "f32");
        assert_eq!(json["data"], "vol.raw");
        let raw = fs::read(dir.path().join("vol.raw")).unwrap();
        assert_eq!(&raw[..4], &0.5f32.to_le_bytes());
    }

    #[test]
    fn u8_volume_reads_as_intensity() {
        let dir = tempfile::tempdir().unwrap();
        let header = dir.path().join("gt.json");
        let gt = Volume::new([2, 1, 1], vec![0u8, 7]).unwrap();
        write_volume_u8(&header, &gt).unwrap();
        assert_eq!(read_volume_u8(&header).unwrap(), gt);
        assert_eq!(read_volume_f32(&header).unwrap().data(), &[0.0, 7.0]);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let header = dir.path().join("v.json");
        write_volume_f32(&header, &Volume::filled([2, 2, 2], 1.0f32).unwrap()).unwrap();
        fs::write(dir.path().join("v.raw"), [0u8; 5]).unwrap();
        assert!(matches!(read_volume_f32(&header), Err(Error::Format { .. })));
    }

    #[test]
    fn unknown_header_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let header = dir.path().join("v.json");
        fs::write(&header, r#"{"dims":[1,1,1],"dtype":"u8","data":"v.raw","extra":1}"#).unwrap();
        fs::write(dir.path().join("v.raw"), [0u8]).unwrap();
        assert!(read_volume_u8(&header).is_err());
    }

    #[test]
    fn svmap_and_features_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let map = grid_oversegment([5, 4, 3], 2).unwrap();
        write_svmap(&dir.path().join("s.json"), &map).unwrap();
        assert_eq!(read_svmap(&dir.path().join("s.json")).unwrap(), map);

        let rows = vec![vec![1.0, 2.5], vec![-3.0, 0.125]];
        write_features(&dir.path().join("f.json"), &rows).unwrap();
        assert_eq!(read_features(&dir.path().join("f.json")).unwrap(), rows);
    }

    #[test]
    fn labels_text_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.txt");
        write_labels(&path, &[0, 2, 1]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "0\n2\n1\n");
        assert_eq!(read_labels(&path).unwrap(), vec![0, 2, 1]);
        fs::write(&path, "0\nx\n").unwrap();
        assert!(read_labels(&path).is_err());
    }
}
