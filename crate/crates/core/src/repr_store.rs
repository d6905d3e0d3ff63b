//! On-disk representation bundles and the in-memory data model shared by
//! the analysis modules.
//!
//! A bundle directory holds `manifest.json` plus one binary matrix file per
//! layer under `layers/layer_XXX.bin`. Each matrix file is a 24-byte header
//! (magic `RDBM`, version `u32` = 1, rows `u64`, cols `u64`, all little
//! endian) followed by `rows * cols` little-endian `f32` values in row-major
//! order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RDBM";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_SIZE: usize = 24;
pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LAYERS_DIR: &str = "layers";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenPosition {
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub model_id: String,
    pub dataset_id: String,
    pub num_layers: usize,
    pub num_samples: usize,
    pub hidden_sizes: Vec<usize>,
    pub token_position: TokenPosition,
    pub element_type: ElementType,
    #[serde(default)]
    pub notes: String,
}

impl Manifest {
    pub fn new(model_id: impl Into<String>, dataset_id: impl Into<String>, num_samples: usize, hidden_sizes: Vec<usize>) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            model_id: model_id.into(),
            dataset_id: dataset_id.into(),
            num_layers: hidden_sizes.len(),
            num_samples,
            hidden_sizes,
            token_position: TokenPosition::Last,
            element_type: ElementType::F32,
            notes: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidManifest(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        if self.num_layers < 1 {
            return Err(Error::InvalidManifest("num_layers must be >= 1".into()));
        }
        if self.num_samples < 2 {
            return Err(Error::TooFewSamples(self.num_samples));
        }
        if self.hidden_sizes.len() != self.num_layers {
            return Err(Error::InvalidManifest(format!(
                "hidden_sizes has {} entries but num_layers is {}",
                self.hidden_sizes.len(),
                self.num_layers
            )));
        }
        if let Some(l) = self.hidden_sizes.iter().position(|&d| d == 0) {
            return Err(Error::InvalidManifest(format!("hidden_sizes[{l}] is 0")));
        }
        if self.num_layers > 1000 {
            return Err(Error::InvalidManifest("at most 1000 layers are addressable".into()));
        }
        Ok(())
    }
}

/// A dense `rows x cols` matrix of `f32` activations, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl ReprMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(ReprMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        ReprMatrix::new(rows.len(), cols, data)
    }

    /// Rounds an `f64` matrix to `f32` storage.
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)] as f32);
            }
        }
        ReprMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Promotes to a 64-bit matrix for analysis.
    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.rows, self.cols, self.data.iter().map(|&v| v as f64))
    }

    /// Position of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| (i / self.cols.max(1), i % self.cols.max(1)))
    }

    /// Encodes the matrix in the `RDBM` binary layout.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_SIZE + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes an `RDBM` buffer. `path` is used only for error reporting.
    /// When `expected` is given, the header dimensions must match it.
    pub fn decode(bytes: &[u8], path: &Path, expected: Option<(usize, usize)>) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(Error::BadMagic { path: path.into() });
            }
            return Err(Error::Truncated {
                path: path.into(),
                expected: HEADER_SIZE as u64,
                actual: bytes.len() as u64,
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic { path: path.into() });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.into(),
                version,
            });
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        if let Some((er, ec)) = expected {
            if rows != er as u64 || cols != ec as u64 {
                return Err(Error::HeaderMismatch {
                    path: path.into(),
                    header_rows: rows,
                    header_cols: cols,
                    expected_rows: er,
                    expected_cols: ec,
                });
            }
        }
        let expected_len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_SIZE as u64));
        let actual = bytes.len() as u64;
        if expected_len != Some(actual) {
            return Err(Error::Truncated {
                path: path.into(),
                expected: expected_len.unwrap_or(u64::MAX),
                actual,
            });
        }
        let data = bytes[HEADER_SIZE..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ReprMatrix::new(rows as usize, cols as usize, data)
    }
}

/// Per-layer last-token activations of one (model, dataset) run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprBundle {
    pub manifest: Manifest,
    pub layers: Vec<ReprMatrix>,
}

impl ReprBundle {
    /// Builds a bundle, deriving the dimension fields of the manifest from
    /// `layers`.
    pub fn from_layers(model_id: impl Into<String>, dataset_id: impl Into<String>, layers: Vec<ReprMatrix>) -> Result<Self> {
        let num_samples = layers.first().map_or(0, ReprMatrix::rows);
        let hidden_sizes = layers.iter().map(ReprMatrix::cols).collect();
        let bundle = ReprBundle {
            manifest: Manifest::new(model_id, dataset_id, num_samples, hidden_sizes),
            layers,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_samples(&self) -> usize {
        self.manifest.num_samples
    }

    pub fn validate(&self) -> Result<()> {
        self.manifest.validate()?;
        if self.layers.len() != self.manifest.num_layers {
            return Err(Error::DimensionMismatch(format!(
                "manifest declares {} layers, bundle has {}",
                self.manifest.num_layers,
                self.layers.len()
            )));
        }
        for (l, m) in self.layers.iter().enumerate() {
            if m.rows() != self.manifest.num_samples || m.cols() != self.manifest.hidden_sizes[l] {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l} is {}x{}, manifest expects {}x{}",
                    m.rows(),
                    m.cols(),
                    self.manifest.num_samples,
                    self.manifest.hidden_sizes[l]
                )));
            }
            if let Some((row, col)) = m.first_non_finite() {
                return Err(Error::NonFinite { layer: l, row, col });
            }
        }
        Ok(())
    }

    /// SHA-256 over the manifest and every encoded layer, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.manifest).expect("manifest serializes"));
        for m in &self.layers {
            hasher.update(m.encode());
        }
        hex_digest(&hasher.finalize())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn layer_file_name(index: usize) -> String {
    format!("layer_{index:03}.bin")
}

fn parse_layer_file_name(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("layer_")?.strip_suffix(".bin")?;
    if digits.len() < 3 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Writes `bundle` to `destination`.
///
/// The bundle is first written to a sibling staging directory and then
/// renamed into place. An existing destination is replaced only when it is
/// empty or already holds a bundle manifest.
pub fn write_bundle(bundle: &ReprBundle, destination: &Path) -> Result<()> {
    bundle.validate()?;
    write_dir_atomically(destination, MANIFEST_FILE, |staging| write_bundle_contents(bundle, staging))
}

/// Populates a staging directory with `fill` and renames it onto
/// `destination`. An existing destination must be empty or contain
/// `marker`, the file that identifies directories of this kind.
pub(crate) fn write_dir_atomically(destination: &Path, marker: &str, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if destination.exists() {
        let is_replaceable = destination.is_dir()
            && (destination.join(marker).is_file()
                || fs::read_dir(destination)
                    .map_err(|e| Error::io(destination, e))?
                    .next()
                    .is_none());
        if !is_replaceable {
            return Err(Error::io(
                destination,
                std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    format!("destination exists and has no {marker}"),
                ),
            ));
        }
    }

    let staging = staging_path(destination, "tmp");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    let result = fill(&staging).and_then(|()| {
        if destination.exists() {
            let old = staging_path(destination, "old");
            fs::rename(destination, &old).map_err(|e| Error::io(destination, e))?;
            fs::rename(&staging, destination).map_err(|e| Error::io(destination, e))?;
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))
        } else {
            fs::rename(&staging, destination).map_err(|e| Error::io(destination, e))
        }
    });
    if result.is_err() && staging.exists() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

fn staging_path(destination: &Path, suffix: &str) -> PathBuf {
    let name = destination
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    destination.with_file_name(format!(".{name}.{suffix}-{}", std::process::id()))
}

fn write_bundle_contents(bundle: &ReprBundle, dir: &Path) -> Result<()> {
    let layers_dir = dir.join(LAYERS_DIR);
    fs::create_dir_all(&layers_dir).map_err(|e| Error::io(&layers_dir, e))?;
    let mut manifest = serde_json::to_vec_pretty(&bundle.manifest).expect("manifest serializes");
    manifest.push(b'\n');
    write_file(&dir.join(MANIFEST_FILE), &manifest)?;
    for (l, m) in bundle.layers.iter().enumerate() {
        write_file(&layers_dir.join(layer_file_name(l)), &m.encode())?;
    }
    Ok(())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

/// Reads and fully validates a bundle directory.
pub fn read_bundle(source: &Path) -> Result<ReprBundle> {
    let manifest_path = source.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: manifest_path.clone(),
        source: e,
    })?;
    manifest.validate()?;

    let layers_dir = source.join(LAYERS_DIR);
    let entries = fs::read_dir(&layers_dir).map_err(|e| Error::io(&layers_dir, e))?;
    let mut found = vec![None; manifest.num_layers];
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&layers_dir, e))?;
        let name = entry.file_name();
        let Some(index) = name.to_str().and_then(parse_layer_file_name) else {
            continue;
        };
        if index >= manifest.num_layers || found[index].is_some() {
            return Err(Error::UnexpectedLayerFile {
                path: entry.path(),
                num_layers: manifest.num_layers,
            });
        }
        found[index] = Some(entry.path());
    }

    let mut layers = Vec::with_capacity(manifest.num_layers);
    for (l, path) in found.into_iter().enumerate() {
        let path = path.ok_or_else(|| Error::MissingLayerFile {
            layer: l,
            path: layers_dir.join(layer_file_name(l)),
        })?;
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m = ReprMatrix::decode(&bytes, &path, Some((manifest.num_samples, manifest.hidden_sizes[l])))?;
        layers.push(m);
    }

    let bundle = ReprBundle { manifest, layers };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_bundle() -> ReprBundle {
        let a = ReprMatrix::new(3, 4, (0..12).map(|v| v as f32 * 0.5).collect()).unwrap();
        let b = ReprMatrix::new(3, 4, (0..12).map(|v| (v as f32).sin()).collect()).unwrap();
        ReprBundle::from_layers("toy", "unit", vec![a, b]).unwrap()
    }

    #[test]
    fn writes_expected_layout() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("b");
        write_bundle(&small_bundle(), &dest).unwrap();
        assert!(dest.join("manifest.json").is_file());
        assert!(dest.join("layers/layer_000.bin").is_file());
        assert!(dest.join("layers/layer_001.bin").is_file());
        let bytes = fs::read(dest.join("layers/layer_000.bin")).unwrap();
        assert_eq!(bytes.len(), HEADER_SIZE + 12 * 4);
        assert_eq!(&bytes[..4], b"RDBM");
        assert_eq!(read_bundle(&dest).unwrap(), small_bundle());
    }

    #[test]
    fn nan_rejected_before_writing() {
        let mut b = small_bundle();
        b.layers[1] = ReprMatrix::new(3, 4, vec![f32::NAN; 12]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("b");
        assert!(matches!(write_bundle(&b, &dest), Err(Error::NonFinite { layer: 1, .. })));
        assert!(!dest.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn single_sample_rejected() {
        let m = ReprMatrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            ReprBundle::from_layers("m", "d", vec![m]),
            Err(Error::TooFewSamples(1))
        ));
    }

    #[test]
    fn eleven_values_for_three_by_four_is_truncation() {
        let mut bytes = ReprMatrix::new(3, 4, vec![0.0; 12]).unwrap().encode();
        bytes.truncate(bytes.len() - 4);
        let err = ReprMatrix::decode(&bytes, Path::new("x"), Some((3, 4))).unwrap_err();
        assert!(matches!(err, Error::Truncated { expected: 72, actual: 68, .. }));
    }

    #[test]
    fn header_errors_are_distinct() {
        let good = ReprMatrix::new(3, 4, vec![0.0; 12]).unwrap().encode();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            ReprMatrix::decode(&bad_magic, Path::new("x"), None),
            Err(Error::BadMagic { .. })
        ));
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(
            ReprMatrix::decode(&bad_version, Path::new("x"), None),
            Err(Error::UnsupportedVersion { version: 2, .. })
        ));
        assert!(matches!(
            ReprMatrix::decode(&good, Path::new("x"), Some((4, 3))),
            Err(Error::HeaderMismatch { .. })
        ));
        let mut extra = good;
        extra.extend_from_slice(&[0; 4]);
        assert!(matches!(
            ReprMatrix::decode(&extra, Path::new("x"), None),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn missing_and_stray_layer_files() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("b");
        write_bundle(&small_bundle(), &dest).unwrap();

        fs::copy(dest.join("layers/layer_001.bin"), dest.join("layers/layer_002.bin")).unwrap();
        assert!(matches!(read_bundle(&dest), Err(Error::UnexpectedLayerFile { .. })));
        fs::remove_file(dest.join("layers/layer_002.bin")).unwrap();

        fs::remove_file(dest.join("layers/layer_001.bin")).unwrap();
        assert!(matches!(read_bundle(&dest), Err(Error::MissingLayerFile { layer: 1, .. })));
    }

    #[test]
    fn rewrite_replaces_existing_bundle_only() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("b");
        write_bundle(&small_bundle(), &dest).unwrap();
        write_bundle(&small_bundle(), &dest).unwrap();
        assert_eq!(read_bundle(&dest).unwrap(), small_bundle());

        let other = dir.path().join("other");
        fs::create_dir(&other).unwrap();
        fs::write(other.join("keep.txt"), "x").unwrap();
        assert!(write_bundle(&small_bundle(), &other).is_err());
        assert!(other.join("keep.txt").is_file());
    }

    #[test]
    fn manifest_field_names() {
        let json = serde_json::to_value(&small_bundle().manifest).unwrap();
        let obj = json.as_object().unwrap();
        for key in [
            "schema_version",
            "model_id",
            "dataset_id",
            "num_layers",
            "num_samples",
            "hidden_sizes",
            "token_position",
            "element_type",
            "notes",
        ] {
            assert!(obj.contains_key(key), "{key}");
        }
        assert_eq!(obj["token_position"], "last");
        assert_eq!(obj["element_type"], "f32");
    }
}
