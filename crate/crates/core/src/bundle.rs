//! Dataset bundles: the on-disk unit of instances, segments and their activations.
//!
//! A bundle directory holds `manifest.json` plus two headerless row-major
//! little-endian `f32` matrices, `instances.f32` (N×D) and `segments.f32`
//! (M×D). Matrices are widened to `f64` in memory; writing narrows them back,
//! so any bundle whose values came from `f32` round-trips bit-exactly.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INSTANCES_FILE: &str = "instances.f32";
pub const SEGMENTS_FILE: &str = "segments.f32";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub split: Split,
    /// Index into [`DatasetBundle::classes`].
    pub label: usize,
    #[serde(rename = "image", default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords2d: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub instance_id: String,
    /// `(x, y, w, h)` in pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    #[serde(rename = "image", default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
}

/// A named group of segments and its centroid in the aligned activation space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub name: String,
    pub segment_ids: Vec<String>,
    pub vector: Array1<f64>,
}

/// One entry of a concepts file: a name and the segments that define it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub name: String,
    pub segment_ids: Vec<String>,
}

/// Read a JSON list of [`ConceptSpec`].
pub fn load_concept_specs(path: impl AsRef<Path>) -> Result<Vec<ConceptSpec>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// An ordered pair of distinct classes; positive disparity favors `positive`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassPair {
    pub negative: usize,
    pub positive: usize,
}

impl ClassPair {
    pub fn new(negative: usize, positive: usize, num_classes: usize) -> Result<Self> {
        if negative == positive {
            return Err(Error::param("pair", "negative and positive classes must differ"));
        }
        if negative >= num_classes || positive >= num_classes {
            return Err(Error::param(
                "pair",
                format!("class index out of range for {num_classes} classes"),
            ));
        }
        Ok(Self { negative, positive })
    }

    pub fn swapped(self) -> Self {
        Self { negative: self.positive, positive: self.negative }
    }

    pub fn contains(&self, class: usize) -> bool {
        class == self.negative || class == self.positive
    }
}

/// Confusion case of an instance relative to a [`ClassPair`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConfusionCase {
    TN,
    FP,
    FN,
    TP,
}

impl ConfusionCase {
    pub const ALL: [ConfusionCase; 4] =
        [ConfusionCase::TN, ConfusionCase::FP, ConfusionCase::FN, ConfusionCase::TP];

    pub fn from_outcome(true_positive_class: bool, predicted_positive: bool) -> Self {
        match (true_positive_class, predicted_positive) {
            (false, false) => ConfusionCase::TN,
            (false, true) => ConfusionCase::FP,
            (true, false) => ConfusionCase::FN,
            (true, true) => ConfusionCase::TP,
        }
    }

    pub fn is_error(self) -> bool {
        matches!(self, ConfusionCase::FP | ConfusionCase::FN)
    }
}

impl fmt::Display for ConfusionCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub dim: usize,
    pub classes: Vec<String>,
    pub instances: Vec<Instance>,
    pub segments: Vec<Segment>,
    pub instance_matrix: Array2<f64>,
    pub segment_matrix: Array2<f64>,
}

impl DatasetBundle {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn instance_position(&self, id: &str) -> Option<usize> {
        self.instances.iter().position(|inst| inst.id == id)
    }

    pub fn segment_position(&self, id: &str) -> Option<usize> {
        self.segments.iter().position(|seg| seg.id == id)
    }

    /// Row indices of the instances in `split`, in bundle order.
    pub fn split_rows(&self, split: Split) -> Vec<usize> {
        self.instances
            .iter()
            .enumerate()
            .filter(|(_, inst)| inst.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.instances.iter().map(|inst| inst.label).collect()
    }

    pub fn class_index(&self, name_or_index: &str) -> Option<usize> {
        self.classes
            .iter()
            .position(|c| c == name_or_index)
            .or_else(|| name_or_index.parse::<usize>().ok().filter(|&i| i < self.classes.len()))
    }
}

/// A single invariant violation found by [`validate_bundle`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub entity: String,
    pub message: String,
}

impl Violation {
    fn new(entity: impl Into<String>, message: impl Into<String>) -> Self {
        Self { entity: entity.into(), message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

impl From<Violation> for Error {
    fn from(v: Violation) -> Self {
        Error::InvalidEntity { entity: v.entity, message: v.message }
    }
}

/// Check every bundle invariant; an empty result means the bundle is valid.
pub fn validate_bundle(bundle: &DatasetBundle) -> Vec<Violation> {
    let mut out = Vec::new();
    let k = bundle.classes.len();

    if bundle.dim == 0 {
        out.push(Violation::new("manifest", "dim must be positive"));
    }
    if k == 0 {
        out.push(Violation::new("manifest", "classes must not be empty"));
    }

    let mut seen = HashSet::new();
    for inst in &bundle.instances {
        if !seen.insert(inst.id.as_str()) {
            out.push(Violation::new(&inst.id, "duplicate instance id"));
        }
        if inst.label >= k {
            out.push(Violation::new(
                &inst.id,
                format!("label {} out of range for {k} classes", inst.label),
            ));
        }
        if let Some(c) = inst.coords2d {
            if !c.iter().all(|v| v.is_finite()) {
                out.push(Violation::new(&inst.id, "coords2d not finite"));
            }
        }
    }

    let instance_ids: HashSet<&str> = bundle.instances.iter().map(|i| i.id.as_str()).collect();
    let mut seen = HashSet::new();
    for seg in &bundle.segments {
        if !seen.insert(seg.id.as_str()) {
            out.push(Violation::new(&seg.id, "duplicate segment id"));
        }
        if !instance_ids.contains(seg.instance_id.as_str()) {
            out.push(Violation::new(
                &seg.id,
                format!("references missing instance '{}'", seg.instance_id),
            ));
        }
        if let Some([_, _, w, h]) = seg.bbox {
            if !(w > 0.0 && h > 0.0) {
                out.push(Violation::new(&seg.id, "bbox width and height must be positive"));
            }
        }
    }

    check_matrix(&mut out, &bundle.instance_matrix, bundle.dim, bundle.instances.iter().map(|i| &i.id), "instance");
    check_matrix(&mut out, &bundle.segment_matrix, bundle.dim, bundle.segments.iter().map(|s| &s.id), "segment");
    out
}

fn check_matrix<'a>(
    out: &mut Vec<Violation>,
    matrix: &Array2<f64>,
    dim: usize,
    ids: impl ExactSizeIterator<Item = &'a String>,
    kind: &str,
) {
    let rows = ids.len();
    if matrix.nrows() != rows || matrix.ncols() != dim {
        out.push(Violation::new(
            format!("{kind}_matrix"),
            format!(
                "shape {}x{} does not match {rows} {kind}s of dim {dim}",
                matrix.nrows(),
                matrix.ncols()
            ),
        ));
        return;
    }
    for (row, id) in matrix.rows().into_iter().zip(ids) {
        if row.iter().any(|v| !v.is_finite()) {
            out.push(Violation::new(id, format!("{kind} activation contains non-finite values")));
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dim: usize,
    classes: Vec<String>,
    instances: Vec<Instance>,
    #[serde(default)]
    segments: Vec<Segment>,
}

/// Load and fully validate a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::entity(
            MANIFEST_FILE,
            format!("unsupported version {} (expected {FORMAT_VERSION})", manifest.version),
        ));
    }
    if manifest.dim == 0 {
        return Err(Error::entity(MANIFEST_FILE, "dim must be positive"));
    }

    let instance_matrix =
        read_matrix(&dir.join(INSTANCES_FILE), manifest.dim, manifest.instances.len())?;
    let segment_matrix =
        read_matrix(&dir.join(SEGMENTS_FILE), manifest.dim, manifest.segments.len())?;

    let bundle = DatasetBundle {
        dim: manifest.dim,
        classes: manifest.classes,
        instances: manifest.instances,
        segments: manifest.segments,
        instance_matrix,
        segment_matrix,
    };
    if let Some(first) = validate_bundle(&bundle).into_iter().next() {
        return Err(first.into());
    }
    Ok(bundle)
}

fn read_matrix(path: &Path, dim: usize, rows: usize) -> Result<Array2<f64>> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        // An empty segment list may omit its matrix file.
        Err(e) if e.kind() == std::io::ErrorKind::NotFound && rows == 0 => Vec::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    let row_bytes = dim * 4;
    if bytes.len() % row_bytes != 0 {
        return Err(Error::entity(
            name,
            format!("byte length {} not divisible by row size {row_bytes} (dim {dim})", bytes.len()),
        ));
    }
    let found = bytes.len() / row_bytes;
    if found != rows {
        return Err(Error::entity(
            name,
            format!("holds {found} rows but the manifest declares {rows}"),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Array2::from_shape_vec((rows, dim), values).expect("shape checked above"))
}

/// Write a bundle directory, creating it if needed. Values are narrowed to `f32`.
pub fn write_bundle(bundle: &DatasetBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        version: FORMAT_VERSION,
        dim: bundle.dim,
        classes: bundle.classes.clone(),
        instances: bundle.instances.clone(),
        segments: bundle.segments.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    write_matrix(&dir.join(INSTANCES_FILE), &bundle.instance_matrix)?;
    write_matrix(&dir.join(SEGMENTS_FILE), &bundle.segment_matrix)?;
    Ok(())
}

fn write_matrix(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(matrix.len() * 4);
    for v in matrix.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
