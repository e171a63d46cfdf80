//! COCO-style annotation documents.
//!
//! A document is loaded into a [`DatasetIndex`], which keeps the records in
//! file order together with lookup tables keyed by id. Fields this crate does
//! not interpret (`info`, `licenses`, per-record extras) are carried through
//! untouched so that augmented datasets stay consumable by other tooling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::rle::Rle;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed annotation document{}: {message}", record_suffix(*.record))]
    MalformedDocument { record: Option<u64>, message: String },
    #[error("annotation {annotation_id} references missing image {image_id}")]
    DanglingReference { annotation_id: u64, image_id: u64 },
}

fn record_suffix(record: Option<u64>) -> String {
    record.map(|id| format!(" (record {id})")).unwrap_or_default()
}

fn malformed(record: Option<u64>, message: impl Into<String>) -> AnnotationError {
    AnnotationError::MalformedDocument {
        record,
        message: message.into(),
    }
}

/// Axis-aligned box `(x, y, w, h)` in pixels, serialized as a 4-array.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ImageRecord {
    pub fn new(id: u64, file_name: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            id,
            file_name: file_name.into(),
            width,
            height,
            extra: Map::new(),
        }
    }
}

/// Polygon list (flat `x, y, x, y, ...` per polygon) or an RLE mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle(Rle),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub segmentation: Segmentation,
    pub bbox: BBox,
    pub area: f64,
    #[serde(
        default,
        serialize_with = "ser_crowd_flag",
        deserialize_with = "de_crowd_flag"
    )]
    pub iscrowd: bool,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn ser_crowd_flag<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*v))
}

fn de_crowd_flag<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    match Value::deserialize(d)? {
        Value::Bool(b) => Ok(b),
        Value::Number(n) if n.as_u64() == Some(0) => Ok(false),
        Value::Number(n) if n.as_u64() == Some(1) => Ok(true),
        other => Err(de::Error::custom(format!(
            "iscrowd must be 0 or 1, got {other}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Category {
    pub fn new(id: u64, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
            extra: Map::new(),
        }
    }
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    images: &'a [ImageRecord],
    annotations: &'a [InstanceAnnotation],
    categories: &'a [Category],
    #[serde(flatten)]
    extra: &'a Map<String, Value>,
}

/// In-memory dataset with per-image annotation lookup.
///
/// Fields are public so callers can build or edit datasets; call
/// [`DatasetIndex::reindex`] after editing so the lookup tables follow.
#[derive(Debug, Clone, Default)]
pub struct DatasetIndex {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<InstanceAnnotation>,
    pub categories: Vec<Category>,
    /// Top-level document keys other than the three above.
    pub extra: Map<String, Value>,
    by_image: BTreeMap<u64, Vec<u64>>,
    image_pos: HashMap<u64, usize>,
    ann_pos: HashMap<u64, usize>,
}

impl DatasetIndex {
    /// Build an index, rejecting duplicate ids and dangling image references.
    pub fn new(
        images: Vec<ImageRecord>,
        annotations: Vec<InstanceAnnotation>,
        categories: Vec<Category>,
    ) -> Result<Self, AnnotationError> {
        let mut seen = HashSet::new();
        for img in &images {
            if !seen.insert(img.id) {
                return Err(malformed(Some(img.id), "duplicate image id"));
            }
        }
        let mut seen_ann = HashSet::new();
        for ann in &annotations {
            if !seen_ann.insert(ann.id) {
                return Err(malformed(Some(ann.id), "duplicate annotation id"));
            }
            if !seen.contains(&ann.image_id) {
                return Err(AnnotationError::DanglingReference {
                    annotation_id: ann.id,
                    image_id: ann.image_id,
                });
            }
        }
        let mut index = Self {
            images,
            annotations,
            categories,
            ..Self::default()
        };
        index.reindex();
        Ok(index)
    }

    /// Rebuild lookup tables from the record lists.
    pub fn reindex(&mut self) {
        self.by_image = group_by_image(&self.annotations);
        self.image_pos = self
            .images
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id, i))
            .collect();
        self.ann_pos = self
            .annotations
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id, i))
            .collect();
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.image_pos.get(&id).map(|&i| &self.images[i])
    }

    pub fn annotation(&self, id: u64) -> Option<&InstanceAnnotation> {
        self.ann_pos.get(&id).map(|&i| &self.annotations[i])
    }

    /// Annotation ids of one image, in document order.
    pub fn annotation_ids_for(&self, image_id: u64) -> &[u64] {
        self.by_image
            .get(&image_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn annotations_for(&self, image_id: u64) -> Vec<&InstanceAnnotation> {
        self.annotation_ids_for(image_id)
            .iter()
            .filter_map(|id| self.annotation(*id))
            .collect()
    }

    pub fn category_name(&self, id: u64) -> Option<&str> {
        self.categories
            .iter()
            .find(|c| c.id == id)
            .map(|c| c.name.as_str())
    }

    pub fn max_annotation_id(&self) -> u64 {
        self.annotations.iter().map(|a| a.id).max().unwrap_or(0)
    }

    pub fn max_image_id(&self) -> u64 {
        self.images.iter().map(|a| a.id).max().unwrap_or(0)
    }

    /// Equality of content ignoring record order.
    pub fn content_eq(&self, other: &Self) -> bool {
        fn sorted<T: Clone>(v: &[T], key: impl Fn(&T) -> u64) -> Vec<T> {
            let mut v = v.to_vec();
            v.sort_by_key(|r| key(r));
            v
        }
        sorted(&self.images, |r| r.id) == sorted(&other.images, |r| r.id)
            && sorted(&self.annotations, |r| r.id) == sorted(&other.annotations, |r| r.id)
            && sorted(&self.categories, |r| r.id) == sorted(&other.categories, |r| r.id)
            && self.extra == other.extra
    }

    pub fn from_json_str(text: &str) -> Result<Self, AnnotationError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| malformed(None, e.to_string()))?;
        Self::from_value(doc)
    }

    fn from_value(doc: Value) -> Result<Self, AnnotationError> {
        let Value::Object(mut top) = doc else {
            return Err(malformed(None, "top level is not an object"));
        };
        let images: Vec<ImageRecord> = take_records(&mut top, "images", true)?;
        let annotations: Vec<InstanceAnnotation> = take_records(&mut top, "annotations", false)?;
        let categories: Vec<Category> = take_records(&mut top, "categories", false)?;
        let mut index = Self::new(images, annotations, categories)?;
        index.extra = top;
        Ok(index)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.document()).expect("dataset serializes to JSON")
    }

    fn document(&self) -> DocumentOut<'_> {
        DocumentOut {
            images: &self.images,
            annotations: &self.annotations,
            categories: &self.categories,
            extra: &self.extra,
        }
    }
}

fn group_by_image(annotations: &[InstanceAnnotation]) -> BTreeMap<u64, Vec<u64>> {
    let mut by_image: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for ann in annotations {
        by_image.entry(ann.image_id).or_default().push(ann.id);
    }
    by_image
}

fn take_records<T: serde::de::DeserializeOwned>(
    top: &mut Map<String, Value>,
    key: &str,
    required: bool,
) -> Result<Vec<T>, AnnotationError> {
    let raw = match top.remove(key) {
        Some(Value::Array(items)) => items,
        Some(_) => return Err(malformed(None, format!("`{key}` is not an array"))),
        None if required => return Err(malformed(None, format!("missing `{key}`"))),
        None => return Ok(Vec::new()),
    };
    raw.into_iter()
        .enumerate()
        .map(|(i, item)| {
            let id = item.get("id").and_then(Value::as_u64);
            serde_json::from_value(item).map_err(|e| {
                malformed(id, format!("{key}[{i}]: {e}"))
            })
        })
        .collect()
}

/// Load a COCO-style annotation file.
pub fn parse_dataset(path: impl AsRef<Path>) -> Result<DatasetIndex, AnnotationError> {
    let path = path.as_ref();
    let io_err = |source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let doc: Value = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| malformed(None, e.to_string()))?;
    DatasetIndex::from_value(doc)
}

/// Write `index` as a COCO-style annotation file.
pub fn serialize_dataset(index: &DatasetIndex, out: impl AsRef<Path>) -> Result<(), AnnotationError> {
    let path = out.as_ref();
    let io_err = |source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, &index.document())
        .map_err(|e| io_err(std::io::Error::other(e)))?;
    writer.flush().map_err(io_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordRef {
    Image(u64),
    Annotation(u64),
    Category(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    NonPositiveImageSize,
    EmptyFileName,
    DuplicateImageId,
    DuplicateAnnotationId,
    DuplicateCategoryId,
    DanglingImage { image_id: u64 },
    UnknownCategory { category_id: u64 },
    EmptySegmentation,
    DegeneratePolygon { polygon: usize, vertices: usize },
    InvalidRle(String),
    RleSizeMismatch { size: [u32; 2] },
    BboxOutOfBounds { bbox: BBox },
    NonPositiveArea { area: f64 },
    IndexInconsistent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub record: RecordRef,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    fn push(&mut self, record: RecordRef, kind: ViolationKind) {
        self.violations.push(Violation { record, kind });
    }
}

const BBOX_SLACK: f64 = 1e-6;

/// List every invariant violation in `index`.
pub fn validate(index: &DatasetIndex) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut images: HashMap<u64, &ImageRecord> = HashMap::new();
    for img in &index.images {
        let rec = RecordRef::Image(img.id);
        if images.insert(img.id, img).is_some() {
            report.push(rec, ViolationKind::DuplicateImageId);
        }
        if img.width == 0 || img.height == 0 {
            report.push(rec, ViolationKind::NonPositiveImageSize);
        }
        if img.file_name.is_empty() {
            report.push(rec, ViolationKind::EmptyFileName);
        }
    }
    let mut categories = HashSet::new();
    for cat in &index.categories {
        if !categories.insert(cat.id) {
            report.push(RecordRef::Category(cat.id), ViolationKind::DuplicateCategoryId);
        }
    }
    let mut ann_ids = HashSet::new();
    for ann in &index.annotations {
        let rec = RecordRef::Annotation(ann.id);
        if !ann_ids.insert(ann.id) {
            report.push(rec, ViolationKind::DuplicateAnnotationId);
        }
        if !categories.contains(&ann.category_id) {
            report.push(
                rec,
                ViolationKind::UnknownCategory {
                    category_id: ann.category_id,
                },
            );
        }
        if !(ann.area > 0.0) {
            report.push(rec, ViolationKind::NonPositiveArea { area: ann.area });
        }
        let image = images.get(&ann.image_id);
        if image.is_none() {
            report.push(
                rec,
                ViolationKind::DanglingImage {
                    image_id: ann.image_id,
                },
            );
        }
        match &ann.segmentation {
            Segmentation::Polygons(polys) => {
                if polys.is_empty() {
                    report.push(rec, ViolationKind::EmptySegmentation);
                }
                for (i, poly) in polys.iter().enumerate() {
                    if poly.len() < 6 || poly.len() % 2 != 0 {
                        report.push(
                            rec,
                            ViolationKind::DegeneratePolygon {
                                polygon: i,
                                vertices: poly.len() / 2,
                            },
                        );
                    }
                }
            }
            Segmentation::Rle(rle) => {
                if let Err(e) = rle.to_mask() {
                    report.push(rec, ViolationKind::InvalidRle(e.to_string()));
                } else if let Some(img) = image {
                    if rle.size != [img.height, img.width] {
                        report.push(rec, ViolationKind::RleSizeMismatch { size: rle.size });
                    }
                }
            }
        }
        if let Some(img) = image {
            let b = ann.bbox;
            let inside = b.x >= -BBOX_SLACK
                && b.y >= -BBOX_SLACK
                && b.w >= 0.0
                && b.h >= 0.0
                && b.x + b.w <= img.width as f64 + BBOX_SLACK
                && b.y + b.h <= img.height as f64 + BBOX_SLACK;
            if !inside {
                report.push(rec, ViolationKind::BboxOutOfBounds { bbox: b });
            }
        }
    }
    let expected = group_by_image(&index.annotations);
    if expected != index.by_image {
        let first = expected
            .keys()
            .chain(index.by_image.keys())
            .find(|k| expected.get(k) != index.by_image.get(k))
            .copied()
            .unwrap_or_default();
        report.push(RecordRef::Image(first), ViolationKind::IndexInconsistent);
    }
    report
}
