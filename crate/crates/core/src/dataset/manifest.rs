use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::types::*;
use super::{DatasetError, Result};
use crate::raster::image_dimensions;

pub const VIEW_COLUMNS: [&str; 9] = [
    "exam_id",
    "breast_side",
    "view",
    "image_path",
    "bit_depth",
    "label_source",
    "pathology",
    "birads",
    "split",
];

pub const LESION_COLUMNS: [&str; 11] = [
    "lesion_id",
    "exam_id",
    "breast_side",
    "view",
    "kind",
    "severity",
    "mask_path",
    "bbox_x",
    "bbox_y",
    "bbox_w",
    "bbox_h",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RejectReason {
    BadField,
    LabelInvariant,
    SchemeMismatch,
    UnreadableImage,
    GeometryInvariant,
    OwnerRejected,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::BadField => "BAD_FIELD",
            RejectReason::LabelInvariant => "LABEL_INVARIANT",
            RejectReason::SchemeMismatch => "SCHEME_MISMATCH",
            RejectReason::UnreadableImage => "UNREADABLE_IMAGE",
            RejectReason::GeometryInvariant => "GEOMETRY_INVARIANT",
            RejectReason::OwnerRejected => "OWNER_REJECTED",
        }
    }
}

/// A manifest row that failed validation; kept for the audit trail.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reject {
    pub file: &'static str,
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub schema: Schema,
    pub views: Vec<ViewRecord>,
    pub lesions: Vec<LesionAnnotation>,
    pub rejects: Vec<Reject>,
}

impl Manifest {
    pub fn empty(schema: Schema) -> Self {
        Self {
            schema,
            views: Vec::new(),
            lesions: Vec::new(),
            rejects: Vec::new(),
        }
    }

    pub fn view(&self, key: &ViewKey) -> Option<&ViewRecord> {
        self.views.iter().find(|v| &v.key() == key)
    }

    /// Lesions grouped by owning view.
    pub fn lesions_by_view(&self) -> HashMap<ViewKey, Vec<&LesionAnnotation>> {
        let mut m: HashMap<ViewKey, Vec<&LesionAnnotation>> = HashMap::new();
        for l in &self.lesions {
            m.entry(l.owner.clone()).or_default().push(l);
        }
        m
    }

    pub fn write_rejects(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["file", "row", "reason", "detail"])
            .map_err(|e| csv_err(path, e))?;
        for r in &self.rejects {
            w.write_record([r.file, &r.row.to_string(), r.reason.code(), &r.detail])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

fn csv_err(path: &Path, e: csv::Error) -> DatasetError {
    DatasetError::Csv {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

struct Columns {
    index: HashMap<String, usize>,
}

impl Columns {
    fn new(headers: &csv::StringRecord, file: &'static str, required: &[&'static str]) -> Result<Self> {
        let index: HashMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_ascii_lowercase(), i))
            .collect();
        for &c in required {
            if !index.contains_key(c) {
                return Err(DatasetError::MissingColumn { file, column: c });
            }
        }
        Ok(Self { index })
    }

    fn get<'r>(&self, row: &'r csv::StringRecord, name: &str) -> &'r str {
        self.index
            .get(name)
            .and_then(|&i| row.get(i))
            .map(str::trim)
            .unwrap_or("")
    }
}

fn parse<T: std::str::FromStr>(value: &str, column: &str) -> std::result::Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("invalid {column} `{value}`"))
}

fn opt<T: std::str::FromStr>(value: &str, column: &str) -> std::result::Result<Option<T>, String> {
    if value.is_empty() {
        Ok(None)
    } else {
        parse(value, column).map(Some)
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

enum RowError {
    Reject(RejectReason, String),
}

fn reject(reason: RejectReason) -> impl Fn(String) -> RowError {
    move |d| RowError::Reject(reason, d)
}

fn parse_view_row(
    cols: &Columns,
    row: &csv::StringRecord,
    base: &Path,
    schema: Schema,
) -> std::result::Result<ViewRecord, RowError> {
    let bad = reject(RejectReason::BadField);
    let exam_id = cols.get(row, "exam_id");
    if exam_id.is_empty() {
        return Err(bad("empty exam_id".into()));
    }
    let breast_side: BreastSide = cols.get(row, "breast_side").parse().map_err(&bad)?;
    let view: View = cols.get(row, "view").parse().map_err(&bad)?;
    let image_field = cols.get(row, "image_path");
    if image_field.is_empty() {
        return Err(bad("empty image_path".into()));
    }
    let image_path = resolve(base, image_field);
    let bits: u8 = parse(cols.get(row, "bit_depth"), "bit_depth").map_err(&bad)?;
    let bit_depth = BitDepth::from_bits(bits).ok_or_else(|| bad(format!("bit_depth {bits} not 8 or 16")))?;
    let label_source: LabelSource = cols.get(row, "label_source").parse().map_err(&bad)?;
    let pathology: Option<Pathology> = opt(cols.get(row, "pathology"), "pathology").map_err(&bad)?;
    let birads: Option<u8> = opt(cols.get(row, "birads"), "birads").map_err(&bad)?;
    let split: Split = cols.get(row, "split").parse().map_err(&bad)?;
    if label_source != schema.label_source() {
        return Err(RowError::Reject(
            RejectReason::SchemeMismatch,
            format!("label_source {label_source} in a {schema} manifest"),
        ));
    }
    let height: Option<usize> = opt(cols.get(row, "height"), "height").map_err(&bad)?;
    let width: Option<usize> = opt(cols.get(row, "width"), "width").map_err(&bad)?;
    let raw_size = match (height, width) {
        (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
        (Some(_), Some(_)) => return Err(bad("zero image size".into())),
        _ => image_dimensions(&image_path)
            .map_err(|e| RowError::Reject(RejectReason::UnreadableImage, e.to_string()))?,
    };
    let record = ViewRecord {
        exam_id: exam_id.to_string(),
        breast_side,
        view,
        image_path,
        bit_depth,
        raw_size,
        label_source,
        pathology,
        birads,
        split,
    };
    record
        .validate_labels()
        .map_err(reject(RejectReason::LabelInvariant))?;
    Ok(record)
}

fn parse_lesion_row(
    cols: &Columns,
    row: &csv::StringRecord,
    base: &Path,
    schema: Schema,
) -> std::result::Result<(LesionAnnotation, Option<(usize, usize)>), RowError> {
    let bad = reject(RejectReason::BadField);
    let lesion_id = cols.get(row, "lesion_id");
    if lesion_id.is_empty() {
        return Err(bad("empty lesion_id".into()));
    }
    let exam_id = cols.get(row, "exam_id");
    let side: BreastSide = cols.get(row, "breast_side").parse().map_err(&bad)?;
    let view: View = cols.get(row, "view").parse().map_err(&bad)?;
    let kind: LesionKind = cols.get(row, "kind").parse().map_err(&bad)?;
    let severity: Severity = cols.get(row, "severity").parse().map_err(&bad)?;
    let severity_ok = match schema {
        Schema::CbisStyle => matches!(severity, Severity::Benign | Severity::Malignant),
        Schema::VindrStyle => matches!(severity, Severity::Birads(_)),
    };
    if !severity_ok {
        return Err(RowError::Reject(
            RejectReason::SchemeMismatch,
            format!("severity {severity} in a {schema} manifest"),
        ));
    }
    let mask = cols.get(row, "mask_path");
    let bbox_fields = ["bbox_x", "bbox_y", "bbox_w", "bbox_h"].map(|c| cols.get(row, c));
    let any_bbox = bbox_fields.iter().any(|f| !f.is_empty());
    let geom = reject(RejectReason::GeometryInvariant);
    let (geometry, mask_dims) = match (mask.is_empty(), any_bbox) {
        (false, false) => {
            let p = resolve(base, mask);
            let dims = image_dimensions(&p)
                .map_err(|e| RowError::Reject(RejectReason::UnreadableImage, e.to_string()))?;
            (LesionGeometry::Mask(p), Some(dims))
        }
        (true, true) => {
            let mut v = [0.0f64; 4];
            for (slot, (name, field)) in v
                .iter_mut()
                .zip(["bbox_x", "bbox_y", "bbox_w", "bbox_h"].iter().zip(bbox_fields))
            {
                *slot = parse::<f64>(field, name).map_err(&bad)?;
            }
            let [x, y, w, h] = v;
            if !(x >= 0.0 && y >= 0.0 && w > 0.0 && h > 0.0) {
                return Err(geom(format!("degenerate bbox ({x}, {y}, {w}, {h})")));
            }
            (LesionGeometry::BBox(BBox { x, y, w, h }), None)
        }
        _ => return Err(geom("exactly one of mask_path / bbox_* must be set".into())),
    };
    Ok((
        LesionAnnotation {
            lesion_id: lesion_id.to_string(),
            owner: ViewKey::new(exam_id, side, view),
            kind,
            severity,
            geometry,
        },
        mask_dims,
    ))
}

fn view_key_of(cols: &Columns, row: &csv::StringRecord) -> Option<ViewKey> {
    Some(ViewKey::new(
        cols.get(row, "exam_id"),
        cols.get(row, "breast_side").parse().ok()?,
        cols.get(row, "view").parse().ok()?,
    ))
}

/// Reads a views manifest and (optionally) its lesions manifest. Paths
/// inside the files are resolved relative to the file that names them.
/// Rows that break a record invariant are reported in `rejects`; structural
/// problems (missing columns, duplicate view keys, lesions without a view)
/// fail the load.
pub fn load_manifest(views_path: &Path, lesions_path: Option<&Path>, schema: Schema) -> Result<Manifest> {
    let base = views_path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(views_path)
        .map_err(|e| csv_err(views_path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(views_path, e))?.clone();
    let cols = Columns::new(&headers, "views", &VIEW_COLUMNS)?;

    let mut manifest = Manifest::empty(schema);
    let mut keys = HashSet::new();
    let mut rejected_keys = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_err(views_path, e))?;
        match parse_view_row(&cols, &row, base, schema) {
            Ok(rec) => {
                let key = rec.key();
                if !keys.insert(key.clone()) {
                    return Err(DatasetError::DuplicateViewKey(key.to_string()));
                }
                manifest.views.push(rec);
            }
            Err(RowError::Reject(reason, detail)) => {
                if let Some(k) = view_key_of(&cols, &row) {
                    rejected_keys.insert(k);
                }
                manifest.rejects.push(Reject {
                    file: "views",
                    row: i + 1,
                    reason,
                    detail,
                });
            }
        }
    }

    let Some(lesions_path) = lesions_path else {
        return Ok(manifest);
    };
    let base = lesions_path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(lesions_path)
        .map_err(|e| csv_err(lesions_path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(lesions_path, e))?.clone();
    let cols = Columns::new(&headers, "lesions", &LESION_COLUMNS)?;
    let sizes: HashMap<ViewKey, (usize, usize)> =
        manifest.views.iter().map(|v| (v.key(), v.raw_size)).collect();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_err(lesions_path, e))?;
        let push_reject = |m: &mut Manifest, reason, detail| {
            m.rejects.push(Reject {
                file: "lesions",
                row: i + 1,
                reason,
                detail,
            })
        };
        let (lesion, mask_dims) = match parse_lesion_row(&cols, &row, base, schema) {
            Ok(v) => v,
            Err(RowError::Reject(reason, detail)) => {
                push_reject(&mut manifest, reason, detail);
                continue;
            }
        };
        let Some(&(h, w)) = sizes.get(&lesion.owner) else {
            if rejected_keys.contains(&lesion.owner) {
                push_reject(
                    &mut manifest,
                    RejectReason::OwnerRejected,
                    format!("owner view {} was rejected", lesion.owner),
                );
                continue;
            }
            return Err(DatasetError::DanglingLesion {
                lesion_id: lesion.lesion_id,
                owner: lesion.owner.to_string(),
            });
        };
        let inside = match (&lesion.geometry, mask_dims) {
            (LesionGeometry::BBox(b), _) => b.x + b.w <= w as f64 && b.y + b.h <= h as f64,
            (LesionGeometry::Mask(_), Some(d)) => d == (h, w),
            (LesionGeometry::Mask(_), None) => false,
        };
        if !inside {
            let detail = match &lesion.geometry {
                LesionGeometry::BBox(b) => format!("bbox {b:?} exceeds image {h}x{w}"),
                LesionGeometry::Mask(_) => format!("mask size {mask_dims:?} differs from image {h}x{w}"),
            };
            push_reject(&mut manifest, RejectReason::GeometryInvariant, detail);
            continue;
        }
        manifest.lesions.push(lesion);
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(content.as_bytes()).unwrap();
        p
    }

    const HEADER: &str = "exam_id,breast_side,view,image_path,bit_depth,label_source,pathology,birads,split,height,width\n";

    #[test]
    fn empty_manifest() {
        let d = tempfile::tempdir().unwrap();
        let v = write(d.path(), "v.csv", HEADER);
        let m = load_manifest(&v, None, Schema::CbisStyle).unwrap();
        assert!(m.views.is_empty());
        assert!(m.rejects.is_empty());
    }

    #[test]
    fn missing_column() {
        let d = tempfile::tempdir().unwrap();
        let v = write(d.path(), "v.csv", "exam_id,breast_side,view\n");
        assert!(matches!(
            load_manifest(&v, None, Schema::CbisStyle),
            Err(DatasetError::MissingColumn { file: "views", column: "image_path" })
        ));
    }

    #[test]
    fn rejects_are_collected_and_rows_preserved() {
        let d = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}\
             e1,LEFT,CC,a.png,16,BIRADS,,2,TRAIN,100,80\n\
             e1,LEFT,MLO,b.png,16,BIRADS,,7,TRAIN,100,80\n\
             e1,RIGHT,CC,c.png,12,BIRADS,,1,TRAIN,100,80\n\
             e1,RIGHT,MLO,d.png,16,BIOPSY,BENIGN,,TRAIN,100,80\n\
             e2,LEFT,CC,e.png,16,BIRADS,,4,TEST,100,80\n"
        );
        let v = write(d.path(), "v.csv", &body);
        let m = load_manifest(&v, None, Schema::VindrStyle).unwrap();
        assert_eq!(m.views.len() + m.rejects.len(), 5);
        assert_eq!(m.views.len(), 2);
        let reasons: Vec<_> = m.rejects.iter().map(|r| r.reason).collect();
        assert_eq!(
            reasons,
            [RejectReason::LabelInvariant, RejectReason::BadField, RejectReason::SchemeMismatch]
        );
        let out = d.path().join("rejects.csv");
        m.write_rejects(&out).unwrap();
        let text = std::fs::read_to_string(out).unwrap();
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn duplicate_view_key() {
        let d = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}e1,LEFT,CC,a.png,16,BIRADS,,2,TRAIN,10,10\ne1,L,CC,b.png,16,BIRADS,,2,TRAIN,10,10\n"
        );
        let v = write(d.path(), "v.csv", &body);
        assert!(matches!(
            load_manifest(&v, None, Schema::VindrStyle),
            Err(DatasetError::DuplicateViewKey(_))
        ));
    }

    #[test]
    fn lesions_are_validated() {
        let d = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}e1,LEFT,CC,a.png,16,BIOPSY,MALIGNANT,,TRAIN,100,80\ne1,LEFT,MLO,a.png,16,BIOPSY,,,TRAIN,100,80\n"
        );
        let v = write(d.path(), "v.csv", &body);
        let lh = LESION_COLUMNS.join(",");
        let lesions = format!(
            "{lh}\n\
             l1,e1,LEFT,CC,MASS,MALIGNANT,,10,20,30,40\n\
             l2,e1,LEFT,CC,MASS,MALIGNANT,,60,20,30,40\n\
             l3,e1,LEFT,CC,CALCIFICATION,BIRADS4,,1,1,5,5\n\
             l4,e1,LEFT,MLO,MASS,BENIGN,,1,1,5,5\n"
        );
        let l = write(d.path(), "l.csv", &lesions);
        let m = load_manifest(&v, Some(&l), Schema::CbisStyle).unwrap();
        assert_eq!(m.views.len(), 1);
        assert_eq!(m.lesions.len(), 1);
        assert_eq!(m.lesions[0].lesion_id, "l1");
        let reasons: Vec<_> = m.rejects.iter().map(|r| (r.file, r.reason)).collect();
        assert_eq!(
            reasons,
            [
                ("views", RejectReason::LabelInvariant),
                ("lesions", RejectReason::GeometryInvariant),
                ("lesions", RejectReason::SchemeMismatch),
                ("lesions", RejectReason::OwnerRejected),
            ]
        );

        let dangling = write(d.path(), "l2.csv", &format!("{lh}\nl9,e7,LEFT,CC,MASS,BENIGN,,1,1,5,5\n"));
        assert!(matches!(
            load_manifest(&v, Some(&dangling), Schema::CbisStyle),
            Err(DatasetError::DanglingLesion { .. })
        ));
    }

    #[test]
    fn size_read_from_png_header() {
        let d = tempfile::tempdir().unwrap();
        crate::raster::Raster::zeros(12, 7)
            .save_png16(&d.path().join("img.png"))
            .unwrap();
        let body = "exam_id,breast_side,view,image_path,bit_depth,label_source,pathology,birads,split\n\
                    e1,LEFT,CC,img.png,16,BIRADS,,1,TEST\n\
                    e1,LEFT,MLO,missing.png,16,BIRADS,,1,TEST\n";
        let v = write(d.path(), "v.csv", body);
        let m = load_manifest(&v, None, Schema::VindrStyle).unwrap();
        assert_eq!(m.views[0].raw_size, (12, 7));
        assert_eq!(m.rejects[0].reason, RejectReason::UnreadableImage);
    }
}
