use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};

macro_rules! keyword_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal $(| $alias:literal)*),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                let up = s.trim().to_ascii_uppercase();
                $(if up == $text $(|| up == $alias)* { return Ok($name::$variant); })+
                Err(format!(concat!("invalid ", stringify!($name), " `{}`"), s))
            }
        }
    };
}

keyword_enum!(BreastSide { Left => "LEFT" | "L", Right => "RIGHT" | "R" });
keyword_enum!(View { Cc => "CC", Mlo => "MLO" });
keyword_enum!(LabelSource { Biopsy => "BIOPSY", Birads => "BIRADS" | "BI-RADS" });
keyword_enum!(Pathology {
    Benign => "BENIGN" | "BENIGN_WITHOUT_CALLBACK",
    Malignant => "MALIGNANT",
});
keyword_enum!(Split { Train => "TRAIN" | "TRAINING", Val => "VAL" | "VALIDATION", Test => "TEST" });
keyword_enum!(LesionKind { Mass => "MASS", Calcification => "CALCIFICATION" | "CALC", Other => "OTHER" });
keyword_enum!(
    /// Manifest flavour: biopsy-labelled scanned film or BI-RADS-labelled digital.
    Schema { CbisStyle => "CBIS_STYLE" | "CBIS", VindrStyle => "VINDR_STYLE" | "VINDR" }
);
keyword_enum!(LabelScheme { Biopsy => "BIOPSY_SCHEME" | "BIOPSY", Birads => "BIRADS_SCHEME" | "BIRADS" });

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl Schema {
    pub fn label_scheme(self) -> LabelScheme {
        match self {
            Schema::CbisStyle => LabelScheme::Biopsy,
            Schema::VindrStyle => LabelScheme::Birads,
        }
    }

    pub fn label_source(self) -> LabelSource {
        match self {
            Schema::CbisStyle => LabelSource::Biopsy,
            Schema::VindrStyle => LabelSource::Birads,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitDepth {
    #[serde(rename = "8")]
    Eight,
    #[serde(rename = "16")]
    Sixteen,
}

impl BitDepth {
    pub fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    pub fn max_value(self) -> u32 {
        (1u32 << self.bits()) - 1
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        match bits {
            8 => Some(BitDepth::Eight),
            16 => Some(BitDepth::Sixteen),
            _ => None,
        }
    }
}

/// `(exam_id, breast_side, view)`, unique within a manifest. Displays as
/// `exam_id|SIDE|VIEW`, the id format used in score files.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ViewKey {
    pub exam_id: String,
    pub side: BreastSide,
    pub view: View,
}

impl ViewKey {
    pub fn new(exam_id: impl Into<String>, side: BreastSide, view: View) -> Self {
        Self {
            exam_id: exam_id.into(),
            side,
            view,
        }
    }

    /// `exam_id|SIDE`, shared by the two views of one breast.
    pub fn breast_key(&self) -> String {
        format!("{}|{}", self.exam_id, self.side)
    }
}

impl fmt::Display for ViewKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", self.exam_id, self.side, self.view)
    }
}

/// Binary task label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExamLabel {
    #[serde(rename = "NORMAL")]
    Normal = 0,
    #[serde(rename = "ABNORMAL")]
    Abnormal = 1,
}

impl ExamLabel {
    pub fn from_bit(b: u8) -> Self {
        if b == 0 {
            ExamLabel::Normal
        } else {
            ExamLabel::Abnormal
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }
}

/// One mammographic image with its labels and geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub exam_id: String,
    pub breast_side: BreastSide,
    pub view: View,
    pub image_path: PathBuf,
    pub bit_depth: BitDepth,
    /// (height, width) in pixels.
    pub raw_size: (usize, usize),
    pub label_source: LabelSource,
    pub pathology: Option<Pathology>,
    pub birads: Option<u8>,
    pub split: Split,
}

impl ViewRecord {
    pub fn key(&self) -> ViewKey {
        ViewKey::new(self.exam_id.clone(), self.breast_side, self.view)
    }

    /// Checks the label invariants: exactly one of pathology / birads, in
    /// agreement with `label_source`, birads within 1..=5.
    pub fn validate_labels(&self) -> std::result::Result<(), String> {
        match (self.label_source, self.pathology, self.birads) {
            (LabelSource::Biopsy, Some(_), None) => Ok(()),
            (LabelSource::Birads, None, Some(b)) if (1..=5).contains(&b) => Ok(()),
            (LabelSource::Birads, None, Some(b)) => Err(format!("birads {b} outside 1..=5")),
            (src, p, b) => Err(format!(
                "label_source {src} with pathology {p:?} and birads {b:?}"
            )),
        }
    }
}

/// Maps a record to the binary task under `scheme`.
pub fn map_binary_label(record: &ViewRecord, scheme: LabelScheme) -> Result<u8> {
    let mismatch = || DatasetError::SchemeMismatch {
        key: record.key().to_string(),
        found: record.label_source,
        scheme,
    };
    match scheme {
        LabelScheme::Biopsy => match (record.label_source, record.pathology) {
            (LabelSource::Biopsy, Some(Pathology::Malignant)) => Ok(1),
            (LabelSource::Biopsy, Some(Pathology::Benign)) => Ok(0),
            _ => Err(mismatch()),
        },
        LabelScheme::Birads => match (record.label_source, record.birads) {
            (LabelSource::Birads, Some(1 | 2)) => Ok(0),
            (LabelSource::Birads, Some(3..=5)) => Ok(1),
            _ => Err(mismatch()),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LesionGeometry {
    Mask(PathBuf),
    BBox(BBox),
}

/// Biopsy outcome for film-style corpora, BI-RADS 3–5 for digital ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Severity {
    Benign,
    Malignant,
    Birads(u8),
}

impl FromStr for Severity {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let up = s.trim().to_ascii_uppercase();
        match up.as_str() {
            "BENIGN" | "BENIGN_WITHOUT_CALLBACK" => Ok(Severity::Benign),
            "MALIGNANT" => Ok(Severity::Malignant),
            _ => {
                let digits = up.trim_start_matches("BI-RADS").trim_start_matches("BIRADS").trim();
                match digits.parse::<u8>() {
                    Ok(b @ 3..=5) => Ok(Severity::Birads(b)),
                    _ => Err(format!("invalid severity `{s}`")),
                }
            }
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::Benign => f.write_str("BENIGN"),
            Severity::Malignant => f.write_str("MALIGNANT"),
            Severity::Birads(b) => write!(f, "BIRADS{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionAnnotation {
    pub lesion_id: String,
    pub owner: ViewKey,
    pub kind: LesionKind,
    pub severity: Severity,
    pub geometry: LesionGeometry,
}

/// Paired CC and MLO views of one breast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamPair {
    pub exam_id: String,
    pub breast_side: BreastSide,
    pub cc: ViewRecord,
    pub mlo: ViewRecord,
    pub label: ExamLabel,
}

impl ExamPair {
    pub fn breast_key(&self) -> String {
        format!("{}|{}", self.exam_id, self.breast_side)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(source: LabelSource, pathology: Option<Pathology>, birads: Option<u8>) -> ViewRecord {
        ViewRecord {
            exam_id: "e".into(),
            breast_side: BreastSide::Left,
            view: View::Cc,
            image_path: "x.png".into(),
            bit_depth: BitDepth::Sixteen,
            raw_size: (10, 10),
            label_source: source,
            pathology,
            birads,
            split: Split::Train,
        }
    }

    #[test]
    fn birads_grouping() {
        let expected = [(1, 0), (2, 0), (3, 1), (4, 1), (5, 1)];
        for (b, want) in expected {
            let r = record(LabelSource::Birads, None, Some(b));
            assert_eq!(map_binary_label(&r, LabelScheme::Birads).unwrap(), want);
        }
    }

    #[test]
    fn biopsy_mapping() {
        let r = record(LabelSource::Biopsy, Some(Pathology::Malignant), None);
        assert_eq!(map_binary_label(&r, LabelScheme::Biopsy).unwrap(), 1);
        let r = record(LabelSource::Biopsy, Some(Pathology::Benign), None);
        assert_eq!(map_binary_label(&r, LabelScheme::Biopsy).unwrap(), 0);
    }

    #[test]
    fn scheme_mismatch() {
        let r = record(LabelSource::Biopsy, Some(Pathology::Benign), None);
        assert!(matches!(
            map_binary_label(&r, LabelScheme::Birads),
            Err(DatasetError::SchemeMismatch { .. })
        ));
    }

    #[test]
    fn keyword_parsing() {
        assert_eq!("l".parse::<BreastSide>().unwrap(), BreastSide::Left);
        assert_eq!("Training".parse::<Split>().unwrap(), Split::Train);
        assert_eq!("BI-RADS 4".parse::<Severity>().unwrap(), Severity::Birads(4));
        assert_eq!("5".parse::<Severity>().unwrap(), Severity::Birads(5));
        assert!("2".parse::<Severity>().is_err());
        assert!("UP".parse::<View>().is_err());
    }

    #[test]
    fn view_key_display() {
        let k = ViewKey::new("P_001", BreastSide::Right, View::Mlo);
        assert_eq!(k.to_string(), "P_001|RIGHT|MLO");
        assert_eq!(k.breast_key(), "P_001|RIGHT");
    }
}
