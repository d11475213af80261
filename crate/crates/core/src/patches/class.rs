use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{PatchError, Result};
use crate::dataset::{LesionKind, Severity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatchScheme {
    #[serde(rename = "CBIS5")]
    Cbis5,
    #[serde(rename = "VINDR4")]
    Vindr4,
}

impl PatchScheme {
    pub fn classes(self) -> &'static [PatchClass] {
        use PatchClass::*;
        match self {
            PatchScheme::Cbis5 => &[Background, BenignCalc, MalignantCalc, BenignMass, MalignantMass],
            PatchScheme::Vindr4 => &[Background, Birads3, Birads4, Birads5],
        }
    }

    pub fn n_classes(self) -> usize {
        self.classes().len()
    }

    /// Position of `c` in this scheme's class list, which is also the
    /// classifier output index.
    pub fn index_of(self, c: PatchClass) -> Result<usize> {
        self.classes()
            .iter()
            .position(|&x| x == c)
            .ok_or_else(|| PatchError::ClassNotInScheme(c.to_string(), self))
    }
}

impl fmt::Display for PatchScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatchScheme::Cbis5 => "CBIS5",
            PatchScheme::Vindr4 => "VINDR4",
        })
    }
}

impl FromStr for PatchScheme {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CBIS5" | "CBIS" => Ok(PatchScheme::Cbis5),
            "VINDR4" | "VINDR" => Ok(PatchScheme::Vindr4),
            _ => Err(format!("invalid patch scheme `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PatchClass {
    Background,
    BenignCalc,
    MalignantCalc,
    BenignMass,
    MalignantMass,
    Birads3,
    Birads4,
    Birads5,
}

impl PatchClass {
    pub const ALL: [PatchClass; 8] = [
        PatchClass::Background,
        PatchClass::BenignCalc,
        PatchClass::MalignantCalc,
        PatchClass::BenignMass,
        PatchClass::MalignantMass,
        PatchClass::Birads3,
        PatchClass::Birads4,
        PatchClass::Birads5,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PatchClass::Background => "BACKGROUND",
            PatchClass::BenignCalc => "BENIGN_CALC",
            PatchClass::MalignantCalc => "MALIGNANT_CALC",
            PatchClass::BenignMass => "BENIGN_MASS",
            PatchClass::MalignantMass => "MALIGNANT_MASS",
            PatchClass::Birads3 => "BIRADS3",
            PatchClass::Birads4 => "BIRADS4",
            PatchClass::Birads5 => "BIRADS5",
        }
    }
}

impl fmt::Display for PatchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatchClass {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let up = s.trim().to_ascii_uppercase();
        PatchClass::ALL
            .into_iter()
            .find(|c| c.as_str() == up)
            .ok_or_else(|| format!("invalid patch class `{s}`"))
    }
}

/// Lesion class under `scheme`. The film scheme splits by kind and
/// pathology; the digital scheme uses the BI-RADS grade alone.
pub fn class_for_lesion(kind: LesionKind, severity: Severity, scheme: PatchScheme) -> Result<PatchClass> {
    use PatchClass::*;
    let c = match (scheme, kind, severity) {
        (PatchScheme::Cbis5, LesionKind::Calcification, Severity::Benign) => BenignCalc,
        (PatchScheme::Cbis5, LesionKind::Calcification, Severity::Malignant) => MalignantCalc,
        (PatchScheme::Cbis5, LesionKind::Mass, Severity::Benign) => BenignMass,
        (PatchScheme::Cbis5, LesionKind::Mass, Severity::Malignant) => MalignantMass,
        (PatchScheme::Vindr4, _, Severity::Birads(3)) => Birads3,
        (PatchScheme::Vindr4, _, Severity::Birads(4)) => Birads4,
        (PatchScheme::Vindr4, _, Severity::Birads(5)) => Birads5,
        _ => return Err(PatchError::UnsupportedLesion { scheme, kind, severity }),
    };
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mapping() {
        assert_eq!(
            class_for_lesion(LesionKind::Mass, Severity::Malignant, PatchScheme::Cbis5).unwrap(),
            PatchClass::MalignantMass
        );
        assert_eq!(
            class_for_lesion(LesionKind::Other, Severity::Birads(4), PatchScheme::Vindr4).unwrap(),
            PatchClass::Birads4
        );
        assert!(class_for_lesion(LesionKind::Mass, Severity::Birads(4), PatchScheme::Cbis5).is_err());
        assert!(class_for_lesion(LesionKind::Mass, Severity::Benign, PatchScheme::Vindr4).is_err());
    }

    #[test]
    fn scheme_sizes_and_indices() {
        assert_eq!(PatchScheme::Cbis5.n_classes(), 5);
        assert_eq!(PatchScheme::Vindr4.n_classes(), 4);
        assert_eq!(PatchScheme::Vindr4.index_of(PatchClass::Birads5).unwrap(), 3);
        assert!(PatchScheme::Vindr4.index_of(PatchClass::BenignMass).is_err());
        for c in PatchClass::ALL {
            assert_eq!(c.as_str().parse::<PatchClass>().unwrap(), c);
        }
    }
}
