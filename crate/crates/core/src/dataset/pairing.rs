use std::collections::BTreeMap;

use serde::Serialize;

use super::manifest::Manifest;
use super::types::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum UnpairedReason {
    MissingCc,
    MissingMlo,
    LabelConflict,
    SchemeMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnpairedView {
    pub key: ViewKey,
    pub reason: UnpairedReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairingReport {
    pub pairs: Vec<ExamPair>,
    pub unpaired: Vec<UnpairedView>,
}

/// Groups views by breast and emits one CC/MLO pair per complete breast,
/// ordered by (exam_id, side). Incomplete breasts and breasts whose views
/// disagree on the binary label are reported instead.
pub fn pair_views(manifest: &Manifest, scheme: LabelScheme) -> PairingReport {
    let mut groups: BTreeMap<(&str, BreastSide), (Option<&ViewRecord>, Option<&ViewRecord>)> =
        BTreeMap::new();
    for v in &manifest.views {
        let slot = groups.entry((v.exam_id.as_str(), v.breast_side)).or_default();
        match v.view {
            View::Cc => slot.0 = Some(v),
            View::Mlo => slot.1 = Some(v),
        }
    }
    let mut report = PairingReport::default();
    for (_, slot) in groups {
        match slot {
            (Some(cc), Some(mlo)) => {
                let labels = (map_binary_label(cc, scheme), map_binary_label(mlo, scheme));
                match labels {
                    (Ok(a), Ok(b)) if a == b => report.pairs.push(ExamPair {
                        exam_id: cc.exam_id.clone(),
                        breast_side: cc.breast_side,
                        cc: cc.clone(),
                        mlo: mlo.clone(),
                        label: ExamLabel::from_bit(a),
                    }),
                    (Ok(_), Ok(_)) => {
                        for v in [cc, mlo] {
                            report.unpaired.push(UnpairedView { key: v.key(), reason: UnpairedReason::LabelConflict });
                        }
                    }
                    _ => {
                        for v in [cc, mlo] {
                            report.unpaired.push(UnpairedView { key: v.key(), reason: UnpairedReason::SchemeMismatch });
                        }
                    }
                }
            }
            (Some(cc), None) => report.unpaired.push(UnpairedView { key: cc.key(), reason: UnpairedReason::MissingMlo }),
            (None, Some(mlo)) => report.unpaired.push(UnpairedView { key: mlo.key(), reason: UnpairedReason::MissingCc }),
            (None, None) => unreachable!(),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(exam: &str, side: BreastSide, view: View, birads: u8) -> ViewRecord {
        ViewRecord {
            exam_id: exam.into(),
            breast_side: side,
            view,
            image_path: "x.png".into(),
            bit_depth: BitDepth::Sixteen,
            raw_size: (10, 10),
            label_source: LabelSource::Birads,
            pathology: None,
            birads: Some(birads),
            split: Split::Test,
        }
    }

    fn manifest(views: Vec<ViewRecord>) -> Manifest {
        let mut m = Manifest::empty(Schema::VindrStyle);
        m.views = views;
        m
    }

    #[test]
    fn complete_exam_gives_two_pairs() {
        use BreastSide::*;
        let m = manifest(vec![
            rec("a", Left, View::Cc, 1),
            rec("a", Left, View::Mlo, 2),
            rec("a", Right, View::Cc, 4),
            rec("a", Right, View::Mlo, 3),
        ]);
        let r = pair_views(&m, LabelScheme::Birads);
        assert_eq!(r.pairs.len(), 2);
        assert!(r.unpaired.is_empty());
        assert_eq!(r.pairs[0].label, ExamLabel::Normal);
        assert_eq!(r.pairs[1].label, ExamLabel::Abnormal);
        assert_eq!(r.pairs[1].cc.view, View::Cc);
    }

    #[test]
    fn lone_cc_is_reported() {
        let m = manifest(vec![rec("a", BreastSide::Left, View::Cc, 1)]);
        let r = pair_views(&m, LabelScheme::Birads);
        assert!(r.pairs.is_empty());
        assert_eq!(r.unpaired.len(), 1);
        assert_eq!(r.unpaired[0].reason, UnpairedReason::MissingMlo);
    }

    #[test]
    fn label_conflict_is_reported() {
        let m = manifest(vec![rec("a", BreastSide::Left, View::Cc, 1), rec("a", BreastSide::Left, View::Mlo, 5)]);
        let r = pair_views(&m, LabelScheme::Birads);
        assert!(r.pairs.is_empty());
        assert_eq!(r.unpaired.len(), 2);
    }

    #[test]
    fn fully_paired_test_set_halves() {
        let mut views = Vec::new();
        for e in 0..1000 {
            for side in [BreastSide::Left, BreastSide::Right] {
                for view in [View::Cc, View::Mlo] {
                    views.push(rec(&format!("e{e}"), side, view, 1));
                }
            }
        }
        assert_eq!(views.len(), 4000);
        assert_eq!(pair_views(&manifest(views), LabelScheme::Birads).pairs.len(), 2000);
    }

    proptest! {
        #[test]
        fn pair_count_bounded(picks in proptest::collection::btree_set((0u8..6, any::<bool>(), any::<bool>()), 0..40)) {
            let views: Vec<_> = picks.iter().map(|&(e, r, m)| rec(
                &format!("e{e}"),
                if r { BreastSide::Right } else { BreastSide::Left },
                if m { View::Mlo } else { View::Cc },
                2,
            )).collect();
            let n = views.len();
            let r = pair_views(&manifest(views), LabelScheme::Birads);
            prop_assert!(r.pairs.len() <= n / 2);
            prop_assert_eq!(r.pairs.len() * 2 + r.unpaired.len(), n);
            for p in &r.pairs {
                prop_assert_eq!(&p.cc.exam_id, &p.mlo.exam_id);
                prop_assert_eq!(p.cc.breast_side, p.mlo.breast_side);
            }
        }
    }
}
