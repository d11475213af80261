use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Result, StatsError};

/// Aligned `(id, probability, binary label)` triples from one model run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    ids: Vec<String>,
    scores: Vec<f64>,
    labels: Vec<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    id: String,
    score: f64,
    label: u8,
}

impl ScoreSet {
    pub fn new(ids: Vec<String>, scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if ids.len() != scores.len() || ids.len() != labels.len() {
            return Err(StatsError::LengthMismatch {
                ids: ids.len(),
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for ((id, &s), &l) in ids.iter().zip(&scores).zip(&labels) {
            if !s.is_finite() || !(0.0..=1.0).contains(&s) {
                return Err(StatsError::InvalidScore {
                    id: id.clone(),
                    value: s,
                });
            }
            if l > 1 {
                return Err(StatsError::InvalidLabel {
                    id: id.clone(),
                    value: l,
                });
            }
            if !seen.insert(id.as_str()) {
                return Err(StatsError::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            ids,
            scores,
            labels,
        })
    }

    /// Builds a set with generated ids `0..n`.
    pub fn from_scores(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let ids = (0..scores.len()).map(|i| i.to_string()).collect();
        Self::new(ids, scores, labels)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64, u8)> {
        self.ids
            .iter()
            .zip(&self.scores)
            .zip(&self.labels)
            .map(|((i, &s), &l)| (i.as_str(), s, l))
    }

    /// Returns a copy reordered by id, so two runs over the same cases align.
    pub fn sorted_by_id(&self) -> Self {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        Self {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub(crate) fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (p, n) = (self.n_pos(), self.n_neg());
        if p == 0 || n == 0 {
            return Err(StatsError::DegenerateLabels { n_pos: p, n_neg: n });
        }
        Ok((p, n))
    }

    pub fn read_csv<R: Read>(reader: R) -> std::result::Result<Self, ScoreCsvError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let (mut ids, mut scores, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for row in rdr.deserialize::<ScoreRow>() {
            let row = row?;
            ids.push(row.id);
            scores.push(row.score);
            labels.push(row.label);
        }
        Ok(Self::new(ids, scores, labels)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> std::result::Result<(), ScoreCsvError> {
        let mut wtr = csv::Writer::from_writer(writer);
        for (id, score, label) in self.iter() {
            wtr.serialize(ScoreRow {
                id: id.to_string(),
                score,
                label,
            })?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> std::result::Result<Self, ScoreCsvError> {
        let f = std::fs::File::open(path).map_err(csv::Error::from)?;
        Self::read_csv(f)
    }

    pub fn save(&self, path: &std::path::Path) -> std::result::Result<(), ScoreCsvError> {
        let f = std::fs::File::create(path).map_err(csv::Error::from)?;
        self.write_csv(f)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreCsvError {
    #[error("scores csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Invalid(#[from] StatsError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            ScoreSet::from_scores(vec![0.1], vec![1, 0]),
            Err(StatsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ScoreSet::from_scores(vec![1.5], vec![1]),
            Err(StatsError::InvalidScore { .. })
        ));
        assert!(matches!(
            ScoreSet::from_scores(vec![f64::NAN], vec![1]),
            Err(StatsError::InvalidScore { .. })
        ));
        assert!(matches!(
            ScoreSet::from_scores(vec![0.5], vec![2]),
            Err(StatsError::InvalidLabel { .. })
        ));
        assert!(matches!(
            ScoreSet::new(vec!["a".into(), "a".into()], vec![0.1, 0.2], vec![0, 1]),
            Err(StatsError::DuplicateId(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let s = ScoreSet::new(
            vec!["x|LEFT|CC".into(), "y".into()],
            vec![0.25, 0.9999999999],
            vec![0, 1],
        )
        .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("id,score,label\n"));
        let back = ScoreSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }
}
