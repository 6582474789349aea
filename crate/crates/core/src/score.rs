//! Detector output types shared by every detector family.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Which direction of a raw score indicates machine-written text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherIsAi,
    LowerIsAi,
}

impl Orientation {
    /// Maps a raw score into the "higher means more AI-like" space.
    pub fn orient(self, raw: f64) -> f64 {
        match self {
            Orientation::HigherIsAi => raw,
            Orientation::LowerIsAi => -raw,
        }
    }

    /// Inverse of [`Orientation::orient`].
    pub fn unorient(self, oriented: f64) -> f64 {
        self.orient(oriented)
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Orientation::HigherIsAi => f.write_str("higher_is_ai"),
            Orientation::LowerIsAi => f.write_str("lower_is_ai"),
        }
    }
}

impl FromStr for Orientation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "higher_is_ai" => Ok(Orientation::HigherIsAi),
            "lower_is_ai" => Ok(Orientation::LowerIsAi),
            other => Err(format!("unknown orientation '{other}'")),
        }
    }
}

/// Binary decision for one review.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Human,
    Ai,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Human => f.write_str("human"),
            Label::Ai => f.write_str("ai"),
        }
    }
}

/// One detector's raw output for one review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub detector_id: String,
    pub review_id: String,
    pub raw: f64,
    pub orientation: Orientation,
}

impl DetectionScore {
    pub fn oriented(&self) -> f64 {
        self.orientation.orient(self.raw)
    }
}

/// Writes scores as CSV with the columns `review_id,detector_id,raw,orientation`.
pub fn write_scores_csv<W: std::io::Write>(
    writer: W,
    scores: &[DetectionScore],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["review_id", "detector_id", "raw", "orientation"])?;
    for s in scores {
        w.write_record([
            s.review_id.as_str(),
            s.detector_id.as_str(),
            &format_raw(s.raw),
            &s.orientation.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn format_raw(raw: f64) -> String {
    if raw.is_infinite() {
        if raw > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        // `{:?}` round-trips f64 exactly.
        format!("{raw:?}")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreFileError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {detail}")]
    Row { line: u64, detail: String },
}

/// Reads a score CSV produced by [`write_scores_csv`].
pub fn read_scores_csv<R: std::io::Read>(reader: R) -> Result<Vec<DetectionScore>, ScoreFileError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 4 {
            return Err(ScoreFileError::Row { line, detail: format!("expected 4 columns, got {}", rec.len()) });
        }
        let raw = match &rec[2] {
            "inf" => f64::INFINITY,
            "-inf" => f64::NEG_INFINITY,
            v => v
                .parse::<f64>()
                .map_err(|e| ScoreFileError::Row { line, detail: format!("raw score '{v}': {e}") })?,
        };
        let orientation = rec[3].parse().map_err(|detail| ScoreFileError::Row { line, detail })?;
        out.push(DetectionScore {
            review_id: rec[0].to_string(),
            detector_id: rec[1].to_string(),
            raw,
            orientation,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_csv_round_trips() {
        let scores = vec![
            DetectionScore { detector_id: "llr".into(), review_id: "r1".into(), raw: 0.1 + 0.2, orientation: Orientation::HigherIsAi },
            DetectionScore { detector_id: "llr".into(), review_id: "r2".into(), raw: f64::INFINITY, orientation: Orientation::HigherIsAi },
            DetectionScore { detector_id: "rank".into(), review_id: "r,3".into(), raw: -1e-300, orientation: Orientation::LowerIsAi },
        ];
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &scores).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("review_id,detector_id,raw,orientation\n"));
        assert_eq!(read_scores_csv(buf.as_slice()).unwrap(), scores);
    }

    #[test]
    fn orientation_flips_sign() {
        assert_eq!(Orientation::LowerIsAi.orient(0.2), -0.2);
        assert_eq!(Orientation::HigherIsAi.orient(0.2), 0.2);
    }
}
