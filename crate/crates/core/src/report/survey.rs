//! Post-session survey CSV: one row per participant.
//!
//! Required columns are `participant` and `<item>_<level>` for every
//! Likert item and level (`calm_1` ... `content_3`). Likert cells hold a
//! code in {-2, -1, 1, 2} or the answer text ("Not at all", "Somewhat",
//! "Moderately so", "Very much so"). Any other column (stress ranks,
//! free text, experience, demographics) is kept verbatim.

use std::collections::BTreeMap;
use std::path::Path;

use crate::{Error, Result};

pub const LIKERT_ITEMS: [&str; 6] = ["calm", "tense", "relaxed", "worried", "upset", "content"];
pub const LEVELS: usize = 3;

/// Appendix columns besides the Likert grid, in questionnaire order.
pub const OTHER_COLUMNS: [&str; 12] = [
    "stress_rank_1",
    "stress_rank_2",
    "stress_rank_3",
    "high_stress_moments",
    "low_stress_moments",
    "comments",
    "video_game_frequency",
    "angry_birds_experience",
    "stimulants",
    "depressants",
    "age",
    "gender",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyRow {
    pub participant: String,
    /// `likert[item][level]`, items in [`LIKERT_ITEMS`] order.
    pub likert: [[i8; LEVELS]; LIKERT_ITEMS.len()],
    pub other: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurveyResponses {
    pub rows: Vec<SurveyRow>,
}

pub fn likert_column(item: &str, level: usize) -> String {
    format!("{item}_{level}")
}

pub fn parse_likert(cell: &str) -> Option<i8> {
    let t = cell.trim();
    match t.parse::<i8>() {
        Ok(v @ (-2 | -1 | 1 | 2)) => return Some(v),
        Ok(_) => return None,
        Err(_) => {}
    }
    match t.to_ascii_lowercase().as_str() {
        "not at all" => Some(-2),
        "somewhat" => Some(-1),
        "moderately so" | "moderately" => Some(1),
        "very much so" | "very much" => Some(2),
        _ => None,
    }
}

impl SurveyResponses {
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path.as_ref())?)
    }

    pub fn from_reader<R: std::io::Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let participant = find("participant").ok_or_else(|| Error::MalformedCsv("missing column participant".into()))?;
        let mut grid = [[0usize; LEVELS]; LIKERT_ITEMS.len()];
        for (i, item) in LIKERT_ITEMS.iter().enumerate() {
            for level in 0..LEVELS {
                let col = likert_column(item, level + 1);
                grid[i][level] = find(&col).ok_or_else(|| Error::MalformedCsv(format!("missing column {col}")))?;
            }
        }
        let likert_cols: Vec<usize> = grid.iter().flatten().copied().collect();
        let mut rows = Vec::new();
        for (r, rec) in reader.records().enumerate() {
            let rec = rec?;
            // Row numbers count the header as row 1.
            let row = r + 2;
            let mut likert = [[0i8; LEVELS]; LIKERT_ITEMS.len()];
            for (i, cols) in grid.iter().enumerate() {
                for (level, &c) in cols.iter().enumerate() {
                    let cell = rec.get(c).unwrap_or("");
                    likert[i][level] = parse_likert(cell).ok_or_else(|| Error::MalformedLikert {
                        row,
                        code: cell.to_string(),
                    })?;
                }
            }
            let other = headers
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != participant && !likert_cols.contains(c))
                .map(|(c, h)| (h.trim().to_string(), rec.get(c).unwrap_or("").to_string()))
                .collect();
            rows.push(SurveyRow {
                participant: rec.get(participant).unwrap_or("").trim().to_string(),
                likert,
                other,
            });
        }
        Ok(Self { rows })
    }

    /// Codes of one item at one level (0-based), in row order.
    pub fn codes(&self, item: usize, level: usize) -> Vec<i8> {
        self.rows.iter().map(|r| r.likert[item][level]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        let mut cols = vec!["participant".to_string()];
        for level in 1..=LEVELS {
            for item in LIKERT_ITEMS {
                cols.push(likert_column(item, level));
            }
        }
        cols.push("age".into());
        cols.join(",")
    }

    #[test]
    fn parses_codes_and_text() {
        let mut body = header();
        body.push('\n');
        let cells: Vec<&str> = vec!["2"; 17];
        body.push_str(&format!("p1,Not at all,{},18-24\n", cells.join(",")));
        let s = SurveyResponses::from_reader(body.as_bytes()).unwrap();
        assert_eq!(s.rows.len(), 1);
        assert_eq!(s.rows[0].likert[0][0], -2);
        assert_eq!(s.rows[0].likert[5][2], 2);
        assert_eq!(s.rows[0].other["age"], "18-24");
    }

    #[test]
    fn bad_code_reports_row() {
        let mut body = header();
        body.push('\n');
        let mut cells: Vec<&str> = vec!["1"; 18];
        body.push_str(&format!("p1,{},x\n", cells.join(",")));
        cells[4] = "0";
        body.push_str(&format!("p2,{},x\n", cells.join(",")));
        match SurveyResponses::from_reader(body.as_bytes()) {
            Err(Error::MalformedLikert { row, code }) => {
                assert_eq!(row, 3);
                assert_eq!(code, "0");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_column() {
        assert!(SurveyResponses::from_reader("participant,calm_1\np,1\n".as_bytes()).is_err());
    }
}
