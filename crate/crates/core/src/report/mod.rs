//! Evaluation tables (survey medians, per-level means, model/EDA
//! correlations) and per-user scatterplots.

mod survey;
mod svg;
mod table;

pub use survey::{likert_column, parse_likert, SurveyResponses, SurveyRow, LEVELS, LIKERT_ITEMS, OTHER_COLUMNS};
pub use svg::{render_scatter, scatter_svg};

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::AffectTrace;
use crate::physio::{EdaParams, EdaSession, Segment, SensorTrace, SignalKind};
use crate::stats::{rank_levels, spearman_rho, CorrelationResult, RankResult};
use crate::{Error, Result};
use table::TextTable;

/// Lower of the two central values for even counts, so the median stays a
/// valid Likert code.
pub fn lower_median(codes: &[i8]) -> i8 {
    let mut v = codes.to_vec();
    v.sort_unstable();
    v[(v.len() - 1) / 2]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperientialRow {
    pub item: String,
    pub medians: [i8; LEVELS],
    pub ranking: RankResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperientialTable {
    pub rows: Vec<ExperientialRow>,
}

fn level_names(n: usize) -> Vec<String> {
    (1..=n).map(|l| l.to_string()).collect()
}

pub fn table_experiential(survey: &SurveyResponses) -> Result<ExperientialTable> {
    if survey.rows.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: survey.rows.len(),
        });
    }
    let names = level_names(LEVELS);
    let rows = LIKERT_ITEMS
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let codes: Vec<Vec<i8>> = (0..LEVELS).map(|l| survey.codes(i, l)).collect();
            let groups: Vec<(String, Vec<f64>)> = names
                .iter()
                .cloned()
                .zip(codes.iter().map(|c| c.iter().map(|&v| v as f64).collect()))
                .collect();
            Ok(ExperientialRow {
                item: capitalize(item),
                medians: std::array::from_fn(|l| lower_median(&codes[l])),
                ranking: rank_levels(&groups)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ExperientialTable { rows })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

impl ExperientialTable {
    pub fn to_csv(&self) -> String {
        let mut t = TextTable::new(["item", "level_1", "level_2", "level_3", "ranking"]);
        for r in &self.rows {
            t.row([r.item.clone(), r.medians[0].to_string(), r.medians[1].to_string(), r.medians[2].to_string(), r.ranking.notation.clone()]);
        }
        t.csv()
    }

    pub fn to_text(&self) -> String {
        let mut t = TextTable::new(["", "Level 1", "Level 2", "Level 3", "Level Ranking"]);
        for r in &self.rows {
            t.row([r.item.clone(), r.medians[0].to_string(), r.medians[1].to_string(), r.medians[2].to_string(), r.ranking.notation.clone()]);
        }
        t.text()
    }
}

/// One participant's model trace and normalized EDA, on a shared clock
/// starting at session start, with the level boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEval {
    pub user: String,
    pub trace: AffectTrace,
    pub eda_rate: f64,
    /// Session-normalized SCL at `eda_rate`.
    pub eda: Vec<f64>,
    pub segments: Vec<Segment>,
}

/// Default model grid spacing (4 frames per second).
pub const MODEL_BIN_MS: f64 = 250.0;

impl UserEval {
    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path.as_ref())?))?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        serde_json::to_writer(&mut out, self)?;
        std::io::Write::flush(&mut out)?;
        Ok(())
    }

    /// Builds the evaluation input from a model trace, a raw EDA trace and
    /// level boundaries, all on the session clock. Everything is moved onto
    /// the EDA clock: segments and trace points shift by the recording's
    /// start time and trace points before it are dropped.
    pub fn from_recordings(
        user: impl Into<String>,
        trace: &AffectTrace,
        eda: SensorTrace,
        segments: &[Segment],
        params: &EdaParams,
    ) -> Result<Self> {
        let offset = eda.start_ms;
        let rec = eda.into_recording(SignalKind::Eda, segments)?;
        let session = EdaSession::process(&rec, params)?;
        let mut shifted = AffectTrace {
            frame_index: Vec::new(),
            timestamp_ms: Vec::new(),
            values: Vec::new(),
        };
        for i in 0..trace.len() {
            let t = trace.timestamp_ms[i] as f64 - offset;
            if t >= 0.0 {
                shifted.frame_index.push(trace.frame_index[i]);
                shifted.timestamp_ms.push(t.round() as u64);
                shifted.values.push(trace.values[i]);
            }
        }
        if shifted.is_empty() {
            return Err(Error::EmptyInput("model trace after the EDA start"));
        }
        Ok(Self {
            user: user.into(),
            trace: shifted,
            eda_rate: session.sample_rate,
            eda: session.normalized_scl,
            segments: rec.segments,
        })
    }

    /// Spacing of the model trace (median timestamp step).
    pub fn bin_ms(&self) -> f64 {
        let mut steps: Vec<u64> = self.trace.timestamp_ms.windows(2).map(|w| w[1].saturating_sub(w[0])).collect();
        if steps.is_empty() {
            return MODEL_BIN_MS;
        }
        steps.sort_unstable();
        match steps[steps.len() / 2] {
            0 => MODEL_BIN_MS,
            s => s as f64,
        }
    }

    fn trace_indices(&self, seg: &Segment) -> impl Iterator<Item = usize> + '_ {
        let (start, end) = (seg.start_ms, seg.end_ms);
        (0..self.trace.len()).filter(move |&i| {
            let t = self.trace.timestamp_ms[i] as f64;
            t >= start && t < end
        })
    }

    pub fn model_segment(&self, seg: &Segment) -> Vec<f64> {
        self.trace_indices(seg).map(|i| self.trace.values[i]).collect()
    }

    pub fn eda_segment(&self, seg: &Segment) -> Vec<f64> {
        self.eda[seg.sample_range(self.eda_rate, self.eda.len())].to_vec()
    }

    /// Mean EDA over `[t, t + bin)`, or `None` when no sample falls inside.
    pub fn eda_bin(&self, t_ms: f64, bin_ms: f64) -> Option<f64> {
        let r = Segment::new("", t_ms, t_ms + bin_ms).sample_range(self.eda_rate, self.eda.len());
        if r.is_empty() {
            return None;
        }
        let n = r.len() as f64;
        Some(self.eda[r].iter().sum::<f64>() / n)
    }

    /// Model values paired with EDA mean-pooled onto the model grid.
    pub fn paired(&self, seg: &Segment) -> (Vec<f64>, Vec<f64>) {
        let bin = self.bin_ms();
        self.trace_indices(seg)
            .filter_map(|i| {
                let t = self.trace.timestamp_ms[i] as f64;
                self.eda_bin(t, bin).map(|e| (self.trace.values[i], e))
            })
            .unzip()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalBundle {
    pub users: Vec<UserEval>,
}

impl EvalBundle {
    pub fn user(&self, user: &str) -> Result<&UserEval> {
        self.users
            .iter()
            .find(|u| u.user == user)
            .ok_or_else(|| Error::UnknownUser(user.to_string()))
    }

    fn level_labels(&self) -> Vec<String> {
        self.users
            .first()
            .map(|u| u.segments.iter().map(|s| s.label.clone()).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Eda,
    Model,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Eda => "EDA",
            Source::Model => "Model",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("segment"));
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeansRow {
    pub user: String,
    pub source: Source,
    pub cells: Vec<MeanStd>,
    pub ranking: RankResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeansTable {
    pub levels: Vec<String>,
    pub rows: Vec<MeansRow>,
}

fn means_row(user: &str, source: Source, segments: &[Segment], values: Vec<Vec<f64>>) -> Result<MeansRow> {
    let mut cells = Vec::with_capacity(values.len());
    for (seg, v) in segments.iter().zip(&values) {
        cells.push(MeanStd::of(v).map_err(|_| Error::InvalidSegment {
            label: seg.label.clone(),
            reason: format!("no {} values for user {user}", source.name()),
        })?);
    }
    let groups: Vec<(String, Vec<f64>)> = segments.iter().map(|s| s.label.clone()).zip(values).collect();
    Ok(MeansRow {
        user: user.to_string(),
        source,
        cells,
        ranking: rank_levels(&groups)?,
    })
}

pub fn table_means(bundle: &EvalBundle) -> Result<MeansTable> {
    let rows: Vec<Vec<MeansRow>> = bundle
        .users
        .par_iter()
        .map(|u| {
            let eda = u.segments.iter().map(|s| u.eda_segment(s)).collect();
            let model = u.segments.iter().map(|s| u.model_segment(s)).collect();
            Ok(vec![
                means_row(&u.user, Source::Eda, &u.segments, eda)?,
                means_row(&u.user, Source::Model, &u.segments, model)?,
            ])
        })
        .collect::<Result<_>>()?;
    Ok(MeansTable {
        levels: bundle.level_labels(),
        rows: rows.into_iter().flatten().collect(),
    })
}

fn fmt_mean_std(c: &MeanStd) -> String {
    format!("{:.2} ± {:.2}", c.mean, c.std)
}

impl MeansTable {
    pub fn to_csv(&self) -> String {
        let mut head = vec!["user".to_string(), "source".to_string()];
        for l in &self.levels {
            head.push(format!("level_{l}_mean"));
            head.push(format!("level_{l}_std"));
        }
        head.push("ranking".into());
        let mut t = TextTable::new(head);
        for r in &self.rows {
            let mut row = vec![r.user.clone(), r.source.name().to_string()];
            for c in &r.cells {
                row.push(format!("{:.6}", c.mean));
                row.push(format!("{:.6}", c.std));
            }
            row.push(r.ranking.notation.clone());
            t.row(row);
        }
        t.csv()
    }

    pub fn to_text(&self) -> String {
        let mut head = vec![String::new(), String::new()];
        head.extend(self.levels.iter().map(|l| format!("Level {l}")));
        head.push("Level Ranking".into());
        let mut t = TextTable::new(head);
        for r in &self.rows {
            let mut row = vec![format!("User {}", r.user), r.source.name().to_string()];
            row.extend(r.cells.iter().map(fmt_mean_std));
            row.push(r.ranking.notation.clone());
            t.row(row);
        }
        t.text()
    }
}

/// Significance stars: `***` p < 0.0005, `**` p < 0.005, `*` p < 0.05.
pub fn stars(p: f64) -> &'static str {
    if p < 0.0005 {
        "***"
    } else if p < 0.005 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CorrelationCell {
    Value(CorrelationResult),
    /// Constant input or too few paired points.
    NotAvailable(String),
}

impl CorrelationCell {
    pub fn text(&self) -> String {
        match self {
            CorrelationCell::Value(r) => format!("{:.2}{}", r.rho, stars(r.p_value)),
            CorrelationCell::NotAvailable(_) => "n/a".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub user: String,
    pub cells: Vec<CorrelationCell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    pub levels: Vec<String>,
    pub rows: Vec<CorrelationRow>,
}

pub fn table_correlations(bundle: &EvalBundle) -> Result<CorrelationTable> {
    let rows = bundle
        .users
        .par_iter()
        .map(|u| CorrelationRow {
            user: u.user.clone(),
            cells: u
                .segments
                .iter()
                .map(|s| {
                    let (m, e) = u.paired(s);
                    match spearman_rho(&m, &e) {
                        Ok(r) => CorrelationCell::Value(r),
                        Err(err) => CorrelationCell::NotAvailable(err.to_string()),
                    }
                })
                .collect(),
        })
        .collect();
    Ok(CorrelationTable {
        levels: bundle.level_labels(),
        rows,
    })
}

impl CorrelationTable {
    pub fn to_csv(&self) -> String {
        let mut t = TextTable::new(["user", "level", "rho", "p_value", "n", "cell"]);
        for r in &self.rows {
            for (l, c) in self.levels.iter().zip(&r.cells) {
                let (rho, p, n) = match c {
                    CorrelationCell::Value(v) => (format!("{:.6}", v.rho), format!("{:.6e}", v.p_value), v.n.to_string()),
                    CorrelationCell::NotAvailable(_) => (String::new(), String::new(), String::new()),
                };
                t.row([r.user.clone(), l.clone(), rho, p, n, c.text()]);
            }
        }
        t.csv()
    }

    pub fn to_text(&self) -> String {
        let mut head = vec![String::new()];
        head.extend(self.levels.iter().map(|l| format!("Level {l}")));
        let mut t = TextTable::new(head);
        for r in &self.rows {
            let mut row = vec![format!("User {}", r.user)];
            row.extend(r.cells.iter().map(CorrelationCell::text));
            t.row(row);
        }
        t.text()
    }
}

fn svg_name(user: &str) -> String {
    let clean: String = user
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("user{clean}.svg")
}

/// Writes `table1`-`table3` (`.csv` and `.txt`) and one `user<k>.svg` per
/// participant into `dir`. Tables whose inputs are absent are skipped.
pub fn write_report(dir: impl AsRef<Path>, survey: Option<&SurveyResponses>, bundle: Option<&EvalBundle>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    if let Some(s) = survey {
        let t = table_experiential(s)?;
        emit("table1.csv", t.to_csv())?;
        emit("table1.txt", t.to_text())?;
    }
    if let Some(b) = bundle {
        let t = table_means(b)?;
        emit("table2.csv", t.to_csv())?;
        emit("table2.txt", t.to_text())?;
        let t = table_correlations(b)?;
        emit("table3.csv", t.to_csv())?;
        emit("table3.txt", t.to_text())?;
        let svgs: Vec<(String, String)> = b
            .users
            .par_iter()
            .map(|u| Ok((svg_name(&u.user), render_scatter(u)?)))
            .collect::<Result<_>>()?;
        for (name, body) in svgs {
            emit(&name, body)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(values: Vec<f64>) -> AffectTrace {
        let n = values.len();
        AffectTrace {
            frame_index: (3..3 + n).collect(),
            timestamp_ms: (0..n as u64).map(|i| i * 250).collect(),
            values,
        }
    }

    /// Three 30 s levels; EDA at 4 Hz so each sample lines up with one model bin.
    fn user(id: &str, model: impl Fn(usize) -> f64, eda: impl Fn(usize) -> f64) -> UserEval {
        let n = 360;
        UserEval {
            user: id.into(),
            trace: trace((0..n).map(&model).collect()),
            eda_rate: 4.0,
            eda: (0..n).map(eda).collect(),
            segments: (0..3)
                .map(|k| Segment::new((k + 1).to_string(), k as f64 * 30000.0, (k + 1) as f64 * 30000.0))
                .collect(),
        }
    }

    #[test]
    fn from_recordings_moves_to_eda_clock() {
        let t = trace((0..240).map(|i| i as f64 / 240.0).collect());
        let eda = SensorTrace {
            start_ms: 1000.0,
            sample_rate: 10.0,
            values: (0..600).map(|i| 1.0 + (i as f64 / 100.0).sin()).collect(),
        };
        let segs = [Segment::new("1", 1000.0, 31000.0), Segment::new("2", 31000.0, 61000.0)];
        let u = UserEval::from_recordings("7", &t, eda, &segs, &EdaParams::default()).unwrap();
        assert_eq!(u.trace.len(), 236);
        assert_eq!(u.trace.timestamp_ms[0], 0);
        assert_eq!(u.trace.frame_index[0], 7);
        assert_eq!(u.segments[1].start_ms, 30000.0);
        assert_eq!(u.eda.len(), 600);
        assert!(u.eda.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn lower_median_rule() {
        assert_eq!(lower_median(&[-2, 2]), -2);
        assert_eq!(lower_median(&[2, -1, 1, -2]), -1);
        assert_eq!(lower_median(&[1, 2, -2]), 1);
    }

    #[test]
    fn constant_level_mean() {
        let u = user("1", |i| if i < 120 { 0.3 } else { 0.5 + (i % 7) as f64 * 0.01 }, |i| (i % 5) as f64 / 5.0);
        let t = table_means(&EvalBundle { users: vec![u.clone()] }).unwrap();
        let model = &t.rows[1];
        assert_eq!(model.source, Source::Model);
        assert!((model.cells[0].mean - 0.3).abs() < 1e-12);
        assert!(model.cells[0].std < 1e-12);
        assert!(t.to_text().contains("0.30 ± 0.00"));
        // Cells are recomputable from the stored segments.
        for (seg, cell) in u.segments.iter().zip(&t.rows[0].cells) {
            let v = u.eda_segment(seg);
            let m = v.iter().sum::<f64>() / v.len() as f64;
            assert!((cell.mean - m).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_levels_cluster() {
        let u = user("1", |i| ((i % 30) as f64) / 30.0, |i| ((i % 30) as f64) / 30.0);
        let t = table_means(&EvalBundle { users: vec![u] }).unwrap();
        assert_eq!(t.rows[1].ranking.notation, "1,2,3");
    }

    #[test]
    fn empty_segment_is_an_error() {
        let mut u = user("1", |_| 0.5, |_| 0.5);
        u.trace = trace(vec![0.5; 100]);
        assert!(table_means(&EvalBundle { users: vec![u] }).is_err());
    }

    #[test]
    fn correlation_cells() {
        let same = user("a", |i| (i as f64 * 0.37).sin() * 0.5 + 0.5, |i| (i as f64 * 0.37).sin() * 0.5 + 0.5);
        let flat = user("b", |_| 0.4, |i| i as f64 / 360.0);
        let anti = user("c", |i| i as f64 / 360.0, |i| 1.0 - i as f64 / 360.0);
        let t = table_correlations(&EvalBundle { users: vec![same, flat, anti] }).unwrap();
        match &t.rows[0].cells[0] {
            CorrelationCell::Value(r) => {
                assert_eq!(r.rho, 1.0);
                assert_eq!(r.n, 120);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(t.rows[0].cells[0].text(), "1.00***");
        assert_eq!(t.rows[1].cells[1].text(), "n/a");
        match &t.rows[2].cells[2] {
            CorrelationCell::Value(r) => assert_eq!(r.rho, -1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn star_thresholds_are_strict() {
        assert_eq!(stars(0.05), "");
        assert_eq!(stars(0.0499), "*");
        assert_eq!(stars(0.005), "*");
        assert_eq!(stars(0.0049), "**");
        assert_eq!(stars(0.0005), "**");
        assert_eq!(stars(0.0004), "***");
    }

    #[test]
    fn eda_is_mean_pooled_onto_model_grid() {
        let mut u = user("1", |_| 0.5, |_| 0.0);
        u.eda_rate = 8.0;
        u.eda = (0..720).map(|i| i as f64).collect();
        assert_eq!(u.eda_bin(0.0, 250.0), Some(0.5));
        assert_eq!(u.eda_bin(250.0, 250.0), Some(2.5));
        assert_eq!(u.eda_bin(90_000.0, 250.0), None);
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let b = EvalBundle {
            users: vec![user("13", |i| (i % 11) as f64 / 11.0, |i| (i % 13) as f64 / 13.0)],
        };
        let files = write_report(dir.path(), None, Some(&b)).unwrap();
        let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["table2.csv", "table2.txt", "table3.csv", "table3.txt", "user13.svg"]);
        let csv = std::fs::read_to_string(dir.path().join("table2.csv")).unwrap();
        assert!(csv.starts_with("user,source,level_1_mean,level_1_std,"));
    }
}
