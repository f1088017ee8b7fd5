//! Data model for paired human/surrogate samples, question features and
//! finite ground-truth populations, plus file ingestion and serialization.
//!
//! File formats:
//!
//! * paired-sample CSV: `question_id,respondent_id,y_human,y_llm` (header
//!   required, extra columns ignored, rows of one question need not be
//!   contiguous);
//! * paired-sample JSON: an array of [`PairedSample`] objects;
//! * features CSV: `question_id,group_id,f0,f1,...` where every column after
//!   the first two is a numeric feature;
//! * synthetic-population JSON: a [`PopulationSpec`] object.
//!
//! Numbers are parsed as strict decimals: an optional sign, digits with an
//! optional `.` fraction and an optional exponent. Locale variants such as
//! `0,5`, and the words `nan`/`inf`, are rejected.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Summary of the synthetic (surrogate-only) pool for one question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSummary {
    /// Pool size. Ignored when `infinite_pool` is set.
    pub m: u64,
    /// Pool average of the surrogate predictions.
    pub mean: f64,
    /// Pool sample variance of the surrogate predictions.
    pub variance: f64,
    /// Treat `mean` as the exact expectation (synthetic-data-rich limit).
    #[serde(default)]
    pub infinite_pool: bool,
}

impl SyntheticSummary {
    /// A pool whose mean is known exactly.
    pub fn infinite(mean: f64) -> Self {
        SyntheticSummary {
            m: 0,
            mean,
            variance: 0.0,
            infinite_pool: true,
        }
    }

    /// Summarizes a finite pool of surrogate predictions.
    pub fn from_predictions(predictions: &[f64]) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::invalid("synthetic pool is empty"));
        }
        Ok(SyntheticSummary {
            m: predictions.len() as u64,
            mean: stats::mean(predictions),
            variance: stats::sample_var(predictions),
            infinite_pool: false,
        })
    }

    /// Variance contributed by the pool average, `variance / m`; zero for an
    /// infinite pool.
    pub fn mean_variance(&self) -> f64 {
        if self.infinite_pool {
            0.0
        } else {
            self.variance / self.m as f64
        }
    }
}

/// Paired human and surrogate outcomes for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub question_id: String,
    pub y_human: Vec<f64>,
    pub y_surrogate: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_pool: Option<SyntheticSummary>,
}

impl PairedSample {
    pub fn new(
        question_id: impl Into<String>,
        y_human: Vec<f64>,
        y_surrogate: Vec<f64>,
    ) -> Result<Self> {
        let s = PairedSample {
            question_id: question_id.into(),
            y_human,
            y_surrogate,
            synthetic_pool: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_pool(mut self, pool: SyntheticSummary) -> Self {
        self.synthetic_pool = Some(pool);
        self
    }

    pub fn len(&self) -> usize {
        self.y_human.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_human.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.y_human.len() != self.y_surrogate.len() {
            return Err(Error::invalid(format!(
                "question {}: y_human has {} values but y_surrogate has {}",
                self.question_id,
                self.y_human.len(),
                self.y_surrogate.len()
            )));
        }
        if self.y_human.is_empty() {
            return Err(Error::invalid(format!(
                "question {}: no pairs",
                self.question_id
            )));
        }
        if self
            .y_human
            .iter()
            .chain(&self.y_surrogate)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid(format!(
                "question {}: non-finite outcome",
                self.question_id
            )));
        }
        Ok(())
    }

    /// Min-max rescales both vectors from a declared scale `[lo, hi]` to
    /// `[0, 1]`. Fails if any value lies outside the declared scale.
    pub fn rescale(&mut self, lo: f64, hi: f64) -> Result<()> {
        check_scale(lo, hi)?;
        for v in self.y_human.iter().chain(&self.y_surrogate) {
            if *v < lo || *v > hi {
                return Err(Error::invalid(format!(
                    "question {}: value {v} outside declared scale [{lo}, {hi}]",
                    self.question_id
                )));
            }
        }
        let width = hi - lo;
        for v in self.y_human.iter_mut().chain(self.y_surrogate.iter_mut()) {
            *v = (*v - lo) / width;
        }
        Ok(())
    }
}

fn check_scale(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::invalid(format!("invalid scale [{lo}, {hi}]")));
    }
    Ok(())
}

/// Feature vector describing one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionFeatures {
    pub question_id: String,
    /// Task or parent-question identifier used for grouped cross-validation.
    pub group_id: String,
    pub z: Vec<f64>,
}

/// A finite ground-truth population of paired outcomes for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub question_id: String,
    pub y_human: Vec<f64>,
    pub y_surrogate: Vec<f64>,
    /// Arithmetic mean of `y_human` over the records.
    pub theta_star: f64,
}

impl Population {
    pub fn new(
        question_id: impl Into<String>,
        y_human: Vec<f64>,
        y_surrogate: Vec<f64>,
    ) -> Result<Self> {
        let question_id = question_id.into();
        if y_human.len() != y_surrogate.len() {
            return Err(Error::invalid(format!(
                "population {question_id}: mismatched record lengths"
            )));
        }
        if y_human.is_empty() {
            return Err(Error::NoRecords);
        }
        let theta_star = stats::mean(&y_human);
        Ok(Population {
            question_id,
            y_human,
            y_surrogate,
            theta_star,
        })
    }

    /// Treats a full observed sample as the ground-truth population.
    pub fn from_sample(sample: &PairedSample) -> Result<Self> {
        Population::new(
            sample.question_id.clone(),
            sample.y_human.clone(),
            sample.y_surrogate.clone(),
        )
    }

    pub fn len(&self) -> usize {
        self.y_human.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_human.is_empty()
    }

    /// The full population as a paired sample (for full-sample plug-ins).
    pub fn as_sample(&self) -> PairedSample {
        PairedSample {
            question_id: self.question_id.clone(),
            y_human: self.y_human.clone(),
            y_surrogate: self.y_surrogate.clone(),
            synthetic_pool: None,
        }
    }

    /// Surrogate pool summary built from every record's surrogate outcome.
    pub fn surrogate_pool(&self, infinite: bool) -> SyntheticSummary {
        let mut s = SyntheticSummary::from_predictions(&self.y_surrogate)
            .expect("population is nonempty");
        s.infinite_pool = infinite;
        s
    }

    /// Draws `n` paired records, without replacement unless `replace` is set.
    /// The returned sample carries no pool summary.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, replace: bool, rng: &mut R) -> Result<PairedSample> {
        let size = self.len();
        let mut y_human = Vec::with_capacity(n);
        let mut y_surrogate = Vec::with_capacity(n);
        if replace {
            for _ in 0..n {
                let i = rng.random_range(0..size);
                y_human.push(self.y_human[i]);
                y_surrogate.push(self.y_surrogate[i]);
            }
        } else {
            if n > size {
                return Err(Error::invalid(format!(
                    "population {}: cannot draw {n} of {size} records without replacement",
                    self.question_id
                )));
            }
            for i in index::sample(rng, size, n) {
                y_human.push(self.y_human[i]);
                y_surrogate.push(self.y_surrogate[i]);
            }
        }
        Ok(PairedSample {
            question_id: self.question_id.clone(),
            y_human,
            y_surrogate,
            synthetic_pool: None,
        })
    }

    /// Scales both outcome columns about their own means by `factor`.
    ///
    /// Means (hence `theta_star`) are preserved, the tuning coefficient is
    /// unchanged and the rectification difficulty scales by `factor²`.
    pub fn rescale_spread(&self, factor: f64) -> Population {
        let mh = self.theta_star;
        let ms = stats::mean(&self.y_surrogate);
        Population {
            question_id: self.question_id.clone(),
            y_human: self.y_human.iter().map(|v| mh + factor * (v - mh)).collect(),
            y_surrogate: self
                .y_surrogate
                .iter()
                .map(|v| ms + factor * (v - ms))
                .collect(),
            theta_star: mh,
        }
    }
}

/// Moments of a synthetic bivariate Gaussian population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub var_y: f64,
    pub rho: f64,
    pub mean_y: f64,
    pub mean_s: f64,
    pub var_s: f64,
    pub n_pop: usize,
    pub bounded: bool,
}

/// Generates a finite population from a bivariate Gaussian with the given
/// moments.
///
/// Each pair is the affine image `(mean_y + sd_y·u, mean_s + sd_s·(rho·u +
/// sqrt(1 - rho²)·v))` of independent standard normals `u, v`. In bounded
/// mode both coordinates are then clamped to `[0, 1]`; clamping distorts the
/// requested moments, so bounded populations only approximate them.
pub fn synth_population(
    question_id: impl Into<String>,
    spec: &PopulationSpec,
    seed: u64,
) -> Result<Population> {
    if !(spec.rho.abs() <= 1.0) {
        return Err(Error::invalid(format!("rho = {} outside [-1, 1]", spec.rho)));
    }
    if !(spec.var_y > 0.0 && spec.var_s > 0.0) {
        return Err(Error::invalid("variances must be positive"));
    }
    if spec.n_pop < 2 {
        return Err(Error::invalid("n_pop must be at least 2"));
    }
    if !(spec.mean_y.is_finite() && spec.mean_s.is_finite()) {
        return Err(Error::invalid("means must be finite"));
    }
    let sd_y = spec.var_y.sqrt();
    let sd_s = spec.var_s.sqrt();
    let resid = (1.0 - spec.rho * spec.rho).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y_human = Vec::with_capacity(spec.n_pop);
    let mut y_surrogate = Vec::with_capacity(spec.n_pop);
    for _ in 0..spec.n_pop {
        let u: f64 = rng.sample(StandardNormal);
        let v: f64 = rng.sample(StandardNormal);
        let mut y = spec.mean_y + sd_y * u;
        let mut s = spec.mean_s + sd_s * (spec.rho * u + resid * v);
        if spec.bounded {
            y = y.clamp(0.0, 1.0);
            s = s.clamp(0.0, 1.0);
        }
        y_human.push(y);
        y_surrogate.push(s);
    }
    Population::new(question_id, y_human, y_surrogate)
}

/// Paired-sample file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Csv,
    Json,
}

impl SampleFormat {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => SampleFormat::Json,
            _ => SampleFormat::Csv,
        }
    }
}

/// Parses a strict decimal number.
pub fn parse_decimal(raw: &str) -> Option<f64> {
    let s = raw.trim();
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return None;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return None;
        }
    }
    if i != b.len() {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn read_to_string(path: &Path) -> Result<String> {
    let mut buf = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            message: format!("missing column `{name}`"),
        })
}

/// Loads paired samples, one per distinct `question_id`.
///
/// With `scale = Some((lo, hi))` every outcome is checked against the
/// declared scale and min-max rescaled to `[0, 1]`.
pub fn load_paired_samples(
    path: &Path,
    format: SampleFormat,
    scale: Option<(f64, f64)>,
) -> Result<BTreeMap<String, PairedSample>> {
    let text = read_to_string(path)?;
    let mut out = match format {
        SampleFormat::Csv => parse_paired_csv(&text, path)?,
        SampleFormat::Json => {
            let list: Vec<PairedSample> = serde_json::from_str(&text)?;
            if list.is_empty() {
                return Err(Error::NoRecords);
            }
            let mut map = BTreeMap::new();
            for s in list {
                s.validate()?;
                let id = s.question_id.clone();
                if map.insert(id.clone(), s).is_some() {
                    return Err(Error::invalid(format!("duplicate question_id `{id}`")));
                }
            }
            map
        }
    };
    if let Some((lo, hi)) = scale {
        for s in out.values_mut() {
            s.rescale(lo, hi)?;
        }
    }
    Ok(out)
}

/// Parses paired-sample CSV text. Row numbers in errors are file line
/// numbers (the header is line 1).
pub fn parse_paired_csv(text: &str, path: &Path) -> Result<BTreeMap<String, PairedSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() {
        return Err(Error::NoRecords);
    }
    let qi = column(&headers, "question_id", path)?;
    let ri = column(&headers, "respondent_id", path)?;
    let hi = column(&headers, "y_human", path)?;
    let li = column(&headers, "y_llm", path)?;

    let mut out: BTreeMap<String, PairedSample> = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let qid = field(qi).trim().to_string();
        let rid = field(ri).trim().to_string();
        if qid.is_empty() {
            return Err(Error::Row {
                row,
                message: "empty question_id".into(),
            });
        }
        let num = |i: usize, name: &str| {
            parse_decimal(field(i)).ok_or_else(|| Error::Row {
                row,
                message: format!("non-numeric {name} `{}`", field(i)),
            })
        };
        let yh = num(hi, "y_human")?;
        let yl = num(li, "y_llm")?;
        if !seen.insert((qid.clone(), rid.clone())) {
            return Err(Error::Row {
                row,
                message: format!("duplicate respondent `{rid}` for question `{qid}`"),
            });
        }
        let entry = out.entry(qid.clone()).or_insert_with(|| PairedSample {
            question_id: qid,
            y_human: Vec::new(),
            y_surrogate: Vec::new(),
            synthetic_pool: None,
        });
        entry.y_human.push(yh);
        entry.y_surrogate.push(yl);
    }
    if out.is_empty() {
        return Err(Error::NoRecords);
    }
    Ok(out)
}

/// Writes paired samples as CSV; respondent ids are the within-question
/// record index. Values are written in shortest round-trip form.
pub fn write_paired_csv<'a, W: Write>(
    w: W,
    samples: impl IntoIterator<Item = &'a PairedSample>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let map = |e: csv::Error| Error::invalid(e.to_string());
    wtr.write_record(["question_id", "respondent_id", "y_human", "y_llm"])
        .map_err(map)?;
    for s in samples {
        for (i, (h, l)) in s.y_human.iter().zip(&s.y_surrogate).enumerate() {
            wtr.write_record([
                s.question_id.clone(),
                i.to_string(),
                format!("{h:?}"),
                format!("{l:?}"),
            ])
            .map_err(map)?;
        }
    }
    wtr.flush().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(())
}

/// Loads question features; `K` is inferred from the header.
pub fn load_features(path: &Path) -> Result<Vec<QuestionFeatures>> {
    parse_features_csv(&read_to_string(path)?, path)
}

pub fn parse_features_csv(text: &str, path: &Path) -> Result<Vec<QuestionFeatures>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?
        .clone();
    let bad_header = || Error::Parse {
        path: path.display().to_string(),
        message: "header must start with question_id,group_id".into(),
    };
    if headers.len() < 2
        || headers.get(0).map(str::trim) != Some("question_id")
        || headers.get(1).map(str::trim) != Some("group_id")
    {
        return Err(bad_header());
    }
    let k = headers.len() - 2;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (n, rec) in rdr.records().enumerate() {
        let row = n + 2;
        let rec = rec.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(Error::Row {
                row,
                message: format!("ragged row: expected {} fields, got {}", headers.len(), rec.len()),
            });
        }
        let qid = rec[0].trim().to_string();
        if !ids.insert(qid.clone()) {
            return Err(Error::Row {
                row,
                message: format!("duplicate question_id `{qid}`"),
            });
        }
        let mut z = Vec::with_capacity(k);
        for j in 0..k {
            let raw = &rec[j + 2];
            let v = parse_decimal(raw).ok_or_else(|| Error::Row {
                row,
                message: format!("feature `{}` is non-numeric or NaN: `{raw}`", &headers[j + 2]),
            })?;
            z.push(v);
        }
        out.push(QuestionFeatures {
            question_id: qid,
            group_id: rec[1].trim().to_string(),
            z,
        });
    }
    Ok(out)
}

pub fn write_features_csv<W: Write>(w: W, features: &[QuestionFeatures]) -> Result<()> {
    let k = features.first().map_or(0, |f| f.z.len());
    if features.iter().any(|f| f.z.len() != k) {
        return Err(Error::invalid("feature vectors have differing lengths"));
    }
    let map = |e: csv::Error| Error::invalid(e.to_string());
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["question_id".to_string(), "group_id".to_string()];
    header.extend((0..k).map(|j| format!("f{j}")));
    wtr.write_record(&header).map_err(map)?;
    for f in features {
        let mut rec = vec![f.question_id.clone(), f.group_id.clone()];
        rec.extend(f.z.iter().map(|v| format!("{v:?}")));
        wtr.write_record(&rec).map_err(map)?;
    }
    wtr.flush().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(())
}
