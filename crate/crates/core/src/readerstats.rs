//! Reader-study statistics: diagnostic performance against a gold standard,
//! confidence stratification, unpaired t-tests and equivalence sample size.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::Diagnosis;

pub const READS_HEADER: [&str; 6] = ["image_id", "reader_id", "modality", "call", "confidence", "truth"];

#[derive(Debug, thiserror::Error)]
pub enum ReaderStatsError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("expected header {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("duplicate read for image {image_id:?}, reader {reader_id:?}, modality {modality}")]
    Duplicate {
        image_id: String,
        reader_id: String,
        modality: Modality,
    },
    #[error("no records match the filter")]
    EmptySelection,
    #[error("each group needs at least 2 values (got {a} and {b})")]
    GroupTooSmall { a: usize, b: usize },
    #[error("non-finite value in t-test input")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("equivalence limit {limit} needs more than {max} samples per arm")]
    Unattainable { limit: f64, max: u64 },
    #[error("study needs {0}")]
    InsufficientStudy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "HR")]
    Hr,
    #[serde(rename = "SR")]
    Sr,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Hr, Modality::Sr];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Hr => "HR",
            Modality::Sr => "SR",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "HR" => Ok(Modality::Hr),
            "SR" => Ok(Modality::Sr),
            other => Err(format!("unknown modality {other:?} (expected HR or SR)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Low,
}

impl Confidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Confidence::High => "high",
            Confidence::Low => "low",
        }
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Confidence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" => Ok(Confidence::High),
            "low" => Ok(Confidence::Low),
            other => Err(format!("unknown confidence {other:?} (expected high or low)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadRecord {
    pub image_id: String,
    pub reader_id: String,
    pub modality: Modality,
    pub call: Diagnosis,
    pub confidence: Confidence,
    pub truth: Diagnosis,
}

/// Strict parser: exact header, no trimming, unknown enum values rejected and
/// `(image_id, reader_id, modality)` unique.
pub fn parse_reads<R: Read>(input: R) -> Result<Vec<ReadRecord>, ReaderStatsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(READS_HEADER) {
        return Err(ReaderStatsError::Header {
            expected: READS_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("");
        let parse_err = |message: String| ReaderStatsError::Parse { line, message };
        if field(0).is_empty() || field(1).is_empty() {
            return Err(parse_err("image_id and reader_id must be non-empty".into()));
        }
        let rec = ReadRecord {
            image_id: field(0).to_string(),
            reader_id: field(1).to_string(),
            modality: field(2).parse().map_err(parse_err)?,
            call: field(3).parse().map_err(parse_err)?,
            confidence: field(4).parse().map_err(parse_err)?,
            truth: field(5).parse().map_err(parse_err)?,
        };
        if !seen.insert((rec.image_id.clone(), rec.reader_id.clone(), rec.modality)) {
            return Err(ReaderStatsError::Duplicate {
                image_id: rec.image_id,
                reader_id: rec.reader_id,
                modality: rec.modality,
            });
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_reads<W: Write>(records: &[ReadRecord], out: W) -> Result<(), ReaderStatsError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(READS_HEADER)?;
    for r in records {
        wtr.write_record([
            r.image_id.as_str(),
            r.reader_id.as_str(),
            r.modality.as_str(),
            r.call.as_str(),
            r.confidence.as_str(),
            r.truth.as_str(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Conjunctive record filter; `None` fields match everything.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Filter {
    pub modality: Option<Modality>,
    pub confidence: Option<Confidence>,
    pub reader: Option<String>,
}

impl Filter {
    pub fn modality(m: Modality) -> Self {
        Self {
            modality: Some(m),
            ..Self::default()
        }
    }

    pub fn with_confidence(mut self, c: Option<Confidence>) -> Self {
        self.confidence = c;
        self
    }

    pub fn with_reader(mut self, reader: &str) -> Self {
        self.reader = Some(reader.to_string());
        self
    }

    pub fn matches(&self, r: &ReadRecord) -> bool {
        self.modality.is_none_or(|m| m == r.modality)
            && self.confidence.is_none_or(|c| c == r.confidence)
            && self.reader.as_deref().is_none_or(|id| id == r.reader_id)
    }
}

/// Confusion counts with neoplastic as the positive class. Ratios whose
/// denominator is zero are `None` and print as `NA`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticSummary {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: f64,
}

impl DiagnosticSummary {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        Self {
            tp,
            fp,
            fn_,
            tn,
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
            accuracy: (tp + tn) as f64 / (tp + fp + fn_ + tn) as f64,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Fraction of reads whose truth is neoplastic.
    pub fn prevalence(&self) -> f64 {
        (self.tp + self.fn_) as f64 / self.total() as f64
    }

    pub fn metric(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Accuracy => Some(self.accuracy),
            Metric::Sensitivity => self.sensitivity,
            Metric::Specificity => self.specificity,
        }
    }
}

pub fn summarize(records: &[ReadRecord], filter: &Filter) -> Result<DiagnosticSummary, ReaderStatsError> {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for r in records.iter().filter(|r| filter.matches(r)) {
        match (r.call, r.truth) {
            (Diagnosis::Neoplastic, Diagnosis::Neoplastic) => tp += 1,
            (Diagnosis::Neoplastic, Diagnosis::NonNeoplastic) => fp += 1,
            (Diagnosis::NonNeoplastic, Diagnosis::Neoplastic) => fn_ += 1,
            (Diagnosis::NonNeoplastic, Diagnosis::NonNeoplastic) => tn += 1,
        }
    }
    if tp + fp + fn_ + tn == 0 {
        return Err(ReaderStatsError::EmptySelection);
    }
    Ok(DiagnosticSummary::from_counts(tp, fp, fn_, tn))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TTestKind {
    /// Student's t with pooled variance, df = nA + nB - 2.
    #[default]
    Pooled,
    /// Welch's t with Welch-Satterthwaite df.
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
    /// Set when both groups have zero variance but different means.
    pub degenerate_variance: bool,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased (n - 1) sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn unpaired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, ReaderStatsError> {
    unpaired_t_test_with(a, b, TTestKind::Pooled)
}

pub fn unpaired_t_test_with(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTest, ReaderStatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(ReaderStatsError::GroupTooSmall { a: a.len(), b: b.len() });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(ReaderStatsError::NonFinite);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a), sample_variance(b));
    let diff = mean(a) - mean(b);
    let (se2, df) = match kind {
        TTestKind::Pooled => {
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            (pooled * (1.0 / na + 1.0 / nb), na + nb - 2.0)
        }
        TTestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            let df = if se2 > 0.0 {
                se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0))
            } else {
                na + nb - 2.0
            };
            (se2, df)
        }
    };
    if se2 == 0.0 {
        return Ok(if diff == 0.0 {
            TTest {
                t: 0.0,
                df,
                p: 1.0,
                degenerate_variance: false,
            }
        } else {
            log::warn!("t-test groups have zero variance and different means");
            TTest {
                t: diff.signum() * f64::INFINITY,
                df,
                p: 0.0,
                degenerate_variance: true,
            }
        });
    }
    let t = diff / se2.sqrt();
    Ok(TTest {
        t,
        df,
        p: two_sided_p(t, df),
        degenerate_variance: false,
    })
}

/// `2 * P(T > |t|)` for Student's t with `df` degrees of freedom.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Normal-approximation power of TOST on two proportions at zero true
/// difference, per-arm size `n`, variance `p (1 - p)` per arm.
pub fn tost_power(n: u64, alpha: f64, limit: f64, p_assumed: f64) -> f64 {
    let z = std_normal();
    let se = (2.0 * p_assumed * (1.0 - p_assumed) / n as f64).sqrt();
    let z_alpha = z.inverse_cdf(1.0 - alpha);
    (2.0 * z.cdf(limit / se - z_alpha) - 1.0).max(0.0)
}

/// Above this the limit is treated as unattainable.
pub const MAX_SAMPLE_SIZE: u64 = 1_000_000_000;

/// Smallest per-arm `n` whose TOST power reaches `power`. Starts from
/// `(z_{1-a} + z_{1-b/2})^2 * 2p(1-p) / limit^2` and then walks the monotone
/// power function to the exact boundary.
pub fn equivalence_sample_size(
    power: f64,
    alpha: f64,
    limit: f64,
    p_assumed: f64,
) -> Result<u64, ReaderStatsError> {
    for (name, v) in [("power", power), ("alpha", alpha), ("limit", limit), ("p", p_assumed)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(ReaderStatsError::InvalidParameter(format!(
                "{name} = {v} must lie strictly between 0 and 1"
            )));
        }
    }
    let z = std_normal();
    let beta = 1.0 - power;
    let zsum = z.inverse_cdf(1.0 - alpha) + z.inverse_cdf(1.0 - beta / 2.0);
    let estimate = zsum * zsum * 2.0 * p_assumed * (1.0 - p_assumed) / (limit * limit);
    if !(estimate <= MAX_SAMPLE_SIZE as f64) {
        return Err(ReaderStatsError::Unattainable {
            limit,
            max: MAX_SAMPLE_SIZE,
        });
    }
    let mut n = (estimate.ceil() as u64).max(1);
    while n > 1 && tost_power(n - 1, alpha, limit, p_assumed) >= power {
        n -= 1;
    }
    while tost_power(n, alpha, limit, p_assumed) < power {
        n += 1;
        if n > MAX_SAMPLE_SIZE {
            return Err(ReaderStatsError::Unattainable {
                limit,
                max: MAX_SAMPLE_SIZE,
            });
        }
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Accuracy,
    Sensitivity,
    Specificity,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Accuracy, Metric::Sensitivity, Metric::Specificity];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Sensitivity => "sensitivity",
            Metric::Specificity => "specificity",
        }
    }
}

/// Confidence stratum; `None` is all reads.
pub type Stratum = Option<Confidence>;

pub const STRATA: [Stratum; 3] = [None, Some(Confidence::High), Some(Confidence::Low)];

pub fn stratum_name(s: Stratum) -> &'static str {
    s.map_or("all", Confidence::as_str)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    /// `None` pools every reader.
    pub reader_id: Option<String>,
    pub modality: Modality,
    pub stratum: Stratum,
    /// `None` when nothing matched.
    pub summary: Option<DiagnosticSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceRate {
    pub reader_id: Option<String>,
    pub modality: Modality,
    pub total: usize,
    pub high: usize,
}

impl ConfidenceRate {
    pub fn high_fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.high as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TTestRow {
    pub metric: Metric,
    pub stratum: Stratum,
    /// Per-reader values with undefined ratios dropped.
    pub hr: Vec<f64>,
    pub sr: Vec<f64>,
    /// `None` when a group has fewer than two defined values.
    pub test: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub readers: Vec<String>,
    pub summaries: Vec<SummaryRow>,
    pub confidence_rates: Vec<ConfidenceRate>,
    pub ttests: Vec<TTestRow>,
}

impl StudyReport {
    pub fn summary(&self, reader: Option<&str>, modality: Modality, stratum: Stratum) -> Option<&DiagnosticSummary> {
        self.summaries
            .iter()
            .find(|r| r.reader_id.as_deref() == reader && r.modality == modality && r.stratum == stratum)
            .and_then(|r| r.summary.as_ref())
    }

    pub fn ttest(&self, metric: Metric, stratum: Stratum) -> Option<&TTestRow> {
        self.ttests
            .iter()
            .find(|r| r.metric == metric && r.stratum == stratum)
    }
}

fn optional_summary(records: &[ReadRecord], filter: &Filter) -> Option<DiagnosticSummary> {
    match summarize(records, filter) {
        Ok(s) => Some(s),
        Err(ReaderStatsError::EmptySelection) => None,
        Err(e) => unreachable!("summarize only fails on empty selections: {e}"),
    }
}

/// Per-reader and pooled summaries by modality and confidence stratum,
/// confidence rates, and reader-level HR vs SR t-tests.
pub fn study_report(records: &[ReadRecord], kind: TTestKind) -> Result<StudyReport, ReaderStatsError> {
    let readers: Vec<String> = records
        .iter()
        .map(|r| r.reader_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if readers.len() < 2 {
        return Err(ReaderStatsError::InsufficientStudy(format!(
            "at least 2 readers, found {}",
            readers.len()
        )));
    }
    for m in Modality::ALL {
        if !records.iter().any(|r| r.modality == m) {
            return Err(ReaderStatsError::InsufficientStudy(format!("reads for modality {m}")));
        }
    }

    let mut summaries = Vec::new();
    let mut confidence_rates = Vec::new();
    let reader_keys = readers.iter().map(|r| Some(r.as_str())).chain([None]);
    for reader in reader_keys {
        for m in Modality::ALL {
            let base = Filter {
                modality: Some(m),
                confidence: None,
                reader: reader.map(str::to_string),
            };
            for stratum in STRATA {
                let f = base.clone().with_confidence(stratum);
                summaries.push(SummaryRow {
                    reader_id: reader.map(str::to_string),
                    modality: m,
                    stratum,
                    summary: optional_summary(records, &f),
                });
            }
            let selected = records.iter().filter(|r| base.matches(r));
            let (total, high) = selected.fold((0, 0), |(t, h), r| {
                (t + 1, h + usize::from(r.confidence == Confidence::High))
            });
            confidence_rates.push(ConfidenceRate {
                reader_id: reader.map(str::to_string),
                modality: m,
                total,
                high,
            });
        }
    }

    let mut ttests = Vec::new();
    for stratum in STRATA {
        for metric in Metric::ALL {
            let values = |m: Modality| -> Vec<f64> {
                readers
                    .iter()
                    .filter_map(|id| {
                        summaries
                            .iter()
                            .find(|r| r.reader_id.as_deref() == Some(id) && r.modality == m && r.stratum == stratum)
                            .and_then(|r| r.summary)
                            .and_then(|s| s.metric(metric))
                    })
                    .collect()
            };
            let (hr, sr) = (values(Modality::Hr), values(Modality::Sr));
            let test = match unpaired_t_test_with(&hr, &sr, kind) {
                Ok(t) => Some(t),
                Err(ReaderStatsError::GroupTooSmall { .. }) => None,
                Err(e) => return Err(e),
            };
            ttests.push(TTestRow {
                metric,
                stratum,
                hr,
                sr,
                test,
            });
        }
    }

    Ok(StudyReport {
        readers,
        summaries,
        confidence_rates,
        ttests,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn reader_label(r: &Option<String>) -> &str {
    r.as_deref().unwrap_or("ALL")
}

pub fn write_summaries_csv<W: Write>(report: &StudyReport, out: W) -> Result<(), ReaderStatsError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "reader_id",
        "modality",
        "confidence",
        "n",
        "tp",
        "fp",
        "fn",
        "tn",
        "sensitivity",
        "specificity",
        "accuracy",
    ])?;
    for row in &report.summaries {
        let mut rec = vec![
            reader_label(&row.reader_id).to_string(),
            row.modality.to_string(),
            stratum_name(row.stratum).to_string(),
        ];
        match &row.summary {
            Some(s) => rec.extend([
                s.total().to_string(),
                s.tp.to_string(),
                s.fp.to_string(),
                s.fn_.to_string(),
                s.tn.to_string(),
                opt(s.sensitivity),
                opt(s.specificity),
                s.accuracy.to_string(),
            ]),
            None => {
                rec.extend(["0", "0", "0", "0", "0"].map(String::from));
                rec.extend(["NA", "NA", "NA"].map(String::from));
            }
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_confidence_csv<W: Write>(report: &StudyReport, out: W) -> Result<(), ReaderStatsError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["reader_id", "modality", "n", "high", "low", "high_fraction"])?;
    for c in &report.confidence_rates {
        wtr.write_record([
            reader_label(&c.reader_id).to_string(),
            c.modality.to_string(),
            c.total.to_string(),
            c.high.to_string(),
            (c.total - c.high).to_string(),
            opt(c.high_fraction()),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_ttests_csv<W: Write>(report: &StudyReport, out: W) -> Result<(), ReaderStatsError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "metric",
        "confidence",
        "n_hr",
        "n_sr",
        "mean_hr",
        "sd_hr",
        "mean_sr",
        "sd_sr",
        "t",
        "df",
        "p",
        "degenerate_variance",
    ])?;
    let describe = |xs: &[f64]| -> (String, String) {
        let m = (!xs.is_empty()).then(|| mean(xs));
        let sd = (xs.len() >= 2).then(|| sample_variance(xs).sqrt());
        (opt(m), opt(sd))
    };
    for row in &report.ttests {
        let (mh, sh) = describe(&row.hr);
        let (ms, ss) = describe(&row.sr);
        let (t, df, p, degenerate) = match row.test {
            Some(t) => (t.t.to_string(), t.df.to_string(), t.p.to_string(), t.degenerate_variance.to_string()),
            None => ("NA".into(), "NA".into(), "NA".into(), "NA".into()),
        };
        wtr.write_record([
            row.metric.as_str().to_string(),
            stratum_name(row.stratum).to_string(),
            row.hr.len().to_string(),
            row.sr.len().to_string(),
            mh,
            sh,
            ms,
            ss,
            t,
            df,
            p,
            degenerate,
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Table name to CSV bytes, in a fixed order.
pub fn report_tables(report: &StudyReport) -> Result<BTreeMap<&'static str, Vec<u8>>, ReaderStatsError> {
    let mut out = BTreeMap::new();
    let mut buf = Vec::new();
    write_summaries_csv(report, &mut buf)?;
    out.insert("reader_summary.csv", std::mem::take(&mut buf));
    write_confidence_csv(report, &mut buf)?;
    out.insert("confidence_rates.csv", std::mem::take(&mut buf));
    write_ttests_csv(report, &mut buf)?;
    out.insert("ttests.csv", buf);
    Ok(out)
}
