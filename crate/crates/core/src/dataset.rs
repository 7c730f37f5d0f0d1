//! Experiment data model.
//!
//! A [`Dataset`] holds raw opinion scores `u` indexed by subject `i`, PVS `j`,
//! repetition `r` and (optionally) presentation order `o`, together with the
//! PVS → SRC mapping `k(j)`, the PVS → HRC mapping `h(j)` and the rating scale.
//!
//! External labels are arbitrary strings. Internally every index set is dense
//! and 0-based; labels are assigned indices in natural sort order
//! (`s2` < `s10`), so the assignment depends only on the label set and never
//! on record order.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Errors raised while assembling or validating a [`Dataset`].
///
/// Record positions refer to the order of the input slice passed to
/// [`Dataset::build`], 0-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("dataset has no records")]
    Empty,

    #[error("invalid scale: {0}")]
    InvalidScale(String),

    #[error(
        "duplicate observation for subject '{subject}', pvs '{pvs}', repetition {repetition} \
         (records {first} and {second})"
    )]
    DuplicateObservation {
        subject: String,
        pvs: String,
        repetition: u32,
        first: usize,
        second: usize,
    },

    #[error("pvs '{pvs}' has no {map} mapping (record {record})")]
    UnmappedPvs {
        pvs: String,
        map: &'static str,
        record: usize,
    },

    #[error("score {score} of record {record} is outside the {scale} scale")]
    ScoreOutOfScale {
        record: usize,
        score: f64,
        scale: String,
    },

    #[error("repetition must be >= 1 (record {record})")]
    InvalidRepetition { record: usize },

    #[error("{field} label {label:?} is empty or padded with whitespace (record {record})")]
    InvalidLabel {
        field: &'static str,
        label: String,
        record: usize,
    },

    #[error("inconsistent order for subject '{subject}': {reason} (records {first} and {second})")]
    InconsistentOrder {
        subject: String,
        reason: &'static str,
        first: usize,
        second: usize,
    },
}

impl DatasetError {
    /// Input record positions this error refers to, in ascending order.
    pub fn record_positions(&self) -> Vec<usize> {
        match self {
            Self::Empty | Self::InvalidScale(_) => Vec::new(),
            Self::DuplicateObservation { first, second, .. }
            | Self::InconsistentOrder { first, second, .. } => {
                let mut v = vec![*first, *second];
                v.sort_unstable();
                v.dedup();
                v
            }
            Self::UnmappedPvs { record, .. }
            | Self::ScoreOutOfScale { record, .. }
            | Self::InvalidRepetition { record }
            | Self::InvalidLabel { record, .. } => vec![*record],
        }
    }
}

/// Rating scale. Discrete scales take the answers `s ∈ {1, …, S}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    Discrete { categories: u32 },
    Continuous { lo: f64, hi: f64 },
}

impl Scale {
    pub fn discrete(categories: u32) -> Result<Self, DatasetError> {
        if categories < 2 {
            return Err(DatasetError::InvalidScale(format!(
                "a discrete scale needs at least 2 categories, got {categories}"
            )));
        }
        Ok(Self::Discrete { categories })
    }

    pub fn continuous(lo: f64, hi: f64) -> Result<Self, DatasetError> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(DatasetError::InvalidScale(format!(
                "continuous bounds must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self::Continuous { lo, hi })
    }

    /// Checks the scale invariants. Useful for values built with the enum
    /// constructors directly.
    pub fn validate(&self) -> Result<(), DatasetError> {
        match *self {
            Self::Discrete { categories } => Self::discrete(categories).map(|_| ()),
            Self::Continuous { lo, hi } => Self::continuous(lo, hi).map(|_| ()),
        }
    }

    pub fn contains(&self, score: f64) -> bool {
        match *self {
            Self::Discrete { categories } => {
                score.fract() == 0.0 && score >= 1.0 && score <= f64::from(categories)
            }
            Self::Continuous { lo, hi } => score >= lo && score <= hi,
        }
    }

    pub fn categories(&self) -> Option<u32> {
        match *self {
            Self::Discrete { categories } => Some(categories),
            Self::Continuous { .. } => None,
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Discrete { categories } => write!(f, "discrete:{categories}"),
            Self::Continuous { lo, hi } if lo == f64::NEG_INFINITY && hi == f64::INFINITY => {
                write!(f, "continuous")
            }
            Self::Continuous { lo, hi } => write!(f, "continuous:{lo}:{hi}"),
        }
    }
}

/// Parses `discrete:S`, `continuous:LO:HI` or bare `continuous` (unbounded).
impl FromStr for Scale {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::InvalidScale(format!("cannot parse scale spec '{s}'"));
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        match parts.as_slice() {
            ["discrete", n] => Scale::discrete(n.parse().map_err(|_| bad())?),
            ["continuous"] => Scale::continuous(f64::NEG_INFINITY, f64::INFINITY),
            ["continuous", lo, hi] => Scale::continuous(
                lo.parse().map_err(|_| bad())?,
                hi.parse().map_err(|_| bad())?,
            ),
            _ => Err(bad()),
        }
    }
}

/// One raw opinion score with its external index labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingRecord {
    pub subject: String,
    pub pvs: String,
    /// Repetition index, 1 when the experiment has no repetitions.
    pub repetition: u32,
    /// 1-based position in the subject's session, when recorded.
    pub order: Option<u32>,
    pub score: f64,
}

impl RatingRecord {
    pub fn new(subject: impl Into<String>, pvs: impl Into<String>, score: f64) -> Self {
        Self {
            subject: subject.into(),
            pvs: pvs.into(),
            repetition: 1,
            order: None,
            score,
        }
    }

    pub fn with_repetition(mut self, repetition: u32) -> Self {
        self.repetition = repetition;
        self
    }

    pub fn with_order(mut self, order: u32) -> Self {
        self.order = Some(order);
        self
    }
}

/// A record with dense internal indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub subject: usize,
    pub pvs: usize,
    pub repetition: u32,
    pub order: Option<u32>,
    pub score: f64,
}

/// Compares labels so that embedded digit runs order numerically
/// (`j2` < `j10`). Ties fall back to plain byte order, which keeps the
/// ordering total.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut x, mut y) = (a.as_bytes(), b.as_bytes());
    loop {
        match (x.first(), y.first()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(c), Some(d)) if c.is_ascii_digit() && d.is_ascii_digit() => {
                let nx = x.iter().take_while(|c| c.is_ascii_digit()).count();
                let ny = y.iter().take_while(|c| c.is_ascii_digit()).count();
                let (dx, dy) = (&x[..nx], &y[..ny]);
                let tx = trim_leading_zeros(dx);
                let ty = trim_leading_zeros(dy);
                let ord = tx.len().cmp(&ty.len()).then_with(|| tx.cmp(ty));
                if ord != Ordering::Equal {
                    return ord;
                }
                x = &x[nx..];
                y = &y[ny..];
            }
            (Some(c), Some(d)) => {
                if c != d {
                    return c.cmp(d);
                }
                x = &x[1..];
                y = &y[1..];
            }
        }
    }
}

fn trim_leading_zeros(digits: &[u8]) -> &[u8] {
    let zeros = digits.iter().take_while(|&&c| c == b'0').count();
    &digits[zeros..]
}

/// Bijection between external labels and dense 0-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelTable {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelTable {
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        labels.sort_by(|a, b| natural_cmp(a, b));
        labels.dedup();
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();
        Self { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Immutable, validated collection of ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    subjects: LabelTable,
    pvss: LabelTable,
    srcs: LabelTable,
    hrcs: LabelTable,
    src_of: Vec<usize>,
    hrc_of: Vec<usize>,
    scale: Scale,
}

impl Dataset {
    /// Validates the records against the mappings and the scale and interns
    /// every label set. Mapping entries for PVSs that never appear in
    /// `records` are ignored.
    pub fn build(
        records: &[RatingRecord],
        src_of: &HashMap<String, String>,
        hrc_of: &HashMap<String, String>,
        scale: Scale,
    ) -> Result<Self, DatasetError> {
        scale.validate()?;
        if records.is_empty() {
            return Err(DatasetError::Empty);
        }

        for (pos, rec) in records.iter().enumerate() {
            if rec.repetition == 0 {
                return Err(DatasetError::InvalidRepetition { record: pos });
            }
            for (field, label) in [
                ("subject", Some(rec.subject.as_str())),
                ("pvs", Some(rec.pvs.as_str())),
                ("src", src_of.get(&rec.pvs).map(String::as_str)),
                ("hrc", hrc_of.get(&rec.pvs).map(String::as_str)),
            ] {
                if let Some(label) = label.filter(|l| l.is_empty() || l.trim() != *l) {
                    return Err(DatasetError::InvalidLabel {
                        field,
                        label: label.to_owned(),
                        record: pos,
                    });
                }
            }
            if !scale.contains(rec.score) {
                return Err(DatasetError::ScoreOutOfScale {
                    record: pos,
                    score: rec.score,
                    scale: scale.to_string(),
                });
            }
            for (map, table) in [("src", src_of), ("hrc", hrc_of)] {
                if !table.contains_key(&rec.pvs) {
                    return Err(DatasetError::UnmappedPvs {
                        pvs: rec.pvs.clone(),
                        map,
                        record: pos,
                    });
                }
            }
        }

        let subjects = LabelTable::from_labels(records.iter().map(|r| r.subject.as_str()));
        let pvss = LabelTable::from_labels(records.iter().map(|r| r.pvs.as_str()));
        let srcs = LabelTable::from_labels(pvss.labels().iter().map(|p| src_of[p].as_str()));
        let hrcs = LabelTable::from_labels(pvss.labels().iter().map(|p| hrc_of[p].as_str()));
        let src_of_idx = pvss
            .labels()
            .iter()
            .map(|p| srcs.index_of(&src_of[p]).expect("interned"))
            .collect();
        let hrc_of_idx = pvss
            .labels()
            .iter()
            .map(|p| hrcs.index_of(&hrc_of[p]).expect("interned"))
            .collect();

        let mut seen: HashMap<(usize, usize, u32), usize> = HashMap::with_capacity(records.len());
        let mut interned = Vec::with_capacity(records.len());
        for (pos, rec) in records.iter().enumerate() {
            let subject = subjects.index_of(&rec.subject).expect("interned");
            let pvs = pvss.index_of(&rec.pvs).expect("interned");
            if let Some(&first) = seen.get(&(subject, pvs, rec.repetition)) {
                return Err(DatasetError::DuplicateObservation {
                    subject: rec.subject.clone(),
                    pvs: rec.pvs.clone(),
                    repetition: rec.repetition,
                    first,
                    second: pos,
                });
            }
            seen.insert((subject, pvs, rec.repetition), pos);
            interned.push((
                pos,
                Record {
                    subject,
                    pvs,
                    repetition: rec.repetition,
                    order: rec.order,
                    score: rec.score,
                },
            ));
        }

        check_orders(&interned, &subjects)?;

        interned.sort_by_key(|(_, r)| (r.subject, r.pvs, r.repetition));
        Ok(Self {
            records: interned.into_iter().map(|(_, r)| r).collect(),
            subjects,
            pvss,
            srcs,
            hrcs,
            src_of: src_of_idx,
            hrc_of: hrc_of_idx,
            scale,
        })
    }

    /// Records sorted by `(subject, pvs, repetition)`.
    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn subjects(&self) -> &LabelTable {
        &self.subjects
    }

    pub fn pvss(&self) -> &LabelTable {
        &self.pvss
    }

    pub fn srcs(&self) -> &LabelTable {
        &self.srcs
    }

    pub fn hrcs(&self) -> &LabelTable {
        &self.hrcs
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_pvss(&self) -> usize {
        self.pvss.len()
    }

    pub fn n_srcs(&self) -> usize {
        self.srcs.len()
    }

    pub fn n_hrcs(&self) -> usize {
        self.hrcs.len()
    }

    /// `k(j)`: SRC index of PVS `pvs`.
    pub fn src_of(&self, pvs: usize) -> usize {
        self.src_of[pvs]
    }

    /// `h(j)`: HRC index of PVS `pvs`.
    pub fn hrc_of(&self, pvs: usize) -> usize {
        self.hrc_of[pvs]
    }

    /// Inverse image of `k(·)`: the PVS indices of every SRC, ascending.
    pub fn group_by_src(&self) -> Vec<Vec<usize>> {
        invert(&self.src_of, self.srcs.len())
    }

    /// Inverse image of `h(·)`.
    pub fn group_by_hrc(&self) -> Vec<Vec<usize>> {
        invert(&self.hrc_of, self.hrcs.len())
    }

    pub fn has_order(&self) -> bool {
        self.records.iter().any(|r| r.order.is_some())
    }

    /// Converts back to labelled records plus the two label mappings.
    pub fn to_rating_records(
        &self,
    ) -> (
        Vec<RatingRecord>,
        HashMap<String, String>,
        HashMap<String, String>,
    ) {
        let records = self
            .records
            .iter()
            .map(|r| RatingRecord {
                subject: self.subjects.label(r.subject).to_owned(),
                pvs: self.pvss.label(r.pvs).to_owned(),
                repetition: r.repetition,
                order: r.order,
                score: r.score,
            })
            .collect();
        let src_of = (0..self.n_pvss())
            .map(|j| {
                (
                    self.pvss.label(j).to_owned(),
                    self.srcs.label(self.src_of[j]).to_owned(),
                )
            })
            .collect();
        let hrc_of = (0..self.n_pvss())
            .map(|j| {
                (
                    self.pvss.label(j).to_owned(),
                    self.hrcs.label(self.hrc_of[j]).to_owned(),
                )
            })
            .collect();
        (records, src_of, hrc_of)
    }
}

fn invert(map: &[usize], n_groups: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); n_groups];
    for (j, &g) in map.iter().enumerate() {
        groups[g].push(j);
    }
    groups
}

/// Within one subject, order values are either absent on every record or
/// present and pairwise distinct.
fn check_orders(records: &[(usize, Record)], subjects: &LabelTable) -> Result<(), DatasetError> {
    let mut with_order: Vec<Option<usize>> = vec![None; subjects.len()];
    let mut without_order: Vec<Option<usize>> = vec![None; subjects.len()];
    let mut used: HashMap<(usize, u32), usize> = HashMap::new();
    for &(pos, rec) in records {
        let name = || subjects.label(rec.subject).to_owned();
        match rec.order {
            Some(0) => {
                return Err(DatasetError::InconsistentOrder {
                    subject: name(),
                    reason: "order values start at 1",
                    first: pos,
                    second: pos,
                })
            }
            Some(o) => {
                if let Some(first) = without_order[rec.subject] {
                    return Err(mixed(name(), first, pos));
                }
                with_order[rec.subject].get_or_insert(pos);
                if let Some(&first) = used.get(&(rec.subject, o)) {
                    return Err(DatasetError::InconsistentOrder {
                        subject: name(),
                        reason: "order value used twice",
                        first,
                        second: pos,
                    });
                }
                used.insert((rec.subject, o), pos);
            }
            None => {
                if let Some(first) = with_order[rec.subject] {
                    return Err(mixed(name(), first, pos));
                }
                without_order[rec.subject].get_or_insert(pos);
            }
        }
    }
    Ok(())
}

fn mixed(subject: String, first: usize, second: usize) -> DatasetError {
    DatasetError::InconsistentOrder {
        subject,
        reason: "some records carry an order value and some do not",
        first,
        second,
    }
}
