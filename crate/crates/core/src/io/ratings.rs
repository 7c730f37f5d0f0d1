//! Ratings CSV.
//!
//! Canonical header: `subject,pvs,src,hrc,repetition,order,score`. Column
//! names correspond to the notation symbols `i, j, k, h, r, o, u`. Required
//! columns are `subject`, `pvs`, `src` and `score`; `hrc` defaults to
//! [`DEFAULT_HRC`], `repetition` to 1 and `order` to absent.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;

use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, RatingRecord, Scale};

/// HRC label used when a file carries no `hrc` column or an empty cell.
pub const DEFAULT_HRC: &str = "-";

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("missing required column '{0}'")]
    MissingColumn(String),

    #[error("headers '{first}' and '{second}' both resolve to column '{column}'")]
    AmbiguousHeader {
        column: String,
        first: String,
        second: String,
    },

    #[error("row {row}, column '{column}': {reason}")]
    BadCell {
        row: u64,
        column: String,
        reason: String,
    },

    #[error("{}: {source}", fmt_rows(.rows))]
    Invalid { rows: Vec<u64>, source: DatasetError },

    #[error("alias map: {0}")]
    Aliases(String),

    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
}

fn fmt_rows(rows: &[u64]) -> String {
    match rows {
        [] => "input".to_owned(),
        [r] => format!("row {r}"),
        _ => format!(
            "rows {}",
            rows.iter().map(u64::to_string).collect::<Vec<_>>().join(" and ")
        ),
    }
}

/// Canonical columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Column {
    Subject,
    Pvs,
    Src,
    Hrc,
    Repetition,
    Order,
    Score,
}

impl Column {
    pub const ALL: [Column; 7] = [
        Column::Subject,
        Column::Pvs,
        Column::Src,
        Column::Hrc,
        Column::Repetition,
        Column::Order,
        Column::Score,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Subject => "subject",
            Self::Pvs => "pvs",
            Self::Src => "src",
            Self::Hrc => "hrc",
            Self::Repetition => "repetition",
            Self::Order => "order",
            Self::Score => "score",
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Accepted header spellings for every canonical column. Matching is
/// case-insensitive and ignores surrounding whitespace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnAliasMap {
    aliases: Vec<(Column, Vec<String>)>,
}

impl ColumnAliasMap {
    /// Every canonical column must be listed and no alias may belong to two
    /// columns.
    pub fn new<S: AsRef<str>>(entries: &[(Column, &[S])]) -> Result<Self, ParseError> {
        let mut owner: HashMap<String, Column> = HashMap::new();
        let mut aliases = Vec::with_capacity(Column::ALL.len());
        for col in Column::ALL {
            let Some((_, list)) = entries.iter().find(|(c, _)| *c == col) else {
                return Err(ParseError::Aliases(format!("no entry for column '{col}'")));
            };
            let mut norm = Vec::with_capacity(list.len());
            for alias in list.iter() {
                let a = normalize(alias.as_ref());
                if let Some(prev) = owner.insert(a.clone(), col) {
                    if prev != col {
                        return Err(ParseError::Aliases(format!(
                            "alias '{a}' claimed by both '{prev}' and '{col}'"
                        )));
                    }
                }
                norm.push(a);
            }
            aliases.push((col, norm));
        }
        Ok(Self { aliases })
    }

    /// Canonical names plus their single-letter notation symbols.
    pub fn canonical() -> Self {
        Self::new(&[
            (Column::Subject, &["subject", "i"][..]),
            (Column::Pvs, &["pvs", "j"]),
            (Column::Src, &["src", "k"]),
            (Column::Hrc, &["hrc", "h"]),
            (Column::Repetition, &["repetition", "r"]),
            (Column::Order, &["order", "o"]),
            (Column::Score, &["score", "u"]),
        ])
        .expect("canonical aliases are disjoint")
    }

    /// BT.500-style `u_ijkr`: observer `i`, test condition `j` (HRC),
    /// sequence `k` (SRC), repetition `r`.
    pub fn bt500() -> Self {
        Self::new(&[
            (Column::Subject, &["subject", "observer", "i"][..]),
            (Column::Pvs, &["pvs"]),
            (Column::Src, &["src", "sequence", "image", "k"]),
            (Column::Hrc, &["hrc", "condition", "test condition", "j"]),
            (Column::Repetition, &["repetition", "r"]),
            (Column::Order, &["order", "o"]),
            (Column::Score, &["score", "u"]),
        ])
        .expect("bt500 aliases are disjoint")
    }

    /// P.1401-style `v_{j,l,k}`: condition `j` (HRC), talker `l` (SRC),
    /// listener `k` (subject), opinion `v`. PVSs are marked `i`.
    pub fn p1401() -> Self {
        Self::new(&[
            (Column::Subject, &["subject", "listener", "k"][..]),
            (Column::Pvs, &["pvs", "i"]),
            (Column::Src, &["src", "talker", "l"]),
            (Column::Hrc, &["hrc", "condition", "j"]),
            (Column::Repetition, &["repetition", "r"]),
            (Column::Order, &["order", "o"]),
            (Column::Score, &["score", "opinion", "v"]),
        ])
        .expect("p1401 aliases are disjoint")
    }

    /// Looks up a built-in preset: `canonical`, `bt500` or `p1401`.
    pub fn preset(name: &str) -> Option<Self> {
        match normalize(name).as_str() {
            "canonical" => Some(Self::canonical()),
            "bt500" => Some(Self::bt500()),
            "p1401" => Some(Self::p1401()),
            _ => None,
        }
    }

    pub fn aliases(&self, column: Column) -> &[String] {
        &self
            .aliases
            .iter()
            .find(|(c, _)| *c == column)
            .expect("every column present")
            .1
    }

    fn column_of(&self, header: &str) -> Option<Column> {
        let h = normalize(header);
        self.aliases
            .iter()
            .find(|(_, list)| list.contains(&h))
            .map(|(c, _)| *c)
    }

    /// Maps every recognised canonical column to its position in `headers`.
    /// Unrecognised headers are ignored.
    fn resolve(&self, headers: &csv::StringRecord) -> Result<HashMap<Column, usize>, ParseError> {
        let mut found: HashMap<Column, usize> = HashMap::new();
        for (pos, header) in headers.iter().enumerate() {
            if let Some(col) = self.column_of(header) {
                if let Some(&prev) = found.get(&col) {
                    return Err(ParseError::AmbiguousHeader {
                        column: col.name().to_owned(),
                        first: headers[prev].to_owned(),
                        second: header.to_owned(),
                    });
                }
                found.insert(col, pos);
            }
        }
        Ok(found)
    }
}

impl Default for ColumnAliasMap {
    fn default() -> Self {
        Self::canonical()
    }
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Without a `pvs` column, identify each PVS by its `(src, hrc)` pair,
    /// labelled `src/hrc`.
    pub synthesize_pvs: bool,
}

/// Reads a ratings CSV into a validated [`Dataset`].
///
/// Row numbers in diagnostics are 1-based file lines; the header is row 1.
pub fn parse_csv<R: Read>(
    input: R,
    aliases: &ColumnAliasMap,
    scale: Scale,
    options: ParseOptions,
) -> Result<Dataset, ParseError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let cols = aliases.resolve(&headers)?;

    let require = |c: Column| {
        cols.get(&c)
            .copied()
            .ok_or_else(|| ParseError::MissingColumn(c.name().to_owned()))
    };
    let subject_col = require(Column::Subject)?;
    let src_col = require(Column::Src)?;
    let score_col = require(Column::Score)?;
    let pvs_col = match cols.get(&Column::Pvs) {
        Some(&c) => Some(c),
        None if options.synthesize_pvs => {
            require(Column::Hrc)?;
            None
        }
        None => return Err(ParseError::MissingColumn(Column::Pvs.name().to_owned())),
    };
    let hrc_col = cols.get(&Column::Hrc).copied();
    let rep_col = cols.get(&Column::Repetition).copied();
    let order_col = cols.get(&Column::Order).copied();

    let mut records = Vec::new();
    let mut rows = Vec::new();
    // pvs label -> (src, hrc, first row)
    let mut mapping: HashMap<String, (String, String, u64)> = HashMap::new();

    for result in reader.records() {
        let rec = result?;
        let row = rec.position().map_or(0, |p| p.line());
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let bad = |col: Column, reason: String| ParseError::BadCell {
            row,
            column: col.name().to_owned(),
            reason,
        };
        let label = |c: usize, col: Column| {
            let v = cell(c);
            if v.is_empty() {
                Err(bad(col, "empty label".into()))
            } else {
                Ok(v.to_owned())
            }
        };

        let subject = label(subject_col, Column::Subject)?;
        let src = label(src_col, Column::Src)?;
        let hrc = match hrc_col.map(cell) {
            Some(v) if !v.is_empty() => v.to_owned(),
            _ => DEFAULT_HRC.to_owned(),
        };
        let pvs = match pvs_col {
            Some(c) => label(c, Column::Pvs)?,
            None => format!("{src}/{hrc}"),
        };
        let score: f64 = cell(score_col)
            .parse()
            .map_err(|_| bad(Column::Score, format!("'{}' is not a number", cell(score_col))))?;
        if !score.is_finite() {
            return Err(bad(Column::Score, "score must be finite".into()));
        }
        let repetition = match rep_col.map(cell) {
            Some(v) if !v.is_empty() => v
                .parse::<u32>()
                .ok()
                .filter(|&r| r >= 1)
                .ok_or_else(|| bad(Column::Repetition, format!("'{v}' is not an integer >= 1")))?,
            _ => 1,
        };
        let order = match order_col.map(cell) {
            Some(v) if !v.is_empty() => Some(
                v.parse::<u32>()
                    .ok()
                    .filter(|&o| o >= 1)
                    .ok_or_else(|| bad(Column::Order, format!("'{v}' is not an integer >= 1")))?,
            ),
            _ => None,
        };

        match mapping.get(&pvs) {
            Some((k, h, first)) => {
                if *k != src {
                    return Err(bad(
                        Column::Src,
                        format!("pvs '{pvs}' is mapped to src '{k}' on row {first}"),
                    ));
                }
                if *h != hrc {
                    return Err(bad(
                        Column::Hrc,
                        format!("pvs '{pvs}' is mapped to hrc '{h}' on row {first}"),
                    ));
                }
            }
            None => {
                mapping.insert(pvs.clone(), (src, hrc, row));
            }
        }

        records.push(RatingRecord {
            subject,
            pvs,
            repetition,
            order,
            score,
        });
        rows.push(row);
    }

    let src_of = mapping
        .iter()
        .map(|(j, (k, _, _))| (j.clone(), k.clone()))
        .collect();
    let hrc_of = mapping
        .iter()
        .map(|(j, (_, h, _))| (j.clone(), h.clone()))
        .collect();
    Dataset::build(&records, &src_of, &hrc_of, scale).map_err(|source| ParseError::Invalid {
        rows: source.record_positions().iter().map(|&p| rows[p]).collect(),
        source,
    })
}

/// Writes the canonical CSV: LF line endings, rows sorted by
/// `(subject, pvs, repetition)`, scores in shortest round-trip form.
pub fn write_csv(ds: &Dataset) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(Column::ALL.iter().map(|c| c.name()))
        .expect("in-memory write");
    for r in ds.records() {
        let order = r.order.map(|o| o.to_string()).unwrap_or_default();
        w.write_record([
            ds.subjects().label(r.subject),
            ds.pvss().label(r.pvs),
            ds.srcs().label(ds.src_of(r.pvs)),
            ds.hrcs().label(ds.hrc_of(r.pvs)),
            &r.repetition.to_string(),
            &order,
            &r.score.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("labels are utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five() -> Scale {
        Scale::discrete(5).unwrap()
    }

    fn parse(text: &str, aliases: &ColumnAliasMap) -> Result<Dataset, ParseError> {
        parse_csv(text.as_bytes(), aliases, five(), ParseOptions::default())
    }

    #[test]
    fn one_row_file() {
        let ds = parse("subject,pvs,src,hrc,score\ns1,j1,k1,h1,4\n", &ColumnAliasMap::canonical()).unwrap();
        assert_eq!(ds.records().len(), 1);
        assert_eq!(ds.records()[0].score, 4.0);
        assert_eq!(ds.records()[0].repetition, 1);
        assert_eq!(ds.hrcs().label(0), "h1");
    }

    #[test]
    fn bt500_without_pvs_column() {
        let err = parse(
            "observer,condition,sequence,score\no1,c1,q1,3\n",
            &ColumnAliasMap::bt500(),
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::MissingColumn(ref c) if c == "pvs"));

        let ds = parse_csv(
            "Observer,Condition,Sequence,Score\no1,c1,q1,3\no1,c2,q1,4\n".as_bytes(),
            &ColumnAliasMap::bt500(),
            five(),
            ParseOptions { synthesize_pvs: true },
        )
        .unwrap();
        assert_eq!(ds.pvss().labels(), &["q1/c1", "q1/c2"]);
        assert_eq!(ds.n_srcs(), 1);
        assert_eq!(ds.n_hrcs(), 2);
    }

    #[test]
    fn p1401_roles() {
        let ds = parse(
            "listener,talker,condition,pvs,opinion\nL1,T1,C1,p1,5\nL2,T1,C1,p1,4\n",
            &ColumnAliasMap::p1401(),
        )
        .unwrap();
        assert_eq!(ds.subjects().labels(), &["L1", "L2"]);
        assert_eq!(ds.srcs().labels(), &["T1"]);
        assert_eq!(ds.hrcs().labels(), &["C1"]);
    }

    #[test]
    fn ambiguous_headers_are_rejected() {
        let err = parse("subject,i,pvs,src,score\ns1,s1,j1,k1,3\n", &ColumnAliasMap::canonical())
            .unwrap_err();
        assert!(matches!(err, ParseError::AmbiguousHeader { .. }));
    }

    #[test]
    fn alias_lists_must_be_disjoint_and_complete() {
        let dup = ColumnAliasMap::new(&[
            (Column::Subject, &["subject", "x"][..]),
            (Column::Pvs, &["pvs", "x"]),
            (Column::Src, &["src"]),
            (Column::Hrc, &["hrc"]),
            (Column::Repetition, &["repetition"]),
            (Column::Order, &["order"]),
            (Column::Score, &["score"]),
        ]);
        assert!(matches!(dup, Err(ParseError::Aliases(_))));
        let partial = ColumnAliasMap::new(&[(Column::Subject, &["subject"][..])]);
        assert!(matches!(partial, Err(ParseError::Aliases(_))));
        assert!(ColumnAliasMap::preset("BT500").is_some());
        assert!(ColumnAliasMap::preset("nope").is_none());
    }

    #[test]
    fn bad_cells_carry_row_numbers() {
        let err = parse(
            "subject,pvs,src,score\ns1,j1,k1,4\ns1,j2,k1,abc\n",
            &ColumnAliasMap::canonical(),
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::BadCell { row: 3, ref column, .. } if column == "score"));

        let err = parse(
            "subject,pvs,src,score,repetition\ns1,j1,k1,4,0\n",
            &ColumnAliasMap::canonical(),
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::BadCell { row: 2, .. }));

        let err = parse(
            "subject,pvs,src,score\ns1,j1,k1,4\ns2,j1,k2,4\n",
            &ColumnAliasMap::canonical(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn duplicates_name_both_rows() {
        let err = parse(
            "subject,pvs,src,score\ns1,j1,k1,4\ns2,j1,k1,3\ns1,j1,k1,2\n",
            &ColumnAliasMap::canonical(),
        )
        .unwrap_err();
        match err {
            ParseError::Invalid { rows, .. } => assert_eq!(rows, vec![2, 4]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn write_one_record() {
        let ds = parse("subject,pvs,src,score\ns1,j1,k1,4\n", &ColumnAliasMap::canonical()).unwrap();
        assert_eq!(
            write_csv(&ds),
            "subject,pvs,src,hrc,repetition,order,score\ns1,j1,k1,-,1,,4\n"
        );
    }

    #[test]
    fn write_is_independent_of_row_order() {
        let a = "subject,pvs,src,hrc,order,score\ns2,j1,k1,h1,1,3\ns1,j2,k2,h1,2,4\ns1,j1,k1,h1,1,5\n";
        let b = "subject,pvs,src,hrc,order,score\ns1,j1,k1,h1,1,5\ns2,j1,k1,h1,1,3\ns1,j2,k2,h1,2,4\n";
        let ca = ColumnAliasMap::canonical();
        let wa = write_csv(&parse(a, &ca).unwrap());
        assert_eq!(wa, write_csv(&parse(b, &ca).unwrap()));
        let again = write_csv(&parse(&wa, &ca).unwrap());
        assert_eq!(wa, again);
    }
}
