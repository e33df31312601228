//! Person-year panel records, HAS derivation, and extraction of transition
//! and first-difference records.

use crate::error::{Error, Result};
use crate::grid::{DomainCell, DomainGrid};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

/// One interview record. Empty CSV fields become `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonYear {
    pub person_id: String,
    pub year: i32,
    pub age: i32,
    pub income: Option<f64>,
    pub housing_cost: Option<f64>,
    pub has: Option<bool>,
    pub mh: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Out of HAS to in HAS.
    Entry,
    /// In HAS to out of HAS.
    Exit,
}

impl Direction {
    pub fn at_risk_state(self) -> bool {
        matches!(self, Direction::Exit)
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "entry" => Some(Direction::Entry),
            "exit" => Some(Direction::Exit),
            _ => None,
        }
    }
}

/// Consecutive-year state pair; `cell` holds age and year at the later interview.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransitionRecord {
    pub cell: DomainCell,
    pub prev_state: bool,
    pub next_state: bool,
}

impl TransitionRecord {
    /// True when the state changed, i.e. the entry or exit event happened.
    pub fn event(&self) -> bool {
        self.prev_state != self.next_state
    }
}

/// Consecutive-year change in MH score; `exposed` is the HAS state at t−1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffRecord {
    pub cell: DomainCell,
    pub y_prev: f64,
    pub dy: f64,
    pub exposed: bool,
}

/// At-risk and event counts for every grid cell, in grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCounts {
    pub grid: DomainGrid,
    pub n: Vec<u64>,
    pub k: Vec<u64>,
}

impl CellCounts {
    pub fn zeros(grid: DomainGrid) -> Self {
        Self { grid, n: vec![0; grid.len()], k: vec![0; grid.len()] }
    }

    /// Builds counts from `(n, k)` pairs in grid order.
    pub fn from_pairs(grid: DomainGrid, pairs: &[(u64, u64)]) -> Result<Self> {
        if pairs.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!("{} count pairs for {} cells", pairs.len(), grid.len())));
        }
        if let Some((n, k)) = pairs.iter().find(|(n, k)| k > n) {
            return Err(Error::Data(format!("event count {k} exceeds at-risk count {n}")));
        }
        Ok(Self { grid, n: pairs.iter().map(|p| p.0).collect(), k: pairs.iter().map(|p| p.1).collect() })
    }

    pub fn get(&self, age: i32, year: i32) -> Option<(u64, u64)> {
        self.grid.index_of(age, year).map(|i| (self.n[i], self.k[i]))
    }

    pub fn total_n(&self) -> u64 {
        self.n.iter().sum()
    }

    pub fn total_k(&self) -> u64 {
        self.k.iter().sum()
    }

    pub fn populated(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n.len()).filter(|&i| self.n[i] > 0)
    }
}

/// The 30/40 rule: housing cost at least 30% of income while income is at or
/// below the year's 40th percentile. `None` when inputs are missing.
pub fn derive_has(rec: &PersonYear, income_p40: f64) -> Option<bool> {
    let income = rec.income?;
    let cost = rec.housing_cost?;
    if !(income > 0.0) || !(cost >= 0.0) {
        return None;
    }
    Some(cost >= 0.30 * income && income <= income_p40)
}

/// Per-year income thresholds for [`derive_has`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Thresholds {
    pub income_p40: BTreeMap<i32, f64>,
}

impl Thresholds {
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            year: i32,
            income_p40: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut income_p40 = BTreeMap::new();
        for row in rdr.deserialize() {
            let row: Row = row?;
            if income_p40.insert(row.year, row.income_p40).is_some() {
                return Err(Error::Data(format!("duplicate threshold for year {}", row.year)));
            }
        }
        Ok(Self { income_p40 })
    }
}

/// Counts gathered while reading and reshaping a panel.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub records_read: usize,
    pub excluded_missing_has: usize,
    pub missing_mh: usize,
    pub entry_transitions: usize,
    pub exit_transitions: usize,
    pub diff_records: usize,
    pub skipped_gaps: usize,
    pub outside_grid: usize,
}

impl IngestReport {
    pub fn rows(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("records_read", self.records_read),
            ("excluded_missing_has", self.excluded_missing_has),
            ("missing_mh", self.missing_mh),
            ("entry_transitions", self.entry_transitions),
            ("exit_transitions", self.exit_transitions),
            ("diff_records", self.diff_records),
            ("skipped_gaps", self.skipped_gaps),
            ("outside_grid", self.outside_grid),
        ]
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["item", "count"])?;
        for (item, count) in self.rows() {
            w.write_record([item, &count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Validated panel, sorted by person then year.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Panel {
    records: Vec<PersonYear>,
}

impl Panel {
    /// Sorts and checks the record invariants (one record per person-year,
    /// MH on [0, 100]).
    pub fn new(mut records: Vec<PersonYear>) -> Result<Self> {
        records.sort_by(|a, b| a.person_id.cmp(&b.person_id).then(a.year.cmp(&b.year)));
        for w in records.windows(2) {
            if w[0].person_id == w[1].person_id && w[0].year == w[1].year {
                return Err(Error::Data(format!("duplicate record for person {} in {}", w[0].person_id, w[0].year)));
            }
        }
        if let Some(r) = records.iter().find(|r| r.mh.is_some_and(|m| !(0.0..=100.0).contains(&m))) {
            return Err(Error::Data(format!("MH score {} for person {} in {} is outside [0, 100]", r.mh.unwrap(), r.person_id, r.year)));
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[PersonYear] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Consecutive record pairs of the same person, including gapped ones.
    fn pairs(&self) -> impl Iterator<Item = (&PersonYear, &PersonYear)> {
        self.records.windows(2).filter(|w| w[0].person_id == w[1].person_id).map(|w| (&w[0], &w[1]))
    }

    /// Reads the panel CSV (`person_id,year,age,income,housing_cost,has,mh`;
    /// `has` and the income columns may be absent). Records whose HAS state
    /// is missing and cannot be derived are dropped and counted.
    pub fn read_csv<R: Read>(reader: R, thresholds: Option<&Thresholds>) -> Result<(Self, IngestReport)> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(c_id), Some(c_year), Some(c_age)) = (col("person_id"), col("year"), col("age")) else {
            return Err(Error::Data("panel header must contain person_id, year and age".into()));
        };
        let (c_income, c_cost, c_has, c_mh) = (col("income"), col("housing_cost"), col("has"), col("mh"));
        if c_has.is_none() && (thresholds.is_none() || c_income.is_none() || c_cost.is_none()) {
            return Err(Error::Data("panel has no `has` column; income, housing_cost and a thresholds table are required".into()));
        }

        let mut report = IngestReport::default();
        let mut records = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            report.records_read += 1;
            let field = |c: Option<usize>| c.and_then(|c| row.get(c)).filter(|s| !s.is_empty());
            let num = |c: Option<usize>, name: &str| -> Result<Option<f64>> {
                field(c)
                    .map(|s| s.parse::<f64>().map_err(|_| Error::Data(format!("row {}: bad {name} value {s:?}", line + 2))))
                    .transpose()
            };
            let int = |c: usize, name: &str| -> Result<i32> {
                let s = field(Some(c)).ok_or_else(|| Error::Data(format!("row {}: missing {name}", line + 2)))?;
                s.parse::<i32>().map_err(|_| Error::Data(format!("row {}: bad {name} value {s:?}", line + 2)))
            };
            let person_id = field(Some(c_id))
                .ok_or_else(|| Error::Data(format!("row {}: missing person_id", line + 2)))?
                .to_string();
            let year = int(c_year, "year")?;
            let age = int(c_age, "age")?;
            let income = num(c_income, "income")?;
            let housing_cost = num(c_cost, "housing_cost")?;
            let mh = num(c_mh, "mh")?;
            let mut has = match field(c_has) {
                None => None,
                Some("1") | Some("true") => Some(true),
                Some("0") | Some("false") => Some(false),
                Some(s) => return Err(Error::Data(format!("row {}: bad has value {s:?}", line + 2))),
            };
            let mut rec = PersonYear { person_id, year, age, income, housing_cost, has, mh };
            if has.is_none() {
                if let Some(p40) = thresholds.and_then(|t| t.income_p40.get(&year)) {
                    has = derive_has(&rec, *p40);
                }
            }
            let Some(state) = has else {
                report.excluded_missing_has += 1;
                continue;
            };
            rec.has = Some(state);
            if rec.mh.is_none() {
                report.missing_mh += 1;
            }
            records.push(rec);
        }
        Ok((Self::new(records)?, report))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["person_id", "year", "age", "income", "housing_cost", "has", "mh"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.person_id.clone(),
                r.year.to_string(),
                r.age.to_string(),
                opt(r.income),
                opt(r.housing_cost),
                r.has.map(|h| if h { "1" } else { "0" }.to_string()).unwrap_or_default(),
                opt(r.mh),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fills in reshaping counts for `grid`.
    pub fn summarize(&self, grid: &DomainGrid, report: &mut IngestReport) {
        let stats = self.scan(grid);
        report.entry_transitions = self.extract_transitions(Direction::Entry, grid).len();
        report.exit_transitions = self.extract_transitions(Direction::Exit, grid).len();
        report.diff_records = self.extract_diffs(grid).len();
        report.skipped_gaps = stats.0;
        report.outside_grid = stats.1;
    }

    fn scan(&self, grid: &DomainGrid) -> (usize, usize) {
        let mut gaps = 0;
        let mut outside = 0;
        for (a, b) in self.pairs() {
            if b.year != a.year + 1 {
                gaps += 1;
            } else if !grid.contains(b.age, b.year) {
                outside += 1;
            }
        }
        (gaps, outside)
    }

    pub fn extract_transitions(&self, direction: Direction, grid: &DomainGrid) -> Vec<TransitionRecord> {
        let at_risk = direction.at_risk_state();
        self.pairs()
            .filter(|(a, b)| b.year == a.year + 1 && grid.contains(b.age, b.year))
            .filter_map(|(a, b)| match (a.has, b.has) {
                (Some(p), Some(n)) if p == at_risk => {
                    Some(TransitionRecord { cell: DomainCell::new(b.age, b.year), prev_state: p, next_state: n })
                }
                _ => None,
            })
            .collect()
    }

    pub fn extract_diffs(&self, grid: &DomainGrid) -> Vec<DiffRecord> {
        self.pairs()
            .filter(|(a, b)| b.year == a.year + 1 && grid.contains(b.age, b.year))
            .filter_map(|(a, b)| {
                let (y0, y1, m) = (a.mh?, b.mh?, a.has?);
                Some(DiffRecord { cell: DomainCell::new(b.age, b.year), y_prev: y0, dy: y1 - y0, exposed: m })
            })
            .collect()
    }

    /// Distinct person identifiers.
    pub fn n_persons(&self) -> usize {
        self.records.iter().map(|r| r.person_id.as_str()).collect::<HashSet<_>>().len()
    }
}

pub fn aggregate(records: &[TransitionRecord], grid: &DomainGrid) -> CellCounts {
    let mut counts = CellCounts::zeros(*grid);
    for r in records {
        if let Some(i) = grid.index_of(r.cell.age, r.cell.year) {
            counts.n[i] += 1;
            counts.k[i] += r.event() as u64;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, year: i32, age: i32, has: Option<bool>, mh: Option<f64>) -> PersonYear {
        PersonYear { person_id: id.into(), year, age, income: None, housing_cost: None, has, mh }
    }

    fn money(income: f64, cost: f64) -> PersonYear {
        PersonYear { income: Some(income), housing_cost: Some(cost), ..rec("x", 2001, 40, None, None) }
    }

    #[test]
    fn thirty_forty_rule() {
        assert_eq!(derive_has(&money(50000.0, 20000.0), 52000.0), Some(true));
        assert_eq!(derive_has(&money(50000.0, 10000.0), 52000.0), Some(false));
        assert_eq!(derive_has(&money(80000.0, 30000.0), 52000.0), Some(false));
        assert_eq!(derive_has(&rec("x", 2001, 40, None, None), 52000.0), None);
    }

    #[test]
    fn exit_path_reading() {
        let g = DomainGrid::hilda();
        let p = Panel::new(vec![
            rec("a", 2001, 40, Some(true), None),
            rec("a", 2002, 41, Some(true), None),
            rec("a", 2003, 42, Some(false), None),
        ])
        .unwrap();
        let exits = p.extract_transitions(Direction::Exit, &g);
        assert_eq!(exits.len(), 2);
        assert_eq!((exits[0].cell.year, exits[0].event()), (2002, false));
        assert_eq!((exits[1].cell.year, exits[1].event()), (2003, true));
        assert_eq!(p.extract_transitions(Direction::Entry, &g).len(), 0);
    }

    #[test]
    fn entry_path_and_gap() {
        let g = DomainGrid::hilda();
        let p = Panel::new(vec![rec("a", 2001, 40, Some(false), None), rec("a", 2002, 41, Some(true), None)]).unwrap();
        let entries = p.extract_transitions(Direction::Entry, &g);
        assert_eq!(entries.len(), 1);
        assert!(entries[0].event());
        assert!(p.extract_transitions(Direction::Exit, &g).is_empty());

        let gap = Panel::new(vec![rec("a", 2001, 40, Some(true), None), rec("a", 2003, 42, Some(false), None)]).unwrap();
        assert!(gap.extract_transitions(Direction::Exit, &g).is_empty());
        assert!(gap.extract_transitions(Direction::Entry, &g).is_empty());
    }

    #[test]
    fn aggregation_counts() {
        let g = DomainGrid::hilda();
        let cell = DomainCell::new(40, 2005);
        let recs: Vec<TransitionRecord> =
            (0..5).map(|i| TransitionRecord { cell, prev_state: true, next_state: i >= 2 }).collect();
        let c = aggregate(&recs, &g);
        assert_eq!(c.get(40, 2005), Some((5, 2)));
        let empty = aggregate(&[], &g);
        assert!(empty.n.iter().all(|&n| n == 0) && empty.k.iter().all(|&k| k == 0));
    }

    #[test]
    fn diff_records() {
        let g = DomainGrid::hilda();
        let p = Panel::new(vec![rec("a", 2001, 40, Some(true), Some(75.0)), rec("a", 2002, 41, Some(false), Some(70.0))]).unwrap();
        let d = p.extract_diffs(&g);
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].dy, d[0].y_prev, d[0].exposed), (-5.0, 75.0, true));
        let gap = Panel::new(vec![rec("a", 2001, 40, Some(true), Some(75.0)), rec("a", 2003, 42, Some(false), Some(70.0))]).unwrap();
        assert!(gap.extract_diffs(&g).is_empty());
    }

    #[test]
    fn rejects_duplicates_and_bad_scores() {
        assert!(Panel::new(vec![rec("a", 2001, 40, Some(true), None), rec("a", 2001, 40, Some(true), None)]).is_err());
        assert!(Panel::new(vec![rec("a", 2001, 40, Some(true), Some(101.0))]).is_err());
    }

    #[test]
    fn csv_with_derived_has() {
        let data = "person_id,year,age,income,housing_cost,mh\n\
                    a,2001,40,50000,20000,70\n\
                    a,2002,41,50000,10000,72\n\
                    b,2001,30,,5000,80\n";
        let th = Thresholds::read_csv("year,income_p40\n2001,52000\n2002,52000\n".as_bytes()).unwrap();
        let (p, report) = Panel::read_csv(data.as_bytes(), Some(&th)).unwrap();
        assert_eq!(report.records_read, 3);
        assert_eq!(report.excluded_missing_has, 1);
        assert_eq!(p.records()[0].has, Some(true));
        assert_eq!(p.records()[1].has, Some(false));
        assert!(Panel::read_csv(data.as_bytes(), None).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let p = Panel::new(vec![rec("a", 2001, 40, Some(true), Some(75.5)), rec("b", 2002, 33, Some(false), None)]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let (q, _) = Panel::read_csv(buf.as_slice(), None).unwrap();
        assert_eq!(p, q);
    }
}
