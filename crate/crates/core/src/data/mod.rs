//! Cohort data model: extraction windows, subject records, covariate
//! encoding and the age-scale observation window of each subject.
//!
//! Internal ages are real-valued years, `days / 365.25`. Integer ages
//! recorded at visits are completed calendar years.

mod csv;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Months, NaiveDate};

use crate::error::{Error, Result};

pub use self::csv::{export_csv, ingest_csv, read_cohort, write_cohort};

pub const DAYS_PER_YEAR: f64 = 365.25;
pub const DEFAULT_AGE_CAP: u32 = 18;
/// Two months, the time unit used when reporting rates.
pub const DEFAULT_TIME_UNIT_YEARS: f64 = 1.0 / 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Other,
    Edmonton,
    Calgary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Decade {
    Early,
    Late,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::Female, Sex::Male];
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Other, Region::Edmonton, Region::Calgary];
}

impl Decade {
    pub const ALL: [Decade; 2] = [Decade::Early, Decade::Late];
}

impl FromStr for Sex {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Sex::Female),
            "m" | "male" => Ok(Sex::Male),
            other => Err(format!("unknown sex `{other}`")),
        }
    }
}

impl FromStr for Region {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "other" => Ok(Region::Other),
            "edmonton" => Ok(Region::Edmonton),
            "calgary" => Ok(Region::Calgary),
            other => Err(format!("unknown region `{other}`")),
        }
    }
}

impl FromStr for Decade {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "early" => Ok(Decade::Early),
            "late" => Ok(Decade::Late),
            other => Err(format!("unknown decade `{other}`")),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Female => "F",
            Sex::Male => "M",
        })
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Other => "Other",
            Region::Edmonton => "Edmonton",
            Region::Calgary => "Calgary",
        })
    }
}

impl fmt::Display for Decade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decade::Early => "Early",
            Decade::Late => "Late",
        })
    }
}

/// Calendar window of one data extraction, both endpoints inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractionWindow {
    pub left: NaiveDate,
    pub right: NaiveDate,
    pub label: Decade,
}

impl ExtractionWindow {
    pub fn new(label: Decade, left: NaiveDate, right: NaiveDate) -> Result<Self> {
        if left >= right {
            return Err(Error::Config(format!("{label} window: left {left} is not before right {right}")));
        }
        Ok(Self { left, right, label })
    }

    /// Parses `YYYY-MM-DD:YYYY-MM-DD`.
    pub fn parse(label: Decade, s: &str) -> Result<Self> {
        let (l, r) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("window `{s}` is not LEFT:RIGHT")))?;
        Self::new(label, parse_date(l).map_err(Error::Config)?, parse_date(r).map_err(Error::Config)?)
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.left <= d && d <= self.right
    }
}

impl fmt::Display for ExtractionWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.left, self.right)
    }
}

/// The early and late extraction windows of a study.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Windows {
    map: BTreeMap<Decade, ExtractionWindow>,
}

impl Windows {
    pub fn new(windows: impl IntoIterator<Item = ExtractionWindow>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for w in windows {
            if map.insert(w.label, w).is_some() {
                return Err(Error::Config(format!("duplicate {} window", w.label)));
            }
        }
        if let (Some(e), Some(l)) = (map.get(&Decade::Early), map.get(&Decade::Late)) {
            if e.right > l.left {
                return Err(Error::Config(format!(
                    "early window ends {} after late window starts {}",
                    e.right, l.left
                )));
            }
        }
        Ok(Self { map })
    }

    pub fn get(&self, d: Decade) -> Option<&ExtractionWindow> {
        self.map.get(&d)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ExtractionWindow> {
        self.map.values()
    }
}

pub fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| format!("bad date `{}`: {e}", s.trim()))
}

/// Fractional years between two dates on the `days / 365.25` scale.
pub fn years_between(from: NaiveDate, to: NaiveDate) -> f64 {
    (to - from).num_days() as f64 / DAYS_PER_YEAR
}

/// Completed calendar years of age at `date` for someone born on `birth`.
pub fn completed_years(birth: NaiveDate, date: NaiveDate) -> i32 {
    let mut age = date.year() - birth.year();
    if (date.month(), date.day()) < (birth.month(), birth.day()) {
        age -= 1;
    }
    age
}

/// Shifts a date by whole calendar years; 29 February clamps to the 28th.
pub fn shift_years(date: NaiveDate, years: i32) -> NaiveDate {
    let months = Months::new(12 * years.unsigned_abs());
    let shifted = if years >= 0 { date.checked_add_months(months) } else { date.checked_sub_months(months) };
    shifted.expect("date within chrono range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Visit {
    pub date: NaiveDate,
    pub age_years: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectRecord {
    pub id: String,
    pub sex: Sex,
    pub region: Region,
    pub decade: Decade,
    pub birthdate: Option<NaiveDate>,
    pub events: Vec<Visit>,
}

/// Age-scale observation window `(left, right]`, in fractional years.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgeInterval {
    pub left: f64,
    pub right: f64,
}

impl AgeInterval {
    pub fn contains(&self, u: f64) -> bool {
        self.left < u && u <= self.right
    }

    pub fn length(&self) -> f64 {
        (self.right - self.left).max(0.0)
    }
}

/// Observation window on the age scale for someone born on `birth` and
/// captured by `window`: `(max(0, W_L − b), min(cap, W_R − b)]`.
///
/// The cap is the age at the `age_cap`-th birthday, so a subject born
/// exactly `age_cap` calendar years before `W_L` has an empty window.
pub fn censoring_interval(window: &ExtractionWindow, birth: NaiveDate, age_cap: u32) -> Result<AgeInterval> {
    let start = window.left.max(birth);
    let aged_out = shift_years(birth, age_cap as i32);
    let end = window.right.min(aged_out);
    let left = years_between(birth, start);
    let right = years_between(birth, end);
    if right <= left {
        return Err(Error::EmptyInterval(format!(
            "birthdate {birth} leaves no eligible age inside window {window}"
        )));
    }
    Ok(AgeInterval { left, right })
}

/// Risk indicator `I{c_left < u ≤ c_right}` for ages `0 < u < age_cap`.
pub fn at_risk(interval: &AgeInterval, u: f64, age_cap: u32) -> Result<bool> {
    if !(u > 0.0 && u < age_cap as f64) {
        return Err(Error::Precondition(format!("age {u} outside (0, {age_cap})")));
    }
    Ok(interval.contains(u))
}

/// Which dummy columns the covariate `Z` carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovariateScheme {
    /// male, Edmonton and Calgary indicators (references Female and Other).
    #[default]
    SexRegion,
    /// male indicator only.
    Sex,
}

impl CovariateScheme {
    pub fn z_names(&self) -> &'static [&'static str] {
        match self {
            CovariateScheme::SexRegion => &["male", "edmonton", "calgary"],
            CovariateScheme::Sex => &["male"],
        }
    }

    pub fn z_len(&self) -> usize {
        self.z_names().len()
    }

    pub fn encode_z(&self, sex: Sex, region: Region) -> Vec<f64> {
        let male = f64::from(u8::from(sex == Sex::Male));
        match self {
            CovariateScheme::SexRegion => vec![
                male,
                f64::from(u8::from(region == Region::Edmonton)),
                f64::from(u8::from(region == Region::Calgary)),
            ],
            CovariateScheme::Sex => vec![male],
        }
    }

    /// Stacked `(x, z, x·z)` for a cell.
    pub fn encode_cell(&self, decade: Decade, sex: Sex, region: Region) -> CovariateVector {
        CovariateVector::new(decade == Decade::Late, self.encode_z(sex, region))
    }

    /// Column names of the stacked vector.
    pub fn names(&self) -> Vec<String> {
        let z = self.z_names();
        std::iter::once("late".to_string())
            .chain(z.iter().map(|s| s.to_string()))
            .chain(z.iter().map(|s| format!("late:{s}")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateVector {
    pub x: f64,
    pub z: Vec<f64>,
    pub xz: Vec<f64>,
}

impl CovariateVector {
    pub fn new(late: bool, z: Vec<f64>) -> Self {
        let x = f64::from(u8::from(late));
        let xz = z.iter().map(|v| x * v).collect();
        Self { x, z, xz }
    }

    pub fn stacked(&self) -> Vec<f64> {
        std::iter::once(self.x).chain(self.z.iter().copied()).chain(self.xz.iter().copied()).collect()
    }
}

/// Dummy encoding of a subject with references Female, Other and Early.
pub fn encode(s: &SubjectRecord, scheme: CovariateScheme) -> CovariateVector {
    scheme.encode_cell(s.decade, s.sex, s.region)
}

/// A validated, immutable cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortDataset {
    subjects: Vec<SubjectRecord>,
    windows: Windows,
    age_cap: u32,
    time_unit_years: f64,
}

impl CohortDataset {
    pub fn new(subjects: Vec<SubjectRecord>, windows: Windows) -> Result<Self> {
        Self::with_age_cap(subjects, windows, DEFAULT_AGE_CAP)
    }

    pub fn with_age_cap(mut subjects: Vec<SubjectRecord>, windows: Windows, age_cap: u32) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &mut subjects {
            if !seen.insert(s.id.clone()) {
                return Err(invalid(s, "duplicate subject id"));
            }
            s.events.sort_by_key(|v| v.date);
            validate_subject(s, &windows, age_cap)?;
        }
        Ok(Self { subjects, windows, age_cap, time_unit_years: DEFAULT_TIME_UNIT_YEARS })
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn windows(&self) -> &Windows {
        &self.windows
    }

    pub fn age_cap(&self) -> u32 {
        self.age_cap
    }

    pub fn time_unit_years(&self) -> f64 {
        self.time_unit_years
    }

    pub fn window_of(&self, s: &SubjectRecord) -> &ExtractionWindow {
        self.windows.get(s.decade).expect("validated on construction")
    }

    pub fn n_events(&self) -> usize {
        self.subjects.iter().map(|s| s.events.len()).sum()
    }

    /// Subjects of one decade, as a dataset of its own.
    pub fn stratum(&self, decade: Decade) -> Result<Self> {
        let subjects: Vec<_> = self.subjects.iter().filter(|s| s.decade == decade).cloned().collect();
        if subjects.is_empty() {
            return Err(Error::EmptyStratum(format!("no {decade} subjects")));
        }
        Ok(Self { subjects, ..self.clone_meta() })
    }

    /// Same subjects with birthdates removed.
    pub fn without_birthdates(&self, decade: Option<Decade>) -> Self {
        let mut out = self.clone();
        for s in &mut out.subjects {
            if decade.is_none_or(|d| d == s.decade) {
                s.birthdate = None;
            }
        }
        out
    }

    fn clone_meta(&self) -> Self {
        Self {
            subjects: Vec::new(),
            windows: self.windows.clone(),
            age_cap: self.age_cap,
            time_unit_years: self.time_unit_years,
        }
    }
}

fn invalid(s: &SubjectRecord, message: impl Into<String>) -> Error {
    Error::Validation { subject: s.id.clone(), message: message.into() }
}

fn validate_subject(s: &SubjectRecord, windows: &Windows, age_cap: u32) -> Result<()> {
    let w = windows
        .get(s.decade)
        .ok_or_else(|| invalid(s, format!("no extraction window for decade {}", s.decade)))?;
    if s.events.is_empty() {
        return Err(invalid(s, "no recorded visits"));
    }
    for v in &s.events {
        if v.age_years >= age_cap {
            return Err(invalid(s, format!("visit age {} outside 0..{}", v.age_years, age_cap - 1)));
        }
        if !w.contains(v.date) {
            return Err(invalid(s, format!("visit {} outside window {w}", v.date)));
        }
        if let Some(b) = s.birthdate {
            let age = completed_years(b, v.date);
            if age != v.age_years as i32 {
                return Err(invalid(
                    s,
                    format!("visit {} recorded at age {} but birthdate {b} gives {age}", v.date, v.age_years),
                ));
            }
        }
    }
    Ok(())
}
