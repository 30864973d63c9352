use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use super::{parse_date, CohortDataset, SubjectRecord, Visit, Windows};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct Row {
    id: String,
    sex: String,
    region: String,
    decade: String,
    #[serde(default)]
    birthdate: Option<String>,
    visit_date: String,
    age_years: String,
}

/// Reads a visit-per-row cohort file and groups rows by subject id.
pub fn ingest_csv(path: impl AsRef<Path>, windows: Windows) -> Result<CohortDataset> {
    let file = std::fs::File::open(path)?;
    read_cohort(file, windows)
}

pub fn read_cohort<R: Read>(reader: R, windows: Windows) -> Result<CohortDataset> {
    let mut rdr = ::csv::ReaderBuilder::new().trim(::csv::Trim::All).from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, SubjectRecord> = HashMap::new();
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        // header is line 1
        let row_no = i + 2;
        let row = rec.map_err(|e| Error::Parse { row: row_no, message: e.to_string() })?;
        let bad = |message: String| Error::Parse { row: row_no, message };
        let sex = row.sex.parse().map_err(bad)?;
        let region = row.region.parse().map_err(bad)?;
        let decade = row.decade.parse().map_err(bad)?;
        let birthdate = match row.birthdate.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(parse_date(s).map_err(bad)?),
        };
        let date = parse_date(&row.visit_date).map_err(bad)?;
        let age_years: u32 = row
            .age_years
            .trim()
            .parse()
            .map_err(|e| bad(format!("bad age `{}`: {e}", row.age_years)))?;
        let visit = Visit { date, age_years };
        match by_id.get_mut(&row.id) {
            Some(s) => {
                if (s.sex, s.region, s.decade, s.birthdate) != (sex, region, decade, birthdate) {
                    return Err(Error::Validation {
                        subject: row.id,
                        message: format!("row {row_no} disagrees with earlier rows on subject attributes"),
                    });
                }
                s.events.push(visit);
            }
            None => {
                order.push(row.id.clone());
                by_id.insert(
                    row.id.clone(),
                    SubjectRecord { id: row.id, sex, region, decade, birthdate, events: vec![visit] },
                );
            }
        }
    }
    let subjects = order.into_iter().map(|id| by_id.remove(&id).expect("grouped")).collect();
    CohortDataset::new(subjects, windows)
}

pub fn export_csv(data: &CohortDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_cohort(data, file)
}

pub fn write_cohort<W: Write>(data: &CohortDataset, writer: W) -> Result<()> {
    let mut w = ::csv::Writer::from_writer(writer);
    w.write_record(["id", "sex", "region", "decade", "birthdate", "visit_date", "age_years"])?;
    for s in data.subjects() {
        let birth = s.birthdate.map(|b| b.to_string()).unwrap_or_default();
        for v in &s.events {
            w.write_record([
                s.id.as_str(),
                &s.sex.to_string(),
                &s.region.to_string(),
                &s.decade.to_string(),
                &birth,
                &v.date.to_string(),
                &v.age_years.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
