use std::fmt::{self, Write as _};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::census::CensusTable;
use crate::error::{Error, Result};

use super::analysis::{run_analysis, AnalysisId, AnalysisResult, Family};
use super::{census_from_population, extract_cohorts, generate_population, CensusMode, Setting, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub setting: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub analysis: String,
    pub parameter: String,
    pub smean: f64,
    pub sse: f64,
    pub ese_a: f64,
    pub ese_b: f64,
    /// Replicates that produced a converged fit.
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateTable {
    pub setting: Setting,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub rows: Vec<ReplicateRow>,
    /// `(replicate, analysis, message)` for every failed fit.
    pub failures: Vec<(usize, String, String)>,
}

impl ReplicateTable {
    pub fn row(&self, analysis: &str, parameter: &str) -> Option<&ReplicateRow> {
        self.rows.iter().find(|r| r.analysis == analysis && r.parameter == parameter)
    }

    pub fn n_failed(&self) -> usize {
        self.failures.len()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = ::csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = ::csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<ReplicateRow>().enumerate() {
            rows.push(rec.map_err(|e| Error::Parse { row: i + 2, message: e.to_string() })?);
        }
        let first = rows.first().ok_or_else(|| Error::Parse { row: 1, message: "empty replicate table".into() })?;
        let (setting, n, reps, seed) = (first.setting.parse()?, first.n, first.reps, first.seed);
        if rows.iter().any(|r| r.setting != first.setting || r.n != n || r.reps != reps || r.seed != seed) {
            return Err(Error::Config("replicate table mixes runs".into()));
        }
        Ok(Self { setting, n, reps, seed, rows, failures: vec![] })
    }

    /// Aligned text, one block per analysis with SMean, SSE, ESE(a) and
    /// ESE(b) rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "setting {}  n {}  reps {}  seed {}", self.setting, self.n, self.reps, self.seed);
        let mut start = 0;
        while start < self.rows.len() {
            let id = &self.rows[start].analysis;
            let end = start + self.rows[start..].iter().take_while(|r| &r.analysis == id).count();
            let block = &self.rows[start..end];
            let _ = writeln!(s);
            let _ = write!(s, "{:<8}", id);
            for r in block {
                let _ = write!(s, "{:>12}", r.parameter);
            }
            let _ = writeln!(s);
            let lines: [Column; 4] =
                [("SMean", |r| r.smean), ("SSE", |r| r.sse), ("ESE(a)", |r| r.ese_a), ("ESE(b)", |r| r.ese_b)];
            for (label, get) in lines {
                let _ = write!(s, "{:<8}", label);
                for r in block {
                    let v = get(r);
                    if v.is_nan() {
                        let _ = write!(s, "{:>12}", "-");
                    } else {
                        let _ = write!(s, "{:>12.4}", v);
                    }
                }
                let _ = writeln!(s);
            }
            let _ = writeln!(s, "{:<8}{} ok, {} failed", "", block[0].n_ok, block[0].n_failed);
            start = end;
        }
        s
    }
}

impl fmt::Display for ReplicateTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Row label and the field it shows.
type Column = (&'static str, fn(&ReplicateRow) -> f64);

type Replicate = Vec<std::result::Result<AnalysisResult, String>>;

fn one_replicate(cfg: &SimConfig, ids: &[AnalysisId], seed: u64) -> Replicate {
    let run = || -> Result<Replicate> {
        let pop = generate_population(cfg, seed)?;
        let cohorts = extract_cohorts(&pop, cfg)?;
        let needs = |mode: CensusMode| {
            ids.iter().any(|id| {
                id.uses_census() && (mode == CensusMode::Generation) == (id.family() == Family::Truth && cfg.setting == Setting::S2)
            })
        };
        let calendar: Option<CensusTable> = if needs(CensusMode::Calendar) { Some(census_from_population(&pop, cfg, CensusMode::Calendar)?) } else { None };
        let generation: Option<CensusTable> = if needs(CensusMode::Generation) { Some(census_from_population(&pop, cfg, CensusMode::Generation)?) } else { None };
        Ok(ids
            .iter()
            .map(|&id| {
                let census = if id.family() == Family::Truth && cfg.setting == Setting::S2 { generation.as_ref() } else { calendar.as_ref() };
                match run_analysis(id, &pop, &cohorts, cfg, census) {
                    Ok(r) if r.converged => Ok(r),
                    Ok(_) => Err("did not converge".to_string()),
                    Err(e) => Err(e.to_string()),
                }
            })
            .collect())
    };
    run().unwrap_or_else(|e| vec![Err(e.to_string()); ids.len()])
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Runs `cfg.reps` replicates with seeds derived from `cfg.seed`.
pub fn replicate_study(cfg: &SimConfig, ids: &[AnalysisId]) -> Result<ReplicateTable> {
    let seeds: Vec<u64> = (0..cfg.reps).map(|r| cfg.replicate_seed(r)).collect();
    replicate_study_with_seeds(cfg, ids, &seeds)
}

/// Replicates with explicit generator seeds, one per replicate.
pub fn replicate_study_with_seeds(cfg: &SimConfig, ids: &[AnalysisId], seeds: &[u64]) -> Result<ReplicateTable> {
    cfg.validate()?;
    if seeds.len() < 2 {
        return Err(Error::Precondition("a replicate study needs at least 2 replicates".into()));
    }
    if ids.is_empty() {
        return Err(Error::Config("no analyses requested".into()));
    }
    if let Some(id) = ids.iter().find(|id| id.setting != cfg.setting.number()) {
        return Err(Error::Precondition(format!("analysis {id} does not belong to setting {}", cfg.setting)));
    }
    let reps: Vec<Replicate> = seeds.par_iter().map(|&s| one_replicate(cfg, ids, s)).collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (j, &id) in ids.iter().enumerate() {
        let label = id.to_string();
        let ok: Vec<&AnalysisResult> = reps.iter().filter_map(|r| r[j].as_ref().ok()).collect();
        for (r, rep) in reps.iter().enumerate() {
            if let Err(e) = &rep[j] {
                failures.push((r, label.clone(), e.clone()));
            }
        }
        let n_failed = reps.len() - ok.len();
        for (k, name) in id.parameter_names(cfg.setting).into_iter().enumerate() {
            let pick = |f: fn(&super::Estimate) -> f64| -> Vec<f64> { ok.iter().map(|r| f(&r.estimates[k])).collect() };
            let values = pick(|e| e.value);
            rows.push(ReplicateRow {
                setting: cfg.setting.to_string(),
                n: cfg.n,
                reps: seeds.len(),
                seed: cfg.seed,
                analysis: label.clone(),
                parameter: name.to_string(),
                smean: mean(&values),
                sse: sd(&values),
                ese_a: mean(&pick(|e| e.se_model)),
                ese_b: mean(&pick(|e| e.se)),
                n_ok: ok.len(),
                n_failed,
            });
        }
    }
    Ok(ReplicateTable { setting: cfg.setting, n: cfg.n, reps: seeds.len(), seed: cfg.seed, rows, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SimConfig {
        SimConfig { n: 1_500, reps: 2, ..SimConfig::new(Setting::S1Case2) }
    }

    #[test]
    fn identical_seeds_give_zero_sse() {
        let cfg = tiny();
        let ids = super::super::parse_analyses("B.1.5").unwrap();
        let t = replicate_study_with_seeds(&cfg, &ids, &[9, 9]).unwrap();
        assert_eq!(t.rows.len(), 4);
        for r in &t.rows {
            assert_eq!(r.n_ok, 2, "{:?}", t.failures);
            assert_eq!(r.sse, 0.0);
        }
        assert!(t.row("B.1.5", "lambda0").unwrap().ese_b.is_nan());
    }

    #[test]
    fn csv_round_trip_and_text() {
        let cfg = tiny();
        let ids = super::super::parse_analyses("B.1.3,B.1.5").unwrap();
        let t = replicate_study(&cfg, &ids).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = ReplicateTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows.len(), t.rows.len());
        for (a, b) in back.rows.iter().zip(&t.rows) {
            assert_eq!(a.smean.to_bits(), b.smean.to_bits());
            assert_eq!(a.parameter, b.parameter);
        }
        let text = t.to_text();
        assert!(text.contains("B.1.3") && text.contains("ESE(b)"));
    }

    #[test]
    fn too_few_replicates() {
        let cfg = tiny();
        let ids = super::super::parse_analyses("B.1.5").unwrap();
        assert!(replicate_study_with_seeds(&cfg, &ids, &[1]).is_err());
        let wrong = super::super::parse_analyses("B.2.5").unwrap();
        assert!(replicate_study(&cfg, &wrong).is_err());
    }
}
