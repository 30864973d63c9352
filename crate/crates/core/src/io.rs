//! Result files: coefficient curves and baselines as CSV, fitted-model
//! summaries as TOML, and flat `key = value` run configurations.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BaselineFn, FittedModel};

/// One coefficient at one grid age.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub age: f64,
    pub coef: String,
    pub estimate: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub converged: bool,
}

/// Every coefficient on `grid`, varying ones from their local fits and
/// constant ones repeated. Grid ages whose local fit failed get NaN.
pub fn curve_rows(model: &FittedModel<f64>, grid: &[f64], z: f64) -> Vec<CurveRow> {
    let consts = model.coefficients();
    let mut out = Vec::with_capacity(grid.len() * model.names.len());
    for &age in grid {
        let (mut ci, mut vi) = (0, 0);
        for (name, &varying) in model.names.iter().zip(&model.varying) {
            let (estimate, stderr, converged) = if varying {
                vi += 1;
                let fit = model.curve.as_ref().and_then(|c| c.grid.iter().position(|&a| a == age).and_then(|i| c.fits[i].as_ref()));
                match fit {
                    Some(f) => (f.theta[vi - 1], f.stderr()[vi - 1], f.converged),
                    None => (f64::NAN, f64::NAN, false),
                }
            } else {
                ci += 1;
                let c = &consts[ci - 1];
                (c.estimate, c.se, model.constant.as_ref().is_some_and(|f| f.converged))
            };
            out.push(CurveRow { age, coef: name.clone(), estimate, stderr, ci_lo: estimate - z * stderr, ci_hi: estimate + z * stderr, converged });
        }
    }
    out
}

pub fn write_curves<W: Write>(rows: &[CurveRow], writer: W) -> Result<()> {
    write_rows(rows, writer)
}

pub fn read_curves<R: Read>(reader: R) -> Result<Vec<CurveRow>> {
    read_rows(reader)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub age: f64,
    pub jump: f64,
    /// `Λ̂0(age)` anchored at `τ_L`.
    pub cumulative: f64,
    /// `Λ̂0(age)` summed from age 0.
    pub cumulative_from_origin: f64,
}

pub fn baseline_rows(b: &BaselineFn<f64>) -> Vec<BaselineRow> {
    b.ages()
        .iter()
        .zip(b.jumps())
        .map(|(&age, &jump)| BaselineRow { age, jump, cumulative: b.value(age), cumulative_from_origin: b.value_from_origin(age) })
        .collect()
}

pub fn write_baseline<W: Write>(rows: &[BaselineRow], writer: W) -> Result<()> {
    write_rows(rows, writer)
}

pub fn read_baseline<R: Read>(reader: R) -> Result<Vec<BaselineRow>> {
    read_rows(reader)
}

fn write_rows<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = ::csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(reader: R) -> Result<Vec<T>> {
    let mut rdr = ::csv::ReaderBuilder::new().trim(::csv::Trim::All).from_reader(reader);
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Parse { row: i + 2, message: e.to_string() }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefSummary {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
    pub stderr_model: f64,
}

/// Summary of one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub model: String,
    pub target: String,
    pub subjects: usize,
    pub events: usize,
    pub bandwidth: f64,
    pub tau_left: f64,
    pub tau_right: f64,
    pub loglik: f64,
    pub nu: f64,
    pub aic: f64,
    pub converged: bool,
    pub backfit_cycles: usize,
    pub failed_grid_ages: usize,
    /// Average baseline slope over `[τ_L, τ_R]` per time unit.
    pub baseline_rate: f64,
    pub varying: Vec<String>,
    pub constant: Vec<CoefSummary>,
}

impl ResultsFile {
    pub fn from_model(model: &FittedModel<f64>, subjects: usize, events: usize, bandwidth: f64) -> Self {
        let (tau_left, tau_right) = model.baseline.tau();
        Self {
            model: model.spec.name(),
            target: model.spec.target.to_string(),
            subjects,
            events,
            bandwidth,
            tau_left,
            tau_right,
            loglik: model.loglik,
            nu: model.nu,
            aic: model.aic,
            converged: model.converged(),
            backfit_cycles: model.backfit.cycles,
            failed_grid_ages: model.curve.as_ref().map_or(0, |c| c.n_failed()),
            baseline_rate: model.baseline.rate_per_unit(),
            varying: model.varying_names(),
            constant: model
                .coefficients()
                .into_iter()
                .map(|c| CoefSummary { name: c.name, estimate: c.estimate, stderr: c.se, stderr_model: c.se_model })
                .collect(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise results: {e}")))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(format!("bad results file: {e}")))
    }
}

/// Parses `key = value` lines; `#` starts a comment. Later keys override
/// earlier ones.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values() {
        let m = parse_key_values("# run\nn = 10\nseed=7 # trailing\n\nn = 20\n").unwrap();
        assert_eq!(m["n"], "20");
        assert_eq!(m["seed"], "7");
        assert!(parse_key_values("oops").is_err());
        assert!(parse_key_values(" = 3").is_err());
    }

    #[test]
    fn curve_csv_round_trip() {
        let rows = vec![
            CurveRow { age: 1.0, coef: "x".into(), estimate: 0.25, stderr: 0.1, ci_lo: 0.054, ci_hi: 0.446, converged: true },
            CurveRow { age: 1.5, coef: "x".into(), estimate: f64::NAN, stderr: f64::NAN, ci_lo: f64::NAN, ci_hi: f64::NAN, converged: false },
        ];
        let mut buf = Vec::new();
        write_curves(&rows, &mut buf).unwrap();
        let back = read_curves(buf.as_slice()).unwrap();
        assert_eq!(back[0], rows[0]);
        assert!(back[1].estimate.is_nan() && !back[1].converged);
    }
}
