use std::fmt;
use std::str::FromStr;

use crate::census::CensusTable;
use crate::data::{CovariateScheme, Decade};
use crate::design::{Design, Unit};
use crate::error::{Error, Result};
use crate::model::{cohort_design, fit_design, FittedModel, ModelSpec, Shape, Target};

use super::{augment_config, census_from_population, CensusMode, Cohorts, Population, Setting, SimConfig};

/// Analysis label `A.s.k` (cohort of visitors) or `B.s.k` (whole population).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnalysisId {
    pub population: bool,
    pub setting: u8,
    pub k: u8,
}

/// What an analysis fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Separate decade strata, `β_E`, `β_L`.
    Stratified,
    /// Both strata with the membership indicator, `α`, `β`, `γ`.
    Combined,
    /// The generating model.
    Truth,
}

impl AnalysisId {
    pub fn new(population: bool, setting: u8, k: u8) -> Result<Self> {
        let max = if population { 6 } else { 3 };
        if !(1..=2).contains(&setting) || !(1..=max).contains(&k) {
            let p = if population { 'B' } else { 'A' };
            return Err(Error::UnknownAnalysis(format!("{p}.{setting}.{k}")));
        }
        Ok(Self { population, setting, k })
    }

    pub fn family(self) -> Family {
        match (self.population, self.k) {
            (false, 1) | (true, 1) | (true, 2) => Family::Stratified,
            (false, 2) | (true, 3) | (true, 4) => Family::Combined,
            _ => Family::Truth,
        }
    }

    /// Uses census counts for the risk-set moments.
    pub fn uses_census(self) -> bool {
        self.population && matches!(self.k, 2 | 4 | 6)
    }

    pub fn parameter_names(self, setting: Setting) -> Vec<&'static str> {
        match self.family() {
            Family::Stratified => vec!["beta_E", "beta_L", "lambda0_E", "lambda0_L"],
            Family::Truth if !self.population && setting == Setting::S1Case1 => vec!["beta", "lambda0"],
            _ => vec!["alpha", "beta", "gamma", "lambda0"],
        }
    }
}

impl fmt::Display for AnalysisId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", if self.population { 'B' } else { 'A' }, self.setting, self.k)
    }
}

impl FromStr for AnalysisId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = || Error::UnknownAnalysis(t.to_string());
        let mut parts = t.split('.');
        let population = match parts.next().map(str::to_ascii_uppercase).as_deref() {
            Some("A") => false,
            Some("B") => true,
            _ => return Err(bad()),
        };
        let setting: u8 = parts.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
        let k: u8 = parts.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        Self::new(population, setting, k).map_err(|_| bad())
    }
}

/// Parses `B.1.5,B.1.6` and ranges such as `B.2.1..B.2.6`.
pub fn parse_analyses(list: &str) -> Result<Vec<AnalysisId>> {
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item.split_once("..") {
            Some((a, b)) => {
                let (a, b): (AnalysisId, AnalysisId) = (a.parse()?, b.parse()?);
                if a.population != b.population || a.setting != b.setting || a.k > b.k {
                    return Err(Error::UnknownAnalysis(item.to_string()));
                }
                for k in a.k..=b.k {
                    out.push(AnalysisId::new(a.population, a.setting, k)?);
                }
            }
            None => out.push(item.parse()?),
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no analyses requested".into()));
    }
    let mut seen = std::collections::HashSet::new();
    out.retain(|id| seen.insert(*id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    /// Model-based standard error; NaN where none is reported.
    pub se_model: f64,
    /// Sandwich standard error; NaN where none is reported.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisResult {
    pub id: AnalysisId,
    pub estimates: Vec<Estimate>,
    pub converged: bool,
}

fn ccc() -> ModelSpec {
    ModelSpec::new(Shape::Constant, Shape::Constant, Shape::Constant, Target::Cohort)
}

fn fit(design: &Design<f64>, names: &[&str], cfg: &SimConfig) -> Result<FittedModel<f64>> {
    let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let varying = vec![false; names.len()];
    fit_design(design, names, &varying, ccc(), &cfg.fit)
}

fn coefficient_estimates(m: &FittedModel<f64>, rename: &[&str]) -> Vec<Estimate> {
    m.coefficients()
        .into_iter()
        .zip(rename)
        .map(|(c, n)| Estimate { name: n.to_string(), value: c.estimate, se_model: c.se_model, se: c.se })
        .collect()
}

fn rate(name: &str, m: &FittedModel<f64>) -> Estimate {
    Estimate { name: name.into(), value: m.baseline.rate_per_unit(), se_model: f64::NAN, se: f64::NAN }
}

const SCHEME: CovariateScheme = CovariateScheme::Sex;

/// Runs one analysis on one population. `census` is built on demand when
/// not supplied.
pub fn run_analysis(id: AnalysisId, pop: &Population, cohorts: &Cohorts, cfg: &SimConfig, census: Option<&CensusTable>) -> Result<AnalysisResult> {
    if id.setting != pop.setting.number() {
        return Err(Error::Precondition(format!("analysis {id} needs setting {} data, got {}", id.setting, pop.setting)));
    }
    let aug = augment_config(cfg, pop.seed);
    let mode = if id.family() == Family::Truth && pop.setting == Setting::S2 { CensusMode::Generation } else { CensusMode::Calendar };
    let owned;
    let census = match (id.uses_census(), census) {
        (false, _) => None,
        (true, Some(c)) => Some(c),
        (true, None) => {
            owned = census_from_population(pop, cfg, mode)?;
            Some(&owned)
        }
    };
    let target = if census.is_some() { Target::GeneralPopulation } else { Target::Cohort };
    let build = |units: &[Unit<f64>]| -> Result<Design<f64>> {
        let d = Design::build(units)?;
        match census {
            Some(c) => c.population_design(&d, SCHEME, None),
            None => Ok(d),
        }
    };
    let (estimates, converged) = match id.family() {
        Family::Stratified => {
            let design = |d: Decade| -> Result<Design<f64>> {
                let full = if id.population && census.is_none() {
                    Design::build(if d == Decade::Early { &cohorts.o_e } else { &cohorts.o_l })?
                } else {
                    cohort_design(&cohorts.pulled.stratum(d)?, census, target, SCHEME, &aug, Some(d))?
                };
                Ok(full.restricted(&[1], |_, _| 0.0))
            };
            let e = fit(&design(Decade::Early)?, &["beta"], cfg)?;
            let l = fit(&design(Decade::Late)?, &["beta"], cfg)?;
            let mut est = coefficient_estimates(&e, &["beta_E"]);
            est.extend(coefficient_estimates(&l, &["beta_L"]));
            est.push(rate("lambda0_E", &e));
            est.push(rate("lambda0_L", &l));
            (est, e.converged() && l.converged())
        }
        Family::Combined => {
            let design = if id.population && census.is_none() {
                let mut units = cohorts.o_e.clone();
                units.extend(cohorts.o_l.iter().cloned());
                Design::build(&units)?
            } else {
                cohort_design(&cohorts.pulled, census, target, SCHEME, &aug, None)?
            };
            let m = fit(&design, &["alpha", "beta", "gamma"], cfg)?;
            let mut est = coefficient_estimates(&m, &["alpha", "beta", "gamma"]);
            est.push(rate("lambda0", &m));
            (est, m.converged())
        }
        Family::Truth => {
            let units = if id.population && census.is_none() { &cohorts.o } else { &cohorts.o_1 };
            let design = build(units)?;
            if !id.population && pop.setting == Setting::S1Case1 {
                let m = fit(&design.restricted(&[1], |_, _| 0.0), &["beta"], cfg)?;
                let mut est = coefficient_estimates(&m, &["beta"]);
                est.push(rate("lambda0", &m));
                (est, m.converged())
            } else {
                let m = fit(&design, &["alpha", "beta", "gamma"], cfg)?;
                let mut est = coefficient_estimates(&m, &["alpha", "beta", "gamma"]);
                est.push(rate("lambda0", &m));
                (est, m.converged())
            }
        }
    };
    Ok(AnalysisResult { id, estimates, converged })
}
