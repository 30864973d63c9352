//! Population counts per covariate cell and integer age, used in place of
//! the unobservable risk-set moments of a zero-truncated cohort.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::data::{CovariateScheme, Decade, Region, Sex, DEFAULT_AGE_CAP};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::local::{s_moments, solve_local, Degree, Equation, KernelSpec, LocalFit, Moments, SolverConfig, Weighting};
use crate::Scalar;

pub type CellKey = (Decade, Sex, Region, u32);

/// Complete `decade × sex × region × age` table of nonnegative counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CensusTable {
    counts: BTreeMap<CellKey, f64>,
    age_cap: u32,
}

fn all_keys(age_cap: u32) -> impl Iterator<Item = CellKey> {
    Decade::ALL.into_iter().flat_map(move |d| {
        Sex::ALL
            .into_iter()
            .flat_map(move |g| Region::ALL.into_iter().flat_map(move |r| (0..age_cap).map(move |a| (d, g, r, a))))
    })
}

fn key_label((d, g, r, a): CellKey) -> String {
    format!("{d}/{g}/{r}/{a}")
}

impl CensusTable {
    pub fn new(counts: BTreeMap<CellKey, f64>) -> Result<Self> {
        Self::with_age_cap(counts, DEFAULT_AGE_CAP)
    }

    pub fn with_age_cap(counts: BTreeMap<CellKey, f64>, age_cap: u32) -> Result<Self> {
        if let Some((k, v)) = counts.iter().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Census(format!("cell {} has invalid count {v}", key_label(*k))));
        }
        if let Some(k) = counts.keys().find(|k| k.3 >= age_cap) {
            return Err(Error::Census(format!("cell {} is beyond age {}", key_label(*k), age_cap - 1)));
        }
        let missing: Vec<String> = all_keys(age_cap).filter(|k| !counts.contains_key(k)).map(key_label).collect();
        if !missing.is_empty() {
            let shown = missing.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
            let more = if missing.len() > 10 { format!(" and {} more", missing.len() - 10) } else { String::new() };
            return Err(Error::Census(format!("{} missing cells: {shown}{more}", missing.len())));
        }
        Ok(Self { counts, age_cap })
    }

    pub fn from_fn(age_cap: u32, f: impl Fn(CellKey) -> f64) -> Result<Self> {
        Self::with_age_cap(all_keys(age_cap).map(|k| (k, f(k))).collect(), age_cap)
    }

    pub fn get(&self, key: CellKey) -> f64 {
        self.counts.get(&key).copied().unwrap_or(0.0)
    }

    pub fn age_cap(&self) -> u32 {
        self.age_cap
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellKey, f64)> + '_ {
        self.counts.iter().map(|(k, v)| (*k, *v))
    }

    /// Every count multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::with_age_cap(self.counts.iter().map(|(k, v)| (*k, v * c)).collect(), self.age_cap)
    }

    /// Covariate cells under `scheme` with their counts per integer age,
    /// optionally limited to one decade. Cells the scheme cannot tell apart
    /// are pooled.
    pub fn cells<T: Scalar>(&self, scheme: CovariateScheme, decade: Option<Decade>) -> Vec<(Vec<T>, Vec<T>)> {
        let mut pooled: BTreeMap<Vec<u64>, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for (&(d, g, r, a), &m) in &self.counts {
            if decade.is_some_and(|x| x != d) {
                continue;
            }
            let v = scheme.encode_cell(d, g, r).stacked();
            let key = v.iter().map(|x| x.to_bits()).collect();
            let slot = pooled.entry(key).or_insert_with(|| (v, vec![0.0; self.age_cap as usize]));
            slot.1[a as usize] += m;
        }
        pooled
            .into_values()
            .map(|(v, c)| (v.into_iter().map(T::of).collect(), c.into_iter().map(T::of).collect()))
            .collect()
    }

    /// Replaces the risk rows of a cohort design by these counts.
    pub fn population_design<T: Scalar>(&self, design: &Design<T>, scheme: CovariateScheme, decade: Option<Decade>) -> Result<Design<T>> {
        design.with_population_rows(&self.cells(scheme, decade))
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    decade: String,
    sex: String,
    region: String,
    age: String,
    count: String,
}

pub fn ingest_census_csv(path: impl AsRef<Path>) -> Result<CensusTable> {
    read_census(std::fs::File::open(path)?)
}

pub fn read_census<R: Read>(reader: R) -> Result<CensusTable> {
    let mut rdr = ::csv::ReaderBuilder::new().trim(::csv::Trim::All).from_reader(reader);
    let mut counts = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        let row_no = i + 2;
        let row = rec.map_err(|e| Error::Parse { row: row_no, message: e.to_string() })?;
        let bad = |message: String| Error::Parse { row: row_no, message };
        let d: Decade = row.decade.parse().map_err(bad)?;
        let g: Sex = row.sex.parse().map_err(bad)?;
        let r: Region = row.region.parse().map_err(bad)?;
        let a: u32 = row.age.parse().map_err(|e| bad(format!("bad age `{}`: {e}", row.age)))?;
        let m: f64 = row.count.parse().map_err(|e| bad(format!("bad count `{}`: {e}", row.count)))?;
        if m < 0.0 {
            return Err(Error::Census(format!("row {row_no}: negative count {m}")));
        }
        if counts.insert((d, g, r, a), m).is_some() {
            return Err(Error::Census(format!("row {row_no}: duplicate cell {}", key_label((d, g, r, a)))));
        }
    }
    CensusTable::new(counts)
}

pub fn write_census<W: Write>(table: &CensusTable, writer: W) -> Result<()> {
    let mut w = ::csv::Writer::from_writer(writer);
    w.write_record(["decade", "sex", "region", "age", "count"])?;
    for ((d, g, r, a), m) in table.iter() {
        w.write_record([
            d.to_string().to_lowercase(),
            g.to_string(),
            r.to_string().to_lowercase(),
            a.to_string(),
            m.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_census_csv(table: &CensusTable, path: impl AsRef<Path>) -> Result<()> {
    write_census(table, std::fs::File::create(path)?)
}

/// `S̃^(q)` at age `u`: census counts at `⌊u⌋` times the cell moments.
pub fn s_moments_census<T: Scalar>(
    phi: &[T],
    u: T,
    a: T,
    degree: Degree,
    census: &CensusTable,
    scheme: CovariateScheme,
) -> Result<Moments<T>> {
    if !(u > T::zero()) || !(u < T::of(census.age_cap() as f64)) {
        return Err(Error::Precondition(format!("age {u} outside (0, {})", census.age_cap())));
    }
    let k = u.floor().to_usize().unwrap_or(0);
    let cells = census.cells::<T>(scheme, None);
    let risk = cells.iter().filter(|(_, c)| c[k] > T::zero()).map(|(v, c)| (v.as_slice(), c[k]));
    s_moments(phi, u, a, degree, risk).map_err(|e| match e {
        Error::EmptyRiskSet { age } => Error::EmptyPopulation { age },
        e => e,
    })
}

/// `Ũ(φ; a)`: cohort event terms centred by census moments.
pub fn estimating_function_population<T: Scalar>(
    phi: &[T],
    a: T,
    cohort: &Design<T>,
    census: &CensusTable,
    scheme: CovariateScheme,
    kernel: &KernelSpec<T>,
    degree: Degree,
) -> Result<Vec<T>> {
    let pop = census.population_design(cohort, scheme, None)?;
    Equation::new(&pop, Weighting::Local { a, kernel: *kernel, degree }).score(phi)
}

/// Local fit at `a` with census centring and the corresponding sandwich.
pub fn solve_local_population<T: Scalar>(
    a: T,
    cohort: &Design<T>,
    census: &CensusTable,
    scheme: CovariateScheme,
    kernel: &KernelSpec<T>,
    degree: Degree,
    cfg: &SolverConfig<T>,
) -> Result<LocalFit<T>> {
    let pop = census.population_design(cohort, scheme, None)?;
    solve_local(a, &pop, kernel, degree, cfg, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcViolation {
    pub cell: String,
    pub age: u32,
    pub census: f64,
    pub cohort_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcVariation {
    pub cell: String,
    pub age: u32,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcReport {
    /// Cells where the census count is below the cohort at-risk count.
    pub violations: Vec<AcViolation>,
    /// Cells where the cohort at-risk count varies within the age-year by
    /// more than `threshold` of its maximum.
    pub variation: Vec<AcVariation>,
    pub threshold: f64,
    pub cells_checked: usize,
}

impl AcReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.variation.is_empty()
    }
}

impl std::fmt::Display for AcReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "checked {} cell-ages: {} count violations, {} variation flags (threshold {})",
            self.cells_checked,
            self.violations.len(),
            self.variation.len(),
            self.threshold
        )?;
        for v in &self.violations {
            writeln!(f, "  violation {} age {}: census {} < cohort {}", v.cell, v.age, v.census, v.cohort_max)?;
        }
        for v in &self.variation {
            writeln!(f, "  variation {} age {}: cohort at risk ranges {}..{}", v.cell, v.age, v.min, v.max)?;
        }
        Ok(())
    }
}

/// Checks census counts against the at-risk counts of a cohort design
/// whose covariates are the stacked `(x, z, xz)` of `scheme`.
pub fn validate_ac<T: Scalar>(census: &CensusTable, cohort: &Design<T>, scheme: CovariateScheme, threshold: f64) -> AcReport {
    let cap = census.age_cap() as usize;
    let cells = census.cells::<f64>(scheme, None);
    let names: BTreeMap<Vec<u64>, String> = all_keys(1)
        .map(|(d, g, r, _)| {
            let v = scheme.encode_cell(d, g, r).stacked();
            let label = match scheme {
                CovariateScheme::SexRegion => format!("{d}/{g}/{r}"),
                CovariateScheme::Sex => format!("{d}/{g}"),
            };
            (v.iter().map(|x| x.to_bits()).collect(), label)
        })
        .collect();
    let key = |v: &[f64]| -> Vec<u64> { v.iter().map(|x| x.to_bits()).collect() };

    // breakpoints of the piecewise-constant at-risk count per cell
    let mut steps: BTreeMap<Vec<u64>, Vec<(f64, f64)>> = BTreeMap::new();
    let profiles: Vec<Vec<f64>> = cohort.profiles().iter().map(|v| v.iter().map(|x| x.as_f64()).collect()).collect();
    for (_, lo, hi, prof, w) in cohort.segments() {
        let e = steps.entry(key(&profiles[prof])).or_default();
        e.push((lo.as_f64(), w.as_f64()));
        e.push((hi.as_f64(), -w.as_f64()));
    }

    let mut violations = Vec::new();
    let mut variation = Vec::new();
    let mut checked = 0;
    let mut seen = BTreeSet::new();
    for (v, counts) in &cells {
        let k = key(v);
        seen.insert(k.clone());
        let label = names.get(&k).cloned().unwrap_or_else(|| format!("{v:?}"));
        let (lo, hi) = range_per_age(steps.get(&k).map(Vec::as_slice).unwrap_or(&[]), cap);
        for age in 0..cap {
            checked += 1;
            if hi[age] > counts[age] * (1.0 + 1e-9) + 1e-9 {
                violations.push(AcViolation { cell: label.clone(), age: age as u32, census: counts[age], cohort_max: hi[age] });
            }
            if hi[age] > 0.0 && (hi[age] - lo[age]) / hi[age] > threshold {
                variation.push(AcVariation { cell: label.clone(), age: age as u32, min: lo[age], max: hi[age] });
            }
        }
    }
    for (k, s) in &steps {
        if !seen.contains(k) {
            let (_, hi) = range_per_age(s, cap);
            for (age, &h) in hi.iter().enumerate() {
                if h > 0.0 {
                    let label = names.get(k).cloned().unwrap_or_else(|| "unknown cell".into());
                    violations.push(AcViolation { cell: label, age: age as u32, census: 0.0, cohort_max: h });
                }
            }
        }
    }
    AcReport { violations, variation, threshold, cells_checked: checked }
}

/// Minimum and maximum of a step function within each age-year `[k, k+1)`.
fn range_per_age(steps: &[(f64, f64)], cap: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pts: Vec<(f64, f64)> = steps.to_vec();
    pts.extend((0..=cap).map(|k| (k as f64, 0.0)));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut lo = vec![f64::INFINITY; cap];
    let mut hi = vec![0.0f64; cap];
    let mut level = 0.0;
    let scale = steps.iter().map(|s| s.1.abs()).fold(0.0, f64::max);
    for j in 0..pts.len() {
        level += pts[j].1;
        if level.abs() <= 1e-12 * scale {
            level = 0.0;
        }
        let (x0, x1) = (pts[j].0, pts.get(j + 1).map_or(f64::INFINITY, |p| p.0));
        if x1 <= x0 {
            continue;
        }
        let k = x0.floor();
        if k < 0.0 || k >= cap as f64 {
            continue;
        }
        let k = k as usize;
        lo[k] = lo[k].min(level);
        hi[k] = hi[k].max(level);
    }
    for v in &mut lo {
        if !v.is_finite() {
            *v = 0.0;
        }
    }
    (lo, hi)
}
