//! Synthetic populations with known truth, the two data pulls, census
//! tables built from the population, the analysis suite and replicate
//! aggregation.

mod analysis;
mod table;

use std::fmt;
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::augment::AugmentConfig;
use crate::census::CensusTable;
use crate::data::{completed_years, parse_date, years_between, CohortDataset, Decade, ExtractionWindow, Region, Sex, SubjectRecord, Visit, Windows, DAYS_PER_YEAR, DEFAULT_AGE_CAP, DEFAULT_TIME_UNIT_YEARS};
use crate::design::{Mark, Segment, Unit};
use crate::error::{Error, Result};
use crate::model::FitConfig;
use crate::seeds::{derive_seed, stream_rng};

pub use analysis::{parse_analyses, run_analysis, AnalysisId, AnalysisResult, Estimate, Family};
pub use table::{replicate_study, replicate_study_with_seeds, ReplicateRow, ReplicateTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    /// Decade effect switches on with calendar time; no decade effects.
    S1Case1,
    /// As `S1Case1` with `α = .3`, `γ = .15`.
    S1Case2,
    /// Fixed birth-cohort indicator, misaligned with the data pulls.
    S2,
}

impl Setting {
    pub fn number(self) -> u8 {
        match self {
            Setting::S1Case1 | Setting::S1Case2 => 1,
            Setting::S2 => 2,
        }
    }

    pub fn default_truth(self) -> Truth {
        match self {
            Setting::S1Case1 => Truth { lambda0: 0.002, alpha: 0.0, beta: 0.7, gamma: 0.0 },
            Setting::S1Case2 => Truth { lambda0: 0.002, alpha: 0.3, beta: 0.7, gamma: 0.15 },
            Setting::S2 => Truth { lambda0: 0.002, alpha: 0.6, beta: 0.7, gamma: 0.35 },
        }
    }
}

impl FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "s1case1" => Ok(Setting::S1Case1),
            "s1case2" => Ok(Setting::S1Case2),
            "s2" => Ok(Setting::S2),
            other => Err(Error::Config(format!("unknown setting `{other}` (s1case1, s1case2, s2)"))),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::S1Case1 => "s1case1",
            Setting::S1Case2 => "s1case2",
            Setting::S2 => "s2",
        })
    }
}

/// Baseline rate per time unit and the three coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub lambda0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub setting: Setting,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub early: ExtractionWindow,
    pub late: ExtractionWindow,
    /// Birthdates are uniform on `(lo, hi]`.
    pub birth_range: (NaiveDate, NaiveDate),
    /// Birthdates on or after this date form the later generation (setting 2).
    pub generation_split: NaiveDate,
    pub truth: Truth,
    pub p_z: f64,
    /// Pseudo-copies per subject without a birthdate.
    pub k: usize,
    /// Strip birthdates from the early pull.
    pub degrade_early: bool,
    pub fit: FitConfig<f64>,
}

fn date(s: &str) -> NaiveDate {
    parse_date(s).expect("valid literal date")
}

impl SimConfig {
    pub fn new(setting: Setting) -> Self {
        Self {
            setting,
            n: 50_000,
            reps: 300,
            seed: 1,
            early: ExtractionWindow::new(Decade::Early, date("2002-04-01"), date("2010-03-31")).expect("ordered"),
            late: ExtractionWindow::new(Decade::Late, date("2010-04-01"), date("2017-03-31")).expect("ordered"),
            birth_range: (date("1984-04-01"), date("2017-03-31")),
            generation_split: date("2001-03-31"),
            truth: setting.default_truth(),
            p_z: 0.6,
            k: 100,
            degrade_early: true,
            fit: FitConfig::default(),
        }
    }

    pub fn windows(&self) -> Result<Windows> {
        Windows::new([self.early, self.late])
    }

    pub fn validate(&self) -> Result<()> {
        self.windows()?;
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if self.birth_range.0 >= self.birth_range.1 {
            return Err(Error::Config("empty birth range".into()));
        }
        if !(0.0..=1.0).contains(&self.p_z) {
            return Err(Error::Config(format!("p_z = {} is not a probability", self.p_z)));
        }
        if !(self.truth.lambda0 > 0.0) {
            return Err(Error::Config("baseline rate must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        Ok(())
    }

    /// Seed of replicate `r`.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        derive_seed(self.seed, r as u64)
    }
}

/// One simulated individual with the full event history on `(0, 18)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Person {
    pub birth: NaiveDate,
    pub z: bool,
    /// Age at the start of the late window; the decade indicator of
    /// setting 1 switches on after it.
    pub change_age: f64,
    pub later_generation: bool,
    /// Event ages in years, increasing.
    pub events: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub setting: Setting,
    pub people: Vec<Person>,
    pub seed: u64,
}

/// Piecewise-constant decade indicator of one person on `(0, 18]`.
fn indicator_pieces(setting: Setting, p: &Person) -> Vec<(f64, f64, f64)> {
    let cap = DEFAULT_AGE_CAP as f64;
    match setting {
        Setting::S2 => vec![(0.0, cap, f64::from(u8::from(p.later_generation)))],
        Setting::S1Case1 | Setting::S1Case2 => {
            let c = p.change_age.clamp(0.0, cap);
            [(0.0, c, 0.0), (c, cap, 1.0)].into_iter().filter(|(lo, hi, _)| hi > lo).collect()
        }
    }
}

/// Draws a population with seed `seed`.
pub fn generate_population(cfg: &SimConfig, seed: u64) -> Result<Population> {
    cfg.validate()?;
    let mut rng: ChaCha8Rng = stream_rng(seed, 0);
    let (blo, bhi) = cfg.birth_range;
    let span = (bhi - blo).num_days() as u64;
    let t = cfg.truth;
    let per_year = t.lambda0 / DEFAULT_TIME_UNIT_YEARS;
    let mut people = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let birth = blo + Days::new(rng.random_range(1..=span));
        let z = rng.random_bool(cfg.p_z);
        let mut p = Person {
            birth,
            z,
            change_age: years_between(birth, cfg.late.left),
            later_generation: birth >= cfg.generation_split,
            events: Vec::new(),
        };
        let zf = f64::from(u8::from(z));
        for (lo, hi, x) in indicator_pieces(cfg.setting, &p) {
            let rate = per_year * (t.alpha * x + t.beta * zf + t.gamma * x * zf).exp();
            let exp = Exp::new(rate).map_err(|e| Error::Config(e.to_string()))?;
            let mut a = lo;
            loop {
                a += exp.sample(&mut rng);
                if a > hi {
                    break;
                }
                p.events.push(a);
            }
        }
        people.push(p);
    }
    Ok(Population { setting: cfg.setting, people, seed })
}

/// Ages `(lo, hi]` during which a person is in the calendar span
/// `[start, end)` and younger than the age cap.
fn window_ages(birth: NaiveDate, start: NaiveDate, end_excl: NaiveDate) -> Option<(f64, f64)> {
    let lo = years_between(birth, start).max(0.0);
    let hi = years_between(birth, end_excl).min(DEFAULT_AGE_CAP as f64);
    (hi > lo).then_some((lo, hi))
}

fn end_exclusive(w: &ExtractionWindow) -> NaiveDate {
    w.right + Days::new(1)
}

/// Calendar span of one analysis sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Span {
    Early,
    Late,
    Union,
}

/// Covariate coding of a full-information sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coding {
    /// Sample membership indicator.
    Fixed(f64),
    /// The indicator the data were generated with.
    Truth,
}

/// Full-information units `(x, z, xz)` for the people observed during
/// `span`; with `require_event` only those with at least one event in it.
pub fn full_units(pop: &Population, cfg: &SimConfig, span: Span, coding: Coding, require_event: bool) -> Vec<Unit<f64>> {
    let (start, end) = match span {
        Span::Early => (cfg.early.left, end_exclusive(&cfg.early)),
        Span::Late => (cfg.late.left, end_exclusive(&cfg.late)),
        Span::Union => (cfg.early.left, end_exclusive(&cfg.late)),
    };
    pop.people
        .iter()
        .filter_map(|p| {
            let (lo, hi) = window_ages(p.birth, start, end)?;
            let zf = f64::from(u8::from(p.z));
            let pieces = match coding {
                Coding::Fixed(x) => vec![(lo, hi, x)],
                Coding::Truth => indicator_pieces(pop.setting, p)
                    .into_iter()
                    .filter_map(|(a, b, x)| {
                        let (a, b) = (a.max(lo), b.min(hi));
                        (b > a).then_some((a, b, x))
                    })
                    .collect(),
            };
            let v = |x: f64| vec![x, zf, x * zf];
            let segments: Vec<Segment<f64>> = pieces.iter().map(|&(a, b, x)| Segment { lo: a, hi: b, v: v(x), weight: 1.0 }).collect();
            let events: Vec<Mark<f64>> = p
                .events
                .iter()
                .filter_map(|&u| {
                    let &(_, _, x) = pieces.iter().find(|&&(a, b, _)| a < u && u <= b)?;
                    Some(Mark { age: u, v: v(x), weight: 1.0 })
                })
                .collect();
            if require_event && events.is_empty() {
                return None;
            }
            Some(Unit { segments, events })
        })
        .collect()
}

fn event_date(p: &Person, age: f64) -> NaiveDate {
    p.birth + Days::new((age * DAYS_PER_YEAR).floor() as u64)
}

/// Visit records of everyone with at least one visit in window `w`.
fn pull(pop: &Population, w: &ExtractionWindow, keep_birthdate: bool, prefix: &str) -> Vec<SubjectRecord> {
    pop.people
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let events: Vec<Visit> = p
                .events
                .iter()
                .map(|&a| event_date(p, a))
                .filter(|&d| w.contains(d))
                .filter_map(|d| {
                    let age = completed_years(p.birth, d);
                    (0..DEFAULT_AGE_CAP as i32).contains(&age).then_some(Visit { date: d, age_years: age as u32 })
                })
                .collect();
            (!events.is_empty()).then(|| SubjectRecord {
                id: format!("{prefix}{i}"),
                sex: if p.z { Sex::Male } else { Sex::Female },
                region: Region::Other,
                decade: w.label,
                birthdate: keep_birthdate.then_some(p.birth),
                events,
            })
        })
        .collect()
}

/// The early and late data pulls as one visit-level cohort. A person with
/// visits in both windows appears twice under unrelated ids.
pub fn pulled_cohort(pop: &Population, cfg: &SimConfig) -> Result<CohortDataset> {
    let mut subjects = pull(pop, &cfg.early, !cfg.degrade_early, "E");
    subjects.extend(pull(pop, &cfg.late, true, "L"));
    CohortDataset::new(subjects, cfg.windows()?)
}

/// All analysis samples of one population.
#[derive(Debug, Clone)]
pub struct Cohorts {
    /// Everyone observed in the early window, membership coding.
    pub o_e: Vec<Unit<f64>>,
    /// Everyone observed in the late window, membership coding.
    pub o_l: Vec<Unit<f64>>,
    /// Everyone observed in either window, true coding.
    pub o: Vec<Unit<f64>>,
    /// Those of `o` with at least one event.
    pub o_1: Vec<Unit<f64>>,
    /// Early and late pulls.
    pub pulled: CohortDataset,
}

pub fn extract_cohorts(pop: &Population, cfg: &SimConfig) -> Result<Cohorts> {
    Ok(Cohorts {
        o_e: full_units(pop, cfg, Span::Early, Coding::Fixed(0.0), false),
        o_l: full_units(pop, cfg, Span::Late, Coding::Fixed(1.0), false),
        o: full_units(pop, cfg, Span::Union, Coding::Truth, false),
        o_1: full_units(pop, cfg, Span::Union, Coding::Truth, true),
        pulled: pulled_cohort(pop, cfg)?,
    })
}

/// How census cells are indexed by the decade slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CensusMode {
    /// Calendar window in which the person-time falls.
    Calendar,
    /// Birth generation, over the union of both windows.
    Generation,
}

/// Person-years per `(decade slot, sex, integer age)`; region is `Other`.
pub fn census_from_population(pop: &Population, cfg: &SimConfig, mode: CensusMode) -> Result<CensusTable> {
    let cap = DEFAULT_AGE_CAP as usize;
    let mut acc = [[vec![0.0f64; cap], vec![0.0f64; cap]], [vec![0.0f64; cap], vec![0.0f64; cap]]];
    let add = |row: &mut Vec<f64>, lo: f64, hi: f64| {
        let first = lo.floor().max(0.0) as usize;
        let last = (hi.ceil() as usize).min(cap);
        for (k, slot) in row.iter_mut().enumerate().take(last).skip(first) {
            let k = k as f64;
            let ov = hi.min(k + 1.0) - lo.max(k);
            if ov > 0.0 {
                *slot += ov;
            }
        }
    };
    for p in &pop.people {
        let g = usize::from(p.z);
        match mode {
            CensusMode::Calendar => {
                for (d, w) in [(0, &cfg.early), (1, &cfg.late)] {
                    if let Some((lo, hi)) = window_ages(p.birth, w.left, end_exclusive(w)) {
                        add(&mut acc[d][g], lo, hi);
                    }
                }
            }
            CensusMode::Generation => {
                if let Some((lo, hi)) = window_ages(p.birth, cfg.early.left, end_exclusive(&cfg.late)) {
                    add(&mut acc[usize::from(p.later_generation)][g], lo, hi);
                }
            }
        }
    }
    CensusTable::from_fn(DEFAULT_AGE_CAP, |(d, g, r, a)| {
        if r != Region::Other {
            return 0.0;
        }
        acc[usize::from(d == Decade::Late)][usize::from(g == Sex::Male)][a as usize]
    })
}

/// Augmentation settings for replicate `seed`.
pub fn augment_config(cfg: &SimConfig, seed: u64) -> AugmentConfig {
    AugmentConfig { k: cfg.k, seed: derive_seed(seed, u64::MAX) }
}
