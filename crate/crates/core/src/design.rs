//! Estimation input shared by every estimator: i.i.d. units made of
//! weighted at-risk segments and weighted event marks, compiled into
//! per-event risk rows aggregated by covariate profile.
//!
//! A subject with a known birthdate is one unit with one segment. Under
//! birthdate augmentation a subject is still one unit, carrying `K`
//! pseudo-copies of weight `1/K`. Time-varying covariates are expressed
//! by splitting a unit's observation window into segments.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::Scalar;

/// At-risk stretch `(lo, hi]` with a fixed covariate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    pub lo: T,
    pub hi: T,
    pub v: Vec<T>,
    pub weight: T,
}

/// An event jump at `age`, carrying the unit's covariates at that age and
/// its risk weight `w_i(age)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mark<T> {
    pub age: T,
    pub v: Vec<T>,
    pub weight: T,
}

/// One independent sampling unit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Unit<T> {
    pub segments: Vec<Segment<T>>,
    pub events: Vec<Mark<T>>,
}

impl<T: Scalar> Unit<T> {
    /// A unit observed on `(lo, hi]` with constant covariates. Events
    /// outside the window get weight zero and are dropped.
    pub fn simple(lo: T, hi: T, v: Vec<T>, event_ages: &[T]) -> Self {
        let events = event_ages
            .iter()
            .filter(|&&u| lo < u && u <= hi)
            .map(|&age| Mark { age, v: v.clone(), weight: T::one() })
            .collect();
        Self { segments: vec![Segment { lo, hi, v, weight: T::one() }], events }
    }

    /// Risk weight of this unit at age `u` with covariates, one entry per
    /// covering segment.
    pub fn risk_at(&self, u: T) -> impl Iterator<Item = (&[T], T)> {
        self.segments.iter().filter(move |s| s.lo < u && u <= s.hi).map(|s| (s.v.as_slice(), s.weight))
    }
}

/// Where the centring moments of an event come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Centering {
    /// Observed risk sets of the units themselves.
    Cohort,
    /// Population counts per covariate cell and integer age.
    Population,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventTerm<T> {
    pub age: T,
    pub weight: T,
    pub unit: usize,
    pub profile: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct SegmentTerm<T> {
    lo: T,
    hi: T,
    profile: usize,
    weight: T,
    unit: usize,
}

/// Compiled design: distinct covariate profiles, events sorted by age and,
/// for every event, the at-risk weight of each profile at its age.
#[derive(Debug, Clone)]
pub struct Design<T> {
    p: usize,
    profiles: Vec<Vec<T>>,
    events: Vec<EventTerm<T>>,
    risk: Vec<Vec<(usize, T)>>,
    segments: Vec<SegmentTerm<T>>,
    n_units: usize,
    centering: Centering,
}

#[derive(Default)]
struct ProfileIndex {
    map: HashMap<Vec<u64>, usize>,
}

impl ProfileIndex {
    fn intern<T: Scalar>(&mut self, profiles: &mut Vec<Vec<T>>, v: &[T]) -> usize {
        let key: Vec<u64> = v.iter().map(|x| x.as_f64().to_bits()).collect();
        *self.map.entry(key).or_insert_with(|| {
            profiles.push(v.to_vec());
            profiles.len() - 1
        })
    }
}

fn by_age<T: Scalar>(a: T, b: T) -> std::cmp::Ordering {
    a.partial_cmp(&b).unwrap_or(std::cmp::Ordering::Equal)
}

impl<T: Scalar> Design<T> {
    pub fn build(units: &[Unit<T>]) -> Result<Self> {
        let p = units
            .iter()
            .flat_map(|u| u.segments.iter().map(|s| s.v.len()))
            .next()
            .ok_or_else(|| Error::Precondition("design needs at least one at-risk segment".into()))?;
        let mut index = ProfileIndex::default();
        let mut profiles = Vec::new();
        let mut segments = Vec::new();
        let mut events = Vec::new();
        for (i, unit) in units.iter().enumerate() {
            for s in &unit.segments {
                if s.v.len() != p {
                    return Err(Error::Precondition(format!("unit {i}: covariate length {} != {p}", s.v.len())));
                }
                if !(s.weight > T::zero()) || !(s.hi > s.lo) {
                    continue;
                }
                let profile = index.intern(&mut profiles, &s.v);
                segments.push(SegmentTerm { lo: s.lo, hi: s.hi, profile, weight: s.weight, unit: i });
            }
            for m in &unit.events {
                if m.v.len() != p {
                    return Err(Error::Precondition(format!("unit {i}: event covariate length {} != {p}", m.v.len())));
                }
                if !(m.weight > T::zero()) {
                    continue;
                }
                let profile = index.intern(&mut profiles, &m.v);
                events.push(EventTerm { age: m.age, weight: m.weight, unit: i, profile });
            }
        }
        events.sort_by(|a, b| by_age(a.age, b.age).then(a.unit.cmp(&b.unit)));
        let risk = sweep_risk(&segments, &events, profiles.len());
        Ok(Self { p, profiles, events, risk, segments, n_units: units.len(), centering: Centering::Cohort })
    }

    /// Number of covariates.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn profiles(&self) -> &[Vec<T>] {
        &self.profiles
    }

    pub fn events(&self) -> &[EventTerm<T>] {
        &self.events
    }

    pub fn centering(&self) -> Centering {
        self.centering
    }

    /// Aggregated `(profile, weight)` risk row of event `e`.
    pub fn risk_row(&self, e: usize) -> &[(usize, T)] {
        &self.risk[e]
    }

    /// Index range of events with `lo ≤ age ≤ hi`.
    pub fn events_between(&self, lo: T, hi: T) -> std::ops::Range<usize> {
        let start = self.events.partition_point(|e| e.age < lo);
        let end = self.events.partition_point(|e| e.age <= hi);
        start..end.max(start)
    }

    /// Smallest segment start and largest segment end.
    pub fn span(&self) -> (T, T) {
        self.segments.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), s| (lo.min(s.lo), hi.max(s.hi)))
    }

    /// Total event weight.
    pub fn event_weight(&self) -> T {
        self.events.iter().map(|e| e.weight).sum()
    }

    /// Observed risk set at an arbitrary age, aggregated by profile.
    pub fn risk_at(&self, u: T) -> Vec<(usize, T)> {
        let mut acc = vec![T::zero(); self.profiles.len()];
        for s in &self.segments {
            if s.lo < u && u <= s.hi {
                acc[s.profile] = acc[s.profile] + s.weight;
            }
        }
        acc.into_iter().enumerate().filter(|(_, w)| *w > T::zero()).collect()
    }

    /// Per-unit at-risk segments with profile ids, for validators.
    pub fn segments(&self) -> impl Iterator<Item = (usize, T, T, usize, T)> + '_ {
        self.segments.iter().map(|s| (s.unit, s.lo, s.hi, s.profile, s.weight))
    }

    /// Replaces every risk row by population counts: the row of an event
    /// at age `u` lists each cell's count at `⌊u⌋`.
    pub fn with_population_rows(&self, cells: &[(Vec<T>, Vec<T>)]) -> Result<Self> {
        let mut out = self.clone();
        let mut index = ProfileIndex::default();
        for (i, v) in out.profiles.clone().iter().enumerate() {
            index.map.insert(v.iter().map(|x| x.as_f64().to_bits()).collect(), i);
        }
        let mut cell_profiles = Vec::with_capacity(cells.len());
        for (v, _) in cells {
            if v.len() != self.p {
                return Err(Error::Census(format!("cell covariate length {} != {}", v.len(), self.p)));
            }
            cell_profiles.push(index.intern(&mut out.profiles, v));
        }
        out.risk = self
            .events
            .iter()
            .map(|e| {
                let k = e.age.floor().to_usize().unwrap_or(usize::MAX);
                let mut row: Vec<(usize, T)> = Vec::new();
                for ((_, counts), &prof) in cells.iter().zip(&cell_profiles) {
                    let m = counts.get(k).copied().unwrap_or_else(T::zero);
                    if m > T::zero() {
                        match row.iter_mut().find(|(p, _)| *p == prof) {
                            Some(slot) => slot.1 = slot.1 + m,
                            None => row.push((prof, m)),
                        }
                    }
                }
                row
            })
            .collect();
        out.centering = Centering::Population;
        Ok(out)
    }

    /// Keeps only covariate columns `cols`; every risk weight of profile
    /// `v` at event age `u` is multiplied by `exp(offset(u, v))`, with `v`
    /// the full covariate vector.
    pub fn restricted<F>(&self, cols: &[usize], offset: F) -> Self
    where
        F: Fn(T, &[T]) -> T,
    {
        let profiles: Vec<Vec<T>> = self.profiles.iter().map(|v| cols.iter().map(|&c| v[c]).collect()).collect();
        let risk = self
            .events
            .iter()
            .zip(&self.risk)
            .map(|(e, row)| {
                row.iter().map(|&(prof, w)| (prof, w * offset(e.age, &self.profiles[prof]).exp())).collect()
            })
            .collect();
        Self {
            p: cols.len(),
            profiles,
            events: self.events.clone(),
            risk,
            segments: self.segments.clone(),
            n_units: self.n_units,
            centering: self.centering,
        }
    }
}

/// Sweeps segment starts and ends against sorted event ages.
fn sweep_risk<T: Scalar>(segments: &[SegmentTerm<T>], events: &[EventTerm<T>], n_profiles: usize) -> Vec<Vec<(usize, T)>> {
    let mut starts: Vec<&SegmentTerm<T>> = segments.iter().collect();
    starts.sort_by(|a, b| by_age(a.lo, b.lo));
    let mut ends: Vec<&SegmentTerm<T>> = segments.iter().collect();
    ends.sort_by(|a, b| by_age(a.hi, b.hi));
    let mut acc = vec![T::zero(); n_profiles];
    // largest weight ever added per profile, to snap cancellation residue to zero
    let mut scale = vec![T::zero(); n_profiles];
    let (mut si, mut ei) = (0, 0);
    let mut rows = Vec::with_capacity(events.len());
    let snap = T::epsilon() * T::of(64.0);
    for e in events {
        while si < starts.len() && starts[si].lo < e.age {
            let s = starts[si];
            acc[s.profile] = acc[s.profile] + s.weight;
            scale[s.profile] = scale[s.profile].max(acc[s.profile]);
            si += 1;
        }
        while ei < ends.len() && ends[ei].hi < e.age {
            let s = ends[ei];
            acc[s.profile] = acc[s.profile] - s.weight;
            if acc[s.profile].abs() <= snap * scale[s.profile] {
                acc[s.profile] = T::zero();
            }
            ei += 1;
        }
        rows.push(acc.iter().enumerate().filter(|(_, w)| **w > T::zero()).map(|(i, w)| (i, *w)).collect());
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_matches_direct_risk_sets() {
        let units = vec![
            Unit::simple(0.5, 6.0, vec![0.0, 1.0], &[1.0, 5.5]),
            Unit::simple(2.0, 9.0, vec![1.0, 0.0], &[2.0, 3.0, 9.0]),
            Unit::simple(0.0, 3.0, vec![0.0, 1.0], &[]),
            Unit {
                segments: vec![
                    Segment { lo: 1.0, hi: 4.0, v: vec![0.0, 0.0], weight: 0.5 },
                    Segment { lo: 4.0, hi: 8.0, v: vec![1.0, 1.0], weight: 0.5 },
                ],
                events: vec![Mark { age: 4.0, v: vec![0.0, 0.0], weight: 0.5 }],
            },
        ];
        let d = Design::build(&units).unwrap();
        // unit 1's event at age 2.0 sits on its left endpoint and is dropped
        assert_eq!(d.events().len(), 5);
        for (e, ev) in d.events().iter().enumerate() {
            let mut direct = d.risk_at(ev.age);
            let mut row = d.risk_row(e).to_vec();
            direct.sort_by_key(|x| x.0);
            row.sort_by_key(|x| x.0);
            assert_eq!(direct, row, "event {e} at {}", ev.age);
        }
        assert_eq!(d.events_between(3.0, 5.5).len(), 3);
        assert_eq!(d.span(), (0.0, 9.0));
    }

    #[test]
    fn population_rows_use_integer_age() {
        let units = vec![Unit::simple(0.0, 10.0, vec![1.0], &[2.5, 7.25])];
        let d = Design::build(&units).unwrap();
        let mut counts = vec![0.0; 18];
        counts[2] = 3.0;
        counts[7] = 5.0;
        let pop = d.with_population_rows(&[(vec![1.0], counts.clone()), (vec![0.0], counts)]).unwrap();
        assert_eq!(pop.centering(), Centering::Population);
        assert_eq!(pop.risk_row(0), &[(0, 3.0), (1, 3.0)]);
        assert_eq!(pop.risk_row(1), &[(0, 5.0), (1, 5.0)]);
    }
}
