//! The eight constant/age-varying patterns for `(α, β, γ)`, fitted by a
//! flat-weight global solve, a local curve fit, or backfitting between the
//! two; plus the Breslow-type baseline, working log-likelihood and AIC.

use std::fmt;
use std::str::FromStr;

use crate::augment::{cohort_units, AugmentConfig};
use crate::census::CensusTable;
use crate::data::{CohortDataset, CovariateScheme, Decade, DEFAULT_TIME_UNIT_YEARS};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::local::{age_grid, dot, fit_curve, solve_constant, ConstantFit, Degree, FitCurve, KernelSpec, SolverConfig};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Constant,
    Varying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Target {
    #[default]
    Cohort,
    GeneralPopulation,
}

impl FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cohort" => Ok(Target::Cohort),
            "population" | "general-population" | "generalpopulation" => Ok(Target::GeneralPopulation),
            other => Err(Error::Config(format!("unknown target `{other}`"))),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Cohort => "cohort",
            Target::GeneralPopulation => "population",
        })
    }
}

/// Shapes of `α` (decade), `β` (covariates) and `γ` (interactions).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub alpha: Shape,
    pub beta: Shape,
    pub gamma: Shape,
    pub target: Target,
}

impl ModelSpec {
    pub fn new(alpha: Shape, beta: Shape, gamma: Shape, target: Target) -> Self {
        Self { alpha, beta, gamma, target }
    }

    /// All eight patterns, `CCC` first and `VVV` last.
    pub fn all(target: Target) -> Vec<ModelSpec> {
        let s = |b: usize| if b == 1 { Shape::Varying } else { Shape::Constant };
        (0..8).map(|i| ModelSpec::new(s(i >> 2 & 1), s(i >> 1 & 1), s(i & 1), target)).collect()
    }

    pub fn name(&self) -> String {
        [self.alpha, self.beta, self.gamma]
            .iter()
            .map(|s| match s {
                Shape::Constant => 'C',
                Shape::Varying => 'V',
            })
            .collect()
    }

    pub fn parse(name: &str, target: Target) -> Result<Self> {
        let shapes: Vec<Shape> = name
            .trim()
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'C' => Ok(Shape::Constant),
                'V' => Ok(Shape::Varying),
                _ => Err(Error::Config(format!("model `{name}` must be three of C/V"))),
            })
            .collect::<Result<_>>()?;
        match shapes[..] {
            [a, b, g] => Ok(Self::new(a, b, g, target)),
            _ => Err(Error::Config(format!("model `{name}` must be three of C/V"))),
        }
    }

    /// Per-column varying flags for `(x, z₁..z_q, xz₁..xz_q)`.
    pub fn varying_mask(&self, q: usize) -> Vec<bool> {
        let v = |s: Shape| s == Shape::Varying;
        std::iter::once(v(self.alpha))
            .chain(std::iter::repeat_n(v(self.beta), q))
            .chain(std::iter::repeat_n(v(self.gamma), q))
            .collect()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig<T> {
    pub kernel: KernelSpec<T>,
    pub degree: Degree,
    pub tau: (T, T),
    pub grid_step: T,
    pub solver: SolverConfig<T>,
    pub backfit_tol: T,
    pub backfit_max_cycles: usize,
    /// Length of the reporting time unit in years.
    pub time_unit_years: T,
}

impl<T: Scalar> Default for FitConfig<T> {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::epanechnikov(T::one()).expect("positive bandwidth"),
            degree: Degree::Linear,
            tau: (T::one(), T::of(17.0)),
            grid_step: T::of(1.0 / 6.0),
            solver: SolverConfig::default(),
            backfit_tol: T::of(1e-6),
            backfit_max_cycles: 25,
            time_unit_years: T::of(DEFAULT_TIME_UNIT_YEARS),
        }
    }
}

impl<T: Scalar> FitConfig<T> {
    pub fn grid(&self) -> Result<Vec<T>> {
        age_grid(self.tau.0, self.tau.1, self.grid_step)
    }
}

/// Right-continuous step function with jumps at event ages.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFn<T> {
    ages: Vec<T>,
    jumps: Vec<T>,
    tau: (T, T),
    time_unit_years: T,
}

impl<T: Scalar> BaselineFn<T> {
    pub fn from_jumps(ages: Vec<T>, jumps: Vec<T>, tau: (T, T), time_unit_years: T) -> Result<Self> {
        if ages.len() != jumps.len() || ages.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Precondition("baseline ages must be strictly increasing and match jumps".into()));
        }
        Ok(Self { ages, jumps, tau, time_unit_years })
    }

    pub fn ages(&self) -> &[T] {
        &self.ages
    }

    pub fn jumps(&self) -> &[T] {
        &self.jumps
    }

    pub fn tau(&self) -> (T, T) {
        self.tau
    }

    fn sum_to(&self, a: T) -> T {
        let k = self.ages.partition_point(|&u| u <= a);
        self.jumps[..k].iter().copied().sum()
    }

    /// `Λ̂0(a)` anchored so that `Λ̂0(τ_L) = 0`.
    pub fn value(&self, a: T) -> T {
        self.sum_to(a) - self.sum_to(self.tau.0)
    }

    /// Sum of jumps over `(0, a]`.
    pub fn value_from_origin(&self, a: T) -> T {
        self.sum_to(a)
    }

    /// Average slope over `[τ_L, τ_R]` per reporting time unit.
    pub fn rate_per_unit(&self) -> T {
        (self.value(self.tau.1) - self.value(self.tau.0)) / (self.tau.1 - self.tau.0) * self.time_unit_years
    }
}

/// `dΛ̂0(u) = Σ w dN(u) / Σ_l w_l exp(θ̂(u)′V_l)` at every event age of the
/// design; denominators come from its risk rows (census rows for a
/// population design).
pub fn breslow_baseline<T: Scalar>(design: &Design<T>, theta: impl Fn(T) -> Vec<T>, tau: (T, T), time_unit_years: T) -> Result<BaselineFn<T>> {
    let mut ages: Vec<T> = Vec::new();
    let mut jumps: Vec<T> = Vec::new();
    let mut cache: Option<(T, Vec<T>)> = None;
    for (e, ev) in design.events().iter().enumerate() {
        let th = match &cache {
            Some((u, th)) if *u == ev.age => th.clone(),
            _ => {
                let th = theta(ev.age);
                cache = Some((ev.age, th.clone()));
                th
            }
        };
        let denom: T = design.risk_row(e).iter().map(|&(prof, w)| w * dot(&th, &design.profiles()[prof]).exp()).sum();
        if !(denom > T::zero()) || !denom.is_finite() {
            return Err(Error::ZeroDenominator { age: ev.age.as_f64() });
        }
        let jump = ev.weight / denom;
        match ages.last() {
            Some(&u) if u == ev.age => *jumps.last_mut().expect("paired") = *jumps.last().expect("paired") + jump,
            _ => {
                ages.push(ev.age);
                jumps.push(jump);
            }
        }
    }
    BaselineFn::from_jumps(ages, jumps, tau, time_unit_years)
}

/// `Σ_e w_e{θ̂(u_e)′V_e + log ΔΛ̂0(u_e)} − Σ_u S0(θ̂(u), u) ΔΛ̂0(u)`.
pub fn log_likelihood<T: Scalar>(design: &Design<T>, theta: impl Fn(T) -> Vec<T>, baseline: &BaselineFn<T>) -> Result<T> {
    let mut ll = T::zero();
    let mut last_age: Option<T> = None;
    for (e, ev) in design.events().iter().enumerate() {
        let k = baseline.ages.partition_point(|&u| u < ev.age);
        let jump = match baseline.ages.get(k) {
            Some(&u) if u == ev.age => baseline.jumps[k],
            _ => T::zero(),
        };
        if !(jump > T::zero()) {
            return Err(Error::LogOfZero { age: ev.age.as_f64() });
        }
        let th = theta(ev.age);
        ll = ll + ev.weight * (dot(&th, &design.profiles()[ev.profile]) + jump.ln());
        if last_age != Some(ev.age) {
            let s0: T = design.risk_row(e).iter().map(|&(prof, w)| w * dot(&th, &design.profiles()[prof]).exp()).sum();
            ll = ll - s0 * jump;
            last_age = Some(ev.age);
        }
    }
    Ok(ll)
}

/// Backfitting record for mixed constant/varying models.
#[derive(Debug, Clone, PartialEq)]
pub struct Backfit<T> {
    pub cycles: usize,
    pub converged: bool,
    /// Largest coefficient change of each cycle.
    pub trace: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefRow<T> {
    pub name: String,
    pub estimate: T,
    pub se: T,
    pub se_model: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel<T> {
    pub spec: ModelSpec,
    /// Column names in model order.
    pub names: Vec<String>,
    pub varying: Vec<bool>,
    /// Constant columns, in model order.
    pub constant: Option<ConstantFit<T>>,
    /// Varying columns, in model order.
    pub curve: Option<FitCurve<T>>,
    pub baseline: BaselineFn<T>,
    pub loglik: T,
    /// Effective number of parameters.
    pub nu: T,
    pub aic: T,
    pub backfit: Backfit<T>,
}

impl<T: Scalar> FittedModel<T> {
    pub fn constant_names(&self) -> Vec<String> {
        self.names.iter().zip(&self.varying).filter(|(_, v)| !**v).map(|(n, _)| n.clone()).collect()
    }

    pub fn varying_names(&self) -> Vec<String> {
        self.names.iter().zip(&self.varying).filter(|(_, v)| **v).map(|(n, _)| n.clone()).collect()
    }

    pub fn coefficients(&self) -> Vec<CoefRow<T>> {
        let Some(c) = &self.constant else { return Vec::new() };
        let (se, sm) = (c.stderr(), c.stderr_model());
        self.constant_names()
            .into_iter()
            .enumerate()
            .map(|(j, name)| CoefRow { name, estimate: c.theta[j], se: se[j], se_model: sm[j] })
            .collect()
    }

    /// `θ̂(u)` over all model columns.
    pub fn theta_at(&self, u: T) -> Vec<T> {
        assemble(&self.varying, self.constant.as_ref().map(|c| c.theta.as_slice()), self.curve.as_ref(), u)
    }

    pub fn converged(&self) -> bool {
        self.constant.as_ref().is_none_or(|c| c.converged)
            && self.curve.as_ref().is_none_or(|c| c.all_converged())
            && self.backfit.converged
    }
}

fn assemble<T: Scalar>(varying: &[bool], constant: Option<&[T]>, curve: Option<&FitCurve<T>>, u: T) -> Vec<T> {
    let cv = curve.and_then(|c| c.theta_at(u));
    let (mut ci, mut vi) = (0, 0);
    varying
        .iter()
        .map(|&v| {
            if v {
                vi += 1;
                cv.as_ref().map_or(T::zero(), |t| t[vi - 1])
            } else {
                ci += 1;
                constant.map_or(T::zero(), |t| t[ci - 1])
            }
        })
        .collect()
}

fn columns(varying: &[bool], want: bool) -> Vec<usize> {
    varying.iter().enumerate().filter(|(_, v)| **v == want).map(|(i, _)| i).collect()
}

fn partial_dot<T: Scalar>(theta: &[T], cols: &[usize], v: &[T]) -> T {
    theta.iter().zip(cols).map(|(&t, &c)| t * v[c]).sum()
}

fn max_curve_change<T: Scalar>(a: &FitCurve<T>, b: &FitCurve<T>) -> T {
    let mut m = T::zero();
    for (x, y) in a.fits.iter().zip(&b.fits) {
        match (x, y) {
            (Some(x), Some(y)) => {
                for (p, q) in x.theta.iter().zip(&y.theta) {
                    m = m.max((*p - *q).abs());
                }
            }
            (None, None) => {}
            _ => return T::infinity(),
        }
    }
    m
}

/// Effective parameters of a curve: `Σ_j Δa_j K_h(0) tr[(Π̂⁻¹)_θθ Π̂_θθ]`
/// with trapezoidal `Δa_j` over the grid.
pub fn curve_dof<T: Scalar>(curve: &FitCurve<T>) -> T {
    let g = &curve.grid;
    let k0 = KernelSpec::epanechnikov(curve.bandwidth).map_or(T::zero(), |k| k.weight(T::zero(), T::zero()));
    let n = g.len();
    if n < 2 {
        return curve.fits.iter().flatten().map(|f| f.hat_trace).sum();
    }
    let half = T::of(0.5);
    (0..n)
        .filter_map(|j| {
            let f = curve.fits[j].as_ref()?;
            let left = if j > 0 { g[j] - g[j - 1] } else { T::zero() };
            let right = if j + 1 < n { g[j + 1] - g[j] } else { T::zero() };
            Some(half * (left + right) * k0 * f.hat_trace)
        })
        .sum()
}

/// `2ν − 2ℓ`.
pub fn aic<T: Scalar>(nu: T, loglik: T) -> T {
    T::of(2.0) * nu - T::of(2.0) * loglik
}

/// Fits a model whose columns are those of `design`; `varying[j]` marks
/// age-varying columns.
pub fn fit_design<T: Scalar>(design: &Design<T>, names: Vec<String>, varying: &[bool], spec: ModelSpec, cfg: &FitConfig<T>) -> Result<FittedModel<T>> {
    let p = design.p();
    if names.len() != p || varying.len() != p {
        return Err(Error::Precondition(format!("{p} design columns but {} names and {} shape flags", names.len(), varying.len())));
    }
    let (lo, hi) = cfg.tau;
    let ccols = columns(varying, false);
    let vcols = columns(varying, true);
    let mut backfit = Backfit { cycles: 0, converged: true, trace: Vec::new() };
    let (constant, curve) = if vcols.is_empty() {
        (Some(solve_constant(design, lo, hi, &cfg.solver, None)?), None)
    } else {
        let grid = cfg.grid()?;
        let fit_var = |offset_theta: &[T]| -> Result<FitCurve<T>> {
            let d = design.restricted(&vcols, |_, v| partial_dot(offset_theta, &ccols, v));
            let c = fit_curve(&grid, &d, &cfg.kernel, cfg.degree, &cfg.solver, cfg.tau)?;
            if c.fits.iter().all(Option::is_none) {
                let why = c.failures.first().map(|f| f.1.clone()).unwrap_or_default();
                return Err(Error::Precondition(format!("every grid age failed: {why}")));
            }
            Ok(c)
        };
        if ccols.is_empty() {
            (None, Some(fit_var(&[])?))
        } else {
            let start = solve_constant(design, lo, hi, &cfg.solver, None)?;
            let mut theta_c: Vec<T> = ccols.iter().map(|&c| start.theta[c]).collect();
            let mut curve = fit_var(&theta_c)?;
            let mut cfit = None;
            backfit.converged = false;
            for cycle in 1..=cfg.backfit_max_cycles {
                let cur = &curve;
                let d = design.restricted(&ccols, |u, v| {
                    cur.theta_at(u).map_or(T::zero(), |t| partial_dot(&t, &vcols, v))
                });
                let cf = solve_constant(&d, lo, hi, &cfg.solver, Some(&theta_c))?;
                let next = fit_var(&cf.theta)?;
                let dc = cf.theta.iter().zip(&theta_c).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
                let change = dc.max(max_curve_change(&next, &curve));
                backfit.trace.push(change);
                backfit.cycles = cycle;
                theta_c = cf.theta.clone();
                curve = next;
                cfit = Some(cf);
                if change < cfg.backfit_tol {
                    backfit.converged = true;
                    break;
                }
            }
            (cfit, Some(curve))
        }
    };
    let theta = |u: T| assemble(varying, constant.as_ref().map(|c| c.theta.as_slice()), curve.as_ref(), u);
    let baseline = breslow_baseline(design, theta, cfg.tau, cfg.time_unit_years)?;
    let loglik = log_likelihood(design, theta, &baseline)?;
    let nu = T::of_usize(ccols.len()) + curve.as_ref().map_or(T::zero(), curve_dof);
    Ok(FittedModel {
        spec,
        names,
        varying: varying.to_vec(),
        constant,
        curve,
        baseline,
        loglik,
        nu,
        aic: aic(nu, loglik),
        backfit,
    })
}

/// Estimation units and design of a cohort, with census risk rows when the
/// target is the general population.
pub fn cohort_design<T: Scalar>(
    cohort: &CohortDataset,
    census: Option<&CensusTable>,
    target: Target,
    scheme: CovariateScheme,
    aug: &AugmentConfig,
    decade: Option<Decade>,
) -> Result<Design<T>> {
    let design = Design::build(&cohort_units::<T>(cohort, scheme, aug)?)?;
    match (target, census) {
        (Target::Cohort, _) => Ok(design),
        (Target::GeneralPopulation, Some(c)) => c.population_design(&design, scheme, decade),
        (Target::GeneralPopulation, None) => Err(Error::Precondition("the general-population target needs a census table".into())),
    }
}

/// Fits `spec` to a cohort with the stacked `(x, z, xz)` covariates.
pub fn fit_model<T: Scalar>(
    spec: ModelSpec,
    cohort: &CohortDataset,
    census: Option<&CensusTable>,
    scheme: CovariateScheme,
    aug: &AugmentConfig,
    cfg: &FitConfig<T>,
) -> Result<FittedModel<T>> {
    let design = cohort_design(cohort, census, spec.target, scheme, aug, None)?;
    fit_design(&design, scheme.names(), &spec.varying_mask(scheme.z_len()), spec, cfg)
}

/// Separate fits of `z` effects within each decade; the shape of `β` is
/// taken from `spec`.
pub fn stratified_fit<T: Scalar>(
    spec: ModelSpec,
    cohort: &CohortDataset,
    census: Option<&CensusTable>,
    scheme: CovariateScheme,
    aug: &AugmentConfig,
    cfg: &FitConfig<T>,
) -> Result<(FittedModel<T>, FittedModel<T>)> {
    let q = scheme.z_len();
    let zcols: Vec<usize> = (1..=q).collect();
    let names: Vec<String> = scheme.z_names().iter().map(|s| s.to_string()).collect();
    let varying = vec![spec.beta == Shape::Varying; q];
    let one = |d: Decade| -> Result<FittedModel<T>> {
        let stratum = cohort.stratum(d)?;
        let design = cohort_design::<T>(&stratum, census, spec.target, scheme, aug, Some(d))?.restricted(&zcols, |_, _| T::zero());
        fit_design(&design, names.clone(), &varying, spec, cfg)
    };
    Ok((one(Decade::Early)?, one(Decade::Late)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Unit;

    #[test]
    fn spec_names_round_trip() {
        let all = ModelSpec::all(Target::Cohort);
        let names: Vec<String> = all.iter().map(|s| s.name()).collect();
        assert_eq!(names, ["CCC", "CCV", "CVC", "CVV", "VCC", "VCV", "VVC", "VVV"]);
        for s in all {
            assert_eq!(ModelSpec::parse(&s.name(), Target::Cohort).unwrap(), s);
        }
        assert!(ModelSpec::parse("CCX", Target::Cohort).is_err());
        assert!(ModelSpec::parse("CC", Target::Cohort).is_err());
        assert_eq!(ModelSpec::parse("vcv", Target::Cohort).unwrap().varying_mask(1), vec![true, false, true]);
    }

    #[test]
    fn singleton_loglik() {
        let d = Design::build(&[Unit::simple(0.0, 10.0, vec![], &[4.0])]).unwrap();
        let b = breslow_baseline(&d, |_| vec![], (1.0, 9.0), 1.0).unwrap();
        assert_eq!(b.jumps(), &[1.0]);
        assert_eq!(log_likelihood(&d, |_| vec![], &b).unwrap(), -1.0);
    }

    #[test]
    fn empty_event_set_has_zero_loglik() {
        let d = Design::build(&[Unit::simple(0.0, 10.0, vec![1.0], &[])]).unwrap();
        let b = breslow_baseline(&d, |_| vec![0.0], (1.0, 9.0), 1.0).unwrap();
        assert_eq!(b.value(5.0), 0.0);
        assert_eq!(log_likelihood(&d, |_| vec![0.0], &b).unwrap(), 0.0);
    }

    #[test]
    fn baseline_anchor_and_slope() {
        let b = BaselineFn::from_jumps(vec![0.5, 2.0, 3.0, 8.0], vec![1.0, 1.0, 2.0, 4.0], (1.0, 5.0), 0.5).unwrap();
        assert_eq!(b.value(1.0), 0.0);
        assert_eq!(b.value(0.7), 0.0);
        assert_eq!(b.value(0.3), -1.0);
        assert_eq!(b.value(3.0), 3.0);
        assert_eq!(b.value_from_origin(3.0), 4.0);
        assert_eq!(b.rate_per_unit(), 3.0 / 4.0 * 0.5);
    }

    #[test]
    fn zero_denominator_is_named() {
        // the event's own unit has zero weight in the risk row after restriction
        let d = Design::build(&[Unit::simple(0.0, 10.0, vec![1.0], &[4.0])]).unwrap();
        let d = d.restricted(&[0], |_, _| f64::NEG_INFINITY);
        assert!(matches!(breslow_baseline(&d, |_| vec![0.0], (1.0, 9.0), 1.0), Err(Error::ZeroDenominator { age }) if age == 4.0));
    }

    #[test]
    fn curve_dof_of_flat_traces() {
        use crate::local::LocalFit;
        let fit = |a: f64| LocalFit {
            a,
            theta: vec![0.0],
            theta_dot: vec![],
            cov: crate::linalg::Matrix::zeros(1, 1),
            cov_model: crate::linalg::Matrix::zeros(1, 1),
            newton_iters: 0,
            converged: true,
            score_norm: 0.0,
            hat_trace: 1.0,
        };
        let grid = vec![1.0, 1.5, 2.0, 2.5, 3.0];
        let curve = FitCurve {
            fits: grid.iter().map(|&a| Some(fit(a))).collect(),
            grid,
            failures: vec![],
            tau: (1.0, 3.0),
            degree: Degree::Constant,
            bandwidth: 1.0,
        };
        assert!((curve_dof(&curve) - 2.0 * 0.75).abs() < 1e-15);
    }
}
