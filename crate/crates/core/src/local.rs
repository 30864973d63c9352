//! Kernel-weighted local polynomial estimating equations for age-varying
//! coefficients, their Newton solution and sandwich variance.
//!
//! At a fixed age `a` the coefficient path is expanded to first order,
//! `θ(u) ≈ θ(a) + θ̇(a)(u − a)`, giving the working covariate
//! `V*(u, a) = (V, (u − a)V)` and parameter `φ = (θ, θ̇)`. The same
//! machinery with a flat weight over `[τ_L, τ_R]` gives the
//! constant-coefficient (Andersen–Gill type) score.

use rayon::prelude::*;

use crate::design::{Centering, Design};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelKind {
    #[default]
    Epanechnikov,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec<T> {
    pub kind: KernelKind,
    pub bandwidth: T,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn epanechnikov(bandwidth: T) -> Result<Self> {
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(Error::Precondition(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { kind: KernelKind::Epanechnikov, bandwidth })
    }

    /// `K(t) = 3(1 − t²)/4` on `[−1, 1]`.
    pub fn profile(&self, t: T) -> T {
        match self.kind {
            KernelKind::Epanechnikov => {
                if t.abs() < T::one() {
                    T::of(0.75) * (T::one() - t * t)
                } else {
                    T::zero()
                }
            }
        }
    }

    /// `K_h(u − a) = K((u − a)/h)/h`.
    pub fn weight(&self, u: T, a: T) -> T {
        self.profile((u - a) / self.bandwidth) / self.bandwidth
    }
}

pub fn kernel_weight<T: Scalar>(spec: &KernelSpec<T>, u: T, a: T) -> T {
    spec.weight(u, a)
}

/// Local polynomial degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Degree {
    Constant,
    #[default]
    Linear,
}

impl Degree {
    pub fn dim(self, p: usize) -> usize {
        match self {
            Degree::Constant => p,
            Degree::Linear => 2 * p,
        }
    }
}

/// Writes `V*(u, a)` into `out`.
pub fn expand_into<T: Scalar>(v: &[T], u: T, a: T, degree: Degree, out: &mut Vec<T>) {
    out.clear();
    out.extend_from_slice(v);
    if degree == Degree::Linear {
        let d = u - a;
        out.extend(v.iter().map(|&x| d * x));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub s0: T,
    pub s1: Vec<T>,
    pub s2: Matrix<T>,
}

/// `S^(q) = Σ w [V*]^{⊗q} exp(φ′V*)` over a risk set given as
/// `(covariates, weight)` pairs.
pub fn s_moments<'v, T: Scalar>(
    phi: &[T],
    u: T,
    a: T,
    degree: Degree,
    risk: impl IntoIterator<Item = (&'v [T], T)>,
) -> Result<Moments<T>> {
    let q = phi.len();
    let mut s0 = T::zero();
    let mut s1 = vec![T::zero(); q];
    let mut s2 = Matrix::zeros(q, q);
    let mut x = Vec::with_capacity(q);
    for (v, w) in risk {
        expand_into(v, u, a, degree, &mut x);
        if x.len() != q {
            return Err(Error::Precondition(format!("φ has length {q} but V* has {}", x.len())));
        }
        let r = w * dot(phi, &x).exp();
        s0 = s0 + r;
        for (s, &xi) in s1.iter_mut().zip(&x) {
            *s = *s + r * xi;
        }
        s2.add_outer(r, &x, &x);
    }
    if !(s0 > T::zero()) {
        return Err(Error::EmptyRiskSet { age: u.as_f64() });
    }
    Ok(Moments { s0, s1, s2 })
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Event weighting of an estimating equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting<T> {
    /// Kernel-weighted local polynomial fit centred at `a`.
    Local { a: T, kernel: KernelSpec<T>, degree: Degree },
    /// Unit weight for events with `lo ≤ u ≤ hi`, constant coefficients.
    Flat { lo: T, hi: T },
}

impl<T: Scalar> Weighting<T> {
    pub fn dim(&self, p: usize) -> usize {
        match self {
            Weighting::Local { degree, .. } => degree.dim(p),
            Weighting::Flat { .. } => p,
        }
    }

    fn center(&self) -> T {
        match *self {
            Weighting::Local { a, .. } => a,
            Weighting::Flat { lo, hi } => (lo + hi) * T::of(0.5),
        }
    }

    fn degree(&self) -> Degree {
        match *self {
            Weighting::Local { degree, .. } => degree,
            Weighting::Flat { .. } => Degree::Constant,
        }
    }

    fn range(&self) -> (T, T) {
        match *self {
            Weighting::Local { a, kernel, .. } => (a - kernel.bandwidth, a + kernel.bandwidth),
            Weighting::Flat { lo, hi } => (lo, hi),
        }
    }

    /// Event weight `K_h(u − a)` (or 1 inside the flat range).
    pub fn event_weight(&self, u: T) -> T {
        match *self {
            Weighting::Local { a, kernel, .. } => kernel.weight(u, a),
            Weighting::Flat { lo, hi } => {
                if lo <= u && u <= hi {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Estimating function evaluated at one `φ`.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    /// `U(φ)`.
    pub score: Vec<T>,
    /// `Π̂(φ) = −∂U/∂φ`.
    pub info: Matrix<T>,
    /// `Π̂` with squared kernel weights, for the model-based variance.
    pub info_sq: Matrix<T>,
    /// Per-unit contributions `Q_i` (without the √h factor), for units
    /// with at least one weighted event.
    pub unit_scores: Vec<(usize, Vec<T>)>,
    pub n_events_used: usize,
}

/// One estimating equation: a design plus an event weighting.
#[derive(Debug, Clone, Copy)]
pub struct Equation<'a, T> {
    pub design: &'a Design<T>,
    pub weighting: Weighting<T>,
}

impl<'a, T: Scalar> Equation<'a, T> {
    pub fn new(design: &'a Design<T>, weighting: Weighting<T>) -> Self {
        Self { design, weighting }
    }

    pub fn dim(&self) -> usize {
        self.weighting.dim(self.design.p())
    }

    pub fn score(&self, phi: &[T]) -> Result<Vec<T>> {
        Ok(self.evaluate(phi, false)?.score)
    }

    pub fn evaluate(&self, phi: &[T], per_unit: bool) -> Result<Evaluation<T>> {
        let q = self.dim();
        if phi.len() != q {
            return Err(Error::Precondition(format!("φ has length {} but the equation has {q}", phi.len())));
        }
        let d = self.design;
        let a = self.weighting.center();
        let degree = self.weighting.degree();
        let (lo, hi) = self.weighting.range();
        let mut score = vec![T::zero(); q];
        let mut info = Matrix::zeros(q, q);
        let mut info_sq = Matrix::zeros(q, q);
        let mut unit_scores: Vec<(usize, Vec<T>)> = Vec::new();
        let mut used = 0;

        let mut x = Vec::with_capacity(q);
        let mut xe = Vec::with_capacity(q);
        let mut etas: Vec<T> = Vec::new();
        let mut s1 = vec![T::zero(); q];
        let mut s2 = Matrix::zeros(q, q);
        let mut resid = vec![T::zero(); q];
        for e in d.events_between(lo, hi) {
            let ev = &d.events()[e];
            let kw = self.weighting.event_weight(ev.age);
            if !(kw > T::zero()) {
                continue;
            }
            let w = kw * ev.weight;
            let row = d.risk_row(e);
            // exp(η − max η) keeps ratios exact and avoids overflow
            etas.clear();
            for &(prof, _) in row {
                expand_into(&d.profiles()[prof], ev.age, a, degree, &mut x);
                etas.push(dot(phi, &x));
            }
            let shift = etas.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut s0 = T::zero();
            s1.iter_mut().for_each(|v| *v = T::zero());
            s2.scale(T::zero());
            for (&(prof, rw), &eta) in row.iter().zip(&etas) {
                expand_into(&d.profiles()[prof], ev.age, a, degree, &mut x);
                let r = rw * (eta - shift).exp();
                s0 = s0 + r;
                for (s, &xi) in s1.iter_mut().zip(&x) {
                    *s = *s + r * xi;
                }
                s2.add_outer(r, &x, &x);
            }
            if !(s0 > T::zero()) {
                return Err(match d.centering() {
                    Centering::Cohort => Error::EmptyRiskSet { age: ev.age.as_f64() },
                    Centering::Population => Error::EmptyPopulation { age: ev.age.as_f64() },
                });
            }
            used += 1;
            expand_into(&d.profiles()[ev.profile], ev.age, a, degree, &mut xe);
            let inv = T::one() / s0;
            for i in 0..q {
                let vbar = s1[i] * inv;
                resid[i] = xe[i] - vbar;
                score[i] = score[i] + w * resid[i];
            }
            // S2/S0 − V̄V̄ᵀ
            let mut cov = s2.clone();
            cov.scale(inv);
            let vbar: Vec<T> = s1.iter().map(|&s| s * inv).collect();
            cov.add_outer(-T::one(), &vbar, &vbar);
            info.add_scaled(w, &cov);
            info_sq.add_scaled(w * kw, &cov);
            if per_unit {
                match unit_scores.last_mut() {
                    Some((u, acc)) if *u == ev.unit => {
                        for (s, &r) in acc.iter_mut().zip(&resid) {
                            *s = *s + w * r;
                        }
                    }
                    _ => unit_scores.push((ev.unit, resid.iter().map(|&r| w * r).collect())),
                }
            }
        }
        if used == 0 {
            return Err(Error::EmptyWindow { age: a.as_f64() });
        }
        if per_unit {
            unit_scores = merge_units(unit_scores);
        }
        Ok(Evaluation { score, info, info_sq, unit_scores, n_events_used: used })
    }
}

/// Events are sorted by age, so one unit may appear in several runs.
fn merge_units<T: Scalar>(mut parts: Vec<(usize, Vec<T>)>) -> Vec<(usize, Vec<T>)> {
    parts.sort_by_key(|(u, _)| *u);
    let mut out: Vec<(usize, Vec<T>)> = Vec::with_capacity(parts.len());
    for (u, v) in parts {
        match out.last_mut() {
            Some((lu, acc)) if *lu == u => acc.iter_mut().zip(&v).for_each(|(a, b)| *a = *a + *b),
            _ => out.push((u, v)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    /// Convergence when `‖U‖∞ < tol`.
    pub tol: T,
    pub max_iters: usize,
    pub max_halvings: usize,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self { tol: T::of(1e-8), max_iters: 50, max_halvings: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    pub phi: Vec<T>,
    pub iters: usize,
    pub converged: bool,
    pub score_norm: T,
}

fn sup_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| if x.is_nan() { T::nan() } else { m.max(x.abs()) })
}

/// Newton–Raphson on `U(φ) = 0` with Jacobian `−Π̂` and step halving
/// whenever `‖U‖∞` fails to decrease.
pub fn newton<T: Scalar>(eq: &Equation<'_, T>, init: &[T], cfg: &SolverConfig<T>) -> Result<Solution<T>> {
    let age = eq.weighting.center().as_f64();
    let mut phi = init.to_vec();
    let mut ev = eq.evaluate(&phi, false)?;
    let mut norm = sup_norm(&ev.score);
    let mut iters = 0;
    while iters < cfg.max_iters && !(norm < cfg.tol) {
        let lu = ev.info.lu().ok_or(Error::Singular { age })?;
        let step = lu.solve(&ev.score);
        iters += 1;
        let mut t = T::one();
        let mut halvings = 0;
        loop {
            let cand: Vec<T> = phi.iter().zip(&step).map(|(&p, &s)| p + t * s).collect();
            let cand_ev = eq.evaluate(&cand, false);
            let cand_norm = cand_ev.as_ref().map(|e| sup_norm(&e.score)).unwrap_or(T::nan());
            if cand_norm < norm || halvings >= cfg.max_halvings {
                if let Ok(ce) = cand_ev {
                    if cand_norm.is_finite() {
                        phi = cand;
                        ev = ce;
                        norm = cand_norm;
                    }
                }
                break;
            }
            t = t * T::of(0.5);
            halvings += 1;
        }
        if halvings >= cfg.max_halvings && !(norm < cfg.tol) {
            break;
        }
    }
    Ok(Solution { phi, iters, converged: norm < cfg.tol, score_norm: norm })
}

/// Sandwich and model-based covariance of the full `φ̂`.
#[derive(Debug, Clone)]
pub struct Covariance<T> {
    /// `Π̂⁻¹ Σ̂ Π̂⁻¹` with `Σ̂ = Σ_i (Q_i − Q̄)^{⊗2}` over all units.
    pub sandwich: Matrix<T>,
    /// `Π̂⁻¹ Π̂₂ Π̂⁻¹`, `Π̂₂` built with squared kernel weights; `Π̂⁻¹` for flat weights.
    pub model: Matrix<T>,
    pub info: Matrix<T>,
}

pub fn covariance<T: Scalar>(eq: &Equation<'_, T>, phi: &[T]) -> Result<Covariance<T>> {
    let age = eq.weighting.center().as_f64();
    let ev = eq.evaluate(phi, true)?;
    let q = phi.len();
    let inv = ev.info.inverse().ok_or(Error::Singular { age })?;
    let n = eq.design.n_units();
    let nn = T::of_usize(n.max(1));
    let mut qbar = vec![T::zero(); q];
    for (_, qi) in &ev.unit_scores {
        qbar.iter_mut().zip(qi).for_each(|(m, &x)| *m = *m + x);
    }
    qbar.iter_mut().for_each(|m| *m = *m / nn);
    let mut sigma = Matrix::zeros(q, q);
    let mut c = vec![T::zero(); q];
    for (_, qi) in &ev.unit_scores {
        for i in 0..q {
            c[i] = qi[i] - qbar[i];
        }
        sigma.add_outer(T::one(), &c, &c);
    }
    let zero_units = n.saturating_sub(ev.unit_scores.len());
    sigma.add_outer(T::of_usize(zero_units), &qbar, &qbar);
    let mut sandwich = inv.matmul(&sigma).matmul(&inv);
    sandwich.symmetrize();
    let mut model = inv.matmul(&ev.info_sq).matmul(&inv);
    model.symmetrize();
    Ok(Covariance { sandwich, model, info: ev.info })
}

/// Pointwise fit at one age.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit<T> {
    pub a: T,
    pub theta: Vec<T>,
    /// Empty for local-constant fits.
    pub theta_dot: Vec<T>,
    /// Sandwich covariance of `θ̂(a)`.
    pub cov: Matrix<T>,
    /// Model-based covariance of `θ̂(a)`.
    pub cov_model: Matrix<T>,
    pub newton_iters: usize,
    pub converged: bool,
    pub score_norm: T,
    /// `tr[(Π̂⁻¹)_θθ Π̂_θθ]`, the smoother's trace contribution at `a`.
    pub hat_trace: T,
}

impl<T: Scalar> LocalFit<T> {
    pub fn stderr(&self) -> Vec<T> {
        self.cov.diag().into_iter().map(|v| v.max(T::zero()).sqrt()).collect()
    }

    pub fn stderr_model(&self) -> Vec<T> {
        self.cov_model.diag().into_iter().map(|v| v.max(T::zero()).sqrt()).collect()
    }
}

fn leading_block<T: Scalar>(m: &Matrix<T>, p: usize) -> Matrix<T> {
    let idx: Vec<usize> = (0..p).collect();
    m.select(&idx, &idx)
}

/// Solves the local equation at `a`, starting from `init` (zeros when `None`).
pub fn solve_local<T: Scalar>(
    a: T,
    design: &Design<T>,
    kernel: &KernelSpec<T>,
    degree: Degree,
    cfg: &SolverConfig<T>,
    init: Option<&[T]>,
) -> Result<LocalFit<T>> {
    let eq = Equation::new(design, Weighting::Local { a, kernel: *kernel, degree });
    let p = design.p();
    let zeros = vec![T::zero(); eq.dim()];
    let sol = newton(&eq, init.unwrap_or(&zeros), cfg)?;
    let cov = covariance(&eq, &sol.phi)?;
    let inv = cov.info.inverse().ok_or(Error::Singular { age: a.as_f64() })?;
    let hat_trace = leading_block(&inv, p).matmul(&leading_block(&cov.info, p)).trace();
    Ok(LocalFit {
        a,
        theta: sol.phi[..p].to_vec(),
        theta_dot: sol.phi[p..].to_vec(),
        cov: leading_block(&cov.sandwich, p),
        cov_model: leading_block(&cov.model, p),
        newton_iters: sol.iters,
        converged: sol.converged,
        score_norm: sol.score_norm,
        hat_trace,
    })
}

/// Sub-matrix of the sandwich for `θ̂(a)` at a converged fit.
pub fn sandwich_variance<T: Scalar>(
    fit: &LocalFit<T>,
    design: &Design<T>,
    kernel: &KernelSpec<T>,
    degree: Degree,
) -> Result<Matrix<T>> {
    if !fit.converged {
        return Err(Error::Precondition(format!("fit at age {} did not converge", fit.a)));
    }
    let phi: Vec<T> = fit.theta.iter().chain(&fit.theta_dot).copied().collect();
    let eq = Equation::new(design, Weighting::Local { a: fit.a, kernel: *kernel, degree });
    Ok(leading_block(&covariance(&eq, &phi)?.sandwich, design.p()))
}

/// Constant-coefficient fit with flat weighting on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantFit<T> {
    pub theta: Vec<T>,
    pub cov: Matrix<T>,
    pub cov_model: Matrix<T>,
    pub newton_iters: usize,
    pub converged: bool,
    pub score_norm: T,
}

impl<T: Scalar> ConstantFit<T> {
    pub fn stderr(&self) -> Vec<T> {
        self.cov.diag().into_iter().map(|v| v.max(T::zero()).sqrt()).collect()
    }

    pub fn stderr_model(&self) -> Vec<T> {
        self.cov_model.diag().into_iter().map(|v| v.max(T::zero()).sqrt()).collect()
    }
}

pub fn solve_constant<T: Scalar>(
    design: &Design<T>,
    lo: T,
    hi: T,
    cfg: &SolverConfig<T>,
    init: Option<&[T]>,
) -> Result<ConstantFit<T>> {
    let eq = Equation::new(design, Weighting::Flat { lo, hi });
    let zeros = vec![T::zero(); eq.dim()];
    let sol = newton(&eq, init.unwrap_or(&zeros), cfg)?;
    let cov = covariance(&eq, &sol.phi)?;
    Ok(ConstantFit {
        theta: sol.phi,
        cov: cov.sandwich,
        cov_model: cov.model,
        newton_iters: sol.iters,
        converged: sol.converged,
        score_norm: sol.score_norm,
    })
}

/// Pointwise fits over an age grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FitCurve<T> {
    pub grid: Vec<T>,
    /// Aligned with `grid`; `None` where the fit failed.
    pub fits: Vec<Option<LocalFit<T>>>,
    pub failures: Vec<(T, String)>,
    pub tau: (T, T),
    pub degree: Degree,
    pub bandwidth: T,
}

/// Confidence band row: age, estimate, stderr, lower, upper.
pub type BandRow<T> = (T, T, T, T, T);

impl<T: Scalar> FitCurve<T> {
    pub fn p(&self) -> usize {
        self.fits.iter().flatten().map(|f| f.theta.len()).next().unwrap_or(0)
    }

    pub fn all_converged(&self) -> bool {
        self.failures.is_empty() && self.fits.iter().all(|f| f.as_ref().is_some_and(|f| f.converged))
    }

    pub fn n_failed(&self) -> usize {
        self.fits.iter().filter(|f| !f.as_ref().is_some_and(|f| f.converged)).count()
    }

    /// Pointwise `θ̂ ± z·se` bands for coefficient `j`.
    pub fn band(&self, j: usize, z: T) -> Vec<BandRow<T>> {
        self.fits
            .iter()
            .flatten()
            .map(|f| {
                let se = f.stderr()[j];
                (f.a, f.theta[j], se, f.theta[j] - z * se, f.theta[j] + z * se)
            })
            .collect()
    }

    /// `θ̂(u)` by linear interpolation between successful grid fits,
    /// held constant beyond the first and last of them.
    pub fn theta_at(&self, u: T) -> Option<Vec<T>> {
        let pts: Vec<&LocalFit<T>> = self.fits.iter().flatten().collect();
        let first = pts.first()?;
        let last = pts.last()?;
        if u <= first.a {
            return Some(first.theta.clone());
        }
        if u >= last.a {
            return Some(last.theta.clone());
        }
        let k = pts.partition_point(|f| f.a <= u);
        let (l, r) = (pts[k - 1], pts[k]);
        let t = (u - l.a) / (r.a - l.a);
        Some(l.theta.iter().zip(&r.theta).map(|(&x, &y)| x + t * (y - x)).collect())
    }
}

/// Grid of ages from `lo` to `hi` with the given step; the last point is
/// clipped to `hi`.
pub fn age_grid<T: Scalar>(lo: T, hi: T, step: T) -> Result<Vec<T>> {
    if !(lo < hi) || !(step > T::zero()) {
        return Err(Error::Config(format!("bad grid [{lo}, {hi}] step {step}")));
    }
    let n = ((hi - lo) / step + T::of(1e-9)).floor().to_usize().unwrap_or(0);
    let mut g: Vec<T> = (0..=n).map(|i| lo + T::of_usize(i) * step).collect();
    if let Some(last) = g.last_mut() {
        if (*last - hi).abs() < step * T::of(1e-6) {
            *last = hi;
        }
    }
    if g.last().is_some_and(|&l| l < hi) {
        g.push(hi);
    }
    Ok(g)
}

/// Ages per warm-start chunk; fixed so results do not depend on the thread count.
const CHUNK: usize = 8;

/// Empirical check that some unit enters before `τ_L` and some leaves after `τ_R`.
pub fn check_boundary_coverage<T: Scalar>(design: &Design<T>, tau: (T, T)) -> Result<()> {
    let (lo, hi) = design.span();
    if !(lo < tau.0) || !(hi > tau.1) {
        return Err(Error::Precondition(format!(
            "risk windows span ({lo}, {hi}] and do not cover [τ_L, τ_R] = [{}, {}] strictly",
            tau.0, tau.1
        )));
    }
    Ok(())
}

/// Local fits at every grid age. Grid chunks run in parallel; within a
/// chunk each solve warm-starts from its left neighbour.
pub fn fit_curve<T: Scalar>(
    grid: &[T],
    design: &Design<T>,
    kernel: &KernelSpec<T>,
    degree: Degree,
    cfg: &SolverConfig<T>,
    tau: (T, T),
) -> Result<FitCurve<T>> {
    if grid.is_empty() {
        return Err(Error::Precondition("empty age grid".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Precondition("age grid must be strictly increasing".into()));
    }
    if !(tau.0 < tau.1) || grid.iter().any(|&a| a < tau.0 || a > tau.1) {
        return Err(Error::Precondition(format!("grid must lie in [τ_L, τ_R] = [{}, {}]", tau.0, tau.1)));
    }
    check_boundary_coverage(design, tau)?;
    let chunks: Vec<Vec<Result<LocalFit<T>>>> = grid
        .par_chunks(CHUNK)
        .map(|ages| {
            let mut prev: Option<Vec<T>> = None;
            ages.iter()
                .map(|&a| {
                    let r = solve_local(a, design, kernel, degree, cfg, prev.as_deref());
                    prev = match &r {
                        Ok(f) if f.converged => Some(f.theta.iter().chain(&f.theta_dot).copied().collect()),
                        _ => None,
                    };
                    r
                })
                .collect()
        })
        .collect();
    let mut fits = Vec::with_capacity(grid.len());
    let mut failures = Vec::new();
    for (r, &a) in chunks.into_iter().flatten().zip(grid) {
        match r {
            Ok(f) => {
                if !f.converged {
                    failures.push((a, format!("no convergence after {} iterations, ‖U‖∞ = {}", f.newton_iters, f.score_norm)));
                }
                fits.push(Some(f));
            }
            Err(e) => {
                failures.push((a, e.to_string()));
                fits.push(None);
            }
        }
    }
    Ok(FitCurve { grid: grid.to_vec(), fits, failures, tau, degree, bandwidth: kernel.bandwidth })
}
