//! Brute-force reference implementations shared by the oracle tests and
//! the acceptance harness: direct sums over units and segments with no
//! profile aggregation and no exponent shift, dense algebra from nalgebra.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recurrent_core::design::{Mark, Segment, Unit};
use recurrent_core::linalg::Matrix;

pub fn random_units(seed: u64, max_units: usize) -> (Vec<Unit<f64>>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.random_range(1..=3);
    let n = rng.random_range(1..=max_units);
    let mut units = Vec::with_capacity(n);
    for _ in 0..n {
        let copies = if rng.random_bool(0.3) { rng.random_range(2..=3) } else { 1 };
        let w = 1.0 / copies as f64;
        let mut unit = Unit::default();
        for _ in 0..copies {
            let lo: f64 = rng.random_range(0.0..8.0);
            let mut cuts = vec![lo, lo + rng.random_range(1.0..10.0)];
            // time-varying covariates: a second piece
            if rng.random_bool(0.3) {
                cuts.push(cuts[1] + rng.random_range(0.5..4.0));
            }
            for piece in cuts.windows(2) {
                let v: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
                let k = rng.random_range(0..=3);
                for _ in 0..k {
                    let age = rng.random_range(piece[0]..piece[1]);
                    if age > piece[0] {
                        unit.events.push(Mark { age, v: v.clone(), weight: w });
                    }
                }
                unit.segments.push(Segment { lo: piece[0], hi: piece[1], v, weight: w });
            }
        }
        units.push(unit);
    }
    (units, p)
}

pub fn epanechnikov(t: f64, h: f64) -> f64 {
    let x = t / h;
    if x.abs() < 1.0 {
        0.75 * (1.0 - x * x) / h
    } else {
        0.0
    }
}

pub fn expand(v: &[f64], u: f64, a: f64, linear: bool) -> Vec<f64> {
    let mut x = v.to_vec();
    if linear {
        x.extend(v.iter().map(|&c| (u - a) * c));
    }
    x
}

pub struct Reference {
    pub score: Vec<f64>,
    pub info: DMatrix<f64>,
    pub info_sq: DMatrix<f64>,
    /// One entry per unit, zero for units without weighted events.
    pub q: Vec<Vec<f64>>,
}

/// Direct sums over units and segments, no profile aggregation, no
/// exponent shift.
pub fn reference(units: &[Unit<f64>], phi: &[f64], weight: &dyn Fn(f64) -> f64, a: f64, linear: bool) -> Option<Reference> {
    let d = phi.len();
    let mut score = vec![0.0; d];
    let mut info = DMatrix::zeros(d, d);
    let mut info_sq = DMatrix::zeros(d, d);
    let mut q = vec![vec![0.0; d]; units.len()];
    let mut used = 0;
    for (i, unit) in units.iter().enumerate() {
        for ev in &unit.events {
            let k = weight(ev.age);
            if k <= 0.0 {
                continue;
            }
            let u = ev.age;
            let mut s0 = 0.0;
            let mut s1 = vec![0.0; d];
            let mut s2 = DMatrix::<f64>::zeros(d, d);
            for other in units {
                for s in &other.segments {
                    if s.lo < u && u <= s.hi {
                        let x = expand(&s.v, u, a, linear);
                        let r = s.weight * phi.iter().zip(&x).map(|(p, x)| p * x).sum::<f64>().exp();
                        s0 += r;
                        for j in 0..d {
                            s1[j] += r * x[j];
                            for l in 0..d {
                                s2[(j, l)] += r * x[j] * x[l];
                            }
                        }
                    }
                }
            }
            if s0 <= 0.0 {
                return None;
            }
            used += 1;
            let w = k * ev.weight;
            let xe = expand(&ev.v, u, a, linear);
            let vbar: Vec<f64> = s1.iter().map(|s| s / s0).collect();
            for j in 0..d {
                score[j] += w * (xe[j] - vbar[j]);
                q[i][j] += w * (xe[j] - vbar[j]);
                for l in 0..d {
                    let c = s2[(j, l)] / s0 - vbar[j] * vbar[l];
                    info[(j, l)] += w * c;
                    info_sq[(j, l)] += w * k * c;
                }
            }
        }
    }
    (used > 0).then_some(Reference { score, info, info_sq, q })
}

pub fn close(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol * (1.0 + y.abs())
}

pub fn to_dm(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

pub fn instance(seed: u64) -> (Vec<Unit<f64>>, usize, Vec<f64>, f64, f64, bool) {
    let (units, p) = random_units(seed, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let linear = rng.random_bool(0.7);
    let d = if linear { 2 * p } else { p };
    let phi: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let a = rng.random_range(1.0..15.0);
    let h = rng.random_range(1.0..4.0);
    (units, p, phi, a, h, linear)
}

/// Independent Andersen–Gill Newton solve on events in `[lo, hi]`.
pub fn independent_constant_fit(units: &[Unit<f64>], p: usize, lo: f64, hi: f64) -> Option<Vec<f64>> {
    let mut beta = DMatrix::<f64>::zeros(p, 1);
    let loglik = |b: &DMatrix<f64>| -> (f64, DMatrix<f64>, DMatrix<f64>) {
        let mut ll = 0.0;
        let mut g = DMatrix::zeros(p, 1);
        let mut hmat = DMatrix::zeros(p, p);
        for unit in units {
            for ev in &unit.events {
                if ev.age < lo || ev.age > hi {
                    continue;
                }
                let mut s0 = 0.0;
                let mut s1 = DMatrix::zeros(p, 1);
                let mut s2 = DMatrix::zeros(p, p);
                for other in units {
                    for s in &other.segments {
                        if s.lo < ev.age && ev.age <= s.hi {
                            let x = DMatrix::from_column_slice(p, 1, &s.v);
                            let r = s.weight * (b.transpose() * &x)[(0, 0)].exp();
                            s0 += r;
                            s1 += r * &x;
                            s2 += r * &x * x.transpose();
                        }
                    }
                }
                let xe = DMatrix::from_column_slice(p, 1, &ev.v);
                ll += ev.weight * ((b.transpose() * &xe)[(0, 0)] - s0.ln());
                g += ev.weight * (&xe - &s1 / s0);
                hmat -= ev.weight * (&s2 / s0 - (&s1 * s1.transpose()) / (s0 * s0));
            }
        }
        (ll, g, hmat)
    };
    for _ in 0..200 {
        let (ll, g, hmat) = loglik(&beta);
        if g.abs().max() < 1e-11 {
            let sv = hmat.svd(false, false).singular_values;
            let ok = sv.min() > 1e-8 && sv.max() / sv.min() < 1e6;
            return ok.then(|| beta.iter().copied().collect());
        }
        let step = hmat.clone().lu().solve(&(-&g))?;
        let mut t = 1.0;
        loop {
            let cand = &beta + t * &step;
            if loglik(&cand).0 >= ll || t < 1e-8 {
                beta = cand;
                break;
            }
            t *= 0.5;
        }
    }
    None
}

