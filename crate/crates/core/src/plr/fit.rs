use nalgebra::{Matrix4, Vector4};

use super::PlrCoefficients;
use crate::error::{Error, Result};

/// Damped Gauss–Newton settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop once an accepted step lowers the SSE by less than this fraction.
    pub tol: f64,
    pub initial_damping: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 200,
            tol: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlrFit {
    pub coefficients: PlrCoefficients,
    pub sse: f64,
    pub initial_sse: f64,
    pub r2: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sse(points: &[(f64, f64)], c: &PlrCoefficients) -> f64 {
    points.iter().map(|(x, y)| (y - c.eval(*x)).powi(2)).sum()
}

/// Least-squares fit of `a·exp(-b·lux) + c·lux + d` to `(lux, pupil)`
/// points, starting from `init`.
///
/// Levenberg–Marquardt style damping: the normal matrix diagonal is scaled
/// by `1 + λ`, λ grows ×10 on a rejected step and shrinks ÷10 on an
/// accepted one. `a` and `b` are projected onto `[0, ∞)`. The returned SSE
/// never exceeds the SSE at `init`.
pub fn fit_plr_curve(points: &[(f64, f64)], init: PlrCoefficients, opts: FitOptions) -> Result<PlrFit> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) || !init.is_finite() {
        return Err(Error::InvalidInput("non-finite point or initial coefficient".into()));
    }
    if init.a < 0.0 || init.b < 0.0 {
        return Err(Error::InvalidInput(format!("initial a and b must be >= 0: {init:?}")));
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if points.len() < 4 || distinct.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need >= 4 points with >= 3 distinct lux values, got {} points / {} distinct",
            points.len(),
            distinct.len()
        )));
    }

    let mut p = init;
    let initial_sse = sse(points, &p);
    if !initial_sse.is_finite() {
        return Err(Error::FitFailure("SSE at the initial coefficients is not finite".into()));
    }
    let mut cur = initial_sse;
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        if cur <= f64::MIN_POSITIVE {
            converged = true;
            break;
        }
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for &(x, y) in points {
            let e = (-p.b * x).exp();
            let j = Vector4::new(e, -p.a * x * e, x, 1.0);
            let r = y - p.eval(x);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut accepted = false;
        while lambda <= 1e16 {
            let mut a = jtj;
            for i in 0..4 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = PlrCoefficients::new(p.a + step[0], p.b + step[1], p.c + step[2], p.d + step[3]);
            trial.a = trial.a.max(0.0);
            trial.b = trial.b.max(0.0);
            let s = sse(points, &trial);
            if s.is_finite() && s < cur {
                let drop = cur - s;
                p = trial;
                let before = cur;
                cur = s;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if drop <= opts.tol * before {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no direction lowers the SSE any further
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !cur.is_finite() {
        return Err(Error::FitFailure("SSE diverged".into()));
    }

    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let sst: f64 = points.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let r2 = if sst > 0.0 {
        1.0 - cur / sst
    } else if cur <= 1e-20 {
        1.0
    } else {
        0.0
    };
    Ok(PlrFit {
        coefficients: p,
        sse: cur,
        initial_sse,
        r2,
        iterations,
        converged,
    })
}
