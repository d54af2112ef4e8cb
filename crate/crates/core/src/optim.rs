//! Unconstrained minimisers: Nelder-Mead simplex and BFGS with Armijo
//! backtracking. Objectives report failure as a non-finite value, which
//! both methods treat as `+inf`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// ... and the simplex diameter below this.
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evals: 2000,
            f_tol: 1e-8,
            x_tol: 1e-6,
        }
    }
}

fn clean(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    opts: &NelderMeadOptions,
) -> OptimOutcome {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        clean(f(x))
    };
    if n == 0 {
        let v = eval(x0, &mut evals);
        return OptimOutcome {
            x: vec![],
            f: v,
            evaluations: evals,
            iterations: 0,
            converged: true,
        };
    }
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for k in 0..n {
        let mut v = x0.to_vec();
        v[k] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x, &mut evals)).collect();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    while evals < opts.max_evals {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread.abs() <= opts.f_tol && diameter <= opts.x_tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-alpha);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let xe = along(-gamma);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(-rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let v: Vec<f64> = simplex[0]
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, x)| b + sigma * (x - b))
                        .collect();
                    values[i] = eval(&v, &mut evals);
                    simplex[i] = v;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    OptimOutcome {
        x: simplex[best].clone(),
        f: values[best],
        evaluations: evals,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    /// Infinity-norm gradient tolerance.
    pub g_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 200,
            f_tol: 1e-8,
            x_tol: 1e-6,
            g_tol: 1e-4,
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimise `fg(x) -> (f, grad f)`.
pub fn bfgs<F: FnMut(&[f64]) -> (f64, Vec<f64>)>(mut fg: F, x0: &[f64], opts: &BfgsOptions) -> OptimOutcome {
    let n = x0.len();
    let mut evals = 1;
    let mut x = x0.to_vec();
    let (mut fx, mut g) = fg(&x);
    fx = clean(fx);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return OptimOutcome {
            x,
            f: fx,
            evaluations: evals,
            iterations: 0,
            converged: false,
        };
    }
    // inverse Hessian approximation, row-major
    let mut h = identity(n);
    let mut converged = inf_norm(&g) <= opts.g_tol * 1e-2;
    let mut iterations = 0;
    // a stall with a gradient above tolerance earns one restart from a fresh
    // Hessian approximation
    let mut restarted = false;
    let mut fresh = true;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>()).collect();
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 || !slope.is_finite() {
            h = identity(n);
            d = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        // keep the first trial step moderate on the unconstrained scale
        let dn = inf_norm(&d);
        let mut t = if dn > 2.0 { 2.0 / dn } else { 1.0 };
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let (fnew, gnew) = fg(&xn);
            evals += 1;
            let fnew = clean(fnew);
            if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope && gnew.iter().all(|v| v.is_finite()) {
                accepted = Some((xn, fnew, gnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            // no descent along the search direction
            converged = inf_norm(&g) <= opts.g_tol;
            if !converged && !restarted {
                restarted = true;
                h = identity(n);
                fresh = true;
                continue;
            }
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let df = fx - fnew;
        let dx = inf_norm(&s);
        x = xn;
        fx = fnew;
        g = gnew;
        if inf_norm(&g) <= opts.g_tol * 1e-2 {
            converged = true;
            break;
        }
        if df.abs() < opts.f_tol && dx < opts.x_tol {
            converged = inf_norm(&g) <= opts.g_tol;
            if !converged && !restarted {
                restarted = true;
                h = identity(n);
                fresh = true;
                continue;
            }
            break;
        }
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            if fresh {
                fresh = false;
                let yy: f64 = y.iter().map(|v| v * v).sum();
                let scale = sy / yy;
                h = identity(n);
                for i in 0..n {
                    h[i * n + i] = scale;
                }
            }
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
    }
    OptimOutcome {
        x,
        f: fx,
        evaluations: evals,
        iterations,
        converged,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}
