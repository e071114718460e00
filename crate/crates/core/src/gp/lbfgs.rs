//! Limited-memory BFGS with simple box constraints.
//!
//! Variables pinned at a bound with the gradient pointing outward are held
//! fixed for the step; trial points are projected back into the box and
//! accepted on an Armijo decrease along the projected path.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when the projected gradient's max-norm falls below this.
    pub gtol: f64,
    /// Stop when the relative decrease of one step falls below this.
    pub ftol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            max_iter: 200,
            memory: 8,
            gtol: 1e-6,
            ftol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient with components zeroed where a bound blocks descent.
fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &h))| {
            if (xi <= l && gi > 0.0) || (xi >= h && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// Minimize `f` over the box `[lo, hi]` starting from `x0`.
///
/// `f` returns the value and gradient; a non-finite value makes the line
/// search back off. If the starting value is non-finite the result carries
/// `f = inf` and zero iterations.
pub fn minimize<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], cfg: &LbfgsConfig) -> LbfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, mut gx) = f(&x);
    if !fx.is_finite() {
        return LbfgsResult {
            x,
            f: f64::INFINITY,
            iterations: 0,
            converged: false,
        };
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = false;
    let mut iter = 0;
    while iter < cfg.max_iter {
        let pg = projected_gradient(&x, &gx, lo, hi);
        if pg.iter().all(|v| v.abs() < cfg.gtol) {
            converged = true;
            break;
        }
        iter += 1;

        let free: Vec<bool> = pg.iter().map(|v| *v != 0.0).collect();
        let mut d = two_loop(&pg, &hist);
        for i in 0..n {
            if !free[i] {
                d[i] = 0.0;
            }
        }
        if dot(&d, &pg) >= 0.0 {
            d = pg.iter().map(|v| -v).collect();
            hist.clear();
        }
        let mut t = if hist.is_empty() {
            let norm = pg.iter().map(|v| v.abs()).fold(0.0, f64::max);
            (1.0 / norm).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..40 {
            let mut xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            project(&mut xt, lo, hi);
            let step: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
            if step.iter().all(|s| *s == 0.0) {
                break;
            }
            let (ft, gt) = f(&xt);
            if ft.is_finite() && ft <= fx + 1e-4 * dot(&gx, &step) {
                accepted = Some((xt, ft, gt, step));
                break;
            }
            t *= 0.5;
        }
        let Some((xt, ft, gt, step)) = accepted else {
            if hist.is_empty() {
                break;
            }
            hist.clear();
            continue;
        };
        let y: Vec<f64> = gt.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&step, &y);
        if sy > 1e-12 * dot(&step, &step).sqrt() * dot(&y, &y).sqrt() {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((step, y, 1.0 / sy));
        }
        let decrease = fx - ft;
        x = xt;
        fx = ft;
        gx = gt;
        if decrease <= cfg.ftol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    LbfgsResult {
        x,
        f: fx,
        iterations: iter,
        converged,
    }
}

/// `-H g` from the stored curvature pairs.
fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}
