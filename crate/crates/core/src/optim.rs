//! Bound-constrained smooth minimization.
//!
//! Projected limited-memory BFGS: the quasi-Newton direction is computed on the
//! variables that are not held at their lower bound, and an Armijo search runs
//! along the projected path.

use std::collections::VecDeque;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxConfig {
    pub max_iters: usize,
    /// Stop when the infinity norm of the projected gradient falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step lowers the value by less than this relative amount.
    pub rel_tol: f64,
    pub history: usize,
    /// Largest change of any coordinate in one iteration.
    pub max_step: f64,
}

impl Default for BoxConfig {
    fn default() -> Self {
        BoxConfig {
            max_iters: 200,
            grad_tol: 1e-8,
            rel_tol: 1e-14,
            history: 10,
            max_step: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub projected_grad_norm: f64,
    /// True when a stopping tolerance was met before the iteration cap.
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn is_finite(value: f64, grad: &[f64]) -> bool {
    value.is_finite() && grad.iter().all(|g| g.is_finite())
}

/// Marks variables resting on their bound with a gradient pushing outward.
fn active_set(x: &[f64], g: &[f64], lower: &[f64]) -> Vec<bool> {
    x.iter()
        .zip(g)
        .zip(lower)
        .map(|((&xi, &gi), &li)| xi <= li && gi > 0.0)
        .collect()
}

fn projected_grad_norm(x: &[f64], g: &[f64], lower: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower)
        .map(|((&xi, &gi), &li)| if xi <= li && gi > 0.0 { 0.0 } else { gi.abs() })
        .fold(0.0, f64::max)
}

/// Minimizes `objective` over `{x : x >= lower}` starting at `init`.
///
/// `objective(x, grad)` returns the value and writes the gradient. A non-finite
/// value or gradient during the search is treated as a rejected step.
pub fn box_minimize<F>(
    mut objective: F,
    init: &[f64],
    lower: &[f64],
    cfg: &BoxConfig,
) -> Result<BoxResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = init.len();
    check_dim(n, lower.len())?;
    if init.iter().zip(lower).any(|(x, l)| !(x >= l) || x.is_nan()) {
        return Err(Error::invalid("initial point violates the lower bounds"));
    }
    let mut x = init.to_vec();
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    if !is_finite(f, &g) {
        return Err(Error::NonFinite("objective at the initial point"));
    }
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.history);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut pg = projected_grad_norm(&x, &g, lower);
    let mut iterations = 0;
    let mut converged = pg <= cfg.grad_tol;

    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        let active = active_set(&x, &g, lower);
        let mut accepted = false;
        for attempt in 0..2 {
            if attempt == 1 {
                if memory.is_empty() {
                    break;
                }
                memory.clear();
            }
            two_loop(&g, &active, &memory, &mut dir);
            let mut slope = dot(&dir, &g);
            if slope >= 0.0 {
                memory.clear();
                two_loop(&g, &active, &memory, &mut dir);
                slope = dot(&dir, &g);
                if slope >= 0.0 {
                    break;
                }
            }
            let longest = dir.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let mut t = if memory.is_empty() {
                (1.0 / longest).min(1.0)
            } else {
                1.0
            };
            t = t.min(cfg.max_step / longest);
            for _ in 0..MAX_BACKTRACKS {
                for i in 0..n {
                    x_new[i] = (x[i] + t * dir[i]).max(lower[i]);
                }
                let f_try = objective(&x_new, &mut g_new);
                let decrease: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
                if is_finite(f_try, &g_new) && f_try <= f + ARMIJO * decrease && f_try <= f {
                    let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                    let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
                    let sy = dot(&s, &y);
                    if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
                        if memory.len() == cfg.history {
                            memory.pop_front();
                        }
                        memory.push_back((s, y, 1.0 / sy));
                    }
                    let f_old = f;
                    std::mem::swap(&mut x, &mut x_new);
                    std::mem::swap(&mut g, &mut g_new);
                    f = f_try;
                    pg = projected_grad_norm(&x, &g, lower);
                    converged = pg <= cfg.grad_tol
                        || f == 0.0
                        || f_old - f <= cfg.rel_tol * f_old.abs().max(f.abs());
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    Ok(BoxResult {
        x,
        value: f,
        iterations,
        projected_grad_norm: pg,
        converged,
    })
}

/// Two-loop recursion restricted to the free variables; writes `-H g` into `dir`.
fn two_loop(
    g: &[f64],
    active: &[bool],
    memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    dir: &mut [f64],
) {
    let mask = |v: &mut [f64]| {
        for (vi, &a) in v.iter_mut().zip(active) {
            if a {
                *vi = 0.0;
            }
        }
    };
    let mut q: Vec<f64> = g.to_vec();
    mask(&mut q);
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    mask(&mut q);
    for (d, qi) in dir.iter_mut().zip(&q) {
        *d = -qi;
    }
}
