use std::collections::VecDeque;

use crate::matrix::Matrix;

use super::Classifier;

const HISTORY: usize = 10;
const GRAD_TOL: f64 = 1e-8;

/// Multinomial logistic regression minimizing
/// `(sum_i CE_i + l2 / 2 * |W|^2) / N` (bias unpenalized) with L-BFGS and a
/// backtracking Armijo line search. Deterministic for fixed data.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    /// Row-major `C x (D + 1)`, bias last.
    coef: Vec<f64>,
    n_features: usize,
    n_classes: usize,
    iterations: usize,
}

struct Problem<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    c: usize,
    l2: f64,
}

impl Problem<'_> {
    fn stride(&self) -> usize {
        self.x.ncols() + 1
    }

    fn loss_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.x.ncols();
        let s = self.stride();
        let n = self.y.len() as f64;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut z = vec![0.0; self.c];
        for (i, &yi) in self.y.iter().enumerate() {
            let row = self.x.row(i);
            for (k, zk) in z.iter_mut().enumerate() {
                let w = &theta[k * s..k * s + d];
                *zk = w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + theta[k * s + d];
            }
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - z[yi];
            for k in 0..self.c {
                let p = (z[k] - lse).exp() - if k == yi { 1.0 } else { 0.0 };
                let g = &mut grad[k * s..(k + 1) * s];
                for (gj, xj) in g[..d].iter_mut().zip(row) {
                    *gj += p * xj;
                }
                g[d] += p;
            }
        }
        let mut reg = 0.0;
        for k in 0..self.c {
            for j in 0..d {
                let w = theta[k * s + j];
                reg += w * w;
                grad[k * s + j] += self.l2 * w;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        (loss + 0.5 * self.l2 * reg) / n
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LogisticRegression {
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, max_iter: usize, l2: f64) -> Self {
        let problem = Problem { x, y, c: n_classes, l2 };
        let dim = n_classes * problem.stride();
        let mut theta = vec![0.0; dim];
        let mut grad = vec![0.0; dim];
        let mut f = problem.loss_grad(&theta, &mut grad);
        let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(HISTORY);
        let mut iterations = 0;

        while iterations < max_iter {
            if grad.iter().all(|g| g.abs() < GRAD_TOL) {
                break;
            }
            iterations += 1;

            // two-loop recursion
            let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
            let mut alphas = Vec::with_capacity(history.len());
            for (s, yv, rho) in history.iter().rev() {
                let a = rho * dot(s, &dir);
                dir.iter_mut().zip(yv).for_each(|(d, yy)| *d -= a * yy);
                alphas.push(a);
            }
            if let Some((s, yv, _)) = history.back() {
                let gamma = dot(s, yv) / dot(yv, yv);
                dir.iter_mut().for_each(|d| *d *= gamma);
            }
            for ((s, yv, rho), a) in history.iter().zip(alphas.iter().rev()) {
                let b = rho * dot(yv, &dir);
                dir.iter_mut().zip(s).for_each(|(d, ss)| *d += (a - b) * ss);
            }
            let mut slope = dot(&grad, &dir);
            if slope >= 0.0 {
                history.clear();
                dir = grad.iter().map(|g| -g).collect();
                slope = dot(&grad, &dir);
            }

            let mut step = 1.0;
            let mut next = vec![0.0; dim];
            let mut next_grad = vec![0.0; dim];
            let mut accepted = None;
            for _ in 0..50 {
                for ((n, t), d) in next.iter_mut().zip(&theta).zip(&dir) {
                    *n = t + step * d;
                }
                let fn_ = problem.loss_grad(&next, &mut next_grad);
                if fn_.is_finite() && fn_ <= f + 1e-4 * step * slope {
                    accepted = Some(fn_);
                    break;
                }
                step *= 0.5;
            }
            let Some(f_next) = accepted else { break };

            let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &yv);
            if sy > 1e-12 {
                if history.len() == HISTORY {
                    history.pop_front();
                }
                history.push_back((s, yv, 1.0 / sy));
            }
            let improvement = f - f_next;
            theta = next;
            grad = next_grad;
            f = f_next;
            if improvement.abs() <= 1e-15 * f.abs().max(1.0) {
                break;
            }
        }

        LogisticRegression {
            coef: theta,
            n_features: x.ncols(),
            n_classes,
            iterations,
        }
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

impl Classifier for LogisticRegression {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn raw_proba(&self, x: &Matrix) -> Matrix {
        let d = self.n_features;
        let s = d + 1;
        let mut out = Matrix::zeros(x.nrows(), self.n_classes);
        for i in 0..x.nrows() {
            let row = x.row(i);
            let o = out.row_mut(i);
            for (k, ok) in o.iter_mut().enumerate() {
                let w = &self.coef[k * s..k * s + d];
                *ok = dot(w, row) + self.coef[k * s + d];
            }
            let max = o.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            o.iter_mut().for_each(|v| *v = (*v - max).exp());
        }
        out
    }
}
