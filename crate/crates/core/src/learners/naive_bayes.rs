use crate::matrix::Matrix;

use super::Classifier;

/// Gaussian naive Bayes. Variances get `var_smoothing * max feature variance`
/// added, as in the usual reference implementation.
#[derive(Debug, Clone)]
pub struct GaussianNb {
    log_prior: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
    n_features: usize,
}

impl GaussianNb {
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, var_smoothing: f64) -> Self {
        let d = x.ncols();
        let n = y.len() as f64;

        let mut max_var: f64 = 0.0;
        for j in 0..d {
            let col = x.column(j);
            let m = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            max_var = max_var.max(v);
        }
        let eps = var_smoothing * max_var;

        let mut counts = vec![0usize; n_classes];
        let mut means = vec![vec![0.0; d]; n_classes];
        for (i, &c) in y.iter().enumerate() {
            counts[c] += 1;
            for (m, v) in means[c].iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        for (c, m) in means.iter_mut().enumerate() {
            if counts[c] > 0 {
                m.iter_mut().for_each(|v| *v /= counts[c] as f64);
            }
        }
        let mut vars = vec![vec![0.0; d]; n_classes];
        for (i, &c) in y.iter().enumerate() {
            for ((s, v), m) in vars[c].iter_mut().zip(x.row(i)).zip(&means[c]) {
                *s += (v - m).powi(2);
            }
        }
        for (c, var) in vars.iter_mut().enumerate() {
            for s in var.iter_mut() {
                if counts[c] > 0 {
                    *s /= counts[c] as f64;
                }
                *s += eps;
                if *s <= 0.0 {
                    // every feature constant across the whole training set
                    *s = f64::MIN_POSITIVE;
                }
            }
        }
        let log_prior = counts
            .iter()
            .map(|&c| if c > 0 { (c as f64 / n).ln() } else { f64::NEG_INFINITY })
            .collect();

        GaussianNb {
            log_prior,
            means,
            vars,
            n_features: d,
        }
    }

    fn joint_log_likelihood(&self, row: &[f64]) -> Vec<f64> {
        self.log_prior
            .iter()
            .enumerate()
            .map(|(c, &lp)| {
                if lp == f64::NEG_INFINITY {
                    return lp;
                }
                let ll: f64 = row
                    .iter()
                    .zip(&self.means[c])
                    .zip(&self.vars[c])
                    .map(|((v, m), s)| -0.5 * (2.0 * std::f64::consts::PI * s).ln() - (v - m).powi(2) / (2.0 * s))
                    .sum();
                lp + ll
            })
            .collect()
    }
}

impl Classifier for GaussianNb {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.log_prior.len()
    }

    fn raw_proba(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.nrows(), self.n_classes());
        for i in 0..x.nrows() {
            let jll = self.joint_log_likelihood(x.row(i));
            let max = jll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let row = out.row_mut(i);
            for (o, l) in row.iter_mut().zip(&jll) {
                *o = (l - max).exp();
            }
        }
        out
    }
}
