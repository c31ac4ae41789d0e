use crate::matrix::Matrix;

use super::Classifier;

/// Uniform-vote k-nearest-neighbour classifier (Euclidean). `k` is clamped to
/// the training size; distance ties go to the lower training index.
#[derive(Debug, Clone)]
pub struct KnnClassifier {
    x: Matrix,
    y: Vec<usize>,
    k: usize,
    n_classes: usize,
}

impl KnnClassifier {
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, k: usize) -> Self {
        KnnClassifier {
            x: x.clone(),
            y: y.to_vec(),
            k: k.min(y.len()),
            n_classes,
        }
    }

    pub fn effective_k(&self) -> usize {
        self.k
    }
}

impl Classifier for KnnClassifier {
    fn n_features(&self) -> usize {
        self.x.ncols()
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn raw_proba(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.nrows(), self.n_classes);
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(self.y.len());
        for i in 0..x.nrows() {
            let q = x.row(i);
            dist.clear();
            dist.extend(self.x.rows_iter().enumerate().map(|(j, r)| {
                let d: f64 = r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, j)
            }));
            let k = self.k;
            dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let row = out.row_mut(i);
            for &(_, j) in &dist[..k] {
                row[self.y[j]] += 1.0 / k as f64;
            }
        }
        out
    }
}
