use crate::matrix::Matrix;

use super::Classifier;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        proba: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART classification tree with Gini impurity. Rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_features: usize,
    n_classes: usize,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl DecisionTree {
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, max_depth: Option<usize>, min_leaf: usize) -> Self {
        let mut nodes = vec![Node::Leaf { proba: Vec::new() }];
        let mut stack = vec![(0usize, (0..y.len()).collect::<Vec<usize>>(), 0usize)];

        while let Some((slot, idx, depth)) = stack.pop() {
            let mut counts = vec![0usize; n_classes];
            for &i in &idx {
                counts[y[i]] += 1;
            }
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_ok = max_depth.is_none_or(|d| depth < d);
            let split = if !pure && depth_ok && idx.len() >= 2 * min_leaf {
                best_split(x, y, &idx, n_classes, min_leaf)
            } else {
                None
            };

            match split {
                Some(s) => {
                    let (li, ri): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| x.get(i, s.feature) <= s.threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf { proba: Vec::new() });
                    let right = nodes.len();
                    nodes.push(Node::Leaf { proba: Vec::new() });
                    nodes[slot] = Node::Split {
                        feature: s.feature,
                        threshold: s.threshold,
                        left,
                        right,
                    };
                    stack.push((right, ri, depth + 1));
                    stack.push((left, li, depth + 1));
                }
                None => {
                    let n = idx.len() as f64;
                    nodes[slot] = Node::Leaf {
                        proba: counts.iter().map(|&c| c as f64 / n).collect(),
                    };
                }
            }
        }

        DecisionTree {
            nodes,
            n_features: x.ncols(),
            n_classes,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn leaf(&self, row: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { proba } => return proba,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// Lowest weighted child impurity; ties keep the earlier feature, then the
/// lower threshold.
fn best_split(x: &Matrix, y: &[usize], idx: &[usize], n_classes: usize, min_leaf: usize) -> Option<BestSplit> {
    let n = idx.len();
    let mut best: Option<BestSplit> = None;
    let mut sorted = idx.to_vec();

    for f in 0..x.ncols() {
        sorted.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
        let mut left = vec![0usize; n_classes];
        let mut right = vec![0usize; n_classes];
        for &i in &sorted {
            right[y[i]] += 1;
        }
        for pos in 1..n {
            let moved = y[sorted[pos - 1]];
            left[moved] += 1;
            right[moved] -= 1;
            if pos < min_leaf || n - pos < min_leaf {
                continue;
            }
            let a = x.get(sorted[pos - 1], f);
            let b = x.get(sorted[pos], f);
            if a == b {
                continue;
            }
            let impurity = (pos as f64 * gini(&left, pos) + (n - pos) as f64 * gini(&right, n - pos)) / n as f64;
            if best.as_ref().is_none_or(|s| impurity < s.impurity) {
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                best = Some(BestSplit {
                    feature: f,
                    threshold,
                    impurity,
                });
            }
        }
    }
    best
}

impl Classifier for DecisionTree {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn raw_proba(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.nrows(), self.n_classes);
        for i in 0..x.nrows() {
            out.row_mut(i).copy_from_slice(self.leaf(x.row(i)));
        }
        out
    }
}
