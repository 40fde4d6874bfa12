use super::{check_labels, check_width, ModelError};
use crate::data::TabularDataset;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DtHyperparams {
    /// 0 yields a single leaf.
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for DtHyperparams {
    fn default() -> Self {
        DtHyperparams {
            max_depth: 6,
            min_samples_split: 2,
            min_samples_leaf: 1,
        }
    }
}

impl DtHyperparams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.min_samples_split < 2 || self.min_samples_leaf < 1 {
            return Err(ModelError::InvalidHyperparams(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: u32,
        counts: Vec<usize>,
    },
}

/// CART classifier stored as a flat node array, root at index 0, in preorder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTreeModel {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
    pub n_classes: usize,
}

impl DecisionTreeModel {
    pub fn predict_row(&self, x: &[f64]) -> u32 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { class, .. } => return *class,
            }
        }
    }

    /// Longest root-to-leaf path, counted in edges.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Split { .. })).count()
    }

    /// Checks that the nodes form a binary tree rooted at 0 with every node
    /// reachable exactly once.
    pub fn validate(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if i >= self.nodes.len() {
                return Err(format!("child index {i} out of range"));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(format!("node {i} reached twice"));
            }
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= self.n_features || !threshold.is_finite() {
                        return Err(format!("node {i} has an invalid split"));
                    }
                    stack.push(*right);
                    stack.push(*left);
                }
                TreeNode::Leaf { class, .. } => {
                    if *class as usize >= self.n_classes {
                        return Err(format!("leaf {i} predicts unknown class {class}"));
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err("unreachable nodes".into());
        }
        Ok(())
    }
}

fn leaf(counts: Vec<usize>) -> TreeNode {
    let mut class = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[class] {
            class = c;
        }
    }
    TreeNode::Leaf {
        class: class as u32,
        counts,
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u32],
    n_classes: usize,
    hp: &'a DtHyperparams,
    nodes: Vec<TreeNode>,
}

/// Split quality as the exact fraction `num / den` of
/// `Σ c_L²/n_L + Σ c_R²/n_R`, which grows as weighted Gini impurity falls.
#[derive(Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn beats(&self, other: &Score) -> bool {
        self.num * other.den > other.num * self.den
    }
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &i in idx {
            c[self.y[i] as usize] += 1;
        }
        c
    }

    /// Best `(feature, threshold)` over all features and midpoints, if any
    /// split satisfies the leaf-size constraint. Ties keep the lowest feature,
    /// then the lowest threshold.
    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64)> {
        let n = idx.len();
        let min_leaf = self.hp.min_samples_leaf;
        let total = self.counts(idx);
        let d = self.x[idx[0]].len();
        let mut best: Option<(Score, usize, f64)> = None;
        let mut order = idx.to_vec();
        for f in 0..d {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left = vec![0u64; self.n_classes];
            let mut right: Vec<u64> = total.iter().map(|&c| c as u64).collect();
            let mut sq_left: u64 = 0;
            let mut sq_right: u64 = right.iter().map(|c| c * c).sum();
            for k in 0..n - 1 {
                let c = self.y[order[k]] as usize;
                sq_left += 2 * left[c] + 1;
                left[c] += 1;
                sq_right -= 2 * right[c] - 1;
                right[c] -= 1;
                let (a, b) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                let n_left = k + 1;
                let n_right = n - n_left;
                if a == b || n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let score = Score {
                    num: u128::from(sq_left) * n_right as u128 + u128::from(sq_right) * n_left as u128,
                    den: n_left as u128 * n_right as u128,
                };
                if best.as_ref().is_none_or(|(s, _, _)| score.beats(s)) {
                    let mut t = a + (b - a) / 2.0;
                    if t >= b {
                        t = a;
                    }
                    best = Some((score, f, t));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let at = self.nodes.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let split = if pure || depth >= self.hp.max_depth || idx.len() < self.hp.min_samples_split {
            None
        } else {
            self.best_split(&idx)
        };
        let Some((feature, threshold)) = split else {
            self.nodes.push(leaf(counts));
            return at;
        };
        self.nodes.push(TreeNode::Leaf {
            class: 0,
            counts: Vec::new(),
        });
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

/// CART with Gini impurity. Any impure node that may split takes its best
/// split even at zero gain, which lets depth-2 trees solve XOR.
pub fn train_dt(train: &TabularDataset, hp: &DtHyperparams, _seed: u64) -> Result<DecisionTreeModel, ModelError> {
    hp.validate()?;
    check_labels(&train.targets)?;
    let d = train.n_features();
    check_width(&train.features, d)?;
    let mut b = Builder {
        x: &train.features,
        y: &train.targets,
        n_classes: train.n_classes(),
        hp,
        nodes: Vec::new(),
    };
    b.grow((0..train.len()).collect(), 0);
    Ok(DecisionTreeModel {
        nodes: b.nodes,
        n_features: d,
        n_classes: train.n_classes(),
    })
}
