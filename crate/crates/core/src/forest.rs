//! Bagged regression forest used for non-parametric variance prediction.
//!
//! This is a deliberately small CART/bagging implementation tuned for the one
//! job it has here: predicting a nonnegative target (absolute residuals) from
//! the regressor rows. Each tree draws its bootstrap sample and its feature
//! subsets from its own keyed random stream, so a forest trained with the same
//! seed is bit-identical regardless of thread count or call order.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::KeyedStream;

/// Hyperparameters for [`fit_forest`].
#[derive(Debug, Clone)]
pub struct ForestConfig {
    /// Number of bagged trees.
    pub n_trees: usize,
    /// Minimum number of (bagged) observations in a leaf.
    pub min_leaf: usize,
    /// Number of candidate features examined per split.
    pub mtry: usize,
    /// Seed for the per-tree random streams.
    pub seed: u64,
}

impl ForestConfig {
    /// Conventional defaults for a design with `k` columns: 200 trees,
    /// leaves of at least 5, `mtry = max(1, k/3)`.
    pub fn default_for(k: usize, seed: u64) -> Self {
        ForestConfig {
            n_trees: 200,
            min_leaf: 5,
            mtry: (k / 3).max(1),
            seed,
        }
    }
}

/// Domain separator for per-tree streams, so forest draws never collide with
/// other keyed consumers that share a seed.
const TREE_SALT: u64 = 0x464F_5245_5354_0001;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[(row, *feature)] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// A fitted forest together with its bagging record, so out-of-bag
/// predictions for the training rows remain available.
#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<Tree>,
    in_bag: Vec<Vec<bool>>,
    target_mean: f64,
}

/// Fit a bagged regression forest of `targets` on the rows of `x`.
pub fn fit_forest(x: &DMatrix<f64>, targets: &DVector<f64>, cfg: &ForestConfig) -> Result<RandomForest> {
    let n = x.nrows();
    let k = x.ncols();
    if targets.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "forest target has {} entries but the design has {} rows",
            targets.len(),
            n
        )));
    }
    if n == 0 {
        return Err(Error::EmptyInput {
            context: "forest training data".to_string(),
        });
    }
    if cfg.n_trees == 0 {
        return Err(Error::InvalidConfig("n_trees must be at least 1".to_string()));
    }
    if cfg.min_leaf == 0 {
        return Err(Error::InvalidConfig("min_leaf must be at least 1".to_string()));
    }
    if cfg.mtry == 0 || cfg.mtry > k {
        return Err(Error::InvalidConfig(format!(
            "mtry must lie in 1..={k}, got {}",
            cfg.mtry
        )));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite {
            context: "forest training target".to_string(),
        });
    }

    let fitted: Vec<(Tree, Vec<bool>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(x, targets, cfg, t as u64))
        .collect();

    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut in_bag = Vec::with_capacity(cfg.n_trees);
    for (tree, bag) in fitted {
        trees.push(tree);
        in_bag.push(bag);
    }
    Ok(RandomForest {
        trees,
        in_bag,
        target_mean: targets.mean(),
    })
}

impl RandomForest {
    /// Prediction at training row `row` averaging over every tree.
    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x, row)).sum();
        sum / self.trees.len() as f64
    }

    /// All-tree (in-sample) predictions for every row of `x`.
    pub fn predict_in_sample(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(x.nrows(), (0..x.nrows()).map(|i| self.predict_row(x, i)))
    }

    /// Out-of-bag predictions for the training rows: each row is predicted
    /// only by trees whose bootstrap sample excluded it. Rows that landed in
    /// every bag (possible only for tiny forests) fall back to the overall
    /// target mean.
    pub fn predict_oob(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.nrows(),
            (0..x.nrows()).map(|i| {
                let mut sum = 0.0;
                let mut count = 0usize;
                for (tree, bag) in self.trees.iter().zip(&self.in_bag) {
                    if !bag[i] {
                        sum += tree.predict(x, i);
                        count += 1;
                    }
                }
                if count == 0 {
                    self.target_mean
                } else {
                    sum / count as f64
                }
            }),
        )
    }
}

fn grow_tree(x: &DMatrix<f64>, targets: &DVector<f64>, cfg: &ForestConfig, tree_id: u64) -> (Tree, Vec<bool>) {
    let n = x.nrows();
    let mut rng = KeyedStream::new(&[cfg.seed, TREE_SALT, tree_id]);

    let mut bag_indices = Vec::with_capacity(n);
    let mut in_bag = vec![false; n];
    for _ in 0..n {
        let idx = rng.next_index(n);
        bag_indices.push(idx);
        in_bag[idx] = true;
    }

    let mut builder = TreeBuilder {
        x,
        targets,
        min_leaf: cfg.min_leaf,
        mtry: cfg.mtry,
        rng,
        nodes: Vec::new(),
        feature_pool: (0..x.ncols()).collect(),
        scratch: Vec::new(),
    };
    builder.build(&mut bag_indices);
    (Tree { nodes: builder.nodes }, in_bag)
}

struct TreeBuilder<'a> {
    x: &'a DMatrix<f64>,
    targets: &'a DVector<f64>,
    min_leaf: usize,
    mtry: usize,
    rng: KeyedStream,
    nodes: Vec<Node>,
    feature_pool: Vec<usize>,
    scratch: Vec<(f64, f64)>,
}

impl TreeBuilder<'_> {
    /// Recursively grow the subtree for `indices`, returning its node id.
    fn build(&mut self, indices: &mut [usize]) -> usize {
        let n_node = indices.len();
        let sum: f64 = indices.iter().map(|&i| self.targets[i]).sum();
        let mean = sum / n_node as f64;

        if n_node < 2 * self.min_leaf || constant_target(self.targets, indices) {
            return self.push(Node::Leaf { value: mean });
        }

        let split = self.best_split(indices, sum);
        let Some((feature, threshold)) = split else {
            return self.push(Node::Leaf { value: mean });
        };

        // Partition in place: left gets rows with x <= threshold.
        let mut cut = 0usize;
        for i in 0..n_node {
            if self.x[(indices[i], feature)] <= threshold {
                indices.swap(i, cut);
                cut += 1;
            }
        }

        let id = self.push(Node::Leaf { value: mean }); // reserve slot
        let (left_slice, right_slice) = indices.split_at_mut(cut);
        let left = self.build(left_slice);
        let right = self.build(right_slice);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn push(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    /// Scan features in random order for the variance-minimizing cut,
    /// stopping once `mtry` features that admit a valid cut have been
    /// examined. Features without a valid cut (constant columns, or ties
    /// that cannot leave `min_leaf` rows on both sides) do not count toward
    /// `mtry`, so a splittable node is never turned into a leaf just because
    /// the draw landed on degenerate columns first.
    fn best_split(&mut self, indices: &[usize], total_sum: f64) -> Option<(usize, f64)> {
        let n_node = indices.len();
        let k = self.feature_pool.len();
        for j in 0..k.saturating_sub(1) {
            let pick = j + self.rng.next_index(k - j);
            self.feature_pool.swap(j, pick);
        }

        let mut best: Option<(f64, usize, f64)> = None;
        let mut productive = 0usize;
        for slot in 0..k {
            let feature = self.feature_pool[slot];
            self.scratch.clear();
            self.scratch
                .extend(indices.iter().map(|&i| (self.x[(i, feature)], self.targets[i])));
            self.scratch
                .sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite design values"));

            let mut found_cut = false;
            let mut left_sum = 0.0;
            for p in 0..n_node - 1 {
                left_sum += self.scratch[p].1;
                let n_left = p + 1;
                let n_right = n_node - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let (v, v_next) = (self.scratch[p].0, self.scratch[p + 1].0);
                if v >= v_next {
                    continue; // ties cannot be separated
                }
                found_cut = true;
                let right_sum = total_sum - left_sum;
                // Minimizing within-node SSE is maximizing this decomposition term.
                let score = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64;
                let better = match best {
                    None => true,
                    Some((best_score, _, _)) => score > best_score,
                };
                if better {
                    best = Some((score, feature, 0.5 * (v + v_next)));
                }
            }
            if found_cut {
                productive += 1;
                if productive >= self.mtry {
                    break;
                }
            }
        }
        best.map(|(_, feature, threshold)| (feature, threshold))
    }
}

fn constant_target(targets: &DVector<f64>, indices: &[usize]) -> bool {
    let first = targets[indices[0]];
    indices.iter().all(|&i| targets[i] == first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    fn noise_design(n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(n, 2, |i, j| {
            rng::keyed_uniform(&[seed, 1, i as u64, j as u64]) * 4.0 - 2.0
        });
        let y = DVector::from_fn(n, |i, _| rng::keyed_normal(&[seed, 2, i as u64]));
        (x, y)
    }

    #[test]
    fn constant_target_predicts_the_constant() {
        let (x, _) = noise_design(40, 7);
        let y = DVector::from_element(40, 2.5);
        let forest = fit_forest(&x, &y, &ForestConfig::default_for(2, 11)).unwrap();
        let ins = forest.predict_in_sample(&x);
        let oob = forest.predict_oob(&x);
        for i in 0..40 {
            assert_relative_eq!(ins[i], 2.5, max_relative = 1e-12);
            assert_relative_eq!(oob[i], 2.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn forest_is_deterministic_for_a_seed_and_varies_across_seeds() {
        let (x, y) = noise_design(60, 3);
        let a = fit_forest(&x, &y, &ForestConfig::default_for(2, 5)).unwrap();
        let b = fit_forest(&x, &y, &ForestConfig::default_for(2, 5)).unwrap();
        let c = fit_forest(&x, &y, &ForestConfig::default_for(2, 6)).unwrap();
        let pa = a.predict_in_sample(&x);
        let pb = b.predict_in_sample(&x);
        let pc = c.predict_in_sample(&x);
        assert_eq!(pa.as_slice(), pb.as_slice());
        assert_ne!(pa.as_slice(), pc.as_slice());
    }

    #[test]
    fn small_node_becomes_a_single_leaf_mean() {
        // Four rows with min_leaf 5 can never split: every prediction is the
        // bagged mean, which averages to something near the overall mean.
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0, 6.0]);
        let cfg = ForestConfig {
            n_trees: 400,
            min_leaf: 5,
            mtry: 1,
            seed: 9,
        };
        let forest = fit_forest(&x, &y, &cfg).unwrap();
        let p = forest.predict_in_sample(&x);
        // Each tree predicts its bag mean everywhere, so predictions are
        // identical across rows.
        for i in 1..4 {
            assert_relative_eq!(p[i], p[0], max_relative = 1e-12);
        }
        // And the average of many bag means concentrates near the data mean.
        assert_relative_eq!(p[0], 3.0, max_relative = 0.25);
    }

    #[test]
    fn splits_recover_a_step_function() {
        // Target depends on x0 only: -1 below 0, +1 above. A forest with
        // enough data should track the step closely away from the boundary.
        let n = 200;
        let x = DMatrix::from_fn(n, 2, |i, j| {
            rng::keyed_uniform(&[21, 1, i as u64, j as u64]) * 2.0 - 1.0
        });
        let y = DVector::from_fn(n, |i, _| if x[(i, 0)] <= 0.0 { -1.0 } else { 1.0 });
        let forest = fit_forest(&x, &y, &ForestConfig::default_for(2, 4)).unwrap();
        let p = forest.predict_oob(&x);
        let mut correct = 0;
        for i in 0..n {
            if x[(i, 0)].abs() > 0.2 && (p[i] - y[i]).abs() < 0.5 {
                correct += 1;
            }
        }
        let eligible = (0..n).filter(|&i| x[(i, 0)].abs() > 0.2).count();
        assert!(
            correct as f64 >= 0.9 * eligible as f64,
            "step recovered at {correct}/{eligible} interior points"
        );
    }

    #[test]
    fn single_tree_oob_falls_back_to_target_mean_for_bagged_rows() {
        let (x, y) = noise_design(30, 13);
        let cfg = ForestConfig {
            n_trees: 1,
            min_leaf: 5,
            mtry: 1,
            seed: 2,
        };
        let forest = fit_forest(&x, &y, &cfg).unwrap();
        let oob = forest.predict_oob(&x);
        let mean = y.mean();
        let mut fallbacks = 0;
        for i in 0..30 {
            if forest.in_bag[0][i] {
                assert_relative_eq!(oob[i], mean, max_relative = 1e-12);
                fallbacks += 1;
            }
        }
        assert!(fallbacks > 0, "a bootstrap bag of 30 should hit some row");
    }

    #[test]
    fn config_validation() {
        let (x, y) = noise_design(20, 1);
        let bad_trees = ForestConfig {
            n_trees: 0,
            min_leaf: 5,
            mtry: 1,
            seed: 0,
        };
        assert!(matches!(
            fit_forest(&x, &y, &bad_trees),
            Err(Error::InvalidConfig(_))
        ));
        let bad_mtry = ForestConfig {
            n_trees: 10,
            min_leaf: 5,
            mtry: 3,
            seed: 0,
        };
        assert!(matches!(
            fit_forest(&x, &y, &bad_mtry),
            Err(Error::InvalidConfig(_))
        ));
        let short = DVector::from_element(10, 1.0);
        let ok = ForestConfig::default_for(2, 0);
        assert!(matches!(
            fit_forest(&x, &short, &ok),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
