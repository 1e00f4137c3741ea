//! Non-neural baselines over per-face score vectors: the averaging
//! classifier and a from-scratch random forest (CART trees, Gini splits,
//! bootstrap resampling, feature subsampling).

use rand::Rng;

use crate::data::ImageRecord;
use crate::emotion::{baseline_categorize, Label, Scores7};
use crate::error::{Error, Result};
use crate::rng::{self, ChaCha8Rng};

pub const NUM_FEATURES: usize = 7;

/// Componentwise mean of all faces' scores. Errors on a faceless record.
pub fn mean_feature(record: &ImageRecord) -> Result<[f64; NUM_FEATURES]> {
    if record.faces.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "record `{}` has no faces",
            record.id
        )));
    }
    let mut mean = [0.0f64; NUM_FEATURES];
    for face in &record.faces {
        for (m, v) in mean.iter_mut().zip(face.scores7.values()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= record.faces.len() as f64;
    }
    Ok(mean)
}

/// Mean-then-argmax classification of a record.
pub fn averaging_predict(record: &ImageRecord) -> Result<Label> {
    let mean = mean_feature(record)?;
    let clamped = mean.map(|v| v.clamp(0.0, 1.0));
    Ok(baseline_categorize(&Scores7::new(clamped)?))
}

/// Forest configuration. `features_per_split` defaults to 3 (sqrt of the
/// 7-dim feature space, rounded); depth is unlimited unless set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestSpec {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub features_per_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestSpec {
    fn default() -> Self {
        ForestSpec {
            n_trees: 15,
            max_depth: None,
            features_per_split: 3,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: [usize; 3],
    },
}

/// A CART decision tree over 7-dim feature vectors. Split predicate is
/// `feature <= threshold`, thresholds sit on training data values, so
/// predictions are invariant under strictly monotone feature transforms
/// applied consistently to train and test data.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

fn gini(counts: &[usize; 3]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / nf;
            p * p
        })
        .sum::<f64>()
}

fn class_counts(labels: &[Label], indices: &[usize]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for &i in indices {
        counts[labels[i].index()] += 1;
    }
    counts
}

impl DecisionTree {
    /// Grows a tree to purity (or `max_depth`) over the given samples,
    /// sampling `features_per_split` candidate features per node.
    pub fn fit(
        features: &[[f64; NUM_FEATURES]],
        labels: &[Label],
        max_depth: Option<usize>,
        features_per_split: usize,
        rng: &mut ChaCha8Rng,
    ) -> DecisionTree {
        assert_eq!(features.len(), labels.len());
        assert!(!features.is_empty(), "cannot fit a tree on no samples");
        let indices: Vec<usize> = (0..features.len()).collect();
        let mut tree = DecisionTree { nodes: Vec::new() };
        tree.grow(features, labels, indices, 0, max_depth, features_per_split.clamp(1, NUM_FEATURES), rng);
        tree
    }

    fn grow(
        &mut self,
        features: &[[f64; NUM_FEATURES]],
        labels: &[Label],
        indices: Vec<usize>,
        depth: usize,
        max_depth: Option<usize>,
        features_per_split: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let counts = class_counts(labels, &indices);
        let node_gini = gini(&counts);
        let depth_stop = max_depth.is_some_and(|d| depth >= d);
        if node_gini == 0.0 || depth_stop || indices.len() < 2 {
            let idx = self.nodes.len();
            self.nodes.push(TreeNode::Leaf { counts });
            return idx;
        }
        match best_split(features, labels, &indices, features_per_split, rng) {
            None => {
                let idx = self.nodes.len();
                self.nodes.push(TreeNode::Leaf { counts });
                idx
            }
            Some((feature, threshold)) => {
                let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
                    .iter()
                    .partition(|&&i| features[i][feature] <= threshold);
                // Reserve the split slot before growing children.
                let idx = self.nodes.len();
                self.nodes.push(TreeNode::Leaf { counts });
                let left = self.grow(
                    features,
                    labels,
                    left_idx,
                    depth + 1,
                    max_depth,
                    features_per_split,
                    rng,
                );
                let right = self.grow(
                    features,
                    labels,
                    right_idx,
                    depth + 1,
                    max_depth,
                    features_per_split,
                    rng,
                );
                self.nodes[idx] = TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                idx
            }
        }
    }

    pub fn predict(&self, feature: &[f64; NUM_FEATURES]) -> Label {
        let counts = self.leaf_counts(feature);
        argmax_label(&counts)
    }

    fn leaf_counts(&self, feature: &[f64; NUM_FEATURES]) -> [usize; 3] {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { counts } => return *counts,
                TreeNode::Split {
                    feature: f,
                    threshold,
                    left,
                    right,
                } => {
                    at = if feature[*f] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

fn argmax_label(counts: &[usize; 3]) -> Label {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    Label::from_index(best).expect("index in range")
}

/// Best (feature, threshold) by weighted Gini over a sampled feature subset,
/// or None when every candidate feature is constant on the node.
fn best_split(
    features: &[[f64; NUM_FEATURES]],
    labels: &[Label],
    indices: &[usize],
    features_per_split: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, f64)> {
    // Partial Fisher-Yates over the 7 feature ids.
    let mut ids: [usize; NUM_FEATURES] = [0, 1, 2, 3, 4, 5, 6];
    for i in 0..features_per_split {
        let j = rng.gen_range(i..NUM_FEATURES);
        ids.swap(i, j);
    }
    let candidates = &ids[..features_per_split];

    let n = indices.len();
    let total = class_counts(labels, indices);
    let mut best: Option<(f64, usize, f64)> = None; // (impurity, feature, threshold)
    let mut sorted = indices.to_vec();
    for &feature in candidates {
        sorted.sort_by(|&a, &b| {
            features[a][feature]
                .partial_cmp(&features[b][feature])
                .expect("scores are finite")
        });
        let mut left = [0usize; 3];
        for k in 0..n - 1 {
            left[labels[sorted[k]].index()] += 1;
            let v = features[sorted[k]][feature];
            let next = features[sorted[k + 1]][feature];
            if v == next {
                continue; // cannot separate equal values
            }
            let right = [
                total[0] - left[0],
                total[1] - left[1],
                total[2] - left[2],
            ];
            let nl = (k + 1) as f64;
            let nr = (n - k - 1) as f64;
            let weighted = (nl * gini(&left) + nr * gini(&right)) / n as f64;
            let better = match best {
                None => true,
                Some((b, _, _)) => weighted < b,
            };
            if better {
                best = Some((weighted, feature, v));
            }
        }
    }
    best.map(|(_, feature, threshold)| (feature, threshold))
}

/// A trained forest plus the training majority class used as a fallback for
/// degenerate inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<DecisionTree>,
    fallback: Label,
}

impl Forest {
    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn fallback(&self) -> Label {
        self.fallback
    }

    /// Majority vote over trees; ties go to the lowest class index.
    pub fn predict(&self, feature: &[f64; NUM_FEATURES]) -> Label {
        if self.trees.is_empty() {
            return self.fallback;
        }
        let mut votes = [0usize; 3];
        for tree in &self.trees {
            votes[tree.predict(feature).index()] += 1;
        }
        argmax_label(&votes)
    }
}

/// Trains `spec.n_trees` CART trees on bootstrap resamples. Trees get
/// independent generators derived from `ForestSpec::seed`, so training is
/// deterministic regardless of scheduling. Single-class data degenerates to
/// a constant predictor with a warning.
pub fn rf_train(
    features: &[[f64; NUM_FEATURES]],
    labels: &[Label],
    spec: &ForestSpec,
) -> Result<Forest> {
    if spec.n_trees == 0 {
        return Err(Error::InvalidArgument("forest needs at least one tree".into()));
    }
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} feature rows against {} labels",
            features.len(),
            labels.len()
        )));
    }
    let mut counts = [0usize; 3];
    for &l in labels {
        counts[l.index()] += 1;
    }
    let fallback = argmax_label(&counts);
    let distinct = counts.iter().filter(|&&c| c > 0).count();
    if distinct < 2 {
        log::warn!(
            "training data contains a single class ({fallback}); forest degenerates to a constant predictor"
        );
        return Ok(Forest {
            trees: Vec::new(),
            fallback,
        });
    }
    let n = features.len();
    let mut trees = Vec::with_capacity(spec.n_trees);
    for t in 0..spec.n_trees {
        let mut tree_rng = rng::seeded(spec.seed, t as u64);
        let (sample_features, sample_labels): (Vec<[f64; NUM_FEATURES]>, Vec<Label>) =
            if spec.bootstrap {
                (0..n)
                    .map(|_| {
                        let i = tree_rng.gen_range(0..n);
                        (features[i], labels[i])
                    })
                    .unzip()
            } else {
                (features.to_vec(), labels.to_vec())
            };
        trees.push(DecisionTree::fit(
            &sample_features,
            &sample_labels,
            spec.max_depth,
            spec.features_per_split,
            &mut tree_rng,
        ));
    }
    Ok(Forest { trees, fallback })
}

/// Majority vote of the forest on one feature vector.
pub fn rf_predict(forest: &Forest, feature: &[f64; NUM_FEATURES]) -> Label {
    forest.predict(feature)
}
