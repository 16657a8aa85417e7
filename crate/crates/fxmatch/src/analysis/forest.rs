//! Random-forest classifier: bootstrap sampling, Gini splits over sqrt(D)
//! feature subsets, majority vote.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ForestConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            num_trees: 100,
            max_depth: 16,
            seed: 0,
        }
    }
}

enum Node {
    Leaf {
        class: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { class } => return *class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

pub struct RandomForest {
    trees: Vec<Tree>,
    pub num_classes: usize,
    pub num_features: usize,
}

pub fn rf_train(x: &[Vec<f64>], y: &[usize], cfg: &ForestConfig) -> Result<RandomForest> {
    assert_eq!(x.len(), y.len(), "feature/label count mismatch");
    assert!(!x.is_empty(), "empty training set");
    let d = x[0].len();
    assert!(x.iter().all(|r| r.len() == d), "ragged feature rows");

    let num_classes = y.iter().copied().max().unwrap() + 1;
    let mut seen = vec![false; num_classes];
    for &label in y {
        seen[label] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::SingleClass);
    }

    let features_per_split = ((d as f64).sqrt().round() as usize).clamp(1, d);
    let trees = (0..cfg.num_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
            let sample: Vec<usize> = (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect();
            let mut builder = TreeBuilder {
                x,
                y,
                num_classes,
                features_per_split,
                max_depth: cfg.max_depth,
                nodes: Vec::new(),
                rng,
            };
            builder.build(sample, 0);
            Tree {
                nodes: builder.nodes,
            }
        })
        .collect();

    Ok(RandomForest {
        trees,
        num_classes,
        num_features: d,
    })
}

pub fn rf_predict(forest: &RandomForest, rows: &[Vec<f64>]) -> Vec<usize> {
    rows.iter()
        .map(|row| {
            assert_eq!(row.len(), forest.num_features, "feature width mismatch");
            let mut votes = vec![0usize; forest.num_classes];
            for tree in &forest.trees {
                votes[tree.predict(row)] += 1;
            }
            argmax(&votes)
        })
        .collect()
}

fn argmax(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    num_classes: usize,
    features_per_split: usize,
    max_depth: usize,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
}

impl TreeBuilder<'_> {
    /// Grow the node for `samples`, returning its index in the arena.
    fn build(&mut self, samples: Vec<usize>, depth: usize) -> usize {
        let counts = self.class_counts(&samples);
        let majority = argmax(&counts);
        let pure = counts.iter().filter(|&&c| c > 0).count() == 1;
        if pure || depth >= self.max_depth || samples.len() < 2 {
            self.nodes.push(Node::Leaf { class: majority });
            return self.nodes.len() - 1;
        }

        match self.best_split(&samples) {
            None => {
                self.nodes.push(Node::Leaf { class: majority });
                self.nodes.len() - 1
            }
            Some((feature, threshold)) => {
                let (ls, rs): (Vec<usize>, Vec<usize>) = samples
                    .into_iter()
                    .partition(|&i| self.x[i][feature] <= threshold);
                let at = self.nodes.len();
                self.nodes.push(Node::Leaf { class: majority });
                let left = self.build(ls, depth + 1);
                let right = self.build(rs, depth + 1);
                self.nodes[at] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                at
            }
        }
    }

    fn class_counts(&self, samples: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &i in samples {
            counts[self.y[i]] += 1;
        }
        counts
    }

    /// Lowest weighted child Gini over a random feature subset; None when
    /// every candidate feature is constant on this node.
    fn best_split(&mut self, samples: &[usize]) -> Option<(usize, f64)> {
        let d = self.x[0].len();
        let mut feats: Vec<usize> = (0..d).collect();
        for i in 0..self.features_per_split {
            let j = self.rng.gen_range(i..d);
            feats.swap(i, j);
        }

        let n = samples.len();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut ordered: Vec<(f64, usize)> = Vec::with_capacity(n);
        for &feature in &feats[..self.features_per_split] {
            ordered.clear();
            ordered.extend(samples.iter().map(|&i| (self.x[i][feature], self.y[i])));
            ordered.sort_by(|a, b| a.0.total_cmp(&b.0));

            let mut left = vec![0usize; self.num_classes];
            let mut right = self.class_counts(samples);
            for split_at in 1..n {
                let (value, class) = ordered[split_at - 1];
                left[class] += 1;
                right[class] -= 1;
                if ordered[split_at].0 <= value {
                    continue;
                }
                let score = (split_at as f64 * gini(&left, split_at)
                    + (n - split_at) as f64 * gini(&right, n - split_at))
                    / n as f64;
                if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
                    let threshold = value + (ordered[split_at].0 - value) / 2.0;
                    best = Some((score, feature, threshold));
                }
            }
        }
        best.map(|(_, feature, threshold)| (feature, threshold))
    }
}

fn gini(counts: &[usize], total: usize) -> f64 {
    let mut sum = 0.0;
    for &c in counts {
        let p = c as f64 / total as f64;
        sum += p * p;
    }
    1.0 - sum
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ClassReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Recall per class.
    pub per_class_accuracy: Vec<f64>,
    /// confusion[truth][predicted]
    pub confusion: Vec<Vec<usize>>,
}

pub fn classification_report(truth: &[usize], pred: &[usize], num_classes: usize) -> ClassReport {
    assert_eq!(truth.len(), pred.len());
    assert!(!truth.is_empty());
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / truth.len() as f64;

    let mut per_class_accuracy = Vec::with_capacity(num_classes);
    let mut f1_sum = 0.0;
    for c in 0..num_classes {
        let tp = confusion[c][c] as f64;
        let actual: usize = confusion[c].iter().sum();
        let predicted: usize = (0..num_classes).map(|t| confusion[t][c]).sum();
        let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class_accuracy.push(recall);
        f1_sum += f1;
    }

    ClassReport {
        accuracy,
        macro_f1: f1_sum / num_classes as f64,
        per_class_accuracy,
        confusion,
    }
}
