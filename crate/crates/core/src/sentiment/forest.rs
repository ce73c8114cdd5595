//! Binary random-forest classifier.
//!
//! Bagged CART trees with Gini splits, unlimited depth, minimum leaf size one, and
//! `sqrt(F)` candidate features per node. Each tree draws from its own seed derived
//! from the forest seed, so training is bit-reproducible regardless of thread count.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{child_seed, seeded};
use crate::sentiment::features::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    /// Candidate features per node; `None` means `ceil(sqrt(F))`.
    pub max_features: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 400,
            max_features: None,
            min_leaf: 1,
            max_depth: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    /// Fraction of positive training samples reaching the leaf.
    Leaf { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { p } => return p,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + go(nodes, left as usize).max(go(nodes, right as usize))
                }
            }
        }
        go(&self.nodes, 0)
    }

    fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature as usize),
            Node::Leaf { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    schema: Vec<String>,
    trees: Vec<Tree>,
    pub config: ForestConfig,
    pub n_train: usize,
    pub positive_rate: f64,
    /// Out-of-bag accuracy at threshold 0.5, when any sample was out of bag.
    pub oob_accuracy: Option<f64>,
}

impl Forest {
    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Mean leaf probability over trees, for a row in schema order.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict_proba(&self, fv: &FeatureVector) -> Result<f64> {
        fv.check_schema(&self.schema)?;
        Ok(self.predict_row(fv.values()))
    }

    /// Every split feature indexes into the schema.
    pub fn is_consistent(&self) -> bool {
        self.trees
            .iter()
            .all(|t| t.split_features().all(|f| f < self.schema.len()))
    }
}

/// Train on feature vectors sharing one schema. `labels[i]` is the positive class.
pub fn train_forest(x: &[FeatureVector], labels: &[bool], config: &ForestConfig) -> Result<Forest> {
    let Some(first) = x.first() else {
        return Err(Error::InvalidInput("no training rows".into()));
    };
    let schema = first.names().to_vec();
    let mut rows = Vec::with_capacity(x.len());
    for fv in x {
        fv.check_schema(&schema)?;
        rows.push(fv.values().to_vec());
    }
    train_forest_rows(schema, &rows, labels, config)
}

pub fn train_forest_rows(
    schema: Vec<String>,
    rows: &[Vec<f64>],
    labels: &[bool],
    config: &ForestConfig,
) -> Result<Forest> {
    if rows.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    if rows.len() < 2 {
        return Err(Error::InvalidInput(
            "need at least two training rows".into(),
        ));
    }
    if rows.iter().any(|r| r.len() != schema.len()) {
        return Err(Error::SchemaMismatch(
            "row width differs from schema".into(),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training features".into()));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass);
    }
    if config.trees == 0 {
        return Err(Error::InvalidInput("forest needs at least one tree".into()));
    }
    let n = rows.len();
    let f = schema.len();
    let mtry = config
        .max_features
        .unwrap_or_else(|| (f as f64).sqrt().ceil() as usize)
        .clamp(1, f.max(1));

    let built: Vec<(Tree, Vec<bool>)> = (0..config.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeded(child_seed(config.seed, "tree", t as u64));
            let mut in_bag = vec![false; n];
            let sample: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.gen_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect();
            let tree = TreeBuilder {
                rows,
                labels,
                mtry,
                min_leaf: config.min_leaf.max(1),
                max_depth: config.max_depth,
            }
            .build(sample, &mut rng);
            (tree, in_bag)
        })
        .collect();

    let mut oob_sum = vec![0.0; n];
    let mut oob_n = vec![0usize; n];
    for (tree, in_bag) in &built {
        for i in (0..n).filter(|&i| !in_bag[i]) {
            oob_sum[i] += tree.predict(&rows[i]);
            oob_n[i] += 1;
        }
    }
    let scored: Vec<usize> = (0..n).filter(|&i| oob_n[i] > 0).collect();
    let oob_accuracy = (!scored.is_empty()).then(|| {
        let correct = scored
            .iter()
            .filter(|&&i| (oob_sum[i] / oob_n[i] as f64 > 0.5) == labels[i])
            .count();
        correct as f64 / scored.len() as f64
    });

    Ok(Forest {
        schema,
        trees: built.into_iter().map(|(t, _)| t).collect(),
        config: config.clone(),
        n_train: n,
        positive_rate: positives as f64 / n as f64,
        oob_accuracy,
    })
}

struct TreeBuilder<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [bool],
    mtry: usize,
    min_leaf: usize,
    max_depth: Option<usize>,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn gini_sum(pos: usize, n: usize) -> f64 {
    // n * gini impurity, so child scores add directly
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    n as f64 * 2.0 * p * (1.0 - p)
}

impl TreeBuilder<'_> {
    fn build<R: Rng>(&self, sample: Vec<usize>, rng: &mut R) -> Tree {
        let mut nodes = vec![Node::Leaf { p: 0.0 }];
        // (node index, samples, depth)
        let mut stack = vec![(0usize, sample, 0usize)];
        let n_features = self.rows.first().map_or(0, Vec::len);
        let mut order: Vec<usize> = (0..n_features).collect();
        while let Some((at, idx, depth)) = stack.pop() {
            let pos = idx.iter().filter(|&&i| self.labels[i]).count();
            let leaf = Node::Leaf {
                p: pos as f64 / idx.len() as f64,
            };
            let can_split = pos != 0
                && pos != idx.len()
                && idx.len() >= 2 * self.min_leaf
                && self.max_depth.map_or(true, |d| depth < d);
            if !can_split {
                nodes[at] = leaf;
                continue;
            }
            order.shuffle(rng);
            let Some(split) = self.best_split(&idx, pos, &order) else {
                nodes[at] = leaf;
                continue;
            };
            let (left, right): (Vec<usize>, Vec<usize>) = idx
                .into_iter()
                .partition(|&i| self.rows[i][split.feature] <= split.threshold);
            let l = nodes.len();
            nodes.push(Node::Leaf { p: 0.0 });
            nodes.push(Node::Leaf { p: 0.0 });
            nodes[at] = Node::Split {
                feature: split.feature as u32,
                threshold: split.threshold,
                left: l as u32,
                right: (l + 1) as u32,
            };
            stack.push((l + 1, right, depth + 1));
            stack.push((l, left, depth + 1));
        }
        Tree { nodes }
    }

    /// Examine `mtry` features in `order`; keep going past `mtry` only while no valid split exists.
    fn best_split(&self, idx: &[usize], pos: usize, order: &[usize]) -> Option<Split> {
        let mut best: Option<Split> = None;
        let mut sorted: Vec<(f64, bool)> = Vec::with_capacity(idx.len());
        for (k, &feature) in order.iter().enumerate() {
            if k >= self.mtry && best.is_some() {
                break;
            }
            sorted.clear();
            sorted.extend(idx.iter().map(|&i| (self.rows[i][feature], self.labels[i])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let n = sorted.len();
            let mut left_pos = 0;
            for i in 0..n - 1 {
                if sorted[i].1 {
                    left_pos += 1;
                }
                let left_n = i + 1;
                if sorted[i].0 == sorted[i + 1].0
                    || left_n < self.min_leaf
                    || n - left_n < self.min_leaf
                {
                    continue;
                }
                let score = gini_sum(left_pos, left_n) + gini_sum(pos - left_pos, n - left_n);
                if best.as_ref().map_or(true, |b| score < b.score) {
                    let (lo, hi) = (sorted[i].0, sorted[i + 1].0);
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(Split {
                        feature,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rows_from(
        n: usize,
        seed: u64,
        label: impl Fn(&[f64], &mut crate::rng::Rng) -> bool,
    ) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = seeded(seed);
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let r: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            ys.push(label(&r, &mut rng));
            rows.push(r);
        }
        (rows, ys)
    }

    fn schema() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    fn accuracy(f: &Forest, rows: &[Vec<f64>], ys: &[bool]) -> f64 {
        rows.iter()
            .zip(ys)
            .filter(|(r, &y)| (f.predict_row(r) > 0.5) == y)
            .count() as f64
            / ys.len() as f64
    }

    #[test]
    fn single_class_is_an_error() {
        let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(matches!(
            train_forest_rows(schema(), &rows, &[true, true], &ForestConfig::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn separable_data_is_learned() {
        let rule = |r: &[f64], _: &mut crate::rng::Rng| r[0] + 0.5 * r[1] > 0.1;
        let (train, ytr) = rows_from(500, 1, rule);
        let (test, yte) = rows_from(500, 2, rule);
        let cfg = ForestConfig {
            trees: 100,
            seed: 3,
            ..ForestConfig::default()
        };
        let f = train_forest_rows(schema(), &train, &ytr, &cfg).unwrap();
        assert!(f.is_consistent());
        assert!(accuracy(&f, &test, &yte) >= 0.95);
        assert!(f.oob_accuracy.unwrap() > 0.9);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let (rows, ys) = rows_from(200, 5, |r, _| r[0] > 0.0);
        let cfg = ForestConfig {
            trees: 20,
            seed: 11,
            ..ForestConfig::default()
        };
        let a = train_forest_rows(schema(), &rows, &ys, &cfg).unwrap();
        let b = train_forest_rows(schema(), &rows, &ys, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unanimous_trees_give_extreme_probability() {
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.1],
            vec![1.0, 0.0],
            vec![1.0, 0.1],
        ];
        let ys = vec![false, false, true, true];
        let cfg = ForestConfig {
            trees: 15,
            seed: 0,
            ..ForestConfig::default()
        };
        let f = train_forest_rows(schema(), &rows, &ys, &cfg).unwrap();
        for r in &rows {
            let p = f.predict_row(r);
            assert!((0.0..=1.0).contains(&p));
        }
        // a point far on one side is classified identically by every tree that split
        let p = f.predict_row(&[5.0, 0.0]);
        assert!(p == 1.0 || f.trees().iter().any(|t| t.depth() == 0));
    }

    #[test]
    fn predict_checks_schema() {
        let rows = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let f = train_forest_rows(
            schema(),
            &rows,
            &[false, true],
            &ForestConfig {
                trees: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let mut fv = FeatureVector::new();
        fv.push("a", 0.0);
        assert!(matches!(
            f.predict_proba(&fv),
            Err(Error::SchemaMismatch(_))
        ));
        fv.push("b", 1.0);
        assert!(f.predict_proba(&fv).is_ok());
    }
}
