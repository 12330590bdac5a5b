//! Datasets: labels, split protocols, the Planetoid-style directory loader
//! and the planted-partition generator used as a desk-scale fixture.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::emb::load_embedding_file;
use crate::graph::Graph;
use crate::rng::Rng;
use crate::tensor::{FeatureMatrix, Tensor};

/// Class ids in `[0, num_classes)`, one per node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVector {
    num_classes: usize,
    labels: Vec<usize>,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Dataset(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            num_classes,
            labels,
        })
    }

    /// Infers `num_classes = max + 1` and requires every class in between to
    /// occur at least once.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        let lv = Self::new(labels, num_classes)?;
        if let Some(c) = lv.class_counts().iter().position(|&k| k == 0) {
            return Err(Error::Dataset(format!("class {c} has no nodes")));
        }
        Ok(lv)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// One-hot rows, handy as a perfect-information feature matrix.
    pub fn one_hot(&self) -> Tensor {
        Tensor::from_fn(self.len(), self.num_classes, |i, c| {
            if self.labels[i] == c {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn permute(&self, perm: &[usize]) -> LabelVector {
        let mut labels = vec![0; self.labels.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            labels[perm[i]] = l;
        }
        LabelVector {
            num_classes: self.num_classes,
            labels,
        }
    }
}

/// Disjoint train/validation/test node sets, each kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMask {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitMask {
    pub fn new(mut train: Vec<usize>, mut val: Vec<usize>, mut test: Vec<usize>) -> Self {
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Self { train, val, test }
    }

    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if set.is_empty() {
                return Err(Error::Dataset(format!("{name} split is empty")));
            }
            for &i in set {
                if i >= num_nodes {
                    return Err(Error::Dataset(format!(
                        "{name} split references node {i} of {num_nodes}"
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Dataset(format!("node {i} appears in more than one split")));
                }
            }
        }
        Ok(())
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: SplitMask =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("split file: {e}")))?;
        Ok(SplitMask::new(s.train, s.val, s.test))
    }
}

/// Which split protocol a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitProtocol {
    /// `per_class` labelled nodes per class, fixed-size validation and test sets.
    Low,
    /// 60/20/20 random partition.
    High,
}

/// Low-label protocol: `per_class` random training nodes per class, then
/// `n_val` and `n_test` nodes drawn without replacement from the rest.
pub fn split_low(
    labels: &LabelVector,
    per_class: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<SplitMask> {
    let mut rng = Rng::new(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); labels.num_classes()];
    for (i, &l) in labels.as_slice().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut in_train = vec![false; labels.len()];
    let mut train = Vec::with_capacity(per_class * labels.num_classes());
    for (c, nodes) in by_class.iter_mut().enumerate() {
        if nodes.len() < per_class {
            return Err(Error::Dataset(format!(
                "class {c} has {} nodes, need {per_class} for training",
                nodes.len()
            )));
        }
        rng.shuffle(nodes);
        for &i in &nodes[..per_class] {
            in_train[i] = true;
            train.push(i);
        }
    }
    let mut pool: Vec<usize> = (0..labels.len()).filter(|&i| !in_train[i]).collect();
    if pool.len() < n_val + n_test {
        return Err(Error::Dataset(format!(
            "{} nodes left after training selection, need {} for val+test",
            pool.len(),
            n_val + n_test
        )));
    }
    rng.shuffle(&mut pool);
    let val = pool[..n_val].to_vec();
    let test = pool[n_val..n_val + n_test].to_vec();
    Ok(SplitMask::new(train, val, test))
}

/// High-label protocol: a random partition with `floor(r_train·n)` training
/// and `floor(r_val·n)` validation nodes; test takes the remainder.
pub fn split_high(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitMask> {
    if n < 5 {
        return Err(Error::Dataset(format!("high-label split needs at least 5 nodes, got {n}")));
    }
    let (rt, rv, rs) = ratios;
    if rt <= 0.0 || rv <= 0.0 || rs <= 0.0 || ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive and sum to 1, got ({rt}, {rv}, {rs})"
        )));
    }
    // the epsilon keeps products such as 0.6 * 1000 from flooring to 599
    let n_train = (rt * n as f64 + 1e-9).floor() as usize;
    let n_val = (rv * n as f64 + 1e-9).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Dataset(format!("{n} nodes too few for ratios {ratios:?}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut perm);
    Ok(SplitMask::new(
        perm[..n_train].to_vec(),
        perm[n_train..n_train + n_val].to_vec(),
        perm[n_train + n_val..].to_vec(),
    ))
}

/// A text-attributed graph ready for training once `features` is set.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub labels: LabelVector,
    pub features: Option<FeatureMatrix>,
    pub texts: Option<Vec<String>>,
    /// Fixed split shipped with the data, if any.
    pub split: Option<SplitMask>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, graph: Graph, labels: LabelVector) -> Result<Self> {
        if graph.num_nodes() != labels.len() {
            return Err(Error::Dataset(format!(
                "graph has {} nodes but {} labels",
                graph.num_nodes(),
                labels.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            graph,
            labels,
            features: None,
            texts: None,
            split: None,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    pub fn with_features(mut self, features: FeatureMatrix) -> Result<Self> {
        self.set_features(features)?;
        Ok(self)
    }

    pub fn set_features(&mut self, features: FeatureMatrix) -> Result<()> {
        if features.rows() != self.num_nodes() {
            return Err(Error::Dataset(format!(
                "feature matrix has {} rows, dataset {} has {} nodes",
                features.rows(),
                self.name,
                self.num_nodes()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Dataset("feature matrix contains non-finite values".into()));
        }
        self.features = Some(features);
        Ok(())
    }

    pub fn with_texts(mut self, texts: Vec<String>) -> Result<Self> {
        if texts.len() != self.num_nodes() {
            return Err(Error::Dataset(format!(
                "{} texts for {} nodes",
                texts.len(),
                self.num_nodes()
            )));
        }
        self.texts = Some(texts);
        Ok(self)
    }

    pub fn features(&self) -> Result<&FeatureMatrix> {
        self.features
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("dataset {} has no feature matrix", self.name)))
    }

    /// Relabels node `i` as `perm[i]` throughout graph, labels and features.
    pub fn permute(&self, perm: &[usize]) -> Result<Dataset> {
        let graph = self.graph.permute(perm)?;
        let labels = self.labels.permute(perm);
        let mut out = Dataset::new(self.name.clone(), graph, labels)?;
        if let Some(f) = &self.features {
            let mut pf = Tensor::zeros(f.rows(), f.cols());
            for i in 0..f.rows() {
                pf.row_mut(perm[i]).copy_from_slice(f.row(i));
            }
            out.features = Some(pf);
        }
        Ok(out)
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads `<name>.edges`, `<name>.labels` and either `<name>.features`
/// (EMB1) or `<name>.texts` from `dir`, plus `<name>.split.json` if present.
///
/// Node count comes from the label file. Edges are symmetrised and
/// deduplicated. Public Cora/PubMed releases differ slightly in node and
/// edge counts, so none are hard-coded here.
pub fn load_planetoid(dir: &Path, name: &str) -> Result<Dataset> {
    let labels_path = dir.join(format!("{name}.labels"));
    let mut labels = Vec::new();
    for (lineno, line) in read_to_string(&labels_path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let l = line.parse::<usize>().map_err(|e| {
            Error::Format(format!("{}:{}: bad label {line:?}: {e}", labels_path.display(), lineno + 1))
        })?;
        labels.push(l);
    }
    let labels = LabelVector::from_labels(labels)?;
    let n = labels.len();

    let edges_path = dir.join(format!("{name}.edges"));
    let mut edges = Vec::new();
    for (lineno, line) in read_to_string(&edges_path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace().map(str::parse::<usize>);
        match (parts.next(), parts.next(), parts.next()) {
            (Some(Ok(a)), Some(Ok(b)), None) => {
                if a >= n || b >= n {
                    return Err(Error::Dataset(format!(
                        "{}:{}: edge ({a}, {b}) references a node beyond the {n} labelled nodes",
                        edges_path.display(),
                        lineno + 1
                    )));
                }
                edges.push((a, b));
            }
            _ => {
                return Err(Error::Format(format!(
                    "{}:{}: expected two node ids, got {line:?}",
                    edges_path.display(),
                    lineno + 1
                )))
            }
        }
    }
    let graph = Graph::from_edges(n, &edges)?;
    let mut dataset = Dataset::new(name, graph, labels)?;

    let features_path = dir.join(format!("{name}.features"));
    let texts_path = dir.join(format!("{name}.texts"));
    let has_features = features_path.exists();
    let has_texts = texts_path.exists();
    if !has_features && !has_texts {
        return Err(Error::Dataset(format!(
            "neither {} nor {} exists",
            features_path.display(),
            texts_path.display()
        )));
    }
    if has_features {
        dataset.set_features(load_embedding_file(&features_path)?)?;
    }
    if has_texts {
        let texts: Vec<String> = read_to_string(&texts_path)?.lines().map(str::to_owned).collect();
        dataset = dataset.with_texts(texts)?;
    }

    let split_path = dir.join(format!("{name}.split.json"));
    if split_path.exists() {
        let split = SplitMask::from_json(&read_to_string(&split_path)?)?;
        split.validate(n)?;
        dataset.split = Some(split);
    }
    Ok(dataset)
}

/// Parameters of the planted-partition generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub dim: usize,
    pub sep: f64,
    pub seed: u64,
}

const TOPIC_TERMS: usize = 8;
const COMMON_TERMS: usize = 40;
const DOC_TOKENS: usize = 24;
const TOPIC_RATE: f64 = 0.3;

/// Planted-partition graph with Gaussian class features and class-topical
/// texts.
///
/// Nodes are assigned to classes in contiguous blocks (sizes differ by at
/// most one). Each pair `i < j` is linked with probability `p_in` inside a
/// class and `p_out` across. Class means are random directions on the unit
/// sphere scaled by `sep`; a node's features are its class mean plus
/// standard normal noise. Each node also gets a short document mixing
/// class-specific terms (`topic<c>term<k>`) into shared filler terms, so the
/// text encoders have something to work with.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec {
        nodes: n,
        classes: c,
        p_in,
        p_out,
        dim,
        sep,
        seed,
    } = *spec;
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) || p_out >= p_in {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}"
        )));
    }
    if c == 0 || n < c {
        return Err(Error::InvalidArgument(format!("need n >= C >= 1, got n={n}, C={c}")));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("feature dimension must be positive".into()));
    }
    if !sep.is_finite() || sep < 0.0 {
        return Err(Error::InvalidArgument(format!("sep must be finite and >= 0, got {sep}")));
    }

    let labels: Vec<usize> = (0..n).map(|i| i * c / n).collect();

    let mut edge_rng = Rng::stream(seed, 1);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if edge_rng.bernoulli(p) {
                edges.push((i, j));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges)?;

    let mut feat_rng = Rng::stream(seed, 2);
    let means: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| feat_rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| sep * x / norm).collect()
        })
        .collect();
    let features = Tensor::from_fn(n, dim, |i, k| means[labels[i]][k] + feat_rng.normal());

    let mut text_rng = Rng::stream(seed, 3);
    let texts = labels
        .iter()
        .map(|&l| {
            (0..DOC_TOKENS)
                .map(|_| {
                    if text_rng.bernoulli(TOPIC_RATE) {
                        format!("topic{l}term{}", text_rng.below(TOPIC_TERMS))
                    } else {
                        format!("common{}", text_rng.below(COMMON_TERMS))
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();

    let labels = LabelVector::new(labels, c)?;
    Dataset::new("synthetic", graph, labels)?
        .with_features(features)?
        .with_texts(texts)
}
