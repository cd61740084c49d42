//! Dataset directories, feature normalization and train/val/test splits.
//!
//! A dataset directory holds:
//!
//! ```text
//! manifest.txt         nodes N / features D / classes M
//! graph.txt            u v            (one undirected edge per line)
//! features.txt         node feat value
//! labels.txt           node class
//! standard_split.txt   optional, sections train: / val: / test:
//! ```
//!
//! Generated splits are written to `splits/<size>/<split>/split.txt` in the
//! same section format as the standard split.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphTopology;
use crate::linalg::{row_unit_normalize_sparse, NodeMatrix, SparseMatrix};

pub const VAL_SIZE: usize = 500;
pub const TEST_SIZE: usize = 1000;
pub const PER_CLASS: usize = 20;
pub const NUM_SIZES: usize = 5;
pub const NUM_SPLITS: usize = 10;

/// Published training-set sizes for the five benchmark graphs.
const PUBLISHED_SIZES: [(&str, [usize; NUM_SIZES]); 5] = [
    ("cora", [140, 407, 674, 941, 1208]),
    ("citeseer", [120, 547, 974, 1401, 1827]),
    ("pubmed", [60, 4600, 9139, 13678, 18217]),
    ("acm", [60, 426, 792, 1158, 1525]),
    ("dblp", [80, 699, 1318, 1937, 2557]),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub topology: GraphTopology,
    /// Row-unit-normalized, stored sparse.
    pub features: SparseMatrix<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    /// Validates labels and normalizes feature rows.
    pub fn new(
        name: impl Into<String>,
        topology: GraphTopology,
        features: SparseMatrix<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = topology.num_nodes();
        if features.rows() != n || labels.len() != n {
            return Err(Error::Data(format!(
                "{n} nodes but {} feature rows and {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some((i, &c)) = labels.iter().enumerate().find(|(_, &c)| c >= num_classes) {
            return Err(Error::Data(format!(
                "node {i} has class {c}, but there are only {num_classes} classes"
            )));
        }
        Ok(Self {
            name: name.into(),
            topology,
            features: row_unit_normalize_sparse(&features),
            labels,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.topology.num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn input(&self) -> NodeMatrix<f64> {
        NodeMatrix::Sparse(self.features.clone())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &c in &self.labels {
            counts[c] += 1;
        }
        counts
    }

    /// Writes the directory layout described in the module docs.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("manifest.txt"),
            format!(
                "nodes {}\nfeatures {}\nclasses {}\n",
                self.num_nodes(),
                self.feature_dim(),
                self.num_classes
            ),
        )?;
        let mut graph = String::new();
        for &(u, v) in self.topology.edges() {
            writeln!(graph, "{u} {v}").unwrap();
        }
        fs::write(dir.join("graph.txt"), graph)?;
        let mut feats = String::new();
        for i in 0..self.features.rows() {
            let (cols, vals) = self.features.row(i);
            for (j, v) in cols.iter().zip(vals) {
                writeln!(feats, "{i} {j} {v}").unwrap();
            }
        }
        fs::write(dir.join("features.txt"), feats)?;
        let mut labels = String::new();
        for (i, c) in self.labels.iter().enumerate() {
            writeln!(labels, "{i} {c}").unwrap();
        }
        fs::write(dir.join("labels.txt"), labels)?;
        Ok(())
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}

/// Non-blank lines with their 1-based numbers, each split into fields.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, f)| !f.is_empty())
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {what} '{s}'")))
}

fn expect_fields(path: &Path, line: usize, fields: &[&str], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(Error::parse(
            path,
            line,
            format!("expected {n} fields, found {}", fields.len()),
        ));
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().to_lowercase())
        .unwrap_or_default();

    let path = dir.join("manifest.txt");
    let (mut nodes, mut dim, mut classes) = (None, None, None);
    for (line, f) in records(&read(&path)?) {
        expect_fields(&path, line, &f, 2)?;
        let value: usize = field(&path, line, f[1], "count")?;
        match f[0] {
            "nodes" => nodes = Some(value),
            "features" => dim = Some(value),
            "classes" => classes = Some(value),
            other => return Err(Error::parse(&path, line, format!("unknown key '{other}'"))),
        }
    }
    let missing = |k| Error::Data(format!("{} lacks '{k}'", path.display()));
    let n = nodes.ok_or_else(|| missing("nodes"))?;
    let dim = dim.ok_or_else(|| missing("features"))?;
    let m = classes.ok_or_else(|| missing("classes"))?;

    let path = dir.join("graph.txt");
    let mut edges = Vec::new();
    for (line, f) in records(&read(&path)?) {
        expect_fields(&path, line, &f, 2)?;
        let u: usize = field(&path, line, f[0], "node id")?;
        let v: usize = field(&path, line, f[1], "node id")?;
        if u >= n || v >= n {
            return Err(Error::parse(&path, line, format!("node id outside 0..{n}")));
        }
        edges.push((u, v));
    }
    let topology = GraphTopology::new(n, edges)?;

    let path = dir.join("features.txt");
    let mut triplets = Vec::new();
    let mut seen = HashSet::new();
    for (line, f) in records(&read(&path)?) {
        expect_fields(&path, line, &f, 3)?;
        let i: usize = field(&path, line, f[0], "node id")?;
        let j: usize = field(&path, line, f[1], "feature id")?;
        let v: f64 = field(&path, line, f[2], "value")?;
        if i >= n || j >= dim {
            return Err(Error::parse(
                &path,
                line,
                format!("entry ({i}, {j}) outside {n}x{dim}"),
            ));
        }
        if !v.is_finite() {
            return Err(Error::parse(&path, line, "non-finite feature value"));
        }
        if !seen.insert((i, j)) {
            return Err(Error::parse(
                &path,
                line,
                format!("duplicate entry ({i}, {j})"),
            ));
        }
        if v != 0.0 {
            triplets.push((i, j, v));
        }
    }
    let features = SparseMatrix::from_triplets(n, dim, triplets)?;

    let path = dir.join("labels.txt");
    let mut labels = vec![None; n];
    for (line, f) in records(&read(&path)?) {
        expect_fields(&path, line, &f, 2)?;
        let i: usize = field(&path, line, f[0], "node id")?;
        let c: usize = field(&path, line, f[1], "class id")?;
        if i >= n {
            return Err(Error::parse(
                &path,
                line,
                format!("node {i} outside 0..{n}"),
            ));
        }
        if c >= m {
            return Err(Error::parse(
                &path,
                line,
                format!("class {c} outside 0..{m}"),
            ));
        }
        if labels[i].replace(c).is_some() {
            return Err(Error::parse(
                &path,
                line,
                format!("node {i} labelled twice"),
            ));
        }
    }
    let unlabeled = labels.iter().filter(|l| l.is_none()).count();
    if unlabeled > 0 {
        return Err(Error::Data(format!(
            "{unlabeled} of the {n} nodes in the manifest have no label"
        )));
    }
    let labels = labels.into_iter().map(Option::unwrap).collect();
    Dataset::new(name, topology, features, labels, m)
}

/// Train/val/test node ids, each sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    /// 1..=5, or 0 for the standard split.
    pub size_index: usize,
    pub split_index: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DataSplit {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, ids) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            out.push_str(name);
            out.push_str(":\n");
            for chunk in ids.chunks(20) {
                let line: Vec<String> = chunk.iter().map(usize::to_string).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(
        path: &Path,
        text: &str,
        size_index: usize,
        split_index: usize,
    ) -> Result<Self> {
        let mut sections: [Option<Vec<usize>>; 3] = [None, None, None];
        let mut current = None;
        for (line, f) in records(text) {
            for tok in f {
                let slot = match tok {
                    "train:" => Some(0),
                    "val:" => Some(1),
                    "test:" => Some(2),
                    _ => None,
                };
                if let Some(s) = slot {
                    if sections[s].is_some() {
                        return Err(Error::parse(path, line, format!("repeated section {tok}")));
                    }
                    sections[s] = Some(Vec::new());
                    current = Some(s);
                    continue;
                }
                let s = current
                    .ok_or_else(|| Error::parse(path, line, "node id before any section header"))?;
                let id = field(path, line, tok, "node id")?;
                sections[s].as_mut().unwrap().push(id);
            }
        }
        let [train, val, test] = sections;
        let need = |s: Option<Vec<usize>>, name: &str| {
            s.map(|mut v| {
                v.sort_unstable();
                v
            })
            .ok_or_else(|| Error::Data(format!("{} has no {name}: section", path.display())))
        };
        let split = DataSplit {
            size_index,
            split_index,
            train: need(train, "train")?,
            val: need(val, "val")?,
            test: need(test, "test")?,
        };
        Ok(split)
    }

    /// Checks ids against `n` and that the three sets are disjoint and duplicate-free.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (name, ids) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &i in ids {
                if i >= n {
                    return Err(Error::Data(format!("{name} node {i} outside 0..{n}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Data(format!(
                        "node {i} appears twice across the split"
                    )));
                }
            }
        }
        if self.train.is_empty() || self.val.is_empty() || self.test.is_empty() {
            return Err(Error::Data(
                "split has an empty train, val or test set".into(),
            ));
        }
        Ok(())
    }
}

pub fn load_standard_split(dir: &Path, dataset: &Dataset) -> Result<DataSplit> {
    let path = dir.join("standard_split.txt");
    if !path.exists() {
        return Err(Error::StandardSplitUnavailable(dataset.name.clone()));
    }
    let split = DataSplit::from_text(&path, &read(&path)?, 0, 0)?;
    split.validate(dataset.num_nodes())?;
    Ok(split)
}

/// Training-set sizes for sizes 1..=5: four equal steps (floored) from
/// `20·M` to `|T|`, replaced by the published counts when `name` and both
/// endpoints match a known benchmark.
pub fn split_sizes(name: &str, num_classes: usize, pool: usize) -> [usize; NUM_SIZES] {
    let lo = PER_CLASS * num_classes;
    if let Some((_, sizes)) = PUBLISHED_SIZES.iter().find(|(n, _)| *n == name) {
        if sizes[0] == lo && sizes[NUM_SIZES - 1] == pool {
            return *sizes;
        }
    }
    let span = pool.saturating_sub(lo);
    std::array::from_fn(|k| lo + k * span / (NUM_SIZES - 1))
}

/// All generated splits, indexed `[size - 1][split]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSet {
    pub sizes: [usize; NUM_SIZES],
    pub splits: Vec<Vec<DataSplit>>,
}

impl SplitSet {
    pub fn get(&self, size_index: usize, split_index: usize) -> Option<&DataSplit> {
        self.splits
            .get(size_index.checked_sub(1)?)?
            .get(split_index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DataSplit> {
        self.splits.iter().flatten()
    }
}

/// Val and test are drawn once from `base_seed` and shared by every split;
/// the training sets of split `s` come from stream `s + 1` of the same seed.
pub fn generate_splits(dataset: &Dataset, base_seed: u64) -> Result<SplitSet> {
    let n = dataset.num_nodes();
    let m = dataset.num_classes;
    let need = PER_CLASS * m + VAL_SIZE + TEST_SIZE;
    if n < need {
        return Err(Error::Data(format!(
            "{n} nodes, split protocol needs at least {need}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let val = sorted(&perm[..VAL_SIZE]);
    let test = sorted(&perm[VAL_SIZE..VAL_SIZE + TEST_SIZE]);
    let pool = sorted(&perm[VAL_SIZE + TEST_SIZE..]);

    let mut by_class = vec![Vec::new(); m];
    for &i in &pool {
        by_class[dataset.labels[i]].push(i);
    }
    if let Some((c, members)) = by_class
        .iter()
        .enumerate()
        .find(|(_, v)| v.len() < PER_CLASS)
    {
        return Err(Error::Split {
            class: c.to_string(),
            available: members.len(),
            required: PER_CLASS,
        });
    }
    let sizes = split_sizes(&dataset.name, m, pool.len());

    let mut splits = vec![Vec::new(); NUM_SIZES];
    for s in 0..NUM_SPLITS {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(s as u64 + 1);
        let mut base = Vec::with_capacity(PER_CLASS * m);
        let mut chosen = vec![false; n];
        for members in &by_class {
            let mut members = members.clone();
            members.shuffle(&mut rng);
            for &i in &members[..PER_CLASS] {
                chosen[i] = true;
                base.push(i);
            }
        }
        let mut rest: Vec<usize> = pool.iter().copied().filter(|&i| !chosen[i]).collect();
        rest.shuffle(&mut rng);
        for (k, &size) in sizes.iter().enumerate() {
            let mut train = base.clone();
            train.extend_from_slice(&rest[..size - base.len()]);
            train.sort_unstable();
            splits[k].push(DataSplit {
                size_index: k + 1,
                split_index: s,
                train,
                val: val.clone(),
                test: test.clone(),
            });
        }
    }
    Ok(SplitSet { sizes, splits })
}

pub fn split_path(root: &Path, size_index: usize, split_index: usize) -> PathBuf {
    root.join("splits")
        .join(size_index.to_string())
        .join(split_index.to_string())
        .join("split.txt")
}

/// Writes every split under `root/splits/`. Returns the written paths.
pub fn write_splits(root: &Path, set: &SplitSet) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for split in set.iter() {
        let path = split_path(root, split.size_index, split.split_index);
        fs::create_dir_all(path.parent().unwrap())?;
        fs::write(&path, split.to_text())?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn read_split(root: &Path, size_index: usize, split_index: usize) -> Result<DataSplit> {
    let path = split_path(root, size_index, split_index);
    if !path.exists() {
        return Err(Error::Data(format!(
            "{} does not exist; run the splits command first",
            path.display()
        )));
    }
    DataSplit::from_text(&path, &read(&path)?, size_index, split_index)
}
