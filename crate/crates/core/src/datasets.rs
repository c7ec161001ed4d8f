//! Labelled and unlabelled sample containers, file loaders, splitting, and
//! the synthetic generators used by the experiments.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An unlabelled feature vector with an index into its source set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<T> {
    pub id: usize,
    pub features: Vec<T>,
}

impl<T: Scalar> Sample<T> {
    pub fn new(id: usize, features: Vec<T>) -> Self {
        Self { id, features }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample<T> {
    pub sample: Sample<T>,
    pub label: usize,
}

impl<T: Scalar> LabeledSample<T> {
    pub fn new(id: usize, features: Vec<T>, label: usize) -> Self {
        Self {
            sample: Sample::new(id, features),
            label,
        }
    }

    pub fn features(&self) -> &[T] {
        &self.sample.features
    }

    pub fn id(&self) -> usize {
        self.sample.id
    }
}

/// Samples read from disk, with labels remapped to `0..num_classes`.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub samples: Vec<LabeledSample<T>>,
    pub num_classes: usize,
    pub dim: usize,
    /// `label_map[k]` is the raw label string that was mapped to class `k`.
    pub label_map: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Libsvm,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "libsvm" => Ok(Format::Libsvm),
            "csv" => Ok(Format::Csv),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>, format: Format) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    match format {
        Format::Libsvm => parse_libsvm(&text, path),
        Format::Csv => parse_csv(&text, path),
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_value<T: Scalar>(raw: &str, path: &Path, line: usize) -> Result<T> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid number {raw:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite feature value {raw:?}")));
    }
    Ok(T::c(v))
}

/// Sorted unique raw labels; numeric order when every label parses as a number.
fn label_table(raw: &[String]) -> Vec<String> {
    let unique: BTreeSet<&String> = raw.iter().collect();
    let mut table: Vec<String> = unique.into_iter().cloned().collect();
    if table.iter().all(|l| l.parse::<f64>().is_ok()) {
        table.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    table
}

fn finish<T: Scalar>(rows: Vec<(String, Vec<T>)>, dim: usize) -> Dataset<T> {
    let raw: Vec<String> = rows.iter().map(|(l, _)| l.clone()).collect();
    let label_map = label_table(&raw);
    let index: BTreeMap<&str, usize> = label_map.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let samples = rows
        .into_iter()
        .enumerate()
        .map(|(id, (label, features))| LabeledSample::new(id, features, index[label.as_str()]))
        .collect();
    Dataset {
        samples,
        num_classes: label_map.len(),
        dim,
        label_map,
    }
}

/// LIBSVM sparse text: `<label> <idx>:<val> ...` with 1-based indices.
pub fn parse_libsvm<T: Scalar>(text: &str, path: &Path) -> Result<Dataset<T>> {
    let mut sparse: Vec<(String, Vec<(usize, T)>)> = Vec::new();
    let mut dim = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label = tokens.next().unwrap().to_string();
        let mut entries = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(path, lineno, format!("expected idx:val, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("invalid feature index {idx:?}")))?;
            if idx == 0 {
                return Err(parse_err(path, lineno, "feature indices are 1-based"));
            }
            dim = dim.max(idx);
            entries.push((idx - 1, parse_value(val, path, lineno)?));
        }
        sparse.push((label, entries));
    }
    if sparse.is_empty() {
        return Err(Error::Empty("dataset file has no samples"));
    }
    let rows = sparse
        .into_iter()
        .map(|(label, entries)| {
            let mut dense = vec![T::zero(); dim];
            for (i, v) in entries {
                dense[i] = v;
            }
            (label, dense)
        })
        .collect();
    Ok(finish(rows, dim))
}

/// CSV with a header row; feature columns first, the label column last.
pub fn parse_csv<T: Scalar>(text: &str, path: &Path) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let ncols = reader.headers()?.len();
    if ncols < 2 {
        return Err(parse_err(path, 1, "need at least one feature column and a label column"));
    }
    let dim = ncols - 1;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let lineno = i + 2;
        let record = record.map_err(|e| parse_err(path, lineno, e.to_string()))?;
        if record.len() != ncols {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {ncols} columns, got {}", record.len()),
            ));
        }
        let features = (0..dim)
            .map(|j| parse_value(&record[j], path, lineno))
            .collect::<Result<Vec<T>>>()?;
        rows.push((record[dim].to_string(), features));
    }
    if rows.is_empty() {
        return Err(Error::Empty("dataset file has no samples"));
    }
    Ok(finish(rows, dim))
}

/// The data dependency of one active-learning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlInstance<T> {
    pub pool: Vec<Sample<T>>,
    /// Ground truth for `pool`, index-aligned. Only the oracle may read it.
    pub hidden_pool_labels: Vec<usize>,
    pub init: Vec<LabeledSample<T>>,
    pub test: Vec<LabeledSample<T>>,
    pub dev: Option<Vec<LabeledSample<T>>>,
    pub num_classes: usize,
    pub dim: usize,
}

impl<T: Scalar> AlInstance<T> {
    /// Checks the structural invariants and builds the instance.
    pub fn new(
        pool: Vec<Sample<T>>,
        hidden_pool_labels: Vec<usize>,
        init: Vec<LabeledSample<T>>,
        test: Vec<LabeledSample<T>>,
        num_classes: usize,
        dim: usize,
    ) -> Result<Self> {
        let inst = Self {
            pool,
            hidden_pool_labels,
            init,
            test,
            dev: None,
            num_classes,
            dim,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool.len() != self.hidden_pool_labels.len() {
            return Err(Error::InvalidArgument("pool and hidden labels differ in length".into()));
        }
        if self.init.is_empty() {
            return Err(Error::InsufficientData("initial labelled set is empty".into()));
        }
        let init_classes: BTreeSet<usize> = self.init.iter().map(|z| z.label).collect();
        if init_classes.len() < 2 {
            return Err(Error::InsufficientData(
                "initial labelled set must contain at least two classes".into(),
            ));
        }
        let labels = self
            .hidden_pool_labels
            .iter()
            .chain(self.init.iter().map(|z| &z.label))
            .chain(self.test.iter().map(|z| &z.label));
        if let Some(&bad) = labels.clone().find(|&&l| l >= self.num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {} classes",
                self.num_classes
            )));
        }
        let dims = self
            .pool
            .iter()
            .map(Sample::dim)
            .chain(self.init.iter().map(|z| z.sample.dim()))
            .chain(self.test.iter().map(|z| z.sample.dim()));
        for got in dims {
            if got != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got });
            }
        }
        let mut seen = BTreeSet::new();
        let ids = self
            .pool
            .iter()
            .map(|s| s.id)
            .chain(self.init.iter().map(LabeledSample::id))
            .chain(self.test.iter().map(LabeledSample::id));
        for id in ids {
            if !seen.insert(id) {
                return Err(Error::InvalidArgument(format!("sample id {id} appears in more than one set")));
            }
        }
        Ok(())
    }

    /// Oracle access: the pool sample at `index` together with its true label.
    pub fn reveal(&self, index: usize) -> LabeledSample<T> {
        LabeledSample {
            sample: self.pool[index].clone(),
            label: self.hidden_pool_labels[index],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub n_init: usize,
    pub n_test: usize,
}

/// Shuffles `data` with `seed` and carves out init, test, and pool.
///
/// With `stratify_init`, the first `K` init slots take the first shuffled
/// occurrence of each class; the rest follow shuffled order.
pub fn split_al_instance<T: Scalar>(
    data: &[LabeledSample<T>],
    num_classes: usize,
    sizes: SplitSizes,
    seed: u64,
    stratify_init: bool,
) -> Result<AlInstance<T>> {
    let SplitSizes { n_init, n_test } = sizes;
    if n_init + n_test >= data.len() {
        return Err(Error::InsufficientData(format!(
            "n_init + n_test = {} leaves no pool out of {} samples",
            n_init + n_test,
            data.len()
        )));
    }
    if stratify_init && n_init < num_classes {
        return Err(Error::InsufficientData(format!(
            "stratified init needs n_init >= K ({n_init} < {num_classes})"
        )));
    }
    let dim = data.first().map_or(0, |z| z.sample.dim());

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut init_idx = Vec::with_capacity(n_init);
    if stratify_init {
        for class in 0..num_classes {
            let pos = order
                .iter()
                .position(|&i| data[i].label == class)
                .ok_or_else(|| Error::InsufficientData(format!("class {class} missing; cannot stratify init")))?;
            init_idx.push(order.remove(pos));
        }
    }
    let remaining = n_init - init_idx.len();
    init_idx.extend(order.drain(..remaining));
    let test_idx: Vec<usize> = order.drain(..n_test).collect();
    let pool_idx = order;

    let init = init_idx.iter().map(|&i| data[i].clone()).collect();
    let test = test_idx.iter().map(|&i| data[i].clone()).collect();
    let pool = pool_idx.iter().map(|&i| data[i].sample.clone()).collect();
    let hidden = pool_idx.iter().map(|&i| data[i].label).collect();
    AlInstance::new(pool, hidden, init, test, num_classes, dim)
}

/// Draws a dev set from the pool using the hidden labels. Dev samples stay in
/// the pool.
pub fn sample_dev_set<T: Scalar>(instance: &AlInstance<T>, fraction: f64, seed: u64) -> Result<AlInstance<T>> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::InvalidArgument(format!("dev fraction {fraction} outside (0, 0.5]")));
    }
    let count = (fraction * instance.pool.len() as f64).round() as usize;
    if count == 0 {
        return Err(Error::InvalidArgument(format!(
            "dev fraction {fraction} of {} pool samples rounds to zero",
            instance.pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, instance.pool.len(), count).into_vec();
    picked.sort_unstable();
    let mut out = instance.clone();
    out.dev = Some(picked.into_iter().map(|i| instance.reveal(i)).collect());
    Ok(out)
}

fn standard_normal<T: Scalar>(rng: &mut impl Rng) -> T {
    let v: f64 = StandardNormal.sample(rng);
    T::c(v)
}

/// Group a synth2 cluster belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterGroup {
    Central,
    Distracting,
    Definitive,
}

impl ClusterGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ClusterGroup::Central => "central",
            ClusterGroup::Distracting => "distracting",
            ClusterGroup::Definitive => "definitive",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Synth2Cluster {
    pub group: ClusterGroup,
    pub label: usize,
    pub center: [f64; 2],
    pub std: f64,
    /// Samples drawn into pool + test.
    pub count: usize,
    /// Extra samples drawn for the initial labelled set.
    pub init_count: usize,
}

/// Frozen synth2 layout. The ground-truth boundary is the diagonal
/// `x2 = x1` with class 1 above it. The central clusters sit directly above
/// and below the origin, so a model fit to them alone splits the plane
/// horizontally. The definitive clusters hug the diagonal in the upper-right
/// and lower-left corners and are exactly the ones a horizontal split gets
/// wrong; the distracting clusters sit far from the diagonal in the
/// upper-left and lower-right corners.
pub const SYNTH2_CLUSTERS: [Synth2Cluster; 6] = [
    Synth2Cluster {
        group: ClusterGroup::Central,
        label: 1,
        center: [0.0, 1.0],
        std: 0.4,
        count: 100,
        init_count: 5,
    },
    Synth2Cluster {
        group: ClusterGroup::Central,
        label: 0,
        center: [0.0, -1.0],
        std: 0.4,
        count: 100,
        init_count: 5,
    },
    Synth2Cluster {
        group: ClusterGroup::Distracting,
        label: 1,
        center: [-3.5, 3.5],
        std: 0.5,
        count: 95,
        init_count: 0,
    },
    Synth2Cluster {
        group: ClusterGroup::Distracting,
        label: 0,
        center: [3.5, -3.5],
        std: 0.5,
        count: 95,
        init_count: 0,
    },
    Synth2Cluster {
        group: ClusterGroup::Definitive,
        label: 0,
        center: [3.6, 2.6],
        std: 0.4,
        count: 100,
        init_count: 0,
    },
    Synth2Cluster {
        group: ClusterGroup::Definitive,
        label: 1,
        center: [-3.6, -2.6],
        std: 0.4,
        count: 100,
        init_count: 0,
    },
];

pub const SYNTH2_POOL: usize = 530;
pub const SYNTH2_INIT: usize = 10;
pub const SYNTH2_TEST: usize = 60;

/// Nearest synth2 cluster to a 2-D point.
pub fn synth2_cluster_of<T: Scalar>(features: &[T]) -> &'static Synth2Cluster {
    nearest_cluster(&SYNTH2_CLUSTERS, features)
}

pub fn nearest_cluster<'c, T: Scalar>(clusters: &'c [Synth2Cluster], features: &[T]) -> &'c Synth2Cluster {
    let (x, y) = (features[0].to_f64_lossy(), features[1].to_f64_lossy());
    clusters
        .iter()
        .min_by(|a, b| {
            let da = (a.center[0] - x).powi(2) + (a.center[1] - y).powi(2);
            let db = (b.center[0] - x).powi(2) + (b.center[1] - y).powi(2);
            da.total_cmp(&db)
        })
        .unwrap()
}

/// The 2-D adversarial binary instance: 530 pool, 10 init, 60 test.
pub fn generate_synth2<T: Scalar>(seed: u64) -> AlInstance<T> {
    generate_synth2_with(&SYNTH2_CLUSTERS, seed).expect("synth2 layout satisfies instance invariants")
}

/// Same generator with a custom layout. The first `SYNTH2_TEST` shuffled
/// non-init draws become the test set.
pub fn generate_synth2_with<T: Scalar>(clusters: &[Synth2Cluster], seed: u64) -> Result<AlInstance<T>> {
    let total: usize = clusters.iter().map(|c| c.count).sum();
    if total <= SYNTH2_TEST {
        return Err(Error::InsufficientData(format!("layout draws {total} samples, test needs more than {SYNTH2_TEST}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |c: &Synth2Cluster, rng: &mut ChaCha8Rng| -> Vec<T> {
        (0..2)
            .map(|j| T::c(c.center[j]) + T::c(c.std) * standard_normal::<T>(rng))
            .collect()
    };

    let mut init = Vec::new();
    let mut rest: Vec<(Vec<T>, usize)> = Vec::with_capacity(total);
    for cluster in clusters {
        for _ in 0..cluster.init_count {
            // Keep each init point within two standard deviations so its
            // nearest center is its own central cluster.
            let x = loop {
                let x = draw(cluster, &mut rng);
                let r2: f64 = (0..2).map(|j| (x[j].to_f64_lossy() - cluster.center[j]).powi(2)).sum();
                if r2 <= (2.0 * cluster.std).powi(2) {
                    break x;
                }
            };
            init.push((x, cluster.label));
        }
        for _ in 0..cluster.count {
            rest.push((draw(cluster, &mut rng), cluster.label));
        }
    }
    rest.shuffle(&mut rng);

    let mut id = 0usize;
    let mut next_id = || {
        id += 1;
        id - 1
    };
    let init: Vec<LabeledSample<T>> = init
        .into_iter()
        .map(|(x, y)| LabeledSample::new(next_id(), x, y))
        .collect();
    let test: Vec<LabeledSample<T>> = rest
        .drain(..SYNTH2_TEST)
        .map(|(x, y)| LabeledSample::new(next_id(), x, y))
        .collect();
    let (pool, hidden): (Vec<Sample<T>>, Vec<usize>) =
        rest.into_iter().map(|(x, y)| (Sample::new(next_id(), x), y)).unzip();
    AlInstance::new(pool, hidden, init, test, 2, 2)
}

/// Isotropic Gaussian class clusters in `dim` dimensions; stands in for
/// feature sets that are not shipped with the repository.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub n: usize,
    pub dim: usize,
    pub num_classes: usize,
    /// Standard deviation of the class means around the origin.
    pub separation: f64,
    /// Per-sample noise standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl GaussianMixture {
    /// 26 classes in 16 dimensions, 20,000 samples.
    pub fn letter_like(seed: u64) -> Self {
        Self {
            n: 20_000,
            dim: 16,
            num_classes: 26,
            separation: 1.0,
            noise: 1.0,
            seed,
        }
    }

    /// Binary, 20 dimensions, 10,662 samples with heavy class overlap.
    pub fn rt_polarity_like(seed: u64) -> Self {
        Self {
            n: 10_662,
            dim: 20,
            num_classes: 2,
            separation: 0.3,
            noise: 1.0,
            seed,
        }
    }

    /// Labels cycle through the classes so class sizes differ by at most one.
    pub fn generate<T: Scalar>(&self) -> Dataset<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let means: Vec<Vec<f64>> = (0..self.num_classes)
            .map(|_| {
                (0..self.dim)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        self.separation * e
                    })
                    .collect::<Vec<f64>>()
            })
            .collect();
        let mut labels: Vec<usize> = (0..self.n).map(|i| i % self.num_classes).collect();
        labels.shuffle(&mut rng);
        let samples = labels
            .into_iter()
            .enumerate()
            .map(|(id, y)| {
                let x = means[y]
                    .iter()
                    .map(|&m| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        T::c(m + self.noise * e)
                    })
                    .collect();
                LabeledSample::new(id, x, y)
            })
            .collect();
        Dataset {
            samples,
            num_classes: self.num_classes,
            dim: self.dim,
            label_map: (0..self.num_classes).map(|k| k.to_string()).collect(),
        }
    }
}
