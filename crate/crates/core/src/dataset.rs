//! Learning-to-rank data: LETOR/SVMLight ingestion, preprocessing, the
//! simulated query stream and a synthetic generator for desk-scale runs.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_LABEL: u8 = 4;

const CACHE_FORMAT: &str = "complex-rank/dataset";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub features: Vec<f64>,
    pub relevance: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub candidates: Vec<Document>,
}

impl Query {
    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.candidates.iter().map(|d| d.relevance)
    }
}

/// Per-feature min/max fitted on the training partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    pub fn apply(&self, value: f64, feature: usize) -> f64 {
        let (lo, hi) = (self.min[feature], self.max[feature]);
        if hi <= lo {
            return 0.0;
        }
        ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<Query>,
    pub valid: Vec<Query>,
    pub test: Vec<Query>,
    pub feature_count: usize,
    pub max_label: u8,
    pub normalization: Option<Normalization>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Valid,
    Test,
}

impl Dataset {
    pub fn partition(&self, which: Partition) -> &[Query] {
        match which {
            Partition::Train => &self.train,
            Partition::Valid => &self.valid,
            Partition::Test => &self.test,
        }
    }

    pub fn partitions(&self) -> [(Partition, &[Query]); 3] {
        [
            (Partition::Train, &self.train),
            (Partition::Valid, &self.valid),
            (Partition::Test, &self.test),
        ]
    }

    /// Checks feature arity, label range and partition disjointness.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, Partition> = HashMap::new();
        for (which, queries) in self.partitions() {
            for q in queries {
                if q.candidates.is_empty() {
                    return Err(Error::Invalid(format!("query {} has no candidates", q.id)));
                }
                if let Some(prev) = seen.insert(&q.id, which) {
                    return Err(Error::Invalid(format!(
                        "query {} appears in both {prev:?} and {which:?}",
                        q.id
                    )));
                }
                for d in &q.candidates {
                    if d.features.len() != self.feature_count {
                        return Err(Error::shape(
                            "document features",
                            self.feature_count,
                            d.features.len(),
                        ));
                    }
                    if d.relevance > self.max_label {
                        return Err(Error::Invalid(format!(
                            "query {}: label {} exceeds max_label {}",
                            q.id, d.relevance, self.max_label
                        )));
                    }
                    if d.features.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite(format!("features of query {}", q.id)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save_cache(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Container<'a> {
            format: &'static str,
            version: u32,
            dataset: &'a Dataset,
        }
        let text = serde_json::to_string(&Container {
            format: CACHE_FORMAT,
            version: CACHE_VERSION,
            dataset: self,
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_cache(path: &Path) -> Result<Dataset> {
        #[derive(Deserialize)]
        struct Container {
            format: String,
            version: u32,
            dataset: Dataset,
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Container = serde_json::from_str(&text)?;
        if c.format != CACHE_FORMAT || c.version != CACHE_VERSION {
            return Err(Error::Invalid(format!(
                "{}: unsupported dataset cache {} v{}",
                path.display(),
                c.format,
                c.version
            )));
        }
        c.dataset.validate()?;
        Ok(c.dataset)
    }

    /// Writes each partition as a LETOR file (`train.txt`, `vali.txt`, `test.txt`).
    pub fn write_letor(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (which, queries) in self.partitions() {
            let path = dir.join(match which {
                Partition::Train => "train.txt",
                Partition::Valid => "vali.txt",
                Partition::Test => "test.txt",
            });
            let mut out = String::new();
            for q in queries {
                for d in &q.candidates {
                    out.push_str(&format_letor_line(&q.id, d.relevance, &d.features));
                    out.push('\n');
                }
            }
            fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLine {
    pub query_id: String,
    pub relevance: u8,
    pub features: Vec<f64>,
}

/// Parses one `<label> qid:<id> <fid>:<val> ... [# comment]` line.
/// Feature ids are 1-based; unmentioned features are 0.0.
pub fn parse_letor_line(line: &str, feature_count: usize) -> Result<ParsedLine> {
    parse_line_inner(line, feature_count).map_err(|message| Error::Parse {
        line: 0,
        content: line.to_string(),
        message,
    })
}

fn parse_line_inner(line: &str, feature_count: usize) -> std::result::Result<ParsedLine, String> {
    let body = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let mut tokens = body.split_whitespace();

    let label = tokens.next().ok_or("empty line")?;
    let relevance: u8 = label
        .parse()
        .map_err(|_| format!("label `{label}` is not a non-negative integer"))?;

    let qid = tokens.next().ok_or("missing qid")?;
    let query_id = qid
        .strip_prefix("qid:")
        .filter(|id| !id.is_empty())
        .ok_or_else(|| format!("expected `qid:<id>`, found `{qid}`"))?
        .to_string();

    let mut features = vec![0.0; feature_count];
    let mut seen = vec![false; feature_count];
    for tok in tokens {
        let (fid, val) = tok
            .split_once(':')
            .ok_or_else(|| format!("malformed feature token `{tok}`"))?;
        let fid: usize = fid
            .parse()
            .map_err(|_| format!("malformed feature id in `{tok}`"))?;
        if fid == 0 || fid > feature_count {
            return Err(format!("feature id {fid} outside 1..={feature_count}"));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| format!("malformed feature value in `{tok}`"))?;
        if !val.is_finite() {
            return Err(format!("non-finite feature value in `{tok}`"));
        }
        if std::mem::replace(&mut seen[fid - 1], true) {
            return Err(format!("duplicate feature id {fid}"));
        }
        features[fid - 1] = val;
    }
    Ok(ParsedLine {
        query_id,
        relevance,
        features,
    })
}

/// Inverse of [`parse_letor_line`]; zero-valued features are omitted.
pub fn format_letor_line(query_id: &str, relevance: u8, features: &[f64]) -> String {
    let mut s = format!("{relevance} qid:{query_id}");
    for (i, v) in features.iter().enumerate() {
        if *v != 0.0 {
            let _ = write!(s, " {}:{}", i + 1, v);
        }
    }
    s
}

/// Groups lines by qid, in order of first appearance. Document order follows
/// the file, including for queries whose lines are not contiguous.
pub fn load_partition(path: &Path, feature_count: usize) -> Result<Vec<Query>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_partition(&text, feature_count)
}

pub fn parse_partition(text: &str, feature_count: usize) -> Result<Vec<Query>> {
    let mut queries: Vec<Query> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_line_inner(line, feature_count).map_err(|message| Error::Parse {
            line: n + 1,
            content: line.to_string(),
            message,
        })?;
        let slot = *index.entry(parsed.query_id.clone()).or_insert_with(|| {
            queries.push(Query {
                id: parsed.query_id.clone(),
                candidates: Vec::new(),
            });
            queries.len() - 1
        });
        queries[slot].candidates.push(Document {
            features: parsed.features,
            relevance: parsed.relevance,
        });
    }
    Ok(queries)
}

/// Fits min-max statistics on train and applies them to every partition.
/// Constant features map to 0.0; out-of-range values are clipped to [0, 1].
pub fn normalize_features(dataset: &Dataset) -> Result<Dataset> {
    if dataset.train.is_empty() {
        return Err(Error::Invalid("cannot normalize: empty train partition".into()));
    }
    let n = dataset.feature_count;
    let mut min = vec![f64::INFINITY; n];
    let mut max = vec![f64::NEG_INFINITY; n];
    for d in dataset.train.iter().flat_map(|q| &q.candidates) {
        for (j, &v) in d.features.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    let norm = Normalization { min, max };
    let apply = |queries: &[Query]| -> Vec<Query> {
        queries
            .iter()
            .map(|q| Query {
                id: q.id.clone(),
                candidates: q
                    .candidates
                    .iter()
                    .map(|d| Document {
                        features: d
                            .features
                            .iter()
                            .enumerate()
                            .map(|(j, &v)| norm.apply(v, j))
                            .collect(),
                        relevance: d.relevance,
                    })
                    .collect(),
            })
            .collect()
    };
    Ok(Dataset {
        train: apply(&dataset.train),
        valid: apply(&dataset.valid),
        test: apply(&dataset.test),
        feature_count: n,
        max_label: dataset.max_label,
        normalization: Some(norm),
    })
}

/// Keeps exactly the queries with at least `k` candidates.
pub fn filter_queries(queries: Vec<Query>, k: usize) -> Vec<Query> {
    queries.into_iter().filter(|q| q.candidates.len() >= k).collect()
}

/// Uniform draw with replacement from the partition.
pub fn sample_query<'a, R: Rng + ?Sized>(partition: &'a [Query], rng: &mut R) -> Result<&'a Query> {
    Ok(&partition[sample_query_index(partition, rng)?])
}

/// Index form of [`sample_query`]; consumes the same randomness.
pub fn sample_query_index<R: Rng + ?Sized>(partition: &[Query], rng: &mut R) -> Result<usize> {
    if partition.is_empty() {
        return Err(Error::Invalid("cannot sample from an empty partition".into()));
    }
    Ok(rng.gen_range(0..partition.len()))
}

/// Moves a seeded random `fraction` of train queries into a validation split.
pub fn split_validation(train: Vec<Query>, fraction: f64, seed: u64) -> Result<(Vec<Query>, Vec<Query>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("valid_fraction {fraction} not in [0, 1)")));
    }
    let n_valid = (train.len() as f64 * fraction).round() as usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let chosen: HashSet<usize> = order[..n_valid].iter().copied().collect();
    let (mut keep, mut valid) = (Vec::new(), Vec::new());
    for (i, q) in train.into_iter().enumerate() {
        if chosen.contains(&i) {
            valid.push(q);
        } else {
            keep.push(q);
        }
    }
    Ok((keep, valid))
}

/// Where the partitions of an on-disk dataset live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<PathBuf>,
    pub test: PathBuf,
    pub feature_count: usize,
    #[serde(default = "default_max_label")]
    pub max_label: u8,
    /// Used only when `valid` is absent.
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
}

fn default_max_label() -> u8 {
    DEFAULT_MAX_LABEL
}

fn default_valid_fraction() -> f64 {
    0.1
}

/// Loads, filters to queries with at least `k` candidates, and normalizes.
pub fn load_dataset(paths: &DatasetPaths, k: usize, seed: u64) -> Result<Dataset> {
    let load = |p: &Path| load_partition(p, paths.feature_count).map(|q| filter_queries(q, k));
    let train = load(&paths.train)?;
    let (train, valid) = match &paths.valid {
        Some(p) => (train, load(p)?),
        None => split_validation(train, paths.valid_fraction, seed)?,
    };
    let raw = Dataset {
        train,
        valid,
        test: load(&paths.test)?,
        feature_count: paths.feature_count,
        max_label: paths.max_label,
        normalization: None,
    };
    raw.validate()?;
    normalize_features(&raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSignal {
    /// One-hot of the label in the first `max_label + 1` features.
    OneHot,
    /// Feature 0 carries `label / max_label`.
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub train_queries: usize,
    pub valid_queries: usize,
    pub test_queries: usize,
    pub docs_per_query: usize,
    pub feature_count: usize,
    #[serde(default = "default_max_label")]
    pub max_label: u8,
    #[serde(default = "default_label_signal")]
    pub label_signal: LabelSignal,
    #[serde(default)]
    pub noise_scale: f64,
    pub seed: u64,
}

fn default_label_signal() -> LabelSignal {
    LabelSignal::OneHot
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_queries: 200,
            valid_queries: 50,
            test_queries: 50,
            docs_per_query: 20,
            feature_count: 8,
            max_label: DEFAULT_MAX_LABEL,
            label_signal: LabelSignal::OneHot,
            noise_scale: 0.0,
            seed: 0,
        }
    }
}

/// Generates a reproducible dataset whose labels are uniform on
/// `0..=max_label` and encoded in the features according to `label_signal`.
/// The remaining features carry Gaussian noise of standard deviation
/// `noise_scale`.
pub fn synthesize_dataset(config: &SyntheticConfig, k: usize) -> Result<Dataset> {
    if config.docs_per_query < k || k == 0 {
        return Err(Error::Config(format!(
            "docs_per_query {} must be >= k {}",
            config.docs_per_query, k
        )));
    }
    let signal_width = match config.label_signal {
        LabelSignal::OneHot => config.max_label as usize + 1,
        LabelSignal::Scalar => 1,
    };
    if config.feature_count < signal_width {
        return Err(Error::Config(format!(
            "feature_count {} too small for label signal of width {signal_width}",
            config.feature_count
        )));
    }
    if !(config.noise_scale >= 0.0 && config.noise_scale.is_finite()) {
        return Err(Error::Config(format!("noise_scale {} must be >= 0", config.noise_scale)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut make = |prefix: &str, count: usize| -> Vec<Query> {
        (0..count)
            .map(|qi| Query {
                id: format!("{prefix}{qi}"),
                candidates: (0..config.docs_per_query)
                    .map(|_| {
                        let relevance = rng.gen_range(0..=config.max_label);
                        let mut features = vec![0.0; config.feature_count];
                        match config.label_signal {
                            LabelSignal::OneHot => features[relevance as usize] = 1.0,
                            LabelSignal::Scalar => {
                                features[0] = relevance as f64 / config.max_label.max(1) as f64
                            }
                        }
                        for f in &mut features[signal_width..] {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            *f = config.noise_scale * z;
                        }
                        Document { features, relevance }
                    })
                    .collect(),
            })
            .collect()
    };
    let train = make("train-", config.train_queries);
    let valid = make("valid-", config.valid_queries);
    let test = make("test-", config.test_queries);
    Ok(Dataset {
        train,
        valid,
        test,
        feature_count: config.feature_count,
        max_label: config.max_label,
        normalization: None,
    })
}
