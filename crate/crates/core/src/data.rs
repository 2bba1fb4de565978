//! Labeled feature-vector datasets: JSON-lines ingestion, label aggregation
//! over annotators, stratified splitting, and synthetic cluster generation.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::decision::SweepPoint;
use crate::error::{Error, Result};
use crate::losses::Label;
use crate::special::RngSeed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotator_id: String,
    pub label: Label,
}

/// An item is private if at least one annotator marked it private.
/// Returns `None` for an empty annotation list.
pub fn resolve_label(annotations: &[Annotation]) -> Option<Label> {
    if annotations.is_empty() {
        None
    } else if annotations.iter().any(|a| a.label == Label::Private) {
        Some(Label::Private)
    } else {
        Some(Label::Public)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub features: Vec<f64>,
    pub annotations: Vec<Annotation>,
    label: Label,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, features: Vec<f64>, label: Label) -> Self {
        Self {
            id: id.into(),
            features,
            annotations: Vec::new(),
            label,
        }
    }

    pub fn annotated(id: impl Into<String>, features: Vec<f64>, annotations: Vec<Annotation>) -> Result<Self> {
        let id = id.into();
        let label = resolve_label(&annotations)
            .ok_or_else(|| Error::domain(format!("example {id} has an empty annotation list")))?;
        Ok(Self {
            id,
            features,
            annotations,
            label,
        })
    }

    /// The resolved label.
    #[inline]
    pub fn label(&self) -> Label {
        self.label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema_id: String,
    feature_dim: usize,
    examples: Vec<LabeledExample>,
}

/// Schema id given to datasets that do not name one.
pub fn default_schema_id(feature_dim: usize) -> String {
    format!("dense-f64-{feature_dim}")
}

impl Dataset {
    pub fn new(schema_id: impl Into<String>, feature_dim: usize, examples: Vec<LabeledExample>) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::domain("feature_dim must be >= 1"));
        }
        let mut ds = Self::empty(schema_id, feature_dim);
        ds.examples.reserve(examples.len());
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in examples {
            ds.check(&ex)?;
            if !seen.insert(ex.id.clone()) {
                return Err(Error::domain(format!("duplicate example id {:?}", ex.id)));
            }
            ds.examples.push(ex);
        }
        Ok(ds)
    }

    pub fn empty(schema_id: impl Into<String>, feature_dim: usize) -> Self {
        Self {
            schema_id: schema_id.into(),
            feature_dim,
            examples: Vec::new(),
        }
    }

    fn check(&self, ex: &LabeledExample) -> Result<()> {
        if ex.features.len() != self.feature_dim {
            return Err(Error::domain(format!(
                "example {:?} has {} features, dataset has {}",
                ex.id,
                ex.features.len(),
                self.feature_dim
            )));
        }
        if ex.features.iter().any(|f| !f.is_finite()) {
            return Err(Error::domain(format!("example {:?} has non-finite features", ex.id)));
        }
        Ok(())
    }

    /// Appends an example, rejecting duplicate ids and dimension mismatches.
    pub fn push(&mut self, ex: LabeledExample) -> Result<()> {
        self.check(&ex)?;
        if self.examples.iter().any(|e| e.id == ex.id) {
            return Err(Error::domain(format!("duplicate example id {:?}", ex.id)));
        }
        self.examples.push(ex);
        Ok(())
    }

    pub fn schema_id(&self) -> &str {
        &self.schema_id
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledExample> {
        self.examples.iter().find(|e| e.id == id)
    }

    /// `[public, private]` example counts.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for ex in &self.examples {
            counts[ex.label.index()] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<Label> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Keeps the examples at `indices`, in the dataset's original order.
    fn select(&self, keep: &HashSet<usize>) -> Dataset {
        Dataset {
            schema_id: self.schema_id.clone(),
            feature_dim: self.feature_dim,
            examples: self
                .examples
                .iter()
                .enumerate()
                .filter(|(i, _)| keep.contains(i))
                .map(|(_, e)| e.clone())
                .collect(),
        }
    }

    /// Example indices ordered by id; shuffles start from this canonical order
    /// so results do not depend on file order.
    pub(crate) fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.examples.len()).collect();
        idx.sort_by(|&a, &b| self.examples[a].id.cmp(&self.examples[b].id));
        idx
    }

    fn shuffled_by_class(&self, seed: RngSeed) -> [Vec<usize>; 2] {
        let mut rng = seed.rng();
        let mut classes = [Vec::new(), Vec::new()];
        for i in self.canonical_order() {
            classes[self.examples[i].label.index()].push(i);
        }
        for c in &mut classes {
            c.shuffle(&mut rng);
        }
        classes
    }
}

fn check_fraction(fraction: f64, what: &str) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must lie in (0, 1], got {fraction}")))
    }
}

/// Class-stratified split into `(train, test)`.
pub fn split_dataset(ds: &Dataset, train_fraction: f64, seed: RngSeed) -> Result<(Dataset, Dataset)> {
    check_fraction(train_fraction, "train_fraction")?;
    let mut train = HashSet::new();
    let mut test = HashSet::new();
    for class in ds.shuffled_by_class(seed) {
        let n_train = (train_fraction * class.len() as f64).round() as usize;
        train.extend(class[..n_train].iter().copied());
        test.extend(class[n_train..].iter().copied());
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::domain(format!(
            "train_fraction {train_fraction} leaves one side of the split empty"
        )));
    }
    Ok((ds.select(&train), ds.select(&test)))
}

/// Class-stratified random subset holding `fraction` of each class.
pub fn subsample(ds: &Dataset, fraction: f64, seed: RngSeed) -> Result<Dataset> {
    check_fraction(fraction, "fraction")?;
    if fraction == 1.0 {
        return Ok(ds.clone());
    }
    let mut keep = HashSet::new();
    for class in ds.shuffled_by_class(seed) {
        let n = (fraction * class.len() as f64).round() as usize;
        keep.extend(class[..n].iter().copied());
    }
    if keep.is_empty() {
        return Err(Error::domain(format!("fraction {fraction} selects no examples")));
    }
    Ok(ds.select(&keep))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub feature_dim: usize,
    /// `[public mean, private mean]`.
    pub class_means: [Vec<f64>; 2],
    /// Isotropic standard deviation of each cluster.
    pub class_spread: f64,
    /// Fraction of each class drawn from the other class's cluster.
    pub overlap_fraction: f64,
    pub seed: RngSeed,
}

impl SyntheticSpec {
    /// Two clusters at `±separation/2` along the diagonal direction.
    pub fn two_clusters(
        n_per_class: usize,
        feature_dim: usize,
        separation: f64,
        class_spread: f64,
        overlap_fraction: f64,
        seed: RngSeed,
    ) -> Self {
        let offset = 0.5 * separation / (feature_dim.max(1) as f64).sqrt();
        Self {
            n_per_class,
            feature_dim,
            class_means: [vec![-offset; feature_dim], vec![offset; feature_dim]],
            class_spread,
            overlap_fraction,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 || self.feature_dim == 0 {
            return Err(Error::domain("synthetic spec needs n_per_class >= 1 and feature_dim >= 1"));
        }
        if !(self.class_spread.is_finite() && self.class_spread > 0.0) {
            return Err(Error::domain(format!("class_spread must be positive, got {}", self.class_spread)));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::domain(format!(
                "overlap_fraction must lie in [0, 1), got {}",
                self.overlap_fraction
            )));
        }
        for mean in &self.class_means {
            if mean.len() != self.feature_dim || mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::domain("class means must be finite with length feature_dim"));
            }
        }
        Ok(())
    }
}

impl Default for SyntheticSpec {
    /// 1000 items per class in 8 dimensions; 17% of each class sits in the other cluster.
    fn default() -> Self {
        Self::two_clusters(1000, 8, 3.0, 1.0, 0.17, RngSeed(42))
    }
}

/// Gaussian clusters, one per class; `round(overlap · n)` items of each class
/// are drawn from the other class's cluster.
pub fn synthesize_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = spec.seed.rng();
    let n = spec.n_per_class;
    let n_swapped = (spec.overlap_fraction * n as f64).round() as usize;
    let mut examples = Vec::with_capacity(2 * n);
    for k in 0..n {
        for label in [Label::Public, Label::Private] {
            let cluster = if k < n_swapped { label.other() } else { label };
            let mean = &spec.class_means[cluster.index()];
            let features = mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + spec.class_spread * z
                })
                .collect();
            let id = format!("s{:06}", examples.len());
            examples.push(LabeledExample::new(id, features, label));
        }
    }
    // the swapped items come first; scatter them through the file
    examples.shuffle(&mut rng);
    Dataset::new(default_schema_id(spec.feature_dim), spec.feature_dim, examples)
}

/// Items labeled by one user's private rule: private iff the projection on
/// `rule_direction` (relative to `center`) is positive. Spread is
/// `rule_spread` along the rule direction and `background_spread` across it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub n_items: usize,
    pub center: Vec<f64>,
    pub rule_direction: Vec<f64>,
    pub rule_spread: f64,
    pub background_spread: f64,
    pub annotator_id: String,
    pub id_prefix: String,
    pub seed: RngSeed,
}

impl PersonaSpec {
    /// Centered between the clusters of `base`, with the rule along the
    /// first two coordinates' difference (orthogonal to the cluster axis).
    pub fn between_clusters(base: &SyntheticSpec, n_items: usize, seed: RngSeed) -> Self {
        let dim = base.feature_dim;
        let center = base.class_means[0]
            .iter()
            .zip(&base.class_means[1])
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let mut rule_direction = vec![0.0; dim];
        rule_direction[0] = 1.0;
        if dim > 1 {
            rule_direction[1] = -1.0;
        }
        Self {
            n_items,
            center,
            rule_direction,
            rule_spread: 1.5 * base.class_spread,
            background_spread: 0.3 * base.class_spread,
            annotator_id: "persona".into(),
            id_prefix: "p".into(),
            seed,
        }
    }
}

pub fn synthesize_persona_dataset(spec: &PersonaSpec) -> Result<Dataset> {
    let dim = spec.center.len();
    if dim == 0 || spec.rule_direction.len() != dim || spec.n_items == 0 {
        return Err(Error::domain("persona spec needs matching non-empty center and rule direction"));
    }
    let norm = spec.rule_direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) || !(spec.rule_spread > 0.0 && spec.background_spread >= 0.0) {
        return Err(Error::domain("persona spec needs a non-zero rule direction and positive spread"));
    }
    let dir: Vec<f64> = spec.rule_direction.iter().map(|v| v / norm).collect();
    let mut rng = spec.seed.rng();
    let mut examples = Vec::with_capacity(spec.n_items);
    for k in 0..spec.n_items {
        let mut z: Vec<f64> = (0..dim)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                spec.background_spread * g
            })
            .collect();
        // replace the component along the rule with a wider draw
        let along: f64 = z.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let g: f64 = StandardNormal.sample(&mut rng);
        let t = spec.rule_spread * g;
        for (zi, di) in z.iter_mut().zip(&dir) {
            *zi += (t - along) * di;
        }
        let label = if t > 0.0 { Label::Private } else { Label::Public };
        let features = z.iter().zip(&spec.center).map(|(a, c)| a + c).collect();
        let ann = vec![Annotation {
            annotator_id: spec.annotator_id.clone(),
            label,
        }];
        examples.push(LabeledExample::annotated(format!("{}{k:06}", spec.id_prefix), features, ann)?);
    }
    Dataset::new(default_schema_id(dim), dim, examples)
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<Label>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    annotations: Vec<Annotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema_id: Option<String>,
}

/// Parses JSON-lines records. `source` names the input in error messages.
pub fn parse_dataset<R: BufRead>(reader: R, source: &str) -> Result<Dataset> {
    let mut examples: Vec<LabeledExample> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut schema: Option<String> = None;
    let mut dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::format(format!("{source}:{lineno}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("{source}:{lineno}: malformed record: {e}")))?;
        let at = |msg: String| Error::format(format!("{source}:{lineno}: record {:?}: {msg}", rec.id));
        if rec.features.iter().any(|f| !f.is_finite()) {
            return Err(at("non-finite feature".into()));
        }
        match dim {
            None => dim = Some(rec.features.len()),
            Some(d) if d != rec.features.len() => {
                return Err(at(format!("has {} features, expected {d}", rec.features.len())));
            }
            Some(_) => {}
        }
        if let Some(s) = &rec.schema_id {
            match &schema {
                None => schema = Some(s.clone()),
                Some(prev) if prev != s => return Err(at(format!("schema_id {s:?} differs from {prev:?}"))),
                Some(_) => {}
            }
        }
        if !seen.insert(rec.id.clone()) {
            return Err(at("duplicate id".into()));
        }
        let label = match (resolve_label(&rec.annotations), rec.label) {
            (Some(resolved), _) => resolved,
            (None, Some(explicit)) => explicit,
            (None, None) => return Err(at("needs a label or a non-empty annotations list".into())),
        };
        examples.push(LabeledExample {
            id: rec.id,
            features: rec.features,
            annotations: rec.annotations,
            label,
        });
    }
    let dim = dim.ok_or_else(|| Error::format(format!("{source}: no records")))?;
    if dim == 0 {
        return Err(Error::format(format!("{source}: records have no features")));
    }
    let schema = schema.unwrap_or_else(|| default_schema_id(dim));
    Dataset::new(schema, dim, examples).map_err(|e| Error::format(format!("{source}: {e}")))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(BufReader::new(file), &path.display().to_string())
}

/// Serializes one JSON object per line. The schema id is written only when
/// it differs from the default for the dimension.
pub fn write_dataset<W: Write>(ds: &Dataset, mut out: W) -> std::io::Result<()> {
    let schema = (ds.schema_id != default_schema_id(ds.feature_dim)).then(|| ds.schema_id.clone());
    for ex in &ds.examples {
        let rec = Record {
            id: ex.id.clone(),
            features: ex.features.clone(),
            label: Some(ex.label),
            annotations: ex.annotations.clone(),
            schema_id: schema.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Appends one example as a JSON line and syncs it to disk.
pub fn append_example(path: impl AsRef<Path>, ex: &LabeledExample) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let rec = Record {
        id: ex.id.clone(),
        features: ex.features.clone(),
        label: Some(ex.label),
        annotations: ex.annotations.clone(),
        schema_id: None,
    };
    let mut line = serde_json::to_vec(&rec).map_err(|e| Error::format(e.to_string()))?;
    line.push(b'\n');
    file.write_all(&line).map_err(|e| Error::io(path, e))?;
    file.sync_data().map_err(|e| Error::io(path, e))
}

/// Column order of exported sweep results.
pub const RESULT_COLUMNS: [&str; 12] = [
    "theta_or_rate",
    "coverage",
    "accuracy",
    "f1_overall",
    "precision_overall",
    "recall_overall",
    "f1_private",
    "precision_private",
    "recall_private",
    "f1_public",
    "precision_public",
    "recall_public",
];

/// One exported sweep row; metric fields are `None` when nothing was retained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub theta_or_rate: f64,
    pub coverage: f64,
    /// accuracy, then overall, private and public (f1, precision, recall).
    pub metrics: Option<[f64; 10]>,
}

impl From<&SweepPoint> for ResultRow {
    fn from(p: &SweepPoint) -> Self {
        Self {
            theta_or_rate: p.value,
            coverage: p.coverage,
            metrics: p.metrics.map(|m| {
                [
                    m.accuracy,
                    m.f1,
                    m.precision,
                    m.recall,
                    m.private.f1,
                    m.private.precision,
                    m.private.recall,
                    m.public.f1,
                    m.public.precision,
                    m.public.recall,
                ]
            }),
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::format(format!("csv: {e}"))
}

/// Writes the header and one line per row. Numbers use the shortest text
/// that parses back to the same `f64`.
pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS).map_err(csv_error)?;
    for row in rows {
        let mut fields = vec![row.theta_or_rate.to_string(), row.coverage.to_string()];
        match &row.metrics {
            Some(m) => fields.extend(m.iter().map(f64::to_string)),
            None => fields.extend(std::iter::repeat_n(String::new(), 10)),
        }
        w.write_record(&fields).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::format(e.to_string()))
}

pub fn export_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_results(rows, BufWriter::new(file)).map_err(|e| match e {
        Error::Format(msg) => Error::io(path, std::io::Error::other(msg)),
        other => other,
    })
}

pub fn export_sweep(points: &[SweepPoint], path: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<ResultRow> = points.iter().map(ResultRow::from).collect();
    export_results(&rows, path)
}

pub fn parse_results<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_error)?;
    if header.iter().ne(RESULT_COLUMNS) {
        return Err(Error::format(format!("unexpected result columns: {header:?}")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::format(format!("bad number {s:?}: {e}")));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let metrics = if rec.iter().skip(2).all(str::is_empty) {
            None
        } else {
            let mut m = [0.0; 10];
            for (slot, field) in m.iter_mut().zip(rec.iter().skip(2)) {
                *slot = num(field)?;
            }
            Some(m)
        };
        rows.push(ResultRow {
            theta_or_rate: num(&rec[0])?,
            coverage: num(&rec[1])?,
            metrics,
        });
    }
    Ok(rows)
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_results(BufReader::new(file))
}
