//! Tabular datasets: CSV loading, a Gaussian-cluster surrogate, and the
//! offline / online-pool / test partition.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::rng::{self, Stream};
use crate::types::{csv_io, FeatureVector, Label};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<FeatureVector>,
    labels: Vec<Label>,
    num_classes: usize,
    num_features: usize,
    class_names: Vec<String>,
}

/// Which CSV column carries the class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvOptions {
    pub has_header: bool,
    /// `None` selects the last column.
    pub label_column: Option<LabelColumn>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: true,
            label_column: None,
        }
    }
}

impl Dataset {
    pub fn new(
        features: Vec<FeatureVector>,
        labels: Vec<Label>,
        num_classes: usize,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(validation("features and labels differ in length"));
        }
        if num_classes < 2 {
            return Err(validation("a dataset needs at least 2 classes"));
        }
        if class_names.len() != num_classes {
            return Err(validation("one class name per class is required"));
        }
        let num_features = features.first().map_or(0, FeatureVector::len);
        if num_features == 0 {
            return Err(validation("a dataset needs at least one feature"));
        }
        if let Some(i) = features.iter().position(|f| f.len() != num_features) {
            return Err(validation(format!(
                "sample {i} has {} features, expected {num_features}",
                features[i].len()
            )));
        }
        let mut counts = vec![0usize; num_classes];
        for l in &labels {
            if l.0 >= num_classes {
                return Err(validation(format!("label {l} out of range")));
            }
            counts[l.0] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(validation(format!("class {c} has no samples")));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            num_features,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> (&FeatureVector, Label) {
        (&self.features[i], self.labels[i])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for l in &self.labels {
            counts[l.0] += 1;
        }
        counts
    }

    /// Owned `(features, label)` pairs for the given indices.
    pub fn subset(&self, indices: &[usize]) -> Vec<(FeatureVector, Label)> {
        indices
            .iter()
            .map(|&i| (self.features[i].clone(), self.labels[i]))
            .collect()
    }

    /// Per-feature standard deviation over the given indices (population form).
    pub fn feature_std(&self, indices: &[usize]) -> Vec<f64> {
        let n = indices.len().max(1) as f64;
        let mut mean = vec![0.0; self.num_features];
        for &i in indices {
            for (m, v) in mean.iter_mut().zip(self.features[i].as_slice()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; self.num_features];
        for &i in indices {
            for ((s, v), m) in var.iter_mut().zip(self.features[i].as_slice()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.into_iter().map(|s| (s / n).sqrt()).collect()
    }

    /// Rescales every feature to `[0, 1]`; constant features map to 0.
    pub fn min_max_scaled(&self) -> Dataset {
        let d = self.num_features;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for f in &self.features {
            for (j, &v) in f.as_slice().iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let features = self
            .features
            .iter()
            .map(|f| {
                let v = f
                    .as_slice()
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let range = hi[j] - lo[j];
                        if range > 0.0 {
                            (v - lo[j]) / range
                        } else {
                            0.0
                        }
                    })
                    .collect();
                FeatureVector::from_finite(v)
            })
            .collect();
        Dataset {
            features,
            ..self.clone()
        }
    }

    /// Writes `f0..f{d-1},class` rows with class names in the last column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.num_features).map(|i| format!("f{i}")).collect();
        header.push("class".into());
        out.write_record(&header).map_err(csv_io)?;
        for (f, l) in self.features.iter().zip(&self.labels) {
            let mut row: Vec<String> = f.as_slice().iter().map(|v| v.to_string()).collect();
            row.push(self.class_names[l.0].clone());
            out.write_record(&row).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    read_csv(file, options)
}

/// Parses a dataset; class names are indexed in order of first appearance.
pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header: Option<Vec<String>> = if options.has_header {
        let h = rdr.headers().map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();
    let mut arity = header.as_ref().map(Vec::len);
    let mut label_idx: Option<usize> = None;

    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let width = *arity.get_or_insert(record.len());
        if record.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        if width < 2 {
            return Err(Error::Parse {
                line,
                message: "a row needs at least one feature and a label".into(),
            });
        }
        let li = match label_idx {
            Some(i) => i,
            None => {
                let i =
                    resolve_label_column(options.label_column.as_ref(), header.as_deref(), width)?;
                label_idx = Some(i);
                i
            }
        };
        let mut values = Vec::with_capacity(width - 1);
        for (j, field) in record.iter().enumerate() {
            if j == li {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric feature {field:?} in column {j}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite feature in column {j}"),
                });
            }
            values.push(v);
        }
        let name = record[li].to_string();
        let class = *index_of.entry(name.clone()).or_insert_with(|| {
            names.push(name);
            names.len() - 1
        });
        features.push(FeatureVector::from_finite(values));
        labels.push(Label(class));
    }

    let k = names.len();
    Dataset::new(features, labels, k, names)
}

fn resolve_label_column(
    column: Option<&LabelColumn>,
    header: Option<&[String]>,
    width: usize,
) -> Result<usize> {
    match column {
        None => Ok(width - 1),
        Some(LabelColumn::Index(i)) if *i < width => Ok(*i),
        Some(LabelColumn::Index(i)) => Err(validation(format!(
            "label column {i} out of range for {width} columns"
        ))),
        Some(LabelColumn::Name(name)) => header
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| validation(format!("unknown label column {name:?}"))),
    }
}

/// Gaussian clusters, one per class, with means drawn from a standard normal
/// and isotropic within-class standard deviation `spread`.
pub fn synthesize(
    num_classes: usize,
    num_features: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(validation("synthesize: classes must be >= 2"));
    }
    if num_features < 1 {
        return Err(validation("synthesize: features must be >= 1"));
    }
    if per_class < 1 {
        return Err(validation("synthesize: per_class must be >= 1"));
    }
    if !(spread.is_finite() && spread > 0.0) {
        return Err(validation("synthesize: spread must be > 0"));
    }
    let mut rng = rng::stream(seed, Stream::Synthesize);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = Normal::new(0.0, spread).expect("spread validated");

    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..num_features).map(|_| unit.sample(&mut rng)).collect())
        .collect();

    let mut features = Vec::with_capacity(num_classes * per_class);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    // Interleave classes so that the file order is not sorted by class.
    for _ in 0..per_class {
        for (c, mean) in means.iter().enumerate() {
            let v = mean.iter().map(|m| m + noise.sample(&mut rng)).collect();
            features.push(FeatureVector::from_finite(v));
            labels.push(Label(c));
        }
    }
    let names = (0..num_classes).map(|c| format!("c{c}")).collect();
    Dataset::new(features, labels, num_classes, names)
}

/// Disjoint index sets for the offline history, the online candidate pool
/// and the test set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub offline: Vec<usize>,
    pub online_pool: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn partition(
    ds: &Dataset,
    offline_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<Partition> {
    if offline_size < 1 || test_size < 1 {
        return Err(validation("offline and test sizes must be >= 1"));
    }
    if offline_size + test_size > ds.len() {
        return Err(validation(format!(
            "offline ({offline_size}) + test ({test_size}) exceeds dataset size {}",
            ds.len()
        )));
    }
    let mut rng = rng::stream(seed, Stream::Partition);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes()];
    for (i, l) in ds.labels().iter().enumerate() {
        by_class[l.0].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }
    let n = ds.len() as f64;
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();

    let offline_quota: Vec<f64> = counts
        .iter()
        .map(|&c| offline_size as f64 * c as f64 / n)
        .collect();
    let offline_take = apportion(offline_size, &offline_quota, &counts);
    let left: Vec<usize> = counts
        .iter()
        .zip(&offline_take)
        .map(|(c, t)| c - t)
        .collect();
    let test_quota: Vec<f64> = counts
        .iter()
        .map(|&c| test_size as f64 * c as f64 / n)
        .collect();
    let test_take = apportion(test_size, &test_quota, &left);

    let mut offline = Vec::with_capacity(offline_size);
    let mut test = Vec::with_capacity(test_size);
    let mut online_pool = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        let (a, rest) = members.split_at(offline_take[c]);
        let (b, rest) = rest.split_at(test_take[c]);
        offline.extend_from_slice(a);
        test.extend_from_slice(b);
        online_pool.extend_from_slice(rest);
    }
    offline.shuffle(&mut rng);
    test.shuffle(&mut rng);
    online_pool.shuffle(&mut rng);
    Ok(Partition {
        offline,
        online_pool,
        test,
    })
}

/// Largest-remainder apportionment of `total` units under per-class caps.
fn apportion(total: usize, quotas: &[f64], caps: &[usize]) -> Vec<usize> {
    let mut take: Vec<usize> = quotas
        .iter()
        .zip(caps)
        .map(|(q, &cap)| (q.floor() as usize).min(cap))
        .collect();
    let mut remaining = total - take.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in &order {
        if remaining == 0 {
            break;
        }
        if take[c] < caps[c] && (take[c] as f64) < quotas[c] {
            take[c] += 1;
            remaining -= 1;
        }
    }
    for c in 0..quotas.len() {
        while remaining > 0 && take[c] < caps[c] {
            take[c] += 1;
            remaining -= 1;
        }
    }
    debug_assert_eq!(remaining, 0);
    take
}

/// Stratified split of `0..labels.len()` into `k` folds.
pub(crate) fn stratified_folds<R: Rng>(labels: &[Label], k: usize, rng: &mut R) -> Vec<usize> {
    let num_classes = labels.iter().map(|l| l.0 + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.0].push(i);
    }
    let mut fold_of = vec![0; labels.len()];
    let mut next = 0;
    for members in &mut by_class {
        members.shuffle(rng);
        for &i in members.iter() {
            fold_of[i] = next % k;
            next += 1;
        }
    }
    fold_of
}
