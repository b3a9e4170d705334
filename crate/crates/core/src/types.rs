//! Domain vocabulary shared by every module.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Dense class index in `[0, K)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label(pub usize);

impl Label {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn label_from_index(k: usize, num_classes: usize) -> Result<Label> {
    if k >= num_classes {
        return Err(validation(format!(
            "label index {k} out of range for {num_classes} classes"
        )));
    }
    Ok(Label(k))
}

/// Fixed-length vector of finite reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(validation(format!("feature {pos} is not finite")));
        }
        Ok(Self(values))
    }

    /// Caller guarantees every entry is finite.
    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Continuous simulation time in abstract units.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Timestamp(f64);

impl Timestamp {
    pub fn new(t: f64) -> Result<Self> {
        if !t.is_finite() {
            return Err(validation(format!("timestamp {t} is not finite")));
        }
        Ok(Self(t))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl PartialEq for Timestamp {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Timestamp {}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

impl VehicleId {
    /// The ego vehicle always carries id 0.
    pub const EGO: VehicleId = VehicleId(0);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentId(pub u32);

/// A piece of data observed by one vehicle at one time, without a label.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub data: FeatureVector,
    pub time: Timestamp,
    pub source: VehicleId,
}

impl Observation {
    pub fn with_label(&self, label: Label) -> Sample {
        Sample {
            data: self.data.clone(),
            label,
            time: self.time,
            source: self.source,
        }
    }
}

/// Data, label and time as produced by one vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub data: FeatureVector,
    pub label: Label,
    pub time: Timestamp,
    pub source: VehicleId,
}

impl Sample {
    /// Identity used to reject duplicate insertions into a training set.
    pub fn identity(&self) -> (VehicleId, u64) {
        (self.source, self.time.value().to_bits())
    }
}

/// What neighbors transmit to the ego vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Labels,
    Data,
    Samples,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Labels, Mode::Data, Mode::Samples];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Labels => "labels",
            Mode::Data => "data",
            Mode::Samples => "samples",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Writes samples as `source,time,label,f0,...,f{d-1}` with a header row.
///
/// Floats use the shortest representation that parses back to the same
/// bits, so a read after a write is exact.
pub fn write_samples_csv<W: Write>(writer: W, samples: &[Sample]) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.data.len());
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["source".to_string(), "time".into(), "label".into()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    out.write_record(&header).map_err(csv_io)?;
    for s in samples {
        if s.data.len() != dim {
            return Err(validation("samples have mixed dimensionality"));
        }
        let mut row = vec![
            s.source.0.to_string(),
            s.time.value().to_string(),
            s.label.0.to_string(),
        ];
        row.extend(s.data.as_slice().iter().map(|v| v.to_string()));
        out.write_record(&row).map_err(csv_io)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<Sample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse = |i: usize| -> Result<&str> {
            record.get(i).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing column {i}"),
            })
        };
        let bad = |what: &str, v: &str| Error::Parse {
            line,
            message: format!("invalid {what} {v:?}"),
        };
        let source = parse(0)?;
        let source = VehicleId(source.parse().map_err(|_| bad("source", source))?);
        let time = parse(1)?;
        let time = Timestamp::new(time.parse().map_err(|_| bad("time", time))?)
            .map_err(|e| bad("time", &e.to_string()))?;
        let label = parse(2)?;
        let label = Label(label.parse().map_err(|_| bad("label", label))?);
        let mut values = Vec::with_capacity(record.len().saturating_sub(3));
        for field in record.iter().skip(3) {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| bad("feature", field))?,
            );
        }
        let data = FeatureVector::new(values).map_err(|e| bad("feature", &e.to_string()))?;
        samples.push(Sample {
            data,
            label,
            time,
            source,
        });
    }
    Ok(samples)
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Invariant(format!("csv writer: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn label_from_index_accepts_range() {
        assert_eq!(label_from_index(0, 4).unwrap(), Label(0));
        assert_eq!(label_from_index(3, 4).unwrap(), Label(3));
        assert!(matches!(label_from_index(4, 4), Err(Error::Validation(_))));
    }

    #[test]
    fn feature_vector_rejects_non_finite() {
        assert!(FeatureVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(FeatureVector::new(vec![f64::INFINITY]).is_err());
        assert_eq!(FeatureVector::new(vec![0.5, -2.0]).unwrap().len(), 2);
    }

    #[test]
    fn timestamps_order_totally() {
        let a = Timestamp::new(-1.0).unwrap();
        let b = Timestamp::new(2.5).unwrap();
        assert!(a < b);
        assert_eq!(a.max(b), b);
        assert!(Timestamp::new(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn samples_round_trip_through_csv(
            rows in prop::collection::vec(
                (0u32..10, -1e6f64..1e6, 0usize..8, prop::collection::vec(-1e9f64..1e9, 5)),
                1..20,
            )
        ) {
            let samples: Vec<Sample> = rows
                .into_iter()
                .map(|(src, t, l, v)| Sample {
                    data: FeatureVector::new(v).unwrap(),
                    label: Label(l),
                    time: Timestamp::new(t).unwrap(),
                    source: VehicleId(src),
                })
                .collect();
            let mut buf = Vec::new();
            write_samples_csv(&mut buf, &samples).unwrap();
            let back = read_samples_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), samples.len());
            for (a, b) in samples.iter().zip(&back) {
                prop_assert_eq!(a.source, b.source);
                prop_assert_eq!(a.label, b.label);
                prop_assert_eq!(a.time.value().to_bits(), b.time.value().to_bits());
                for (x, y) in a.data.as_slice().iter().zip(b.data.as_slice()) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }
}
