//! Sequence datasets: synthetic ECG-like generation, CSV ingestion and export,
//! z-score normalization, patient-level splitting and corruption.
//!
//! CSV layout (UTF-8, header required, time-major):
//!
//! ```text
//! patient_id,record_id,label,x_0_0,...,x_0_{d-1},x_1_0,...,x_{T-1}_{d-1}
//! ```
//!
//! Missing entries are written as `NA`. On load they are filled by carrying
//! the last observed value of the same channel forward (0.0 before the first
//! observation) and the mask is kept.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::math::{Rng, Vector};

/// One fixed-length multivariate window.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub patient_id: String,
    pub record_id: String,
    pub label: usize,
    pub inputs: Vec<Vector>,
    /// Time-major `T·d` flags, `true` = observed. `None` means fully observed.
    pub mask: Option<Vec<bool>>,
}

impl SequenceSample {
    pub fn new(
        patient_id: impl Into<String>,
        record_id: impl Into<String>,
        label: usize,
        inputs: Vec<Vector>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if inputs.len() < 2 {
            return Err(Error::SequenceTooShort {
                len: inputs.len(),
                min: 2,
            });
        }
        let d = inputs[0].len();
        for x in &inputs {
            check_dim("sample input length", d, x.len())?;
        }
        if let Some(m) = &mask {
            check_dim("sample mask length", inputs.len() * d, m.len())?;
        }
        Ok(SequenceSample {
            patient_id: patient_id.into(),
            record_id: record_id.into(),
            label,
            inputs,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn observed(&self, t: usize, j: usize) -> bool {
        self.mask
            .as_ref()
            .is_none_or(|m| m[t * self.input_dim() + j])
    }
}

/// Fills unobserved entries with the channel's last observed value.
fn impute_locf(inputs: &mut [Vector], mask: &[bool]) {
    let d = inputs[0].len();
    for j in 0..d {
        let mut last = 0.0;
        for (t, x) in inputs.iter_mut().enumerate() {
            if mask[t * d + j] {
                last = x[j];
            } else {
                x[j] = last;
            }
        }
    }
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Statistics over every time step of every sample in `data`.
    pub fn fit(data: &Dataset) -> Result<NormStats> {
        if data.samples.is_empty() {
            return Err(Error::param("train", "cannot fit statistics on an empty dataset"));
        }
        let d = data.input_dim;
        let mut sum = vec![0.0; d];
        let mut count = 0usize;
        for s in &data.samples {
            for x in &s.inputs {
                for (acc, v) in sum.iter_mut().zip(x.iter()) {
                    *acc += v;
                }
                count += 1;
            }
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut sq = vec![0.0; d];
        for s in &data.samples {
            for x in &s.inputs {
                for j in 0..d {
                    let c = x[j] - mean[j];
                    sq[j] += c * c;
                }
            }
        }
        let std: Vec<f64> = sq.iter().map(|s| (s / n).sqrt()).collect();
        for (index, (&s, &m)) in std.iter().zip(&mean).enumerate() {
            if !(s > f64::EPSILON * m.abs()) {
                return Err(Error::DegenerateFeature { index });
            }
        }
        Ok(NormStats { mean, std })
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        check_dim("normalization features", self.mean.len(), data.input_dim)?;
        let mut out = data.clone();
        for s in &mut out.samples {
            for x in &mut s.inputs {
                for j in 0..x.len() {
                    x[j] = (x[j] - self.mean[j]) / self.std[j];
                }
            }
        }
        out.normalization = Some(self.clone());
        Ok(out)
    }
}

/// A collection of samples sharing `(d, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SequenceSample>,
    pub num_classes: usize,
    pub input_dim: usize,
    pub window_length: usize,
    pub normalization: Option<NormStats>,
}

impl Dataset {
    pub fn new(samples: Vec<SequenceSample>, num_classes: usize) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::param("samples", "dataset is empty"))?;
        let (d, t) = (first.input_dim(), first.len());
        Self::with_shape(samples, num_classes, d, t)
    }

    fn with_shape(
        samples: Vec<SequenceSample>,
        num_classes: usize,
        input_dim: usize,
        window_length: usize,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::param("num_classes", "need at least 2 classes"));
        }
        for s in &samples {
            check_dim("sample window length", window_length, s.len())?;
            check_dim("sample input dim", input_dim, s.input_dim())?;
            if s.label >= num_classes {
                return Err(Error::param(
                    "label",
                    format!("{} out of range for {num_classes} classes", s.label),
                ));
            }
        }
        Ok(Dataset {
            samples,
            num_classes,
            input_dim,
            window_length,
            normalization: None,
        })
    }

    /// A dataset with the same shape holding `samples`.
    fn subset(&self, samples: Vec<SequenceSample>) -> Dataset {
        Dataset {
            samples,
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            window_length: self.window_length,
            normalization: self.normalization.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn refs(&self) -> Vec<&SequenceSample> {
        self.samples.iter().collect()
    }

    pub fn patients(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.patient_id.as_str()).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn check_compatible(&self, other: &Dataset) -> Result<()> {
        check_dim("dataset input dim", self.input_dim, other.input_dim)?;
        check_dim("dataset class count", self.num_classes, other.num_classes)
    }
}

/// Parameters of the synthetic ECG-like benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub sequences_per_patient: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    pub window_length: usize,
    pub noise_std: f64,
    pub missing_frac: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 20,
            sequences_per_patient: 10,
            num_classes: 3,
            input_dim: 2,
            window_length: 64,
            noise_std: 0.2,
            missing_frac: 0.0,
        }
    }
}

/// Per-patient morphology: amplitude scale, phase shift and baseline per channel.
struct Morphology {
    amplitude: Vec<f64>,
    phase: Vec<f64>,
    baseline: Vec<f64>,
}

impl Morphology {
    fn draw(rng: &mut Rng, d: usize) -> Self {
        Morphology {
            amplitude: (0..d).map(|_| 1.0 + 0.15 * rng.normal()).collect(),
            phase: (0..d).map(|_| 0.25 * rng.normal()).collect(),
            baseline: (0..d).map(|_| 0.1 * rng.normal()).collect(),
        }
    }
}

/// Clean class waveform at step `s` of `t` on channel `j`, before patient
/// morphology: a slow rhythm whose frequency depends on the class plus a
/// localized beat-like spike whose position and polarity depend on the class.
fn class_waveform(class: usize, classes: usize, j: usize, s: usize, t: usize, phase: f64) -> f64 {
    let u = s as f64 / t as f64;
    let freq = 2.0 + class as f64;
    let rhythm = 0.6 * (TAU * freq * u + phase + 0.7 * j as f64).sin();
    let center = 0.2 + 0.6 * class as f64 / (classes - 1) as f64;
    let width = 0.04;
    let polarity = if (class + j).is_multiple_of(2) { 1.0 } else { -1.0 };
    let spike = 1.5 * polarity * (-(u - center).powi(2) / (2.0 * width * width)).exp();
    rhythm + spike
}

const PATIENT_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const MASK_STREAM: u64 = 3;

/// Deterministic synthetic dataset. Labels are assigned round-robin over the
/// global sample index, so every patient with at least `C` sequences has all classes.
pub fn synth_generate(rng: &Rng, config: &SynthConfig) -> Result<Dataset> {
    let c = config;
    if c.num_classes < 2 {
        return Err(Error::param("num_classes", "need at least 2 classes"));
    }
    if c.window_length < 2 {
        return Err(Error::param("window_length", "need at least 2 steps"));
    }
    if c.input_dim == 0 || c.n_patients == 0 || c.sequences_per_patient == 0 {
        return Err(Error::param(
            "synth",
            "input_dim, n_patients and sequences_per_patient must be positive",
        ));
    }
    if !(c.noise_std >= 0.0) || !c.noise_std.is_finite() {
        return Err(Error::param("noise_std", "must be finite and >= 0"));
    }
    if !(0.0..1.0).contains(&c.missing_frac) {
        return Err(Error::param("missing_frac", "must be in [0, 1)"));
    }

    let (d, t) = (c.input_dim, c.window_length);
    let mut samples = Vec::with_capacity(c.n_patients * c.sequences_per_patient);
    for p in 0..c.n_patients {
        let morph = Morphology::draw(&mut rng.split(PATIENT_STREAM).split(p as u64), d);
        let patient_id = format!("P{p:03}");
        for s in 0..c.sequences_per_patient {
            let index = p * c.sequences_per_patient + s;
            let label = index % c.num_classes;
            let mut noise = rng.split(NOISE_STREAM).split(index as u64);
            let mut inputs = Vec::with_capacity(t);
            for step in 0..t {
                let x: Vec<f64> = (0..d)
                    .map(|j| {
                        let clean = morph.amplitude[j]
                            * class_waveform(label, c.num_classes, j, step, t, morph.phase[j])
                            + morph.baseline[j];
                        clean + c.noise_std * noise.normal()
                    })
                    .collect();
                inputs.push(Vector::from_raw(x));
            }
            let mask = if c.missing_frac > 0.0 {
                let mut mrng = rng.split(MASK_STREAM).split(index as u64);
                let mask: Vec<bool> = (0..t * d).map(|_| !mrng.bernoulli(c.missing_frac)).collect();
                impute_locf(&mut inputs, &mask);
                Some(mask)
            } else {
                None
            };
            samples.push(SequenceSample {
                patient_id: patient_id.clone(),
                record_id: format!("{patient_id}-{s:03}"),
                label,
                inputs,
                mask,
            });
        }
    }
    Dataset::with_shape(samples, c.num_classes, d, t)
}

fn parse_header(header: &csv::StringRecord) -> Result<(usize, usize)> {
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[0] != "patient_id" || cols[1] != "record_id" || cols[2] != "label" {
        return Err(Error::Schema(
            "header must start with patient_id,record_id,label".into(),
        ));
    }
    let value_cols = &cols[3..];
    let d = value_cols
        .iter()
        .take_while(|c| c.starts_with("x_0_"))
        .count();
    if d == 0 || !value_cols.len().is_multiple_of(d) {
        return Err(Error::Schema(format!(
            "cannot infer (T, d) from {} value columns",
            value_cols.len()
        )));
    }
    let t = value_cols.len() / d;
    for (m, name) in value_cols.iter().enumerate() {
        let expected = format!("x_{}_{}", m / d, m % d);
        if *name != expected {
            return Err(Error::Schema(format!(
                "column {} is `{name}`, expected `{expected}`",
                m + 3
            )));
        }
    }
    if t < 2 {
        return Err(Error::Schema("windows need at least 2 time steps".into()));
    }
    Ok((d, t))
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: err.to_string(),
    }
}

/// Reads a dataset in the CSV layout described in the module docs.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let (d, t) = parse_header(&header)?;
    let width = header.len();

    let mut samples = Vec::new();
    let mut max_label = 0;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(Error::Schema(format!(
                "line {line}: {} columns, header has {width}",
                record.len()
            )));
        }
        let label: usize = record[2].trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("label `{}` is not a class index", &record[2]),
        })?;
        max_label = max_label.max(label);
        let mut values = Vec::with_capacity(t * d);
        let mut mask = Vec::with_capacity(t * d);
        for (m, field) in record.iter().skip(3).enumerate() {
            let field = field.trim();
            if field == "NA" {
                values.push(0.0);
                mask.push(false);
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column x_{}_{}: `{field}` is not a number", m / d, m % d),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column x_{}_{}: non-finite value", m / d, m % d),
                });
            }
            values.push(v);
            mask.push(true);
        }
        let mut inputs: Vec<Vector> = values
            .chunks_exact(d)
            .map(|c| Vector::from_raw(c.to_vec()))
            .collect();
        let mask = if mask.iter().all(|&m| m) {
            None
        } else {
            impute_locf(&mut inputs, &mask);
            Some(mask)
        };
        samples.push(SequenceSample {
            patient_id: record[0].to_string(),
            record_id: record[1].to_string(),
            label,
            inputs,
            mask,
        });
    }
    if samples.is_empty() {
        return Err(Error::Schema("no data rows".into()));
    }
    Dataset::with_shape(samples, (max_label + 1).max(2), d, t)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file))
}

pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let io_err = |e: csv::Error| Error::Format(format!("csv write: {e}"));
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "patient_id".to_string(),
        "record_id".to_string(),
        "label".to_string(),
    ];
    for t in 0..data.window_length {
        for j in 0..data.input_dim {
            header.push(format!("x_{t}_{j}"));
        }
    }
    w.write_record(&header).map_err(io_err)?;
    for s in &data.samples {
        let mut row = vec![s.patient_id.clone(), s.record_id.clone(), s.label.to_string()];
        for (t, x) in s.inputs.iter().enumerate() {
            for (j, v) in x.iter().enumerate() {
                row.push(if s.observed(t, j) {
                    v.to_string()
                } else {
                    "NA".to_string()
                });
            }
        }
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush()
        .map_err(|e| Error::Format(format!("csv write: {e}")))
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(data, std::io::BufWriter::new(file))
}

/// Fits statistics on `train` only and applies them to `train` and `others`.
pub fn zscore_fit_apply(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(Dataset, Vec<Dataset>, NormStats)> {
    let stats = NormStats::fit(train)?;
    let train_n = stats.apply(train)?;
    let others_n = others
        .iter()
        .map(|d| stats.apply(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((train_n, others_n, stats))
}

/// Fractions of patients assigned to train/validation/test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.7,
            val_frac: 0.15,
            test_frac: 0.15,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::param("split", "fractions must be positive"));
        }
        if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param("split", "fractions must sum to 1"));
        }
        Ok(())
    }

    /// `(train, val, test)` patient counts: val and test are floored, the
    /// remainder goes to train.
    pub fn patient_counts(&self, n: usize) -> (usize, usize, usize) {
        let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let val = floor(self.val_frac);
        let test = floor(self.test_frac);
        (n.saturating_sub(val + test), val, test)
    }
}

/// Partitions samples by patient so no patient appears in two splits.
pub fn patient_split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let mut patients: Vec<&str> = data.patients().into_iter().collect();
    if patients.len() < 3 {
        return Err(Error::param(
            "patients",
            format!("need at least 3 distinct patients, got {}", patients.len()),
        ));
    }
    Rng::new(spec.seed).shuffle(&mut patients);
    let (n_train, n_val, n_test) = spec.patient_counts(patients.len());
    for (n, split) in [(n_train, "train"), (n_val, "validation"), (n_test, "test")] {
        if n == 0 {
            return Err(Error::SplitTooSmall { split });
        }
    }
    let assignment: BTreeMap<&str, usize> = patients
        .iter()
        .enumerate()
        .map(|(i, p)| (*p, usize::from(i >= n_train) + usize::from(i >= n_train + n_val)))
        .collect();

    let mut parts: [Vec<SequenceSample>; 3] = Default::default();
    for s in &data.samples {
        parts[assignment[s.patient_id.as_str()]].push(s.clone());
    }
    let [train, val, test] = parts;
    let out = (data.subset(train), data.subset(val), data.subset(test));
    for (d, split) in [(&out.0, "train"), (&out.1, "validation"), (&out.2, "test")] {
        if let Some(class) = d.class_counts().iter().position(|&c| c == 0) {
            return Err(Error::MissingClass { split, class });
        }
    }
    Ok(out)
}

/// Adds Gaussian noise to observed entries and masks a further `missing_frac`
/// of them (filled by carry-forward). Labels and ids are untouched.
pub fn corrupt(data: &Dataset, rng: &Rng, noise_std: f64, missing_frac: f64) -> Result<Dataset> {
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::param("noise_std", "must be finite and >= 0"));
    }
    if !(0.0..1.0).contains(&missing_frac) {
        return Err(Error::param("missing_frac", "must be in [0, 1)"));
    }
    if noise_std == 0.0 && missing_frac == 0.0 {
        return Ok(data.clone());
    }
    let mut out = data.clone();
    for (i, s) in out.samples.iter_mut().enumerate() {
        let mut noise = rng.split(NOISE_STREAM).split(i as u64);
        let mut mrng = rng.split(MASK_STREAM).split(i as u64);
        let d = s.input_dim();
        let mut mask = s.mask.take().unwrap_or_else(|| vec![true; s.len() * d]);
        for (t, x) in s.inputs.iter_mut().enumerate() {
            for j in 0..d {
                let z = noise.normal();
                let drop = mrng.bernoulli(missing_frac);
                let m = &mut mask[t * d + j];
                if *m {
                    if noise_std > 0.0 {
                        x[j] += noise_std * z;
                    }
                    if drop {
                        *m = false;
                    }
                }
            }
        }
        if mask.iter().all(|&m| m) {
            s.mask = None;
        } else {
            impute_locf(&mut s.inputs, &mask);
            s.mask = Some(mask);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        SynthConfig {
            n_patients: 10,
            sequences_per_patient: 4,
            window_length: 8,
            ..SynthConfig::default()
        }
    }

    fn two_step(patient: &str, label: usize, a: f64, b: f64) -> SequenceSample {
        SequenceSample::new(
            patient,
            format!("{patient}-r"),
            label,
            vec![Vector::new(vec![a]).unwrap(), Vector::new(vec![b]).unwrap()],
            None,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_sequences_repeat_within_patient() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            sequences_per_patient: 6,
            ..small_config()
        };
        let data = synth_generate(&Rng::new(1), &cfg).unwrap();
        // Same patient, same class (index 0 and 3 share label 0).
        assert_eq!(data.samples[0].label, data.samples[3].label);
        assert_eq!(data.samples[0].inputs, data.samples[3].inputs);
        // Different patients differ.
        assert_ne!(data.samples[0].inputs, data.samples[6].inputs);
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_generate(&Rng::new(4), &SynthConfig::default()).unwrap();
        let b = synth_generate(&Rng::new(4), &SynthConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&Rng::new(5), &SynthConfig::default()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_default_counts() {
        let data = synth_generate(&Rng::new(0), &SynthConfig::default()).unwrap();
        assert_eq!(data.len(), 200);
        assert_eq!(data.class_counts(), vec![67, 67, 66]);
        assert_eq!(data.patients().len(), 20);
        assert_eq!((data.input_dim, data.window_length), (2, 64));
    }

    #[test]
    fn synth_noise_perturbation_is_proportional() {
        let base = SynthConfig {
            noise_std: 0.0,
            ..small_config()
        };
        let eps = 1e-6;
        let a = synth_generate(&Rng::new(2), &base).unwrap();
        let b = synth_generate(&Rng::new(2), &SynthConfig { noise_std: eps, ..base }).unwrap();
        let max_diff = a
            .samples
            .iter()
            .zip(&b.samples)
            .flat_map(|(s, q)| s.inputs.iter().zip(&q.inputs))
            .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max);
        assert!(max_diff > 0.0 && max_diff < 10.0 * eps, "{max_diff}");
    }

    #[test]
    fn synth_missing_entries_are_imputed() {
        let cfg = SynthConfig {
            missing_frac: 0.3,
            ..small_config()
        };
        let data = synth_generate(&Rng::new(3), &cfg).unwrap();
        let s = &data.samples[0];
        let mask = s.mask.as_ref().unwrap();
        let d = s.input_dim();
        for t in 1..s.len() {
            for j in 0..d {
                if !mask[t * d + j] {
                    assert_eq!(s.inputs[t][j], s.inputs[t - 1][j]);
                }
            }
        }
    }

    #[test]
    fn synth_rejects_bad_parameters() {
        let bad = SynthConfig {
            num_classes: 1,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&Rng::new(0), &bad).is_err());
        let bad = SynthConfig {
            missing_frac: 1.0,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&Rng::new(0), &bad).is_err());
    }

    const THREE_ROWS: &str = "patient_id,record_id,label,x_0_0,x_0_1,x_1_0,x_1_1\n\
        A,a1,0,1.0,2.0,3.0,4.0\n\
        A,a2,1,NA,2.5,3.5,NA\n\
        B,b1,2,-1,0,1e-3,5\n";

    #[test]
    fn csv_three_rows() {
        let data = read_csv(THREE_ROWS.as_bytes()).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!((data.input_dim, data.window_length, data.num_classes), (2, 2, 3));
        let s = &data.samples[1];
        assert_eq!(s.mask.as_deref(), Some(&[false, true, true, false][..]));
        assert_eq!(s.inputs[0].as_slice(), &[0.0, 2.5]);
        assert_eq!(s.inputs[1].as_slice(), &[3.5, 2.5]);
        assert!(data.samples[0].mask.is_none());
    }

    #[test]
    fn csv_non_numeric_names_line() {
        let text = "patient_id,record_id,label,x_0_0,x_1_0\nA,a,0,1,2\nA,b,0,1,oops\n";
        match read_csv(text.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_ragged_rows_are_schema_errors() {
        let text = "patient_id,record_id,label,x_0_0,x_1_0\nA,a,0,1,2\nA,b,0,1\n";
        assert!(matches!(read_csv(text.as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn csv_bad_header() {
        let text = "patient_id,record_id,label,x_0_0,x_2_0\nA,a,0,1,2\n";
        assert!(matches!(read_csv(text.as_bytes()), Err(Error::Schema(_))));
        let text = "id,record_id,label,x_0_0,x_1_0\nA,a,0,1,2\n";
        assert!(matches!(read_csv(text.as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn csv_round_trip_with_missing() {
        let cfg = SynthConfig {
            missing_frac: 0.2,
            ..small_config()
        };
        let data = synth_generate(&Rng::new(8), &cfg).unwrap();
        let mut buf = Vec::new();
        write_csv(&data, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn zscore_hand_case() {
        let train = Dataset::new(vec![two_step("A", 0, 1.0, 3.0), two_step("B", 1, 1.0, 3.0)], 2)
            .unwrap();
        let (n, _, stats) = zscore_fit_apply(&train, &[]).unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert_eq!(stats.std, vec![1.0]);
        assert_eq!(n.samples[0].inputs[0][0], -1.0);
        assert_eq!(n.samples[0].inputs[1][0], 1.0);
    }

    #[test]
    fn zscore_is_idempotent_and_train_only() {
        let data = synth_generate(&Rng::new(9), &small_config()).unwrap();
        let (train, val, test) = patient_split(&data, &SplitSpec::default()).unwrap();
        let (tn, others, stats) = zscore_fit_apply(&train, &[&val, &test]).unwrap();
        let again = NormStats::fit(&tn).unwrap();
        for j in 0..data.input_dim {
            assert!(again.mean[j].abs() < 1e-9);
            assert!((again.std[j] - 1.0).abs() < 1e-9);
        }
        let tn2 = again.apply(&tn).unwrap();
        for (a, b) in tn.samples.iter().zip(&tn2.samples) {
            for (x, y) in a.inputs.iter().zip(&b.inputs) {
                for (u, v) in x.iter().zip(y.iter()) {
                    assert!((u - v).abs() < 1e-9);
                }
            }
        }
        let test_stats = NormStats::fit(&others[1]).unwrap();
        assert!(test_stats.mean.iter().any(|m| m.abs() > 1e-6));
        // Mutating held-out data leaves the fitted statistics unchanged.
        let mut val2 = val.clone();
        val2.samples[0].inputs[0][0] += 100.0;
        let (_, _, stats2) = zscore_fit_apply(&train, &[&val2, &test]).unwrap();
        assert_eq!(stats, stats2);
    }

    #[test]
    fn zscore_constant_feature() {
        let train = Dataset::new(vec![two_step("A", 0, 2.0, 2.0), two_step("B", 1, 2.0, 2.0)], 2)
            .unwrap();
        assert!(matches!(
            zscore_fit_apply(&train, &[]),
            Err(Error::DegenerateFeature { index: 0 })
        ));
    }

    #[test]
    fn split_counts_and_disjointness() {
        let data = synth_generate(&Rng::new(0), &SynthConfig::default()).unwrap();
        let spec = SplitSpec::default();
        assert_eq!(spec.patient_counts(20), (14, 3, 3));
        let (a, b, c) = patient_split(&data, &spec).unwrap();
        assert_eq!((a.patients().len(), b.patients().len(), c.patients().len()), (14, 3, 3));
        assert_eq!(a.len() + b.len() + c.len(), data.len());
        assert!(a.patients().is_disjoint(&b.patients()));
        assert!(a.patients().is_disjoint(&c.patients()));
        assert!(b.patients().is_disjoint(&c.patients()));
        let again = patient_split(&data, &spec).unwrap();
        assert_eq!(again.0, a);
        let other = patient_split(&data, &SplitSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(other.0.patients(), a.patients());
    }

    #[test]
    fn split_too_small() {
        let data = synth_generate(
            &Rng::new(0),
            &SynthConfig {
                n_patients: 4,
                ..small_config()
            },
        )
        .unwrap();
        assert!(matches!(
            patient_split(&data, &SplitSpec::default()),
            Err(Error::SplitTooSmall { .. })
        ));
        let bad = SplitSpec {
            train_frac: 0.5,
            ..SplitSpec::default()
        };
        assert!(patient_split(&data, &bad).is_err());
    }

    #[test]
    fn corrupt_identity_and_statistics() {
        let data = synth_generate(&Rng::new(0), &small_config()).unwrap();
        assert_eq!(corrupt(&data, &Rng::new(1), 0.0, 0.0).unwrap(), data);

        let zeros: Vec<SequenceSample> = (0..50)
            .map(|i| {
                SequenceSample::new(
                    format!("P{i}"),
                    "r",
                    i % 2,
                    vec![Vector::zeros(2); 100],
                    None,
                )
                .unwrap()
            })
            .collect();
        let zero = Dataset::new(zeros, 2).unwrap();
        let noisy = corrupt(&zero, &Rng::new(3), 0.5, 0.0).unwrap();
        let vals: Vec<f64> = noisy
            .samples
            .iter()
            .flat_map(|s| s.inputs.iter().flat_map(|x| x.iter().copied()))
            .collect();
        assert_eq!(vals.len(), 10_000);
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - 0.5).abs() <= 0.025, "{std}");

        let masked = corrupt(&zero, &Rng::new(3), 0.0, 0.3).unwrap();
        let observed = masked
            .samples
            .iter()
            .flat_map(|s| s.mask.as_ref().unwrap().iter())
            .filter(|&&m| m)
            .count() as f64
            / 10_000.0;
        assert!((observed - 0.7).abs() <= 0.02, "{observed}");
        assert_eq!(masked.class_counts(), zero.class_counts());
    }
}
