//! Classification datasets: `.ts` (UEA archive) and CSV readers/writers,
//! seeded splits, per-channel normalization and synthetic tasks.
//!
//! CSV layout: a header row followed by one row per (sequence, time step),
//! `id,time,c0,…,c{p-1},label`. Rows of a sequence must be contiguous and
//! ordered by `time`. Both readers tolerate CRLF line endings and skip lines
//! starting with `#`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Floor on the per-channel standard deviation used for z-scoring.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Per-channel mean and population standard deviation over every time
    /// step of every sequence.
    pub fn from_sequences(seqs: &[Matrix]) -> Result<Self> {
        let p = seqs
            .first()
            .map(Matrix::cols)
            .ok_or_else(|| Error::config("cannot compute channel statistics of an empty set"))?;
        let mut sum = vec![0.0; p];
        let mut count = 0usize;
        for s in seqs {
            for r in s.row_iter() {
                for (a, v) in sum.iter_mut().zip(r) {
                    *a += v;
                }
                count += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; p];
        for s in seqs {
            for r in s.row_iter() {
                for ((a, v), m) in sq.iter_mut().zip(r).zip(&mean) {
                    *a += (v - m) * (v - m);
                }
            }
        }
        let std = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    /// Per-channel z-score with the floored standard deviation.
    pub fn normalize(&self, seq: &Matrix) -> Matrix {
        let mut out = seq.clone();
        for t in 0..out.rows() {
            for (i, v) in out.row_mut(t).iter_mut().enumerate() {
                *v = (*v - self.mean[i]) / self.std[i].max(STD_FLOOR);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub name: String,
    pub sequences: Vec<Matrix>,
    pub labels: Vec<usize>,
    /// Label strings; `labels[i]` indexes into this list.
    pub class_names: Vec<String>,
    /// Statistics applied by [`normalize_splits`], if any.
    pub stats: Option<ChannelStats>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn seq_len(&self) -> usize {
        self.sequences.first().map_or(0, Matrix::rows)
    }

    pub fn num_channels(&self) -> usize {
        self.sequences.first().map_or(0, Matrix::cols)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequences.len() != self.labels.len() {
            return Err(Error::Validation(format!(
                "{} sequences but {} labels",
                self.sequences.len(),
                self.labels.len()
            )));
        }
        let (t, p) = (self.seq_len(), self.num_channels());
        for (i, s) in self.sequences.iter().enumerate() {
            if s.rows() != t || s.cols() != p {
                return Err(Error::Validation(format!(
                    "sequence {i} is {}x{}, expected {t}x{p}",
                    s.rows(),
                    s.cols()
                )));
            }
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.class_count()) {
            return Err(Error::Validation(format!(
                "label {l} outside [0, {})",
                self.class_count()
            )));
        }
        Ok(())
    }

    /// The sequences at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            stats: self.stats.clone(),
        }
    }

    /// Fraction of samples per class.
    pub fn class_balance(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.class_count()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        let n = self.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a `.ts` file: `@` header directives, then `@data` lines whose
/// dimensions are separated by `:` and values by `,`, the last field being
/// the class label. Unknown directives are skipped with a warning.
pub fn load_ts(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ts(&text, path)
}

fn parse_ts(text: &str, path: &Path) -> Result<Dataset> {
    let mut name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut declared: Option<Vec<String>> = None;
    let mut in_data = false;
    let mut sequences = Vec::new();
    let mut raw_labels = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_data {
            if !line.starts_with('@') {
                return Err(parse_err(path, lineno, "expected a header directive before @data"));
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or("").to_ascii_lowercase();
            match key.as_str() {
                "@problemname" => name = parts.collect::<Vec<_>>().join(" "),
                "@classlabel" => match parts.next().map(str::to_ascii_lowercase).as_deref() {
                    Some("true") => {
                        let labels: Vec<String> = parts.map(str::to_string).collect();
                        if labels.is_empty() {
                            return Err(parse_err(path, lineno, "@classLabel true lists no labels"));
                        }
                        declared = Some(labels);
                    }
                    Some("false") => {
                        return Err(parse_err(path, lineno, "unlabelled data is not supported"))
                    }
                    _ => return Err(parse_err(path, lineno, "malformed @classLabel directive")),
                },
                "@timestamps" => {
                    if parts.next().is_some_and(|v| v.eq_ignore_ascii_case("true")) {
                        return Err(parse_err(path, lineno, "timestamped series are not supported"));
                    }
                }
                "@data" => in_data = true,
                "@univariate" | "@multivariate" | "@dimensions" | "@equallength"
                | "@serieslength" | "@missing" | "@targetlabel" => {}
                other => log::warn!("{}:{lineno}: ignoring directive {other}", path.display()),
            }
            continue;
        }

        let fields: Vec<&str> = line.split(':').collect();
        if fields.len() < 2 {
            return Err(parse_err(path, lineno, "data line needs at least one dimension and a label"));
        }
        let label = fields[fields.len() - 1].trim().to_string();
        let mut dims: Vec<Vec<f64>> = Vec::with_capacity(fields.len() - 1);
        for (k, f) in fields[..fields.len() - 1].iter().enumerate() {
            let mut vals = Vec::new();
            for v in f.split(',') {
                let v = v.trim();
                if v == "?" || v.eq_ignore_ascii_case("nan") {
                    return Err(parse_err(path, lineno, format!("missing value in dimension {k}")));
                }
                vals.push(v.parse::<f64>().map_err(|_| {
                    parse_err(path, lineno, format!("dimension {k}: cannot parse '{v}' as a number"))
                })?);
            }
            dims.push(vals);
        }
        let t_len = dims[0].len();
        if let Some(k) = dims.iter().position(|d| d.len() != t_len) {
            return Err(Error::Validation(format!(
                "{}:{lineno}: dimension {k} has {} values, dimension 0 has {t_len}",
                path.display(),
                dims[k].len()
            )));
        }
        let p = dims.len();
        let mut m = Matrix::zeros(t_len, p);
        for (k, d) in dims.iter().enumerate() {
            for (t, v) in d.iter().enumerate() {
                m.set(t, k, *v);
            }
        }
        sequences.push(m);
        raw_labels.push((lineno, label));
    }
    if !in_data {
        return Err(parse_err(path, text.lines().count(), "missing @data section"));
    }

    let class_names = match declared {
        Some(l) => l,
        None => {
            let mut l: Vec<String> = raw_labels.iter().map(|(_, s)| s.clone()).collect();
            l.sort();
            l.dedup();
            l
        }
    };
    let mut labels = Vec::with_capacity(raw_labels.len());
    for (lineno, l) in &raw_labels {
        let idx = class_names
            .iter()
            .position(|c| c == l)
            .ok_or_else(|| parse_err(path, *lineno, format!("label '{l}' not declared in @classLabel")))?;
        labels.push(idx);
    }
    let ds = Dataset {
        name,
        sequences,
        labels,
        class_names,
        stats: None,
    };
    ds.validate()?;
    Ok(ds)
}

fn fmt_value(v: f64) -> String {
    // shortest representation that parses back to the same f64
    format!("{v:?}")
}

pub fn write_ts(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ds.validate()?;
    let mut out = String::new();
    let _ = writeln!(out, "@problemName {}", if ds.name.is_empty() { "dataset" } else { &ds.name });
    let _ = writeln!(out, "@timeStamps false");
    let _ = writeln!(out, "@missing false");
    let _ = writeln!(out, "@univariate {}", ds.num_channels() == 1);
    let _ = writeln!(out, "@dimensions {}", ds.num_channels());
    let _ = writeln!(out, "@equalLength true");
    let _ = writeln!(out, "@seriesLength {}", ds.seq_len());
    let _ = writeln!(out, "@classLabel true {}", ds.class_names.join(" "));
    let _ = writeln!(out, "@data");
    for (s, &l) in ds.sequences.iter().zip(&ds.labels) {
        for k in 0..s.cols() {
            let vals: Vec<String> = (0..s.rows()).map(|t| fmt_value(s.get(t, k))).collect();
            out.push_str(&vals.join(","));
            out.push(':');
        }
        out.push_str(&ds.class_names[l]);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(path, 0, format!("{other:?}")),
        })?;
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if headers.len() < 4 {
        return Err(parse_err(path, 1, "expected header id,time,<channels…>,label"));
    }
    let p = headers.len() - 3;

    let mut sequences = Vec::new();
    let mut raw_labels: Vec<(usize, String)> = Vec::new();
    let mut cur_id: Option<String> = None;
    let mut rows: Vec<f64> = Vec::new();
    let mut cur_label = String::new();
    let flush = |rows: &mut Vec<f64>, sequences: &mut Vec<Matrix>| {
        let t = rows.len() / p;
        sequences.push(Matrix::from_vec(t, p, std::mem::take(rows)));
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |pos| pos.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |pos| pos.line() as usize);
        if rec.len() != headers.len() {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", headers.len(), rec.len())));
        }
        let id = rec[0].to_string();
        let label = rec[rec.len() - 1].to_string();
        if cur_id.as_deref() != Some(id.as_str()) {
            if cur_id.is_some() {
                flush(&mut rows, &mut sequences);
            }
            cur_id = Some(id);
            cur_label = label.clone();
            raw_labels.push((line, label.clone()));
        } else if label != cur_label {
            return Err(parse_err(path, line, "label changes within a sequence"));
        }
        for k in 0..p {
            let v = &rec[2 + k];
            rows.push(v.parse::<f64>().map_err(|_| {
                parse_err(path, line, format!("cannot parse '{v}' as a number"))
            })?);
        }
    }
    if cur_id.is_some() {
        flush(&mut rows, &mut sequences);
    }
    let mut class_names: Vec<String> = raw_labels.iter().map(|(_, l)| l.clone()).collect();
    class_names.sort();
    class_names.dedup();
    let labels = raw_labels
        .iter()
        .map(|(_, l)| class_names.iter().position(|c| c == l).unwrap_or(0))
        .collect();
    let ds = Dataset {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sequences,
        labels,
        class_names,
        stats: None,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ds.validate()?;
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Usage(format!("{other:?}")),
    })?;
    let to_err = |e: csv::Error| Error::Usage(format!("writing {}: {e}", path.display()));
    let mut header = vec!["id".to_string(), "time".to_string()];
    header.extend((0..ds.num_channels()).map(|k| format!("c{k}")));
    header.push("label".into());
    w.write_record(&header).map_err(to_err)?;
    for (i, (s, &l)) in ds.sequences.iter().zip(&ds.labels).enumerate() {
        for t in 0..s.rows() {
            let mut rec = vec![i.to_string(), t.to_string()];
            rec.extend(s.row(t).iter().map(|v| fmt_value(*v)));
            rec.push(ds.class_names[l].clone());
            w.write_record(&rec).map_err(to_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads by extension: `.csv` as CSV, anything else as `.ts`.
pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        load_csv(path)
    } else {
        load_ts(path)
    }
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.7, 0.15, 0.15);

/// Seeded train/validation/test partition. Membership is decided by a
/// seeded shuffle; each part keeps the original sample order.
pub fn split(ds: &Dataset, seed: u64, fractions: (f64, f64, f64)) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions must be in [0, 1] and sum to 1, got ({ft}, {fv}, {fs})"
        )));
    }
    let n = ds.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ft * n as f64).round() as usize;
    let n_val = ((fv * n as f64).round() as usize).min(n - n_train);
    let parts = [
        (ft, "train", &perm[..n_train]),
        (fv, "validation", &perm[n_train..n_train + n_val]),
        (fs, "test", &perm[n_train + n_val..]),
    ];
    for (f, name, idx) in &parts {
        if *f > 0.0 && idx.is_empty() {
            return Err(Error::config(format!(
                "{name} partition is empty ({n} samples, fraction {f})"
            )));
        }
    }
    let take = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        ds.subset(&idx)
    };
    Ok((take(parts[0].2), take(parts[1].2), take(parts[2].2)))
}

/// Z-scores all three parts with statistics of `train` only.
pub fn normalize_splits(train: &mut Dataset, val: &mut Dataset, test: &mut Dataset) -> Result<ChannelStats> {
    let stats = ChannelStats::from_sequences(&train.sequences)?;
    for ds in [train, val, test] {
        for s in &mut ds.sequences {
            *s = stats.normalize(s);
        }
        ds.stats = Some(stats.clone());
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Label is the sign of the sum of channel 0 over the first `T/4` steps.
    SignOfSum,
    /// Label is the parity of the number of spikes in channel 0; two spikes
    /// are always at least `T/2` steps apart.
    LongParity,
}

impl SynthKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthKind::SignOfSum => "sign_of_sum",
            SynthKind::LongParity => "long_parity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sign_of_sum" => Ok(SynthKind::SignOfSum),
            "long_parity" => Ok(SynthKind::LongParity),
            other => Err(Error::config(format!(
                "unknown synthetic task '{other}' (expected sign_of_sum or long_parity)"
            ))),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Deterministic synthetic binary task.
///
/// `sign_of_sum`: channel 0 carries a per-sample drift `±U(0.05, 0.5)` plus
/// unit noise during the first `T/4` steps and pure noise afterwards;
/// channel 1 (if present) is a marker equal to 1 during the first `T/4`
/// steps; further channels are noise. `long_parity`: channel 0 holds zero,
/// one or two unit spikes (two spikes `≥ T/2` apart), other channels carry
/// noise of scale 0.1.
pub fn synth_task(kind: SynthKind, t_len: usize, p: usize, n_samples: usize, seed: u64) -> Result<Dataset> {
    if t_len < 8 {
        return Err(Error::config(format!("synthetic tasks need T >= 8, got {t_len}")));
    }
    if p == 0 {
        return Err(Error::config("synthetic tasks need at least one channel"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sequences = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut m = Matrix::zeros(t_len, p);
        let label = match kind {
            SynthKind::SignOfSum => {
                let window = t_len / 4;
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let drift = sign * rng.random_range(0.05..0.5);
                let mut sum = 0.0;
                for t in 0..t_len {
                    let v = if t < window { drift + normal(&mut rng) } else { normal(&mut rng) };
                    m.set(t, 0, v);
                    if t < window {
                        sum += v;
                    }
                    if p > 1 {
                        m.set(t, 1, if t < window { 1.0 } else { 0.0 });
                    }
                    for k in 2..p {
                        m.set(t, k, normal(&mut rng));
                    }
                }
                usize::from(sum > 0.0)
            }
            SynthKind::LongParity => {
                let odd = rng.random_bool(0.5);
                let spikes: Vec<usize> = if odd {
                    vec![rng.random_range(0..t_len)]
                } else if rng.random_bool(0.5) {
                    vec![]
                } else {
                    let half = t_len.div_ceil(2);
                    let first = rng.random_range(0..t_len - half);
                    vec![first, rng.random_range(first + half..t_len)]
                };
                for &s in &spikes {
                    m.set(s, 0, 1.0);
                }
                for t in 0..t_len {
                    for k in 1..p {
                        m.set(t, k, 0.1 * normal(&mut rng));
                    }
                }
                spikes.len() % 2
            }
        };
        sequences.push(m);
        labels.push(label);
    }
    Ok(Dataset {
        name: kind.as_str().into(),
        sequences,
        labels,
        class_names: vec!["0".into(), "1".into()],
        stats: None,
    })
}
