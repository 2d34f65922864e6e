//! Deterministic synthetic datasets and an optional CSV import.

use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{Batch, Targets};
use crate::rng::{mix_seed, NormalStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    GaussianBlobs,
    TwoSpirals,
    TokenSequences,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian_blobs" => Ok(DatasetKind::GaussianBlobs),
            "two_spirals" => Ok(DatasetKind::TwoSpirals),
            "token_sequences" => Ok(DatasetKind::TokenSequences),
            _ => Err(Error::config(format!("unknown dataset kind `{s}`"))),
        }
    }
}

/// Dataset with default shapes: blobs (2 features, 3 classes), spirals,
/// or token grids compatible with the default attention model.
pub fn make_dataset(kind: DatasetKind, n_batches: usize, seed: u64) -> Vec<Batch> {
    match kind {
        DatasetKind::GaussianBlobs => gaussian_blobs(n_batches, 32, 2, 3, 4.0, seed),
        DatasetKind::TwoSpirals => two_spirals(n_batches, 32, 0.1, seed),
        DatasetKind::TokenSequences => token_sequences(n_batches, 16, 8, 16, 3, seed),
    }
}

/// Gaussian blobs: class means sit on a circle of radius `separation` in
/// the first two feature dims; unit-variance noise per dim. Classes cycle
/// so every batch is balanced when `batch_size % num_classes == 0`.
pub fn gaussian_blobs(
    n_batches: usize,
    batch_size: usize,
    feature_dim: usize,
    num_classes: usize,
    separation: f64,
    seed: u64,
) -> Vec<Batch> {
    assert!(feature_dim >= 2, "blobs need at least two feature dims");
    let mut out = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let mut stream = NormalStream::new(mix_seed(seed, b as u64));
        let mut inputs = Vec::with_capacity(batch_size * feature_dim);
        let mut classes = Vec::with_capacity(batch_size);
        for i in 0..batch_size {
            let c = i % num_classes;
            let angle = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
            for j in 0..feature_dim {
                let mean = match j {
                    0 => separation * angle.cos(),
                    1 => separation * angle.sin(),
                    _ => 0.0,
                };
                inputs.push(mean + stream.next_normal());
            }
            classes.push(c);
        }
        out.push(
            Batch::new(inputs, batch_size, feature_dim, Targets::Classes(classes))
                .expect("generated batch is consistent"),
        );
    }
    out
}

/// Two interleaved spirals, the classic non-linearly-separable pair.
pub fn two_spirals(n_batches: usize, batch_size: usize, noise: f64, seed: u64) -> Vec<Batch> {
    let mut out = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let mut stream = NormalStream::new(mix_seed(seed, b as u64));
        let mut inputs = Vec::with_capacity(batch_size * 2);
        let mut classes = Vec::with_capacity(batch_size);
        for i in 0..batch_size {
            let c = i % 2;
            // Radius parameter from a uniform draw so batches differ.
            let u = stream.next_uniform();
            let t = 0.5 + 2.5 * std::f64::consts::PI * u;
            let phase = c as f64 * std::f64::consts::PI;
            inputs.push(t * (t + phase).cos() / 10.0 + noise * stream.next_normal());
            inputs.push(t * (t + phase).sin() / 10.0 + noise * stream.next_normal());
            classes.push(c);
        }
        out.push(
            Batch::new(inputs, batch_size, 2, Targets::Classes(classes))
                .expect("generated batch is consistent"),
        );
    }
    out
}

/// Integer token grids: each class draws tokens from its own seeded
/// distribution over the vocabulary, so sequences are classifiable from
/// token statistics alone.
pub fn token_sequences(
    n_batches: usize,
    batch_size: usize,
    seq_len: usize,
    vocab: usize,
    num_classes: usize,
    seed: u64,
) -> Vec<Batch> {
    // Class-conditional token distributions, shared by all batches.
    let mut dist_stream = NormalStream::new(mix_seed(seed, 0x64697374));
    let mut class_cdf = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let logits: Vec<f64> = (0..vocab).map(|_| 1.5 * dist_stream.next_normal()).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        class_cdf.push(cdf);
    }

    let mut out = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let mut stream = NormalStream::new(mix_seed(seed, b as u64));
        let mut inputs = Vec::with_capacity(batch_size * seq_len);
        let mut classes = Vec::with_capacity(batch_size);
        for i in 0..batch_size {
            let c = i % num_classes;
            let cdf = &class_cdf[c];
            for _ in 0..seq_len {
                let u = stream.next_uniform();
                let tok = cdf.iter().position(|&p| u <= p).unwrap_or(vocab - 1);
                inputs.push(tok as f64);
            }
            classes.push(c);
        }
        out.push(
            Batch::new(inputs, batch_size, seq_len, Targets::Classes(classes))
                .expect("generated batch is consistent"),
        );
    }
    out
}

/// Batches that carry nothing but a distinct tag value. Objectives with
/// per-batch noise (the jittered quadratic) derive their offsets from the
/// batch contents, so distinct tags give distinct minibatches.
pub fn batch_tags(n: usize) -> Vec<Batch> {
    (0..n)
        .map(|i| {
            Batch::new(vec![i as f64], 1, 1, Targets::None).expect("tag batch is consistent")
        })
        .collect()
}

/// Loads tabular classification data: header row, every column but the
/// last parsed as f64 features, last column as integer class label.
pub fn load_csv_batches(path: &Path, batch_size: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be ≥ 1"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let cols = headers.len();
    if cols < 2 {
        return Err(Error::format("csv needs at least one feature column and a label"));
    }
    let feature_dim = cols - 1;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        if record.len() != cols {
            return Err(Error::format(format!(
                "row {}: {} fields, expected {cols}",
                line + 2,
                record.len()
            )));
        }
        for field in record.iter().take(feature_dim) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(format!("row {}: bad feature `{field}`", line + 2)))?;
            features.push(v);
        }
        let label_field = record.get(feature_dim).unwrap().trim();
        let label: usize = label_field
            .parse()
            .map_err(|_| Error::format(format!("row {}: bad label `{label_field}`", line + 2)))?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::format("csv contains no data rows"));
    }

    let mut batches = Vec::new();
    let mut row = 0;
    while row < labels.len() {
        let take = batch_size.min(labels.len() - row);
        let inputs = features[row * feature_dim..(row + take) * feature_dim].to_vec();
        let classes = labels[row..row + take].to_vec();
        batches.push(Batch::new(inputs, take, feature_dim, Targets::Classes(classes))?);
        row += take;
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn same_seed_gives_identical_batches() {
        let a = gaussian_blobs(3, 8, 2, 2, 4.0, 11);
        let b = gaussian_blobs(3, 8, 2, 2, 4.0, 11);
        assert_eq!(a, b);
        let c = token_sequences(2, 4, 6, 16, 3, 5);
        let d = token_sequences(2, 4, 6, 16, 3, 5);
        assert_eq!(c, d);
    }

    #[test]
    fn single_batch_count() {
        assert_eq!(make_dataset(DatasetKind::GaussianBlobs, 1, 1).len(), 1);
        assert_eq!(make_dataset(DatasetKind::TwoSpirals, 1, 1).len(), 1);
        assert_eq!(make_dataset(DatasetKind::TokenSequences, 1, 1).len(), 1);
    }

    #[test]
    fn token_grids_are_integers_in_vocab() {
        let batches = token_sequences(2, 4, 8, 16, 3, 7);
        for b in &batches {
            for i in 0..b.batch_size() {
                for &t in b.example(i) {
                    assert_eq!(t.fract(), 0.0);
                    assert!((0.0..16.0).contains(&t));
                }
            }
        }
    }

    #[test]
    fn csv_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "x1,x2,label").unwrap();
        writeln!(f, "0.5,-1.0,0").unwrap();
        writeln!(f, "1.5,2.0,1").unwrap();
        writeln!(f, "-0.25,0.75,1").unwrap();
        drop(f);

        let batches = load_csv_batches(&path, 2).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].batch_size(), 2);
        assert_eq!(batches[1].batch_size(), 1);
        assert_eq!(batches[0].example(0), &[0.5, -1.0]);
        assert_eq!(batches[0].class(1), Some(1));
    }

    #[test]
    fn csv_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x,label\noops,0\n").unwrap();
        assert!(load_csv_batches(&path, 4).is_err());
    }
}
