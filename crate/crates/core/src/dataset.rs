//! Loaders for the Satellite (Statlog Landsat), Letter and USPS benchmarks.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Satellite,
    Letter,
    Usps,
}

impl DatasetName {
    pub const ALL: [DatasetName; 3] = [DatasetName::Satellite, DatasetName::Letter, DatasetName::Usps];

    /// (train rows, test rows, features, classes)
    pub fn shape(self) -> (usize, usize, usize, usize) {
        match self {
            DatasetName::Satellite => (4435, 2000, 36, 6),
            DatasetName::Letter => (16000, 4000, 16, 26),
            DatasetName::Usps => (7291, 2007, 256, 10),
        }
    }

    /// Conventional file names of the public distributions, relative to a
    /// data directory.
    pub fn default_files(self) -> &'static [&'static str] {
        match self {
            DatasetName::Satellite => &["sat.trn", "sat.tst"],
            DatasetName::Letter => &["letter-recognition.data"],
            DatasetName::Usps => &["zip.train", "zip.test"],
        }
    }

    pub fn default_paths(self, dir: impl AsRef<Path>) -> Vec<PathBuf> {
        self.default_files().iter().map(|f| dir.as_ref().join(f)).collect()
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetName::Satellite => "satellite",
            DatasetName::Letter => "letter",
            DatasetName::Usps => "usps",
        })
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "satellite" | "sat" => Ok(DatasetName::Satellite),
            "letter" => Ok(DatasetName::Letter),
            "usps" => Ok(DatasetName::Usps),
            other => Err(Error::InvalidArgument(format!("unknown dataset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub train_features: DMatrix<f64>,
    pub train_labels: Vec<usize>,
    pub test_features: DMatrix<f64>,
    pub test_labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        train_features: DMatrix<f64>,
        train_labels: Vec<usize>,
        test_features: DMatrix<f64>,
        test_labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        if train_features.nrows() != train_labels.len() || test_features.nrows() != test_labels.len() {
            return Err(Error::Dimension("feature rows and label counts differ".into()));
        }
        if train_features.ncols() != test_features.ncols() {
            return Err(Error::Dimension(format!(
                "train has {} features, test has {}",
                train_features.ncols(),
                test_features.ncols()
            )));
        }
        if let Some(l) = train_labels.iter().chain(&test_labels).find(|l| **l >= n_classes) {
            return Err(Error::InvalidArgument(format!("label {l} out of range for {n_classes} classes")));
        }
        Ok(Self {
            name: name.into(),
            train_features,
            train_labels,
            test_features,
            test_labels,
            n_classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.train_features.ncols()
    }

    /// Training rows of class `m`.
    pub fn class_train_rows(&self, m: usize) -> DMatrix<f64> {
        let idx: Vec<usize> = (0..self.train_labels.len()).filter(|&i| self.train_labels[i] == m).collect();
        self.train_features.select_rows(&idx)
    }

    /// Observed (min, max) over all feature values.
    pub fn value_range(&self) -> (f64, f64) {
        self.train_features
            .iter()
            .chain(self.test_features.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    }
}

struct Parsed {
    features: Vec<f64>,
    labels: Vec<usize>,
    rows: usize,
    last_line: usize,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_number(tok: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

/// Parses non-empty lines, each giving `p` features and one label token.
fn parse_lines<F>(text: &str, path: &Path, p: usize, mut row: F) -> Result<Parsed>
where
    F: FnMut(&str, usize, &mut Vec<f64>) -> Result<usize>,
{
    let mut out = Parsed {
        features: Vec::new(),
        labels: Vec::new(),
        rows: 0,
        last_line: 0,
    };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let before = out.features.len();
        let label = row(line, line_no, &mut out.features)?;
        if out.features.len() - before != p {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {p} features, found {}", out.features.len() - before),
            ));
        }
        out.labels.push(label);
        out.rows += 1;
        out.last_line = line_no;
    }
    Ok(out)
}

fn satellite_rows(text: &str, path: &Path) -> Result<Parsed> {
    parse_lines(text, path, 36, |line, n, feats| {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 37 {
            return Err(parse_err(path, n, format!("expected 37 fields, found {}", toks.len())));
        }
        for t in &toks[..36] {
            let v: i64 = t.parse().map_err(|_| parse_err(path, n, format!("not an integer: {t:?}")))?;
            feats.push(v as f64);
        }
        match toks[36] {
            "1" => Ok(0),
            "2" => Ok(1),
            "3" => Ok(2),
            "4" => Ok(3),
            "5" => Ok(4),
            "7" => Ok(5),
            other => Err(parse_err(path, n, format!("unknown label {other:?}"))),
        }
    })
}

fn letter_rows(text: &str, path: &Path) -> Result<Parsed> {
    parse_lines(text, path, 16, |line, n, feats| {
        let toks: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if toks.len() != 17 {
            return Err(parse_err(path, n, format!("expected 17 fields, found {}", toks.len())));
        }
        let label = match toks[0].as_bytes() {
            [c @ b'A'..=b'Z'] => (c - b'A') as usize,
            _ => return Err(parse_err(path, n, format!("unknown label {:?}", toks[0]))),
        };
        for t in &toks[1..] {
            let v: i64 = t.parse().map_err(|_| parse_err(path, n, format!("not an integer: {t:?}")))?;
            feats.push(v as f64);
        }
        Ok(label)
    })
}

fn usps_rows(text: &str, path: &Path) -> Result<Parsed> {
    parse_lines(text, path, 256, |line, n, feats| {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 257 {
            return Err(parse_err(path, n, format!("expected 257 fields, found {}", toks.len())));
        }
        // Labels are written as "6" or "6.0000" depending on the distribution.
        let lv = parse_number(toks[0], path, n)?;
        if lv.fract() != 0.0 || !(0.0..=9.0).contains(&lv) {
            return Err(parse_err(path, n, format!("unknown label {:?}", toks[0])));
        }
        for t in &toks[1..] {
            feats.push(parse_number(t, path, n)?);
        }
        Ok(lv as usize)
    })
}

fn to_matrix(parsed: &Parsed, p: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(parsed.rows, p, &parsed.features)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn check_rows(parsed: &Parsed, expected: usize, path: &Path) -> Result<()> {
    if parsed.rows != expected {
        return Err(parse_err(
            path,
            parsed.last_line,
            format!("expected {expected} rows, found {}", parsed.rows),
        ));
    }
    Ok(())
}

fn expect_paths(name: DatasetName, paths: &[PathBuf]) -> Result<()> {
    let n = name.default_files().len();
    if paths.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{name} needs {n} file path(s), got {}",
            paths.len()
        )));
    }
    Ok(())
}

/// Reads a benchmark from its public file format and checks the row counts.
///
/// `paths` is `[train, test]` for Satellite and USPS and `[data]` for Letter,
/// whose first 16000 rows are the training set.
pub fn load_dataset(name: DatasetName, paths: &[PathBuf]) -> Result<Dataset> {
    expect_paths(name, paths)?;
    let (n_tr, n_te, p, m) = name.shape();
    let split = |parse: fn(&str, &Path) -> Result<Parsed>| -> Result<Dataset> {
        let (tr_path, te_path) = (&paths[0], &paths[1]);
        let tr = parse(&read(tr_path)?, tr_path)?;
        check_rows(&tr, n_tr, tr_path)?;
        let te = parse(&read(te_path)?, te_path)?;
        check_rows(&te, n_te, te_path)?;
        Dataset::new(name.to_string(), to_matrix(&tr, p), tr.labels, to_matrix(&te, p), te.labels, m)
    };
    match name {
        DatasetName::Satellite => split(satellite_rows),
        DatasetName::Usps => split(usps_rows),
        DatasetName::Letter => {
            let path = &paths[0];
            let all = letter_rows(&read(path)?, path)?;
            check_rows(&all, n_tr + n_te, path)?;
            let x = to_matrix(&all, p);
            Dataset::new(
                name.to_string(),
                x.rows(0, n_tr).into_owned(),
                all.labels[..n_tr].to_vec(),
                x.rows(n_tr, n_te).into_owned(),
                all.labels[n_tr..].to_vec(),
                m,
            )
        }
    }
}

/// Parses text in a benchmark's format without the row-count contract.
/// For Letter, `test` is parsed as a separate file.
pub fn parse_dataset(name: DatasetName, train: &str, test: &str) -> Result<Dataset> {
    let (_, _, p, m) = name.shape();
    let parse: fn(&str, &Path) -> Result<Parsed> = match name {
        DatasetName::Satellite => satellite_rows,
        DatasetName::Letter => letter_rows,
        DatasetName::Usps => usps_rows,
    };
    let tr = parse(train, Path::new("<train>"))?;
    let te = parse(test, Path::new("<test>"))?;
    Dataset::new(name.to_string(), to_matrix(&tr, p), tr.labels, to_matrix(&te, p), te.labels, m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

/// Source files and their hashes, plus the observed feature value range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub dataset: String,
    pub files: Vec<FileRecord>,
    pub value_min: f64,
    pub value_max: f64,
}

pub fn data_manifest(ds: &Dataset, paths: &[PathBuf]) -> Result<DataManifest> {
    let files = paths
        .iter()
        .map(|path| {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            Ok(FileRecord {
                path: path.clone(),
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            })
        })
        .collect::<Result<_>>()?;
    let (value_min, value_max) = ds.value_range();
    Ok(DataManifest {
        dataset: ds.name.clone(),
        files,
        value_min,
        value_max,
    })
}

/// Per-feature affine transform `x ↦ (x − mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits on the rows of `x`; features with zero variance get scale 1.
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("cannot standardize an empty training set".into()));
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mu = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            mean.push(mu);
            scale.push(if sd > 1e-12 * mu.abs().max(1.0) { sd } else { 1.0 });
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.scale[j])
    }

    pub fn invert(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] * self.scale[j] + self.mean[j])
    }
}

/// Standardizes train and test with a transform fitted on the training rows.
pub fn standardize(ds: &Dataset) -> Result<(Dataset, Standardizer)> {
    let st = Standardizer::fit(&ds.train_features)?;
    let out = Dataset {
        train_features: st.apply(&ds.train_features),
        test_features: st.apply(&ds.test_features),
        ..ds.clone()
    };
    Ok((out, st))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sat_line(label: &str) -> String {
        let mut s: Vec<String> = (0..36).map(|i| (i % 100).to_string()).collect();
        s.push(label.into());
        s.join(" ")
    }

    #[test]
    fn satellite_labels_are_remapped() {
        let train = [sat_line("1"), sat_line("7"), sat_line("5")].join("\n");
        let ds = parse_dataset(DatasetName::Satellite, &train, &sat_line("2")).unwrap();
        assert_eq!(ds.train_labels, vec![0, 5, 4]);
        assert_eq!(ds.test_labels, vec![1]);
        assert_eq!(ds.dim(), 36);
        assert_eq!(ds.train_features[(1, 3)], 3.0);
    }

    #[test]
    fn satellite_class_six_is_unknown() {
        let err = parse_dataset(DatasetName::Satellite, &format!("{}\n{}", sat_line("1"), sat_line("6")), "").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn letter_parses_label_first() {
        let row = "T,2,8,3,5,1,8,13,0,6,6,10,8,0,8,0,8";
        let ds = parse_dataset(DatasetName::Letter, row, "A,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1").unwrap();
        assert_eq!(ds.train_labels, vec![19]);
        assert_eq!(ds.test_labels, vec![0]);
        assert_eq!(ds.train_features[(0, 6)], 13.0);
        assert!(parse_dataset(DatasetName::Letter, "a,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1", "").is_err());
    }

    #[test]
    fn usps_accepts_real_valued_labels() {
        let vals: Vec<String> = (0..256).map(|i| format!("{:.3}", -1.0 + i as f64 / 128.0)).collect();
        let row = format!("6.0000 {}", vals.join(" "));
        let ds = parse_dataset(DatasetName::Usps, &row, &format!("0 {}", vals.join(" "))).unwrap();
        assert_eq!(ds.train_labels, vec![6]);
        assert_eq!(ds.test_labels, vec![0]);
        assert!(parse_dataset(DatasetName::Usps, &format!("6.5 {}", vals.join(" ")), "").is_err());
        let short = format!("1 {}", vals[..255].join(" "));
        match parse_dataset(DatasetName::Usps, &short, "") {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn standardize_constant_feature() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let ds = Dataset::new("t", x.clone(), vec![0, 1, 0], x.clone(), vec![0, 1, 0], 2).unwrap();
        let (out, st) = standardize(&ds).unwrap();
        assert_eq!(st.scale[1], 1.0);
        assert!(out.train_features.column(1).iter().all(|v| *v == 0.0));
        assert!((st.invert(&out.test_features) - x).amax() < 1e-10);
    }
}
