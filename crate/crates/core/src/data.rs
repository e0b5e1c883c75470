//! Aligned input/output series, split datasets and their on-disk format.
//!
//! A split is stored as a CSV with header `k,u0,…,y0,…` and one row per
//! sample. A dataset directory holds `train.csv`, `val.csv`, `test.csv`,
//! optionally `test_clean.csv` (the noise-free companion of the test split)
//! and a `meta.json` sidecar.

use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples `u[k]`, `y[k]` stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    n_u: usize,
    n_y: usize,
    u: Vec<f64>,
    y: Vec<f64>,
}

impl Series {
    pub fn new(n_u: usize, n_y: usize, u: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if n_y == 0 {
            return Err(Error::Data("a series needs at least one output channel".into()));
        }
        if !y.len().is_multiple_of(n_y) {
            return Err(Error::Data(format!(
                "{} output values do not split into {n_y} channels",
                y.len()
            )));
        }
        let len = y.len() / n_y;
        if u.len() != len * n_u {
            return Err(Error::Data(format!(
                "{} input values for {len} samples of {n_u} channels",
                u.len()
            )));
        }
        if u.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Data("series contains non-finite values".into()));
        }
        Ok(Series { n_u, n_y, u, y })
    }

    pub fn from_rows(us: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<Self> {
        if us.len() != ys.len() || ys.is_empty() {
            return Err(Error::Data(format!(
                "{} input rows and {} output rows",
                us.len(),
                ys.len()
            )));
        }
        let n_u = us[0].len();
        let n_y = ys[0].len();
        if us.iter().any(|r| r.len() != n_u) || ys.iter().any(|r| r.len() != n_y) {
            return Err(Error::Data("ragged rows".into()));
        }
        Series::new(n_u, n_y, us.concat(), ys.concat())
    }

    pub fn len(&self) -> usize {
        self.y.len() / self.n_y
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn u_at(&self, k: usize) -> &[f64] {
        &self.u[k * self.n_u..(k + 1) * self.n_u]
    }

    pub fn y_at(&self, k: usize) -> &[f64] {
        &self.y[k * self.n_y..(k + 1) * self.n_y]
    }

    pub fn u_data(&self) -> &[f64] {
        &self.u
    }

    pub fn y_data(&self) -> &[f64] {
        &self.y
    }

    pub fn u_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.u_at(k).to_vec()).collect()
    }

    pub fn y_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.y_at(k).to_vec()).collect()
    }

    pub fn slice(&self, range: Range<usize>) -> Result<Series> {
        if range.start > range.end || range.end > self.len() {
            return Err(Error::Data(format!(
                "range {range:?} outside series of length {}",
                self.len()
            )));
        }
        Ok(Series {
            n_u: self.n_u,
            n_y: self.n_y,
            u: self.u[range.start * self.n_u..range.end * self.n_u].to_vec(),
            y: self.y[range.start * self.n_y..range.end * self.n_y].to_vec(),
        })
    }

    /// Per-channel mean and population standard deviation of the outputs.
    pub fn y_stats(&self) -> (Vec<f64>, Vec<f64>) {
        channel_stats(&self.y, self.n_y)
    }

    pub fn u_stats(&self) -> (Vec<f64>, Vec<f64>) {
        channel_stats(&self.u, self.n_u)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["k".to_string()];
        header.extend((0..self.n_u).map(|i| format!("u{i}")));
        header.extend((0..self.n_y).map(|i| format!("y{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![k.to_string()];
            rec.extend(self.u_at(k).iter().map(f64::to_string));
            rec.extend(self.y_at(k).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Series> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.first() != Some(&"k") {
            return Err(Error::Data(format!("{}: first column must be `k`", path.display())));
        }
        let n_u = cols.iter().filter(|c| c.starts_with('u')).count();
        let n_y = cols.iter().filter(|c| c.starts_with('y')).count();
        let expected: Vec<String> = std::iter::once("k".to_string())
            .chain((0..n_u).map(|i| format!("u{i}")))
            .chain((0..n_y).map(|i| format!("y{i}")))
            .collect();
        if cols != expected {
            return Err(Error::Data(format!(
                "{}: header {:?} is not of the form k,u0..,y0..",
                path.display(),
                cols
            )));
        }
        let mut u = Vec::new();
        let mut y = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let k: usize = rec[0]
                .parse()
                .map_err(|_| Error::Data(format!("{}: bad index on row {row}", path.display())))?;
            if k != row {
                return Err(Error::Data(format!(
                    "{}: row {row} has index {k}",
                    path.display()
                )));
            }
            for (i, field) in rec.iter().enumerate().skip(1) {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Data(format!("{}: bad number `{field}` on row {row}", path.display()))
                })?;
                if i <= n_u {
                    u.push(v);
                } else {
                    y.push(v);
                }
            }
        }
        Series::new(n_u, n_y, u, y)
    }
}

fn channel_stats(data: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 0 {
        return (vec![], vec![]);
    }
    let len = (data.len() / n) as f64;
    let mean: Vec<f64> = (0..n)
        .map(|c| data.iter().skip(c).step_by(n).sum::<f64>() / len)
        .collect();
    let std = (0..n)
        .map(|c| {
            let var = data
                .iter()
                .skip(c)
                .step_by(n)
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>()
                / len;
            var.sqrt()
        })
        .collect();
    (mean, std)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub system: String,
    pub seed: u64,
    pub snr_db: Option<f64>,
    /// Standard deviation of the innovation noise actually used.
    pub sigma_e: f64,
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub provenance: Provenance,
    pub n_u: usize,
    pub n_y: usize,
    /// Split boundaries in the concatenated sample index: train is
    /// `0..boundaries[0]`, validation `boundaries[0]..boundaries[1]`, test the rest.
    pub boundaries: [usize; 2],
    pub total: usize,
    pub has_clean_test: bool,
}

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Three contiguous, disjoint splits. Each split is an independent
/// realization; windows are always built inside a single split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Series,
    pub val: Series,
    pub test: Series,
    /// Test split regenerated with the same inputs and no noise.
    pub test_clean: Option<Series>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        train: Series,
        val: Series,
        test: Series,
        test_clean: Option<Series>,
        provenance: Provenance,
    ) -> Result<Self> {
        let (n_u, n_y) = (train.n_u(), train.n_y());
        for s in [&val, &test].into_iter().chain(test_clean.as_ref()) {
            if s.n_u() != n_u || s.n_y() != n_y {
                return Err(Error::Data("splits have different channel counts".into()));
            }
        }
        if let Some(c) = &test_clean {
            if c.len() != test.len() || c.u_data() != test.u_data() {
                return Err(Error::Data("clean test split must share the test inputs".into()));
            }
        }
        Ok(Dataset {
            train,
            val,
            test,
            test_clean,
            provenance,
        })
    }

    pub fn split(&self, which: Split) -> &Series {
        match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn n_u(&self) -> usize {
        self.train.n_u()
    }

    pub fn n_y(&self) -> usize {
        self.train.n_y()
    }

    pub fn boundaries(&self) -> [usize; 2] {
        let a = self.train.len();
        [a, a + self.val.len()]
    }

    pub fn total_len(&self) -> usize {
        self.boundaries()[1] + self.test.len()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            format_version: DATASET_FORMAT_VERSION,
            provenance: self.provenance.clone(),
            n_u: self.n_u(),
            n_y: self.n_y(),
            boundaries: self.boundaries(),
            total: self.total_len(),
            has_clean_test: self.test_clean.is_some(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for split in Split::ALL {
            self.split(split)
                .write_csv(&dir.join(format!("{}.csv", split.as_str())))?;
        }
        if let Some(c) = &self.test_clean {
            c.write_csv(&dir.join("test_clean.csv"))?;
        }
        let meta = serde_json::to_string_pretty(&self.meta())?;
        fs::write(dir.join("meta.json"), meta + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        if meta.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported dataset format version {}",
                meta.format_version
            )));
        }
        let read = |name: &str| Series::read_csv(&dir.join(name));
        let test_clean = if meta.has_clean_test {
            Some(read("test_clean.csv")?)
        } else {
            None
        };
        let ds = Dataset::new(
            read("train.csv")?,
            read("val.csv")?,
            read("test.csv")?,
            test_clean,
            meta.provenance.clone(),
        )?;
        if ds.boundaries() != meta.boundaries || ds.n_u() != meta.n_u || ds.n_y() != meta.n_y {
            return Err(Error::Data(format!(
                "{}: split files disagree with meta.json boundaries {:?}",
                dir.display(),
                meta.boundaries
            )));
        }
        Ok(ds)
    }
}
