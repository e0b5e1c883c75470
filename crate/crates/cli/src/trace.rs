//! Per-sample prediction traces: `k, y0.., sim0.., one_step0..` for every
//! evaluated sample `k ≥ lag`.

use std::path::Path;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub k: Vec<usize>,
    pub y: Vec<Vec<f64>>,
    pub simulation: Vec<Vec<f64>>,
    pub one_step: Vec<Vec<f64>>,
}

impl Trace {
    pub fn n_y(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    fn header(n_y: usize) -> Vec<String> {
        let mut h = vec!["k".to_string()];
        for prefix in ["y", "sim", "one_step"] {
            h.extend((0..n_y).map(|i| format!("{prefix}{i}")));
        }
        h
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let n_y = self.n_y();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(Self::header(n_y))?;
        for i in 0..self.len() {
            let mut row = vec![self.k[i].to_string()];
            for v in [&self.y[i], &self.simulation[i], &self.one_step[i]] {
                if v.len() != n_y {
                    return Err(CliError::Data(format!("trace row {i} has {} channels, expected {n_y}", v.len())));
                }
                row.extend(v.iter().map(f64::to_string));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 4 || !(header.len() - 1).is_multiple_of(3) {
            return Err(CliError::Data(format!("{}: malformed trace header", path.display())));
        }
        let n_y = (header.len() - 1) / 3;
        if header != Self::header(n_y) {
            return Err(CliError::Data(format!("{}: unexpected trace columns", path.display())));
        }
        let mut t = Trace {
            k: vec![],
            y: vec![],
            simulation: vec![],
            one_step: vec![],
        };
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| CliError::Data(format!("{}: row {}: bad {what}", path.display(), i + 1));
            t.k.push(rec[0].parse().map_err(|_| bad("index"))?);
            let vals: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|_| bad("value")))
                .collect::<Result<_>>()?;
            t.y.push(vals[..n_y].to_vec());
            t.simulation.push(vals[n_y..2 * n_y].to_vec());
            t.one_step.push(vals[2 * n_y..].to_vec());
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let t = Trace {
            k: vec![3, 4],
            y: vec![vec![0.1, -2.0], vec![1e-300, 3.0]],
            simulation: vec![vec![1.0 / 3.0, 0.0], vec![-0.0, f64::MAX]],
            one_step: vec![vec![2.5, 7.0], vec![f64::MIN_POSITIVE, -1.25]],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        t.write(&p).unwrap();
        let back = Trace::read(&p).unwrap();
        assert_eq!(back, t);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("k,y0,y1,sim0,sim1,one_step0,one_step1\n"));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "k,a,b,c\n0,1,2,3\n").unwrap();
        assert!(Trace::read(&p).is_err());
    }
}
