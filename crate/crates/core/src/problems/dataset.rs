use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labeled samples stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub input_names: Vec<String>,
    pub target_name: String,
    dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(input_names: Vec<String>, target_name: impl Into<String>) -> Self {
        let dim = input_names.len();
        Self { input_names, target_name: target_name.into(), dim, inputs: Vec::new(), targets: Vec::new() }
    }

    pub fn from_rows(input_names: Vec<String>, target_name: impl Into<String>, rows: &[(Vec<f64>, f64)]) -> Self {
        let mut ds = Self::new(input_names, target_name);
        for (x, y) in rows {
            ds.push(x, *y);
        }
        ds
    }

    pub fn push(&mut self, x: &[f64], y: f64) {
        assert_eq!(x.len(), self.dim, "row dimension");
        self.inputs.extend_from_slice(x);
        self.targets.push(y);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.inputs.chunks_exact(self.dim.max(1)).zip(self.targets.iter().copied())
    }

    /// RMSE of `model` against the targets; 0 for an empty set.
    pub fn rmse<F: Fn(&[f64]) -> f64>(&self, model: F) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let sse: f64 = self
            .rows()
            .map(|(x, y)| {
                let r = model(x) - y;
                if r.is_finite() {
                    r * r
                } else {
                    crate::problems::NON_FINITE_PENALTY.powi(2)
                }
            })
            .sum();
        (sse / self.len() as f64).sqrt()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.input_names.clone();
        header.push(self.target_name.clone());
        w.write_record(&header)?;
        for (x, y) in self.rows() {
            let mut record: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
            record.push(format!("{y:e}"));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV whose last column is the target.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::Format("dataset CSV needs at least one input and a target column".into()));
        }
        let names: Vec<String> = header.iter().map(str::to_string).collect();
        let (inputs, target) = names.split_at(names.len() - 1);
        let mut ds = Self::new(inputs.to_vec(), target[0].clone());
        let mut row = Vec::with_capacity(names.len());
        for record in r.records() {
            let record = record?;
            row.clear();
            for field in record.iter() {
                row.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("not a number: `{field}`")))?,
                );
            }
            if row.len() != names.len() {
                return Err(Error::Format("ragged dataset row".into()));
            }
            let y = row.pop().expect("target");
            ds.push(&row, y);
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let ds = Dataset::from_rows(
            vec!["r1".into(), "r2".into()],
            "r",
            &[(vec![1.0, 2.0], 2.0 / 3.0), (vec![0.1, 1e-4], 9.99e-5)],
        );
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rmse_is_row_order_invariant() {
        let rows = vec![(vec![1.0], 1.0), (vec![2.0], -1.0), (vec![3.0], 0.5)];
        let mut rev = rows.clone();
        rev.reverse();
        let a = Dataset::from_rows(vec!["x".into()], "y", &rows);
        let b = Dataset::from_rows(vec!["x".into()], "y", &rev);
        let model = |x: &[f64]| 0.3 * x[0];
        assert!((a.rmse(model) - b.rmse(model)).abs() < 1e-15);
    }
}
