//! Labeled feature rows and their CSV form.
//!
//! CSV layout: a header `x1,...,xd,label` followed by one row per example, in
//! dataset order. Labels are zero-based class indices.

use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Optional teacher logits, one row per example.
    pub teacher_logits: Option<Matrix>,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(shape_err(
                format!("{} labels", features.rows()),
                labels.len(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidTarget(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            teacher_logits: None,
        })
    }

    pub fn with_teacher_logits(mut self, logits: Matrix) -> Result<Self> {
        if logits.rows() != self.len() || logits.cols() != self.num_classes {
            return Err(shape_err(
                format!("{}x{} teacher logits", self.len(), self.num_classes),
                format!("{}x{}", logits.rows(), logits.cols()),
            ));
        }
        self.teacher_logits = Some(logits);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            teacher_logits: self.teacher_logits.as_ref().map(|t| t.select_rows(indices)),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, y) in self.features.iter_rows().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a dataset written by [`write_csv`](Self::write_csv). The class
    /// count is `max(num_classes, largest label + 1)`.
    pub fn read_csv(path: &Path, num_classes: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let dim = header.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| {
            Error::Parse(format!("{}: header needs feature columns and a label", path.display()))
        })?;
        if &header[dim] != "label" {
            return Err(Error::Parse(format!(
                "{}: last column must be `label`",
                path.display()
            )));
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            for field in rec.iter().take(dim) {
                data.push(field.trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!("{} row {}: {e}", path.display(), line + 1))
                })?);
            }
            labels.push(rec[dim].trim().parse::<usize>().map_err(|e| {
                Error::Parse(format!("{} row {}: {e}", path.display(), line + 1))
            })?);
        }
        let classes = labels.iter().map(|y| y + 1).max().unwrap_or(0).max(num_classes);
        Self::new(Matrix::from_vec(labels.len(), dim, data)?, labels, classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = LabeledDataset::new(
            Matrix::from_rows(&[vec![0.1, 1.0 / 3.0, -2.5e-17], vec![1.0, 0.0, 0.0]]).unwrap(),
            vec![1, 0],
            2,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x1,x2,x3,label\n"));
        assert_eq!(LabeledDataset::read_csv(&path, 2).unwrap(), ds);
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let m = Matrix::zeros(2, 2);
        assert!(LabeledDataset::new(m, vec![0, 3], 2).is_err());
    }
}
