//! Numeric tables and delimited-text ingestion.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Name under which the bundled table is always available.
pub const BUNDLED_CARS: &str = "cars";

const CARS_CSV: &str = include_str!("../../data/cars.csv");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("line {line}, column {column}: `{value}` is not a finite number")]
    NonNumeric {
        line: u64,
        column: usize,
        value: String,
    },
    #[error("line {line}: expected {expected} cells, found {found}")]
    Ragged {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("dataset has no header row")]
    MissingHeader,
    #[error("dataset has no numeric columns")]
    NoColumns,
    #[error("malformed delimited text: {0}")]
    Malformed(String),
    #[error("dataset name `{0}` is reserved or empty")]
    ReservedName(String),
}

/// A rectangular, finite, row-major numeric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    pub columns: Vec<String>,
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TabularDataset {
    /// Parses comma-separated text with a header row. A first header cell
    /// named `label` marks a text label column; every other cell must be a
    /// finite number.
    pub fn from_csv_str(text: &str) -> Result<Self, DatasetError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| DatasetError::Malformed(e.to_string()))?
            .clone();
        if headers.is_empty() {
            return Err(DatasetError::MissingHeader);
        }
        let labelled = headers.get(0).map(str::trim) == Some("label");
        let columns: Vec<String> = headers
            .iter()
            .skip(usize::from(labelled))
            .map(|h| h.trim().to_string())
            .collect();
        if columns.is_empty() {
            return Err(DatasetError::NoColumns);
        }

        let mut labels = Vec::new();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| DatasetError::Malformed(e.to_string()))?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != headers.len() {
                return Err(DatasetError::Ragged {
                    line,
                    expected: headers.len(),
                    found: record.len(),
                });
            }
            let mut cells = record.iter();
            let label = if labelled {
                cells.next().unwrap_or_default().trim().to_string()
            } else {
                rows.len().to_string()
            };
            let mut row = Vec::with_capacity(columns.len());
            for (offset, cell) in cells.enumerate() {
                let column = offset + 1 + usize::from(labelled);
                let value = cell
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DatasetError::NonNumeric {
                        line,
                        column,
                        value: cell.to_string(),
                    })?;
                row.push(value);
            }
            labels.push(label);
            rows.push(row);
        }
        Ok(TabularDataset {
            columns,
            labels,
            rows,
        })
    }

    /// The bundled 32x6 car table.
    pub fn bundled_cars() -> Self {
        Self::from_csv_str(CARS_CSV).expect("bundled dataset parses")
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    /// Content checksum over column names, labels and values.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for c in &self.columns {
            hasher.update(c.as_bytes());
            hasher.update([0u8]);
        }
        for (label, row) in self.labels.iter().zip(&self.rows) {
            hasher.update(label.as_bytes());
            hasher.update([0u8]);
            for v in row {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_shape_and_checksum() {
        let cars = TabularDataset::bundled_cars();
        assert_eq!(cars.n_rows(), 32);
        assert_eq!(cars.n_cols(), 6);
        assert_eq!(cars.labels[0], "Mazda RX4");
        assert_eq!(cars.rows[31], vec![21.4, 4.0, 121.0, 109.0, 2.78, 18.6]);
        assert_eq!(cars.checksum(), BUNDLED_CARS_CHECKSUM);
    }

    // Frozen from the shipped data/cars.csv.
    const BUNDLED_CARS_CHECKSUM: &str =
        "f9cb22de276702f9a37c683086b79ac8d564d8a08c098942eed10e5371bef7c0";

    #[test]
    fn unlabelled_table_gets_index_labels() {
        let ds = TabularDataset::from_csv_str("x,y\n1,2\n3,4\n").unwrap();
        assert_eq!(ds.labels, vec!["0", "1"]);
        assert_eq!(ds.rows, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn non_numeric_cell_reports_position() {
        let err = TabularDataset::from_csv_str("label,x,y\na,1,2\nb,3,oops\n").unwrap_err();
        assert_eq!(
            err,
            DatasetError::NonNumeric {
                line: 3,
                column: 3,
                value: "oops".into()
            }
        );
    }

    #[test]
    fn non_finite_and_ragged_rows_are_rejected() {
        assert!(matches!(
            TabularDataset::from_csv_str("x\nNaN\n"),
            Err(DatasetError::NonNumeric { .. })
        ));
        assert!(matches!(
            TabularDataset::from_csv_str("x,y\n1\n"),
            Err(DatasetError::Ragged { line: 2, .. })
        ));
    }
}
