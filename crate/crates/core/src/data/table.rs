use std::io::Read;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named numeric columns, one row per time step, in chronological order.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesTable {
    names: Vec<String>,
    values: Tensor,
    normalization: Option<NormalizationState>,
}

impl TimeSeriesTable {
    pub fn new(names: Vec<String>, values: Tensor) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(Error::Shape(format!("{} column names for {} columns", names.len(), values.cols())));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("table values must be finite".into()));
        }
        Ok(Self { names, values, normalization: None })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    /// State used to produce these values, when they are normalized.
    pub fn normalization(&self) -> Option<&NormalizationState> {
        self.normalization.as_ref()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("no column named '{name}' (have {})", self.names.join(", "))))
    }

    pub fn column_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.column_index(n)).collect()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values.col_values(c)
    }

    /// Keeps the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let cols = self.column_indices(names)?;
        Ok(Self {
            names: names.to_vec(),
            values: self.values.select_cols(&cols)?,
            normalization: self.normalization.as_ref().map(|s| s.select(&cols)),
        })
    }

    /// Chronological split into the first `train` rows and the following
    /// `test` rows.
    pub fn split(&self, train: usize, test: usize) -> Result<(Self, Self)> {
        if train + test > self.len() {
            return Err(Error::Input(format!("split {train}+{test} exceeds the {} available rows", self.len())));
        }
        let part = |a, b| -> Result<Self> {
            Ok(Self {
                names: self.names.clone(),
                values: self.values.slice_rows(a, b)?,
                normalization: self.normalization.clone(),
            })
        };
        Ok((part(0, train)?, part(train, train + test)?))
    }

    /// Maps each column through `state`: `(x − min)/(max − min)`, constant
    /// columns to 0.
    pub fn normalize(&self, state: &NormalizationState) -> Result<Self> {
        if self.normalization.is_some() {
            return Err(Error::Usage("table is already normalized".into()));
        }
        Ok(Self {
            names: self.names.clone(),
            values: state.normalize(&self.values)?,
            normalization: Some(state.clone()),
        })
    }

    /// Inverse of [`normalize`](Self::normalize) with the state it recorded.
    pub fn denormalize(&self) -> Result<Self> {
        let state = self
            .normalization
            .as_ref()
            .ok_or_else(|| Error::Usage("denormalize called on a table without a fitted normalization".into()))?;
        Ok(Self { names: self.names.clone(), values: state.denormalize(&self.values)?, normalization: None })
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        for r in 0..self.len() {
            w.write_record(self.values.row(r).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-column min and max in original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationState {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationState {
    pub fn fit(values: &Tensor) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::Input("cannot fit normalization on an empty table".into()));
        }
        let mut min = vec![f64::INFINITY; values.cols()];
        let mut max = vec![f64::NEG_INFINITY; values.cols()];
        for r in 0..values.rows() {
            for (c, &v) in values.row(r).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    fn check(&self, values: &Tensor) -> Result<()> {
        if values.cols() != self.width() {
            return Err(Error::Shape(format!(
                "normalization fitted on {} columns, got {}",
                self.width(),
                values.cols()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, values: &Tensor) -> Result<Tensor> {
        self.check(values)?;
        Ok(Tensor::from_fn(values.rows(), values.cols(), |r, c| self.normalize_value(c, values.get(r, c))))
    }

    pub fn denormalize(&self, values: &Tensor) -> Result<Tensor> {
        self.check(values)?;
        Ok(Tensor::from_fn(values.rows(), values.cols(), |r, c| self.denormalize_value(c, values.get(r, c))))
    }

    pub fn normalize_value(&self, column: usize, v: f64) -> f64 {
        let span = self.max[column] - self.min[column];
        if span > 0.0 {
            (v - self.min[column]) / span
        } else {
            0.0
        }
    }

    /// Constant columns come back as their single observed value.
    pub fn denormalize_value(&self, column: usize, v: f64) -> f64 {
        v * (self.max[column] - self.min[column]) + self.min[column]
    }

    pub fn select(&self, columns: &[usize]) -> Self {
        Self {
            min: columns.iter().map(|&c| self.min[c]).collect(),
            max: columns.iter().map(|&c| self.max[c]).collect(),
        }
    }
}

/// Reads a headed CSV file. Columns whose cells are all non-numeric (labels,
/// timestamps) are skipped with a warning; any other unparseable or
/// non-finite cell is an error naming its row and column.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeriesTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<TimeSeriesTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Input("empty file: no header row".into()));
    }
    let records = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
    if records.is_empty() {
        return Err(Error::Input("file has a header but no data rows".into()));
    }

    let numeric: Vec<bool> = (0..headers.len())
        .map(|c| records.iter().any(|rec| rec.get(c).is_some_and(|s| s.parse::<f64>().is_ok())))
        .collect();
    for (c, name) in headers.iter().enumerate() {
        if !numeric[c] {
            warn!("skipping non-numeric column '{name}'");
        }
    }
    let kept: Vec<usize> = (0..headers.len()).filter(|&c| numeric[c]).collect();
    if kept.is_empty() {
        return Err(Error::Input("no numeric columns".into()));
    }

    let mut data = Vec::with_capacity(records.len() * kept.len());
    for (r, rec) in records.iter().enumerate() {
        // Row numbers are 1-based data rows, matching a spreadsheet view
        // below the header.
        let row = r + 1;
        for &c in &kept {
            let cell = rec.get(c).unwrap_or("");
            let parse_err = |detail: String| Error::Parse { row, column: headers[c].clone(), detail };
            let v: f64 = cell.parse().map_err(|_| parse_err(format!("'{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("'{cell}' is not finite")));
            }
            data.push(v);
        }
    }
    let names = kept.iter().map(|&c| headers[c].clone()).collect();
    TimeSeriesTable::new(names, Tensor::new(records.len(), kept.len(), data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn read(s: &str) -> Result<TimeSeriesTable> {
        read_csv(s.as_bytes())
    }

    #[test]
    fn reads_numeric_table() {
        let t = read("a,b\n1,2\n3,4\n5,6\n").unwrap();
        assert_eq!(t.names(), ["a", "b"]);
        assert_eq!(t.values(), &Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
    }

    #[test]
    fn skips_all_text_column() {
        let t = read("time,x,label\n2020-01-01,1.5,up\n2020-01-02,2.5,down\n").unwrap();
        assert_eq!(t.names(), ["x"]);
        assert_eq!(t.values(), &Tensor::column(&[1.5, 2.5]));
    }

    #[test]
    fn nan_cell_names_row_and_column() {
        match read("a,b\n1,2\n3,NaN\n") {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "b");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_cell_in_numeric_column_is_an_error() {
        assert!(matches!(read("a\n1\nx\n3\n"), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn empty_input_is_an_input_error() {
        assert!(matches!(read(""), Err(Error::Input(_))));
        assert!(matches!(read("a,b\n"), Err(Error::Input(_))));
    }

    #[test]
    fn normalization_examples() {
        let v = Tensor::from_rows(&[&[2.0, 5.0], &[4.0, 5.0], &[6.0, 5.0]]);
        let t = TimeSeriesTable::new(vec!["x".into(), "c".into()], v.clone()).unwrap();
        let state = NormalizationState::fit(t.values()).unwrap();
        let n = t.normalize(&state).unwrap();
        assert_eq!(n.column(0), [0.0, 0.5, 1.0]);
        assert_eq!(n.column(1), [0.0, 0.0, 0.0]);
        assert_eq!(n.denormalize().unwrap().values(), &v);
    }

    #[test]
    fn denormalize_requires_state() {
        let t = TimeSeriesTable::new(vec!["x".into()], Tensor::column(&[1.0])).unwrap();
        assert!(matches!(t.denormalize(), Err(Error::Usage(_))));
    }

    #[test]
    fn test_split_reuses_training_state() {
        let v = Tensor::column(&[0.0, 10.0, 5.0, 20.0]);
        let t = TimeSeriesTable::new(vec!["x".into()], v).unwrap();
        let (train, test) = t.split(2, 2).unwrap();
        let state = NormalizationState::fit(train.values()).unwrap();
        let test = test.normalize(&state).unwrap();
        assert_eq!(test.normalization(), Some(&state));
        // Out-of-range test values are not clipped.
        assert_abs_diff_eq!(test.values().get(1, 0), 2.0);
        assert!(t.split(3, 2).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let v = Tensor::from_rows(&[&[0.1, 1.0 / 3.0], &[-2.5e-8, 7.0]]);
        let t = TimeSeriesTable::new(vec!["a".into(), "b".into()], v).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), t);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn denormalize_inverts_normalize(col in prop::collection::vec(-1e3f64..1e3, 2..40)) {
                prop_assume!(col.iter().any(|&v| v != col[0]));
                let v = Tensor::column(&col);
                let state = NormalizationState::fit(&v).unwrap();
                let n = state.normalize(&v).unwrap();
                prop_assert!(n.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
                let back = state.denormalize(&n).unwrap();
                for (a, b) in back.data().iter().zip(&col) {
                    prop_assert!((a - b).abs() <= 1e-9);
                }
            }

            #[test]
            fn normalize_is_monotone(col in prop::collection::vec(-1e3f64..1e3, 2..40)) {
                let v = Tensor::column(&col);
                let state = NormalizationState::fit(&v).unwrap();
                let n = state.normalize(&v).unwrap();
                for i in 0..col.len() {
                    for j in 0..col.len() {
                        if col[i] < col[j] {
                            prop_assert!(n.data()[i] <= n.data()[j]);
                        }
                    }
                }
            }
        }
    }
}
