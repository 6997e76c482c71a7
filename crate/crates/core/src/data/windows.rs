use crate::data::table::TimeSeriesTable;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One stride-1 window of the series.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// `N × d_input` slice of the (possibly padded) series.
    pub input: Tensor,
    /// `n × |targets|`: row `t` is the target value one step after center
    /// position `t`.
    pub targets: Tensor,
    /// Series index (original coordinates) of center position 0.
    pub first_center: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    windows: Vec<Window>,
    window_len: usize,
    padded: bool,
    series_len: usize,
    target_columns: Vec<usize>,
}

/// Cuts `table` into windows of `window_len` rows advancing one step at a
/// time. With `pad`, the first and last rows are replicated once so that
/// every original index is the first center of exactly one window.
pub fn make_windows(
    table: &TimeSeriesTable,
    window_len: usize,
    target_columns: &[usize],
    pad: bool,
) -> Result<WindowedDataset> {
    if window_len < 4 {
        return Err(Error::WindowTooShort(window_len));
    }
    if let Some(&c) = target_columns.iter().find(|&&c| c >= table.width()) {
        return Err(Error::Config(format!("target column {c} outside {} columns", table.width())));
    }
    let values = table.values();
    let series_len = values.rows();
    if series_len == 0 {
        return Err(Error::Input("cannot window an empty series".into()));
    }
    let padded_values = if pad {
        let first = values.slice_rows(0, 1)?;
        let last = values.slice_rows(series_len - 1, series_len)?;
        let mut data = first.into_data();
        data.extend_from_slice(values.data());
        data.extend_from_slice(last.data());
        Tensor::new(series_len + 2, values.cols(), data)?
    } else {
        values.clone()
    };
    let total = padded_values.rows();
    if total < window_len {
        return Err(Error::Input(format!("series of {series_len} rows is shorter than the window of {window_len}")));
    }
    let offset = if pad { 0 } else { 1 };
    let windows = (0..=total - window_len)
        .map(|s| {
            let input = padded_values.slice_rows(s, s + window_len)?;
            let targets = input.slice_rows(2, window_len)?.select_cols(target_columns)?;
            Ok(Window { input, targets, first_center: s + offset })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowedDataset { windows, window_len, padded: pad, series_len, target_columns: target_columns.to_vec() })
}

impl WindowedDataset {
    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    /// Center positions per window, `N − 2`.
    pub fn center_len(&self) -> usize {
        self.window_len - 2
    }

    pub fn padded(&self) -> bool {
        self.padded
    }

    /// Rows of the original, unpadded series.
    pub fn series_len(&self) -> usize {
        self.series_len
    }

    pub fn target_columns(&self) -> &[usize] {
        &self.target_columns
    }

    pub fn targets(&self) -> Vec<Tensor> {
        self.windows.iter().map(|w| w.targets.clone()).collect()
    }

    /// Assembled ground truth, aligned with [`assemble_predictions`].
    pub fn assembled_targets(&self) -> Result<Forecast> {
        assemble_predictions(&self.targets(), self)
    }
}

/// Contiguous one-step-ahead forecast. Row `k` is produced at series index
/// `first_index + k` and estimates the value at `first_index + k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub first_index: usize,
    pub values: Tensor,
}

impl Forecast {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    /// Series index each row estimates.
    pub fn target_indices(&self) -> std::ops::Range<usize> {
        self.first_index + 1..self.first_index + 1 + self.len()
    }

    /// Drops rows whose target lies at or beyond `series_len`, i.e. rows
    /// that estimate a replicated padding value.
    pub fn within(&self, series_len: usize) -> Result<Self> {
        let keep = series_len.saturating_sub(self.first_index + 1).min(self.len());
        Ok(Self { first_index: self.first_index, values: self.values.slice_rows(0, keep)? })
    }
}

/// Overlap-cover assembly: every window but the last contributes its
/// prediction at center position 0; the last window contributes its whole
/// center. The result covers a contiguous index range with each index
/// written exactly once.
pub fn assemble_predictions(outputs: &[Tensor], dataset: &WindowedDataset) -> Result<Forecast> {
    let windows = dataset.windows();
    if outputs.len() != windows.len() {
        return Err(Error::Shape(format!("{} outputs for {} windows", outputs.len(), windows.len())));
    }
    let (n, m) = (dataset.center_len(), dataset.target_columns().len());
    if let Some(bad) = outputs.iter().find(|o| o.shape() != (n, m)) {
        return Err(Error::Shape(format!("window output is {}x{}, expected {n}x{m}", bad.rows(), bad.cols())));
    }
    let Some(last) = windows.len().checked_sub(1) else {
        return Err(Error::Input("no windows to assemble".into()));
    };
    let start = windows.iter().map(|w| w.first_center).min().unwrap_or(0);
    let end = windows[last].first_center + n;
    // Each slot records the (window, center position) that filled it.
    let mut slots: Vec<Option<(usize, usize)>> = vec![None; end.saturating_sub(start)];
    let mut write = |index: usize, source: (usize, usize)| -> Result<()> {
        let slot = index
            .checked_sub(start)
            .and_then(|i| slots.get_mut(i))
            .ok_or_else(|| Error::Consistency(format!("index {index} outside the covered range")))?;
        if slot.is_some() {
            return Err(Error::Consistency(format!("index {index} written twice")));
        }
        *slot = Some(source);
        Ok(())
    };
    for (k, w) in windows.iter().enumerate() {
        let rows = if k == last { 0..n } else { 0..1 };
        for t in rows {
            write(w.first_center + t, (k, t))?;
        }
    }
    let mut data = Vec::with_capacity(slots.len() * m);
    for (i, slot) in slots.iter().enumerate() {
        let (k, t) = slot.ok_or_else(|| Error::Consistency(format!("index {} never written", start + i)))?;
        data.extend_from_slice(outputs[k].row(t));
    }
    Ok(Forecast { first_index: start, values: Tensor::new(slots.len(), m, data)? })
}
