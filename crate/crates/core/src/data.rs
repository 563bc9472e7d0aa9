//! Dataset ingestion, chronological splitting, sliding windows, and the
//! temporal / cross-variate Pearson correlation estimates.

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Tensor3};
use crate::scalar::Scalar;
use chrono::{NaiveDate, NaiveDateTime};
use std::path::Path;

/// Which chronological split a window set is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// Ingestion parameters for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub train_ratio: f64,
    pub val_ratio: f64,
    /// Minimum number of training steps required (typically `T + tau`).
    pub min_train_steps: usize,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            train_ratio: 0.7,
            val_ratio: 0.1,
            min_train_steps: 2,
        }
    }
}

/// An N-variate, M-step series with chronological split boundaries.
///
/// `values` holds one row per variate and one column per time step.
#[derive(Debug, Clone)]
pub struct TimeSeriesDataset<T = f64> {
    pub names: Vec<String>,
    pub values: Matrix<T>,
    pub train_end: usize,
    pub val_end: usize,
}

impl<T: Scalar> TimeSeriesDataset<T> {
    pub fn new(
        names: Vec<String>,
        values: Matrix<T>,
        train_ratio: f64,
        val_ratio: f64,
    ) -> Result<Self> {
        let steps = values.cols();
        if names.len() != values.rows() {
            return Err(Error::input(
                "TimeSeriesDataset::new",
                format!("{} names for {} variates", names.len(), values.rows()),
            ));
        }
        if !(0.0..1.0).contains(&train_ratio)
            || !(0.0..1.0).contains(&val_ratio)
            || train_ratio + val_ratio >= 1.0 + 1e-12
            || train_ratio <= 0.0
        {
            return Err(Error::Config(format!(
                "invalid split ratios train={train_ratio} val={val_ratio}"
            )));
        }
        let train_end = (train_ratio * steps as f64).floor() as usize;
        let val_end = ((train_ratio + val_ratio) * steps as f64).floor() as usize;
        if train_end == 0 || train_end > val_end || val_end > steps {
            return Err(Error::Config(format!(
                "degenerate split boundaries train_end={train_end} val_end={val_end} steps={steps}"
            )));
        }
        Ok(Self {
            names,
            values,
            train_end,
            val_end,
        })
    }

    pub fn n_variates(&self) -> usize {
        self.values.rows()
    }

    pub fn n_steps(&self) -> usize {
        self.values.cols()
    }

    /// Column range `[start, end)` of a split.
    pub fn split_range(&self, split: Split) -> (usize, usize) {
        match split {
            Split::Train => (0, self.train_end),
            Split::Val => (self.train_end, self.val_end),
            Split::Test => (self.val_end, self.n_steps()),
        }
    }
}

fn timestamps_monotone(stamps: &[String]) -> std::result::Result<(), usize> {
    // Timestamps may be integer indices, raw floats, or ISO-8601-style
    // date/datetime strings; any consistent strictly increasing sequence
    // is accepted.
    fn datetime(s: &str) -> Option<NaiveDateTime> {
        for fmt in [
            "%Y-%m-%d %H:%M:%S",
            "%Y-%m-%dT%H:%M:%S",
            "%Y/%m/%d %H:%M",
            "%Y-%m-%d %H:%M",
        ] {
            if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
                return Some(dt);
            }
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .ok()
            .and_then(|d| d.and_hms_opt(0, 0, 0))
    }

    for i in 1..stamps.len() {
        let (a, b) = (stamps[i - 1].trim(), stamps[i].trim());
        let increasing = if let (Ok(x), Ok(y)) = (a.parse::<f64>(), b.parse::<f64>()) {
            y > x
        } else if let (Some(x), Some(y)) = (datetime(a), datetime(b)) {
            y > x
        } else {
            // Uniform-width ISO strings compare correctly as text.
            b > a
        };
        if !increasing {
            return Err(i);
        }
    }
    Ok(())
}

/// Load a UTF-8 CSV with a header row, a leading timestamp column, and one
/// numeric column per variate. Columns become time steps; rows of the
/// resulting matrix follow the header order.
pub fn load_csv<T: Scalar>(path: &Path, schema: &CsvSchema) -> Result<TimeSeriesDataset<T>> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(&display, format!("cannot open: {e}")))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::data(&display, format!("bad header: {e}")))?
        .clone();
    if headers.len() < 2 {
        return Err(Error::data(
            &display,
            "need a timestamp column plus at least one variate",
        ));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let n_variates = names.len();

    let mut stamps = Vec::new();
    let mut columns: Vec<Vec<T>> = vec![Vec::new(); n_variates];
    for (row_idx, record) in reader.records().enumerate() {
        let row_no = row_idx + 1; // 1-based data row, matching user expectations
        let record = record.map_err(|e| Error::data(&display, format!("row {row_no}: {e}")))?;
        if record.len() != n_variates + 1 {
            return Err(Error::data(
                &display,
                format!(
                    "row {row_no}: expected {} fields, got {}",
                    n_variates + 1,
                    record.len()
                ),
            ));
        }
        stamps.push(record[0].to_owned());
        for (v, field) in record.iter().skip(1).enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                Error::data(
                    &display,
                    format!(
                        "row {row_no}, column '{}': non-numeric cell '{field}'",
                        names[v]
                    ),
                )
            })?;
            if !value.is_finite() {
                return Err(Error::data(
                    &display,
                    format!("row {row_no}, column '{}': non-finite value", names[v]),
                ));
            }
            columns[v].push(T::c(value));
        }
    }
    let steps = stamps.len();
    if steps == 0 {
        return Err(Error::data(&display, "no data rows"));
    }
    if let Err(i) = timestamps_monotone(&stamps) {
        return Err(Error::data(
            &display,
            format!("row {}: timestamp not strictly increasing", i + 1),
        ));
    }

    let mut values = Matrix::zeros(n_variates, steps);
    for (v, col) in columns.iter().enumerate() {
        for (t, &x) in col.iter().enumerate() {
            values.set(v, t, x);
        }
    }
    let ds = TimeSeriesDataset::new(names, values, schema.train_ratio, schema.val_ratio)?;
    if ds.train_end < schema.min_train_steps {
        return Err(Error::data(
            &display,
            format!(
                "training split has {} steps, need at least {}",
                ds.train_end, schema.min_train_steps
            ),
        ));
    }
    Ok(ds)
}

/// A batch of (input, target) windows; targets immediately follow inputs in
/// time and windows never cross split boundaries.
#[derive(Debug, Clone)]
pub struct WindowBatch<T = f64> {
    pub inputs: Tensor3<T>,
    pub targets: Tensor3<T>,
}

impl<T: Scalar> WindowBatch<T> {
    pub fn n_windows(&self) -> usize {
        self.inputs.dims().0
    }
}

/// Enumerate sliding windows of a split, left to right.
pub fn make_windows<T: Scalar>(
    ds: &TimeSeriesDataset<T>,
    split: Split,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<WindowBatch<T>> {
    if stride == 0 {
        return Err(Error::input("make_windows", "stride must be >= 1"));
    }
    if lookback == 0 || horizon == 0 {
        return Err(Error::input(
            "make_windows",
            "lookback and horizon must be >= 1",
        ));
    }
    let (start, end) = ds.split_range(split);
    let len = end - start;
    let total = lookback + horizon;
    if len < total {
        return Err(Error::input(
            "make_windows",
            format!("{} split has {len} steps, need {total}", split.name()),
        ));
    }
    let count = (len - total) / stride + 1;
    let n = ds.n_variates();
    let mut inputs = Tensor3::zeros(count, n, lookback);
    let mut targets = Tensor3::zeros(count, n, horizon);
    for w in 0..count {
        let base = start + w * stride;
        for v in 0..n {
            for t in 0..lookback {
                inputs.set(w, v, t, ds.values.get(v, base + t));
            }
            for t in 0..horizon {
                targets.set(w, v, t, ds.values.get(v, base + lookback + t));
            }
        }
    }
    Ok(WindowBatch { inputs, targets })
}

/// Symmetric Pearson correlation estimate with unit diagonal.
#[derive(Debug, Clone)]
pub struct CorrEstimate<T = f64> {
    pub matrix: Matrix<T>,
    pub window: usize,
    pub source_fraction: f64,
    /// Variates skipped because they were constant over the source region.
    pub skipped_variates: usize,
}

const CONST_VAR_TOL: f64 = 1e-24;

/// Pearson correlation of two equal-length series; `None` when either side
/// has (numerically) zero variance.
fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Option<f64> {
    let n = a.len() as f64;
    let mean = |s: &[T]| s.iter().map(|v| v.to_f64_c()).sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x.to_f64_c() - ma;
        let dy = y.to_f64_c() - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    let scale_a = 1.0 + ma * ma;
    let scale_b = 1.0 + mb * mb;
    if va / n <= CONST_VAR_TOL * scale_a || vb / n <= CONST_VAR_TOL * scale_b {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

/// Symmetrize, verify raw entries are within `1 + 1e-9`, clamp to `[-1, 1]`,
/// and pin the diagonal to exactly one.
fn finalize_corr<T: Scalar>(raw: &mut Matrix<f64>) -> Result<Matrix<T>> {
    let n = raw.rows();
    let mut out = Matrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let sym = 0.5 * (raw.get(r, c) + raw.get(c, r));
            if sym.abs() > 1.0 + 1e-9 {
                return Err(Error::Estimation(format!(
                    "correlation entry ({r},{c}) = {sym} outside [-1, 1]"
                )));
            }
            out.set(r, c, T::c(sym.clamp(-1.0, 1.0)));
        }
        out.set(r, r, T::one());
    }
    Ok(out)
}

fn source_len(train_end: usize, source_fraction: f64, op: &'static str) -> Result<usize> {
    if !(source_fraction > 0.0 && source_fraction <= 1.0) {
        return Err(Error::input(
            op,
            format!("source_fraction {source_fraction} not in (0, 1]"),
        ));
    }
    Ok(((source_fraction * train_end as f64).floor() as usize).min(train_end))
}

/// Temporal Pearson correlation of lagged copies of each variate, averaged
/// over variates. For each variate the `window_len` lagged series are
/// `X[j, i .. M' - window_len + i]`, all of uniform length `M' - window_len`,
/// where `M'` is the first `source_fraction` of the training split.
pub fn lagged_temporal_corr<T: Scalar>(
    ds: &TimeSeriesDataset<T>,
    window_len: usize,
    source_fraction: f64,
) -> Result<CorrEstimate<T>> {
    if window_len < 2 {
        return Err(Error::input(
            "lagged_temporal_corr",
            "window_len must be >= 2",
        ));
    }
    let m_prime = source_len(ds.train_end, source_fraction, "lagged_temporal_corr")?;
    if m_prime <= window_len + 1 {
        return Err(Error::Estimation(format!(
            "source region of {m_prime} steps is too short for window_len {window_len}"
        )));
    }
    let series_len = m_prime - window_len;

    let n = ds.n_variates();
    let mut accum = Matrix::<f64>::zeros(window_len, window_len);
    let mut used = 0usize;
    let mut lags: Vec<Vec<T>> = Vec::with_capacity(window_len);
    for v in 0..n {
        lags.clear();
        for i in 0..window_len {
            lags.push((0..series_len).map(|t| ds.values.get(v, i + t)).collect());
        }
        // A constant variate has no defined correlations; leave it out.
        if pearson(&lags[0], &lags[0]).is_none() {
            continue;
        }
        let mut defined = true;
        let mut local = Matrix::<f64>::zeros(window_len, window_len);
        'variate: for p in 0..window_len {
            local.set(p, p, 1.0);
            for q in (p + 1)..window_len {
                match pearson(&lags[p], &lags[q]) {
                    Some(c) => {
                        local.set(p, q, c);
                        local.set(q, p, c);
                    }
                    None => {
                        defined = false;
                        break 'variate;
                    }
                }
            }
        }
        if !defined {
            continue;
        }
        for i in 0..window_len * window_len {
            accum.data_mut()[i] += local.data()[i];
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::Estimation(
            "every variate is constant over the source region".into(),
        ));
    }
    for v in accum.data_mut() {
        *v /= used as f64;
    }
    Ok(CorrEstimate {
        matrix: finalize_corr(&mut accum)?,
        window: window_len,
        source_fraction,
        skipped_variates: n - used,
    })
}

/// Cross-variate Pearson correlation over the training columns. Constant
/// variates keep a unit diagonal and zero off-diagonals (they carry no
/// correlation information) and are counted as skipped.
pub fn variate_corr<T: Scalar>(
    ds: &TimeSeriesDataset<T>,
    source_fraction: f64,
) -> Result<CorrEstimate<T>> {
    let m_prime = source_len(ds.train_end, source_fraction, "variate_corr")?;
    if m_prime < 2 {
        return Err(Error::Estimation("need at least two training steps".into()));
    }
    let n = ds.n_variates();
    let series: Vec<Vec<T>> = (0..n)
        .map(|v| (0..m_prime).map(|t| ds.values.get(v, t)).collect())
        .collect();
    let defined: Vec<bool> = series.iter().map(|s| pearson(s, s).is_some()).collect();
    if !defined.iter().any(|&d| d) {
        return Err(Error::Estimation(
            "every variate is constant over the source region".into(),
        ));
    }
    let mut raw = Matrix::<f64>::zeros(n, n);
    for i in 0..n {
        raw.set(i, i, 1.0);
        for j in (i + 1)..n {
            let c = if defined[i] && defined[j] {
                pearson(&series[i], &series[j]).unwrap_or(0.0)
            } else {
                0.0
            };
            raw.set(i, j, c);
            raw.set(j, i, c);
        }
    }
    Ok(CorrEstimate {
        matrix: finalize_corr(&mut raw)?,
        window: n,
        source_fraction,
        skipped_variates: defined.iter().filter(|&&d| !d).count(),
    })
}

impl<T: Scalar> CorrEstimate<T> {
    /// Check the structural invariants: symmetry, unit diagonal, |entries| <= 1.
    pub fn validate(&self) -> Result<()> {
        let m = &self.matrix;
        if m.rows() != m.cols() || m.rows() != self.window {
            return Err(Error::shape(
                "CorrEstimate::validate",
                "window/matrix mismatch",
            ));
        }
        if m.asymmetry() > T::c(1e-12) {
            return Err(Error::Numerical("correlation matrix not symmetric".into()));
        }
        for i in 0..m.rows() {
            if (m.get(i, i) - T::one()).abs() > T::zero() {
                return Err(Error::Numerical(format!(
                    "diagonal entry {i} is not exactly 1"
                )));
            }
        }
        if m.data().iter().any(|v| v.abs() > T::one()) {
            return Err(Error::Numerical("correlation entry outside [-1, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn synthetic_dataset(
        values: Matrix<f64>,
        train_ratio: f64,
        val_ratio: f64,
    ) -> TimeSeriesDataset {
        let names = (0..values.rows()).map(|i| format!("v{i}")).collect();
        TimeSeriesDataset::new(names, values, train_ratio, val_ratio).unwrap()
    }

    #[test]
    fn load_csv_split_arithmetic() {
        let mut body = String::from("date,a,b,c\n");
        for t in 0..10 {
            body.push_str(&format!("{t},{},{},{}\n", t as f64, t as f64 * 2.0, 1.0));
        }
        let f = write_csv(&body);
        let schema = CsvSchema {
            train_ratio: 0.6,
            val_ratio: 0.2,
            min_train_steps: 1,
        };
        let ds: TimeSeriesDataset = load_csv(f.path(), &schema).unwrap();
        assert_eq!(ds.train_end, 6);
        assert_eq!(ds.val_end, 8);
        assert_eq!(ds.n_variates(), 3);
        assert_eq!(ds.names, vec!["a", "b", "c"]);
        assert_eq!(ds.values.get(1, 3), 6.0);
    }

    #[test]
    fn load_csv_reports_bad_cell_row() {
        let mut body = String::from("date,a\n");
        for t in 0..8 {
            if t == 4 {
                body.push_str(&format!("{t},oops\n"));
            } else {
                body.push_str(&format!("{t},1.5\n"));
            }
        }
        let f = write_csv(&body);
        let err = load_csv::<f64>(f.path(), &CsvSchema::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 5"), "message was: {msg}");
        assert!(msg.contains("non-numeric"), "message was: {msg}");
    }

    #[test]
    fn load_csv_ett_style_header() {
        let mut body = String::from("date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n");
        for d in 1..=20 {
            body.push_str(&format!("2016-07-{d:02} 00:00:00"));
            for v in 0..7 {
                body.push_str(&format!(",{}", d as f64 + v as f64 * 0.1));
            }
            body.push('\n');
        }
        let f = write_csv(&body);
        let schema = CsvSchema {
            train_ratio: 0.6,
            val_ratio: 0.2,
            min_train_steps: 1,
        };
        let ds: TimeSeriesDataset = load_csv(f.path(), &schema).unwrap();
        assert_eq!(ds.n_variates(), 7);
        assert_eq!(ds.names[0], "HUFL");
        assert_eq!(ds.names[6], "OT");
    }

    #[test]
    fn load_csv_rejects_non_monotone_timestamps() {
        let body = "date,a\n3,1.0\n2,2.0\n5,3.0\n";
        let f = write_csv(body);
        let err = load_csv::<f64>(f.path(), &CsvSchema::default()).unwrap_err();
        assert!(err.to_string().contains("not strictly increasing"));
    }

    #[test]
    fn load_csv_enforces_min_train_steps() {
        let mut body = String::from("date,a\n");
        for t in 0..10 {
            body.push_str(&format!("{t},{}\n", t as f64));
        }
        let f = write_csv(&body);
        let schema = CsvSchema {
            train_ratio: 0.6,
            val_ratio: 0.2,
            min_train_steps: 20,
        };
        assert!(load_csv::<f64>(f.path(), &schema).is_err());
    }

    #[test]
    fn load_csv_missing_file() {
        let err =
            load_csv::<f64>(Path::new("/nonexistent/x.csv"), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Data { .. }));
    }

    fn counting_dataset(steps: usize, train_ratio: f64, val_ratio: f64) -> TimeSeriesDataset {
        let mut values = Matrix::zeros(2, steps);
        for t in 0..steps {
            values.set(0, t, t as f64);
            values.set(1, t, -(t as f64));
        }
        synthetic_dataset(values, train_ratio, val_ratio)
    }

    #[test]
    fn window_counting() {
        // 10-step train split, T=4, tau=2, stride 1 -> 5 windows.
        let ds = counting_dataset(20, 0.5, 0.25);
        let batch = make_windows(&ds, Split::Train, 4, 2, 1).unwrap();
        assert_eq!(batch.n_windows(), 5);
        assert_eq!(batch.inputs.dims(), (5, 2, 4));
        assert_eq!(batch.targets.dims(), (5, 2, 2));
    }

    #[test]
    fn window_boundary_case() {
        // A 6-step split fits exactly one T=4, tau=2 window.
        let ds = counting_dataset(12, 0.5, 0.25);
        let batch = make_windows(&ds, Split::Train, 4, 2, 1).unwrap();
        assert_eq!(batch.n_windows(), 1);
        for t in 0..4 {
            assert_eq!(batch.inputs.get(0, 0, t), t as f64);
        }
        for t in 0..2 {
            assert_eq!(batch.targets.get(0, 0, t), (4 + t) as f64);
        }
    }

    #[test]
    fn window_count_matches_enumeration_oracle() {
        let ds = counting_dataset(200, 0.5, 0.25);
        let (lookback, horizon, stride) = (12, 12, 3);
        let batch = make_windows(&ds, Split::Train, lookback, horizon, stride).unwrap();
        // Brute-force enumeration over all admissible start offsets.
        let len = 100;
        let mut expected = 0;
        let mut start = 0;
        while start + lookback + horizon <= len {
            expected += 1;
            start += stride;
        }
        assert_eq!(batch.n_windows(), expected);
    }

    #[test]
    fn window_too_short_split_errors() {
        let ds = counting_dataset(12, 0.5, 0.25);
        assert!(make_windows(&ds, Split::Val, 4, 2, 1).is_err());
    }

    #[test]
    fn windows_respect_split_boundaries() {
        let ds = counting_dataset(40, 0.5, 0.25);
        let batch = make_windows(&ds, Split::Train, 6, 3, 1).unwrap();
        // Last target index must stay strictly below train_end = 20.
        let last = batch.n_windows() - 1;
        assert_eq!(batch.targets.get(last, 0, 2), (ds.train_end - 1) as f64);

        let val = make_windows(&ds, Split::Val, 4, 2, 1).unwrap();
        assert_eq!(val.inputs.get(0, 0, 0), ds.train_end as f64);
    }

    #[test]
    fn lagged_corr_white_noise_is_near_identity() {
        let mut rng = SplitMix64::new(14);
        let m = 40_000;
        let mut values = Matrix::zeros(2, m);
        for v in 0..2 {
            for t in 0..m {
                values.set(v, t, rng.standard_normal());
            }
        }
        let ds = synthetic_dataset(values, 0.8, 0.1);
        let est = lagged_temporal_corr(&ds, 4, 1.0).unwrap();
        est.validate().unwrap();
        let m_prime = ds.train_end as f64;
        let bound = 3.0 / m_prime.sqrt();
        for p in 0..4 {
            for q in 0..4 {
                if p != q {
                    assert!(
                        est.matrix.get(p, q).abs() < bound,
                        "({p},{q}) = {} exceeds {bound}",
                        est.matrix.get(p, q)
                    );
                }
            }
        }
    }

    #[test]
    fn lagged_corr_periodic_series_peaks_at_period() {
        let period = 6;
        let m = 600;
        let mut values = Matrix::zeros(1, m);
        for t in 0..m {
            values.set(
                0,
                t,
                (2.0 * std::f64::consts::PI * t as f64 / period as f64).sin(),
            );
        }
        let ds = synthetic_dataset(values, 0.9, 0.05);
        let est = lagged_temporal_corr(&ds, 2 * period, 1.0).unwrap();
        assert!(
            est.matrix.get(0, period) > 0.999,
            "corr at one period = {}",
            est.matrix.get(0, period)
        );
    }

    fn ar1_series(rng: &mut SplitMix64, rho: f64, len: usize) -> Vec<f64> {
        let mut x = vec![0.0; len];
        let noise_scale = (1.0 - rho * rho).sqrt();
        for t in 1..len {
            x[t] = rho * x[t - 1] + noise_scale * rng.standard_normal();
        }
        x
    }

    #[test]
    fn lagged_corr_matches_ar1_analytic_autocorrelation() {
        let mut rng = SplitMix64::new(77);
        let rho = 0.6;
        let m = 60_000;
        let mut values = Matrix::zeros(1, m);
        for (t, v) in ar1_series(&mut rng, rho, m).into_iter().enumerate() {
            values.set(0, t, v);
        }
        let ds = synthetic_dataset(values, 0.9, 0.05);
        let window = 8;
        let est = lagged_temporal_corr(&ds, window, 1.0).unwrap();
        for p in 0..window {
            for q in 0..window {
                let expected = rho.powi((p as i32 - q as i32).abs());
                assert!(
                    (est.matrix.get(p, q) - expected).abs() < 0.05,
                    "({p},{q}): est {} vs analytic {expected}",
                    est.matrix.get(p, q)
                );
            }
        }
    }

    #[test]
    fn lagged_corr_skips_constant_variates() {
        let mut rng = SplitMix64::new(21);
        let m = 2_000;
        let mut values = Matrix::zeros(2, m);
        for t in 0..m {
            values.set(0, t, 7.5); // constant
            values.set(1, t, rng.standard_normal());
        }
        let ds = synthetic_dataset(values, 0.8, 0.1);
        let est = lagged_temporal_corr(&ds, 3, 1.0).unwrap();
        assert_eq!(est.skipped_variates, 1);

        let mut all_const = Matrix::zeros(1, 100);
        for t in 0..100 {
            all_const.set(0, t, 3.0);
        }
        let ds = synthetic_dataset(all_const, 0.8, 0.1);
        assert!(lagged_temporal_corr(&ds, 3, 1.0).is_err());
    }

    #[test]
    fn lagged_corr_small_source_fraction_stays_close() {
        let mut rng = SplitMix64::new(15);
        let rho = 0.7;
        let m = 30_000;
        let mut values = Matrix::zeros(2, m);
        for v in 0..2 {
            for (t, x) in ar1_series(&mut rng, rho, m).into_iter().enumerate() {
                values.set(v, t, x);
            }
        }
        let ds = synthetic_dataset(values, 0.8, 0.1);
        let frac = 0.2;
        let full = lagged_temporal_corr(&ds, 6, 1.0).unwrap();
        let part = lagged_temporal_corr(&ds, 6, frac).unwrap();
        let bound = 5.0 / (frac * ds.train_end as f64).sqrt();
        let diff = full.matrix.max_abs_diff(&part.matrix);
        assert!(diff < bound, "diff {diff} exceeds {bound}");
    }

    #[test]
    fn variate_corr_identical_and_negated() {
        let mut rng = SplitMix64::new(8);
        let m = 500;
        let mut values = Matrix::zeros(3, m);
        for t in 0..m {
            let x = rng.standard_normal();
            values.set(0, t, x);
            values.set(1, t, x);
            values.set(2, t, -x);
        }
        let ds = synthetic_dataset(values, 0.8, 0.1);
        let est = variate_corr(&ds, 1.0).unwrap();
        assert!((est.matrix.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((est.matrix.get(0, 2) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn variate_corr_matches_textbook_formula() {
        let mut rng = SplitMix64::new(4);
        let m = 300;
        let n = 4;
        let mut values = Matrix::zeros(n, m);
        for v in 0..n {
            for t in 0..m {
                values.set(v, t, rng.uniform(-2.0, 2.0) + v as f64);
            }
        }
        let ds = synthetic_dataset(values, 0.9, 0.05);
        let est = variate_corr(&ds, 1.0).unwrap();
        let m_prime = ds.train_end;
        // Independent textbook computation: covariance over sqrt of variances.
        for i in 0..n {
            for j in 0..n {
                let xi: Vec<f64> = (0..m_prime).map(|t| ds.values.get(i, t)).collect();
                let xj: Vec<f64> = (0..m_prime).map(|t| ds.values.get(j, t)).collect();
                let mi = xi.iter().sum::<f64>() / m_prime as f64;
                let mj = xj.iter().sum::<f64>() / m_prime as f64;
                let cov: f64 = xi
                    .iter()
                    .zip(&xj)
                    .map(|(a, b)| (a - mi) * (b - mj))
                    .sum::<f64>();
                let vi: f64 = xi.iter().map(|a| (a - mi) * (a - mi)).sum::<f64>();
                let vj: f64 = xj.iter().map(|b| (b - mj) * (b - mj)).sum::<f64>();
                let expected = if i == j {
                    1.0
                } else {
                    cov / (vi.sqrt() * vj.sqrt())
                };
                assert!(
                    (est.matrix.get(i, j) - expected).abs() < 1e-12,
                    "entry ({i},{j})"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn corr_estimates_satisfy_invariants(seed in 0u64..200) {
            let mut rng = SplitMix64::new(seed);
            let m = 400;
            let mut values = Matrix::zeros(3, m);
            for v in 0..3 {
                for t in 0..m {
                    values.set(v, t, rng.standard_normal() + (t as f64 * 0.01).sin());
                }
            }
            let ds = synthetic_dataset(values, 0.7, 0.1);
            for est in [lagged_temporal_corr(&ds, 5, 1.0).unwrap(), variate_corr(&ds, 1.0).unwrap()] {
                prop_assert!(est.validate().is_ok());
            }
        }

        #[test]
        fn train_windows_never_leak(steps in 40usize..120, lookback in 2usize..8, horizon in 1usize..4) {
            let ds = counting_dataset(steps, 0.5, 0.25);
            if let Ok(batch) = make_windows(&ds, Split::Train, lookback, horizon, 1) {
                let last = batch.n_windows() - 1;
                let max_target = batch.targets.get(last, 0, horizon - 1);
                prop_assert!(max_target < ds.train_end as f64);
            }
        }
    }
}
