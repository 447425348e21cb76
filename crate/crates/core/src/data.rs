//! Telemetry ingestion, min-max normalization, chronological splitting, and
//! windowing.
//!
//! CSV format: UTF-8, comma-separated, one header row, one row per 1 Hz
//! sample. Lines starting with `#` are ignored (the synthetic generator
//! writes its parameters as `# meta:` comment lines above the header).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equal-length named columns plus the designated target column.
/// `start_index` tracks where the frame begins in its source series so that
/// split provenance survives windowing.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    pub columns: Vec<String>,
    /// Column-major values; `values[i]` belongs to `columns[i]`.
    pub values: Vec<Vec<f64>>,
    pub target: Option<String>,
    pub sample_period_s: f64,
    pub start_index: usize,
    pub meta: BTreeMap<String, String>,
    /// Rows dropped during ingestion because a selected value was missing or
    /// unparsable.
    pub dropped_rows: usize,
}

impl SeriesFrame {
    pub fn len(&self) -> usize {
        self.values.first().map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.values[i].as_slice())
            .ok_or_else(|| Error::Schema(format!("'{name}'")))
    }

    pub fn target_column(&self) -> Result<&[f64]> {
        let name = self
            .target
            .as_ref()
            .ok_or_else(|| Error::Data("frame has no target column".into()))?;
        self.column(name)
    }
}

/// Load selected columns from a CSV file. Rows where any selected value is
/// missing or does not parse as a finite f64 are dropped and counted in
/// `dropped_rows`. A `target` of `None` makes the target column optional
/// (prediction on unlabeled data); `Some` makes its absence a schema error.
pub fn load_csv(path: &Path, features: &[String], target: Option<&str>) -> Result<SeriesFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("bad header in {}: {e}", path.display())))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();

    let mut wanted: Vec<String> = features.to_vec();
    if let Some(t) = target {
        wanted.push(t.to_string());
    }
    let missing: Vec<String> = wanted
        .iter()
        .filter(|w| !headers.iter().any(|h| h == *w))
        .map(|w| format!("'{w}'"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(missing.join(", ")));
    }
    let indices: Vec<usize> = wanted
        .iter()
        .map(|w| headers.iter().position(|h| h == w).unwrap())
        .collect();

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("csv read error: {e}")))?;
        let mut row: Vec<f64> = Vec::with_capacity(indices.len());
        let mut good = true;
        for &idx in &indices {
            match record.get(idx).map(|s| s.trim().parse::<f64>()) {
                Some(Ok(v)) if v.is_finite() => row.push(v),
                _ => {
                    good = false;
                    break;
                }
            }
        }
        if good {
            for (col, v) in values.iter_mut().zip(row) {
                col.push(v);
            }
        } else {
            dropped += 1;
        }
    }
    if values[0].is_empty() {
        return Err(Error::Data(format!(
            "{} contains no usable rows",
            path.display()
        )));
    }
    Ok(SeriesFrame {
        columns: wanted,
        values,
        target: target.map(|t| t.to_string()),
        sample_period_s: 1.0,
        start_index: 0,
        meta: BTreeMap::new(),
        dropped_rows: dropped,
    })
}

/// Write a frame as CSV, with its metadata as `# meta:` comment lines.
pub fn write_csv(frame: &SeriesFrame, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (k, v) in &frame.meta {
        writeln!(out, "# meta: {k}={v}")?;
    }
    writeln!(out, "{}", frame.columns.join(","))?;
    let n = frame.len();
    let mut line = String::new();
    for row in 0..n {
        line.clear();
        for (i, col) in frame.values.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format!("{}", col[row]));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Per-column (min, max) fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub features: Vec<ColumnStats>,
    pub target: ColumnStats,
}

impl NormStats {
    pub fn target_scale(&self) -> f64 {
        self.target.max - self.target.min
    }

    pub fn denormalize_target(&self, v: f64) -> f64 {
        v * self.target_scale() + self.target.min
    }

    pub fn normalize_target(&self, v: f64) -> f64 {
        (v - self.target.min) / self.target_scale()
    }
}

fn fit_column(name: &str, data: &[f64]) -> Result<ColumnStats> {
    let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(Error::Data(format!(
            "degenerate range in column '{name}': min = max = {min}"
        )));
    }
    Ok(ColumnStats {
        name: name.to_string(),
        min,
        max,
    })
}

/// Min-max normalize a frame's feature and target columns.
///
/// With `stats = None` (train time) the (min, max) are fitted on this frame,
/// mapping it exactly onto [0, 1]. With `stats = Some` (test time) the given
/// statistics are reused; values landing outside [-0.5, 1.5] after mapping
/// are clamped there and counted in the returned clamp total.
pub fn fit_normalize(
    frame: &SeriesFrame,
    features: &[String],
    stats: Option<&NormStats>,
) -> Result<(SeriesFrame, NormStats, usize)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => {
            let feats = features
                .iter()
                .map(|f| fit_column(f, frame.column(f)?))
                .collect::<Result<Vec<_>>>()?;
            let tname = frame
                .target
                .clone()
                .ok_or_else(|| Error::Data("cannot fit normalization without a target".into()))?;
            let target = fit_column(&tname, frame.column(&tname)?)?;
            NormStats {
                features: feats,
                target,
            }
        }
    };

    let mut clamped = 0usize;
    let mut out = frame.clone();
    let mut apply = |name: &str, st: &ColumnStats, out: &mut SeriesFrame| -> Result<()> {
        let idx = out
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema(format!("'{name}'")))?;
        let range = st.max - st.min;
        if !(range > 0.0) {
            return Err(Error::Data(format!("degenerate range for column '{name}'")));
        }
        for v in &mut out.values[idx] {
            let mut x = (*v - st.min) / range;
            if !(-0.5..=1.5).contains(&x) {
                x = x.clamp(-0.5, 1.5);
                clamped += 1;
            }
            *v = x;
        }
        Ok(())
    };
    for st in &stats.features {
        apply(&st.name, st, &mut out)?;
    }
    if out.target.is_some() {
        apply(&stats.target.name.clone(), &stats.target, &mut out)?;
    }
    Ok((out, stats, clamped))
}

/// Contiguous chronological split: first 70% of rows train (floor), the rest
/// test. Requires at least `10 * window` rows.
pub fn split_70_30(frame: &SeriesFrame, window: usize) -> Result<(SeriesFrame, SeriesFrame)> {
    let n = frame.len();
    if n < 10 * window {
        return Err(Error::Data(format!(
            "series of length {n} too short to split (need >= {})",
            10 * window
        )));
    }
    let cut = (0.7 * n as f64).floor() as usize;
    let slice = |lo: usize, hi: usize, start: usize| SeriesFrame {
        columns: frame.columns.clone(),
        values: frame.values.iter().map(|c| c[lo..hi].to_vec()).collect(),
        target: frame.target.clone(),
        sample_period_s: frame.sample_period_s,
        start_index: start,
        meta: frame.meta.clone(),
        dropped_rows: 0,
    };
    Ok((
        slice(0, cut, frame.start_index),
        slice(cut, n, frame.start_index + cut),
    ))
}

/// Stride-1 windows of normalized features with the target at each window's
/// final time step.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    /// Each entry is one T x F window, row-major.
    pub inputs: Vec<Vec<f64>>,
    /// Normalized target at the final row of each window; `None` when the
    /// source frame carried no target column.
    pub targets: Option<Vec<f64>>,
    pub window: usize,
    pub n_features: usize,
    /// Global (start_row, end_row) source indices of each window, inclusive.
    pub provenance: Vec<(usize, usize)>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn targets_required(&self) -> Result<&[f64]> {
        self.targets
            .as_deref()
            .ok_or_else(|| Error::Data("dataset has no targets".into()))
    }
}

/// Cut a (normalized) frame into overlapping windows, stride 1.
pub fn make_windows(
    frame: &SeriesFrame,
    features: &[String],
    window: usize,
) -> Result<WindowedDataset> {
    let n = frame.len();
    if n < window {
        return Err(Error::Data(format!(
            "series of length {n} shorter than window {window}"
        )));
    }
    let cols: Vec<&[f64]> = features
        .iter()
        .map(|f| frame.column(f))
        .collect::<Result<Vec<_>>>()?;
    let f_dim = cols.len();
    let target = match &frame.target {
        Some(t) => Some(frame.column(t)?),
        None => None,
    };
    let count = n - window + 1;
    let mut inputs = Vec::with_capacity(count);
    let mut targets = target.map(|_| Vec::with_capacity(count));
    let mut provenance = Vec::with_capacity(count);
    for start in 0..count {
        let mut w = Vec::with_capacity(window * f_dim);
        for t in 0..window {
            for col in &cols {
                w.push(col[start + t]);
            }
        }
        inputs.push(w);
        if let (Some(ts), Some(tc)) = (&mut targets, target) {
            ts.push(tc[start + window - 1]);
        }
        provenance.push((
            frame.start_index + start,
            frame.start_index + start + window - 1,
        ));
    }
    Ok(WindowedDataset {
        inputs,
        targets,
        window,
        n_features: f_dim,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn frame_from_cols(cols: &[(&str, Vec<f64>)], target: Option<&str>) -> SeriesFrame {
        SeriesFrame {
            columns: cols.iter().map(|(n, _)| n.to_string()).collect(),
            values: cols.iter().map(|(_, v)| v.clone()).collect(),
            target: target.map(|s| s.to_string()),
            sample_period_s: 1.0,
            start_index: 0,
            meta: BTreeMap::new(),
            dropped_rows: 0,
        }
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_well_formed_csv() {
        let f = write_temp("a,b,power\n1,2,3\n4,5,6\n7,8,9\n");
        let frame = load_csv(
            f.path(),
            &["a".to_string(), "b".to_string()],
            Some("power"),
        )
        .unwrap();
        assert_eq!(frame.len(), 3);
        assert_eq!(frame.dropped_rows, 0);
        assert_eq!(frame.column("a").unwrap(), &[1.0, 4.0, 7.0]);
        assert_eq!(frame.target_column().unwrap(), &[3.0, 6.0, 9.0]);
    }

    #[test]
    fn load_missing_target_is_schema_error() {
        let f = write_temp("a,b\n1,2\n");
        let err = load_csv(f.path(), &["a".to_string()], Some("power")).unwrap_err();
        match err {
            Error::Schema(msg) => assert!(msg.contains("power")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_rows_are_dropped_and_counted() {
        let mut content = String::from("a,power\n");
        for i in 0..100 {
            if i == 37 {
                content.push_str("oops,1\n");
            } else {
                content.push_str(&format!("{i},{}\n", i * 2));
            }
        }
        let f = write_temp(&content);
        let frame = load_csv(f.path(), &["a".to_string()], Some("power")).unwrap();
        assert_eq!(frame.len(), 99);
        assert_eq!(frame.dropped_rows, 1);
    }

    #[test]
    fn comment_lines_are_skipped() {
        let f = write_temp("# meta: seed=7\n# meta: duration_s=800\na,power\n1,2\n");
        let frame = load_csv(f.path(), &["a".to_string()], Some("power")).unwrap();
        assert_eq!(frame.len(), 1);
    }

    #[test]
    fn normalize_maps_fitted_column_to_unit_range() {
        let frame = frame_from_cols(
            &[("x", vec![0.0, 5.0, 10.0]), ("power", vec![1.0, 2.0, 3.0])],
            Some("power"),
        );
        let (norm, stats, clamped) = fit_normalize(&frame, &["x".to_string()], None).unwrap();
        assert_eq!(norm.column("x").unwrap(), &[0.0, 0.5, 1.0]);
        assert_eq!(clamped, 0);
        assert_eq!(stats.features[0].min, 0.0);
        assert_eq!(stats.features[0].max, 10.0);
    }

    #[test]
    fn normalize_reuses_stats_without_clamping_in_band() {
        let train = frame_from_cols(
            &[("x", vec![0.0, 10.0]), ("power", vec![0.0, 1.0])],
            Some("power"),
        );
        let (_, stats, _) = fit_normalize(&train, &["x".to_string()], None).unwrap();
        let test = frame_from_cols(
            &[("x", vec![12.0]), ("power", vec![0.5])],
            Some("power"),
        );
        let (norm, _, clamped) = fit_normalize(&test, &["x".to_string()], Some(&stats)).unwrap();
        assert_relative_eq!(norm.column("x").unwrap()[0], 1.2, epsilon = 1e-12);
        assert_eq!(clamped, 0);

        // far outside the band -> clamped and counted
        let wild = frame_from_cols(
            &[("x", vec![100.0]), ("power", vec![0.5])],
            Some("power"),
        );
        let (norm, _, clamped) = fit_normalize(&wild, &["x".to_string()], Some(&stats)).unwrap();
        assert_eq!(norm.column("x").unwrap()[0], 1.5);
        assert_eq!(clamped, 1);
    }

    #[test]
    fn normalize_round_trips() {
        let frame = frame_from_cols(
            &[
                ("x", vec![3.0, 4.5, 9.0, 7.25]),
                ("power", vec![10.0, 30.0, 20.0, 15.0]),
            ],
            Some("power"),
        );
        let (norm, stats, _) = fit_normalize(&frame, &["x".to_string()], None).unwrap();
        let y = norm.target_column().unwrap();
        let orig = frame.target_column().unwrap();
        for (n, o) in y.iter().zip(orig) {
            assert_relative_eq!(stats.denormalize_target(*n), *o, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_column_is_degenerate() {
        let frame = frame_from_cols(
            &[("x", vec![2.0, 2.0, 2.0]), ("power", vec![1.0, 2.0, 3.0])],
            Some("power"),
        );
        assert!(matches!(
            fit_normalize(&frame, &["x".to_string()], None),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn split_rounding_rules() {
        let mk = |n: usize| {
            frame_from_cols(
                &[("x", (0..n).map(|i| i as f64).collect::<Vec<_>>())],
                None,
            )
        };
        let (tr, te) = split_70_30(&mk(100), 4).unwrap();
        assert_eq!((tr.len(), te.len()), (70, 30));
        let (tr, te) = split_70_30(&mk(101), 4).unwrap();
        assert_eq!((tr.len(), te.len()), (70, 31));
        assert_eq!(te.start_index, 70);
        assert_eq!(te.column("x").unwrap()[0], 70.0);
        assert!(matches!(split_70_30(&mk(30), 4), Err(Error::Data(_))));
    }

    #[test]
    fn windows_align_targets_to_final_step() {
        let frame = frame_from_cols(
            &[
                ("x", vec![0.1, 0.2, 0.3, 0.4, 0.5]),
                ("power", vec![1.0, 2.0, 3.0, 4.0, 5.0]),
            ],
            Some("power"),
        );
        let ds = make_windows(&frame, &["x".to_string()], 3).unwrap();
        assert_eq!(ds.len(), 3); // 5 - 3 + 1
        assert_eq!(ds.targets.as_ref().unwrap(), &vec![3.0, 4.0, 5.0]);
        assert_eq!(ds.inputs[0], vec![0.1, 0.2, 0.3]);
        assert_eq!(ds.provenance[0], (0, 2));
        assert_eq!(ds.provenance[2], (2, 4));
    }

    #[test]
    fn windows_preserve_order() {
        let frame = frame_from_cols(
            &[("x", (0..20).map(|i| i as f64 / 20.0).collect::<Vec<_>>())],
            None,
        );
        let ds = make_windows(&frame, &["x".to_string()], 4).unwrap();
        for i in 1..ds.len() {
            assert!(ds.provenance[i - 1].1 < ds.provenance[i].1);
        }
        assert!(ds.targets.is_none());
    }

    #[test]
    fn no_test_window_touches_train_rows() {
        let frame = frame_from_cols(
            &[
                ("x", (0..200).map(|i| (i % 17) as f64).collect::<Vec<_>>()),
                ("power", (0..200).map(|i| i as f64).collect::<Vec<_>>()),
            ],
            Some("power"),
        );
        let window = 8;
        let (train, test) = split_70_30(&frame, window).unwrap();
        let train_ds = make_windows(&train, &["x".to_string()], window).unwrap();
        let test_ds = make_windows(&test, &["x".to_string()], window).unwrap();
        let train_max = train_ds.provenance.iter().map(|p| p.1).max().unwrap();
        let test_min = test_ds.provenance.iter().map(|p| p.0).min().unwrap();
        assert!(train_max < test_min, "windows must not straddle the split");
        assert_eq!(test_min, 140);
    }

    #[test]
    fn csv_round_trip_preserves_values_and_meta() {
        let mut frame = frame_from_cols(
            &[
                ("x", vec![0.125, 3.5, -7.0625]),
                ("power", vec![1.5, 2.25, 3.125]),
            ],
            Some("power"),
        );
        frame.meta.insert("seed".into(), "42".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.csv");
        write_csv(&frame, &path).unwrap();
        let loaded = load_csv(&path, &["x".to_string()], Some("power")).unwrap();
        assert_eq!(loaded.column("x").unwrap(), frame.column("x").unwrap());
        assert_eq!(
            loaded.target_column().unwrap(),
            frame.target_column().unwrap()
        );
    }
}
