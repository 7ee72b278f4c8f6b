//! CSV ingestion/emission and the "BALA1" binary sparse-row format.
//!
//! CSV input: a header row, one designated batch column, an optional
//! label column; every other column is parsed as a floating-point
//! feature. Row order defines sample indices. Rows with unparsable
//! features are rejected, not imputed.
//!
//! BALA1 layout (all integers little-endian u64, floats little-endian
//! f64): magic b"BALA1", n (column count), m (row count), then per row
//! `index, nnz, nnz * (col, val)` with strictly increasing columns and
//! finite nonzero values.

use std::io::{BufWriter, Write as _};
use std::path::Path;

use crate::core_model::{BatchLabels, ClusterLabels, DenseLabels, ProfileMatrix, SparseRow};
use crate::error::{BalansError, Result};

/// A parsed CSV dataset, keeping enough of the original text to re-emit
/// the file with the same header and row order.
#[derive(Debug)]
pub struct Dataset {
    /// Full original header, in file order.
    pub header: Vec<String>,
    /// Header indices of the feature columns, in file order.
    pub feature_cols: Vec<usize>,
    pub batch_col: usize,
    pub label_col: Option<usize>,
    /// Raw batch strings, one per row, echoed verbatim on output.
    pub raw_batch: Vec<String>,
    pub raw_label: Option<Vec<String>>,
    pub profiles: ProfileMatrix,
    pub batches: BatchLabels,
    pub labels: Option<ClusterLabels>,
}

/// Parses profiles from CSV bytes. `batch_col` names the batch column
/// (flag `--batch-col`); `label_col` optionally names a label column
/// (flag `--label-col`).
pub fn parse_dataset(bytes: &[u8], batch_col: &str, label_col: Option<&str>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let bcol = header
        .iter()
        .position(|h| h == batch_col)
        .ok_or_else(|| {
            BalansError::InvalidInput(format!(
                "batch column {batch_col:?} not found in header (set --batch-col)"
            ))
        })?;
    let lcol = match label_col {
        Some(name) => Some(header.iter().position(|h| h == name).ok_or_else(|| {
            BalansError::InvalidInput(format!(
                "label column {name:?} not found in header (set --label-col)"
            ))
        })?),
        None => None,
    };
    if lcol == Some(bcol) {
        return Err(BalansError::InvalidInput(
            "batch and label columns must differ".into(),
        ));
    }
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&c| c != bcol && Some(c) != lcol)
        .collect();
    if feature_cols.is_empty() {
        return Err(BalansError::InvalidInput(
            "no feature columns remain after batch/label columns".into(),
        ));
    }

    let mut raw_batch = Vec::new();
    let mut raw_label = lcol.map(|_| Vec::new());
    let mut values: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (ri, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(BalansError::InvalidInput(format!(
                "row {ri}: expected {} fields, got {}",
                header.len(),
                record.len()
            )));
        }
        raw_batch.push(record[bcol].to_string());
        if let (Some(l), Some(out)) = (lcol, raw_label.as_mut()) {
            out.push(record[l].to_string());
        }
        for &c in &feature_cols {
            let field = &record[c];
            let v: f64 = field.trim().parse().map_err(|_| {
                BalansError::InvalidInput(format!(
                    "row {ri}, column {:?}: unparsable feature value {field:?}",
                    header[c]
                ))
            })?;
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(BalansError::EmptyMatrix {
            n: 0,
            d: feature_cols.len(),
        });
    }
    let data = ndarray::Array2::from_shape_vec((n, feature_cols.len()), values)
        .expect("shape follows from construction");
    let profiles = ProfileMatrix::new(data)?;
    let batches = DenseLabels::from_raw(&raw_batch);
    let labels = raw_label.as_ref().map(|rl| DenseLabels::from_raw(rl));
    Ok(Dataset {
        header,
        feature_cols,
        batch_col: bcol,
        label_col: lcol,
        raw_batch,
        raw_label,
        profiles,
        batches,
        labels,
    })
}

pub fn read_dataset(path: &Path, batch_col: &str, label_col: Option<&str>) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    parse_dataset(&bytes, batch_col, label_col)
}

/// Round-trip-exact decimal formatting for every float we emit.
pub fn format_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes the dataset back out with the original header and row order,
/// replacing feature values with `corrected` and echoing the batch and
/// label fields verbatim.
pub fn write_corrected(path: &Path, dataset: &Dataset, corrected: &ProfileMatrix) -> Result<()> {
    let retained: Vec<usize> = (0..dataset.feature_cols.len()).collect();
    write_corrected_subset(path, dataset, &retained, corrected)
}

/// Like [`write_corrected`] but for a feature subset: `retained` holds
/// ascending indices into `dataset.feature_cols` and `corrected` has one
/// column per retained feature. Dropped feature columns are omitted from
/// the output header; batch/label columns keep their positions.
pub fn write_corrected_subset(
    path: &Path,
    dataset: &Dataset,
    retained: &[usize],
    corrected: &ProfileMatrix,
) -> Result<()> {
    if corrected.n() != dataset.profiles.n() {
        return Err(BalansError::DimensionMismatch {
            what: "corrected rows",
            got: corrected.n(),
            expected: dataset.profiles.n(),
        });
    }
    if corrected.d() != retained.len() {
        return Err(BalansError::DimensionMismatch {
            what: "corrected columns",
            got: corrected.d(),
            expected: retained.len(),
        });
    }
    // Map header index -> corrected column, for retained features only.
    let mut inverse = vec![None; dataset.header.len()];
    for (ci, &fi) in retained.iter().enumerate() {
        inverse[dataset.feature_cols[fi]] = Some(ci);
    }
    let kept_cols: Vec<usize> = (0..dataset.header.len())
        .filter(|&c| {
            inverse[c].is_some() || c == dataset.batch_col || Some(c) == dataset.label_col
        })
        .collect();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(kept_cols.iter().map(|&c| dataset.header[c].as_str()))?;
    for i in 0..corrected.n() {
        let record: Vec<String> = kept_cols
            .iter()
            .map(|&c| {
                if let Some(ci) = inverse[c] {
                    format_f64(corrected.data()[(i, ci)])
                } else if c == dataset.batch_col {
                    dataset.raw_batch[i].clone()
                } else {
                    dataset.raw_label.as_ref().expect("label column exists")[i].clone()
                }
            })
            .collect();
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a synthetic dataset as CSV with feature columns f0..f{d-1}
/// plus `batch` and `label` columns.
pub fn write_labeled_profiles(
    path: &Path,
    profiles: &ProfileMatrix,
    batches: &BatchLabels,
    labels: &ClusterLabels,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..profiles.d()).map(|f| format!("f{f}")).collect();
    header.push("batch".into());
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..profiles.n() {
        let mut record: Vec<String> = profiles.row(i).iter().map(|&v| format_f64(v)).collect();
        record.push(batches.get(i).to_string());
        record.push(labels.get(i).to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Dense square matrix as headerless CSV.
pub fn write_dense_csv(path: &Path, matrix: &ndarray::Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for i in 0..matrix.nrows() {
        let line: Vec<String> = (0..matrix.ncols())
            .map(|j| format_f64(matrix[(i, j)]))
            .collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

const BALA1_MAGIC: &[u8; 5] = b"BALA1";

/// Encodes sampled sparse rows (A_S) in the BALA1 binary layout.
pub fn encode_bala1(row_indices: &[usize], rows: &[SparseRow], n: usize) -> Vec<u8> {
    assert_eq!(row_indices.len(), rows.len());
    let mut out = Vec::new();
    out.extend_from_slice(BALA1_MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    for (&ri, row) in row_indices.iter().zip(rows) {
        out.extend_from_slice(&(ri as u64).to_le_bytes());
        out.extend_from_slice(&(row.nnz() as u64).to_le_bytes());
        for (c, v) in row.iter() {
            out.extend_from_slice(&(c as u64).to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(BalansError::BadBinary("truncated input".into()));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Decodes a BALA1 buffer, validating structure: in-range strictly
/// increasing columns, finite nonzero values, distinct row indices.
pub fn decode_bala1(bytes: &[u8]) -> Result<(Vec<usize>, Vec<SparseRow>, usize)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(5)? != BALA1_MAGIC {
        return Err(BalansError::BadBinary("bad magic".into()));
    }
    let n = cur.u64()? as usize;
    let m = cur.u64()? as usize;
    // Each row costs at least 16 bytes; reject before allocating.
    if m > cur.remaining() / 16 {
        return Err(BalansError::BadBinary(format!(
            "row count {m} exceeds what the input can hold"
        )));
    }
    let mut row_indices = Vec::with_capacity(m);
    let mut rows = Vec::with_capacity(m);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..m {
        let ri = cur.u64()? as usize;
        if ri >= n {
            return Err(BalansError::BadBinary(format!(
                "row index {ri} out of range (n = {n})"
            )));
        }
        if !seen.insert(ri) {
            return Err(BalansError::BadBinary(format!("duplicate row index {ri}")));
        }
        let nnz = cur.u64()? as usize;
        if nnz > cur.remaining() / 16 || nnz > n {
            return Err(BalansError::BadBinary(format!(
                "nnz {nnz} exceeds what the input can hold"
            )));
        }
        let mut pairs = Vec::with_capacity(nnz);
        let mut prev: Option<usize> = None;
        for _ in 0..nnz {
            let c = cur.u64()? as usize;
            let v = cur.f64()?;
            if c >= n {
                return Err(BalansError::BadBinary(format!(
                    "column {c} out of range (n = {n})"
                )));
            }
            if prev.is_some_and(|p| c <= p) {
                return Err(BalansError::BadBinary(
                    "columns not strictly increasing".into(),
                ));
            }
            if !v.is_finite() || v == 0.0 {
                return Err(BalansError::BadBinary(format!(
                    "value at column {c} must be finite and nonzero"
                )));
            }
            prev = Some(c);
            pairs.push((c, v));
        }
        row_indices.push(ri);
        rows.push(SparseRow::from_pairs(pairs));
    }
    if cur.remaining() != 0 {
        return Err(BalansError::BadBinary(format!(
            "{} trailing bytes",
            cur.remaining()
        )));
    }
    Ok((row_indices, rows, n))
}

pub fn write_bala1(path: &Path, row_indices: &[usize], rows: &[SparseRow], n: usize) -> Result<()> {
    std::fs::write(path, encode_bala1(row_indices, rows, n))?;
    Ok(())
}

pub fn read_bala1(path: &Path) -> Result<(Vec<usize>, Vec<SparseRow>, usize)> {
    decode_bala1(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SMALL: &str = "\
f1,batch,f2,label
0.5,a,1.25,x
-3,b,2,y
0.125,a,7,x
";

    #[test]
    fn parse_small_dataset() {
        let d = parse_dataset(SMALL.as_bytes(), "batch", Some("label")).unwrap();
        assert_eq!(d.header, vec!["f1", "batch", "f2", "label"]);
        assert_eq!(d.feature_cols, vec![0, 2]);
        assert_eq!(d.profiles.n(), 3);
        assert_eq!(d.profiles.d(), 2);
        assert_eq!(d.profiles.data()[(1, 0)], -3.0);
        assert_eq!(d.profiles.data()[(2, 1)], 7.0);
        // First-appearance mapping: a -> 0, b -> 1.
        assert_eq!(d.batches.labels(), &[0, 1, 0]);
        assert_eq!(d.labels.as_ref().unwrap().labels(), &[0, 1, 0]);
    }

    #[test]
    fn missing_batch_column_names_the_flag() {
        let err = parse_dataset(SMALL.as_bytes(), "plate", None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("--batch-col"), "{msg}");
    }

    #[test]
    fn unparsable_feature_is_rejected() {
        let bad = "f1,batch\nok,a\n";
        let err = parse_dataset(bad.as_bytes(), "batch", None).unwrap_err();
        assert!(err.to_string().contains("unparsable"), "{err}");
    }

    #[test]
    fn ragged_row_is_rejected() {
        let bad = "f1,f2,batch\n1.0,2.0,a\n1.0,b\n";
        assert!(parse_dataset(bad.as_bytes(), "batch", None).is_err());
    }

    #[test]
    fn corrected_roundtrip_preserves_header_and_passthrough() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let d = parse_dataset(SMALL.as_bytes(), "batch", Some("label")).unwrap();
        write_corrected(&path, &d, &d.profiles).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "f1,batch,f2,label");
        assert_eq!(lines.next().unwrap(), "0.5,a,1.25,x");
        assert_eq!(lines.next().unwrap(), "-3,b,2,y");
        // Re-reading yields the same numbers bit-exactly.
        let d2 = read_dataset(&path, "batch", Some("label")).unwrap();
        assert_eq!(d2.profiles.data(), d.profiles.data());
    }

    #[test]
    fn bala1_known_bytes() {
        let rows = vec![SparseRow::from_pairs(vec![(0, 1.0), (2, 0.5)])];
        let bytes = encode_bala1(&[1], &rows, 3);
        assert_eq!(&bytes[0..5], b"BALA1");
        assert_eq!(u64::from_le_bytes(bytes[5..13].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[13..21].try_into().unwrap()), 1);
        assert_eq!(bytes.len(), 5 + 8 + 8 + 8 + 8 + 2 * 16);
        let (idx, back, n) = decode_bala1(&bytes).unwrap();
        assert_eq!(n, 3);
        assert_eq!(idx, vec![1]);
        assert_eq!(back[0].iter().collect::<Vec<_>>(), vec![(0, 1.0), (2, 0.5)]);
    }

    #[test]
    fn bala1_rejects_malformed() {
        assert!(decode_bala1(b"").is_err());
        assert!(decode_bala1(b"NOPE!").is_err());
        let rows = vec![SparseRow::from_pairs(vec![(0, 1.0)])];
        let mut bytes = encode_bala1(&[0], &rows, 2);
        // Truncation.
        assert!(decode_bala1(&bytes[..bytes.len() - 1]).is_err());
        // Trailing garbage.
        bytes.push(0);
        assert!(decode_bala1(&bytes).is_err());
        // Huge claimed row count with no payload.
        let mut hdr = b"BALA1".to_vec();
        hdr.extend_from_slice(&u64::MAX.to_le_bytes());
        hdr.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_bala1(&hdr).is_err());
    }

    proptest! {
        #[test]
        fn bala1_roundtrip(raw in proptest::collection::vec(
            (0usize..40, proptest::collection::vec((0usize..40, -1e300f64..1e300), 0..10)),
            0..8,
        )) {
            let mut seen_rows = std::collections::HashSet::new();
            let mut idx = Vec::new();
            let mut rows = Vec::new();
            for (ri, pairs) in raw {
                if !seen_rows.insert(ri) {
                    continue;
                }
                let mut seen_cols = std::collections::HashSet::new();
                let pairs: Vec<(usize, f64)> = pairs
                    .into_iter()
                    .filter(|&(c, v)| v != 0.0 && seen_cols.insert(c))
                    .collect();
                idx.push(ri);
                rows.push(SparseRow::from_pairs(pairs));
            }
            let bytes = encode_bala1(&idx, &rows, 40);
            let (idx2, rows2, n2) = decode_bala1(&bytes).unwrap();
            prop_assert_eq!(n2, 40);
            prop_assert_eq!(&idx2, &idx);
            for (a, b) in rows.iter().zip(&rows2) {
                let av: Vec<(usize, u64)> = a.iter().map(|(c, v)| (c, v.to_bits())).collect();
                let bv: Vec<(usize, u64)> = b.iter().map(|(c, v)| (c, v.to_bits())).collect();
                prop_assert_eq!(av, bv);
            }
        }

        #[test]
        fn bala1_decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            let _ = decode_bala1(&bytes);
        }

        #[test]
        fn format_f64_roundtrips(v in any::<f64>()) {
            prop_assume!(v.is_finite());
            let s = format_f64(v);
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
