//! On-disk dump format: a directory holding `meta.json`, `mu.csv` and the
//! optional `sigma_sq.csv` / `labels.csv`.
//!
//! Matrix files carry one header row `dim_0,...,dim_{d-1}` followed by one row
//! per datapoint. Reals are written with 17 significant digits so that a load
//! after save reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DumpMeta, LatentDump};

pub const META_FILE: &str = "meta.json";
pub const MU_FILE: &str = "mu.csv";
pub const SIGMA_SQ_FILE: &str = "sigma_sq.csv";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Serialize, Deserialize)]
struct MetaFile {
    source: String,
    n: usize,
    d: usize,
    has_sigma: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    hyper_params: BTreeMap<String, serde_json::Value>,
}

/// Formats a real with 17 significant digits.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Lists every broken [`LatentDump`] invariant; empty when the dump is valid.
pub fn validate(dump: &LatentDump) -> Vec<String> {
    let mut out = Vec::new();
    let (n, d) = dump.mu.shape();
    if n < 2 {
        out.push("N >= 2 violated".to_string());
    }
    if d < 1 {
        out.push("d >= 1 violated".to_string());
    }
    if let Some(msg) = non_finite(&dump.mu, "mu") {
        out.push(msg);
    }
    if let Some(s) = &dump.sigma_sq {
        if s.shape() != (n, d) {
            out.push(format!(
                "sigma_sq shape {}x{} does not match mu shape {n}x{d}",
                s.nrows(),
                s.ncols()
            ));
        }
        if let Some(msg) = non_finite(s, "sigma_sq") {
            out.push(msg);
        }
        let bad: Vec<(usize, usize)> = cells(s)
            .filter(|&(_, _, v)| v <= 0.0)
            .map(|(r, c, _)| (r, c))
            .collect();
        if let Some(&(r, c)) = bad.first() {
            out.push(format!(
                "sigma_sq positivity violated: {} entries <= 0 (first at row {r}, dim {c})",
                bad.len()
            ));
        }
    }
    if let Some(labels) = &dump.labels {
        if labels.len() != n {
            out.push(format!("labels length {} != N = {n}", labels.len()));
        }
    }
    out
}

fn cells(m: &DMatrix<f64>) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    let n = m.nrows();
    m.as_slice()
        .iter()
        .enumerate()
        .map(move |(i, &v)| (i % n.max(1), i / n.max(1), v))
}

fn non_finite(m: &DMatrix<f64>, name: &str) -> Option<String> {
    let bad: Vec<(usize, usize)> = cells(m)
        .filter(|(_, _, v)| !v.is_finite())
        .map(|(r, c, _)| (r, c))
        .collect();
    bad.first().map(|&(r, c)| {
        format!(
            "{name} has {} non-finite entries (first at row {r}, dim {c})",
            bad.len()
        )
    })
}

/// Loads and validates a dump directory.
pub fn load_dump(dir: impl AsRef<Path>) -> Result<LatentDump> {
    let dir = dir.as_ref();
    let mu_path = dir.join(MU_FILE);
    if !mu_path.is_file() {
        return Err(Error::Format {
            path: mu_path,
            reason: "missing mu.csv".into(),
        });
    }
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::Format {
        path: meta_path.clone(),
        reason: format!("cannot read meta.json: {e}"),
    })?;
    let meta: MetaFile = serde_json::from_str(&meta_text).map_err(|e| Error::Format {
        path: meta_path.clone(),
        reason: e.to_string(),
    })?;

    let mu = read_matrix(&mu_path)?;
    check_finite(&mu, "mu.csv")?;
    let (n, d) = mu.shape();

    let sigma_path = dir.join(SIGMA_SQ_FILE);
    let sigma_sq = if sigma_path.is_file() {
        let s = read_matrix(&sigma_path)?;
        if s.shape() != (n, d) {
            return Err(Error::Consistency(format!(
                "sigma_sq.csv is {}x{} but mu.csv is {n}x{d}",
                s.nrows(),
                s.ncols()
            )));
        }
        check_finite(&s, "sigma_sq.csv")?;
        if let Some((r, c, v)) = cells(&s).find(|&(_, _, v)| v <= 0.0) {
            return Err(Error::Data(format!(
                "sigma_sq.csv entry at row {r}, dim {c} is {v}; variances must be > 0"
            )));
        }
        Some(s)
    } else {
        None
    };

    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.is_file() {
        let labels = read_labels(&labels_path)?;
        if labels.len() != n {
            return Err(Error::Consistency(format!(
                "labels.csv has {} rows but mu.csv has {n}",
                labels.len()
            )));
        }
        Some(labels)
    } else {
        None
    };

    if meta.n != n || meta.d != d {
        return Err(Error::Consistency(format!(
            "meta.json declares {}x{} but mu.csv is {n}x{d}",
            meta.n, meta.d
        )));
    }
    if meta.has_sigma != sigma_sq.is_some() {
        return Err(Error::Consistency(format!(
            "meta.json has_sigma = {} but sigma_sq.csv is {}",
            meta.has_sigma,
            if sigma_sq.is_some() {
                "present"
            } else {
                "absent"
            }
        )));
    }

    let dump = LatentDump {
        mu,
        sigma_sq,
        labels,
        meta: DumpMeta {
            source: meta.source,
            seed: meta.seed,
            hyper_params: meta.hyper_params,
        },
    };
    match validate(&dump).into_iter().next() {
        Some(v) => Err(Error::Data(v)),
        None => Ok(dump),
    }
}

/// Writes `dump` into `dir`, creating the directory if needed. Optional files
/// left over from an earlier dump in the same directory are removed.
pub fn save_dump(dump: &LatentDump, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if let Some(v) = validate(dump).into_iter().next() {
        return Err(Error::Data(v));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let meta = MetaFile {
        source: dump.meta.source.clone(),
        n: dump.n(),
        d: dump.d(),
        has_sigma: dump.has_sigma(),
        seed: dump.meta.seed,
        hyper_params: dump.meta.hyper_params.clone(),
    };
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serialises");
    text.push('\n');
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, text).map_err(|e| Error::io(meta_path, e))?;

    write_matrix(&dir.join(MU_FILE), &dump.mu)?;
    match &dump.sigma_sq {
        Some(s) => write_matrix(&dir.join(SIGMA_SQ_FILE), s)?,
        None => remove_if_present(&dir.join(SIGMA_SQ_FILE))?,
    }
    match &dump.labels {
        Some(labels) => write_labels(&dir.join(LABELS_FILE), labels)?,
        None => remove_if_present(&dir.join(LABELS_FILE))?,
    }
    Ok(())
}

fn remove_if_present(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn check_finite(m: &DMatrix<f64>, file: &str) -> Result<()> {
    match cells(m).find(|(_, _, v)| !v.is_finite()) {
        Some((r, c, v)) => Err(Error::Data(format!(
            "{file} entry at row {r}, dim {c} is {v}"
        ))),
        None => Ok(()),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
    }
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let format_err = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let d = headers.len();
    for (i, h) in headers.iter().enumerate() {
        if h != format!("dim_{i}") {
            return Err(format_err(format!(
                "header column {i} is {h:?}, expected \"dim_{i}\""
            )));
        }
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); d];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != d {
            return Err(format_err(format!(
                "row {row} has {} fields, expected {d}",
                record.len()
            )));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                format_err(format!("row {row}, dim {col}: {field:?} is not a number"))
            })?;
            columns[col].push(v);
        }
    }
    let n = columns.first().map_or(0, Vec::len);
    Ok(DMatrix::from_iterator(n, d, columns.into_iter().flatten()))
}

fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = (0..m.ncols()).map(|i| format!("dim_{i}")).collect();
    writer
        .write_record(&header)
        .map_err(|e| csv_error(path, e))?;
    let mut row = Vec::with_capacity(m.ncols());
    for r in 0..m.nrows() {
        row.clear();
        row.extend((0..m.ncols()).map(|c| format_real(m[(r, c)])));
        writer.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = record.get(0).unwrap_or("");
        labels.push(field.parse().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            reason: format!("row {row}: {field:?} is not an integer label"),
        })?);
    }
    Ok(labels)
}

fn write_labels(path: &Path, labels: &[i64]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record(["label"])
        .map_err(|e| csv_error(path, e))?;
    for l in labels {
        writer
            .write_record([l.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn meta_json(n: usize, d: usize, has_sigma: bool) -> String {
        format!(r#"{{"source":"test","n":{n},"d":{d},"has_sigma":{has_sigma}}}"#)
    }

    #[test]
    fn loads_minimal_dump() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), META_FILE, &meta_json(4, 2, false));
        write(tmp.path(), MU_FILE, "dim_0,dim_1\n1,2\n3,4\n5,6\n7,8\n");
        let dump = load_dump(tmp.path()).unwrap();
        assert_eq!((dump.n(), dump.d()), (4, 2));
        assert!(dump.sigma_sq.is_none());
        assert_eq!(dump.mu_column(1), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn nan_entry_is_a_data_error() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), META_FILE, &meta_json(2, 1, false));
        write(tmp.path(), MU_FILE, "dim_0\n1.0\nNaN\n");
        assert!(matches!(load_dump(tmp.path()), Err(Error::Data(_))));
    }

    #[test]
    fn sigma_row_mismatch_is_a_consistency_error() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), META_FILE, &meta_json(4, 1, true));
        write(tmp.path(), MU_FILE, "dim_0\n1\n2\n3\n4\n");
        write(tmp.path(), SIGMA_SQ_FILE, "dim_0\n1\n1\n1\n");
        assert!(matches!(load_dump(tmp.path()), Err(Error::Consistency(_))));
    }

    #[test]
    fn non_positive_sigma_is_a_data_error() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), META_FILE, &meta_json(2, 1, true));
        write(tmp.path(), MU_FILE, "dim_0\n1\n2\n");
        write(tmp.path(), SIGMA_SQ_FILE, "dim_0\n1\n0\n");
        assert!(matches!(load_dump(tmp.path()), Err(Error::Data(_))));
    }

    #[test]
    fn missing_mu_is_a_format_error() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), META_FILE, &meta_json(2, 1, false));
        assert!(matches!(load_dump(tmp.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_header_is_a_format_error() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), META_FILE, &meta_json(2, 1, false));
        write(tmp.path(), MU_FILE, "x\n1\n2\n");
        assert!(matches!(load_dump(tmp.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn meta_shape_mismatch_is_a_consistency_error() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), META_FILE, &meta_json(3, 1, false));
        write(tmp.path(), MU_FILE, "dim_0\n1\n2\n");
        assert!(matches!(load_dump(tmp.path()), Err(Error::Consistency(_))));
    }

    #[test]
    fn labels_written_with_one_row_per_datapoint() {
        let tmp = tempfile::tempdir().unwrap();
        let dump = LatentDump::from_columns(&[vec![0.5, -1.0, 2.0]])
            .unwrap()
            .with_labels(vec![0, 1, 1]);
        save_dump(&dump, tmp.path()).unwrap();
        let text = fs::read_to_string(tmp.path().join(LABELS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(load_dump(tmp.path()).unwrap().labels, Some(vec![0, 1, 1]));
    }

    #[test]
    fn validate_reports_small_n_and_bad_sigma() {
        let dump = LatentDump::from_columns(&[vec![1.0]]).unwrap();
        assert_eq!(validate(&dump), vec!["N >= 2 violated".to_string()]);

        let dump = LatentDump::from_columns(&[vec![1.0, 2.0]])
            .unwrap()
            .with_sigma_sq(DMatrix::from_vec(2, 1, vec![1.0, 0.0]));
        let v = validate(&dump);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("positivity"));
    }

    #[test]
    fn format_real_uses_seventeen_digits() {
        assert_eq!(format_real(0.1), "1.0000000000000001e-1");
        assert_eq!(format_real(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
