//! CSV matrices with a sidecar metadata file.
//!
//! Layout: header row `source,<task_1>,...,<task_N>`, then one row per
//! source task beginning with its id. Values are written with Rust's
//! shortest round-trip float formatting, so a write/read cycle is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Serialize};

use crate::error::{BentoError, Result};
use crate::ict::TaskId;

pub fn write_matrix_csv<W: Write>(w: W, tasks: &[TaskId], values: &DMatrix<f64>) -> Result<()> {
    if values.nrows() != tasks.len() || values.ncols() != tasks.len() {
        return Err(BentoError::Shape(format!(
            "{} tasks but matrix is {}x{}",
            tasks.len(),
            values.nrows(),
            values.ncols()
        )));
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = Vec::with_capacity(tasks.len() + 1);
    header.push("source".to_string());
    header.extend(tasks.iter().map(|t| t.as_str().to_string()));
    out.write_record(&header)?;
    for (i, t) in tasks.iter().enumerate() {
        let mut row = Vec::with_capacity(tasks.len() + 1);
        row.push(t.as_str().to_string());
        row.extend((0..tasks.len()).map(|j| format!("{:?}", values[(i, j)])));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(r: R) -> Result<(Vec<TaskId>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(BentoError::Parse("matrix header needs at least one task column".into()));
    }
    let tasks = header
        .iter()
        .skip(1)
        .map(TaskId::new)
        .collect::<Result<Vec<_>>>()?;
    let n = tasks.len();
    let mut values = DMatrix::zeros(n, n);
    let mut seen = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if i >= n {
            return Err(BentoError::Parse(format!("more than {n} data rows")));
        }
        if rec.len() != n + 1 {
            return Err(BentoError::Parse(format!("row {} has {} fields, expected {}", i + 1, rec.len(), n + 1)));
        }
        if rec[0] != *tasks[i].as_str() {
            return Err(BentoError::Parse(format!(
                "row {} is labeled `{}` but column {} is `{}`",
                i + 1,
                &rec[0],
                i + 1,
                tasks[i]
            )));
        }
        for j in 0..n {
            let field = rec[j + 1].trim();
            values[(i, j)] = field
                .parse::<f64>()
                .map_err(|e| BentoError::Parse(format!("cell ({}, {}) `{field}`: {e}", i + 1, j + 1)))?;
        }
        seen += 1;
    }
    if seen != n {
        return Err(BentoError::Parse(format!("expected {n} data rows, found {seen}")));
    }
    Ok((tasks, values))
}

/// `foo.csv` -> `foo.csv.meta.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<TaskId> {
        (0..n).map(|i| TaskId::new(format!("t{i}")).unwrap()).collect()
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(n in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1e6..1e6) * rng.random::<f64>().powi(7));
            let mut buf = Vec::new();
            write_matrix_csv(&mut buf, &ids(n), &m).unwrap();
            let (t, back) = read_matrix_csv(&buf[..]).unwrap();
            prop_assert_eq!(t, ids(n));
            for (a, b) in m.iter().zip(back.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn rejects_mislabeled_rows() {
        let text = "source,a,b\na,1,2\nc,3,4\n";
        assert!(matches!(read_matrix_csv(text.as_bytes()), Err(BentoError::Parse(_))));
    }

    #[test]
    fn rejects_short_matrix() {
        let text = "source,a,b\na,1,2\n";
        assert!(read_matrix_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn task_ids_with_commas_are_quoted() {
        let tasks = vec![TaskId::new("x, y").unwrap(), TaskId::new("z").unwrap()];
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &tasks, &m).unwrap();
        let (t, back) = read_matrix_csv(&buf[..]).unwrap();
        assert_eq!(t, tasks);
        assert_eq!(back, m);
    }
}
