//! Tabular observations `t, s1..sD, y` and their grid views.

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cvi_inference::GridData;
use crate::error::{Error, Result};
use crate::sparse_inference::{ScatteredData, ScatteredStep};

/// One table row. `y = None` marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub t: f64,
    pub coords: Vec<f64>,
    pub y: Option<f64>,
}

/// Summary reported after loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DatasetCounts {
    pub num_times: usize,
    /// Distinct spatial locations over all timestamps.
    pub num_sites: usize,
    pub num_rows: usize,
    pub num_missing: usize,
}

/// Observations grouped by timestamp. Rows are stored in vec order: by time,
/// then lexicographically by coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    pub times: Vec<f64>,
    /// `N × D`, one row per observation.
    pub coords: DMatrix<f64>,
    /// Missing entries hold `NaN`.
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
    /// Rows of time step `n` are `offsets[n]..offsets[n + 1]`.
    pub offsets: Vec<usize>,
    /// `Some(N_s)` when every timestamp carries the same `N_s` locations.
    pub grid_sites: Option<usize>,
    pub coord_names: Vec<String>,
}

fn cmp_coords(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn default_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("s{i}")).collect()
}

impl GridDataset {
    /// Groups and orders rows. `lines[i]` is reported for row `i` on errors.
    fn build(mut rows: Vec<(Row, usize)>, coord_names: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dim = coord_names.len();
        for (r, line) in &rows {
            if r.coords.len() != dim {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("expected {dim} coordinates, found {}", r.coords.len()),
                });
            }
        }
        rows.sort_by(|(a, la), (b, lb)| {
            a.t.total_cmp(&b.t)
                .then_with(|| cmp_coords(&a.coords, &b.coords))
                .then(la.cmp(lb))
        });
        for w in rows.windows(2) {
            let ((a, _), (b, lb)) = (&w[0], &w[1]);
            if a.t == b.t && cmp_coords(&a.coords, &b.coords).is_eq() {
                return Err(Error::DuplicateSite { t: b.t, line: *lb });
            }
        }
        let n = rows.len();
        let mut times = Vec::new();
        let mut offsets = Vec::new();
        let mut values = Vec::with_capacity(n);
        let mut observed = Vec::with_capacity(n);
        let mut coords = DMatrix::zeros(n, dim);
        for (i, (r, _)) in rows.iter().enumerate() {
            if times.last() != Some(&r.t) {
                times.push(r.t);
                offsets.push(i);
            }
            for (d, &c) in r.coords.iter().enumerate() {
                coords[(i, d)] = c;
            }
            values.push(r.y.unwrap_or(f64::NAN));
            observed.push(r.y.is_some());
        }
        offsets.push(n);
        let mut ds = Self {
            times,
            coords,
            values,
            observed,
            offsets,
            grid_sites: None,
            coord_names,
        };
        ds.grid_sites = ds.detect_grid();
        Ok(ds)
    }

    fn detect_grid(&self) -> Option<usize> {
        let ns = self.offsets[1] - self.offsets[0];
        let first = self.coords.rows(0, ns);
        (1..self.num_times())
            .all(|n| {
                let (a, b) = (self.offsets[n], self.offsets[n + 1]);
                b - a == ns && self.coords.rows(a, ns) == first
            })
            .then_some(ns)
    }

    /// Builds a dataset from rows in any order.
    pub fn from_rows(rows: Vec<Row>, coord_names: Option<Vec<String>>) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.coords.len());
        let names = coord_names.unwrap_or_else(|| default_names(dim));
        Self::build(rows.into_iter().enumerate().map(|(i, r)| (r, i + 1)).collect(), names)
    }

    /// Fully observed dataset from a dense grid.
    pub fn from_grid(grid: &GridData<f64>) -> Result<Self> {
        let mut rows = Vec::with_capacity(grid.num_steps() * grid.num_sites());
        for (n, &t) in grid.times.iter().enumerate() {
            for k in 0..grid.num_sites() {
                rows.push(Row {
                    t,
                    coords: grid.locations.row(k).iter().copied().collect(),
                    y: grid.value(n, k),
                });
            }
        }
        Self::from_rows(rows, None)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    /// Parses `t,s1[,s2,...],y` with a header row. Empty or `nan` values of
    /// `y` are missing.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() == 0 || (header.len() == 1 && header[0].is_empty()) {
            return Err(Error::EmptyDataset);
        }
        if header.len() < 3 || !header[0].eq_ignore_ascii_case("t") || !header[header.len() - 1].eq_ignore_ascii_case("y") {
            return Err(Error::Parse {
                line: 1,
                message: "header must be `t,s1[,s2,...],y`".into(),
            });
        }
        let dim = header.len() - 2;
        let names: Vec<String> = header.iter().skip(1).take(dim).map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if rec.len() != header.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            let num = |i: usize| -> Result<f64> {
                let v: f64 = rec[i].parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("column `{}`: `{}` is not a number", &header[i], &rec[i]),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse {
                        line,
                        message: format!("column `{}` must be finite", &header[i]),
                    })
                }
            };
            let t = num(0)?;
            let coords = (1..=dim).map(num).collect::<Result<Vec<_>>>()?;
            let raw = &rec[dim + 1];
            let y = if raw.is_empty() || raw.eq_ignore_ascii_case("nan") {
                None
            } else {
                Some(num(dim + 1)?)
            };
            rows.push((Row { t, coords, y }, line));
        }
        Self::build(rows, names)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn write_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(self.coord_names.iter().cloned());
        header.push("y".into());
        w.write_record(&header)?;
        for r in self.to_table() {
            let mut rec = vec![r.t.to_string()];
            rec.extend(r.coords.iter().map(f64::to_string));
            rec.push(r.y.map_or_else(String::new, |y| y.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn num_times(&self) -> usize {
        self.times.len()
    }

    pub fn num_rows(&self) -> usize {
        self.values.len()
    }

    pub fn spatial_dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn counts(&self) -> DatasetCounts {
        DatasetCounts {
            num_times: self.num_times(),
            num_sites: self.unique_sites().nrows(),
            num_rows: self.num_rows(),
            num_missing: self.observed.iter().filter(|o| !**o).count(),
        }
    }

    /// Time index of every row.
    pub fn time_index(&self) -> Vec<usize> {
        (0..self.num_times())
            .flat_map(|n| std::iter::repeat_n(n, self.offsets[n + 1] - self.offsets[n]))
            .collect()
    }

    pub fn row(&self, i: usize) -> Row {
        let n = self.offsets.partition_point(|&o| o <= i) - 1;
        Row {
            t: self.times[n],
            coords: self.coords.row(i).iter().copied().collect(),
            y: self.observed[i].then_some(self.values[i]),
        }
    }

    /// Rows in vec order.
    pub fn to_table(&self) -> Vec<Row> {
        (0..self.num_rows()).map(|i| self.row(i)).collect()
    }

    /// Values in vec order (missing as `NaN`).
    pub fn vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    /// Inverse of [`Self::vec`] on this dataset's layout.
    pub fn unvec(&self, v: &DVector<f64>) -> Result<Self> {
        if v.len() != self.num_rows() {
            return Err(Error::Dimension(format!("vector of length {} for {} rows", v.len(), self.num_rows())));
        }
        let mut out = self.clone();
        for (i, &x) in v.iter().enumerate() {
            out.observed[i] = !x.is_nan();
            out.values[i] = x;
        }
        Ok(out)
    }

    /// Distinct locations, sorted.
    pub fn unique_sites(&self) -> DMatrix<f64> {
        let mut rows: Vec<Vec<f64>> = self.coords.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.sort_by(|a, b| cmp_coords(a, b));
        rows.dedup_by(|a, b| cmp_coords(a, b).is_eq());
        DMatrix::from_fn(rows.len(), self.spatial_dim(), |i, d| rows[i][d])
    }

    /// Index of each row's location in [`Self::unique_sites`].
    pub fn site_index(&self, sites: &DMatrix<f64>) -> Vec<Option<usize>> {
        let keys: Vec<Vec<f64>> = sites.row_iter().map(|r| r.iter().copied().collect()).collect();
        self.coords
            .row_iter()
            .map(|r| {
                let c: Vec<f64> = r.iter().copied().collect();
                keys.binary_search_by(|k| cmp_coords(k, &c)).ok()
            })
            .collect()
    }

    /// Grid over the union of locations; absent and missing cells are masked.
    pub fn to_grid(&self) -> Result<GridData<f64>> {
        let sites = self.unique_sites();
        let ns = sites.nrows();
        let mut values = DMatrix::zeros(self.num_times(), ns);
        let mut mask = DMatrix::from_element(self.num_times(), ns, false);
        for (i, (n, k)) in self.time_index().into_iter().zip(self.site_index(&sites)).enumerate() {
            let k = k.expect("site drawn from this dataset");
            if self.observed[i] {
                values[(n, k)] = self.values[i];
                mask[(n, k)] = true;
            }
        }
        GridData::new(self.times.clone(), sites, values, mask)
    }

    /// Observed rows only, grouped by timestamp.
    pub fn to_scattered(&self) -> Result<ScatteredData<f64>> {
        let steps = (0..self.num_times())
            .map(|n| {
                let idx: Vec<usize> = (self.offsets[n]..self.offsets[n + 1]).filter(|&i| self.observed[i]).collect();
                ScatteredStep {
                    locations: self.coords.select_rows(idx.iter()),
                    values: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.values[i])),
                }
            })
            .collect();
        ScatteredData::new(self.times.clone(), steps)
    }

    /// Rows `idx` (in any order) as a new dataset.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let rows = idx.iter().map(|&i| self.row(i)).collect();
        Self::from_rows(rows, Some(self.coord_names.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<GridDataset> {
        GridDataset::from_reader(s.as_bytes())
    }

    #[test]
    fn same_time_two_sites() {
        let d = parse("t,s1,y\n0.5,1.0,2.0\n0.5,0.0,3.0\n").unwrap();
        assert_eq!(d.num_times(), 1);
        assert_eq!(d.counts().num_sites, 2);
        assert_eq!(d.grid_sites, Some(2));
        assert_eq!(d.values, vec![3.0, 2.0]);
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(parse(""), Err(Error::EmptyDataset)));
        assert!(matches!(parse("t,s1,y\n"), Err(Error::EmptyDataset)));
    }

    #[test]
    fn missing_and_errors() {
        let d = parse("t,s1,y\n0,0,\n0,1,nan\n1,0,4\n").unwrap();
        let c = d.counts();
        assert_eq!((c.num_times, c.num_sites, c.num_rows, c.num_missing), (2, 2, 3, 2));
        assert_eq!(d.grid_sites, None);
        match parse("t,s1,y\n0,0,1\n1,x,2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse("t,s1,y\n0,0,1\n1,0,2\n0,0,5\n") {
            Err(Error::DuplicateSite { t, line }) => {
                assert_eq!(t, 0.0);
                assert_eq!(line, 4);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("t,s1,y\n0,1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("a,b\n0,1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn grid_views() {
        let d = parse("t,s1,s2,y\n1,0,0,1\n0,0,1,2\n0,0,0,3\n1,0,1,\n").unwrap();
        let g = d.to_grid().unwrap();
        assert_eq!(g.times, vec![0.0, 1.0]);
        assert_eq!(g.values, DMatrix::from_row_slice(2, 2, &[3.0, 2.0, 1.0, 0.0]));
        assert_eq!(g.observed, DMatrix::from_row_slice(2, 2, &[true, true, true, false]));
        let s = d.to_scattered().unwrap();
        assert_eq!(s.num_observations(), 3);
        assert_eq!(s.steps[1].values.len(), 1);
        let back = GridDataset::from_grid(&g).unwrap();
        assert_eq!(back.to_table(), d.to_table());
    }

    #[test]
    fn csv_round_trip() {
        let d = parse("t,x,y\n0.1,0.25,1.5\n0.1,0.75,\n0.3,0.25,-2\n").unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let again = GridDataset::from_reader(buf.as_slice()).unwrap();
        assert_eq!(again.to_table(), d.to_table());
        assert_eq!(again.coord_names, vec!["x".to_string()]);
        let v = d.vec();
        let u = d.unvec(&v).unwrap();
        assert_eq!(u.to_table(), d.to_table());
    }
}
