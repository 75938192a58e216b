//! Fixed-design datasets and the empirical norm.
//!
//! A [`Dataset`] holds `n` covariate rows in `[0,1]^p` together with their
//! responses. It is immutable once built and is shared by reference between
//! partitions, ensembles and concurrently running chains.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

/// Covariates `x` (row-major, `n × p`, each entry in `[0,1]`) and responses `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n: usize,
    p: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major covariates.
    ///
    /// Every covariate must lie in `[0,1]`; use [`rescale_columns`] first for
    /// data on other ranges.
    pub fn new(n: usize, p: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if n == 0 || p == 0 {
            return usage(format!("dataset needs n >= 1 and p >= 1, got n={n}, p={p}"));
        }
        if x.len() != n * p {
            return usage(format!("x has {} entries, expected n*p = {}", x.len(), n * p));
        }
        if y.len() != n {
            return usage(format!("y has length {}, expected n = {n}", y.len()));
        }
        if let Some(pos) = x.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return usage(format!(
                "covariate x[{}, {}] = {} lies outside [0,1]",
                pos / p,
                pos % p,
                x[pos]
            ));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return usage(format!("response y[{i}] is not finite"));
        }
        Ok(Self { n, p, x, y })
    }

    /// Builds a dataset from a list of rows.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return usage("rows have unequal lengths");
        }
        Self::new(n, p, rows.concat(), y)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn x(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.p + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Same design with a new response vector.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.n, self.p, self.x.clone(), y)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.x(i, j))
    }

    /// Writes `x1..xp,y` CSV with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.p).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.n {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads `x1..xp,y` CSV. Columns falling outside `[0,1]` are min-max
    /// rescaled; the returned report lists what was done to every column.
    pub fn read_csv<R: Read>(input: R) -> Result<(Self, Vec<ColumnScaling>)> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let cols = header.len();
        if cols < 2 {
            return usage("CSV needs at least one covariate column and a y column");
        }
        let p = cols - 1;
        for (j, name) in header.iter().enumerate().take(p) {
            if name.trim() != format!("x{}", j + 1) {
                return usage(format!("column {} is named {name:?}, expected x{}", j + 1, j + 1));
            }
        }
        if header[p].trim() != "y" {
            return usage(format!("last column is named {:?}, expected y", &header[p]));
        }
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| {
                    Error::Usage(format!("row {}: cannot parse {s:?}: {e}", line + 1))
                })
            };
            let row = (0..p).map(|j| parse(&rec[j])).collect::<Result<Vec<_>>>()?;
            y.push(parse(&rec[p])?);
            rows.push(row);
        }
        if rows.is_empty() {
            return usage("CSV has no data rows");
        }
        let report = rescale_columns(&mut rows);
        Ok((Self::from_rows(&rows, y)?, report))
    }

    pub fn load_csv(path: &Path) -> Result<(Self, Vec<ColumnScaling>)> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

/// What the loader did to one covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub column: usize,
    pub min: f64,
    pub max: f64,
    pub rescaled: bool,
}

/// Affinely maps every column that leaves `[0,1]` onto `[0,1]` using its
/// min and max. A constant column maps to 0.5. Columns already inside
/// `[0,1]` are left untouched.
pub fn rescale_columns(rows: &mut [Vec<f64>]) -> Vec<ColumnScaling> {
    let p = rows.first().map_or(0, Vec::len);
    (0..p)
        .map(|j| {
            let (min, max) = rows
                .iter()
                .map(|r| r[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let rescaled = min < 0.0 || max > 1.0;
            if rescaled {
                let span = max - min;
                for r in rows.iter_mut() {
                    r[j] = if span > 0.0 { (r[j] - min) / span } else { 0.5 };
                }
            }
            ColumnScaling { column: j, min, max, rescaled }
        })
        .collect()
}

/// `sqrt((1/n) Σ (f_i - g_i)^2)`.
pub fn empirical_norm(f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != g.len() {
        return usage(format!("length mismatch: {} vs {}", f.len(), g.len()));
    }
    if f.is_empty() {
        return usage("empirical norm of empty vectors");
    }
    let ss: f64 = f.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / f.len() as f64).sqrt())
}
