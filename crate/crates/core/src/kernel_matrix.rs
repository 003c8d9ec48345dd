use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMethod {
    Lps,
    Tck,
    /// Gaussian kernel over embedding rows.
    Rbf,
}

impl fmt::Display for KernelMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelMethod::Lps => "lps",
            KernelMethod::Tck => "tck",
            KernelMethod::Rbf => "rbf",
        })
    }
}

impl FromStr for KernelMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lps" => Ok(KernelMethod::Lps),
            "tck" => Ok(KernelMethod::Tck),
            "rbf" => Ok(KernelMethod::Rbf),
            _ => Err(invalid(format!("unknown kernel method `{s}`"))),
        }
    }
}

/// Similarity matrix between a set of row samples and the training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    values: Array2<f64>,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
    method: KernelMethod,
    symmetric: bool,
}

impl KernelMatrix {
    pub fn new(
        values: Array2<f64>,
        row_ids: Vec<String>,
        col_ids: Vec<String>,
        method: KernelMethod,
    ) -> Result<Self> {
        if values.nrows() != row_ids.len() || values.ncols() != col_ids.len() {
            return Err(invalid(format!(
                "matrix {:?} does not match {} row ids and {} column ids",
                values.dim(),
                row_ids.len(),
                col_ids.len()
            )));
        }
        let symmetric = row_ids == col_ids
            && values
                .indexed_iter()
                .all(|((i, j), &x)| x == values[[j, i]]);
        Ok(KernelMatrix {
            values,
            row_ids,
            col_ids,
            method,
            symmetric,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }

    pub fn method(&self) -> KernelMethod {
        self.method
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Restriction to the given rows and columns.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> KernelMatrix {
        let values = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| {
            self.values[[rows[i], cols[j]]]
        });
        KernelMatrix::new(
            values,
            rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
            cols.iter().map(|&j| self.col_ids[j].clone()).collect(),
            self.method,
        )
        .expect("consistent submatrix")
    }

    /// Same ids and method, new values.
    pub fn with_values(&self, values: Array2<f64>) -> Result<KernelMatrix> {
        KernelMatrix::new(
            values,
            self.row_ids.clone(),
            self.col_ids.clone(),
            self.method,
        )
    }

    /// CSV with a header of column ids and a leading column of row ids.
    /// Optional `#` comment lines precede the header.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> std::io::Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        write!(w, "id")?;
        for id in &self.col_ids {
            write!(w, ",{id}")?;
        }
        writeln!(w)?;
        for (i, id) in self.row_ids.iter().enumerate() {
            write!(w, "{id}")?;
            for x in self.values.row(i) {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, comments: &[String]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w, comments)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path, method: KernelMethod) -> Result<KernelMatrix> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut col_ids: Option<Vec<String>> = None;
        let mut row_ids = Vec::new();
        let mut data = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let lineno = n + 1;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            let first = cells.next().unwrap_or_default().to_string();
            match &col_ids {
                None => col_ids = Some(cells.map(str::to_string).collect()),
                Some(cols) => {
                    let row: Vec<f64> = cells
                        .map(|c| {
                            c.trim().parse::<f64>().map_err(|_| {
                                Error::parse(path, lineno, format!("non-numeric cell `{c}`"))
                            })
                        })
                        .collect::<Result<_>>()?;
                    if row.len() != cols.len() {
                        return Err(Error::parse(
                            path,
                            lineno,
                            format!("{} cells, header has {}", row.len(), cols.len()),
                        ));
                    }
                    row_ids.push(first);
                    data.extend(row);
                }
            }
        }
        let col_ids = col_ids.ok_or_else(|| Error::parse(path, 1, "missing header"))?;
        let values = Array2::from_shape_vec((row_ids.len(), col_ids.len()), data)
            .map_err(|e| invalid(e.to_string()))?;
        KernelMatrix::new(values, row_ids, col_ids, method)
    }
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}
