//! Dataset directories: `manifest.txt`, one `<id>.csv` per sample and an
//! optional `labels.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{invalid, Error, Result};
use crate::mts::{Label, LabelNames, Mts, MtsDataset};

pub const MANIFEST: &str = "manifest.txt";
pub const LABELS: &str = "labels.csv";

/// Parses `key=value` lines. Blank lines and lines starting with `#` are
/// ignored; a repeated key is an error.
pub fn parse_key_values(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, i + 1, format!("expected key=value, found `{line}`")))?;
        let k = k.trim().to_string();
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::parse(path, i + 1, format!("duplicate key `{k}`")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub n_samples: usize,
    pub variables: Vec<String>,
    pub label_names: LabelNames,
    /// Sample order; when absent the order of `labels.csv`, or sorted file
    /// names, is used.
    pub ids: Option<Vec<String>>,
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let kv = parse_key_values(&path, &text)?;
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::parse(&path, 0, format!("missing key `{k}`")))
        };
        let n_samples = get("n_samples")?
            .parse::<usize>()
            .map_err(|e| Error::parse(&path, 0, format!("n_samples: {e}")))?;
        let variables = split_list(get("variables")?);
        if variables.is_empty() {
            return Err(Error::parse(&path, 0, "no variables listed"));
        }
        let defaults = LabelNames::default();
        let label_names = LabelNames {
            positive: kv.get("label_positive").cloned().unwrap_or(defaults.positive),
            negative: kv.get("label_negative").cloned().unwrap_or(defaults.negative),
        };
        if label_names.positive == label_names.negative {
            return Err(Error::parse(&path, 0, "label names must differ"));
        }
        let ids = kv.get("ids").map(|s| split_list(s));
        Ok(Manifest {
            n_samples,
            variables,
            label_names,
            ids,
        })
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "n_samples={}\nvariables={}\nlabel_positive={}\nlabel_negative={}\n",
            self.n_samples,
            self.variables.join(","),
            self.label_names.positive,
            self.label_names.negative
        );
        if let Some(ids) = &self.ids {
            s.push_str(&format!("ids={}\n", ids.join(",")));
        }
        s
    }
}

fn parse_cell(path: &Path, line: usize, col: &str, cell: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(Some(x)),
        _ => Err(Error::parse(path, line, format!("column `{col}`: `{cell}` is not a finite number"))),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(path, line, e.to_string())
}

/// Reads one sample file; columns must match `variables` in order.
pub fn read_sample(path: &Path, id: &str, variables: &[String]) -> Result<Mts> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header != variables {
        return Err(Error::parse(
            path,
            1,
            format!("header [{}] does not match manifest variables [{}]", header.join(","), variables.join(",")),
        ));
    }
    let mut rows: Vec<Vec<Option<f64>>> = vec![Vec::new(); variables.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        for (v, cell) in rec.iter().enumerate() {
            rows[v].push(parse_cell(path, line, &variables[v], cell)?);
        }
    }
    if rows[0].is_empty() {
        return Err(Error::parse(path, 2, "sample has no time steps"));
    }
    Mts::from_rows(id, &rows).map_err(|e| Error::parse(path, 0, e.to_string()))
}

/// Reads an `id,label` file.
pub fn read_labels(path: &Path, names: &LabelNames) -> Result<Vec<(String, Label)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header != ["id", "label"] {
        return Err(Error::parse(path, 1, "expected header `id,label`"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let id = rec[0].trim().to_string();
        let label = names.parse(rec[1].trim()).ok_or_else(|| {
            Error::parse(
                path,
                line,
                format!("label `{}` is neither `{}` nor `{}`", rec[1].trim(), names.positive, names.negative),
            )
        })?;
        if out.iter().any(|(x, _): &(String, Label)| *x == id) {
            return Err(Error::parse(path, line, format!("duplicate id `{id}`")));
        }
        out.push((id, label));
    }
    Ok(out)
}

/// Writes an `id,label` file.
pub fn write_labels(path: &Path, ids: &[String], labels: &[Label], names: &LabelNames) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["id", "label"]).map_err(|e| csv_error(path, e))?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), names.name(*l)]).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn sample_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.csv"))
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id == "labels" || id.contains(['/', '\\', ',']) || id.starts_with('.') {
        return Err(invalid(format!("`{id}` is not a valid sample id")));
    }
    Ok(())
}

/// Loads a dataset directory. Labels are attached when `labels.csv` exists.
pub fn read_dataset(dir: &Path) -> Result<MtsDataset> {
    let manifest = Manifest::read(dir)?;
    let labels_path = dir.join(LABELS);
    let labels = if labels_path.exists() {
        Some(read_labels(&labels_path, &manifest.label_names)?)
    } else {
        None
    };
    let ids: Vec<String> = match (&manifest.ids, &labels) {
        (Some(ids), _) => ids.clone(),
        (None, Some(l)) => l.iter().map(|(id, _)| id.clone()).collect(),
        (None, None) => {
            let mut ids = Vec::new();
            for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
                let p = entry.map_err(|e| Error::io(dir, e))?.path();
                if p.extension().is_some_and(|e| e == "csv") {
                    let stem = p.file_stem().unwrap().to_string_lossy().to_string();
                    if stem != "labels" {
                        ids.push(stem);
                    }
                }
            }
            ids.sort();
            ids
        }
    };
    let manifest_path = dir.join(MANIFEST);
    if ids.len() != manifest.n_samples {
        return Err(Error::parse(
            &manifest_path,
            0,
            format!("n_samples = {}, found {} samples", manifest.n_samples, ids.len()),
        ));
    }
    let samples = ids
        .iter()
        .map(|id| {
            check_id(id)?;
            read_sample(&sample_path(dir, id), id, &manifest.variables)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = match labels {
        None => None,
        Some(l) => {
            let map: BTreeMap<&str, Label> = l.iter().map(|(id, lab)| (id.as_str(), *lab)).collect();
            if map.len() != ids.len() {
                return Err(Error::parse(
                    &labels_path,
                    0,
                    format!("{} labels for {} samples", map.len(), ids.len()),
                ));
            }
            Some(
                ids.iter()
                    .map(|id| {
                        map.get(id.as_str()).copied().ok_or_else(|| {
                            Error::parse(&labels_path, 0, format!("no label for sample `{id}`"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        }
    };
    let mut ds = MtsDataset::new(samples, labels, manifest.variables)?;
    ds.label_names = manifest.label_names;
    Ok(ds)
}

/// Writes `ds` so that [`read_dataset`] reproduces values, masks, labels
/// and sample order exactly. The directory is created if needed.
pub fn write_dataset(dir: &Path, ds: &MtsDataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for m in ds.samples() {
        check_id(m.id())?;
    }
    let manifest = Manifest {
        n_samples: ds.len(),
        variables: ds.variable_names().to_vec(),
        label_names: ds.label_names.clone(),
        ids: Some(ds.ids()),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))?;
    for m in ds.samples() {
        let path = sample_path(dir, m.id());
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        w.write_record(ds.variable_names()).map_err(|e| csv_error(&path, e))?;
        for t in 0..m.len() {
            let row: Vec<String> = (0..m.n_vars())
                .map(|v| m.get(v, t).map_or_else(|| "NaN".to_string(), |x| x.to_string()))
                .collect();
            w.write_record(&row).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    if let Some(labels) = ds.labels() {
        write_labels(&dir.join(LABELS), &ds.ids(), labels, &ds.label_names)?;
    }
    Ok(())
}
