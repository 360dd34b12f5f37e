use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetManifest};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::graph::SensorGraph;

const EARTH_RADIUS_M: f64 = 6_371_008.8;
const TIME_COLUMNS: [&str; 4] = ["timestamp", "time", "date", "datetime"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    /// Planar distance in coordinate units.
    #[default]
    Euclidean,
    /// Great-circle distance in meters; coordinates are (longitude, latitude) degrees.
    Haversine,
}

impl DistanceMetric {
    pub fn distance(self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match self {
            DistanceMetric::Euclidean => ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt(),
            DistanceMetric::Haversine => {
                let (lon1, lat1) = (a[0].to_radians(), a[1].to_radians());
                let (lon2, lat2) = (b[0].to_radians(), b[1].to_radians());
                let h = ((lat2 - lat1) / 2.0).sin().powi(2)
                    + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
                2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
            }
        }
    }
}

/// Where the sensor graph comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum GraphSource {
    Distances {
        path: PathBuf,
        coords: Option<PathBuf>,
    },
    Coords {
        path: PathBuf,
        metric: DistanceMetric,
    },
}

/// Readings as parsed, before the join with the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct RawReadings {
    pub ids: Vec<String>,
    pub timestamps: Option<Vec<String>>,
    /// One row per time point; `None` for an empty cell.
    pub rows: Vec<Vec<Option<f64>>>,
}

fn parse_cell(cell: &str, path: &Path, line: usize) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>().map(Some).map_err(|_| {
        Error::Data(format!(
            "{}: line {line}: non-numeric cell {cell:?}",
            path.display()
        ))
    })
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?)
}

pub fn read_readings_csv(path: impl AsRef<Path>) -> Result<RawReadings> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))??;
    let mut ids: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    let has_time = ids
        .first()
        .is_some_and(|h| TIME_COLUMNS.contains(&h.to_ascii_lowercase().as_str()));
    if has_time {
        ids.remove(0);
    }
    let mut timestamps = has_time.then(Vec::new);
    let mut rows = Vec::new();
    for (k, rec) in records.enumerate() {
        let rec = rec?;
        let line = k + 2;
        let mut cells = rec.iter();
        if let Some(ts) = timestamps.as_mut() {
            ts.push(cells.next().unwrap_or("").to_string());
        }
        let row: Vec<Option<f64>> = cells
            .map(|c| parse_cell(c, path, line))
            .collect::<Result<_>>()?;
        if row.len() != ids.len() {
            return Err(Error::Data(format!(
                "{}: line {line} has {} values for {} sensors",
                path.display(),
                row.len(),
                ids.len()
            )));
        }
        rows.push(row);
    }
    check_unique(&ids, path)?;
    Ok(RawReadings {
        ids,
        timestamps,
        rows,
    })
}

fn check_unique(ids: &[String], path: &Path) -> Result<()> {
    let mut seen = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        if let Some(j) = seen.insert(id.as_str(), i) {
            return Err(Error::Data(format!(
                "{}: sensor id {id:?} appears in columns {j} and {i}",
                path.display()
            )));
        }
    }
    Ok(())
}

/// Square distance matrix with a header row of sensor ids. Rows may carry a
/// leading id cell, in which case the header starts with an empty cell.
pub fn read_distance_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Matrix)> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty file", path.display())))??;
    let mut ids: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    let labeled = ids.first().is_some_and(|h| h.is_empty() || h == "id");
    if labeled {
        ids.remove(0);
    }
    check_unique(&ids, path)?;
    let n = ids.len();
    let mut data = Vec::with_capacity(n * n);
    let mut n_rows = 0;
    for (k, rec) in records.enumerate() {
        let rec = rec?;
        let line = k + 2;
        let mut cells = rec.iter();
        if labeled {
            let label = cells.next().unwrap_or("").trim();
            if ids.get(k).map(String::as_str) != Some(label) {
                return Err(Error::Data(format!(
                    "{}: row label {label:?} on line {line} does not match the header",
                    path.display()
                )));
            }
        }
        let row: Vec<f64> = cells
            .map(|c| {
                parse_cell(c, path, line)?.ok_or_else(|| {
                    Error::Data(format!("{}: line {line}: empty distance", path.display()))
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(Error::Data(format!(
                "{}: distance matrix is not square (line {line} has {} entries, expected {n})",
                path.display(),
                row.len()
            )));
        }
        data.extend(row);
        n_rows += 1;
    }
    if n_rows != n {
        return Err(Error::Data(format!(
            "{}: distance matrix is not square ({n_rows} rows, {n} columns)",
            path.display()
        )));
    }
    Ok((ids, Matrix::from_vec(n, n, data)?))
}

/// `id,x,y` rows after a header line.
pub fn read_coords_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<[f64; 2]>)> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for (k, rec) in rdr.records().enumerate().skip(1) {
        let rec = rec?;
        let line = k + 1;
        if rec.len() < 3 {
            return Err(Error::Data(format!(
                "{}: line {line} needs id,x,y",
                path.display()
            )));
        }
        let num = |c: &str| {
            parse_cell(c, path, line)?.ok_or_else(|| {
                Error::Data(format!("{}: line {line}: empty coordinate", path.display()))
            })
        };
        ids.push(rec[0].trim().to_string());
        coords.push([num(&rec[1])?, num(&rec[2])?]);
    }
    check_unique(&ids, path)?;
    Ok((ids, coords))
}

pub fn distances_from_coords(coords: &[[f64; 2]], metric: DistanceMetric) -> Matrix {
    let n = coords.len();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = metric.distance(coords[i], coords[j]);
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

/// Loads readings and a graph and joins them on sensor id. Node order follows
/// the graph file; missing cells are forward- then back-filled and recorded
/// in the observation mask.
pub fn load_csv(
    readings_path: impl AsRef<Path>,
    source: &GraphSource,
    manifest: &DatasetManifest,
) -> Result<Dataset> {
    let raw = read_readings_csv(readings_path)?;
    let (ids, dist, coords) = match source {
        GraphSource::Distances { path, coords } => {
            let (ids, dist) = read_distance_csv(path)?;
            let coords = match coords {
                Some(cp) => Some(reorder_coords(&ids, read_coords_csv(cp)?)?),
                None => None,
            };
            (ids, dist, coords)
        }
        GraphSource::Coords { path, metric } => {
            let (ids, coords) = read_coords_csv(path)?;
            let dist = distances_from_coords(&coords, *metric);
            (ids, dist, Some(coords))
        }
    };

    let column_of: HashMap<&str, usize> = raw
        .ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    if raw.ids.len() != ids.len() || ids.iter().any(|id| !column_of.contains_key(id.as_str())) {
        return Err(Error::Data(format!(
            "readings header ({} sensors) does not match the graph file ({} sensors)",
            raw.ids.len(),
            ids.len()
        )));
    }
    let order: Vec<usize> = ids.iter().map(|id| column_of[id.as_str()]).collect();
    let (t_total, n) = (raw.rows.len(), ids.len());
    let mut values = vec![None; t_total * n];
    for (t, row) in raw.rows.iter().enumerate() {
        for (node, &col) in order.iter().enumerate() {
            values[t * n + node] = row[col];
        }
    }
    let any_missing = values.iter().any(Option::is_none);
    let observed = any_missing.then(|| values.iter().map(Option::is_some).collect::<Vec<bool>>());
    let readings = fill_gaps(&values, t_total, n, &ids)?;

    let graph =
        SensorGraph::from_distances(ids, coords, dist, &manifest.kernel, manifest.directed)?;
    Dataset::new(
        readings,
        observed,
        raw.timestamps,
        manifest.frequency.clone(),
        graph,
        &manifest.options(),
    )
}

fn reorder_coords(
    ids: &[String],
    (cids, coords): (Vec<String>, Vec<[f64; 2]>),
) -> Result<Vec<[f64; 2]>> {
    let by_id: HashMap<&str, [f64; 2]> = cids
        .iter()
        .map(String::as_str)
        .zip(coords.iter().copied())
        .collect();
    if cids.len() != ids.len() {
        return Err(Error::Data(
            "coordinate file does not match the distance header".into(),
        ));
    }
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Data(format!("no coordinates for sensor {id:?}")))
        })
        .collect()
}

fn fill_gaps(values: &[Option<f64>], t_total: usize, n: usize, ids: &[String]) -> Result<Matrix> {
    let mut out = Matrix::zeros(t_total, n);
    for node in 0..n {
        let first = (0..t_total)
            .find_map(|t| values[t * n + node])
            .ok_or_else(|| Error::Data(format!("sensor {:?} has no readings", ids[node])))?;
        let mut last = first;
        for t in 0..t_total {
            if let Some(v) = values[t * n + node] {
                last = v;
            }
            out.set(t, node, last);
        }
    }
    Ok(out)
}

fn fmt(v: f64) -> String {
    // `Display` for f64 prints the shortest string that parses back exactly.
    format!("{v}")
}

pub fn write_readings_csv(
    path: impl AsRef<Path>,
    ids: &[String],
    readings: &Matrix,
    observed: Option<&[bool]>,
    timestamps: Option<&[String]>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = Vec::new();
    if timestamps.is_some() {
        header.push("timestamp");
    }
    header.extend(ids.iter().map(String::as_str));
    w.write_record(&header)?;
    let n = readings.cols();
    for t in 0..readings.rows() {
        let mut rec: Vec<String> = Vec::with_capacity(n + 1);
        if let Some(ts) = timestamps {
            rec.push(ts[t].clone());
        }
        for i in 0..n {
            let seen = observed.is_none_or(|o| o[t * n + i]);
            rec.push(if seen {
                fmt(readings.get(t, i))
            } else {
                String::new()
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_distance_csv(path: impl AsRef<Path>, ids: &[String], dist: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ids)?;
    for r in 0..dist.rows() {
        w.write_record(dist.row(r).iter().map(|&v| fmt(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_coords_csv(path: impl AsRef<Path>, ids: &[String], coords: &[[f64; 2]]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "x", "y"])?;
    for (id, c) in ids.iter().zip(coords) {
        w.write_record([id.clone(), fmt(c[0]), fmt(c[1])])?;
    }
    w.flush()?;
    Ok(())
}
