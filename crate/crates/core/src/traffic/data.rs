use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graphs::{load_adjacency_csv, AdjacencySet};
use crate::tensorgrad::Tensor;

const MINUTES_PER_DAY: i64 = 1440;
const MINUTES_PER_WEEK: i64 = 7 * MINUTES_PER_DAY;

/// A multivariate series `values[d][n][l]` over `N` sensors and `L` evenly
/// spaced timestamps. Missing readings hold 0 and are flagged in `missing`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficTensor {
    /// `D x N x L`, row-major.
    values: Vec<f64>,
    missing: Vec<bool>,
    dims: [usize; 3],
    /// Minutes since 1970-01-01 00:00 (naive local time).
    timestamps: Vec<i64>,
    granularity: i64,
    node_ids: Vec<String>,
}

impl TrafficTensor {
    /// `values` is `D x N x L`; zeros are treated as missing.
    pub fn new(dims: [usize; 3], values: Vec<f64>, timestamps: Vec<i64>, node_ids: Vec<String>) -> Result<Self> {
        let [d, n, l] = dims;
        if d == 0 || n == 0 || l == 0 {
            return shape_err(format!("empty series {dims:?}"));
        }
        if values.len() != d * n * l {
            return shape_err(format!("{} values for dims {dims:?}", values.len()));
        }
        if timestamps.len() != l || node_ids.len() != n {
            return shape_err(format!(
                "{} timestamps and {} node ids for dims {dims:?}",
                timestamps.len(),
                node_ids.len()
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite reading {v}")));
        }
        let granularity = if l > 1 { timestamps[1] - timestamps[0] } else { 5 };
        if granularity <= 0 {
            return Err(Error::Contract("timestamps must be strictly increasing".into()));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] - w[0] != granularity) {
            return Err(Error::Contract(format!(
                "timestamp {} breaks the {granularity}-minute grid",
                i + 1
            )));
        }
        let missing = values.iter().map(|&v| v == 0.0).collect();
        Ok(Self {
            values,
            missing,
            dims,
            timestamps,
            granularity,
            node_ids,
        })
    }

    /// Single-feature series from per-node rows `rows[n][l]`, starting at
    /// `start` minutes with the given step.
    pub fn from_node_rows(rows: &[Vec<f64>], start: i64, granularity: i64) -> Result<Self> {
        let n = rows.len();
        let l = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != l) {
            return shape_err("ragged node rows");
        }
        let values = rows.concat();
        let timestamps = (0..l as i64).map(|i| start + i * granularity).collect();
        let ids = (0..n).map(|i| i.to_string()).collect();
        Self::new([1, n, l], values, timestamps, ids)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn n_features(&self) -> usize {
        self.dims[0]
    }

    pub fn n_nodes(&self) -> usize {
        self.dims[1]
    }

    pub fn len(&self) -> usize {
        self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.dims[2] == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing(&self) -> &[bool] {
        &self.missing
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn granularity(&self) -> i64 {
        self.granularity
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    fn idx(&self, d: usize, n: usize, l: usize) -> usize {
        (d * self.dims[1] + n) * self.dims[2] + l
    }

    pub fn get(&self, d: usize, n: usize, l: usize) -> f64 {
        self.values[self.idx(d, n, l)]
    }

    pub fn is_missing(&self, d: usize, n: usize, l: usize) -> bool {
        self.missing[self.idx(d, n, l)]
    }

    /// Fraction of missing entries.
    pub fn missing_rate(&self) -> f64 {
        self.missing.iter().filter(|&&m| m).count() as f64 / self.missing.len() as f64
    }

    /// Time steps `start..start + len`.
    pub fn slice_time(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return shape_err(format!("time slice {start}..{} of {}", start + len, self.len()));
        }
        let [d, n, _] = self.dims;
        let mut values = Vec::with_capacity(d * n * len);
        let mut missing = Vec::with_capacity(d * n * len);
        for di in 0..d {
            for ni in 0..n {
                let at = self.idx(di, ni, start);
                values.extend_from_slice(&self.values[at..at + len]);
                missing.extend_from_slice(&self.missing[at..at + len]);
            }
        }
        Ok(Self {
            values,
            missing,
            dims: [d, n, len],
            timestamps: self.timestamps[start..start + len].to_vec(),
            granularity: self.granularity,
            node_ids: self.node_ids.clone(),
        })
    }

    /// The listed sensors, in the given order.
    pub fn select_nodes(&self, nodes: &[usize]) -> Result<Self> {
        if nodes.is_empty() || nodes.iter().any(|&i| i >= self.n_nodes()) {
            return shape_err(format!("node selection {nodes:?} out of range for {}", self.n_nodes()));
        }
        let [d, _, l] = self.dims;
        let mut values = Vec::with_capacity(d * nodes.len() * l);
        let mut missing = Vec::with_capacity(d * nodes.len() * l);
        for di in 0..d {
            for &ni in nodes {
                let at = self.idx(di, ni, 0);
                values.extend_from_slice(&self.values[at..at + l]);
                missing.extend_from_slice(&self.missing[at..at + l]);
            }
        }
        Ok(Self {
            values,
            missing,
            dims: [d, nodes.len(), l],
            timestamps: self.timestamps.clone(),
            granularity: self.granularity,
            node_ids: nodes.iter().map(|&i| self.node_ids[i].clone()).collect(),
        })
    }

    /// Time-of-week slot of step `l`, Monday 00:00 being slot 0.
    pub fn week_slot(&self, l: usize) -> usize {
        week_slot(self.timestamps[l], self.granularity)
    }

    /// Writes the first feature as a values CSV readable by [`load_dataset`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
        let mut header = vec![String::new()];
        header.extend(self.node_ids.iter().cloned());
        w.write_record(&header).map_err(csv_io)?;
        for l in 0..self.len() {
            let mut row = vec![format_timestamp(self.timestamps[l])];
            row.extend((0..self.n_nodes()).map(|n| self.get(0, n, l).to_string()));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Slot index within a week for a timestamp in minutes since the epoch.
pub fn week_slot(minutes: i64, granularity: i64) -> usize {
    // 1970-01-01 was a Thursday; shift so that Monday 00:00 is zero.
    let since_monday = (minutes + 3 * MINUTES_PER_DAY).rem_euclid(MINUTES_PER_WEEK);
    (since_monday / granularity) as usize
}

pub fn slots_per_week(granularity: i64) -> usize {
    (MINUTES_PER_WEEK / granularity) as usize
}

pub fn format_timestamp(minutes: i64) -> String {
    match chrono::DateTime::from_timestamp(minutes * 60, 0) {
        Some(t) => t.naive_utc().format("%Y-%m-%d %H:%M:%S").to_string(),
        None => minutes.to_string(),
    }
}

/// Accepts `YYYY-MM-DD HH:MM:SS`, `YYYY-MM-DDTHH:MM:SS` or integer minutes.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc().timestamp().div_euclid(60));
        }
    }
    s.parse::<i64>().ok()
}

/// Reads a values CSV (header of node ids, first column timestamps, one
/// column per sensor) into a single-feature tensor.
pub fn load_values_csv(path: &Path) -> Result<TrafficTensor> {
    let load_err = |msg: String| Error::Load {
        path: path.to_path_buf(),
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| load_err(e.to_string()))?;
    let header = rdr.headers().map_err(|e| load_err(e.to_string()))?.clone();
    if header.len() < 2 {
        return Err(load_err("header must list at least one sensor after the timestamp column".into()));
    }
    let node_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let n = node_ids.len();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut timestamps = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| load_err(format!("row {line}: {e}")))?;
        if rec.len() != n + 1 {
            return Err(load_err(format!("row {line} has {} columns, expected {}", rec.len(), n + 1)));
        }
        let t = parse_timestamp(&rec[0]).ok_or_else(|| load_err(format!("row {line}: bad timestamp {:?}", &rec[0])))?;
        if let Some(&prev) = timestamps.last() {
            if t <= prev {
                return Err(load_err(format!("row {line}: timestamp {:?} is not after the previous row", &rec[0])));
            }
        }
        timestamps.push(t);
        for (c, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| load_err(format!("row {line}, column {}: {e}", c + 2)))?;
            rows[c].push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(load_err("no data rows".into()));
    }
    let l = timestamps.len();
    TrafficTensor::new([1, n, l], rows.concat(), timestamps, node_ids).map_err(|e| load_err(e.to_string()))
}

/// Values CSV plus dense adjacency CSV.
pub fn load_dataset(values_path: &Path, adjacency_path: &Path) -> Result<(TrafficTensor, AdjacencySet, Tensor)> {
    let series = load_values_csv(values_path)?;
    let adj = load_adjacency_csv(adjacency_path)?;
    if adj.shape()[0] != series.n_nodes() {
        return Err(Error::Load {
            path: adjacency_path.to_path_buf(),
            msg: format!(
                "adjacency has {} nodes but the values file has {} sensors",
                adj.shape()[0],
                series.n_nodes()
            ),
        });
    }
    Ok((series, AdjacencySet::from_adjacency(&adj)?, adj))
}

/// Square sub-block of a dense adjacency.
pub fn select_adjacency(a: &Tensor, nodes: &[usize]) -> Result<Tensor> {
    let n = a.shape()[0];
    if nodes.iter().any(|&i| i >= n) {
        return shape_err(format!("node selection out of range for {n} nodes"));
    }
    let rows: Vec<Vec<f64>> = nodes.iter().map(|&i| nodes.iter().map(|&j| a.get(&[i, j])).collect()).collect();
    Tensor::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
        p
    }

    fn toy() -> String {
        let mut s = String::from(",a,b,c\n");
        for l in 0..10 {
            let v = |n: usize| if (l + n) % 7 == 0 { 0.0 } else { 50.0 + (l * 3 + n) as f64 };
            s.push_str(&format!("2012-03-01 00:{:02}:00,{},{},{}\n", 5 * l, v(0), v(1), v(2)));
        }
        s
    }

    #[test]
    fn toy_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let values = write(dir.path(), "v.csv", &toy());
        let adj = write(dir.path(), "a.csv", "1,1,0\n0,1,1\n1,0,1\n");
        let (t, set, _) = load_dataset(&values, &adj).unwrap();
        assert_eq!(t.dims(), [1, 3, 10]);
        assert_eq!(t.granularity(), 5);
        assert_eq!(t.node_ids(), &["a", "b", "c"]);
        assert_eq!(t.get(0, 1, 4), 50.0 + 13.0);
        assert!(t.is_missing(0, 0, 0) && t.is_missing(0, 1, 6) && t.is_missing(0, 2, 5));
        assert_eq!(t.missing().iter().filter(|&&m| m).count(), 4);
        assert_eq!(set.n_nodes(), 3);
        let out = dir.path().join("back.csv");
        t.write_csv(&out).unwrap();
        assert_eq!(load_values_csv(&out).unwrap(), t);
    }

    #[test]
    fn load_errors_carry_positions() {
        let dir = tempfile::tempdir().unwrap();
        let ragged = write(dir.path(), "r.csv", ",a,b\n0,1,2\n5,1\n");
        let e = load_values_csv(&ragged).unwrap_err().to_string();
        assert!(e.contains("row 3"), "{e}");
        let back = write(dir.path(), "b.csv", ",a\n10,1\n5,1\n");
        let e = load_values_csv(&back).unwrap_err().to_string();
        assert!(e.contains("row 3") && e.contains("not after"), "{e}");
        let gap = write(dir.path(), "g.csv", ",a\n0,1\n5,1\n15,1\n");
        assert!(load_values_csv(&gap).is_err());
        let bad = write(dir.path(), "x.csv", ",a\n0,1\n5,zz\n");
        let e = load_values_csv(&bad).unwrap_err().to_string();
        assert!(e.contains("row 3, column 2"), "{e}");
        let v = write(dir.path(), "v.csv", &toy());
        let a = write(dir.path(), "a.csv", "1,0\n0,1\n");
        let e = load_dataset(&v, &a).unwrap_err().to_string();
        assert!(e.contains("2 nodes") && e.contains("3 sensors"), "{e}");
    }

    #[test]
    fn timestamps_and_slots() {
        // 2012-03-05 was a Monday
        let monday = parse_timestamp("2012-03-05 00:00:00").unwrap();
        assert_eq!(week_slot(monday, 5), 0);
        assert_eq!(week_slot(monday + 5, 5), 1);
        assert_eq!(week_slot(monday - 5, 5), slots_per_week(5) - 1);
        assert_eq!(week_slot(monday + 7 * 1440, 5), 0);
        assert_eq!(parse_timestamp("2012-03-05T00:00:00"), Some(monday));
        assert_eq!(format_timestamp(monday), "2012-03-05 00:00:00");
        assert_eq!(parse_timestamp("42"), Some(42));
        assert_eq!(slots_per_week(5), 2016);
    }

    #[test]
    fn slicing_and_selection() {
        let rows = vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 0.0, 7.0, 8.0]];
        let t = TrafficTensor::from_node_rows(&rows, 0, 5).unwrap();
        let s = t.slice_time(1, 2).unwrap();
        assert_eq!(s.values(), &[2.0, 3.0, 0.0, 7.0]);
        assert_eq!(s.timestamps(), &[5, 10]);
        assert!(s.is_missing(0, 1, 0));
        let r = t.select_nodes(&[1]).unwrap();
        assert_eq!(r.values(), &[5.0, 0.0, 7.0, 8.0]);
        assert_eq!(r.node_ids(), &["1"]);
        assert!(t.slice_time(3, 2).is_err());
        assert!((t.missing_rate() - 0.125).abs() < 1e-15);
        let a = Tensor::from_rows(&[vec![0.0, 1.0, 2.0], vec![3.0, 0.0, 4.0], vec![5.0, 6.0, 0.0]]).unwrap();
        let sub = select_adjacency(&a, &[2, 0]).unwrap();
        assert_eq!(sub.data(), &[0.0, 5.0, 2.0, 0.0]);
    }
}
