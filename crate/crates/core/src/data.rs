//! Clustered survival data: ingestion, validation, standardisation and
//! per-cluster Kaplan-Meier summaries.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MeghError, Result, ValidationError};
use crate::stats;

/// Rows grouped by cluster. Rows of one cluster are stored contiguously,
/// clusters in order of first appearance in the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredDataset {
    times: Vec<f64>,
    log_times: Vec<f64>,
    status: Vec<bool>,
    cluster_of: Vec<usize>,
    /// Row-major `n x p`.
    covariates: Vec<f64>,
    /// Row-major `n x p~`, a copy of the time-scale columns.
    time_covariates: Vec<f64>,
    covariate_names: Vec<String>,
    time_scale_columns: Vec<usize>,
    cluster_labels: Vec<String>,
    cluster_ranges: Vec<(usize, usize)>,
    transforms: Vec<ColumnTransform>,
}

/// Standardisation applied to a covariate column at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub column: String,
    pub mean: f64,
    pub sd: f64,
    pub truncated_at: Option<f64>,
    /// Pooled sample (censored and uncensored rows) used for mean and sd.
    pub sample: String,
}

impl ClusteredDataset {
    /// Build and validate a dataset. `rows[j]` holds the hazard-scale
    /// covariates of subject `j`; `time_scale_columns` indexes into them.
    pub fn new(
        times: Vec<f64>,
        status: Vec<bool>,
        clusters: Vec<String>,
        rows: Vec<Vec<f64>>,
        covariate_names: Vec<String>,
        time_scale_columns: Vec<usize>,
    ) -> Result<Self> {
        let n = times.len();
        if n == 0 {
            return Err(ValidationError::Empty.into());
        }
        crate::error::check_len("status", status.len(), n)?;
        crate::error::check_len("cluster labels", clusters.len(), n)?;
        crate::error::check_len("covariate rows", rows.len(), n)?;
        let p = covariate_names.len();
        for (j, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(ValidationError::RaggedRow {
                    row: j,
                    found: row.len(),
                    expected: p,
                }
                .into());
            }
            if let Some(k) = row.iter().position(|v| !v.is_finite()) {
                return Err(ValidationError::MissingValue {
                    row: j,
                    column: covariate_names[k].clone(),
                }
                .into());
            }
        }
        for &c in &time_scale_columns {
            if c >= p {
                return Err(MeghError::Contract(format!(
                    "time-scale column index {c} out of range for {p} covariates"
                )));
            }
        }
        for (j, &t) in times.iter().enumerate() {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ValidationError::NonPositiveTime { row: j, value: t }.into());
            }
        }

        let mut labels: Vec<String> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut cluster_id = Vec::with_capacity(n);
        for c in &clusters {
            let next = labels.len();
            let id = *index.entry(c.as_str()).or_insert_with(|| {
                labels.push(c.clone());
                next
            });
            cluster_id.push(id);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&j| cluster_id[j]);

        let tsc = &time_scale_columns;
        let rows_ref = &rows;
        let mut ds = ClusteredDataset {
            times: order.iter().map(|&j| times[j]).collect(),
            log_times: order.iter().map(|&j| times[j].ln()).collect(),
            status: order.iter().map(|&j| status[j]).collect(),
            cluster_of: order.iter().map(|&j| cluster_id[j]).collect(),
            covariates: order.iter().flat_map(|&j| rows[j].iter().copied()).collect(),
            time_covariates: order
                .iter()
                .flat_map(|&j| tsc.iter().map(move |&c| rows_ref[j][c]))
                .collect(),
            covariate_names,
            time_scale_columns: time_scale_columns.clone(),
            cluster_labels: labels,
            cluster_ranges: Vec::new(),
            transforms: Vec::new(),
        };
        let mut start = 0;
        for i in 0..ds.cluster_labels.len() {
            let mut end = start;
            while end < n && ds.cluster_of[end] == i {
                end += 1;
            }
            if end == start {
                return Err(ValidationError::EmptyCluster(ds.cluster_labels[i].clone()).into());
            }
            ds.cluster_ranges.push((start, end));
            start = end;
        }
        ds.check_rank()?;
        Ok(ds)
    }

    fn check_rank(&self) -> Result<()> {
        let uncensored: Vec<usize> = (0..self.n()).filter(|&j| self.status[j]).collect();
        let checks = [
            ("hazard-scale", self.p(), &self.covariates),
            ("time-scale", self.p_time(), &self.time_covariates),
        ];
        for (design, cols, data) in checks {
            if cols == 0 {
                continue;
            }
            let rows: Vec<f64> = uncensored
                .iter()
                .flat_map(|&j| data[j * cols..(j + 1) * cols].iter().copied())
                .collect();
            let rank = matrix_rank(uncensored.len(), cols, &rows);
            if rank < cols {
                return Err(ValidationError::RankDeficient {
                    design,
                    rank,
                    columns: cols,
                }
                .into());
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn p_time(&self) -> usize {
        self.time_scale_columns.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_labels.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn log_times(&self) -> &[f64] {
        &self.log_times
    }

    pub fn status(&self) -> &[bool] {
        &self.status
    }

    pub fn cluster_of(&self) -> &[usize] {
        &self.cluster_of
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn time_scale_columns(&self) -> &[usize] {
        &self.time_scale_columns
    }

    pub fn time_scale_names(&self) -> Vec<String> {
        self.time_scale_columns
            .iter()
            .map(|&c| self.covariate_names[c].clone())
            .collect()
    }

    pub fn cluster_labels(&self) -> &[String] {
        &self.cluster_labels
    }

    pub fn cluster_range(&self, i: usize) -> std::ops::Range<usize> {
        let (a, b) = self.cluster_ranges[i];
        a..b
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.cluster_ranges.iter().map(|(a, b)| b - a).collect()
    }

    /// Hazard-scale covariates of row `j`.
    #[inline]
    pub fn x(&self, j: usize) -> &[f64] {
        let p = self.p();
        &self.covariates[j * p..(j + 1) * p]
    }

    /// Time-scale covariates of row `j`.
    #[inline]
    pub fn x_time(&self, j: usize) -> &[f64] {
        let p = self.p_time();
        &self.time_covariates[j * p..(j + 1) * p]
    }

    pub fn transforms(&self) -> &[ColumnTransform] {
        &self.transforms
    }

    pub fn censoring_rate(&self) -> f64 {
        self.status.iter().filter(|&&d| !d).count() as f64 / self.n() as f64
    }

    pub fn n_events(&self) -> usize {
        self.status.iter().filter(|&&d| d).count()
    }

    /// Copy of the design with new outcomes, keeping covariates and clusters.
    pub fn with_outcomes(&self, times: Vec<f64>, status: Vec<bool>) -> Result<Self> {
        crate::error::check_len("times", times.len(), self.n())?;
        crate::error::check_len("status", status.len(), self.n())?;
        for (j, &t) in times.iter().enumerate() {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ValidationError::NonPositiveTime { row: j, value: t }.into());
            }
        }
        let mut ds = self.clone();
        ds.log_times = times.iter().map(|t| t.ln()).collect();
        ds.times = times;
        ds.status = status;
        ds.check_rank()?;
        Ok(ds)
    }

    /// Multiply hazard-scale column `col` by `factor` (time-scale copies included).
    pub fn scale_column(&self, col: usize, factor: f64) -> Self {
        let mut ds = self.clone();
        let p = self.p();
        for j in 0..self.n() {
            ds.covariates[j * p + col] *= factor;
        }
        let pt = self.p_time();
        for (k, &c) in self.time_scale_columns.iter().enumerate() {
            if c == col {
                for j in 0..self.n() {
                    ds.time_covariates[j * pt + k] *= factor;
                }
            }
        }
        ds
    }

    /// Write as canonical CSV: `cluster,time,status,<covariates>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["cluster".to_string(), "time".into(), "status".into()];
        header.extend(self.covariate_names.iter().cloned());
        wtr.write_record(&header)?;
        for j in 0..self.n() {
            let mut rec = vec![
                self.cluster_labels[self.cluster_of[j]].clone(),
                format!("{}", self.times[j]),
                if self.status[j] { "1".into() } else { "0".into() },
            ];
            rec.extend(self.x(j).iter().map(|v| format!("{v}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

fn matrix_rank(rows: usize, cols: usize, row_major: &[f64]) -> usize {
    if rows == 0 {
        return 0;
    }
    let m = DMatrix::from_row_slice(rows, cols, row_major);
    let sv = m.svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let tol = max * rows.max(cols) as f64 * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

/// A column of a raw table with its inferred type.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Integer(Vec<i64>),
    Real(Vec<f64>),
    Categorical(Vec<String>),
}

impl Column {
    fn infer(values: Vec<String>) -> Column {
        if let Ok(v) = values.iter().map(|s| s.trim().parse::<i64>()).collect() {
            return Column::Integer(v);
        }
        if let Ok(v) = values
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| ()).and_then(|x| if x.is_finite() { Ok(x) } else { Err(()) }))
            .collect::<std::result::Result<Vec<f64>, ()>>()
        {
            return Column::Real(v);
        }
        Column::Categorical(values)
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Integer(v) => v.len(),
            Column::Real(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn as_real(&self, name: &str) -> Result<Vec<f64>, ValidationError> {
        match self {
            Column::Integer(v) => Ok(v.iter().map(|&x| x as f64).collect()),
            Column::Real(v) => Ok(v.clone()),
            Column::Categorical(v) => {
                let (row, value) = v
                    .iter()
                    .enumerate()
                    .find(|(_, s)| s.trim().parse::<f64>().map(|x| !x.is_finite()).unwrap_or(true))
                    .map(|(i, s)| (i, s.clone()))
                    .unwrap_or((0, String::new()));
                if value.trim().is_empty() || value.trim().eq_ignore_ascii_case("na") {
                    Err(ValidationError::MissingValue {
                        row,
                        column: name.to_string(),
                    })
                } else {
                    Err(ValidationError::NonNumeric {
                        column: name.to_string(),
                        row,
                        value,
                    })
                }
            }
        }
    }

    fn as_labels(&self, name: &str) -> Result<Vec<String>, ValidationError> {
        let labels: Vec<String> = match self {
            Column::Integer(v) => v.iter().map(|x| x.to_string()).collect(),
            Column::Real(v) => v.iter().map(|x| format!("{x}")).collect(),
            Column::Categorical(v) => v.iter().map(|s| s.trim().to_string()).collect(),
        };
        if let Some(row) = labels.iter().position(|s| s.is_empty() || s.eq_ignore_ascii_case("na")) {
            return Err(ValidationError::MissingValue {
                row,
                column: name.to_string(),
            });
        }
        Ok(labels)
    }
}

/// A rectangular table read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub columns: Vec<Column>,
}

impl RawTable {
    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for rec in rdr.records() {
            let rec = rec?;
            for (k, field) in rec.iter().enumerate() {
                raw[k].push(field.to_string());
            }
        }
        Ok(RawTable {
            headers,
            columns: raw.into_iter().map(Column::infer).collect(),
        })
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map(Column::len).unwrap_or(0)
    }

    pub fn column(&self, name: &str) -> Result<&Column, ValidationError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|k| &self.columns[k])
            .ok_or_else(|| ValidationError::MissingColumn(name.to_string()))
    }
}

/// Roles of the input columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub time: String,
    pub status: String,
    pub cluster: String,
    pub hazard: Vec<String>,
    pub time_scale: Vec<String>,
    pub standardize: Vec<String>,
    pub truncate: Vec<(String, f64)>,
}

impl ColumnMapping {
    pub fn new(time: &str, status: &str, cluster: &str) -> Self {
        ColumnMapping {
            time: time.into(),
            status: status.into(),
            cluster: cluster.into(),
            ..Default::default()
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<ClusteredDataset> {
    dataset_from_table(&RawTable::read_path(path)?, mapping)
}

pub fn dataset_from_table(table: &RawTable, mapping: &ColumnMapping) -> Result<ClusteredDataset> {
    let n = table.n_rows();
    if n == 0 {
        return Err(ValidationError::Empty.into());
    }
    let times = table.column(&mapping.time)?.as_real(&mapping.time)?;
    let status_raw = table.column(&mapping.status)?.as_real(&mapping.status)?;
    let mut status = Vec::with_capacity(n);
    for (row, &s) in status_raw.iter().enumerate() {
        if s == 0.0 {
            status.push(false);
        } else if s == 1.0 {
            status.push(true);
        } else {
            return Err(ValidationError::InvalidStatus {
                row,
                value: format!("{s}"),
            }
            .into());
        }
    }
    let clusters = table.column(&mapping.cluster)?.as_labels(&mapping.cluster)?;

    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(mapping.hazard.len());
    let mut transforms = Vec::new();
    for name in &mapping.hazard {
        let mut v = table.column(name)?.as_real(name)?;
        let trunc = mapping.truncate.iter().find(|(c, _)| c == name).map(|(_, t)| *t);
        if let Some(cap) = trunc {
            for x in v.iter_mut() {
                *x = x.min(cap);
            }
        }
        if mapping.standardize.iter().any(|c| c == name) {
            let m = stats::mean(&v);
            let s = stats::sd(&v);
            if !(s > 0.0) {
                return Err(ValidationError::Model(format!("column `{name}` has zero variance")).into());
            }
            for x in v.iter_mut() {
                *x = (*x - m) / s;
            }
            transforms.push(ColumnTransform {
                column: name.clone(),
                mean: m,
                sd: s,
                truncated_at: trunc,
                sample: "pooled".into(),
            });
        }
        cols.push(v);
    }
    let mut time_cols = Vec::with_capacity(mapping.time_scale.len());
    for name in &mapping.time_scale {
        let k = mapping
            .hazard
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ValidationError::TimeColumnNotInHazard(name.clone()))?;
        time_cols.push(k);
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|j| cols.iter().map(|c| c[j]).collect()).collect();
    let mut ds = ClusteredDataset::new(times, status, clusters, rows, mapping.hazard.clone(), time_cols)?;
    ds.transforms = transforms;
    Ok(ds)
}

/// Product-limit estimate for one cluster, one entry per distinct event time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub cluster: String,
    pub n: usize,
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

/// Kaplan-Meier estimate from raw times and status.
pub fn kaplan_meier(label: &str, times: &[f64], status: &[bool]) -> KmCurve {
    let mut idx: Vec<usize> = (0..times.len()).collect();
    // deaths before censorings at tied times
    idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(status[b].cmp(&status[a])));
    let mut curve = KmCurve {
        cluster: label.to_string(),
        n: times.len(),
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut s = 1.0;
    let mut k = 0;
    while k < idx.len() {
        let t = times[idx[k]];
        let at_risk = idx.len() - k;
        let mut deaths = 0;
        let mut m = k;
        while m < idx.len() && times[idx[m]] == t {
            if status[idx[m]] {
                deaths += 1;
            }
            m += 1;
        }
        if deaths > 0 {
            s *= 1.0 - deaths as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.events.push(deaths);
        }
        k = m;
    }
    curve
}

pub fn km_by_cluster(data: &ClusteredDataset) -> Vec<KmCurve> {
    (0..data.n_clusters())
        .map(|i| {
            let r = data.cluster_range(i);
            kaplan_meier(&data.cluster_labels()[i], &data.times()[r.clone()], &data.status()[r])
        })
        .collect()
}

/// KM curves as CSV (`cluster,time,survival,at_risk`), each curve starting at `(0, 1)`.
pub fn write_km_csv<W: Write>(curves: &[KmCurve], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["cluster", "time", "survival", "at_risk"])?;
    for c in curves {
        wtr.write_record([c.cluster.clone(), "0".into(), "1".into(), c.n.to_string()])?;
        for k in 0..c.times.len() {
            wtr.write_record([
                c.cluster.clone(),
                format!("{}", c.times[k]),
                format!("{}", c.survival[k]),
                c.at_risk[k].to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// K-sample log-rank test comparing the clusters' survival curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

pub fn logrank_test(data: &ClusteredDataset) -> LogRankResult {
    let k = data.n_clusters();
    let n = data.n();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| data.times()[a].total_cmp(&data.times()[b]));
    let mut at_risk = data.cluster_sizes();
    let mut total = n;
    let mut o_minus_e = vec![0.0; k];
    let mut var = vec![0.0; k * k];
    let mut pos = 0;
    while pos < n {
        let t = data.times()[idx[pos]];
        let mut end = pos;
        let mut deaths = vec![0usize; k];
        let mut leaving = vec![0usize; k];
        while end < n && data.times()[idx[end]] == t {
            let j = idx[end];
            let g = data.cluster_of()[j];
            if data.status()[j] {
                deaths[g] += 1;
            }
            leaving[g] += 1;
            end += 1;
        }
        let d: usize = deaths.iter().sum();
        if d > 0 && total > 0 {
            let nt = total as f64;
            let df = d as f64;
            for g in 0..k {
                let frac = at_risk[g] as f64 / nt;
                o_minus_e[g] += deaths[g] as f64 - df * frac;
            }
            if total > 1 {
                let factor = df * (nt - df) / (nt - 1.0);
                for g in 0..k {
                    let fg = at_risk[g] as f64 / nt;
                    for h in 0..k {
                        let fh = at_risk[h] as f64 / nt;
                        let delta = if g == h { 1.0 } else { 0.0 };
                        var[g * k + h] += factor * fg * (delta - fh);
                    }
                }
            }
        }
        for g in 0..k {
            at_risk[g] -= leaving[g];
        }
        total -= end - pos;
        pos = end;
    }
    if k < 2 {
        return LogRankResult {
            statistic: 0.0,
            df: 0,
            p_value: 1.0,
        };
    }
    let m = k - 1;
    let v = DMatrix::from_fn(m, m, |a, b| var[a * k + b]);
    let oe = nalgebra::DVector::from_fn(m, |a, _| o_minus_e[a]);
    let svd = v.svd(true, true);
    let max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = max * m as f64 * 1e-10;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let statistic = match svd.pseudo_inverse(tol) {
        Ok(pinv) => (oe.transpose() * pinv * &oe)[(0, 0)],
        Err(_) => f64::NAN,
    };
    LogRankResult {
        statistic,
        df: rank,
        p_value: if rank == 0 { 1.0 } else { stats::chi2_sf(statistic, rank as f64) },
    }
}
