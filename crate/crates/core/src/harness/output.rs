//! Result files: a versioned CSV, a JSON-lines twin, per-method plot data
//! and per-tone block dumps. Floats use Rust's shortest round-trip form so
//! identical tables give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use super::{ExperimentKind, Method, ResultRow, ResultTable};
use crate::error::{Error, Result};

/// Bump when a CSV column is added, removed or reinterpreted.
pub const SCHEMA_VERSION: u32 = 1;

const COLUMNS: [&str; 20] = [
    "schema_version",
    "kind",
    "sweep_index",
    "sweep_value",
    "replicate",
    "seed",
    "method",
    "status",
    "sum_se_bps_hz",
    "sum_rate_mbps",
    "user_se_bps_hz",
    "user_rate_mbps",
    "power_w",
    "power_dbm",
    "user_power_w",
    "power_ratio_to_oma",
    "order",
    "blocks",
    "kkt_residual",
    "iterations",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn record(row: &ResultRow) -> Vec<String> {
    vec![
        SCHEMA_VERSION.to_string(),
        row.kind.label().to_string(),
        row.sweep_index.to_string(),
        row.sweep_value.to_string(),
        row.replicate.to_string(),
        row.seed.to_string(),
        row.method.label().to_string(),
        row.status.clone(),
        row.sum_se.to_string(),
        row.sum_mbps.to_string(),
        join(&row.user_se),
        join(&row.user_mbps),
        row.power_w.to_string(),
        row.power_dbm.to_string(),
        join(&row.user_power_w),
        row.power_ratio.map(|x| x.to_string()).unwrap_or_default(),
        row.order.clone(),
        row.blocks.clone(),
        row.kkt_residual.to_string(),
        row.iterations.to_string(),
    ]
}

fn csv_bytes(rows: &[ResultRow], path: &Path) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(record(row)).map_err(|e| csv_err(path, e))?;
    }
    w.into_inner().map_err(|e| Error::Validation(e.to_string()))
}

fn jsonl_bytes(rows: &[ResultRow]) -> Vec<u8> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).expect("rows always serialize");
        out.push(b'\n');
    }
    out
}

/// Write the table's rows to `path` in one format.
pub fn emit_results(table: &ResultTable, format: OutputFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if table.rows.is_empty() {
        return Err(Error::Validation("result table is empty".into()));
    }
    let bytes = match format {
        OutputFormat::Csv => csv_bytes(&table.rows, path)?,
        OutputFormat::Jsonl => jsonl_bytes(&table.rows),
    };
    fs::write(path, bytes).map_err(io_err(path))
}

/// Write `results.csv`, `results.jsonl`, `plot_<method>.dat` for each method
/// and `tones_v<i>_r<k>_block<b>.csv` for time-sharing dumps. Returns the
/// paths in the order written.
pub fn emit_all(table: &ResultTable, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let csv_path = dir.join("results.csv");
    emit_results(table, OutputFormat::Csv, &csv_path)?;
    written.push(csv_path);
    let jsonl_path = dir.join("results.jsonl");
    emit_results(table, OutputFormat::Jsonl, &jsonl_path)?;
    written.push(jsonl_path);

    for &m in &table.spec.methods {
        let path = dir.join(format!("plot_{}.dat", m.label()));
        fs::write(&path, plot_data(table, m)).map_err(io_err(&path))?;
        written.push(path);
    }

    for dump in &table.tones {
        for (b, block) in dump.blocks.iter().enumerate() {
            let path = dir.join(format!("tones_v{}_r{}_block{}.csv", dump.sweep_index, dump.replicate, b));
            let mut w = csv::Writer::from_writer(Vec::new());
            let users = block.se.len();
            let mut header = vec!["fraction".to_string(), "order".to_string(), "tone".to_string()];
            header.extend((0..users).map(|u| format!("user{u}_se_bps_hz")));
            w.write_record(&header).map_err(|e| csv_err(&path, e))?;
            let tones = block.se.first().map_or(0, Vec::len);
            for n in 0..tones {
                let mut rec = vec![block.fraction.to_string(), block.order.clone(), n.to_string()];
                rec.extend(block.se.iter().map(|u| u[n].to_string()));
                w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
            fs::write(&path, bytes).map_err(io_err(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Seed-averaged curve for one method, whitespace separated.
fn plot_data(table: &ResultTable, method: Method) -> String {
    let mut out = format!(
        "# {} {}\n# sweep_value sum_se_bps_hz sum_rate_mbps power_w power_ratio_to_oma ok_runs\n",
        table.spec.kind.label(),
        method.label()
    );
    for (i, v) in table.spec.values.iter().enumerate() {
        let ok = table
            .rows
            .iter()
            .filter(|r| r.method == method && r.sweep_index == i && r.is_ok())
            .count();
        let fmt = |x: Option<f64>| x.map_or("nan".to_string(), |x| x.to_string());
        let ratio = table.mean(method, i, |r| r.power_ratio.unwrap_or(f64::NAN));
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            v,
            fmt(table.mean(method, i, |r| r.sum_se)),
            fmt(table.mean(method, i, |r| r.sum_mbps)),
            fmt(table.mean(method, i, |r| r.power_w)),
            fmt(ratio.filter(|x| !x.is_nan())),
            ok
        ));
    }
    out
}

fn parse_kind(s: &str) -> Result<ExperimentKind> {
    [
        ExperimentKind::SnrSweep,
        ExperimentKind::NtSweep,
        ExperimentKind::UserSweep,
        ExperimentKind::SubcarrierSweep,
        ExperimentKind::DistanceSweep,
        ExperimentKind::TimeshareDemo,
    ]
    .into_iter()
    .find(|k| k.label() == s)
    .ok_or_else(|| Error::Validation(format!("unknown experiment kind {s:?}")))
}

/// Parse rows written by [`emit_results`] in CSV form.
pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Validation(e.to_string()))?;
    if header.iter().ne(COLUMNS.iter().copied()) {
        return Err(Error::Validation("unexpected CSV header".into()));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Validation(e.to_string()))?;
        let bad = |what: &str| Error::Validation(format!("row {}: bad {what}", line + 1));
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(COLUMNS[i]));
        let n = |i: usize| rec[i].parse::<u64>().map_err(|_| bad(COLUMNS[i]));
        let list = |i: usize| -> Result<Vec<f64>> {
            rec[i]
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| bad(COLUMNS[i])))
                .collect()
        };
        if n(0)? != SCHEMA_VERSION as u64 {
            return Err(Error::Validation(format!("row {}: schema version {} not supported", line + 1, &rec[0])));
        }
        rows.push(ResultRow {
            kind: parse_kind(&rec[1])?,
            sweep_index: n(2)? as usize,
            sweep_value: f(3)?,
            replicate: n(4)? as usize,
            seed: n(5)?,
            method: Method::parse(&rec[6])?,
            status: rec[7].to_string(),
            sum_se: f(8)?,
            sum_mbps: f(9)?,
            user_se: list(10)?,
            user_mbps: list(11)?,
            power_w: f(12)?,
            power_dbm: f(13)?,
            user_power_w: list(14)?,
            power_ratio: if rec[15].is_empty() { None } else { Some(f(15)?) },
            order: rec[16].to_string(),
            blocks: rec[17].to_string(),
            kkt_residual: f(18)?,
            iterations: n(19)? as usize,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_experiment, ExperimentSpec};

    fn table() -> ResultTable {
        let mut spec = ExperimentSpec::new(ExperimentKind::DistanceSweep, vec![500.0], Method::ALL.to_vec(), 1);
        spec.base.num_subcarriers = 4;
        run_experiment(&spec).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let t = table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        emit_results(&t, OutputFormat::Csv, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let back = parse_csv(&text).unwrap();
        assert_eq!(back, t.rows);
    }

    #[test]
    fn empty_table_is_rejected() {
        let mut t = table();
        t.rows.clear();
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_results(&t, OutputFormat::Csv, dir.path().join("x.csv")).is_err());
    }

    #[test]
    fn missing_directory_reports_path() {
        let t = table();
        let err = emit_results(&t, OutputFormat::Jsonl, "/nonexistent/dir/out.jsonl").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/out.jsonl"));
    }

    #[test]
    fn emit_all_writes_one_plot_per_method() {
        let t = table();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_all(&t, dir.path()).unwrap();
        assert_eq!(files.len(), 2 + Method::ALL.len());
        let plot = fs::read_to_string(dir.path().join("plot_proposed.dat")).unwrap();
        assert_eq!(plot.lines().count(), 3);
    }
}
