//! CSV and JSON persistence. Floats are written with 17 significant digits
//! in scientific notation so every value parses back bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gp::Dataset;
use crate::sim::{LogRow, TrajectoryLog};

pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("cannot parse '{}' as a number", s)))
}

pub fn trajectory_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=m).map(|k| format!("xl_{}", k)));
    for i in 1..=n {
        for block in ["x", "u", "e", "xi"] {
            h.extend((1..=m).map(|k| format!("{}{}_{}", block, i, k)));
        }
    }
    h.push("V".to_string());
    h.extend((1..=m).map(|k| format!("E_{}", k)));
    h.extend((1..=n).map(|i| format!("dtau_{}", i)));
    h
}

pub fn write_trajectory<W: Write>(log: &TrajectoryLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(log.agents, log.dim))?;
    for r in &log.rows {
        let mut rec = Vec::with_capacity(2 + log.dim * (1 + 4 * log.agents + 1) + log.agents);
        rec.push(fmt_f64(r.t));
        rec.extend(r.leader.iter().map(|&v| fmt_f64(v)));
        for i in 0..log.agents {
            for block in [&r.x[i], &r.u[i], &r.e[i], &r.xi[i]] {
                rec.extend(block.iter().map(|&v| fmt_f64(v)));
            }
        }
        rec.push(fmt_f64(r.lyapunov));
        rec.extend(r.accumulated.iter().map(|&v| fmt_f64(v)));
        rec.extend(r.dtau.iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_trajectory<R: Read>(input: R, mode: impl Into<String>) -> Result<TrajectoryLog> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let m = header.iter().filter(|h| h.starts_with("xl_")).count();
    let n = header.iter().filter(|h| h.starts_with("dtau_")).count();
    if m == 0 || header != trajectory_header(n, m) {
        return Err(Error::Config(
            "trajectory CSV header does not match the expected layout".into(),
        ));
    }
    let mut log = TrajectoryLog::new(n, m, mode);
    for rec in rdr.records() {
        let rec = rec?;
        let vals = rec.iter().map(parse_f64).collect::<Result<Vec<f64>>>()?;
        let mut it = vals.into_iter();
        let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
        let t = take(1)[0];
        let leader = take(m);
        let (mut x, mut u, mut e, mut xi) = (vec![], vec![], vec![], vec![]);
        for _ in 0..n {
            x.push(take(m));
            u.push(take(m));
            e.push(take(m));
            xi.push(take(m));
        }
        let lyapunov = take(1)[0];
        let accumulated = take(m);
        let dtau = take(n);
        log.rows.push(LogRow {
            t,
            leader,
            x,
            u,
            e,
            xi,
            lyapunov,
            accumulated,
            dtau,
        });
    }
    Ok(log)
}

pub fn save_trajectory(log: &TrajectoryLog, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trajectory(log, std::io::BufWriter::new(f))
}

pub fn load_trajectory(path: &Path, mode: impl Into<String>) -> Result<TrajectoryLog> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectory(std::io::BufReader::new(f), mode)
}

/// Columns `x_1..x_m, y`.
pub fn write_dataset<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=data.dim()).map(|k| format!("x_{}", k)).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (x, y) in data.inputs().iter().zip(data.outputs()) {
        let mut rec: Vec<String> = x.iter().map(|&v| fmt_f64(v)).collect();
        rec.push(fmt_f64(*y));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let dim = header.len().saturating_sub(1);
    if dim == 0 || header.last().map(String::as_str) != Some("y") {
        return Err(Error::InvalidDataset(
            "dataset CSV must have columns x_1..x_m, y".into(),
        ));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in rdr.records() {
        let vals = rec?.iter().map(parse_f64).collect::<Result<Vec<f64>>>()?;
        ys.push(vals[dim]);
        xs.push(vals[..dim].to_vec());
    }
    Dataset::new(dim, xs, ys)
}

pub fn dataset_file_name(agent: usize, dim: usize) -> String {
    format!("agent{}_dim{}.csv", agent + 1, dim + 1)
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(data, std::io::BufWriter::new(f))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(f))
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_log(vals: &[f64]) -> TrajectoryLog {
        let mut log = TrajectoryLog::new(2, 1, "none");
        for (s, &v) in vals.iter().enumerate() {
            log.rows.push(LogRow {
                t: s as f64 * 0.01,
                leader: vec![v],
                x: vec![vec![v * 2.0], vec![-v]],
                u: vec![vec![1.0 / (1.0 + v.abs())], vec![v.sin()]],
                e: vec![vec![v], vec![-2.0 * v]],
                xi: vec![vec![3.0 * v], vec![0.1]],
                lyapunov: v * v,
                accumulated: vec![3.0 * v.abs()],
                dtau: vec![v.abs(), 1e-300],
            });
        }
        log
    }

    #[test]
    fn header_layout() {
        let h = trajectory_header(2, 2);
        assert_eq!(&h[..3], &["t", "xl_1", "xl_2"]);
        assert_eq!(&h[3..5], &["x1_1", "x1_2"]);
        assert_eq!(&h[9..11], &["xi1_1", "xi1_2"]);
        assert_eq!(h[19], "V");
        assert_eq!(&h[h.len() - 4..], &["E_1", "E_2", "dtau_1", "dtau_2"]);
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
    }

    proptest! {
        #[test]
        fn trajectory_csv_round_trips(vals in prop::collection::vec(-1e6f64..1e6, 1..20)) {
            let log = sample_log(&vals);
            let mut buf = Vec::new();
            write_trajectory(&log, &mut buf).unwrap();
            let back = read_trajectory(buf.as_slice(), "none").unwrap();
            prop_assert_eq!(back, log);
        }

        #[test]
        fn dataset_csv_round_trips(pts in prop::collection::vec((any::<f64>().prop_filter("finite", |v| v.is_finite()), -1e3f64..1e3), 0..30)) {
            let xs: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0, p.1 * 0.5]).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let d = Dataset::new(2, xs, ys).unwrap();
            let mut buf = Vec::new();
            write_dataset(&d, &mut buf).unwrap();
            prop_assert_eq!(read_dataset(buf.as_slice()).unwrap(), d);
        }
    }

    #[test]
    fn bad_header_rejected() {
        let csv = "t,foo\n0,1\n";
        assert!(read_trajectory(csv.as_bytes(), "x").is_err());
        assert!(read_dataset("a,b\n1,2\n".as_bytes()).is_err());
    }
}
