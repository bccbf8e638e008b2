use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sim::rmse_of;

/// Transient excluded from the RMSE window, s.
pub const DEFAULT_T_SKIP: f64 = 1.0;

/// The parts of a trajectory CSV that the RMSE needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub path: PathBuf,
    /// From the `controller = ` manifest line, else the file stem.
    pub label: String,
    pub dof: usize,
    pub time: Vec<f64>,
    /// Row-major `e_1..e_n`.
    pub e: Vec<f64>,
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text, path)
}

pub fn parse_trace(text: &str, path: &Path) -> Result<Trace> {
    let mut label = None;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.starts_with('#') => {
                if let Some(v) = l.trim_start_matches('#').trim().strip_prefix("controller = ") {
                    label = Some(v.trim().to_string());
                }
            }
            Some((_, l)) => break l,
            None => return Err(Error::parse(path, "no header row")),
        }
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let t_col = cols.iter().position(|c| *c == "t").ok_or_else(|| Error::parse(path, "no `t` column"))?;
    let e_cols: Vec<usize> = (1..)
        .map_while(|j| cols.iter().position(|c| *c == format!("e_{j}")))
        .collect();
    if e_cols.is_empty() {
        return Err(Error::parse(path, "no `e_1` column"));
    }
    let mut time = Vec::new();
    let mut e = Vec::new();
    for (i, line) in lines {
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::parse(path, format!("line {}: expected {} fields, found {}", i + 1, cols.len(), fields.len())));
        }
        let num = |k: usize| {
            fields[k]
                .parse::<f64>()
                .map_err(|_| Error::parse(path, format!("line {}: `{}` is not a number", i + 1, fields[k])))
        };
        time.push(num(t_col)?);
        for &c in &e_cols {
            e.push(num(c)?);
        }
    }
    Ok(Trace {
        path: path.to_path_buf(),
        label: label.unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()),
        dof: e_cols.len(),
        time,
        e,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseRow {
    pub label: String,
    pub path: PathBuf,
    pub rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    pub t_skip: f64,
    pub rows: Vec<RmseRow>,
}

impl RmseReport {
    /// All traces must share the time grid and joint count.
    pub fn from_traces(traces: &[Trace], t_skip: f64) -> Result<Self> {
        let first = traces.first().ok_or_else(|| Error::Precondition("nothing to evaluate".into()))?;
        for t in &traces[1..] {
            if t.dof != first.dof || t.time != first.time {
                return Err(Error::Precondition(format!(
                    "grid mismatch between {} and {}",
                    first.path.display(),
                    t.path.display()
                )));
            }
        }
        Ok(Self {
            t_skip,
            rows: traces
                .iter()
                .map(|t| RmseRow {
                    label: t.label.clone(),
                    path: t.path.clone(),
                    rmse: rmse_of(&t.time, &t.e, t.dof, t_skip),
                })
                .collect(),
        })
    }

    pub fn to_csv(&self) -> String {
        let n = self.rows.first().map(|r| r.rmse.len()).unwrap_or(0);
        let mut out = format!("# rmse over t >= {:?} s\n", self.t_skip);
        out.push_str("controller,file");
        for j in 1..=n {
            let _ = write!(out, ",rmse_{j}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.label, r.path.display());
            for v in &r.rmse {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(e: f64) -> String {
        let mut s = String::from("# controller = ct\nt,q_1,e_1\n");
        for k in 0..=20 {
            let _ = writeln!(s, "{:?},0.0,{e:?}", k as f64 * 0.1);
        }
        s
    }

    #[test]
    fn constant_error_rmse_is_exact() {
        let t = parse_trace(&trace(0.1), Path::new("a.csv")).unwrap();
        assert_eq!(t.label, "ct");
        let report = RmseReport::from_traces(&[t], DEFAULT_T_SKIP).unwrap();
        assert_eq!(report.rows[0].rmse, vec![0.1]);
        let zero = parse_trace(&trace(0.0), Path::new("b.csv")).unwrap();
        assert_eq!(RmseReport::from_traces(&[zero], 0.0).unwrap().rows[0].rmse, vec![0.0]);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let a = parse_trace(&trace(0.1), Path::new("a.csv")).unwrap();
        let mut b = a.clone();
        b.time[3] += 1e-3;
        assert!(matches!(RmseReport::from_traces(&[a, b], 1.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn malformed_traces() {
        assert!(parse_trace("t,q_1\n0.0,1.0\n", Path::new("x")).is_err());
        assert!(parse_trace("t,e_1\n0.0\n", Path::new("x")).is_err());
        assert!(parse_trace("t,e_1\n0.0,abc\n", Path::new("x")).is_err());
        let t = parse_trace("t,e_1,e_2\n0.0,1.0,2.0\n", Path::new("dir/run.csv")).unwrap();
        assert_eq!((t.dof, t.label.as_str()), (2, "run"));
    }
}
