//! Text formats: the training-set CSV (`x_1..x_d,y_1..y_n`) and the
//! hyperparameter key-value file (`lambda_i`, `sigma_f_i`, `sigma_n_i`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use super::{Hyperparameters, TrainingSet};
use crate::error::{Error, Result};

impl TrainingSet {
    /// CSV text. `comments` are written first, each prefixed with `# `.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        let header: Vec<String> = (1..=self.input_dim())
            .map(|i| format!("x_{i}"))
            .chain((1..=self.output_dim()).map(|i| format!("y_{i}")))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for p in 0..self.len() {
            let row: Vec<String> = self
                .input(p)
                .iter()
                .chain(self.outputs().row(p).iter())
                .map(|v| format!("{v:?}"))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::parse(origin, "missing header row"))?;
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        let d = names.iter().take_while(|n| n.starts_with("x_")).count();
        let n = names.len() - d;
        for (i, name) in names.iter().enumerate() {
            let expected = if i < d { format!("x_{}", i + 1) } else { format!("y_{}", i - d + 1) };
            if *name != expected {
                return Err(Error::parse(origin, format!("unexpected column '{name}', wanted '{expected}'")));
            }
        }
        if d == 0 || n == 0 {
            return Err(Error::parse(origin, "need at least one x_ and one y_ column"));
        }
        let mut pairs = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(origin, format!("row {}: {e}", lineno + 1)))?;
            if vals.len() != d + n {
                return Err(Error::parse(origin, format!("row {} has {} fields, expected {}", lineno + 1, vals.len(), d + n)));
            }
            pairs.push((vals[..d].to_vec(), vals[d..].to_vec()));
        }
        if pairs.is_empty() {
            return Ok(TrainingSet::empty(d, n));
        }
        let m = pairs.len();
        let inputs = DMatrix::from_fn(d, m, |r, c| pairs[c].0[r]);
        let outputs = DMatrix::from_fn(m, n, |r, c| pairs[r].1[c]);
        TrainingSet::new(inputs, outputs)
    }

    pub fn write_csv(&self, path: &Path, comments: &[String]) -> Result<()> {
        std::fs::write(path, self.to_csv(comments)).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

/// `key = value` lines, one triple per output, 1-based indices.
pub fn hyperparameters_to_string(set: &[Hyperparameters], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for (i, phi) in set.iter().enumerate() {
        let i = i + 1;
        let _ = writeln!(out, "lambda_{i} = {:?}", phi.length_scale);
        let _ = writeln!(out, "sigma_f_{i} = {:?}", phi.signal_std());
        let _ = writeln!(out, "sigma_n_{i} = {:?}", phi.noise_std());
    }
    out
}

pub fn hyperparameters_from_str(text: &str, origin: &Path) -> Result<Vec<Hyperparameters>> {
    let mut values: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(origin, format!("line {}: expected key = value", lineno + 1)))?;
        let key = key.trim();
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|e| Error::parse(origin, format!("line {}: {e}", lineno + 1)))?;
        let (slot, index) = ["lambda_", "sigma_f_", "sigma_n_"]
            .iter()
            .enumerate()
            .find_map(|(slot, prefix)| key.strip_prefix(prefix).map(|rest| (slot, rest)))
            .ok_or_else(|| Error::parse(origin, format!("unknown key '{key}'")))?;
        let index: usize = index
            .parse()
            .ok()
            .filter(|&i| i >= 1)
            .ok_or_else(|| Error::parse(origin, format!("bad output index in '{key}'")))?;
        if values.insert((index, slot), value).is_some() {
            return Err(Error::parse(origin, format!("duplicate key '{key}'")));
        }
    }
    let count = values.keys().map(|(i, _)| *i).max().unwrap_or(0);
    (1..=count)
        .map(|i| {
            let get = |slot: usize, name: &str| {
                values
                    .get(&(i, slot))
                    .copied()
                    .ok_or_else(|| Error::parse(origin, format!("missing {name}_{i}")))
            };
            Hyperparameters::from_std(get(0, "lambda")?, get(1, "sigma_f")?, get(2, "sigma_n")?)
        })
        .collect()
}

pub fn read_hyperparameters(path: &Path) -> Result<Vec<Hyperparameters>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    hyperparameters_from_str(&text, path)
}

pub fn write_hyperparameters(path: &Path, set: &[Hyperparameters], comments: &[String]) -> Result<()> {
    std::fs::write(path, hyperparameters_to_string(set, comments)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn training_csv_round_trips(vals in prop::collection::vec(-1e6f64..1e6, 0..40)) {
            let m = vals.len() / 4;
            let pairs: Vec<_> = (0..m).map(|i| (vals[4*i..4*i+3].to_vec(), vec![vals[4*i+3]])).collect();
            let set = TrainingSet::from_pairs(3, 1, &pairs).unwrap();
            let back = TrainingSet::from_csv(&set.to_csv(&["note".into()]), Path::new("mem")).unwrap();
            prop_assert_eq!(back, set);
        }

        #[test]
        fn hyperparameters_round_trip(l in 1e-3f64..1e3, sf in 0f64..1e2, sn in 1e-6f64..1e1) {
            let phi = Hyperparameters::from_std(l, sf, sn).unwrap();
            let back = hyperparameters_from_str(&hyperparameters_to_string(&[phi, phi], &[]), Path::new("mem")).unwrap();
            prop_assert_eq!(back.len(), 2);
            let rel = |a: f64, b: f64| if a == 0.0 { b.abs() } else { ((a - b) / a).abs() };
            prop_assert!(rel(phi.length_scale, back[0].length_scale) <= 1e-15);
            prop_assert!(rel(phi.signal_variance, back[1].signal_variance) <= 1e-15);
            prop_assert!(rel(phi.noise_variance, back[1].noise_variance) <= 1e-15);
        }
    }

    #[test]
    fn rejects_bad_files() {
        let p = Path::new("mem");
        assert!(TrainingSet::from_csv("x_1,z_1\n1,2\n", p).is_err());
        assert!(TrainingSet::from_csv("x_1,y_1\n1\n", p).is_err());
        assert!(TrainingSet::from_csv("", p).is_err());
        assert!(hyperparameters_from_str("lambda_1 = 1\nsigma_f_1 = 1\n", p).is_err());
        assert!(hyperparameters_from_str("gamma_1 = 1\n", p).is_err());
        let empty = TrainingSet::from_csv("# hdr\nx_1,x_2,y_1\n", p).unwrap();
        assert!(empty.is_empty());
        assert_eq!((empty.input_dim(), empty.output_dim()), (2, 1));
    }
}
