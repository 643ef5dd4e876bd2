//! Per-subdomain sample tables and their text format.
//!
//! One header line of whitespace-separated column names, then one row per
//! sample. Columns: `xi_{i}_{k}`, `tau_{i}_{k}`, `y_{i}`, `h_{i}_{j}_{k}` for
//! each receiving neighbour `j`, and `w_{i}` once weights are assigned.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use super::PipelineError;
use crate::nn::Mat;

#[derive(Clone, Debug, PartialEq)]
pub struct SampleTable {
    pub sub: usize,
    pub xi: Mat,
    pub tau: Mat,
    pub y: Vec<f64>,
    /// Receiving subdomain and exported coefficients, per outgoing edge.
    pub exports: Vec<(usize, Mat)>,
    pub weights: Option<Vec<f64>>,
}

impl SampleTable {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// `[ξ_i, τ_i]` row by row, the surrogate input.
    pub fn inputs(&self) -> Mat {
        Mat::hcat(&[&self.xi, &self.tau])
    }

    pub fn column_names(&self) -> Vec<String> {
        let i = self.sub;
        let mut names: Vec<String> = (0..self.xi.cols()).map(|k| format!("xi_{i}_{k}")).collect();
        names.extend((0..self.tau.cols()).map(|k| format!("tau_{i}_{k}")));
        names.push(format!("y_{i}"));
        for (j, h) in &self.exports {
            names.extend((0..h.cols()).map(|k| format!("h_{i}_{j}_{k}")));
        }
        if self.weights.is_some() {
            names.push(format!("w_{i}"));
        }
        names
    }

    fn validate(&self) -> Result<(), PipelineError> {
        let n = self.len();
        let ok = self.xi.rows() == n && self.tau.rows() == n && self.exports.iter().all(|(_, h)| h.rows() == n);
        if !ok || self.weights.as_ref().is_some_and(|w| w.len() != n) {
            return Err(PipelineError::Table(format!("table {} has columns of different lengths", self.sub)));
        }
        if let Some(w) = &self.weights {
            if let Some(s) = w.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(PipelineError::Table(format!("weight of row {s} is {}", w[s])));
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), PipelineError> {
        self.validate()?;
        writeln!(w, "{}", self.column_names().join(" "))?;
        let mut line = String::new();
        for r in 0..self.len() {
            line.clear();
            let exports = self.exports.iter().flat_map(|(_, h)| h.row(r).iter());
            let weight = self.weights.as_ref().map(|w| w[r]);
            let values =
                self.xi.row(r).iter().chain(self.tau.row(r)).chain([&self.y[r]]).chain(exports).chain(weight.as_ref());
            for (k, v) in values.enumerate() {
                if k > 0 {
                    line.push(' ');
                }
                // Shortest representation that round-trips exactly.
                write!(line, "{v:?}").expect("writing to a String");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, PipelineError> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| PipelineError::Table("empty table file".into()))??;
        let names: Vec<&str> = header.split_whitespace().collect();
        let bad = |m: String| PipelineError::Table(m);
        let y_name = names.iter().find(|n| n.starts_with("y_")).ok_or_else(|| bad("no output column".into()))?;
        let sub: usize = y_name[2..].parse().map_err(|_| bad(format!("bad column name {y_name}")))?;
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != names.len() {
                return Err(bad(format!("row {} has {} values for {} columns", ln + 1, vals.len(), names.len())));
            }
            for (c, v) in cols.iter_mut().zip(vals) {
                c.push(v.parse().map_err(|_| bad(format!("row {}: cannot parse {v:?}", ln + 1)))?);
            }
        }
        let n = cols.first().map_or(0, Vec::len);
        let gather = |idx: &[usize]| {
            Mat::from_vec(
                n,
                idx.len(),
                (0..n).flat_map(|r| idx.iter().map(move |&c| (r, c))).map(|(r, c)| cols[c][r]).collect(),
            )
        };
        let pick =
            |prefix: &str| -> Vec<usize> { (0..names.len()).filter(|&c| names[c].starts_with(prefix)).collect() };
        let xi = gather(&pick(&format!("xi_{sub}_")));
        let tau = gather(&pick(&format!("tau_{sub}_")));
        let y_col = names.iter().position(|n| n == y_name).expect("found above");
        let mut receivers: Vec<usize> = Vec::new();
        for n in &names {
            if let Some(rest) = n.strip_prefix(&format!("h_{sub}_")) {
                let j: usize = rest
                    .split('_')
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(format!("bad column name {n}")))?;
                if !receivers.contains(&j) {
                    receivers.push(j);
                }
            }
        }
        let exports = receivers.into_iter().map(|j| (j, gather(&pick(&format!("h_{sub}_{j}_"))))).collect();
        let weights = names.iter().position(|n| *n == format!("w_{sub}")).map(|c| cols[c].clone());
        let t = Self { sub, xi, tau, y: cols[y_col].clone(), exports, weights };
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(f)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let t = SampleTable {
            sub: 1,
            xi: Mat::from_rows(&[[0.1, -0.3], [1.0 / 3.0, 2e-17]]),
            tau: Mat::from_rows(&[[5.5], [-1e300]]),
            y: vec![0.25, std::f64::consts::PI],
            exports: vec![(0, Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]])), (2, Mat::from_rows(&[[7.0], [8.0]]))],
            weights: Some(vec![0.5, 1e12]),
        };
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let header = std::str::from_utf8(&buf).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header, "xi_1_0 xi_1_1 tau_1_0 y_1 h_1_0_0 h_1_0_1 h_1_2_0 w_1");
        assert_eq!(SampleTable::read_from(&buf[..]).unwrap(), t);
    }

    #[test]
    fn negative_weight_is_rejected() {
        let t = SampleTable {
            sub: 0,
            xi: Mat::zeros(1, 1),
            tau: Mat::zeros(1, 1),
            y: vec![0.0],
            exports: vec![],
            weights: Some(vec![-1.0]),
        };
        assert!(t.write_to(Vec::new()).is_err());
    }
}
