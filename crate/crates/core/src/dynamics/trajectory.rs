use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{format_sig17, Vector};

/// States sampled at `t0 + k·h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    t0: f64,
    h: f64,
    states: Vec<Vector>,
}

impl Trajectory {
    pub fn new(t0: f64, h: f64, states: Vec<Vector>) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidArgument(format!("trajectory step must be positive, got {h}")));
        }
        if let Some(first) = states.first() {
            let d = first.dim();
            for (k, s) in states.iter().enumerate() {
                if s.dim() != d {
                    return Err(Error::dim("trajectory state", d, s.dim()));
                }
                if !s.is_finite() {
                    return Err(Error::NonFinite(format!("trajectory state {k}")));
                }
            }
        }
        Ok(Trajectory { t0, h, states })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vector::dim)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn states(&self) -> &[Vector] {
        &self.states
    }

    pub fn into_states(self) -> Vec<Vector> {
        self.states
    }

    /// States `start..end` as a trajectory with shifted origin.
    pub fn segment(&self, start: usize, end: usize) -> Result<Trajectory> {
        if start > end || end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "segment {start}..{end} out of range for {} states",
                self.len()
            )));
        }
        Ok(Trajectory {
            t0: self.time(start),
            h: self.h,
            states: self.states[start..end].to_vec(),
        })
    }

    /// Writes `t,x0,...,x{d-1}` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..d).map(|j| format!("x{j}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        let mut line = String::new();
        for (k, s) in self.states.iter().enumerate() {
            line.clear();
            line.push_str(&format_sig17(self.time(k)));
            for x in s.iter() {
                line.push(',');
                line.push_str(&format_sig17(*x));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Parses the CSV layout written by [`Trajectory::write_csv`]. The step is
    /// recovered from the time column.
    pub fn read_csv<R: Read>(r: R) -> Result<Trajectory> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Malformed("empty trajectory file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(Error::Malformed(format!("unexpected header '{header}'")));
        }
        for (j, c) in cols[1..].iter().enumerate() {
            if *c != format!("x{j}") {
                return Err(Error::Malformed(format!("unexpected column name '{c}'")));
            }
        }
        let d = cols.len() - 1;
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (ln, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .trim()
                .split(',')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Malformed(format!("row {}: {e}", ln + 1)))?;
            if vals.len() != d + 1 {
                return Err(Error::Malformed(format!(
                    "row {} has {} fields, expected {}",
                    ln + 1,
                    vals.len(),
                    d + 1
                )));
            }
            times.push(vals[0]);
            states.push(Vector::from(&vals[1..]));
        }
        if states.is_empty() {
            return Err(Error::Malformed("trajectory file has no rows".into()));
        }
        let t0 = times[0];
        let h = if times.len() > 1 {
            (times[times.len() - 1] - t0) / (times.len() - 1) as f64
        } else {
            1.0
        };
        Trajectory::new(t0, h, states)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Trajectory> {
        Trajectory::read_csv(File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let states: Vec<Vector> = (0..5)
            .map(|k| Vector::from([0.1 * k as f64, 1.0 / 3.0, -2e-17 * k as f64]))
            .collect();
        let tr = Trajectory::new(0.0, 0.01, states).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x0,x1,x2\n"));
        let back = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.states(), tr.states());
        assert!((back.h() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(Trajectory::read_csv("".as_bytes()).is_err());
        assert!(Trajectory::read_csv("t,y0\n0,1\n".as_bytes()).is_err());
        assert!(Trajectory::read_csv("t,x0\n0,1,2\n".as_bytes()).is_err());
        assert!(Trajectory::read_csv("t,x0\n0,abc\n".as_bytes()).is_err());
    }

    #[test]
    fn rejects_mixed_dims() {
        let r = Trajectory::new(0.0, 1.0, vec![Vector::zeros(2), Vector::zeros(3)]);
        assert!(r.is_err());
    }
}
