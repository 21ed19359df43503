//! Time series produced by the solvers and the simulator, plus their CSV form.
//!
//! The CSV format is a block of `# key=value` metadata lines, a header line
//! `t,risk,gamma,d2,b11,b12,b22`, then one row per record. Floats are written
//! with Rust's shortest round-trip formatting, so reading a file back yields
//! bit-identical values.

use std::fmt::Write as _;
use std::io;

use crate::riskmodel::CovB;
use crate::{Error, Result};

pub const CSV_COLUMNS: [&str; 7] = ["t", "risk", "gamma", "d2", "b11", "b12", "b22"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub t: f64,
    pub risk: f64,
    pub gamma: f64,
    pub d2: f64,
    pub b: CovB,
}

impl Record {
    pub fn get(&self, field: Field) -> f64 {
        match field {
            Field::Risk => self.risk,
            Field::Gamma => self.gamma,
            Field::D2 => self.d2,
            Field::B11 => self.b.b11,
            Field::B12 => self.b.b12,
            Field::B22 => self.b.b22,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Risk,
    Gamma,
    D2,
    B11,
    B12,
    B22,
}

impl Field {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "risk" => Field::Risk,
            "gamma" => Field::Gamma,
            "d2" => Field::D2,
            "b11" => Field::B11,
            "b12" => Field::B12,
            "b22" => Field::B22,
            other => return Err(Error::Parse(format!("unknown field `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub meta: Vec<(String, String)>,
    pub records: Vec<Record>,
    /// Time at which an idealized rule saw the risk underflow, if it did.
    pub converged_at: Option<f64>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, r: Record) {
        debug_assert!(self.records.last().map_or(true, |p| p.t < r.t), "times must increase");
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> &Record {
        self.records.first().expect("trajectory is empty")
    }

    pub fn last(&self) -> &Record {
        self.records.last().expect("trajectory is empty")
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn series(&self, field: Field) -> Vec<f64> {
        self.records.iter().map(|r| r.get(field)).collect()
    }

    /// Nearest record to time `t`.
    pub fn at(&self, t: f64) -> &Record {
        let i = self.records.partition_point(|r| r.t < t);
        if i == 0 {
            return self.first();
        }
        if i == self.records.len() {
            return self.last();
        }
        let (a, b) = (&self.records[i - 1], &self.records[i]);
        if t - a.t <= b.t - t {
            a
        } else {
            b
        }
    }

    /// Linear interpolation of `field` at `t`, clamped to the recorded range.
    pub fn interpolate(&self, field: Field, t: f64) -> f64 {
        let i = self.records.partition_point(|r| r.t < t);
        if i == 0 {
            return self.first().get(field);
        }
        if i == self.records.len() {
            return self.last().get(field);
        }
        let (a, b) = (&self.records[i - 1], &self.records[i]);
        let s = (t - a.t) / (b.t - a.t);
        a.get(field) + s * (b.get(field) - a.get(field))
    }

    /// `sup_t |self(t) - reference(t)|` over this trajectory's times, with the
    /// reference interpolated linearly onto them.
    pub fn sup_gap(&self, reference: &Trajectory, field: Field) -> f64 {
        self.records
            .iter()
            .map(|r| (r.get(field) - reference.interpolate(field, r.t)).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        if let Some(t) = self.converged_at {
            let _ = writeln!(out, "# converged_at={t}");
        }
        out.push_str(&CSV_COLUMNS.join(","));
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.t, r.risk, r.gamma, r.d2, r.b.b11, r.b.b12, r.b.b22
            );
        }
        out
    }

    pub fn write_csv(&self, mut w: impl io::Write) -> io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut traj = Trajectory::new();
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let (k, v) = meta
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("line {}: metadata without `=`", lineno + 1)))?;
                if k == "converged_at" {
                    traj.converged_at = Some(parse_f64(v, lineno)?);
                } else {
                    traj.meta.push((k.to_string(), v.to_string()));
                }
                continue;
            }
            if !header_seen {
                let cols: Vec<&str> = line.split(',').collect();
                if cols.len() < CSV_COLUMNS.len() || cols[..CSV_COLUMNS.len()] != CSV_COLUMNS {
                    return Err(Error::Parse(format!("line {}: expected header {}", lineno + 1, CSV_COLUMNS.join(","))));
                }
                header_seen = true;
                continue;
            }
            let vals = line
                .split(',')
                .take(CSV_COLUMNS.len())
                .map(|v| parse_f64(v, lineno))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != CSV_COLUMNS.len() {
                return Err(Error::Parse(format!("line {}: expected {} columns", lineno + 1, CSV_COLUMNS.len())));
            }
            traj.records.push(Record {
                t: vals[0],
                risk: vals[1],
                gamma: vals[2],
                d2: vals[3],
                b: CovB::new(vals[4], vals[5], vals[6]),
            });
        }
        Ok(traj)
    }
}

fn parse_f64(v: &str, lineno: usize) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {}: `{v}` is not a number", lineno + 1)))
}
