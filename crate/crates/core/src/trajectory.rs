//! Time-indexed sequences of fields: solver output and control inputs.
//!
//! On disk both use one JSON header line followed by the binary field
//! records, in time order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{same_grid, Field};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampEvent {
    pub step: usize,
    pub time: f64,
    pub index: usize,
    /// Amount removed (positive) or added (negative) at this point.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub max_abs: f64,
    pub clamp_count: usize,
    /// Sup norms of the explicit flux contributions.
    pub transport: f64,
    pub correction: f64,
    pub control: f64,
    pub noise: f64,
    /// `dt` over the explicit stability limit at this state.
    pub cfl_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    n: usize,
    times: Vec<f64>,
    #[serde(default)]
    events: Vec<ClampEvent>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    fields: Vec<Field>,
    pub events: Vec<ClampEvent>,
    /// Parameter echo, seed and stride.
    pub meta: serde_json::Value,
    /// Largest CFL ratio seen over the run.
    pub max_cfl: f64,
}

/// Trapezoid weights for a sorted time grid.
pub fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let m = times.len();
    let mut w = vec![0.0; m];
    for i in 1..m {
        let h = times[i] - times[i - 1];
        w[i - 1] += 0.5 * h;
        w[i] += 0.5 * h;
    }
    w
}

fn same_times(a: &[f64], b: &[f64]) -> Result<()> {
    let scale = a.last().copied().unwrap_or(1.0).abs().max(1.0);
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-9 * scale) {
        return Err(Error::Parameter(format!(
            "time grids differ ({} vs {} snapshots)",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

impl Trajectory {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            times: Vec::new(),
            fields: Vec::new(),
            events: Vec::new(),
            meta,
            max_cfl: 0.0,
        }
    }

    pub fn from_parts(times: Vec<f64>, fields: Vec<Field>) -> Result<Self> {
        let mut t = Self::new(serde_json::Value::Null);
        for (time, f) in times.into_iter().zip(fields) {
            t.push(time, f)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, time: f64, field: Field) -> Result<()> {
        if let Some(last) = self.fields.last() {
            same_grid(last, &field)?;
            if !(time > *self.times.last().unwrap()) {
                return Err(Error::Parameter(format!("snapshot time {time} not increasing")));
            }
        }
        self.times.push(time);
        self.fields.push(field);
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn n(&self) -> usize {
        self.fields.first().map_or(0, Field::n)
    }

    pub fn first(&self) -> Option<&Field> {
        self.fields.first()
    }

    pub fn last(&self) -> Option<&Field> {
        self.fields.last()
    }

    /// `max_t |mass(t) - mass(0)|`.
    pub fn mass_drift(&self) -> f64 {
        let Some(f0) = self.fields.first() else {
            return 0.0;
        };
        let m0 = f0.mean();
        self.fields.iter().map(|f| (f.mean() - m0).abs()).fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.fields.iter().map(Field::sup_norm).fold(0.0, f64::max)
    }

    /// `||u||^2_{L^2([0,T]; L^2)}` by trapezoid in time.
    pub fn l2l2_norm_sq(&self) -> f64 {
        trapezoid_weights(&self.times)
            .iter()
            .zip(&self.fields)
            .map(|(w, f)| w * f.l2_norm_sq())
            .sum()
    }

    pub fn l2l2_distance(&self, other: &Trajectory) -> Result<f64> {
        same_times(&self.times, &other.times)?;
        let w = trapezoid_weights(&self.times);
        let mut acc = 0.0;
        for ((wi, a), b) in w.iter().zip(&self.fields).zip(&other.fields) {
            same_grid(a, b)?;
            acc += wi * (a - b).l2_norm_sq();
        }
        Ok(acc.sqrt())
    }

    /// Pointwise sum, used to reassemble `w + z`.
    pub fn add(&self, other: &Trajectory) -> Result<Trajectory> {
        same_times(&self.times, &other.times)?;
        let mut out = Trajectory::new(self.meta.clone());
        for ((t, a), b) in self.times.iter().zip(&self.fields).zip(&other.fields) {
            same_grid(a, b)?;
            out.push(*t, a + b)?;
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        write_records(
            &mut w,
            "trajectory",
            &self.times,
            &self.fields,
            &self.events,
            &self.meta,
        )
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let (h, fields) = read_records(r, "trajectory")?;
        let mut t = Trajectory::from_parts(h.times, fields)?;
        t.events = h.events;
        t.meta = h.meta;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn write_records<W: Write>(
    w: &mut W,
    kind: &str,
    times: &[f64],
    fields: &[Field],
    events: &[ClampEvent],
    meta: &serde_json::Value,
) -> Result<()> {
    let header = Header {
        kind: kind.to_string(),
        n: fields.first().map_or(0, Field::n),
        times: times.to_vec(),
        events: events.to_vec(),
        meta: meta.clone(),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for f in fields {
        f.write_binary(&mut *w)?;
    }
    Ok(())
}

fn read_records<R: Read>(r: R, kind: &str) -> Result<(Header, Vec<Field>)> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let h: Header = serde_json::from_str(line.trim_end())?;
    if h.kind != kind {
        return Err(Error::Format(format!("expected {kind} file, found {}", h.kind)));
    }
    let mut fields = Vec::with_capacity(h.times.len());
    for _ in 0..h.times.len() {
        let f = Field::read_binary(&mut r)?;
        if f.n() != h.n {
            return Err(Error::Format(format!(
                "record with {} points, header says {}",
                f.n(),
                h.n
            )));
        }
        fields.push(f);
    }
    Ok((h, fields))
}

/// Deterministic forcing `g(t, x)` given by slices at increasing times.
///
/// Between slices the control is linearly interpolated; outside the time
/// range it is held constant.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    times: Vec<f64>,
    slices: Vec<Field>,
}

impl ControlField {
    pub fn new(times: Vec<f64>, slices: Vec<Field>) -> Result<Self> {
        if times.is_empty() || times.len() != slices.len() {
            return Err(Error::Parameter(
                "control needs matching non-empty times and slices".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("control times must increase".into()));
        }
        for s in &slices[1..] {
            same_grid(&slices[0], s)?;
        }
        Ok(Self { times, slices })
    }

    /// Samples `g(t, x)` at `count + 1` equally spaced times on `[0, t_final]`.
    pub fn from_fn(n: usize, t_final: f64, count: usize, g: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let count = count.max(1);
        let times: Vec<f64> = (0..=count).map(|i| t_final * i as f64 / count as f64).collect();
        let slices = times
            .iter()
            .map(|&t| Field::from_fn(n, |x| g(t, x)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(times, slices)
    }

    pub fn zero(n: usize, t_final: f64) -> Result<Self> {
        Self::new(
            vec![0.0, t_final.max(f64::MIN_POSITIVE)],
            vec![Field::zeros(n)?, Field::zeros(n)?],
        )
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slices(&self) -> &[Field] {
        &self.slices
    }

    pub fn n(&self) -> usize {
        self.slices[0].n()
    }

    /// Writes `g(t, .)` into `out`.
    pub fn sample_into(&self, t: f64, out: &mut [f64]) {
        let ts = &self.times;
        if t <= ts[0] || ts.len() == 1 {
            out.copy_from_slice(self.slices[0].values());
            return;
        }
        if t >= *ts.last().unwrap() {
            out.copy_from_slice(self.slices.last().unwrap().values());
            return;
        }
        let i = ts.partition_point(|&s| s <= t) - 1;
        let th = (t - ts[i]) / (ts[i + 1] - ts[i]);
        let (a, b) = (self.slices[i].values(), self.slices[i + 1].values());
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o = (1.0 - th) * x + th * y;
        }
    }

    pub fn at(&self, t: f64) -> Field {
        let mut v = vec![0.0; self.n()];
        self.sample_into(t, &mut v);
        Field::from_raw(v)
    }

    /// `||g||^2_{L^2 L^2}` by trapezoid over the slices.
    pub fn l2l2_norm_sq(&self) -> f64 {
        trapezoid_weights(&self.times)
            .iter()
            .zip(&self.slices)
            .map(|(w, f)| w * f.l2_norm_sq())
            .sum()
    }

    /// Removes the spatial mean of every slice; returns the largest mean removed.
    pub fn project_mean_zero(&mut self) -> f64 {
        let mut worst = 0.0_f64;
        for s in &mut self.slices {
            let m = s.mean();
            worst = worst.max(m.abs());
            if m != 0.0 {
                *s = Field::from_raw(s.values().iter().map(|v| v - m).collect());
            }
        }
        worst
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        write_records(
            &mut w,
            "control",
            &self.times,
            &self.slices,
            &[],
            &serde_json::Value::Null,
        )
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let (h, slices) = read_records(r, "control")?;
        Self::new(h.times, slices)
    }
}
