//! Driving cycles of the preceding vehicle: CSV ingestion and seeded
//! synthetic profiles.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{HorizonGrid, HorizonPreview};

/// Preceding-vehicle speed and road slope on a uniform time grid starting at 0.
///
/// Speed is linear between samples (piecewise-constant acceleration); slope
/// is held over each sample interval.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingCycle {
    pub name: String,
    pub dt: f64,
    pub v_pv: Vec<f64>,
    pub slope: Vec<f64>,
    pos: Vec<f64>,
}

impl DrivingCycle {
    pub fn new(name: impl Into<String>, dt: f64, v_pv: Vec<f64>, slope: Vec<f64>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Cycle(format!("sample time must be > 0, got {dt}")));
        }
        if v_pv.len() < 2 || v_pv.len() != slope.len() {
            return Err(Error::Cycle(format!(
                "need at least 2 samples with matching slope column ({} speeds, {} slopes)",
                v_pv.len(),
                slope.len()
            )));
        }
        for (i, (&v, &s)) in v_pv.iter().zip(&slope).enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Cycle(format!("sample {i}: speed must be finite and >= 0, got {v}")));
            }
            if !(s.is_finite() && s.abs() < 0.5) {
                return Err(Error::Cycle(format!("sample {i}: slope {s} rad out of range")));
            }
        }
        let mut pos = Vec::with_capacity(v_pv.len());
        pos.push(0.0);
        for w in v_pv.windows(2) {
            pos.push(pos.last().unwrap() + 0.5 * (w[0] + w[1]) * dt);
        }
        Ok(Self { name: name.into(), dt, v_pv, slope, pos })
    }

    pub fn len(&self) -> usize {
        self.v_pv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_pv.is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.len() - 1) as f64 * self.dt
    }

    fn locate(&self, t: f64) -> Option<(usize, f64)> {
        if t < 0.0 {
            return Some((0, 0.0));
        }
        let i = (t / self.dt).floor() as usize;
        if i >= self.len() - 1 {
            None
        } else {
            Some((i, t - i as f64 * self.dt))
        }
    }

    /// Leader speed at `t`; constant past the end of the cycle.
    pub fn velocity(&self, t: f64) -> f64 {
        match self.locate(t) {
            Some((i, tau)) => self.v_pv[i] + (self.v_pv[i + 1] - self.v_pv[i]) * tau / self.dt,
            None => *self.v_pv.last().unwrap(),
        }
    }

    /// Leader position at `t` (0 at `t = 0`); constant-velocity extrapolation
    /// past the end of the cycle.
    pub fn position(&self, t: f64) -> f64 {
        match self.locate(t) {
            Some((i, tau)) => {
                let a = (self.v_pv[i + 1] - self.v_pv[i]) / self.dt;
                self.pos[i] + self.v_pv[i] * tau + 0.5 * a * tau * tau
            }
            None => {
                let n = self.len() - 1;
                self.pos[n] + self.v_pv[n] * (t - self.duration())
            }
        }
    }

    pub fn slope_at(&self, t: f64) -> f64 {
        let i = ((t.max(0.0) / self.dt + 1e-9).floor() as usize).min(self.len() - 1);
        self.slope[i]
    }

    /// Time average over `[t0, t1]` of the sample-held slope the plant sees.
    pub fn mean_slope(&self, t0: f64, t1: f64) -> f64 {
        let cell = |t: f64| (t.max(0.0) / self.dt + 1e-9).floor();
        let end = t1 - 1e-9 * self.dt;
        if end <= t0 || cell(t0) == cell(end) {
            return self.slope_at(t0);
        }
        let mut acc = 0.0;
        let mut a = t0;
        while a < end {
            let b = ((cell(a) + 1.0) * self.dt).min(t1);
            acc += self.slope_at(a) * (b - a);
            a = b;
        }
        acc / (t1 - t0)
    }

    /// Mean leader speed over `[t - window, t]`, using whatever history exists.
    pub fn trailing_mean_velocity(&self, t: f64, window: f64) -> f64 {
        let t0 = (t - window).max(0.0);
        if t - t0 <= 1e-12 {
            self.velocity(t)
        } else {
            (self.position(t) - self.position(t0)) / (t - t0)
        }
    }

    /// Perfect preview of the leader over a horizon starting at `t`; the
    /// speed reference at each step end is the leader's trailing two-second mean.
    pub fn preview(&self, t: f64, grid: &HorizonGrid) -> HorizonPreview {
        let sub = grid.substep_times();
        let mut slope = Vec::with_capacity(sub.len());
        let mut prev = 0.0;
        for &te in &sub {
            slope.push(self.mean_slope(t + prev, t + te));
            prev = te;
        }
        HorizonPreview {
            pv_pos: sub.iter().map(|&s| self.position(t + s)).collect(),
            pv_vel: sub.iter().map(|&s| self.velocity(t + s)).collect(),
            slope,
            r_v: grid.boundaries().iter().map(|&b| self.trailing_mean_velocity(t + b, 2.0)).collect(),
        }
    }

    /// The first `duration` seconds of the cycle.
    pub fn truncated(&self, duration: f64) -> Result<Self> {
        let n = ((duration / self.dt).floor() as usize + 1).min(self.len());
        Self::new(self.name.clone(), self.dt, self.v_pv[..n].to_vec(), self.slope[..n].to_vec())
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t_s", "v_pv_mps", "slope_rad"])?;
        for i in 0..self.len() {
            wr.serialize((i as f64 * self.dt, self.v_pv[i], self.slope[i]))?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct CycleRow {
    t_s: f64,
    v_pv_mps: f64,
    slope_rad: f64,
}

/// Reads a `t_s,v_pv_mps,slope_rad` CSV on a uniform grid.
pub fn load_cycle(path: impl AsRef<Path>) -> Result<DrivingCycle> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::Cycle(format!("cycle not found: {}", path.display())));
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_path(path)?;
    let headers = rd.headers()?.clone();
    for col in ["t_s", "v_pv_mps", "slope_rad"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Cycle(format!("{}: missing column '{col}'", path.display())));
        }
    }
    let mut t = Vec::new();
    let mut v = Vec::new();
    let mut s = Vec::new();
    for (i, row) in rd.deserialize::<CycleRow>().enumerate() {
        let row = row.map_err(|e| Error::Cycle(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        t.push(row.t_s);
        v.push(row.v_pv_mps);
        s.push(row.slope_rad);
    }
    if t.len() < 2 {
        return Err(Error::Cycle(format!("{}: need at least 2 rows", path.display())));
    }
    let dt = t[1] - t[0];
    for (i, w) in t.windows(2).enumerate() {
        if !((w[1] - w[0]) - dt).abs().le(&(1e-6 * dt.abs().max(1.0))) || !(w[1] > w[0]) {
            return Err(Error::Cycle(format!(
                "{}: non-uniform time grid at row {} ({} -> {})",
                path.display(),
                i + 2,
                w[0],
                w[1]
            )));
        }
    }
    DrivingCycle::new(name, dt, v, s).map_err(|e| match e {
        Error::Cycle(m) => Error::Cycle(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Character of a synthetic speed profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Urban,
    Highway,
    Aggressive,
    Smooth,
}

impl FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "urban" => Ok(Self::Urban),
            "highway" => Ok(Self::Highway),
            "aggressive" => Ok(Self::Aggressive),
            "smooth" => Ok(Self::Smooth),
            _ => Err(Error::InvalidInput(format!("unknown profile '{s}'"))),
        }
    }
}

impl fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Urban => "urban",
            Self::Highway => "highway",
            Self::Aggressive => "aggressive",
            Self::Smooth => "smooth",
        };
        f.write_str(s)
    }
}

/// Road grade overlay: large (±4 %) or small (±1 %) sinusoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlopeKind {
    L,
    S,
}

impl SlopeKind {
    pub fn amplitude(self) -> f64 {
        match self {
            Self::L => 0.04,
            Self::S => 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub profile: ProfileKind,
    pub duration: f64,
    pub slope: SlopeKind,
}

struct ProfileShape {
    v_lo: f64,
    v_hi: f64,
    accel: (f64, f64),
    decel: (f64, f64),
    cruise: (f64, f64),
    idle: (f64, f64),
    /// Probability that a cruise ends in a stop rather than a speed change.
    stop_odds: f64,
}

fn shape(kind: ProfileKind) -> ProfileShape {
    match kind {
        ProfileKind::Urban => ProfileShape {
            v_lo: 6.0,
            v_hi: 14.0,
            accel: (0.8, 1.4),
            decel: (0.8, 1.3),
            cruise: (8.0, 25.0),
            idle: (4.0, 12.0),
            stop_odds: 0.7,
        },
        ProfileKind::Highway => ProfileShape {
            v_lo: 22.0,
            v_hi: 32.0,
            accel: (0.5, 0.9),
            decel: (0.5, 0.9),
            cruise: (20.0, 50.0),
            idle: (3.0, 6.0),
            stop_odds: 0.0,
        },
        ProfileKind::Aggressive => ProfileShape {
            v_lo: 10.0,
            v_hi: 24.0,
            accel: (1.4, 1.8),
            decel: (1.2, 1.5),
            cruise: (4.0, 12.0),
            idle: (2.0, 6.0),
            stop_odds: 0.4,
        },
        ProfileKind::Smooth => ProfileShape {
            v_lo: 10.0,
            v_hi: 18.0,
            accel: (0.3, 0.6),
            decel: (0.3, 0.6),
            cruise: (15.0, 40.0),
            idle: (5.0, 10.0),
            stop_odds: 0.0,
        },
    }
}

enum Phase {
    Idle { until: f64 },
    Ramp { target: f64, rate: f64 },
    Cruise { until: f64 },
    Stop { rate: f64 },
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo { rng.random_range(lo..hi) } else { lo }
}

fn profile_speeds(kind: ProfileKind, n: usize, dt: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sh = shape(kind);
    let mut v = vec![0.0; n];
    let mut phase = Phase::Idle { until: uniform(rng, (1.0, 3.0)) };
    for k in 1..n {
        let t = (k - 1) as f64 * dt;
        let remaining = (n - 1 - (k - 1)) as f64 * dt;
        let cur = v[k - 1];
        // Reserve a comfortable stop before the end of the segment.
        if !matches!(phase, Phase::Stop { .. }) && cur > 0.0 && cur / remaining >= 0.9 * sh.decel.0 {
            phase = Phase::Stop { rate: cur / remaining };
        }
        loop {
            match phase {
                Phase::Idle { until } if t >= until || cur > 0.0 => {
                    let target = uniform(rng, (sh.v_lo, sh.v_hi));
                    phase = Phase::Ramp { target, rate: uniform(rng, sh.accel) };
                }
                Phase::Cruise { until } if t >= until => {
                    if rng.random_bool(sh.stop_odds) {
                        phase = Phase::Ramp { target: 0.0, rate: uniform(rng, sh.decel) };
                    } else {
                        let target = uniform(rng, (sh.v_lo, sh.v_hi));
                        let rate = if target > cur { uniform(rng, sh.accel) } else { uniform(rng, sh.decel) };
                        phase = Phase::Ramp { target, rate };
                    }
                }
                Phase::Ramp { target, .. } if (cur - target).abs() < 1e-9 => {
                    phase = if target == 0.0 {
                        Phase::Idle { until: t + uniform(rng, sh.idle) }
                    } else {
                        Phase::Cruise { until: t + uniform(rng, sh.cruise) }
                    };
                }
                _ => break,
            }
        }
        v[k] = match phase {
            Phase::Idle { .. } => 0.0,
            Phase::Cruise { .. } => cur,
            Phase::Ramp { target, rate } => {
                if target > cur { (cur + rate * dt).min(target) } else { (cur - rate * dt).max(target) }
            }
            Phase::Stop { rate } => (cur - rate * dt).max(0.0),
        };
    }
    v[n - 1] = 0.0;
    v
}

/// Concatenates seeded synthetic segments sampled at `dt`. Each segment
/// starts and ends at rest.
pub fn synth_cycle(name: impl Into<String>, segments: &[Segment], dt: f64, seed: u64) -> Result<DrivingCycle> {
    if segments.is_empty() {
        return Err(Error::Cycle("no segments".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Vec::new();
    let mut slope = Vec::new();
    for seg in segments {
        if !(seg.duration.is_finite() && seg.duration > 0.0) {
            return Err(Error::Cycle(format!("segment duration must be > 0, got {}", seg.duration)));
        }
        let n = ((seg.duration / dt).round() as usize).max(2);
        v.extend(profile_speeds(seg.profile, n, dt, &mut rng));
        let period = uniform(&mut rng, (120.0, 200.0));
        let phase = uniform(&mut rng, (0.0, std::f64::consts::TAU));
        let amp = seg.slope.amplitude();
        slope.extend((0..n).map(|i| amp * (std::f64::consts::TAU * i as f64 * dt / period + phase).sin()));
    }
    DrivingCycle::new(name, dt, v, slope)
}

/// Seed of the bundled desk composite.
pub const DESK_SEED: u64 = 2024;

/// The bundled 2000 s composite: urban, aggressive, highway and smooth
/// segments of 250 s, each under a large and a small grade overlay.
pub fn desk_composite() -> DrivingCycle {
    desk_composite_with_seed(DESK_SEED)
}

/// The desk composite's segment layout with other random draws.
pub fn desk_composite_with_seed(seed: u64) -> DrivingCycle {
    let mut segs = Vec::new();
    for profile in [ProfileKind::Urban, ProfileKind::Aggressive, ProfileKind::Highway, ProfileKind::Smooth] {
        for slope in [SlopeKind::L, SlopeKind::S] {
            segs.push(Segment { profile, duration: 250.0, slope });
        }
    }
    let name = if seed == DESK_SEED { "desk-composite-2000s".to_string() } else { format!("desk-composite-2000s-seed{seed}") };
    synth_cycle(name, &segs, 1.0, seed).expect("bundled composite is valid")
}
