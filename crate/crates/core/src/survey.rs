//! Airborne scan simulation: flight planning, pulse scheduling and ray
//! tracing through a [`VoxelGrid`].
//!
//! The scanner is a rotating line scanner. Each scan line sweeps
//! `round(f / line_rate)` pulses uniformly over `[-fov, +fov)` in the plane
//! perpendicular to the flight direction; pulse `n/2` points straight down.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud_io::{LidarPoint, PointCloud, Provenance};
use crate::error::{Error, Result};
use crate::geom::{snap_floor, Rect, Vec3};
use crate::rng::{purpose, Stream};
use crate::voxel::VoxelGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScannerConfig {
    /// Hz.
    pub pulse_frequency: f64,
    /// Lines per second.
    pub scan_line_rate: f64,
    /// Degrees off nadir.
    pub fov_half_angle: f64,
    pub max_returns: u32,
    /// Meters from the pulse origin.
    pub max_range: f64,
}

impl Default for ScannerConfig {
    fn default() -> Self {
        ScannerConfig {
            pulse_frequency: 100_000.0,
            scan_line_rate: 100.0,
            fov_half_angle: 60.0,
            max_returns: 15,
            max_range: 1000.0,
        }
    }
}

impl ScannerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.pulse_frequency > 0.0) {
            return bad(format!("pulse_frequency must be > 0, got {}", self.pulse_frequency));
        }
        if !(self.scan_line_rate > 0.0) {
            return bad(format!("scan_line_rate must be > 0, got {}", self.scan_line_rate));
        }
        if !(self.fov_half_angle > 0.0 && self.fov_half_angle < 90.0) {
            return bad(format!("fov_half_angle must be in (0, 90), got {}", self.fov_half_angle));
        }
        if self.max_returns == 0 || self.max_returns > u8::MAX as u32 {
            return bad(format!("max_returns must be in 1..=255, got {}", self.max_returns));
        }
        if !(self.max_range > 0.0) {
            return bad(format!("max_range must be > 0, got {}", self.max_range));
        }
        if self.pulses_per_line() == 0 {
            return bad("pulse_frequency / scan_line_rate rounds to zero pulses per line".into());
        }
        Ok(())
    }

    pub fn pulses_per_line(&self) -> u64 {
        (self.pulse_frequency / self.scan_line_rate).round() as u64
    }

    /// Scan angle of pulse `p` within a line, radians.
    pub fn scan_angle(&self, p: u64) -> f64 {
        let fov = self.fov_half_angle.to_radians();
        -fov + 2.0 * fov * p as f64 / self.pulses_per_line() as f64
    }

    /// Ground swath width at `altitude` over flat terrain.
    pub fn swath_width(&self, altitude: f64) -> f64 {
        2.0 * altitude * self.fov_half_angle.to_radians().tan()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlightPattern {
    Parallel,
    #[default]
    CrissCross,
}

impl fmt::Display for FlightPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlightPattern::Parallel => "parallel",
            FlightPattern::CrissCross => "criss_cross",
        })
    }
}

impl FromStr for FlightPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "parallel" => Ok(FlightPattern::Parallel),
            "criss_cross" | "crisscross" => Ok(FlightPattern::CrissCross),
            _ => Err(Error::Config(format!("unknown flight pattern '{s}' (parallel|criss_cross)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub start: [f64; 2],
    pub end: [f64; 2],
    /// Meters above the z = 0 datum.
    pub altitude: f64,
    /// m/s.
    pub speed: f64,
    /// Survey time at which the leg begins.
    pub start_time: f64,
}

impl Leg {
    pub fn length(&self) -> f64 {
        (self.end[0] - self.start[0]).hypot(self.end[1] - self.start[1])
    }

    pub fn duration(&self) -> f64 {
        self.length() / self.speed
    }

    /// Unit flight direction in xy.
    pub fn direction(&self) -> [f64; 2] {
        let l = self.length();
        [(self.end[0] - self.start[0]) / l, (self.end[1] - self.start[1]) / l]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlightPlan {
    pub extent: Rect,
    pub pattern: FlightPattern,
    pub spacing: f64,
    pub legs: Vec<Leg>,
}

impl FlightPlan {
    pub fn duration(&self) -> f64 {
        self.legs.last().map_or(0.0, |l| l.start_time + l.duration())
    }

    pub fn total_length(&self) -> f64 {
        self.legs.iter().map(Leg::length).sum()
    }
}

/// Cross-axis leg offsets: 0, s, 2s, ... plus the far edge when the width
/// is not a multiple of `s`.
fn leg_offsets(width: f64, spacing: f64) -> Vec<f64> {
    let ratio = width / spacing;
    let full = snap_floor(ratio) as u64;
    let mut offs: Vec<f64> = (0..=full).map(|i| i as f64 * spacing).collect();
    if (ratio - full as f64).abs() > 1e-9 {
        offs.push(width);
    }
    offs
}

/// Legs over `extent`. Parallel legs run along the long axis; criss-cross
/// adds the same construction along the other axis. Every leg extends one
/// spacing past both ends and legs alternate direction.
pub fn plan_flight(
    extent: &Rect,
    spacing: f64,
    altitude: f64,
    speed: f64,
    pattern: FlightPattern,
) -> Result<FlightPlan> {
    extent.validate()?;
    for (name, v) in [("spacing", spacing), ("altitude", altitude), ("speed", speed)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Validation(format!("flight {name} must be > 0, got {v}")));
        }
    }
    let along_x = extent.width() >= extent.height();
    let mut axes = vec![along_x];
    if pattern == FlightPattern::CrissCross {
        axes.push(!along_x);
    }

    let mut legs = Vec::new();
    let mut t = 0.0;
    for x_legs in axes {
        let (cross_min, cross_len, a0, a1) = if x_legs {
            (extent.min_y, extent.height(), extent.min_x - spacing, extent.max_x + spacing)
        } else {
            (extent.min_x, extent.width(), extent.min_y - spacing, extent.max_y + spacing)
        };
        for off in leg_offsets(cross_len, spacing) {
            let c = cross_min + off;
            let (s, e) = if legs.len() % 2 == 0 { (a0, a1) } else { (a1, a0) };
            let (start, end) = if x_legs { ([s, c], [e, c]) } else { ([c, s], [c, e]) };
            let leg = Leg {
                start,
                end,
                altitude,
                speed,
                start_time: t,
            };
            t += leg.duration();
            legs.push(leg);
        }
    }
    Ok(FlightPlan {
        extent: *extent,
        pattern,
        spacing,
        legs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pulse {
    pub pulse_index: u64,
    pub origin: Vec3,
    pub direction: Vec3,
    pub time: f64,
}

/// Random-access view of every pulse of a survey, in emission order.
#[derive(Clone, Debug)]
pub struct PulseSchedule {
    legs: Vec<Leg>,
    /// Cumulative line count before each leg.
    line_offsets: Vec<u64>,
    scanner: ScannerConfig,
    per_line: u64,
    /// (sin, cos) of every scan angle.
    angles: Vec<(f64, f64)>,
}

impl PulseSchedule {
    pub fn new(plan: &FlightPlan, scanner: &ScannerConfig) -> Result<Self> {
        scanner.validate()?;
        let mut line_offsets = Vec::with_capacity(plan.legs.len() + 1);
        let mut total = 0;
        line_offsets.push(0);
        for leg in &plan.legs {
            if !(leg.length() > 0.0) {
                return Err(Error::Validation("flight leg with zero length".into()));
            }
            total += lines_on_leg(leg, scanner);
            line_offsets.push(total);
        }
        let per_line = scanner.pulses_per_line();
        let angles = (0..per_line).map(|p| scanner.scan_angle(p).sin_cos()).collect();
        Ok(PulseSchedule {
            legs: plan.legs.clone(),
            line_offsets,
            scanner: *scanner,
            per_line,
            angles,
        })
    }

    pub fn line_count(&self) -> u64 {
        *self.line_offsets.last().unwrap_or(&0)
    }

    pub fn pulses_per_line(&self) -> u64 {
        self.per_line
    }

    pub fn pulse_count(&self) -> u64 {
        self.line_count() * self.per_line
    }

    pub fn lines_on_leg(&self, leg: usize) -> u64 {
        self.line_offsets[leg + 1] - self.line_offsets[leg]
    }

    /// Pulse `p` of global scan line `line`.
    pub fn pulse(&self, line: u64, p: u64) -> Pulse {
        let leg_idx = self.line_offsets.partition_point(|&o| o <= line) - 1;
        let leg = &self.legs[leg_idx];
        let local = line - self.line_offsets[leg_idx];
        let t_line = local as f64 / self.scanner.scan_line_rate;
        let d = leg.direction();
        let along = leg.speed * t_line;
        let origin = Vec3::new(leg.start[0] + d[0] * along, leg.start[1] + d[1] * along, leg.altitude);
        // Left of the flight direction.
        let perp = [-d[1], d[0]];
        let (sin, cos) = self.angles[p as usize];
        Pulse {
            pulse_index: line * self.per_line + p,
            origin,
            direction: Vec3::new(sin * perp[0], sin * perp[1], -cos),
            time: leg.start_time + t_line + p as f64 / self.scanner.pulse_frequency,
        }
    }

    pub fn pulse_by_index(&self, pulse_index: u64) -> Pulse {
        self.pulse(pulse_index / self.per_line, pulse_index % self.per_line)
    }

    pub fn iter(&self) -> impl Iterator<Item = Pulse> + '_ {
        (0..self.line_count()).flat_map(move |l| (0..self.per_line).map(move |p| self.pulse(l, p)))
    }
}

fn lines_on_leg(leg: &Leg, scanner: &ScannerConfig) -> u64 {
    snap_floor(leg.duration() * scanner.scan_line_rate) as u64
}

/// Every pulse of the survey in order.
pub fn generate_pulses(plan: &FlightPlan, scanner: &ScannerConfig) -> Result<PulseSchedule> {
    PulseSchedule::new(plan, scanner)
}

/// Ray parameter interval inside an axis-aligned box, if any.
fn clip_ray(origin: &Vec3, dir: &Vec3, lo: &Vec3, hi: &Vec3) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
        } else {
            let inv = 1.0 / dir[a];
            let (mut ta, mut tb) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
    }
    (t0 < t1).then_some((t0, t1))
}

/// Walks the grid along the pulse and appends its returns to `out`.
///
/// Each occupied voxel along the ray draws one uniform number from the
/// stream keyed by `(seed, pulse index, ordinal of the voxel among the
/// occupied ones crossed)`; a draw below the voxel opacity emits a point at
/// the ray's entry into the voxel. The walk stops at the first fully opaque
/// voxel, after `max_returns` points, or at the grid boundary or max range.
pub fn trace_pulse_into(
    pulse: &Pulse,
    grid: &VoxelGrid,
    scanner: &ScannerConfig,
    survey_seed: u64,
    out: &mut Vec<LidarPoint>,
) {
    let (lo, hi) = grid.world_bounds();
    let o = pulse.origin;
    let d = pulse.direction;
    let Some((t_enter, t_exit)) = clip_ray(&o, &d, &lo, &hi) else {
        return;
    };
    let t_exit = t_exit.min(scanner.max_range);
    if t_enter >= t_exit {
        return;
    }

    let s = grid.voxel_size();
    let min = grid.min_index();
    let dims = grid.dims();
    let max_idx = [
        min[0] + dims[0] as i32 - 1,
        min[1] + dims[1] as i32 - 1,
        min[2] + dims[2] as i32 - 1,
    ];
    let entry = o + d * t_enter;
    let mut cell = [0i32; 3];
    let mut step = [0i32; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        cell[a] = ((entry[a] / s).floor() as i32).clamp(min[a], max_idx[a]);
        if d[a] > 0.0 {
            step[a] = 1;
            t_max[a] = ((cell[a] + 1) as f64 * s - o[a]) / d[a];
            t_delta[a] = s / d[a];
        } else if d[a] < 0.0 {
            step[a] = -1;
            t_max[a] = (cell[a] as f64 * s - o[a]) / d[a];
            t_delta[a] = -s / d[a];
        }
    }

    let first = out.len();
    let mut t_cell = t_enter;
    let mut ordinal = 0u64;
    loop {
        if let Some(attr) = grid.get(cell) {
            let hit = attr.opacity >= 1.0 || {
                let mut rng = Stream::new(survey_seed, &[purpose::TRACE, pulse.pulse_index, ordinal]);
                rng.next_f64() < attr.opacity as f64
            };
            ordinal += 1;
            if hit {
                out.push(LidarPoint {
                    position: o + d * t_cell,
                    instance_id: attr.instance_id,
                    semantic: attr.semantic,
                    return_number: (out.len() - first + 1) as u8,
                    pulse_index: pulse.pulse_index as i64,
                    time: pulse.time,
                });
                if attr.opacity >= 1.0 || out.len() - first >= scanner.max_returns as usize {
                    return;
                }
            }
        }
        let a = if t_max[0] < t_max[1] {
            if t_max[0] < t_max[2] { 0 } else { 2 }
        } else if t_max[1] < t_max[2] {
            1
        } else {
            2
        };
        t_cell = t_max[a];
        if t_cell >= t_exit {
            return;
        }
        cell[a] += step[a];
        if cell[a] < min[a] || cell[a] > max_idx[a] {
            return;
        }
        t_max[a] += t_delta[a];
    }
}

pub fn trace_pulse(pulse: &Pulse, grid: &VoxelGrid, scanner: &ScannerConfig, survey_seed: u64) -> Vec<LidarPoint> {
    let mut out = Vec::new();
    trace_pulse_into(pulse, grid, scanner, survey_seed, &mut out);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveySummary {
    pub legs: usize,
    pub scan_lines: u64,
    pub pulse_count: u64,
    pub point_count: u64,
    /// Pulses that produced at least one point.
    pub pulses_with_returns: u64,
    pub max_returns_seen: u32,
    /// Points per square meter of the planned extent.
    pub mean_density: f64,
    pub extent_area: f64,
    pub duration_s: f64,
}

impl SurveySummary {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }
}

/// Traces every pulse of the plan, in parallel over scan lines on the
/// current rayon pool. Output is ordered by pulse index, then return.
pub fn run_survey(
    grid: &VoxelGrid,
    plan: &FlightPlan,
    scanner: &ScannerConfig,
    survey_seed: u64,
) -> Result<(PointCloud, SurveySummary)> {
    let schedule = PulseSchedule::new(plan, scanner)?;
    let per_line = schedule.pulses_per_line();
    let chunks: Vec<(Vec<LidarPoint>, u64, u32)> = (0..schedule.line_count())
        .into_par_iter()
        .map(|line| {
            let mut pts = Vec::new();
            let mut with_returns = 0;
            let mut most = 0u32;
            for p in 0..per_line {
                let before = pts.len();
                trace_pulse_into(&schedule.pulse(line, p), grid, scanner, survey_seed, &mut pts);
                let n = (pts.len() - before) as u32;
                if n > 0 {
                    with_returns += 1;
                    most = most.max(n);
                }
            }
            (pts, with_returns, most)
        })
        .collect();

    let total: usize = chunks.iter().map(|c| c.0.len()).sum();
    let mut points = Vec::with_capacity(total);
    let mut with_returns = 0;
    let mut most = 0;
    for (pts, w, m) in chunks {
        points.extend(pts);
        with_returns += w;
        most = most.max(m);
    }
    let area = plan.extent.area();
    let summary = SurveySummary {
        legs: plan.legs.len(),
        scan_lines: schedule.line_count(),
        pulse_count: schedule.pulse_count(),
        point_count: points.len() as u64,
        pulses_with_returns: with_returns,
        max_returns_seen: most,
        mean_density: points.len() as f64 / area,
        extent_area: area,
        duration_s: plan.duration(),
    };
    Ok((PointCloud::new(points, plan.extent, Provenance::Simulated), summary))
}

/// Survey settings file; field names follow the usual mission parameter
/// table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyConfig {
    pub pulse_frequency: f64,
    pub max_returns: u32,
    pub flight_pattern: FlightPattern,
    pub flight_spacing: f64,
    pub flight_speed: f64,
    pub relative_altitude: f64,
    pub scan_line_rate: f64,
    pub fov_half_angle: f64,
    pub max_range: f64,
    /// None derives the survey seed from the pipeline seed.
    pub seed: Option<u64>,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        let sc = ScannerConfig::default();
        SurveyConfig {
            pulse_frequency: sc.pulse_frequency,
            max_returns: sc.max_returns,
            flight_pattern: FlightPattern::CrissCross,
            flight_spacing: 20.0,
            flight_speed: 5.0,
            relative_altitude: 60.0,
            scan_line_rate: sc.scan_line_rate,
            fov_half_angle: sc.fov_half_angle,
            max_range: sc.max_range,
            seed: None,
        }
    }
}

impl SurveyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SurveyConfig = toml::from_str(text).map_err(|e| Error::Config(format!("survey config: {e}")))?;
        cfg.scanner().validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn scanner(&self) -> ScannerConfig {
        ScannerConfig {
            pulse_frequency: self.pulse_frequency,
            scan_line_rate: self.scan_line_rate,
            fov_half_angle: self.fov_half_angle,
            max_returns: self.max_returns,
            max_range: self.max_range,
        }
    }

    pub fn plan(&self, extent: &Rect) -> Result<FlightPlan> {
        plan_flight(
            extent,
            self.flight_spacing,
            self.relative_altitude,
            self.flight_speed,
            self.flight_pattern,
        )
    }
}
