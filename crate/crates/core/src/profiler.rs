//! Dual-mode profiling: capture points fed by the simulated accelerator
//! and wall-clock phase timing for the driver, merged into one report.
//!
//! The report never sums simulated cycles and wall time implicitly: the
//! combined estimate labels the driver wall-time and the modeled
//! accelerator time separately and states their sum.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::sim::SimReport;

/// What a capture point measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    CycleCounter,
    OccupancyGauge,
    UtilizationRatio,
}

impl PointKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PointKind::CycleCounter => "cycle_counter",
            PointKind::OccupancyGauge => "occupancy_gauge",
            PointKind::UtilizationRatio => "utilization_ratio",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cycle_counter" => Ok(PointKind::CycleCounter),
            "occupancy_gauge" => Ok(PointKind::OccupancyGauge),
            "utilization_ratio" => Ok(PointKind::UtilizationRatio),
            other => Err(Error::Format(format!("unknown point kind {other:?}"))),
        }
    }
}

/// A named series of (simulated cycle, value) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturePoint {
    pub id: String,
    pub kind: PointKind,
    pub samples: Vec<(u64, f64)>,
}

/// Driver phases, after the send / wait / unpack breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverPhase {
    SendInput,
    WaitCompute,
    UnpackOutput,
}

impl DriverPhase {
    pub fn as_str(&self) -> &'static str {
        match self {
            DriverPhase::SendInput => "send_input",
            DriverPhase::WaitCompute => "wait_compute",
            DriverPhase::UnpackOutput => "unpack_output",
        }
    }

    fn index(&self) -> usize {
        match self {
            DriverPhase::SendInput => 0,
            DriverPhase::WaitCompute => 1,
            DriverPhase::UnpackOutput => 2,
        }
    }
}

/// Phase wall-times plus per-phase traffic counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DriverProfile {
    pub send_input_ns: u64,
    pub wait_compute_ns: u64,
    pub unpack_output_ns: u64,
    /// Super-blocks serialized during send_input.
    pub blocks_streamed: u64,
    /// Bytes sent to the accelerator (instruction stream).
    pub bytes_in: u64,
    /// Bytes received back (output stream).
    pub bytes_out: u64,
}

/// Driver wall-time and modeled accelerator time, labeled separately;
/// `estimate_ns` is exactly their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedEstimate {
    pub driver_wall_ns: f64,
    pub accel_modeled_ns: f64,
    pub estimate_ns: f64,
}

/// Everything one profiled session produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileReport {
    pub sim: Option<SimReport>,
    pub points: Vec<CapturePoint>,
    pub driver: DriverProfile,
    pub combined: Option<CombinedEstimate>,
}

/// One profiling session, owned by one driver or simulator session.
#[derive(Debug)]
pub struct ProfileSession {
    points: Vec<CapturePoint>,
    phase_ns: [u64; 3],
    open_phases: Vec<(DriverPhase, Instant)>,
    driver: DriverProfile,
    sim: Option<SimReport>,
    closed: bool,
}

impl Default for ProfileSession {
    fn default() -> Self {
        Self::new()
    }
}

impl ProfileSession {
    pub fn new() -> Self {
        ProfileSession {
            points: Vec::new(),
            phase_ns: [0; 3],
            open_phases: Vec::new(),
            driver: DriverProfile::default(),
            sim: None,
            closed: false,
        }
    }

    fn ensure_open(&self) -> Result<()> {
        if self.closed {
            return Err(Error::Usage("profiling session is closed".into()));
        }
        Ok(())
    }

    /// Register a capture point. Re-registering the same id with the same
    /// kind is a no-op; a conflicting kind is a usage error.
    pub fn register_point(&mut self, id: &str, kind: PointKind) -> Result<()> {
        self.ensure_open()?;
        if let Some(p) = self.points.iter().find(|p| p.id == id) {
            if p.kind != kind {
                return Err(Error::Usage(format!(
                    "capture point {id:?} already registered as {}",
                    p.kind.as_str()
                )));
            }
            return Ok(());
        }
        self.points.push(CapturePoint {
            id: id.to_string(),
            kind,
            samples: Vec::new(),
        });
        Ok(())
    }

    /// Append a sample to a registered point. Cycles must be
    /// non-decreasing within a point; utilization ratios must lie in
    /// `[0, 1]`.
    pub fn record(&mut self, id: &str, sim_cycle: u64, value: f64) -> Result<()> {
        self.ensure_open()?;
        let point = self
            .points
            .iter_mut()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::Usage(format!("capture point {id:?} is not registered")))?;
        if let Some(&(last, _)) = point.samples.last() {
            if sim_cycle < last {
                return Err(Error::Usage(format!(
                    "capture point {id:?}: cycle {sim_cycle} precedes {last}"
                )));
            }
        }
        if point.kind == PointKind::UtilizationRatio && !(0.0..=1.0).contains(&value) {
            return Err(Error::Domain(format!(
                "utilization sample {value} outside [0, 1] for point {id:?}"
            )));
        }
        point.samples.push((sim_cycle, value));
        Ok(())
    }

    /// Start timing a phase. Re-entering an already-open phase is a
    /// usage error; different phases may nest.
    pub fn phase_begin(&mut self, phase: DriverPhase) -> Result<()> {
        self.ensure_open()?;
        if self.open_phases.iter().any(|(p, _)| *p == phase) {
            return Err(Error::Usage(format!(
                "phase {} is already open",
                phase.as_str()
            )));
        }
        self.open_phases.push((phase, Instant::now()));
        Ok(())
    }

    /// Stop timing a phase and add the elapsed wall time to it.
    pub fn phase_end(&mut self, phase: DriverPhase) -> Result<()> {
        self.ensure_open()?;
        let pos = self
            .open_phases
            .iter()
            .position(|(p, _)| *p == phase)
            .ok_or_else(|| Error::Usage(format!("phase {} is not open", phase.as_str())))?;
        let (_, start) = self.open_phases.remove(pos);
        let ns = u64::try_from(start.elapsed().as_nanos()).unwrap_or(u64::MAX);
        self.phase_ns[phase.index()] = self.phase_ns[phase.index()].saturating_add(ns);
        Ok(())
    }

    /// Run `f` inside a timed phase scope.
    pub fn with_phase<R>(
        &mut self,
        phase: DriverPhase,
        f: impl FnOnce(&mut Self) -> Result<R>,
    ) -> Result<R> {
        self.phase_begin(phase)?;
        let result = f(self);
        self.phase_end(phase)?;
        result
    }

    /// Attach the simulator's cycle report to this session.
    pub fn set_sim_report(&mut self, report: SimReport) {
        self.sim = Some(report);
    }

    /// Accumulate traffic counters for the driver phases.
    pub fn add_traffic(&mut self, blocks: u64, bytes_in: u64, bytes_out: u64) {
        self.driver.blocks_streamed += blocks;
        self.driver.bytes_in += bytes_in;
        self.driver.bytes_out += bytes_out;
    }

    /// Wall-time accumulated so far for one phase.
    pub fn phase_total_ns(&self, phase: DriverPhase) -> u64 {
        self.phase_ns[phase.index()]
    }

    /// Close the session. All phases must have ended.
    pub fn close(&mut self) -> Result<()> {
        self.ensure_open()?;
        if let Some((p, _)) = self.open_phases.first() {
            return Err(Error::Usage(format!(
                "cannot close session: phase {} still open",
                p.as_str()
            )));
        }
        self.closed = true;
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Snapshot of the driver-phase side of the session.
    pub fn driver_profile(&self) -> DriverProfile {
        DriverProfile {
            send_input_ns: self.phase_ns[0],
            wait_compute_ns: self.phase_ns[1],
            unpack_output_ns: self.phase_ns[2],
            ..self.driver
        }
    }

    /// Build the merged report. The session must be closed.
    pub fn report(&self) -> Result<ProfileReport> {
        if !self.closed {
            return Err(Error::Usage(
                "cannot emit a report from an open session".into(),
            ));
        }
        let driver = self.driver_profile();
        let combined = self.sim.as_ref().map(|sim| {
            let driver_wall_ns = (driver.send_input_ns + driver.unpack_output_ns) as f64;
            let accel_modeled_ns = sim.modeled_time_us * 1000.0;
            CombinedEstimate {
                driver_wall_ns,
                accel_modeled_ns,
                estimate_ns: driver_wall_ns + accel_modeled_ns,
            }
        });
        Ok(ProfileReport {
            sim: self.sim.clone(),
            points: self.points.clone(),
            driver,
            combined,
        })
    }

    /// Serialize the merged report as key=value text. Byte-identical on
    /// re-emission.
    pub fn emit_report(&self) -> Result<String> {
        Ok(self.report()?.to_kv())
    }
}

impl ProfileReport {
    /// Line-oriented key=value serialization. Keys are documented in the
    /// repository README; section order is fixed.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str("report.version=1\n");
        if let Some(sim) = &self.sim {
            out.push_str(&sim.to_kv());
        }
        let d = &self.driver;
        out.push_str(&format!("phase.send_input_ns={}\n", d.send_input_ns));
        out.push_str(&format!("phase.wait_compute_ns={}\n", d.wait_compute_ns));
        out.push_str(&format!("phase.unpack_output_ns={}\n", d.unpack_output_ns));
        out.push_str(&format!("phase.blocks_streamed={}\n", d.blocks_streamed));
        out.push_str(&format!("phase.bytes_in={}\n", d.bytes_in));
        out.push_str(&format!("phase.bytes_out={}\n", d.bytes_out));
        for p in &self.points {
            out.push_str(&format!("point.{}.kind={}\n", p.id, p.kind.as_str()));
            let series = p
                .samples
                .iter()
                .map(|(c, v)| format!("{c}:{v}"))
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&format!("point.{}.series={}\n", p.id, series));
        }
        if let Some(c) = &self.combined {
            out.push_str(&format!("combined.driver_wall_ns={}\n", c.driver_wall_ns));
            out.push_str(&format!(
                "combined.accel_modeled_ns={}\n",
                c.accel_modeled_ns
            ));
            out.push_str(&format!("combined.estimate_ns={}\n", c.estimate_ns));
        }
        out
    }

    /// Parse a key=value report back. Together with [`Self::to_kv`] this
    /// round-trips byte-identically.
    pub fn from_kv(text: &str) -> Result<ProfileReport> {
        let mut map = BTreeMap::new();
        let mut point_order = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("report line {}: missing '='", lineno + 1)))?;
            if let Some(id) = key
                .strip_prefix("point.")
                .and_then(|rest| rest.strip_suffix(".kind"))
            {
                point_order.push(id.to_string());
            }
            map.insert(key.to_string(), value.to_string());
        }
        let version = get_u64(&map, "report.version")?;
        if version != 1 {
            return Err(Error::Format(format!(
                "unsupported report version {version}"
            )));
        }
        let sim = if map.contains_key("total_cycles") {
            Some(SimReport::from_kv_map(&map)?)
        } else {
            None
        };
        let driver = DriverProfile {
            send_input_ns: get_u64(&map, "phase.send_input_ns")?,
            wait_compute_ns: get_u64(&map, "phase.wait_compute_ns")?,
            unpack_output_ns: get_u64(&map, "phase.unpack_output_ns")?,
            blocks_streamed: get_u64(&map, "phase.blocks_streamed")?,
            bytes_in: get_u64(&map, "phase.bytes_in")?,
            bytes_out: get_u64(&map, "phase.bytes_out")?,
        };
        let mut points = Vec::new();
        for id in point_order {
            let kind = PointKind::parse(&map[&format!("point.{id}.kind")])?;
            let series_text = map
                .get(&format!("point.{id}.series"))
                .ok_or_else(|| Error::Format(format!("point {id:?} has no series")))?;
            let mut samples = Vec::new();
            for part in series_text.split(',').filter(|p| !p.is_empty()) {
                let (c, v) = part
                    .split_once(':')
                    .ok_or_else(|| Error::Format(format!("bad sample {part:?}")))?;
                samples.push((
                    c.parse::<u64>()
                        .map_err(|e| Error::Format(format!("bad cycle {c:?}: {e}")))?,
                    v.parse::<f64>()
                        .map_err(|e| Error::Format(format!("bad value {v:?}: {e}")))?,
                ));
            }
            points.push(CapturePoint { id, kind, samples });
        }
        let combined = if map.contains_key("combined.estimate_ns") {
            Some(CombinedEstimate {
                driver_wall_ns: get_f64(&map, "combined.driver_wall_ns")?,
                accel_modeled_ns: get_f64(&map, "combined.accel_modeled_ns")?,
                estimate_ns: get_f64(&map, "combined.estimate_ns")?,
            })
        } else {
            None
        };
        Ok(ProfileReport {
            sim,
            points,
            driver,
            combined,
        })
    }

    /// Structured JSON rendering of the same data.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n  \"report_version\": 1");
        if let Some(sim) = &self.sim {
            out.push_str(",\n  \"sim\": ");
            out.push_str(&sim.to_json_object("  "));
        }
        let d = &self.driver;
        out.push_str(&format!(
            ",\n  \"phases\": {{\"send_input_ns\": {}, \"wait_compute_ns\": {}, \
             \"unpack_output_ns\": {}, \"blocks_streamed\": {}, \"bytes_in\": {}, \
             \"bytes_out\": {}}}",
            d.send_input_ns,
            d.wait_compute_ns,
            d.unpack_output_ns,
            d.blocks_streamed,
            d.bytes_in,
            d.bytes_out
        ));
        out.push_str(",\n  \"points\": [");
        for (i, p) in self.points.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let samples = p
                .samples
                .iter()
                .map(|(c, v)| format!("[{c}, {v}]"))
                .collect::<Vec<_>>()
                .join(", ");
            out.push_str(&format!(
                "{{\"id\": \"{}\", \"kind\": \"{}\", \"samples\": [{}]}}",
                p.id,
                p.kind.as_str(),
                samples
            ));
        }
        out.push(']');
        if let Some(c) = &self.combined {
            out.push_str(&format!(
                ",\n  \"combined\": {{\"driver_wall_ns\": {}, \"accel_modeled_ns\": {}, \
                 \"estimate_ns\": {}}}",
                c.driver_wall_ns, c.accel_modeled_ns, c.estimate_ns
            ));
        }
        out.push_str("\n}\n");
        out
    }
}

pub(crate) fn get_u64(map: &BTreeMap<String, String>, key: &str) -> Result<u64> {
    let v = map
        .get(key)
        .ok_or_else(|| Error::Format(format!("report is missing key {key:?}")))?;
    v.parse::<u64>()
        .map_err(|e| Error::Format(format!("key {key:?}: {e}")))
}

pub(crate) fn get_f64(map: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    let v = map
        .get(key)
        .ok_or_else(|| Error::Format(format!("report is missing key {key:?}")))?;
    v.parse::<f64>()
        .map_err(|e| Error::Format(format!("key {key:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_and_read_back() {
        let mut s = ProfileSession::new();
        s.register_point("unit.cycles", PointKind::CycleCounter)
            .unwrap();
        s.record("unit.cycles", 0, 1.0).unwrap();
        s.record("unit.cycles", 5, 9.0).unwrap();
        s.close().unwrap();
        let report = s.report().unwrap();
        assert_eq!(report.points[0].samples, vec![(0, 1.0), (5, 9.0)]);
    }

    #[test]
    fn record_unknown_point_is_error() {
        let mut s = ProfileSession::new();
        assert!(matches!(s.record("nope", 0, 0.0), Err(Error::Usage(_))));
    }

    #[test]
    fn record_enforces_monotone_cycles() {
        let mut s = ProfileSession::new();
        s.register_point("g", PointKind::OccupancyGauge).unwrap();
        s.record("g", 10, 1.0).unwrap();
        assert!(matches!(s.record("g", 9, 2.0), Err(Error::Usage(_))));
        s.record("g", 10, 2.0).unwrap(); // equal cycles are fine
    }

    #[test]
    fn utilization_must_be_a_ratio() {
        let mut s = ProfileSession::new();
        s.register_point("u", PointKind::UtilizationRatio).unwrap();
        s.record("u", 0, 0.5).unwrap();
        assert!(matches!(s.record("u", 1, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn reregistration_rules() {
        let mut s = ProfileSession::new();
        s.register_point("p", PointKind::CycleCounter).unwrap();
        s.register_point("p", PointKind::CycleCounter).unwrap();
        assert!(matches!(
            s.register_point("p", PointKind::OccupancyGauge),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn phase_scopes_nest_but_not_reenter() {
        let mut s = ProfileSession::new();
        s.phase_begin(DriverPhase::SendInput).unwrap();
        assert!(matches!(
            s.phase_begin(DriverPhase::SendInput),
            Err(Error::Usage(_))
        ));
        s.phase_begin(DriverPhase::WaitCompute).unwrap();
        s.phase_end(DriverPhase::WaitCompute).unwrap();
        s.phase_end(DriverPhase::SendInput).unwrap();
        assert!(matches!(
            s.phase_end(DriverPhase::SendInput),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn close_rejects_open_phases_and_emit_rejects_open_sessions() {
        let mut s = ProfileSession::new();
        assert!(matches!(s.emit_report(), Err(Error::Usage(_))));
        s.phase_begin(DriverPhase::SendInput).unwrap();
        assert!(matches!(s.close(), Err(Error::Usage(_))));
        s.phase_end(DriverPhase::SendInput).unwrap();
        s.close().unwrap();
        assert!(s.emit_report().is_ok());
        // Recording into a closed session is a usage error.
        assert!(matches!(s.record("x", 0, 0.0), Err(Error::Usage(_))));
    }

    #[test]
    fn empty_session_report_is_zeroed() {
        let mut s = ProfileSession::new();
        s.close().unwrap();
        let report = s.report().unwrap();
        assert!(report.sim.is_none());
        assert!(report.points.is_empty());
        assert_eq!(report.driver, DriverProfile::default());
        let kv = s.emit_report().unwrap();
        assert!(kv.contains("phase.send_input_ns=0"));
        assert!(kv.contains("phase.wait_compute_ns=0"));
        assert!(kv.contains("phase.unpack_output_ns=0"));
    }

    #[test]
    fn emit_is_byte_identical_and_parses_back() {
        let mut s = ProfileSession::new();
        s.register_point("a.gauge", PointKind::OccupancyGauge)
            .unwrap();
        s.record("a.gauge", 0, 0.0).unwrap();
        s.record("a.gauge", 7, 3.0).unwrap();
        s.with_phase(DriverPhase::SendInput, |s| {
            s.add_traffic(4, 1024, 0);
            Ok(())
        })
        .unwrap();
        s.close().unwrap();
        let first = s.emit_report().unwrap();
        let second = s.emit_report().unwrap();
        assert_eq!(first, second);
        let parsed = ProfileReport::from_kv(&first).unwrap();
        assert_eq!(parsed.to_kv(), first);
        assert_eq!(parsed, s.report().unwrap());
    }
}
