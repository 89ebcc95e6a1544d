//! Cycle-approximate accelerator model: instruction decoder, data mapper,
//! super-block vector processor (SBVP) and scheduler, connected by a
//! word-granular stream.
//!
//! Timing model: phases serialize (decode, map, compute, store) with no
//! compute/transfer overlap; the SBVP parallelizes the 16 tiles of one
//! super-block dot across its lanes. The model is conservative and
//! monotone, meant for relative design comparison rather than absolute
//! prediction. Costs per unit:
//!
//! * decoder: `max(1, ceil(non_payload_words * 32 / stream_width_bits))`
//!   per instruction;
//! * mapper: `ceil(payload_bits / stream_width_bits)` per load;
//! * SBVP: `max(1, ceil(ceil(16 / lanes) * 16 / tile_macs_per_cycle))`
//!   per super-block dot;
//! * scheduler: 1 per accumulator update plus
//!   `ceil(output_bits / stream_width_bits)` per store.
//!
//! Every streamed word is charged to some unit at no better than the
//! stream rate, so `total_cycles >= ceil(total streamed bits / width)`
//! holds for any session.

pub mod isa;

use std::collections::BTreeMap;

use crate::codec::{unpack_q3k, unpack_q8k, SuperBlockQ3K, SuperBlockQ8K};
use crate::codec::{N_TILES, Q3K_LEVEL_BIAS, TILE_LEN};
use crate::error::{Error, Result};
use crate::profiler::{get_f64, get_u64, PointKind, ProfileSession};
use isa::{Instruction, Q3K_PAYLOAD_BYTES, Q8K_PAYLOAD_BYTES};

/// Capture point: occupied weight-buffer slots over time.
pub const POINT_WEIGHT_OCCUPANCY: &str = "weight_buffer.occupancy";
/// Capture point: occupied input-buffer slots over time.
pub const POINT_INPUT_OCCUPANCY: &str = "input_buffer.occupancy";
/// Capture point: cumulative SBVP busy cycles, sampled per COMPUTE.
pub const POINT_SBVP_BUSY: &str = "sbvp.busy_cycles";
/// Capture point: SBVP busy / total cycles, sampled at HALT.
pub const POINT_SBVP_UTILIZATION: &str = "sbvp.utilization";

/// Cycle-model parameters of one accelerator instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceleratorConfig {
    /// Weight buffer capacity in super-blocks.
    pub weight_slots: usize,
    /// Input buffer capacity in super-blocks.
    pub input_slots: usize,
    /// Output accumulator capacity in f32 values.
    pub output_slots: usize,
    /// Parallel tile lanes inside the SBVP.
    pub sbvp_lanes: usize,
    /// Multiply-accumulates one lane retires per cycle.
    pub tile_macs_per_cycle: usize,
    /// Stream width; words per cycle times 32.
    pub stream_width_bits: usize,
    /// Accelerator clock in MHz (used only to convert cycles to time).
    pub clock_mhz: f64,
}

impl Default for AcceleratorConfig {
    fn default() -> Self {
        AcceleratorConfig {
            weight_slots: 64,
            input_slots: 64,
            output_slots: 4096,
            sbvp_lanes: 4,
            tile_macs_per_cycle: 16,
            stream_width_bits: 64,
            clock_mhz: 100.0,
        }
    }
}

impl AcceleratorConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("weight_slots", self.weight_slots),
            ("input_slots", self.input_slots),
            ("output_slots", self.output_slots),
            ("sbvp_lanes", self.sbvp_lanes),
            ("tile_macs_per_cycle", self.tile_macs_per_cycle),
            ("stream_width_bits", self.stream_width_bits),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Capacity(format!("{name} must be positive")));
            }
        }
        if !self.stream_width_bits.is_multiple_of(32) {
            return Err(Error::Capacity(format!(
                "stream_width_bits = {} is not a multiple of 32",
                self.stream_width_bits
            )));
        }
        if !self.clock_mhz.is_finite() || self.clock_mhz <= 0.0 {
            return Err(Error::Capacity(format!(
                "clock_mhz = {} must be positive and finite",
                self.clock_mhz
            )));
        }
        Ok(())
    }
}

/// Cycle counters and high-water marks of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub total_cycles: u64,
    pub decoder_cycles: u64,
    pub mapper_cycles: u64,
    pub sbvp_cycles: u64,
    pub scheduler_cycles: u64,
    pub sbvp_busy_cycles: u64,
    pub sbvp_idle_cycles: u64,
    /// Always zero under the serialized-phase model: nothing contends
    /// with the mapper. Kept so the report schema survives overlap
    /// models.
    pub mapper_stall_cycles: u64,
    pub weight_occupancy_peak: usize,
    pub input_occupancy_peak: usize,
    pub output_occupancy_peak: usize,
    /// `total_cycles / clock_mhz`, in microseconds.
    pub modeled_time_us: f64,
}

impl SimReport {
    /// Key=value lines for this report (a subset of the profile report
    /// schema).
    pub fn to_kv(&self) -> String {
        format!(
            "total_cycles={}\nunit.decoder={}\nunit.mapper={}\nunit.sbvp={}\n\
             unit.scheduler={}\nunit.sbvp_busy={}\nunit.sbvp_idle={}\n\
             unit.mapper_stall={}\nbuffer.weight_peak={}\nbuffer.input_peak={}\n\
             buffer.output_peak={}\nsim.modeled_time_us={}\n",
            self.total_cycles,
            self.decoder_cycles,
            self.mapper_cycles,
            self.sbvp_cycles,
            self.scheduler_cycles,
            self.sbvp_busy_cycles,
            self.sbvp_idle_cycles,
            self.mapper_stall_cycles,
            self.weight_occupancy_peak,
            self.input_occupancy_peak,
            self.output_occupancy_peak,
            self.modeled_time_us,
        )
    }

    pub(crate) fn from_kv_map(map: &BTreeMap<String, String>) -> Result<SimReport> {
        Ok(SimReport {
            total_cycles: get_u64(map, "total_cycles")?,
            decoder_cycles: get_u64(map, "unit.decoder")?,
            mapper_cycles: get_u64(map, "unit.mapper")?,
            sbvp_cycles: get_u64(map, "unit.sbvp")?,
            scheduler_cycles: get_u64(map, "unit.scheduler")?,
            sbvp_busy_cycles: get_u64(map, "unit.sbvp_busy")?,
            sbvp_idle_cycles: get_u64(map, "unit.sbvp_idle")?,
            mapper_stall_cycles: get_u64(map, "unit.mapper_stall")?,
            weight_occupancy_peak: get_u64(map, "buffer.weight_peak")? as usize,
            input_occupancy_peak: get_u64(map, "buffer.input_peak")? as usize,
            output_occupancy_peak: get_u64(map, "buffer.output_peak")? as usize,
            modeled_time_us: get_f64(map, "sim.modeled_time_us")?,
        })
    }

    pub(crate) fn to_json_object(&self, indent: &str) -> String {
        format!(
            "{{\n{indent}  \"total_cycles\": {}, \"decoder_cycles\": {}, \
             \"mapper_cycles\": {}, \"sbvp_cycles\": {}, \"scheduler_cycles\": {},\n\
             {indent}  \"sbvp_busy_cycles\": {}, \"sbvp_idle_cycles\": {}, \
             \"mapper_stall_cycles\": {},\n\
             {indent}  \"weight_occupancy_peak\": {}, \"input_occupancy_peak\": {}, \
             \"output_occupancy_peak\": {}, \"modeled_time_us\": {}\n{indent}}}",
            self.total_cycles,
            self.decoder_cycles,
            self.mapper_cycles,
            self.sbvp_cycles,
            self.scheduler_cycles,
            self.sbvp_busy_cycles,
            self.sbvp_idle_cycles,
            self.mapper_stall_cycles,
            self.weight_occupancy_peak,
            self.input_occupancy_peak,
            self.output_occupancy_peak,
            self.modeled_time_us,
        )
    }
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// One accelerator instance: buffers, accumulators and cycle counters.
/// Strictly single-threaded and deterministic; independent instances
/// share nothing.
pub struct Accelerator<'t> {
    config: AcceleratorConfig,
    m_cnt: usize,
    n_cnt: usize,
    k_cnt: usize,
    configured: bool,
    compute_done: bool,
    faulted: bool,
    weight_buf: Vec<Option<SuperBlockQ3K>>,
    input_buf: Vec<Option<SuperBlockQ8K>>,
    accumulators: Vec<f32>,
    clock: u64,
    decoder_cycles: u64,
    mapper_cycles: u64,
    sbvp_cycles: u64,
    scheduler_cycles: u64,
    weight_occupied: usize,
    input_occupied: usize,
    weight_peak: usize,
    input_peak: usize,
    output_peak: usize,
    trace: Option<&'t mut ProfileSession>,
}

impl<'t> Accelerator<'t> {
    pub fn new(config: &AcceleratorConfig) -> Result<Self> {
        Self::build(config, None)
    }

    /// Attach a profiling session; the standard capture points are
    /// registered and an initial zero occupancy sample is recorded.
    pub fn with_trace(config: &AcceleratorConfig, session: &'t mut ProfileSession) -> Result<Self> {
        Self::build(config, Some(session))
    }

    fn build(config: &AcceleratorConfig, trace: Option<&'t mut ProfileSession>) -> Result<Self> {
        config.validate()?;
        let mut accel = Accelerator {
            config: config.clone(),
            m_cnt: 0,
            n_cnt: 0,
            k_cnt: 0,
            configured: false,
            compute_done: false,
            faulted: false,
            weight_buf: vec![None; config.weight_slots],
            input_buf: vec![None; config.input_slots],
            accumulators: vec![0.0; config.output_slots],
            clock: 0,
            decoder_cycles: 0,
            mapper_cycles: 0,
            sbvp_cycles: 0,
            scheduler_cycles: 0,
            weight_occupied: 0,
            input_occupied: 0,
            weight_peak: 0,
            input_peak: 0,
            output_peak: 0,
            trace,
        };
        if let Some(session) = accel.trace.as_deref_mut() {
            session.register_point(POINT_WEIGHT_OCCUPANCY, PointKind::OccupancyGauge)?;
            session.register_point(POINT_INPUT_OCCUPANCY, PointKind::OccupancyGauge)?;
            session.register_point(POINT_SBVP_BUSY, PointKind::CycleCounter)?;
            session.register_point(POINT_SBVP_UTILIZATION, PointKind::UtilizationRatio)?;
            session.record(POINT_WEIGHT_OCCUPANCY, 0, 0.0)?;
            session.record(POINT_INPUT_OCCUPANCY, 0, 0.0)?;
        }
        Ok(accel)
    }

    pub fn config(&self) -> &AcceleratorConfig {
        &self.config
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    fn record(&mut self, point: &str, cycle: u64, value: f64) -> Result<()> {
        if let Some(session) = self.trace.as_deref_mut() {
            session.record(point, cycle, value)?;
        }
        Ok(())
    }

    fn check_fault(&self) -> Result<()> {
        if self.faulted {
            return Err(Error::Protocol(
                "accelerator is faulted; session must be discarded".into(),
            ));
        }
        Ok(())
    }

    fn fault<T>(&mut self, err: Error) -> Result<T> {
        self.faulted = true;
        Err(err)
    }

    fn stream_width(&self) -> u64 {
        self.config.stream_width_bits as u64
    }

    /// Decoder cost of one instruction: at least one cycle, plus stream
    /// ingest time for header and operand words (payload words are
    /// charged to the mapper).
    pub fn decode_cost(&self, instr: &Instruction) -> u64 {
        let non_payload_words = (instr.word_len() - instr.payload_words()) as u64;
        ceil_div(non_payload_words * 32, self.stream_width()).max(1)
    }

    /// Account decoder time for one instruction.
    pub fn decode_step(&mut self, instr: &Instruction) {
        let c = self.decode_cost(instr);
        self.decoder_cycles += c;
        self.clock += c;
    }

    /// CONFIG: set the resident problem dims. Accumulator contents
    /// persist; only COMPUTE with the accumulate flag clear zeroes them.
    pub fn configure(&mut self, m_cnt: u32, n_cnt: u32, k_cnt: u32) -> Result<()> {
        self.check_fault()?;
        let (m, n, k) = (m_cnt as usize, n_cnt as usize, k_cnt as usize);
        if m == 0 || n == 0 || k == 0 {
            return self.fault(Error::Protocol(format!(
                "CONFIG with zero dimension {m}x{n}x{k}"
            )));
        }
        if m * n > self.config.output_slots {
            return self.fault(Error::Buffer(format!(
                "CONFIG {m}x{n} needs {} accumulators, only {} available",
                m * n,
                self.config.output_slots
            )));
        }
        if n * k > self.config.weight_slots {
            return self.fault(Error::Buffer(format!(
                "CONFIG n*k = {} exceeds {} weight slots",
                n * k,
                self.config.weight_slots
            )));
        }
        if m * k > self.config.input_slots {
            return self.fault(Error::Buffer(format!(
                "CONFIG m*k = {} exceeds {} input slots",
                m * k,
                self.config.input_slots
            )));
        }
        self.m_cnt = m;
        self.n_cnt = n;
        self.k_cnt = k;
        self.configured = true;
        self.output_peak = self.output_peak.max(m * n);
        Ok(())
    }

    /// Map packed weight blocks into the weight buffer starting at
    /// `base_slot`. Payload is `count * 112` bytes (110 packed + 2 pad).
    pub fn map_weights(&mut self, payload: &[u8], base_slot: usize) -> Result<()> {
        self.check_fault()?;
        match self.map_blocks(payload, base_slot, Q3K_PAYLOAD_BYTES, true) {
            Ok(()) => Ok(()),
            Err(e) => self.fault(e),
        }
    }

    /// Map packed input blocks into the input buffer; payload unit is
    /// 260 bytes (258 packed + 2 pad).
    pub fn map_inputs(&mut self, payload: &[u8], base_slot: usize) -> Result<()> {
        self.check_fault()?;
        match self.map_blocks(payload, base_slot, Q8K_PAYLOAD_BYTES, false) {
            Ok(()) => Ok(()),
            Err(e) => self.fault(e),
        }
    }

    fn map_blocks(
        &mut self,
        payload: &[u8],
        base_slot: usize,
        unit: usize,
        weights: bool,
    ) -> Result<()> {
        let start = self.clock;
        let what = if weights { "weight" } else { "input" };
        if !payload.len().is_multiple_of(unit) {
            return Err(Error::Format(format!(
                "{what} payload of {} bytes is not a multiple of {unit}",
                payload.len()
            )));
        }
        let count = payload.len() / unit;
        let capacity = if weights {
            self.config.weight_slots
        } else {
            self.config.input_slots
        };
        if base_slot + count > capacity {
            return Err(Error::Buffer(format!(
                "{what} load of {count} blocks at slot {base_slot} exceeds {capacity} slots"
            )));
        }
        let total_bits = payload.len() as u64 * 8;
        let total_cycles = ceil_div(total_bits, self.stream_width());
        for (i, chunk) in payload.chunks_exact(unit).enumerate() {
            let slot = base_slot + i;
            if weights {
                let sb = unpack_q3k(&chunk[..unit - 2])?;
                if self.weight_buf[slot].replace(sb).is_none() {
                    self.weight_occupied += 1;
                }
            } else {
                let sb = unpack_q8k(&chunk[..unit - 2])?;
                if self.input_buf[slot].replace(sb).is_none() {
                    self.input_occupied += 1;
                }
            }
            // Attribute each block to the cycle its last bit arrives.
            let cum_bits = ((i + 1) * unit) as u64 * 8;
            let cycle = start + ceil_div(cum_bits, self.stream_width()).min(total_cycles);
            let occupancy = if weights {
                self.weight_occupied
            } else {
                self.input_occupied
            };
            let point = if weights {
                POINT_WEIGHT_OCCUPANCY
            } else {
                POINT_INPUT_OCCUPANCY
            };
            self.record(point, cycle, occupancy as f64)?;
        }
        self.weight_peak = self.weight_peak.max(self.weight_occupied);
        self.input_peak = self.input_peak.max(self.input_occupied);
        self.mapper_cycles += total_cycles;
        self.clock = start + total_cycles;
        Ok(())
    }

    /// SBVP cycle cost of one super-block dot: the 16 tiles are spread
    /// across the lanes, each tile takes `16 / tile_macs_per_cycle`
    /// cycles, minimum one cycle per dot.
    pub fn sbvp_dot_cost(&self) -> u64 {
        let tile_groups = ceil_div(N_TILES as u64, self.config.sbvp_lanes as u64);
        ceil_div(
            tile_groups * TILE_LEN as u64,
            self.config.tile_macs_per_cycle as u64,
        )
        .max(1)
    }

    /// One super-block dot between resident slots. The value is
    /// bit-identical to the reference kernel: exact i32 core, then
    /// `(d_w * d_x) * f32(acc)`.
    pub fn sbvp_dot(&mut self, w_slot: usize, x_slot: usize) -> Result<(f32, u64)> {
        self.check_fault()?;
        let w = match self.weight_buf.get(w_slot) {
            Some(Some(sb)) => sb,
            _ => {
                return self.fault(Error::Scheduler(format!(
                    "weight slot {w_slot} was never written"
                )))
            }
        };
        let x = match self.input_buf.get(x_slot) {
            Some(Some(sb)) => sb,
            _ => {
                return self.fault(Error::Scheduler(format!(
                    "input slot {x_slot} was never written"
                )))
            }
        };
        let mut acc: i32 = 0;
        for t in 0..N_TILES {
            let mut tile_acc: i32 = 0;
            for i in 0..TILE_LEN {
                let idx = t * TILE_LEN + i;
                tile_acc += (w.quants[idx] as i32 - Q3K_LEVEL_BIAS) * x.quants[idx] as i32;
            }
            acc += w.tile_scales[t] as i32 * tile_acc;
            debug_assert!(acc.abs() <= crate::kernel::INT_CORE_BOUND);
        }
        let d_w = crate::codec::decode_fp16(w.super_scale).expect("resident block is valid");
        let d_x = crate::codec::decode_fp16(x.super_scale).expect("resident block is valid");
        let value = (d_w * d_x) * acc as f32;
        let cost = self.sbvp_dot_cost();
        self.sbvp_cycles += cost;
        self.clock += cost;
        Ok((value, cost))
    }

    /// COMPUTE: for every (m, n) accumulate the k super-block dots in
    /// ascending k order, matching the reference kernel bit for bit.
    /// Slot layout: weight slot `n*k_cnt + k`, input slot `m*k_cnt + k`.
    pub fn schedule_compute(&mut self, accumulate: bool) -> Result<()> {
        self.check_fault()?;
        if !self.configured {
            return self.fault(Error::Protocol("COMPUTE before CONFIG".into()));
        }
        if !accumulate {
            for acc in &mut self.accumulators[..self.m_cnt * self.n_cnt] {
                *acc = 0.0;
            }
        }
        for m in 0..self.m_cnt {
            for n in 0..self.n_cnt {
                for k in 0..self.k_cnt {
                    let (value, _) = self.sbvp_dot(n * self.k_cnt + k, m * self.k_cnt + k)?;
                    self.accumulators[m * self.n_cnt + n] += value;
                    self.scheduler_cycles += 1;
                    self.clock += 1;
                }
            }
        }
        self.compute_done = true;
        let busy = self.sbvp_cycles;
        let clock = self.clock;
        self.record(POINT_SBVP_BUSY, clock, busy as f64)?;
        Ok(())
    }

    /// STORE: emit the m_cnt x n_cnt accumulators as row-major f32
    /// words (m outer, n inner).
    pub fn store_outputs(&mut self, out: &mut Vec<u32>) -> Result<()> {
        self.check_fault()?;
        if !self.compute_done {
            return self.fault(Error::Protocol("STORE before a completed COMPUTE".into()));
        }
        let n_out = self.m_cnt * self.n_cnt;
        for acc in &self.accumulators[..n_out] {
            out.push(acc.to_bits());
        }
        let cost = ceil_div(n_out as u64 * 32, self.stream_width());
        self.scheduler_cycles += cost;
        self.clock += cost;
        self.compute_done = false;
        Ok(())
    }

    /// HALT housekeeping: sample final utilization.
    fn halt(&mut self) -> Result<()> {
        let total = self.clock;
        let ratio = if total == 0 {
            0.0
        } else {
            self.sbvp_cycles as f64 / total as f64
        };
        self.record(POINT_SBVP_UTILIZATION, total, ratio)
    }

    /// Snapshot the cycle counters.
    pub fn report(&self) -> SimReport {
        let total = self.clock;
        debug_assert_eq!(
            total,
            self.decoder_cycles + self.mapper_cycles + self.sbvp_cycles + self.scheduler_cycles
        );
        SimReport {
            total_cycles: total,
            decoder_cycles: self.decoder_cycles,
            mapper_cycles: self.mapper_cycles,
            sbvp_cycles: self.sbvp_cycles,
            scheduler_cycles: self.scheduler_cycles,
            sbvp_busy_cycles: self.sbvp_cycles,
            sbvp_idle_cycles: total - self.sbvp_cycles,
            mapper_stall_cycles: 0,
            weight_occupancy_peak: self.weight_peak,
            input_occupancy_peak: self.input_peak,
            output_occupancy_peak: self.output_peak,
            modeled_time_us: total as f64 / self.config.clock_mhz,
        }
    }
}

fn run_session(
    words: &[u32],
    config: &AcceleratorConfig,
    trace: Option<&mut ProfileSession>,
) -> Result<(Vec<u32>, SimReport)> {
    let instructions = isa::decode(words)?;
    match instructions
        .iter()
        .position(|i| matches!(i, Instruction::Halt))
    {
        None => {
            return Err(Error::Protocol("stream does not end with HALT".into()));
        }
        Some(pos) if pos != instructions.len() - 1 => {
            return Err(Error::Protocol(format!(
                "instruction {} follows HALT",
                pos + 1
            )));
        }
        Some(_) => {}
    }

    let mut accel = match trace {
        Some(session) => Accelerator::with_trace(config, session)?,
        None => Accelerator::new(config)?,
    };
    let mut output = Vec::new();
    for (index, instr) in instructions.iter().enumerate() {
        accel.decode_step(instr);
        let (unit, result): (&'static str, Result<()>) = match instr {
            Instruction::Nop | Instruction::Halt => ("decoder", Ok(())),
            Instruction::Config {
                m_cnt,
                n_cnt,
                k_cnt,
            } => ("scheduler", accel.configure(*m_cnt, *n_cnt, *k_cnt)),
            Instruction::LoadWeights { base_slot, payload } => {
                ("mapper", accel.map_weights(payload, *base_slot as usize))
            }
            Instruction::LoadInputs { base_slot, payload } => {
                ("mapper", accel.map_inputs(payload, *base_slot as usize))
            }
            Instruction::Compute { accumulate } => {
                ("scheduler", accel.schedule_compute(*accumulate))
            }
            Instruction::Store => ("scheduler", accel.store_outputs(&mut output)),
        };
        result.map_err(|e| Error::Sim {
            index,
            unit,
            source: Box::new(e),
        })?;
    }
    accel.halt()?;
    let report = accel.report();
    Ok((output, report))
}

/// Execute an instruction stream on a fresh accelerator instance.
///
/// Deterministic: identical (stream, config) pairs produce identical
/// output words and reports.
pub fn simulate_session(
    words: &[u32],
    config: &AcceleratorConfig,
) -> Result<(Vec<u32>, SimReport)> {
    run_session(words, config, None)
}

/// Same as [`simulate_session`] but records the standard capture points
/// into `session`. Profiling has zero effect on the output words or the
/// cycle counts.
pub fn simulate_session_traced(
    words: &[u32],
    config: &AcceleratorConfig,
    session: &mut ProfileSession,
) -> Result<(Vec<u32>, SimReport)> {
    run_session(words, config, Some(session))
}
