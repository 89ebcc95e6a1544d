//! Host-side driver: tiles a MatMul over the accelerator's buffer
//! capacity, serializes instruction streams, dispatches to a backend
//! selected at run time (reference kernel or simulated accelerator) and
//! scatters the outputs back into the full matrix.
//!
//! Both backends return bit-identical matrices; the simulator path goes
//! through the full pack / stream / map / compute / store pipeline.

use crate::codec::{pack_q3k, pack_q8k, Q3KMatrix, Q8KMatrix};
use crate::error::{Error, Result};
use crate::kernel::{matmul_q3k_q8k, OutputMatrix, QuantMatMulDims};
use crate::profiler::{DriverPhase, DriverProfile, ProfileSession};
use crate::sim::isa::{Instruction, Q3K_PAYLOAD_BYTES, Q8K_PAYLOAD_BYTES};
use crate::sim::{simulate_session, simulate_session_traced, AcceleratorConfig};

/// Execution target of one driver session.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    /// Run the reference kernel directly.
    Reference,
    /// Drive a simulated accelerator with this configuration.
    Simulator(AcceleratorConfig),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Reference => "reference",
            Backend::Simulator(_) => "simulator",
        }
    }
}

/// One resident tile of the iteration space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileBlock {
    pub m_off: usize,
    pub n_off: usize,
    /// Offset in super-blocks along k.
    pub k_off: usize,
    pub m_cnt: usize,
    pub n_cnt: usize,
    pub k_cnt: usize,
}

/// Ordered tile blocks covering the full (M, N, K_sb) space exactly once,
/// with ascending k inside each (m_off, n_off) group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilingPlan {
    pub m: usize,
    pub n: usize,
    pub k_sb: usize,
    pub blocks: Vec<TileBlock>,
}

impl TilingPlan {
    /// Blocks that end their (m_off, n_off) group and therefore STORE.
    pub fn is_store_block(&self, block: &TileBlock) -> bool {
        block.k_off + block.k_cnt == self.k_sb
    }
}

/// Choose resident tile sizes greedily: maximize k first (deepest
/// accumulation per load), then n, then m, under
/// `n_cnt * k_cnt <= weight_slots`, `m_cnt * k_cnt <= input_slots` and
/// `m_cnt * n_cnt <= output_slots`.
pub fn plan_tiling(dims: &QuantMatMulDims, config: &AcceleratorConfig) -> Result<TilingPlan> {
    config
        .validate()
        .map_err(|e| Error::Capacity(format!("cannot tile for this accelerator: {e}")))?;
    let k_sb = dims.k_sb();
    // A 1x1x1 tile always fits once the config validated as positive.
    let k_cnt = k_sb.min(config.weight_slots).min(config.input_slots);
    let n_cnt = dims
        .n
        .min(config.weight_slots / k_cnt)
        .min(config.output_slots);
    let m_cnt = dims
        .m
        .min(config.input_slots / k_cnt)
        .min(config.output_slots / n_cnt);
    debug_assert!(m_cnt >= 1 && n_cnt >= 1);

    let mut blocks = Vec::new();
    let mut m_off = 0;
    while m_off < dims.m {
        let m_here = m_cnt.min(dims.m - m_off);
        let mut n_off = 0;
        while n_off < dims.n {
            let n_here = n_cnt.min(dims.n - n_off);
            let mut k_off = 0;
            while k_off < k_sb {
                let k_here = k_cnt.min(k_sb - k_off);
                blocks.push(TileBlock {
                    m_off,
                    n_off,
                    k_off,
                    m_cnt: m_here,
                    n_cnt: n_here,
                    k_cnt: k_here,
                });
                k_off += k_here;
            }
            n_off += n_here;
        }
        m_off += m_here;
    }
    Ok(TilingPlan {
        m: dims.m,
        n: dims.n,
        k_sb,
        blocks,
    })
}

fn pad_payload(payload: &mut Vec<u8>, packed: &[u8]) {
    payload.extend_from_slice(packed);
    payload.extend_from_slice(&[0, 0]);
}

/// Serialize a plan into the instruction stream: per tile block one
/// CONFIG / LOAD_W / LOAD_X / COMPUTE group, a STORE when the k sweep of
/// its (m, n) group completes, and a final HALT. COMPUTE accumulates
/// whenever the block continues a k sweep (`k_off > 0`).
pub fn build_stream(plan: &TilingPlan, w: &Q3KMatrix, x: &Q8KMatrix) -> Result<Vec<u32>> {
    if w.rows() != plan.n || w.blocks_per_row() != plan.k_sb {
        return Err(Error::Shape(format!(
            "weight blocks are {}x{}, plan requires {}x{}",
            w.rows(),
            w.blocks_per_row(),
            plan.n,
            plan.k_sb
        )));
    }
    if x.rows() != plan.m || x.blocks_per_row() != plan.k_sb {
        return Err(Error::Shape(format!(
            "input blocks are {}x{}, plan requires {}x{}",
            x.rows(),
            x.blocks_per_row(),
            plan.m,
            plan.k_sb
        )));
    }
    let mut words = Vec::new();
    for block in &plan.blocks {
        Instruction::Config {
            m_cnt: block.m_cnt as u32,
            n_cnt: block.n_cnt as u32,
            k_cnt: block.k_cnt as u32,
        }
        .encode_into(&mut words);

        let mut w_payload = Vec::with_capacity(block.n_cnt * block.k_cnt * Q3K_PAYLOAD_BYTES);
        for n in 0..block.n_cnt {
            for k in 0..block.k_cnt {
                pad_payload(
                    &mut w_payload,
                    &pack_q3k(w.block(block.n_off + n, block.k_off + k)),
                );
            }
        }
        Instruction::LoadWeights {
            base_slot: 0,
            payload: w_payload,
        }
        .encode_into(&mut words);

        let mut x_payload = Vec::with_capacity(block.m_cnt * block.k_cnt * Q8K_PAYLOAD_BYTES);
        for m in 0..block.m_cnt {
            for k in 0..block.k_cnt {
                pad_payload(
                    &mut x_payload,
                    &pack_q8k(x.block(block.m_off + m, block.k_off + k)),
                );
            }
        }
        Instruction::LoadInputs {
            base_slot: 0,
            payload: x_payload,
        }
        .encode_into(&mut words);

        Instruction::Compute {
            accumulate: block.k_off > 0,
        }
        .encode_into(&mut words);

        if plan.is_store_block(block) {
            Instruction::Store.encode_into(&mut words);
        }
    }
    Instruction::Halt.encode_into(&mut words);
    Ok(words)
}

/// Scatter the accelerator's output words back into the full matrix.
/// Each STORE emitted `m_cnt * n_cnt` row-major f32 words.
pub fn unpack_outputs(words: &[u32], plan: &TilingPlan) -> Result<OutputMatrix> {
    let mut out = OutputMatrix::zeroed(plan.m, plan.n);
    let mut pos = 0usize;
    for block in &plan.blocks {
        if !plan.is_store_block(block) {
            continue;
        }
        let need = block.m_cnt * block.n_cnt;
        if pos + need > words.len() {
            return Err(Error::Protocol(format!(
                "output stream truncated: need {} words, have {}",
                pos + need,
                words.len()
            )));
        }
        for m in 0..block.m_cnt {
            for n in 0..block.n_cnt {
                let v = f32::from_bits(words[pos + m * block.n_cnt + n]);
                out.set(block.m_off + m, block.n_off + n, v);
            }
        }
        pos += need;
    }
    if pos != words.len() {
        return Err(Error::Protocol(format!(
            "output stream has {} trailing words",
            words.len() - pos
        )));
    }
    Ok(out)
}

fn check_run_shapes(w: &Q3KMatrix, x: &Q8KMatrix, dims: &QuantMatMulDims) -> Result<()> {
    if w.rows() != dims.n || w.blocks_per_row() != dims.k_sb() {
        return Err(Error::Shape(format!(
            "weight blocks are {}x{}, dims require {}x{}",
            w.rows(),
            w.blocks_per_row(),
            dims.n,
            dims.k_sb()
        )));
    }
    if x.rows() != dims.m || x.blocks_per_row() != dims.k_sb() {
        return Err(Error::Shape(format!(
            "input blocks are {}x{}, dims require {}x{}",
            x.rows(),
            x.blocks_per_row(),
            dims.m,
            dims.k_sb()
        )));
    }
    Ok(())
}

fn run_in_session(
    w: &Q3KMatrix,
    x: &Q8KMatrix,
    dims: &QuantMatMulDims,
    backend: &Backend,
    session: &mut ProfileSession,
    capture: bool,
) -> Result<OutputMatrix> {
    match backend {
        Backend::Reference => {
            session.with_phase(DriverPhase::SendInput, |_| check_run_shapes(w, x, dims))?;
            let out =
                session.with_phase(DriverPhase::WaitCompute, |_| matmul_q3k_q8k(w, x, dims))?;
            session.with_phase(DriverPhase::UnpackOutput, |s| {
                s.add_traffic(0, 0, (out.values().len() * 4) as u64);
                Ok(out)
            })
        }
        Backend::Simulator(config) => {
            let plan = plan_tiling(dims, config)?;
            let stream = session.with_phase(DriverPhase::SendInput, |s| {
                let stream = build_stream(&plan, w, x)?;
                let blocks: usize = plan
                    .blocks
                    .iter()
                    .map(|b| b.n_cnt * b.k_cnt + b.m_cnt * b.k_cnt)
                    .sum();
                s.add_traffic(blocks as u64, (stream.len() * 4) as u64, 0);
                Ok(stream)
            })?;
            let out_words = session.with_phase(DriverPhase::WaitCompute, |s| {
                let (out_words, report) = if capture {
                    simulate_session_traced(&stream, config, s)?
                } else {
                    simulate_session(&stream, config)?
                };
                s.set_sim_report(report);
                Ok(out_words)
            })?;
            session.with_phase(DriverPhase::UnpackOutput, |s| {
                s.add_traffic(0, 0, (out_words.len() * 4) as u64);
                unpack_outputs(&out_words, &plan)
            })
        }
    }
}

/// Run a full quantized MatMul on the selected backend.
///
/// Returns the output matrix and the phase breakdown. The phase timer is
/// always on (it is part of the return contract); capture-point
/// profiling only happens through [`run_matmul_profiled`].
pub fn run_matmul(
    w: &Q3KMatrix,
    x: &Q8KMatrix,
    dims: &QuantMatMulDims,
    backend: &Backend,
) -> Result<(OutputMatrix, DriverProfile)> {
    let mut session = ProfileSession::new();
    let out = run_in_session(w, x, dims, backend, &mut session, false)?;
    Ok((out, session.driver_profile()))
}

/// Run a MatMul while recording capture points and phase times into an
/// existing profiling session. Enabling this never changes output bits.
pub fn run_matmul_profiled(
    w: &Q3KMatrix,
    x: &Q8KMatrix,
    dims: &QuantMatMulDims,
    backend: &Backend,
    session: &mut ProfileSession,
) -> Result<OutputMatrix> {
    run_in_session(w, x, dims, backend, session, true)
}
