//! Command implementations behind the CLI surface, exposed as library
//! functions so the test suites can drive them directly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sbmm_core::codec::{
    quantize_tensor_q3k, quantize_tensor_q8k, Q3K_BITS_PER_WEIGHT, Q8K_BITS_PER_INPUT, SB_LEN,
};
use sbmm_core::driver::{run_matmul, run_matmul_profiled, Backend};
use sbmm_core::kernel::{matmul_fp32, OutputMatrix, QuantMatMulDims};
use sbmm_core::profiler::ProfileSession;
use sbmm_core::sim::AcceleratorConfig;
use sbmm_core::speedup::{estimate_speedup, modeled_cycles, BaselineModel};
use sbmm_core::Error as CoreError;

use crate::error::{io_err, CliError, Result};
use crate::synth::gaussian_matrix;
use crate::tensor::{DType, Tensor, TensorData};

/// Parse "M,N,K" into validated MatMul dims.
pub fn parse_dims(s: &str) -> Result<QuantMatMulDims> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!("--dims expects M,N,K, got {s:?}")));
    }
    let mut v = [0usize; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<usize>()
            .map_err(|e| CliError::Usage(format!("--dims {s:?}: {e}")))?;
    }
    Ok(QuantMatMulDims::new(v[0], v[1], v[2])?)
}

/// Parse a comma list of positive tensor dims.
pub fn parse_dim_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|e| CliError::Usage(format!("bad dim {p:?}: {e}")))
        })
        .collect()
}

/// Write a deterministic seeded Gaussian f32 tensor.
pub fn cmd_gen(dims: &[u64], seed: u64, std: f32, out: &Path) -> Result<String> {
    let count: u64 = dims.iter().product();
    let values = gaussian_matrix(count as usize, 1, seed, std);
    let tensor = Tensor::from_f32(dims.to_vec(), values)?;
    tensor.write_file(out)?;
    Ok(format!(
        "wrote {} ({} x f32, seed {seed})\n",
        out.display(),
        count
    ))
}

/// Quantize an f32 tensor file into packed super-blocks.
pub fn cmd_quantize(input: &Path, format: DType, output: &Path) -> Result<String> {
    let tensor = Tensor::read_file(input)?;
    let values = tensor.as_f32()?;
    let dims = tensor.dims().to_vec();
    let cols = *dims.last().unwrap() as usize;
    if !cols.is_multiple_of(SB_LEN) {
        return Err(CliError::Core(CoreError::Shape(format!(
            "last dim {cols} is not a multiple of {SB_LEN}"
        ))));
    }
    let rows = (tensor.elem_count() as usize) / cols;
    let (data, bits_per_element) = match format {
        DType::Q3K => (
            TensorData::Q3K(quantize_tensor_q3k(values, rows, cols)?.blocks().to_vec()),
            Q3K_BITS_PER_WEIGHT,
        ),
        DType::Q8K => (
            TensorData::Q8K(quantize_tensor_q8k(values, rows, cols)?.blocks().to_vec()),
            Q8K_BITS_PER_INPUT,
        ),
        DType::F32 => {
            return Err(CliError::Usage("--format must be q3k or q8k".into()));
        }
    };
    let out_tensor = Tensor::new(dims, data)?;
    let payload = out_tensor.to_bytes();
    out_tensor.write_file(output)?;
    Ok(format!(
        "wrote {} ({} bytes)\nbits_per_element={bits_per_element}\n",
        output.display(),
        payload.len()
    ))
}

fn matmul_dims(w: &Tensor, x: &Tensor) -> Result<QuantMatMulDims> {
    let (n, wk) = match w.dims() {
        [n, k] => (*n as usize, *k as usize),
        _ => {
            return Err(CliError::Core(CoreError::Shape(
                "weights must be a 2-d tensor".into(),
            )))
        }
    };
    let (m, xk) = match x.dims() {
        [m, k] => (*m as usize, *k as usize),
        _ => {
            return Err(CliError::Core(CoreError::Shape(
                "inputs must be a 2-d tensor".into(),
            )))
        }
    };
    if wk != xk {
        return Err(CliError::Core(CoreError::Shape(format!(
            "weights k = {wk} does not match inputs k = {xk}"
        ))));
    }
    Ok(QuantMatMulDims::new(m, n, wk)?)
}

/// Run a MatMul from tensor files on the selected backend, optionally
/// writing a profile report.
pub fn cmd_matmul(
    weights: &Path,
    inputs: &Path,
    backend: &Backend,
    out: &Path,
    profile: Option<&Path>,
) -> Result<String> {
    let w_tensor = Tensor::read_file(weights)?;
    let x_tensor = Tensor::read_file(inputs)?;
    let dims = matmul_dims(&w_tensor, &x_tensor)?;
    let w = w_tensor.as_q3k_matrix()?;
    let x = x_tensor.as_q8k_matrix()?;

    let output = if let Some(profile_path) = profile {
        let mut session = ProfileSession::new();
        let output = run_matmul_profiled(&w, &x, &dims, backend, &mut session)?;
        session.close()?;
        let report = session.report()?;
        let text = if profile_path.extension().is_some_and(|e| e == "json") {
            report.to_json()
        } else {
            report.to_kv()
        };
        fs::write(profile_path, text).map_err(io_err(profile_path))?;
        output
    } else {
        let (output, _) = run_matmul(&w, &x, &dims, backend)?;
        output
    };

    let out_tensor =
        Tensor::from_f32(vec![dims.m as u64, dims.n as u64], output.values().to_vec())?;
    out_tensor.write_file(out)?;
    Ok(format!(
        "matmul {dims} backend={} -> {}\n",
        backend.name(),
        out.display()
    ))
}

/// Outcome of the cross-backend regression gate.
#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub dims: QuantMatMulDims,
    pub max_abs_err_vs_fp32: f64,
    pub rel_frobenius_err: f64,
    pub report: String,
}

fn quantization_error(quantized: &OutputMatrix, oracle: &OutputMatrix) -> (f64, f64) {
    let mut max_abs = 0f64;
    let mut num = 0f64;
    let mut den = 0f64;
    for (q, f) in quantized.values().iter().zip(oracle.values()) {
        let diff = *q as f64 - *f as f64;
        max_abs = max_abs.max(diff.abs());
        num += diff * diff;
        den += (*f as f64) * (*f as f64);
    }
    let rel = if den == 0.0 { 0.0 } else { (num / den).sqrt() };
    (max_abs, rel)
}

/// Assert reference/simulator bit-exactness on a seeded problem and
/// report the quantization error against the full-precision oracle.
/// `corrupt_sim` flips one output bit after simulation: a negative
/// control proving the gate actually fires.
pub fn run_compare(
    dims: &QuantMatMulDims,
    config: &AcceleratorConfig,
    seed: u64,
    corrupt_sim: bool,
) -> Result<CompareOutcome> {
    let a = gaussian_matrix(dims.m, dims.k, seed, 1.0);
    let b = gaussian_matrix(dims.n, dims.k, seed.wrapping_add(1), 0.5);
    let w = quantize_tensor_q3k(&b, dims.n, dims.k)?;
    let x = quantize_tensor_q8k(&a, dims.m, dims.k)?;

    let (reference, _) = run_matmul(&w, &x, dims, &Backend::Reference)?;
    let (mut simulated, _) = run_matmul(&w, &x, dims, &Backend::Simulator(config.clone()))?;
    if corrupt_sim {
        let v = simulated.get(0, 0);
        simulated.set(0, 0, f32::from_bits(v.to_bits() ^ 1));
    }
    if !reference.bits_eq(&simulated) {
        let mut first = None;
        for m in 0..dims.m {
            for n in 0..dims.n {
                if reference.get(m, n).to_bits() != simulated.get(m, n).to_bits() {
                    first.get_or_insert((m, n));
                }
            }
        }
        let (m, n) = first.unwrap();
        return Err(CliError::Equivalence(format!(
            "dims {dims} seed {seed}: first mismatch at ({m},{n}): \
             reference {:?} vs simulator {:?}",
            reference.get(m, n),
            simulated.get(m, n)
        )));
    }

    let oracle = matmul_fp32(&a, &b, dims.m, dims.n, dims.k)?;
    let (max_abs_err, rel_frobenius) = quantization_error(&reference, &oracle);
    let mut report = String::new();
    let _ = writeln!(report, "compare dims={dims} seed={seed}");
    let _ = writeln!(report, "backend_bit_exact=true");
    let _ = writeln!(report, "max_abs_err_vs_fp32={max_abs_err:e}");
    let _ = writeln!(report, "rel_frobenius_err={rel_frobenius:e}");
    Ok(CompareOutcome {
        dims: *dims,
        max_abs_err_vs_fp32: max_abs_err,
        rel_frobenius_err: rel_frobenius,
        report,
    })
}

/// Which config knob a bench sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKey {
    Lanes,
    StreamWidthBits,
}

impl SweepKey {
    pub fn name(&self) -> &'static str {
        match self {
            SweepKey::Lanes => "lanes",
            SweepKey::StreamWidthBits => "stream_width_bits",
        }
    }

    fn apply(&self, config: &AcceleratorConfig, value: usize) -> AcceleratorConfig {
        let mut c = config.clone();
        match self {
            SweepKey::Lanes => c.sbvp_lanes = value,
            SweepKey::StreamWidthBits => c.stream_width_bits = value,
        }
        c
    }
}

/// Parse "lanes=1,2,4,8" or "stream_width_bits=32,64".
pub fn parse_sweep(s: &str) -> Result<(SweepKey, Vec<usize>)> {
    let (key, values) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--sweep expects key=v1,v2,..., got {s:?}")))?;
    let key = match key.trim() {
        "lanes" | "sbvp_lanes" => SweepKey::Lanes,
        "stream_width_bits" => SweepKey::StreamWidthBits,
        other => {
            return Err(CliError::Usage(format!(
                "unknown sweep key {other:?} (lanes, stream_width_bits)"
            )))
        }
    };
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Usage(format!("sweep value {v:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    Ok((key, values))
}

/// Modeled cycles, time and speedup across one sweep. The speedup column
/// is an estimate from the cycle model, never a hardware measurement,
/// and the report says so.
pub fn run_bench(
    dims: &QuantMatMulDims,
    config: &AcceleratorConfig,
    sweep: Option<(SweepKey, Vec<usize>)>,
    baseline: &BaselineModel,
) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "# bench dims={dims}");
    let _ = writeln!(
        out,
        "# modeled_speedup is a cycle-model estimate against a scalar CPU \
         baseline model; it is not a hardware measurement"
    );
    let points: Vec<(String, AcceleratorConfig)> = match &sweep {
        None => vec![("base".to_string(), config.clone())],
        Some((key, values)) => values
            .iter()
            .map(|&v| (format!("{}={v}", key.name()), key.apply(config, v)))
            .collect(),
    };
    for (label, point_config) in points {
        let report = modeled_cycles(dims, &point_config)?;
        let speedup = estimate_speedup(dims, &point_config, baseline)?;
        let _ = writeln!(
            out,
            "{label} total_cycles={} modeled_time_us={:.3} modeled_speedup={speedup:.4}",
            report.total_cycles, report.modeled_time_us
        );
    }
    Ok(out)
}

/// Op-count report for a transformer shape at one context position.
pub fn cmd_opcount(shape_path: &Path, context: u64) -> Result<String> {
    let shape = crate::kvfile::model_shape_from_file(shape_path)?;
    let breakdown = crate::opcount::opcount(&shape, context)?;
    Ok(breakdown.to_text())
}
