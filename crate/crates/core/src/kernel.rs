//! Reference quantized MatMul kernel.
//!
//! The super-block dot product runs entirely in 32-bit signed integers
//! (worst case magnitude 8 193 024, bounded by [`INT_CORE_BOUND`]) and is
//! scaled once at the end: `(d_w * d_x) * f32(acc)`, in that fixed order.
//! Matrix outputs accumulate block dot products in f32, ascending k. Both
//! orderings are normative: they define the bit-exactness contract the
//! simulated accelerator must reproduce.

use crate::codec::{decode_fp16, Q3KMatrix, Q8KMatrix, SuperBlockQ3K, SuperBlockQ8K, SB_LEN};
use crate::codec::{N_TILES, Q3K_LEVEL_BIAS, TILE_LEN};
use crate::error::{Error, Result};

/// Worst-case magnitude of the integer accumulator
/// (16 tiles * 63 * 16 * 4 * 128, comfortably inside i32).
pub const INT_CORE_BOUND: i32 = 8_257_536;

/// Shape of a quantized MatMul: M input rows, N weight rows (= output
/// columns), K shared elements (multiple of 256).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantMatMulDims {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl QuantMatMulDims {
    pub fn new(m: usize, n: usize, k: usize) -> Result<Self> {
        if m == 0 || n == 0 || k == 0 {
            return Err(Error::Shape(format!("dims {m}x{n}x{k} must be positive")));
        }
        if !k.is_multiple_of(SB_LEN) {
            return Err(Error::Shape(format!(
                "k = {k} is not a multiple of {SB_LEN}"
            )));
        }
        Ok(QuantMatMulDims { m, n, k })
    }

    /// Super-blocks per row along the shared dimension.
    pub fn k_sb(&self) -> usize {
        self.k / SB_LEN
    }

    /// Total multiply-accumulates of the dense problem.
    pub fn macs(&self) -> u64 {
        self.m as u64 * self.n as u64 * self.k as u64
    }
}

impl std::fmt::Display for QuantMatMulDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.m, self.n, self.k)
    }
}

/// Row-major M x N matrix of f32 outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputMatrix {
    m: usize,
    n: usize,
    values: Vec<f32>,
}

impl OutputMatrix {
    pub fn zeroed(m: usize, n: usize) -> Self {
        OutputMatrix {
            m,
            n,
            values: vec![0.0; m * n],
        }
    }

    pub fn from_values(m: usize, n: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != m * n {
            return Err(Error::Shape(format!(
                "{} values do not fill a {m} x {n} matrix",
                values.len()
            )));
        }
        Ok(OutputMatrix { m, n, values })
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> f32 {
        self.values[m * self.n + n]
    }

    #[inline]
    pub fn set(&mut self, m: usize, n: usize, v: f32) {
        self.values[m * self.n + n] = v;
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Bit-level equality (distinguishes -0.0 from 0.0, unlike `==`).
    pub fn bits_eq(&self, other: &OutputMatrix) -> bool {
        self.m == other.m
            && self.n == other.n
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Scaled dot product of a weight and an input super-block.
///
/// `acc = sum_t scale_t * sum_i level[16t+i] * qx[16t+i]` in exact i32
/// arithmetic, then `(d_w * d_x) * f32(acc)`.
pub fn dot_superblock(w: &SuperBlockQ3K, x: &SuperBlockQ8K) -> f32 {
    let mut acc: i32 = 0;
    for t in 0..N_TILES {
        let mut tile_acc: i32 = 0;
        for i in 0..TILE_LEN {
            let idx = t * TILE_LEN + i;
            tile_acc += (w.quants[idx] as i32 - Q3K_LEVEL_BIAS) * x.quants[idx] as i32;
        }
        acc += w.tile_scales[t] as i32 * tile_acc;
        debug_assert!(acc.abs() <= INT_CORE_BOUND);
    }
    let d_w = decode_fp16(w.super_scale).expect("valid block has a finite super scale");
    let d_x = decode_fp16(x.super_scale).expect("valid block has a finite super scale");
    (d_w * d_x) * acc as f32
}

fn check_matmul_shapes(w: &Q3KMatrix, x: &Q8KMatrix, dims: &QuantMatMulDims) -> Result<()> {
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

/// Blocked quantized MatMul: `out[m,n] = sum_k dot(W[n,k], X[m,k])`,
/// f32 accumulation in ascending k order.
///
/// Weights are stored transposed (N rows of length K) so each output
/// column reads one weight row.
pub fn matmul_q3k_q8k(
    w: &Q3KMatrix,
    x: &Q8KMatrix,
    dims: &QuantMatMulDims,
) -> Result<OutputMatrix> {
    check_matmul_shapes(w, x, dims)?;
    let mut out = OutputMatrix::zeroed(dims.m, dims.n);
    for m in 0..dims.m {
        for n in 0..dims.n {
            let mut acc = 0f32;
            for k in 0..dims.k_sb() {
                acc += dot_superblock(w.block(n, k), x.block(m, k));
            }
            out.set(m, n, acc);
        }
    }
    Ok(out)
}

/// Full-precision oracle: `out[m,n] = sum_k a[m,k] * b[n,k]`, accumulated
/// in f64 and rounded to f32 at the end.
pub fn matmul_fp32(a: &[f32], b: &[f32], m: usize, n: usize, k: usize) -> Result<OutputMatrix> {
    if a.len() != m * k {
        return Err(Error::Shape(format!(
            "a has {} values, expected {m} x {k}",
            a.len()
        )));
    }
    if b.len() != n * k {
        return Err(Error::Shape(format!(
            "b has {} values, expected {n} x {k}",
            b.len()
        )));
    }
    let mut out = OutputMatrix::zeroed(m, n);
    for mi in 0..m {
        for ni in 0..n {
            let mut acc = 0f64;
            for ki in 0..k {
                acc += a[mi * k + ki] as f64 * b[ni * k + ki] as f64;
            }
            out.set(mi, ni, acc as f32);
        }
    }
    Ok(out)
}
