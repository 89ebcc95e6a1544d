//! Super-block codecs for 3-bit weights (Q3_K layout) and 8-bit inputs
//! (Q8_K layout).
//!
//! A weight super-block holds 256 values split into 16 tiles of 16. Each
//! tile carries an unsigned 6-bit scale and each value is stored as an
//! unsigned 3-bit field (`stored = level + 4`, level in `[-4, 3]`). One
//! binary16 super-scale multiplies every tile scale, which packs to
//! 110 bytes per block (3.4375 bits per weight).
//!
//! An input super-block holds 256 signed 8-bit values (`-128` is never
//! produced) and one binary16 super-scale: 258 bytes per block
//! (8.0625 bits per input).
//!
//! The packed byte layout is canonical for this project and is *not*
//! wire-compatible with GGML's q3_K/q8_K layouts: quants and tile scales
//! are packed LSB-first in flat index order, and the super-scale is
//! appended little-endian.

use crate::error::{Error, Result};

/// Values per super-block.
pub const SB_LEN: usize = 256;
/// Values per tile.
pub const TILE_LEN: usize = 16;
/// Tiles per super-block.
pub const N_TILES: usize = SB_LEN / TILE_LEN;
/// Packed size of a weight super-block: 256*3 + 16*6 + 16 bits.
pub const Q3K_PACKED_LEN: usize = 110;
/// Packed size of an input super-block: 256*8 + 16 bits.
pub const Q8K_PACKED_LEN: usize = 258;
/// Bits per weight for the packed Q3_K layout.
pub const Q3K_BITS_PER_WEIGHT: f64 = Q3K_PACKED_LEN as f64 * 8.0 / SB_LEN as f64;
/// Bits per input for the packed Q8_K layout.
pub const Q8K_BITS_PER_INPUT: f64 = Q8K_PACKED_LEN as f64 * 8.0 / SB_LEN as f64;
/// Offset between the stored 3-bit field and the signed weight level.
pub const Q3K_LEVEL_BIAS: i32 = 4;

/// Reconstruction workspace for one tile of a super-block.
pub type DequantTile = [f32; TILE_LEN];

const F16_MAX: f32 = 65504.0;
const F32_2_POW_NEG_24: f32 = 1.0 / 16_777_216.0;

/// 256 quantized 3-bit weights in 16 tiles, with 6-bit tile scales and a
/// binary16 super-scale.
///
/// Invariants: every `quants` entry is in `[0, 7]`, every tile scale in
/// `[0, 63]`, and `super_scale` is a finite non-negative binary16 pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperBlockQ3K {
    /// Stored 3-bit fields, flat index order (tile t covers `[16t, 16t+15]`).
    pub quants: [u8; SB_LEN],
    /// Unsigned 6-bit tile scales.
    pub tile_scales: [u8; N_TILES],
    /// Binary16 super-scaling factor.
    pub super_scale: u16,
}

/// 256 signed 8-bit quantized inputs with a binary16 super-scale.
///
/// Invariants: quants in `[-127, 127]`, super-scale finite non-negative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperBlockQ8K {
    pub quants: [i8; SB_LEN],
    pub super_scale: u16,
}

impl SuperBlockQ3K {
    /// The all-zero block: every level 0 (stored 4), all scales zero.
    pub fn zero() -> Self {
        SuperBlockQ3K {
            quants: [Q3K_LEVEL_BIAS as u8; SB_LEN],
            tile_scales: [0; N_TILES],
            super_scale: 0,
        }
    }

    /// Check the type invariants.
    pub fn validate(&self) -> Result<()> {
        if let Some(q) = self.quants.iter().find(|&&q| q > 7) {
            return Err(Error::Format(format!("q3k quant {q} exceeds 3-bit range")));
        }
        if let Some(s) = self.tile_scales.iter().find(|&&s| s > 63) {
            return Err(Error::Format(format!(
                "q3k tile scale {s} exceeds 6-bit range"
            )));
        }
        validate_scale_pattern(self.super_scale)
    }

    /// Signed level of element `idx` (stored field minus the bias).
    #[inline]
    pub fn level(&self, idx: usize) -> i32 {
        self.quants[idx] as i32 - Q3K_LEVEL_BIAS
    }

    /// Reconstruct one tile: `d_hat * tile_scale * level`.
    pub fn dequant_tile(&self, tile: usize) -> DequantTile {
        let d_hat = decode_fp16(self.super_scale).expect("valid block has a finite super scale");
        let eff = d_hat * self.tile_scales[tile] as f32;
        let mut out = [0f32; TILE_LEN];
        for (i, o) in out.iter_mut().enumerate() {
            *o = eff * self.level(tile * TILE_LEN + i) as f32;
        }
        out
    }
}

impl SuperBlockQ8K {
    /// The all-zero block.
    pub fn zero() -> Self {
        SuperBlockQ8K {
            quants: [0; SB_LEN],
            super_scale: 0,
        }
    }

    /// Check the type invariants.
    pub fn validate(&self) -> Result<()> {
        if self.quants.contains(&i8::MIN) {
            return Err(Error::Format("q8k quant -128 is not a valid level".into()));
        }
        validate_scale_pattern(self.super_scale)
    }
}

fn validate_scale_pattern(bits: u16) -> Result<()> {
    if bits & 0x8000 != 0 {
        return Err(Error::Format(format!(
            "super scale {bits:#06x} has the sign bit set"
        )));
    }
    if bits & 0x7C00 == 0x7C00 {
        return Err(Error::Format(format!(
            "super scale {bits:#06x} is NaN or infinity"
        )));
    }
    Ok(())
}

/// Encode a float as IEEE 754 binary16, round-to-nearest-even.
///
/// Rejects non-finite inputs and magnitudes above 65504.
pub fn encode_fp16(x: f32) -> Result<u16> {
    if !x.is_finite() {
        return Err(Error::Range(format!("{x} is not encodable as binary16")));
    }
    if x.abs() > F16_MAX {
        return Err(Error::Range(format!(
            "|{x}| exceeds the binary16 maximum {F16_MAX}"
        )));
    }
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let abs = bits & 0x7FFF_FFFF;
    if abs == 0 {
        return Ok(sign);
    }
    let exp = (abs >> 23) as i32 - 127;
    let mant = abs & 0x007F_FFFF;
    if exp >= -14 {
        // Normal half range. Round the 23-bit mantissa down to 10 bits;
        // a carry out of the mantissa flows into the exponent field.
        let base = (((exp + 15) as u32) << 10) | (mant >> 13);
        let round = mant & 0x1FFF;
        let up = round > 0x1000 || (round == 0x1000 && base & 1 == 1);
        Ok(sign | (base + up as u32) as u16)
    } else if exp >= -25 {
        // Subnormal half: value = f * 2^-24 with f a rounded 10-bit integer.
        let mant24 = mant | 0x0080_0000;
        let shift = (-exp - 1) as u32;
        let kept = mant24 >> shift;
        let rem = mant24 & ((1u32 << shift) - 1);
        let half = 1u32 << (shift - 1);
        let up = rem > half || (rem == half && kept & 1 == 1);
        Ok(sign | (kept + up as u32) as u16)
    } else {
        // Below half the smallest subnormal: rounds to (signed) zero.
        Ok(sign)
    }
}

/// Widen a binary16 pattern to f32, exactly.
///
/// NaN and infinity patterns are rejected.
pub fn decode_fp16(bits: u16) -> Result<f32> {
    let exp = (bits >> 10) & 0x1F;
    if exp == 0x1F {
        return Err(Error::Format(format!(
            "binary16 pattern {bits:#06x} is NaN or infinity"
        )));
    }
    let mant = (bits & 0x03FF) as u32;
    let mag = if exp == 0 {
        // Subnormal: mant * 2^-24, exact in f32.
        mant as f32 * F32_2_POW_NEG_24
    } else {
        f32::from_bits(((exp as u32 + 112) << 23) | (mant << 13))
    };
    Ok(if bits & 0x8000 != 0 { -mag } else { mag })
}

fn ensure_finite(values: &[f32]) -> Result<()> {
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Range(format!("non-finite input {v} at index {i}")));
    }
    Ok(())
}

fn ensure_block_len(values: &[f32]) -> Result<()> {
    if values.len() != SB_LEN {
        return Err(Error::Shape(format!(
            "super-block expects {SB_LEN} values, got {}",
            values.len()
        )));
    }
    Ok(())
}

/// Quantize 256 floats into a weight super-block.
///
/// Per tile the real scale is `s_t = amax_t / 4` (targeting the level grid
/// `[-4, 3]`); the super-scale is `d = max_t s_t / 63`, stored as binary16
/// and reconstructed as `d_hat` before any further use. Tile scales are
/// `clamp(round(s_t / d_hat), 0, 63)` and levels are
/// `clamp(round(x / (d_hat * scale_t)), -4, 3)`. `round` is
/// round-half-away-from-zero. Zero effective scales store level 0.
pub fn quantize_q3k(values: &[f32]) -> Result<SuperBlockQ3K> {
    ensure_block_len(values)?;
    ensure_finite(values)?;

    let mut real_scales = [0f32; N_TILES];
    for (t, tile) in values.chunks_exact(TILE_LEN).enumerate() {
        let amax = tile.iter().fold(0f32, |a, v| a.max(v.abs()));
        real_scales[t] = amax / 4.0;
    }
    let max_scale = real_scales.iter().fold(0f32, |a, &s| a.max(s));
    let super_scale = encode_fp16(max_scale / 63.0)?;
    let d_hat = decode_fp16(super_scale).expect("encoder emits finite patterns");

    let mut sb = SuperBlockQ3K::zero();
    sb.super_scale = super_scale;
    if d_hat == 0.0 {
        return Ok(sb);
    }
    for (t, &real_scale) in real_scales.iter().enumerate() {
        let q_scale = (real_scale / d_hat).round().clamp(0.0, 63.0) as u8;
        sb.tile_scales[t] = q_scale;
        let eff = d_hat * q_scale as f32;
        if eff == 0.0 {
            continue; // levels stay 0
        }
        for i in 0..TILE_LEN {
            let idx = t * TILE_LEN + i;
            let level = (values[idx] / eff).round().clamp(-4.0, 3.0) as i32;
            sb.quants[idx] = (level + Q3K_LEVEL_BIAS) as u8;
        }
    }
    Ok(sb)
}

/// Reconstruct the 256 weights of a super-block.
///
/// `x[16t+i] = d_hat * tile_scales[t] * (quants[16t+i] - 4)`. Total on
/// valid blocks; panics if the super-scale pattern violates the invariant.
pub fn dequantize_q3k(sb: &SuperBlockQ3K) -> [f32; SB_LEN] {
    let d_hat = decode_fp16(sb.super_scale).expect("valid block has a finite super scale");
    let mut out = [0f32; SB_LEN];
    for t in 0..N_TILES {
        let eff = d_hat * sb.tile_scales[t] as f32;
        for i in 0..TILE_LEN {
            let idx = t * TILE_LEN + i;
            out[idx] = eff * sb.level(idx) as f32;
        }
    }
    out
}

/// Quantize 256 floats into an input super-block.
///
/// `d = amax / 127`, stored as binary16 and reconstructed before use;
/// quants are `clamp(round(x / d_hat), -127, 127)` so `-128` never occurs.
pub fn quantize_q8k(values: &[f32]) -> Result<SuperBlockQ8K> {
    ensure_block_len(values)?;
    ensure_finite(values)?;

    let amax = values.iter().fold(0f32, |a, v| a.max(v.abs()));
    let super_scale = encode_fp16(amax / 127.0)?;
    let d_hat = decode_fp16(super_scale).expect("encoder emits finite patterns");

    let mut sb = SuperBlockQ8K::zero();
    sb.super_scale = super_scale;
    if d_hat == 0.0 {
        return Ok(sb);
    }
    for (q, &x) in sb.quants.iter_mut().zip(values) {
        *q = (x / d_hat).round().clamp(-127.0, 127.0) as i8;
    }
    Ok(sb)
}

/// Reconstruct the 256 inputs of a super-block.
pub fn dequantize_q8k(sb: &SuperBlockQ8K) -> [f32; SB_LEN] {
    let d_hat = decode_fp16(sb.super_scale).expect("valid block has a finite super scale");
    let mut out = [0f32; SB_LEN];
    for (o, &q) in out.iter_mut().zip(&sb.quants) {
        *o = d_hat * q as f32;
    }
    out
}

/// Pack sub-byte fields LSB-first into a little-endian bit stream.
fn pack_bits_lsb(values: &[u8], width: usize, out: &mut [u8]) {
    debug_assert_eq!(out.len() * 8, values.len() * width);
    let mut bit = 0usize;
    for &v in values {
        debug_assert!((v as u32) < (1 << width));
        let byte = bit / 8;
        let off = bit % 8;
        let chunk = (v as u16) << off;
        out[byte] |= chunk as u8;
        if off + width > 8 {
            out[byte + 1] |= (chunk >> 8) as u8;
        }
        bit += width;
    }
}

/// Inverse of [`pack_bits_lsb`].
fn unpack_bits_lsb(bytes: &[u8], width: usize, out: &mut [u8]) {
    let mask = (1u16 << width) - 1;
    let mut bit = 0usize;
    for v in out.iter_mut() {
        let byte = bit / 8;
        let off = bit % 8;
        let mut chunk = (bytes[byte] as u16) >> off;
        if off + width > 8 {
            chunk |= (bytes[byte + 1] as u16) << (8 - off);
        }
        *v = (chunk & mask) as u8;
        bit += width;
    }
}

/// Pack a weight super-block into its canonical 110-byte layout.
///
/// Bytes 0..96 hold the 256 3-bit quants LSB-first in flat order, bytes
/// 96..108 the 16 6-bit tile scales LSB-first, bytes 108..110 the
/// super-scale little-endian.
pub fn pack_q3k(sb: &SuperBlockQ3K) -> [u8; Q3K_PACKED_LEN] {
    debug_assert!(sb.validate().is_ok());
    let mut out = [0u8; Q3K_PACKED_LEN];
    pack_bits_lsb(&sb.quants, 3, &mut out[0..96]);
    pack_bits_lsb(&sb.tile_scales, 6, &mut out[96..108]);
    out[108..110].copy_from_slice(&sb.super_scale.to_le_bytes());
    out
}

/// Exact inverse of [`pack_q3k`].
///
/// Rejects wrong lengths and super-scale patterns that violate the type
/// invariant (NaN/infinity or sign bit set); every 3- and 6-bit field
/// pattern is valid by construction.
pub fn unpack_q3k(bytes: &[u8]) -> Result<SuperBlockQ3K> {
    if bytes.len() != Q3K_PACKED_LEN {
        return Err(Error::Format(format!(
            "packed q3k block is {Q3K_PACKED_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    let mut sb = SuperBlockQ3K {
        quants: [0; SB_LEN],
        tile_scales: [0; N_TILES],
        super_scale: u16::from_le_bytes([bytes[108], bytes[109]]),
    };
    unpack_bits_lsb(&bytes[0..96], 3, &mut sb.quants);
    unpack_bits_lsb(&bytes[96..108], 6, &mut sb.tile_scales);
    validate_scale_pattern(sb.super_scale)?;
    Ok(sb)
}

/// Pack an input super-block: 256 two's-complement bytes then the
/// super-scale little-endian.
pub fn pack_q8k(sb: &SuperBlockQ8K) -> [u8; Q8K_PACKED_LEN] {
    debug_assert!(sb.validate().is_ok());
    let mut out = [0u8; Q8K_PACKED_LEN];
    for (o, &q) in out[..SB_LEN].iter_mut().zip(&sb.quants) {
        *o = q as u8;
    }
    out[256..258].copy_from_slice(&sb.super_scale.to_le_bytes());
    out
}

/// Exact inverse of [`pack_q8k`]; rejects wrong lengths, the `-128` byte
/// (never emitted by the encoder) and invalid super-scale patterns.
pub fn unpack_q8k(bytes: &[u8]) -> Result<SuperBlockQ8K> {
    if bytes.len() != Q8K_PACKED_LEN {
        return Err(Error::Format(format!(
            "packed q8k block is {Q8K_PACKED_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    let mut sb = SuperBlockQ8K {
        quants: [0; SB_LEN],
        super_scale: u16::from_le_bytes([bytes[256], bytes[257]]),
    };
    for (q, &b) in sb.quants.iter_mut().zip(&bytes[..SB_LEN]) {
        *q = b as i8;
    }
    sb.validate()?;
    Ok(sb)
}

/// A row-major matrix of weight super-blocks (`rows x blocks_per_row`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Q3KMatrix {
    rows: usize,
    blocks_per_row: usize,
    blocks: Vec<SuperBlockQ3K>,
}

/// A row-major matrix of input super-blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Q8KMatrix {
    rows: usize,
    blocks_per_row: usize,
    blocks: Vec<SuperBlockQ8K>,
}

macro_rules! impl_block_matrix {
    ($name:ident, $block:ty) => {
        impl $name {
            pub fn from_blocks(
                rows: usize,
                blocks_per_row: usize,
                blocks: Vec<$block>,
            ) -> Result<Self> {
                if blocks.len() != rows * blocks_per_row {
                    return Err(Error::Shape(format!(
                        "{} blocks do not tile {rows} x {blocks_per_row}",
                        blocks.len()
                    )));
                }
                Ok(Self {
                    rows,
                    blocks_per_row,
                    blocks,
                })
            }

            pub fn rows(&self) -> usize {
                self.rows
            }

            pub fn blocks_per_row(&self) -> usize {
                self.blocks_per_row
            }

            /// Columns of the dense matrix this represents.
            pub fn cols(&self) -> usize {
                self.blocks_per_row * SB_LEN
            }

            pub fn block(&self, row: usize, k: usize) -> &$block {
                &self.blocks[row * self.blocks_per_row + k]
            }

            pub fn blocks(&self) -> &[$block] {
                &self.blocks
            }
        }
    };
}

impl_block_matrix!(Q3KMatrix, SuperBlockQ3K);
impl_block_matrix!(Q8KMatrix, SuperBlockQ8K);

fn check_tensor_shape(len: usize, rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::Shape("matrix dimensions must be positive".into()));
    }
    if !cols.is_multiple_of(SB_LEN) {
        return Err(Error::Shape(format!(
            "column count {cols} is not a multiple of {SB_LEN}"
        )));
    }
    if len != rows * cols {
        return Err(Error::Shape(format!(
            "{len} values do not fill a {rows} x {cols} matrix"
        )));
    }
    Ok(())
}

/// Quantize a row-major `rows x cols` matrix into weight super-blocks.
/// Row r, block k covers elements `[r, 256k .. 256k+255]`.
pub fn quantize_tensor_q3k(values: &[f32], rows: usize, cols: usize) -> Result<Q3KMatrix> {
    check_tensor_shape(values.len(), rows, cols)?;
    let blocks = values
        .chunks_exact(SB_LEN)
        .map(quantize_q3k)
        .collect::<Result<Vec<_>>>()?;
    Q3KMatrix::from_blocks(rows, cols / SB_LEN, blocks)
}

/// Quantize a row-major matrix into input super-blocks.
pub fn quantize_tensor_q8k(values: &[f32], rows: usize, cols: usize) -> Result<Q8KMatrix> {
    check_tensor_shape(values.len(), rows, cols)?;
    let blocks = values
        .chunks_exact(SB_LEN)
        .map(quantize_q8k)
        .collect::<Result<Vec<_>>>()?;
    Q8KMatrix::from_blocks(rows, cols / SB_LEN, blocks)
}

/// Reconstruct the dense row-major matrix of a block matrix.
pub fn dequantize_tensor_q3k(m: &Q3KMatrix) -> Vec<f32> {
    let mut out = Vec::with_capacity(m.rows() * m.cols());
    for sb in m.blocks() {
        out.extend_from_slice(&dequantize_q3k(sb));
    }
    out
}

/// Reconstruct the dense row-major matrix of a block matrix.
pub fn dequantize_tensor_q8k(m: &Q8KMatrix) -> Vec<f32> {
    let mut out = Vec::with_capacity(m.rows() * m.cols());
    for sb in m.blocks() {
        out.extend_from_slice(&dequantize_q8k(sb));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Widen a binary16 pattern by evaluating the format definition in
    /// f64: independent of the bit-twiddling decode path.
    fn fp16_formula_oracle(bits: u16) -> f64 {
        let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
        let exp = ((bits >> 10) & 0x1F) as i32;
        let mant = (bits & 0x3FF) as f64;
        if exp == 0 {
            sign * mant * 2f64.powi(-24)
        } else {
            sign * (1.0 + mant / 1024.0) * 2f64.powi(exp - 15)
        }
    }

    #[test]
    fn fp16_known_patterns() {
        assert_eq!(encode_fp16(1.0).unwrap(), 0x3C00);
        assert_eq!(encode_fp16(0.0).unwrap(), 0x0000);
        assert_eq!(encode_fp16(65504.0).unwrap(), 0x7BFF);
        assert_eq!(decode_fp16(0x3C00).unwrap(), 1.0);
        assert_eq!(decode_fp16(0x3800).unwrap(), 0.5);
        assert_eq!(decode_fp16(0x0001).unwrap(), 2f32.powi(-24));
    }

    #[test]
    fn fp16_errors() {
        assert!(matches!(encode_fp16(f32::NAN), Err(Error::Range(_))));
        assert!(matches!(encode_fp16(f32::INFINITY), Err(Error::Range(_))));
        assert!(matches!(encode_fp16(65520.0), Err(Error::Range(_))));
        assert!(matches!(encode_fp16(-70000.0), Err(Error::Range(_))));
        assert!(matches!(decode_fp16(0x7C00), Err(Error::Format(_))));
        assert!(matches!(decode_fp16(0xFC00), Err(Error::Format(_))));
        assert!(matches!(decode_fp16(0x7E01), Err(Error::Format(_))));
    }

    #[test]
    fn fp16_exhaustive_against_formula() {
        for half in 0..=0xFFFFu16 {
            if half & 0x7C00 == 0x7C00 {
                assert!(decode_fp16(half).is_err());
                continue;
            }
            let decoded = decode_fp16(half).unwrap();
            assert_eq!(
                decoded as f64,
                fp16_formula_oracle(half),
                "bits {half:#06x}"
            );
            // Exact round trip for every finite pattern.
            assert_eq!(encode_fp16(decoded).unwrap(), half, "bits {half:#06x}");
        }
    }

    #[test]
    fn fp16_round_to_nearest_even() {
        // 1 + 2^-11 sits exactly between 1.0 and the next half value;
        // ties go to the even mantissa (1.0).
        assert_eq!(encode_fp16(1.0 + 2f32.powi(-11)).unwrap(), 0x3C00);
        // 1 + 3*2^-11 ties between 0x3C01 and 0x3C02: even wins.
        assert_eq!(encode_fp16(1.0 + 3.0 * 2f32.powi(-11)).unwrap(), 0x3C02);
        // Just above a tie rounds up.
        assert_eq!(
            encode_fp16(1.0 + 2f32.powi(-11) + 2f32.powi(-20)).unwrap(),
            0x3C01
        );
        // Subnormal ties: 2^-25 is half the smallest subnormal, ties to 0.
        assert_eq!(encode_fp16(2f32.powi(-25)).unwrap(), 0x0000);
        assert_eq!(encode_fp16(-(2f32.powi(-25))).unwrap(), 0x8000);
        // 1.5 * 2^-24 ties between 0x0001 and 0x0002: even wins.
        assert_eq!(encode_fp16(1.5 * 2f32.powi(-24)).unwrap(), 0x0002);
        assert_eq!(encode_fp16(1.25 * 2f32.powi(-24)).unwrap(), 0x0001);
        // Below half the smallest subnormal rounds to zero.
        assert_eq!(encode_fp16(2f32.powi(-26)).unwrap(), 0x0000);
        // Carry across the subnormal/normal boundary.
        let just_below = f32::from_bits((2f32.powi(-14)).to_bits() - 1);
        assert_eq!(encode_fp16(just_below).unwrap(), 0x0400);
    }

    #[test]
    fn quantize_q3k_zero_block() {
        let sb = quantize_q3k(&[0.0; SB_LEN]).unwrap();
        assert_eq!(sb.super_scale, 0x0000);
        assert_eq!(sb.tile_scales, [0; N_TILES]);
        assert_eq!(sb.quants, [4; SB_LEN]);
        assert_eq!(sb, SuperBlockQ3K::zero());
    }

    #[test]
    fn quantize_q3k_ramp_tiles() {
        // Every tile is [-8, -7, ..., 7]: amax 8, real scale 2.0.
        let mut values = [0f32; SB_LEN];
        for (i, v) in values.iter_mut().enumerate() {
            *v = (i % TILE_LEN) as f32 - 8.0;
        }
        let sb = quantize_q3k(&values).unwrap();
        // Hand application of the encoding rules, including the binary16
        // rounding of 2/63.
        let d_hat = decode_fp16(encode_fp16(2.0 / 63.0).unwrap()).unwrap();
        assert_eq!(sb.super_scale, encode_fp16(2.0 / 63.0).unwrap());
        let expect_scale = (2.0 / d_hat).round().clamp(0.0, 63.0) as u8;
        assert_eq!(expect_scale, 63);
        assert_eq!(sb.tile_scales, [63; N_TILES]);
        let eff = d_hat * 63.0;
        for (i, &x) in values.iter().enumerate() {
            let level = (x / eff).round().clamp(-4.0, 3.0) as i32;
            assert_eq!(sb.level(i), level, "element {i}");
        }
    }

    #[test]
    fn quantize_q3k_rejects_non_finite() {
        let mut values = [0f32; SB_LEN];
        values[17] = f32::NAN;
        assert!(matches!(quantize_q3k(&values), Err(Error::Range(_))));
        values[17] = f32::NEG_INFINITY;
        assert!(matches!(quantize_q3k(&values), Err(Error::Range(_))));
        assert!(matches!(quantize_q3k(&[0.0; 255]), Err(Error::Shape(_))));
    }

    fn seeded_block_values(rng: &mut ChaCha8Rng, scale: f32) -> [f32; SB_LEN] {
        let mut values = [0f32; SB_LEN];
        for v in values.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        values
    }

    #[test]
    fn q3k_round_trip_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let values = seeded_block_values(&mut rng, 10.0);
            let sb = quantize_q3k(&values).unwrap();
            let back = dequantize_q3k(&sb);
            let d_hat = decode_fp16(sb.super_scale).unwrap() as f64;
            for t in 0..N_TILES {
                let tile = &values[t * TILE_LEN..(t + 1) * TILE_LEN];
                let amax = tile.iter().fold(0f32, |a, v| a.max(v.abs()));
                let s_t = (amax / 4.0) as f64;
                let s_hat = d_hat * sb.tile_scales[t] as f64;
                let bound = s_hat + 4.0 * (s_t - s_hat).abs();
                // Slack absorbs the final f32 product rounding.
                let slack = s_hat * 1e-5;
                for i in 0..TILE_LEN {
                    let idx = t * TILE_LEN + i;
                    let err = (values[idx] as f64 - back[idx] as f64).abs();
                    assert!(
                        err <= bound + slack,
                        "tile {t} idx {idx}: err {err} > bound {bound}"
                    );
                }
            }
        }
    }

    #[test]
    fn dequantize_q3k_hand_case() {
        let mut sb = SuperBlockQ3K::zero();
        sb.super_scale = encode_fp16(1.0).unwrap();
        sb.tile_scales[0] = 2;
        sb.quants[0] = 7; // level 3
        let out = dequantize_q3k(&sb);
        assert_eq!(out[0], 6.0);
        for &v in &out[1..TILE_LEN] {
            assert_eq!(v, 0.0);
        }
        assert_eq!(dequantize_q3k(&SuperBlockQ3K::zero()), [0f32; SB_LEN]);
    }

    #[test]
    fn dequant_tile_matches_full_dequantize() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let values = seeded_block_values(&mut rng, 6.0);
        let sb = quantize_q3k(&values).unwrap();
        let full = dequantize_q3k(&sb);
        for t in 0..N_TILES {
            assert_eq!(sb.dequant_tile(t), full[t * TILE_LEN..(t + 1) * TILE_LEN]);
        }
    }

    #[test]
    fn q3k_requantize_idempotent_on_grid() {
        // Construct blocks whose dequantized values re-derive the same
        // scales: every tile contains a -4 level (so amax/4 equals the
        // effective tile scale) and at least one tile scale is 63 (so the
        // super scale re-derives exactly).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let mut sb = SuperBlockQ3K::zero();
            sb.super_scale = encode_fp16(rng.gen_range(0.01f32..8.0)).unwrap();
            for t in 0..N_TILES {
                sb.tile_scales[t] = rng.gen_range(1..=63);
                for i in 0..TILE_LEN {
                    sb.quants[t * TILE_LEN + i] = rng.gen_range(0..=7);
                }
                sb.quants[t * TILE_LEN + rng.gen_range(0..TILE_LEN)] = 0; // level -4
            }
            let t63 = rng.gen_range(0..N_TILES);
            sb.tile_scales[t63] = 63;
            let grid = dequantize_q3k(&sb);
            let sb2 = quantize_q3k(&grid).unwrap();
            assert_eq!(sb2, sb);
            assert_eq!(dequantize_q3k(&sb2), grid);
        }
    }

    #[test]
    fn quantize_q8k_zero_and_unit() {
        let sb = quantize_q8k(&[0.0; SB_LEN]).unwrap();
        assert_eq!(sb.super_scale, 0);
        assert_eq!(sb.quants, [0; SB_LEN]);

        let mut values = [0f32; SB_LEN];
        values[0] = 127.0;
        let sb = quantize_q8k(&values).unwrap();
        // amax/127 = 1.0 is binary16-exact.
        assert_eq!(sb.super_scale, encode_fp16(1.0).unwrap());
        assert_eq!(sb.quants[0], 127);
        assert_eq!(&sb.quants[1..], &[0i8; SB_LEN - 1][..]);
    }

    #[test]
    fn q8k_round_trip_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let values = seeded_block_values(&mut rng, 30.0);
            let sb = quantize_q8k(&values).unwrap();
            let back = dequantize_q8k(&sb);
            let amax = values.iter().fold(0f32, |a, v| a.max(v.abs()));
            let d = (amax / 127.0) as f64;
            let d_hat = decode_fp16(sb.super_scale).unwrap() as f64;
            let bound = d_hat / 2.0 + (d - d_hat).abs() * 127.0;
            let slack = d_hat * 1e-4;
            for i in 0..SB_LEN {
                let err = (values[i] as f64 - back[i] as f64).abs();
                assert!(err <= bound + slack, "idx {i}: err {err} > bound {bound}");
            }
        }
    }

    #[test]
    fn dequantize_q8k_matches_wide_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values = seeded_block_values(&mut rng, 20.0);
        let sb = quantize_q8k(&values).unwrap();
        let back = dequantize_q8k(&sb);
        let d = decode_fp16(sb.super_scale).unwrap() as f64;
        for (b, &q) in back.iter().zip(&sb.quants) {
            // The product of an 8-bit integer and a binary16 value is
            // exact in f32, so the wide oracle must agree bit for bit.
            assert_eq!(*b, (d * q as f64) as f32);
        }
        let mut unit = SuperBlockQ8K::zero();
        unit.super_scale = encode_fp16(1.0).unwrap();
        unit.quants[0] = -5;
        assert_eq!(dequantize_q8k(&unit)[0], -5.0);
        assert_eq!(dequantize_q8k(&SuperBlockQ8K::zero()), [0f32; SB_LEN]);
    }

    #[test]
    fn pack_q3k_level_zero_pattern() {
        // Stored 4 = 0b100 repeated LSB-first gives a 3-byte period.
        let bytes = pack_q3k(&SuperBlockQ3K::zero());
        for (i, chunk) in bytes[0..96].chunks_exact(3).enumerate() {
            assert_eq!(chunk, [0x24, 0x49, 0x92], "period {i}");
        }
        assert_eq!(&bytes[96..110], &[0u8; 14][..]);
    }

    #[test]
    fn pack_q3k_all_zero_fields() {
        let sb = SuperBlockQ3K {
            quants: [0; SB_LEN],
            tile_scales: [0; N_TILES],
            super_scale: 0,
        };
        assert_eq!(pack_q3k(&sb), [0u8; Q3K_PACKED_LEN]);
        assert_eq!(unpack_q3k(&[0u8; Q3K_PACKED_LEN]).unwrap(), sb);
    }

    #[test]
    fn unpack_q3k_pattern_and_errors() {
        let mut bytes = [0u8; Q3K_PACKED_LEN];
        for chunk in bytes[0..96].chunks_exact_mut(3) {
            chunk.copy_from_slice(&[0x24, 0x49, 0x92]);
        }
        let sb = unpack_q3k(&bytes).unwrap();
        assert_eq!(sb.quants, [4; SB_LEN]);
        assert!(matches!(unpack_q3k(&[0u8; 109]), Err(Error::Format(_))));
        // NaN / sign-bit super-scale patterns violate the invariant.
        bytes[108..110].copy_from_slice(&0x7C00u16.to_le_bytes());
        assert!(matches!(unpack_q3k(&bytes), Err(Error::Format(_))));
        bytes[108..110].copy_from_slice(&0x8000u16.to_le_bytes());
        assert!(matches!(unpack_q3k(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn pack_q8k_two_complement_and_scale() {
        let mut sb = SuperBlockQ8K::zero();
        sb.quants[0] = -1;
        sb.super_scale = encode_fp16(1.0).unwrap();
        let bytes = pack_q8k(&sb);
        assert_eq!(bytes[0], 0xFF);
        assert_eq!(bytes[256], 0x00);
        assert_eq!(bytes[257], 0x3C);
        assert_eq!(pack_q8k(&SuperBlockQ8K::zero()), [0u8; Q8K_PACKED_LEN]);
        assert_eq!(
            unpack_q8k(&[0u8; Q8K_PACKED_LEN]).unwrap(),
            SuperBlockQ8K::zero()
        );
    }

    #[test]
    fn unpack_q8k_rejects_invalid() {
        assert!(matches!(unpack_q8k(&[0u8; 257]), Err(Error::Format(_))));
        let mut bytes = [0u8; Q8K_PACKED_LEN];
        bytes[3] = 0x80; // -128 is never produced by the encoder
        assert!(matches!(unpack_q8k(&bytes), Err(Error::Format(_))));
    }

    fn random_q3k_block(rng: &mut ChaCha8Rng) -> SuperBlockQ3K {
        let mut sb = SuperBlockQ3K::zero();
        for q in sb.quants.iter_mut() {
            *q = rng.gen_range(0..=7);
        }
        for s in sb.tile_scales.iter_mut() {
            *s = rng.gen_range(0..=63);
        }
        sb.super_scale = rng.gen_range(0..0x7C00);
        sb
    }

    fn random_q8k_block(rng: &mut ChaCha8Rng) -> SuperBlockQ8K {
        let mut sb = SuperBlockQ8K::zero();
        for q in sb.quants.iter_mut() {
            *q = rng.gen_range(-127..=127);
        }
        sb.super_scale = rng.gen_range(0..0x7C00);
        sb
    }

    #[test]
    fn pack_unpack_round_trip_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..2000 {
            let w = random_q3k_block(&mut rng);
            assert_eq!(unpack_q3k(&pack_q3k(&w)).unwrap(), w);
            let x = random_q8k_block(&mut rng);
            assert_eq!(unpack_q8k(&pack_q8k(&x)).unwrap(), x);
        }
    }

    #[test]
    fn quantize_scaling_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let mut values = seeded_block_values(&mut rng, 64.0);
            values[0] = 50.0; // keep the super scale well inside the normal range
            let base = quantize_q3k(&values).unwrap();
            for alpha in [0.25f32, 0.5, 2.0, 4.0] {
                let scaled: Vec<f32> = values.iter().map(|v| v * alpha).collect();
                let sb = quantize_q3k(&scaled).unwrap();
                assert_eq!(sb.quants, base.quants, "alpha {alpha}");
                assert_eq!(sb.tile_scales, base.tile_scales, "alpha {alpha}");
                assert_eq!(
                    decode_fp16(sb.super_scale).unwrap(),
                    alpha * decode_fp16(base.super_scale).unwrap(),
                    "alpha {alpha}"
                );
            }
        }
    }

    #[test]
    fn encoders_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let values = seeded_block_values(&mut rng, 5.0);
        assert_eq!(
            quantize_q3k(&values).unwrap(),
            quantize_q3k(&values).unwrap()
        );
        assert_eq!(
            quantize_q8k(&values).unwrap(),
            quantize_q8k(&values).unwrap()
        );
    }

    #[test]
    fn tensor_blocking() {
        let m = quantize_tensor_q3k(&[0.0; 256], 1, 256).unwrap();
        assert_eq!(m.rows(), 1);
        assert_eq!(m.blocks_per_row(), 1);
        assert_eq!(m.block(0, 0), &SuperBlockQ3K::zero());

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let values: Vec<f32> = (0..2 * 512).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let m = quantize_tensor_q3k(&values, 2, 512).unwrap();
        assert_eq!((m.rows(), m.blocks_per_row()), (2, 2));
        for r in 0..2 {
            for k in 0..2 {
                let start = r * 512 + k * SB_LEN;
                let expect = quantize_q3k(&values[start..start + SB_LEN]).unwrap();
                assert_eq!(m.block(r, k), &expect, "row {r} block {k}");
            }
        }
        assert!(matches!(
            quantize_tensor_q3k(&[0.0; 255], 1, 255),
            Err(Error::Shape(_))
        ));
        let dense = dequantize_tensor_q3k(&m);
        assert_eq!(dense.len(), 1024);

        let x = quantize_tensor_q8k(&values, 2, 512).unwrap();
        assert_eq!(dequantize_tensor_q8k(&x).len(), 1024);
    }
}
