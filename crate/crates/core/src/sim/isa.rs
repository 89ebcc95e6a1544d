//! Instruction-stream wire protocol between the driver and the
//! accelerator.
//!
//! Streams are little-endian 32-bit words. Every instruction starts with
//! a header word: opcode in bits 31..24, a 24-bit immediate in bits 23..0.
//! Load payloads carry packed super-blocks padded to word boundaries
//! (112 bytes per weight block, 260 per input block).

use crate::codec::{Q3K_PACKED_LEN, Q8K_PACKED_LEN};
use crate::error::{Error, Result};

pub const OP_NOP: u8 = 0x00;
pub const OP_CONFIG: u8 = 0x01;
pub const OP_LOAD_W: u8 = 0x02;
pub const OP_LOAD_X: u8 = 0x03;
pub const OP_COMPUTE: u8 = 0x04;
pub const OP_STORE: u8 = 0x05;
pub const OP_HALT: u8 = 0xFF;

/// Word-aligned payload size of one packed weight block (110 + 2 pad).
pub const Q3K_PAYLOAD_BYTES: usize = Q3K_PACKED_LEN + 2;
/// Word-aligned payload size of one packed input block (258 + 2 pad).
pub const Q8K_PAYLOAD_BYTES: usize = Q8K_PACKED_LEN + 2;
/// Payload words per weight block.
pub const Q3K_PAYLOAD_WORDS: usize = Q3K_PAYLOAD_BYTES / 4;
/// Payload words per input block.
pub const Q8K_PAYLOAD_WORDS: usize = Q8K_PAYLOAD_BYTES / 4;

const IMM_MASK: u32 = 0x00FF_FFFF;

/// A decoded instruction. Load payloads hold the raw padded bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    Nop,
    Config { m_cnt: u32, n_cnt: u32, k_cnt: u32 },
    LoadWeights { base_slot: u32, payload: Vec<u8> },
    LoadInputs { base_slot: u32, payload: Vec<u8> },
    Compute { accumulate: bool },
    Store,
    Halt,
}

impl Instruction {
    pub fn opcode(&self) -> u8 {
        match self {
            Instruction::Nop => OP_NOP,
            Instruction::Config { .. } => OP_CONFIG,
            Instruction::LoadWeights { .. } => OP_LOAD_W,
            Instruction::LoadInputs { .. } => OP_LOAD_X,
            Instruction::Compute { .. } => OP_COMPUTE,
            Instruction::Store => OP_STORE,
            Instruction::Halt => OP_HALT,
        }
    }

    /// Blocks carried by a load payload, zero for other opcodes.
    pub fn block_count(&self) -> usize {
        match self {
            Instruction::LoadWeights { payload, .. } => payload.len() / Q3K_PAYLOAD_BYTES,
            Instruction::LoadInputs { payload, .. } => payload.len() / Q8K_PAYLOAD_BYTES,
            _ => 0,
        }
    }

    /// Payload words (block data only; header and operands excluded).
    pub fn payload_words(&self) -> usize {
        match self {
            Instruction::LoadWeights { payload, .. } | Instruction::LoadInputs { payload, .. } => {
                payload.len() / 4
            }
            _ => 0,
        }
    }

    /// Total encoded length in words, header included.
    pub fn word_len(&self) -> usize {
        match self {
            Instruction::Nop
            | Instruction::Compute { .. }
            | Instruction::Store
            | Instruction::Halt => 1,
            Instruction::Config { .. } => 4,
            Instruction::LoadWeights { .. } | Instruction::LoadInputs { .. } => {
                2 + self.payload_words()
            }
        }
    }

    /// Append the wire encoding of this instruction.
    pub fn encode_into(&self, out: &mut Vec<u32>) {
        let header = |op: u8, imm: u32| -> u32 {
            debug_assert_eq!(imm & !IMM_MASK, 0);
            ((op as u32) << 24) | (imm & IMM_MASK)
        };
        match self {
            Instruction::Nop => out.push(header(OP_NOP, 0)),
            Instruction::Config {
                m_cnt,
                n_cnt,
                k_cnt,
            } => {
                out.push(header(OP_CONFIG, 0));
                out.extend_from_slice(&[*m_cnt, *n_cnt, *k_cnt]);
            }
            Instruction::LoadWeights { base_slot, payload } => {
                out.push(header(OP_LOAD_W, self.block_count() as u32));
                out.push(*base_slot);
                push_payload(out, payload);
            }
            Instruction::LoadInputs { base_slot, payload } => {
                out.push(header(OP_LOAD_X, self.block_count() as u32));
                out.push(*base_slot);
                push_payload(out, payload);
            }
            Instruction::Compute { accumulate } => {
                out.push(header(OP_COMPUTE, *accumulate as u32));
            }
            Instruction::Store => out.push(header(OP_STORE, 0)),
            Instruction::Halt => out.push(header(OP_HALT, 0)),
        }
    }
}

fn push_payload(out: &mut Vec<u32>, payload: &[u8]) {
    debug_assert_eq!(payload.len() % 4, 0);
    for chunk in payload.chunks_exact(4) {
        out.push(u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
}

fn take_payload(words: &[u32], offset: usize, n_words: usize, what: &str) -> Result<Vec<u8>> {
    let end = offset
        .checked_add(n_words)
        .filter(|&e| e <= words.len())
        .ok_or_else(|| Error::Underrun {
            offset,
            msg: format!("{what} payload needs {n_words} words"),
        })?;
    let mut bytes = Vec::with_capacity(n_words * 4);
    for w in &words[offset..end] {
        bytes.extend_from_slice(&w.to_le_bytes());
    }
    Ok(bytes)
}

/// Parse a word stream into instructions.
///
/// Decode costs one modeled cycle per header word plus stream-width
/// ingest time; the session loop accounts for that, this function is
/// purely functional. Unknown opcodes name the word offset; a stream
/// that ends inside an instruction is an underrun.
pub fn decode(words: &[u32]) -> Result<Vec<Instruction>> {
    let mut out = Vec::new();
    let mut i = 0usize;
    while i < words.len() {
        let header = words[i];
        let opcode = (header >> 24) as u8;
        let imm = header & IMM_MASK;
        match opcode {
            OP_NOP => {
                out.push(Instruction::Nop);
                i += 1;
            }
            OP_CONFIG => {
                if i + 4 > words.len() {
                    return Err(Error::Underrun {
                        offset: i,
                        msg: "CONFIG needs 3 operand words".into(),
                    });
                }
                out.push(Instruction::Config {
                    m_cnt: words[i + 1],
                    n_cnt: words[i + 2],
                    k_cnt: words[i + 3],
                });
                i += 4;
            }
            OP_LOAD_W => {
                if i + 2 > words.len() {
                    return Err(Error::Underrun {
                        offset: i,
                        msg: "LOAD_W needs a base_slot word".into(),
                    });
                }
                let n_words = imm as usize * Q3K_PAYLOAD_WORDS;
                let payload = take_payload(words, i + 2, n_words, "LOAD_W")?;
                out.push(Instruction::LoadWeights {
                    base_slot: words[i + 1],
                    payload,
                });
                i += 2 + n_words;
            }
            OP_LOAD_X => {
                if i + 2 > words.len() {
                    return Err(Error::Underrun {
                        offset: i,
                        msg: "LOAD_X needs a base_slot word".into(),
                    });
                }
                let n_words = imm as usize * Q8K_PAYLOAD_WORDS;
                let payload = take_payload(words, i + 2, n_words, "LOAD_X")?;
                out.push(Instruction::LoadInputs {
                    base_slot: words[i + 1],
                    payload,
                });
                i += 2 + n_words;
            }
            OP_COMPUTE => {
                out.push(Instruction::Compute {
                    accumulate: imm & 1 == 1,
                });
                i += 1;
            }
            OP_STORE => {
                out.push(Instruction::Store);
                i += 1;
            }
            OP_HALT => {
                out.push(Instruction::Halt);
                i += 1;
            }
            other => {
                return Err(Error::Decode {
                    offset: i,
                    msg: format!("unknown opcode {other:#04x}"),
                });
            }
        }
    }
    Ok(out)
}
