//! Per-token operation counting for decoder-only transformer shapes:
//! how much of the work is weight MatMuls.
//!
//! Counting convention (every figure is per generated token, at a given
//! context length `c`):
//!
//! Weight-MatMul MACs, counted 1 per multiply-accumulate:
//! * per layer: q `h*h`, k `h*kv`, v `h*kv`, output `h*h`,
//!   gate `h*f`, up `h*f`, down `f*h` (with `h` hidden size,
//!   `kv = n_kv_heads * head_dim`, `f` ffn size);
//! * once: LM head `h * vocab`.
//!
//! Attention MACs (grow with context, not weight work): per layer
//! `h*c` for the score dot products plus `h*c` for the value mix.
//!
//! Element ops, counted 1 per element operation:
//! * softmax: 3 per score (exponential, sum, normalize) = `3*heads*c`;
//! * rms norms: two per layer plus one final, 2 ops per element = `2h`
//!   each;
//! * residual adds: two per layer, `h` each;
//! * rotary embedding on q and k: 2 ops per rotated element =
//!   `2*(h+kv)`;
//! * activation and gate multiply: `2f`.
//!
//! The reported fraction is weight-MatMul MACs over all counted ops.

use std::collections::BTreeMap;

use sbmm_core::Error as CoreError;

use crate::error::{CliError, Result};

/// Decoder-only transformer shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub hidden_size: u64,
    pub n_layers: u64,
    pub n_heads: u64,
    pub n_kv_heads: u64,
    pub head_dim: u64,
    pub ffn_size: u64,
    pub vocab_size: u64,
    pub context_len: u64,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("hidden_size", self.hidden_size),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("head_dim", self.head_dim),
            ("ffn_size", self.ffn_size),
            ("vocab_size", self.vocab_size),
            ("context_len", self.context_len),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(CliError::Core(CoreError::Shape(format!(
                    "{name} must be positive"
                ))));
            }
        }
        if self.hidden_size != self.n_heads * self.head_dim {
            return Err(CliError::Core(CoreError::Shape(format!(
                "hidden_size {} != n_heads {} * head_dim {}",
                self.hidden_size, self.n_heads, self.head_dim
            ))));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(CliError::Core(CoreError::Shape(format!(
                "n_heads {} not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            ))));
        }
        Ok(())
    }

    pub fn from_kv_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let get = |key: &str| -> Result<u64> {
            map.get(key)
                .ok_or_else(|| {
                    CliError::Core(CoreError::Format(format!("shape file is missing {key}")))
                })?
                .parse::<u64>()
                .map_err(|e| CliError::Core(CoreError::Format(format!("{key}: {e}"))))
        };
        let shape = ModelShape {
            hidden_size: get("hidden_size")?,
            n_layers: get("n_layers")?,
            n_heads: get("n_heads")?,
            n_kv_heads: get("n_kv_heads")?,
            head_dim: get("head_dim")?,
            ffn_size: get("ffn_size")?,
            vocab_size: get("vocab_size")?,
            context_len: get("context_len")?,
        };
        shape.validate()?;
        Ok(shape)
    }
}

/// Per-token op budget split into weight MatMuls, attention MACs and
/// element ops, with a per-category breakdown for display.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCountBreakdown {
    pub context: u64,
    pub weight_matmul_macs: u64,
    pub attention_macs: u64,
    pub element_ops: u64,
    pub total_ops: u64,
    pub weight_matmul_fraction: f64,
    pub categories: Vec<(String, u64)>,
}

/// Count per-token ops for one decode step at context position `context`.
pub fn opcount(shape: &ModelShape, context: u64) -> Result<OpCountBreakdown> {
    shape.validate()?;
    if context == 0 {
        return Err(CliError::Core(CoreError::Domain(
            "context must be positive".into(),
        )));
    }
    let h = shape.hidden_size;
    let kv = shape.n_kv_heads * shape.head_dim;
    let f = shape.ffn_size;
    let l = shape.n_layers;
    let c = context;

    let qkvo = 2 * h * h + 2 * h * kv;
    let ffn = 3 * h * f;
    let lm_head = h * shape.vocab_size;
    let weight_matmul_macs = l * (qkvo + ffn) + lm_head;

    let scores = l * h * c;
    let values = l * h * c;
    let attention_macs = scores + values;

    let softmax = l * 3 * shape.n_heads * c;
    let norms = l * 2 * (2 * h) + 2 * h;
    let residual = l * 2 * h;
    let rope = l * 2 * (h + kv);
    let act_gate = l * 2 * f;
    let element_ops = softmax + norms + residual + rope + act_gate;

    let total_ops = weight_matmul_macs + attention_macs + element_ops;
    Ok(OpCountBreakdown {
        context: c,
        weight_matmul_macs,
        attention_macs,
        element_ops,
        total_ops,
        weight_matmul_fraction: weight_matmul_macs as f64 / total_ops as f64,
        categories: vec![
            ("weight_matmul.qkvo".into(), l * qkvo),
            ("weight_matmul.ffn".into(), l * ffn),
            ("weight_matmul.lm_head".into(), lm_head),
            ("attention.scores".into(), scores),
            ("attention.values".into(), values),
            ("element.softmax".into(), softmax),
            ("element.norms".into(), norms),
            ("element.residual".into(), residual),
            ("element.rope".into(), rope),
            ("element.act_gate".into(), act_gate),
        ],
    })
}

impl OpCountBreakdown {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("context={}\n", self.context));
        for (name, count) in &self.categories {
            out.push_str(&format!("{name}={count}\n"));
        }
        out.push_str(&format!(
            "weight_matmul_macs={}\nattention_macs={}\nelement_ops={}\ntotal_ops={}\n",
            self.weight_matmul_macs, self.attention_macs, self.element_ops, self.total_ops
        ));
        out.push_str(&format!(
            "weight_matmul_fraction={:.6}\n",
            self.weight_matmul_fraction
        ));
        out
    }
}
