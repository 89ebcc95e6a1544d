//! Modeled speedup of the accelerator over a scalar CPU baseline.
//!
//! The cycle count for a problem comes from driving a full simulated
//! session with zero-valued blocks (the cycle model is data-independent),
//! so the estimate reflects the same tiling and stream costs a real run
//! pays. The baseline is a deliberately simple scalar model: one MAC per
//! cycle per core. The resulting ratio compares design points against
//! each other; it is not a hardware measurement.

use crate::codec::{Q3KMatrix, Q8KMatrix, SuperBlockQ3K, SuperBlockQ8K};
use crate::driver::{build_stream, plan_tiling};
use crate::error::{Error, Result};
use crate::kernel::QuantMatMulDims;
use crate::sim::{simulate_session, AcceleratorConfig, SimReport};

/// Scalar CPU model the accelerator is compared against. Defaults
/// describe a small dual-core 650 MHz edge CPU retiring one MAC per
/// cycle per core.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineModel {
    pub clock_mhz: f64,
    pub cores: u32,
    pub macs_per_cycle: u32,
}

impl Default for BaselineModel {
    fn default() -> Self {
        BaselineModel {
            clock_mhz: 650.0,
            cores: 2,
            macs_per_cycle: 1,
        }
    }
}

impl BaselineModel {
    pub fn validate(&self) -> Result<()> {
        if !self.clock_mhz.is_finite() || self.clock_mhz <= 0.0 {
            return Err(Error::Domain(format!(
                "baseline clock {} MHz must be positive and finite",
                self.clock_mhz
            )));
        }
        if self.cores == 0 || self.macs_per_cycle == 0 {
            return Err(Error::Domain(
                "baseline cores and macs_per_cycle must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Modeled time for `macs` multiply-accumulates, in microseconds.
    pub fn time_us(&self, macs: u64) -> f64 {
        macs as f64 / (self.macs_per_cycle as f64 * self.clock_mhz * self.cores as f64)
    }
}

/// Cycle report for a full MatMul of these dims on this configuration,
/// obtained by simulating a zero-filled session through the regular
/// driver pipeline.
pub fn modeled_cycles(dims: &QuantMatMulDims, config: &AcceleratorConfig) -> Result<SimReport> {
    let k_sb = dims.k_sb();
    let w = Q3KMatrix::from_blocks(dims.n, k_sb, vec![SuperBlockQ3K::zero(); dims.n * k_sb])?;
    let x = Q8KMatrix::from_blocks(dims.m, k_sb, vec![SuperBlockQ8K::zero(); dims.m * k_sb])?;
    let plan = plan_tiling(dims, config)?;
    let stream = build_stream(&plan, &w, &x)?;
    let (_, report) = simulate_session(&stream, config)?;
    Ok(report)
}

/// Ratio of modeled baseline time to modeled accelerator time for one
/// MatMul. Greater than 1 means the modeled accelerator is faster.
pub fn estimate_speedup(
    dims: &QuantMatMulDims,
    config: &AcceleratorConfig,
    baseline: &BaselineModel,
) -> Result<f64> {
    if dims.macs() == 0 {
        return Err(Error::Domain(format!("dims {dims} describe zero work")));
    }
    baseline.validate()?;
    let report = modeled_cycles(dims, config)?;
    let accel_us = report.total_cycles as f64 / config.clock_mhz;
    Ok(baseline.time_us(dims.macs()) / accel_us)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_hand_derivation() {
        // M=1, N=256, K=2048 at the default configuration. Greedy tiling
        // picks k=8, n=8, m=1, so 32 tile groups. Per group:
        //   CONFIG  decoder ceil(4*32/64)            = 2
        //   LOAD_W  decoder 1, mapper 64*112*8/64    = 896
        //   LOAD_X  decoder 1, mapper ceil(8*260*8/64) = 260
        //   COMPUTE decoder 1, sbvp 64 dots * 4      = 256, scheduler 64
        //   STORE   decoder 1, scheduler ceil(8*32/64) = 4
        // plus one HALT cycle: 32 * 1486 + 1 = 47553.
        let dims = QuantMatMulDims::new(1, 256, 2048).unwrap();
        let config = AcceleratorConfig::default();
        let report = modeled_cycles(&dims, &config).unwrap();
        assert_eq!(report.total_cycles, 47553);

        let baseline = BaselineModel::default();
        let expect = (524288.0 / (650.0 * 2.0)) / (47553.0 / 100.0);
        let got = estimate_speedup(&dims, &config, &baseline).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn speedup_monotone_in_lanes_and_width() {
        let dims = QuantMatMulDims::new(2, 32, 1024).unwrap();
        let baseline = BaselineModel::default();
        let mut last = 0.0;
        for lanes in [1usize, 2, 4, 8, 16, 32] {
            let config = AcceleratorConfig {
                sbvp_lanes: lanes,
                ..Default::default()
            };
            let s = estimate_speedup(&dims, &config, &baseline).unwrap();
            assert!(s >= last, "lanes {lanes}: {s} < {last}");
            last = s;
        }
        let mut last = 0.0;
        for width in [32usize, 64, 128, 256, 512] {
            let config = AcceleratorConfig {
                stream_width_bits: width,
                ..Default::default()
            };
            let s = estimate_speedup(&dims, &config, &baseline).unwrap();
            assert!(s >= last, "width {width}: {s} < {last}");
            last = s;
        }
    }

    #[test]
    fn cycles_fall_with_lane_doubling_until_floor() {
        let dims = QuantMatMulDims::new(2, 32, 1024).unwrap();
        let mut cycles = Vec::new();
        for lanes in [1usize, 2, 4, 8, 16, 32] {
            let config = AcceleratorConfig {
                sbvp_lanes: lanes,
                ..Default::default()
            };
            cycles.push(modeled_cycles(&dims, &config).unwrap().total_cycles);
        }
        // Strict improvement while the per-dot tile groups shrink, then a
        // plateau once one group remains and streaming dominates.
        for w in cycles.windows(2).take(4) {
            assert!(w[1] < w[0], "{cycles:?}");
        }
        assert_eq!(cycles[4], cycles[5], "{cycles:?}");
    }

    #[test]
    fn zero_work_is_a_domain_error() {
        let dims = QuantMatMulDims { m: 0, n: 1, k: 256 };
        let r = estimate_speedup(
            &dims,
            &AcceleratorConfig::default(),
            &BaselineModel::default(),
        );
        assert!(matches!(r, Err(Error::Domain(_))));
        let dims = QuantMatMulDims::new(1, 1, 256).unwrap();
        let bad = BaselineModel {
            clock_mhz: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            estimate_speedup(&dims, &AcceleratorConfig::default(), &bad),
            Err(Error::Domain(_))
        ));
    }
}
