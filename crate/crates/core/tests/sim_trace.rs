//! Trace oracle for the simulator's capture points.

use sbmm_core::codec::{pack_q3k, SuperBlockQ3K};
use sbmm_core::profiler::{PointKind, ProfileSession};
use sbmm_core::sim::{
    Accelerator, AcceleratorConfig, POINT_INPUT_OCCUPANCY, POINT_SBVP_UTILIZATION,
    POINT_WEIGHT_OCCUPANCY,
};

fn padded(sb: &SuperBlockQ3K) -> Vec<u8> {
    let mut p = pack_q3k(sb).to_vec();
    p.extend_from_slice(&[0, 0]);
    p
}

#[test]
fn load_w_occupancy_steps_zero_to_four() {
    let config = AcceleratorConfig::default();
    let mut session = ProfileSession::new();
    {
        let mut accel = Accelerator::with_trace(&config, &mut session).unwrap();
        let payload: Vec<u8> = (0..4)
            .flat_map(|_| padded(&SuperBlockQ3K::zero()))
            .collect();
        accel.map_weights(&payload, 0).unwrap();
    }
    session.close().unwrap();
    let report = session.report().unwrap();
    let point = report
        .points
        .iter()
        .find(|p| p.id == POINT_WEIGHT_OCCUPANCY)
        .expect("weight occupancy point registered");
    assert_eq!(point.kind, PointKind::OccupancyGauge);
    // One block ingests 112*8/64 = 14 cycles at the default width; the
    // gauge starts at zero and steps to four.
    assert_eq!(
        point.samples,
        vec![(0, 0.0), (14, 1.0), (28, 2.0), (42, 3.0), (56, 4.0)]
    );
    let input_point = report
        .points
        .iter()
        .find(|p| p.id == POINT_INPUT_OCCUPANCY)
        .unwrap();
    assert_eq!(input_point.samples, vec![(0, 0.0)]);
}

#[test]
fn utilization_point_stays_in_unit_interval() {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use sbmm_core::codec::{quantize_tensor_q3k, quantize_tensor_q8k};
    use sbmm_core::driver::{run_matmul_profiled, Backend};
    use sbmm_core::kernel::QuantMatMulDims;

    let dims = QuantMatMulDims::new(2, 4, 512).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let w: Vec<f32> = (0..dims.n * dims.k)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let x: Vec<f32> = (0..dims.m * dims.k)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let w = quantize_tensor_q3k(&w, dims.n, dims.k).unwrap();
    let x = quantize_tensor_q8k(&x, dims.m, dims.k).unwrap();

    let mut session = ProfileSession::new();
    run_matmul_profiled(
        &w,
        &x,
        &dims,
        &Backend::Simulator(AcceleratorConfig::default()),
        &mut session,
    )
    .unwrap();
    session.close().unwrap();
    let report = session.report().unwrap();
    let util = report
        .points
        .iter()
        .find(|p| p.id == POINT_SBVP_UTILIZATION)
        .unwrap();
    assert!(!util.samples.is_empty());
    for &(_, v) in &util.samples {
        assert!((0.0..=1.0).contains(&v));
    }
    // Conservation: busy + idle = total.
    let sim = report.sim.unwrap();
    assert_eq!(
        sim.sbvp_busy_cycles + sim.sbvp_idle_cycles,
        sim.total_cycles
    );
}
