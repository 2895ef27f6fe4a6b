#![allow(dead_code)]

pub mod event_sim;

use imc_nas::imc::HardwareConfig;
use imc_nas::ir::{LayerIR, LayerKind, TensorShape};
use imc_nas::space::{ArchGenome, BlockSpec, BlockType, InputShape, SearchSpace};
use rand::Rng;

pub fn random_hardware<R: Rng>(rng: &mut R) -> HardwareConfig {
    let weight_bits = rng.gen_range(1..=16);
    let activation_bits = rng.gen_range(1..=16);
    HardwareConfig {
        xbar_rows: [32, 64, 128, 256, 512][rng.gen_range(0..5)],
        xbar_cols: [32, 64, 128, 256, 512][rng.gen_range(0..5)],
        weight_bits,
        cell_bits: rng.gen_range(1..=weight_bits),
        activation_bits,
        dac_bits: rng.gen_range(1..=activation_bits),
        adc_share: rng.gen_range(1..=32),
        t_dac: rng.gen_range(0.0..4.0),
        t_xbar: rng.gen_range(0.0..40.0),
        t_adc: rng.gen_range(0.0..4.0),
        t_psum: rng.gen_range(0.0..8.0),
        t_pool_per_elem: rng.gen_range(0.0..2.0),
        t_gacc_per_elem: rng.gen_range(0.0..4.0),
        e_dac: rng.gen_range(0.0..2.0),
        e_cell: rng.gen_range(0.0..0.2),
        e_adc: rng.gen_range(0.0..8.0),
        e_psum: rng.gen_range(0.0..1.0),
        e_buf: rng.gen_range(0.0..4.0),
        e_noc: rng.gen_range(0.0..8.0),
        e_gacc: rng.gen_range(0.0..2.0),
        e_pool: rng.gen_range(0.0..1.0),
        hops_local: rng.gen_range(1..=4),
        hops_global: rng.gen_range(1..=8),
        bytes_per_activation: rng.gen_range(1..=4),
        duplication: rng.gen_range(1..=4),
    }
}

pub fn random_matrix_layer<R: Rng>(rng: &mut R) -> LayerIR {
    if rng.gen_bool(0.7) {
        let k = if rng.gen_bool(0.7) { 3 } else { 1 };
        let cin = rng.gen_range(1..=600);
        let cout = rng.gen_range(1..=300);
        let h = rng.gen_range(1..=32);
        let w = rng.gen_range(1..=32);
        LayerIR::new(
            LayerKind::Conv {
                kh: k,
                kw: k,
                cin,
                cout,
                stride: 1,
                padding: k / 2,
                bias: true,
            },
            TensorShape::Spatial { c: cin, h, w },
        )
        .unwrap()
    } else {
        let inputs = rng.gen_range(1..=5000);
        LayerIR::new(
            LayerKind::FullyConnected {
                inputs,
                outputs: rng.gen_range(1..=600),
                bias: true,
            },
            TensorShape::Flat { len: inputs },
        )
        .unwrap()
    }
}

pub fn random_valid_genome<R: Rng>(space: &SearchSpace, input: InputShape, rng: &mut R) -> ArchGenome {
    space.sample_valid(input, rng).unwrap()
}

/// Relative difference, treating two zeros as equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

pub fn genome(text: &str) -> ArchGenome {
    text.parse().unwrap()
}

pub fn with_block(g: &ArchGenome, i: usize, block: BlockSpec) -> ArchGenome {
    let mut out = g.clone();
    out.blocks[i] = block;
    out
}

pub fn next_kernels(space: &SearchSpace, k: u32) -> Option<u32> {
    space.allowed_kernels.iter().copied().filter(|&x| x > k).min()
}

pub fn is_type(b: &BlockSpec, t: BlockType) -> bool {
    b.block_type == t
}
