//! Event-level reference simulator for the crossbar cost model.
//!
//! Shares nothing with `imc_nas::imc` beyond the input types. Every quantity
//! is obtained by enumeration: output windows by sliding the kernel over the
//! padded input, crossbar tiles by filling rows/columns until the matrix is
//! covered, input cycles by shifting the activation through the DAC, ADC work
//! by dealing each tile's columns to its converters one conversion at a time.
//! Costs are integer event counts times per-event constants.

use imc_nas::imc::HardwareConfig;
use imc_nas::ir::{LayerIR, LayerKind, NetworkIR, TensorShape};

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Events {
    // serial time slots
    pub dac_slots: u64,
    pub xbar_slots: u64,
    pub adc_slots: u64,
    pub psum_slots: u64,
    pub pool_slots: u64,
    pub gacc_slots: u64,
    // energy events
    pub dac_drives: u64,
    pub cell_reads: u64,
    pub adc_conversions: u64,
    pub psum_adds: u64,
    pub buffer_bytes: u64,
    pub noc_byte_hops: u64,
    pub gacc_ops: u64,
    pub pool_reads: u64,
}

impl Events {
    pub fn add(&mut self, o: &Events) {
        self.dac_slots += o.dac_slots;
        self.xbar_slots += o.xbar_slots;
        self.adc_slots += o.adc_slots;
        self.psum_slots += o.psum_slots;
        self.pool_slots += o.pool_slots;
        self.gacc_slots += o.gacc_slots;
        self.dac_drives += o.dac_drives;
        self.cell_reads += o.cell_reads;
        self.adc_conversions += o.adc_conversions;
        self.psum_adds += o.psum_adds;
        self.buffer_bytes += o.buffer_bytes;
        self.noc_byte_hops += o.noc_byte_hops;
        self.gacc_ops += o.gacc_ops;
        self.pool_reads += o.pool_reads;
    }

    pub fn latency_ns(&self, hw: &HardwareConfig) -> f64 {
        self.dac_slots as f64 * hw.t_dac
            + self.xbar_slots as f64 * hw.t_xbar
            + self.adc_slots as f64 * hw.t_adc
            + self.psum_slots as f64 * hw.t_psum
            + self.pool_slots as f64 * hw.t_pool_per_elem
            + self.gacc_slots as f64 * hw.t_gacc_per_elem
    }

    pub fn energy_pj(&self, hw: &HardwareConfig) -> f64 {
        self.dac_drives as f64 * hw.e_dac
            + self.cell_reads as f64 * hw.e_cell
            + self.adc_conversions as f64 * hw.e_adc
            + self.psum_adds as f64 * hw.e_psum
            + self.buffer_bytes as f64 * hw.e_buf
            + self.noc_byte_hops as f64 * hw.e_noc
            + self.gacc_ops as f64 * hw.e_gacc
            + self.pool_reads as f64 * hw.e_pool
    }
}

fn elements(s: TensorShape) -> u64 {
    match s {
        TensorShape::Spatial { c, h, w } => {
            let mut n = 0;
            for _ in 0..c * h * w {
                n += 1;
            }
            n
        }
        TensorShape::Flat { len } => len,
    }
}

/// Top-left corners of every kernel placement along one axis.
fn placements(size: u64, k: u64, stride: u64, pad: u64) -> u64 {
    let mut n = 0;
    let mut start: i64 = -(pad as i64);
    while start + k as i64 <= (size + pad) as i64 {
        n += 1;
        start += stride as i64;
    }
    n
}

/// Sizes of the tiles obtained by filling `capacity`-sized crossbars in order.
fn fill(total: u64, capacity: u64) -> Vec<u64> {
    let mut tiles = Vec::new();
    let mut left = total;
    while left > 0 {
        let take = left.min(capacity);
        tiles.push(take);
        left -= take;
    }
    tiles
}

fn shifts(bits: u64, per_step: u64) -> u64 {
    let mut remaining = bits as i64;
    let mut n = 0;
    while remaining > 0 {
        remaining -= per_step as i64;
        n += 1;
    }
    n
}

/// Longest queue when `cols` conversions are dealt round-robin to `units` ADCs.
fn adc_queue(cols: u64, units: u64) -> u64 {
    let mut queue = vec![0u64; units as usize];
    for c in 0..cols {
        queue[(c % units) as usize] += 1;
    }
    queue.into_iter().max().unwrap_or(0)
}

fn movement(layer: &LayerIR, hw: &HardwareConfig) -> Events {
    let bytes = (elements(layer.in_shape) + elements(layer.out_shape)) * hw.bytes_per_activation;
    Events {
        buffer_bytes: bytes,
        noc_byte_hops: bytes * hw.hops_local,
        ..Events::default()
    }
}

fn matrix_layer(layer: &LayerIR, hw: &HardwareConfig) -> Events {
    let (rows, outputs, windows) = match (layer.kind, layer.in_shape) {
        (
            LayerKind::Conv {
                kh,
                kw,
                cin,
                cout,
                stride,
                padding,
                ..
            },
            TensorShape::Spatial { h, w, .. },
        ) => {
            let mut rows = 0;
            for _c in 0..cin {
                for _y in 0..kh {
                    for _x in 0..kw {
                        rows += 1;
                    }
                }
            }
            let windows = placements(h, kh, stride, padding) * placements(w, kw, stride, padding);
            (rows, cout, windows)
        }
        (LayerKind::FullyConnected { inputs, outputs, .. }, _) => (inputs, outputs, 1),
        _ => unreachable!(),
    };
    let slices = shifts(hw.weight_bits, hw.cell_bits);
    let cols = outputs * slices;
    let row_tiles = fill(rows, hw.xbar_rows);
    let col_tiles = fill(cols, hw.xbar_cols);
    let cycles = shifts(hw.activation_bits, hw.dac_bits);

    // One input cycle on every crossbar of the layer.
    let mut cycle = Events {
        dac_slots: 1,
        xbar_slots: 1,
        ..Events::default()
    };
    for &rt in &row_tiles {
        cycle.dac_drives += rt;
        for &ct in &col_tiles {
            cycle.cell_reads += rt * ct;
        }
    }
    // Partial sums are merged after the ADC, so each logical column is
    // digitized once per cycle.
    let mut slowest_adc = 0;
    for &ct in &col_tiles {
        cycle.adc_conversions += ct;
        slowest_adc = slowest_adc.max(adc_queue(ct, hw.adc_share));
    }
    cycle.adc_slots = slowest_adc;

    // Row tiles of one output are reduced one after another.
    let merges = row_tiles.len() as u64 - 1;

    let mut total = Events::default();
    let mut window = 0;
    while window < windows {
        // One round runs up to `duplication` windows on separate copies.
        let batch = hw.duplication.min(windows - window);
        for copy in 0..batch {
            let timed = copy == 0;
            for _ in 0..cycles {
                let mut c = cycle;
                if !timed {
                    c.dac_slots = 0;
                    c.xbar_slots = 0;
                    c.adc_slots = 0;
                }
                total.add(&c);
            }
            for _ in 0..outputs {
                total.psum_adds += merges;
            }
            if timed {
                total.psum_slots += merges;
            }
        }
        window += batch;
    }
    total.add(&movement(layer, hw));
    total
}

pub fn layer_events(layer: &LayerIR, hw: &HardwareConfig) -> Events {
    match layer.kind {
        LayerKind::Conv { .. } | LayerKind::FullyConnected { .. } => matrix_layer(layer, hw),
        LayerKind::MaxPool { .. } => {
            let n = elements(layer.in_shape);
            Events {
                pool_slots: n,
                pool_reads: n,
                ..Events::default()
            }
        }
        LayerKind::ResidualAdd { elements: n } => {
            let mut e = Events::default();
            for _ in 0..n {
                // Both operands travel over the global NoC.
                for _operand in 0..2 {
                    e.noc_byte_hops += hw.bytes_per_activation * hw.hops_global;
                }
                e.gacc_ops += 1;
                e.gacc_slots += 1;
            }
            e
        }
        _ => Events::default(),
    }
}

pub struct Simulated {
    pub per_layer: Vec<Events>,
    pub total: Events,
}

pub fn simulate(ir: &NetworkIR, hw: &HardwareConfig) -> Simulated {
    let per_layer: Vec<Events> = ir.layers.iter().map(|l| layer_events(l, hw)).collect();
    let mut total = Events::default();
    for e in &per_layer {
        total.add(e);
    }
    Simulated { per_layer, total }
}
