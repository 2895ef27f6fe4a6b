//! Analytical latency/energy model of an analog memristive-crossbar accelerator.
//!
//! Matrix layers (conv, FC) are unrolled into a `rows x cols` weight matrix,
//! with `rows = cin*kh*kw` (FC: `inputs`) and `cols = cout * ceil(Wb/Cb)` bit
//! slices, and tiled onto `R x C` crossbars. Every output window is one MVM:
//! the input vector is streamed in `ceil(Ab/Db)` DAC cycles, all crossbars
//! fire in parallel, and each crossbar's columns are digitized by a shared
//! ADC bank (`ceil(cols/S)` conversions in series). Partial sums from row
//! partitions are merged digitally. Windows run one after another.
//!
//! Residual additions go through the global accumulator and pay network-on-chip
//! traffic for both operands; pooling is charged per input element.
//!
//! Units: time in ns, energy in pJ; totals are also reported in ms and mJ.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::ir::{LayerIR, LayerKind, NetworkIR, TensorShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareConfig {
    pub xbar_rows: u64,
    pub xbar_cols: u64,
    pub weight_bits: u64,
    pub cell_bits: u64,
    pub activation_bits: u64,
    pub dac_bits: u64,
    /// ADC sharing factor: each crossbar digitizes `ceil(cols/adc_share)` columns per ADC in series.
    pub adc_share: u64,
    pub t_dac: f64,
    pub t_xbar: f64,
    pub t_adc: f64,
    pub t_psum: f64,
    pub t_pool_per_elem: f64,
    pub t_gacc_per_elem: f64,
    pub e_dac: f64,
    pub e_cell: f64,
    pub e_adc: f64,
    pub e_psum: f64,
    pub e_buf: f64,
    pub e_noc: f64,
    pub e_gacc: f64,
    pub e_pool: f64,
    pub hops_local: u64,
    pub hops_global: u64,
    pub bytes_per_activation: u64,
    /// Number of crossbar copies per layer; windows run in `ceil(windows/duplication)` rounds.
    pub duplication: u64,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        Self {
            xbar_rows: 256,
            xbar_cols: 256,
            weight_bits: 8,
            cell_bits: 2,
            activation_bits: 8,
            dac_bits: 1,
            adc_share: 8,
            t_dac: 1.0,
            t_xbar: 10.0,
            t_adc: 1.0,
            t_psum: 2.0,
            t_pool_per_elem: 1.0,
            t_gacc_per_elem: 2.0,
            e_dac: 0.5,
            e_cell: 0.05,
            e_adc: 2.0,
            e_psum: 0.1,
            e_buf: 1.0,
            e_noc: 2.0,
            e_gacc: 0.5,
            e_pool: 0.2,
            hops_local: 1,
            hops_global: 4,
            bytes_per_activation: 1,
            duplication: 1,
        }
    }
}

impl HardwareConfig {
    pub fn check(&self) -> Result<()> {
        let counts = [
            ("xbar_rows", self.xbar_rows),
            ("xbar_cols", self.xbar_cols),
            ("weight_bits", self.weight_bits),
            ("cell_bits", self.cell_bits),
            ("activation_bits", self.activation_bits),
            ("dac_bits", self.dac_bits),
            ("adc_share", self.adc_share),
            ("hops_local", self.hops_local),
            ("hops_global", self.hops_global),
            ("bytes_per_activation", self.bytes_per_activation),
            ("duplication", self.duplication),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v < 1) {
            return Err(Error::Config(format!("hardware: {name} must be >= 1")));
        }
        let reals = [
            ("t_dac", self.t_dac),
            ("t_xbar", self.t_xbar),
            ("t_adc", self.t_adc),
            ("t_psum", self.t_psum),
            ("t_pool_per_elem", self.t_pool_per_elem),
            ("t_gacc_per_elem", self.t_gacc_per_elem),
            ("e_dac", self.e_dac),
            ("e_cell", self.e_cell),
            ("e_adc", self.e_adc),
            ("e_psum", self.e_psum),
            ("e_buf", self.e_buf),
            ("e_noc", self.e_noc),
            ("e_gacc", self.e_gacc),
            ("e_pool", self.e_pool),
        ];
        if let Some((name, _)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!(
                "hardware: {name} must be finite and >= 0"
            )));
        }
        if self.cell_bits > self.weight_bits {
            return Err(Error::Config("hardware: cell_bits must not exceed weight_bits".into()));
        }
        if self.dac_bits > self.activation_bits {
            return Err(Error::Config(
                "hardware: dac_bits must not exceed activation_bits".into(),
            ));
        }
        Ok(())
    }

    /// Columns per weight, `ceil(Wb/Cb)`.
    pub fn slices_per_weight(&self) -> u64 {
        self.weight_bits.div_ceil(self.cell_bits)
    }

    /// Input cycles per MVM, `ceil(Ab/Db)`.
    pub fn input_cycles(&self) -> u64 {
        self.activation_bits.div_ceil(self.dac_bits)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("layer {kind} is not a matrix layer and cannot be mapped onto crossbars")]
pub struct MappingError {
    pub kind: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingReport {
    pub rows_needed: u64,
    pub cols_needed: u64,
    pub row_parts: u64,
    pub col_parts: u64,
    pub xbars: u64,
    /// MVMs per inference: output positions for conv, 1 for FC.
    pub windows: u64,
}

pub fn map_layer(layer: &LayerIR, hw: &HardwareConfig) -> Result<MappingReport, MappingError> {
    let (rows_needed, outputs, windows) = match (layer.kind, layer.out_shape) {
        (
            LayerKind::Conv {
                kh, kw, cin, cout, ..
            },
            TensorShape::Spatial { h, w, .. },
        ) => (cin * kh * kw, cout, h * w),
        (LayerKind::FullyConnected { inputs, outputs, .. }, _) => (inputs, outputs, 1),
        (kind, _) => return Err(MappingError { kind: kind.name() }),
    };
    let cols_needed = outputs * hw.slices_per_weight();
    let row_parts = rows_needed.div_ceil(hw.xbar_rows);
    let col_parts = cols_needed.div_ceil(hw.xbar_cols);
    Ok(MappingReport {
        rows_needed,
        cols_needed,
        row_parts,
        col_parts,
        xbars: row_parts * col_parts,
        windows,
    })
}

fn widest_partition(mapping: &MappingReport, hw: &HardwareConfig) -> u64 {
    mapping.cols_needed.min(hw.xbar_cols)
}

/// Latency of one MVM window in ns.
pub fn window_latency(mapping: &MappingReport, hw: &HardwareConfig) -> f64 {
    let adc_serial = widest_partition(mapping, hw).div_ceil(hw.adc_share);
    hw.input_cycles() as f64 * (hw.t_dac + hw.t_xbar + adc_serial as f64 * hw.t_adc)
        + (mapping.row_parts - 1) as f64 * hw.t_psum
}

/// Layer latency in ns. `mapping` is required for matrix layers and ignored otherwise.
pub fn latency_layer(layer: &LayerIR, mapping: Option<&MappingReport>, hw: &HardwareConfig) -> f64 {
    match (layer.kind, mapping) {
        (k, Some(m)) if k.is_matrix() => {
            m.windows.div_ceil(hw.duplication) as f64 * window_latency(m, hw)
        }
        (LayerKind::MaxPool { .. }, _) => layer.in_shape.elements() as f64 * hw.t_pool_per_elem,
        (LayerKind::ResidualAdd { elements }, _) => elements as f64 * hw.t_gacc_per_elem,
        _ => 0.0,
    }
}

/// Crossbar-core energy of one MVM window (DAC, cells, ADC, partial sums) in pJ.
pub fn window_energy(mapping: &MappingReport, hw: &HardwareConfig) -> f64 {
    let rows = mapping.rows_needed as f64;
    let cols = mapping.cols_needed as f64;
    // Partitions tile the full matrix, so their cell counts sum to rows*cols.
    let cells = rows * cols;
    let outputs = (mapping.cols_needed / hw.slices_per_weight()) as f64;
    hw.input_cycles() as f64 * (rows * hw.e_dac + cells * hw.e_cell + cols * hw.e_adc)
        + (mapping.row_parts - 1) as f64 * outputs * hw.e_psum
}

/// Buffer and local NoC energy for moving a layer's input and output, in pJ.
pub fn movement_energy(layer: &LayerIR, hw: &HardwareConfig) -> f64 {
    let bytes = (layer.in_shape.elements() + layer.out_shape.elements()) * hw.bytes_per_activation;
    bytes as f64 * (hw.e_buf + hw.e_noc * hw.hops_local as f64)
}

/// Layer energy in pJ. `mapping` is required for matrix layers and ignored otherwise.
pub fn energy_layer(layer: &LayerIR, mapping: Option<&MappingReport>, hw: &HardwareConfig) -> f64 {
    match (layer.kind, mapping) {
        (k, Some(m)) if k.is_matrix() => {
            m.windows as f64 * window_energy(m, hw) + movement_energy(layer, hw)
        }
        (LayerKind::ResidualAdd { elements }, _) => {
            let traffic = (hw.bytes_per_activation * 2 * hw.hops_global) as f64 * hw.e_noc;
            elements as f64 * (traffic + hw.e_gacc)
        }
        (LayerKind::MaxPool { .. }, _) => layer.in_shape.elements() as f64 * hw.e_pool,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub index: usize,
    pub kind: String,
    pub latency_ns: f64,
    pub energy_pj: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mapping: Option<MappingReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub latency_ns: f64,
    pub energy_pj: f64,
    pub latency_ms: f64,
    pub energy_mj: f64,
    pub total_xbars: u64,
}

pub fn ns_to_ms(ns: f64) -> f64 {
    ns / 1e6
}

pub fn pj_to_mj(pj: f64) -> f64 {
    pj / 1e9
}

pub fn estimate_layer(index: usize, layer: &LayerIR, hw: &HardwareConfig) -> Result<LayerCost> {
    let mapping = if layer.kind.is_matrix() {
        Some(map_layer(layer, hw)?)
    } else {
        None
    };
    Ok(LayerCost {
        index,
        kind: layer.kind.name().to_string(),
        latency_ns: latency_layer(layer, mapping.as_ref(), hw),
        energy_pj: energy_layer(layer, mapping.as_ref(), hw),
        mapping,
    })
}

/// Per-layer and total cost of a network. Totals are summed in layer order.
pub fn estimate_network(ir: &NetworkIR, hw: &HardwareConfig) -> Result<CostReport> {
    hw.check()?;
    let layers = ir
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| estimate_layer(i, l, hw))
        .collect::<Result<Vec<_>>>()?;
    let latency_ns: f64 = layers.iter().map(|l| l.latency_ns).sum();
    let energy_pj: f64 = layers.iter().map(|l| l.energy_pj).sum();
    let total_xbars = layers
        .iter()
        .filter_map(|l| l.mapping.map(|m| m.xbars))
        .sum();
    Ok(CostReport {
        layers,
        latency_ns,
        energy_pj,
        latency_ms: ns_to_ms(latency_ns),
        energy_mj: pj_to_mj(energy_pj),
        total_xbars,
    })
}
