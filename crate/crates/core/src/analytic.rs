//! Closed-form throughput estimate from a mapping plan.

use serde::{Deserialize, Serialize};

use crate::mapper::MappingPlan;
use crate::netspec::LayerGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticLayer {
    pub layer: usize,
    pub service_cycles: u64,
    /// Slower than the layer feeding it, so the upstream layer will see
    /// backpressure.
    pub backpressure_risk: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReport {
    pub layers: Vec<AnalyticLayer>,
    pub bottleneck_layer: usize,
    pub cycles_per_image: u64,
    pub fps: f64,
}

pub fn throughput_analytic(geoms: &[LayerGeometry], plan: &MappingPlan) -> AnalyticReport {
    let t = &plan.timing;
    let services: Vec<u64> = geoms
        .iter()
        .zip(&plan.layers)
        .map(|(g, m)| t.layer_service(g.out_dims.cols, m.neurons_per_unit, g.beats_per_neuron))
        .collect();
    let layers = services
        .iter()
        .enumerate()
        .map(|(i, &s)| AnalyticLayer {
            layer: i,
            service_cycles: s,
            backpressure_risk: i > 0 && s > services[i - 1],
        })
        .collect();
    let mut bottleneck = 0;
    for (i, &s) in services.iter().enumerate() {
        if s > services[bottleneck] {
            bottleneck = i;
        }
    }
    let cycles = services.get(bottleneck).copied().unwrap_or(0);
    AnalyticReport {
        layers,
        bottleneck_layer: bottleneck,
        cycles_per_image: cycles,
        fps: if cycles == 0 {
            0.0
        } else {
            plan.clock_mhz * 1e6 / cycles as f64
        },
    }
}
