//! Synaptic-operation energy profiler.
//!
//! Every synaptic layer is billed `SOP = fr × FLOP`, where `fr` is the
//! firing rate of the spiking layer driving it, at `E_AC` per operation.
//! The first layer receives real-valued frames and is billed as dense MACs
//! at `E_MAC`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::layers::ConvSpec;
use crate::probe::{OpKind, Probe};
use crate::tensor::{Scalar, Tensor};

/// Per-operation energies at 45 nm, in picojoules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyModel {
    pub e_ac_pj: f64,
    pub e_mac_pj: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            e_ac_pj: 0.9,
            e_mac_pj: 4.6,
        }
    }
}

impl EnergyModel {
    /// Joules for the given synaptic operations and first-layer MACs.
    pub fn total_energy(&self, sops: f64, mac_flops: f64) -> f64 {
        (self.e_ac_pj * sops + self.e_mac_pj * mac_flops) * 1e-12
    }

    /// Joules of a non-spiking counterpart executing every FLOP as a MAC.
    pub fn ann_energy(&self, flops: f64) -> f64 {
        self.e_mac_pj * flops * 1e-12
    }
}

/// Per-clip cost of one synaptic layer.
#[derive(Clone, Debug, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub stage: usize,
    pub kind: OpKind,
    pub driver: Option<String>,
    pub mac_billed: bool,
    pub flops: f64,
    pub firing_rate: f64,
    pub sops: f64,
    pub exact_acs: Option<f64>,
    pub energy_j: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    pub model: EnergyModel,
    pub clips: u64,
    pub layers: Vec<LayerCost>,
    /// Synaptic operations per clip (excluding the MAC-billed layer).
    pub total_sops: f64,
    /// Dense MACs of the MAC-billed layer per clip.
    pub mac_flops: f64,
    /// Dense FLOPs of every layer per clip.
    pub total_flops: f64,
    pub energy_j: f64,
    pub ann_energy_j: f64,
}

impl EnergyReport {
    pub fn energy_mj(&self) -> f64 {
        self.energy_j * 1e3
    }

    pub fn ann_energy_mj(&self) -> f64 {
        self.ann_energy_j * 1e3
    }

    /// Spiking energy as a fraction of the dense counterpart.
    pub fn ratio(&self) -> f64 {
        self.energy_j / self.ann_energy_j
    }

    pub fn per_stage_sops(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for l in self.layers.iter().filter(|l| !l.mac_billed) {
            match out.iter_mut().find(|(s, _)| *s == l.stage) {
                Some((_, v)) => *v += l.sops,
                None => out.push((l.stage, l.sops)),
            }
        }
        out.sort_by_key(|(s, _)| *s);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,stage,kind,driver,flops,firing_rate,sops,exact_acs,energy_mj\n");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.6},{},{},{:.9}",
                l.name,
                l.stage,
                if l.mac_billed { "mac" } else { l.kind.as_str() },
                l.driver.as_deref().unwrap_or(""),
                l.flops,
                l.firing_rate,
                l.sops,
                l.exact_acs.map(|v| v.to_string()).unwrap_or_default(),
                l.energy_j * 1e3
            );
        }
        let _ = writeln!(
            s,
            "total,,,,{},,{},,{:.9}",
            self.total_flops,
            self.total_sops,
            self.energy_mj()
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Firing rate of every recorded spiking layer.
pub fn record_firing_rates(probe: &Probe) -> Vec<(String, f64)> {
    probe
        .neurons
        .iter()
        .map(|n| (n.name.clone(), n.firing_rate()))
        .collect()
}

/// `fr × FLOP`.
pub fn estimate_sops(flops: f64, firing_rate: f64) -> f64 {
    flops * firing_rate
}

/// Dense FLOPs per clip of every layer seen by the probe.
pub fn count_flops(probe: &Probe) -> Vec<(String, f64)> {
    let clips = probe.clips.max(1) as f64;
    probe
        .synapses
        .iter()
        .map(|s| (s.name.clone(), s.flops as f64 / clips))
        .collect()
}

/// Exact accumulate count of a convolution over a binary input: every
/// nonzero input bit is accumulated once per kernel tap and output channel
/// that reads it, which equals the sum of `conv(x, 1)`.
pub fn exact_conv_acs<S: Scalar>(input: &Tensor<S>, spec: &ConvSpec) -> Result<u64> {
    if !input.is_binary() {
        return Err(Error::invalid("exact_ac_count", "input is not binary"));
    }
    let g_count = spec.groups;
    let mut w_shape = vec![g_count, spec.in_channels / g_count];
    w_shape.extend_from_slice(&spec.kernel);
    let mut g = Graph::<f64>::new();
    let x = g.constant(input.cast());
    let w = g.constant(Tensor::ones(&w_shape));
    let y = g.conv(x, w, None, &spec.stride, &spec.padding, g_count)?;
    let per_group: f64 = g.value(y).data().iter().sum();
    Ok((per_group * (spec.out_channels / g_count) as f64).round() as u64)
}

/// Exact accumulates of `a · b` with `a: [m, k]`, `b: [k, n]` binary: one
/// accumulate per `(i, p, j)` with `a[i,p] = b[p,j] = 1`.
pub fn exact_matmul_acs<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> u64 {
    let mut col_nnz = vec![0u64; k];
    for p in 0..k {
        col_nnz[p] = b[p * n..][..n].iter().filter(|v| **v != S::zero()).count() as u64;
    }
    let mut total = 0;
    for i in 0..m {
        for p in 0..k {
            if a[i * k + p] != S::zero() {
                total += col_nnz[p];
            }
        }
    }
    total
}

/// Sums the exact counts recorded by a probe with exact counting enabled.
pub fn exact_ac_count(probe: &Probe) -> Result<u64> {
    if !probe.exact {
        return Err(Error::State("probe was not recording exact counts".into()));
    }
    Ok(probe.synapses.iter().filter_map(|s| s.exact_acs).sum())
}

/// Builds the per-clip energy report from a probe that observed the
/// forward passes of `probe.clips` clips.
pub fn profile(probe: &Probe, model: &EnergyModel) -> Result<EnergyReport> {
    if probe.clips == 0 {
        return Err(Error::State("probe observed no clips".into()));
    }
    let clips = probe.clips as f64;
    let mut layers = Vec::with_capacity(probe.synapses.len());
    for s in &probe.synapses {
        let flops = s.flops as f64 / clips;
        let (fr, sops, energy_j) = if s.mac_billed {
            (1.0, 0.0, model.total_energy(0.0, flops))
        } else {
            let driver = s.driver.as_deref().ok_or_else(|| {
                Error::State(format!("{}: synaptic layer without a driving neuron layer", s.name))
            })?;
            let n = probe
                .neuron(driver)
                .ok_or_else(|| Error::State(format!("{}: driver {driver} not recorded", s.name)))?;
            let (spk, el) = (n.total_spikes() as f64, n.total_elements() as f64);
            let fr = if el == 0.0 { 0.0 } else { spk / el };
            let sops = if el == 0.0 { 0.0 } else { spk * flops / el };
            (fr, sops, model.total_energy(sops, 0.0))
        };
        layers.push(LayerCost {
            name: s.name.clone(),
            stage: s.stage,
            kind: s.kind,
            driver: s.driver.clone(),
            mac_billed: s.mac_billed,
            flops,
            firing_rate: fr,
            sops,
            exact_acs: s.exact_acs.map(|e| e as f64 / clips),
            energy_j,
        });
    }
    let total_sops: f64 = layers.iter().filter(|l| !l.mac_billed).map(|l| l.sops).sum();
    let mac_flops: f64 = layers.iter().filter(|l| l.mac_billed).map(|l| l.flops).sum();
    let total_flops: f64 = layers.iter().map(|l| l.flops).sum();
    Ok(EnergyReport {
        model: *model,
        clips: probe.clips,
        energy_j: model.total_energy(total_sops, mac_flops),
        ann_energy_j: model.ann_energy(total_flops),
        layers,
        total_sops,
        mac_flops,
        total_flops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_energy_matches_hand_value() {
        let m = EnergyModel::default();
        let e = m.total_energy(20.760e9, 0.700e9) * 1e3;
        assert!((e - 21.904).abs() < 1e-9, "{e}");
        let ann = m.ann_energy(229.163e9) * 1e3;
        assert!((ann - 1054.1498).abs() < 1e-6, "{ann}");
    }

    #[test]
    fn pointwise_exact_count_is_nnz_times_cout() {
        let x = Tensor::<f32>::from_f64(&[1, 2, 2, 2], &[1., 0., 1., 1., 0., 0., 1., 0.]);
        let spec = ConvSpec::pointwise(2, 5);
        assert_eq!(exact_conv_acs(&x, &spec).unwrap(), 4 * 5);
    }

    #[test]
    fn padded_conv_counts_only_real_taps() {
        // a single spike in a corner of a 3x3 map with a 3x3 pad-1 kernel is
        // read by the four output positions that cover it
        let mut d = vec![0.0; 9];
        d[0] = 1.0;
        let x = Tensor::<f32>::from_f64(&[1, 1, 3, 3], &d);
        let spec = ConvSpec::square(1, 1, 3, 1, 1, 1);
        assert_eq!(exact_conv_acs(&x, &spec).unwrap(), 4);
    }

    #[test]
    fn matmul_count() {
        let a = [1.0f32, 0.0, 1.0, 1.0];
        let b = [1.0f32, 1.0, 0.0, 1.0];
        // row0: p0 -> 2; row1: p0 -> 2, p1 -> 1
        assert_eq!(exact_matmul_acs(&a, &b, 2, 2, 2), 5);
    }

    #[test]
    fn non_binary_input_rejected() {
        let x = Tensor::<f32>::from_f64(&[1, 1, 1, 1], &[0.5]);
        assert!(exact_conv_acs(&x, &ConvSpec::pointwise(1, 1)).is_err());
    }
}
