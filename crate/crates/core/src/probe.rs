//! Forward-pass instrumentation: per-layer operation counts, spike
//! statistics and the binarity audit consumed by the energy profiler.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv,
    Linear,
    SsaMatmul,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Conv => "conv",
            OpKind::Linear => "linear",
            OpKind::SsaMatmul => "ssa_matmul",
        }
    }
}

/// Static description of a synaptic layer as seen by the probe.
#[derive(Clone, Debug)]
pub struct SynapseInfo<'a> {
    pub name: &'a str,
    pub stage: usize,
    pub kind: OpKind,
    /// Spiking layer whose output drives this layer's accumulations.
    pub driver: Option<&'a str>,
    /// First layer of the network, billed as dense MACs.
    pub mac_billed: bool,
    /// First linear operation after a spiking layer; its input must be binary.
    pub chain_head: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SynapseRecord {
    pub name: String,
    pub stage: usize,
    pub kind: OpKind,
    pub driver: Option<String>,
    pub mac_billed: bool,
    pub chain_head: bool,
    /// Dense MACs accumulated over every recorded sample.
    pub flops: u64,
    pub binary_violations: u64,
    pub exact_acs: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct NeuronRecord {
    pub name: String,
    pub stage: usize,
    /// Spike count per absolute time step.
    pub spikes_per_step: Vec<u64>,
    /// Element count per absolute time step.
    pub elements_per_step: Vec<u64>,
    pub tau: f64,
    #[serde(skip)]
    pub stored: Vec<Tensor<f32>>,
}

impl NeuronRecord {
    pub fn total_spikes(&self) -> u64 {
        self.spikes_per_step.iter().sum()
    }

    pub fn total_elements(&self) -> u64 {
        self.elements_per_step.iter().sum()
    }

    pub fn firing_rate(&self) -> f64 {
        let e = self.total_elements();
        if e == 0 {
            0.0
        } else {
            self.total_spikes() as f64 / e as f64
        }
    }

    pub fn per_step_rates(&self) -> Vec<f64> {
        self.spikes_per_step
            .iter()
            .zip(&self.elements_per_step)
            .map(|(&s, &e)| if e == 0 { 0.0 } else { s as f64 / e as f64 })
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Probe {
    /// Compute exact accumulate counts for binary-input layers.
    pub exact: bool,
    /// Keep a copy of every spike tensor (for independent recounts).
    pub keep_spikes: bool,
    pub synapses: Vec<SynapseRecord>,
    pub neurons: Vec<NeuronRecord>,
    /// Number of clips (samples) pushed through the network.
    pub clips: u64,
    syn_index: HashMap<String, usize>,
    neu_index: HashMap<String, usize>,
}

impl Probe {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_exact_counts(mut self) -> Self {
        self.exact = true;
        self
    }

    pub fn with_stored_spikes(mut self) -> Self {
        self.keep_spikes = true;
        self
    }

    pub fn synapse(&self, name: &str) -> Option<&SynapseRecord> {
        self.syn_index.get(name).map(|&i| &self.synapses[i])
    }

    pub fn neuron(&self, name: &str) -> Option<&NeuronRecord> {
        self.neu_index.get(name).map(|&i| &self.neurons[i])
    }

    /// Layers whose input should have been binary but was not.
    pub fn binarity_violations(&self) -> Vec<&SynapseRecord> {
        self.synapses.iter().filter(|s| s.binary_violations > 0).collect()
    }

    pub fn record_synapse<S: Scalar>(
        &mut self,
        info: &SynapseInfo<'_>,
        flops: u64,
        input: &Tensor<S>,
        exact: Option<u64>,
    ) {
        let i = match self.syn_index.get(info.name) {
            Some(&i) => i,
            None => {
                self.synapses.push(SynapseRecord {
                    name: info.name.to_string(),
                    stage: info.stage,
                    kind: info.kind,
                    driver: info.driver.map(str::to_string),
                    mac_billed: info.mac_billed,
                    chain_head: info.chain_head,
                    flops: 0,
                    binary_violations: 0,
                    exact_acs: None,
                });
                self.syn_index.insert(info.name.to_string(), self.synapses.len() - 1);
                self.synapses.len() - 1
            }
        };
        let rec = &mut self.synapses[i];
        rec.flops += flops;
        if info.chain_head && !input.is_binary() {
            rec.binary_violations += 1;
        }
        if let Some(e) = exact {
            *rec.exact_acs.get_or_insert(0) += e;
        }
    }

    /// Records spikes of shape `[steps, ...]` produced at absolute steps
    /// `t0..t0+steps`.
    pub fn record_spikes<S: Scalar>(
        &mut self,
        name: &str,
        stage: usize,
        spikes: &Tensor<S>,
        steps: usize,
        t0: usize,
        tau: f64,
    ) {
        let i = match self.neu_index.get(name) {
            Some(&i) => i,
            None => {
                self.neurons.push(NeuronRecord {
                    name: name.to_string(),
                    stage,
                    spikes_per_step: Vec::new(),
                    elements_per_step: Vec::new(),
                    tau,
                    stored: Vec::new(),
                });
                self.neu_index.insert(name.to_string(), self.neurons.len() - 1);
                self.neurons.len() - 1
            }
        };
        let keep = self.keep_spikes;
        let rec = &mut self.neurons[i];
        rec.tau = tau;
        let per = spikes.numel() / steps;
        if rec.spikes_per_step.len() < t0 + steps {
            rec.spikes_per_step.resize(t0 + steps, 0);
            rec.elements_per_step.resize(t0 + steps, 0);
        }
        for s in 0..steps {
            let chunk = &spikes.data()[s * per..][..per];
            rec.spikes_per_step[t0 + s] += chunk.iter().filter(|&&v| v != S::zero()).count() as u64;
            rec.elements_per_step[t0 + s] += per as u64;
        }
        if keep {
            rec.stored.push(spikes.cast());
        }
    }
}
