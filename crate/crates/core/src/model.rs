//! Full network: patch-embedding stages with LFE/GSA blocks, the local
//! pathway and the classification head, plus the named variants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Graph, Var};
use crate::blocks::{BlockConfig, BlockEnv, ClassificationHead, Gsa, Lfe, LocalPathway, Neurons};
use crate::error::{Error, Result};
use crate::layers::{ForwardCtx, NormMode, PatchEmbed, PatchEmbedSpec, SpikingLayer};
use crate::neuron::NeuronConfig;
use crate::params::{Bindings, ParamStore};
use crate::probe::Probe;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeConfig {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Default for PeConfig {
    fn default() -> Self {
        Self {
            kernel: 3,
            stride: 2,
            padding: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub stage_depths: Vec<usize>,
    pub channels: Vec<usize>,
    pub time_steps: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub use_local_pathway: bool,
    pub norm_mode: NormMode,
    pub neuron: NeuronConfig,
    pub block: BlockConfig,
    /// Patch-embedding geometry per stage; missing entries use 3/2/1.
    pub pe: Vec<PeConfig>,
    /// Stages up to this index (exclusive) use LFE blocks, the rest GSA.
    /// Defaults to 2 for four stages and 1 for three.
    pub local_stages: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedVariant {
    Tiny,
    Base,
    Ss,
    St,
    Dp,
    Wd,
    #[serde(rename = "3stg")]
    ThreeStage,
}

impl NamedVariant {
    pub const ALL: [NamedVariant; 7] = [
        NamedVariant::Tiny,
        NamedVariant::Base,
        NamedVariant::Ss,
        NamedVariant::St,
        NamedVariant::Dp,
        NamedVariant::Wd,
        NamedVariant::ThreeStage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NamedVariant::Tiny => "tiny",
            NamedVariant::Base => "base",
            NamedVariant::Ss => "ss",
            NamedVariant::St => "st",
            NamedVariant::Dp => "dp",
            NamedVariant::Wd => "wd",
            NamedVariant::ThreeStage => "3stg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Parameter count reported for the variant, in millions.
    pub fn reference_params_m(self) -> Option<f64> {
        match self {
            NamedVariant::Base => Some(13.80),
            _ => None,
        }
    }

    pub fn config(self) -> ModelConfig {
        let (s, c, lp): (&[usize], &[usize], bool) = match self {
            NamedVariant::Tiny => return ModelConfig::tiny(),
            NamedVariant::Base => (&[1, 1, 3, 1], &[128, 256, 384, 512], true),
            NamedVariant::Ss => (&[1, 1, 2, 1], &[128, 256, 384, 512], true),
            NamedVariant::St => (&[1, 1, 3, 1], &[64, 128, 256, 512], true),
            NamedVariant::Dp => (&[1, 2, 4, 2], &[128, 256, 384, 512], true),
            NamedVariant::Wd => (&[1, 1, 3, 1], &[128, 256, 512, 768], true),
            NamedVariant::ThreeStage => (&[1, 2, 1], &[64, 128, 256], false),
        };
        ModelConfig {
            stage_depths: s.to_vec(),
            channels: c.to_vec(),
            input_height: 224,
            input_width: 224,
            num_classes: 101,
            use_local_pathway: lp,
            ..ModelConfig::tiny()
        }
    }
}

/// Spatial extents of every stage and the local pathway.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    /// Output extent of each stage's patch embedding.
    pub stages: Vec<(usize, usize)>,
    pub lp: Option<(usize, usize)>,
}

impl ModelConfig {
    pub fn tiny() -> Self {
        Self {
            stage_depths: vec![1, 1, 2, 1],
            channels: vec![16, 32, 48, 64],
            time_steps: 8,
            input_height: 32,
            input_width: 32,
            input_channels: 3,
            num_classes: 8,
            use_local_pathway: true,
            norm_mode: NormMode::Tdbn,
            neuron: NeuronConfig::default(),
            block: BlockConfig::default(),
            pe: Vec::new(),
            local_stages: None,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stage_depths.len()
    }

    pub fn pe_config(&self, stage: usize) -> PeConfig {
        self.pe.get(stage).copied().unwrap_or_default()
    }

    pub fn local_stage_count(&self) -> usize {
        self.local_stages
            .unwrap_or(if self.num_stages() >= 4 { 2 } else { 1 })
    }

    /// Stage whose patch-embedding output feeds the local pathway.
    pub fn lp_tap(&self) -> Option<usize> {
        (self.use_local_pathway && self.num_stages() >= 2).then(|| self.num_stages() - 2)
    }

    pub fn pe_spec(&self, stage: usize) -> PatchEmbedSpec {
        let pe = self.pe_config(stage);
        PatchEmbedSpec {
            in_channels: if stage == 0 {
                self.input_channels
            } else {
                self.channels[stage - 1]
            },
            out_channels: self.channels[stage],
            kernel: pe.kernel,
            stride: pe.stride,
            padding: pe.padding,
            has_input_neuron: stage > 0,
        }
    }

    pub fn head_channels(&self) -> usize {
        let c = *self.channels.last().unwrap_or(&0);
        if self.lp_tap().is_some() {
            2 * c
        } else {
            c
        }
    }

    pub fn validate(&self) -> Result<Geometry> {
        let err = |m: String| Err(Error::Config(m));
        if self.stage_depths.len() != self.channels.len() {
            return err(format!(
                "model.stage_depths has {} entries but model.channels has {}",
                self.stage_depths.len(),
                self.channels.len()
            ));
        }
        if self.stage_depths.is_empty() || self.stage_depths.len() > 4 {
            return err("model.stage_depths must have 1 to 4 entries".into());
        }
        if self.channels.contains(&0) {
            return err("model.channels must be positive".into());
        }
        if self.time_steps == 0 {
            return err("model.time_steps must be >= 1".into());
        }
        if self.input_channels == 0 || self.input_height == 0 || self.input_width == 0 {
            return err("model input extents must be positive".into());
        }
        if self.num_classes == 0 {
            return err("model.num_classes must be >= 1".into());
        }
        if self.pe.len() > self.num_stages() {
            return err(format!("model.pe has more entries than the {} stages", self.num_stages()));
        }
        if self.local_stage_count() > self.num_stages() {
            return err("model.local_stages exceeds the number of stages".into());
        }
        self.neuron.validate().map_err(|e| Error::Config(format!("model.neuron: {e}")))?;
        self.block.validate()?;
        let (mut h, mut w) = (self.input_height, self.input_width);
        let mut stages = Vec::with_capacity(self.num_stages());
        for i in 0..self.num_stages() {
            (h, w) = self
                .pe_spec(i)
                .output_extent(h, w)
                .map_err(|e| Error::Config(format!("model.pe[{i}]: {e}")))?;
            stages.push((h, w));
        }
        let lp = match self.lp_tap() {
            Some(tap) => {
                let (th, tw) = stages[tap];
                let spec = crate::layers::ConvSpec::depthwise(
                    self.channels[tap],
                    crate::blocks::LP_KERNEL,
                    crate::blocks::LP_STRIDE,
                );
                let e = spec
                    .output_extent(&[th, tw])
                    .map_err(|e| Error::Config(format!("local pathway: {e}")))?;
                if (e[0], e[1]) != stages[stages.len() - 1] {
                    return err(format!(
                        "local pathway output {}x{} does not match the last stage {}x{}",
                        e[0],
                        e[1],
                        h,
                        w
                    ));
                }
                Some((e[0], e[1]))
            }
            None => None,
        };
        Ok(Geometry { stages, lp })
    }

    /// Stable digest of the architecture-defining fields.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).into()
    }
}

#[derive(Clone, Debug)]
pub enum Block<S: Scalar = f32> {
    Lfe(Lfe<S>),
    Gsa(Gsa<S>),
}

impl<S: Scalar> Block<S> {
    pub fn forward(&mut self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        match self {
            Block::Lfe(b) => b.forward(ctx, x),
            Block::Gsa(b) => b.forward(ctx, x),
        }
    }

    fn neurons(&self) -> Vec<&SpikingLayer<S>> {
        match self {
            Block::Lfe(b) => b.neurons(),
            Block::Gsa(b) => b.neurons(),
        }
    }

    fn neurons_mut(&mut self) -> Vec<&mut SpikingLayer<S>> {
        match self {
            Block::Lfe(b) => b.neurons_mut(),
            Block::Gsa(b) => b.neurons_mut(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Stage<S: Scalar = f32> {
    pub pe: PatchEmbed<S>,
    pub blocks: Vec<Block<S>>,
}

/// Per-call forward options.
#[derive(Clone, Copy, Debug, Default)]
pub struct Mode {
    pub training: bool,
    /// Replace the spike nonlinearity by its surrogate in the forward pass.
    pub smooth: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode {
        training: true,
        smooth: false,
    };
    pub const EVAL: Mode = Mode {
        training: false,
        smooth: false,
    };
}

#[derive(Clone, Debug)]
pub struct Model<S: Scalar = f32> {
    pub cfg: ModelConfig,
    pub geometry: Geometry,
    pub store: ParamStore<S>,
    pub stages: Vec<Stage<S>>,
    pub lp: Option<LocalPathway<S>>,
    pub head: ClassificationHead<S>,
    /// Steps of the current clip processed so far.
    t: usize,
    batch: Option<usize>,
}

impl<S: Scalar> Model<S> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let geometry = cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut stages = Vec::with_capacity(cfg.num_stages());
        let mut lp = None;
        for i in 0..cfg.num_stages() {
            let stage_no = i + 1;
            let pe = PatchEmbed::new(
                &mut store,
                &mut rng,
                &format!("stage{stage_no}.pe"),
                stage_no,
                cfg.pe_spec(i),
                &cfg.neuron,
                cfg.norm_mode,
                cfg.time_steps,
            )?;
            let mut env = BlockEnv {
                store: &mut store,
                rng: &mut rng,
                stage: stage_no,
                neuron: &cfg.neuron,
                norm: cfg.norm_mode,
                time_steps: cfg.time_steps,
                block: &cfg.block,
            };
            let c = cfg.channels[i];
            let local = i < cfg.local_stage_count();
            let mut blocks = Vec::with_capacity(cfg.stage_depths[i]);
            for j in 0..cfg.stage_depths[i] {
                let b = if local {
                    Block::Lfe(Lfe::new(&mut env, &format!("stage{stage_no}.lfe{}", j + 1), c)?)
                } else {
                    Block::Gsa(Gsa::new(&mut env, &format!("stage{stage_no}.gsa{}", j + 1), c)?)
                };
                blocks.push(b);
            }
            stages.push(Stage { pe, blocks });
        }
        let last = cfg.num_stages();
        if let Some(tap) = cfg.lp_tap() {
            let mut env = BlockEnv {
                store: &mut store,
                rng: &mut rng,
                stage: last,
                neuron: &cfg.neuron,
                norm: cfg.norm_mode,
                time_steps: cfg.time_steps,
                block: &cfg.block,
            };
            lp = Some(LocalPathway::new(&mut env, "lp", cfg.channels[tap], cfg.channels[last - 1])?);
        }
        let (ho, wo) = geometry.stages[last - 1];
        let mut env = BlockEnv {
            store: &mut store,
            rng: &mut rng,
            stage: last + 1,
            neuron: &cfg.neuron,
            norm: cfg.norm_mode,
            time_steps: cfg.time_steps,
            block: &cfg.block,
        };
        let head = ClassificationHead::new(
            &mut env,
            "head",
            cfg.head_channels(),
            [cfg.time_steps, ho, wo],
            cfg.num_classes,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            geometry,
            store,
            stages,
            lp,
            head,
            t: 0,
            batch: None,
        })
    }

    /// Trainable scalar count.
    pub fn count_parameters(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn neurons(&self) -> Vec<&SpikingLayer<S>> {
        let mut v = Vec::new();
        for s in &self.stages {
            v.extend(s.pe.neuron.iter());
            for b in &s.blocks {
                v.extend(b.neurons());
            }
        }
        if let Some(lp) = &self.lp {
            v.extend(lp.neurons());
        }
        v.extend(self.head.neurons());
        v
    }

    fn neurons_mut(&mut self) -> Vec<&mut SpikingLayer<S>> {
        let mut v = Vec::new();
        for s in &mut self.stages {
            v.extend(s.pe.neuron.iter_mut());
            for b in &mut s.blocks {
                v.extend(b.neurons_mut());
            }
        }
        if let Some(lp) = &mut self.lp {
            v.extend(lp.neurons_mut());
        }
        v
    }

    /// Returns every neuron layer to `V_reset` and rewinds to step 0.
    pub fn reset(&mut self) {
        for n in self.neurons_mut() {
            n.reset();
        }
        self.head.reset();
        self.t = 0;
        self.batch = None;
    }

    /// Steps of the current clip processed so far.
    pub fn step_index(&self) -> usize {
        self.t
    }

    /// Learned (or fixed) membrane time constant of every neuron layer.
    pub fn taus(&self) -> Vec<(String, usize, f64)> {
        self.neurons()
            .into_iter()
            .map(|n| (n.name.clone(), n.stage, n.tau(&self.store)))
            .collect()
    }

    /// Membrane potentials of every neuron layer, for state comparisons.
    pub fn membranes(&self) -> Vec<(String, Option<Vec<S>>)> {
        self.neurons()
            .into_iter()
            .map(|n| (n.name.clone(), n.membrane().map(<[S]>::to_vec)))
            .collect()
    }

    fn check_frames(&self, shape: &[usize]) -> Result<()> {
        let c = &self.cfg;
        if shape.len() != 5
            || shape[2] != c.input_channels
            || shape[3] != c.input_height
            || shape[4] != c.input_width
        {
            return Err(Error::Shape {
                op: "model_forward",
                lhs: shape.to_vec(),
                rhs: vec![c.time_steps, shape.get(1).copied().unwrap_or(0), c.input_channels, c.input_height, c.input_width],
            });
        }
        Ok(())
    }

    /// Processes a whole clip `[T, B, C, H, W]` from a fresh state and
    /// returns the logits `[B, classes]`.
    pub fn forward_clip(
        &mut self,
        g: &mut Graph<S>,
        params: &Bindings,
        clip: Var,
        mode: Mode,
        probe: Option<&mut Probe>,
    ) -> Result<Var> {
        let shape = g.shape(clip).to_vec();
        self.check_frames(&shape)?;
        if shape[0] != self.cfg.time_steps {
            return Err(Error::invalid(
                "model_forward",
                format!("clip has {} frames, model T = {}", shape[0], self.cfg.time_steps),
            ));
        }
        self.reset();
        let out = self.forward_window(g, params, clip, mode, probe)?;
        Ok(out.expect("full clip completes the head"))
    }

    /// Continues the current clip with `[t', B, C, H, W]` more frames.
    /// Returns logits once all `T` frames have been seen. Evaluation only.
    pub fn step(
        &mut self,
        g: &mut Graph<S>,
        params: &Bindings,
        frames: Var,
        probe: Option<&mut Probe>,
    ) -> Result<Option<Var>> {
        self.forward_window(g, params, frames, Mode::EVAL, probe)
    }

    fn forward_window(
        &mut self,
        g: &mut Graph<S>,
        params: &Bindings,
        frames: Var,
        mode: Mode,
        probe: Option<&mut Probe>,
    ) -> Result<Option<Var>> {
        let shape = g.shape(frames).to_vec();
        self.check_frames(&shape)?;
        let (steps, batch) = (shape[0], shape[1]);
        let t_total = self.cfg.time_steps;
        if self.t >= t_total {
            return Err(Error::State(format!(
                "clip of {t_total} steps already complete; reset before the next clip"
            )));
        }
        if self.t + steps > t_total {
            return Err(Error::invalid(
                "model_forward",
                format!("steps {}..{} exceed model T = {t_total}", self.t, self.t + steps),
            ));
        }
        if mode.training && !(self.t == 0 && steps == t_total) {
            return Err(Error::State("training requires whole clips".into()));
        }
        match self.batch {
            Some(b) if b != batch => {
                return Err(Error::State(format!(
                    "batch changed from {b} to {batch} within a clip"
                )))
            }
            _ => self.batch = Some(batch),
        }
        let t0 = self.t;
        let Model {
            store,
            stages,
            lp,
            head,
            cfg,
            ..
        } = self;
        let mut ctx = ForwardCtx {
            g,
            params,
            store,
            training: mode.training,
            smooth: mode.smooth,
            t0,
            steps,
            time_steps: t_total,
            batch,
            probe,
        };
        let mut x = ctx.g.reshape(
            frames,
            &[steps * batch, cfg.input_channels, cfg.input_height, cfg.input_width],
        )?;
        let tap = cfg.lp_tap();
        let mut lp_in = None;
        for (i, stage) in stages.iter_mut().enumerate() {
            x = stage.pe.forward(&mut ctx, x)?;
            if tap == Some(i) {
                lp_in = Some(x);
            }
            for b in &mut stage.blocks {
                x = b.forward(&mut ctx, x)?;
            }
        }
        if let (Some(lp), Some(l)) = (lp.as_mut(), lp_in) {
            let l = lp.forward(&mut ctx, l)?;
            x = ctx.g.concat(&[x, l], 1)?;
        }
        let out = head.forward(&mut ctx, x)?;
        if out.is_some() {
            if let Some(p) = ctx.probe.as_deref_mut() {
                p.clips += batch as u64;
            }
        }
        self.t = t0 + steps;
        Ok(out)
    }

    /// Evaluation-mode logits of a whole clip.
    pub fn predict(&mut self, clip: &Tensor<S>, probe: Option<&mut Probe>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let params = self.store.bind(&mut g, false);
        let x = g.constant(clip.clone());
        let y = self.forward_clip(&mut g, &params, x, Mode::EVAL, probe)?;
        Ok(g.value(y).clone())
    }

    pub fn cast<T: Scalar>(&self) -> Result<Model<T>> {
        let mut m = Model::<T>::new(&self.cfg, 0)?;
        m.store = self.store.cast();
        Ok(m)
    }
}

/// Parameter count of every named variant at its reference resolution.
pub fn variant_parameter_report() -> Result<Vec<(NamedVariant, usize, Option<f64>)>> {
    NamedVariant::ALL
        .into_iter()
        .map(|v| {
            let m = Model::<f32>::new(&v.config(), 0)?;
            Ok((v, m.count_parameters(), v.reference_params_m()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(cfg: &ModelConfig, b: usize, seed: u64) -> Tensor<f32> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [cfg.time_steps, b, 3, cfg.input_height, cfg.input_width];
        let n = shape.iter().product();
        Tensor::from_vec(&shape, (0..n).map(|_| rng.random::<f32>()).collect())
    }

    #[test]
    fn tiny_forward_shape() {
        let cfg = ModelConfig::tiny();
        let mut m = Model::<f32>::new(&cfg, 0).unwrap();
        let y = m.predict(&clip(&cfg, 2, 1), None).unwrap();
        assert_eq!(y.shape(), &[2, 8]);
        assert!(y.is_finite());
    }

    #[test]
    fn variants_build_with_expected_depths() {
        let base = NamedVariant::Base.config();
        assert_eq!(base.stage_depths, vec![1, 1, 3, 1]);
        let three = NamedVariant::ThreeStage.config();
        assert_eq!(three.num_stages(), 3);
        assert!(three.lp_tap().is_none());
    }

    #[test]
    fn wrong_time_steps_rejected() {
        let cfg = ModelConfig::tiny();
        let mut m = Model::<f32>::new(&cfg, 0).unwrap();
        let c = clip(&ModelConfig { time_steps: 4, ..cfg.clone() }, 1, 0);
        assert!(m.predict(&c, None).is_err());
    }

    #[test]
    fn lp_resolution_mismatch_rejected() {
        let mut cfg = ModelConfig::tiny();
        cfg.pe = vec![PeConfig::default(); 3];
        cfg.pe.push(PeConfig {
            kernel: 1,
            stride: 1,
            padding: 0,
        });
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn step_after_complete_clip_errors() {
        let cfg = ModelConfig::tiny();
        let mut m = Model::<f32>::new(&cfg, 0).unwrap();
        let c = clip(&cfg, 1, 0);
        m.predict(&c, None).unwrap();
        let mut g = Graph::new();
        let p = m.store.bind(&mut g, false);
        let one = Tensor::from_vec(&[1, 1, 3, 32, 32], c.data()[..3 * 32 * 32].to_vec());
        let x = g.constant(one);
        assert!(matches!(m.step(&mut g, &p, x, None), Err(Error::State(_))));
    }
}
