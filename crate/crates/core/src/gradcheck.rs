//! Central-difference verification of analytic gradients.

use serde::Serialize;

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{BnLayout, BnStats, Graph, Var};
use crate::neuron::NeuronConfig;
use crate::error::{Error, Result};
use crate::model::{Mode, Model, ModelConfig};
use crate::params::ParamId;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per input.
    pub max_per_input: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tol: 1e-4,
            floor: 1e-3,
            max_per_input: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ElementCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub checked: Vec<ElementCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradient of the scalar built by `f` against central
/// differences, for every (or a sampled subset of) entries of `inputs`.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    if !g.value(out).is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(g);

    let mut work = inputs.to_vec();
    let mut checked = Vec::new();
    for (input, t) in inputs.iter().enumerate() {
        let n = t.numel();
        let count = cfg.max_per_input.map_or(n, |m| m.min(n));
        for j in 0..count {
            let index = if count == n { j } else { j * n / count };
            let orig = t.data()[index];
            work[input].data_mut()[index] = orig + cfg.step;
            let plus = eval(&work)?;
            work[input].data_mut()[index] = orig - cfg.step;
            let minus = eval(&work)?;
            work[input].data_mut()[index] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[input].data()[index];
            checked.push(ElementCheck {
                input,
                index,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric, cfg.floor),
            });
        }
    }
    let max_rel_err = checked.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_err <= cfg.tol,
        checked,
        max_rel_err,
        tol: cfg.tol,
    })
}

pub fn grad_check<F>(f: F, x: &Tensor<f64>, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_many(|g, v| f(g, v[0]), std::slice::from_ref(x), cfg)
}

/// Checks the gradient of the cross-entropy of a whole model with respect
/// to its input clip and the named parameters. Spikes are replaced by their
/// smooth surrogate so the network is differentiable; normalization runs
/// on batch statistics.
pub fn check_model(
    cfg: &ModelConfig,
    seed: u64,
    batch: usize,
    params: &[&str],
    gc: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let model = RefCell::new(Model::<f64>::new(cfg, seed)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = [cfg.time_steps, batch, cfg.input_channels, cfg.input_height, cfg.input_width];
    let n: usize = shape.iter().product();
    let clip = Tensor::from_vec(&shape, (0..n).map(|_| rng.random::<f64>()).collect());
    let labels: Vec<usize> = (0..batch).map(|i| i % cfg.num_classes).collect();
    let ids: Vec<ParamId> = params
        .iter()
        .map(|p| {
            model
                .borrow()
                .store
                .find(p)
                .ok_or_else(|| Error::Config(format!("unknown parameter {p}")))
        })
        .collect::<Result<_>>()?;
    let mut inputs = vec![clip];
    // perturb the affine parameters away from their identity init so every
    // path carries signal
    for &id in &ids {
        let mut t = model.borrow().store.get(id).clone();
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        inputs.push(t);
    }
    grad_check_many(
        |g, vars| {
            let mut m = model.borrow_mut();
            let overrides: Vec<(ParamId, Var)> = ids.iter().copied().zip(vars[1..].iter().copied()).collect();
            let bound = m.store.bind_with(g, false, &overrides);
            let mode = Mode {
                training: true,
                smooth: true,
            };
            let logits = m.forward_clip(g, &bound, vars[0], mode, None)?;
            g.cross_entropy(logits, &labels)
        },
        &inputs,
        gc,
    )
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Weighted sum with fixed random weights, so every output entry gets a
/// distinct upstream gradient.
fn project(g: &mut Graph<f64>, y: Var, rng: &RefCell<ChaCha8Rng>) -> Result<Var> {
    let w = random(&mut rng.borrow_mut(), g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Gradient checks of every differentiable primitive on small random
/// inputs. Returns one named report per primitive.
pub fn primitive_suite(gc: &GradCheckConfig, seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj = RefCell::new(ChaCha8Rng::seed_from_u64(seed ^ 0xfeed));
    let mut out = Vec::new();
    let mut run = |name: &str,
                   inputs: Vec<Tensor<f64>>,
                   f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>|
     -> Result<()> {
        let pseed: u64 = proj.borrow_mut().random();
        let report = grad_check_many(
            |g, v| {
                // same projection weights for every evaluation
                *proj.borrow_mut() = ChaCha8Rng::seed_from_u64(pseed);
                let y = f(g, v)?;
                project(g, y, &proj)
            },
            &inputs,
            gc,
        )?;
        out.push((name.to_string(), report));
        Ok(())
    };

    run("elementwise", vec![random(&mut rng, &[3, 4]), random(&mut rng, &[3, 4])], &|g, v| {
        let s = g.add(v[0], v[1])?;
        let d = g.sub(v[0], v[1])?;
        let m = g.mul(s, d)?;
        Ok(g.scale(m, 0.5))
    })?;
    run("matmul_t", vec![random(&mut rng, &[3, 4]), random(&mut rng, &[5, 4])], &|g, v| {
        g.matmul_t(v[0], v[1], false, true)
    })?;
    run(
        "linear",
        vec![random(&mut rng, &[6, 4]), random(&mut rng, &[5, 4]), random(&mut rng, &[5])],
        &|g, v| g.linear(v[0], v[1], Some(v[2])),
    )?;
    run(
        "conv2d_grouped_strided",
        vec![random(&mut rng, &[2, 4, 5, 5]), random(&mut rng, &[6, 2, 3, 3]), random(&mut rng, &[6])],
        &|g, v| g.conv(v[0], v[1], Some(v[2]), &[2, 2], &[1, 1], 2),
    )?;
    run(
        "conv3d_depthwise",
        vec![random(&mut rng, &[2, 3, 2, 3, 3]), random(&mut rng, &[3, 1, 2, 3, 3])],
        &|g, v| g.conv(v[0], v[1], None, &[1, 1, 1], &[0, 0, 0], 3),
    )?;
    let layout = BnLayout {
        groups: 2,
        batch: 3,
        channels: 2,
        spatial: 4,
    };
    run(
        "batch_norm_batch_stats",
        vec![random(&mut rng, &[2 * 3 * 2 * 4]), random(&mut rng, &[4]), random(&mut rng, &[4])],
        &|g, v| Ok(g.batch_norm(v[0], v[1], v[2], layout, BnStats::Batch { eps: 1e-5 })?.0),
    )?;
    run(
        "batch_norm_fixed_stats",
        vec![random(&mut rng, &[2 * 3 * 2 * 4]), random(&mut rng, &[4]), random(&mut rng, &[4])],
        &|g, v| {
            let stats = BnStats::Fixed {
                mean: &[0.1, -0.2, 0.3, 0.0],
                var: &[1.5, 0.5, 2.0, 1.0],
                eps: 1e-5,
            };
            Ok(g.batch_norm(v[0], v[1], v[2], layout, stats)?.0)
        },
    )?;
    let neuron = NeuronConfig::default().params(true);
    run(
        "spike_smooth_plif",
        vec![random(&mut rng, &[4, 6]).map(|x| 2.0 * x + 1.0), Tensor::from_f64(&[1], &[0.3])],
        &|g, v| Ok(g.spike(v[0], Some(v[1]), neuron, vec![0.0; 6])?.0),
    )?;
    run("cross_entropy", vec![random(&mut rng, &[3, 5])], &|g, v| {
        let l = g.cross_entropy(v[0], &[0, 4, 2])?;
        g.reshape(l, &[1])
    })?;
    run(
        "concat_permute_reshape_mean",
        vec![random(&mut rng, &[2, 3, 4]), random(&mut rng, &[2, 1, 4])],
        &|g, v| {
            let c = g.concat(&[v[0], v[1]], 1)?;
            let p = g.permute(c, &[2, 0, 1])?;
            let r = g.reshape(p, &[4, 8])?;
            let m = g.mean(r);
            let m = g.reshape(m, &[1])?;
            let r = g.reshape(r, &[32])?;
            let s = g.sum(r);
            let s = g.reshape(s, &[1])?;
            let both = g.concat(&[m, s], 0)?;
            g.concat(&[both, r], 0)
        },
    )?;
    Ok(out)
}
