//! Adadelta updates, global-norm gradient clipping and seeded initialization.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract_err, shape_err, Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_CLIP: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub eps: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig { rho: DEFAULT_RHO, eps: DEFAULT_EPS }
    }
}

impl AdadeltaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(contract_err!("adadelta rho must lie in (0, 1), got {}", self.rho));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(contract_err!("adadelta eps must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

/// Running averages of squared gradients and squared updates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState {
    pub sq_grad: Vec<f64>,
    pub sq_delta: Vec<f64>,
}

impl AdadeltaState {
    pub fn new(len: usize) -> Self {
        AdadeltaState { sq_grad: vec![0.0; len], sq_delta: vec![0.0; len] }
    }
}

/// One Adadelta step on `param` in place.
pub fn adadelta_update(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdadeltaState,
    cfg: AdadeltaConfig,
) -> Result<()> {
    if param.len() != grad.len() || state.sq_grad.len() != param.len() || state.sq_delta.len() != param.len() {
        return Err(shape_err!(
            "adadelta: param {}, grad {}, state {}/{}",
            param.len(),
            grad.len(),
            state.sq_grad.len(),
            state.sq_delta.len()
        ));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(alloc::format!("adadelta: gradient entry {i} is {}", grad[i])));
    }
    let AdadeltaConfig { rho, eps } = cfg;
    for (((p, &g), eg), ed) in param.iter_mut().zip(grad).zip(&mut state.sq_grad).zip(&mut state.sq_delta) {
        *eg = rho * *eg + (1.0 - rho) * g * g;
        let delta = -(libm::sqrt(*ed + eps) / libm::sqrt(*eg + eps)) * g;
        *ed = rho * *ed + (1.0 - rho) * delta * delta;
        *p += delta;
    }
    Ok(())
}

/// Adadelta accumulators for every parameter of a model, in visit order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adadelta {
    pub config: AdadeltaConfig,
    pub states: Vec<AdadeltaState>,
}

impl Adadelta {
    pub fn new(model: &Model, config: AdadeltaConfig) -> Result<Self> {
        config.validate()?;
        let states = model.param_sizes().into_iter().map(AdadeltaState::new).collect();
        Ok(Adadelta { config, states })
    }

    /// Applies `grads` (one flat buffer per parameter, visit order) to `model`.
    pub fn step(&mut self, model: &mut Model, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != self.states.len() {
            return Err(shape_err!("{} gradients for {} parameters", grads.len(), self.states.len()));
        }
        let mut result = Ok(());
        let mut i = 0;
        let cfg = self.config;
        let states = &mut self.states;
        model.params.for_each_mut(&mut |t: &mut Tensor| {
            if result.is_ok() {
                result = adadelta_update(t.data_mut(), &grads[i], &mut states[i], cfg);
            }
            i += 1;
        });
        result?;
        let mut bad = None;
        model.params.for_each(&mut |name, t| {
            if bad.is_none() && !t.is_finite() {
                bad = Some(name);
            }
        });
        match bad {
            Some(name) => Err(Error::Numeric(alloc::format!("parameter {name} became non-finite"))),
            None => Ok(()),
        }
    }
}

/// Global L2 norm of all gradient buffers.
pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    libm::sqrt(grads.iter().flatten().map(|g| g * g).sum())
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor applied (1 when no clipping happened).
pub fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) -> Result<f64> {
    if max_norm.is_nan() || max_norm <= 0.0 {
        return Err(contract_err!("clip norm must be positive, got {max_norm}"));
    }
    let norm = global_norm(grads);
    if !norm.is_finite() {
        return Err(Error::Numeric("gradient norm is not finite".into()));
    }
    if norm <= max_norm {
        return Ok(1.0);
    }
    let factor = max_norm / norm;
    for g in grads.iter_mut().flatten() {
        *g *= factor;
    }
    Ok(factor)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `(-bound, bound)`.
    Uniform(f64),
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub dims: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    /// Matrices and attention vectors draw from `U(-s, s)` with
    /// `s = 1/sqrt(last dim)`; other rank-1 tensors (biases) start at zero.
    pub fn fan_in(dims: &[usize]) -> Self {
        let init = if dims.len() >= 2 {
            Init::Uniform(1.0 / libm::sqrt(dims[dims.len() - 1] as f64))
        } else {
            Init::Constant(0.0)
        };
        ParamSpec { dims: dims.to_vec(), init }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Tensor {
        let n: usize = self.dims.iter().product();
        let data = match self.init {
            Init::Uniform(s) => (0..n).map(|_| rng.gen_range(-s..s)).collect(),
            Init::Constant(c) => vec![c; n],
        };
        Tensor::new(self.dims.clone(), data).expect("spec dims are positive")
    }
}

pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Samples every spec in order from one seeded stream.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> Vec<Tensor> {
    let mut rng = init_rng(seed);
    specs.iter().map(|s| s.sample(&mut rng)).collect()
}
