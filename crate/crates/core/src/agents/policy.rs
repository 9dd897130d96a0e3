use ndarray::{s, Array2, ArrayView2};

use crate::envs::ActionMode;
use crate::error::{Error, Result};
use crate::math::{AdamState, Mlp, MlpCache, RngStream};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Actions are kept strictly inside the box even when tanh saturates.
const ACTION_LIMIT: f64 = 1.0 - 1e-12;

/// `log(1 - tanh(u)^2)` without cancellation.
#[inline]
pub(crate) fn log_tanh_jacobian(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = if x > 30.0 { x } else { x.exp().ln_1p() };
    2.0 * (std::f64::consts::LN_2 - u - softplus)
}

/// Tanh-squashed diagonal Gaussian policy. The network outputs the mean in
/// the first `action_dim` columns and the log-std in the rest.
#[derive(Debug, Clone)]
pub struct SquashedGaussianPolicy {
    net: Mlp,
    adam: AdamState,
    action_dim: usize,
}

/// A reparameterized batch of samples, kept for the actor gradient.
#[derive(Debug)]
pub struct PolicySample {
    pub actions: Array2<f64>,
    pub log_probs: Vec<f64>,
    pub(crate) noise: Array2<f64>,
    pub(crate) std: Array2<f64>,
    pub(crate) log_std_active: Array2<bool>,
    pub(crate) cache: MlpCache,
}

impl SquashedGaussianPolicy {
    pub fn new(input_dim: usize, action_dim: usize, hidden: &[usize], lr: f64, rng: &mut RngStream) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        let mut net = Mlp::new(&sizes, rng);
        net.scale_output_layer(0.1);
        let adam = AdamState::new("policy", net.num_params(), lr);
        Self { net, adam, action_dim }
    }

    pub fn from_net(net: Mlp, lr: f64) -> Result<Self> {
        if !net.output_dim().is_multiple_of(2) {
            return Err(Error::contract("policy head must have an even number of outputs"));
        }
        let action_dim = net.output_dim() / 2;
        let adam = AdamState::new("policy", net.num_params(), lr);
        Ok(Self { net, adam, action_dim })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.lr = lr;
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn split_heads(&self, out: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<bool>) {
        let d = self.action_dim;
        let mean = out.slice(s![.., ..d]).to_owned();
        let raw = out.slice(s![.., d..]);
        let active = raw.mapv(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        (mean, log_std, active)
    }

    /// Deterministic actions `tanh(mean)` for a batch of inputs.
    pub fn mean_actions(&self, inputs: ArrayView2<f64>) -> Array2<f64> {
        let out = self.net.forward_batch(inputs);
        out.slice(s![.., ..self.action_dim]).mapv(|m| m.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT))
    }

    /// One action for one input.
    pub fn act(&self, input: &[f64], mode: ActionMode, rng: &mut RngStream) -> Result<Vec<f64>> {
        let out = self.net.forward(input)?;
        let d = self.action_dim;
        Ok((0..d)
            .map(|i| {
                let u = match mode {
                    ActionMode::Deterministic => out[i],
                    ActionMode::Stochastic => out[i] + out[d + i].clamp(LOG_STD_MIN, LOG_STD_MAX).exp() * rng.normal(),
                };
                u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT)
            })
            .collect())
    }

    /// Reparameterized samples with log-probabilities.
    pub fn sample(&self, inputs: ArrayView2<f64>, rng: &mut RngStream) -> Result<PolicySample> {
        let (out, cache) = self.net.forward_cached(inputs)?;
        let (mean, log_std, active) = self.split_heads(&out);
        let (b, d) = mean.dim();
        let mut noise = Array2::zeros((b, d));
        let std = log_std.mapv(f64::exp);
        let mut actions = Array2::zeros((b, d));
        let mut log_probs = vec![0.0; b];
        for i in 0..b {
            let mut lp = 0.0;
            for j in 0..d {
                let eps = rng.normal();
                noise[[i, j]] = eps;
                let u = mean[[i, j]] + std[[i, j]] * eps;
                actions[[i, j]] = u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT);
                lp += -0.5 * eps * eps - 0.5 * crate::math::stats::LN_2PI - log_std[[i, j]] - log_tanh_jacobian(u);
            }
            log_probs[i] = lp;
        }
        Ok(PolicySample { actions, log_probs, noise, std, log_std_active: active, cache })
    }

    /// Gradient of the actor loss with respect to the raw network outputs,
    /// given per-sample `dL/d log_pi` (`coef_logp`) and `dL/d a`
    /// (`grad_action`), both already divided by the batch size.
    pub(crate) fn head_gradient(
        &self,
        sample: &PolicySample,
        coef_logp: &[f64],
        grad_action: ArrayView2<f64>,
    ) -> Array2<f64> {
        let (b, d) = sample.actions.dim();
        let mut grad_out = Array2::zeros((b, 2 * d));
        for i in 0..b {
            for j in 0..d {
                let a = sample.actions[[i, j]];
                let jac = 1.0 - a * a;
                let sig_eps = sample.std[[i, j]] * sample.noise[[i, j]];
                // d log_pi / d mean = 2 tanh(u); d log_pi / d log_std = -1 + 2 tanh(u) sigma eps
                grad_out[[i, j]] = coef_logp[i] * 2.0 * a + grad_action[[i, j]] * jac;
                grad_out[[i, d + j]] = if sample.log_std_active[[i, j]] {
                    coef_logp[i] * (-1.0 + 2.0 * a * sig_eps) + grad_action[[i, j]] * jac * sig_eps
                } else {
                    0.0
                };
            }
        }
        grad_out
    }

    pub(crate) fn step_from_sample(
        &mut self,
        sample: &PolicySample,
        coef_logp: &[f64],
        grad_action: ArrayView2<f64>,
    ) -> Result<()> {
        let grad_out = self.head_gradient(sample, coef_logp, grad_action);
        let grad = self.net.gradient(&sample.cache, grad_out.view())?;
        self.adam.step(self.net.params_mut(), &grad.params)
    }
}
