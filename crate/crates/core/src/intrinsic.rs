//! The predictability reward used to train the action decoder.
//!
//! `r_emp` is the variational mutual-information estimate
//! `log q(s'|s,z) - log (1/L) sum_i q(s'|s,z_i)` with `z_i` drawn from the
//! uniform latent prior, and `r_dis` is `beta` times the trace of the
//! ensemble's prediction variance. The decoder receives
//! `reward_scale * (r_emp + r_dis)`, recomputed every time a stored
//! transition is replayed.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{EnsembleDynamics, GaussianDynamicsModel};
use crate::envs::Transition;
use crate::error::{Error, Result};
use crate::math::stats::{logsumexp_nonempty, unit_gaussian_logpdf_unchecked};
use crate::math::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicConfig {
    /// Number of prior samples `L` in the marginal estimate.
    pub samples: usize,
    /// Disagreement coefficient `beta`.
    pub beta: f64,
    pub reward_scale: f64,
}

impl Default for IntrinsicConfig {
    fn default() -> Self {
        Self { samples: 100, beta: 0.03, reward_scale: 10.0 }
    }
}

impl IntrinsicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("intrinsic.samples", "must be >= 1"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::config("intrinsic.beta", "must be >= 0"));
        }
        if !self.reward_scale.is_finite() {
            return Err(Error::config("intrinsic.reward_scale", "must be finite"));
        }
        Ok(())
    }
}

/// `r_emp` for one transition with explicitly supplied prior samples.
pub fn r_emp_with_samples(
    vlb: &GaussianDynamicsModel,
    s: &[f64],
    z: &[f64],
    s_next: &[f64],
    samples: &[Vec<f64>],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("r_emp needs at least one prior sample"));
    }
    let zd = z.len();
    let mut states = Array2::zeros((samples.len() + 1, s.len()));
    let mut conds = Array2::zeros((samples.len() + 1, zd));
    for r in 0..=samples.len() {
        states.row_mut(r).iter_mut().zip(s).for_each(|(d, v)| *d = *v);
        let src = if r == 0 { z } else { &samples[r - 1][..] };
        if src.len() != zd {
            return Err(Error::contract("prior sample dimension mismatch"));
        }
        conds.row_mut(r).iter_mut().zip(src).for_each(|(d, v)| *d = *v);
    }
    vlb.check_shapes(states.view(), conds.view())?;
    let pred = vlb.predict_normalized(states.view(), conds.view());
    let target = vlb.normalized_delta(s, s_next);
    let logps: Vec<f64> =
        pred.outer_iter().map(|row| unit_gaussian_logpdf_unchecked(row.as_slice().unwrap(), &target)).collect();
    Ok(emp_from_logps(logps[0], &logps[1..]))
}

#[inline]
fn emp_from_logps(true_logp: f64, sample_logps: &[f64]) -> f64 {
    true_logp - (logsumexp_nonempty(sample_logps) - (sample_logps.len() as f64).ln())
}

/// `r_emp` with `L` fresh prior samples drawn from `rng`.
pub fn r_emp(
    vlb: &GaussianDynamicsModel,
    s: &[f64],
    z: &[f64],
    s_next: &[f64],
    cfg: &IntrinsicConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    let samples: Vec<Vec<f64>> = (0..cfg.samples).map(|_| rng.uniform_box(z.len())).collect();
    r_emp_with_samples(vlb, s, z, s_next, &samples)
}

/// Batched `r_emp`: every row gets its own `L` prior samples.
pub fn r_emp_batch(
    vlb: &GaussianDynamicsModel,
    states: ArrayView2<f64>,
    zs: ArrayView2<f64>,
    next: ArrayView2<f64>,
    samples: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    vlb.check_shapes(states, zs)?;
    let (b, sd) = states.dim();
    let zd = zs.ncols();
    let per = samples + 1;
    let mut big_s = Array2::zeros((b * per, sd));
    let mut big_z = Array2::zeros((b * per, zd));
    for i in 0..b {
        for k in 0..per {
            let r = i * per + k;
            big_s.row_mut(r).assign(&states.row(i));
            if k == 0 {
                big_z.row_mut(r).assign(&zs.row(i));
            } else {
                for j in 0..zd {
                    big_z[[r, j]] = rng.uniform_range(-1.0, 1.0);
                }
            }
        }
    }
    let pred = vlb.predict_normalized(big_s.view(), big_z.view());
    let target = vlb.normalized_delta_batch(states, next);
    let mut out = Vec::with_capacity(b);
    let mut logps = vec![0.0; per];
    for i in 0..b {
        let t = target.row(i);
        let t = t.as_slice().unwrap();
        for (k, lp) in logps.iter_mut().enumerate() {
            let row = pred.row(i * per + k);
            *lp = unit_gaussian_logpdf_unchecked(row.as_slice().unwrap(), t);
        }
        out.push(emp_from_logps(logps[0], &logps[1..]));
    }
    Ok(out)
}

/// `beta * Tr Var_i[mu(s, z; theta_i)]`.
pub fn r_dis(ensemble: &EnsembleDynamics, s: &[f64], z: &[f64], cfg: &IntrinsicConfig) -> Result<f64> {
    Ok(cfg.beta * ensemble.disagreement_trace(s, z)?)
}

/// `reward_scale * (r_emp + r_dis)` for a stored transition.
pub fn intrinsic_reward(
    vlb: &GaussianDynamicsModel,
    ensemble: &EnsembleDynamics,
    t: &Transition,
    cfg: &IntrinsicConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    let z = t.z.as_deref().ok_or_else(|| Error::contract("intrinsic reward needs a latent action"))?;
    let emp = r_emp(vlb, &t.s, z, &t.s_next, cfg, rng)?;
    let dis = r_dis(ensemble, &t.s, z, cfg)?;
    Ok(combine(emp, dis, cfg.reward_scale))
}

#[inline]
pub fn combine(r_emp: f64, r_dis: f64, reward_scale: f64) -> f64 {
    reward_scale * (r_emp + r_dis)
}

/// Batched intrinsic reward.
pub fn intrinsic_reward_batch(
    vlb: &GaussianDynamicsModel,
    ensemble: &EnsembleDynamics,
    states: ArrayView2<f64>,
    zs: ArrayView2<f64>,
    next: ArrayView2<f64>,
    cfg: &IntrinsicConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let emp = r_emp_batch(vlb, states, zs, next, cfg.samples, rng)?;
    let dis = if cfg.beta == 0.0 { vec![0.0; emp.len()] } else { ensemble.disagreement_batch(states, zs)? };
    Ok(emp.iter().zip(&dis).map(|(e, d)| combine(*e, cfg.beta * d, cfg.reward_scale)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Conditioner;
    use crate::math::stats::logsumexp;
    use crate::math::Mlp;

    /// Linear VLB whose normalized prediction is `w * z` on the first state dim.
    fn linear_vlb(weight: f64) -> GaussianDynamicsModel {
        // input = (s0, s1, z), output = 2 dims
        let params = vec![0.0, 0.0, weight, 0.0, 0.0, 0.0, 0.0, 0.0];
        let net = Mlp::from_params(&[3, 2], params).unwrap();
        GaussianDynamicsModel::from_parts(Conditioner::Latent, 2, 1, net, 1e-3)
    }

    #[test]
    fn single_sample_equal_to_z_gives_zero() {
        let vlb = linear_vlb(1.7);
        let z = vec![0.42];
        let r = r_emp_with_samples(&vlb, &[0.1, 0.2], &z, &[0.9, 0.0], std::slice::from_ref(&z)).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn z_blind_model_gives_zero_for_any_l() {
        let vlb = linear_vlb(0.0);
        let mut rng = RngStream::new(0, "intrinsic");
        for l in [1, 2, 10, 1000] {
            let cfg = IntrinsicConfig { samples: l, ..Default::default() };
            let r = r_emp(&vlb, &[0.1, 0.2], &[0.3], &[0.5, 0.5], &cfg, &mut rng).unwrap();
            assert!(r.abs() < 1e-6, "L={l}: {r}");
        }
    }

    #[test]
    fn two_sample_formula() {
        let vlb = linear_vlb(1.0);
        let s = [0.0, 0.0];
        let s_next = [0.5, 0.0];
        let z = [0.2];
        let samples = vec![vec![-0.4], vec![0.9]];
        let lp = |zz: f64| vlb.log_prob(&s, &[zz], &s_next).unwrap();
        let (a, b, c) = (lp(-0.4), lp(0.9), lp(0.2));
        let expected = c - (logsumexp(&[a, b]).unwrap() - 2f64.ln());
        let got = r_emp_with_samples(&vlb, &s, &z, &s_next, &samples).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn batch_agrees_with_single() {
        let vlb = linear_vlb(2.0);
        let states = ndarray::array![[0.0, 0.0], [0.3, -0.2]];
        let zs = ndarray::array![[0.5], [-0.7]];
        let next = ndarray::array![[0.9, 0.1], [-1.0, -0.2]];
        let mut rng_a = RngStream::new(5, "i");
        let batch = r_emp_batch(&vlb, states.view(), zs.view(), next.view(), 7, &mut rng_a).unwrap();
        let mut rng_b = RngStream::new(5, "i");
        for i in 0..2 {
            let samples: Vec<Vec<f64>> = (0..7).map(|_| vec![rng_b.uniform_range(-1.0, 1.0)]).collect();
            let single = r_emp_with_samples(
                &vlb,
                states.row(i).as_slice().unwrap(),
                zs.row(i).as_slice().unwrap(),
                next.row(i).as_slice().unwrap(),
                &samples,
            )
            .unwrap();
            assert!((batch[i] - single).abs() < 1e-12);
        }
    }

    #[test]
    fn sharper_conditioning_raises_mean_r_emp() {
        let blind = linear_vlb(0.0);
        let sharp = linear_vlb(3.0);
        let cfg = IntrinsicConfig { samples: 50, ..Default::default() };
        let mut rng = RngStream::new(8, "i");
        let (mut sum_blind, mut sum_sharp) = (0.0, 0.0);
        let n = 400;
        for _ in 0..n {
            let z = rng.uniform_range(-1.0, 1.0);
            // data generated by the sharp model's own mean
            let s_next = [3.0 * z, 0.0];
            sum_blind += r_emp(&blind, &[0.0, 0.0], &[z], &s_next, &cfg, &mut rng).unwrap();
            sum_sharp += r_emp(&sharp, &[0.0, 0.0], &[z], &s_next, &cfg, &mut rng).unwrap();
            assert!(sum_sharp.is_finite());
        }
        assert!(sum_sharp / n as f64 > sum_blind / n as f64 + 0.1);
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine(0.0, 0.0, 10.0), 0.0);
        assert!((combine(0.5, 0.03, 10.0) - 5.3).abs() < 1e-12);
        assert!((combine(0.5, 0.03, 20.0) - 2.0 * combine(0.5, 0.03, 10.0)).abs() < 1e-12);
    }

    #[test]
    fn r_dis_scales_trace() {
        let members = [[0.0, 0.0], [2.0, 0.0]]
            .iter()
            .map(|b| {
                let mut net = Mlp::zeros(&[3, 2]);
                net.params_mut()[6..].copy_from_slice(b);
                GaussianDynamicsModel::from_parts(Conditioner::Latent, 2, 1, net, 1e-3)
            })
            .collect();
        let e = EnsembleDynamics::from_members(members, &RngStream::new(0, "e")).unwrap();
        let cfg = IntrinsicConfig::default();
        assert!((r_dis(&e, &[0.0, 0.0], &[0.1], &cfg).unwrap() - 0.03).abs() < 1e-15);
        let off = IntrinsicConfig { beta: 0.0, ..cfg };
        assert_eq!(r_dis(&e, &[0.0, 0.0], &[0.1], &off).unwrap(), 0.0);
    }

    #[test]
    fn recomputation_is_deterministic() {
        let vlb = linear_vlb(1.3);
        let e = EnsembleDynamics::new(2, 2, 1, &[4], Conditioner::Latent, 1e-3, &RngStream::new(1, "m"));
        let t = Transition {
            s: vec![0.1, 0.0],
            z: Some(vec![0.4]),
            a: vec![0.2],
            r: 0.0,
            s_next: vec![0.5, 0.1],
            done: false,
            mode: crate::envs::ActionMode::Stochastic,
        };
        let cfg = IntrinsicConfig::default();
        let a = intrinsic_reward(&vlb, &e, &t, &cfg, &mut RngStream::new(3, "x")).unwrap();
        let b = intrinsic_reward(&vlb, &e, &t, &cfg, &mut RngStream::new(3, "x")).unwrap();
        assert_eq!(a, b);
    }
}
