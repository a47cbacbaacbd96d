use crate::error::{Result, TensorError};
use crate::params::ParamSet;

/// Adam optimizer state: per-parameter first/second moments plus the step
/// counter used for bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every trainable parameter, then zero the
    /// gradients. Fails before touching anything if a trainable parameter
    /// has no gradient buffer.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        for (name, t) in params.iter() {
            if t.requires_grad && t.grad.is_none() {
                return Err(TensorError::Contract(format!("parameter {name} has no gradient")));
            }
        }
        if self.first.len() < params.len() {
            for id in params.ids().skip(self.first.len()) {
                let n = params.get(id).numel();
                self.first.push(vec![0.0; n]);
                self.second.push(vec![0.0; n]);
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            if !p.requires_grad {
                continue;
            }
            let grad = p.grad.take().expect("checked above");
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            if m.len() != grad.len() {
                return Err(TensorError::Contract("optimizer moments do not match parameter".into()));
            }
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            p.grad = Some(vec![0.0; grad.len()]);
        }
        Ok(())
    }
}

/// Rescale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(|(_, t)| t.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, t) in params.iter_mut() {
            if let Some(g) = t.grad.as_mut() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_param(v: f64) -> (ParamSet, crate::ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::scalar(v).unwrap().with_grad()).unwrap();
        (ps, id)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut ps, id) = scalar_param(1.0);
        ps.get_mut(id).grad = Some(vec![1.0]);
        let mut opt = Adam::new(0.1);
        opt.step(&mut ps).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((ps.get(id).data()[0] - expected).abs() < 1e-15);
        assert_eq!(ps.get(id).grad.as_deref(), Some(&[0.0][..]));
    }

    #[test]
    fn zero_grad_leaves_param() {
        let (mut ps, id) = scalar_param(0.7);
        ps.get_mut(id).grad = Some(vec![0.0]);
        Adam::new(0.1).step(&mut ps).unwrap();
        assert_eq!(ps.get(id).data()[0], 0.7);
    }

    #[test]
    fn constant_grad_decreases_monotonically() {
        let (mut ps, id) = scalar_param(0.0);
        let mut opt = Adam::new(0.05);
        let mut last = 0.0;
        for _ in 0..2 {
            ps.get_mut(id).grad = Some(vec![2.0]);
            opt.step(&mut ps).unwrap();
            let now = ps.get(id).data()[0];
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn missing_grad_is_contract_error() {
        let (mut ps, _) = scalar_param(0.0);
        assert!(matches!(Adam::new(0.1).step(&mut ps), Err(TensorError::Contract(_))));
    }

    #[test]
    fn frozen_params_ignored() {
        let mut ps = ParamSet::new();
        let id = ps.add("frozen", Tensor::scalar(1.0).unwrap()).unwrap();
        Adam::new(0.1).step(&mut ps).unwrap();
        assert_eq!(ps.get(id).data()[0], 1.0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::row(vec![0.0, 0.0]).unwrap().with_grad()).unwrap();
        ps.get_mut(id).grad = Some(vec![3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut ps, 1.0), 5.0);
        let g = ps.get(id).grad.clone().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
