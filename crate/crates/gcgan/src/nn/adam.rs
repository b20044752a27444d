//! Adam with bias correction.

use super::archive::TensorArchive;
use super::layers::ParamSet;
use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the shared step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Tensor<f32>>,
    v: Vec<Tensor<f32>>,
}

impl AdamState {
    /// Moment slots are index-aligned with the parameter set (non-trainable
    /// entries get empty slots).
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        let mk = |_: usize| Tensor::zeros(vec![0]);
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            if params.is_trainable(i) {
                m.push(Tensor::zeros(params.value(i).shape().to_vec()));
                v.push(Tensor::zeros(params.value(i).shape().to_vec()));
            } else {
                m.push(mk(i));
                v.push(mk(i));
            }
        }
        AdamState {
            cfg,
            step: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all trainable parameters. `grads` is index-aligned
    /// with the parameter set; `None` means zero gradient this step.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &[Option<Tensor<f32>>],
    ) -> Result<(), NnError> {
        if grads.len() != params.len() {
            return Err(NnError::Shape(format!(
                "adam: {} grads for {} params",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for i in 0..params.len() {
            if !params.is_trainable(i) {
                continue;
            }
            if let Some(gt) = &grads[i] {
                if gt.shape() != params.value(i).shape() {
                    return Err(NnError::Shape(format!(
                        "adam: grad shape {:?} vs param shape {:?} for {}",
                        gt.shape(),
                        params.value(i).shape(),
                        params.name(i)
                    )));
                }
            }
            let zero = Tensor::zeros(params.value(i).shape().to_vec());
            let gt = grads[i].as_ref().unwrap_or(&zero);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.value_mut(i).data_mut();
            for ((pj, mj), (vj, &gj)) in p
                .iter_mut()
                .zip(m.iter_mut())
                .zip(v.iter_mut().zip(gt.data()))
            {
                *mj = b1 * *mj + (1.0 - b1) * gj;
                *vj = b2 * *vj + (1.0 - b2) * gj * gj;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *pj -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }

    /// Dump moments and step count into an archive under `opt.`.
    pub fn save_into(&self, params: &ParamSet, arch: &mut TensorArchive) -> Result<(), NnError> {
        arch.insert(
            "opt.step".to_string(),
            Tensor::new(vec![1], vec![self.step as f32])?,
        )?;
        for i in 0..params.len() {
            if !params.is_trainable(i) {
                continue;
            }
            arch.insert(format!("opt.{}.m", params.name(i)), self.m[i].clone())?;
            arch.insert(format!("opt.{}.v", params.name(i)), self.v[i].clone())?;
        }
        Ok(())
    }

    pub fn load_from(&mut self, params: &ParamSet, arch: &TensorArchive) -> Result<(), NnError> {
        let step = arch
            .get("opt.step")
            .ok_or_else(|| NnError::MissingParam("opt.step".into()))?;
        self.step = step.data()[0] as u64;
        for i in 0..params.len() {
            if !params.is_trainable(i) {
                continue;
            }
            let name_m = format!("opt.{}.m", params.name(i));
            let name_v = format!("opt.{}.v", params.name(i));
            self.m[i] = arch
                .get(&name_m)
                .ok_or(NnError::MissingParam(name_m))?
                .clone();
            self.v[i] = arch
                .get(&name_v)
                .ok_or(NnError::MissingParam(name_v))?
                .clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param_set(value: f32) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("p".into(), Tensor::new(vec![1], vec![value]).unwrap(), true);
        ps
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut ps = single_param_set(0.7);
        let mut adam = AdamState::new(&ps, AdamConfig::default());
        for _ in 0..3 {
            adam.step(&mut ps, &[Some(Tensor::zeros(vec![1]))]).unwrap();
        }
        assert_eq!(ps.value(0).data()[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr_over_one_plus_eps() {
        // p=0, g=1, bias-corrected mhat=1, vhat=1: dp = -lr/(1+eps).
        let mut ps = single_param_set(0.0);
        let mut adam = AdamState::new(&ps, AdamConfig::default());
        adam.step(&mut ps, &[Some(Tensor::new(vec![1], vec![1.0]).unwrap())])
            .unwrap();
        let expect = -3e-4f32 / (1.0 + 1e-8);
        assert!((ps.value(0).data()[0] - expect).abs() < 1e-9);
    }

    #[test]
    fn deterministic_across_identical_runs() {
        let run = || {
            let mut ps = single_param_set(0.3);
            let mut adam = AdamState::new(&ps, AdamConfig::default());
            for k in 0..10 {
                let g = Tensor::new(vec![1], vec![(k as f32 * 0.37).sin()]).unwrap();
                adam.step(&mut ps, &[Some(g)]).unwrap();
            }
            ps.value(0).data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut ps = single_param_set(0.0);
        let mut adam = AdamState::new(&ps, AdamConfig::default());
        let bad = Tensor::zeros(vec![2]);
        assert!(adam.step(&mut ps, &[Some(bad)]).is_err());
    }
}
