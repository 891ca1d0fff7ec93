use crate::nn::{ParamId, Params};

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    steps: Vec<u64>,
}

impl AdamW {
    pub fn new(params: &Params, weight_decay: f32) -> Self {
        let first: Vec<Vec<f32>> = params.ids().map(|id| vec![0.0; params.value(id).len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            second: first.clone(),
            steps: vec![0; first.len()],
            first,
        }
    }

    /// Updates every parameter that has a gradient; parameters with `None`
    /// are left untouched, including weight decay and moment state.
    pub fn step(&mut self, params: &mut Params, grads: &[Option<Vec<f32>>], lr: f32) {
        assert_eq!(grads.len(), params.len());
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let w = params.value_mut(ParamId(i));
            for j in 0..w.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * w[j]);
            }
        }
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Option<Vec<f32>>], max_norm: f32) -> f32 {
    let sq: f64 = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum();
    let norm = sq.sqrt() as f32;
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Params::new();
        let id = p.add("w", &[3], vec![1.0, -1.0, 0.5]);
        let mut opt = AdamW::new(&p, 0.0);
        opt.step(&mut p, &[Some(vec![2.0, -0.5, 0.0])], 0.1);
        let w = p.value(id);
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn frozen_parameters_are_untouched() {
        let mut p = Params::new();
        let a = p.add("a", &[1], vec![1.0]);
        let b = p.add("b", &[1], vec![1.0]);
        let mut opt = AdamW::new(&p, 0.1);
        opt.step(&mut p, &[None, Some(vec![1.0])], 0.01);
        assert_eq!(p.value(a), &[1.0]);
        assert!(p.value(b)[0] < 1.0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = vec![Some(vec![3.0, 0.0]), None, Some(vec![4.0])];
        let n = clip_grad_norm(&mut g, 1.0);
        assert!((n - 5.0).abs() < 1e-6);
        let after: f32 = g.iter().flatten().flatten().map(|v| v * v).sum::<f32>().sqrt();
        assert!((after - 1.0).abs() < 1e-6);
    }
}
