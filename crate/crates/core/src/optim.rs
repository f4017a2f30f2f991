//! Adam-style adaptive optimizer with decoupled weight decay and linear
//! learning-rate warmup.

/// Update rule per step t (1-based), with bias-corrected moments:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   w <- w - lr_t (m_hat / (sqrt(v_hat) + eps) + wd * w)
/// where lr_t ramps linearly over the warmup steps.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(dim: usize, learning_rate: f64, weight_decay: f64, warmup_steps: u64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            warmup_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn effective_lr(&self, t: u64) -> f64 {
        if self.warmup_steps == 0 || t >= self.warmup_steps {
            self.learning_rate
        } else {
            self.learning_rate * (t as f64 + 1.0) / self.warmup_steps as f64
        }
    }

    pub fn step(&mut self, weights: &mut [f64], grad: &[f64]) {
        assert_eq!(weights.len(), grad.len());
        assert_eq!(weights.len(), self.m.len());
        let lr = self.effective_lr(self.t);
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..weights.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            weights[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * weights[i]);
        }
    }
}

/// Scales the gradient in place so its L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}
