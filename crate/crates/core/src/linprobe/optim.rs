use crate::scalar::Scalar;

/// Adam with decoupled weight decay over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    pub weight_decay: F,
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(len: usize, weight_decay: F) -> Self {
        AdamW {
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps: F::of(1e-8),
            weight_decay,
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [F], grad: &[F], lr: F) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.t);
        let bc2 = one - self.beta2.powi(self.t);
        for i in 0..params.len() {
            params[i] -= lr * self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
