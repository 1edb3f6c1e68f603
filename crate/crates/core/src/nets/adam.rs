use super::Real;

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F: Real> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub t: u64,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Real> Adam<F> {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            t: 0,
            beta1: F::from(0.9).unwrap(),
            beta2: F::from(0.999).unwrap(),
            eps: F::from(1e-8).unwrap(),
        }
    }

    pub fn step(&mut self, params: &mut [F], grads: &[F], lr: F) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let one = F::one();
        let t = self.t as i32;
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scales `grads` in place so their L2 norm is at most `max_norm`. Returns
/// the norm before scaling.
pub fn clip_grad_norm<F: Real>(grads: &mut [F], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.to_f64().unwrap().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = F::from(max_norm / norm).unwrap();
        grads.iter_mut().for_each(|g| *g = *g * scale);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_keeps_params() {
        let mut opt = Adam::<f64>::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..5 {
            opt.step(&mut p, &[0.0; 3], 0.1);
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = Adam::<f64>::new(3);
        let mut p = vec![0.0; 3];
        opt.step(&mut p, &[0.3, -5.0, 1e-3], 0.01);
        for (x, s) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!(((x - s * 0.01) / 0.01).abs() < 1e-5, "{x}");
        }
    }

    #[test]
    fn minimizes_quadratic() {
        let mut opt = Adam::<f64>::new(1);
        let mut w = vec![0.0];
        for _ in 0..200 {
            let g = 2.0 * (w[0] - 3.0);
            opt.step(&mut w, &[g], 0.1);
        }
        assert!((w[0] - 3.0).abs() < 0.05, "{}", w[0]);
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0f32, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-6 && (g[1] - 0.8).abs() < 1e-6);
        let mut g = vec![0.1f32];
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g, vec![0.1]);
    }
}
