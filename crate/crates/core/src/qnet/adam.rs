use super::{GradientSet, QNetError, QNetwork, Real};

/// Adam with bias correction. Moment buffers follow the network's
/// parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(net: &QNetwork<F>, lr: f64) -> Self {
        let shapes: Vec<Vec<F>> = net.params().map(|p| vec![F::zero(); p.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<F>], &[Vec<F>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Vec<F>>, v: Vec<Vec<F>>) -> Result<(), QNetError> {
        let same = |a: &[Vec<F>], b: &[Vec<F>]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len());
        if !same(&m, &self.m) || !same(&v, &self.v) {
            return Err(QNetError::ShapeMismatch("optimizer moments".into()));
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    pub fn step(&mut self, net: &mut QNetwork<F>, grads: &GradientSet<F>) -> Result<(), QNetError> {
        let grad_slices: Vec<&[F]> = grads.slices().collect();
        if grad_slices.len() != self.m.len()
            || grad_slices.iter().zip(&self.m).any(|(g, m)| g.len() != m.len())
        {
            return Err(QNetError::ShapeMismatch("gradients vs optimizer state".into()));
        }
        if net.params().count() != self.m.len() || net.params().zip(&self.m).any(|(p, m)| p.len() != m.len()) {
            return Err(QNetError::ShapeMismatch("network vs optimizer state".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::from_f64(self.beta1), F::from_f64(self.beta2));
        let (one_m_b1, one_m_b2) = (F::from_f64(1.0 - self.beta1), F::from_f64(1.0 - self.beta2));
        let lr_t = F::from_f64(self.lr / (1.0 - self.beta1.powi(t)));
        let inv_c2 = F::from_f64(1.0 / (1.0 - self.beta2.powi(t)));
        let eps = F::from_f64(self.eps);
        for (((p, g), m), v) in net.params_mut().zip(grad_slices).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_m_b1 * g[i];
                v[i] = b2 * v[i] + one_m_b2 * g[i] * g[i];
                let update = lr_t * m[i] / ((v[i] * inv_c2).sqrt() + eps);
                p[i] = p[i] - update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::{Architecture, Head, HiddenLayer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> Architecture {
        Architecture {
            input_dim: 4,
            n_actions: 3,
            trunk: vec![HiddenLayer::new(5, 0.0)],
            head: Head::Plain,
        }
    }

    #[test]
    fn zero_gradient_or_lr_leaves_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = QNetwork::<f32>::new(tiny(), &mut rng).unwrap();
        let before = net.clone();
        let zero = GradientSet::zeros_like(&net);
        Adam::new(&net, 1e-4).step(&mut net, &zero).unwrap();
        assert_eq!(net, before);

        net.forward(&[1.0, 2.0, 3.0, 4.0], 1, false, &mut rng).unwrap();
        let (g, _) = net.backward(&[1], &[5.0]).unwrap();
        Adam::new(&net, 0.0).step(&mut net, &g).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn one_step_reduces_quadratic_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut net = QNetwork::<f64>::new(tiny(), &mut rng).unwrap();
        let x = [0.5, -1.0, 0.25, 2.0];
        let mut opt = Adam::new(&net, 1e-3);
        let q0 = net.forward(&x, 1, false, &mut rng).unwrap();
        let (g, loss0) = net.backward(&[2], &[q0[2] + 1.0]).unwrap();
        opt.step(&mut net, &g).unwrap();
        let q1 = net.predict_one(&x).unwrap();
        let loss1 = (q1[2] - (q0[2] + 1.0)).powi(2);
        assert!(loss1 < loss0, "{loss1} !< {loss0}");
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = QNetwork::<f32>::new(tiny(), &mut rng).unwrap();
        let other = QNetwork::<f32>::new(Architecture::plain(4), &mut rng).unwrap();
        let g = GradientSet::zeros_like(&other);
        assert!(matches!(Adam::new(&net.clone(), 1e-3).step(&mut net, &g), Err(QNetError::ShapeMismatch(_))));
    }
}
