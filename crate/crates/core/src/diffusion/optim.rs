//! Parameter traversal, gradient clipping and the Adam optimizer.

/// A fixed-order collection of named parameter tensors.
#[allow(clippy::type_complexity)]
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, data| n += data.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |_, _, data| out.extend_from_slice(data));
        out
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, data| {
            data.copy_from_slice(&flat[offset..offset + data.len()]);
            offset += data.len();
        });
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, data| ok &= data.iter().all(|v| v.is_finite()));
        ok
    }
}

pub fn global_norm(grads: &impl Params) -> f64 {
    let mut sq = 0.0;
    grads.visit(&mut |_, _, data| sq += data.iter().map(|g| g * g).sum::<f64>());
    sq.sqrt()
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut impl Params, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grads.visit_mut(&mut |_, data| data.iter_mut().for_each(|g| *g *= scale));
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, param_count: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P) {
        let g = grads.to_flat();
        assert_eq!(g.len(), self.m.len(), "gradient/optimizer size mismatch");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((m, v), g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(&g) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        }
        let (m, v, lr, eps) = (&self.m, &self.v, self.lr, self.eps);
        let mut offset = 0;
        params.visit_mut(&mut |_, data| {
            for (i, p) in data.iter_mut().enumerate() {
                let j = offset + i;
                *p -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
            offset += data.len();
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat(Vec<f64>);

    impl Params for Flat {
        fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
            f("w", &[self.0.len()], &self.0);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
            f("w", &mut self.0);
        }
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = Flat(vec![3.0, 4.0]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        approx::assert_abs_diff_eq!(global_norm(&g), 1.0, epsilon = 1e-12);
        let mut small = Flat(vec![0.3, 0.4]);
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small.0, vec![0.3, 0.4]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = Flat(vec![2.0, -3.0]);
        let mut opt = Adam::new(0.05, 2);
        for _ in 0..2000 {
            let g = Flat(p.0.iter().map(|x| 2.0 * x).collect());
            opt.step(&mut p, &g);
        }
        assert!(p.0.iter().all(|x| x.abs() < 1e-2), "{:?}", p.0);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = Flat(vec![1.25, -0.5]);
        let mut opt = Adam::new(0.0, 2);
        opt.step(&mut p, &Flat(vec![10.0, -3.0]));
        assert_eq!(p.0, vec![1.25, -0.5]);
    }
}
