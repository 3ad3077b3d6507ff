use super::{Gradients, Real, SegmenterParams};

/// Polynomial decay `lr0 · (1 - t/T)^0.9`.
pub fn poly_lr(lr0: f64, t: usize, t_total: usize) -> f64 {
    lr0 * (1.0 - t as f64 / t_total as f64).max(0.0).powf(0.9)
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
/// `v ← μ v + (g + wd·p)`, `p ← p − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd<T: Real> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<T>,
}

impl<T: Real> Sgd<T> {
    pub fn new(params: &SegmenterParams<T>, momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: vec![T::ZERO; params.len()] }
    }

    pub fn step(&mut self, params: &mut SegmenterParams<T>, grads: &Gradients<T>, lr: f64) {
        let (mu, wd, lr) = (T::from_f64(self.momentum), T::from_f64(self.weight_decay), T::from_f64(lr));
        for ((p, v), &g) in params.values_mut().iter_mut().zip(&mut self.velocity).zip(&grads.values) {
            *v = mu * *v + (g + wd * *p);
            *p = *p - lr * *v;
        }
    }
}

/// Mean-teacher warm ramp `min(base, 1 - 1/(t+1))`.
pub fn ema_decay_at(base: f64, t: usize) -> f64 {
    base.min(1.0 - 1.0 / (t as f64 + 1.0))
}

/// Student/teacher pair; the teacher only ever moves by EMA.
#[derive(Clone, Debug)]
pub struct TeacherStudent<T: Real> {
    pub student: SegmenterParams<T>,
    teacher: SegmenterParams<T>,
    pub ema_decay: f64,
}

impl<T: Real> TeacherStudent<T> {
    pub fn new(student: SegmenterParams<T>, ema_decay: f64) -> Self {
        Self { teacher: student.clone(), student, ema_decay }
    }

    pub fn teacher(&self) -> &SegmenterParams<T> {
        &self.teacher
    }

    /// `teacher ← decay·teacher + (1 − decay)·student`.
    pub fn ema_update(&mut self, decay: f64) {
        assert!((0.0..1.0).contains(&decay), "EMA decay {decay} outside [0, 1)");
        let (d, keep) = (T::from_f64(decay), T::from_f64(1.0 - decay));
        for (t, &s) in self.teacher.values_mut().iter_mut().zip(self.student.values()) {
            *t = d * *t + keep * s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::LayerSpec;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64) -> SegmenterParams<f64> {
        SegmenterParams::init(LayerSpec::new(1, 2), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = params(1);
        let before = p.clone();
        let mut sgd = Sgd::new(&p, 0.9, 0.0);
        let zero = Gradients::zeros_like(&p);
        sgd.step(&mut p, &zero, 0.03);
        assert_eq!(p, before);
    }

    #[test]
    fn plain_step_matches_definition() {
        let mut p = params(2);
        let before = p.clone();
        let grads = Gradients { values: (0..p.len()).map(|i| (i as f64 * 0.01).sin()).collect() };
        let mut sgd = Sgd::new(&p, 0.0, 1e-4);
        sgd.step(&mut p, &grads, 0.03);
        for i in 0..p.len() {
            let expected = before.values()[i] - 0.03 * (grads.values[i] + 1e-4 * before.values()[i]);
            assert_eq!(p.values()[i], expected);
        }
    }

    #[test]
    fn momentum_matches_scalar_recurrence() {
        let mut p = params(3);
        let start = p.values()[5];
        let (g1, g2) = (0.7, -0.2);
        let mut sgd = Sgd::new(&p, 0.9, 1e-4);
        let mut grads = Gradients::zeros_like(&p);
        grads.values[5] = g1;
        sgd.step(&mut p, &grads, 0.03);
        grads.values[5] = g2;
        sgd.step(&mut p, &grads, 0.02);

        // Hand-rolled recurrence for the single coordinate.
        let v1 = g1 + 1e-4 * start;
        let x1 = start - 0.03 * v1;
        let v2 = 0.9 * v1 + (g2 + 1e-4 * x1);
        let x2 = x1 - 0.02 * v2;
        assert!((p.values()[5] - x2).abs() < 1e-12);
    }

    #[test]
    fn poly_decay_endpoints() {
        assert_eq!(poly_lr(0.03, 0, 100), 0.03);
        assert_eq!(poly_lr(0.03, 100, 100), 0.0);
        assert!((poly_lr(0.03, 50, 100) - 0.03 * 0.5f64.powf(0.9)).abs() < 1e-15);
    }

    #[test]
    fn ema_examples() {
        let mut pair = TeacherStudent::new(params(4), 0.99);
        let t0 = pair.teacher().clone();
        pair.ema_update(0.99);
        let drift = pair.teacher().values().iter().zip(t0.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-15);

        pair.student = params(5);
        pair.ema_update(0.0);
        assert_eq!(pair.teacher(), &pair.student);

        let spec = LayerSpec::new(1, 2);
        let zeros = SegmenterParams::from_values(spec, vec![0.0; spec.param_count()]).unwrap();
        let mut pair = TeacherStudent::new(zeros, 0.99);
        pair.student = SegmenterParams::from_values(spec, vec![1.0; spec.param_count()]).unwrap();
        pair.ema_update(0.99);
        assert!(pair.teacher().values().iter().all(|&v: &f64| (v - 0.01).abs() < 1e-15));
    }

    #[test]
    fn warm_ramp() {
        assert_eq!(ema_decay_at(0.99, 0), 0.0);
        assert_eq!(ema_decay_at(0.99, 1), 0.5);
        assert_eq!(ema_decay_at(0.99, 1000), 0.99);
    }
}
