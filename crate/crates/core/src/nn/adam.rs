//! Adaptive-moment optimizer with bias correction. State is kept per
//! parameter slot in a fixed order so updates are reproducible.

use ndarray::ArrayD;

use super::tape::Arr;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Arr>,
    v: Vec<Arr>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update. `params[i]` is paired with `grads[i]`; a `None` gradient
    /// leaves that slot untouched (but its moments still exist).
    pub fn step(&mut self, params: &mut [&mut Arr], grads: &[Option<Arr>]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
            self.v = params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer bound to a different parameter set");
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (i, param) in params.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut **param)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mhat = *m / b1t;
                    let vhat = *v / b2t;
                    *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }

    /// Flatten optimizer state for checkpointing.
    pub fn state_arrays(&self) -> Vec<(String, Arr)> {
        let mut out = Vec::new();
        for (i, m) in self.m.iter().enumerate() {
            out.push((format!("adam.m.{i}"), m.clone()));
        }
        for (i, v) in self.v.iter().enumerate() {
            out.push((format!("adam.v.{i}"), v.clone()));
        }
        out
    }

    pub fn restore_state(&mut self, t: u64, m: Vec<Arr>, v: Vec<Arr>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}
