//! Optimizers. State vectors align with the network's parameter visitation
//! order, which is fixed by layer order.

use super::net::Net;

/// Half-cosine decay from `peak` to zero over `total` steps.
pub fn cosine_lr(peak: f32, step: u64, total: u64) -> f32 {
    if total == 0 {
        return peak;
    }
    let t = (step.min(total) as f64) / (total as f64);
    (0.5 * peak as f64 * (1.0 + (std::f64::consts::PI * t).cos())) as f32
}

/// SGD with classical momentum and decoupled-from-nothing weight decay
/// folded into the gradient, matching the usual image-classifier recipe.
pub struct SgdMomentum {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    vel: Vec<Vec<f32>>,
}

impl SgdMomentum {
    pub fn new(lr: f32, momentum: f32, weight_decay: f32) -> Self {
        SgdMomentum {
            lr,
            momentum,
            weight_decay,
            vel: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.lr = lr;
    }

    pub fn step(&mut self, net: &mut Net) {
        let first = self.vel.is_empty();
        let mut idx = 0;
        let vel = &mut self.vel;
        let (lr, mom, wd) = (self.lr, self.momentum, self.weight_decay);
        net.visit_params(&mut |w, g| {
            if first {
                vel.push(vec![0.0; w.len()]);
            }
            let v = &mut vel[idx];
            for i in 0..w.len() {
                let grad = g[i] + wd * w[i];
                v[i] = mom * v[i] + grad;
                w[i] -= lr * v[i];
            }
            idx += 1;
        });
    }

    pub fn export_state(&self) -> Vec<Vec<f32>> {
        self.vel.clone()
    }

    pub fn import_state(&mut self, state: Vec<Vec<f32>>) {
        self.vel = state;
    }
}

/// Adaptive-moment optimizer with bias correction.
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, net: &mut Net) {
        self.t += 1;
        let first = self.m.is_empty();
        let mut idx = 0;
        let (b1, b2, lr, eps) = (
            self.beta1 as f64,
            self.beta2 as f64,
            self.lr as f64,
            self.eps as f64,
        );
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        net.visit_params(&mut |w, g| {
            if first {
                m.push(vec![0.0; w.len()]);
                v.push(vec![0.0; w.len()]);
            }
            let mi = &mut m[idx];
            let vi = &mut v[idx];
            for i in 0..w.len() {
                let grad = g[i] as f64;
                let m_new = b1 * mi[i] as f64 + (1.0 - b1) * grad;
                let v_new = b2 * vi[i] as f64 + (1.0 - b2) * grad * grad;
                mi[i] = m_new as f32;
                vi[i] = v_new as f32;
                let update = lr * (m_new / bc1) / ((v_new / bc2).sqrt() + eps);
                w[i] -= update as f32;
            }
            idx += 1;
        });
    }

    pub fn export_state(&self) -> (u64, Vec<Vec<f32>>, Vec<Vec<f32>>) {
        (self.t, self.m.clone(), self.v.clone())
    }

    pub fn import_state(&mut self, t: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}
