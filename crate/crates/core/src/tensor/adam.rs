use super::Tensor;

/// Adam with bias correction.
///
/// Moment buffers are kept per parameter, parallel to the slice handed to
/// [`Adam::step`]; the same parameter list (same order, same shapes) must be
/// used for every step. Defaults: lr 1e-3, beta1 0.9, beta2 0.999,
/// epsilon 1e-8.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    slots: Vec<Slot>,
}

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            slots: params
                .iter()
                .map(|p| Slot {
                    m: vec![0.0; p.len()],
                    v: vec![0.0; p.len()],
                })
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update to every parameter and zero their gradients.
    /// Panics if any parameter is missing a gradient.
    pub fn step(&mut self, params: &[Tensor]) {
        assert_eq!(
            params.len(),
            self.slots.len(),
            "adam_step: {} params for {} moment slots",
            params.len(),
            self.slots.len()
        );
        self.step_count += 1;
        let t = self.step_count as i32;
        let (lr, beta1, beta2, epsilon) = (self.lr, self.beta1, self.beta2, self.epsilon);
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, (param, slot)) in params.iter().zip(self.slots.iter_mut()).enumerate() {
            let grad = param
                .grad()
                .unwrap_or_else(|| panic!("adam_step: parameter {i} has no gradient"));
            assert_eq!(
                grad.len(),
                slot.m.len(),
                "adam_step: parameter {i} changed shape"
            );
            let mut k = 0;
            param.apply_update(|value| {
                let g = grad[k];
                slot.m[k] = beta1 * slot.m[k] + (1.0 - beta1) * g;
                slot.v[k] = beta2 * slot.v[k] + (1.0 - beta2) * g * g;
                let m_hat = slot.m[k] / bc1;
                let v_hat = slot.v[k] / bc2;
                *value -= lr * m_hat / (v_hat.sqrt() + epsilon);
                k += 1;
            });
            param.zero_grad();
        }
    }
}
