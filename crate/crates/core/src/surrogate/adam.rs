use super::SurrogateError;

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), SurrogateError> {
        for len in [params.len(), grads.len()] {
            if len != self.m.len() {
                return Err(SurrogateError::Shape {
                    expected: self.m.len(),
                    got: len,
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}
