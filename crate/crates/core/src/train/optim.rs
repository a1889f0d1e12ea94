use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with an L2 penalty folded into the gradient before the moment updates:
///
/// ```text
/// g' = g + wd * theta
/// m  = b1 m + (1 - b1) g'          v = b2 v + (1 - b2) g'^2
/// theta -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamStore, learning_rate: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = params.values().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            learning_rate,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.same_shape(params.value(i)) {
                return Err(Error::shape(format!(
                    "gradient of {} has shape {:?}, parameter {:?}",
                    params.names()[i],
                    g.shape(),
                    params.value(i).shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", params.names()[i])));
            }
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let theta = params.value_mut(i).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for k in 0..theta.len() {
                let ge = g.data()[k] + self.weight_decay * theta[k];
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * ge;
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * ge * ge;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                theta[k] -= self.learning_rate * mh / (vh.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}
