use crate::autodiff::{GradStore, ParamStore};
use crate::error::{Result, SsrError};

/// Adam with bias correction. Moment tensors mirror the parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: ParamStore,
    second: ParamStore,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn first_moment(&self) -> &ParamStore {
        &self.first
    }

    pub fn second_moment(&self) -> &ParamStore {
        &self.second
    }

    /// One update. Parameters without a gradient entry see a zero gradient.
    pub fn update(&mut self, params: &mut ParamStore, grads: &GradStore) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(SsrError::shape("optimizer state", self.first.len(), params.len()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (name, p) in params.iter_mut() {
            let m = self.first.get_mut(name).ok_or_else(|| SsrError::InvalidArgument(format!("no optimizer state for {name}")))?;
            let v = self.second.get_mut(name).expect("moments share names");
            if m.shape() != p.shape() {
                return Err(SsrError::shape(format!("optimizer state {name}"), format!("{:?}", p.shape()), format!("{:?}", m.shape())));
            }
            let g = grads.get(name).ok().map(|g| g.as_standard_layout());
            if let Some(g) = &g {
                if g.shape() != p.shape() {
                    return Err(SsrError::shape(format!("gradient {name}"), format!("{:?}", p.shape()), format!("{:?}", g.shape())));
                }
            }
            let ps = p.as_slice_mut().expect("standard layout");
            let ms = m.as_slice_mut().expect("standard layout");
            let vs = v.as_slice_mut().expect("standard layout");
            for i in 0..ps.len() {
                let gi = g.as_ref().map_or(0.0, |g| g.as_slice().expect("standard layout")[i]);
                ms[i] = b1 * ms[i] + (1.0 - b1) * gi;
                vs[i] = b2 * vs[i] + (1.0 - b2) * gi * gi;
                let m_hat = ms[i] / c1;
                let v_hat = vs[i] / c2;
                ps[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
