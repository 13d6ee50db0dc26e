use crate::error::{NnetError, Result};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

/// Bias-corrected Adam moments for every parameter of one store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Self::with_hyper(params, lr, 0.9, 0.98, 1e-9)
    }

    pub fn with_hyper(params: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            step: 0,
            lr,
            beta1,
            beta2,
            eps,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One Adam update in place. A non-finite gradient aborts the step before
/// any parameter is touched.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(NnetError::Shape {
            op: "adam_step",
            detail: format!(
                "state for {} params, store has {}",
                state.first.len(),
                params.len()
            ),
        });
    }
    if !grads.is_finite() {
        return Err(NnetError::Training(format!(
            "non-finite gradient at step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let m = &mut state.first[id.index()];
        let v = &mut state.second[id.index()];
        let p = params.get_mut(id);
        if p.shape() != m.shape() {
            return Err(NnetError::Shape {
                op: "adam_step",
                detail: format!("moment shape {:?} vs parameter {:?}", m.shape(), p.shape()),
            });
        }
        let grad = grads.get(id).map(Tensor::data);
        for (i, w) in p.data_mut().iter_mut().enumerate() {
            let g = grad.map_or(0.0, |g| g[i]);
            let mi = &mut m.data_mut()[i];
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * g;
            let vi = &mut v.data_mut()[i];
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Fixed learning rate reached by a linear ramp over `warmup` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarmupSchedule {
    pub base: f64,
    pub warmup: u64,
}

impl WarmupSchedule {
    /// Rate for the 1-based optimizer step `step`.
    pub fn rate(&self, step: u64) -> f64 {
        if self.warmup == 0 || step >= self.warmup {
            self.base
        } else {
            self.base * step as f64 / self.warmup as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("x", Tensor::new(vec![1], vec![value]).unwrap());
        store
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = scalar_store(1.5);
        let mut state = AdamState::new(&store, 0.1);
        let grads = Gradients::new(store.len());
        adam_step(&mut store, &grads, &mut state).unwrap();
        assert_eq!(store.get(store.id("x").unwrap()).data(), &[1.5]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_by_hand() {
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g| + ε)
        let mut store = scalar_store(2.0);
        let id = store.id("x").unwrap();
        let (lr, eps, g) = (0.01, 1e-8, -0.3);
        let mut state = AdamState::with_hyper(&store, lr, 0.9, 0.999, eps);
        let mut grads = Gradients::new(1);
        grads.accumulate(id, Tensor::new(vec![1], vec![g]).unwrap());
        adam_step(&mut store, &grads, &mut state).unwrap();
        let expected = 2.0 - lr * g / (g.abs() + eps);
        assert!((store.get(id).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut store = scalar_store(2.0);
        let id = store.id("x").unwrap();
        let mut state = AdamState::new(&store, 0.01);
        let mut grads = Gradients::new(1);
        grads.accumulate(id, Tensor::new(vec![1], vec![f64::NAN]).unwrap());
        assert!(matches!(
            adam_step(&mut store, &grads, &mut state),
            Err(NnetError::Training(_))
        ));
        assert_eq!(store.get(id).data(), &[2.0]);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn warmup_ramps_linearly() {
        let s = WarmupSchedule {
            base: 3e-4,
            warmup: 200,
        };
        assert!((s.rate(100) - 1.5e-4).abs() < 1e-18);
        assert_eq!(s.rate(200), 3e-4);
        assert_eq!(s.rate(5000), 3e-4);
    }
}
