use super::{DiffError, Graph, NodeId, Tensor};

/// Named trainable tensor. `grad` is `None` until a backward pass deposits
/// into it; optimizer steps consume and clear it.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param {
            name: name.into(),
            value,
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn accumulate(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.numel());
        match &mut self.grad {
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// Copies the gradients of bound graph leaves back into their parameters,
/// accumulating additively.
pub fn accumulate_grads(
    graph: &Graph,
    bindings: &[NodeId],
    params: &mut [&mut Param],
) -> Result<(), DiffError> {
    debug_assert_eq!(bindings.len(), params.len());
    for (id, p) in bindings.iter().zip(params.iter_mut()) {
        if let Some(g) = graph.grad(*id) {
            p.accumulate(g);
        }
    }
    Ok(())
}

/// Plain gradient descent: p -= lr * grad, then grads are cleared.
pub fn sgd_step(params: &mut [&mut Param], learning_rate: f64) -> Result<(), DiffError> {
    for p in params.iter() {
        if p.grad.is_none() {
            return Err(DiffError::MissingGrad(p.name.clone()));
        }
    }
    for p in params.iter_mut() {
        let g = p.grad.take().unwrap();
        for (v, gv) in p.value.data_mut().iter_mut().zip(&g) {
            *v -= learning_rate * gv;
        }
    }
    Ok(())
}

/// Adam with bias correction; state is keyed by parameter position, so the
/// same optimizer must always be fed the same parameter list.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<(), DiffError> {
        for p in params.iter() {
            if p.grad.is_none() {
                return Err(DiffError::MissingGrad(p.name.clone()));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = p.grad.take().unwrap();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (j, val) in p.value.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *val -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
