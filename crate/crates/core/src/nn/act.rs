use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    /// `min(max(x, 0), 6)`, used by the inverted-residual blocks.
    Relu6,
}

#[derive(Debug, Clone)]
pub struct Activation {
    kind: ActivationKind,
    cache: Option<Tensor>,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Self { kind, cache: None }
    }

    #[inline]
    fn apply(&self, v: f32) -> f32 {
        match self.kind {
            ActivationKind::Relu => v.max(0.0),
            ActivationKind::Relu6 => v.clamp(0.0, 6.0),
        }
    }

    pub fn forward(&self, mut x: Tensor) -> Tensor {
        x.data_mut().iter_mut().for_each(|v| *v = self.apply(*v));
        x
    }

    pub fn forward_train(&mut self, x: Tensor) -> Tensor {
        let y = self.forward(x);
        self.cache = Some(y.clone());
        y
    }

    pub fn backward(&mut self, mut grad: Tensor) -> Tensor {
        let y = self.cache.take().expect("activation backward without a cached forward");
        let upper = match self.kind {
            ActivationKind::Relu => f32::INFINITY,
            ActivationKind::Relu6 => 6.0,
        };
        for (g, out) in grad.data_mut().iter_mut().zip(y.data()) {
            if *out <= 0.0 || *out >= upper {
                *g = 0.0;
            }
        }
        grad
    }
}
