use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{join, Module, Param, Tensor};

/// Per-channel batch normalisation over `(batch, x, y, z)`.
///
/// Training uses batch statistics and updates the running averages with
/// momentum 0.1 (unbiased variance); evaluation uses the running averages.
#[derive(Debug, Clone)]
pub struct BatchNorm3d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    momentum: f32,
    eps: f32,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl BatchNorm3d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(vec![channels], vec![1.0; channels]),
            beta: Param::new(vec![channels], vec![0.0; channels]),
            running_mean: Param::buffer(vec![channels], vec![0.0; channels]),
            running_var: Param::buffer(vec![channels], vec![1.0; channels]),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels(), self.channels(), "batch norm channel count");
        let mut y = x.clone();
        for c in 0..self.channels() {
            let scale = self.gamma.value[c] / libm::sqrtf(self.running_var.value[c] + self.eps);
            let shift = self.beta.value[c] - self.running_mean.value[c] * scale;
            for n in 0..x.batch() {
                y.plane_mut(n, c).iter_mut().for_each(|v| *v = *v * scale + shift);
            }
        }
        y
    }

    pub fn forward_train(&mut self, x: Tensor) -> Tensor {
        assert_eq!(x.channels(), self.channels(), "batch norm channel count");
        let count = (x.batch() * x.plane_len()) as f64;
        let mut xhat = x;
        let mut inv_stds = Vec::with_capacity(self.channels());
        let mut y = Tensor::zeros(xhat.shape());
        for c in 0..self.channels() {
            let (mut sum, mut sq) = (0.0f64, 0.0f64);
            for n in 0..xhat.batch() {
                for &v in xhat.plane(n, c) {
                    sum += v as f64;
                    sq += (v as f64) * (v as f64);
                }
            }
            let mean = sum / count;
            let var = (sq / count - mean * mean).max(0.0);
            let inv_std = 1.0 / libm::sqrt(var + self.eps as f64);
            let (mean_f, inv_f) = (mean as f32, inv_std as f32);
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for n in 0..xhat.batch() {
                let src = xhat.plane_mut(n, c);
                src.iter_mut().for_each(|v| *v = (*v - mean_f) * inv_f);
                let dst = y.plane_mut(n, c);
                for (o, h) in dst.iter_mut().zip(xhat.plane(n, c)) {
                    *o = g * *h + b;
                }
            }
            let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
            let m = self.momentum;
            self.running_mean.value[c] = (1.0 - m) * self.running_mean.value[c] + m * mean_f;
            self.running_var.value[c] = (1.0 - m) * self.running_var.value[c] + m * unbiased as f32;
            inv_stds.push(inv_f);
        }
        self.cache = Some((xhat, inv_stds));
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (xhat, inv_stds) = self.cache.take().expect("batch norm backward without a cached forward");
        assert_eq!(dy.shape(), xhat.shape(), "batch norm gradient shape");
        let count = (dy.batch() * dy.plane_len()) as f32;
        let mut dx = Tensor::zeros(dy.shape());
        for c in 0..self.channels() {
            let (mut dbeta, mut dgamma) = (0.0f64, 0.0f64);
            for n in 0..dy.batch() {
                for (g, h) in dy.plane(n, c).iter().zip(xhat.plane(n, c)) {
                    dbeta += *g as f64;
                    dgamma += (*g as f64) * (*h as f64);
                }
            }
            self.gamma.grad[c] += dgamma as f32;
            self.beta.grad[c] += dbeta as f32;
            let k = self.gamma.value[c] * inv_stds[c] / count;
            let (db, dg) = (dbeta as f32, dgamma as f32);
            for n in 0..dy.batch() {
                let out = dx.plane_mut(n, c);
                for ((o, g), h) in out.iter_mut().zip(dy.plane(n, c)).zip(xhat.plane(n, c)) {
                    *o = k * (count * *g - db - *h * dg);
                }
            }
        }
        dx
    }
}

impl Module for BatchNorm3d {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.gamma));
        out.push((join(prefix, "bias"), &self.beta));
        out.push((join(prefix, "running_mean"), &self.running_mean));
        out.push((join(prefix, "running_var"), &self.running_var));
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.gamma));
        out.push((join(prefix, "bias"), &mut self.beta));
        out.push((join(prefix, "running_mean"), &mut self.running_mean));
        out.push((join(prefix, "running_var"), &mut self.running_var));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn objective(bn: &BatchNorm3d, x: &Tensor, r: &[f32]) -> f64 {
        // Train-mode output recomputed without touching running stats.
        let mut b = bn.clone();
        let y = b.forward_train(x.clone());
        y.data().iter().zip(r).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = [2, 3, 3, 2, 2];
        let n: usize = shape.iter().product();
        let x = Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let r: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut bn = BatchNorm3d::new(3);
        bn.gamma.value = vec![0.5, 1.5, -1.0];
        bn.beta.value = vec![0.1, 0.0, 0.3];
        let reference = bn.clone();
        bn.forward_train(x.clone());
        let dx = bn.backward(&Tensor::from_vec(shape, r.clone()).unwrap());
        let h = 1e-2;
        for idx in [0, 7, 20, n - 1] {
            let mut p = x.clone();
            p.data_mut()[idx] += h;
            let mut m = x.clone();
            m.data_mut()[idx] -= h;
            let fd = (objective(&reference, &p, &r) - objective(&reference, &m, &r)) / (2.0 * h as f64);
            assert!(
                (fd - dx.data()[idx] as f64).abs() < 5e-3,
                "dx[{idx}] {fd} vs {}",
                dx.data()[idx]
            );
        }
        for c in 0..3 {
            let mut p = reference.clone();
            p.gamma.value[c] += h;
            let mut m = reference.clone();
            m.gamma.value[c] -= h;
            let fd = (objective(&p, &x, &r) - objective(&m, &x, &r)) / (2.0 * h as f64);
            assert!((fd - bn.gamma.grad[c] as f64).abs() < 5e-3);
        }
    }

    #[test]
    fn running_stats_converge_to_batch_stats() {
        let mut bn = BatchNorm3d::new(1);
        let x = Tensor::from_vec([1, 1, 2, 1, 1], vec![1.0, 3.0]).unwrap();
        for _ in 0..200 {
            bn.forward_train(x.clone());
        }
        assert!((bn.running_mean.value[0] - 2.0).abs() < 1e-4);
        // Unbiased variance of {1, 3} is 2.
        assert!((bn.running_var.value[0] - 2.0).abs() < 1e-4);
        let y = bn.forward(&x);
        let t = BatchNorm3d::new(1).forward_train(x.clone());
        // Eval normalises with the unbiased variance, so it is a bit smaller in magnitude.
        assert!(y.data()[0] < 0.0 && y.data()[0] > t.data()[0]);
    }
}
