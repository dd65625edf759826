//! Small fully connected networks with analytic gradients.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::LearnError;

/// Activation of the last layer. Hidden layers always use ReLU.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Output {
    Linear,
    /// `scale * tanh(z)`.
    Tanh { scale: f64 },
}

/// Feed-forward network. Parameters are stored flat, layer by layer, as a
/// row-major `out x in` weight block followed by `out` biases.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mlp {
    sizes: Vec<usize>,
    output: Output,
    params: Vec<f64>,
}

/// Activations kept by [`Mlp::forward_cached`] for a following backward pass.
#[derive(Clone, Debug, Default)]
pub struct Cache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Last layer before its activation.
    pre: Vec<f64>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Output layer pre-activations of the cached pass.
    pub fn pre_activation(&self) -> &[f64] {
        &self.pre
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// All-zero network.
    ///
    /// # Panics
    ///
    /// If fewer than two layer sizes are given or any is zero.
    pub fn zeros(sizes: &[usize], output: Output) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "invalid layer sizes");
        Mlp {
            sizes: sizes.to_vec(),
            output,
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// He-uniform hidden layers; the last layer is drawn from
    /// `U(-final_scale, final_scale)` so initial outputs start near zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: Output, final_scale: f64, rng: &mut R) -> Self {
        let mut net = Mlp::zeros(sizes, output);
        let layers = sizes.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let bound = if l + 1 == layers {
                final_scale
            } else {
                libm::sqrt(6.0 / n_in as f64)
            };
            for w in &mut net.params[off..off + n_in * n_out] {
                *w = if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 };
            }
            off += n_in * n_out + n_out;
        }
        net
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_kind(&self) -> Output {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Replaces all parameters. Fails if the length differs.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<(), LearnError> {
        if params.len() != self.params.len() {
            return Err(LearnError::Shape {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, LearnError> {
        let mut cache = Cache::default();
        self.forward_cached(x, &mut cache)?;
        Ok(cache.acts.pop().unwrap())
    }

    /// Single-output convenience wrapper.
    pub fn eval(&self, x: &[f64]) -> Result<f64, LearnError> {
        Ok(self.forward(x)?[0])
    }

    pub fn forward_cached<'c>(&self, x: &[f64], cache: &'c mut Cache) -> Result<&'c [f64], LearnError> {
        if x.len() != self.input_dim() {
            return Err(LearnError::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let layers = self.sizes.len() - 1;
        cache.acts.resize(layers + 1, Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        cache.pre.clear();
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, rest) = self.params[off..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let (head, tail) = cache.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            out.clear();
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut z = b[o];
                for (wi, xi) in row.iter().zip(input) {
                    z += wi * xi;
                }
                out.push(if l + 1 < layers {
                    z.max(0.0)
                } else {
                    cache.pre.push(z);
                    match self.output {
                        Output::Linear => z,
                        Output::Tanh { scale } => scale * libm::tanh(z),
                    }
                });
            }
            off += n_in * n_out + n_out;
        }
        Ok(cache.acts[layers].as_slice())
    }

    /// Accumulates `d(upstream . y)/d(params)` into `grads` and returns
    /// `d(upstream . y)/dx`, using the activations from the last
    /// [`Mlp::forward_cached`] call on `cache`.
    pub fn backward(&self, cache: &Cache, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>, LearnError> {
        self.backward_with(cache, upstream, None, grads)
    }

    /// [`Mlp::backward`] plus an extra gradient `pre_upstream` taken with
    /// respect to the output layer's pre-activations.
    pub fn backward_with(
        &self,
        cache: &Cache,
        upstream: &[f64],
        pre_upstream: Option<&[f64]>,
        grads: &mut [f64],
    ) -> Result<Vec<f64>, LearnError> {
        let layers = self.sizes.len() - 1;
        if let Some(p) = pre_upstream {
            if p.len() != self.output_dim() {
                return Err(LearnError::Shape {
                    expected: self.output_dim(),
                    got: p.len(),
                });
            }
        }
        if upstream.len() != self.output_dim() {
            return Err(LearnError::Shape {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(LearnError::Shape {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        if cache.acts.len() != layers + 1 {
            return Err(LearnError::Shape {
                expected: layers + 1,
                got: cache.acts.len(),
            });
        }
        let y = &cache.acts[layers];
        let mut delta: Vec<f64> = match self.output {
            Output::Linear => upstream.to_vec(),
            Output::Tanh { scale } => upstream
                .iter()
                .zip(y)
                .map(|(u, yo)| {
                    let t = yo / scale;
                    u * scale * (1.0 - t * t)
                })
                .collect(),
        };
        if let Some(p) = pre_upstream {
            delta.iter_mut().zip(p).for_each(|(d, g)| *d += g);
        }
        let mut off = self.params.len();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            off -= n_in * n_out + n_out;
            let w = &self.params[off..off + n_in * n_out];
            let (gw, gb) = grads[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let input = &cache.acts[l];
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &w[o * n_in..(o + 1) * n_in];
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += d * input[i];
                    next[i] += d * row[i];
                }
            }
            if l > 0 {
                for (n, a) in next.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *n = 0.0;
                    }
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Adam optimiser over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / (libm::sqrt(*v / c2) + self.eps);
        }
    }
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<(), LearnError> {
    if target.sizes != online.sizes {
        return Err(LearnError::Shape {
            expected: target.params.len(),
            got: online.params.len(),
        });
    }
    for (t, o) in target.params.iter_mut().zip(&online.params) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

/// Largest relative error between analytic and central-difference gradients
/// of `sum_k w_k y_k` with respect to parameters and input. Relative errors
/// use `max(|a|, |b|, floor)` as denominator.
pub fn gradient_check(net: &Mlp, x: &[f64], weights: &[f64], h: f64, floor: f64) -> Result<f64, LearnError> {
    let objective = |n: &Mlp, x: &[f64]| -> Result<f64, LearnError> {
        Ok(n.forward(x)?.iter().zip(weights).map(|(y, w)| y * w).sum())
    };
    let mut cache = Cache::default();
    net.forward_cached(x, &mut cache)?;
    let mut grads = vec![0.0; net.num_params()];
    let dx = net.backward(&cache, weights, &mut grads)?;
    let rel = |a: f64, b: f64| libm::fabs(a - b) / libm::fabs(a).max(libm::fabs(b)).max(floor);
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for k in 0..net.num_params() {
        let p0 = probe.params[k];
        probe.params[k] = p0 + h;
        let up = objective(&probe, x)?;
        probe.params[k] = p0 - h;
        let down = objective(&probe, x)?;
        probe.params[k] = p0;
        worst = worst.max(rel(grads[k], (up - down) / (2.0 * h)));
    }
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = objective(net, &xp)?;
        xp[i] = x[i] - h;
        let down = objective(net, &xp)?;
        xp[i] = x[i];
        worst = worst.max(rel(dx[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let n = Mlp::zeros(&[5, 64, 64, 64, 1], Output::Linear);
        assert_eq!(n.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0]);
        assert_eq!(n.num_params(), 5 * 64 + 64 + 2 * (64 * 64 + 64) + 64 + 1);
    }

    #[test]
    fn dimension_mismatch() {
        let n = Mlp::zeros(&[3, 4, 1], Output::Linear);
        assert_eq!(n.forward(&[1.0]), Err(LearnError::Shape { expected: 3, got: 1 }));
    }

    #[test]
    fn forward_is_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Mlp::new(&[4, 16, 16, 2], Output::Tanh { scale: 0.1 }, 0.5, &mut rng);
        let x = [0.3, -0.1, 0.7, 2.0];
        let a = n.forward(&x).unwrap();
        assert_eq!(a, n.forward(&x).unwrap());
        assert!(a.iter().all(|y| y.abs() <= 0.1));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for output in [Output::Linear, Output::Tanh { scale: 0.1 }] {
            for _ in 0..3 {
                let mut n = Mlp::zeros(&[6, 8, 8, 8, 2], output);
                for p in n.params_mut() {
                    *p = rng.random_range(-1.0..1.0);
                }
                let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                let err = gradient_check(&n, &x, &[0.7, -1.3], 1e-5, 1e-6).unwrap();
                assert!(err < 1e-4, "{output:?}: {err}");
            }
        }
    }

    #[test]
    fn soft_update_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Mlp::new(&[2, 3, 1], Output::Linear, 1.0, &mut rng);
        let b = Mlp::new(&[2, 3, 1], Output::Linear, 1.0, &mut rng);
        let mut t = a.clone();
        soft_update(&mut t, &b, 0.0).unwrap();
        assert_eq!(t, a);
        soft_update(&mut t, &b, 1.0).unwrap();
        assert_eq!(t, b);
        let mut c = Mlp::zeros(&[2, 4, 1], Output::Linear);
        assert!(soft_update(&mut c, &a, 0.5).is_err());
    }

    #[test]
    fn soft_update_halves_gap_in_about_35_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let online = Mlp::new(&[2, 3, 1], Output::Linear, 1.0, &mut rng);
        let mut t = Mlp::zeros(&[2, 3, 1], Output::Linear);
        let gap = |t: &Mlp| -> f64 {
            t.params().iter().zip(online.params()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
        let g0 = gap(&t);
        for _ in 0..35 {
            soft_update(&mut t, &online, 0.02).unwrap();
        }
        let ratio = gap(&t) / g0;
        assert!((ratio - 0.98f64.powi(35)).abs() < 1e-12);
        assert!((ratio - 0.5).abs() < 0.01);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-3));
    }
}
