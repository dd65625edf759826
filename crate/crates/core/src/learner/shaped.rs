//! Shaped reward: the best episode return seen through a state-action pair.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::mlp::{Adam, Cache, Mlp};
use super::LearnError;
use crate::marlenv::Observation;

/// Exact running maximum of returns per key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TabularShapedReward<K: Ord> {
    table: BTreeMap<K, f64>,
}

impl<K: Ord> TabularShapedReward<K> {
    pub fn new() -> Self {
        TabularShapedReward { table: BTreeMap::new() }
    }

    /// Raises the stored value for `key` to `ret` if larger.
    pub fn record(&mut self, key: K, ret: f64) {
        self.table
            .entry(key)
            .and_modify(|v| *v = v.max(ret))
            .or_insert(ret);
    }

    pub fn get(&self, key: &K) -> Option<f64> {
        self.table.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Network input for an observation and an action in units of the action bound.
pub fn pair_input(o: &Observation, a: f64) -> [f64; 6] {
    [o[0], o[1], o[2], o[3], o[4], a]
}

/// One network per agent approximating the shaped reward of `(o, a)`.
#[derive(Clone, Debug)]
pub struct ShapedRewardModel {
    pub nets: Vec<Mlp>,
    opts: Vec<Adam>,
    /// Gradient steps per episode update.
    pub fit_steps: usize,
    /// Weight of returns below the current prediction. At 0 the target is
    /// exactly `max(prediction, return)`; a small positive value lets
    /// overestimates that no episode supports decay.
    pub down_weight: f64,
}

impl ShapedRewardModel {
    pub fn new(nets: Vec<Mlp>, lr: f64, fit_steps: usize, down_weight: f64) -> Self {
        let opts = nets.iter().map(|n| Adam::new(n.num_params(), lr)).collect();
        ShapedRewardModel {
            nets,
            opts,
            fit_steps,
            down_weight,
        }
    }

    pub fn predict(&self, agent: usize, o: &Observation, a: f64) -> Result<f64, LearnError> {
        self.nets[agent].eval(&pair_input(o, a))
    }

    /// Regresses agent `agent`'s network toward `max(prediction, ret)` on every
    /// pair of a finished episode, with pairs whose prediction already exceeds
    /// `ret` pulled toward it at weight [`Self::down_weight`]. Targets are
    /// fixed before fitting. Returns the final weighted squared error.
    pub fn update(&mut self, agent: usize, trajectory: &[(Observation, f64)], ret: f64) -> Result<f64, LearnError> {
        if trajectory.is_empty() {
            return Ok(0.0);
        }
        let net = &mut self.nets[agent];
        let opt = &mut self.opts[agent];
        let inputs: Vec<[f64; 6]> = trajectory.iter().map(|(o, a)| pair_input(o, *a)).collect();
        let mut targets = Vec::with_capacity(inputs.len());
        for x in &inputs {
            let pred = net.eval(x)?;
            targets.push(if ret >= pred { (ret, 1.0) } else { (ret, self.down_weight) });
        }
        let mut grads = vec![0.0; net.num_params()];
        let mut cache = Cache::default();
        let scale = 2.0 / inputs.len() as f64;
        let mut loss = 0.0;
        for _ in 0..self.fit_steps.max(1) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            loss = 0.0;
            for (x, &(y, w)) in inputs.iter().zip(&targets) {
                if w == 0.0 {
                    continue;
                }
                let err = net.forward_cached(x, &mut cache)?[0] - y;
                loss += w * err * err;
                net.backward(&cache, &[scale * w * err], &mut grads)?;
            }
            opt.step(net.params_mut(), &grads);
        }
        let loss = loss / inputs.len() as f64;
        if !loss.is_finite() {
            return Err(LearnError::Divergence { what: "shaped reward" });
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::mlp::Output;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tabular_keeps_running_max() {
        let mut t = TabularShapedReward::new();
        let seq = [3.0, 1.0, 5.0, 4.0, 5.0, -1.0];
        let mut best = f64::NEG_INFINITY;
        for r in seq {
            let before = t.get(&7u8).unwrap_or(f64::NEG_INFINITY);
            t.record(7u8, r);
            best = best.max(r);
            assert_eq!(t.get(&7u8), Some(best));
            assert!(t.get(&7u8).unwrap() >= before);
        }
        assert_eq!(t.get(&8u8), None);
    }

    #[test]
    fn update_moves_toward_return_and_respects_max() {
        let net = Mlp::zeros(&[6, 16, 16, 16, 1], Output::Linear);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(net.sizes(), Output::Linear, 0.0, &mut rng);
        let mut m = ShapedRewardModel::new(vec![net], 1e-3, 20, 0.0);
        let o = [0.5, 0.5, 1.0, 0.3, 0.1];
        let p0 = m.predict(0, &o, 0.02).unwrap();
        assert_eq!(p0, 0.0);
        m.update(0, &[(o, 0.02)], 10.0).unwrap();
        let p1 = m.predict(0, &o, 0.02).unwrap();
        assert!(p1 > p0);
        for _ in 0..300 {
            m.update(0, &[(o, 0.02)], 10.0).unwrap();
        }
        let p2 = m.predict(0, &o, 0.02).unwrap();
        assert!(p2 > 9.0, "{p2}");
        m.update(0, &[(o, 0.02)], 4.0).unwrap();
        let p3 = m.predict(0, &o, 0.02).unwrap();
        assert!(p3 >= p2.min(10.0) - 0.1, "{p3} vs {p2}");
    }
}
