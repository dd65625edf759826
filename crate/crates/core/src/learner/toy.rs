//! Finite deterministic games for checking greedy selection under the
//! tabular shaped reward against the true optimum.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::shaped::TabularShapedReward;
use super::LearnError;

/// A game whose states are histories of joint actions, so the transition
/// graph is a tree rooted at the single initial state.
///
/// Nodes are numbered breadth first: the root is 0 and the children of node
/// `s` are `s * J + 1 ..= s * J + J`, where `J = actions^agents`. Joint action
/// `ja` encodes agent `k`'s action as digit `k` of `ja` in base `actions`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyGame {
    agents: usize,
    actions: usize,
    horizon: usize,
    /// `rewards[s * J + ja]` for every non-terminal node `s`.
    rewards: Vec<f64>,
}

impl ToyGame {
    pub fn new(agents: usize, actions: usize, horizon: usize, rewards: Vec<f64>) -> Result<Self, LearnError> {
        if agents == 0 || actions == 0 || horizon == 0 {
            return Err(LearnError::Precondition("game needs agents, actions and steps"));
        }
        let joint = actions
            .checked_pow(agents as u32)
            .ok_or(LearnError::Precondition("game is too large"))?;
        let nodes = internal_nodes(joint, horizon).ok_or(LearnError::Precondition("game is too large"))?;
        if rewards.len() != nodes * joint {
            return Err(LearnError::Shape {
                expected: nodes * joint,
                got: rewards.len(),
            });
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(LearnError::Precondition("rewards must be finite"));
        }
        Ok(ToyGame {
            agents,
            actions,
            horizon,
            rewards,
        })
    }

    /// Rewards drawn uniformly from `[0, 1)`.
    pub fn random<R: Rng + ?Sized>(agents: usize, actions: usize, horizon: usize, rng: &mut R) -> Result<Self, LearnError> {
        let joint = actions.pow(agents as u32);
        let n = internal_nodes(joint, horizon).ok_or(LearnError::Precondition("game is too large"))? * joint;
        ToyGame::new(agents, actions, horizon, (0..n).map(|_| rng.random::<f64>()).collect())
    }

    /// Rewards given by `f(depth, node, joint action)`.
    pub fn from_fn(
        agents: usize,
        actions: usize,
        horizon: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self, LearnError> {
        let joint = actions.pow(agents as u32);
        let nodes = internal_nodes(joint, horizon).ok_or(LearnError::Precondition("game is too large"))?;
        let mut rewards = Vec::with_capacity(nodes * joint);
        for s in 0..nodes {
            let depth = depth_of(s, joint);
            for ja in 0..joint {
                rewards.push(f(depth, s, ja));
            }
        }
        ToyGame::new(agents, actions, horizon, rewards)
    }

    pub fn joint_actions(&self) -> usize {
        self.actions.pow(self.agents as u32)
    }

    pub fn agent_action(&self, ja: usize, agent: usize) -> usize {
        (ja / self.actions.pow(agent as u32)) % self.actions
    }

    pub fn child(&self, s: usize, ja: usize) -> usize {
        s * self.joint_actions() + ja + 1
    }

    pub fn reward(&self, s: usize, ja: usize) -> f64 {
        self.rewards[s * self.joint_actions() + ja]
    }

    fn nodes(&self) -> usize {
        self.rewards.len() / self.joint_actions()
    }

    /// Optimal joint action at every non-terminal node, by backward
    /// induction. Fails if any node has more than one optimal joint action.
    pub fn optimal_actions(&self) -> Result<Vec<usize>, LearnError> {
        let joint = self.joint_actions();
        let nodes = self.nodes();
        // Children past the last internal node are terminal and worth 0.
        let mut value = vec![0.0; nodes];
        let mut best = vec![0; nodes];
        for s in (0..nodes).rev() {
            let q: Vec<f64> = (0..joint)
                .map(|ja| self.reward(s, ja) + value.get(self.child(s, ja)).copied().unwrap_or(0.0))
                .collect();
            let top = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-12 * (1.0 + libm::fabs(top));
            let winners: Vec<usize> = (0..joint).filter(|&ja| q[ja] >= top - tol).collect();
            if winners.len() != 1 {
                return Err(LearnError::Precondition("optimal action is not unique"));
            }
            best[s] = winners[0];
            value[s] = top;
        }
        Ok(best)
    }
}

/// `1 + J + ... + J^(T-1)`.
fn internal_nodes(joint: usize, horizon: usize) -> Option<usize> {
    let mut total: usize = 0;
    let mut level: usize = 1;
    for _ in 0..horizon {
        total = total.checked_add(level)?;
        level = level.checked_mul(joint)?;
    }
    Some(total)
}

fn depth_of(mut s: usize, joint: usize) -> usize {
    let mut d = 0;
    while s > 0 {
        s = (s - 1) / joint;
        d += 1;
    }
    d
}

/// Plays every episode of `game`, records each return into the tabular
/// shaped reward of every `(state, agent, own action)` the episode passes,
/// and checks that the agents' independent greedy choices under it form the
/// optimal joint action at every state.
pub fn running_max_greedy_check(game: &ToyGame) -> Result<bool, LearnError> {
    let optimal = game.optimal_actions()?;
    let joint = game.joint_actions();
    let mut shaped: TabularShapedReward<(usize, usize, usize)> = TabularShapedReward::new();

    let episodes = joint.pow(game.horizon as u32);
    let mut path = vec![(0usize, 0usize); game.horizon];
    for e in 0..episodes {
        let mut code = e;
        let mut s = 0;
        let mut ret = 0.0;
        for step in path.iter_mut() {
            let ja = code % joint;
            code /= joint;
            *step = (s, ja);
            ret += game.reward(s, ja);
            s = game.child(s, ja);
        }
        for &(s, ja) in &path {
            for k in 0..game.agents {
                shaped.record((s, k, game.agent_action(ja, k)), ret);
            }
        }
    }

    for (s, &opt) in optimal.iter().enumerate() {
        let mut ja = 0;
        let mut place = 1;
        for k in 0..game.agents {
            let mut arg = 0;
            let mut top = f64::NEG_INFINITY;
            for a in 0..game.actions {
                let v = shaped.get(&(s, k, a)).unwrap_or(f64::NEG_INFINITY);
                if v > top {
                    top = v;
                    arg = a;
                }
            }
            ja += arg * place;
            place *= game.actions;
        }
        if ja != opt {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_agents_two_steps() {
        // Joint action 3 (both agents pick 1) pays 1 at the root, then joint
        // action 0 pays 2 from that node. Everything else pays a little less.
        let g = ToyGame::from_fn(2, 2, 2, |depth, s, ja| match (depth, s, ja) {
            (0, 0, 3) => 1.0,
            (1, 4, 0) => 2.0,
            _ => 0.1 * ja as f64 / 4.0 + 0.01 * s as f64,
        })
        .unwrap();
        let opt = g.optimal_actions().unwrap();
        assert_eq!(opt[0], 3);
        assert_eq!(opt[4], 0);
        assert!(running_max_greedy_check(&g).unwrap());
    }

    #[test]
    fn tied_optimum_is_rejected() {
        let g = ToyGame::new(1, 2, 1, vec![1.0, 1.0]).unwrap();
        assert!(matches!(running_max_greedy_check(&g), Err(LearnError::Precondition(_))));
    }

    #[test]
    fn single_step_single_agent() {
        let g = ToyGame::new(1, 3, 1, vec![0.2, 0.9, 0.4]).unwrap();
        assert_eq!(g.optimal_actions().unwrap(), vec![1]);
        assert!(running_max_greedy_check(&g).unwrap());
    }

    #[test]
    fn random_games_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let g = ToyGame::random(2, 2, 3, &mut rng).unwrap();
            assert!(running_max_greedy_check(&g).unwrap());
        }
    }

    #[test]
    fn node_numbering() {
        let g = ToyGame::random(2, 3, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(g.joint_actions(), 9);
        assert_eq!(g.nodes(), 10);
        assert_eq!(g.child(0, 8), 9);
        assert_eq!(depth_of(9, 9), 1);
        assert_eq!(g.agent_action(7, 0), 1);
        assert_eq!(g.agent_action(7, 1), 2);
    }
}
