use rand::Rng;
use routesim_nn::{Activation, Binding, Mlp, ParameterSet, Tape, Var};

use crate::error::Result;

/// `Q(s, a)`: ReLU MLP over the concatenated state and relaxed action.
#[derive(Debug, Clone)]
pub struct CriticNet {
    pub net: Mlp,
}

impl CriticNet {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            net: Mlp::new("critic", &sizes, Activation::Relu, Activation::Identity),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterSet> {
        let mut p = ParameterSet::new();
        self.net.init(&mut p, rng)?;
        Ok(p)
    }

    /// `[B, 1]` values for `states: [B, d_s]`, `actions: [B, 2N]`.
    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParameterSet,
        states: Var,
        actions: Var,
        binding: Binding,
    ) -> Result<Var> {
        Ok(self.net.forward_parts(tape, params, &[states, actions], binding)?)
    }
}
