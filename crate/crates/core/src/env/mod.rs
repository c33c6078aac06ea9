//! Continuous-time environment models.
//!
//! Every function on [`Environment`] is pure: no hidden state, no side
//! effects, so a single instance can be shared freely.

mod mvmc;
mod standup;

use rand::RngCore;

pub use mvmc::{MountainCar, MountainCarConstants};
pub use standup::{StandUp, StandUpConstants};

use crate::error::{Error, Result};

/// Both benchmark problems have a two-dimensional state.
pub const STATE_DIM: usize = 2;

pub type State = [f64; STATE_DIM];

pub trait Environment: Send + Sync {
    fn name(&self) -> &str;

    fn n_actions(&self) -> usize;

    /// Length of the boundary-condition representation fed to the value
    /// and density networks.
    fn repr_dim(&self) -> usize;

    /// Axis-aligned box that contains the state domain.
    fn bounds(&self) -> [(f64, f64); STATE_DIM];

    /// State rate `v(s, a)`.
    fn rate(&self, s: &State, action: usize) -> Result<State>;

    /// Divergence of the state rate with respect to the state.
    fn divergence(&self, s: &State, action: usize) -> f64;

    /// Reward rate; always exactly 0 or 1 for the shipped environments.
    fn reward(&self, s: &State, action: usize) -> f64;

    /// Initial density `p0(s)`.
    fn initial_density(&self, s: &State) -> f64;

    fn sample_initial(&self, rng: &mut dyn RngCore) -> State;

    /// Draws from the covering distribution used for training batches.
    fn sample_state(&self, rng: &mut dyn RngCore) -> State;

    /// Writes `h(s)` into `out` (length `repr_dim`).
    fn representation(&self, s: &State, out: &mut [f64]);

    /// Writes `dh/ds` row-major (`repr_dim x STATE_DIM`) into `out`.
    fn representation_jacobian(&self, s: &State, out: &mut [f64]);

    /// Boundary handling applied after every explicit rollout step.
    fn clip(&self, s: &State) -> State;

    fn in_reward_region(&self, s: &State) -> bool {
        self.reward(s, 0) > 0.0
    }
}

/// Overrides for the physical constants; `None` keeps the default.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnvOverrides {
    pub gravity: Option<f64>,
    pub force: Option<f64>,
    pub torque: Option<f64>,
    pub delta: Option<f64>,
}

pub const ENV_NAMES: [&str; 2] = ["mvmc", "standup"];

/// Builds an environment by its configuration name.
pub fn make_env(name: &str, overrides: &EnvOverrides) -> Result<Box<dyn Environment>> {
    match name {
        "mvmc" => {
            if overrides.torque.is_some() || overrides.delta.is_some() {
                return Err(Error::Config(
                    "env.torque and env.delta do not apply to mvmc".into(),
                ));
            }
            let mut c = MountainCarConstants::default();
            if let Some(g) = overrides.gravity {
                c.gravity = g;
            }
            if let Some(f) = overrides.force {
                c.force = f;
            }
            Ok(Box::new(MountainCar::new(c)))
        }
        "standup" => {
            if overrides.force.is_some() {
                return Err(Error::Config("env.force does not apply to standup".into()));
            }
            let mut c = StandUpConstants::default();
            if let Some(g) = overrides.gravity {
                c.gravity = g;
            }
            if let Some(m) = overrides.torque {
                c.torque = m;
            }
            if let Some(d) = overrides.delta {
                c.delta = d;
            }
            Ok(Box::new(StandUp::new(c)))
        }
        other => Err(Error::Config(format!(
            "unknown environment `{other}` (expected one of {ENV_NAMES:?})"
        ))),
    }
}

pub(crate) fn uniform(rng: &mut dyn RngCore, lo: f64, hi: f64) -> f64 {
    // 53 random bits -> [0, 1)
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    lo + (hi - lo) * u
}
