use std::f64::consts::PI;

use rand::RngCore;

use super::{uniform, Environment, State};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MountainCarConstants {
    pub force: f64,
    pub gravity: f64,
    pub x_bound: f64,
    pub v_bound: f64,
    /// Flags sit at `[-flag, flag]`.
    pub flag: f64,
}

impl Default for MountainCarConstants {
    fn default() -> Self {
        Self {
            force: 0.001,
            gravity: 0.0025,
            x_bound: 0.99,
            v_bound: 0.07,
            flag: 0.05,
        }
    }
}

/// Multi-valley mountain car: a central hill flanked by valleys, reward
/// only between the flags on the central summit.
#[derive(Clone, Debug, Default)]
pub struct MountainCar {
    pub c: MountainCarConstants,
}

const START_INNER: f64 = 0.67;
const START_OUTER: f64 = 0.77;
const START_SPEED: f64 = 0.01;
/// `1 / (2 * 0.1 * 0.02)`
const START_DENSITY: f64 = 250.0;

impl MountainCar {
    pub fn new(c: MountainCarConstants) -> Self {
        Self { c }
    }

    /// Track height `y(x)`; singular at `|x| = 1`.
    pub fn height(x: f64) -> Result<f64> {
        if !(x.abs() < 1.0) {
            return Err(Error::Domain(format!("height needs |x| < 1, got {x}")));
        }
        Ok(0.1 * ((2.0 * PI * x).cos() + 2.0 * (4.0 * PI * x).cos() - (1.0 - x * x).ln()))
    }

    /// Analytic `y'(x)`.
    pub fn slope(x: f64) -> Result<f64> {
        if !(x.abs() < 1.0) {
            return Err(Error::Domain(format!("slope needs |x| < 1, got {x}")));
        }
        Ok(0.1
            * (-2.0 * PI * (2.0 * PI * x).sin() - 8.0 * PI * (4.0 * PI * x).sin()
                + 2.0 * x / (1.0 - x * x)))
    }

    fn velocity_phase(&self, v: f64) -> f64 {
        let vb = self.c.v_bound;
        PI * (v + vb) / (2.0 * vb)
    }

    fn wall_distance(&self, x: f64) -> (f64, f64) {
        let xb = self.c.x_bound;
        let to_low = (x + xb).abs();
        let to_high = (x - xb).abs();
        if to_low < to_high {
            (to_low, (x + xb).signum())
        } else if to_high < to_low {
            (to_high, (x - xb).signum())
        } else {
            (to_low, 0.0)
        }
    }
}

impl Environment for MountainCar {
    fn name(&self) -> &str {
        "mvmc"
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn repr_dim(&self) -> usize {
        3
    }

    fn bounds(&self) -> [(f64, f64); 2] {
        [
            (-self.c.x_bound, self.c.x_bound),
            (-self.c.v_bound, self.c.v_bound),
        ]
    }

    fn rate(&self, s: &State, action: usize) -> Result<State> {
        if action > 1 {
            return Err(Error::Domain(format!("mvmc has 2 actions, got {action}")));
        }
        if !s[1].is_finite() {
            return Err(Error::Domain(format!("velocity {} is not finite", s[1])));
        }
        let push = (2.0 * action as f64 - 1.0) * self.c.force;
        Ok([s[1], push - Self::slope(s[0])? * self.c.gravity])
    }

    fn divergence(&self, _s: &State, _action: usize) -> f64 {
        // d(xdot)/dx + d(xddot)/d(xdot) = 0 + 0
        0.0
    }

    fn reward(&self, s: &State, _action: usize) -> f64 {
        if (-self.c.flag..=self.c.flag).contains(&s[0]) {
            1.0
        } else {
            0.0
        }
    }

    fn initial_density(&self, s: &State) -> f64 {
        let ax = s[0].abs();
        if (START_INNER..=START_OUTER).contains(&ax) && (-START_SPEED..=START_SPEED).contains(&s[1])
        {
            START_DENSITY
        } else {
            0.0
        }
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> State {
        let side = if rng.next_u64() & 1 == 0 { -1.0 } else { 1.0 };
        let x = side * uniform(rng, START_INNER, START_OUTER);
        let v = uniform(rng, -START_SPEED, START_SPEED);
        [x, v]
    }

    fn sample_state(&self, rng: &mut dyn RngCore) -> State {
        let x = uniform(rng, -self.c.x_bound, self.c.x_bound);
        let v = uniform(rng, -self.c.v_bound, self.c.v_bound);
        [x, v]
    }

    /// `h = (x, v^2, d_min * v)` with `v = cos(pi (xdot - v_min) / (v_max - v_min))`.
    fn representation(&self, s: &State, out: &mut [f64]) {
        let vhat = self.velocity_phase(s[1]).cos();
        let (d, _) = self.wall_distance(s[0]);
        out[0] = s[0];
        out[1] = vhat * vhat;
        out[2] = d * vhat;
    }

    fn representation_jacobian(&self, s: &State, out: &mut [f64]) {
        let phase = self.velocity_phase(s[1]);
        let vhat = phase.cos();
        let dvhat = -phase.sin() * PI / (2.0 * self.c.v_bound);
        let (d, dd) = self.wall_distance(s[0]);
        out[0] = 1.0;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = 2.0 * vhat * dvhat;
        out[4] = dd * vhat;
        out[5] = d * dvhat;
    }

    /// Velocity saturates at the speed limit; hitting a wall stops the car.
    fn clip(&self, s: &State) -> State {
        let xb = self.c.x_bound;
        let vb = self.c.v_bound;
        let mut v = s[1].clamp(-vb, vb);
        let x = if s[0] > xb {
            v = 0.0;
            xb
        } else if s[0] < -xb {
            v = 0.0;
            -xb
        } else {
            s[0]
        };
        [x, v]
    }
}
