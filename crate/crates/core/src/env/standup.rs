use std::f64::consts::PI;

use rand::RngCore;

use super::{uniform, Environment, State};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StandUpConstants {
    /// Magnitude of each joint torque.
    pub torque: f64,
    pub gravity: f64,
    /// Half-width of the goal band and side length of the start wedges.
    pub delta: f64,
    /// Interior margin kept by [`StandUp::clip`] on the first angle.
    pub clip_margin: f64,
}

impl Default for StandUpConstants {
    fn default() -> Self {
        Self {
            torque: 0.0375,
            gravity: 0.025,
            delta: PI / 24.0,
            clip_margin: 1e-6,
        }
    }
}

/// Over-damped two-link arm lying on a plane; the goal is to stand upright.
///
/// State is `(phi1, phi2)`: the first bar's angle from the plane and the
/// relative angle of the second bar.
#[derive(Clone, Debug, Default)]
pub struct StandUp {
    pub c: StandUpConstants,
}

impl StandUp {
    pub fn new(c: StandUpConstants) -> Self {
        Self { c }
    }

    /// `(m1, m2)` for each action, in the order
    /// `(-m,-m), (-m,m), (m,-m), (m,m)`.
    pub fn torques(&self, action: usize) -> Option<(f64, f64)> {
        let m = self.c.torque;
        match action {
            0 => Some((-m, -m)),
            1 => Some((-m, m)),
            2 => Some((m, -m)),
            3 => Some((m, m)),
            _ => None,
        }
    }

    /// Admissible `phi2` interval for a given `phi1` (impenetrable plane).
    pub fn phi2_limits(phi1: f64) -> (f64, f64) {
        ((-PI).max(-2.0 * phi1), PI.min(2.0 * PI - 2.0 * phi1))
    }

    pub fn is_admissible(s: &State) -> bool {
        let (lo, hi) = Self::phi2_limits(s[0]);
        s[0] > 0.0 && s[0] < PI && s[1] > lo && s[1] < hi
    }

    /// Maps the admissible region onto the square
    /// `(theta1, theta2_bar) in [-pi/2, pi/2]^2`.
    pub fn square_coordinates(s: &State) -> (f64, f64) {
        let theta1 = s[0] - PI / 2.0;
        let theta2 = s[0] + s[1] - PI / 2.0;
        let shrink = 1.0 - (theta1 / PI).abs();
        (theta1, 0.5 * theta2 / shrink)
    }
}

impl Environment for StandUp {
    fn name(&self) -> &str {
        "standup"
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn repr_dim(&self) -> usize {
        2
    }

    fn bounds(&self) -> [(f64, f64); 2] {
        [(0.0, PI), (-PI, PI)]
    }

    fn rate(&self, s: &State, action: usize) -> Result<State> {
        let (m1, m2) = self
            .torques(action)
            .ok_or_else(|| Error::Domain(format!("standup has 4 actions, got {action}")))?;
        if !(s[0].is_finite() && s[1].is_finite()) {
            return Err(Error::Domain(format!("non-finite angles {s:?}")));
        }
        let g = self.c.gravity;
        Ok([m1 - m2 - g * s[0].cos(), m2 - g * (s[0] + s[1]).cos()])
    }

    fn divergence(&self, s: &State, _action: usize) -> f64 {
        self.c.gravity * (s[0].sin() + (s[0] + s[1]).sin())
    }

    fn reward(&self, s: &State, _action: usize) -> f64 {
        let d = self.c.delta;
        let upright = s[0] > PI / 2.0 - d && s[0] < PI / 2.0 + d;
        let straight = s[1] > -d && s[1] < d;
        if upright && straight {
            1.0
        } else {
            0.0
        }
    }

    fn initial_density(&self, s: &State) -> f64 {
        let d = self.c.delta;
        let right = s[0] > 0.0 && s[0] < d && s[1] > 0.0 && s[1] < d;
        let left = s[0] > PI - d && s[0] < PI && s[1] > -d && s[1] < 0.0;
        if right || left {
            1.0 / (2.0 * d * d)
        } else {
            0.0
        }
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> State {
        let d = self.c.delta;
        // open wedges: redraw the measure-zero edge values
        let open = |rng: &mut dyn RngCore| loop {
            let u = uniform(rng, 0.0, d);
            if u > 1e-12 {
                return u;
            }
        };
        let a = open(rng);
        let b = open(rng);
        if rng.next_u64() & 1 == 0 {
            [a, b]
        } else {
            [PI - a, -b]
        }
    }

    /// Rejection sampling of the admissible region.
    fn sample_state(&self, rng: &mut dyn RngCore) -> State {
        loop {
            let s = [uniform(rng, 0.0, PI), uniform(rng, -PI, PI)];
            if Self::is_admissible(&s) {
                return s;
            }
        }
    }

    fn representation(&self, s: &State, out: &mut [f64]) {
        let (t1, t2bar) = Self::square_coordinates(s);
        out[0] = t1.sin();
        out[1] = t2bar.sin();
    }

    fn representation_jacobian(&self, s: &State, out: &mut [f64]) {
        let theta1 = s[0] - PI / 2.0;
        let theta2 = s[0] + s[1] - PI / 2.0;
        let shrink = 1.0 - (theta1 / PI).abs();
        let t2bar = 0.5 * theta2 / shrink;
        let c2 = t2bar.cos();
        let sign = if theta1 > 0.0 {
            1.0
        } else if theta1 < 0.0 {
            -1.0
        } else {
            0.0
        };
        let d_phi1 = 0.5 / shrink + 0.5 * theta2 * sign / (PI * shrink * shrink);
        let d_phi2 = 0.5 / shrink;
        out[0] = theta1.cos();
        out[1] = 0.0;
        out[2] = c2 * d_phi1;
        out[3] = c2 * d_phi2;
    }

    /// Clips the first angle into `[eps, pi - eps]`, then the second angle
    /// against the limits implied by the clipped first angle.
    fn clip(&self, s: &State) -> State {
        let eps = self.c.clip_margin;
        let phi1 = s[0].clamp(eps, PI - eps);
        let (lo, hi) = Self::phi2_limits(phi1);
        [phi1, s[1].clamp(lo, hi)]
    }
}
