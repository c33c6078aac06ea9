//! Grid value iteration for the discrete-time approximation of an
//! environment, used as the comparison baseline.

use std::io::Write;

use crate::env::{Environment, State};
use crate::error::{Error, Result};
use crate::rollout::Policy;

/// Node values and greedy actions on a regular 2-D grid. Node `(i, j)` sits
/// at index `i * res[1] + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    pub bounds: [(f64, f64); 2],
    pub res: [usize; 2],
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
}

impl Grid2D {
    pub fn new(bounds: [(f64, f64); 2], res: [usize; 2]) -> Result<Self> {
        if res.iter().any(|&n| n < 2) {
            return Err(Error::Usage(format!(
                "grid resolution must be >= 2 per axis, got {res:?}"
            )));
        }
        if bounds.iter().any(|(lo, hi)| !(hi > lo)) {
            return Err(Error::Usage(format!("degenerate grid bounds {bounds:?}")));
        }
        let n = res[0] * res[1];
        Ok(Self {
            bounds,
            res,
            values: vec![0.0; n],
            policy: vec![0; n],
        })
    }

    /// Grid over the environment's bounding box.
    pub fn covering(env: &dyn Environment, res: [usize; 2]) -> Result<Self> {
        Self::new(env.bounds(), res)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        lo + (hi - lo) * i as f64 / (self.res[axis] - 1) as f64
    }

    pub fn node(&self, index: usize) -> State {
        let (i, j) = (index / self.res[1], index % self.res[1]);
        [self.coord(0, i), self.coord(1, j)]
    }

    /// Continuous grid position along `axis`, clamped to the grid.
    fn position(&self, axis: usize, x: f64) -> f64 {
        let (lo, hi) = self.bounds[axis];
        let n = (self.res[axis] - 1) as f64;
        ((x - lo) / (hi - lo) * n).clamp(0.0, n)
    }

    /// Bilinear stencil: four node indices and weights summing to 1.
    fn stencil(&self, s: &State) -> ([u32; 4], [f64; 4]) {
        let mut base = [0usize; 2];
        let mut frac = [0.0; 2];
        for axis in 0..2 {
            let u = self.position(axis, s[axis]);
            let i = (u.floor() as usize).min(self.res[axis] - 2);
            base[axis] = i;
            frac[axis] = u - i as f64;
        }
        let n2 = self.res[1];
        let idx = |i: usize, j: usize| (i * n2 + j) as u32;
        let (i, j) = (base[0], base[1]);
        let (t, u) = (frac[0], frac[1]);
        (
            [idx(i, j), idx(i, j + 1), idx(i + 1, j), idx(i + 1, j + 1)],
            [(1.0 - t) * (1.0 - u), (1.0 - t) * u, t * (1.0 - u), t * u],
        )
    }

    /// Bilinear interpolation of the node values.
    pub fn interpolate(&self, s: &State) -> f64 {
        let (idx, w) = self.stencil(s);
        idx.iter()
            .zip(w)
            .map(|(&k, w)| w * self.values[k as usize])
            .sum()
    }

    /// Index of the nearest node; exact midpoints go to the lower index.
    pub fn nearest(&self, s: &State) -> usize {
        let mut ij = [0usize; 2];
        for axis in 0..2 {
            let u = self.position(axis, s[axis]);
            let i = u.floor();
            ij[axis] = if u - i > 0.5 {
                i as usize + 1
            } else {
                i as usize
            };
        }
        ij[0] * self.res[1] + ij[1]
    }

    /// One row per node: `s1, s2, V, action`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s1", "s2", "value", "action"])?;
        for k in 0..self.len() {
            let s = self.node(k);
            w.write_record([
                format!("{:e}", s[0]),
                format!("{:e}", s[1]),
                format!("{:e}", self.values[k]),
                self.policy[k].to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Greedy action of the node nearest to `s`; states outside the grid snap
/// to the boundary node.
pub fn vi_policy_lookup(grid: &Grid2D, s: &State) -> usize {
    grid.policy[grid.nearest(s)]
}

/// A solved grid used as a deterministic policy.
#[derive(Clone, Debug)]
pub struct GridPolicy {
    pub grid: Grid2D,
    pub n_actions: usize,
}

impl Policy for GridPolicy {
    fn probabilities(&self, s: &State) -> Result<Vec<f64>> {
        let mut p = vec![0.0; self.n_actions];
        p[vi_policy_lookup(&self.grid, s)] = 1.0;
        Ok(p)
    }

    fn action(&self, s: &State, _rng: &mut dyn rand::RngCore) -> Result<usize> {
        Ok(vi_policy_lookup(&self.grid, s))
    }
}

/// How the value at an off-grid successor state is read from the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Interpolation {
    #[default]
    Bilinear,
    /// Snap to the nearest node (ties to the lower index).
    Nearest,
}

impl Interpolation {
    pub fn tag(self) -> &'static str {
        match self {
            Interpolation::Bilinear => "bilinear",
            Interpolation::Nearest => "nearest",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "bilinear" => Ok(Interpolation::Bilinear),
            "nearest" => Ok(Interpolation::Nearest),
            other => Err(Error::Config(format!(
                "vi.interpolation must be \"bilinear\" or \"nearest\", got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViConfig {
    pub dt: f64,
    pub gamma: f64,
    /// Sup-norm change between sweeps that counts as converged.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub interpolation: Interpolation,
}

impl Default for ViConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            gamma: 0.95,
            tolerance: 1e-7,
            max_sweeps: 500_000,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl ViConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("vi.dt must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("vi.gamma must lie in (0, 1)".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("vi.tolerance must be positive".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Config("vi.max_sweeps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViSolution {
    pub grid: Grid2D,
    pub sweeps: usize,
    /// Sup-norm change of every sweep.
    pub residuals: Vec<f64>,
}

/// Iterates `V(s) = max_a [r(s,a) dt + gamma^dt V(clip(s + v(s,a) dt))]`
/// with Jacobi sweeps until the sup-norm change drops below the tolerance.
/// Successor values are read per `cfg.interpolation`.
pub fn vi_solve(env: &dyn Environment, grid: Grid2D, cfg: &ViConfig) -> Result<ViSolution> {
    cfg.validate()?;
    let n_actions = env.n_actions();
    let n = grid.len();
    let discount = cfg.gamma.powf(cfg.dt);

    // The transition structure is fixed, so the stencils are built once.
    let mut rewards = Vec::with_capacity(n * n_actions);
    let mut idx = Vec::with_capacity(n * n_actions);
    let mut weights = Vec::with_capacity(n * n_actions);
    for k in 0..n {
        let s = grid.node(k);
        for a in 0..n_actions {
            let v = env.rate(&s, a)?;
            let next = env.clip(&[s[0] + v[0] * cfg.dt, s[1] + v[1] * cfg.dt]);
            let (i, w) = match cfg.interpolation {
                Interpolation::Bilinear => grid.stencil(&next),
                Interpolation::Nearest => ([grid.nearest(&next) as u32; 4], [1.0, 0.0, 0.0, 0.0]),
            };
            rewards.push(env.reward(&s, a) * cfg.dt);
            idx.push(i);
            weights.push(w);
        }
    }

    let mut grid = grid;
    let mut next_values = vec![0.0; n];
    let mut residuals = Vec::new();
    for sweep in 1..=cfg.max_sweeps {
        let mut residual: f64 = 0.0;
        for (k, next) in next_values.iter_mut().enumerate() {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..n_actions {
                let m = k * n_actions + a;
                let cont: f64 = idx[m]
                    .iter()
                    .zip(&weights[m])
                    .map(|(&i, w)| w * grid.values[i as usize])
                    .sum();
                let q = rewards[m] + discount * cont;
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            residual = residual.max((best - grid.values[k]).abs());
            *next = best;
            grid.policy[k] = best_a;
        }
        if !residual.is_finite() {
            return Err(Error::Numeric(format!(
                "value iteration residual {residual} at sweep {sweep}"
            )));
        }
        std::mem::swap(&mut grid.values, &mut next_values);
        residuals.push(residual);
        if residual < cfg.tolerance {
            return Ok(ViSolution {
                grid,
                sweeps: sweep,
                residuals,
            });
        }
    }
    Err(Error::NotConverged {
        sweeps: cfg.max_sweeps,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::MountainCar;

    fn grid() -> Grid2D {
        Grid2D::new([(0.0, 1.0), (-1.0, 1.0)], [3, 5]).unwrap()
    }

    #[test]
    fn nodes_and_nearest() {
        let g = grid();
        assert_eq!(g.node(0), [0.0, -1.0]);
        assert_eq!(g.node(14), [1.0, 1.0]);
        assert_eq!(g.node(7), [0.5, 0.0]);
        for k in 0..g.len() {
            assert_eq!(g.nearest(&g.node(k)), k);
        }
        // midpoint between nodes 0 and 1 on the second axis
        assert_eq!(g.nearest(&[0.0, -0.75]), 0);
        assert_eq!(g.nearest(&[0.0, -0.7]), 1);
        assert_eq!(g.nearest(&[5.0, 5.0]), 14);
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let mut g = grid();
        for k in 0..g.len() {
            let s = g.node(k);
            g.values[k] = 2.0 * s[0] - 3.0 * s[1] + 0.5;
        }
        for s in [[0.3, 0.1], [0.99, -0.99], [0.0, 1.0], [0.75, 0.25]] {
            let exact = 2.0 * s[0] - 3.0 * s[1] + 0.5;
            assert!((g.interpolate(&s) - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid2D::new([(0.0, 1.0), (0.0, 1.0)], [1, 5]).is_err());
        assert!(Grid2D::new([(1.0, 1.0), (0.0, 1.0)], [3, 5]).is_err());
    }

    #[test]
    fn non_convergence_reports_residual() {
        let env = MountainCar::default();
        let g = Grid2D::covering(&env, [11, 11]).unwrap();
        let cfg = ViConfig {
            max_sweeps: 3,
            ..Default::default()
        };
        match vi_solve(&env, g, &cfg) {
            Err(Error::NotConverged {
                sweeps: 3,
                residual,
            }) => assert!(residual > 0.0),
            other => panic!("{other:?}"),
        }
    }
}
