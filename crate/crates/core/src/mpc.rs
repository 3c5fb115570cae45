//! Finite-horizon MPC for players and mergers, condensed to a box QP.
//!
//! The horizon cost sums state terms for `t = k..k+N_p` and input terms for
//! `t = k..k+N_p-1`; the last term is state-only. Prediction drops every
//! input owned by agents outside the player.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    compose_merger_matrices, compose_player_matrices, is_psd, stack_costs, AgentId, CoupledNetwork,
    InputLayout, PlayerMatrices, StackedCosts,
};
use crate::qp::{solve_qp_from, BoxQp, QpSettings};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub qp: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            qp: QpSettings::default(),
        }
    }
}

/// One finite-horizon problem over a stacked state/input.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizonProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Constant additive term of the prediction model.
    pub d: DVector<f64>,
    pub x0: DVector<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub horizon: usize,
}

impl HorizonProblem {
    pub fn from_parts(m: &PlayerMatrices, costs: StackedCosts, x0: DVector<f64>, horizon: usize) -> Self {
        Self {
            a: m.a.clone(),
            b: m.b.clone(),
            d: costs.disturbance,
            x0,
            q: costs.q,
            r: costs.r,
            x_ref: costs.x_ref,
            u_ref: costs.u_ref,
            u_min: costs.u_min,
            u_max: costs.u_max,
            horizon,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn check(&self) -> Result<()> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let ok = self.a.shape() == (n, n)
            && self.b.nrows() == n
            && self.d.len() == n
            && self.x0.len() == n
            && self.q.shape() == (n, n)
            && self.r.shape() == (m, m)
            && self.x_ref.len() == n
            && self.u_ref.len() == m
            && self.u_min.len() == m
            && self.u_max.len() == m;
        if !ok {
            return Err(Error::Dimension("inconsistent horizon problem".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("prediction horizon must be at least 1".into()));
        }
        if !is_psd(&self.q) {
            return Err(Error::NotPsd);
        }
        Ok(())
    }

    /// Predicted states `x_0..x_N` under the stacked input sequence `u`.
    pub fn predict(&self, u: &DVector<f64>) -> Vec<DVector<f64>> {
        let m = self.input_dim();
        let mut states = Vec::with_capacity(self.horizon + 1);
        let mut x = self.x0.clone();
        states.push(x.clone());
        for t in 0..self.horizon {
            x = &self.a * &x + &self.b * u.rows(t * m, m) + &self.d;
            states.push(x.clone());
        }
        states
    }
}

/// Build the condensed QP whose objective equals the horizon cost.
pub fn build_qp(problem: &HorizonProblem) -> Result<BoxQp> {
    problem.check()?;
    let (n, m, horizon) = (problem.state_dim(), problem.input_dim(), problem.horizon);

    // a_pow[t] = A^t
    let mut a_pow = Vec::with_capacity(horizon + 1);
    a_pow.push(DMatrix::<f64>::identity(n, n));
    for t in 1..=horizon {
        a_pow.push(&problem.a * &a_pow[t - 1]);
    }
    let ab: Vec<DMatrix<f64>> = a_pow.iter().take(horizon).map(|p| p * &problem.b).collect();

    // Predicted states x_1..x_N = free + gamma * U.
    let mut gamma = DMatrix::zeros(horizon * n, horizon * m);
    for t in 1..=horizon {
        for s in 0..t {
            gamma
                .view_mut(((t - 1) * n, s * m), (n, m))
                .copy_from(&ab[t - 1 - s]);
        }
    }
    let mut err = DVector::zeros(horizon * n);
    let mut x = problem.x0.clone();
    for t in 1..=horizon {
        x = &problem.a * &x + &problem.d;
        err.rows_mut((t - 1) * n, n).copy_from(&(&x - &problem.x_ref));
    }

    let mut q_gamma = DMatrix::zeros(horizon * n, horizon * m);
    let mut q_err = DVector::zeros(horizon * n);
    for t in 0..horizon {
        q_gamma
            .rows_mut(t * n, n)
            .copy_from(&(&problem.q * gamma.rows(t * n, n)));
        q_err
            .rows_mut(t * n, n)
            .copy_from(&(&problem.q * err.rows(t * n, n)));
    }

    let mut h = gamma.transpose() * &q_gamma;
    let mut g = gamma.transpose() * &q_err;
    let mut c = err.dot(&q_err);
    for t in 0..horizon {
        let mut block = h.view_mut((t * m, t * m), (m, m));
        block += &problem.r;
        let r_ref = &problem.r * &problem.u_ref;
        let mut gt = g.rows_mut(t * m, m);
        gt -= &r_ref;
        c += problem.u_ref.dot(&r_ref);
    }
    h *= 2.0;
    g *= 2.0;
    // Symmetrize against rounding in the products above.
    let h = (&h + h.transpose()) * 0.5;

    let e0 = &problem.x0 - &problem.x_ref;
    c += e0.dot(&(&problem.q * &e0));

    let lower = DVector::from_iterator(horizon * m, (0..horizon).flat_map(|_| problem.u_min.iter().copied()));
    let upper = DVector::from_iterator(horizon * m, (0..horizon).flat_map(|_| problem.u_max.iter().copied()));
    Ok(BoxQp { h, g, c, lower, upper })
}

/// Optimal input sequence of one horizon problem.
#[derive(Clone, Debug, PartialEq)]
pub struct MpcSolution {
    /// `u*(t)` for `t = k..k+N_p-1`.
    pub u_seq: Vec<DVector<f64>>,
    /// Horizon cost at the optimum, cooperation cost excluded.
    pub control_cost: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub layout: InputLayout,
}

impl MpcSolution {
    pub fn first_move(&self) -> &DVector<f64> {
        &self.u_seq[0]
    }

    pub fn stacked(&self) -> DVector<f64> {
        let m = self.u_seq.first().map_or(0, |u| u.len());
        DVector::from_iterator(m * self.u_seq.len(), self.u_seq.iter().flat_map(|u| u.iter().copied()))
    }
}

/// Build, solve and unstack one horizon problem.
pub fn solve_horizon(
    problem: &HorizonProblem,
    layout: InputLayout,
    settings: &QpSettings,
    start: Option<&DVector<f64>>,
) -> Result<MpcSolution> {
    let qp = build_qp(problem)?;
    let sol = solve_qp_from(&qp, settings, start)?;
    let m = problem.input_dim();
    let u_seq = (0..problem.horizon)
        .map(|t| sol.x.rows(t * m, m).into_owned())
        .collect();
    Ok(MpcSolution {
        u_seq,
        control_cost: sol.objective.max(0.0),
        iterations: sol.iterations,
        kkt_residual: sol.kkt_residual,
        layout,
    })
}

/// Horizon problem for a player; `x0` is the members' stacked state.
pub fn player_problem(
    net: &CoupledNetwork,
    members: &[AgentId],
    x0: &DVector<f64>,
    horizon: usize,
) -> Result<(HorizonProblem, InputLayout)> {
    let m = compose_player_matrices(net, members)?;
    finish_problem(net, m, x0, horizon)
}

/// Horizon problem for the merger of two players; `x0` is `[x_p1; x_p2]`.
pub fn merger_problem(
    net: &CoupledNetwork,
    p1: &[AgentId],
    p2: &[AgentId],
    x0: &DVector<f64>,
    horizon: usize,
) -> Result<(HorizonProblem, InputLayout)> {
    let m = compose_merger_matrices(net, p1, p2)?;
    finish_problem(net, m, x0, horizon)
}

fn finish_problem(
    net: &CoupledNetwork,
    m: PlayerMatrices,
    x0: &DVector<f64>,
    horizon: usize,
) -> Result<(HorizonProblem, InputLayout)> {
    if x0.len() != m.layout.state_dim() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, player expects {}",
            x0.len(),
            m.layout.state_dim()
        )));
    }
    let costs = stack_costs(net, &m.layout);
    let problem = HorizonProblem::from_parts(&m, costs, x0.clone(), horizon);
    Ok((problem, m.layout))
}

pub fn solve_player_mpc(
    net: &CoupledNetwork,
    members: &[AgentId],
    x0: &DVector<f64>,
    cfg: &MpcConfig,
) -> Result<MpcSolution> {
    solve_player_mpc_from(net, members, x0, cfg, None)
}

/// As [`solve_player_mpc`], starting the QP from `start`.
pub fn solve_player_mpc_from(
    net: &CoupledNetwork,
    members: &[AgentId],
    x0: &DVector<f64>,
    cfg: &MpcConfig,
    start: Option<&DVector<f64>>,
) -> Result<MpcSolution> {
    let (problem, layout) = player_problem(net, members, x0, cfg.horizon)?;
    solve_horizon(&problem, layout, &cfg.qp, start)
}

pub fn solve_merger_mpc(
    net: &CoupledNetwork,
    p1: &[AgentId],
    p2: &[AgentId],
    x0: &DVector<f64>,
    cfg: &MpcConfig,
) -> Result<MpcSolution> {
    let (problem, layout) = merger_problem(net, p1, p2, x0, cfg.horizon)?;
    solve_horizon(&problem, layout, &cfg.qp, None)
}

/// Horizon cost of each member along the predicted trajectory of `sol`,
/// in layout member order. The parts sum to `sol.control_cost`.
pub fn member_costs(net: &CoupledNetwork, problem: &HorizonProblem, sol: &MpcSolution) -> Vec<f64> {
    let states = problem.predict(&sol.stacked());
    let layout = &sol.layout;
    layout
        .members()
        .iter()
        .map(|&id| {
            let sub = &net.subsystems[id];
            let (off, n) = layout.state_block(id).unwrap();
            let mut total = 0.0;
            for x in &states {
                let dx = x.rows(off, n) - &sub.x_ref;
                total += dx.dot(&(&sub.q * &dx));
            }
            let own: Vec<_> = layout.channels().iter().filter(|c| c.owner == id).collect();
            for u in &sol.u_seq {
                let ui = DVector::from_iterator(
                    sub.input_dim(),
                    own.iter().flat_map(|c| u.rows(c.offset, c.dim).iter().copied().collect::<Vec<_>>()),
                );
                let du = ui - &sub.u_ref;
                total += du.dot(&(&sub.r * &du));
            }
            total
        })
        .collect()
}
