//! Closed-loop simulation under centralized, decentralized and coalitional
//! control.
//!
//! Per step `k`: on negotiation instants (coalitional modes only) expired
//! coalitions dissolve and a bargaining round runs; every player then solves
//! its MPC and applies the first move; the plant advances with all applied
//! inputs acting on it.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coalition::{
    cooperation_cost, expire_coalitions, negotiation_round, BargainConfig, CoopCostConfig, Criterion,
    PartitionState, Player, RoundOrder,
};
use crate::error::{Error, Result};
use crate::model::{stage_cost, step_true, validate_network, AgentId, CoupledNetwork, InputLayout};
use crate::mpc::{solve_player_mpc_from, MpcConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Cen,
    Dec,
    Coo,
    Cir,
}

impl Mode {
    pub fn criterion(self) -> Option<Criterion> {
        match self {
            Mode::Coo => Some(Criterion::Cooperative),
            Mode::Cir => Some(Criterion::IndividuallyRational),
            Mode::Cen | Mode::Dec => None,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Cen => "cen",
            Mode::Dec => "dec",
            Mode::Coo => "coo",
            Mode::Cir => "cir",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub mode: Mode,
    pub steps: usize,
    /// Negotiation period in steps.
    pub neg_period: usize,
    /// Coalition lifetime in steps; `usize::MAX` never expires.
    pub lifetime: usize,
    pub coop: CoopCostConfig,
    pub mpc: MpcConfig,
    pub order: RoundOrder,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Coo,
            steps: 100,
            neg_period: 5,
            lifetime: 10,
            coop: CoopCostConfig::default(),
            mpc: MpcConfig::default(),
            order: RoundOrder::default(),
        }
    }
}

impl SimConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.neg_period == 0 {
            return Err(Error::Config("negotiation period must be at least 1".into()));
        }
        if self.lifetime == 0 {
            return Err(Error::Config("coalition lifetime must be at least 1".into()));
        }
        if self.mpc.horizon == 0 {
            return Err(Error::Config("prediction horizon must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Merge,
    Dissolve,
}

/// One change of the coalition structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalitionEvent {
    pub step: usize,
    pub kind: EventKind,
    pub members: Vec<AgentId>,
    /// Cooperation cost of the resulting (merge) or dissolved coalition.
    pub chi: f64,
    pub j1: Option<f64>,
    pub j2: Option<f64>,
    pub j12: Option<f64>,
    pub phi1: Option<f64>,
    pub phi2: Option<f64>,
    /// Per-agent transfers booked at this event (positive = receives).
    pub side_payments: Vec<(AgentId, f64)>,
}

/// Coalition structure right after a negotiation instant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSnapshot {
    pub step: usize,
    pub players: Vec<Vec<AgentId>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub mode: Mode,
    /// `x(0) ..= x(steps)`.
    pub states: Vec<DVector<f64>>,
    /// Applied inputs `u(0) .. u(steps-1)` in global layout order.
    pub inputs: Vec<DVector<f64>>,
    /// Realized global stage cost per step.
    pub stage_costs: Vec<f64>,
    pub events: Vec<CoalitionEvent>,
    pub partitions: Vec<PartitionSnapshot>,
    pub accumulated_control_cost: f64,
    pub chi_accrued: f64,
    pub accumulated_total_cost: f64,
    /// Net side payments per agent (positive = received).
    pub ledger: Vec<f64>,
    pub steady_state_error: Vec<f64>,
}

impl SimResult {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("at least the initial state")
    }
}

/// Realized global stage cost `sum_i l_i(x_i, u_i)`.
pub fn global_stage_cost(
    net: &CoupledNetwork,
    global: &InputLayout,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    let offsets = net.state_offsets();
    let mut total = 0.0;
    for s in &net.subsystems {
        let xi = x.rows(offsets[s.id], s.state_dim()).into_owned();
        let own: Vec<f64> = global
            .channels()
            .iter()
            .filter(|c| c.owner == s.id)
            .flat_map(|c| u.rows(c.offset, c.dim).iter().copied().collect::<Vec<_>>())
            .collect();
        total += stage_cost(s, &xi, &DVector::from_vec(own))?;
    }
    Ok(total)
}

fn state_error(net: &CoupledNetwork, x: &DVector<f64>) -> Vec<f64> {
    let offsets = net.state_offsets();
    net.subsystems
        .iter()
        .map(|s| (x.rows(offsets[s.id], s.state_dim()) - &s.x_ref).norm())
        .collect()
}

/// Run the closed loop from the global initial state `x0`.
pub fn run(net: &CoupledNetwork, x0: &DVector<f64>, cfg: &SimConfig) -> Result<SimResult> {
    validate_network(net).into_result()?;
    cfg.check()?;
    if x0.len() != net.state_dim() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, network expects {}",
            x0.len(),
            net.state_dim()
        )));
    }

    let global = net.global_layout();
    let bargain_cfg = cfg.mode.criterion().map(|criterion| BargainConfig {
        criterion,
        coop: cfg.coop.clone(),
        mpc: cfg.mpc,
        order: cfg.order,
    });
    let mut partition = match cfg.mode {
        Mode::Cen => PartitionState::grand_coalition(net, 0),
        _ => PartitionState::decentralized(net.len(), 0),
    };

    let mut x = x0.clone();
    let mut states = vec![x.clone()];
    let mut inputs = Vec::with_capacity(cfg.steps);
    let mut stage_costs = Vec::with_capacity(cfg.steps);
    let mut events = Vec::new();
    let mut partitions = Vec::new();
    let mut chi_accrued = 0.0;
    let mut ledger = vec![0.0; net.len()];
    let mut warm: BTreeMap<Vec<AgentId>, DVector<f64>> = BTreeMap::new();

    for k in 0..cfg.steps {
        if let Some(bcfg) = &bargain_cfg {
            if k % cfg.neg_period == 0 {
                let expired = expire_coalitions(&partition, k, cfg.lifetime);
                for p in partition.coalitions() {
                    if !expired.players.contains(p) {
                        events.push(CoalitionEvent {
                            step: k,
                            kind: EventKind::Dissolve,
                            members: p.member_list(),
                            chi: cooperation_cost(&cfg.coop, p, None),
                            j1: None,
                            j2: None,
                            j12: None,
                            phi1: None,
                            phi2: None,
                            side_payments: vec![],
                        });
                    }
                }
                let (next, outcomes) = negotiation_round(&expired, &x, net, bcfg)?;
                for o in outcomes.iter().filter(|o| o.formed) {
                    let mut members: Vec<AgentId> = o.p1.iter().chain(&o.p2).copied().collect();
                    members.sort_unstable();
                    for &(agent, amount) in &o.member_payments {
                        ledger[agent] += amount;
                    }
                    events.push(CoalitionEvent {
                        step: k,
                        kind: EventKind::Merge,
                        members,
                        chi: o.chi12,
                        j1: Some(o.j1),
                        j2: Some(o.j2),
                        j12: Some(o.j12),
                        phi1: Some(o.phi1),
                        phi2: Some(o.phi2),
                        side_payments: o.member_payments.clone(),
                    });
                }
                partition = next;
                chi_accrued += partition
                    .coalitions()
                    .map(|p| cooperation_cost(&cfg.coop, p, None))
                    .sum::<f64>();
                partitions.push(PartitionSnapshot {
                    step: k,
                    players: partition.players.iter().map(Player::member_list).collect(),
                });
            }
        }

        let solutions: Vec<_> = partition
            .players
            .par_iter()
            .map(|p| {
                let members = p.member_list();
                let layout = InputLayout::for_members(net, &members)?;
                let xp = layout.gather_state(net, &x);
                let start = warm.get(&members);
                solve_player_mpc_from(net, &members, &xp, &cfg.mpc, start)
                    .map(|sol| (members, sol))
                    .map_err(|e| Error::Solver {
                        step: k,
                        player: p.member_list(),
                        source: Box::new(e),
                    })
            })
            .collect::<Result<_>>()?;

        let mut u = DVector::zeros(global.input_dim());
        warm.clear();
        for (members, sol) in solutions {
            sol.layout.scatter_inputs(sol.first_move(), &global, &mut u);
            warm.insert(members, shifted(&sol.stacked(), sol.layout.input_dim()));
        }
        stage_costs.push(global_stage_cost(net, &global, &x, &u)?);
        x = step_true(net, &x, &u)?;
        states.push(x.clone());
        inputs.push(u);
    }

    let accumulated_control_cost: f64 = stage_costs.iter().sum();
    Ok(SimResult {
        mode: cfg.mode,
        steady_state_error: state_error(net, &x),
        states,
        inputs,
        stage_costs,
        events,
        partitions,
        accumulated_control_cost,
        chi_accrued,
        accumulated_total_cost: accumulated_control_cost + chi_accrued,
        ledger,
    })
}

/// Drop the first move and repeat the last one.
fn shifted(u: &DVector<f64>, m: usize) -> DVector<f64> {
    let len = u.len();
    if len <= m {
        return u.clone();
    }
    let mut out = DVector::zeros(len);
    out.rows_mut(0, len - m).copy_from(&u.rows(m, len - m));
    out.rows_mut(len - m, m).copy_from(&u.rows(len - m, m));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub mode: Mode,
    pub control_cost: f64,
    pub chi_accrued: f64,
    pub total_cost: f64,
}

/// Recompute accumulated costs from the recorded trajectory.
pub fn accumulate_costs(net: &CoupledNetwork, result: &SimResult) -> Result<CostReport> {
    let global = net.global_layout();
    let mut control_cost = 0.0;
    for (x, u) in result.states.iter().zip(&result.inputs) {
        control_cost += global_stage_cost(net, &global, x, u)?;
    }
    Ok(CostReport {
        mode: result.mode,
        control_cost,
        chi_accrued: result.chi_accrued,
        total_cost: control_cost + result.chi_accrued,
    })
}

/// Net transfer per agent over all events.
pub fn side_payment_ledger(events: &[CoalitionEvent], agents: usize) -> Vec<f64> {
    let mut ledger = vec![0.0; agents];
    for e in events {
        for &(agent, amount) in &e.side_payments {
            if agent < agents {
                ledger[agent] += amount;
            }
        }
    }
    ledger
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentError {
    pub agent: AgentId,
    pub error: f64,
    /// Hop distance from the source agent over the coupling graph.
    pub distance: Option<usize>,
}

pub fn steady_state_errors(net: &CoupledNetwork, result: &SimResult, source: AgentId) -> Vec<AgentError> {
    let dist = net.hop_distances(source);
    state_error(net, result.final_state())
        .into_iter()
        .enumerate()
        .map(|(agent, error)| AgentError {
            agent,
            error,
            distance: dist.get(agent).copied().flatten(),
        })
        .collect()
}

/// Mean final error of the agents at each hop distance from the source.
pub fn band_errors(errors: &[AgentError]) -> Vec<(usize, f64)> {
    let mut bands: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for e in errors {
        if let Some(d) = e.distance {
            let entry = bands.entry(d).or_default();
            entry.0 += e.error;
            entry.1 += 1;
        }
    }
    bands.into_iter().map(|(d, (s, n))| (d, s / n as f64)).collect()
}
