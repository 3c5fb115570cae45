//! Storage-network scenarios: scalar integrators exchanging flows with their
//! neighbors, one source node pumping from the environment and one sink node
//! draining to it.
//!
//! Scenario files are JSON:
//!
//! ```json
//! { "grid": [4, 4], "Ts": 1.0, "x0": 0.25, "xref": 0.5, "Q": 1000.0, "R": 10.0,
//!   "source": 0, "sink": 15, "umin": 0.0, "umax": 0.04 }
//! ```
//!
//! `couplings` (a list of `[i, j]` pairs, optionally with `agents`) replaces
//! `grid` for arbitrary topologies. Every field except the topology is
//! optional. `x0` and `xref` take a number or one number per agent.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_network, AgentId, CoupledNetwork, SubsystemModel};
use crate::sim::{accumulate_costs, CoalitionEvent, PartitionSnapshot, SimResult};

pub const DEFAULT_TS: f64 = 1.0;
pub const DEFAULT_X0: f64 = 0.25;
pub const DEFAULT_XREF: f64 = 0.5;
pub const DEFAULT_Q: f64 = 1000.0;
pub const DEFAULT_R: f64 = 10.0;
pub const DEFAULT_UMIN: f64 = 0.0;
pub const DEFAULT_UMAX: f64 = 0.04;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAgent {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerAgent {
    fn resolve(&self, agents: usize, field: &str) -> Result<Vec<f64>> {
        match self {
            PerAgent::Uniform(v) => Ok(vec![*v; agents]),
            PerAgent::Each(v) if v.len() == agents => Ok(v.clone()),
            PerAgent::Each(v) => Err(Error::Config(format!(
                "`{field}` lists {} values for {agents} agents",
                v.len()
            ))),
        }
    }
}

/// Scenario file contents; unset fields take the defaults above.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub couplings: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<usize>,
    #[serde(rename = "Ts", default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<PerAgent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xref: Option<PerAgent>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sink: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub umin: Option<f64>,
    /// Per-channel flow cap, defaulting to [`DEFAULT_UMAX`]. The cap on the
    /// source pump is what keeps the centralized controller from refilling the
    /// grid in a single step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub umax: Option<f64>,
}

impl ScenarioSpec {
    pub fn grid(rows: usize, cols: usize) -> Self {
        Self {
            grid: Some([rows, cols]),
            ..Self::default()
        }
    }

    /// The storage-grid benchmark with every default written out.
    pub fn benchmark(rows: usize, cols: usize) -> Self {
        Self {
            grid: Some([rows, cols]),
            ts: Some(DEFAULT_TS),
            x0: Some(PerAgent::Uniform(DEFAULT_X0)),
            xref: Some(PerAgent::Uniform(DEFAULT_XREF)),
            q: Some(DEFAULT_Q),
            r: Some(DEFAULT_R),
            source: Some(0),
            sink: Some((rows * cols).saturating_sub(1)),
            umin: Some(DEFAULT_UMIN),
            umax: Some(DEFAULT_UMAX),
            ..Self::default()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}

/// A resolved scenario ready to simulate.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub network: CoupledNetwork,
    pub x0: DVector<f64>,
    pub source: Option<AgentId>,
    pub sink: Option<AgentId>,
    /// `(rows, cols)` for grid topologies.
    pub grid: Option<(usize, usize)>,
}

/// Parameters of a scalar integrator network.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorParams {
    pub ts: f64,
    pub q: f64,
    pub r: f64,
    pub x_ref: Vec<f64>,
    pub u_min: f64,
    pub u_max: f64,
    pub source: Option<AgentId>,
    pub sink: Option<AgentId>,
}

/// Integrators coupled through flows: an action of `i` toward `j` drains
/// `i` and fills `j` by `Ts` per unit.
pub fn integrator_network(agents: usize, edges: &[(AgentId, AgentId)], p: &IntegratorParams) -> CoupledNetwork {
    let mut nbrs: Vec<Vec<AgentId>> = vec![Vec::new(); agents];
    for &(i, j) in edges {
        if i < agents && j < agents && i != j {
            nbrs[i].push(j);
            nbrs[j].push(i);
        }
    }
    let subs = (0..agents)
        .map(|i| {
            let mut b_ext = Vec::new();
            if p.source == Some(i) {
                b_ext.push(DMatrix::from_element(1, 1, p.ts));
            }
            if p.sink == Some(i) {
                b_ext.push(DMatrix::from_element(1, 1, -p.ts));
            }
            let b_out: BTreeMap<_, _> = nbrs[i].iter().map(|&j| (j, DMatrix::from_element(1, 1, -p.ts))).collect();
            let b_in = nbrs[i].iter().map(|&j| (j, DMatrix::from_element(1, 1, p.ts))).collect();
            let d = b_out.len() + b_ext.len();
            SubsystemModel {
                id: i,
                a: DMatrix::identity(1, 1),
                b_in,
                b_out,
                b_ext,
                q: DMatrix::from_element(1, 1, p.q),
                r: DMatrix::identity(d, d) * p.r,
                x_ref: DVector::from_element(1, p.x_ref.get(i).copied().unwrap_or(DEFAULT_XREF)),
                u_ref: DVector::zeros(d),
                u_min: DVector::from_element(d, p.u_min),
                u_max: DVector::from_element(d, p.u_max),
            }
        })
        .collect();
    CoupledNetwork::new(subs)
}

/// 4-neighbor edges of a `rows x cols` grid, node `(r, c)` having id `r * cols + c`.
pub fn grid_edges(rows: usize, cols: usize) -> Vec<(AgentId, AgentId)> {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push((i, i + 1));
            }
            if r + 1 < rows {
                edges.push((i, i + cols));
            }
        }
    }
    edges
}

/// The storage grid with `overrides` applied over the defaults.
pub fn build_grid_scenario(rows: usize, cols: usize, overrides: &ScenarioSpec) -> Result<CoupledNetwork> {
    let spec = ScenarioSpec {
        grid: Some([rows, cols]),
        couplings: None,
        ..overrides.clone()
    };
    Ok(build_scenario(&spec)?.network)
}

/// Apply defaults, build the network and validate it.
pub fn build_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    let (agents, edges, grid) = match (&spec.grid, &spec.couplings) {
        (Some(_), Some(_)) => return Err(Error::Config("give either `grid` or `couplings`, not both".into())),
        (None, None) => return Err(Error::Config("scenario needs `grid` or `couplings`".into())),
        (Some([rows, cols]), None) => {
            if *rows == 0 || *cols == 0 {
                return Err(Error::Config(format!("grid dimensions must be at least 1, got {rows}x{cols}")));
            }
            (rows * cols, grid_edges(*rows, *cols), Some((*rows, *cols)))
        }
        (None, Some(pairs)) => {
            let inferred = pairs.iter().flat_map(|p| [p[0], p[1]]).max().map_or(0, |m| m + 1);
            let agents = spec.agents.unwrap_or(inferred);
            if agents == 0 || inferred > agents {
                return Err(Error::Config(format!(
                    "`couplings` reference agent {} but the scenario has {agents}",
                    inferred.saturating_sub(1)
                )));
            }
            if let Some(p) = pairs.iter().find(|p| p[0] == p[1]) {
                return Err(Error::Config(format!("agent {} is coupled to itself", p[0])));
            }
            let edges = pairs.iter().map(|p| (p[0].min(p[1]), p[0].max(p[1]))).collect();
            (agents, edges, None)
        }
    };

    let source = spec.source.or(grid.map(|_| 0));
    let sink = spec.sink.or(grid.map(|(r, c)| r * c - 1));
    for (name, id) in [("source", source), ("sink", sink)] {
        if let Some(id) = id {
            if id >= agents {
                return Err(Error::Config(format!("`{name}` {id} is outside 0..{agents}")));
            }
        }
    }
    if agents > 1 && source.is_some() && source == sink {
        return Err(Error::Config("source and sink must differ".into()));
    }

    let x0 = spec.x0.clone().unwrap_or(PerAgent::Uniform(DEFAULT_X0)).resolve(agents, "x0")?;
    let x_ref = spec.xref.clone().unwrap_or(PerAgent::Uniform(DEFAULT_XREF)).resolve(agents, "xref")?;
    let params = IntegratorParams {
        ts: spec.ts.unwrap_or(DEFAULT_TS),
        q: spec.q.unwrap_or(DEFAULT_Q),
        r: spec.r.unwrap_or(DEFAULT_R),
        x_ref,
        u_min: spec.umin.unwrap_or(DEFAULT_UMIN),
        u_max: spec.umax.unwrap_or(DEFAULT_UMAX),
        source,
        sink,
    };
    let network = integrator_network(agents, &edges, &params);
    validate_network(&network).into_result()?;
    Ok(Scenario {
        network,
        x0: DVector::from_vec(x0),
        source,
        sink,
        grid,
    })
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioSpec> {
    let text = fs::read_to_string(path)?;
    ScenarioSpec::from_json(&text)
}

pub fn write_scenario(spec: &ScenarioSpec, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, spec.to_json() + "\n")?;
    Ok(())
}

/// Files written by [`emit_outputs`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputFiles {
    pub trajectories: PathBuf,
    pub timeline: PathBuf,
    pub costs: PathBuf,
}

#[derive(Serialize)]
struct Timeline<'a> {
    mode: String,
    events: &'a [CoalitionEvent],
    partitions: &'a [PartitionSnapshot],
}

#[derive(Serialize)]
struct CostSummary {
    mode: String,
    steps: usize,
    accumulated_control_cost: f64,
    chi_accrued: f64,
    accumulated_total_cost: f64,
    steady_state_error: Vec<f64>,
    ledger: Vec<f64>,
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Trajectory CSV: one row per step and agent, the agent's state, then one
/// column per channel in the network filled only on its owner's rows.
pub fn trajectories_csv(net: &CoupledNetwork, result: &SimResult) -> String {
    let global = net.global_layout();
    let offsets = net.state_offsets();
    let max_n = net.subsystems.iter().map(|s| s.state_dim()).max().unwrap_or(1);
    let mut out = String::from("step,agent_id");
    if max_n == 1 {
        out.push_str(",state");
    } else {
        for k in 0..max_n {
            let _ = write!(out, ",state_{k}");
        }
    }
    for c in global.channels() {
        if c.dim == 1 {
            let _ = write!(out, ",u_{}_{}", c.owner, c.target);
        } else {
            for k in 0..c.dim {
                let _ = write!(out, ",u_{}_{}_{k}", c.owner, c.target);
            }
        }
    }
    out.push('\n');
    for (step, (x, u)) in result.states.iter().zip(&result.inputs).enumerate() {
        for s in &net.subsystems {
            let _ = write!(out, "{step},{}", s.id);
            for k in 0..max_n {
                out.push(',');
                if k < s.state_dim() {
                    out.push_str(&num(x[offsets[s.id] + k]));
                }
            }
            for c in global.channels() {
                for k in 0..c.dim {
                    out.push(',');
                    if c.owner == s.id {
                        out.push_str(&num(u[c.offset + k]));
                    }
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Write `trajectories.csv`, `timeline.json` and `costs.json` into `out_dir`.
pub fn emit_outputs(net: &CoupledNetwork, result: &SimResult, out_dir: impl AsRef<Path>) -> Result<OutputFiles> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let files = OutputFiles {
        trajectories: dir.join("trajectories.csv"),
        timeline: dir.join("timeline.json"),
        costs: dir.join("costs.json"),
    };
    fs::write(&files.trajectories, trajectories_csv(net, result))?;

    let timeline = Timeline {
        mode: result.mode.to_string(),
        events: &result.events,
        partitions: &result.partitions,
    };
    fs::write(&files.timeline, serde_json::to_string_pretty(&timeline).expect("timeline serializes") + "\n")?;

    let report = accumulate_costs(net, result)?;
    let summary = CostSummary {
        mode: result.mode.to_string(),
        steps: result.inputs.len(),
        accumulated_control_cost: report.control_cost,
        chi_accrued: report.chi_accrued,
        accumulated_total_cost: report.total_cost,
        steady_state_error: result.steady_state_error.clone(),
        ledger: result.ledger.clone(),
    };
    fs::write(&files.costs, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    Ok(files)
}
