//! Solve one player's horizon problem on the storage grid and print the plan.

use coalmpc::mpc::{solve_player_mpc, MpcConfig};
use coalmpc::model::InputLayout;
use coalmpc::scenario::{build_scenario, ScenarioSpec};

fn main() -> Result<(), coalmpc::Error> {
    let sc = build_scenario(&ScenarioSpec::benchmark(4, 4))?;
    // the source node and its two neighbors
    let members = [0, 1, 4];
    let layout = InputLayout::for_members(&sc.network, &members)?;
    let x = layout.gather_state(&sc.network, &sc.x0);
    let sol = solve_player_mpc(&sc.network, &members, &x, &MpcConfig::default())?;
    println!(
        "horizon cost {:.4e}, {} iterations, KKT residual {:.1e}",
        sol.control_cost, sol.iterations, sol.kkt_residual
    );
    for c in layout.channels() {
        let plan: Vec<String> = sol.u_seq.iter().map(|u| format!("{:.3}", u[c.offset])).collect();
        println!("u_{}_{:<5} {}", c.owner, c.target.to_string(), plan.join(" "));
    }
    Ok(())
}
