//! Print how coalitions form and expire on the 4x4 grid.

use coalmpc::coalition::{CoopCostConfig, CoopCostKind};
use coalmpc::scenario::{build_scenario, ScenarioSpec};
use coalmpc::sim::{run, EventKind, Mode, SimConfig};

fn main() -> Result<(), coalmpc::Error> {
    let sc = build_scenario(&ScenarioSpec::benchmark(4, 4))?;
    let cfg = SimConfig {
        steps: 60,
        coop: CoopCostConfig::new(CoopCostKind::Members),
        ..SimConfig::with_mode(Mode::Cir)
    };
    let res = run(&sc.network, &sc.x0, &cfg)?;
    for e in &res.events {
        match e.kind {
            EventKind::Merge => {
                let paid: Vec<String> = e
                    .side_payments
                    .iter()
                    .filter(|p| p.1 != 0.0)
                    .map(|(a, v)| format!("{a}:{v:+.2}"))
                    .collect();
                println!(
                    "k={:<3} merge   {:?} J12={:.1} < {:.1}  payments [{}]",
                    e.step,
                    e.members,
                    e.j12.unwrap_or_default(),
                    e.j1.unwrap_or_default() + e.j2.unwrap_or_default(),
                    paid.join(" ")
                );
            }
            EventKind::Dissolve => println!("k={:<3} expire  {:?}", e.step, e.members),
        }
    }
    if let Some(last) = res.partitions.last() {
        println!("partition at k={}: {:?}", last.step, last.players);
    }
    println!("net ledger {:.2?}", res.ledger);
    Ok(())
}
