//! Run the 4x4 storage grid under every control mode and compare costs.
//!
//! cargo run --release --example grid_benchmark

use coalmpc::coalition::{CoopCostConfig, CoopCostKind};
use coalmpc::scenario::{build_scenario, ScenarioSpec};
use coalmpc::sim::{band_errors, run, steady_state_errors, Mode, SimConfig};

fn main() -> Result<(), coalmpc::Error> {
    let sc = build_scenario(&ScenarioSpec::benchmark(4, 4))?;
    let cen = run(&sc.network, &sc.x0, &SimConfig::with_mode(Mode::Cen))?;
    let baseline = cen.accumulated_total_cost;

    let runs = [
        ("CEN", Mode::Cen, CoopCostKind::Links),
        ("DEC", Mode::Dec, CoopCostKind::Links),
        ("COO(a)", Mode::Coo, CoopCostKind::Members),
        ("COO(b)", Mode::Coo, CoopCostKind::Links),
        ("CIR(b)", Mode::Cir, CoopCostKind::Links),
    ];
    println!("{:<8} {:>12} {:>10} {:>8} {:>8}", "mode", "total", "chi", "ratio", "events");
    for (name, mode, kind) in runs {
        let cfg = SimConfig {
            coop: CoopCostConfig::new(kind),
            ..SimConfig::with_mode(mode)
        };
        let res = run(&sc.network, &sc.x0, &cfg)?;
        println!(
            "{name:<8} {:>12.4e} {:>10.2} {:>8.3} {:>8}",
            res.accumulated_total_cost,
            res.chi_accrued,
            res.accumulated_total_cost / baseline,
            res.events.len()
        );
        if mode == Mode::Dec {
            let bands = band_errors(&steady_state_errors(&sc.network, &res, 0));
            let text: Vec<String> = bands.iter().map(|(d, e)| format!("{d}:{e:.3}")).collect();
            println!("         final error by hop distance {}", text.join(" "));
        }
    }
    Ok(())
}
