//! A single bargain between two coupled tanks: costs, Shapley shares and the
//! side payments that make the merger individually rational.

use coalmpc::coalition::{bargain, BargainConfig, CoopCostConfig, CoopCostKind, Criterion, Player, RoundOrder};
use coalmpc::mpc::MpcConfig;
use coalmpc::scenario::{integrator_network, IntegratorParams};
use nalgebra::DVector;

fn main() -> Result<(), coalmpc::Error> {
    let net = integrator_network(
        2,
        &[(0, 1)],
        &IntegratorParams {
            ts: 1.0,
            q: 100.0,
            r: 1.0,
            x_ref: vec![0.5, 0.5],
            u_min: 0.0,
            u_max: 0.2,
            source: None,
            sink: None,
        },
    );
    // tank 0 is overfull, tank 1 nearly empty
    let x = DVector::from_vec(vec![0.9, 0.2]);
    let cfg = BargainConfig {
        criterion: Criterion::IndividuallyRational,
        coop: CoopCostConfig::new(CoopCostKind::Links),
        mpc: MpcConfig::default(),
        order: RoundOrder::BestBenefit,
    };
    let o = bargain(&net, &Player::singleton(0, 0), &Player::singleton(1, 0), &x, &cfg)?;
    println!("standalone  J1 = {:.4}  J2 = {:.4}", o.j1, o.j2);
    println!("merged      J12 = {:.4} (chi {:.1}) over link {:?}", o.j12, o.chi12, o.link);
    println!("shapley     phi1 = {:.4}  phi2 = {:.4}", o.phi1, o.phi2);
    println!("incurred    {:.4}  {:.4}", o.incurred.0, o.incurred.1);
    println!("payments    {:+.4}  {:+.4} (positive = receives)", o.side_payments.0, o.side_payments.1);
    println!("merge: {}", o.merged);
    Ok(())
}
