//! Speed of the translating solution for the Laplacian and a Hessian
//! quotient on the unit disk, from the flow and from the regularized family.
//!
//! `cargo run --release --example translating_speed -- 32`

use std::sync::Arc;

use hqflow::elliptic::{laplace_speed_oracle, solve_eigenpair, EigenSettings};
use hqflow::flow::{Flow, FlowSettings, ProblemSpec, StopRule};
use hqflow::geometry::{Domain, Grid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let nr: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(24);
    let disk = Domain::disk(1.0)?;
    let grid = Arc::new(Grid::build(disk, (nr, 2 * nr))?);
    println!("grid {}", grid.describe());
    for (k, l, f) in [(1, 0, "1"), (2, 0, "exp(0.1*x1)"), (2, 1, "1+0.1*x1")] {
        let spec = ProblemSpec::new(k, l, disk, f, "1", "0.5*(x1^2+x2^2)")?;
        let flow = Flow::new(spec.clone(), grid.clone(), FlowSettings::default())?;
        let run = flow.run(StopRule::Translating)?;
        let pair = solve_eigenpair(&spec, &grid, &EigenSettings::default())?;
        let oracle = laplace_speed_oracle(&spec)
            .map(|s| format!("{s:.8}"))
            .unwrap_or_else(|_| "-".into());
        println!(
            "k={k} l={l} f={f:12} flow {:.8} (t={:.2})  family {:.8}  oracle {oracle}",
            run.speed(),
            run.state.t,
            pair.s
        );
    }
    Ok(())
}
