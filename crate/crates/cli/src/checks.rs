//! Exact checks on tiny instances, run by `pcomimo oracle-check`.

use pcomimo_core::baselines::dof_table;
use pcomimo_core::learner::Multipliers;
use pcomimo_core::oracle::{
    best_constrained_policy, decomposition_gap, dual_solve, per_flow_fixed_point,
    per_flow_residual, relative_value_iteration,
};
use pcomimo_core::phy::d_kmn;
use pcomimo_core::{Result, TinyInstance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Case {
    Dof,
    /// the system potential splits into per-flow potentials
    #[value(name = "lemma2")]
    Decomposition,
    Fixedpoint,
    Duality,
}

impl Case {
    pub const ALL: [Case; 4] = [
        Case::Dof,
        Case::Decomposition,
        Case::Fixedpoint,
        Case::Duality,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Case::Dof => "dof",
            Case::Decomposition => "lemma2",
            Case::Fixedpoint => "fixedpoint",
            Case::Duality => "duality",
        }
    }
}

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

pub fn run(case: Case) -> Result<Outcome> {
    match case {
        Case::Dof => dof(),
        Case::Decomposition => decomposition(),
        Case::Fixedpoint => fixed_point(),
        Case::Duality => duality(),
    }
}

fn dof() -> Result<Outcome> {
    let mut failures = Vec::new();
    let small = dof_table(2, 3, 2)?;
    if (small.coordinative, small.full_coop, small.pco) != (3, 4, (3, 4)) {
        failures.push(format!("{small:?}"));
    }
    for (k, m, n) in [(3, 5, 2), (3, 4, 2), (3, 7, 3)] {
        let row = dof_table(k, m, n)?;
        let coordinative = n + (k - 1) * d_kmn(k, m, n);
        if row.coordinative != coordinative || row.full_coop != k * n {
            failures.push(format!("{row:?}"));
        }
    }
    Ok(Outcome {
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            "all rows match".into()
        } else {
            format!("mismatched rows: {}", failures.join("; "))
        },
    })
}

fn decomposition() -> Result<Outcome> {
    let inst = TinyInstance::decomposition();
    let mut worst: f64 = 0.0;
    for (p, c) in [(0.0, 0.0), (0.4, 0.6), (1.5, 0.2)] {
        let gamma = Multipliers {
            gamma_p: vec![p, c],
            gamma_c: vec![c, p],
            bound: 1e3,
        };
        let system = relative_value_iteration(&inst, &gamma)?;
        let flows = (0..2)
            .map(|k| per_flow_fixed_point(&inst, k, &gamma).map(|f| f.values))
            .collect::<Result<Vec<_>>>()?;
        worst = worst.max(decomposition_gap(&inst, &system.values, &flows));
    }
    Ok(Outcome {
        passed: worst <= 1e-6,
        detail: format!("sup |V - sum V_k| = {worst:.3e}"),
    })
}

fn fixed_point() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for inst in [TinyInstance::decomposition(), TinyInstance::duality()] {
        let gamma = TinyInstance::duality_gamma();
        for k in 0..2 {
            let f = per_flow_fixed_point(&inst, k, &gamma)?;
            if !f.converged {
                return Ok(Outcome {
                    passed: false,
                    detail: format!("user {k} did not converge (residual {:.3e})", f.residual),
                });
            }
            worst = worst.max(per_flow_residual(&inst, k, &gamma, &f.values));
        }
    }
    Ok(Outcome {
        passed: worst <= 1e-8,
        detail: format!("worst per-flow residual {worst:.3e}"),
    })
}

fn duality() -> Result<Outcome> {
    let inst = TinyInstance::duality();
    let dual = dual_solve(&inst, &Multipliers::uniform(2, 0.0, 1e3))?;
    let (_, best) = best_constrained_policy(&inst, 1e-9)?;
    let gap = (dual.theta - best.cost).abs();
    let slackness = (0..2)
        .map(|k| {
            (dual.gamma.gamma_p[k] * (dual.stats.power[k] - inst.power_budget[k])).abs()
                + (dual.gamma.gamma_c[k] * (dual.stats.backhaul[k] - inst.backhaul_budget[k])).abs()
        })
        .fold(0.0, f64::max);
    Ok(Outcome {
        passed: dual.converged && gap <= 1e-4 && slackness <= 1e-6,
        detail: format!(
            "dual {:.9} vs constrained optimum {:.9} (gap {gap:.3e}), slackness {slackness:.3e}, {} iterations",
            dual.theta, best.cost, dual.iterations
        ),
    })
}
