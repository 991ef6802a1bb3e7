use std::collections::HashSet;

use thiserror::Error;

use super::expr::{LinExpr, Objective};
use super::program::{ConvexProgram, Sense};
use super::solve::{solve, Solution, SolverSettings, Status};

#[derive(Debug, Clone, PartialEq)]
pub struct LexiConfig {
    /// Relative degradation allowed on every earlier objective.
    pub epsilon: f64,
    /// Cap used when an earlier optimum is zero.
    pub abs_floor: f64,
    /// Optima with magnitude below this count as zero (solver noise).
    pub zero_tol: f64,
    /// Stage ids in priority order; empty means "as given".
    pub order: Vec<String>,
}

impl Default for LexiConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            abs_floor: 1e-9,
            zero_tol: 1e-7,
            order: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExtraRow {
    pub name: String,
    pub expr: LinExpr,
    pub sense: Sense,
    pub rhs: f64,
}

/// One objective of a lexicographic solve. Extra constraints stay in force for
/// this stage and all later ones.
#[derive(Debug, Clone)]
pub struct Stage {
    pub id: String,
    pub objective: Objective,
    pub extra: Vec<ExtraRow>,
}

impl Stage {
    pub fn new(id: impl Into<String>, objective: Objective) -> Self {
        Self {
            id: id.into(),
            objective,
            extra: Vec::new(),
        }
    }

    pub fn with_constraint(
        mut self,
        name: impl Into<String>,
        expr: impl Into<LinExpr>,
        sense: Sense,
        rhs: f64,
    ) -> Self {
        self.extra.push(ExtraRow {
            name: name.into(),
            expr: expr.into(),
            sense,
            rhs,
        });
        self
    }
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub id: String,
    pub objective: Objective,
    /// Optimal value of this stage's objective.
    pub f_star: f64,
    /// Upper bound imposed on this objective in later stages.
    pub cap: f64,
    pub solution: Solution,
}

#[derive(Debug, Clone)]
pub struct StagedSolution {
    pub stages: Vec<StageResult>,
    /// The last stage's program, including every degradation row.
    pub program: ConvexProgram,
}

impl StagedSolution {
    pub fn solution(&self) -> &Solution {
        &self.stages.last().expect("at least one stage").solution
    }

    pub fn primal(&self) -> &[f64] {
        &self.solution().primal
    }

    /// Every stage objective evaluated at the final point.
    pub fn objective_values(&self) -> Vec<f64> {
        let x = self.primal();
        self.stages.iter().map(|s| s.objective.eval(x)).collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LexiError {
    #[error("invalid lexicographic configuration: {0}")]
    InvalidConfig(String),
    #[error("stage {stage} infeasible (most violated: {most_violated:?})")]
    StageInfeasible {
        stage: usize,
        most_violated: Option<String>,
    },
    #[error("stage {stage} failed: {status:?}")]
    SolverFailure { stage: usize, status: Status },
}

/// Sign-aware degradation cap `F* + ε·|F*|`, or `abs_floor` when `|F*| ≤ zero_tol`.
///
/// ```
/// use lem_core::convex::{degradation_cap, LexiConfig};
/// let cfg = LexiConfig::default();
/// assert!((degradation_cap(-1.0, &cfg) - (-0.95)).abs() < 1e-12);
/// assert!((degradation_cap(2.0, &cfg) - 2.1).abs() < 1e-12);
/// assert_eq!(degradation_cap(0.0, &cfg), 1e-9);
/// ```
pub fn degradation_cap(f_star: f64, cfg: &LexiConfig) -> f64 {
    if f_star.abs() <= cfg.abs_floor.max(cfg.zero_tol) {
        cfg.abs_floor
    } else {
        f_star + cfg.epsilon * f_star.abs()
    }
}

fn add_objective_cap(prog: &mut ConvexProgram, name: &str, obj: &Objective, cap: f64) {
    let mut lhs = obj.linear_part().clone();
    for (k, (w, e)) in obj.squares().iter().enumerate() {
        let t = prog.add_var(format!("{name}.t{k}"), 0.0, f64::INFINITY);
        prog.add_rotated_cone(format!("{name}.sq{k}"), vec![e.clone()], t, LinExpr::constant(1.0 / w));
        lhs += t;
    }
    prog.add_le(name, lhs, cap);
}

/// Optimizes the stages one at a time in priority order. Stage `k` keeps every
/// earlier objective within its [`degradation_cap`] (plus the solver feasibility
/// tolerance, scaled by `1 + |F*|`).
pub fn lexicographic_solve(
    base: &ConvexProgram,
    stages: &[Stage],
    cfg: &LexiConfig,
    settings: &SolverSettings,
) -> Result<StagedSolution, LexiError> {
    if !(cfg.epsilon >= 0.0) || !cfg.epsilon.is_finite() {
        return Err(LexiError::InvalidConfig(format!("epsilon = {}", cfg.epsilon)));
    }
    let ordered: Vec<&Stage> = if cfg.order.is_empty() {
        stages.iter().collect()
    } else {
        let mut seen = HashSet::new();
        cfg.order
            .iter()
            .map(|id| {
                if !seen.insert(id) {
                    return Err(LexiError::InvalidConfig(format!("duplicate stage `{id}`")));
                }
                stages
                    .iter()
                    .find(|s| &s.id == id)
                    .ok_or_else(|| LexiError::InvalidConfig(format!("unknown stage `{id}`")))
            })
            .collect::<Result<_, _>>()?
    };
    if ordered.is_empty() {
        return Err(LexiError::InvalidConfig("no stages".into()));
    }

    let mut prog = base.clone();
    let mut results: Vec<StageResult> = Vec::with_capacity(ordered.len());
    for (k, stage) in ordered.iter().enumerate() {
        if let Some(prev) = results.last() {
            let margin = settings.feas_tol * (1.0 + prev.f_star.abs());
            add_objective_cap(&mut prog, &format!("lexi.{}", prev.id), &prev.objective, prev.cap + margin);
        }
        for row in &stage.extra {
            prog.add_constraint(row.name.clone(), row.expr.clone(), row.sense, row.rhs);
        }
        prog.set_objective(stage.objective.clone());
        let sol = solve(&prog, settings);
        match &sol.status {
            Status::Optimal => {}
            Status::Infeasible { most_violated } => {
                return Err(LexiError::StageInfeasible {
                    stage: k,
                    most_violated: most_violated.clone(),
                })
            }
            other => {
                return Err(LexiError::SolverFailure {
                    stage: k,
                    status: other.clone(),
                })
            }
        }
        let f_star = sol.objective;
        results.push(StageResult {
            id: stage.id.clone(),
            objective: stage.objective.clone(),
            f_star,
            cap: degradation_cap(f_star, cfg),
            solution: sol,
        });
    }
    Ok(StagedSolution {
        stages: results,
        program: prog,
    })
}
