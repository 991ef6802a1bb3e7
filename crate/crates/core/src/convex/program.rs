use std::collections::HashMap;
use std::io::{self, Write};

use super::expr::{LinExpr, Objective, VarId};
use super::ConvexError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConstraintId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConeId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone)]
pub(crate) struct VarDef {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub name: String,
    /// Variable part only; any constant was moved into `rhs`.
    pub expr: LinExpr,
    pub sense: Sense,
    pub rhs: f64,
}

/// `‖u‖₂ ≤ t`, with every component affine in the variables.
#[derive(Debug, Clone)]
pub(crate) struct Cone {
    pub name: String,
    pub t: LinExpr,
    pub u: Vec<LinExpr>,
}

#[derive(Debug, Clone, Copy)]
enum Handle {
    Row(usize),
    Cone(usize),
}

/// A convex program: box-bounded variables, linear rows, second-order cones and a
/// convex quadratic objective.
#[derive(Debug, Clone, Default)]
pub struct ConvexProgram {
    pub(crate) vars: Vec<VarDef>,
    pub(crate) rows: Vec<Row>,
    pub(crate) cones: Vec<Cone>,
    pub(crate) objective: Objective,
    names: HashMap<String, Handle>,
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a variable with bounds `lo ≤ x ≤ hi`; use infinities for free sides.
    pub fn add_var(&mut self, name: impl Into<String>, lo: f64, hi: f64) -> VarId {
        self.vars.push(VarDef {
            name: name.into(),
            lo,
            hi,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn add_free_var(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn set_bounds(&mut self, v: VarId, lo: f64, hi: f64) {
        let d = &mut self.vars[v.0];
        d.lo = lo;
        d.hi = hi;
    }

    pub fn bounds(&self, v: VarId) -> (f64, f64) {
        let d = &self.vars[v.0];
        (d.lo, d.hi)
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.vars[v.0].name
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cones(&self) -> usize {
        self.cones.len()
    }

    /// Adds `expr (sense) rhs`. A constant inside `expr` is folded into the rhs.
    /// Names are used for lookup; re-using a name shadows the earlier constraint.
    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        expr: impl Into<LinExpr>,
        sense: Sense,
        rhs: f64,
    ) -> ConstraintId {
        let mut expr = expr.into();
        let rhs = rhs - expr.constant;
        expr.constant = 0.0;
        let name = name.into();
        let id = self.rows.len();
        self.names.insert(name.clone(), Handle::Row(id));
        self.rows.push(Row {
            name,
            expr,
            sense,
            rhs,
        });
        ConstraintId(id)
    }

    pub fn add_eq(&mut self, name: impl Into<String>, expr: impl Into<LinExpr>, rhs: f64) -> ConstraintId {
        self.add_constraint(name, expr, Sense::Eq, rhs)
    }

    pub fn add_le(&mut self, name: impl Into<String>, expr: impl Into<LinExpr>, rhs: f64) -> ConstraintId {
        self.add_constraint(name, expr, Sense::Le, rhs)
    }

    pub fn add_ge(&mut self, name: impl Into<String>, expr: impl Into<LinExpr>, rhs: f64) -> ConstraintId {
        self.add_constraint(name, expr, Sense::Ge, rhs)
    }

    /// `‖u‖₂ ≤ t`.
    pub fn add_soc(&mut self, name: impl Into<String>, t: impl Into<LinExpr>, u: Vec<LinExpr>) -> ConeId {
        let name = name.into();
        let id = self.cones.len();
        self.names.insert(name.clone(), Handle::Cone(id));
        self.cones.push(Cone {
            name,
            t: t.into(),
            u,
        });
        ConeId(id)
    }

    /// Rotated cone `‖a‖² ≤ c·d` with `c, d ≥ 0`, stored as the equivalent
    /// `‖(c − d, 2a)‖ ≤ c + d`.
    pub fn add_rotated_cone(
        &mut self,
        name: impl Into<String>,
        a: Vec<LinExpr>,
        c: impl Into<LinExpr>,
        d: impl Into<LinExpr>,
    ) -> ConeId {
        let c = c.into();
        let d = d.into();
        let mut u = Vec::with_capacity(a.len() + 1);
        u.push(c.clone() - d.clone());
        u.extend(a.into_iter().map(|e| e * 2.0));
        self.add_soc(name, c + d, u)
    }

    pub fn set_objective(&mut self, obj: Objective) {
        self.objective = obj;
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn set_rhs(&mut self, id: ConstraintId, rhs: f64) {
        self.rows[id.0].rhs = rhs;
    }

    pub fn rhs(&self, id: ConstraintId) -> f64 {
        self.rows[id.0].rhs
    }

    pub fn constraint_id(&self, name: &str) -> Result<ConstraintId, ConvexError> {
        match self.names.get(name) {
            Some(Handle::Row(i)) => Ok(ConstraintId(*i)),
            _ => Err(ConvexError::UnknownConstraint(name.to_string())),
        }
    }

    pub fn cone_id(&self, name: &str) -> Result<ConeId, ConvexError> {
        match self.names.get(name) {
            Some(Handle::Cone(i)) => Ok(ConeId(*i)),
            _ => Err(ConvexError::UnknownConstraint(name.to_string())),
        }
    }

    pub fn constraint_name(&self, id: ConstraintId) -> &str {
        &self.rows[id.0].name
    }

    pub fn cone_name(&self, id: ConeId) -> &str {
        &self.cones[id.0].name
    }

    /// Checks that every expression references declared variables and every box is
    /// ordered.
    pub fn validate(&self) -> Result<(), ConvexError> {
        let n = self.vars.len();
        for d in &self.vars {
            if d.lo.is_nan() || d.hi.is_nan() || d.lo > d.hi {
                return Err(ConvexError::InvalidProgram(format!(
                    "variable `{}` has bounds [{}, {}]",
                    d.name, d.lo, d.hi
                )));
            }
        }
        let out_of_range = |e: &LinExpr| e.max_var().is_some_and(|m| m >= n);
        for r in &self.rows {
            if out_of_range(&r.expr) || !r.rhs.is_finite() {
                return Err(ConvexError::InvalidProgram(format!("constraint `{}`", r.name)));
            }
        }
        for c in &self.cones {
            if out_of_range(&c.t) || c.u.iter().any(out_of_range) {
                return Err(ConvexError::InvalidProgram(format!("cone `{}`", c.name)));
            }
        }
        if self.objective.max_var().is_some_and(|m| m >= n) {
            return Err(ConvexError::InvalidProgram("objective".into()));
        }
        Ok(())
    }

    /// Largest violation of any bound, row or cone at `x` (absolute units).
    pub fn primal_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (d, &xi) in self.vars.iter().zip(x) {
            worst = worst.max(d.lo - xi).max(xi - d.hi);
        }
        for r in &self.rows {
            let a = r.expr.eval(x);
            let v = match r.sense {
                Sense::Eq => (a - r.rhs).abs(),
                Sense::Le => a - r.rhs,
                Sense::Ge => r.rhs - a,
            };
            worst = worst.max(v);
        }
        for c in &self.cones {
            let norm = c.u.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(norm - c.t.eval(x));
        }
        worst
    }

    /// Writes a plain-text LP-style listing of the program.
    pub fn write_lp<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let name_of = |e: &LinExpr| -> String {
            let e = e.compacted();
            let mut s = String::new();
            for (i, (v, c)) in e.terms.iter().enumerate() {
                let sign = if *c < 0.0 { "-" } else if i > 0 { "+" } else { "" };
                s.push_str(&format!("{sign} {} {} ", c.abs(), self.vars[v.0].name));
            }
            if e.constant != 0.0 || e.terms.is_empty() {
                s.push_str(&format!("{:+}", e.constant));
            }
            s.trim_end().to_string()
        };
        writeln!(w, "minimize")?;
        writeln!(w, "  obj: {}", name_of(&self.objective.linear))?;
        for (k, e) in &self.objective.squares {
            writeln!(w, "     + {k} [ {} ]^2", name_of(e))?;
        }
        writeln!(w, "subject to")?;
        for r in &self.rows {
            let op = match r.sense {
                Sense::Eq => "=",
                Sense::Le => "<=",
                Sense::Ge => ">=",
            };
            writeln!(w, "  {}: {} {op} {}", r.name, name_of(&r.expr), r.rhs)?;
        }
        for c in &self.cones {
            let parts: Vec<String> = c.u.iter().map(|e| format!("[ {} ]", name_of(e))).collect();
            writeln!(w, "  {}: || {} || <= {}", c.name, parts.join(", "), name_of(&c.t))?;
        }
        writeln!(w, "bounds")?;
        for d in &self.vars {
            writeln!(w, "  {} <= {} <= {}", d.lo, d.name, d.hi)?;
        }
        writeln!(w, "end")
    }
}
