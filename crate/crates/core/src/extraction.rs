//! Symbolic expressions read off a trained subtopology.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::protected_div;
use crate::topology::{ActivationKind, Subtopology, UnitSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnaryOp {
    Sin,
    Cos,
    Tanh,
    Arctan,
    Cube,
}

impl UnaryOp {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            UnaryOp::Sin => v.sin(),
            UnaryOp::Cos => v.cos(),
            UnaryOp::Tanh => v.tanh(),
            UnaryOp::Arctan => v.atan(),
            UnaryOp::Cube => v * v * v,
        }
    }

    fn name(self) -> &'static str {
        match self {
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Arctan => "atan",
            UnaryOp::Cube => "cube",
        }
    }

    fn latex(self) -> &'static str {
        match self {
            UnaryOp::Sin => "\\sin",
            UnaryOp::Cos => "\\cos",
            UnaryOp::Tanh => "\\tanh",
            UnaryOp::Arctan => "\\arctan",
            UnaryOp::Cube => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BinaryOp {
    Mul,
    /// Division returning 0 unless the denominator exceeds `theta`.
    Div { theta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expression {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expression>),
    Binary(BinaryOp, Box<Expression>, Box<Expression>),
    /// `sum(coef * term) + bias`.
    Sum(Vec<(f64, Expression)>, f64),
}

impl Expression {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expression::Const(c) => *c,
            Expression::Var(i) => x[*i],
            Expression::Unary(op, e) => op.apply(e.eval(x)),
            Expression::Binary(BinaryOp::Mul, a, b) => a.eval(x) * b.eval(x),
            Expression::Binary(BinaryOp::Div { theta }, a, b) => protected_div(a.eval(x), b.eval(x), *theta),
            Expression::Sum(terms, bias) => terms.iter().map(|(w, e)| w * e.eval(x)).sum::<f64>() + bias,
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Expression::Const(_) | Expression::Var(_) => 1,
            Expression::Unary(_, e) => 1 + e.size(),
            Expression::Binary(_, a, b) => 1 + a.size() + b.size(),
            Expression::Sum(terms, _) => 1 + terms.iter().map(|(_, e)| e.size()).sum::<usize>(),
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expression::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn to_infix(&self, names: &[String]) -> String {
        let mut out = String::new();
        render(self, names, Style::Infix, &mut out);
        out
    }

    pub fn to_latex(&self, names: &[String]) -> String {
        let mut out = String::new();
        render(self, names, Style::Latex, &mut out);
        out
    }
}

/// Unfolds the network from the output unit. Copy units are transparent,
/// zero-weight links are dropped, and sources without input links reduce to
/// constants after [`simplify`].
pub fn extract_expression(sub: &Subtopology, theta_div: f64) -> Expression {
    let master = sub.master();
    let w = sub.weights();
    let mut acts: Vec<Expression> = (0..master.input_dim()).map(Expression::Var).collect();
    for layer in master.layers() {
        let input = layer.input_range();
        let mut outs = Vec::with_capacity(layer.width());
        for unit in &layer.units {
            let e = match unit {
                UnitSpec::Learnable { kind, znodes } => {
                    let zs: Vec<Expression> = znodes
                        .iter()
                        .map(|zn| {
                            let terms = w[zn.weights()]
                                .iter()
                                .enumerate()
                                .filter(|(_, &v)| v != 0.0)
                                .map(|(j, &v)| (v, acts[input.start + j].clone()))
                                .collect();
                            Expression::Sum(terms, w[zn.bias()])
                        })
                        .collect();
                    apply_kind(*kind, zs, theta_div)
                }
                UnitSpec::Copy { source, skip } => {
                    if sub.skips()[*skip] {
                        acts[input.start + source].clone()
                    } else {
                        Expression::Const(0.0)
                    }
                }
            };
            outs.push(e);
        }
        acts.truncate(layer.act_offset);
        acts.extend(outs);
    }
    acts.pop().unwrap_or(Expression::Const(0.0))
}

fn apply_kind(kind: ActivationKind, mut zs: Vec<Expression>, theta: f64) -> Expression {
    let z0 = zs.remove(0);
    let unary = |op| Expression::Unary(op, Box::new(z0.clone()));
    match kind {
        ActivationKind::Identity => z0,
        ActivationKind::Sin => unary(UnaryOp::Sin),
        ActivationKind::Cos => unary(UnaryOp::Cos),
        ActivationKind::Tanh => unary(UnaryOp::Tanh),
        ActivationKind::Arctan => unary(UnaryOp::Arctan),
        ActivationKind::Cube => unary(UnaryOp::Cube),
        ActivationKind::Multiply => Expression::Binary(BinaryOp::Mul, Box::new(z0), Box::new(zs.remove(0))),
        ActivationKind::Divide => {
            Expression::Binary(BinaryOp::Div { theta }, Box::new(z0), Box::new(zs.remove(0)))
        }
    }
}

/// Folds constants, flattens nested sums, merges equal terms and drops
/// coefficients with magnitude below `eps`.
pub fn simplify(expr: &Expression, eps: f64) -> Expression {
    match expr {
        Expression::Const(_) | Expression::Var(_) => expr.clone(),
        Expression::Unary(op, e) => {
            let inner = simplify(e, eps);
            match inner {
                Expression::Const(c) => Expression::Const(op.apply(c)),
                other => Expression::Unary(*op, Box::new(other)),
            }
        }
        Expression::Binary(op, a, b) => {
            let a = simplify(a, eps);
            let b = simplify(b, eps);
            match (op, a.as_const(), b.as_const()) {
                (BinaryOp::Mul, Some(x), Some(y)) => Expression::Const(x * y),
                (BinaryOp::Div { theta }, Some(x), Some(y)) => Expression::Const(protected_div(x, y, *theta)),
                (BinaryOp::Mul, Some(c), None) => simplify(&Expression::Sum(vec![(c, b)], 0.0), eps),
                (BinaryOp::Mul, None, Some(c)) => simplify(&Expression::Sum(vec![(c, a)], 0.0), eps),
                (BinaryOp::Div { theta }, None, Some(c)) => {
                    if c > *theta {
                        simplify(&Expression::Sum(vec![(1.0 / c, a)], 0.0), eps)
                    } else {
                        Expression::Const(0.0)
                    }
                }
                _ => Expression::Binary(*op, Box::new(a), Box::new(b)),
            }
        }
        Expression::Sum(terms, bias) => {
            let mut bias = *bias;
            let mut flat: Vec<(f64, Expression)> = Vec::new();
            for (w, e) in terms {
                match simplify(e, eps) {
                    Expression::Const(c) => bias += w * c,
                    Expression::Sum(inner, b) => {
                        bias += w * b;
                        flat.extend(inner.into_iter().map(|(v, t)| (w * v, t)));
                    }
                    other => flat.push((*w, other)),
                }
            }
            let mut merged: Vec<(f64, Expression)> = Vec::new();
            for (w, e) in flat {
                match merged.iter_mut().find(|(_, t)| *t == e) {
                    Some(slot) => slot.0 += w,
                    None => merged.push((w, e)),
                }
            }
            merged.retain(|(w, _)| w.abs() >= eps && *w != 0.0);
            if bias.abs() < eps {
                bias = 0.0;
            }
            match merged.len() {
                0 => Expression::Const(bias),
                1 if merged[0].0 == 1.0 && bias == 0.0 => merged.pop().expect("one term").1,
                _ => Expression::Sum(merged, bias),
            }
        }
    }
}

/// Coefficients `(c, b)` when the expression is `sum(c_i * x_i) + b`.
pub fn affine_coefficients(expr: &Expression, input_dim: usize) -> Option<(Vec<f64>, f64)> {
    let mut coefs = vec![0.0; input_dim];
    match simplify(expr, 0.0) {
        Expression::Const(c) => Some((coefs, c)),
        Expression::Var(i) => {
            coefs[i] = 1.0;
            Some((coefs, 0.0))
        }
        Expression::Sum(terms, bias) => {
            for (w, e) in terms {
                match e {
                    Expression::Var(i) => coefs[i] += w,
                    _ => return None,
                }
            }
            Some((coefs, bias))
        }
        _ => None,
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Style {
    Infix,
    Latex,
}

/// Six significant digits, shortest form.
fn num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{v:.5e}").parse().unwrap_or(v);
    let s = format!("{rounded}");
    if s.len() > 12 {
        format!("{rounded:.5e}")
    } else {
        s
    }
}

fn var_name(names: &[String], i: usize, style: Style) -> String {
    let raw = names.get(i).cloned().unwrap_or_else(|| format!("x{i}"));
    if style == Style::Infix {
        return raw;
    }
    const GREEK: [&str; 6] = ["theta", "kappa", "alpha", "beta", "omega", "phi"];
    let (head, tail) = match raw.split_once('_') {
        Some((h, t)) => (h.to_string(), Some(t.to_string())),
        None => (raw.clone(), None),
    };
    let head = if GREEK.contains(&head.as_str()) { format!("\\{head}") } else { head };
    match tail {
        Some(t) => format!("{head}_{{{t}}}"),
        None => head,
    }
}

fn needs_parens(e: &Expression) -> bool {
    match e {
        Expression::Sum(terms, bias) => terms.len() + usize::from(*bias != 0.0) > 1 || terms.iter().any(|t| t.0 < 0.0),
        Expression::Const(c) => *c < 0.0,
        _ => false,
    }
}

fn render_wrapped(e: &Expression, names: &[String], style: Style, out: &mut String) {
    if needs_parens(e) {
        out.push_str(if style == Style::Latex { "\\left(" } else { "(" });
        render(e, names, style, out);
        out.push_str(if style == Style::Latex { "\\right)" } else { ")" });
    } else {
        render(e, names, style, out);
    }
}

fn render(e: &Expression, names: &[String], style: Style, out: &mut String) {
    let times = if style == Style::Latex { " \\cdot " } else { "*" };
    match e {
        Expression::Const(c) => out.push_str(&num(*c)),
        Expression::Var(i) => out.push_str(&var_name(names, *i, style)),
        Expression::Unary(UnaryOp::Cube, inner) => {
            render_atom(inner, names, style, out);
            out.push_str(if style == Style::Latex { "^{3}" } else { "^3" });
        }
        Expression::Unary(op, inner) => {
            if style == Style::Latex {
                out.push_str(op.latex());
                out.push_str("\\left(");
                render(inner, names, style, out);
                out.push_str("\\right)");
            } else {
                let _ = write!(out, "{}(", op.name());
                render(inner, names, style, out);
                out.push(')');
            }
        }
        Expression::Binary(BinaryOp::Mul, a, b) => {
            render_wrapped(a, names, style, out);
            out.push_str(times);
            render_wrapped(b, names, style, out);
        }
        Expression::Binary(BinaryOp::Div { .. }, a, b) => {
            if style == Style::Latex {
                out.push_str("\\frac{");
                render(a, names, style, out);
                out.push_str("}{");
                render(b, names, style, out);
                out.push('}');
            } else {
                render_wrapped(a, names, style, out);
                out.push_str(" / ");
                render_wrapped(b, names, style, out);
            }
        }
        Expression::Sum(terms, bias) => {
            let mut first = true;
            for (w, t) in terms {
                let mag = w.abs();
                if first {
                    if *w < 0.0 {
                        out.push('-');
                    }
                } else {
                    out.push_str(if *w < 0.0 { " - " } else { " + " });
                }
                if mag != 1.0 {
                    out.push_str(&num(mag));
                    out.push_str(times);
                    render_wrapped(t, names, style, out);
                } else if *w < 0.0 {
                    render_wrapped(t, names, style, out);
                } else {
                    render(t, names, style, out);
                }
                first = false;
            }
            if *bias != 0.0 || first {
                if first {
                    out.push_str(&num(*bias));
                } else {
                    out.push_str(if *bias < 0.0 { " - " } else { " + " });
                    out.push_str(&num(bias.abs()));
                }
            }
        }
    }
}

fn render_atom(e: &Expression, names: &[String], style: Style, out: &mut String) {
    match e {
        Expression::Var(_) => render(e, names, style, out),
        Expression::Const(c) if *c >= 0.0 => render(e, names, style, out),
        _ => {
            out.push_str(if style == Style::Latex { "\\left(" } else { "(" });
            render(e, names, style, out);
            out.push_str(if style == Style::Latex { "\\right)" } else { ")" });
        }
    }
}
