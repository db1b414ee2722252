use std::collections::HashMap;

use super::{
    Component, Element, Name, Netlist, NodeId, NodeLabel, Prefix, SynthError, Tran, GROUND,
};
use crate::expr::Expr;
use crate::method::{CircuitGains, SolverMethod};
use crate::poly::QuadraticForm;
use crate::problem::{GradientSet, Problem, SparseRow};

/// Linear coefficients (and constant terms) below this magnitude are
/// treated as structural zeros: they would need resistor ratios beyond 10⁹.
pub const MIN_LINEAR_COEFF: f64 = 1e-9;

struct Builder {
    nodes: Vec<NodeLabel>,
    index: HashMap<NodeLabel, NodeId>,
    components: Vec<Component>,
}

impl Builder {
    fn node(&mut self, l: NodeLabel) -> NodeId {
        if let Some(&id) = self.index.get(&l) {
            return id;
        }
        let id = self.nodes.len() as NodeId;
        self.nodes.push(l);
        self.index.insert(l, id);
        id
    }

    fn push(&mut self, name: Name, element: Element) {
        self.components.push(Component { name, element });
    }

    fn r(&mut self, name: Name, pos: NodeId, neg: NodeId, ohms: f64) {
        self.push(name, Element::Resistor { pos, neg, ohms });
    }

    fn c(&mut self, name: Name, pos: NodeId, neg: NodeId, farads: f64) {
        self.push(name, Element::Capacitor { pos, neg, farads });
    }

    fn x(&mut self, name: Name, inm: NodeId, out: NodeId) {
        self.push(
            name,
            Element::OpAmp {
                inm,
                inp: GROUND,
                out,
            },
        );
    }

    fn b(&mut self, name: Name, pos: NodeId, expr: Expr) {
        self.push(
            name,
            Element::Behavioral {
                pos,
                neg: GROUND,
                expr: Box::new(expr),
            },
        );
    }
}

/// Which kind of constraint a stage realizes; selects names and labels.
#[derive(Clone, Copy)]
enum Kind {
    Ineq,
    Eq,
}

struct StageNames {
    opamp: Prefix,
    lin: Prefix,
    mono_src: Prefix,
    mono_r: Prefix,
    constant: Prefix,
    fb_r: Prefix,
    fb_c: Prefix,
}

impl Kind {
    fn names(self) -> StageNames {
        match self {
            Kind::Ineq => StageNames {
                opamp: Prefix::Xc,
                lin: Prefix::Rc,
                mono_src: Prefix::Btc,
                mono_r: Prefix::Rct,
                constant: Prefix::Rcc,
                fb_r: Prefix::Rrc,
                fb_c: Prefix::Crc,
            },
            Kind::Eq => StageNames {
                opamp: Prefix::Xe,
                lin: Prefix::Re,
                mono_src: Prefix::Bte,
                mono_r: Prefix::Rte,
                constant: Prefix::Rec,
                fb_r: Prefix::Rre,
                fb_c: Prefix::Cre,
            },
        }
    }

    fn junction(self, i: u32) -> NodeLabel {
        match self {
            Kind::Ineq => NodeLabel::C(i),
            Kind::Eq => NodeLabel::Ce(i),
        }
    }

    fn output(self, i: u32) -> NodeLabel {
        match self {
            Kind::Ineq => NodeLabel::Z(i),
            Kind::Eq => NodeLabel::W(i),
        }
    }

    fn midpoint(self, i: u32) -> NodeLabel {
        match self {
            Kind::Ineq => NodeLabel::Zr(i),
            Kind::Eq => NodeLabel::Wr(i),
        }
    }

    fn monomial(self, i: u32, t: u32) -> NodeLabel {
        match self {
            Kind::Ineq => NodeLabel::Tc(i, t),
            Kind::Eq => NodeLabel::Te(i, t),
        }
    }
}

struct Refs {
    pos: bool,
    neg: bool,
}

/// One summing stage: the constraint's terms enter the junction through
/// input resistors scaled by `R_o`; the method picks the feedback element.
/// The stage output is `-(κp·g + ∫κI·g)` with the terms the method keeps.
fn constraint_stage(
    b: &mut Builder,
    kind: Kind,
    i: usize,
    form: &QuadraticForm,
    method: SolverMethod,
    gains: &CircuitGains,
    refs: &mut Refs,
) {
    let nm = kind.names();
    let iu = i as u32;
    let junction = b.node(kind.junction(iu));
    let out = b.node(kind.output(iu));
    b.x(Name::one(nm.opamp, i), junction, out);
    for (&k, &c) in &form.linear {
        if c.abs() < MIN_LINEAR_COEFF {
            continue;
        }
        let src = if c > 0.0 {
            b.node(NodeLabel::V(k as u32))
        } else {
            b.node(NodeLabel::Vn(k as u32))
        };
        b.r(Name::two(nm.lin, i, k), src, junction, gains.r_o / c.abs());
    }
    for (t, (&(p, q), &c)) in form.quad.iter().enumerate() {
        let node = b.node(kind.monomial(iu, t as u32));
        let vp = b.node(NodeLabel::V(p as u32)) as usize;
        let vq = b.node(NodeLabel::V(q as u32)) as usize;
        let expr = if p == q {
            Expr::Prod(vec![Expr::Const(c), Expr::pow(Expr::Var(vp), 2)])
        } else {
            Expr::Prod(vec![Expr::Const(c), Expr::Var(vp), Expr::Var(vq)])
        };
        b.b(Name::two(nm.mono_src, i, t), node, expr);
        b.r(Name::two(nm.mono_r, i, t), node, junction, gains.r_o);
    }
    let c0 = form.constant;
    if c0.abs() >= MIN_LINEAR_COEFF {
        let src = if c0 > 0.0 {
            refs.pos = true;
            b.node(NodeLabel::Vref)
        } else {
            refs.neg = true;
            b.node(NodeLabel::Vrefn)
        };
        b.r(
            Name::one(nm.constant, i),
            src,
            junction,
            gains.r_o / c0.abs(),
        );
    }
    match method {
        SolverMethod::Penalty => b.r(Name::one(nm.fb_r, i), junction, out, gains.r_rho),
        SolverMethod::PrimalDual => b.c(Name::one(nm.fb_c, i), junction, out, gains.c_rho),
        SolverMethod::AugmentedLagrangian => {
            let mid = b.node(kind.midpoint(iu));
            b.r(Name::one(nm.fb_r, i), junction, mid, gains.r_rho);
            b.c(Name::one(nm.fb_c, i), mid, out, gains.c_rho);
        }
    }
}

/// Unity-gain inverting stage `out = -input`.
fn inverter(
    b: &mut Builder,
    names: (Prefix, Prefix, Prefix),
    i: usize,
    input: NodeId,
    junction: NodeId,
    out: NodeId,
    r: f64,
) {
    b.x(Name::one(names.0, i), junction, out);
    b.r(Name::one(names.1, i), input, junction, r);
    b.r(Name::one(names.2, i), junction, out, r);
}

fn constant_entry(e: &Expr) -> Option<f64> {
    e.as_const()
}

fn has_const_entry(row: &SparseRow, pred: impl Fn(f64) -> bool) -> bool {
    row.entries
        .iter()
        .filter_map(|(_, e)| constant_entry(e))
        .any(|a| a.abs() >= MIN_LINEAR_COEFF && pred(a))
}

fn form_of(e: &Expr, name: &str) -> Result<QuadraticForm, SynthError> {
    QuadraticForm::from_expr(e).map_err(|d| SynthError::Degree {
        name: name.to_string(),
        degree: d.map_or_else(|| "non-polynomial".to_string(), |d| d.to_string()),
    })
}

/// Builds the circuit for `p` under `method`.
///
/// Per variable: an inverting integrator (`R_γ`, `C_γ`) whose output is
/// `-x_k`, a unity inverter giving `x_k`, and a behavioral source for
/// `-∂f/∂x_k` injected through `R_γ`. Per constraint: a summing stage with
/// method-specific feedback, a diode clipper for inequalities, and one
/// injection path per gradient entry, either a resistor `R_γ/|a|` for a
/// constant partial `a` or a behavioral multiplier for a variable one.
pub fn synthesize(
    p: &Problem,
    gs: &GradientSet,
    method: SolverMethod,
    gains: CircuitGains,
    tran: Option<Tran>,
) -> Result<Netlist, SynthError> {
    gains.validate()?;
    let tran = tran.unwrap_or_else(|| Tran::for_gains(&gains));
    if !(tran.step > 0.0 && tran.stop > 0.0 && tran.step <= tran.stop && tran.stop.is_finite()) {
        return Err(SynthError::Tran {
            step: tran.step,
            stop: tran.stop,
        });
    }
    let (n, m, pe) = (p.n_vars(), p.n_ineq(), p.n_eq());
    if gs.grad_f.len() != n {
        return Err(SynthError::Mismatch {
            what: "objective gradient",
        });
    }
    if gs.grad_g.len() != m || gs.grad_h.len() != pe {
        return Err(SynthError::Mismatch {
            what: "constraint rows",
        });
    }
    let mut b = Builder {
        nodes: vec![NodeLabel::Ground],
        index: HashMap::from([(NodeLabel::Ground, GROUND)]),
        components: Vec::with_capacity(capacity_hint(p, gs)),
    };
    let mut refs = Refs {
        pos: false,
        neg: false,
    };

    for k in 0..n {
        let ku = k as u32;
        let s = b.node(NodeLabel::S(ku));
        let vn = b.node(NodeLabel::Vn(ku));
        let iv = b.node(NodeLabel::Iv(ku));
        let v = b.node(NodeLabel::V(ku));
        let gf = b.node(NodeLabel::Gf(ku));
        b.x(Name::one(Prefix::Xi, k), s, vn);
        b.c(Name::one(Prefix::Cg, k), s, vn, gains.c_gamma);
        inverter(
            &mut b,
            (Prefix::Xv, Prefix::Rvi, Prefix::Rvf),
            k,
            vn,
            iv,
            v,
            gains.r_o,
        );
        let expr = gradient_source(&mut b, &gs.grad_f[k], -1.0, None);
        b.b(Name::one(Prefix::Bgf, k), gf, expr);
        b.r(Name::one(Prefix::Rg, k), gf, s, gains.r_gamma);
    }

    for i in 0..m {
        let form = form_of(&p.inequalities[i], &p.ineq_names[i])?;
        constraint_stage(&mut b, Kind::Ineq, i, &form, method, &gains, &mut refs);
        drop(form);
        let iu = i as u32;
        let z = b.node(NodeLabel::Z(iu));
        let d = b.node(NodeLabel::D(iu));
        let lam = b.node(NodeLabel::Lam(iu));
        b.x(Name::one(Prefix::Xd, i), d, lam);
        b.r(Name::one(Prefix::Rli, i), z, d, gains.r_lim);
        b.r(Name::one(Prefix::Rlf, i), d, lam, gains.r_lim);
        b.push(
            Name::one(Prefix::D, i),
            Element::Diode {
                anode: lam,
                cathode: d,
            },
        );
        if has_const_entry(&gs.grad_g[i], |a| a > 0.0) {
            let ln = b.node(NodeLabel::Ln(iu));
            let lamn = b.node(NodeLabel::Lamn(iu));
            inverter(
                &mut b,
                (Prefix::Xl, Prefix::Rni, Prefix::Rnf),
                i,
                lam,
                ln,
                lamn,
                gains.r_o,
            );
        }
    }

    for j in 0..pe {
        let form = form_of(&p.equalities[j], &p.eq_names[j])?;
        constraint_stage(&mut b, Kind::Eq, j, &form, method, &gains, &mut refs);
        drop(form);
        if has_const_entry(&gs.grad_h[j], |a| a < 0.0) {
            let ju = j as u32;
            let w = b.node(NodeLabel::W(ju));
            let mn = b.node(NodeLabel::Mn(ju));
            let mu = b.node(NodeLabel::Mu(ju));
            inverter(
                &mut b,
                (Prefix::Xm, Prefix::Rmi, Prefix::Rmf),
                j,
                w,
                mn,
                mu,
                gains.r_o,
            );
        }
    }

    // Each gradient path injects -λ_i ∂g_i/∂x_k (resp. -μ_j ∂h_j/∂x_k)
    // into s<k>; lam<i> carries λ_i and w<j> carries -μ_j.
    for (i, row) in gs.grad_g.iter().enumerate() {
        let iu = i as u32;
        for (k, e) in &row.entries {
            let s = b.node(NodeLabel::S(*k as u32));
            match constant_entry(e) {
                Some(a) if a.abs() < MIN_LINEAR_COEFF => {}
                Some(a) => {
                    let src = if a > 0.0 {
                        NodeLabel::Lamn(iu)
                    } else {
                        NodeLabel::Lam(iu)
                    };
                    let src = b.node(src);
                    b.r(
                        Name::two(Prefix::Rfg, i, *k),
                        src,
                        s,
                        gains.r_gamma / a.abs(),
                    );
                }
                None => {
                    let lam = b.node(NodeLabel::Lam(iu));
                    let out = b.node(NodeLabel::Fg(iu, *k as u32));
                    let expr = gradient_source(&mut b, e, -1.0, Some(lam));
                    b.b(Name::two(Prefix::Bfg, i, *k), out, expr);
                    b.r(Name::two(Prefix::Rfg, i, *k), out, s, gains.r_gamma);
                }
            }
        }
    }
    for (j, row) in gs.grad_h.iter().enumerate() {
        let ju = j as u32;
        for (k, e) in &row.entries {
            let s = b.node(NodeLabel::S(*k as u32));
            match constant_entry(e) {
                Some(a) if a.abs() < MIN_LINEAR_COEFF => {}
                Some(a) => {
                    let src = if a > 0.0 {
                        NodeLabel::W(ju)
                    } else {
                        NodeLabel::Mu(ju)
                    };
                    let src = b.node(src);
                    b.r(
                        Name::two(Prefix::Rfh, j, *k),
                        src,
                        s,
                        gains.r_gamma / a.abs(),
                    );
                }
                None => {
                    let w = b.node(NodeLabel::W(ju));
                    let out = b.node(NodeLabel::Fh(ju, *k as u32));
                    let expr = gradient_source(&mut b, e, 1.0, Some(w));
                    b.b(Name::two(Prefix::Bfh, j, *k), out, expr);
                    b.r(Name::two(Prefix::Rfh, j, *k), out, s, gains.r_gamma);
                }
            }
        }
    }

    if refs.pos {
        let n = b.node(NodeLabel::Vref);
        b.b(Name::bare(Prefix::Bref), n, Expr::Const(1.0));
    }
    if refs.neg {
        let n = b.node(NodeLabel::Vrefn);
        b.b(Name::bare(Prefix::Brefn), n, Expr::Const(-1.0));
    }

    let Builder {
        nodes, components, ..
    } = b;
    Ok(Netlist {
        title: format!("kktsynth {method} circuit: N={n} M={m} P={pe}"),
        method,
        gains,
        var_names: p.var_names.clone(),
        ineq_names: p.ineq_names.clone(),
        eq_names: p.eq_names.clone(),
        nodes,
        components,
        tran,
    })
}

// Close upper estimate of the component count so the list is allocated
// once: each gradient entry stands for a stage input plus an injection.
fn capacity_hint(p: &Problem, gs: &GradientSet) -> usize {
    let entries: usize = gs
        .grad_g
        .iter()
        .chain(&gs.grad_h)
        .map(|r| r.entries.len())
        .sum();
    7 * p.n_vars() + 12 * (p.n_ineq() + p.n_eq()) + 2 * entries
}

/// `sign * factor * partial`, with problem variables rewritten as `v<k>`
/// node voltages and `factor` an optional multiplier node.
fn gradient_source(b: &mut Builder, partial: &Expr, sign: f64, factor: Option<NodeId>) -> Expr {
    let vars = partial.variables();
    let ids: HashMap<usize, usize> = vars
        .iter()
        .map(|&k| (k, b.node(NodeLabel::V(k as u32)) as usize))
        .collect();
    let mapped = partial.map_vars(&|k| ids[&k]);
    let mut items = Vec::with_capacity(3);
    if sign != 1.0 {
        items.push(Expr::Const(sign));
    }
    if let Some(f) = factor {
        items.push(Expr::Var(f as usize));
    }
    if items.is_empty() {
        return mapped.simplify();
    }
    items.push(mapped);
    Expr::Prod(items).simplify()
}
