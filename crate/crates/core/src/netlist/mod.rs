//! Analog netlists realizing the gradient-flow dynamics.
//!
//! A netlist is an ordered list of components over a table of labelled
//! nodes. Components store their name as a `(prefix, index, index)` triple
//! and their terminals as [`NodeId`]s so that instances with tens of
//! millions of resistors stay compact; text is produced only on emission.
//!
//! Node naming (indices are 1-based in labels):
//!
//! | label        | meaning                                               |
//! |--------------|-------------------------------------------------------|
//! | `v<k>`       | variable `x_k`                                        |
//! | `vn<k>`      | `-x_k`, integrator output                             |
//! | `s<k>`       | integrator summing junction                           |
//! | `iv<k>`      | variable inverter junction                            |
//! | `gf<k>`      | `-∂f/∂x_k`                                            |
//! | `c<i>`       | inequality stage junction                             |
//! | `z<i>`       | inequality stage output, `-(λ before clipping)`       |
//! | `zr<i>`      | midpoint of the series R-C feedback                   |
//! | `d<i>`       | clipper junction                                      |
//! | `lam<i>`     | `λ_i`                                                 |
//! | `lamn<i>`    | `-λ_i`                                                |
//! | `ln<i>`      | multiplier inverter junction                          |
//! | `ce<j>`      | equality stage junction                               |
//! | `w<j>`       | `-μ_j`                                                |
//! | `wr<j>`      | midpoint of the series R-C feedback                   |
//! | `mu<j>`      | `μ_j`                                                 |
//! | `mn<j>`      | multiplier inverter junction                          |
//! | `tc<i>_<t>`  | `t`-th quadratic monomial of inequality `i`           |
//! | `te<j>_<t>`  | `t`-th quadratic monomial of equality `j`             |
//! | `fg<i>_<k>`  | `-λ_i ∂g_i/∂x_k` for a variable partial               |
//! | `fh<j>_<k>`  | `-μ_j ∂h_j/∂x_k` for a variable partial               |
//! | `vref`/`vrefn` | +1 V and -1 V references                            |

mod census;
mod emit;
mod ideal;
mod synth;

use std::fmt;

use thiserror::Error;

use crate::expr::Expr;
use crate::method::{CircuitGains, MethodError, SolverMethod};

pub use census::{component_census, expected_census, Census};
pub use emit::{emit_spice, emit_spice_string, format_value};
pub use ideal::{IdealCircuit, IdealError};
pub use synth::{synthesize, MIN_LINEAR_COEFF};

pub type NodeId = u32;

pub const GROUND: NodeId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeLabel {
    Ground,
    V(u32),
    Vn(u32),
    S(u32),
    Iv(u32),
    Gf(u32),
    C(u32),
    Z(u32),
    Zr(u32),
    D(u32),
    Lam(u32),
    Lamn(u32),
    Ln(u32),
    Ce(u32),
    W(u32),
    Wr(u32),
    Mu(u32),
    Mn(u32),
    Tc(u32, u32),
    Te(u32, u32),
    Fg(u32, u32),
    Fh(u32, u32),
    Vref,
    Vrefn,
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use NodeLabel::*;
        let (p, a, b) = match *self {
            Ground => return f.write_str("0"),
            Vref => return f.write_str("vref"),
            Vrefn => return f.write_str("vrefn"),
            V(a) => ("v", a, None),
            Vn(a) => ("vn", a, None),
            S(a) => ("s", a, None),
            Iv(a) => ("iv", a, None),
            Gf(a) => ("gf", a, None),
            C(a) => ("c", a, None),
            Z(a) => ("z", a, None),
            Zr(a) => ("zr", a, None),
            D(a) => ("d", a, None),
            Lam(a) => ("lam", a, None),
            Lamn(a) => ("lamn", a, None),
            Ln(a) => ("ln", a, None),
            Ce(a) => ("ce", a, None),
            W(a) => ("w", a, None),
            Wr(a) => ("wr", a, None),
            Mu(a) => ("mu", a, None),
            Mn(a) => ("mn", a, None),
            Tc(a, b) => ("tc", a, Some(b)),
            Te(a, b) => ("te", a, Some(b)),
            Fg(a, b) => ("fg", a, Some(b)),
            Fh(a, b) => ("fh", a, Some(b)),
        };
        match b {
            Some(b) => write!(f, "{p}{}_{}", a + 1, b + 1),
            None => write!(f, "{p}{}", a + 1),
        }
    }
}

/// Component name prefixes. The first letter is the SPICE element letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Prefix {
    /// Integrator op-amp `XI<k>`.
    Xi,
    /// Integrating capacitor `Cg<k>`.
    Cg,
    /// Variable inverter op-amp and its resistors.
    Xv,
    Rvi,
    Rvf,
    /// Objective gradient source and its injection resistor.
    Bgf,
    Rg,
    /// Inequality stage op-amp.
    Xc,
    /// Inequality linear term `Rc<i>_<k>`.
    Rc,
    /// Inequality quadratic monomial source and resistor.
    Btc,
    Rct,
    /// Inequality constant term resistor.
    Rcc,
    /// Inequality feedback resistor and capacitor.
    Rrc,
    Crc,
    /// Clipper op-amp, input and feedback resistors, diode.
    Xd,
    Rli,
    Rlf,
    D,
    /// Multiplier inverter for `-λ_i`.
    Xl,
    Rni,
    Rnf,
    /// Equality stage counterparts.
    Xe,
    Re,
    Bte,
    Rte,
    Rec,
    Rre,
    Cre,
    /// Multiplier inverter for `μ_j`.
    Xm,
    Rmi,
    Rmf,
    /// Constraint gradient injection (resistor) and variable partial source.
    Rfg,
    Bfg,
    Rfh,
    Bfh,
    /// Reference sources.
    Bref,
    Brefn,
}

impl Prefix {
    pub fn as_str(self) -> &'static str {
        use Prefix::*;
        match self {
            Xi => "XI",
            Cg => "Cg",
            Xv => "XV",
            Rvi => "Rvi",
            Rvf => "Rvf",
            Bgf => "Bgf",
            Rg => "Rg",
            Xc => "XC",
            Rc => "Rc",
            Btc => "Btc",
            Rct => "Rct",
            Rcc => "Rcc",
            Rrc => "Rrc",
            Crc => "Crc",
            Xd => "XD",
            Rli => "Rli",
            Rlf => "Rlf",
            D => "D",
            Xl => "XL",
            Rni => "Rni",
            Rnf => "Rnf",
            Xe => "XE",
            Re => "Re",
            Bte => "Bte",
            Rte => "Rte",
            Rec => "Rec",
            Rre => "Rre",
            Cre => "Cre",
            Xm => "XM",
            Rmi => "Rmi",
            Rmf => "Rmf",
            Rfg => "Rfg",
            Bfg => "Bfg",
            Rfh => "Rfh",
            Bfh => "Bfh",
            Bref => "Bref",
            Brefn => "Brefn",
        }
    }
}

const NO_INDEX: u32 = u32::MAX;

/// Generated component name: prefix plus up to two 0-based indices, shown
/// 1-based and joined by `_`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Name {
    pub prefix: Prefix,
    a: u32,
    b: u32,
}

impl Name {
    pub fn bare(prefix: Prefix) -> Name {
        Name {
            prefix,
            a: NO_INDEX,
            b: NO_INDEX,
        }
    }

    pub fn one(prefix: Prefix, a: usize) -> Name {
        Name {
            prefix,
            a: a as u32,
            b: NO_INDEX,
        }
    }

    pub fn two(prefix: Prefix, a: usize, b: usize) -> Name {
        Name {
            prefix,
            a: a as u32,
            b: b as u32,
        }
    }

    /// First index, if any.
    pub fn index(&self) -> Option<usize> {
        (self.a != NO_INDEX).then_some(self.a as usize)
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix.as_str())?;
        if self.a != NO_INDEX {
            write!(f, "{}", self.a + 1)?;
        }
        if self.b != NO_INDEX {
            write!(f, "_{}", self.b + 1)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Resistor {
        pos: NodeId,
        neg: NodeId,
        ohms: f64,
    },
    Capacitor {
        pos: NodeId,
        neg: NodeId,
        farads: f64,
    },
    Diode {
        anode: NodeId,
        cathode: NodeId,
    },
    OpAmp {
        inm: NodeId,
        inp: NodeId,
        out: NodeId,
    },
    /// Voltage source `V(pos) - V(neg) = expr`, where `Var(id)` in the
    /// expression is the voltage of node `id`.
    Behavioral {
        pos: NodeId,
        neg: NodeId,
        expr: Box<Expr>,
    },
}

impl Element {
    pub fn terminals(&self) -> Vec<NodeId> {
        match *self {
            Element::Resistor { pos, neg, .. }
            | Element::Capacitor { pos, neg, .. }
            | Element::Behavioral { pos, neg, .. } => vec![pos, neg],
            Element::Diode { anode, cathode } => vec![anode, cathode],
            Element::OpAmp { inm, inp, out } => vec![inm, inp, out],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub name: Name,
    pub element: Element,
}

/// Transient analysis window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tran {
    pub step: f64,
    pub stop: f64,
}

impl Tran {
    /// Twenty primal time constants, sampled 10⁴ times.
    pub fn for_gains(gains: &CircuitGains) -> Tran {
        let stop = 20.0 / gains.gamma();
        Tran {
            step: stop / 1e4,
            stop,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("constraint `{name}` has degree {degree}; synthesis supports degree 2 or less")]
    Degree { name: String, degree: String },
    #[error(transparent)]
    Gain(#[from] MethodError),
    #[error("invalid transient window: step {step}, stop {stop}")]
    Tran { step: f64, stop: f64 },
    #[error("gradient set does not match the problem ({what})")]
    Mismatch { what: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Netlist {
    pub title: String,
    pub method: SolverMethod,
    pub gains: CircuitGains,
    pub var_names: Vec<String>,
    pub ineq_names: Vec<String>,
    pub eq_names: Vec<String>,
    pub(crate) nodes: Vec<NodeLabel>,
    pub components: Vec<Component>,
    pub tran: Tran,
}

impl Netlist {
    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq_names.len()
    }

    pub fn n_eq(&self) -> usize {
        self.eq_names.len()
    }

    /// Node count including ground.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn label(&self, id: NodeId) -> NodeLabel {
        self.nodes[id as usize]
    }

    pub fn find_node(&self, label: NodeLabel) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|l| *l == label)
            .map(|i| i as NodeId)
    }

    pub fn labels(&self) -> impl Iterator<Item = (NodeId, NodeLabel)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, l)| (i as NodeId, *l))
    }

    /// Nodes whose voltage is an optimization quantity, with that quantity.
    pub fn provenance(&self) -> Vec<(NodeLabel, String)> {
        let mut out = Vec::new();
        for &l in &self.nodes {
            let sym = match l {
                NodeLabel::V(k) => self.var_names[k as usize].clone(),
                NodeLabel::Vn(k) => format!("-{}", self.var_names[k as usize]),
                NodeLabel::Lam(i) => format!("lambda[{}]", self.ineq_names[i as usize]),
                NodeLabel::Lamn(i) => format!("-lambda[{}]", self.ineq_names[i as usize]),
                NodeLabel::W(j) => format!("-mu[{}]", self.eq_names[j as usize]),
                NodeLabel::Mu(j) => format!("mu[{}]", self.eq_names[j as usize]),
                _ => continue,
            };
            out.push((l, sym));
        }
        out
    }

    /// Nodes touching a capacitor, in order of first appearance.
    pub fn capacitor_nodes(&self) -> Vec<NodeId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut out = Vec::new();
        for c in &self.components {
            if let Element::Capacitor { pos, neg, .. } = c.element {
                for n in [pos, neg] {
                    if n != GROUND && !seen[n as usize] {
                        seen[n as usize] = true;
                        out.push(n);
                    }
                }
            }
        }
        out
    }

    /// The `v<k>` nodes in variable order.
    pub fn variable_nodes(&self) -> Vec<NodeId> {
        let mut out: Vec<(u32, NodeId)> = self
            .labels()
            .filter_map(|(id, l)| match l {
                NodeLabel::V(k) => Some((k, id)),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out.into_iter().map(|(_, id)| id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_names_are_one_based() {
        assert_eq!(NodeLabel::V(0).to_string(), "v1");
        assert_eq!(NodeLabel::Tc(1, 2).to_string(), "tc2_3");
        assert_eq!(NodeLabel::Ground.to_string(), "0");
        assert_eq!(Name::one(Prefix::Rg, 0).to_string(), "Rg1");
        assert_eq!(Name::two(Prefix::Rc, 3, 9).to_string(), "Rc4_10");
        assert_eq!(Name::bare(Prefix::Bref).to_string(), "Bref");
    }

    #[test]
    fn component_is_compact() {
        assert!(
            std::mem::size_of::<Component>() <= 40,
            "{}",
            std::mem::size_of::<Component>()
        );
    }
}
