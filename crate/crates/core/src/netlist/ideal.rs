//! Reduction of a netlist back to an ODE under ideal-element rules.
//!
//! Every op-amp must have its non-inverting input grounded, so its
//! inverting input is a virtual ground drawing no current (nullor model).
//! The elements between that junction and the output form the feedback
//! network, recognized as one of:
//!
//! * resistor `R_f`: `V_out = -R_f·I`
//! * capacitor: `V_out = -V_C`, `dV_C/dt = I/C`
//! * resistor then capacitor in series: `V_out = -R_f·I - V_C`
//! * resistor in parallel with a diode pointing into the junction:
//!   `V_out = min(0, -R_f·I)` (ideal diode)
//!
//! where `I` is the current the input resistors push into the junction.
//! Behavioral sources are evaluated directly. Capacitor voltages
//! `V(pos) - V(neg)` are the states; the integrating capacitor `Cg<k>` is
//! state `k`, and the dual capacitors follow in inequality-then-equality
//! order, matching the dynamical-system layout.

use thiserror::Error;

use super::{Element, Netlist, NodeId, Prefix, GROUND};
use crate::expr::{EvalError, Expr};
use crate::sim::OdeSystem;

#[derive(Debug, Error, PartialEq)]
pub enum IdealError {
    #[error("op-amp {0} does not have a grounded non-inverting input")]
    Floating(String),
    #[error("node {0} is driven by more than one source")]
    MultipleDrivers(String),
    #[error("stage {stage}: unrecognized feedback network ({detail})")]
    Feedback { stage: String, detail: String },
    #[error("node {0} is not driven by anything")]
    Undriven(String),
    #[error("dependency cycle through node {0}")]
    Cycle(String),
    #[error("capacitor {0} is not part of any integrating feedback path")]
    StrayCapacitor(String),
    #[error("capacitor {0} has no corresponding state")]
    UnmappedCapacitor(String),
}

#[derive(Debug, Clone)]
enum Feedback {
    Resistor(f64),
    Capacitor { cap: usize },
    SeriesRc { r: f64, cap: usize },
    Clamp(f64),
}

#[derive(Debug, Clone)]
struct Stage {
    inputs: Vec<(NodeId, f64)>,
    feedback: Feedback,
}

#[derive(Debug, Clone)]
enum Driver {
    Ground,
    VirtualGround,
    Source(Expr),
    Stage(usize),
    /// `V = V(out) + V_C` for the midpoint of a series R-C feedback.
    Midpoint {
        out: NodeId,
        cap: usize,
    },
}

#[derive(Debug, Clone)]
struct Cap {
    farads: f64,
    state: usize,
    /// +1 when `pos` is the end the feedback current enters.
    sign: f64,
}

/// ODE obtained from a netlist by the ideal rules above.
#[derive(Debug, Clone)]
pub struct IdealCircuit {
    drivers: Vec<Driver>,
    stages: Vec<Stage>,
    caps: Vec<Cap>,
    order: Vec<NodeId>,
    n_primal: usize,
    dim: usize,
    gamma: f64,
}

fn state_index(nl: &Netlist, prefix: Prefix, idx: usize) -> Option<usize> {
    let (n, m) = (nl.n_vars(), nl.n_ineq());
    match prefix {
        Prefix::Cg => Some(idx),
        Prefix::Crc => Some(n + idx),
        Prefix::Cre => Some(n + m + idx),
        _ => None,
    }
}

impl IdealCircuit {
    pub fn from_netlist(nl: &Netlist) -> Result<IdealCircuit, IdealError> {
        let nn = nl.node_count();
        let name_of = |id: NodeId| nl.label(id).to_string();
        let mut attached: Vec<Vec<usize>> = vec![Vec::new(); nn];
        for (ci, c) in nl.components.iter().enumerate() {
            for t in c.element.terminals() {
                attached[t as usize].push(ci);
            }
        }
        let mut drivers: Vec<Option<Driver>> = vec![None; nn];
        drivers[GROUND as usize] = Some(Driver::Ground);
        let set = |drivers: &mut Vec<Option<Driver>>, node: NodeId, d: Driver| {
            if drivers[node as usize].is_some() {
                return Err(IdealError::MultipleDrivers(name_of(node)));
            }
            drivers[node as usize] = Some(d);
            Ok(())
        };

        let mut caps: Vec<Option<Cap>> = vec![None; nl.components.len()];
        let mut cap_ids: Vec<usize> = Vec::new();
        let mut stages = Vec::new();
        let mut consumed = vec![false; nl.components.len()];

        for (ci, c) in nl.components.iter().enumerate() {
            match &c.element {
                Element::Behavioral { pos, neg, expr } => {
                    if *neg != GROUND {
                        return Err(IdealError::Feedback {
                            stage: c.name.to_string(),
                            detail: "behavioral source not referenced to ground".into(),
                        });
                    }
                    set(&mut drivers, *pos, Driver::Source((**expr).clone()))?;
                    consumed[ci] = true;
                }
                Element::OpAmp { inm, inp, out } => {
                    if *inp != GROUND {
                        return Err(IdealError::Floating(c.name.to_string()));
                    }
                    consumed[ci] = true;
                    let (j, o) = (*inm, *out);
                    set(&mut drivers, j, Driver::VirtualGround)?;
                    let mut inputs = Vec::new();
                    let mut fb_r = None;
                    let mut fb_c = None;
                    let mut fb_d = false;
                    let mut series: Option<(f64, NodeId)> = None;
                    let stage_name = c.name.to_string();
                    let bad = |detail: String| IdealError::Feedback {
                        stage: stage_name.clone(),
                        detail,
                    };
                    for &ei in &attached[j as usize] {
                        if ei == ci {
                            continue;
                        }
                        let e = &nl.components[ei];
                        let ends = e.element.terminals();
                        let other = if ends[0] == j { ends[1] } else { ends[0] };
                        match e.element {
                            Element::Resistor { ohms, .. } if other == o => {
                                fb_r = Some(ohms);
                            }
                            Element::Capacitor { pos, farads, .. } if other == o => {
                                fb_c = Some((ei, farads, if pos == j { 1.0 } else { -1.0 }));
                            }
                            Element::Diode { anode, cathode } if anode == o && cathode == j => {
                                fb_d = true
                            }
                            Element::Resistor { ohms, .. } => {
                                // A midpoint touched only by this resistor and a
                                // capacitor to the output is a series R-C.
                                let mid = &attached[other as usize];
                                let cap_to_out = mid.iter().find(|&&k| {
                                    matches!(nl.components[k].element, Element::Capacitor { pos, neg, .. }
                                        if (pos == other && neg == o) || (neg == other && pos == o))
                                });
                                if mid.len() == 2 && cap_to_out.is_some() {
                                    series = Some((ohms, other));
                                } else {
                                    inputs.push((other, 1.0 / ohms));
                                }
                            }
                            _ => return Err(bad(format!("element {} at the junction", e.name))),
                        }
                        consumed[ei] = true;
                    }
                    let mut register_cap = |ei: usize,
                                            farads: f64,
                                            sign: f64|
                     -> Result<usize, IdealError> {
                        let comp = &nl.components[ei];
                        let state = comp
                            .name
                            .index()
                            .and_then(|i| state_index(nl, comp.name.prefix, i))
                            .ok_or_else(|| IdealError::UnmappedCapacitor(comp.name.to_string()))?;
                        caps[ei] = Some(Cap {
                            farads,
                            state,
                            sign,
                        });
                        cap_ids.push(ei);
                        consumed[ei] = true;
                        Ok(ei)
                    };
                    let feedback = match (fb_r, fb_c, fb_d, series) {
                        (Some(r), None, false, None) => Feedback::Resistor(r),
                        (None, Some((ei, f, s)), false, None) => Feedback::Capacitor {
                            cap: register_cap(ei, f, s)?,
                        },
                        (Some(r), None, true, None) => Feedback::Clamp(r),
                        (None, None, false, Some((r, mid))) => {
                            let ei = attached[mid as usize]
                                .iter()
                                .copied()
                                .find(|&k| {
                                    matches!(nl.components[k].element, Element::Capacitor { .. })
                                })
                                .expect("checked above");
                            let Element::Capacitor { pos, farads, .. } = nl.components[ei].element
                            else {
                                unreachable!()
                            };
                            let cap =
                                register_cap(ei, farads, if pos == mid { 1.0 } else { -1.0 })?;
                            set(&mut drivers, mid, Driver::Midpoint { out: o, cap })?;
                            Feedback::SeriesRc { r, cap }
                        }
                        _ => {
                            return Err(bad(format!(
                                "resistor {}, capacitor {}, diode {}, series {}",
                                fb_r.is_some(),
                                fb_c.is_some(),
                                fb_d,
                                series.is_some()
                            )))
                        }
                    };
                    set(&mut drivers, o, Driver::Stage(stages.len()))?;
                    stages.push(Stage { inputs, feedback });
                }
                _ => {}
            }
        }
        for (ci, c) in nl.components.iter().enumerate() {
            if !consumed[ci] {
                if let Element::Capacitor { .. } = c.element {
                    return Err(IdealError::StrayCapacitor(c.name.to_string()));
                }
                // A resistor that is not part of any stage carries no
                // current in the ideal model only if it dangles; reject it.
                return Err(IdealError::Feedback {
                    stage: c.name.to_string(),
                    detail: "element outside every op-amp stage".into(),
                });
            }
        }
        let drivers: Vec<Driver> = drivers
            .into_iter()
            .enumerate()
            .map(|(i, d)| d.ok_or_else(|| IdealError::Undriven(name_of(i as NodeId))))
            .collect::<Result<_, _>>()?;

        // Depth-first topological order over node dependencies.
        let deps = |node: usize| -> Vec<NodeId> {
            match &drivers[node] {
                Driver::Ground | Driver::VirtualGround => vec![],
                Driver::Source(e) => e.variables().into_iter().map(|v| v as NodeId).collect(),
                // An integrator's output is its capacitor state alone.
                Driver::Stage(s) if matches!(stages[*s].feedback, Feedback::Capacitor { .. }) => {
                    vec![]
                }
                Driver::Stage(s) => stages[*s].inputs.iter().map(|(n, _)| *n).collect(),
                Driver::Midpoint { out, .. } => vec![*out],
            }
        };
        let mut mark = vec![0u8; nn];
        let mut order = Vec::with_capacity(nn);
        for root in 0..nn {
            if mark[root] != 0 {
                continue;
            }
            let mut stack: Vec<(usize, bool)> = vec![(root, false)];
            while let Some((node, done)) = stack.pop() {
                if done {
                    mark[node] = 2;
                    order.push(node as NodeId);
                    continue;
                }
                match mark[node] {
                    2 => continue,
                    1 => return Err(IdealError::Cycle(name_of(node as NodeId))),
                    _ => {}
                }
                mark[node] = 1;
                stack.push((node, true));
                for d in deps(node) {
                    let d = d as usize;
                    if d >= nn {
                        return Err(IdealError::Undriven(format!("#{d}")));
                    }
                    match mark[d] {
                        0 => stack.push((d, false)),
                        1 => return Err(IdealError::Cycle(name_of(d as NodeId))),
                        _ => {}
                    }
                }
            }
        }

        let caps: Vec<Cap> = cap_ids
            .iter()
            .map(|&ei| caps[ei].clone().expect("registered"))
            .collect();
        for s in &mut stages {
            s.feedback = match s.feedback {
                Feedback::Capacitor { cap } => Feedback::Capacitor {
                    cap: cap_ids.iter().position(|&c| c == cap).expect("registered"),
                },
                Feedback::SeriesRc { r, cap } => Feedback::SeriesRc {
                    r,
                    cap: cap_ids.iter().position(|&c| c == cap).expect("registered"),
                },
                ref f => f.clone(),
            };
        }
        let drivers = drivers
            .into_iter()
            .map(|d| match d {
                Driver::Midpoint { out, cap } => Driver::Midpoint {
                    out,
                    cap: cap_ids.iter().position(|&c| c == cap).expect("registered"),
                },
                d => d,
            })
            .collect();
        let dim = caps.len();
        let mut seen = vec![false; dim];
        for c in &caps {
            if c.state >= dim || std::mem::replace(&mut seen[c.state], true) {
                return Err(IdealError::UnmappedCapacitor(format!("state {}", c.state)));
            }
        }
        Ok(IdealCircuit {
            drivers,
            stages,
            caps,
            order,
            n_primal: nl.n_vars(),
            dim,
            gamma: nl.gains.gamma(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn current(&self, stage: &Stage, volts: &[f64]) -> f64 {
        stage
            .inputs
            .iter()
            .map(|(n, g)| volts[*n as usize] * g)
            .sum()
    }

    /// All node voltages for the given capacitor states.
    pub fn node_voltages(&self, state: &[f64]) -> Result<Vec<f64>, EvalError> {
        let vc = |cap: usize| {
            let c = &self.caps[cap];
            state[c.state]
        };
        let mut volts = vec![f64::NAN; self.drivers.len()];
        for &node in &self.order {
            let v = match &self.drivers[node as usize] {
                Driver::Ground | Driver::VirtualGround => 0.0,
                Driver::Source(e) => e.eval(&volts)?,
                Driver::Midpoint { out, cap } => {
                    // Only reached after `out`; sign per capacitor orientation.
                    volts[*out as usize] + self.caps[*cap].sign * vc(*cap)
                }
                Driver::Stage(s) => {
                    let st = &self.stages[*s];
                    let i = self.current(st, &volts);
                    match st.feedback {
                        Feedback::Resistor(r) => -r * i,
                        Feedback::Clamp(r) => (-r * i).min(0.0),
                        Feedback::Capacitor { cap } => -self.caps[cap].sign * vc(cap),
                        Feedback::SeriesRc { r, cap } => -r * i - self.caps[cap].sign * vc(cap),
                    }
                }
            };
            volts[node as usize] = v;
        }
        Ok(volts)
    }

    /// Capacitor-voltage derivatives in state order.
    pub fn derivative(&self, state: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let volts = self.node_voltages(state)?;
        for st in &self.stages {
            let cap = match st.feedback {
                Feedback::Capacitor { cap } | Feedback::SeriesRc { cap, .. } => cap,
                _ => continue,
            };
            let c = &self.caps[cap];
            out[c.state] = c.sign * self.current(st, &volts) / c.farads;
        }
        Ok(())
    }
}

impl OdeSystem for IdealCircuit {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<(), EvalError> {
        self.derivative(y, dy)
    }

    fn monitor_scale(&self) -> f64 {
        1.0 / self.gamma
    }

    fn settle_components(&self) -> usize {
        self.n_primal
    }
}
