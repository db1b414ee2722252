use std::io::{self, BufWriter, Write};

use super::{Element, Netlist, NodeId};
use crate::expr::{PowStyle, RenderStyle};

/// Component value with at most 12 significant digits and no redundant
/// zeros: `10000.0` becomes `1e4`, `1e-7` stays `1e-7`.
pub fn format_value(x: f64) -> String {
    let s = format!("{x:.11e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    if exp == "0" {
        mantissa.to_string()
    } else {
        format!("{mantissa}e{exp}")
    }
}

/// Streams the netlist as SPICE text. Output is a pure function of the
/// netlist.
pub fn emit_spice<W: Write>(nl: &Netlist, out: W) -> io::Result<()> {
    let mut w = BufWriter::with_capacity(1 << 16, out);
    let label = |id: NodeId| nl.label(id).to_string();
    writeln!(w, "{}", nl.title)?;
    for (l, sym) in nl.provenance() {
        writeln!(w, "* {l} = {sym}")?;
    }
    writeln!(w, ".SUBCKT OPAMP inm inp out")?;
    writeln!(w, "E1 out 0 inp inm 1e6")?;
    writeln!(w, ".ENDS OPAMP")?;
    writeln!(w, ".MODEL DIDEAL D(IS=1e-14 N=0.001)")?;
    let var = |id: usize| format!("v({})", nl.label(id as NodeId));
    let style = RenderStyle {
        var: &var,
        pow: PowStyle::Repeat,
        compact: true,
    };
    for c in &nl.components {
        match &c.element {
            Element::Resistor { pos, neg, ohms } => writeln!(
                w,
                "{} {} {} {}",
                c.name,
                label(*pos),
                label(*neg),
                format_value(*ohms)
            )?,
            Element::Capacitor { pos, neg, farads } => writeln!(
                w,
                "{} {} {} {}",
                c.name,
                label(*pos),
                label(*neg),
                format_value(*farads)
            )?,
            Element::Diode { anode, cathode } => {
                writeln!(w, "{} {} {} DIDEAL", c.name, label(*anode), label(*cathode))?
            }
            Element::OpAmp { inm, inp, out } => writeln!(
                w,
                "{} {} {} {} OPAMP",
                c.name,
                label(*inm),
                label(*inp),
                label(*out)
            )?,
            Element::Behavioral { pos, neg, expr } => writeln!(
                w,
                "{} {} {} V={}",
                c.name,
                label(*pos),
                label(*neg),
                expr.render(&style)
            )?,
        }
    }
    for n in nl.capacitor_nodes() {
        writeln!(w, ".IC v({})=0", label(n))?;
    }
    writeln!(
        w,
        ".TRAN {} {} UIC",
        format_value(nl.tran.step),
        format_value(nl.tran.stop)
    )?;
    for n in nl.variable_nodes() {
        writeln!(w, ".SAVE v({})", label(n))?;
    }
    writeln!(w, ".END")?;
    w.flush()
}

pub fn emit_spice_string(nl: &Netlist) -> String {
    let mut buf = Vec::new();
    emit_spice(nl, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("netlist text is UTF-8")
}
