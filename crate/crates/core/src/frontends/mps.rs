//! Free-format MPS reader with the QUADOBJ/QMATRIX and QCMATRIX extensions.
//!
//! Section headers start in the first column; data lines are indented.
//! Fields are whitespace-separated, so names may not contain blanks.

use std::collections::{BTreeMap, HashMap};

use super::{ParseDiagnostic, ParseError, Parsed};
use crate::expr::Expr;
use crate::problem::{Bounds, RawProblem};

/// Magnitudes at or above this are read as infinite in BOUNDS.
const MPS_INFINITY: f64 = 1e30;

const FIXED_FORMAT_HINT: &str =
    "only free-format MPS is supported; if this file uses fixed columns, convert it to free format";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    N,
    L,
    G,
    E,
}

#[derive(Debug)]
struct Row {
    name: String,
    kind: RowKind,
    terms: Vec<(usize, f64)>,
    quad: QuadEntries,
    rhs: f64,
    range: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    Start,
    Name,
    Objsense,
    Rows,
    Columns,
    Rhs,
    Ranges,
    Bounds,
    QuadObj,
    QcMatrix(usize),
    End,
}

struct Token<'a> {
    text: &'a str,
    col: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    let mut col = 0;
    let mut start_col = 0;
    for (i, ch) in line.char_indices() {
        col += 1;
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &line[s..i],
                    col: start_col,
                });
            }
        } else if start.is_none() {
            start = Some(i);
            start_col = col;
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &line[s..],
            col: start_col,
        });
    }
    out
}

/// Symmetric quadratic entries keyed by unordered index pair. The first
/// orientation seen is kept so that an exact mirror can be told apart from a
/// genuine duplicate.
#[derive(Debug, Default)]
struct QuadEntries {
    map: BTreeMap<(usize, usize), QuadEntry>,
}

#[derive(Debug)]
struct QuadEntry {
    value: f64,
    first: (usize, usize),
    mirrored: bool,
}

impl QuadEntries {
    fn insert(&mut self, i: usize, j: usize, value: f64) -> Result<(), String> {
        let key = (i.min(j), i.max(j));
        match self.map.get_mut(&key) {
            None => {
                self.map.insert(
                    key,
                    QuadEntry {
                        value,
                        first: (i, j),
                        mirrored: false,
                    },
                );
                Ok(())
            }
            Some(e) if i != j && !e.mirrored && e.first == (j, i) => {
                if e.value == value {
                    e.mirrored = true;
                    Ok(())
                } else {
                    Err(format!(
                        "asymmetric quadratic entries: {} and {value} for the same pair",
                        e.value
                    ))
                }
            }
            Some(_) => Err("duplicate quadratic entry".to_string()),
        }
    }

    /// `½ xᵀQx` with Q completed symmetrically.
    fn half_form_terms(&self, sign: f64, out: &mut Vec<Expr>) {
        for (&(i, j), e) in &self.map {
            if e.value == 0.0 {
                continue;
            }
            if i == j {
                out.push(Expr::Prod(vec![
                    Expr::Const(sign * 0.5 * e.value),
                    Expr::pow(Expr::Var(i), 2),
                ]));
            } else {
                out.push(Expr::Prod(vec![
                    Expr::Const(sign * e.value),
                    Expr::Var(i),
                    Expr::Var(j),
                ]));
            }
        }
    }
}

struct Reader {
    rows: Vec<Row>,
    row_index: HashMap<String, usize>,
    objective: Option<usize>,
    cols: Vec<String>,
    col_index: HashMap<String, usize>,
    bounds: Vec<Bounds>,
    quad_obj: QuadEntries,
    warnings: Vec<ParseDiagnostic>,
    line: usize,
}

type Res<T> = Result<T, ParseError>;

impl Reader {
    fn err<T>(&self, col: usize, msg: impl Into<String>) -> Res<T> {
        Err(ParseError::at(self.line, col, msg))
    }

    fn number(&self, t: &Token<'_>) -> Res<f64> {
        match t.text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => self.err(t.col, format!("malformed number `{}`", t.text)),
        }
    }

    fn row(&self, t: &Token<'_>) -> Res<usize> {
        match self.row_index.get(t.text) {
            Some(&r) => Ok(r),
            None => self.err(t.col, format!("reference to undeclared row `{}`", t.text)),
        }
    }

    fn column(&self, t: &Token<'_>) -> Res<usize> {
        match self.col_index.get(t.text) {
            Some(&c) => Ok(c),
            None => self.err(
                t.col,
                format!("reference to undeclared column `{}`", t.text),
            ),
        }
    }

    fn declare_column(&mut self, name: &str) -> usize {
        if let Some(&c) = self.col_index.get(name) {
            return c;
        }
        let c = self.cols.len();
        self.cols.push(name.to_string());
        self.col_index.insert(name.to_string(), c);
        self.bounds.push(Bounds::NONNEGATIVE);
        c
    }

    fn rows_line(&mut self, toks: &[Token<'_>]) -> Res<()> {
        if toks.len() != 2 {
            return self.err(
                toks[0].col,
                format!("ROWS entry needs a type and a name; {FIXED_FORMAT_HINT}"),
            );
        }
        let kind = match toks[0].text.to_ascii_uppercase().as_str() {
            "N" => RowKind::N,
            "L" => RowKind::L,
            "G" => RowKind::G,
            "E" => RowKind::E,
            other => return self.err(toks[0].col, format!("unknown row type `{other}`")),
        };
        let name = toks[1].text;
        if self.row_index.contains_key(name) {
            return self.err(toks[1].col, format!("duplicate row `{name}`"));
        }
        if kind == RowKind::N {
            if self.objective.is_some() {
                return self.err(toks[0].col, format!("duplicate objective row `{name}`"));
            }
            self.objective = Some(self.rows.len());
        }
        self.row_index.insert(name.to_string(), self.rows.len());
        self.rows.push(Row {
            name: name.to_string(),
            kind,
            terms: Vec::new(),
            quad: QuadEntries::default(),
            rhs: 0.0,
            range: None,
        });
        Ok(())
    }

    fn columns_line(&mut self, toks: &[Token<'_>]) -> Res<()> {
        if let Some(t) = toks
            .iter()
            .find(|t| t.text.eq_ignore_ascii_case("'MARKER'"))
        {
            return self.err(t.col, "integer MARKER sections are not supported");
        }
        if toks.len().is_multiple_of(2) {
            return self.err(
                toks[0].col,
                format!(
                    "COLUMNS entry needs a column name and row/value pairs; {FIXED_FORMAT_HINT}"
                ),
            );
        }
        let c = self.declare_column(toks[0].text);
        for pair in toks[1..].chunks(2) {
            let r = self.row(&pair[0])?;
            let v = self.number(&pair[1])?;
            if self.rows[r].terms.last().is_some_and(|&(k, _)| k == c) {
                return self.err(
                    pair[0].col,
                    format!("duplicate entry for row `{}`", self.rows[r].name),
                );
            }
            self.rows[r].terms.push((c, v));
        }
        Ok(())
    }

    // RHS and RANGES share a layout: an optional set name followed by
    // row/value pairs, so an odd token count means the set name is present.
    fn pairs_after_set<'t, 'a>(&self, toks: &'t [Token<'a>]) -> Res<&'t [Token<'a>]> {
        let rest = if toks.len() % 2 == 1 {
            &toks[1..]
        } else {
            toks
        };
        if rest.is_empty() || rest.len() > 4 {
            return self.err(
                toks[0].col,
                format!("expected one or two row/value pairs; {FIXED_FORMAT_HINT}"),
            );
        }
        Ok(rest)
    }

    fn rhs_line(&mut self, toks: &[Token<'_>]) -> Res<()> {
        for pair in self.pairs_after_set(toks)?.chunks(2) {
            let r = self.row(&pair[0])?;
            let v = self.number(&pair[1])?;
            self.rows[r].rhs = v;
        }
        Ok(())
    }

    fn ranges_line(&mut self, toks: &[Token<'_>]) -> Res<()> {
        for pair in self.pairs_after_set(toks)?.chunks(2) {
            let r = self.row(&pair[0])?;
            let v = self.number(&pair[1])?;
            if self.rows[r].kind == RowKind::N {
                return self.err(pair[0].col, "RANGES entry on the objective row");
            }
            self.rows[r].range = Some(v);
        }
        Ok(())
    }

    fn bounds_line(&mut self, toks: &[Token<'_>]) -> Res<()> {
        let kind = toks[0].text.to_ascii_uppercase();
        let takes_value = match kind.as_str() {
            "UP" | "LO" | "FX" => true,
            "FR" | "MI" | "PL" => false,
            "BV" | "LI" | "UI" | "SC" => {
                return self.err(
                    toks[0].col,
                    format!("integer bound type `{kind}` is not supported"),
                )
            }
            _ => return self.err(toks[0].col, format!("unknown bound type `{kind}`")),
        };
        let (col_tok, val_tok) = match (takes_value, toks.len()) {
            (true, 3) => (&toks[1], Some(&toks[2])),
            (true, 4) => (&toks[2], Some(&toks[3])),
            (false, 2) => (&toks[1], None),
            // `FR set col` or `FR col value`; the value of a free bound is ignored.
            (false, 3) if self.col_index.contains_key(toks[2].text) => (&toks[2], None),
            (false, 3) => (&toks[1], None),
            (false, 4) => (&toks[2], None),
            _ => {
                return self.err(
                    toks[0].col,
                    format!("malformed BOUNDS entry; {FIXED_FORMAT_HINT}"),
                );
            }
        };
        let c = self.column(col_tok)?;
        let value = match val_tok {
            Some(t) => self.number(t)?,
            None => 0.0,
        };
        let as_bound = |v: f64| {
            if v >= MPS_INFINITY {
                f64::INFINITY
            } else if v <= -MPS_INFINITY {
                f64::NEG_INFINITY
            } else {
                v
            }
        };
        let b = &mut self.bounds[c];
        match kind.as_str() {
            "UP" => {
                b.upper = as_bound(value);
                if value < 0.0 && b.lower == 0.0 {
                    b.lower = f64::NEG_INFINITY;
                    let msg = format!(
                        "negative upper bound on `{}` with default lower bound; lower bound set to -infinity",
                        self.cols[c]
                    );
                    self.warnings
                        .push(ParseDiagnostic::warning(self.line, toks[0].col, msg));
                }
            }
            "LO" => b.lower = as_bound(value),
            "FX" => {
                b.lower = value;
                b.upper = value;
            }
            "FR" => *b = Bounds::FREE,
            "MI" => b.lower = f64::NEG_INFINITY,
            "PL" => b.upper = f64::INFINITY,
            _ => unreachable!(),
        }
        Ok(())
    }

    fn quad_line(&mut self, toks: &[Token<'_>], target: Option<usize>) -> Res<()> {
        if toks.len() != 3 {
            return self.err(
                toks[0].col,
                format!("quadratic entry needs two columns and a value; {FIXED_FORMAT_HINT}"),
            );
        }
        let i = self.column(&toks[0])?;
        let j = self.column(&toks[1])?;
        let v = self.number(&toks[2])?;
        let entries = match target {
            None => &mut self.quad_obj,
            Some(r) => &mut self.rows[r].quad,
        };
        if let Err(msg) = entries.insert(i, j, v) {
            return self.err(toks[0].col, msg);
        }
        Ok(())
    }

    fn finish(self) -> Res<Parsed> {
        let Some(obj) = self.objective else {
            return self.err(1, "no objective (N) row declared");
        };
        let mut problem = RawProblem::new(self.cols, Expr::Const(0.0));
        problem.bounds = self.bounds;

        let mut f_terms = Vec::new();
        let o = &self.rows[obj];
        for &(k, c) in &o.terms {
            f_terms.push(Expr::Prod(vec![Expr::Const(c), Expr::Var(k)]));
        }
        self.quad_obj.half_form_terms(1.0, &mut f_terms);
        if o.rhs != 0.0 {
            f_terms.push(Expr::Const(-o.rhs));
        }
        problem.objective = Expr::sum(f_terms);

        for row in self.rows.into_iter() {
            // `sign * row + constant`
            let build = |sign: f64, constant: f64| {
                let mut t: Vec<Expr> = row
                    .terms
                    .iter()
                    .map(|&(k, c)| Expr::Prod(vec![Expr::Const(sign * c), Expr::Var(k)]))
                    .collect();
                row.quad.half_form_terms(sign, &mut t);
                if constant != 0.0 || t.is_empty() {
                    t.push(Expr::Const(constant));
                }
                Expr::sum(t)
            };
            let rhs = row.rhs;
            match (row.kind, row.range) {
                (RowKind::N, _) => {}
                (kind, Some(r)) => {
                    let (lo, hi) = match kind {
                        RowKind::E if r >= 0.0 => (rhs, rhs + r),
                        RowKind::E => (rhs + r, rhs),
                        RowKind::L => (rhs - r.abs(), rhs),
                        _ => (rhs, rhs + r.abs()),
                    };
                    problem.add_inequality(format!("{}_lo", row.name), build(1.0, -lo));
                    problem.add_inequality(format!("{}_hi", row.name), build(-1.0, hi));
                }
                (RowKind::L, None) => problem.add_inequality(row.name.clone(), build(-1.0, rhs)),
                (RowKind::G, None) => problem.add_inequality(row.name.clone(), build(1.0, -rhs)),
                (RowKind::E, None) => problem.add_equality(row.name.clone(), build(1.0, -rhs)),
            }
        }
        Ok(Parsed {
            problem,
            warnings: self.warnings,
        })
    }
}

/// Parses free-format MPS text into a problem with bounds.
pub fn parse_mps(text: &str) -> Result<Parsed, ParseError> {
    let mut rd = Reader {
        rows: Vec::new(),
        row_index: HashMap::new(),
        objective: None,
        cols: Vec::new(),
        col_index: HashMap::new(),
        bounds: Vec::new(),
        quad_obj: QuadEntries::default(),
        warnings: Vec::new(),
        line: 0,
    };
    let mut section = Section::Start;
    let mut last_line = 0;
    for (idx, raw_line) in text.lines().enumerate() {
        rd.line = idx + 1;
        last_line = rd.line;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.starts_with('*') {
            continue;
        }
        let toks = tokenize(line);
        if toks.is_empty() {
            continue;
        }
        if section == Section::End {
            return rd.err(toks[0].col, "content after ENDATA");
        }
        let header = !line.starts_with(|c: char| c.is_whitespace());
        if header {
            let key = toks[0].text.to_ascii_uppercase();
            section = match key.as_str() {
                "NAME" => Section::Name,
                "OBJSENSE" => {
                    if let Some(t) = toks.get(1) {
                        objsense(&rd, t)?;
                    }
                    Section::Objsense
                }
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "RANGES" => Section::Ranges,
                "BOUNDS" => Section::Bounds,
                "QUADOBJ" | "QMATRIX" => Section::QuadObj,
                "QCMATRIX" => {
                    let Some(t) = toks.get(1) else {
                        return rd.err(toks[0].col, "QCMATRIX header needs a row name");
                    };
                    let r = rd.row(t)?;
                    if rd.rows[r].kind == RowKind::N {
                        return rd.err(t.col, "QCMATRIX on the objective row; use QUADOBJ");
                    }
                    if !rd.rows[r].quad.map.is_empty() {
                        return rd.err(
                            t.col,
                            format!("second QCMATRIX section for row `{}`", t.text),
                        );
                    }
                    Section::QcMatrix(r)
                }
                "ENDATA" => Section::End,
                _ => {
                    return rd.err(
                        toks[0].col,
                        format!(
                            "unknown section `{}` (data lines must be indented)",
                            toks[0].text
                        ),
                    )
                }
            };
            if !matches!(
                section,
                Section::Name | Section::Objsense | Section::QcMatrix(_)
            ) && toks.len() > 1
            {
                return rd.err(toks[1].col, format!("unexpected text after {key} header"));
            }
            continue;
        }
        match section {
            Section::Start | Section::Name => {
                return rd.err(toks[0].col, "data line outside of a section");
            }
            Section::Objsense => objsense(&rd, &toks[0])?,
            Section::Rows => rd.rows_line(&toks)?,
            Section::Columns => rd.columns_line(&toks)?,
            Section::Rhs => rd.rhs_line(&toks)?,
            Section::Ranges => rd.ranges_line(&toks)?,
            Section::Bounds => rd.bounds_line(&toks)?,
            Section::QuadObj => rd.quad_line(&toks, None)?,
            Section::QcMatrix(r) => rd.quad_line(&toks, Some(r))?,
            Section::End => unreachable!(),
        }
    }
    if section != Section::End {
        return Err(ParseError::at(last_line.max(1), 1, "missing ENDATA"));
    }
    let warnings = rd.warnings.clone();
    rd.finish().map_err(|mut e| {
        e.warnings = warnings;
        e
    })
}

fn objsense(rd: &Reader, t: &Token<'_>) -> Res<()> {
    match t.text.to_ascii_uppercase().as_str() {
        "MIN" | "MINIMIZE" => Ok(()),
        "MAX" | "MAXIMIZE" => rd.err(t.col, "maximization is not supported; negate the objective"),
        other => rd.err(t.col, format!("unknown objective sense `{other}`")),
    }
}
