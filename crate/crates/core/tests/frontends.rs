//! Reader conformance, AMPL round trips and parser totality.

use std::fs;
use std::path::Path;

use kktsynth_core::frontends::ampl::{emit_ampl, parse_ampl_subset};
use kktsynth_core::frontends::mps::parse_mps;
use kktsynth_core::frontends::ParseError;
use kktsynth_core::poly::Poly;
use kktsynth_core::{Bounds, Expr, Func, RawProblem};
use proptest::prelude::*;

fn same_polynomial(a: &Expr, b: &Expr) -> bool {
    match (Poly::from_expr(a), Poly::from_expr(b)) {
        (Some(p), Some(q)) => p.approx_eq(&q, 1e-12),
        _ => false,
    }
}

/// Each `.mps` file in the corpus has a hand-written `.mod` twin describing
/// the problem it must read as. A leading `# warnings: k` line gives the
/// expected warning count.
#[test]
fn mps_corpus_matches_golden_problems() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/mps");
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "mps"))
        .collect();
    files.sort();
    assert!(files.len() >= 12, "corpus has {} files", files.len());
    for mps_path in files {
        let label = mps_path.file_name().unwrap().to_string_lossy().into_owned();
        let golden_text = fs::read_to_string(mps_path.with_extension("mod")).unwrap();
        let parsed = parse_mps(&fs::read_to_string(&mps_path).unwrap())
            .unwrap_or_else(|e| panic!("{label}: {e}"));
        let golden = parse_ampl_subset(&golden_text)
            .unwrap_or_else(|e| panic!("{label} golden: {e}"))
            .problem;
        let expected_warnings = golden_text
            .lines()
            .find_map(|l| l.strip_prefix("# warnings: "))
            .map_or(0, |k| k.trim().parse::<usize>().unwrap());
        assert_eq!(
            parsed.warnings.len(),
            expected_warnings,
            "{label}: {:?}",
            parsed.warnings
        );
        let p = parsed.problem;
        assert_eq!(p.var_names, golden.var_names, "{label}");
        assert_eq!(p.bounds, golden.bounds, "{label}");
        assert_eq!(p.ineq_names, golden.ineq_names, "{label}");
        assert_eq!(p.eq_names, golden.eq_names, "{label}");
        assert!(
            same_polynomial(&p.objective, &golden.objective),
            "{label}: objective {} vs {}",
            p.objective,
            golden.objective
        );
        for (i, (a, b)) in p.inequalities.iter().zip(&golden.inequalities).enumerate() {
            assert!(same_polynomial(a, b), "{label}: inequality {i}: {a} vs {b}");
        }
        for (j, (a, b)) in p.equalities.iter().zip(&golden.equalities).enumerate() {
            assert!(same_polynomial(a, b), "{label}: equality {j}: {a} vs {b}");
        }
    }
}

const N: usize = 3;

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-5.0..5.0f64).prop_map(|c| Expr::Const((c * 8.0).round() / 8.0)),
        (0..N).prop_map(Expr::Var),
    ];
    leaf.prop_recursive(3, 20, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::Sum),
            prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::Prod),
            (inner.clone(), 2..4u32).prop_map(|(b, e)| Expr::pow(b, e)),
            (prop::sample::select(Func::ALL.to_vec()), inner).prop_map(|(f, e)| Expr::func(f, e)),
        ]
    })
}

fn bounds() -> impl Strategy<Value = Bounds> {
    prop_oneof![
        Just(Bounds::FREE),
        Just(Bounds::NONNEGATIVE),
        (-4i32..0, 0i32..4).prop_map(|(l, u)| Bounds {
            lower: l as f64,
            upper: u as f64
        }),
    ]
}

fn raw_problem() -> impl Strategy<Value = RawProblem> {
    (
        expr(),
        prop::collection::vec(expr(), 0..3),
        prop::collection::vec(expr(), 0..3),
        prop::collection::vec(bounds(), N),
    )
        .prop_map(|(obj, g, h, b)| {
            let mut raw = RawProblem::new((1..=N).map(|k| format!("x{k}")).collect(), obj);
            for (i, e) in g.into_iter().enumerate() {
                raw.add_inequality(format!("g{}", i + 1), e);
            }
            for (j, e) in h.into_iter().enumerate() {
                raw.add_equality(format!("h{}", j + 1), e);
            }
            raw.bounds = b;
            raw
        })
}

fn check_diagnostic(text: &str, e: &ParseError) -> Result<(), TestCaseError> {
    let lines = text.lines().count().max(1);
    prop_assert!(
        e.diagnostic.line >= 1 && e.diagnostic.line <= lines + 1,
        "{} in {} lines",
        e,
        lines
    );
    prop_assert!(e.diagnostic.column >= 1, "{}", e);
    prop_assert!(!e.diagnostic.message.is_empty());
    Ok(())
}

/// Mostly grammar-relevant characters so inputs get past the lexer.
fn noisy_text(alphabet: &'static str) -> impl Strategy<Value = String> {
    let chars: Vec<char> = alphabet.chars().collect();
    prop::collection::vec(prop::sample::select(chars), 0..200).prop_map(|v| v.into_iter().collect())
}

fn mutate(base: &'static str) -> impl Strategy<Value = String> {
    prop::collection::vec((0..base.len(), any::<char>(), prop::bool::ANY), 1..6).prop_map(
        move |edits| {
            let mut chars: Vec<char> = base.chars().collect();
            for (pos, c, insert) in edits {
                let pos = pos.min(chars.len().saturating_sub(1));
                if insert {
                    chars.insert(pos, c);
                } else if !chars.is_empty() {
                    chars.remove(pos);
                }
            }
            chars.into_iter().collect()
        },
    )
}

const EQ5_MOD: &str = include_str!("../../../problems/eq5.mod");
const EQ5_MPS: &str = include_str!("../../../problems/eq5.mps");

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn ampl_round_trip_preserves_structure(raw in raw_problem()) {
        let text = emit_ampl(&raw);
        let back = parse_ampl_subset(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?.problem;
        prop_assert_eq!(back.var_names.len(), raw.var_names.len());
        prop_assert_eq!(back.inequalities.len(), raw.inequalities.len());
        prop_assert_eq!(back.equalities.len(), raw.equalities.len());
        prop_assert_eq!(&back.bounds, &raw.bounds);
        prop_assert_eq!(back.objective.simplify(), raw.objective.simplify(), "{}", text);
        for (a, b) in back.inequalities.iter().zip(&raw.inequalities) {
            prop_assert_eq!(a.simplify(), b.simplify(), "{}", text);
        }
        for (a, b) in back.equalities.iter().zip(&raw.equalities) {
            prop_assert_eq!(a.simplify(), b.simplify(), "{}", text);
        }
    }

    #[test]
    fn ampl_parser_is_total(text in noisy_text("var minimize subject to x y z : ; >= <= = + - * / ^ ( ) 0 1 2.5 e sin log # \n")) {
        if let Err(e) = parse_ampl_subset(&text) {
            check_diagnostic(&text, &e)?;
        }
    }

    #[test]
    fn mps_parser_is_total(text in noisy_text("NAME ROWS COLUMNS RHS RANGES BOUNDS QUADOBJ QCMATRIX ENDATA N L G E UP LO FX FR X1 R1 1 -2 3e4 \n\n\n")) {
        if let Err(e) = parse_mps(&text) {
            check_diagnostic(&text, &e)?;
        }
    }

    #[test]
    fn mutated_sources_never_crash(a in mutate(EQ5_MOD), b in mutate(EQ5_MPS)) {
        if let Err(e) = parse_ampl_subset(&a) {
            check_diagnostic(&a, &e)?;
        }
        if let Err(e) = parse_mps(&b) {
            check_diagnostic(&b, &e)?;
        }
    }
}
