use std::collections::HashMap;

use gbc_core::expr::{parse_str, BinaryOp, ExprKind, ExprNode, Func};
use gbc_core::geometry::{catalog, Params};
use gbc_core::invariants::{lovelock_tensor, pfaffian_invariant};
use gbc_core::jet::Jet2;
use proptest::prelude::*;

fn jet(n: usize) -> impl Strategy<Value = Jet2> {
    (prop::collection::vec(-2.0f64..2.0, n), -2.0f64..2.0).prop_map(move |(coef, c)| {
        // a quadratic-ish polynomial in the variables 0.5, 1.0, ...
        let mut acc = Jet2::constant(c, n).unwrap();
        for (i, a) in coef.iter().enumerate() {
            let x = Jet2::var(i, 0.5 * (i as f64 + 1.0), n).unwrap();
            let term = x.try_mul(&x).unwrap().scale(*a).try_add(&x).unwrap();
            acc = acc.try_add(&term).unwrap();
        }
        acc
    })
}

fn close(a: &Jet2, b: &Jet2, tol: f64) -> bool {
    let n = a.nvars();
    let scale = 1.0 + a.value().abs();
    (a.value() - b.value()).abs() <= tol * scale
        && (0..n).all(|i| (a.grad()[i] - b.grad()[i]).abs() <= tol * (1.0 + a.grad()[i].abs()))
        && (0..n).all(|i| (0..n).all(|j| (a.hess(i, j) - b.hess(i, j)).abs() <= tol * (1.0 + a.hess(i, j).abs())))
}

fn expr_tree() -> impl Strategy<Value = ExprNode> {
    let leaf = prop_oneof![
        (0u32..50).prop_map(|v| ExprNode::constant(v as f64 / 4.0)),
        prop::sample::select(vec!["u", "v", "w"]).prop_map(ExprNode::variable),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone(), prop::sample::select(vec![BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div]))
                .prop_map(|(a, b, op)| ExprNode::binary(op, a, b)),
            (inner.clone(), 0u32..4).prop_map(|(a, k)| ExprNode::binary(BinaryOp::Pow, a, ExprNode::constant(k as f64))),
            inner.clone().prop_map(ExprNode::neg),
            (inner, prop::sample::select(vec![Func::Sin, Func::Cos, Func::Exp, Func::Tanh])).prop_map(|(a, f)| ExprNode {
                kind: ExprKind::Call(f, Box::new(a)),
                pos: 0,
            }),
        ]
    })
}

proptest! {
    #[test]
    fn jet_addition_and_multiplication_commute(a in jet(3), b in jet(3)) {
        prop_assert_eq!(a.try_add(&b).unwrap(), b.try_add(&a).unwrap());
        prop_assert_eq!(a.try_mul(&b).unwrap(), b.try_mul(&a).unwrap());
    }

    #[test]
    fn jet_algebra_is_associative_and_distributive(a in jet(2), b in jet(2), c in jet(2)) {
        let ab_c = a.try_mul(&b).unwrap().try_mul(&c).unwrap();
        let a_bc = a.try_mul(&b.try_mul(&c).unwrap()).unwrap();
        prop_assert!(close(&ab_c, &a_bc, 1e-12));
        let left = a.try_mul(&b.try_add(&c).unwrap()).unwrap();
        let right = a.try_mul(&b).unwrap().try_add(&a.try_mul(&c).unwrap()).unwrap();
        prop_assert!(close(&left, &right, 1e-12));
        let sum = a.try_add(&b).unwrap().try_add(&c).unwrap();
        prop_assert!(close(&sum, &a.try_add(&b.try_add(&c).unwrap()).unwrap(), 1e-14));
    }

    #[test]
    fn printed_expressions_parse_back(e in expr_tree()) {
        let printed = e.to_string();
        let parsed = parse_str(&printed).unwrap();
        prop_assert_eq!(&parsed, &e, "printed as {}", printed);
    }

    #[test]
    fn jet_value_channel_equals_real_evaluation(e in expr_tree(), u in -1.0f64..1.0, v in -1.0f64..1.0, w in -1.0f64..1.0) {
        let names: Vec<String> = ["u", "v", "w"].iter().map(|s| s.to_string()).collect();
        let c = e.compile(&names).unwrap();
        let real = c.eval_real(&[u, v, w]);
        let jets: Vec<Jet2> = [u, v, w].iter().enumerate().map(|(i, &x)| Jet2::var(i, x, 3).unwrap()).collect();
        let j = c.eval_jet(&jets);
        match (real, j) {
            (Ok(r), Ok(j)) => prop_assert!(r.to_bits() == j.value().to_bits() || (r.is_nan() && j.value().is_nan())),
            (Err(_), Err(_)) => {}
            (r, j) => prop_assert!(false, "real {:?} vs jet {:?}", r, j.map(|j| j.value())),
        }
    }

    #[test]
    fn tokenizer_and_parser_never_panic(s in "[a-z0-9+*/^(). ,-]{0,24}") {
        let _ = parse_str(&s);
    }
}

/// Scalar invariants are natural: pulling the metric back by a translation
/// of the torus translates the invariant.
#[test]
fn invariants_commute_with_torus_translations() {
    let m = catalog("perturbed_torus(3, 3)", &Params::new()).unwrap();
    let shift = [0.7, -1.3, 2.1];
    let map: HashMap<String, ExprNode> = (0..3)
        .map(|i| {
            let name = format!("x{}", i + 1);
            let moved = ExprNode::binary(BinaryOp::Add, ExprNode::variable(name.clone()), ExprNode::constant(shift[i]));
            (name, moved)
        })
        .collect();
    let pulled: Vec<ExprNode> = m.packed_components().iter().map(|c| c.substitute(&map)).collect();
    let moved = gbc_core::geometry::MetricField::new(
        "translated",
        m.chart().clone(),
        pulled,
        m.params().clone(),
        m.signature(),
        m.expected_chi(),
        vec![],
    )
    .unwrap();
    for x in m.chart().random_points(20, 12, 0.0) {
        let y: Vec<f64> = x.iter().zip(shift).map(|(a, b)| a + b).collect();
        let a = moved.curvature_at(&x, &Params::new()).unwrap();
        let b = m.curvature_at(&y, &Params::new()).unwrap();
        assert!((a.scalar - b.scalar).abs() < 1e-11 * b.scalar.abs().max(1.0));
        let (pa, pb) = (pfaffian_invariant(&a, 1).scalar(), pfaffian_invariant(&b, 1).scalar());
        assert!((pa - pb).abs() < 1e-12);
        let (sa, sb) = (lovelock_tensor(&a, 1).value, lovelock_tensor(&b, 1).value);
        assert!(sa.max_abs_diff(&sb) < 1e-11 * sb.max_abs().max(1.0));
    }
}

/// A linear change of coordinates on the torus transforms the Lovelock
/// tensor covariantly and leaves the scalar invariant.
#[test]
fn invariants_transform_under_linear_diffeomorphisms() {
    let m = catalog("perturbed_torus(2, 8)", &Params::new()).unwrap();
    // x1 -> x1 + x2 (an element of SL(2, Z), so it preserves the torus)
    let map: HashMap<String, ExprNode> = HashMap::from([(
        "x1".to_string(),
        ExprNode::binary(BinaryOp::Add, ExprNode::variable("x1"), ExprNode::variable("x2")),
    )]);
    let j = [[1.0, 1.0], [0.0, 1.0]]; // ∂y^a/∂x^i
    let n = 2;
    let mut comps = Vec::new();
    for i in 0..n {
        for k in i..n {
            let mut acc = ExprNode::constant(0.0);
            for a in 0..n {
                for b in 0..n {
                    let c = j[a][i] * j[b][k];
                    if c != 0.0 {
                        let term = ExprNode::binary(BinaryOp::Mul, ExprNode::constant(c), m.component(a, b).substitute(&map));
                        acc = ExprNode::binary(BinaryOp::Add, acc, term);
                    }
                }
            }
            comps.push(acc);
        }
    }
    let pulled = gbc_core::geometry::MetricField::new("pulled", m.chart().clone(), comps, m.params().clone(), (2, 0), Some(0), vec![]).unwrap();
    for x in m.chart().random_points(10, 5, 0.0) {
        let y = [x[0] + x[1], x[1]];
        let a = pulled.curvature_at(&x, &Params::new()).unwrap();
        let b = m.curvature_at(&y, &Params::new()).unwrap();
        assert!((a.scalar - b.scalar).abs() < 1e-11 * b.scalar.abs().max(1.0));
        let (va, vb) = (a.vol_density, b.vol_density);
        assert!((va - vb).abs() < 1e-13, "unimodular map keeps the density");
    }
}
