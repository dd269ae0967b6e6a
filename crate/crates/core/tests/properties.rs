use std::sync::Arc;

use hqflow::discretize::{BoundaryClosure, DiscError, Stencils};
use hqflow::exprparse::{parse, BinOp, Env, Expr, Func, Var};
use hqflow::geometry::{Domain, Grid, GridFn, Point};
use hqflow::oracle::{sigma_brute, sigma_brute_deleted};
use hqflow::symmfunc::{sigma, sigma_omit, sigmas};
use proptest::prelude::*;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0u32..10_000).prop_map(|i| Expr::Const(i as f64 / 100.0)),
        prop_oneof![Just(Var::X1), Just(Var::X2), Just(Var::U), Just(Var::T)].prop_map(Expr::Var),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    let funcs = prop_oneof![
        Just(Func::Sin),
        Just(Func::Cos),
        Just(Func::Exp),
        Just(Func::Log),
        Just(Func::Sqrt),
        Just(Func::Abs),
        Just(Func::Tanh),
    ];
    let ops = prop_oneof![
        Just(BinOp::Add),
        Just(BinOp::Sub),
        Just(BinOp::Mul),
        Just(BinOp::Div),
        Just(BinOp::Pow),
    ];
    leaf().prop_recursive(5, 48, 2, move |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            (funcs.clone(), inner.clone()).prop_map(|(f, a)| Expr::Call(f, Box::new(a))),
            (ops.clone(), inner.clone(), inner).prop_map(|(op, a, b)| {
                Expr::Binary(op, Box::new(a), Box::new(b))
            }),
        ]
    })
}

fn same_value(a: Result<f64, impl std::fmt::Debug>, b: Result<f64, impl std::fmt::Debug>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x == y || (x.is_nan() && y.is_nan()),
        (Err(x), Err(y)) => format!("{x:?}") == format!("{y:?}"),
        _ => false,
    }
}

fn lambdas() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 1..=8)
}

fn abs_sigma(lam: &[f64], m: usize) -> f64 {
    let abs: Vec<f64> = lam.iter().map(|x| x.abs()).collect();
    sigma_brute(&abs, m).unwrap().max(1.0)
}

/// Outward normal derivative of `u = a x1^2 + b x1 x2 + c x2^2 + d x1 + e x2`
/// on the square `[-1, 1]^2`, averaged over the two sides at a corner.
fn square_flux(q: [f64; 5], x: Point) -> f64 {
    let [a, b, c, d, e] = q;
    let ux = 2.0 * a * x[0] + b * x[1] + d;
    let uy = b * x[0] + 2.0 * c * x[1] + e;
    let on = |v: f64| if (v.abs() - 1.0).abs() < 1e-12 { v.signum() } else { 0.0 };
    let (sx, sy) = (on(x[0]), on(x[1]));
    let sides = sx.abs() + sy.abs();
    (sx * ux + sy * uy) / sides
}

fn quadratic(q: [f64; 5], x: Point) -> f64 {
    q[0] * x[0] * x[0] + q[1] * x[0] * x[1] + q[2] * x[1] * x[1] + q[3] * x[0] + q[4] * x[1]
}

fn coeffs() -> impl Strategy<Value = [f64; 5]> {
    prop::array::uniform5(-2.0f64..2.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn printed_expressions_reparse_to_the_same_tree(e in expr()) {
        let text = e.to_string();
        let back = parse(&text).unwrap();
        prop_assert_eq!(&back, &e, "{}", text);
        let env = Env::at([0.3, -0.7]).with_u(1.1).with_t(0.5);
        prop_assert!(same_value(back.eval(&env), e.eval(&env)));
    }

    #[test]
    fn sigma_matches_subset_enumeration(lam in lambdas()) {
        let n = lam.len();
        let all = sigmas(&lam, n);
        for (m, &s) in all.iter().enumerate() {
            let brute = sigma_brute(&lam, m).unwrap();
            let scale = abs_sigma(&lam, m);
            prop_assert!((s - brute).abs() <= 1e-12 * scale);
            prop_assert!((sigma(&lam, m).unwrap() - brute).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn deleted_sigma_matches_enumeration(lam in lambdas(), pick in 0usize..8) {
        let n = lam.len();
        let i = pick % n;
        for m in 0..n {
            let brute = sigma_brute_deleted(&lam, m, &[i]).unwrap();
            let got = sigma_omit(&lam, m, i).unwrap();
            prop_assert!((got - brute).abs() <= 1e-12 * abs_sigma(&lam, m));
        }
    }

    #[test]
    fn euler_identity(lam in lambdas()) {
        let n = lam.len();
        for m in 1..=n {
            let lhs: f64 = (0..n).map(|i| sigma_omit(&lam, m - 1, i).unwrap()).sum();
            let rhs = (n - m + 1) as f64 * sigma(&lam, m - 1).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * n as f64 * abs_sigma(&lam, m - 1));
        }
    }

    #[test]
    fn closure_is_idempotent(a in -1.0f64..1.0, b in -1.0f64..1.0, c in 0.0f64..2.0, n in 8usize..20) {
        let domain = Domain::square(1.0).unwrap();
        let grid = Arc::new(Grid::build(domain, (n, n)).unwrap());
        let closure = BoundaryClosure::new(&grid);
        let phi = |x: Point, u: f64| -> Result<(f64, f64), DiscError> { Ok((a + b * x[0] - c * u, -c)) };
        let raw = GridFn::from_fn(grid.clone(), |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let once = closure.apply_neumann(&raw, phi).unwrap();
        let twice = closure.apply_neumann(&once, phi).unwrap();
        let drift = once
            .values()
            .iter()
            .zip(twice.values())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        prop_assert!(drift <= 1e-11, "drift {}", drift);
        let res = closure.residuals(once.values(), phi).unwrap();
        prop_assert!(res.iter().all(|r| r.abs() <= 1e-9));
    }

    #[test]
    fn square_stencils_are_exact_on_quadratics(q in coeffs(), n in 8usize..24) {
        let domain = Domain::square(1.0).unwrap();
        let grid = Arc::new(Grid::build(domain, (n, n)).unwrap());
        let closure = BoundaryClosure::new(&grid);
        let raw = GridFn::from_fn(grid.clone(), |x| quadratic(q, x));
        let closed = closure
            .apply_neumann(&raw, |x, _| Ok((square_flux(q, x), 0.0)))
            .unwrap();
        for (x, y) in closed.values().iter().zip(raw.values()) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
        let hess = Stencils::new(&grid).hessian(&closed).unwrap();
        prop_assert_eq!(hess.len(), grid.interior().len());
        for h in &hess {
            prop_assert!((h.get(0, 0) - 2.0 * q[0]).abs() <= 1e-7);
            prop_assert!((h.get(0, 1) - q[1]).abs() <= 1e-7);
            prop_assert!((h.get(1, 1) - 2.0 * q[2]).abs() <= 1e-7);
        }
    }
}
