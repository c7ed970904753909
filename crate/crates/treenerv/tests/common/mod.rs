//! Shared test oracles: central finite differences for gradients and a
//! linear-scan reference for tree bound queries. These stay independent of
//! the library's implementation paths.

#![allow(dead_code)]

use treenerv::autodiff::{Tape, Tensor, Value};

/// Named parameter tensor for a gradient check.
#[derive(Clone)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Param { shape, data }
    }
}

/// Compare the tape's analytic gradients against central finite differences
/// computed from scratch tapes. The denominator uses the actually-realized
/// f32 perturbation, measured in f64, so parameter rounding does not bias
/// the estimate. Comparison is `|a - n| <= rel * max(|a|, |n|) + floor`,
/// the floor absorbing finite-difference noise around zero crossings.
pub fn check_gradients<F>(params: &[Param], h: f32, rel: f64, floor: f64, build: F)
where
    F: Fn(&mut Tape, &[Value]) -> Value,
{
    let mut tape = Tape::new();
    let leaves: Vec<Value> = params
        .iter()
        .map(|p| {
            tape.leaf(
                &Tensor::new(p.shape.clone(), p.data.clone())
                    .unwrap()
                    .with_requires_grad(true),
            )
        })
        .collect();
    let loss = build(&mut tape, &leaves);
    tape.backward(loss).expect("backward");
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&v| tape.grad(v).expect("grad populated").to_vec())
        .collect();

    let eval = |ps: &[Param]| -> f64 {
        let mut t = Tape::new();
        let ls: Vec<Value> = ps
            .iter()
            .map(|p| t.leaf(&Tensor::new(p.shape.clone(), p.data.clone()).unwrap()))
            .collect();
        let loss = build(&mut t, &ls);
        t.scalar(loss).expect("scalar loss")
    };

    for p in 0..params.len() {
        for i in 0..params[p].data.len() {
            let mut plus = params.to_vec();
            plus[p].data[i] += h;
            let mut minus = params.to_vec();
            minus[p].data[i] -= h;
            let denom = plus[p].data[i] as f64 - minus[p].data[i] as f64;
            let fd = (eval(&plus) - eval(&minus)) / denom;
            let a = analytic[p][i];
            let tol = rel * a.abs().max(fd.abs()) + floor;
            assert!(
                (a - fd).abs() <= tol,
                "param {p} element {i}: analytic {a} vs finite-diff {fd} (tol {tol})"
            );
        }
    }
}

/// Reference bound query: linear scan over the sorted key list with the same
/// exact-hit and clamping semantics as the tree.
pub fn scan_bounds(sorted_keys: &[f64], t: f64) -> (f64, f64) {
    assert!(!sorted_keys.is_empty());
    if let Some(&k) = sorted_keys.iter().find(|&&k| k == t) {
        return (k, k);
    }
    let lower = sorted_keys.iter().rev().find(|&&k| k < t).copied();
    let upper = sorted_keys.iter().find(|&&k| k > t).copied();
    match (lower, upper) {
        (Some(l), Some(u)) => (l, u),
        (None, Some(u)) => (u, u),
        (Some(l), None) => (l, l),
        (None, None) => unreachable!("non-empty key list"),
    }
}

/// AVL height bound for n nodes with leaf height 0.
pub fn avl_height_bound(n: usize) -> f64 {
    1.44 * ((n + 2) as f64).log2()
}
