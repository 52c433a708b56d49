mod common;

use std::sync::OnceLock;

use pearcey_lab::operators::{genfun_det, EvalOptions, ModelConfig, Validation};
use pearcey_lab::quadrature::Grid;
use pearcey_lab::rhp::gamma1;
use pearcey_lab::verify::{fd_weights, FdScheme};
use proptest::prelude::*;

fn grid() -> &'static Grid {
    static G: OnceLock<Grid> = OnceLock::new();
    G.get_or_init(|| common::small_grid(7.0))
}

prop_compose! {
    fn config()(
        gaps in prop::collection::vec(0.2f64..1.5, 1..=2),
        start in -2.0f64..-0.5,
        inner in prop::collection::vec(0.05f64..1.0, 2),
        tau in -1.0f64..1.0,
        s in -0.5f64..0.5,
    ) -> ModelConfig {
        let mut a = vec![start];
        for g in &gaps {
            a.push(a.last().unwrap() + g);
        }
        let n = a.len();
        let mut k = vec![0.0];
        k.extend(inner.iter().take(n - 1));
        k.push(0.0);
        ModelConfig::new(a, k, tau, s)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn config_json_round_trips(c in config()) {
        let back = ModelConfig::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.config_hash(), c.config_hash());
    }

    #[test]
    fn genfun_lies_in_unit_interval(c in config()) {
        prop_assume!(c.validate(Validation::Strict).is_ok());
        let f = genfun_det(&c, grid(), &EvalOptions::default()).unwrap();
        prop_assert!(f.value > 0.0 && f.value <= 1.0 + 1e-10, "F = {}", f.value);
        prop_assert!(f.im_leak < 1e-8);
    }

    #[test]
    fn residue_traces_vanish(c in config()) {
        prop_assume!(c.validate(Validation::Strict).is_ok());
        let g = gamma1(&c, grid()).unwrap();
        prop_assert!(g.trace_residual() <= 1e-8 * g.scale());
        prop_assert!(g.delta_trace_residual() <= 1e-8 * g.scale());
    }

    #[test]
    fn fd_weights_differentiate_polynomials(order in 1usize..=4, wide in any::<bool>(), x0 in -1.0f64..1.0) {
        let width = if wide || order > 2 { 7 } else { 5 };
        let w = fd_weights(order, width);
        let m = (width / 2) as i32;
        // exact for monomials up to degree width - 1
        for deg in 0..width as i32 {
            let got: f64 = (-m..=m).zip(&w).map(|(i, wi)| wi * (i as f64).powi(deg)).sum();
            let want = if deg as usize == order { (1..=order).product::<usize>() as f64 } else { 0.0 };
            prop_assert!((got - want).abs() < 1e-9, "deg {} order {}: {} vs {}", deg, order, got, want);
        }
        let sc = FdScheme::new(0.05, order, width, 0).unwrap();
        let d = pearcey_lab::verify::fd_derivative(|x| Ok(x.powi(order as i32)), x0, &sc).unwrap();
        let fact = (1..=order).product::<usize>() as f64;
        prop_assert!((d - fact).abs() < 1e-6 * fact);
    }
}
