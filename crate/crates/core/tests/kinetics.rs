use precip_core::kinetics::{
    dissolution_rate, ode_step, precip_rate, regularized_heaviside, regularized_ode_step,
};
use precip_core::RateLaw;
use proptest::prelude::*;

fn law() -> RateLaw {
    RateLaw::default()
}

#[test]
fn table_of_rates() {
    assert_eq!(precip_rate(&law(), -0.3), 0.0);
    assert_eq!(precip_rate(&law(), 1.0), 1.0);
    assert_eq!(precip_rate(&law(), 0.5), 0.25);
    assert_eq!(dissolution_rate(&law(), 0.5, 0.0), 0.25);
    assert_eq!(dissolution_rate(&law(), 2.0, 0.0), 1.0);
    assert_eq!(dissolution_rate(&law(), 0.1, 0.3), 1.0);
    assert_eq!(dissolution_rate(&law(), 5.0, -0.1), 0.0);
    assert_eq!(regularized_heaviside(0.1, 0.05).unwrap(), 0.5);
    assert_eq!(regularized_heaviside(0.1, -1.0).unwrap(), 0.0);
    assert_eq!(regularized_heaviside(0.1, 1.0).unwrap(), 1.0);
    assert!(regularized_heaviside(0.0, 1.0).is_err());
}

#[test]
fn ode_steps_with_closed_forms() {
    let s = ode_step(&law(), 0.0, 0.01, 0.02).unwrap();
    assert!(s.v_new == 0.0 && (s.w_effective - 0.5).abs() < 1e-14);
    let s = ode_step(&law(), 2.0, 0.0, 0.1).unwrap();
    assert!((s.v_new - 0.3).abs() < 1e-14 && (s.w_effective - 1.0).abs() < 1e-14);
    let s = ode_step(&law(), 0.5, 0.0, 0.1).unwrap();
    assert!(s.v_new == 0.0 && (s.w_effective - 0.25).abs() < 1e-14);
    assert!(ode_step(&law(), 0.5, -1e-3, 0.1).is_err());
    assert!(ode_step(&law(), 0.5, 0.1, 0.0).is_err());
}

/// Piecewise-linear solution of v' = k(r − 1) until v hits 0, then v ≡ 0.
fn oracle(k: f64, r: f64, v: f64, dt: f64) -> (f64, f64) {
    if v > 0.0 && r < 1.0 {
        let tau = v / (k * (1.0 - r));
        if tau < dt {
            // w = 1 before the event and r after it.
            return (0.0, (tau + r * (dt - tau)) / dt);
        }
        return (v - k * (1.0 - r) * dt, 1.0);
    }
    if r >= 1.0 {
        return (v + k * (r - 1.0) * dt, 1.0);
    }
    (0.0, r)
}

proptest! {
    #[test]
    fn exact_step_matches_the_event_oracle(
        u in 0.0f64..2.0, v in 0.0f64..0.5, dt in 1e-4f64..1.0, k in 0.1f64..5.0, p in 1.0f64..4.0,
    ) {
        let law = RateLaw::new(0.0, 1.0, p, k).unwrap();
        let s = ode_step(&law, u, v, dt).unwrap();
        let (v_exact, w_exact) = oracle(k, law.rate(u), v, dt);
        prop_assert!((s.v_new - v_exact).abs() <= 1e-12 * (1.0 + v));
        prop_assert!((s.w_effective - w_exact).abs() <= 1e-10);
        prop_assert!(s.v_new >= 0.0);
        // Mass identity of the step.
        let lhs = s.v_new - v;
        let rhs = dt * k * (law.rate(u) - s.w_effective);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + v + dt * k * law.rate(u)));
    }

    #[test]
    fn regularized_step_approaches_the_exact_one(
        u in 0.0f64..1.5, v in 0.0f64..0.5, dt in 0.01f64..0.5,
    ) {
        let law = law();
        let exact = ode_step(&law, u, v, dt).unwrap();
        let mut last = f64::INFINITY;
        for delta in [1e-1, 1e-2, 1e-3, 1e-4] {
            let reg = regularized_ode_step(&law, delta, u, v, dt).unwrap();
            let err = (reg.v_new - exact.v_new).abs();
            // The ramp holds v at δ·min(r, 1) instead of 0.
            prop_assert!(err <= delta * (1.0 + 1e-9), "delta {} err {}", delta, err);
            prop_assert!(err <= last * (1.0 + 1e-9) + 1e-15);
            last = err;
        }
    }
}
