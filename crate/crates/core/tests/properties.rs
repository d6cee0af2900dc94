//! Randomized invariants of the fully discrete scheme.

use std::sync::OnceLock;

use proptest::prelude::*;

use meshless_wave::assembly::{assemble, AssemblyOptions, DiscreteSystem};
use meshless_wave::centers::uniform_centers;
use meshless_wave::diagnostics::discrete_energy;
use meshless_wave::geometry::BoxDomain;
use meshless_wave::integrate::{divided_difference, Scheme, Stepper, StepperConfig};
use meshless_wave::kernel::Kernel;
use meshless_wave::quadrature::composite_gauss_1d;
use meshless_wave::system::{l2_projection, Nonlinearity, State};

const N: usize = 16;

fn system() -> &'static DiscreteSystem {
    static SYS: OnceLock<DiscreteSystem> = OnceLock::new();
    SYS.get_or_init(|| {
        let sigma = BoxDomain::interval(-4.0, 4.0).unwrap();
        let centers = uniform_centers(&sigma, &[N]).unwrap();
        let rule = composite_gauss_1d(&sigma.padded(1.0), 120, 9).unwrap();
        assemble(&Kernel::new(3, 2, 1.0, 1).unwrap(), &centers, &rule, AssemblyOptions::default()).unwrap()
    })
}

fn coeffs(scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, N)
}

fn nonlinearity() -> impl Strategy<Value = Nonlinearity> {
    prop_oneof![
        Just(Nonlinearity::Zero),
        Just(Nonlinearity::SineGordon),
        Just(Nonlinearity::Cubic)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn avf_conserves_discrete_energy(alpha in coeffs(1.0), beta in coeffs(1.0), nl in nonlinearity(), tau in 0.005f64..0.05) {
        let sys = system();
        let st = State::new(0.0, alpha, beta);
        let stepper = Stepper::new(sys, nl, StepperConfig::new(tau), Scheme::Avf).unwrap();
        let mut s = st.clone();
        let e0 = discrete_energy(sys, nl, &st);
        for _ in 0..5 {
            s = stepper.step(&s).unwrap().state;
        }
        let e1 = discrete_energy(sys, nl, &s);
        prop_assert!((e1 - e0).abs() <= 1e-11 * e0.abs().max(1.0), "E0 {e0} E5 {e1}");
    }

    #[test]
    fn linear_step_is_time_reversible(alpha in coeffs(1.0), beta in coeffs(1.0), tau in 0.005f64..0.05) {
        let sys = system();
        let stepper = Stepper::new(sys, Nonlinearity::Zero, StepperConfig::new(tau), Scheme::Avf).unwrap();
        let fwd = stepper.step(&State::new(0.0, alpha.clone(), beta.clone())).unwrap().state;
        let back = stepper
            .step(&State::new(0.0, fwd.alpha, fwd.beta.iter().map(|b| -b).collect()))
            .unwrap()
            .state;
        for (a, b) in back.alpha.iter().zip(&alpha) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        for (a, b) in back.beta.iter().zip(&beta) {
            prop_assert!((a + b).abs() <= 1e-9);
        }
    }

    #[test]
    fn l2_projection_reproduces_trial_functions(c in coeffs(2.0)) {
        let sys = system();
        let back = l2_projection(sys, &sys.k().mul_vec(&c)).unwrap();
        for (a, b) in back.iter().zip(&c) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn divided_difference_is_symmetric_and_a_chord(a in -3.0f64..3.0, b in -3.0f64..3.0, nl in nonlinearity()) {
        let g = divided_difference(nl, a, b, 1e-7);
        prop_assert_eq!(g, divided_difference(nl, b, a, 1e-7));
        if (b - a).abs() > 1e-3 {
            let chord = (nl.potential(b) - nl.potential(a)) / (b - a);
            prop_assert!((g - chord).abs() <= 1e-9 * (1.0 + chord.abs()), "{g} vs {chord}");
        }
    }
}
