use proptest::prelude::*;

use ventmech::analysis::{classify_quadratic, summarize_titration, DEFAULT_EPS_LIN};
use ventmech::ident_pipeline::{nrmse_pct, run_pipeline, FitStatus, PipelineConfig};
use ventmech::lung_models::{simulate_volume, LinearLungModel, QuadraticLungModel};
use ventmech::nls_solver::{forward_jacobian, lm_minimize, LmOptions};
use ventmech::patient_sim::{
    add_uniform_noise, hysteresis_pc, sigmoid_pc, simulate_recording, HysteresisPV, LoopSpan,
    PatientSpec, PeepStep, Phase, PvCurve, SigmoidPV, VentMode, VentilatorProgram,
};
use ventmech::signal_io::{segment_cycles, TimeSeries};

fn drive(n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|k| if k < n / 3 { amp } else { 0.0 }).collect()
}

fn sigmoid_patient(
    b: f64,
    c: f64,
    d: f64,
    peep_offset: f64,
    mode: VentMode,
    seed: u64,
) -> PatientSpec {
    let curve = SigmoidPV {
        a_ml: 0.0,
        b_ml: b,
        c_cmh2o: c,
        d_cmh2o: d,
    };
    // Keep the time constant near 0.5 s at the steepest point.
    let raw = 0.5 / (b / (4.0 * d));
    PatientSpec {
        pv_curve: PvCurve::Sigmoid(curve),
        raw_cmh2o_s_per_ml: raw,
        program: VentilatorProgram {
            mode,
            peep_schedule: vec![PeepStep {
                peep_cmh2o: (c + peep_offset * d).max(0.5),
                n_cycles: 4,
            }],
            breath_rate_per_min: 12.0,
            amplitude: if mode == VentMode::Pcv {
                1.25 * d
            } else {
                0.12 * b
            },
            ..VentilatorProgram::default()
        },
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadratic_with_zero_curvature_is_linear(c in 5.0f64..300.0, raw in 1e-3f64..0.05, amp in 1.0f64..30.0) {
        let pv = drive(200, amp);
        let lin = simulate_volume(&LinearLungModel::new(c, raw).unwrap(), &pv, 0.01);
        let quad = simulate_volume(&QuadraticLungModel::new(1.0 / c, 0.0, raw).unwrap(), &pv, 0.01);
        for (a, b) in lin.volume.iter().zip(&quad.volume) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn sigmoid_inverse_round_trips(b in 500.0f64..6000.0, c in 5.0f64..25.0, d in 1.0f64..8.0, u in 0.01f64..0.99) {
        let s = SigmoidPV { a_ml: 0.0, b_ml: b, c_cmh2o: c, d_cmh2o: d };
        let v = u * b;
        let p = sigmoid_pc(&s, v).unwrap();
        prop_assert!((s.volume_at(p) - v).abs() <= 1e-9 * b);
    }

    #[test]
    fn inspiratory_limb_lies_above_expiratory(
        width in 0.0f64..5.0,
        lo in 0.1f64..0.5,
        extent in 0.05f64..0.4,
        u in 0.0f64..1.0,
    ) {
        let h = HysteresisPV { base: SigmoidPV::default(), loop_width_cmh2o: width };
        let span = LoopSpan { v_min_ml: lo * 4000.0, v_max_ml: (lo + extent) * 4000.0 };
        let v = span.v_min_ml + u * (span.v_max_ml - span.v_min_ml);
        let up = hysteresis_pc(&h, &span, v, Phase::Inspiration).unwrap();
        let down = hysteresis_pc(&h, &span, v, Phase::Expiration).unwrap();
        prop_assert!(up >= down);
        prop_assert!(up - down <= width + 1e-12);
    }

    #[test]
    fn region_call_is_unit_free(a1 in 1e-4f64..0.1, a2 in -1e-4f64..1e-4, vt in 50.0f64..1500.0, k in 0.01f64..100.0) {
        let base = classify_quadratic(a1, a2, vt, DEFAULT_EPS_LIN).unwrap();
        let scaled = classify_quadratic(a1 / k, a2 / (k * k), vt * k, DEFAULT_EPS_LIN).unwrap();
        prop_assert!((base.curvature_ratio - scaled.curvature_ratio).abs() <= 1e-9 * base.curvature_ratio.max(1.0));
        if (base.curvature_ratio - DEFAULT_EPS_LIN).abs() > 1e-9 {
            prop_assert_eq!(base.region, scaled.region);
        }
    }

    #[test]
    fn nrmse_is_affine_invariant(
        v in prop::collection::vec(-500.0f64..500.0, 8..60),
        e in prop::collection::vec(-5.0f64..5.0, 60),
        shift in -1e3f64..1e3,
        scale in 0.01f64..100.0,
    ) {
        let n = v.len();
        prop_assume!(v.iter().any(|x| (x - v[0]).abs() > 1.0));
        let v_hat: Vec<f64> = v.iter().zip(&e[..n]).map(|(a, b)| a + b).collect();
        let base = nrmse_pct(&v, &v_hat).unwrap();
        let t = |xs: &[f64]| xs.iter().map(|x| x * scale + shift).collect::<Vec<_>>();
        let moved = nrmse_pct(&t(&v), &t(&v_hat)).unwrap();
        prop_assert!((base - moved).abs() < 1e-6);
        prop_assert!(base <= 100.0);
        prop_assert!((nrmse_pct(&v, &v).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_noise_stays_within_amplitude(
        p in prop::collection::vec(0.0f64..40.0, 10..200),
        pct_p in 0.0f64..20.0,
        pct_f in 0.0f64..20.0,
        seed in any::<u64>(),
    ) {
        let f: Vec<f64> = p.iter().map(|x| 30.0 * x - 200.0).collect();
        let clean = TimeSeries::new(100.0, 0.0, p.clone(), f.clone()).unwrap();
        let (noisy, (ap, af)) = add_uniform_noise(&clean, pct_p, pct_f, seed).unwrap();
        let ptp = |x: &[f64]| x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!((ap - pct_p / 100.0 * ptp(&p)).abs() < 1e-9);
        prop_assert!((af - pct_f / 100.0 * ptp(&f)).abs() < 1e-9);
        for (a, b) in noisy.pressure.iter().zip(&p) {
            prop_assert!((a - b).abs() <= ap + 1e-12);
        }
        for (a, b) in noisy.flow.iter().zip(&f) {
            prop_assert!((a - b).abs() <= af + 1e-12);
        }
        let (again, _) = add_uniform_noise(&clean, pct_p, pct_f, seed).unwrap();
        prop_assert_eq!(again, noisy);
    }

    #[test]
    fn solver_respects_bounds_and_never_raises_cost(
        target in prop::collection::vec(-10.0f64..10.0, 2),
        lo in -5.0f64..0.0,
        width in 0.5f64..5.0,
        start in 0.0f64..1.0,
    ) {
        let hi = lo + width;
        let theta0 = vec![lo + start * width; 2];
        let opts = LmOptions::with_bounds(vec![lo; 2], vec![hi; 2]);
        let rep = lm_minimize(
            |t: &[f64]| Ok(vec![t[0] - target[0], t[1] - target[1], 0.1 * t[0] * t[1]]),
            &theta0,
            &opts,
        ).unwrap();
        for t in &rep.theta {
            prop_assert!(*t >= lo && *t <= hi);
        }
        prop_assert!(rep.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn forward_jacobian_matches_central_difference(x in -2.0f64..2.0, y in 0.5f64..3.0) {
        let f = |t: &[f64]| Ok(vec![t[0].sin() * t[1], t[1].ln() + t[0] * t[0], (t[0] - t[1]).exp()]);
        let theta = [x, y];
        let r0 = f(&theta).unwrap();
        let h = 1e-6;
        let jac = forward_jacobian(&f, &theta, &r0, &[h, h], &[f64::INFINITY; 2]).unwrap();
        for j in 0..2 {
            let mut up = theta;
            let mut down = theta;
            up[j] += 1e-5;
            down[j] -= 1e-5;
            let (ru, rd) = (f(&up).unwrap(), f(&down).unwrap());
            for i in 0..3 {
                let central = (ru[i] - rd[i]) / 2e-5;
                prop_assert!((jac[(i, j)] - central).abs() <= 1e-4 * central.abs().max(1.0));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulation_starts_at_equilibrium_and_segments_exactly(
        b in 2500.0f64..5000.0,
        c in 10.0f64..18.0,
        d in 3.0f64..5.0,
        offset in -2.5f64..1.5,
        vcv in any::<bool>(),
    ) {
        let mode = if vcv { VentMode::Vcv } else { VentMode::Pcv };
        let spec = sigmoid_patient(b, c, d, offset, mode, 0);
        let sim = match simulate_recording(&spec) {
            Ok(s) => s,
            Err(ventmech::Error::OutOfEnvelope { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert!(sim.truth.cycles[0].v_start_ml.abs() < 1e-9);
        let res = sim.equation_of_motion_residuals().unwrap();
        prop_assert!(res.iter().all(|r| r.abs() <= 1e-6));
        let cycles = segment_cycles(&sim.recording);
        prop_assert_eq!(cycles.len(), spec.program.total_cycles());
        for (cy, truth) in cycles.iter().zip(&sim.truth.cycles) {
            // Flow is zero on the first sample of a ramped breath.
            prop_assert!(cy.start_idx >= truth.start_sample && cy.start_idx <= truth.start_sample + 1);
        }
        // Segmenting an excerpt that keeps some expiration before the first
        // breath gives the same breaths back.
        let lead = cycles[0].start_idx.min(32);
        let from = cycles[0].start_idx - lead;
        let to = (cycles.last().unwrap().end_idx + 64).min(sim.recording.len());
        let again = segment_cycles(&sim.recording.slice(from..to).unwrap());
        prop_assert!(again.len() + 1 >= cycles.len());
        for (a, b) in again.iter().zip(&cycles) {
            prop_assert_eq!(a.start_idx + from, b.start_idx);
            prop_assert_eq!(&a.pv, &b.pv);
        }
    }

    #[test]
    fn gate_and_retry_invariants(
        b in 2500.0f64..5000.0,
        c in 10.0f64..18.0,
        d in 3.0f64..5.0,
        offset in -2.5f64..1.5,
        noise in 0.0f64..10.0,
        seed in any::<u64>(),
    ) {
        let mut spec = sigmoid_patient(b, c, d, offset, VentMode::Pcv, seed);
        spec.program.noise_pct_p = noise;
        spec.program.noise_pct_f = noise;
        let Ok(sim) = simulate_recording(&spec) else { return Ok(()) };
        let cycles = segment_cycles(&sim.recording);
        prop_assume!(!cycles.is_empty());
        let fits = match run_pipeline(&cycles, &PipelineConfig::default()) {
            Ok(f) => f,
            Err(ventmech::Error::Empty(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert_eq!(fits.len(), cycles.len());
        for f in &fits {
            if f.is_accepted() {
                let q = f.quadratic.unwrap();
                prop_assert!(q.a1_cmh2o_per_ml > 0.0);
                prop_assert!(f.nrmse_quadratic_pct.unwrap() >= f.threshold_pct.unwrap());
                // The quadratic family contains the linear one.
                prop_assert!(f.nrmse_quadratic_pct.unwrap() >= f.nrmse_linear_pct.unwrap() - 0.5);
            }
            match f.status {
                FitStatus::AcceptedAfterRetry => prop_assert!(f.aux_used),
                FitStatus::Accepted => prop_assert!(!f.aux_used),
                FitStatus::DiscardedFirstCycle => prop_assert_eq!(f.cycle_index, 0),
                FitStatus::Discarded => {}
            }
        }
    }

    #[test]
    fn warm_start_does_not_change_the_answer(
        b in 2500.0f64..5000.0,
        c in 10.0f64..18.0,
        d in 3.0f64..5.0,
        offset in -2.5f64..1.5,
    ) {
        let spec = sigmoid_patient(b, c, d, offset, VentMode::Pcv, 0);
        let Ok(sim) = simulate_recording(&spec) else { return Ok(()) };
        let cycles = segment_cycles(&sim.recording);
        let warm = run_pipeline(&cycles, &PipelineConfig::default()).unwrap();
        let cold = run_pipeline(&cycles, &PipelineConfig { warm_start: false, ..PipelineConfig::default() }).unwrap();
        for (w, c) in warm.iter().zip(&cold) {
            if !(w.is_accepted() && c.is_accepted()) {
                continue;
            }
            let (w, c) = (w.quadratic.unwrap(), c.quadratic.unwrap());
            let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1e-12);
            prop_assert!(rel(w.a1_cmh2o_per_ml, c.a1_cmh2o_per_ml) < 0.01);
            prop_assert!(rel(w.raw_cmh2o_s_per_ml, c.raw_cmh2o_s_per_ml) < 0.01);
            // a2 is tiny in the linear region; compare its pressure contribution instead.
            let vt = sim.truth.cycles[0].vt_ml;
            prop_assert!((w.a2_cmh2o_per_ml2 - c.a2_cmh2o_per_ml2).abs() * vt * vt < 0.01 * c.a1_cmh2o_per_ml * vt);
        }
    }

    #[test]
    fn titration_means_ignore_breath_order(seed in any::<u64>()) {
        let spec = ventmech::validation::titration_spec();
        let sim = simulate_recording(&spec).unwrap();
        let cycles = segment_cycles(&sim.recording);
        let fits = run_pipeline(&cycles, &PipelineConfig::default()).unwrap();
        let base = summarize_titration(&fits, &cycles, Some(&spec.program), DEFAULT_EPS_LIN).unwrap();
        // Shuffle fit payloads between breaths of the same step.
        let mut shuffled = fits.clone();
        let mut start = 0;
        let mut rng = seed;
        for step in &spec.program.peep_schedule {
            let block = &mut shuffled[start..start + step.n_cycles];
            for i in (1..block.len()).rev() {
                rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                block.swap(i, (rng >> 33) as usize % (i + 1));
            }
            start += step.n_cycles;
        }
        for (i, f) in shuffled.iter_mut().enumerate() {
            f.cycle_index = i;
        }
        let other = summarize_titration(&shuffled, &cycles, Some(&spec.program), DEFAULT_EPS_LIN).unwrap();
        prop_assert_eq!(base.best_peep_linear, other.best_peep_linear);
        for (a, b) in base.levels.iter().zip(&other.levels) {
            prop_assert!((a.mean_a1 - b.mean_a1).abs() <= 1e-12 * a.mean_a1.abs());
            prop_assert!((a.mean_a2 - b.mean_a2).abs() <= 1e-9 * a.mean_a2.abs().max(1e-12));
            prop_assert_eq!(a.n_accepted, b.n_accepted);
        }
    }
}
