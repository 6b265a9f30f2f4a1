use insertion_core::insertion::{InsertionModule, ModuleConfig, ToolSpec};
use insertion_core::tissue::{standard_samples, TissueLayer, TissueSample};
use proptest::prelude::*;

proptest! {
    #[test]
    fn loading_is_monotone_until_puncture(setup in 0usize..4, steps in 50usize..400) {
        let mut sample = standard_samples().swap_remove(setup);
        let skin_puncture = sample.layers()[0].puncture_force;
        let mut last = 0.0;
        for k in 1..=steps {
            let depth = 0.0021 * k as f64 / steps as f64;
            let f = sample.axial_force(depth, 0.0).unwrap();
            if !f.punctured.is_empty() {
                prop_assert!(f.force.abs() < last);
                break;
            }
            prop_assert!(-f.force >= last);
            prop_assert!(-f.force < skin_puncture);
            last = -f.force;
        }
    }

    #[test]
    fn each_layer_punctures_once_on_a_sweep(setup in 0usize..4, n in 200usize..2000) {
        let mut sample = standard_samples().swap_remove(setup);
        let mut events = vec![0; sample.layers().len()];
        for k in 0..=n {
            let depth = 0.012 * k as f64 / n as f64;
            for i in sample.axial_force(depth, 0.001).unwrap().punctured {
                events[i] += 1;
            }
        }
        prop_assert!(events.iter().all(|&e| e == 1), "{:?}", events);
        prop_assert!(sample.punctured().iter().all(|p| *p));
    }

    #[test]
    fn delivered_force_never_exceeds_limit(
        forces in prop::collection::vec(-60.0f64..5.0, 1..200),
        u in -0.05f64..0.05,
    ) {
        let tool = ToolSpec::default();
        let limit = tool.max_insertion_force;
        let mut module = InsertionModule::new(tool, ModuleConfig::default(), 3).unwrap();
        for f in forces {
            let report = module.actuate(u, 0.0, f, 1e-3).unwrap();
            prop_assert!(report.delivered_force <= limit);
            prop_assert!(module.state().velocity.abs() <= module.tool().max_speed);
        }
    }

    #[test]
    fn motor_angle_accounts_for_depth(us in prop::collection::vec(-0.02f64..0.02, 1..300)) {
        let mut module = InsertionModule::new(ToolSpec::default(), ModuleConfig::default(), 0).unwrap();
        for u in us {
            module.actuate(u, 1.0, -0.5, 1e-3).unwrap();
        }
        prop_assert!((module.depth_from_m2() - module.state().depth).abs() < 1e-12);
    }
}

#[test]
fn stiff_tissue_saturates_instead_of_overloading() {
    let hard = TissueLayer::calibrated("hard", 0.02, 5000.0, 1e6, 0.005, 10.0, 1.0);
    let mut tissue = TissueSample::new("hard", vec![hard]).unwrap();
    let mut module = InsertionModule::new(ToolSpec::default(), ModuleConfig::default(), 0).unwrap();
    let mut saturated = false;
    for _ in 0..20_000 {
        let depth = module.state().depth;
        let f = tissue.axial_force(depth.max(0.0), 0.002).unwrap();
        let r = module.actuate(0.002, 0.0, f.force, 1e-3).unwrap();
        assert!(r.delivered_force <= 10.0);
        if r.force_saturated {
            saturated = true;
            // advance slowed in proportion to the excess load
            let expected = 0.002 * 10.0 / -f.force;
            assert!((module.state().velocity - expected).abs() < 1e-15);
        }
    }
    assert!(saturated);
}
