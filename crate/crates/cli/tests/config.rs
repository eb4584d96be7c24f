use crobust_cli::config::{
    MethodName, ModelConfig, OutputFormat, PeriodEffectsName, SimulateConfig, TestSpec, VcovName,
    WorkingModelConfig,
};
use crobust_cli::{parse_config, serialize_config, ErrorKind, RunConfig};
use proptest::prelude::*;
use std::collections::BTreeMap;

#[test]
fn minimal_fit_config_gets_defaults() {
    let c = parse_config(
        r#"{"data": "d.csv", "model": {"outcome": "y", "covariates": ["x"], "cluster": "g"}}"#,
    )
    .unwrap();
    assert_eq!(c.vcov, VcovName::Cr2);
    assert_eq!(c.method, MethodName::Aht);
    assert_eq!(c.working_model, WorkingModelConfig::Identity);
    assert_eq!(c.format, OutputFormat::Json);
    let m = c.model.unwrap();
    assert!(m.intercept && m.absorb_between.is_empty() && m.weights.is_none());
    assert_eq!(m.coefficient_names(), ["(Intercept)", "x"]);
}

#[test]
fn within_factors_replace_the_intercept() {
    let c = parse_config(
        r#"{"model": {"outcome": "y", "covariates": ["x"], "cluster": "g", "absorb_within": ["g"]}}"#,
    )
    .unwrap();
    assert_eq!(c.model.unwrap().coefficient_names(), ["x"]);
}

#[test]
fn type_mismatch_reports_the_key_path() {
    let e = parse_config(r#"{"simulate": {"reps": "many"}}"#).unwrap_err();
    assert_eq!(e.kind, ErrorKind::Config);
    assert_eq!(e.path.as_deref(), Some("simulate.reps"));
}

#[test]
fn unknown_vcov_is_rejected() {
    let e = parse_config(r#"{"vcov": "CR4"}"#).unwrap_err();
    assert_eq!(e.path.as_deref(), Some("vcov"));
}

#[test]
fn constraint_shapes_are_validated() {
    let model = r#""model": {"outcome": "y", "covariates": ["x", "z"], "cluster": "g"}"#;
    for (tests, fragment) in [
        (r#"[{"name": "a"}]"#, "exactly one"),
        (
            r#"[{"name": "a", "zero": ["x"], "rows": [{"x": 1}]}]"#,
            "exactly one",
        ),
        (
            r#"[{"name": "a", "rows": [{"x": 1}], "rhs": [0, 1]}]"#,
            "right-hand",
        ),
        (
            r#"[{"name": "a", "zero": ["x"]}, {"name": "a", "zero": ["z"]}]"#,
            "duplicate",
        ),
        (r#"[{"name": "a", "rows": [{"x": 1, "q": 2}]}]"#, "`q`"),
    ] {
        let e = parse_config(&format!(r#"{{{model}, "tests": {tests}}}"#)).unwrap_err();
        assert_eq!(e.kind, ErrorKind::Config);
        assert!(e.message.contains(fragment), "{}: {}", tests, e.message);
    }
}

fn name() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,6}"
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
        -1e3..1e3f64
    ]
}

prop_compose! {
    fn model()(
        covariates in prop::collection::btree_set(name(), 1..5),
        between in prop::collection::vec(name(), 0..3),
        within in prop::collection::vec(name(), 0..2),
        weights in prop::option::of(name()),
        intercept in any::<bool>(),
    ) -> ModelConfig {
        ModelConfig {
            outcome: "outcome".into(),
            covariates: covariates.into_iter().collect(),
            absorb_between: between,
            absorb_within: within,
            cluster: "cluster".into(),
            weights,
            intercept,
        }
    }
}

fn method() -> impl Strategy<Value = MethodName> {
    prop_oneof![
        Just(MethodName::Aht),
        Just(MethodName::Standard),
        Just(MethodName::Chi2)
    ]
}

fn tests_for(model: &ModelConfig) -> impl Strategy<Value = Vec<TestSpec>> {
    let names = model.coefficient_names();
    let row = prop::collection::btree_map(prop::sample::select(names.clone()), finite(), 1..3);
    let spec = (
        any::<bool>(),
        prop::collection::vec(prop::sample::select(names), 1..3),
        prop::collection::vec(row, 1..3),
        any::<bool>(),
        prop::option::of(method()),
    )
        .prop_flat_map(|(use_zero, zero, rows, with_rhs, method)| {
            let q = rows.len();
            prop::collection::vec(finite(), q).prop_map(move |rhs| {
                let (zero, rows, rhs) = if use_zero {
                    (zero.clone(), Vec::<BTreeMap<String, f64>>::new(), None)
                } else {
                    (Vec::new(), rows.clone(), with_rhs.then_some(rhs))
                };
                (zero, rows, rhs, method)
            })
        });
    prop::collection::vec(spec, 0..4).prop_map(|specs| {
        specs
            .into_iter()
            .enumerate()
            .map(|(i, (zero, rows, rhs, method))| TestSpec {
                name: format!("h{i}"),
                zero,
                rows,
                rhs,
                method,
            })
            .collect()
    })
}

prop_compose! {
    fn simulate()(
        designs in prop::option::of(prop::collection::vec(1u8..=6, 1..3)),
        tau2 in prop::option::of(prop::collection::vec(finite(), 1..3)),
        reps in 1usize..1000,
        seed in any::<u64>(),
        by_outcome in any::<bool>(),
        out in prop::option::of(name()),
    ) -> SimulateConfig {
        SimulateConfig {
            designs,
            m: Some(vec![15, 30]),
            n: None,
            tau2,
            rho: Some(vec![0.2]),
            sigma_delta2: None,
            hypotheses: vec!["1a".into()],
            methods: vec![MethodName::Chi2],
            alphas: vec![0.05, 0.1],
            reps,
            seed,
            period_effects: if by_outcome { PeriodEffectsName::ByOutcome } else { PeriodEffectsName::Shared },
            dataset_out: out,
        }
    }
}

fn config() -> impl Strategy<Value = RunConfig> {
    (
        prop::option::of(model()),
        any::<bool>(),
        prop::option::of(simulate()),
    )
        .prop_flat_map(|(model, csv, sim)| {
            let tests = match &model {
                Some(m) => tests_for(m).boxed(),
                None => Just(Vec::new()).boxed(),
            };
            let working = prop_oneof![
                Just(WorkingModelConfig::Identity),
                prop::option::of(-0.99..0.99f64)
                    .prop_map(|rho| WorkingModelConfig::CompoundSymmetric { rho }),
            ];
            let vcov = prop_oneof![
                Just(VcovName::Cr0),
                Just(VcovName::Cr1),
                Just(VcovName::Cr1s),
                Just(VcovName::Cr2),
                Just(VcovName::Cr3)
            ];
            (tests, working, vcov, method()).prop_map(
                move |(tests, working_model, vcov, method)| RunConfig {
                    data: Some("data.csv".into()),
                    model: model.clone(),
                    working_model,
                    vcov,
                    method,
                    tests,
                    format: if csv {
                        OutputFormat::Csv
                    } else {
                        OutputFormat::Json
                    },
                    simulate: sim.clone(),
                },
            )
        })
}

proptest! {
    #[test]
    fn serialize_then_parse_is_identity(c in config()) {
        let text = serialize_config(&c);
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(back, c);
    }
}
