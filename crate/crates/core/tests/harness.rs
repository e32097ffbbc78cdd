use std::collections::HashSet;

use rieszlab::harness::{registry, run, spec, ExperimentConfig, CSV_COLUMNS};
use rieszlab::Error;

fn small_decay_config() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(
        r#"
experiment = "resolvent-decay"
threads = 1
spacing = 0.125
t = [2, 4, 8]
"#,
    )
    .unwrap()
}

#[test]
fn registry_contents() {
    let ids = registry();
    for id in [
        "conic-unbounded",
        "partial-conic-unbounded",
        "smooth-tiled",
        "gd-stability",
        "strip-gd",
        "compact-gd",
        "resolvent-decay",
        "appendix-lemmas",
        "heat-kernel-bounds",
        "rh-probe",
        "weighted-degenerate",
    ] {
        assert!(ids.contains(&id), "{id}");
    }
    assert_eq!(ids.iter().collect::<HashSet<_>>().len(), ids.len());
    assert_eq!(ids, registry());
    for id in ids {
        ExperimentConfig::defaults(id).unwrap().validate().unwrap();
    }
}

#[test]
fn config_errors() {
    assert!(matches!(ExperimentConfig::from_toml_str("experiment = \"foo\""), Err(Error::UnknownExperiment(_))));
    assert!(matches!(ExperimentConfig::defaults("foo"), Err(Error::UnknownExperiment(_))));
    let cases = [
        "spacing = 0.1",
        "experiment = 3",
        "experiment = \"strip-gd\"\nno_such_key = 1",
        "experiment = \"strip-gd\"\nr = \"many\"",
        "experiment = \"strip-gd\"\nrandom_starts = 4",
        "experiment = \"strip-gd\"\nfield = \"strip{a0=identity,pert=scalar{c=2}\"",
        "experiment = \"strip-gd\"\nfield = \"warp{x=1}\"",
        "experiment = \"strip-gd\"\nthreads = 0",
        "experiment = \"strip-gd\"\nseed = -1",
        "experiment = \"strip-gd\"\nr = []",
        "experiment = \"smooth-tiled\"\nfield = \"tiled{base=meyer_conic{beta=-0.5},radii=[2,50],moll=1}\"",
        "not toml at all [",
    ];
    for text in cases {
        let err = ExperimentConfig::from_toml_str(text).expect_err(text);
        assert!(
            matches!(err, Error::Config(_) | Error::FieldSpec { .. } | Error::Schedule(_) | Error::InvalidArgument(_)),
            "{text}: {err:?}"
        );
    }
    let mut cfg = ExperimentConfig::defaults("strip-gd").unwrap();
    cfg.set("r", toml::Value::Array(vec![4.into(), 8.into(), 16.into()])).unwrap();
    assert_eq!(cfg.f64_list("r").unwrap(), vec![4.0, 8.0, 16.0]);
    assert!(cfg.set("r", "text").is_err());
}

#[test]
fn spec_strings_round_trip() {
    for id in [
        "identity",
        "meyer_conic{beta=-0.5}",
        "compact{a0=identity,pert=scalar{c=1.5},R0=0.25}",
        "tiled{base=meyer_conic{beta=-0.5},radii=[2,100],moll=1}",
    ] {
        assert_eq!(spec::parse(id).unwrap().to_string(), id);
        assert_eq!(spec::build_field(id, 2).unwrap().id(), id);
    }
}

#[test]
fn single_threaded_runs_are_bit_reproducible() {
    let cfg = small_decay_config();
    let csv = |cfg: &ExperimentConfig| {
        let report = run(cfg).unwrap();
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        out
    };
    let (a, b) = (csv(&cfg), csv(&cfg));
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
    assert!(text.lines().count() > 4);

    let mut reseeded = cfg.clone();
    reseeded.set_seed(7).unwrap();
    assert_eq!(run(&reseeded).unwrap().records.len(), run(&cfg).unwrap().records.len());
}

#[test]
fn outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_decay_config();
    cfg.output_dir = Some(dir.path().to_path_buf());
    let report = run(&cfg).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("resolvent-decay.csv")).unwrap();
    assert_eq!(csv.lines().count(), report.records.len() + 1);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("resolvent-decay.json")).unwrap()).unwrap();
    assert_eq!(json["experiment"], "resolvent-decay");
    assert_eq!(json["passed"], report.passed);
    assert!(json["verdicts"].as_array().is_some_and(|v| !v.is_empty()));
    assert!(json["thresholds"]["exponent_min"].is_number());
    assert!(json["wall_clock_seconds"].is_number());
}

#[test]
fn sample_failures_fail_the_run_but_keep_data() {
    // No node of the coarse mesh lies within r/2 of the centre, so only that sample fails.
    let cfg = ExperimentConfig::from_toml_str(
        r#"
experiment = "rh-probe"
threads = 1
spacing = [0.25, 0.0078125]
center = [0.1, 0.1]
r = 0.05
p = [3.0]
"#,
    );
    let report = run(&cfg.unwrap()).unwrap();
    assert!(!report.passed);
    assert_eq!(report.failures.len(), 1, "{:?}", report.failures);
    assert!(report.failures[0].contains("h=0.25"), "{:?}", report.failures);
    assert!(report.records.iter().any(|r| r.h == Some(0.0078125)));
}
