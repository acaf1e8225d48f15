use gdm::io::{load_cohort, read_parameter_table};
use gdm::synth::{EffectPattern, GeneratorSpec};
use gdm::workflow::{run, DataSource, InferenceChoice, Protocol, RunConfig};
use gdm::GdmError;

#[test]
fn four_row_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.csv");
    std::fs::write(&p, "subject_id,label,cov_age,cov_sex,f1,f2\ns1,AD,70,0,1.0,2.0\ns2,CN,71,1,1.5,2.5\ns3,AD,72,1,0.5,1.0\ns4,CN,69,0,2.0,0.0\n").unwrap();
    let c = load_cohort(&p).unwrap();
    assert_eq!((c.n(), c.d(), c.k_raw()), (4, 2, 2));
    assert_eq!(c.covariate_names, vec!["age", "sex"]);
    assert!(c.site.is_none());
}

#[test]
fn duplicate_id_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.csv");
    std::fs::write(&p, "subject_id,label,f1\ns1,a,1\ns2,b,2\ns1,a,3\n").unwrap();
    let e = load_cohort(&p).unwrap_err();
    assert!(matches!(e, GdmError::DuplicateId(_)));
    assert!(e.to_string().contains("s1"));
}

#[test]
fn missing_label_column_and_single_class() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.csv");
    std::fs::write(&p, "subject_id,f1\ns1,1\ns2,2\n").unwrap();
    assert!(load_cohort(&p).is_err());
    std::fs::write(&p, "subject_id,label,f1\ns1,a,1\ns2,a,2\n").unwrap();
    assert!(load_cohort(&p).is_err());
}

#[test]
fn noiseless_fit_ranks_the_true_support_first() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GeneratorSpec {
        n_per_site: vec![40],
        d: 25,
        effect_pattern: EffectPattern::Sparse { count: 4 },
        effect_amplitude: 1.0,
        noise_std: 0.0,
        seed: 8,
        ..Default::default()
    };
    let (_, truth) = gdm::synth::generate(&spec).unwrap();
    let config = RunConfig {
        protocol: Protocol::Fit,
        data: Some(DataSource::Synthetic { spec }),
        method: None,
        methods: vec![],
        lambda1: Some(1.0),
        lambda2: Some(1.0),
        grid: None,
        inference: InferenceChoice::Analytic,
        fdr_q: 0.05,
        seed: 0,
        folds: 5,
        zscore_features: false,
        output_dir: dir.path().to_path_buf(),
    };
    // an empty method list only matters to scenario and multisite
    let config = RunConfig {
        methods: vec![gdm::harness::Method::Gdm],
        ..config
    };
    run(&config).unwrap();
    let table = read_parameter_table(&dir.path().join("parameters.csv")).unwrap();
    let mut ranked: Vec<(String, f64)> = table.into_iter().collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    let mut top: Vec<usize> = ranked[..4].iter().map(|(name, _)| name[4..].parse::<usize>().unwrap() - 1).collect();
    top.sort_unstable();
    assert_eq!(top, truth.support());
}
