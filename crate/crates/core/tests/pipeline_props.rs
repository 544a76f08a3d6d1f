use simcal::harness::{loso_scores, sweep_beta, HarnessOptions, Rung};
use simcal::metrics::{popularity_histogram, top_k_accuracy};
use simcal::pipeline::{run, run_detailed};
use simcal::synth::{generate, SynthSpec};
use simcal::{CalibConfig, CslsMode, Stage};

fn small() -> SynthSpec {
    SynthSpec {
        d: 16,
        n_classes: 50,
        n_subjects: 3,
        q_per_class_per_subject: 4,
        n_hub: 5,
        ..Default::default()
    }
}

fn small_cfg() -> CalibConfig {
    CalibConfig {
        k_max: 10,
        m_density: Some(25),
        ..Default::default()
    }
}

#[test]
fn hub_classes_are_popular_under_plain_cosine() {
    let spec = SynthSpec {
        hub_gamma: 0.8,
        n_hub: 10,
        ..Default::default()
    };
    let data = generate(&spec).unwrap();
    let off = Rung::RawCosine.config(&CalibConfig::default());
    let (s, _) = run(&data.queries, &data.candidates, &off).unwrap();
    let pop = popularity_histogram(&s, 5).unwrap();
    let mut rest: Vec<usize> = (0..spec.n_classes)
        .filter(|c| !data.hub_classes.contains(c))
        .map(|c| pop[c])
        .collect();
    rest.sort_unstable();
    let median = rest[rest.len() / 2];
    let hubs: Vec<usize> = data.hub_classes.iter().map(|&c| pop[c]).collect();
    assert!(
        hubs.iter().all(|&h| h > median),
        "hub N_5 {hubs:?} vs non-hub median {median}"
    );
}

#[test]
fn noiseless_data_is_retrieved_perfectly_by_every_rung() {
    let data = generate(&small().noiseless()).unwrap();
    let labels = data.queries.label_of.clone().unwrap();
    for rung in Rung::LADDER {
        let (s, _) = run(&data.queries, &data.candidates, &rung.config(&small_cfg())).unwrap();
        assert_eq!(
            top_k_accuracy(&s, Some(&labels), 1).unwrap(),
            1.0,
            "{}",
            rung.name()
        );
    }
}

#[test]
fn final_scores_do_not_depend_on_labels() {
    let data = generate(&small()).unwrap();
    let cfg = CalibConfig {
        zscore: true,
        ..small_cfg()
    };
    let (a, _) = run(&data.queries, &data.candidates, &cfg).unwrap();
    let (b, _) = run(&data.queries.without_labels(), &data.candidates, &cfg).unwrap();
    assert_eq!(a, b);
    for s in 0..3 {
        let x = loso_scores(&data.queries, &data.candidates, &cfg, s, None).unwrap();
        let y = loso_scores(
            &data.queries.without_labels(),
            &data.candidates,
            &cfg,
            s,
            Some(200),
        )
        .unwrap();
        assert_eq!(x.final_scores, y.final_scores);
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let data = generate(&small()).unwrap();
    let (many, _) = run(&data.queries, &data.candidates, &small_cfg()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let (one, _) = pool
        .install(|| run(&data.queries, &data.candidates, &small_cfg()))
        .unwrap();
    assert_eq!(many, one);
    let regenerated = pool.install(|| generate(&small())).unwrap();
    assert_eq!(regenerated.queries, data.queries);
}

#[test]
fn stage_toggles_compose() {
    let data = generate(&small()).unwrap();
    let off = CalibConfig {
        csls_mode: CslsMode::Off,
        struct_poe: false,
        ..small_cfg()
    };
    let (snew, cal) = run_detailed(&data.queries, &data.candidates, &off).unwrap();
    assert_eq!(cal.final_scores.scores, snew.scores);
    assert_eq!(cal.final_scores.stage, Stage::Final);
    assert!(cal.structural.is_none());
}

#[test]
fn beta_sweep_recovers_ada_csls_and_repeats() {
    let data = generate(&small()).unwrap();
    let opts = HarnessOptions {
        ks: vec![1, 5],
        ..Default::default()
    };
    let sweep = sweep_beta(
        &data.queries,
        &data.candidates,
        &small_cfg(),
        &[0.0, 1.9, 1.9],
        &opts,
    )
    .unwrap();
    assert_eq!(sweep.rows[1], sweep.rows[2]);
    let ada = Rung::AdaCsls.config(&small_cfg());
    for (fold, report) in sweep.rows[0]
        .summary
        .folds
        .iter()
        .zip(&sweep.rows[0].summary.reports)
    {
        let f = loso_scores(&data.queries, &data.candidates, &ada, *fold, None).unwrap();
        let labels: Vec<usize> = data
            .queries
            .rows_of_subject(*fold)
            .iter()
            .map(|&i| data.queries.label_of.as_ref().unwrap()[i])
            .collect();
        let want = top_k_accuracy(&f.final_scores, Some(&labels), 1).unwrap();
        assert_eq!(report.top_k_acc[&1], want);
    }
}
