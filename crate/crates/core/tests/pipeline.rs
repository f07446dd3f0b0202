use bsenergy::encoder::{BsidMode, PlanTemplate};
use bsenergy::evaluation::{
    evaluate, evaluate_predictions, paper_grid, run_ablation, AblationSpec, RunStatus,
};
use bsenergy::ingest::{
    parse_canonical, read_manifest, split_by_manifest, write_canonical, write_manifest,
};
use bsenergy::record::Cohort;
use bsenergy::synthgen::{
    generate, oracle_energy, read_ground_truth, write_ground_truth, SynthConfig,
};
use bsenergy::training::{prepare, train, Selection, TrainConfig};

fn small() -> SynthConfig {
    SynthConfig {
        n_bs: 12,
        n_rutypes: 2,
        days: 2,
        ..SynthConfig::default()
    }
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 64,
        ..TrainConfig::default()
    }
}

#[test]
fn files_on_disk_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let (data, manifest, truth) = generate(&small()).unwrap();
    write_canonical(&data, dir.path().join("data.csv")).unwrap();
    write_manifest(&manifest, dir.path().join("split.csv")).unwrap();
    write_ground_truth(&truth, dir.path().join("truth.csv")).unwrap();

    let data = parse_canonical(dir.path().join("data.csv")).unwrap();
    let manifest = read_manifest(dir.path().join("split.csv")).unwrap();
    assert_eq!(
        read_ground_truth(dir.path().join("truth.csv")).unwrap(),
        truth
    );
    let (train_data, test_data) = split_by_manifest(&data, &manifest).unwrap();
    assert_eq!(train_data.len() + test_data.len(), data.len());

    let cfg = quick(5);
    let prepared = prepare(
        &PlanTemplate::abf(BsidMode::Embedding),
        &train_data,
        None,
        &cfg,
    )
    .unwrap();
    let outcome = train(
        &prepared.fit,
        &prepared.selection,
        prepared.model_config.clone(),
        &cfg,
    )
    .unwrap();
    assert_eq!(outcome.history.len(), 5);
    assert!(outcome.history.iter().all(|e| e.train_mape.is_finite()));
    let report = evaluate(&outcome.model, &prepared.plan, &test_data, &manifest).unwrap();
    assert!(report.cross_domain_mape().is_some() && report.in_domain_mape().is_some());
    assert!(report.average_mape().unwrap() < 1.0);
}

#[test]
fn noiseless_oracle_scores_zero() {
    let (data, manifest, truth) = generate(&SynthConfig {
        noise_rel: 0.0,
        ..small()
    })
    .unwrap();
    let (_, test) = split_by_manifest(&data, &manifest).unwrap();
    let predictions: Vec<f64> = test
        .records
        .iter()
        .map(|r| oracle_energy(&truth, r).unwrap())
        .collect();
    let report = evaluate_predictions(&test.records, &predictions, &manifest).unwrap();
    assert!(report.average_mape().unwrap() < 1e-9, "{report}");
    assert!(report.cohort(Cohort::CrossDomain).unwrap().count > 0);
}

#[test]
fn same_features_draw_different_energy_at_different_stations() {
    let (data, _, truth) = generate(&SynthConfig {
        noise_rel: 0.0,
        ..small()
    })
    .unwrap();
    let r = &data.records[0];
    let distinct = data
        .bs_ids()
        .into_iter()
        .filter(|id| *id != r.bs_id)
        .filter(|id| truth.stations[id].ru_type == r.ru_type)
        .map(|id| {
            let mut twin = r.clone();
            twin.bs_id = id;
            oracle_energy(&truth, &twin).unwrap()
        })
        .filter(|e| (e - r.energy).abs() > 1e-3 * r.energy)
        .count();
    assert!(distinct > 0);
}

#[test]
fn ablation_trains_duplicates_once() {
    let (data, manifest, _) = generate(&SynthConfig {
        n_bs: 8,
        days: 1,
        ..small()
    })
    .unwrap();
    let (train_data, test_data) = split_by_manifest(&data, &manifest).unwrap();
    let spec = AblationSpec {
        runs: paper_grid(),
        train: TrainConfig {
            selection: Selection::PaperProtocol,
            ..quick(2)
        },
    };
    let rows = run_ablation(&spec, &train_data, &test_data, &manifest).unwrap();
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().all(|r| r.status == RunStatus::Ok));
    let find = |n: &str| rows.iter().find(|r| r.name == n).unwrap();
    for alias in ["abf", "arl"] {
        assert_eq!(find(alias).report, find("embedding_rm").report);
        assert_eq!(find(alias).params, find("embedding_rm").params);
    }
    assert_ne!(find("no_attention").params, find("embedding_rm").params);
}
