mod common;

use bsenergy::encoder::{fit, BsidMode, EncodedSet, PlanTemplate};
use bsenergy::ingest::{parse_canonical, write_canonical};
use bsenergy::model::{EmbeddingConfig, EnergyModel, ModelConfig, EMBED_INIT_RANGE};
use bsenergy::nn::RngStream;
use bsenergy::record::{CellFeatures, Dataset, MeasurementRecord, ES_MODES, MAX_CELLS};
use bsenergy::training::{apply_mask, draw_mask, mape, MaskMode};
use proptest::prelude::*;

fn cell() -> impl Strategy<Value = CellFeatures> {
    (
        0.0..=1.0f64,
        prop::array::uniform6(0.0..3.0f64),
        -10.0..50.0f64,
        prop::sample::select(vec![700.0, 1800.0, 2100.0, 3500.0]),
        prop::sample::select(vec![5.0, 10.0, 20.0, 100.0]),
    )
        .prop_map(
            |(load, es_mode, tx_power, frequency, bandwidth)| CellFeatures {
                load,
                es_mode,
                tx_power,
                frequency,
                bandwidth,
            },
        )
}

fn record() -> impl Strategy<Value = MeasurementRecord> {
    (
        "[A-Z][A-Za-z0-9_]{0,5}",
        prop::sample::select(vec!["RU1", "RU2", "RU3"]),
        prop::sample::select(vec!["M1", "M2"]),
        prop::sample::select(vec![1u32, 2, 4, 8]),
        prop::collection::vec(cell(), 1..=MAX_CELLS),
        0u32..10,
        0u32..24,
        0.01..1e4f64,
    )
        .prop_map(
            |(bs_id, ru, mode, antennas, cells, day, hour, energy)| MeasurementRecord {
                bs_id,
                ru_type: ru.to_string(),
                mode: mode.to_string(),
                antennas,
                cells,
                day,
                hour,
                energy,
            },
        )
}

fn dataset() -> impl Strategy<Value = Dataset> {
    prop::collection::vec(record(), 1..30).prop_map(|r| Dataset::new(r, "generated"))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12)
}

fn bsid_mode() -> impl Strategy<Value = BsidMode> {
    prop::sample::select(vec![BsidMode::Embedding, BsidMode::OneHot, BsidMode::None])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_csv_round_trips(ds in dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_canonical(&ds, &a).unwrap();
        let back = parse_canonical(&a).unwrap();
        prop_assert_eq!(back.len(), ds.len());
        for (x, y) in ds.records.iter().zip(&back.records) {
            prop_assert_eq!(&x.bs_id, &y.bs_id);
            prop_assert_eq!(&x.ru_type, &y.ru_type);
            prop_assert_eq!((x.antennas, x.day, x.hour), (y.antennas, y.day, y.hour));
            prop_assert!(close(x.energy, y.energy));
            prop_assert_eq!(x.cells.len(), y.cells.len());
            for (c, d) in x.cells.iter().zip(&y.cells) {
                prop_assert!(close(c.load, d.load) && close(c.tx_power, d.tx_power));
                prop_assert!((0..ES_MODES).all(|k| close(c.es_mode[k], d.es_mode[k])));
                prop_assert_eq!((c.frequency, c.bandwidth), (d.frequency, d.bandwidth));
            }
        }
        // Once written, the text form is a fixed point.
        write_canonical(&back, &b).unwrap();
        prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn every_encoding_has_the_planned_width(ds in dataset(), a: bool, b: bool, f: bool, mode in bsid_mode()) {
        let plan = fit(&PlanTemplate::from_toggles(a, b, f, mode), &ds).unwrap();
        let set = EncodedSet::build(&plan, &ds).unwrap();
        prop_assert_eq!(set.features.cols(), plan.feature_width());
        let extra = if mode == BsidMode::Embedding { 64 } else { 0 };
        prop_assert_eq!(plan.dimension(), plan.feature_width() + extra);
        // Every one-hot block of a training record has exactly one hot column.
        for block in plan.layout().iter().filter(|b| ["ru_type", "mode", "day", "hour", "bsid"].contains(&b.name.as_str())) {
            for r in 0..set.len() {
                let row = &set.features.row(r)[block.offset..block.offset + block.width];
                prop_assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1, "block {}", block.name);
            }
        }
    }

    #[test]
    fn one_hot_toggles_add_independently(ds in dataset(), mode in bsid_mode()) {
        let dim = |letters: &str| fit(&PlanTemplate::from_letters(letters, mode).unwrap(), &ds).unwrap().dimension();
        let base = dim("numerical");
        let delta = |l: &str| dim(l) as i64 - base as i64;
        prop_assert_eq!(delta("abf"), delta("a") + delta("b") + delta("f"));
        prop_assert_eq!(delta("ab"), delta("a") + delta("b"));
        prop_assert_eq!(delta("bf"), delta("b") + delta("f"));
        prop_assert_eq!(delta("af"), delta("a") + delta("f"));
    }

    #[test]
    fn mape_is_scale_invariant_and_non_negative(
        pairs in prop::collection::vec((0.1..1e3f64, 0.0..2e3f64), 1..50),
        c in prop::sample::select(vec![1e-3, 1.0, 1e3]),
    ) {
        let (y, y_hat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = mape(&y, &y_hat).unwrap();
        prop_assert!(m >= 0.0);
        let ys: Vec<f64> = y.iter().map(|v| c * v).collect();
        let hs: Vec<f64> = y_hat.iter().map(|v| c * v).collect();
        prop_assert!((mape(&ys, &hs).unwrap() - m).abs() <= 1e-15 * m.max(1.0));
        prop_assert_eq!(mape(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn masking_only_ever_substitutes_the_unknown_index(
        idx in prop::collection::vec(1usize..100, 1..200),
        p in 0.0..=1.0f64,
        seed: u64,
    ) {
        let masked = apply_mask(&idx, p, &mut RngStream::new(seed, "masking"));
        for (orig, m) in idx.iter().zip(&masked) {
            prop_assert!(m == orig || *m == 0);
        }
        let quota = draw_mask(idx.len(), p, MaskMode::Quota, &mut RngStream::new(seed, "masking"));
        prop_assert_eq!(quota.iter().filter(|&&b| b).count(), ((p * idx.len() as f64).round() as usize).min(idx.len()));
    }
}

fn model_config() -> impl Strategy<Value = ModelConfig> {
    (
        1usize..60,
        prop::collection::vec(1usize..40, 0..4),
        prop::option::of((1usize..20, 1usize..16)),
        any::<bool>(),
        1usize..8,
    )
        .prop_map(|(features, hidden, emb, arl, bottleneck)| {
            let embedding = emb.map(|(rows, dim)| EmbeddingConfig { rows, dim });
            let input_dim = features + embedding.as_ref().map_or(0, |e| e.dim);
            ModelConfig {
                input_dim,
                hidden_dims: hidden,
                embedding,
                arl_bottleneck: bottleneck.min(input_dim.saturating_sub(1)).max(1),
                arl_enabled: arl && input_dim > 1,
                output_offset: 0.0,
                output_scale: 1.0,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn closed_form_count_matches_allocation(cfg in model_config(), seed: u64) {
        let model = EnergyModel::new(cfg.clone(), &mut RngStream::new(seed, "init")).unwrap();
        prop_assert_eq!(cfg.parameter_count(), model.store().element_count());
        if let Some(table) = model.embedding_table() {
            prop_assert!(table.data().iter().all(|v| v.abs() <= EMBED_INIT_RANGE));
        }
    }
}

#[test]
fn fixture_vocabularies_have_the_engineered_sizes() {
    let ds = common::vocabulary_fixture();
    let plan = fit(&PlanTemplate::abf(BsidMode::OneHot), &ds).unwrap();
    assert_eq!(
        plan.antennas.as_ref().unwrap().len(),
        common::FIXTURE_ANTENNAS.len()
    );
    assert_eq!(plan.frequency.as_ref().unwrap().len(), 9);
    assert_eq!(plan.bandwidth.as_ref().unwrap().len(), 5);
    assert_eq!(plan.ru_type.len() + plan.mode.len() + plan.day.len(), 22);
    assert_eq!(plan.station_count(), 923);
    for (label, letters, mode, expected) in common::dimension_grid() {
        let plan = fit(&PlanTemplate::from_letters(letters, mode).unwrap(), &ds).unwrap();
        assert_eq!(plan.dimension(), expected, "{label}");
    }
}
