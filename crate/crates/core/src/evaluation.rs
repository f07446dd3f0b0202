//! Cohort MAPE reports and the ablation harness.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{BsidMode, EncodedSet, EncodingPlan, PlanTemplate};
use crate::error::{Error, Result};
use crate::model::EnergyModel;
use crate::record::{classify_sample, Cohort, Dataset, MeasurementRecord, SplitManifest};
use crate::training::{predict_set, prepare, train, TrainConfig, TrainOutcome};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub abs_error_sum: f64,
    pub target_sum: f64,
    pub count: usize,
}

impl CohortStats {
    pub fn mape(&self) -> f64 {
        self.abs_error_sum / self.target_sum
    }

    fn add(&mut self, y: f64, y_hat: f64) {
        self.abs_error_sum += (y - y_hat).abs();
        self.target_sum += y.abs();
        self.count += 1;
    }
}

/// Weighted MAPE per cohort and pooled over both. An empty cohort is absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cross_domain: Option<CohortStats>,
    pub in_domain: Option<CohortStats>,
}

impl EvalReport {
    pub fn cross_domain_mape(&self) -> Option<f64> {
        self.cross_domain.map(|c| c.mape())
    }

    pub fn in_domain_mape(&self) -> Option<f64> {
        self.in_domain.map(|c| c.mape())
    }

    /// Ratio of the pooled sums, not a mean of the cohort MAPEs.
    pub fn average_mape(&self) -> Option<f64> {
        let present: Vec<&CohortStats> = [&self.cross_domain, &self.in_domain]
            .into_iter()
            .flatten()
            .collect();
        if present.is_empty() {
            return None;
        }
        let err: f64 = present.iter().map(|c| c.abs_error_sum).sum();
        let total: f64 = present.iter().map(|c| c.target_sum).sum();
        Some(err / total)
    }

    pub fn cohort(&self, cohort: Cohort) -> Option<&CohortStats> {
        match cohort {
            Cohort::CrossDomain => self.cross_domain.as_ref(),
            Cohort::InDomain => self.in_domain.as_ref(),
        }
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show =
            |v: Option<f64>| v.map_or("absent".to_string(), |m| format!("{:.4}%", 100.0 * m));
        write!(
            f,
            "cross-domain {}  in-domain {}  average {}",
            show(self.cross_domain_mape()),
            show(self.in_domain_mape()),
            show(self.average_mape())
        )
    }
}

/// Cohort report for given predictions of `records`.
pub fn evaluate_predictions(
    records: &[MeasurementRecord],
    predictions: &[f64],
    manifest: &SplitManifest,
) -> Result<EvalReport> {
    if records.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} records, {} predictions",
            records.len(),
            predictions.len()
        )));
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cross = CohortStats::default();
    let mut inside = CohortStats::default();
    for (r, &p) in records.iter().zip(predictions) {
        match classify_sample(r, manifest)? {
            Cohort::CrossDomain => cross.add(r.energy, p),
            Cohort::InDomain => inside.add(r.energy, p),
        }
    }
    let keep = |c: CohortStats| (c.count > 0).then_some(c);
    let report = EvalReport {
        cross_domain: keep(cross),
        in_domain: keep(inside),
    };
    if report
        .cohort(Cohort::CrossDomain)
        .is_some_and(|c| c.target_sum == 0.0)
        || report
            .cohort(Cohort::InDomain)
            .is_some_and(|c| c.target_sum == 0.0)
    {
        return Err(Error::ZeroTargetSum);
    }
    Ok(report)
}

pub fn evaluate(
    model: &EnergyModel,
    plan: &EncodingPlan,
    test: &Dataset,
    manifest: &SplitManifest,
) -> Result<EvalReport> {
    model.check_plan(plan)?;
    let set = EncodedSet::build(plan, test)?;
    let predictions = predict_set(model, &set)?;
    evaluate_predictions(&test.records, &predictions, manifest)
}

/// One row of an ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub name: String,
    pub template: PlanTemplate,
    pub masking: bool,
    pub arl: bool,
    pub hidden_dims: Vec<usize>,
}

impl AblationRun {
    fn new(
        name: &str,
        template: PlanTemplate,
        masking: bool,
        arl: bool,
        hidden_dims: &[usize],
    ) -> Self {
        Self {
            name: name.to_string(),
            template,
            masking,
            arl,
            hidden_dims: hidden_dims.to_vec(),
        }
    }

    /// Everything that determines the trained model, ignoring the name.
    fn key(&self) -> String {
        serde_json::to_string(&(&self.template, self.masking, self.arl, &self.hidden_dims))
            .expect("serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSpec {
    pub runs: Vec<AblationRun>,
    pub train: TrainConfig,
}

impl AblationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(Error::Config("ablation spec has no runs".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.runs {
            if !seen.insert(r.name.as_str()) {
                return Err(Error::Config(format!("duplicate run name {:?}", r.name)));
            }
        }
        self.train.validate()
    }
}

const STANDARD: [usize; 2] = [128, 64];

/// The built-in grid: station-id encodings, one-hot combinations, attention variants.
pub fn paper_grid() -> Vec<AblationRun> {
    use BsidMode::*;
    let abf = |mode| PlanTemplate::abf(mode);
    let mut runs = vec![
        AblationRun::new("embedding_rm", abf(Embedding), true, true, &STANDARD),
        AblationRun::new("embedding_no_rm", abf(Embedding), false, true, &STANDARD),
        AblationRun::new("onehot_rm", abf(OneHot), true, true, &STANDARD),
        AblationRun::new("onehot_no_rm", abf(OneHot), false, true, &STANDARD),
        AblationRun::new("no_bsid", abf(None), false, true, &STANDARD),
    ];
    for letters in ["abf", "ab", "af", "bf", "a", "b", "f", "numerical"] {
        let t = PlanTemplate::from_letters(letters, Embedding).expect("valid letters");
        runs.push(AblationRun::new(letters, t, true, true, &STANDARD));
    }
    runs.push(AblationRun::new(
        "arl",
        abf(Embedding),
        true,
        true,
        &STANDARD,
    ));
    runs.push(AblationRun::new(
        "no_attention",
        abf(Embedding),
        true,
        false,
        &STANDARD,
    ));
    runs.push(AblationRun::new(
        "deeper_mlp",
        abf(Embedding),
        true,
        false,
        &[256, 128, 64],
    ));
    runs
}

/// Parses `name,plan,bsid,masking,arl,hidden` lines; `plan` is letters from
/// `ABF` or `numerical`, `hidden` is dash-separated widths. `#` starts a comment.
pub fn parse_spec(text: &str) -> Result<Vec<AblationRun>> {
    let mut runs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with("name,") {
            continue;
        }
        let bad = |m: String| Error::Config(format!("spec line {}: {m}", i + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", f.len())));
        }
        let mode: BsidMode = f[2].parse().map_err(|e: Error| bad(e.to_string()))?;
        let template = PlanTemplate::from_letters(f[1], mode).map_err(|e| bad(e.to_string()))?;
        let flag = |s: &str| match s {
            "on" | "true" | "1" => Ok(true),
            "off" | "false" | "0" => Ok(false),
            other => Err(bad(format!("expected on/off, found {other:?}"))),
        };
        let hidden = f[5]
            .split('-')
            .map(|h| {
                h.parse::<usize>()
                    .map_err(|_| bad(format!("bad hidden width {h:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        runs.push(AblationRun::new(
            f[0],
            template,
            flag(f[3])?,
            flag(f[4])?,
            &hidden,
        ));
    }
    if runs.is_empty() {
        return Err(Error::Config("ablation spec has no runs".into()));
    }
    Ok(runs)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub dim: Option<usize>,
    pub params: Option<usize>,
    pub report: Option<EvalReport>,
    pub status: RunStatus,
}

/// A finished run: its plan and training outcome.
pub struct TrainedRun {
    pub plan: EncodingPlan,
    pub outcome: TrainOutcome,
}

/// Fits a plan and trains one configuration.
pub fn train_run(
    run: &AblationRun,
    cfg: &TrainConfig,
    train_data: &Dataset,
    test_data: &Dataset,
) -> Result<TrainedRun> {
    let cfg = TrainConfig {
        mask_prob: if run.masking { cfg.mask_prob } else { 0.0 },
        ..cfg.clone()
    };
    let prepared = prepare(&run.template, train_data, Some(test_data), &cfg)?;
    let mut model_config = prepared.model_config.clone();
    model_config.arl_enabled = run.arl;
    model_config.hidden_dims = run.hidden_dims.clone();
    let outcome = train(&prepared.fit, &prepared.selection, model_config, &cfg)?;
    Ok(TrainedRun {
        plan: prepared.plan,
        outcome,
    })
}

/// Trains and evaluates every run; identical configurations train once.
pub fn run_ablation(
    spec: &AblationSpec,
    train_data: &Dataset,
    test_data: &Dataset,
    manifest: &SplitManifest,
) -> Result<Vec<AblationRow>> {
    run_ablation_with(spec, train_data, test_data, manifest, |_| {})
}

pub fn run_ablation_with(
    spec: &AblationSpec,
    train_data: &Dataset,
    test_data: &Dataset,
    manifest: &SplitManifest,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    spec.validate()?;
    let mut done: BTreeMap<String, AblationRow> = BTreeMap::new();
    let mut rows = Vec::with_capacity(spec.runs.len());
    for run in &spec.runs {
        let key = run.key();
        let mut row = match done.get(&key) {
            Some(row) => row.clone(),
            None => {
                let row = match train_run(run, &spec.train, train_data, test_data).and_then(|t| {
                    let report = evaluate(&t.outcome.model, &t.plan, test_data, manifest)?;
                    Ok((t, report))
                }) {
                    Ok((t, report)) => AblationRow {
                        name: run.name.clone(),
                        dim: Some(t.plan.dimension()),
                        params: Some(t.outcome.model.parameter_count()),
                        report: Some(report),
                        status: RunStatus::Ok,
                    },
                    Err(e) => AblationRow {
                        name: run.name.clone(),
                        dim: None,
                        params: None,
                        report: None,
                        status: RunStatus::Failed(e.to_string()),
                    },
                };
                done.insert(key, row.clone());
                row
            }
        };
        row.name = run.name.clone();
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub const RESULT_COLUMNS: [&str; 7] = [
    "run_name",
    "dim",
    "params",
    "cross_mape",
    "in_mape",
    "avg_mape",
    "status",
];

pub fn write_results(rows: &[AblationRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(RESULT_COLUMNS)
        .map_err(|e| Error::csv(path, e))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |m| format!("{m:?}"));
    for row in rows {
        let r = row.report.as_ref();
        w.write_record([
            row.name.clone(),
            row.dim.map_or(String::new(), |d| d.to_string()),
            row.params.map_or(String::new(), |p| p.to_string()),
            opt(r.and_then(EvalReport::cross_domain_mape)),
            opt(r.and_then(EvalReport::in_domain_mape)),
            opt(r.and_then(EvalReport::average_mape)),
            match &row.status {
                RunStatus::Ok => "ok".to_string(),
                RunStatus::Failed(m) => format!("failed: {m}"),
            },
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a single-report CSV with one row per cohort plus the pooled average.
pub fn write_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["cohort", "mape", "abs_error_sum", "target_sum", "count"])
        .map_err(|e| Error::csv(path, e))?;
    for (name, stats) in [
        ("cross_domain", report.cross_domain),
        ("in_domain", report.in_domain),
    ] {
        let fields = match stats {
            Some(s) => [
                name.to_string(),
                format!("{:?}", s.mape()),
                format!("{:?}", s.abs_error_sum),
                format!("{:?}", s.target_sum),
                s.count.to_string(),
            ],
            None => [
                name.to_string(),
                String::new(),
                String::new(),
                String::new(),
                "0".to_string(),
            ],
        };
        w.write_record(fields).map_err(|e| Error::csv(path, e))?;
    }
    let pooled_err: f64 = [report.cross_domain, report.in_domain]
        .iter()
        .flatten()
        .map(|c| c.abs_error_sum)
        .sum();
    let pooled_y: f64 = [report.cross_domain, report.in_domain]
        .iter()
        .flatten()
        .map(|c| c.target_sum)
        .sum();
    let count: usize = [report.cross_domain, report.in_domain]
        .iter()
        .flatten()
        .map(|c| c.count)
        .sum();
    w.write_record([
        "average".to_string(),
        report
            .average_mape()
            .map_or(String::new(), |m| format!("{m:?}")),
        format!("{pooled_err:?}"),
        format!("{pooled_y:?}"),
        count.to_string(),
    ])
    .map_err(|e| Error::csv(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::tests::record;
    use std::collections::BTreeSet;

    fn manifest() -> SplitManifest {
        SplitManifest {
            train_bs_ids: BTreeSet::from(["a".to_string()]),
            test_in_domain_ids: BTreeSet::from(["a".to_string()]),
            test_cross_domain_ids: BTreeSet::from(["x".to_string()]),
            ..SplitManifest::default()
        }
    }

    fn rec(id: &str, energy: f64) -> MeasurementRecord {
        MeasurementRecord {
            energy,
            ..record(id)
        }
    }

    #[test]
    fn pooled_average() {
        let recs = [rec("x", 10.0), rec("a", 10.0)];
        let r = evaluate_predictions(&recs, &[11.0, 7.0], &manifest()).unwrap();
        assert!((r.cross_domain_mape().unwrap() - 0.1).abs() < 1e-15);
        assert!((r.in_domain_mape().unwrap() - 0.3).abs() < 1e-15);
        assert!((r.average_mape().unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn pooled_differs_from_sample_weighted_mean() {
        // cross: 1 sample, (1, 10); in: 3 samples, (3, 30)... weights by target mass, not count
        let recs = [rec("x", 10.0), rec("a", 2.0), rec("a", 2.0), rec("a", 2.0)];
        let r = evaluate_predictions(&recs, &[11.0, 3.0, 3.0, 3.0], &manifest()).unwrap();
        assert_eq!(r.in_domain_mape().unwrap(), 0.5);
        assert_eq!(r.average_mape().unwrap(), 4.0 / 16.0);
    }

    #[test]
    fn identity_and_absent_cohort() {
        let recs = [rec("a", 4.0), rec("a", 6.0)];
        let r = evaluate_predictions(&recs, &[4.0, 6.0], &manifest()).unwrap();
        assert_eq!(r.cross_domain, None);
        assert_eq!(r.in_domain_mape(), Some(0.0));
        assert_eq!(r.average_mape(), r.in_domain_mape());
    }

    #[test]
    fn unknown_station_is_rejected() {
        let recs = [rec("zzz", 4.0)];
        assert!(matches!(
            evaluate_predictions(&recs, &[4.0], &manifest()),
            Err(Error::UnknownTestMember(_))
        ));
    }

    #[test]
    fn grid_has_sixteen_unique_rows() {
        let grid = paper_grid();
        assert_eq!(grid.len(), 16);
        let spec = AblationSpec {
            runs: grid.clone(),
            train: TrainConfig::default(),
        };
        spec.validate().unwrap();
        let keys: BTreeSet<String> = grid.iter().map(AblationRun::key).collect();
        // abf and arl repeat embedding_rm
        assert_eq!(keys.len(), 14);
    }

    #[test]
    fn spec_parsing() {
        let runs = parse_spec("# comment\nname,plan,bsid,masking,arl,hidden\nfull,ABF,embedding,on,on,128-64\nnum,numerical,none,off,off,32\n").unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].template, PlanTemplate::abf(BsidMode::Embedding));
        assert_eq!(runs[1].template, PlanTemplate::numerical(BsidMode::None));
        assert_eq!(runs[1].hidden_dims, vec![32]);
        assert!(!runs[1].masking);
        assert!(parse_spec("").is_err());
        assert!(parse_spec("x,ABF,embedding,on,on").is_err());
        assert!(parse_spec("x,ABQ,embedding,on,on,8").is_err());
    }
}
