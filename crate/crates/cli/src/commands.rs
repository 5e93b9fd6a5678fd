use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::{Array2, Axis};
use rayon::prelude::*;
use toxtree::dataset::{
    parse_activity_csv, resolve_duplicates, CurationAction, CurationOptions, DedupKey, LabeledDataset, PotencyClass,
    BLOCKER, NON_BLOCKER,
};
use toxtree::features::{correlation_filter, filter_low_information, lambda_grid_search, lasso_select, DropReason};
use toxtree::learners::Activation;
use toxtree::metrics::{multiclass_accuracy, report_csv, report_text, ConfusionCounts, MulticlassConfusion, ReportRow};
use toxtree::persistence::{fingerprint_dataset, load_bundle_file, save_bundle_file, Artifact, Metadata};
use toxtree::pipeline::tune::{
    fit_config, mlp_space, rf_space, svm_space, tune_grid, KernelChoice, MlpConfig, ModelConfig, TuneOptions,
    TuneReport,
};
use toxtree::pipeline::{
    build_herg_pipeline, build_nav_pipeline, sub_model_name, ConsensusPair, Outcome, PredictionOutcome, SubModel,
    Target, ToxTreePipeline,
};
use toxtree::preprocess::{fit_pca, fit_scaler, PcaModel, ScalerParams};
use toxtree::resample::{balance, ResamplePlan, ResampleStrategy};

use crate::args::{Command, Family, GridSize};
use crate::config::{require_exists, RunConfig};
use crate::data::{
    impute_mean, join, level, read_compounds, read_descriptors, read_descriptors_allow_empty, read_subset_tags,
    read_whitelist, write_compounds, write_text,
};
use crate::UsageError;

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Curate { activities, dedup_key, cell_preference, max_span } => {
            curate(cfg, &activities, &dedup_key, &cell_preference, max_span)
        }
        Command::SelectFeatures { descriptors, compounds, max_missing, max_constant, corr_cutoff, lambda, holdout } => {
            select_features(cfg, &descriptors, &compounds, max_missing, max_constant, corr_cutoff, lambda, holdout)
        }
        Command::Tune { descriptors, compounds, family, threshold, folds, grid, epochs } => {
            tune(cfg, &descriptors, &compounds, family, threshold, folds, grid, epochs)
        }
        Command::Train { descriptors, compounds, folds, grid, pca_energy, consensus_tolerance, created_at } => {
            let opts = TrainOptions { folds, grid, pca_energy, consensus_tolerance, created_at };
            train(cfg, &descriptors, &compounds, &opts)
        }
        Command::Evaluate { model, descriptors, compounds } => evaluate(cfg, &model, &descriptors, &compounds),
        Command::Predict { model, descriptors } => predict(cfg, &model, &descriptors),
    }
}

fn curate(cfg: &RunConfig, activities: &Path, dedup_key: &str, cells: &str, max_span: f64) -> Result<()> {
    require_exists(activities)?;
    let dedup_key = match dedup_key.to_ascii_lowercase().as_str() {
        "compound" | "compound_key" => DedupKey::CompoundKey,
        "smiles" => DedupKey::Smiles,
        other => bail!(UsageError(format!("unknown dedup key '{other}' (expected compound or smiles)"))),
    };
    if max_span.is_nan() || max_span < 0.0 {
        bail!(UsageError(format!("max span must be non-negative, got {max_span}")));
    }
    let options = CurationOptions {
        cell_preference: cells.split(',').map(|c| c.trim().to_owned()).filter(|c| !c.is_empty()).collect(),
        dedup_key,
        max_span,
        ..CurationOptions::default()
    };
    let file = std::fs::File::open(activities).with_context(|| format!("opening {}", activities.display()))?;
    let records = parse_activity_csv(file).with_context(|| format!("reading activities {}", activities.display()))?;
    let (compounds, report) = resolve_duplicates(&records, &options)?;
    write_compounds(&cfg.out_path("compounds.csv"), &compounds)?;
    write_text(&cfg.out_path("curation_report.tsv"), &format!("key\taction\treason\n{}", report.to_tsv()))?;
    println!(
        "{} records -> {} compounds ({} kept, {} merged, {} discarded)",
        records.len(),
        compounds.len(),
        report.count(CurationAction::Kept),
        report.count(CurationAction::Merged),
        report.count(CurationAction::Discarded)
    );
    Ok(())
}

/// Rounded share of `n`, at least 1 and at most `n`.
fn share(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1.min(n), n)
}

const LAMBDA_GRID: [f64; 9] = [0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5];

#[allow(clippy::too_many_arguments)]
fn select_features(
    cfg: &RunConfig,
    descriptors: &Path,
    compounds: &Path,
    max_missing: Option<usize>,
    max_constant: Option<usize>,
    corr_cutoff: f64,
    lambda: Option<f64>,
    holdout: f64,
) -> Result<()> {
    let table = read_descriptors(descriptors)?;
    let compounds = read_compounds(compounds)?;
    let joined = join(&table, &compounds, false)?;
    let n = joined.table.n_rows();
    if n < 2 {
        bail!("feature selection needs at least 2 compounds, got {n}");
    }
    let max_missing = max_missing.unwrap_or_else(|| share(n, 0.13));
    let max_constant = max_constant.unwrap_or_else(|| share(n, 0.84));
    let low = filter_low_information(&joined.table, max_missing, max_constant)?;
    let corr = correlation_filter(&low.matrix, &low.report.kept, &joined.pic50, corr_cutoff)?;
    let cols: Vec<usize> = corr
        .kept
        .iter()
        .map(|k| low.report.kept.iter().position(|n| n == k).expect("kept name comes from the input"))
        .collect();
    if cols.is_empty() {
        bail!("no features survive the low-information and correlation filters");
    }
    let reduced = low.matrix.select(Axis(1), &cols);
    let scaled = fit_scaler(&reduced)?.transform(&reduced)?;
    let lambda = match lambda {
        Some(l) => l,
        None => {
            let search = lambda_grid_search(&scaled, &joined.pic50, &LAMBDA_GRID, holdout, cfg.seed)?;
            log::info!("lambda search: {:?}", search.validation_mse);
            search.best_lambda
        }
    };
    let (_, lasso) = lasso_select(&scaled, &joined.pic50, &corr.kept, lambda)?;
    if lasso.kept.is_empty() {
        bail!("LASSO at lambda {lambda} keeps no features");
    }

    let mut whitelist = String::new();
    for name in &lasso.kept {
        whitelist.push_str(name);
        whitelist.push('\n');
    }
    let mut report = String::from("feature\tstatus\treason\n");
    report.push_str(&lasso.to_tsv());
    for (name, why) in low.report.dropped.iter().chain(&corr.dropped) {
        report.push_str(&format!("{name}\tdropped\t{why}\n"));
    }
    write_text(&cfg.out_path("whitelist.txt"), &whitelist)?;
    write_text(&cfg.out_path("feature_report.tsv"), &report)?;
    let count = |r: DropReason| low.report.dropped.iter().filter(|(_, w)| *w == r).count();
    println!(
        "{} features: {} missing, {} constant, {} correlated, {} zeroed by LASSO (lambda {lambda}); {} kept",
        table.n_features(),
        count(DropReason::Missing),
        count(DropReason::Constant),
        corr.dropped.len(),
        lasso.dropped.len(),
        lasso.kept.len()
    );
    Ok(())
}

/// Whitelisted, imputed, scaled (and for Nav1.5 projected) training data.
struct Prepared {
    whitelist: Vec<String>,
    scaler: ScalerParams,
    pca: Option<PcaModel>,
    x: Array2<f64>,
    pic50: Vec<f64>,
}

fn prepare(cfg: &RunConfig, descriptors: &Path, compounds: &Path, pca_energy: f64) -> Result<Prepared> {
    let table = read_descriptors(descriptors)?;
    let compounds = read_compounds(compounds)?;
    if compounds.is_empty() {
        bail!("no compounds to train on");
    }
    let whitelist = match &cfg.whitelist {
        Some(p) => read_whitelist(p)?,
        None => table.feature_names.clone(),
    };
    let joined = join(&table, &compounds, false)?;
    let selected = joined.table.select(&whitelist)?;
    let raw = impute_mean(&selected)?;
    let scaler = fit_scaler(&raw)?;
    let mut x = scaler.transform(&raw)?;
    let pca = match cfg.target {
        Target::Herg => None,
        Target::Nav15 => {
            let pca = fit_pca(&x, pca_energy)?;
            log::info!("PCA keeps {} components ({:.4} of variance)", pca.n_components(), pca.energy_captured);
            x = pca.project(&x)?;
            Some(pca)
        }
    };
    Ok(Prepared { whitelist, scaler, pca, x, pic50: joined.pic50 })
}

fn binary_dataset(p: &Prepared, threshold: f64) -> Result<LabeledDataset> {
    let labels = p.pic50.iter().map(|&v| if v >= threshold { BLOCKER } else { NON_BLOCKER }).collect();
    Ok(LabeledDataset::binary(p.x.clone(), labels)?)
}

fn level_names(thresholds: &[f64]) -> Vec<String> {
    if thresholds.len() == 3 {
        PotencyClass::class_names()
    } else {
        (0..=thresholds.len()).map(|i| format!("level{i}")).collect()
    }
}

fn space(family: Family, target: Target, grid: GridSize, epochs: usize) -> Vec<ModelConfig> {
    let mlp_base = MlpConfig { epochs, ..MlpConfig::default() };
    match (family, grid) {
        (Family::Rf, GridSize::Full) => rf_space(target),
        (Family::Svm, GridSize::Full) => svm_space(),
        (Family::Mlp, GridSize::Full) => mlp_space(&mlp_base),
        (Family::Rf, GridSize::Quick) => {
            [10, 30].iter().map(|&n| ModelConfig::Rf { n_estimators: n, max_depth: None }).collect()
        }
        (Family::Svm, GridSize::Quick) => {
            [(KernelChoice::Linear, 1.0), (KernelChoice::Rbf, 1.0), (KernelChoice::Rbf, 10.0)]
                .iter()
                .map(|&(kernel, c)| ModelConfig::Svm { kernel, c })
                .collect()
        }
        (Family::Mlp, GridSize::Quick) => [Activation::Relu, Activation::Sigmoid]
            .iter()
            .map(|&activation| ModelConfig::Mlp(MlpConfig { activation, ..mlp_base.clone() }))
            .collect(),
    }
}

fn default_family(target: Target) -> Family {
    match target {
        Target::Herg => Family::Rf,
        Target::Nav15 => Family::Svm,
    }
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Rf => "rf",
        Family::Svm => "svm",
        Family::Mlp => "mlp",
    }
}

#[allow(clippy::too_many_arguments)]
fn tune(
    cfg: &RunConfig,
    descriptors: &Path,
    compounds: &Path,
    family: Option<Family>,
    threshold: Option<f64>,
    folds: usize,
    grid: GridSize,
    epochs: usize,
) -> Result<()> {
    let family = family.unwrap_or_else(|| default_family(cfg.target));
    if family == Family::Svm && threshold.is_none() {
        bail!(UsageError("SVM tuning needs --threshold (SVMs are binary)".into()));
    }
    let prepared = prepare(cfg, descriptors, compounds, 0.9)?;
    let dataset = match threshold {
        Some(t) => binary_dataset(&prepared, t)?,
        None => {
            let labels = prepared.pic50.iter().map(|&v| level(v, &cfg.thresholds)).collect();
            LabeledDataset::new(prepared.x.clone(), labels, level_names(&cfg.thresholds))?
        }
    };
    let options = TuneOptions { k: folds, strategy: cfg.resample.unwrap_or_default(), seed: cfg.seed };
    let report = tune_grid(&space(family, cfg.target, grid, epochs), &dataset, &options)?;
    let name = format!("tune_{}.csv", family_name(family));
    write_text(&cfg.out_path(&name), &report.to_csv())?;
    let best = report.best();
    println!(
        "best of {}: {} (AC_cv {:.4}, F1_cv {:.4})",
        report.results.len(),
        best.config.describe(),
        best.ac_cv,
        best.f1_cv
    );
    Ok(())
}

struct TrainOptions {
    folds: usize,
    grid: GridSize,
    pca_energy: f64,
    consensus_tolerance: f64,
    created_at: Option<String>,
}

/// Tunes one binary stage, then refits the winner on the resampled data.
struct StageFit {
    sub_model: SubModel,
    report: TuneReport,
}

fn fit_stage(
    prepared: &Prepared,
    family: Family,
    target: Target,
    threshold: f64,
    strategy: ResampleStrategy,
    opts: &TrainOptions,
    seed: u64,
) -> Result<StageFit> {
    let dataset = binary_dataset(prepared, threshold)?;
    let options = TuneOptions { k: opts.folds, strategy, seed };
    let report = tune_grid(&space(family, target, opts.grid, 200), &dataset, &options)?;
    let balanced = balance(&dataset, &ResamplePlan::new(strategy, seed))?;
    let model = fit_config(&report.best().config, &balanced, seed)?;
    let name = sub_model_name(threshold, family_name(family), strategy.suffix());
    log::info!("{name}: {} (AC_cv {:.4})", report.best().config.describe(), report.best().ac_cv);
    Ok(StageFit { sub_model: SubModel::new(name, threshold, model), report })
}

fn train(cfg: &RunConfig, descriptors: &Path, compounds: &Path, opts: &TrainOptions) -> Result<()> {
    let prepared = prepare(cfg, descriptors, compounds, opts.pca_energy)?;
    let [t0, t1, t2] = cfg.thresholds;
    let seed_for = |i: u64| cfg.seed.wrapping_add(i.wrapping_mul(0x9E37_79B9));
    let family = default_family(cfg.target);
    // An explicit --resample replaces every stage's default plan; the first
    // consensus member always trains on the original data.
    let (over, original) = match cfg.resample {
        Some(s) => (s, s),
        None => (ResampleStrategy::OverSample, ResampleStrategy::Original),
    };

    let (pipeline, fits) = match cfg.target {
        Target::Herg => {
            let strong = fit_stage(&prepared, family, cfg.target, t0, over, opts, seed_for(0))?;
            let moderate = fit_stage(&prepared, family, cfg.target, t1, over, opts, seed_for(1))?;
            let weak_a = fit_stage(&prepared, family, cfg.target, t2, ResampleStrategy::Original, opts, seed_for(2))?;
            let weak_b = fit_stage(&prepared, family, cfg.target, t2, over, opts, seed_for(3))?;
            let pair = ConsensusPair::new(weak_a.sub_model.clone(), weak_b.sub_model.clone())?
                .with_tolerance(opts.consensus_tolerance)?;
            let pipeline = build_herg_pipeline(
                prepared.whitelist.clone(),
                prepared.scaler.clone(),
                strong.sub_model.clone(),
                moderate.sub_model.clone(),
                pair,
            )?;
            (pipeline, vec![strong, moderate, weak_a, weak_b])
        }
        Target::Nav15 => {
            let strong = fit_stage(&prepared, family, cfg.target, t0, original, opts, seed_for(0))?;
            let moderate = fit_stage(&prepared, family, cfg.target, t1, over, opts, seed_for(1))?;
            let weak = fit_stage(&prepared, family, cfg.target, t2, original, opts, seed_for(2))?;
            let pca = prepared.pca.clone().expect("nav15 preparation fits a PCA");
            let models = [strong.sub_model.clone(), moderate.sub_model.clone(), weak.sub_model.clone()];
            let pipeline = build_nav_pipeline(prepared.whitelist.clone(), prepared.scaler.clone(), pca, models)?;
            (pipeline, vec![strong, moderate, weak])
        }
    };

    let mut hyper = BTreeMap::new();
    hyper.insert("target".to_owned(), cfg.target.name().to_owned());
    hyper.insert("thresholds".to_owned(), cfg.thresholds.map(|t| t.to_string()).join(","));
    hyper.insert("folds".to_owned(), opts.folds.to_string());
    hyper.insert("features".to_owned(), prepared.whitelist.len().to_string());
    if let Some(p) = &prepared.pca {
        hyper.insert("pca_components".to_owned(), p.n_components().to_string());
    }
    let mut cv = String::from("stage,rank,model,sampling,class_distribution,ac_cv,f1_cv,n_estimators,max_depth\n");
    for fit in &fits {
        hyper.insert(fit.sub_model.name.clone(), fit.report.best().config.describe());
        for line in fit.report.to_csv().lines().skip(1) {
            cv.push_str(&format!("{},{line}\n", fit.sub_model.name));
        }
    }
    let labels = prepared.pic50.iter().map(|&v| level(v, &cfg.thresholds)).collect();
    let fingerprint =
        fingerprint_dataset(&LabeledDataset::new(prepared.x.clone(), labels, level_names(&cfg.thresholds))?);
    let metadata = Metadata {
        created_at: opts.created_at.clone(),
        seed: Some(cfg.seed),
        training_fingerprint: Some(fingerprint),
        hyperparameters: hyper,
    };
    save_bundle_file(&cfg.out_path("model.toxtree.json"), &Artifact::Pipeline(pipeline), &metadata)?;
    write_text(&cfg.out_path("cv_report.csv"), &cv)?;
    for fit in &fits {
        let best = fit.report.best();
        println!("{}: {} AC_cv {:.4} F1_cv {:.4}", fit.sub_model.name, best.config.describe(), best.ac_cv, best.f1_cv);
    }
    Ok(())
}

fn load_pipeline(path: &Path) -> Result<ToxTreePipeline> {
    require_exists(path)?;
    match load_bundle_file(path).with_context(|| format!("loading {}", path.display()))? {
        (Artifact::Pipeline(p), _) => Ok(p),
        (other, _) => bail!("{} holds a {} bundle, not a pipeline", path.display(), other.kind()),
    }
}

/// Potency level implied by a cascade outcome (`None` when inconclusive).
fn predicted_level(pipeline: &ToxTreePipeline, p: &PredictionOutcome) -> Option<usize> {
    let n = pipeline.stages.len();
    match p.outcome {
        Outcome::Inconclusive => None,
        Outcome::NonBlocker => Some(0),
        blocker => {
            let position = 3 - blocker.potency_class().expect("blockers have a class").index();
            Some(n - position)
        }
    }
}

fn evaluate(cfg: &RunConfig, model: &Path, descriptors: &Path, compounds: &Path) -> Result<()> {
    let pipeline = load_pipeline(model)?;
    let table = read_descriptors(descriptors)?;
    let subsets = read_subset_tags(compounds)?;
    let compounds = read_compounds(compounds)?;
    let joined = join(&table, &compounds, true)?;
    if joined.table.n_rows() == 0 {
        bail!("no compounds to evaluate");
    }
    let binding = pipeline.preprocessing.bind(&joined.table.feature_names)?;
    let outcomes = joined
        .table
        .values
        .par_iter()
        .zip(&joined.table.row_keys)
        .map(|(row, key)| pipeline.predict_bound(row, &binding).with_context(|| format!("compound `{key}`")))
        .collect::<Result<Vec<_>>>()?;

    let thresholds = pipeline.thresholds();
    let n = thresholds.len();
    let truths: Vec<usize> = joined.pic50.iter().map(|&v| level(v, &thresholds)).collect();
    let preds: Vec<Option<usize>> = outcomes.iter().map(|o| predicted_level(&pipeline, o)).collect();

    let counts_at = |rows: &[usize], required: usize| {
        let mut c = ConfusionCounts::default();
        for &i in rows {
            let Some(p) = preds[i] else { continue };
            match (truths[i] >= required, p >= required) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
            }
        }
        c
    };
    let overall = |name: String, rows: &[usize]| -> Result<ReportRow> {
        let p: Vec<Option<usize>> = rows.iter().map(|&i| preds[i]).collect();
        let t: Vec<usize> = rows.iter().map(|&i| truths[i]).collect();
        Ok(ReportRow::new(name, counts_at(rows, 1), Some(multiclass_accuracy(&p, &t)?))?)
    };
    let all: Vec<usize> = (0..preds.len()).collect();
    let mut rows = vec![overall("toxtree".into(), &all)?];
    for (k, t) in thresholds.iter().enumerate() {
        rows.push(ReportRow::new(format!("pic50>={t}"), counts_at(&all, n - k), None)?);
    }
    if let Some(tags) = subsets {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, key) in joined.table.row_keys.iter().enumerate() {
            if let Some(tag) = tags.get(key).filter(|t| !t.is_empty()) {
                groups.entry(tag.as_str()).or_default().push(i);
            }
        }
        for (tag, members) in groups {
            rows.push(overall(format!("subset={tag}"), &members)?);
        }
    }
    let inconclusive = preds.iter().filter(|p| p.is_none()).count();
    let mut text = report_text(&rows);
    text.push_str(&format!("compounds: {}, inconclusive: {inconclusive}\n", preds.len()));
    let confusion = MulticlassConfusion::from_predictions(level_names(&thresholds), &truths, &preds)?;
    write_text(&cfg.out_path("metrics.csv"), &report_csv(&rows))?;
    write_text(&cfg.out_path("metrics.txt"), &text)?;
    write_text(&cfg.out_path("confusion.tsv"), &confusion.to_tsv())?;
    print!("{text}");
    Ok(())
}

fn predict(cfg: &RunConfig, model: &Path, descriptors: &Path) -> Result<()> {
    let pipeline = load_pipeline(model)?;
    let table = read_descriptors_allow_empty(descriptors)?;
    // A whitelisted column absent from the file fails every row, not the run.
    let binding = pipeline.preprocessing.bind(&table.feature_names).map_err(|e| e.to_string());
    let results: Vec<std::result::Result<PredictionOutcome, String>> = table
        .values
        .par_iter()
        .map(|row| {
            let b = binding.as_ref().map_err(Clone::clone)?;
            pipeline.predict_bound(row, b).map_err(|e| e.to_string())
        })
        .collect();

    let path = cfg.out_path("predictions.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["compound_key", "outcome", "deciding_stage", "stage_probability"])?;
    let mut errors = String::new();
    for (key, result) in table.row_keys.iter().zip(&results) {
        match result {
            Ok(p) => {
                let prob = if p.stage_probability.is_nan() { String::new() } else { p.stage_probability.to_string() };
                w.write_record([key.as_str(), p.outcome.label(), p.deciding_stage.as_str(), prob.as_str()])?;
            }
            Err(e) => {
                w.write_record([key.as_str(), "error", "", ""])?;
                errors.push_str(&format!("{key}\t{e}\n"));
            }
        }
    }
    w.flush()?;
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed > 0 {
        let errors_path = cfg.out_path("prediction_errors.tsv");
        write_text(&errors_path, &format!("compound_key\terror\n{errors}"))?;
        bail!("{failed} of {} rows could not be scored; see {}", results.len(), errors_path.display());
    }
    println!("scored {} compounds", results.len());
    Ok(())
}
