use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use toxtree::learners::{ThresholdRule, TrainedModel};
use toxtree::metrics::{binary_metrics, format_percent, ConfusionCounts};
use toxtree::persistence::{save_bundle_file, Artifact, Metadata};
use toxtree::pipeline::{Preprocessing, Stage, SubModel, Target, ToxTreePipeline};

fn toxtree(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toxtree")).arg("--out").arg(out).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// splitmix64 turned into a uniform in [0, 1).
struct Uniform(u64);

impl Uniform {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Four well-separated potency groups, 30 compounds each, with three
/// informative and two noise descriptors.
fn write_blobs(dir: &Path) -> (PathBuf, PathBuf) {
    let mut u = Uniform(7);
    let mut desc = String::from("Name,a,b,c,noise1,noise2\n");
    let mut comp = String::from("compound_key,smiles,pic50\n");
    let groups = [(7.0, 3.0), (5.5, 1.0), (4.75, -1.0), (4.0, -3.0)];
    let mut i = 0;
    for (pic50, centre) in groups {
        for _ in 0..30 {
            let cells: Vec<String> = (0..5)
                .map(|j| {
                    let jitter = u.next() - 0.5;
                    if j < 3 {
                        centre + 0.6 * jitter
                    } else {
                        4.0 * jitter
                    }
                })
                .map(|v| format!("{v:.6}"))
                .collect();
            desc.push_str(&format!("m{i},{}\n", cells.join(",")));
            comp.push_str(&format!("m{i},C,{}\n", pic50 + 0.2 * (u.next() - 0.5)));
            i += 1;
        }
    }
    let (d, c) = (dir.join("desc.csv"), dir.join("compounds.csv"));
    fs::write(&d, desc).unwrap();
    fs::write(&c, comp).unwrap();
    (d, c)
}

fn train_blobs(dir: &Path, out: &Path, seed: &str) -> Output {
    let (d, c) = (dir.join("desc.csv"), dir.join("compounds.csv"));
    toxtree(
        out,
        &["--seed", seed, "train", "--descriptors", p(&d), "--compounds", p(&c), "--grid", "quick", "--folds", "3"],
    )
}

#[test]
fn curate_merges_and_discards() {
    let dir = TempDir::new().unwrap();
    let acts = dir.path().join("acts.csv");
    fs::write(
        &acts,
        "compound_key,smiles,value,kind,unit,cell_line\n\
         A,CCO,1,IC50,uM,HEK293\n\
         A,CCO,2,IC50,uM,HEK293\n\
         B,CCN,1,IC50,uM,HEK293\n\
         B,CCN,100,IC50,uM,HEK293\n\
         C,CCC,10,IC50,nM,CHO\n",
    )
    .unwrap();
    let o = toxtree(dir.path(), &["curate", "--activities", p(&acts)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("curation_report.tsv")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("A\tmerged")), "{report}");
    assert!(report.lines().any(|l| l.starts_with("B\tdiscarded")), "{report}");

    let compounds = fs::read_to_string(dir.path().join("compounds.csv")).unwrap();
    let rows: Vec<Vec<&str>> = compounds.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    // Mean of −log10(1e-6) and −log10(2e-6).
    let a: f64 = rows.iter().find(|r| r[0] == "A").unwrap()[2].parse().unwrap();
    assert!((a - (6.0 + 6.0 - 2f64.log10()) / 2.0).abs() < 1e-12);
    let c: f64 = rows.iter().find(|r| r[0] == "C").unwrap()[2].parse().unwrap();
    assert!((c - 8.0).abs() < 1e-12);
}

#[test]
fn curate_unique_input_keeps_every_row() {
    let dir = TempDir::new().unwrap();
    let acts = dir.path().join("acts.csv");
    fs::write(&acts, "compound_key,smiles,value,kind,unit\nA,C,1,IC50,uM\nB,N,5,IC50,uM\nC,O,0.1,IC50,uM\n").unwrap();
    let o = toxtree(dir.path(), &["curate", "--activities", p(&acts)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let compounds = fs::read_to_string(dir.path().join("compounds.csv")).unwrap();
    assert_eq!(compounds.lines().count(), 4);
}

#[test]
fn curate_empty_file_fails() {
    let dir = TempDir::new().unwrap();
    let acts = dir.path().join("acts.csv");
    fs::write(&acts, "").unwrap();
    let o = toxtree(dir.path(), &["curate", "--activities", p(&acts)]);
    assert_ne!(code(&o), 0);
    assert!(!stderr(&o).trim().is_empty());
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let o = toxtree(dir.path(), &["curate"]);
    assert_eq!(code(&o), 1);
    let o = toxtree(dir.path(), &["--thresholds", "5,6,4", "curate", "--activities", "x.csv"]);
    assert_eq!(code(&o), 1);
    let o = toxtree(dir.path(), &["curate", "--activities", p(&dir.path().join("absent.csv"))]);
    assert_eq!(code(&o), 1);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "colour=blue\n").unwrap();
    let o = toxtree(dir.path(), &["--config", p(&cfg), "curate", "--activities", "x.csv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn train_predict_evaluate_on_blobs() {
    let dir = TempDir::new().unwrap();
    write_blobs(dir.path());
    let out = dir.path().join("run");
    let o = train_blobs(dir.path(), &out, "11");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let bundle = out.join("model.toxtree.json");
    assert!(bundle.exists());

    let cv = fs::read_to_string(out.join("cv_report.csv")).unwrap();
    let mut lines = cv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let ac = header.iter().position(|h| *h == "ac_cv").unwrap();
    let stages: Vec<&str> = lines
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            assert_eq!(cells.len(), header.len());
            let v: f64 = cells[ac].parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
            cells[0]
        })
        .collect();
    for s in ["6rf-ovrs", "5rf-ovrs", "4o5rf", "4o5rf-ovrs"] {
        assert!(stages.contains(&s), "{s} missing from {stages:?}");
    }

    let desc = dir.path().join("desc.csv");
    let o = toxtree(&out, &["predict", "--model", p(&bundle), "--descriptors", p(&desc)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let preds = fs::read_to_string(out.join("predictions.csv")).unwrap();
    let comp = fs::read_to_string(dir.path().join("compounds.csv")).unwrap();
    let mut agree = 0;
    let mut total = 0;
    for (pred, truth) in preds.lines().skip(1).zip(comp.lines().skip(1)) {
        let pred: Vec<&str> = pred.split(',').collect();
        let truth: Vec<&str> = truth.split(',').collect();
        assert_eq!(pred[0], truth[0]);
        let pic50: f64 = truth[2].parse().unwrap();
        let expected = if pic50 >= 6.0 {
            "strong-blocker"
        } else if pic50 >= 5.0 {
            "moderate-blocker"
        } else if pic50 >= 4.5 {
            "weak-blocker"
        } else {
            "non-blocker"
        };
        agree += usize::from(pred[1] == expected);
        total += 1;
    }
    assert_eq!(total, 120);
    assert!(agree as f64 / total as f64 >= 0.95, "{agree}/{total}");

    let comp_path = dir.path().join("compounds.csv");
    let o =
        toxtree(&out, &["evaluate", "--model", p(&bundle), "--descriptors", p(&desc), "--compounds", p(&comp_path)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("metrics.csv").exists() && out.join("confusion.tsv").exists());
}

#[test]
fn nav_training_builds_a_pca_pipeline() {
    let dir = TempDir::new().unwrap();
    let (d, c) = write_blobs(dir.path());
    let out = dir.path().join("nav");
    let o = toxtree(
        &out,
        &[
            "--target",
            "nav15",
            "train",
            "--descriptors",
            p(&d),
            "--compounds",
            p(&c),
            "--grid",
            "quick",
            "--folds",
            "3",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let bundle = fs::read_to_string(out.join("model.toxtree.json")).unwrap();
    assert!(bundle.contains("\"pca_components\""));
    assert!(bundle.contains("\"5svm-ovrs\""));
}

#[test]
fn repeated_seed_gives_identical_bundles() {
    let dir = TempDir::new().unwrap();
    write_blobs(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        assert_eq!(code(&train_blobs(dir.path(), out, "3")), 0);
    }
    assert_eq!(code(&train_blobs(dir.path(), &c, "4")), 0);
    let read = |d: &Path| fs::read(d.join("model.toxtree.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(fs::read(a.join("cv_report.csv")).unwrap(), fs::read(b.join("cv_report.csv")).unwrap());
    assert_ne!(read(&a), read(&c));
}

#[test]
fn missing_whitelist_feature_is_named() {
    let dir = TempDir::new().unwrap();
    let (d, c) = write_blobs(dir.path());
    let wl = dir.path().join("wl.txt");
    fs::write(&wl, "a\n# comment\nlogP_missing\n").unwrap();
    let o = toxtree(dir.path(), &["--whitelist", p(&wl), "train", "--descriptors", p(&d), "--compounds", p(&c)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("logP_missing"), "{}", stderr(&o));
}

/// One-feature pipeline whose stages compare the feature against the
/// standard cut-offs, so a compound's outcome is fixed by its value.
fn rule_pipeline(path: &Path) {
    let rule = |t: f64| {
        let name = format!("rule{t}");
        SubModel::new(name, t, TrainedModel::Rule(ThresholdRule { feature: 0, threshold: t, n_features: 1 }))
    };
    let pre = Preprocessing { whitelist: vec!["x".into()], scaler: None, pca: None };
    let stages = vec![Stage::Single(rule(6.0)), Stage::Single(rule(5.0)), Stage::Single(rule(4.5))];
    let pipeline = ToxTreePipeline::new(Target::Herg, pre, stages).unwrap();
    save_bundle_file(path, &Artifact::Pipeline(pipeline), &Metadata::default()).unwrap();
}

/// Writes `(key, x, pic50)` rows as a descriptor and a compound file.
fn write_pairs(dir: &Path, rows: &[(String, f64, f64)]) -> (PathBuf, PathBuf) {
    let mut desc = String::from("Name,x\n");
    let mut comp = String::from("compound_key,smiles,pic50\n");
    for (k, x, pic50) in rows {
        desc.push_str(&format!("{k},{x}\n"));
        comp.push_str(&format!("{k},C,{pic50}\n"));
    }
    let (d, c) = (dir.join("desc.csv"), dir.join("comp.csv"));
    fs::write(&d, desc).unwrap();
    fs::write(&c, comp).unwrap();
    (d, c)
}

fn metric_cell(metrics_csv: &str, row: &str, column: &str) -> String {
    let mut lines = metrics_csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let j = header.iter().position(|h| *h == column).unwrap();
    let line = lines.find(|l| l.starts_with(&format!("{row},"))).unwrap();
    line.split(',').nth(j).unwrap().to_owned()
}

#[test]
fn evaluate_reproduces_nav_reference_counts() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("rules.toxtree.json");
    rule_pipeline(&model);
    // 100 TP, 14 FN, 50 TN, 9 FP at the weakest cut-off.
    let mut rows = Vec::new();
    let mut add = |n: usize, x: f64, pic50: f64| {
        for _ in 0..n {
            rows.push((format!("k{}", rows.len()), x, pic50));
        }
    };
    add(100, 6.5, 6.5);
    add(14, 4.0, 5.5);
    add(50, 4.0, 4.0);
    add(9, 5.5, 4.0);
    let (d, c) = write_pairs(dir.path(), &rows);
    let o = toxtree(dir.path(), &["evaluate", "--model", p(&model), "--descriptors", p(&d), "--compounds", p(&c)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("71.2"), "{stdout}");

    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metric_cell(&csv, "toxtree", "TP"), "100");
    assert_eq!(metric_cell(&csv, "toxtree", "FN"), "14");
    assert_eq!(metric_cell(&csv, "toxtree", "TN"), "50");
    assert_eq!(metric_cell(&csv, "toxtree", "FP"), "9");
    assert_eq!(metric_cell(&csv, "toxtree", "MCC"), "71.2");
    let m = binary_metrics(&ConfusionCounts::new(100, 14, 50, 9)).unwrap();
    assert_eq!(metric_cell(&csv, "toxtree", "AC"), format_percent(m.ac));
    assert_eq!(metric_cell(&csv, "toxtree", "AC"), "86.7");
}

#[test]
fn evaluate_reports_tagged_subsets() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("rules.toxtree.json");
    rule_pipeline(&model);
    // (x, pic50, subset): "lit" is scored perfectly, every "pub" blocker is missed.
    let rows =
        [(6.5, 6.5, "lit"), (4.0, 4.0, "lit"), (5.2, 5.2, "lit"), (3.0, 7.0, "pub"), (3.0, 5.5, "pub"), (4.0, 4.0, "")];
    let mut desc = String::from("Name,x\n");
    let mut comp = String::from("compound_key,smiles,pic50,subset\n");
    for (i, (x, pic50, tag)) in rows.iter().enumerate() {
        desc.push_str(&format!("k{i},{x}\n"));
        comp.push_str(&format!("k{i},C,{pic50},{tag}\n"));
    }
    let (d, c) = (dir.path().join("desc.csv"), dir.path().join("comp.csv"));
    fs::write(&d, desc).unwrap();
    fs::write(&c, comp).unwrap();
    let o = toxtree(dir.path(), &["evaluate", "--model", p(&model), "--descriptors", p(&d), "--compounds", p(&c)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metric_cell(&csv, "subset=lit", "MultiAC"), "100.0");
    assert_eq!(metric_cell(&csv, "subset=lit", "TP"), "2");
    assert_eq!(metric_cell(&csv, "subset=pub", "TP"), "0");
    assert_eq!(metric_cell(&csv, "subset=pub", "FN"), "2");
    assert_eq!(metric_cell(&csv, "toxtree", "TN"), "2");
}

#[test]
fn perfect_stub_scores_one() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("rules.toxtree.json");
    rule_pipeline(&model);
    let rows: Vec<(String, f64, f64)> =
        [3.0, 4.6, 5.2, 6.8, 7.1, 4.4, 5.0, 6.0].iter().enumerate().map(|(i, &v)| (format!("k{i}"), v, v)).collect();
    let (d, c) = write_pairs(dir.path(), &rows);
    let o = toxtree(dir.path(), &["evaluate", "--model", p(&model), "--descriptors", p(&d), "--compounds", p(&c)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    for col in ["AC", "SN", "SP", "F1", "CCR", "MCC", "F1_BALANCED", "MultiAC"] {
        assert_eq!(metric_cell(&csv, "toxtree", col), "100.0", "{col}");
    }
}

#[test]
fn evaluate_lists_orphan_keys() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("rules.toxtree.json");
    rule_pipeline(&model);
    let (d, _) = write_pairs(dir.path(), &[("k0".into(), 5.0, 5.0), ("only_desc".into(), 5.0, 5.0)]);
    let c = dir.path().join("other.csv");
    fs::write(&c, "compound_key,smiles,pic50\nk0,C,5\nonly_comp,C,4\n").unwrap();
    let o = toxtree(dir.path(), &["evaluate", "--model", p(&model), "--descriptors", p(&d), "--compounds", p(&c)]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("only_desc") && err.contains("only_comp"), "{err}");
}

#[test]
fn predict_empty_file_writes_header_only() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("rules.toxtree.json");
    rule_pipeline(&model);
    for (name, content) in [("empty.csv", ""), ("header.csv", "Name,x\n")] {
        let d = dir.path().join(name);
        fs::write(&d, content).unwrap();
        let o = toxtree(dir.path(), &["predict", "--model", p(&model), "--descriptors", p(&d)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let preds = fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
        assert_eq!(preds, "compound_key,outcome,deciding_stage,stage_probability\n");
    }
}

#[test]
fn predict_missing_cell_is_a_row_error() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("rules.toxtree.json");
    rule_pipeline(&model);
    let d = dir.path().join("desc.csv");
    fs::write(&d, "Name,x\nk0,6.5\nk1,\nk2,4.0\n").unwrap();
    let o = toxtree(dir.path(), &["predict", "--model", p(&model), "--descriptors", p(&d)]);
    assert_eq!(code(&o), 2);
    let preds = fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
    let lines: Vec<&str> = preds.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("k0,strong-blocker,rule6,"));
    assert_eq!(lines[2], "k1,error,,");
    assert!(lines[3].starts_with("k2,non-blocker,rule4.5,"));
    let errors = fs::read_to_string(dir.path().join("prediction_errors.tsv")).unwrap();
    assert!(errors.contains("k1") && errors.contains('x'));
}

#[test]
fn predict_missing_column_fails_every_row() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("rules.toxtree.json");
    rule_pipeline(&model);
    let d = dir.path().join("desc.csv");
    fs::write(&d, "Name,y\nk0,1\nk1,2\n").unwrap();
    let o = toxtree(dir.path(), &["predict", "--model", p(&model), "--descriptors", p(&d)]);
    assert_eq!(code(&o), 2);
    let preds = fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().filter(|l| l.contains(",error,")).count(), 2);
}

#[test]
fn predict_is_idempotent() {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("rules.toxtree.json");
    rule_pipeline(&model);
    let d = dir.path().join("desc.csv");
    fs::write(&d, "Name,x\nk0,6.5\nk1,5.1\nk2,4.0\n").unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let o = toxtree(dir.path(), &["--threads", threads, "predict", "--model", p(&model), "--descriptors", p(&d)]);
        assert_eq!(code(&o), 0);
        outputs.push(fs::read(dir.path().join("predictions.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn select_features_writes_whitelist() {
    let dir = TempDir::new().unwrap();
    let (d, c) = write_blobs(dir.path());
    let o = toxtree(dir.path(), &["select-features", "--descriptors", p(&d), "--compounds", p(&c)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let wl = fs::read_to_string(dir.path().join("whitelist.txt")).unwrap();
    let kept: Vec<&str> = wl.lines().collect();
    assert!(!kept.is_empty());
    let report = fs::read_to_string(dir.path().join("feature_report.tsv")).unwrap();
    // Every input feature is accounted for exactly once.
    assert_eq!(report.lines().count(), 1 + 5);
    // a, b and c are near-duplicates, so at most one of them survives.
    assert!(kept.iter().filter(|k| ["a", "b", "c"].contains(k)).count() <= 1);
}

#[test]
fn tune_writes_ranked_csv() {
    let dir = TempDir::new().unwrap();
    let (d, c) = write_blobs(dir.path());
    let o = toxtree(
        dir.path(),
        &[
            "tune",
            "--family",
            "svm",
            "--threshold",
            "5",
            "--grid",
            "quick",
            "--folds",
            "3",
            "--descriptors",
            p(&d),
            "--compounds",
            p(&c),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("tune_svm.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    let o = toxtree(dir.path(), &["tune", "--family", "svm", "--descriptors", p(&d), "--compounds", p(&c)]);
    assert_eq!(code(&o), 1);
}
