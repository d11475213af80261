use std::path::{Path, PathBuf};

use mammoview::cli::{cmd_compare, cmd_prepare_patches, cmd_report, cmd_synth, cmd_train, CliError, CompareMode, PipelineConfig, Stage};
use mammoview::stats::{normal_cdf, AggregateOp, ScoreSet};
use mammoview::train::{ProtocolResult, TrainError};

fn config_text(dir: &Path, head: &str, size: &str, extra: &str) -> String {
    format!(
        r#"
output_dir = "{out}"

[dataset]
schema = "CBIS_STYLE"
views = "data/views.csv"
lesions = "data/lesions.csv"
patch_index = "patches/index.csv"

[model]
backbone = "tiny-mbconv"
pretrain_tag = "IMAGENET1K"
head = {head}
resize_mode = "NONE"
input_size = {size}

[train]
epochs = 1
rounds = 3
base_lr = 1e-3
lr_delta = 2e-3
batch_size = 8

[init]
allow_random_init = true
{extra}

[patches]
target = [448, 352]
lesion_count = 2
background_count = 2
"#,
        out = dir.join("out").display()
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn synth(dir: &Path) {
    cmd_synth(&dir.join("data"), 3, 40, 256, 208).unwrap();
}

#[test]
fn prepare_patches_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let text = config_text(dir.path(), r#"{ PATCH_HEAD = { n_classes = 5 } }"#, "[224, 224]", "");
    let path = write_config(dir.path(), "p.toml", &text);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let cfg = PipelineConfig::load(&path, &[format!("output_dir=\"{}\"", out.display())]).unwrap();
        let o = cmd_prepare_patches(&cfg).unwrap();
        assert!(o.counts_table.contains("MALIGNANT_MASS"));
        outputs.push((std::fs::read(&o.index_path).unwrap(), std::fs::read(&o.counts_csv_path).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn prepare_patches_without_lesions_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let text = config_text(dir.path(), r#"{ PATCH_HEAD = { n_classes = 5 } }"#, "[224, 224]", "");
    let path = write_config(dir.path(), "p.toml", &text);
    let cfg = PipelineConfig::load(&path, &["dataset.lesions=\"data/absent.csv\"".into()]).unwrap();
    let err = cmd_prepare_patches(&cfg).unwrap_err();
    assert_eq!(err.code(), "MissingColumn");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn two_view_requires_single_view_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let text = config_text(dir.path(), "\"TWO_VIEW_HEAD\"", "[256, 208]", "");
    let cfg = PipelineConfig::load(&write_config(dir.path(), "t.toml", &text), &[]).unwrap();
    let err = cmd_train(Stage::TwoView, &cfg).unwrap_err();
    assert!(matches!(err, CliError::Train(TrainError::MissingPrerequisiteCheckpoint(_))), "{err}");
    let cfg = PipelineConfig::load(&write_config(dir.path(), "t.toml", &text), &["init.checkpoint=\"nope\"".into()]).unwrap();
    assert_eq!(cmd_train(Stage::TwoView, &cfg).unwrap_err().code(), "MissingPrerequisiteCheckpoint");
}

#[test]
fn stage_and_head_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let text = config_text(dir.path(), "\"WHOLE_IMAGE_HEAD\"", "[256, 208]", "");
    let cfg = PipelineConfig::load(&write_config(dir.path(), "t.toml", &text), &[]).unwrap();
    assert_eq!(cmd_train(Stage::TwoView, &cfg).unwrap_err().code(), "InvalidConfig");
}

/// DC single-view (no patch stage), then two-view from its ledger, then a
/// DeLong comparison against the MAX-aggregated single-view scores.
#[test]
fn smoke_pipeline_through_compare() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let sv_text = config_text(dir.path(), "\"WHOLE_IMAGE_HEAD\"", "[256, 208]", "mode = \"FROM_IMAGENET\"");
    let sv_cfg = PipelineConfig::load(&write_config(dir.path(), "sv.toml", &sv_text), &["output_dir=\"sv\"".into()]).unwrap();
    let sv = cmd_train(Stage::SingleView, &sv_cfg).unwrap();
    assert_eq!(sv.per_round.len(), 3);
    let ledger = dir.path().join("sv");
    let stored: ProtocolResult =
        serde_json::from_str(&std::fs::read_to_string(ledger.join("protocol.json")).unwrap()).unwrap();
    assert_eq!(stored, sv);

    let tv_text = config_text(dir.path(), "\"TWO_VIEW_HEAD\"", "[256, 208]", &format!("checkpoint = \"{}\"", ledger.display()));
    let tv_cfg = PipelineConfig::load(
        &write_config(dir.path(), "tv.toml", &tv_text),
        &["output_dir=\"tv\"".into(), "train.rounds=1".into()],
    )
    .unwrap();
    let tv = cmd_train(Stage::TwoView, &tv_cfg).unwrap();
    assert_eq!(tv.per_round.len(), 1);

    let a = dir.path().join("tv/round_0/test_scores.csv");
    let b = ledger.join(format!("round_{}/test_scores.csv", sv.best_round));
    let rep = cmd_compare(&a, &b, CompareMode::DelongPaired, Some(AggregateOp::Max), 0.5).unwrap();
    assert_eq!(rep.n_pos.0 + rep.n_neg.0, rep.n_pos.1 + rep.n_neg.1);
    assert!((0.0..=1.0).contains(&rep.p_one_tailed));
    let unaggregated = cmd_compare(&a, &b, CompareMode::DelongPaired, None, 0.5).unwrap_err();
    assert_eq!(unaggregated.code(), "UnpairedScoreSets");
}

fn write_scores(path: &Path, ids: &[String], scores: &[f64], labels: &[u8]) {
    ScoreSet::new(ids.to_vec(), scores.to_vec(), labels.to_vec()).unwrap().save(path).unwrap();
}

fn psi(x: f64, y: f64) -> f64 {
    if x > y {
        1.0
    } else if x == y {
        0.5
    } else {
        0.0
    }
}

/// Pairwise DeLong on (pos, neg) splits.
fn naive_delong(a: (&[f64], &[f64]), b: (&[f64], &[f64])) -> f64 {
    let comps = |pos: &[f64], neg: &[f64]| {
        let v10: Vec<f64> = pos.iter().map(|&x| neg.iter().map(|&y| psi(x, y)).sum::<f64>() / neg.len() as f64).collect();
        let v01: Vec<f64> = neg.iter().map(|&y| pos.iter().map(|&x| psi(x, y)).sum::<f64>() / pos.len() as f64).collect();
        let auc = v10.iter().sum::<f64>() / pos.len() as f64;
        (auc, v10, v01)
    };
    let cov = |u: &[f64], v: &[f64]| {
        let (mu, mv) = (u.iter().sum::<f64>() / u.len() as f64, v.iter().sum::<f64>() / v.len() as f64);
        u.iter().zip(v).map(|(x, y)| (x - mu) * (y - mv)).sum::<f64>() / (u.len() - 1) as f64
    };
    let (a1, x10, x01) = comps(a.0, a.1);
    let (a2, y10, y01) = comps(b.0, b.1);
    let (m, n) = (x10.len() as f64, x01.len() as f64);
    let var = (cov(&x10, &x10) + cov(&y10, &y10) - 2.0 * cov(&x10, &y10)) / m
        + (cov(&x01, &x01) + cov(&y01, &y01) - 2.0 * cov(&x01, &y01)) / n;
    1.0 - normal_cdf((a1 - a2) / var.sqrt())
}

#[test]
fn compare_matches_naive_delong_on_twenty_cases() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..20).map(|i| format!("case{i:02}")).collect();
    let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
    let sa: Vec<f64> = (0..20).map(|i| ((i * 7 % 11) as f64 + 3.0 * (i % 2) as f64) / 15.0).collect();
    let sb: Vec<f64> = (0..20).map(|i| ((i * 5 % 13) as f64 + 1.5 * (i % 2) as f64) / 15.0).collect();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_scores(&pa, &ids, &sa, &labels);
    write_scores(&pb, &ids, &sb, &labels);
    let split = |s: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let pos = s.iter().zip(&labels).filter(|(_, &l)| l == 1).map(|(v, _)| *v).collect();
        let neg = s.iter().zip(&labels).filter(|(_, &l)| l == 0).map(|(v, _)| *v).collect();
        (pos, neg)
    };
    let (xa, xb) = (split(&sa), split(&sb));
    let want = naive_delong((&xa.0, &xa.1), (&xb.0, &xb.1));
    let rep = cmd_compare(&pa, &pb, CompareMode::DelongPaired, None, 0.5).unwrap();
    assert!((rep.p_one_tailed - want).abs() < 1e-12, "{} vs {want}", rep.p_one_tailed);

    let same = cmd_compare(&pa, &pa, CompareMode::DelongPaired, None, 0.5).unwrap();
    assert_eq!(same.p_one_tailed, 0.5);
    assert_eq!(same.flag.as_deref(), Some("ZeroDifference"));
    assert!(same.to_csv().lines().nth(1).unwrap().ends_with("ZeroDifference"));

    let z = cmd_compare(&pa, &pb, CompareMode::ZTestSe, None, 0.5).unwrap();
    assert!(z.z.is_some() && z.p_one_tailed > 0.0 && z.p_one_tailed < 1.0);
}

fn fake_ledger(root: &Path, name: &str, backbone: &str, best: f64) -> PathBuf {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).unwrap();
    let spec = mammoview::model::ModelSpec::whole_image(backbone, (1152, 896));
    let config = mammoview::train::TrainConfig::for_model(spec);
    std::fs::write(dir.join("config.json"), serde_json::json!({ "config": config }).to_string()).unwrap();
    let rounds: Vec<_> = (0..3)
        .map(|r| mammoview::train::RoundSummary {
            round: r,
            seed: r as u64,
            best_val_metric: 0.8 + 0.01 * r as f64,
            test_metric: best - 0.01 * (2 - r) as f64,
            test_tta_metric: Some(best),
            checkpoint: dir.join(format!("round_{r}/best.safetensors")),
            test_counts: Some((100, 150)),
        })
        .collect();
    let result = mammoview::train::summarize_rounds(rounds).unwrap();
    std::fs::write(dir.join("protocol.json"), serde_json::to_string(&result).unwrap()).unwrap();
    dir
}

#[test]
fn report_tables_and_correlation_plot() {
    let dir = tempfile::tempdir().unwrap();
    let ledgers = vec![
        fake_ledger(dir.path(), "l1", "resnet-50", 0.80),
        fake_ledger(dir.path(), "l2", "efficientnet-b3", 0.84),
        fake_ledger(dir.path(), "l3", "mobilenet-v2", 0.78),
    ];
    let out = dir.path().join("report");
    let rep = cmd_report(&ledgers, None, &out).unwrap();
    assert_eq!(rep.rows.len(), 3);
    assert_eq!(rep.table_text.lines().count(), 5);
    assert!(rep.table_text.contains("efficientnet-b3-1k"));
    let r = rep.pearson_r.unwrap();
    assert!(r > 0.9, "r = {r}");
    let svg = std::fs::read_to_string(rep.plot_path.unwrap()).unwrap();
    assert!(svg.contains("<svg") && svg.contains("Pearson r"));
    let first = std::fs::read(out.join("results.csv")).unwrap();
    cmd_report(&ledgers, None, &out).unwrap();
    assert_eq!(first, std::fs::read(out.join("results.csv")).unwrap());

    assert!(matches!(cmd_report(&[], None, &out), Err(CliError::EmptyLedgerSet)));
}
