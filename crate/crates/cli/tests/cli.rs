use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use spectral_distill::io::{self, parse_num};
use spectral_distill::report::{self, RunRecord, METRICS_HEADER, SALINITY_AXIS};
use spectral_distill::{config, main_with};

/// Small enough that the whole command chain runs in seconds.
const TINY: &str = "
world.sample_count = 240
sau.ftir_hidden = [32]
sau.sat_hidden = [16]
sau.refine_layers = 1
sau.refine_heads = 2
sau.refine_head_dim = 8
sau.refine_ffn = 16
sau.refine_tokens = 4
teacher.tokens = 4
teacher.model_dim = 16
teacher.heads = 2
teacher.ffn = 16
student.tokens = 4
student.model_dim = 32
student.heads = 2
student.ffn = 16
student.layers = 3
weights.feature_dims = 16
sau_pretrain.max_epochs = 3
sau_pretrain.early_stop_patience = 2
sau_align.max_epochs = 3
sau_align.early_stop_patience = 2
teacher_schedule.max_epochs = 4
teacher_schedule.early_stop_patience = 2
student_schedule.max_epochs = 3
student_schedule.early_stop_patience = 2
seeds = [0, 1]
";

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("tiny.cfg");
    fs::write(&p, format!("{TINY}{extra}")).unwrap();
    p
}

fn cli(args: &[&str]) -> u8 {
    let mut v = vec!["spectral-distill"];
    v.extend_from_slice(args);
    main_with(v)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_chain(cfg: &Path, out: &Path) {
    for cmd in [
        &["gen-data"][..],
        &["pair"],
        &["split"],
        &["train-sau"],
        &["train-teacher"],
        &["train-student", "--row", "hsi_ancillary_kd"],
        &["ablate"],
        &["grid"],
        &["report"],
    ] {
        let mut args = cmd.to_vec();
        args.extend(["--config", s(cfg), "--out-dir", s(out), "--seed", "7"]);
        assert_eq!(cli(&args), 0, "{cmd:?}");
    }
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, d: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn every_command_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_chain(&cfg, &a);
    run_chain(&cfg, &b);
    let (ta, tb) = (tree(&a), tree(&b));
    for f in [
        "ftir.csv",
        "sat.csv",
        "truth.csv",
        "pairs.csv",
        "split.csv",
        "sau.ckpt",
        "sau_align_log.csv",
        "teacher.ckpt",
        "teacher_log.csv",
        "runs/hsi_only-seed1/log.csv",
        "runs/hsi_ancillary_kd-seed7/student.ckpt",
        "ablation.csv",
        "grid.csv",
        "metrics.csv",
        "comparison.csv",
        "scatter.svg",
        "loss.svg",
        "manifest.txt",
    ] {
        assert!(ta.contains_key(f), "missing {f}");
    }
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{k} differs between identical runs");
    }
    // a different seed changes the corpus
    let c = tmp.path().join("c");
    assert_eq!(
        cli(&[
            "gen-data",
            "--config",
            s(&cfg),
            "--out-dir",
            s(&c),
            "--seed",
            "8"
        ]),
        0
    );
    assert_ne!(fs::read(c.join("sat.csv")).unwrap(), ta["sat.csv"]);
}

#[test]
fn binary_corpus_matches_csv_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(
        cli(&["gen-data", "--config", s(&cfg), "--out-dir", s(&a)]),
        0
    );
    assert_eq!(
        cli(&[
            "gen-data",
            "--format",
            "bin",
            "--config",
            s(&cfg),
            "--out-dir",
            s(&b)
        ]),
        0
    );
    assert!(b.join("ftir.spc1").exists() && !b.join("ftir.csv").exists());
    let (da, db) = (io::load_dataset(&a).unwrap(), io::load_dataset(&b).unwrap());
    assert_eq!(da.ftir, db.ftir);
    assert_eq!(da.sat, db.sat);
    assert_eq!(da.labels, db.labels);
    assert_eq!(da.ancillary, db.ancillary);
    for d in [&a, &b] {
        assert_eq!(cli(&["pair", "--config", s(&cfg), "--out-dir", s(d)]), 0);
    }
    assert_eq!(
        fs::read(a.join("pairs.csv")).unwrap(),
        fs::read(b.join("pairs.csv")).unwrap()
    );
}

#[test]
fn report_of_no_runs_is_headers_only() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("empty");
    fs::create_dir(&data).unwrap();
    let out = tmp.path().join("report");
    assert_eq!(
        cli(&["report", "--data-dir", s(&data), "--out-dir", s(&out)]),
        0
    );
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics, format!("{}\n", METRICS_HEADER.join(",")));
    assert_eq!(
        fs::read_to_string(out.join("comparison.csv"))
            .unwrap()
            .lines()
            .count(),
        1
    );
    assert!(!out.join("scatter.svg").exists());
    assert!(!out.join("loss.svg").exists());
}

#[test]
fn report_of_a_missing_directory_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("never-created");
    let code = cli(&[
        "report",
        "--data-dir",
        s(&missing),
        "--out-dir",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn report_numbers_round_trip_and_axes_span_the_label_range() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "seeds = [3]\n");
    let d = tmp.path().join("run");
    for cmd in [
        &["gen-data"][..],
        &["train-sau"],
        &["train-teacher"],
        &["ablate"],
    ] {
        let mut args = cmd.to_vec();
        args.extend(["--config", s(&cfg), "--out-dir", s(&d)]);
        assert_eq!(cli(&args), 0, "{cmd:?}");
    }
    let out = tmp.path().join("report");
    assert_eq!(
        cli(&["report", "--data-dir", s(&d), "--out-dir", s(&out)]),
        0
    );

    let records: Vec<RunRecord> = report::find_runs(&d)
        .unwrap()
        .iter()
        .map(|p| report::load_run(p).unwrap().record)
        .collect();
    assert_eq!(records.len(), 4);
    let (header, rows) = io::read_csv(&out.join("metrics.csv")).unwrap();
    assert_eq!(header, METRICS_HEADER);
    for r in &records {
        for m in [&r.validation, &r.test] {
            let line = rows
                .iter()
                .find(|l| l[0] == r.name() && l[4] == m.split && l[5] == "all")
                .unwrap();
            assert_eq!(parse_num(&line[7], "mae").unwrap(), m.overall.mae);
            assert_eq!(parse_num(&line[8], "rmse").unwrap(), m.overall.rmse);
            assert_eq!(parse_num(&line[9], "r2").unwrap(), m.overall.r2);
            assert!(m.overall.rmse >= m.overall.mae);
            for st in &m.strata {
                let line = rows
                    .iter()
                    .find(|l| l[0] == r.name() && l[4] == m.split && l[5] == st.stratum.to_string())
                    .unwrap();
                assert_eq!(parse_num(&line[7], "mae").unwrap(), st.mae);
                assert_eq!(line[9].is_empty(), st.r2.is_none());
            }
        }
    }
    let svg = fs::read_to_string(out.join("scatter.svg")).unwrap();
    let attr = |name: &str| -> f64 {
        let at = svg.find(&format!("{name}=\"")).unwrap() + name.len() + 2;
        svg[at..at + svg[at..].find('"').unwrap()].parse().unwrap()
    };
    assert_eq!((attr("data-x-min"), attr("data-x-max")), SALINITY_AXIS);
    assert_eq!((attr("data-y-min"), attr("data-y-max")), SALINITY_AXIS);
    assert_eq!(SALINITY_AXIS, (0.0, 90.0));
    assert!(svg.contains(">90</text>"));
    assert!(fs::read_to_string(out.join("loss.svg"))
        .unwrap()
        .contains("<polyline"));
}

#[test]
fn config_files_in_both_forms() {
    let tmp = tempfile::tempdir().unwrap();
    let json = tmp.path().join("c.json");
    fs::write(
        &json,
        r#"{"preset": "full", "world": {"sample_count": 120}}"#,
    )
    .unwrap();
    let c = config::load(Some(&json)).unwrap();
    assert_eq!(c.world.sample_count, 120);
    assert_eq!(c.student.tokens, 64);
    let kv = tiny_config(tmp.path(), "");
    assert_eq!(config::load(Some(&kv)).unwrap().teacher.model_dim, 16);
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_spectral-distill"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    // unknown config key
    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "student_schedule.patience = 3\n").unwrap();
    let o = binary(&["gen-data", "--config", s(&bad), "--out-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("student_schedule.patience"));
    // inputs missing
    assert_eq!(
        binary(&["pair", "--out-dir", s(&out)]).status.code(),
        Some(2)
    );
    // unknown subcommand
    assert_eq!(binary(&["train-everything"]).status.code(), Some(2));
    // a learning rate this large overflows the weights on the first steps
    let cfg = tiny_config(tmp.path(), "teacher_schedule.lr = 1e300\n");
    for cmd in ["gen-data", "train-sau"] {
        assert_eq!(
            binary(&[cmd, "--config", s(&cfg), "--out-dir", s(&out)])
                .status
                .code(),
            Some(0)
        );
    }
    let o = binary(&["train-teacher", "--config", s(&cfg), "--out-dir", s(&out)]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    // a student that needs a teacher that was never trained
    let o = binary(&[
        "train-student",
        "--row",
        "hsi_ancillary_kd",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train-teacher"));
    let o = binary(&[
        "train-student",
        "--row",
        "hsi_only",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
