//! One function per subcommand. Each reads its inputs from the data
//! directory, writes into the output directory, and refreshes the output
//! directory's manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use spectral_distill_core::distill::TeacherModel;
use spectral_distill_core::geopair::{leakage_audit, Split};
use spectral_distill_core::pipeline::experiment::{
    ablation_suite, assemble, coefficient_grid, embed, grid_search, pair_dataset, run_student,
    split_dataset, student_inputs, train_sau, train_teacher_stage, AblationRow, Embeddings,
    ExperimentConfig, GridResult, Prepared, StudentInputsSet, StudentRun,
};
use spectral_distill_core::pipeline::MetricsReport;
use spectral_distill_core::sau::SauModel;
use spectral_distill_core::synthgen::gen_dataset;

use crate::error::{CliError, Result};
use crate::io::{self, csv_text, json, num, write, write_manifest, Format};
use crate::report::{
    self, comparison_csv, run_name, summarize_records, Prediction, RowSummary, RunRecord,
};

/// Resolved settings shared by every subcommand.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out_dir: PathBuf,
    pub data_dir: PathBuf,
}

impl Context {
    fn finish(&self, command: &str) -> Result<()> {
        write(
            &self.out_dir.join(format!("{command}.config.txt")),
            crate::config::to_key_values(&self.cfg),
        )?;
        write_manifest(&self.out_dir)?;
        Ok(())
    }
}

pub fn gen_data(ctx: &Context, format: Format) -> Result<String> {
    let d = gen_dataset(&ctx.cfg.world)?;
    io::save_dataset(&ctx.out_dir, &d, format)?;
    ctx.finish("gen-data")?;
    let zeros = d.labels.iter().filter(|y| **y == 0.0).count();
    Ok(format!(
        "{} sites ({} salt-free), {} laboratory samples -> {}",
        d.len(),
        zeros,
        d.ftir.len(),
        ctx.out_dir.display()
    ))
}

pub fn pair(ctx: &Context) -> Result<String> {
    let d = io::load_dataset(&ctx.data_dir)?;
    let pairs = pair_dataset(&d, &ctx.cfg)?;
    write(&ctx.out_dir.join("pairs.csv"), io::pairs_csv(&pairs))?;
    ctx.finish("pair")?;
    Ok(format!(
        "{} pairs within {} rad",
        pairs.len(),
        ctx.cfg.pair_tau
    ))
}

pub fn split(ctx: &Context) -> Result<String> {
    let d = io::load_dataset(&ctx.data_dir)?;
    let a = split_dataset(&d, &ctx.cfg)?;
    write(&ctx.out_dir.join("split.csv"), io::split_csv(&a))?;
    write(&ctx.out_dir.join("clusters.csv"), io::clusters_csv(&a))?;
    ctx.finish("split")?;
    let count = |w| a.split.iter().filter(|s| **s == w).count();
    Ok(format!(
        "train {} / validation {} / test {} sites in {} clusters",
        count(Split::Train),
        count(Split::Validation),
        count(Split::Test),
        a.centroids.len()
    ))
}

/// Corpus plus pairs and split: from `pairs.csv` and `split.csv` when
/// present, recomputed from the configuration otherwise.
pub fn load_prepared(ctx: &Context) -> Result<Prepared> {
    let dir = &ctx.data_dir;
    let d = io::load_dataset(dir)?;
    let pairs = match dir.join("pairs.csv") {
        p if p.exists() => io::parse_pairs_csv(&p)?,
        _ => pair_dataset(&d, &ctx.cfg)?,
    };
    let split = if dir.join("split.csv").exists() {
        let a = io::parse_split(&dir.join("split.csv"), &dir.join("clusters.csv"))?;
        leakage_audit(&a, &d.sat.iter().map(|s| s.location).collect::<Vec<_>>())?;
        a
    } else {
        split_dataset(&d, &ctx.cfg)?
    };
    Ok(assemble(d, &pairs, split)?)
}

#[derive(Serialize)]
struct SauSummary {
    initial_cosine: f64,
    final_cosine: f64,
    ftir_encoder_before_align: String,
    ftir_encoder_after_align: String,
    alpha: f64,
    beta: f64,
    pretrain_epochs: usize,
    align_epochs: usize,
}

pub fn train_sau_cmd(ctx: &Context) -> Result<String> {
    let prep = load_prepared(ctx)?;
    let st = train_sau(&ctx.cfg, &prep)?;
    let out = &ctx.out_dir;
    io::save_checkpoint(out, "sau", &st.model.params)?;
    write(&out.join("sau_pretrain_log.csv"), st.pretrain_log.to_csv())?;
    write(
        &out.join("sau_pretrain_plateau.csv"),
        st.pretrain_log.plateau_csv(),
    )?;
    write(&out.join("sau_align_log.csv"), st.align_log.to_csv())?;
    write(
        &out.join("sau_align_plateau.csv"),
        st.align_log.plateau_csv(),
    )?;
    let summary = SauSummary {
        initial_cosine: st.initial_cosine,
        final_cosine: st.final_cosine,
        ftir_encoder_before_align: st.ftir_encoder_before_align.clone(),
        ftir_encoder_after_align: st.ftir_encoder_after_align.clone(),
        alpha: st.model.alpha(),
        beta: st.model.beta(),
        pretrain_epochs: st.pretrain_log.epochs.len(),
        align_epochs: st.align_log.epochs.len(),
    };
    write(&out.join("sau_summary.json"), json(&summary))?;
    ctx.finish("train-sau")?;
    Ok(format!(
        "held-out pair cosine distance {:.4} -> {:.4}",
        st.initial_cosine, st.final_cosine
    ))
}

pub fn load_sau(ctx: &Context) -> Result<SauModel> {
    let mut m = SauModel::new(&ctx.cfg.sau, ctx.cfg.seed)?;
    io::load_checkpoint(&ctx.data_dir, "sau", &mut m.params).map_err(|e| hint(e, "train-sau"))?;
    Ok(m)
}

pub fn load_teacher(ctx: &Context) -> Result<TeacherModel> {
    let mut m = TeacherModel::new(&ctx.cfg.teacher, ctx.cfg.seed)?;
    io::load_checkpoint(&ctx.data_dir, "teacher", &mut m.params)
        .map_err(|e| hint(e, "train-teacher"))?;
    Ok(m)
}

fn hint(e: CliError, command: &str) -> CliError {
    match e {
        CliError::Invalid(m) => {
            CliError::Invalid(format!("{m} (run {command} first, with the same config)"))
        }
        other => other,
    }
}

pub fn train_teacher_cmd(ctx: &Context) -> Result<String> {
    let prep = load_prepared(ctx)?;
    let emb = embed(&load_sau(ctx)?, &prep)?;
    let st = train_teacher_stage(&ctx.cfg, &prep, &emb)?;
    let out = &ctx.out_dir;
    io::save_checkpoint(out, "teacher", &st.model.params)?;
    write(&out.join("teacher_log.csv"), st.log.to_csv())?;
    write(&out.join("teacher_plateau.csv"), st.log.plateau_csv())?;
    write(&out.join("teacher_metrics.json"), json(&st.val))?;
    ctx.finish("train-teacher")?;
    let m = st.val.overall;
    Ok(format!(
        "teacher validation MAE {:.4}, R2 {:.4}, RMSE {:.4}",
        m.mae, m.r2, m.rmse
    ))
}

struct StudentSetup {
    prep: Prepared,
    inputs: StudentInputsSet,
}

fn student_setup(ctx: &Context, need_teacher: bool) -> Result<StudentSetup> {
    let prep = load_prepared(ctx)?;
    let emb: Embeddings = embed(&load_sau(ctx)?, &prep)?;
    let teacher = if need_teacher {
        Some(load_teacher(ctx)?)
    } else {
        None
    };
    let inputs = student_inputs(&ctx.cfg, &prep, &emb, teacher.as_ref())?;
    Ok(StudentSetup { prep, inputs })
}

fn record_of(run: &StudentRun) -> RunRecord {
    RunRecord {
        row: run.row,
        seed: run.seed,
        config_hash: run.config_hash.clone(),
        epochs: run.log.epochs.len(),
        best_epoch: run.log.best_epoch,
        stopped_early: run.log.stopped_early,
        validation: run.val.clone(),
        test: run.test.clone(),
    }
}

fn save_run(ctx: &Context, setup: &StudentSetup, run: &StudentRun) -> Result<RunRecord> {
    let dir = ctx.out_dir.join("runs").join(run_name(run.row, run.seed));
    let record = record_of(run);
    let test_preds = run.model.predict(&setup.inputs.test_x)?;
    let mut preds = Vec::new();
    for (which, p, y) in [
        (Split::Validation, &run.val_preds, &setup.inputs.val_y),
        (Split::Test, &test_preds, &setup.inputs.test_y),
    ] {
        for ((site, p), y) in setup.prep.sat_indices(which).into_iter().zip(p).zip(y) {
            preds.push(Prediction {
                split: which.as_str().to_string(),
                site,
                label: *y,
                prediction: *p,
            });
        }
    }
    report::write_run(&dir, &record, &preds, &run.log)?;
    io::save_checkpoint(&dir, "student", &run.model.params)?;
    Ok(record)
}

pub fn train_student_cmd(ctx: &Context, row: AblationRow, seed: Option<u64>) -> Result<String> {
    let (student, weights) = row.setup(&ctx.cfg);
    let setup = student_setup(ctx, weights.uses_teacher())?;
    let seed = seed.unwrap_or(ctx.cfg.seed);
    let run = run_student(
        &student,
        &weights,
        &ctx.cfg.student_schedule,
        &setup.inputs,
        row,
        seed,
    )?;
    save_run(ctx, &setup, &run)?;
    ctx.finish("train-student")?;
    let m = run.val.overall;
    Ok(format!(
        "{} seed {seed}: validation MAE {:.4}, R2 {:.4}, RMSE {:.4}",
        row.as_str(),
        m.mae,
        m.r2,
        m.rmse
    ))
}

#[derive(Serialize)]
struct AblationFile {
    ordering_holds: bool,
    rows: Vec<RowSummary>,
}

/// Whether median validation MAE satisfies
/// KD < HSI+ancillary < min(ancillary-only, HSI-only).
pub fn ordering_holds(summary: &[RowSummary]) -> bool {
    let m = |row| summary.iter().find(|s| s.row == row).map(|s| s.mae.median);
    match (
        m(AblationRow::HsiAncillaryKd),
        m(AblationRow::HsiAncillary),
        m(AblationRow::AncillaryOnly),
        m(AblationRow::HsiOnly),
    ) {
        (Some(kd), Some(both), Some(anc), Some(hsi)) => kd < both && both < anc && both < hsi,
        _ => false,
    }
}

pub fn ablate(ctx: &Context, rows: &[AblationRow]) -> Result<String> {
    let rows = if rows.is_empty() {
        AblationRow::ALL.to_vec()
    } else {
        rows.to_vec()
    };
    let kd = rows.iter().any(|r| r.setup(&ctx.cfg).1.uses_teacher());
    let setup = student_setup(ctx, kd)?;
    let runs = ablation_suite(&ctx.cfg, &setup.inputs, &rows)?;
    let records = runs
        .iter()
        .map(|r| save_run(ctx, &setup, r))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize_records(&records);
    write(&ctx.out_dir.join("ablation.csv"), comparison_csv(&summary))?;
    let holds = ordering_holds(&summary);
    write(
        &ctx.out_dir.join("ablation.json"),
        json(&AblationFile {
            ordering_holds: holds,
            rows: summary.clone(),
        }),
    )?;
    ctx.finish("ablate")?;
    let mut s = String::new();
    for r in &summary {
        s.push_str(&format!(
            "{:<22} median MAE {:.4} [{:.4}, {:.4}] over {} seeds\n",
            report::row_label(r.row),
            r.mae.median,
            r.mae.min,
            r.mae.max,
            r.runs
        ));
    }
    s.push_str(&format!("ordering KD < HSI+ancillary < others: {holds}"));
    Ok(s)
}

pub const GRID_HEADER: [&str; 10] = [
    "rank", "w1", "w2", "w3", "alpha", "beta", "gamma", "mae", "r2", "rmse",
];

pub fn grid_csv(results: &[GridResult]) -> String {
    let rows: Vec<Vec<String>> = results
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let w = &g.weights;
            let mut r = vec![(i + 1).to_string()];
            r.extend(w.layer_weights.iter().map(|v| num(*v)));
            r.extend([
                num(w.alpha),
                num(w.beta),
                num(w.gamma),
                num(g.mae),
                num(g.r2),
                num(g.rmse),
            ]);
            r
        })
        .collect();
    csv_text(&GRID_HEADER, &rows)
}

pub fn grid(ctx: &Context) -> Result<String> {
    let setup = student_setup(ctx, true)?;
    let results = grid_search(&ctx.cfg, &setup.inputs, &coefficient_grid(&ctx.cfg.weights))?;
    write(&ctx.out_dir.join("grid.csv"), grid_csv(&results))?;
    ctx.finish("grid")?;
    let best = results
        .first()
        .ok_or_else(|| CliError::invalid("empty candidate grid"))?;
    Ok(format!(
        "best of {}: layer weights {:?}, alpha {}, beta {}, gamma {} (median validation MAE {:.4})",
        results.len(),
        best.weights.layer_weights,
        best.weights.alpha,
        best.weights.beta,
        best.weights.gamma,
        best.mae
    ))
}

pub fn report_cmd(data_dir: &Path, out_dir: &Path) -> Result<String> {
    let out = report::report(data_dir, out_dir)?;
    Ok(format!("{} runs -> {}", out.runs, out_dir.display()))
}

/// Checks a report against the metric identities.
pub fn check_report(r: &MetricsReport) -> bool {
    r.overall.rmse >= r.overall.mae && r.overall.mae >= 0.0 && r.overall.r2 <= 1.0
}
