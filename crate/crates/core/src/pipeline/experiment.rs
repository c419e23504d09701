//! End-to-end runs on a synthetic world: generate, pair, split, adapt,
//! train the teacher, then train students for each ablation row and seed.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::metrics::{config_hash, MetricsReport};
use super::schedule::{TrainLog, TrainSchedule};
use crate::distill::{
    teacher_targets, train_student, train_teacher, DistillWeights, StudentConfig, StudentData,
    StudentInputs, StudentModel, TeacherConfig, TeacherData, TeacherModel, TeacherTargets,
};
use crate::geopair::{
    leakage_audit, make_pairs, spatial_split, undersample_zeros, BallTree, GeoPoint, PairIndex,
    Split, SplitAssignment, SplitConfig, TAU,
};
use crate::numerics::Tensor;
use crate::sau::{
    finetune_align, mean_pair_cosine_distance, pretrain_ftir, AlignData, Path, SauConfig, SauModel,
};
use crate::synthgen::{gen_dataset, Dataset, WorldConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub pair_tau: f64,
    pub split: SplitConfig,
    /// Share of zero-label training samples kept for teacher and student.
    pub keep_zero_fraction: f64,
    pub sau: SauConfig,
    pub sau_pretrain: TrainSchedule,
    pub sau_align: TrainSchedule,
    pub teacher: TeacherConfig,
    pub teacher_schedule: TrainSchedule,
    pub student: StudentConfig,
    pub student_schedule: TrainSchedule,
    pub weights: DistillWeights,
    /// Seed of the adaptation unit and teacher, shared by every student.
    pub seed: u64,
    /// One student per seed and ablation row.
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

fn schedule(max_epochs: usize, patience: usize) -> TrainSchedule {
    TrainSchedule {
        max_epochs,
        early_stop_patience: patience,
        ..TrainSchedule::default()
    }
}

impl ExperimentConfig {
    /// Full-size architecture: scalar tokens everywhere and the 200-epoch
    /// schedule.
    pub fn full() -> Self {
        Self {
            world: WorldConfig::default(),
            pair_tau: TAU,
            split: SplitConfig::default(),
            keep_zero_fraction: 0.10,
            sau: SauConfig::default(),
            sau_pretrain: TrainSchedule::default(),
            sau_align: TrainSchedule::default(),
            teacher: TeacherConfig::default(),
            teacher_schedule: TrainSchedule::default(),
            student: StudentConfig::default(),
            student_schedule: TrainSchedule::default(),
            weights: DistillWeights::default(),
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }

    /// Same widths and depths as [`ExperimentConfig::full`], but every
    /// transformer sees 8 patch tokens instead of 64 scalar ones, and
    /// schedules are capped so a whole suite fits on one core.
    pub fn desk() -> Self {
        let full = Self::full();
        Self {
            sau: SauConfig {
                refine_tokens: 8,
                ..full.sau
            },
            sau_pretrain: schedule(20, 5),
            sau_align: schedule(15, 5),
            teacher: TeacherConfig {
                tokens: 8,
                ..full.teacher
            },
            teacher_schedule: schedule(120, 10),
            student: StudentConfig {
                tokens: 8,
                ..full.student
            },
            student_schedule: schedule(120, 10),
            ..full
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.sau.validate()?;
        self.teacher.validate()?;
        self.student.validate()?;
        self.weights.validate()?;
        for s in [
            &self.sau_pretrain,
            &self.sau_align,
            &self.teacher_schedule,
            &self.student_schedule,
        ] {
            s.validate()?;
        }
        if !(self.pair_tau > 0.0) {
            return Err(Error::config("pairing radius must be positive"));
        }
        if !(0.0..=1.0).contains(&self.keep_zero_fraction) {
            return Err(Error::config("keep_zero_fraction must lie in [0, 1]"));
        }
        if self.teacher.input_dim != self.sau.latent_dim
            || self.student.spectral_dim != self.sau.latent_dim
        {
            return Err(Error::config(
                "teacher and student inputs must match the latent width",
            ));
        }
        if self.weights.feature_dims != self.teacher.model_dim
            || self.teacher.model_dim > self.student.model_dim
        {
            return Err(Error::config(
                "feature distillation width must equal the teacher width and fit inside the student",
            ));
        }
        if self.teacher.layers != self.weights.layer_weights.len()
            || self.student.layers < self.teacher.layers
        {
            return Err(Error::config(
                "every teacher layer needs a weight and a student counterpart",
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one student seed is required"));
        }
        Ok(())
    }
}

/// Generated corpus with pairing and split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: Dataset,
    /// Laboratory index paired with each satellite site, if any.
    pub ftir_of_sat: Vec<Option<usize>>,
    /// Split of every satellite site.
    pub split: SplitAssignment,
    /// Split of every laboratory sample: its pair's, or its nearest site's.
    pub ftir_split: Vec<Split>,
}

impl Prepared {
    pub fn sat_indices(&self, which: Split) -> Vec<usize> {
        self.split.indices(which)
    }

    pub fn ftir_indices(&self, which: Split) -> Vec<usize> {
        (0..self.ftir_split.len())
            .filter(|&i| self.ftir_split[i] == which)
            .collect()
    }

    pub fn ftir_labels(&self) -> Vec<f64> {
        self.data
            .ftir
            .iter()
            .map(|s| s.salinity.unwrap_or(0.0))
            .collect()
    }
}

fn geo_points<'a>(
    locations: impl Iterator<Item = &'a crate::spectra::Location>,
) -> Result<Vec<GeoPoint>> {
    locations.map(GeoPoint::from_location).collect()
}

/// Laboratory/satellite pairs within `cfg.pair_tau`.
pub fn pair_dataset(data: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<PairIndex>> {
    let fp = geo_points(data.ftir.iter().map(|s| &s.location))?;
    let sp = geo_points(data.sat.iter().map(|s| &s.location))?;
    Ok(make_pairs(&fp, &sp, cfg.pair_tau))
}

/// Spatial split of the satellite sites, audited for leakage.
pub fn split_dataset(data: &Dataset, cfg: &ExperimentConfig) -> Result<SplitAssignment> {
    let locations: Vec<_> = data.sat.iter().map(|s| s.location).collect();
    let split = spatial_split(
        &locations,
        &data.labels,
        &SplitConfig {
            seed: cfg.seed,
            ..cfg.split.clone()
        },
    )?;
    leakage_audit(&split, &locations)?;
    Ok(split)
}

/// Combines a corpus with its pairs and site split.
pub fn assemble(data: Dataset, pairs: &[PairIndex], split: SplitAssignment) -> Result<Prepared> {
    let (nf, ns) = (data.ftir.len(), data.sat.len());
    if split.split.len() != ns {
        return Err(Error::shape(format!(
            "split covers {} sites, corpus has {ns}",
            split.split.len()
        )));
    }
    let mut ftir_of_sat = vec![None; ns];
    let mut sat_of_ftir = vec![None; nf];
    for p in pairs {
        if p.ftir >= nf || p.sat >= ns {
            return Err(Error::invalid(format!(
                "pair ({}, {}) is out of range",
                p.ftir, p.sat
            )));
        }
        // several laboratory samples may share a site; the first wins
        if ftir_of_sat[p.sat].is_none() {
            ftir_of_sat[p.sat] = Some(p.ftir);
        }
        sat_of_ftir[p.ftir] = Some(p.sat);
    }
    let sp = geo_points(data.sat.iter().map(|s| &s.location))?;
    let fp = geo_points(data.ftir.iter().map(|s| &s.location))?;
    let tree = BallTree::build(&sp)?;
    let ftir_split = fp
        .iter()
        .zip(&sat_of_ftir)
        .map(|(p, s)| split.split[s.unwrap_or_else(|| tree.nearest(*p).0)])
        .collect();
    Ok(Prepared {
        data,
        ftir_of_sat,
        split,
        ftir_split,
    })
}

pub fn prepare_from(data: Dataset, cfg: &ExperimentConfig) -> Result<Prepared> {
    let pairs = pair_dataset(&data, cfg)?;
    let split = split_dataset(&data, cfg)?;
    assemble(data, &pairs, split)
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    prepare_from(gen_dataset(&cfg.world)?, cfg)
}

#[derive(Clone, Debug)]
pub struct SauStage {
    pub model: SauModel,
    pub pretrain_log: TrainLog,
    pub align_log: TrainLog,
    /// Held-out mean pair cosine distance of the untrained model.
    pub initial_cosine: f64,
    pub final_cosine: f64,
    pub ftir_encoder_before_align: String,
    pub ftir_encoder_after_align: String,
}

fn rows_of(t: &Tensor, idx: &[usize]) -> Tensor {
    t.gather_rows(idx)
}

/// Held-out and training pairs as `(sat index, ftir index)` lists.
fn pairs_in(prep: &Prepared, which: Split) -> Vec<(usize, usize)> {
    prep.sat_indices(which)
        .into_iter()
        .filter_map(|s| prep.ftir_of_sat[s].map(|f| (s, f)))
        .collect()
}

/// Standardizer fit, laboratory pretraining, then alignment on pairs.
pub fn train_sau(cfg: &ExperimentConfig, prep: &Prepared) -> Result<SauStage> {
    let mut model = SauModel::new(&cfg.sau, cfg.seed)?;
    let ftir_all = SauModel::ftir_rows(&prep.data.ftir.iter().collect::<Vec<_>>())?;
    let sat_all = model.sat_rows(&prep.data.sat.iter().collect::<Vec<_>>())?;
    let (ftr, fva) = (
        prep.ftir_indices(Split::Train),
        prep.ftir_indices(Split::Validation),
    );
    let str_ = prep.sat_indices(Split::Train);
    model.fit_scalers(&rows_of(&ftir_all, &ftr), &rows_of(&sat_all, &str_))?;
    let ftir_std = model.standardize(&ftir_all, Path::Ftir)?;
    let sat_std = model.standardize(&sat_all, Path::Satellite)?;

    let (tp, vp) = (
        pairs_in(prep, Split::Train),
        pairs_in(prep, Split::Validation),
    );
    if tp.len() < 2 || vp.is_empty() {
        return Err(Error::invalid(format!(
            "{} training and {} held-out pairs are too few to align",
            tp.len(),
            vp.len()
        )));
    }
    let pick = |t: &Tensor, p: &[(usize, usize)], sat: bool| {
        let idx: Vec<usize> = p.iter().map(|&(s, f)| if sat { s } else { f }).collect();
        t.gather_rows(&idx)
    };
    let align = AlignData {
        train_ftir: pick(&ftir_std, &tp, false),
        train_sat: pick(&sat_std, &tp, true),
        val_ftir: pick(&ftir_std, &vp, false),
        val_sat: pick(&sat_std, &vp, true),
    };
    let initial_cosine = mean_pair_cosine_distance(&model, &align.val_ftir, &align.val_sat)?;
    let pretrain_log = pretrain_ftir(
        &mut model,
        &rows_of(&ftir_std, &ftr),
        &rows_of(&ftir_std, &fva),
        &TrainSchedule {
            seed: cfg.seed,
            ..cfg.sau_pretrain.clone()
        },
    )?;
    let before = model.params.checksum(SauModel::FTIR_ENCODER);
    let align_log = finetune_align(
        &mut model,
        &align,
        &TrainSchedule {
            seed: cfg.seed,
            ..cfg.sau_align.clone()
        },
    )?;
    let final_cosine = mean_pair_cosine_distance(&model, &align.val_ftir, &align.val_sat)?;
    Ok(SauStage {
        ftir_encoder_after_align: model.params.checksum(SauModel::FTIR_ENCODER),
        model,
        pretrain_log,
        align_log,
        initial_cosine,
        final_cosine,
        ftir_encoder_before_align: before,
    })
}

/// Latent embeddings of every laboratory and satellite sample.
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub ftir: Tensor,
    pub sat: Tensor,
}

pub fn embed(sau: &SauModel, prep: &Prepared) -> Result<Embeddings> {
    let ftir = sau.encode(
        &SauModel::ftir_rows(&prep.data.ftir.iter().collect::<Vec<_>>())?,
        Path::Ftir,
    )?;
    let sat = sau.encode(
        &sau.sat_rows(&prep.data.sat.iter().collect::<Vec<_>>())?,
        Path::Satellite,
    )?;
    Ok(Embeddings { ftir, sat })
}

fn labels_at(y: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| y[i]).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[derive(Clone, Debug)]
pub struct TeacherStage {
    pub model: TeacherModel,
    pub log: TrainLog,
    pub val: MetricsReport,
}

/// Teacher on laboratory embeddings: undersampled training zeros,
/// validation untouched.
pub fn train_teacher_stage(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    emb: &Embeddings,
) -> Result<TeacherStage> {
    let y = prep.ftir_labels();
    let train = undersample_zeros(
        &prep.ftir_indices(Split::Train),
        &y,
        cfg.keep_zero_fraction,
        cfg.seed,
    )?;
    let val = prep.ftir_indices(Split::Validation);
    let data = TeacherData {
        train_x: emb.ftir.gather_rows(&train),
        train_y: labels_at(&y, &train),
        val_x: emb.ftir.gather_rows(&val),
        val_y: labels_at(&y, &val),
    };
    let mut model = TeacherModel::new(&cfg.teacher, cfg.seed)?;
    model.init_output(mean(&data.train_y));
    let log = train_teacher(
        &mut model,
        &data,
        cfg.weights.huber_delta,
        &TrainSchedule {
            seed: cfg.seed,
            ..cfg.teacher_schedule.clone()
        },
    )?;
    let val = MetricsReport::new(
        "validation",
        &model.predict(&data.val_x)?,
        &data.val_y,
        cfg.seed,
        &config_hash(&format!("{:?}{:?}", cfg.teacher, cfg.teacher_schedule)),
    )?;
    Ok(TeacherStage { model, log, val })
}

/// Rows of the ablation ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationRow {
    AncillaryOnly,
    HsiAncillary,
    HsiAncillaryKd,
    HsiOnly,
}

impl AblationRow {
    pub const ALL: [AblationRow; 4] = [
        AblationRow::AncillaryOnly,
        AblationRow::HsiAncillary,
        AblationRow::HsiAncillaryKd,
        AblationRow::HsiOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationRow::AncillaryOnly => "ancillary_only",
            AblationRow::HsiAncillary => "hsi_ancillary",
            AblationRow::HsiAncillaryKd => "hsi_ancillary_kd",
            AblationRow::HsiOnly => "hsi_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ablation row {s:?}")))
    }

    /// Student architecture and objective of this row.
    pub fn setup(self, cfg: &ExperimentConfig) -> (StudentConfig, DistillWeights) {
        let with = |inputs| StudentConfig {
            inputs,
            ..cfg.student.clone()
        };
        let task = DistillWeights {
            layer_weights: cfg.weights.layer_weights.clone(),
            huber_delta: cfg.weights.huber_delta,
            smooth_l1_delta: cfg.weights.smooth_l1_delta,
            feature_dims: cfg.weights.feature_dims,
            ..DistillWeights::task_only()
        };
        match self {
            AblationRow::AncillaryOnly => (with(StudentInputs::AncillaryOnly), task),
            AblationRow::HsiAncillary => (with(StudentInputs::Full), task),
            AblationRow::HsiAncillaryKd => (with(StudentInputs::Full), cfg.weights.clone()),
            AblationRow::HsiOnly => (with(StudentInputs::HsiOnly), task),
        }
    }
}

/// Hash of everything that distinguishes one student run from another.
pub fn student_hash(
    student: &StudentConfig,
    weights: &DistillWeights,
    schedule: &TrainSchedule,
) -> String {
    config_hash(&format!("{student:?}|{weights:?}|{schedule:?}"))
}

/// Fails when two ablation rows would train the same configuration.
pub fn check_distinct_rows(
    setups: &[(AblationRow, StudentConfig, DistillWeights)],
    schedule: &TrainSchedule,
) -> Result<()> {
    let hashes: Vec<String> = setups
        .iter()
        .map(|(_, s, w)| student_hash(s, w, schedule))
        .collect();
    for i in 0..hashes.len() {
        for j in i + 1..hashes.len() {
            if hashes[i] == hashes[j] {
                return Err(Error::config(format!(
                    "ablation rows {} and {} share config hash {}",
                    setups[i].0.as_str(),
                    setups[j].0.as_str(),
                    hashes[i]
                )));
            }
        }
    }
    Ok(())
}

/// Everything the students of one experiment share.
#[derive(Clone, Debug)]
pub struct StudentInputsSet {
    pub train_x: Tensor,
    pub train_y: Vec<f64>,
    /// Teacher outputs on the paired training rows; only distilled
    /// students need them.
    pub teacher: Option<TeacherTargets>,
    pub paired: Vec<bool>,
    pub val_x: Tensor,
    pub val_y: Vec<f64>,
    pub test_x: Tensor,
    pub test_y: Vec<f64>,
}

/// `[satellite embedding; ancillary]` rows for the given sites.
pub fn student_rows(prep: &Prepared, emb: &Embeddings, idx: &[usize]) -> Result<Tensor> {
    let d = emb.sat.cols();
    let mut out = Vec::with_capacity(idx.len() * (d + 8));
    for &i in idx {
        out.extend_from_slice(emb.sat.row(i));
        out.extend_from_slice(&prep.data.ancillary[i].to_array());
    }
    Tensor::new(&[idx.len(), d + 8], out)
}

pub fn student_inputs(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    emb: &Embeddings,
    teacher: Option<&TeacherModel>,
) -> Result<StudentInputsSet> {
    let y = &prep.data.labels;
    let train = undersample_zeros(
        &prep.sat_indices(Split::Train),
        y,
        cfg.keep_zero_fraction,
        cfg.seed,
    )?;
    let val = prep.sat_indices(Split::Validation);
    let test = prep.sat_indices(Split::Test);
    let inputs: Vec<Option<&[f64]>> = train
        .iter()
        .map(|&s| prep.ftir_of_sat[s].map(|f| emb.ftir.row(f)))
        .collect();
    let (targets, paired) = match teacher {
        Some(t) => {
            let (targets, paired) = teacher_targets(t, &inputs)?;
            (Some(targets), paired)
        }
        None => (None, inputs.iter().map(Option::is_some).collect()),
    };
    Ok(StudentInputsSet {
        train_x: student_rows(prep, emb, &train)?,
        train_y: labels_at(y, &train),
        teacher: targets,
        paired,
        val_x: student_rows(prep, emb, &val)?,
        val_y: labels_at(y, &val),
        test_x: student_rows(prep, emb, &test)?,
        test_y: labels_at(y, &test),
    })
}

#[derive(Clone, Debug)]
pub struct StudentRun {
    pub row: AblationRow,
    pub seed: u64,
    pub config_hash: String,
    pub model: StudentModel,
    pub log: TrainLog,
    pub val: MetricsReport,
    pub test: MetricsReport,
    pub val_preds: Vec<f64>,
}

pub fn run_student(
    cfg: &StudentConfig,
    weights: &DistillWeights,
    schedule: &TrainSchedule,
    set: &StudentInputsSet,
    row: AblationRow,
    seed: u64,
) -> Result<StudentRun> {
    let schedule = TrainSchedule {
        seed,
        ..schedule.clone()
    };
    let hash = student_hash(cfg, weights, &schedule);
    let mut model = StudentModel::new(cfg, seed)?;
    model.fit_ancillary(&set.train_x)?;
    model.init_output(mean(&set.train_y));
    let data = StudentData {
        train_x: set.train_x.clone(),
        train_y: set.train_y.clone(),
        teacher: if weights.uses_teacher() {
            Some(
                set.teacher
                    .clone()
                    .ok_or_else(|| Error::config("a distilled student needs teacher targets"))?,
            )
        } else {
            None
        },
        paired: set.paired.clone(),
        val_x: set.val_x.clone(),
        val_y: set.val_y.clone(),
    };
    let log = train_student(&mut model, &data, weights, &schedule)?;
    let val_preds = model.predict(&set.val_x)?;
    let val = MetricsReport::new("validation", &val_preds, &set.val_y, seed, &hash)?;
    let test = MetricsReport::new(
        "test",
        &model.predict(&set.test_x)?,
        &set.test_y,
        seed,
        &hash,
    )?;
    Ok(StudentRun {
        row,
        seed,
        config_hash: hash,
        model,
        log,
        val,
        test,
        val_preds,
    })
}

/// Median and spread of one metric over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(v: &[f64]) -> Self {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n == 0 {
            f64::NAN
        } else if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        };
        Self {
            median,
            min: s.first().copied().unwrap_or(f64::NAN),
            max: s.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub row: AblationRow,
    pub config_hash: String,
    pub runs: usize,
    pub mae: Spread,
    pub r2: Spread,
    pub rmse: Spread,
}

pub fn summarize(runs: &[StudentRun]) -> Vec<AblationSummary> {
    let mut out = Vec::new();
    for row in AblationRow::ALL {
        let rs: Vec<&StudentRun> = runs.iter().filter(|r| r.row == row).collect();
        if rs.is_empty() {
            continue;
        }
        let col =
            |f: fn(&StudentRun) -> f64| Spread::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
        // runs of one row differ only in seed; the hash of the first is
        // the row's configuration up to that seed
        out.push(AblationSummary {
            row,
            config_hash: rs[0].config_hash.clone(),
            runs: rs.len(),
            mae: col(|r| r.val.overall.mae),
            r2: col(|r| r.val.overall.r2),
            rmse: col(|r| r.val.overall.rmse),
        });
    }
    out
}

/// Whether median validation MAE satisfies
/// KD < HSI+ancillary < min(ancillary-only, HSI-only).
pub fn ordering_holds(summary: &[AblationSummary]) -> bool {
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

/// Every stage of one experiment.
#[derive(Clone, Debug)]
pub struct Suite {
    pub prep: Prepared,
    pub sau: SauStage,
    pub emb: Embeddings,
    pub teacher: TeacherStage,
    pub inputs: StudentInputsSet,
}

pub fn build_suite(cfg: &ExperimentConfig) -> Result<Suite> {
    let prep = prepare(cfg)?;
    let sau = train_sau(cfg, &prep)?;
    let emb = embed(&sau.model, &prep)?;
    let teacher = train_teacher_stage(cfg, &prep, &emb)?;
    let inputs = student_inputs(cfg, &prep, &emb, Some(&teacher.model))?;
    Ok(Suite {
        prep,
        sau,
        emb,
        teacher,
        inputs,
    })
}

/// Students for `rows` over every configured seed.
pub fn ablation_suite(
    cfg: &ExperimentConfig,
    inputs: &StudentInputsSet,
    rows: &[AblationRow],
) -> Result<Vec<StudentRun>> {
    let setups: Vec<(AblationRow, StudentConfig, DistillWeights)> = rows
        .iter()
        .map(|&r| {
            let (s, w) = r.setup(cfg);
            (r, s, w)
        })
        .collect();
    check_distinct_rows(&setups, &cfg.student_schedule)?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        for (row, s, w) in &setups {
            runs.push(run_student(
                s,
                w,
                &cfg.student_schedule,
                inputs,
                *row,
                seed,
            )?);
        }
    }
    Ok(runs)
}

/// One grid candidate and its validation metrics (median over seeds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub weights: DistillWeights,
    pub mae: f64,
    pub r2: f64,
    pub rmse: f64,
}

/// Layer-weight rows, then coefficient rows with gamma fixed at 0.1.
pub fn coefficient_grid(base: &DistillWeights) -> Vec<DistillWeights> {
    let mut out = Vec::new();
    for w in [
        [1.05, 1.35, 0.65],
        [1.05, 0.65, 1.35],
        [1.30, 1.07, 0.68],
        [1.35, 1.05, 0.65],
    ] {
        out.push(DistillWeights {
            layer_weights: w.to_vec(),
            ..base.clone()
        });
    }
    for (a, b) in [(0.07, 0.90), (0.05, 0.95), (0.07, 0.88), (0.08, 0.90)] {
        let c = DistillWeights {
            alpha: a,
            beta: b,
            gamma: 0.10,
            layer_weights: alloc::vec![1.35, 1.05, 0.65],
            ..base.clone()
        };
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// Trains a distilled student per candidate and seed and ranks candidates
/// by median validation MAE (ties keep candidate order).
pub fn grid_search(
    cfg: &ExperimentConfig,
    inputs: &StudentInputsSet,
    candidates: &[DistillWeights],
) -> Result<Vec<GridResult>> {
    let student = StudentConfig {
        inputs: StudentInputs::Full,
        ..cfg.student.clone()
    };
    let mut results = Vec::with_capacity(candidates.len());
    for w in candidates {
        let mut runs = Vec::new();
        for &seed in &cfg.seeds {
            runs.push(run_student(
                &student,
                w,
                &cfg.student_schedule,
                inputs,
                AblationRow::HsiAncillaryKd,
                seed,
            )?);
        }
        let med =
            |f: fn(&StudentRun) -> f64| Spread::of(&runs.iter().map(f).collect::<Vec<_>>()).median;
        results.push(GridResult {
            weights: w.clone(),
            mae: med(|r| r.val.overall.mae),
            r2: med(|r| r.val.overall.r2),
            rmse: med(|r| r.val.overall.rmse),
        });
    }
    results.sort_by(|a, b| a.mae.total_cmp(&b.mae));
    Ok(results)
}
