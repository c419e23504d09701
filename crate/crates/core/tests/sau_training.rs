use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectral_distill_core::numerics::checkpoint;
use spectral_distill_core::pipeline::TrainSchedule;
use spectral_distill_core::sau::{
    finetune_align, mean_pair_cosine_distance, pretrain_ftir, AlignData, Path, SauConfig, SauModel,
};
use spectral_distill_core::{numerics::Tensor, Error};

fn small_config() -> SauConfig {
    SauConfig {
        ftir_bands: 24,
        sat_bands: 12,
        latent_dim: 8,
        ftir_hidden: vec![32, 16],
        sat_hidden: vec![16],
        refine_layers: 1,
        refine_heads: 2,
        refine_head_dim: 4,
        refine_ffn: 8,
        refine_tokens: 4,
        drop_bands: vec![],
        ..Default::default()
    }
}

// Both modalities are fixed linear views of the same 3 latent factors.
fn views(n: usize, seed: u64) -> (Tensor, Tensor) {
    let mut r = ChaCha8Rng::seed_from_u64(99);
    let a: Vec<f64> = (0..3 * 24).map(|_| r.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..3 * 12).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (mut f, mut s) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let u: [f64; 3] = [
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        ];
        f.extend((0..24).map(|j| {
            (0..3).map(|k| u[k] * a[k * 24 + j]).sum::<f64>() + 0.01 * r.random_range(-1.0..1.0)
        }));
        s.extend((0..12).map(|j| {
            (0..3).map(|k| u[k] * b[k * 12 + j]).sum::<f64>() + 0.01 * r.random_range(-1.0..1.0)
        }));
    }
    (
        Tensor::new(&[n, 24], f).unwrap(),
        Tensor::new(&[n, 12], s).unwrap(),
    )
}

fn schedule(epochs: usize) -> TrainSchedule {
    TrainSchedule {
        max_epochs: epochs,
        early_stop_patience: epochs.saturating_sub(1).max(1),
        batch_size: 16,
        lr: 3e-3,
        ..Default::default()
    }
}

fn prepared(cfg: &SauConfig) -> (SauModel, AlignData) {
    let (tf, ts) = views(160, 1);
    let (vf, vs) = views(40, 2);
    let mut m = SauModel::new(cfg, 3).unwrap();
    m.fit_scalers(&tf, &ts).unwrap();
    let data = AlignData {
        train_ftir: m.standardize(&tf, Path::Ftir).unwrap(),
        train_sat: m.standardize(&ts, Path::Satellite).unwrap(),
        val_ftir: m.standardize(&vf, Path::Ftir).unwrap(),
        val_sat: m.standardize(&vs, Path::Satellite).unwrap(),
    };
    (m, data)
}

fn recon(m: &SauModel, rows: &Tensor) -> f64 {
    spectral_distill_core::sau::recon_error(m, rows, Path::Ftir).unwrap()
}

#[test]
fn one_pretrain_epoch_leaves_satellite_path_alone() {
    let (mut m, d) = prepared(&small_config());
    let sat = m.params.checksum("sat.");
    let beta = m.params.checksum("loss.beta");
    let ftir = m.params.checksum("ftir.enc.");
    let shared = m.params.checksum("shared.");
    pretrain_ftir(&mut m, &d.train_ftir, &d.val_ftir, &schedule(2)).unwrap();
    assert_eq!(sat, m.params.checksum("sat."));
    assert_eq!(beta, m.params.checksum("loss.beta"));
    assert_ne!(ftir, m.params.checksum("ftir.enc."));
    assert_ne!(shared, m.params.checksum("shared."));
}

#[test]
fn pretraining_beats_random_init_and_round_trips() {
    let (mut m, d) = prepared(&small_config());
    let before = recon(&m, &d.val_ftir);
    let log = pretrain_ftir(&mut m, &d.train_ftir, &d.val_ftir, &schedule(30)).unwrap();
    let after = recon(&m, &d.val_ftir);
    assert!(after < before, "{after} !< {before}");
    // best-checkpoint sequence only ever improves
    let best: Vec<f64> = log
        .epochs
        .iter()
        .filter(|e| e.improved)
        .map(|e| e.validation.score)
        .collect();
    assert!(best.windows(2).all(|w| w[1] < w[0]));

    let bytes = checkpoint::encode(&m.params);
    let mut fresh = SauModel::new(&small_config(), 77).unwrap();
    fresh
        .params
        .load_from(&checkpoint::decode(&bytes).unwrap())
        .unwrap();
    assert_eq!(recon(&fresh, &d.val_ftir).to_bits(), after.to_bits());
}

#[test]
fn alignment_freezes_ftir_encoder_and_closes_the_angle() {
    let (mut m, d) = prepared(&small_config());
    pretrain_ftir(&mut m, &d.train_ftir, &d.val_ftir, &schedule(20)).unwrap();
    let frozen = m.params.checksum(SauModel::FTIR_ENCODER);
    let before = mean_pair_cosine_distance(&m, &d.val_ftir, &d.val_sat).unwrap();
    finetune_align(&mut m, &d, &schedule(40)).unwrap();
    let after = mean_pair_cosine_distance(&m, &d.val_ftir, &d.val_sat).unwrap();
    assert_eq!(frozen, m.params.checksum(SauModel::FTIR_ENCODER));
    assert!(after < 0.5 * before, "{after} vs {before}");
}

fn aligned(beta: f64) -> (SauModel, SauModel, f64) {
    let cfg = SauConfig {
        beta_init: beta,
        ..small_config()
    };
    let (mut m, d) = prepared(&cfg);
    pretrain_ftir(&mut m, &d.train_ftir, &d.val_ftir, &schedule(20)).unwrap();
    let before = m.clone();
    finetune_align(&mut m, &d, &schedule(40)).unwrap();
    let cos = mean_pair_cosine_distance(&m, &d.val_ftir, &d.val_sat).unwrap();
    (before, m, cos)
}

#[test]
fn zero_beta_gives_the_satellite_encoder_no_signal() {
    let (before, after, cos0) = aligned(0.0);
    let (_, _, cos1) = aligned(1.0);
    assert!(cos1 < 0.5 * cos0, "{cos1} vs {cos0}");
    // with a zero gradient the only update left is the decoupled decay,
    // a common factor over every satellite-encoder weight
    let mut factor = None;
    for ((_, p0), (_, p1)) in before.params.iter().zip(after.params.iter()) {
        if !p0.trainable || !p0.name.starts_with(SauModel::SAT_ENCODER) {
            continue;
        }
        for (a, b) in p0.value.data().iter().zip(p1.value.data()) {
            if *a == 0.0 {
                assert_eq!(*b, 0.0);
                continue;
            }
            let r = b / a;
            let f = *factor.get_or_insert(r);
            assert!((r - f).abs() < 1e-12, "{} moved beyond decay", p0.name);
        }
    }
    assert!(factor.unwrap() < 1.0);
}

#[test]
fn eval_encoding_is_deterministic_and_64_wide() {
    let m = SauModel::new(&SauConfig::default(), 0).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for path in [Path::Ftir, Path::Satellite] {
        let n = m.in_dim(path);
        let x = Tensor::new(
            &[3, n],
            (0..3 * n).map(|_| r.random_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let a = m.encode(&x, path).unwrap();
        assert_eq!(a.shape(), &[3, 64]);
        assert_eq!(a, m.encode(&x, path).unwrap());
        assert!(a.data().iter().all(|v| v.is_finite()));
        // layer-normalized rows before the (identity-initialized) affine
        for i in 0..3 {
            let row = a.row(i);
            let mean = row.iter().sum::<f64>() / 64.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(
                mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-3,
                "{mean} {var}"
            );
        }
    }
    let wrong = Tensor::zeros(&[1, 100]);
    assert!(m.encode(&wrong, Path::Ftir).is_err());
}

#[test]
fn zero_projection_gives_degenerate_latents() {
    let (mut m, d) = prepared(&small_config());
    m.zero_projection();
    let z = m.encode_standardized(&d.val_ftir, Path::Ftir).unwrap();
    assert!(z.data().iter().all(|v| *v == 0.0));
    assert!(matches!(
        mean_pair_cosine_distance(&m, &d.val_ftir, &d.val_sat),
        Err(Error::Degenerate(_))
    ));
}
