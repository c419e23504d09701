//! On-disk formats: spectra (CSV and `SPC1` binary), ancillary covariates,
//! ground truth, pairs, splits, checkpoints, and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use sha2::{Digest, Sha256};
use spectral_distill_core::geopair::{PairIndex, Split, SplitAssignment};
use spectral_distill_core::numerics::{checkpoint, ParameterSet};
use spectral_distill_core::spectra::{
    AncillaryFeatures, FtirSpectrum, Location, SatelliteSpectrum,
};
use spectral_distill_core::synthgen::{Dataset, WorldConfig};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"SPC1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Bin,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Bin => "spc1",
        }
    }
}

/// One spectrum as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumRecord {
    pub location: Location,
    pub date: Option<NaiveDate>,
    pub label: Option<f64>,
    pub values: Vec<f64>,
}

impl SpectrumRecord {
    pub fn from_ftir(s: &FtirSpectrum) -> Self {
        Self {
            location: s.location,
            date: None,
            label: s.salinity,
            values: s.absorbance.clone(),
        }
    }

    pub fn from_sat(s: &SatelliteSpectrum, label: Option<f64>) -> Self {
        Self {
            location: s.location,
            date: Some(s.acquisition_date),
            label,
            values: s.reflectance.clone(),
        }
    }

    pub fn to_ftir(&self) -> Result<FtirSpectrum> {
        Ok(FtirSpectrum::new(
            self.values.clone(),
            self.location,
            self.label,
        )?)
    }

    pub fn to_sat(&self) -> Result<SatelliteSpectrum> {
        let date = self
            .date
            .ok_or_else(|| CliError::invalid("satellite spectrum without acquisition date"))?;
        Ok(SatelliteSpectrum::new(
            self.values.clone(),
            self.location,
            date,
        )?)
    }
}

/// Shortest text that parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn parse_num(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| CliError::invalid(format!("{what}: cannot parse {s:?} as a number")))
}

fn parse_index(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| CliError::invalid(format!("{what}: cannot parse {s:?} as an index")))
}

pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(CliError::invalid(format!(
            "missing input {}",
            path.display()
        )));
    }
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?)
        .map_err(|_| CliError::invalid(format!("{} is not UTF-8", path.display())))
}

/// Header row and records of a CSV file.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let bytes = read(path)?;
    let mut r = csv::ReaderBuilder::new().from_reader(bytes.as_slice());
    let bad = |e: csv::Error| CliError::invalid(format!("{}: {e}", path.display()));
    let header = r
        .headers()
        .map_err(bad)?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(bad)?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// CSV text from a header and rows of already formatted cells.
pub fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 cells")
}

fn check_header(path: &Path, got: &[String], want: &[&str]) -> Result<()> {
    if got.len() < want.len() || got.iter().zip(want).any(|(a, b)| a != b) {
        return Err(CliError::invalid(format!(
            "{}: header starts {:?}, expected {:?}",
            path.display(),
            &got[..got.len().min(want.len())],
            want
        )));
    }
    Ok(())
}

const SPECTRUM_COLUMNS: [&str; 4] = ["lat", "lon", "date", "label"];

pub fn spectra_csv(records: &[SpectrumRecord]) -> String {
    let bands = records.first().map_or(0, |r| r.values.len());
    let mut header: Vec<String> = SPECTRUM_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..bands).map(|i| format!("b{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let mut row = vec![
                num(r.location.lat),
                num(r.location.lon),
                r.date.map(|d| d.to_string()).unwrap_or_default(),
                r.label.map(num).unwrap_or_default(),
            ];
            row.extend(r.values.iter().map(|v| num(*v)));
            row
        })
        .collect();
    csv_text(&header, &rows)
}

pub fn parse_spectra_csv(path: &Path) -> Result<Vec<SpectrumRecord>> {
    let (header, rows) = read_csv(path)?;
    check_header(path, &header, &SPECTRUM_COLUMNS)?;
    let what = path.display().to_string();
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let at = format!("{what} row {}", i + 1);
            if r.len() != header.len() {
                return Err(CliError::invalid(format!(
                    "{at}: {} cells, header has {}",
                    r.len(),
                    header.len()
                )));
            }
            let date = match r[2].trim() {
                "" => None,
                d => Some(
                    d.parse::<NaiveDate>()
                        .map_err(|_| CliError::invalid(format!("{at}: bad date {d:?}")))?,
                ),
            };
            let label = match r[3].trim() {
                "" => None,
                v => Some(parse_num(v, &at)?),
            };
            Ok(SpectrumRecord {
                location: Location::new(parse_num(&r[0], &at)?, parse_num(&r[1], &at)?)?,
                date,
                label,
                values: r[4..]
                    .iter()
                    .map(|v| parse_num(v, &at))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

const NO_DATE: i64 = i64::MIN;

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date")
}

/// `SPC1`, record count and band count as u64, then per record latitude,
/// longitude, days since 1970-01-01 (i64, minimum for none), label (NaN for
/// none), and the band values. Everything little-endian.
pub fn spectra_bin(records: &[SpectrumRecord]) -> Vec<u8> {
    let bands = records.first().map_or(0, |r| r.values.len());
    let mut out = Vec::with_capacity(20 + records.len() * 8 * (bands + 4));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    out.extend_from_slice(&(bands as u64).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.location.lat.to_le_bytes());
        out.extend_from_slice(&r.location.lon.to_le_bytes());
        let days = r.date.map_or(NO_DATE, |d| (d - epoch()).num_days());
        out.extend_from_slice(&days.to_le_bytes());
        out.extend_from_slice(&r.label.unwrap_or(f64::NAN).to_le_bytes());
        for v in &r.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn parse_spectra_bin(bytes: &[u8]) -> Result<Vec<SpectrumRecord>> {
    let bad = |m: &str| CliError::invalid(format!("SPC1: {m}"));
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let (count, bands) = (word(4) as usize, word(12) as usize);
    let stride = bands
        .checked_add(4)
        .and_then(|w| w.checked_mul(8))
        .ok_or_else(|| bad("band count overflows"))?;
    if count.checked_mul(stride) != Some(bytes.len() - 20) {
        return Err(bad("length disagrees with the record and band counts"));
    }
    let f = |at: usize| f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    (0..count)
        .map(|i| {
            let at = 20 + i * stride;
            let days = word(at + 16) as i64;
            let date = if days == NO_DATE {
                None
            } else {
                Some(
                    epoch()
                        .checked_add_signed(chrono::TimeDelta::days(days))
                        .ok_or_else(|| bad("date out of range"))?,
                )
            };
            let label = f(at + 24);
            Ok(SpectrumRecord {
                location: Location::new(f(at), f(at + 8))?,
                date,
                label: (!label.is_nan()).then_some(label),
                values: (0..bands).map(|j| f(at + 32 + 8 * j)).collect(),
            })
        })
        .collect()
}

pub fn write_spectra(path: &Path, records: &[SpectrumRecord], format: Format) -> Result<()> {
    match format {
        Format::Csv => write(path, spectra_csv(records)),
        Format::Bin => write(path, spectra_bin(records)),
    }
}

pub fn read_spectra(path: &Path) -> Result<Vec<SpectrumRecord>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("spc1") => parse_spectra_bin(&read(path)?),
        _ => parse_spectra_csv(path),
    }
}

/// `dir/stem.csv` or `dir/stem.spc1`, whichever exists.
pub fn find_spectra(dir: &Path, stem: &str) -> Result<PathBuf> {
    for f in [Format::Csv, Format::Bin] {
        let p = dir.join(format!("{stem}.{}", f.extension()));
        if p.exists() {
            return Ok(p);
        }
    }
    Err(CliError::invalid(format!(
        "no {stem}.csv or {stem}.spc1 in {} (run gen-data first)",
        dir.display()
    )))
}

pub fn ancillary_csv(a: &[AncillaryFeatures]) -> String {
    let mut header = vec!["site"];
    header.extend(AncillaryFeatures::NAMES);
    let rows: Vec<Vec<String>> = a
        .iter()
        .enumerate()
        .map(|(i, f)| {
            std::iter::once(i.to_string())
                .chain(f.to_array().iter().map(|v| num(*v)))
                .collect()
        })
        .collect();
    csv_text(&header, &rows)
}

pub fn parse_ancillary_csv(path: &Path) -> Result<Vec<AncillaryFeatures>> {
    let (header, rows) = read_csv(path)?;
    let mut want = vec!["site"];
    want.extend(AncillaryFeatures::NAMES);
    check_header(path, &header, &want)?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let at = format!("{} row {}", path.display(), i + 1);
            if parse_index(&r[0], &at)? != i {
                return Err(CliError::invalid(format!(
                    "{at}: sites must be listed in order"
                )));
            }
            let v = r[1..]
                .iter()
                .map(|c| parse_num(c, &at))
                .collect::<Result<Vec<_>>>()?;
            Ok(AncillaryFeatures::from_slice(&v)?)
        })
        .collect()
}

pub fn truth_csv(d: &Dataset) -> String {
    let header = [
        "site",
        "salinity",
        "measured",
        "collocated",
        "ftir_salinity",
        "clay",
        "sand",
        "gain",
        "tilt",
        "water_vapor",
        "vegetation_fraction",
    ];
    let rows: Vec<Vec<String>> = d
        .truth
        .iter()
        .enumerate()
        .map(|(i, t)| {
            vec![
                i.to_string(),
                num(t.salinity),
                num(d.labels[i]),
                u8::from(t.collocated).to_string(),
                num(t.ftir_salinity),
                num(t.soil.clay),
                num(t.soil.sand),
                num(t.distortion.gain),
                num(t.distortion.tilt),
                num(t.distortion.water_vapor),
                num(t.distortion.vegetation_fraction),
            ]
        })
        .collect();
    csv_text(&header, &rows)
}

/// Writes the corpus. Satellite rows carry the site label.
pub fn save_dataset(dir: &Path, d: &Dataset, format: Format) -> Result<()> {
    let ext = format.extension();
    let ftir: Vec<SpectrumRecord> = d.ftir.iter().map(SpectrumRecord::from_ftir).collect();
    let sat: Vec<SpectrumRecord> = d
        .sat
        .iter()
        .zip(&d.labels)
        .map(|(s, y)| SpectrumRecord::from_sat(s, Some(*y)))
        .collect();
    write_spectra(&dir.join(format!("ftir.{ext}")), &ftir, format)?;
    write_spectra(&dir.join(format!("sat.{ext}")), &sat, format)?;
    write(&dir.join("ancillary.csv"), ancillary_csv(&d.ancillary))?;
    write(&dir.join("truth.csv"), truth_csv(d))?;
    write(&dir.join("world.json"), json(&d.config))
}

/// Reads a corpus written by [`save_dataset`]. Ground truth stays on disk;
/// nothing downstream of generation uses it.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let ftir = read_spectra(&find_spectra(dir, "ftir")?)?
        .iter()
        .map(SpectrumRecord::to_ftir)
        .collect::<Result<Vec<_>>>()?;
    let sat_records = read_spectra(&find_spectra(dir, "sat")?)?;
    let mut labels = Vec::with_capacity(sat_records.len());
    let mut sat = Vec::with_capacity(sat_records.len());
    for (i, r) in sat_records.iter().enumerate() {
        labels.push(
            r.label
                .ok_or_else(|| CliError::invalid(format!("satellite site {i} has no label")))?,
        );
        sat.push(r.to_sat()?);
    }
    let ancillary = parse_ancillary_csv(&dir.join("ancillary.csv"))?;
    if ancillary.len() != sat.len() {
        return Err(CliError::invalid(format!(
            "{} ancillary rows for {} satellite sites",
            ancillary.len(),
            sat.len()
        )));
    }
    let config: WorldConfig = serde_json::from_str(&read_string(&dir.join("world.json"))?)
        .map_err(|e| CliError::invalid(format!("world.json: {e}")))?;
    Ok(Dataset {
        config,
        ftir,
        sat,
        ancillary,
        labels,
        truth: Vec::new(),
    })
}

pub fn pairs_csv(pairs: &[PairIndex]) -> String {
    let rows: Vec<Vec<String>> = pairs
        .iter()
        .map(|p| vec![p.ftir.to_string(), p.sat.to_string(), num(p.distance_rad)])
        .collect();
    csv_text(&["ftir_id", "sat_id", "distance_rad"], &rows)
}

pub fn parse_pairs_csv(path: &Path) -> Result<Vec<PairIndex>> {
    let (header, rows) = read_csv(path)?;
    check_header(path, &header, &["ftir_id", "sat_id", "distance_rad"])?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let at = format!("{} row {}", path.display(), i + 1);
            Ok(PairIndex {
                ftir: parse_index(&r[0], &at)?,
                sat: parse_index(&r[1], &at)?,
                distance_rad: parse_num(&r[2], &at)?,
            })
        })
        .collect()
}

pub fn split_csv(a: &SplitAssignment) -> String {
    let rows: Vec<Vec<String>> = (0..a.split.len())
        .map(|i| {
            vec![
                i.to_string(),
                a.cluster[i].to_string(),
                a.split[i].as_str().to_string(),
            ]
        })
        .collect();
    csv_text(&["sat_id", "cluster", "split"], &rows)
}

pub fn clusters_csv(a: &SplitAssignment) -> String {
    let rows: Vec<Vec<String>> = a
        .centroids
        .iter()
        .enumerate()
        .map(|(k, c)| vec![k.to_string(), num(c[0]), num(c[1])])
        .collect();
    csv_text(&["cluster", "lat", "lon"], &rows)
}

pub fn parse_split(split_path: &Path, clusters_path: &Path) -> Result<SplitAssignment> {
    let (header, rows) = read_csv(split_path)?;
    check_header(split_path, &header, &["sat_id", "cluster", "split"])?;
    let mut split = Vec::with_capacity(rows.len());
    let mut cluster = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let at = format!("{} row {}", split_path.display(), i + 1);
        if parse_index(&r[0], &at)? != i {
            return Err(CliError::invalid(format!(
                "{at}: sites must be listed in order"
            )));
        }
        cluster.push(parse_index(&r[1], &at)?);
        split.push(Split::parse(r[2].trim())?);
    }
    let (header, rows) = read_csv(clusters_path)?;
    check_header(clusters_path, &header, &["cluster", "lat", "lon"])?;
    let centroids = rows
        .iter()
        .map(|r| {
            let at = clusters_path.display().to_string();
            Ok([parse_num(&r[1], &at)?, parse_num(&r[2], &at)?])
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(&k) = cluster.iter().find(|&&k| k >= centroids.len()) {
        return Err(CliError::invalid(format!("cluster {k} has no centroid")));
    }
    Ok(SplitAssignment {
        split,
        cluster,
        centroids,
    })
}

pub fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// `dir/name.ckpt` plus its plain-text manifest `dir/name.manifest.txt`.
pub fn save_checkpoint(dir: &Path, name: &str, ps: &ParameterSet) -> Result<()> {
    write(&dir.join(format!("{name}.ckpt")), checkpoint::encode(ps))?;
    write(
        &dir.join(format!("{name}.manifest.txt")),
        checkpoint::manifest(ps),
    )
}

/// Loads `dir/name.ckpt` into `ps`, which must have the same layout.
pub fn load_checkpoint(dir: &Path, name: &str, ps: &mut ParameterSet) -> Result<()> {
    let path = dir.join(format!("{name}.ckpt"));
    let stored = checkpoint::decode(&read(&path)?)?;
    ps.load_from(&stored)
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join("manifest.txt") {
            out.push(path);
        }
    }
    Ok(())
}

/// `sha256  bytes  relative/path` for every file under `dir`, sorted by
/// path, written to `dir/manifest.txt`.
pub fn write_manifest(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut s = String::new();
    for f in files {
        let bytes = fs::read(&f).map_err(|e| CliError::io(&f, e))?;
        let rel = f.strip_prefix(dir).expect("under dir");
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let _ = writeln!(s, "{}  {}  {}", sha256_hex(&bytes), bytes.len(), rel);
    }
    write(&dir.join("manifest.txt"), &s)?;
    Ok(s)
}
