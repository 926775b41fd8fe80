//! End-to-end runs: configuration, the single-pair pipeline, batch mode and
//! the on-disk report formats.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::{
    align_upright, crop_to_body, normalize_views, AlignmentResult, RotationSearchParams,
};
use crate::composition::{predict_features, CompositionModel};
use crate::error::{Error, Result};
use crate::raster::{BodyMask, RasterImage};
use crate::segmentation::{clean_mask, segment_green_screen, smooth_mask, HueThresholdParams};
use crate::volumetry::{
    body_volume, extract_profiles, row_area, shape_features, CalibrationScale, ShapeFeatures,
    SliceProfileSet, VolumeEstimate,
};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "BODYVOL_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub threshold: HueThresholdParams,
    pub search: RotationSearchParams,
    /// Rows of the shared profile grid; `None` keeps the back view's own
    /// pixel height.
    pub rows: Option<usize>,
    pub scale: Option<CalibrationScale>,
    /// Radius of the optional open/close pass after thresholding; 0 disables it.
    pub smooth_radius: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            threshold: HueThresholdParams::default(),
            search: RotationSearchParams::default(),
            rows: None,
            scale: None,
            smooth_radius: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.threshold.validate()?;
        self.search.validate()?;
        if let Some(rows) = self.rows {
            if rows < 2 {
                return Err(Error::InvalidParams(format!(
                    "rows must be at least 2, got {rows}"
                )));
            }
        }
        if let Some(s) = &self.scale {
            s.validate()?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Threshold and clean one view.
pub fn segment_view(image: &RasterImage, config: &RunConfig) -> Result<BodyMask> {
    let raw = segment_green_screen(image, &config.threshold);
    let raw = smooth_mask(&raw, config.smooth_radius);
    clean_mask(&raw)
}

/// Normalises two aligned masks to a shared row grid and integrates the
/// volume. Rows default to the back view's cropped height, in which case
/// a profile row is exactly one pixel tall.
pub fn measure(
    back: &BodyMask,
    side: &BodyMask,
    rows: Option<usize>,
    scale: Option<CalibrationScale>,
) -> Result<(SliceProfileSet, VolumeEstimate)> {
    let native = crop_to_body(back)?.height();
    let rows = rows.unwrap_or(native.max(2));
    let (b, s) = normalize_views(back, side, rows)?;
    let profiles = extract_profiles(&b, &s, scale)?.with_row_height(native as f64 / rows as f64);
    let volume = body_volume(&profiles)?;
    Ok((profiles, volume))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewAlignment {
    pub angle: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeSummary {
    pub total_px3: f64,
    pub trunk_px3: f64,
    pub limbs_px3: f64,
    pub total_cm3: Option<f64>,
    pub rows: usize,
    pub row_height: f64,
}

impl VolumeSummary {
    fn new(p: &SliceProfileSet, v: &VolumeEstimate) -> Self {
        Self {
            total_px3: v.total_px3,
            trunk_px3: v.trunk_px3,
            limbs_px3: v.limbs_px3,
            total_cm3: v.total_cm3,
            rows: p.rows,
            row_height: p.row_height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub inputs: Vec<InputDigest>,
    /// Stage timings in execution order.
    pub stages: Vec<StageTiming>,
    pub alignment: [ViewAlignment; 2],
    pub volume: VolumeSummary,
    pub features: ShapeFeatures,
    pub prediction: Option<f64>,
    pub config: RunConfig,
}

impl PipelineReport {
    /// JSON with every float at 6 significant digits.
    pub fn to_json(&self) -> Result<String> {
        to_json_sig6(self)
    }

    /// Same as [`to_json`](Self::to_json) with the timing values zeroed, for
    /// comparing runs.
    pub fn to_json_without_timings(&self) -> Result<String> {
        let mut r = self.clone();
        for s in &mut r.stages {
            s.ms = 0.0;
        }
        to_json_sig6(&r)
    }
}

/// Everything computed for one image pair.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub back_mask: BodyMask,
    pub side_mask: BodyMask,
    pub back_aligned: AlignmentResult,
    pub side_aligned: AlignmentResult,
    pub profiles: SliceProfileSet,
    pub volume: VolumeEstimate,
    pub prediction: Option<f64>,
    pub stages: Vec<StageTiming>,
}

struct Stopwatch {
    last: Instant,
    stages: Vec<StageTiming>,
}

impl Stopwatch {
    fn new() -> Self {
        Self {
            last: Instant::now(),
            stages: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            ms: (now - self.last).as_secs_f64() * 1e3,
        });
        self.last = now;
    }
}

/// segment → clean → align → normalize → profiles → volume → features
/// (→ predict).
pub fn analyze(
    back: &RasterImage,
    side: &RasterImage,
    config: &RunConfig,
    model: Option<&CompositionModel>,
) -> Result<Analysis> {
    config.validate()?;
    let mut sw = Stopwatch::new();
    let back_raw = smooth_mask(
        &segment_green_screen(back, &config.threshold),
        config.smooth_radius,
    );
    let side_raw = smooth_mask(
        &segment_green_screen(side, &config.threshold),
        config.smooth_radius,
    );
    sw.lap("segment");
    let back_mask = clean_mask(&back_raw)?;
    let side_mask = clean_mask(&side_raw)?;
    sw.lap("clean");
    let back_aligned = align_upright(&back_mask, &config.search)?;
    let side_aligned = align_upright(&side_mask, &config.search)?;
    sw.lap("align");
    let native = crop_to_body(&back_aligned.mask)?.height();
    let rows = config.rows.unwrap_or(native.max(2));
    let (b, s) = normalize_views(&back_aligned.mask, &side_aligned.mask, rows)?;
    sw.lap("normalize");
    let profiles =
        extract_profiles(&b, &s, config.scale)?.with_row_height(native as f64 / rows as f64);
    sw.lap("profiles");
    let mut volume = body_volume(&profiles)?;
    sw.lap("volume");
    volume.features = shape_features(&profiles, &volume)?;
    sw.lap("features");
    let prediction = model
        .map(|m| predict_features(m, &volume.features))
        .transpose()?;
    if model.is_some() {
        sw.lap("predict");
    }
    Ok(Analysis {
        back_mask,
        side_mask,
        back_aligned,
        side_aligned,
        profiles,
        volume,
        prediction,
        stages: sw.stages,
    })
}

pub fn file_digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).map_err(|e| Error::bad_image(path, e))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn report_for(a: &Analysis, inputs: Vec<InputDigest>, config: &RunConfig) -> PipelineReport {
    PipelineReport {
        inputs,
        stages: a.stages.clone(),
        alignment: [
            ViewAlignment {
                angle: a.back_aligned.angle,
                score: a.back_aligned.score,
            },
            ViewAlignment {
                angle: a.side_aligned.angle,
                score: a.side_aligned.score,
            },
        ],
        volume: VolumeSummary::new(&a.profiles, &a.volume),
        features: a.volume.features,
        prediction: a.prediction,
        config: config.clone(),
    }
}

/// File names of the artifacts written by [`run_pipeline`].
pub mod artifacts {
    pub const BACK_MASK: &str = "back_mask.png";
    pub const SIDE_MASK: &str = "side_mask.png";
    pub const BACK_ALIGNED: &str = "back_aligned.png";
    pub const SIDE_ALIGNED: &str = "side_aligned.png";
    pub const PROFILES: &str = "profiles.csv";
    pub const VOLUME: &str = "volume.json";
    pub const REPORT: &str = "report.json";
}

/// Runs the whole pipeline on an image pair and writes the intermediates
/// and `report.json` into `config.output_dir`. Nothing is written when any
/// stage fails.
pub fn run_pipeline(
    back_image: &Path,
    side_image: &Path,
    config: &RunConfig,
    model: Option<&Path>,
) -> Result<PipelineReport> {
    let back = RasterImage::load(back_image)?;
    let side = RasterImage::load(side_image)?;
    let model = model.map(CompositionModel::load).transpose()?;
    let mut analysis = analyze(&back, &side, config, model.as_ref())?;
    let inputs = vec![file_digest(back_image)?, file_digest(side_image)?];

    let t0 = Instant::now();
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    analysis.back_mask.save(dir.join(artifacts::BACK_MASK))?;
    analysis.side_mask.save(dir.join(artifacts::SIDE_MASK))?;
    analysis
        .back_aligned
        .mask
        .save(dir.join(artifacts::BACK_ALIGNED))?;
    analysis
        .side_aligned
        .mask
        .save(dir.join(artifacts::SIDE_ALIGNED))?;
    write_profiles_csv(
        &analysis.profiles,
        fs::File::create(dir.join(artifacts::PROFILES))?,
    )?;
    fs::write(
        dir.join(artifacts::VOLUME),
        volume_json(
            &analysis.profiles,
            &analysis.volume,
            Some(volume_parameters(config.rows)),
        )?,
    )?;
    analysis.stages.push(StageTiming {
        stage: "write".into(),
        ms: t0.elapsed().as_secs_f64() * 1e3,
    });
    let report = report_for(&analysis, inputs, config);
    let mut text = report.to_json()?;
    text.push('\n');
    fs::write(dir.join(artifacts::REPORT), text)?;
    Ok(report)
}

/// Per-row CSV: `row,trunk_width,side_width,limb_widths,area`, with limb
/// widths joined by `;`.
pub fn write_profiles_csv(profiles: &SliceProfileSet, out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "trunk_width", "side_width", "limb_widths", "area"])?;
    for (runs, &side) in profiles.back_runs.iter().zip(&profiles.side_width) {
        let widest = runs.widest();
        let trunk = widest.map_or(0, |i| runs.runs[i].len);
        let limbs: Vec<String> = runs
            .runs
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != widest)
            .map(|(_, r)| r.len.to_string())
            .collect();
        let area = row_area(runs, side).total;
        w.write_record([
            runs.row.to_string(),
            trunk.to_string(),
            side.to_string(),
            limbs.join(";"),
            fmt_sig6(area),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct VolumeJson<'a, P: Serialize> {
    volume: VolumeSummary,
    features: &'a ShapeFeatures,
    feature_vector: [f64; ShapeFeatures::LEN],
    scale: Option<CalibrationScale>,
    side_multi_run_rows: usize,
    parameters: P,
}

/// The parameters echoed by [`volume_json`]; the `volume` subcommand uses
/// the same so its output matches the pipeline artifact.
pub fn volume_parameters(rows: Option<usize>) -> serde_json::Value {
    serde_json::json!({ "rows": rows })
}

/// JSON summary of a volume run: totals, features, scale and the parameters
/// that produced them.
pub fn volume_json(
    profiles: &SliceProfileSet,
    volume: &VolumeEstimate,
    parameters: Option<serde_json::Value>,
) -> Result<String> {
    let mut s = to_json_sig6(&VolumeJson {
        volume: VolumeSummary::new(profiles, volume),
        features: &volume.features,
        feature_vector: volume.features.to_vec(),
        scale: profiles.scale,
        side_multi_run_rows: profiles.side_multi_run_rows,
        parameters,
    })?;
    s.push('\n');
    Ok(s)
}

/// One line of a batch manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub back: PathBuf,
    pub side: PathBuf,
}

/// Reads a CSV manifest with `back` and `side` columns and an optional `id`
/// column. Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base)
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let parse_err = |e: csv::Error| Error::ManifestParse(e.to_string());
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(parse_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(back_col), Some(side_col)) = (col("back"), col("side")) else {
        return Err(Error::ManifestParse(format!(
            "header must name `back` and `side` columns, got {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    };
    let id_col = col("id");
    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    let mut entries = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(parse_err)?;
        let id = id_col
            .map(|c| rec[c].to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| (i + 1).to_string());
        entries.push(ManifestEntry {
            id,
            back: resolve(&rec[back_col]),
            side: resolve(&rec[side_col]),
        });
    }
    Ok(entries)
}

/// Result of one manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRow {
    pub id: String,
    pub outcome: std::result::Result<BatchSuccess, (String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSuccess {
    pub volume: VolumeSummary,
    pub features: ShapeFeatures,
    pub angles: [f64; 2],
    pub prediction: Option<f64>,
}

impl BatchRow {
    pub fn is_ok(&self) -> bool {
        self.outcome.is_ok()
    }
}

fn run_entry(
    entry: &ManifestEntry,
    config: &RunConfig,
    model: Option<&CompositionModel>,
) -> Result<BatchSuccess> {
    let back = RasterImage::load(&entry.back)?;
    let side = RasterImage::load(&entry.side)?;
    let a = analyze(&back, &side, config, model)?;
    Ok(BatchSuccess {
        volume: VolumeSummary::new(&a.profiles, &a.volume),
        features: a.volume.features,
        angles: [a.back_aligned.angle, a.side_aligned.angle],
        prediction: a.prediction,
    })
}

/// Runs every manifest entry on a pool of `workers` threads. Rows come back
/// in manifest order; a failing entry is recorded, not fatal.
pub fn batch(
    entries: &[ManifestEntry],
    config: &RunConfig,
    model: Option<&CompositionModel>,
    workers: usize,
) -> Result<Vec<BatchRow>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    Ok(pool.install(|| {
        entries
            .par_iter()
            .map(|e| BatchRow {
                id: e.id.clone(),
                outcome: run_entry(e, config, model).map_err(|err| {
                    log::warn!("{}: {err}", e.id);
                    (err.code().to_string(), err.to_string())
                }),
            })
            .collect()
    }))
}

/// Summary CSV, one line per manifest entry.
pub fn write_batch_summary(rows: &[BatchRow], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "id",
        "status",
        "total_px3",
        "trunk_px3",
        "limbs_px3",
        "total_cm3",
    ];
    header.extend(ShapeFeatures::NAMES);
    header.extend(["back_angle", "side_angle", "prediction", "error"]);
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(fmt_sig6).unwrap_or_default();
    for row in rows {
        let mut rec = vec![row.id.clone()];
        match &row.outcome {
            Ok(s) => {
                rec.push("ok".into());
                rec.extend(
                    [s.volume.total_px3, s.volume.trunk_px3, s.volume.limbs_px3].map(fmt_sig6),
                );
                rec.push(opt(s.volume.total_cm3));
                rec.extend(s.features.to_vec().map(fmt_sig6));
                rec.extend(s.angles.map(fmt_sig6));
                rec.push(opt(s.prediction));
                rec.push(String::new());
            }
            Err((code, msg)) => {
                rec.push(code.clone());
                rec.extend(std::iter::repeat_n(String::new(), header.len() - 3));
                rec.push(msg.clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Formats with 6 significant digits, trimming trailing zeros.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..6).contains(&exp) {
        let s = format!("{x:.5e}");
        let (mant, e) = s.split_once('e').unwrap_or((&s, "0"));
        let mant = trim_zeros(mant);
        return format!("{mant}e{e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding may carry into a new digit (999999.5 → 1000000).
    let s = trim_zeros(&s).to_string();
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `x` rounded to 6 significant digits.
pub fn round_sig6(x: f64) -> f64 {
    fmt_sig6(x).parse().unwrap_or(x)
}

fn round_value(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            if let Some(r) = n
                .as_f64()
                .and_then(|f| serde_json::Number::from_f64(round_sig6(f)))
            {
                *n = r;
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_value),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with all floating-point values rounded to 6 significant digits.
pub fn to_json_sig6<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    Ok(serde_json::to_string_pretty(&v)?)
}
