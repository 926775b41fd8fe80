use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::bail;
use bodyvol_core::composition::{evaluate, fit_linear_named, predict, CompositionModel, Dataset};
use bodyvol_core::phantom::{self, PhantomSpec};
use bodyvol_core::pipeline::{self, fmt_sig6, to_json_sig6, RunConfig, CONFIG_ENV};
use bodyvol_core::volumetry::{shape_features, CalibrationScale, ShapeFeatures};
use bodyvol_core::{align_upright, BodyMask, Error, RasterImage};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bodyvol",
    version,
    about = "Body volume from back and side silhouettes"
)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

/// Every flag overrides one field of the run config.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON run config; unset fields take built-in defaults.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rows of the shared profile grid (>= 2).
    #[arg(long, global = true)]
    rows: Option<usize>,
    #[arg(long, global = true)]
    hue_min: Option<f64>,
    #[arg(long, global = true)]
    hue_max: Option<f64>,
    #[arg(long, global = true)]
    sat_min: Option<f64>,
    #[arg(long, global = true)]
    val_min: Option<f64>,
    /// Rotation search range in degrees, as `MIN,MAX`.
    #[arg(long, global = true, value_name = "MIN,MAX", allow_hyphen_values = true, value_parser = parse_range)]
    angle_range: Option<(f64, f64)>,
    /// cm per pixel along the back view's x axis.
    #[arg(long, global = true, requires_all = ["scale_side_x", "scale_y"])]
    scale_back_x: Option<f64>,
    /// cm per pixel along the side view's x axis.
    #[arg(long, global = true, requires_all = ["scale_back_x", "scale_y"])]
    scale_side_x: Option<f64>,
    /// cm per pixel vertically.
    #[arg(long, global = true, requires_all = ["scale_back_x", "scale_side_x"])]
    scale_y: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Threshold and clean one image into a body mask.
    Segment { image: PathBuf, output: PathBuf },
    /// Rotate a mask upright; prints `path,angle,score`.
    Align { mask: PathBuf, output: PathBuf },
    /// Per-row profiles and volume from two aligned masks.
    Volume { back: PathBuf, side: PathBuf },
    /// Shape feature row from two aligned masks.
    Features {
        back: PathBuf,
        side: PathBuf,
        #[arg(long, default_value = "1")]
        id: String,
    },
    /// Fit a linear model to a feature CSV with a `target` column.
    Fit {
        data: PathBuf,
        model: PathBuf,
        /// Comma-separated feature columns; defaults to every column.
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<String>>,
    },
    /// Predict one value per row of a feature CSV.
    Predict { model: PathBuf, data: PathBuf },
    /// R² and RMSE of a model on a feature CSV with targets.
    Evaluate { model: PathBuf, data: PathBuf },
    /// Render a phantom spec to an image pair plus truth.json.
    Phantom {
        spec: PathBuf,
        /// Also compute the voxel oracle at this sub-voxel resolution.
        #[arg(long)]
        voxel_resolution: Option<usize>,
    },
    /// Full pipeline on one image pair.
    Pipeline {
        back: PathBuf,
        side: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Pipeline over a CSV manifest of `id,back,side` rows.
    Batch {
        manifest: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected MIN,MAX")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

impl ConfigArgs {
    fn resolve(&self) -> bodyvol_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let t = &mut cfg.threshold;
        set(&mut t.hue_min, self.hue_min);
        set(&mut t.hue_max, self.hue_max);
        set(&mut t.sat_min, self.sat_min);
        set(&mut t.val_min, self.val_min);
        if let Some((lo, hi)) = self.angle_range {
            cfg.search.angle_min = lo;
            cfg.search.angle_max = hi;
        }
        if self.rows.is_some() {
            cfg.rows = self.rows;
        }
        if let (Some(bx), Some(sx), Some(y)) = (self.scale_back_x, self.scale_side_x, self.scale_y)
        {
            cfg.scale = Some(CalibrationScale {
                cm_per_px_back_x: bx,
                cm_per_px_side_x: sx,
                cm_per_px_y: y,
            });
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set(field: &mut f64, value: Option<f64>) {
    if let Some(v) = value {
        *field = v;
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, exit) = if let Some(e) = err.downcast_ref::<Error>() {
                (e.code(), e.exit_code())
            } else if err.downcast_ref::<std::io::Error>().is_some() {
                ("Io", 12)
            } else {
                ("Other", 1)
            };
            let msg = serde_json::json!({ "error": code, "message": format!("{err:#}") });
            eprintln!("{msg}");
            ExitCode::from(exit as u8)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = cli.config.resolve()?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Segment { image, output } => {
            let img = RasterImage::load(&image)?;
            let mask = pipeline::segment_view(&img, &cfg)?;
            mask.save(&output)?;
        }
        Command::Align { mask, output } => {
            let m = BodyMask::load(&mask)?;
            let r = align_upright(&m, &cfg.search)?;
            r.mask.save(&output)?;
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record([
                mask.display().to_string(),
                fmt_sig6(r.angle),
                fmt_sig6(r.score),
            ])?;
            w.flush()?;
        }
        Command::Volume { back, side } => {
            let (b, s) = (BodyMask::load(&back)?, BodyMask::load(&side)?);
            let (profiles, mut volume) = pipeline::measure(&b, &s, cfg.rows, cfg.scale)?;
            volume.features = shape_features(&profiles, &volume)?;
            fs::create_dir_all(&cfg.output_dir)?;
            let csv_path = cfg.output_dir.join(pipeline::artifacts::PROFILES);
            pipeline::write_profiles_csv(&profiles, fs::File::create(&csv_path)?)?;
            let json = pipeline::volume_json(
                &profiles,
                &volume,
                Some(pipeline::volume_parameters(cfg.rows)),
            )?;
            fs::write(cfg.output_dir.join(pipeline::artifacts::VOLUME), &json)?;
            out.write_all(json.as_bytes())?;
        }
        Command::Features { back, side, id } => {
            let (b, s) = (BodyMask::load(&back)?, BodyMask::load(&side)?);
            let (profiles, volume) = pipeline::measure(&b, &s, cfg.rows, cfg.scale)?;
            let f = shape_features(&profiles, &volume)?;
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(std::iter::once("id").chain(ShapeFeatures::NAMES))?;
            w.write_record(std::iter::once(id).chain(f.to_vec().map(fmt_sig6)))?;
            w.flush()?;
        }
        Command::Fit {
            data,
            model,
            features,
        } => {
            let ds = Dataset::load(&data)?;
            let names = features.unwrap_or_else(|| ds.feature_order.clone());
            let probe = CompositionModel::new(names.clone(), vec![0.0; names.len()], 0.0)?;
            let rows = ds.columns_for(&probe)?;
            let (m, report) = fit_linear_named(names, &rows, ds.targets()?)?;
            m.save(&model)?;
            writeln!(out, "{}", to_json_sig6(&report)?)?;
        }
        Command::Predict { model, data } => {
            let m = CompositionModel::load(&model)?;
            let ds = Dataset::load(&data)?;
            let rows = ds.columns_for(&m)?;
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["id", "prediction"])?;
            for (id, row) in ds.ids.iter().zip(&rows) {
                w.write_record([id.clone(), fmt_sig6(predict(&m, row)?)])?;
            }
            w.flush()?;
        }
        Command::Evaluate { model, data } => {
            let m = CompositionModel::load(&model)?;
            let ds = Dataset::load(&data)?;
            let report = evaluate(&m, &ds.columns_for(&m)?, ds.targets()?)?;
            writeln!(out, "{}", to_json_sig6(&report)?)?;
        }
        Command::Phantom {
            spec,
            voxel_resolution,
        } => {
            let spec = PhantomSpec::load(&spec)?;
            let (back, side) = phantom::render_phantom(&spec)?;
            let dir = &cfg.output_dir;
            fs::create_dir_all(dir)?;
            back.save(dir.join("back.png"))?;
            side.save(dir.join("side.png"))?;
            let truth = phantom::truth(&spec, voxel_resolution);
            let text = to_json_sig6(&serde_json::json!({
                "analytic_px3": truth.analytic_px3,
                "voxel_px3": truth.voxel_px3,
                "rotation": truth.rotation,
                "spec": spec,
            }))?;
            fs::write(dir.join("truth.json"), format!("{text}\n"))?;
        }
        Command::Pipeline { back, side, model } => {
            let report = pipeline::run_pipeline(&back, &side, &cfg, model.as_deref())?;
            writeln!(out, "{}", report.to_json()?)?;
        }
        Command::Batch {
            manifest,
            model,
            workers,
        } => {
            if workers == 0 {
                bail!(Error::InvalidParams("--workers must be at least 1".into()));
            }
            let entries = pipeline::read_manifest(&manifest)?;
            let model = model.as_deref().map(CompositionModel::load).transpose()?;
            let rows = pipeline::batch(&entries, &cfg, model.as_ref(), workers)?;
            fs::create_dir_all(&cfg.output_dir)?;
            let path = cfg.output_dir.join("summary.csv");
            pipeline::write_batch_summary(&rows, fs::File::create(&path)?)?;
            let failed = rows.iter().filter(|r| !r.is_ok()).count();
            if failed > 0 {
                eprintln!("warning: {failed} of {} entries failed", rows.len());
            }
            writeln!(out, "{}", path.display())?;
        }
    }
    Ok(())
}
