//! The `instaboost` command line: `augment`, `heatmap`, `preview`, `bench`.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 invalid input
//! data or unknown ids, 4 I/O failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::annotations::{parse_dataset, serialize_dataset, AnnotationError, DatasetIndex};
use crate::heatmap::{compute_heatmap, render_colormap, render_gray, HeatmapConfig, HeatmapStatus};
use crate::maskops::rasterize;
use crate::pipeline::{augment_dataset, augment_image, AugmentConfig, AugmentMode, DatasetOptions, PipelineError};
use crate::synth::{scene, SceneSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Invalid(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Invalid(m) | CliError::Io(m) => m,
        }
    }
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        match e {
            AnnotationError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            PipelineError::ValidationFailure { .. } | PipelineError::ImageSizeMismatch { .. } => {
                CliError::Invalid(e.to_string())
            }
            PipelineError::Annotation(a) => a.into(),
            PipelineError::Io { .. } | PipelineError::Image { .. } => CliError::Io(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "instaboost", version, about = "Copy-paste augmentation for instance segmentation datasets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Augment a whole COCO-style dataset.
    Augment(AugmentArgs),
    /// Render the appearance-consistency heatmap of one instance.
    Heatmap(HeatmapArgs),
    /// Augment a single image and write the result.
    Preview(PreviewArgs),
    /// Time exact against accelerated heatmaps on synthetic images.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    RandomJitter,
    MapGuided,
}

impl From<ModeArg> for AugmentMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::RandomJitter => AugmentMode::RandomJitter,
            ModeArg::MapGuided => AugmentMode::MapGuided,
        }
    }
}

/// Flags that override the config file.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML config file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Per-image probability of augmenting.
    #[arg(long = "prob")]
    pub apply_probability: Option<f64>,
    #[arg(long)]
    pub max_instances: Option<usize>,
    #[arg(long)]
    pub feather_radius: Option<f64>,
    #[arg(long)]
    pub forbid_overlap: bool,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub ann: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub out_ann: Option<PathBuf>,
    #[arg(long)]
    pub out_images: Option<PathBuf>,
    #[arg(long, env = "INSTABOOST_WORKERS", default_value_t = 1)]
    pub workers: usize,
    /// Augmented copies of every input image.
    #[arg(long, default_value_t = 1)]
    pub copies: usize,
    /// Also print the run statistics as JSON.
    #[arg(long)]
    pub json_stats: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub ann: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub image_id: u64,
    #[arg(long)]
    pub annotation_id: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write 8-bit grayscale instead of a colormap.
    #[arg(long)]
    pub gray: bool,
    /// Compute at source resolution instead of the working size.
    #[arg(long)]
    pub exact: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    #[arg(long)]
    pub ann: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub image_id: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the augmented image's annotations here.
    #[arg(long)]
    pub out_ann: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Image size as WIDTHxHEIGHT; repeatable.
    #[arg(long, value_parser = parse_size, default_value = "360x240")]
    pub size: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    if w < 8 || h < 8 {
        return Err("sizes must be at least 8x8".into());
    }
    Ok((w, h))
}

/// Optional dataset paths in the `[paths]` table of a config file.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub ann: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub out_ann: Option<PathBuf>,
    pub out_images: Option<PathBuf>,
}

/// A config file: `AugmentConfig` fields at top level plus a `[paths]` table.
#[derive(Debug, Default, Clone)]
pub struct CliConfigFile {
    pub augment: AugmentConfig,
    pub paths: PathsConfig,
}

impl CliConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let paths = match table.remove("paths") {
            Some(v) => PathsConfig::deserialize(v).map_err(|e| format!("[paths]: {e}"))?,
            None => PathsConfig::default(),
        };
        let augment = AugmentConfig::deserialize(toml::Value::Table(table)).map_err(|e| e.to_string())?;
        augment.validate().map_err(|e| e.to_string())?;
        Ok(Self { augment, paths })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<CliConfigFile, CliError> {
        let mut file = match &self.config {
            Some(p) => CliConfigFile::load(p)?,
            None => CliConfigFile::default(),
        };
        let cfg = &mut file.augment;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.mode = m.into();
        }
        if let Some(p) = self.apply_probability {
            cfg.apply_probability = p;
        }
        if let Some(n) = self.max_instances {
            cfg.max_instances_per_image = Some(n);
        }
        if let Some(r) = self.feather_radius {
            cfg.feather_radius = r;
        }
        if self.forbid_overlap {
            cfg.forbid_overlap = true;
        }
        cfg.validate()?;
        Ok(file)
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Augment(a) => cmd_augment(a),
        Command::Heatmap(a) => cmd_heatmap(a),
        Command::Preview(a) => cmd_preview(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn required(flag: Option<PathBuf>, from_file: Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or(from_file).ok_or_else(|| {
        CliError::Usage(format!(
            "missing --{name} (give it as a flag or under [paths] in --config)\n\nUsage: instaboost augment --ann <ANN> --images <IMAGES> --out-ann <OUT_ANN> --out-images <OUT_IMAGES> [OPTIONS]"
        ))
    })
}

pub fn cmd_augment(args: AugmentArgs) -> Result<(), CliError> {
    let file = args.config.resolve()?;
    let ann = required(args.ann, file.paths.ann, "ann")?;
    let images = required(args.images, file.paths.images, "images")?;
    let out_ann = required(args.out_ann, file.paths.out_ann, "out-ann")?;
    let out_images = required(args.out_images, file.paths.out_images, "out-images")?;
    if args.workers == 0 || args.copies == 0 {
        return Err(CliError::Usage("--workers and --copies must be at least 1".into()));
    }
    let stats = augment_dataset(
        &ann,
        &images,
        &out_ann,
        &out_images,
        &file.augment,
        DatasetOptions {
            workers: args.workers,
            copies: args.copies,
        },
    )?;
    println!("{stats}");
    if args.json_stats {
        println!("{}", stats.to_json());
    }
    Ok(())
}

fn load_image(images: &Path, index: &DatasetIndex, image_id: u64) -> Result<image::RgbImage, CliError> {
    let rec = index
        .image(image_id)
        .ok_or_else(|| CliError::Invalid(format!("unknown image id {image_id}")))?;
    let path = images.join(&rec.file_name);
    let img = image::open(&path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?
        .to_rgb8();
    if img.dimensions() != (rec.width, rec.height) {
        return Err(CliError::Invalid(format!(
            "{} is {:?}, annotation says {:?}",
            path.display(),
            img.dimensions(),
            (rec.width, rec.height)
        )));
    }
    Ok(img)
}

pub fn cmd_heatmap(args: HeatmapArgs) -> Result<(), CliError> {
    let file = args.config.resolve()?;
    let index = parse_dataset(&args.ann)?;
    let ann = index
        .annotation(args.annotation_id)
        .ok_or_else(|| CliError::Invalid(format!("unknown annotation id {}", args.annotation_id)))?;
    if ann.image_id != args.image_id {
        return Err(CliError::Invalid(format!(
            "annotation {} belongs to image {}, not {}",
            ann.id, ann.image_id, args.image_id
        )));
    }
    let img = load_image(&args.images, &index, args.image_id)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mask = rasterize(ann, w, h).map_err(|e| CliError::Invalid(e.to_string()))?;
    let cfg: HeatmapConfig = if args.exact {
        file.augment.heatmap.exact_for(w, h)
    } else {
        file.augment.heatmap
    };
    let hm = compute_heatmap(&img, &mask, &cfg).map_err(|e| CliError::Invalid(e.to_string()))?;
    let saved = if args.gray {
        render_gray(&hm).save_with_format(&args.out, image::ImageFormat::Png)
    } else {
        render_colormap(&hm).save_with_format(&args.out, image::ImageFormat::Png)
    };
    saved.map_err(|e| CliError::Io(format!("cannot write {}: {e}", args.out.display())))?;

    match hm.distance_range {
        Some((m, big_m)) => println!("m: {m:.6}\nM: {big_m:.6}"),
        None => println!("m: inf\nM: inf"),
    }
    let (ax, ay) = hm.argmax();
    let (cx, cy) = hm.working_cell(ax, ay);
    println!("argmax: ({ax}, {ay})");
    println!("argmax working cell: ({cx}, {cy})");
    println!(
        "origin: ({:.2}, {:.2}) working cell ({}, {})",
        hm.origin_source.0, hm.origin_source.1, hm.origin_working.0, hm.origin_working.1
    );
    match hm.status {
        HeatmapStatus::Normal => {}
        HeatmapStatus::Uniform => println!("degenerate: m = M"),
        HeatmapStatus::AllInfinite => println!("degenerate: no finite distance"),
    }
    Ok(())
}

pub fn cmd_preview(args: PreviewArgs) -> Result<(), CliError> {
    let file = args.config.resolve()?;
    let index = parse_dataset(&args.ann)?;
    let img = load_image(&args.images, &index, args.image_id)?;
    let anns: Vec<_> = index.annotations_for(args.image_id).into_iter().cloned().collect();
    // Seeded exactly like the per-image binding call so the two agree byte for byte.
    let mut rng = ChaCha8Rng::seed_from_u64(file.augment.seed);
    let sample = augment_image(&img, &anns, &file.augment, &mut rng)?;
    sample
        .image
        .save_with_format(&args.out, image::ImageFormat::Png)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", args.out.display())))?;
    if let Some(out_ann) = &args.out_ann {
        let rec = index.image(args.image_id).expect("image loaded above").clone();
        let out = DatasetIndex::new(vec![rec], sample.annotations.clone(), index.categories.clone())?;
        serialize_dataset(&out, out_ann)?;
    }
    println!("seed: {}", file.augment.seed);
    println!("applied: {}", sample.applied);
    for m in &sample.provenance {
        println!(
            "moved {}: t = ({:.2}, {:.2}), s = {:.3}, r = {:.2} deg, occludes {:?}",
            m.source_annotation_id, m.tuple.tx, m.tuple.ty, m.tuple.scale, m.tuple.rotation, m.occludes
        );
    }
    for f in &sample.failures {
        println!("kept {}: {}", f.annotation_id, f.reason);
    }
    Ok(())
}

/// Pearson correlation over pairs where both values are finite.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| (*x, *y))
        .collect();
    let n = pairs.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 && sbb == 0.0 {
        // Two constant grids agree perfectly.
        return 1.0;
    }
    sab / (saa * sbb).sqrt()
}

pub fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    if args.iters == 0 {
        return Err(CliError::Usage("--iters must be at least 1".into()));
    }
    let cfg = HeatmapConfig::default();
    for &(w, h) in &args.size {
        let s = scene(&SceneSpec::new(w, h, 1), args.seed, 1, 1);
        let mask = rasterize(&s.annotations[0], w, h).map_err(|e| CliError::Invalid(e.to_string()))?;
        let exact_cfg = cfg.exact_for(w, h);
        let time = |c: &HeatmapConfig| -> Result<(f64, crate::heatmap::ConsistencyHeatmap), CliError> {
            let t = Instant::now();
            let mut last = None;
            for _ in 0..args.iters {
                last = Some(compute_heatmap(&s.image, &mask, c).map_err(|e| CliError::Invalid(e.to_string()))?);
            }
            Ok((
                t.elapsed().as_secs_f64() * 1e3 / args.iters as f64,
                last.expect("iters >= 1"),
            ))
        };
        let (fast_ms, fast) = time(&cfg)?;
        let (exact_ms, exact) = time(&exact_cfg)?;
        let r = pearson(exact.value.as_slice(), fast.value.as_slice());
        println!("size: {w}x{h}");
        println!("exact: {exact_ms:.2} ms/heatmap");
        println!("accelerated: {fast_ms:.2} ms/heatmap");
        println!(
            "correlation: {r:.6} {}",
            if r >= 0.8 { "PASS (>= 0.8)" } else { "FAIL (< 0.8)" }
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("360x240"), Ok((360, 240)));
        assert!(parse_size("360").is_err());
        assert!(parse_size("4x4").is_err());
    }

    #[test]
    fn config_file_sections() {
        let f = CliConfigFile::parse(
            "mode = \"random_jitter\"\nseed = 4\n[jitter]\nscale_range = [0.9, 1.1]\n[paths]\nann = \"a.json\"\n",
        )
        .unwrap();
        assert_eq!(f.augment.mode, AugmentMode::RandomJitter);
        assert_eq!(f.augment.seed, 4);
        assert_eq!(f.augment.jitter.scale_range, [0.9, 1.1]);
        assert_eq!(f.paths.ann, Some(PathBuf::from("a.json")));
        assert!(CliConfigFile::parse("colour = 1\n").is_err());
        assert!(CliConfigFile::parse("[paths]\nfoo = 1\n").is_err());
        assert!(CliConfigFile::parse("apply_probability = 3.0\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "seed = 1\napply_probability = 0.2\n").unwrap();
        let args = ConfigArgs {
            config: Some(p),
            seed: Some(9),
            mode: None,
            apply_probability: None,
            max_instances: None,
            feather_radius: None,
            forbid_overlap: false,
        };
        let f = args.resolve().unwrap();
        assert_eq!(f.augment.seed, 9);
        assert_eq!(f.augment.apply_probability, 0.2);
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }
}
