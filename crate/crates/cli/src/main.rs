use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use srqa_core::features::{extract_features, FeatureVector};
use srqa_core::forest::ForestParams;
use srqa_core::fusion::{grid_fuse, grid_fuse_rgb, FusionParams};
use srqa_core::harness::desk::build_desk_study;
use srqa_core::harness::manifest::{aggregate_ratings, write_manifest};
use srqa_core::harness::extract_all;
use srqa_core::harness::{load_manifest, run_protocol, FeatureCache, ForestRegressor, Protocol};
use srqa_core::image::{downsample, load_any, load_image, GrayImage, LoadedImage};
use srqa_core::model::{load_model, train_model};

/// No-reference quality assessment for super-resolved images.
#[derive(Parser)]
#[command(name = "srqa", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(clap::Args)]
struct CacheArgs {
    /// Feature cache directory.
    #[arg(long, env = "SRQA_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// Recompute features without reading or writing a cache.
    #[arg(long, conflicts_with = "cache_dir")]
    no_cache: bool,
}

impl CacheArgs {
    fn open(&self) -> Result<FeatureCache> {
        if self.no_cache {
            return Ok(FeatureCache::disabled());
        }
        let dir = self
            .cache_dir
            .clone()
            .unwrap_or_else(|| std::env::temp_dir().join("srqa-feature-cache"));
        Ok(FeatureCache::at(dir)?)
    }
}

#[derive(clap::Args)]
struct ForestArgs {
    /// Trees per forest.
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u32).range(1..))]
    trees: u32,
    /// Minimum samples per leaf.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    min_leaf: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ForestArgs {
    fn params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.trees as usize,
            min_leaf: self.min_leaf as usize,
            ..ForestParams::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Extract the 138 features of an image.
    Features {
        image: PathBuf,
        /// Output file (default: standard output).
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Train a model on every image of a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        forest: ForestArgs,
        #[command(flatten)]
        cache: CacheArgs,
    },
    /// Print the quality score (0 to 10, one decimal) of each image.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Print JSON records with the unclamped score as well.
        #[arg(long)]
        json: bool,
    },
    /// Cross-validate on a manifest and write report.json, report.csv and predictions.csv.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// 5fold (any k), leave-image-out or leave-method-out.
        #[arg(long, default_value = "5fold")]
        protocol: String,
        /// Groups held out per split for the leave-out protocols (defaults 6 and 2).
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        holdout: Option<u32>,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
        repetitions: u32,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        forest: ForestArgs,
        #[command(flatten)]
        cache: CacheArgs,
    },
    /// Blur and decimate an image into its low-resolution counterpart.
    Downsample {
        image: PathBuf,
        #[arg(long, short, value_parser = clap::value_parser!(u32).range(2..))]
        scale: u32,
        #[arg(long)]
        sigma: f64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Turn long-form subject ratings into a manifest of trimmed-mean scores.
    Aggregate {
        ratings: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Stitch the best-scoring grid cells of several candidates.
    Fuse {
        #[arg(required = true, num_args = 2..)]
        images: Vec<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
        grid: u32,
        #[arg(long, default_value_t = 16)]
        overlap: u32,
        #[arg(long, short)]
        out: PathBuf,
        /// Where to write the per-cell scores (default: next to the output).
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Generate a synthetic SR study (images plus manifest.csv) from source images.
    Desk {
        #[arg(required = true)]
        sources: Vec<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Serialize)]
struct FeatureRecord<'a> {
    image: String,
    dims: usize,
    #[serde(flatten)]
    features: &'a FeatureVector,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_features(image: &Path, out: Option<&Path>, format: Format) -> Result<()> {
    let img = load_image(image)?;
    let f = extract_features(&img).with_context(|| format!("extracting features of {}", image.display()))?;
    let text = match format {
        Format::Json => {
            let rec = FeatureRecord {
                image: image.display().to_string(),
                dims: f.as_vec().len(),
                features: &f,
            };
            serde_json::to_string_pretty(&rec)? + "\n"
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(std::iter::once("image".to_string()).chain(FeatureVector::names()))?;
            w.write_record(std::iter::once(image.display().to_string()).chain(f.as_vec().iter().map(f64::to_string)))?;
            String::from_utf8(w.into_inner()?)?
        }
    };
    emit(out, &text)
}

fn load_entries(manifest: &Path) -> Result<Vec<srqa_core::harness::ManifestEntry>> {
    let m = load_manifest(manifest)?;
    m.require_files()?;
    Ok(m.entries)
}

fn cmd_train(manifest: &Path, out: &Path, forest: &ForestArgs, cache: &CacheArgs) -> Result<()> {
    let entries = load_entries(manifest)?;
    let features = extract_all(&entries, &cache.open()?)?;
    let scores: Vec<f64> = entries.iter().map(|e| e.score).collect();
    let model = train_model(&features, &scores, &forest.params(), forest.seed)?;
    model.save(out)?;
    let l = model.lambda();
    eprintln!(
        "trained on {} images; lambda = ({:.4}, {:.4}, {:.4}), intercept {:.4}{}",
        entries.len(),
        l[0],
        l[1],
        l[2],
        model.intercept(),
        if model.rank_deficient() { " (rank-deficient, ridge used)" } else { "" }
    );
    Ok(())
}

fn cmd_predict(model: &Path, images: &[PathBuf], json: bool) -> Result<()> {
    let model = load_model(model)?;
    let mut stdout = std::io::stdout().lock();
    for path in images {
        let f = extract_features(&load_image(path)?).with_context(|| format!("extracting features of {}", path.display()))?;
        let q = model.predict(&f)?;
        if json {
            let rec = serde_json::json!({"image": path.display().to_string(), "score": q.score, "raw": q.raw});
            writeln!(stdout, "{rec}")?;
        } else if images.len() == 1 {
            writeln!(stdout, "{:.1}", q.score)?;
        } else {
            writeln!(stdout, "{:.1}\t{}", q.score, path.display())?;
        }
    }
    Ok(())
}

fn cmd_evaluate(
    manifest: &Path,
    protocol: &str,
    holdout: Option<u32>,
    repetitions: u32,
    out: &Path,
    forest: &ForestArgs,
    cache: &CacheArgs,
) -> Result<()> {
    let mut protocol: Protocol = protocol.parse()?;
    match (&mut protocol, holdout) {
        (Protocol::LeaveImageOut { holdout: h } | Protocol::LeaveMethodOut { holdout: h }, Some(v)) => *h = v as usize,
        (Protocol::KFold { .. }, Some(_)) => bail!("--holdout only applies to leave-image-out and leave-method-out"),
        _ => {}
    }
    let entries = load_entries(manifest)?;
    let splits = protocol.splits(&entries, forest.seed)?;
    let features = extract_all(&entries, &cache.open()?)?;
    let regressor = ForestRegressor { params: forest.params() };
    let report = run_protocol(
        &entries,
        &features,
        &splits,
        &regressor,
        repetitions as usize,
        forest.seed,
        &protocol.to_string(),
    )?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    report.write_json(out.join("report.json"))?;
    report.write_csv(out.join("report.csv"))?;
    report.write_predictions_csv(out.join("predictions.csv"))?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_downsample(image: &Path, scale: u32, sigma: f64, out: &Path) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        bail!("--sigma must be positive, got {sigma}");
    }
    let lr = downsample(&load_image(image)?, scale as usize, sigma)?;
    lr.save_png(out)?;
    eprintln!("wrote {}x{} image to {}", lr.width(), lr.height(), out.display());
    Ok(())
}

fn cmd_aggregate(ratings: &Path, out: &Path) -> Result<()> {
    let file = std::fs::File::open(ratings).with_context(|| format!("opening {}", ratings.display()))?;
    let mut entries = aggregate_ratings(file, ratings)?;
    let base = ratings.parent().unwrap_or(Path::new(""));
    for e in &mut entries {
        if e.image_path.is_relative() {
            e.image_path = base.join(&e.image_path);
        }
    }
    write_manifest(out, &entries)?;
    eprintln!("wrote {} manifest entries to {}", entries.len(), out.display());
    Ok(())
}

fn cmd_fuse(images: &[PathBuf], model: &Path, grid: u32, overlap: u32, out: &Path, map: Option<&Path>) -> Result<()> {
    let model = load_model(model)?;
    let params = FusionParams {
        grid: grid as usize,
        overlap: overlap as usize,
    };
    let loaded: Vec<LoadedImage> = images.iter().map(load_any).collect::<srqa_core::Result<_>>()?;
    let rgb: Option<Vec<_>> = loaded
        .iter()
        .map(|l| match l {
            LoadedImage::Rgb(c) => Some(c.clone()),
            LoadedImage::Gray(_) => None,
        })
        .collect();
    let score_map = match rgb {
        Some(cands) => {
            let (img, m) = grid_fuse_rgb(&cands, &model, &params)?;
            img.save_png(out)?;
            m
        }
        None => {
            let cands: Vec<GrayImage> = loaded.iter().map(LoadedImage::luma).collect();
            let (img, m) = grid_fuse(&cands, &model, &params)?;
            img.save_png(out)?;
            m
        }
    };
    let map_path = map.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("json"));
    std::fs::write(&map_path, score_map.to_json()?).with_context(|| format!("writing {}", map_path.display()))?;
    for c in &score_map.cells {
        println!("cell ({}, {}): candidate {} score {:.2}", c.row, c.col, c.winner, c.score);
    }
    Ok(())
}

fn cmd_desk(sources: &[PathBuf], out: &Path, seed: u64) -> Result<()> {
    let mut named = Vec::with_capacity(sources.len());
    for p in sources {
        let name = p
            .file_stem()
            .and_then(|s| s.to_str())
            .with_context(|| format!("no usable file name in {}", p.display()))?
            .to_string();
        if named.iter().any(|(n, _)| n == &name) {
            bail!("two sources are named {name}");
        }
        named.push((name, load_image(p)?));
    }
    let entries = build_desk_study(&named, out, seed)?;
    eprintln!("wrote {} images and {}", entries.len(), out.join("manifest.csv").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global()?;
    }
    match &cli.command {
        Command::Features { image, out, format } => cmd_features(image, out.as_deref(), *format),
        Command::Train { manifest, out, forest, cache } => cmd_train(manifest, out, forest, cache),
        Command::Predict { model, images, json } => cmd_predict(model, images, *json),
        Command::Evaluate {
            manifest,
            protocol,
            holdout,
            repetitions,
            out,
            forest,
            cache,
        } => cmd_evaluate(manifest, protocol, *holdout, *repetitions, out, forest, cache),
        Command::Downsample { image, scale, sigma, out } => cmd_downsample(image, *scale, *sigma, out),
        Command::Aggregate { ratings, out } => cmd_aggregate(ratings, out),
        Command::Fuse {
            images,
            model,
            grid,
            overlap,
            out,
            map,
        } => cmd_fuse(images, model, *grid, *overlap, out, map.as_deref()),
        Command::Desk { sources, out, seed } => cmd_desk(sources, out, *seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
