//! Command-line interface: train, match, eval, visualize-topics, bench, gen.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use topicmatch::checkpoint::{load_matcher, open_matcher};
use topicmatch::config::{KernelKind, RunConfig};
use topicmatch::error::{Error, Result};
use topicmatch::imageio::load_image;
use topicmatch::model::{MatchOverrides, Matcher};
use topicmatch::report::evaluate_pair;
use topicmatch::synth::{gen_pair, read_manifest, write_manifest};
use topicmatch::viz::save_overlay;

#[derive(Parser)]
#[command(
    name = "topicmatch",
    about = "Topic-assisted coarse-to-fine feature matching on synthetic homography pairs",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a matcher on streamed synthetic pairs.
    Train {
        /// Run configuration file (key = value lines).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for checkpoints and the loss curve.
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint written by an identical config.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Suppress progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Match two images and print refined correspondences as TSV.
    Match {
        checkpoint: PathBuf,
        image_a: PathBuf,
        image_b: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Coarse confidence threshold override.
        #[arg(long)]
        tau: Option<f64>,
        /// Covisible topic count override.
        #[arg(long)]
        kco: Option<usize>,
        /// Attention kernel override for every stage.
        #[arg(long)]
        kernel: Option<String>,
        /// Keep only the highest-confidence matches.
        #[arg(long)]
        topk: Option<usize>,
        /// Write the TSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Match + RANSAC + AUC/MMA over a dataset manifest.
    Eval {
        checkpoint: PathBuf,
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report directory (report.txt and report.csv).
        #[arg(long)]
        out: PathBuf,
        /// Evaluation match cap.
        #[arg(long, default_value_t = 1000)]
        topk: usize,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        kco: Option<usize>,
        #[arg(long)]
        kernel: Option<String>,
    },
    /// Export topic overlays; with two images only covisible topics tint.
    VisualizeTopics {
        checkpoint: PathBuf,
        image_a: PathBuf,
        image_b: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        kco: Option<usize>,
    },
    /// FLOP and wall-time sweep of topic-restricted vs full attention.
    Bench {
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset manifest (and optionally images).
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of pairs.
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the pair images as PNG.
        #[arg(long)]
        images: bool,
    },
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_kernel(s: &Option<String>) -> Result<Option<KernelKind>> {
    Ok(match s {
        Some(text) => Some(text.parse()?),
        None => None,
    })
}

fn open_with_optional_config(
    checkpoint: &Path,
    config: &Option<PathBuf>,
) -> Result<Matcher> {
    let cfg = match config {
        Some(p) => Some(RunConfig::from_file(p)?),
        None => None,
    };
    let (matcher, _) = open_matcher(checkpoint, cfg)?;
    Ok(matcher)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config, seed, out, resume, quiet } => {
            let cfg = load_config(&config, seed)?;
            let mut matcher = Matcher::init(cfg)?;
            let state = match &resume {
                Some(path) => load_matcher(path, &mut matcher)?,
                None => None,
            };
            topicmatch::train::train(&mut matcher, Some(&out), state, !quiet)?;
            Ok(())
        }
        Cmd::Match { checkpoint, image_a, image_b, config, tau, kco, kernel, topk, out } => {
            let mut matcher = open_with_optional_config(&checkpoint, &config)?;
            if let Some(k) = parse_kernel(&kernel)? {
                matcher.set_kernel(k);
            }
            let img_a = load_image(&image_a)?;
            let img_b = load_image(&image_b)?;
            let ov = MatchOverrides { tau, covisible: kco, kernel: None, topk };
            let result = matcher.match_pair(&img_a, &img_b, &ov)?;
            let mut text = String::new();
            for m in &result.refined {
                text.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\n",
                    m.x1, m.y1, m.x2, m.y2, m.confidence, m.topic
                ));
            }
            let covis: Vec<String> =
                result.covisible.selected.iter().map(|t| t.to_string()).collect();
            text.push_str(&format!(
                "# matches={} coarse={} dropped_fine={} covisible={}\n",
                result.refined.len(),
                result.coarse.matches.len(),
                result.dropped_fine,
                covis.join(",")
            ));
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Cmd::Eval { checkpoint, manifest, config, out, topk, tau, kco, kernel } => {
            let mut matcher = open_with_optional_config(&checkpoint, &config)?;
            if let Some(k) = parse_kernel(&kernel)? {
                matcher.set_kernel(k);
            }
            let entries = read_manifest(&manifest)?;
            let gen_cfg = matcher.cfg.gen_config();
            let want_hash = gen_hash(&gen_cfg);
            let mut evals = Vec::with_capacity(entries.len());
            let ov = MatchOverrides { tau, covisible: kco, kernel: None, topk: Some(topk) };
            for (seed, hash) in entries {
                if hash != want_hash {
                    return Err(Error::Config(format!(
                        "manifest hash {hash:016x} does not match generation config {want_hash:016x}"
                    )));
                }
                let pair = gen_pair(seed, &gen_cfg)?;
                evals.push(evaluate_pair(&matcher, &pair, &ov)?);
            }
            let report = topicmatch::report::summarize(evals);
            report.write(&out)?;
            println!(
                "pairs={} auc3={:.4} auc5={:.4} auc10={:.4} mean_matches={:.1}",
                report.pairs.len(),
                report.auc[0],
                report.auc[1],
                report.auc[2],
                report.mean_matches
            );
            Ok(())
        }
        Cmd::VisualizeTopics { checkpoint, image_a, image_b, config, out, kco } => {
            let matcher = open_with_optional_config(&checkpoint, &config)?;
            std::fs::create_dir_all(&out)?;
            let img_a = load_image(&image_a)?;
            match image_b {
                None => {
                    let (assign, gw, gh) = matcher.topic_map(&img_a)?;
                    save_overlay(&out.join("topics_a.png"), &img_a, &assign, gw, gh, None)?;
                }
                Some(path_b) => {
                    let img_b = load_image(&path_b)?;
                    let ov = MatchOverrides { covisible: kco, ..Default::default() };
                    let result = matcher.match_pair(&img_a, &img_b, &ov)?;
                    let visible = result.covisible.selected.clone();
                    save_overlay(
                        &out.join("topics_a.png"),
                        &img_a,
                        &result.assignment_a,
                        result.grid_w,
                        result.grid_h,
                        Some(&visible),
                    )?;
                    save_overlay(
                        &out.join("topics_b.png"),
                        &img_b,
                        &result.assignment_b,
                        result.grid_w,
                        result.grid_h,
                        Some(&visible),
                    )?;
                }
            }
            Ok(())
        }
        Cmd::Bench { out } => {
            let rows = topicmatch::bench::default_sweep();
            let text = topicmatch::bench::table_text(&rows);
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Cmd::Gen { config, seed, count, out, images } => {
            let cfg = load_config(&config, seed)?;
            let gen_cfg = cfg.gen_config();
            std::fs::create_dir_all(&out)?;
            let seeds: Vec<u64> = (0..count as u64)
                .map(|i| topicmatch::rng::fnv1a64(&[cfg.seed, 0x6765, i]))
                .collect();
            write_manifest(&out.join("manifest.tsv"), &seeds, gen_hash(&gen_cfg))?;
            if images {
                for &s in &seeds {
                    let pair = gen_pair(s, &gen_cfg)?;
                    topicmatch::imageio::save_image(&out.join(format!("{s}_a.png")), &pair.a)?;
                    topicmatch::imageio::save_image(&out.join(format!("{s}_b.png")), &pair.b)?;
                }
            }
            println!("wrote {} pair seeds to {}", seeds.len(), out.join("manifest.tsv").display());
            Ok(())
        }
    }
}

fn gen_hash(g: &topicmatch::synth::GenConfig) -> u64 {
    g.hash()
}

fn main() -> ExitCode {
    // Usage problems exit 1; help and version print normally and exit 0.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
