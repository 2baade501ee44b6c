use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use storyreel_core::inspector::{self, report_json};
use storyreel_core::pipeline::{self, RunConfig, RunError, RunOutcome};
use storyreel_core::{BackendKind, StoryConcept};

#[derive(Parser)]
#[command(name = "storyreel", version, about = "Generate short multi-scene movies from a story prompt")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a story with the agent flow and render it to a movie.
    Generate {
        /// Story prompt file (UTF-8 text).
        #[arg(long)]
        story: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Check a blueprint and write its violation report.
    Validate {
        blueprint: PathBuf,
        /// Where to write the report.
        #[arg(long, default_value = "violations.json")]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render an existing blueprint, skipping the agent flow.
    Render {
        #[arg(long)]
        blueprint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Backend URI for every kind, e.g. `mock:7`.
    #[arg(long)]
    backend_all: Option<String>,
    #[arg(long)]
    backend_text: Option<String>,
    #[arg(long)]
    backend_video: Option<String>,
    #[arg(long)]
    backend_portrait: Option<String>,
    #[arg(long)]
    backend_tts: Option<String>,
    #[arg(long)]
    backend_segmentation: Option<String>,
    #[arg(long)]
    backend_faceswap: Option<String>,
    #[arg(long)]
    backend_lipsync: Option<String>,
    #[arg(long)]
    backend_music: Option<String>,
    /// Output root directory.
    #[arg(long, env = "STORYREEL_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    max_repair_attempts: Option<u32>,
    /// Replace the agent flow with a single-pass template blueprint.
    #[arg(long)]
    no_nsm: bool,
    /// Skip inspection and the repair loop.
    #[arg(long)]
    no_qi: bool,
    /// Skip character integration; raw scene clips go to assembly.
    #[arg(long)]
    no_dci: bool,
    /// Keep integration intermediates under `work/<scene_id>/`.
    #[arg(long)]
    keep_intermediates: bool,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, RunError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(uri) = &self.backend_all {
            c.backends.clear();
            c.backends.insert("all".into(), uri.clone());
        }
        let per_kind = [
            (BackendKind::Text, &self.backend_text),
            (BackendKind::Video, &self.backend_video),
            (BackendKind::Portrait, &self.backend_portrait),
            (BackendKind::Tts, &self.backend_tts),
            (BackendKind::Segmentation, &self.backend_segmentation),
            (BackendKind::Faceswap, &self.backend_faceswap),
            (BackendKind::Lipsync, &self.backend_lipsync),
            (BackendKind::Music, &self.backend_music),
        ];
        for (kind, uri) in per_kind {
            if let Some(uri) = uri {
                c.backends.insert(kind.as_str().into(), uri.clone());
            }
        }
        if let Some(out) = &self.out {
            c.output_root = out.clone();
        }
        if let Some(id) = &self.run_id {
            c.run_id = Some(id.clone());
        }
        if let Some(w) = self.width {
            c.width = w;
        }
        if let Some(h) = self.height {
            c.height = h;
        }
        if let Some(n) = self.max_repair_attempts {
            c.max_repair_attempts = n;
        }
        c.enable_nsm &= !self.no_nsm;
        c.enable_qi &= !self.no_qi;
        c.enable_dci &= !self.no_dci;
        c.keep_intermediates |= self.keep_intermediates;
        c.validate()?;
        Ok(c)
    }
}

fn read_text(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))
}

fn report_failure(err: &RunError) -> ExitCode {
    eprintln!("error[{}]: {err}", err.code());
    if let Some(v) = err.violations() {
        eprintln!("{}", report_json(v));
    }
    ExitCode::from(err.exit_code() as u8)
}

fn report_success(out: &RunOutcome) -> ExitCode {
    let m = &out.manifest;
    eprintln!(
        "{} scene(s), {} frames, {} samples, {} warning(s), {} repair round(s)",
        m.scenes.len(),
        m.movie.frame_count,
        m.movie.sample_count,
        out.violations.len(),
        m.repair_rounds
    );
    println!("{}", out.run_dir.display());
    ExitCode::SUCCESS
}

fn run_generate(story_path: &Path, args: &RunArgs) -> Result<RunOutcome, RunError> {
    let config = args.config()?;
    let text = read_text(story_path)?;
    let story = StoryConcept::new(text.trim(), config.seed);
    pipeline::generate(&story, &config)
}

fn run_render(blueprint_path: &Path, args: &RunArgs) -> Result<RunOutcome, RunError> {
    let config = args.config()?;
    pipeline::render(&read_text(blueprint_path)?, &config)
}

fn run_validate(blueprint: &Path, report: &Path, config: Option<&Path>) -> anyhow::Result<ExitCode> {
    let outcome = (|| {
        let config = match config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let config = RunConfig { enable_qi: true, ..config };
        pipeline::check_document(&read_text(blueprint)?, &config)
    })();
    let (body, code) = match &outcome {
        Ok((_, violations)) => {
            let blocking = inspector::has_blocking(violations);
            (report_json(violations), if blocking { 3 } else { 0 })
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            (json!({"error": {"code": e.code(), "message": e.to_string()}}).to_string(), e.exit_code())
        }
    };
    fs::write(report, format!("{body}\n")).with_context(|| format!("writing {}", report.display()))?;
    if let Ok((_, v)) = &outcome {
        for v in v {
            eprintln!("{} {:?} {} ({}): {}", v.code.as_str(), v.code.severity(), v.path, v.owner, v.message);
        }
    }
    Ok(ExitCode::from(code as u8))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { story, run } => run_generate(story, run),
        Command::Render { blueprint, run } => run_render(blueprint, run),
        Command::Validate { blueprint, report, config } => {
            return match run_validate(blueprint, report, config.as_deref()) {
                Ok(code) => code,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(2)
                }
            };
        }
    };
    match result {
        Ok(out) => report_success(&out),
        Err(e) => report_failure(&e),
    }
}
