use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use geoseer::api::{self, AppState};
use geoseer::backend::{from_config, BackendConfig, BackendMode, RecordingBackend};
use geoseer::config::Config;
use geoseer::dataset::{load_manifest_file, ManifestError};
use geoseer::geocoder::{GeocodeFixtures, Geocoder, NominatimProvider};
use geoseer::harness::{render_report, run_eval, ReportFormat};
use geoseer::media::{read_exif, strip_gps};
use geoseer::model::{Coordinates, EvidenceBundle, ImageEvidence, Language};
use geoseer::parser::{render_guess_block, render_profile_block};
use geoseer::pipeline::{Pipeline, PipelineError};
use geoseer::scoring::SetCounting;
use geoseer::session::{SessionError, SessionManager, SessionState};

const EXIT_FAILURE: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_SCHEMA: u8 = 4;

/// Error carrying the process exit code.
struct Failure(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(EXIT_FAILURE, e.into())
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "geoseer", version, about = "Geo-privacy audit toolkit")]
struct Cli {
    /// TOML config file (defaults to $GEOSEER_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Live,
    Fixture,
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// Backend mode; overrides the config file.
    #[arg(long, value_enum)]
    backend: Option<Mode>,
    /// Fixture directory for fixture mode.
    #[arg(long, env = "GEOSEER_FIXTURE_DIR")]
    fixture_dir: Option<PathBuf>,
    /// Geocoder fixture JSON; disables network geocoding.
    #[arg(long)]
    geocode_fixtures: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Infer where images (and optional text) were taken.
    Infer {
        images: Vec<PathBuf>,
        #[arg(long)]
        text: Vec<String>,
        #[arg(long)]
        hint: Vec<String>,
        #[arg(long)]
        language: Option<String>,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Poster profile (location, age, gender) for a social-media post.
    Profile {
        #[arg(long, required = true)]
        text: Vec<String>,
        #[arg(long)]
        image: Vec<PathBuf>,
        #[arg(long)]
        language: Option<String>,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Interactive refinement: `hint <text>`, `image <path>`, `map`, `show`, `quit`.
    Session {
        #[arg(long)]
        image: Vec<PathBuf>,
        #[arg(long)]
        text: Vec<String>,
        #[arg(long)]
        language: Option<String>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Score a dataset manifest against the configured backends.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Backend ids from the config to run (default: all).
        #[arg(long, value_delimiter = ',')]
        backends: Vec<String>,
        #[arg(long, default_value = "table")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_concurrency: Option<usize>,
        /// Count multi-angle images individually instead of per set.
        #[arg(long)]
        per_image: bool,
        #[arg(long)]
        repeats: Option<u32>,
        /// Write a fixed timestamp so reports are byte-comparable.
        #[arg(long)]
        frozen_time: bool,
        #[arg(long)]
        check_files: bool,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// EXIF audit and GPS removal.
    Exif {
        #[command(subcommand)]
        action: ExifAction,
    },
    /// Forward geocode an address.
    Geocode {
        query: String,
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Reverse geocode coordinates.
    Revgeocode {
        #[arg(allow_hyphen_values = true)]
        lat: f64,
        #[arg(allow_hyphen_values = true)]
        lon: f64,
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        addr: Option<SocketAddr>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Run the live backend over a manifest and save fixtures.
    Record {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, env = "GEOSEER_FIXTURE_DIR")]
        fixture_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExifAction {
    Inspect {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    Strip {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

async fn run(cli: Cli) -> CmdResult {
    let config = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Infer {
            images,
            text,
            hint,
            language,
            json,
            backend,
        } => {
            let config = apply_backend_args(config, &backend)?;
            let bundle = load_bundle(&images, &text, &hint, language.as_deref())?;
            infer(&config, bundle, json).await
        }
        Command::Profile {
            text,
            image,
            language,
            json,
            backend,
        } => {
            let config = apply_backend_args(config, &backend)?;
            let bundle = load_bundle(&image, &text, &[], language.as_deref())?;
            profile(&config, bundle, json).await
        }
        Command::Session {
            image,
            text,
            language,
            backend,
        } => {
            let config = apply_backend_args(config, &backend)?;
            let language = parse_language(language.as_deref())?;
            let initial = load_bundle(&image, &text, &[], Some(language.tag()))?;
            session_repl(&config, initial, language).await
        }
        Command::Evaluate {
            manifest,
            backends,
            format,
            out,
            max_concurrency,
            per_image,
            repeats,
            frozen_time,
            check_files,
            backend,
        } => {
            let mut config = apply_backend_args(config, &backend)?;
            if let Some(n) = max_concurrency {
                config.eval.max_concurrency = n;
            }
            if let Some(r) = repeats {
                config.eval.repeats = r;
            }
            if per_image {
                config.eval.counting = SetCounting::PerImage;
            }
            if frozen_time {
                config.eval.frozen_time = Some(DateTime::<Utc>::UNIX_EPOCH);
            }
            let format: ReportFormat = format.parse().map_err(|e: String| anyhow!(e))?;
            evaluate(&config, &manifest, &backends, format, out.as_deref(), check_files).await
        }
        Command::Exif { action } => match action {
            ExifAction::Inspect { paths, json } => exif_inspect(&paths, json),
            ExifAction::Strip { paths, out_dir } => exif_strip(&paths, &out_dir),
        },
        Command::Geocode { query, fixtures } => {
            let geo = geocoder_for_lookup(&config, fixtures.as_deref())?;
            let r = geo.forward_geocode(&query).await?;
            print_json(&r)
        }
        Command::Revgeocode { lat, lon, fixtures } => {
            let geo = geocoder_for_lookup(&config, fixtures.as_deref())?;
            let r = geo.reverse_geocode(Coordinates::new(lat, lon)?).await?;
            print_json(&r)
        }
        Command::Serve { addr, backend } => {
            let config = apply_backend_args(config, &backend)?;
            serve(&config, addr).await
        }
        Command::Record {
            manifest,
            fixture_dir,
        } => record(config, &manifest, &fixture_dir).await,
    }
}

fn apply_backend_args(mut config: Config, args: &BackendArgs) -> Result<Config, Failure> {
    if let Some(mode) = args.backend {
        let mode = match mode {
            Mode::Live => BackendMode::Live,
            Mode::Fixture => BackendMode::Fixture,
        };
        config.backend.mode = mode;
        for b in &mut config.backends {
            b.mode = mode;
        }
    }
    if let Some(dir) = &args.fixture_dir {
        config.backend.fixture_dir = Some(dir.clone());
        for b in &mut config.backends {
            b.fixture_dir.get_or_insert_with(|| dir.clone());
        }
    }
    if let Some(f) = &args.geocode_fixtures {
        config.geocoder.fixtures = Some(f.clone());
    }
    Ok(config)
}

fn parse_language(tag: Option<&str>) -> Result<Language, Failure> {
    match tag {
        None => Ok(Language::En),
        Some(t) => Ok(t.parse::<Language>()?),
    }
}

fn read_image(path: &Path) -> Result<ImageEvidence, Failure> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ImageEvidence::from_bytes(name, bytes))
}

fn load_bundle(
    images: &[PathBuf],
    texts: &[String],
    hints: &[String],
    language: Option<&str>,
) -> Result<EvidenceBundle, Failure> {
    let mut bundle = EvidenceBundle::new(parse_language(language)?);
    for p in images {
        bundle = bundle.with_image(read_image(p)?);
    }
    for t in texts {
        bundle = bundle.with_text(t.clone());
    }
    for h in hints {
        bundle = bundle.with_hint(h.clone());
    }
    Ok(bundle)
}

fn pipeline(config: &Config) -> Result<Pipeline, Failure> {
    let geocoder = config.build_geocoder()?;
    Ok(config.pipeline_for(&config.backend, geocoder)?)
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Backend(_) => Failure(EXIT_BACKEND, e.into()),
        PipelineError::Profile(_) => Failure(EXIT_PARSE, e.into()),
        other => Failure(EXIT_FAILURE, other.into()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> CmdResult {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

async fn infer(config: &Config, bundle: EvidenceBundle, json: bool) -> CmdResult {
    if bundle.is_empty() {
        return Err(Failure(EXIT_FAILURE, anyhow!("give at least one image, --text or --hint")));
    }
    let p = pipeline(config)?;
    let inf = p.infer(&bundle).await.map_err(pipeline_failure)?;
    if let Some(err) = &inf.parse_error {
        return Err(Failure(
            EXIT_PARSE,
            anyhow!("{err}; raw response:\n{}", inf.response.text),
        ));
    }
    if json {
        print_json(&inf)
    } else {
        let mut out = std::io::stdout().lock();
        write!(out, "{}", render_guess_block(&inf.guess))?;
        if let Some(url) = &inf.map_url {
            writeln!(out, "map: {url}")?;
        }
        Ok(())
    }
}

async fn profile(config: &Config, bundle: EvidenceBundle, json: bool) -> CmdResult {
    let p = pipeline(config)?;
    let (profile, _) = p.profile(&bundle).await.map_err(pipeline_failure)?;
    if json {
        print_json(&profile)
    } else {
        print!("{}", render_profile_block(&profile));
        Ok(())
    }
}

fn show_state(state: &SessionState, out: &mut impl Write) -> std::io::Result<()> {
    if let Some(r) = state.rounds.last() {
        writeln!(out, "round {} ({}):", r.round, r.granularity.as_str())?;
        write!(out, "{}", render_guess_block(&r.guess))?;
    }
    if let Some(best) = &state.best {
        writeln!(out, "best so far: {} ({})", best.admin().display_address(), best.granularity().as_str())?;
    }
    Ok(())
}

fn session_error(e: SessionError) -> Failure {
    match e {
        SessionError::Backend { .. } => Failure(EXIT_BACKEND, e.into()),
        other => Failure(EXIT_FAILURE, other.into()),
    }
}

async fn session_repl(config: &Config, initial: EvidenceBundle, language: Language) -> CmdResult {
    let manager = SessionManager::persistent(pipeline(config)?, &config.cache_dir())
        .map_err(session_error)?
        .with_config(config.session.clone());
    let mut out = std::io::stdout();
    let mut session: Option<String> = None;
    if !initial.is_empty() {
        let s = manager.start_session(initial).await.map_err(session_error)?;
        writeln!(out, "session {}", s.session_id)?;
        show_state(&s, &mut out)?;
        session = Some(s.session_id);
    }
    let stdin = std::io::stdin();
    for line in stdin.lock().lines() {
        let line = line?;
        let (cmd, arg) = line.trim().split_once(' ').unwrap_or((line.trim(), ""));
        let arg = arg.trim();
        let delta = match cmd {
            "" => continue,
            "quit" | "exit" => break,
            "hint" if !arg.is_empty() => EvidenceBundle::new(language).with_hint(arg),
            "image" if !arg.is_empty() => match read_image(Path::new(arg)) {
                Ok(img) => EvidenceBundle::new(language).with_image(img),
                Err(Failure(_, e)) => {
                    eprintln!("error: {e:#}");
                    continue;
                }
            },
            "show" | "map" => {
                let Some(id) = &session else {
                    eprintln!("no session yet; add a hint or an image");
                    continue;
                };
                let s = manager.get(id).map_err(session_error)?;
                if cmd == "show" {
                    show_state(&s, &mut out)?;
                } else {
                    match s.best_round().and_then(|r| r.map_url.clone()) {
                        Some(url) => writeln!(out, "{url}")?,
                        None => eprintln!("no coordinates for the best guess yet"),
                    }
                }
                continue;
            }
            _ => {
                eprintln!("commands: hint <text> | image <path> | show | map | quit");
                continue;
            }
        };
        let result = match &session {
            Some(id) => manager.add_evidence(id, delta).await,
            None => manager.start_session(delta).await,
        };
        match result {
            Ok(s) => {
                if session.is_none() {
                    writeln!(out, "session {}", s.session_id)?;
                }
                show_state(&s, &mut out)?;
                session = Some(s.session_id);
            }
            Err(e) => {
                if let SessionError::Backend { session_id, .. } = &e {
                    session.get_or_insert_with(|| session_id.clone());
                }
                eprintln!("error: {e}");
            }
        }
    }
    Ok(())
}

async fn evaluate(
    config: &Config,
    manifest: &Path,
    only: &[String],
    format: ReportFormat,
    out: Option<&Path>,
    check_files: bool,
) -> CmdResult {
    let entries = load_manifest_file(manifest, check_files).map_err(|e| match e {
        ManifestError::Io(_) => Failure(EXIT_FAILURE, e.into()),
        other => Failure(EXIT_SCHEMA, other.into()),
    })?;
    let selected: Vec<BackendConfig> = config
        .all_backends()
        .into_iter()
        .filter(|b| only.is_empty() || only.contains(&b.id))
        .collect();
    if selected.is_empty() {
        return Err(anyhow!("no configured backend matches {only:?}").into());
    }
    let geocoder = config.build_geocoder()?;
    let pipelines = selected
        .iter()
        .map(|b| config.pipeline_for(b, geocoder.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let report = run_eval(&entries, &pipelines, &config.eval).await?;
    let bytes = render_report(&report, format)?;
    match out {
        Some(path) => std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().lock().write_all(&bytes)?,
    }
    Ok(())
}

fn exif_inspect(paths: &[PathBuf], json: bool) -> CmdResult {
    let mut rows = Vec::new();
    let mut failed = false;
    for p in paths {
        let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        match read_exif(&bytes) {
            Ok(s) => rows.push((p.display().to_string(), s)),
            Err(e) => {
                eprintln!("{}: {e}", p.display());
                failed = true;
            }
        }
    }
    if json {
        let doc: Vec<_> = rows
            .iter()
            .map(|(p, s)| serde_json::json!({"path": p, "exif": s}))
            .collect();
        print_json(&doc)?;
    } else {
        let mut out = std::io::stdout().lock();
        writeln!(out, "path\tgps\tlat\tlon\ttimestamp\tcamera")?;
        for (p, s) in &rows {
            let (flag, lat, lon) = match s.gps {
                Some(c) => ("GPS", format!("{:.6}", c.lat()), format!("{:.6}", c.lon())),
                None if s.gps_ifd_present => ("GPS (unreadable)", "-".into(), "-".into()),
                None => ("none", "-".into(), "-".into()),
            };
            let camera = [s.camera_make.as_deref(), s.camera_model.as_deref()]
                .into_iter()
                .flatten()
                .collect::<Vec<_>>()
                .join(" ");
            let ts = s.timestamp.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
            writeln!(out, "{p}\t{flag}\t{lat}\t{lon}\t{ts}\t{}", if camera.is_empty() { "-" } else { &camera })?;
        }
    }
    if failed {
        return Err(Failure(EXIT_FAILURE, anyhow!("some files could not be read")));
    }
    Ok(())
}

fn exif_strip(paths: &[PathBuf], out_dir: &Path) -> CmdResult {
    std::fs::create_dir_all(out_dir)?;
    for p in paths {
        let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        let stripped = strip_gps(&bytes).with_context(|| p.display().to_string())?;
        let name = p.file_name().ok_or_else(|| anyhow!("{} has no file name", p.display()))?;
        let dest = out_dir.join(name);
        if dest.canonicalize().ok() == p.canonicalize().ok() {
            return Err(anyhow!("refusing to overwrite {} in place", p.display()).into());
        }
        std::fs::write(&dest, stripped)?;
        println!("{}", dest.display());
    }
    Ok(())
}

fn geocoder_for_lookup(config: &Config, fixtures: Option<&Path>) -> Result<Geocoder, Failure> {
    if let Some(path) = fixtures.or(config.geocoder.fixtures.as_deref()) {
        return Ok(Geocoder::fixture(GeocodeFixtures::load(path)?));
    }
    let mut live = config.clone();
    live.geocoder.live = true;
    match live.build_geocoder()? {
        Some(g) => Arc::try_unwrap(g).map_err(|_| Failure(EXIT_FAILURE, anyhow!("geocoder in use"))),
        None => Ok(Geocoder::live(Arc::new(NominatimProvider::from_env()?))),
    }
}

async fn serve(config: &Config, addr: Option<SocketAddr>) -> CmdResult {
    let addr = match addr {
        Some(a) => a,
        None => config.server.addr.parse().context("server.addr")?,
    };
    let geocoder = config.build_geocoder()?;
    let primary = config.pipeline_for(&config.backend, geocoder.clone())?;
    let all = config
        .all_backends()
        .iter()
        .map(|b| config.pipeline_for(b, geocoder.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let sessions = SessionManager::persistent(primary.clone(), &config.cache_dir())
        .map_err(session_error)?
        .with_config(config.session.clone());
    let state = AppState::new(primary, Arc::new(sessions))
        .with_eval_pipelines(all)
        .with_run_config(config.eval.clone())
        .with_dataset_dir(config.server.dataset_dir.clone())
        .with_api_token(config.server.api_token.clone());
    api::serve(Arc::new(state), addr, &config.server.cors_origins).await?;
    Ok(())
}

async fn record(mut config: Config, manifest: &Path, fixture_dir: &Path) -> CmdResult {
    let entries = load_manifest_file(manifest, true).map_err(|e| Failure(EXIT_SCHEMA, e.into()))?;
    std::fs::create_dir_all(fixture_dir)?;
    config.backend.mode = BackendMode::Live;
    let live = from_config(&config.backend).map_err(|e| Failure(EXIT_BACKEND, e.into()))?;
    let recorder = Arc::new(RecordingBackend::new(live, fixture_dir));
    let p = pipeline(&config)?.with_backend(recorder);
    let report = run_eval(&entries, &[p], &config.eval).await?;
    let errors = report.entries.iter().filter(|e| e.error.is_some()).count();
    println!(
        "recorded {} of {} entries into {}",
        report.entries.len() - errors,
        report.entries.len(),
        fixture_dir.display()
    );
    if errors > 0 {
        for e in report.entries.iter().filter(|e| e.error.is_some()) {
            eprintln!("{}: {}", e.entry_id, e.error.as_deref().unwrap_or(""));
        }
        return Err(Failure(EXIT_BACKEND, anyhow!("{errors} entries failed")));
    }
    Ok(())
}
