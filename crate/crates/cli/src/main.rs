use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use attrib_cli::config::MethodName;
use attrib_cli::pipeline::{self, Out};
use attrib_cli::PipelineConfig;
use attrib_core::metrics::{format_table, EvaluationReport};
use attrib_core::shapley::Method;
use attrib_core::ModelBundle;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attrib", version, about = "Build, evaluate and explain tabular regression models")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Pipeline config (JSON), or a run manifest to reproduce.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; every artifact is written below it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Attribution method.
    #[arg(long, global = true, value_parser = ["exact", "sampled"])]
    method: Option<String>,
    /// Features shown per plot.
    #[arg(long = "top-k", global = true)]
    top_k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset (data.csv).
    Gen,
    /// Clean and one-hot encode the raw data (clean.csv).
    Clean,
    /// Split clean.csv into train.csv and test.csv.
    Split,
    /// Grid-search and fit every model in the roster on train.csv.
    Train,
    /// Score the fitted models on test.csv.
    Evaluate,
    /// Attributions and explanations.
    #[command(subcommand)]
    Explain(ExplainCommand),
    /// Render the configured plots from the bundle and attributions.
    Plot,
    /// Serve a bundle over HTTP.
    Serve(ServeArgs),
    /// Run the whole pipeline.
    Run,
}

#[derive(Subcommand)]
enum ExplainCommand {
    /// Pick the best model, attribute the training rows and write bundle.json.
    Global,
    /// Explain one JSON record against a bundle.
    Local {
        #[arg(long)]
        instance: PathBuf,
        /// Defaults to <out>/bundle.json.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ServeArgs {
    /// Defaults to <out>/bundle.json.
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = attrib_server::DEFAULT_PORT)]
    port: u16,
}

fn load_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let path = g.config.as_deref().context("this command needs --config PATH")?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(m) = &g.method {
        cfg.shapley.method = m.parse::<MethodName>().map_err(anyhow::Error::msg)?;
    }
    if let Some(k) = g.top_k {
        cfg.top_k = Some(k);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(g: &GlobalArgs, cfg: Option<&PipelineConfig>) -> Result<Out> {
    let dir = match (&g.out, cfg) {
        (Some(o), _) => o.clone(),
        (None, Some(c)) => c.out_dir(),
        (None, None) => PathBuf::from("out"),
    };
    Out::new(dir)
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().with_context(|| format!("stage `{name}` failed"))
}

fn print_reports(reports: &[EvaluationReport]) {
    print!("{}", format_table(reports));
}

fn load_bundle(path: Option<&Path>, out: &Out) -> Result<ModelBundle> {
    let path = path.map_or_else(|| out.path(pipeline::BUNDLE_JSON), Path::to_path_buf);
    ModelBundle::load(&path).with_context(|| format!("loading bundle {}", path.display()))
}

fn local_method(g: &GlobalArgs) -> Result<Method> {
    let cfg = g.config.as_ref().map(|_| load_config(g)).transpose()?;
    Ok(match (cfg, g.method.as_deref()) {
        (Some(cfg), _) => cfg.method(),
        (None, Some("sampled")) => Method::Sampled {
            n_perms: Method::DEFAULT_N_PERMS,
            seed: g.seed.unwrap_or(Method::DEFAULT_SEED),
        },
        (None, _) => Method::Exact,
    })
}

fn execute(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Gen => {
            let cfg = load_config(g)?;
            let mut out = out_dir(g, Some(&cfg))?;
            let d = stage("gen", || pipeline::gen(&cfg, &mut out))?;
            println!("{} rows -> {}", d.len(), out.path(pipeline::DATA_CSV).display());
        }
        Command::Clean => {
            let cfg = load_config(g)?;
            let mut out = out_dir(g, Some(&cfg))?;
            let (d, log) = stage("clean", || {
                let raw = pipeline::load_raw(&cfg, &mut out)?;
                pipeline::clean_stage(&cfg, &raw, &mut out)
            })?;
            println!("{} rows kept, {} dropped", d.len(), log.total());
        }
        Command::Split => {
            let cfg = load_config(g)?;
            let mut out = out_dir(g, Some(&cfg))?;
            let (train, test) = stage("split", || {
                let data = pipeline::load_encoded(&out, pipeline::CLEAN_CSV)?;
                pipeline::split_stage(&cfg, &data, &mut out)
            })?;
            println!("{} train / {} test", train.len(), test.len());
        }
        Command::Train => {
            let cfg = load_config(g)?;
            let mut out = out_dir(g, Some(&cfg))?;
            let trained = stage("train", || {
                let train = pipeline::load_encoded(&out, pipeline::TRAIN_CSV)?;
                pipeline::train_stage(&cfg, &train, &mut out)
            })?;
            for s in &trained.searches {
                println!("{}: {}", s.kind, s.best);
            }
        }
        Command::Evaluate => {
            let cfg = load_config(g)?;
            let mut out = out_dir(g, Some(&cfg))?;
            let reports = stage("evaluate", || {
                let models = pipeline::load_models(&cfg, &out)?;
                let test = pipeline::load_encoded(&out, pipeline::TEST_CSV)?;
                pipeline::evaluate_stage(&models, &test, &mut out)
            })?;
            print_reports(&reports);
        }
        Command::Explain(ExplainCommand::Global) => {
            let cfg = load_config(g)?;
            let mut out = out_dir(g, Some(&cfg))?;
            let global = stage("explain global", || {
                let models = pipeline::load_models(&cfg, &out)?;
                let reports: Vec<EvaluationReport> = out.read_json(pipeline::EVALUATION_JSON)?;
                let (model, report) = pipeline::select_model(&models, &reports)?;
                let train = pipeline::load_encoded(&out, pipeline::TRAIN_CSV)?;
                pipeline::explain_global_stage(&cfg, model, report, &train, &mut out)
            })?;
            println!("selected {}", global.bundle.model.kind);
            for fi in &global.bundle.global_importance {
                println!("{:>24}  {:.4}", fi.feature, fi.importance);
            }
        }
        Command::Explain(ExplainCommand::Local { instance, bundle }) => {
            let method = local_method(g)?;
            let cfg = g.config.as_ref().map(|_| load_config(g)).transpose()?;
            let mut out = out_dir(g, cfg.as_ref())?;
            let attr = stage("explain local", || {
                let bundle = load_bundle(bundle.as_deref(), &out)?;
                let text = std::fs::read_to_string(&instance)
                    .with_context(|| format!("reading {}", instance.display()))?;
                let record: serde_json::Value = serde_json::from_str(&text)?;
                pipeline::explain_local(&bundle, &record, method, g.top_k, &mut out)
            })?;
            println!("{}", serde_json::to_string_pretty(&attr)?);
        }
        Command::Plot => {
            let cfg = load_config(g)?;
            let mut out = out_dir(g, Some(&cfg))?;
            let files = stage("plot", || {
                let bundle = load_bundle(None, &out)?;
                let table: pipeline::AttributionTable = out.read_json(pipeline::ATTRIBUTIONS_JSON)?;
                let data = pipeline::load_encoded(&out, pipeline::CLEAN_CSV)?;
                pipeline::plot_stage(&cfg, &bundle, &table, &data, &mut out)
            })?;
            for f in files {
                println!("{}", out.path(&f).display());
            }
        }
        Command::Serve(args) => {
            let cfg = g.config.as_ref().map(|_| load_config(g)).transpose()?;
            let out = out_dir(g, cfg.as_ref())?;
            let bundle = stage("serve", || load_bundle(args.bundle.as_deref(), &out))?;
            let runtime = tokio::runtime::Runtime::new()?;
            stage("serve", || {
                Ok(runtime.block_on(attrib_server::serve(bundle, SocketAddr::new(args.host, args.port)))?)
            })?;
        }
        Command::Run => {
            let cfg = load_config(g)?;
            let mut out = out_dir(g, Some(&cfg))?;
            let run = pipeline::run_pipeline(&cfg, &mut out)?;
            print_reports(&run.reports);
            println!(
                "selected {}; {} plots; manifest {}",
                run.manifest.selected_model,
                run.plots.len(),
                out.path(pipeline::MANIFEST_JSON).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ATTRIB_LOG", "info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("attrib: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
