use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use seqlens::attribution::top_fraction_range;
use seqlens::cancel::CancelToken;
use seqlens::ingest::{export_summary, load_bundle, DatasetManifest};
use seqlens::model::{
    validate_dataset, AnalysisParams, AttentionLevel, AttentionMode, AttentionRange, AttentionTensor, DistanceNorm,
    ElbowRule, KSelection, ReferenceAggregate, SequenceDataset, Setting,
};
use seqlens::pipeline::{Cache, Pipeline};
use seqlens::Error;

#[derive(Parser)]
#[command(name = "seqlens", version, about = "Attention-filtered feature ranking and temporal pattern summaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a bundle against every dataset invariant.
    Validate { manifest: PathBuf },
    /// Rank features by contribution score under the given attention range.
    Rank {
        manifest: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run the full pipeline and write the summary document.
    Summarize {
        manifest: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        /// Reproducible batch mode: `--seed` becomes mandatory.
        #[arg(long, env = "SEQLENS_CI")]
        ci: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
    },
}

fn serde_str<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

fn setting<T: std::str::FromStr>(s: &str) -> Result<Setting<T>, String>
where
    T::Err: std::fmt::Display,
{
    if s.eq_ignore_ascii_case("auto") {
        Ok(Setting::Auto)
    } else {
        s.parse::<T>().map(Setting::Fixed).map_err(|e| e.to_string())
    }
}

fn percentiles(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string())).collect()
}

#[derive(Args, Default)]
struct ParamArgs {
    /// Parameter file (JSON); flags override its fields.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Attention range `lo:hi`; repeat for several disjoint ranges.
    #[arg(long, value_name = "LO:HI")]
    aoi: Vec<AttentionRange>,
    /// Keep only the top fraction of event attention (e.g. 0.1).
    #[arg(long, conflicts_with = "aoi")]
    aoi_top: Option<f64>,
    #[arg(long, value_parser = serde_str::<AttentionMode>)]
    attention_mode: Option<AttentionMode>,
    /// event, feature or auto
    #[arg(long, value_parser = serde_str::<AttentionLevel>)]
    attention_level: Option<AttentionLevel>,
    #[arg(long)]
    sample_fraction: Option<f64>,
    /// `auto` or a removed share in [0, 1].
    #[arg(long, value_parser = setting::<f64>)]
    noise_level: Option<Setting<f64>>,
    /// `auto` or a positive count.
    #[arg(long, value_parser = setting::<usize>)]
    cluster_count: Option<Setting<usize>>,
    #[arg(long)]
    n_ref: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// Comma-separated percentiles, e.g. `10,30,50,70,90`.
    #[arg(long, value_parser = percentiles)]
    quantiles: Option<Vec<f64>>,
    #[arg(long)]
    smoothing_window: Option<usize>,
    /// convex or absolute
    #[arg(long, value_parser = serde_str::<ElbowRule>)]
    elbow_rule: Option<ElbowRule>,
    /// series_length or shared_support
    #[arg(long, value_parser = serde_str::<DistanceNorm>)]
    distance_norm: Option<DistanceNorm>,
    /// mean or sum
    #[arg(long, value_parser = serde_str::<ReferenceAggregate>)]
    reference_aggregate: Option<ReferenceAggregate>,
    /// one_standard_error or argmax
    #[arg(long, value_parser = serde_str::<KSelection>)]
    k_selection: Option<KSelection>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ParamArgs {
    fn resolve(&self, attention: &AttentionTensor) -> Result<AnalysisParams, Error> {
        let mut p = match &self.params {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                serde_json::from_str(&text)?
            }
            None => AnalysisParams::default(),
        };
        if !self.aoi.is_empty() {
            p.aoi = self.aoi.clone();
        }
        if let Some(f) = self.aoi_top {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidParams(format!("aoi-top {f} not in (0, 1]")));
            }
            p.aoi = vec![top_fraction_range(attention, f)];
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag.clone() { p.$field = v; }
            )*};
        }
        set!(attention_mode => attention_mode, attention_level => attention_level, sample_fraction => sample_fraction,
             noise_level => noise_level, cluster_count => cluster_count, n_ref => n_ref, k_max => k_max,
             bins => bin_count, quantiles => quantile_edges, smoothing_window => smoothing_window,
             elbow_rule => elbow_rule, distance_norm => distance_norm, reference_aggregate => reference_aggregate,
             k_selection => k_selection, seed => seed);
        p.validate()?;
        Ok(p)
    }
}

/// Loads without the invariant check so `validate` can report every violation.
fn load_unchecked(manifest: &std::path::Path) -> Result<Option<(SequenceDataset, AttentionTensor)>, Error> {
    match load_bundle(manifest) {
        Ok(b) => Ok(Some(b)),
        Err(Error::InvalidDataset(v)) => {
            for x in &v {
                println!("{x}");
            }
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Validate { manifest } => {
            DatasetManifest::read(&manifest)?;
            match load_unchecked(&manifest)? {
                Some((d, a)) => {
                    debug_assert!(validate_dataset(&d, &a).is_valid());
                    println!(
                        "ok: {} instances, T={}, F={}, L={}",
                        d.instances.len(),
                        d.time_steps,
                        d.feature_count(),
                        d.class_count
                    );
                    Ok(ExitCode::SUCCESS)
                }
                None => Ok(ExitCode::from(1)),
            }
        }
        Command::Rank { manifest, params, json } => {
            let (d, a) = load_bundle(&manifest)?;
            let p = params.resolve(&a)?;
            let pipeline = Pipeline::new(d, a);
            let ranking = pipeline.rank(&p)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&ranking)?);
            } else {
                println!("{:>4}  {:<24} {:>14} {:>12} {:>12} {:>8}", "rank", "feature", "score", "C", "V", "events");
                for (r, s) in ranking.iter().enumerate() {
                    let name = &pipeline.dataset.features[s.feature_id].name;
                    println!(
                        "{:>4}  {:<24} {:>14.6} {:>12.6} {:>12.6} {:>8}",
                        r + 1,
                        name,
                        s.score,
                        s.c_term,
                        s.v_term,
                        s.n_contributing
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Summarize { manifest, out, params, ci } => {
            if ci && params.seed.is_none() {
                return Err(Error::InvalidParams("--seed is required in CI mode".into()));
            }
            let (d, a) = load_bundle(&manifest)?;
            let p = params.resolve(&a)?;
            let pipeline = Pipeline::new(d, a);
            let (_, result) = pipeline.run(&Cache::default(), &p, &CancelToken::new(), &|stage| {
                tracing::info!(stage = stage.name(), "running");
            })?;
            export_summary(&result, &out)?;
            eprintln!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { addr } => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io { path: PathBuf::new(), source: e })?;
            rt.block_on(seqlens::service::serve(addr)).map_err(|e| Error::Io { path: PathBuf::new(), source: e })?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
