use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use viewpoint::corpus::{load_corpus, merge_galleries, read_galleries, search_mentions, write_galleries, YearRange};
use viewpoint::imagefeat::{
    extract_directory, import_embeddings, read_local_descriptors, write_embeddings, write_local_descriptors,
    DetectorConfig, DEFAULT_TOP,
};
use viewpoint::index::{
    default_queries, evaluate_retrieval, evaluate_retrieval_pca, fit_on_index, project_points, read_labels,
    write_projection, FeatureIndex, DEFAULT_RADIUS,
};
use viewpoint::pipeline::{export_report, report_json, serve, Pipeline, PipelineConfig};
use viewpoint::sentiment::{read_fixture, read_training_tsv, score, train_from_texts, Head, SentimentModel, TrainConfig};
use viewpoint::vlad::{aggregate_images, train_vocabulary_with, KMeansConfig, Vocabulary, DEFAULT_K};

#[derive(Parser)]
#[command(name = "viewpoint", version, about = "Image-driven post retrieval and sentiment analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a post corpus, filter by year and merge gallery uploads.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "2016:2019")]
        years: YearRange,
        #[arg(long)]
        out: PathBuf,
    },
    /// Count gallery posts mentioning any of the terms.
    Mentions {
        #[arg(long)]
        galleries: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "elbphilharmonie,elphi,philharmonie")]
        terms: Vec<String>,
    },
    /// Detect and describe local features in every .pgm image of a directory.
    Extract {
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP)]
        top: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate an externally computed embedding file.
    ImportEmbeddings {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Train a visual vocabulary on local descriptors.
    Vocab {
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        restarts: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate local descriptors into one VLAD vector per image.
    Aggregate {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load features into an index and print its size.
    Index(FeaturesArg),
    /// Radius or k-nearest-neighbour search around an indexed image.
    Query {
        #[command(flatten)]
        features: FeaturesArg,
        #[arg(long)]
        image_id: String,
        #[arg(long, conflicts_with = "top")]
        radius: Option<f64>,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Top-n retrieval accuracy against class labels.
    Eval {
        #[command(flatten)]
        features: FeaturesArg,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "3,5")]
        n: Vec<usize>,
        /// Evaluate in this many principal components instead.
        #[arg(long)]
        pca: Option<usize>,
        /// Class left out of the query set.
        #[arg(long, default_value = "random")]
        skip_class: String,
    },
    /// Export a PCA projection of every indexed vector as JSON lines.
    Project {
        #[command(flatten)]
        features: FeaturesArg,
        #[arg(long, default_value_t = 2)]
        pca: usize,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a sentiment model from a labelled TSV file.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        head: Head,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        hyper: HyperArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify one text.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        aspect: Option<String>,
    },
    /// Accuracy and macro-F1 of a model on a labelled fixture.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        fixture: PathBuf,
    },
    /// Run the full study for one query image and write a JSON report.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        query_image: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Args)]
struct FeaturesArg {
    #[arg(long)]
    features: PathBuf,
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long, default_value_t = 25)]
    dim: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_index(path: &Path) -> Result<FeatureIndex> {
    FeatureIndex::load(path).with_context(|| format!("loading features from {}", path.display()))
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest { corpus, years, out } => {
            let posts = load_corpus(&corpus, years)?;
            let galleries = merge_galleries(&posts);
            write_galleries(&out, &galleries)?;
            print_json(&serde_json::json!({ "posts": posts.len(), "galleries": galleries.len() }))?;
        }
        Command::Mentions { galleries, terms } => {
            let galleries = read_galleries(&galleries)?;
            let report = search_mentions(&galleries, &terms)?;
            print_json(&serde_json::json!({
                "mention": report,
                "text_only_missed": report.text_only_missed(),
                "text_only_missed_fraction": report.text_only_missed_fraction(),
            }))?;
        }
        Command::Extract { images, top, out } => {
            let extracted = extract_directory(&images, &DetectorConfig::default(), top)?;
            write_local_descriptors(&out, &extracted)?;
            let total: usize = extracted.iter().map(|i| i.descriptors.len()).sum();
            print_json(&serde_json::json!({ "images": extracted.len(), "descriptors": total }))?;
        }
        Command::ImportEmbeddings { input } => {
            let records = import_embeddings(&input)?;
            let dim = records.first().map_or(0, |r| r.vector.len());
            print_json(&serde_json::json!({ "records": records.len(), "dim": dim }))?;
        }
        Command::Vocab { descriptors, k, seed, restarts, out } => {
            let images = read_local_descriptors(&descriptors)?;
            let points: Vec<Vec<f64>> = images
                .iter()
                .flat_map(|i| i.descriptors.iter().map(|d| d.vector.iter().map(|&x| f64::from(x)).collect()))
                .collect();
            let config = KMeansConfig { restarts, ..KMeansConfig::new(k, seed) };
            let vocab = train_vocabulary_with(&points, &config)?;
            vocab.save(&out)?;
            print_json(&serde_json::json!({ "k": vocab.k(), "dim": vocab.dim(), "descriptors": points.len() }))?;
        }
        Command::Aggregate { vocab, descriptors, out } => {
            let vocab = Vocabulary::load(&vocab)?;
            let images = read_local_descriptors(&descriptors)?;
            let features = aggregate_images(&images, &vocab)?;
            let records: Vec<_> = features.iter().map(|f| f.to_record()).collect();
            write_embeddings(&out, &records)?;
            print_json(&serde_json::json!({ "images": records.len(), "dim": vocab.k() * vocab.dim() }))?;
        }
        Command::Index(f) => {
            let index = load_index(&f.features)?;
            print_json(&serde_json::json!({ "entries": index.len(), "dim": index.dim() }))?;
        }
        Command::Query { features, image_id, radius, top } => {
            let index = load_index(&features.features)?;
            let results = match top {
                Some(n) => index.query_knn_by_id(&image_id, n)?,
                None => index.query_radius_by_id(&image_id, radius.unwrap_or(DEFAULT_RADIUS))?,
            };
            print_json(&results)?;
        }
        Command::Eval { features, labels, n, pca, skip_class } => {
            let index = load_index(&features.features)?;
            let labels = read_labels(&labels)?;
            let queries = default_queries(&labels, &skip_class);
            let report = match pca {
                Some(dims) => evaluate_retrieval_pca(&index, &labels, &queries, &n, dims)?.0,
                None => evaluate_retrieval(&index, &labels, &queries, &n)?,
            };
            print_json(&report)?;
        }
        Command::Project { features, pca, labels, out } => {
            if pca != 2 {
                bail!("the projection export is two-dimensional; use --pca 2");
            }
            let index = load_index(&features.features)?;
            let labels = match labels {
                Some(p) => read_labels(&p)?,
                None => HashMap::new(),
            };
            let model = fit_on_index(&index, pca)?;
            let points = project_points(&index, &model, &labels)?;
            write_projection(&out, &points)?;
            print_json(&serde_json::json!({ "points": points.len(), "explained_variance": model.explained_variance }))?;
        }
        Command::Train { data, head, seed, hyper, out } => {
            let rows = read_training_tsv(&data)?;
            let config = TrainConfig {
                dim: hyper.dim,
                learning_rate: hyper.lr,
                batch_size: hyper.batch,
                epochs: hyper.epochs,
                min_count: hyper.min_count,
                ..TrainConfig::default()
            };
            let outcome = train_from_texts(&rows, head, &config, seed)?;
            outcome.model.save(&out)?;
            print_json(&serde_json::json!({
                "examples": rows.len(),
                "vocabulary": outcome.model.vocab.len(),
                "initial_loss": outcome.initial_loss,
                "final_loss": outcome.final_loss,
            }))?;
        }
        Command::Predict { model, text, aspect } => {
            let model = SentimentModel::load(&model)?;
            print_json(&model.predict(&text, aspect.as_deref())?)?;
        }
        Command::Score { model, fixture } => {
            let model = SentimentModel::load(&model)?;
            let posts = read_fixture(&fixture)?;
            print_json(&score(&model, &posts)?)?;
        }
        Command::Report { config, query_image, out } => {
            let config = PipelineConfig::load(&config)?;
            let report = Pipeline::load(config)?.run(&query_image)?;
            match out {
                Some(path) => export_report(&report, &path)?,
                None => print!("{}", report_json(&report)),
            }
        }
        Command::Serve { config, addr } => {
            let config = PipelineConfig::load(&config)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve(config, &addr))?;
        }
    }
    Ok(())
}
