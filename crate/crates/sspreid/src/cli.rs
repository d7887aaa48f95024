//! Command-line surface. [`run`] executes a parsed command in-process; the
//! binary only maps its result to an exit status.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use sspreid_core::fusion::ssp_combine_vectors;
use sspreid_core::model::{
    synth_dataset, train_stream, BackboneConfig, Dataset, LossMode, Split, StreamKind, StreamModel,
    SynthConfig, TrainConfig,
};
use sspreid_core::retrieval::EntryLabel;
use sspreid_core::{
    distance_matrix, evaluate_distances, rerank, DistanceMatrix, EvalReport, GalleryEntry,
    Protocol, RerankConfig,
};

use crate::csvfmt;
use crate::error::{Error, Result};
use crate::gallery::GalleryFile;
use crate::manifest::{self, RunManifest};
use crate::{checkpoint, dataset, fsutil};

#[derive(Debug, Parser)]
#[command(
    name = "sspreid",
    version,
    about = "Saliency and semantic-parsing guided person re-identification"
)]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to one per core). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Train one toy stream and write its checkpoint and loss curve.
    TrainToy(TrainArgs),
    /// Embed a dataset split with trained streams into a feature file.
    Fuse(FuseArgs),
    /// Score query features against gallery features.
    Eval(EvalArgs),
    /// Write the re-ranked query x gallery distance matrix as CSV.
    Rerank(RerankArgs),
    /// Print a feature file as text.
    Dump(DumpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamArg {
    S,
    Sp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FuseStream {
    S,
    Sp,
    Ssp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossArg {
    #[value(name = "cross_only")]
    CrossOnly,
    #[value(name = "cross_plus_triplet")]
    CrossPlusTriplet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolArg {
    Market,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Query,
    Gallery,
    All,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub ids: usize,
    #[arg(long, default_value_t = 8)]
    pub per_id: usize,
    #[arg(long, default_value_t = 2)]
    pub cameras: usize,
    #[arg(long, default_value_t = 254)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub stream: StreamArg,
    /// Checkpoint output path.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Loss-curve CSV path (defaults to `<checkpoint>.loss.csv`).
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, default_value_t = 180)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 60)]
    pub lr_decay_every: usize,
    /// Identities per batch.
    #[arg(long, default_value_t = 8)]
    pub batch_p: usize,
    /// Images per identity in a batch.
    #[arg(long, default_value_t = 4)]
    pub batch_n: usize,
    /// Label-smoothing weight.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.3)]
    pub margin: f64,
    #[arg(long, value_enum, default_value = "cross_plus_triplet")]
    pub loss: LossArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FuseArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub stream: FuseStream,
    #[arg(long)]
    pub s_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub sp_checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    /// Feature file output path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RerankFlags {
    #[arg(long, default_value_t = 20)]
    pub k1: usize,
    #[arg(long, default_value_t = 6)]
    pub k2: usize,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
}

impl RerankFlags {
    fn config(&self) -> RerankConfig {
        RerankConfig {
            k1: self.k1,
            k2: self.k2,
            lambda: self.lambda,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub gallery: PathBuf,
    #[arg(long, value_enum, default_value = "market")]
    pub protocol: ProtocolArg,
    #[arg(long, default_value_t = sspreid_core::retrieval::DEFAULT_MAX_RANK)]
    pub max_rank: usize,
    /// Re-rank distances before scoring.
    #[arg(long)]
    pub rerank: bool,
    #[command(flatten)]
    pub rerank_flags: RerankFlags,
    /// Also write the report here (its manifest goes next to it).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RerankArgs {
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub gallery: PathBuf,
    #[command(flatten)]
    pub rerank_flags: RerankFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DumpArgs {
    #[arg(long)]
    pub input: PathBuf,
}

/// Runs a command. Reports and text exports go to `out`, warnings and
/// stdout-only manifests to `err`.
pub fn run(cli: &Cli, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Argument(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::TrainToy(a) => train_toy(a, cli.seed),
        Command::Fuse(a) => fuse(a, cli.seed),
        Command::Eval(a) => eval(a, cli.seed, out, err),
        Command::Rerank(a) => rerank_cmd(a, cli.seed, err),
        Command::Dump(a) => {
            let g = GalleryFile::load(&a.input)?;
            write_all(out, g.to_text().as_bytes())
        }
    })
}

fn write_all(w: &mut (dyn Write + Send), bytes: &[u8]) -> Result<()> {
    w.write_all(bytes).map_err(|e| Error::io("<stdout>", e))
}

fn config_json<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialise")
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let mut cfg = SynthConfig::new(a.ids, a.per_id, seed).with_image(a.height, a.width);
    cfg.num_cameras = a.cameras;
    let data = synth_dataset(&cfg)?;
    dataset::write(&a.out, &data)?;
    RunManifest::new("synth", seed, config_json(a)).save(&a.out.join("manifest.json"))
}

fn train_toy(a: &TrainArgs, seed: u64) -> Result<()> {
    let data = dataset::load(&a.data)?;
    let Some(first) = data.samples.iter().find(|s| s.split == Split::Train) else {
        return Err(Error::Argument("dataset has no training images".into()));
    };
    let (h, w, _) = first.image.shape();
    let kind = match a.stream {
        StreamArg::S => StreamKind::Saliency,
        StreamArg::Sp => StreamKind::Parsing,
    };
    let cfg = TrainConfig {
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        lr_decay_factor: a.lr_decay,
        lr_decay_every: a.lr_decay_every,
        epochs: a.epochs,
        batch_people: a.batch_p,
        images_per_person: a.batch_n,
        epsilon: a.epsilon,
        margin: a.margin,
        loss_mode: match a.loss {
            LossArg::CrossOnly => LossMode::CrossOnly,
            LossArg::CrossPlusTriplet => LossMode::CrossPlusTriplet,
        },
        seed,
    };
    cfg.validate()?;
    let bcfg = BackboneConfig::default().with_input(h, w);
    let mut model = StreamModel::init(kind, &bcfg, data.train_ids().len(), kind.init_seed(seed))?;
    let curve = train_stream(&mut model, &data, &cfg)?;

    let curve_path = a.curve.clone().unwrap_or_else(|| {
        let mut n = a.checkpoint.file_name().unwrap_or_default().to_os_string();
        n.push(".loss.csv");
        a.checkpoint.with_file_name(n)
    });
    let mut m = RunManifest::new("train-toy", seed, config_json(a));
    m.add_input(&a.data)?;
    checkpoint::save(&a.checkpoint, &model)?;
    fsutil::write_atomic(
        &curve_path,
        csvfmt::encode_curve(&curve, cfg.loss_mode).as_bytes(),
    )?;
    m.save(&manifest::path_for(&a.checkpoint))
}

fn load_stream(path: Option<&Path>, kind: StreamKind, flag: &str) -> Result<StreamModel<f32>> {
    let path =
        path.ok_or_else(|| Error::Argument(format!("--{flag} is required for this stream")))?;
    let model = checkpoint::load(path)?;
    if model.kind != kind {
        return Err(Error::Argument(format!(
            "{} holds a {:?} stream, expected {:?}",
            path.display(),
            model.kind,
            kind
        )));
    }
    Ok(model)
}

/// Embeds `data`'s samples from `split` with the selected streams.
pub fn fuse_dataset(
    data: &Dataset,
    split: SplitArg,
    s: Option<&StreamModel<f32>>,
    sp: Option<&StreamModel<f32>>,
) -> Result<GalleryFile> {
    let samples: Vec<_> = data
        .samples
        .iter()
        .filter(|x| match split {
            SplitArg::All => true,
            SplitArg::Train => x.split == Split::Train,
            SplitArg::Query => x.split == Split::Query,
            SplitArg::Gallery => x.split == Split::Gallery,
        })
        .collect();
    let entries = samples
        .par_iter()
        .map(|x| {
            let feature = match (s, sp) {
                (Some(s), None) => s.embed(&x.image, x.guides())?,
                (None, Some(sp)) => sp.embed(&x.image, x.guides())?,
                (Some(s), Some(sp)) => ssp_combine_vectors(
                    &s.embed(&x.image, x.guides())?,
                    &sp.embed(&x.image, x.guides())?,
                ),
                (None, None) => return Err(Error::Argument("no stream selected".into())),
            };
            Ok(GalleryEntry::new(x.person_id, x.camera_id, feature))
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = match (s, sp) {
        (Some(s), None) => s.embedding_dim(),
        (None, Some(sp)) => sp.embedding_dim(),
        (Some(s), Some(sp)) => s.embedding_dim() + sp.embedding_dim(),
        (None, None) => 0,
    };
    GalleryFile::new(dim, entries).map_err(|e| Error::Argument(e.to_string()))
}

fn fuse(a: &FuseArgs, seed: u64) -> Result<()> {
    let (s, sp) = match a.stream {
        FuseStream::S => (
            Some(load_stream(
                a.s_checkpoint.as_deref(),
                StreamKind::Saliency,
                "s-checkpoint",
            )?),
            None,
        ),
        FuseStream::Sp => (
            None,
            Some(load_stream(
                a.sp_checkpoint.as_deref(),
                StreamKind::Parsing,
                "sp-checkpoint",
            )?),
        ),
        FuseStream::Ssp => (
            Some(load_stream(
                a.s_checkpoint.as_deref(),
                StreamKind::Saliency,
                "s-checkpoint",
            )?),
            Some(load_stream(
                a.sp_checkpoint.as_deref(),
                StreamKind::Parsing,
                "sp-checkpoint",
            )?),
        ),
    };
    let data = dataset::load(&a.data)?;
    let file = fuse_dataset(&data, a.split, s.as_ref(), sp.as_ref())?;

    let mut m = RunManifest::new("fuse", seed, config_json(a));
    m.add_input(&a.data)?;
    for p in [&a.s_checkpoint, &a.sp_checkpoint].into_iter().flatten() {
        m.add_input(p)?;
    }
    file.save(&a.out)?;
    m.save(&manifest::path_for(&a.out))
}

fn load_pair(query: &Path, gallery: &Path) -> Result<(GalleryFile, GalleryFile)> {
    let q = GalleryFile::load(query)?;
    let g = GalleryFile::load(gallery)?;
    if q.is_empty() {
        return Err(Error::Argument(format!(
            "{}: query set is empty",
            query.display()
        )));
    }
    if g.is_empty() {
        return Err(Error::Argument(format!(
            "{}: gallery is empty",
            gallery.display()
        )));
    }
    if q.dim != g.dim {
        return Err(Error::Argument(format!(
            "query features have {} dims but gallery features have {}",
            q.dim, g.dim
        )));
    }
    Ok((q, g))
}

fn features(f: &GalleryFile) -> Vec<&[f32]> {
    f.entries.iter().map(|e| e.feature.as_slice()).collect()
}

fn labels(f: &GalleryFile) -> Vec<EntryLabel> {
    f.entries.iter().map(GalleryEntry::label).collect()
}

fn reranked(
    q: &GalleryFile,
    g: &GalleryFile,
    flags: &RerankFlags,
    err: &mut (dyn Write + Send),
) -> Result<DistanceMatrix> {
    let r = rerank::<f32, &[f32]>(&features(q), &features(g), &flags.config())?;
    for w in &r.warnings {
        writeln!(err, "warning: {w}").map_err(|e| Error::io("<stderr>", e))?;
    }
    Ok(r.distances)
}

/// Report text with fixed keys: `map`, `rank1`, `cmc[r]` for every rank, then
/// the query counts.
pub fn format_report(r: &EvalReport) -> String {
    let mut s = format!("map: {}\nrank1: {}\n", r.map, r.rank1());
    for (i, v) in r.cmc.iter().enumerate() {
        writeln!(s, "cmc[{}]: {v}", i + 1).unwrap();
    }
    writeln!(s, "valid_queries: {}", r.valid_queries).unwrap();
    writeln!(s, "skipped_queries: {}", r.skipped_queries).unwrap();
    s
}

fn eval(
    a: &EvalArgs,
    seed: u64,
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> Result<()> {
    let (q, g) = load_pair(&a.query, &a.gallery)?;
    let dist = if a.rerank {
        reranked(&q, &g, &a.rerank_flags, err)?
    } else {
        distance_matrix::<f32, &[f32]>(&features(&q), &features(&g))?
    };
    let protocol = match a.protocol {
        ProtocolArg::Market => Protocol::Market,
        ProtocolArg::None => Protocol::None,
    };
    let report = evaluate_distances(&dist, &labels(&q), &labels(&g), protocol, a.max_rank)?;
    let text = format_report(&report);

    let mut m = RunManifest::new("eval", seed, config_json(a));
    m.add_input(&a.query)?;
    m.add_input(&a.gallery)?;
    match &a.out {
        Some(path) => {
            fsutil::write_atomic(path, text.as_bytes())?;
            m.save(&manifest::path_for(path))?;
        }
        None => write_all(err, m.to_json().as_bytes())?,
    }
    write_all(out, text.as_bytes())
}

fn rerank_cmd(a: &RerankArgs, seed: u64, err: &mut (dyn Write + Send)) -> Result<()> {
    let (q, g) = load_pair(&a.query, &a.gallery)?;
    let dist = reranked(&q, &g, &a.rerank_flags, err)?;
    let mut m = RunManifest::new("rerank", seed, config_json(a));
    m.add_input(&a.query)?;
    m.add_input(&a.gallery)?;
    fsutil::write_atomic(&a.out, csvfmt::encode_matrix(&dist).as_bytes())?;
    m.save(&manifest::path_for(&a.out))
}
