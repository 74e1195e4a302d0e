//! `zsl`: train encoders from scratch, evaluate zero-shot transfer, probe
//! locality, mutual information and compositionality, and tabulate results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Axis;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use zsl_core::datasets::{save_zsl_dataset, DatasetBundle};
use zsl_core::encoders::{check_zfs, load_checkpoint, save_checkpoint, Encoder, Family, FrozenEncoder};
use zsl_core::harness::{
    bar_figure, compositionality, encode_splits, load_dataset, local_metric, local_variants, locality,
    locality_pairs, local_table, model_name, parts_table, random_encoder, relative_improvements, scatter_figure,
    split_part_maps, train_variant, tre_table, zsl_global, zsl_table, EncodedSplits, ExperimentConfig,
    ExperimentGrid, RecordBuilder, ResultsStore, RunRecord, METRIC_PARTS_F1, METRIC_ZSL, SYNTHETIC,
};
use zsl_core::mi::{
    global_local_pairs, parts_ratio, pmi_heatmap, ratio_correlation_study, render_heatmap, train_mine,
    StatisticsNetwork, StudyInput,
};
use zsl_core::pretraining::{LocalLoss, ObjectiveConfig};
use zsl_core::probes::any_part;

#[derive(Parser)]
#[command(name = "zsl", version, about = "Zero-shot learning from scratch")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; the desk preset when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Objective label such as `fc`, `cmdim-p0.5` or `bvae-b4`.
    #[arg(long, global = true)]
    objective: Option<String>,
    #[arg(long = "local-loss", global = true)]
    local_loss: Option<LocalLoss>,
    #[arg(long, global = true)]
    encoder: Option<Family>,
    /// Results store, checkpoints and artifacts go here.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Refuse checkpoints not trained from a seed on this dataset (default).
    #[arg(long = "zfs-strict", global = true, overrides_with = "no_zfs_strict")]
    zfs_strict: bool,
    #[arg(long = "no-zfs-strict", global = true, overrides_with = "zfs_strict")]
    no_zfs_strict: bool,
    /// Upper bound on the steps of every optimisation loop.
    #[arg(long = "device-budget", global = true)]
    device_budget: Option<usize>,
}

/// Where the frozen encoder of an analysis command comes from.
#[derive(Args)]
struct Source {
    /// Evaluate this checkpoint instead of training one.
    #[arg(long, conflicts_with = "random_init")]
    checkpoint: Option<PathBuf>,
    /// Evaluate the seeded, untrained encoder.
    #[arg(long)]
    random_init: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset in the on-disk layout.
    GenSynthetic,
    /// Train an encoder and save its checkpoint.
    Train,
    /// Zero-shot top-1 with a prototypical network on frozen features.
    EvalZsl {
        #[command(flatten)]
        source: Source,
        /// Also evaluate averaged local features before and after pooling.
        #[arg(long)]
        local: bool,
    },
    /// Parts-F1 of linear probes on the local feature grid.
    ProbeParts {
        #[command(flatten)]
        source: Source,
    },
    /// Train a MINE statistics network on global/local feature pairs.
    MiTrain {
        #[command(flatten)]
        source: Source,
    },
    /// Render PMI heatmaps for random cross-class test pairs.
    MiViz {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 4)]
        pairs: usize,
    },
    /// Correlate the heatmap parts ratio with attribute similarity and SSIM.
    MiStudy {
        #[command(flatten)]
        source: Source,
        /// Pairs to sample; the configured count when absent.
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// TRE ratio of the global features against random attribute matrices.
    Tre {
        #[command(flatten)]
        source: Source,
    },
    /// Run every cell of an experiment grid.
    Grid {
        #[arg(long)]
        spec: PathBuf,
        /// Print the cells without running them.
        #[arg(long)]
        dry_run: bool,
        /// Also measure parts-F1 when the dataset has part annotations.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        parts: bool,
        #[arg(long)]
        tre: bool,
        #[arg(long)]
        local: bool,
    },
    /// Tables and figures from the results store.
    Report {
        #[arg(long, value_enum)]
        table: Option<Table>,
        #[arg(long, value_enum)]
        figure: Option<Figure>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    Zsl,
    Parts,
    Local,
    Tre,
}

#[derive(Clone, Copy, ValueEnum)]
enum Figure {
    /// Parts-F1 against ZSL top-1.
    Parts,
    /// Relative ZSL improvement of the local losses.
    Improvement,
    /// Local-feature ZSL under both aggregations.
    Aggregation,
    /// Local-feature ZSL before and after the last pooling layer.
    Pool,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::desk(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(o) = &self.objective {
            let local = cfg.train.objective.local_loss;
            cfg.train.objective = ObjectiveConfig::from_label(o)?;
            if !o.contains('+') {
                cfg.train.objective.local_loss = local;
            }
        }
        if let Some(l) = self.local_loss {
            cfg.train.objective.local_loss = l;
        }
        if let Some(e) = self.encoder {
            cfg.encoder.family = e;
        }
        if self.zfs_strict {
            cfg.zfs_strict = true;
        }
        if self.no_zfs_strict {
            cfg.zfs_strict = false;
        }
        if self.device_budget.is_some() {
            cfg.device_budget = self.device_budget;
        }
        cfg.train.objective.validate()?;
        Ok(cfg)
    }

    fn store(&self) -> ResultsStore {
        ResultsStore::new(self.out.join("results.tsv"))
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write(p: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(p, body).with_context(|| format!("writing {}", p.display()))
}

fn stem(cfg: &ExperimentConfig, label: &str) -> String {
    format!(
        "{}_{}_{}_s{}",
        cfg.dataset,
        cfg.encoder.family.as_str(),
        label.replace('+', "_"),
        cfg.seed
    )
}

/// Trains the configured objective, saving checkpoint and loss log.
fn train_and_save(cfg: &ExperimentConfig, data: &DatasetBundle, out: &Path) -> Result<(Encoder, PathBuf)> {
    let objective = &cfg.train.objective;
    log::info!("training {} on {} for {} steps", objective.label(), data.name, cfg.resolved().train.steps);
    let trained = train_variant(cfg, objective, data)?;
    let dir = out.join("checkpoints");
    create_dir(&dir)?;
    let name = stem(cfg, &objective.label());
    let ckpt = dir.join(format!("{name}.safetensors"));
    save_checkpoint(&ckpt, &trained.encoder, &trained.provenance)?;
    write(&dir.join(format!("{name}_loss.tsv")), trained.log.to_tsv())?;
    Ok((trained.encoder, ckpt))
}

/// A frozen encoder with its record identity and encoded splits.
struct Prepared {
    cfg: ExperimentConfig,
    data: DatasetBundle,
    encoder: FrozenEncoder,
    records: RecordBuilder,
    splits: EncodedSplits,
    dir: PathBuf,
}

fn prepare(common: &Common, source: &Source) -> Result<Prepared> {
    let cfg = common.config()?;
    let data = load_dataset(&cfg)?;
    let objective = cfg.train.objective.clone();
    let (encoder, records) = if let Some(path) = &source.checkpoint {
        let (encoder, meta) = load_checkpoint(path)?;
        if cfg.zfs_strict {
            check_zfs(&meta, &data.name)?;
        }
        let label = meta
            .provenance
            .settings
            .get("objective")
            .cloned()
            .unwrap_or_else(|| meta.provenance.objective.clone());
        let records = match ObjectiveConfig::from_label(&label) {
            Ok(o) => RecordBuilder::new(&cfg, &o)?,
            Err(_) => RecordBuilder::new(&cfg, &objective)?.relabel(&label),
        };
        (encoder, records)
    } else if source.random_init {
        let records = RecordBuilder::new(&cfg, &ObjectiveConfig::default())?.relabel("random");
        (random_encoder(&cfg)?, records)
    } else {
        let records = RecordBuilder::new(&cfg, &objective)?;
        (train_and_save(&cfg, &data, &common.out)?.0, records)
    };
    let encoder = encoder.freeze()?;
    let splits = encode_splits(&encoder, &data, &cfg.encoder.preprocess())?;
    let dir = common.out.join("runs").join(records.record("", 0.0).run_id);
    create_dir(&dir)?;
    Ok(Prepared {
        cfg,
        data,
        encoder,
        records,
        splits,
        dir,
    })
}

fn append(common: &Common, records: &[RunRecord]) -> Result<()> {
    for r in records {
        println!("{}\t{}\t{}\t{:.6}", r.objective, r.local_loss, r.metric, r.value);
    }
    common.store().append(records)?;
    Ok(())
}

fn mine_on_train(p: &Prepared) -> Result<(StatisticsNetwork, Vec<f64>)> {
    let (g, l) = global_local_pairs(&p.splits.train)?;
    Ok(train_mine(&g, &l, &p.cfg.resolved().mine)?)
}

/// Random cross-class `(source, target)` rows of the test split.
fn cross_class_pairs(labels: &[usize], n: usize, seed: u64) -> Vec<(usize, usize)> {
    if labels.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..n * 100 {
        if out.len() == n {
            break;
        }
        let (a, b) = (rng.random_range(0..labels.len()), rng.random_range(0..labels.len()));
        if labels[a] != labels[b] {
            out.push((a, b));
        }
    }
    out
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::GenSynthetic => {
            let cfg = common.config()?;
            if cfg.dataset != SYNTHETIC {
                bail!("gen-synthetic writes the `{SYNTHETIC}` dataset, not `{}`", cfg.dataset);
            }
            let data = load_dataset(&cfg)?;
            create_dir(&common.out)?;
            let dir = save_zsl_dataset(&data, &common.out)?;
            println!("{}", dir.display());
        }
        Command::Train => {
            let cfg = common.config()?;
            let data = load_dataset(&cfg)?;
            let records = RecordBuilder::new(&cfg, &cfg.train.objective)?;
            let started = std::time::Instant::now();
            let trained = train_variant(&cfg, &cfg.train.objective, &data)?;
            let dir = common.out.join("checkpoints");
            create_dir(&dir)?;
            let name = stem(&cfg, &cfg.train.objective.label());
            let ckpt = dir.join(format!("{name}.safetensors"));
            save_checkpoint(&ckpt, &trained.encoder, &trained.provenance)?;
            write(&dir.join(format!("{name}_loss.tsv")), trained.log.to_tsv())?;
            let mut last: BTreeMap<String, f64> = BTreeMap::new();
            for (_, n, v) in &trained.log.entries {
                last.insert(n.clone(), *v);
            }
            let mut out: Vec<RunRecord> = last.iter().map(|(n, v)| records.record(&format!("train_{n}"), *v)).collect();
            out.push(records.record("train_seconds", started.elapsed().as_secs_f64()));
            append(common, &out)?;
            println!("{}", ckpt.display());
        }
        Command::EvalZsl { source, local } => {
            let p = prepare(common, &source)?;
            let r = zsl_global(&p.splits, &p.data, &p.cfg)?;
            write(&p.dir.join("zsl_per_class.tsv"), r.per_class_tsv())?;
            let mut out = vec![p.records.zsl(&r)];
            if local {
                for (metric, v) in local_variants(&p.encoder, &p.splits, &p.data, &p.cfg)? {
                    out.push(p.records.record(&metric, v));
                }
            }
            p.encoder.verify_unchanged()?;
            append(common, &out)?;
        }
        Command::ProbeParts { source } => {
            let p = prepare(common, &source)?;
            let f1 = locality(&p.encoder, &p.splits, &p.data, &p.cfg)?;
            write(&p.dir.join("parts_f1.tsv"), f1.to_tsv())?;
            if !f1.empty_parts.is_empty() {
                log::warn!("parts without test positives: {:?}", f1.empty_parts);
            }
            append(common, &[p.records.parts(&f1)])?;
        }
        Command::MiTrain { source } => {
            let p = prepare(common, &source)?;
            let (net, history) = mine_on_train(&p)?;
            let body: String = history.iter().enumerate().map(|(i, v)| format!("{i}\t{v}\n")).collect();
            write(&p.dir.join("mine_history.tsv"), format!("step\tbound\n{body}"))?;
            let (g, l) = global_local_pairs(&p.splits.test)?;
            let mut rng = ChaCha8Rng::seed_from_u64(p.cfg.seed);
            let bound = net.bound(&g, &l, &mut rng)?;
            append(common, &[p.records.record("mi_bound_test", bound)])?;
        }
        Command::MiViz { source, pairs } => {
            let p = prepare(common, &source)?;
            let (net, _) = mine_on_train(&p)?;
            let union = match split_part_maps(&p.encoder, &p.splits, &p.data, &p.cfg) {
                Ok((_, test)) => Some(any_part(&test)),
                Err(_) => None,
            };
            let test = &p.splits.test;
            let mut out = Vec::new();
            for (a, b) in cross_class_pairs(&p.splits.test_labels, pairs, p.cfg.seed) {
                let map = pmi_heatmap(&net, test.global.row(a), test.local.index_axis(Axis(0), b), a, b)?;
                let image = &p.data.images[p.splits.test_idx[b]];
                for f in render_heatmap(&map, image, &p.dir, &format!("pmi_{a}_{b}"))? {
                    println!("{}", f.display());
                }
                if let Some(u) = &union {
                    if let Ok(r) = parts_ratio(&map.normalized, &u.index_axis(Axis(0), b).to_owned()) {
                        out.push(p.records.record("mi_parts_ratio", r));
                    }
                }
            }
            append(common, &out)?;
        }
        Command::MiStudy { source, pairs } => {
            let p = prepare(common, &source)?;
            let (net, _) = mine_on_train(&p)?;
            let (_, test_maps) = split_part_maps(&p.encoder, &p.splits, &p.data, &p.cfg)?;
            let union = any_part(&test_maps);
            let images: Vec<_> = p.splits.test_idx.iter().map(|&i| p.data.images[i].clone()).collect();
            let input = StudyInput {
                features: &p.splits.test,
                images: &images,
                labels: &p.splits.test_labels,
                attributes: &p.data.attributes,
                part_union: &union,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(p.cfg.seed);
            let n = pairs.unwrap_or(p.cfg.study_pairs);
            let study = ratio_correlation_study(&net, &input, n, &mut rng)?;
            write(&p.dir.join("mi_study.tsv"), study.to_tsv())?;
            append(
                common,
                &[
                    p.records.record("mi_ratio_r_attr", study.r_attr),
                    p.records.record("mi_ratio_p_attr", study.p_attr),
                    p.records.record("mi_ratio_r_ssim", study.r_ssim),
                    p.records.record("mi_ratio_p_ssim", study.p_ssim),
                ],
            )?;
        }
        Command::Tre { source } => {
            let p = prepare(common, &source)?;
            let t = compositionality(&p.splits, &p.data, &p.cfg)?;
            append(
                common,
                &[
                    p.records.tre(&t),
                    p.records.record("tre_ratio_train", t.ratio_train),
                    p.records.record("tre_test", t.tre_test),
                    p.records.record("tre_random_test", t.random_tre_test),
                ],
            )?;
        }
        Command::Grid {
            spec,
            dry_run,
            parts,
            tre,
            local,
        } => {
            let text = std::fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let grid = ExperimentGrid::from_toml(&text)?;
            if dry_run {
                for c in grid.cells() {
                    println!("{}", c.name());
                }
                println!("{} cells", grid.len());
                return Ok(());
            }
            let base = common.config()?;
            for cell in grid.cells() {
                let mut cfg = base.clone();
                cfg.dataset = cell.dataset.clone();
                cfg.encoder.family = cell.encoder;
                cfg.seed = cell.seed;
                cfg.train.objective = cell.objective.clone();
                log::info!("cell {}", cell.name());
                run_cell(common, &cfg, parts, tre, local)?;
            }
        }
        Command::Report { table, figure } => {
            let cfg = common.config()?;
            let records = common.store().read_all()?;
            let encoder = cfg.encoder.family.as_str();
            if let Some(t) = table {
                let text = match t {
                    Table::Zsl => zsl_table(&records),
                    Table::Parts => parts_table(&records, &cfg.dataset, encoder),
                    Table::Local => local_table(&records, encoder),
                    Table::Tre => tre_table(&records, &cfg.dataset),
                };
                print!("{text}");
            }
            if let Some(f) = figure {
                let dir = common.out.join("figures");
                create_dir(&dir)?;
                emit_figure(f, &records, &cfg.dataset, encoder, &dir)?;
            }
            if table.is_none() && figure.is_none() {
                bail!("report needs --table or --figure");
            }
        }
    }
    Ok(())
}

fn run_cell(common: &Common, cfg: &ExperimentConfig, parts: bool, tre: bool, local: bool) -> Result<()> {
    let data = load_dataset(cfg)?;
    let records = RecordBuilder::new(cfg, &cfg.train.objective)?;
    let (encoder, _) = train_and_save(cfg, &data, &common.out)?;
    let encoder = encoder.freeze()?;
    let splits = encode_splits(&encoder, &data, &cfg.encoder.preprocess())?;
    let mut out = vec![records.zsl(&zsl_global(&splits, &data, cfg)?)];
    if parts && data.parts.is_some() {
        out.push(records.parts(&locality(&encoder, &splits, &data, cfg)?));
    }
    if tre {
        out.push(records.tre(&compositionality(&splits, &data, cfg)?));
    }
    if local && cfg.train.objective.local_loss == LocalLoss::None {
        for (metric, v) in local_variants(&encoder, &splits, &data, cfg)? {
            out.push(records.record(&metric, v));
        }
    }
    append(common, &out)
}

fn emit_figure(f: Figure, records: &[RunRecord], dataset: &str, encoder: &str, dir: &Path) -> Result<()> {
    let path = match f {
        Figure::Parts => {
            let pairs = locality_pairs(records, dataset, encoder);
            for r in records.iter().filter(|r| r.metric == METRIC_ZSL && r.dataset == dataset && r.encoder == encoder) {
                if !pairs.iter().any(|p| p.0 == r.objective && p.1 == r.local_loss) {
                    eprintln!("missing {METRIC_PARTS_F1}: {} {}", r.objective, r.local_loss);
                }
            }
            let points: Vec<(String, f64, f64)> = pairs
                .into_iter()
                .map(|(m, l, f1, z)| (format!("{} {l}", model_name(&m)), f1, z))
                .collect();
            let svg = dir.join(format!("parts_vs_zsl_{dataset}_{encoder}.svg"));
            let r = scatter_figure(&points, "Parts F1 against ZSL accuracy", "parts F1", "ZSL top-1", &svg)?;
            if let Some(r) = r {
                println!("pearson r = {r:.3}");
            }
            svg
        }
        Figure::Improvement => {
            let bars: Vec<(String, f64)> = relative_improvements(records, dataset, encoder)
                .into_iter()
                .map(|(m, l, v)| (format!("{m} {l}"), v))
                .collect();
            let svg = dir.join(format!("relative_improvement_{dataset}_{encoder}.svg"));
            bar_figure(&bars, "Relative ZSL improvement", "relative improvement", &svg)?;
            svg
        }
        Figure::Aggregation | Figure::Pool => {
            let pooled: &[bool] = match f {
                Figure::Aggregation => &[true],
                _ => &[false, true],
            };
            let mut bars = Vec::new();
            let mut models: Vec<&str> = records.iter().map(|r| r.objective.as_str()).collect();
            models.sort();
            models.dedup();
            for m in models {
                for mode in ["average_representations", "average_predictions"] {
                    for &p in pooled {
                        let metric = local_metric(mode, p);
                        let v: Vec<f64> = records
                            .iter()
                            .filter(|r| {
                                r.metric == metric
                                    && r.objective == m
                                    && r.dataset == dataset
                                    && r.encoder == encoder
                                    && r.local_loss == "none"
                            })
                            .map(|r| r.value)
                            .collect();
                        if v.is_empty() {
                            eprintln!("missing {metric}: {m}");
                            continue;
                        }
                        let tag = if matches!(f, Figure::Pool) {
                            if p { " pool" } else { " no pool" }
                        } else {
                            ""
                        };
                        let agg = if mode == "average_representations" { "before" } else { "after" };
                        bars.push((format!("{} {agg}{tag}", model_name(m)), v.iter().sum::<f64>() / v.len() as f64));
                    }
                }
            }
            let name = if matches!(f, Figure::Pool) { "pool" } else { "aggregation" };
            let svg = dir.join(format!("{name}_{dataset}_{encoder}.svg"));
            bar_figure(&bars, "Local-feature ZSL accuracy", "ZSL top-1", &svg)?;
            svg
        }
    };
    println!("{}", path.display());
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
