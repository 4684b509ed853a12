use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use rac_core::ann::{default_n_lists, precompute_knn as compute_cache, ExactIndex, IvfIndex, IvfLayout, KnnCache, Retriever};
use rac_core::datagen::{gen_longtail, gen_memory, LongTailSpec, MemorySpec, Prototypes};
use rac_core::fusion::Retrieved;
use rac_core::nn::checkpoint::{load_records, restore, save_params};
use rac_core::nn::{GradCheckOptions, Parameterized};
use rac_core::train::{
    self, evaluate, grow_memory_eval, write_history, Dataset, DatasetSidecar, EvalSet, GradProblem, Model, ModelConfig,
    ShotCategory, TrainConfig, TrainMemory,
};
use rac_core::MemoryStore;

use crate::args::*;
use crate::error::{io_err, CliError, CliResult};

const TRAIN_FILE: &str = "train.racm";
const EVAL_FILE: &str = "eval.racm";
const MEMORY_FILE: &str = "memory.racm";
const SIDECAR_FILE: &str = "dataset.json";

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(rac_core::Error::from)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io_err(format!("writing {}", path.display())))
}

/// Writes the resolved run configuration.
fn write_echo(path: &Path, command: &str, threads: usize, args: &impl Serialize, resolved: Value) -> CliResult<()> {
    let args = serde_json::to_value(args).map_err(rac_core::Error::from)?;
    write_json(
        path,
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "threads": threads,
            "args": args,
            "resolved": resolved,
        }),
    )
}

/// Echo path for commands whose output is a single file.
fn sibling_echo(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

struct Data {
    sidecar: DatasetSidecar,
    train: Dataset,
    eval: Dataset,
}

impl Data {
    fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(SIDECAR_FILE);
        if !path.is_file() {
            return Err(CliError::Io {
                context: format!("reading {}", path.display()),
                source: std::io::ErrorKind::NotFound.into(),
            });
        }
        let sidecar = DatasetSidecar::read(path)?;
        let train = Dataset::load(dir.join(TRAIN_FILE), &sidecar.train, "train", sidecar.num_classes)?;
        let eval = Dataset::load(dir.join(EVAL_FILE), &sidecar.eval, "eval", sidecar.num_classes)?;
        Ok(Self { sidecar, train, eval })
    }

    fn split(&self, name: &str) -> CliResult<&Dataset> {
        match name {
            "train" => Ok(&self.train),
            "eval" => Ok(&self.eval),
            _ => Err(CliError::Usage(format!("unknown split {name:?} (train, eval)"))),
        }
    }
}

/// A memory store plus an optional persisted IVF layout.
struct Memory {
    store: MemoryStore,
    layout: Option<IvfLayout>,
}

impl Memory {
    fn load(args: &RetrievalArgs) -> CliResult<Option<Self>> {
        let Some(path) = &args.store else {
            if args.index.is_some() {
                return Err(CliError::Usage("--index needs --store".into()));
            }
            return Ok(None);
        };
        let store = MemoryStore::read(path)?;
        let layout = args.index.as_ref().map(IvfLayout::read).transpose()?;
        Ok(Some(Self { store, layout }))
    }

    fn index(&self) -> CliResult<Box<dyn Retriever + '_>> {
        Ok(match &self.layout {
            Some(l) => Box::new(IvfIndex::from_layout(&self.store, l.clone())?),
            None => Box::new(ExactIndex::build(&self.store)?),
        })
    }
}

fn model_config_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

fn load_model(checkpoint: &Path) -> CliResult<Model<f32>> {
    let cfg_path = model_config_path(checkpoint);
    let text = fs::read(&cfg_path).map_err(io_err(format!("reading {}", cfg_path.display())))?;
    let config: ModelConfig = serde_json::from_slice(&text).map_err(rac_core::Error::from)?;
    let mut model = Model::<f32>::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    restore(&mut model, &load_records(checkpoint)?)?;
    Ok(model)
}

fn require_memory(mode_needs: bool, memory: &Option<Memory>, what: &str) -> CliResult<()> {
    if mode_needs && memory.is_none() {
        return Err(CliError::Usage(format!("{what} needs --store")));
    }
    Ok(())
}

pub fn gen_data(a: &GenDataArgs, threads: usize) -> CliResult<()> {
    let lt_spec = LongTailSpec {
        classes: a.classes,
        head: a.head,
        tail: a.tail,
        dim: a.dim,
        sigma: a.sigma,
        eval_per_class: a.eval_per_class,
        seed: a.seed,
    };
    let mem_spec = MemorySpec {
        size: a.memory_size,
        relevant_fraction: a.relevant_fraction,
        distractor_fraction: a.distractor_fraction,
        relevant_classes: a.relevant_classes.clone(),
        value_mode: a.value_mode,
        value_dim: a.value_dim,
        key_sigma: a.key_sigma,
        value_noise: a.value_noise,
        seed: a.memory_seed.unwrap_or(a.seed.wrapping_add(1)),
    };
    lt_spec.validate()?;
    mem_spec.counts(a.classes)?;
    let lt = gen_longtail(&lt_spec)?;
    let memory = gen_memory(&lt.prototypes, &mem_spec)?;

    create_dir(&a.out)?;
    lt.train.store().write(a.out.join(TRAIN_FILE))?;
    lt.eval.store().write(a.out.join(EVAL_FILE))?;
    memory.write(a.out.join(MEMORY_FILE))?;
    DatasetSidecar {
        num_classes: a.classes,
        dim: a.dim,
        train: lt.train.split_labels(),
        eval: lt.eval.split_labels(),
        spec: json!({ "longtail": lt_spec, "memory": mem_spec }),
    }
    .write(a.out.join(SIDECAR_FILE))?;
    write_echo(
        &a.out.join("config.json"),
        "gen-data",
        threads,
        a,
        json!({ "longtail": lt_spec, "memory": mem_spec }),
    )?;
    println!(
        "wrote {} train, {} eval and {} memory rows to {}",
        lt.train.len(),
        lt.eval.len(),
        memory.len(),
        a.out.display()
    );
    Ok(())
}

pub fn build_index(a: &BuildIndexArgs, threads: usize) -> CliResult<()> {
    let store = MemoryStore::read(&a.store)?;
    let n_lists = match a.lists {
        Lists::Auto => default_n_lists(store.len()),
        Lists::Count(n) => n,
    };
    let index = IvfIndex::build(&store, n_lists, a.seed, a.kmeans_iters)?;
    index.layout().write(&a.out)?;
    write_echo(&sibling_echo(&a.out), "build-index", threads, a, json!({ "n_lists": n_lists }))?;
    println!("built {} lists over {} keys", n_lists, store.len());
    Ok(())
}

pub fn precompute_knn(a: &PrecomputeArgs, threads: usize) -> CliResult<()> {
    let memory = Memory::load(&a.retrieval)?.ok_or_else(|| CliError::Usage("precompute-knn needs --store".into()))?;
    let queries = MemoryStore::read(&a.queries)?;
    let index = memory.index()?;
    let cache = compute_cache(index.as_ref(), queries.keys(), a.k, a.retrieval.probe, a.exclude_self)?;
    cache.write(&a.out)?;
    write_echo(
        &sibling_echo(&a.out),
        "precompute-knn",
        threads,
        a,
        json!({ "index": index.descriptor(a.retrieval.probe), "digest": cache.digest_hex() }),
    )?;
    println!("cached {} neighbor lists (k = {}), digest {}", cache.len(), cache.k, cache.digest_hex());
    Ok(())
}

pub fn train(a: &TrainArgs, threads: usize) -> CliResult<()> {
    let data = Data::load(&a.data)?;
    let memory = Memory::load(&a.retrieval)?;
    require_memory(a.mode.uses_retrieval(), &memory, "retrieval mode")?;
    let config = TrainConfig {
        mode: a.mode,
        num_layers: a.layers,
        k: a.k,
        epochs: a.epochs,
        lr: a.lr,
        weight_decay: a.wd,
        batch_size: a.batch,
        warmup_epochs: a.warmup_epochs,
        tau: a.tau,
        epsilon: a.epsilon,
        seed: a.seed,
        thresholds: a.shots.thresholds(),
    };

    let index = memory.as_ref().map(Memory::index).transpose()?;
    let cache = match (&index, &a.cache) {
        (Some(_), Some(path)) if a.mode.uses_retrieval() => Some(KnnCache::read(path)?),
        (Some(ix), None) if a.mode.uses_retrieval() => {
            log::info!("no --cache given; computing training neighbors in memory");
            Some(compute_cache(ix.as_ref(), data.train.embeddings(), a.k, a.retrieval.probe, a.exclude_self)?)
        }
        _ => None,
    };
    let train_memory = match (&index, &cache) {
        (Some(ix), Some(c)) => Some(TrainMemory {
            index: ix.as_ref(),
            cache: c,
            probe: a.retrieval.probe,
            exclude_self: a.exclude_self,
        }),
        _ => None,
    };
    let eval_set = EvalSet {
        data: &data.eval,
        index: index.as_deref(),
        probe: a.retrieval.probe,
    };
    let outcome = train::train(&config, &data.train, train_memory.as_ref(), Some(&eval_set))?;

    create_dir(&a.out)?;
    let ckpt = a.out.join("model.racp");
    save_params(&ckpt, &outcome.model.params())?;
    write_json(
        &model_config_path(&ckpt),
        &serde_json::to_value(outcome.model.config()).map_err(rac_core::Error::from)?,
    )?;
    let hist_path = a.out.join("history.jsonl");
    let mut w = BufWriter::new(File::create(&hist_path).map_err(io_err(format!("creating {}", hist_path.display())))?);
    write_history(&mut w, &outcome.history)?;
    w.flush().map_err(io_err("writing history"))?;
    write_echo(
        &a.out.join("config.json"),
        "train",
        threads,
        a,
        json!({
            "train_config": config,
            "batch_size": config.resolved_batch_size(data.train.len()),
            "cache_digest": cache.as_ref().map(KnnCache::digest_hex),
        }),
    )?;
    if let Some(last) = outcome.history.last() {
        println!(
            "epoch {}: loss {:.5}, eval overall {}",
            last.epoch,
            last.loss,
            fmt_acc(last.overall)
        );
    }
    Ok(())
}

fn fmt_acc(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

pub fn eval(a: &EvalArgs, threads: usize) -> CliResult<()> {
    let data = Data::load(&a.data)?;
    let split = data.split(&a.split)?;
    let model = load_model(&a.checkpoint)?;
    let memory = Memory::load(&a.retrieval)?;
    require_memory(model.config().mode.uses_retrieval(), &memory, "a retrieval checkpoint")?;
    let index = memory.as_ref().map(Memory::index).transpose()?;
    let metrics = evaluate(
        &model,
        split,
        index.as_deref(),
        a.k,
        a.retrieval.probe,
        &data.train.class_counts(),
        a.shots.thresholds(),
    )?;
    create_dir(&a.out)?;
    write_json(
        &a.out.join("metrics.json"),
        &serde_json::to_value(&metrics).map_err(rac_core::Error::from)?,
    )?;
    write_echo(&a.out.join("config.json"), "eval", threads, a, json!({ "model": model.config() }))?;
    println!(
        "overall {} many {} mid {} low {}",
        fmt_acc(Some(metrics.overall)),
        fmt_acc(metrics.many),
        fmt_acc(metrics.mid),
        fmt_acc(metrics.low)
    );
    Ok(())
}

pub fn grow_memory(a: &GrowArgs, threads: usize) -> CliResult<()> {
    let data = Data::load(&a.data)?;
    let model = load_model(&a.checkpoint)?;
    let small = MemoryStore::read(&a.store)?;
    let counts = data.train.class_counts();
    let thresholds = a.shots.thresholds();
    thresholds.validate()?;

    let mut resolved = json!({});
    let extra = match &a.extra {
        Some(path) => MemoryStore::read(path)?,
        None => {
            let lt: LongTailSpec = serde_json::from_value(data.sidecar.spec["longtail"].clone())
                .map_err(|_| CliError::Usage("dataset sidecar lacks generator settings; pass --extra".into()))?;
            let base: MemorySpec = serde_json::from_value(data.sidecar.spec["memory"].clone())
                .map_err(|_| CliError::Usage("dataset sidecar lacks memory settings; pass --extra".into()))?;
            let classes = match &a.extra_classes {
                Some(c) => c.clone(),
                None => (0..counts.len())
                    .filter(|&c| thresholds.categorize(counts[c]) == ShotCategory::Low)
                    .collect(),
            };
            let seed = a.extra_seed.unwrap_or(base.seed.wrapping_add(1));
            let mut spec = MemorySpec::with_counts(lt.classes, a.extra_per_class, Some(classes.clone()), 0, base.value_dim, seed);
            spec.value_mode = base.value_mode;
            spec.key_sigma = base.key_sigma;
            spec.value_noise = base.value_noise;
            resolved = json!({ "extra_classes": classes, "extra_seed": seed, "extra_spec": spec });
            gen_memory(&Prototypes::generate(lt.classes, lt.dim, lt.seed), &spec)?
        }
    };
    let (before, after) = grow_memory_eval(&model, &data.eval, &small, &extra, a.k, &counts, thresholds)?;

    create_dir(&a.out)?;
    small.merge(&extra)?.write(a.out.join("merged.racm"))?;
    write_json(
        &a.out.join("metrics.json"),
        &json!({
            "before": before,
            "after": after,
            "extra_items": extra.len(),
        }),
    )?;
    write_echo(&a.out.join("config.json"), "grow-memory", threads, a, resolved)?;
    println!(
        "low-shot {} -> {}, overall {} -> {} after adding {} items",
        fmt_acc(before.low),
        fmt_acc(after.low),
        fmt_acc(Some(before.overall)),
        fmt_acc(Some(after.overall)),
        extra.len()
    );
    Ok(())
}

pub fn grad_check(a: &GradCheckArgs, threads: usize) -> CliResult<()> {
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be positive".into()));
    }
    let config = ModelConfig {
        mode: a.mode,
        dim: a.dim,
        value_dim: if a.mode.uses_retrieval() { a.value_dim } else { 0 },
        num_classes: a.classes,
        num_layers: a.layers,
    };
    let opts = GradCheckOptions {
        step: a.step,
        tolerance: a.tol,
        ..GradCheckOptions::default()
    };
    let mut reports = Vec::new();
    let mut worst = 0.0f64;
    for seed in a.seed..a.seed + a.seeds {
        let report = GradProblem::random(config, a.k, seed)?.check(opts)?;
        println!(
            "seed {seed}: max_rel_err {:.3e} at {}[{}] ({} coordinates) {}",
            report.max_rel_err,
            report.worst_param,
            report.worst_index,
            report.coords_checked,
            if report.passed { "ok" } else { "FAIL" }
        );
        worst = worst.max(report.max_rel_err);
        reports.push(json!({ "seed": seed, "report": report }));
    }
    println!("max_rel_err {worst:.3e} (tolerance {:.1e})", a.tol);
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_json(&out.join("report.json"), &json!({ "max_rel_err": worst, "runs": reports }))?;
        write_echo(&out.join("config.json"), "grad-check", threads, a, json!({ "model": config }))?;
    }
    if worst < a.tol {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "max relative error {worst:.3e} exceeds tolerance {:.1e}",
            a.tol
        )))
    }
}

pub fn trace(a: &TraceArgs, threads: usize) -> CliResult<()> {
    let data = Data::load(&a.data)?;
    let split = data.split(&a.split)?;
    if a.query_id >= split.len() {
        return Err(CliError::Usage(format!(
            "query id {} out of range for {} examples",
            a.query_id,
            split.len()
        )));
    }
    let model = load_model(&a.checkpoint)?;
    let mam = model
        .mam
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("trace needs a mam checkpoint, got {}", model.config().mode)))?;
    let memory = Memory::load(&a.retrieval)?.ok_or_else(|| CliError::Usage("trace needs --store".into()))?;
    let index = memory.index()?;
    let z = split.embedding(a.query_id);
    let opts = rac_core::ann::QueryOptions::new(a.k).probe(a.retrieval.probe);
    let neighbors = index.query(z, &opts)?;
    let nn = Retrieved::gather(&memory.store, &neighbors)?;
    let trace = mam.trace(z, &nn)?;
    let mut text = serde_json::to_string(&trace.to_json()).map_err(rac_core::Error::from)?;
    text.push('\n');
    match &a.out {
        Some(out) => {
            fs::write(out, &text).map_err(io_err(format!("writing {}", out.display())))?;
            write_echo(&sibling_echo(out), "trace", threads, a, json!({ "label": split.label(a.query_id) }))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
