use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use planwrite::checkpoint::{load_checkpoint, save_checkpoint, MAGIC};
use planwrite::compute::Real;
use planwrite::config::{Precision, RunConfig};
use planwrite::corpus::{
    build_vocab, canonical_order, load_corpus, load_inputs, CorpusLoad, Example, LoadOptions, Record, Segmenter, Slot,
    Synonyms, Vocabulary,
};
use planwrite::metrics::{distinct_plans, evaluate, self_bleu, serialize_plan};
use planwrite::model::Model;
use planwrite::objective::train as run_training;
use planwrite::parallel::{derive_seed, map_indexed, ExecMode};
use planwrite::realizer::{generate as generate_one, generate_plan, DecodeMode};
use planwrite::Error;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{parse_blocks, Block, PLAN_TSV_HEADER};
use crate::{Ablation, GenerateArgs, Mode};

pub const VOCAB_FILE: &str = "vocab.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALID_FILE: &str = "valid.jsonl";
pub const REPORT_FILE: &str = "extraction.tsv";

pub enum Failure {
    Input(String),
    Numeric(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn input(msg: impl Into<String>) -> Failure {
    Failure::Input(msg.into())
}

fn io(path: &Path, e: std::io::Error) -> Failure {
    input(format!("{}: {e}", path.display()))
}

fn load_synonyms_with(path: Option<&Path>, seg: &Segmenter) -> Result<Option<Synonyms>, Failure> {
    path.map(|p| Synonyms::load(p, seg)).transpose().map_err(Failure::from)
}

/// Loads a corpus, failing on malformed lines; records without items are
/// skipped with a note on stderr.
fn strict_load(path: &Path, opts: &LoadOptions<'_>) -> Result<CorpusLoad, Failure> {
    let load = load_corpus(path, opts)?;
    let malformed: Vec<String> = load.malformed().map(|r| r.to_string()).collect();
    if !malformed.is_empty() {
        let shown = malformed.iter().take(5).cloned().collect::<Vec<_>>().join("; ");
        return Err(input(format!(
            "{}: {} malformed line(s): {shown}",
            path.display(),
            malformed.len()
        )));
    }
    for r in &load.rejected {
        eprintln!("{}: skipping {r}", path.display());
    }
    if load.records.is_empty() {
        return Err(input(format!("{}: no usable records", path.display())));
    }
    Ok(load)
}

fn write_examples(path: &Path, examples: &[Example]) -> Outcome {
    let mut s = String::new();
    for e in examples {
        s.push_str(&serde_json::to_string(e).map_err(|e| input(e.to_string()))?);
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| io(path, e))
}

fn read_examples(path: &Path) -> Result<Vec<Example>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| input(format!("{}:{}: {e}", path.display(), n + 1))))
        .collect()
}

fn extraction_report(records: &[Record]) -> String {
    let mut s = String::from("record\titems\tsentences\tplaced_items\tnone_sentences\tcoverage\n");
    for (i, r) in records.iter().enumerate() {
        let mut placed = vec![false; r.items.len()];
        let mut none = 0;
        for g in &r.reference_plan.groups {
            for slot in g {
                match slot {
                    Slot::Item(k) => placed[*k] = true,
                    Slot::NoneTag => none += 1,
                }
            }
        }
        let n = placed.iter().filter(|p| **p).count();
        s.push_str(&format!(
            "{i}\t{}\t{}\t{n}\t{none}\t{:.4}\n",
            r.items.len(),
            r.sentences.len(),
            n as f64 / r.items.len() as f64
        ));
    }
    s
}

fn encode_all(vocab: &Vocabulary, records: &mut [Record]) -> Vec<Example> {
    records
        .iter_mut()
        .map(|r| {
            r.canonicalize(&vocab.attribute_stats);
            vocab.encode_record(r)
        })
        .collect()
}

/// Sentence segmentation from the config's `terminators`, or the default.
fn segmenter(config: Option<&Path>) -> Result<Segmenter, Failure> {
    match config {
        Some(p) => Ok(RunConfig::load(p)?.segmenter()),
        None => Ok(Segmenter::default()),
    }
}

pub fn prepare(
    corpus: &Path,
    out: &Path,
    valid: Option<&Path>,
    synonyms: Option<&Path>,
    min_count: usize,
    config: Option<&Path>,
) -> Outcome {
    let seg = segmenter(config)?;
    let syn = load_synonyms_with(synonyms, &seg)?;
    let opts = LoadOptions {
        segmenter: seg,
        synonyms: syn.as_ref(),
    };
    let mut load = strict_load(corpus, &opts)?;
    let vocab = build_vocab(&load.records, min_count)?;
    let examples = encode_all(&vocab, &mut load.records);
    let valid_examples = match valid {
        Some(p) => Some(encode_all(&vocab, &mut strict_load(p, &opts)?.records)),
        None => None,
    };
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    vocab.save(&out.join(VOCAB_FILE))?;
    write_examples(&out.join(TRAIN_FILE), &examples)?;
    let report = out.join(REPORT_FILE);
    std::fs::write(&report, extraction_report(&load.records)).map_err(|e| io(&report, e))?;
    if let Some(v) = &valid_examples {
        write_examples(&out.join(VALID_FILE), v)?;
    }
    println!(
        "prepared {} training records{}; vocabulary: {} words, {} attributes, {} values",
        examples.len(),
        valid_examples.map_or(String::new(), |v| format!(" and {} validation records", v.len())),
        vocab.text.len(),
        vocab.attributes.len(),
        vocab.values.len()
    );
    Ok(())
}

fn train_as<T: Real>(cfg: &RunConfig, vocab: &Vocabulary, data: &[Example], valid: &[Example]) -> Outcome {
    let use_title = data.iter().any(|e| e.title.is_some());
    let mc = cfg.model_config(vocab.text.len(), vocab.attributes.len(), vocab.values.len(), use_title);
    let model = Model::<T>::new(mc, cfg.seed)?;
    let log = File::create(&cfg.log).map_err(|e| io(&cfg.log, e))?;
    let mut log = BufWriter::new(log);
    let outcome = run_training(model, data, valid, &cfg.train_config(), Some(&mut log))?;
    log.flush().map_err(|e| io(&cfg.log, e))?;
    save_checkpoint(&cfg.checkpoint, &outcome.best, Some(vocab.fingerprint()))?;
    let last = outcome.epochs.last().map_or(f64::NAN, |e| e.train_total);
    match outcome.best_valid {
        Some(v) => println!(
            "best epoch {} of {}; validation L1+L2 {v:.6}; checkpoint {}",
            outcome.best_epoch,
            outcome.epochs.len(),
            cfg.checkpoint.display()
        ),
        None => println!(
            "no validation set; final training loss {last:.6}; checkpoint {}",
            cfg.checkpoint.display()
        ),
    }
    Ok(())
}

pub fn train(config: &Path, seed: Option<u64>, ablate: &[Ablation]) -> Outcome {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    for a in ablate {
        match a {
            Ablation::NoGlobal => cfg.disable_global_z = true,
            Ablation::NoLocal => cfg.disable_local_z = true,
        }
    }
    let vocab = Vocabulary::load(&cfg.data.join(VOCAB_FILE))?;
    let data = read_examples(&cfg.data.join(TRAIN_FILE))?;
    let valid_path = cfg.data.join(VALID_FILE);
    let valid = if valid_path.exists() {
        read_examples(&valid_path)?
    } else {
        Vec::new()
    };
    match cfg.precision {
        Precision::F64 => train_as::<f64>(&cfg, &vocab, &data, &valid),
        Precision::F32 => train_as::<f32>(&cfg, &vocab, &data, &valid),
    }
}

fn vocab_path(args: &GenerateArgs) -> PathBuf {
    args.vocab.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(VOCAB_FILE)
    })
}

pub fn generate(args: &GenerateArgs) -> Outcome {
    if args.samples == 0 {
        return Err(input("--samples must be at least 1"));
    }
    let (model, meta) = load_checkpoint::<f64>(&args.checkpoint)?;
    let vocab = Vocabulary::load(&vocab_path(args))?;
    let sizes = (vocab.text.len(), vocab.attributes.len(), vocab.values.len());
    let expected = (meta.config.text_vocab, meta.config.attr_vocab, meta.config.value_vocab);
    if meta.vocab_fingerprint.is_some_and(|f| f != vocab.fingerprint()) || sizes != expected {
        return Err(input("vocabulary does not match the checkpoint"));
    }
    let inputs = load_inputs(&args.input, &Segmenter::default())?;
    let mode = match args.mode {
        Mode::Greedy => DecodeMode::Greedy,
        Mode::Sample => DecodeMode::Sample,
    };
    let k = args.samples;
    let blocks = map_indexed(ExecMode::Parallel, inputs.len() * k, |job| -> Result<Block, Error> {
        let (i, s) = (job / k, job % k);
        let items = canonical_order(&inputs[i].items, &vocab.attribute_stats);
        let labels: Vec<String> = items.iter().map(|it| it.label()).collect();
        let ids = vocab.encode_items(&items);
        let title = inputs[i]
            .title
            .as_ref()
            .filter(|_| model.config.use_title)
            .map(|t| vocab.text.encode(t));
        let seed = derive_seed(&[args.seed, i as u64, s as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (plan, sentences) = if args.plan_only {
            (generate_plan(&model, &ids, title.as_deref(), &mut rng)?.0, Vec::new())
        } else {
            let out = generate_one(&model, &ids, title.as_deref(), mode, &mut rng)?;
            let text = out.sentences.iter().map(|t| vocab.text.decode(t).join(" ")).collect();
            (out.plan, text)
        };
        Ok(Block {
            input: i,
            sample: s,
            items: labels.clone(),
            plan: plan.render(&labels),
            sentences,
            seed,
        })
    });
    let mut text = String::new();
    if args.plan_only {
        text.push_str(PLAN_TSV_HEADER);
        text.push('\n');
    }
    for b in blocks {
        let b = b?;
        text.push_str(&if args.plan_only { b.plan_row() } else { b.render() });
    }
    match &args.output {
        Some(p) => std::fs::write(p, text).map_err(|e| io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| input(format!("stdout: {e}"))),
    }
}

pub fn eval(
    outputs: &Path,
    references: &Path,
    items: Option<&Path>,
    synonyms: Option<&Path>,
    per_input: bool,
    config: Option<&Path>,
) -> Outcome {
    let seg = segmenter(config)?;
    let syn = load_synonyms_with(synonyms, &seg)?;
    let text = std::fs::read_to_string(outputs).map_err(|e| io(outputs, e))?;
    let blocks = parse_blocks(&text).map_err(|m| input(format!("{}: {m}", outputs.display())))?;
    let refs = strict_load(
        references,
        &LoadOptions {
            segmenter: seg.clone(),
            synonyms: syn.as_ref(),
        },
    )?
    .records;
    let item_lists = match items {
        Some(p) => load_inputs(p, &seg)?.into_iter().map(|i| i.items).collect(),
        None => refs.iter().map(|r| r.items.clone()).collect::<Vec<_>>(),
    };
    if item_lists.len() != refs.len() {
        return Err(input(format!(
            "{} item lists for {} references",
            item_lists.len(),
            refs.len()
        )));
    }
    let mut by_input: BTreeMap<usize, Vec<&Block>> = BTreeMap::new();
    for b in &blocks {
        by_input.entry(b.input).or_default().push(b);
    }
    if by_input.len() != refs.len() || by_input.keys().next_back().is_some_and(|&k| k + 1 != refs.len()) {
        return Err(input(format!(
            "outputs cover {} inputs but there are {} references",
            by_input.len(),
            refs.len()
        )));
    }
    let mut hyps = Vec::new();
    let mut gold = Vec::new();
    let mut its = Vec::new();
    for (&i, bs) in &by_input {
        for b in bs {
            hyps.push(b.tokens());
            gold.push(refs[i].tokens());
            its.push(item_lists[i].clone());
        }
    }
    let mut report = evaluate(&hyps, &gold, &its, syn.as_ref())?;
    if per_input {
        let (mut sb, mut psb, mut n) = (0.0, 0.0, 0usize);
        let mut counts: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (&i, bs) in &by_input {
            let plans: Vec<Vec<Vec<String>>> = bs.iter().map(|b| b.plan_groups()).collect();
            let e = counts.entry(item_lists[i].len()).or_default();
            e.0 += distinct_plans(&plans) as f64;
            e.1 += 1;
            if bs.len() < 2 {
                continue;
            }
            let texts: Vec<Vec<String>> = bs.iter().map(|b| b.tokens()).collect();
            let plan_texts: Vec<Vec<String>> = plans.iter().map(|p| serialize_plan(p)).collect();
            sb += self_bleu(&texts)?;
            psb += self_bleu(&plan_texts)?;
            n += 1;
        }
        if n == 0 {
            return Err(input("--per-input-samples needs at least two samples for some input"));
        }
        report.self_bleu = Some(sb / n as f64);
        report.plan_self_bleu = Some(psb / n as f64);
        report.distinct_plan_counts = Some(counts.into_iter().map(|(k, (s, c))| (k, s / c as f64, c)).collect());
    }
    print!("{}", report.tsv());
    eprint!("{}", report.text_block());
    Ok(())
}

pub fn inspect(path: &Path) -> Outcome {
    let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
    if bytes.starts_with(MAGIC) {
        let (model, meta) = load_checkpoint::<f64>(path)?;
        println!("checkpoint {}", path.display());
        print!("{}", meta.config.echo());
        if let Some(f) = meta.vocab_fingerprint {
            println!("vocab_fingerprint = {f}");
        }
        println!(
            "parameters: {} tensors, {} scalars",
            model.store.len(),
            model.store.num_scalars()
        );
        for (_, p) in model.store.iter() {
            println!("  {}\t{:?}", p.name(), p.value.shape());
        }
        return Ok(());
    }
    let vocab = Vocabulary::load(path)?;
    println!("vocabulary {}", path.display());
    println!("words: {}", vocab.text.len());
    println!("attributes: {}", vocab.attributes.len());
    println!("values: {}", vocab.values.len());
    println!("min_count: {}", vocab.min_count);
    println!("fingerprint: {}", vocab.fingerprint());
    Ok(())
}
