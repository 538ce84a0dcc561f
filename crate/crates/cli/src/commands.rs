use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use santext::attack::{run_attack, train_ngram_predictor, AttackReport, Predictor};
use santext::audit::{
    estimate_privacy_stats, verify_ldp, verify_mldp, verify_umldp, DpVerificationResult,
    PrivacyReport, VerifyOptions,
};
use santext::corpus::{read_corpus, sanitize_corpus, Corpus, CorpusFormat, SanitizeStats};
use santext::embedding::{self, read_embedding_tokens, EmbeddingMatrix};
use santext::{
    build_vocab as build_vocabulary, config_hash, partition_sensitivity, BuildOptions,
    FrequencyTable, MechanismConfig, MechanismKind, ProbabilityModel, SensitivityPartition,
    TokenizerMode, Vocabulary,
};

use crate::{
    AttackArgs, AuditArgs, Bound, BuildVocabArgs, CorpusArgs, Mechanism, ModelArgs, PrecomputeArgs,
    PredictorKind, SanitizeArgs, Tokenizer, VerifyArgs,
};

impl From<Mechanism> for MechanismKind {
    fn from(m: Mechanism) -> Self {
        match m {
            Mechanism::Santext => MechanismKind::SanText,
            Mechanism::SantextPlus => MechanismKind::SanTextPlus,
            Mechanism::UniformRandom => MechanismKind::UniformRandom,
        }
    }
}

impl From<Tokenizer> for TokenizerMode {
    fn from(t: Tokenizer) -> Self {
        match t {
            Tokenizer::Whitespace => TokenizerMode::Whitespace,
            Tokenizer::Pretokenized => TokenizerMode::Pretokenized,
        }
    }
}

fn corpus_format(args: &CorpusArgs) -> CorpusFormat {
    if args.tsv {
        CorpusFormat::Tsv {
            text_column: args.text_column,
            has_header: args.header,
        }
    } else {
        CorpusFormat::Lines
    }
}

fn load_corpus(args: &CorpusArgs) -> Result<Corpus> {
    Ok(read_corpus(&args.input, corpus_format(args))?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            let mut out = std::io::stdout().lock();
            let text = serde_json::to_string_pretty(value)?;
            match writeln!(out, "{text}").and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn is_binary_cache(path: &Path) -> Result<bool> {
    let mut magic = [0u8; 8];
    let mut file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(file.read(&mut magic)? == 8 && &magic == b"STXEMBED")
}

/// Vocabulary, counts and embeddings, aligned by id.
struct Inputs {
    vocab: Vocabulary,
    freq: Option<FrequencyTable>,
    embeddings: Arc<EmbeddingMatrix>,
}

impl Inputs {
    fn load(vocab_path: &Path, freq_path: Option<&Path>, emb_path: &Path) -> Result<Self> {
        let vocab = Vocabulary::load(vocab_path)?;
        let default_freq = vocab_path.with_file_name("freq.tsv");
        let freq = match freq_path {
            Some(p) => Some(FrequencyTable::load(p, &vocab)?),
            None if default_freq.exists() => Some(FrequencyTable::load(&default_freq, &vocab)?),
            None => None,
        };
        if is_binary_cache(emb_path)? {
            let matrix = embedding::read_cache(emb_path, &vocab)?;
            return Ok(Inputs {
                vocab,
                freq,
                embeddings: Arc::new(matrix),
            });
        }
        let loaded = embedding::load_embeddings(emb_path, &vocab)?;
        if !loaded.missing.is_empty() {
            log::warn!(
                "{} vocabulary tokens have no embedding and will pass through unchanged",
                loaded.missing.len()
            );
        }
        let freq = freq.map(|f| f.restrict(&vocab, &loaded.vocab));
        Ok(Inputs {
            vocab: loaded.vocab,
            freq,
            embeddings: Arc::new(loaded.matrix),
        })
    }

    fn partition(&self, args: &ModelArgs) -> Result<Option<SensitivityPartition>> {
        if args.mechanism != Mechanism::SantextPlus {
            return Ok(None);
        }
        let freq = self
            .freq
            .as_ref()
            .context("santext_plus needs a frequency table (--freq)")?;
        Ok(Some(partition_sensitivity(&self.vocab, freq, args.w)?))
    }

    fn base_hash(&self) -> serde_json::Value {
        json!({
            "vocab_hash": hex::encode(self.vocab.content_hash()),
            "embedding_hash": hex::encode(self.embeddings.content_hash()),
        })
    }
}

fn mechanism_config(args: &ModelArgs, epsilon: f64) -> Result<MechanismConfig> {
    let kind = MechanismKind::from(args.mechanism);
    Ok(match kind {
        MechanismKind::UniformRandom => MechanismConfig::uniform(args.seed),
        _ => MechanismConfig::new(kind, epsilon, args.p, args.seed)?,
    })
}

fn model_hash(command: &str, args: &ModelArgs, inputs: &Inputs, epsilon: f64) -> String {
    config_hash(&json!({
        "command": command,
        "mechanism": args.mechanism,
        "epsilon": epsilon,
        "p": args.p,
        "w": args.w,
        "seed": args.seed,
        "inputs": inputs.base_hash(),
    }))
}

fn build_model(
    args: &ModelArgs,
    inputs: &Inputs,
    partition: Option<&SensitivityPartition>,
    epsilon: f64,
) -> Result<(ProbabilityModel, f64)> {
    let config = mechanism_config(args, epsilon)?;
    let start = Instant::now();
    let model = match &args.model {
        Some(path) => {
            if args.epsilons.len() > 1 {
                bail!("--model cannot be combined with an epsilon sweep");
            }
            ProbabilityModel::read_cache(
                path,
                &inputs.vocab,
                Arc::clone(&inputs.embeddings),
                partition,
                &config,
            )
            .with_context(|| format!("cannot use model cache {}", path.display()))?
        }
        None => ProbabilityModel::build(
            &inputs.vocab,
            Arc::clone(&inputs.embeddings),
            partition,
            &config,
            BuildOptions {
                memory_budget: args.mem_budget,
                ..Default::default()
            },
        )?,
    };
    Ok((model, start.elapsed().as_secs_f64()))
}

fn sweep_path(base: &Path, epsilon: f64, sweep: bool) -> PathBuf {
    if !sweep {
        return base.to_owned();
    }
    let mut name = base.as_os_str().to_owned();
    name.push(format!(".eps{epsilon}"));
    PathBuf::from(name)
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

pub fn build_vocab(args: &BuildVocabArgs) -> Result<ExitCode> {
    let corpus = load_corpus(&args.corpus)?;
    let docs = corpus.tokenize(args.corpus.tokenizer.into());
    let external = match &args.external_vocab {
        Some(p) => Some(Vocabulary::load(p)?.tokens().to_vec()),
        None => None,
    };
    let (vocab, freq) = match (&external, &args.embeddings) {
        (None, Some(emb)) => {
            let known = read_embedding_tokens(emb)?;
            build_vocabulary(&docs, None, |t| known.contains(t.as_str()))?
        }
        (ext, _) => build_vocabulary(&docs, ext.as_deref(), |_| true)?,
    };

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let (vocab, freq, missing, duplicates) = match &args.embeddings {
        Some(emb) => {
            let loaded = embedding::load_embeddings(emb, &vocab)?;
            let freq = freq.restrict(&vocab, &loaded.vocab);
            if loaded.vocab.is_empty() {
                bail!("no vocabulary token has an embedding in {}", emb.display());
            }
            embedding::write_cache(
                &loaded.matrix,
                &loaded.vocab,
                &args.out_dir.join("embeddings.bin"),
            )?;
            let dups = loaded.matrix.duplicate_count();
            (loaded.vocab, freq, loaded.missing.len(), dups)
        }
        None => (vocab, freq, 0, 0),
    };
    vocab.save(&args.out_dir.join("vocab.txt"))?;
    freq.save(&vocab, &args.out_dir.join("freq.tsv"))?;
    let hash = config_hash(&json!({
        "command": "build-vocab",
        "tokenizer": args.corpus.tokenizer,
        "vocab_hash": hex::encode(vocab.content_hash()),
    }));
    write_json(
        &args.out_dir.join("build-vocab.json"),
        &json!({
            "config_hash": hash,
            "documents": corpus.len(),
            "vocab_size": vocab.len(),
            "in_vocab_tokens": freq.total(),
            "oov_tokens": freq.oov_count(),
            "missing_embeddings": missing,
            "duplicate_vectors": duplicates,
        }),
    )?;
    eprintln!(
        "vocabulary: {} tokens ({} corpus tokens out of vocabulary)",
        vocab.len(),
        freq.oov_count()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn precompute(args: &PrecomputeArgs) -> Result<ExitCode> {
    let m = &args.model;
    if m.epsilons.len() != 1 {
        bail!("precompute takes exactly one --epsilon");
    }
    let inputs = Inputs::load(&m.vocab, m.freq.as_deref(), &m.embeddings)?;
    let partition = inputs.partition(m)?;
    let (model, seconds) = build_model(m, &inputs, partition.as_ref(), m.epsilons[0])?;
    model.write_cache(&args.output)?;
    write_json(
        &sidecar(&args.output, ".json"),
        &json!({
            "config_hash": model_hash("precompute", m, &inputs, m.epsilons[0]),
            "mechanism": m.mechanism,
            "epsilon": m.epsilons[0],
            "layout": model.layout(),
            "vocab_size": inputs.vocab.len(),
            "targets": model.targets().len(),
            "precompute_seconds": seconds,
        }),
    )?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SanitizeSidecar<'a> {
    config_hash: String,
    mechanism: Mechanism,
    epsilon: f64,
    p: f64,
    w: f64,
    seed: u64,
    layout: santext::Layout,
    sensitive_tokens: Option<usize>,
    precompute_seconds: f64,
    #[serde(flatten)]
    stats: &'a SanitizeStats,
}

pub fn sanitize(args: &SanitizeArgs) -> Result<ExitCode> {
    let corpus = load_corpus(&args.corpus)?;
    let m = &args.model;
    let inputs = Inputs::load(&m.vocab, m.freq.as_deref(), &m.embeddings)?;
    let partition = inputs.partition(m)?;
    let sweep = m.epsilons.len() > 1;
    for &epsilon in &m.epsilons {
        let (model, precompute_seconds) = build_model(m, &inputs, partition.as_ref(), epsilon)?;
        let out = sanitize_corpus(
            &corpus,
            &inputs.vocab,
            &model,
            args.corpus.tokenizer.into(),
            m.seed,
        );
        let path = sweep_path(&args.output, epsilon, sweep);
        let mut writer = create(&path)?;
        corpus.write_with_texts(&out.texts, &mut writer)?;
        writer.flush()?;
        write_json(
            &sidecar(&path, ".stats.json"),
            &SanitizeSidecar {
                config_hash: model_hash("sanitize", m, &inputs, epsilon),
                mechanism: m.mechanism,
                epsilon,
                p: m.p,
                w: m.w,
                seed: m.seed,
                layout: model.layout(),
                sensitive_tokens: partition.as_ref().map(|p| p.sensitive_ids().len()),
                precompute_seconds,
                stats: &out.stats,
            },
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(
    bound: Bound,
    model: &ProbabilityModel,
    partition: Option<&SensitivityPartition>,
    ldp_epsilon: f64,
    opts: &VerifyOptions,
) -> Result<DpVerificationResult> {
    let config = model.config();
    Ok(match bound {
        Bound::Mldp => verify_mldp(model, model.embeddings(), config.epsilon, opts),
        Bound::Ldp => verify_ldp(model, ldp_epsilon, opts),
        Bound::Umldp => {
            let partition = partition.context("--bound umldp needs --mechanism santext_plus")?;
            verify_umldp(
                model,
                partition,
                model.embeddings(),
                config.epsilon,
                config.epsilon0(),
                config.p < 1.0,
                opts,
            )
        }
    })
}

fn default_bound(m: Mechanism) -> Bound {
    match m {
        Mechanism::SantextPlus => Bound::Umldp,
        _ => Bound::Mldp,
    }
}

#[derive(Serialize)]
struct AuditOutput {
    config_hash: String,
    mechanism: Mechanism,
    epsilon: f64,
    #[serde(flatten)]
    report: PrivacyReport,
    verification: DpVerificationResult,
}

pub fn audit(args: &AuditArgs) -> Result<ExitCode> {
    let m = &args.model;
    let inputs = Inputs::load(&m.vocab, m.freq.as_deref(), &m.embeddings)?;
    let partition = inputs.partition(m)?;
    let opts = VerifyOptions {
        seed: m.seed,
        ..Default::default()
    };
    let mut outputs = Vec::new();
    for &epsilon in &m.epsilons {
        let (model, _) = build_model(m, &inputs, partition.as_ref(), epsilon)?;
        let report = estimate_privacy_stats(&model, args.runs, m.seed, |x| {
            inputs.vocab.token(x).to_string()
        })?;
        let verification = verify(
            default_bound(m.mechanism),
            &model,
            partition.as_ref(),
            epsilon,
            &opts,
        )?;
        outputs.push(AuditOutput {
            config_hash: config_hash(&json!({
                "model": model_hash("audit", m, &inputs, epsilon),
                "runs": args.runs,
            })),
            mechanism: m.mechanism,
            epsilon,
            report,
            verification,
        });
    }
    if outputs.len() == 1 {
        write_json(&args.output, &outputs[0])?;
    } else {
        write_json(&args.output, &outputs)?;
    }
    if let Some(csv) = &args.csv {
        let mut out = create(csv)?;
        writeln!(
            out,
            "epsilon,N_x_q1,N_x_median,N_x_q3,S_x_q1,S_x_median,S_x_q3,S*_y_q1,S*_y_median,S*_y_q3"
        )?;
        for o in &outputs {
            let a = &o.report.aggregates;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                o.epsilon,
                a.n_x.q1,
                a.n_x.median,
                a.n_x.q3,
                a.s_x.q1,
                a.s_x.median,
                a.s_x.q3,
                a.s_star_y.q1,
                a.s_star_y.median,
                a.s_star_y.q3
            )?;
        }
        out.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct VerifyOutput {
    config_hash: String,
    mechanism: Mechanism,
    #[serde(flatten)]
    result: DpVerificationResult,
}

pub fn verify_dp(args: &VerifyArgs) -> Result<ExitCode> {
    let m = &args.model;
    let inputs = Inputs::load(&m.vocab, m.freq.as_deref(), &m.embeddings)?;
    let partition = inputs.partition(m)?;
    let bound = args.bound.unwrap_or(default_bound(m.mechanism));
    let opts = VerifyOptions {
        exhaustive_cap: args.exhaustive_cap,
        sampled_pairs: args.sampled_pairs,
        seed: m.seed,
    };
    let mut outputs = Vec::new();
    for &epsilon in &m.epsilons {
        let (model, _) = build_model(m, &inputs, partition.as_ref(), epsilon)?;
        let result = verify(
            bound,
            &model,
            partition.as_ref(),
            args.ldp_epsilon.unwrap_or(epsilon),
            &opts,
        )?;
        outputs.push(VerifyOutput {
            config_hash: config_hash(&json!({
                "model": model_hash("verify-dp", m, &inputs, epsilon),
                "bound": bound,
                "ldp_epsilon": args.ldp_epsilon,
                "exhaustive_cap": args.exhaustive_cap,
                "sampled_pairs": args.sampled_pairs,
            })),
            mechanism: m.mechanism,
            result,
        });
    }
    let all_passed = outputs.iter().all(|o| o.result.passed);
    if outputs.len() == 1 {
        emit_json(args.output.as_deref(), &outputs[0])?;
    } else {
        emit_json(args.output.as_deref(), &outputs)?;
    }
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn token_strings(corpus: &Corpus, mode: TokenizerMode) -> Vec<Vec<String>> {
    corpus
        .tokenize(mode)
        .into_iter()
        .map(|doc| doc.into_iter().map(|t| t.into_string()).collect())
        .collect()
}

pub fn attack_eval(args: &AttackArgs) -> Result<ExitCode> {
    let mode: TokenizerMode = args.corpus.tokenizer.into();
    let format = corpus_format(&args.corpus);
    let raw_corpus = load_corpus(&args.corpus)?;
    let raw = token_strings(&raw_corpus, mode);

    let predictor = match args.predictor {
        PredictorKind::External => {
            let path = args
                .predictions
                .as_ref()
                .context("--predictor external needs --predictions")?;
            Predictor::load_external(path)?
        }
        kind => {
            let public = match &args.public {
                Some(p) => token_strings(&read_corpus(p, format)?, mode),
                None => raw.clone(),
            };
            let order = if kind == PredictorKind::Unigram {
                1
            } else {
                args.order
            };
            train_ngram_predictor(&public, order)?
        }
    };

    let mut reports: Vec<AttackReport> = Vec::new();
    let mut hash_inputs = json!({
        "command": "attack-eval",
        "predictor": args.predictor,
        "order": args.order,
        "tokenizer": args.corpus.tokenizer,
    });
    if let Some(path) = &args.sanitized {
        let sanitized = token_strings(&read_corpus(path, format)?, TokenizerMode::Pretokenized);
        reports.push(run_attack(&raw, &sanitized, &predictor)?);
    } else if args.epsilons.is_empty() {
        bail!("attack-eval needs --sanitized or at least one --epsilon");
    } else {
        let vocab = args
            .vocab
            .as_ref()
            .context("an epsilon sweep needs --vocab")?;
        let emb = args
            .embeddings
            .as_ref()
            .context("an epsilon sweep needs --embeddings")?;
        let model_args = ModelArgs {
            vocab: vocab.clone(),
            freq: args.freq.clone(),
            embeddings: emb.clone(),
            mechanism: args.mechanism,
            epsilons: args.epsilons.clone(),
            p: args.p,
            w: args.w,
            seed: args.seed,
            mem_budget: args.mem_budget,
            model: None,
        };
        let inputs = Inputs::load(vocab, args.freq.as_deref(), emb)?;
        let partition = inputs.partition(&model_args)?;
        hash_inputs["mechanism"] = json!(args.mechanism);
        hash_inputs["p"] = json!(args.p);
        hash_inputs["w"] = json!(args.w);
        hash_inputs["seed"] = json!(args.seed);
        hash_inputs["inputs"] = inputs.base_hash();

        // the unsanitized baseline comes first
        reports.push(run_attack(&raw, &raw, &predictor)?);
        for &epsilon in &args.epsilons {
            let (model, _) = build_model(&model_args, &inputs, partition.as_ref(), epsilon)?;
            let out = sanitize_corpus(&raw_corpus, &inputs.vocab, &model, mode, args.seed);
            let mut report = run_attack(&raw, &out.tokens, &predictor)?;
            report.epsilon = Some(epsilon);
            reports.push(report);
        }
    }
    hash_inputs["epsilons"] = json!(args.epsilons);
    let hash = config_hash(&hash_inputs);
    if reports.len() == 1 {
        let mut value = serde_json::to_value(&reports[0])?;
        value["config_hash"] = json!(hash);
        emit_json(args.output.as_deref(), &value)?;
    } else {
        emit_json(
            args.output.as_deref(),
            &json!({ "config_hash": hash, "reports": reports }),
        )?;
    }
    if let Some(csv) = &args.csv {
        let mut out = create(csv)?;
        writeln!(out, "epsilon,total_positions,matched,defense_rate")?;
        for r in &reports {
            let eps = r
                .epsilon
                .map(|e| e.to_string())
                .unwrap_or_else(|| "raw".into());
            writeln!(
                out,
                "{eps},{},{},{}",
                r.total_positions, r.matched, r.defense_rate
            )?;
        }
        out.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}
