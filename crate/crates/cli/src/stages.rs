//! Pipeline stages. Each stage reads its inputs from files, writes its
//! outputs under the output directory and records a manifest in
//! `manifests/<stage>.json`, so running the stages one by one produces the
//! same files as `pipeline`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use emrkg_core::corpus::{
    from_bio, read_bio, segment, split_dataset, to_bio, write_bio, BioSentence, DatasetSplit, EntitySchema,
};
use emrkg_core::derm::{augment_epoch, provenance_lines, EntityDictionary};
use emrkg_core::fusion::{align, align_graph, fuse, Alignment, TfIdfIndex};
use emrkg_core::graph::{self, KnowledgeGraph};
use emrkg_core::kb::{insert_into_graph, load_kb, KbEntityType};
use emrkg_core::metrics::{count_matches, precision_recall_f1, report_table};
use emrkg_core::seed::derive_named_seed;
use emrkg_core::tagger::{augmentation_seed, predict, train, TaggerModel, TrainConfig};

use crate::config::{EntitySource, PipelineConfig};
use crate::emr::{
    gold_entities, load_records, predict_entities, read_entities, record_files, write_entities, EntityRow,
};
use crate::manifest::{output_key, Manifest};
use crate::DataError;

/// Output locations, relative to the output directory.
pub mod files {
    pub const CORPUS_BIO: &str = "corpus.bio";
    pub const TRAIN_BIO: &str = "split/train.bio";
    pub const VALID_BIO: &str = "split/valid.bio";
    pub const TEST_BIO: &str = "split/test.bio";
    pub const DICTIONARY: &str = "split/dictionary.tsv";
    pub const AUGMENTED_BIO: &str = "augment/train.epoch1.bio";
    pub const AUGMENT_PROVENANCE: &str = "augment/train.epoch1.provenance.tsv";
    pub const TRAIN_LOG: &str = "train_log.tsv";
    pub const ENTITIES: &str = "entities.tsv";
    pub const EVAL_TABLE: &str = "eval/report.txt";
    pub const EVAL_JSON: &str = "eval/report.json";
    pub const KB_GRAPH: &str = "kb_graph.json";
    pub const PRE_FUSION_GRAPH: &str = "graph_pre_fusion.json";
    pub const ALIGNMENTS: &str = "alignments.tsv";
    pub const GRAPH: &str = "graph.json";
    pub const FUSION_REPORT: &str = "fusion_report.tsv";
    pub const CYPHER: &str = "export/graph.cypher";
    pub const EXPORT_DIR: &str = "export";
    pub const MANIFEST: &str = "manifest.json";
}

/// Per-stage seeds, all derived from the configured seed.
pub fn stage_seeds(seed: u64) -> BTreeMap<String, u64> {
    ["split", "train"].iter().map(|s| (s.to_string(), derive_named_seed(seed, s))).collect()
}

pub struct Context {
    pub config: PipelineConfig,
    pub schema: EntitySchema,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let schema = config.entity_schema()?;
        let out = config.paths.output_dir.clone();
        std::fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
        Ok(Self { config, schema, out })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn seed(&self, stage: &str) -> u64 {
        stage_seeds(self.config.seed)[stage]
    }

    fn write(&self, rel: &str, content: &str) -> Result<PathBuf> {
        write_file(&self.path(rel), content)
    }

    fn read(&self, rel: &str) -> Result<String> {
        let p = self.path(rel);
        std::fs::read_to_string(&p).with_context(|| format!("reading {} (run the earlier stage first)", p.display()))
    }

    fn manifest(&self, stage: &str) -> Manifest {
        let mut m = Manifest::new(stage, &self.config);
        m.stage_seeds = stage_seeds(self.config.seed);
        m
    }

    fn finish(&self, stage: &str, m: &mut Manifest, outputs: &[PathBuf]) -> Result<()> {
        for o in outputs {
            m.add_output(&self.out, o)?;
        }
        m.write(&self.path(&format!("manifests/{stage}.json")))
    }
}

fn write_file(path: &Path, content: &str) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn read_sentences(ctx: &Context, rel: &str) -> Result<Vec<BioSentence>> {
    read_bio(&ctx.read(rel)?).with_context(|| rel.to_string())
}

/// Standoff annotations to one BIO file over all records.
pub fn convert(ctx: &Context) -> Result<()> {
    let mut m = ctx.manifest("convert");
    let records = load_records(&ctx.config.paths.corpus_dir, &ctx.schema, true)?;
    let mut sentences = Vec::new();
    for r in &records {
        let segments = segment(&r.doc, ctx.config.schema.max_len).with_context(|| r.doc.doc_id.clone())?;
        sentences.extend(to_bio(&segments)?);
    }
    let rejected: usize = records.iter().map(|r| r.doc.rejected.len()).sum();
    log::info!(
        "convert: {} records, {} sentences, {rejected} overlapping spans rejected",
        records.len(),
        sentences.len()
    );
    for f in record_files(&ctx.config.paths.corpus_dir)? {
        m.add_input(&ctx.out, &f)?;
    }
    let out = ctx.write(files::CORPUS_BIO, &write_bio(&sentences))?;
    ctx.finish("convert", &mut m, &[out])
}

/// Entity dictionary for augmentation: training-split surfaces plus the
/// knowledge-base names of entity types the schema shares with it.
pub fn training_dictionary(train: &[BioSentence], kb_file: &Path, schema: &EntitySchema) -> Result<EntityDictionary> {
    let mut dict = EntityDictionary::default();
    for s in train {
        for span in from_bio(s)? {
            let surface = s.surface(&span);
            if !surface.contains(emrkg_core::derm::MASK_TOKEN) {
                dict.insert(&span.label, &surface);
            }
        }
    }
    let kb = load_kb(kb_file)?;
    for t in [KbEntityType::Disease, KbEntityType::Symptom] {
        if schema.contains(t.label()) {
            for name in kb.catalogs.get(t) {
                dict.insert(t.label(), name);
            }
        }
    }
    Ok(dict)
}

/// 8:1:1 split plus the augmentation dictionary of the training part.
pub fn split(ctx: &Context) -> Result<()> {
    let mut m = ctx.manifest("split");
    let sentences = read_sentences(ctx, files::CORPUS_BIO)?;
    let DatasetSplit { train, validation, test, .. } = split_dataset(sentences, ctx.seed("split"))?;
    log::info!("split: {} train, {} validation, {} test", train.len(), validation.len(), test.len());
    let dict = training_dictionary(&train, &ctx.config.paths.kb_file, &ctx.schema)?;
    m.add_input(&ctx.out, &ctx.path(files::CORPUS_BIO))?;
    m.add_input(&ctx.out, &ctx.config.paths.kb_file)?;
    let outputs = vec![
        ctx.write(files::TRAIN_BIO, &write_bio(&train))?,
        ctx.write(files::VALID_BIO, &write_bio(&validation))?,
        ctx.write(files::TEST_BIO, &write_bio(&test))?,
        ctx.write(files::DICTIONARY, &dict.to_tsv())?,
    ];
    ctx.finish("split", &mut m, &outputs)
}

fn read_dictionary(ctx: &Context) -> Result<EntityDictionary> {
    Ok(EntityDictionary::parse(&ctx.read(files::DICTIONARY)?, &ctx.schema)?)
}

/// Writes the augmented training set exactly as training sees it before
/// its first epoch, with one provenance line per sentence.
pub fn augment(ctx: &Context) -> Result<()> {
    let mut m = ctx.manifest("augment");
    let train = read_sentences(ctx, files::TRAIN_BIO)?;
    let dict = read_dictionary(ctx)?;
    ctx.config.derm.validate()?;
    let outcomes = augment_epoch(&train, &dict, &ctx.config.derm, augmentation_seed(ctx.seed("train"), 1));
    let augmented: Vec<BioSentence> = outcomes.iter().map(|o| o.sentence.clone()).collect();
    m.add_input(&ctx.out, &ctx.path(files::TRAIN_BIO))?;
    m.add_input(&ctx.out, &ctx.path(files::DICTIONARY))?;
    let outputs = vec![
        ctx.write(files::AUGMENTED_BIO, &write_bio(&augmented))?,
        ctx.write(files::AUGMENT_PROVENANCE, &provenance_lines(&outcomes))?,
    ];
    ctx.finish("augment", &mut m, &outputs)
}

pub fn train_stage(ctx: &Context) -> Result<()> {
    let mut m = ctx.manifest("train");
    let split = DatasetSplit {
        train: read_sentences(ctx, files::TRAIN_BIO)?,
        validation: read_sentences(ctx, files::VALID_BIO)?,
        test: Vec::new(),
        seed: ctx.seed("split"),
    };
    let dict = read_dictionary(ctx)?;
    let config = TrainConfig { seed: ctx.seed("train"), ..ctx.config.train.clone() };
    let outcome = train(&split, &dict, &ctx.schema, &config, &ctx.config.derm)?;
    log::info!("train: kept epoch {} of {}", outcome.best_epoch, config.epochs);

    let mut log_text = String::from("epoch\tloss\tprecision\trecall\tf1\n");
    for r in &outcome.log {
        log_text.push_str(&format!("{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n", r.epoch, r.loss, r.precision, r.recall, r.f1));
    }
    let model_path = ctx.config.model_path();
    if let Some(parent) = model_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    outcome.model.save(&model_path)?;
    for f in [files::TRAIN_BIO, files::VALID_BIO, files::DICTIONARY] {
        m.add_input(&ctx.out, &ctx.path(f))?;
    }
    let outputs = vec![model_path, ctx.write(files::TRAIN_LOG, &log_text)?];
    ctx.finish("train", &mut m, &outputs)
}

fn load_model(ctx: &Context) -> Result<TaggerModel> {
    let path = ctx.config.model_path();
    TaggerModel::load(&path).with_context(|| format!("loading model {}", path.display()))
}

/// Recognizes entities in every record text with the trained model.
pub fn tag(ctx: &Context) -> Result<()> {
    let mut m = ctx.manifest("tag");
    let model = load_model(ctx)?;
    let records = load_records(&ctx.config.paths.corpus_dir, &ctx.schema, false)?;
    let rows = predict_entities(&model, &records, ctx.config.schema.max_len)?;
    log::info!("tag: {} entities in {} records", rows.len(), records.len());
    m.add_input(&ctx.out, &ctx.config.model_path())?;
    for f in record_files(&ctx.config.paths.corpus_dir)? {
        if f.extension().is_some_and(|e| e == "txt") {
            m.add_input(&ctx.out, &f)?;
        }
    }
    let out = ctx.write(files::ENTITIES, &write_entities(&rows))?;
    ctx.finish("tag", &mut m, &[out])
}

/// Scores the model on the test split.
pub fn evaluate(ctx: &Context) -> Result<()> {
    let mut m = ctx.manifest("evaluate");
    let model = load_model(ctx)?;
    let gold = read_sentences(ctx, files::TEST_BIO)?;
    let predicted = predict(&model, &gold)?;
    let report = precision_recall_f1(&count_matches(&gold, &predicted, &ctx.schema)?);
    log::info!("evaluate: micro F1 {:.4} on {} sentences", report.micro.f1, gold.len());
    m.add_input(&ctx.out, &ctx.config.model_path())?;
    m.add_input(&ctx.out, &ctx.path(files::TEST_BIO))?;
    let outputs = vec![
        ctx.write(files::EVAL_TABLE, &report_table(&report))?,
        ctx.write(files::EVAL_JSON, &(serde_json::to_string_pretty(&report)? + "\n"))?,
    ];
    ctx.finish("evaluate", &mut m, &outputs)
}

pub fn kb_load(ctx: &Context) -> Result<()> {
    let mut m = ctx.manifest("kb-load");
    let kb = load_kb(&ctx.config.paths.kb_file)?;
    let mut g = KnowledgeGraph::new(graph::GraphSchema::new(&ctx.schema));
    insert_into_graph(&kb, &mut g)?;
    log::info!("kb-load: {} diseases, {} nodes, {} triples", kb.entries.len(), g.node_count(), g.triple_count());
    m.add_input(&ctx.out, &ctx.config.paths.kb_file)?;
    let out = ctx.write(files::KB_GRAPH, &graph::to_json(&g))?;
    ctx.finish("kb-load", &mut m, &[out])
}

fn read_graph(ctx: &Context, rel: &str) -> Result<KnowledgeGraph> {
    graph::from_json(&ctx.read(rel)?).with_context(|| rel.to_string())
}

/// Adds one patient node per record to `g`, linked to its entities.
pub fn add_patients(g: &mut KnowledgeGraph, records: &[crate::emr::EmrRecord], rows: &[EntityRow]) -> Result<()> {
    let mut by_doc: BTreeMap<&str, BTreeSet<(String, String)>> = BTreeMap::new();
    for r in rows {
        by_doc.entry(&r.doc_id).or_default().insert((r.label.clone(), r.surface.clone()));
    }
    for rec in records {
        let entities: Vec<(String, String)> =
            by_doc.get(rec.doc.doc_id.as_str()).map(|s| s.iter().cloned().collect()).unwrap_or_default();
        g.add_patient_record(&rec.doc.doc_id, rec.meta.clone(), &entities)?;
    }
    Ok(())
}

fn alignment_table(alignments: &[Alignment]) -> String {
    let mut out = String::from("label\tsource\ttarget\tsimilarity\n");
    for a in alignments {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\n",
            a.label,
            a.source,
            a.target.as_deref().unwrap_or("-"),
            a.similarity
        ));
    }
    out
}

fn read_alignment_table(text: &str, threshold: f64) -> Result<Vec<Alignment>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(DataError(format!("alignment table line {}: expected 4 fields", i + 1)).into());
        }
        let similarity =
            f[3].parse().map_err(|_| DataError(format!("alignment table line {}: bad similarity", i + 1)))?;
        out.push(Alignment {
            label: f[0].into(),
            source: f[1].into(),
            target: (f[2] != "-").then(|| f[2].to_string()),
            similarity,
            threshold,
        });
    }
    Ok(out)
}

/// Builds the pre-fusion graph (knowledge base plus patients) and aligns
/// its EMR-side nodes to knowledge-base names.
pub fn align_stage(ctx: &Context) -> Result<()> {
    let mut m = ctx.manifest("align");
    let mut g = read_graph(ctx, files::KB_GRAPH)?;
    m.add_input(&ctx.out, &ctx.path(files::KB_GRAPH))?;
    let rows = match ctx.config.graph.entity_source {
        EntitySource::Predicted => {
            m.add_input(&ctx.out, &ctx.path(files::ENTITIES))?;
            read_entities(&ctx.read(files::ENTITIES)?)?
        }
        EntitySource::Gold => gold_entities(&load_records(&ctx.config.paths.corpus_dir, &ctx.schema, true)?),
    };
    let records = load_records(&ctx.config.paths.corpus_dir, &ctx.schema, false)?;
    for f in record_files(&ctx.config.paths.corpus_dir)? {
        m.add_input(&ctx.out, &f)?;
    }
    add_patients(&mut g, &records, &rows)?;
    let alignments = align_graph(&g, &ctx.config.fusion)?;
    let matched = alignments.iter().filter(|a| a.target.is_some()).count();
    log::info!("align: {matched} of {} EMR nodes matched", alignments.len());
    let outputs = vec![
        ctx.write(files::PRE_FUSION_GRAPH, &graph::to_json(&g))?,
        ctx.write(files::ALIGNMENTS, &alignment_table(&alignments))?,
    ];
    ctx.finish("align", &mut m, &outputs)
}

/// Aligns an arbitrary list of names (one per line) against the
/// knowledge-base catalog of `label`.
pub fn align_names(
    kb_file: &Path,
    label: &str,
    names: &str,
    config: &emrkg_core::fusion::FusionConfig,
) -> Result<String> {
    config.validate()?;
    let kb = load_kb(kb_file)?;
    let t = emrkg_core::kb::KbEntityType::ALL
        .into_iter()
        .find(|t| t.label() == label)
        .ok_or_else(|| DataError(format!("{label} is not a knowledge-base entity type")))?;
    let catalog: Vec<&str> = kb.catalogs.get(t).collect();
    let index = TfIdfIndex::build(&catalog, &config.ngram_orders)?;
    let alignments: Vec<Alignment> = names
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|n| align(label, n, &index, config.threshold))
        .collect();
    Ok(alignment_table(&alignments))
}

pub fn fuse_stage(ctx: &Context) -> Result<()> {
    let mut m = ctx.manifest("fuse");
    let mut g = read_graph(ctx, files::PRE_FUSION_GRAPH)?;
    let alignments = read_alignment_table(&ctx.read(files::ALIGNMENTS)?, ctx.config.fusion.threshold)?;
    let report = fuse(&mut g, &alignments)?;
    log::info!(
        "fuse: {} nodes merged, {} left unmatched; graph has {} nodes and {} triples",
        report.merged.len(),
        report.unmatched.len(),
        g.node_count(),
        g.triple_count()
    );
    let mut table = String::from("status\tlabel\tsource\ttarget\n");
    for (label, source, target, _) in &report.merged {
        table.push_str(&format!("merged\t{label}\t{source}\t{target}\n"));
    }
    for (label, source) in &report.unmatched {
        table.push_str(&format!("unmatched\t{label}\t{source}\t-\n"));
    }
    m.add_input(&ctx.out, &ctx.path(files::PRE_FUSION_GRAPH))?;
    m.add_input(&ctx.out, &ctx.path(files::ALIGNMENTS))?;
    let outputs = vec![ctx.write(files::GRAPH, &graph::to_json(&g))?, ctx.write(files::FUSION_REPORT, &table)?];
    ctx.finish("fuse", &mut m, &outputs)
}

pub fn export(ctx: &Context) -> Result<()> {
    let mut m = ctx.manifest("export");
    let g = read_graph(ctx, files::GRAPH)?;
    let dir = ctx.path(files::EXPORT_DIR);
    std::fs::create_dir_all(&dir)?;
    let statements = graph::export_cypher(&g, ctx.path(files::CYPHER))?;
    graph::export_csv(&g, &dir)?;
    log::info!("export: {statements} Cypher statements");
    m.add_input(&ctx.out, &ctx.path(files::GRAPH))?;
    let outputs = vec![ctx.path(files::CYPHER), dir.join(graph::CSV_NODES), dir.join(graph::CSV_RELS)];
    ctx.finish("export", &mut m, &outputs)
}

/// Every stage in order, then a combined manifest.
pub fn pipeline(ctx: &Context) -> Result<()> {
    type Step = fn(&Context) -> Result<()>;
    let steps: [(&str, Step); 10] = [
        ("convert", convert),
        ("split", split),
        ("augment", augment),
        ("train", train_stage),
        ("tag", tag),
        ("evaluate", evaluate),
        ("kb-load", kb_load),
        ("align", align_stage),
        ("fuse", fuse_stage),
        ("export", export),
    ];
    for (name, step) in steps {
        log::info!("pipeline: running {name}");
        step(ctx).with_context(|| name.to_string())?;
    }
    let mut combined = ctx.manifest("pipeline");
    for (name, _) in steps {
        let text = ctx.read(&format!("manifests/{name}.json"))?;
        let stage: serde_json::Value = serde_json::from_str(&text)?;
        for (key, field) in [("inputs", &mut combined.inputs), ("outputs", &mut combined.outputs)] {
            if let Some(obj) = stage[key].as_object() {
                for (k, v) in obj {
                    field.insert(k.clone(), v.as_str().unwrap_or_default().to_string());
                }
            }
        }
    }
    // Intermediate files are outputs, not inputs, of the whole run.
    let produced: BTreeSet<String> = combined.outputs.keys().map(|k| output_key(k)).collect();
    combined.inputs.retain(|k, _| !produced.contains(k));
    combined.write(&ctx.path(files::MANIFEST))
}
