//! The pipeline commands behind the CLI. Each one reads its inputs from the
//! configured paths, writes outputs atomically and returns a short summary.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::clustering::{cluster_corpus, ClusterTable};
use crate::config::PipelineConfig;
use crate::dn::{batch_rng, run_simulation_with_rng, Termination};
use crate::fsutil::write_atomic;
use crate::label::{CharacterId, SentimentLabel};
use crate::metrics::{
    self, nli_score, render_dialogue_records, render_summary_table, sentiment_consistency,
    split_sentences, summarize, DialogueMetrics, MetricError,
};
use crate::orchestration::{generate_script, Script};
use crate::preprocess::{
    emit_training_file, expand_instances, load_corpus, parse_script, training_file_name,
};
use crate::Error;

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    write_atomic(path, contents.as_bytes())
        .map_err(|e| Error::input(format!("writing {}: {e}", path.display())))
}

fn require_dir(path: &Path, what: &str) -> Result<(), Error> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::config(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

pub fn cmd_cluster(config: &PipelineConfig) -> Result<String, Error> {
    require_dir(&config.paths.corpus_dir, "corpus dir")?;
    let corpus = load_corpus(&config.paths.corpus_dir)?;
    let adapters = config.build_adapters()?;
    let table = cluster_corpus(
        &corpus,
        adapters.sentiment.as_ref(),
        config.clustering.pool_across_scripts,
    )?;
    let path = config.paths.cluster_table();
    write(&path, &table.to_tsv())?;
    let sizes: Vec<String> = SentimentLabel::ALL
        .iter()
        .map(|l| format!("{l}={}", table.members(*l).len()))
        .collect();
    Ok(format!(
        "clustered {} characters from {} scripts ({}) -> {}",
        table.len(),
        corpus.len(),
        sizes.join(", "),
        path.display()
    ))
}

pub fn cmd_preprocess(config: &PipelineConfig) -> Result<String, Error> {
    require_dir(&config.paths.corpus_dir, "corpus dir")?;
    let table_path = config.paths.cluster_table();
    let table_text = fs::read_to_string(&table_path).map_err(|e| {
        Error::config(format!(
            "reading cluster table {} (run `cluster` first): {e}",
            table_path.display()
        ))
    })?;
    let table = ClusterTable::from_tsv(&table_text)?;
    let corpus = load_corpus(&config.paths.corpus_dir)?;
    let dir = config.paths.training_dir();
    let mut counts = Vec::new();
    for cluster in SentimentLabel::ALL {
        let per_script = corpus
            .par_iter()
            .map(|s| expand_instances(s, &table.clusters_for_script(&s.script_id), cluster))
            .collect::<Result<Vec<_>, _>>()?;
        let instances: Vec<_> = per_script.into_iter().flatten().collect();
        emit_training_file(&instances, cluster, &dir.join(training_file_name(cluster)))?;
        counts.push(format!("{cluster}={}", instances.len()));
    }
    Ok(format!(
        "wrote training instances ({}) -> {}",
        counts.join(", "),
        dir.display()
    ))
}

/// Summary of a batch of simulations.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub runs: usize,
    pub mean_lines: f64,
    pub capped: usize,
}

/// Runs `count` simulations, run `i` drawing from ChaCha stream `i` of `config.rng_seed`.
pub fn simulate_batch(
    config: &PipelineConfig,
    count: usize,
) -> Result<Vec<(crate::dn::TurnSchedule, crate::dn::NetworkState)>, Error> {
    let characters: Vec<(CharacterId, SentimentLabel)> = config
        .generate
        .roster
        .iter()
        .map(|r| (r.id.clone(), r.cluster))
        .collect();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = batch_rng(config.dn.rng_seed, i as u64);
            run_simulation_with_rng(&characters, &config.dn, &mut rng).map_err(Error::from)
        })
        .collect()
}

pub fn cmd_simulate(config: &PipelineConfig) -> Result<(SimulationSummary, String), Error> {
    let count = config.simulate.count;
    if count == 0 {
        return Err(Error::config("simulate.count must be at least 1"));
    }
    let runs = simulate_batch(config, count)?;

    let rendered: Vec<(String, String, String)> = runs
        .par_iter()
        .enumerate()
        .map(|(i, (schedule, net))| {
            let mut turns = String::new();
            for line in schedule.to_records().lines() {
                turns.push_str(&format!("{i}\t{line}\n"));
            }
            let run = format!(
                "{i}\t{}\t{}\t{}\n",
                schedule.len(),
                schedule.exchange_lengths().len(),
                schedule.terminated_by
            );
            let mut state = String::new();
            for c in net.characters() {
                let loyalty: Vec<String> = c
                    .addressees
                    .iter()
                    .zip(&c.loyalty)
                    .map(|(a, w)| format!("{a}={w}"))
                    .collect();
                state.push_str(&format!(
                    "{i}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    c.id,
                    c.cluster,
                    c.centrality,
                    c.lines_spoken,
                    c.reciprocity_current,
                    loyalty.join(";")
                ));
            }
            (turns, run, state)
        })
        .collect();

    let mut schedules = String::from("run\texchange_index\tspeaker_id\taddressee_id\n");
    let mut summary_rows = String::from("run\tlines\texchanges\tterminated_by\n");
    let mut network =
        String::from("run\tcharacter\tcluster\tcentrality\tlines_spoken\treciprocity\tloyalty\n");
    for (t, r, s) in &rendered {
        schedules.push_str(t);
        summary_rows.push_str(r);
        network.push_str(s);
    }
    let dir = config.paths.simulation_dir();
    write(&dir.join("schedules.tsv"), &schedules)?;
    write(&dir.join("runs.tsv"), &summary_rows)?;
    write(&dir.join("network.tsv"), &network)?;

    let total: usize = runs.iter().map(|(s, _)| s.len()).sum();
    let summary = SimulationSummary {
        runs: count,
        mean_lines: total as f64 / count as f64,
        capped: runs
            .iter()
            .filter(|(s, _)| s.terminated_by == Termination::MaxLines)
            .count(),
    };
    let msg = format!(
        "simulated {} dialogues: mean length {:.4} lines, {} hit max_lines -> {}",
        summary.runs,
        summary.mean_lines,
        summary.capped,
        dir.display()
    );
    Ok((summary, msg))
}

fn script_stem(mode: &str, i: usize) -> String {
    format!("{mode}_{i:04}")
}

pub fn cmd_generate(config: &PipelineConfig) -> Result<String, Error> {
    let g = &config.generate;
    if g.count == 0 {
        return Err(Error::config("generate.count must be at least 1"));
    }
    let adapters = config.build_adapters()?;
    let generator = adapters.generator.as_ref();
    // Nothing is written until every script succeeded.
    let scripts: Vec<Script> = (0..g.count)
        .into_par_iter()
        .map(|i| {
            let mut dn = config.dn.clone();
            dn.rng_seed = config.dn.rng_seed.wrapping_add(i as u64);
            generate_script(g.mode, &g.roster, &dn, generator, g.max_new_tokens)
                .map_err(Error::from)
        })
        .collect::<Result<_, _>>()?;

    let dir = config.paths.scripts_dir();
    let prefix = format!("{}_", g.mode);
    if dir.is_dir() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::input(e.to_string()))? {
            let p = entry.map_err(|e| Error::input(e.to_string()))?.path();
            let stale = p
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&prefix));
            if stale {
                fs::remove_file(&p)
                    .map_err(|e| Error::input(format!("removing {}: {e}", p.display())))?;
            }
        }
    }
    let mut lines = 0;
    for (i, s) in scripts.iter().enumerate() {
        let stem = script_stem(g.mode.as_str(), i);
        write(&dir.join(format!("{stem}.txt")), &s.render_text())?;
        write(&dir.join(format!("{stem}.meta.toml")), &s.render_metadata())?;
        lines += s.lines.len();
    }
    Ok(format!(
        "generated {} {} scripts ({} lines) -> {}",
        scripts.len(),
        g.mode,
        lines,
        dir.display()
    ))
}

struct LoadedDialogue {
    id: String,
    utterances: Vec<String>,
    script: Option<Script>,
}

fn load_dialogues(dir: &Path) -> Result<Vec<LoadedDialogue>, Error> {
    let entries =
        fs::read_dir(dir).map_err(|e| Error::input(format!("reading {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::input(format!(
            "no scripts (*.txt) in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().unwrap().to_string_lossy().into_owned();
            let text = fs::read_to_string(p)
                .map_err(|e| Error::input(format!("reading {}: {e}", p.display())))?;
            let meta_path = p.with_extension("meta.toml");
            let script = if meta_path.is_file() {
                let meta = fs::read_to_string(&meta_path)
                    .map_err(|e| Error::input(format!("reading {}: {e}", meta_path.display())))?;
                Some(Script::from_parts(&id, &text, &meta).map_err(Error::input)?)
            } else {
                None
            };
            let utterances = match &script {
                Some(s) => s.lines.iter().map(|l| l.text.clone()).collect(),
                None => parse_script(&id, &text)
                    .map_err(|e| Error::input(e.to_string()))?
                    .lines
                    .into_iter()
                    .map(|u| u.text)
                    .collect(),
            };
            Ok(LoadedDialogue {
                id,
                utterances,
                script,
            })
        })
        .collect()
}

/// Outputs of `evaluate`.
#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub dialogues: Vec<DialogueMetrics>,
    pub summary_table: String,
    pub sentiment_table: String,
    pub records: String,
}

pub fn evaluate_dir(config: &PipelineConfig, dir: &Path) -> Result<EvaluationReport, Error> {
    require_dir(dir, "scripts dir")?;
    let loaded = load_dialogues(dir)?;
    let adapters = config.build_adapters()?;
    let scorer = config
        .metrics
        .perplexity
        .then_some(adapters.scorer.as_ref());
    let utterances: Vec<Vec<String>> = loaded.iter().map(|d| d.utterances.clone()).collect();
    let diversity = metrics::diversity(&utterances, scorer)?;

    let nli = adapters.nli.as_ref();
    let max_context = config.metrics.max_context_chars;
    let dialogues = loaded
        .par_iter()
        .zip(diversity.per_dialogue.par_iter())
        .map(|(d, div)| {
            let nli = match nli_score(&split_sentences(&d.utterances), nli, max_context) {
                Ok(r) => Some(r),
                Err(MetricError::TooFewSentences(n)) => {
                    log::info!("{}: NLI-Score undefined for {n} sentence(s)", d.id);
                    None
                }
                Err(e) => return Err(Error::from(e)),
            };
            Ok(DialogueMetrics {
                script_id: d.id.clone(),
                model: d
                    .script
                    .as_ref()
                    .map_or("unknown".to_string(), |s| s.provenance.mode.to_string()),
                diversity: *div,
                nli,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let attributed: Vec<Script> = loaded.iter().filter_map(|d| d.script.clone()).collect();
    let matrix = sentiment_consistency(&attributed, adapters.sentiment.as_ref())?;
    Ok(EvaluationReport {
        summary_table: render_summary_table(&summarize(&dialogues)),
        sentiment_table: matrix.render(),
        records: render_dialogue_records(&dialogues),
        dialogues,
    })
}

pub fn cmd_evaluate(config: &PipelineConfig) -> Result<(EvaluationReport, String), Error> {
    let dir = config.paths.scripts_dir();
    let report = evaluate_dir(config, &dir)?;
    let out = config.paths.evaluation_dir();
    write(&out.join("dialogues.tsv"), &report.records)?;
    let summary = format!(
        "{}\nSentiment of generated utterances (rows: character cluster)\n{}",
        report.summary_table, report.sentiment_table
    );
    write(&out.join("summary.txt"), &summary)?;
    Ok((report, summary))
}
