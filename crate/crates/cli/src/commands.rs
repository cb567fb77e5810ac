//! Subcommand implementations. Each writes its outputs in full or not at all.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use eikt::bkt::BktModel;
use eikt::eval::{self, ExplainedPrediction, TrainedPipeline};
use eikt::features::{self, DifficultyTable};
use eikt::ingest::{self, CleanReport, InteractionRecord, Schema};
use eikt::tan::{Feature, TanModel};
use eikt::{Error, Result};

use crate::config::RunConfig;

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn seed_header(seed: u64) -> String {
    format!("#seed={seed}\n")
}

fn read_interactions(path: &Path) -> Result<Vec<InteractionRecord>> {
    let records = ingest::read_normalized(BufReader::new(open(path)?))?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    log::info!(
        "read {} interactions from {}",
        records.len(),
        path.display()
    );
    Ok(records)
}

fn load_pipeline(cfg: &RunConfig) -> Result<TrainedPipeline> {
    let bkt = BktModel::read(BufReader::new(open(&cfg.paths.bkt_model)?))?;
    let difficulty = DifficultyTable::read(BufReader::new(open(&cfg.paths.difficulty)?))?;
    let tan = TanModel::read(BufReader::new(open(&cfg.paths.tan_model)?))?;
    Ok(TrainedPipeline {
        bkt,
        difficulty,
        tan,
    })
}

/// Row counts by cleaning outcome; `malformed` rows never reached [`ingest::clean`].
fn cleaning_counts(report: &CleanReport, malformed: usize) -> [(&'static str, usize); 9] {
    [
        ("input_rows", report.input_rows + malformed),
        ("malformed", malformed),
        ("missing_student", report.missing_student),
        ("missing_skill", report.missing_skill),
        ("missing_problem", report.missing_problem),
        ("non_original", report.non_original),
        ("exact_duplicate", report.exact_duplicates),
        ("repeat_attempt", report.repeat_attempts),
        ("kept", report.kept),
    ]
}

pub fn cleaning_report_csv(report: &CleanReport, malformed: usize, seed: u64) -> String {
    let mut out = seed_header(seed);
    out.push_str("reason,count\n");
    for (reason, count) in cleaning_counts(report, malformed) {
        let _ = writeln!(out, "{reason},{count}");
    }
    out
}

pub fn ingest(cfg: &RunConfig, normalized: bool) -> Result<()> {
    let input =
        cfg.paths.input.as_deref().ok_or_else(|| {
            Error::Config("no input file; pass --input or set paths.input".into())
        })?;
    let file = open(input)?;
    let empty = file.metadata().map_err(|e| Error::io(input, e))?.len() == 0;
    if empty {
        return Err(Error::InvalidInput(format!(
            "{}: input file is empty",
            input.display()
        )));
    }
    let schema = if normalized {
        Schema::normalized()
    } else {
        cfg.schema.clone()
    };
    let parsed = ingest::parse_interactions(BufReader::new(file), &schema)?;
    for issue in &parsed.issues {
        log::warn!("{}:{}: {}", input.display(), issue.line, issue.message);
    }
    let malformed = parsed.issues.len();
    let cleaned = ingest::clean(parsed.rows);
    if cleaned.records.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut normalized_out = seed_header(cfg.seed).into_bytes();
    ingest::write_normalized(&cleaned.records, &mut normalized_out)?;
    write_file(&cfg.paths.interactions, &normalized_out)?;
    let report = cleaning_report_csv(&cleaned.report, malformed, cfg.seed);
    write_file(&cfg.paths.cleaning_report, report.as_bytes())?;

    let counts: Vec<String> = cleaning_counts(&cleaned.report, malformed)
        .iter()
        .map(|(reason, count)| format!("{reason}={count}"))
        .collect();
    println!("{}", counts.join(" "));
    println!("wrote {}", cfg.paths.interactions.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let records = read_interactions(&cfg.paths.interactions)?;
    let refs: Vec<&InteractionRecord> = records.iter().collect();
    let pipeline = eval::train_pipeline(&refs, cfg.seed, &cfg.pipeline)?;
    write_file(&cfg.paths.bkt_model, pipeline.bkt.to_text().as_bytes())?;
    write_file(
        &cfg.paths.difficulty,
        pipeline.difficulty.to_text().as_bytes(),
    )?;
    write_file(&cfg.paths.tan_model, pipeline.tan.to_text().as_bytes())?;
    println!(
        "trained on {} interactions: {} skills, {} rated problems",
        records.len(),
        pipeline.bkt.skills.len(),
        pipeline.difficulty.levels.len()
    );
    for &f in pipeline.tan.structure.order() {
        match pipeline.tan.structure.parent(f) {
            Some(p) => println!("  {p} -> {f}"),
            None => println!("  {f} (root)"),
        }
    }
    Ok(())
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let records = read_interactions(&cfg.paths.interactions)?;
    let report = eval::cross_validate(&records, cfg.folds, cfg.seed, &cfg.pipeline)?;
    write_file(&cfg.paths.report_csv, report.to_csv().as_bytes())?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize report: {e}")))?;
    write_file(&cfg.paths.report_json, format!("{json}\n").as_bytes())?;
    print!("{}", report.to_table());
    Ok(())
}

/// Column names of the prediction file, in order.
pub fn prediction_header() -> Vec<String> {
    let mut cols: Vec<String> = [
        "student",
        "seq_index",
        "skill",
        "problem",
        "label",
        "mastery",
        "sr_profile",
        "df_profile",
        "difficulty",
        "mastery_bin",
        "sr_bin",
        "df_bin",
        "prior_y0",
        "prior_y1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for f in Feature::ALL {
        cols.push(format!("{f}_y0"));
        cols.push(format!("{f}_y1"));
    }
    cols.extend(["joint_y0", "joint_y1", "score"].map(String::from));
    cols
}

fn prediction_record(p: &ExplainedPrediction) -> Vec<String> {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    let e = &p.explanation;
    let mut rec = vec![
        p.row.student.to_string(),
        p.row.seq_index.to_string(),
        p.row.skill.to_string(),
        p.problem.to_string(),
        u8::from(p.row.label).to_string(),
        p.values.mastery.to_string(),
        opt(p.values.sr_profile),
        opt(p.values.df_profile),
        p.values.difficulty.to_string(),
        p.row.mastery_bin.to_string(),
        p.row.sr_bin.to_string(),
        p.row.df_bin.to_string(),
        e.prior[0].to_string(),
        e.prior[1].to_string(),
    ];
    for f in Feature::ALL {
        let factor = e
            .factors
            .iter()
            .find(|x| x.feature == f)
            .expect("explanations cover every feature");
        rec.push(factor.probs[0].to_string());
        rec.push(factor.probs[1].to_string());
    }
    rec.push(e.joint[0].to_string());
    rec.push(e.joint[1].to_string());
    rec.push(e.score.to_string());
    rec
}

pub fn predict(cfg: &RunConfig, history: &Path, output: Option<&Path>) -> Result<()> {
    let pipeline = load_pipeline(cfg)?;
    let records = read_interactions(history)?;
    let explained = pipeline.explain(&records)?;

    let seed = pipeline.tan.seed.unwrap_or(cfg.seed);
    let mut buf = seed_header(seed).into_bytes();
    {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        writer.write_record(prediction_header())?;
        for p in &explained {
            writer.write_record(prediction_record(p))?;
        }
        writer.flush().map_err(|e| Error::io("<predictions>", e))?;
    }
    match output {
        Some(path) => write_file(path, &buf)?,
        None => std::io::stdout()
            .write_all(&buf)
            .map_err(|e| Error::io("<stdout>", e))?,
    }
    Ok(())
}

pub fn inspect(cfg: &RunConfig, features_out: Option<&Path>) -> Result<()> {
    let tan = TanModel::read(BufReader::new(open(&cfg.paths.tan_model)?))?;
    if let Some(seed) = tan.seed {
        println!("seed {seed}");
    }
    print!("{}", tan.describe());
    if let Some(path) = features_out {
        let pipeline = load_pipeline(cfg)?;
        let records = read_interactions(&cfg.paths.interactions)?;
        let rows = features::build_evidence_rows(
            &records,
            &pipeline.difficulty,
            &pipeline.bkt,
            pipeline.bins(),
        )?;
        let mut buf = seed_header(tan.seed.unwrap_or(cfg.seed)).into_bytes();
        features::write_feature_dump(&rows, &mut buf)?;
        write_file(path, &buf)?;
    }
    Ok(())
}
