use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use canine_core::agreement::{study_tables, BootstrapConfig, CiMethod, Coverage, TablesConfig};
use canine_core::distill::{
    evaluate_model, predict, read_manifest, split_indices, student_input, synth_generate,
    teacher_input, train_student_baseline, train_teacher, distill_student, verify_generator,
    write_manifest, DistillConfig, EpochLog, ModelArchive, Role, Sample, SplitSpec, SynthConfig,
};
use canine_core::geometry::{classify_batch, AnnotationFile, LabelSpace, MergeMap3, SectorLabel};
use canine_core::metrics::{
    confusion_from_records, evaluate, read_predictions, ConfusionMatrix, MetricReport,
    ReferenceValues,
};
use canine_core::study::read_ratings;
use canine_core::Execution;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::input(e).context(format!("cannot read {}", path.display())))
}

fn read_string(path: &Path) -> CliResult<String> {
    let mut s = String::new();
    open(path)?
        .read_to_string(&mut s)
        .map_err(|e| CliError::input(e).context(format!("cannot read {}", path.display())))?;
    Ok(s)
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => serde_json::from_str(&read_string(p)?)
            .map_err(|e| CliError::config(e).context(format!("invalid config {}", p.display()))),
    }
}

/// Writes to `path`, or stdout when absent.
fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    let result = match path {
        Some(p) => fs::write(p, bytes),
        None => io::stdout().lock().write_all(bytes),
    };
    result.map_err(|e| {
        CliError::runtime(e).context(format!(
            "cannot write {}",
            path.map_or("stdout".into(), |p| p.display().to_string())
        ))
    })
}

fn json_line<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    serde_json::to_writer(&mut *out, value).expect("serializable");
    out.push(b'\n');
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable");
    v.push(b'\n');
    v
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum AnnotationInput {
    Many(Vec<AnnotationFile>),
    One(AnnotationFile),
}

/// Reads one annotation document, an array of them, or a stream of
/// concatenated documents (e.g. JSON lines).
pub fn read_annotations(text: &str) -> Result<Vec<AnnotationFile>, serde_json::Error> {
    let mut files = Vec::new();
    for doc in serde_json::Deserializer::from_str(text).into_iter::<AnnotationInput>() {
        match doc? {
            AnnotationInput::Many(v) => files.extend(v),
            AnnotationInput::One(f) => files.push(f),
        }
    }
    Ok(files)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ClassifyRow {
    pub radiograph_id: String,
    pub case_id: String,
    pub space: LabelSpace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector: Option<SectorLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct ClassifyArgs {
    pub input: PathBuf,
    pub out: Option<PathBuf>,
    /// All three systems when absent.
    pub space: Option<LabelSpace>,
    pub preset: String,
}

/// Returns the number of cases that could not be classified.
pub fn classify(args: &ClassifyArgs) -> CliResult<usize> {
    let map = MergeMap3::preset(&args.preset).map_err(CliError::config)?;
    let files = read_annotations(&read_string(&args.input)?)
        .map_err(|e| CliError::input(e).context(format!("malformed annotations in {}", args.input.display())))?;
    let spaces = args.space.map_or(LabelSpace::ALL.to_vec(), |s| vec![s]);
    let mut out = Vec::new();
    let mut flagged = 0;
    for file in &files {
        for &space in &spaces {
            let results = classify_batch(&file.cases, space, &map, Execution::default());
            for (case, r) in file.cases.iter().zip(results) {
                let (sector, error) = match r {
                    Ok(s) => (Some(s), None),
                    Err(e) => {
                        flagged += 1;
                        eprintln!("warning: {} case {}: {e}", file.radiograph_id, case.case_id);
                        (None, Some(e.to_string()))
                    }
                };
                json_line(
                    &mut out,
                    &ClassifyRow {
                        radiograph_id: file.radiograph_id.clone(),
                        case_id: case.case_id.clone(),
                        space,
                        sector,
                        error,
                    },
                );
            }
        }
    }
    write_output(args.out.as_deref(), &out)?;
    Ok(flagged)
}

pub struct KappaArgs {
    pub input: PathBuf,
    pub grouping: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub text: Option<PathBuf>,
    pub seed: u64,
    pub replicates: usize,
    pub analytic: bool,
    pub partial: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct KappaOutput {
    pub tables: canine_core::agreement::StudyTables,
    pub text: String,
}

pub fn kappa(args: &KappaArgs) -> CliResult<()> {
    let records = read_ratings(open(&args.input)?)
        .map_err(|e| CliError::input(e).context(format!("malformed ratings in {}", args.input.display())))?;
    let grouping: BTreeMap<String, String> = match &args.grouping {
        Some(p) => serde_json::from_str(&read_string(p)?)
            .map_err(|e| CliError::input(e).context(format!("malformed grouping {}", p.display())))?,
        None => records
            .iter()
            .map(|r| (r.rater.clone(), "all".to_string()))
            .collect(),
    };
    if args.replicates < 2 && !args.analytic {
        return Err(CliError::config(anyhow::anyhow!("--replicates must be at least 2")));
    }
    let cfg = TablesConfig {
        bootstrap: BootstrapConfig {
            replicates: args.replicates,
            seed: args.seed,
            exec: Execution::default(),
        },
        fleiss_ci: if args.analytic { CiMethod::Analytic } else { CiMethod::Bootstrap },
        coverage: if args.partial { Coverage::Partial } else { Coverage::Strict },
    };
    let tables = study_tables(&records, &grouping, &cfg)?;
    let text = tables.render_text();
    write_output(args.out.as_deref(), &pretty(&KappaOutput { tables, text: text.clone() }))?;
    if let Some(p) = &args.text {
        write_output(Some(p), text.as_bytes())?;
    }
    Ok(())
}

pub struct MetricsArgs {
    pub input: PathBuf,
    pub out: Option<PathBuf>,
    pub text: Option<PathBuf>,
    pub expect: Option<PathBuf>,
}

pub fn metrics(args: &MetricsArgs) -> CliResult<MetricReport> {
    let records = read_predictions(open(&args.input)?)
        .map_err(|e| CliError::from(e).context(format!("in {}", args.input.display())))?;
    let cm = confusion_from_records(&records)?;
    let mut report = evaluate(&cm, None)?;
    if let Some(p) = &args.expect {
        let refs: ReferenceValues = read_config(Some(p))?;
        report.check_reference(&refs);
    }
    let text = report.render_text();
    write_output(args.out.as_deref(), &pretty(&report))?;
    match (&args.text, &args.out) {
        (Some(p), _) => write_output(Some(p), text.as_bytes())?,
        (None, Some(_)) => print!("{text}"),
        (None, None) => eprint!("{text}"),
    }
    Ok(report)
}

pub struct SynthArgs {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub n: Option<usize>,
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let mut cfg: SynthConfig = read_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    let map = cfg.validate()?;
    let ds = synth_generate(&cfg, Execution::default())?;
    let mismatches = verify_generator(&ds, &map);
    if mismatches > 0 {
        return Err(CliError::runtime(anyhow::anyhow!(
            "{mismatches} generated cases disagree with the geometry classifier"
        )));
    }
    let mut buf = Vec::new();
    write_manifest(&mut buf, &ds.samples)?;
    write_output(args.out.as_deref(), &buf)
}

/// Configuration file of `distill`; every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillRun {
    pub distill: DistillConfig,
    pub split: SplitSpec,
    /// Also train the student architecture without a teacher.
    pub baseline: bool,
}

impl Default for DistillRun {
    fn default() -> Self {
        Self {
            distill: DistillConfig::default(),
            split: SplitSpec::default(),
            baseline: true,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelSummary {
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DistillReport {
    pub n_samples: usize,
    pub train_size: usize,
    pub validation_size: usize,
    pub config: DistillRun,
    pub teacher: ModelSummary,
    pub student: ModelSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<ModelSummary>,
}

pub struct DistillArgs {
    pub input: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

fn summary(
    model: &canine_core::distill::MlpModel,
    log: &[EpochLog],
    best_epoch: Option<usize>,
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> CliResult<ModelSummary> {
    let confusion = evaluate_model(model, inputs, labels, Execution::default())?;
    let metrics = evaluate(&confusion, None)?;
    Ok(ModelSummary {
        best_epoch,
        epochs_run: log.len(),
        confusion,
        metrics,
    })
}

pub fn distill(args: &DistillArgs) -> CliResult<DistillReport> {
    let mut run: DistillRun = read_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        run.distill.seed = s;
        run.split.seed = s;
    }
    run.distill.validate()?;
    if !(run.split.train_fraction > 0.0 && run.split.train_fraction < 1.0) {
        return Err(CliError::config(anyhow::anyhow!("split.train_fraction must lie in (0, 1)")));
    }
    let samples = read_manifest(open(&args.input)?)
        .map_err(|e| CliError::from(e).context(format!("in {}", args.input.display())))?;
    if samples.is_empty() {
        return Err(CliError::input(anyhow::anyhow!("{} has no samples", args.input.display())));
    }
    let labels: Vec<usize> = samples.iter().map(Sample::class_index).collect();
    let (tr_idx, va_idx) = split_indices(&labels, 3, &run.split);
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let (train, val) = (pick(&tr_idx), pick(&va_idx));
    let val_labels: Vec<usize> = val.iter().map(Sample::class_index).collect();
    let exec = Execution::default();
    let cfg = &run.distill;

    let teacher = train_teacher(&train, Some(&val), cfg, exec)?;
    let student = distill_student(&teacher, &train, Some(&val), cfg, exec)?;
    let baseline = if run.baseline {
        Some(train_student_baseline(&train, Some(&val), cfg, exec)?)
    } else {
        None
    };

    let teacher_val: Vec<Vec<f64>> = val.iter().map(|s| teacher_input(s, &teacher.normalizer)).collect();
    let student_val: Vec<Vec<f64>> = val.iter().map(student_input).collect();
    let report = DistillReport {
        n_samples: samples.len(),
        train_size: train.len(),
        validation_size: val.len(),
        teacher: summary(&teacher.net.model, &teacher.net.log, teacher.net.best_epoch, &teacher_val, &val_labels)?,
        student: summary(&student.model, &student.log, student.best_epoch, &student_val, &val_labels)?,
        baseline: baseline
            .as_ref()
            .map(|b| summary(&b.model, &b.log, b.best_epoch, &student_val, &val_labels))
            .transpose()?,
        config: run.clone(),
    };

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::runtime(e).context(format!("cannot create {}", args.out.display())))?;
    let file = |name: &str| args.out.join(name);
    let teacher_archive = ModelArchive::teacher(&teacher, cfg);
    write_output(Some(&file("teacher.json")), &pretty(&teacher_archive))?;
    write_output(
        Some(&file("student.json")),
        &pretty(&ModelArchive::new(Role::Student, &student, None, cfg)),
    )?;
    if let Some(b) = &baseline {
        write_output(
            Some(&file("baseline.json")),
            &pretty(&ModelArchive::new(Role::Baseline, b, None, cfg)),
        )?;
    }

    let mut log = Vec::new();
    let logs = [Some(&teacher.net.log), Some(&student.log), baseline.as_ref().map(|b| &b.log)];
    for entry in logs.into_iter().flatten().flatten() {
        json_line(&mut log, entry);
    }
    write_output(Some(&file("train_log.jsonl")), &log)?;

    let pred = predict(&student.model, &student_val, exec)?;
    let names = ["A", "B", "C"];
    let mut lines = Vec::new();
    for (s, p) in val.iter().zip(pred) {
        json_line(
            &mut lines,
            &serde_json::json!({"case": s.case_id, "true": names[s.class_index()], "pred": names[p]}),
        );
    }
    write_output(Some(&file("predictions.jsonl")), &lines)?;
    write_output(Some(&file("report.json")), &pretty(&report))?;

    let mut text = String::new();
    for (name, m) in [("teacher", Some(&report.teacher)), ("student", Some(&report.student)), ("baseline", report.baseline.as_ref())] {
        if let Some(m) = m {
            text.push_str(&format!("== {name} (validation, n = {}) ==\n", report.validation_size));
            text.push_str(&m.metrics.render_text());
            text.push('\n');
        }
    }
    write_output(Some(&file("report.txt")), text.as_bytes())?;
    let mut w = BufWriter::new(io::stderr());
    let _ = writeln!(
        w,
        "split {}/{}; teacher {:.4}, student {:.4}",
        report.train_size, report.validation_size, report.teacher.metrics.accuracy, report.student.metrics.accuracy
    );
    Ok(report)
}
