use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{OutputsConfig, RunConfig};
use super::manifest::{ArtifactWriter, Manifest, FAILURE_MARKER};
use super::{CliError, FitArgs, SimulateArgs, SummarizeArgs, ValidateArgs};
use crate::dataset::{build_network_graph, parse_dataset, validate_for_model, write_dataset, Dataset, ValidationReport};
use crate::inference::{
    diagnostics, dic, index_path, read_container, resume_mcmc, run_mcmc, write_container, DicReport, FitDiagnostics,
    PosteriorSamples, SamplerConfig,
};
use crate::model::ModelSpec;
use crate::networks::preset;
use crate::summaries::{
    rankings_with, reference_summaries, sroc_curve_with, sroc_svg, summary_rows, threshold_curve_svg, threshold_curve_with,
    write_summary_csv, Credible, SummaryOptions, SummaryReport,
};

pub const CONTAINER_FILE: &str = "posterior.dtanet";
pub const COMPARE_FILE: &str = "compare.csv";

fn parse_err(e: impl std::fmt::Display) -> CliError {
    CliError::Parse(e.to_string())
}

fn load_data(path: &Path, reduce: bool) -> Result<Dataset, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let d = parse_dataset(file).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    Ok(if reduce { d.at_reference_thresholds() } else { d })
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(parse_err)?;
            Ok(pool.install(f))
        }
    }
}

fn json(value: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Validation report of a dataset for one variant, and its printable form
/// with a network overview.
pub fn cmd_validate(args: &ValidateArgs) -> Result<(ValidationReport, String), CliError> {
    let d = load_data(&args.data, args.reference_thresholds_only)?;
    let g = build_network_graph(&d);
    let report = validate_for_model(&d, &g, args.variant);
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{} studies, {} tests, {} series, {} component(s); variant {}",
        d.studies().len(),
        d.tests().len(),
        d.series().len(),
        g.components.len(),
        args.variant
    );
    for c in &g.components {
        let _ = writeln!(text, "component {}: {}", c[0], c.join(" "));
    }
    text.push_str(&report.to_string());
    let _ = writeln!(text, "{}", if report.is_ok() { "ok" } else { "FAILED" });
    Ok((report, text))
}

fn check_for(d: &Dataset, spec: &ModelSpec) -> Result<(), CliError> {
    let report = validate_for_model(d, &build_network_graph(d), spec.variant);
    if report.is_ok() {
        Ok(())
    } else {
        Err(CliError::Validation(report.to_string()))
    }
}

/// One row of a recovery table: a fixed effect against its true value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub name: String,
    pub truth: f64,
    pub median: f64,
    pub lower95: f64,
    pub upper95: f64,
    pub covered: bool,
}

fn recovery_rows(samples: &PosteriorSamples, truth: &BTreeMap<String, f64>) -> Vec<RecoveryRow> {
    let l = &samples.layout;
    (0..l.dim())
        .filter(|&c| l.kinds[c].is_fixed_effect())
        .filter_map(|c| {
            let t = *truth.get(&l.names[c])?;
            let ci = Credible::from_draws(&mut samples.pooled(c));
            Some(RecoveryRow {
                name: l.names[c].clone(),
                truth: t,
                median: ci.median,
                lower95: ci.lower,
                upper95: ci.upper,
                covered: ci.lower <= t && t <= ci.upper,
            })
        })
        .collect()
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    }
    w.into_inner().map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))
}

/// Writes the summaries selected by `outputs` and returns the report that
/// went into `report.json`.
pub fn write_summaries(
    samples: &PosteriorSamples,
    outputs: &OutputsConfig,
    seed: u64,
    fit: (Option<DicReport>, Option<FitDiagnostics>),
    w: &mut ArtifactWriter,
) -> Result<SummaryReport, CliError> {
    let opts = SummaryOptions { mode: outputs.mode, seed };
    let l = &samples.layout;
    let reference = reference_summaries(samples, &opts).map_err(parse_err)?;
    if outputs.tables {
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &summary_rows(&reference)).map_err(parse_err)?;
        w.write("summary.csv", &buf)?;
    }
    let mut curves = Vec::new();
    if outputs.curves {
        for t in l.tests.iter().filter(|t| t.is_continuous()) {
            let c = threshold_curve_with(samples, &t.id, outputs.grid_size, &opts).map_err(parse_err)?;
            if outputs.figures {
                let title = format!("{}: accuracy by threshold", t.name);
                w.write(&format!("curves/{}.svg", file_stem(&t.id)), threshold_curve_svg(&c, &title).as_bytes())?;
            }
            curves.push(c);
        }
    }
    let mut sroc = Vec::new();
    if outputs.sroc {
        for t in &l.tests {
            let c = sroc_curve_with(samples, &t.id, &opts).map_err(parse_err)?;
            if outputs.figures {
                let title = format!("{}: summary ROC", t.name);
                w.write(&format!("sroc/{}.svg", file_stem(&t.id)), sroc_svg(&c, &title).as_bytes())?;
            }
            sroc.push(c);
        }
    }
    let rankings = if outputs.rankings && l.tests.len() >= 2 {
        let ids: Vec<&str> = l.tests.iter().map(|t| t.id.as_str()).collect();
        Some(rankings_with(samples, &ids, &BTreeMap::new(), &opts).map_err(parse_err)?)
    } else {
        None
    };
    let report = SummaryReport {
        spec: l.spec.clone(),
        mode: outputs.mode,
        reference,
        curves,
        sroc,
        rankings,
        dic: fit.0,
        diagnostics: fit.1,
    };
    w.write("report.json", &json(&report))?;
    Ok(report)
}

pub struct FitOutcome {
    pub samples: PosteriorSamples,
    pub dic: Option<DicReport>,
    pub diagnostics: FitDiagnostics,
    pub recovery: Vec<RecoveryRow>,
    pub manifest: Manifest,
    pub out_dir: PathBuf,
}

/// The config as written in the file, with command-line overrides applied;
/// recorded in the manifest so the run can be repeated.
fn effective_config(args: &FitArgs) -> Result<(RunConfig, RunConfig), CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::Parse(format!("{}: {e}", args.config.display())))?;
    let mut raw = RunConfig::from_toml(&text)?;
    let mut resolved = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        raw.sampler.seed = seed;
        resolved.sampler.seed = seed;
    }
    if let Some(out) = &args.out {
        raw.outputs.dir = out.clone();
        resolved.outputs.dir = out.clone();
    }
    Ok((raw, resolved))
}

/// Validates, samples, and writes container, diagnostics, DIC, summaries
/// and manifest into the output directory and nowhere else.
pub fn cmd_fit(args: &FitArgs) -> Result<FitOutcome, CliError> {
    let (raw, cfg) = effective_config(args)?;
    let config_text = raw.to_toml();
    let d = load_data(&cfg.data, cfg.reference_thresholds_only)?;
    check_for(&d, &cfg.model)?;
    let truth: Option<BTreeMap<String, f64>> = match &cfg.truth {
        None => None,
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Parse(format!("{}: {e}", p.display())))?;
            Some(serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", p.display())))?)
        }
    };
    let mut w = ArtifactWriter::new(&cfg.outputs.dir)?;
    let container = w.path(CONTAINER_FILE)?;
    let seed = cfg.sampler.seed;

    let sampled = if args.resume {
        let previous = read_container(&container).map_err(|e| CliError::Parse(format!("resume: {e}")))?;
        if previous.layout.spec != cfg.model {
            return Err(CliError::Parse("resume: the container was fitted with a different model spec".into()));
        }
        with_threads(args.threads, || resume_mcmc(&d, &previous, cfg.sampler.keep_iters))?
    } else {
        with_threads(args.threads, || run_mcmc(&d, &cfg.model, &cfg.sampler))?
    };
    let samples = match sampled {
        Ok(s) => s,
        Err(e) => {
            #[derive(Serialize)]
            struct Failure<'a> {
                error: String,
                spec: &'a ModelSpec,
                sampler: &'a SamplerConfig,
            }
            let marker = Failure { error: e.to_string(), spec: &cfg.model, sampler: &cfg.sampler };
            w.write(FAILURE_MARKER, toml::to_string(&marker).expect("serializable").as_bytes())?;
            w.finish("fit", &config_text, &d.fingerprint(), seed)?;
            return Err(CliError::Sampling(e.to_string()));
        }
    };
    let stale = w.dir().join(FAILURE_MARKER);
    if stale.exists() {
        std::fs::remove_file(stale)?;
    }

    write_container(&container, &samples).map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
    w.register(CONTAINER_FILE)?;
    let idx = index_path(Path::new(CONTAINER_FILE));
    w.register(idx.to_str().expect("ascii path"))?;

    let diag = diagnostics(&samples);
    let dic_report = dic(&samples).ok();
    if cfg.outputs.diagnostics {
        w.write("diagnostics.json", &json(&diag))?;
    }
    w.write("dic.json", &json(&dic_report))?;
    write_summaries(&samples, &cfg.outputs, seed, (dic_report.clone(), Some(diag.clone())), &mut w)?;
    let recovery = match &truth {
        Some(t) => {
            let rows = recovery_rows(&samples, t);
            w.write("recovery.csv", &csv_bytes(&rows)?)?;
            rows
        }
        None => Vec::new(),
    };
    let manifest = w.finish("fit", &config_text, &samples.data_fingerprint, seed)?;
    Ok(FitOutcome { samples, dic: dic_report, diagnostics: diag, recovery, manifest, out_dir: cfg.outputs.dir })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub spec: String,
    pub mean_residual_deviance: Option<f64>,
    pub p_v: Option<f64>,
    pub dic: Option<f64>,
    pub mean_deviance_se: Option<f64>,
    pub dic_se: Option<f64>,
    pub max_rhat: Option<f64>,
    /// `ok`, or why the fit has no DIC.
    pub status: String,
    /// Lowest DIC among the rows.
    pub best: bool,
}

/// Fits every spec of the compare list (member i with seed + i) and writes
/// `compare.csv`, sorted by DIC with failed fits last.
pub fn cmd_compare(args: &FitArgs) -> Result<Vec<CompareRow>, CliError> {
    let (raw, cfg) = effective_config(args)?;
    if cfg.compare.len() < 2 {
        return Err(CliError::Parse("compare needs at least two [[compare]] specs".into()));
    }
    let d = load_data(&cfg.data, cfg.reference_thresholds_only)?;
    let fit_one = |(i, spec): (usize, &ModelSpec)| -> CompareRow {
        let label = spec.to_string();
        let failed = |status: String| CompareRow {
            spec: label.clone(),
            mean_residual_deviance: None,
            p_v: None,
            dic: None,
            mean_deviance_se: None,
            dic_se: None,
            max_rhat: None,
            status,
            best: false,
        };
        if let Err(e) = check_for(&d, spec) {
            return failed(format!("invalid: {}", e.to_string().replace('\n', " ").trim()));
        }
        let sampler = SamplerConfig { seed: cfg.sampler.seed.wrapping_add(i as u64), ..cfg.sampler.clone() };
        let samples = match run_mcmc(&d, spec, &sampler) {
            Ok(s) => s,
            Err(e) => return failed(format!("sampling failed: {e}")),
        };
        match dic(&samples) {
            Ok(r) => CompareRow {
                spec: label.clone(),
                mean_residual_deviance: Some(r.mean_residual_deviance),
                p_v: Some(r.p_v),
                dic: Some(r.dic),
                mean_deviance_se: Some(r.mean_deviance_se),
                dic_se: Some(r.dic_se),
                max_rhat: diagnostics(&samples).max_rhat,
                status: "ok".into(),
                best: false,
            },
            Err(e) => failed(format!("no DIC: {e}")),
        }
    };
    let mut rows: Vec<CompareRow> =
        with_threads(args.threads, || cfg.compare.par_iter().enumerate().map(fit_one).collect())?;
    rows.sort_by(|a, b| match (a.dic, b.dic) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    if let Some(first) = rows.first_mut().filter(|r| r.dic.is_some()) {
        first.best = true;
    }
    let mut w = ArtifactWriter::new(&cfg.outputs.dir)?;
    w.write(COMPARE_FILE, &csv_bytes(&rows)?)?;
    w.finish("compare", &raw.to_toml(), &d.fingerprint(), cfg.sampler.seed)?;
    Ok(rows)
}

/// Summaries and figures from a saved container.
pub fn cmd_summarize(args: &SummarizeArgs) -> Result<Manifest, CliError> {
    let samples = read_container(&args.posterior).map_err(|e| CliError::Parse(format!("{}: {e}", args.posterior.display())))?;
    let mut outputs = match &args.config {
        Some(p) => RunConfig::load(p)?.outputs,
        None => OutputsConfig::default(),
    };
    if args.predictive {
        outputs.mode = crate::summaries::SummaryMode::Predictive;
    }
    outputs.dir = args.out.clone();
    let seed = args.seed.unwrap_or(samples.config.seed);
    let mut w = ArtifactWriter::new(&args.out)?;
    let diag = diagnostics(&samples);
    let dic_report = dic(&samples).ok();
    with_threads(args.threads, || write_summaries(&samples, &outputs, seed, (dic_report, Some(diag)), &mut w))??;
    let config = toml::to_string(&outputs).expect("serializable");
    w.finish("summarize", &config, &samples.data_fingerprint, seed)
}

/// Writes `<preset>.csv`, `<preset>.truth.json` and a ready-to-run
/// `<preset>.toml` into the output directory.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<Manifest, CliError> {
    let analog =
        preset(&args.preset, args.seed).ok_or_else(|| CliError::Parse(format!("unknown preset `{}`", args.preset)))?;
    let mut w = ArtifactWriter::new(&args.out)?;
    let name = analog.name;
    w.write(&format!("{name}.csv"), write_dataset(&analog.dataset).as_bytes())?;
    let l = analog.truth.layout();
    let truth: BTreeMap<&str, f64> = l.names.iter().map(String::as_str).zip(analog.truth.values().iter().copied()).collect();
    w.write(&format!("{name}.truth.json"), &json(&truth))?;
    let run = RunConfig {
        data: PathBuf::from(format!("{name}.csv")),
        reference_thresholds_only: false,
        truth: Some(PathBuf::from(format!("{name}.truth.json"))),
        model: analog.spec.clone(),
        sampler: SamplerConfig::default(),
        outputs: OutputsConfig { dir: PathBuf::from(format!("{name}-fit")), ..OutputsConfig::default() },
        compare: Vec::new(),
    };
    let run_text = run.to_toml();
    w.write(&format!("{name}.toml"), run_text.as_bytes())?;
    let config = format!("preset = \"{}\"\nseed = {}\n", args.preset, args.seed);
    w.finish("simulate", &config, &analog.dataset.fingerprint(), args.seed)
}
