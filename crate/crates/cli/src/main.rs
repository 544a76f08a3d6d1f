use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use simcal::formats::{
    read_emb1, read_sidecar, read_sim1, read_wmd1, write_atomic, write_emb1, write_sim1,
    write_wmd1, Sidecar,
};
use simcal::harness::{
    render_beta_table, render_stage_table, run_pipeline_sweep, sweep_beta, HarnessOptions,
};
use simcal::pipeline::{score_base, self_calibrated_snew};
use simcal::similarity::{make_snew, zscore_fit};
use simcal::structural::build_struct_logits;
use simcal::synth::{generate, SynthSpec};
use simcal::{calibrate_detailed, CalibConfig, EmbeddingSet, EvalReport, Role, Stage};

#[derive(Parser)]
#[command(
    name = "simcal",
    version,
    about = "Label-free calibration of retrieval similarity matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic benchmark as EMB1 files.
    GenSynth {
        /// SynthSpec JSON; defaults are used for missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate query-to-class scores and write the final SIM1 matrix.
    Calibrate {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Save the fitted whitening models (WMD1).
        #[arg(long)]
        save_models: Option<PathBuf>,
        /// Reuse frozen whitening models instead of fitting on this batch.
        #[arg(long, conflicts_with = "save_models")]
        load_models: Option<PathBuf>,
        /// Also write the pre-calibration matrix S_new.
        #[arg(long)]
        snew_out: Option<PathBuf>,
    },
    /// Score a SIM1 matrix against the labels in a query sidecar.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        /// Query sidecar JSON with `label_of`.
        #[arg(long)]
        meta: PathBuf,
        /// Candidate sidecar JSON mapping columns to class ids (default: identity).
        #[arg(long)]
        candidates_meta: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        k: Vec<usize>,
        #[arg(long)]
        report: PathBuf,
        /// Popularity histogram as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Leave-one-subject-out sweep over the stage ladder or a β grid.
    Sweep {
        #[arg(long, value_enum)]
        mode: SweepMode,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,1.9,3")]
        betas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20")]
        k: Vec<usize>,
        /// Fit the held-out subject's whitening on its first N rows only.
        #[arg(long)]
        window: Option<usize>,
        /// Subjects used only for tuning, never as test folds.
        #[arg(long, value_delimiter = ',')]
        dev_subjects: Vec<usize>,
        /// JSON table output.
        #[arg(long)]
        out: PathBuf,
        /// Text table output (also printed to stdout).
        #[arg(long)]
        text: Option<PathBuf>,
    },
    /// Structural evidence (anchors, hubs, popularity) for an S_new matrix.
    Diagnose {
        #[arg(long)]
        snew: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepMode {
    Stages,
    Beta,
}

fn load_config(path: Option<&Path>) -> Result<CalibConfig> {
    match path {
        None => Ok(CalibConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(simcal::Error::from)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(CalibConfig::from_json(&text)?)
        }
    }
}

fn load_set(path: &Path, role: Role) -> Result<EmbeddingSet> {
    let (set, _) = read_emb1(path).with_context(|| format!("reading {}", path.display()))?;
    if set.role != role {
        return Err(simcal::Error::RoleMismatch {
            expected: role.name(),
            found: set.role.name(),
        }
        .into());
    }
    Ok(set)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(simcal::Error::from)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn gen_synth(spec: Option<&Path>, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => SynthSpec::from_json(
            &fs::read_to_string(p)
                .map_err(simcal::Error::from)
                .with_context(|| format!("reading spec {}", p.display()))?,
        )?,
        None => SynthSpec::default(),
    };
    let data = generate(&spec)?;
    fs::create_dir_all(out)
        .map_err(simcal::Error::from)
        .with_context(|| format!("creating {}", out.display()))?;
    write_emb1(
        &out.join("queries.emb1"),
        &data.queries,
        &Sidecar::for_set(&data.queries),
    )?;
    let mut cand_meta = Sidecar::for_set(&data.candidates);
    cand_meta.class_names = Some(
        (0..spec.n_classes)
            .map(|c| {
                if data.hub_classes.binary_search(&c).is_ok() {
                    format!("class{c:03}-hub")
                } else {
                    format!("class{c:03}")
                }
            })
            .collect(),
    );
    write_emb1(&out.join("candidates.emb1"), &data.candidates, &cand_meta)?;
    write_json(&out.join("spec.json"), &spec)?;
    println!(
        "wrote {} queries, {} candidates ({} hub classes) to {}",
        data.queries.len(),
        data.candidates.len(),
        data.hub_classes.len(),
        out.display()
    );
    Ok(())
}

struct CalibrateArgs<'a> {
    queries: &'a Path,
    candidates: &'a Path,
    config: Option<&'a Path>,
    out: &'a Path,
    save_models: Option<&'a Path>,
    load_models: Option<&'a Path>,
    snew_out: Option<&'a Path>,
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<()> {
    let cfg = load_config(a.config)?;
    let queries = load_set(a.queries, Role::Query)?;
    let candidates = load_set(a.candidates, Role::Candidate)?;
    let (snew, models) = match a.load_models {
        Some(p) => {
            let models = read_wmd1(p).with_context(|| format!("reading {}", p.display()))?;
            let base = score_base(&queries, &candidates, &models, &cfg)?;
            let snew = if cfg.zscore {
                let st = zscore_fit(&base, "query batch")?;
                make_snew(base, Some(&st))?
            } else {
                make_snew(base, None)?
            };
            (snew, models)
        }
        None => self_calibrated_snew(&queries, &candidates, &cfg)?,
    };
    let cal = calibrate_detailed(&snew, &cfg)?;
    write_sim1(a.out, &cal.final_scores)?;
    if let Some(p) = a.snew_out {
        write_sim1(p, &snew)?;
    }
    if let Some(p) = a.save_models {
        write_wmd1(p, &models)?;
    }
    let (nq, c) = cal.final_scores.shape();
    println!("calibrated {nq}x{c} scores -> {}", a.out.display());
    if let Some((_, ev)) = &cal.structural {
        println!(
            "structural evidence: {} anchors ({} MNN), {} hub penalties",
            ev.anchors.len(),
            ev.mnn_count,
            ev.hubs.len()
        );
    }
    Ok(())
}

fn evaluate_cmd(
    scores: &Path,
    meta: &Path,
    candidates_meta: Option<&Path>,
    ks: &[usize],
    report: &Path,
    csv: Option<&Path>,
) -> Result<()> {
    let s = read_sim1(scores).with_context(|| format!("reading {}", scores.display()))?;
    let qmeta = read_sidecar(meta).with_context(|| format!("reading {}", meta.display()))?;
    if qmeta.subject_of.len() != s.n_queries() {
        return Err(simcal::Error::SidecarMismatch(format!(
            "{} has {} rows, scores have {}",
            meta.display(),
            qmeta.subject_of.len(),
            s.n_queries()
        ))
        .into());
    }
    let class_ids = match candidates_meta {
        Some(p) => read_sidecar(p)?.label_of.ok_or_else(|| {
            simcal::Error::SidecarMismatch("candidate sidecar has no label_of".into())
        })?,
        None => (0..s.n_classes()).collect(),
    };
    let query_ids = (0..s.n_queries()).collect();
    let s = s.with_ids(query_ids, class_ids)?;
    let labels = qmeta
        .label_of
        .as_deref()
        .ok_or(simcal::Error::MissingLabels)?;
    let r = EvalReport::evaluate(&s, Some(labels), Some(&qmeta.subject_of), ks)?;
    write_json(report, &r)?;
    if let Some(p) = csv {
        write_atomic(p, r.popularity_csv().as_bytes())?;
    }
    println!("{:>6} {:>10} {:>14}", "K", "top-K %", "class recall %");
    for (k, acc) in &r.top_k_acc {
        let rec = r.mean_class_recall[k].map_or("-".to_string(), |v| format!("{:.2}", 100.0 * v));
        println!("{k:>6} {:>10.2} {rec:>14}", 100.0 * acc);
    }
    for (key, skew) in &r.hubness_skew {
        println!("hubness skew {key}: {skew:.4}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep_cmd(
    mode: SweepMode,
    queries: &Path,
    candidates: &Path,
    config: Option<&Path>,
    betas: &[f64],
    ks: &[usize],
    window: Option<usize>,
    dev_subjects: Vec<usize>,
    out: &Path,
    text: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let q = load_set(queries, Role::Query)?;
    let c = load_set(candidates, Role::Candidate)?;
    if q.label_of.is_none() {
        return Err(simcal::Error::MissingLabels.into());
    }
    let opts = HarnessOptions {
        ks: ks.to_vec(),
        window,
        dev_subjects,
    };
    let table = match mode {
        SweepMode::Stages => {
            let rows = run_pipeline_sweep(&q, &c, &cfg, &opts)?;
            write_json(out, &rows)?;
            render_stage_table(&rows)
        }
        SweepMode::Beta => {
            let sweep = sweep_beta(&q, &c, &cfg, betas, &opts)?;
            write_json(out, &sweep)?;
            render_beta_table(&sweep)
        }
    };
    print!("{table}");
    if let Some(p) = text {
        write_atomic(p, table.as_bytes())?;
    }
    Ok(())
}

fn diagnose_cmd(snew: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let s = read_sim1(snew).with_context(|| format!("reading {}", snew.display()))?;
    if s.stage != Stage::New {
        return Err(simcal::Error::WrongStage {
            expected: Stage::New,
            found: s.stage,
        }
        .into());
    }
    let (_, ev) = build_struct_logits(&s, &cfg)?;
    let report = ev.report(s.n_queries(), &cfg);
    write_json(out, &report)?;
    println!(
        "{} anchors ({} MNN), {} hub penalties over {}x{}",
        report.anchor_count, report.mnn_count, report.hub_count, report.n_queries, report.n_classes
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth { spec, out } => gen_synth(spec.as_deref(), &out),
        Command::Calibrate {
            queries,
            candidates,
            config,
            out,
            save_models,
            load_models,
            snew_out,
        } => calibrate_cmd(CalibrateArgs {
            queries: &queries,
            candidates: &candidates,
            config: config.as_deref(),
            out: &out,
            save_models: save_models.as_deref(),
            load_models: load_models.as_deref(),
            snew_out: snew_out.as_deref(),
        }),
        Command::Evaluate {
            scores,
            meta,
            candidates_meta,
            k,
            report,
            csv,
        } => evaluate_cmd(
            &scores,
            &meta,
            candidates_meta.as_deref(),
            &k,
            &report,
            csv.as_deref(),
        ),
        Command::Sweep {
            mode,
            queries,
            candidates,
            config,
            betas,
            k,
            window,
            dev_subjects,
            out,
            text,
        } => sweep_cmd(
            mode,
            &queries,
            &candidates,
            config.as_deref(),
            &betas,
            &k,
            window,
            dev_subjects,
            &out,
            text.as_deref(),
        ),
        Command::Diagnose { snew, config, out } => diagnose_cmd(&snew, config.as_deref(), &out),
    }
}

/// 3 for I/O and format errors, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|e| {
        e.downcast_ref::<simcal::Error>().is_some_and(|e| e.is_io())
            || e.downcast_ref::<std::io::Error>().is_some()
    });
    if io {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    simcal::init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
